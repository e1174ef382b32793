//! Scale-invariant SDR and SNR against scene ground truth.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::signal::TimeSignal;

/// SDR values are clamped to `±SDR_CAP_DB`; a perfect estimate reports the
/// upper cap.
pub const SDR_CAP_DB: f64 = 100.0;

/// Scale-invariant SDR of `estimate` against `reference`, in dB.
///
/// The estimate is truncated or zero-padded to the reference length, the
/// reference is scaled by the least-squares gain `α = ⟨ŝ, r⟩ / ‖r‖²`, and the
/// result is `10 log10(‖αr‖² / ‖αr − ŝ‖²)`.
pub fn sdr_slices(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    let r_energy: f64 = reference.iter().map(|x| x * x).sum();
    if !(r_energy > 0.0) {
        return Err(Error::config("reference signal has zero power"));
    }
    let est = |n: usize| estimate.get(n).copied().unwrap_or(0.0);
    let dot: f64 = reference.iter().enumerate().map(|(n, r)| r * est(n)).sum();
    let alpha = dot / r_energy;
    let target = alpha * alpha * r_energy;
    let err: f64 = reference
        .iter()
        .enumerate()
        .map(|(n, r)| {
            let e = alpha * r - est(n);
            e * e
        })
        .sum();
    let db = if err == 0.0 {
        SDR_CAP_DB
    } else if target == 0.0 {
        -SDR_CAP_DB
    } else {
        10.0 * (target / err).log10()
    };
    Ok(db.clamp(-SDR_CAP_DB, SDR_CAP_DB))
}

/// As [`sdr_slices`] for single-channel signals.
pub fn sdr(estimate: &TimeSignal, reference: &TimeSignal) -> Result<f64> {
    if estimate.num_channels() != 1 || reference.num_channels() != 1 {
        return Err(Error::shape("sdr expects single-channel signals"));
    }
    if estimate.sample_rate() != reference.sample_rate() {
        return Err(Error::shape("sdr: sample rates differ"));
    }
    sdr_slices(&estimate.channel(0).to_vec(), &reference.channel(0).to_vec())
}

/// `10 log10(P_signal / P_noise)`.
pub fn snr_db(signal: &[f64], noise: &[f64]) -> Result<f64> {
    let ps: f64 = signal.iter().map(|x| x * x).sum();
    let pn: f64 = noise.iter().map(|x| x * x).sum();
    if !(pn > 0.0) {
        return Err(Error::config("noise has zero power"));
    }
    Ok(10.0 * (ps / pn).log10())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdrEntry {
    pub name: String,
    pub sdr_db: f64,
    pub input_sdr_db: f64,
}

impl SdrEntry {
    pub fn improvement_db(&self) -> f64 {
        self.sdr_db - self.input_sdr_db
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SdrReport {
    pub entries: Vec<SdrEntry>,
}

impl SdrReport {
    pub fn push(&mut self, name: impl Into<String>, sdr_db: f64, input_sdr_db: f64) {
        self.entries.push(SdrEntry {
            name: name.into(),
            sdr_db,
            input_sdr_db,
        });
    }

    pub fn mean_improvement_db(&self) -> Option<f64> {
        if self.entries.is_empty() {
            return None;
        }
        Some(self.entries.iter().map(SdrEntry::improvement_db).sum::<f64>() / self.entries.len() as f64)
    }

    /// `key=value` lines, one block per entry.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{}.sdr_db={:.4}", e.name, e.sdr_db);
            let _ = writeln!(s, "{}.input_sdr_db={:.4}", e.name, e.input_sdr_db);
            let _ = writeln!(s, "{}.improvement_db={:.4}", e.name, e.improvement_db());
        }
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(0).max(6);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>9}  {:>9}  {:>9}", "output", "SDR", "input", "gain");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.2}  {:>9.2}  {:>9.2}",
                e.name,
                e.sdr_db,
                e.input_sdr_db,
                e.improvement_db()
            );
        }
        s
    }
}
