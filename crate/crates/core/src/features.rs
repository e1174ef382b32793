//! Log-Mel features with utterance-level mean/variance normalization.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::signal::TimeSignal;
use crate::stft::{stft, StftConfig};
use crate::tensor_io::{Tensor, TensorData};

pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Filter edge frequencies in Hz: `mel_channels + 2` points equally spaced
/// on the Mel scale from 0 Hz to Nyquist.
pub fn mel_edges(mel_channels: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (0..mel_channels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (mel_channels + 1) as f64))
        .collect()
}

/// Triangular filterbank `[mel_channels, fft_size/2 + 1]`.
pub fn mel_filterbank(fft_size: usize, sample_rate: u32, mel_channels: usize) -> Result<Array2<f64>> {
    let bins = fft_size / 2 + 1;
    if mel_channels == 0 || mel_channels > bins {
        return Err(Error::config(format!(
            "mel_channels must be in 1..={bins}, got {mel_channels}"
        )));
    }
    let edges = mel_edges(mel_channels, sample_rate);
    let fs = sample_rate as f64;
    Ok(Array2::from_shape_fn((mel_channels, bins), |(v, k)| {
        let f = k as f64 * fs / fft_size as f64;
        let (lo, mid, hi) = (edges[v], edges[v + 1], edges[v + 2]);
        if f <= lo || f >= hi {
            0.0
        } else if f <= mid {
            (f - lo) / (mid - lo)
        } else {
            (hi - f) / (hi - mid)
        }
    }))
}

/// In-place per-column mean/variance normalization with population
/// statistics. Constant columns are only mean-centred.
pub fn mvn(x: &mut Array2<f64>) {
    let t = x.nrows() as f64;
    if t == 0.0 {
        return;
    }
    for mut col in x.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / t;
        col.mapv_inplace(|v| v - mean);
        let var = col.iter().map(|v| v * v).sum::<f64>() / t;
        if var > 0.0 {
            let sd = var.sqrt();
            col.mapv_inplace(|v| v / sd);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// `[frame, mel]`.
    pub features: Array2<f64>,
    pub mel_channels: usize,
    pub normalized: bool,
}

impl FeatureMatrix {
    pub fn to_tensor(&self) -> Tensor {
        let (t, v) = self.features.dim();
        Tensor::new(vec![t, v], TensorData::F64(self.features.iter().copied().collect()))
            .expect("shape matches data")
            .with_meta("kind", "log_mel")
            .with_meta("normalized", self.normalized.to_string())
    }
}

pub fn log_mel_features(
    signal: &TimeSignal,
    cfg: &StftConfig,
    mel_channels: usize,
    apply_mvn: bool,
) -> Result<FeatureMatrix> {
    if signal.num_channels() != 1 {
        return Err(Error::shape("log-Mel features expect a single channel"));
    }
    let fb = mel_filterbank(cfg.fft_size, signal.sample_rate(), mel_channels)?;
    let power = stft(signal, cfg)?.power();
    let mut features = power.dot(&fb.t()).mapv(|e| e.max(LOG_FLOOR).ln());
    if apply_mvn {
        mvn(&mut features);
    }
    Ok(FeatureMatrix {
        features,
        mel_channels,
        normalized: apply_mvn,
    })
}
