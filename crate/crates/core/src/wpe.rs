//! Weighted prediction error (WPE) dereverberation.
//!
//! Each frequency bin is processed independently. The late reverberation in
//! frame `t` is predicted from the stacked observations of frames
//! `t - delay, …, t - delay - taps + 1` with a multi-channel linear
//! prediction filter, and subtracted. Filter and time-varying source
//! variance are estimated by alternating minimization of
//!
//! ```text
//! L = Σ_t ‖y_t − C̄ᴴ ȳ_{t−Δ}‖² / λ_t + M log λ_t
//! ```
//!
//! The variance step is the closed-form minimizer in `λ` (optionally
//! smoothed over ±`context` frames); the filter step solves the weighted
//! normal equations `R C̄ = P`.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{load_diagonal, solve_hermitian, trace_re, CMatrix};
use crate::par;
use crate::stft::ComplexSpectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WpeConfig {
    /// Number of prediction taps `K`.
    pub taps: usize,
    /// Prediction delay `Δ` in frames.
    pub delay: usize,
    pub iterations: usize,
    /// Variance smoothing half-width `δ` in frames.
    pub context: usize,
    pub variance_floor: f64,
    /// Relative diagonal loading of the correlation matrix.
    pub diagonal_loading: f64,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self {
            taps: 10,
            delay: 3,
            iterations: 3,
            context: 1,
            variance_floor: 1e-10,
            diagonal_loading: 1e-6,
        }
    }
}

impl WpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 {
            return Err(Error::config("wpe taps must be >= 1"));
        }
        if self.delay == 0 {
            return Err(Error::config("wpe delay must be >= 1"));
        }
        if self.iterations == 0 {
            return Err(Error::config("wpe iterations must be >= 1"));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::config("wpe variance floor must be positive"));
        }
        if !(self.diagonal_loading >= 0.0) {
            return Err(Error::config("wpe diagonal loading must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct WpeResult {
    pub dereverberated: ComplexSpectrogram,
    /// Stacked filters `[bin, taps·M, M]`; row `k·M + m` holds tap `k`
    /// (delay `Δ + k`) of input channel `m`.
    pub filters: Array3<Complex64>,
    /// Variances `[frame, bin]` used in the final filter update.
    pub variances: Array2<f64>,
    /// Objective after each iteration's filter update, summed over bins.
    pub objective: Vec<f64>,
    /// Bins left unprocessed because the correlation matrix was singular.
    pub passthrough_bins: Vec<usize>,
}

/// Per-bin outcome of [`wpe_bin`].
#[derive(Debug, Clone)]
pub struct BinResult {
    /// `[frame, channel]`.
    pub dereverberated: Array2<Complex64>,
    /// `[taps·M, M]`.
    pub filter: Array2<Complex64>,
    pub variances: Vec<f64>,
    pub objective: Vec<f64>,
    pub passthrough: bool,
}

/// Stacked delayed observations as columns: `[taps·M, frames]`, with zeros
/// before the first frame.
pub fn stacked_history(y: ArrayView2<'_, Complex64>, delay: usize, taps: usize) -> CMatrix {
    let (t_len, m) = y.dim();
    CMatrix::from_fn(taps * m, t_len, |row, t| {
        let (k, ch) = (row / m, row % m);
        match t.checked_sub(delay + k) {
            Some(src) => y[[src, ch]],
            None => Complex64::default(),
        }
    })
}

fn to_matrix(y: ArrayView2<'_, Complex64>) -> CMatrix {
    // channels × frames
    let (t_len, m) = y.dim();
    CMatrix::from_fn(m, t_len, |ch, t| y[[t, ch]])
}

fn from_matrix(d: &CMatrix) -> Array2<Complex64> {
    Array2::from_shape_fn((d.ncols(), d.nrows()), |(t, ch)| d[(ch, t)])
}

/// Variance update: channel-mean power, averaged over ±`context` frames
/// (renormalized at the edges), floored.
pub fn estimate_variance(d: ArrayView2<'_, Complex64>, context: usize, floor: f64) -> Vec<f64> {
    let (t_len, m) = d.dim();
    let power: Vec<f64> = (0..t_len)
        .map(|t| (0..m).map(|c| d[[t, c]].norm_sqr()).sum::<f64>() / m as f64)
        .collect();
    (0..t_len)
        .map(|t| {
            let lo = t.saturating_sub(context);
            let hi = (t + context).min(t_len - 1);
            let sum: f64 = power[lo..=hi].iter().sum();
            (sum / (hi - lo + 1) as f64).max(floor)
        })
        .collect()
}

/// Weighted correlation `R` and cross-correlation `P` for one bin.
pub fn correlation_matrices(
    y: ArrayView2<'_, Complex64>,
    variances: &[f64],
    delay: usize,
    taps: usize,
) -> (CMatrix, CMatrix) {
    let x = stacked_history(y, delay, taps);
    let obs = to_matrix(y);
    let mut xw = x.clone();
    for (t, mut col) in xw.column_iter_mut().enumerate() {
        col /= Complex64::new(variances[t], 0.0);
    }
    let r = &xw * x.adjoint();
    let p = &xw * obs.adjoint();
    (r, p)
}

/// Filter update: solves `(R + loading·tr(R)/(MK)·I) C̄ = P`.
pub fn estimate_filter(
    y: ArrayView2<'_, Complex64>,
    variances: &[f64],
    delay: usize,
    taps: usize,
    loading: f64,
) -> Result<Array2<Complex64>> {
    let (mut r, p) = correlation_matrices(y, variances, delay, taps);
    let tr = trace_re(&r);
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(Error::numerical("correlation matrix has zero trace"));
    }
    load_diagonal(&mut r, loading);
    let c = solve_hermitian(&r, &p)?;
    Ok(Array2::from_shape_fn((c.nrows(), c.ncols()), |(i, j)| c[(i, j)]))
}

/// `d_t = y_t − C̄ᴴ ȳ_{t−Δ}`.
pub fn apply_filter(
    y: ArrayView2<'_, Complex64>,
    filter: &Array2<Complex64>,
    delay: usize,
    taps: usize,
) -> Array2<Complex64> {
    let x = stacked_history(y, delay, taps);
    let c = DMatrix::from_fn(filter.nrows(), filter.ncols(), |i, j| filter[[i, j]]);
    let d = to_matrix(y) - c.adjoint() * x;
    from_matrix(&d)
}

/// Negative log-likelihood (up to a constant) of one bin.
pub fn bin_objective(d: ArrayView2<'_, Complex64>, variances: &[f64]) -> f64 {
    let (t_len, m) = d.dim();
    (0..t_len)
        .map(|t| {
            let e: f64 = (0..m).map(|c| d[[t, c]].norm_sqr()).sum();
            e / variances[t] + m as f64 * variances[t].ln()
        })
        .sum()
}

/// WPE on a single bin, `y` is `[frame, channel]`.
pub fn wpe_bin(y: ArrayView2<'_, Complex64>, cfg: &WpeConfig) -> BinResult {
    let (t_len, m) = y.dim();
    let mk = cfg.taps * m;
    let mut d = y.to_owned();
    let mut filter = Array2::zeros((mk, m));
    let mut variances = vec![cfg.variance_floor; t_len];
    let mut objective = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let lambda = estimate_variance(d.view(), cfg.context, cfg.variance_floor);
        match estimate_filter(y, &lambda, cfg.delay, cfg.taps, cfg.diagonal_loading) {
            Ok(c) => {
                d = apply_filter(y, &c, cfg.delay, cfg.taps);
                objective.push(bin_objective(d.view(), &lambda));
                filter = c;
                variances = lambda;
            }
            Err(_) => {
                return BinResult {
                    dereverberated: y.to_owned(),
                    filter: Array2::zeros((mk, m)),
                    objective: vec![bin_objective(y, &lambda); cfg.iterations],
                    variances: lambda,
                    passthrough: true,
                };
            }
        }
    }
    BinResult {
        dereverberated: d,
        filter,
        variances,
        objective,
        passthrough: false,
    }
}

pub fn wpe(observation: &ComplexSpectrogram, cfg: &WpeConfig) -> Result<WpeResult> {
    cfg.validate()?;
    let (t_len, f_len, m) = observation.data().dim();
    if t_len <= cfg.delay + cfg.taps {
        return Err(Error::config(format!(
            "wpe needs more than delay + taps = {} frames, got {t_len}",
            cfg.delay + cfg.taps
        )));
    }
    let bins = par::map_indices(f_len, |f| wpe_bin(observation.bin(f), cfg));

    let mk = cfg.taps * m;
    let mut out = Array3::zeros((t_len, f_len, m));
    let mut filters = Array3::zeros((f_len, mk, m));
    let mut variances = Array2::zeros((t_len, f_len));
    let mut objective = vec![0.0; cfg.iterations];
    let mut passthrough_bins = Vec::new();
    for (f, b) in bins.into_iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(1), f).assign(&b.dereverberated);
        filters.index_axis_mut(ndarray::Axis(0), f).assign(&b.filter);
        for t in 0..t_len {
            variances[[t, f]] = b.variances[t];
        }
        for (acc, v) in objective.iter_mut().zip(&b.objective) {
            *acc += v;
        }
        if b.passthrough {
            passthrough_bins.push(f);
        }
    }
    if !passthrough_bins.is_empty() {
        log::warn!(
            "wpe: {} of {f_len} bins degenerate, passed through unchanged",
            passthrough_bins.len()
        );
    }
    Ok(WpeResult {
        dereverberated: observation.with_data(out)?,
        filters,
        variances,
        objective,
        passthrough_bins,
    })
}

/// Objective summed over all bins for given filters `[bin, taps·M, M]` and
/// variances `[frame, bin]`.
pub fn wpe_objective(
    observation: &ComplexSpectrogram,
    filters: &Array3<Complex64>,
    variances: &Array2<f64>,
    cfg: &WpeConfig,
) -> Result<f64> {
    let (t_len, f_len, m) = observation.data().dim();
    if filters.dim() != (f_len, cfg.taps * m, m) {
        return Err(Error::shape(format!(
            "filters {:?} do not match {f_len} bins × {} taps × {m} channels",
            filters.dim(),
            cfg.taps
        )));
    }
    if variances.dim() != (t_len, f_len) {
        return Err(Error::shape("variances must be [frames, bins]"));
    }
    if variances.iter().any(|&v| !(v >= cfg.variance_floor)) {
        return Err(Error::config("variance below floor"));
    }
    let per_bin = par::map_indices(f_len, |f| {
        let filter = filters.index_axis(ndarray::Axis(0), f).to_owned();
        let d = apply_filter(observation.bin(f), &filter, cfg.delay, cfg.taps);
        let lambda: Vec<f64> = variances.column(f).to_vec();
        bin_objective(d.view(), &lambda)
    });
    Ok(per_bin.iter().sum())
}
