//! Mask-driven spatial covariance estimation and MVDR / GEV beamforming.

use nalgebra::Cholesky;
use ndarray::{Array2, Array3, ArrayView1, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{load_diagonal, principal_eigenvector, solve_hermitian, CMatrix, CVector};
use crate::masks::MaskSet;
use crate::par;
use crate::stft::ComplexSpectrogram;
use crate::tensor_io::{Tensor, TensorData};

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    /// `[bin] → M×M`.
    pub phi_target: Vec<CMatrix>,
    pub phi_interference: Vec<CMatrix>,
    pub target_mass: Vec<f64>,
    pub interference_mass: Vec<f64>,
    /// Bins where a mask had zero mass and uniform weights were used.
    pub fallback_bins: Vec<usize>,
}

impl CovarianceSet {
    pub fn num_bins(&self) -> usize {
        self.phi_target.len()
    }

    pub fn num_channels(&self) -> usize {
        self.phi_target.first().map_or(0, |m| m.nrows())
    }
}

/// `Σ_t γ_t y_t y_tᴴ / Σ_t γ_t` for one bin; `y` is `[frame, channel]`.
/// Zero total weight falls back to uniform weights (third value `true`).
pub fn masked_covariance(y: ArrayView2<'_, Complex64>, mask: ArrayView1<'_, f64>) -> (CMatrix, f64, bool) {
    let (t_len, m) = y.dim();
    let mass: f64 = mask.sum();
    let fallback = !(mass > 0.0);
    let mut phi = CMatrix::zeros(m, m);
    for t in 0..t_len {
        let g = if fallback { 1.0 } else { mask[t] };
        if g == 0.0 {
            continue;
        }
        for i in 0..m {
            let yi = y[[t, i]] * g;
            for j in 0..m {
                phi[(i, j)] += yi * y[[t, j]].conj();
            }
        }
    }
    let norm = if fallback { t_len as f64 } else { mass };
    (phi / Complex64::new(norm, 0.0), mass, fallback)
}

pub fn estimate_covariances(
    spec: &ComplexSpectrogram,
    masks: &MaskSet,
    target_class: usize,
    interference_classes: &[usize],
) -> Result<CovarianceSet> {
    let (t, f, _) = spec.data().dim();
    if (masks.num_frames(), masks.num_bins()) != (t, f) {
        return Err(Error::shape(format!(
            "masks are {}×{}, spectrogram is {t}×{f}",
            masks.num_frames(),
            masks.num_bins()
        )));
    }
    if target_class >= masks.num_classes() {
        return Err(Error::shape(format!("target class {target_class} out of range")));
    }
    if interference_classes.is_empty() || interference_classes.contains(&target_class) {
        return Err(Error::config(
            "interference classes must be non-empty and exclude the target",
        ));
    }
    let target = masks.class(target_class);
    let interference = masks.combined(interference_classes)?;
    let per_bin = par::map_indices(f, |fi| {
        let y = spec.bin(fi);
        let a = masked_covariance(y, target.column(fi));
        let b = masked_covariance(y, interference.column(fi));
        (a, b)
    });
    let mut out = CovarianceSet {
        phi_target: Vec::with_capacity(f),
        phi_interference: Vec::with_capacity(f),
        target_mass: Vec::with_capacity(f),
        interference_mass: Vec::with_capacity(f),
        fallback_bins: Vec::new(),
    };
    for (fi, ((pt, mt, ft), (pi, mi, fi_fb))) in per_bin.into_iter().enumerate() {
        if ft || fi_fb {
            out.fallback_bins.push(fi);
        }
        out.phi_target.push(pt);
        out.target_mass.push(mt);
        out.phi_interference.push(pi);
        out.interference_mass.push(mi);
    }
    if !out.fallback_bins.is_empty() {
        log::warn!(
            "covariance: {} bins had zero mask mass, used uniform weights",
            out.fallback_bins.len()
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RtfMethod {
    /// Principal eigenvector of the target covariance.
    #[default]
    Eigenvector,
    /// Principal eigenvector of `Φ_target − Φ_interference`.
    CovarianceSubtraction,
}

/// Relative transfer functions `[bin, channel]`, unity at the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Rtf {
    pub vectors: Array2<Complex64>,
    pub reference: usize,
}

impl Rtf {
    pub fn at(&self, f: usize) -> CVector {
        CVector::from_iterator(self.vectors.ncols(), self.vectors.row(f).iter().copied())
    }
}

pub fn estimate_rtf(cov: &CovarianceSet, reference: usize, method: RtfMethod) -> Result<Rtf> {
    let m = cov.num_channels();
    if reference >= m {
        return Err(Error::config(format!("reference channel {reference} out of range")));
    }
    let vecs = par::try_map_indices(cov.num_bins(), |f| {
        let phi = match method {
            RtfMethod::Eigenvector => cov.phi_target[f].clone(),
            RtfMethod::CovarianceSubtraction => &cov.phi_target[f] - &cov.phi_interference[f],
        };
        let (_, h) = principal_eigenvector(&phi, reference);
        let href = h[reference];
        if href.norm() < 1e-12 * h.norm() || href.norm() == 0.0 {
            return Err(Error::numerical(format!(
                "bin {f}: reference channel is dead in the RTF"
            )));
        }
        Ok(h.map(|z| z / href))
    })?;
    let mut vectors = Array2::zeros((cov.num_bins(), m));
    for (f, h) in vecs.into_iter().enumerate() {
        for i in 0..m {
            vectors[[f, i]] = h[i];
        }
        vectors[[f, reference]] = Complex64::new(1.0, 0.0);
    }
    Ok(Rtf { vectors, reference })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamformerKind {
    #[default]
    MvdrRtf,
    Gev,
}

impl BeamformerKind {
    pub fn name(self) -> &'static str {
        match self {
            BeamformerKind::MvdrRtf => "mvdr_rtf",
            BeamformerKind::Gev => "gev",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerWeights {
    /// `[bin, channel]`; the output is `wᴴ y`.
    pub w: Array2<Complex64>,
    pub kind: BeamformerKind,
    pub reference_channel: usize,
}

impl BeamformerWeights {
    pub fn at(&self, f: usize) -> CVector {
        CVector::from_iterator(self.w.ncols(), self.w.row(f).iter().copied())
    }

    pub fn to_tensor(&self) -> Tensor {
        let (f, m) = self.w.dim();
        Tensor::new(vec![f, m], TensorData::C64(self.w.iter().copied().collect()))
            .expect("dims match payload")
            .with_meta("kind", "beamformer_weights")
            .with_meta("beamformer", self.kind.name())
            .with_meta("reference_channel", self.reference_channel)
    }
}

fn loaded(phi: &CMatrix, loading: f64) -> CMatrix {
    let mut a = phi.clone();
    load_diagonal(&mut a, loading);
    a
}

/// `w = Φ⁻¹ h̃ / (h̃ᴴ Φ⁻¹ h̃)` with `Φ` the diagonally loaded interference
/// covariance.
pub fn mvdr_weights(cov: &CovarianceSet, rtf: &Rtf, loading: f64) -> Result<BeamformerWeights> {
    let (f_len, m) = rtf.vectors.dim();
    if f_len != cov.num_bins() || m != cov.num_channels() {
        return Err(Error::shape("RTF does not match the covariance set"));
    }
    let ws = par::try_map_indices(f_len, |f| {
        let h = rtf.at(f);
        let phi = loaded(&cov.phi_interference[f], loading);
        let x = solve_hermitian(&phi, &CMatrix::from_column_slice(m, 1, h.as_slice()))
            .map_err(|e| Error::numerical(format!("bin {f}: interference covariance: {e}")))?;
        let denom = (h.adjoint() * &x)[(0, 0)];
        if denom.norm() == 0.0 || !denom.re.is_finite() {
            return Err(Error::numerical(format!("bin {f}: MVDR normalizer vanished")));
        }
        Ok(x.column(0).map(|z| z / denom))
    })?;
    let mut w = Array2::zeros((f_len, m));
    for (f, wf) in ws.into_iter().enumerate() {
        for i in 0..m {
            w[[f, i]] = wf[i];
        }
    }
    Ok(BeamformerWeights {
        w,
        kind: BeamformerKind::MvdrRtf,
        reference_channel: rtf.reference,
    })
}

/// Principal generalized eigenvector of `(Φ_target, Φ_interference)`,
/// scaled to unit norm with a real non-negative reference component.
/// With `ban`, each bin is additionally scaled by the blind analytic
/// normalization gain `sqrt(wᴴΦΦw / M) / (wᴴΦw)`.
pub fn gev_weights(cov: &CovarianceSet, reference: usize, loading: f64, ban: bool) -> Result<BeamformerWeights> {
    let m = cov.num_channels();
    if reference >= m {
        return Err(Error::config(format!("reference channel {reference} out of range")));
    }
    let ws = par::try_map_indices(cov.num_bins(), |f| {
        let phi_n = loaded(&cov.phi_interference[f], loading);
        let chol = Cholesky::new(phi_n.clone())
            .ok_or_else(|| Error::numerical(format!("bin {f}: interference covariance not positive definite")))?;
        let l = chol.l();
        let l_inv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::numerical(format!("bin {f}: singular Cholesky factor")))?;
        let whitened = &l_inv * &cov.phi_target[f] * l_inv.adjoint();
        let (_, u) = principal_eigenvector(&whitened, reference);
        let mut w = l_inv.adjoint() * u;
        let norm = w.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::numerical(format!("bin {f}: GEV vector vanished")));
        }
        w /= Complex64::new(norm, 0.0);
        let r = w[reference];
        if r.norm() > 0.0 {
            w *= r.conj() / r.norm();
        }
        if ban {
            let pw = &phi_n * &w;
            let num = (pw.norm_squared() / m as f64).sqrt();
            let den = (w.adjoint() * &pw)[(0, 0)].re;
            if den > 0.0 {
                w *= Complex64::new(num / den, 0.0);
            }
        }
        Ok(w)
    })?;
    let mut w = Array2::zeros((cov.num_bins(), m));
    for (f, wf) in ws.into_iter().enumerate() {
        for i in 0..m {
            w[[f, i]] = wf[i];
        }
    }
    Ok(BeamformerWeights {
        w,
        kind: BeamformerKind::Gev,
        reference_channel: reference,
    })
}

/// Single-channel output `out[t, f] = w[f]ᴴ y[t, f]`.
pub fn apply_beamformer(spec: &ComplexSpectrogram, weights: &BeamformerWeights) -> Result<ComplexSpectrogram> {
    let (t, f, m) = spec.data().dim();
    if weights.w.dim() != (f, m) {
        return Err(Error::shape(format!(
            "weights are {:?}, spectrogram has {f} bins × {m} channels",
            weights.w.dim()
        )));
    }
    let y = spec.data();
    let out = Array3::from_shape_fn((t, f, 1), |(ti, fi, _)| {
        (0..m).map(|c| weights.w[[fi, c]].conj() * y[[ti, fi, c]]).sum()
    });
    let mut res = ComplexSpectrogram::new(out, *spec.config(), spec.sample_rate())?;
    res = res.with_num_samples(spec.num_samples())?;
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamformerConfig {
    pub kind: BeamformerKind,
    pub reference_channel: usize,
    /// Relative loading of the interference covariance.
    pub diagonal_loading: f64,
    pub rtf_method: RtfMethod,
    /// Blind analytic normalization after GEV.
    pub ban_postfilter: bool,
}

impl Default for BeamformerConfig {
    fn default() -> Self {
        Self {
            kind: BeamformerKind::MvdrRtf,
            reference_channel: 0,
            diagonal_loading: 1e-6,
            rtf_method: RtfMethod::Eigenvector,
            ban_postfilter: false,
        }
    }
}

/// Covariances, weights, and output for one target class.
pub fn beamform_class(
    spec: &ComplexSpectrogram,
    masks: &MaskSet,
    target: usize,
    interference: &[usize],
    cfg: &BeamformerConfig,
) -> Result<(BeamformerWeights, ComplexSpectrogram)> {
    let cov = estimate_covariances(spec, masks, target, interference)?;
    let w = match cfg.kind {
        BeamformerKind::MvdrRtf => {
            let rtf = estimate_rtf(&cov, cfg.reference_channel, cfg.rtf_method)?;
            mvdr_weights(&cov, &rtf, cfg.diagonal_loading)?
        }
        BeamformerKind::Gev => gev_weights(&cov, cfg.reference_channel, cfg.diagonal_loading, cfg.ban_postfilter)?,
    };
    let out = apply_beamformer(spec, &w)?;
    Ok((w, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn single(phi_t: CMatrix, phi_i: CMatrix) -> CovarianceSet {
        CovarianceSet {
            phi_target: vec![phi_t],
            phi_interference: vec![phi_i],
            target_mass: vec![1.0],
            interference_mass: vec![1.0],
            fallback_bins: vec![],
        }
    }

    #[test]
    fn unit_mask_mono_gives_mean_power() {
        let y = Array2::from_shape_vec((3, 1), vec![c(1.0, 0.0), c(0.0, 2.0), c(3.0, 0.0)]).unwrap();
        let (phi, mass, fb) = masked_covariance(y.view(), Array2::ones((3, 1)).column(0));
        assert!((phi[(0, 0)].re - 14.0 / 3.0).abs() < 1e-15);
        assert_eq!((mass, fb), (3.0, false));
    }

    #[test]
    fn single_frame_mask_gives_outer_product() {
        let y = Array2::from_shape_vec((2, 2), vec![c(1.0, 1.0), c(2.0, 0.0), c(0.5, -1.0), c(0.0, 3.0)]).unwrap();
        let mask = ndarray::arr1(&[0.0, 1.0]);
        let (phi, _, _) = masked_covariance(y.view(), mask.view());
        assert_eq!(phi[(0, 1)], c(0.5, -1.0) * c(0.0, 3.0).conj());
        let (uniform, mass, fb) = masked_covariance(y.view(), ndarray::arr1(&[0.0, 0.0]).view());
        assert!(fb && mass == 0.0);
        assert_eq!(uniform[(0, 0)], c((2.0 + 1.25) / 2.0, 0.0));
    }

    #[test]
    fn rank_one_rtf_is_recovered() {
        let h = CVector::from_vec(vec![c(0.5, 0.5), c(1.0, -0.2), c(-0.3, 0.9)]);
        let cov = single(&h * h.adjoint(), CMatrix::identity(3, 3));
        let rtf = estimate_rtf(&cov, 0, RtfMethod::Eigenvector).unwrap();
        for i in 0..3 {
            assert!((rtf.vectors[[0, i]] - h[i] / h[0]).norm() < 1e-10);
        }
        let iso = single(CMatrix::identity(3, 3), CMatrix::identity(3, 3));
        let a = estimate_rtf(&iso, 1, RtfMethod::Eigenvector).unwrap();
        assert_eq!(a, estimate_rtf(&iso, 1, RtfMethod::Eigenvector).unwrap());
        assert_eq!(a.vectors[[0, 1]], c(1.0, 0.0));
    }

    #[test]
    fn dead_reference_is_error() {
        let h = CVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0)]);
        let cov = single(&h * h.adjoint(), CMatrix::identity(2, 2));
        assert!(estimate_rtf(&cov, 0, RtfMethod::Eigenvector)
            .unwrap_err()
            .is_numerical());
    }

    #[test]
    fn mvdr_closed_forms() {
        let h = CVector::from_vec(vec![c(1.0, 0.0), c(0.3, 0.4)]);
        let cov = single(&h * h.adjoint(), CMatrix::identity(2, 2));
        let rtf = Rtf {
            vectors: Array2::from_shape_vec((1, 2), h.iter().copied().collect()).unwrap(),
            reference: 0,
        };
        let w = mvdr_weights(&cov, &rtf, 0.0).unwrap();
        let n2 = h.norm_squared();
        for i in 0..2 {
            assert!((w.w[[0, i]] - h[i] / n2).norm() < 1e-14);
        }
        let mono = single(CMatrix::identity(1, 1), CMatrix::identity(1, 1) * c(3.0, 0.0));
        let one = Rtf {
            vectors: Array2::from_elem((1, 1), c(1.0, 0.0)),
            reference: 0,
        };
        assert!((mvdr_weights(&mono, &one, 1e-6).unwrap().w[[0, 0]] - 1.0).norm() < 1e-14);
        let zero = single(CMatrix::identity(2, 2), CMatrix::zeros(2, 2));
        assert!(mvdr_weights(&zero, &rtf, 1e-6).is_err());
    }

    #[test]
    fn gev_diagonal_case_and_ties() {
        let mut d = CMatrix::identity(2, 2);
        d[(0, 0)] = c(2.0, 0.0);
        let w = gev_weights(&single(d, CMatrix::identity(2, 2)), 0, 0.0, false).unwrap();
        assert!((w.w[[0, 0]] - 1.0).norm() < 1e-12 && w.w[[0, 1]].norm() < 1e-12);
        let same = single(CMatrix::identity(2, 2), CMatrix::identity(2, 2));
        let a = gev_weights(&same, 1, 0.0, false).unwrap();
        assert!((a.w[[0, 1]] - 1.0).norm() < 1e-12);
    }

    #[test]
    fn selector_weights_return_channel() {
        let data = Array3::from_shape_fn((4, 3, 2), |(t, f, m)| c((t + f) as f64, m as f64));
        let spec = ComplexSpectrogram::new(data, StftConfig::new(4, 2), 8000).unwrap();
        let w = BeamformerWeights {
            w: Array2::from_shape_fn((3, 2), |(_, m)| if m == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) }),
            kind: BeamformerKind::MvdrRtf,
            reference_channel: 0,
        };
        let out = apply_beamformer(&spec, &w).unwrap();
        assert_eq!(out, spec.select_channel(0).unwrap());
        let bad = BeamformerWeights {
            w: Array2::zeros((3, 3)),
            ..w
        };
        assert!(apply_beamformer(&spec, &bad).is_err());
    }
}
