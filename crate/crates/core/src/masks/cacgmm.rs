use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::{align_frequency_permutations, flattest_class, MaskSet};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, CMatrix, CVector};
use crate::par;
use crate::stft::ComplexSpectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacgmmConfig {
    pub num_classes: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Relative eigenvalue floor for the shape matrices.
    pub eigen_floor: f64,
    /// Class moved to the last (noise) position after alignment; `None`
    /// picks the class with the flattest activity profile.
    pub noise_class: Option<usize>,
}

impl Default for CacgmmConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            iterations: 20,
            seed: 0,
            eigen_floor: 1e-10,
            noise_class: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CacgmmState {
    /// Class priors `[bin, class]`.
    pub weights: Array2<f64>,
    /// Shape matrices, `shapes[bin][class]`, trace `M`.
    pub shapes: Vec<Vec<CMatrix>>,
    /// Total log-likelihood after each EM iteration, summed over bins.
    pub log_likelihood: Vec<f64>,
    /// Bins without a single nonzero observation.
    pub degenerate_bins: Vec<usize>,
    /// `permutations[f][k]`: raw EM class reported at position `k`. Identity
    /// for [`cacgmm_em_from_posteriors`].
    pub permutations: Vec<Vec<usize>>,
    /// Aligned class index chosen as noise (before it was moved last).
    pub noise_class: Option<usize>,
}

/// Symmetric Dirichlet(1) posteriors `[class, frame, bin]`. Each bin draws
/// from its own stream of the seeded generator.
pub fn dirichlet_posteriors(classes: usize, frames: usize, bins: usize, seed: u64) -> Array3<f64> {
    let mut out = Array3::zeros((classes, frames, bins));
    for f in 0..bins {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(f as u64);
        for t in 0..frames {
            let draws: Vec<f64> = (0..classes).map(|_| Exp1.sample(&mut rng)).collect();
            let s: f64 = draws.iter().sum();
            for (c, d) in draws.into_iter().enumerate() {
                out[[c, t, f]] = d / s;
            }
        }
    }
    out
}

fn ln_gamma_int(m: usize) -> f64 {
    (1..m).map(|k| (k as f64).ln()).sum()
}

/// Log-density of a unit vector `z` under a complex angular central
/// Gaussian with shape `b`:
/// `ln Γ(M) − ln 2 − M ln π − ln det B − M ln(zᴴ B⁻¹ z)`.
pub fn cacg_log_density(z: &CVector, b: &CMatrix) -> Result<f64> {
    let m = z.len();
    let inv = b
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::numerical("shape matrix is singular"))?;
    let (vals, _) = hermitian_eigen(b);
    if vals.iter().any(|&v| v <= 0.0) {
        return Err(Error::numerical("shape matrix is not positive definite"));
    }
    let logdet: f64 = vals.iter().map(|v| v.ln()).sum();
    let q = (z.adjoint() * inv * z)[(0, 0)].re;
    Ok(ln_gamma_int(m) - 2f64.ln() - m as f64 * std::f64::consts::PI.ln() - logdet - m as f64 * q.ln())
}

struct Shape {
    matrix: CMatrix,
    inverse: CMatrix,
    logdet: f64,
}

impl Shape {
    fn identity(m: usize) -> Self {
        Self {
            matrix: CMatrix::identity(m, m),
            inverse: CMatrix::identity(m, m),
            logdet: 0.0,
        }
    }

    /// Normalizes the trace to `M`, floors eigenvalues, caches inverse and
    /// log-determinant.
    fn from_scatter(s: &CMatrix, floor: f64) -> Self {
        let m = s.nrows();
        let tr: f64 = (0..m).map(|i| s[(i, i)].re).sum();
        let scaled = s * Complex64::new(m as f64 / tr, 0.0);
        let (vals, vecs) = hermitian_eigen(&scaled);
        let vals: Vec<f64> = vals.iter().map(|&v| v.max(floor)).collect();
        let mut matrix = CMatrix::zeros(m, m);
        let mut inverse = CMatrix::zeros(m, m);
        for (k, &v) in vals.iter().enumerate() {
            let col = vecs.column(k);
            let outer = col * col.adjoint();
            matrix += &outer * Complex64::new(v, 0.0);
            inverse += outer * Complex64::new(1.0 / v, 0.0);
        }
        crate::linalg::hermitize(&mut matrix);
        crate::linalg::hermitize(&mut inverse);
        Self {
            matrix,
            inverse,
            logdet: vals.iter().map(|v| v.ln()).sum(),
        }
    }

    fn quad(&self, z: &CVector) -> f64 {
        (z.adjoint() * &self.inverse * z)[(0, 0)].re
    }
}

struct BinFit {
    posteriors: Array2<f64>,
    weights: Vec<f64>,
    shapes: Vec<CMatrix>,
    log_likelihood: Vec<f64>,
    degenerate: bool,
}

fn logsumexp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// EM on one bin. `y` is `[frame, channel]`, `init` is `[class, frame]`.
fn em_bin(y: ArrayView2<'_, Complex64>, init: ArrayView2<'_, f64>, iterations: usize, floor: f64) -> BinFit {
    let (t_len, m) = y.dim();
    let c_len = init.nrows();
    let mut gamma = init.to_owned();
    let obs: Vec<Option<CVector>> = (0..t_len)
        .map(|t| {
            let v = CVector::from_iterator(m, y.row(t).iter().copied());
            let n = v.norm();
            (n > 0.0).then(|| v / Complex64::new(n, 0.0))
        })
        .collect();
    let valid = obs.iter().filter(|z| z.is_some()).count();
    let uniform = 1.0 / c_len as f64;
    for (t, z) in obs.iter().enumerate() {
        if z.is_none() {
            gamma.column_mut(t).fill(uniform);
        }
    }
    if valid == 0 {
        return BinFit {
            posteriors: gamma,
            weights: vec![uniform; c_len],
            shapes: vec![CMatrix::identity(m, m); c_len],
            log_likelihood: vec![0.0; iterations],
            degenerate: true,
        };
    }

    let constant = ln_gamma_int(m) - 2f64.ln() - m as f64 * std::f64::consts::PI.ln();
    let mut shapes: Vec<Shape> = (0..c_len).map(|_| Shape::identity(m)).collect();
    let mut weights = vec![uniform; c_len];
    let mut history = Vec::with_capacity(iterations);
    let mut logp = vec![0.0; c_len];
    for _ in 0..iterations {
        for c in 0..c_len {
            let mass: f64 = obs
                .iter()
                .enumerate()
                .filter(|(_, z)| z.is_some())
                .map(|(t, _)| gamma[[c, t]])
                .sum();
            weights[c] = mass / valid as f64;
            if mass <= 0.0 {
                continue;
            }
            let mut scatter = CMatrix::zeros(m, m);
            for (t, z) in obs.iter().enumerate() {
                if let Some(z) = z {
                    let g = gamma[[c, t]];
                    if g > 0.0 {
                        let w = g / shapes[c].quad(z);
                        scatter += (z * z.adjoint()) * Complex64::new(w, 0.0);
                    }
                }
            }
            shapes[c] = Shape::from_scatter(&scatter, floor);
        }
        let mut total = 0.0;
        for (t, z) in obs.iter().enumerate() {
            let Some(z) = z else { continue };
            for c in 0..c_len {
                logp[c] = weights[c].ln() + constant - shapes[c].logdet - m as f64 * shapes[c].quad(z).ln();
            }
            let norm = logsumexp(&logp);
            total += norm;
            for c in 0..c_len {
                gamma[[c, t]] = (logp[c] - norm).exp();
            }
        }
        history.push(total);
    }
    BinFit {
        posteriors: gamma,
        weights,
        shapes: shapes.into_iter().map(|s| s.matrix).collect(),
        log_likelihood: history,
        degenerate: false,
    }
}

fn check_observation(obs: &ComplexSpectrogram, classes: usize) -> Result<()> {
    if obs.num_channels() < 2 {
        return Err(Error::config("spatial clustering needs at least two channels"));
    }
    if classes == 0 {
        return Err(Error::config("cACGMM needs at least one class"));
    }
    if classes > obs.num_frames() {
        return Err(Error::config(format!(
            "{classes} classes but only {} frames",
            obs.num_frames()
        )));
    }
    Ok(())
}

/// cACGMM EM from given initial posteriors `[class, frame, bin]`, without
/// permutation alignment.
pub fn cacgmm_em_from_posteriors(
    observation: &ComplexSpectrogram,
    init: &Array3<f64>,
    iterations: usize,
    eigen_floor: f64,
) -> Result<(MaskSet, CacgmmState)> {
    let (c_len, t_len, f_len) = init.dim();
    check_observation(observation, c_len)?;
    if (t_len, f_len) != (observation.num_frames(), observation.num_bins()) {
        return Err(Error::shape("initial posteriors do not match the observation"));
    }
    if iterations == 0 {
        return Err(Error::config("cACGMM needs at least one iteration"));
    }
    let fits = par::map_indices(f_len, |f| {
        em_bin(observation.bin(f), init.index_axis(Axis(2), f), iterations, eigen_floor)
    });
    let mut masks = Array3::zeros((c_len, t_len, f_len));
    let mut weights = Array2::zeros((f_len, c_len));
    let mut shapes = Vec::with_capacity(f_len);
    let mut log_likelihood = vec![0.0; iterations];
    let mut degenerate_bins = Vec::new();
    for (f, fit) in fits.into_iter().enumerate() {
        masks.index_axis_mut(Axis(2), f).assign(&fit.posteriors);
        for c in 0..c_len {
            weights[[f, c]] = fit.weights[c];
        }
        for (acc, v) in log_likelihood.iter_mut().zip(&fit.log_likelihood) {
            *acc += v;
        }
        if fit.degenerate {
            degenerate_bins.push(f);
        }
        shapes.push(fit.shapes);
    }
    if !degenerate_bins.is_empty() {
        log::warn!(
            "cacgmm: {} of {f_len} bins are all-zero, posteriors left uniform",
            degenerate_bins.len()
        );
    }
    // exp() can land a hair outside [0, 1]
    masks.mapv_inplace(|v: f64| v.clamp(0.0, 1.0));
    Ok((
        MaskSet::new(masks)?,
        CacgmmState {
            weights,
            shapes,
            log_likelihood,
            degenerate_bins,
            permutations: vec![(0..c_len).collect(); f_len],
            noise_class: None,
        },
    ))
}

/// Spatial clustering with a cACG mixture per bin, followed by permutation
/// alignment across bins and noise-class identification. The returned masks
/// have the noise class last.
pub fn cacgmm_em(observation: &ComplexSpectrogram, cfg: &CacgmmConfig) -> Result<(MaskSet, CacgmmState)> {
    check_observation(observation, cfg.num_classes)?;
    let init = dirichlet_posteriors(
        cfg.num_classes,
        observation.num_frames(),
        observation.num_bins(),
        cfg.seed,
    );
    let (raw, mut state) = cacgmm_em_from_posteriors(observation, &init, cfg.iterations, cfg.eigen_floor)?;
    if cfg.num_classes == 1 {
        return Ok((raw, state));
    }
    let aligned = align_frequency_permutations(&raw)?;
    let noise = match cfg.noise_class {
        Some(n) if n >= cfg.num_classes => {
            return Err(Error::config(format!("noise class {n} out of range")));
        }
        Some(n) => n,
        None => flattest_class(&aligned.masks),
    };
    let order: Vec<usize> = (0..cfg.num_classes).filter(|&k| k != noise).chain([noise]).collect();
    let masks = aligned.masks.reorder(&order)?;

    let f_len = observation.num_bins();
    let mut weights = Array2::zeros(state.weights.dim());
    let mut shapes = Vec::with_capacity(f_len);
    let mut perms = Vec::with_capacity(f_len);
    for f in 0..f_len {
        let perm: Vec<usize> = order.iter().map(|&k| aligned.permutations[f][k]).collect();
        for (k, &raw_c) in perm.iter().enumerate() {
            weights[[f, k]] = state.weights[[f, raw_c]];
        }
        shapes.push(perm.iter().map(|&raw_c| state.shapes[f][raw_c].clone()).collect());
        perms.push(perm);
    }
    state.weights = weights;
    state.shapes = shapes;
    state.permutations = perms;
    state.noise_class = Some(noise);
    Ok((masks, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_obs(t: usize, f: usize, m: usize, seed: u64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_simple_fn((t, f, m), || {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let fft = 2 * (f - 1);
        ComplexSpectrogram::new(data, StftConfig::new(fft, fft / 2), 16000).unwrap()
    }

    #[test]
    fn dirichlet_rows_are_normalized_and_seeded() {
        let a = dirichlet_posteriors(3, 10, 4, 9);
        let b = dirichlet_posteriors(3, 10, 4, 9);
        assert_eq!(a, b);
        for s in a.sum_axis(Axis(0)).iter() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_ne!(a, dirichlet_posteriors(3, 10, 4, 10));
    }

    #[test]
    fn density_integrates_against_uniform_for_identity_shape() {
        // with B = I the density is the uniform one on the complex sphere
        let z = CVector::from_vec(vec![Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)]);
        let v = cacg_log_density(&z, &CMatrix::identity(2, 2)).unwrap();
        let sphere_area = 2.0 * std::f64::consts::PI.powi(2);
        assert!((v + sphere_area.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_certain() {
        let obs = random_obs(30, 3, 2, 1);
        let (m, s) = cacgmm_em(
            &obs,
            &CacgmmConfig {
                num_classes: 1,
                iterations: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(m.masks().iter().all(|&v| v == 1.0));
        assert!(s.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs()));
    }

    #[test]
    fn zero_band_stays_uniform() {
        let mut data = random_obs(30, 3, 2, 2).into_data();
        data.index_axis_mut(Axis(1), 1).fill(Complex64::default());
        let obs = ComplexSpectrogram::new(data, StftConfig::new(4, 2), 16000).unwrap();
        let init = dirichlet_posteriors(2, 30, 3, 0);
        let (m, s) = cacgmm_em_from_posteriors(&obs, &init, 4, 1e-10).unwrap();
        assert_eq!(s.degenerate_bins, vec![1]);
        assert!(m.masks().slice(ndarray::s![.., .., 1]).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn preconditions() {
        let obs = random_obs(4, 3, 2, 3);
        assert!(cacgmm_em(
            &obs,
            &CacgmmConfig {
                num_classes: 5,
                ..Default::default()
            }
        )
        .is_err());
        let mono = random_obs(20, 3, 1, 3);
        assert!(cacgmm_em(&mono, &CacgmmConfig::default()).is_err());
    }

    #[test]
    fn shapes_are_trace_normalized_hermitian() {
        let obs = random_obs(60, 4, 3, 4);
        let (m, s) = cacgmm_em(
            &obs,
            &CacgmmConfig {
                iterations: 6,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(m.normalization_error() < 1e-12);
        for bin in &s.shapes {
            for b in bin {
                let tr: f64 = (0..3).map(|i| b[(i, i)].re).sum();
                assert!((tr - 3.0).abs() < 1e-8);
                assert!((b - b.adjoint()).norm() < 1e-10);
                let (vals, _) = hermitian_eigen(b);
                assert!(vals[0] > 0.0);
            }
        }
        for row in s.weights.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
