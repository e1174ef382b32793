//! Shared fixtures and explicit-loop reference implementations.
#![allow(dead_code)]

use farfield::scene::{render_scene, speech_like, NoiseSpec, RoomSpec, Scene, SceneSpec};
use ndarray::{Array2, Array3};
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cgauss(rng: &mut ChaCha8Rng) -> C {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn random_cube(t: usize, f: usize, m: usize, rng: &mut ChaCha8Rng) -> Array3<C> {
    Array3::from_shape_fn((t, f, m), |_| cgauss(rng))
}

/// Dense complex matrix as nested rows.
pub type Dense = Vec<Vec<C>>;

pub fn random_hpd(m: usize, rng: &mut ChaCha8Rng) -> Dense {
    let a: Dense = (0..m).map(|_| (0..2 * m).map(|_| cgauss(rng)).collect()).collect();
    let mut out = vec![vec![C::default(); m]; m];
    for i in 0..m {
        for j in 0..m {
            for k in 0..2 * m {
                out[i][j] += a[i][k] * a[j][k].conj();
            }
        }
        out[i][i] += C::new(0.1 * rng.random::<f64>(), 0.0);
    }
    out
}

/// Gauss-Jordan elimination with partial pivoting; solves `a x = b`.
pub fn solve(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let cols = b[0].len();
    let mut aug: Dense = (0..n)
        .map(|i| a[i].iter().chain(b[i].iter()).copied().collect())
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&x, &y| aug[x][c].norm().total_cmp(&aug[y][c].norm()))
            .unwrap();
        aug.swap(c, p);
        let pivot = aug[c][c];
        for v in aug[c].iter_mut() {
            *v /= pivot;
        }
        for r in 0..n {
            if r != c {
                let factor = aug[r][c];
                if factor != C::default() {
                    for k in 0..n + cols {
                        let s = aug[c][k];
                        aug[r][k] -= factor * s;
                    }
                }
            }
        }
    }
    aug.into_iter().map(|row| row[n..].to_vec()).collect()
}

/// Explicit-loop WPE normal equations for one bin `y[t][m]`:
/// `Σ_t x_t x_tᴴ / λ_t · C = Σ_t x_t y_tᴴ / λ_t`, `x_t` stacking
/// `y[t − delay − k][m]` at row `k·M + m`.
pub fn wpe_normal_equations(y: &[Vec<C>], lambda: &[f64], delay: usize, taps: usize) -> Dense {
    let t_len = y.len();
    let m = y[0].len();
    let n = taps * m;
    let mut r = vec![vec![C::default(); n]; n];
    let mut p = vec![vec![C::default(); m]; n];
    for t in 0..t_len {
        let mut x = vec![C::default(); n];
        for k in 0..taps {
            for ch in 0..m {
                if t >= delay + k {
                    x[k * m + ch] = y[t - delay - k][ch];
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                r[i][j] += x[i] * x[j].conj() / lambda[t];
            }
            for j in 0..m {
                p[i][j] += x[i] * y[t][j].conj() / lambda[t];
            }
        }
    }
    solve(&r, &p)
}

/// Channel-mean power per frame, no smoothing.
pub fn frame_power(y: &[Vec<C>], floor: f64) -> Vec<f64> {
    y.iter()
        .map(|row| (row.iter().map(|z| z.norm_sqr()).sum::<f64>() / row.len() as f64).max(floor))
        .collect()
}

/// Room, array, and sources of the end-to-end two-speaker scene.
pub fn two_speaker_scene(snr_db: f64) -> Scene {
    let centre = [3.2, 2.4, 1.4];
    let mics = (0..4)
        .map(|k| [centre[0] + (k as f64 - 1.5) * 0.08, centre[1], centre[2]])
        .collect();
    let spec = SceneSpec {
        room: RoomSpec::new([6.0, 5.0, 3.0], 0.3),
        mic_positions: mics,
        source_positions: vec![[1.5, 1.2, 1.6], [4.6, 4.0, 1.5]],
        source_signals: vec![
            speech_like(5.0, 16000, 11).unwrap(),
            speech_like(5.0, 16000, 12).unwrap(),
        ],
        noise: NoiseSpec::WhiteGaussian { seed: 5 },
        snr_db,
        sample_rate: 16000,
        early_boundary_ms: 50.0,
    };
    render_scene(&spec).unwrap()
}

/// Two-microphone reverberant single-speaker scene.
pub fn reverberant_scene(t60: f64, seed: u64, duration_s: f64) -> Scene {
    let spec = SceneSpec {
        room: RoomSpec::new([6.0, 5.0, 3.0], t60),
        mic_positions: vec![[3.5, 2.5, 1.4], [3.55, 2.5, 1.4]],
        source_positions: vec![[1.5, 1.5, 1.6]],
        source_signals: vec![speech_like(duration_s, 16000, seed).unwrap()],
        noise: NoiseSpec::WhiteGaussian { seed: 0 },
        snr_db: f64::INFINITY,
        sample_rate: 16000,
        early_boundary_ms: 50.0,
    };
    render_scene(&spec).unwrap()
}

/// `[t][m]` rows of one bin.
pub fn bin_rows(data: &Array3<C>, f: usize) -> Vec<Vec<C>> {
    let (t, _, m) = data.dim();
    (0..t).map(|ti| (0..m).map(|c| data[[ti, f, c]]).collect()).collect()
}

pub fn max_abs_diff(a: &Array2<C>, b: &Dense) -> f64 {
    let mut e = 0.0f64;
    for (i, row) in b.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            e = e.max((a[[i, j]] - v).norm());
        }
    }
    e
}
