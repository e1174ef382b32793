mod common;

use common::*;
use farfield::beamform::{estimate_covariances, estimate_rtf, gev_weights, mvdr_weights, RtfMethod};
use farfield::linalg::{hermitian_eigen, quad_form, trace_re};
use farfield::masks::MaskSet;
use farfield::{ComplexSpectrogram, StftConfig};
use ndarray::Array3;
use num_complex::Complex64 as C;
use proptest::prelude::*;
use rand::Rng;

fn random_case(t: usize, f: usize, m: usize, seed: u64) -> (ComplexSpectrogram, MaskSet) {
    let mut r = rng(seed);
    let spec =
        ComplexSpectrogram::new(random_cube(t, f, m, &mut r), StftConfig::new(2 * (f - 1), f - 1), 16000).unwrap();
    let raw = Array3::from_shape_fn((3, t, f), |_| r.random::<f64>() + 1e-3);
    let sums = raw.sum_axis(ndarray::Axis(0));
    let masks = MaskSet::new(Array3::from_shape_fn((3, t, f), |(c, ti, fi)| {
        raw[[c, ti, fi]] / sums[[ti, fi]]
    }))
    .unwrap();
    (spec, masks)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn covariances_are_hermitian_psd(t in 3usize..40, m in 1usize..5, seed in any::<u64>()) {
        let (spec, masks) = random_case(t, 3, m, seed);
        let cov = estimate_covariances(&spec, &masks, 0, &[1, 2]).unwrap();
        for phi in cov.phi_target.iter().chain(&cov.phi_interference) {
            let scale = trace_re(phi);
            prop_assert!((phi - phi.adjoint()).norm() <= 1e-14 * scale);
            let (values, _) = hermitian_eigen(phi);
            prop_assert!(values.iter().all(|&v| v >= -1e-12 * scale), "{values:?}");
        }
    }

    #[test]
    fn mvdr_is_distortionless(t in 20usize..60, m in 2usize..5, seed in any::<u64>()) {
        let (spec, masks) = random_case(t, 5, m, seed);
        let cov = estimate_covariances(&spec, &masks, 0, &[1, 2]).unwrap();
        let rtf = estimate_rtf(&cov, 0, RtfMethod::Eigenvector).unwrap();
        let w = mvdr_weights(&cov, &rtf, 1e-6).unwrap();
        for f in 0..5 {
            let resp = (w.at(f).adjoint() * rtf.at(f))[(0, 0)];
            prop_assert!((resp - 1.0).norm() < 1e-8);
        }
    }

    #[test]
    fn gev_rayleigh_quotient_is_scale_invariant(t in 20usize..60, m in 2usize..5, seed in any::<u64>()) {
        let (spec, masks) = random_case(t, 4, m, seed);
        let cov = estimate_covariances(&spec, &masks, 0, &[1, 2]).unwrap();
        let w = gev_weights(&cov, 0, 0.0, false).unwrap();
        let mut r = rng(seed.wrapping_mul(3));
        for f in 0..4 {
            let wf = w.at(f);
            let q = quad_form(&cov.phi_target[f], &wf) / quad_form(&cov.phi_interference[f], &wf);
            for _ in 0..10 {
                let c = C::from_polar(r.random_range(1e-3..1e3), r.random_range(0.0..std::f64::consts::TAU));
                let ws = &wf * c;
                let qs = quad_form(&cov.phi_target[f], &ws) / quad_form(&cov.phi_interference[f], &ws);
                prop_assert!((q - qs).abs() <= 1e-10 * q.abs());
            }
            // the GEV vector attains the largest generalized eigenvalue
            for _ in 0..10 {
                let v = farfield::linalg::CVector::from_fn(wf.len(), |_, _| cgauss(&mut r));
                let qv = quad_form(&cov.phi_target[f], &v) / quad_form(&cov.phi_interference[f], &v);
                prop_assert!(qv <= q * (1.0 + 1e-9));
            }
        }
    }
}
