mod common;

use common::rng;
use farfield::features::{log_mel_features, mel_edges, mel_filterbank, mvn};
use farfield::metrics::sdr_slices;
use farfield::{StftConfig, TimeSignal};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn filterbank_partitions_covered_band(
        fft in prop::sample::select(vec![256usize, 512, 1024]),
        fs in prop::sample::select(vec![8000u32, 16000, 22050]),
        channels in 10usize..40,
    ) {
        let fb = mel_filterbank(fft, fs, channels).unwrap();
        prop_assert!(fb.iter().all(|&v| v >= 0.0));
        let edges = mel_edges(channels, fs);
        let (lo, hi) = (edges[0], edges[channels + 1]);
        for k in 0..fft / 2 + 1 {
            let hz = k as f64 * fs as f64 / fft as f64;
            if hz > lo && hz < hi {
                prop_assert!(fb.column(k).sum() > 0.0, "bin {k} ({hz} Hz) uncovered");
            }
        }
    }

    #[test]
    fn mvn_is_idempotent(rows in 2usize..60, cols in 1usize..30, seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut x = Array2::from_shape_fn((rows, cols), |_| r.random_range(-50.0..50.0));
        mvn(&mut x);
        let mut twice = x.clone();
        mvn(&mut twice);
        for (a, b) in x.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn features_have_expected_shape(len in 600usize..6000, mel in 20usize..41, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = TimeSignal::mono((0..len).map(|_| r.random_range(-1.0..1.0)).collect(), 16000).unwrap();
        let cfg = StftConfig::new(400, 100).with_fft_size(512);
        let feats = log_mel_features(&x, &cfg, mel, true).unwrap();
        prop_assert_eq!(feats.features.dim(), (cfg.num_frames(len), mel));
        prop_assert!(feats.features.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sdr_drops_as_orthogonal_noise_grows(len in 64usize..512, g in 0.01f64..2.0, step in 0.01f64..2.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let reference: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
        let raw: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
        let proj = raw.iter().zip(&reference).map(|(a, b)| a * b).sum::<f64>() / reference.iter().map(|v| v * v).sum::<f64>();
        let noise: Vec<f64> = raw.iter().zip(&reference).map(|(a, b)| a - proj * b).collect();
        let mix = |gain: f64| -> Vec<f64> { reference.iter().zip(&noise).map(|(s, n)| s + gain * n).collect() };
        let a = sdr_slices(&mix(g), &reference).unwrap();
        let b = sdr_slices(&mix(g + step), &reference).unwrap();
        prop_assert!(b < a);
    }
}
