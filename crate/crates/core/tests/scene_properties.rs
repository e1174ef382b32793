mod common;

use common::rng;
use farfield::scene::{
    convolve_truncated, distance, render_scene, simulate_air, speech_like, split_air, NoiseSpec, RoomSpec, SceneSpec,
};
use farfield::TimeSignal;
use proptest::prelude::*;
use rand::Rng;

const FS: u32 = 16000;

fn point(r: &mut impl Rng, dims: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|a| r.random_range(0.2..dims[a] - 0.2))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn direct_path_delay_matches_geometry(
        x in 3.0f64..9.0, y in 3.0f64..8.0, z in 2.4f64..4.0, t60 in 0.0f64..0.8, seed in any::<u64>()
    ) {
        let mut r = rng(seed);
        let dims = [x, y, z];
        let room = RoomSpec::new(dims, t60);
        let (src, mic) = (point(&mut r, dims), point(&mut r, dims));
        let air = simulate_air(&room, src, mic, FS).unwrap();
        let first = air.iter().position(|&v| v != 0.0).unwrap();
        let expect = distance(src, mic) / room.speed_of_sound * FS as f64;
        prop_assert!((first as f64 - expect).abs() <= 1.0, "{first} vs {expect}");
        prop_assert!(air.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn tail_after_t60_is_negligible(t60 in 0.2f64..0.9, seed in any::<u64>()) {
        let mut r = rng(seed);
        let dims = [6.0, 5.0, 3.0];
        let room = RoomSpec::new(dims, t60);
        let (src, mic) = (point(&mut r, dims), point(&mut r, dims));
        let air = simulate_air(&room, src, mic, FS).unwrap();
        let direct = air.iter().position(|&v| v != 0.0).unwrap();
        let cut = direct + (t60 * FS as f64).round() as usize;
        let total: f64 = air.iter().map(|v| v * v).sum();
        let tail: f64 = air[cut.min(air.len())..].iter().map(|v| v * v).sum();
        prop_assert!(tail < 1e-3 * total, "tail fraction {}", tail / total);
    }

    #[test]
    fn doubling_distance_quarters_direct_power(d in 0.3f64..2.0, az in 0.0f64..std::f64::consts::TAU) {
        let room = RoomSpec::new([20.0, 20.0, 10.0], 0.0);
        let mic = [10.0, 10.0, 5.0];
        let at = |dist: f64| [mic[0] + dist * az.cos(), mic[1] + dist * az.sin(), mic[2]];
        let peak = |dist: f64| {
            let air = simulate_air(&room, at(dist), mic, FS).unwrap();
            air.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        };
        let ratio = (peak(d) / peak(2.0 * d)).powi(2);
        prop_assert!((ratio - 4.0).abs() <= 4e-10, "ratio {ratio}");
    }

    #[test]
    fn decomposition_is_exact(snr in -5.0f64..30.0, sources in 1usize..3, seed in 0u64..1000) {
        let spec = SceneSpec {
            room: RoomSpec::new([5.0, 4.0, 3.0], 0.25),
            mic_positions: vec![[2.5, 2.0, 1.4], [2.6, 2.0, 1.4]],
            source_positions: [[1.0, 1.0, 1.5], [4.0, 3.2, 1.6]][..sources].to_vec(),
            source_signals: (0..sources).map(|k| speech_like(0.4, FS, seed + k as u64).unwrap()).collect(),
            noise: NoiseSpec::WhiteGaussian { seed },
            snr_db: snr,
            sample_rate: FS,
            early_boundary_ms: 50.0,
        };
        let scene = render_scene(&spec).unwrap();
        let mut sum = ndarray::Array2::<f64>::zeros(scene.mixture.samples().dim());
        for (k, img) in scene.images.iter().enumerate() {
            prop_assert_eq!(img.samples(), &(scene.early[k].samples() + scene.late[k].samples()));
            sum += img.samples();
        }
        prop_assert_eq!(scene.mixture.samples(), &(sum + scene.noise.samples()));
        for k in 0..sources {
            for m in 0..2 {
                let air: Vec<f64> = scene.airs.slice(ndarray::s![k, m, ..]).to_vec();
                let (early, late) = split_air(&air, 50.0, FS).unwrap();
                prop_assert!(early.iter().zip(&late).zip(&air).all(|((e, l), a)| e + l == *a && (*e == 0.0 || *l == 0.0)));
                let dry = scene.sources[k].channel(0).to_vec();
                let direct = convolve_truncated(&dry, &air, scene.mixture.len());
                let img = scene.images[k].channel(m);
                let scale = direct.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                prop_assert!(direct.iter().zip(img).all(|(a, b)| (a - b).abs() <= 1e-10 * scale));
            }
        }
    }
}

#[test]
fn noise_free_scene_has_zero_noise() {
    let spec = SceneSpec {
        room: RoomSpec::new([5.0, 4.0, 3.0], 0.3),
        mic_positions: vec![[2.5, 2.0, 1.4]],
        source_positions: vec![[1.0, 1.0, 1.5]],
        source_signals: vec![TimeSignal::mono(vec![1.0; 400], FS).unwrap()],
        noise: NoiseSpec::WhiteGaussian { seed: 1 },
        snr_db: f64::INFINITY,
        sample_rate: FS,
        early_boundary_ms: 50.0,
    };
    let scene = render_scene(&spec).unwrap();
    assert!(scene.noise.samples().iter().all(|&v| v == 0.0));
    assert_eq!(scene.mixture.samples(), scene.images[0].samples());
}
