//! Per-stage throughput on the default rayon pool against a single-thread
//! pool. Build with `--no-default-features` to benchmark the sequential
//! fallback, where both groups take the same path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use farfield::masks::{cacgmm_em, CacgmmConfig};
use farfield::scene::{render_scene, simulate_air, speech_like, NoiseSpec, RoomSpec, SceneSpec};
use farfield::{stft, wpe, ComplexSpectrogram, StftConfig, TimeSignal, WpeConfig};
use rayon::ThreadPool;

fn pools() -> Vec<(&'static str, ThreadPool)> {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("single_thread", single), ("default_pool", all)]
}

fn mixture() -> TimeSignal {
    let spec = SceneSpec {
        room: RoomSpec::new([6.0, 5.0, 3.0], 0.4),
        mic_positions: (0..4).map(|k| [3.0 + 0.05 * k as f64, 2.4, 1.4]).collect(),
        source_positions: vec![[1.5, 1.2, 1.6], [4.6, 4.0, 1.5]],
        source_signals: vec![speech_like(3.0, 16000, 1).unwrap(), speech_like(3.0, 16000, 2).unwrap()],
        noise: NoiseSpec::WhiteGaussian { seed: 3 },
        snr_db: 10.0,
        sample_rate: 16000,
        early_boundary_ms: 50.0,
    };
    render_scene(&spec).unwrap().mixture
}

fn stages(c: &mut Criterion) {
    let signal = mixture();
    let cfg = StftConfig::new(512, 128);
    let spec: ComplexSpectrogram = stft(&signal, &cfg).unwrap();
    let room = RoomSpec::new([6.0, 5.0, 3.0], 0.6);
    let wpe_cfg = WpeConfig::default();
    let em_cfg = CacgmmConfig {
        iterations: 5,
        ..CacgmmConfig::default()
    };

    let mut group = c.benchmark_group("stages");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("stft", name), |b| {
            pool.install(|| b.iter(|| stft(&signal, &cfg).unwrap()))
        });
        group.bench_function(BenchmarkId::new("air", name), |b| {
            pool.install(|| b.iter(|| simulate_air(&room, [1.5, 1.5, 1.6], [4.0, 3.0, 1.4], 16000).unwrap()))
        });
        group.bench_function(BenchmarkId::new("wpe", name), |b| {
            pool.install(|| b.iter(|| wpe(&spec, &wpe_cfg).unwrap()))
        });
        group.bench_function(BenchmarkId::new("cacgmm", name), |b| {
            pool.install(|| b.iter(|| cacgmm_em(&spec, &em_cfg).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
