use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use super::room::{simulate_air_with_length, split_air, RoomSpec};
use crate::error::{Error, Result};
use crate::par;
use crate::signal::TimeSignal;

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    /// Independent white Gaussian noise per microphone.
    WhiteGaussian { seed: u64 },
    /// Recorded noise; needs `M` channels (or one, which is reused on every
    /// microphone) and at least the mixture length.
    Signal(TimeSignal),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub room: RoomSpec,
    pub mic_positions: Vec<[f64; 3]>,
    pub source_positions: Vec<[f64; 3]>,
    /// One mono signal per source.
    pub source_signals: Vec<TimeSignal>,
    pub noise: NoiseSpec,
    /// Reverberant-source to noise power ratio at microphone 0. `+inf`
    /// disables noise.
    pub snr_db: f64,
    pub sample_rate: u32,
    pub early_boundary_ms: f64,
}

impl SceneSpec {
    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn num_sources(&self) -> usize {
        self.source_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        if self.mic_positions.is_empty() {
            return Err(Error::config("scene needs at least one microphone"));
        }
        if self.source_positions.is_empty() {
            return Err(Error::config("scene needs at least one source"));
        }
        if self.source_positions.len() != self.source_signals.len() {
            return Err(Error::config(format!(
                "{} source positions but {} source signals",
                self.source_positions.len(),
                self.source_signals.len()
            )));
        }
        for &p in self.mic_positions.iter().chain(&self.source_positions) {
            self.room.check_inside(p)?;
        }
        for (i, s) in self.source_signals.iter().enumerate() {
            if s.num_channels() != 1 {
                return Err(Error::config(format!("source {i} must be mono")));
            }
            if s.sample_rate() != self.sample_rate {
                return Err(Error::config(format!(
                    "source {i} is at {} Hz, scene at {} Hz",
                    s.sample_rate(),
                    self.sample_rate
                )));
            }
            if s.is_empty() {
                return Err(Error::Empty(format!("source {i} has no samples")));
            }
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::config("snr_db must be finite or +inf"));
        }
        if !(self.early_boundary_ms >= 0.0) {
            return Err(Error::config("early boundary must be >= 0 ms"));
        }
        Ok(())
    }
}

/// Rendered ground truth. Every per-source quantity is `M`-channel at the
/// mixture length.
#[derive(Debug, Clone)]
pub struct Scene {
    pub mixture: TimeSignal,
    pub images: Vec<TimeSignal>,
    pub early: Vec<TimeSignal>,
    pub late: Vec<TimeSignal>,
    pub noise: TimeSignal,
    /// `[source, mic, tap]`.
    pub airs: Array3<f64>,
    pub sources: Vec<TimeSignal>,
}

impl Scene {
    pub fn num_sources(&self) -> usize {
        self.images.len()
    }

    /// Noise plus the late reverberation of every source.
    pub fn residual(&self) -> TimeSignal {
        let mut acc = self.noise.samples().clone();
        for l in &self.late {
            acc += l.samples();
        }
        TimeSignal::new(acc, self.mixture.sample_rate()).expect("finite sums")
    }
}

/// Linear convolution of `x` with `h`, truncated to `out_len` samples.
pub fn convolve_truncated(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || h.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let full = x.len() + h.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    let mut b: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(h.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    (0..out_len)
        .map(|i| if i < full { a[i].re / n as f64 } else { 0.0 })
        .collect()
}

pub fn render_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let fs = spec.sample_rate;
    let n_src = spec.num_sources();
    let n_mic = spec.num_mics();
    let len = spec.source_signals.iter().map(|s| s.len()).max().unwrap_or(0);

    let air_len = spec
        .source_positions
        .iter()
        .flat_map(|&s| spec.mic_positions.iter().map(move |&m| (s, m)))
        .map(|(s, m)| spec.room.air_length(s, m, fs))
        .max()
        .unwrap_or(1);

    // (source, mic) pairs in row-major order
    let pairs = par::try_map_indices(n_src * n_mic, |k| {
        let (i, m) = (k / n_mic, k % n_mic);
        let air = simulate_air_with_length(&spec.room, spec.source_positions[i], spec.mic_positions[m], fs, air_len)?;
        let (early_air, late_air) = split_air(&air, spec.early_boundary_ms, fs)?;
        let dry = spec.source_signals[i].channel(0).to_vec();
        let early = convolve_truncated(&dry, &early_air, len);
        let late = if late_air.iter().any(|&v| v != 0.0) {
            convolve_truncated(&dry, &late_air, len)
        } else {
            vec![0.0; len]
        };
        Ok((air, early, late))
    })?;

    let mut airs = Array3::zeros((n_src, n_mic, air_len));
    let mut early = vec![Array2::<f64>::zeros((n_mic, len)); n_src];
    let mut late = vec![Array2::<f64>::zeros((n_mic, len)); n_src];
    for (k, (air, e, l)) in pairs.into_iter().enumerate() {
        let (i, m) = (k / n_mic, k % n_mic);
        for (t, v) in air.into_iter().enumerate() {
            airs[[i, m, t]] = v;
        }
        for n in 0..len {
            early[i][[m, n]] = e[n];
            late[i][[m, n]] = l[n];
        }
    }
    let images: Vec<Array2<f64>> = early.iter().zip(&late).map(|(e, l)| e + l).collect();

    let mut speech = Array2::<f64>::zeros((n_mic, len));
    for img in &images {
        speech += img;
    }
    let noise = scaled_noise(spec, &speech, len)?;
    let mixture = &speech + &noise;

    let wrap = |a: Array2<f64>| TimeSignal::new(a, fs);
    Ok(Scene {
        mixture: wrap(mixture)?,
        images: images.into_iter().map(wrap).collect::<Result<_>>()?,
        early: early.into_iter().map(wrap).collect::<Result<_>>()?,
        late: late.into_iter().map(wrap).collect::<Result<_>>()?,
        noise: wrap(noise)?,
        airs,
        sources: spec.source_signals.clone(),
    })
}

fn scaled_noise(spec: &SceneSpec, speech: &Array2<f64>, len: usize) -> Result<Array2<f64>> {
    let n_mic = spec.num_mics();
    if spec.snr_db == f64::INFINITY {
        return Ok(Array2::zeros((n_mic, len)));
    }
    let raw = match &spec.noise {
        NoiseSpec::WhiteGaussian { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut a = Array2::zeros((n_mic, len));
            for m in 0..n_mic {
                for n in 0..len {
                    a[[m, n]] = StandardNormal.sample(&mut rng);
                }
            }
            a
        }
        NoiseSpec::Signal(sig) => {
            if sig.len() < len {
                return Err(Error::config(format!(
                    "noise has {} samples, mixture needs {len}",
                    sig.len()
                )));
            }
            if sig.sample_rate() != spec.sample_rate {
                return Err(Error::config("noise sample rate differs from scene"));
            }
            match sig.num_channels() {
                1 => Array2::from_shape_fn((n_mic, len), |(_, n)| sig.samples()[[0, n]]),
                c if c == n_mic => Array2::from_shape_fn((n_mic, len), |(m, n)| sig.samples()[[m, n]]),
                c => {
                    return Err(Error::config(format!(
                        "noise has {c} channels, scene has {n_mic} microphones"
                    )))
                }
            }
        }
    };
    let p_speech = speech.row(0).iter().map(|x| x * x).sum::<f64>() / len as f64;
    if p_speech == 0.0 {
        return Err(Error::config(
            "sources are silent at the reference microphone; cannot set SNR",
        ));
    }
    let p_noise = raw.row(0).iter().map(|x| x * x).sum::<f64>() / len as f64;
    if p_noise == 0.0 {
        return Err(Error::config("noise is silent at the reference microphone"));
    }
    let gain = (p_speech / (p_noise * 10f64.powf(spec.snr_db / 10.0))).sqrt();
    Ok(raw * gain)
}
