//! Deterministic speech-like test sources.
//!
//! The generator produces syllable-sized bursts separated by pauses. Voiced
//! bursts are a gliding glottal pulse train shaped by three formant
//! resonators; unvoiced bursts are band-limited noise. The result is sparse
//! in time and frequency and has a time-varying spectral envelope, which is
//! what the dereverberation and clustering stages rely on. Content below
//! 100 Hz is removed, as in recorded speech.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::signal::TimeSignal;

struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, fs: f64) -> Self {
        let r = (-PI * bandwidth / fs).exp();
        let theta = 2.0 * PI * freq / fs;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            gain: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn retune(&mut self, freq: f64, bandwidth: f64, fs: f64) {
        let r = (-PI * bandwidth / fs).exp();
        self.a1 = 2.0 * r * (2.0 * PI * freq / fs).cos();
        self.a2 = -r * r;
        self.gain = 1.0 - r;
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Second-order Butterworth high-pass, applied in place.
fn highpass(x: &mut [f64], cutoff: f64, fs: f64) {
    let w = 2.0 * PI * cutoff / fs;
    let alpha = w.sin() / std::f64::consts::SQRT_2;
    let cos = w.cos();
    let a0 = 1.0 + alpha;
    let b = [(1.0 + cos) / 2.0 / a0, -(1.0 + cos) / a0, (1.0 + cos) / 2.0 / a0];
    let a = [-2.0 * cos / a0, (1.0 - alpha) / a0];
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let y = b[0] * *v + b[1] * x1 + b[2] * x2 - a[0] * y1 - a[1] * y2;
        x2 = x1;
        x1 = *v;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Mono speech-like signal of `duration_s` seconds, peak-normalized to 0.5.
pub fn speech_like(duration_s: f64, sample_rate: u32, seed: u64) -> Result<TimeSignal> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::config("synthetic source duration must be positive"));
    }
    let fs = sample_rate as f64;
    let n = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n];
    let mut pos = (rng.random_range(0.02..0.08) * fs) as usize;

    while pos < n {
        let syl_len = (rng.random_range(0.12..0.35) * fs) as usize;
        let end = (pos + syl_len).min(n);
        let voiced = rng.random_bool(0.8);
        let ramp = (0.02 * fs) as usize;
        let envelope = |i: usize, len: usize| -> f64 {
            let a = if i < ramp {
                0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            let j = len - 1 - i;
            let d = if j < ramp {
                0.5 - 0.5 * (PI * j as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            a * d
        };
        let len = end - pos;
        let level: f64 = rng.random_range(0.4..1.0);
        if voiced {
            let f0_start = rng.random_range(90.0..220.0);
            let f0_end = f0_start * rng.random_range(0.8..1.25);
            let formants: Vec<(f64, f64, f64)> =
                [(300.0, 800.0, 80.0), (900.0, 2300.0, 120.0), (2400.0, 3300.0, 180.0)]
                    .iter()
                    .map(|&(lo, hi, bw)| (rng.random_range(lo..hi), rng.random_range(lo..hi), bw))
                    .collect();
            let mut res: Vec<Resonator> = formants.iter().map(|&(f, _, b)| Resonator::new(f, b, fs)).collect();
            let mut phase = rng.random_range(0.0..1.0);
            let mut period_scale = 1.0;
            let mut pulse_gain = 1.0;
            let mut tilt = 0.0;
            for i in 0..len {
                let frac = i as f64 / len as f64;
                if i % 32 == 0 {
                    for (r, &(fa, fb, bw)) in res.iter_mut().zip(&formants) {
                        r.retune(fa + (fb - fa) * frac, bw, fs);
                    }
                }
                let f0 = f0_start + (f0_end - f0_start) * frac;
                phase += f0 / fs / period_scale;
                let mut e = if phase >= 1.0 {
                    phase -= 1.0;
                    let g = pulse_gain;
                    // cycle-to-cycle jitter and shimmer
                    period_scale = 1.0 + 0.04 * rng.sample::<f64, _>(StandardNormal);
                    pulse_gain = (1.0 + 0.25 * rng.sample::<f64, _>(StandardNormal)).max(0.2);
                    g
                } else {
                    0.0
                };
                e += 0.08 * rng.sample::<f64, _>(StandardNormal);
                tilt = 0.7 * tilt + e;
                let y = res.iter_mut().fold(tilt, |acc, r| acc + r.process(tilt) * 4.0);
                out[pos + i] += level * envelope(i, len) * y;
            }
        } else {
            let mut r = Resonator::new(rng.random_range(2500.0..5000.0), 1500.0, fs);
            for i in 0..len {
                let e: f64 = rng.sample(StandardNormal);
                out[pos + i] += 0.3 * level * envelope(i, len) * r.process(e) * 4.0;
            }
        }
        let pause = (rng.random_range(0.06..0.25) * fs) as usize;
        pos = end + pause;
    }

    highpass(&mut out, 100.0, fs);
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|x| *x *= 0.5 / peak);
    }
    TimeSignal::mono(out, sample_rate)
}
