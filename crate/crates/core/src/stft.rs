//! Short-time Fourier analysis and overlap-add synthesis.
//!
//! Signals are reflect-padded by `window_length - shift` samples at both ends
//! so that every original sample is covered by the full complement of
//! windows. Synthesis divides by the summed analysis·synthesis window, which
//! makes `istft(stft(x)) == x` for any window whose overlap sum never
//! vanishes, and in particular for the sqrt-Hann pair.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::signal::TimeSignal;
use crate::tensor_io::{Tensor, TensorData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    SqrtHann,
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn name(self) -> &'static str {
        match self {
            WindowKind::SqrtHann => "sqrt_hann",
            WindowKind::Hann => "hann",
            WindowKind::Rectangular => "rectangular",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sqrt_hann" => Some(WindowKind::SqrtHann),
            "hann" => Some(WindowKind::Hann),
            "rectangular" => Some(WindowKind::Rectangular),
            _ => None,
        }
    }

    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let hann = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                match self {
                    WindowKind::SqrtHann => hann.sqrt(),
                    WindowKind::Hann => hann,
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub window_length: usize,
    pub shift: usize,
    pub window: WindowKind,
    pub fft_size: usize,
}

impl Default for StftConfig {
    /// 32 ms window, 8 ms shift at 16 kHz.
    fn default() -> Self {
        Self {
            window_length: 512,
            shift: 128,
            window: WindowKind::SqrtHann,
            fft_size: 512,
        }
    }
}

impl StftConfig {
    pub fn new(window_length: usize, shift: usize) -> Self {
        Self {
            window_length,
            shift,
            window: WindowKind::SqrtHann,
            fft_size: window_length,
        }
    }

    pub fn with_window(mut self, window: WindowKind) -> Self {
        self.window = window;
        self
    }

    pub fn with_fft_size(mut self, fft_size: usize) -> Self {
        self.fft_size = fft_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let StftConfig {
            window_length: wl,
            shift,
            fft_size,
            ..
        } = *self;
        if shift == 0 || shift > wl {
            return Err(Error::config(format!(
                "stft shift {shift} must be in 1..={wl} (window length)"
            )));
        }
        if wl > fft_size {
            return Err(Error::config(format!(
                "fft size {fft_size} smaller than window length {wl}"
            )));
        }
        if wl % shift != 0 || wl / shift < 2 {
            return Err(Error::config(format!(
                "window length {wl} must be an integer multiple (>= 2) of the shift {shift}"
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Reflect padding applied at each end of the signal.
    pub fn pad(&self) -> usize {
        self.window_length - self.shift
    }

    /// Frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        (len + self.pad()).div_ceil(self.shift)
    }

    /// Largest signal length that yields `frames` frames.
    pub fn max_samples_for_frames(&self, frames: usize) -> usize {
        (frames * self.shift).saturating_sub(self.pad())
    }

    pub fn bin_frequency(&self, bin: usize, sample_rate: u32) -> f64 {
        bin as f64 * sample_rate as f64 / self.fft_size as f64
    }
}

/// Complex STFT tensor indexed `[frame, bin, channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    data: Array3<Complex64>,
    config: StftConfig,
    sample_rate: u32,
    num_samples: usize,
}

impl ComplexSpectrogram {
    /// Wraps raw STFT data. The original signal length defaults to the
    /// largest length consistent with the frame count.
    pub fn new(data: Array3<Complex64>, config: StftConfig, sample_rate: u32) -> Result<Self> {
        config.validate()?;
        let (t, f, m) = data.dim();
        if f != config.num_bins() {
            return Err(Error::shape(format!(
                "spectrogram has {f} bins, fft size {} implies {}",
                config.fft_size,
                config.num_bins()
            )));
        }
        if m == 0 {
            return Err(Error::Empty("spectrogram has no channels".into()));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram".into()));
        }
        Ok(Self {
            data,
            config,
            sample_rate,
            num_samples: config.max_samples_for_frames(t),
        })
    }

    pub fn with_num_samples(mut self, num_samples: usize) -> Result<Self> {
        if self.config.num_frames(num_samples) != self.num_frames() {
            return Err(Error::shape(format!(
                "{num_samples} samples inconsistent with {} frames",
                self.num_frames()
            )));
        }
        self.num_samples = num_samples;
        Ok(self)
    }

    /// Same metadata, new data of identical frame/bin layout.
    pub fn with_data(&self, data: Array3<Complex64>) -> Result<Self> {
        let (t, f, _) = data.dim();
        if t != self.num_frames() || f != self.num_bins() {
            return Err(Error::shape("replacement data has a different frame/bin layout"));
        }
        let mut out = Self::new(data, self.config, self.sample_rate)?;
        out.num_samples = self.num_samples;
        Ok(out)
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<Complex64> {
        self.data
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn num_bins(&self) -> usize {
        self.data.dim().1
    }

    pub fn num_channels(&self) -> usize {
        self.data.dim().2
    }

    /// `[frame, channel]` slice at one frequency bin.
    pub fn bin(&self, f: usize) -> ArrayView2<'_, Complex64> {
        self.data.index_axis(Axis(1), f)
    }

    pub fn select_channel(&self, c: usize) -> Result<Self> {
        if c >= self.num_channels() {
            return Err(Error::shape(format!("channel {c} out of range")));
        }
        let data = self.data.slice(ndarray::s![.., .., c..c + 1]).to_owned();
        self.with_data(data)
    }

    /// Sum of squared magnitudes over channels, `[frame, bin]`.
    pub fn power(&self) -> Array2<f64> {
        self.data.map_axis(Axis(2), |v| v.iter().map(|z| z.norm_sqr()).sum())
    }

    pub fn to_tensor(&self) -> Tensor {
        let (t, f, m) = self.data.dim();
        let flat: Vec<Complex64> = self.data.iter().copied().collect();
        Tensor::new(vec![t, f, m], TensorData::C64(flat))
            .expect("dims match payload")
            .with_meta("kind", "spectrogram")
            .with_meta("sample_rate", self.sample_rate)
            .with_meta("num_samples", self.num_samples)
            .with_meta("window_length", self.config.window_length)
            .with_meta("shift", self.config.shift)
            .with_meta("fft_size", self.config.fft_size)
            .with_meta("window", self.config.window.name())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            t.meta_value(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::TensorFormat(format!("spectrogram tensor lacks `{k}`")))
        };
        let window = t
            .meta_value("window")
            .and_then(WindowKind::parse)
            .ok_or_else(|| Error::TensorFormat("spectrogram tensor lacks `window`".into()))?;
        let config = StftConfig {
            window_length: get("window_length")?,
            shift: get("shift")?,
            window,
            fft_size: get("fft_size")?,
        };
        let TensorData::C64(values) = &t.data else {
            return Err(Error::TensorFormat("spectrogram tensor must be complex f64".into()));
        };
        let [tt, f, m] = t.dims[..] else {
            return Err(Error::TensorFormat("spectrogram tensor must be 3-D".into()));
        };
        let data =
            Array3::from_shape_vec((tt, f, m), values.clone()).map_err(|e| Error::TensorFormat(e.to_string()))?;
        Self::new(data, config, get("sample_rate")? as u32)?.with_num_samples(get("num_samples")?)
    }
}

fn reflect_index(j: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let r = j.rem_euclid(period);
    if r < len as isize {
        r as usize
    } else {
        (period - r) as usize
    }
}

fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_forward(n)
}

/// Multi-channel STFT; output is `[frame, bin, channel]`.
pub fn stft(signal: &TimeSignal, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if signal.is_empty() {
        return Err(Error::Empty("cannot transform an empty signal".into()));
    }
    let len = signal.len();
    let m = signal.num_channels();
    let frames = cfg.num_frames(len);
    let bins = cfg.num_bins();
    let pad = cfg.pad() as isize;
    let padded_len = (frames - 1) * cfg.shift + cfg.window_length;
    let padded: Vec<Vec<f64>> = (0..m)
        .map(|c| {
            let ch = signal.channel(c);
            (0..padded_len)
                .map(|i| ch[reflect_index(i as isize - pad, len)])
                .collect()
        })
        .collect();
    let window = cfg.window.coefficients(cfg.window_length);
    let fft = forward_plan(cfg.fft_size);

    let per_frame = par::map_indices(frames, |t| {
        let start = t * cfg.shift;
        let mut buf = vec![Complex64::default(); cfg.fft_size];
        let mut out = Vec::with_capacity(bins * m);
        let mut rows = vec![vec![Complex64::default(); bins]; m];
        for (c, row) in rows.iter_mut().enumerate() {
            buf.iter_mut().for_each(|z| *z = Complex64::default());
            for (n, w) in window.iter().enumerate() {
                buf[n] = Complex64::new(padded[c][start + n] * w, 0.0);
            }
            fft.process(&mut buf);
            row.copy_from_slice(&buf[..bins]);
        }
        for f in 0..bins {
            for row in &rows {
                out.push(row[f]);
            }
        }
        out
    });
    let flat: Vec<Complex64> = per_frame.into_iter().flatten().collect();
    let data = Array3::from_shape_vec((frames, bins, m), flat).expect("frame layout");
    ComplexSpectrogram::new(data, *cfg, signal.sample_rate())?.with_num_samples(len)
}

/// Overlap-add inverse of [`stft`], trimmed back to the original length.
pub fn istft(spec: &ComplexSpectrogram) -> Result<TimeSignal> {
    let cfg = *spec.config();
    cfg.validate()?;
    let (frames, bins, m) = spec.data().dim();
    if bins != cfg.num_bins() {
        return Err(Error::shape("bin count does not match fft size"));
    }
    let n_fft = cfg.fft_size;
    let wl = cfg.window_length;
    let window = cfg.window.coefficients(wl);
    let inverse = FftPlanner::new().plan_fft_inverse(n_fft);
    let data = spec.data();

    // time-domain windowed frames, [frame][channel][sample]
    let segments = par::map_indices(frames, |t| {
        let mut buf = vec![Complex64::default(); n_fft];
        (0..m)
            .map(|c| {
                for k in 0..bins {
                    buf[k] = data[[t, k, c]];
                }
                for k in bins..n_fft {
                    buf[k] = data[[t, n_fft - k, c]].conj();
                }
                inverse.process(&mut buf);
                (0..wl)
                    .map(|n| buf[n].re / n_fft as f64 * window[n])
                    .collect::<Vec<f64>>()
            })
            .collect::<Vec<_>>()
    });

    let total = (frames.max(1) - 1) * cfg.shift + wl;
    let mut acc = Array2::<f64>::zeros((m, total));
    let mut norm = vec![0.0; total];
    for (t, seg) in segments.iter().enumerate() {
        let start = t * cfg.shift;
        for n in 0..wl {
            norm[start + n] += window[n] * window[n];
        }
        for (c, s) in seg.iter().enumerate() {
            for n in 0..wl {
                acc[[c, start + n]] += s[n];
            }
        }
    }
    let pad = cfg.pad();
    let len = spec.num_samples();
    let out = Array2::from_shape_fn((m, len), |(c, n)| {
        let i = n + pad;
        if i < total && norm[i] > 1e-10 {
            acc[[c, i]] / norm[i]
        } else {
            0.0
        }
    });
    TimeSignal::new(out, spec.sample_rate())
}
