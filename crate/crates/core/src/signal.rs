use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// A multi-channel sampled waveform, `channels × samples`, full scale ±1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl TimeSignal {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::Empty("signal has no channels".into()));
        }
        if sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("time signal".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn from_channels(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        let m = channels.len();
        if m == 0 {
            return Err(Error::Empty("signal has no channels".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::shape("channels differ in length"));
        }
        let flat: Vec<f64> = channels.into_iter().flatten().collect();
        let samples = Array2::from_shape_vec((m, len), flat).expect("shape checked");
        Self::new(samples, sample_rate)
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::from_channels(vec![samples], sample_rate)
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(Array2::zeros((channels, len)), sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, f64> {
        self.samples.index_axis(Axis(0), c)
    }

    /// Single-channel signal holding channel `c`.
    pub fn select_channel(&self, c: usize) -> Result<TimeSignal> {
        if c >= self.num_channels() {
            return Err(Error::shape(format!(
                "channel {c} out of range for {}-channel signal",
                self.num_channels()
            )));
        }
        let ch = self.channel(c).to_owned().insert_axis(Axis(0));
        Ok(TimeSignal {
            samples: ch,
            sample_rate: self.sample_rate,
        })
    }

    /// Mean power of channel `c`.
    pub fn power(&self, c: usize) -> f64 {
        let ch = self.channel(c);
        if ch.is_empty() {
            return 0.0;
        }
        ch.iter().map(|x| x * x).sum::<f64>() / ch.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}
