//! WAV input/output (RIFF, little-endian). Reads 16/24/32-bit PCM and
//! 32-bit float; PCM is normalized to ±1.0 full scale. Writes 32-bit float
//! unless asked for 16-bit PCM.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::TimeSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WavEncoding {
    #[default]
    Float32,
    Pcm16,
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<TimeSignal> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err(path))?,
        SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err(path))?
        }
    };
    if channels == 0 {
        return Err(Error::Empty(format!("{}: no channels", path.display())));
    }
    let frames = interleaved.len() / channels;
    let samples = Array2::from_shape_fn((channels, frames), |(c, n)| interleaved[n * channels + c]);
    TimeSignal::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, signal: &TimeSignal, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let (bits, fmt) = match encoding {
        WavEncoding::Float32 => (32, SampleFormat::Float),
        WavEncoding::Pcm16 => (16, SampleFormat::Int),
    };
    let spec = WavSpec {
        channels: signal.num_channels() as u16,
        sample_rate: signal.sample_rate(),
        bits_per_sample: bits,
        sample_format: fmt,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err(path))?;
    let s = signal.samples();
    for n in 0..signal.len() {
        for c in 0..signal.num_channels() {
            let x = s[[c, n]];
            match encoding {
                WavEncoding::Float32 => writer.write_sample(x as f32),
                WavEncoding::Pcm16 => {
                    let q = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)
                }
            }
            .map_err(wav_err(path))?;
        }
    }
    writer.finalize().map_err(wav_err(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let ch0: Vec<f64> = (0..100).map(|i| ((i as f32) * 0.01).sin() as f64).collect();
        let ch1: Vec<f64> = ch0.iter().map(|x| -x * 0.5).collect();
        let sig = TimeSignal::from_channels(vec![ch0, ch1], 8000).unwrap();
        write_wav(&p, &sig, WavEncoding::Float32).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back, sig);
    }

    #[test]
    fn pcm16_is_normalized_to_full_scale() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let sig = TimeSignal::mono(vec![0.5, -1.0, 0.25, 0.0], 16000).unwrap();
        write_wav(&p, &sig, WavEncoding::Pcm16).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.channel(0).to_vec(), vec![0.5, -1.0, 0.25, 0.0]);
        assert_eq!(back.sample_rate(), 16000);
    }
}
