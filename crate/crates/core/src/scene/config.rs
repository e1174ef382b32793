//! TOML scene descriptions and scene export.
//!
//! ```toml
//! sample_rate = 16000
//! seed = 7
//! snr_db = 5.0            # `inf` disables noise
//! early_boundary_ms = 50.0
//! mics = [[3.0, 2.0, 1.5], [3.05, 2.0, 1.5]]
//!
//! [room]
//! dimensions = [6.0, 5.0, 3.0]
//! t60 = 0.3
//!
//! [[sources]]
//! position = [1.5, 3.5, 1.5]
//! synth = { duration_s = 4.0 }    # or: wav = "speaker0.wav"
//!
//! [noise]
//! kind = "white_gaussian"         # or: kind = "wav", path = "noise.wav"
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::render::{NoiseSpec, Scene, SceneSpec};
use super::room::RoomSpec;
use super::synth::speech_like;
use crate::error::{Error, Result};
use crate::wav::{read_wav, write_wav, WavEncoding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default = "default_boundary")]
    pub early_boundary_ms: f64,
    pub room: RoomSpec,
    pub mics: Vec<[f64; 3]>,
    pub sources: Vec<SourceConfig>,
    #[serde(default)]
    pub noise: NoiseConfig,
}

fn default_sample_rate() -> u32 {
    16000
}
fn default_snr() -> f64 {
    f64::INFINITY
}
fn default_boundary() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub position: [f64; 3],
    #[serde(default)]
    pub wav: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub duration_s: f64,
    /// Defaults to the scene seed plus the source index.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    WhiteGaussian,
    Wav,
}

/// Seed used for the noise generator, derived from the scene seed.
pub fn noise_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x6E_6F69_7365
}

impl SceneConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Loads or synthesizes every signal. Relative WAV paths are taken
    /// relative to `base_dir`.
    pub fn to_spec(&self, base_dir: &Path) -> Result<SceneSpec> {
        let resolve = |p: &Path| -> PathBuf {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        let mut signals = Vec::with_capacity(self.sources.len());
        for (i, src) in self.sources.iter().enumerate() {
            let sig = match (&src.wav, &src.synth) {
                (Some(p), None) => {
                    let s = read_wav(resolve(p))?;
                    if s.num_channels() != 1 {
                        s.select_channel(0)?
                    } else {
                        s
                    }
                }
                (None, Some(syn)) => speech_like(
                    syn.duration_s,
                    self.sample_rate,
                    syn.seed.unwrap_or(self.seed.wrapping_add(i as u64)),
                )?,
                _ => {
                    return Err(Error::config(format!(
                        "source {i}: exactly one of `wav` or `synth` is required"
                    )))
                }
            };
            signals.push(sig);
        }
        let noise = match self.noise.kind {
            NoiseKind::WhiteGaussian => NoiseSpec::WhiteGaussian {
                seed: noise_seed(self.seed),
            },
            NoiseKind::Wav => {
                let p = self
                    .noise
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::config("noise kind `wav` needs `path`"))?;
                NoiseSpec::Signal(read_wav(resolve(p))?)
            }
        };
        let spec = SceneSpec {
            room: self.room,
            mic_positions: self.mics.clone(),
            source_positions: self.sources.iter().map(|s| s.position).collect(),
            source_signals: signals,
            noise,
            snr_db: self.snr_db,
            sample_rate: self.sample_rate,
            early_boundary_ms: self.early_boundary_ms,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Flat `key=value` description of every parameter.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scene.sample_rate={}", self.sample_rate);
        let _ = writeln!(s, "scene.seed={}", self.seed);
        let _ = writeln!(s, "scene.noise_seed={}", noise_seed(self.seed));
        let _ = writeln!(s, "scene.snr_db={}", self.snr_db);
        let _ = writeln!(s, "scene.early_boundary_ms={}", self.early_boundary_ms);
        let _ = writeln!(s, "scene.room.dimensions={:?}", self.room.dimensions);
        let _ = writeln!(s, "scene.room.t60={}", self.room.t60);
        let _ = writeln!(s, "scene.room.speed_of_sound={}", self.room.speed_of_sound);
        let _ = writeln!(
            s,
            "scene.room.reflection_coefficient={}",
            self.room.reflection_coefficient()
        );
        match self.room.max_image_order {
            Some(o) => {
                let _ = writeln!(s, "scene.room.max_image_order={o}");
            }
            None => {
                let _ = writeln!(s, "scene.room.max_image_order=auto");
            }
        }
        for (m, p) in self.mics.iter().enumerate() {
            let _ = writeln!(s, "scene.mic.{m}={p:?}");
        }
        for (i, src) in self.sources.iter().enumerate() {
            let _ = writeln!(s, "scene.source.{i}.position={:?}", src.position);
            if let Some(p) = &src.wav {
                let _ = writeln!(s, "scene.source.{i}.wav={}", p.display());
            }
            if let Some(syn) = &src.synth {
                let _ = writeln!(s, "scene.source.{i}.synth.duration_s={}", syn.duration_s);
                let _ = writeln!(
                    s,
                    "scene.source.{i}.synth.seed={}",
                    syn.seed.unwrap_or(self.seed.wrapping_add(i as u64))
                );
            }
        }
        let _ = writeln!(
            s,
            "scene.noise.kind={}",
            match self.noise.kind {
                NoiseKind::WhiteGaussian => "white_gaussian",
                NoiseKind::Wav => "wav",
            }
        );
        if let Some(p) = &self.noise.path {
            let _ = writeln!(s, "scene.noise.path={}", p.display());
        }
        s
    }
}

/// File names written by [`export_scene`].
pub fn scene_file_names(num_sources: usize) -> Vec<String> {
    let mut v = vec!["mixture.wav".to_string(), "noise.wav".to_string()];
    for i in 0..num_sources {
        v.push(format!("dry_{i}.wav"));
        v.push(format!("image_{i}.wav"));
        v.push(format!("early_{i}.wav"));
        v.push(format!("late_{i}.wav"));
    }
    v.push("manifest.txt".to_string());
    v
}

/// Writes the scene as float-32 WAVs plus `manifest.txt`; returns the paths
/// written.
pub fn export_scene(scene: &Scene, description: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, sig: &crate::TimeSignal| -> Result<()> {
        let p = dir.join(name);
        write_wav(&p, sig, WavEncoding::Float32)?;
        written.push(p);
        Ok(())
    };
    put("mixture.wav".into(), &scene.mixture)?;
    put("noise.wav".into(), &scene.noise)?;
    for i in 0..scene.num_sources() {
        put(format!("dry_{i}.wav"), &scene.sources[i])?;
        put(format!("image_{i}.wav"), &scene.images[i])?;
        put(format!("early_{i}.wav"), &scene.early[i])?;
        put(format!("late_{i}.wav"), &scene.late[i])?;
    }
    let mut manifest = String::from(description);
    let _ = writeln!(manifest, "scene.num_sources={}", scene.num_sources());
    let _ = writeln!(manifest, "scene.num_mics={}", scene.mixture.num_channels());
    let _ = writeln!(manifest, "scene.num_samples={}", scene.mixture.len());
    let _ = writeln!(manifest, "scene.air_length={}", scene.airs.dim().2);
    let p = dir.join("manifest.txt");
    fs::write(&p, manifest)?;
    written.push(p);
    Ok(written)
}
