use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beamform::BeamformerConfig;
use crate::error::{Error, Result};
use crate::masks::CacgmmConfig;
use crate::stft::{StftConfig, WindowKind};
use crate::wav::WavEncoding;
use crate::wpe::WpeConfig;

/// Full pipeline description.
///
/// ```toml
/// [input]
/// scene = "scene.toml"        # or: mixture = "mix.wav", or: spectrogram = "wpe_output.fftn"
///
/// [stages]
/// wpe = true
/// masks = "clustering"        # "oracle" | "clustering" | "none"
/// beamformer = true
///
/// [wpe]
/// taps = 10
///
/// [clustering]
/// num_classes = 3
/// seed = 7
///
/// [beamformer]
/// kind = "mvdr_rtf"           # or "gev"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub input: InputConfig,
    #[serde(default = "default_stft")]
    pub stft: StftConfig,
    #[serde(default)]
    pub stages: StageConfig,
    #[serde(default)]
    pub wpe: WpeConfig,
    #[serde(default)]
    pub clustering: CacgmmConfig,
    #[serde(default)]
    pub beamformer: BeamformerConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// 64 ms sqrt-Hann frames with a 16 ms advance.
pub fn default_stft() -> StftConfig {
    StftConfig::new(1024, 256).with_window(WindowKind::SqrtHann)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// Scene description to render; provides ground truth.
    #[serde(default)]
    pub scene: Option<PathBuf>,
    /// Multi-channel mixture WAV.
    #[serde(default)]
    pub mixture: Option<PathBuf>,
    /// Spectrogram tensor from an earlier run (for example `wpe_output.fftn`).
    #[serde(default)]
    pub spectrogram: Option<PathBuf>,
    /// Per-source reference WAVs for scoring (mono, or one channel per mic).
    #[serde(default)]
    pub references: Vec<PathBuf>,
    /// Per-class multi-channel WAVs for oracle masks, noise class last.
    #[serde(default)]
    pub class_references: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskStage {
    Oracle,
    #[default]
    Clustering,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskInput {
    #[default]
    Dereverberated,
    Observation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub wpe: bool,
    pub masks: MaskStage,
    pub beamformer: bool,
    /// Spectrogram the clustering stage sees.
    pub mask_input: MaskInput,
    pub evaluate: bool,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            wpe: true,
            masks: MaskStage::Clustering,
            beamformer: true,
            mask_input: MaskInput::Dereverberated,
            evaluate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dump_intermediate: bool,
    pub mask_png: bool,
    pub wav_encoding: WavEncoding,
}

/// Sets a dotted key in a TOML tree, creating tables as needed. The value
/// is parsed as TOML and taken as a string if that fails.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::config(format!("override `{assignment}` has an empty key")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl PipelineConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative input paths resolve against its
    /// directory, which is returned alongside.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_toml(&text, overrides)?, base))
    }

    pub fn validate(&self) -> Result<()> {
        let inputs = [&self.input.scene, &self.input.mixture, &self.input.spectrogram]
            .iter()
            .filter(|p| p.is_some())
            .count();
        if inputs != 1 {
            return Err(Error::config(
                "exactly one of input.scene, input.mixture, input.spectrogram is required",
            ));
        }
        self.stft.validate()?;
        if self.stages.wpe {
            self.wpe.validate()?;
        }
        if self.stages.masks == MaskStage::Oracle
            && self.input.scene.is_none()
            && self.input.class_references.is_empty()
        {
            return Err(Error::config(
                "oracle masks need ground truth: input.scene or input.class_references",
            ));
        }
        if self.stages.masks == MaskStage::Clustering && self.clustering.iterations == 0 {
            return Err(Error::config("clustering.iterations must be >= 1"));
        }
        if self.stages.beamformer && self.stages.masks == MaskStage::None {
            return Err(Error::config("the beamformer needs masks (stages.masks)"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Flattens a TOML tree into sorted `dotted.key=value` pairs.
pub fn flatten_toml(value: &toml::Value, prefix: &str, out: &mut Vec<(String, String)>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_toml(v, &key, out);
            }
        }
        toml::Value::String(s) => out.push((prefix.to_string(), s.clone())),
        v => out.push((prefix.to_string(), v.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        [input]
        mixture = "mix.wav"
    "#;

    #[test]
    fn defaults_fill_in() {
        let cfg = PipelineConfig::from_toml(BASE, &[]).unwrap();
        assert_eq!(cfg.stft, default_stft());
        assert!(cfg.stages.wpe && cfg.stages.beamformer);
        assert_eq!(cfg.wpe.taps, 10);
        assert_eq!(cfg.clustering.iterations, 20);
    }

    #[test]
    fn dotted_overrides() {
        let cfg = PipelineConfig::from_toml(
            BASE,
            &[
                "wpe.taps=4".into(),
                "stages.masks=none".into(),
                "stages.beamformer=false".into(),
                "beamformer.kind=\"gev\"".into(),
                "clustering.noise_class=1".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.wpe.taps, 4);
        assert_eq!(cfg.stages.masks, MaskStage::None);
        assert_eq!(cfg.beamformer.kind, crate::beamform::BeamformerKind::Gev);
        assert_eq!(cfg.clustering.noise_class, Some(1));
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        assert!(PipelineConfig::from_toml(BASE, &["wpe.tapz=3".into()])
            .unwrap_err()
            .is_config());
        assert!(PipelineConfig::from_toml(BASE, &["wpe.taps=0".into()])
            .unwrap_err()
            .is_config());
        assert!(PipelineConfig::from_toml(BASE, &["stages.masks=oracle".into()])
            .unwrap_err()
            .is_config());
        assert!(PipelineConfig::from_toml(BASE, &["stages.masks=none".into()])
            .unwrap_err()
            .is_config());
        assert!(PipelineConfig::from_toml("[input]\n", &[]).unwrap_err().is_config());
        assert!(PipelineConfig::from_toml(BASE, &["noequals".into()])
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = PipelineConfig::from_toml(BASE, &["clustering.seed=9".into()]).unwrap();
        let again = PipelineConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(cfg, again);
        let mut flat = Vec::new();
        flatten_toml(&toml::from_str::<toml::Value>(&cfg.to_toml()).unwrap(), "", &mut flat);
        assert!(flat.contains(&("clustering.seed".to_string(), "9".to_string())));
    }
}
