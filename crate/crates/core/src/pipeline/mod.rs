//! End-to-end front-end: STFT, WPE, masks, beamforming, inverse STFT, and
//! scoring, driven by a [`PipelineConfig`].

mod config;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array3;
use num_complex::Complex64;

pub use config::{
    apply_override, default_stft, flatten_toml, InputConfig, MaskInput, MaskStage, OutputConfig, PipelineConfig,
    StageConfig,
};
pub use manifest::Manifest;

use crate::beamform::{beamform_class, BeamformerWeights};
use crate::error::{Error, Result};
use crate::masks::{cacgmm_em, ideal_binary_mask, MaskSet};
use crate::metrics::{sdr_slices, SdrReport};
use crate::scene::{noise_seed, render_scene, SceneConfig};
use crate::signal::TimeSignal;
use crate::stft::{istft, stft, ComplexSpectrogram};
use crate::tensor_io::{Tensor, TensorData};
use crate::wav::{read_wav, write_wav};
use crate::wpe::{wpe, WpeResult};

/// Ground truth used for oracle masks and scoring.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    /// Multi-channel mask classes, noise last.
    pub classes: Vec<TimeSignal>,
    /// Per-source references, mono or one channel per microphone.
    pub references: Vec<TimeSignal>,
}

/// Everything a run produced, kept in memory.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub observation: ComplexSpectrogram,
    /// Time-domain input used as the unprocessed baseline.
    pub input_signal: TimeSignal,
    pub wpe: Option<WpeResult>,
    pub masks: Option<MaskSet>,
    pub weights: Vec<BeamformerWeights>,
    pub enhanced_spectra: Vec<ComplexSpectrogram>,
    pub enhanced: Vec<TimeSignal>,
    pub report: Option<SdrReport>,
    /// `assignment[i]`: output scored against reference `i`.
    pub assignment: Vec<usize>,
    pub passthrough: bool,
    pub manifest: Manifest,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn timed<T>(manifest: &mut Manifest, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_stage(stage))?;
    manifest.push(
        format!("timing.{stage}_s"),
        format!("{:.6}", start.elapsed().as_secs_f64()),
    );
    Ok(out)
}

fn check_finite(spec: &ComplexSpectrogram, what: &str) -> Result<()> {
    if spec.data().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

/// Output `k` is the reference channel of `spec` weighted by mask `k`.
fn masked_reference(
    spec: &ComplexSpectrogram,
    mask: ndarray::ArrayView2<'_, f64>,
    ch: usize,
) -> Result<ComplexSpectrogram> {
    let (t, f, _) = spec.data().dim();
    let y = spec.data();
    let out = Array3::from_shape_fn((t, f, 1), |(ti, fi, _)| y[[ti, fi, ch]] * mask[[ti, fi]]);
    spec.with_data(out)
}

/// Best one-to-one assignment of outputs to references by summed SDR. With
/// fewer outputs than references each reference takes its best output.
fn assign_outputs(scores: &[Vec<f64>]) -> Vec<usize> {
    let n_ref = scores.len();
    let n_out = scores.first().map_or(0, Vec::len);
    if n_out < n_ref || n_out > 8 {
        return scores
            .iter()
            .map(|row| (0..n_out).fold(0, |b, k| if row[k] > row[b] { k } else { b }))
            .collect();
    }
    let mut best = Vec::new();
    let mut best_score = f64::NEG_INFINITY;
    let mut cur = Vec::with_capacity(n_ref);
    let mut used = vec![false; n_out];
    fn rec(
        scores: &[Vec<f64>],
        cur: &mut Vec<usize>,
        used: &mut [bool],
        acc: f64,
        best: &mut Vec<usize>,
        best_score: &mut f64,
    ) {
        if cur.len() == scores.len() {
            if acc > *best_score {
                *best_score = acc;
                best.clone_from(cur);
            }
            return;
        }
        let i = cur.len();
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                cur.push(k);
                rec(scores, cur, used, acc + scores[i][k], best, best_score);
                cur.pop();
                used[k] = false;
            }
        }
    }
    rec(scores, &mut cur, &mut used, 0.0, &mut best, &mut best_score);
    best
}

fn reference_channel(r: &TimeSignal, m: usize) -> Vec<f64> {
    r.channel(if r.num_channels() == 1 { 0 } else { m }).to_vec()
}

/// Scores every output against every reference. Input SDR is the best
/// unprocessed microphone.
fn evaluate(
    outputs: &[TimeSignal],
    input: &TimeSignal,
    references: &[TimeSignal],
    ref_channel: usize,
    identity: bool,
    manifest: &mut Manifest,
) -> Result<(SdrReport, Vec<usize>)> {
    for (i, r) in references.iter().enumerate() {
        if r.sample_rate() != input.sample_rate() {
            return Err(Error::config(format!(
                "reference {i} sample rate differs from the input"
            )));
        }
        if r.num_channels() != 1 && r.num_channels() != input.num_channels() {
            return Err(Error::config(format!(
                "reference {i} has {} channels, input has {}",
                r.num_channels(),
                input.num_channels()
            )));
        }
    }
    let targets: Vec<Vec<f64>> = references.iter().map(|r| reference_channel(r, ref_channel)).collect();
    let scores: Vec<Vec<f64>> = targets
        .iter()
        .map(|t| outputs.iter().map(|o| sdr_slices(&o.channel(0).to_vec(), t)).collect())
        .collect::<Result<_>>()?;
    let assignment = if identity && outputs.len() >= references.len() {
        (0..references.len()).collect()
    } else {
        assign_outputs(&scores)
    };
    let mut report = SdrReport::default();
    for (i, r) in references.iter().enumerate() {
        let mut input_sdr = f64::NEG_INFINITY;
        for m in 0..input.num_channels() {
            input_sdr = input_sdr.max(sdr_slices(&input.channel(m).to_vec(), &reference_channel(r, m))?);
        }
        report.push(format!("source_{i}"), scores[i][assignment[i]], input_sdr);
        manifest.push(format!("metric.source_{i}.output"), assignment[i]);
    }
    for e in &report.entries {
        manifest.push(format!("metric.{}.sdr_db", e.name), format!("{:.4}", e.sdr_db));
        manifest.push(
            format!("metric.{}.input_sdr_db", e.name),
            format!("{:.4}", e.input_sdr_db),
        );
        manifest.push(
            format!("metric.{}.improvement_db", e.name),
            format!("{:.4}", e.improvement_db()),
        );
    }
    if let Some(mean) = report.mean_improvement_db() {
        manifest.push("metric.mean_improvement_db", format!("{mean:.4}"));
    }
    Ok((report, assignment))
}

/// Runs every enabled stage in memory. Relative input paths resolve
/// against `base_dir`.
pub fn run_pipeline(cfg: &PipelineConfig, base_dir: &Path) -> Result<PipelineRun> {
    cfg.validate()?;
    let mut manifest = Manifest::default();
    let mut flat = Vec::new();
    flatten_toml(
        &toml::Value::try_from(cfg).map_err(|e| Error::config(e.to_string()))?,
        "",
        &mut flat,
    );
    for (k, v) in flat {
        manifest.push(format!("config.{k}"), v);
    }
    let stages = cfg.stages;
    let ref_ch = cfg.beamformer.reference_channel;

    let start = Instant::now();
    let (input_signal, input_spec, truth) =
        load_input(cfg, base_dir, &mut manifest).map_err(|e| e.in_stage("input"))?;
    manifest.push("timing.input_s", format!("{:.6}", start.elapsed().as_secs_f64()));
    if ref_ch >= input_signal.num_channels() {
        return Err(Error::config(format!(
            "reference channel {ref_ch} out of range for {} channels",
            input_signal.num_channels()
        ))
        .in_stage("input"));
    }

    let observation = match input_spec {
        Some(s) => s,
        None => timed(&mut manifest, "stft", || {
            let s = stft(&input_signal, &cfg.stft)?;
            check_finite(&s, "stft output")?;
            Ok(s)
        })?,
    };
    manifest.push("input.num_channels", observation.num_channels());
    manifest.push("input.num_frames", observation.num_frames());
    manifest.push("input.num_bins", observation.num_bins());
    manifest.push("input.num_samples", observation.num_samples());

    let wpe_result = if stages.wpe {
        let r = timed(&mut manifest, "wpe", || {
            let r = wpe(&observation, &cfg.wpe)?;
            check_finite(&r.dereverberated, "wpe output")?;
            Ok(r)
        })?;
        for (i, v) in r.objective.iter().enumerate() {
            manifest.push(format!("diag.wpe.objective.{i}"), format!("{v:.6e}"));
        }
        manifest.push("diag.wpe.passthrough_bins", r.passthrough_bins.len());
        Some(r)
    } else {
        None
    };
    let current = wpe_result.as_ref().map_or(&observation, |r| &r.dereverberated);

    let mut masks = None;
    match stages.masks {
        MaskStage::None => {}
        MaskStage::Oracle => {
            let m = timed(&mut manifest, "masks", || {
                let specs: Vec<ComplexSpectrogram> = truth
                    .classes
                    .iter()
                    .map(|c| stft(c, current.config()))
                    .collect::<Result<_>>()?;
                for (i, s) in specs.iter().enumerate() {
                    if s.data().dim() != current.data().dim() {
                        return Err(Error::shape(format!("class reference {i} does not match the input")));
                    }
                }
                ideal_binary_mask(&specs)
            })?;
            manifest.push("diag.masks.kind", "oracle");
            masks = Some(m);
        }
        MaskStage::Clustering => {
            let source = match stages.mask_input {
                MaskInput::Dereverberated => current,
                MaskInput::Observation => &observation,
            };
            let (m, state) = timed(&mut manifest, "masks", || cacgmm_em(source, &cfg.clustering))?;
            manifest.push("diag.masks.kind", "clustering");
            for (i, v) in state.log_likelihood.iter().enumerate() {
                manifest.push(format!("diag.cacgmm.log_likelihood.{i}"), format!("{v:.6e}"));
            }
            manifest.push("diag.cacgmm.degenerate_bins", state.degenerate_bins.len());
            if let Some(n) = state.noise_class {
                manifest.push("diag.cacgmm.noise_class", n);
            }
            masks = Some(m);
        }
    }
    if let Some(m) = &masks {
        manifest.push(
            "diag.masks.normalization_error",
            format!("{:.3e}", m.normalization_error()),
        );
    }

    let mut weights = Vec::new();
    let mut spectra = Vec::new();
    let passthrough = !stages.wpe && masks.is_none();
    match &masks {
        Some(m) if stages.beamformer => {
            let c = m.num_classes();
            let (w, s) = timed(&mut manifest, "beamform", || {
                let mut ws = Vec::new();
                let mut ss = Vec::new();
                for k in 0..c.saturating_sub(1).max(1) {
                    let others: Vec<usize> = (0..c).filter(|&j| j != k).collect();
                    let (w, out) = beamform_class(current, m, k, &others, &cfg.beamformer)?;
                    check_finite(&out, "beamformer output")?;
                    ws.push(w);
                    ss.push(out);
                }
                Ok((ws, ss))
            })?;
            weights = w;
            spectra = s;
        }
        Some(m) => {
            for k in 0..m.num_classes().saturating_sub(1).max(1) {
                spectra.push(masked_reference(current, m.class(k), ref_ch)?);
            }
        }
        None => spectra.push(current.select_channel(ref_ch)?),
    }
    manifest.push("diag.num_outputs", spectra.len());
    manifest.push("passthrough", passthrough);

    let enhanced = timed(&mut manifest, "istft", || {
        spectra.iter().map(istft).collect::<Result<Vec<_>>>()
    })?;

    let mut report = None;
    let mut assignment = Vec::new();
    if stages.evaluate && !truth.references.is_empty() {
        let identity = stages.masks == MaskStage::Oracle;
        let mut lines = Manifest::default();
        let (r, a) = timed(&mut manifest, "evaluate", || {
            evaluate(
                &enhanced,
                &input_signal,
                &truth.references,
                ref_ch,
                identity,
                &mut lines,
            )
        })?;
        manifest.extend(lines);
        report = Some(r);
        assignment = a;
    }

    Ok(PipelineRun {
        observation,
        input_signal,
        wpe: wpe_result,
        masks,
        weights,
        enhanced_spectra: spectra,
        enhanced,
        report,
        assignment,
        passthrough,
        manifest,
    })
}

fn load_input(
    cfg: &PipelineConfig,
    base: &Path,
    manifest: &mut Manifest,
) -> Result<(TimeSignal, Option<ComplexSpectrogram>, GroundTruth)> {
    let input = &cfg.input;
    let mut truth = GroundTruth::default();
    let (signal, spec) = if let Some(p) = &input.scene {
        let path = resolve(base, p);
        let scene_cfg = SceneConfig::load(&path)?;
        let scene_base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let scene = render_scene(&scene_cfg.to_spec(&scene_base)?)?;
        for line in scene_cfg.describe().lines() {
            if let Some((k, v)) = line.split_once('=') {
                manifest.push(k, v);
            }
        }
        manifest.push("seed.scene", scene_cfg.seed);
        manifest.push("seed.noise", noise_seed(scene_cfg.seed));
        truth.classes = scene.early.clone();
        truth.classes.push(scene.residual());
        truth.references = scene.early.clone();
        (scene.mixture, None)
    } else if let Some(p) = &input.mixture {
        (read_wav(resolve(base, p))?, None)
    } else if let Some(p) = &input.spectrogram {
        let spec = ComplexSpectrogram::from_tensor(&Tensor::load(resolve(base, p))?)?;
        (istft(&spec)?, Some(spec))
    } else {
        return Err(Error::config("no input configured"));
    };
    if !input.class_references.is_empty() {
        truth.classes = input
            .class_references
            .iter()
            .map(|p| read_wav(resolve(base, p)))
            .collect::<Result<_>>()?;
        for (i, c) in truth.classes.iter().enumerate() {
            if c.num_channels() != signal.num_channels() || c.sample_rate() != signal.sample_rate() {
                return Err(Error::config(format!(
                    "class reference {i} must match the input's channels and sample rate"
                )));
            }
        }
    }
    if !input.references.is_empty() {
        truth.references = input
            .references
            .iter()
            .map(|p| read_wav(resolve(base, p)))
            .collect::<Result<_>>()?;
    }
    if cfg.stages.masks == MaskStage::Clustering {
        manifest.push("seed.clustering", cfg.clustering.seed);
    }
    Ok((signal, spec, truth))
}

fn spectrogram_tensor(s: &ComplexSpectrogram) -> Tensor {
    s.to_tensor()
}

impl PipelineRun {
    /// Writes `enhanced_<k>.wav`, `metrics.txt`, `manifest.txt`, and, when
    /// asked, intermediate tensors and mask images. Returns the files
    /// written.
    pub fn write(&mut self, out_dir: &Path, output: &OutputConfig) -> Result<Vec<PathBuf>> {
        let start = Instant::now();
        let written = self
            .write_artifacts(out_dir, output)
            .map_err(|e| e.in_stage("output"))?;
        self.manifest
            .push("timing.output_s", format!("{:.6}", start.elapsed().as_secs_f64()));
        for (i, p) in written.iter().enumerate() {
            let name = p.strip_prefix(out_dir).unwrap_or(p);
            self.manifest.push(format!("artifact.{i}"), name.display());
        }
        let manifest_path = out_dir.join("manifest.txt");
        fs::write(&manifest_path, self.manifest.to_text()).map_err(|e| Error::from(e).in_stage("output"))?;
        let mut all = written;
        all.push(manifest_path);
        Ok(all)
    }

    fn write_artifacts(&self, dir: &Path, output: &OutputConfig) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (k, sig) in self.enhanced.iter().enumerate() {
            let p = dir.join(format!("enhanced_{k}.wav"));
            write_wav(&p, sig, output.wav_encoding)?;
            written.push(p);
        }
        let metrics = dir.join("metrics.txt");
        let mut text = String::new();
        if let Some(r) = &self.report {
            text.push_str(&r.to_key_values());
            if let Some(m) = r.mean_improvement_db() {
                text.push_str(&format!("mean_improvement_db={m:.4}\n"));
            }
        }
        fs::write(&metrics, text)?;
        written.push(metrics);

        let mut save = |name: &str, t: Tensor| -> Result<()> {
            let p = dir.join(name);
            t.save(&p)?;
            written.push(p);
            Ok(())
        };
        if output.dump_intermediate {
            save("stft_observation.fftn", spectrogram_tensor(&self.observation))?;
            if let Some(w) = &self.wpe {
                save("wpe_output.fftn", spectrogram_tensor(&w.dereverberated))?;
                let (f, mk, m) = w.filters.dim();
                save(
                    "wpe_filters.fftn",
                    Tensor::new(
                        vec![f, mk, m],
                        TensorData::C64(w.filters.iter().copied().collect::<Vec<Complex64>>()),
                    )?
                    .with_meta("kind", "wpe_filters")
                    .with_meta("taps", mk / m.max(1)),
                )?;
                let (t, f) = w.variances.dim();
                save(
                    "wpe_variances.fftn",
                    Tensor::new(vec![t, f], TensorData::F64(w.variances.iter().copied().collect()))?
                        .with_meta("kind", "wpe_variances"),
                )?;
            }
            if let Some(m) = &self.masks {
                save("masks.fftn", m.to_tensor())?;
            }
            for (k, w) in self.weights.iter().enumerate() {
                save(&format!("weights_{k}.fftn"), w.to_tensor())?;
            }
            for (k, s) in self.enhanced_spectra.iter().enumerate() {
                save(&format!("enhanced_{k}.fftn"), spectrogram_tensor(s))?;
            }
        }
        if output.mask_png {
            if let Some(m) = &self.masks {
                written.extend(m.save_png(&dir.join("masks"))?);
            }
        }
        Ok(written)
    }
}
