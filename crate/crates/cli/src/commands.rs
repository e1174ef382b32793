use std::fs;
use std::path::{Path, PathBuf};

use farfield::features::log_mel_features;
use farfield::metrics::{sdr_slices, snr_db, SdrReport};
use farfield::pipeline::{apply_override, run_pipeline, PipelineConfig};
use farfield::scene::{export_scene, render_scene, SceneConfig};
use farfield::wav::read_wav;
use farfield::{Error, Result, StftConfig};

use crate::{EnhanceArgs, EvaluateArgs, PipelineArgs, StageFlags};

pub fn set_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("--threads must be >= 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    log::warn!("built without the parallel feature; --threads {n} has no effect");
    Ok(())
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p)?)
}

fn read_table(path: Option<&Path>) -> Result<(toml::Table, PathBuf)> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((toml::from_str(&text)?, base))
        }
        None => Ok((toml::Table::new(), PathBuf::new())),
    }
}

fn set_path(table: &mut toml::Table, section: &str, key: &str, p: &Path) -> Result<()> {
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let t = entry
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{section}` is not a table")))?;
    t.remove("scene");
    t.remove("mixture");
    t.remove("spectrogram");
    t.insert(key.to_string(), toml::Value::String(absolute(p)?.display().to_string()));
    Ok(())
}

/// Applies the stage flags after the generic `--set` overrides.
fn apply_stage_flags(table: &mut toml::Table, flags: &StageFlags) -> Result<()> {
    for o in &flags.overrides {
        apply_override(table, o)?;
    }
    let mut set = |k: &str, v: String| apply_override(table, &format!("{k}={v}"));
    if let Some(v) = flags.taps {
        set("wpe.taps", v.to_string())?;
    }
    if let Some(v) = flags.delay {
        set("wpe.delay", v.to_string())?;
    }
    if let Some(v) = flags.iterations {
        set("wpe.iterations", v.to_string())?;
    }
    if let Some(v) = flags.context {
        set("wpe.context", v.to_string())?;
    }
    if let Some(v) = flags.noise_class {
        set("clustering.noise_class", v.to_string())?;
    }
    if let Some(v) = flags.seed {
        set("clustering.seed", v.to_string())?;
    }
    if flags.dump_intermediate {
        set("output.dump_intermediate", "true".into())?;
    }
    if flags.mask_png {
        set("output.mask_png", "true".into())?;
    }
    Ok(())
}

fn to_config(table: toml::Table) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = toml::Value::Table(table).try_into()?;
    cfg.validate()?;
    Ok(cfg)
}

fn run_and_write(cfg: &PipelineConfig, base: &Path, out: &Path) -> Result<()> {
    let mut run = run_pipeline(cfg, base)?;
    let files = run.write(out, &cfg.output)?;
    if let Some(r) = &run.report {
        print!("{}", r.to_table());
    }
    if run.passthrough {
        println!(
            "all stages disabled: passthrough of channel {}",
            cfg.beamformer.reference_channel
        );
    }
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

pub fn simulate(scene: &Path, out: &Path, overrides: &[String]) -> Result<()> {
    let (mut table, base) = read_table(Some(scene))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: SceneConfig = toml::Value::Table(table).try_into()?;
    let spec = cfg.to_spec(&base)?;
    let rendered = render_scene(&spec).map_err(|e| e.in_stage("simulate"))?;
    let mut description = cfg.describe();
    if cfg.snr_db.is_finite() {
        let mut reverberant = rendered.images[0].channel(0).to_vec();
        for img in &rendered.images[1..] {
            for (a, b) in reverberant.iter_mut().zip(img.channel(0)) {
                *a += b;
            }
        }
        let measured = snr_db(&reverberant, &rendered.noise.channel(0).to_vec())?;
        description.push_str(&format!("scene.measured_snr_db={measured:.6}\n"));
        println!("measured SNR at mic 0: {measured:.4} dB");
    }
    let files = export_scene(&rendered, &description, out).map_err(|e| e.in_stage("output"))?;
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

pub fn enhance(args: &EnhanceArgs) -> Result<()> {
    let (mut table, base) = read_table(args.config.as_deref())?;
    if let Some(p) = &args.mixture {
        set_path(&mut table, "input", "mixture", p)?;
    }
    if let Some(p) = &args.spectrogram {
        set_path(&mut table, "input", "spectrogram", p)?;
    }
    apply_override(&mut table, "stages.evaluate=false")?;
    apply_stage_flags(&mut table, &args.stages)?;
    let cfg = to_config(table)?;
    run_and_write(&cfg, &base, &args.out)
}

pub fn pipeline(args: &PipelineArgs) -> Result<()> {
    let (mut table, base) = read_table(Some(&args.config))?;
    apply_stage_flags(&mut table, &args.stages)?;
    let cfg = to_config(table)?;
    let out = match (&args.out, &cfg.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => {
            return Err(Error::Config(
                "no output directory: pass --out or set output_dir".into(),
            ))
        }
    };
    run_and_write(&cfg, &base, &out)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    if args.estimates.len() != args.references.len() {
        return Err(Error::Config(format!(
            "{} estimates but {} references",
            args.estimates.len(),
            args.references.len()
        )));
    }
    let mixture = args.mixture.as_ref().map(read_wav).transpose()?;
    let channel = |s: &farfield::TimeSignal, m: usize| -> Result<Vec<f64>> {
        let c = if s.num_channels() == 1 { 0 } else { m };
        if c >= s.num_channels() {
            return Err(Error::Config(format!("channel {m} out of range")));
        }
        Ok(s.channel(c).to_vec())
    };
    let mut report = SdrReport::default();
    let mut estimates = Vec::new();
    for (i, (e, r)) in args.estimates.iter().zip(&args.references).enumerate() {
        let est = read_wav(e)?;
        let reference = read_wav(r)?;
        if est.sample_rate() != reference.sample_rate() {
            return Err(Error::Config(format!(
                "estimate {i} and its reference differ in sample rate"
            )));
        }
        let score = sdr_slices(&est.channel(0).to_vec(), &channel(&reference, args.reference_channel)?)?;
        let input = match &mixture {
            Some(mix) => {
                let mut best = f64::NEG_INFINITY;
                for m in 0..mix.num_channels() {
                    best = best.max(sdr_slices(&mix.channel(m).to_vec(), &channel(&reference, m)?)?);
                }
                best
            }
            None => f64::NAN,
        };
        report.push(format!("source_{i}"), score, input);
        estimates.push(est);
    }
    print!("{}", report.to_table());
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("metrics.txt"), report.to_key_values())?;
        if let Some(v) = args.mel {
            for (i, est) in estimates.iter().enumerate() {
                let mono = est.select_channel(0)?;
                let feats = log_mel_features(&mono, &StftConfig::default(), v, true)?;
                feats.to_tensor().save(out.join(format!("features_{i}.fftn")))?;
            }
        }
    }
    Ok(())
}
