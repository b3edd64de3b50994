use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mdd_core::baselines::{
    amplitude_spectrum, grid_oracle, ltm_segment_estimates, read_metrics_csv, scenario_report, sp_baseline,
    sp_segment_estimates, write_metrics_csv, write_summary, write_xy_csv, MetricRow, OracleGrids,
};
use mdd_core::dataset::{
    gen_bs_scenario, generate_splits, read_dataset, sha256_hex, write_dataset, BsScenarioSpec, DatasetManifest,
    DatasetSpec, LabeledSample,
};
use mdd_core::diff::{load_checkpoint, save_checkpoint};
use mdd_core::io::{read_manifest, read_phase_csv, write_echo_cube, write_manifest, write_series_csv, SimulationConfig};
use mdd_core::loss::ablation_variant;
use mdd_core::ltm::{forward, reconstruct, LtmConfig, Mode};
use mdd_core::phase::{extract_phase, DisplacementSeries};
use mdd_core::train::{evaluate, metrics_from, write_epoch_log, write_loss_log, EvalMetrics, TrainConfig};
use mdd_core::{Error, LtmParams, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::Common;

const TOOL_VERSION: &str = concat!("mdd/", env!("CARGO_PKG_VERSION"));
const CHECKPOINT_FILE: &str = "model.ckpt";
const METRICS_FILE: &str = "metrics.csv";

/// Provenance written next to every artifact set.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest<C> {
    tool: String,
    command: String,
    seed: Option<u64>,
    threads: Option<usize>,
    config: C,
    inputs: Vec<(String, String)>,
    files: Vec<(String, String)>,
}

fn hash_files(dir: &Path, names: &[&str]) -> Result<Vec<(String, String)>> {
    names
        .iter()
        .map(|n| Ok((n.to_string(), sha256_hex(&std::fs::read(dir.join(n))?))))
        .collect()
}

fn write_run_manifest<C: Serialize>(
    dir: &Path,
    command: &str,
    common: &Common,
    config: C,
    inputs: Vec<(String, String)>,
    files: &[&str],
) -> Result<()> {
    let manifest = RunManifest {
        tool: TOOL_VERSION.into(),
        command: command.into(),
        seed: common.seed,
        threads: common.threads,
        config,
        inputs,
        files: hash_files(dir, files)?,
    };
    write_manifest(dir, &manifest)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Data(format!("{what} `{}` is not a directory", path.display())))
    }
}

// ----- simulate -----

pub fn simulate(config_path: Option<&Path>, out: &Path, common: &Common) -> Result<()> {
    let mut cfg = config::load(SimulationConfig::default(), config_path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let cube = cfg.simulate()?;
    write_echo_cube(out, &cube, &cfg)?;
    let phase = extract_phase(&cube, None)?;
    let times: Vec<f64> = cube.frame_times_s.clone();
    write_series_csv(create(&out.join("phase.csv"))?, "phase_rad", &times, &phase.values_rad)?;
    println!("{}", serde_json::json!({ "frames": cube.frames, "out": out.display().to_string() }));
    Ok(())
}

// ----- gen-dataset -----

pub fn gen_dataset(spec_path: Option<&Path>, preset: &str, samples: Option<usize>, out: &Path, common: &Common) -> Result<()> {
    let mut spec = config::load(DatasetSpec::preset(preset)?, spec_path)?;
    if let Some(n) = samples {
        spec.samples = n;
        if spec.split_counts.is_some() {
            spec.split_counts = None;
        }
    }
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let splits = generate_splits(&spec)?;
    let manifest = write_dataset(out, &spec, &splits)?;
    println!(
        "{}",
        serde_json::json!({ "counts": manifest.counts, "content_hash": manifest.content_hash })
    );
    Ok(())
}

// ----- train -----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainFile {
    pub train: TrainConfig,
    pub model: LtmConfig,
    pub init_seed: u64,
}

impl Default for TrainFile {
    fn default() -> Self {
        Self { train: TrainConfig::default(), model: LtmConfig::default(), init_seed: 0 }
    }
}

pub struct TrainFlags {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub variant: Option<String>,
}

pub fn train(dataset: &Path, config_path: Option<&Path>, out: &Path, flags: &TrainFlags, common: &Common) -> Result<()> {
    let mut cfg = config::load(TrainFile::default(), config_path)?;
    if let Some(e) = flags.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = flags.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(v) = &flags.variant {
        cfg.train.loss.flags = ablation_variant(v)?;
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.init_seed = seed;
    }
    cfg.train.validate()?;
    require_dir(dataset, "dataset")?;
    let (data_manifest, splits) = read_dataset(dataset)?;
    let init = LtmParams::new(cfg.model.clone(), cfg.init_seed)?;
    let outcome = mdd_core::train::train(&init, &splits.train, &splits.val, &cfg.train)?;

    std::fs::create_dir_all(out)?;
    save_checkpoint(&outcome.params.store, out.join(CHECKPOINT_FILE))?;
    write_loss_log(create(&out.join("loss_log.csv"))?, &outcome.iterations)?;
    write_epoch_log(create(&out.join("epoch_log.csv"))?, &outcome.epochs)?;
    std::fs::write(out.join("architecture.txt"), outcome.params.manifest())?;
    write_run_manifest(
        out,
        "train",
        common,
        &cfg,
        vec![("dataset".into(), data_manifest.content_hash)],
        &[CHECKPOINT_FILE, "loss_log.csv", "epoch_log.csv", "architecture.txt"],
    )?;
    println!(
        "{}",
        serde_json::json!({ "best_epoch": outcome.best_epoch, "iterations": outcome.iterations.len() })
    );
    Ok(())
}

/// Checkpoint path and the architecture it was trained with.
fn load_model(ckpt: &Path) -> Result<(LtmParams, String)> {
    let (file, dir) = if ckpt.is_dir() {
        (ckpt.join(CHECKPOINT_FILE), Some(ckpt.to_path_buf()))
    } else {
        (ckpt.to_path_buf(), ckpt.parent().map(Path::to_path_buf))
    };
    if !file.is_file() {
        return Err(Error::Data(format!("checkpoint `{}` not found", file.display())));
    }
    let model = dir
        .and_then(|d| read_manifest::<RunManifest<TrainFile>>(&d).ok())
        .map(|m| m.config.model)
        .unwrap_or_default();
    let store = load_checkpoint::<f64>(&file)?;
    let hash = sha256_hex(&std::fs::read(&file)?);
    Ok((LtmParams::from_store(model, store)?, hash))
}

// ----- eval -----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalFile {
    pub split: String,
    pub baselines: Vec<String>,
    /// `None` skips the clutter scenario.
    pub scenario: Option<BsScenarioSpec>,
    pub grids: OracleGrids,
}

impl Default for EvalFile {
    fn default() -> Self {
        Self {
            split: "test".into(),
            baselines: Vec::new(),
            scenario: Some(BsScenarioSpec::default()),
            grids: OracleGrids::default(),
        }
    }
}

pub struct EvalFlags {
    pub baselines: Option<Vec<String>>,
    pub split: Option<String>,
    pub no_scenario: bool,
}

fn metric_rows(method: &str, m: &EvalMetrics) -> Vec<MetricRow> {
    vec![
        MetricRow::new(method, "samples", m.samples as f64),
        MetricRow::new(method, "bias_mae_m", m.bias_mae_m),
        MetricRow::new(method, "bias_rmse_m", m.bias_rmse_m),
        MetricRow::new(method, "freq_mae_hz", m.freq_mae_hz),
        MetricRow::new(method, "freq_hit_rate", m.freq_hit_rate),
        MetricRow::new(method, "failures", m.failures as f64),
    ]
}

fn label_series(s: &LabeledSample) -> DisplacementSeries<f64> {
    let l = &s.label;
    let rate = s.phase.frame_rate_hz;
    let w = std::f64::consts::TAU * l.frequency_hz;
    let values = (0..s.phase.len()).map(|i| l.bias_m + l.amplitude_m * (w * i as f64 / rate).sin()).collect();
    DisplacementSeries::new(values, rate)
}

fn fits_to_preds(fits: Vec<Result<(f64, f64)>>) -> Vec<(f64, f64, bool)> {
    fits.into_iter().map(|r| r.map_or((0.0, 0.0, true), |(b, f)| (b, f, false))).collect()
}

pub fn eval(ckpt: &Path, dataset: &Path, config_path: Option<&Path>, flags: &EvalFlags, out: &Path, common: &Common) -> Result<()> {
    let mut cfg = config::load(EvalFile::default(), config_path)?;
    if let Some(b) = &flags.baselines {
        cfg.baselines = b.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    }
    if let Some(s) = &flags.split {
        cfg.split = s.clone();
    }
    if flags.no_scenario {
        cfg.scenario = None;
    }
    if let (Some(seed), Some(sc)) = (common.seed, cfg.scenario.as_mut()) {
        sc.seed = seed;
    }
    for b in &cfg.baselines {
        if b != "sp" && b != "oracle" {
            return Err(Error::Config(format!("unknown baseline `{b}` (expected sp or oracle)")));
        }
    }
    let (params, ckpt_hash) = load_model(ckpt)?;
    require_dir(dataset, "dataset")?;
    let (data_manifest, splits): (DatasetManifest, _) = read_dataset(dataset)?;
    let set = match splits.named().iter().find(|(n, _)| *n == cfg.split) {
        Some((_, s)) => s.to_vec(),
        None => return Err(Error::Config(format!("unknown split `{}`", cfg.split))),
    };
    if set.is_empty() {
        return Err(Error::Data(format!("split `{}` is empty", cfg.split)));
    }
    let labels: Vec<_> = set.iter().map(|s| s.label).collect();

    let mut rows = metric_rows("ltm", &evaluate(&params, &set)?);
    let ltm_preds = mdd_core::train::predict(&params, &set);
    if cfg.baselines.iter().any(|b| b == "sp") {
        let fits = set
            .par_iter()
            .map(|s| sp_baseline(&s.phase, &cfg.grids).map(|e| (e.bias_m, e.frequency_hz)))
            .collect();
        rows.extend(metric_rows("sp", &metrics_from(&fits_to_preds(fits), &labels)));
    }
    if cfg.baselines.iter().any(|b| b == "oracle") {
        let fits = set
            .par_iter()
            .map(|s| grid_oracle(&label_series(s), &cfg.grids).map(|f| (f.bias_m, f.frequency_hz)))
            .collect();
        rows.extend(metric_rows("oracle", &metrics_from(&fits_to_preds(fits), &labels)));
    }

    std::fs::create_dir_all(out)?;
    let mut pw = create(&out.join("predictions.csv"))?;
    writeln!(pw, "bias_m,frequency_hz,ltm_bias_m,ltm_frequency_hz,failed")?;
    for (l, p) in labels.iter().zip(&ltm_preds) {
        writeln!(pw, "{},{},{},{},{}", l.bias_m, l.frequency_hz, p.0, p.1, u8::from(p.2))?;
    }
    pw.flush()?;
    let mut files = vec![METRICS_FILE, "predictions.csv"];

    if let Some(spec) = &cfg.scenario {
        let sc = gen_bs_scenario(spec)?;
        let estimates = ltm_segment_estimates(&params, &sc);
        let report = scenario_report(&sc, &estimates)?;
        rows.extend(report.rows("ltm"));
        if cfg.baselines.iter().any(|b| b == "sp") {
            rows.extend(scenario_report(&sc, &sp_segment_estimates(&sc, &cfg.grids))?.rows("sp"));
        }
        let n = spec.segment_frames;
        let fitted: Vec<f64> = estimates
            .iter()
            .flat_map(|&(b, f, _)| reconstruct(b, f, spec.alpha, n, spec.frame_rate_hz).values_m)
            .collect();
        let residual: Vec<f64> = sc.observed.values_m.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let times = sc.observed.times_s();
        write_series_csv(create(&out.join("scenario_reconstruction.csv"))?, "displacement_m", &times, &fitted)?;
        for (name, values) in [("scenario_reconstruction_spectrum.csv", &fitted), ("scenario_residual_spectrum.csv", &residual)] {
            let (freqs, amps) = amplitude_spectrum(values, spec.frame_rate_hz, 0);
            let keep = freqs.iter().take_while(|&&f| f <= 20.0).count();
            write_xy_csv(create(&out.join(name))?, "frequency_hz", "amplitude_m", &freqs[..keep], &amps[..keep])?;
        }
        files.extend(["scenario_reconstruction.csv", "scenario_reconstruction_spectrum.csv", "scenario_residual_spectrum.csv"]);
    }

    write_metrics_csv(create(&out.join(METRICS_FILE))?, &rows)?;
    write_run_manifest(
        out,
        "eval",
        common,
        &cfg,
        vec![("checkpoint".into(), ckpt_hash), ("dataset".into(), data_manifest.content_hash)],
        &files,
    )?;
    println!("{}", serde_json::json!({ "rows": rows.len(), "metrics": out.join(METRICS_FILE).display().to_string() }));
    Ok(())
}

// ----- infer -----

pub fn infer(ckpt: &Path, input: &Path, frame_rate_hz: f64, out: Option<&Path>, common: &Common) -> Result<()> {
    if !(frame_rate_hz > 0.0) {
        return Err(Error::Config("--frame-rate must be positive".into()));
    }
    let (params, ckpt_hash) = load_model(ckpt)?;
    let file = File::open(input).map_err(|e| Error::Data(format!("{}: {e}", input.display())))?;
    let wavelength = mdd_core::IsacConfig::default().phase_wavelength_m();
    let phase = read_phase_csv(file, frame_rate_hz, wavelength)?;
    let est = forward(&params, &phase, Mode::Infer)?;
    println!(
        "{}",
        serde_json::json!({ "bias_m": est.bias_m, "frequency_hz": est.frequency_hz, "frames": phase.len() })
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let times = est.reconstructed.times_s();
        write_series_csv(create(&dir.join("reconstruction.csv"))?, "displacement_m", &times, &est.reconstructed.values_m)?;
        let mut w = create(&dir.join("estimate.json"))?;
        serde_json::to_writer_pretty(&mut w, &serde_json::json!({ "bias_m": est.bias_m, "frequency_hz": est.frequency_hz }))?;
        w.flush()?;
        let input_hash = sha256_hex(&std::fs::read(input)?);
        write_run_manifest(
            dir,
            "infer",
            common,
            serde_json::json!({ "input": input.display().to_string(), "frame_rate_hz": phase.frame_rate_hz }),
            vec![("checkpoint".into(), ckpt_hash), ("input".into(), input_hash)],
            &["reconstruction.csv", "estimate.json"],
        )?;
    }
    Ok(())
}

// ----- report -----

pub fn report(input: &Path, out: &Path, common: &Common) -> Result<()> {
    let metrics_path: PathBuf = if input.is_dir() { input.join(METRICS_FILE) } else { input.to_path_buf() };
    let text = std::fs::read_to_string(&metrics_path)
        .map_err(|e| Error::Data(format!("{}: {e}", metrics_path.display())))?;
    let rows = read_metrics_csv(&text).map_err(|e| Error::Data(e.to_string()))?;
    write_summary(out, &rows)?;
    let mut md = create(&out.join("summary.md"))?;
    let mut methods: Vec<&str> = Vec::new();
    for r in &rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    writeln!(md, "| metric | {} |", methods.join(" | "))?;
    writeln!(md, "|---|{}", "---|".repeat(methods.len()))?;
    let mut metrics: Vec<&str> = Vec::new();
    for r in &rows {
        if !metrics.contains(&r.metric.as_str()) {
            metrics.push(&r.metric);
        }
    }
    for k in metrics {
        let cells: Vec<String> = methods
            .iter()
            .map(|m| rows.iter().find(|r| r.method == *m && r.metric == k).map_or(String::new(), |r| format!("{:.6}", r.value)))
            .collect();
        writeln!(md, "| {k} | {} |", cells.join(" | "))?;
    }
    md.flush()?;
    let input_hash = sha256_hex(text.as_bytes());
    write_run_manifest(
        out,
        "report",
        common,
        serde_json::json!({ "input": metrics_path.display().to_string() }),
        vec![("metrics".into(), input_hash)],
        &["summary.csv", "summary.md"],
    )?;
    Ok(())
}
