use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hierloc::dataset::{load_ujiindoorloc, normalize_rssi, split_train_val, FingerprintRecord, SplitDataset};
use hierloc::eval::{evaluate, EvalReport};
use hierloc::model::{
    load_encoder_into, load_model, pretrain, save_model, train_bf_stage, train_position_stage, HierLocModel, StageLog,
};
use hierloc::Matrix;
use serde::Serialize;

use crate::config::{EvalSplit, RunConfig};

pub const SWEEP_AXES: [&str; 4] = ["rnn_kind", "bf_dropout", "position_dropout", "batch_size"];
pub const SWEEP_HEADER: &str = "value,building_hit,floor_hit,bf_hit,err2d,err3d";

/// Configuration as embedded in artifacts. Output locations are left out so
/// identical runs written to different directories produce identical files.
fn echo(cfg: &RunConfig) -> Vec<(String, String)> {
    cfg.to_pairs()
        .into_iter()
        .filter(|(k, _)| k != "out_dir" && k != "model_file")
        .collect()
}

fn echo_map(cfg: &RunConfig) -> serde_json::Map<String, serde_json::Value> {
    echo(cfg).into_iter().map(|(k, v)| (k, serde_json::Value::String(v))).collect()
}

fn refuse_overwrite(paths: &[&Path], force: bool) -> Result<()> {
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            bail!("refusing to overwrite {} (pass --force to replace it)", p.display());
        }
    }
    Ok(())
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("cannot create {}", cfg.out_dir.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn load_records(path: &Path, cfg: &RunConfig) -> Result<Vec<FingerprintRecord>> {
    Ok(load_ujiindoorloc(path, &cfg.layout)?)
}

fn load_split(cfg: &RunConfig) -> Result<SplitDataset> {
    let records = load_records(cfg.require_train_file()?, cfg)?;
    Ok(split_train_val(records, cfg.train_ratio, cfg.params.seed, cfg.layout)?)
}

fn summarize(log: &StageLog) {
    eprintln!(
        "{}: {} epochs, best epoch {} (val loss {:.6})",
        log.stage,
        log.stop_epoch,
        log.best_epoch,
        log.val_loss.get(log.best_epoch.wrapping_sub(1)).copied().unwrap_or(f64::NAN)
    );
}

#[derive(Serialize)]
struct LogFile<'a> {
    config: serde_json::Map<String, serde_json::Value>,
    stages: Vec<&'a StageLog>,
}

pub fn cmd_pretrain(cfg: &RunConfig, force: bool) -> Result<()> {
    let model_path = cfg.out_dir.join("encoder.hloc");
    let log_path = cfg.out_dir.join("pretrain_log.json");
    let cfg_path = cfg.out_dir.join("pretrain.cfg");
    refuse_overwrite(&[&model_path, &log_path, &cfg_path], force)?;
    let split = load_split(cfg)?;
    let mut model = HierLocModel::new(cfg.params.clone(), split.meta)?;
    let log = pretrain(&mut model, &split)?;
    summarize(&log);
    prepare_out_dir(cfg)?;
    save_model(&model, &model_path)?;
    write(&cfg_path, cfg.to_file_text())?;
    write(
        &log_path,
        to_json(&LogFile {
            config: echo_map(cfg),
            stages: vec![&log],
        })?,
    )
}

/// Runs every training stage for `cfg` and returns the model with its logs.
pub fn train_pipeline(cfg: &RunConfig, split: &SplitDataset) -> Result<(HierLocModel, Vec<StageLog>)> {
    let mut model = HierLocModel::new(cfg.params.clone(), split.meta)?;
    let mut logs = Vec::new();
    match &cfg.encoder_file {
        Some(enc) => load_encoder_into(&mut model, enc)?,
        None => logs.push(pretrain(&mut model, split)?),
    }
    logs.push(train_bf_stage(&mut model, split)?);
    logs.push(train_position_stage(&mut model, split)?);
    Ok((model, logs))
}

pub fn cmd_train(cfg: &RunConfig, force: bool) -> Result<()> {
    let model_path = cfg.model_path();
    let log_path = cfg.out_dir.join("train_log.json");
    let cfg_path = cfg.out_dir.join("train.cfg");
    refuse_overwrite(&[&model_path, &log_path, &cfg_path], force)?;
    let split = load_split(cfg)?;
    let (model, logs) = train_pipeline(cfg, &split)?;
    logs.iter().for_each(summarize);
    prepare_out_dir(cfg)?;
    save_model(&model, &model_path)?;
    write(&cfg_path, cfg.to_file_text())?;
    write(
        &log_path,
        to_json(&LogFile {
            config: echo_map(cfg),
            stages: logs.iter().collect(),
        })?,
    )
}

fn eval_records(cfg: &RunConfig) -> Result<Vec<FingerprintRecord>> {
    Ok(match cfg.eval_split {
        EvalSplit::Test => load_records(cfg.require_test_file()?, cfg)?,
        EvalSplit::Validation => load_split(cfg)?.validation,
        EvalSplit::Train => load_split(cfg)?.train,
    })
}

#[derive(Serialize)]
struct ReportFile<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    run_config: serde_json::Map<String, serde_json::Value>,
}

pub fn cmd_evaluate(cfg: &RunConfig, force: bool) -> Result<()> {
    let json_path = cfg.out_dir.join("report.json");
    let text_path = cfg.out_dir.join("report.txt");
    let csv_path = cfg.out_dir.join("errors.csv");
    refuse_overwrite(&[&json_path, &text_path, &csv_path], force)?;
    let model_path = cfg.model_path();
    let model = load_model(&model_path).with_context(|| format!("cannot load model {}", model_path.display()))?;
    if model.meta.layout != cfg.layout {
        bail!(
            "model layout {:?} does not match configured data layout {:?}",
            model.meta.layout,
            cfg.layout
        );
    }
    let records = eval_records(cfg)?;
    let report = evaluate(&model, &records, cfg.penalties)?;
    prepare_out_dir(cfg)?;
    write(
        &json_path,
        to_json(&ReportFile {
            report: &report,
            run_config: echo_map(cfg),
        })?,
    )?;
    let mut text = report.to_text();
    text.push_str("run configuration:\n");
    for (k, v) in echo(cfg) {
        text.push_str(&format!("  {k:<22} {v}\n"));
    }
    write(&text_path, text)?;
    report.write_errors_csv(&csv_path)?;
    print!("{}", report.to_text());
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub value: String,
    pub repetition: usize,
    pub seed: u64,
    pub building_hit: f64,
    pub floor_hit: f64,
    pub bf_hit: f64,
    pub err2d: f64,
    pub err3d: f64,
}

#[derive(Serialize)]
struct SweepFile<'a> {
    axis: &'a str,
    values: &'a [String],
    repetitions: usize,
    config: serde_json::Map<String, serde_json::Value>,
    runs: &'a [SweepResult],
}

/// Trains and evaluates one pipeline per value and repetition. Repetition
/// `r` uses seed `seed + r`; each CSV row holds the mean over repetitions.
pub fn cmd_sweep(cfg: &RunConfig, axis: &str, values: &[String], reps: usize, force: bool) -> Result<()> {
    if !SWEEP_AXES.contains(&axis) {
        bail!("unknown sweep axis `{axis}`, expected one of {}", SWEEP_AXES.join(", "));
    }
    if values.is_empty() {
        bail!("the sweep needs at least one value");
    }
    if reps == 0 {
        bail!("the sweep needs at least one repetition");
    }
    for v in values {
        let mut c = cfg.clone();
        c.set(axis, v).with_context(|| format!("invalid sweep value `{v}` for {axis}"))?;
        c.validate().with_context(|| format!("invalid sweep value `{v}` for {axis}"))?;
    }
    let csv_path = cfg.out_dir.join(format!("sweep_{axis}.csv"));
    let json_path = cfg.out_dir.join(format!("sweep_{axis}.json"));
    refuse_overwrite(&[&csv_path, &json_path], force)?;

    let train_records = load_records(cfg.require_train_file()?, cfg)?;
    let test_records = match cfg.eval_split {
        EvalSplit::Test => Some(load_records(cfg.require_test_file()?, cfg)?),
        _ => None,
    };
    let mut runs = Vec::new();
    let mut csv = format!("{SWEEP_HEADER}\n");
    for v in values {
        let mut acc = [0.0; 5];
        for r in 0..reps {
            let mut c = cfg.clone();
            c.set(axis, v)?;
            c.params.seed = cfg.params.seed.wrapping_add(r as u64);
            let split = split_train_val(train_records.clone(), c.train_ratio, c.params.seed, c.layout)?;
            let (model, _) = train_pipeline(&c, &split)?;
            let records = match c.eval_split {
                EvalSplit::Test => test_records.as_deref().expect("loaded above"),
                EvalSplit::Validation => &split.validation,
                EvalSplit::Train => &split.train,
            };
            let rep = evaluate(&model, records, c.penalties)?;
            let m = [
                rep.building_hit_rate,
                rep.floor_hit_rate,
                rep.building_floor_hit_rate,
                rep.mean_2d_error,
                rep.mean_3d_error,
            ];
            eprintln!("{axis}={v} rep {r}: {m:?}");
            for (a, x) in acc.iter_mut().zip(m) {
                *a += x;
            }
            runs.push(SweepResult {
                value: v.trim().to_string(),
                repetition: r,
                seed: c.params.seed,
                building_hit: m[0],
                floor_hit: m[1],
                bf_hit: m[2],
                err2d: m[3],
                err3d: m[4],
            });
        }
        let mean: Vec<String> = acc.iter().map(|a| (a / reps as f64).to_string()).collect();
        csv.push_str(&format!("{},{}\n", v.trim(), mean.join(",")));
    }
    prepare_out_dir(cfg)?;
    write(&csv_path, &csv)?;
    write(
        &json_path,
        to_json(&SweepFile {
            axis,
            values,
            repetitions: reps,
            config: echo_map(cfg),
            runs: &runs,
        })?,
    )?;
    print!("{csv}");
    Ok(())
}

/// Reads raw RSSI rows (comma-separated, one fingerprint per line; an optional
/// `WAP...` header line is skipped) and writes `building,floor,x,y` per row.
pub fn cmd_predict(cfg: &RunConfig, input: Option<&PathBuf>, out: &mut impl Write) -> Result<()> {
    let model_path = cfg.model_path();
    let model = load_model(&model_path).with_context(|| format!("cannot load model {}", model_path.display()))?;
    let reader: Box<dyn BufRead> = match input {
        Some(p) => Box::new(std::io::BufReader::new(
            std::fs::File::open(p).with_context(|| format!("cannot open {}", p.display()))?,
        )),
        None => Box::new(std::io::stdin().lock()),
    };
    let width = model.meta.ap_count();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line.context("cannot read input")?;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("WAP")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            bail!("row {}: expected {width} RSSI values, got {}", i + 1, fields.len());
        }
        for f in fields {
            let v: f64 = f.parse().ok().with_context(|| format!("row {}: `{f}` is not a number", i + 1))?;
            data.push(normalize_rssi(v));
        }
        rows += 1;
    }
    if rows == 0 {
        return Ok(());
    }
    let preds = model.predict(&Matrix::from_vec(rows, width, data)?)?;
    for p in preds {
        writeln!(out, "{},{},{},{}", p.building_id, p.floor, p.x, p.y)?;
    }
    Ok(())
}
