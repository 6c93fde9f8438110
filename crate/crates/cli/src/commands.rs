use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use koopflow::data::{synthetic_system, Dataset, SyntheticConfig};
use koopflow::metrics;
use koopflow::predictor::LinearPredictor;
use koopflow::training::{self, TrainError};
use serde::Serialize;

use crate::config::{Mode, RunConfig};
use crate::error::CliError;
use crate::{Split, VERSION};

/// Where a rollout starts.
pub enum Start {
    State(Vec<f64>),
    /// Dataset path and demo index.
    Demo(PathBuf, usize),
}

/// Length of a rollout.
pub enum Span {
    Seconds(f64),
    DemoMultiple(f64),
}

/// Rollout errors of one demonstration, in scaled units.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub demo: String,
    pub rmse: f64,
    pub dtwd: f64,
    pub pcm: f64,
}

#[derive(Serialize)]
struct DatasetSummary<'a> {
    name: &'a str,
    d: usize,
    n_demos: usize,
    samples: usize,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    version: &'a str,
    command: Vec<String>,
    config: &'a RunConfig,
    seed: u64,
    mode: Mode,
    dataset: DatasetSummary<'a>,
    best_epoch: usize,
    best_rmse: f64,
    outputs: Vec<&'a str>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn describe(path: Option<&Path>) -> String {
    path.map_or_else(|| "stdout".to_string(), |p| p.display().to_string())
}

fn csv_error(path: Option<&Path>, e: csv::Error) -> CliError {
    CliError::Io(format!("{}: {e}", describe(path)))
}

fn load_dataset(path: &Path, resample: Option<usize>) -> Result<Dataset, CliError> {
    let raw = Dataset::load_csv(path)?;
    Ok(match resample {
        Some(n) => raw.resample(n)?,
        None => raw,
    })
}

fn check_dim(model: &LinearPredictor, dataset: &Dataset) -> Result<(), CliError> {
    if model.dim() != dataset.dim {
        return Err(CliError::Config(format!("model has dimension {}, dataset has {}", model.dim(), dataset.dim)));
    }
    Ok(())
}

/// Rolls out from each demo's first sample at the demo's timestamps and
/// scores the rollout against it. `scaled` must be in the model's units.
pub fn score(model: &LinearPredictor, scaled: &Dataset) -> Result<Vec<Score>, CliError> {
    check_dim(model, scaled)?;
    scaled
        .demos
        .iter()
        .map(|d| {
            let pred = model.simulate_scaled(&d.pos[0], &d.relative_times())?;
            Ok(Score {
                demo: d.id.clone(),
                rmse: metrics::rmse(&pred, &d.pos)?,
                dtwd: metrics::dtwd(&pred, &d.pos)?,
                pcm: metrics::pcm(&pred, &d.pos)?,
            })
        })
        .collect()
}

/// Writes `shape,demo,metric,raw,normalized` rows. Each metric is min-max
/// normalized across the demos; a single demo normalizes to 0.
pub fn write_scores<W: Write>(writer: W, shape: &str, scores: &[Score]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["shape", "demo", "metric", "raw", "normalized"])?;
    type Column = (&'static str, fn(&Score) -> f64);
    let columns: [Column; 3] = [("rmse", |s| s.rmse), ("dtwd", |s| s.dtwd), ("pcm", |s| s.pcm)];
    for (name, get) in columns {
        let raw: Vec<f64> = scores.iter().map(get).collect();
        let normalized = metrics::normalize_scores(&raw).unwrap_or_else(|_| vec![0.0; raw.len()]);
        for ((s, r), n) in scores.iter().zip(&raw).zip(&normalized) {
            w.write_record([shape, &s.demo, name, &r.to_string(), &n.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn mean(scores: &[Score], get: fn(&Score) -> f64) -> f64 {
    scores.iter().map(get).sum::<f64>() / scores.len() as f64
}

fn summary(scores: &[Score]) -> String {
    format!(
        "{} demos: mean rmse {:.4e}, dtwd {:.4e}, pcm {:.4e}",
        scores.len(),
        mean(scores, |s| s.rmse),
        mean(scores, |s| s.dtwd),
        mean(scores, |s| s.pcm)
    )
}

pub fn train(config_path: &Path, quiet: bool) -> Result<(), CliError> {
    let config = RunConfig::load(config_path)?;
    let data = load_dataset(&config.dataset, config.resample)?;
    let (train_raw, val_raw) = match config.mode {
        Mode::Imitation => (data, None),
        Mode::Validation => {
            let (a, b) = data.split_train_val()?;
            (a, Some(b))
        }
    };
    let (train_set, record) = train_raw.preprocess(config.equilibrium.as_deref())?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let history_path = dir.join("history.csv");

    let total = config.train.epochs;
    let interval = config.train.selection_interval;
    let mut reported = 0;
    let result = training::train_with_observer(&train_set, &config.train, |step| {
        if !quiet && step.epoch != reported && (step.epoch % interval == 0 || step.epoch == 1) {
            reported = step.epoch;
            eprintln!("epoch {}/{total}: loss {:.6e}", step.epoch, step.loss.total);
        }
    });
    let outcome = match result {
        Ok(o) => o,
        Err(TrainError::Diverged { epoch, loss, history }) => {
            history.write_csv(&history_path).map_err(|e| CliError::io(&history_path, e))?;
            return Err(TrainError::Diverged { epoch, loss, history }.into());
        }
        Err(e) => return Err(e.into()),
    };
    outcome.history.write_csv(&history_path).map_err(|e| CliError::io(&history_path, e))?;
    let model_path = dir.join("model.json");
    outcome.model.save(&model_path)?;
    let mut outputs = vec!["model.json", "history.csv"];

    if let Some(val) = &val_raw {
        let scores = score(&outcome.model, &record.apply_dataset(val))?;
        let path = dir.join("validation_report.csv");
        write_scores(output(Some(&path))?, &val.name, &scores).map_err(|e| csv_error(Some(&path), e))?;
        outputs.push("validation_report.csv");
        if !quiet {
            eprintln!("validation: {}", summary(&scores));
        }
    }

    outputs.push("manifest.json");
    let manifest = RunManifest {
        version: VERSION,
        command: std::env::args().collect(),
        config: &config,
        seed: config.train.seed,
        mode: config.mode,
        dataset: DatasetSummary {
            name: &train_set.name,
            d: train_set.dim,
            n_demos: train_set.demos.len() + val_raw.as_ref().map_or(0, |v| v.demos.len()),
            samples: train_set.sample_count() + val_raw.as_ref().map_or(0, Dataset::sample_count),
        },
        best_epoch: outcome.best_epoch,
        best_rmse: outcome.best_rmse,
        outputs,
    };
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(&manifest_path, text + "\n").map_err(|e| CliError::io(&manifest_path, e))?;
    if !quiet {
        eprintln!(
            "best epoch {} with training rollout rmse {:.4e}; wrote {}",
            outcome.best_epoch,
            outcome.best_rmse,
            dir.display()
        );
    }
    Ok(())
}

pub fn simulate(model_path: &Path, start: Start, span: Span, samples: usize, out: Option<&Path>) -> Result<(), CliError> {
    let model = LinearPredictor::load(model_path)?;
    if samples < 2 {
        return Err(CliError::Config("samples must be at least 2".into()));
    }
    let (label, x0) = match start {
        Start::State(x) => ("from".to_string(), x),
        Start::Demo(path, k) => {
            let data = Dataset::load_csv(&path)?;
            check_dim(&model, &data)?;
            let demo = data.demos.get(k).ok_or_else(|| {
                CliError::Config(format!("demo {k} out of range; dataset has {}", data.demos.len()))
            })?;
            (demo.id.clone(), demo.pos[0].clone())
        }
    };
    let duration = match span {
        Span::Seconds(d) => d,
        Span::DemoMultiple(m) => {
            m * model.demo_time().ok_or_else(|| CliError::Config("model has no demo time; pass --duration".into()))?
        }
    };
    if !(duration.is_finite() && duration > 0.0) {
        return Err(CliError::Config(format!("duration must be positive, got {duration}")));
    }
    let times: Vec<f64> = (0..samples).map(|k| duration * k as f64 / (samples - 1) as f64).collect();
    let states = model.simulate(&x0, &times)?;

    let mut w = csv::Writer::from_writer(output(out)?);
    let mut header = vec!["demo".to_string(), "t".to_string()];
    header.extend((1..=model.dim()).map(|i| format!("x{i}")));
    header.push("in_demo_horizon".into());
    let write = |w: &mut csv::Writer<_>| -> Result<(), csv::Error> {
        w.write_record(&header)?;
        for (t, x) in times.iter().zip(&states) {
            let inside = model.demo_time().is_some_and(|d| *t <= d);
            let mut row = vec![label.clone(), t.to_string()];
            row.extend(x.iter().map(f64::to_string));
            row.push(u8::from(inside).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(|e| csv_error(out, e))
}

pub fn eval(
    model_path: &Path,
    dataset_path: &Path,
    split: Split,
    resample: Option<usize>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let model = LinearPredictor::load(model_path)?;
    let data = load_dataset(dataset_path, resample)?;
    let data = match split {
        Split::All => data,
        Split::Train => data.split_train_val()?.0,
        Split::Val => data.split_train_val()?.1,
    };
    let scores = score(&model, &model.scaling().apply_dataset(&data))?;
    write_scores(output(out)?, &data.name, &scores).map_err(|e| csv_error(out, e))?;
    eprintln!("{}: {}", data.name, summary(&scores));
    Ok(())
}

pub fn streamlines(model_path: &Path, grid: usize, out: Option<&Path>) -> Result<(), CliError> {
    let model = LinearPredictor::load(model_path)?;
    if model.dim() != 2 {
        return Err(CliError::Config(format!("streamlines need a planar model, got dimension {}", model.dim())));
    }
    if grid < 2 {
        return Err(CliError::Config("grid must be at least 2".into()));
    }
    let axis: Vec<f64> = (0..grid).map(|k| -1.0 + 2.0 * k as f64 / (grid - 1) as f64).collect();
    let mut rows = Vec::with_capacity(grid * grid);
    for &y in &axis {
        for &x in &axis {
            let v = model.vector_field_scaled(&[x, y])?;
            rows.push([x, y, v[0], v[1]]);
        }
    }
    let mut w = csv::Writer::from_writer(output(out)?);
    let write = |w: &mut csv::Writer<_>| -> Result<(), csv::Error> {
        w.write_record(["x1", "x2", "dx1", "dx2"])?;
        for r in &rows {
            w.write_record(r.iter().map(f64::to_string))?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(|e| csv_error(out, e))
}

pub fn synthetic(config: &SyntheticConfig, out: &Path, truth: Option<&Path>) -> Result<(), CliError> {
    let system = synthetic_system(config)?;
    system.dataset.write_csv(out)?;
    let truth_path = truth.map_or_else(|| out.with_extension("truth.json"), Path::to_path_buf);
    let text = system.truth.to_json()?;
    fs::write(&truth_path, text).map_err(|e| CliError::io(&truth_path, e))?;
    eprintln!(
        "wrote {} ({} demos of {} samples) and {}",
        out.display(),
        system.dataset.demos.len(),
        system.dataset.demos[0].len(),
        truth_path.display()
    );
    Ok(())
}
