use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use lstd_core::datagen::{export_dataset, generate_series, import_dataset, SyntheticDataset};
use lstd_core::evaluation::{identifiability_report, intervention_windows, InterventionSummary};
use lstd_core::io::{load_csv, CsvOptions};
use lstd_core::model::LstdModel;
use lstd_core::online::{run, LstdForecaster, Persistence, ProtocolOptions, RunningNormalizer};
use lstd_core::{LstdError, Result};
use ndarray::Array2;
use serde::Serialize;
use serde_json::json;

use crate::config::{
    AblateArgs, Cli, Command, DataSource, EvaluateArgs, GenerateArgs, RunConfig, Term, TraceArgs, TrainArgs,
};
use crate::plot;

pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const TRACE_CSV_FILE: &str = "trace.csv";

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::TrainOnline(a) => train(&a, "train-online", None),
        Command::Ablate(a) => ablate(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Trace(a) => trace(&a),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> LstdError {
    LstdError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

/// Keys come out sorted, so reports diff cleanly.
fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let v = serde_json::to_value(value).map_err(|e| LstdError::Config(e.to_string()))?;
    let text = serde_json::to_string_pretty(&v).map_err(|e| LstdError::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let ds = generate_series(&a.to_config())?;
    export_dataset(&ds, &a.out)
}

fn load_stream(path: &Path) -> Result<(DataSource, Array2<f64>)> {
    if path.is_dir() {
        Ok((DataSource::Synthetic(path.to_path_buf()), import_dataset(path)?.x))
    } else {
        let table = load_csv(path, &CsvOptions::default())?;
        Ok((DataSource::Csv(path.to_path_buf()), table.values))
    }
}

fn load_synthetic(path: &Path) -> Result<SyntheticDataset> {
    if !path.is_dir() {
        return Err(LstdError::Config(format!(
            "{} is not a synthetic dataset directory",
            path.display()
        )));
    }
    import_dataset(path)
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let mut t = a.train.clone();
    match a.term {
        Term::Ls => t.gamma = 0.0,
        Term::Lm => t.alpha = 0.0,
        Term::Kl => t.beta = 0.0,
    }
    train(&t, "ablate", Some(a.term))
}

fn train(a: &TrainArgs, command: &'static str, ablated: Option<Term>) -> Result<()> {
    let (source, stream) = load_stream(&a.data)?;
    let model_config = a.model(stream.ncols());
    let options = ProtocolOptions {
        lookback: a.lookback,
        horizon: a.horizon,
        update_steps: a.update_steps,
        normalize: !a.raw,
    };
    let feasible = (stream.nrows() + 1).saturating_sub(a.horizon);
    let rounds = a.rounds.unwrap_or(feasible);
    let config = RunConfig {
        command,
        data: source,
        model: Some(model_config.clone()),
        weights: Some(a.weights()),
        optimizer: Some(a.optimizer()),
        update_steps: Some(a.update_steps),
        rounds: Some(rounds),
        normalize: options.normalize,
        seed: a.seed,
        ablated_term: ablated,
        out: a.out.clone(),
    };

    let model = LstdModel::<f64>::new(model_config)?;
    let mut forecaster = LstdForecaster::new(model, a.weights(), a.optimizer(), a.seed)?;
    create_dir(&a.out)?;
    let trace_path = a.out.join(TRACE_FILE);
    let mut trace = create(&trace_path)?;
    let (metrics, _) = run(stream.view(), &mut forecaster, options, rounds, Some(&mut trace))?;
    trace.flush().map_err(|e| io_err(&trace_path, e))?;

    let mut persistence = Persistence {
        steps: a.horizon - a.lookback,
    };
    let (baseline, _) = run(stream.view(), &mut persistence, options, rounds, None)?;

    forecaster.model.save(&a.out.join(CHECKPOINT_FILE))?;
    let report = json!({
        "config": config,
        "metrics": metrics,
        "baselines": { "persistence": { "mse": baseline.mse, "mae": baseline.mae } },
    });
    write_json(&a.out.join(REPORT_FILE), &report)?;
    if a.plot {
        plot::write_series(&a.out.join("round_mse.svg"), "per-round MSE", &metrics.round_mse)?;
    }
    Ok(())
}

/// Standardises with statistics of the whole series when asked.
fn prepare(x: &Array2<f64>, raw: bool) -> Option<RunningNormalizer> {
    if raw {
        return None;
    }
    let mut n = RunningNormalizer::new(x.ncols());
    for row in x.rows() {
        n.observe(row);
    }
    Some(n)
}

fn analysis_config(command: &'static str, data: &Path, raw: bool, out: &Path, model: &LstdModel<f64>) -> RunConfig {
    RunConfig {
        command,
        data: DataSource::Synthetic(data.to_path_buf()),
        model: Some(model.config.clone()),
        weights: None,
        optimizer: None,
        update_steps: None,
        rounds: None,
        normalize: !raw,
        seed: model.config.seed,
        ablated_term: None,
        out: out.to_path_buf(),
    }
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let model = LstdModel::<f64>::load(&a.checkpoint)?;
    let ds = load_synthetic(&a.data)?;
    let norm = prepare(&ds.x, a.raw);
    let report = identifiability_report(&model, &ds, norm.as_ref(), a.max_windows)?;
    create_dir(&a.out)?;
    let config = analysis_config("evaluate", &a.data, a.raw, &a.out, &model);
    write_json(&a.out.join(REPORT_FILE), &json!({ "config": config, "identifiability": report }))
}

fn trace(a: &TraceArgs) -> Result<()> {
    let model = LstdModel::<f64>::load(&a.checkpoint)?;
    let ds = load_synthetic(&a.data)?;
    let x = match prepare(&ds.x, a.raw) {
        Some(n) => n.apply(ds.x.view()),
        None => ds.x.clone(),
    };
    let windows = intervention_windows(&model, x.view(), &ds.mask, a.max_windows)?;
    create_dir(&a.out)?;
    let path = a.out.join(TRACE_FILE);
    let mut w = create(&path)?;
    for win in &windows {
        let line = serde_json::to_string(win).map_err(|e| LstdError::Config(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;

    // Entry k of a window's trace belongs to step start + k + 1.
    let csv_path = a.out.join(TRACE_CSV_FILE);
    let mut csv = create(&csv_path)?;
    writeln!(csv, "t,grad_l1").map_err(|e| io_err(&csv_path, e))?;
    for win in &windows {
        for (k, v) in win.trace.iter().enumerate() {
            writeln!(csv, "{},{v:?}", win.start + k + 1).map_err(|e| io_err(&csv_path, e))?;
        }
    }
    csv.flush().map_err(|e| io_err(&csv_path, e))?;

    let summary = InterventionSummary::from_windows(&windows);
    let config = analysis_config("trace", &a.data, a.raw, &a.out, &model);
    write_json(&a.out.join(REPORT_FILE), &json!({ "config": config, "summary": summary }))?;
    if a.plot {
        plot::write_series(&a.out.join("trace.svg"), "trace aligned at intervention", &plot::aligned_mean(&windows))?;
    }
    Ok(())
}
