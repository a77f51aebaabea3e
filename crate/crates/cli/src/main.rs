//! `ptgc` — dataset generation, training, evaluation and closed-loop runs for
//! the delayed-teleoperation simulator.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde_json::Value;

use ptgc_core::config::{GlobalConfig, PredictorKind};
use ptgc_core::harness::datagen::{generate_dataset, window_params};
use ptgc_core::harness::{
    compute_run_metrics, experiment_batch, run_episode, CtraPredictor, Mode, Protocol, ScenarioConfig,
    TrajectoryPredictor,
};
use ptgc_core::par;
use ptgc_core::predictor::dataset::{read_dataset, split_indices, write_dataset, DatasetHeader};
use ptgc_core::predictor::eval::{evaluate, write_metrics_csv, HorizonMetrics, DEFAULT_HORIZONS_S};
use ptgc_core::predictor::train::{prepare, train};
use ptgc_core::predictor::{ctra_predict, DatasetRecord, ModelParams, Variant};
use ptgc_core::Error;

#[derive(Parser, Debug)]
#[command(name = "ptgc", version, about = "Delay-compensated teleoperation: data, training and experiments")]
struct Cli {
    /// JSON config file; missing keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set tracker.k=2` (repeatable; wins over --config).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Seed for every random stream of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores, 1 = single worker, bit-reproducible).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Drive zero-delay episodes with the scripted operator and write a dataset.
    GenData {
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model variant on the train/validation split of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        /// mc, m or c.
        #[arg(long, default_value = "mc")]
        mode: Variant,
        /// Per-epoch curve CSV (default: <model-out>.curve.csv).
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// ADE/FDE table on the test split for CTRA and any given models.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one episode and write its tick log.
    Run {
        /// dc or ptgc.
        #[arg(long)]
        mode: Mode,
        /// Round-trip delay in ms (default: delay.uplink_ms + delay.downlink_ms).
        #[arg(long)]
        delay: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        predictor: PredictorArgs,
    },
    /// Run the delay-level protocol and write results, summary and scores.
    Experiment {
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        predictor: PredictorArgs,
    },
}

#[derive(Args, Debug)]
struct PredictorArgs {
    /// Trained model used by PTGC runs.
    #[arg(long)]
    model: Option<PathBuf>,
    /// neural or ctra (default: experiment.predictor).
    #[arg(long)]
    predictor: Option<String>,
}

fn main() -> ExitCode {
    let cmd = Cli::command().after_long_help(config_help());
    let matches = match cmd.try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ptgc: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Shape(_) | Error::Json(_) => 3,
        Error::Io(_) | Error::Format { .. } => 4,
        Error::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => 4,
        _ => 5,
    }
}

fn config_help() -> String {
    let mut s = String::from("Config keys (JSON, dotted path = default):\n");
    for (k, v) in GlobalConfig::default().flattened() {
        s.push_str(&format!("  {k} = {v}\n"));
    }
    s
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<GlobalConfig, Error> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str::<Value>(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override '{item}' is not KEY=VALUE")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut doc, key, value)?;
    }
    GlobalConfig::from_json(&doc.to_string())
}

/// Writes `value` at a dotted path, creating intermediate objects. Unknown
/// keys are left for the typed config to reject.
fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<(), Error> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("'{key}' descends into a non-object")))?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::config("empty override key"))
}

fn execute(cli: Cli) -> Result<(), Error> {
    let mut g = load_config(cli.config.as_deref(), &cli.overrides)?;
    if let Some(w) = cli.workers {
        g.experiment.workers = w;
    }
    let seed = cli.seed.unwrap_or(0);
    if let Some(s) = cli.seed {
        g.experiment.seeds = vec![s];
    }
    let workers = g.experiment.workers;
    par::with_workers(workers, move || match cli.command {
        Command::GenData { episodes, out } => gen_data(&g, episodes, &out, seed),
        Command::Train {
            data,
            model_out,
            mode,
            curve,
        } => {
            let curve = curve.unwrap_or_else(|| with_suffix(&model_out, ".curve.csv"));
            train_cmd(&g, &data, &model_out, mode, &curve, seed)
        }
        Command::Eval { data, models, out } => eval_cmd(&g, &data, &models, out.as_deref(), seed),
        Command::Run {
            mode,
            delay,
            out,
            predictor,
        } => {
            let delay = delay.unwrap_or_else(|| g.delay.total_ms());
            run_cmd(&g, mode, delay, &out, &predictor, seed)
        }
        Command::Experiment { out_dir, predictor } => experiment_cmd(&g, &out_dir, &predictor),
    })
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn gen_data(g: &GlobalConfig, episodes: usize, out: &Path, seed: u64) -> Result<(), Error> {
    let ds = generate_dataset(g, episodes, seed)?;
    let window = window_params(g)?;
    // write to memory first so a failure never leaves a partial file
    let mut bytes = Vec::new();
    write_dataset(&mut bytes, &ds.records, &window, g.bev.grid)?;
    std::fs::write(out, &bytes)?;
    let n = ds.records.len();
    let (tr, va, te) = split_indices(n, seed);
    println!("records: {n}");
    println!("split (train/val/test): {}/{}/{}", tr.len(), va.len(), te.len());
    if ds.skipped_logs > 0 {
        println!("episodes too short for a window: {}", ds.skipped_logs);
    }
    Ok(())
}

fn load_records(g: &GlobalConfig, path: &Path) -> Result<(DatasetHeader, Vec<DatasetRecord>), Error> {
    let (header, records) = read_dataset(BufReader::new(File::open(path)?), &g.bev)?;
    let m = &g.pred.model;
    if header.history_len as usize != m.history_len || header.horizon as usize != m.horizon {
        return Err(Error::Shape(format!(
            "dataset windows are T_h={} T={}, config expects T_h={} T={}",
            header.history_len, header.horizon, m.history_len, m.horizon
        )));
    }
    if header.grid as usize != g.bev.grid {
        return Err(Error::Shape(format!(
            "dataset BEV grid {} does not match bev.grid {}",
            header.grid, g.bev.grid
        )));
    }
    Ok((header, records))
}

fn pick(records: &[DatasetRecord], idx: &[usize]) -> Vec<DatasetRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

fn train_cmd(g: &GlobalConfig, data: &Path, model_out: &Path, variant: Variant, curve: &Path, seed: u64) -> Result<(), Error> {
    let (_, records) = load_records(g, data)?;
    let (tr, va, _) = split_indices(records.len(), seed);
    let proto = ModelParams::init(g.pred.model.clone(), variant, g.bev.grid, seed)?;
    let train_set = prepare(&proto, &pick(&records, &tr))?;
    let val_set = prepare(&proto, &pick(&records, &va))?;
    drop(records);
    let out = train(g.pred.model.clone(), variant, g.bev.grid, &train_set, &val_set, &g.pred.train, seed)?;
    let mut w = create(model_out)?;
    out.model.save(&mut w)?;
    w.flush()?;
    out.write_curve_csv(create(curve)?)?;
    println!(
        "{}: {} parameters, initial loss {:.4}",
        variant.label(),
        out.model.num_params(),
        out.initial_train_loss
    );
    for e in &out.curve {
        println!(
            "epoch {:>3}  train {:.4}  val {:.4}  val ADE {:.3} m",
            e.epoch, e.train_loss, e.val_loss, e.val_ade
        );
    }
    println!("kept epoch {}", out.best_epoch);
    Ok(())
}

fn eval_cmd(g: &GlobalConfig, data: &Path, models: &[PathBuf], out: Option<&Path>, seed: u64) -> Result<(), Error> {
    let (header, records) = load_records(g, data)?;
    let (_, _, te) = split_indices(records.len(), seed);
    let test = pick(&records, &te);
    drop(records);
    let gts: Vec<Vec<[f64; 2]>> = test.iter().map(|r| r.future.clone()).collect();
    let dt = g.pred.dt_pred;
    let horizon = header.horizon as usize;

    let mut tables: Vec<(String, Vec<HorizonMetrics>)> = Vec::new();
    let ctra = test
        .iter()
        .map(|r| ctra_predict(&r.history, horizon, dt))
        .collect::<Result<Vec<_>, _>>()?;
    tables.push(("CTRA".into(), evaluate(&ctra, &gts, &DEFAULT_HORIZONS_S, dt)?));
    for path in models {
        let model = ModelParams::load(BufReader::new(File::open(path)?))?;
        let preds = test
            .iter()
            .map(|r| Ok(model.predict(&r.history, &r.bev)?.best().to_vec()))
            .collect::<Result<Vec<_>, Error>>()?;
        tables.push((model.variant.label().to_string(), evaluate(&preds, &gts, &DEFAULT_HORIZONS_S, dt)?));
    }

    println!("test records: {}", test.len());
    println!("{:<10} {:>6} {:>8} {:>8}", "model", "t (s)", "ADE (m)", "FDE (m)");
    for (name, rows) in &tables {
        for r in rows {
            println!("{:<10} {:>6.1} {:>8.3} {:>8.3}", name, r.horizon_s, r.ade, r.fde);
        }
    }
    if let Some(p) = out {
        write_metrics_csv(create(p)?, &tables)?;
    }
    Ok(())
}

fn load_predictor(g: &GlobalConfig, args: &PredictorArgs) -> Result<Box<dyn TrajectoryPredictor>, Error> {
    let kind = match args.predictor.as_deref() {
        None => g.experiment.predictor,
        Some("neural") => PredictorKind::Neural,
        Some("ctra") => PredictorKind::Ctra,
        Some(other) => return Err(Error::config(format!("unknown predictor '{other}' (neural, ctra)"))),
    };
    match kind {
        PredictorKind::Ctra => Ok(Box::new(CtraPredictor {
            history_len: g.pred.model.history_len,
            horizon: g.pred.model.horizon,
            dt_pred: g.pred.dt_pred,
        })),
        PredictorKind::Neural => {
            let path = args
                .model
                .as_ref()
                .ok_or_else(|| Error::config("PTGC with the neural predictor needs --model"))?;
            Ok(Box::new(ModelParams::load(BufReader::new(File::open(path)?))?))
        }
    }
}

fn run_cmd(g: &GlobalConfig, mode: Mode, delay_ms: u64, out: &Path, args: &PredictorArgs, seed: u64) -> Result<(), Error> {
    let predictor = match mode {
        Mode::Ptgc => Some(load_predictor(g, args)?),
        Mode::Dc => None,
    };
    let label = predictor.as_ref().map(|p| p.label()).unwrap_or_default();
    let cfg = ScenarioConfig::from_global(g, mode, delay_ms, seed, &label)?;
    let log = run_episode(&cfg, predictor.as_deref())?;
    let mut w = create(out)?;
    log.write_csv(&mut w)?;
    w.flush()?;
    let m = compute_run_metrics(&log);
    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    println!(
        "{mode} {delay_ms} ms: {}  TCT {} s  D2C {} m^2  SE {}  mean speed {:.2} m/s",
        m.validity,
        show(m.tct),
        show(m.d2c),
        show(m.se),
        m.mean_speed
    );
    Ok(())
}

fn experiment_cmd(g: &GlobalConfig, out_dir: &Path, args: &PredictorArgs) -> Result<(), Error> {
    let protocol = Protocol::from_config(g);
    let needs_predictor = protocol.cells.iter().any(|c| c.mode == Mode::Ptgc);
    let predictor = if needs_predictor { Some(load_predictor(g, args)?) } else { None };
    let outcome = experiment_batch(g, &protocol, predictor.as_deref())?;
    std::fs::create_dir_all(out_dir)?;
    outcome.write_results_csv(create(&out_dir.join("results.csv"))?)?;
    outcome.write_summary_csv(create(&out_dir.join("summary.csv"))?)?;
    outcome.write_scores_csv(create(&out_dir.join("scores.csv"))?)?;

    let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.0}%", 100.0 * x));
    println!("runs: {}", outcome.results.len());
    println!("{:>9} {:>6} {:>6} {:>6} {:>6}", "delay ms", "P_D2C", "P_TCT", "P_SE", "P_ove");
    for s in &outcome.scores {
        println!(
            "{:>9} {:>6} {:>6} {:>6} {:>6}",
            s.delay_ms,
            pct(s.scores.d2c),
            pct(s.scores.tct),
            pct(s.scores.se),
            pct(s.scores.overall)
        );
    }
    Ok(())
}
