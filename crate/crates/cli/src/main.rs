use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use spat_core::evaluation::{compare_models, evaluate_model, HorizonReport};
use spat_core::experiment::{label_phases, run_experiment, ExperimentConfig};
use spat_core::ingest::{flatten_record, prepare_day, EncodedDay, FlatRow, SchemaBuilder, SchemaHints, SchemaManifest};
use spat_core::neural::{predict_seconds, Checkpoint};
use spat_core::sequencer::{Dataset, WINDOW};
use spat_core::sim::{corrupt_feed, read_record_lines, simulate_day, span_bounds, write_records, IntersectionConfig};
use spat_core::training::{grid_search, train, LossKind, TrainConfig};

/// Traffic signal switching-time prediction: simulate, prepare, train,
/// evaluate and compare recurrent predictors.
#[derive(Parser)]
#[command(name = "spat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one day of per-second controller records (JSON lines).
    Simulate(SimulateArgs),
    /// Encode record streams into day containers with labels.
    Prepare(PrepareArgs),
    /// Train one model with a single loss function.
    Train(TrainArgs),
    /// Validation MAPE over a learning-rate by neuron-count grid.
    GridSearch(GridArgs),
    /// Score a checkpoint on test days by remaining-time bucket.
    Evaluate(EvaluateArgs),
    /// Rank evaluation reports that share one test set.
    Compare(CompareArgs),
    /// Predict the six remaining times for one feature window.
    Predict(PredictArgs),
    /// Run the full four-loss study described by one config file.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Intersection config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Day to simulate (YYYY-MM-DD).
    #[arg(long)]
    date: NaiveDate,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; writes <date>.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// Feed dropout probability (default: from the config).
    #[arg(long)]
    dropout: Option<f64>,
    /// Feed duplication probability (default: from the config).
    #[arg(long)]
    duplicate: Option<f64>,
    /// Skip feed corruption entirely.
    #[arg(long, conflicts_with_all = ["dropout", "duplicate"])]
    clean: bool,
}

#[derive(Args)]
struct PrepareArgs {
    /// Intersection config (TOML); defines the span and phase order.
    #[arg(long)]
    config: PathBuf,
    /// Feature manifest (JSON). Read unless --freeze is given.
    #[arg(long)]
    manifest: PathBuf,
    /// Build the manifest from the first --schema-days inputs and write it.
    #[arg(long)]
    freeze: bool,
    #[arg(long, default_value_t = 1, requires = "freeze")]
    schema_days: usize,
    /// Variable kind hints (TOML); defaults to the built-in set.
    #[arg(long)]
    hints: Option<PathBuf>,
    /// Output directory; writes <date>.day per input.
    #[arg(long)]
    out: PathBuf,
    /// Record streams, one JSON object per line.
    #[arg(required = true)]
    records: Vec<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Training day containers.
    #[arg(long = "train", num_args = 1.., required = true)]
    train: Vec<PathBuf>,
    /// Validation day containers.
    #[arg(long = "val", num_args = 1.., required = true)]
    val: Vec<PathBuf>,
    /// Timesteps per input window.
    #[arg(long, default_value_t = WINDOW)]
    window: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Training config (TOML); flags below override it.
    #[arg(long)]
    train_config: Option<PathBuf>,
    /// mse, mae, mape or tdse.
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    neurons: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    train_stride: Option<usize>,
    #[arg(long)]
    val_stride: Option<usize>,
    /// Output directory for checkpoints and the training report.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated learning rates.
    #[arg(long, value_delimiter = ',', required = true)]
    learning_rates: Vec<f64>,
    /// Comma-separated neuron counts.
    #[arg(long, value_delimiter = ',', required = true)]
    neurons: Vec<usize>,
    /// Training loss for every cell.
    #[arg(long, default_value = "mse")]
    loss: LossKind,
    /// Training samples per cell.
    #[arg(long)]
    budget: usize,
    /// Samples between validation checks.
    #[arg(long)]
    check_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    train_stride: usize,
    #[arg(long, default_value_t = 1)]
    val_stride: usize,
    /// Write the table (TSV) here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test day containers.
    #[arg(long = "test", num_args = 1.., required = true)]
    test: Vec<PathBuf>,
    #[arg(long, default_value_t = WINDOW)]
    window: usize,
    /// Keep every n-th test sample.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Output directory; writes report.json, report.tsv and report-cdf.tsv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Reports as LOSS=PATH (report.json from `evaluate`).
    #[arg(required = true, value_parser = parse_report_arg)]
    reports: Vec<(LossKind, PathBuf)>,
    /// Also write comparison.txt and comparison.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Encoded window: one row of feature values per line, oldest first.
    #[arg(long)]
    window_file: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_report_arg(s: &str) -> std::result::Result<(LossKind, PathBuf), String> {
    let (k, p) = s.split_once('=').ok_or_else(|| format!("expected LOSS=PATH, got `{s}`"))?;
    Ok((k.parse().map_err(|e| format!("{e}"))?, PathBuf::from(p)))
}

fn load_days(paths: &[PathBuf], window: usize) -> Result<Dataset> {
    let days = paths
        .iter()
        .map(|p| EncodedDay::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(days, window)?)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let config = IntersectionConfig::load(&a.config)?;
    let records = simulate_day(&config, a.date, a.seed)?;
    let (dropout, duplicate) = if a.clean {
        (0.0, 0.0)
    } else {
        (
            a.dropout.unwrap_or(config.feed_corruption.dropout_prob),
            a.duplicate.unwrap_or(config.feed_corruption.duplicate_prob),
        )
    };
    let fed = corrupt_feed(&records, dropout, duplicate, a.seed)?;
    std::fs::create_dir_all(&a.out)?;
    let path = a.out.join(format!("{}.jsonl", a.date));
    write_records(BufWriter::new(File::create(&path)?), &fed)?;
    log::info!("{} records ({} simulated) -> {}", fed.len(), records.len(), path.display());
    println!("{}", path.display());
    Ok(())
}

fn read_rows(path: &Path) -> Result<Vec<FlatRow>> {
    let lines = read_record_lines(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))?;
    lines
        .iter()
        .map(|l| flatten_record(l).with_context(|| format!("in {}", path.display())))
        .collect()
}

fn stream_date(rows: &[FlatRow], path: &Path) -> Result<NaiveDate> {
    let ts = rows.first().ok_or_else(|| anyhow!("{} holds no records", path.display()))?.timestamp;
    Ok(chrono::DateTime::from_timestamp(ts, 0)
        .ok_or_else(|| anyhow!("timestamp {ts} out of range"))?
        .date_naive())
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let config = IntersectionConfig::load(&a.config)?;
    let phases = label_phases(&config)?;
    let manifest = if a.freeze {
        let hints = match &a.hints {
            Some(p) => SchemaHints::load(p)?,
            None => SchemaHints::reference(),
        };
        let mut b = SchemaBuilder::new(&hints);
        for p in a.records.iter().take(a.schema_days.max(1)) {
            for row in read_rows(p)? {
                b.observe(&row)?;
            }
        }
        let m = b.finish()?;
        m.save(&a.manifest)?;
        log::info!("manifest frozen: width {} -> {}", m.feature_count, a.manifest.display());
        m
    } else {
        SchemaManifest::load(&a.manifest)?
    };
    std::fs::create_dir_all(&a.out)?;
    for p in &a.records {
        let rows = read_rows(p)?;
        let date = stream_date(&rows, p)?;
        let (first, last) = span_bounds(&config, date);
        let day = prepare_day(rows.into_iter().map(Ok), first, last, &manifest, &phases)?;
        let path = a.out.join(format!("{date}.day"));
        day.save(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.train_config {
        Some(p) => toml::from_str::<TrainConfig>(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::new(a.loss.unwrap_or(LossKind::Mse)),
    };
    if let Some(v) = a.loss {
        cfg.loss = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.neurons {
        cfg.neurons = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.train_stride {
        cfg.train_stride = v;
    }
    if let Some(v) = a.val_stride {
        cfg.val_stride = v;
    }
    cfg.validate()?;
    let train_set = load_days(&a.data.train, a.data.window)?;
    let val_set = load_days(&a.data.val, a.data.window)?;
    let (report, best) = train(&train_set, &val_set, &cfg, Some(&a.out))?;
    print!("{}", report.to_tsv());
    log::info!("best epoch {} ({:.6})", best.epoch, best.val_loss);
    Ok(())
}

fn grid_cmd(a: GridArgs) -> Result<()> {
    let base = TrainConfig {
        seed: a.seed,
        batch_size: a.batch_size,
        train_stride: a.train_stride,
        val_stride: a.val_stride,
        ..TrainConfig::new(a.loss)
    };
    let train_set = load_days(&a.data.train, a.data.window)?;
    let val_set = load_days(&a.data.val, a.data.window)?;
    let table = grid_search(&train_set, &val_set, &a.learning_rates, &a.neurons, a.budget, a.check_every, &base)?;
    match a.out {
        Some(p) => std::fs::write(p, table.to_tsv())?,
        None => print!("{}", table.to_tsv()),
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let data = load_days(&a.test, a.window)?;
    let index = data.index().strided(a.stride, 0);
    let report = evaluate_model(&ck, &data, &index)?;
    report.save(&a.out, "report")?;
    print!("{}", report.to_tsv());
    Ok(())
}

fn compare_cmd(a: CompareArgs) -> Result<()> {
    let mut reports = BTreeMap::new();
    for (kind, path) in &a.reports {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        if reports.insert(*kind, HorizonReport::from_json(&text)?).is_some() {
            bail!("loss {kind} given twice");
        }
    }
    let cmp = compare_models(&reports)?;
    print!("{}", cmp.to_text());
    if let Some(dir) = a.out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("comparison.txt"), cmp.to_text())?;
        std::fs::write(dir.join("comparison.json"), serde_json::to_string_pretty(&cmp)? + "\n")?;
    }
    Ok(())
}

fn read_window(path: &Path, width: usize) -> Result<Vec<f32>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse::<f32>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}: bad number", path.display(), n + 1))?;
        if row.len() != width {
            bail!("{}:{}: expected {width} values, found {}", path.display(), n + 1, row.len());
        }
        out.extend(row);
    }
    if out.is_empty() {
        bail!("{} holds no rows", path.display());
    }
    Ok(out)
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let window = read_window(&a.window_file, ck.params.feature_count)?;
    let secs = predict_seconds(&ck.params, &window)?;
    let line: Vec<String> = secs.iter().map(u32::to_string).collect();
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", line.join(" "))?;
    Ok(())
}

fn experiment_cmd(a: ExperimentArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(o) = a.out {
        cfg.output_dir = o;
    }
    let outcome = run_experiment(&cfg)?;
    for (seed, cmp) in &outcome.comparisons {
        println!("== seed {seed}");
        print!("{}", cmp.to_text());
    }
    if let Some(t) = &outcome.trends {
        println!("== trends");
        print!("{}", t.to_text());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train_cmd(a),
        Command::GridSearch(a) => grid_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Experiment(a) => experiment_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
