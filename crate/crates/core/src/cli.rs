//! Command-line pipeline: synthetic data, preprocessing, training,
//! evaluation, prediction, graph export and the baseline benchmark.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;

use crate::bench::{prepare_split, run_bench};
use crate::c2g::build_graph;
use crate::config::PipelineConfig;
use crate::data::{
    generate_synthetic, load_csv, load_dataset, fit_schema, preprocess, rating_name, smote, stratified_split,
    write_csv, write_processed_csv, FeatureSchema, LoadedDataset, NumericFeature, ProcessedRecord, RawRecord,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, format_table};
use crate::model::{forward, Checkpoint};
use crate::train::fit;

#[derive(Debug, Parser)]
#[command(name = "ccr-gnn", version, about = "Graph attention credit-rating pipeline")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random choice; overrides the config and CCR_GNN_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic rating dataset.
    Synth(SynthArgs),
    /// Clean and encode a raw CSV.
    Preprocess(PreprocessArgs),
    /// Train the graph model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on labelled data.
    Eval(EvalArgs),
    /// Per-record predicted rating and class probabilities.
    Predict(PredictArgs),
    /// Export one record's feature graph.
    GraphDump(GraphDumpArgs),
    /// Compare the graph model with logistic regression and an MLP.
    Bench(BenchArgs),
    /// Print the effective configuration as TOML.
    DumpConfig,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output CSV (the training part when --test-out is given).
    #[arg(long)]
    pub out: PathBuf,
    /// Write a stratified holdout here.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    /// Write the identity schema for the generated features.
    #[arg(long)]
    pub schema_out: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Comma-separated class proportions, or "uniform".
    #[arg(long)]
    pub imbalance: Option<String>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Apply this schema instead of fitting one.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub schema_out: Option<PathBuf>,
    #[arg(long)]
    pub drop_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Raw or processed training CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Schema for raw input (fitted on the data otherwise).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Oversample minority classes before training.
    #[arg(long)]
    pub smote: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Write the full metrics report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphFormat {
    Dot,
    Json,
}

#[derive(Debug, Args)]
pub struct GraphDumpArgs {
    /// Take the schema and threshold step from this checkpoint.
    #[arg(long, conflicts_with = "schema")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Value of the record's id column (1-based row number without one).
    #[arg(long)]
    pub record: String,
    #[arg(long, value_enum, default_value = "dot")]
    pub format: GraphFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Dataset to split (synthetic from the config when omitted).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

/// Runs a parsed command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    let cfg = effective_config(&cli)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => cmd_synth(cfg, a, out),
        Command::Preprocess(a) => cmd_preprocess(&cfg, a, out),
        Command::Train(a) => cmd_train(cfg, a, out),
        Command::Eval(a) => cmd_eval(&cfg, a, out),
        Command::Predict(a) => cmd_predict(&cfg, a, out),
        Command::GraphDump(a) => cmd_graph_dump(&cfg, a, out),
        Command::Bench(a) => cmd_bench(cfg, a, out),
        Command::DumpConfig => {
            cfg.validate()?;
            write!(out, "{}", cfg.to_toml_string()?).map_err(stdout_error)
        }
    })
}

fn stdout_error(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn read_schema(path: &Path) -> Result<FeatureSchema> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

fn parse_imbalance(text: &str) -> Result<Vec<f64>> {
    if text.trim() == "uniform" {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("imbalance entry {s:?}: {e}")))
        })
        .collect()
}

fn to_raw(records: &[ProcessedRecord], offset: usize) -> Result<Vec<RawRecord>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let label = rating_name(r.label_index)
                .ok_or_else(|| Error::Contract(format!("label {} has no rating", r.label_index)))?;
            Ok(RawRecord {
                id: (offset + i + 1).to_string(),
                numeric: r
                    .x
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| (format!("f{k}"), Some(v)))
                    .collect::<IndexMap<_, _>>(),
                categorical: IndexMap::new(),
                label: label.to_owned(),
            })
        })
        .collect()
}

fn identity_schema(records: &[ProcessedRecord], d: usize) -> FeatureSchema {
    let n = records.len().max(1) as f64;
    FeatureSchema {
        numeric: (0..d)
            .map(|k| NumericFeature {
                name: format!("f{k}"),
                min: 0.0,
                max: 1.0,
                mean: records.iter().map(|r| r.x[k]).sum::<f64>() / n,
            })
            .collect(),
        categorical: Vec::new(),
        dropped: Vec::new(),
        dim: d,
    }
}

fn save_raw(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut w = create(path)?;
    write_csv(records, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn cmd_synth(mut cfg: PipelineConfig, a: SynthArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let s = &mut cfg.synth;
    if let Some(v) = a.n {
        s.n = v;
    }
    if let Some(v) = a.d {
        s.d = v;
    }
    if let Some(v) = a.m {
        s.m = v;
        if a.imbalance.is_none() && s.imbalance.len() != v {
            s.imbalance.clear();
        }
    }
    if let Some(v) = a.separation {
        s.separation = v;
    }
    if let Some(v) = a.noise {
        s.noise = v;
    }
    if let Some(v) = &a.imbalance {
        s.imbalance = parse_imbalance(v)?;
    }
    let data = generate_synthetic(&cfg.synth)?;
    if let Some(p) = &a.schema_out {
        write_json(p, &identity_schema(&data.records, cfg.synth.d))?;
    }
    match &a.test_out {
        None => {
            save_raw(&a.out, &to_raw(&data.records, 0)?)?;
            writeln!(out, "wrote {} records to {}", data.records.len(), a.out.display())
        }
        Some(test_path) => {
            let fraction = a.test_fraction.unwrap_or(cfg.bench.test_fraction);
            let (train, test) = stratified_split(&data.records, fraction, cfg.seed)?;
            save_raw(&a.out, &to_raw(&train, 0)?)?;
            save_raw(test_path, &to_raw(&test, train.len())?)?;
            writeln!(
                out,
                "wrote {} training records to {} and {} test records to {}",
                train.len(),
                a.out.display(),
                test.len(),
                test_path.display()
            )
        }
    }
    .map_err(stdout_error)
}

fn cmd_preprocess(cfg: &PipelineConfig, a: PreprocessArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let raw = load_csv(&a.input)?;
    let schema = match &a.schema {
        Some(p) => read_schema(p)?,
        None => fit_schema(&raw, a.drop_fraction.unwrap_or(cfg.data.missing_drop_fraction))?,
    };
    let records = raw
        .iter()
        .map(|r| preprocess(r, &schema))
        .collect::<Result<Vec<_>>>()?;
    let mut w = create(&a.out)?;
    write_processed_csv(&records, &mut w)?;
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    if let Some(p) = &a.schema_out {
        write_json(p, &schema)?;
    }
    writeln!(
        out,
        "encoded {} records into {} features ({} dropped)",
        records.len(),
        schema.dim,
        schema.dropped.len()
    )
    .map_err(stdout_error)
}

fn load_for_model(path: &Path, schema: Option<&FeatureSchema>, cfg: &PipelineConfig) -> Result<LoadedDataset> {
    load_dataset(path, schema, cfg.data.missing_drop_fraction)
}

fn cmd_train(mut cfg: PipelineConfig, a: TrainArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.initial_lr = v;
    }
    cfg.validate()?;
    let schema = a.schema.as_deref().map(read_schema).transpose()?;
    let loaded = load_for_model(&a.data, schema.as_ref(), &cfg)?;
    if loaded.records.is_empty() {
        return Err(Error::Validation(format!("{} has no records", a.data.display())));
    }
    let records = if a.smote {
        smote(&loaded.records, cfg.bench.smote_k, cfg.seed.wrapping_add(1))?
    } else {
        loaded.records
    };
    let fitted = fit(&records, &cfg.train, &cfg.model)?;
    let ckpt = Checkpoint::new(cfg.model.clone(), fitted.params, loaded.schema, cfg.seed, cfg.train.epochs);
    ckpt.save(&a.checkpoint)?;
    if let Some(p) = &a.history {
        let mut w = create(p)?;
        fitted.history.write_csv(&mut w)?;
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    let last = fitted.history.last().expect("at least one epoch");
    writeln!(
        out,
        "trained {} epochs on {} records: loss {:.6}, train accuracy {:.4}",
        last.epoch,
        records.len(),
        last.loss,
        last.train_accuracy
    )
    .map_err(stdout_error)
}

fn load_checkpoint_data(ckpt: &Checkpoint, data: &Path, cfg: &PipelineConfig) -> Result<LoadedDataset> {
    let loaded = load_for_model(data, ckpt.header.schema.as_ref(), cfg)?;
    if let Some(r) = loaded.records.first() {
        if r.x.len() != ckpt.header.feature_dim {
            return Err(Error::Validation(format!(
                "{} encodes {} features but the checkpoint expects {}",
                data.display(),
                r.x.len(),
                ckpt.header.feature_dim
            )));
        }
    }
    Ok(loaded)
}

fn cmd_eval(cfg: &PipelineConfig, a: EvalArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let loaded = load_checkpoint_data(&ckpt, &a.data, cfg)?;
    if loaded.records.is_empty() {
        return Err(Error::Validation(format!("{} has no records", a.data.display())));
    }
    let report = evaluate(&ckpt.params, &ckpt.header.model, &loaded.records)?;
    if let Some(p) = &a.json {
        write_json(p, &report)?;
    }
    write!(out, "{}", format_table(&[("CCR-GNN", &report)])).map_err(stdout_error)
}

fn cmd_predict(cfg: &PipelineConfig, a: PredictArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    use rayon::prelude::*;

    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let loaded = load_checkpoint_data(&ckpt, &a.data, cfg)?;
    let model = &ckpt.header.model;
    let traces = loaded
        .records
        .par_iter()
        .map(|r| forward(&ckpt.params, model, &build_graph(&r.x, model.c2g_step)?))
        .collect::<Result<Vec<_>>>()?;

    let names: Vec<&str> = (0..model.num_classes)
        .map(|k| rating_name(k).unwrap_or("?"))
        .collect();
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["id".to_owned(), "predicted".to_owned()];
        header.extend(names.iter().map(|n| format!("p_{n}")));
        w.write_record(&header)?;
        for (id, t) in loaded.ids.iter().zip(&traces) {
            let mut row = vec![id.clone(), names[t.predicted()].to_owned()];
            row.extend(t.probabilities().iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(stdout_error)?;
    }
    match &a.out {
        Some(p) => std::fs::write(p, &buf).map_err(|e| Error::io(p, e)),
        None => out.write_all(&buf).map_err(stdout_error),
    }
}

fn cmd_graph_dump(cfg: &PipelineConfig, a: GraphDumpArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let (schema, step) = match (&a.checkpoint, &a.schema) {
        (Some(p), _) => {
            let ckpt = Checkpoint::load(p)?;
            (ckpt.header.schema, ckpt.header.model.c2g_step)
        }
        (None, Some(p)) => (Some(read_schema(p)?), cfg.model.c2g_step),
        (None, None) => (None, cfg.model.c2g_step),
    };
    let loaded = load_for_model(&a.data, schema.as_ref(), cfg)?;
    let idx = loaded
        .ids
        .iter()
        .position(|id| *id == a.record)
        .ok_or_else(|| Error::Validation(format!("no record with id {:?}", a.record)))?;
    let graph = build_graph(&loaded.records[idx].x, step)?;
    let text = match a.format {
        GraphFormat::Dot => graph.to_dot(),
        GraphFormat::Json => serde_json::to_string_pretty(&graph.to_json())? + "\n",
    };
    match &a.out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => out.write_all(text.as_bytes()).map_err(stdout_error),
    }
}

fn cmd_bench(mut cfg: PipelineConfig, a: BenchArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    cfg.validate()?;
    let records = match &a.data {
        Some(p) => load_for_model(p, None, &cfg)?.records,
        None => generate_synthetic(&cfg.synth)?.records,
    };
    // Fail on a bad split before any training starts.
    prepare_split(&records, &cfg.bench, cfg.train.seed)?;
    let report = run_bench(&records, &cfg.bench, &cfg.model, &cfg.train)?;
    if let Some(p) = &a.json {
        write_json(p, &report.to_json())?;
    }
    write!(out, "{}", report.table()).map_err(stdout_error)
}
