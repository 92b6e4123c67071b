//! Holdout comparison of the graph model against the flat baselines.

use serde::{Deserialize, Serialize};

use crate::data::{class_counts, smote, stratified_split, ProcessedRecord};
use crate::error::{Error, Result};
use crate::eval::{baseline_logreg, baseline_mlp, evaluate, format_table, MetricsReport, DEFAULT_MLP_HIDDEN};
use crate::model::CcrGnnConfig;
use crate::train::{fit, History, TrainConfig};

/// Skewed class proportions for the nine grades, most common first.
pub const DEFAULT_IMBALANCE: [f64; 9] = [0.20, 0.16, 0.14, 0.12, 0.10, 0.09, 0.08, 0.06, 0.05];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchOptions {
    pub test_fraction: f64,
    /// Oversample the training split before fitting.
    pub smote: bool,
    pub smote_k: usize,
    pub mlp_hidden: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            test_fraction: 0.2,
            smote: true,
            smote_k: crate::data::DEFAULT_SMOTE_K,
            mlp_hidden: DEFAULT_MLP_HIDDEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub gnn: MetricsReport,
    pub logreg: MetricsReport,
    pub mlp: MetricsReport,
    pub gnn_history: History,
}

impl BenchReport {
    pub fn rows(&self) -> [(&'static str, &MetricsReport); 3] {
        [("CCR-GNN", &self.gnn), ("LR", &self.logreg), ("MLP", &self.mlp)]
    }

    pub fn table(&self) -> String {
        format_table(&self.rows())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut models = serde_json::Map::new();
        for (name, r) in self.rows() {
            models.insert(name.to_owned(), serde_json::to_value(r).expect("metrics serialize"));
        }
        serde_json::json!({
            "train_counts": self.train_counts,
            "test_counts": self.test_counts,
            "models": models,
        })
    }
}

/// Stratified holdout, then SMOTE on the training part only.
pub fn prepare_split(
    data: &[ProcessedRecord],
    options: &BenchOptions,
    seed: u64,
) -> Result<(Vec<ProcessedRecord>, Vec<ProcessedRecord>)> {
    let (train, test) = stratified_split(data, options.test_fraction, seed)?;
    let train = if options.smote {
        smote(&train, options.smote_k, seed.wrapping_add(1))?
    } else {
        train
    };
    Ok((train, test))
}

/// Every model sees the same split and the same training settings.
pub fn run_bench(
    data: &[ProcessedRecord],
    options: &BenchOptions,
    model: &CcrGnnConfig,
    train_config: &TrainConfig,
) -> Result<BenchReport> {
    if data.is_empty() {
        return Err(Error::Contract("bench needs a non-empty dataset".into()));
    }
    let (train, test) = prepare_split(data, options, train_config.seed)?;
    if test.is_empty() {
        return Err(Error::Config("test split is empty; raise test_fraction".into()));
    }
    log::info!("bench: {} training and {} test records", train.len(), test.len());
    let m = model.num_classes;
    let fitted = fit(&train, train_config, model)?;
    let gnn = evaluate(&fitted.params, model, &test)?;
    log::info!("bench: graph model macro-F1 {:.4}", gnn.macro_f1);
    let logreg = baseline_logreg(&train, &test, m, train_config)?;
    let mlp = baseline_mlp(&train, &test, m, options.mlp_hidden, train_config)?;
    Ok(BenchReport {
        train_counts: class_counts(&train),
        test_counts: class_counts(&test),
        gnn,
        logreg,
        mlp,
        gnn_history: fitted.history,
    })
}
