//! Confusion-matrix metrics and the flat-vector baselines.
//!
//! Macro averages run over the classes whose ratio is defined: precision
//! skips classes that were never predicted, recall skips classes with no
//! support, and F1 (computed as `2TP / (2TP + FP + FN)`) skips classes with
//! neither. Skipped classes are listed in the report.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::data::ProcessedRecord;
use crate::error::{Error, Result};
use crate::model::{argmax, loss_on_tape, one_hot, predict, CcrGnnConfig, CcrGnnParams, DenseLayer, LossKind};
use crate::train::{init_bound, train_loop, uniform_matrix, History, InitKind, ParamSet, SampleGrad, TrainConfig};

pub const DEFAULT_MLP_HIDDEN: usize = 1000;

/// `counts[t][p]`: samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(m: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; m]; m],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let m = counts.len();
        if counts.iter().any(|r| r.len() != m) {
            return Err(Error::Contract("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.counts[class][class]
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        self.predicted_count(class) - self.true_positives(class)
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        self.support(class) - self.true_positives(class)
    }

    /// Row sum.
    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Column sum.
    pub fn predicted_count(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion(predictions: &[usize], truths: &[usize], m: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(m);
    for (i, (&p, &t)) in predictions.iter().zip(truths).enumerate() {
        if p >= m || t >= m {
            return Err(Error::Contract(format!(
                "pair {i} ({t}, {p}) is outside {m} classes"
            )));
        }
        cm.record(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: u64,
    pub predicted: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total: u64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub excluded_from_precision: Vec<usize>,
    pub excluded_from_recall: Vec<usize>,
    pub excluded_from_f1: Vec<usize>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn macro_mean(values: impl Iterator<Item = Option<f64>>) -> (f64, Vec<usize>) {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut excluded = Vec::new();
    for (i, v) in values.enumerate() {
        match v {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => excluded.push(i),
        }
    }
    (if n == 0 { 0.0 } else { sum / n as f64 }, excluded)
}

pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Contract("cannot compute metrics of an empty confusion matrix".into()));
    }
    let per_class: Vec<ClassMetrics> = (0..cm.num_classes())
        .map(|c| {
            let (tp, fp, fn_) = (cm.true_positives(c), cm.false_positives(c), cm.false_negatives(c));
            ClassMetrics {
                class: c,
                support: tp + fn_,
                predicted: tp + fp,
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                f1: ratio(2 * tp, 2 * tp + fp + fn_),
            }
        })
        .collect();
    let (macro_precision, excluded_from_precision) = macro_mean(per_class.iter().map(|c| c.precision));
    let (macro_recall, excluded_from_recall) = macro_mean(per_class.iter().map(|c| c.recall));
    let (macro_f1, excluded_from_f1) = macro_mean(per_class.iter().map(|c| c.f1));
    Ok(MetricsReport {
        total,
        accuracy: cm.trace() as f64 / total as f64,
        macro_precision,
        macro_recall,
        macro_f1,
        per_class,
        excluded_from_precision,
        excluded_from_recall,
        excluded_from_f1,
        confusion: cm.clone(),
    })
}

pub fn evaluate(params: &CcrGnnParams, config: &CcrGnnConfig, test: &[ProcessedRecord]) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty test set".into()));
    }
    let predictions = test
        .par_iter()
        .map(|r| predict(params, config, r))
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<usize> = test.iter().map(|r| r.label_index).collect();
    macro_metrics(&confusion(&predictions, &truths, config.num_classes)?)
}

/// Aligned table with one row per model.
pub fn format_table(rows: &[(&str, &MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("Model".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>8}", "Model", "Recall", "Accuracy", "F1-score");
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.5}  {:>8.5}  {:>8.5}",
            name, r.macro_recall, r.accuracy, r.macro_f1
        );
    }
    out
}

/// Fully connected classifier on flat feature vectors: ReLU between
/// layers, log-softmax output. No hidden layer gives multinomial logistic
/// regression.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub layers: Vec<DenseLayer>,
}

impl DenseNet {
    /// `sizes = [input, hidden.., classes]`, Xavier-uniform weights.
    pub fn init(sizes: &[usize], seed: u64) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer {
                weight: uniform_matrix(w[1], w[0], init_bound(InitKind::XavierUniform, w[0], w[1]), &mut rng),
                bias: Matrix::zeros(w[1], 1),
            })
            .collect();
        DenseNet { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("non-empty").weight.rows()
    }

    fn forward_on_tape(&self, tape: &mut Tape<'_>, vars: &[Var], x: &[f64]) -> Var {
        let mut z = tape.constant(Matrix::column(x));
        let n = vars.len() / 2;
        for (k, wb) in vars.chunks(2).enumerate() {
            let wz = tape.matmul(wb[0], z);
            z = tape.add(wz, wb[1]);
            if k + 1 < n {
                z = tape.relu(z);
            }
        }
        tape.log_softmax(z)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Contract(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn log_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut tape = Tape::inference();
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| tape.constant_ref(t)).collect();
        let out = self.forward_on_tape(&mut tape, &vars, x);
        Ok(tape.value(out).as_slice().to_vec())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.log_probs(x)?))
    }

    fn sample_grad(&self, x: &ProcessedRecord, label: usize, lambda: f64, loss: LossKind) -> Result<SampleGrad> {
        self.check_input(&x.x)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| tape.param(t)).collect();
        let lp = self.forward_on_tape(&mut tape, &vars, &x.x);
        let l = loss_on_tape(&mut tape, lp, &one_hot(label, self.num_classes()), &vars, lambda, loss)?;
        let mut grads = tape.backward(l)?;
        let shapes = self.shapes();
        Ok(SampleGrad {
            loss: tape.value(l).item(),
            grads: vars.iter().zip(shapes).map(|(&v, s)| grads.take(v, s)).collect(),
            predicted: argmax(tape.value(lp).as_slice()),
        })
    }

    /// Trains with the shared minibatch loop.
    pub fn fit(&mut self, train: &[ProcessedRecord], config: &TrainConfig, loss: LossKind) -> Result<History> {
        let labels: Vec<usize> = train.iter().map(|r| r.label_index).collect();
        if let Some(&l) = labels.iter().find(|&&l| l >= self.num_classes()) {
            return Err(Error::Validation(format!(
                "label {l} exceeds the network's {} classes",
                self.num_classes()
            )));
        }
        let lambda = config.l2_penalty;
        train_loop(self, train, &labels, config, |net, x, label| {
            net.sample_grad(x, label, lambda, loss)
        })
    }

    pub fn evaluate(&self, test: &[ProcessedRecord]) -> Result<MetricsReport> {
        if test.is_empty() {
            return Err(Error::Contract("cannot evaluate on an empty test set".into()));
        }
        let predictions = test
            .par_iter()
            .map(|r| self.predict(&r.x))
            .collect::<Result<Vec<_>>>()?;
        let truths: Vec<usize> = test.iter().map(|r| r.label_index).collect();
        macro_metrics(&confusion(&predictions, &truths, self.num_classes())?)
    }
}

impl ParamSet for DenseNet {
    fn tensors(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

fn input_dim(train: &[ProcessedRecord]) -> Result<usize> {
    train
        .first()
        .map(|r| r.x.len())
        .ok_or_else(|| Error::Contract("cannot train on an empty dataset".into()))
}

/// Multinomial logistic regression on the flat vectors.
pub fn baseline_logreg(
    train: &[ProcessedRecord],
    test: &[ProcessedRecord],
    num_classes: usize,
    config: &TrainConfig,
) -> Result<MetricsReport> {
    let mut net = DenseNet::init(&[input_dim(train)?, num_classes], config.seed);
    net.fit(train, config, LossKind::CategoricalCe)?;
    net.evaluate(test)
}

/// One hidden ReLU layer of `hidden` units.
pub fn baseline_mlp(
    train: &[ProcessedRecord],
    test: &[ProcessedRecord],
    num_classes: usize,
    hidden: usize,
    config: &TrainConfig,
) -> Result<MetricsReport> {
    let mut net = DenseNet::init(&[input_dim(train)?, hidden, num_classes], config.seed);
    net.fit(train, config, LossKind::CategoricalCe)?;
    net.evaluate(test)
}
