//! Synthetic minority oversampling.
//!
//! Every class is topped up to the majority count with points
//! `x + u·(x_nn − x)`, `u ~ U[0, 1)`, where `x_nn` is one of the `k` nearest
//! same-class neighbours of `x`. Sources are taken round-robin over the class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{class_counts, ProcessedRecord};
use crate::error::{Error, Result};

pub const DEFAULT_SMOTE_K: usize = 5;

/// A generated point and where it came from (indices into the input).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub record: ProcessedRecord,
    pub source: usize,
    pub neighbor: usize,
    pub u: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The synthetic points only; originals are untouched.
pub fn smote_detailed(
    dataset: &[ProcessedRecord],
    k: usize,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    if k == 0 {
        return Err(Error::Config("SMOTE needs k >= 1".into()));
    }
    let counts = class_counts(dataset);
    let target = counts.iter().copied().max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    for (label, &count) in counts.iter().enumerate() {
        if count == 0 || count == target {
            continue;
        }
        if count < 2 {
            return Err(Error::Rebalance(format!(
                "class {label} has {count} sample; at least 2 are needed to interpolate"
            )));
        }
        let members: Vec<usize> = dataset
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label_index == label)
            .map(|(i, _)| i)
            .collect();
        let k_eff = k.min(count - 1);
        let knn: Vec<Vec<usize>> = members
            .iter()
            .map(|&i| {
                let mut others: Vec<(f64, usize)> = members
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| (squared_distance(&dataset[i].x, &dataset[j].x), j))
                    .collect();
                others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                others.into_iter().take(k_eff).map(|(_, j)| j).collect()
            })
            .collect();

        for s in 0..target - count {
            let slot = s % count;
            let source = members[slot];
            let neighbor = knn[slot][rng.gen_range(0..k_eff)];
            let u: f64 = rng.gen();
            let x = dataset[source]
                .x
                .iter()
                .zip(&dataset[neighbor].x)
                .map(|(a, b)| a + u * (b - a))
                .collect();
            out.push(SyntheticSample {
                record: ProcessedRecord { x, label_index: label },
                source,
                neighbor,
                u,
            });
        }
    }
    Ok(out)
}

/// Originals in input order followed by the synthetic points.
pub fn smote(dataset: &[ProcessedRecord], k: usize, seed: u64) -> Result<Vec<ProcessedRecord>> {
    let synthetic = smote_detailed(dataset, k, seed)?;
    let mut out = dataset.to_vec();
    out.extend(synthetic.into_iter().map(|s| s.record));
    Ok(out)
}
