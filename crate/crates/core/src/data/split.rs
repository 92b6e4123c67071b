use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ProcessedRecord;
use crate::error::{Error, Result};

/// Per-class holdout of `test_fraction`. The total test size is
/// `round(n · test_fraction)` over classes with at least two samples,
/// allocated by largest remainder; singleton classes go to train. Both
/// halves keep input order.
pub fn stratified_split(
    dataset: &[ProcessedRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<ProcessedRecord>, Vec<ProcessedRecord>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let m = dataset.iter().map(|r| r.label_index + 1).max().unwrap_or(0);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, r) in dataset.iter().enumerate() {
        groups[r.label_index].push(i);
    }
    for (label, g) in groups.iter().enumerate() {
        if g.len() == 1 {
            log::warn!("class {label} has a single sample; keeping it in the training split");
        }
    }

    let eligible: usize = groups.iter().filter(|g| g.len() >= 2).map(Vec::len).sum();
    let total_test = (eligible as f64 * test_fraction).round() as usize;
    let mut quota: Vec<usize> = vec![0; m];
    let mut remainders: Vec<(f64, usize)> = Vec::new();
    for (label, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            continue;
        }
        let exact = g.len() as f64 * test_fraction;
        quota[label] = (exact.floor() as usize).min(g.len() - 1);
        remainders.push((exact - exact.floor(), label));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut assigned: usize = quota.iter().sum();
    for &(_, label) in &remainders {
        if assigned >= total_test {
            break;
        }
        if quota[label] + 1 < groups[label].len() {
            quota[label] += 1;
            assigned += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; dataset.len()];
    for (label, g) in groups.iter_mut().enumerate() {
        g.shuffle(&mut rng);
        for &i in g.iter().take(quota[label]) {
            is_test[i] = true;
        }
    }
    let mut train = Vec::with_capacity(dataset.len() - assigned);
    let mut test = Vec::with_capacity(assigned);
    for (r, t) in dataset.iter().zip(is_test) {
        if t {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((train, test))
}
