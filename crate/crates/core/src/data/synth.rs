//! Synthetic rating data: one prototype per class plus clipped Gaussian noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ProcessedRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    /// Scales every prototype's offset from the centre of the unit cube, so
    /// pairwise prototype distances scale linearly with it (up to clipping).
    pub separation: f64,
    pub noise: f64,
    /// Class proportions; empty means uniform.
    pub imbalance: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 900,
            d: 39,
            m: 9,
            separation: 0.5,
            noise: 0.12,
            imbalance: Vec::new(),
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn proportions(&self) -> Vec<f64> {
        if self.imbalance.is_empty() {
            vec![1.0 / self.m as f64; self.m]
        } else {
            self.imbalance.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m < 1 || self.n < self.m {
            return Err(Error::Config(format!(
                "need n >= m >= 1, got n={} m={}",
                self.n, self.m
            )));
        }
        if self.m > super::RATINGS.len() {
            return Err(Error::Config(format!(
                "at most {} classes are supported, got {}",
                super::RATINGS.len(),
                self.m
            )));
        }
        if self.d < 2 {
            return Err(Error::Config(format!("need d >= 2, got {}", self.d)));
        }
        if !(self.noise >= 0.0 && self.separation >= 0.0) {
            return Err(Error::Config("noise and separation must be non-negative".into()));
        }
        let p = self.proportions();
        if p.len() != self.m {
            return Err(Error::Config(format!(
                "imbalance has {} entries for {} classes",
                p.len(),
                self.m
            )));
        }
        let total: f64 = p.iter().sum();
        if p.iter().any(|v| v.is_nan() || *v < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "imbalance must be non-negative and sum to 1, got sum {total}"
            )));
        }
        Ok(())
    }

    /// Largest-remainder allocation of `n` over the proportions.
    pub fn class_sizes(&self) -> Vec<usize> {
        let p = self.proportions();
        let exact: Vec<f64> = p.iter().map(|q| q * self.n as f64).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let short = self.n - sizes.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            sizes[i] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub records: Vec<ProcessedRecord>,
    pub prototypes: Vec<Vec<f64>>,
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let prototypes: Vec<Vec<f64>> = (0..config.m)
        .map(|_| {
            (0..config.d)
                .map(|_| {
                    let u: f64 = rng.gen();
                    (0.5 + config.separation * (u - 0.5)).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, config.noise)
        .map_err(|e| Error::Config(format!("noise: {e}")))?;
    let mut records = Vec::with_capacity(config.n);
    for (label, &size) in config.class_sizes().iter().enumerate() {
        for _ in 0..size {
            let x = prototypes[label]
                .iter()
                .map(|&c| (c + noise.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            records.push(ProcessedRecord { x, label_index: label });
        }
    }
    records.shuffle(&mut rng);
    Ok(SyntheticDataset {
        records,
        prototypes,
    })
}
