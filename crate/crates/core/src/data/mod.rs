//! Corporate-rating records: ingest, cleaning, encoding, rebalancing and a
//! synthetic stand-in dataset.

mod csv_io;
mod schema;
mod smote;
mod split;
mod synth;

use indexmap::IndexMap;

pub use csv_io::{
    load_csv, load_dataset, load_processed_csv, read_csv, write_csv, write_processed_csv,
    LoadedDataset,
};
pub use schema::{
    fit_schema, preprocess, CategoricalFeature, FeatureSchema, NumericFeature,
    DEFAULT_MISSING_DROP_FRACTION,
};
pub use smote::{smote, smote_detailed, SyntheticSample, DEFAULT_SMOTE_K};
pub use split::stratified_split;
pub use synth::{generate_synthetic, SynthConfig, SyntheticDataset};

use crate::error::{Error, Result};

/// Rating grades, best first. Label indices refer to this order.
pub const RATINGS: [&str; 9] = ["AAA", "AA", "A", "BBB", "BB", "B", "CCC", "CC", "C"];

pub fn rating_index(label: &str) -> Result<usize> {
    RATINGS
        .iter()
        .position(|r| *r == label)
        .ok_or_else(|| Error::Validation(format!("unknown rating {label:?}")))
}

pub fn rating_name(index: usize) -> Option<&'static str> {
    RATINGS.get(index).copied()
}

/// One corporation before cleaning. Missing cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub id: String,
    pub numeric: IndexMap<String, Option<f64>>,
    pub categorical: IndexMap<String, Option<String>>,
    pub label: String,
}

/// Encoded feature vector and label index.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedRecord {
    pub x: Vec<f64>,
    pub label_index: usize,
}

/// Number of records per label, sized to the largest label present.
pub fn class_counts(records: &[ProcessedRecord]) -> Vec<usize> {
    let m = records.iter().map(|r| r.label_index + 1).max().unwrap_or(0);
    let mut counts = vec![0; m];
    for r in records {
        counts[r.label_index] += 1;
    }
    counts
}
