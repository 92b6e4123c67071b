use serde::{Deserialize, Serialize};

use super::{rating_index, ProcessedRecord, RawRecord};
use crate::error::{Error, Result};

pub const DEFAULT_MISSING_DROP_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericFeature {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    /// First-appearance order.
    pub vocabulary: Vec<String>,
    /// Most frequent value, substituted for missing cells.
    pub mode: String,
}

/// Fitted cleaning and encoding rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub numeric: Vec<NumericFeature>,
    pub categorical: Vec<CategoricalFeature>,
    pub dropped: Vec<String>,
    pub dim: usize,
}

impl FeatureSchema {
    /// Column `k` of the encoded vector.
    pub fn encoded_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.numeric.iter().map(|f| f.name.clone()).collect();
        for c in &self.categorical {
            names.extend(c.vocabulary.iter().map(|v| format!("{}={v}", c.name)));
        }
        names
    }
}

/// Drops features missing in more than `missing_drop_fraction` of the rows
/// and computes statistics over the present values of the rest.
pub fn fit_schema(records: &[RawRecord], missing_drop_fraction: f64) -> Result<FeatureSchema> {
    let Some(first) = records.first() else {
        return Err(Error::Schema("cannot fit a schema to zero records".into()));
    };
    if !(missing_drop_fraction > 0.0 && missing_drop_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "missing_drop_fraction must lie in (0, 1], got {missing_drop_fraction}"
        )));
    }
    for r in records {
        let same = r.numeric.len() == first.numeric.len()
            && r.categorical.len() == first.categorical.len()
            && r.numeric.keys().all(|k| first.numeric.contains_key(k))
            && r.categorical.keys().all(|k| first.categorical.contains_key(k));
        if !same {
            return Err(Error::Validation(format!(
                "record {:?} has a different feature set",
                r.id
            )));
        }
    }
    let n = records.len() as f64;
    let mut schema = FeatureSchema {
        numeric: Vec::new(),
        categorical: Vec::new(),
        dropped: Vec::new(),
        dim: 0,
    };

    for name in first.numeric.keys() {
        let present: Vec<f64> = records.iter().filter_map(|r| r.numeric[name]).collect();
        let missing = records.len() - present.len();
        if missing as f64 / n > missing_drop_fraction {
            schema.dropped.push(name.clone());
            continue;
        }
        if present.is_empty() {
            return Err(Error::Schema(format!("numeric feature {name:?} has no values")));
        }
        let min = present.iter().copied().fold(f64::INFINITY, f64::min);
        let max = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = (present.iter().sum::<f64>() / present.len() as f64).clamp(min, max);
        schema.numeric.push(NumericFeature {
            name: name.clone(),
            min,
            max,
            mean,
        });
    }

    for name in first.categorical.keys() {
        let present: Vec<&String> = records
            .iter()
            .filter_map(|r| r.categorical[name].as_ref())
            .collect();
        let missing = records.len() - present.len();
        if missing as f64 / n > missing_drop_fraction {
            schema.dropped.push(name.clone());
            continue;
        }
        let mut vocabulary: Vec<String> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for v in present {
            match vocabulary.iter().position(|s| s == v) {
                Some(i) => counts[i] += 1,
                None => {
                    vocabulary.push(v.clone());
                    counts.push(1);
                }
            }
        }
        // first maximum wins ties
        let mode_idx = counts
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, usize)>, (i, &c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((i, c)),
            })
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Schema(format!("categorical feature {name:?} has no values")))?;
        schema.categorical.push(CategoricalFeature {
            name: name.clone(),
            mode: vocabulary[mode_idx].clone(),
            vocabulary,
        });
    }

    schema.dim = schema.numeric.len()
        + schema
            .categorical
            .iter()
            .map(|c| c.vocabulary.len())
            .sum::<usize>();
    Ok(schema)
}

/// Min-max scales numeric features (clamped to `[0, 1]`, mean-imputed) and
/// one-hot encodes categorical ones, in schema order.
pub fn preprocess(record: &RawRecord, schema: &FeatureSchema) -> Result<ProcessedRecord> {
    let mut x = Vec::with_capacity(schema.dim);
    for f in &schema.numeric {
        let v = record
            .numeric
            .get(&f.name)
            .ok_or_else(|| {
                Error::Encoding(format!("record {:?} lacks numeric feature {:?}", record.id, f.name))
            })?
            .unwrap_or(f.mean);
        let range = f.max - f.min;
        let scaled = if range > 0.0 {
            ((v - f.min) / range).clamp(0.0, 1.0)
        } else {
            0.0
        };
        x.push(scaled);
    }
    for c in &schema.categorical {
        let v = record.categorical.get(&c.name).ok_or_else(|| {
            Error::Encoding(format!(
                "record {:?} lacks categorical feature {:?}",
                record.id, c.name
            ))
        })?;
        let v = v.as_deref().unwrap_or(&c.mode);
        let hot = c.vocabulary.iter().position(|s| s == v).ok_or_else(|| {
            Error::Encoding(format!(
                "value {v:?} of {:?} is not in the fitted vocabulary",
                c.name
            ))
        })?;
        x.extend((0..c.vocabulary.len()).map(|i| if i == hot { 1.0 } else { 0.0 }));
    }
    Ok(ProcessedRecord {
        x,
        label_index: rating_index(&record.label)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::read_csv;
    use proptest::prelude::*;

    fn records(csv: &str) -> Vec<RawRecord> {
        read_csv(csv.as_bytes()).unwrap()
    }

    #[test]
    fn drops_mostly_missing_feature() {
        // `sparse` is missing in 3 of 5 rows (60%)
        let recs = records(
            "a,sparse,rating\n1,,AA\n2,,A\n3,,B\n4,7,C\n5,8,AA\n",
        );
        let s = fit_schema(&recs, 0.5).unwrap();
        assert_eq!(s.dropped, vec!["sparse"]);
        assert_eq!(s.dim, 1);
    }

    #[test]
    fn no_missing_means_column_means() {
        let recs = records("a,b,rating\n1,10,AA\n2,20,A\n6,30,B\n");
        let s = fit_schema(&recs, 0.5).unwrap();
        assert!(s.dropped.is_empty());
        assert_eq!(s.numeric[0].mean, 3.0);
        assert_eq!(s.numeric[1].mean, 20.0);
    }

    #[test]
    fn stats_skip_missing() {
        let recs = records("a,rating\n1,AA\n3,A\n,B\n");
        let s = fit_schema(&recs, 0.5).unwrap();
        let f = &s.numeric[0];
        assert_eq!((f.min, f.max, f.mean), (1.0, 3.0, 2.0));
        // the missing cell is imputed with the mean then scaled
        let p = preprocess(&recs[2], &s).unwrap();
        assert_eq!(p.x, vec![0.5]);
    }

    #[test]
    fn all_missing_kept_feature_is_schema_error() {
        let recs = records("a,b,rating\n1,,AA\n2,,A\n");
        assert!(matches!(fit_schema(&recs, 1.0), Err(Error::Schema(_))));
    }

    #[test]
    fn invalid_fraction_and_empty_input() {
        let recs = records("a,rating\n1,AA\n");
        assert!(matches!(fit_schema(&recs, 0.0), Err(Error::Config(_))));
        assert!(matches!(fit_schema(&recs, 1.5), Err(Error::Config(_))));
        assert!(fit_schema(&[], 0.5).is_err());
    }

    #[test]
    fn scaling_examples() {
        let recs = records("v,rating\n0,AA\n10,A\n5,B\n");
        let s = fit_schema(&recs, 0.5).unwrap();
        let scaled: Vec<f64> = recs.iter().map(|r| preprocess(r, &s).unwrap().x[0]).collect();
        assert_eq!(scaled, vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn constant_feature_scales_to_zero() {
        let recs = records("v,rating\n4,AA\n4,A\n");
        let s = fit_schema(&recs, 0.5).unwrap();
        assert_eq!(preprocess(&recs[0], &s).unwrap().x, vec![0.0]);
    }

    #[test]
    fn one_hot_encoding() {
        let recs = records("sector,rating\nA,AA\nB,A\nC,B\n,BB\nA,C\n");
        let s = fit_schema(&recs, 0.5).unwrap();
        assert_eq!(s.categorical[0].vocabulary, vec!["A", "B", "C"]);
        assert_eq!(preprocess(&recs[0], &s).unwrap().x, vec![1.0, 0.0, 0.0]);
        // missing falls back to the mode
        assert_eq!(preprocess(&recs[3], &s).unwrap().x, vec![1.0, 0.0, 0.0]);
        let unknown = records("sector,rating\nZ,AA\n");
        assert!(matches!(
            preprocess(&unknown[0], &s),
            Err(Error::Encoding(_))
        ));
    }

    #[test]
    fn schema_json_round_trip() {
        let recs = records("a,sector,rating\n1,x,AA\n3,y,A\n,x,B\n");
        let s = fit_schema(&recs, 0.5).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<FeatureSchema>(&json).unwrap(), s);
    }

    proptest! {
        #[test]
        fn numeric_components_stay_in_unit_interval(
            values in prop::collection::vec(prop::option::of(-1e6f64..1e6), 2..30),
            probe in -2e6f64..2e6,
        ) {
            prop_assume!(values.iter().any(Option::is_some));
            let mut csv = String::from("v,rating\n");
            for v in &values {
                csv.push_str(&v.map(|v| v.to_string()).unwrap_or_default());
                csv.push_str(",AA\n");
            }
            let recs = records(&csv);
            let s = fit_schema(&recs, 1.0).unwrap();
            for r in &recs {
                let a = preprocess(r, &s).unwrap();
                let b = preprocess(r, &s).unwrap();
                prop_assert!(a.x.iter().all(|v| (0.0..=1.0).contains(v)));
                prop_assert_eq!(
                    a.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    b.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                );
            }
            let mut out_of_range = recs[0].clone();
            out_of_range.numeric.insert("v".into(), Some(probe));
            let p = preprocess(&out_of_range, &s).unwrap();
            prop_assert!((0.0..=1.0).contains(&p.x[0]));
        }
    }
}
