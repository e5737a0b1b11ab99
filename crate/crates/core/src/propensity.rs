//! Per-item observation propensities estimated from popularity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::InteractionDataset;
use crate::{Error, Result};

pub const DEFAULT_EXPONENT: f64 = 0.5;
pub const DEFAULT_FLOOR: f64 = 0.1;

/// Estimated probability `w_i` that item `i` is observed by a user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityTable {
    values: Vec<f64>,
    /// Clipping floor applied so far (0 when unclipped).
    pub floor: f64,
    pub exponent: f64,
}

/// `(pop_i / max_j pop_j)^exponent`, with `pop_i` the positive count of item `i`.
///
/// Items nobody interacted with get 0 here and must be clipped before use.
pub fn estimate_popularity(train: &InteractionDataset, exponent: f64) -> Result<PropensityTable> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(exponent.is_finite() && exponent > 0.0) {
        return Err(Error::InvalidArgument(format!("propensity exponent {exponent}")));
    }
    let mut popularity = vec![0u64; train.num_items() as usize];
    for r in train.records().iter().filter(|r| r.label) {
        popularity[r.item as usize] += 1;
    }
    from_popularity(&popularity, exponent)
}

/// Same normalization as [`estimate_popularity`] over raw counts.
pub fn from_popularity(popularity: &[u64], exponent: f64) -> Result<PropensityTable> {
    let max = popularity.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::NoPositives);
    }
    let values: Vec<f64> = popularity
        .iter()
        .map(|&p| (p as f64 / max as f64).powf(exponent))
        .collect();
    let unseen: Vec<usize> = (0..values.len()).filter(|&i| values[i] == 0.0).collect();
    if !unseen.is_empty() {
        log::warn!(
            "{} item(s) have zero popularity and rely on the clipping floor: {:?}",
            unseen.len(),
            &unseen[..unseen.len().min(20)]
        );
    }
    Ok(PropensityTable {
        values,
        floor: 0.0,
        exponent,
    })
}

/// `w_i <- max(w_i, floor)`.
pub fn clip(table: &PropensityTable, floor: f64) -> Result<PropensityTable> {
    if !(floor > 0.0 && floor < 1.0) {
        return Err(Error::InvalidArgument(format!("clip floor {floor} outside (0, 1)")));
    }
    Ok(PropensityTable {
        values: table.values.iter().map(|&w| w.max(floor)).collect(),
        floor: table.floor.max(floor),
        exponent: table.exponent,
    })
}

/// All items observed with probability 1; the IPS loss then equals the naive loss.
pub fn uniform_baseline(num_items: u32) -> PropensityTable {
    PropensityTable {
        values: vec![1.0; num_items as usize],
        floor: 0.0,
        exponent: 0.0,
    }
}

impl PropensityTable {
    /// Table of given values, each required to lie in `(0, 1]`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(&w) = values.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
            return Err(Error::ZeroPropensity(w));
        }
        Ok(Self {
            values,
            floor: 0.0,
            exponent: 0.0,
        })
    }

    pub fn get(&self, item: u32) -> Option<f64> {
        self.values.get(item as usize).copied()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_items(&self) -> usize {
        self.values.len()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["item", "propensity"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `item,propensity` rows; items must be `0..n` in order.
    pub fn read_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            item: u32,
            propensity: f64,
        }
        let mut values = Vec::new();
        for (k, row) in csv::Reader::from_path(path)?.deserialize().enumerate() {
            let row: Row = row?;
            if row.item as usize != k {
                return Err(Error::InvalidArgument(format!(
                    "propensity rows must list items 0..n in order, found {} at row {k}",
                    row.item
                )));
            }
            values.push(row.propensity);
        }
        Self::from_values(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Interaction, Role};
    use proptest::prelude::*;

    fn table(pop: &[u64]) -> PropensityTable {
        from_popularity(pop, DEFAULT_EXPONENT).unwrap()
    }

    #[test]
    fn popularity_examples() {
        assert_eq!(table(&[100, 25]).values(), &[1.0, 0.5]);
        let t = table(&[9, 4, 1]);
        let expected = [1.0, 2.0 / 3.0, 1.0 / 3.0];
        for (v, e) in t.values().iter().zip(expected) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn estimate_counts_positive_labels_only() {
        let records = vec![
            Interaction { user: 0, item: 0, label: true },
            Interaction { user: 1, item: 0, label: true },
            Interaction { user: 2, item: 0, label: true },
            Interaction { user: 3, item: 0, label: true },
            Interaction { user: 0, item: 1, label: true },
            Interaction { user: 1, item: 1, label: false },
            Interaction { user: 2, item: 2, label: false },
        ];
        let d = InteractionDataset::new(4, 3, records, Role::Train).unwrap();
        let t = estimate_popularity(&d, 0.5).unwrap();
        assert_eq!(t.values(), &[1.0, 0.5, 0.0]);
        let clipped = clip(&t, 0.1).unwrap();
        assert_eq!(clipped.values(), &[1.0, 0.5, 0.1]);
    }

    #[test]
    fn clip_examples() {
        let t = PropensityTable::from_values(vec![0.01, 0.5]).unwrap();
        assert_eq!(clip(&t, 0.1).unwrap().values(), &[0.1, 0.5]);
        assert!(clip(&t, 0.0).is_err());
        assert!(clip(&t, 1.0).is_err());
    }

    #[test]
    fn uniform_examples() {
        let u = uniform_baseline(4);
        assert_eq!(u.values(), &[1.0; 4]);
        assert_eq!(clip(&u, 0.1).unwrap().values(), u.values());
    }

    #[test]
    fn empty_and_unpopular() {
        let d = InteractionDataset::new(1, 1, vec![], Role::Train).unwrap();
        assert!(matches!(estimate_popularity(&d, 0.5), Err(Error::EmptyDataset)));
        assert!(matches!(from_popularity(&[0, 0], 0.5), Err(Error::NoPositives)));
    }

    proptest! {
        #[test]
        fn clipped_table_is_bounded_and_monotone(pop in prop::collection::vec(0u64..500, 1..40), floor in 0.01f64..0.9) {
            prop_assume!(pop.iter().any(|&p| p > 0));
            let t = clip(&table(&pop), floor).unwrap();
            let max = *pop.iter().max().unwrap();
            for (i, &w) in t.values().iter().enumerate() {
                prop_assert!(w >= floor && w <= 1.0);
                prop_assert_eq!(w == 1.0, pop[i] == max);
                for (j, &v) in t.values().iter().enumerate() {
                    if pop[i] >= pop[j] {
                        prop_assert!(w >= v);
                    }
                }
            }
        }

        #[test]
        fn invariant_to_popularity_scaling(pop in prop::collection::vec(0u64..300, 1..30), k in 1u64..50) {
            prop_assume!(pop.iter().any(|&p| p > 0));
            let scaled: Vec<u64> = pop.iter().map(|p| p * k).collect();
            let (a, b) = (table(&pop), table(&scaled));
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-14);
            }
        }
    }
}
