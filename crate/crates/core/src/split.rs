//! Stratified 80/20 train/validation split with 5 stratified folds over the
//! training part.
//!
//! Per class `c` with `n_c` rows: the class's row indices are shuffled with
//! `SplitMix64::new(mix(seed, c, 0))`, the first `floor(0.2 * n_c + 0.5)` go
//! to validation and the rest to training. Training rows are then dealt
//! round-robin into the folds, class 0 first, with the fold cursor carried
//! over from one class to the next so overall fold sizes differ by at most
//! one.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::rng::{mix, SplitMix64};

pub const N_FOLDS: usize = 5;
pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize)]
#[serde(tag = "code")]
pub enum SplitError {
    #[error("class {label:?} has {count} rows; at least 2 are needed to stratify")]
    ClassTooSmall { label: String, count: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

impl SplitPlan {
    /// Training rows outside fold `k`, in fold order.
    pub fn fold_train_indices(&self, k: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect()
    }
}

/// Number of validation rows taken from a class of size `n_c`.
pub fn validation_count(n_c: usize) -> usize {
    (VALIDATION_FRACTION * n_c as f64 + 0.5).floor() as usize
}

pub fn make_split(d: &Dataset, seed: u64) -> Result<SplitPlan, SplitError> {
    let labels = d.labels();
    let label_names = &d.label_schema().categories;
    make_split_labels(&labels, seed).map_err(|(class, count)| SplitError::ClassTooSmall {
        label: label_names[class].clone(),
        count,
    })
}

/// Split over bare 0/1 labels. The error carries `(class, count)`.
pub fn make_split_labels(labels: &[u8], seed: u64) -> Result<SplitPlan, (usize, usize)> {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    for (class, rows) in by_class.iter().enumerate() {
        if rows.len() < 2 {
            return Err((class, rows.len()));
        }
    }

    let mut train_indices = Vec::new();
    let mut validation_indices = Vec::new();
    let mut folds = vec![Vec::new(); N_FOLDS];
    let mut cursor = 0;
    for (class, mut rows) in by_class.into_iter().enumerate() {
        SplitMix64::new(mix(seed, class as u64, 0)).shuffle(&mut rows);
        let n_val = validation_count(rows.len());
        validation_indices.extend_from_slice(&rows[..n_val]);
        for &i in &rows[n_val..] {
            folds[cursor % N_FOLDS].push(i);
            cursor += 1;
        }
        train_indices.extend_from_slice(&rows[n_val..]);
    }
    train_indices.sort_unstable();
    validation_indices.sort_unstable();
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(SplitPlan {
        train_indices,
        validation_indices,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(pos: usize, neg: usize) -> Vec<u8> {
        let mut v = vec![1u8; pos];
        v.extend(std::iter::repeat_n(0u8, neg));
        v
    }

    fn count_pos(idx: &[usize], labels: &[u8]) -> usize {
        idx.iter().filter(|&&i| labels[i] == 1).count()
    }

    #[test]
    fn ten_rows_balanced() {
        let y = labels(5, 5);
        let plan = make_split_labels(&y, 11).unwrap();
        assert_eq!(plan.train_indices.len(), 8);
        assert_eq!(plan.validation_indices.len(), 2);
        assert_eq!(count_pos(&plan.train_indices, &y), 4);
        assert_eq!(count_pos(&plan.validation_indices, &y), 1);
        let mut sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![2, 2, 2, 1, 1]);
    }

    #[test]
    fn hundred_rows_thirty_positive() {
        let y = labels(30, 70);
        let plan = make_split_labels(&y, 5).unwrap();
        assert_eq!(count_pos(&plan.validation_indices, &y), 6);
        assert_eq!(plan.validation_indices.len() - 6, 14);
    }

    #[test]
    fn validation_count_rounds_half_up() {
        // brute-force: smallest k with |k - 0.2 n| <= 0.5, preferring up on ties
        for n in 0..200usize {
            let exact = n as f64 / 5.0;
            let expected = (0..=n)
                .filter(|&k| (k as f64 - exact).abs() <= 0.5)
                .max()
                .unwrap();
            assert_eq!(validation_count(n), expected, "n = {n}");
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let y = labels(13, 29);
        assert_eq!(make_split_labels(&y, 77), make_split_labels(&y, 77));
        assert_ne!(make_split_labels(&y, 77), make_split_labels(&y, 78));
    }

    #[test]
    fn tiny_class_rejected() {
        let y = labels(1, 9);
        assert_eq!(make_split_labels(&y, 0).unwrap_err(), (1, 1));
    }

    #[test]
    fn class_too_small_names_label() {
        let d = crate::dataset::parse_csv(b"a,y\nx,no\nz,no\nx,no\nz,yes\n", "y").unwrap();
        assert_eq!(
            make_split(&d, 1).unwrap_err(),
            SplitError::ClassTooSmall {
                label: "yes".into(),
                count: 1
            }
        );
    }

    #[test]
    fn fold_train_indices_excludes_fold() {
        let y = labels(20, 20);
        let plan = make_split_labels(&y, 3).unwrap();
        for k in 0..N_FOLDS {
            let train = plan.fold_train_indices(k);
            assert_eq!(train.len() + plan.folds[k].len(), plan.train_indices.len());
            assert!(train.iter().all(|i| !plan.folds[k].contains(i)));
        }
    }
}
