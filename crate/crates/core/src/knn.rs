//! k-nearest-neighbor voting over precomputed distance rows.
//!
//! Ties on distance go to the lower train index. Ties in the vote go to the
//! label of the single nearest neighbor.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::ncd::DistanceMatrix;
use crate::par;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborVote {
    /// Effective k after clamping to the train size.
    pub k: usize,
    pub neighbor_indices: Vec<usize>,
    pub predicted: Label,
}

/// Total order on distances with NaN sorted last.
fn cmp_distance<T: PartialOrd>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or_else(|| {
        let is_nan = |x: &T| x.partial_cmp(x).is_none();
        is_nan(a).cmp(&is_nan(b))
    })
}

fn by_distance_then_index<T: PartialOrd>(d: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| cmp_distance(&d[a], &d[b]).then(a.cmp(&b))
}

/// Train indices ordered nearest first.
pub fn neighbor_order<T: PartialOrd + Copy>(distances: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..distances.len()).collect();
    idx.sort_unstable_by(by_distance_then_index(distances));
    idx
}

fn vote(af_count: usize, k: usize, nearest: Label) -> Label {
    match (2 * af_count).cmp(&k) {
        Ordering::Greater => Label::Af,
        Ordering::Less => Label::NonAf,
        Ordering::Equal => nearest,
    }
}

fn check_inputs(distances: usize, labels: usize, k: usize) -> Result<()> {
    if distances != labels {
        return Err(Error::LengthMismatch { left: distances, right: labels });
    }
    if distances == 0 {
        return Err(Error::EmptyInput("training labels"));
    }
    if k == 0 {
        return Err(Error::config("k", "k must be at least 1"));
    }
    Ok(())
}

/// Majority vote of the `k` nearest train items. `k` above the train size is
/// clamped (the returned vote's `k` shows the effective value).
pub fn classify_row<T: PartialOrd + Copy>(distances: &[T], train_labels: &[Label], k: usize) -> Result<NeighborVote> {
    check_inputs(distances.len(), train_labels.len(), k)?;
    let k_eff = k.min(distances.len());
    let mut idx: Vec<usize> = (0..distances.len()).collect();
    let cmp = by_distance_then_index(distances);
    if k_eff < idx.len() {
        idx.select_nth_unstable_by(k_eff - 1, &cmp);
        idx.truncate(k_eff);
    }
    idx.sort_unstable_by(&cmp);
    let af = idx.iter().filter(|&&i| train_labels[i] == Label::Af).count();
    Ok(NeighborVote {
        k: k_eff,
        predicted: vote(af, k_eff, train_labels[idx[0]]),
        neighbor_indices: idx,
    })
}

/// Predictions of one matrix for several k values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KSweep {
    /// Requested k values, in the order given.
    pub k_values: Vec<usize>,
    /// `predictions[q][row]` is the prediction for `k_values[q]`.
    pub predictions: Vec<Vec<Label>>,
    /// `(requested, effective)` for every k clamped to the train size.
    pub clamped: Vec<(usize, usize)>,
}

impl KSweep {
    pub fn for_k(&self, k: usize) -> Option<&[Label]> {
        self.k_values.iter().position(|&x| x == k).map(|q| self.predictions[q].as_slice())
    }
}

/// Classifies every matrix row for every k. Each row is sorted once and the
/// running AF count along that order answers all k values.
pub fn sweep_k(matrix: &DistanceMatrix, train_labels: &[Label], k_values: &[usize]) -> Result<KSweep> {
    if k_values.is_empty() {
        return Err(Error::config("k", "no k values given"));
    }
    check_inputs(matrix.cols(), train_labels.len(), *k_values.iter().min().unwrap())?;
    let n_train = matrix.cols();
    let effective: Vec<usize> = k_values.iter().map(|&k| k.min(n_train)).collect();
    let clamped: Vec<(usize, usize)> = k_values
        .iter()
        .zip(&effective)
        .filter(|(k, e)| k != e)
        .map(|(&k, &e)| (k, e))
        .collect();
    if !clamped.is_empty() {
        log::warn!("{} k value(s) exceed the train size {n_train} and were clamped", clamped.len());
    }
    let max_k = *effective.iter().max().unwrap();

    let per_row: Vec<Vec<Label>> = par::map_range(matrix.rows(), |i| {
        let order = neighbor_order(matrix.row(i));
        let mut prefix_af = Vec::with_capacity(max_k + 1);
        prefix_af.push(0usize);
        for &j in &order[..max_k] {
            let last = *prefix_af.last().unwrap();
            prefix_af.push(last + usize::from(train_labels[j] == Label::Af));
        }
        let nearest = train_labels[order[0]];
        effective.iter().map(|&k| vote(prefix_af[k], k, nearest)).collect()
    });

    let predictions = (0..k_values.len())
        .map(|q| per_row.iter().map(|row| row[q]).collect())
        .collect();
    Ok(KSweep {
        k_values: k_values.to_vec(),
        predictions,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Af as A, NonAf as B};

    #[test]
    fn nearest_neighbor() {
        assert_eq!(classify_row(&[0.4, 0.2], &[A, B], 1).unwrap().predicted, B);
    }

    #[test]
    fn majority_of_three() {
        assert_eq!(classify_row(&[0.1, 0.2, 0.3, 0.4], &[A, B, A, B], 3).unwrap().predicted, A);
    }

    #[test]
    fn even_vote_goes_to_nearest() {
        assert_eq!(classify_row(&[0.1, 0.2], &[A, B], 2).unwrap().predicted, A);
        assert_eq!(classify_row(&[0.3, 0.2], &[A, B], 2).unwrap().predicted, B);
    }

    #[test]
    fn distance_tie_lower_index() {
        let v = classify_row(&[0.2, 0.1, 0.1, 0.1], &[A, B, A, B], 2).unwrap();
        assert_eq!(v.neighbor_indices, vec![1, 2]);
        assert_eq!(v.predicted, B);
    }

    #[test]
    fn k_is_clamped() {
        let v = classify_row(&[0.1, 0.2, 0.3], &[A, B, B], 10).unwrap();
        assert_eq!(v.k, 3);
        assert_eq!(v.neighbor_indices.len(), 3);
        assert_eq!(v.predicted, B);
    }

    #[test]
    fn bad_inputs() {
        assert!(classify_row(&[0.1], &[A, B], 1).is_err());
        assert!(classify_row::<f32>(&[], &[], 1).is_err());
        assert!(classify_row(&[0.1], &[A], 0).is_err());
    }

    fn matrix(rows: usize, cols: usize, values: Vec<f32>) -> DistanceMatrix {
        DistanceMatrix {
            test_ids: (0..rows).map(|i| format!("t{i}")).collect(),
            train_ids: (0..cols).map(|i| format!("r{i}")).collect(),
            values,
            scheme: String::new(),
            fingerprint: String::new(),
        }
    }

    #[test]
    fn sweep_single_k_matches_classify() {
        let m = matrix(2, 4, vec![0.4, 0.1, 0.3, 0.2, 0.9, 0.8, 0.1, 0.5]);
        let labels = [A, B, A, B];
        let s = sweep_k(&m, &labels, &[1, 3, 99]).unwrap();
        for (q, &k) in [1usize, 3, 99].iter().enumerate() {
            for i in 0..2 {
                assert_eq!(s.predictions[q][i], classify_row(m.row(i), &labels, k).unwrap().predicted);
            }
        }
        assert_eq!(s.clamped, vec![(99, 4)]);
        assert_eq!(s.for_k(3).unwrap().len(), 2);
    }

    #[test]
    fn sweep_clamped_ks_agree() {
        let m = matrix(1, 3, vec![0.3, 0.2, 0.1]);
        let s = sweep_k(&m, &[A, A, B], &[5, 50]).unwrap();
        assert_eq!(s.predictions[0], s.predictions[1]);
    }
}
