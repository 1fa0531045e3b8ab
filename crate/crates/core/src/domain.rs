//! Shared data types, nonconformity scores, data splitting and the feature
//! map applied before likelihood ratios are evaluated.

use std::borrow::Cow;

use rand::seq::SliceRandom;

use crate::error::{invalid, MscpError, Result};
use crate::rng;

/// Response attached to a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Real(f64),
    Class(usize),
    /// Placeholder carried by unlabeled data. Reading it is a bug.
    Missing,
}

impl Label {
    /// Real-valued response. Panics on the unlabeled placeholder.
    pub fn real(&self) -> Result<f64> {
        match *self {
            Label::Real(v) => Ok(v),
            Label::Class(_) => invalid("expected a real label, found a class label"),
            Label::Missing => panic!("read of a placeholder label from unlabeled data"),
        }
    }

    /// Class index. Panics on the unlabeled placeholder.
    pub fn class(&self) -> Result<usize> {
        match *self {
            Label::Class(c) => Ok(c),
            Label::Real(_) => invalid("expected a class label, found a real label"),
            Label::Missing => panic!("read of a placeholder label from unlabeled data"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: Label,
}

impl LabeledSample {
    pub fn new(x: Vec<f64>, y: Label) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRole {
    Train,
    Calibration,
    Unlabeled,
}

/// Samples from one domain. `domain_id` is 1-based for sources; 0 marks the
/// target domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain_id: usize,
    pub samples: Vec<LabeledSample>,
    pub split: SplitRole,
}

impl DomainDataset {
    pub fn new(domain_id: usize, samples: Vec<LabeledSample>, split: SplitRole) -> Self {
        Self { domain_id, samples, split }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.x.as_slice()).collect()
    }

    pub fn dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.x.len())
    }
}

/// Map from raw covariates to the representation in which likelihood ratios
/// are evaluated.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum FeatureMap {
    #[default]
    Identity,
    /// `z = matrix * x + offset`, one matrix row per output coordinate.
    Affine { matrix: Vec<Vec<f64>>, offset: Vec<f64> },
}

impl FeatureMap {
    pub fn affine(matrix: Vec<Vec<f64>>, offset: Vec<f64>) -> Result<Self> {
        if matrix.is_empty() {
            return invalid("affine feature map needs at least one output row");
        }
        if matrix.len() != offset.len() {
            return Err(MscpError::DimensionMismatch { expected: matrix.len(), got: offset.len() });
        }
        let cols = matrix[0].len();
        if matrix.iter().any(|row| row.len() != cols) {
            return invalid("affine feature map rows differ in length");
        }
        Ok(FeatureMap::Affine { matrix, offset })
    }

    /// Coordinate projection onto the first `keep` of `input_dim` inputs.
    pub fn leading_coordinates(keep: usize, input_dim: usize) -> Result<Self> {
        if keep == 0 || keep > input_dim {
            return invalid(format!("cannot keep {keep} of {input_dim} coordinates"));
        }
        let matrix = (0..keep)
            .map(|r| (0..input_dim).map(|c| if r == c { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::affine(matrix, vec![0.0; keep])
    }

    pub fn apply<'a>(&self, x: &'a [f64]) -> Result<Cow<'a, [f64]>> {
        match self {
            FeatureMap::Identity => Ok(Cow::Borrowed(x)),
            FeatureMap::Affine { matrix, offset } => {
                let cols = matrix[0].len();
                if x.len() != cols {
                    return Err(MscpError::DimensionMismatch { expected: cols, got: x.len() });
                }
                let z = matrix
                    .iter()
                    .zip(offset)
                    .map(|(row, b)| row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
                    .collect();
                Ok(Cow::Owned(z))
            }
        }
    }
}

/// Absolute residual `|y - prediction|`.
pub fn score_abs_residual(prediction: f64, y: f64) -> f64 {
    (y - prediction).abs()
}

/// `1 - probs[y]` for a predicted class-probability vector.
pub fn score_one_minus_prob(probs: &[f64], y: usize) -> Result<f64> {
    check_simplex(probs)?;
    if y >= probs.len() {
        return invalid(format!("class {y} out of range for {} classes", probs.len()));
    }
    Ok(1.0 - probs[y])
}

pub(crate) fn check_simplex(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return invalid("empty probability vector");
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return invalid("probability vector has negative or non-finite entries");
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return invalid(format!("probability vector sums to {total}, not 1"));
    }
    Ok(())
}

/// Seeded shuffle followed by a cut at `round(train_fraction * n)`, rounding
/// halves up. Returns `(train, calibration)`.
pub fn split_dataset(
    data: &DomainDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset)> {
    if data.len() < 2 {
        return invalid(format!("cannot split a dataset of {} samples", data.len()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return invalid(format!("train fraction {train_fraction} outside (0, 1)"));
    }
    let n = data.len();
    let n_train = (train_fraction * n as f64 + 0.5).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| data.samples[i].clone()).collect::<Vec<_>>();
    Ok((
        DomainDataset::new(data.domain_id, pick(&order[..n_train]), SplitRole::Train),
        DomainDataset::new(data.domain_id, pick(&order[n_train..]), SplitRole::Calibration),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(n: usize) -> DomainDataset {
        let samples = (0..n).map(|i| LabeledSample::new(vec![i as f64], Label::Real(i as f64))).collect();
        DomainDataset::new(1, samples, SplitRole::Calibration)
    }

    #[test]
    fn abs_residual_examples() {
        assert_eq!(score_abs_residual(1.0, 1.0), 0.0);
        assert_eq!(score_abs_residual(0.5, 2.0), 1.5);
        assert_eq!(score_abs_residual(-1.0, 1.0), 2.0);
    }

    #[test]
    fn one_minus_prob_examples() {
        assert_eq!(score_one_minus_prob(&[1.0, 0.0, 0.0], 0).unwrap(), 0.0);
        assert!((score_one_minus_prob(&[0.2, 0.8], 1).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(score_one_minus_prob(&[0.25; 4], 3).unwrap(), 0.75);
    }

    #[test]
    fn one_minus_prob_rejects_bad_input() {
        assert!(score_one_minus_prob(&[0.5, 0.5], 2).is_err());
        assert!(score_one_minus_prob(&[0.5, 0.6], 0).is_err());
        assert!(score_one_minus_prob(&[1.2, -0.2], 0).is_err());
    }

    #[test]
    fn split_sizes_round_half_up() {
        let (tr, cal) = split_dataset(&dataset(10), 0.5, 7).unwrap();
        assert_eq!((tr.len(), cal.len()), (5, 5));
        let (tr, cal) = split_dataset(&dataset(3), 0.5, 1).unwrap();
        assert_eq!((tr.len(), cal.len()), (2, 1));
        assert_eq!(tr.split, SplitRole::Train);
        assert_eq!(cal.split, SplitRole::Calibration);
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_dataset(&dataset(40), 0.5, 3).unwrap();
        let b = split_dataset(&dataset(40), 0.5, 3).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&dataset(40), 0.5, 4).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn split_rejects_tiny_input() {
        assert!(split_dataset(&dataset(0), 0.5, 1).is_err());
        assert!(split_dataset(&dataset(1), 0.5, 1).is_err());
        assert!(split_dataset(&dataset(5), 1.0, 1).is_err());
    }

    #[test]
    #[should_panic(expected = "placeholder label")]
    fn placeholder_label_read_panics() {
        let _ = Label::Missing.real();
    }

    #[test]
    fn affine_map_projects() {
        let map = FeatureMap::leading_coordinates(2, 3).unwrap();
        assert_eq!(map.apply(&[1.0, 2.0, 3.0]).unwrap().as_ref(), &[1.0, 2.0]);
        assert!(map.apply(&[1.0]).is_err());
        let shifted = FeatureMap::affine(vec![vec![2.0, 0.0]], vec![1.0]).unwrap();
        assert_eq!(shifted.apply(&[3.0, 5.0]).unwrap().as_ref(), &[7.0]);
        assert_eq!(FeatureMap::Identity.apply(&[4.0]).unwrap().as_ref(), &[4.0]);
    }

    proptest! {
        #[test]
        fn split_partitions(n in 2usize..60, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let data = dataset(n);
            let (tr, cal) = split_dataset(&data, frac, seed).unwrap();
            prop_assert_eq!(tr.len() + cal.len(), n);
            let mut ids: Vec<i64> = tr.samples.iter().chain(&cal.samples).map(|s| s.x[0] as i64).collect();
            ids.sort();
            prop_assert_eq!(ids, (0..n as i64).collect::<Vec<_>>());
        }

        #[test]
        fn abs_residual_symmetric(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            prop_assert!(score_abs_residual(a, b) >= 0.0);
            prop_assert_eq!(score_abs_residual(a, b), score_abs_residual(b, a));
        }
    }
}
