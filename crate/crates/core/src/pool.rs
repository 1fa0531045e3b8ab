//! Pooled weighted conformal prediction across sources.
//!
//! Pooling permutes the concatenated calibration sets, so each pooled point
//! follows the size-weighted mixture `sum_k (n_k / n) P_k`. The matching
//! ratio against that mixture is recovered from per-source ratios
//! `w_k = dQ/dP_k` through `1 / wbar = sum_k lambda_k / w_k`.
//!
//! The hierarchical variant draws a domain index per sample, estimates the
//! mixture weights on one half of the data, clips them at `1 / N2`, and
//! calibrates on the other half.

use rand::seq::SliceRandom;

use crate::domain::{DomainDataset, FeatureMap, LabeledSample};
use crate::error::{invalid, MscpError, Result};
use crate::ratio::LikelihoodRatio;
use crate::rng;
use crate::wcp::{weighted_prediction_set, CalibrationScores, ConformalScore, PredictionSet};

/// Concatenated source calibration sets in seeded random order.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledCalibration {
    pub samples: Vec<LabeledSample>,
    pub source_sizes: Vec<usize>,
    pub permutation_seed: u64,
}

impl PooledCalibration {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mixture weights `n_k / n` of the pooled covariate law.
    pub fn proportions(&self) -> MixtureWeights {
        let n = self.samples.len() as f64;
        MixtureWeights(self.source_sizes.iter().map(|&m| m as f64 / n).collect())
    }
}

pub fn pool_calibration(cal_sets: &[DomainDataset], seed: u64) -> Result<PooledCalibration> {
    if cal_sets.is_empty() {
        return invalid("no calibration sets to pool");
    }
    if let Some(empty) = cal_sets.iter().find(|d| d.is_empty()) {
        return invalid(format!("calibration set of domain {} is empty", empty.domain_id));
    }
    let mut samples: Vec<LabeledSample> = cal_sets.iter().flat_map(|d| d.samples.iter().cloned()).collect();
    samples.shuffle(&mut rng::seeded(seed));
    Ok(PooledCalibration {
        samples,
        source_sizes: cal_sets.iter().map(DomainDataset::len).collect(),
        permutation_seed: seed,
    })
}

/// Nonnegative weights over `K` sources summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights(Vec<f64>);

impl MixtureWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("mixture needs at least one component");
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return invalid("mixture weights must be finite and nonnegative");
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("mixture weights sum to {total}, not 1"));
        }
        Ok(Self(values))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Ratio `dQ / d(sum_k lambda_k P_k)` assembled from per-component ratios.
#[derive(Debug, Clone)]
pub struct MixtureRatio<W> {
    components: Vec<W>,
    weights: MixtureWeights,
}

impl<W: LikelihoodRatio> MixtureRatio<W> {
    pub fn weights(&self) -> &MixtureWeights {
        &self.weights
    }

    pub fn components(&self) -> &[W] {
        &self.components
    }
}

pub fn mixture_ratio_from_components<W: LikelihoodRatio>(
    components: Vec<W>,
    weights: MixtureWeights,
) -> Result<MixtureRatio<W>> {
    if components.len() != weights.len() {
        return Err(MscpError::DimensionMismatch { expected: weights.len(), got: components.len() });
    }
    Ok(MixtureRatio { components, weights })
}

impl<W: LikelihoodRatio> LikelihoodRatio for MixtureRatio<W> {
    /// `(sum_k lambda_k / w_k(z))^-1`. A component with `w_k(z) = 0`
    /// contributes `+inf` and forces the result to zero; one with
    /// `w_k(z) = +inf` contributes nothing. If nothing contributes, `z` lies
    /// outside every source support.
    fn ratio(&self, z: &[f64]) -> Result<f64> {
        let mut inverse = 0.0;
        for (w, &lambda) in self.components.iter().zip(self.weights.values()) {
            if lambda == 0.0 {
                continue;
            }
            let wk = w.ratio(z)?;
            if wk.is_nan() || wk < 0.0 {
                return Err(MscpError::Numerical(format!("component ratio {wk} is invalid")));
            }
            if wk == 0.0 {
                return Ok(0.0);
            }
            inverse += lambda / wk;
        }
        if inverse == 0.0 {
            return Err(MscpError::OutOfSupport);
        }
        Ok(1.0 / inverse)
    }
}

/// Weighted conformal set over the pooled calibration data.
pub fn pooled_wcp_set<S, W>(
    pooled: &PooledCalibration,
    mixture_ratio: &W,
    feature_map: &FeatureMap,
    scorer: &S,
    x: &[f64],
    alpha: f64,
) -> Result<PredictionSet>
where
    S: ConformalScore + ?Sized,
    W: LikelihoodRatio + ?Sized,
{
    if pooled.is_empty() {
        return invalid("pooled calibration set is empty");
    }
    let cal = CalibrationScores::from_samples(&pooled.samples, scorer, mixture_ratio, feature_map)?;
    weighted_prediction_set(&cal, mixture_ratio, feature_map, scorer, x, alpha)
}

/// Empirical domain frequencies `count(k) / N2` from 1-based indices.
pub fn estimate_tau(domain_indices: &[usize], k: usize) -> Result<MixtureWeights> {
    if domain_indices.is_empty() {
        return invalid("no domain indices to estimate mixture weights from");
    }
    let mut counts = vec![0usize; k];
    for &idx in domain_indices {
        if idx == 0 || idx > k {
            return invalid(format!("domain index {idx} outside [1, {k}]"));
        }
        counts[idx - 1] += 1;
    }
    let n = domain_indices.len() as f64;
    Ok(MixtureWeights(counts.into_iter().map(|c| c as f64 / n).collect()))
}

/// `beta_k = max(tau_k, 1/N2) / sum_j max(tau_j, 1/N2)`.
pub fn adjusted_beta(tau_hat: &MixtureWeights, n2: usize) -> Result<MixtureWeights> {
    if n2 == 0 {
        return invalid("N2 must be positive");
    }
    let eps = 1.0 / n2 as f64;
    let clipped: Vec<f64> = tau_hat.values().iter().map(|t| t.max(eps)).collect();
    let total: f64 = clipped.iter().sum();
    Ok(MixtureWeights(clipped.into_iter().map(|c| c / total).collect()))
}

/// Hierarchical data `(k_i, x_i, y_i)` split into a calibration half with the
/// domain tags discarded and an index half used only for `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalSplit {
    pub calibration: Vec<LabeledSample>,
    pub domain_indices: Vec<usize>,
}

/// Seeded 50/50 partition of tagged samples (halves rounded up toward the
/// calibration side).
pub fn partition_hierarchical(tagged: &[(usize, LabeledSample)], seed: u64) -> Result<HierarchicalSplit> {
    if tagged.len() < 2 {
        return invalid("hierarchical partition needs at least two samples");
    }
    let mut order: Vec<usize> = (0..tagged.len()).collect();
    order.shuffle(&mut rng::seeded(seed));
    let n1 = tagged.len().div_ceil(2);
    Ok(HierarchicalSplit {
        calibration: order[..n1].iter().map(|&i| tagged[i].1.clone()).collect(),
        domain_indices: order[n1..].iter().map(|&i| tagged[i].0).collect(),
    })
}

/// Weighted set on the calibration half with the adjusted ratio built from
/// clipped mixture weights `beta` and the per-source ratios.
pub fn hierarchical_pooled_set<S, W>(
    calibration: &[LabeledSample],
    beta: &MixtureWeights,
    component_ratios: &[W],
    feature_map: &FeatureMap,
    scorer: &S,
    x: &[f64],
    alpha: f64,
) -> Result<PredictionSet>
where
    S: ConformalScore + ?Sized,
    W: LikelihoodRatio,
{
    if calibration.is_empty() {
        return invalid("hierarchical calibration half is empty");
    }
    let ratio = mixture_ratio_from_components(component_ratios.iter().collect(), beta.clone())?;
    let cal = CalibrationScores::from_samples(calibration, scorer, &ratio, feature_map)?;
    weighted_prediction_set(&cal, &ratio, feature_map, scorer, x, alpha)
}

/// `1 - C(2n, n) / 4^n`, a lower bound on the total variation between `2n`
/// coordinates pooled from two disjoint uniforms and their i.i.d. mixture
/// counterpart. The central binomial probability is built up through
/// `r_k = r_{k-1} (2k - 1) / (2k)`, which never overflows.
pub fn tv_lower_bound(n: u64) -> Result<f64> {
    if n == 0 {
        return invalid("n must be at least 1");
    }
    let mut central = 1.0f64;
    for k in 1..=n {
        central *= (2 * k - 1) as f64 / (2 * k) as f64;
    }
    Ok(1.0 - central)
}
