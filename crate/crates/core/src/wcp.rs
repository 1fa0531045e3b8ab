//! Single-source weighted conformal prediction: thresholds, weighted
//! p-values and the prediction sets they induce.

use crate::domain::{check_simplex, score_abs_residual, score_one_minus_prob, FeatureMap, Label, LabeledSample};
use crate::error::{invalid, MscpError, Result};
use crate::models::{Classifier, Regressor};
use crate::quantile::WeightedScoreDistribution;
use crate::ratio::LikelihoodRatio;

/// Calibration nonconformity scores paired with their likelihood ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationScores {
    scores: Vec<f64>,
    ratios: Vec<f64>,
}

impl CalibrationScores {
    pub fn new(scores: Vec<f64>, ratios: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return invalid("calibration set is empty");
        }
        if scores.len() != ratios.len() {
            return Err(MscpError::DimensionMismatch { expected: scores.len(), got: ratios.len() });
        }
        if scores.iter().any(|s| !s.is_finite()) || ratios.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return invalid("calibration scores and ratios must be finite, ratios nonnegative");
        }
        Ok(Self { scores, ratios })
    }

    /// Unit ratios, i.e. ordinary split conformal.
    pub fn unweighted(scores: Vec<f64>) -> Result<Self> {
        let n = scores.len();
        Self::new(scores, vec![1.0; n])
    }

    /// Scores every sample and evaluates the ratio at its mapped features.
    pub fn from_samples<S, W>(
        samples: &[LabeledSample],
        scorer: &S,
        ratio: &W,
        feature_map: &FeatureMap,
    ) -> Result<Self>
    where
        S: ConformalScore + ?Sized,
        W: LikelihoodRatio + ?Sized,
    {
        let mut scores = Vec::with_capacity(samples.len());
        let mut ratios = Vec::with_capacity(samples.len());
        for s in samples {
            scores.push(scorer.score(&s.x, &s.y)?);
            ratios.push(ratio.ratio(&feature_map.apply(&s.x)?)?);
        }
        Self::new(scores, ratios)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn threshold(&self, test_ratio: f64, alpha: f64) -> Result<f64> {
        wcp_threshold(self, test_ratio, alpha)
    }
}

/// Closed interval with possibly infinite endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn full() -> Self {
        Self { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Shape of a prediction set.
#[derive(Debug, Clone, PartialEq)]
pub enum SetRegion {
    /// `{y : |y - center| <= radius}`; an infinite radius is the real line.
    Interval { center: f64, radius: f64 },
    /// Sorted, pairwise disjoint closed intervals.
    Union(Vec<Interval>),
    Labels { members: Vec<usize>, num_classes: usize },
}

/// A prediction set tagged with the coverage level it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub level: f64,
    pub region: SetRegion,
}

impl PredictionSet {
    pub fn contains(&self, y: &Label) -> Result<bool> {
        match (&self.region, y) {
            (SetRegion::Interval { center, radius }, Label::Real(v)) => Ok((v - center).abs() <= *radius),
            (SetRegion::Union(parts), Label::Real(v)) => Ok(parts.iter().any(|iv| iv.contains(*v))),
            (SetRegion::Labels { members, .. }, Label::Class(c)) => Ok(members.binary_search(c).is_ok()),
            (_, Label::Missing) => panic!("read of a placeholder label from unlabeled data"),
            _ => invalid("label kind does not match prediction set kind"),
        }
    }

    /// False when the set is unbounded (regression) or every class
    /// (classification).
    pub fn is_finite(&self) -> bool {
        match &self.region {
            SetRegion::Interval { radius, .. } => radius.is_finite(),
            SetRegion::Union(parts) => parts.iter().all(|iv| iv.lo.is_finite() && iv.hi.is_finite()),
            SetRegion::Labels { members, num_classes } => members.len() < *num_classes,
        }
    }

    /// Total Lebesgue measure for regression sets, number of labels for
    /// classification sets.
    pub fn size(&self) -> f64 {
        match &self.region {
            SetRegion::Interval { radius, .. } => 2.0 * radius,
            SetRegion::Union(parts) => parts.iter().map(Interval::length).sum(),
            SetRegion::Labels { members, .. } => members.len() as f64,
        }
    }

    /// Regression sets as a list of closed intervals; `None` for label sets.
    pub fn intervals(&self) -> Option<Vec<Interval>> {
        match &self.region {
            SetRegion::Interval { center, radius } => {
                if radius.is_infinite() {
                    Some(vec![Interval::full()])
                } else {
                    Some(vec![Interval::new(center - radius, center + radius)])
                }
            }
            SetRegion::Union(parts) => Some(parts.clone()),
            SetRegion::Labels { .. } => None,
        }
    }
}

/// Level-(1 - alpha) quantile of the weighted calibration scores with the
/// test point's mass placed at `+inf`.
pub fn wcp_threshold(cal: &CalibrationScores, test_ratio: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha {alpha} outside (0, 1)"));
    }
    WeightedScoreDistribution::from_ratios(&cal.scores, &cal.ratios, test_ratio)?.quantile(1.0 - alpha)
}

/// `{y : |y - prediction| <= threshold}`.
pub fn wcp_interval_regression(prediction: f64, threshold: f64, level: f64) -> PredictionSet {
    PredictionSet { level, region: SetRegion::Interval { center: prediction, radius: threshold } }
}

/// `{y : 1 - probs[y] <= threshold}`.
pub fn wcp_set_classification(probs: &[f64], threshold: f64, level: f64) -> Result<PredictionSet> {
    check_simplex(probs)?;
    let members = probs
        .iter()
        .enumerate()
        .filter(|(_, p)| 1.0 - **p <= threshold)
        .map(|(c, _)| c)
        .collect();
    Ok(PredictionSet { level, region: SetRegion::Labels { members, num_classes: probs.len() } })
}

/// Weighted conformal p-value
/// `(sum_i w_i 1{s_i >= s} + w_0) / (sum_i w_i + w_0)`.
pub fn weighted_p_value(cal: &CalibrationScores, test_ratio: f64, test_score: f64) -> Result<f64> {
    if !test_ratio.is_finite() || test_ratio < 0.0 {
        return invalid("test ratio must be finite and nonnegative");
    }
    if test_score.is_nan() {
        return invalid("test score is NaN");
    }
    let total = test_ratio + cal.ratios.iter().sum::<f64>();
    if total <= 0.0 {
        return Err(MscpError::DegenerateWeights);
    }
    let upper: f64 = cal
        .scores
        .iter()
        .zip(&cal.ratios)
        .filter(|(s, _)| **s >= test_score)
        .map(|(_, w)| w)
        .sum();
    Ok((upper + test_ratio) / total)
}

/// Nonconformity score together with its inversion into a prediction set.
pub trait ConformalScore {
    fn score(&self, x: &[f64], y: &Label) -> Result<f64>;

    /// `{y : score(x, y) <= threshold}`, tagged with `level`.
    fn invert(&self, x: &[f64], threshold: f64, level: f64) -> Result<PredictionSet>;
}

/// Absolute residual around a regressor's point prediction.
#[derive(Debug, Clone)]
pub struct AbsResidual<M> {
    pub model: M,
    pub feature_map: FeatureMap,
}

impl<M: Regressor> AbsResidual<M> {
    pub fn new(model: M) -> Self {
        Self { model, feature_map: FeatureMap::Identity }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.model.predict(&self.feature_map.apply(x)?))
    }
}

impl<M: Regressor> ConformalScore for AbsResidual<M> {
    fn score(&self, x: &[f64], y: &Label) -> Result<f64> {
        Ok(score_abs_residual(self.predict(x)?, y.real()?))
    }

    fn invert(&self, x: &[f64], threshold: f64, level: f64) -> Result<PredictionSet> {
        Ok(wcp_interval_regression(self.predict(x)?, threshold, level))
    }
}

/// One minus the predicted probability of the label.
#[derive(Debug, Clone)]
pub struct OneMinusProb<M> {
    pub model: M,
    pub feature_map: FeatureMap,
}

impl<M: Classifier> OneMinusProb<M> {
    pub fn new(model: M, feature_map: FeatureMap) -> Self {
        Self { model, feature_map }
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.model.predict_proba(&self.feature_map.apply(x)?))
    }
}

impl<M: Classifier> ConformalScore for OneMinusProb<M> {
    fn score(&self, x: &[f64], y: &Label) -> Result<f64> {
        score_one_minus_prob(&self.probabilities(x)?, y.class()?)
    }

    fn invert(&self, x: &[f64], threshold: f64, level: f64) -> Result<PredictionSet> {
        wcp_set_classification(&self.probabilities(x)?, threshold, level)
    }
}

/// Weighted conformal set at `x` from precomputed calibration scores.
pub fn weighted_prediction_set<S, W>(
    cal: &CalibrationScores,
    ratio: &W,
    feature_map: &FeatureMap,
    scorer: &S,
    x: &[f64],
    alpha: f64,
) -> Result<PredictionSet>
where
    S: ConformalScore + ?Sized,
    W: LikelihoodRatio + ?Sized,
{
    let test_ratio = ratio.ratio(&feature_map.apply(x)?)?;
    let threshold = wcp_threshold(cal, test_ratio, alpha)?;
    scorer.invert(x, threshold, 1.0 - alpha)
}
