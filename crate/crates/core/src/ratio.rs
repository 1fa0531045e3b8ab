//! Likelihood ratios `w = dQ/dP` between target and source covariate laws.
//!
//! Two families are provided. Oracles evaluate closed-form Gaussian (or
//! Gaussian-mixture) densities and are exact. The classifier route fits a
//! logistic model separating source features (class 0) from target features
//! (class 1) and converts its odds into a ratio:
//! `w(z) = (n0 / n1) * P(1 | z) / P(0 | z)`, clipped to `[w_min, w_max]`.

use rand::seq::index;

use crate::error::{invalid, MscpError, Result};
use crate::models::{gradient_descent, squared_distance};
use crate::rng;

/// Anything that evaluates a likelihood ratio at a (mapped) feature point.
pub trait LikelihoodRatio {
    fn ratio(&self, z: &[f64]) -> Result<f64>;
}

impl<T: LikelihoodRatio + ?Sized> LikelihoodRatio for &T {
    fn ratio(&self, z: &[f64]) -> Result<f64> {
        (**self).ratio(z)
    }
}

impl<T: LikelihoodRatio + ?Sized> LikelihoodRatio for Box<T> {
    fn ratio(&self, z: &[f64]) -> Result<f64> {
        (**self).ratio(z)
    }
}

/// Ratio identically equal to one (no covariate shift).
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitRatio;

impl LikelihoodRatio for UnitRatio {
    fn ratio(&self, _z: &[f64]) -> Result<f64> {
        Ok(1.0)
    }
}

/// Isotropic Gaussian `N(mean, variance * I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl GaussianLaw {
    pub fn new(mean: Vec<f64>, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return invalid(format!("variance {variance} must be positive"));
        }
        if mean.is_empty() {
            return invalid("Gaussian mean must have at least one coordinate");
        }
        Ok(Self { mean, variance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.mean.len() {
            return Err(MscpError::DimensionMismatch { expected: self.mean.len(), got: z.len() });
        }
        let d = z.len() as f64;
        Ok(-0.5 * d * (std::f64::consts::TAU * self.variance).ln()
            - squared_distance(z, &self.mean) / (2.0 * self.variance))
    }
}

fn mixture_log_density(components: &[(f64, GaussianLaw)], z: &[f64]) -> Result<f64> {
    let terms = components
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .map(|(w, law)| Ok(w.ln() + law.log_density(z)?))
        .collect::<Result<Vec<f64>>>()?;
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(max);
    }
    Ok(max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln())
}

/// Which features the logistic ratio model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RatioBasis {
    Linear,
    /// Coordinates and their squares; exact for isotropic Gaussian pairs.
    #[default]
    Quadratic,
}

impl RatioBasis {
    fn expand(self, z: &[f64]) -> Vec<f64> {
        match self {
            RatioBasis::Linear => z.to_vec(),
            RatioBasis::Quadratic => z.iter().copied().chain(z.iter().map(|v| v * v)).collect(),
        }
    }
}

/// Fitted probabilistic classifier turned into a ratio estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRatio {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// `n0 / n1`, source count over target count.
    pub prior_correction: f64,
    pub clip: (f64, f64),
    pub basis: RatioBasis,
    /// Per-feature centering and scaling applied after basis expansion.
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    input_dim: usize,
}

impl LogisticRatio {
    fn standardized(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.input_dim {
            return Err(MscpError::DimensionMismatch { expected: self.input_dim, got: z.len() });
        }
        let mut f = self.basis.expand(z);
        for ((v, c), s) in f.iter_mut().zip(&self.center).zip(&self.scale) {
            *v = (*v - c) / s;
        }
        Ok(f)
    }

    /// Affine classifier score (log-odds of the target class).
    pub fn log_odds(&self, z: &[f64]) -> Result<f64> {
        let f = self.standardized(z)?;
        Ok(self.bias + self.weights.iter().zip(&f).map(|(w, v)| w * v).sum::<f64>())
    }
}

/// Likelihood-ratio model.
#[derive(Debug, Clone, PartialEq)]
pub enum RatioModel {
    OracleGaussian { source: GaussianLaw, target: GaussianLaw },
    /// Exact ratio of two Gaussian mixtures given as `(weight, law)` pairs.
    OracleMixture { source: Vec<(f64, GaussianLaw)>, target: Vec<(f64, GaussianLaw)> },
    LogisticClassifier(LogisticRatio),
}

impl RatioModel {
    pub fn oracle_gaussian(
        source_mean: Vec<f64>,
        source_var: f64,
        target_mean: Vec<f64>,
        target_var: f64,
    ) -> Result<Self> {
        let source = GaussianLaw::new(source_mean, source_var)?;
        let target = GaussianLaw::new(target_mean, target_var)?;
        if source.dim() != target.dim() {
            return Err(MscpError::DimensionMismatch { expected: source.dim(), got: target.dim() });
        }
        Ok(RatioModel::OracleGaussian { source, target })
    }
}

/// `exp(log q(z) - log p(z))` for isotropic Gaussians.
pub fn oracle_gaussian_ratio(source: &GaussianLaw, target: &GaussianLaw, z: &[f64]) -> Result<f64> {
    Ok((target.log_density(z)? - source.log_density(z)?).exp())
}

pub fn eval_ratio(model: &RatioModel, z: &[f64]) -> Result<f64> {
    match model {
        RatioModel::OracleGaussian { source, target } => oracle_gaussian_ratio(source, target, z),
        RatioModel::OracleMixture { source, target } => {
            let lp = mixture_log_density(source, z)?;
            let lq = mixture_log_density(target, z)?;
            if lp == f64::NEG_INFINITY {
                return Ok(if lq == f64::NEG_INFINITY { 0.0 } else { f64::INFINITY });
            }
            Ok((lq - lp).exp())
        }
        RatioModel::LogisticClassifier(m) => {
            let odds = m.log_odds(z)?.exp();
            Ok((m.prior_correction * odds).clamp(m.clip.0, m.clip.1))
        }
    }
}

impl LikelihoodRatio for RatioModel {
    fn ratio(&self, z: &[f64]) -> Result<f64> {
        eval_ratio(self, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub clip: (f64, f64),
    pub basis: RatioBasis,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { epochs: 500, learning_rate: 0.1, l2: 1e-4, clip: (1e-3, 1e3), basis: RatioBasis::Quadratic }
    }
}

/// Mean logistic loss plus `l2/2 * |w|^2` (bias unpenalized) and its
/// gradient. `params` holds the weights followed by the bias.
pub fn logistic_objective(params: &[f64], features: &[Vec<f64>], labels: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let dim = params.len() - 1;
    let n = features.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (f, &y) in features.iter().zip(labels) {
        let a = params[dim] + params[..dim].iter().zip(f).map(|(w, v)| w * v).sum::<f64>();
        // log(1 + e^a) - y a, evaluated stably.
        loss += a.max(0.0) + (-a.abs()).exp().ln_1p() - y * a;
        let sigma = 1.0 / (1.0 + (-a).exp());
        let r = (sigma - y) / n;
        for (g, v) in grad[..dim].iter_mut().zip(f) {
            *g += r * v;
        }
        grad[dim] += r;
    }
    loss /= n;
    for i in 0..dim {
        loss += 0.5 * l2 * params[i] * params[i];
        grad[i] += l2 * params[i];
    }
    (loss, grad)
}

/// Fits the source-versus-target classifier by full-batch gradient descent
/// from zero, halving the step whenever the loss would increase.
pub fn fit_logistic_ratio(source: &[&[f64]], target: &[&[f64]], config: LogisticConfig) -> Result<RatioModel> {
    fit_logistic_ratio_traced(source, target, config).map(|(m, _)| m)
}

/// As [`fit_logistic_ratio`], also returning the per-epoch training loss.
pub fn fit_logistic_ratio_traced(
    source: &[&[f64]],
    target: &[&[f64]],
    config: LogisticConfig,
) -> Result<(RatioModel, Vec<f64>)> {
    if source.is_empty() || target.is_empty() {
        return invalid("ratio estimation needs both source and target samples");
    }
    let (lo, hi) = config.clip;
    if !(lo > 0.0 && lo <= hi) {
        return invalid(format!("invalid clip bounds ({lo}, {hi})"));
    }
    let input_dim = source[0].len();
    if source.iter().chain(target).any(|z| z.len() != input_dim) {
        return invalid("source and target features differ in dimension");
    }

    let mut features: Vec<Vec<f64>> = source.iter().chain(target).map(|z| config.basis.expand(z)).collect();
    let labels: Vec<f64> = std::iter::repeat_n(0.0, source.len())
        .chain(std::iter::repeat_n(1.0, target.len()))
        .collect();

    let width = features[0].len();
    let n = features.len() as f64;
    let mut center = vec![0.0; width];
    let mut scale = vec![0.0; width];
    for f in &features {
        for (c, v) in center.iter_mut().zip(f) {
            *c += v / n;
        }
    }
    for f in &features {
        for ((s, v), c) in scale.iter_mut().zip(f).zip(&center) {
            *s += (v - c) * (v - c) / n;
        }
    }
    for s in scale.iter_mut() {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    for f in features.iter_mut() {
        for ((v, c), s) in f.iter_mut().zip(&center).zip(&scale) {
            *v = (*v - c) / s;
        }
    }

    let fit = gradient_descent(vec![0.0; width + 1], config.epochs, config.learning_rate, |p| {
        logistic_objective(p, &features, &labels, config.l2)
    })?;
    let (weights, bias) = fit.params.split_at(width);
    let model = LogisticRatio {
        weights: weights.to_vec(),
        bias: bias[0],
        prior_correction: source.len() as f64 / target.len() as f64,
        clip: config.clip,
        basis: config.basis,
        center,
        scale,
        input_dim,
    };
    Ok((RatioModel::LogisticClassifier(model), fit.losses))
}

/// `k` distinct elements drawn uniformly without replacement.
pub fn balanced_target_subsample<T: Clone>(target: &[T], k: usize, seed: u64) -> Result<Vec<T>> {
    if k == 0 || k > target.len() {
        return invalid(format!("cannot draw {k} of {} target samples", target.len()));
    }
    let mut g = rng::seeded(seed);
    Ok(index::sample(&mut g, target.len(), k).into_iter().map(|i| target[i].clone()).collect())
}
