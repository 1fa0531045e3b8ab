//! Base predictors: RBF kernel ridge regression and multinomial logistic
//! (softmax) classification.

use nalgebra::{DMatrix, DVector};

use crate::domain::LabeledSample;
use crate::error::{invalid, MscpError, Result};

/// Point predictor for real responses.
pub trait Regressor {
    fn predict(&self, x: &[f64]) -> f64;
}

/// Predictor returning a probability vector over `num_classes` labels.
pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn predict_proba(&self, x: &[f64]) -> Vec<f64>;
}

impl<T: Regressor + ?Sized> Regressor for &T {
    fn predict(&self, x: &[f64]) -> f64 {
        (**self).predict(x)
    }
}

impl<T: Classifier + ?Sized> Classifier for &T {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        (**self).predict_proba(x)
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelRidgeConfig {
    /// RBF bandwidth; `None` selects the median pairwise distance.
    pub bandwidth: Option<f64>,
    pub ridge: f64,
}

impl Default for KernelRidgeConfig {
    fn default() -> Self {
        Self { bandwidth: None, ridge: 1e-2 }
    }
}

/// Kernel ridge regressor with `k(x, x') = exp(-|x - x'|^2 / (2 h^2))`.
/// Its predictions coincide with a Gaussian-process posterior mean.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRidgeModel {
    support: Vec<Vec<f64>>,
    dual: Vec<f64>,
    bandwidth: f64,
    ridge: f64,
}

impl KernelRidgeModel {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Ridge actually used, after any retries.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn dual_coefficients(&self) -> &[f64] {
        &self.dual
    }
}

/// Median of all pairwise Euclidean distances; 1.0 when undefined or zero.
pub fn median_heuristic(points: &[&[f64]]) -> f64 {
    let mut dists = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            dists.push(squared_distance(points[i], points[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    if *median > 0.0 {
        *median
    } else {
        1.0
    }
}

/// Solves `(K + ridge I) c = y` by Cholesky, multiplying the ridge by ten
/// on failure at most three times.
pub fn fit_kernel_ridge(train: &[LabeledSample], config: KernelRidgeConfig) -> Result<KernelRidgeModel> {
    if train.is_empty() {
        return invalid("kernel ridge needs at least one training point");
    }
    if !(config.ridge > 0.0) {
        return invalid("ridge must be positive");
    }
    let dim = train[0].x.len();
    if train.iter().any(|s| s.x.len() != dim) {
        return invalid("training points differ in dimension");
    }
    let points: Vec<&[f64]> = train.iter().map(|s| s.x.as_slice()).collect();
    let bandwidth = match config.bandwidth {
        Some(h) if h > 0.0 => h,
        Some(h) => return invalid(format!("bandwidth {h} is not positive")),
        None => median_heuristic(&points),
    };
    let y = DVector::from_iterator(train.len(), train.iter().map(|s| s.y.real()).collect::<Result<Vec<_>>>()?);

    let n = train.len();
    let scale = -0.5 / (bandwidth * bandwidth);
    let gram = DMatrix::from_fn(n, n, |i, j| (scale * squared_distance(points[i], points[j])).exp());

    let mut ridge = config.ridge;
    for _ in 0..=3 {
        let mut system = gram.clone();
        for i in 0..n {
            system[(i, i)] += ridge;
        }
        if let Some(chol) = system.cholesky() {
            let dual = chol.solve(&y);
            if dual.iter().all(|c| c.is_finite()) {
                return Ok(KernelRidgeModel {
                    support: points.iter().map(|p| p.to_vec()).collect(),
                    dual: dual.iter().copied().collect(),
                    bandwidth,
                    ridge,
                });
            }
        }
        ridge *= 10.0;
    }
    Err(MscpError::Numerical("kernel ridge Cholesky factorization failed".into()))
}

impl Regressor for KernelRidgeModel {
    fn predict(&self, x: &[f64]) -> f64 {
        let scale = -0.5 / (self.bandwidth * self.bandwidth);
        self.support
            .iter()
            .zip(&self.dual)
            .map(|(s, c)| c * (scale * squared_distance(s, x)).exp())
            .sum()
    }
}

/// Outcome of [`gradient_descent`].
#[derive(Debug, Clone)]
pub(crate) struct Descent {
    pub params: Vec<f64>,
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent. A step that raises the loss is rejected and
/// retried with half the learning rate, so recorded losses never increase.
pub(crate) fn gradient_descent<F>(init: Vec<f64>, epochs: usize, learning_rate: f64, objective: F) -> Result<Descent>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut params = init;
    let (mut loss, mut grad) = objective(&params);
    if !loss.is_finite() {
        return Err(MscpError::Numerical("initial loss is not finite".into()));
    }
    let mut lr = learning_rate;
    let mut losses = vec![loss];
    for _ in 0..epochs {
        let mut accepted = false;
        for _ in 0..40 {
            let candidate: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - lr * g).collect();
            let (next_loss, next_grad) = objective(&candidate);
            if next_loss.is_nan() {
                return Err(MscpError::Numerical("loss became NaN".into()));
            }
            if next_loss <= loss {
                params = candidate;
                loss = next_loss;
                grad = next_grad;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        losses.push(loss);
        if !accepted {
            break;
        }
    }
    Ok(Descent { params, losses })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftmaxConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        Self { epochs: 500, learning_rate: 0.5, l2: 1e-4 }
    }
}

/// Affine scores `W x + b` pushed through a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    /// Row-major `classes x dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    dim: usize,
}

impl SoftmaxModel {
    fn from_params(params: &[f64], classes: usize, dim: usize) -> Self {
        let (w, b) = params.split_at(classes * dim);
        Self { weights: w.to_vec(), bias: b.to_vec(), dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.bias
            .iter()
            .enumerate()
            .map(|(c, b)| b + self.weights[c * self.dim..(c + 1) * self.dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
}

impl Classifier for SoftmaxModel {
    fn num_classes(&self) -> usize {
        self.bias.len()
    }

    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.logits(x);
        softmax_in_place(&mut p);
        p
    }
}

/// Mean cross-entropy plus `l2/2 * |W|^2` and its gradient with respect to
/// the flattened `(W, b)` parameters.
pub fn softmax_objective(params: &[f64], xs: &[&[f64]], ys: &[usize], classes: usize, l2: f64) -> (f64, Vec<f64>) {
    let dim = xs.first().map_or(0, |x| x.len());
    let model = SoftmaxModel::from_params(params, classes, dim);
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (x, &y) in xs.iter().zip(ys) {
        let mut p = model.logits(x);
        softmax_in_place(&mut p);
        loss -= p[y].max(1e-300).ln();
        for c in 0..classes {
            let r = (p[c] - if c == y { 1.0 } else { 0.0 }) / n;
            for (g, v) in grad[c * dim..(c + 1) * dim].iter_mut().zip(x.iter()) {
                *g += r * v;
            }
            grad[classes * dim + c] += r;
        }
    }
    loss /= n;
    for i in 0..classes * dim {
        loss += 0.5 * l2 * params[i] * params[i];
        grad[i] += l2 * params[i];
    }
    (loss, grad)
}

/// Trains a softmax classifier from zero initialization.
pub fn fit_softmax(train: &[LabeledSample], classes: usize, config: SoftmaxConfig) -> Result<SoftmaxModel> {
    if train.is_empty() || classes < 2 {
        return invalid("softmax needs samples and at least two classes");
    }
    let dim = train[0].x.len();
    let xs: Vec<&[f64]> = train.iter().map(|s| s.x.as_slice()).collect();
    let ys = train.iter().map(|s| s.y.class()).collect::<Result<Vec<_>>>()?;
    let mut seen = vec![false; classes];
    for &y in &ys {
        if y >= classes {
            return invalid(format!("class {y} out of range for {classes} classes"));
        }
        seen[y] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return invalid(format!("class {missing} has no training samples"));
    }
    let init = vec![0.0; classes * dim + classes];
    let fit = gradient_descent(init, config.epochs, config.learning_rate, |p| {
        softmax_objective(p, &xs, &ys, classes, config.l2)
    })?;
    Ok(SoftmaxModel::from_params(&fit.params, classes, dim))
}
