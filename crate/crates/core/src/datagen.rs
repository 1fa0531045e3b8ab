//! Synthetic generators: the heteroscedastic multi-source regression design,
//! the one-dimensional sigmoid study, a latent-space classification task and
//! the two-stage hierarchical sampler.
//!
//! Each family routes every response through a single function of the
//! covariates, so the conditional law of the label is shared by all domains.

use crate::domain::{DomainDataset, FeatureMap, Label, LabeledSample, SplitRole};
use crate::error::{invalid, Result};
use crate::ratio::{GaussianLaw, RatioModel};
use crate::rng::{self, SimRng};

/// Which domain a sample comes from. Sources are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source(usize),
    Target,
}

impl Domain {
    pub fn id(self) -> usize {
        match self {
            Domain::Source(k) => k,
            Domain::Target => 0,
        }
    }
}

fn role(labeled: bool) -> SplitRole {
    if labeled {
        SplitRole::Calibration
    } else {
        SplitRole::Unlabeled
    }
}

/// `(mu_k, sigma_k)` with `mu_k ~ U[-1, 1]^d` and `sigma_k ~ U[0.5, 1]`.
pub fn sample_domain_params(d: usize, k: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if d == 0 || k == 0 {
        return invalid("dimension and source count must be positive");
    }
    let mut g = rng::seeded(seed);
    let mut mus = Vec::with_capacity(k);
    let mut sigmas = Vec::with_capacity(k);
    for _ in 0..k {
        mus.push((0..d).map(|_| rng::uniform(&mut g, -1.0, 1.0)).collect());
        sigmas.push(rng::uniform(&mut g, 0.5, 1.0));
    }
    Ok((mus, sigmas))
}

/// Multi-source heteroscedastic regression design. Sources are
/// `N(mu_k, sigma_k^2 I)`, the target is `N(0, target_var I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDesign {
    pub d: usize,
    pub sigma_h_sq: f64,
    pub mus: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
    pub target_var: f64,
}

impl RegressionDesign {
    pub fn new(d: usize, sigma_h_sq: f64, mus: Vec<Vec<f64>>, sigmas: Vec<f64>) -> Result<Self> {
        if d < 2 {
            return invalid(format!("regression design needs d >= 2, got {d}"));
        }
        if mus.is_empty() || mus.len() != sigmas.len() {
            return invalid("need one mean and one scale per source");
        }
        if mus.iter().any(|m| m.len() != d) {
            return invalid("source mean has the wrong dimension");
        }
        if sigmas.iter().any(|s| !(*s > 0.0)) {
            return invalid("source scales must be positive");
        }
        if !(sigma_h_sq >= 0.0) {
            return invalid("sigma_h^2 must be nonnegative");
        }
        Ok(Self { d, sigma_h_sq, mus, sigmas, target_var: 0.5 })
    }

    /// Design with randomly drawn source parameters.
    pub fn random(d: usize, k: usize, sigma_h_sq: f64, seed: u64) -> Result<Self> {
        let (mus, sigmas) = sample_domain_params(d, k, seed)?;
        Self::new(d, sigma_h_sq, mus, sigmas)
    }

    pub fn num_sources(&self) -> usize {
        self.mus.len()
    }

    pub fn source_law(&self, k: usize) -> GaussianLaw {
        GaussianLaw { mean: self.mus[k - 1].clone(), variance: self.sigmas[k - 1].powi(2) }
    }

    pub fn target_law(&self) -> GaussianLaw {
        GaussianLaw { mean: vec![0.0; self.d], variance: self.target_var }
    }

    pub fn law(&self, domain: Domain) -> Result<GaussianLaw> {
        match domain {
            Domain::Target => Ok(self.target_law()),
            Domain::Source(k) if (1..=self.num_sources()).contains(&k) => Ok(self.source_law(k)),
            Domain::Source(k) => invalid(format!("source {k} outside [1, {}]", self.num_sources())),
        }
    }

    /// Exact `dQ/dP_k`.
    pub fn oracle_ratio(&self, k: usize) -> RatioModel {
        RatioModel::OracleGaussian { source: self.source_law(k), target: self.target_law() }
    }

    /// Noise scale `1 + sigma_h^2 / (1 + |x|)`.
    pub fn noise_scale(&self, x: &[f64]) -> f64 {
        1.0 + self.sigma_h_sq / (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// The shared conditional law: `f(x) + noise_scale(x) * eps`.
    pub fn response(&self, x: &[f64], g: &mut SimRng) -> f64 {
        regression_mean(x) + self.noise_scale(x) * rng::standard_normal(g)
    }

    fn draw(&self, law: &GaussianLaw, labeled: bool, g: &mut SimRng) -> LabeledSample {
        let x = rng::normal_vec(g, &law.mean, law.variance.sqrt());
        let y = if labeled { Label::Real(self.response(&x, g)) } else { Label::Missing };
        LabeledSample::new(x, y)
    }
}

/// `f(x) = 1/(1 + e^{|x_1|/2}) * 1/(1 + e^{|x_2|/2})`.
pub fn regression_mean(x: &[f64]) -> f64 {
    1.0 / (1.0 + (x[0].abs() / 2.0).exp()) / (1.0 + (x[1].abs() / 2.0).exp())
}

pub fn gen_regression_sample(design: &RegressionDesign, domain: Domain, m: usize, seed: u64, labeled: bool) -> Result<DomainDataset> {
    let law = design.law(domain)?;
    let mut g = rng::seeded(seed);
    let samples = (0..m).map(|_| design.draw(&law, labeled, &mut g)).collect();
    Ok(DomainDataset::new(domain.id(), samples, role(labeled)))
}

/// Two-stage sampler: `k_i ~ Multinomial(tau)`, then `(x_i, y_i)` from
/// source `k_i`. Returns 1-based domain tags with the samples.
pub fn gen_hierarchical_sample(design: &RegressionDesign, tau: &[f64], m: usize, seed: u64) -> Result<Vec<(usize, LabeledSample)>> {
    if tau.len() != design.num_sources() {
        return invalid("need one mixture weight per source");
    }
    if tau.iter().any(|t| !(*t > 0.0)) {
        return invalid("hierarchical mixture weights must be positive");
    }
    let laws: Vec<GaussianLaw> = (1..=design.num_sources()).map(|k| design.source_law(k)).collect();
    let mut g = rng::seeded(seed);
    Ok((0..m)
        .map(|_| {
            let k = rng::categorical(&mut g, tau);
            (k + 1, design.draw(&laws[k], true, &mut g))
        })
        .collect())
}

/// Per-source sample counts: `[100, 100, 100, 100, 1000] * floor(d/2)` for
/// five sources, that pattern twice for ten.
pub fn source_sizes(d: usize, k: usize) -> Result<Vec<usize>> {
    if d < 2 {
        return invalid(format!("source sizes need d >= 2, got {d}"));
    }
    let base = [100, 100, 100, 100, 1000];
    let mult = d / 2;
    match k {
        5 => Ok(base.iter().map(|b| b * mult).collect()),
        10 => Ok(base.iter().chain(base.iter()).map(|b| b * mult).collect()),
        _ => invalid(format!("no default source sizes for K = {k}; list them explicitly")),
    }
}

/// One-dimensional study: `Y | X ~ N(sigmoid(X), 0.01)`, target `N(0, 9)`,
/// source `N(mu, 9)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Figure1Design {
    pub mu: f64,
    pub variance: f64,
    pub noise_sd: f64,
}

impl Figure1Design {
    pub fn new(mu: f64) -> Self {
        Self { mu, variance: 9.0, noise_sd: 0.1 }
    }

    pub fn source_law(&self) -> GaussianLaw {
        GaussianLaw { mean: vec![self.mu], variance: self.variance }
    }

    pub fn target_law(&self) -> GaussianLaw {
        GaussianLaw { mean: vec![0.0], variance: self.variance }
    }

    pub fn oracle_ratio(&self) -> RatioModel {
        RatioModel::OracleGaussian { source: self.source_law(), target: self.target_law() }
    }

    pub fn response(&self, x: f64, g: &mut SimRng) -> f64 {
        sigmoid(x) + self.noise_sd * rng::standard_normal(g)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn gen_figure1_sample(design: &Figure1Design, domain: Domain, m: usize, seed: u64, labeled: bool) -> Result<DomainDataset> {
    if m == 0 {
        return invalid("sample size must be at least 1");
    }
    let law = match domain {
        Domain::Target => design.target_law(),
        Domain::Source(_) => design.source_law(),
    };
    let sd = law.variance.sqrt();
    let mut g = rng::seeded(seed);
    let samples = (0..m)
        .map(|_| {
            let x = rng::normal(&mut g, law.mean[0], sd);
            let y = if labeled { Label::Real(design.response(x, &mut g)) } else { Label::Missing };
            LabeledSample::new(vec![x], y)
        })
        .collect();
    Ok(DomainDataset::new(domain.id(), samples, role(labeled)))
}

/// Latent-space classification task.
///
/// Class centers sit at `separation * e_c` in `R^C`. A domain's latent law
/// is a unit-variance Gaussian mixture over those centers with its own class
/// proportions; labels come from one shared posterior
/// `P(c | z) ∝ exp(-|z - center_c|^2 / 2)`. Raw covariates append
/// `nuisance_dims` standard normal coordinates, which the feature map drops.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentClassDesign {
    pub classes: usize,
    pub separation: f64,
    pub nuisance_dims: usize,
    pub source_props: Vec<Vec<f64>>,
    pub target_props: Vec<f64>,
}

impl LatentClassDesign {
    /// Source `k` tilts its proportions toward class `(k - 1) mod C`, the
    /// target toward class `C - 1`, each by a factor `e^shift`. `shift = 0`
    /// gives identical domains.
    pub fn new(k: usize, classes: usize, separation: f64, shift: f64) -> Result<Self> {
        if k < 1 || classes < 2 {
            return invalid("need at least one source and two classes");
        }
        let tilt = |favored: usize| -> Vec<f64> {
            let raw: Vec<f64> = (0..classes).map(|c| if c == favored { shift.exp() } else { 1.0 }).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|r| r / total).collect()
        };
        Ok(Self {
            classes,
            separation,
            nuisance_dims: 2,
            source_props: (0..k).map(|i| tilt(i % classes)).collect(),
            target_props: tilt(classes - 1),
        })
    }

    pub fn num_sources(&self) -> usize {
        self.source_props.len()
    }

    pub fn raw_dim(&self) -> usize {
        self.classes + self.nuisance_dims
    }

    pub fn feature_map(&self) -> FeatureMap {
        FeatureMap::leading_coordinates(self.classes, self.raw_dim()).expect("latent dims fit inside raw dims")
    }

    fn center(&self, c: usize) -> Vec<f64> {
        (0..self.classes).map(|j| if j == c { self.separation } else { 0.0 }).collect()
    }

    fn props(&self, domain: Domain) -> Result<&[f64]> {
        match domain {
            Domain::Target => Ok(&self.target_props),
            Domain::Source(k) if (1..=self.num_sources()).contains(&k) => Ok(&self.source_props[k - 1]),
            Domain::Source(k) => invalid(format!("source {k} outside [1, {}]", self.num_sources())),
        }
    }

    fn mixture(&self, props: &[f64]) -> Vec<(f64, GaussianLaw)> {
        props
            .iter()
            .enumerate()
            .map(|(c, &p)| (p, GaussianLaw { mean: self.center(c), variance: 1.0 }))
            .collect()
    }

    /// Exact latent-space `dQ/dP_k`.
    pub fn oracle_ratio(&self, k: usize) -> RatioModel {
        RatioModel::OracleMixture {
            source: self.mixture(&self.source_props[k - 1]),
            target: self.mixture(&self.target_props),
        }
    }

    /// Shared class posterior given the latent point.
    pub fn posterior(&self, z: &[f64]) -> Vec<f64> {
        let mut logits: Vec<f64> = (0..self.classes)
            .map(|c| -0.5 * crate::models::squared_distance(z, &self.center(c)))
            .collect();
        crate::models::softmax_in_place(&mut logits);
        logits
    }
}

pub fn gen_classification_latent(design: &LatentClassDesign, domain: Domain, m: usize, seed: u64, labeled: bool) -> Result<DomainDataset> {
    let props = design.props(domain)?;
    let mut g = rng::seeded(seed);
    let samples = (0..m)
        .map(|_| {
            let c = rng::categorical(&mut g, props);
            let mut x = rng::normal_vec(&mut g, &design.center(c), 1.0);
            let y = if labeled { Label::Class(rng::categorical(&mut g, &design.posterior(&x))) } else { Label::Missing };
            x.extend((0..design.nuisance_dims).map(|_| rng::standard_normal(&mut g)));
            LabeledSample::new(x, y)
        })
        .collect();
    Ok(DomainDataset::new(domain.id(), samples, role(labeled)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratio::LikelihoodRatio;

    #[test]
    fn domain_params_in_range_and_reproducible() {
        let (mus, sigmas) = sample_domain_params(3, 6, 42).unwrap();
        assert!(mus.iter().flatten().all(|m| (-1.0..=1.0).contains(m)));
        assert!(sigmas.iter().all(|s| (0.5..=1.0).contains(s)));
        assert_eq!((mus.clone(), sigmas.clone()), sample_domain_params(3, 6, 42).unwrap());
        assert_eq!(sample_domain_params(2, 1, 1).unwrap().0.len(), 1);
    }

    #[test]
    fn regression_formula_values() {
        assert_eq!(regression_mean(&[0.0, 0.0]), 0.25);
        let flat = RegressionDesign::random(2, 1, 0.0, 1).unwrap();
        assert_eq!(flat.noise_scale(&[3.0, -4.0]), 1.0);
        let het = RegressionDesign::random(2, 1, 4.0, 1).unwrap();
        assert_eq!(het.noise_scale(&[0.0, 0.0]), 5.0);
        assert!((het.noise_scale(&[1e9, 0.0]) - 1.0).abs() < 1e-8);
        assert!(RegressionDesign::random(1, 1, 0.0, 1).is_err());
    }

    #[test]
    fn source_size_table() {
        assert_eq!(source_sizes(2, 5).unwrap(), vec![100, 100, 100, 100, 1000]);
        assert_eq!(source_sizes(5, 5).unwrap(), vec![200, 200, 200, 200, 2000]);
        assert_eq!(source_sizes(10, 10).unwrap(), vec![500, 500, 500, 500, 5000, 500, 500, 500, 500, 5000]);
        assert!(source_sizes(2, 3).is_err());
    }

    #[test]
    fn unlabeled_samples_carry_placeholders() {
        let design = RegressionDesign::random(2, 2, 4.0, 3).unwrap();
        let data = gen_regression_sample(&design, Domain::Target, 5, 1, false).unwrap();
        assert_eq!(data.split, SplitRole::Unlabeled);
        assert!(data.samples.iter().all(|s| s.y == Label::Missing));
        assert_eq!(data.domain_id, 0);
        assert!(gen_regression_sample(&design, Domain::Source(3), 5, 1, true).is_err());
    }

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
    }

    #[test]
    fn regression_moments_match_design() {
        let design = RegressionDesign::random(3, 2, 4.0, 9).unwrap();
        let m = 10_000;
        for domain in [Domain::Source(1), Domain::Source(2), Domain::Target] {
            let law = design.law(domain).unwrap();
            let data = gen_regression_sample(&design, domain, m, 17, true).unwrap();
            for j in 0..3 {
                let col: Vec<f64> = data.samples.iter().map(|s| s.x[j]).collect();
                let (mean, var) = moments(&col);
                let sd = law.variance.sqrt();
                assert!((mean - law.mean[j]).abs() < 4.0 * sd / (m as f64).sqrt());
                assert!((var - law.variance).abs() < 4.0 * law.variance * (2.0 / m as f64).sqrt());
            }
        }
    }

    #[test]
    fn figure1_design_properties() {
        let d = Figure1Design::new(0.0);
        assert_eq!(d.source_law(), d.target_law());
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(d.noise_sd, 0.1);
        let m = 10_000;
        let data = gen_figure1_sample(&Figure1Design::new(4.0), Domain::Source(1), m, 3, true).unwrap();
        let xs: Vec<f64> = data.samples.iter().map(|s| s.x[0]).collect();
        let (mean, var) = moments(&xs);
        assert!((mean - 4.0).abs() < 4.0 * 3.0 / (m as f64).sqrt());
        assert!((var - 9.0).abs() < 4.0 * 9.0 * (2.0 / m as f64).sqrt());
        let resid: Vec<f64> = data.samples.iter().map(|s| s.y.real().unwrap() - sigmoid(s.x[0])).collect();
        let (rm, rv) = moments(&resid);
        assert!(rm.abs() < 4.0 * 0.1 / (m as f64).sqrt());
        assert!((rv - 0.01).abs() < 0.001);
    }

    #[test]
    fn generators_are_reproducible() {
        let design = RegressionDesign::random(2, 3, 4.0, 5).unwrap();
        let a = gen_regression_sample(&design, Domain::Source(2), 50, 8, true).unwrap();
        assert_eq!(a, gen_regression_sample(&design, Domain::Source(2), 50, 8, true).unwrap());
        let lat = LatentClassDesign::new(3, 4, 2.0, 1.0).unwrap();
        let b = gen_classification_latent(&lat, Domain::Source(1), 50, 8, true).unwrap();
        assert_eq!(b, gen_classification_latent(&lat, Domain::Source(1), 50, 8, true).unwrap());
        let h = gen_hierarchical_sample(&design, &[0.2, 0.3, 0.5], 40, 2).unwrap();
        assert_eq!(h, gen_hierarchical_sample(&design, &[0.2, 0.3, 0.5], 40, 2).unwrap());
    }

    #[test]
    fn latent_design_controls() {
        let flat = LatentClassDesign::new(3, 4, 0.0, 1.0).unwrap();
        assert!(flat.posterior(&[0.3, -1.0, 2.0, 0.0]).iter().all(|p| (p - 0.25).abs() < 1e-12));
        let same = LatentClassDesign::new(3, 4, 2.0, 0.0).unwrap();
        assert!(same.source_props.iter().all(|p| p == &same.target_props));
        let phi = same.feature_map();
        let w = same.oracle_ratio(2);
        assert!((w.ratio(&phi.apply(&[0.1, 0.2, 0.3, 0.4, 9.0, 9.0]).unwrap()).unwrap() - 1.0).abs() < 1e-12);
        let data = gen_classification_latent(&same, Domain::Target, 10, 1, true).unwrap();
        assert!(data.samples.iter().all(|s| s.x.len() == 6 && s.y.class().unwrap() < 4));
    }

    #[test]
    fn hierarchical_tags_follow_tau() {
        let design = RegressionDesign::random(2, 3, 0.0, 5).unwrap();
        let tau = [0.2, 0.3, 0.5];
        let m = 10_000;
        let h = gen_hierarchical_sample(&design, &tau, m, 11).unwrap();
        for (k, t) in tau.iter().enumerate() {
            let freq = h.iter().filter(|(tag, _)| *tag == k + 1).count() as f64 / m as f64;
            assert!((freq - t).abs() < 4.0 * (t * (1.0 - t) / m as f64).sqrt());
        }
    }
}
