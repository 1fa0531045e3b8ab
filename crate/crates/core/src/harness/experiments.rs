//! Replication loops for the three tasks and the hierarchical study.

use std::time::{Duration, Instant};

use rand::Rng;

use crate::datagen::{
    gen_classification_latent, gen_figure1_sample, gen_hierarchical_sample, gen_regression_sample, source_sizes,
    Domain, Figure1Design, LatentClassDesign, RegressionDesign,
};
use crate::domain::{split_dataset, DomainDataset, FeatureMap, Label, LabeledSample};
use crate::error::{invalid, Result};
use crate::merge::{candidate_grid, merged_interval_set_from_pvalues, merged_label_set_from_pvalues, merged_set_vote, vote_source_level};
use crate::models::{fit_kernel_ridge, fit_softmax, KernelRidgeConfig, SoftmaxConfig};
use crate::parallel::{replicate, Execution};
use crate::pool::{
    adjusted_beta, estimate_tau, hierarchical_pooled_set, mixture_ratio_from_components, partition_hierarchical,
    pool_calibration, pooled_wcp_set,
};
use crate::ratio::{balanced_target_subsample, fit_logistic_ratio, LikelihoodRatio, LogisticConfig, RatioModel, UnitRatio};
use crate::rng::replication_stream;
use crate::wcp::{wcp_threshold, weighted_p_value, weighted_prediction_set, CalibrationScores, ConformalScore, AbsResidual, OneMinusProb, PredictionSet};

use super::config::{ExperimentConfig, Method, RatioMode, Task};
use super::metrics::{aggregate, MetricsReport, MetricsRow, Outcome};

/// Grid key used by the regression and classification tasks.
pub const SINGLE_CELL: &str = "all";
/// Padding of the p-value inversion grid, as a fraction of its span.
const GRID_PAD: f64 = 0.1;

pub fn run_experiment(config: &ExperimentConfig, execution: Execution) -> Result<MetricsReport> {
    match config.task {
        Task::Figure1 => run_figure1(config, execution),
        Task::Regression => run_regression(config, execution),
        Task::Classification => run_classification(config, execution),
    }
}

fn expect_task(config: &ExperimentConfig, task: Task) -> Result<()> {
    config.validate()?;
    if config.task != task {
        return invalid(format!("config is for task {}, not {task}", config.task));
    }
    Ok(())
}

fn krr_config(config: &ExperimentConfig) -> KernelRidgeConfig {
    KernelRidgeConfig { bandwidth: config.bandwidth, ridge: config.ridge }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, Duration)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed()))
}

/// Shift study: one source, WCP (or plain CP) on a grid of source
/// shifts `mu` and calibration sizes `n`.
///
/// Per `(mu, replication)` the predictor is fit once on a separate source
/// draw of `train_size` points; each `n` then gets its own calibration draw
/// and target test point.
pub fn run_figure1(config: &ExperimentConfig, execution: Execution) -> Result<MetricsReport> {
    expect_task(config, Task::Figure1)?;
    let methods = &config.methods;
    let mut rows = Vec::new();
    for (j, &mu) in config.mu_list.iter().enumerate() {
        let design = Figure1Design::new(mu);
        let per_rep = replicate(config.replications, execution, |r| {
            figure1_replication(config, &design, (j as u64) << 32 | r)
        });
        let per_rep = per_rep.into_iter().collect::<Result<Vec<_>>>()?;
        for (i, &n) in config.n_list.iter().enumerate() {
            for (m, &method) in methods.iter().enumerate() {
                let outcomes: Vec<Outcome> = per_rep.iter().map(|rep| rep[i][m]).collect();
                let key = format!("mu={mu};n={n}");
                rows.push(aggregate(Task::Figure1, method, &key, config.alpha, &outcomes, config.record_runtime));
            }
        }
    }
    Ok(MetricsReport { rows })
}

fn figure1_replication(config: &ExperimentConfig, design: &Figure1Design, stream: u64) -> Result<Vec<Vec<Outcome>>> {
    let mut g = replication_stream(config.seed, stream);
    let train = gen_figure1_sample(design, Domain::Source(1), config.train_size, g.gen(), true)?;
    let ((scorer, ratio), fit_time) = timed(|| {
        let scorer = AbsResidual::new(fit_kernel_ridge(&train.samples, krr_config(config))?);
        let ratio = match config.ratio_mode {
            RatioMode::Oracle => design.oracle_ratio(),
            RatioMode::Logistic => {
                let target = gen_figure1_sample(design, Domain::Target, config.train_size, g.gen(), false)?;
                fit_logistic_ratio(&train.features(), &target.features(), LogisticConfig::default())?
            }
        };
        Ok((scorer, ratio))
    })?;
    let mut out = Vec::with_capacity(config.n_list.len());
    for &n in &config.n_list {
        let cal = gen_figure1_sample(design, Domain::Source(1), n, g.gen(), true)?;
        let test = gen_figure1_sample(design, Domain::Target, 1, g.gen(), true)?.samples.remove(0);
        let mut cell = Vec::with_capacity(config.methods.len());
        for method in &config.methods {
            let start = Instant::now();
            let weights: &dyn LikelihoodRatio = match method {
                Method::Wcp => &ratio,
                Method::Cp => &UnitRatio,
                other => return invalid(format!("method {other} is not available for figure1")),
            };
            let cal_scores = CalibrationScores::from_samples(&cal.samples, &scorer, weights, &FeatureMap::Identity)?;
            let set = weighted_prediction_set(&cal_scores, weights, &FeatureMap::Identity, &scorer, &test.x, config.alpha)?;
            let elapsed = start.elapsed() + if *method == Method::Wcp { fit_time } else { Duration::ZERO };
            cell.push(Outcome::of(&set, &test.y, elapsed)?);
        }
        out.push(cell);
    }
    Ok(out)
}

/// Label space searched by the p-value merging route.
#[derive(Debug, Clone, Copy)]
enum Candidates {
    Grid(usize),
    Classes(usize),
}

/// Everything one multi-source replication shares across methods.
struct MultiSource<'a, S> {
    alpha: f64,
    mode: RatioMode,
    scorer: &'a S,
    feature_map: &'a FeatureMap,
    train: &'a [DomainDataset],
    cal: &'a [DomainDataset],
    /// Unlabeled target pool, present in logistic mode.
    target: Option<&'a DomainDataset>,
    oracle: &'a [RatioModel],
    test: &'a LabeledSample,
    candidates: Candidates,
}

struct PerSource {
    scores: Vec<CalibrationScores>,
    test_ratios: Vec<f64>,
}

impl<S: ConformalScore> MultiSource<'_, S> {
    fn mapped(&self, samples: &[LabeledSample]) -> Result<Vec<Vec<f64>>> {
        samples.iter().map(|s| Ok(self.feature_map.apply(&s.x)?.into_owned())).collect()
    }

    /// Per-source ratios (oracle, or a classifier against a target
    /// subsample the size of that source's training split) and calibration
    /// scores.
    fn per_source(&self, seed: u64) -> Result<PerSource> {
        let k = self.cal.len();
        let ratios = match self.mode {
            RatioMode::Oracle => self.oracle.to_vec(),
            RatioMode::Logistic => {
                let target = self.target.expect("logistic mode carries a target pool");
                (0..k)
                    .map(|i| {
                        let src = self.mapped(&self.train[i].samples)?;
                        let sub = balanced_target_subsample(&target.samples, src.len(), seed.wrapping_add(i as u64))?;
                        let tgt = self.mapped(&sub)?;
                        fit_logistic_ratio(&as_slices(&src), &as_slices(&tgt), LogisticConfig::default())
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let scores = (0..k)
            .map(|i| CalibrationScores::from_samples(&self.cal[i].samples, self.scorer, &ratios[i], self.feature_map))
            .collect::<Result<Vec<_>>>()?;
        let z = self.feature_map.apply(&self.test.x)?;
        let test_ratios = ratios.iter().map(|w| w.ratio(&z)).collect::<Result<Vec<_>>>()?;
        Ok(PerSource { scores, test_ratios })
    }

    /// Ratio against the pooled mixture. In logistic mode a single
    /// classifier separates all source training data from the whole target
    /// pool; the training splits must then mix the sources in the same
    /// proportions as the calibration splits.
    fn pooled_ratio(&self, proportions: crate::pool::MixtureWeights) -> Result<Box<dyn LikelihoodRatio>> {
        match self.mode {
            RatioMode::Oracle => Ok(Box::new(mixture_ratio_from_components(self.oracle.to_vec(), proportions)?)),
            RatioMode::Logistic => {
                for (t, c) in self.train.iter().zip(self.cal) {
                    if t.len().abs_diff(c.len()) > 1 {
                        return invalid("training and calibration splits mix the sources differently");
                    }
                }
                let src: Vec<Vec<f64>> =
                    self.train.iter().map(|d| self.mapped(&d.samples)).collect::<Result<Vec<_>>>()?.concat();
                let target = self.target.expect("logistic mode carries a target pool");
                let tgt = self.mapped(&target.samples)?;
                Ok(Box::new(fit_logistic_ratio(&as_slices(&src), &as_slices(&tgt), LogisticConfig::default())?))
            }
        }
    }

    fn merged_vote(&self, per: &PerSource, gamma: f64) -> Result<PredictionSet> {
        let level = vote_source_level(gamma, self.alpha);
        let sets = per
            .scores
            .iter()
            .zip(&per.test_ratios)
            .map(|(cal, &w0)| {
                let threshold = wcp_threshold(cal, w0, (1.0 - gamma) * self.alpha)?;
                self.scorer.invert(&self.test.x, threshold, level)
            })
            .collect::<Result<Vec<_>>>()?;
        merged_set_vote(&sets, gamma, self.alpha)
    }

    fn merged_pvalue(&self, per: &PerSource, rule: crate::merge::MergeRule) -> Result<PredictionSet> {
        let x = &self.test.x;
        let pvalues = |y: &Label| -> Result<Vec<f64>> {
            let s = self.scorer.score(x, y)?;
            per.scores
                .iter()
                .zip(&per.test_ratios)
                // A zero test ratio with no score above s gives p = 0, which
                // every rule rejects; nudging it into (0, 1] changes nothing.
                .map(|(cal, &w0)| weighted_p_value(cal, w0, s).map(|p| p.clamp(f64::MIN_POSITIVE, 1.0)))
                .collect()
        };
        match self.candidates {
            Candidates::Classes(c) => merged_label_set_from_pvalues(rule, self.alpha, c, |c| pvalues(&Label::Class(c))),
            Candidates::Grid(points) => {
                // Every supported rule needs some p_k > alpha / K, so the
                // per-source sets at level 1 - alpha / K cover the answer.
                let k = per.scores.len();
                let mut spans = Vec::with_capacity(k);
                let mut center = None;
                for (cal, &w0) in per.scores.iter().zip(&per.test_ratios) {
                    let threshold = wcp_threshold(cal, w0, self.alpha / k as f64)?;
                    let set = self.scorer.invert(x, threshold, 1.0 - self.alpha / k as f64)?;
                    if let crate::wcp::SetRegion::Interval { center: c, .. } = set.region {
                        center = Some(c);
                    }
                    spans.extend(set.intervals().unwrap_or_default());
                }
                let grid = candidate_grid(&spans, center.unwrap_or(0.0), points, GRID_PAD)?;
                merged_interval_set_from_pvalues(rule, self.alpha, &grid, |y| pvalues(&Label::Real(y)))
            }
        }
    }

    /// Builds every requested method's set for the test point. A method's
    /// runtime includes the ratio fits it depends on, even when another
    /// method reuses them.
    fn evaluate(&self, methods: &[Method], seed: u64) -> Result<Vec<Outcome>> {
        let k = self.cal.len();
        let pooled = pool_calibration(self.cal, seed)?;
        let per = if methods.iter().any(|m| matches!(m, Method::MergedVote(_) | Method::MergedPvalue(_))) {
            Some(timed(|| self.per_source(seed.wrapping_add(1)))?)
        } else {
            None
        };
        let pooled_ratio = if methods.contains(&Method::PooledWcp) {
            Some(timed(|| self.pooled_ratio(pooled.proportions()))?)
        } else {
            None
        };

        let mut out = Vec::with_capacity(methods.len());
        for &method in methods {
            let start = Instant::now();
            let (set, shared) = match method {
                Method::Cp => {
                    (pooled_wcp_set(&pooled, &UnitRatio, self.feature_map, self.scorer, &self.test.x, self.alpha)?, Duration::ZERO)
                }
                Method::PooledWcp => {
                    let (ratio, fit) = pooled_ratio.as_ref().expect("fitted above");
                    (pooled_wcp_set(&pooled, ratio.as_ref(), self.feature_map, self.scorer, &self.test.x, self.alpha)?, *fit)
                }
                Method::MergedVote(g) => {
                    let (p, fit) = per.as_ref().expect("computed above");
                    (self.merged_vote(p, g.resolve(k))?, *fit)
                }
                Method::MergedPvalue(rule) => {
                    let (p, fit) = per.as_ref().expect("computed above");
                    (self.merged_pvalue(p, rule.resolve(k))?, *fit)
                }
                Method::Wcp => return invalid("WCP is the single-source method"),
            };
            out.push(Outcome::of(&set, &self.test.y, start.elapsed() + shared)?);
        }
        Ok(out)
    }
}

fn as_slices(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

fn collect_rows(config: &ExperimentConfig, per_rep: Vec<Result<Vec<Outcome>>>) -> Result<MetricsReport> {
    let per_rep = per_rep.into_iter().collect::<Result<Vec<_>>>()?;
    let rows: Vec<MetricsRow> = config
        .methods
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let outcomes: Vec<Outcome> = per_rep.iter().map(|rep| rep[m]).collect();
            aggregate(config.task, method, SINGLE_CELL, config.alpha, &outcomes, config.record_runtime)
        })
        .collect();
    Ok(MetricsReport { rows })
}

fn split_sources(data: Vec<DomainDataset>, g: &mut impl Rng) -> Result<(Vec<DomainDataset>, Vec<DomainDataset>)> {
    let mut train = Vec::with_capacity(data.len());
    let mut cal = Vec::with_capacity(data.len());
    for d in &data {
        let (t, c) = split_dataset(d, 0.5, g.gen())?;
        train.push(t);
        cal.push(c);
    }
    Ok((train, cal))
}

fn needs_target_pool(config: &ExperimentConfig) -> bool {
    config.ratio_mode == RatioMode::Logistic && config.methods.iter().any(|m| *m != Method::Cp)
}

/// Multi-source regression: kernel ridge on the pooled training splits,
/// one labeled target test point per replication.
pub fn run_regression(config: &ExperimentConfig, execution: Execution) -> Result<MetricsReport> {
    expect_task(config, Task::Regression)?;
    let sizes = match &config.source_sizes {
        Some(s) => s.clone(),
        None => source_sizes(config.d, config.k)?,
    };
    let per_rep = replicate(config.replications, execution, |r| regression_replication(config, &sizes, r));
    collect_rows(config, per_rep)
}

fn regression_design(config: &ExperimentConfig, seed: u64) -> Result<RegressionDesign> {
    if config.identical_sources {
        let base = RegressionDesign::random(config.d, 1, config.sigma_h_sq, seed)?;
        RegressionDesign::new(config.d, config.sigma_h_sq, vec![base.mus[0].clone(); config.k], vec![base.sigmas[0]; config.k])
    } else {
        RegressionDesign::random(config.d, config.k, config.sigma_h_sq, seed)
    }
}

fn regression_replication(config: &ExperimentConfig, sizes: &[usize], r: u64) -> Result<Vec<Outcome>> {
    let mut g = replication_stream(config.seed, r);
    let design = regression_design(config, g.gen())?;
    let data = (1..=config.k)
        .map(|k| gen_regression_sample(&design, Domain::Source(k), sizes[k - 1], g.gen(), true))
        .collect::<Result<Vec<_>>>()?;
    let (train, cal) = split_sources(data, &mut g)?;
    let target_seed: u64 = g.gen();
    let target = if needs_target_pool(config) {
        Some(gen_regression_sample(&design, Domain::Target, sizes.iter().sum::<usize>() / 2, target_seed, false)?)
    } else {
        None
    };
    let test = gen_regression_sample(&design, Domain::Target, 1, g.gen(), true)?.samples.remove(0);
    let pooled_train: Vec<LabeledSample> = train.iter().flat_map(|d| d.samples.iter().cloned()).collect();
    let scorer = AbsResidual::new(fit_kernel_ridge(&pooled_train, krr_config(config))?);
    let oracle: Vec<RatioModel> = (1..=config.k).map(|k| design.oracle_ratio(k)).collect();
    let ctx = MultiSource {
        alpha: config.alpha,
        mode: config.ratio_mode,
        scorer: &scorer,
        feature_map: &FeatureMap::Identity,
        train: &train,
        cal: &cal,
        target: target.as_ref(),
        oracle: &oracle,
        test: &test,
        candidates: Candidates::Grid(config.grid_points),
    };
    ctx.evaluate(&config.methods, g.gen())
}

/// Latent-space classification: softmax on the mapped pooled training
/// splits, one-minus-probability scores, label sets.
pub fn run_classification(config: &ExperimentConfig, execution: Execution) -> Result<MetricsReport> {
    expect_task(config, Task::Classification)?;
    let mut design = LatentClassDesign::new(config.k, config.num_classes, config.separation, config.shift)?;
    if config.identical_sources {
        let first = design.source_props[0].clone();
        design.source_props.iter_mut().for_each(|p| *p = first.clone());
    }
    let sizes = config.source_sizes.clone().unwrap_or_else(|| vec![config.domain_size; config.k]);
    let per_rep = replicate(config.replications, execution, |r| classification_replication(config, &design, &sizes, r));
    collect_rows(config, per_rep)
}

fn classification_replication(config: &ExperimentConfig, design: &LatentClassDesign, sizes: &[usize], r: u64) -> Result<Vec<Outcome>> {
    let mut g = replication_stream(config.seed, r);
    let data = (1..=config.k)
        .map(|k| gen_classification_latent(design, Domain::Source(k), sizes[k - 1], g.gen(), true))
        .collect::<Result<Vec<_>>>()?;
    let (train, cal) = split_sources(data, &mut g)?;
    let target_seed: u64 = g.gen();
    let target = if needs_target_pool(config) {
        Some(gen_classification_latent(design, Domain::Target, sizes.iter().sum::<usize>() / 2, target_seed, false)?)
    } else {
        None
    };
    let test = gen_classification_latent(design, Domain::Target, 1, g.gen(), true)?.samples.remove(0);
    let fm = design.feature_map();
    let latent_train = train
        .iter()
        .flat_map(|d| d.samples.iter())
        .map(|s| Ok(LabeledSample::new(fm.apply(&s.x)?.into_owned(), s.y)))
        .collect::<Result<Vec<_>>>()?;
    let model = fit_softmax(&latent_train, config.num_classes, SoftmaxConfig::default())?;
    let scorer = OneMinusProb::new(model, fm.clone());
    let oracle: Vec<RatioModel> = (1..=config.k).map(|k| design.oracle_ratio(k)).collect();
    let ctx = MultiSource {
        alpha: config.alpha,
        mode: config.ratio_mode,
        scorer: &scorer,
        feature_map: &fm,
        train: &train,
        cal: &cal,
        target: target.as_ref(),
        oracle: &oracle,
        test: &test,
        candidates: Candidates::Classes(config.num_classes),
    };
    ctx.evaluate(&config.methods, g.gen())
}

/// Hierarchical pooled WCP study on the regression design.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalConfig {
    pub alpha: f64,
    pub replications: usize,
    pub seed: u64,
    pub d: usize,
    pub sigma_h_sq: f64,
    /// True domain probabilities `tau`.
    pub tau: Vec<f64>,
    /// Size of the index half; the calibration half has the same size.
    pub n2: usize,
    /// Separate hierarchical draw used to fit the predictor.
    pub train_size: usize,
    pub ridge: f64,
    pub record_runtime: bool,
}

impl Default for HierarchicalConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            replications: 2000,
            seed: 0,
            d: 2,
            sigma_h_sq: 4.0,
            tau: vec![0.1, 0.15, 0.2, 0.25, 0.3],
            n2: 2000,
            train_size: 200,
            ridge: 1e-2,
            record_runtime: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalReport {
    pub row: MetricsRow,
    /// Largest `|sum_k beta_k - 1|` over replications.
    pub max_beta_sum_error: f64,
    /// Replications with some `beta_k < eps / (1 + K eps)`, `eps = 1 / N2`.
    pub beta_floor_violations: usize,
}

pub fn run_hierarchical(config: &HierarchicalConfig, execution: Execution) -> Result<HierarchicalReport> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) || config.replications == 0 || config.n2 == 0 {
        return invalid("hierarchical run needs alpha in (0, 1), replications >= 1, N2 >= 1");
    }
    let k = config.tau.len();
    let eps = 1.0 / config.n2 as f64;
    let floor = eps / (1.0 + k as f64 * eps);
    let per_rep = replicate(config.replications, execution, |r| -> Result<(Outcome, f64, bool)> {
        let mut g = replication_stream(config.seed, r);
        let start = Instant::now();
        let design = RegressionDesign::random(config.d, k, config.sigma_h_sq, g.gen())?;
        let train: Vec<LabeledSample> =
            gen_hierarchical_sample(&design, &config.tau, config.train_size, g.gen())?.into_iter().map(|(_, s)| s).collect();
        let scorer = AbsResidual::new(fit_kernel_ridge(&train, KernelRidgeConfig { bandwidth: None, ridge: config.ridge })?);
        let tagged = gen_hierarchical_sample(&design, &config.tau, 2 * config.n2, g.gen())?;
        let split = partition_hierarchical(&tagged, g.gen())?;
        let beta = adjusted_beta(&estimate_tau(&split.domain_indices, k)?, split.domain_indices.len())?;
        let components: Vec<RatioModel> = (1..=k).map(|i| design.oracle_ratio(i)).collect();
        let test = gen_regression_sample(&design, Domain::Target, 1, g.gen(), true)?.samples.remove(0);
        let set = hierarchical_pooled_set(&split.calibration, &beta, &components, &FeatureMap::Identity, &scorer, &test.x, config.alpha)?;
        let sum_err = (beta.values().iter().sum::<f64>() - 1.0).abs();
        let floor_ok = beta.values().iter().all(|&b| b >= floor);
        Ok((Outcome::of(&set, &test.y, start.elapsed())?, sum_err, floor_ok))
    });
    let per_rep = per_rep.into_iter().collect::<Result<Vec<_>>>()?;
    let outcomes: Vec<Outcome> = per_rep.iter().map(|p| p.0).collect();
    Ok(HierarchicalReport {
        row: aggregate(Task::Regression, Method::PooledWcp, "hierarchical", config.alpha, &outcomes, config.record_runtime),
        max_beta_sum_error: per_rep.iter().map(|p| p.1).fold(0.0, f64::max),
        beta_floor_violations: per_rep.iter().filter(|p| !p.2).count(),
    })
}
