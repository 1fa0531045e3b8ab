//! Self-check suites for the exact invariants of the library, runnable from
//! the command line.

use std::fmt;

use rand::Rng;

use crate::datagen::{Figure1Design, RegressionDesign};
use crate::error::Result;
use crate::merge::{merge_p_values, merged_set_vote, vote_source_level, MergeRule};
use crate::models::softmax_objective;
use crate::pool::tv_lower_bound;
use crate::quantile::WeightedScoreDistribution;
use crate::ratio::{logistic_objective, GaussianLaw, LikelihoodRatio, RatioModel};
use crate::rng::{self, seeded};
use crate::wcp::{wcp_interval_regression, wcp_threshold, weighted_p_value, CalibrationScores, SetRegion};

/// Outcome of one suite: how many checks ran and how many failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub checks: usize,
    pub failures: usize,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checks > 0
    }
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "ok" } else { "FAILED" };
        write!(f, "{:<22} {:>7} checks {:>5} failures  {status}", self.name, self.checks, self.failures)
    }
}

#[derive(Default)]
struct Tally {
    checks: usize,
    failures: usize,
}

impl Tally {
    fn check(&mut self, ok: bool) {
        self.checks += 1;
        if !ok {
            self.failures += 1;
        }
    }

    /// Errors count as failures.
    fn check_result(&mut self, r: Result<bool>) {
        self.check(matches!(r, Ok(true)));
    }

    fn finish(self, name: &'static str) -> SuiteResult {
        SuiteResult { name, checks: self.checks, failures: self.failures }
    }
}

/// Runs every suite with fixed seeds.
pub fn run_validate() -> Vec<SuiteResult> {
    vec![
        duality_suite(1000, 11),
        split_conformal_suite(12),
        quantile_oracle_suite(2000, 13),
        bonferroni_identity_suite(200, 14),
        kmin_suite(100_000, 15),
        gradient_suite(10, 16),
        tv_suite(),
        change_of_measure_suite(10_000, 17),
    ]
}

/// Random calibration set of at most `max_n` points. Scores come from a
/// small lattice so ties are common; about a quarter of the ratios are zero.
fn random_calibration(g: &mut impl Rng, max_n: usize) -> (Vec<f64>, Vec<f64>) {
    let n = g.gen_range(1..=max_n);
    let scores = (0..n).map(|_| g.gen_range(0..8) as f64 * 0.5).collect();
    let ratios = (0..n).map(|_| if g.gen_bool(0.25) { 0.0 } else { g.gen_range(0.01..3.0) }).collect();
    (scores, ratios)
}

pub fn duality_suite(instances: usize, seed: u64) -> SuiteResult {
    duality_suite_with(weighted_p_value, instances, seed)
}

/// `p > alpha` iff `score <= threshold`, with `pvalue` standing in for the
/// weighted p-value so that faulty variants can be checked to fail.
pub fn duality_suite_with<P>(pvalue: P, instances: usize, seed: u64) -> SuiteResult
where
    P: Fn(&CalibrationScores, f64, f64) -> Result<f64>,
{
    let mut g = seeded(seed);
    let mut t = Tally::default();
    for _ in 0..instances {
        let (scores, ratios) = random_calibration(&mut g, 20);
        let test_ratio = if g.gen_bool(0.1) { 0.0 } else { g.gen_range(0.01..3.0) };
        let alpha = g.gen_range(0.01..0.99);
        // Half the time the test score ties a calibration score exactly.
        let s = if g.gen_bool(0.5) { scores[g.gen_range(0..scores.len())] } else { g.gen_range(-0.5..4.5) };
        let r = (|| -> Result<bool> {
            let cal = CalibrationScores::new(scores, ratios)?;
            if test_ratio + cal.ratios().iter().sum::<f64>() == 0.0 {
                return Ok(true);
            }
            let p = pvalue(&cal, test_ratio, s)?;
            let thr = wcp_threshold(&cal, test_ratio, alpha)?;
            Ok((p > alpha) == (s <= thr))
        })();
        t.check_result(r);
    }
    t.finish("duality")
}

/// Uniform ratios reproduce split conformal: the threshold is the
/// `ceil((1 - alpha)(n + 1))`-th smallest score, or `+inf` past `n`.
pub fn split_conformal_suite(seed: u64) -> SuiteResult {
    let mut g = seeded(seed);
    let mut t = Tally::default();
    // alpha = 1 / denom, so the rank is ceil((denom - 1)(n + 1) / denom).
    for denom in [20usize, 10, 5] {
        let alpha = 1.0 / denom as f64;
        for n in 1..=50usize {
            let mut scores: Vec<f64> = (0..n).map(|_| g.gen_range(0..30) as f64 / 7.0).collect();
            let cal = CalibrationScores::unweighted(scores.clone());
            scores.sort_by(f64::total_cmp);
            let rank = ((denom - 1) * (n + 1)).div_ceil(denom);
            let expected = if rank > n { f64::INFINITY } else { scores[rank - 1] };
            t.check_result(cal.and_then(|c| wcp_threshold(&c, 1.0, alpha)).map(|thr| thr == expected));
        }
    }
    t.finish("split-conformal")
}

/// Weighted quantile against an exact integer scan with integer weights and
/// `alpha = a / 100`.
pub fn quantile_oracle_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut g = seeded(seed);
    let mut t = Tally::default();
    for _ in 0..instances {
        let n = g.gen_range(1..=15);
        let scores: Vec<f64> = (0..n).map(|_| g.gen_range(0..10) as f64).collect();
        let weights: Vec<u64> = (0..n).map(|_| g.gen_range(0..5)).collect();
        let w0: u64 = g.gen_range(1..5);
        let a: u64 = g.gen_range(1..100);
        let total: u64 = weights.iter().sum::<u64>() + w0;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
        let mut cum = 0u64;
        let mut expected = f64::INFINITY;
        for (pos, &i) in order.iter().enumerate() {
            cum += weights[i];
            let last_of_tie = pos + 1 == n || scores[order[pos + 1]] != scores[i];
            if last_of_tie && 100 * cum >= (100 - a) * total {
                expected = scores[i];
                break;
            }
        }
        let ratios: Vec<f64> = weights.iter().map(|&w| w as f64).collect();
        let got = WeightedScoreDistribution::from_ratios(&scores, &ratios, w0 as f64)
            .and_then(|d| d.quantile(1.0 - a as f64 / 100.0));
        t.check_result(got.map(|q| q == expected));
    }
    t.finish("quantile-oracle")
}

/// Vote merging at `gamma = (K - 1) / K` equals the intersection of the
/// per-source intervals at level `1 - alpha / K`.
pub fn bonferroni_identity_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut g = seeded(seed);
    let mut t = Tally::default();
    for i in 0..instances {
        let k = [2usize, 3, 5][i % 3];
        let gamma = (k - 1) as f64 / k as f64;
        let alpha = g.gen_range(0.05..0.3);
        let r = (|| -> Result<bool> {
            let mut sets = Vec::with_capacity(k);
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for _ in 0..k {
                let n = g.gen_range(5..40);
                let scores: Vec<f64> = (0..n).map(|_| g.gen_range(0.0..3.0)).collect();
                let ratios: Vec<f64> = (0..n).map(|_| g.gen_range(0.2..2.0)).collect();
                let cal = CalibrationScores::new(scores, ratios)?;
                let thr = wcp_threshold(&cal, g.gen_range(0.2..2.0), alpha / k as f64)?;
                let center = g.gen_range(-2.0..2.0);
                lo = lo.max(center - thr);
                hi = hi.min(center + thr);
                sets.push(wcp_interval_regression(center, thr, vote_source_level(gamma, alpha)));
            }
            let merged = merged_set_vote(&sets, gamma, alpha)?;
            let parts = match merged.region {
                SetRegion::Union(parts) => parts,
                _ => return Ok(false),
            };
            let close = |a: f64, b: f64| a == b || (a - b).abs() <= 1e-12;
            Ok(if lo > hi {
                parts.is_empty()
            } else {
                parts.len() == 1 && close(parts[0].lo, lo) && close(parts[0].hi, hi)
            })
        })();
        t.check_result(r);
    }
    t.finish("bonferroni-identity")
}

/// Gamma-vote merging at `gamma = (K - 1) / K` exceeds alpha exactly when
/// `K * min p` does.
pub fn kmin_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut g = seeded(seed);
    let mut t = Tally::default();
    for _ in 0..instances {
        let k = g.gen_range(2..=10usize);
        let alpha = g.gen_range(0.001..0.5);
        let p: Vec<f64> = (0..k).map(|_| if g.gen_bool(0.05) { 1.0 } else { g.gen_range(1e-6..=1.0) }).collect();
        let min = p.iter().copied().fold(f64::INFINITY, f64::min);
        let lhs = merge_p_values(MergeRule::GammaVote((k - 1) as f64 / k as f64), &p, alpha);
        t.check_result(lhs.map(|v| (v > alpha) == (k as f64 * min > alpha)));
    }
    t.finish("kmin-threshold")
}

fn central_difference(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut x = at.to_vec();
    (0..at.len())
        .map(|i| {
            x[i] = at[i] + h;
            let up = f(&x);
            x[i] = at[i] - h;
            let down = f(&x);
            x[i] = at[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Analytic gradients of the logistic and softmax objectives against
/// central differences, `1e-6` relative in the Euclidean norm.
pub fn gradient_suite(points: usize, seed: u64) -> SuiteResult {
    const H: f64 = 1e-5;
    let mut g = seeded(seed);
    let mut t = Tally::default();
    for _ in 0..points {
        let dim = 3;
        let features: Vec<Vec<f64>> = (0..30).map(|_| rng::normal_vec(&mut g, &[0.0; 3], 1.0)).collect();
        let labels: Vec<f64> = (0..30).map(|_| if g.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let params: Vec<f64> = (0..=dim).map(|_| rng::normal(&mut g, 0.0, 1.0)).collect();
        let (_, grad) = logistic_objective(&params, &features, &labels, 1e-2);
        let fd = central_difference(|p| logistic_objective(p, &features, &labels, 1e-2).0, &params, H);
        t.check(relative_gap(&grad, &fd) <= 1e-6);

        let classes = 4;
        let xs: Vec<Vec<f64>> = (0..30).map(|_| rng::normal_vec(&mut g, &[0.0; 3], 1.0)).collect();
        let xs_ref: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let ys: Vec<usize> = (0..30).map(|_| g.gen_range(0..classes)).collect();
        let params: Vec<f64> = (0..classes * (dim + 1)).map(|_| rng::normal(&mut g, 0.0, 1.0)).collect();
        let (_, grad) = softmax_objective(&params, &xs_ref, &ys, classes, 1e-2);
        let fd = central_difference(|p| softmax_objective(p, &xs_ref, &ys, classes, 1e-2).0, &params, H);
        t.check(relative_gap(&grad, &fd) <= 1e-6);
    }
    t.finish("gradients")
}

/// Exact `C(2n, n) / 4^n` from a row of Pascal's triangle in `u128`, valid
/// for `n <= 64`.
fn central_binomial_probability(n: u32) -> f64 {
    let m = 2 * n as usize;
    let mut row = vec![0u128; m + 1];
    row[0] = 1;
    for i in 1..=m {
        for j in (1..=i).rev() {
            row[j] += row[j - 1];
        }
    }
    row[n as usize] as f64 / 2f64.powi(2 * n as i32)
}

pub fn tv_suite() -> SuiteResult {
    let mut t = Tally::default();
    t.check_result(tv_lower_bound(1).map(|v| v == 0.5));
    t.check_result(tv_lower_bound(2).map(|v| v == 0.625));
    let mut prev = 0.0;
    for n in 1..=64u32 {
        let v = tv_lower_bound(n as u64).unwrap_or(f64::NAN);
        t.check(v > prev);
        let oracle = 1.0 - central_binomial_probability(n);
        t.check((v - oracle).abs() <= 1e-14);
        prev = v;
    }
    t.check_result(tv_lower_bound(50).map(|v| v > 0.9));
    t.finish("tv-bound")
}

/// `E_P[w] = 1` for oracle ratios, within three standard errors.
pub fn change_of_measure_suite(draws: usize, seed: u64) -> SuiteResult {
    let mut g = seeded(seed);
    let mut t = Tally::default();
    let regression = RegressionDesign::new(2, 4.0, vec![vec![0.5, -0.3]], vec![0.8]).expect("valid design");
    let cases: Vec<(GaussianLaw, RatioModel)> = vec![
        (regression.source_law(1), regression.oracle_ratio(1)),
        (Figure1Design::new(2.0).source_law(), Figure1Design::new(2.0).oracle_ratio()),
    ];
    for (law, ratio) in cases {
        let sd = law.variance.sqrt();
        let w: Result<Vec<f64>> = (0..draws).map(|_| ratio.ratio(&rng::normal_vec(&mut g, &law.mean, sd))).collect();
        t.check_result(w.map(|w| {
            let n = w.len() as f64;
            let mean = w.iter().sum::<f64>() / n;
            let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            (mean - 1.0).abs() <= 3.0 * (var / n).sqrt()
        }));
    }
    t.finish("change-of-measure")
}
