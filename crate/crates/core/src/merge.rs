//! Merging per-source weighted conformal sets.
//!
//! Two routes are provided. The vote route keeps `y` when more than a `gamma`
//! fraction of per-source sets (each built at level `1 - (1 - gamma) alpha`)
//! contain it. The p-value route inverts a merged p-value
//! `g(p_1, ..., p_K, alpha) > alpha` for a valid merging function `g`.

use std::fmt;

use crate::error::{invalid, Result};
use crate::wcp::{Interval, PredictionSet, SetRegion};

/// Tolerance for comparing level tags and for snapping `gamma * K` onto an
/// integer vote count.
const LEVEL_TOLERANCE: f64 = 1e-12;
const VOTE_SNAP: f64 = 1e-9;

/// Valid merging function for arbitrarily dependent p-values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MergeRule {
    /// `(alpha / (K gamma)) * #{k : p_k > (1 - gamma) alpha}`.
    GammaVote(f64),
    /// `min(1, K * min_k p_k)`.
    BonferroniMin,
    /// `min(1, 2 * mean(p))`.
    TwiceMean,
}

impl fmt::Display for MergeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MergeRule::GammaVote(g) => write!(f, "GammaVote({g})"),
            MergeRule::BonferroniMin => write!(f, "BonferroniMin"),
            MergeRule::TwiceMean => write!(f, "TwiceMean"),
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return invalid(format!("gamma {gamma} outside [0, 1)"));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha {alpha} outside (0, 1)"));
    }
    Ok(())
}

/// `gamma * K`, snapped to the nearest integer when within rounding of it so
/// that `gamma = (K - 1) / K` yields exactly `K - 1`.
fn vote_bar(gamma: f64, k: usize) -> f64 {
    let bar = gamma * k as f64;
    if (bar - bar.round()).abs() < VOTE_SNAP {
        bar.round()
    } else {
        bar
    }
}

/// `count / K > gamma`, decided on the snapped bar.
pub fn vote_passes(count: usize, k: usize, gamma: f64) -> bool {
    count as f64 > vote_bar(gamma, k)
}

/// Level at which each per-source set must be built for the vote rule.
pub fn vote_source_level(gamma: f64, alpha: f64) -> f64 {
    1.0 - (1.0 - gamma) * alpha
}

/// Majority-style vote over `K` per-source sets of a common kind.
///
/// Regression sets are merged exactly by an endpoint sweep and the result is
/// a union of closed intervals. Label sets are merged by per-label counts.
pub fn merged_set_vote(sets: &[PredictionSet], gamma: f64, alpha: f64) -> Result<PredictionSet> {
    check_gamma(gamma)?;
    check_alpha(alpha)?;
    if sets.is_empty() {
        return invalid("vote merging needs at least one set");
    }
    let expected = vote_source_level(gamma, alpha);
    if let Some(bad) = sets.iter().find(|s| (s.level - expected).abs() > LEVEL_TOLERANCE) {
        return invalid(format!("per-source set built at level {}, vote needs {expected}", bad.level));
    }
    let k = sets.len();
    let level = 1.0 - alpha;

    if let SetRegion::Labels { num_classes, .. } = sets[0].region {
        let mut counts = vec![0usize; num_classes];
        for s in sets {
            match &s.region {
                SetRegion::Labels { members, num_classes: c } if *c == num_classes => {
                    for &m in members {
                        counts[m] += 1;
                    }
                }
                _ => return invalid("cannot merge label sets with other set kinds"),
            }
        }
        let members = (0..num_classes).filter(|&c| vote_passes(counts[c], k, gamma)).collect();
        return Ok(PredictionSet { level, region: SetRegion::Labels { members, num_classes } });
    }

    let mut families = Vec::with_capacity(k);
    for s in sets {
        match s.intervals() {
            Some(iv) => families.push(iv),
            None => return invalid("cannot merge interval sets with label sets"),
        }
    }
    let parts = sweep_vote(&families, |count| vote_passes(count, k, gamma));
    Ok(PredictionSet { level, region: SetRegion::Union(parts) })
}

/// Points covered by a qualifying number of families, as disjoint closed
/// intervals. Each family is one source's set, a union of intervals; a point
/// counts once per family containing it.
fn sweep_vote(families: &[Vec<Interval>], keep: impl Fn(usize) -> bool) -> Vec<Interval> {
    let mut coords: Vec<f64> = families
        .iter()
        .flatten()
        .flat_map(|iv| [iv.lo, iv.hi])
        .filter(|v| v.is_finite())
        .collect();
    coords.sort_by(f64::total_cmp);
    coords.dedup();

    let point_count = |x: f64| families.iter().filter(|f| f.iter().any(|iv| iv.contains(x))).count();
    let gap_count = |a: f64, b: f64| {
        families.iter().filter(|f| f.iter().any(|iv| iv.lo <= a && iv.hi >= b)).count()
    };

    // Pieces in order: gap, point, gap, point, ..., gap. Each piece is
    // (left, right, selected).
    let mut pieces: Vec<(f64, f64, bool)> = Vec::with_capacity(2 * coords.len() + 1);
    let mut left = f64::NEG_INFINITY;
    for &x in &coords {
        pieces.push((left, x, keep(gap_count(left, x))));
        pieces.push((x, x, keep(point_count(x))));
        left = x;
    }
    pieces.push((left, f64::INFINITY, keep(gap_count(left, f64::INFINITY))));

    let mut out: Vec<Interval> = Vec::new();
    let mut open: Option<f64> = None;
    let mut last_right = f64::NEG_INFINITY;
    for (lo, hi, selected) in pieces {
        match (selected, open) {
            (true, None) => {
                open = Some(lo);
                last_right = hi;
            }
            (true, Some(_)) => last_right = hi,
            (false, Some(start)) => {
                out.push(Interval::new(start, last_right));
                open = None;
            }
            (false, None) => {}
        }
    }
    if let Some(start) = open {
        out.push(Interval::new(start, last_right));
    }
    out
}

/// Applies a merging function to `K` p-values.
pub fn merge_p_values(rule: MergeRule, p: &[f64], alpha: f64) -> Result<f64> {
    if p.is_empty() {
        return invalid("no p-values to merge");
    }
    if p.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
        return invalid("p-values must lie in (0, 1]");
    }
    let k = p.len();
    match rule {
        MergeRule::GammaVote(gamma) => {
            check_gamma(gamma)?;
            check_alpha(alpha)?;
            if gamma == 0.0 {
                return invalid("gamma-vote merging function is undefined at gamma = 0");
            }
            let cut = (1.0 - gamma) * alpha;
            let count = p.iter().filter(|&&v| v > cut).count();
            // alpha * (count / bar): exactly alpha when the vote ties the bar.
            Ok(alpha * (count as f64 / vote_bar(gamma, k)))
        }
        MergeRule::BonferroniMin => {
            let min = p.iter().copied().fold(f64::INFINITY, f64::min);
            Ok((k as f64 * min).min(1.0))
        }
        MergeRule::TwiceMean => Ok((2.0 * p.iter().sum::<f64>() / k as f64).min(1.0)),
    }
}

/// `{c : g(p(c), alpha) > alpha}` by enumerating every label.
pub fn merged_label_set_from_pvalues<F>(rule: MergeRule, alpha: f64, num_classes: usize, pvalues: F) -> Result<PredictionSet>
where
    F: Fn(usize) -> Result<Vec<f64>>,
{
    check_alpha(alpha)?;
    if num_classes == 0 {
        return invalid("no candidate labels");
    }
    let mut members = Vec::new();
    for c in 0..num_classes {
        if merge_p_values(rule, &pvalues(c)?, alpha)? > alpha {
            members.push(c);
        }
    }
    Ok(PredictionSet { level: 1.0 - alpha, region: SetRegion::Labels { members, num_classes } })
}

/// `{y : g(p(y), alpha) > alpha}` evaluated on a sorted candidate grid.
///
/// Consecutive accepted grid points become one interval, so the result is
/// exact only up to grid resolution. `pvalues` is also queried at `+-inf`;
/// when the limit is accepted together with the outermost grid point, the
/// corresponding end is extended to infinity.
pub fn merged_interval_set_from_pvalues<F>(rule: MergeRule, alpha: f64, grid: &[f64], pvalues: F) -> Result<PredictionSet>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    check_alpha(alpha)?;
    if grid.is_empty() {
        return invalid("empty candidate grid");
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return invalid("candidate grid must be strictly increasing");
    }
    let accept = |y: f64| -> Result<bool> { Ok(merge_p_values(rule, &pvalues(y)?, alpha)? > alpha) };
    let flags = grid.iter().map(|&y| accept(y)).collect::<Result<Vec<bool>>>()?;

    let mut parts: Vec<Interval> = Vec::new();
    let mut i = 0;
    while i < grid.len() {
        if flags[i] {
            let start = i;
            while i + 1 < grid.len() && flags[i + 1] {
                i += 1;
            }
            parts.push(Interval::new(grid[start], grid[i]));
        }
        i += 1;
    }
    if flags[0] && accept(f64::NEG_INFINITY)? {
        parts[0].lo = f64::NEG_INFINITY;
    }
    if flags[grid.len() - 1] && accept(f64::INFINITY)? {
        parts.last_mut().unwrap().hi = f64::INFINITY;
    }
    Ok(PredictionSet { level: 1.0 - alpha, region: SetRegion::Union(parts) })
}

/// Evenly spaced candidates spanning the finite endpoints of `intervals`,
/// padded on each side by `pad` times the span. Falls back to
/// `[center - 1, center + 1]` when no endpoint is finite.
pub fn candidate_grid(intervals: &[Interval], center: f64, points: usize, pad: f64) -> Result<Vec<f64>> {
    if points < 2 {
        return invalid("candidate grid needs at least two points");
    }
    let finite: Vec<f64> = intervals.iter().flat_map(|iv| [iv.lo, iv.hi]).filter(|v| v.is_finite()).collect();
    let (mut lo, mut hi) = if finite.is_empty() {
        (center - 1.0, center + 1.0)
    } else {
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min).min(center);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(center);
        (lo, hi)
    };
    if hi - lo <= 0.0 {
        lo -= 1.0;
        hi += 1.0;
    }
    let span = hi - lo;
    lo -= pad * span;
    hi += pad * span;
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|i| if i + 1 == points { hi } else { lo + step * i as f64 }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wcp::wcp_interval_regression;
    use proptest::prelude::*;

    fn iv(lo: f64, hi: f64, level: f64) -> PredictionSet {
        wcp_interval_regression((lo + hi) / 2.0, (hi - lo) / 2.0, level)
    }

    fn labels(members: Vec<usize>, c: usize, level: f64) -> PredictionSet {
        PredictionSet { level, region: SetRegion::Labels { members, num_classes: c } }
    }

    #[test]
    fn majority_vote_example() {
        let alpha = 0.1;
        let lvl = vote_source_level(0.5, alpha);
        let sets = [iv(0.0, 2.0, lvl), iv(1.0, 3.0, lvl), iv(10.0, 11.0, lvl)];
        let merged = merged_set_vote(&sets, 0.5, alpha).unwrap();
        assert_eq!(merged.intervals().unwrap(), vec![Interval::new(1.0, 2.0)]);
        assert_eq!(merged.level, 0.9);
    }

    #[test]
    fn unanimous_vote_returns_the_common_set() {
        let lvl = vote_source_level(0.3, 0.2);
        let s = iv(-1.0, 4.0, lvl);
        let merged = merged_set_vote(&[s.clone(), s], 0.3, 0.2).unwrap();
        assert_eq!(merged.intervals().unwrap(), vec![Interval::new(-1.0, 4.0)]);
        let l = labels(vec![0, 2], 4, lvl);
        let merged = merged_set_vote(&[l.clone(), l], 0.3, 0.2).unwrap();
        assert_eq!(merged.region, SetRegion::Labels { members: vec![0, 2], num_classes: 4 });
    }

    #[test]
    fn four_fifths_vote_of_five_is_intersection() {
        let lvl = vote_source_level(0.8, 0.1);
        let sets: Vec<_> = (0..5).map(|i| iv(i as f64 * 0.1, 3.0 + i as f64 * 0.2, lvl)).collect();
        let merged = merged_set_vote(&sets, 0.8, 0.1).unwrap();
        let last_lo = sets[4].intervals().unwrap()[0].lo;
        let first_hi = sets[0].intervals().unwrap()[0].hi;
        assert_eq!(merged.intervals().unwrap(), vec![Interval::new(last_lo, first_hi)]);
    }

    #[test]
    fn touching_intervals_meet_at_a_point() {
        let lvl = vote_source_level(0.5, 0.1);
        let merged = merged_set_vote(&[iv(0.0, 1.0, lvl), iv(1.0, 2.0, lvl)], 0.5, 0.1).unwrap();
        assert_eq!(merged.intervals().unwrap(), vec![Interval::new(1.0, 1.0)]);
        let disjoint = merged_set_vote(&[iv(0.0, 1.0, lvl), iv(2.0, 3.0, lvl)], 0.5, 0.1).unwrap();
        assert_eq!(disjoint.intervals().unwrap(), vec![]);
    }

    #[test]
    fn unbounded_sets_merge() {
        let lvl = vote_source_level(0.5, 0.1);
        let full = wcp_interval_regression(0.0, f64::INFINITY, lvl);
        let merged = merged_set_vote(&[full.clone(), full.clone(), iv(0.0, 1.0, lvl)], 0.5, 0.1).unwrap();
        assert!(!merged.is_finite());
        let merged = merged_set_vote(&[full, iv(5.0, 6.0, lvl), iv(0.0, 1.0, lvl)], 0.5, 0.1).unwrap();
        assert_eq!(merged.intervals().unwrap(), vec![Interval::new(0.0, 1.0), Interval::new(5.0, 6.0)]);
        assert_eq!(merged.size(), 2.0);
    }

    #[test]
    fn vote_rejects_bad_input() {
        let lvl = vote_source_level(0.5, 0.1);
        assert!(merged_set_vote(&[], 0.5, 0.1).is_err());
        assert!(merged_set_vote(&[iv(0.0, 1.0, 0.9)], 0.5, 0.1).is_err());
        assert!(merged_set_vote(&[iv(0.0, 1.0, lvl), labels(vec![0], 2, lvl)], 0.5, 0.1).is_err());
        assert!(merged_set_vote(&[iv(0.0, 1.0, lvl)], 1.0, 0.1).is_err());
    }

    #[test]
    fn merge_function_examples() {
        let b = merge_p_values(MergeRule::BonferroniMin, &[0.01, 0.5, 0.9], 0.1).unwrap();
        assert!((b - 0.03).abs() < 1e-15);
        assert_eq!(merge_p_values(MergeRule::TwiceMean, &[0.5, 0.5], 0.1).unwrap(), 1.0);
        let g = merge_p_values(MergeRule::GammaVote(0.5), &[0.06, 0.06, 0.02, 0.02], 0.1).unwrap();
        assert!((g - 0.1).abs() < 1e-15);
        assert!(merge_p_values(MergeRule::GammaVote(0.0), &[0.5], 0.1).is_err());
        assert!(merge_p_values(MergeRule::TwiceMean, &[0.0], 0.1).is_err());
    }

    #[test]
    fn label_set_from_pvalues() {
        let set = merged_label_set_from_pvalues(MergeRule::BonferroniMin, 0.1, 2, |c| {
            Ok(if c == 0 { vec![0.3, 0.4] } else { vec![0.01, 0.9] })
        })
        .unwrap();
        assert_eq!(set.region, SetRegion::Labels { members: vec![0], num_classes: 2 });
        let all = merged_label_set_from_pvalues(MergeRule::TwiceMean, 1e-12, 3, |_| Ok(vec![1e-6, 1e-6])).unwrap();
        assert_eq!(all.size(), 3.0);
    }

    #[test]
    fn interval_set_from_pvalues() {
        // p(y) decreasing in |y|: accepted region is |y| <= 1 on the grid.
        let grid: Vec<f64> = (0..=40).map(|i| -2.0 + 0.1 * i as f64).collect();
        let set = merged_interval_set_from_pvalues(MergeRule::BonferroniMin, 0.1, &grid, |y| {
            let p = if y.abs() <= 1.0 + 1e-9 { 0.5 } else { 0.01 };
            Ok(vec![p, p])
        })
        .unwrap();
        let parts = set.intervals().unwrap();
        assert_eq!(parts.len(), 1);
        assert!((parts[0].lo + 1.0).abs() < 1e-9 && (parts[0].hi - 1.0).abs() < 1e-9);
        let full = merged_interval_set_from_pvalues(MergeRule::TwiceMean, 0.1, &grid, |_| Ok(vec![0.5])).unwrap();
        assert!(!full.is_finite());
        assert!(merged_interval_set_from_pvalues(MergeRule::TwiceMean, 0.1, &[], |_| Ok(vec![0.5])).is_err());
    }

    #[test]
    fn grid_spans_padded_union() {
        let g = candidate_grid(&[Interval::new(0.0, 1.0), Interval::new(2.0, 4.0)], 1.0, 2001, 0.1).unwrap();
        assert_eq!(g.len(), 2001);
        assert!((g[0] + 0.4).abs() < 1e-12);
        assert_eq!(*g.last().unwrap(), 4.4);
    }

    proptest! {
        #[test]
        fn bonferroni_vote_matches_k_min(
            p in prop::collection::vec(1e-6f64..1.0, 2..8),
            alpha in 1e-4f64..0.999,
        ) {
            let k = p.len();
            let gamma = (k - 1) as f64 / k as f64;
            let g = merge_p_values(MergeRule::GammaVote(gamma), &p, alpha).unwrap();
            let min = p.iter().copied().fold(1.0, f64::min);
            prop_assert_eq!(g > alpha, k as f64 * min > alpha);
        }

        #[test]
        fn vote_and_pvalue_routes_agree_on_labels(
            pv in prop::collection::vec(prop::collection::vec(1e-3f64..1.0, 4), 2..6),
            gamma in 0.05f64..0.95,
            alpha in 0.01f64..0.5,
        ) {
            // pv[k][c]: source k's p-value for class c. Membership in the
            // per-source set is p > (1 - gamma) alpha.
            let cut = (1.0 - gamma) * alpha;
            let lvl = vote_source_level(gamma, alpha);
            let sets: Vec<_> = pv.iter()
                .map(|row| labels((0..4).filter(|&c| row[c] > cut).collect(), 4, lvl))
                .collect();
            let voted = merged_set_vote(&sets, gamma, alpha).unwrap();
            let inverted = merged_label_set_from_pvalues(MergeRule::GammaVote(gamma), alpha, 4, |c| {
                Ok(pv.iter().map(|row| row[c]).collect())
            }).unwrap();
            prop_assert_eq!(voted.region, inverted.region);
        }
    }
}
