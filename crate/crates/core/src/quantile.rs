//! Weighted empirical score distributions with a point mass at `+inf`, and
//! their quantiles.

use crate::error::{invalid, MscpError, Result};

/// Slack applied to the cumulative-mass comparison so that masses such as
/// `1/(n+1)` reach the target level despite rounding.
pub const CUMULATIVE_SLACK: f64 = 1e-9;

/// Turns calibration ratios `w_i` and the test ratio `w_0` into normalized
/// masses `p_i = w_i / (w_0 + sum w_j)` and `p_0 = w_0 / (w_0 + sum w_j)`.
pub fn normalize_weights(cal_ratios: &[f64], test_ratio: f64) -> Result<(Vec<f64>, f64)> {
    if cal_ratios.iter().chain(std::iter::once(&test_ratio)).any(|w| !w.is_finite() || *w < 0.0) {
        return invalid("likelihood ratios must be finite and nonnegative");
    }
    let total = test_ratio + cal_ratios.iter().sum::<f64>();
    if total <= 0.0 {
        return Err(MscpError::DegenerateWeights);
    }
    Ok((cal_ratios.iter().map(|w| w / total).collect(), test_ratio / total))
}

/// Finite scores with masses plus residual mass at `+inf`.
///
/// Atoms are sorted by score and equal scores are merged at construction,
/// so a query is a binary search over cumulative mass.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedScoreDistribution {
    scores: Vec<f64>,
    masses: Vec<f64>,
    cumulative: Vec<f64>,
    tail_mass: f64,
}

impl WeightedScoreDistribution {
    pub fn new(atoms: impl IntoIterator<Item = (f64, f64)>, tail_mass: f64) -> Result<Self> {
        let mut atoms: Vec<(f64, f64)> = atoms.into_iter().collect();
        if atoms.iter().any(|(s, m)| !s.is_finite() || !m.is_finite() || *m < 0.0) {
            return invalid("atoms need finite scores and finite nonnegative masses");
        }
        if !tail_mass.is_finite() || tail_mass < 0.0 {
            return invalid("tail mass must be finite and nonnegative");
        }
        let total = tail_mass + atoms.iter().map(|a| a.1).sum::<f64>();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("masses sum to {total}, not 1"));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut scores: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut masses: Vec<f64> = Vec::with_capacity(atoms.len());
        for (s, m) in atoms {
            match scores.last() {
                Some(&last) if last == s => *masses.last_mut().unwrap() += m,
                _ => {
                    scores.push(s);
                    masses.push(m);
                }
            }
        }
        let cumulative = masses
            .iter()
            .scan(0.0, |acc, m| {
                *acc += m;
                Some(*acc)
            })
            .collect();
        Ok(Self { scores, masses, cumulative, tail_mass })
    }

    /// Distribution obtained by normalizing calibration and test ratios.
    pub fn from_ratios(scores: &[f64], cal_ratios: &[f64], test_ratio: f64) -> Result<Self> {
        if scores.len() != cal_ratios.len() {
            return Err(MscpError::DimensionMismatch { expected: scores.len(), got: cal_ratios.len() });
        }
        let (p, p0) = normalize_weights(cal_ratios, test_ratio)?;
        Self::new(scores.iter().copied().zip(p), p0)
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Distinct scores with their aggregated masses, ascending.
    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.scores.iter().copied().zip(self.masses.iter().copied())
    }

    /// Smallest score `t` whose cumulative mass reaches `level`, or `+inf`
    /// when the finite atoms together fall short of it.
    pub fn quantile(&self, level: f64) -> Result<f64> {
        if !(level > 0.0 && level < 1.0) {
            return invalid(format!("quantile level {level} outside (0, 1)"));
        }
        let target = level - CUMULATIVE_SLACK;
        let idx = self.cumulative.partition_point(|&c| c < target);
        Ok(self.scores.get(idx).copied().unwrap_or(f64::INFINITY))
    }
}

/// Free-function form of [`WeightedScoreDistribution::quantile`].
pub fn weighted_quantile(dist: &WeightedScoreDistribution, level: f64) -> Result<f64> {
    dist.quantile(level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn thirds() -> WeightedScoreDistribution {
        WeightedScoreDistribution::new([(1.0, 0.25), (2.0, 0.25), (3.0, 0.25)], 0.25).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let (p, p0) = normalize_weights(&[1.0, 1.0, 1.0], 1.0).unwrap();
        assert_eq!((p, p0), (vec![0.25, 0.25, 0.25], 0.25));
        let (p, p0) = normalize_weights(&[2.0, 0.0], 2.0).unwrap();
        assert_eq!((p, p0), (vec![0.5, 0.0], 0.5));
        let (p, p0) = normalize_weights(&[1.0, 3.0], 4.0).unwrap();
        assert_eq!((p, p0), (vec![0.125, 0.375], 0.5));
    }

    #[test]
    fn normalize_rejects_zero_total() {
        assert_eq!(normalize_weights(&[0.0, 0.0], 0.0), Err(MscpError::DegenerateWeights));
        assert!(normalize_weights(&[1.0, -1.0], 1.0).is_err());
        assert!(normalize_weights(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(thirds().quantile(0.75).unwrap(), 3.0);
        assert_eq!(thirds().quantile(0.9).unwrap(), f64::INFINITY);
        let all_tail = WeightedScoreDistribution::new([], 1.0).unwrap();
        assert_eq!(all_tail.quantile(0.5).unwrap(), f64::INFINITY);
    }

    #[test]
    fn quantile_rejects_bad_level() {
        assert!(thirds().quantile(0.0).is_err());
        assert!(thirds().quantile(1.0).is_err());
        assert!(thirds().quantile(f64::NAN).is_err());
    }

    #[test]
    fn construction_validates_masses() {
        assert!(WeightedScoreDistribution::new([(1.0, 0.5)], 0.4).is_err());
        assert!(WeightedScoreDistribution::new([(f64::INFINITY, 0.5)], 0.5).is_err());
        assert!(WeightedScoreDistribution::new([(1.0, -0.5), (2.0, 1.0)], 0.5).is_err());
    }

    #[test]
    fn duplicates_are_merged() {
        let d = WeightedScoreDistribution::new([(2.0, 0.2), (1.0, 0.3), (2.0, 0.3)], 0.2).unwrap();
        let atoms: Vec<_> = d.atoms().collect();
        assert_eq!(atoms.len(), 2);
        assert_eq!(atoms[1].0, 2.0);
        assert!((atoms[1].1 - 0.5).abs() < 1e-15);
    }

    /// Order-statistic oracle for uniform weights using integer arithmetic:
    /// index ceil((1 - a/100)(n + 1)).
    fn split_conformal_oracle(sorted: &[f64], alpha_pct: u64) -> f64 {
        let n = sorted.len() as u64;
        let num = (100 - alpha_pct) * (n + 1);
        let k = num.div_ceil(100);
        if k > n {
            f64::INFINITY
        } else {
            sorted[(k - 1) as usize]
        }
    }

    #[test]
    fn uniform_weights_reduce_to_split_conformal() {
        let mut rng = crate::rng::seeded(11);
        for n in 1..=50usize {
            for alpha_pct in [5u64, 10, 20] {
                let scores: Vec<f64> =
                    (0..n).map(|_| crate::rng::uniform(&mut rng, 0.0, 10.0)).collect();
                let dist = WeightedScoreDistribution::from_ratios(&scores, &vec![1.0; n], 1.0).unwrap();
                let mut sorted = scores.clone();
                sorted.sort_by(f64::total_cmp);
                let level = 1.0 - alpha_pct as f64 / 100.0;
                assert_eq!(dist.quantile(level).unwrap(), split_conformal_oracle(&sorted, alpha_pct));
            }
        }
    }

    /// Exact linear-scan oracle over rational masses `num_i / denom` and a
    /// rational level `level_num / level_den`.
    fn rational_oracle(atoms: &[(i32, u64)], denom: u64, level_num: u64, level_den: u64) -> f64 {
        let mut sorted = atoms.to_vec();
        sorted.sort();
        let mut cum = 0u64;
        for (score, num) in sorted {
            cum += num;
            if cum * level_den >= level_num * denom {
                return score as f64;
            }
        }
        f64::INFINITY
    }

    proptest! {
        #[test]
        fn matches_rational_oracle(
            raw in prop::collection::vec((0i32..6, 0u64..10), 0..8),
            tail in 0u64..10,
            level_num in 1u64..100,
        ) {
            let denom: u64 = tail + raw.iter().map(|a| a.1).sum::<u64>();
            prop_assume!(denom > 0);
            let dist = WeightedScoreDistribution::new(
                raw.iter().map(|&(s, m)| (s as f64, m as f64 / denom as f64)),
                tail as f64 / denom as f64,
            ).unwrap();
            let level = level_num as f64 / 100.0;
            prop_assert_eq!(dist.quantile(level).unwrap(), rational_oracle(&raw, denom, level_num, 100));
        }

        #[test]
        fn monotone_in_level(
            raw in prop::collection::vec((0.0f64..5.0, 0.0f64..1.0), 1..12),
            tail in 0.0f64..1.0,
            a in 0.01f64..0.99,
            b in 0.01f64..0.99,
        ) {
            let total = tail + raw.iter().map(|r| r.1).sum::<f64>();
            prop_assume!(total > 0.0);
            let dist = WeightedScoreDistribution::new(
                raw.iter().map(|&(s, m)| (s, m / total)), tail / total).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(dist.quantile(lo).unwrap() <= dist.quantile(hi).unwrap());
        }

        #[test]
        fn splitting_an_atom_leaves_quantile_unchanged(
            raw in prop::collection::vec((0i32..5, 1u64..10), 1..8),
            tail in 0u64..10,
            which in any::<prop::sample::Index>(),
            level_num in 1u64..100,
        ) {
            let denom: u64 = tail + raw.iter().map(|a| a.1).sum::<u64>();
            let merged = WeightedScoreDistribution::new(
                raw.iter().map(|&(s, m)| (s as f64, m as f64 / denom as f64)),
                tail as f64 / denom as f64).unwrap();
            let i = which.index(raw.len());
            let mut split: Vec<(f64, f64)> =
                raw.iter().map(|&(s, m)| (s as f64, m as f64 / denom as f64)).collect();
            let (s, m) = split[i];
            split[i] = (s, m / 2.0);
            split.push((s, m / 2.0));
            let split = WeightedScoreDistribution::new(split, tail as f64 / denom as f64).unwrap();
            let level = level_num as f64 / 100.0;
            prop_assert_eq!(merged.quantile(level).unwrap(), split.quantile(level).unwrap());
        }
    }
}
