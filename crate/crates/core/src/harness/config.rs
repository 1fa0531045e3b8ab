//! Experiment configuration, read from a single JSON document.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MscpError, Result};
use crate::merge::MergeRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Figure1,
    Regression,
    Classification,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Figure1 => "figure1",
            Task::Regression => "regression",
            Task::Classification => "classification",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioMode {
    #[default]
    Oracle,
    Logistic,
}

/// Vote threshold; `Bonferroni` resolves to `(K - 1) / K` once `K` is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Value(f64),
    Bonferroni,
}

impl Gamma {
    pub fn resolve(self, k: usize) -> f64 {
        match self {
            Gamma::Value(g) => g,
            Gamma::Bonferroni => (k - 1) as f64 / k as f64,
        }
    }
}

/// Merging function for the p-value route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RuleSpec {
    GammaVote(Gamma),
    BonferroniMin,
    TwiceMean,
}

impl RuleSpec {
    pub fn resolve(self, k: usize) -> MergeRule {
        match self {
            RuleSpec::GammaVote(g) => MergeRule::GammaVote(g.resolve(k)),
            RuleSpec::BonferroniMin => MergeRule::BonferroniMin,
            RuleSpec::TwiceMean => MergeRule::TwiceMean,
        }
    }
}

/// Prediction-set method. Written in configs and CSV output as `CP`, `WCP`,
/// `PooledWCP`, `MergedVote(0.5)`, `MergedVote((K-1)/K)`,
/// `MergedPvalue(TwiceMean)`, `MergedPvalue(BonferroniMin)` or
/// `MergedPvalue(GammaVote(0.5))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// Unweighted split conformal on the pooled calibration data.
    Cp,
    /// Single-source weighted conformal prediction.
    Wcp,
    PooledWcp,
    MergedVote(Gamma),
    MergedPvalue(RuleSpec),
}

fn fmt_gamma(g: Gamma) -> String {
    match g {
        Gamma::Value(v) => format!("{v}"),
        Gamma::Bonferroni => "(K-1)/K".to_string(),
    }
}

fn parse_gamma(s: &str) -> std::result::Result<Gamma, String> {
    if s == "(K-1)/K" {
        return Ok(Gamma::Bonferroni);
    }
    let v: f64 = s.parse().map_err(|_| format!("bad gamma '{s}'"))?;
    if !(0.0..1.0).contains(&v) {
        return Err(format!("gamma {v} outside [0, 1)"));
    }
    Ok(Gamma::Value(v))
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Cp => f.write_str("CP"),
            Method::Wcp => f.write_str("WCP"),
            Method::PooledWcp => f.write_str("PooledWCP"),
            Method::MergedVote(g) => write!(f, "MergedVote({})", fmt_gamma(*g)),
            Method::MergedPvalue(RuleSpec::BonferroniMin) => f.write_str("MergedPvalue(BonferroniMin)"),
            Method::MergedPvalue(RuleSpec::TwiceMean) => f.write_str("MergedPvalue(TwiceMean)"),
            Method::MergedPvalue(RuleSpec::GammaVote(g)) => write!(f, "MergedPvalue(GammaVote({}))", fmt_gamma(*g)),
        }
    }
}

fn inner<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    s.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        match s {
            "CP" => return Ok(Method::Cp),
            "WCP" => return Ok(Method::Wcp),
            "PooledWCP" => return Ok(Method::PooledWcp),
            _ => {}
        }
        if let Some(g) = inner(s, "MergedVote") {
            return Ok(Method::MergedVote(parse_gamma(g)?));
        }
        if let Some(rule) = inner(s, "MergedPvalue") {
            return match rule {
                "BonferroniMin" => Ok(Method::MergedPvalue(RuleSpec::BonferroniMin)),
                "TwiceMean" => Ok(Method::MergedPvalue(RuleSpec::TwiceMean)),
                _ => match inner(rule, "GammaVote") {
                    Some(g) => match parse_gamma(g)? {
                        Gamma::Value(0.0) => Err("GammaVote merging needs gamma > 0".into()),
                        g => Ok(Method::MergedPvalue(RuleSpec::GammaVote(g))),
                    },
                    None => Err(format!("unknown merging rule '{rule}'")),
                },
            };
        }
        Err(format!("unknown method '{s}'"))
    }
}

impl TryFrom<String> for Method {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

fn default_alpha() -> f64 {
    0.1
}
fn default_k() -> usize {
    5
}
fn default_d() -> usize {
    2
}
fn default_sigma_h_sq() -> f64 {
    4.0
}
fn default_mu_list() -> Vec<f64> {
    vec![0.0, 2.0, 4.0, 6.0]
}
fn default_n_list() -> Vec<usize> {
    vec![10, 50, 100]
}
fn default_train_size() -> usize {
    200
}
fn default_ridge() -> f64 {
    1e-2
}
fn default_grid_points() -> usize {
    2001
}
fn default_classes() -> usize {
    4
}
fn default_separation() -> f64 {
    2.5
}
fn default_shift() -> f64 {
    1.5
}
fn default_domain_size() -> usize {
    400
}
fn default_true() -> bool {
    true
}

/// Declarative description of one experiment. Keys not listed here are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub ratio_mode: RatioMode,

    /// Number of sources (regression and classification).
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_sigma_h_sq")]
    pub sigma_h_sq: f64,
    /// Total samples per source before the 50/50 split; defaults to the
    /// standard table for `K` in {5, 10}.
    #[serde(default)]
    pub source_sizes: Option<Vec<usize>>,
    /// Give every source the same covariate law.
    #[serde(default)]
    pub identical_sources: bool,

    #[serde(default = "default_mu_list")]
    pub mu_list: Vec<f64>,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    /// Size of the separate source draw used to fit the figure1 predictor.
    #[serde(default = "default_train_size")]
    pub train_size: usize,

    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Log-tilt of domain class proportions; 0 removes covariate shift.
    #[serde(default = "default_shift")]
    pub shift: f64,
    /// Samples per source domain for classification.
    #[serde(default = "default_domain_size")]
    pub domain_size: usize,

    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Write measured wall time; when false the column holds 0 so output is
    /// byte-for-byte reproducible.
    #[serde(default = "default_true")]
    pub record_runtime: bool,

    #[serde(default)]
    pub out_csv: Option<String>,
    #[serde(default)]
    pub out_svg: Option<String>,
}

impl ExperimentConfig {
    /// Minimal config for `task` with every optional field at its default.
    pub fn new(task: Task, replications: usize, methods: Vec<Method>) -> Self {
        let json = serde_json::json!({ "task": task, "replications": replications, "methods": methods });
        serde_json::from_value(json).expect("defaults form a valid config")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| MscpError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MscpError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(MscpError::Config(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if self.replications == 0 {
            return fail("replications must be at least 1".into());
        }
        if self.methods.is_empty() {
            return fail("method list is empty".into());
        }
        if self.grid_points < 2 {
            return fail("grid_points must be at least 2".into());
        }
        if !(self.ridge > 0.0) {
            return fail("ridge must be positive".into());
        }
        match self.task {
            Task::Figure1 => {
                if self.mu_list.is_empty() || self.n_list.is_empty() {
                    return fail("figure1 needs nonempty mu_list and n_list".into());
                }
                if self.n_list.contains(&0) || self.train_size == 0 {
                    return fail("figure1 sample sizes must be positive".into());
                }
                if let Some(m) = self.methods.iter().find(|m| !matches!(m, Method::Wcp | Method::Cp)) {
                    return fail(format!("method {m} needs several sources; figure1 supports WCP and CP"));
                }
            }
            Task::Regression | Task::Classification => {
                if self.k == 0 {
                    return fail("K must be at least 1".into());
                }
                if self.task == Task::Regression && self.d < 2 {
                    return fail("regression needs d >= 2".into());
                }
                if self.task == Task::Classification && self.num_classes < 2 {
                    return fail("classification needs at least two classes".into());
                }
                if let Some(sizes) = &self.source_sizes {
                    if sizes.len() != self.k || sizes.iter().any(|&s| s < 2) {
                        return fail("source_sizes needs K entries of at least 2".into());
                    }
                } else if self.task == Task::Regression && !matches!(self.k, 5 | 10) {
                    return fail(format!("no default source sizes for K = {}; set source_sizes", self.k));
                }
                if self.methods.contains(&Method::Wcp) {
                    return fail("WCP is the single-source method; use PooledWCP or a merged method".into());
                }
                for m in &self.methods {
                    if let Method::MergedVote(Gamma::Bonferroni) | Method::MergedPvalue(RuleSpec::GammaVote(Gamma::Bonferroni)) = m {
                        if self.k < 2 {
                            return fail("(K-1)/K needs K >= 2".into());
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for name in [
            "CP",
            "WCP",
            "PooledWCP",
            "MergedVote(0.5)",
            "MergedVote((K-1)/K)",
            "MergedPvalue(TwiceMean)",
            "MergedPvalue(BonferroniMin)",
            "MergedPvalue(GammaVote(0.5))",
        ] {
            let m: Method = name.parse().unwrap();
            assert_eq!(m.to_string(), name);
        }
        assert!("MergedVote(1.0)".parse::<Method>().is_err());
        assert!("MergedPvalue(GammaVote(0))".parse::<Method>().is_err());
        assert!("Nope".parse::<Method>().is_err());
    }

    #[test]
    fn parses_full_config() {
        let cfg = ExperimentConfig::from_json(
            r#"{"task": "regression", "alpha": 0.1, "replications": 3, "seed": 7,
                "methods": ["CP", "PooledWCP", "MergedVote(0.5)"], "ratio_mode": "logistic",
                "K": 5, "d": 2, "sigma_h_sq": 4}"#,
        )
        .unwrap();
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.ratio_mode, RatioMode::Logistic);
        assert_eq!(cfg.methods[2], Method::MergedVote(Gamma::Value(0.5)));
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let err = ExperimentConfig::from_json(r#"{"task": "figure1", "replications": 1, "methods": ["WCP"], "alpah": 0.1}"#);
        assert!(matches!(err, Err(MscpError::Config(_))));
        let empty = ExperimentConfig::from_json(r#"{"task": "figure1", "replications": 1, "methods": []}"#);
        assert!(empty.is_err());
        let alpha = ExperimentConfig::from_json(r#"{"task": "figure1", "replications": 1, "methods": ["WCP"], "alpha": 1.5}"#);
        assert!(alpha.is_err());
        let k = ExperimentConfig::from_json(r#"{"task": "regression", "replications": 1, "methods": ["CP"], "K": 3}"#);
        assert!(k.is_err());
        let pooled = ExperimentConfig::from_json(r#"{"task": "figure1", "replications": 1, "methods": ["PooledWCP"]}"#);
        assert!(pooled.is_err());
    }

    #[test]
    fn gamma_resolution() {
        assert_eq!(Gamma::Bonferroni.resolve(5), 0.8);
        assert_eq!(RuleSpec::GammaVote(Gamma::Value(0.5)).resolve(3), MergeRule::GammaVote(0.5));
    }
}
