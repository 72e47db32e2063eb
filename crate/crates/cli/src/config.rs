//! Experiment configuration, read from TOML.
//!
//! Unknown keys anywhere in the file are errors. Validation collects every
//! problem it finds before failing, each named by its dotted field path.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use levydp::harness::{IncrementCase, InnerMode, Tolerances};
use levydp::levy_noise::LevyMeasureSpec;
use levydp::registry::{ProblemOptions, PROBLEM_NAMES};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    #[serde(default)]
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Family {
    pub actions: Option<Vec<f64>>,
    pub stages: usize,
    pub policy_cap: usize,
}

impl Default for Family {
    fn default() -> Self {
        Family { actions: None, stages: 3, policy_cap: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub n_paths: usize,
    /// Index into the policy family.
    pub policy: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { n_paths: 4, policy: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValueSection {
    pub n_paths: usize,
    /// Start states; defaults to the problem's `x0`.
    pub x_grid: Option<Vec<f64>>,
}

impl Default for ValueSection {
    fn default() -> Self {
        ValueSection { n_paths: 2000, x_grid: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DppSection {
    pub n_outer: usize,
    pub inner: InnerMode,
    /// Run at the problem's truncation level instead of untruncated.
    pub truncated: bool,
}

impl Default for DppSection {
    fn default() -> Self {
        DppSection { n_outer: 500, inner: InnerMode::Nested { n_inner: 512, budget: 1_000_000_000 }, truncated: false }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupermartingaleSection {
    pub n_outer: usize,
    pub inner: InnerMode,
    /// Equal-width cells on `[lower, upper]` for the conditional diagnostic.
    pub cells: Option<(f64, f64, usize)>,
    pub min_cell_paths: usize,
}

impl Default for SupermartingaleSection {
    fn default() -> Self {
        SupermartingaleSection {
            n_outer: 500,
            inner: InnerMode::Nested { n_inner: 512, budget: 1_000_000_000 },
            cells: None,
            min_cell_paths: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentsSection {
    pub p_list: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub n_paths: usize,
    /// Defaults to the problem's declared spread.
    pub slack: Option<f64>,
    /// Constant action; defaults to the last action of the grid.
    pub action: Option<Vec<f64>>,
    pub increments: Vec<IncrementCase>,
    /// Samples for the tail-index demonstrator (power-law jumps only).
    pub tail_samples: usize,
}

impl Default for MomentsSection {
    fn default() -> Self {
        MomentsSection {
            p_list: vec![2.0, 4.0],
            x_grid: vec![0.0, 1.0, 4.0, 16.0],
            n_paths: 2000,
            slack: None,
            action: None,
            increments: Vec::new(),
            tail_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuitySection {
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub policy: usize,
    pub calibration: Vec<IncrementCase>,
    pub test: Vec<IncrementCase>,
    pub n_paths: usize,
    pub modulus_samples: usize,
}

impl Default for ContinuitySection {
    fn default() -> Self {
        ContinuitySection {
            p: 2.0,
            alpha: 0.5,
            beta: 4.0,
            policy: 0,
            calibration: Vec::new(),
            test: Vec::new(),
            n_paths: 1000,
            modulus_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: String,
    pub seed: u64,
    pub horizon: Horizon,
    pub output: Option<PathBuf>,
    pub x0: Option<f64>,
    pub dt: Option<f64>,
    /// Level used by the truncated checks; absent means `4`.
    pub truncation: Option<f64>,
    #[serde(default = "default_m_list")]
    pub m_list: Vec<f64>,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    pub guard: Option<f64>,
    pub noise: Option<LevyMeasureSpec>,
    #[serde(default)]
    pub family: Family,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub value: ValueSection,
    #[serde(default)]
    pub dpp: DppSection,
    #[serde(default)]
    pub supermartingale: SupermartingaleSection,
    #[serde(default)]
    pub moments: MomentsSection,
    #[serde(default)]
    pub continuity: ContinuitySection,
}

fn default_m_list() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0, 16.0]
}

fn default_n_paths() -> usize {
    2000
}

fn default_n_seeds() -> usize {
    10_000
}

enum Key {
    Leaf,
    Table(&'static [(&'static str, Key)]),
}

use Key::{Leaf, Table};

const INNER: Key = Table(&[("mode", Leaf), ("n_inner", Leaf), ("budget", Leaf)]);
const CASE: &[(&str, Key)] = &[("s", Leaf), ("x", Leaf), ("s_hat", Leaf), ("x_hat", Leaf)];

const SCHEMA: &[(&str, Key)] = &[
    ("problem", Leaf),
    ("seed", Leaf),
    ("horizon", Table(&[("start", Leaf), ("end", Leaf)])),
    ("output", Leaf),
    ("x0", Leaf),
    ("dt", Leaf),
    ("truncation", Leaf),
    ("m_list", Leaf),
    ("n_paths", Leaf),
    ("n_seeds", Leaf),
    ("guard", Leaf),
    // tagged enums inside; the typed pass reports unknown keys there
    ("noise", Leaf),
    ("family", Table(&[("actions", Leaf), ("stages", Leaf), ("policy_cap", Leaf)])),
    ("tolerances", Table(&[("se_multiplier", Leaf), ("delta_dt", Leaf), ("rounding", Leaf)])),
    ("simulate", Table(&[("n_paths", Leaf), ("policy", Leaf)])),
    ("value", Table(&[("n_paths", Leaf), ("x_grid", Leaf)])),
    ("dpp", Table(&[("n_outer", Leaf), ("inner", INNER), ("truncated", Leaf)])),
    ("supermartingale", Table(&[("n_outer", Leaf), ("inner", INNER), ("cells", Leaf), ("min_cell_paths", Leaf)])),
    (
        "moments",
        Table(&[
            ("p_list", Leaf),
            ("x_grid", Leaf),
            ("n_paths", Leaf),
            ("slack", Leaf),
            ("action", Leaf),
            ("increments", Table(CASE)),
            ("tail_samples", Leaf),
        ]),
    ),
    (
        "continuity",
        Table(&[
            ("p", Leaf),
            ("alpha", Leaf),
            ("beta", Leaf),
            ("policy", Leaf),
            ("calibration", Table(CASE)),
            ("test", Table(CASE)),
            ("n_paths", Leaf),
            ("modulus_samples", Leaf),
        ]),
    ),
];

const REQUIRED: &[&str] = &["problem", "seed", "horizon"];

fn walk(value: &toml::Value, schema: &[(&str, Key)], path: &str, errors: &mut Vec<String>) {
    let join = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                match schema.iter().find(|(name, _)| name == k) {
                    None => errors.push(format!("{}: unknown key", join(k))),
                    Some((_, Table(inner))) => walk(v, inner, &join(k), errors),
                    Some((_, Leaf)) => {}
                }
            }
        }
        toml::Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                walk(v, schema, &format!("{path}[{i}]"), errors);
            }
        }
        _ => errors.push(format!("{path}: expected a table")),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw: toml::Value = text.parse().map_err(|e: toml::de::Error| CliError::Config(vec![e.message().to_string()]))?;
        let mut errors = Vec::new();
        if let toml::Value::Table(t) = &raw {
            for key in REQUIRED {
                if !t.contains_key(*key) {
                    errors.push(format!("{key}: missing required field"));
                }
            }
            if let Some(toml::Value::Table(h)) = t.get("horizon") {
                if !h.contains_key("end") {
                    errors.push("horizon.end: missing required field".to_string());
                }
            }
        }
        walk(&raw, SCHEMA, "", &mut errors);
        if !errors.is_empty() {
            return Err(CliError::Config(errors));
        }
        let cfg: ExperimentConfig = raw.try_into().map_err(|e: toml::de::Error| CliError::Config(vec![e.message().to_string()]))?;
        let errors = cfg.semantic_errors();
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Config(errors))
        }
    }

    fn semantic_errors(&self) -> Vec<String> {
        let mut e = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                e.push(msg);
            }
        };
        need(
            PROBLEM_NAMES.contains(&self.problem.as_str()),
            format!("problem: unknown problem {:?}; known: {}", self.problem, PROBLEM_NAMES.join(", ")),
        );
        let (s, t) = (self.horizon.start, self.horizon.end);
        need(s.is_finite() && t.is_finite() && s < t, format!("horizon: need start < end, got [{s}, {t}]"));
        need(self.dt.is_none_or(|d| d > 0.0), "dt: must be positive".into());
        need(self.truncation.is_none_or(|m| m > 0.0), "truncation: must be positive".into());
        need(self.m_list.iter().all(|&m| m > 0.0), "m_list: levels must be positive".into());
        need(self.m_list.windows(2).all(|w| w[0] < w[1]), "m_list: levels must be strictly increasing".into());
        need(self.n_paths >= 2, "n_paths: need at least 2".into());
        need(self.n_seeds >= 1000, "n_seeds: need at least 1000".into());
        need(self.family.stages >= 1, "family.stages: need at least 1".into());
        need(self.tolerances.se_multiplier > 0.0, "tolerances.se_multiplier: must be positive".into());
        need(self.simulate.n_paths >= 1, "simulate.n_paths: need at least 1".into());
        need(self.value.n_paths >= 2, "value.n_paths: need at least 2".into());
        need(self.dpp.n_outer >= 2, "dpp.n_outer: need at least 2".into());
        need(self.supermartingale.n_outer >= 2, "supermartingale.n_outer: need at least 2".into());
        for (name, mode) in [("dpp.inner", self.dpp.inner), ("supermartingale.inner", self.supermartingale.inner)] {
            if let InnerMode::Nested { n_inner, .. } = mode {
                need(n_inner >= 2, format!("{name}.n_inner: need at least 2"));
            }
        }
        if let Some((lo, hi, n)) = self.supermartingale.cells {
            need(lo < hi && n >= 1, "supermartingale.cells: need lower < upper and at least one cell".into());
        }
        need(self.moments.p_list.iter().all(|&p| p >= 2.0), "moments.p_list: orders must be at least 2".into());
        need(self.moments.n_paths >= 2, "moments.n_paths: need at least 2".into());
        need(self.moments.slack.is_none_or(|v| v >= 1.0), "moments.slack: must be at least 1".into());
        need(self.continuity.n_paths >= 2, "continuity.n_paths: need at least 2".into());
        need(
            self.continuity.alpha > 0.0 && self.continuity.beta > 0.0,
            "continuity: alpha and beta must be positive".into(),
        );
        e
    }

    pub fn problem_options(&self) -> ProblemOptions {
        ProblemOptions {
            start: self.horizon.start,
            horizon: self.horizon.end,
            x0: self.x0,
            dt: self.dt,
            noise: self.noise.clone(),
            stages: self.family.stages,
            truncation: Some(self.truncation.unwrap_or(4.0)),
            policy_cap: self.family.policy_cap,
            guard: self.guard,
            actions: self.family.actions.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "problem = \"linear-drift\"\nseed = 1\n[horizon]\nend = 1.0\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.horizon.start, 0.0);
        assert_eq!(c.m_list, default_m_list());
        assert_eq!(c.tolerances, Tolerances::default());
    }

    #[test]
    fn every_violation_is_listed_with_its_path() {
        let text = "problem = \"nope\"\nsed = 1\n[horizon]\nend = 1.0\n[dpp]\nn_outr = 3\n[dpp.inner]\nmode = \"nested\"\nn_inner = 4\nbuget = 5\n";
        let CliError::Config(errs) = ExperimentConfig::parse(text).unwrap_err() else { panic!() };
        assert!(errs.contains(&"seed: missing required field".to_string()), "{errs:?}");
        assert!(errs.contains(&"sed: unknown key".to_string()));
        assert!(errs.contains(&"dpp.n_outr: unknown key".to_string()));
        assert!(errs.contains(&"dpp.inner.buget: unknown key".to_string()));
    }

    #[test]
    fn unknown_keys_inside_case_arrays() {
        let text = format!("{MINIMAL}[[moments.increments]]\ns = 0.0\nx = 0.0\ns_hat = 0.5\nxhat = 1.0\n");
        let CliError::Config(errs) = ExperimentConfig::parse(&text).unwrap_err() else { panic!() };
        assert_eq!(errs, vec!["moments.increments[0].xhat: unknown key".to_string()]);
    }

    #[test]
    fn semantic_errors_are_collected() {
        let text = "problem = \"heavy-tail\"\nseed = 1\nm_list = [4.0, 2.0]\nn_paths = 1\n[horizon]\nstart = 1.0\nend = 1.0\n";
        let CliError::Config(errs) = ExperimentConfig::parse(text).unwrap_err() else { panic!() };
        assert_eq!(errs.len(), 3, "{errs:?}");
        assert!(errs[0].starts_with("horizon:"));
    }
}
