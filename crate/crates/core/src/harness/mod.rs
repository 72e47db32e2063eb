//! Verification checks with quantitative reports.

mod checks;
mod nested;

use serde::{Deserialize, Serialize};

use crate::control::{ActionSet, ControlPolicy, FamilySpec, StoppingRule};
use crate::dynamics::{verify_assumption1, Assumption1Report};
use crate::error::{invalid, Result};
use crate::levy_noise::TruncationLevel;
use crate::value::{DiscreteProblem, Model};

pub use checks::{
    check_continuity, check_coupling, check_dpp, check_dpp_exact, check_moment_bounds, check_supermartingale,
    check_tau_law, check_truncation_convergence, heavy_tail_contrast, ContinuitySettings, DppReports,
    IncrementCase, MomentSettings, SupermartingaleSettings,
};
pub use nested::InnerMode;

/// A complete control problem: model, admissible family and initial condition.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub model: Model,
    pub family: FamilySpec,
    pub start: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    /// Level used by the truncated-value checks.
    pub truncation: Option<TruncationLevel>,
    pub policy_cap: usize,
    /// Exact discrete counterpart, when one exists.
    pub discrete: Option<DiscreteProblem>,
    /// Stopping rules exercised by the dynamic programming checks.
    pub tau_rules: Vec<StoppingRule>,
    /// `(t₁, t₂)` pairs for the supermartingale check.
    pub time_pairs: Vec<(f64, f64)>,
    /// Largest expected max/min spread of `E sup|X|^p / (1 + |x|^p)` over a start grid.
    pub moment_slack: f64,
}

impl Problem {
    pub fn actions(&self) -> &ActionSet {
        &self.family.actions
    }

    pub fn dim(&self) -> usize {
        self.model.coeffs.state_dim
    }

    /// The full policy family on `[start, horizon]`.
    pub fn policies(&self) -> Result<Vec<ControlPolicy>> {
        self.family.enumerate_from(self.start, self.policy_cap)
    }

    /// Dimensional consistency, declared reward bounds, and the coefficient bounds.
    pub fn validate(&self) -> Result<Assumption1Report> {
        let c = &self.model.coeffs;
        if self.x0.len() != c.state_dim {
            return Err(invalid(format!("x0 has dimension {}, state dimension is {}", self.x0.len(), c.state_dim)));
        }
        if self.family.actions.action_dim() != c.action_dim {
            return Err(invalid(format!(
                "actions have dimension {}, coefficients expect {}",
                self.family.actions.action_dim(),
                c.action_dim
            )));
        }
        if self.model.sampler.spec().has_jumps() && self.model.sampler.spec().jump_dim != c.jump_dim {
            return Err(invalid("noise mark dimension differs from the jump coefficient"));
        }
        if !(self.start < self.horizon) {
            return Err(invalid(format!("horizon [{}, {}] is empty", self.start, self.horizon)));
        }
        if let Some(l) = &self.family.lattice {
            if l.dim() != c.state_dim {
                return Err(invalid("feedback lattice dimension differs from the state dimension"));
            }
        }
        for &(a, b) in &self.time_pairs {
            if !(self.start <= a && a < b && b < self.horizon) {
                return Err(invalid(format!("time pair ({a}, {b}) must satisfy s <= t1 < t2 < T")));
            }
        }
        self.model.cost.check_bounds(self.actions(), c.state_dim, (self.start, self.horizon), 10.0, 2000, 11)?;
        let report = verify_assumption1(c, self.actions(), self.horizon, 2000, 10.0, &[1.0, 4.0, 16.0], 7);
        if !report.pass {
            return Err(invalid(format!(
                "problem {}: coefficients exceed their declared constants ({:?})",
                self.name,
                report.violations.first()
            )));
        }
        Ok(report)
    }
}

/// Statistical multiplier and deterministic allowances of every gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub se_multiplier: f64,
    /// Discretization allowance; `0.01 f_bound` when unset.
    pub delta_dt: Option<f64>,
    /// Floating-point allowance relative to the payoff bound.
    pub rounding: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { se_multiplier: 3.0, delta_dt: None, rounding: 1e-9 }
    }
}

impl Tolerances {
    pub fn delta(&self, problem: &Problem) -> f64 {
        self.delta_dt.unwrap_or(0.01 * problem.model.cost.f_bound)
    }

    /// Discretization plus rounding allowance for `problem`.
    pub fn deterministic(&self, problem: &Problem) -> f64 {
        self.delta(problem) + self.rounding * problem.model.cost.payoff_bound(problem.start, problem.horizon).max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Check,
    /// Expected-behavior demonstration; never counts toward pass/fail totals.
    Demonstrator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Measured {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct Tolerance {
    pub statistical: f64,
    pub deterministic: f64,
    pub total: f64,
}

impl Tolerance {
    pub fn new(statistical: f64, deterministic: f64) -> Self {
        Tolerance { statistical, deterministic, total: statistical + deterministic }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.to_string(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// `(x, y ± err)` points for plotting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub err: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub problem: String,
    pub category: Category,
    pub seed: u64,
    pub lhs: Option<Measured>,
    pub rhs: Option<Measured>,
    pub tolerance: Tolerance,
    pub pass: bool,
    pub tables: Vec<Table>,
    pub series: Vec<Series>,
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn new(check: &str, problem: &str, seed: u64) -> Self {
        CheckReport {
            check: check.to_string(),
            problem: problem.to_string(),
            category: Category::Check,
            seed,
            lhs: None,
            rhs: None,
            tolerance: Tolerance::default(),
            pass: false,
            tables: Vec::new(),
            series: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }

    /// Demonstrators never fail a run.
    pub fn counts_as_failure(&self) -> bool {
        self.category == Category::Check && !self.pass
    }
}
