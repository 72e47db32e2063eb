use std::sync::Arc;

use crate::error::{invalid, Error, Result};

type Step = dyn Fn(f64, f64, f64) -> f64 + Send + Sync;
type StageReward = dyn Fn(usize, f64, f64) -> f64 + Send + Sync;
type Terminal = dyn Fn(f64) -> f64 + Send + Sync;

/// Finite-stage, finite-action, finite-outcome control problem on a scalar state.
///
/// At stage `k` in state `x` the controller picks `u`, collects
/// `reward(k, x, u)` and moves to `step(x, u, o)` where outcome `o` has
/// probability `p_o`. After the last stage the terminal reward is paid.
#[derive(Clone)]
pub struct DiscreteProblem {
    pub stages: usize,
    pub start: f64,
    pub stage_length: f64,
    pub x0: f64,
    pub actions: Vec<f64>,
    /// `(o, p_o)` pairs.
    pub outcomes: Vec<(f64, f64)>,
    pub node_cap: usize,
    step: Arc<Step>,
    reward: Arc<StageReward>,
    terminal: Arc<Terminal>,
}

impl std::fmt::Debug for DiscreteProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteProblem")
            .field("stages", &self.stages)
            .field("x0", &self.x0)
            .field("actions", &self.actions)
            .field("outcomes", &self.outcomes.len())
            .finish_non_exhaustive()
    }
}

/// Where the restart in the exact dynamic programming identity happens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiscreteStop {
    /// After this many stages.
    Stage(usize),
    /// After the first stage whose outcome is nonzero (or at the end).
    FirstNonzeroOutcome,
}

/// Exact values on the reachable lattice, one layer per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    /// `layers[k]` holds `(x, V(k, x), argmax action index)` sorted by `x`.
    pub layers: Vec<Vec<(f64, f64, usize)>>,
}

impl ValueTable {
    fn entry(&self, k: usize, x: f64) -> Option<&(f64, f64, usize)> {
        find(self.layers.get(k)?, x)
    }

    pub fn value(&self, k: usize, x: f64) -> Option<f64> {
        self.entry(k, x).map(|e| e.1)
    }

    pub fn best_action(&self, k: usize, x: f64) -> Option<usize> {
        self.entry(k, x).map(|e| e.2)
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }
}

fn find(layer: &[(f64, f64, usize)], x: f64) -> Option<&(f64, f64, usize)> {
    layer.binary_search_by(|e| e.0.total_cmp(&x)).ok().map(|i| &layer[i])
}

impl DiscreteProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        stages: usize,
        start: f64,
        stage_length: f64,
        x0: f64,
        actions: Vec<f64>,
        outcomes: Vec<(f64, f64)>,
        step: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        reward: impl Fn(usize, f64, f64) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if stages == 0 || actions.is_empty() || outcomes.is_empty() {
            return Err(invalid("discrete problem needs stages, actions and outcomes"));
        }
        let total: f64 = outcomes.iter().map(|o| o.1).sum();
        if outcomes.iter().any(|o| !(o.1 >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("outcome probabilities must be nonnegative and sum to 1, got {total}")));
        }
        Ok(DiscreteProblem {
            stages,
            start,
            stage_length,
            x0,
            actions,
            outcomes,
            node_cap: 100_000,
            step: Arc::new(step),
            reward: Arc::new(reward),
            terminal: Arc::new(terminal),
        })
    }

    pub fn step(&self, x: f64, u: f64, o: f64) -> f64 {
        (self.step)(x, u, o)
    }

    pub fn terminal(&self, x: f64) -> f64 {
        (self.terminal)(x)
    }

    /// Time at the end of `k` stages.
    pub fn stage_time(&self, k: usize) -> f64 {
        self.start + self.stage_length * k as f64
    }

    /// Stage index of `t`, if `t` is a stage boundary up to rounding.
    pub fn stage_of(&self, t: f64) -> Option<usize> {
        let k = ((t - self.start) / self.stage_length).round();
        (k >= 0.0 && k <= self.stages as f64 && (self.stage_time(k as usize) - t).abs() <= 1e-9 * self.stage_length)
            .then_some(k as usize)
    }

    /// `reward + Σ_o p_o next(o)`, accumulated in outcome order.
    fn backup(&self, k: usize, x: f64, u: f64, mut next: impl FnMut(f64, f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for &(o, p) in &self.outcomes {
            acc += p * next(o, self.step(x, u, o));
        }
        (self.reward)(k, x, u) + acc
    }

    fn best(&self, k: usize, x: f64, mut next: impl FnMut(f64, f64) -> f64) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, &u) in self.actions.iter().enumerate() {
            let q = self.backup(k, x, u, &mut next);
            if q > best.0 {
                best = (q, i);
            }
        }
        best
    }

    /// States reachable at each stage from `x0`.
    pub fn reachable(&self) -> Result<Vec<Vec<f64>>> {
        let mut layers = vec![vec![self.x0]];
        let mut total = 1usize;
        for _ in 0..self.stages {
            let prev = layers.last().expect("nonempty");
            let mut next: Vec<f64> = Vec::new();
            for &x in prev {
                for &u in &self.actions {
                    for &(o, _) in &self.outcomes {
                        next.push(self.step(x, u, o));
                    }
                }
            }
            next.sort_by(f64::total_cmp);
            next.dedup_by(|a, b| a.to_bits() == b.to_bits());
            total += next.len();
            if total > self.node_cap {
                return Err(Error::TooLarge { what: "oracle lattice", size: total as f64, cap: self.node_cap });
            }
            layers.push(next);
        }
        Ok(layers)
    }

    /// Exact backward induction on the reachable lattice.
    pub fn dp_oracle(&self) -> Result<ValueTable> {
        let states = self.reachable()?;
        let n = self.stages;
        let mut layers: Vec<Vec<(f64, f64, usize)>> = vec![Vec::new(); n + 1];
        layers[n] = states[n].iter().map(|&x| (x, self.terminal(x), 0)).collect();
        for k in (0..n).rev() {
            let later = &layers[k + 1];
            let row = states[k]
                .iter()
                .map(|&x| {
                    let (v, a) = self.best(k, x, |_, y| find(later, y).expect("reachable").1);
                    (x, v, a)
                })
                .collect();
            layers[k] = row;
        }
        Ok(ValueTable { layers })
    }

    /// Expectimax over the full outcome tree, without sharing subproblems.
    pub fn brute_force_value(&self) -> f64 {
        self.brute(0, self.x0)
    }

    fn brute(&self, k: usize, x: f64) -> f64 {
        if k == self.stages {
            return self.terminal(x);
        }
        self.best(k, x, |_, y| self.brute(k + 1, y)).0
    }

    /// `max_u E[Σ rewards before the stop + V(stop, X_stop)]` using `table` at the stop.
    pub fn dpp_rhs(&self, table: &ValueTable, stop: DiscreteStop) -> Result<f64> {
        if let DiscreteStop::Stage(j) = stop {
            if j > self.stages {
                return Err(invalid(format!("stop stage {j} exceeds {} stages", self.stages)));
            }
        }
        self.rhs(table, stop, 0, self.x0)
    }

    fn rhs(&self, table: &ValueTable, stop: DiscreteStop, k: usize, x: f64) -> Result<f64> {
        let lookup = |k: usize, y: f64| table.value(k, y).ok_or_else(|| invalid(format!("state {y} missing at stage {k}")));
        match stop {
            DiscreteStop::Stage(j) if j == k => return lookup(k, x),
            _ if k == self.stages => return lookup(k, x),
            _ => {}
        }
        let mut err = None;
        let (v, _) = self.best(k, x, |o, y| {
            let r = match stop {
                DiscreteStop::FirstNonzeroOutcome if o != 0.0 => lookup(k + 1, y),
                _ => self.rhs(table, stop, k + 1, y),
            };
            r.unwrap_or_else(|e| {
                err.get_or_insert(e);
                f64::NAN
            })
        });
        err.map_or(Ok(v), Err)
    }

    /// `E[Σ rewards + h]` under the Markov policy `policy(k, x) -> action index`.
    pub fn policy_value(&self, policy: &dyn Fn(usize, f64) -> usize) -> f64 {
        self.evaluate(policy, 0, self.x0)
    }

    fn evaluate(&self, policy: &dyn Fn(usize, f64) -> usize, k: usize, x: f64) -> f64 {
        if k == self.stages {
            return self.terminal(x);
        }
        let u = self.actions[policy(k, x)];
        self.backup(k, x, u, |_, y| self.evaluate(policy, k + 1, y))
    }

    /// `q(k, x, u) = reward + E V(k+1, ·)` for every action, from `table`.
    pub fn q_values(&self, table: &ValueTable, k: usize, x: f64) -> Result<Vec<f64>> {
        let mut missing = false;
        let q = self
            .actions
            .iter()
            .map(|&u| {
                self.backup(k, x, u, |_, y| {
                    table.value(k + 1, y).unwrap_or_else(|| {
                        missing = true;
                        f64::NAN
                    })
                })
            })
            .collect();
        if missing {
            return Err(invalid(format!("successor of state {x} missing at stage {}", k + 1)));
        }
        Ok(q)
    }
}
