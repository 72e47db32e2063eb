//! Outer paths stopped at a stopping rule, and memoized inner values at the
//! stopped states.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Problem;
use crate::control::{ControlPolicy, StoppingRule};
use crate::error::{invalid, Error, Result};
use crate::levy_noise::{mix_seed, path_seed, TruncationLevel};
use crate::value::{path_payoff, payoff_table, running_integral, ValueTable};

const INNER_TAG: u64 = 0x696e_6e65_7276_616c;

/// How `V(τ, X_τ)` is obtained at a stopped state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum InnerMode {
    /// Monte Carlo over the family restricted to `[τ, T]`, `n_inner` paths per
    /// distinct stopped state; `budget` caps the total inner paths × policies.
    Nested { n_inner: usize, budget: u64 },
    /// Exact values of the discrete counterpart.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct InnerValue {
    pub mean: f64,
    pub std_error: f64,
    pub family: usize,
}

pub(crate) struct InnerCache<'a> {
    problem: &'a Problem,
    mode: InnerMode,
    seed: u64,
    m: Option<TruncationLevel>,
    table: Option<ValueTable>,
    values: HashMap<Vec<u64>, InnerValue>,
    families: HashMap<u64, std::sync::Arc<Vec<ControlPolicy>>>,
    used: u64,
}

fn key_of(t: f64, y: &[f64]) -> Vec<u64> {
    std::iter::once(t.to_bits()).chain(y.iter().map(|v| v.to_bits())).collect()
}

impl<'a> InnerCache<'a> {
    pub fn new(problem: &'a Problem, mode: InnerMode, seed: u64, m: Option<TruncationLevel>) -> Result<Self> {
        let table = match mode {
            InnerMode::Oracle => {
                let d = problem
                    .discrete
                    .as_ref()
                    .ok_or_else(|| invalid(format!("problem {} has no exact counterpart", problem.name)))?;
                Some(d.dp_oracle()?)
            }
            InnerMode::Nested { n_inner, .. } if n_inner < 2 => {
                return Err(invalid("nested estimation needs n_inner >= 2"));
            }
            InnerMode::Nested { .. } => None,
        };
        Ok(InnerCache {
            problem,
            mode,
            seed,
            m,
            table,
            values: HashMap::new(),
            families: HashMap::new(),
            used: 0,
        })
    }

    pub fn get(&self, t: f64, y: &[f64]) -> InnerValue {
        self.values[&key_of(t, y)]
    }

    /// Evaluates every state not seen before.
    pub fn resolve(&mut self, stops: &[(f64, Vec<f64>)]) -> Result<()> {
        let mut fresh: Vec<(f64, Vec<f64>)> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (t, y) in stops {
            let k = key_of(*t, y);
            if !self.values.contains_key(&k) && seen.insert(k) {
                fresh.push((*t, y.clone()));
            }
        }
        if fresh.is_empty() {
            return Ok(());
        }
        match self.mode {
            InnerMode::Oracle => {
                let d = self.problem.discrete.as_ref().expect("checked in new");
                let table = self.table.as_ref().expect("built in new");
                for (t, y) in fresh {
                    let k = d.stage_of(t).ok_or_else(|| {
                        invalid(format!("exact inner values need stops at stage boundaries, got t = {t}"))
                    })?;
                    let v = table
                        .value(k, y[0])
                        .ok_or_else(|| invalid(format!("state {} at stage {k} is off the exact lattice", y[0])))?;
                    self.values.insert(key_of(t, &y), InnerValue { mean: v, std_error: 0.0, family: 1 });
                }
            }
            InnerMode::Nested { n_inner, budget } => {
                let mut jobs = Vec::with_capacity(fresh.len());
                let mut needed = self.used;
                for (t, y) in fresh {
                    let fam = match self.families.get(&t.to_bits()) {
                        Some(f) => f.clone(),
                        None => {
                            let f = std::sync::Arc::new(self.problem.family.enumerate_from(t, self.problem.policy_cap)?);
                            self.families.insert(t.to_bits(), f.clone());
                            f
                        }
                    };
                    needed += (n_inner * fam.len()) as u64;
                    jobs.push((t, y, fam));
                }
                if needed > budget {
                    return Err(Error::BudgetExceeded { needed, budget });
                }
                self.used = needed;
                let p = self.problem;
                let (seed, m) = (self.seed, self.m);
                let results: Vec<(Vec<u64>, InnerValue)> = jobs
                    .par_iter()
                    .map(|(t, y, fam)| -> Result<(Vec<u64>, InnerValue)> {
                        let key = key_of(*t, y);
                        let mut parts = vec![seed, INNER_TAG];
                        parts.extend_from_slice(&key);
                        let table = payoff_table(&p.model, fam, *t, y, p.horizon, n_inner, mix_seed(&parts), m)?;
                        let (_, est) = table.argmax()?;
                        Ok((key, InnerValue { mean: est.mean, std_error: est.std_error, family: fam.len() }))
                    })
                    .collect::<Result<_>>()?;
                self.values.extend(results);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Raw {
    Diverged,
    /// The rule did not fire before `T`: full payoff.
    End(f64),
    Stop { running: f64, time: f64, state: Vec<f64> },
}

/// Per policy: `∫_s^τ f + V(τ, X_τ)` on every outer path, per rule.
#[derive(Debug, Clone)]
pub(crate) struct StopValues {
    /// `[rule][path]`, NaN for diverged paths.
    pub g: Vec<Vec<f64>>,
    /// `[rule][path * d ..]`: the state at the stop (terminal state if none).
    pub states: Vec<Vec<f64>>,
    /// `[rule]`: variance contributed by inner estimates to the outer mean.
    pub inner_var: Vec<f64>,
    /// `[rule]`: average inner standard error over stopped paths.
    pub inner_se_mean: Vec<f64>,
    /// `[rule]`: largest restricted family met.
    pub family_max: Vec<usize>,
}

/// Runs `policies` on `n_paths` shared noises and hands each policy's stopped
/// values to `visit` in policy order.
#[allow(clippy::too_many_arguments)]
pub(crate) fn evaluate_stops(
    problem: &Problem,
    policies: &[ControlPolicy],
    rules: &[StoppingRule],
    n_paths: usize,
    seed: u64,
    m: Option<TruncationLevel>,
    cache: &mut InnerCache,
    mut visit: impl FnMut(usize, StopValues) -> Result<()>,
) -> Result<()> {
    const CHUNK: usize = 16;
    let model = &problem.model;
    let (s, t_end) = (problem.start, problem.horizon);
    let d = problem.dim();
    let grid = model.grid(s, t_end)?;
    for (c, chunk) in policies.chunks(CHUNK).enumerate() {
        // raw[path][policy * rules + rule]
        let raw: Vec<Vec<Raw>> = (0..n_paths)
            .into_par_iter()
            .map(|k| -> Result<Vec<Raw>> {
                let noise = model.sampler.sample(s, t_end, &grid, path_seed(seed, k as u64))?;
                let mut out = Vec::with_capacity(chunk.len() * rules.len());
                for pol in chunk {
                    let path = model.simulate(pol, &noise, s, &problem.x0, t_end, m)?;
                    let last = path.len() - 1;
                    for rule in rules {
                        let idx = rule.index_on(&path.view());
                        out.push(match idx {
                            _ if path.diverged() && idx.is_none_or(|i| i >= last) => Raw::Diverged,
                            Some(i) if i < last => Raw::Stop {
                                running: running_integral(&model.cost, &path, i),
                                time: path.times[i],
                                state: path.value(i).to_vec(),
                            },
                            _ => Raw::End(path_payoff(&model.cost, &path).expect("complete path")),
                        });
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;

        let stops: Vec<(f64, Vec<f64>)> = raw
            .iter()
            .flatten()
            .filter_map(|r| match r {
                Raw::Stop { time, state, .. } => Some((*time, state.clone())),
                _ => None,
            })
            .collect();
        cache.resolve(&stops)?;

        for (jj, _) in chunk.iter().enumerate() {
            let mut sv = StopValues {
                g: Vec::with_capacity(rules.len()),
                states: Vec::with_capacity(rules.len()),
                inner_var: Vec::with_capacity(rules.len()),
                inner_se_mean: Vec::with_capacity(rules.len()),
                family_max: Vec::with_capacity(rules.len()),
            };
            for r in 0..rules.len() {
                let mut g = Vec::with_capacity(n_paths);
                let mut states = Vec::with_capacity(n_paths * d);
                let mut counts: HashMap<Vec<u64>, (usize, f64)> = HashMap::new();
                let mut se_sum = 0.0;
                let mut stopped = 0usize;
                let mut fam = 0usize;
                for row in &raw {
                    match &row[jj * rules.len() + r] {
                        Raw::Diverged => {
                            g.push(f64::NAN);
                            states.extend(std::iter::repeat_n(f64::NAN, d));
                        }
                        Raw::End(v) => {
                            g.push(*v);
                            states.extend(std::iter::repeat_n(f64::NAN, d));
                        }
                        Raw::Stop { running, time, state } => {
                            let iv = cache.get(*time, state);
                            g.push(running + iv.mean);
                            states.extend_from_slice(state);
                            counts.entry(key_of(*time, state)).or_insert((0, iv.std_error)).0 += 1;
                            se_sum += iv.std_error;
                            stopped += 1;
                            fam = fam.max(iv.family);
                        }
                    }
                }
                let valid = g.iter().filter(|v| !v.is_nan()).count().max(1) as f64;
                let mut cells: Vec<(usize, f64)> = counts.into_values().collect();
                cells.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
                let var = cells.iter().map(|&(c, se)| (c as f64 / valid).powi(2) * se * se).sum::<f64>();
                sv.g.push(g);
                sv.states.push(states);
                sv.inner_var.push(var);
                sv.inner_se_mean.push(if stopped > 0 { se_sum / stopped as f64 } else { 0.0 });
                sv.family_max.push(fam);
            }
            visit(c * CHUNK + jj, sv)?;
        }
    }
    Ok(())
}

/// Upward bias bound for a maximum over `family` estimates with standard error `se`.
pub(crate) fn max_bias_allowance(family: usize, se: f64) -> f64 {
    if family <= 1 {
        0.0
    } else {
        (2.0 * (family as f64).ln()).sqrt() * se
    }
}
