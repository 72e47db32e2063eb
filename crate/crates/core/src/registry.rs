//! Built-in test problems, selected by name.

use serde::{Deserialize, Serialize};

use crate::control::{ActionSet, FamilySpec, StoppingRule};
use crate::dynamics::CoefficientSet;
use crate::error::{invalid, Result};
use crate::harness::Problem;
use crate::levy_noise::{LargeJumps, LevyMeasureSpec, NoiseSampler, PointMass, SmallJumps, TruncationLevel};
use crate::value::{CostSpec, DiscreteProblem, Model, Partition};

pub const PROBLEM_NAMES: [&str; 4] = ["controlled-sign-drift", "linear-drift", "pure-jump", "heavy-tail"];

/// Overrides applied on top of a registry problem's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemOptions {
    pub start: f64,
    pub horizon: f64,
    pub x0: Option<f64>,
    pub dt: Option<f64>,
    pub noise: Option<LevyMeasureSpec>,
    /// Number of control segments; breakpoints split `[s, T]` evenly.
    pub stages: usize,
    /// Truncation level for the truncated-value checks; `None` for untruncated.
    pub truncation: Option<f64>,
    pub policy_cap: usize,
    pub guard: Option<f64>,
    /// Scalar action grid replacing the default.
    pub actions: Option<Vec<f64>>,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        ProblemOptions {
            start: 0.0,
            horizon: 1.0,
            x0: None,
            dt: None,
            noise: None,
            stages: 3,
            truncation: Some(4.0),
            policy_cap: 100_000,
            guard: None,
            actions: None,
        }
    }
}

struct Defaults {
    x0: f64,
    dt: f64,
    noise: LevyMeasureSpec,
    actions: Vec<f64>,
}

/// Poisson(`mean`) probabilities on `0..=k`, with the tail folded into `k`.
fn poisson_outcomes(mean: f64, k: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(k + 1);
    let mut p = (-mean).exp();
    let mut total = 0.0;
    for j in 0..k {
        out.push((j as f64, p));
        total += p;
        p *= mean / (j + 1) as f64;
    }
    out.push((k as f64, 1.0 - total));
    out
}

pub fn build(name: &str, opts: &ProblemOptions) -> Result<Problem> {
    let (s, t_end) = (opts.start, opts.horizon);
    if !(s < t_end) || !t_end.is_finite() {
        return Err(invalid(format!("horizon [{s}, {t_end}] is empty")));
    }
    if opts.stages == 0 {
        return Err(invalid("stages must be at least 1"));
    }
    let span = t_end - s;
    let stage = span / opts.stages as f64;
    let breaks: Vec<f64> = (1..opts.stages).map(|k| s + stage * k as f64).collect();

    let defaults = match name {
        "controlled-sign-drift" => Defaults { x0: -0.25, dt: span / 48.0, noise: LevyMeasureSpec::none(1), actions: vec![-1.0, 1.0] },
        "linear-drift" => Defaults {
            x0: 0.0,
            dt: span / 48.0,
            noise: LevyMeasureSpec {
                jump_dim: 1,
                small: SmallJumps::PowerLaw { c: 0.5, alpha: 1.0 },
                large: LargeJumps::PowerLaw { c: 0.5, alpha: 1.5 },
                small_cutoff: 0.1,
                gaussian_remainder: false,
            },
            actions: vec![-1.0, 1.0],
        },
        "pure-jump" => Defaults {
            x0: 0.0,
            dt: stage / 2.0,
            noise: LevyMeasureSpec::with_large(
                1,
                LargeJumps::PointMasses { masses: vec![PointMass { mark: vec![1.0], rate: 1.0 / stage }] },
            ),
            actions: vec![0.0, 1.0],
        },
        "heavy-tail" => Defaults {
            x0: 0.0,
            dt: span / 16.0,
            noise: LevyMeasureSpec::with_large(1, LargeJumps::PowerLaw { c: 1.0, alpha: 0.5 }),
            actions: vec![-1.0, 1.0],
        },
        other => {
            return Err(invalid(format!("unknown problem {other:?}; known: {}", PROBLEM_NAMES.join(", "))));
        }
    };
    let x0 = opts.x0.unwrap_or(defaults.x0);
    let dt = opts.dt.unwrap_or(defaults.dt);
    let noise = opts.noise.clone().unwrap_or(defaults.noise);
    let actions = ActionSet::scalars(opts.actions.as_deref().unwrap_or(&defaults.actions))?;
    let u_max = actions.points().iter().map(|a| a[0].abs()).fold(0.0, f64::max);

    let (coeffs, cost, lattice, discrete, tau_rules) = match name {
        "controlled-sign-drift" => {
            let c = CoefficientSet::zero(1, 0, 1, 1)
                .with_drift(|_, _, u, out| out[0] = u[0])
                .with_constants(1.0, |_| 0.0);
            let cost = CostSpec::terminal_only(|x| x[0].tanh(), 1.0).with_lipschitz(Some(0.0), Some(1.0));
            let taus = breaks.iter().map(|&t| StoppingRule::Deterministic { time: t }).collect();
            (c, cost, None, None, taus)
        }
        "linear-drift" => {
            let c = CoefficientSet::zero(1, 1, 1, 1)
                .with_drift(|_, x, u, out| out[0] = u[0] - 0.5 * x[0])
                .with_diffusion(|_, _, _, out| out[0] = 0.5)
                .with_jump(|_, _, _, eta, out| out[0] = 0.5 * eta[0])
                .with_odd_jump()
                .with_constants(0.5, |_| 0.5);
            let cost = CostSpec::new(|_, x, _| 0.2 * x[0].tanh(), |x| x[0].tanh(), 0.2, 1.0)
                .with_lipschitz(Some(0.2), Some(1.0));
            let mut taus: Vec<StoppingRule> = breaks.first().map(|&t| StoppingRule::Deterministic { time: t }).into_iter().collect();
            taus.push(StoppingRule::FirstJump);
            (c, cost, None, None, taus)
        }
        "pure-jump" => {
            let c = CoefficientSet::zero(1, 0, 1, 1)
                .with_jump(|_, _, u, eta, out| out[0] = u[0] * eta[0])
                .with_odd_jump()
                .with_constants(0.0, move |_| u_max);
            let cost = CostSpec::new(|_, _, u| -0.3 * u[0], |x| (-(x[0] - 2.0).powi(2)).exp(), 0.3 * u_max, 1.0);
            let lattice = Partition::new(vec![-0.5], vec![3.5], vec![4])?;
            let pts: Vec<f64> = actions.points().iter().map(|a| a[0]).collect();
            let discrete = DiscreteProblem::new(
                opts.stages,
                s,
                stage,
                x0,
                pts,
                poisson_outcomes(1.0, 20),
                |x, u, o| x + u * o,
                move |_, _, u| -0.3 * u * stage,
                |x| (-(x - 2.0).powi(2)).exp(),
            )?;
            let taus = breaks.iter().map(|&t| StoppingRule::Deterministic { time: t }).collect();
            (c, cost, Some(lattice), Some(discrete), taus)
        }
        _ => {
            let c = CoefficientSet::zero(1, 1, 1, 1)
                .with_drift(|_, _, u, out| out[0] = u[0])
                .with_diffusion(|_, _, _, out| out[0] = 0.2)
                .with_jump(|_, _, _, eta, out| out[0] = eta[0])
                .with_odd_jump()
                .with_constants(1.0, |_| 1.0);
            let cost = CostSpec::terminal_only(|x| x[0].tanh(), 1.0).with_lipschitz(Some(0.0), Some(1.0));
            let mut taus: Vec<StoppingRule> = breaks.first().map(|&t| StoppingRule::Deterministic { time: t }).into_iter().collect();
            taus.push(StoppingRule::FirstJump);
            (c, cost, None, None, taus)
        }
    };

    let sampler = NoiseSampler::new(noise, coeffs.brownian_dim)?;
    let mut model = Model::new(coeffs, cost, sampler, dt);
    model.grid_times = breaks.clone();
    if let Some(g) = opts.guard {
        model.guard = g;
    }
    let knots: Vec<f64> = std::iter::once(s).chain(breaks.iter().copied()).collect();
    let mut time_pairs = Vec::new();
    for gap in 1..knots.len() {
        for i in 0..knots.len() - gap {
            if time_pairs.len() < 3 {
                time_pairs.push((knots[i], knots[i + gap]));
            }
        }
    }
    let truncation = opts.truncation.map(TruncationLevel::new).transpose()?;
    Ok(Problem {
        name: name.to_string(),
        model,
        family: FamilySpec { actions, breaks, lattice },
        start: s,
        horizon: t_end,
        x0: vec![x0],
        truncation,
        policy_cap: opts.policy_cap,
        discrete,
        tau_rules,
        time_pairs,
        moment_slack: if name == "pure-jump" || name == "heavy-tail" { 1000.0 } else { 50.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_problem_builds_and_validates() {
        for name in PROBLEM_NAMES {
            let p = build(name, &ProblemOptions::default()).unwrap();
            p.validate().unwrap();
            assert_eq!(p.time_pairs.len(), 3, "{name}");
            assert!(!p.tau_rules.is_empty());
        }
    }

    #[test]
    fn pure_jump_family_sizes() {
        let p = build("pure-jump", &ProblemOptions::default()).unwrap();
        assert_eq!(p.policies().unwrap().len(), 512);
        let p = build("pure-jump", &ProblemOptions { stages: 2, ..Default::default() }).unwrap();
        assert_eq!(p.policies().unwrap().len(), 32);
        assert_eq!(p.time_pairs, vec![(0.0, 0.5)]);
    }

    #[test]
    fn poisson_outcomes_sum_to_one() {
        let o = poisson_outcomes(1.0, 20);
        assert_eq!(o.len(), 21);
        assert!((o.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((o[1].1 - (-1.0f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn unknown_name_lists_choices() {
        let e = build("nope", &ProblemOptions::default()).unwrap_err().to_string();
        assert!(e.contains("heavy-tail"));
    }
}
