//! Monte Carlo revenue and value estimation with common random numbers, the
//! backward-induction oracle for discrete problems, and the continuity modulus.

mod oracle;
mod partition;

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::control::{ActionSet, ControlPolicy};
use crate::dynamics::{integrate_with, CoefficientSet, IntegrationOptions, StatePath};
use crate::error::{invalid, Error, Result};
use crate::levy_noise::{base_grid, path_seed, NoiseRealization, NoiseSampler, TruncationLevel};
use crate::stats::{CompensatedSum, SampleMean};

pub use oracle::{DiscreteProblem, DiscreteStop, ValueTable};
pub use partition::{make_partition, Partition};

pub type RunningCost = dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync;
pub type TerminalCost = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Running reward `f(t, x, u)` and terminal reward `h(x)` with declared bounds.
#[derive(Clone)]
pub struct CostSpec {
    running: Arc<RunningCost>,
    terminal: Arc<TerminalCost>,
    pub f_bound: f64,
    pub h_bound: f64,
    pub f_lip: Option<f64>,
    pub h_lip: Option<f64>,
}

impl std::fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CostSpec")
            .field("f_bound", &self.f_bound)
            .field("h_bound", &self.h_bound)
            .field("f_lip", &self.f_lip)
            .field("h_lip", &self.h_lip)
            .finish_non_exhaustive()
    }
}

impl CostSpec {
    pub fn new(
        f: impl Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
        h: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        f_bound: f64,
        h_bound: f64,
    ) -> Self {
        CostSpec { running: Arc::new(f), terminal: Arc::new(h), f_bound, h_bound, f_lip: None, h_lip: None }
    }

    pub fn terminal_only(h: impl Fn(&[f64]) -> f64 + Send + Sync + 'static, h_bound: f64) -> Self {
        CostSpec::new(|_, _, _| 0.0, h, 0.0, h_bound)
    }

    pub fn with_lipschitz(mut self, f_lip: Option<f64>, h_lip: Option<f64>) -> Self {
        self.f_lip = f_lip;
        self.h_lip = h_lip;
        self
    }

    pub fn running(&self, t: f64, x: &[f64], u: &[f64]) -> f64 {
        (self.running)(t, x, u)
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    /// `(t_end − s) f_bound + h_bound`, the sup-norm bound of any payoff.
    pub fn payoff_bound(&self, s: f64, t_end: f64) -> f64 {
        (t_end - s) * self.f_bound + self.h_bound
    }

    /// Spot-checks `|f| ≤ f_bound` and `|h| ≤ h_bound` on random points with
    /// `|x|_∞ ≤ radius`; returns the first offending point.
    pub fn check_bounds(
        &self,
        actions: &ActionSet,
        dim: usize,
        horizon: (f64, f64),
        radius: f64,
        samples: usize,
        seed: u64,
    ) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slack = 1.0 + 1e-12;
        for _ in 0..samples {
            let t = rng.random_range(horizon.0..=horizon.1);
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-radius..=radius)).collect();
            let u = &actions.points()[rng.random_range(0..actions.len())];
            let f = self.running(t, &x, u);
            if !(f.abs() <= self.f_bound * slack) {
                return Err(invalid(format!("|f({t}, {x:?}, {u:?})| = {} exceeds f_bound {}", f.abs(), self.f_bound)));
            }
            let h = self.terminal(&x);
            if !(h.abs() <= self.h_bound * slack) {
                return Err(invalid(format!("|h({x:?})| = {} exceeds h_bound {}", h.abs(), self.h_bound)));
            }
        }
        Ok(())
    }
}

/// Coefficients, rewards and noise law, plus the discretization settings.
#[derive(Debug, Clone)]
pub struct Model {
    pub coeffs: CoefficientSet,
    pub cost: CostSpec,
    pub sampler: NoiseSampler,
    /// Base grid step.
    pub dt: f64,
    /// Times forced onto every grid (policy breakpoints, deterministic stopping times).
    pub grid_times: Vec<f64>,
    pub guard: f64,
}

impl Model {
    pub fn new(coeffs: CoefficientSet, cost: CostSpec, sampler: NoiseSampler, dt: f64) -> Self {
        Model { coeffs, cost, sampler, dt, grid_times: Vec::new(), guard: IntegrationOptions::default().guard }
    }

    pub fn grid(&self, s: f64, t_end: f64) -> Result<Vec<f64>> {
        base_grid(s, t_end, self.dt, &self.grid_times)
    }

    pub fn noise(&self, s: f64, t_end: f64, seed: u64) -> Result<NoiseRealization> {
        self.sampler.sample(s, t_end, &self.grid(s, t_end)?, seed)
    }

    pub fn simulate(
        &self,
        policy: &ControlPolicy,
        noise: &NoiseRealization,
        s: f64,
        x: &[f64],
        t_end: f64,
        m: Option<TruncationLevel>,
    ) -> Result<StatePath> {
        integrate_with(
            &self.coeffs,
            policy,
            noise,
            s,
            x,
            t_end,
            m.map(TruncationLevel::get),
            IntegrationOptions { guard: self.guard },
        )
    }
}

/// `∫_{t_0}^{t_end} f(t, X_t, u_t) dt` by the trapezoid rule on the path grid,
/// with `f` at left limits, for grid indices `0..=end`.
pub fn running_integral(cost: &CostSpec, path: &StatePath, end: usize) -> f64 {
    let mut acc = CompensatedSum::default();
    for i in 1..=end.min(path.len() - 1) {
        let dt = path.times[i] - path.times[i - 1];
        let u = path.control(i - 1);
        let a = cost.running(path.times[i - 1], path.value(i - 1), u);
        let b = cost.running(path.times[i], path.left_limit(i), u);
        acc.add(0.5 * (a + b) * dt);
    }
    acc.value()
}

/// Running integral plus terminal reward, or `None` for a diverged path.
pub fn path_payoff(cost: &CostSpec, path: &StatePath) -> Option<f64> {
    if path.diverged() {
        return None;
    }
    let last = path.len() - 1;
    Some(running_integral(cost, path, last) + cost.terminal(path.value(last)))
}

/// Monte Carlo estimate of a revenue functional or value function.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ValueEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Paths that entered the estimate.
    pub n_paths: usize,
    pub truncation: Option<f64>,
    pub diverged_count: usize,
}

impl ValueEstimate {
    fn from_samples(samples: &[f64], truncation: Option<f64>) -> Result<ValueEstimate> {
        let kept: Vec<f64> = samples.iter().copied().filter(|v| !v.is_nan()).collect();
        if kept.is_empty() {
            return Err(Error::EstimationFailed { n_paths: samples.len() });
        }
        let sm = SampleMean::of(&kept);
        Ok(ValueEstimate {
            mean: sm.mean,
            std_error: sm.std_error,
            n_paths: kept.len(),
            truncation,
            diverged_count: samples.len() - kept.len(),
        })
    }
}

/// Payoffs of every policy on every path, all policies sharing each path's noise.
///
/// Diverged paths are stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffTable {
    pub n_policies: usize,
    pub n_paths: usize,
    pub truncation: Option<f64>,
    /// Policy-major: `payoffs[j * n_paths + k]`.
    pub payoffs: Vec<f64>,
}

impl PayoffTable {
    pub fn row(&self, j: usize) -> &[f64] {
        &self.payoffs[j * self.n_paths..(j + 1) * self.n_paths]
    }

    pub fn estimate(&self, j: usize) -> Result<ValueEstimate> {
        ValueEstimate::from_samples(self.row(j), self.truncation)
    }

    /// Best policy by sample mean, first index on ties.
    pub fn argmax(&self) -> Result<(usize, ValueEstimate)> {
        let mut best: Option<(usize, ValueEstimate)> = None;
        let mut first_err = None;
        for j in 0..self.n_policies {
            match self.estimate(j) {
                Ok(e) => {
                    if best.as_ref().is_none_or(|(_, b)| e.mean > b.mean) {
                        best = Some((j, e));
                    }
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        best.ok_or_else(|| first_err.unwrap_or(Error::EstimationFailed { n_paths: self.n_paths }))
    }

    /// Largest payoff across policies on each path.
    pub fn per_path_max(&self) -> Vec<f64> {
        (0..self.n_paths)
            .map(|k| (0..self.n_policies).map(|j| self.payoffs[j * self.n_paths + k]).fold(f64::NAN, f64::max))
            .collect()
    }
}

/// Simulates every policy on `n_paths` shared noise realizations.
#[allow(clippy::too_many_arguments)]
pub fn payoff_table(
    model: &Model,
    policies: &[ControlPolicy],
    s: f64,
    x: &[f64],
    t_end: f64,
    n_paths: usize,
    seed: u64,
    m: Option<TruncationLevel>,
) -> Result<PayoffTable> {
    if policies.is_empty() {
        return Err(invalid("policy family is empty"));
    }
    let grid = model.grid(s, t_end)?;
    let per_path: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let noise = model.sampler.sample(s, t_end, &grid, path_seed(seed, k as u64))?;
            policies
                .iter()
                .map(|p| {
                    let path = model.simulate(p, &noise, s, x, t_end, m)?;
                    Ok(path_payoff(&model.cost, &path).unwrap_or(f64::NAN))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut payoffs = vec![0.0; policies.len() * n_paths];
    for (k, row) in per_path.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            payoffs[j * n_paths + k] = *v;
        }
    }
    Ok(PayoffTable { n_policies: policies.len(), n_paths, truncation: m.map(TruncationLevel::get), payoffs })
}

/// `V^u(s, x)`, or `V^{u,M}(s, x)` when `m` is set.
#[allow(clippy::too_many_arguments)]
pub fn revenue(
    model: &Model,
    policy: &ControlPolicy,
    s: f64,
    x: &[f64],
    t_end: f64,
    n_paths: usize,
    seed: u64,
    m: Option<TruncationLevel>,
) -> Result<ValueEstimate> {
    if n_paths < 2 {
        return Err(invalid("revenue needs at least two paths"));
    }
    payoff_table(model, std::slice::from_ref(policy), s, x, t_end, n_paths, seed, m)?.estimate(0)
}

/// `V(s, x)` (or `V^M`) over a finite family, with the index of the maximizer.
#[allow(clippy::too_many_arguments)]
pub fn value(
    model: &Model,
    family: &[ControlPolicy],
    s: f64,
    x: &[f64],
    t_end: f64,
    n_paths: usize,
    seed: u64,
    m: Option<TruncationLevel>,
) -> Result<(ValueEstimate, usize)> {
    if n_paths < 2 {
        return Err(invalid("value needs at least two paths"));
    }
    let (j, est) = payoff_table(model, family, s, x, t_end, n_paths, seed, m)?.argmax()?;
    Ok((est, j))
}

/// Sampled lower bound on `ρ(α, β) = sup |f(t,x,u) − f(t,x̂,u)| + |h(x) − h(x̂)|`
/// over `|x|, |x̂| ≤ β`, `|x − x̂| ≤ α`, `t ∈ horizon`, `u ∈ A`.
#[allow(clippy::too_many_arguments)]
pub fn modulus(
    cost: &CostSpec,
    actions: &ActionSet,
    dim: usize,
    horizon: (f64, f64),
    alpha: f64,
    beta: f64,
    sample_count: usize,
    seed: u64,
) -> Result<f64> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(invalid("modulus needs alpha > 0 and beta > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    let mut drawn = 0;
    while drawn < sample_count {
        let x = ball_point(&mut rng, dim, beta);
        // Radii skewed toward α, where the sup of a monotone modulus sits.
        let r = alpha * rng.random::<f64>().max(rng.random::<f64>());
        let dir = ball_point(&mut rng, dim, 1.0);
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            continue;
        }
        let xh: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + r * d / n).collect();
        if xh.iter().map(|v| v * v).sum::<f64>().sqrt() > beta {
            continue;
        }
        drawn += 1;
        let t = rng.random_range(horizon.0..=horizon.1);
        let u = &actions.points()[rng.random_range(0..actions.len())];
        let gap = (cost.running(t, &x, u) - cost.running(t, &xh, u)).abs()
            + (cost.terminal(&x) - cost.terminal(&xh)).abs();
        best = best.max(gap);
    }
    Ok(best)
}

fn ball_point(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-radius..=radius)).collect();
        if v.iter().map(|a| a * a).sum::<f64>().sqrt() <= radius {
            return v;
        }
    }
}

/// One row of a value table.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueRow {
    pub s: f64,
    pub x: Vec<f64>,
    pub policy_id: usize,
    pub estimate: ValueEstimate,
}

/// Writes `s,x…,M,policy_id,mean,std_error,n_paths,diverged` rows.
pub fn write_value_csv<W: Write>(mut out: W, rows: &[ValueRow]) -> std::io::Result<()> {
    let d = rows.first().map_or(1, |r| r.x.len());
    let xs: Vec<String> = if d == 1 { vec!["x".into()] } else { (0..d).map(|i| format!("x{i}")).collect() };
    writeln!(out, "s,{},M,policy_id,mean,std_error,n_paths,diverged", xs.join(","))?;
    for r in rows {
        let x: Vec<String> = r.x.iter().map(|v| v.to_string()).collect();
        let m = r.estimate.truncation.map_or_else(|| "inf".to_string(), |m| m.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.s,
            x.join(","),
            m,
            r.policy_id,
            r.estimate.mean,
            r.estimate.std_error,
            r.estimate.n_paths,
            r.estimate.diverged_count
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::enumerate_policies;
    use crate::levy_noise::LevyMeasureSpec;

    fn quiet_model(coeffs: CoefficientSet, cost: CostSpec, dt: f64) -> Model {
        Model::new(coeffs, cost, NoiseSampler::new(LevyMeasureSpec::none(1), 1).unwrap(), dt)
    }

    #[test]
    fn constant_rewards_are_exact() {
        let c = CoefficientSet::zero(1, 1, 1, 1).with_diffusion(|_, _, _, o| o[0] = 1.0);
        let pol = ControlPolicy::Constant(vec![0.0]);
        let m = quiet_model(c.clone(), CostSpec::terminal_only(|_| 0.7, 0.7), 0.05);
        let e = revenue(&m, &pol, 0.0, &[0.0], 1.0, 50, 1, None).unwrap();
        assert_eq!((e.mean, e.std_error), (0.7, 0.0));
        let m = quiet_model(c, CostSpec::new(|_, _, _| 1.0, |_| 0.0, 1.0, 0.0), 0.05);
        let e = revenue(&m, &pol, 0.25, &[0.0], 1.0, 50, 1, None).unwrap();
        assert_eq!((e.mean, e.std_error), (0.75, 0.0));
    }

    #[test]
    fn sign_drift_value_is_analytic() {
        let c = CoefficientSet::zero(1, 1, 1, 1).with_drift(|_, _, u, o| o[0] = u[0]);
        let cost = CostSpec::terminal_only(|x| x[0].tanh(), 1.0);
        let mut m = quiet_model(c, cost, 1.0 / 64.0);
        m.grid_times = vec![0.5];
        let a = ActionSet::scalars(&[-1.0, 1.0]).unwrap();
        let fam = enumerate_policies(&a, &[0.5], None, 16).unwrap();
        let (e, j) = value(&m, &fam, 0.0, &[0.2], 1.0, 4, 9, None).unwrap();
        assert_eq!(fam[j], ControlPolicy::piecewise(vec![0.5], vec![vec![1.0], vec![1.0]]).unwrap());
        assert!((e.mean - 1.2f64.tanh()).abs() < 1e-14);
    }

    #[test]
    fn constant_value_for_any_family() {
        let c = CoefficientSet::zero(1, 1, 1, 1).with_drift(|_, _, u, o| o[0] = u[0]);
        let m = quiet_model(c, CostSpec::terminal_only(|_| -0.3, 1.0), 0.1);
        let a = ActionSet::scalars(&[-1.0, 0.0, 1.0]).unwrap();
        let fam = enumerate_policies(&a, &[0.5], None, 16).unwrap();
        let (e, j) = value(&m, &fam, 0.0, &[0.0], 1.0, 3, 0, None).unwrap();
        assert_eq!((e.mean, j), (-0.3, 0));
    }

    #[test]
    fn per_path_max_is_monotone_in_the_family() {
        let c = CoefficientSet::zero(1, 1, 1, 1)
            .with_drift(|_, x, u, o| o[0] = u[0] * x[0].sin())
            .with_diffusion(|_, _, _, o| o[0] = 0.4);
        let m = quiet_model(c, CostSpec::new(|_, x, _| x[0].cos(), |x| x[0].tanh(), 1.0, 1.0), 0.1);
        let a = ActionSet::scalars(&[-1.0, 1.0]).unwrap();
        let big = enumerate_policies(&a, &[0.5], None, 16).unwrap();
        let small = vec![big[0].clone(), big[3].clone()];
        let tb = payoff_table(&m, &big, 0.0, &[0.3], 1.0, 200, 4, None).unwrap();
        let ts = payoff_table(&m, &small, 0.0, &[0.3], 1.0, 200, 4, None).unwrap();
        for (a, b) in ts.per_path_max().iter().zip(tb.per_path_max()) {
            assert!(*a <= b);
        }
        assert_eq!(ts.row(1), tb.row(3));
    }

    #[test]
    fn all_diverged_is_an_error() {
        let c = CoefficientSet::zero(1, 1, 1, 1).with_drift(|_, x, _, o| o[0] = 100.0 * x[0]);
        let mut m = quiet_model(c, CostSpec::terminal_only(|_| 0.0, 0.0), 0.01);
        m.guard = 1e3;
        let r = revenue(&m, &ControlPolicy::Constant(vec![0.0]), 0.0, &[1.0], 1.0, 5, 0, None);
        assert_eq!(r, Err(Error::EstimationFailed { n_paths: 5 }));
    }

    #[test]
    fn modulus_of_linear_terminal_reward() {
        let a = ActionSet::scalars(&[0.0]).unwrap();
        let lin = CostSpec::terminal_only(|x| 2.0 * x[0], 100.0);
        let r = modulus(&lin, &a, 1, (0.0, 1.0), 0.5, 10.0, 5000, 1).unwrap();
        assert!((0.9..=1.0 + 1e-12).contains(&r), "{r}");
        let flat = CostSpec::new(|_, _, _| 1.0, |_| 2.0, 1.0, 2.0);
        assert_eq!(modulus(&flat, &a, 2, (0.0, 1.0), 0.5, 1.0, 500, 1).unwrap(), 0.0);
        let mut prev = 0.0;
        for alpha in [0.1, 0.2, 0.4, 0.8] {
            let tanh = CostSpec::terminal_only(|x| x[0].tanh(), 1.0);
            let r = modulus(&tanh, &a, 1, (0.0, 1.0), alpha, 2.0, 4000, 7).unwrap();
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn bound_check_flags_understated_bound() {
        let a = ActionSet::scalars(&[1.0]).unwrap();
        let cost = CostSpec::terminal_only(|x| x[0].tanh(), 0.5);
        assert!(cost.check_bounds(&a, 1, (0.0, 1.0), 5.0, 1000, 2).is_err());
        let cost = CostSpec::terminal_only(|x| x[0].tanh(), 1.0);
        assert!(cost.check_bounds(&a, 1, (0.0, 1.0), 5.0, 1000, 2).is_ok());
    }

    #[test]
    fn csv_layout() {
        let est = ValueEstimate { mean: 0.5, std_error: 0.01, n_paths: 10, truncation: Some(4.0), diverged_count: 0 };
        let mut buf = Vec::new();
        write_value_csv(&mut buf, &[ValueRow { s: 0.0, x: vec![1.0], policy_id: 3, estimate: est }]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "s,x,M,policy_id,mean,std_error,n_paths,diverged\n0,1,4,3,0.5,0.01,10,0\n");
    }
}
