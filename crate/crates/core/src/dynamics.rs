//! Jump-adapted Euler integration of the controlled SDE and of its truncated
//! counterpart on a shared noise realization.
//!
//! Every jump time is a grid point of the realization. Between grid points the
//! state moves by `b Δt + σ ΔW − (band compensator) Δt`; at a jump time the
//! jump `γ(t, X_{t−}, u_t, η)` is added to the left limit. The truncated run
//! executes the very same floating-point operations and merely skips jumps with
//! `|η| ≥ M`, so both runs agree bit-for-bit up to (excluding) `τ_M`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{ActionSet, ControlPolicy, PathView};
use crate::error::{invalid, Result};
use crate::levy_noise::NoiseRealization;

pub type VectorField = dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync;
pub type JumpField = dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync;

/// Coefficients `b`, `σ`, `γ` and the declared growth/Lipschitz constants.
///
/// Coefficient closures must be reentrant: they are called concurrently from
/// many paths.
#[derive(Clone)]
pub struct CoefficientSet {
    pub state_dim: usize,
    pub brownian_dim: usize,
    pub action_dim: usize,
    pub jump_dim: usize,
    drift: Arc<VectorField>,
    /// Writes a row-major `state_dim × brownian_dim` matrix.
    diffusion: Arc<VectorField>,
    jump: Arc<JumpField>,
    has_diffusion: bool,
    has_jump: bool,
    odd_jump: bool,
    pub lip_c: f64,
    lip_cm: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("state_dim", &self.state_dim)
            .field("brownian_dim", &self.brownian_dim)
            .field("action_dim", &self.action_dim)
            .field("jump_dim", &self.jump_dim)
            .field("lip_c", &self.lip_c)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    /// All coefficients identically zero.
    pub fn zero(state_dim: usize, brownian_dim: usize, action_dim: usize, jump_dim: usize) -> Self {
        CoefficientSet {
            state_dim,
            brownian_dim,
            action_dim,
            jump_dim,
            drift: Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
            diffusion: Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
            jump: Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0)),
            has_diffusion: false,
            has_jump: false,
            odd_jump: false,
            lip_c: 0.0,
            lip_cm: Arc::new(|_| 0.0),
        }
    }

    pub fn with_drift(mut self, f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.drift = Arc::new(f);
        self
    }

    pub fn with_diffusion(mut self, f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.diffusion = Arc::new(f);
        self.has_diffusion = true;
        self
    }

    pub fn with_jump(
        mut self,
        f: impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jump = Arc::new(f);
        self.has_jump = true;
        self
    }

    /// Declares `γ(t, x, u, −η) = −γ(t, x, u, η)`; the symmetric band
    /// compensator then vanishes and is not evaluated.
    pub fn with_odd_jump(mut self) -> Self {
        self.odd_jump = true;
        self
    }

    pub fn with_constants(mut self, lip_c: f64, lip_cm: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.lip_c = lip_c;
        self.lip_cm = Arc::new(lip_cm);
        self
    }

    pub fn lip_cm(&self, m: f64) -> f64 {
        (self.lip_cm)(m)
    }

    pub fn drift(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, u, out)
    }

    pub fn diffusion(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, u, out)
    }

    pub fn jump(&self, t: f64, x: &[f64], u: &[f64], eta: &[f64], out: &mut [f64]) {
        (self.jump)(t, x, u, eta, out)
    }
}

/// A jump event as seen by one path.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedJump {
    pub time: f64,
    pub mark: Vec<f64>,
    /// Index of `time` in the path's grid.
    pub grid_index: usize,
    /// False only for events with `|η| ≥ M` in a truncated run.
    pub applied: bool,
}

impl AppliedJump {
    pub fn size(&self) -> f64 {
        self.mark.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathStatus {
    Complete,
    /// The state left the guard ball (or became non-finite) at this grid index;
    /// the path stops there.
    Diverged { index: usize },
}

/// Time grid, states after jumps, explicit left limits and the applied controls.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    pub dim: usize,
    pub action_dim: usize,
    pub horizon: f64,
    pub times: Vec<f64>,
    /// Row-major `times.len() × dim`.
    pub values: Vec<f64>,
    /// `X_{t−}`; equal to `values` at grid points without a jump.
    pub left_limits: Vec<f64>,
    /// Row-major `(times.len() − 1) × action_dim`: the action on `(t_{i}, t_{i+1}]`.
    pub controls: Vec<f64>,
    pub jumps: Vec<AppliedJump>,
    pub status: PathStatus,
}

impl StatePath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn left_limit(&self, i: usize) -> &[f64] {
        &self.left_limits[i * self.dim..(i + 1) * self.dim]
    }

    pub fn control(&self, i: usize) -> &[f64] {
        &self.controls[i * self.action_dim..(i + 1) * self.action_dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.value(self.len() - 1)
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, PathStatus::Diverged { .. })
    }

    pub fn view(&self) -> PathView<'_> {
        PathView {
            start: self.times[0],
            horizon: self.horizon,
            dim: self.dim,
            times: &self.times,
            values: &self.values,
            jumps: &self.jumps,
        }
    }

    /// Bitwise equality of grids, states, left limits, controls and jump flags.
    pub fn bitwise_eq(&self, other: &StatePath) -> bool {
        fn bits(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        bits(&self.times, &other.times)
            && bits(&self.values, &other.values)
            && bits(&self.left_limits, &other.left_limits)
            && bits(&self.controls, &other.controls)
            && self.jumps == other.jumps
            && self.status == other.status
    }

    /// Bitwise agreement on the grid points with index `< end`.
    pub fn bitwise_prefix_eq(&self, other: &StatePath, end: usize) -> bool {
        let d = self.dim;
        let n = end.min(self.len()).min(other.len());
        let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        n == end.min(self.len().max(other.len()))
            && same(&self.times[..n], &other.times[..n])
            && same(&self.values[..n * d], &other.values[..n * d])
            && same(&self.left_limits[..n * d], &other.left_limits[..n * d])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationOptions {
    /// Paths whose state norm exceeds this bound are marked diverged.
    pub guard: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions { guard: 1e12 }
    }
}

/// Integrates the full equation on `[s, t_end]` (both must be grid points of `noise`).
pub fn integrate(
    coeffs: &CoefficientSet,
    policy: &ControlPolicy,
    noise: &NoiseRealization,
    s: f64,
    x: &[f64],
    t_end: f64,
) -> Result<StatePath> {
    integrate_with(coeffs, policy, noise, s, x, t_end, None, IntegrationOptions::default())
}

/// Integrates the truncated equation: jumps with `|η| ≥ m` are recorded but not applied.
pub fn integrate_truncated(
    coeffs: &CoefficientSet,
    policy: &ControlPolicy,
    noise: &NoiseRealization,
    s: f64,
    x: &[f64],
    t_end: f64,
    m: crate::levy_noise::TruncationLevel,
) -> Result<StatePath> {
    integrate_with(coeffs, policy, noise, s, x, t_end, Some(m.get()), IntegrationOptions::default())
}

/// Shared integrator; `truncation = None` runs the full equation.
#[allow(clippy::too_many_arguments)]
pub fn integrate_with(
    coeffs: &CoefficientSet,
    policy: &ControlPolicy,
    noise: &NoiseRealization,
    s: f64,
    x: &[f64],
    t_end: f64,
    truncation: Option<f64>,
    opts: IntegrationOptions,
) -> Result<StatePath> {
    let d = coeffs.state_dim;
    let m = coeffs.brownian_dim;
    let l = coeffs.action_dim;
    if x.len() != d {
        return Err(invalid(format!("initial state has dimension {}, expected {d}", x.len())));
    }
    if m > 0 && noise.brownian_dim != m {
        return Err(invalid(format!(
            "noise carries {} Brownian components, coefficients expect {m}",
            noise.brownian_dim
        )));
    }
    if !noise.jump_events.is_empty() && noise.jump_dim != coeffs.jump_dim {
        return Err(invalid(format!(
            "noise marks have dimension {}, coefficients expect {}",
            noise.jump_dim, coeffs.jump_dim
        )));
    }
    let i0 = noise.index_of(s).ok_or_else(|| invalid(format!("start time {s} is not a grid point")))?;
    let i_end = noise.index_of(t_end).ok_or_else(|| invalid(format!("end time {t_end} is not a grid point")))?;
    if i_end <= i0 {
        return Err(invalid(format!("need s < T, got [{s}, {t_end}]")));
    }

    let n = i_end - i0 + 1;
    let mut path = StatePath {
        dim: d,
        action_dim: l,
        horizon: t_end,
        times: Vec::with_capacity(n),
        values: Vec::with_capacity(n * d),
        left_limits: Vec::with_capacity(n * d),
        controls: Vec::with_capacity((n - 1) * l),
        jumps: Vec::new(),
        status: PathStatus::Complete,
    };
    path.times.push(noise.time_grid[i0]);
    path.values.extend_from_slice(x);
    path.left_limits.extend_from_slice(x);

    let mut state = x.to_vec();
    let mut next = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut sig = vec![0.0; d * m];
    let mut g = vec![0.0; d];
    let comp = &noise.compensator;
    let use_comp = coeffs.has_jump && !coeffs.odd_jump && !comp.is_zero();
    let mut ev = noise.jump_events.partition_point(|e| e.grid_index <= i0);

    for i in (i0 + 1)..=i_end {
        let t_prev = noise.time_grid[i - 1];
        let t = noise.time_grid[i];
        let dt = t - t_prev;
        let u = policy.eval_unchecked(t, &path.view());
        if u.len() != l {
            return Err(invalid(format!("policy emitted an action of dimension {}, expected {l}", u.len())));
        }
        path.controls.extend_from_slice(u);

        coeffs.drift(t_prev, &state, u, &mut b);
        for k in 0..d {
            next[k] = state[k] + b[k] * dt;
        }
        if coeffs.has_diffusion && m > 0 {
            coeffs.diffusion(t_prev, &state, u, &mut sig);
            let dw = noise.dw(i - 1);
            for k in 0..d {
                let row = &sig[k * m..(k + 1) * m];
                next[k] += row.iter().zip(dw).map(|(a, w)| a * w).sum::<f64>();
            }
        }
        if use_comp {
            for (eta, w) in &comp.nodes {
                coeffs.jump(t_prev, &state, u, eta, &mut g);
                for k in 0..d {
                    next[k] -= w * g[k] * dt;
                }
            }
        }
        if coeffs.has_jump {
            if let Some(r) = noise.remainder(i - 1) {
                apply_remainder(coeffs, t_prev, &state, u, r, comp.cutoff, &mut next, &mut g);
            }
        }
        let left_start = path.left_limits.len();
        path.left_limits.extend_from_slice(&next);
        debug_assert_eq!(left_start, path.values.len());

        if ev < noise.jump_events.len() && noise.jump_events[ev].grid_index == i {
            let event = &noise.jump_events[ev];
            let applied = truncation.is_none_or(|lvl| event.size() < lvl);
            if applied && coeffs.has_jump {
                coeffs.jump(t, &path.left_limits[left_start..], u, &event.mark, &mut g);
                for k in 0..d {
                    next[k] += g[k];
                }
            }
            path.jumps.push(AppliedJump {
                time: event.time,
                mark: event.mark.clone(),
                grid_index: i - i0,
                applied,
            });
            ev += 1;
        }

        path.times.push(t);
        path.values.extend_from_slice(&next);
        std::mem::swap(&mut state, &mut next);
        let norm = state.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > opts.guard {
            path.status = PathStatus::Diverged { index: i - i0 };
            break;
        }
    }
    Ok(path)
}

/// Gaussian stand-in for the dropped jumps below the cutoff, using a
/// finite-difference Jacobian of `γ` in `η` at scale `cutoff`.
#[allow(clippy::too_many_arguments)]
fn apply_remainder(
    coeffs: &CoefficientSet,
    t: f64,
    x: &[f64],
    u: &[f64],
    z: &[f64],
    cutoff: f64,
    next: &mut [f64],
    g: &mut [f64],
) {
    let q = z.len();
    let mut eta = vec![0.0; q];
    let mut plus = vec![0.0; next.len()];
    for j in 0..q {
        eta[j] = cutoff;
        coeffs.jump(t, x, u, &eta, &mut plus);
        eta[j] = -cutoff;
        coeffs.jump(t, x, u, &eta, g);
        eta[j] = 0.0;
        for k in 0..next.len() {
            next[k] += (plus[k] - g[k]) / (2.0 * cutoff) * z[j];
        }
    }
}

/// Result of spot-checking the Lipschitz and growth bounds on the coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Assumption1Report {
    /// Largest `(|σ(x1)−σ(x2)| + |b(x1)−b(x2)|) / (C |x1−x2|)`.
    pub max_ratio_lipschitz: f64,
    /// Per `M`: largest `|γ(x1,η)−γ(x2,η)| / (C_M |η| |x1−x2|)`.
    pub max_ratio_jump_lipschitz: Vec<(f64, f64)>,
    /// Per `M`: largest `|γ(x,η)| / (C_M |η| (1+|x|))`.
    pub max_ratio_growth: Vec<(f64, f64)>,
    pub violations: Vec<Violation>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub bound: &'static str,
    pub t: f64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub u: Vec<f64>,
    pub eta: Vec<f64>,
    pub ratio: f64,
}

const MAX_RECORDED_VIOLATIONS: usize = 20;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn vnorm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Monte Carlo spot-check of the Lipschitz and linear-growth bounds on random
/// `(t, x1, x2, u, η)` with `|x_i|_∞ ≤ radius`, `t ∈ [0, horizon]` and `0 < |η| < M`.
pub fn verify_assumption1(
    coeffs: &CoefficientSet,
    actions: &ActionSet,
    horizon: f64,
    sample_count: usize,
    radius: f64,
    m_list: &[f64],
    seed: u64,
) -> Assumption1Report {
    let d = coeffs.state_dim;
    let m = coeffs.brownian_dim;
    let q = coeffs.jump_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = 1.0 + 1e-9;
    let mut violations = Vec::new();
    let mut record = |v: Violation| {
        if violations.len() < MAX_RECORDED_VIOLATIONS {
            violations.push(v);
        }
    };
    let mut b1 = vec![0.0; d];
    let mut b2 = vec![0.0; d];
    let mut s1 = vec![0.0; d * m];
    let mut s2 = vec![0.0; d * m];
    let mut g1 = vec![0.0; d];
    let mut g2 = vec![0.0; d];
    let mut failed = false;

    let mut max_lip: f64 = 0.0;
    let mut jump_lip: Vec<(f64, f64)> = m_list.iter().map(|&mm| (mm, 0.0)).collect();
    let mut growth: Vec<(f64, f64)> = m_list.iter().map(|&mm| (mm, 0.0)).collect();

    for _ in 0..sample_count {
        let t = rng.random_range(0.0..=horizon);
        let x1: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..=radius)).collect();
        let x2: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..=radius)).collect();
        let u = actions.points()[rng.random_range(0..actions.len())].clone();
        let dx = dist(&x1, &x2);
        if dx == 0.0 {
            continue;
        }
        coeffs.drift(t, &x1, &u, &mut b1);
        coeffs.drift(t, &x2, &u, &mut b2);
        coeffs.diffusion(t, &x1, &u, &mut s1);
        coeffs.diffusion(t, &x2, &u, &mut s2);
        let lhs = dist(&s1, &s2) + dist(&b1, &b2);
        let ratio = ratio_of(lhs, coeffs.lip_c * dx);
        max_lip = max_lip.max(ratio);
        if ratio > tol {
            failed = true;
            record(Violation { bound: "lipschitz", t, x1: x1.clone(), x2: x2.clone(), u: u.clone(), eta: vec![], ratio });
        }

        for (k, &mm) in m_list.iter().enumerate() {
            let r = mm * rng.random_range(1e-3..1.0f64);
            let mut eta: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0f64)).collect();
            let n = vnorm(&eta).max(1e-12);
            eta.iter_mut().for_each(|e| *e *= r / n);
            let size = vnorm(&eta);
            if size == 0.0 || size >= mm {
                continue;
            }
            let cm = coeffs.lip_cm(mm);
            coeffs.jump(t, &x1, &u, &eta, &mut g1);
            coeffs.jump(t, &x2, &u, &eta, &mut g2);
            let ratio = ratio_of(dist(&g1, &g2), cm * size * dx);
            jump_lip[k].1 = jump_lip[k].1.max(ratio);
            if ratio > tol {
                failed = true;
                record(Violation {
                    bound: "jump_lipschitz",
                    t,
                    x1: x1.clone(),
                    x2: x2.clone(),
                    u: u.clone(),
                    eta: eta.clone(),
                    ratio,
                });
            }
            let ratio = ratio_of(vnorm(&g1), cm * size * (1.0 + vnorm(&x1)));
            growth[k].1 = growth[k].1.max(ratio);
            if ratio > tol {
                failed = true;
                record(Violation { bound: "jump_growth", t, x1: x1.clone(), x2: vec![], u: u.clone(), eta, ratio });
            }
        }
    }
    Assumption1Report {
        max_ratio_lipschitz: max_lip,
        max_ratio_jump_lipschitz: jump_lip,
        max_ratio_growth: growth,
        pass: !failed,
        violations,
    }
}

fn ratio_of(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else if rhs > 0.0 {
        lhs / rhs
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_noise::{
        base_grid, sample_noise, JumpEvent, LargeJumps, LevyMeasureSpec, PointMass, TruncationLevel,
    };

    fn grid(n: usize) -> Vec<f64> {
        base_grid(0.0, 1.0, 1.0 / n as f64, &[]).unwrap()
    }

    fn quiet_noise(n: usize) -> NoiseRealization {
        sample_noise(&LevyMeasureSpec::none(1), 1, 0.0, 1.0, &grid(n), 1).unwrap()
    }

    #[test]
    fn zero_coefficients_keep_state() {
        let c = CoefficientSet::zero(2, 1, 1, 1);
        let p = integrate(&c, &ControlPolicy::Constant(vec![0.0]), &quiet_noise(16), 0.0, &[1.5, -2.0], 1.0).unwrap();
        for i in 0..p.len() {
            assert_eq!(p.value(i), &[1.5, -2.0]);
        }
    }

    #[test]
    fn controlled_drift_is_exact() {
        let c = CoefficientSet::zero(1, 1, 1, 1).with_drift(|_, _, u, out| out[0] = u[0]);
        let p = integrate(&c, &ControlPolicy::Constant(vec![0.5]), &quiet_noise(256), 0.0, &[1.0], 1.0).unwrap();
        assert_eq!(p.terminal(), &[1.5]);
    }

    #[test]
    fn linear_ode_first_order_convergence() {
        let a = 1.3;
        let c = CoefficientSet::zero(1, 1, 1, 1).with_drift(move |_, x, _, out| out[0] = a * x[0]);
        let exact = a.exp();
        let errs: Vec<f64> = [32usize, 64, 128, 256]
            .iter()
            .map(|&n| {
                let p = integrate(&c, &ControlPolicy::Constant(vec![0.0]), &quiet_noise(n), 0.0, &[1.0], 1.0).unwrap();
                (p.terminal()[0] - exact).abs()
            })
            .collect();
        // Fitted slope of log(err) against log(dt).
        let xs: Vec<f64> = [32.0f64, 64.0, 128.0, 256.0].iter().map(|n| (1.0 / n).ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let mx = xs.iter().sum::<f64>() / 4.0;
        let my = ys.iter().sum::<f64>() / 4.0;
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope - 1.0).abs() < 0.1, "slope {slope}");
        // K Δt bound with K = a² e^a / 2 (leading Euler error term) plus slack.
        let k = a * a * exact;
        assert!(errs[3] <= k / 256.0);
    }

    fn pure_jump_coeffs() -> CoefficientSet {
        CoefficientSet::zero(1, 1, 1, 1).with_jump(|_, _, _, eta, out| out[0] = eta[0])
    }

    #[test]
    fn pure_jump_sum() {
        let spec = LevyMeasureSpec::with_large(1, LargeJumps::PowerLaw { c: 1.0, alpha: 1.0 });
        let noise = sample_noise(&spec, 1, 0.0, 1.0, &grid(8), 5).unwrap();
        let p = integrate(&pure_jump_coeffs(), &ControlPolicy::Constant(vec![0.0]), &noise, 0.0, &[0.25], 1.0).unwrap();
        let expected = noise.jump_events.iter().fold(0.25, |acc, e| acc + e.mark[0]);
        assert_eq!(p.terminal(), &[expected]);
    }

    fn single_jump_noise(t: f64, eta: f64) -> NoiseRealization {
        let mut g = grid(4);
        let pos = g.partition_point(|&x| x < t);
        g.insert(pos, t);
        let mut noise = sample_noise(&LevyMeasureSpec::none(1), 1, 0.0, 1.0, &g, 3).unwrap();
        noise.jump_events = vec![JumpEvent { time: t, mark: vec![eta], grid_index: pos }];
        noise
    }

    #[test]
    fn truncation_skips_large_jump() {
        let noise = single_jump_noise(0.6, 10.0);
        let c = pure_jump_coeffs();
        let pol = ControlPolicy::Constant(vec![0.0]);
        let full = integrate(&c, &pol, &noise, 0.0, &[1.0], 1.0).unwrap();
        let m5 = TruncationLevel::new(5.0).unwrap();
        let trunc = integrate_truncated(&c, &pol, &noise, 0.0, &[1.0], 1.0, m5).unwrap();
        assert_eq!(full.terminal(), &[11.0]);
        assert_eq!(trunc.terminal(), &[1.0]);
        assert!(!trunc.jumps[0].applied);
        // At τ₁ the truncated value equals the untruncated left limit.
        let k = trunc.jumps[0].grid_index;
        assert_eq!(trunc.value(k), full.left_limit(k));
        let m20 = TruncationLevel::new(20.0).unwrap();
        let loose = integrate_truncated(&c, &pol, &noise, 0.0, &[1.0], 1.0, m20).unwrap();
        assert!(loose.bitwise_eq(&full));
    }

    #[test]
    fn restart_reproduces_tail() {
        let spec = LevyMeasureSpec::with_large(
            1,
            LargeJumps::PointMasses { masses: vec![PointMass { mark: vec![1.5], rate: 2.0 }] },
        );
        let c = CoefficientSet::zero(1, 1, 1, 1)
            .with_drift(|_, x, u, out| out[0] = u[0] - 0.5 * x[0])
            .with_diffusion(|_, _, _, out| out[0] = 0.3)
            .with_jump(|_, x, _, eta, out| out[0] = 0.2 * eta[0] * (1.0 + x[0].abs()).sqrt());
        let pol = ControlPolicy::piecewise(vec![0.5], vec![vec![1.0], vec![-1.0]]).unwrap();
        let g = base_grid(0.0, 1.0, 1.0 / 32.0, &[0.5]).unwrap();
        let m = TruncationLevel::new(1.2).unwrap();
        for seed in 0..20 {
            let noise = sample_noise(&spec, 1, 0.0, 1.0, &g, seed).unwrap();
            let whole = integrate_truncated(&c, &pol, &noise, 0.0, &[0.3], 1.0, m).unwrap();
            let k = whole.times.iter().position(|&t| t == 0.5).unwrap();
            let tail = integrate_truncated(&c, &pol, &noise, 0.5, whole.value(k), 1.0, m).unwrap();
            let d = whole.dim;
            assert_eq!(&whole.times[k..], &tail.times[..]);
            let a: Vec<u64> = whole.values[k * d..].iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = tail.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn divergence_is_flagged() {
        let c = CoefficientSet::zero(1, 1, 1, 1).with_drift(|_, x, _, out| out[0] = 50.0 * x[0]);
        let p = integrate_with(
            &c,
            &ControlPolicy::Constant(vec![0.0]),
            &quiet_noise(64),
            0.0,
            &[1.0],
            1.0,
            None,
            IntegrationOptions { guard: 1e6 },
        )
        .unwrap();
        assert!(p.diverged());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let c = CoefficientSet::zero(2, 1, 1, 1);
        assert!(integrate(&c, &ControlPolicy::Constant(vec![0.0]), &quiet_noise(4), 0.0, &[0.0], 1.0).is_err());
        let c = CoefficientSet::zero(1, 1, 2, 1);
        assert!(integrate(&c, &ControlPolicy::Constant(vec![0.0]), &quiet_noise(4), 0.0, &[0.0], 1.0).is_err());
        assert!(integrate(&c, &ControlPolicy::Constant(vec![0.0, 0.0]), &quiet_noise(4), 0.1, &[0.0], 1.0).is_err());
    }

    #[test]
    fn assumption1_spot_checks() {
        let a = ActionSet::scalars(&[-1.0, -0.5, 0.0, 0.5, 1.0]).unwrap();
        let lin = CoefficientSet::zero(1, 1, 1, 1)
            .with_drift(|_, x, u, out| out[0] = u[0] * x[0])
            .with_jump(|_, x, _, eta, out| out[0] = eta[0] * x[0])
            .with_constants(1.0, |_| 1.0);
        let rep = verify_assumption1(&lin, &a, 1.0, 2000, 5.0, &[1.0, 4.0, 16.0], 1);
        assert!(rep.pass, "{:?}", rep.violations.first());
        assert!(rep.max_ratio_lipschitz <= 1.0 + 1e-9);

        let quad = CoefficientSet::zero(1, 1, 1, 1).with_drift(|_, x, _, out| out[0] = x[0] * x[0]).with_constants(
            100.0,
            |_| 1.0,
        );
        let rep = verify_assumption1(&quad, &a, 1.0, 5000, 100.0, &[], 2);
        assert!(!rep.pass);
        let v = &rep.violations[0];
        // Direct check of the reported pair.
        let lhs = (v.x1[0] * v.x1[0] - v.x2[0] * v.x2[0]).abs();
        assert!(lhs > 100.0 * (v.x1[0] - v.x2[0]).abs());
    }
}
