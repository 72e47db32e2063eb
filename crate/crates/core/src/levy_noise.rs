//! Lévy measures, sampling of the driving noise and analytic jump-law quantities.
//!
//! A [`LevyMeasureSpec`] splits the jump measure into a small-jump part living on
//! `0 < |η| < 1` and a large-jump part on `|η| ≥ 1`. Jumps with `|η|` below the
//! configured `small_cutoff` are never simulated; their compensated contribution
//! is dropped (or replaced by a Gaussian term when `gaussian_remainder` is set).
//! The band `[small_cutoff, 1)` is simulated as a compound Poisson process and
//! compensated by [`BandCompensator`].
//!
//! The supported families are parametric so that tail masses and compensators
//! have closed forms. The choice of families is ours; any measure satisfying
//! the Lévy integrability condition would do.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::stats::normal_cdf;

/// Small-jump part of ν, restricted to `0 < |η| < 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SmallJumps {
    #[default]
    None,
    /// Isotropic density `c |η|^{-q-α}`.
    PowerLaw { c: f64, alpha: f64 },
}

/// Large-jump part of ν, restricted to `|η| ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum LargeJumps {
    #[default]
    None,
    /// Isotropic density `c |η|^{-q-α}`.
    PowerLaw { c: f64, alpha: f64 },
    PointMasses { masses: Vec<PointMass> },
    /// `|η| = 1 + exp(mu + sigma Z)` with uniform direction and total rate `rate`.
    LognormalShifted { rate: f64, mu: f64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMass {
    pub mark: Vec<f64>,
    pub rate: f64,
}

/// Parametric description of a Lévy measure on `ℝ^q \ {0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyMeasureSpec {
    pub jump_dim: usize,
    #[serde(default)]
    pub small: SmallJumps,
    #[serde(default)]
    pub large: LargeJumps,
    #[serde(default = "default_cutoff")]
    pub small_cutoff: f64,
    #[serde(default)]
    pub gaussian_remainder: bool,
}

fn default_cutoff() -> f64 {
    1.0
}

/// Surface area of the unit sphere in `ℝ^q` (2 for q = 1).
pub fn sphere_area(q: usize) -> f64 {
    let half = q as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(half) / statrs::function::gamma::gamma(half)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl LevyMeasureSpec {
    /// No jumps at all.
    pub fn none(jump_dim: usize) -> Self {
        LevyMeasureSpec {
            jump_dim,
            small: SmallJumps::None,
            large: LargeJumps::None,
            small_cutoff: 1.0,
            gaussian_remainder: false,
        }
    }

    pub fn with_large(jump_dim: usize, large: LargeJumps) -> Self {
        LevyMeasureSpec { large, ..Self::none(jump_dim) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.jump_dim == 0 {
            return Err(invalid("jump_dim must be positive"));
        }
        if !(self.small_cutoff > 0.0 && self.small_cutoff <= 1.0) {
            return Err(invalid(format!("small_cutoff {} outside (0, 1]", self.small_cutoff)));
        }
        if let SmallJumps::PowerLaw { c, alpha } = self.small {
            check_power_law(c, alpha, "small")?;
        }
        match &self.large {
            LargeJumps::None => {}
            LargeJumps::PowerLaw { c, alpha } => check_power_law(*c, *alpha, "large")?,
            LargeJumps::PointMasses { masses } => {
                for (i, m) in masses.iter().enumerate() {
                    if m.mark.len() != self.jump_dim {
                        return Err(invalid(format!(
                            "point mass {i}: mark has dimension {}, expected {}",
                            m.mark.len(),
                            self.jump_dim
                        )));
                    }
                    if !(norm(&m.mark) >= 1.0) || m.mark.iter().any(|v| !v.is_finite()) {
                        return Err(invalid(format!("point mass {i}: |mark| must be >= 1")));
                    }
                    if !(m.rate > 0.0 && m.rate.is_finite()) {
                        return Err(invalid(format!("point mass {i}: rate must be positive")));
                    }
                }
            }
            LargeJumps::LognormalShifted { rate, mu, sigma } => {
                if !(*rate > 0.0 && rate.is_finite() && mu.is_finite() && *sigma > 0.0 && sigma.is_finite()) {
                    return Err(invalid("lognormal_shifted needs rate > 0, finite mu, sigma > 0"));
                }
            }
        }
        Ok(())
    }

    /// `∫_{0<|η|<1} |η|² ν(dη)`, finite for every admissible small part.
    pub fn small_second_moment(&self) -> f64 {
        match self.small {
            SmallJumps::None => 0.0,
            SmallJumps::PowerLaw { c, alpha } => c * sphere_area(self.jump_dim) / (2.0 - alpha),
        }
    }

    /// ν-mass of the simulated small band `small_cutoff ≤ |η| < 1`.
    pub fn band_rate(&self) -> f64 {
        match self.small {
            SmallJumps::None => 0.0,
            SmallJumps::PowerLaw { c, alpha } => {
                c * sphere_area(self.jump_dim) * (self.small_cutoff.powf(-alpha) - 1.0) / alpha
            }
        }
    }

    /// ν(E_1), the rate of the compound Poisson process of large jumps.
    pub fn large_rate(&self) -> f64 {
        match &self.large {
            LargeJumps::None => 0.0,
            LargeJumps::PowerLaw { c, alpha } => c * sphere_area(self.jump_dim) / alpha,
            LargeJumps::PointMasses { masses } => masses.iter().map(|m| m.rate).sum(),
            LargeJumps::LognormalShifted { rate, .. } => *rate,
        }
    }

    pub fn has_jumps(&self) -> bool {
        self.band_rate() + self.large_rate() > 0.0
    }

    /// Per-coordinate variance rate of the dropped jumps `|η| < small_cutoff`.
    fn remainder_variance(&self) -> f64 {
        match self.small {
            SmallJumps::None => 0.0,
            SmallJumps::PowerLaw { c, alpha } => {
                c * sphere_area(self.jump_dim) * self.small_cutoff.powf(2.0 - alpha)
                    / ((2.0 - alpha) * self.jump_dim as f64)
            }
        }
    }
}

fn check_power_law(c: f64, alpha: f64, part: &str) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid(format!("{part} power_law: c must be positive")));
    }
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(invalid(format!("{part} power_law: alpha {alpha} outside (0, 2)")));
    }
    Ok(())
}

/// `ν(E_M)` with `E_M = {|η| ≥ M}`, exact for every supported family.
pub fn tail_mass(spec: &LevyMeasureSpec, m: f64) -> Result<f64> {
    if m.is_nan() || m < spec.small_cutoff {
        return Err(invalid(format!("threshold {m} below small_cutoff {}", spec.small_cutoff)));
    }
    let area = sphere_area(spec.jump_dim);
    let small = match spec.small {
        SmallJumps::PowerLaw { c, alpha } if m < 1.0 => c * area * (m.powf(-alpha) - 1.0) / alpha,
        _ => 0.0,
    };
    let large = match &spec.large {
        LargeJumps::None => 0.0,
        LargeJumps::PowerLaw { c, alpha } => c * area * m.max(1.0).powf(-alpha) / alpha,
        LargeJumps::PointMasses { masses } => {
            masses.iter().filter(|p| norm(&p.mark) >= m).map(|p| p.rate).sum()
        }
        LargeJumps::LognormalShifted { rate, mu, sigma } => {
            if m <= 1.0 {
                *rate
            } else {
                rate * (1.0 - normal_cdf(((m - 1.0).ln() - mu) / sigma))
            }
        }
    };
    Ok(small + large)
}

/// Seed of path `k` in an experiment seeded with `experiment_seed`.
pub fn path_seed(experiment_seed: u64, k: u64) -> u64 {
    mix_seed(&[experiment_seed, k])
}

/// SplitMix64-based hash of a tuple of words.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64;
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform base grid on `[s, t_end]` with step at most `dt`, with `extra` times
/// inserted. Extra times within `1e-9 (t_end - s)` of a grid point replace it so
/// that they are represented exactly.
pub fn base_grid(s: f64, t_end: f64, dt: f64, extra: &[f64]) -> Result<Vec<f64>> {
    if !(s < t_end) || !s.is_finite() || !t_end.is_finite() {
        return Err(invalid(format!("horizon [{s}, {t_end}] is empty")));
    }
    if !(dt > 0.0) {
        return Err(invalid("grid step must be positive"));
    }
    let span = t_end - s;
    let n = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| s + span * (k as f64 / n as f64)).collect();
    grid[n] = t_end;
    let snap = 1e-9 * span;
    for &e in extra {
        if !(e > s && e < t_end) {
            continue;
        }
        let pos = grid.partition_point(|&g| g < e);
        if pos < grid.len() && (grid[pos] - e).abs() <= snap && pos != n {
            grid[pos] = e;
        } else if pos > 0 && (grid[pos - 1] - e).abs() <= snap && pos - 1 != 0 {
            grid[pos - 1] = e;
        } else if !(pos < grid.len() && grid[pos] == e) {
            grid.insert(pos, e);
        }
    }
    Ok(grid)
}

/// One jump of the Poisson random measure.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: Vec<f64>,
    /// Index of `time` in the realization's grid.
    pub grid_index: usize,
}

impl JumpEvent {
    pub fn size(&self) -> f64 {
        norm(&self.mark)
    }
}

/// One path of driving noise: Brownian increments on a grid that contains every
/// jump time, plus the ordered jump events with `|η| ≥ small_cutoff`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub seed: u64,
    pub time_grid: Vec<f64>,
    pub brownian_dim: usize,
    /// Row-major `(grid intervals) × brownian_dim`.
    pub brownian_increments: Vec<f64>,
    pub jump_dim: usize,
    /// Row-major `(grid intervals) × jump_dim`; empty unless the Gaussian
    /// remainder is enabled.
    pub remainder_increments: Vec<f64>,
    pub jump_events: Vec<JumpEvent>,
    /// Compensator of the simulated small band, shared by every path of a spec.
    pub compensator: Arc<BandCompensator>,
}

impl NoiseRealization {
    pub fn start(&self) -> f64 {
        self.time_grid[0]
    }

    pub fn end(&self) -> f64 {
        *self.time_grid.last().expect("grid is nonempty")
    }

    pub fn intervals(&self) -> usize {
        self.time_grid.len() - 1
    }

    /// Brownian increment over `[t_{i}, t_{i+1}]`.
    pub fn dw(&self, i: usize) -> &[f64] {
        &self.brownian_increments[i * self.brownian_dim..(i + 1) * self.brownian_dim]
    }

    pub fn remainder(&self, i: usize) -> Option<&[f64]> {
        if self.remainder_increments.is_empty() {
            None
        } else {
            Some(&self.remainder_increments[i * self.jump_dim..(i + 1) * self.jump_dim])
        }
    }

    /// Exact grid index of time `t`, if present.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let pos = self.time_grid.partition_point(|&g| g < t);
        (pos < self.time_grid.len() && self.time_grid[pos] == t).then_some(pos)
    }
}

/// Samples Brownian increments and jump events on `[s, t_end]`.
///
/// Jump times are merged into `grid`; Brownian increments are drawn for every
/// interval of the merged grid. The output is a deterministic function of the
/// inputs.
pub fn sample_noise(
    spec: &LevyMeasureSpec,
    brownian_dim: usize,
    s: f64,
    t_end: f64,
    grid: &[f64],
    seed: u64,
) -> Result<NoiseRealization> {
    NoiseSampler::new(spec.clone(), brownian_dim)?.sample(s, t_end, grid, seed)
}

/// Validated spec plus its band compensator, reused across many paths.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    spec: LevyMeasureSpec,
    brownian_dim: usize,
    compensator: Arc<BandCompensator>,
}

impl NoiseSampler {
    pub fn new(spec: LevyMeasureSpec, brownian_dim: usize) -> Result<Self> {
        spec.validate()?;
        let compensator = Arc::new(small_jump_compensator(&spec));
        Ok(NoiseSampler { spec, brownian_dim, compensator })
    }

    pub fn spec(&self) -> &LevyMeasureSpec {
        &self.spec
    }

    pub fn sample(&self, s: f64, t_end: f64, grid: &[f64], seed: u64) -> Result<NoiseRealization> {
        sample_with(&self.spec, self.brownian_dim, &self.compensator, s, t_end, grid, seed)
    }
}

fn sample_with(
    spec: &LevyMeasureSpec,
    brownian_dim: usize,
    compensator: &Arc<BandCompensator>,
    s: f64,
    t_end: f64,
    grid: &[f64],
    seed: u64,
) -> Result<NoiseRealization> {
    if !(s < t_end) {
        return Err(invalid(format!("horizon [{s}, {t_end}] is empty")));
    }
    if grid.len() < 2 {
        return Err(invalid("time grid needs at least two points"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("time grid must be strictly increasing"));
    }
    if grid[0] != s || grid[grid.len() - 1] != t_end {
        return Err(invalid("time grid must start at s and end at T"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = spec.jump_dim;
    let band = spec.band_rate();
    let large = spec.large_rate();
    let total = band + large;

    let mut raw_events: Vec<(f64, Vec<f64>)> = Vec::new();
    if total > 0.0 {
        let exp = Exp::new(total).map_err(|e| invalid(e.to_string()))?;
        let mut t = s;
        loop {
            t += exp.sample(&mut rng);
            if t > t_end {
                break;
            }
            let u: f64 = rng.random();
            let mark = if u * total < band {
                sample_band_mark(spec, &mut rng)
            } else {
                sample_large_mark(spec, &mut rng)
            };
            // Ties with an existing event are measure-zero; keep times strictly increasing.
            if raw_events.last().is_some_and(|(prev, _)| *prev >= t) {
                continue;
            }
            raw_events.push((t, mark));
        }
    }

    let mut time_grid = Vec::with_capacity(grid.len() + raw_events.len());
    let mut jump_events = Vec::with_capacity(raw_events.len());
    let mut gi = 0;
    for (t, mark) in raw_events {
        while gi < grid.len() && grid[gi] < t {
            time_grid.push(grid[gi]);
            gi += 1;
        }
        if gi < grid.len() && grid[gi] == t {
            time_grid.push(grid[gi]);
            gi += 1;
        } else {
            time_grid.push(t);
        }
        jump_events.push(JumpEvent { time: t, mark, grid_index: time_grid.len() - 1 });
    }
    time_grid.extend_from_slice(&grid[gi..]);

    let intervals = time_grid.len() - 1;
    let mut brownian_increments = Vec::with_capacity(intervals * brownian_dim);
    for w in time_grid.windows(2) {
        let sd = (w[1] - w[0]).sqrt();
        for _ in 0..brownian_dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            brownian_increments.push(sd * z);
        }
    }

    let mut remainder_increments = Vec::new();
    if spec.gaussian_remainder {
        let var = spec.remainder_variance();
        if var > 0.0 {
            remainder_increments.reserve(intervals * q);
            for w in time_grid.windows(2) {
                let sd = ((w[1] - w[0]) * var).sqrt();
                for _ in 0..q {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    remainder_increments.push(sd * z);
                }
            }
        }
    }

    Ok(NoiseRealization {
        seed,
        time_grid,
        brownian_dim,
        brownian_increments,
        jump_dim: q,
        remainder_increments,
        jump_events,
        compensator: Arc::clone(compensator),
    })
}

fn random_direction<R: Rng>(q: usize, rng: &mut R) -> Vec<f64> {
    if q == 1 {
        return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
    }
    loop {
        let v: Vec<f64> = (0..q).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn sample_band_mark<R: Rng>(spec: &LevyMeasureSpec, rng: &mut R) -> Vec<f64> {
    let SmallJumps::PowerLaw { alpha, .. } = spec.small else {
        unreachable!("band rate is zero without a small part")
    };
    let lo = spec.small_cutoff.powf(-alpha);
    let u: f64 = rng.random();
    // Inverse CDF of the radial law on [cutoff, 1).
    let r = (lo - u * (lo - 1.0)).powf(-1.0 / alpha);
    let r = r.clamp(spec.small_cutoff, 1.0f64.next_down());
    random_direction(spec.jump_dim, rng).into_iter().map(|d| d * r).collect()
}

fn sample_large_mark<R: Rng>(spec: &LevyMeasureSpec, rng: &mut R) -> Vec<f64> {
    match &spec.large {
        LargeJumps::None => unreachable!("large rate is zero"),
        LargeJumps::PowerLaw { alpha, .. } => {
            let u: f64 = rng.random();
            let r = (1.0 - u).powf(-1.0 / alpha);
            random_direction(spec.jump_dim, rng).into_iter().map(|d| d * r).collect()
        }
        LargeJumps::PointMasses { masses } => {
            let total: f64 = masses.iter().map(|m| m.rate).sum();
            let mut u: f64 = rng.random::<f64>() * total;
            for m in masses {
                if u < m.rate {
                    return m.mark.clone();
                }
                u -= m.rate;
            }
            masses.last().expect("validated nonempty").mark.clone()
        }
        LargeJumps::LognormalShifted { mu, sigma, .. } => {
            let z: f64 = StandardNormal.sample(rng);
            let r = 1.0 + (mu + sigma * z).exp();
            random_direction(spec.jump_dim, rng).into_iter().map(|d| d * r).collect()
        }
    }
}

/// A hitting time that may never occur before the horizon.
///
/// `Never` orders after every finite time.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum HittingTime {
    At(f64),
    Never,
}

impl HittingTime {
    /// True when the time is at most `t`.
    pub fn occurs_by(&self, t: f64) -> bool {
        matches!(*self, HittingTime::At(x) if x <= t)
    }

    pub fn time_or(&self, horizon: f64) -> f64 {
        match *self {
            HittingTime::At(x) => x,
            HittingTime::Never => horizon,
        }
    }
}

/// Truncation level `M ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct TruncationLevel(f64);

impl TruncationLevel {
    pub fn new(m: f64) -> Result<Self> {
        if m >= 1.0 {
            Ok(TruncationLevel(m))
        } else {
            Err(invalid(format!("truncation level {m} must be >= 1")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `τ_M`: time of the first jump with `|η| ≥ M`.
pub fn first_exceed_time(noise: &NoiseRealization, m: TruncationLevel) -> HittingTime {
    noise
        .jump_events
        .iter()
        .find(|e| e.size() >= m.get())
        .map_or(HittingTime::Never, |e| HittingTime::At(e.time))
}

/// Quadrature representation of ν restricted to the simulated small band.
///
/// The integrator subtracts `Σ_k w_k γ(t, x, u, η_k)`, which approximates
/// `∫_{ε ≤ |η| < 1} γ(t, x, u, η) ν(dη)`. Weights sum to the band mass; nodes
/// come in `±` pairs, so the compensator vanishes exactly for odd `γ`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BandCompensator {
    pub nodes: Vec<(Vec<f64>, f64)>,
    /// Lower edge of the simulated band.
    pub cutoff: f64,
}

impl BandCompensator {
    pub fn is_zero(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|(_, w)| w).sum()
    }

    /// `Σ_k w_k g(η_k)` for a scalar integrand.
    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut g: F) -> f64 {
        self.nodes.iter().map(|(eta, w)| w * g(eta)).sum()
    }
}

const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];
const COMPENSATOR_PANELS: usize = 6;

pub fn small_jump_compensator(spec: &LevyMeasureSpec) -> BandCompensator {
    let SmallJumps::PowerLaw { c, alpha } = spec.small else {
        return BandCompensator::default();
    };
    if spec.small_cutoff >= 1.0 {
        return BandCompensator::default();
    }
    let q = spec.jump_dim;
    // Substituting v = r^{-α} turns c·S·r^{-1-α} dr into (c·S/α) dv on [1, ε^{-α}].
    let v_hi = spec.small_cutoff.powf(-alpha);
    let scale = c * sphere_area(q) / alpha;
    let width = (v_hi - 1.0) / COMPENSATOR_PANELS as f64;
    let directions: Vec<Vec<f64>> = (0..q)
        .flat_map(|j| {
            [1.0, -1.0].into_iter().map(move |sgn| {
                let mut e = vec![0.0; q];
                e[j] = sgn;
                e
            })
        })
        .collect();
    let dir_weight = 1.0 / directions.len() as f64;
    let mut nodes = Vec::with_capacity(COMPENSATOR_PANELS * 8 * directions.len());
    for p in 0..COMPENSATOR_PANELS {
        let mid = 1.0 + width * (p as f64 + 0.5);
        for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
            for v in [mid - 0.5 * width * x, mid + 0.5 * width * x] {
                let r = v.powf(-1.0 / alpha);
                let weight = scale * 0.5 * width * w * dir_weight;
                for d in &directions {
                    nodes.push((d.iter().map(|di| di * r).collect(), weight));
                }
            }
        }
    }
    BandCompensator { nodes, cutoff: spec.small_cutoff }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power_law_large(c: f64, alpha: f64) -> LevyMeasureSpec {
        LevyMeasureSpec::with_large(1, LargeJumps::PowerLaw { c, alpha })
    }

    fn point_masses(list: &[(f64, f64)]) -> LevyMeasureSpec {
        LevyMeasureSpec::with_large(
            1,
            LargeJumps::PointMasses {
                masses: list.iter().map(|&(m, r)| PointMass { mark: vec![m], rate: r }).collect(),
            },
        )
    }

    fn unit_grid() -> Vec<f64> {
        base_grid(0.0, 1.0, 1.0 / 8.0, &[]).unwrap()
    }

    #[test]
    fn no_jump_mass_gives_no_events() {
        let spec = LevyMeasureSpec::none(1);
        let noise = sample_noise(&spec, 2, 0.0, 1.0, &unit_grid(), 7).unwrap();
        assert!(noise.jump_events.is_empty());
        assert_eq!(noise.brownian_increments.len(), 8 * 2);
    }

    #[test]
    fn grid_validation_errors() {
        let spec = LevyMeasureSpec::none(1);
        assert!(sample_noise(&spec, 1, 0.0, 1.0, &[], 1).is_err());
        assert!(sample_noise(&spec, 1, 0.0, 1.0, &[0.0, 0.5, 0.5, 1.0], 1).is_err());
        assert!(sample_noise(&spec, 1, 0.0, 1.0, &[0.0, 0.7, 0.3, 1.0], 1).is_err());
        assert!(sample_noise(&spec, 1, 1.0, 1.0, &[1.0, 1.0], 1).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(power_law_large(1.0, 2.0).validate().is_err());
        assert!(power_law_large(1.0, 0.0).validate().is_err());
        assert!(point_masses(&[(0.5, 1.0)]).validate().is_err());
        assert!(point_masses(&[(2.0, 0.0)]).validate().is_err());
        let mut s = LevyMeasureSpec::none(1);
        s.small_cutoff = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn tail_mass_closed_forms() {
        let spec = power_law_large(1.0, 0.5);
        assert!((tail_mass(&spec, 1.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((tail_mass(&spec, 16.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(tail_mass(&spec, f64::INFINITY).unwrap(), 0.0);
        assert_eq!(tail_mass(&point_masses(&[(5.0, 2.0)]), 3.0).unwrap(), 2.0);
        assert_eq!(tail_mass(&point_masses(&[(5.0, 2.0)]), 6.0).unwrap(), 0.0);
        assert!(tail_mass(&spec, 0.5).is_err());
    }

    #[test]
    fn tail_mass_includes_small_band_below_one() {
        let spec = LevyMeasureSpec {
            jump_dim: 1,
            small: SmallJumps::PowerLaw { c: 1.0, alpha: 0.5 },
            large: LargeJumps::None,
            small_cutoff: 0.25,
            gaussian_remainder: false,
        };
        // 2 c (M^{-α} - 1)/α at M = 0.25: 2 (2 - 1)/0.5 = 4
        assert!((tail_mass(&spec, 0.25).unwrap() - 4.0).abs() < 1e-12);
        assert!((spec.band_rate() - 4.0).abs() < 1e-12);
        assert_eq!(tail_mass(&spec, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn lognormal_tail_mass() {
        let spec = LevyMeasureSpec::with_large(
            1,
            LargeJumps::LognormalShifted { rate: 2.0, mu: 0.0, sigma: 1.0 },
        );
        assert_eq!(tail_mass(&spec, 1.0).unwrap(), 2.0);
        // P(1 + e^Z >= 2) = P(Z >= 0) = 1/2
        assert!((tail_mass(&spec, 2.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(1) - 2.0).abs() < 1e-12);
        assert!((sphere_area(2) - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!((sphere_area(3) - 4.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn first_exceed_time_definition() {
        let mut noise = sample_noise(&LevyMeasureSpec::none(1), 1, 0.0, 1.0, &unit_grid(), 0).unwrap();
        let m2 = TruncationLevel::new(2.0).unwrap();
        assert_eq!(first_exceed_time(&noise, m2), HittingTime::Never);
        noise.jump_events = vec![
            JumpEvent { time: 0.3, mark: vec![1.5], grid_index: 0 },
            JumpEvent { time: 0.7, mark: vec![-5.0], grid_index: 0 },
        ];
        assert_eq!(first_exceed_time(&noise, m2), HittingTime::At(0.7));
        assert!(HittingTime::At(0.7) < HittingTime::Never);
        assert!(!HittingTime::Never.occurs_by(1e300));
    }

    #[test]
    fn jump_times_are_grid_points() {
        let spec = power_law_large(1.0, 0.5);
        let noise = sample_noise(&spec, 1, 0.0, 1.0, &unit_grid(), 11).unwrap();
        for e in &noise.jump_events {
            assert_eq!(noise.time_grid[e.grid_index], e.time);
            assert!(e.size() >= 1.0);
        }
        assert_eq!(noise.brownian_increments.len(), noise.intervals());
    }

    #[test]
    fn base_grid_snaps_extra_times() {
        let g = base_grid(0.0, 1.0, 1.0 / 48.0, &[1.0 / 3.0, 2.0 / 3.0, 0.1]).unwrap();
        assert!(g.contains(&(1.0 / 3.0)));
        assert!(g.contains(&(2.0 / 3.0)));
        assert!(g.contains(&0.1));
        assert_eq!(g.len(), 50);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*g.last().unwrap(), 1.0);
    }

    #[test]
    fn compensator_zero_without_small_part_and_odd_gamma() {
        assert!(small_jump_compensator(&LevyMeasureSpec::none(1)).is_zero());
        let spec = LevyMeasureSpec {
            jump_dim: 1,
            small: SmallJumps::PowerLaw { c: 1.0, alpha: 0.5 },
            large: LargeJumps::None,
            small_cutoff: 0.25,
            gaussian_remainder: false,
        };
        let comp = small_jump_compensator(&spec);
        assert_eq!(comp.integrate(|eta| eta[0]), 0.0);
        assert!((comp.total_weight() - spec.band_rate()).abs() < 1e-12);
    }

    /// Independent oracle: composite Simpson on the radial density directly.
    fn simpson_band_integral(c: f64, alpha: f64, lo: f64, g: impl Fn(f64) -> f64) -> f64 {
        let n = 200_000;
        let h = (1.0 - lo) / n as f64;
        let f = |r: f64| 2.0 * c * g(r) * r.powf(-1.0 - alpha);
        let mut acc = f(lo) + f(1.0);
        for i in 1..n {
            let r = lo + h * i as f64;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(r);
        }
        acc * h / 3.0
    }

    #[test]
    fn compensator_matches_quadrature_oracle() {
        let spec = LevyMeasureSpec {
            jump_dim: 1,
            small: SmallJumps::PowerLaw { c: 1.0, alpha: 0.5 },
            large: LargeJumps::None,
            small_cutoff: 0.25,
            gaussian_remainder: false,
        };
        let oracle = simpson_band_integral(1.0, 0.5, 0.25, |r| r);
        // 2∫_{1/4}^{1} η^{-1/2} dη = 2
        assert!((oracle - 2.0).abs() < 1e-9);
        let comp = small_jump_compensator(&spec);
        let got = comp.integrate(|eta| eta[0].abs());
        assert!((got - 2.0).abs() < 1e-10, "{got}");
        let oracle_sq = simpson_band_integral(1.0, 0.5, 0.25, |r| r * r);
        assert!((comp.integrate(|eta| eta[0] * eta[0]) - oracle_sq).abs() < 1e-9);
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let spec = power_law_large(1.0, 0.5);
        let a = sample_noise(&spec, 1, 0.0, 1.0, &unit_grid(), 99).unwrap();
        let b = sample_noise(&spec, 1, 0.0, 1.0, &unit_grid(), 99).unwrap();
        assert_eq!(a, b);
        let c = sample_noise(&spec, 1, 0.0, 1.0, &unit_grid(), 100).unwrap();
        assert_ne!(a, c);
    }
}
