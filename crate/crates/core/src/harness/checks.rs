use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nested::{evaluate_stops, max_bias_allowance, InnerCache, InnerMode, StopValues};
use super::{Category, CheckReport, Measured, Problem, Series, Table, Tolerance, Tolerances};
use crate::control::{ControlPolicy, StoppingRule};
use crate::error::{invalid, Result};
use crate::levy_noise::{
    first_exceed_time, mix_seed, path_seed, tail_mass, HittingTime, LargeJumps, LevyMeasureSpec, NoiseSampler,
    TruncationLevel,
};
use crate::stats::{hill_tail_index, ks_critical_1pct, ks_statistic, SampleMean};
use crate::value::{modulus, payoff_table, DiscreteStop, Partition, PayoffTable};

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn finite_mean(values: &[f64]) -> SampleMean {
    let kept: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    SampleMean::of(&kept)
}

fn paired_diff(a: &[f64], b: &[f64]) -> SampleMean {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    finite_mean(&d)
}

fn levels(m_list: &[f64]) -> Result<Vec<TruncationLevel>> {
    if m_list.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("truncation levels must be strictly increasing"));
    }
    m_list.iter().map(|&m| TruncationLevel::new(m)).collect()
}

/// Empirical `P(τ_M ≤ T)` against `1 − exp(−ν(E_M)(T − s))`.
pub fn check_tau_law(
    spec: &LevyMeasureSpec,
    m_list: &[f64],
    s: f64,
    t_end: f64,
    n_seeds: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<CheckReport> {
    if n_seeds < 1000 {
        return Err(invalid("the hitting-time law check needs at least 1000 seeds"));
    }
    let ms = levels(m_list)?;
    let sampler = NoiseSampler::new(spec.clone(), 0)?;
    let grid = [s, t_end];
    let taus: Vec<Vec<HittingTime>> = (0..n_seeds)
        .into_par_iter()
        .map(|k| -> Result<Vec<HittingTime>> {
            let noise = sampler.sample(s, t_end, &grid, path_seed(seed, k as u64))?;
            Ok(ms.iter().map(|&m| first_exceed_time(&noise, m)).collect())
        })
        .collect::<Result<_>>()?;

    let mut report = CheckReport::new("tau-law", "noise", seed);
    let mut table = Table::new("tau_law", &["M", "tail_mass", "analytic", "empirical", "std_error", "ks", "ks_critical", "ok"]);
    let mut emp_series = Series { name: "empirical".into(), x: vec![], y: vec![], err: vec![] };
    let mut ana_series = Series { name: "analytic".into(), x: vec![], y: vec![], err: vec![] };
    let n = n_seeds as f64;
    let mut pass = true;
    let mut worst: Option<(f64, f64, f64, f64)> = None;
    let mut prev: Option<f64> = None;
    for (i, m) in ms.iter().enumerate() {
        let rate = tail_mass(spec, m.get())?;
        let p = 1.0 - (-rate * (t_end - s)).exp();
        let hits: Vec<f64> = taus.iter().filter_map(|row| match row[i] {
            HittingTime::At(t) if t <= t_end => Some(t),
            _ => None,
        }).collect();
        let emp = hits.len() as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        let gate = tol.se_multiplier * se;
        let mut ok = (emp - p).abs() <= gate;
        if let Some(q) = prev {
            ok &= emp <= q + gate;
        }
        prev = Some(emp);
        let (ks, crit) = if hits.len() >= 2 && rate > 0.0 {
            let norm = p;
            (ks_statistic(&hits, |t| (1.0 - (-rate * (t - s)).exp()) / norm), ks_critical_1pct(hits.len()))
        } else {
            (0.0, f64::NAN)
        };
        pass &= ok;
        let slack = gate - (emp - p).abs();
        if worst.is_none_or(|w| slack < w.0) {
            worst = Some((slack, emp, p, gate));
        }
        table.push(vec![m.get(), rate, p, emp, se, ks, crit, flag(ok)]);
        emp_series.x.push(m.get());
        emp_series.y.push(emp);
        emp_series.err.push(se);
        ana_series.x.push(m.get());
        ana_series.y.push(p);
        ana_series.err.push(0.0);
    }
    if let Some((_, emp, p, gate)) = worst {
        report.lhs = Some(Measured { value: emp, std_error: gate / tol.se_multiplier });
        report.rhs = Some(Measured { value: p, std_error: 0.0 });
        report.tolerance = Tolerance::new(gate, 0.0);
    }
    report.tables.push(table);
    report.series = vec![emp_series, ana_series];
    report.pass = pass;
    report.notes.push(format!("{n_seeds} seeds on [{s}, {t_end}]"));
    Ok(report)
}

/// Truncated and untruncated paths agree bit-for-bit before `τ_M`, and
/// everywhere when `τ_M > T`.
pub fn check_coupling(problem: &Problem, m_list: &[f64], n_paths: usize, seed: u64) -> Result<CheckReport> {
    let ms = levels(m_list)?;
    let policies = problem.policies()?;
    let model = &problem.model;
    let (s, t_end) = (problem.start, problem.horizon);
    let grid = model.grid(s, t_end)?;
    // per path, per M: (tau after T, full match, mismatch)
    let rows: Vec<Vec<(bool, bool)>> = (0..n_paths)
        .into_par_iter()
        .map(|k| -> Result<Vec<(bool, bool)>> {
            let noise = model.sampler.sample(s, t_end, &grid, path_seed(seed, k as u64))?;
            let pol = &policies[k % policies.len()];
            let full = model.simulate(pol, &noise, s, &problem.x0, t_end, None)?;
            ms.iter()
                .map(|&m| {
                    let trunc = model.simulate(pol, &noise, s, &problem.x0, t_end, Some(m))?;
                    Ok(match first_exceed_time(&noise, m) {
                        HittingTime::Never => (true, full.bitwise_eq(&trunc)),
                        HittingTime::At(_) => {
                            let idx = noise.jump_events.iter().find(|e| e.size() >= m.get()).expect("hit").grid_index;
                            let mut same = full.bitwise_prefix_eq(&trunc, idx);
                            if idx < full.len() && idx < trunc.len() {
                                same &= full
                                    .left_limit(idx)
                                    .iter()
                                    .zip(trunc.left_limit(idx))
                                    .all(|(a, b)| a.to_bits() == b.to_bits());
                            }
                            (false, same)
                        }
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut report = CheckReport::new("coupling", &problem.name, seed);
    let mut table = Table::new("coupling", &["M", "paths", "tau_after_T", "mismatches"]);
    let mut total_bad = 0usize;
    for (i, m) in ms.iter().enumerate() {
        let after = rows.iter().filter(|r| r[i].0).count();
        let bad = rows.iter().filter(|r| !r[i].1).count();
        total_bad += bad;
        table.push(vec![m.get(), n_paths as f64, after as f64, bad as f64]);
    }
    report.lhs = Some(Measured { value: total_bad as f64, std_error: 0.0 });
    report.rhs = Some(Measured { value: 0.0, std_error: 0.0 });
    report.tables.push(table);
    report.pass = total_bad == 0;
    report.notes.push("paths compared bitwise; prefix before the first truncated jump when it occurs".into());
    Ok(report)
}

/// `|V^M − V| ≤ 2((T−s) f_bound + h_bound) P(τ_M ≤ T) + gate` per level, plus
/// exact agreement of payoffs on `{τ_M > T}`.
pub fn check_truncation_convergence(
    problem: &Problem,
    m_list: &[f64],
    n_paths: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<CheckReport> {
    let ms = levels(m_list)?;
    let policies = problem.policies()?;
    let model = &problem.model;
    let (s, t_end) = (problem.start, problem.horizon);
    let spec = model.sampler.spec();
    let c = model.cost.payoff_bound(s, t_end);
    let full = payoff_table(model, &policies, s, &problem.x0, t_end, n_paths, seed, None)?;
    let (j_full, v_full) = full.argmax()?;

    let grid = model.grid(s, t_end)?;
    let taus: Vec<Vec<HittingTime>> = (0..n_paths)
        .into_par_iter()
        .map(|k| -> Result<Vec<HittingTime>> {
            let noise = model.sampler.sample(s, t_end, &grid, path_seed(seed, k as u64))?;
            Ok(ms.iter().map(|&m| first_exceed_time(&noise, m)).collect())
        })
        .collect::<Result<_>>()?;

    let mut report = CheckReport::new("truncation", &problem.name, seed);
    let mut table = Table::new(
        "truncation",
        &[
            "M", "tail_mass", "p_tau", "v_m", "se_m", "v", "se", "gap", "se_gap", "bound", "coupled_paths",
            "coupling_mismatches", "ok",
        ],
    );
    let mut gap_series = Series { name: "gap".into(), x: vec![], y: vec![], err: vec![] };
    let mut bound_series = Series { name: "bound".into(), x: vec![], y: vec![], err: vec![] };
    let mut value_series = Series { name: "value".into(), x: vec![], y: vec![], err: vec![] };
    let det = tol.deterministic(problem);
    let mut pass = true;
    let mut worst: Option<(f64, usize)> = None;
    for (i, &m) in ms.iter().enumerate() {
        let t = payoff_table(model, &policies, s, &problem.x0, t_end, n_paths, seed, Some(m))?;
        let (j_m, v_m) = t.argmax()?;
        let diff = paired_diff(t.row(j_m), full.row(j_full));
        let gap = (v_m.mean - v_full.mean).abs();
        let rate = tail_mass(spec, m.get())?;
        let p = 1.0 - (-rate * (t_end - s)).exp();
        let bound = 2.0 * c * p + tol.se_multiplier * diff.std_error + det;
        let coupled: Vec<usize> = (0..n_paths).filter(|&k| !taus[k][i].occurs_by(t_end)).collect();
        let mismatches = coupled
            .iter()
            .filter(|&&k| (0..policies.len()).any(|j| t.row(j)[k].to_bits() != full.row(j)[k].to_bits()))
            .count();
        let ok = gap <= bound && mismatches == 0;
        pass &= ok;
        let slack = bound - gap;
        if worst.is_none_or(|w| slack < w.0) {
            worst = Some((slack, i));
        }
        table.push(vec![
            m.get(),
            rate,
            p,
            v_m.mean,
            v_m.std_error,
            v_full.mean,
            v_full.std_error,
            gap,
            diff.std_error,
            bound,
            coupled.len() as f64,
            mismatches as f64,
            flag(ok),
        ]);
        gap_series.x.push(m.get());
        gap_series.y.push(gap);
        gap_series.err.push(diff.std_error);
        bound_series.x.push(m.get());
        bound_series.y.push(bound);
        bound_series.err.push(0.0);
        value_series.x.push(m.get());
        value_series.y.push(v_m.mean);
        value_series.err.push(v_m.std_error);
    }
    if let Some((_, i)) = worst {
        let row = &table.rows[i];
        report.lhs = Some(Measured { value: row[7], std_error: row[8] });
        report.rhs = Some(Measured { value: 2.0 * c * row[2], std_error: 0.0 });
        report.tolerance = Tolerance::new(tol.se_multiplier * row[8], det);
    }
    report.tables.push(table);
    report.series = vec![gap_series, bound_series, value_series];
    report.pass = pass;
    report.notes.push(format!("payoff bound C = {c}; untruncated value {} ± {}", v_full.mean, v_full.std_error));
    Ok(report)
}

/// Equality, easy-direction and per-policy hard-direction reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DppReports {
    pub equality: CheckReport,
    pub easy: CheckReport,
    pub hard: CheckReport,
}

impl DppReports {
    pub fn all(&self) -> [&CheckReport; 3] {
        [&self.equality, &self.easy, &self.hard]
    }
}

/// Estimates `V(s, x)` and `sup_u E[∫_s^τ f + V(τ, X_τ)]` on shared outer noise.
#[allow(clippy::too_many_arguments)]
pub fn check_dpp(
    problem: &Problem,
    tau: StoppingRule,
    n_outer: usize,
    mode: InnerMode,
    m: Option<TruncationLevel>,
    seed: u64,
    tol: &Tolerances,
) -> Result<DppReports> {
    let policies = problem.policies()?;
    let (s, t_end) = (problem.start, problem.horizon);
    let (lhs, f_start) = match mode {
        InnerMode::Oracle => {
            let mut cache = InnerCache::new(problem, mode, seed, m)?;
            cache.resolve(&[(s, problem.x0.clone())])?;
            let v = cache.get(s, &problem.x0);
            (Measured { value: v.mean, std_error: 0.0 }, 1)
        }
        InnerMode::Nested { .. } => {
            let table = payoff_table(&problem.model, &policies, s, &problem.x0, t_end, n_outer, seed, m)?;
            let (_, est) = table.argmax()?;
            (Measured { value: est.mean, std_error: est.std_error }, policies.len())
        }
    };

    let mut cache = InnerCache::new(problem, mode, seed, m)?;
    struct Side {
        mean: f64,
        se: f64,
        inner_var: f64,
        allowance: f64,
    }
    let mut sides: Vec<Side> = Vec::with_capacity(policies.len());
    evaluate_stops(problem, &policies, &[tau], n_outer, seed, m, &mut cache, |_, sv: StopValues| {
        let est = finite_mean(&sv.g[0]);
        sides.push(Side {
            mean: est.mean,
            se: est.std_error,
            inner_var: sv.inner_var[0],
            allowance: max_bias_allowance(sv.family_max[0], sv.inner_se_mean[0]),
        });
        Ok(())
    })?;

    let det = tol.deterministic(problem);
    let gate_for = |side: &Side| {
        let se = (lhs.std_error.powi(2) + side.se.powi(2) + side.inner_var).sqrt();
        Tolerance::new(tol.se_multiplier * se, det + side.allowance)
    };
    let mut best = 0;
    for (j, side) in sides.iter().enumerate() {
        if side.mean > sides[best].mean {
            best = j;
        }
    }
    let rhs_side = &sides[best];
    let rhs = Measured { value: rhs_side.mean, std_error: (rhs_side.se.powi(2) + rhs_side.inner_var).sqrt() };
    let gate = gate_for(rhs_side);
    let label = tau.label();
    let mode_label = match mode {
        InnerMode::Oracle => "exact inner values".to_string(),
        InnerMode::Nested { n_inner, .. } => format!("nested inner estimates, {n_inner} paths each"),
    };
    let notes = vec![
        format!("tau = {label}; {n_outer} outer paths; {mode_label}"),
        format!("family size {f_start}; maximizing policy index {best}"),
    ];

    let mut equality = CheckReport::new(&format!("dpp[{label}]"), &problem.name, seed);
    equality.lhs = Some(lhs);
    equality.rhs = Some(rhs);
    equality.tolerance = gate;
    equality.pass = (lhs.value - rhs.value).abs() <= gate.total;
    equality.notes = notes.clone();

    let mut easy = CheckReport::new(&format!("dpp-easy[{label}]"), &problem.name, seed);
    easy.lhs = Some(lhs);
    easy.rhs = Some(rhs);
    easy.tolerance = gate;
    easy.pass = lhs.value <= rhs.value + gate.total;
    easy.notes = notes.clone();

    let mut hard = CheckReport::new(&format!("dpp-hard[{label}]"), &problem.name, seed);
    let mut table = Table::new("per_policy", &["policy", "restart_mean", "restart_se", "gate", "holds"]);
    let mut worst: Option<(f64, usize, Tolerance)> = None;
    let mut violations = 0;
    for (j, side) in sides.iter().enumerate() {
        let g = gate_for(side);
        let holds = lhs.value >= side.mean - g.total;
        violations += usize::from(!holds);
        let slack = lhs.value - side.mean + g.total;
        if worst.as_ref().is_none_or(|w| slack < w.0) {
            worst = Some((slack, j, g));
        }
        table.push(vec![j as f64, side.mean, (side.se.powi(2) + side.inner_var).sqrt(), g.total, flag(holds)]);
    }
    if let Some((_, j, g)) = worst {
        hard.lhs = Some(lhs);
        hard.rhs = Some(Measured { value: sides[j].mean, std_error: (sides[j].se.powi(2) + sides[j].inner_var).sqrt() });
        hard.tolerance = g;
    }
    hard.tables.push(table);
    hard.pass = violations == 0;
    hard.notes = notes;
    hard.notes.push(format!("{violations} of {} policies violate V >= restart - gate", sides.len()));
    Ok(DppReports { equality, easy, hard })
}

/// Exact identity on the discrete counterpart, plus brute-force expectimax.
pub fn check_dpp_exact(problem: &Problem, stop: DiscreteStop, tol: &Tolerances) -> Result<CheckReport> {
    let d = problem
        .discrete
        .as_ref()
        .ok_or_else(|| invalid(format!("problem {} has no exact counterpart", problem.name)))?;
    let table = d.dp_oracle()?;
    let lhs = table.value(0, d.x0).expect("root state");
    let rhs = d.dpp_rhs(&table, stop)?;
    let brute = d.brute_force_value();
    let det = tol.rounding * lhs.abs().max(1.0);
    let label = match stop {
        DiscreteStop::Stage(k) => format!("stage-{k}"),
        DiscreteStop::FirstNonzeroOutcome => "first-jump".to_string(),
    };
    let mut report = CheckReport::new(&format!("dpp-exact[{label}]"), &problem.name, 0);
    report.lhs = Some(Measured { value: lhs, std_error: 0.0 });
    report.rhs = Some(Measured { value: rhs, std_error: 0.0 });
    report.tolerance = Tolerance::new(0.0, det);
    let mut t = Table::new("exact", &["lhs", "rhs", "brute_force", "lhs_minus_rhs", "lhs_minus_brute", "nodes"]);
    t.push(vec![lhs, rhs, brute, lhs - rhs, lhs - brute, table.node_count() as f64]);
    report.tables.push(t);
    report.pass = (lhs - rhs).abs() <= det && lhs == brute;
    report.notes.push(format!("{} stages, {} outcomes per stage", d.stages, d.outcomes.len()));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupermartingaleSettings {
    pub time_pairs: Vec<(f64, f64)>,
    pub n_outer: usize,
    pub mode: InnerMode,
    /// Conditioning cells for `X_{t₁}`; cells with fewer paths are skipped.
    pub partition: Option<Partition>,
    pub min_cell_paths: usize,
}

/// `E𝒢(t₂) ≤ E𝒢(t₁) + gate` for every policy, and near-equality for the maximizer,
/// where `𝒢(t) = ∫_s^t f + V^M(t, X^M_t)`.
pub fn check_supermartingale(
    problem: &Problem,
    settings: &SupermartingaleSettings,
    m: Option<TruncationLevel>,
    seed: u64,
    tol: &Tolerances,
) -> Result<CheckReport> {
    let (s, t_end) = (problem.start, problem.horizon);
    for &(a, b) in &settings.time_pairs {
        if !(s <= a && a < b && b < t_end) {
            return Err(invalid(format!("time pair ({a}, {b}) must satisfy s <= t1 < t2 < T")));
        }
    }
    let policies = problem.policies()?;
    let n = settings.n_outer;
    let mut times: Vec<f64> = settings.time_pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let rules: Vec<StoppingRule> = times.iter().map(|&t| StoppingRule::Deterministic { time: t }).collect();
    let pos = |t: f64| times.iter().position(|&x| x == t).expect("listed");

    let lhs_table: PayoffTable = payoff_table(&problem.model, &policies, s, &problem.x0, t_end, n, seed, m)?;
    let (best, _) = lhs_table.argmax()?;
    drop(lhs_table);

    let det = tol.deterministic(problem);
    let d = problem.dim();
    let mut table = Table::new(
        "pairs",
        &["policy", "t1", "t2", "mean_g1", "mean_g2", "diff", "se", "gate", "holds", "is_argmax", "martingale_ok"],
    );
    let mut cond = Table::new("conditional", &["policy", "t1", "t2", "cell", "paths", "diff", "se", "gate", "holds"]);
    let mut cond_checked = 0usize;
    let mut cond_bad = 0usize;
    let mut violations = 0usize;
    let mut martingale_bad = 0usize;
    let mut worst: Option<(f64, Measured, Measured, Tolerance)> = None;

    let mut cache = InnerCache::new(problem, settings.mode, seed, m)?;
    evaluate_stops(problem, &policies, &rules, n, seed, m, &mut cache, |j, sv| {
        for &(t1, t2) in &settings.time_pairs {
            let (i1, i2) = (pos(t1), pos(t2));
            let g1 = &sv.g[i1];
            let g2 = &sv.g[i2];
            let diff = paired_diff(g2, g1);
            let m1 = finite_mean(g1);
            let m2 = finite_mean(g2);
            let se = (diff.std_error.powi(2) + sv.inner_var[i1] + sv.inner_var[i2]).sqrt();
            let allowance = max_bias_allowance(sv.family_max[i1], sv.inner_se_mean[i1])
                + max_bias_allowance(sv.family_max[i2], sv.inner_se_mean[i2]);
            let gate = Tolerance::new(tol.se_multiplier * se, det + allowance);
            let holds = diff.mean <= gate.total;
            violations += usize::from(!holds);
            let is_best = j == best;
            let mart = !is_best || diff.mean.abs() <= gate.total;
            martingale_bad += usize::from(!mart);
            let slack = gate.total - if is_best { diff.mean.abs() } else { diff.mean };
            if worst.as_ref().is_none_or(|w| slack < w.0) {
                worst = Some((
                    slack,
                    Measured { value: m2.mean, std_error: m2.std_error },
                    Measured { value: m1.mean, std_error: m1.std_error },
                    gate,
                ));
            }
            table.push(vec![
                j as f64,
                t1,
                t2,
                m1.mean,
                m2.mean,
                diff.mean,
                se,
                gate.total,
                flag(holds),
                flag(is_best),
                flag(mart),
            ]);

            if let (Some(part), true) = (&settings.partition, t1 > s) {
                let states = &sv.states[i1];
                let mut by_cell: Vec<Vec<f64>> = vec![Vec::new(); part.n_cells()];
                for k in 0..n {
                    let x = &states[k * d..(k + 1) * d];
                    if x.iter().any(|v| v.is_nan()) {
                        continue;
                    }
                    if let Some(c) = part.locate(x) {
                        by_cell[c].push(g2[k] - g1[k]);
                    }
                }
                for (c, diffs) in by_cell.iter().enumerate() {
                    if diffs.len() < settings.min_cell_paths.max(2) {
                        continue;
                    }
                    let e = finite_mean(diffs);
                    let g = tol.se_multiplier * e.std_error + det + allowance;
                    let ok = e.mean <= g;
                    cond_checked += 1;
                    cond_bad += usize::from(!ok);
                    if is_best || !ok {
                        cond.push(vec![j as f64, t1, t2, c as f64, diffs.len() as f64, e.mean, e.std_error, g, flag(ok)]);
                    }
                }
            }
        }
        Ok(())
    })?;

    let mut report = CheckReport::new("supermartingale", &problem.name, seed);
    if let Some((_, l, r, g)) = worst {
        report.lhs = Some(l);
        report.rhs = Some(r);
        report.tolerance = g;
    }
    let mut exact_bad = 0usize;
    if let Some(dp) = &problem.discrete {
        let vt = dp.dp_oracle()?;
        let mut exact = Table::new("exact_bellman", &["stage", "x", "action", "q", "v", "gap"]);
        for k in 0..dp.stages {
            for &(x, v, _) in &vt.layers[k] {
                for (a, q) in dp.q_values(&vt, k, x)?.into_iter().enumerate() {
                    if q > v {
                        exact_bad += 1;
                    }
                    if k == 0 || q > v {
                        exact.push(vec![k as f64, x, a as f64, q, v, q - v]);
                    }
                }
            }
        }
        report.notes.push(format!("exact conditional check on the discrete counterpart: {exact_bad} violations"));
        report.tables.push(exact);
    }
    report.tables.insert(0, table);
    report.tables.push(cond);
    report.pass = violations == 0 && martingale_bad == 0 && exact_bad == 0;
    report.notes.push(format!(
        "{} policies x {} pairs: {violations} supermartingale violations; maximizer {best}: {martingale_bad} martingale gaps",
        policies.len(),
        settings.time_pairs.len()
    ));
    report.notes.push(format!("conditional cells checked {cond_checked}, over gate {cond_bad} (diagnostic)"));
    Ok(report)
}

/// Start `(s, x)` against start `(ŝ, x̂)` with `s ≤ ŝ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncrementCase {
    pub s: f64,
    pub x: f64,
    pub s_hat: f64,
    pub x_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentSettings {
    pub p_list: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub n_paths: usize,
    /// Largest tolerated max/min ratio across the grid.
    pub slack: f64,
    pub increments: Vec<IncrementCase>,
}

fn point(d: usize, x: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[0] = x;
    v
}

fn vnorm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `E sup_t |X^M_t|^p / (1 + |x|^p)` across a grid of starts, and the
/// increment ratio between two coupled starts.
pub fn check_moment_bounds(
    problem: &Problem,
    policy: &ControlPolicy,
    m: TruncationLevel,
    settings: &MomentSettings,
    seed: u64,
) -> Result<CheckReport> {
    if settings.p_list.iter().any(|&p| p < 2.0) {
        return Err(invalid("moment orders must be at least 2"));
    }
    let model = &problem.model;
    let (s0, t_end) = (problem.start, problem.horizon);
    let d = problem.dim();
    let n = settings.n_paths;
    let grid = model.grid(s0, t_end)?;

    let mut report = CheckReport::new("moments", &problem.name, seed);
    let mut table = Table::new("moments", &["p", "x", "e_sup", "se", "ratio"]);
    let mut pass = true;
    let mut spreads = Vec::new();
    // sups[x][path]
    let sups: Vec<Vec<f64>> = settings
        .x_grid
        .iter()
        .map(|&x| {
            let x0 = point(d, x);
            (0..n)
                .into_par_iter()
                .map(|k| -> Result<f64> {
                    let noise = model.sampler.sample(s0, t_end, &grid, path_seed(seed, k as u64))?;
                    let path = model.simulate(policy, &noise, s0, &x0, t_end, Some(m))?;
                    let mut best: f64 = 0.0;
                    for i in 0..path.len() {
                        best = best.max(vnorm(path.value(i))).max(vnorm(path.left_limit(i)));
                    }
                    Ok(if path.diverged() { f64::INFINITY } else { best })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    for &p in &settings.p_list {
        let mut ratios = Vec::new();
        for (i, &x) in settings.x_grid.iter().enumerate() {
            let vals: Vec<f64> = sups[i].iter().map(|v| v.powf(p)).collect();
            let e = SampleMean::of(&vals);
            let ratio = e.mean / (1.0 + x.abs().powf(p));
            ratios.push(ratio);
            table.push(vec![p, x, e.mean, e.std_error, ratio]);
        }
        let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = max / min;
        pass &= ratios.iter().all(|r| r.is_finite() && *r > 0.0) && spread <= settings.slack;
        spreads.push(spread);
    }

    let mut inc = Table::new("increments", &["p", "s", "x", "s_hat", "x_hat", "e_sup", "se", "denominator", "ratio"]);
    for case in &settings.increments {
        if !(case.s <= case.s_hat && case.s >= s0 && case.s_hat < t_end) {
            return Err(invalid("increment cases need s0 <= s <= s_hat < T"));
        }
        let extra: Vec<f64> = model.grid_times.iter().copied().chain([case.s_hat]).collect();
        let g = crate::levy_noise::base_grid(case.s, t_end, model.dt, &extra)?;
        let (xa, xb) = (point(d, case.x), point(d, case.x_hat));
        let sups: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|k| -> Result<f64> {
                let noise = model.sampler.sample(case.s, t_end, &g, path_seed(seed, k as u64))?;
                let a = model.simulate(policy, &noise, case.s, &xa, t_end, Some(m))?;
                let b = model.simulate(policy, &noise, case.s_hat, &xb, t_end, Some(m))?;
                if a.diverged() || b.diverged() {
                    return Ok(f64::INFINITY);
                }
                let offset = a.times.iter().position(|&t| t == case.s_hat).expect("grid point");
                debug_assert_eq!(a.len() - offset, b.len());
                let mut best: f64 = 0.0;
                for i in 0..a.len() {
                    let (bv, bl) = if i < offset { (&xb[..], &xb[..]) } else { (b.value(i - offset), b.left_limit(i - offset)) };
                    let dv: Vec<f64> = a.value(i).iter().zip(bv).map(|(p, q)| p - q).collect();
                    let dl: Vec<f64> = a.left_limit(i).iter().zip(bl).map(|(p, q)| p - q).collect();
                    best = best.max(vnorm(&dv)).max(vnorm(&dl));
                }
                Ok(best)
            })
            .collect::<Result<_>>()?;
        for &p in &settings.p_list {
            let vals: Vec<f64> = sups.iter().map(|v| v.powf(p)).collect();
            let e = SampleMean::of(&vals);
            let den = (case.x - case.x_hat).abs().powf(p) + (1.0 + case.x.abs().powf(p)) * (case.s_hat - case.s);
            let ratio = e.mean / den;
            pass &= ratio.is_finite() && den > 0.0;
            inc.push(vec![p, case.s, case.x, case.s_hat, case.x_hat, e.mean, e.std_error, den, ratio]);
        }
    }
    let fitted = inc.column("ratio").unwrap_or_default().into_iter().fold(0.0, f64::max);
    let max_spread = spreads.iter().copied().fold(0.0, f64::max);
    report.lhs = Some(Measured { value: max_spread, std_error: 0.0 });
    report.rhs = Some(Measured { value: settings.slack, std_error: 0.0 });
    report.tables.push(table);
    report.tables.push(inc);
    report.pass = pass;
    report.notes.push(format!("truncation M = {}; largest max/min ratio spread {max_spread}", m.get()));
    report.notes.push(format!("fitted increment constant {fitted}"));
    Ok(report)
}

/// Tail index of the untruncated terminal state against the jump index.
pub fn heavy_tail_contrast(problem: &Problem, policy: &ControlPolicy, n_samples: usize, seed: u64) -> Result<CheckReport> {
    let alpha = match problem.model.sampler.spec().large {
        LargeJumps::PowerLaw { alpha, .. } => alpha,
        _ => return Err(invalid("the tail-index demonstrator needs a power-law large-jump part")),
    };
    let mut model = problem.model.clone();
    model.guard = 1e300;
    let (s, t_end) = (problem.start, problem.horizon);
    let grid = model.grid(s, t_end)?;
    let terminal: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let noise = model.sampler.sample(s, t_end, &grid, path_seed(seed, k as u64))?;
            let path = model.simulate(policy, &noise, s, &problem.x0, t_end, None)?;
            Ok(if path.diverged() { f64::NAN } else { path.terminal()[0] })
        })
        .collect::<Result<_>>()?;
    let kept: Vec<f64> = terminal.iter().copied().filter(|v| v.is_finite()).collect();
    let k = (kept.len() as f64).sqrt().floor() as usize;
    let hill = hill_tail_index(&kept, k).unwrap_or(f64::NAN);

    let mut report = CheckReport::new("heavy-tail-contrast", &problem.name, seed);
    report.category = Category::Demonstrator;
    let mut moments = Table::new("second_moment", &["n", "mean_square"]);
    let mut series = Series { name: "second_moment".into(), x: vec![], y: vec![], err: vec![] };
    let mut size = kept.len();
    let mut sizes = Vec::new();
    while size >= 100 {
        sizes.push(size);
        size /= 10;
    }
    sizes.reverse();
    for n in sizes {
        let ms = SampleMean::of(&kept[..n].iter().map(|x| x * x).collect::<Vec<_>>());
        moments.push(vec![n as f64, ms.mean]);
        series.x.push(n as f64);
        series.y.push(ms.mean);
        series.err.push(ms.std_error);
    }
    let mut t = Table::new("tail_index", &["samples", "k", "hill", "alpha", "band"]);
    t.push(vec![kept.len() as f64, k as f64, hill, alpha, 0.15]);
    report.lhs = Some(Measured { value: hill, std_error: 0.0 });
    report.rhs = Some(Measured { value: alpha, std_error: 0.0 });
    report.tolerance = Tolerance::new(0.0, 0.15);
    report.pass = (hill - alpha).abs() <= 0.15;
    report.tables = vec![t, moments];
    report.series.push(series);
    report.notes.push("untruncated terminal state; moments of order >= alpha do not exist".into());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuitySettings {
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Policy of the family whose revenue is compared.
    pub policy_index: usize,
    /// Pairs used to fit the constant.
    pub calibration: Vec<IncrementCase>,
    /// Pairs on which the fitted bound is tested.
    pub test: Vec<IncrementCase>,
    pub n_paths: usize,
    pub modulus_samples: usize,
}

/// Fits `C` in `|V(s,x) − V(ŝ,x̂)| ≤ C (ρ(α,β) + (|x−x̂|^p + (1+|x|^p)|s−ŝ|)/α^p +
/// (1+|x|^p+|x̂|^p)/β^p)` on calibration pairs, then tests it on fresh pairs
/// with independent noise, both for one policy's revenue and for the value.
pub fn check_continuity(
    problem: &Problem,
    settings: &ContinuitySettings,
    m: TruncationLevel,
    seed: u64,
    tol: &Tolerances,
) -> Result<CheckReport> {
    let ContinuitySettings { p, alpha, beta, .. } = *settings;
    let policies = problem.policies()?;
    if settings.policy_index >= policies.len() {
        return Err(invalid(format!("policy index {} outside the family", settings.policy_index)));
    }
    let d = problem.dim();
    let rho = modulus(
        &problem.model.cost,
        problem.actions(),
        d,
        (problem.start, problem.horizon),
        alpha,
        beta,
        settings.modulus_samples,
        mix_seed(&[seed, 3]),
    )?;
    let term = |c: &IncrementCase| {
        let xp = c.x.abs().powf(p);
        rho + ((c.x - c.x_hat).abs().powf(p) + (1.0 + xp) * (c.s_hat - c.s).abs()) / alpha.powf(p)
            + (1.0 + xp + c.x_hat.abs().powf(p)) / beta.powf(p)
    };
    // (revenue diff, revenue se, value diff, value se) per pair
    let measure = |cases: &[IncrementCase], seed: u64| -> Result<Vec<[f64; 4]>> {
        cases
            .iter()
            .map(|c| {
                let a = payoff_table(&problem.model, &policies, c.s, &point(d, c.x), problem.horizon, settings.n_paths, seed, Some(m))?;
                let b = payoff_table(
                    &problem.model,
                    &policies,
                    c.s_hat,
                    &point(d, c.x_hat),
                    problem.horizon,
                    settings.n_paths,
                    seed,
                    Some(m),
                )?;
                let (ra, rb) = (a.estimate(settings.policy_index)?, b.estimate(settings.policy_index)?);
                let (va, vb) = (a.argmax()?.1, b.argmax()?.1);
                Ok([
                    (ra.mean - rb.mean).abs(),
                    ra.std_error.hypot(rb.std_error),
                    (va.mean - vb.mean).abs(),
                    va.std_error.hypot(vb.std_error),
                ])
            })
            .collect()
    };
    let calib = measure(&settings.calibration, mix_seed(&[seed, 1]))?;
    let test = measure(&settings.test, mix_seed(&[seed, 2]))?;
    let fit = |col: usize| {
        settings.calibration.iter().zip(&calib).map(|(c, r)| r[col] / term(c)).fold(0.0, f64::max)
    };
    let (c_rev, c_val) = (fit(0), fit(2));

    let mut report = CheckReport::new("continuity", &problem.name, seed);
    let mut table = Table::new(
        "test_pairs",
        &["s", "x", "s_hat", "x_hat", "term", "revenue_gap", "revenue_bound", "value_gap", "value_bound", "holds"],
    );
    let mut violations = 0usize;
    let det = tol.deterministic(problem);
    for (c, r) in settings.test.iter().zip(&test) {
        let t = term(c);
        let rb = c_rev * t + tol.se_multiplier * r[1] + det;
        let vb = c_val * t + tol.se_multiplier * r[3] + det;
        let ok = r[0] <= rb && r[2] <= vb;
        violations += usize::from(!ok);
        table.push(vec![c.s, c.x, c.s_hat, c.x_hat, t, r[0], rb, r[2], vb, flag(ok)]);
    }
    let mut fitted = Table::new("fitted", &["rho", "c_revenue", "c_value", "violations"]);
    fitted.push(vec![rho, c_rev, c_val, violations as f64]);
    report.lhs = Some(Measured { value: c_rev.max(c_val), std_error: 0.0 });
    report.rhs = None;
    report.tables = vec![fitted, table];
    report.pass = c_rev.is_finite() && c_val.is_finite() && violations == 0 && !settings.test.is_empty();
    report.notes.push(format!("p = {p}, alpha = {alpha}, beta = {beta}, M = {}; rho is a sampled lower bound", m.get()));
    Ok(report)
}
