//! Config-driven runner: simulate paths, estimate values, verify properties.

pub mod config;
pub mod output;

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use levydp::control::ControlPolicy;
use levydp::harness::{
    check_continuity, check_coupling, check_dpp, check_dpp_exact, check_moment_bounds, check_supermartingale,
    check_tau_law, check_truncation_convergence, heavy_tail_contrast, CheckReport, ContinuitySettings,
    IncrementCase, MomentSettings, Problem, SupermartingaleSettings,
};
use levydp::levy_noise::{mix_seed, path_seed, LargeJumps, TruncationLevel};
use levydp::registry;
use levydp::value::{value, write_value_csv, DiscreteStop, Partition, ValueRow};

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error(transparent)]
    Core(#[from] levydp::Error),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Which {
    Dpp,
    Truncation,
    Supermartingale,
    Moments,
    TauLaw,
    Continuity,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Value,
    Verify(Which),
}

/// What a run produced: summary lines and whether every counted check passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub ok: bool,
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem, CliError> {
    let p = registry::build(&cfg.problem, &cfg.problem_options())?;
    p.validate()?;
    Ok(p)
}

/// Runs `cmd` on a pool of `workers` threads; outputs do not depend on `workers`.
pub fn run_with_workers(cmd: Command, cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<Outcome, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    pool.install(|| run(cmd, cfg, out))
}

pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    std::fs::create_dir_all(out)?;
    let problem = build_problem(cfg)?;
    match cmd {
        Command::Simulate => simulate(cfg, &problem, out),
        Command::Value => values(cfg, &problem, out),
        Command::Verify(which) => {
            let reports = verify(cfg, &problem, which)?;
            output::write_reports(&reports, out)?;
            Ok(Outcome {
                lines: reports.iter().map(output::summary_line).collect(),
                ok: reports.iter().all(|r| !r.counts_as_failure()),
            })
        }
    }
}

fn simulate(cfg: &ExperimentConfig, problem: &Problem, out: &Path) -> Result<Outcome, CliError> {
    let policies = problem.policies()?;
    let policy = policies.get(cfg.simulate.policy).ok_or_else(|| {
        CliError::Config(vec![format!("simulate.policy: index {} outside a family of {}", cfg.simulate.policy, policies.len())])
    })?;
    let model = &problem.model;
    let (s, t) = (problem.start, problem.horizon);
    let d = problem.dim();
    let m = problem.truncation;
    let mut w = BufWriter::new(File::create(out.join("paths.csv"))?);
    let mut header = String::from("path,step,t");
    for prefix in ["x", "x_m"] {
        for i in 0..d {
            if d == 1 {
                write!(header, ",{prefix}").unwrap();
            } else {
                write!(header, ",{prefix}{i}").unwrap();
            }
        }
    }
    writeln!(w, "{header}")?;
    let mut diverged = 0;
    for k in 0..cfg.simulate.n_paths {
        let noise = model.noise(s, t, path_seed(cfg.seed, k as u64))?;
        let full = model.simulate(policy, &noise, s, &problem.x0, t, None)?;
        let trunc = model.simulate(policy, &noise, s, &problem.x0, t, m)?;
        diverged += usize::from(full.diverged()) + usize::from(trunc.diverged());
        for i in 0..full.len().max(trunc.len()) {
            let time = if i < full.len() { full.times[i] } else { trunc.times[i] };
            let mut line = format!("{k},{i},{time}");
            for p in [&full, &trunc] {
                for j in 0..d {
                    if i < p.len() {
                        write!(line, ",{}", p.value(i)[j]).unwrap();
                    } else {
                        line.push(',');
                    }
                }
            }
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;
    let m_label = m.map_or("inf".to_string(), |m| m.get().to_string());
    Ok(Outcome {
        lines: vec![format!(
            "wrote {} paths (untruncated and M = {m_label}) to paths.csv; {diverged} diverged",
            cfg.simulate.n_paths
        )],
        ok: true,
    })
}

fn values(cfg: &ExperimentConfig, problem: &Problem, out: &Path) -> Result<Outcome, CliError> {
    let policies = problem.policies()?;
    let xs = cfg.value.x_grid.clone().unwrap_or_else(|| vec![problem.x0[0]]);
    let mut levels: Vec<Option<TruncationLevel>> = vec![None];
    for &m in &cfg.m_list {
        levels.push(Some(TruncationLevel::new(m)?));
    }
    let mut rows = Vec::new();
    for &x in &xs {
        let mut state = problem.x0.clone();
        state[0] = x;
        for &m in &levels {
            let (estimate, policy_id) =
                value(&problem.model, &policies, problem.start, &state, problem.horizon, cfg.value.n_paths, cfg.seed, m)?;
            rows.push(ValueRow { s: problem.start, x: state.clone(), policy_id, estimate });
        }
    }
    let mut w = BufWriter::new(File::create(out.join("values.csv"))?);
    write_value_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(Outcome { lines: vec![format!("wrote {} value rows to values.csv", rows.len())], ok: true })
}

fn seed_for(cfg: &ExperimentConfig, tag: u64) -> u64 {
    mix_seed(&[cfg.seed, tag])
}

fn default_increments(s: f64, t: f64) -> Vec<IncrementCase> {
    let span = t - s;
    let mut out = Vec::new();
    for (x, x_hat) in [(0.0, 0.5), (1.0, 1.5), (4.0, 3.0)] {
        for (a, b) in [(0.0, 0.25), (0.25, 0.5), (0.0, 0.5)] {
            out.push(IncrementCase { s: s + a * span, x, s_hat: s + b * span, x_hat });
        }
    }
    out
}

/// Largest test displacements, on a grid of starts that brackets the test pairs.
fn default_calibration(s: f64, t: f64) -> Vec<IncrementCase> {
    let span = t - s;
    let mut out = Vec::new();
    for ds in [0.0, 0.15] {
        for i in 0..12 {
            let x = -1.2 + 0.3 * i as f64;
            out.push(IncrementCase { s, x, s_hat: s + ds * span, x_hat: x + 0.3 });
        }
    }
    out
}

fn default_test_pairs(s: f64, t: f64) -> Vec<IncrementCase> {
    let span = t - s;
    (0..10)
        .map(|i| {
            let f = i as f64;
            let x = -1.0 + 0.3 * f;
            IncrementCase { s, x, s_hat: s + 0.05 * span * (f % 4.0), x_hat: x + 0.1 * (1.0 + f % 3.0) }
        })
        .collect()
}

fn truncation_of(problem: &Problem) -> Result<TruncationLevel, CliError> {
    problem
        .truncation
        .ok_or_else(|| CliError::Config(vec!["truncation: the moment and continuity checks need a finite level".into()]))
}

pub fn verify(cfg: &ExperimentConfig, problem: &Problem, which: Which) -> Result<Vec<CheckReport>, CliError> {
    let tol = &cfg.tolerances;
    let all = which == Which::All;
    let (s, t) = (problem.start, problem.horizon);
    let mut reports = Vec::new();

    if all || which == Which::TauLaw {
        let spec = problem.model.sampler.spec();
        reports.push(check_tau_law(spec, &cfg.m_list, s, t, cfg.n_seeds, seed_for(cfg, 1), tol)?);
    }
    if all || which == Which::Truncation {
        reports.push(check_coupling(problem, &cfg.m_list, cfg.n_paths, seed_for(cfg, 2))?);
        reports.push(check_truncation_convergence(problem, &cfg.m_list, cfg.n_paths, seed_for(cfg, 3), tol)?);
    }
    if all || which == Which::Dpp {
        if let Some(d) = &problem.discrete {
            for k in 1..d.stages {
                reports.push(check_dpp_exact(problem, DiscreteStop::Stage(k), tol)?);
            }
            reports.push(check_dpp_exact(problem, DiscreteStop::FirstNonzeroOutcome, tol)?);
        }
        let m = if cfg.dpp.truncated { problem.truncation } else { None };
        for &tau in &problem.tau_rules {
            let r = check_dpp(problem, tau, cfg.dpp.n_outer, cfg.dpp.inner, m, seed_for(cfg, 4), tol)?;
            reports.extend([r.equality, r.easy, r.hard]);
        }
    }
    if all || which == Which::Supermartingale {
        let partition = match cfg.supermartingale.cells {
            Some((lo, hi, n)) if problem.dim() == 1 => Some(Partition::new(vec![lo], vec![hi], vec![n])?),
            Some(_) => return Err(CliError::Config(vec!["supermartingale.cells: only one-dimensional states".into()])),
            None => None,
        };
        let settings = SupermartingaleSettings {
            time_pairs: problem.time_pairs.clone(),
            n_outer: cfg.supermartingale.n_outer,
            mode: cfg.supermartingale.inner,
            partition,
            min_cell_paths: cfg.supermartingale.min_cell_paths,
        };
        reports.push(check_supermartingale(problem, &settings, problem.truncation, seed_for(cfg, 5), tol)?);
    }
    if all || which == Which::Moments {
        let m = truncation_of(problem)?;
        let action = match &cfg.moments.action {
            Some(a) => a.clone(),
            None => problem.actions().points().last().expect("non-empty action set").clone(),
        };
        let policy = ControlPolicy::Constant(action);
        let increments =
            if cfg.moments.increments.is_empty() { default_increments(s, t) } else { cfg.moments.increments.clone() };
        let settings = MomentSettings {
            p_list: cfg.moments.p_list.clone(),
            x_grid: cfg.moments.x_grid.clone(),
            n_paths: cfg.moments.n_paths,
            slack: cfg.moments.slack.unwrap_or(problem.moment_slack),
            increments,
        };
        reports.push(check_moment_bounds(problem, &policy, m, &settings, seed_for(cfg, 6))?);
        if matches!(problem.model.sampler.spec().large, LargeJumps::PowerLaw { .. }) {
            reports.push(heavy_tail_contrast(problem, &policy, cfg.moments.tail_samples, seed_for(cfg, 7))?);
        }
    }
    if all || which == Which::Continuity {
        let m = truncation_of(problem)?;
        let c = &cfg.continuity;
        let settings = ContinuitySettings {
            p: c.p,
            alpha: c.alpha,
            beta: c.beta,
            policy_index: c.policy,
            calibration: if c.calibration.is_empty() { default_calibration(s, t) } else { c.calibration.clone() },
            test: if c.test.is_empty() { default_test_pairs(s, t) } else { c.test.clone() },
            n_paths: c.n_paths,
            modulus_samples: c.modulus_samples,
        };
        reports.push(check_continuity(problem, &settings, m, seed_for(cfg, 8), tol)?);
    }
    Ok(reports)
}
