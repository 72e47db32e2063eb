use levydp::control::ControlPolicy;
use levydp::harness::{check_dpp, InnerMode, Tolerances};
use levydp::registry::{self, ProblemOptions};
use levydp::value::{payoff_table, revenue, value, DiscreteStop};

fn pure_jump(stages: usize) -> levydp::harness::Problem {
    registry::build("pure-jump", &ProblemOptions { stages, ..ProblemOptions::default() }).unwrap()
}

/// Discrete Markov policy equivalent to a lattice feedback policy.
fn as_discrete<'a>(policy: &'a ControlPolicy, actions: &'a [f64]) -> impl Fn(usize, f64) -> usize + 'a {
    let ControlPolicy::LatticeFeedback(fb) = policy else { panic!("expected feedback") };
    let index = move |a: &[f64]| actions.iter().position(|&v| v == a[0]).unwrap();
    move |k, x| {
        if k == 0 {
            index(&fb.first)
        } else {
            index(&fb.palette[fb.tables[k - 1][fb.lattice.locate_clamped(&[x])]])
        }
    }
}

#[test]
fn lattice_policy_revenues_match_exact_values() {
    let problem = pure_jump(2);
    let d = problem.discrete.as_ref().unwrap();
    let policies = problem.policies().unwrap();
    let table =
        payoff_table(&problem.model, &policies, 0.0, &problem.x0, 1.0, 4000, 17, None).unwrap();
    let mut worst: f64 = 0.0;
    for (j, p) in policies.iter().enumerate() {
        let exact = d.policy_value(&as_discrete(p, &d.actions));
        let est = table.estimate(j).unwrap();
        let z = (est.mean - exact).abs() / est.std_error.max(1e-12);
        worst = worst.max(z);
    }
    // 32 policies, shared paths: a 4.5 SE envelope keeps the family-wise error small
    assert!(worst < 4.5, "worst z-score {worst}");
}

#[test]
fn family_value_matches_the_dynamic_program() {
    let problem = pure_jump(2);
    let d = problem.discrete.as_ref().unwrap();
    let exact = d.dp_oracle().unwrap().value(0, d.x0).unwrap();
    assert!((exact - d.brute_force_value()).abs() < 1e-12);
    let policies = problem.policies().unwrap();
    let (est, _) = value(&problem.model, &policies, 0.0, &problem.x0, 1.0, 10_000, 23, None).unwrap();
    // the maximum over 32 estimates is biased upward by at most sqrt(2 ln 32) standard errors
    let allowance = (2.0 * (policies.len() as f64).ln()).sqrt() * est.std_error;
    assert!(est.mean - exact < 3.0 * est.std_error + allowance, "{} vs {exact}", est.mean);
    assert!(exact - est.mean < 3.0 * est.std_error, "{} vs {exact}", est.mean);
}

#[test]
fn oracle_mode_dpp_holds_on_pure_jump() {
    let problem = pure_jump(2);
    let tau = problem.tau_rules[0];
    let reports = check_dpp(&problem, tau, 4000, InnerMode::Oracle, None, 29, &Tolerances::default()).unwrap();
    for r in reports.all() {
        assert!(r.pass, "{} failed: {:?}", r.check, r.notes);
    }
}

#[test]
fn exact_identity_holds_at_every_stop() {
    let problem = pure_jump(3);
    let d = problem.discrete.as_ref().unwrap();
    let table = d.dp_oracle().unwrap();
    let v = table.value(0, d.x0).unwrap();
    for stop in [DiscreteStop::Stage(1), DiscreteStop::Stage(2), DiscreteStop::FirstNonzeroOutcome] {
        let rhs = d.dpp_rhs(&table, stop).unwrap();
        assert!((v - rhs).abs() < 1e-12, "{stop:?}: {v} vs {rhs}");
    }
}

#[test]
fn sign_drift_values_are_deterministic() {
    let problem = registry::build("controlled-sign-drift", &ProblemOptions::default()).unwrap();
    let down = ControlPolicy::Constant(vec![-1.0]);
    let up = ControlPolicy::Constant(vec![1.0]);
    for (t0, x) in [(0.0, -0.25), (0.4, 0.3), (0.9, -2.0)] {
        let r_down = revenue(&problem.model, &down, t0, &[x], 1.0, 4, 1, None).unwrap();
        let r_up = revenue(&problem.model, &up, t0, &[x], 1.0, 4, 1, None).unwrap();
        assert!((r_down.mean - (x - (1.0 - t0)).tanh()).abs() < 1e-12);
        assert!((r_up.mean - (x + (1.0 - t0)).tanh()).abs() < 1e-12);
        assert_eq!(r_up.std_error, 0.0);
    }
}

#[test]
fn truncated_value_on_bounded_noise_equals_the_untruncated_one() {
    // marks are 1, so any level above 1 never bites
    let problem = pure_jump(2);
    let policies = problem.policies().unwrap();
    let m = levydp::levy_noise::TruncationLevel::new(1.5).unwrap();
    let a = payoff_table(&problem.model, &policies, 0.0, &problem.x0, 1.0, 200, 3, None).unwrap();
    let b = payoff_table(&problem.model, &policies, 0.0, &problem.x0, 1.0, 200, 3, Some(m)).unwrap();
    assert_eq!(a.payoffs, b.payoffs);
}
