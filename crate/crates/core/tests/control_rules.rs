use levydp::control::{concatenate, ControlPolicy, PathView, StoppingRule};
use levydp::dynamics::AppliedJump;
use levydp::registry::{self, ProblemOptions};
use levydp::value::Partition;
use proptest::prelude::*;

fn lattice_policy() -> ControlPolicy {
    let problem = registry::build("pure-jump", &ProblemOptions::default()).unwrap();
    problem
        .policies()
        .unwrap()
        .into_iter()
        .find(|p| matches!(p, ControlPolicy::LatticeFeedback(fb) if fb.tables.iter().flatten().any(|&i| i == 1)))
        .unwrap()
}

fn jump(time: f64, mark: f64, grid_index: usize) -> AppliedJump {
    AppliedJump { time, mark: vec![mark], grid_index, applied: true }
}

proptest! {
    #[test]
    fn actions_depend_only_on_the_past(values in prop::collection::vec(-1.0f64..4.0, 13), cut in 1usize..13) {
        let times: Vec<f64> = (0..13).map(|i| i as f64 / 12.0).collect();
        let jumps = vec![jump(times[3], 1.0, 3), jump(times[8], -1.0, 8)];
        let full = PathView { start: 0.0, horizon: 1.0, dim: 1, times: &times, values: &values, jumps: &jumps };
        let kept: Vec<AppliedJump> = jumps.iter().filter(|j| j.time < times[cut]).cloned().collect();
        let past = PathView { times: &times[..cut], values: &values[..cut], jumps: &kept, ..full };
        let t = times[cut];
        let policies = [
            lattice_policy(),
            concatenate(ControlPolicy::Constant(vec![0.0]), ControlPolicy::Constant(vec![1.0]), StoppingRule::FirstJump),
            concatenate(
                ControlPolicy::Constant(vec![0.0]),
                ControlPolicy::Constant(vec![1.0]),
                StoppingRule::FirstExit { radius: 2.0 },
            ),
        ];
        for p in &policies {
            prop_assert_eq!(p.evaluate(t, &full).unwrap(), p.evaluate(t, &past).unwrap());
        }
    }

    #[test]
    fn concatenation_is_associative(t1 in 0.05f64..0.5, gap in 0.0f64..0.5, t in 0.0f64..1.0) {
        let t2 = t1 + gap;
        let a = ControlPolicy::Constant(vec![-1.0]);
        let b = ControlPolicy::piecewise(vec![0.3], vec![vec![0.0], vec![0.5]]).unwrap();
        let c = ControlPolicy::Constant(vec![1.0]);
        let r1 = StoppingRule::Deterministic { time: t1 };
        let r2 = StoppingRule::Deterministic { time: t2 };
        let left = concatenate(concatenate(a.clone(), b.clone(), r1), c.clone(), r2);
        let right = concatenate(a, concatenate(b, c, r2), r1);
        let times = [0.0, 1.0];
        let view = PathView { start: 0.0, horizon: 1.0, dim: 1, times: &times, values: &[0.0, 0.0], jumps: &[] };
        prop_assert_eq!(left.evaluate(t, &view).unwrap(), right.evaluate(t, &view).unwrap());
    }
}

#[test]
fn concatenation_switches_strictly_after_tau() {
    let u = concatenate(
        ControlPolicy::Constant(vec![0.0]),
        ControlPolicy::Constant(vec![1.0]),
        StoppingRule::Deterministic { time: 0.5 },
    );
    let times = [0.0, 0.5, 1.0];
    let view = PathView { start: 0.0, horizon: 1.0, dim: 1, times: &times, values: &[0.0; 3], jumps: &[] };
    assert_eq!(u.evaluate(0.5, &view).unwrap(), &[0.0]);
    assert_eq!(u.evaluate(0.5 + 1e-12, &view).unwrap(), &[1.0]);
}

#[test]
fn first_jump_ignores_small_marks() {
    let times = [0.0, 0.25, 0.5, 1.0];
    let jumps = vec![jump(0.25, 0.7, 1), jump(0.5, -1.5, 2)];
    let view = PathView { start: 0.0, horizon: 1.0, dim: 1, times: &times, values: &[0.0; 4], jumps: &jumps };
    assert_eq!(StoppingRule::FirstJump.index_on(&view), Some(2));
    assert!(!StoppingRule::FirstJump.occurred_before(0.5, &view));
    assert!(StoppingRule::FirstJump.occurred_before(0.75, &view));
}

#[test]
fn lattice_feedback_reads_the_opening_state() {
    let lattice = Partition::new(vec![0.0], vec![2.0], vec![2]).unwrap();
    let fb = levydp::control::LatticeFeedback {
        breaks: vec![0.5],
        first: vec![0.0],
        lattice,
        palette: vec![vec![-1.0], vec![1.0]],
        tables: vec![vec![0, 1]],
    };
    let u = ControlPolicy::LatticeFeedback(fb);
    let times = [0.0, 0.5, 0.75, 1.0];
    // state crosses cells after the breakpoint; the action must not follow it
    let values = [0.0, 1.5, 0.2, 0.2];
    let view = PathView { start: 0.0, horizon: 1.0, dim: 1, times: &times, values: &values, jumps: &[] };
    assert_eq!(u.evaluate(0.25, &view).unwrap(), &[0.0]);
    assert_eq!(u.evaluate(0.8, &view).unwrap(), &[1.0]);
    assert_eq!(u.evaluate(1.0, &view).unwrap(), &[1.0]);
}

#[test]
fn evaluation_outside_the_horizon_is_an_error() {
    let times = [0.0, 1.0];
    let view = PathView { start: 0.0, horizon: 1.0, dim: 1, times: &times, values: &[0.0, 0.0], jumps: &[] };
    assert!(ControlPolicy::Constant(vec![0.0]).evaluate(1.5, &view).is_err());
}
