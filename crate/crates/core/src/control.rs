//! Admissible controls as evaluable, predictable policies.
//!
//! A policy is evaluated at time `t` against a [`PathView`] and reads only the
//! part of the history strictly before `t`. Piecewise-constant actions are held
//! on `(break_i, break_{i+1}]`, so they switch strictly after a breakpoint.

use serde::{Deserialize, Serialize};

use crate::dynamics::AppliedJump;
use crate::error::{invalid, Error, Result};
use crate::value::Partition;

/// Compact action set `A ⊂ ℝ^ℓ`, materialised as a finite grid of actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionSetKind {
    FiniteGrid { actions: Vec<Vec<f64>> },
    Box { lower: Vec<f64>, upper: Vec<f64>, resolution: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    kind: ActionSetKind,
    points: Vec<Vec<f64>>,
}

impl ActionSet {
    pub fn new(kind: ActionSetKind) -> Result<Self> {
        let points = match &kind {
            ActionSetKind::FiniteGrid { actions } => {
                if actions.is_empty() {
                    return Err(invalid("action set is empty"));
                }
                let l = actions[0].len();
                if l == 0 || actions.iter().any(|a| a.len() != l || a.iter().any(|v| !v.is_finite())) {
                    return Err(invalid("actions must be finite vectors of one positive dimension"));
                }
                actions.clone()
            }
            ActionSetKind::Box { lower, upper, resolution } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(invalid("box action set: lower/upper dimension mismatch"));
                }
                if lower.iter().zip(upper).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
                    return Err(invalid("box action set: need finite lower <= upper"));
                }
                if *resolution == 0 {
                    return Err(invalid("box action set: resolution must be positive"));
                }
                box_grid(lower, upper, *resolution)
            }
        };
        Ok(ActionSet { kind, points })
    }

    pub fn finite_grid(actions: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(ActionSetKind::FiniteGrid { actions })
    }

    /// Scalar action set from a list of values.
    pub fn scalars(values: &[f64]) -> Result<Self> {
        Self::finite_grid(values.iter().map(|v| vec![*v]).collect())
    }

    pub fn kind(&self) -> &ActionSetKind {
        &self.kind
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn action_dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        match &self.kind {
            ActionSetKind::FiniteGrid { actions } => actions.iter().any(|p| p.as_slice() == a),
            ActionSetKind::Box { lower, upper, .. } => {
                a.len() == lower.len() && a.iter().zip(lower.iter().zip(upper)).all(|(v, (lo, hi))| lo <= v && v <= hi)
            }
        }
    }
}

fn box_grid(lower: &[f64], upper: &[f64], resolution: usize) -> Vec<Vec<f64>> {
    let axis: Vec<Vec<f64>> = lower
        .iter()
        .zip(upper)
        .map(|(lo, hi)| {
            if resolution == 1 || lo == hi {
                vec![*lo]
            } else {
                (0..resolution)
                    .map(|k| {
                        let v = lo + (hi - lo) * (k as f64 / (resolution - 1) as f64);
                        if k == resolution - 1 { *hi } else { v }
                    })
                    .collect()
            }
        })
        .collect();
    let mut out = vec![Vec::new()];
    for values in &axis {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Read-only view of a path up to (and possibly beyond) the evaluation time.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    pub start: f64,
    pub horizon: f64,
    pub dim: usize,
    pub times: &'a [f64],
    /// Row-major `times.len() × dim` state values (after jumps).
    pub values: &'a [f64],
    pub jumps: &'a [AppliedJump],
}

impl<'a> PathView<'a> {
    pub fn state(&self, i: usize) -> &'a [f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// State at the last recorded time `≤ t`.
    pub fn state_at(&self, t: f64) -> Option<&'a [f64]> {
        let pos = self.times.partition_point(|&g| g <= t);
        (pos > 0).then(|| self.state(pos - 1))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Stopping times evaluable from the path history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum StoppingRule {
    Deterministic { time: f64 },
    /// First jump of the large-jump process, `|η| ≥ 1`.
    FirstJump,
    /// First jump with `|η| ≥ level`.
    FirstExceedance { level: f64 },
    /// First time `|X| ≥ radius`.
    FirstExit { radius: f64 },
}

impl StoppingRule {
    /// Whether the stopping time is strictly before `t`, using history before `t` only.
    pub fn occurred_before(&self, t: f64, view: &PathView) -> bool {
        match *self {
            StoppingRule::Deterministic { time } => time < t,
            StoppingRule::FirstJump => view.jumps.iter().any(|j| j.time < t && j.size() >= 1.0),
            StoppingRule::FirstExceedance { level } => {
                view.jumps.iter().any(|j| j.time < t && j.size() >= level)
            }
            StoppingRule::FirstExit { radius } => view
                .times
                .iter()
                .enumerate()
                .take_while(|(_, &g)| g < t)
                .any(|(i, _)| norm(view.state(i)) >= radius),
        }
    }

    /// Grid index on a complete path at which the stopping time occurs, if
    /// it occurs within the path.
    pub fn index_on(&self, view: &PathView) -> Option<usize> {
        match *self {
            StoppingRule::Deterministic { time } => {
                let pos = view.times.partition_point(|&g| g < time);
                (pos < view.times.len()).then_some(pos)
            }
            StoppingRule::FirstJump => view.jumps.iter().find(|j| j.size() >= 1.0).map(|j| j.grid_index),
            StoppingRule::FirstExceedance { level } => {
                view.jumps.iter().find(|j| j.size() >= level).map(|j| j.grid_index)
            }
            StoppingRule::FirstExit { radius } => {
                (0..view.times.len()).find(|&i| norm(view.state(i)) >= radius)
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            StoppingRule::Deterministic { time } => format!("t={time}"),
            StoppingRule::FirstJump => "first-jump".to_string(),
            StoppingRule::FirstExceedance { level } => format!("tau_M(M={level})"),
            StoppingRule::FirstExit { radius } => format!("exit(R={radius})"),
        }
    }
}

/// Feedback on the state at the opening breakpoint of each segment.
///
/// On `(s, break_0]` the action is `first`; on `(break_i, break_{i+1}]` it is
/// `palette[tables[i][cell]]`, where `cell` is the lattice box containing the
/// state at `break_i`. Points outside the lattice use the nearest edge box.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeFeedback {
    pub breaks: Vec<f64>,
    pub first: Vec<f64>,
    pub lattice: Partition,
    pub palette: Vec<Vec<f64>>,
    pub tables: Vec<Vec<usize>>,
}

/// An admissible control.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlPolicy {
    Constant(Vec<f64>),
    /// `actions[i]` on `(breaks[i-1], breaks[i]]`, `actions.len() == breaks.len() + 1`.
    PiecewiseConstant { breaks: Vec<f64>, actions: Vec<Vec<f64>> },
    LatticeFeedback(LatticeFeedback),
    /// `first` on `[s, τ]`, `second` on `(τ, T]`.
    Concatenated { first: Box<ControlPolicy>, second: Box<ControlPolicy>, switch: StoppingRule },
}

impl ControlPolicy {
    pub fn piecewise(breaks: Vec<f64>, actions: Vec<Vec<f64>>) -> Result<Self> {
        if actions.len() != breaks.len() + 1 {
            return Err(invalid("piecewise policy needs one more action than breakpoints"));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("breakpoints must be strictly increasing"));
        }
        Ok(ControlPolicy::PiecewiseConstant { breaks, actions })
    }

    /// The action in force at time `t`.
    pub fn evaluate<'p>(&'p self, t: f64, view: &PathView) -> Result<&'p [f64]> {
        if !(t >= view.start && t <= view.horizon) {
            return Err(invalid(format!("evaluation time {t} outside [{}, {}]", view.start, view.horizon)));
        }
        Ok(self.eval_unchecked(t, view))
    }

    pub(crate) fn eval_unchecked<'p>(&'p self, t: f64, view: &PathView) -> &'p [f64] {
        match self {
            ControlPolicy::Constant(a) => a,
            ControlPolicy::PiecewiseConstant { breaks, actions } => {
                &actions[breaks.partition_point(|&b| b < t)]
            }
            ControlPolicy::LatticeFeedback(fb) => {
                let seg = fb.breaks.partition_point(|&b| b < t);
                if seg == 0 {
                    return &fb.first;
                }
                let opening = fb.breaks[seg - 1];
                let cell = match view.state_at(opening) {
                    Some(x) => fb.lattice.locate_clamped(x),
                    None => 0,
                };
                &fb.palette[fb.tables[seg - 1][cell]]
            }
            ControlPolicy::Concatenated { first, second, switch } => {
                if switch.occurred_before(t, view) {
                    second.eval_unchecked(t, view)
                } else {
                    first.eval_unchecked(t, view)
                }
            }
        }
    }

    /// Every action the policy can emit.
    pub fn action_range(&self) -> Vec<&[f64]> {
        match self {
            ControlPolicy::Constant(a) => vec![a.as_slice()],
            ControlPolicy::PiecewiseConstant { actions, .. } => actions.iter().map(|a| a.as_slice()).collect(),
            ControlPolicy::LatticeFeedback(fb) => std::iter::once(fb.first.as_slice())
                .chain(fb.palette.iter().map(|a| a.as_slice()))
                .collect(),
            ControlPolicy::Concatenated { first, second, .. } => {
                let mut v = first.action_range();
                v.extend(second.action_range());
                v
            }
        }
    }

    /// Breakpoints where the policy may switch deterministically.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            ControlPolicy::Constant(_) => Vec::new(),
            ControlPolicy::PiecewiseConstant { breaks, .. } => breaks.clone(),
            ControlPolicy::LatticeFeedback(fb) => fb.breaks.clone(),
            ControlPolicy::Concatenated { first, second, switch } => {
                let mut v = first.breakpoints();
                v.extend(second.breakpoints());
                if let StoppingRule::Deterministic { time } = switch {
                    v.push(*time);
                }
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            }
        }
    }
}

/// `û = u on [s, τ]`, `ũ on (τ, T]`.
pub fn concatenate(u: ControlPolicy, u_tilde: ControlPolicy, tau: StoppingRule) -> ControlPolicy {
    ControlPolicy::Concatenated { first: Box::new(u), second: Box::new(u_tilde), switch: tau }
}

/// Finite stand-in for the admissible set: piecewise-constant actions on the
/// segments cut by `breaks`, with optional feedback on a state lattice for every
/// segment after the first.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilySpec {
    pub actions: ActionSet,
    pub breaks: Vec<f64>,
    pub lattice: Option<Partition>,
}

impl FamilySpec {
    fn breaks_after(&self, t0: f64) -> Vec<f64> {
        self.breaks.iter().copied().filter(|&b| b > t0).collect()
    }

    /// Number of policies available from time `t0`.
    pub fn size_from(&self, t0: f64) -> f64 {
        family_size(self.actions.len(), self.breaks_after(t0).len(), self.lattice.as_ref())
    }

    /// The family restricted to `[t0, T]`: only breakpoints after `t0` remain.
    pub fn enumerate_from(&self, t0: f64, cap: usize) -> Result<Vec<ControlPolicy>> {
        enumerate_policies(&self.actions, &self.breaks_after(t0), self.lattice.as_ref(), cap)
    }
}

fn family_size(n_actions: usize, n_breaks: usize, lattice: Option<&Partition>) -> f64 {
    let a = n_actions as f64;
    match lattice {
        None => a.powi(n_breaks as i32 + 1),
        Some(p) => a * a.powf((p.n_cells() * n_breaks) as f64),
    }
}

/// All piecewise-constant (and, with a lattice, feedback) policies on the
/// segments cut by `breaks`. Errors when the family exceeds `cap`.
pub fn enumerate_policies(
    action_set: &ActionSet,
    breaks: &[f64],
    feedback_lattice: Option<&Partition>,
    cap: usize,
) -> Result<Vec<ControlPolicy>> {
    if breaks.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("breakpoints must be strictly increasing"));
    }
    let size = family_size(action_set.len(), breaks.len(), feedback_lattice);
    if !(size <= cap as f64) {
        return Err(Error::TooLarge { what: "policy family", size, cap });
    }
    let n = action_set.len();
    let points = action_set.points();
    let size = size as usize;
    let mut out = Vec::with_capacity(size);
    match feedback_lattice {
        None => {
            for id in 0..size {
                let mut rest = id;
                let actions = (0..=breaks.len())
                    .map(|_| {
                        let a = points[rest % n].clone();
                        rest /= n;
                        a
                    })
                    .collect();
                out.push(ControlPolicy::PiecewiseConstant { breaks: breaks.to_vec(), actions });
            }
        }
        Some(lattice) => {
            let cells = lattice.n_cells();
            for id in 0..size {
                let mut rest = id;
                let first = points[rest % n].clone();
                rest /= n;
                let tables = (0..breaks.len())
                    .map(|_| {
                        (0..cells)
                            .map(|_| {
                                let k = rest % n;
                                rest /= n;
                                k
                            })
                            .collect()
                    })
                    .collect();
                out.push(ControlPolicy::LatticeFeedback(LatticeFeedback {
                    breaks: breaks.to_vec(),
                    first,
                    lattice: lattice.clone(),
                    palette: points.to_vec(),
                    tables,
                }));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view<'a>(times: &'a [f64], values: &'a [f64], jumps: &'a [AppliedJump]) -> PathView<'a> {
        PathView { start: 0.0, horizon: 1.0, dim: 1, times, values, jumps }
    }

    #[test]
    fn constant_and_piecewise_conventions() {
        let empty = view(&[], &[], &[]);
        let c = ControlPolicy::Constant(vec![0.3]);
        assert_eq!(c.evaluate(0.7, &empty).unwrap(), &[0.3]);
        let p = ControlPolicy::piecewise(vec![0.5], vec![vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(p.evaluate(0.5, &empty).unwrap(), &[0.0]);
        assert_eq!(p.evaluate(0.5000001, &empty).unwrap(), &[1.0]);
        assert!(p.evaluate(1.5, &empty).is_err());
        assert!(p.evaluate(-0.1, &empty).is_err());
    }

    #[test]
    fn lattice_feedback_reads_left_limit_history() {
        let lattice = Partition::new(vec![-0.5], vec![2.5], vec![3]).unwrap();
        let fb = ControlPolicy::LatticeFeedback(LatticeFeedback {
            breaks: vec![0.5],
            first: vec![0.0],
            lattice,
            palette: vec![vec![0.0], vec![1.0]],
            tables: vec![vec![1, 0, 1]],
        });
        let times = [0.0, 0.25, 0.5, 0.75];
        // A jump at t = 0.75 changes the value recorded there only.
        let with_jump = [0.0, 0.0, 1.0, 2.0];
        let without = [0.0, 0.0, 1.0, 1.0];
        let jump = [AppliedJump { time: 0.75, mark: vec![1.0], grid_index: 3, applied: true }];
        let a = fb.evaluate(0.75, &view(&times, &with_jump, &jump)).unwrap();
        let b = fb.evaluate(0.75, &view(&times, &without, &[])).unwrap();
        assert_eq!(a, b);
        // State 1.0 at the breakpoint falls in the middle cell.
        assert_eq!(a, &[0.0]);
        assert_eq!(fb.evaluate(0.3, &view(&times, &without, &[])).unwrap(), &[0.0]);
    }

    #[test]
    fn concatenation_extremes() {
        let u = ControlPolicy::Constant(vec![-1.0]);
        let v = ControlPolicy::Constant(vec![1.0]);
        let empty = view(&[], &[], &[]);
        let at_start = concatenate(u.clone(), v.clone(), StoppingRule::Deterministic { time: 0.0 });
        let at_end = concatenate(u, v, StoppingRule::Deterministic { time: 1.0 });
        for t in [1e-9, 0.3, 1.0] {
            assert_eq!(at_start.evaluate(t, &empty).unwrap(), &[1.0]);
            assert_eq!(at_end.evaluate(t, &empty).unwrap(), &[-1.0]);
        }
    }

    #[test]
    fn concatenation_on_first_jump() {
        let rule = StoppingRule::FirstJump;
        let pol = concatenate(ControlPolicy::Constant(vec![0.0]), ControlPolicy::Constant(vec![1.0]), rule);
        let times = [0.0, 0.4, 0.6];
        let values = [0.0, 2.0, 2.0];
        let jumps = [AppliedJump { time: 0.4, mark: vec![2.0], grid_index: 1, applied: true }];
        let v = view(&times, &values, &jumps);
        assert_eq!(pol.evaluate(0.4, &v).unwrap(), &[0.0]);
        assert_eq!(pol.evaluate(0.41, &v).unwrap(), &[1.0]);
        assert_eq!(rule.index_on(&v), Some(1));
        assert_eq!(StoppingRule::FirstExit { radius: 1.5 }.index_on(&v), Some(1));
        assert_eq!(StoppingRule::FirstExceedance { level: 3.0 }.index_on(&v), None);
    }

    #[test]
    fn enumeration_counts() {
        let a = ActionSet::scalars(&[0.0, 1.0]).unwrap();
        assert_eq!(enumerate_policies(&a, &[], None, 100).unwrap().len(), 2);
        assert_eq!(enumerate_policies(&a, &[0.5], None, 100).unwrap().len(), 4);
        let lattice = Partition::new(vec![0.0], vec![3.0], vec![3]).unwrap();
        let fam = enumerate_policies(&a, &[0.5], Some(&lattice), 100).unwrap();
        // Counting oracle: 2 first-segment actions × 2^3 cell tables.
        let mut count = 0;
        for _first in 0..2 {
            for _c0 in 0..2 {
                for _c1 in 0..2 {
                    for _c2 in 0..2 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(fam.len(), count);
        let distinct: std::collections::HashSet<String> = fam.iter().map(|p| format!("{p:?}")).collect();
        assert_eq!(distinct.len(), count);
        match enumerate_policies(&a, &[0.1, 0.2, 0.3], Some(&lattice), 100) {
            Err(Error::TooLarge { size, .. }) => assert_eq!(size, 2f64.powi(10)),
            other => panic!("expected TooLarge, got {other:?}"),
        }
    }

    #[test]
    fn box_action_set_grid_and_membership() {
        let a = ActionSet::new(ActionSetKind::Box { lower: vec![-1.0, 0.0], upper: vec![1.0, 2.0], resolution: 3 })
            .unwrap();
        assert_eq!(a.len(), 9);
        assert!(a.points().iter().all(|p| a.contains(p)));
        assert!(!a.contains(&[1.5, 0.0]));
        assert!(ActionSet::finite_grid(vec![]).is_err());
    }

    #[test]
    fn family_restriction_drops_past_breaks() {
        let fam = FamilySpec {
            actions: ActionSet::scalars(&[0.0, 1.0]).unwrap(),
            breaks: vec![1.0 / 3.0, 2.0 / 3.0],
            lattice: None,
        };
        assert_eq!(fam.size_from(0.0), 8.0);
        assert_eq!(fam.size_from(1.0 / 3.0), 4.0);
        assert_eq!(fam.enumerate_from(0.5, 100).unwrap().len(), 4);
        assert_eq!(fam.enumerate_from(2.0 / 3.0, 100).unwrap().len(), 2);
    }
}
