use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Regular grid of disjoint axis-aligned boxes covering `[lower, upper]`.
///
/// Cells are half-open `[lo, hi)` per coordinate except the last one along each
/// axis, which is closed, so the boxes partition the region exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
}

impl Partition {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() || lower.len() != cells.len() {
            return Err(invalid("partition bounds and cell counts must share a positive dimension"));
        }
        for i in 0..lower.len() {
            if !(lower[i] < upper[i]) || !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(invalid(format!("partition axis {i}: need lower < upper")));
            }
            if cells[i] == 0 {
                return Err(invalid(format!("partition axis {i}: zero cells")));
            }
        }
        Ok(Partition { lower, upper, cells })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.iter().product()
    }

    fn side(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.cells[axis] as f64
    }

    fn axis_index(&self, axis: usize, v: f64) -> isize {
        let k = ((v - self.lower[axis]) / self.side(axis)).floor();
        if v == self.upper[axis] {
            self.cells[axis] as isize - 1
        } else {
            k as isize
        }
    }

    /// Index of the box containing `x`, or `None` outside the covered region.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0usize;
        for axis in (0..self.dim()).rev() {
            let k = self.axis_index(axis, x[axis]);
            if k < 0 || k >= self.cells[axis] as isize || x[axis].is_nan() {
                return None;
            }
            idx = idx * self.cells[axis] + k as usize;
        }
        Some(idx)
    }

    /// Like [`locate`](Self::locate) but points outside map to the nearest edge box.
    pub fn locate_clamped(&self, x: &[f64]) -> usize {
        let mut idx = 0usize;
        for axis in (0..self.dim()).rev() {
            let k = if x[axis].is_nan() { 0 } else { self.axis_index(axis, x[axis]) };
            let k = k.clamp(0, self.cells[axis] as isize - 1) as usize;
            idx = idx * self.cells[axis] + k;
        }
        idx
    }

    /// Lower and upper corners of box `j`.
    pub fn cell_bounds(&self, mut j: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for axis in 0..self.dim() {
            let k = j % self.cells[axis];
            j /= self.cells[axis];
            let side = self.side(axis);
            lo.push(self.lower[axis] + side * k as f64);
            hi.push(self.lower[axis] + side * (k + 1) as f64);
        }
        (lo, hi)
    }

    /// Largest pairwise distance inside any box.
    pub fn cell_diameter(&self) -> f64 {
        (0..self.dim()).map(|a| self.side(a).powi(2)).sum::<f64>().sqrt()
    }
}

/// Boxes covering the `beta`-ball in `ℝ^d` whose in-box pairwise distance `δ`
/// satisfies `δ^p ≤ alpha^p · epsilon`.
pub fn make_partition(d: usize, beta: f64, alpha: f64, p: f64, epsilon: f64, cap: usize) -> Result<Partition> {
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    if !(beta > 0.0 && alpha > 0.0 && epsilon > 0.0 && p > 0.0) {
        return Err(invalid("beta, alpha, p and epsilon must be positive"));
    }
    let bound = alpha * epsilon.powf(1.0 / p);
    let side = bound / (d as f64).sqrt();
    let per_axis = ((2.0 * beta / side) * (1.0 - 1e-12)).ceil().max(1.0);
    let total = per_axis.powi(d as i32);
    if !(total <= cap as f64) {
        return Err(Error::TooLarge { what: "partition", size: total, cap });
    }
    Partition::new(vec![-beta; d], vec![beta; d], vec![per_axis as usize; d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_dimensional_example() {
        // alpha * eps^{1/p} = 0.5 with alpha = 0.5, eps = 1
        let p = make_partition(1, 1.0, 0.5, 2.0, 1.0, 100).unwrap();
        assert_eq!(p.n_cells(), 4);
        assert_eq!(p.locate(&[-1.0]), Some(0));
        assert_eq!(p.locate(&[-0.5]), Some(1));
        assert_eq!(p.locate(&[1.0]), Some(3));
        assert_eq!(p.locate(&[1.01]), None);
        assert_eq!(p.locate_clamped(&[7.0]), 3);
        assert_eq!(p.locate_clamped(&[-7.0]), 0);
        assert_eq!(p.cell_bounds(2), (vec![0.0], vec![0.5]));
    }

    #[test]
    fn diameter_bound_holds() {
        for (d, alpha, p, eps) in [(1, 0.3, 2.0, 0.5), (2, 0.5, 2.0, 0.1), (3, 1.0, 4.0, 0.2)] {
            let part = make_partition(d, 1.0, alpha, p, eps, 1_000_000).unwrap();
            assert!(part.cell_diameter() <= alpha * f64::powf(eps, 1.0 / p) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn two_dimensional_pairs_sampled_within_bound() {
        let part = make_partition(2, 1.0, 0.4, 2.0, 1.0, 10_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for _ in 0..20_000 {
            let j = rng.random_range(0..part.n_cells());
            let (lo, hi) = part.cell_bounds(j);
            let pt = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                lo.iter().zip(&hi).map(|(a, b)| rng.random_range(*a..*b)).collect()
            };
            let a = pt(&mut rng);
            let b = pt(&mut rng);
            assert_eq!(part.locate(&a), Some(j));
            let dist = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            worst = worst.max(dist);
        }
        assert!(worst <= 0.4);
        assert!((part.cell_diameter() - part.side(0) * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cap_and_input_errors() {
        assert!(matches!(
            make_partition(3, 10.0, 0.01, 2.0, 1.0, 1000),
            Err(Error::TooLarge { .. })
        ));
        assert!(make_partition(1, 0.0, 1.0, 2.0, 1.0, 10).is_err());
        assert!(Partition::new(vec![0.0], vec![0.0], vec![1]).is_err());
    }
}
