//! Interval partitions of `(0, T)`, dyadic refinement, and the local-averaging
//! projections that map piecewise-constant controls to finite vectors.

use crate::error::{Error, Result};

/// Breakpoints `0 = t_0 < t_1 < … < t_N = T` of a partition of `(0, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimePartition {
    boundaries: Vec<f64>,
    level: u32,
}

impl TimePartition {
    pub fn uniform(horizon: f64, intervals: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidPartition(format!("horizon must be positive, got {horizon}")));
        }
        if intervals == 0 {
            return Err(Error::InvalidPartition("need at least one interval".into()));
        }
        let boundaries = (0..=intervals)
            .map(|i| horizon * i as f64 / intervals as f64)
            .collect();
        Ok(Self { boundaries, level: 0 })
    }

    pub fn from_boundaries(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::InvalidPartition("need at least two breakpoints".into()));
        }
        if boundaries[0] != 0.0 {
            return Err(Error::InvalidPartition("first breakpoint must be 0".into()));
        }
        if boundaries.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidPartition("non-finite breakpoint".into()));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPartition("breakpoints must be strictly increasing".into()));
        }
        Ok(Self { boundaries, level: 0 })
    }

    pub fn horizon(&self) -> f64 {
        *self.boundaries.last().unwrap()
    }

    /// Number of refinements applied since construction.
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn num_intervals(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn interval(&self, i: usize) -> (f64, f64) {
        (self.boundaries[i], self.boundaries[i + 1])
    }

    pub fn length(&self, i: usize) -> f64 {
        self.boundaries[i + 1] - self.boundaries[i]
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.boundaries.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn max_length(&self) -> f64 {
        self.lengths().into_iter().fold(0.0, f64::max)
    }

    pub fn min_length(&self) -> f64 {
        self.lengths().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Ratio `h / τ` of the longest to the shortest interval.
    pub fn quasi_uniformity(&self) -> f64 {
        self.max_length() / self.min_length()
    }

    /// Splits every interval at its midpoint.
    pub fn refine_dyadic(&self) -> Self {
        let mut boundaries = Vec::with_capacity(2 * self.boundaries.len() - 1);
        for w in self.boundaries.windows(2) {
            boundaries.push(w[0]);
            boundaries.push(0.5 * (w[0] + w[1]));
        }
        boundaries.push(self.horizon());
        Self { boundaries, level: self.level + 1 }
    }

    fn tolerance(&self) -> f64 {
        1e-12 * self.horizon()
    }

    /// For every interval of `self`, the index of the interval of `coarse`
    /// containing it. Fails unless `self` refines `coarse`.
    pub fn parent_map(&self, coarse: &TimePartition) -> Result<Vec<usize>> {
        let tol = self.tolerance().max(coarse.tolerance());
        if (self.horizon() - coarse.horizon()).abs() > tol {
            return Err(Error::PartitionMismatch(format!(
                "horizons differ: {} vs {}",
                self.horizon(),
                coarse.horizon()
            )));
        }
        let mut parents = Vec::with_capacity(self.num_intervals());
        let mut c = 0;
        for (i, w) in self.boundaries.windows(2).enumerate() {
            while c + 1 < coarse.boundaries.len() - 1 && w[0] >= coarse.boundaries[c + 1] - tol {
                c += 1;
            }
            let (lo, hi) = coarse.interval(c);
            if w[0] < lo - tol || w[1] > hi + tol {
                return Err(Error::PartitionMismatch(format!(
                    "interval {i} = ({}, {}) is not nested in the coarse partition",
                    w[0], w[1]
                )));
            }
            parents.push(c);
        }
        Ok(parents)
    }

    pub fn is_refinement_of(&self, coarse: &TimePartition) -> bool {
        self.parent_map(coarse).is_ok()
    }
}

/// Piecewise-constant control with `n` switches on a partition.
/// Coefficient `(j, i)` lives at `j * N + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    partition: TimePartition,
    switches: usize,
    coeffs: Vec<f64>,
}

impl Control {
    pub fn new(partition: TimePartition, switches: usize, coeffs: Vec<f64>) -> Result<Self> {
        let expected = switches * partition.num_intervals();
        if switches == 0 {
            return Err(Error::InvalidParameter("a control needs at least one switch".into()));
        }
        if coeffs.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: coeffs.len() });
        }
        Ok(Self { partition, switches, coeffs })
    }

    pub fn constant(partition: TimePartition, switches: usize, value: f64) -> Self {
        let len = switches * partition.num_intervals();
        Self { partition, switches, coeffs: vec![value; len] }
    }

    pub fn zeros(partition: TimePartition, switches: usize) -> Self {
        Self::constant(partition, switches, 0.0)
    }

    pub fn partition(&self) -> &TimePartition {
        &self.partition
    }

    pub fn switches(&self) -> usize {
        self.switches
    }

    pub fn num_intervals(&self) -> usize {
        self.partition.num_intervals()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn with_coeffs(&self, coeffs: Vec<f64>) -> Result<Self> {
        Self::new(self.partition.clone(), self.switches, coeffs)
    }

    pub fn get(&self, switch: usize, interval: usize) -> f64 {
        self.coeffs[switch * self.num_intervals() + interval]
    }

    pub fn switch_coeffs(&self, switch: usize) -> &[f64] {
        let n = self.num_intervals();
        &self.coeffs[switch * n..(switch + 1) * n]
    }

    /// Interval length for every coefficient, in coefficient order.
    pub fn weights(&self) -> Vec<f64> {
        let lengths = self.partition.lengths();
        (0..self.switches).flat_map(|_| lengths.iter().copied()).collect()
    }

    /// `L²(0, T; Rⁿ)` inner product.
    pub fn inner(&self, other: &Control) -> Result<f64> {
        if self.partition != other.partition || self.switches != other.switches {
            return Err(Error::PartitionMismatch("controls live on different grids".into()));
        }
        Ok(self
            .weights()
            .iter()
            .zip(self.coeffs.iter().zip(&other.coeffs))
            .map(|(w, (a, b))| w * a * b)
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).unwrap().sqrt()
    }

    /// Total variation per switch, counting the jump from the value 0 held
    /// before the horizon.
    pub fn bv_seminorm(&self) -> Vec<f64> {
        (0..self.switches)
            .map(|j| {
                let mut prev = 0.0;
                let mut tv = 0.0;
                for &v in self.switch_coeffs(j) {
                    tv += (v - prev).abs();
                    prev = v;
                }
                tv
            })
            .collect()
    }
}

/// Local-averaging projection onto the intervals of a partition, for `n`
/// switches. Output entry `j * N + i` is the mean of switch `j` over `I_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    partition: TimePartition,
    switches: usize,
}

impl Projection {
    pub fn new(partition: TimePartition, switches: usize) -> Result<Self> {
        if switches == 0 {
            return Err(Error::InvalidParameter("projection needs at least one switch".into()));
        }
        Ok(Self { partition, switches })
    }

    pub fn partition(&self) -> &TimePartition {
        &self.partition
    }

    pub fn switches(&self) -> usize {
        self.switches
    }

    /// Dimension `M = n · N`.
    pub fn dim(&self) -> usize {
        self.switches * self.partition.num_intervals()
    }

    pub fn project(&self, u: &Control) -> Result<Vec<f64>> {
        if u.switches() != self.switches {
            return Err(Error::DimensionMismatch { expected: self.switches, got: u.switches() });
        }
        let parents = u.partition().parent_map(&self.partition)?;
        let fine_len = u.partition().lengths();
        let coarse_len = self.partition.lengths();
        let nc = self.partition.num_intervals();
        let mut out = vec![0.0; self.dim()];
        for j in 0..self.switches {
            for (f, &c) in parents.iter().enumerate() {
                out[j * nc + c] += fine_len[f] * u.get(j, f);
            }
            for c in 0..nc {
                out[j * nc + c] /= coarse_len[c];
            }
        }
        Ok(out)
    }

    /// Matrix of the projection as a map from the coefficients of controls on
    /// `grid`: row `r` holds the weights of `(Π u)_r`. Returned densely.
    pub fn matrix_on(&self, grid: &TimePartition) -> Result<Vec<Vec<f64>>> {
        let parents = grid.parent_map(&self.partition)?;
        let fine_len = grid.lengths();
        let coarse_len = self.partition.lengths();
        let nf = grid.num_intervals();
        let nc = self.partition.num_intervals();
        let mut rows = vec![vec![0.0; self.switches * nf]; self.dim()];
        for j in 0..self.switches {
            for (f, &c) in parents.iter().enumerate() {
                rows[j * nc + c][j * nf + f] = fine_len[f] / coarse_len[c];
            }
        }
        Ok(rows)
    }

    /// Riesz representative of `a ↦ aᵀ Π(·)`: the function
    /// `Σ_i a_i / λ(I_i) · χ_{I_i}` per switch, written as coefficients on
    /// `grid`, which must refine this projection's partition.
    pub fn adjoint_embed(&self, a: &[f64], grid: &TimePartition) -> Result<Control> {
        if a.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: a.len() });
        }
        let parents = grid.parent_map(&self.partition)?;
        let coarse_len = self.partition.lengths();
        let nc = self.partition.num_intervals();
        let nf = grid.num_intervals();
        let mut coeffs = vec![0.0; self.switches * nf];
        for j in 0..self.switches {
            for (f, &c) in parents.iter().enumerate() {
                coeffs[j * nf + f] = a[j * nc + c] / coarse_len[c];
            }
        }
        Control::new(grid.clone(), self.switches, coeffs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn refine_uniform_four_to_eight() {
        let p = TimePartition::uniform(2.0, 4).unwrap();
        let r = p.refine_dyadic();
        assert_eq!(r.num_intervals(), 8);
        assert_eq!(r.level(), 1);
        for i in 0..8 {
            assert!((r.length(i) - 0.25).abs() < 1e-15);
        }
        let parents = r.parent_map(&p).unwrap();
        assert_eq!(parents, vec![0, 0, 1, 1, 2, 2, 3, 3]);
        assert!(r.max_length() <= p.max_length());
    }

    #[test]
    fn refine_single_interval() {
        let p = TimePartition::uniform(3.0, 1).unwrap();
        let r = p.refine_dyadic();
        assert_eq!(r.boundaries(), &[0.0, 1.5, 3.0]);
    }

    #[test]
    fn refine_twice_is_nested_in_both_ancestors() {
        let p0 = TimePartition::uniform(1.0, 1).unwrap();
        let p1 = p0.refine_dyadic();
        let p2 = p1.refine_dyadic();
        assert_eq!(p2.num_intervals(), 4);
        assert!(p2.is_refinement_of(&p1));
        assert!(p2.is_refinement_of(&p0));
        assert!(!p1.is_refinement_of(&p2));
        for p in [&p0, &p1, &p2] {
            assert_eq!(p.quasi_uniformity(), 1.0);
        }
    }

    #[test]
    fn nonuniform_refinement_preserves_ratio() {
        let p = TimePartition::from_boundaries(vec![0.0, 0.5, 2.0]).unwrap();
        let r = p.refine_dyadic().refine_dyadic();
        assert!((p.quasi_uniformity() - 3.0).abs() < 1e-12);
        assert!((r.quasi_uniformity() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_partitions() {
        assert!(TimePartition::uniform(0.0, 3).is_err());
        assert!(TimePartition::uniform(1.0, 0).is_err());
        assert!(TimePartition::from_boundaries(vec![0.0, 1.0, 1.0]).is_err());
        assert!(TimePartition::from_boundaries(vec![0.1, 1.0]).is_err());
    }

    #[test]
    fn project_constant_one() {
        let p = TimePartition::uniform(2.0, 5).unwrap();
        let pi = Projection::new(p.clone(), 2).unwrap();
        let u = Control::constant(p, 2, 1.0);
        assert!(pi.project(&u).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn project_same_grid_is_identity() {
        let p = TimePartition::uniform(2.0, 3).unwrap();
        let pi = Projection::new(p.clone(), 1).unwrap();
        let u = Control::new(p, 1, vec![0.2, 0.9, 0.4]).unwrap();
        assert_eq!(pi.project(&u).unwrap(), vec![0.2, 0.9, 0.4]);
    }

    #[test]
    fn project_halves_average() {
        let coarse = TimePartition::uniform(2.0, 2).unwrap();
        let fine = coarse.refine_dyadic();
        let pi = Projection::new(coarse, 1).unwrap();
        let u = Control::new(fine, 1, vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(pi.project(&u).unwrap(), vec![0.5, 1.0]);
    }

    #[test]
    fn project_rejects_non_nested() {
        let coarse = TimePartition::uniform(2.0, 3).unwrap();
        let fine = TimePartition::uniform(2.0, 4).unwrap();
        let pi = Projection::new(coarse, 1).unwrap();
        assert!(pi.project(&Control::zeros(fine, 1)).is_err());
        let other = TimePartition::uniform(1.0, 3).unwrap();
        assert!(pi.project(&Control::zeros(other, 1)).is_err());
    }

    #[test]
    fn embed_unit_vector() {
        let p = TimePartition::uniform(2.0, 4).unwrap();
        let pi = Projection::new(p.clone(), 1).unwrap();
        let e = pi.adjoint_embed(&[0.0, 1.0, 0.0, 0.0], &p).unwrap();
        assert_eq!(e.coeffs(), &[0.0, 2.0, 0.0, 0.0]);
        let z = pi.adjoint_embed(&[0.0; 4], &p).unwrap();
        assert!(z.coeffs().iter().all(|&v| v == 0.0));
        assert!(pi.adjoint_embed(&[1.0; 3], &p).is_err());
    }

    #[test]
    fn embed_is_adjoint_of_project() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coarse = TimePartition::from_boundaries(vec![0.0, 0.3, 1.1, 2.0]).unwrap();
        let fine = coarse.refine_dyadic().refine_dyadic();
        let pi = Projection::new(coarse, 2).unwrap();
        for _ in 0..50 {
            let a: Vec<f64> = (0..pi.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u = Control::new(
                fine.clone(),
                2,
                (0..2 * fine.num_intervals()).map(|_| rng.gen::<f64>()).collect(),
            )
            .unwrap();
            let lhs: f64 = a.iter().zip(pi.project(&u).unwrap()).map(|(x, y)| x * y).sum();
            let rhs = pi.adjoint_embed(&a, &fine).unwrap().inner(&u).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1e-300), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn nested_projection_is_average_of_finer_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p0 = TimePartition::uniform(2.0, 2).unwrap();
        let p1 = p0.refine_dyadic();
        let p3 = p1.refine_dyadic().refine_dyadic();
        let u = Control::new(p3.clone(), 1, (0..16).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let coarse = Projection::new(p0.clone(), 1).unwrap().project(&u).unwrap();
        let mid = Projection::new(p1.clone(), 1).unwrap().project(&u).unwrap();
        let mid_as_control = Control::new(p1, 1, mid).unwrap();
        let via_mid = Projection::new(p0, 1).unwrap().project(&mid_as_control).unwrap();
        for (a, b) in coarse.iter().zip(&via_mid) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn bv_counts_initial_jump() {
        let p = TimePartition::uniform(1.0, 4).unwrap();
        let u = Control::new(p, 1, vec![1.0, 1.0, 0.0, 0.5]).unwrap();
        assert_eq!(u.bv_seminorm(), vec![2.5]);
    }
}
