//! Crank–Nicolson heat-equation solves and their exact discrete adjoints.
//!
//! States are piecewise linear in time (values at the breakpoints
//! `t_0, …, t_N`), controls and sources are piecewise constant on the
//! intervals. The state inner product is the trapezoidal rule in time with
//! the mass matrix in space. The adjoint solve is the literal transpose of the
//! source-to-state map, so its values live on the intervals.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, BandedCholesky};
use crate::mesh::{self, SpatialMesh, SparseOperator};
use crate::timegrid::{Control, TimePartition};

/// Whether a trajectory holds values at breakpoints or per interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeLayout {
    /// `N + 1` levels at `t_0, …, t_N`, linear in between.
    Nodal,
    /// `N` levels, constant on each interval (adjoint states; the terminal
    /// value after `t_N` is zero).
    Interval,
}

/// Space-time field on the interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    layout: TimeLayout,
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn zeros(layout: TimeLayout, levels: usize, dim: usize) -> Self {
        Self { layout, dim, data: vec![0.0; levels * dim] }
    }

    pub fn from_levels(layout: TimeLayout, levels: Vec<Vec<f64>>) -> Result<Self> {
        let dim = levels.first().map_or(0, Vec::len);
        if let Some(bad) = levels.iter().find(|l| l.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
        }
        Ok(Self { layout, dim, data: levels.concat() })
    }

    pub fn layout(&self) -> TimeLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_levels(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn level(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn level_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self += a * other`
    pub fn add_scaled(&mut self, a: f64, other: &Trajectory) -> Result<()> {
        if self.layout != other.layout || self.data.len() != other.data.len() {
            return Err(Error::DimensionMismatch { expected: self.data.len(), got: other.data.len() });
        }
        axpy(a, &other.data, &mut self.data);
        Ok(())
    }

    /// Keeps every `stride`-th level of a nodal trajectory.
    pub fn subsample(&self, stride: usize) -> Result<Trajectory> {
        if self.layout != TimeLayout::Nodal || stride == 0 || !(self.num_levels() - 1).is_multiple_of(stride) {
            return Err(Error::PartitionMismatch(format!(
                "cannot subsample {} levels with stride {stride}",
                self.num_levels()
            )));
        }
        let data = (0..self.num_levels())
            .step_by(stride)
            .flat_map(|i| self.level(i).iter().copied())
            .collect();
        Ok(Self { layout: TimeLayout::Nodal, dim: self.dim, data })
    }
}

/// Interval-wise spatial loads `w_i ∈ H⁻¹`, already tested against the
/// interior basis functions.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceField {
    dim: usize,
    data: Vec<f64>,
}

impl SourceField {
    pub fn zeros(intervals: usize, dim: usize) -> Self {
        Self { dim, data: vec![0.0; intervals * dim] }
    }

    pub fn num_intervals(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }

    pub fn interval(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn interval_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Spatial form functions `ψ_j`, stored as interior load vectors `∫ ψ_j φ_i`.
#[derive(Debug, Clone)]
pub struct FormFunctions {
    loads: Vec<Vec<f64>>,
}

impl FormFunctions {
    pub fn from_loads(loads: Vec<Vec<f64>>) -> Result<Self> {
        if loads.is_empty() {
            return Err(Error::InvalidParameter("need at least one form function".into()));
        }
        if loads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("form function load is not finite".into()));
        }
        Ok(Self { loads })
    }

    pub fn from_fields(mesh: &SpatialMesh, fields: &[&dyn Fn(f64, f64) -> f64]) -> Result<Self> {
        Self::from_loads(
            fields
                .iter()
                .map(|f| mesh.restrict_to_interior(&mesh::load_vector(mesh, f)))
                .collect(),
        )
    }

    /// Single switch with `ψ(x) = 1.5 − 2(x₁−½)² − 2(x₂−½)²`.
    pub fn quadratic_bump(mesh: &SpatialMesh) -> Self {
        Self::from_fields(mesh, &[&quadratic_bump]).expect("bump load is finite")
    }

    pub fn count(&self) -> usize {
        self.loads.len()
    }

    pub fn load(&self, j: usize) -> &[f64] {
        &self.loads[j]
    }
}

pub fn quadratic_bump(x: f64, y: f64) -> f64 {
    1.5 - 2.0 * (x - 0.5).powi(2) - 2.0 * (y - 0.5).powi(2)
}

#[derive(Debug)]
struct Stepper {
    dt: f64,
    lhs: BandedCholesky,
    rhs: SparseOperator,
}

/// Discrete realizations of `Σ`, `Σ*`, `Ψ`, `Ψ*` on a fixed mesh and time grid.
#[derive(Debug)]
pub struct HeatOperators {
    mesh: Arc<SpatialMesh>,
    partition: TimePartition,
    mass: SparseOperator,
    stiffness: SparseOperator,
    forms: FormFunctions,
    steppers: Vec<Stepper>,
    stepper_of: Vec<usize>,
}

impl HeatOperators {
    pub fn new(mesh: Arc<SpatialMesh>, partition: TimePartition, forms: FormFunctions) -> Result<Self> {
        let (mass, stiffness) = mesh::assemble(&mesh)?;
        if forms.loads.iter().any(|l| l.len() != mass.dim()) {
            return Err(Error::DimensionMismatch { expected: mass.dim(), got: forms.loads[0].len() });
        }
        let mut steppers: Vec<Stepper> = Vec::new();
        let mut stepper_of = Vec::with_capacity(partition.num_intervals());
        for dt in partition.lengths() {
            let pos = steppers.iter().position(|s| (s.dt - dt).abs() <= 1e-14 * dt);
            let k = match pos {
                Some(k) => k,
                None => {
                    let lhs = BandedCholesky::factor(&mass.linear_combination(1.0, &stiffness, 0.5 * dt))?;
                    let rhs = mass.linear_combination(1.0, &stiffness, -0.5 * dt);
                    steppers.push(Stepper { dt, lhs, rhs });
                    steppers.len() - 1
                }
            };
            stepper_of.push(k);
        }
        Ok(Self { mesh, partition, mass, stiffness, forms, steppers, stepper_of })
    }

    pub fn mesh(&self) -> &SpatialMesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> Arc<SpatialMesh> {
        Arc::clone(&self.mesh)
    }

    pub fn partition(&self) -> &TimePartition {
        &self.partition
    }

    pub fn mass(&self) -> &SparseOperator {
        &self.mass
    }

    pub fn stiffness(&self) -> &SparseOperator {
        &self.stiffness
    }

    pub fn forms(&self) -> &FormFunctions {
        &self.forms
    }

    pub fn switches(&self) -> usize {
        self.forms.count()
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    pub fn num_intervals(&self) -> usize {
        self.partition.num_intervals()
    }

    /// Trapezoidal weights `ω_i` of the breakpoints.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let dts = self.partition.lengths();
        let n = dts.len();
        (0..=n)
            .map(|i| {
                let left = if i > 0 { dts[i - 1] } else { 0.0 };
                let right = if i < n { dts[i] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }

    fn check_control(&self, u: &Control) -> Result<()> {
        if u.partition() != &self.partition {
            return Err(Error::PartitionMismatch("control is not on the solver's time grid".into()));
        }
        if u.switches() != self.switches() {
            return Err(Error::DimensionMismatch { expected: self.switches(), got: u.switches() });
        }
        Ok(())
    }

    fn check_nodal(&self, z: &Trajectory) -> Result<()> {
        if z.layout() != TimeLayout::Nodal
            || z.num_levels() != self.num_intervals() + 1
            || z.dim() != self.dim()
        {
            return Err(Error::PartitionMismatch(
                "expected a nodal trajectory on the solver's space-time grid".into(),
            ));
        }
        Ok(())
    }

    /// `Ψu`: loads `Σ_j u_j|_{I_i} ψ_j` per interval.
    pub fn apply_psi(&self, u: &Control) -> Result<SourceField> {
        self.check_control(u)?;
        let mut w = SourceField::zeros(self.num_intervals(), self.dim());
        for i in 0..self.num_intervals() {
            let wi = w.interval_mut(i);
            for j in 0..self.switches() {
                axpy(u.get(j, i), self.forms.load(j), wi);
            }
        }
        Ok(w)
    }

    /// `Ψ*z`: entry `(j, i)` is the mean over `I_i` of `⟨ψ_j, z(t)⟩`.
    pub fn apply_psi_star(&self, z: &Trajectory) -> Result<Control> {
        let n = self.num_intervals();
        let expected_levels = match z.layout() {
            TimeLayout::Nodal => n + 1,
            TimeLayout::Interval => n,
        };
        if z.num_levels() != expected_levels || z.dim() != self.dim() {
            return Err(Error::PartitionMismatch("trajectory is not on the solver's grid".into()));
        }
        let m = self.switches();
        let mut coeffs = vec![0.0; m * n];
        for j in 0..m {
            let f = self.forms.load(j);
            for i in 0..n {
                coeffs[j * n + i] = match z.layout() {
                    TimeLayout::Nodal => 0.5 * (dot(f, z.level(i)) + dot(f, z.level(i + 1))),
                    TimeLayout::Interval => dot(f, z.level(i)),
                };
            }
        }
        Control::new(self.partition.clone(), m, coeffs)
    }

    /// Crank–Nicolson march from `y0` driven by the interval loads `w`.
    pub fn propagate(&self, y0: &[f64], w: Option<&SourceField>) -> Result<Trajectory> {
        let n = self.num_intervals();
        if y0.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: y0.len() });
        }
        if let Some(w) = w {
            if w.num_intervals() != n || w.dim != self.dim() {
                return Err(Error::PartitionMismatch("source is not on the solver's grid".into()));
            }
        }
        let mut y = Trajectory::zeros(TimeLayout::Nodal, n + 1, self.dim());
        y.level_mut(0).copy_from_slice(y0);
        let mut rhs = vec![0.0; self.dim()];
        for i in 0..n {
            let st = &self.steppers[self.stepper_of[i]];
            st.rhs.apply_into(y.level(i), &mut rhs);
            if let Some(w) = w {
                axpy(st.dt, w.interval(i), &mut rhs);
            }
            st.lhs.solve_in_place(&mut rhs);
            y.level_mut(i + 1).copy_from_slice(&rhs);
        }
        Ok(y)
    }

    /// Full state for control `u` and initial nodal values `y0` (interior).
    pub fn solve_forward(&self, u: &Control, y0: &[f64]) -> Result<Trajectory> {
        let w = self.apply_psi(u)?;
        self.propagate(y0, Some(&w))
    }

    /// `Σw`: zero initial state.
    pub fn solve_source(&self, w: &SourceField) -> Result<Trajectory> {
        self.propagate(&vec![0.0; self.dim()], Some(w))
    }

    /// Free response `ζ` to the initial state.
    pub fn free_response(&self, y0: &[f64]) -> Result<Trajectory> {
        self.propagate(y0, None)
    }

    /// `Σ*g`: transpose of [`Self::solve_source`] with respect to
    /// [`Self::state_inner`] and [`Self::source_pairing`].
    pub fn solve_adjoint(&self, g: &Trajectory) -> Result<Trajectory> {
        self.check_nodal(g)?;
        let n = self.num_intervals();
        let omega = self.trapezoid_weights();
        let mut p = Trajectory::zeros(TimeLayout::Interval, n, self.dim());
        let mut rhs = vec![0.0; self.dim()];
        let mut tmp = vec![0.0; self.dim()];
        for i in (0..n).rev() {
            // unknown for interval i pairs with breakpoint i + 1
            self.mass.apply_into(g.level(i + 1), &mut rhs);
            rhs.iter_mut().for_each(|v| *v *= omega[i + 1]);
            if i + 1 < n {
                let next = &self.steppers[self.stepper_of[i + 1]];
                next.rhs.apply_into(p.level(i + 1), &mut tmp);
                axpy(1.0, &tmp, &mut rhs);
            }
            self.steppers[self.stepper_of[i]].lhs.solve_in_place(&mut rhs);
            p.level_mut(i).copy_from_slice(&rhs);
        }
        Ok(p)
    }

    /// Trapezoid-in-time, mass-in-space inner product of nodal trajectories.
    pub fn state_inner(&self, a: &Trajectory, b: &Trajectory) -> Result<f64> {
        self.check_nodal(a)?;
        self.check_nodal(b)?;
        let mut tmp = vec![0.0; self.dim()];
        let mut total = 0.0;
        for (i, w) in self.trapezoid_weights().into_iter().enumerate() {
            self.mass.apply_into(b.level(i), &mut tmp);
            total += w * dot(a.level(i), &tmp);
        }
        Ok(total)
    }

    /// `∫ ⟨w(t), z(t)⟩ dt` for interval loads `w`.
    pub fn source_pairing(&self, w: &SourceField, z: &Trajectory) -> Result<f64> {
        let dts = self.partition.lengths();
        let n = dts.len();
        if w.num_intervals() != n {
            return Err(Error::PartitionMismatch("source is not on the solver's grid".into()));
        }
        Ok(match z.layout() {
            TimeLayout::Nodal => (0..n)
                .map(|i| 0.5 * dts[i] * (dot(w.interval(i), z.level(i)) + dot(w.interval(i), z.level(i + 1))))
                .sum(),
            TimeLayout::Interval => (0..n).map(|i| dts[i] * dot(w.interval(i), z.level(i))).sum(),
        })
    }

    /// Nodal interpolant of `f` on the interior nodes.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.mesh.restrict_to_interior(&self.mesh.interpolate(f))
    }
}

/// The reduced tracking objective
/// `f(u) = ½‖Su − y_d‖² + (α/2)‖u − ½‖²` with `S u = ΣΨu + ζ`.
#[derive(Debug, Clone)]
pub struct TrackingProblem {
    ops: Arc<HeatOperators>,
    desired: Trajectory,
    zeta: Trajectory,
    alpha: f64,
}

impl TrackingProblem {
    pub fn new(ops: Arc<HeatOperators>, desired: Trajectory, y0: &[f64], alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be nonnegative, got {alpha}")));
        }
        ops.check_nodal(&desired)?;
        let zeta = ops.free_response(y0)?;
        Ok(Self { ops, desired, zeta, alpha })
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be nonnegative, got {alpha}")));
        }
        Ok(Self { alpha, ..self.clone() })
    }

    pub fn ops(&self) -> &HeatOperators {
        &self.ops
    }

    pub fn ops_arc(&self) -> Arc<HeatOperators> {
        Arc::clone(&self.ops)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn desired(&self) -> &Trajectory {
        &self.desired
    }

    pub fn partition(&self) -> &TimePartition {
        self.ops.partition()
    }

    pub fn switches(&self) -> usize {
        self.ops.switches()
    }

    pub fn state(&self, u: &Control) -> Result<Trajectory> {
        let mut y = self.ops.solve_source(&self.ops.apply_psi(u)?)?;
        y.add_scaled(1.0, &self.zeta)?;
        Ok(y)
    }

    pub fn misfit(&self, u: &Control) -> Result<Trajectory> {
        let mut r = self.state(u)?;
        r.add_scaled(-1.0, &self.desired)?;
        Ok(r)
    }

    /// Adjoint state `p = Σ*(Su − y_d)`.
    pub fn adjoint(&self, u: &Control) -> Result<Trajectory> {
        self.ops.solve_adjoint(&self.misfit(u)?)
    }

    pub fn tikhonov(&self, u: &Control) -> f64 {
        let d: Vec<f64> = u.coeffs().iter().map(|v| v - 0.5).collect();
        let centered = u.with_coeffs(d).expect("same shape");
        0.5 * self.alpha * centered.inner(&centered).unwrap()
    }

    pub fn objective(&self, u: &Control) -> Result<f64> {
        let r = self.misfit(u)?;
        Ok(0.5 * self.ops.state_inner(&r, &r)? + self.tikhonov(u))
    }

    /// Value and `L²(0,T)` gradient `Ψ*Σ*(Su − y_d) + α(u − ½)`.
    pub fn objective_and_gradient(&self, u: &Control) -> Result<(f64, Control)> {
        let r = self.misfit(u)?;
        let value = 0.5 * self.ops.state_inner(&r, &r)? + self.tikhonov(u);
        let mut g = self.ops.apply_psi_star(&self.ops.solve_adjoint(&r)?)?;
        for (gi, ui) in g.coeffs_mut().iter_mut().zip(u.coeffs()) {
            *gi += self.alpha * (ui - 0.5);
        }
        Ok((value, g))
    }

    /// `Ψ*Σ*ΣΨ v`, the Hessian of the tracking term.
    pub fn tracking_hessian_apply(&self, v: &Control) -> Result<Control> {
        let y = self.ops.solve_source(&self.ops.apply_psi(v)?)?;
        self.ops.apply_psi_star(&self.ops.solve_adjoint(&y)?)
    }
}
