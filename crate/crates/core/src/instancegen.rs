//! Benchmark instances with a known unconstrained optimum.
//!
//! A random cubic spline `u_d` is chosen as the target control. The adjoint
//! `p⋆ = −αc(u_d − ½) sin(πx₁) sin(πx₂)` with `c = 1/∫ψ sin sin` satisfies
//! `Ψ*p⋆ = −α(u_d − ½)`, and setting `y_d = S(u_d) + ∂_t p⋆ + Δp⋆` makes
//! `u_d` the minimizer of the relaxation without cuts.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::heat::{quadratic_bump, FormFunctions, HeatOperators, TimeLayout, TrackingProblem, Trajectory};
use crate::mesh::{quadrature, SpatialMesh};
use crate::timegrid::{Control, TimePartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormKind {
    QuadraticBump,
}

impl fmt::Display for FormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormKind::QuadraticBump => f.write_str("quadratic-bump"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    pub seed: u64,
    pub horizon: f64,
    /// Number of interior spline knots.
    pub sigma: usize,
    pub nt_fine: usize,
    /// Nodes per side of the spatial mesh.
    pub nx: usize,
    pub alpha: f64,
    pub form: FormKind,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self { seed: 1, horizon: 2.0, sigma: 11, nt_fine: 400, nx: 30, alpha: 1e-2, form: FormKind::QuadraticBump }
    }
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidSpec(format!("T must be positive, got {}", self.horizon)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidSpec(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.nx < 3 {
            return Err(Error::InvalidSpec(format!("nx must be at least 3, got {}", self.nx)));
        }
        if self.nt_fine < 1 || self.sigma + 1 > self.nt_fine {
            return Err(Error::InvalidSpec(format!(
                "need sigma < nt_fine to place distinct knots (sigma = {}, nt_fine = {})",
                self.sigma, self.nt_fine
            )));
        }
        Ok(())
    }

    /// `key=value` lines.
    pub fn to_key_value(&self) -> String {
        format!(
            "seed={}\nT={}\nsigma={}\nnt_fine={}\nnx={}\nalpha={}\nform={}\n",
            self.seed, self.horizon, self.sigma, self.nt_fine, self.nx, self.alpha, self.form
        )
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped and
    /// missing keys take their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidSpec(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn fmt::Display| Error::InvalidSpec(format!("line {}: {key}: {e}", lineno + 1));
            match key {
                "seed" => spec.seed = value.parse().map_err(|e| bad(&e))?,
                "T" => spec.horizon = value.parse().map_err(|e| bad(&e))?,
                "sigma" => spec.sigma = value.parse().map_err(|e| bad(&e))?,
                "nt_fine" => spec.nt_fine = value.parse().map_err(|e| bad(&e))?,
                "nx" => spec.nx = value.parse().map_err(|e| bad(&e))?,
                "alpha" => spec.alpha = value.parse().map_err(|e| bad(&e))?,
                "form" => {
                    spec.form = match value {
                        "quadratic-bump" => FormKind::QuadraticBump,
                        other => return Err(bad(&format!("unknown form function '{other}'"))),
                    }
                }
                other => return Err(Error::InvalidSpec(format!("line {}: unknown key '{other}'", lineno + 1))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Natural cubic spline through `(t_i, v_i)`.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let n = knots.len();
        if n < 2 || values.len() != n {
            return Err(Error::InvalidSpec("spline needs at least two knots with values".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSpec("spline knots must be strictly increasing".into()));
        }
        // tridiagonal system for interior second derivatives (Thomas algorithm)
        let mut second = vec![0.0; n];
        if n > 2 {
            let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for k in 0..m {
                let i = k + 1;
                diag[k] = 2.0 * (h[i - 1] + h[i]);
                upper[k] = h[i];
                rhs[k] = 6.0 * ((values[i + 1] - values[i]) / h[i] - (values[i] - values[i - 1]) / h[i - 1]);
            }
            for k in 1..m {
                let factor = h[k] / diag[k - 1];
                diag[k] -= factor * upper[k - 1];
                rhs[k] -= factor * rhs[k - 1];
            }
            second[m] = rhs[m - 1] / diag[m - 1];
            for k in (0..m - 1).rev() {
                second[k + 1] = (rhs[k] - upper[k] * second[k + 2]) / diag[k];
            }
        }
        Ok(Self { knots, values, second })
    }

    fn piece(&self, t: f64) -> usize {
        let n = self.knots.len();
        match self.knots.binary_search_by(|k| k.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        let i = self.piece(t);
        let (t0, t1) = (self.knots[i], self.knots[i + 1]);
        let h = t1 - t0;
        let (a, b) = ((t1 - t) / h, (t - t0) / h);
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h * h / 6.0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let i = self.piece(t);
        let (t0, t1) = (self.knots[i], self.knots[i + 1]);
        let h = t1 - t0;
        let (a, b) = ((t1 - t) / h, (t - t0) / h);
        (self.values[i + 1] - self.values[i]) / h
            + ((1.0 - 3.0 * a * a) * self.second[i] + (3.0 * b * b - 1.0) * self.second[i + 1]) * h / 6.0
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn knot_values(&self) -> &[f64] {
        &self.values
    }
}

/// Clipped spline target: value and time derivative (0 where clipped).
#[derive(Debug, Clone)]
pub struct DesiredControl {
    pub spline: CubicSpline,
    /// Indices of the fine-grid boundaries used as interior knots.
    pub jump_indices: Vec<usize>,
}

impl DesiredControl {
    pub fn value(&self, t: f64) -> f64 {
        self.spline.value(t).clamp(0.0, 1.0)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let v = self.spline.value(t);
        if (0.0..=1.0).contains(&v) {
            self.spline.derivative(t)
        } else {
            0.0
        }
    }

    pub fn is_clipped_at(&self, t: f64) -> bool {
        !(0.0..=1.0).contains(&self.spline.value(t))
    }
}

/// Draws the knots and builds the spline for `spec`.
pub fn desired_control(spec: &InstanceSpec) -> Result<DesiredControl> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fine = TimePartition::uniform(spec.horizon, spec.nt_fine)?;
    let mut jump_indices: Vec<usize> =
        sample(&mut rng, spec.nt_fine - 1, spec.sigma).into_iter().map(|i| i + 1).collect();
    jump_indices.sort_unstable();
    let mut knots = vec![0.0];
    knots.extend(jump_indices.iter().map(|&i| fine.boundaries()[i]));
    knots.push(spec.horizon);
    let mut values = vec![0.0];
    values.extend((0..spec.sigma).map(|_| rng.gen::<f64>()));
    values.push(0.5);
    Ok(DesiredControl { spline: CubicSpline::natural(knots, values)?, jump_indices })
}

/// `u_d` sampled at the midpoints of the fine grid, clipped to `[0, 1]`.
pub fn spline_control(spec: &InstanceSpec) -> Result<Control> {
    let target = desired_control(spec)?;
    let fine = TimePartition::uniform(spec.horizon, spec.nt_fine)?;
    let samples = (0..spec.nt_fine)
        .map(|i| {
            let (a, b) = fine.interval(i);
            target.value(0.5 * (a + b))
        })
        .collect();
    Control::new(fine, 1, samples)
}

/// `∫_Ω ψ sin(πx₁) sin(πx₂)` by the order-3 rule on a 64 × 64 cell mesh.
pub fn form_integral() -> f64 {
    let mesh = SpatialMesh::unit_square(65).expect("valid mesh size");
    mesh.integrate_with(|x, y| quadratic_bump(x, y) * (PI * x).sin() * (PI * y).sin(), &quadrature::gauss_order3())
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub spec: InstanceSpec,
    pub target: DesiredControl,
    /// `u_d` on the fine grid.
    pub desired_control: Control,
    /// `y_d` at the fine-grid boundaries, interior nodes only.
    pub desired_state: Trajectory,
    pub y0: Vec<f64>,
    /// `1 / ∫ψ sin sin`.
    pub c: f64,
    /// True if the spline left `[0, 1]` somewhere on the fine grid.
    pub clipped: bool,
    pub mesh: Arc<SpatialMesh>,
    pub forms: FormFunctions,
}

impl Instance {
    pub fn build(spec: &InstanceSpec) -> Result<Self> {
        spec.validate()?;
        let mesh = Arc::new(SpatialMesh::unit_square(spec.nx)?);
        let forms = match spec.form {
            FormKind::QuadraticBump => FormFunctions::quadratic_bump(&mesh),
        };
        let fine = TimePartition::uniform(spec.horizon, spec.nt_fine)?;
        let ops = HeatOperators::new(Arc::clone(&mesh), fine, forms)?;
        Self::build_with(spec, &ops)
    }

    /// Builds on already assembled fine-grid operators.
    pub fn build_with(spec: &InstanceSpec, ops: &HeatOperators) -> Result<Self> {
        spec.validate()?;
        if ops.partition().num_intervals() != spec.nt_fine
            || (ops.partition().horizon() - spec.horizon).abs() > 1e-12 * spec.horizon
        {
            return Err(Error::PartitionMismatch("operators are not on the fine grid of the spec".into()));
        }
        if ops.mesh().nodes_per_side() != spec.nx {
            return Err(Error::InvalidMesh("operators are not on the mesh of the spec".into()));
        }
        let target = desired_control(spec)?;
        let desired_control = spline_control(spec)?;
        let y0 = vec![0.0; ops.dim()];
        let c = 1.0 / form_integral();
        let alpha = spec.alpha;

        let mut desired_state = ops.solve_forward(&desired_control, &y0)?;
        let eigen = ops.interpolate(|x, y| (PI * x).sin() * (PI * y).sin());
        let two_pi2 = 2.0 * PI * PI;
        let mut clipped = false;
        for (k, &t) in ops.partition().boundaries().iter().enumerate() {
            let ud = target.value(t);
            clipped |= target.is_clipped_at(t);
            // ∂_t p⋆ + Δp⋆ = −αc (u_d' − 2π² (u_d − ½)) sin sin
            let amp = -alpha * c * (target.derivative(t) - two_pi2 * (ud - 0.5));
            for (y, e) in desired_state.level_mut(k).iter_mut().zip(&eigen) {
                *y += amp * e;
            }
        }
        for i in 0..spec.nt_fine {
            let (a, b) = ops.partition().interval(i);
            clipped |= target.is_clipped_at(0.5 * (a + b));
        }

        Ok(Self {
            spec: spec.clone(),
            target,
            desired_control,
            desired_state,
            y0,
            c,
            clipped,
            mesh: ops.mesh_arc(),
            forms: ops.forms().clone(),
        })
    }

    fn stride(&self, nt: usize) -> Result<usize> {
        if nt == 0 || !self.spec.nt_fine.is_multiple_of(nt) {
            return Err(Error::InvalidParameter(format!(
                "N_t = {nt} must divide the fine grid size {}",
                self.spec.nt_fine
            )));
        }
        Ok(self.spec.nt_fine / nt)
    }

    pub fn grid(&self, nt: usize) -> Result<TimePartition> {
        self.stride(nt)?;
        TimePartition::uniform(self.spec.horizon, nt)
    }

    /// `y_d` at the boundaries of the `nt`-interval grid.
    pub fn desired_state_on(&self, nt: usize) -> Result<Trajectory> {
        self.desired_state.subsample(self.stride(nt)?)
    }

    /// `u_d` averaged over the intervals of the `nt`-interval grid.
    pub fn desired_control_on(&self, nt: usize) -> Result<Control> {
        let stride = self.stride(nt)?;
        let coeffs = self
            .desired_control
            .coeffs()
            .chunks(stride)
            .map(|c| c.iter().sum::<f64>() / stride as f64)
            .collect();
        Control::new(self.grid(nt)?, 1, coeffs)
    }

    pub fn operators(&self, nt: usize) -> Result<HeatOperators> {
        HeatOperators::new(Arc::clone(&self.mesh), self.grid(nt)?, self.forms.clone())
    }

    pub fn problem(&self, nt: usize) -> Result<TrackingProblem> {
        self.problem_on(Arc::new(self.operators(nt)?), self.spec.alpha)
    }

    /// Tracking problem on given operators, which must use this instance's
    /// mesh and a grid dividing the fine grid.
    pub fn problem_on(&self, ops: Arc<HeatOperators>, alpha: f64) -> Result<TrackingProblem> {
        let desired = self.desired_state_on(ops.num_intervals())?;
        if desired.dim() != ops.dim() {
            return Err(Error::DimensionMismatch { expected: ops.dim(), got: desired.dim() });
        }
        TrackingProblem::new(ops, desired, &self.y0, alpha)
    }

    /// Dense text dump: a header with the spec, then one line per fine time
    /// boundary with `t` and the interior nodal values of `y_d`.
    pub fn write_dense(&self, out: &mut dyn Write) -> std::io::Result<()> {
        for line in self.spec.to_key_value().lines() {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "# c={}", self.c)?;
        writeln!(out, "# clipped={}", self.clipped)?;
        let knots: Vec<String> = self.target.spline.knots().iter().map(|t| t.to_string()).collect();
        writeln!(out, "# knots={}", knots.join(","))?;
        let ud: Vec<String> = self.desired_control.coeffs().iter().map(|v| v.to_string()).collect();
        writeln!(out, "# u_d={}", ud.join(","))?;
        debug_assert_eq!(self.desired_state.layout(), TimeLayout::Nodal);
        let fine = TimePartition::uniform(self.spec.horizon, self.spec.nt_fine).map_err(std::io::Error::other)?;
        for (k, t) in fine.boundaries().iter().enumerate() {
            write!(out, "{t}")?;
            for v in self.desired_state.level(k) {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
