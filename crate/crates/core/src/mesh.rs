//! Structured P1 triangulation of the unit square and finite element assembly.

use crate::error::{Error, Result};

/// Quadrature rules on the reference triangle `{x, y ≥ 0, x + y ≤ 1}`.
/// Weights sum to the reference area 1/2.
pub mod quadrature {
    #[derive(Debug, Clone)]
    pub struct TriangleRule {
        pub points: Vec<[f64; 2]>,
        pub weights: Vec<f64>,
    }

    /// Conical product of 2-point Gauss–Jacobi (weight `1 - s`) and 2-point
    /// Gauss–Legendre rules; exact for polynomials of total degree 3.
    pub fn gauss_order3() -> TriangleRule {
        // Gauss–Jacobi nodes are the roots of s² - 4s/5 + 1/10.
        let r = 0.06f64.sqrt();
        let s = [0.4 - r, 0.4 + r];
        // w0 + w1 = 1/2 and w0 s0 + w1 s1 = 1/6
        let w1 = (1.0 / 6.0 - 0.5 * s[0]) / (s[1] - s[0]);
        let ws = [0.5 - w1, w1];
        let g = 0.5 / 3f64.sqrt();
        let t = [0.5 - g, 0.5 + g];
        let mut points = Vec::with_capacity(4);
        let mut weights = Vec::with_capacity(4);
        for a in 0..2 {
            for b in 0..2 {
                points.push([s[a], (1.0 - s[a]) * t[b]]);
                weights.push(ws[a] * 0.5);
            }
        }
        TriangleRule { points, weights }
    }

    /// Seven-point Radon rule, exact for total degree 5.
    pub fn radon_degree5() -> TriangleRule {
        let sq = 15f64.sqrt();
        let a = (6.0 - sq) / 21.0;
        let b = (9.0 + 2.0 * sq) / 21.0;
        let c = (6.0 + sq) / 21.0;
        let d = (9.0 - 2.0 * sq) / 21.0;
        let wa = (155.0 - sq) / 2400.0;
        let wc = (155.0 + sq) / 2400.0;
        TriangleRule {
            points: vec![[1.0 / 3.0, 1.0 / 3.0], [a, a], [b, a], [a, b], [c, c], [d, c], [c, d]],
            weights: vec![9.0 / 80.0, wa, wa, wa, wc, wc, wc],
        }
    }
}

/// Symmetric sparse matrix in compressed row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<_> = triplets.to_vec();
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(sorted.len());
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &sorted {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `x ↦ a·(self x) + b·(other x)` for operators sharing a sparsity pattern
    /// or not; the result is assembled.
    pub fn linear_combination(&self, a: f64, other: &SparseOperator, b: f64) -> SparseOperator {
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.n {
            triplets.extend(self.row(i).map(|(j, v)| (i, j, a * v)));
            triplets.extend(other.row(i).map(|(j, v)| (i, j, b * v)));
        }
        SparseOperator::from_triplets(self.n, &triplets)
    }

    /// Largest `i - j` over stored entries with `j <= i`.
    pub fn lower_bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.saturating_sub(j)))
            .max()
            .unwrap_or(0)
    }

    /// Principal submatrix on `keep` (indices in the new ordering follow `keep`).
    pub fn restrict(&self, keep: &[usize]) -> SparseOperator {
        let mut new_index = vec![usize::MAX; self.n];
        for (k, &i) in keep.iter().enumerate() {
            new_index[i] = k;
        }
        let mut triplets = Vec::new();
        for (k, &i) in keep.iter().enumerate() {
            for (j, v) in self.row(i) {
                if new_index[j] != usize::MAX {
                    triplets.push((k, new_index[j], v));
                }
            }
        }
        SparseOperator::from_triplets(keep.len(), &triplets)
    }

    pub fn max_asymmetry(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }
}

/// Uniform triangulation of `[0, 1]²` with `n × n` nodes; every square cell
/// is cut along its `(0,0)–(1,1)` diagonal.
#[derive(Debug, Clone)]
pub struct SpatialMesh {
    nodes_per_side: usize,
    coords: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    interior: Vec<usize>,
}

impl SpatialMesh {
    pub fn unit_square(nodes_per_side: usize) -> Result<Self> {
        let n = nodes_per_side;
        if n < 3 {
            return Err(Error::InvalidMesh(format!("need at least 3 nodes per side, got {n}")));
        }
        let h = 1.0 / (n - 1) as f64;
        let mut coords = Vec::with_capacity(n * n);
        let mut boundary = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                coords.push([ix as f64 * h, iy as f64 * h]);
                boundary.push(ix == 0 || iy == 0 || ix == n - 1 || iy == n - 1);
            }
        }
        let mut triangles = Vec::with_capacity(2 * (n - 1) * (n - 1));
        for iy in 0..n - 1 {
            for ix in 0..n - 1 {
                let v00 = iy * n + ix;
                let v10 = v00 + 1;
                let v01 = v00 + n;
                let v11 = v01 + 1;
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        let interior = (0..n * n).filter(|&i| !boundary[i]).collect();
        Ok(Self { nodes_per_side: n, coords, triangles, boundary, interior })
    }

    pub fn nodes_per_side(&self) -> usize {
        self.nodes_per_side
    }

    pub fn mesh_size(&self) -> f64 {
        1.0 / (self.nodes_per_side - 1) as f64
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    /// Indices of the non-boundary nodes, which carry the unknowns.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn num_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn restrict_to_interior(&self, full: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&i| full[i]).collect()
    }

    /// Extension by zero of interior values to all nodes.
    pub fn extend_from_interior(&self, interior: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.num_nodes()];
        for (&i, &v) in self.interior.iter().zip(interior) {
            full[i] = v;
        }
        full
    }

    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.coords.iter().map(|&[x, y]| f(x, y)).collect()
    }

    fn triangle_geometry(&self, t: &[usize; 3]) -> ([f64; 2], [[f64; 2]; 2], f64) {
        let p0 = self.coords[t[0]];
        let p1 = self.coords[t[1]];
        let p2 = self.coords[t[2]];
        let e1 = [p1[0] - p0[0], p1[1] - p0[1]];
        let e2 = [p2[0] - p0[0], p2[1] - p0[1]];
        let det = e1[0] * e2[1] - e1[1] * e2[0];
        (p0, [e1, e2], det)
    }

    /// Signed areas of all triangles.
    pub fn triangle_areas(&self) -> Vec<f64> {
        self.triangles.iter().map(|t| 0.5 * self.triangle_geometry(t).2).collect()
    }

    /// `∫ f φ_i dx` for every node, using the given rule on each triangle.
    pub fn load_vector_with(
        &self,
        f: impl Fn(f64, f64) -> f64,
        rule: &quadrature::TriangleRule,
    ) -> Vec<f64> {
        let mut out = vec![0.0; self.num_nodes()];
        for t in &self.triangles {
            let (p0, [e1, e2], det) = self.triangle_geometry(t);
            for (q, w) in rule.points.iter().zip(&rule.weights) {
                let x = p0[0] + q[0] * e1[0] + q[1] * e2[0];
                let y = p0[1] + q[0] * e1[1] + q[1] * e2[1];
                let fv = f(x, y) * w * det;
                let phi = [1.0 - q[0] - q[1], q[0], q[1]];
                for a in 0..3 {
                    out[t[a]] += fv * phi[a];
                }
            }
        }
        out
    }

    /// `∫ f dx` with the given rule.
    pub fn integrate_with(&self, f: impl Fn(f64, f64) -> f64, rule: &quadrature::TriangleRule) -> f64 {
        let mut total = 0.0;
        for t in &self.triangles {
            let (p0, [e1, e2], det) = self.triangle_geometry(t);
            for (q, w) in rule.points.iter().zip(&rule.weights) {
                let x = p0[0] + q[0] * e1[0] + q[1] * e2[0];
                let y = p0[1] + q[0] * e1[1] + q[1] * e2[1];
                total += f(x, y) * w * det;
            }
        }
        total
    }

    /// `‖u_h - f‖_{L²(Ω)}` for a nodal P1 function `u_h` (all nodes),
    /// evaluated with the degree-5 rule.
    pub fn l2_error(&self, nodal: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
        let rule = quadrature::radon_degree5();
        let mut total = 0.0;
        for t in &self.triangles {
            let (p0, [e1, e2], det) = self.triangle_geometry(t);
            for (q, w) in rule.points.iter().zip(&rule.weights) {
                let x = p0[0] + q[0] * e1[0] + q[1] * e2[0];
                let y = p0[1] + q[0] * e1[1] + q[1] * e2[1];
                let uh = nodal[t[0]] * (1.0 - q[0] - q[1]) + nodal[t[1]] * q[0] + nodal[t[2]] * q[1];
                let d = uh - f(x, y);
                total += d * d * w * det;
            }
        }
        total.sqrt()
    }
}

/// Mass and stiffness matrices over all nodes, before boundary elimination.
pub fn assemble_full(mesh: &SpatialMesh) -> Result<(SparseOperator, SparseOperator)> {
    let mut mass = Vec::with_capacity(9 * mesh.triangles.len());
    let mut stiff = Vec::with_capacity(9 * mesh.triangles.len());
    for (k, t) in mesh.triangles.iter().enumerate() {
        let (_, [e1, e2], det) = mesh.triangle_geometry(t);
        if !(det > 0.0) {
            return Err(Error::InvalidMesh(format!("triangle {k} is degenerate or inverted")));
        }
        let area = 0.5 * det;
        // gradients of barycentric coordinates: rows of the inverse Jacobian
        let g1 = [e2[1] / det, -e2[0] / det];
        let g2 = [-e1[1] / det, e1[0] / det];
        let grads = [[-g1[0] - g2[0], -g1[1] - g2[1]], g1, g2];
        for a in 0..3 {
            for b in 0..3 {
                let m = if a == b { area / 6.0 } else { area / 12.0 };
                mass.push((t[a], t[b], m));
                let s = area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                stiff.push((t[a], t[b], s));
            }
        }
    }
    let n = mesh.num_nodes();
    Ok((SparseOperator::from_triplets(n, &mass), SparseOperator::from_triplets(n, &stiff)))
}

/// Mass and stiffness matrices on the interior unknowns (homogeneous
/// Dirichlet data eliminated).
pub fn assemble(mesh: &SpatialMesh) -> Result<(SparseOperator, SparseOperator)> {
    let (m, k) = assemble_full(mesh)?;
    Ok((m.restrict(mesh.interior_nodes()), k.restrict(mesh.interior_nodes())))
}

/// `∫ f φ_i dx` for every node via the order-3 Gauss rule.
pub fn load_vector(mesh: &SpatialMesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    mesh.load_vector_with(f, &quadrature::gauss_order3())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, BandedCholesky};
    use std::f64::consts::PI;

    fn poly_integral(a: u32, b: u32) -> f64 {
        // ∫_ref x^a y^b = a! b! / (a + b + 2)!
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        fact(a) * fact(b) / fact(a + b + 2)
    }

    #[test]
    fn order3_rule_is_exact_to_degree_three() {
        for rule in [quadrature::gauss_order3(), quadrature::radon_degree5()] {
            for a in 0..=3u32 {
                for b in 0..=(3 - a) {
                    let q: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                        .sum();
                    assert!((q - poly_integral(a, b)).abs() < 1e-15, "x^{a} y^{b}");
                }
            }
        }
    }

    #[test]
    fn radon_rule_is_exact_to_degree_five() {
        let rule = quadrature::radon_degree5();
        for a in 0..=5u32 {
            for b in 0..=(5 - a) {
                let q: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                    .sum();
                assert!((q - poly_integral(a, b)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mesh_geometry() {
        let mesh = SpatialMesh::unit_square(5).unwrap();
        let areas = mesh.triangle_areas();
        assert!(areas.iter().all(|&a| a > 0.0));
        assert!((areas.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for (i, &[x, y]) in mesh.coords().iter().enumerate() {
            let on_edge = x == 0.0 || y == 0.0 || x == 1.0 || y == 1.0;
            assert_eq!(on_edge, mesh.is_boundary(i));
        }
        assert_eq!(mesh.num_interior(), 9);
        assert!(SpatialMesh::unit_square(2).is_err());
    }

    #[test]
    fn mass_rows_sum_to_area_and_stiffness_kills_constants() {
        let mesh = SpatialMesh::unit_square(7).unwrap();
        let (m, k) = assemble_full(&mesh).unwrap();
        let ones = vec![1.0; mesh.num_nodes()];
        assert!((m.apply(&ones).iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(k.apply(&ones).iter().all(|v| v.abs() < 1e-12));
        assert!(m.max_asymmetry() < 1e-16);
        assert!(k.max_asymmetry() < 1e-14);
    }

    #[test]
    fn reduced_operators_are_positive_definite() {
        let mesh = SpatialMesh::unit_square(6).unwrap();
        let (m, k) = assemble(&mesh).unwrap();
        assert_eq!(m.dim(), 16);
        BandedCholesky::factor(&m).unwrap();
        BandedCholesky::factor(&k).unwrap();
    }

    #[test]
    fn smallest_dirichlet_eigenvalue() {
        let mesh = SpatialMesh::unit_square(30).unwrap();
        let (m, k) = assemble(&mesh).unwrap();
        let chol = BandedCholesky::factor(&k).unwrap();
        let mut x = vec![1.0; m.dim()];
        let mut lambda = 0.0;
        for _ in 0..200 {
            let mut y = m.apply(&x);
            chol.solve_in_place(&mut y);
            let scale = dot(&y, &m.apply(&y)).sqrt();
            x = y.iter().map(|v| v / scale).collect();
            lambda = dot(&x, &k.apply(&x)) / dot(&x, &m.apply(&x));
        }
        let exact = 2.0 * PI * PI;
        assert!((lambda - exact).abs() / exact < 0.02, "λ = {lambda}");
    }

    #[test]
    fn load_vector_constants() {
        let mesh = SpatialMesh::unit_square(9).unwrap();
        assert!(load_vector(&mesh, |_, _| 0.0).iter().all(|&v| v == 0.0));
        assert!((load_vector(&mesh, |_, _| 1.0).iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn load_vector_of_bump_matches_degree5_rule() {
        let mesh = SpatialMesh::unit_square(30).unwrap();
        let psi = |x: f64, y: f64| 1.5 - 2.0 * (x - 0.5).powi(2) - 2.0 * (y - 0.5).powi(2);
        let a = load_vector(&mesh, psi);
        let b = mesh.load_vector_with(psi, &quadrature::radon_degree5());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-6 * y.abs());
        }
    }

    #[test]
    fn load_vector_is_exact_for_affine_data() {
        let mesh = SpatialMesh::unit_square(5).unwrap();
        let (m, _) = assemble_full(&mesh).unwrap();
        let f = |x: f64, y: f64| 2.0 + 3.0 * x - y;
        let nodal = mesh.interpolate(f);
        let expected = m.apply(&nodal);
        let got = load_vector(&mesh, f);
        for (x, y) in got.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn poisson_solve_converges_at_second_order() {
        let exact = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
        let mut errors = Vec::new();
        for n in [9, 17, 33] {
            let mesh = SpatialMesh::unit_square(n).unwrap();
            let (_, k) = assemble(&mesh).unwrap();
            let rhs = load_vector(&mesh, |x, y| 2.0 * PI * PI * exact(x, y));
            let mut u = mesh.restrict_to_interior(&rhs);
            BandedCholesky::factor(&k).unwrap().solve_in_place(&mut u);
            errors.push(mesh.l2_error(&mesh.extend_from_interior(&u), exact));
        }
        assert!(errors[0] / errors[1] > 3.5, "{errors:?}");
        assert!(errors[1] / errors[2] > 3.5, "{errors:?}");
    }
}
