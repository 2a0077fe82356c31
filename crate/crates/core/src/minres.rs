//! Preconditioned MINRES for symmetric, possibly indefinite systems.
//!
//! Follows the Paige–Saunders recurrences. The operator must be symmetric in
//! the Euclidean inner product and the preconditioner symmetric positive
//! definite; the residual is monitored in the `M⁻¹` norm.

use crate::linalg::dot;

#[derive(Debug, Clone, Copy)]
pub struct MinresConfig {
    /// Relative tolerance on the preconditioned residual norm, measured
    /// against the right-hand side.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MinresConfig {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 2000 }
    }
}

#[derive(Debug, Clone)]
pub struct MinresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Estimated `‖b − Ax‖_{M⁻¹} / ‖b‖_{M⁻¹}`.
    pub relative_residual: f64,
    pub converged: bool,
}

pub fn minres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precondition: impl Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    x0: Option<&[f64]>,
    config: MinresConfig,
) -> MinresOutcome {
    let n = rhs.len();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let bnorm = dot(rhs, &precondition(rhs)).max(0.0).sqrt();
    if bnorm == 0.0 {
        return MinresOutcome { x: vec![0.0; n], iterations: 0, relative_residual: 0.0, converged: true };
    }

    let ax = apply(&x);
    let mut r1: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut y = precondition(&r1);
    let beta1 = dot(&r1, &y).max(0.0).sqrt();
    if beta1 <= config.tol * bnorm {
        return MinresOutcome { x, iterations: 0, relative_residual: beta1 / bnorm, converged: true };
    }

    let mut r2 = r1.clone();
    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];

    for itn in 1..=config.max_iter {
        let s = 1.0 / beta;
        let v: Vec<f64> = y.iter().map(|yi| s * yi).collect();
        y = apply(&v);
        if itn >= 2 {
            let f = beta / oldb;
            y.iter_mut().zip(&r1).for_each(|(yi, ri)| *yi -= f * ri);
        }
        let alfa = dot(&v, &y);
        let f = alfa / beta;
        y.iter_mut().zip(&r2).for_each(|(yi, ri)| *yi -= f * ri);
        r1 = std::mem::replace(&mut r2, y);
        y = precondition(&r2);
        oldb = beta;
        let b2 = dot(&r2, &y);
        if b2 < 0.0 {
            // preconditioner is not positive definite
            return MinresOutcome { x, iterations: itn, relative_residual: phibar / bnorm, converged: false };
        }
        beta = b2.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = (gbar * gbar + beta * beta).sqrt().max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let w1 = std::mem::replace(&mut w2, w);
        w = (0..n).map(|i| (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma).collect();
        x.iter_mut().zip(&w).for_each(|(xi, wi)| *xi += phi * wi);

        let rel = phibar / bnorm;
        if rel <= config.tol || beta == 0.0 {
            return MinresOutcome { x, iterations: itn, relative_residual: rel, converged: true };
        }
    }
    MinresOutcome { x, iterations: config.max_iter, relative_residual: phibar / bnorm, converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn saddle(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = &b * b.transpose() + DMatrix::identity(n, n) * 0.5;
        let g = DMatrix::from_fn(k, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut a = DMatrix::zeros(n + k, n + k);
        a.view_mut((0, 0), (n, n)).copy_from(&h);
        a.view_mut((n, 0), (k, n)).copy_from(&g);
        a.view_mut((0, n), (n, k)).copy_from(&g.transpose());
        a
    }

    #[test]
    fn solves_indefinite_saddle_point_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = saddle(&mut rng, 12, 3);
        let b: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let exact = a.clone().lu().solve(&DVector::from_vec(b.clone())).unwrap();
        let out = minres(
            |v| (&a * DVector::from_column_slice(v)).as_slice().to_vec(),
            |r| r.to_vec(),
            &b,
            None,
            MinresConfig { tol: 1e-13, max_iter: 200 },
        );
        assert!(out.converged);
        for (x, e) in out.x.iter().zip(exact.iter()) {
            assert!((x - e).abs() < 1e-9);
        }
    }

    #[test]
    fn diagonal_preconditioner_and_warm_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 30;
        let diag: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { -(1.0 + i as f64) } else { 1.0 + i as f64 }).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let apply = |v: &[f64]| v.iter().zip(&diag).map(|(x, d)| x * d).collect::<Vec<_>>();
        let prec = |r: &[f64]| r.iter().zip(&diag).map(|(x, d)| x / d.abs()).collect::<Vec<_>>();
        let out = minres(apply, prec, &b, None, MinresConfig::default());
        assert!(out.converged);
        assert!(out.iterations <= 3, "{}", out.iterations);
        let again = minres(apply, prec, &b, Some(&out.x), MinresConfig::default());
        assert_eq!(again.iterations, 0);
    }

    #[test]
    fn zero_rhs() {
        let out = minres(|v| v.to_vec(), |r| r.to_vec(), &[0.0; 4], None, MinresConfig::default());
        assert!(out.converged);
        assert_eq!(out.x, vec![0.0; 4]);
    }
}
