//! Lie midpoint rule, implicit-Euler Riccati step and RK4.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lie_core::GroupElement;

/// Options for the midpoint fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tol: 1e-12,
            max_iter: 100,
        }
    }
}

/// Result of one midpoint step.
#[derive(Debug, Clone, PartialEq)]
pub struct MidpointStep {
    pub g: GroupElement,
    pub xi: DVector<f64>,
    pub iterations: usize,
}

/// `G⁺ = G Exp(Ξ)` with `Ξ = δ rhs(G Exp(Ξ/2))`, solved by fixed-point
/// iteration started at `δ rhs(G)`. Stiff steps, where the iteration does not
/// contract, are handed to a damped Newton solve of the same equation.
pub fn lie_midpoint_step<F>(
    g: &GroupElement,
    mut rhs: F,
    delta: f64,
    opts: FixedPointOptions,
) -> Result<MidpointStep>
where
    F: FnMut(&GroupElement) -> Result<DVector<f64>>,
{
    match midpoint_fixed_point(g, &mut rhs, delta, opts) {
        Ok(step) => Ok(step),
        Err(Error::FixedPointDiverged { iterations, norm }) => {
            log::debug!("fixed point stalled after {iterations} iterations (|xi| = {norm:e}), switching to Newton");
            let mut step = midpoint_newton(g, &mut rhs, delta, opts)?;
            step.iterations += iterations;
            Ok(step)
        }
        Err(e) => Err(e),
    }
}

fn midpoint_fixed_point<F>(
    g: &GroupElement,
    rhs: &mut F,
    delta: f64,
    opts: FixedPointOptions,
) -> Result<MidpointStep>
where
    F: FnMut(&GroupElement) -> Result<DVector<f64>>,
{
    let mut xi = rhs(g)? * delta;
    let limit = (10.0 * xi.norm()).max(1e-6);
    for it in 1..=opts.max_iter {
        let mid = g.retract(&(&xi * 0.5))?;
        let next = rhs(&mid)? * delta;
        let change = (&next - &xi).norm();
        xi = next;
        let norm = xi.norm();
        if !norm.is_finite() || norm > limit {
            return Err(Error::FixedPointDiverged {
                iterations: it,
                norm,
            });
        }
        if change <= opts.tol * norm.max(1.0) {
            return Ok(MidpointStep {
                g: g.retract(&xi)?,
                xi,
                iterations: it,
            });
        }
    }
    Err(Error::FixedPointDiverged {
        iterations: opts.max_iter,
        norm: xi.norm(),
    })
}

/// Newton iteration on `F(Ξ) = Ξ − δ rhs(G Exp(Ξ/2))` with a central-difference
/// Jacobian and backtracking on `|F|`, started at `Ξ = 0`.
fn midpoint_newton<F>(
    g: &GroupElement,
    rhs: &mut F,
    delta: f64,
    opts: FixedPointOptions,
) -> Result<MidpointStep>
where
    F: FnMut(&GroupElement) -> Result<DVector<f64>>,
{
    let n = g.dim();
    let mut residual = |xi: &DVector<f64>| -> Result<DVector<f64>> {
        let mid = g.retract(&(xi * 0.5))?;
        Ok(xi - rhs(&mid)? * delta)
    };
    let mut xi = DVector::zeros(n);
    let mut f = residual(&xi)?;
    let fail = |iterations: usize, xi: &DVector<f64>| Error::FixedPointDiverged {
        iterations,
        norm: xi.norm(),
    };
    for it in 1..=opts.max_iter {
        let h = 1e-6 * xi.norm().max(1e-2);
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut plus = xi.clone();
            plus[j] += h;
            let mut minus = xi.clone();
            minus[j] -= h;
            jac.set_column(j, &((residual(&plus)? - residual(&minus)?) / (2.0 * h)));
        }
        let step = jac.lu().solve(&(-&f)).ok_or_else(|| fail(it, &xi))?;
        let f_norm = f.norm();
        let mut scale = 1.0;
        loop {
            let trial = &xi + &step * scale;
            let f_trial = residual(&trial)?;
            if f_trial.norm() < f_norm || scale < 1e-4 {
                xi = trial;
                f = f_trial;
                break;
            }
            scale *= 0.5;
        }
        if !xi.norm().is_finite() {
            return Err(fail(it, &xi));
        }
        if (&step * scale).norm() <= opts.tol * xi.norm().max(1.0) || f.norm() <= opts.tol * xi.norm().max(1.0) {
            return Ok(MidpointStep {
                g: g.retract(&xi)?,
                xi,
                iterations: it,
            });
        }
    }
    Err(fail(opts.max_iter, &xi))
}

/// Classical fourth-order Runge-Kutta step for a matrix-valued state.
pub fn rk4_step<F>(x: &DMatrix<f64>, mut rhs: F, h: f64) -> DMatrix<f64>
where
    F: FnMut(&DMatrix<f64>) -> DMatrix<f64>,
{
    let k1 = rhs(x);
    let k2 = rhs(&(x + &k1 * (h / 2.0)));
    let k3 = rhs(&(x + &k2 * (h / 2.0)));
    let k4 = rhs(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// `Ṗ = A P + P Aᵀ − P B P + C` with symmetric `B`, `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiCoefficients {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl RiccatiCoefficients {
    pub fn rhs(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a * p + p * self.a.transpose() - p * &self.b * p + &self.c
    }

    fn check(&self) -> Result<()> {
        let n = self.a.nrows();
        for m in [&self.a, &self.b, &self.c] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: m.nrows(),
                });
            }
        }
        let asym = (&self.b - self.b.transpose()).norm() + (&self.c - self.c.transpose()).norm();
        let scale = 1.0 + self.b.norm() + self.c.norm();
        if asym > 1e-10 * scale {
            return Err(Error::RiccatiSolveFailed {
                reason: format!("coefficients B, C are not symmetric (defect {asym:e})"),
            });
        }
        Ok(())
    }
}

pub fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

pub fn min_eigenvalue(p: &DMatrix<f64>) -> f64 {
    symmetrize(p).symmetric_eigenvalues().min()
}

/// Solves `M X + X Mᵀ = W` through a real Schur form of `M`, falling back to
/// the dense Kronecker system if the Schur route fails.
pub fn solve_lyapunov(m: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if let Some(x) = lyapunov_schur(m, w) {
        let res = (m * &x + &x * m.transpose() - w).norm();
        if res.is_finite() && res <= 1e-9 * (1.0 + w.norm()) {
            return Ok(x);
        }
    }
    let id = DMatrix::<f64>::identity(n, n);
    let big = id.kronecker(m) + m.kronecker(&id);
    let rhs = DVector::from_column_slice(w.as_slice());
    let sol = big.lu().solve(&rhs).ok_or_else(|| Error::RiccatiSolveFailed {
        reason: "singular Lyapunov operator".into(),
    })?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

fn lyapunov_schur(m: &DMatrix<f64>, w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let (q, t) = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)?.unpack();
    let f = q.transpose() * w * &q;

    let mut blocks = Vec::new();
    let mut j = 0;
    while j < n {
        if j + 1 < n && t[(j + 1, j)] != 0.0 {
            blocks.push((j, 2));
            j += 2;
        } else {
            blocks.push((j, 1));
            j += 1;
        }
    }

    let mut y = DMatrix::<f64>::zeros(n, n);
    for &(j, size) in blocks.iter().rev() {
        // rhs = F_J − Σ_{K > J} Y_K T_{J,K}ᵀ
        let mut rhs = f.columns(j, size).into_owned();
        let rest = j + size;
        if rest < n {
            rhs -= y.columns(rest, n - rest) * t.view((j, rest), (size, n - rest)).transpose();
        }
        if size == 1 {
            let mut lhs = t.clone();
            for i in 0..n {
                lhs[(i, i)] += t[(j, j)];
            }
            let sol = lhs.lu().solve(&rhs)?;
            y.set_column(j, &sol.column(0));
        } else {
            let s = t.view((j, j), (2, 2)).transpose();
            let mut lhs = DMatrix::<f64>::zeros(2 * n, 2 * n);
            for c in 0..2 {
                lhs.view_mut((c * n, c * n), (n, n)).copy_from(&t);
                for r in 0..2 {
                    for i in 0..n {
                        lhs[(c * n + i, r * n + i)] += s[(r, c)];
                    }
                }
            }
            let b = DVector::from_column_slice(rhs.as_slice());
            let sol = lhs.lu().solve(&b)?;
            y.columns_mut(j, 2)
                .copy_from(&DMatrix::from_column_slice(n, 2, sol.as_slice()));
        }
    }
    Some(&q * y * q.transpose())
}

/// Convergence settings for the Newton-Kleinman ARE solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions {
    /// Residual bound relative to `max(1, |P + δC|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub min_eig: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        RiccatiOptions {
            tol: 1e-10,
            max_iter: 50,
            min_eig: 1e-12,
        }
    }
}

/// One implicit-Euler step `P⁺ = P + δ(A P⁺ + P⁺ Aᵀ − P⁺ B P⁺ + C)`, posed as
/// the algebraic Riccati equation
/// `Ã P⁺ + P⁺ Ãᵀ − P⁺ (δB) P⁺ + (P + δC) = 0`, `Ã = δA − I/2`,
/// and solved by Newton-Kleinman iteration warm-started at `P`. When `P` does
/// not stabilize `Ã − P δB`, Newton restarts from the stabilizing solution
/// given by the matrix sign function of the Hamiltonian.
pub fn riccati_implicit_euler_step(
    p: &DMatrix<f64>,
    coeffs: &RiccatiCoefficients,
    delta: f64,
    opts: RiccatiOptions,
) -> Result<DMatrix<f64>> {
    coeffs.check()?;
    let n = p.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let are = Are {
        at: &coeffs.a * delta - &id * 0.5,
        bt: &coeffs.b * delta,
        ct: p + &coeffs.c * delta,
    };
    let definite = |x: DMatrix<f64>| {
        let lam = min_eigenvalue(&x);
        if lam < opts.min_eig {
            return Err(Error::RiccatiSolveFailed {
                reason: format!("solution not positive definite (min eigenvalue {lam:e})"),
            });
        }
        Ok(x)
    };
    // From a non-stabilizing start Newton can also settle on an indefinite root.
    match are.newton(p.clone(), opts).and_then(definite) {
        Ok(x) => Ok(x),
        Err(first) => {
            log::debug!("warm-started Newton failed ({first}); restarting from the sign-function solution");
            definite(are.newton(are.sign_solution()?, opts)?)
        }
    }
}

/// `Ã X + X Ãᵀ − X B̃ X + C̃ = 0`.
struct Are {
    at: DMatrix<f64>,
    bt: DMatrix<f64>,
    ct: DMatrix<f64>,
}

impl Are {
    fn residual(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.at * x + x * self.at.transpose() - x * &self.bt * x + &self.ct
    }

    fn kleinman_update(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let closed = &self.at - x * &self.bt;
        let w = -(&self.ct + x * &self.bt * x);
        Ok(symmetrize(&solve_lyapunov(&closed, &w)?))
    }

    fn newton(&self, mut x: DMatrix<f64>, opts: RiccatiOptions) -> Result<DMatrix<f64>> {
        let scale = self.ct.norm().max(1.0);
        let mut res = self.residual(&x).norm();
        let mut iterations = 0;
        while res > opts.tol * scale {
            if iterations == opts.max_iter {
                return Err(Error::RiccatiSolveFailed {
                    reason: format!("Newton residual {res:e} after {iterations} iterations"),
                });
            }
            x = self.kleinman_update(&x)?;
            res = self.residual(&x).norm();
            if !res.is_finite() {
                return Err(Error::RiccatiSolveFailed {
                    reason: "Newton iteration produced non-finite values".into(),
                });
            }
            iterations += 1;
        }
        // One polishing step: convergence is quadratic, so this lands near roundoff.
        if res > 0.0 {
            if let Ok(polished) = self.kleinman_update(&x) {
                if self.residual(&polished).norm() < res {
                    x = polished;
                }
            }
        }
        Ok(x)
    }

    /// Stabilizing solution from `W = sign(H)`, `H = [[Ãᵀ, −B̃], [−C̃, −Ã]]`:
    /// the stable invariant subspace `[I; X]` spans the kernel of `W + I`.
    fn sign_solution(&self) -> Result<DMatrix<f64>> {
        let n = self.at.nrows();
        let mut z = DMatrix::zeros(2 * n, 2 * n);
        z.view_mut((0, 0), (n, n)).copy_from(&self.at.transpose());
        z.view_mut((0, n), (n, n)).copy_from(&-&self.bt);
        z.view_mut((n, 0), (n, n)).copy_from(&-&self.ct);
        z.view_mut((n, n), (n, n)).copy_from(&-&self.at);
        let fail = |reason: &str| Error::RiccatiSolveFailed { reason: reason.into() };
        for _ in 0..100 {
            let inv = z.clone().try_inverse().ok_or_else(|| fail("Hamiltonian is singular"))?;
            // determinant scaling speeds up the early iterations
            let det = z.clone().lu().determinant().abs();
            let c = if det > 0.0 && det.is_finite() { det.powf(-1.0 / (2 * n) as f64) } else { 1.0 };
            let next = (&z * c + inv / c) * 0.5;
            let change = (&next - &z).norm();
            z = next;
            if !change.is_finite() {
                return Err(fail("sign iteration produced non-finite values"));
            }
            if change <= 1e-12 * z.norm() {
                break;
            }
        }
        let mut lhs = DMatrix::zeros(2 * n, n);
        lhs.view_mut((0, 0), (n, n)).copy_from(&z.view((0, n), (n, n)));
        lhs.view_mut((n, 0), (n, n)).copy_from(&(z.view((n, n), (n, n)) + DMatrix::identity(n, n)));
        let mut rhs = DMatrix::zeros(2 * n, n);
        rhs.view_mut((0, 0), (n, n)).copy_from(&-(z.view((0, 0), (n, n)) + DMatrix::identity(n, n)));
        rhs.view_mut((n, 0), (n, n)).copy_from(&-z.view((n, 0), (n, n)));
        let x = lhs
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| fail(&format!("least-squares solve failed: {e}")))?;
        Ok(symmetrize(&x))
    }
}

/// Implicit step with one recovery attempt: on failure, an explicit Euler
/// substep of `δ/4` followed by an implicit step over the remaining `3δ/4`.
pub fn riccati_step_with_fallback(
    p: &DMatrix<f64>,
    coeffs: &RiccatiCoefficients,
    delta: f64,
    opts: RiccatiOptions,
) -> Result<DMatrix<f64>> {
    match riccati_implicit_euler_step(p, coeffs, delta, opts) {
        Ok(x) => Ok(x),
        Err(first) => {
            log::warn!("implicit Riccati step failed ({first}); retrying with explicit substep");
            let sub = delta / 4.0;
            let p1 = symmetrize(&(p + coeffs.rhs(p) * sub));
            riccati_implicit_euler_step(&p1, coeffs, delta - sub, opts)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn coeffs(n: usize) -> RiccatiCoefficients {
        RiccatiCoefficients {
            a: DMatrix::zeros(n, n),
            b: DMatrix::zeros(n, n),
            c: DMatrix::zeros(n, n),
        }
    }

    #[test]
    fn trivial_riccati_keeps_p() {
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let out = riccati_implicit_euler_step(&p, &coeffs(3), 0.1, RiccatiOptions::default()).unwrap();
        assert_abs_diff_eq!(out, p, epsilon = 1e-14);
    }

    #[test]
    fn lyapunov_with_complex_eigenvalues() {
        let m = DMatrix::from_row_slice(4, 4, &[
            -1.0, 2.0, 0.3, 0.0, -2.0, -1.0, 0.1, 0.5, 0.0, 0.2, -3.0, 1.0, 0.4, 0.0, -1.5, -0.5,
        ]);
        let w = DMatrix::from_fn(4, 4, |i, j| ((i * 4 + j) as f64).sin());
        let x = solve_lyapunov(&m, &w).unwrap();
        assert_abs_diff_eq!(&m * &x + &x * m.transpose(), w, epsilon = 1e-11);
    }

    #[test]
    fn non_symmetric_coefficients_rejected() {
        let mut c = coeffs(2);
        c.b[(0, 1)] = 1.0;
        let p = DMatrix::identity(2, 2);
        assert!(riccati_implicit_euler_step(&p, &c, 0.1, RiccatiOptions::default()).is_err());
    }

    #[test]
    fn rk4_zero_rhs() {
        let x = DMatrix::from_element(2, 2, 3.0);
        assert_eq!(rk4_step(&x, |y| y * 0.0, 0.5), x);
    }

    #[test]
    fn midpoint_zero_rhs() {
        let g = GroupElement::identity(2);
        let step = lie_midpoint_step(&g, |_| Ok(DVector::zeros(12)), 0.1, FixedPointOptions::default()).unwrap();
        assert_eq!(step.g, g);
    }

    #[test]
    fn midpoint_constant_rhs_is_exact() {
        let g = GroupElement::identity(1);
        let c = DVector::from_vec(vec![0.3, -0.2, 0.1, 1.0, 0.5, -0.5]);
        let step = lie_midpoint_step(&g, |_| Ok(c.clone()), 0.1, FixedPointOptions::default()).unwrap();
        assert_eq!(step.iterations, 1);
        let exact = crate::lie_core::exp_g(&(&c * 0.1), 1).unwrap();
        assert_abs_diff_eq!(step.g.pose, exact.pose, epsilon = 1e-15);
    }
}
