//! Second-order minimum energy filter of kinematic order m.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::integrators::{
    lie_midpoint_step, min_eigenvalue, riccati_step_with_fallback, symmetrize, FixedPointOptions,
    RiccatiCoefficients, RiccatiOptions,
};
use crate::lie_core::{ad_se_vec, gamma_tilde, gamma_tilde_star, GroupElement};
use crate::observation::{frame_gradient, frame_terms, Frame, ObsWeight};

pub const MAX_ORDER: usize = 8;

/// Diagonal `(s1, s1, s1, s2, s2, s2)` of a weight block.
pub fn weight_diagonal(s1: f64, s2: f64) -> Vector6<f64> {
    Vector6::new(s1, s1, s1, s2, s2, s2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub order: usize,
    pub alpha: f64,
    /// Diagonals of the model weight blocks `S_1 … S_m`.
    pub s_blocks: Vec<Vector6<f64>>,
    pub q: ObsWeight,
    pub delta: f64,
    pub fixed_point: FixedPointOptions,
    pub riccati: RiccatiOptions,
}

impl FilterConfig {
    /// α = 2, δ = 1/50, s1 = 1e-2, s2 = 1e-5 for every block, Q = (0.1/n) I.
    pub fn defaults(order: usize, n_obs: usize) -> Self {
        FilterConfig {
            order,
            alpha: 2.0,
            s_blocks: vec![weight_diagonal(1e-2, 1e-5); order],
            q: ObsWeight::image_scaled(0.1 / n_obs.max(1) as f64),
            delta: 1.0 / 50.0,
            fixed_point: FixedPointOptions::default(),
            riccati: RiccatiOptions::default(),
        }
    }

    pub fn with_weights(mut self, s1: f64, s2: f64) -> Self {
        self.s_blocks = vec![weight_diagonal(s1, s2); self.order];
        self
    }

    pub fn dim(&self) -> usize {
        6 * self.order
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.order > MAX_ORDER {
            return Err(Error::Config(format!("order {} outside 1..={MAX_ORDER}", self.order)));
        }
        if self.s_blocks.len() != self.order {
            return Err(Error::Config(format!(
                "{} weight blocks given for order {}",
                self.s_blocks.len(),
                self.order
            )));
        }
        if self.s_blocks.iter().flat_map(|b| b.iter()).any(|s| !(*s > 0.0)) {
            return Err(Error::Config("weight blocks must be positive definite".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config("delta must be positive".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("alpha must be nonnegative".into()));
        }
        Ok(())
    }

    /// `S⁻¹ = blockdiag(S_1 … S_m)⁻¹`.
    pub fn s_inverse(&self) -> DMatrix<f64> {
        let diag = DVector::from_iterator(
            self.dim(),
            self.s_blocks.iter().flat_map(|b| b.iter().map(|s| 1.0 / s)),
        );
        DMatrix::from_diagonal(&diag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub g: GroupElement,
    pub p: DMatrix<f64>,
    pub t: f64,
}

impl FilterState {
    /// `G = Id`, `P = I`.
    pub fn initial(order: usize) -> Self {
        FilterState {
            g: GroupElement::identity(order),
            p: DMatrix::identity(6 * order, 6 * order),
            t: 0.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let asym = (&self.p - self.p.transpose()).norm();
        if asym >= 1e-9 {
            return Err(Error::RiccatiSolveFailed {
                reason: format!("P lost symmetry ({asym:e})"),
            });
        }
        let lam = min_eigenvalue(&self.p);
        if lam < 1e-12 {
            return Err(Error::RiccatiSolveFailed {
                reason: format!("P lost definiteness (min eigenvalue {lam:e})"),
            });
        }
        Ok(())
    }
}

/// `vec_g f(G) = (v_1, v_2, …, v_{m−1}, 0)`.
pub fn f_kinematic(g: &GroupElement) -> DVector<f64> {
    let mut out = DVector::zeros(g.dim());
    for (i, v) in g.velocities.iter().enumerate() {
        out.rows_mut(6 * i, 6).copy_from(v);
    }
    out
}

fn pad(head: &Vector6<f64>, dim: usize) -> DVector<f64> {
    let mut out = DVector::zeros(dim);
    out.rows_mut(0, 6).copy_from(head);
    out
}

/// `r_t = (vec_se Σ_k pr_se A_k(E), 0)`.
pub fn r_t(g: &GroupElement, frame: &Frame, q: &ObsWeight) -> Result<DVector<f64>> {
    Ok(pad(&frame_gradient(&g.pose, frame, q)?, g.dim()))
}

fn first_velocity(g: &GroupElement) -> Vector6<f64> {
    g.velocities.first().copied().unwrap_or_else(Vector6::zeros)
}

/// `Ψ = ad(v_1) + Γ̃*_{z}` where `z` is the SE(3) part of the state
/// correction `(G⁻¹Ġ − f(G)) = −P r`.
pub fn psi(g: &GroupElement, p: &DMatrix<f64>, r: &DVector<f64>) -> Matrix6<f64> {
    let correction = -(p * r);
    let gs = gamma_tilde_star(&correction.rows(0, 6).into_owned());
    ad_se_vec(&first_velocity(g)) + Matrix6::from_fn(|i, j| gs[(i, j)])
}

/// Shift matrix with identity blocks on the block superdiagonal.
pub fn shift_matrix(order: usize) -> DMatrix<f64> {
    let n = 6 * order;
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(6) {
        s[(i, i + 6)] = 1.0;
    }
    s
}

/// `C = ((−Ψ, 1, …), 0)`: `−Ψ` in the leading block plus the shift.
pub fn c_matrix(g: &GroupElement, p: &DMatrix<f64>, r: &DVector<f64>) -> DMatrix<f64> {
    let mut c = shift_matrix(g.order());
    c.view_mut((0, 0), (6, 6)).copy_from(&(-psi(g, p, r)));
    c
}

/// `B = ad_g(f(G)) + Γ̃*_{−P r}`, the linearisation of the state correction;
/// `C = shift − B`.
pub fn b_matrix(g: &GroupElement, p: &DMatrix<f64>, r: &DVector<f64>) -> DMatrix<f64> {
    crate::lie_core::ad_g_vec(&f_kinematic_head(g)) + gamma_tilde_star(&(-(p * r)))
}

fn f_kinematic_head(g: &GroupElement) -> DVector<f64> {
    pad(&first_velocity(g), g.dim())
}

/// `Σ_k (Γ̃_{vec pr A_k} + D_k)` in the leading block, zero elsewhere.
pub fn hessian_block(g: &GroupElement, frame: &Frame, q: &ObsWeight) -> Result<DMatrix<f64>> {
    let terms = frame_terms(&g.pose, frame, q)?;
    Ok(hessian_from_terms(&terms.gradient, &terms.d_sum, g.dim()))
}

fn hessian_from_terms(gradient: &Vector6<f64>, d_sum: &Matrix6<f64>, dim: usize) -> DMatrix<f64> {
    let mut h = gamma_tilde(&pad(gradient, dim));
    let mut block = h.view_mut((0, 0), (6, 6));
    block += d_sum;
    h
}

/// Coefficients of `Ṗ = A P + P Aᵀ − P B P + C` frozen at the current state:
/// `A = C_Ψ − α/2`, `B = sym(hessian block)`, `C = S⁻¹`.
pub fn riccati_coefficients(
    state: &FilterState,
    frame: &Frame,
    config: &FilterConfig,
) -> Result<RiccatiCoefficients> {
    let dim = state.g.dim();
    let terms = frame_terms(&state.g.pose, frame, &config.q)?;
    let r = pad(&terms.gradient, dim);
    let h = hessian_from_terms(&terms.gradient, &terms.d_sum, dim);
    let a = c_matrix(&state.g, &state.p, &r) - DMatrix::identity(dim, dim) * (config.alpha / 2.0);
    Ok(RiccatiCoefficients {
        a,
        b: symmetrize(&h),
        c: config.s_inverse(),
    })
}

/// `Ṗ = −αP + S⁻¹ + CP + PCᵀ − P H P`, with the symmetric part of the
/// Hessian block in the quadratic term.
pub fn riccati_rhs(state: &FilterState, frame: &Frame, config: &FilterConfig) -> Result<DMatrix<f64>> {
    Ok(riccati_coefficients(state, frame, config)?.rhs(&state.p))
}

/// `G⁻¹Ġ = f(G) − mat_g(P vec_g r_t)`, returned in `vec_g` coordinates.
pub fn state_rhs(g: &GroupElement, p: &DMatrix<f64>, frame: &Frame, q: &ObsWeight) -> Result<DVector<f64>> {
    Ok(f_kinematic(g) - p * r_t(g, frame, q)?)
}

/// Advances `(G, P)` by one step δ: implicit Lie midpoint for `G` with `P`
/// frozen, implicit Euler for `P` with coefficients frozen at the start state.
pub fn mef_step(state: &FilterState, frame: &Frame, config: &FilterConfig) -> Result<FilterState> {
    if state.g.order() != config.order {
        return Err(Error::DimensionMismatch {
            expected: config.order,
            got: state.g.order(),
        });
    }
    let coeffs = riccati_coefficients(state, frame, config)?;
    let step = lie_midpoint_step(
        &state.g,
        |g| state_rhs(g, &state.p, frame, &config.q),
        config.delta,
        config.fixed_point,
    )?;
    log::trace!("midpoint converged in {} iterations", step.iterations);
    let p = symmetrize(&riccati_step_with_fallback(
        &state.p,
        &coeffs,
        config.delta,
        config.riccati,
    )?);
    let next = FilterState {
        g: step.g,
        p,
        t: state.t + config.delta,
    };
    next.check()?;
    Ok(next)
}

/// Runs the filter over a frame stream, one step per frame. The returned
/// trajectory starts with `initial` and has `frames.len() + 1` entries.
pub fn run_filter(initial: FilterState, frames: &[Frame], config: &FilterConfig) -> Result<Vec<FilterState>> {
    config.validate()?;
    let mut out = Vec::with_capacity(frames.len() + 1);
    out.push(initial);
    for (i, frame) in frames.iter().enumerate() {
        let next = mef_step(out.last().expect("nonempty"), frame, config).map_err(|e| e.at_frame(i + 1))?;
        out.push(next);
    }
    Ok(out)
}
