//! Continuous-discrete extended Kalman filter on SE(3) x R^6.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::integrators::{lie_midpoint_step, rk4_step, symmetrize, FixedPointOptions};
use crate::lie_core::{ad_g_vec, ad_se_vec, GroupElement};
use crate::mef::{f_kinematic, shift_matrix};
use crate::observation::{ekf_h_linear, ekf_h_nonlinear, h_k, Frame, ObsWeight};

pub const DIM: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct EkfConfig {
    /// Process noise covariance, 12x12.
    pub s: DMatrix<f64>,
    /// Measurement noise covariance of the summed residual.
    pub q: ObsWeight,
    /// Inner integration step.
    pub delta: f64,
    /// Time between frames.
    pub frame_dt: f64,
}

impl EkfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s.nrows() != DIM || self.s.ncols() != DIM {
            return Err(Error::DimensionMismatch {
                expected: DIM,
                got: self.s.nrows(),
            });
        }
        if !(self.delta > 0.0) || !(self.frame_dt >= 0.0) {
            return Err(Error::Config("EKF steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub g: GroupElement,
    pub p: DMatrix<f64>,
    pub t: f64,
}

impl EkfState {
    pub fn new(g: GroupElement, p: DMatrix<f64>) -> Self {
        assert_eq!(g.order(), 2, "the EKF runs on the constant-velocity model");
        EkfState { g, p, t: 0.0 }
    }
}

fn is_diagonal(s: &DMatrix<f64>) -> bool {
    s.iter()
        .enumerate()
        .all(|(idx, v)| idx % s.nrows() == idx / s.nrows() || *v == 0.0)
}

/// `C(S) = blockdiag(Ξ, Ξ, 0)` with `Ξ = −diag(S22+S33, S11+S33, S11+S22)`.
pub fn c_of_s(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_diagonal(s) {
        return Err(Error::NonDiagonalCovariance);
    }
    let xi = -Matrix3::from_diagonal(&Vector3::new(
        s[(1, 1)] + s[(2, 2)],
        s[(0, 0)] + s[(2, 2)],
        s[(0, 0)] + s[(1, 1)],
    ));
    let mut c = DMatrix::zeros(DIM, DIM);
    c.view_mut((0, 0), (3, 3)).copy_from(&xi);
    c.view_mut((3, 3), (3, 3)).copy_from(&xi);
    Ok(c)
}

/// `J = F − ad_g(f(G)) + C(S)/12`.
pub fn ekf_j(g: &GroupElement, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut head = DVector::zeros(DIM);
    head.rows_mut(0, 6).copy_from(&f_kinematic(g).rows(0, 6));
    Ok(shift_matrix(2) - ad_g_vec(&head) + c_of_s(s)? / 12.0)
}

fn ad_basis(i: usize) -> DMatrix<f64> {
    let mut e = DVector::zeros(DIM);
    e[i] = 1.0;
    ad_g_vec(&e)
}

/// Gaussian expectations `(E[ad(ε) S ad(ε)ᵀ], E[ad(ε)²])` for `ε ~ N(0, S)`.
pub fn expectation_terms(s: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let ads: Vec<DMatrix<f64>> = (0..DIM).map(ad_basis).collect();
    let mut e1 = DMatrix::zeros(DIM, DIM);
    let mut e2 = DMatrix::zeros(DIM, DIM);
    // ad(e_i) vanishes for the velocity coordinates.
    for i in 0..6 {
        for j in 0..6 {
            let sij = s[(i, j)];
            if sij != 0.0 {
                e1 += &ads[i] * s * ads[j].transpose() * sij;
                e2 += &ads[i] * &ads[j] * sij;
            }
        }
    }
    (e1, e2)
}

/// `Φ(v) = blockdiag(Σ_n (−1)ⁿ/(n+1)! ad(v_{1:6})ⁿ, I_6)`.
pub fn phi_jacobian(v: &DVector<f64>) -> DMatrix<f64> {
    let head = Vector6::from_iterator(v.iter().take(6).copied());
    let ad = ad_se_vec(&head);
    let mut sum: nalgebra::Matrix6<f64> = nalgebra::Matrix6::identity();
    let mut term: nalgebra::Matrix6<f64> = nalgebra::Matrix6::identity();
    for n in 1..60 {
        term = -(term * ad) / (n as f64 + 1.0);
        if term.norm() < 1e-15 {
            break;
        }
        sum += term;
    }
    let mut phi = DMatrix::identity(DIM, DIM);
    phi.view_mut((0, 0), (6, 6)).copy_from(&sum);
    phi
}

/// Integrates `Ġ = G f(G)` with the Lie midpoint rule and the covariance ODE
/// with RK4, in substeps of at most `config.delta`.
pub fn ekf_propagate(state: &EkfState, dt: f64, config: &EkfConfig) -> Result<EkfState> {
    if dt <= 0.0 {
        return Ok(state.clone());
    }
    let steps = (dt / config.delta).ceil().max(1.0) as usize;
    let h = dt / steps as f64;
    let (e1, e2) = expectation_terms(&config.s);
    let forcing = &config.s + &e1 * 0.25 + (&e2 * &config.s + &config.s * e2.transpose()) / 12.0;
    let mut g = state.g.clone();
    let mut p = state.p.clone();
    for _ in 0..steps {
        let j = ekf_j(&g, &config.s)?;
        p = symmetrize(&rk4_step(&p, |x| &j * x + x * j.transpose() + &forcing, h));
        g = lie_midpoint_step(&g, |x| Ok(f_kinematic(x)), h, FixedPointOptions::default())?.g;
    }
    Ok(EkfState {
        g,
        p,
        t: state.t + dt,
    })
}

/// Replaces eigenvalues in `[−1e−10, 0)` by zero.
pub fn clip_psd(p: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(p).symmetric_eigen();
    if eig.eigenvalues.min() >= 0.0 {
        return symmetrize(p);
    }
    let vals = eig.eigenvalues.map(|l| if (-1e-10..0.0).contains(&l) { 0.0 } else { l });
    symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()))
}

/// Kalman update with the summed residual `Σ_k (y_k − h_k(G⁻))`.
pub fn ekf_update(state: &EkfState, frame: &Frame, config: &EkfConfig) -> Result<EkfState> {
    let e = &state.g.pose;
    let (h, res, q) = match (frame, &config.q) {
        (Frame::Image(obs), ObsWeight::Image(q)) => {
            let h = ekf_h_nonlinear(e, obs)?;
            let mut res = DVector::zeros(2);
            for o in obs {
                res += o.y - h_k(e, &o.g())?;
            }
            (DMatrix::from_column_slice(2, DIM, h.as_slice()), res, DMatrix::from_column_slice(2, 2, q.as_slice()))
        }
        (Frame::Linear(obs), ObsWeight::Linear(q)) => {
            let a: Vec<_> = obs.iter().map(|o| o.a).collect();
            let h = ekf_h_linear(e, &a);
            let mut res = DVector::zeros(4);
            for o in obs {
                res += o.y - e * o.a;
            }
            (DMatrix::from_column_slice(4, DIM, h.as_slice()), res, DMatrix::from_column_slice(4, 4, q.as_slice()))
        }
        _ => return Err(Error::WeightMismatch),
    };
    if frame.is_empty() {
        return Ok(state.clone());
    }
    let innovation = &h * &state.p * h.transpose() + q;
    let sv = innovation.clone().svd(false, false).singular_values;
    let cond = sv.max() / sv.min();
    if !(cond < 1e12) {
        return Err(Error::SingularInnovation { cond });
    }
    let inv = innovation
        .try_inverse()
        .ok_or(Error::SingularInnovation { cond })?;
    let k = &state.p * h.transpose() * inv;
    let m = &k * res;
    let phi = phi_jacobian(&m);
    let p = &phi * (DMatrix::identity(DIM, DIM) - &k * &h) * &state.p * phi.transpose();
    Ok(EkfState {
        g: state.g.retract(&m)?,
        p: clip_psd(&p),
        t: state.t,
    })
}

/// Propagates over `frame_dt` and updates, once per frame. The trajectory
/// starts with `initial`.
pub fn ekf_run(initial: EkfState, frames: &[Frame], config: &EkfConfig) -> Result<Vec<EkfState>> {
    config.validate()?;
    let mut out = Vec::with_capacity(frames.len() + 1);
    out.push(initial);
    for (i, frame) in frames.iter().enumerate() {
        let prev = out.last().expect("nonempty");
        let next = ekf_propagate(prev, config.frame_dt, config)
            .and_then(|s| ekf_update(&s, frame, config))
            .map_err(|e| e.at_frame(i + 1))?;
        out.push(next);
    }
    Ok(out)
}
