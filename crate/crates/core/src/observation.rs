//! Projective (depth + optical flow) and linear observation models.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix6, SMatrix, Vector2, Vector4, Vector6};

use crate::error::{Error, Result};
use crate::lie_core::{mat_se, pr_se, vec_se, PoseMatrix};

/// Observations with `|kappa|` at or below this are dropped.
pub const KAPPA_MIN: f64 = 1e-9;

/// One depth/flow correspondence in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub pixel: Vector2<f64>,
    pub depth: f64,
    pub y: Vector2<f64>,
}

impl Observation {
    pub fn new(pixel: Vector2<f64>, depth: f64, y: Vector2<f64>) -> Self {
        Observation { pixel, depth, y }
    }

    /// Homogeneous scene point in the previous camera frame.
    pub fn g(&self) -> Vector4<f64> {
        Vector4::new(
            self.depth * self.pixel.x,
            self.depth * self.pixel.y,
            self.depth,
            1.0,
        )
    }
}

/// `y = E a + noise`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearObservation {
    pub a: Vector4<f64>,
    pub y: Vector4<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObsWeight {
    Image(Matrix2<f64>),
    Linear(Matrix4<f64>),
}

impl ObsWeight {
    pub fn image_scaled(scale: f64) -> Self {
        ObsWeight::Image(Matrix2::identity() * scale)
    }

    pub fn linear_scaled(scale: f64) -> Self {
        ObsWeight::Linear(Matrix4::identity() * scale)
    }
}

/// All observations of one frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Image(Vec<Observation>),
    Linear(Vec<LinearObservation>),
}

impl Frame {
    pub fn len(&self) -> usize {
        match self {
            Frame::Image(v) => v.len(),
            Frame::Linear(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn i_hat() -> Matrix2x4<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

fn e3() -> Vector4<f64> {
    Vector4::new(0.0, 0.0, 1.0, 0.0)
}

/// Quantities shared by the projective formulas at a given pose.
struct Projected {
    e_inv: Matrix4<f64>,
    u: Vector4<f64>,
    kappa: f64,
}

fn project(e: &PoseMatrix, g: &Vector4<f64>) -> Result<Projected> {
    // General inverse: ambient derivatives evaluate E + τξ off the group.
    let e_inv = e.try_inverse().ok_or(Error::DegenerateDepth { kappa: 0.0 })?;
    let u = e_inv * g;
    let kappa = u[2];
    if kappa.abs() <= KAPPA_MIN {
        return Err(Error::DegenerateDepth { kappa });
    }
    Ok(Projected { e_inv, u, kappa })
}

impl Projected {
    fn h(&self) -> Vector2<f64> {
        Vector2::new(self.u[0], self.u[1]) / self.kappa
    }

    // M = κ⁻¹Î − κ⁻²(Î E⁻¹ g) e₃ᵀ; the gradient of h along Eη is −M η u.
    fn m(&self) -> Matrix2x4<f64> {
        let k = self.kappa;
        i_hat() / k - (i_hat() * self.u) * e3().transpose() / (k * k)
    }
}

pub fn kappa(e: &PoseMatrix, g: &Vector4<f64>) -> Result<f64> {
    Ok(project(e, g)?.kappa)
}

/// Projection of `g` into the camera with pose `e`.
pub fn h_k(e: &PoseMatrix, g: &Vector4<f64>) -> Result<Vector2<f64>> {
    Ok(project(e, g)?.h())
}

pub fn residual_vec(obs: &Observation, e: &PoseMatrix) -> Result<Vector2<f64>> {
    Ok(obs.y - h_k(e, &obs.g())?)
}

/// `½ |y − h(E)|²_Q`.
pub fn residual(obs: &Observation, e: &PoseMatrix, q: &Matrix2<f64>) -> Result<f64> {
    let r = residual_vec(obs, e)?;
    Ok(0.5 * (r.transpose() * q * r)[0])
}

/// Directional derivative of `h_k` along the ambient direction `xi`.
pub fn dh_k(e: &PoseMatrix, g: &Vector4<f64>, xi: &Matrix4<f64>) -> Result<Vector2<f64>> {
    let p = project(e, g)?;
    let w = p.e_inv * xi * p.u;
    let k = p.kappa;
    Ok((i_hat() * p.u) * (w[2] / (k * k)) - (i_hat() * w) / k)
}

/// Gradient operator of the observation cost: for η in se(3) the derivative
/// of `½|y − h|²_Q` along `E exp(τη)` is `tr(A_kᵀ η)`.
pub fn a_k(e: &PoseMatrix, g: &Vector4<f64>, y: &Vector2<f64>, q: &Matrix2<f64>) -> Result<Matrix4<f64>> {
    let p = project(e, g)?;
    let r = y - p.h();
    Ok(p.m().transpose() * q * r * p.u.transpose())
}

/// Derivative of `A_k` along the ambient direction `E + τ η₁`.
pub fn d_a_k(
    e: &PoseMatrix,
    g: &Vector4<f64>,
    y: &Vector2<f64>,
    q: &Matrix2<f64>,
    eta1: &Matrix4<f64>,
) -> Result<Matrix4<f64>> {
    let p = project(e, g)?;
    let k = p.kappa;
    let ih = i_hat();
    let iu = ih * p.u;
    let w = p.e_inv * eta1 * p.u;
    let e3w = w[2];
    let r = y - p.h();
    let m = p.m();

    let dm = ih * (e3w / (k * k)) - iu * e3().transpose() * (2.0 * e3w / (k * k * k))
        + (ih * w) * e3().transpose() / (k * k);
    let dr = (ih * w) / k - iu * (e3w / (k * k));

    let term1 = dm.transpose() * q * r * p.u.transpose();
    let term2 = m.transpose() * q * dr * p.u.transpose();
    let term3 = -(m.transpose() * q * r * w.transpose());
    Ok(term1 + term2 + term3)
}

pub fn zeta_k(
    e: &PoseMatrix,
    g: &Vector4<f64>,
    y: &Vector2<f64>,
    q: &Matrix2<f64>,
    eta1: &Matrix4<f64>,
) -> Result<Vector6<f64>> {
    Ok(vec_se(&pr_se(&d_a_k(e, g, y, q, eta1)?)))
}

/// `(D_k)_{ij} = ζ_i(E^j)` with `E^j = mat_se(e_j)`.
pub fn d_k(e: &PoseMatrix, g: &Vector4<f64>, y: &Vector2<f64>, q: &Matrix2<f64>) -> Result<Matrix6<f64>> {
    let mut d = Matrix6::zeros();
    for j in 0..6 {
        let col = zeta_k(e, g, y, q, &mat_se(&Vector6::ith(j, 1.0)))?;
        d.set_column(j, &col);
    }
    Ok(d)
}

pub fn a_k_linear(e: &PoseMatrix, a: &Vector4<f64>, y: &Vector4<f64>, q: &Matrix4<f64>) -> Matrix4<f64> {
    e.transpose() * q * (e * a - y) * a.transpose()
}

pub fn zeta_linear(
    e: &PoseMatrix,
    a: &Vector4<f64>,
    y: &Vector4<f64>,
    q: &Matrix4<f64>,
    eta1: &Matrix4<f64>,
) -> Vector6<f64> {
    let m = eta1.transpose() * q * (e * a - y) * a.transpose()
        + e.transpose() * q * eta1 * a * a.transpose();
    vec_se(&pr_se(&m))
}

pub fn d_k_linear(e: &PoseMatrix, a: &Vector4<f64>, y: &Vector4<f64>, q: &Matrix4<f64>) -> Matrix6<f64> {
    let mut d = Matrix6::zeros();
    for j in 0..6 {
        d.set_column(j, &zeta_linear(e, a, y, q, &mat_se(&Vector6::ith(j, 1.0))));
    }
    d
}

pub fn cost_linear(e: &PoseMatrix, obs: &LinearObservation, q: &Matrix4<f64>) -> f64 {
    let r = e * obs.a - obs.y;
    0.5 * (r.transpose() * q * r)[0]
}

/// Summed first- and second-order terms of one frame at pose `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTerms {
    /// `vec_se(Σ_k pr_se A_k)`
    pub gradient: Vector6<f64>,
    /// `Σ_k D_k`
    pub d_sum: Matrix6<f64>,
    pub cost: f64,
    pub used: usize,
    pub dropped: usize,
}

/// Accumulates the per-observation terms. Degenerate observations are dropped
/// and counted rather than zero-filled.
pub fn frame_terms(e: &PoseMatrix, frame: &Frame, weight: &ObsWeight) -> Result<FrameTerms> {
    let mut out = FrameTerms {
        gradient: Vector6::zeros(),
        d_sum: Matrix6::zeros(),
        cost: 0.0,
        used: 0,
        dropped: 0,
    };
    match (frame, weight) {
        (Frame::Image(obs), ObsWeight::Image(q)) => {
            for o in obs {
                let g = o.g();
                let terms = a_k(e, &g, &o.y, q)
                    .and_then(|a| Ok((a, d_k(e, &g, &o.y, q)?, residual(o, e, q)?)));
                match terms {
                    Ok((a, d, c)) => {
                        out.gradient += vec_se(&pr_se(&a));
                        out.d_sum += d;
                        out.cost += c;
                        out.used += 1;
                    }
                    Err(Error::DegenerateDepth { kappa }) => {
                        log::warn!("dropping observation with kappa = {kappa:e}");
                        out.dropped += 1;
                    }
                    Err(err) => return Err(err),
                }
            }
        }
        (Frame::Linear(obs), ObsWeight::Linear(q)) => {
            for o in obs {
                out.gradient += vec_se(&pr_se(&a_k_linear(e, &o.a, &o.y, q)));
                out.d_sum += d_k_linear(e, &o.a, &o.y, q);
                out.cost += cost_linear(e, o, q);
                out.used += 1;
            }
        }
        _ => return Err(Error::WeightMismatch),
    }
    Ok(out)
}

/// `vec_se(Σ_k pr_se A_k)` alone, skipping the second-order terms.
pub fn frame_gradient(e: &PoseMatrix, frame: &Frame, weight: &ObsWeight) -> Result<Vector6<f64>> {
    let mut grad = Vector6::zeros();
    match (frame, weight) {
        (Frame::Image(obs), ObsWeight::Image(q)) => {
            for o in obs {
                match a_k(e, &o.g(), &o.y, q) {
                    Ok(a) => grad += vec_se(&pr_se(&a)),
                    Err(Error::DegenerateDepth { .. }) => {}
                    Err(err) => return Err(err),
                }
            }
        }
        (Frame::Linear(obs), ObsWeight::Linear(q)) => {
            for o in obs {
                grad += vec_se(&pr_se(&a_k_linear(e, &o.a, &o.y, q)));
            }
        }
        _ => return Err(Error::WeightMismatch),
    }
    Ok(grad)
}

/// EKF measurement Jacobian of the summed projective model, 2x12.
pub fn ekf_h_nonlinear(e: &PoseMatrix, obs: &[Observation]) -> Result<SMatrix<f64, 2, 12>> {
    let mut h = SMatrix::<f64, 2, 12>::zeros();
    for o in obs {
        let p = project(e, &o.g())?;
        let k = p.kappa;
        for j in 0..2 {
            let rho = (e3() * p.u.transpose()) * (p.u[j] / (k * k))
                - Vector4::ith(j, 1.0) * p.u.transpose() / k;
            let row = vec_se(&pr_se(&rho));
            for c in 0..6 {
                h[(j, c)] += row[c];
            }
        }
    }
    Ok(h)
}

/// EKF measurement Jacobian of the summed linear model, 4x12.
pub fn ekf_h_linear(e: &PoseMatrix, a: &[Vector4<f64>]) -> SMatrix<f64, 4, 12> {
    let mut h = SMatrix::<f64, 4, 12>::zeros();
    for ak in a {
        for i in 0..4 {
            let row = vec_se(&pr_se(&(e.transpose() * Vector4::ith(i, 1.0) * ak.transpose())));
            for c in 0..6 {
                h[(i, c)] += row[c];
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie_core::exp_se3_vec;
    use approx::assert_abs_diff_eq;

    fn obs_at(e: &PoseMatrix, pixel: Vector2<f64>, depth: f64) -> Observation {
        let mut o = Observation::new(pixel, depth, Vector2::zeros());
        o.y = h_k(e, &o.g()).unwrap();
        o
    }

    #[test]
    fn identity_camera_reprojects() {
        let o = Observation::new(Vector2::new(0.2, -0.1), 7.0, Vector2::zeros());
        assert_abs_diff_eq!(h_k(&Matrix4::identity(), &o.g()).unwrap(), o.pixel, epsilon = 1e-15);
        assert_eq!(kappa(&Matrix4::identity(), &o.g()).unwrap(), 7.0);
    }

    #[test]
    fn pure_translation_projection() {
        let (d, x) = (10.0, Vector2::new(0.3, -0.2));
        let w = nalgebra::Vector3::new(0.5, 0.25, 2.0);
        let mut e = Matrix4::identity();
        e.fixed_view_mut::<3, 1>(0, 3).copy_from(&w);
        let g = Observation::new(x, d, Vector2::zeros()).g();
        let expected = Vector2::new(d * x.x - w.x, d * x.y - w.y) / (d - w.z);
        assert_abs_diff_eq!(h_k(&e, &g).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_depth_is_reported() {
        let mut e = Matrix4::identity();
        e[(2, 3)] = 5.0;
        let g = Observation::new(Vector2::zeros(), 5.0, Vector2::zeros()).g();
        assert!(matches!(h_k(&e, &g), Err(Error::DegenerateDepth { .. })));
    }

    #[test]
    fn zero_residual_annihilates_gradient() {
        let e = exp_se3_vec(&Vector6::new(0.1, -0.05, 0.2, 0.3, 0.1, -0.4));
        let o = obs_at(&e, Vector2::new(0.1, 0.2), 12.0);
        let a = a_k(&e, &o.g(), &o.y, &Matrix2::identity()).unwrap();
        assert_eq!(a, Matrix4::zeros());
        assert_eq!(residual(&o, &e, &Matrix2::identity()).unwrap(), 0.0);
    }

    #[test]
    fn zero_direction_gives_zero() {
        let e = Matrix4::identity();
        let o = Observation::new(Vector2::new(0.1, 0.2), 12.0, Vector2::new(0.3, 0.1));
        assert_eq!(dh_k(&e, &o.g(), &Matrix4::zeros()).unwrap(), Vector2::zeros());
        assert_eq!(zeta_k(&e, &o.g(), &o.y, &Matrix2::identity(), &Matrix4::zeros()).unwrap(), Vector6::zeros());
    }

    #[test]
    fn d_k_columns_are_zetas() {
        let e = exp_se3_vec(&Vector6::new(0.1, -0.05, 0.2, 0.3, 0.1, -0.4));
        let o = Observation::new(Vector2::new(0.1, 0.2), 12.0, Vector2::new(0.15, 0.18));
        let q = Matrix2::new(2.0, 0.3, 0.3, 1.0);
        let d = d_k(&e, &o.g(), &o.y, &q).unwrap();
        for j in 0..6 {
            let z = zeta_k(&e, &o.g(), &o.y, &q, &mat_se(&Vector6::ith(j, 1.0))).unwrap();
            assert_eq!(d.column(j).into_owned(), z);
        }
    }

    #[test]
    fn linear_zero_residual() {
        let e = exp_se3_vec(&Vector6::new(0.3, 0.2, 0.1, 1.0, 2.0, 3.0));
        let a = Vector4::new(1.0, 0.5, -0.2, 1.0);
        assert_abs_diff_eq!(a_k_linear(&e, &a, &(e * a), &Matrix4::identity()), Matrix4::zeros(), epsilon = 1e-14);
    }

    #[test]
    fn ekf_jacobians_have_zero_velocity_columns() {
        let e = exp_se3_vec(&Vector6::new(0.3, 0.2, 0.1, 1.0, 2.0, 3.0));
        let h = ekf_h_linear(&e, &[Vector4::new(1.0, 0.0, 0.0, 0.0)]);
        assert_eq!(h.columns(6, 6).norm(), 0.0);
        assert_eq!(ekf_h_linear(&e, &[Vector4::zeros()]), SMatrix::<f64, 4, 12>::zeros());
        let o = Observation::new(Vector2::new(0.1, 0.2), 12.0, Vector2::zeros());
        let hn = ekf_h_nonlinear(&Matrix4::identity(), &[o]).unwrap();
        assert_eq!(hn.columns(6, 6).norm(), 0.0);
    }

    #[test]
    fn frame_terms_reject_mismatched_weight() {
        let frame = Frame::Linear(vec![]);
        assert_eq!(
            frame_terms(&Matrix4::identity(), &frame, &ObsWeight::image_scaled(1.0)),
            Err(Error::WeightMismatch)
        );
    }

    #[test]
    fn frame_terms_drop_degenerate() {
        let mut e = Matrix4::identity();
        e[(2, 3)] = 5.0;
        let bad = Observation::new(Vector2::zeros(), 5.0, Vector2::zeros());
        let good = Observation::new(Vector2::new(0.1, 0.1), 9.0, Vector2::zeros());
        let t = frame_terms(&e, &Frame::Image(vec![bad, good]), &ObsWeight::image_scaled(1.0)).unwrap();
        assert_eq!((t.used, t.dropped), (1, 1));
    }
}
