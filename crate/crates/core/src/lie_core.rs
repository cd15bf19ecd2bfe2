//! SE(3), se(3) and the product group SE(3) x R^{6(m-1)}.
//!
//! Algebra coordinates use the scaled basis: the rotational generators carry a
//! factor 1/sqrt(2), so `tr(mat_se(v)^T mat_se(w)) = v . w`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Se3Matrix = Matrix4<f64>;
pub type PoseMatrix = Matrix4<f64>;
pub type AlgebraVector = DVector<f64>;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Largest rotation angle accepted by the principal logarithm.
pub const LOG_BRANCH_LIMIT: f64 = std::f64::consts::PI - 1e-6;

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn unskew(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rotational block of `mat_se`, i.e. `skew(v) / sqrt(2)`.
pub fn mat_so(v: &Vector3<f64>) -> Matrix3<f64> {
    skew(v) * FRAC_1_SQRT_2
}

pub fn mat_se(v: &Vector6<f64>) -> Se3Matrix {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&mat_so(&v.fixed_rows::<3>(0).into_owned()));
    m.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&v.fixed_rows::<3>(3));
    m
}

/// Inverse of [`mat_se`]. Reads the lower triangle of the rotational block and
/// the translation column without checking the se(3) structure.
pub fn vec_se(xi: &Se3Matrix) -> Vector6<f64> {
    Vector6::new(
        xi[(2, 1)] * SQRT_2,
        xi[(0, 2)] * SQRT_2,
        xi[(1, 0)] * SQRT_2,
        xi[(0, 3)],
        xi[(1, 3)],
        xi[(2, 3)],
    )
}

/// Deviation of `xi` from se(3): asymmetry defect of the rotational block plus
/// the norm of the last row.
pub fn algebra_deviation(xi: &Matrix4<f64>) -> f64 {
    let r = xi.fixed_view::<3, 3>(0, 0);
    (r + r.transpose()).norm() + xi.row(3).norm()
}

/// [`vec_se`] that rejects matrices outside se(3) beyond `tol`.
pub fn try_vec_se(xi: &Matrix4<f64>, tol: f64) -> Result<Vector6<f64>> {
    let deviation = algebra_deviation(xi);
    if deviation > tol {
        return Err(Error::NotInAlgebra { deviation });
    }
    Ok(vec_se(xi))
}

/// Orthogonal projection of an arbitrary 4x4 matrix onto se(3) under the
/// trace inner product.
pub fn pr_se(a: &Matrix4<f64>) -> Se3Matrix {
    let d1 = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 1.0, 1.0, 0.0));
    let d2 = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 1.0, 1.0, 2.0));
    0.5 * d1 * (a * d2 - a.transpose() * d1)
}

pub fn is_pose(e: &Matrix4<f64>, tol: f64) -> bool {
    let r = e.fixed_view::<3, 3>(0, 0);
    let orth = (r.transpose() * r - Matrix3::identity()).norm();
    let bottom = (e.row(3) - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).norm();
    orth <= tol && bottom <= tol && r.determinant() > 0.0
}

pub fn pose_inverse(e: &PoseMatrix) -> PoseMatrix {
    let r = e.fixed_view::<3, 3>(0, 0).transpose();
    let t = -(r * e.fixed_view::<3, 1>(0, 3));
    let mut out = Matrix4::identity();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    out.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    out
}

pub fn pose_from_parts(r: &Matrix3<f64>, w: &Vector3<f64>) -> PoseMatrix {
    let mut e = Matrix4::identity();
    e.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    e.fixed_view_mut::<3, 1>(0, 3).copy_from(w);
    e
}

// Coefficients A = sin t / t, B = (1 - cos t) / t^2, C = (t - sin t) / t^3,
// switched to Taylor series near zero.
fn rodrigues_coeffs(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-4 {
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        (
            theta.sin() / theta,
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    }
}

pub fn exp_se3_vec(v: &Vector6<f64>) -> PoseMatrix {
    let omega: Vector3<f64> = v.fixed_rows::<3>(0) * FRAC_1_SQRT_2;
    let rho: Vector3<f64> = v.fixed_rows::<3>(3).into_owned();
    let theta = omega.norm();
    let w = skew(&omega);
    let w2 = w * w;
    let (a, b, c) = rodrigues_coeffs(theta);
    let r = Matrix3::identity() + a * w + b * w2;
    let jl = Matrix3::identity() + b * w + c * w2;
    pose_from_parts(&r, &(jl * rho))
}

pub fn exp_se3(xi: &Se3Matrix) -> PoseMatrix {
    exp_se3_vec(&vec_se(xi))
}

/// Rotation angle of a rotation matrix, computed with atan2 for accuracy at
/// both ends of [0, pi].
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let c = 0.5 * (r.trace() - 1.0);
    let s = 0.5 * unskew(&(r - r.transpose())).norm();
    s.atan2(c)
}

pub fn log_se3_vec(e: &PoseMatrix) -> Result<Vector6<f64>> {
    let r: Matrix3<f64> = e.fixed_view::<3, 3>(0, 0).into_owned();
    let t: Vector3<f64> = e.fixed_view::<3, 1>(0, 3).into_owned();
    let theta = rotation_angle(&r);
    if theta > LOG_BRANCH_LIMIT {
        return Err(Error::LogBranch { angle: theta });
    }
    let t2 = theta * theta;
    // theta / (2 sin theta) and the V^{-1} coefficient, with series near zero.
    let (half_ratio, d) = if theta < 1e-4 {
        (0.5 + t2 / 12.0, 1.0 / 12.0 + t2 / 720.0)
    } else {
        let (a, b, _) = rodrigues_coeffs(theta);
        (0.5 / a, (1.0 - a / (2.0 * b)) / t2)
    };
    let w = (r - r.transpose()) * half_ratio;
    let vinv = Matrix3::identity() - 0.5 * w + d * w * w;
    let omega = unskew(&w);
    let rho = vinv * t;
    Ok(Vector6::new(
        omega.x * SQRT_2,
        omega.y * SQRT_2,
        omega.z * SQRT_2,
        rho.x,
        rho.y,
        rho.z,
    ))
}

pub fn log_se3(e: &PoseMatrix) -> Result<Se3Matrix> {
    log_se3_vec(e).map(|v| mat_se(&v))
}

/// `d(E1, E2) = |vec_se(Log(E1^{-1} E2))|`.
pub fn geodesic_distance(e1: &PoseMatrix, e2: &PoseMatrix) -> Result<f64> {
    Ok(log_se3_vec(&(pose_inverse(e1) * e2))?.norm())
}

/// Matrix of `eta -> vec_se([mat_se v, mat_se eta])`.
pub fn ad_se_vec(v: &Vector6<f64>) -> Matrix6<f64> {
    let w = mat_so(&v.fixed_rows::<3>(0).into_owned());
    let t = mat_so(&v.fixed_rows::<3>(3).into_owned());
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&t);
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    ad
}

/// Adjoint on the product algebra: the R^6 factors are abelian.
pub fn ad_g_vec(v: &AlgebraVector) -> DMatrix<f64> {
    let n = v.len();
    let mut ad = DMatrix::zeros(n, n);
    let head = Vector6::from_iterator(v.iter().take(6).copied());
    ad.view_mut((0, 0), (6, 6)).copy_from(&ad_se_vec(&head));
    ad
}

/// `A (x)_se B`: the matrix of `eta -> vec_se(pr_se(A eta B))`.
pub fn kron_se(a: &Matrix4<f64>, b: &Matrix4<f64>) -> Matrix6<f64> {
    Matrix6::from_fn(|i, j| vec_se(&pr_se(&(a * mat_se(&Vector6::ith(j, 1.0)) * b)))[i])
}

/// `A (x)_se^T B`: the matrix of `eta -> vec_se(pr_se(A eta^T B))`.
pub fn kron_se_t(a: &Matrix4<f64>, b: &Matrix4<f64>) -> Matrix6<f64> {
    Matrix6::from_fn(|i, j| {
        vec_se(&pr_se(&(a * mat_se(&Vector6::ith(j, 1.0)).transpose() * b)))[i]
    })
}

/// Christoffel symbols `gamma[i][j][k] = Γ^i_{jk}` of the Levi-Civita
/// connection of the left-invariant metric on SE(3), indices zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ChristoffelTable {
    pub gamma: [[[f64; 6]; 6]; 6],
}

// (upper, lower, lower, value), one-based, with respect to the unit generators
// (rotation generators with entries +-1).
const CHRISTOFFEL_NONZERO: [(usize, usize, usize, f64); 12] = [
    (3, 1, 2, 0.5),
    (1, 2, 3, 0.5),
    (2, 3, 1, 0.5),
    (2, 1, 3, -0.5),
    (3, 2, 1, -0.5),
    (1, 3, 2, -0.5),
    (6, 1, 5, 1.0),
    (4, 2, 6, 1.0),
    (5, 3, 4, 1.0),
    (5, 1, 6, -1.0),
    (6, 2, 4, -1.0),
    (4, 3, 5, -1.0),
];

impl ChristoffelTable {
    /// The table with respect to the unscaled generators.
    pub fn generators() -> Self {
        let mut gamma = [[[0.0; 6]; 6]; 6];
        for &(i, j, k, val) in CHRISTOFFEL_NONZERO.iter() {
            gamma[i - 1][j - 1][k - 1] = val;
        }
        ChristoffelTable { gamma }
    }

    /// The same connection expressed in `vec_se` coordinates. Rescaling the
    /// rotational generators by 1/sqrt(2) multiplies every nonzero symbol by
    /// `s_j s_k / s_i = 1/sqrt(2)`.
    pub fn vec_coordinates() -> Self {
        let scale = [FRAC_1_SQRT_2, FRAC_1_SQRT_2, FRAC_1_SQRT_2, 1.0, 1.0, 1.0];
        let mut table = Self::generators();
        for i in 0..6 {
            for j in 0..6 {
                for k in 0..6 {
                    table.gamma[i][j][k] *= scale[j] * scale[k] / scale[i];
                }
            }
        }
        table
    }

    pub fn nonzero_count(&self) -> usize {
        self.gamma
            .iter()
            .flatten()
            .flatten()
            .filter(|v| **v != 0.0)
            .count()
    }
}

fn vec_table() -> &'static ChristoffelTable {
    use std::sync::OnceLock;
    static TABLE: OnceLock<ChristoffelTable> = OnceLock::new();
    TABLE.get_or_init(ChristoffelTable::vec_coordinates)
}

/// `(Γ̃_z)_{ij} = Σ_k Γ^i_{jk} z_k` on the SE(3) block, so that
/// `Γ̃_{vec ξ} vec η = vec(∇_η ξ)`.
pub fn gamma_tilde(z: &AlgebraVector) -> DMatrix<f64> {
    let table = vec_table();
    let n = z.len();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..6 {
        for j in 0..6 {
            out[(i, j)] = (0..6).map(|k| table.gamma[i][j][k] * z[k]).sum();
        }
    }
    out
}

/// `(Γ̃*_z)_{ij} = Σ_k Γ^i_{kj} z_k`, so that `Γ̃*_{vec η} vec ξ = vec(∇_η ξ)`.
pub fn gamma_tilde_star(z: &AlgebraVector) -> DMatrix<f64> {
    let table = vec_table();
    let n = z.len();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..6 {
        for j in 0..6 {
            out[(i, j)] = (0..6).map(|k| table.gamma[i][k][j] * z[k]).sum();
        }
    }
    out
}

/// Element of SE(3) x R^{6(m-1)}.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    pub pose: PoseMatrix,
    pub velocities: Vec<Vector6<f64>>,
}

impl GroupElement {
    pub fn identity(order: usize) -> Self {
        assert!(order >= 1, "order must be at least 1");
        GroupElement {
            pose: Matrix4::identity(),
            velocities: vec![Vector6::zeros(); order - 1],
        }
    }

    pub fn new(pose: PoseMatrix, velocities: Vec<Vector6<f64>>) -> Self {
        GroupElement { pose, velocities }
    }

    /// Kinematic order m; the algebra has dimension 6m.
    pub fn order(&self) -> usize {
        self.velocities.len() + 1
    }

    pub fn dim(&self) -> usize {
        6 * self.order()
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        assert_eq!(self.order(), other.order());
        GroupElement {
            pose: self.pose * other.pose,
            velocities: self
                .velocities
                .iter()
                .zip(&other.velocities)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn inverse(&self) -> GroupElement {
        GroupElement {
            pose: pose_inverse(&self.pose),
            velocities: self.velocities.iter().map(|v| -v).collect(),
        }
    }

    /// `G * Exp_G(mat_g(v))`.
    pub fn retract(&self, v: &AlgebraVector) -> Result<GroupElement> {
        Ok(self.compose(&exp_g(v, self.order())?))
    }
}

fn check_len(v: &AlgebraVector, order: usize) -> Result<()> {
    if v.len() != 6 * order {
        return Err(Error::DimensionMismatch {
            expected: 6 * order,
            got: v.len(),
        });
    }
    Ok(())
}

/// Algebra element of the product group: an se(3) matrix and m-1 plain R^6
/// components.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraElement {
    pub xi: Se3Matrix,
    pub velocities: Vec<Vector6<f64>>,
}

pub fn mat_g(v: &AlgebraVector) -> Result<AlgebraElement> {
    if v.len() < 6 || !v.len().is_multiple_of(6) {
        return Err(Error::DimensionMismatch {
            expected: 6 * (v.len() / 6).max(1),
            got: v.len(),
        });
    }
    let block = |i: usize| Vector6::from_iterator(v.rows(6 * i, 6).iter().copied());
    Ok(AlgebraElement {
        xi: mat_se(&block(0)),
        velocities: (1..v.len() / 6).map(block).collect(),
    })
}

pub fn vec_g(a: &AlgebraElement) -> AlgebraVector {
    let m = a.velocities.len() + 1;
    let mut out = DVector::zeros(6 * m);
    out.rows_mut(0, 6).copy_from(&vec_se(&a.xi));
    for (i, v) in a.velocities.iter().enumerate() {
        out.rows_mut(6 * (i + 1), 6).copy_from(v);
    }
    out
}

pub fn exp_g(v: &AlgebraVector, order: usize) -> Result<GroupElement> {
    check_len(v, order)?;
    let a = mat_g(v)?;
    Ok(GroupElement {
        pose: exp_se3(&a.xi),
        velocities: a.velocities,
    })
}

pub fn log_g(g: &GroupElement) -> Result<AlgebraVector> {
    Ok(vec_g(&AlgebraElement {
        xi: log_se3(&g.pose)?,
        velocities: g.velocities.clone(),
    }))
}
