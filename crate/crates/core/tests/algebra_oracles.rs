mod common;

use common::*;
use lie_mef::lie_core::*;
use nalgebra::{DVector, Matrix4, Vector6};
use proptest::prelude::*;

/// Scaling-and-squaring Taylor exponential, independent of the closed form.
fn expm(a: &Matrix4<f64>) -> Matrix4<f64> {
    let norm = a.norm();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let b = a / 2f64.powi(s);
    let mut sum = Matrix4::identity();
    let mut term = Matrix4::identity();
    for k in 1..30 {
        term = term * b / k as f64;
        sum += term;
    }
    for _ in 0..s {
        sum = sum * sum;
    }
    sum
}

fn bracket(a: &Matrix4<f64>, b: &Matrix4<f64>) -> Matrix4<f64> {
    a * b - b * a
}

#[test]
fn adjoint_matches_commutator() {
    let mut r = rng(1);
    for _ in 0..100 {
        let (v, w) = (vec6(&mut r, 2.0), vec6(&mut r, 2.0));
        let direct = vec_se(&bracket(&mat_se(&v), &mat_se(&w)));
        assert!((ad_se_vec(&v) * w - direct).norm() < 1e-13);
    }
}

#[test]
fn kron_matches_direct_product() {
    let mut r = rng(2);
    for _ in 0..100 {
        // E eta E^{-1} stays in se(3)
        let e = pose(&mut r, 1.5, 3.0);
        let eta = mat_se(&vec6(&mut r, 1.0));
        let direct = vec_se(&(e * eta * pose_inverse(&e)));
        assert!((kron_se(&e, &pose_inverse(&e)) * vec_se(&eta) - direct).norm() < 1e-12);
        // general factors go through the projection
        let (a, b) = (mat4(&mut r), mat4(&mut r));
        let proj = vec_se(&pr_se(&(a * eta * b)));
        assert!((kron_se(&a, &b) * vec_se(&eta) - proj).norm() < 1e-12);
        let proj_t = vec_se(&pr_se(&(a * eta.transpose() * b)));
        assert!((kron_se_t(&a, &b) * vec_se(&eta) - proj_t).norm() < 1e-12);
    }
}

#[test]
fn exp_matches_series_oracle() {
    let mut r = rng(3);
    for _ in 0..100 {
        let v = vec6(&mut r, 2.0);
        let e = exp_se3_vec(&v);
        assert!((e - expm(&mat_se(&v))).norm() < 1e-10);
        assert!(is_pose(&e, 1e-12));
    }
}

#[test]
fn log_inverts_exp() {
    let mut r = rng(4);
    for _ in 0..100 {
        let v = vec6(&mut r, 2.0);
        assert!((log_se3_vec(&exp_se3_vec(&v)).unwrap() - v).norm() < 1e-10);
    }
}

#[test]
fn projection_is_orthogonal_and_idempotent() {
    let mut r = rng(5);
    for _ in 0..100 {
        let a = mat4(&mut r);
        let eta = mat_se(&vec6(&mut r, 1.0));
        let lhs = (a.transpose() * eta).trace();
        let rhs = (pr_se(&a).transpose() * eta).trace();
        assert!((lhs - rhs).abs() < 1e-13);
        assert!((pr_se(&pr_se(&a)) - pr_se(&a)).norm() < 1e-14);
        assert!(algebra_deviation(&pr_se(&a)) < 1e-15);
    }
}

#[test]
fn metric_compatibility() {
    let mut r = rng(6);
    for _ in 0..100 {
        let (v, w) = (vec6(&mut r, 3.0), vec6(&mut r, 3.0));
        assert!(((mat_se(&v).transpose() * mat_se(&w)).trace() - v.dot(&w)).abs() < 1e-13);
    }
}

fn dv(v: &Vector6<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

#[test]
fn connection_is_torsion_free_on_basis() {
    for i in 0..6 {
        for j in 0..6 {
            let (eta, xi) = (Vector6::ith(i, 1.0), Vector6::ith(j, 1.0));
            let lhs = gamma_tilde(&dv(&xi)) * dv(&eta) - gamma_tilde(&dv(&eta)) * dv(&xi);
            let rhs = vec_se(&bracket(&mat_se(&eta), &mat_se(&xi)));
            assert!((lhs - dv(&rhs)).norm() < 1e-14, "basis pair ({i}, {j})");
        }
    }
}

#[test]
fn connection_is_metric() {
    // <∇_η ξ, ζ> + <ξ, ∇_η ζ> = 0 for left-invariant fields
    let mut r = rng(7);
    for _ in 0..100 {
        let (eta, xi, zeta) = (dv(&vec6(&mut r, 1.0)), dv(&vec6(&mut r, 1.0)), dv(&vec6(&mut r, 1.0)));
        let a = (gamma_tilde(&xi) * &eta).dot(&zeta);
        let b = xi.dot(&(gamma_tilde(&zeta) * &eta));
        assert!((a + b).abs() < 1e-13);
    }
}

#[test]
fn double_contraction_identity() {
    let mut r = rng(8);
    for _ in 0..100 {
        let (eta, xi) = (dv(&vec6(&mut r, 2.0)), dv(&vec6(&mut r, 2.0)));
        let a = gamma_tilde(&xi) * &eta;
        let b = gamma_tilde_star(&eta) * &xi;
        assert!((a - b).norm() < 1e-13);
    }
}

#[test]
fn geodesic_distance_is_symmetric() {
    let mut r = rng(9);
    for _ in 0..100 {
        let (a, b) = (pose(&mut r, 1.0, 2.0), pose(&mut r, 1.0, 2.0));
        let (d1, d2) = (geodesic_distance(&a, &b).unwrap(), geodesic_distance(&b, &a).unwrap());
        assert!((d1 - d2).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn prop_log_exp_inverse(v in prop::array::uniform6(-2.0f64..2.0)) {
        let v = Vector6::from_column_slice(&v);
        prop_assume!(v.fixed_rows::<3>(0).norm() / std::f64::consts::SQRT_2 < 3.0);
        prop_assert!((log_se3_vec(&exp_se3_vec(&v)).unwrap() - v).norm() < 1e-9);
    }

    #[test]
    fn prop_exp_on_manifold(v in prop::array::uniform6(-5.0f64..5.0)) {
        prop_assert!(is_pose(&exp_se3_vec(&Vector6::from_column_slice(&v)), 1e-12));
    }

    #[test]
    fn prop_group_exp_log(v in prop::collection::vec(-1.0f64..1.0, 18)) {
        let v = DVector::from_vec(v);
        let g = exp_g(&v, 3).unwrap();
        prop_assert!((log_g(&g).unwrap() - v).norm() < 1e-10);
    }
}
