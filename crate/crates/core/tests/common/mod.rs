#![allow(dead_code)]

use lie_mef::lie_core::exp_se3_vec;
use nalgebra::{Matrix2, Matrix4, Vector2, Vector4, Vector6};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vec6<R: Rng>(rng: &mut R, scale: f64) -> Vector6<f64> {
    Vector6::from_fn(|_, _| rng.gen_range(-scale..scale))
}

pub fn mat4<R: Rng>(rng: &mut R) -> Matrix4<f64> {
    Matrix4::from_fn(|_, _| rng.gen_range(-1.0..1.0))
}

pub fn pose<R: Rng>(rng: &mut R, rot: f64, trans: f64) -> Matrix4<f64> {
    let mut v = vec6(rng, rot);
    for i in 3..6 {
        v[i] = rng.gen_range(-trans..trans);
    }
    exp_se3_vec(&v)
}

pub fn spd2<R: Rng>(rng: &mut R) -> Matrix2<f64> {
    let a = Matrix2::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    a * a.transpose() + Matrix2::identity() * 0.5
}

/// Homogeneous point in front of the camera, given as (x, d) with g = (d x, d, 1).
pub fn point<R: Rng>(rng: &mut R) -> (Vector2<f64>, f64) {
    (
        Vector2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
        rng.gen_range(4.0..40.0),
    )
}

pub fn g_of(x: &Vector2<f64>, d: f64) -> Vector4<f64> {
    Vector4::new(d * x.x, d * x.y, d, 1.0)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
