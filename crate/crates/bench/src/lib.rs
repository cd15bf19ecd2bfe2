//! Seeded fixtures shared by the kernel benchmarks.

use lie_mef::lie_core::exp_se3_vec;
use lie_mef::observation::h_k;
use lie_mef::{FilterConfig, FilterState, Frame, Observation, PoseMatrix};
use nalgebra::{DMatrix, Vector2, Vector4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn twist<R: Rng>(r: &mut R, scale: f64) -> Vector6<f64> {
    Vector6::from_fn(|_, _| r.gen_range(-scale..scale))
}

/// Small inter-frame motion.
pub fn motion<R: Rng>(r: &mut R) -> PoseMatrix {
    let mut v = twist(r, 0.02);
    v[5] += 0.3;
    exp_se3_vec(&v)
}

/// `n` noise-free correspondences for the relative pose `e`, depths in [4, 40].
pub fn frame<R: Rng>(r: &mut R, e: &PoseMatrix, n: usize) -> Frame {
    let obs = (0..n)
        .map(|_| {
            let d = r.gen_range(4.0..40.0);
            let x = Vector2::new(r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5));
            let g = Vector4::new(d * x.x, d * x.y, d, 1.0);
            Observation::new(x, d, h_k(e, &g).expect("point in front of both cameras"))
        })
        .collect();
    Frame::Image(obs)
}

/// Filter state near `e` with random velocities and a well-conditioned `P`.
pub fn state<R: Rng>(r: &mut R, e: &PoseMatrix, order: usize) -> FilterState {
    let mut s = FilterState::initial(order);
    s.g.pose = *e;
    for v in s.g.velocities.iter_mut() {
        *v = twist(r, 0.1);
    }
    let dim = 6 * order;
    let a = DMatrix::from_fn(dim, dim, |_, _| r.gen_range(-0.3..0.3));
    s.p = &a * a.transpose() + DMatrix::identity(dim, dim);
    s
}

pub fn config(order: usize, n: usize) -> FilterConfig {
    FilterConfig::defaults(order, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_drive_a_filter_step() {
        let mut r = rng(0);
        let e = motion(&mut r);
        let f = frame(&mut r, &e, 20);
        let s = state(&mut r, &e, 2);
        lie_mef::mef::mef_step(&s, &f, &config(2, 20)).unwrap();
    }
}
