//! Synthetic tracks, scenes, depth/flow observations, noise and error metrics.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector2, Vector3, Vector4, Vector6};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::integrators::{lie_midpoint_step, FixedPointOptions};
use crate::lie_core::{
    geodesic_distance, pose_from_parts, pose_inverse, rotation_angle, GroupElement, PoseMatrix,
};
use crate::mef::f_kinematic;
use crate::observation::{h_k, Frame, Observation, KAPPA_MIN};

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub times: Vec<f64>,
    pub poses: Vec<PoseMatrix>,
    /// Stacked velocity coordinates per sample, when generated.
    pub velocities: Option<Vec<DVector<f64>>>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// `E_{l−1}⁻¹ E_l` for consecutive samples.
    pub fn relative_poses(&self) -> Vec<PoseMatrix> {
        self.poses
            .windows(2)
            .map(|w| pose_inverse(&w[0]) * w[1])
            .collect()
    }
}

/// Running product of relative motions, starting at the identity.
pub fn accumulate(relative: &[PoseMatrix]) -> Vec<PoseMatrix> {
    let mut out = vec![Matrix4::identity()];
    for r in relative {
        let last = *out.last().expect("nonempty");
        out.push(last * r);
    }
    out
}

/// Camera track from a track of inter-frame motions: the motion sampled at
/// frame `l ≥ 1` carries camera `l − 1` to camera `l`, and camera 0 sits at
/// the identity.
pub fn chain_motion(motion: &Track) -> Track {
    Track {
        times: motion.times.clone(),
        poses: accumulate(motion.poses.get(1..).unwrap_or(&[])),
        velocities: None,
    }
}

/// How the driving noise enters one integration substep of length `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseScaling {
    /// Brownian increments: the covariance is a rate, increments scale with `√h`.
    #[default]
    Diffusion,
    /// One noise sample of the given covariance per substep, held over the
    /// substep, so increments scale with `h`.
    PerStep,
}

/// Kinematic track on `G_m`: pose plus `m − 1` derivative slots, with the
/// last slot held constant (up to process noise).
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSpec {
    pub e0: PoseMatrix,
    pub velocities: Vec<Vector6<f64>>,
    pub frames: usize,
    pub frame_dt: f64,
    pub substeps: usize,
    /// Covariance of the driving noise, size `6m`.
    pub process_noise: Option<DMatrix<f64>>,
    pub noise_scaling: NoiseScaling,
}

impl TrackSpec {
    pub fn new(e0: PoseMatrix, velocities: Vec<Vector6<f64>>, frames: usize, frame_dt: f64) -> Self {
        TrackSpec {
            e0,
            velocities,
            frames,
            frame_dt,
            substeps: 10,
            process_noise: None,
            noise_scaling: NoiseScaling::Diffusion,
        }
    }

    /// Kinematic order `m` of the generating model.
    pub fn order(&self) -> usize {
        self.velocities.len() + 1
    }
}

/// Integrates `Ė = E(mat v₁ + δ₁)`, `v̇ᵢ = vᵢ₊₁ + δᵢ₊₁`, `v̇_j = δ_{j+1}` with
/// `substeps` steps per frame: Lie midpoint without noise, explicit
/// increments `G ← G Exp(h f(G) + σ(h) L z)` with noise, `σ(h)` per
/// [`NoiseScaling`].
pub fn generate_track<R: Rng + ?Sized>(spec: &TrackSpec, rng: &mut R) -> Result<Track> {
    let mut g = GroupElement::new(spec.e0, spec.velocities.clone());
    let dim = g.dim();
    let chol = match &spec.process_noise {
        Some(cov) => {
            if cov.nrows() != dim || cov.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: cov.nrows(),
                });
            }
            Some(
                cov.clone()
                    .cholesky()
                    .ok_or_else(|| Error::Config("process noise must be positive definite".into()))?
                    .l(),
            )
        }
        None => None,
    };
    let h = spec.frame_dt / spec.substeps.max(1) as f64;
    let stack = |g: &GroupElement| DVector::from_iterator(6 * g.velocities.len(), g.velocities.iter().flat_map(|v| v.iter().copied()));
    let mut track = Track {
        times: vec![0.0],
        poses: vec![g.pose],
        velocities: Some(vec![stack(&g)]),
    };
    for frame in 1..=spec.frames {
        for _ in 0..spec.substeps.max(1) {
            g = match &chol {
                None => lie_midpoint_step(&g, |x| Ok(f_kinematic(x)), h, FixedPointOptions::default())?.g,
                Some(l) => {
                    let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let scale = match spec.noise_scaling {
                        NoiseScaling::Diffusion => h.sqrt(),
                        NoiseScaling::PerStep => h,
                    };
                    let inc = f_kinematic(&g) * h + l * z * scale;
                    g.retract(&inc)?
                }
            };
        }
        track.times.push(frame as f64 * spec.frame_dt);
        track.poses.push(g.pose);
        if let Some(v) = track.velocities.as_mut() {
            v.push(stack(&g));
        }
    }
    Ok(track)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub points: Vec<Vector3<f64>>,
}

/// Points drawn uniformly in depth and image coordinates in front of the
/// previous camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frustum {
    pub near: f64,
    pub far: f64,
    /// Half-width of the normalized image square.
    pub half_width: f64,
}

impl Default for Frustum {
    fn default() -> Self {
        Frustum {
            near: 4.0,
            far: 40.0,
            half_width: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    Static(Scene),
    Frustum(Frustum),
}

impl Default for SceneSource {
    fn default() -> Self {
        SceneSource::Frustum(Frustum::default())
    }
}

fn observe_point(e_rel: &PoseMatrix, xc: &Vector3<f64>) -> Option<Observation> {
    if xc.z <= 1e-6 {
        return None;
    }
    let pixel = Vector2::new(xc.x / xc.z, xc.y / xc.z);
    let mut obs = Observation::new(pixel, xc.z, Vector2::zeros());
    let g = obs.g();
    let cur = pose_inverse(e_rel) * g;
    if cur[2] <= 1e-6 || cur[2].abs() <= KAPPA_MIN {
        return None;
    }
    obs.y = h_k(e_rel, &g).ok()?;
    Some(obs)
}

/// Draws `n` correspondences between the cameras `e_prev` and `e_cur`, all
/// expressed relative to the previous camera.
pub fn observe_frame<R: Rng + ?Sized>(
    e_prev: &PoseMatrix,
    e_cur: &PoseMatrix,
    scene: &SceneSource,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Observation>> {
    let e_rel = pose_inverse(e_prev) * e_cur;
    let prev_inv = pose_inverse(e_prev);
    let mut out = Vec::with_capacity(n);
    let max_attempts = 1000 * n.max(1);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Config(format!(
                "could not find {n} points visible in both cameras"
            )));
        }
        let xc = match scene {
            SceneSource::Frustum(f) => {
                let d = rng.gen_range(f.near..=f.far);
                let x = rng.gen_range(-f.half_width..=f.half_width);
                let y = rng.gen_range(-f.half_width..=f.half_width);
                Vector3::new(x * d, y * d, d)
            }
            SceneSource::Static(s) => {
                if s.points.is_empty() {
                    return Err(Error::Config("scene has no points".into()));
                }
                let p = s.points[rng.gen_range(0..s.points.len())];
                (prev_inv * Vector4::new(p.x, p.y, p.z, 1.0)).xyz()
            }
        };
        if let Some(obs) = observe_point(&e_rel, &xc) {
            out.push(obs);
        }
    }
    Ok(out)
}

/// One noisy image frame per consecutive pose pair of `track`.
pub fn observe_track<R: Rng + ?Sized>(
    track: &Track,
    scene: &SceneSource,
    n: usize,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<Vec<Frame>> {
    track
        .poses
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let clean = observe_frame(&w[0], &w[1], scene, n, rng).map_err(|e| e.at_frame(i + 1))?;
            Ok(Frame::Image(apply_noise(&clean, noise, rng)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    None,
    AdditiveGaussian,
    AdditiveUniform,
    MultiplicativeGaussian,
    MultiplicativeUniform,
}

impl NoiseKind {
    pub fn label(&self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::AdditiveGaussian => "AG",
            NoiseKind::AdditiveUniform => "AU",
            NoiseKind::MultiplicativeGaussian => "MG",
            NoiseKind::MultiplicativeUniform => "MU",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_uppercase().as_str() {
            "NONE" => NoiseKind::None,
            "AG" => NoiseKind::AdditiveGaussian,
            "AU" => NoiseKind::AdditiveUniform,
            "MG" => NoiseKind::MultiplicativeGaussian,
            "MU" => NoiseKind::MultiplicativeUniform,
            _ => return None,
        })
    }

    pub fn is_multiplicative(&self) -> bool {
        matches!(self, NoiseKind::MultiplicativeGaussian | NoiseKind::MultiplicativeUniform)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub mean: f64,
    pub variance: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel {
            kind: NoiseKind::None,
            mean: 0.0,
            variance: 0.0,
        }
    }

    /// Additive kinds default to mean 0, multiplicative ones to mean 1.
    pub fn new(kind: NoiseKind, variance: f64) -> Self {
        let mean = if kind.is_multiplicative() { 1.0 } else { 0.0 };
        NoiseModel {
            kind,
            mean,
            variance,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let sd = self.variance.max(0.0).sqrt();
        match self.kind {
            NoiseKind::None => self.mean,
            NoiseKind::AdditiveGaussian | NoiseKind::MultiplicativeGaussian => {
                Normal::new(self.mean, sd).expect("finite sd").sample(rng)
            }
            NoiseKind::AdditiveUniform | NoiseKind::MultiplicativeUniform => {
                if sd == 0.0 {
                    return self.mean;
                }
                let half = (3.0f64).sqrt() * sd;
                Uniform::new_inclusive(self.mean - half, self.mean + half).sample(rng)
            }
        }
    }
}

/// Corrupts the measurements: `y ← y + ε` (additive) or `y ← x + u ∘ ε` with
/// flow `u = y − x` (multiplicative), componentwise.
pub fn apply_noise<R: Rng + ?Sized>(obs: &[Observation], model: &NoiseModel, rng: &mut R) -> Vec<Observation> {
    if model.kind == NoiseKind::None || model.variance == 0.0 && !model.kind.is_multiplicative() && model.mean == 0.0 {
        return obs.to_vec();
    }
    obs.iter()
        .map(|o| {
            let eps = Vector2::new(model.sample(rng), model.sample(rng));
            let mut out = *o;
            if model.kind.is_multiplicative() {
                let u = o.y - o.pixel;
                out.y = o.pixel + u.component_mul(&eps);
            } else {
                out.y = o.y + eps;
            }
            out
        })
        .collect()
}

pub fn rotation_error_deg(e_gt: &PoseMatrix, e_est: &PoseMatrix) -> f64 {
    let r_gt: Matrix3<f64> = e_gt.fixed_view::<3, 3>(0, 0).into_owned();
    let r_est: Matrix3<f64> = e_est.fixed_view::<3, 3>(0, 0).into_owned();
    rotation_angle(&(r_gt.transpose() * r_est)).to_degrees()
}

pub fn translation_error(e_gt: &PoseMatrix, e_est: &PoseMatrix) -> f64 {
    (e_gt.fixed_view::<3, 1>(0, 3) - e_est.fixed_view::<3, 1>(0, 3)).norm()
}

pub fn geodesic_error_series(gt: &[PoseMatrix], est: &[PoseMatrix]) -> Result<Vec<f64>> {
    if gt.len() != est.len() {
        return Err(Error::DimensionMismatch {
            expected: gt.len(),
            got: est.len(),
        });
    }
    gt.iter().zip(est).map(|(a, b)| geodesic_distance(a, b)).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum PoseFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Nearest rotation in the Frobenius sense.
pub fn polar_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

/// Parses 12 floats per line (row-major `[R | w]`), skipping blank lines.
/// Rotations off by more than 1e-3 are re-orthonormalized with a warning.
pub fn parse_poses(text: &str) -> std::result::Result<Vec<PoseMatrix>, PoseFileError> {
    let mut poses = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| PoseFileError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if vals.len() != 12 {
            return Err(PoseFileError::Parse {
                line: line_no,
                message: format!("expected 12 values, found {}", vals.len()),
            });
        }
        let r = Matrix3::from_row_slice(&[
            vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10],
        ]);
        let w = Vector3::new(vals[3], vals[7], vals[11]);
        let deviation = (r.transpose() * r - Matrix3::identity()).norm();
        let r = if deviation > 1e-3 || r.determinant() <= 0.0 {
            log::warn!("line {line_no}: rotation deviates by {deviation:e}, projecting");
            polar_rotation(&r)
        } else {
            r
        };
        poses.push(pose_from_parts(&r, &w));
    }
    Ok(poses)
}

pub fn format_poses(poses: &[PoseMatrix]) -> String {
    let mut out = String::new();
    for e in poses {
        let vals: Vec<String> = (0..3)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .map(|(i, j)| format!("{}", e[(i, j)]))
            .collect();
        let _ = writeln!(out, "{}", vals.join(" "));
    }
    out
}

pub fn load_pose_file(path: &Path) -> std::result::Result<Track, PoseFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| PoseFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let poses = parse_poses(&text)?;
    Ok(Track {
        times: (0..poses.len()).map(|i| i as f64).collect(),
        poses,
        velocities: None,
    })
}

pub fn save_pose_file(track: &Track, path: &Path) -> std::result::Result<(), PoseFileError> {
    std::fs::write(path, format_poses(&track.poses)).map_err(|source| PoseFileError::Io {
        path: path.display().to_string(),
        source,
    })
}
