//! The four subcommands, each producing files or a result table.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use lie_mef::ekf::{ekf_propagate, ekf_update};
use lie_mef::lie_core::{exp_se3_vec, geodesic_distance, log_se3_vec};
use lie_mef::mef::mef_step;
use lie_mef::observation::ObsWeight;
use lie_mef::synth::{
    chain_motion, generate_track, load_pose_file, observe_track, rotation_error_deg, save_pose_file, translation_error,
    NoiseKind, NoiseModel, SceneSource, Track, TrackSpec,
};
use lie_mef::{EkfState, FilterConfig, FilterState, Frame, GroupElement, LinearObservation, Observation, PoseMatrix};
use nalgebra::{DMatrix, Vector4, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::config::{noise_model, CompareMode, ExperimentConfig, InitMode};
use crate::io::{num, save_observations, Table};

pub const RESULTS_SCHEMA: &str = "filter results v1";
pub const SWEEP_SCHEMA: &str = "sweep results v1";
pub const COMPARE_SCHEMA: &str = "filter comparison v1";

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Camera track from the pose file if one is configured, otherwise the
/// chained output of the configured motion model sampled every `delta`.
pub fn camera_track(cfg: &ExperimentConfig) -> Result<Track> {
    if let Some(path) = &cfg.track.pose_file {
        return load_pose_file(path).with_context(|| format!("cannot load {}", path.display()));
    }
    let dt = cfg.filter.delta;
    let (e0, velocities) = cfg.track.motion_model(dt);
    let spec = TrackSpec::new(e0, velocities, cfg.track.frames, dt);
    let motion = generate_track(&spec, &mut rng(cfg.seed))?;
    Ok(chain_motion(&motion))
}

fn observations(track: &Track, n: usize, noise: &NoiseModel, seed: u64) -> Result<Vec<Vec<Observation>>> {
    let frames = observe_track(track, &SceneSource::default(), n, noise, &mut rng(seed))?;
    Ok(frames
        .into_iter()
        .map(|f| match f {
            Frame::Image(obs) => obs,
            Frame::Linear(_) => unreachable!("image frames only"),
        })
        .collect())
}

/// Writes `poses.txt` and the observation file into `dir`.
pub fn simulate(cfg: &ExperimentConfig, dir: &Path, obs_name: &str) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let track = camera_track(cfg)?;
    let noise = noise_model(&cfg.noise.kind, cfg.noise.variance)?;
    let obs = observations(&track, cfg.n_obs, &noise, cfg.seed)?;
    save_pose_file(&track, &dir.join("poses.txt"))?;
    save_observations(&dir.join(obs_name), &obs)?;
    let text = toml::to_string(cfg).context("cannot serialize configuration")?;
    std::fs::write(dir.join("config.toml"), text)?;
    Ok(())
}

fn pose_cells(e: &PoseMatrix) -> impl Iterator<Item = String> + '_ {
    (0..3).flat_map(move |r| (0..4).map(move |c| num(e[(r, c)])))
}

fn pose_header(prefix: &str) -> impl Iterator<Item = String> + '_ {
    (0..3).flat_map(move |r| (0..4).map(move |c| format!("{prefix}_{r}{c}")))
}

fn initial_state(order: usize, init: InitMode, truth: Option<&PoseMatrix>) -> Result<FilterState> {
    let mut s = FilterState::initial(order);
    if init == InitMode::Truth {
        s.g.pose = *truth.ok_or_else(|| anyhow!("initialization at the truth needs a ground-truth track"))?;
    }
    Ok(s)
}

/// Per-frame estimates on an observation stream, with error columns when
/// ground truth camera poses are given.
pub fn filter(cfg: &ExperimentConfig, frames: &[Vec<Observation>], truth: Option<&Track>) -> Result<Table> {
    let gt = match truth {
        Some(t) => {
            let rel = t.relative_poses();
            if rel.len() != frames.len() {
                return Err(anyhow!(
                    "ground truth has {} relative poses but the observation file has {} frames",
                    rel.len(),
                    frames.len()
                ));
            }
            Some((t.poses[0], rel))
        }
        None => None,
    };
    let fc = cfg.filter.filter_config(cfg.filter.order, cfg.n_obs, cfg.filter.alpha);
    fc.validate()?;
    let mut state = initial_state(fc.order, cfg.filter.init, gt.as_ref().map(|(_, rel)| &rel[0]))?;
    let mut acc = gt.as_ref().map_or_else(PoseMatrix::identity, |(first, _)| *first);

    let header = ["frame", "t"]
        .into_iter()
        .map(String::from)
        .chain(pose_header("rel"))
        .chain(pose_header("acc"))
        .chain(["geodesic_error", "rotation_error_deg", "translation_error"].map(String::from))
        .collect();
    let mut table = Table::new(RESULTS_SCHEMA, header);
    table.comments.push(format!("order {} alpha {} delta {} n_obs {}", fc.order, fc.alpha, fc.delta, cfg.n_obs));
    for (i, obs) in frames.iter().enumerate() {
        state = mef_step(&state, &Frame::Image(obs.clone()), &fc).map_err(|e| e.at_frame(i + 1))?;
        let rel = state.g.pose;
        acc *= rel;
        let mut row: Vec<String> = vec![(i + 1).to_string(), num(state.t)];
        row.extend(pose_cells(&rel));
        row.extend(pose_cells(&acc));
        match &gt {
            Some((_, gt)) => {
                let g = geodesic_distance(&gt[i], &rel).map(num).unwrap_or_default();
                row.extend([g, num(rotation_error_deg(&gt[i], &rel)), num(translation_error(&gt[i], &rel))]);
            }
            None => row.extend(std::iter::repeat_n(String::new(), 3)),
        }
        table.rows.push(row);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub order: usize,
    pub noise: String,
    pub variance: f64,
    pub n_obs: usize,
    pub alpha: f64,
}

pub fn sweep_cells(cfg: &ExperimentConfig) -> Vec<SweepCell> {
    let s = &cfg.sweep;
    let mut cells = Vec::new();
    for &order in &s.orders {
        for noise in &s.noise_kinds {
            for &variance in &s.variances {
                for &n_obs in &s.n_obs {
                    for &alpha in &s.alphas {
                        cells.push(SweepCell {
                            order,
                            noise: noise.clone(),
                            variance,
                            n_obs,
                            alpha,
                        });
                    }
                }
            }
        }
    }
    cells
}

/// Mean geodesic, rotational and translational error of one run.
fn run_errors(cfg: &ExperimentConfig, cell: &SweepCell, track: &Track, gt: &[PoseMatrix], seed: u64) -> Result<[f64; 3]> {
    let noise = noise_model(&cell.noise, cell.variance)?;
    let frames = observations(track, cell.n_obs, &noise, seed)?;
    let fc = cfg.filter.filter_config(cell.order, cell.n_obs, cell.alpha);
    fc.validate()?;
    let mut state = initial_state(cell.order, cfg.filter.init, gt.first())?;
    let mut sums = [0.0; 3];
    for (i, obs) in frames.iter().enumerate() {
        state = mef_step(&state, &Frame::Image(obs.clone()), &fc).map_err(|e| e.at_frame(i + 1))?;
        sums[0] += geodesic_distance(&gt[i], &state.g.pose).map_err(|e| e.at_frame(i + 1))?;
        sums[1] += rotation_error_deg(&gt[i], &state.g.pose);
        sums[2] += translation_error(&gt[i], &state.g.pose);
    }
    Ok(sums.map(|s| s / frames.len().max(1) as f64))
}

/// One row per grid cell, averaged over frames and successful repeats.
/// Repeat `r` uses observation seed `seed + r` in every cell, so cells are
/// compared on identical data. Failed runs are counted and never abort.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Table> {
    let track = camera_track(cfg)?;
    let gt = track.relative_poses();
    let cells = sweep_cells(cfg);
    let repeats = cfg.sweep.repeats;
    let rows: Vec<Vec<String>> = cells
        .par_iter()
        .map(|cell| {
            let runs: Vec<Result<[f64; 3]>> = (0..repeats as u64)
                .map(|r| run_errors(cfg, cell, &track, &gt, cfg.seed.wrapping_add(r)))
                .collect();
            let ok: Vec<[f64; 3]> = runs.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
            let failed = runs.len() - ok.len();
            let first_failure = runs.iter().find_map(|r| r.as_ref().err().map(|e| format!("{e:#}")));
            let means: Vec<String> = (0..3)
                .map(|k| if ok.is_empty() { String::new() } else { num(ok.iter().map(|e| e[k]).sum::<f64>() / ok.len() as f64) })
                .collect();
            let status = match (failed, first_failure) {
                (0, _) => "ok".to_string(),
                (f, Some(reason)) if f == runs.len() => format!("failed: {reason}"),
                (f, Some(reason)) => format!("partial: {f} of {} runs failed: {reason}", runs.len()),
                (_, None) => unreachable!("failures carry a reason"),
            };
            let mut row = vec![
                cell.order.to_string(),
                cell.noise.clone(),
                num(cell.variance),
                cell.n_obs.to_string(),
                num(cell.alpha),
                repeats.to_string(),
                failed.to_string(),
            ];
            row.extend(means);
            row.push(status);
            row
        })
        .collect();
    let header = [
        "order",
        "noise",
        "variance",
        "n_obs",
        "alpha",
        "repeats",
        "failed",
        "mean_geodesic_error",
        "mean_rotation_error_deg",
        "mean_translation_error",
        "status",
    ]
    .map(String::from)
    .to_vec();
    let mut table = Table::new(SWEEP_SCHEMA, header);
    table.rows = rows;
    Ok(table)
}

/// Ground truth for the comparison and the observation stream on it. In
/// linear mode the state is the absolute pose observed through `a_k = e_k`;
/// in projective mode the generated track is the inter-frame motion of a
/// camera and the frames are image correspondences.
fn comparison_data(cfg: &ExperimentConfig) -> Result<(Track, Vec<Frame>)> {
    let c = &cfg.compare;
    let mut r = rng(cfg.seed);
    let spec = TrackSpec {
        process_noise: (c.process_noise > 0.0).then(|| DMatrix::identity(12, 12) * c.process_noise),
        noise_scaling: c.noise_scaling(),
        ..TrackSpec::new(
            exp_se3_vec(&Vector6::from_row_slice(&c.e0)),
            vec![Vector6::from_row_slice(&c.velocity)],
            c.frames,
            c.frame_dt,
        )
    };
    let track = generate_track(&spec, &mut r)?;
    let frames = match c.mode {
        CompareMode::Linear => {
            let noise = Normal::new(0.0, c.obs_sd).context("observation noise")?;
            track.poses[1..]
                .iter()
                .map(|e| {
                    Frame::Linear(
                        (0..4)
                            .map(|k| {
                                let a = Vector4::ith(k, 1.0);
                                let y = e * a + Vector4::from_fn(|_, _| noise.sample(&mut r));
                                LinearObservation { a, y }
                            })
                            .collect(),
                    )
                })
                .collect()
        }
        CompareMode::Projective => {
            let cameras = chain_motion(&track);
            let noise = NoiseModel::new(NoiseKind::AdditiveGaussian, c.obs_sd * c.obs_sd);
            observations(&cameras, cfg.n_obs, &noise, cfg.seed.wrapping_add(1))?
                .into_iter()
                .map(Frame::Image)
                .collect()
        }
    };
    Ok((track, frames))
}

struct Run {
    poses: Vec<PoseMatrix>,
    failure: Option<String>,
}

impl Run {
    fn status(&self, name: &str) -> String {
        match &self.failure {
            None => format!("{name}: ok"),
            Some(reason) => format!("{name}: failed: {reason}"),
        }
    }
}

/// Runs the MEF and the EKF on the same stream. A failing filter leaves its
/// columns empty from the failing frame on; the other one continues.
pub fn compare_ekf(cfg: &ExperimentConfig) -> Result<Table> {
    let c = &cfg.compare;
    let (track, frames) = comparison_data(cfg)?;
    let gt = &track.poses[1..];

    let mut g0 = GroupElement::identity(2);
    if c.init == InitMode::Truth {
        g0.pose = track.poses[0];
        g0.velocities[0] = Vector6::from_row_slice(&c.velocity);
    }

    let mut fc = FilterConfig::defaults(2, cfg.n_obs).with_weights(c.mef_s1, c.mef_s2);
    fc.delta = c.frame_dt;
    fc.alpha = cfg.filter.alpha;
    fc.q = match c.mode {
        CompareMode::Linear => ObsWeight::linear_scaled(c.mef_q),
        CompareMode::Projective => ObsWeight::image_scaled(c.mef_q / cfg.n_obs as f64),
    };
    fc.validate()?;
    let mut mef = Run { poses: vec![], failure: None };
    let mut state = FilterState { g: g0.clone(), ..FilterState::initial(2) };
    for (i, f) in frames.iter().enumerate() {
        match mef_step(&state, f, &fc) {
            Ok(s) => {
                mef.poses.push(s.g.pose);
                state = s;
            }
            Err(e) => {
                mef.failure = Some(e.at_frame(i + 1).to_string());
                break;
            }
        }
    }

    let ec = c.ekf_config(&cfg.ekf);
    ec.validate()?;
    let mut ekf = Run { poses: vec![], failure: None };
    let mut est = EkfState::new(g0, DMatrix::identity(12, 12) * cfg.ekf.p0);
    for (i, f) in frames.iter().enumerate() {
        match ekf_propagate(&est, ec.frame_dt, &ec).and_then(|s| ekf_update(&s, f, &ec)) {
            Ok(s) => {
                ekf.poses.push(s.g.pose);
                est = s;
            }
            Err(e) => {
                ekf.failure = Some(e.at_frame(i + 1).to_string());
                break;
            }
        }
    }

    let log_header = |p: &'static str| (0..6).map(move |k| format!("{p}_{k}"));
    let header = ["frame", "t"]
        .into_iter()
        .map(String::from)
        .chain(log_header("gt"))
        .chain(log_header("mef"))
        .chain(log_header("ekf"))
        .chain(["mef_error", "ekf_error"].map(String::from))
        .collect();
    let mut table = Table::new(COMPARE_SCHEMA, header);
    table.comments.push(mef.status("mef"));
    table.comments.push(ekf.status("ekf"));
    let log_cells = |e: Option<&PoseMatrix>| -> Vec<String> {
        match e.map(log_se3_vec) {
            Some(Ok(v)) => v.iter().map(|x| num(*x)).collect(),
            _ => vec![String::new(); 6],
        }
    };
    let err_cell = |truth: &PoseMatrix, e: Option<&PoseMatrix>| -> String {
        e.and_then(|e| geodesic_distance(truth, e).ok()).map(num).unwrap_or_default()
    };
    for (i, truth) in gt.iter().enumerate() {
        let (m, k) = (mef.poses.get(i), ekf.poses.get(i));
        let mut row = vec![(i + 1).to_string(), num(track.times[i + 1])];
        row.extend(log_cells(Some(truth)));
        row.extend(log_cells(m));
        row.extend(log_cells(k));
        row.push(err_cell(truth, m));
        row.push(err_cell(truth, k));
        table.rows.push(row);
    }
    Ok(table)
}
