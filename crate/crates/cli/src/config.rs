//! Experiment configuration: a TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use lie_mef::lie_core::exp_se3_vec;
use lie_mef::mef::FilterConfig;
use lie_mef::observation::ObsWeight;
use lie_mef::synth::{NoiseKind, NoiseModel, NoiseScaling};
use lie_mef::{EkfConfig, PoseMatrix};
use nalgebra::{DMatrix, Vector6};
use serde::{Deserialize, Serialize};

/// Raised for anything the user can fix by editing the configuration.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Correspondences per frame.
    pub n_obs: usize,
    pub filter: FilterSettings,
    pub track: TrackSettings,
    pub noise: NoiseSettings,
    pub ekf: EkfSettings,
    pub sweep: SweepSettings,
    pub compare: CompareSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            n_obs: 50,
            filter: FilterSettings::default(),
            track: TrackSettings::default(),
            noise: NoiseSettings::default(),
            ekf: EkfSettings::default(),
            sweep: SweepSettings::default(),
            compare: CompareSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    Identity,
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub order: usize,
    pub alpha: f64,
    pub delta: f64,
    pub s1: f64,
    pub s2: f64,
    /// Observation weight `Q = (q_scale / n) I`.
    pub q_scale: f64,
    /// Weight block `i` (from 1) is divided by `block_decay^(i-1)`.
    pub block_decay: f64,
    pub init: InitMode,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            order: 2,
            alpha: 2.0,
            delta: 1.0 / 50.0,
            s1: 1e-2,
            s2: 1e-5,
            q_scale: 0.1,
            block_decay: 1.0,
            init: InitMode::Identity,
        }
    }
}

impl FilterSettings {
    pub fn filter_config(&self, order: usize, n_obs: usize, alpha: f64) -> FilterConfig {
        let mut cfg = FilterConfig::defaults(order, n_obs).with_weights(self.s1, self.s2);
        cfg.alpha = alpha;
        cfg.delta = self.delta;
        cfg.q = ObsWeight::image_scaled(self.q_scale / n_obs.max(1) as f64);
        for (i, block) in cfg.s_blocks.iter_mut().enumerate() {
            *block /= self.block_decay.powi(i as i32);
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSettings {
    /// Per-frame increments of the camera motion, one 6-vector
    /// `(rotation, translation)` per kinematic order. Two rows give a
    /// constant-acceleration track.
    pub increments: Vec<[f64; 6]>,
    pub frames: usize,
    /// Camera poses to use instead of a generated track.
    pub pose_file: Option<PathBuf>,
}

impl Default for TrackSettings {
    fn default() -> Self {
        TrackSettings {
            increments: vec![[0.01, 0.005, 0.003, 0.1, 0.05, 0.5], [1e-4, -5e-5, 5e-5, 2e-3, -1e-3, 1e-3]],
            frames: 100,
            pose_file: None,
        }
    }
}

impl TrackSettings {
    /// First increment as a pose and the remaining ones as velocities of
    /// the inter-frame motion.
    pub fn motion_model(&self, frame_dt: f64) -> (PoseMatrix, Vec<Vector6<f64>>) {
        let e0 = exp_se3_vec(&Vector6::from_row_slice(&self.increments[0]));
        let velocities = self.increments[1..]
            .iter()
            .enumerate()
            .map(|(i, w)| Vector6::from_row_slice(w) / frame_dt.powi(i as i32 + 1))
            .collect();
        (e0, velocities)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSettings {
    /// One of none, AG, AU, MG, MU.
    pub kind: String,
    pub variance: f64,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        NoiseSettings {
            kind: "none".into(),
            variance: 0.0,
        }
    }
}

pub fn noise_model(kind: &str, variance: f64) -> Result<NoiseModel, ConfigError> {
    match NoiseKind::parse(kind) {
        Some(k) => Ok(NoiseModel::new(k, variance)),
        None => invalid(format!("unknown noise kind {kind:?} (expected none, AG, AU, MG or MU)")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EkfSettings {
    /// Process covariance `S = s I`.
    pub s: f64,
    /// Measurement covariance scale.
    pub q: f64,
    pub delta: f64,
    pub p0: f64,
}

impl Default for EkfSettings {
    fn default() -> Self {
        EkfSettings {
            s: 1.0,
            q: 1e-8,
            delta: 0.02,
            p0: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub orders: Vec<usize>,
    pub noise_kinds: Vec<String>,
    pub variances: Vec<f64>,
    pub n_obs: Vec<usize>,
    pub alphas: Vec<f64>,
    pub repeats: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            orders: vec![1, 2, 3, 4],
            noise_kinds: vec!["MG".into()],
            variances: vec![1e-3, 1e-2, 1e-1, 1.0],
            n_obs: vec![50],
            alphas: vec![2.0],
            repeats: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompareMode {
    Linear,
    Projective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSettings {
    pub mode: CompareMode,
    pub frames: usize,
    pub frame_dt: f64,
    /// Initial pose of the ground truth as a 6-vector.
    pub e0: [f64; 6],
    pub velocity: [f64; 6],
    /// Scale of the identity process covariance driving the ground truth.
    pub process_noise: f64,
    /// Hold one noise sample per substep instead of Brownian increments.
    pub per_step_noise: bool,
    /// Standard deviation of the additive measurement noise.
    pub obs_sd: f64,
    /// MEF observation weight `Q = mef_q I`.
    pub mef_q: f64,
    pub mef_s1: f64,
    pub mef_s2: f64,
    pub init: InitMode,
}

impl Default for CompareSettings {
    fn default() -> Self {
        CompareSettings {
            mode: CompareMode::Linear,
            frames: 40,
            frame_dt: 0.1,
            e0: [0.6, -0.4, 0.8, 1.0, -0.5, 0.8],
            velocity: [0.2, 0.1, -0.1, 0.5, 0.3, 0.0],
            process_noise: 1.0,
            per_step_noise: true,
            obs_sd: 1e-4,
            mef_q: 100.0,
            mef_s1: 1.0,
            mef_s2: 1.0,
            init: InitMode::Identity,
        }
    }
}

impl CompareSettings {
    pub fn noise_scaling(&self) -> NoiseScaling {
        if self.per_step_noise {
            NoiseScaling::PerStep
        } else {
            NoiseScaling::Diffusion
        }
    }

    pub fn ekf_config(&self, ekf: &EkfSettings) -> EkfConfig {
        let q = match self.mode {
            CompareMode::Linear => ObsWeight::linear_scaled(ekf.q),
            CompareMode::Projective => ObsWeight::image_scaled(ekf.q),
        };
        EkfConfig {
            s: DMatrix::identity(12, 12) * ekf.s,
            q,
            delta: ekf.delta,
            frame_dt: self.frame_dt,
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub order: Option<usize>,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub s1: Option<f64>,
    pub s2: Option<f64>,
    pub q_scale: Option<f64>,
    pub n_obs: Option<usize>,
    pub frames: Option<usize>,
    pub noise: Option<String>,
    pub variance: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(o.seed => self.seed);
        set!(o.order => self.filter.order);
        set!(o.alpha => self.filter.alpha);
        set!(o.delta => self.filter.delta);
        set!(o.s1 => self.filter.s1);
        set!(o.s2 => self.filter.s2);
        set!(o.q_scale => self.filter.q_scale);
        set!(o.n_obs => self.n_obs);
        set!(o.frames => self.track.frames);
        set!(o.noise => self.noise.kind);
        set!(o.variance => self.noise.variance);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_obs < 2 {
            return invalid("n_obs must be at least 2");
        }
        let f = &self.filter;
        if !(1..=4).contains(&f.order) {
            return invalid(format!("order {} outside 1..=4", f.order));
        }
        for (name, v) in [("delta", f.delta), ("s1", f.s1), ("s2", f.s2), ("q_scale", f.q_scale), ("block_decay", f.block_decay)] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be positive"));
            }
        }
        if !(f.alpha >= 0.0) {
            return invalid("alpha must be nonnegative");
        }
        if self.track.increments.is_empty() || self.track.increments.len() > 4 {
            return invalid("track.increments needs between 1 and 4 rows");
        }
        if self.track.frames == 0 {
            return invalid("track.frames must be positive");
        }
        if let Some(p) = &self.track.pose_file {
            if !p.exists() {
                return invalid(format!("pose file {} does not exist", p.display()));
            }
        }
        noise_model(&self.noise.kind, self.noise.variance)?;
        if self.noise.variance < 0.0 {
            return invalid("noise variance must be nonnegative");
        }
        let s = &self.sweep;
        if s.orders.is_empty() || s.noise_kinds.is_empty() || s.variances.is_empty() || s.n_obs.is_empty() || s.alphas.is_empty() {
            return invalid("sweep grid is empty");
        }
        if s.repeats == 0 {
            return invalid("sweep.repeats must be positive");
        }
        if s.orders.iter().any(|m| !(1..=4).contains(m)) {
            return invalid("sweep.orders must lie in 1..=4");
        }
        if s.n_obs.iter().any(|n| *n < 2) {
            return invalid("sweep.n_obs entries must be at least 2");
        }
        for kind in &s.noise_kinds {
            noise_model(kind, 0.0)?;
        }
        let e = &self.ekf;
        if !(e.s > 0.0 && e.q > 0.0 && e.delta > 0.0 && e.p0 > 0.0) {
            return invalid("ekf settings must be positive");
        }
        let c = &self.compare;
        if c.frames == 0 || !(c.frame_dt > 0.0) || !(c.mef_q > 0.0) || !(c.mef_s1 > 0.0) || !(c.mef_s2 > 0.0) {
            return invalid("compare settings must be positive");
        }
        if c.process_noise < 0.0 || c.obs_sd < 0.0 {
            return invalid("compare noise levels must be nonnegative");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = ExperimentConfig::parse("n_obs = 20\n[filter]\nalpha = 0.5\n").unwrap();
        assert_eq!(cfg.n_obs, 20);
        assert_eq!(cfg.filter.alpha, 0.5);
        assert_eq!(cfg.filter.s1, 1e-2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("alpah = 1.0").is_err());
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = ExperimentConfig::parse("[filter]\norder = 3\n").unwrap();
        cfg.apply(&Overrides {
            order: Some(1),
            q_scale: Some(1.0),
            ..Default::default()
        });
        assert_eq!(cfg.filter.order, 1);
        assert_eq!(cfg.filter.q_scale, 1.0);
    }

    #[test]
    fn too_few_observations_rejected() {
        let cfg = ExperimentConfig {
            n_obs: 1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn block_decay_scales_higher_blocks() {
        let settings = FilterSettings {
            block_decay: 10.0,
            ..Default::default()
        };
        let cfg = settings.filter_config(3, 10, 0.0);
        assert_eq!(cfg.s_blocks[2], cfg.s_blocks[0] / 100.0);
        assert_eq!(cfg.dim(), 18);
    }
}
