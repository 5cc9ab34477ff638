use super::synth::SyntheticDemoSpec;
use super::HarnessError;
use crate::context::ContextConfig;
use crate::demo::EncodeOptions;
use crate::geometry::{Pose, Transform};
use crate::kalman::{NoiseModel, NoiseUnits, DEFAULT_Q, DEFAULT_R};
use crate::sim::{CameraModel, RobotModel};
use nalgebra::Vector6;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Top-level experiment configuration, read from TOML. Every section and
/// key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub demos: SyntheticDemoSpec,
    pub learning: LearningConfig,
    pub context: ContextConfig,
    pub noise: NoiseConfig,
    pub robot: RobotConfig,
    pub camera: CameraConfig,
    pub sim: SimConfig,
    pub experiment: TrialConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            paths: PathsConfig::default(),
            demos: SyntheticDemoSpec::default(),
            learning: LearningConfig::default(),
            context: ContextConfig::default(),
            noise: NoiseConfig::default(),
            robot: RobotConfig::default(),
            camera: CameraConfig::default(),
            sim: SimConfig::default(),
            experiment: TrialConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Optional input locations. Relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory of recorded demonstrations to learn from instead of
    /// generating synthetic ones.
    pub demos: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    pub m_min: usize,
    pub m_max: usize,
    pub folds: usize,
    /// mm per rad in the DTW pose distance.
    pub rot_weight: f64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        let d = EncodeOptions::default();
        Self {
            m_min: *d.m_range.start(),
            m_max: *d.m_range.end(),
            folds: d.folds,
            rot_weight: d.rot_weight,
        }
    }
}

impl LearningConfig {
    pub fn encode_options(&self, seed: u64) -> EncodeOptions {
        EncodeOptions {
            m_range: self.m_min..=self.m_max,
            folds: self.folds,
            seed,
            rot_weight: self.rot_weight,
            reference_index: 0,
        }
    }
}

/// Filter covariance diagonals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub units: NoiseUnits,
    /// `[mm, mm, mm, rad, rad, rad]` in `units`.
    pub q: [f64; 6],
    pub r: [f64; 6],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            units: NoiseUnits::Variance,
            q: DEFAULT_Q,
            r: DEFAULT_R,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotConfig {
    pub max_linear_speed: f64,
    pub max_angular_speed: f64,
    pub control_period: f64,
    /// Hand-eye registration error, translation part (mm, camera frame).
    pub hand_eye_bias_mm: [f64; 3],
    /// Hand-eye registration error, rotation part (Z-Y-X Euler, rad).
    pub hand_eye_bias_rad: [f64; 3],
    /// Per-tick actuation noise std; defaults to the square root of `q`.
    pub actuation_noise: Option<[f64; 6]>,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            max_linear_speed: 80.0,
            max_angular_speed: 1.0,
            control_period: 0.01,
            hand_eye_bias_mm: [0.0, 5.0, 0.0],
            hand_eye_bias_rad: [0.0; 3],
            actuation_noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    /// Simulator profile, not a measured property of any camera.
    pub frame_rate_hz: f64,
    /// s; simulator profile.
    pub latency: f64,
    /// Additive pose noise std; defaults to the square root of `r`.
    pub measurement_noise: Option<[f64; 6]>,
    pub dropout_prob: f64,
    pub fb_gate: bool,
    pub fb_tau_inlier: f64,
    pub fb_tau_reject: f64,
    pub fb_error_std: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        let d = CameraModel::default();
        Self {
            frame_rate_hz: 30.0,
            latency: d.latency,
            measurement_noise: None,
            dropout_prob: d.dropout_prob,
            fb_gate: d.fb_gate,
            fb_tau_inlier: d.fb_tau_inlier,
            fb_tau_reject: d.fb_tau_reject,
            fb_error_std: d.fb_error_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Mandrel pose in the camera frame, `[mm; 3, rad; 3]`.
    pub mandrel: [f64; 6],
    pub settle_time: f64,
    pub divergence_bound: f64,
    pub compensate_latency: bool,
    /// Apply the variance-driven speed plan during reproduction.
    pub use_speed_plan: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mandrel: [0.0, 0.0, 300.0, 0.0, 0.0, 0.0],
            settle_time: 0.5,
            divergence_bound: 100.0,
            compensate_latency: true,
            use_speed_plan: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub trials: usize,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self { trials: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub speed_factors: Vec<usize>,
    pub biases_mm: Vec<f64>,
    pub latencies_s: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            speed_factors: vec![1, 2, 4],
            biases_mm: vec![0.0, 2.5, 5.0, 7.5, 10.0],
            latencies_s: vec![0.0, 0.05, 0.1, 0.2],
        }
    }
}

impl ExperimentConfig {
    /// Reads and validates a TOML file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if let (Some(demos), Some(dir)) = (&cfg.paths.demos, path.parent()) {
            if demos.is_relative() {
                cfg.paths.demos = Some(dir.join(demos));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if let Some(dir) = &self.paths.demos {
            if !dir.is_dir() {
                return Err(HarnessError::Missing(dir.clone()));
            }
        }
        self.demos.validate()?;
        if self.learning.m_min == 0 || self.learning.m_min > self.learning.m_max {
            return bad("learning.m_min must be in 1..=m_max");
        }
        if self.learning.folds < 2 {
            return bad("learning.folds must be at least 2");
        }
        if self.context.smoothing_width == 0 {
            return bad("context.smoothing_width must be at least 1");
        }
        self.noise_model()?;
        self.robot_model()?.validate()?;
        self.camera_model()?.validate()?;
        if self.sweep.speed_factors.contains(&0) {
            return bad("sweep.speed_factors must be positive");
        }
        Ok(())
    }

    pub fn noise_model(&self) -> Result<NoiseModel, HarnessError> {
        Ok(NoiseModel::from_entries(self.noise.q, self.noise.r, self.noise.units)?)
    }

    pub fn robot_model(&self) -> Result<RobotModel, HarnessError> {
        let r = &self.robot;
        let [x, y, z] = r.hand_eye_bias_mm;
        let [a, b, t] = r.hand_eye_bias_rad;
        let bias = Pose::from_euler(x, y, z, a, b, t).to_transform();
        let noise = match r.actuation_noise {
            Some(s) => Vector6::from(s),
            None => self.noise_model()?.process_std(),
        };
        Ok(RobotModel {
            max_linear_speed: r.max_linear_speed,
            max_angular_speed: r.max_angular_speed,
            control_period: r.control_period,
            hand_eye_bias: bias,
            actuation_noise: noise,
        })
    }

    pub fn camera_model(&self) -> Result<CameraModel, HarnessError> {
        let c = &self.camera;
        if !(c.frame_rate_hz > 0.0) {
            return Err(HarnessError::Config("camera.frame_rate_hz must be positive".into()));
        }
        let noise = match c.measurement_noise {
            Some(s) => Vector6::from(s),
            None => self.noise_model()?.measurement_std(),
        };
        Ok(CameraModel {
            frame_period: 1.0 / c.frame_rate_hz,
            latency: c.latency,
            measurement_noise: noise,
            dropout_prob: c.dropout_prob,
            fb_gate: c.fb_gate,
            fb_tau_inlier: c.fb_tau_inlier,
            fb_tau_reject: c.fb_tau_reject,
            fb_error_std: c.fb_error_std,
            ..CameraModel::default()
        })
    }

    pub fn mandrel(&self) -> Pose {
        Pose::from_vector(&Vector6::from(self.sim.mandrel))
    }

    pub fn with_bias_mm(&self, magnitude: f64) -> Self {
        let mut cfg = self.clone();
        let dir = Vector6::from([
            self.robot.hand_eye_bias_mm[0],
            self.robot.hand_eye_bias_mm[1],
            self.robot.hand_eye_bias_mm[2],
            0.0,
            0.0,
            0.0,
        ]);
        let n = dir.fixed_rows::<3>(0).norm();
        let unit = if n > 0.0 { dir.fixed_rows::<3>(0) / n } else { nalgebra::Vector3::x() };
        cfg.robot.hand_eye_bias_mm = (unit * magnitude).into();
        cfg
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

/// Grip transform of the needle in the holding tool's frame.
pub fn grip_transform(spec: &SyntheticDemoSpec) -> Transform {
    Pose::from_vector(&Vector6::from(spec.grip)).to_transform()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_file_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 9\n[robot]\nhand_eye_bias_mm = [0.0, 3.0, 4.0]\n").unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, 9);
        let bias = cfg.robot_model().unwrap().hand_eye_bias;
        assert!((bias.translation.norm() - 5.0).abs() < 1e-12);
        assert!((cfg.with_bias_mm(10.0).robot_model().unwrap().hand_eye_bias.translation.norm() - 10.0).abs() < 1e-12);

        std::fs::write(&path, "sed = 9\n").unwrap();
        assert!(matches!(ExperimentConfig::load(&path), Err(HarnessError::Parse { .. })));

        std::fs::write(&path, "[paths]\ndemos = \"nowhere\"\n").unwrap();
        match ExperimentConfig::load(&path) {
            Err(HarnessError::Missing(p)) => assert!(p.ends_with("nowhere")),
            other => panic!("{other:?}"),
        }

        let missing = dir.path().join("absent.toml");
        let err = ExperimentConfig::load(&missing).unwrap_err();
        assert!(err.to_string().contains("absent.toml"));
    }

    #[test]
    fn stddev_units_square_entries() {
        let mut cfg = ExperimentConfig::default();
        cfg.noise.units = NoiseUnits::Stddev;
        let n = cfg.noise_model().unwrap();
        assert!((n.r[(0, 0)] - 0.1225).abs() < 1e-15);
        // camera noise follows the filter's R unless set explicitly
        assert!((cfg.camera_model().unwrap().measurement_noise[0] - 0.35).abs() < 1e-15);
    }
}
