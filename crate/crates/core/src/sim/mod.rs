//! Discrete-time simulation of the look-and-move servo loop.
//!
//! Two position-controlled arms move tools in front of a fixed camera. Each
//! arm knows its base only through a (possibly biased) hand-eye registration.
//! The camera reports tool poses with noise, latency and dropouts; in visual
//! servo mode a dual-rate Kalman filter turns these into a correction of the
//! registration, otherwise the arms run open loop.
//!
//! Frames: every pose handled by the loop is in the camera frame unless it is
//! called odometry (arm base frame). References are in the mandrel frame.

mod evaluate;
mod fb;

pub use evaluate::{evaluate, path_errors, Metrics};
pub use fb::{fb_gate, marker_corners, track_corners, GateOutcome, MIN_INLIERS};

use crate::context::{retime, ContextError, SpeedPlan};
use crate::demo::{moving_tool, table_row, Gripper, Holder, ReferenceTrajectory, Tool};
use crate::geometry::{interpolate, Pose, Transform};
use crate::kalman::{
    CommandLog, DelayedMeasurement, DualRateFilter, FilterState, KalmanError, NoiseModel, DEFAULT_Q,
    DEFAULT_R,
};
use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("tracking error {error_mm:.3} mm exceeded the bound at t = {clock:.3} s")]
    Diverged { clock: f64, error_mm: f64 },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Context(#[from] ContextError),
}

/// Rate-limited position-controlled arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotModel {
    /// mm/s
    pub max_linear_speed: f64,
    /// rad/s
    pub max_angular_speed: f64,
    /// s
    pub control_period: f64,
    /// Registration error: believed base = `hand_eye_bias * true base`.
    pub hand_eye_bias: Transform,
    /// Per-tick actuation noise std, `[mm; 3, rad; 3]`.
    pub actuation_noise: Vector6<f64>,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self {
            max_linear_speed: 50.0,
            max_angular_speed: 1.0,
            control_period: 0.01,
            hand_eye_bias: Transform::identity(),
            actuation_noise: Vector6::from(DEFAULT_Q).map(f64::sqrt),
        }
    }
}

impl RobotModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.max_linear_speed > 0.0
            && self.max_angular_speed > 0.0
            && self.control_period > 0.0
            && self.actuation_noise.iter().all(|s| *s >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidInput(format!("invalid robot model: {self:?}")))
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.actuation_noise = Vector6::zeros();
        self
    }
}

/// Pose-reporting camera with forward-backward corner gating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    /// s
    pub frame_period: f64,
    /// s
    pub latency: f64,
    /// Additive std on the pose vector, `[mm; 3, rad; 3]`.
    pub measurement_noise: Vector6<f64>,
    pub dropout_prob: f64,
    pub fb_gate: bool,
    /// px
    pub fb_tau_inlier: f64,
    /// px
    pub fb_tau_reject: f64,
    /// Std of the simulated forward-backward corner error (px).
    pub fb_error_std: f64,
    pub marker_size_px: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            frame_period: 1.0 / 30.0,
            latency: 0.1,
            measurement_noise: Vector6::from(DEFAULT_R).map(f64::sqrt),
            dropout_prob: 0.0,
            fb_gate: true,
            fb_tau_inlier: 1.0,
            fb_tau_reject: 5.0,
            fb_error_std: 0.3,
            marker_size_px: 40.0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.frame_period > 0.0
            && self.latency >= 0.0
            && (0.0..=1.0).contains(&self.dropout_prob)
            && self.measurement_noise.iter().all(|s| *s >= 0.0)
            && self.fb_tau_inlier >= 0.0
            && self.fb_tau_reject >= self.fb_tau_inlier
            && self.fb_error_std >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidInput(format!("invalid camera model: {self:?}")))
        }
    }

    /// No noise, latency, dropout or corner error.
    pub fn ideal(mut self) -> Self {
        self.latency = 0.0;
        self.measurement_noise = Vector6::zeros();
        self.dropout_prob = 0.0;
        self.fb_error_std = 0.0;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ServoMode {
    OpenLoop,
    VisualServo,
}

impl ServoMode {
    pub fn name(self) -> &'static str {
        match self {
            ServoMode::OpenLoop => "open-loop",
            ServoMode::VisualServo => "visual-servo",
        }
    }
}

/// One primitive executed by its moving tool.
#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub label: u8,
    pub tool: Tool,
    pub state: (Gripper, Gripper, Holder),
    /// Mandrel-frame reference with execution timestamps.
    pub reference: ReferenceTrajectory,
    /// Speed ratio of each reference step.
    pub ratios: Vec<f64>,
}

impl Leg {
    pub fn new(reference: ReferenceTrajectory) -> Result<Self, SimError> {
        let label = reference.label;
        let (Some(state), Some(tool)) = (table_row(label), moving_tool(label)) else {
            return Err(SimError::InvalidInput(format!("unknown primitive {label}")));
        };
        if reference.tool != tool {
            return Err(SimError::InvalidInput(format!(
                "primitive {label} is executed by tool {tool:?}, got {:?}",
                reference.tool
            )));
        }
        if reference.is_empty() {
            return Err(SimError::EmptyTrace);
        }
        let ratios = vec![1.0; reference.len()];
        Ok(Self {
            label,
            tool,
            state,
            reference,
            ratios,
        })
    }

    pub fn retimed(&self, plan: &SpeedPlan) -> Result<Self, SimError> {
        Ok(Self {
            reference: retime(&self.reference, plan)?,
            ratios: plan.ratios.clone(),
            ..self.clone()
        })
    }

    /// See [`ReferenceTrajectory::downsample`]; ratios follow the kept waypoints.
    pub fn downsample(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let n = self.ratios.len();
        let mut ratios: Vec<f64> = self.ratios.iter().copied().step_by(factor).collect();
        if n > 0 && (n - 1) % factor != 0 {
            ratios.push(self.ratios[n - 1]);
        }
        Self {
            reference: self.reference.downsample(factor),
            ratios,
            ..self.clone()
        }
    }
}

/// Everything about the world that is not the robot or camera model.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Mandrel pose in the camera frame.
    pub mandrel: Pose,
    /// True arm base poses in the camera frame, indexed by tool.
    pub bases: [Pose; 2],
    pub legs: Vec<Leg>,
    pub seed: u64,
    pub filter: NoiseModel,
    pub compensate_latency: bool,
    /// Time spent holding the first waypoint of each leg before it starts.
    pub settle_time: f64,
    /// mm; tracking error that aborts the run.
    pub divergence_bound: f64,
}

impl Scenario {
    pub fn new(legs: Vec<Leg>, seed: u64) -> Self {
        Self {
            mandrel: Pose::from_euler(0.0, 0.0, 300.0, 0.0, 0.0, 0.0),
            bases: [
                Pose::from_euler(-350.0, 40.0, 250.0, 0.3, 0.0, 0.0),
                Pose::from_euler(350.0, -40.0, 250.0, std::f64::consts::PI - 0.3, 0.0, 0.0),
            ],
            legs,
            seed,
            filter: NoiseModel::default(),
            compensate_latency: true,
            settle_time: 0.5,
            divergence_bound: 100.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.legs.is_empty() {
            return Err(SimError::EmptyTrace);
        }
        if self.legs.windows(2).any(|w| w[1].label <= w[0].label) {
            return Err(SimError::InvalidInput("legs must follow the primitive order".into()));
        }
        if self.legs.iter().any(|l| l.ratios.len() != l.reference.len()) {
            return Err(SimError::InvalidInput("ratio count differs from waypoint count".into()));
        }
        if !(self.settle_time >= 0.0 && self.divergence_bound > 0.0) {
            return Err(SimError::InvalidInput("invalid settle time or divergence bound".into()));
        }
        Ok(())
    }
}

/// One control tick of the active leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub clock: f64,
    pub leg: usize,
    pub label: u8,
    pub tool: Tool,
    /// Ground-truth tool pose.
    pub truth: Pose,
    /// Target issued this tick.
    pub command: Pose,
    /// Filtered pose estimate, once one exists.
    pub estimate: Option<Vector6<f64>>,
    /// Camera measurement captured this tick.
    pub measurement: Option<Vector6<f64>>,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub mandrel: Pose,
    pub dt: f64,
    pub rows: Vec<TraceRow>,
    /// Filter updates over the whole run (settling included).
    pub updates: usize,
    /// Frames lost to dropout or the corner gate.
    pub rejected: usize,
}

/// Moves `pose` toward `command` by at most one control period of travel,
/// limited by both linear and angular speed. Lands exactly on the command
/// when it is within reach.
pub fn move_toward(model: &RobotModel, pose: &Pose, command: &Pose) -> Pose {
    let dist = pose.distance_to(command);
    let angle = pose.angle_to(command);
    let lin = model.max_linear_speed * model.control_period;
    let ang = model.max_angular_speed * model.control_period;
    let mut s: f64 = 1.0;
    if dist > lin {
        s = s.min(lin / dist);
    }
    if angle > ang {
        s = s.min(ang / angle);
    }
    interpolate(pose, command, s)
}

/// Zero-mean actuation disturbance as a tool-frame pose.
pub fn sample_actuation<R: Rng>(model: &RobotModel, rng: &mut R) -> Pose {
    Pose::from_vector(&gaussian6(&model.actuation_noise, rng))
}

/// One control step: rate-limited motion followed by actuation noise.
pub fn step_robot<R: Rng>(model: &RobotModel, pose: &Pose, command: &Pose, rng: &mut R) -> Pose {
    move_toward(model, pose, command).compose(&sample_actuation(model, rng))
}

fn gaussian6<R: Rng>(std: &Vector6<f64>, rng: &mut R) -> Vector6<f64> {
    Vector6::from_fn(|i, _| {
        let n: f64 = rng.sample(StandardNormal);
        n * std[i]
    })
}

/// Camera frame at `clock`; `None` on dropout.
pub fn sample_camera<R: Rng>(
    model: &CameraModel,
    true_pose: &Pose,
    clock: f64,
    rng: &mut R,
) -> Option<DelayedMeasurement> {
    let lost = rng.random::<f64>() < model.dropout_prob;
    let noise = gaussian6(&model.measurement_noise, rng);
    if lost {
        return None;
    }
    Some(DelayedMeasurement {
        z: true_pose.to_vector() + noise,
        t_capture: clock,
        t_delivery: clock + model.latency,
    })
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn tool_index(tool: Tool) -> usize {
    match tool {
        Tool::A => 0,
        Tool::B => 1,
    }
}

struct Arm {
    base_believed: Pose,
    odometry: Pose,
    disturbance: Pose,
    filter: DualRateFilter,
    log: CommandLog,
    /// Maps camera-frame targets to odometry commands.
    correction: Option<Pose>,
    last_command: Vector6<f64>,
    has_estimate: bool,
}

/// Runs every leg of `scenario` in order. With a non-empty `plans` slice each
/// leg is first retimed by its plan.
pub fn servo_loop(
    scenario: &Scenario,
    robot: &RobotModel,
    camera: &CameraModel,
    mode: ServoMode,
    plans: &[SpeedPlan],
) -> Result<TraceRecord, SimError> {
    scenario.validate()?;
    robot.validate()?;
    camera.validate()?;
    let legs: Vec<Leg> = if plans.is_empty() {
        scenario.legs.clone()
    } else if plans.len() == scenario.legs.len() {
        scenario
            .legs
            .iter()
            .zip(plans)
            .map(|(l, p)| l.retimed(p))
            .collect::<Result<_, _>>()?
    } else {
        return Err(SimError::InvalidInput(format!(
            "{} plans for {} legs",
            plans.len(),
            scenario.legs.len()
        )));
    };

    let dt = robot.control_period;
    let bias = Pose::from_transform(&robot.hand_eye_bias);
    let mandrel = scenario.mandrel;
    let mut act_rng = [stream(scenario.seed, 1), stream(scenario.seed, 2)];
    let mut cam_rng = [stream(scenario.seed, 3), stream(scenario.seed, 4)];
    let corners = marker_corners(camera.marker_size_px);
    let horizon = (camera.latency + camera.frame_period) * 4.0 + 1.0;

    let mut arms: [Option<Arm>; 2] = [None, None];
    let mut trace = TraceRecord {
        mandrel,
        dt,
        rows: Vec::new(),
        updates: 0,
        rejected: 0,
    };
    let mut tick: u64 = 0;
    let mut next_frame: u64 = 0;
    let settle_ticks = (scenario.settle_time / dt).round() as usize;

    for (leg_idx, leg) in legs.iter().enumerate() {
        let ti = tool_index(leg.tool);
        // an idle arm is not tracked; frames still in flight when it stopped
        // would refer to a log that has since gone stale
        if leg_idx > 0 && legs[leg_idx - 1].tool != leg.tool {
            if let Some(arm) = arms[ti].as_mut() {
                arm.filter.clear_pending();
            }
        }
        let reference = &leg.reference;
        let t0 = reference.points[0].t;
        let t_end = t0 + reference.duration();
        let run_ticks = (reference.duration() / dt - 1e-9).ceil().max(0.0) as usize;
        let local = |j: usize| (t0 + j.saturating_sub(settle_ticks) as f64 * dt).min(t_end);

        let start = mandrel.compose(&reference.pose_at(t0));
        let base_true = scenario.bases[ti];
        let arm = arms[ti].get_or_insert_with(|| {
            let base_believed = bias.compose(&base_true);
            let mut filter = DualRateFilter::new(
                FilterState::new(start.to_vector(), scenario.filter.r),
                scenario.filter,
            );
            filter.compensate_latency = scenario.compensate_latency;
            Arm {
                base_believed,
                odometry: base_believed.inverse().compose(&start),
                disturbance: Pose::identity(),
                filter,
                log: CommandLog::new(horizon),
                correction: None,
                last_command: start.to_vector(),
                has_estimate: false,
            }
        });

        for j in 0..=settle_ticks + run_ticks {
            let clock = tick as f64 * dt;
            let tau = local(j);
            let truth = base_true.compose(&arm.odometry).compose(&arm.disturbance);
            arm.log.push(clock, arm.last_command, arm.odometry)?;

            let mut measurement = None;
            if next_frame as f64 * camera.frame_period <= clock + 1e-9 {
                while next_frame as f64 * camera.frame_period <= clock + 1e-9 {
                    next_frame += 1;
                }
                let rng = &mut cam_rng[ti];
                let mut m = sample_camera(camera, &truth, clock, rng);
                if camera.fb_gate {
                    let back = track_corners(&corners, camera.fb_error_std, rng);
                    let gate = fb_gate(&corners, &back, camera.fb_tau_inlier, camera.fb_tau_reject)?;
                    if gate.is_rejected() {
                        m = None;
                    }
                }
                match m {
                    Some(m) => {
                        measurement = Some(m.z);
                        if mode == ServoMode::VisualServo {
                            arm.filter.enqueue(m)?;
                        }
                    }
                    None => trace.rejected += 1,
                }
            }

            if mode == ServoMode::VisualServo {
                let out = arm.filter.tick(clock, &arm.log)?;
                if out.updates > 0 {
                    trace.updates += out.updates;
                    arm.has_estimate = true;
                    let est = Pose::from_vector(&out.estimate);
                    arm.correction = Some(arm.odometry.compose(&est.inverse()));
                }
            }

            let target_now = mandrel.compose(&reference.pose_at(tau));
            let error = truth.distance_to(&target_now);
            if error > scenario.divergence_bound {
                return Err(SimError::Diverged {
                    clock,
                    error_mm: error,
                });
            }

            let target = mandrel.compose(&reference.pose_at(local(j + 1)));
            let correction = match (mode, arm.correction) {
                (ServoMode::VisualServo, Some(c)) => c,
                _ => arm.base_believed.inverse(),
            };
            let command = correction.compose(&target);

            if j >= settle_ticks {
                trace.rows.push(TraceRow {
                    clock,
                    leg: leg_idx,
                    label: leg.label,
                    tool: leg.tool,
                    truth,
                    command: target,
                    estimate: arm.has_estimate.then_some(arm.filter.state.x),
                    measurement,
                    r: leg.ratios[reference.index_at(tau)],
                });
            }

            arm.odometry = move_toward(robot, &arm.odometry, &command);
            arm.disturbance = sample_actuation(robot, &mut act_rng[ti]);
            arm.last_command = target.to_vector();
            tick += 1;
        }
    }
    Ok(trace)
}
