//! Dual-rate Kalman filter over the 6-d.o.f. tool pose with camera latency
//! compensation.
//!
//! State and measurement are both the pose vector `[x, y, z, alpha, beta,
//! theta]` (mm, rad), so the transition and observation matrices are the
//! identity. The prediction is the last commanded pose; the update runs once
//! per delivered camera frame, after the stale measurement has been advanced
//! to the present using robot odometry.

use crate::geometry::{interpolate, wrap_angle, Pose};
use nalgebra::{Matrix6, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KalmanError {
    #[error("covariance lost positive semi-definiteness (min eigenvalue {0})")]
    NonPsdCovariance(f64),
    #[error("time {t} is outside the command log horizon [{start}, {end}]")]
    LogHorizonExceeded { t: f64, start: f64, end: f64 },
    #[error("command log timestamps must increase: {prev} then {next}")]
    NonMonotoneLog { prev: f64, next: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("noise diagonal entries must be positive: {0:?}")]
    InvalidNoise(Vec<f64>),
}

const PSD_TOL: f64 = -1e-9;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub x: Vector6<f64>,
    pub p: Matrix6<f64>,
}

impl FilterState {
    pub fn new(x: Vector6<f64>, p: Matrix6<f64>) -> Self {
        Self { x, p }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.p)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// How the configured diagonal entries are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseUnits {
    /// Entries are variances (mm², rad²).
    #[default]
    Variance,
    /// Entries are standard deviations (mm, rad) and get squared.
    Stddev,
}

/// Diagonal process (`q`) and measurement (`r`) covariances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub q: Matrix6<f64>,
    pub r: Matrix6<f64>,
}

pub const DEFAULT_Q: [f64; 6] = [0.25, 0.25, 0.25, 0.02, 0.02, 0.02];
pub const DEFAULT_R: [f64; 6] = [0.35, 0.35, 0.35, 0.04, 0.04, 0.04];

impl Default for NoiseModel {
    fn default() -> Self {
        Self::from_entries(DEFAULT_Q, DEFAULT_R, NoiseUnits::Variance).expect("positive defaults")
    }
}

impl NoiseModel {
    pub fn from_entries(
        q: [f64; 6],
        r: [f64; 6],
        units: NoiseUnits,
    ) -> Result<Self, KalmanError> {
        Ok(Self {
            q: diag(q, units)?,
            r: diag(r, units)?,
        })
    }

    /// Per-dimension standard deviation implied by `r`.
    pub fn measurement_std(&self) -> Vector6<f64> {
        self.r.diagonal().map(f64::sqrt)
    }

    pub fn process_std(&self) -> Vector6<f64> {
        self.q.diagonal().map(f64::sqrt)
    }
}

fn diag(entries: [f64; 6], units: NoiseUnits) -> Result<Matrix6<f64>, KalmanError> {
    if entries.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(KalmanError::InvalidNoise(entries.to_vec()));
    }
    let v = Vector6::from(entries);
    Ok(Matrix6::from_diagonal(&match units {
        NoiseUnits::Variance => v,
        NoiseUnits::Stddev => v.component_mul(&v),
    }))
}

/// Prediction: the tool is assumed to have reached the last commanded pose,
/// and uncertainty grows by `q`.
pub fn predict(state: &FilterState, last_command: &Vector6<f64>, noise: &NoiseModel) -> FilterState {
    FilterState {
        x: *last_command,
        p: state.p + noise.q,
    }
}

/// Measurement update with `K = P (P + R)^-1` and `P <- (I - K) P`.
/// Angular innovation components are wrapped to `(-pi, pi]`.
pub fn update(
    state: &FilterState,
    z_hat: &Vector6<f64>,
    noise: &NoiseModel,
) -> Result<FilterState, KalmanError> {
    let s = state.p + noise.r;
    // LU keeps diagonal cases exact (K = 0.5 for P = R)
    let s_inv = s.try_inverse().ok_or(KalmanError::NonPsdCovariance(f64::NAN))?;
    let gain = state.p * s_inv;

    let mut innovation = z_hat - state.x;
    for c in 3..6 {
        innovation[c] = wrap_angle(innovation[c]);
    }
    let x = state.x + gain * innovation;
    let p = (Matrix6::identity() - gain) * state.p;
    let p = (p + p.transpose()) * 0.5;

    let out = FilterState { x, p };
    let min_ev = out.min_eigenvalue();
    if min_ev < PSD_TOL {
        return Err(KalmanError::NonPsdCovariance(min_ev));
    }
    Ok(out)
}

/// Camera pose sample captured at `t_capture` and available at `t_delivery`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayedMeasurement {
    pub z: Vector6<f64>,
    pub t_capture: f64,
    pub t_delivery: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandEntry {
    pub t: f64,
    /// Commanded tool pose in the filter (camera) frame.
    pub command: Vector6<f64>,
    /// Robot's own (odometry) tool pose in its base frame.
    pub odometry: Pose,
}

/// Rolling history of commands and odometry, trimmed to `horizon` seconds.
#[derive(Debug, Clone)]
pub struct CommandLog {
    entries: VecDeque<CommandEntry>,
    horizon: f64,
}

impl CommandLog {
    pub fn new(horizon: f64) -> Self {
        Self {
            entries: VecDeque::new(),
            horizon,
        }
    }

    pub fn push(&mut self, t: f64, command: Vector6<f64>, odometry: Pose) -> Result<(), KalmanError> {
        if let Some(last) = self.entries.back() {
            if t <= last.t {
                return Err(KalmanError::NonMonotoneLog { prev: last.t, next: t });
            }
        }
        self.entries.push_back(CommandEntry {
            t,
            command,
            odometry,
        });
        while self
            .entries
            .front()
            .is_some_and(|e| e.t < t - self.horizon)
        {
            self.entries.pop_front();
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn last(&self) -> Option<&CommandEntry> {
        self.entries.back()
    }

    pub fn last_command(&self) -> Option<Vector6<f64>> {
        self.entries.back().map(|e| e.command)
    }

    fn span(&self) -> (f64, f64) {
        match (self.entries.front(), self.entries.back()) {
            (Some(a), Some(b)) => (a.t, b.t),
            _ => (f64::NAN, f64::NAN),
        }
    }

    /// Odometry at `t`, interpolated between the bracketing entries.
    pub fn odometry_at(&self, t: f64) -> Result<Pose, KalmanError> {
        let (start, end) = self.span();
        let horizon_err = KalmanError::LogHorizonExceeded { t, start, end };
        if self.entries.is_empty() || t < start - TIME_EPS || t > end + TIME_EPS {
            return Err(horizon_err);
        }
        let idx = self.entries.partition_point(|e| e.t < t);
        if idx == 0 {
            return Ok(self.entries[0].odometry);
        }
        if idx == self.entries.len() {
            return Ok(self.entries[idx - 1].odometry);
        }
        let (a, b) = (&self.entries[idx - 1], &self.entries[idx]);
        let s = (t - a.t) / (b.t - a.t);
        Ok(interpolate(&a.odometry, &b.odometry, s))
    }
}

/// Advances a stale measurement to time `at` with the odometry motion since
/// capture: `z_hat = z(t_L) * odo(t_L)^-1 * odo(at)`.
pub fn compensate(
    m: &DelayedMeasurement,
    log: &CommandLog,
    at: f64,
) -> Result<Vector6<f64>, KalmanError> {
    let odo_then = log.odometry_at(m.t_capture)?;
    let odo_now = log.odometry_at(at)?;
    let measured = Pose::from_vector(&m.z);
    let advanced = measured.compose(&odo_then.inverse()).compose(&odo_now);
    let mut v = advanced.to_vector();
    // keep angles on the measurement's branch
    for c in 3..6 {
        v[c] = m.z[c] + wrap_angle(v[c] - m.z[c]);
    }
    Ok(v)
}

/// Result of one control tick of the dual-rate filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickOutcome {
    pub state: FilterState,
    /// Pose estimate handed to the controller.
    pub estimate: Vector6<f64>,
    /// Camera updates consumed this tick.
    pub updates: usize,
    /// Capture time of the newest consumed measurement.
    pub last_capture: Option<f64>,
}

/// Control-rate tick: every queued measurement delivered by `clock` is
/// compensated, predicted and updated in capture order; otherwise the
/// previous posterior is returned unchanged.
pub fn step_dual_rate(
    clock: f64,
    state: &FilterState,
    log: &CommandLog,
    pending: &mut VecDeque<DelayedMeasurement>,
    noise: &NoiseModel,
) -> Result<TickOutcome, KalmanError> {
    drain_pending(clock, state, log, pending, noise, true)
}

fn drain_pending(
    clock: f64,
    state: &FilterState,
    log: &CommandLog,
    pending: &mut VecDeque<DelayedMeasurement>,
    noise: &NoiseModel,
    compensate_latency: bool,
) -> Result<TickOutcome, KalmanError> {
    let mut st = *state;
    let mut updates = 0;
    let mut last_capture = None;
    while pending.front().is_some_and(|m| m.t_delivery <= clock + TIME_EPS) {
        let m = pending.pop_front().expect("front checked");
        let z_hat = if compensate_latency {
            compensate(&m, log, clock)?
        } else {
            m.z
        };
        let command = log.last_command().unwrap_or(st.x);
        st = update(&predict(&st, &command, noise), &z_hat, noise)?;
        updates += 1;
        last_capture = Some(m.t_capture);
    }
    Ok(TickOutcome {
        state: st,
        estimate: st.x,
        updates,
        last_capture,
    })
}

/// Filter plus its measurement queue.
#[derive(Debug, Clone)]
pub struct DualRateFilter {
    pub state: FilterState,
    pub noise: NoiseModel,
    /// Advance stale measurements with odometry before the update.
    pub compensate_latency: bool,
    pending: VecDeque<DelayedMeasurement>,
    last_capture: Option<f64>,
}

impl DualRateFilter {
    pub fn new(state: FilterState, noise: NoiseModel) -> Self {
        Self {
            state,
            noise,
            compensate_latency: true,
            pending: VecDeque::new(),
            last_capture: None,
        }
    }

    /// Queues a measurement. Captures older than an already queued or
    /// consumed one are rejected.
    pub fn enqueue(&mut self, m: DelayedMeasurement) -> Result<(), KalmanError> {
        let newest = self
            .pending
            .back()
            .map(|p| p.t_capture)
            .or(self.last_capture);
        if let Some(prev) = newest {
            if m.t_capture <= prev {
                return Err(KalmanError::LogHorizonExceeded {
                    t: m.t_capture,
                    start: prev,
                    end: m.t_delivery,
                });
            }
        }
        self.pending.push_back(m);
        Ok(())
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Drops queued measurements, e.g. when tracking of the target stops.
    pub fn clear_pending(&mut self) {
        self.pending.clear();
    }

    pub fn tick(&mut self, clock: f64, log: &CommandLog) -> Result<TickOutcome, KalmanError> {
        let out = drain_pending(
            clock,
            &self.state,
            log,
            &mut self.pending,
            &self.noise,
            self.compensate_latency,
        )?;
        self.state = out.state;
        if out.last_capture.is_some() {
            self.last_capture = out.last_capture;
        }
        Ok(out)
    }
}

/// Measurement covariance from a slow straight-line run.
///
/// Translations are fitted per axis with a straight line in the sample index
/// (constant-velocity motion), rotations with a constant; the diagonal holds
/// the residual variances with `n - 2` and `n - 1` degrees of freedom.
pub fn estimate_r(line: &[Vector6<f64>]) -> Result<Vector6<f64>, KalmanError> {
    const MIN_SAMPLES: usize = 10;
    let n = line.len();
    if n < MIN_SAMPLES {
        return Err(KalmanError::TooFewSamples {
            needed: MIN_SAMPLES,
            got: n,
        });
    }
    let nf = n as f64;
    let s_mean = (nf - 1.0) / 2.0;
    let s_var: f64 = (0..n).map(|i| (i as f64 - s_mean).powi(2)).sum();

    let mut out = Vector6::zeros();
    for c in 0..3 {
        let mean = line.iter().map(|v| v[c]).sum::<f64>() / nf;
        let slope = line
            .iter()
            .enumerate()
            .map(|(i, v)| (i as f64 - s_mean) * (v[c] - mean))
            .sum::<f64>()
            / s_var;
        let ss: f64 = line
            .iter()
            .enumerate()
            .map(|(i, v)| (v[c] - mean - slope * (i as f64 - s_mean)).powi(2))
            .sum();
        out[c] = ss / (nf - 2.0);
    }
    for c in 3..6 {
        // residuals about the first sample's branch
        let anchor = line[0][c];
        let r: Vec<f64> = line.iter().map(|v| wrap_angle(v[c] - anchor)).collect();
        let mean = r.iter().sum::<f64>() / nf;
        out[c] = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    }
    Ok(out)
}
