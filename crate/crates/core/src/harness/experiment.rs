use super::config::ExperimentConfig;
use super::io::PlanRow;
use super::pipeline::{grip_pose, leg_plans, mandrel_legs};
use super::HarnessError;
use crate::context::SpeedPlan;
use crate::demo::ReferenceTrajectory;
use crate::sim::{evaluate, servo_loop, Leg, Metrics, Scenario, ServoMode, TraceRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Mandrel-frame legs and their speed plans, ready to simulate.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub legs: Vec<Leg>,
    pub plans: Vec<SpeedPlan>,
}

impl Prepared {
    pub fn new(
        cfg: &ExperimentConfig,
        references: &[ReferenceTrajectory],
        plan: &[PlanRow],
    ) -> Result<Self, HarnessError> {
        let legs = mandrel_legs(references, &grip_pose(cfg))?;
        let plans = leg_plans(plan);
        if plans.len() != legs.len() {
            return Err(HarnessError::Config(format!(
                "plan covers {} primitives, expected {}",
                plans.len(),
                legs.len()
            )));
        }
        Ok(Self { legs, plans })
    }

    /// References the executed motion is scored against.
    pub fn truth(&self) -> Vec<ReferenceTrajectory> {
        self.legs.iter().map(|l| l.reference.clone()).collect()
    }

    /// Scenario for one trial: optionally retimed by the speed plan, then
    /// down-sampled by `factor`.
    pub fn scenario(
        &self,
        cfg: &ExperimentConfig,
        trial: usize,
        factor: usize,
    ) -> Result<Scenario, HarnessError> {
        let legs = self
            .legs
            .iter()
            .zip(&self.plans)
            .map(|(leg, plan)| {
                let leg = if cfg.sim.use_speed_plan { leg.retimed(plan)? } else { leg.clone() };
                Ok(leg.downsample(factor))
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        let mut s = Scenario::new(legs, trial_seed(cfg.seed, trial));
        s.mandrel = cfg.mandrel();
        s.filter = cfg.noise_model()?;
        s.compensate_latency = cfg.sim.compensate_latency;
        s.settle_time = cfg.sim.settle_time;
        s.divergence_bound = cfg.sim.divergence_bound;
        Ok(s)
    }
}

/// Independent noise seed of trial `k`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(trial as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn run_trial(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    mode: ServoMode,
    trial: usize,
    factor: usize,
) -> Result<(TraceRecord, Metrics), HarnessError> {
    let scenario = prep.scenario(cfg, trial, factor)?;
    let trace = servo_loop(&scenario, &cfg.robot_model()?, &cfg.camera_model()?, mode, &[])?;
    let metrics = evaluate(&trace, &prep.truth())?;
    Ok((trace, metrics))
}

/// Fields shared by all reports so a run can be reproduced from its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl ReportHeader {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            config: cfg.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub mode: ServoMode,
    /// Trials averaged into this row.
    pub trials: usize,
    pub translation_mm: f64,
    pub rotation_deg: f64,
    pub duration_s: f64,
}

/// One row per visual-servo trial plus an open-loop row averaged over the
/// same trial seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub variant: String,
    pub mode: ServoMode,
    pub trials: usize,
    pub translation_mm: f64,
    pub translation_sd_mm: f64,
    pub rotation_deg: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    /// Down-sampling factor of the reference.
    Speed,
    /// Magnitude of the hand-eye translation bias (mm).
    Bias,
    /// Camera latency (s), with and without compensation.
    Latency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub kind: SweepKind,
    pub points: Vec<SweepPoint>,
}

struct Job {
    value: f64,
    variant: String,
    mode: ServoMode,
    cfg: ExperimentConfig,
    factor: usize,
}

/// Runs every job for every trial concurrently; results come back in job
/// order, then trial order.
fn run_jobs(prep: &Prepared, jobs: &[Job], trials: usize) -> Result<Vec<Vec<Metrics>>, HarnessError> {
    if trials == 0 {
        return Err(HarnessError::EmptyReport);
    }
    let flat: Vec<(usize, usize)> = (0..jobs.len())
        .flat_map(|j| (0..trials).map(move |t| (j, t)))
        .collect();
    let results = flat
        .par_iter()
        .map(|&(j, t)| {
            let job = &jobs[j];
            run_trial(prep, &job.cfg, job.mode, t, job.factor).map(|(_, m)| m)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(results.chunks(trials).map(|c| c.to_vec()).collect())
}

fn mean(ms: &[Metrics]) -> (Metrics, f64) {
    let n = ms.len() as f64;
    let t = ms.iter().map(|m| m.translation_mm).sum::<f64>() / n;
    let sd = if ms.len() > 1 {
        (ms.iter().map(|m| (m.translation_mm - t).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (
        Metrics {
            translation_mm: t,
            rotation_deg: ms.iter().map(|m| m.rotation_deg).sum::<f64>() / n,
            duration_s: ms.iter().map(|m| m.duration_s).sum::<f64>() / n,
        },
        sd,
    )
}

pub fn run_table(prep: &Prepared, cfg: &ExperimentConfig) -> Result<TableReport, HarnessError> {
    let trials = cfg.experiment.trials;
    let job = |mode| Job {
        value: 0.0,
        variant: mode_name(mode),
        mode,
        cfg: cfg.clone(),
        factor: 1,
    };
    let res = run_jobs(prep, &[job(ServoMode::VisualServo), job(ServoMode::OpenLoop)], trials)?;
    let mut rows: Vec<TableRow> = res[0]
        .iter()
        .enumerate()
        .map(|(k, m)| TableRow {
            name: format!("Trial {}", k + 1),
            mode: ServoMode::VisualServo,
            trials: 1,
            translation_mm: m.translation_mm,
            rotation_deg: m.rotation_deg,
            duration_s: m.duration_s,
        })
        .collect();
    let (open, _) = mean(&res[1]);
    rows.push(TableRow {
        name: "No Visual Servoing".into(),
        mode: ServoMode::OpenLoop,
        trials,
        translation_mm: open.translation_mm,
        rotation_deg: open.rotation_deg,
        duration_s: open.duration_s,
    });
    Ok(TableReport {
        header: ReportHeader::new(cfg),
        rows,
    })
}

fn mode_name(mode: ServoMode) -> String {
    mode.name().to_string()
}

pub fn run_sweep(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    kind: SweepKind,
) -> Result<SweepReport, HarnessError> {
    let mut jobs = Vec::new();
    match kind {
        SweepKind::Speed => {
            for &f in &cfg.sweep.speed_factors {
                jobs.push(Job {
                    value: f as f64,
                    variant: mode_name(ServoMode::VisualServo),
                    mode: ServoMode::VisualServo,
                    cfg: cfg.clone(),
                    factor: f,
                });
            }
        }
        SweepKind::Bias => {
            for &b in &cfg.sweep.biases_mm {
                for mode in [ServoMode::VisualServo, ServoMode::OpenLoop] {
                    jobs.push(Job {
                        value: b,
                        variant: mode_name(mode),
                        mode,
                        cfg: cfg.with_bias_mm(b),
                        factor: 1,
                    });
                }
            }
        }
        SweepKind::Latency => {
            for &l in &cfg.sweep.latencies_s {
                for compensate in [true, false] {
                    let mut c = cfg.clone();
                    c.camera.latency = l;
                    c.sim.compensate_latency = compensate;
                    jobs.push(Job {
                        value: l,
                        variant: if compensate { "compensated" } else { "uncompensated" }.into(),
                        mode: ServoMode::VisualServo,
                        cfg: c,
                        factor: 1,
                    });
                }
            }
        }
    }
    if jobs.is_empty() {
        return Err(HarnessError::EmptyReport);
    }
    let trials = cfg.experiment.trials;
    let res = run_jobs(prep, &jobs, trials)?;
    let points = jobs
        .iter()
        .zip(&res)
        .map(|(job, ms)| {
            let (m, sd) = mean(ms);
            SweepPoint {
                value: job.value,
                variant: job.variant.clone(),
                mode: job.mode,
                trials,
                translation_mm: m.translation_mm,
                translation_sd_mm: sd,
                rotation_deg: m.rotation_deg,
                duration_s: m.duration_s,
            }
        })
        .collect();
    Ok(SweepReport {
        header: ReportHeader::new(cfg),
        kind,
        points,
    })
}
