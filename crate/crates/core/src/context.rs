//! Task-context classification from demonstration spread and the resulting
//! three-level speed plan.
//!
//! High cross-demonstration spread marks end-point-driven motion that may be
//! sped up; low spread marks contact-driven motion that is slowed down. A
//! ratio `r` scales the local duration of each reference step, so `r = 0.5`
//! runs twice as fast and `r = 2` half as fast as demonstrated.

use crate::demo::ReferenceTrajectory;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContextError {
    #[error("speed plan has {plan} steps but the reference has {reference}")]
    LengthMismatch { plan: usize, reference: usize },
}

/// Per-step spread of a reference trajectory: translational (m) and
/// rotational (rad).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEnvelope {
    pub v_t: Vec<f64>,
    pub v_r: Vec<f64>,
}

impl VarianceEnvelope {
    pub fn len(&self) -> usize {
        self.v_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_t.is_empty()
    }
}

/// Norms of the translational and rotational standard deviations at every
/// step; translation is converted from mm to m.
pub fn envelope(reference: &ReferenceTrajectory) -> VarianceEnvelope {
    let (v_t, v_r) = reference
        .points
        .iter()
        .map(|p| {
            let s = &p.std;
            (s.fixed_rows::<3>(0).norm() / 1000.0, s.fixed_rows::<3>(3).norm())
        })
        .unzip();
    VarianceEnvelope { v_t, v_r }
}

/// Thresholds and speed levels of the context classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextConfig {
    /// m; any spread above this permits the fast level.
    pub fast_translation: f64,
    /// rad
    pub fast_rotation: f64,
    /// m; both spreads below their slow thresholds select the slow level.
    pub slow_translation: f64,
    /// rad
    pub slow_rotation: f64,
    pub fast_ratio: f64,
    pub normal_ratio: f64,
    pub slow_ratio: f64,
    /// Width of the majority filter applied to the raw plan (1 disables it).
    pub smoothing_width: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            fast_translation: 0.01,
            fast_rotation: 0.2,
            slow_translation: 0.005,
            slow_rotation: 0.1,
            fast_ratio: 0.5,
            normal_ratio: 1.0,
            slow_ratio: 2.0,
            smoothing_width: 5,
        }
    }
}

impl ContextConfig {
    pub fn levels(&self) -> [f64; 3] {
        [self.fast_ratio, self.normal_ratio, self.slow_ratio]
    }

    /// Fast case is tested first, then the slow case; everything else is
    /// normal speed.
    pub fn classify(&self, v_t: f64, v_r: f64) -> f64 {
        if v_t > self.fast_translation || v_r > self.fast_rotation {
            self.fast_ratio
        } else if v_t < self.slow_translation && v_r < self.slow_rotation {
            self.slow_ratio
        } else {
            self.normal_ratio
        }
    }
}

/// Classifier with the default thresholds (0.01/0.005 m, 0.2/0.1 rad).
pub fn classify(v_t: f64, v_r: f64) -> f64 {
    ContextConfig::default().classify(v_t, v_r)
}

/// Duration ratio per reference step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedPlan {
    pub ratios: Vec<f64>,
}

impl SpeedPlan {
    pub fn uniform(len: usize, ratio: f64) -> Self {
        Self {
            ratios: vec![ratio; len],
        }
    }

    pub fn len(&self) -> usize {
        self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }

    /// Every ratio is one of the configured levels.
    pub fn is_valid(&self, cfg: &ContextConfig) -> bool {
        let levels = cfg.levels();
        self.ratios.iter().all(|r| levels.contains(r))
    }
}

pub fn classify_envelope(env: &VarianceEnvelope, cfg: &ContextConfig) -> SpeedPlan {
    SpeedPlan {
        ratios: env
            .v_t
            .iter()
            .zip(&env.v_r)
            .map(|(&t, &r)| cfg.classify(t, r))
            .collect(),
    }
}

/// Centred majority filter over a window of `width` steps (clipped at the
/// ends). On a tie the current value is kept if it is among the winners,
/// otherwise the slowest winner is taken.
pub fn smooth_plan(plan: &SpeedPlan, width: usize) -> SpeedPlan {
    if width <= 1 || plan.len() < 2 {
        return plan.clone();
    }
    let half = width / 2;
    let n = plan.len();
    let ratios = (0..n)
        .map(|i| {
            let window = &plan.ratios[i.saturating_sub(half)..(i + half + 1).min(n)];
            let mut counts: Vec<(f64, usize)> = Vec::with_capacity(3);
            for &r in window {
                match counts.iter_mut().find(|(v, _)| *v == r) {
                    Some(c) => c.1 += 1,
                    None => counts.push((r, 1)),
                }
            }
            let top = counts.iter().map(|c| c.1).max().unwrap_or(0);
            let current = plan.ratios[i];
            let winners: Vec<f64> = counts.iter().filter(|c| c.1 == top).map(|c| c.0).collect();
            if winners.contains(&current) {
                current
            } else {
                winners.into_iter().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect();
    SpeedPlan { ratios }
}

/// envelope → classify → smooth.
pub fn plan_speed(reference: &ReferenceTrajectory, cfg: &ContextConfig) -> SpeedPlan {
    let raw = classify_envelope(&envelope(reference), cfg);
    smooth_plan(&raw, cfg.smoothing_width)
}

/// Rescales the duration of step `i` (from waypoint `i` to `i + 1`) by
/// `plan.ratios[i]`. Waypoint poses are untouched; the final ratio has no
/// following interval and is ignored.
pub fn retime(
    reference: &ReferenceTrajectory,
    plan: &SpeedPlan,
) -> Result<ReferenceTrajectory, ContextError> {
    if plan.len() != reference.len() {
        return Err(ContextError::LengthMismatch {
            plan: plan.len(),
            reference: reference.len(),
        });
    }
    let mut out = reference.clone();
    for i in 1..out.points.len() {
        let dt = reference.points[i].t - reference.points[i - 1].t;
        out.points[i].t = out.points[i - 1].t + dt * plan.ratios[i - 1];
    }
    Ok(out)
}
