//! Demonstration encoding: segmentation into motion primitives, DTW
//! alignment, GMM fitting and GMR reference generation.

mod align;
mod dtw;
mod gmm;
mod reframe;
mod segment;

pub use align::{
    align_demos, encode_primitive, unwrap_angles, AlignedDemoSet, EncodeOptions, EncodedPrimitive,
};
pub use dtw::{dtw_align, Alignment};
pub use gmm::{
    fit_gmm, fit_gmm_traced, gmr, select_components, EmOptions, Gmm, GmmError, GmrOutput,
};
pub use reframe::{reframe, unreframe};
pub use segment::{moving_tool, segment, table_row, Segment, PRIMITIVE_COUNT};

use crate::geometry::{interpolate, Pose};
use nalgebra::Vector6;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DemoError {
    #[error("empty sequence")]
    EmptySequence,
    #[error("invalid gripper/holder state sequence at sample {index}: {reason}")]
    InvalidStateSequence { index: usize, reason: String },
    #[error("timestamp mismatch at index {index}: {a} vs {b}")]
    TimestampMismatch { index: usize, a: f64, b: f64 },
    #[error("timestamps not strictly increasing at sample {0}")]
    NonMonotoneTime(usize),
    #[error(transparent)]
    Gmm(#[from] GmmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gripper {
    Open,
    Closed,
}

/// Which tool holds the manipulated object (the needle).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Holder {
    #[serde(rename = "A")]
    WithA,
    #[serde(rename = "B")]
    WithB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tool {
    A,
    B,
}

impl Tool {
    pub fn other(self) -> Tool {
        match self {
            Tool::A => Tool::B,
            Tool::B => Tool::A,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tool::A => "a",
            Tool::B => "b",
        }
    }

    pub fn holds(self, holder: Holder) -> bool {
        matches!((self, holder), (Tool::A, Holder::WithA) | (Tool::B, Holder::WithB))
    }
}

/// Frame a tool pose is recorded in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    World,
    #[serde(rename = "object")]
    ObjectLocal,
}

impl Frame {
    /// A tool holding the object is recorded in the world frame, the other one
    /// in the object's local frame.
    pub fn for_tool(tool: Tool, holder: Holder) -> Frame {
        if tool.holds(holder) {
            Frame::World
        } else {
            Frame::ObjectLocal
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoSample {
    pub t: f64,
    pub pose_a: Pose,
    pub pose_b: Pose,
    pub gripper_a: Gripper,
    pub gripper_b: Gripper,
    pub holder: Holder,
    pub frame_a: Frame,
    pub frame_b: Frame,
}

impl DemoSample {
    pub fn pose(&self, tool: Tool) -> &Pose {
        match tool {
            Tool::A => &self.pose_a,
            Tool::B => &self.pose_b,
        }
    }

    pub fn frame(&self, tool: Tool) -> Frame {
        match tool {
            Tool::A => self.frame_a,
            Tool::B => self.frame_b,
        }
    }

    pub fn state(&self) -> (Gripper, Gripper, Holder) {
        (self.gripper_a, self.gripper_b, self.holder)
    }

    /// The holding tool must have its gripper closed.
    pub fn is_consistent(&self) -> bool {
        match self.holder {
            Holder::WithA => self.gripper_a == Gripper::Closed,
            Holder::WithB => self.gripper_b == Gripper::Closed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub id: String,
    pub samples: Vec<DemoSample>,
}

impl Demonstration {
    pub fn new(id: impl Into<String>, samples: Vec<DemoSample>) -> Result<Self, DemoError> {
        let demo = Self {
            id: id.into(),
            samples,
        };
        demo.validate()?;
        Ok(demo)
    }

    pub fn validate(&self) -> Result<(), DemoError> {
        if self.samples.is_empty() {
            return Err(DemoError::EmptySequence);
        }
        for (i, w) in self.samples.windows(2).enumerate() {
            if w[1].t.partial_cmp(&w[0].t) != Some(std::cmp::Ordering::Greater) {
                return Err(DemoError::NonMonotoneTime(i + 1));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One GMR output step: mean pose plus per-dimension standard deviation
/// (`[mm, mm, mm, rad, rad, rad]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub t: f64,
    pub pose: Pose,
    pub std: Vector6<f64>,
}

/// Mean-plus-spread reference motion of one tool over one primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub label: u8,
    pub tool: Tool,
    pub frame: Frame,
    pub points: Vec<ReferencePoint>,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.points.iter().map(|p| p.pose).collect()
    }

    /// Index of the step `[t_i, t_{i+1})` containing `t`, clamped to the
    /// valid range.
    pub fn index_at(&self, t: f64) -> usize {
        let i = self.points.partition_point(|p| p.t <= t);
        i.saturating_sub(1).min(self.points.len().saturating_sub(1))
    }

    /// Pose at time `t`, interpolated between waypoints and held constant
    /// outside the time span.
    pub fn pose_at(&self, t: f64) -> Pose {
        let i = self.index_at(t);
        match self.points.get(i + 1) {
            Some(b) => {
                let a = &self.points[i];
                interpolate(&a.pose, &b.pose, (t - a.t) / (b.t - a.t))
            }
            None => self.points.last().map(|p| p.pose).unwrap_or_default(),
        }
    }

    /// Keeps every `factor`-th waypoint (and the last one) while keeping the
    /// original per-waypoint period, so the motion runs `factor` times faster.
    pub fn downsample(&self, factor: usize) -> ReferenceTrajectory {
        let factor = factor.max(1);
        let n = self.points.len();
        if n == 0 || factor == 1 {
            return self.clone();
        }
        let t0 = self.points[0].t;
        let mut idx: Vec<usize> = (0..n).step_by(factor).collect();
        if *idx.last().unwrap() != n - 1 {
            idx.push(n - 1);
        }
        let points = idx
            .into_iter()
            .map(|i| {
                let p = self.points[i];
                ReferencePoint {
                    t: t0 + (p.t - t0) / factor as f64,
                    ..p
                }
            })
            .collect();
        ReferenceTrajectory {
            points,
            ..self.clone()
        }
    }
}
