use super::config::{grip_transform, ExperimentConfig};
use super::io::PlanRow;
use super::synth::gen_demos;
use super::HarnessError;
use crate::context::{classify_envelope, envelope, retime, smooth_plan, ContextConfig, SpeedPlan};
use crate::demo::{
    encode_primitive, moving_tool, segment, DemoError, Demonstration, Frame, Gmm, ReferencePoint,
    ReferenceTrajectory, Tool, PRIMITIVE_COUNT,
};
use crate::geometry::{Pose, TimedPose};
use crate::sim::Leg;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Serialized GMM over `[t, x, y, z, alpha, beta, theta]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmRecord {
    pub priors: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major covariance matrices.
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl From<&Gmm> for GmmRecord {
    fn from(g: &Gmm) -> Self {
        Self {
            priors: g.priors.clone(),
            means: g.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: g
                .covariances
                .iter()
                .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
        }
    }
}

impl GmmRecord {
    pub fn to_gmm(&self) -> Gmm {
        Gmm {
            priors: self.priors.clone(),
            means: self.means.iter().map(|m| DVector::from_vec(m.clone())).collect(),
            covariances: self
                .covariances
                .iter()
                .map(|c| DMatrix::from_fn(c.len(), c.len(), |i, j| c[i][j]))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolModel {
    pub tool: Tool,
    pub frame: Frame,
    pub demos: usize,
    pub components: usize,
    pub gmm: GmmRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveModel {
    pub label: u8,
    pub moving_tool: Tool,
    pub tools: Vec<ToolModel>,
}

/// Everything learned from a set of demonstrations, minus the reference
/// trajectories (stored as CSV next to it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedModel {
    pub config_hash: String,
    pub seed: u64,
    /// Needle pose in the holding tool's frame.
    pub grip: [f64; 6],
    pub primitives: Vec<PrimitiveModel>,
}

#[derive(Debug, Clone)]
pub struct Learned {
    pub model: LearnedModel,
    /// Both tools for every primitive, ordered by label then tool.
    pub references: Vec<ReferenceTrajectory>,
}

/// Per-primitive tracks of one tool across all demos.
fn tracks(
    demos: &[Demonstration],
    label: u8,
    tool: Tool,
) -> Result<(Frame, Vec<Vec<TimedPose>>), HarnessError> {
    let mut frame = None;
    let mut out = Vec::with_capacity(demos.len());
    for demo in demos {
        let segs = segment(demo)?;
        let matches: Vec<_> = segs.iter().filter(|s| s.label == label).collect();
        let [seg] = matches.as_slice() else {
            return Err(DemoError::InvalidStateSequence {
                index: 0,
                reason: format!("demo {} has {} segments of primitive {label}", demo.id, matches.len()),
            }
            .into());
        };
        let samples = &demo.samples[seg.start..seg.end];
        let f = samples[0].frame(tool);
        if samples.iter().any(|s| s.frame(tool) != f) || frame.is_some_and(|g| g != f) {
            return Err(DemoError::InvalidStateSequence {
                index: seg.start,
                reason: format!("tool {tool:?} changes frame within primitive {label}"),
            }
            .into());
        }
        frame = Some(f);
        out.push(samples.iter().map(|s| TimedPose::new(s.t, *s.pose(tool))).collect());
    }
    Ok((frame.ok_or(DemoError::EmptySequence)?, out))
}

/// Segment every demo, then align, encode and regress each primitive for
/// both tools.
pub fn learn(demos: &[Demonstration], cfg: &ExperimentConfig) -> Result<Learned, HarnessError> {
    if demos.is_empty() {
        return Err(DemoError::EmptySequence.into());
    }
    let opts = cfg.learning.encode_options(cfg.seed);
    let jobs: Vec<(u8, Tool)> = (1..=PRIMITIVE_COUNT as u8)
        .flat_map(|l| [(l, Tool::A), (l, Tool::B)])
        .collect();
    let encoded = jobs
        .par_iter()
        .map(|&(label, tool)| {
            let (frame, tracks) = tracks(demos, label, tool)?;
            Ok(encode_primitive(label, tool, frame, &tracks, &opts)?)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let primitives = (1..=PRIMITIVE_COUNT as u8)
        .map(|label| PrimitiveModel {
            label,
            moving_tool: moving_tool(label).expect("valid label"),
            tools: encoded
                .iter()
                .filter(|e| e.reference.label == label)
                .map(|e| ToolModel {
                    tool: e.reference.tool,
                    frame: e.reference.frame,
                    demos: demos.len(),
                    components: e.gmm.n_components(),
                    gmm: GmmRecord::from(&e.gmm),
                })
                .collect(),
        })
        .collect();

    Ok(Learned {
        model: LearnedModel {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            grip: cfg.demos.grip,
            primitives,
        },
        references: encoded.into_iter().map(|e| e.reference).collect(),
    })
}

pub fn find_reference(
    refs: &[ReferenceTrajectory],
    label: u8,
    tool: Tool,
) -> Result<&ReferenceTrajectory, HarnessError> {
    refs.iter()
        .find(|r| r.label == label && r.tool == tool)
        .ok_or_else(|| HarnessError::Config(format!("no reference for primitive {label}, tool {tool:?}")))
}

/// Speed plan of each primitive's moving tool, with its inputs.
pub fn plan(refs: &[ReferenceTrajectory], ctx: &ContextConfig) -> Result<Vec<PlanRow>, HarnessError> {
    let mut rows = Vec::new();
    for label in 1..=PRIMITIVE_COUNT as u8 {
        let tool = moving_tool(label).expect("valid label");
        let r = find_reference(refs, label, tool)?;
        let env = envelope(r);
        let raw = classify_envelope(&env, ctx);
        let smooth = smooth_plan(&raw, ctx.smoothing_width);
        let timed = retime(r, &smooth)?;
        for i in 0..r.len() {
            rows.push(PlanRow {
                primitive: label,
                tool,
                index: i,
                t: r.points[i].t,
                v_t_m: env.v_t[i],
                v_r_rad: env.v_r[i],
                r_raw: raw.ratios[i],
                r: smooth.ratios[i],
                t_retimed: timed.points[i].t,
            });
        }
    }
    Ok(rows)
}

/// The moving tool's reference of every primitive, expressed in the mandrel
/// frame. Object-local references ride on the holding tool's reference.
pub fn mandrel_legs(refs: &[ReferenceTrajectory], grip: &Pose) -> Result<Vec<Leg>, HarnessError> {
    (1..=PRIMITIVE_COUNT as u8)
        .map(|label| {
            let tool = moving_tool(label).expect("valid label");
            let r = find_reference(refs, label, tool)?;
            let world = match r.frame {
                Frame::World => r.clone(),
                Frame::ObjectLocal => {
                    let holder = find_reference(refs, label, tool.other())?;
                    if holder.frame != Frame::World || holder.len() != r.len() {
                        return Err(HarnessError::Config(format!(
                            "primitive {label}: holder reference does not match the moving tool"
                        )));
                    }
                    ReferenceTrajectory {
                        frame: Frame::World,
                        points: r
                            .points
                            .iter()
                            .zip(&holder.points)
                            .map(|(p, h)| ReferencePoint {
                                pose: h.pose.compose(grip).compose(&p.pose),
                                ..*p
                            })
                            .collect(),
                        ..r.clone()
                    }
                }
            };
            Ok(Leg::new(world)?)
        })
        .collect()
}

/// Demos, learned model and plan for a configuration, from recorded demos
/// when `paths.demos` is set and synthetic ones otherwise.
pub struct Artifacts {
    pub demos: Vec<Demonstration>,
    pub learned: Learned,
    pub plan: Vec<PlanRow>,
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<Artifacts, HarnessError> {
    let demos = match &cfg.paths.demos {
        Some(dir) => super::io::read_demos(dir)?,
        None => gen_demos(&cfg.demos, cfg.seed)?,
    };
    let learned = learn(&demos, cfg)?;
    let plan = plan(&learned.references, &cfg.context)?;
    Ok(Artifacts {
        demos,
        learned,
        plan,
    })
}

/// Plans in leg order, from plan rows.
pub fn leg_plans(rows: &[PlanRow]) -> Vec<SpeedPlan> {
    super::io::plans_from_rows(rows).into_values().collect()
}

pub fn grip_pose(cfg: &ExperimentConfig) -> Pose {
    Pose::from_transform(&grip_transform(&cfg.demos))
}
