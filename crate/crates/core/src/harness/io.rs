//! File formats.
//!
//! Trajectory CSV: `t,x_mm,y_mm,z_mm,alpha_rad,beta_rad,theta_rad,gripper_a,
//! gripper_b,holder,frame`, one row per sample. Demonstrations are stored as
//! one such file per tool (`demo_<id>_a.csv`, `demo_<id>_b.csv`); references
//! append the per-dimension std (`reference_p<label>_<tool>.csv`). Model,
//! metrics and reports are JSON. Floats are written in their shortest
//! round-trip form. Pose columns are first snapped to a 1e-10 grid: poses are
//! held as quaternions, and the snap absorbs the last-bit drift of the Euler
//! conversion so write → read → write is byte-identical.

use super::HarnessError;
use crate::context::SpeedPlan;
use crate::demo::{
    moving_tool, table_row, DemoSample, Demonstration, Frame, Gripper, Holder, ReferencePoint,
    ReferenceTrajectory, Tool,
};
use crate::geometry::Pose;
use crate::sim::{TraceRecord, TraceRow};
use nalgebra::Vector6;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const POSE_GRID: f64 = 1e10;

/// Euler vector of `pose`, snapped to the pose column grid.
pub fn pose_columns(pose: &Pose) -> Vector6<f64> {
    pose.to_vector().map(|x| (x * POSE_GRID).round() / POSE_GRID + 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
    pub alpha_rad: f64,
    pub beta_rad: f64,
    pub theta_rad: f64,
    pub gripper_a: Gripper,
    pub gripper_b: Gripper,
    pub holder: Holder,
    pub frame: Frame,
}

impl TrajectoryRow {
    pub fn new(t: f64, pose: &Pose, state: (Gripper, Gripper, Holder), frame: Frame) -> Self {
        let v = pose_columns(pose);
        Self {
            t,
            x_mm: v[0],
            y_mm: v[1],
            z_mm: v[2],
            alpha_rad: v[3],
            beta_rad: v[4],
            theta_rad: v[5],
            gripper_a: state.0,
            gripper_b: state.1,
            holder: state.2,
            frame,
        }
    }

    pub fn vector(&self) -> Vector6<f64> {
        Vector6::new(self.x_mm, self.y_mm, self.z_mm, self.alpha_rad, self.beta_rad, self.theta_rad)
    }

    pub fn pose(&self) -> Pose {
        Pose::from_vector(&self.vector())
    }

    pub fn state(&self) -> (Gripper, Gripper, Holder) {
        (self.gripper_a, self.gripper_b, self.holder)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReferenceRow {
    t: f64,
    x_mm: f64,
    y_mm: f64,
    z_mm: f64,
    alpha_rad: f64,
    beta_rad: f64,
    theta_rad: f64,
    gripper_a: Gripper,
    gripper_b: Gripper,
    holder: Holder,
    frame: Frame,
    sx_mm: f64,
    sy_mm: f64,
    sz_mm: f64,
    salpha_rad: f64,
    sbeta_rad: f64,
    stheta_rad: f64,
}

/// One step of a speed plan with the quantities that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub primitive: u8,
    pub tool: Tool,
    pub index: usize,
    pub t: f64,
    pub v_t_m: f64,
    pub v_r_rad: f64,
    pub r_raw: f64,
    pub r: f64,
    pub t_retimed: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    if !path.exists() {
        return Err(HarnessError::Missing(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    if let csv::ErrorKind::Io(io) = e.kind() {
        if io.kind() == std::io::ErrorKind::NotFound {
            return HarnessError::Missing(path.to_path_buf());
        }
    }
    HarnessError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn demo_path(dir: &Path, id: &str, tool: Tool) -> PathBuf {
    dir.join(format!("demo_{id}_{}.csv", tool.name()))
}

pub fn write_demo(dir: &Path, demo: &Demonstration) -> Result<(), HarnessError> {
    for tool in [Tool::A, Tool::B] {
        let rows: Vec<TrajectoryRow> = demo
            .samples
            .iter()
            .map(|s| TrajectoryRow::new(s.t, s.pose(tool), s.state(), s.frame(tool)))
            .collect();
        write_csv(&demo_path(dir, &demo.id, tool), &rows)?;
    }
    Ok(())
}

pub fn read_demo(dir: &Path, id: &str) -> Result<Demonstration, HarnessError> {
    let a_path = demo_path(dir, id, Tool::A);
    let a: Vec<TrajectoryRow> = read_csv(&a_path)?;
    let b: Vec<TrajectoryRow> = read_csv(&demo_path(dir, id, Tool::B))?;
    if a.len() != b.len() {
        return Err(HarnessError::Parse {
            path: a_path,
            message: format!("tool files differ in length: {} vs {}", a.len(), b.len()),
        });
    }
    let mut samples = Vec::with_capacity(a.len());
    for (i, (ra, rb)) in a.iter().zip(&b).enumerate() {
        if ra.t != rb.t {
            return Err(crate::demo::DemoError::TimestampMismatch { index: i, a: ra.t, b: rb.t }.into());
        }
        if ra.state() != rb.state() {
            return Err(crate::demo::DemoError::InvalidStateSequence {
                index: i,
                reason: "tool files disagree on gripper/holder state".into(),
            }
            .into());
        }
        samples.push(DemoSample {
            t: ra.t,
            pose_a: ra.pose(),
            pose_b: rb.pose(),
            gripper_a: ra.gripper_a,
            gripper_b: ra.gripper_b,
            holder: ra.holder,
            frame_a: ra.frame,
            frame_b: rb.frame,
        });
    }
    Ok(Demonstration::new(id, samples)?)
}

/// Demo ids present in `dir`, in numeric order where ids are numbers.
pub fn list_demos(dir: &Path) -> Result<Vec<String>, HarnessError> {
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("demo_")?.strip_suffix("_a.csv").map(str::to_string)
        })
        .collect();
    ids.sort_by(|x, y| match (x.parse::<u64>(), y.parse::<u64>()) {
        (Ok(a), Ok(b)) => a.cmp(&b),
        _ => x.cmp(y),
    });
    if ids.is_empty() {
        return Err(HarnessError::Missing(dir.join("demo_*_a.csv")));
    }
    Ok(ids)
}

pub fn write_demos(dir: &Path, demos: &[Demonstration]) -> Result<(), HarnessError> {
    demos.iter().try_for_each(|d| write_demo(dir, d))
}

pub fn read_demos(dir: &Path) -> Result<Vec<Demonstration>, HarnessError> {
    list_demos(dir)?.iter().map(|id| read_demo(dir, id)).collect()
}

pub fn reference_path(dir: &Path, label: u8, tool: Tool) -> PathBuf {
    dir.join(format!("reference_p{label}_{}.csv", tool.name()))
}

pub fn write_reference(path: &Path, r: &ReferenceTrajectory) -> Result<(), HarnessError> {
    let state = table_row(r.label).ok_or_else(|| HarnessError::Config(format!("unknown primitive {}", r.label)))?;
    let rows: Vec<ReferenceRow> = r
        .points
        .iter()
        .map(|p| {
            let v = pose_columns(&p.pose);
            ReferenceRow {
            t: p.t,
            x_mm: v[0],
            y_mm: v[1],
            z_mm: v[2],
            alpha_rad: v[3],
            beta_rad: v[4],
            theta_rad: v[5],
            gripper_a: state.0,
            gripper_b: state.1,
            holder: state.2,
            frame: r.frame,
            sx_mm: p.std[0],
            sy_mm: p.std[1],
            sz_mm: p.std[2],
            salpha_rad: p.std[3],
            sbeta_rad: p.std[4],
            stheta_rad: p.std[5],
        }
        })
        .collect();
    write_csv(path, &rows)
}

pub fn read_reference(path: &Path, label: u8, tool: Tool) -> Result<ReferenceTrajectory, HarnessError> {
    let rows: Vec<ReferenceRow> = read_csv(path)?;
    let frame = rows.first().map(|r| r.frame).ok_or_else(|| HarnessError::Parse {
        path: path.to_path_buf(),
        message: "no rows".into(),
    })?;
    Ok(ReferenceTrajectory {
        label,
        tool,
        frame,
        points: rows
            .iter()
            .map(|r| ReferencePoint {
                t: r.t,
                pose: Pose::from_vector(&Vector6::new(
                    r.x_mm, r.y_mm, r.z_mm, r.alpha_rad, r.beta_rad, r.theta_rad,
                )),
                std: Vector6::new(r.sx_mm, r.sy_mm, r.sz_mm, r.salpha_rad, r.sbeta_rad, r.stheta_rad),
            })
            .collect(),
    })
}

pub fn write_references(dir: &Path, refs: &[ReferenceTrajectory]) -> Result<(), HarnessError> {
    refs.iter().try_for_each(|r| write_reference(&reference_path(dir, r.label, r.tool), r))
}

/// Both tools' references for every primitive, ordered by label then tool.
pub fn read_references(dir: &Path) -> Result<Vec<ReferenceTrajectory>, HarnessError> {
    let mut out = Vec::new();
    for label in 1..=crate::demo::PRIMITIVE_COUNT as u8 {
        for tool in [Tool::A, Tool::B] {
            out.push(read_reference(&reference_path(dir, label, tool), label, tool)?);
        }
    }
    Ok(out)
}

/// Plans keyed by primitive label.
pub fn plans_from_rows(rows: &[PlanRow]) -> BTreeMap<u8, SpeedPlan> {
    let mut out: BTreeMap<u8, SpeedPlan> = BTreeMap::new();
    for row in rows {
        out.entry(row.primitive).or_insert_with(|| SpeedPlan { ratios: Vec::new() }).ratios.push(row.r);
    }
    out
}

/// Ground-truth trace in the mandrel frame as trajectory CSV.
pub fn trace_rows(trace: &TraceRecord) -> Vec<TrajectoryRow> {
    let to_mandrel = trace.mandrel.inverse();
    trace
        .rows
        .iter()
        .map(|r| {
            let state = table_row(r.label).expect("valid label");
            TrajectoryRow::new(r.clock, &to_mandrel.compose(&r.truth), state, Frame::World)
        })
        .collect()
}

/// Rebuilds a trace from trajectory CSV rows. Legs are the contiguous runs of
/// equal gripper/holder state, labelled in primitive order.
pub fn trace_from_rows(rows: &[TrajectoryRow], dt: f64) -> Result<TraceRecord, HarnessError> {
    let mut out = Vec::with_capacity(rows.len());
    let mut leg = 0usize;
    let mut label = 0u8;
    for (i, r) in rows.iter().enumerate() {
        if i == 0 || r.state() != rows[i - 1].state() {
            if i > 0 {
                leg += 1;
            }
            label = (label + 1..=crate::demo::PRIMITIVE_COUNT as u8)
                .find(|&l| table_row(l) == Some(r.state()))
                .ok_or_else(|| crate::demo::DemoError::InvalidStateSequence {
                    index: i,
                    reason: format!("state {:?} does not continue the primitive order", r.state()),
                })?;
        }
        let pose = r.pose();
        out.push(TraceRow {
            clock: r.t,
            leg,
            label,
            tool: moving_tool(label).expect("valid label"),
            truth: pose,
            command: pose,
            estimate: None,
            measurement: None,
            r: 1.0,
        });
    }
    Ok(TraceRecord {
        mandrel: Pose::identity(),
        dt,
        rows: out,
        updates: 0,
        rejected: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceDetailRow {
    t: f64,
    leg: usize,
    primitive: u8,
    tool: Tool,
    r: f64,
    truth: String,
    command: String,
    estimate: String,
    measurement: String,
}

fn join(v: Option<Vector6<f64>>) -> String {
    v.map(|v| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "))
        .unwrap_or_default()
}

/// Per-tick loop internals (camera frame): truth, command, filter estimate
/// and raw measurement as space-separated pose vectors.
pub fn write_trace_detail(path: &Path, trace: &TraceRecord) -> Result<(), HarnessError> {
    let rows: Vec<TraceDetailRow> = trace
        .rows
        .iter()
        .map(|r| TraceDetailRow {
            t: r.clock,
            leg: r.leg,
            primitive: r.label,
            tool: r.tool,
            r: r.r,
            truth: join(Some(r.truth.to_vector())),
            command: join(Some(r.command.to_vector())),
            estimate: join(r.estimate),
            measurement: join(r.measurement),
        })
        .collect();
    write_csv(path, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{gen_demos, SyntheticDemoSpec};

    fn bytes(p: &Path) -> Vec<u8> {
        std::fs::read(p).unwrap()
    }

    #[test]
    fn demos_round_trip_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let demos = gen_demos(&SyntheticDemoSpec { count: 2, ..Default::default() }, 4).unwrap();
        write_demos(dir.path(), &demos).unwrap();
        let back = read_demos(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in demos.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            for (x, y) in a.samples.iter().zip(&b.samples) {
                assert_eq!(x.t, y.t);
                assert_eq!(x.state(), y.state());
                assert!(x.pose_a.distance_to(&y.pose_a) < 1e-9);
            }
        }
        let first = bytes(&demo_path(dir.path(), "1", Tool::A));
        let other = tempfile::tempdir().unwrap();
        write_demos(other.path(), &back).unwrap();
        assert_eq!(first, bytes(&demo_path(other.path(), "1", Tool::A)));
        assert_eq!(
            bytes(&demo_path(dir.path(), "2", Tool::B)),
            bytes(&demo_path(other.path(), "2", Tool::B))
        );
    }

    #[test]
    fn header_matches_format() {
        let dir = tempfile::tempdir().unwrap();
        let demos = gen_demos(&SyntheticDemoSpec { count: 1, ..Default::default() }, 4).unwrap();
        write_demos(dir.path(), &demos).unwrap();
        let text = std::fs::read_to_string(demo_path(dir.path(), "1", Tool::A)).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,x_mm,y_mm,z_mm,alpha_rad,beta_rad,theta_rad,gripper_a,gripper_b,holder,frame"
        );
        assert!(lines.next().unwrap().ends_with(",closed,open,A,world"));
    }

    #[test]
    fn missing_demo_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_demo(dir.path(), "7").unwrap_err();
        assert!(matches!(err, HarnessError::Missing(_)));
        assert!(err.to_string().contains("demo_7_a.csv"), "{err}");
        assert!(read_demos(&dir.path().join("nope")).unwrap_err().to_string().contains("nope"));
    }

    #[test]
    fn plan_rows_group_by_primitive() {
        let row = |p: u8, r: f64| PlanRow {
            primitive: p,
            tool: Tool::A,
            index: 0,
            t: 0.0,
            v_t_m: 0.0,
            v_r_rad: 0.0,
            r_raw: r,
            r,
            t_retimed: 0.0,
        };
        let plans = plans_from_rows(&[row(1, 0.5), row(1, 2.0), row(3, 1.0)]);
        assert_eq!(plans[&1].ratios, vec![0.5, 2.0]);
        assert_eq!(plans[&3].ratios, vec![1.0]);
    }

    #[test]
    fn trace_legs_recovered_from_states() {
        let mk = |t: f64, label: u8| TrajectoryRow::new(t, &Pose::identity(), table_row(label).unwrap(), Frame::World);
        let rows = vec![mk(0.0, 1), mk(0.1, 1), mk(0.2, 2), mk(0.3, 3), mk(0.4, 4), mk(0.5, 5)];
        let trace = trace_from_rows(&rows, 0.1).unwrap();
        let labels: Vec<u8> = trace.rows.iter().map(|r| r.label).collect();
        assert_eq!(labels, vec![1, 1, 2, 3, 4, 5]);
        assert_eq!(trace.rows[5].leg, 4);
        assert!(trace_from_rows(&[mk(0.0, 3), mk(0.1, 2)], 0.1).is_err());
    }
}
