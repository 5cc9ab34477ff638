//! Synthetic bimanual stitch demonstrations.
//!
//! One stitch cycle is five primitives following the gripper/holder table:
//! tool A carries the needle in, tool B reaches for its tip, B pulls it
//! through and lifts it, A re-grasps it, and A carries it back. Each moving
//! tool follows a curved minimum-jerk path. Demonstrations differ by a
//! per-demo pose offset whose size follows a phase schedule (large while
//! approaching, small near contact) and by random time warping.

use super::HarnessError;
use crate::demo::{
    table_row, DemoSample, Demonstration, Frame, Holder, Tool, PRIMITIVE_COUNT,
};
use crate::geometry::{interpolate, Pose};
use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDemoSpec {
    pub count: usize,
    pub sample_rate_hz: f64,
    /// Nominal duration of each primitive (s).
    pub durations_s: [f64; PRIMITIVE_COUNT],
    /// Per-axis offset std while approaching (mm).
    pub approach_std_mm: f64,
    /// Per-axis offset std near contact (mm).
    pub contact_std_mm: f64,
    pub approach_std_rad: f64,
    pub contact_std_rad: f64,
    /// Relative std of primitive durations; also scales the non-uniform warp.
    pub time_warp: f64,
    /// Needle pose in the holding tool's frame, `[mm; 3, rad; 3]`.
    pub grip: [f64; 6],
}

impl Default for SyntheticDemoSpec {
    fn default() -> Self {
        Self {
            count: 5,
            sample_rate_hz: 30.0,
            durations_s: [6.0, 5.0, 5.0, 5.0, 5.0],
            approach_std_mm: 15.0,
            contact_std_mm: 1.0,
            approach_std_rad: 0.05,
            contact_std_rad: 0.01,
            time_warp: 0.1,
            grip: [0.0, 0.0, 15.0, 0.0, 0.0, 0.0],
        }
    }
}

impl SyntheticDemoSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let stds = [
            self.approach_std_mm,
            self.contact_std_mm,
            self.approach_std_rad,
            self.contact_std_rad,
            self.time_warp,
        ];
        if stds.iter().any(|s| !(*s >= 0.0)) {
            return Err(HarnessError::Config("perturbation stds must be non-negative".into()));
        }
        if self.count == 0 || !(self.sample_rate_hz > 0.0) {
            return Err(HarnessError::Config("demo count and sample rate must be positive".into()));
        }
        if self.durations_s.iter().any(|d| !(*d > 0.0)) || self.time_warp >= 0.3 {
            return Err(HarnessError::Config(
                "durations must be positive and time_warp below 0.3".into(),
            ));
        }
        Ok(())
    }

    /// Offset std `(mm, rad)` at phase `s` in `[0, 1]` of a primitive.
    pub fn std_at(&self, s: f64) -> (f64, f64) {
        let w = phase_weight(s);
        (
            self.contact_std_mm + (self.approach_std_mm - self.contact_std_mm) * w,
            self.contact_std_rad + (self.approach_std_rad - self.contact_std_rad) * w,
        )
    }
}

fn smoothstep(a: f64, b: f64, x: f64) -> f64 {
    let u = ((x - a) / (b - a)).clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// 0 at the start, 1 over the approach plateau, back to 0 by contact.
pub fn phase_weight(s: f64) -> f64 {
    smoothstep(0.0, 0.08, s) * (1.0 - smoothstep(0.35, 0.65, s))
}

fn min_jerk(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

struct PrimitivePath {
    tool: Tool,
    start: Pose,
    via: Vector3<f64>,
    end: Pose,
}

impl PrimitivePath {
    fn at(&self, s: f64) -> Pose {
        let u = min_jerk(s);
        let p = self.start.translation * (1.0 - u) * (1.0 - u)
            + self.via * 2.0 * u * (1.0 - u)
            + self.end.translation * u * u;
        Pose::new(p, interpolate(&self.start, &self.end, u).orientation)
    }
}

fn pose(v: [f64; 6]) -> Pose {
    Pose::from_vector(&Vector6::from(v))
}

/// Initial tool poses in the mandrel frame.
pub fn home_poses() -> [Pose; 2] {
    [
        pose([-60.0, 4.0, 50.0, 0.3, 0.1, 0.2]),
        pose([60.0, -4.0, 50.0, -0.3, -0.1, -0.2]),
    ]
}

/// Stitch arcs lie close to the mandrel cross-section (x-z); the mandrel axis
/// is y.
fn nominal_paths() -> [PrimitivePath; PRIMITIVE_COUNT] {
    let [a0, b0] = home_poses();
    let a1 = pose([-4.0, 0.0, 12.0, 0.0, 0.0, -0.3]);
    let b1 = pose([14.0, 0.0, 10.0, 0.0, 0.0, 0.3]);
    let b2 = pose([45.0, 2.0, 55.0, 0.2, 0.0, 0.1]);
    let a2 = pose([32.0, 2.0, 56.0, 0.1, 0.0, -0.1]);
    let a3 = pose([-55.0, 3.0, 48.0, 0.3, 0.1, 0.15]);
    [
        PrimitivePath { tool: Tool::A, start: a0, via: Vector3::new(-35.0, 2.0, 45.0), end: a1 },
        PrimitivePath { tool: Tool::B, start: b0, via: Vector3::new(40.0, -2.0, 35.0), end: b1 },
        PrimitivePath { tool: Tool::B, start: b1, via: Vector3::new(25.0, 1.0, 55.0), end: b2 },
        PrimitivePath { tool: Tool::A, start: a1, via: Vector3::new(10.0, 3.0, 70.0), end: a2 },
        PrimitivePath { tool: Tool::A, start: a2, via: Vector3::new(-20.0, 3.0, 65.0), end: a3 },
    ]
}

fn tool_index(tool: Tool) -> usize {
    match tool {
        Tool::A => 0,
        Tool::B => 1,
    }
}

fn holder_tool(holder: Holder) -> Tool {
    match holder {
        Holder::WithA => Tool::A,
        Holder::WithB => Tool::B,
    }
}

/// Records a world-frame pose in the frame the tool uses under `holder`.
fn record(tool: Tool, holder: Holder, world: &[Pose; 2], grip: &Pose) -> (Pose, Frame) {
    let frame = Frame::for_tool(tool, holder);
    let p = world[tool_index(tool)];
    match frame {
        Frame::World => (p, frame),
        Frame::ObjectLocal => {
            let needle = world[tool_index(holder_tool(holder))].compose(grip);
            (needle.inverse().compose(&p), frame)
        }
    }
}

/// `spec.count` demonstrations of one stitch cycle. Each demo uses its own
/// random stream so adding demos leaves earlier ones unchanged.
pub fn gen_demos(spec: &SyntheticDemoSpec, seed: u64) -> Result<Vec<Demonstration>, HarnessError> {
    spec.validate()?;
    let paths = nominal_paths();
    let grip = pose(spec.grip);
    let dt = 1.0 / spec.sample_rate_hz;

    (0..spec.count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let mut world = home_poses();
            let mut samples = Vec::new();
            let mut t = 0.0;
            for (p, path) in paths.iter().enumerate() {
                let label = p as u8 + 1;
                let (gripper_a, gripper_b, holder) = table_row(label).expect("valid label");
                let delta: Vector6<f64> = Vector6::from_fn(|_, _| rng.sample(StandardNormal));
                let z: f64 = rng.sample(StandardNormal);
                let w: f64 = rng.sample(StandardNormal);
                let duration = spec.durations_s[p] * (1.0 + spec.time_warp * z.clamp(-2.5, 2.5));
                let warp = (3.0 * spec.time_warp * w).clamp(-0.6, 0.6);
                let n = (duration / dt).round().max(2.0) as usize;

                // start from where this tool actually is
                let offset0 = world[tool_index(path.tool)].to_vector() - path.start.to_vector();
                for i in 0..n {
                    let tau = i as f64 / (n - 1) as f64;
                    let s = tau + warp * (std::f64::consts::PI * tau).sin() / std::f64::consts::PI;
                    let (sd_t, sd_r) = spec.std_at(s);
                    let scale = Vector6::new(sd_t, sd_t, sd_t, sd_r, sd_r, sd_r);
                    let fade = 1.0 - smoothstep(0.0, 0.08, s);
                    let v = path.at(s).to_vector() + delta.component_mul(&scale) + offset0 * fade;
                    world[tool_index(path.tool)] = Pose::from_vector(&v);

                    let (pose_a, frame_a) = record(Tool::A, holder, &world, &grip);
                    let (pose_b, frame_b) = record(Tool::B, holder, &world, &grip);
                    samples.push(DemoSample {
                        t,
                        pose_a,
                        pose_b,
                        gripper_a,
                        gripper_b,
                        holder,
                        frame_a,
                        frame_b,
                    });
                    t += dt;
                }
            }
            Ok(Demonstration::new(format!("{}", k + 1), samples)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::envelope;
    use crate::demo::segment;

    #[test]
    fn default_count_and_states() {
        let demos = gen_demos(&SyntheticDemoSpec::default(), 3).unwrap();
        assert_eq!(demos.len(), 5);
        for d in &demos {
            let labels: Vec<u8> = segment(d).unwrap().iter().map(|s| s.label).collect();
            assert_eq!(labels, vec![1, 2, 3, 4, 5]);
            assert!(d.samples.iter().all(|s| s.is_consistent()));
        }
    }

    #[test]
    fn zero_perturbation_gives_identical_demos() {
        let spec = SyntheticDemoSpec {
            approach_std_mm: 0.0,
            contact_std_mm: 0.0,
            approach_std_rad: 0.0,
            contact_std_rad: 0.0,
            time_warp: 0.0,
            ..SyntheticDemoSpec::default()
        };
        let demos = gen_demos(&spec, 3).unwrap();
        assert!(demos.windows(2).all(|w| w[0].samples == w[1].samples));
    }

    #[test]
    fn spread_follows_phase_schedule() {
        let spec = SyntheticDemoSpec {
            count: 300,
            time_warp: 0.0,
            ..SyntheticDemoSpec::default()
        };
        let demos = gen_demos(&spec, 11).unwrap();
        let n = 180; // primitive 1 sample count
        for &i in &[30usize, 45, 120, 170] {
            let s = i as f64 / (n - 1) as f64;
            let xs: Vec<f64> = demos.iter().map(|d| d.samples[i].pose_a.translation.y).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
            let expected = spec.std_at(s).0;
            assert!((sd / expected - 1.0).abs() < 0.2, "s={s} sd={sd} expected={expected}");
        }
    }

    #[test]
    fn schedule_crosses_classifier_thresholds() {
        // cross-demo spread of primitive 1 read through the envelope
        let spec = SyntheticDemoSpec::default();
        let (early, _) = spec.std_at(0.2);
        let (late, _) = spec.std_at(0.9);
        let to_ref = |sd_t: f64, sd_r: f64| crate::demo::ReferenceTrajectory {
            label: 1,
            tool: Tool::A,
            frame: Frame::World,
            points: vec![crate::demo::ReferencePoint {
                t: 0.0,
                pose: Pose::identity(),
                std: Vector6::new(sd_t, sd_t, sd_t, sd_r, sd_r, sd_r),
            }],
        };
        let e = envelope(&to_ref(early, spec.std_at(0.2).1));
        assert!(e.v_t[0] > 0.01);
        let e = envelope(&to_ref(late, spec.std_at(0.9).1));
        assert!(e.v_t[0] < 0.005 && e.v_r[0] < 0.1);
    }

    #[test]
    fn non_holder_is_recorded_in_needle_frame() {
        let spec = SyntheticDemoSpec::default();
        let demo = &gen_demos(&spec, 1).unwrap()[0];
        let grip = pose(spec.grip);
        let s = demo.samples.iter().find(|s| s.holder == Holder::WithB).unwrap();
        assert_eq!(s.frame_a, Frame::ObjectLocal);
        assert_eq!(s.frame_b, Frame::World);
        let a_world = s.pose_b.compose(&grip).compose(&s.pose_a);
        // tool A rests where primitive 1 left it
        let end_p1 = demo.samples.iter().rev().find(|x| x.state() == table_row(1).unwrap() && x.t < s.t).unwrap();
        assert!(a_world.distance_to(&end_p1.pose_a) < 1e-9);
    }
}
