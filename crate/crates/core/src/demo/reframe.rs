use super::DemoError;
use crate::geometry::{compose, inverse, TimedPose, Transform};

const TIME_TOL: f64 = 1e-9;

fn check_time(index: usize, a: f64, b: f64) -> Result<(), DemoError> {
    if (a - b).abs() > TIME_TOL {
        return Err(DemoError::TimestampMismatch { index, a, b });
    }
    Ok(())
}

/// Expresses world-frame poses in the frame of a moving object:
/// `local(t) = object(t)^-1 * world(t)`.
pub fn reframe(
    traj: &[TimedPose],
    object_poses: &[(f64, Transform)],
) -> Result<Vec<TimedPose>, DemoError> {
    map_frames(traj, object_poses, |obj, pose| compose(&inverse(obj), pose))
}

/// Inverse of [`reframe`]: `world(t) = object(t) * local(t)`.
pub fn unreframe(
    traj: &[TimedPose],
    object_poses: &[(f64, Transform)],
) -> Result<Vec<TimedPose>, DemoError> {
    map_frames(traj, object_poses, compose)
}

fn map_frames(
    traj: &[TimedPose],
    object_poses: &[(f64, Transform)],
    f: impl Fn(&Transform, &Transform) -> Transform,
) -> Result<Vec<TimedPose>, DemoError> {
    if traj.len() != object_poses.len() {
        let i = traj.len().min(object_poses.len());
        return Err(DemoError::TimestampMismatch {
            index: i,
            a: traj.get(i).map_or(f64::NAN, |p| p.t),
            b: object_poses.get(i).map_or(f64::NAN, |p| p.0),
        });
    }
    traj.iter()
        .zip(object_poses)
        .enumerate()
        .map(|(i, (tp, (t_obj, obj)))| {
            check_time(i, tp.t, *t_obj)?;
            let out = f(obj, &tp.pose.to_transform());
            Ok(TimedPose::new(tp.t, out.to_pose()))
        })
        .collect()
}
