use super::{SimError, TraceRecord};
use crate::demo::{dtw_align, ReferenceTrajectory};
use crate::geometry::Pose;
use serde::{Deserialize, Serialize};

/// Reproduction accuracy of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub translation_mm: f64,
    pub rotation_deg: f64,
    pub duration_s: f64,
}

/// Mean translation and rotation difference over the DTW path between
/// `executed` and `reference` (aligned on translation), as
/// `(sum_mm, sum_rad, pairs)`.
pub fn path_errors(executed: &[Pose], reference: &[Pose]) -> Result<(f64, f64, usize), SimError> {
    if executed.is_empty() || reference.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    let al = dtw_align(reference, executed, |a, b| a.distance_to(b)).map_err(|_| SimError::EmptyTrace)?;
    let (mut t, mut r) = (0.0, 0.0);
    for &(i, j) in &al.path {
        t += reference[i].distance_to(&executed[j]);
        r += reference[i].angle_to(&executed[j]);
    }
    Ok((t, r, al.path.len()))
}

/// Compares the executed (ground-truth) motion of every leg with its
/// reference in the mandrel frame. Errors are pooled over all matched pairs;
/// the duration is the summed execution time of the legs.
pub fn evaluate(trace: &TraceRecord, truth: &[ReferenceTrajectory]) -> Result<Metrics, SimError> {
    if trace.rows.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    let to_mandrel = trace.mandrel.inverse();
    let (mut t_sum, mut r_sum, mut pairs, mut duration) = (0.0, 0.0, 0usize, 0.0);
    for (leg, reference) in truth.iter().enumerate() {
        let rows: Vec<_> = trace.rows.iter().filter(|r| r.leg == leg).collect();
        let (Some(first), Some(last)) = (rows.first(), rows.last()) else {
            return Err(SimError::EmptyTrace);
        };
        duration += last.clock - first.clock;
        let executed: Vec<Pose> = rows.iter().map(|r| to_mandrel.compose(&r.truth)).collect();
        let (t, r, n) = path_errors(&executed, &reference.poses())?;
        t_sum += t;
        r_sum += r;
        pairs += n;
    }
    if pairs == 0 {
        return Err(SimError::EmptyTrace);
    }
    Ok(Metrics {
        translation_mm: t_sum / pairs as f64,
        rotation_deg: (r_sum / pairs as f64).to_degrees(),
        duration_s: duration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::{Frame, ReferencePoint, Tool};
    use crate::sim::TraceRow;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector6;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference(n: usize) -> ReferenceTrajectory {
        ReferenceTrajectory {
            label: 1,
            tool: Tool::A,
            frame: Frame::World,
            points: (0..n)
                .map(|i| ReferencePoint {
                    t: i as f64 * 0.01,
                    pose: Pose::from_euler(2.0 * i as f64, (i as f64 * 0.1).sin() * 5.0, 0.0, 0.01 * i as f64, 0.0, 0.0),
                    std: Vector6::zeros(),
                })
                .collect(),
        }
    }

    fn trace_of(mandrel: Pose, poses: &[Pose]) -> TraceRecord {
        TraceRecord {
            mandrel,
            dt: 0.01,
            rows: poses
                .iter()
                .enumerate()
                .map(|(i, p)| TraceRow {
                    clock: i as f64 * 0.01,
                    leg: 0,
                    label: 1,
                    tool: Tool::A,
                    truth: mandrel.compose(p),
                    command: mandrel.compose(p),
                    estimate: None,
                    measurement: None,
                    r: 1.0,
                })
                .collect(),
            updates: 0,
            rejected: 0,
        }
    }

    #[test]
    fn exact_trace_has_no_error() {
        let r = reference(50);
        let m = Pose::from_euler(10.0, -20.0, 300.0, 0.2, 0.1, 0.0);
        let met = evaluate(&trace_of(m, &r.poses()), &[r.clone()]).unwrap();
        assert!(met.translation_mm < 1e-9);
        assert!(met.rotation_deg < 1e-6);
        assert_abs_diff_eq!(met.duration_s, 0.49, epsilon = 1e-12);
    }

    #[test]
    fn constant_offset() {
        // offset along z, perpendicular to the planar reference
        let r = reference(50);
        let shifted: Vec<Pose> = r
            .poses()
            .iter()
            .map(|p| Pose::new(p.translation + nalgebra::Vector3::new(0.0, 0.0, 2.0), p.orientation))
            .collect();
        let met = evaluate(&trace_of(Pose::identity(), &shifted), &[r]).unwrap();
        assert_abs_diff_eq!(met.translation_mm, 2.0, epsilon = 1e-9);
        assert!(met.rotation_deg < 1e-6);
    }

    #[test]
    fn identity_warp_matches_direct_errors() {
        let r = reference(60);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy: Vec<Pose> = r
            .poses()
            .iter()
            .map(|p| {
                let d = nalgebra::Vector3::new(0.0, 0.0, rng.random_range(0.1..0.3));
                Pose::new(p.translation + d, p.orientation)
            })
            .collect();
        let direct: f64 = noisy.iter().zip(r.poses()).map(|(a, b)| a.distance_to(&b)).sum::<f64>() / 60.0;
        let met = evaluate(&trace_of(Pose::identity(), &noisy), &[r]).unwrap();
        assert_abs_diff_eq!(met.translation_mm, direct, epsilon = 1e-12);
    }

    #[test]
    fn empty_trace_errors() {
        let t = trace_of(Pose::identity(), &[]);
        assert_eq!(evaluate(&t, &[reference(3)]), Err(SimError::EmptyTrace));
    }
}
