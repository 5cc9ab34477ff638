use super::{
    dtw_align, fit_gmm, gmr, select_components, DemoError, Frame, Gmm, ReferencePoint,
    ReferenceTrajectory, Tool,
};
use crate::geometry::{pose_distance, Pose, TimedPose};
use nalgebra::{DVector, Vector6};
use std::f64::consts::TAU;
use std::ops::RangeInclusive;

/// Demonstrations of one tool over one primitive, warped onto a common index
/// base. Poses are `[x, y, z, alpha, beta, theta]` with continuous
/// (unwrapped) angles.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedDemoSet {
    /// Time of each index relative to the start of the reference demo.
    pub times: Vec<f64>,
    pub demos: Vec<Vec<Vector6<f64>>>,
    /// DTW path of every demo against the reference, `(reference, demo)`.
    pub paths: Vec<Vec<(usize, usize)>>,
    pub reference: usize,
}

impl AlignedDemoSet {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `[t, x, y, z, alpha, beta, theta]` rows from every demo.
    pub fn samples(&self) -> Vec<DVector<f64>> {
        self.demos
            .iter()
            .flat_map(|demo| {
                demo.iter().zip(&self.times).map(|(v, &t)| {
                    DVector::from_iterator(7, std::iter::once(t).chain(v.iter().copied()))
                })
            })
            .collect()
    }
}

/// Makes the angle components (3..6) continuous by adding multiples of 2π.
pub fn unwrap_angles(seq: &mut [Vector6<f64>]) {
    for i in 1..seq.len() {
        for c in 3..6 {
            let prev = seq[i - 1][c];
            seq[i][c] += TAU * ((prev - seq[i][c]) / TAU).round();
        }
    }
}

fn shift_branch(seq: &mut [Vector6<f64>], anchor: &Vector6<f64>) {
    let Some(first) = seq.first().copied() else {
        return;
    };
    for c in 3..6 {
        let k = ((anchor[c] - first[c]) / TAU).round();
        if k != 0.0 {
            seq.iter_mut().for_each(|v| v[c] += TAU * k);
        }
    }
}

/// DTW-aligns every track onto `tracks[reference]`. Query samples matched to
/// the same reference index are averaged.
pub fn align_demos(
    tracks: &[Vec<TimedPose>],
    reference: usize,
    rot_weight: f64,
) -> Result<AlignedDemoSet, DemoError> {
    let base = tracks.get(reference).ok_or(DemoError::EmptySequence)?;
    if base.is_empty() || tracks.iter().any(|t| t.is_empty()) {
        return Err(DemoError::EmptySequence);
    }
    let base_poses: Vec<Pose> = base.iter().map(|p| p.pose).collect();
    let t0 = base[0].t;
    let times: Vec<f64> = base.iter().map(|p| p.t - t0).collect();

    let mut anchor: Vec<Vector6<f64>> = base_poses.iter().map(Pose::to_vector).collect();
    unwrap_angles(&mut anchor);

    let mut demos = Vec::with_capacity(tracks.len());
    let mut paths = Vec::with_capacity(tracks.len());
    for track in tracks {
        let poses: Vec<Pose> = track.iter().map(|p| p.pose).collect();
        let al = dtw_align(&base_poses, &poses, |a, b| pose_distance(a, b, rot_weight))?;

        let mut vecs: Vec<Vector6<f64>> = poses.iter().map(Pose::to_vector).collect();
        unwrap_angles(&mut vecs);
        shift_branch(&mut vecs, &anchor[0]);

        let mut sum = vec![Vector6::zeros(); base.len()];
        let mut count = vec![0usize; base.len()];
        for &(i, j) in &al.path {
            sum[i] += vecs[j];
            count[i] += 1;
        }
        demos.push(
            sum.into_iter()
                .zip(count)
                .map(|(s, c)| s / c as f64)
                .collect(),
        );
        paths.push(al.path);
    }

    Ok(AlignedDemoSet {
        times,
        demos,
        paths,
        reference,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOptions {
    pub m_range: RangeInclusive<usize>,
    pub folds: usize,
    pub seed: u64,
    /// mm per rad in the DTW pose distance.
    pub rot_weight: f64,
    pub reference_index: usize,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            m_range: 1..=8,
            folds: 5,
            seed: 0,
            rot_weight: 10.0,
            reference_index: 0,
        }
    }
}

/// Output of encoding one primitive for one tool.
#[derive(Debug, Clone)]
pub struct EncodedPrimitive {
    pub gmm: Gmm,
    pub reference: ReferenceTrajectory,
    pub aligned: AlignedDemoSet,
}

/// Align → select M → fit GMM → regress the reference at the aligned times.
pub fn encode_primitive(
    label: u8,
    tool: Tool,
    frame: Frame,
    tracks: &[Vec<TimedPose>],
    opts: &EncodeOptions,
) -> Result<EncodedPrimitive, DemoError> {
    let aligned = align_demos(tracks, opts.reference_index, opts.rot_weight)?;
    let data = aligned.samples();

    // every CV training split must still satisfy N > 7M
    let train = data.len() - data.len().div_ceil(opts.folds);
    let max_m = ((train.saturating_sub(1)) / 7).max(1);
    let lo = *opts.m_range.start();
    let hi = (*opts.m_range.end()).min(max_m).max(lo);
    let m = select_components(&data, lo..=hi, opts.folds, opts.seed)?;
    let gmm = fit_gmm(&data, m, opts.seed)?;

    let points = aligned
        .times
        .iter()
        .map(|&t| {
            let out = gmr(&gmm, t);
            let mean = Vector6::from_iterator(out.mean.iter().copied());
            let std = Vector6::from_iterator(out.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()));
            ReferencePoint {
                t,
                pose: Pose::from_vector(&mean),
                std,
            }
        })
        .collect();

    Ok(EncodedPrimitive {
        gmm,
        reference: ReferenceTrajectory {
            label,
            tool,
            frame,
            points,
        },
        aligned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line(n: usize, dt: f64, warp: impl Fn(f64) -> f64) -> Vec<TimedPose> {
        (0..n)
            .map(|i| {
                let s = warp(i as f64 / (n - 1) as f64);
                TimedPose::new(i as f64 * dt, Pose::from_euler(40.0 * s, 10.0 * s, 0.0, 0.5 * s, 0.0, 0.0))
            })
            .collect()
    }

    #[test]
    fn unwrap_removes_jumps() {
        let mut seq = vec![
            Vector6::new(0.0, 0.0, 0.0, 3.1, 0.0, 0.0),
            Vector6::new(0.0, 0.0, 0.0, -3.1, 0.0, 0.0),
            Vector6::new(0.0, 0.0, 0.0, -3.0, 0.0, 0.0),
        ];
        unwrap_angles(&mut seq);
        assert_abs_diff_eq!(seq[1][3], TAU - 3.1, epsilon = 1e-12);
        assert_abs_diff_eq!(seq[2][3], TAU - 3.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_tracks_align_trivially() {
        let t = line(30, 0.1, |s| s);
        let set = align_demos(&[t.clone(), t.clone()], 0, 10.0).unwrap();
        assert_eq!(set.len(), 30);
        for d in &set.demos {
            for (v, p) in d.iter().zip(&t) {
                assert_abs_diff_eq!(*v, p.pose.to_vector(), epsilon = 1e-12);
            }
        }
        assert!(set.paths.iter().all(|p| p.iter().all(|(i, j)| i == j)));
    }

    #[test]
    fn time_warped_track_lands_on_reference() {
        let base = line(60, 0.05, |s| s);
        let warped = line(80, 0.05, |s| s * s);
        let set = align_demos(&[base.clone(), warped], 0, 10.0).unwrap();
        let err: f64 = set.demos[1]
            .iter()
            .zip(&base)
            .map(|(v, p)| (v.fixed_rows::<3>(0) - p.pose.translation).norm())
            .sum::<f64>()
            / base.len() as f64;
        assert!(err < 0.5, "mean residual {err}");
    }

    #[test]
    fn encode_line_recovers_mean() {
        let tracks: Vec<_> = (0..5).map(|_| line(40, 0.1, |s| s)).collect();
        let enc = encode_primitive(1, Tool::A, Frame::World, &tracks, &EncodeOptions::default()).unwrap();
        for (p, q) in enc.reference.points.iter().zip(&tracks[0]) {
            assert!(p.pose.distance_to(&q.pose) < 1e-3);
        }
        assert!(enc.reference.points.windows(2).all(|w| w[1].t > w[0].t));
    }
}
