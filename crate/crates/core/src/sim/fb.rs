use super::SimError;
use nalgebra::Vector2;
use rand::Rng;
use rand_distr::StandardNormal;

/// Minimum number of inlier corners for a usable marker detection.
pub const MIN_INLIERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GateOutcome {
    Inliers(Vec<usize>),
    Rejected,
}

impl GateOutcome {
    pub fn is_rejected(&self) -> bool {
        matches!(self, GateOutcome::Rejected)
    }
}

/// Forward-backward consistency gate on tracked corners.
///
/// `prev[i]` is a corner in the previous frame and `fwd_back[i]` the same
/// corner after tracking forward and back again. Corners within
/// `tau_inlier` px are kept. The whole detection is rejected if any corner
/// drifts by more than `tau_reject` px or fewer than four corners survive.
pub fn fb_gate(
    prev: &[Vector2<f64>],
    fwd_back: &[Vector2<f64>],
    tau_inlier: f64,
    tau_reject: f64,
) -> Result<GateOutcome, SimError> {
    if prev.len() != fwd_back.len() {
        return Err(SimError::InvalidInput(format!(
            "corner lists differ in length: {} vs {}",
            prev.len(),
            fwd_back.len()
        )));
    }
    let errors: Vec<f64> = prev.iter().zip(fwd_back).map(|(a, b)| (a - b).norm()).collect();
    if errors.iter().any(|e| !(*e <= tau_reject)) {
        return Ok(GateOutcome::Rejected);
    }
    let inliers: Vec<usize> = (0..errors.len()).filter(|&i| errors[i] <= tau_inlier).collect();
    if inliers.len() < MIN_INLIERS {
        return Ok(GateOutcome::Rejected);
    }
    Ok(GateOutcome::Inliers(inliers))
}

/// Outer and inner corners of a square marker of side `size` px centred at
/// the origin.
pub fn marker_corners(size: f64) -> Vec<Vector2<f64>> {
    let mut out = Vec::with_capacity(8);
    for scale in [0.5, 0.25] {
        let h = size * scale;
        out.extend([
            Vector2::new(-h, -h),
            Vector2::new(h, -h),
            Vector2::new(h, h),
            Vector2::new(-h, h),
        ]);
    }
    out
}

/// Perturbs corners with isotropic Gaussian forward-backward error.
pub fn track_corners<R: Rng>(corners: &[Vector2<f64>], std_px: f64, rng: &mut R) -> Vec<Vector2<f64>> {
    corners
        .iter()
        .map(|c| {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            c + Vector2::new(dx, dy) * std_px
        })
        .collect()
}
