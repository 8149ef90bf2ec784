use rand::Rng;

use super::{Pose, PoseSet};
use crate::error::{Error, Result};

/// `λ·a + (1 − λ)·b`, joint by joint.
pub fn mix_poses(a: &Pose, b: &Pose, lambda: f64) -> Pose {
    let coords = a
        .coords
        .iter()
        .zip(&b.coords)
        .map(|(p, q)| {
            [
                lambda * p[0] + (1.0 - lambda) * q[0],
                lambda * p[1] + (1.0 - lambda) * q[1],
            ]
        })
        .collect();
    Pose::new(coords)
}

/// `count` mixtures of ordered pairs `(i, j)`, `i ≠ j`, drawn uniformly from
/// `set`, with `λ ~ Uniform[0, 1]`.
pub fn pose_mixup_with<R: Rng + ?Sized>(set: &PoseSet, count: usize, rng: &mut R) -> Result<PoseSet> {
    let n = set.len();
    if n < 2 {
        return Err(Error::invalid("mixup needs at least two guidance poses"));
    }
    if count == 0 {
        return Err(Error::invalid("mixup count must be at least 1"));
    }
    let poses = (0..count)
        .map(|_| {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let lambda: f64 = rng.gen_range(0.0..=1.0);
            mix_poses(&set.poses[i], &set.poses[j], lambda)
        })
        .collect();
    Ok(PoseSet {
        topology: set.topology.clone(),
        poses,
    })
}

pub fn pose_mixup(set: &PoseSet, count: usize, seed: u64) -> Result<PoseSet> {
    pose_mixup_with(set, count, &mut crate::rng::seeded(seed))
}
