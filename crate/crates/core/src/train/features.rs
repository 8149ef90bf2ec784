use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::Result;
use crate::pose::{Pose, PoseSet, SkeletonTopology};

/// Keypoints followed by bone vectors (child − parent), `2M + 2(M−1)`
/// values per pose.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    joints: usize,
    bones: Vec<(usize, usize)>,
    /// `[2M, 2(M−1)]` map from flat keypoints to flat bone vectors.
    bone_map: Tensor,
}

impl FeatureExtractor {
    pub fn new(topo: &SkeletonTopology) -> Self {
        let m = topo.joint_count();
        let nb = topo.bones().len();
        let mut d = vec![0.0; 2 * m * 2 * nb];
        for (b, &(p, c)) in topo.bones().iter().enumerate() {
            for k in 0..2 {
                let col = 2 * b + k;
                d[(2 * c + k) * 2 * nb + col] += 1.0;
                d[(2 * p + k) * 2 * nb + col] -= 1.0;
            }
        }
        FeatureExtractor {
            joints: m,
            bones: topo.bones().to_vec(),
            bone_map: Tensor::new(&[2 * m, 2 * nb], d),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.joints + 2 * self.bones.len()
    }

    pub fn pose(&self, pose: &Pose) -> Vec<f64> {
        let mut out = pose.flatten();
        for &(p, c) in &self.bones {
            out.push(pose.coords[c][0] - pose.coords[p][0]);
            out.push(pose.coords[c][1] - pose.coords[p][1]);
        }
        out
    }

    /// `[n, dim]` features of a whole set.
    pub fn set(&self, set: &PoseSet) -> Tensor {
        self.rows(set.poses.iter())
    }

    pub fn rows<'a>(&self, poses: impl Iterator<Item = &'a Pose>) -> Tensor {
        let mut data = Vec::new();
        let mut n = 0;
        for p in poses {
            data.extend(self.pose(p));
            n += 1;
        }
        Tensor::new(&[n, self.dim()], data)
    }

    /// Features of keypoints `[B, 2M]` inside a graph.
    pub fn graph(&self, g: &mut Graph, keypoints: NodeId) -> Result<NodeId> {
        let d = g.constant(self.bone_map.clone());
        let bones = g.matmul(keypoints, d)?;
        g.concat(&[keypoints, bones], 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::human13;
    use crate::synth::{sample_pose, PoseDistributionSpec};

    #[test]
    fn graph_matches_direct_features() {
        let topo = human13();
        let fx = FeatureExtractor::new(&topo);
        assert_eq!(fx.dim(), 2 * 13 + 2 * 12);
        let poses: Vec<Pose> = (0..3).map(|s| sample_pose(&PoseDistributionSpec::human_default(), s)).collect();
        let direct = fx.rows(poses.iter());
        let mut g = Graph::new();
        let flat: Vec<f64> = poses.iter().flat_map(|p| p.flatten()).collect();
        let kp = g.constant(Tensor::new(&[3, 26], flat));
        let f = fx.graph(&mut g, kp).unwrap();
        for (a, b) in g.value(f).data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
