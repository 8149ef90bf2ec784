//! Procedural pose distributions (2D forward kinematics) and the geometric
//! shifts used as ground-truth domain changes.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{fit_to_canvas, human13, validate_pose, Pose, PoseSet, SkeletonTopology, CANVAS_MARGIN};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicTree {
    pub topology: SkeletonTopology,
    /// Per bone, canvas units.
    pub bone_lengths: Vec<f64>,
    /// Per bone, direction at zero joint angle.
    pub rest_directions: Vec<[f64; 2]>,
}

impl KinematicTree {
    pub fn new(
        topology: SkeletonTopology,
        bone_lengths: Vec<f64>,
        rest_directions: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let nb = topology.bones().len();
        if bone_lengths.len() != nb || rest_directions.len() != nb {
            return Err(Error::invalid(format!(
                "kinematic tree needs {nb} lengths and directions"
            )));
        }
        if let Some(b) = bone_lengths.iter().position(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::invalid(format!("bone {b} length must be positive")));
        }
        if let Some(b) = rest_directions
            .iter()
            .position(|d| ((d[0] * d[0] + d[1] * d[1]).sqrt() - 1.0).abs() > 1e-9)
        {
            return Err(Error::invalid(format!("rest direction {b} is not unit length")));
        }
        Ok(KinematicTree {
            topology,
            bone_lengths,
            rest_directions,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseDistributionSpec {
    pub tree: KinematicTree,
    /// Per bone, radians.
    pub joint_angle_mean: Vec<f64>,
    pub joint_angle_std: Vec<f64>,
    pub root_orientation_range: [f64; 2],
    pub root_position: [f64; 2],
    pub root_position_std: f64,
    /// Std of the log of a multiplicative bone-length factor.
    pub bone_length_ratio_jitter: f64,
}

impl PoseDistributionSpec {
    pub fn validate(&self) -> Result<()> {
        let nb = self.tree.topology.bones().len();
        if self.joint_angle_mean.len() != nb || self.joint_angle_std.len() != nb {
            return Err(Error::invalid(format!("angle statistics must have {nb} entries")));
        }
        if self.joint_angle_std.iter().any(|&s| !(s >= 0.0))
            || !(self.root_position_std >= 0.0)
            || !(self.bone_length_ratio_jitter >= 0.0)
        {
            return Err(Error::invalid("standard deviations must be non-negative"));
        }
        if !(self.root_orientation_range[0] <= self.root_orientation_range[1]) {
            return Err(Error::invalid("root orientation range is not ordered"));
        }
        Ok(())
    }

    /// Upright human with moderate limb articulation.
    pub fn human_default() -> Self {
        let topo = human13();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let knee = {
            let (x, y) = (0.25f64, 1.0f64);
            let n = (x * x + y * y).sqrt();
            (x / n, y / n)
        };
        // bones: neck-head, neck-lsh, neck-rsh, lsh-lel, rsh-rel, lel-lwr,
        // rel-rwr, neck-pelvis, pelvis-lknee, pelvis-rknee, lknee-lank, rknee-rank
        let rest = vec![
            [0.0, -1.0],
            [-1.0, 0.0],
            [1.0, 0.0],
            [-s, s],
            [s, s],
            [0.0, 1.0],
            [0.0, 1.0],
            [0.0, 1.0],
            [-knee.0, knee.1],
            [knee.0, knee.1],
            [0.0, 1.0],
            [0.0, 1.0],
        ];
        let lengths = vec![0.12, 0.1, 0.1, 0.15, 0.15, 0.14, 0.14, 0.3, 0.22, 0.22, 0.22, 0.22];
        let std = vec![0.2, 0.1, 0.1, 0.5, 0.5, 0.6, 0.6, 0.15, 0.3, 0.3, 0.4, 0.4];
        PoseDistributionSpec {
            tree: KinematicTree::new(topo, lengths, rest).expect("valid default tree"),
            joint_angle_mean: vec![0.0; 12],
            joint_angle_std: std,
            root_orientation_range: [-0.15, 0.15],
            root_position: [0.5, 0.4],
            root_position_std: 0.02,
            bone_length_ratio_jitter: 0.05,
        }
    }
}

fn rotate(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Forward kinematics without the final canvas fit.
pub fn sample_raw_pose<R: Rng + ?Sized>(spec: &PoseDistributionSpec, rng: &mut R) -> Pose {
    let tree = &spec.tree;
    let topo = &tree.topology;
    let m = topo.joint_count();
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let mut coords = vec![[0.0; 2]; m];
    let mut accum = vec![0.0; m];
    let root = topo.root();
    coords[root] = [
        spec.root_position[0] + spec.root_position_std * normal(),
        spec.root_position[1] + spec.root_position_std * normal(),
    ];
    let [lo, hi] = spec.root_orientation_range;
    let u: f64 = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    accum[root] = u;
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    for b in topo.bones_topological() {
        let (p, c) = topo.bones()[b];
        let angle = spec.joint_angle_mean[b] + spec.joint_angle_std[b] * normal();
        accum[c] = accum[p] + angle;
        let len = tree.bone_lengths[b] * (spec.bone_length_ratio_jitter * normal()).exp();
        let d = rotate(tree.rest_directions[b], accum[c]);
        coords[c] = [coords[p][0] + len * d[0], coords[p][1] + len * d[1]];
    }
    Pose::new(coords)
}

/// One pose from the distribution, fit to the canvas.
pub fn sample_pose(spec: &PoseDistributionSpec, seed: u64) -> Pose {
    let raw = sample_raw_pose(spec, &mut rng::seeded(seed));
    fit_to_canvas(&raw, CANVAS_MARGIN).expect("constant margin is valid")
}

/// `n` poses with per-sample streams of `seed`, so sample `i` does not
/// depend on how many others are drawn.
pub fn sample_poses(spec: &PoseDistributionSpec, n: usize, seed: u64) -> Result<PoseSet> {
    spec.validate()?;
    let poses = (0..n as u64)
        .map(|i| {
            let raw = sample_raw_pose(spec, &mut rng::stream(seed, i));
            fit_to_canvas(&raw, CANVAS_MARGIN).expect("constant margin is valid")
        })
        .collect();
    Ok(PoseSet {
        topology: spec.tree.topology.clone(),
        poses,
    })
}

/// Rotation by `theta` (radians, counter-clockwise in x-right/y-up axes)
/// about `pivot`, no canvas fit.
pub fn rotate_about(pose: &Pose, pivot: [f64; 2], theta: f64) -> Pose {
    let mut out = pose.clone();
    for c in &mut out.coords {
        let d = rotate([c[0] - pivot[0], c[1] - pivot[1]], theta);
        *c = [pivot[0] + d[0], pivot[1] + d[1]];
    }
    out
}

/// Whole-pose rotation about the centroid, then re-fit to the canvas.
pub fn apply_global_rotation(pose: &Pose, theta: f64) -> Result<Pose> {
    if !theta.is_finite() {
        return Err(Error::invalid("rotation angle must be finite"));
    }
    let rotated = rotate_about(pose, pose.centroid(), theta);
    fit_to_canvas(&rotated, CANVAS_MARGIN)
}

/// Rotates the subtree rooted at `subtree_root` by `gamma` about that
/// joint's parent. Every other joint is left untouched.
pub fn apply_local_rotation(
    pose: &Pose,
    topo: &SkeletonTopology,
    subtree_root: usize,
    gamma: f64,
) -> Result<Pose> {
    if subtree_root >= topo.joint_count() {
        return Err(Error::invalid(format!("joint {subtree_root} out of range")));
    }
    let Some(parent) = topo.parent(subtree_root) else {
        return Err(Error::invalid("local rotation requires a proper subtree"));
    };
    let pivot = pose.coords[parent];
    let mut out = pose.clone();
    for j in topo.subtree(subtree_root) {
        let c = pose.coords[j];
        let d = rotate([c[0] - pivot[0], c[1] - pivot[1]], gamma);
        out.coords[j] = [pivot[0] + d[0], pivot[1] + d[1]];
    }
    Ok(out)
}

/// Scaling by `eta` about the centroid, clipped to the unit square.
pub fn apply_scale(pose: &Pose, eta: f64) -> Result<Pose> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid(format!("scale factor {eta} must be positive")));
    }
    let c = pose.centroid();
    let mut out = pose.clone();
    for p in &mut out.coords {
        *p = [
            (c[0] + eta * (p[0] - c[0])).clamp(0.0, 1.0),
            (c[1] + eta * (p[1] - c[1])).clamp(0.0, 1.0),
        ];
    }
    Ok(out)
}

/// Family of geometric shifts; angles in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftSpec {
    GlobalRotation {
        theta_range: [f64; 2],
    },
    LocalRotation {
        gamma_range: [f64; 2],
        subtree_root_joint: usize,
    },
    Scale {
        eta_ranges: Vec<[f64; 2]>,
    },
    Compose {
        children: Vec<ShiftSpec>,
    },
}

/// A concrete draw from a [`ShiftSpec`].
#[derive(Clone, Debug, PartialEq)]
pub enum Shift {
    Global(f64),
    Local { joint: usize, gamma: f64 },
    Scale(f64),
    Compose(Vec<Shift>),
}

fn ordered(r: [f64; 2]) -> bool {
    r[0] <= r[1] && r[0].is_finite() && r[1].is_finite()
}

fn draw<R: Rng + ?Sized>(r: [f64; 2], rng: &mut R) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

impl ShiftSpec {
    /// Global rotation range, degrees `[-45, 45]`.
    pub fn global_default() -> Self {
        ShiftSpec::GlobalRotation {
            theta_range: [-45f64.to_radians(), 45f64.to_radians()],
        }
    }

    /// Local rotation range, degrees `[135, 225]`.
    pub fn local_default(subtree_root_joint: usize) -> Self {
        ShiftSpec::LocalRotation {
            gamma_range: [135f64.to_radians(), 225f64.to_radians()],
            subtree_root_joint,
        }
    }

    /// Scale ranges `[0.7, 0.9] ∪ [1.1, 1.2]`.
    pub fn scale_default() -> Self {
        ShiftSpec::Scale {
            eta_ranges: vec![[0.7, 0.9], [1.1, 1.2]],
        }
    }

    pub fn validate(&self, topo: &SkeletonTopology) -> Result<()> {
        match self {
            ShiftSpec::GlobalRotation { theta_range } if !ordered(*theta_range) => {
                Err(Error::invalid("theta range is not ordered"))
            }
            ShiftSpec::LocalRotation {
                gamma_range,
                subtree_root_joint,
            } => {
                if !ordered(*gamma_range) {
                    return Err(Error::invalid("gamma range is not ordered"));
                }
                if *subtree_root_joint >= topo.joint_count() {
                    return Err(Error::invalid("subtree root joint out of range"));
                }
                if topo.parent(*subtree_root_joint).is_none() {
                    return Err(Error::invalid("local rotation requires a proper subtree"));
                }
                Ok(())
            }
            ShiftSpec::Scale { eta_ranges } => {
                if eta_ranges.is_empty() {
                    return Err(Error::invalid("scale shift needs at least one range"));
                }
                if eta_ranges.iter().any(|r| !ordered(*r) || r[0] <= 0.0) {
                    return Err(Error::invalid("scale ranges must be ordered and positive"));
                }
                Ok(())
            }
            ShiftSpec::Compose { children } => children.iter().try_for_each(|c| c.validate(topo)),
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Shift {
        match self {
            ShiftSpec::GlobalRotation { theta_range } => Shift::Global(draw(*theta_range, rng)),
            ShiftSpec::LocalRotation {
                gamma_range,
                subtree_root_joint,
            } => Shift::Local {
                joint: *subtree_root_joint,
                gamma: draw(*gamma_range, rng),
            },
            ShiftSpec::Scale { eta_ranges } => {
                // pick a range in proportion to its width
                let total: f64 = eta_ranges.iter().map(|r| r[1] - r[0]).sum();
                let r = if total > 0.0 {
                    let mut u = rng.gen_range(0.0..total);
                    let mut pick = eta_ranges[eta_ranges.len() - 1];
                    for r in eta_ranges {
                        if u < r[1] - r[0] {
                            pick = *r;
                            break;
                        }
                        u -= r[1] - r[0];
                    }
                    pick
                } else {
                    eta_ranges[0]
                };
                Shift::Scale(draw(r, rng))
            }
            ShiftSpec::Compose { children } => {
                Shift::Compose(children.iter().map(|c| c.sample(rng)).collect())
            }
        }
    }

    fn has_local(&self) -> bool {
        match self {
            ShiftSpec::LocalRotation { .. } => true,
            ShiftSpec::Compose { children } => children.iter().any(ShiftSpec::has_local),
            _ => false,
        }
    }
}

impl Shift {
    /// Applies the transforms in order (children of a composition first to
    /// last).
    pub fn apply(&self, pose: &Pose, topo: &SkeletonTopology) -> Result<Pose> {
        match self {
            Shift::Global(t) => apply_global_rotation(pose, *t),
            Shift::Local { joint, gamma } => apply_local_rotation(pose, topo, *joint, *gamma),
            Shift::Scale(eta) => apply_scale(pose, *eta),
            Shift::Compose(list) => list
                .iter()
                .try_fold(pose.clone(), |p, s| s.apply(&p, topo)),
        }
    }
}

/// `n` source samples, each pushed through a freshly drawn shift. Shifts that
/// contain a local rotation are re-fit to the canvas afterwards, since a
/// swung limb can leave the unit square.
pub fn make_shifted_dataset(
    source: &PoseDistributionSpec,
    shift: &ShiftSpec,
    n: usize,
    seed: u64,
) -> Result<PoseSet> {
    if n == 0 {
        return Err(Error::invalid("n must be ≥ 1"));
    }
    source.validate()?;
    let topo = &source.tree.topology;
    shift.validate(topo)?;
    let refit = shift.has_local();
    let mut poses = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let raw = sample_raw_pose(source, &mut rng::stream(seed, 2 * i));
        let pose = fit_to_canvas(&raw, CANVAS_MARGIN)?;
        let s = shift.sample(&mut rng::stream(seed, 2 * i + 1));
        let mut shifted = s.apply(&pose, topo)?;
        if refit {
            shifted = fit_to_canvas(&shifted, CANVAS_MARGIN)?;
        }
        validate_pose(&shifted, topo)
            .map_err(|v| Error::Numerical(format!("shifted pose {i} is invalid: {v}")))?;
        poses.push(shifted);
    }
    Ok(PoseSet {
        topology: topo.clone(),
        poses,
    })
}
