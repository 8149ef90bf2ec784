//! Pose data model: skeleton topology, poses in normalized canvas units,
//! pose sets, canvas fitting and pose-mixup.

mod io;
mod mixup;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_poses, read_poses, save_poses, write_poses};
pub use mixup::{mix_poses, pose_mixup, pose_mixup_with};

/// Margin used whenever poses are re-fit to the canvas.
pub const CANVAS_MARGIN: f64 = 0.1;

pub type Rgb = [u8; 3];

/// Joint names, bone list and per-bone colors shared by every pose of a set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    joints: Vec<String>,
    /// `(parent, child)` pairs.
    bones: Vec<(usize, usize)>,
    root: usize,
    colors: Vec<Rgb>,
}

impl SkeletonTopology {
    /// Checks that the bones form a spanning tree rooted at `root` and that
    /// bone colors are pairwise distinct.
    pub fn new(
        joints: Vec<String>,
        bones: Vec<(usize, usize)>,
        root: usize,
        colors: Vec<Rgb>,
    ) -> Result<Self> {
        let m = joints.len();
        if m < 2 {
            return Err(Error::Topology(format!("need at least 2 joints, got {m}")));
        }
        if root >= m {
            return Err(Error::Topology(format!("root {root} out of range")));
        }
        if bones.len() != m - 1 {
            return Err(Error::Topology(format!(
                "{} bones for {m} joints, a tree needs {}",
                bones.len(),
                m - 1
            )));
        }
        if colors.len() != bones.len() {
            return Err(Error::Topology(format!(
                "{} colors for {} bones",
                colors.len(),
                bones.len()
            )));
        }
        let mut has_parent = vec![false; m];
        let mut uf = UnionFind::new(m);
        for (b, &(p, c)) in bones.iter().enumerate() {
            if p >= m || c >= m {
                return Err(Error::Topology(format!("bone {b} ({p}, {c}) out of range")));
            }
            if c == root {
                return Err(Error::Topology(format!("bone {b} points into the root")));
            }
            if std::mem::replace(&mut has_parent[c], true) {
                return Err(Error::Topology(format!("joint {c} has two parents")));
            }
            if !uf.union(p, c) {
                return Err(Error::Topology(format!("bone {b} closes a cycle")));
            }
        }
        for (i, a) in colors.iter().enumerate() {
            if colors[..i].contains(a) {
                return Err(Error::Topology(format!("bone color {a:?} is used twice")));
            }
        }
        Ok(SkeletonTopology {
            joints,
            bones,
            root,
            colors,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[String] {
        &self.joints
    }

    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn colors(&self) -> &[Rgb] {
        &self.colors
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j == name)
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.bones.iter().find(|b| b.1 == joint).map(|b| b.0)
    }

    /// Bones ordered so every parent is placed before its children.
    pub fn bones_topological(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.bones.len());
        let mut frontier = vec![self.root];
        while let Some(j) = frontier.pop() {
            for (b, &(p, c)) in self.bones.iter().enumerate() {
                if p == j {
                    order.push(b);
                    frontier.push(c);
                }
            }
        }
        order
    }

    /// `joint` and every joint below it.
    pub fn subtree(&self, joint: usize) -> Vec<usize> {
        let mut out = vec![joint];
        let mut i = 0;
        while i < out.len() {
            let j = out[i];
            out.extend(self.bones.iter().filter(|b| b.0 == j).map(|b| b.1));
            i += 1;
        }
        out
    }

    /// Same topology with every bone drawn in one gray level.
    pub fn grayscale(&self) -> SkeletonTopology {
        let colors = (0..self.bones.len())
            .map(|b| {
                let v = (64 + (b * 191) / self.bones.len().max(1)) as u8;
                [v, v, v]
            })
            .collect();
        SkeletonTopology {
            colors,
            ..self.clone()
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// False when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Joint coordinates in normalized canvas units, `(x, y)` with y pointing
/// down the image.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub coords: Vec<[f64; 2]>,
    pub label: Option<String>,
}

impl Pose {
    pub fn new(coords: Vec<[f64; 2]>) -> Self {
        Pose {
            coords,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// `[x0, y0, x1, y1, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.coords.iter().flat_map(|c| [c[0], c[1]]).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Pose::new(flat.chunks(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.coords.len() as f64;
        let (sx, sy) = self
            .coords
            .iter()
            .fold((0.0, 0.0), |(sx, sy), c| (sx + c[0], sy + c[1]));
        [sx / n, sy / n]
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for c in &self.coords {
            for k in 0..2 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        (lo, hi)
    }
}

/// First invariant a pose breaks.
#[derive(Clone, Debug, PartialEq)]
pub enum PoseViolation {
    LengthMismatch { expected: usize, got: usize },
    NonFinite { joint: usize },
    OutOfRange { joint: usize },
}

impl fmt::Display for PoseViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoseViolation::LengthMismatch { expected, got } => {
                write!(f, "length mismatch: expected {expected} joints, got {got}")
            }
            PoseViolation::NonFinite { joint } => {
                write!(f, "non-finite coordinate at joint {joint}")
            }
            PoseViolation::OutOfRange { joint } => {
                write!(f, "coordinate outside [0, 1] at joint {joint}")
            }
        }
    }
}

pub fn validate_pose(pose: &Pose, topo: &SkeletonTopology) -> Result<(), PoseViolation> {
    if pose.len() != topo.joint_count() {
        return Err(PoseViolation::LengthMismatch {
            expected: topo.joint_count(),
            got: pose.len(),
        });
    }
    if let Some(j) = pose
        .coords
        .iter()
        .position(|c| !c[0].is_finite() || !c[1].is_finite())
    {
        return Err(PoseViolation::NonFinite { joint: j });
    }
    if let Some(j) = pose
        .coords
        .iter()
        .position(|c| !(0.0..=1.0).contains(&c[0]) || !(0.0..=1.0).contains(&c[1]))
    {
        return Err(PoseViolation::OutOfRange { joint: j });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseSet {
    pub topology: SkeletonTopology,
    pub poses: Vec<Pose>,
}

impl PoseSet {
    /// Fails on the first pose that does not validate.
    pub fn new(topology: SkeletonTopology, poses: Vec<Pose>) -> Result<Self> {
        for (i, p) in poses.iter().enumerate() {
            validate_pose(p, &topology).map_err(|v| Error::invalid(format!("pose {i}: {v}")))?;
        }
        Ok(PoseSet { topology, poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Row-major `len × 2M` coordinate matrix.
    pub fn flat_matrix(&self) -> Vec<Vec<f64>> {
        self.poses.iter().map(Pose::flatten).collect()
    }

    /// Concatenation of two sets over the same topology.
    pub fn union(&self, other: &PoseSet) -> Result<PoseSet> {
        if self.topology != other.topology {
            return Err(Error::Topology("cannot join sets with different topologies".into()));
        }
        let mut poses = self.poses.clone();
        poses.extend(other.poses.iter().cloned());
        Ok(PoseSet {
            topology: self.topology.clone(),
            poses,
        })
    }
}

/// Uniform scale and translation that puts the pose's bounding box inside
/// `[margin, 1 − margin]²`, centered, aspect ratio preserved. A pose whose
/// joints all coincide is moved to `(0.5, 0.5)`.
pub fn fit_to_canvas(pose: &Pose, margin: f64) -> Result<Pose> {
    if !(0.0..0.5).contains(&margin) {
        return Err(Error::invalid(format!("margin {margin} outside [0, 0.5)")));
    }
    let (lo, hi) = pose.bounding_box();
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let mut out = pose.clone();
    if extent == 0.0 {
        for c in &mut out.coords {
            *c = [0.5, 0.5];
        }
        return Ok(out);
    }
    let scale = (1.0 - 2.0 * margin) / extent;
    let shift = [
        0.5 - 0.5 * (lo[0] + hi[0]) * scale,
        0.5 - 0.5 * (lo[1] + hi[1]) * scale,
    ];
    for c in &mut out.coords {
        *c = [c[0] * scale + shift[0], c[1] * scale + shift[1]];
    }
    Ok(out)
}

/// Thirteen-joint human skeleton rooted at the neck.
pub fn human13() -> SkeletonTopology {
    let joints = [
        "head", "neck", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
        "pelvis", "l_knee", "r_knee", "l_ankle", "r_ankle",
    ];
    let bones = vec![
        (1, 0),
        (1, 2),
        (1, 3),
        (2, 4),
        (3, 5),
        (4, 6),
        (5, 7),
        (1, 8),
        (8, 9),
        (8, 10),
        (9, 11),
        (10, 12),
    ];
    let colors = vec![
        [255, 255, 0],
        [255, 128, 0],
        [0, 128, 255],
        [255, 0, 0],
        [0, 0, 255],
        [255, 0, 128],
        [0, 255, 255],
        [128, 255, 0],
        [0, 255, 0],
        [255, 0, 255],
        [128, 0, 255],
        [0, 255, 128],
    ];
    SkeletonTopology::new(joints.iter().map(|s| s.to_string()).collect(), bones, 1, colors)
        .expect("built-in skeleton is a tree")
}

/// Chain of `m` joints, joint 0 is the root.
pub fn chain(m: usize) -> SkeletonTopology {
    let joints = (0..m).map(|i| format!("j{i}")).collect();
    let bones = (1..m).map(|i| (i - 1, i)).collect();
    let colors = (1..m)
        .map(|i| {
            let h = (i * 97) % 256;
            [h as u8, (255 - h) as u8, ((i * 53) % 256) as u8]
        })
        .collect();
    SkeletonTopology::new(joints, bones, 0, colors).expect("chain is a tree")
}
