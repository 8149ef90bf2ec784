//! Trained raster-to-keypoint regressor.
//!
//! The raster is first reduced by a fixed color-keyed pooling layer: every
//! pixel is assigned to the bone whose color it carries, and each bone channel
//! is summarized by its pixel count, mean, second moments, and bounding box.
//! A fully connected network maps these features to per-joint logits over an
//! `R × R` grid whose row and column terms are separable, so the per-joint
//! softmax factorizes into two marginals and soft-argmax stays cheap.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{softargmax_grid, HeatmapStack, RasterImage};
use crate::autodiff::{AdamState, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::pose::{Pose, PoseSet, SkeletonTopology};
use crate::rng;

/// Pooled statistics per bone channel.
const BONE_FEATURES: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaTrainConfig {
    pub width: usize,
    pub height: usize,
    pub hidden: usize,
    pub head_resolution: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for BetaTrainConfig {
    fn default() -> Self {
        BetaTrainConfig {
            width: 64,
            height: 64,
            hidden: 256,
            head_resolution: 32,
            epochs: 40,
            batch: 64,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaRegressor {
    topology: SkeletonTopology,
    width: usize,
    height: usize,
    head_resolution: usize,
    /// `(weight [in, out], bias [out])` per layer; the last emits `2·M·R`.
    pub layers: Vec<(Tensor, Tensor)>,
    /// Mean `L_rec` per epoch.
    pub loss_trace: Vec<f64>,
}

/// Color-keyed pooling of a raster into `BONE_FEATURES` values per bone.
pub fn raster_features(img: &RasterImage, topo: &SkeletonTopology) -> Vec<f64> {
    let nb = topo.bones().len();
    let sx = 1.0 / (img.width - 1) as f64;
    let sy = 1.0 / (img.height - 1) as f64;
    // count, Σx, Σy, Σxx, Σyy, Σxy, min x, max x, min y, max y
    let mut acc = vec![[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, f64::MAX, f64::MIN, f64::MAX, f64::MIN]; nb];
    let colors = topo.colors();
    for y in 0..img.height {
        for x in 0..img.width {
            let px = img.get(x, y);
            if px == [0, 0, 0] {
                continue;
            }
            let Some(b) = colors.iter().position(|c| *c == px) else {
                continue;
            };
            let (fx, fy) = (x as f64 * sx, y as f64 * sy);
            let a = &mut acc[b];
            a[0] += 1.0;
            a[1] += fx;
            a[2] += fy;
            a[3] += fx * fx;
            a[4] += fy * fy;
            a[5] += fx * fy;
            a[6] = a[6].min(fx);
            a[7] = a[7].max(fx);
            a[8] = a[8].min(fy);
            a[9] = a[9].max(fy);
        }
    }
    let mut out = Vec::with_capacity(nb * BONE_FEATURES);
    for a in acc {
        let n = a[0];
        if n == 0.0 {
            out.extend([0.0; BONE_FEATURES]);
            continue;
        }
        let (mx, my) = (a[1] / n, a[2] / n);
        // a uniform segment has variance extent²/12
        let vx = 12.0 * (a[3] / n - mx * mx);
        let vy = 12.0 * (a[4] / n - my * my);
        let cxy = 12.0 * (a[5] / n - mx * my);
        out.extend([
            1.0,
            n * sx,
            mx - 0.5,
            my - 0.5,
            vx,
            vy,
            cxy,
            a[6] - 0.5,
            a[7] - 0.5,
            a[8] - 0.5,
            a[9] - 0.5,
        ]);
    }
    out
}

struct Bound {
    layers: Vec<(NodeId, NodeId)>,
    grid: NodeId,
}

impl BetaRegressor {
    fn init(topo: &SkeletonTopology, cfg: &BetaTrainConfig, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let m = topo.joint_count();
        let dims = [
            topo.bones().len() * BONE_FEATURES,
            cfg.hidden,
            cfg.hidden,
            2 * m * cfg.head_resolution,
        ];
        let layers = dims
            .windows(2)
            .map(|w| {
                (
                    Tensor::randn(&[w[0], w[1]], (1.0 / w[0] as f64).sqrt(), &mut r),
                    Tensor::zeros(&[w[1]]),
                )
            })
            .collect();
        BetaRegressor {
            topology: topo.clone(),
            width: cfg.width,
            height: cfg.height,
            head_resolution: cfg.head_resolution,
            layers,
            loss_trace: Vec::new(),
        }
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    pub fn raster_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let layers = self
            .layers
            .iter()
            .map(|(w, b)| {
                if trainable {
                    (g.param(w.clone()), g.param(b.clone()))
                } else {
                    (g.constant(w.clone()), g.constant(b.clone()))
                }
            })
            .collect();
        let r = self.head_resolution;
        let grid = softargmax_grid(r);
        // first row of the grid carries the column coordinates 0..1
        let axis: Vec<f64> = (0..r).map(|c| grid.get2(c, 0)).collect();
        let grid = g.constant(Tensor::new(&[r, 1], axis));
        Bound { layers, grid }
    }

    /// Marginal probabilities `[B·M·2, R]` (x then y per joint) and the
    /// keypoints `[B, 2M]`.
    fn forward(&self, g: &mut Graph, bound: &Bound, x: NodeId) -> Result<(NodeId, NodeId)> {
        let mut h = x;
        let n = bound.layers.len();
        for (i, &(w, b)) in bound.layers.iter().enumerate() {
            let xw = g.matmul(h, w)?;
            h = g.add(xw, b)?;
            if i + 1 < n {
                h = g.leaky_relu(h)?;
            }
        }
        let batch = g.value(h).rows();
        let m = self.topology.joint_count();
        let r = self.head_resolution;
        let logits = g.reshape(h, &[batch * m * 2, r])?;
        let probs = g.softmax_rows(logits)?;
        let xy = g.matmul(probs, bound.grid)?;
        let kp = g.reshape(xy, &[batch, 2 * m])?;
        Ok((probs, kp))
    }

    fn check_image(&self, img: &RasterImage) -> Result<()> {
        if (img.width, img.height) != (self.width, self.height) {
            return Err(Error::invalid(format!(
                "regressor expects {}×{} rasters, got {}×{}",
                self.width, self.height, img.width, img.height
            )));
        }
        Ok(())
    }

    pub fn predict_batch(&self, imgs: &[RasterImage]) -> Result<Vec<Pose>> {
        let mut out = Vec::with_capacity(imgs.len());
        for chunk in imgs.chunks(256) {
            let mut feats = Vec::new();
            for img in chunk {
                self.check_image(img)?;
                feats.extend(raster_features(img, &self.topology));
            }
            let mut g = Graph::new();
            let bound = self.bind(&mut g, false);
            let x = g.constant(Tensor::new(&[chunk.len(), feats.len() / chunk.len()], feats));
            let (_, kp) = self.forward(&mut g, &bound, x)?;
            out.extend(g.value(kp).data().chunks(2 * self.topology.joint_count()).map(Pose::from_flat));
        }
        Ok(out)
    }

    pub fn predict(&self, img: &RasterImage) -> Result<Pose> {
        Ok(self.predict_batch(std::slice::from_ref(img))?.remove(0))
    }

    /// The separable per-joint maps as a full heatmap stack.
    pub fn predict_heatmaps(&self, img: &RasterImage) -> Result<HeatmapStack> {
        self.check_image(img)?;
        let feats = raster_features(img, &self.topology);
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(Tensor::new(&[1, feats.len()], feats));
        let (probs, _) = self.forward(&mut g, &bound, x)?;
        let p = g.value(probs);
        let (m, r) = (self.topology.joint_count(), self.head_resolution);
        let mut data = Vec::with_capacity(m * r * r);
        for j in 0..m {
            let (px, py) = (p.row_slice(2 * j), p.row_slice(2 * j + 1));
            for yv in py {
                for xv in px {
                    data.push(yv * xv);
                }
            }
        }
        Ok(HeatmapStack::from_raw(m, r, data))
    }
}

/// Fits the regressor by minimizing mean `‖y − β(α(y))‖²` over rasterized
/// training poses with Adam.
pub fn train_beta(poses: &PoseSet, cfg: &BetaTrainConfig, seed: u64) -> Result<BetaRegressor> {
    if poses.is_empty() {
        return Err(Error::invalid("cannot train the regressor on an empty pose set"));
    }
    if cfg.batch == 0 || cfg.hidden == 0 || cfg.head_resolution < 2 || !(cfg.lr > 0.0) {
        return Err(Error::invalid(format!("bad regressor config {cfg:?}")));
    }
    let topo = &poses.topology;
    let mut model = BetaRegressor::init(topo, cfg, seed);
    let mut feats = Vec::with_capacity(poses.len());
    for p in &poses.poses {
        let img = super::rasterize(p, topo, cfg.width, cfg.height)?;
        feats.push(raster_features(&img, topo));
    }
    let d_in = feats[0].len();
    let two_m = 2 * topo.joint_count();
    let mut adam = AdamState::new(
        model
            .layers
            .iter()
            .flat_map(|(w, b)| [w.shape(), b.shape()]),
    );
    let mut order: Vec<usize> = (0..poses.len()).collect();
    let mut shuffle = rng::seeded(rng::derive(seed, "beta-shuffle"));
    let mut iteration = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch) {
            let b = idx.len();
            let mut x = Vec::with_capacity(b * d_in);
            let mut y = Vec::with_capacity(b * two_m);
            for &i in idx {
                x.extend_from_slice(&feats[i]);
                y.extend(poses.poses[i].flatten());
            }
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let xn = g.constant(Tensor::new(&[b, d_in], x));
            let yn = g.constant(Tensor::new(&[b, two_m], y));
            let (_, kp) = model.forward(&mut g, &bound, xn)?;
            let se = g.sq_err(kp, yn)?;
            let loss = g.scale(se, 1.0 / b as f64)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence { iteration });
            }
            total += value * b as f64;
            let grads = g.backward(loss)?;
            let ids: Vec<NodeId> = bound.layers.iter().flat_map(|&(w, b)| [w, b]).collect();
            let gs: Vec<&Tensor> = ids.iter().map(|&id| grads.get(id).expect("trainable leaf")).collect();
            let mut params: Vec<&mut Tensor> = model
                .layers
                .iter_mut()
                .flat_map(|(w, b)| [w, b])
                .collect();
            adam.step(&mut params, &gs, cfg.lr)?;
            iteration += 1;
        }
        model.loss_trace.push(total / poses.len() as f64);
    }
    Ok(model)
}
