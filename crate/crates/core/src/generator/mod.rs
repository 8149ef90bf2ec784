//! Style-modulated pose generator.
//!
//! `z → mapping → w → affine heads → (s_1..s_L) → synthesis → heatmaps`.
//! The synthesis network starts from a learned constant and, at every layer,
//! modulates a layer-normalized activation with the scale/shift halves of that
//! layer's style code. The head emits one softmax map of `R × R` per joint.

mod checkpoint;
mod transfer;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::render::{self, HeatmapStack};
use crate::rng;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use transfer::{BoundTransfer, TransferBlock, TransferKind, TransferMatrix};

/// Rows per forward chunk during inference.
const INFERENCE_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub d_z: usize,
    pub d_w: usize,
    pub layers: usize,
    pub d_h: usize,
    pub joints: usize,
    pub resolution: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            d_z: 64,
            d_w: 64,
            layers: 8,
            d_h: 64,
            joints: 13,
            resolution: 32,
        }
    }
}

impl GeneratorConfig {
    /// Width of one layer's style code: a scale and a shift per hidden unit.
    pub fn d_s(&self) -> usize {
        2 * self.d_h
    }

    pub fn validate(&self) -> Result<()> {
        let GeneratorConfig {
            d_z,
            d_w,
            layers,
            d_h,
            joints,
            resolution,
        } = *self;
        if [d_z, d_w, layers, d_h, joints, resolution].contains(&0) {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        if layers < 4 {
            return Err(Error::Config(format!("need at least 4 layers, got {layers}")));
        }
        if joints < 2 || resolution < 2 {
            return Err(Error::Config("need at least 2 joints and resolution 2".into()));
        }
        Ok(())
    }

    /// Total trainable scalars, from the layer shapes.
    pub fn parameter_count(&self) -> usize {
        let GeneratorConfig {
            d_z,
            d_w,
            layers,
            d_h,
            joints,
            resolution,
        } = *self;
        let out = joints * resolution * resolution;
        let mapping = d_z * d_w + d_w + 2 * (d_w * d_w + d_w);
        let affine = layers * (d_w * self.d_s() + self.d_s());
        let synthesis = d_h + layers * (d_h * d_h + d_h);
        mapping + affine + synthesis + d_h * out + out
    }
}

/// Fully connected layer `x·W + b` with `W` stored `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Dense {
            weight: Tensor::randn(&[fan_in, fan_out], (1.0 / fan_in as f64).sqrt(), rng),
            bias: Tensor::zeros(&[fan_out]),
        }
    }
}

/// Per-layer style codes for a batch: `layers` tensors of `[batch, d_s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleCodes {
    pub layers: Vec<Tensor>,
}

impl StyleCodes {
    pub fn batch(&self) -> usize {
        self.layers.first().map_or(0, Tensor::rows)
    }

    /// Codes of sample `i` as a batch of one.
    pub fn sample(&self, i: usize) -> StyleCodes {
        StyleCodes {
            layers: self.layers.iter().map(|t| t.slice_rows(i, i + 1)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    config: GeneratorConfig,
    pub mapping: Vec<Dense>,
    pub affine: Vec<Dense>,
    pub constant: Tensor,
    pub synthesis: Vec<Dense>,
    pub head: Dense,
}

/// Graph handles for a generator's parameters.
#[derive(Clone, Debug)]
pub struct BoundGenerator {
    config: GeneratorConfig,
    mapping: Vec<(NodeId, NodeId)>,
    affine: Vec<(NodeId, NodeId)>,
    constant: NodeId,
    synthesis: Vec<(NodeId, NodeId)>,
    head: (NodeId, NodeId),
    grid: NodeId,
}

/// Deterministic initialization: weights `Normal(0, 1/fan_in)`, biases zero
/// except the scale half of every affine head, which starts at one so that
/// modulation begins as the identity; constant input `Normal(0, 1)`.
pub fn init_generator(config: GeneratorConfig, seed: u64) -> Result<Generator> {
    config.validate()?;
    let mut r = rng::seeded(seed);
    let GeneratorConfig {
        d_z,
        d_w,
        layers,
        d_h,
        joints,
        resolution,
    } = config;
    let mapping = vec![
        Dense::init(d_z, d_w, &mut r),
        Dense::init(d_w, d_w, &mut r),
        Dense::init(d_w, d_w, &mut r),
    ];
    let affine = (0..layers)
        .map(|_| {
            let mut a = Dense::init(d_w, 2 * d_h, &mut r);
            a.bias.data_mut()[..d_h].fill(1.0);
            a
        })
        .collect();
    let constant = Tensor::new(
        &[1, d_h],
        (0..d_h).map(|_| r.sample::<f64, _>(StandardNormal)).collect(),
    );
    let synthesis = (0..layers).map(|_| Dense::init(d_h, d_h, &mut r)).collect();
    let head = Dense::init(d_h, joints * resolution * resolution, &mut r);
    Ok(Generator {
        config,
        mapping,
        affine,
        constant,
        synthesis,
        head,
    })
}

/// `[batch, d_z]` standard normal latents.
pub fn sample_latents(d_z: usize, batch: usize, seed: u64) -> Tensor {
    Tensor::randn(&[batch, d_z], 1.0, &mut rng::seeded(seed))
}

impl Generator {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Parameters in checkpoint order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for d in self.mapping.iter().chain(&self.affine) {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        out.push(&self.constant);
        for d in self.synthesis.iter().chain(std::iter::once(&self.head)) {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for d in self.mapping.iter_mut().chain(self.affine.iter_mut()) {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out.push(&mut self.constant);
        for d in self
            .synthesis
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
        {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Rebuilds a generator from tensors in [`Generator::tensors`] order.
    pub fn from_tensors(config: GeneratorConfig, tensors: Vec<Tensor>) -> Result<Generator> {
        config.validate()?;
        let mut g = init_generator(config, 0)?;
        let slots = g.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (i, (slot, t)) in slots.into_iter().zip(tensors).enumerate() {
            if slot.len() != t.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter {i}: expected {} values, found {}",
                    slot.len(),
                    t.len()
                )));
            }
            let shape = slot.shape().to_vec();
            *slot = t.reshaped(&shape);
        }
        Ok(g)
    }

    /// Registers every parameter as a graph leaf.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundGenerator {
        let leaf = |graph: &mut Graph, t: &Tensor| {
            if trainable {
                graph.param(t.clone())
            } else {
                graph.constant(t.clone())
            }
        };
        let dense = |graph: &mut Graph, d: &Dense| (leaf(graph, &d.weight), leaf(graph, &d.bias));
        let mapping = self.mapping.iter().map(|d| dense(graph, d)).collect();
        let affine = self.affine.iter().map(|d| dense(graph, d)).collect();
        let constant = leaf(graph, &self.constant);
        let synthesis = self.synthesis.iter().map(|d| dense(graph, d)).collect();
        let head = dense(graph, &self.head);
        let grid = graph.constant(render::softargmax_grid(self.config.resolution));
        BoundGenerator {
            config: self.config,
            mapping,
            affine,
            constant,
            synthesis,
            head,
            grid,
        }
    }

    /// Copies trained leaf values back out of a graph.
    pub fn read_back(&mut self, graph: &Graph, bound: &BoundGenerator) {
        for (d, &(w, b)) in self.mapping.iter_mut().zip(&bound.mapping) {
            d.weight = graph.value(w).clone();
            d.bias = graph.value(b).clone();
        }
        for (d, &(w, b)) in self.affine.iter_mut().zip(&bound.affine) {
            d.weight = graph.value(w).clone();
            d.bias = graph.value(b).clone();
        }
        self.constant = graph.value(bound.constant).clone();
        for (d, &(w, b)) in self.synthesis.iter_mut().zip(&bound.synthesis) {
            d.weight = graph.value(w).clone();
            d.bias = graph.value(b).clone();
        }
        self.head.weight = graph.value(bound.head.0).clone();
        self.head.bias = graph.value(bound.head.1).clone();
    }

    fn check_latents(&self, z: &Tensor) -> Result<()> {
        if z.shape().len() != 2 || z.cols() != self.config.d_z {
            return Err(Error::invalid(format!(
                "latents must be [batch, {}], got {:?}",
                self.config.d_z,
                z.shape()
            )));
        }
        Ok(())
    }

    /// `s_l = A_l(f(z))` for every layer.
    pub fn style_codes(&self, z: &Tensor) -> Result<StyleCodes> {
        self.check_latents(z)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let zn = g.constant(z.clone());
        let codes = bound.style_codes(&mut g, zn)?;
        Ok(StyleCodes {
            layers: codes.iter().map(|&c| g.value(c).clone()).collect(),
        })
    }

    /// Synthesis half: style codes to per-joint heatmaps, one stack per row.
    pub fn forward(&self, codes: &StyleCodes) -> Result<Vec<HeatmapStack>> {
        self.check_codes(codes)?;
        let n = codes.batch();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + INFERENCE_CHUNK).min(n);
            let mut g = Graph::new();
            let bound = self.bind(&mut g, false);
            let nodes: Vec<NodeId> = codes
                .layers
                .iter()
                .map(|t| g.constant(t.slice_rows(start, end)))
                .collect();
            let probs = bound.synthesize(&mut g, &nodes)?;
            out.extend(self.stacks(g.value(probs)));
            start = end;
        }
        Ok(out)
    }

    /// `φ(τ(A(f(z))))` for every row of `z`.
    pub fn forward_with_transfer(
        &self,
        tau: &TransferMatrix,
        z: &Tensor,
    ) -> Result<Vec<HeatmapStack>> {
        self.check_latents(z)?;
        tau.check_layout(&self.config)?;
        let n = z.rows();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + INFERENCE_CHUNK).min(n);
            let mut g = Graph::new();
            let bound = self.bind(&mut g, false);
            let bt = tau.bind(&mut g, false);
            let zn = g.constant(z.slice_rows(start, end));
            let codes = bound.style_codes(&mut g, zn)?;
            let codes = bt.apply(&mut g, &codes)?;
            let probs = bound.synthesize(&mut g, &codes)?;
            out.extend(self.stacks(g.value(probs)));
            start = end;
        }
        Ok(out)
    }

    fn check_codes(&self, codes: &StyleCodes) -> Result<()> {
        if codes.layers.len() != self.config.layers {
            return Err(Error::invalid(format!(
                "expected {} style codes, got {}",
                self.config.layers,
                codes.layers.len()
            )));
        }
        let b = codes.batch();
        if codes
            .layers
            .iter()
            .any(|t| t.shape() != [b, self.config.d_s()])
        {
            return Err(Error::invalid(format!(
                "style codes must be [batch, {}]",
                self.config.d_s()
            )));
        }
        Ok(())
    }

    fn stacks(&self, probs: &Tensor) -> Vec<HeatmapStack> {
        let (m, r) = (self.config.joints, self.config.resolution);
        probs
            .data()
            .chunks(m * r * r)
            .map(|c| HeatmapStack::from_raw(m, r, c.to_vec()))
            .collect()
    }
}

impl BoundGenerator {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    fn dense(g: &mut Graph, x: NodeId, (w, b): (NodeId, NodeId)) -> Result<NodeId> {
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }

    /// Parameter handles in [`Generator::tensors`] order.
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for &(w, b) in self.mapping.iter().chain(&self.affine) {
            out.extend([w, b]);
        }
        out.push(self.constant);
        for &(w, b) in self.synthesis.iter().chain(std::iter::once(&self.head)) {
            out.extend([w, b]);
        }
        out
    }

    /// Style codes `[batch, d_s]` per layer for latents `[batch, d_z]`.
    pub fn style_codes(&self, g: &mut Graph, z: NodeId) -> Result<Vec<NodeId>> {
        let mut h = z;
        for (i, &layer) in self.mapping.iter().enumerate() {
            h = Self::dense(g, h, layer)?;
            if i + 1 < self.mapping.len() {
                h = g.leaky_relu(h)?;
            }
        }
        self.affine
            .iter()
            .map(|&a| Self::dense(g, h, a))
            .collect()
    }

    /// Per-joint probability maps `[batch · M, R²]`.
    pub fn synthesize(&self, g: &mut Graph, codes: &[NodeId]) -> Result<NodeId> {
        let d_h = self.config.d_h;
        let mut h = self.constant;
        for (&layer, &s) in self.synthesis.iter().zip(codes) {
            let x = Self::dense(g, h, layer)?;
            let x = g.layer_norm(x)?;
            let scale = g.slice(s, 1, 0, d_h)?;
            let shift = g.slice(s, 1, d_h, 2 * d_h)?;
            let y = g.mul(scale, x)?;
            let y = g.add(y, shift)?;
            h = g.leaky_relu(y)?;
        }
        let batch = g.value(h).rows();
        let logits = Self::dense(g, h, self.head)?;
        let r2 = self.config.resolution * self.config.resolution;
        let logits = g.reshape(logits, &[batch * self.config.joints, r2])?;
        g.softmax_rows(logits)
    }

    /// Soft-argmax keypoints `[batch, 2M]` of synthesized maps.
    pub fn keypoints(&self, g: &mut Graph, probs: NodeId) -> Result<NodeId> {
        let rows = g.value(probs).rows();
        let xy = g.matmul(probs, self.grid)?;
        g.reshape(xy, &[rows / self.config.joints, 2 * self.config.joints])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::decode_softargmax;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            d_z: 8,
            d_w: 8,
            layers: 4,
            d_h: 8,
            joints: 5,
            resolution: 8,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_generator(tiny(), 3).unwrap();
        let b = init_generator(tiny(), 3).unwrap();
        let c = init_generator(tiny(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let cfg = GeneratorConfig::default();
        let g = init_generator(cfg, 0).unwrap();
        // 64·64+64 + 2(64·64+64)  mapping
        // 8(64·128+128)           affine
        // 64 + 8(64·64+64)        constant + synthesis
        // 64·13312 + 13312        head
        let expect = (4096 + 64) * 3 + 8 * (8192 + 128) + 64 + 8 * (4096 + 64) + 64 * 13312 + 13312;
        assert_eq!(g.parameter_count(), expect);
        assert_eq!(cfg.parameter_count(), expect);
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.layers = 3;
        assert!(c.validate().is_err());
        c.layers = 4;
        c.d_h = 0;
        assert!(init_generator(c, 0).is_err());
    }

    #[test]
    fn maps_sum_to_one() {
        let g = init_generator(tiny(), 0).unwrap();
        let z = Tensor::zeros(&[1, 8]);
        let codes = g.style_codes(&z).unwrap();
        for stack in g.forward(&codes).unwrap() {
            for j in 0..5 {
                assert!((stack.map(j).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_affine_weights_give_bias_codes() {
        let mut g = init_generator(tiny(), 0).unwrap();
        for (l, a) in g.affine.iter_mut().enumerate() {
            a.weight = Tensor::zeros(a.weight.shape());
            a.bias = Tensor::full(a.bias.shape(), l as f64 + 0.5);
        }
        let z = sample_latents(8, 3, 1);
        let codes = g.style_codes(&z).unwrap();
        for (l, c) in codes.layers.iter().enumerate() {
            assert!(c.data().iter().all(|&v| v == l as f64 + 0.5));
        }
    }

    #[test]
    fn batch_codes_and_maps_match_single_rows() {
        let g = init_generator(tiny(), 2).unwrap();
        let z = sample_latents(8, 4, 9);
        let codes = g.style_codes(&z).unwrap();
        let maps = g.forward(&codes).unwrap();
        for i in 0..4 {
            let zi = z.slice_rows(i, i + 1);
            let ci = g.style_codes(&zi).unwrap();
            assert_eq!(ci, codes.sample(i));
            let mi = g.forward(&ci).unwrap();
            assert_eq!(mi[0], maps[i]);
        }
        assert_ne!(codes.sample(0), codes.sample(1));
    }

    #[test]
    fn zero_head_gives_uniform_maps_at_center() {
        let mut g = init_generator(tiny(), 0).unwrap();
        g.head.weight = Tensor::zeros(g.head.weight.shape());
        g.head.bias = Tensor::zeros(g.head.bias.shape());
        let codes = g.style_codes(&sample_latents(8, 2, 0)).unwrap();
        for stack in g.forward(&codes).unwrap() {
            let pose = decode_softargmax(&stack).unwrap();
            for c in pose.coords {
                assert!((c[0] - 0.5).abs() < 1e-12 && (c[1] - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn first_and_last_styles_both_matter() {
        let g = init_generator(tiny(), 5).unwrap();
        let codes = g.style_codes(&sample_latents(8, 1, 3)).unwrap();
        let base = g.forward(&codes).unwrap()[0].clone();
        // finite-difference sensitivity: nudge one code entry, maps must move
        for layer in [0, 3] {
            let mut total = 0.0;
            for k in 0..g.config().d_s() {
                let mut c = codes.clone();
                c.layers[layer].data_mut()[k] += 1e-4;
                let moved = &g.forward(&c).unwrap()[0];
                total += moved
                    .data()
                    .iter()
                    .zip(base.data())
                    .map(|(a, b)| ((a - b) / 1e-4).powi(2))
                    .sum::<f64>();
            }
            assert!(total.sqrt() > 1e-6, "layer {layer} jacobian norm {}", total.sqrt());
        }
    }

    #[test]
    fn latent_dimension_checked() {
        let g = init_generator(tiny(), 0).unwrap();
        assert!(g.style_codes(&Tensor::zeros(&[1, 7])).is_err());
    }
}
