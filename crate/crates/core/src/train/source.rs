//! Source-distribution training by kernel moment matching.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FeatureExtractor;
use crate::autodiff::{AdamState, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::metrics::{median_bandwidth, SampleMatrix};
use crate::pose::PoseSet;
use crate::rng;

/// Floor for the per-batch bandwidth once both batches have collapsed.
const MIN_BANDWIDTH: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceTrainConfig {
    pub batch: usize,
    pub iterations: usize,
    pub lr: f64,
    pub bandwidth_multipliers: Vec<f64>,
    pub seed: u64,
}

impl Default for SourceTrainConfig {
    fn default() -> Self {
        SourceTrainConfig {
            batch: 128,
            iterations: 20_000,
            lr: 1e-3,
            bandwidth_multipliers: vec![0.5, 1.0, 2.0],
            seed: 0,
        }
    }
}

impl SourceTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 4 {
            return Err(Error::Config(format!("batch must be ≥ 4, got {}", self.batch)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.bandwidth_multipliers.is_empty() || self.bandwidth_multipliers.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config("bandwidth multipliers must be positive and non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SourceTrainOutcome {
    pub generator: Generator,
    pub loss_trace: Vec<f64>,
}

/// Median-heuristic bandwidth of the pooled batch times each multiplier.
pub fn batch_bandwidths(fake: &Tensor, real: &Tensor, multipliers: &[f64]) -> Result<Vec<f64>> {
    let x = SampleMatrix::new(fake.rows(), fake.cols(), fake.data().to_vec())?;
    let y = SampleMatrix::new(real.rows(), real.cols(), real.data().to_vec())?;
    let base = match median_bandwidth(&x, &y) {
        Ok(s) => s,
        Err(Error::Numerical(_)) => MIN_BANDWIDTH,
        Err(e) => return Err(e),
    };
    Ok(multipliers.iter().map(|m| m * base).collect())
}

/// Mean of `exp(−γ‖x_i − x_j‖²)` over `i ≠ j`, matching the metrics module.
fn within_mean(x: &Tensor, gamma: f64) -> f64 {
    let n = x.rows();
    let mut total = 0.0;
    for i in 0..n {
        let xi = x.row_slice(i);
        let mut row = 0.0;
        for j in i + 1..n {
            let d: f64 = xi.iter().zip(x.row_slice(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            row += (-gamma * d).exp();
        }
        total += row;
    }
    2.0 * total / (n * (n - 1)) as f64
}

/// Unbiased MMD² between graph features `fake` and constant `real`, summed
/// over `sigmas`.
pub fn graph_mmd2(g: &mut Graph, fake: NodeId, real: &Tensor, sigmas: &[f64]) -> Result<NodeId> {
    let n = g.value(fake).rows();
    let m = real.rows();
    if n < 2 || m < 2 {
        return Err(Error::invalid("unbiased MMD needs ≥ 2 samples"));
    }
    let real_node = g.constant(real.clone());
    let dxx = g.pairwise_sq_dist(fake, fake)?;
    let dxy = g.pairwise_sq_dist(fake, real_node)?;
    let mut terms = Vec::with_capacity(sigmas.len());
    for &s in sigmas {
        let gamma = 1.0 / (2.0 * s * s);
        let kxx = g.scale(dxx, -gamma)?;
        let kxx = g.exp(kxx)?;
        let sxx = g.sum(kxx)?;
        // the diagonal contributes exactly n ones
        let sxx = g.scale(sxx, 1.0 / (n * (n - 1)) as f64)?;
        let kxy = g.scale(dxy, -gamma)?;
        let kxy = g.exp(kxy)?;
        let sxy = g.sum(kxy)?;
        let sxy = g.scale(sxy, -2.0 / (n * m) as f64)?;
        let c = within_mean(real, gamma) - 1.0 / (n - 1) as f64;
        let c = g.constant(Tensor::scalar(c));
        let t = g.add(sxx, sxy)?;
        terms.push(g.add(t, c)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(total)
}

/// Fits the generator to `source` by minimizing multi-bandwidth unbiased
/// MMD² between features of generated and real batches.
pub fn train_source(g: &Generator, source: &PoseSet, cfg: &SourceTrainConfig) -> Result<SourceTrainOutcome> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::invalid("source pose set is empty"));
    }
    if source.topology.joint_count() != g.config().joints {
        return Err(Error::invalid(format!(
            "generator has {} joints, source poses have {}",
            g.config().joints,
            source.topology.joint_count()
        )));
    }
    let fx = FeatureExtractor::new(&source.topology);
    let real_all = fx.set(source);
    let mut gen = g.clone();
    let mut adam = AdamState::new(gen.tensors().iter().map(|t| t.shape()));
    let mut r = rng::seeded(rng::derive(cfg.seed, "source-batches"));
    let d_z = gen.config().d_z;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let z = Tensor::randn(&[cfg.batch, d_z], 1.0, &mut r);
        let idx: Vec<usize> = (0..cfg.batch).map(|_| r.gen_range(0..source.len())).collect();
        let real = real_all.gather_rows(&idx);
        let mut graph = Graph::new();
        let bound = gen.bind(&mut graph, true);
        let zn = graph.constant(z);
        let codes = bound.style_codes(&mut graph, zn)?;
        let probs = bound.synthesize(&mut graph, &codes)?;
        let kp = bound.keypoints(&mut graph, probs)?;
        let feats = fx.graph(&mut graph, kp)?;
        let sigmas = batch_bandwidths(graph.value(feats), &real, &cfg.bandwidth_multipliers)?;
        let loss = graph_mmd2(&mut graph, feats, &real, &sigmas)?;
        let value = graph.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Divergence { iteration: it });
        }
        trace.push(value);
        let grads = graph.backward(loss)?;
        let gs: Vec<&Tensor> = bound
            .nodes()
            .into_iter()
            .map(|id| grads.get(id).expect("trainable leaf has a gradient"))
            .collect();
        adam.step(&mut gen.tensors_mut(), &gs, cfg.lr)?;
    }
    Ok(SourceTrainOutcome {
        generator: gen,
        loss_trace: trace,
    })
}
