//! Few-shot calibration of the transfer matrix.

use std::io::Write;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::FeatureExtractor;
use crate::autodiff::{AdamState, Graph, Tensor};
use crate::error::{Error, Result};
use crate::generator::{sample_latents, Generator, StyleCodes, TransferKind, TransferMatrix};
use crate::pose::{pose_mixup, PoseSet};
use crate::rng;

/// Which layers get a trainable block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSet {
    All,
    Only(Vec<usize>),
}

impl LayerSet {
    pub fn resolve(&self, total: usize) -> Result<Vec<usize>> {
        match self {
            LayerSet::All => Ok((1..=total).collect()),
            LayerSet::Only(v) => {
                if v.is_empty() {
                    return Err(Error::Config("layer set is empty".into()));
                }
                if let Some(&l) = v.iter().find(|&&l| l == 0 || l > total) {
                    return Err(Error::Config(format!("layer {l} outside 1..={total}")));
                }
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                Ok(v)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            LayerSet::All => "all".into(),
            LayerSet::Only(v) => v.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("+"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub layers: LayerSet,
    pub shots: usize,
    pub mixup_size: usize,
    pub lr: f64,
    pub batch: usize,
    pub iterations: usize,
    pub mixup: bool,
    /// Off replaces every adapted block by a two-layer residual network.
    pub linear: bool,
    /// Rank of `I + B·A` blocks; `None` keeps full dense blocks.
    pub low_rank: Option<usize>,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            layers: LayerSet::Only(vec![3]),
            shots: 30,
            mixup_size: 1000,
            lr: 0.1,
            batch: 128,
            iterations: 1000,
            mixup: true,
            linear: true,
            low_rank: None,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn kind(&self) -> TransferKind {
        match (self.linear, self.low_rank) {
            (false, _) => TransferKind::Nonlinear,
            (true, Some(rank)) => TransferKind::LowRank { rank },
            (true, None) => TransferKind::Linear,
        }
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        self.layers.resolve(layers)?;
        if self.batch == 0 {
            return Err(Error::Config("batch must be ≥ 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.low_rank == Some(0) {
            return Err(Error::Config("low-rank transfer needs rank ≥ 1".into()));
        }
        Ok(())
    }
}

/// Guidance poses with their fixed latent partners (row `k` of `latents`
/// belongs to pose `k`).
#[derive(Clone, Debug)]
pub struct Guidance {
    pub poses: PoseSet,
    pub latents: Tensor,
}

/// `T ∪ T*` when mixup is on, otherwise `T`, each paired with one latent.
pub fn build_guidance(shots: &PoseSet, cfg: &AdaptConfig, d_z: usize) -> Result<Guidance> {
    let poses = if cfg.mixup {
        if shots.len() < 2 {
            return Err(Error::invalid("mixup needs at least two guidance poses"));
        }
        let mix = pose_mixup(shots, cfg.mixup_size, rng::derive(cfg.seed, "mixup"))?;
        shots.union(&mix)?
    } else {
        if shots.is_empty() {
            return Err(Error::invalid("adaptation needs at least one target pose"));
        }
        shots.clone()
    };
    let latents = sample_latents(d_z, poses.len(), rng::derive(cfg.seed, "guidance-latents"));
    Ok(Guidance { poses, latents })
}

#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub tau: TransferMatrix,
    /// Minibatch loss before each update.
    pub loss_trace: Vec<f64>,
    /// Mean loss over every guidance pair at identity τ.
    pub initial_loss: f64,
    /// Mean loss over every guidance pair at the returned τ.
    pub final_loss: f64,
}

fn numerical_to_divergence(e: Error, iteration: usize) -> Error {
    if e.is_numerical() {
        Error::Divergence { iteration }
    } else {
        e
    }
}

struct Problem<'a> {
    g: &'a Generator,
    fx: FeatureExtractor,
    codes: StyleCodes,
    targets: Tensor,
}

impl Problem<'_> {
    fn batch_codes(&self, idx: &[usize]) -> Vec<Tensor> {
        self.codes.layers.iter().map(|t| t.gather_rows(idx)).collect()
    }

    /// Summed per-pair loss over `idx`, optionally with a trainable τ.
    fn build(&self, tau: &TransferMatrix, idx: &[usize], trainable: bool) -> Result<(Graph, crate::generator::BoundTransfer, crate::autodiff::NodeId)> {
        let mut graph = Graph::new();
        let bound = self.g.bind(&mut graph, false);
        let bt = tau.bind(&mut graph, trainable);
        let codes: Vec<_> = self.batch_codes(idx).into_iter().map(|t| graph.constant(t)).collect();
        let codes = bt.apply(&mut graph, &codes)?;
        let probs = bound.synthesize(&mut graph, &codes)?;
        let kp = bound.keypoints(&mut graph, probs)?;
        let feats = self.fx.graph(&mut graph, kp)?;
        let target = graph.constant(self.targets.gather_rows(idx));
        let loss = graph.sq_err(feats, target)?;
        Ok((graph, bt, loss))
    }

    fn full_loss(&self, tau: &TransferMatrix) -> Result<f64> {
        let n = self.targets.rows();
        let all: Vec<usize> = (0..n).collect();
        let mut total = 0.0;
        for chunk in all.chunks(256) {
            let (graph, _, loss) = self.build(tau, chunk, false)?;
            total += graph.value(loss).item();
        }
        Ok(total / n as f64)
    }
}

/// Mean per-pair loss `‖Γ(g_τ(z_k)) − Γ(y_k)‖²` over the whole guidance set.
pub fn guidance_loss(g: &Generator, tau: &TransferMatrix, guidance: &Guidance) -> Result<f64> {
    let p = Problem {
        g,
        fx: FeatureExtractor::new(&guidance.poses.topology),
        codes: g.style_codes(&guidance.latents)?,
        targets: FeatureExtractor::new(&guidance.poses.topology).set(&guidance.poses),
    };
    p.full_loss(tau)
}

/// Calibrates τ with the generator frozen: Adam on the adapted blocks only,
/// minibatches of guidance pairs.
pub fn adapt(g: &Generator, guidance: &Guidance, cfg: &AdaptConfig) -> Result<AdaptOutcome> {
    let config = *g.config();
    cfg.validate(config.layers)?;
    let n = guidance.poses.len();
    if n == 0 || guidance.latents.rows() != n {
        return Err(Error::invalid(format!(
            "{} guidance poses but {} latents",
            n,
            guidance.latents.rows()
        )));
    }
    if guidance.poses.topology.joint_count() != config.joints {
        return Err(Error::invalid("guidance topology does not match generator"));
    }
    let layers = cfg.layers.resolve(config.layers)?;
    let mut tau = TransferMatrix::new(&config, &layers, cfg.kind(), rng::derive(cfg.seed, "tau-init"))?;
    let fx = FeatureExtractor::new(&guidance.poses.topology);
    let problem = Problem {
        g,
        targets: fx.set(&guidance.poses),
        fx,
        codes: g.style_codes(&guidance.latents)?,
    };
    let initial_loss = problem.full_loss(&tau)?;
    let mut adam = AdamState::new(tau.tensors().iter().map(|t| t.shape()));
    let mut r = rng::seeded(rng::derive(cfg.seed, "adapt-batches"));
    let b = cfg.batch.min(n);
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let idx = sample(&mut r, n, b).into_vec();
        let (mut graph, bt, sum) = problem.build(&tau, &idx, true).map_err(|e| numerical_to_divergence(e, it))?;
        let loss = graph.scale(sum, 1.0 / b as f64)?;
        let value = graph.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Divergence { iteration: it });
        }
        trace.push(value);
        let grads = graph.backward(loss)?;
        let gs: Vec<&Tensor> = bt
            .nodes()
            .into_iter()
            .map(|id| grads.get(id).expect("transfer leaf has a gradient"))
            .collect();
        adam.step(&mut tau.tensors_mut(), &gs, cfg.lr)
            .map_err(|e| numerical_to_divergence(e, it))?;
    }
    let final_loss = problem.full_loss(&tau)?;
    Ok(AdaptOutcome {
        tau,
        loss_trace: trace,
        initial_loss,
        final_loss,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub layers: LayerSet,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// One adaptation per candidate layer set, sharing guidance and seed.
pub fn layer_sweep(
    g: &Generator,
    guidance: &Guidance,
    candidates: &[LayerSet],
    cfg: &AdaptConfig,
) -> Result<Vec<SweepEntry>> {
    if candidates.is_empty() {
        return Err(Error::invalid("layer sweep needs at least one candidate"));
    }
    candidates
        .iter()
        .map(|layers| {
            let arm = AdaptConfig {
                layers: layers.clone(),
                ..cfg.clone()
            };
            let out = adapt(g, guidance, &arm)?;
            Ok(SweepEntry {
                layers: layers.clone(),
                initial_loss: out.initial_loss,
                final_loss: out.final_loss,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(entries: &[SweepEntry], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(["layers", "initial_loss", "final_loss"]).map_err(csv_err)?;
    for e in entries {
        out.write_record([e.layers.label(), format!("{:e}", e.initial_loss), format!("{:e}", e.final_loss)])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_loss_csv<W: Write>(trace: &[f64], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(["iteration", "loss"]).map_err(csv_err)?;
    for (i, v) in trace.iter().enumerate() {
        out.write_record([i.to_string(), format!("{v:e}")]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
