//! Block-diagonal transfer on stacked style codes.
//!
//! Every layer owns one block acting on that layer's style vector `s`
//! (a column vector; batches are stored as rows, so a linear block computes
//! `S·Uᵀ`). Blocks outside the adapted layer set stay the identity and are
//! skipped entirely, so an all-identity matrix reproduces the source
//! generator bit for bit.

use serde::{Deserialize, Serialize};

use super::{GeneratorConfig, StyleCodes};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::rng;

/// Parameterization of the adapted blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TransferKind {
    /// Dense `U_l`, initialized to the identity.
    Linear,
    /// `U_l = I + B·A` with rank `rank`; `B` starts at zero.
    LowRank { rank: usize },
    /// `s + W₂·lrelu(W₁·s + b₁) + b₂`; `W₂` starts at zero.
    Nonlinear,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TransferBlock {
    Identity,
    Linear {
        u: Tensor,
    },
    LowRank {
        /// `[rank, d_s]`
        a: Tensor,
        /// `[d_s, rank]`
        b: Tensor,
    },
    Nonlinear {
        w1: Tensor,
        b1: Tensor,
        w2: Tensor,
        b2: Tensor,
    },
}

impl TransferBlock {
    pub fn is_identity(&self) -> bool {
        matches!(self, TransferBlock::Identity)
    }

    pub(crate) fn kind_code(&self) -> u8 {
        match self {
            TransferBlock::Identity => 0,
            TransferBlock::Linear { .. } => 1,
            TransferBlock::LowRank { .. } => 2,
            TransferBlock::Nonlinear { .. } => 3,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            TransferBlock::Identity => vec![],
            TransferBlock::Linear { u } => vec![u],
            TransferBlock::LowRank { a, b } => vec![a, b],
            TransferBlock::Nonlinear { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            TransferBlock::Identity => vec![],
            TransferBlock::Linear { u } => vec![u],
            TransferBlock::LowRank { a, b } => vec![a, b],
            TransferBlock::Nonlinear { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
        }
    }

    pub(crate) fn from_parts(code: u8, d_s: usize, mut parts: Vec<Tensor>) -> Result<Self> {
        let bad = |what: &str| Error::Checkpoint(format!("transfer block: {what}"));
        let expect = match code {
            0 => 0,
            1 => 1,
            2 => 2,
            3 => 4,
            _ => return Err(bad("unknown block kind")),
        };
        if parts.len() != expect {
            return Err(bad("wrong array count"));
        }
        let a_len = parts.first().map_or(0, Tensor::len);
        let mut take = |shape: &[usize]| -> Result<Tensor> {
            let t = parts.remove(0);
            if t.len() != shape.iter().product::<usize>() {
                return Err(bad("array length does not match d_s"));
            }
            Ok(t.reshaped(shape))
        };
        Ok(match code {
            0 => TransferBlock::Identity,
            1 => TransferBlock::Linear {
                u: take(&[d_s, d_s])?,
            },
            2 => {
                if d_s == 0 || a_len % d_s != 0 {
                    return Err(bad("low-rank factor length"));
                }
                let r = a_len / d_s;
                TransferBlock::LowRank {
                    a: take(&[r, d_s])?,
                    b: take(&[d_s, r])?,
                }
            }
            _ => TransferBlock::Nonlinear {
                w1: take(&[d_s, d_s])?,
                b1: take(&[d_s])?,
                w2: take(&[d_s, d_s])?,
                b2: take(&[d_s])?,
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferMatrix {
    d_s: usize,
    blocks: Vec<TransferBlock>,
}

/// Graph handles for the non-identity blocks.
#[derive(Clone, Debug)]
pub struct BoundTransfer {
    blocks: Vec<Vec<NodeId>>,
    kinds: Vec<u8>,
}

impl TransferMatrix {
    pub fn identity(config: &GeneratorConfig) -> Self {
        TransferMatrix {
            d_s: config.d_s(),
            blocks: vec![TransferBlock::Identity; config.layers],
        }
    }

    /// Identity everywhere except `layers` (1-based, layer 1 is the
    /// coarsest), which get a freshly initialized block of `kind`. Every
    /// kind starts as an exact identity map.
    pub fn new(
        config: &GeneratorConfig,
        layers: &[usize],
        kind: TransferKind,
        seed: u64,
    ) -> Result<Self> {
        let mut t = TransferMatrix::identity(config);
        let d_s = t.d_s;
        let mut r = rng::seeded(seed);
        for &l in layers {
            if l == 0 || l > config.layers {
                return Err(Error::invalid(format!(
                    "layer {l} outside 1..={}",
                    config.layers
                )));
            }
            t.blocks[l - 1] = match kind {
                TransferKind::Linear => TransferBlock::Linear { u: Tensor::eye(d_s) },
                TransferKind::LowRank { rank } => {
                    if rank == 0 {
                        return Err(Error::invalid("low-rank transfer needs rank ≥ 1"));
                    }
                    TransferBlock::LowRank {
                        a: Tensor::randn(&[rank, d_s], (1.0 / d_s as f64).sqrt(), &mut r),
                        b: Tensor::zeros(&[d_s, rank]),
                    }
                }
                TransferKind::Nonlinear => TransferBlock::Nonlinear {
                    w1: Tensor::randn(&[d_s, d_s], (1.0 / d_s as f64).sqrt(), &mut r),
                    b1: Tensor::zeros(&[d_s]),
                    w2: Tensor::zeros(&[d_s, d_s]),
                    b2: Tensor::zeros(&[d_s]),
                },
            };
        }
        Ok(t)
    }

    pub(crate) fn from_blocks(d_s: usize, blocks: Vec<TransferBlock>) -> Self {
        TransferMatrix { d_s, blocks }
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn layers(&self) -> usize {
        self.blocks.len()
    }

    /// Block of 1-based layer `l`.
    pub fn block(&self, l: usize) -> &TransferBlock {
        &self.blocks[l - 1]
    }

    pub fn blocks(&self) -> &[TransferBlock] {
        &self.blocks
    }

    /// Replaces layer `l`'s block with the dense matrix `u`.
    pub fn set_linear(&mut self, l: usize, u: Tensor) -> Result<()> {
        if l == 0 || l > self.blocks.len() {
            return Err(Error::invalid(format!("layer {l} out of range")));
        }
        if u.shape() != [self.d_s, self.d_s] {
            return Err(Error::invalid(format!(
                "block must be {0}×{0}, got {1:?}",
                self.d_s,
                u.shape()
            )));
        }
        self.blocks[l - 1] = TransferBlock::Linear { u };
        Ok(())
    }

    /// 1-based indices of the non-identity blocks.
    pub fn adapted_layers(&self) -> Vec<usize> {
        (0..self.blocks.len())
            .filter(|&i| !self.blocks[i].is_identity())
            .map(|i| i + 1)
            .collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.blocks.iter().flat_map(TransferBlock::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.blocks
            .iter_mut()
            .flat_map(TransferBlock::tensors_mut)
            .collect()
    }

    /// The matrix `U_l` of a linear or low-rank block.
    pub fn effective_matrix(&self, l: usize) -> Option<Tensor> {
        match self.block(l) {
            TransferBlock::Identity => Some(Tensor::eye(self.d_s)),
            TransferBlock::Linear { u } => Some(u.clone()),
            TransferBlock::LowRank { a, b } => {
                let mut g = Graph::new();
                let (an, bn) = (g.constant(a.clone()), g.constant(b.clone()));
                let ba = g.matmul(bn, an).ok()?;
                let mut u = g.value(ba).clone();
                u.add_assign(&Tensor::eye(self.d_s));
                Some(u)
            }
            TransferBlock::Nonlinear { .. } => None,
        }
    }

    /// `‖U_l − I‖_F`; `None` for nonlinear blocks.
    pub fn distance_from_identity(&self, l: usize) -> Option<f64> {
        let mut u = self.effective_matrix(l)?;
        u.add_assign(&Tensor::eye(self.d_s).scale(-1.0));
        Some(u.frobenius())
    }

    pub fn check_layout(&self, config: &GeneratorConfig) -> Result<()> {
        if self.blocks.len() != config.layers || self.d_s != config.d_s() {
            return Err(Error::invalid(format!(
                "transfer has {} blocks of width {}, generator needs {} of width {}",
                self.blocks.len(),
                self.d_s,
                config.layers,
                config.d_s()
            )));
        }
        Ok(())
    }

    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundTransfer {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                b.tensors()
                    .into_iter()
                    .map(|t| {
                        if trainable {
                            graph.param(t.clone())
                        } else {
                            graph.constant(t.clone())
                        }
                    })
                    .collect()
            })
            .collect();
        BoundTransfer {
            blocks,
            kinds: self.blocks.iter().map(TransferBlock::kind_code).collect(),
        }
    }

    pub fn read_back(&mut self, graph: &Graph, bound: &BoundTransfer) {
        for (block, ids) in self.blocks.iter_mut().zip(&bound.blocks) {
            for (t, &id) in block.tensors_mut().into_iter().zip(ids) {
                *t = graph.value(id).clone();
            }
        }
    }

    /// `τ` applied to concrete style codes.
    pub fn apply_codes(&self, codes: &StyleCodes) -> Result<StyleCodes> {
        if codes.layers.len() != self.blocks.len() {
            return Err(Error::invalid("style code count does not match transfer"));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let nodes: Vec<NodeId> = codes.layers.iter().map(|t| g.constant(t.clone())).collect();
        let out = bound.apply(&mut g, &nodes)?;
        Ok(StyleCodes {
            layers: out.iter().map(|&n| g.value(n).clone()).collect(),
        })
    }
}

impl BoundTransfer {
    /// Trainable handles of all blocks, flattened in block order.
    pub fn nodes(&self) -> Vec<NodeId> {
        self.blocks.iter().flatten().copied().collect()
    }

    pub fn apply(&self, g: &mut Graph, codes: &[NodeId]) -> Result<Vec<NodeId>> {
        if codes.len() != self.blocks.len() {
            return Err(Error::invalid("style code count does not match transfer"));
        }
        codes
            .iter()
            .zip(self.blocks.iter().zip(&self.kinds))
            .map(|(&s, (ids, kind))| -> Result<NodeId> {
                Ok(match kind {
                    0 => s,
                    1 => g.matmul_nt(s, ids[0])?,
                    2 => {
                        let t = g.matmul_nt(s, ids[0])?;
                        let t = g.matmul_nt(t, ids[1])?;
                        g.add(s, t)?
                    }
                    _ => {
                        let h = g.matmul(s, ids[0])?;
                        let h = g.add(h, ids[1])?;
                        let h = g.leaky_relu(h)?;
                        let h = g.matmul(h, ids[2])?;
                        let h = g.add(h, ids[3])?;
                        g.add(s, h)?
                    }
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{init_generator, sample_latents};

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
    fn identity_transfer_is_bit_identical() {
        let g = init_generator(tiny(), 1).unwrap();
        let z = sample_latents(8, 6, 2);
        let direct = g.forward(&g.style_codes(&z).unwrap()).unwrap();
        let via = g
            .forward_with_transfer(&TransferMatrix::identity(&tiny()), &z)
            .unwrap();
        assert_eq!(direct, via);
    }

    #[test]
    fn every_kind_starts_as_identity() {
        let cfg = tiny();
        let g = init_generator(cfg, 1).unwrap();
        let z = sample_latents(8, 3, 2);
        let codes = g.style_codes(&z).unwrap();
        for kind in [
            TransferKind::Linear,
            TransferKind::LowRank { rank: 2 },
            TransferKind::Nonlinear,
        ] {
            let t = TransferMatrix::new(&cfg, &[2, 3], kind, 4).unwrap();
            assert_eq!(t.adapted_layers(), vec![2, 3]);
            let out = t.apply_codes(&codes).unwrap();
            for (a, b) in out.layers.iter().zip(&codes.layers) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_and_doubled_blocks_match_direct_style_edits() {
        let cfg = tiny();
        let g = init_generator(cfg, 7).unwrap();
        let z = sample_latents(8, 4, 1);
        let codes = g.style_codes(&z).unwrap();

        let mut zero = TransferMatrix::identity(&cfg);
        zero.set_linear(3, Tensor::zeros(&[16, 16])).unwrap();
        let mut edited = codes.clone();
        edited.layers[2] = Tensor::zeros(edited.layers[2].shape());
        assert_eq!(
            g.forward_with_transfer(&zero, &z).unwrap(),
            g.forward(&edited).unwrap()
        );

        let mut double = TransferMatrix::identity(&cfg);
        double.set_linear(3, Tensor::eye(16).scale(2.0)).unwrap();
        let mut edited = codes.clone();
        edited.layers[2] = edited.layers[2].scale(2.0);
        assert_eq!(
            g.forward_with_transfer(&double, &z).unwrap(),
            g.forward(&edited).unwrap()
        );
    }

    #[test]
    fn interpolated_blocks_interpolate_codes() {
        let cfg = tiny();
        let g = init_generator(cfg, 7).unwrap();
        let codes = g.style_codes(&sample_latents(8, 5, 1)).unwrap();
        let mut r = rng::seeded(2);
        let u1 = Tensor::randn(&[16, 16], 0.3, &mut r);
        let u2 = Tensor::randn(&[16, 16], 0.3, &mut r);
        let a = 0.3;
        let mut mix = u1.scale(a);
        mix.add_assign(&u2.scale(1.0 - a));
        let apply = |u: Tensor| {
            let mut t = TransferMatrix::identity(&cfg);
            t.set_linear(2, u).unwrap();
            t.apply_codes(&codes).unwrap().layers[1].clone()
        };
        let (c1, c2, cm) = (apply(u1), apply(u2), apply(mix));
        for i in 0..cm.len() {
            let expect = a * c1.data()[i] + (1.0 - a) * c2.data()[i];
            assert!((cm.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn layout_and_range_checks() {
        let cfg = tiny();
        assert!(TransferMatrix::new(&cfg, &[0], TransferKind::Linear, 0).is_err());
        assert!(TransferMatrix::new(&cfg, &[5], TransferKind::Linear, 0).is_err());
        let mut other = cfg;
        other.layers = 5;
        let g = init_generator(other, 0).unwrap();
        let t = TransferMatrix::identity(&cfg);
        assert!(g.forward_with_transfer(&t, &sample_latents(8, 1, 0)).is_err());
    }

    #[test]
    fn low_rank_effective_matrix() {
        let cfg = tiny();
        let mut t = TransferMatrix::new(&cfg, &[1], TransferKind::LowRank { rank: 3 }, 0).unwrap();
        assert_eq!(t.distance_from_identity(1), Some(0.0));
        for x in t.tensors_mut() {
            x.data_mut().fill(0.5);
        }
        // B·A has every entry 3 · 0.25
        let u = t.effective_matrix(1).unwrap();
        assert!((u.get2(0, 0) - 1.75).abs() < 1e-15);
        assert!((u.get2(0, 1) - 0.75).abs() < 1e-15);
    }
}
