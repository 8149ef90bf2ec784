//! Sampling target poses through the re-render filter.

use crate::error::{Error, Result};
use crate::generator::{sample_latents, Generator, TransferMatrix};
use crate::pose::{PoseSet, SkeletonTopology};
use crate::render::{roundtrip_filter, RasterImage};
use crate::rng;

#[derive(Clone, Debug)]
pub struct Sampled {
    pub poses: PoseSet,
    /// Clean re-rendered rasters, when requested.
    pub rasters: Option<Vec<RasterImage>>,
    /// Latent draws rejected for degenerate heatmaps.
    pub skipped: usize,
}

/// Draws `n` latents, generates through `τ`, decodes, and optionally
/// re-renders. Degenerate samples are replaced, at most `10·n` times in
/// total.
pub fn sample_target(
    g: &Generator,
    tau: &TransferMatrix,
    topo: &SkeletonTopology,
    n: usize,
    seed: u64,
    raster: Option<(usize, usize)>,
) -> Result<Sampled> {
    if n == 0 {
        return Err(Error::invalid("n must be ≥ 1"));
    }
    if topo.joint_count() != g.config().joints {
        return Err(Error::invalid("topology does not match generator"));
    }
    let (w, h) = raster.unwrap_or((64, 64));
    let d_z = g.config().d_z;
    let mut poses = Vec::with_capacity(n);
    let mut rasters = raster.map(|_| Vec::with_capacity(n));
    let mut skipped = 0;
    let mut round = 0u64;
    let mut z = sample_latents(d_z, n, seed);
    loop {
        for stack in g.forward_with_transfer(tau, &z)? {
            match roundtrip_filter(&stack, topo, w, h) {
                Ok((p, img)) => {
                    poses.push(p);
                    if let Some(r) = rasters.as_mut() {
                        r.push(img);
                    }
                }
                Err(Error::Numerical(msg)) => {
                    skipped += 1;
                    if skipped > 10 * n {
                        return Err(Error::Numerical(format!(
                            "gave up after {skipped} degenerate samples: {msg}"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        if poses.len() >= n {
            break;
        }
        round += 1;
        z = sample_latents(d_z, n - poses.len(), rng::derive(seed, &format!("retry-{round}")));
    }
    Ok(Sampled {
        poses: PoseSet::new(topo.clone(), poses)?,
        rasters,
        skipped,
    })
}
