//! Keypoints to images and back.
//!
//! `rasterize` draws stick figures, `render_heatmaps` draws per-joint
//! Gaussian maps, `decode_softargmax` takes expectations over maps, and
//! [`beta`] holds the trained raster-to-keypoint regressor.

pub mod beta;
mod export;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::pose::{Pose, SkeletonTopology};

pub use beta::{train_beta, BetaRegressor, BetaTrainConfig};
pub use export::{encode_png, save_png, save_svg, svg_string};

/// Default Gaussian width of rendered heatmaps, in map pixels.
pub const DEFAULT_SIGMA: f64 = 1.5;
pub const JOINT_COLOR: [u8; 3] = [255, 255, 255];

/// One `R × R` probability map per joint, row-major, rows running down the
/// canvas.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    joints: usize,
    resolution: usize,
    data: Vec<f64>,
}

impl HeatmapStack {
    /// Checks non-negativity and unit mass per map (within 1e-9).
    pub fn new(joints: usize, resolution: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != joints * resolution * resolution {
            return Err(Error::invalid(format!(
                "heatmap stack needs {} values, got {}",
                joints * resolution * resolution,
                data.len()
            )));
        }
        let r2 = resolution * resolution;
        for (j, map) in data.chunks(r2).enumerate() {
            if map.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::invalid(format!("map {j} has negative or non-finite mass")));
            }
            let s: f64 = map.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("map {j} sums to {s}, not 1")));
            }
        }
        Ok(HeatmapStack {
            joints,
            resolution,
            data,
        })
    }

    /// No normalization checks; for maps coming straight out of a softmax or
    /// deliberately degenerate inputs.
    pub fn from_raw(joints: usize, resolution: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), joints * resolution * resolution);
        HeatmapStack {
            joints,
            resolution,
            data,
        }
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, j: usize) -> &[f64] {
        let r2 = self.resolution * self.resolution;
        &self.data[j * r2..(j + 1) * r2]
    }

    pub fn map_mut(&mut self, j: usize) -> &mut [f64] {
        let r2 = self.resolution * self.resolution;
        &mut self.data[j * r2..(j + 1) * r2]
    }

    /// `a·self + (1 − a)·other`.
    pub fn mix(&self, other: &HeatmapStack, a: f64) -> HeatmapStack {
        assert_eq!(self.data.len(), other.data.len());
        HeatmapStack {
            joints: self.joints,
            resolution: self.resolution,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + (1.0 - a) * y)
                .collect(),
        }
    }

    pub fn uniform(joints: usize, resolution: usize) -> HeatmapStack {
        let r2 = resolution * resolution;
        HeatmapStack::from_raw(joints, resolution, vec![1.0 / r2 as f64; joints * r2])
    }
}

/// Normalized coordinates `(x, y)` of every map pixel center, `[R², 2]`.
pub fn softargmax_grid(resolution: usize) -> Tensor {
    let denom = (resolution.max(2) - 1) as f64;
    let mut data = Vec::with_capacity(2 * resolution * resolution);
    for r in 0..resolution {
        for c in 0..resolution {
            data.push(c as f64 / denom);
            data.push(r as f64 / denom);
        }
    }
    Tensor::new(&[resolution * resolution, 2], data)
}

/// Per joint, the expected pixel-center position under the (renormalized)
/// map, in canvas units.
pub fn decode_softargmax(stack: &HeatmapStack) -> Result<Pose> {
    let r = stack.resolution;
    let denom = (r.max(2) - 1) as f64;
    let mut coords = Vec::with_capacity(stack.joints);
    for j in 0..stack.joints {
        let map = stack.map(j);
        let (mut s, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for (i, &p) in map.iter().enumerate() {
            s += p;
            sx += p * (i % r) as f64;
            sy += p * (i / r) as f64;
        }
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Numerical(format!("degenerate heatmap for joint {j}")));
        }
        coords.push([sx / s / denom, sy / s / denom]);
    }
    Ok(Pose::new(coords))
}

/// Isotropic Gaussian bump per joint at its map-pixel position, normalized to
/// unit mass.
pub fn render_heatmaps(pose: &Pose, resolution: usize, sigma: f64) -> Result<HeatmapStack> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if resolution < 2 {
        return Err(Error::invalid("heatmap resolution must be at least 2"));
    }
    let r = resolution;
    let scale = (r - 1) as f64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut data = Vec::with_capacity(pose.len() * r * r);
    for (j, c) in pose.coords.iter().enumerate() {
        let (cx, cy) = (c[0] * scale, c[1] * scale);
        let gx: Vec<f64> = (0..r).map(|i| (-(i as f64 - cx).powi(2) * inv).exp()).collect();
        let gy: Vec<f64> = (0..r).map(|i| (-(i as f64 - cy).powi(2) * inv).exp()).collect();
        let total: f64 = gx.iter().sum::<f64>() * gy.iter().sum::<f64>();
        if !(total > 0.0) {
            return Err(Error::Numerical(format!(
                "joint {j} is too far outside the canvas to render"
            )));
        }
        for y in &gy {
            for x in &gx {
                data.push(y * x / total);
            }
        }
    }
    Ok(HeatmapStack::from_raw(pose.len(), r, data))
}

/// RGB8 raster, row-major, black background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn black(width: usize, height: usize) -> Self {
        RasterImage {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = 3 * (y as usize * self.width + x as usize);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Canvas coordinates to the nearest pixel, `round(x·(W−1))`.
pub fn to_pixel(c: [f64; 2], width: usize, height: usize) -> (i64, i64) {
    (
        (c[0] * (width - 1) as f64).round() as i64,
        (c[1] * (height - 1) as f64).round() as i64,
    )
}

/// Integer Bresenham segment, endpoints included.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push((x, y));
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Stick figure: a white 2×2 mark per joint, then one Bresenham line per
/// bone in that bone's color (bones are drawn last so every bone color
/// survives).
pub fn rasterize(pose: &Pose, topo: &SkeletonTopology, width: usize, height: usize) -> Result<RasterImage> {
    if width < 8 || height < 8 {
        return Err(Error::invalid(format!("raster must be at least 8×8, got {width}×{height}")));
    }
    if pose.len() != topo.joint_count() {
        return Err(Error::invalid("pose does not match topology"));
    }
    let mut img = RasterImage::black(width, height);
    let px: Vec<(i64, i64)> = pose
        .coords
        .iter()
        .map(|c| to_pixel([c[0].clamp(0.0, 1.0), c[1].clamp(0.0, 1.0)], width, height))
        .collect();
    for &(x, y) in &px {
        for (ox, oy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            img.put(x + ox, y + oy, JOINT_COLOR);
        }
    }
    for (&(p, c), &color) in topo.bones().iter().zip(topo.colors()) {
        for (x, y) in bresenham(px[p], px[c]) {
            img.put(x, y, color);
        }
    }
    Ok(img)
}

/// Decode a generated stack and redraw it: the clean keypoints and their
/// clean raster.
pub fn roundtrip_filter(
    stack: &HeatmapStack,
    topo: &SkeletonTopology,
    width: usize,
    height: usize,
) -> Result<(Pose, RasterImage)> {
    let pose = decode_softargmax(stack)?;
    let img = rasterize(&pose, topo, width, height)?;
    Ok((pose, img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{chain, human13};
    use crate::synth::{sample_pose, PoseDistributionSpec};

    #[test]
    fn one_hot_and_uniform_decode() {
        let r = 8;
        let mut data = vec![0.0; r * r];
        data[3 * r + 5] = 1.0;
        let p = decode_softargmax(&HeatmapStack::from_raw(1, r, data)).unwrap();
        assert_eq!(p.coords[0], [5.0 / 7.0, 3.0 / 7.0]);
        let u = decode_softargmax(&HeatmapStack::uniform(2, r)).unwrap();
        for c in u.coords {
            assert!((c[0] - 0.5).abs() < 1e-15 && (c[1] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn two_pixel_expectation() {
        let r = 8;
        let mut data = vec![0.0; r * r];
        data[2 * r + 1] = 0.75;
        data[2 * r + 6] = 0.25;
        let p = decode_softargmax(&HeatmapStack::from_raw(1, r, data)).unwrap();
        let (a, b) = (1.0 / 7.0, 6.0 / 7.0);
        assert!((p.coords[0][0] - (0.75 * a + 0.25 * b)).abs() < 1e-15);
        assert!((p.coords[0][1] - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn zero_map_is_degenerate() {
        let err = decode_softargmax(&HeatmapStack::from_raw(1, 4, vec![0.0; 16])).unwrap_err();
        assert!(err.to_string().contains("degenerate heatmap"));
    }

    #[test]
    fn heatmap_peak_and_symmetry_and_mass() {
        let r = 33;
        let p = Pose::new(vec![[10.0 / 32.0, 20.0 / 32.0], [0.5, 0.5]]);
        let s = render_heatmaps(&p, r, 0.3).unwrap();
        let m0 = s.map(0);
        let arg = (0..m0.len()).max_by(|&a, &b| m0[a].total_cmp(&m0[b])).unwrap();
        assert_eq!((arg % r, arg / r), (10, 20));
        let c = render_heatmaps(&p, r, DEFAULT_SIGMA).unwrap();
        let m = c.map(1);
        for y in 0..r {
            for x in 0..r {
                // 90° rotation about the center pixel
                let (rx, ry) = (r - 1 - y, x);
                assert!((m[y * r + x] - m[ry * r + rx]).abs() < 1e-12);
            }
        }
        let spec = PoseDistributionSpec::human_default();
        for seed in 0..20 {
            let h = render_heatmaps(&sample_pose(&spec, seed), 32, DEFAULT_SIGMA).unwrap();
            for j in 0..13 {
                assert!((h.map(j).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert!(render_heatmaps(&p, r, 0.0).is_err());
    }

    #[test]
    fn horizontal_bone_pixels() {
        let topo = chain(2);
        let pose = Pose::new(vec![[0.25, 0.5], [0.75, 0.5]]);
        let img = rasterize(&pose, &topo, 64, 64).unwrap();
        // oracle: round(0.25·63)=16, round(0.75·63)=47, round(0.5·63)=32
        let color = topo.colors()[0];
        let mut bone = Vec::new();
        for y in 0..64 {
            for x in 0..64 {
                let px = img.get(x, y);
                if px == color {
                    bone.push((x, y));
                } else if px != [0, 0, 0] {
                    assert_eq!(px, JOINT_COLOR);
                }
            }
        }
        let expect: Vec<(usize, usize)> = (16..=47).map(|x| (x, 32)).collect();
        assert_eq!(bone, expect);
    }

    #[test]
    fn coincident_joints_and_determinism() {
        let topo = chain(3);
        let pose = Pose::new(vec![[0.5, 0.5]; 3]);
        let img = rasterize(&pose, &topo, 16, 16).unwrap();
        let lit = img.pixels.chunks(3).filter(|p| *p != [0, 0, 0]).count();
        assert!(lit > 0 && lit <= 4);
        assert_eq!(img, rasterize(&pose, &topo, 16, 16).unwrap());
        assert!(rasterize(&pose, &topo, 7, 16).is_err());
    }

    #[test]
    fn every_bone_color_drawn() {
        let topo = human13();
        let spec = PoseDistributionSpec::human_default();
        for seed in 0..200 {
            let pose = sample_pose(&spec, seed);
            let img = rasterize(&pose, &topo, 64, 64).unwrap();
            let segs: Vec<Vec<(i64, i64)>> = topo
                .bones()
                .iter()
                .map(|&(p, c)| bresenham(to_pixel(pose.coords[p], 64, 64), to_pixel(pose.coords[c], 64, 64)))
                .collect();
            for (b, c) in topo.colors().iter().enumerate() {
                // a bone lying entirely under later bones is occluded, not lost
                let visible = segs[b].iter().any(|px| !segs[b + 1..].iter().any(|s| s.contains(px)));
                if visible {
                    assert!(img.pixels.chunks(3).any(|p| p == c), "seed {seed} lost color {c:?}");
                }
            }
        }
    }

    #[test]
    fn bresenham_octants() {
        for &(a, b) in &[((0, 0), (5, 2)), ((5, 2), (0, 0)), ((0, 0), (2, 7)), ((3, 3), (-4, 1))] {
            let pts = bresenham(a, b);
            assert_eq!(pts[0], a);
            assert_eq!(*pts.last().unwrap(), b);
            let n = (b.0 - a.0).abs().max((b.1 - a.1).abs()) as usize + 1;
            assert_eq!(pts.len(), n);
            for w in pts.windows(2) {
                assert!((w[0].0 - w[1].0).abs() <= 1 && (w[0].1 - w[1].1).abs() <= 1);
            }
        }
    }

    #[test]
    fn analytic_round_trip() {
        let spec = PoseDistributionSpec::human_default();
        let r = 32;
        let tol = 0.5 / r as f64;
        for seed in 0..50 {
            let y = sample_pose(&spec, seed);
            let (yhat, _) =
                roundtrip_filter(&render_heatmaps(&y, r, DEFAULT_SIGMA).unwrap(), &human13(), 64, 64).unwrap();
            for (a, b) in y.coords.iter().zip(&yhat.coords) {
                assert!((a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol);
            }
            // second pass stays within the same tolerance
            let (y2, _) =
                roundtrip_filter(&render_heatmaps(&yhat, r, DEFAULT_SIGMA).unwrap(), &human13(), 64, 64).unwrap();
            for (a, b) in yhat.coords.iter().zip(&y2.coords) {
                assert!((a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol);
            }
        }
    }

    #[test]
    fn noise_biases_toward_center_linearly() {
        let spec = PoseDistributionSpec::human_default();
        let y = sample_pose(&spec, 3);
        let clean = render_heatmaps(&y, 32, DEFAULT_SIGMA).unwrap();
        let noisy = clean.mix(&HeatmapStack::uniform(13, 32), 0.9);
        let a = decode_softargmax(&clean).unwrap();
        let b = decode_softargmax(&noisy).unwrap();
        for (p, q) in a.coords.iter().zip(&b.coords) {
            for k in 0..2 {
                assert!((q[k] - (p[k] + 0.1 * (0.5 - p[k]))).abs() < 1e-12);
            }
        }
    }
}
