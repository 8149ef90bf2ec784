//! PNG and SVG output for stick figures.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{to_pixel, RasterImage};
use crate::error::{Error, Result};
use crate::pose::{Pose, SkeletonTopology};

pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        w.write_image_data(&img.pixels)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(out)
}

pub fn save_png(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_png(img)?)?;
    Ok(())
}

/// Bones as colored `<line>` elements and joints as white squares, in the
/// same pixel frame as [`super::rasterize`].
pub fn svg_string(pose: &Pose, topo: &SkeletonTopology, width: usize, height: usize) -> String {
    let px: Vec<(i64, i64)> = pose
        .coords
        .iter()
        .map(|c| to_pixel([c[0].clamp(0.0, 1.0), c[1].clamp(0.0, 1.0)], width, height))
        .collect();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="black"/>"#);
    for &(x, y) in &px {
        let _ = writeln!(s, r#"<rect x="{x}" y="{y}" width="2" height="2" fill="white"/>"#);
    }
    for (&(p, c), rgb) in topo.bones().iter().zip(topo.colors()) {
        let (a, b) = (px[p], px[c]);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="rgb({},{},{})" stroke-width="1"/>"#,
            a.0 as f64 + 0.5,
            a.1 as f64 + 0.5,
            b.0 as f64 + 0.5,
            b.1 as f64 + 0.5,
            rgb[0],
            rgb[1],
            rgb[2]
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn save_svg(
    pose: &Pose,
    topo: &SkeletonTopology,
    width: usize,
    height: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(path, svg_string(pose, topo, width, height))?;
    Ok(())
}
