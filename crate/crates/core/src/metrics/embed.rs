//! Deterministic 2D PCA embedding for scatter plots.

use std::fmt::Write as _;

use super::SampleMatrix;
use crate::error::{Error, Result};

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    /// `(label, [pc1, pc2])` for every input row, sets in input order.
    pub points: Vec<(String, [f64; 2])>,
    pub components: [Vec<f64>; 2],
    pub variances: [f64; 2],
    pub mean: Vec<f64>,
}

fn matvec(c: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d).map(|i| c[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest-magnitude entry made positive; ties go to the lowest index.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for u in against {
        let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
    }
}

/// Leading eigenvector by power iteration, restricted to the complement of
/// `found`. Returns `(vector, eigenvalue)`.
fn power(c: &[f64], d: usize, found: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 / d as f64).collect();
    orthogonalize(&mut v, found);
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mut w = matvec(c, d, &v);
        orthogonalize(&mut w, found);
        let n = norm(&w);
        if n < 1e-300 {
            // null space: any orthonormal completion has zero variance
            return (v, 0.0);
        }
        w.iter_mut().for_each(|x| *x /= n);
        let delta = norm(&w.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
        v = w;
        lambda = n;
        if delta < POWER_TOL {
            break;
        }
    }
    (v, lambda)
}

/// Pools the sets, centers, and projects onto the top two principal
/// directions.
pub fn pca_embed(sets: &[SampleMatrix], labels: &[&str]) -> Result<Embedding> {
    if sets.len() != labels.len() {
        return Err(Error::invalid("one label per sample set required"));
    }
    let d = sets.first().map_or(0, SampleMatrix::cols);
    if sets.iter().any(|s| s.cols() != d) {
        return Err(Error::invalid("sample sets differ in dimension"));
    }
    let n: usize = sets.iter().map(SampleMatrix::rows).sum();
    if n < 3 || d == 0 {
        return Err(Error::invalid("embedding needs at least 3 pooled samples"));
    }
    let mut mean = vec![0.0; d];
    for s in sets {
        for i in 0..s.rows() {
            mean.iter_mut().zip(s.row(i)).for_each(|(m, x)| *m += x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for s in sets {
        for i in 0..s.rows() {
            let c: Vec<f64> = s.row(i).iter().zip(&mean).map(|(x, m)| x - m).collect();
            for a in 0..d {
                for b in 0..d {
                    cov[a * d + b] += c[a] * c[b];
                }
            }
        }
    }
    cov.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    if cov.iter().all(|&v| v == 0.0) {
        return Err(Error::Numerical("rank-0 data has no principal directions".into()));
    }
    let (mut v1, l1) = power(&cov, d, &[]);
    fix_sign(&mut v1);
    let (mut v2, l2) = if d > 1 { power(&cov, d, std::slice::from_ref(&v1)) } else { (vec![0.0], 0.0) };
    fix_sign(&mut v2);
    let mut points = Vec::with_capacity(n);
    for (s, label) in sets.iter().zip(labels) {
        for i in 0..s.rows() {
            let c: Vec<f64> = s.row(i).iter().zip(&mean).map(|(x, m)| x - m).collect();
            let p1 = c.iter().zip(&v1).map(|(a, b)| a * b).sum();
            let p2 = c.iter().zip(&v2).map(|(a, b)| a * b).sum();
            points.push((label.to_string(), [p1, p2]));
        }
    }
    Ok(Embedding {
        points,
        components: [v1, v2],
        variances: [l1, l2],
        mean,
    })
}

impl Embedding {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,pc1,pc2\n");
        for (l, p) in &self.points {
            let _ = writeln!(s, "{l},{:.17e},{:.17e}", p[0], p[1]);
        }
        s
    }

    /// Scatter plot, one color per label in first-seen order.
    pub fn to_svg(&self, size: usize) -> String {
        const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
        let mut labels: Vec<&str> = Vec::new();
        for (l, _) in &self.points {
            if !labels.contains(&l.as_str()) {
                labels.push(l);
            }
        }
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for (_, p) in &self.points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let span = (0..2).map(|k| (hi[k] - lo[k]).max(1e-12)).fold(0.0, f64::max);
        let pad = 0.05 * size as f64;
        let scale = (size as f64 - 2.0 * pad) / span;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
        );
        let _ = writeln!(s, r#"<rect width="{size}" height="{size}" fill="white"/>"#);
        for (l, p) in &self.points {
            let color = PALETTE[labels.iter().position(|x| x == l).unwrap_or(0) % PALETTE.len()];
            let x = pad + (p[0] - lo[0]) * scale;
            let y = size as f64 - pad - (p[1] - lo[1]) * scale;
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="{color}" fill-opacity="0.6"/>"#);
        }
        for (i, l) in labels.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{pad}" y="{}" font-size="12" fill="{}">{l}</text>"#,
                pad + 14.0 * (i + 1) as f64,
                PALETTE[i % PALETTE.len()]
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    #[test]
    fn planar_data_is_rigidly_mapped() {
        let mut r = rng::seeded(1);
        let mut rows: Vec<Vec<f64>> = (0..50).map(|_| vec![r.gen::<f64>() * 3.0, r.gen::<f64>()]).collect();
        let mean: Vec<f64> = (0..2).map(|k| rows.iter().map(|x| x[k]).sum::<f64>() / 50.0).collect();
        for row in &mut rows {
            row[0] -= mean[0];
            row[1] -= mean[1];
        }
        let x = SampleMatrix::from_rows(&rows).unwrap();
        let e = pca_embed(&[x], &["a"]).unwrap();
        for i in 0..50 {
            for j in 0..50 {
                let d0 = dist([rows[i][0], rows[i][1]], [rows[j][0], rows[j][1]]);
                assert!((d0 - dist(e.points[i].1, e.points[j].1)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn line_data_has_no_second_variance() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64), 0.5]).collect();
        let e = pca_embed(&[SampleMatrix::from_rows(&rows).unwrap()], &["line"]).unwrap();
        assert!(e.variances[1].abs() < 1e-9);
        assert!(e.points.iter().all(|(_, p)| p[1].abs() < 1e-9));
    }

    #[test]
    fn sign_rule() {
        let mut r = rng::seeded(5);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|k| r.gen::<f64>() * (k + 1) as f64).collect()).collect();
        let neg: Vec<Vec<f64>> = rows.iter().map(|row| row.iter().map(|v| -v).collect()).collect();
        let a = pca_embed(&[SampleMatrix::from_rows(&rows).unwrap()], &["x"]).unwrap();
        let b = pca_embed(&[SampleMatrix::from_rows(&neg).unwrap()], &["x"]).unwrap();
        for c in &a.components {
            let big = c.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(big > 0.0);
        }
        // same directions, so every projection flips sign
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((p.1[0] + q.1[0]).abs() < 1e-8 && (p.1[1] + q.1[1]).abs() < 1e-8);
        }
        assert!(a.to_csv().lines().count() == 31);
        assert!(a.to_svg(200).contains("<circle"));
    }

    #[test]
    fn rank_zero_fails() {
        let rows = vec![vec![1.0, 2.0]; 4];
        assert!(pca_embed(&[SampleMatrix::from_rows(&rows).unwrap()], &["c"]).is_err());
    }
}
