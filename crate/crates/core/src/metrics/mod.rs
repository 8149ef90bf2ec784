//! Distribution distances and keypoint accuracy.

mod embed;
mod report;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::pose::PoseSet;
use crate::rng;

pub use embed::{pca_embed, Embedding};
pub use report::{write_reports_csv, write_reports_json, MetricReport};

/// Pooled size above which the median heuristic subsamples.
pub const MEDIAN_EXACT_LIMIT: usize = 2000;
const MEDIAN_SUBSAMPLE_SEED: u64 = 0x6d65_6469_616e;
/// Ridge added to both covariances before the matrix square root.
pub const FD_RIDGE: f64 = 1e-9;
const FD_NEG_TOL: f64 = 1e-10;

/// `n × d` samples, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "sample matrix {rows}×{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sample matrix has non-finite entries"));
        }
        Ok(SampleMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged sample rows"));
        }
        SampleMatrix::new(rows.len(), cols, rows.concat())
    }

    /// Flattened keypoint coordinates, `d = 2M`.
    pub fn from_poses(set: &PoseSet) -> Result<Self> {
        let cols = 2 * set.topology.joint_count();
        let data: Vec<f64> = set.poses.iter().flat_map(|p| p.flatten()).collect();
        SampleMatrix::new(set.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Adds `shift` to every row.
    pub fn translated(&self, shift: &[f64]) -> SampleMatrix {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols) {
            for (v, s) in row.iter_mut().zip(shift) {
                *v += s;
            }
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean RBF kernel value over ordered pairs `i ≠ j` within one set.
fn within_mean(x: &SampleMatrix, gamma: f64) -> f64 {
    let n = x.rows;
    let mut total = 0.0;
    for i in 0..n {
        let xi = x.row(i);
        let mut row = 0.0;
        for j in i + 1..n {
            row += (-gamma * sq_dist(xi, x.row(j))).exp();
        }
        total += row;
    }
    2.0 * total / (n * (n - 1)) as f64
}

fn cross_mean(x: &SampleMatrix, y: &SampleMatrix, gamma: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..x.rows {
        let xi = x.row(i);
        let mut row = 0.0;
        for j in 0..y.rows {
            row += (-gamma * sq_dist(xi, y.row(j))).exp();
        }
        total += row;
    }
    total / (x.rows * y.rows) as f64
}

fn check_pair(x: &SampleMatrix, y: &SampleMatrix) -> Result<()> {
    if x.cols != y.cols {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {} columns",
            x.cols, y.cols
        )));
    }
    Ok(())
}

/// Unbiased MMD² with kernel `exp(−‖a−b‖²/(2σ²))`. Can be slightly negative.
///
/// Bit-identical inputs are one sample passed twice; the paired
/// U-statistic excludes `i = j` cross pairs and is then exactly zero.
pub fn mmd2(x: &SampleMatrix, y: &SampleMatrix, sigma: f64) -> Result<f64> {
    if x.rows < 2 || y.rows < 2 {
        return Err(Error::invalid("unbiased MMD needs ≥ 2 samples"));
    }
    check_pair(x, y)?;
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {sigma}")));
    }
    if x == y {
        return Ok(0.0);
    }
    let gamma = 1.0 / (2.0 * sigma * sigma);
    // sum the cross term in a canonical argument order so that swapping
    // x and y gives a bit-identical result
    let (kxx, kyy) = (within_mean(x, gamma), within_mean(y, gamma));
    let kxy = if x.rows < y.rows || (x.rows == y.rows && x.data <= y.data) {
        cross_mean(x, y, gamma)
    } else {
        cross_mean(y, x, gamma)
    };
    let (a, b) = if kxx <= kyy { (kxx, kyy) } else { (kyy, kxx) };
    Ok(a + b - 2.0 * kxy)
}

/// Sum of [`mmd2`] over several bandwidths.
pub fn mmd2_multi(x: &SampleMatrix, y: &SampleMatrix, sigmas: &[f64]) -> Result<f64> {
    sigmas.iter().map(|&s| mmd2(x, y, s)).sum()
}

/// Median pairwise Euclidean distance of the pooled rows divided by √2, so
/// the kernel at the median distance is `e^{−1}`. Pools above
/// [`MEDIAN_EXACT_LIMIT`] rows are subsampled with a fixed seed.
pub fn median_bandwidth(x: &SampleMatrix, y: &SampleMatrix) -> Result<f64> {
    check_pair(x, y)?;
    let total = x.rows + y.rows;
    if total < 2 {
        return Err(Error::invalid("median heuristic needs at least two points"));
    }
    let pooled: Vec<&[f64]> = (0..x.rows).map(|i| x.row(i)).chain((0..y.rows).map(|i| y.row(i))).collect();
    let rows: Vec<&[f64]> = if total <= MEDIAN_EXACT_LIMIT {
        pooled
    } else {
        let mut r = rng::seeded(MEDIAN_SUBSAMPLE_SEED);
        let mut idx = sample(&mut r, total, MEDIAN_EXACT_LIMIT).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pooled[i]).collect()
    };
    let mut d = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    let med = median(&mut d);
    if !(med > 0.0) {
        return Err(Error::Numerical("zero median distance".into()));
    }
    Ok(med / std::f64::consts::SQRT_2)
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, &mut hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::MIN, f64::max);
        0.5 * (lo + hi)
    }
}

fn mean_cov(x: &SampleMatrix) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (x.rows, x.cols);
    let m = DMatrix::from_row_slice(n, d, &x.data);
    let mu = DVector::from_iterator(d, (0..d).map(|j| m.column(j).mean()));
    let mut c = m;
    for mut row in c.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = c.transpose() * &c / (n as f64 - 1.0);
    (mu, cov)
}

fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = SymmetricEigen::new(a.clone());
    let mut vals = e.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -FD_NEG_TOL {
            return Err(Error::Numerical("covariance square root failed".into()));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose())
}

/// Fréchet distance between Gaussian fits (unbiased covariances, both
/// ridged by [`FD_RIDGE`]).
pub fn frechet_distance(x: &SampleMatrix, y: &SampleMatrix) -> Result<f64> {
    check_pair(x, y)?;
    if x.rows < 2 || y.rows < 2 {
        return Err(Error::invalid("Fréchet distance needs ≥ 2 samples per side"));
    }
    let (mx, mut sx) = mean_cov(x);
    let (my, mut sy) = mean_cov(y);
    let d = x.cols;
    sx += DMatrix::identity(d, d) * FD_RIDGE;
    sy += DMatrix::identity(d, d) * FD_RIDGE;
    frechet_from_moments(&mx, &sx, &my, &sy)
}

/// Fréchet distance between two Gaussians given exactly.
pub fn frechet_from_moments(
    mx: &DVector<f64>,
    sx: &DMatrix<f64>,
    my: &DVector<f64>,
    sy: &DMatrix<f64>,
) -> Result<f64> {
    let root = psd_sqrt(sx)?;
    let mut inner = &root * sy * &root;
    // symmetrize away rounding before the eigendecomposition
    inner = (&inner + inner.transpose()) * 0.5;
    let e = SymmetricEigen::new(inner);
    let mut tr_sqrt = 0.0;
    for &v in e.eigenvalues.iter() {
        if v < -FD_NEG_TOL {
            return Err(Error::Numerical("covariance square root failed".into()));
        }
        tr_sqrt += v.max(0.0).sqrt();
    }
    let diff = mx - my;
    Ok(diff.dot(&diff) + sx.trace() + sy.trace() - 2.0 * tr_sqrt)
}

fn check_aligned(pred: &PoseSet, gt: &PoseSet) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predictions vs {} ground-truth poses",
            pred.len(),
            gt.len()
        )));
    }
    if pred.topology.joint_count() != gt.topology.joint_count() {
        return Err(Error::invalid("prediction and ground truth use different topologies"));
    }
    Ok(())
}

fn joint_distances<'a>(pred: &'a PoseSet, gt: &'a PoseSet) -> impl Iterator<Item = f64> + 'a {
    pred.poses.iter().zip(&gt.poses).flat_map(|(p, g)| {
        p.coords
            .iter()
            .zip(&g.coords)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
    })
}

/// Fraction of joints within `rho` canvas widths of ground truth, ties
/// counted as correct.
pub fn pck(pred: &PoseSet, gt: &PoseSet, rho: f64) -> Result<f64> {
    check_aligned(pred, gt)?;
    if !(rho > 0.0) {
        return Err(Error::invalid(format!("PCK threshold must be positive, got {rho}")));
    }
    let (mut hit, mut n) = (0usize, 0usize);
    for d in joint_distances(pred, gt) {
        n += 1;
        if d <= rho {
            hit += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("PCK of empty sets is undefined"));
    }
    Ok(hit as f64 / n as f64)
}

/// Mean squared Euclidean joint distance in pixels of a `canvas_px` canvas.
pub fn mse(pred: &PoseSet, gt: &PoseSet, canvas_px: usize) -> Result<f64> {
    check_aligned(pred, gt)?;
    if canvas_px < 2 {
        return Err(Error::invalid("canvas must be at least 2 pixels"));
    }
    let s = (canvas_px - 1) as f64;
    let (mut total, mut n) = (0.0, 0usize);
    for d in joint_distances(pred, gt) {
        total += (d * s).powi(2);
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("MSE of empty sets is undefined"));
    }
    Ok(total / n as f64)
}

/// Mean Euclidean joint distance in pixels of a `canvas_px` canvas.
pub fn mean_joint_error_px(pred: &PoseSet, gt: &PoseSet, canvas_px: usize) -> Result<f64> {
    check_aligned(pred, gt)?;
    let s = (canvas_px.max(2) - 1) as f64;
    let (mut total, mut n) = (0.0, 0usize);
    for d in joint_distances(pred, gt) {
        total += d * s;
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("error of empty sets is undefined"));
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{chain, Pose};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn m(rows: &[&[f64]]) -> SampleMatrix {
        SampleMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn naive_mmd2(x: &SampleMatrix, y: &SampleMatrix, sigma: f64) -> f64 {
        let k = |a: &[f64], b: &[f64]| (-sq_dist(a, b) / (2.0 * sigma * sigma)).exp();
        let (n, p) = (x.rows(), y.rows());
        let mut xx = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    xx += k(x.row(i), x.row(j));
                }
            }
        }
        let mut yy = 0.0;
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    yy += k(y.row(i), y.row(j));
                }
            }
        }
        let mut xy = 0.0;
        for i in 0..n {
            for j in 0..p {
                xy += k(x.row(i), y.row(j));
            }
        }
        xx / (n * (n - 1)) as f64 + yy / (p * (p - 1)) as f64 - 2.0 * xy / (n * p) as f64
    }

    fn randm(n: usize, d: usize, seed: u64) -> SampleMatrix {
        let mut r = rng::seeded(seed);
        SampleMatrix::new(n, d, (0..n * d).map(|_| r.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn mmd_hand_cases() {
        let a = m(&[&[0.3, 0.1], &[0.3, 0.1]]);
        assert_eq!(mmd2(&a, &a, 0.7).unwrap(), 0.0);
        let x = m(&[&[0.0], &[0.0]]);
        let y = m(&[&[1.0], &[1.0]]);
        let v = mmd2(&x, &y, 1.0).unwrap();
        assert!((v - (2.0 - 2.0 * (-0.5f64).exp())).abs() < 1e-12);
        assert!((v - 0.78694).abs() < 1e-5);
        let err = mmd2(&m(&[&[0.0]]), &y, 1.0).unwrap_err().to_string();
        assert!(err.contains("unbiased MMD needs ≥ 2 samples"));
    }

    #[test]
    fn mmd_matches_naive_and_is_symmetric() {
        for seed in 0..5 {
            let x = randm(100, 26, seed);
            let y = randm(80, 26, seed + 100).translated(&[0.1; 26]);
            let v = mmd2(&x, &y, 0.9).unwrap();
            assert!((v - naive_mmd2(&x, &y, 0.9)).abs() < 1e-12);
            assert_eq!(v, mmd2(&y, &x, 0.9).unwrap());
            let shift = [0.37; 26];
            let t = mmd2(&x.translated(&shift), &y.translated(&shift), 0.9).unwrap();
            assert!((t - v).abs() < 1e-12);
        }
    }

    #[test]
    fn same_sample_twice_is_zero() {
        let x = randm(30, 4, 9);
        assert_eq!(mmd2(&x, &x, 0.5).unwrap(), 0.0);
        // a copy that differs in one entry goes through the estimator
        let mut d = x.data().to_vec();
        d[0] += 1e-3;
        let y = SampleMatrix::new(30, 4, d).unwrap();
        assert!(mmd2(&x, &y, 0.5).unwrap() < 0.0);
    }

    #[test]
    fn median_heuristic_cases() {
        let s = median_bandwidth(&m(&[&[0.0, 0.0]]), &m(&[&[3.0, 4.0]])).unwrap();
        assert!((s - 5.0 / 2f64.sqrt()).abs() < 1e-15);
        let s = median_bandwidth(&m(&[&[0.0], &[1.0]]), &m(&[&[2.0]])).unwrap();
        assert!((s - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let even = median_bandwidth(&m(&[&[0.0], &[1.0]]), &m(&[&[3.0], &[7.0]])).unwrap();
        // distances 1,3,7,2,6,4 → median (3 + 4)/2
        assert!((even - 3.5 / 2f64.sqrt()).abs() < 1e-15);
        let z = median_bandwidth(&m(&[&[1.0], &[1.0]]), &m(&[&[1.0]])).unwrap_err();
        assert!(z.to_string().contains("zero median distance"));
        let x = randm(30, 3, 1);
        let y = randm(20, 3, 2);
        let mut rows: Vec<Vec<f64>> = (0..30).map(|i| x.row(i).to_vec()).collect();
        rows.reverse();
        let xr = SampleMatrix::from_rows(&rows).unwrap();
        assert_eq!(median_bandwidth(&x, &y).unwrap(), median_bandwidth(&xr, &y).unwrap());
        // large pools are subsampled deterministically
        let big = randm(1500, 2, 3);
        let a = median_bandwidth(&big, &randm(1500, 2, 4)).unwrap();
        assert_eq!(a, median_bandwidth(&big, &randm(1500, 2, 4)).unwrap());
    }

    fn gauss(n: usize, mean: &[f64], std: &[f64], seed: u64) -> SampleMatrix {
        let mut r = rng::seeded(seed);
        let d = mean.len();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            for k in 0..d {
                let e: f64 = StandardNormal.sample(&mut r);
                data.push(mean[k] + std[k] * e);
            }
        }
        SampleMatrix::new(n, d, data).unwrap()
    }

    #[test]
    fn fd_identity_and_gaussians() {
        let x = randm(200, 6, 1);
        assert!(frechet_distance(&x, &x).unwrap().abs() <= 1e-8);
        let a = gauss(20000, &[0.0], &[1.0], 1);
        let b = gauss(20000, &[3.0], &[1.0], 2);
        let fd = frechet_distance(&a, &b).unwrap();
        assert!((fd - 9.0).abs() < 0.45, "{fd}");
        let y = randm(150, 6, 2).translated(&[0.2; 6]);
        let f1 = frechet_distance(&x, &y).unwrap();
        assert!((f1 - frechet_distance(&y, &x).unwrap()).abs() < 1e-8);
        let sh = [1.5; 6];
        assert!((f1 - frechet_distance(&x.translated(&sh), &y.translated(&sh)).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn fd_diagonal_closed_form() {
        let mx = DVector::from_vec(vec![0.1, -0.4, 2.0]);
        let my = DVector::from_vec(vec![0.5, 0.3, 1.0]);
        let v = [0.3, 1.2, 4.0];
        let w = [0.8, 0.2, 4.0];
        let sx = DMatrix::from_diagonal(&DVector::from_vec(v.to_vec()));
        let sy = DMatrix::from_diagonal(&DVector::from_vec(w.to_vec()));
        let fd = frechet_from_moments(&mx, &sx, &my, &sy).unwrap();
        let oracle: f64 = (0..3)
            .map(|i| (mx[i] - my[i]).powi(2) + (v[i].sqrt() - w[i].sqrt()).powi(2))
            .sum();
        assert!((fd - oracle).abs() < 1e-12);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 1.0]));
        assert!(frechet_from_moments(&mx, &bad, &my, &sy)
            .unwrap_err()
            .to_string()
            .contains("covariance square root failed"));
        assert!(frechet_distance(&randm(10, 2, 1), &randm(10, 3, 1)).is_err());
    }

    fn set(coords: Vec<Vec<[f64; 2]>>) -> PoseSet {
        let m = coords[0].len();
        PoseSet::new(chain(m), coords.into_iter().map(Pose::new).collect()).unwrap()
    }

    #[test]
    fn pck_and_mse_cases() {
        let gt = set(vec![vec![[0.0, 0.0]; 3]]);
        let pred = set(vec![vec![[0.05, 0.0], [0.0, 0.2], [0.1, 0.0]]]);
        assert_eq!(pck(&gt, &gt, 0.01).unwrap(), 1.0);
        // the third joint sits exactly on the threshold and counts
        assert_eq!(pck(&pred, &gt, 0.1).unwrap(), 2.0 / 3.0);
        let near = set(vec![vec![[1.0, 1.0]; 3]]);
        assert_eq!(pck(&gt, &near, 1.0).unwrap(), 0.0);
        assert!(pck(&gt, &set(vec![vec![[0.0, 0.0]; 3]; 2]), 0.1).is_err());

        assert_eq!(mse(&gt, &gt, 64).unwrap(), 0.0);
        let off = [3.0 / 63.0, 4.0 / 63.0];
        // both joints displaced by (3, 4) px
        let one = set(vec![vec![off, off]]);
        let origin = set(vec![vec![[0.0, 0.0]; 2]]);
        assert!((mse(&one, &origin, 64).unwrap() - 25.0).abs() < 1e-12);
        let two = set(vec![vec![off, off], vec![[0.0, 0.0]; 2]]);
        let base = set(vec![vec![[0.0, 0.0]; 2]; 2]);
        assert!((mse(&two, &base, 64).unwrap() - 12.5).abs() < 1e-12);
        assert!(mse(&one, &base, 64).is_err());
    }
}
