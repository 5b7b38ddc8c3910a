//! Natural Image Quality Evaluator.
//!
//! Mean-subtracted contrast-normalized (MSCN) coefficients are computed on the
//! rounded 8-bit luma plane, asymmetric generalized Gaussian (AGGD) fits give 18
//! features per block per scale, and the score is the Mahalanobis-type distance
//! between the block-feature Gaussian and a pristine Gaussian loaded from a
//! model file.

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{MetricScore, NIQE};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::resize;

const DEFAULT_MODEL: &str = include_str!("../../data/niqe_pristine.json");
const FEATURES_PER_SCALE: usize = 18;

/// Pristine multivariate-Gaussian model and analysis configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NiqeModel {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub source: String,
    pub block_size: usize,
    pub scales: usize,
    pub window_size: usize,
    pub window_sigma: f64,
    pub mscn_c: f64,
    pub dim: usize,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl NiqeModel {
    /// The shipped model (96x96 blocks, two scales, 7x7 window with sigma 7/6).
    pub fn pristine() -> &'static NiqeModel {
        static MODEL: OnceLock<NiqeModel> = OnceLock::new();
        MODEL.get_or_init(|| {
            let m: NiqeModel = serde_json::from_str(DEFAULT_MODEL).expect("embedded NIQE model parses");
            m.validate().expect("embedded NIQE model is consistent");
            m
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: NiqeModel = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    /// Copy of the model analysing blocks of a different size. The pristine
    /// statistics are kept; they were fitted on the original block size.
    pub fn with_block_size(&self, block_size: usize) -> Result<Self> {
        let mut m = self.clone();
        m.block_size = block_size;
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::Config(format!("NIQE model: {s}")));
        if self.format != "niqe-mvg" {
            return bad(format!("unknown format `{}`", self.format));
        }
        if self.dim != self.scales * FEATURES_PER_SCALE {
            return bad(format!("dim {} != {} scales x {FEATURES_PER_SCALE}", self.dim, self.scales));
        }
        if self.mean.len() != self.dim || self.covariance.len() != self.dim {
            return bad("mean/covariance size does not match dim".into());
        }
        if self.covariance.iter().any(|r| r.len() != self.dim) {
            return bad("covariance is not square".into());
        }
        if self.scales == 0 || self.block_size >> (self.scales - 1) < 2 {
            return bad(format!("block size {} too small for {} scales", self.block_size, self.scales));
        }
        if self.window_size % 2 == 0 || self.window_sigma <= 0.0 {
            return bad("window must have odd size and positive sigma".into());
        }
        Ok(())
    }

    /// Smallest accepted image side: two blocks per axis.
    pub fn min_side(&self) -> usize {
        2 * self.block_size
    }

    fn window_1d(&self) -> Vec<f64> {
        let r = (self.window_size / 2) as isize;
        let s2 = 2.0 * self.window_sigma * self.window_sigma;
        let mut k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / s2).exp()).collect();
        let sum: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= sum);
        k
    }

    pub fn score(&self, img: &Image) -> Result<MetricScore> {
        let features = self.block_features(img)?;
        let value = self.distance(&features)?;
        Ok(MetricScore::new(NIQE, value, true))
    }

    /// Per-block feature vectors, blocks ordered column-major.
    pub fn block_features(&self, img: &Image) -> Result<Vec<Vec<f64>>> {
        let (h, w) = (img.height(), img.width());
        if img.min_side() < self.min_side() {
            return Err(Error::ImageTooSmall { height: h, width: w, min: self.min_side() });
        }
        let bs = self.block_size;
        let (nbh, nbw) = (h / bs, w / bs);
        let (ch, cw) = (nbh * bs, nbw * bs);
        let luma = img.luma_255();
        let mut plane: Vec<f64> = (0..ch)
            .flat_map(|y| luma[y * w..y * w + cw].iter().map(|v| v.round()))
            .collect();
        let (mut ph, mut pw) = (ch, cw);
        let window = self.window_1d();

        let nblocks = nbh * nbw;
        let mut features = vec![vec![0.0; self.dim]; nblocks];
        for scale in 0..self.scales {
            let mscn = mscn(&plane, ph, pw, &window, self.mscn_c);
            let sb = bs >> scale;
            let mut idx = 0;
            for bx in 0..nbw {
                for by in 0..nbh {
                    let block = extract_block(&mscn, pw, by * sb, bx * sb, sb);
                    let f = block_features(&block, sb, sb)?;
                    features[idx][scale * FEATURES_PER_SCALE..(scale + 1) * FEATURES_PER_SCALE].copy_from_slice(&f);
                    idx += 1;
                }
            }
            if scale + 1 < self.scales {
                let unit: Vec<f64> = plane.iter().map(|v| v / 255.0).collect();
                let (nh, nw) = resize::output_size(ph, pw, 0.5);
                plane = resize::imresize(&unit, ph, pw, 0.5).into_iter().map(|v| v * 255.0).collect();
                ph = nh;
                pw = nw;
            }
        }
        Ok(features)
    }

    fn distance(&self, features: &[Vec<f64>]) -> Result<f64> {
        let d = self.dim;
        let mut mean = vec![0.0; d];
        for (j, m) in mean.iter_mut().enumerate() {
            let vals: Vec<f64> = features.iter().map(|f| f[j]).filter(|v| !v.is_nan()).collect();
            if vals.is_empty() {
                return Err(Error::DegenerateStatistics(format!("feature {j} undefined on every block")));
            }
            *m = vals.iter().sum::<f64>() / vals.len() as f64;
        }
        let rows: Vec<&Vec<f64>> = features.iter().filter(|f| f.iter().all(|v| v.is_finite())).collect();
        if rows.len() < 2 {
            return Err(Error::DegenerateStatistics(format!(
                "{} block(s) with finite features, need 2 for a covariance",
                rows.len()
            )));
        }
        let n = rows.len();
        let col_mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for r in &rows {
            for i in 0..d {
                let di = r[i] - col_mean[i];
                for j in 0..d {
                    cov[(i, j)] += di * (r[j] - col_mean[j]);
                }
            }
        }
        cov /= (n - 1) as f64;
        let pristine = DMatrix::from_fn(d, d, |i, j| self.covariance[i][j]);
        let pooled = (pristine + cov) * 0.5;
        let inv = pinv(&pooled);
        let diff = DVector::from_fn(d, |i, _| self.mean[i] - mean[i]);
        let q = (diff.transpose() * inv * &diff)[(0, 0)];
        let value = q.max(0.0).sqrt();
        if !value.is_finite() {
            return Err(Error::DegenerateStatistics("non-finite distance".into()));
        }
        Ok(value)
    }
}

/// NIQE with the shipped pristine model.
pub fn niqe(img: &Image) -> Result<MetricScore> {
    NiqeModel::pristine().score(img)
}

/// Moore-Penrose inverse with a relative singular-value cutoff of 1e-15.
fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = 1e-15 * smax;
    let sinv = DMatrix::from_diagonal(&svd.singular_values.map(|s| if s > cutoff { 1.0 / s } else { 0.0 }));
    vt.transpose() * sinv * u.transpose()
}

/// MSCN coefficients with a separable Gaussian window and replicated borders.
fn mscn(plane: &[f64], h: usize, w: usize, window: &[f64], c: f64) -> Vec<f64> {
    let sq: Vec<f64> = plane.iter().map(|v| v * v).collect();
    let mu = filter_replicate(plane, h, w, window);
    let mu_sq = filter_replicate(&sq, h, w, window);
    plane
        .iter()
        .zip(mu.iter().zip(&mu_sq))
        .map(|(&x, (&m, &m2))| {
            let sigma = (m2 - m * m).abs().sqrt();
            (x - m) / (sigma + c)
        })
        .collect()
}

fn filter_replicate(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let (hi, wi) = (h as isize, w as isize);
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..wi {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let xx = (x + j as isize - r).clamp(0, wi - 1) as usize;
                acc += kv * row[xx];
            }
            tmp[y * w + x as usize] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..hi {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let yy = (y + j as isize - r).clamp(0, hi - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y as usize * w + x] = acc;
        }
    }
    out
}

fn extract_block(plane: &[f64], w: usize, top: usize, left: usize, size: usize) -> Vec<f64> {
    (top..top + size).flat_map(|y| plane[y * w + left..y * w + left + size].iter().copied()).collect()
}

/// 18 features: AGGD shape and mean scale of the coefficients, then
/// (shape, mean, left scale, right scale) for the four neighbour products.
fn block_features(block: &[f64], h: usize, w: usize) -> Result<[f64; FEATURES_PER_SCALE]> {
    let n = block.len() as f64;
    let mean = block.iter().sum::<f64>() / n;
    if block.iter().all(|&v| (v - mean).abs() == 0.0) {
        return Err(Error::DegenerateStatistics("analysis block has zero MSCN variance".into()));
    }
    let mut out = [0.0; FEATURES_PER_SCALE];
    let (alpha, bl, br) = aggd_fit(block);
    out[0] = alpha;
    out[1] = (bl + br) / 2.0;
    // (row shift, column shift) with cyclic wrap-around, as numpy `roll`.
    const SHIFTS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];
    let mut prod = vec![0.0; block.len()];
    for (k, &(dy, dx)) in SHIFTS.iter().enumerate() {
        for y in 0..h {
            let sy = (y as isize - dy).rem_euclid(h as isize) as usize;
            for x in 0..w {
                let sx = (x as isize - dx).rem_euclid(w as isize) as usize;
                prod[y * w + x] = block[y * w + x] * block[sy * w + sx];
            }
        }
        let (alpha, bl, br) = aggd_fit(&prod);
        let m = (br - bl) * (libm::tgamma(2.0 / alpha) / libm::tgamma(1.0 / alpha));
        out[2 + 4 * k..6 + 4 * k].copy_from_slice(&[alpha, m, bl, br]);
    }
    Ok(out)
}

struct ShapeTable {
    shapes: Vec<f64>,
    ratios: Vec<f64>,
}

fn shape_table() -> &'static ShapeTable {
    static TABLE: OnceLock<ShapeTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        // Shape grid 0.2, 0.201, ..., 10.0.
        let shapes: Vec<f64> = (0..9801).map(|i| 0.2 + i as f64 * 0.001).collect();
        let ratios = shapes
            .iter()
            .map(|&g| {
                let r = 1.0 / g;
                libm::tgamma(2.0 * r).powi(2) / (libm::tgamma(r) * libm::tgamma(3.0 * r))
            })
            .collect();
        ShapeTable { shapes, ratios }
    })
}

/// Moment-matching AGGD fit over a fixed shape grid: (shape, left scale, right scale).
/// Components are NaN when one side of the distribution is empty.
fn aggd_fit(v: &[f64]) -> (f64, f64, f64) {
    let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
    for &x in v {
        if x < 0.0 {
            ls += x * x;
            ln += 1;
        } else if x > 0.0 {
            rs += x * x;
            rn += 1;
        }
        abs_sum += x.abs();
        sq_sum += x * x;
    }
    let n = v.len() as f64;
    let left_std = (ls / ln as f64).sqrt();
    let right_std = (rs / rn as f64).sqrt();
    let gammahat = left_std / right_std;
    let rhat = (abs_sum / n).powi(2) / (sq_sum / n);
    let rhatnorm = rhat * (gammahat.powi(3) + 1.0) * (gammahat + 1.0) / (gammahat.powi(2) + 1.0).powi(2);

    let table = shape_table();
    let mut best = 0;
    let mut best_err = f64::INFINITY;
    for (i, &r) in table.ratios.iter().enumerate() {
        let e = (r - rhatnorm).powi(2);
        if e < best_err {
            best_err = e;
            best = i;
        }
    }
    if rhatnorm.is_nan() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let alpha = table.shapes[best];
    let s = (libm::tgamma(1.0 / alpha) / libm::tgamma(3.0 / alpha)).sqrt();
    (alpha, left_std * s, right_std * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn embedded_model_is_consistent() {
        let m = NiqeModel::pristine();
        assert_eq!(m.dim, 36);
        assert_eq!(m.block_size, 96);
        assert_eq!(m.min_side(), 192);
        for i in 0..m.dim {
            for j in 0..m.dim {
                assert!((m.covariance[i][j] - m.covariance[j][i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn window_matches_published_taps() {
        let k = NiqeModel::pristine().window_1d();
        let row: Vec<f64> = k.iter().map(|a| a * k[3]).collect();
        let expected = [0.00430352, 0.02700894, 0.08130511, 0.11739636];
        for (a, b) in row.iter().zip(expected) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_image_is_degenerate() {
        let img = Image::filled(256, 256, 3, 0.5).unwrap();
        assert!(matches!(niqe(&img), Err(Error::DegenerateStatistics(_))));
    }

    #[test]
    fn small_image_is_rejected() {
        let img = Image::filled(191, 300, 1, 0.5).unwrap();
        assert!(matches!(niqe(&img), Err(Error::ImageTooSmall { min: 192, .. })));
    }

    #[test]
    fn gaussian_samples_fit_shape_two() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 1.5).unwrap();
        let v: Vec<f64> = (0..200_000).map(|_| n.sample(&mut rng)).collect();
        let (alpha, bl, br) = aggd_fit(&v);
        assert!((alpha - 2.0).abs() < 0.05, "alpha {alpha}");
        assert!((bl - 1.5 * 2f64.sqrt()).abs() < 0.05, "bl {bl}");
        assert!((br - 1.5 * 2f64.sqrt()).abs() < 0.05, "br {br}");
    }

    #[test]
    fn pinv_inverts_well_conditioned_matrices() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let p = pinv(&m);
        let id = &m * &p;
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn block_size_override_changes_minimum() {
        let m = NiqeModel::pristine().with_block_size(48).unwrap();
        assert_eq!(m.min_side(), 96);
        assert!(NiqeModel::pristine().with_block_size(1).is_err());
    }
}
