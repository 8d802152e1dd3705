//! Image-space training losses and their gradients with respect to the
//! reconstruction.
//!
//! * MSE: mean squared difference.
//! * GV: Euclidean distance between patch-wise variance maps of Sobel
//!   gradients, summed over the x and y directions.
//! * GEE: L1 distance between Gaussian-high-pass-weighted 2D DFT magnitudes,
//!   divided by the pixel count.
//! * Hybrid: `mse + alpha * gee + beta * gv`.
//!
//! Non-smooth points take a zero subgradient: `|z| = 0` in the DFT magnitude,
//! equal weighted magnitudes in the L1 sum, and a zero variance-map difference
//! in the GV norm.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Plane;
use crate::spectral::{centered_index, dft2d, freq_grid, transform2d};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// GEE weight.
    pub alpha: f64,
    /// GV weight.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 10.0,
            beta: 20.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::invalid(format!(
                "loss weights must be non-negative, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Gaussian high-pass parameters in cycles per sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeeParams {
    pub kappa: f64,
    pub sigma: f64,
}

impl Default for GeeParams {
    fn default() -> Self {
        GeeParams {
            kappa: 0.1,
            sigma: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GvParams {
    pub patch: usize,
}

impl Default for GvParams {
    fn default() -> Self {
        GvParams { patch: 8 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub mse: f64,
    pub gee: f64,
    pub gv: f64,
}

fn check_same(rec: &Plane, gt: &Plane) -> Result<()> {
    if !rec.same_shape(gt) {
        return Err(Error::invalid(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            rec.height, rec.width, gt.height, gt.width
        )));
    }
    if rec.data.is_empty() {
        return Err(Error::invalid("empty images"));
    }
    Ok(())
}

pub fn mse(rec: &Plane, gt: &Plane) -> Result<f64> {
    check_same(rec, gt)?;
    let sum: f64 = rec.data.iter().zip(&gt.data).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(sum / rec.data.len() as f64)
}

fn mse_grad(rec: &Plane, gt: &Plane) -> Plane {
    let scale = 2.0 / rec.data.len() as f64;
    Plane {
        height: rec.height,
        width: rec.width,
        data: rec.data.iter().zip(&gt.data).map(|(a, b)| scale * (a - b)).collect(),
    }
}

/// Sobel x kernel, row-major, applied as a correlation.
const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

#[inline]
fn clamp_index(i: usize, d: isize, n: usize) -> usize {
    (i as isize + d).clamp(0, n as isize - 1) as usize
}

fn correlate_replicate(img: &Plane, kernel: &[[f64; 3]; 3]) -> Plane {
    let (h, w) = (img.height, img.width);
    let mut out = Plane::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (dr, krow) in kernel.iter().enumerate() {
                let rr = clamp_index(r, dr as isize - 1, h);
                for (dc, &k) in krow.iter().enumerate() {
                    if k != 0.0 {
                        acc += k * img.data[rr * w + clamp_index(c, dc as isize - 1, w)];
                    }
                }
            }
            out.data[r * w + c] = acc;
        }
    }
    out
}

/// Transpose of [`correlate_replicate`].
fn correlate_replicate_adjoint(upstream: &Plane, kernel: &[[f64; 3]; 3], out: &mut Plane) {
    let (h, w) = (upstream.height, upstream.width);
    for r in 0..h {
        for c in 0..w {
            let g = upstream.data[r * w + c];
            if g == 0.0 {
                continue;
            }
            for (dr, krow) in kernel.iter().enumerate() {
                let rr = clamp_index(r, dr as isize - 1, h);
                for (dc, &k) in krow.iter().enumerate() {
                    if k != 0.0 {
                        out.data[rr * w + clamp_index(c, dc as isize - 1, w)] += k * g;
                    }
                }
            }
        }
    }
}

/// Horizontal and vertical Sobel responses with replicated borders.
pub fn sobel_gradients(img: &Plane) -> Result<(Plane, Plane)> {
    if img.height < 3 || img.width < 3 {
        return Err(Error::invalid(format!(
            "Sobel needs at least 3x3 pixels, got {}x{}",
            img.height, img.width
        )));
    }
    Ok((correlate_replicate(img, &SOBEL_X), correlate_replicate(img, &SOBEL_Y)))
}

/// Unbiased variance (divisor `n² - 1`) of every non-overlapping `n x n`
/// patch; the result is `(h/n) x (w/n)`.
pub fn patch_variance_map(map: &Plane, n: usize) -> Result<Plane> {
    if n < 2 {
        return Err(Error::invalid(format!("patch size must be >= 2, got {n}")));
    }
    if map.height % n != 0 || map.width % n != 0 {
        return Err(Error::invalid(format!(
            "{}x{} map is not divisible into {n}x{n} patches",
            map.height, map.width
        )));
    }
    let (ph, pw) = (map.height / n, map.width / n);
    let count = (n * n) as f64;
    let mut out = Plane::zeros(ph, pw);
    for pr in 0..ph {
        for pc in 0..pw {
            let patch = || {
                (0..n).flat_map(move |i| (0..n).map(move |j| map.at(pr * n + i, pc * n + j)))
            };
            let mean = patch().sum::<f64>() / count;
            let var = patch().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
            out.data[pr * pw + pc] = var;
        }
    }
    Ok(out)
}

/// Gradient of `Σ_i u_i v_i` (patch variances `v`) with respect to `map`.
fn patch_variance_adjoint(map: &Plane, n: usize, upstream: &Plane) -> Plane {
    let pw = map.width / n;
    let count = (n * n) as f64;
    let mut out = Plane::zeros(map.height, map.width);
    for pr in 0..upstream.height {
        for pc in 0..upstream.width {
            let u = upstream.data[pr * pw + pc];
            if u == 0.0 {
                continue;
            }
            let mut mean = 0.0;
            for i in 0..n {
                for j in 0..n {
                    mean += map.at(pr * n + i, pc * n + j);
                }
            }
            mean /= count;
            for i in 0..n {
                for j in 0..n {
                    let (r, c) = (pr * n + i, pc * n + j);
                    out.data[r * map.width + c] = 2.0 * u * (map.at(r, c) - mean) / (count - 1.0);
                }
            }
        }
    }
    out
}

/// Centered crop window `(row0, col0, h, w)` whose sides are multiples of `n`.
fn gv_crop(h: usize, w: usize, n: usize) -> (usize, usize, usize, usize) {
    let (ch, cw) = (h - h % n, w - w % n);
    ((h - ch) / 2, (w - cw) / 2, ch, cw)
}

fn crop(p: &Plane, (r0, c0, h, w): (usize, usize, usize, usize)) -> Plane {
    let mut out = Plane::zeros(h, w);
    for r in 0..h {
        out.data[r * w..(r + 1) * w].copy_from_slice(&p.data[(r0 + r) * p.width + c0..][..w]);
    }
    out
}

fn uncrop(p: &Plane, (r0, c0, _, _): (usize, usize, usize, usize), h: usize, w: usize) -> Plane {
    let mut out = Plane::zeros(h, w);
    for r in 0..p.height {
        out.data[(r0 + r) * w + c0..][..p.width].copy_from_slice(&p.data[r * p.width..][..p.width]);
    }
    out
}

struct GvTerms {
    loss: f64,
    /// Per direction: gradient map of the reconstruction, its variance map
    /// and the variance-map difference.
    parts: Vec<(Plane, Plane, Plane)>,
}

fn gv_terms(rec: &Plane, gt: &Plane, params: &GvParams) -> Result<GvTerms> {
    check_same(rec, gt)?;
    let n = params.patch;
    if n < 2 {
        return Err(Error::invalid(format!("patch size must be >= 2, got {n}")));
    }
    if rec.height < n || rec.width < n {
        return Err(Error::invalid(format!(
            "{}x{} image is smaller than one {n}x{n} patch",
            rec.height, rec.width
        )));
    }
    let window = gv_crop(rec.height, rec.width, n);
    let (rx, ry) = sobel_gradients(rec)?;
    let (gx, gy) = sobel_gradients(gt)?;
    let mut loss = 0.0;
    let mut parts = Vec::with_capacity(2);
    for (r, g) in [(rx, gx), (ry, gy)] {
        let r = crop(&r, window);
        let vr = patch_variance_map(&r, n)?;
        let vg = patch_variance_map(&crop(&g, window), n)?;
        let diff = Plane {
            height: vr.height,
            width: vr.width,
            data: vr.data.iter().zip(&vg.data).map(|(a, b)| a - b).collect(),
        };
        loss += diff.data.iter().map(|d| d * d).sum::<f64>().sqrt();
        parts.push((r, vr, diff));
    }
    Ok(GvTerms { loss, parts })
}

/// Images whose sides are not multiples of the patch size are center-cropped
/// after the Sobel filter.
pub fn gv_loss(rec: &Plane, gt: &Plane, params: &GvParams) -> Result<f64> {
    Ok(gv_terms(rec, gt, params)?.loss)
}

fn gv_grad(rec: &Plane, terms: &GvTerms, params: &GvParams) -> Plane {
    let n = params.patch;
    let window = gv_crop(rec.height, rec.width, n);
    let mut out = Plane::zeros(rec.height, rec.width);
    for ((map, _, diff), kernel) in terms.parts.iter().zip([&SOBEL_X, &SOBEL_Y]) {
        let norm = diff.data.iter().map(|d| d * d).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let upstream = Plane {
            height: diff.height,
            width: diff.width,
            data: diff.data.iter().map(|d| d / norm).collect(),
        };
        let d_map = patch_variance_adjoint(map, n, &upstream);
        let d_full = uncrop(&d_map, window, rec.height, rec.width);
        correlate_replicate_adjoint(&d_full, kernel, &mut out);
    }
    out
}

/// `W = 1 - exp(-(|f| - kappa)² / (2 sigma²))` on the centered frequency grid.
pub fn gaussian_highpass_weights(height: usize, width: usize, params: &GeeParams) -> Result<Plane> {
    if !(params.sigma > 0.0) || !params.sigma.is_finite() {
        return Err(Error::invalid(format!("GEE sigma must be positive, got {}", params.sigma)));
    }
    if !(params.kappa >= 0.0) || !params.kappa.is_finite() {
        return Err(Error::invalid(format!("GEE kappa must be non-negative, got {}", params.kappa)));
    }
    let grid = freq_grid(height, width)?;
    let mut out = Plane::zeros(height, width);
    for r in 0..height {
        for c in 0..width {
            let d = grid.radius(r, c) - params.kappa;
            out.data[r * width + c] = 1.0 - (-d * d / (2.0 * params.sigma * params.sigma)).exp();
        }
    }
    Ok(out)
}

/// High-pass weights rearranged into natural DFT bin order.
pub fn natural_order_weights(height: usize, width: usize, params: &GeeParams) -> Result<Vec<f64>> {
    let centered = gaussian_highpass_weights(height, width, params)?;
    let mut out = vec![0.0; height * width];
    for r in 0..height {
        for c in 0..width {
            out[r * width + c] = centered.at(centered_index(r, height), centered_index(c, width));
        }
    }
    Ok(out)
}

struct GeeTerms {
    loss: f64,
    rec_spec: Vec<Complex64>,
    gt_mag: Vec<f64>,
}

fn gee_terms(rec: &Plane, gt: &Plane, weights: &[f64]) -> Result<GeeTerms> {
    check_same(rec, gt)?;
    let rec_spec = dft2d(rec)?;
    let gt_mag: Vec<f64> = dft2d(gt)?.iter().map(|z| z.norm()).collect();
    let sum: f64 = rec_spec
        .iter()
        .zip(&gt_mag)
        .zip(weights)
        .map(|((z, &m), &w)| (w * z.norm() - w * m).abs())
        .sum();
    Ok(GeeTerms {
        loss: sum / rec.data.len() as f64,
        rec_spec,
        gt_mag,
    })
}

/// Mean over bins of `|W |F(rec)| - W |F(gt)||`.
pub fn gee_loss(rec: &Plane, gt: &Plane, params: &GeeParams) -> Result<f64> {
    check_same(rec, gt)?;
    let weights = natural_order_weights(rec.height, rec.width, params)?;
    Ok(gee_terms(rec, gt, &weights)?.loss)
}

fn gee_grad(rec: &Plane, terms: &GeeTerms, weights: &[f64]) -> Result<Plane> {
    let scale = 1.0 / rec.data.len() as f64;
    let mut g: Vec<Complex64> = terms
        .rec_spec
        .iter()
        .zip(&terms.gt_mag)
        .zip(weights)
        .map(|((z, &m), &w)| {
            let mag = z.norm();
            let diff = w * mag - w * m;
            if mag == 0.0 || diff == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                *z * (scale * w * diff.signum() / mag)
            }
        })
        .collect();
    // d/dx_p Re/Im parts of Σ_k x_p e^{-iθ} pair with the unnormalized inverse.
    transform2d(&mut g, rec.height, rec.width, true)?;
    Ok(Plane {
        height: rec.height,
        width: rec.width,
        data: g.iter().map(|z| z.re).collect(),
    })
}

pub fn hybrid_loss(
    rec: &Plane,
    gt: &Plane,
    weights: &LossWeights,
    gee: &GeeParams,
    gv: &GvParams,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let m = mse(rec, gt)?;
    let e = gee_loss(rec, gt, gee)?;
    let v = gv_loss(rec, gt, gv)?;
    Ok(LossBreakdown {
        total: m + weights.alpha * e + weights.beta * v,
        mse: m,
        gee: e,
        gv: v,
    })
}

/// Per-component gradients with respect to the reconstruction.
#[derive(Clone, Debug)]
pub struct LossGradients {
    pub breakdown: LossBreakdown,
    pub mse: Plane,
    pub gee: Plane,
    pub gv: Plane,
}

impl LossGradients {
    /// `d mse + alpha d gee + beta d gv`.
    pub fn total(&self, weights: &LossWeights) -> Plane {
        Plane {
            height: self.mse.height,
            width: self.mse.width,
            data: (0..self.mse.data.len())
                .map(|i| {
                    self.mse.data[i] + weights.alpha * self.gee.data[i] + weights.beta * self.gv.data[i]
                })
                .collect(),
        }
    }
}

/// Precomputed state for repeated hybrid loss evaluation at one image size.
#[derive(Clone, Debug)]
pub struct HybridLoss {
    pub weights: LossWeights,
    pub gee: GeeParams,
    pub gv: GvParams,
    height: usize,
    width: usize,
    gee_weights: Vec<f64>,
}

impl HybridLoss {
    pub fn new(
        height: usize,
        width: usize,
        weights: LossWeights,
        gee: GeeParams,
        gv: GvParams,
    ) -> Result<Self> {
        weights.validate()?;
        Ok(HybridLoss {
            weights,
            gee,
            gv,
            height,
            width,
            gee_weights: natural_order_weights(height, width, &gee)?,
        })
    }

    fn check(&self, rec: &Plane) -> Result<()> {
        if rec.height != self.height || rec.width != self.width {
            return Err(Error::invalid(format!(
                "loss prepared for {}x{} images, got {}x{}",
                self.height, self.width, rec.height, rec.width
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, rec: &Plane, gt: &Plane) -> Result<LossBreakdown> {
        self.check(rec)?;
        let m = mse(rec, gt)?;
        let e = gee_terms(rec, gt, &self.gee_weights)?.loss;
        let v = gv_loss(rec, gt, &self.gv)?;
        Ok(LossBreakdown {
            total: m + self.weights.alpha * e + self.weights.beta * v,
            mse: m,
            gee: e,
            gv: v,
        })
    }

    pub fn evaluate_with_grad(&self, rec: &Plane, gt: &Plane) -> Result<LossGradients> {
        self.check(rec)?;
        let m = mse(rec, gt)?;
        let gee = gee_terms(rec, gt, &self.gee_weights)?;
        let gv = gv_terms(rec, gt, &self.gv)?;
        Ok(LossGradients {
            breakdown: LossBreakdown {
                total: m + self.weights.alpha * gee.loss + self.weights.beta * gv.loss,
                mse: m,
                gee: gee.loss,
                gv: gv.loss,
            },
            mse: mse_grad(rec, gt),
            gee: gee_grad(rec, &gee, &self.gee_weights)?,
            gv: gv_grad(rec, &gv, &self.gv),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::shepp_logan;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_plane(h: usize, w: usize, seed: u64) -> Plane {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        Plane::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn box_blur(p: &Plane, radius: usize) -> Plane {
        let (h, w) = (p.height, p.width);
        let mut out = Plane::zeros(h, w);
        let r = radius as isize;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        acc += p.at(clamp_index(y, dy, h), clamp_index(x, dx, w));
                    }
                }
                out.data[y * w + x] = acc / ((2 * r + 1) * (2 * r + 1)) as f64;
            }
        }
        out
    }

    fn phantom(size: usize) -> Plane {
        shepp_logan(size).unwrap().to_plane()
    }

    #[test]
    fn mse_examples() {
        let a = Plane::new(1, 2, vec![0.0, 0.0]).unwrap();
        let b = Plane::new(1, 2, vec![1.0, 3.0]).unwrap();
        assert_eq!(mse(&a, &b).unwrap(), 5.0);
        let x = random_plane(4, 4, 1);
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        let shifted = Plane::new(4, 4, x.data.iter().map(|v| v + 1.0).collect()).unwrap();
        assert!((mse(&shifted, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!(mse(&x, &random_plane(4, 5, 1)).is_err());
    }

    #[test]
    fn sobel_examples() {
        let c = Plane::new(5, 5, vec![3.0; 25]).unwrap();
        let (gx, gy) = sobel_gradients(&c).unwrap();
        assert!(gx.data.iter().chain(&gy.data).all(|&v| v == 0.0));

        let step = 0.5;
        let ramp = Plane::new(6, 6, (0..36).map(|i| (i % 6) as f64 * step).collect()).unwrap();
        let (gx, gy) = sobel_gradients(&ramp).unwrap();
        for r in 1..5 {
            for col in 1..5 {
                assert_eq!(gx.at(r, col), 8.0 * step);
                assert_eq!(gy.at(r, col), 0.0);
            }
        }
        assert!(sobel_gradients(&Plane::zeros(2, 5)).is_err());
    }

    #[test]
    fn sobel_transpose_relation() {
        let x = random_plane(7, 5, 3);
        let mut xt = Plane::zeros(5, 7);
        for r in 0..7 {
            for c in 0..5 {
                xt.data[c * 7 + r] = x.at(r, c);
            }
        }
        let (gx_t, _) = sobel_gradients(&xt).unwrap();
        let (_, gy) = sobel_gradients(&x).unwrap();
        for r in 0..7 {
            for c in 0..5 {
                assert!((gx_t.at(c, r) - gy.at(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn patch_variance_examples() {
        let p = Plane::new(2, 2, vec![0.0, 0.0, 0.0, 2.0]).unwrap();
        let v = patch_variance_map(&p, 2).unwrap();
        assert!((v.data[0] - 1.0).abs() < 1e-15);
        let c = Plane::new(4, 4, vec![7.0; 16]).unwrap();
        assert!(patch_variance_map(&c, 2).unwrap().data.iter().all(|&v| v == 0.0));
        let m = patch_variance_map(&random_plane(8, 12, 2), 4).unwrap();
        assert_eq!((m.height, m.width), (2, 3));
        assert!(patch_variance_map(&random_plane(6, 6, 2), 4).is_err());
        assert!(patch_variance_map(&random_plane(6, 6, 2), 1).is_err());
    }

    #[test]
    fn gv_properties() {
        let params = GvParams { patch: 4 };
        let gt = phantom(32);
        assert_eq!(gv_loss(&gt, &gt, &params).unwrap(), 0.0);
        let offset = Plane::new(32, 32, gt.data.iter().map(|v| v + 0.7).collect()).unwrap();
        assert!(gv_loss(&offset, &gt, &params).unwrap() < 1e-10);
        let blurred = box_blur(&gt, 1);
        assert!(gv_loss(&blurred, &gt, &params).unwrap() > 0.0);
        // 30 is not a multiple of 4: cropped to 28.
        let odd = phantom(30);
        assert!(gv_loss(&box_blur(&odd, 1), &odd, &params).unwrap() > 0.0);
    }

    #[test]
    fn highpass_weights() {
        let p = GeeParams { kappa: 0.25, sigma: 0.1 };
        let w = gaussian_highpass_weights(8, 8, &p).unwrap();
        // Centered grid: (row 4, col 6) has f = (0.25, 0).
        assert!(w.at(4, 6).abs() < 1e-15);
        assert!(w.data.iter().all(|&v| (0.0..=1.0).contains(&v)));

        let p0 = GeeParams { kappa: 0.0, sigma: 0.01 };
        let w = gaussian_highpass_weights(9, 9, &p0).unwrap();
        assert_eq!(w.at(4, 4), 0.0);
        assert!(w.at(0, 0) > 1.0 - 1e-12);
        for r in 0..9 {
            for c in 0..9 {
                assert_eq!(w.at(r, c), w.at(8 - r, 8 - c));
            }
        }
        assert!(gaussian_highpass_weights(4, 4, &GeeParams { kappa: 0.1, sigma: 0.0 }).is_err());
    }

    #[test]
    fn gee_properties() {
        let params = GeeParams::default();
        let gt = phantom(32);
        assert_eq!(gee_loss(&gt, &gt, &params).unwrap(), 0.0);
        let mut shifted = Plane::zeros(32, 32);
        for r in 0..32 {
            for c in 0..32 {
                shifted.data[((r + 5) % 32) * 32 + (c + 11) % 32] = gt.at(r, c);
            }
        }
        assert!(gee_loss(&shifted, &gt, &params).unwrap() < 1e-10);
        let mild = gee_loss(&box_blur(&gt, 1), &gt, &params).unwrap();
        let strong = gee_loss(&box_blur(&gt, 2), &gt, &params).unwrap();
        assert!(mild > 0.0);
        assert!(strong > mild, "strong {strong} mild {mild}");
    }

    #[test]
    fn hybrid_identities() {
        let (gee, gv) = (GeeParams::default(), GvParams { patch: 4 });
        let gt = phantom(32);
        let b = hybrid_loss(&gt, &gt, &LossWeights::default(), &gee, &gv).unwrap();
        assert_eq!(b, LossBreakdown::default());
        let rec = box_blur(&gt, 1);
        let zero = LossWeights { alpha: 0.0, beta: 0.0 };
        let b = hybrid_loss(&rec, &gt, &zero, &gee, &gv).unwrap();
        assert_eq!(b.total, mse(&rec, &gt).unwrap());
        let w = LossWeights::default();
        assert_eq!((w.alpha, w.beta), (10.0, 20.0));
        let b = hybrid_loss(&rec, &gt, &w, &gee, &gv).unwrap();
        assert!((b.total - (b.mse + 10.0 * b.gee + 20.0 * b.gv)).abs() < 1e-12);
        assert!(hybrid_loss(&rec, &gt, &LossWeights { alpha: -1.0, beta: 0.0 }, &gee, &gv).is_err());
    }

    /// Central differences of a scalar function of the image, pixel by pixel.
    fn numeric_grad(x: &Plane, f: impl Fn(&Plane) -> f64) -> Plane {
        let h = 1e-6;
        let mut out = Plane::zeros(x.height, x.width);
        for i in 0..x.data.len() {
            let mut p = x.clone();
            p.data[i] += h;
            let up = f(&p);
            p.data[i] -= 2.0 * h;
            let down = f(&p);
            out.data[i] = (up - down) / (2.0 * h);
        }
        out
    }

    fn assert_close(a: &Plane, b: &Plane, tol: f64) {
        let scale = b.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() <= tol * scale, "{x} vs {y} (scale {scale})");
        }
    }

    #[test]
    fn image_gradients_match_finite_differences() {
        let (h, w) = (10, 12);
        let gt = random_plane(h, w, 7);
        let rec = random_plane(h, w, 8);
        let loss = HybridLoss::new(h, w, LossWeights::default(), GeeParams::default(), GvParams { patch: 4 }).unwrap();
        let grads = loss.evaluate_with_grad(&rec, &gt).unwrap();
        assert_close(&grads.mse, &numeric_grad(&rec, |x| mse(x, &gt).unwrap()), 1e-6);
        assert_close(&grads.gv, &numeric_grad(&rec, |x| gv_loss(x, &gt, &loss.gv).unwrap()), 1e-5);
        assert_close(&grads.gee, &numeric_grad(&rec, |x| gee_loss(x, &gt, &loss.gee).unwrap()), 1e-5);
    }

    #[test]
    fn gradients_vanish_at_the_target() {
        let gt = phantom(16);
        let loss = HybridLoss::new(16, 16, LossWeights::default(), GeeParams::default(), GvParams { patch: 4 }).unwrap();
        let g = loss.evaluate_with_grad(&gt, &gt).unwrap();
        assert!(g.total(&loss.weights).data.iter().all(|&v| v == 0.0));
    }
}
