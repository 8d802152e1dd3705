//! Image quality metrics and split-level evaluation reports.
//!
//! PSNR and SSIM use a per-image data range `max(gt) - min(gt)` on the native
//! phantom scale. SSIM follows the usual configuration: an 11x11 Gaussian
//! window with σ = 1.5, `K1 = 0.01`, `K2 = 0.03`, averaged over the window
//! positions that fit entirely inside the image.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::losses::mse;
use crate::phantom::DatasetManifest;
use crate::pipeline::{reconstruct, ReconstructionConfig};
use crate::raster::{Image, Plane};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `max - min` of the image; the default data range.
pub fn data_range(gt: &Plane) -> f64 {
    let (lo, hi) = gt
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

fn check_range(range: f64) -> Result<()> {
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::invalid(format!("data range must be positive, got {range}")));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(rec: &Plane, gt: &Plane, range: f64) -> Result<f64> {
    check_range(range)?;
    let m = mse(rec, gt)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (range * range / m).log10()
    })
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" correlation with the normalized Gaussian window.
fn filter_valid(data: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|t| win[t] * data[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|t| win[t] * rows[(r + t) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity.
pub fn ssim(rec: &Plane, gt: &Plane, range: f64) -> Result<f64> {
    check_range(range)?;
    if !rec.same_shape(gt) {
        return Err(Error::invalid(format!(
            "shape mismatch: {}x{} vs {}x{}",
            rec.height, rec.width, gt.height, gt.width
        )));
    }
    let (h, w) = (gt.height, gt.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let (x, y) = (&rec.data, &gt.data);
    let prod = |f: &dyn Fn(usize) -> f64| (0..h * w).map(f).collect::<Vec<_>>();
    let mx = filter_valid(x, h, w, &win);
    let my = filter_valid(y, h, w, &win);
    let sxx = filter_valid(&prod(&|i| x[i] * x[i]), h, w, &win);
    let syy = filter_valid(&prod(&|i| y[i] * y[i]), h, w, &win);
    let sxy = filter_valid(&prod(&|i| x[i] * y[i]), h, w, &win);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub ssim: f64,
    pub mse: f64,
    pub psnr_db: f64,
}

impl MetricRow {
    pub fn compute(id: impl Into<String>, rec: &Plane, gt: &Plane) -> Result<Self> {
        let range = data_range(gt);
        Ok(MetricRow {
            id: id.into(),
            ssim: ssim(rec, gt, range)?,
            mse: mse(rec, gt)?,
            psnr_db: psnr(rec, gt, range)?,
        })
    }
}

/// Mean and unbiased (n - 1) standard deviation; the deviation is 0 for a
/// single sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Infinite values (perfect PSNR) propagate: the mean becomes `inf` and
    /// the deviation is reported as NaN.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else if mean.is_infinite() {
            f64::NAN
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Summary { mean, std }
    }
}

/// Per-sample metrics for one model on one split.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub label: String,
    pub rows: Vec<MetricRow>,
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

impl MetricReport {
    pub fn new(label: impl Into<String>, rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("cannot build a metric report from zero samples"));
        }
        Ok(MetricReport {
            label: label.into(),
            rows,
        })
    }

    pub fn ssim(&self) -> Summary {
        Summary::of(&self.rows.iter().map(|r| r.ssim).collect::<Vec<_>>())
    }

    pub fn mse(&self) -> Summary {
        Summary::of(&self.rows.iter().map(|r| r.mse).collect::<Vec<_>>())
    }

    pub fn psnr(&self) -> Summary {
        Summary::of(&self.rows.iter().map(|r| r.psnr_db).collect::<Vec<_>>())
    }

    /// `id,ssim,mse,psnr_db` rows followed by `mean,...` and `std,...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,ssim,mse,psnr_db\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.id, r.ssim, r.mse, fmt_metric(r.psnr_db)).expect("write to String");
        }
        let (s, m, p) = (self.ssim(), self.mse(), self.psnr());
        writeln!(out, "mean,{},{},{}", s.mean, m.mean, fmt_metric(p.mean)).expect("write to String");
        writeln!(out, "std,{},{},{}", s.std, m.std, fmt_metric(p.std)).expect("write to String");
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// One `label  SSIM  MSE  PSNR` line with mean ± std.
    pub fn table_row(&self) -> String {
        let (s, m, p) = (self.ssim(), self.mse(), self.psnr());
        format!(
            "{:<16} {:.4} ± {:.4}   {:.6} ± {:.6}   {} ± {}",
            self.label,
            s.mean,
            s.std,
            m.mean,
            m.std,
            if p.mean.is_finite() { format!("{:.4}", p.mean) } else { fmt_metric(p.mean) },
            if p.std.is_finite() { format!("{:.4}", p.std) } else { "n/a".into() },
        )
    }
}

/// Header matching [`MetricReport::table_row`].
pub fn table_header() -> String {
    format!("{:<16} {:<15}   {:<21}   {}", "model", "SSIM", "MSE", "PSNR (dB)")
}

/// Reconstructs every noisy sinogram of `split` with `config` and scores it
/// against its ground truth. Rows keep manifest order.
pub fn evaluate_split(
    manifest: &DatasetManifest,
    root: &Path,
    split: &str,
    config: &ReconstructionConfig,
    label: &str,
) -> Result<MetricReport> {
    let split = manifest.split(split)?;
    if split.samples.is_empty() {
        return Err(Error::invalid(format!("split `{}` has no samples", split.name)));
    }
    let rows = split
        .samples
        .par_iter()
        .map(|s| {
            let (gt, _, noisy) = manifest.load_sample(root, s)?;
            let rec = reconstruct(&noisy, config)?;
            MetricRow::compute(&s.id, &rec.to_plane(), &gt.to_plane())
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::new(label, rows)
}

/// Scores precomputed reconstructions; used when the images come from
/// elsewhere.
pub fn evaluate_pairs(label: &str, pairs: &[(String, Image, Image)]) -> Result<MetricReport> {
    let rows = pairs
        .par_iter()
        .map(|(id, rec, gt)| MetricRow::compute(id, &rec.to_plane(), &gt.to_plane()))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::new(label, rows)
}
