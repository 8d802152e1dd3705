//! Training the 101 filter coefficients: reverse-mode gradients through the
//! reconstruction, Adam, a one-cycle learning-rate schedule and the epoch
//! loop.
//!
//! Every stage before the ReLU is linear, so the backward pass is a chain of
//! explicit adjoints:
//!
//! ```text
//! c ──B──▶ H ──·s──▶ H' ──rows──▶ filtered ──backproject──▶ pre ──ReLU──▶ rec ──▶ loss
//! ```
//!
//! with `B` the series basis and `s = 1 / (2 d)`. Going backwards, the loss
//! gradient is masked by `pre > 0`, pulled back through the transpose of the
//! backprojection, and correlated with each row spectrum `X` to give
//! `dL/dH'_k = (c_k / P) Σ_rows Re(X_k · conj(G_k))` where `G` is the padded
//! DFT of the row gradient and `c_k` is 1 at DC and Nyquist, 2 elsewhere.
//! Subgradients at kinks (ReLU at 0, `|·|` at 0) are 0.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::{
    fit_series_to_spectrum, ram_lak, series_basis, FourierSeriesFilter, FrequencyGrid, NUM_COEFFS,
};
use crate::losses::{GeeParams, GvParams, HybridLoss, LossBreakdown, LossWeights};
use crate::metrics::{data_range, psnr, ssim};
use crate::phantom::DatasetManifest;
use crate::pipeline::{apply_spectrum, physical_scale, relu, row_spectra};
use crate::projector::{back_project_adjoint, back_project_plane, splitmix64, Geometry};
use crate::raster::{Image, Plane, Sinogram};
use crate::spectral::{check_padded_len, default_padded_len, HalfSpectrum, Radix2};

/// Adam moment decay rates and denominator offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid(format!(
                "Adam decay rates must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid(format!("Adam epsilon must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grad: &[f64],
    lr: f64,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != grad.len() || state.v.len() != grad.len() {
        return Err(Error::invalid(format!(
            "Adam vectors disagree in length: params {}, grad {}, state {}",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) || !lr.is_finite() {
        return Err(Error::NonFinite { stage: "optimizer input" });
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..grad.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + config.eps);
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite { stage: "optimizer update" });
    }
    Ok(())
}

/// One-cycle schedule: cosine rise from `base_lr` to `max_lr` over the first
/// `warm_fraction` of the steps, then cosine decay to `base_lr / final_div` at
/// the last step.
///
/// The warm-up ends at step `round(warm_fraction * total)`, clamped to
/// `1..=total-1` so the first step is always `base_lr` and the peak is
/// reached. Endpoints are hit exactly: `lerp(a, b, t) = a(1 - t) + b t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneCycle {
    pub total_steps: usize,
    pub base_lr: f64,
    pub max_lr: f64,
    pub warm_fraction: f64,
    pub final_div: f64,
}

impl OneCycle {
    pub const WARM_FRACTION: f64 = 0.3;
    pub const FINAL_DIV: f64 = 25.0;

    pub fn new(total_steps: usize, base_lr: f64, max_lr: f64) -> Result<Self> {
        let s = OneCycle {
            total_steps,
            base_lr,
            max_lr,
            warm_fraction: Self::WARM_FRACTION,
            final_div: Self::FINAL_DIV,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(self.base_lr > 0.0 && self.base_lr <= self.max_lr && self.max_lr.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < base_lr <= max_lr, got {} and {}",
                self.base_lr, self.max_lr
            )));
        }
        if !(0.0..=1.0).contains(&self.warm_fraction) || !(self.final_div >= 1.0) {
            return Err(Error::invalid("warm fraction must be in [0, 1] and final divisor >= 1"));
        }
        Ok(())
    }

    /// Step at which the peak `max_lr` is reached.
    pub fn peak_step(&self) -> usize {
        if self.total_steps == 1 {
            return 0;
        }
        let w = (self.warm_fraction * self.total_steps as f64).round() as usize;
        w.clamp(1, self.total_steps - 1)
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        if step >= self.total_steps {
            return Err(Error::invalid(format!(
                "step {step} outside schedule of {} steps",
                self.total_steps
            )));
        }
        let lerp = |a: f64, b: f64, t: f64| a * (1.0 - t) + b * t;
        let cos_t = |t: f64| (1.0 - (std::f64::consts::PI * t).cos()) / 2.0;
        let peak = self.peak_step();
        let last = self.total_steps - 1;
        let lr = if step == 0 {
            self.base_lr
        } else if step <= peak {
            lerp(self.base_lr, self.max_lr, cos_t(step as f64 / peak as f64))
        } else {
            let t = (step - peak) as f64 / (last - peak) as f64;
            lerp(self.max_lr, self.base_lr / self.final_div, cos_t(t))
        };
        Ok(lr.min(self.max_lr))
    }
}

/// Free-function form of [`OneCycle::lr`] with the default shape.
pub fn onecycle_lr(step: usize, total_steps: usize, base_lr: f64, max_lr: f64) -> Result<f64> {
    OneCycle::new(total_steps, base_lr, max_lr)?.lr(step)
}

/// A training pair with its row spectra precomputed.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub id: String,
    pub spectra: Vec<HalfSpectrum>,
    pub gt: Plane,
}

/// Loss value, mean over the batch, with its gradient in coefficient order
/// `a0, a_1..a_50, b_1..b_50`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossAndGradient {
    pub breakdown: LossBreakdown,
    pub gradient: Vec<f64>,
}

/// Unweighted per-component gradients (`mse`, `gee`, `gv`), mean over the
/// batch. The hybrid gradient is `mse + alpha gee + beta gv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentGradients {
    pub breakdown: LossBreakdown,
    pub mse: Vec<f64>,
    pub gee: Vec<f64>,
    pub gv: Vec<f64>,
}

/// Everything fixed during training: geometry, padding, series basis and the
/// prepared loss.
#[derive(Clone, Debug)]
pub struct Objective {
    pub geometry: Geometry,
    pub size: usize,
    pub padded_len: usize,
    pub loss: HybridLoss,
    basis: Vec<[f64; NUM_COEFFS]>,
    scale: f64,
    plan: Radix2,
}

impl Objective {
    pub fn new(
        geometry: Geometry,
        size: usize,
        padded_len: usize,
        weights: LossWeights,
        gee: GeeParams,
        gv: GvParams,
    ) -> Result<Self> {
        geometry.validate()?;
        check_padded_len(padded_len, 2 * geometry.num_detectors)?;
        let grid = FrequencyGrid::new(padded_len)?;
        Ok(Objective {
            geometry,
            size,
            padded_len,
            loss: HybridLoss::new(size, size, weights, gee, gv)?,
            basis: series_basis(&grid.omegas()),
            scale: physical_scale(&geometry),
            plan: Radix2::new(padded_len)?,
        })
    }

    pub fn prepare(&self, id: impl Into<String>, sinogram: &Sinogram, gt: &Image) -> Result<TrainingSample> {
        if sinogram.geometry() != &self.geometry {
            return Err(Error::GeometryMismatch);
        }
        if gt.height() != self.size || gt.width() != self.size {
            return Err(Error::invalid(format!(
                "ground truth is {}x{}, objective expects {}x{}",
                gt.height(),
                gt.width(),
                self.size,
                self.size
            )));
        }
        Ok(TrainingSample {
            id: id.into(),
            spectra: row_spectra(&sinogram.to_f64(), self.geometry.num_detectors, self.padded_len)?,
            gt: gt.to_plane(),
        })
    }

    /// The physical spectrum `s B c` applied to sinogram rows.
    fn spectrum(&self, params: &[f64]) -> Result<Vec<f64>> {
        if params.len() != NUM_COEFFS {
            return Err(Error::invalid(format!(
                "expected {NUM_COEFFS} coefficients, got {}",
                params.len()
            )));
        }
        let h: Vec<f64> = self
            .basis
            .iter()
            .map(|row| self.scale * row.iter().zip(params).map(|(b, c)| b * c).sum::<f64>())
            .collect();
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "filter spectrum" });
        }
        Ok(h)
    }

    fn forward(&self, spectrum: &[f64], sample: &TrainingSample) -> Result<Plane> {
        let n = self.geometry.num_detectors;
        let filtered = apply_spectrum(&sample.spectra, spectrum, n)?;
        if filtered.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "sinogram filtering" });
        }
        let pre = back_project_plane(&filtered, &self.geometry, self.size);
        if pre.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "backprojection" });
        }
        Ok(pre)
    }

    /// Reconstruction before the ReLU.
    pub fn reconstruct_linear(&self, params: &[f64], sample: &TrainingSample) -> Result<Plane> {
        self.forward(&self.spectrum(params)?, sample)
    }

    pub fn reconstruct(&self, params: &[f64], sample: &TrainingSample) -> Result<Plane> {
        Ok(relu(&self.reconstruct_linear(params, sample)?))
    }

    /// Pulls an image-space gradient back to the 101 coefficients, given the
    /// pre-ReLU reconstruction that decides the mask.
    fn backward(&self, sample: &TrainingSample, pre: &Plane, grad: &Plane) -> Result<Vec<f64>> {
        let masked = Plane {
            height: grad.height,
            width: grad.width,
            data: grad
                .data
                .iter()
                .zip(&pre.data)
                .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
                .collect(),
        };
        let n = self.geometry.num_detectors;
        let p = self.padded_len;
        let half = p / 2 + 1;
        let rows = back_project_adjoint(&masked, &self.geometry);
        // Per-row contributions, reduced in row order for determinism.
        let per_row: Vec<Vec<f64>> = rows
            .par_chunks(n)
            .zip(&sample.spectra)
            .map(|(g, x)| {
                let mut buf = vec![Complex64::new(0.0, 0.0); p];
                for (b, &v) in buf.iter_mut().zip(g) {
                    b.re = v;
                }
                self.plan.process(&mut buf, false);
                (0..half)
                    .map(|k| {
                        let weight = if k == 0 || k == p / 2 { 1.0 } else { 2.0 };
                        weight / p as f64 * (x.bins[k] * buf[k].conj()).re
                    })
                    .collect()
            })
            .collect();
        let mut dh = vec![0.0; half];
        for row in &per_row {
            for (d, v) in dh.iter_mut().zip(row) {
                *d += v;
            }
        }
        let mut dc = vec![0.0; NUM_COEFFS];
        for (row, &d) in self.basis.iter().zip(&dh) {
            for (c, b) in dc.iter_mut().zip(row) {
                *c += self.scale * b * d;
            }
        }
        if dc.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "gradient" });
        }
        Ok(dc)
    }

    fn check_batch(batch: &[&TrainingSample]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::invalid("batch is empty"));
        }
        Ok(())
    }

    /// Mean hybrid loss over the batch, without gradients.
    pub fn loss(&self, params: &[f64], batch: &[&TrainingSample]) -> Result<LossBreakdown> {
        Self::check_batch(batch)?;
        let h = self.spectrum(params)?;
        let parts = batch
            .par_iter()
            .map(|s| {
                let rec = relu(&self.forward(&h, s)?);
                self.loss.evaluate(&rec, &s.gt)
            })
            .collect::<Result<Vec<_>>>()?;
        mean_breakdown(&parts)
    }

    pub fn loss_and_gradient(&self, params: &[f64], batch: &[&TrainingSample]) -> Result<LossAndGradient> {
        Self::check_batch(batch)?;
        let h = self.spectrum(params)?;
        let weights = self.loss.weights;
        let parts = batch
            .par_iter()
            .map(|s| {
                let pre = self.forward(&h, s)?;
                let g = self.loss.evaluate_with_grad(&relu(&pre), &s.gt)?;
                if !g.breakdown.total.is_finite() {
                    return Err(Error::NonFinite { stage: "loss" });
                }
                Ok((g.breakdown, self.backward(s, &pre, &g.total(&weights))?))
            })
            .collect::<Result<Vec<_>>>()?;
        let breakdown = mean_breakdown(&parts.iter().map(|p| p.0).collect::<Vec<_>>())?;
        Ok(LossAndGradient {
            breakdown,
            gradient: mean_vectors(parts.iter().map(|p| &p.1)),
        })
    }

    pub fn component_gradients(&self, params: &[f64], batch: &[&TrainingSample]) -> Result<ComponentGradients> {
        Self::check_batch(batch)?;
        let h = self.spectrum(params)?;
        let parts = batch
            .par_iter()
            .map(|s| {
                let pre = self.forward(&h, s)?;
                let g = self.loss.evaluate_with_grad(&relu(&pre), &s.gt)?;
                Ok((
                    g.breakdown,
                    self.backward(s, &pre, &g.mse)?,
                    self.backward(s, &pre, &g.gee)?,
                    self.backward(s, &pre, &g.gv)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ComponentGradients {
            breakdown: mean_breakdown(&parts.iter().map(|p| p.0).collect::<Vec<_>>())?,
            mse: mean_vectors(parts.iter().map(|p| &p.1)),
            gee: mean_vectors(parts.iter().map(|p| &p.2)),
            gv: mean_vectors(parts.iter().map(|p| &p.3)),
        })
    }
}

fn mean_breakdown(parts: &[LossBreakdown]) -> Result<LossBreakdown> {
    let n = parts.len() as f64;
    let mut acc = LossBreakdown::default();
    for p in parts {
        acc.total += p.total;
        acc.mse += p.mse;
        acc.gee += p.gee;
        acc.gv += p.gv;
    }
    let out = LossBreakdown {
        total: acc.total / n,
        mse: acc.mse / n,
        gee: acc.gee / n,
        gv: acc.gv / n,
    };
    if !out.total.is_finite() {
        return Err(Error::NonFinite { stage: "loss" });
    }
    Ok(out)
}

fn mean_vectors<'a>(vs: impl ExactSizeIterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let n = vs.len() as f64;
    let mut acc = vec![0.0; NUM_COEFFS];
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Starting point of training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Least-squares fit of the Ram-Lak ramp.
    RamLak,
    /// All coefficients zero. The reconstruction is then identically zero,
    /// the ReLU mask is empty and the gradient vanishes, so training cannot
    /// leave this point; kept for completeness.
    Zero,
    /// Coefficients drawn uniformly from `[-0.05, 0.05]` using the seed.
    Random,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ram_lak" => Ok(InitMode::RamLak),
            "zero" => Ok(InitMode::Zero),
            "random" => Ok(InitMode::Random),
            _ => Err(Error::invalid(format!(
                "unknown init mode `{s}`; valid modes are: ram_lak, zero, random"
            ))),
        }
    }
}

impl InitMode {
    pub fn name(&self) -> &'static str {
        match self {
            InitMode::RamLak => "ram_lak",
            InitMode::Zero => "zero",
            InitMode::Random => "random",
        }
    }
}

/// Grid used to fit the ramp initialization; dense enough to overdetermine
/// the 101 coefficients.
const INIT_FIT_PADDED_LEN: usize = 2048;

pub fn initial_filter(mode: InitMode, seed: u64) -> Result<FourierSeriesFilter> {
    match mode {
        InitMode::RamLak => fit_series_to_spectrum(&ram_lak(FrequencyGrid::new(INIT_FIT_PADDED_LEN)?)),
        InitMode::Zero => Ok(FourierSeriesFilter::zero()),
        InitMode::Random => {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(splitmix64(seed ^ 0x1417));
            let p: Vec<f64> = (0..NUM_COEFFS).map(|_| rng.random_range(-0.05..0.05)).collect();
            FourierSeriesFilter::from_params(&p)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub max_lr: f64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub gee: GeeParams,
    pub gv: GvParams,
    pub seed: u64,
    pub init: InitMode,
    /// Row padding; `None` picks the smallest power of two `>= 2N`.
    pub padded_len: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            base_lr: 5e-3,
            max_lr: 2e-2,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            gee: GeeParams::default(),
            // Desk-scale images are 64x64; 8x8 patches would leave an 8x8
            // variance map.
            gv: GvParams { patch: 4 },
            seed: 0,
            init: InitMode::RamLak,
            padded_len: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.base_lr > 0.0 && self.base_lr <= self.max_lr && self.max_lr.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < base_lr <= max_lr, got {} and {}",
                self.base_lr, self.max_lr
            )));
        }
        self.adam.validate()?;
        self.weights.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Validation means after an epoch; epoch 0 is the initial filter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_psnr: f64,
    pub val_ssim: f64,
    pub val_mse: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// `step,lr,total,mse,gee,gv`.
    pub fn steps_csv(&self) -> String {
        let mut out = String::from("step,lr,total,mse,gee,gv\n");
        for r in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step, r.lr, r.loss.total, r.loss.mse, r.loss.gee, r.loss.gv
            )
            .expect("write to String");
        }
        out
    }

    /// `epoch,psnr,ssim,mse` on the validation split.
    pub fn validation_csv(&self) -> String {
        let mut out = String::from("epoch,psnr,ssim,mse\n");
        for r in &self.epochs {
            writeln!(out, "{},{},{},{}", r.epoch, r.val_psnr, r.val_ssim, r.val_mse).expect("write to String");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Filter with the best validation PSNR (the initial filter counts).
    pub best: FourierSeriesFilter,
    pub best_epoch: usize,
    pub last: FourierSeriesFilter,
    pub history: TrainHistory,
}

/// Loads and prepares every sample of `split`.
pub fn load_split(
    objective: &Objective,
    manifest: &DatasetManifest,
    root: &Path,
    split: &str,
) -> Result<Vec<TrainingSample>> {
    manifest
        .split(split)?
        .samples
        .par_iter()
        .map(|s| {
            let (gt, _, noisy) = manifest.load_sample(root, s)?;
            objective.prepare(&s.id, &noisy, &gt)
        })
        .collect()
}

fn validate_filter(objective: &Objective, params: &[f64], val: &[TrainingSample]) -> Result<(f64, f64, f64)> {
    let rows = val
        .par_iter()
        .map(|s| {
            let rec = objective.reconstruct(params, s)?;
            let range = data_range(&s.gt);
            Ok((
                psnr(&rec, &s.gt, range)?,
                ssim(&rec, &s.gt, range)?,
                crate::losses::mse(&rec, &s.gt)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    Ok((
        rows.iter().map(|r| r.0).sum::<f64>() / n,
        rows.iter().map(|r| r.1).sum::<f64>() / n,
        rows.iter().map(|r| r.2).sum::<f64>() / n,
    ))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains on the `train` split, validating on `val` after every epoch.
///
/// With `out_dir`, writes `epoch_<k>.csv` checkpoints (`epoch_0.csv` is the
/// initial filter), `history.csv` and `validation.csv`. The history files are
/// rewritten after every epoch, so an aborted run keeps its last good state.
/// Data order is shuffled per epoch with a seeded Xoshiro256++ stream.
pub fn train(
    config: &TrainConfig,
    manifest: &DatasetManifest,
    root: &Path,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let geometry = manifest.geometry;
    let padded_len = config
        .padded_len
        .unwrap_or_else(|| default_padded_len(geometry.num_detectors));
    let objective = Objective::new(
        geometry,
        manifest.image_size,
        padded_len,
        config.weights,
        config.gee,
        config.gv,
    )?;
    let init = initial_filter(config.init, config.seed)?;
    let mut params = init.to_params();
    let mut history = TrainHistory::default();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        init.write_csv(dir.join("epoch_0.csv"))?;
    }
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            best: init.clone(),
            best_epoch: 0,
            last: init,
            history,
        });
    }

    let train_set = load_split(&objective, manifest, root, "train")?;
    let val_set = load_split(&objective, manifest, root, "val")?;
    if train_set.is_empty() {
        return Err(Error::invalid("the train split is empty"));
    }
    let batches_per_epoch = train_set.len().div_ceil(config.batch_size);
    let schedule = OneCycle::new(config.epochs * batches_per_epoch, config.base_lr, config.max_lr)?;
    let mut adam = AdamState::new(NUM_COEFFS);

    let mut best = (f64::NEG_INFINITY, 0, init.clone());
    let mut record_epoch = |epoch: usize, params: &[f64], history: &mut TrainHistory| -> Result<()> {
        if val_set.is_empty() {
            return Ok(());
        }
        let (p, s, m) = validate_filter(&objective, params, &val_set)?;
        history.epochs.push(EpochRecord {
            epoch,
            val_psnr: p,
            val_ssim: s,
            val_mse: m,
        });
        if p > best.0 {
            best = (p, epoch, FourierSeriesFilter::from_params(params)?);
        }
        Ok(())
    };
    record_epoch(0, &params, &mut history)?;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(splitmix64(config.seed ^ splitmix64(epoch as u64)));
        order.shuffle(&mut rng);
        let outcome = (|| -> Result<()> {
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &train_set[i]).collect();
                let lg = objective.loss_and_gradient(&params, &batch)?;
                let lr = schedule.lr(step)?;
                history.steps.push(StepRecord {
                    step,
                    lr,
                    loss: lg.breakdown,
                });
                adam_step(&mut adam, &mut params, &lg.gradient, lr, &config.adam)?;
                step += 1;
            }
            record_epoch(epoch, &params, &mut history)
        })();
        if let Some(dir) = out_dir {
            write_text(&dir.join("history.csv"), &history.steps_csv())?;
            write_text(&dir.join("validation.csv"), &history.validation_csv())?;
        }
        outcome?;
        if let Some(dir) = out_dir {
            FourierSeriesFilter::from_params(&params)?.write_csv(dir.join(format!("epoch_{epoch}.csv")))?;
        }
    }
    let last = FourierSeriesFilter::from_params(&params)?;
    let (best, best_epoch) = if val_set.is_empty() {
        (last.clone(), config.epochs)
    } else {
        (best.2, best.1)
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        last,
        history,
    })
}
