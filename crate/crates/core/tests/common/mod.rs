//! Finite-difference oracle for the coefficient gradient, shared by the core
//! gradient tests and the acceptance suite.

#![allow(dead_code)]

use fbp_core::filters::NUM_COEFFS;
use fbp_core::losses::{gv_loss, mse, natural_order_weights, GeeParams, GvParams, LossWeights};
use fbp_core::optim::{initial_filter, InitMode, Objective, TrainingSample};
use fbp_core::phantom::random_ellipse_phantom;
use fbp_core::projector::{apply_noise, forward_project, Geometry, PhotonCount};
use fbp_core::raster::Plane;
use fbp_core::spectral::dft2d;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub const FD_SIZE: usize = 16;
pub const FD_ANGLES: usize = 24;
pub const FD_PADDED: usize = 64;
pub const FD_STEP: f64 = 1e-3;

/// A small seeded problem: random ellipses, noisy sinogram, and a perturbed
/// ramp filter as the evaluation point.
pub struct Instance {
    pub objective: Objective,
    pub sample: TrainingSample,
    pub params: Vec<f64>,
}

pub fn instance(seed: u64, weights: LossWeights) -> Instance {
    let geometry = Geometry::for_image(FD_SIZE, FD_ANGLES).unwrap();
    let objective = Objective::new(
        geometry,
        FD_SIZE,
        FD_PADDED,
        weights,
        GeeParams::default(),
        GvParams::default(),
    )
    .unwrap();
    let gt = random_ellipse_phantom(FD_SIZE, 5, seed).unwrap();
    let clean = forward_project(&gt, &geometry).unwrap();
    let noisy = apply_noise(&clean, PhotonCount::Finite(2000.0), seed).unwrap();
    let sample = objective.prepare(format!("fd{seed}"), &noisy, &gt).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed.wrapping_add(99));
    let mut params = initial_filter(InitMode::RamLak, 0).unwrap().to_params();
    for p in params.iter_mut() {
        *p += rng.random_range(-0.01..0.01);
    }
    Instance {
        objective,
        sample,
        params,
    }
}

/// Which side of every non-smooth point the loss sits on: the ReLU mask, the
/// sign of each L1 term in the spectral loss, and the sign of the real DFT
/// bins (where |z| has a kink rather than a smooth minimum).
#[derive(PartialEq)]
struct KinkPattern {
    mask: Vec<bool>,
    l1_sign: Vec<i8>,
    real_sign: Vec<i8>,
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn pattern(inst: &Instance, params: &[f64], weights: &[f64]) -> KinkPattern {
    let pre = inst.objective.reconstruct_linear(params, &inst.sample).unwrap();
    let rec = inst.objective.reconstruct(params, &inst.sample).unwrap();
    let (h, w) = (rec.height, rec.width);
    let z = dft2d(&rec).unwrap();
    let y = dft2d(&inst.sample.gt).unwrap();
    let l1_sign = z
        .iter()
        .zip(&y)
        .zip(weights)
        .map(|((a, b), &wk)| sign(wk * a.norm() - wk * b.norm()))
        .collect();
    let real_sign = z
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let (r, c) = (k / w, k % w);
            if (r == 0 || r == h / 2) && (c == 0 || c == w / 2) {
                sign(a.re)
            } else {
                0
            }
        })
        .collect();
    KinkPattern {
        mask: pre.data.iter().map(|&v| v > 0.0).collect(),
        l1_sign,
        real_sign,
    }
}

/// The hybrid loss with every non-smooth choice pinned to `pattern`: masked
/// pixels stay masked, each L1 term keeps its sign and real bins keep theirs.
/// It agrees with the true loss wherever the pattern is unchanged and is
/// smooth across the kinks, so its derivative at the base point is the
/// subgradient the analytic pass is expected to return.
fn pinned_loss(inst: &Instance, params: &[f64], pat: &KinkPattern, weights: &[f64]) -> f64 {
    let pre = inst.objective.reconstruct_linear(params, &inst.sample).unwrap();
    let data = pre
        .data
        .iter()
        .zip(&pat.mask)
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    let rec = Plane::new(pre.height, pre.width, data).unwrap();
    let gt = &inst.sample.gt;
    let z = dft2d(&rec).unwrap();
    let y = dft2d(gt).unwrap();
    let gee: f64 = (0..z.len())
        .map(|k| {
            let mag = if pat.real_sign[k] != 0 {
                f64::from(pat.real_sign[k]) * z[k].re
            } else {
                z[k].norm()
            };
            f64::from(pat.l1_sign[k]) * weights[k] * (mag - y[k].norm())
        })
        .sum::<f64>()
        / rec.data.len() as f64;
    let w = inst.objective.loss.weights;
    mse(&rec, gt).unwrap() + w.alpha * gee + w.beta * gv_loss(&rec, gt, &GvParams::default()).unwrap()
}

pub struct FdReport {
    /// Coordinates whose stencil crosses a non-smooth point; these are
    /// compared against differences of the pinned loss instead.
    pub crossing: usize,
    /// Worst relative error of the plain central difference at `FD_STEP`.
    pub plain_worst: f64,
    /// Worst relative error of the Richardson combination of the central
    /// differences at `FD_STEP` and `FD_STEP / 2`.
    pub extrapolated_worst: f64,
}

fn rel_err(a: f64, f: f64, floor: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(floor)
}

/// Compares the analytic hybrid-loss gradient against central differences on
/// every coefficient.
pub fn check_gradient(inst: &Instance) -> FdReport {
    let obj = &inst.objective;
    let batch = [&inst.sample];
    let analytic = obj.loss_and_gradient(&inst.params, &batch).unwrap().gradient;
    let weights = natural_order_weights(FD_SIZE, FD_SIZE, &GeeParams::default()).unwrap();
    let base = pattern(inst, &inst.params, &weights);
    let floor = 1e-8 * analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let true_loss = |p: &[f64]| obj.loss(p, &batch).unwrap().total;
    let pinned = |p: &[f64]| pinned_loss(inst, p, &base, &weights);
    let mut report = FdReport {
        crossing: 0,
        plain_worst: 0.0,
        extrapolated_worst: 0.0,
    };
    for i in 0..NUM_COEFFS {
        let shifted = |h: f64| {
            let mut p = inst.params.clone();
            p[i] += h;
            p
        };
        let points = [
            shifted(FD_STEP),
            shifted(-FD_STEP),
            shifted(FD_STEP / 2.0),
            shifted(-FD_STEP / 2.0),
        ];
        let crosses = points.iter().any(|p| pattern(inst, p, &weights) != base);
        let loss: &dyn Fn(&[f64]) -> f64 = if crosses {
            report.crossing += 1;
            &pinned
        } else {
            &true_loss
        };
        let d1 = (loss(&points[0]) - loss(&points[1])) / (2.0 * FD_STEP);
        let d2 = (loss(&points[2]) - loss(&points[3])) / FD_STEP;
        let extrapolated = (4.0 * d2 - d1) / 3.0;
        report.plain_worst = report.plain_worst.max(rel_err(analytic[i], d1, floor));
        report.extrapolated_worst = report
            .extrapolated_worst
            .max(rel_err(analytic[i], extrapolated, floor));
    }
    report
}
