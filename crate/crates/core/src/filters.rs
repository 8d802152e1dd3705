//! FBP filter spectra: the classical analytic windows and the trainable
//! truncated Fourier series
//!
//! ```text
//! k(ω) = a0 + Σ_{l=1..50} a_l cos(2πlω) + b_l sin(2πlω),   ω ∈ [0, 1/2]
//! ```
//!
//! All spectra live on the half-spectrum grid `ω_k = k/P`, `k = 0..=P/2`, in
//! cycles per sample. Analytic filters are scaled so the ramp reaches 1 at
//! Nyquist; the pipeline applies the physical `1 / (2 d)` factor for detector
//! pitch `d`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of harmonics `L`.
pub const NUM_HARMONICS: usize = 50;
/// `2L + 1` trainable coefficients.
pub const NUM_COEFFS: usize = 2 * NUM_HARMONICS + 1;

/// Ridge added to the harmonic diagonal entries of the normal equations in
/// [`fit_series_to_spectrum`]; the constant term is not penalized.
pub const FIT_RIDGE: f64 = 1e-8;

/// The half-spectrum sampling of a padded row length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrequencyGrid {
    pub padded_len: usize,
}

impl FrequencyGrid {
    pub fn new(padded_len: usize) -> Result<Self> {
        if padded_len < 2 || !padded_len.is_power_of_two() {
            return Err(Error::invalid(format!(
                "padded length must be a power of two >= 2, got {padded_len}"
            )));
        }
        Ok(FrequencyGrid { padded_len })
    }

    pub fn len(&self) -> usize {
        self.padded_len / 2 + 1
    }

    pub fn omegas(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| k as f64 / self.padded_len as f64)
            .collect()
    }
}

/// A real frequency response on a [`FrequencyGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct FilterSpectrum {
    pub padded_len: usize,
    pub values: Vec<f64>,
}

impl FilterSpectrum {
    pub fn new(padded_len: usize, values: Vec<f64>) -> Result<Self> {
        let grid = FrequencyGrid::new(padded_len)?;
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "spectrum has {} values, expected {} for padded length {padded_len}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "filter spectrum" });
        }
        Ok(FilterSpectrum { padded_len, values })
    }

    pub fn grid(&self) -> FrequencyGrid {
        FrequencyGrid {
            padded_len: self.padded_len,
        }
    }

    pub fn constant(grid: FrequencyGrid, value: f64) -> Self {
        FilterSpectrum {
            padded_len: grid.padded_len,
            values: vec![value; grid.len()],
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        FilterSpectrum {
            padded_len: self.padded_len,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Writes `omega,value` rows for plotting.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("omega,value\n");
        for (w, v) in self.grid().omegas().iter().zip(&self.values) {
            writeln!(out, "{w},{v}").expect("write to String");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    /// Parses the `omega,value` table written by [`FilterSpectrum::write_csv`].
    /// The padded length is inferred from the row count and the ω column must
    /// sit on the matching grid.
    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Parse {
            path: path.to_owned(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "omega,value" => {}
            Some((i, h)) => {
                return Err(err(i + 1, format!("expected header `omega,value`, got `{h}`")))
            }
            None => return Err(err(1, "empty file".into())),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 2 {
                return Err(err(i + 1, format!("expected 2 fields, got {}", fields.len())));
            }
            let parse = |f: &str| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(i + 1, format!("bad number `{f}`")))
            };
            rows.push((i + 1, parse(fields[0])?, parse(fields[1])?));
        }
        let padded_len = rows.len().saturating_sub(1) * 2;
        if rows.len() < 2 || !padded_len.is_power_of_two() {
            return Err(err(
                text.lines().count(),
                format!("{} rows do not form a power-of-two half spectrum", rows.len()),
            ));
        }
        for (k, &(line, w, _)) in rows.iter().enumerate() {
            let expected = k as f64 / padded_len as f64;
            if (w - expected).abs() > 1e-9 {
                return Err(err(line, format!("omega {w} does not match grid value {expected}")));
            }
        }
        FilterSpectrum::new(padded_len, rows.into_iter().map(|(_, _, v)| v).collect())
    }
}

/// Truncated Fourier series with `L = 50` harmonics: 101 coefficients
/// regardless of the grid it is evaluated on.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierSeriesFilter {
    pub a0: f64,
    pub a: [f64; NUM_HARMONICS],
    pub b: [f64; NUM_HARMONICS],
}

impl Default for FourierSeriesFilter {
    fn default() -> Self {
        Self::zero()
    }
}

impl FourierSeriesFilter {
    pub fn zero() -> Self {
        FourierSeriesFilter {
            a0: 0.0,
            a: [0.0; NUM_HARMONICS],
            b: [0.0; NUM_HARMONICS],
        }
    }

    /// Parameter vector in the order `a0, a_1..a_50, b_1..b_50`.
    pub fn to_params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(NUM_COEFFS);
        p.push(self.a0);
        p.extend_from_slice(&self.a);
        p.extend_from_slice(&self.b);
        p
    }

    pub fn from_params(params: &[f64]) -> Result<Self> {
        if params.len() != NUM_COEFFS {
            return Err(Error::invalid(format!(
                "expected {NUM_COEFFS} coefficients, got {}",
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "filter coefficients" });
        }
        let mut f = Self::zero();
        f.a0 = params[0];
        f.a.copy_from_slice(&params[1..=NUM_HARMONICS]);
        f.b.copy_from_slice(&params[NUM_HARMONICS + 1..]);
        Ok(f)
    }

    pub fn value_at(&self, omega: f64) -> f64 {
        let mut acc = self.a0;
        for l in 1..=NUM_HARMONICS {
            let (s, c) = (2.0 * std::f64::consts::PI * l as f64 * omega).sin_cos();
            acc += self.a[l - 1] * c + self.b[l - 1] * s;
        }
        acc
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// `l,a,b` table: row 0 holds `0,a0,0`, rows 1..=50 the harmonics.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("l,a,b\n");
        writeln!(out, "0,{},0", self.a0).expect("write to String");
        for l in 1..=NUM_HARMONICS {
            writeln!(out, "{l},{},{}", self.a[l - 1], self.b[l - 1]).expect("write to String");
        }
        out
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Parse {
            path: path.to_owned(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "l,a,b" => {}
            Some((i, h)) => return Err(err(i + 1, format!("expected header `l,a,b`, got `{h}`"))),
            None => return Err(err(1, "empty file".into())),
        }
        let mut f = Self::zero();
        let mut seen = [false; NUM_HARMONICS + 1];
        for (i, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(err(i + 1, format!("expected 3 fields, got {}", fields.len())));
            }
            let l: usize = fields[0]
                .parse()
                .map_err(|_| err(i + 1, format!("bad index `{}`", fields[0])))?;
            let a: f64 = fields[1]
                .parse()
                .map_err(|_| err(i + 1, format!("bad coefficient `{}`", fields[1])))?;
            let b: f64 = fields[2]
                .parse()
                .map_err(|_| err(i + 1, format!("bad coefficient `{}`", fields[2])))?;
            if l > NUM_HARMONICS {
                return Err(err(i + 1, format!("harmonic {l} exceeds {NUM_HARMONICS}")));
            }
            if seen[l] {
                return Err(err(i + 1, format!("harmonic {l} listed twice")));
            }
            if !a.is_finite() || !b.is_finite() {
                return Err(err(i + 1, "non-finite coefficient".into()));
            }
            seen[l] = true;
            if l == 0 {
                if b != 0.0 {
                    return Err(err(i + 1, "row 0 must have b = 0".into()));
                }
                f.a0 = a;
            } else {
                f.a[l - 1] = a;
                f.b[l - 1] = b;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(err(text.lines().count(), format!("harmonic {missing} missing")));
        }
        Ok(f)
    }
}

/// `(P/2 + 1) x 101` matrix of basis functions; column order matches
/// [`FourierSeriesFilter::to_params`].
pub fn series_basis(omegas: &[f64]) -> Vec<[f64; NUM_COEFFS]> {
    omegas
        .iter()
        .map(|&w| {
            let mut row = [0.0; NUM_COEFFS];
            row[0] = 1.0;
            for l in 1..=NUM_HARMONICS {
                let (s, c) = (2.0 * std::f64::consts::PI * l as f64 * w).sin_cos();
                row[l] = c;
                row[NUM_HARMONICS + l] = s;
            }
            row
        })
        .collect()
}

pub fn evaluate_series(filter: &FourierSeriesFilter, grid: FrequencyGrid) -> FilterSpectrum {
    FilterSpectrum {
        padded_len: grid.padded_len,
        values: grid.omegas().iter().map(|&w| filter.value_at(w)).collect(),
    }
}

pub fn ram_lak(grid: FrequencyGrid) -> FilterSpectrum {
    FilterSpectrum {
        padded_len: grid.padded_len,
        values: grid.omegas().iter().map(|w| 2.0 * w.abs()).collect(),
    }
}

/// Ramp apodized by the Hann window `0.5 + 0.5 cos(2πω)`, zero at Nyquist.
pub fn hann_filter(grid: FrequencyGrid) -> FilterSpectrum {
    FilterSpectrum {
        padded_len: grid.padded_len,
        values: grid
            .omegas()
            .iter()
            .map(|w| 2.0 * w.abs() * (0.5 + 0.5 * (2.0 * std::f64::consts::PI * w).cos()))
            .collect(),
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

pub fn shepp_logan_filter(grid: FrequencyGrid) -> FilterSpectrum {
    FilterSpectrum {
        padded_len: grid.padded_len,
        values: grid.omegas().iter().map(|w| 2.0 * w.abs() * sinc(*w)).collect(),
    }
}

/// The fixed analytic filters by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnalyticFilter {
    RamLak,
    SheppLogan,
    Hann,
}

impl AnalyticFilter {
    pub const ALL: [AnalyticFilter; 3] = [
        AnalyticFilter::RamLak,
        AnalyticFilter::SheppLogan,
        AnalyticFilter::Hann,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AnalyticFilter::RamLak => "ram_lak",
            AnalyticFilter::SheppLogan => "shepp_logan",
            AnalyticFilter::Hann => "hann",
        }
    }

    pub fn spectrum(&self, grid: FrequencyGrid) -> FilterSpectrum {
        match self {
            AnalyticFilter::RamLak => ram_lak(grid),
            AnalyticFilter::SheppLogan => shepp_logan_filter(grid),
            AnalyticFilter::Hann => hann_filter(grid),
        }
    }
}

impl FromStr for AnalyticFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnalyticFilter::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFilter {
                name: s.to_owned(),
                valid: AnalyticFilter::ALL.map(|f| f.name()).join(", "),
            })
    }
}

/// Solves `min ||A x - y||²` for a tall, full-column-rank `A` (row-major
/// rows of `NUM_COEFFS` entries) by Householder QR.
fn qr_least_squares(mut a: Vec<[f64; NUM_COEFFS]>, mut y: Vec<f64>) -> Result<Vec<f64>> {
    let m = a.len();
    let n = NUM_COEFFS;
    let mut diag = vec![0.0; n];
    for k in 0..n {
        let norm = (k..m).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::RankDeficient);
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        // Householder vector v = x - alpha e_k, stored in place of column k.
        a[k][k] -= alpha;
        let vnorm2: f64 = (k..m).map(|i| a[i][k] * a[i][k]).sum();
        for j in k + 1..n {
            let dot: f64 = (k..m).map(|i| a[i][k] * a[i][j]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..m {
                a[i][j] -= f * a[i][k];
            }
        }
        let dot: f64 = (k..m).map(|i| a[i][k] * y[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in k..m {
            y[i] -= f * a[i][k];
        }
        diag[k] = alpha;
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (y[k] - s) / diag[k];
    }
    Ok(x)
}

/// Least-squares Fourier-series fit of `target` with a ridge of `1e-8` on the
/// harmonic coefficients:
///
/// ```text
/// min_c  Σ_k (k(ω_k; c) − target_k)²  +  1e-8 Σ_{l≥1} (a_l² + b_l²)
/// ```
///
/// This is the solution of the regularized normal equations
/// `(BᵀB + 1e-8 D) c = Bᵀy` (`D` the identity with the `a0` entry zeroed),
/// computed by QR of the stacked system `[B; 1e-4 D]` because the normal
/// matrix itself is too poorly conditioned (about 1e11) to solve accurately.
///
/// Sine and cosine harmonics are nearly collinear on the half period, so the
/// harmonic coefficients are not unique; the ridge picks the small-norm
/// representative and the fitted spectrum is what is reproducible. Leaving
/// the intercept unpenalized keeps constants on `a0` alone.
pub fn fit_series_to_spectrum(target: &FilterSpectrum) -> Result<FourierSeriesFilter> {
    let omegas = target.grid().omegas();
    if omegas.len() < 2 * NUM_COEFFS {
        return Err(Error::invalid(format!(
            "fit needs at least {} grid points, got {}",
            2 * NUM_COEFFS,
            omegas.len()
        )));
    }
    let mut rows = series_basis(&omegas);
    let mut y = target.values.clone();
    for i in 1..NUM_COEFFS {
        let mut r = [0.0; NUM_COEFFS];
        r[i] = FIT_RIDGE.sqrt();
        rows.push(r);
        y.push(0.0);
    }
    FourierSeriesFilter::from_params(&qr_least_squares(rows, y)?)
}
