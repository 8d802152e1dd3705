//! Discrete Fourier transforms.
//!
//! Convention: the forward transform is unnormalized,
//! `X_k = Σ_j x_j e^{-2πi jk/n}`, and the inverse divides by `n`.
//!
//! Power-of-two lengths use an iterative radix-2 transform; other lengths
//! (2D magnitude spectra of arbitrary images) go through Bluestein's chirp-z
//! algorithm on top of it.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{Image, Plane, Sinogram};

/// In-place radix-2 decimation-in-time transform of a fixed power-of-two size.
#[derive(Clone, Debug)]
pub struct Radix2 {
    len: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Radix2 {
    pub fn new(len: usize) -> Result<Self> {
        if !len.is_power_of_two() {
            return Err(Error::invalid(format!("radix-2 length must be a power of two, got {len}")));
        }
        let bits = len.trailing_zeros();
        let bitrev = (0..len)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..len / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
            .collect();
        Ok(Radix2 {
            len,
            twiddles,
            bitrev,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// Unnormalized transform; `inverse` flips the exponent sign only.
    pub fn process(&self, buf: &mut [Complex64], inverse: bool) {
        assert_eq!(buf.len(), self.len);
        for i in 0..self.len {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut half = 1;
        while half < self.len {
            let stride = self.len / (2 * half);
            for start in (0..self.len).step_by(2 * half) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let t = w * buf[start + k + half];
                    let u = buf[start + k];
                    buf[start + k] = u + t;
                    buf[start + k + half] = u - t;
                }
            }
            half *= 2;
        }
    }
}

/// Transform plan for any length.
#[derive(Clone, Debug)]
pub enum Dft {
    Radix2(Radix2),
    Bluestein {
        len: usize,
        inner: Radix2,
        chirp: Vec<Complex64>,
        /// Transform of the conjugate chirp kernel.
        kernel: Vec<Complex64>,
    },
}

impl Dft {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("transform length must be positive"));
        }
        if len.is_power_of_two() {
            return Ok(Dft::Radix2(Radix2::new(len)?));
        }
        let m = (2 * len - 1).next_power_of_two();
        let inner = Radix2::new(m)?;
        // k^2 reduced mod 2n keeps the phase argument small.
        let chirp: Vec<Complex64> = (0..len)
            .map(|k| {
                let k2 = (k as u128 * k as u128 % (2 * len as u128)) as f64;
                Complex64::from_polar(1.0, -PI * k2 / len as f64)
            })
            .collect();
        let mut kernel = vec![Complex64::new(0.0, 0.0); m];
        kernel[0] = chirp[0].conj();
        for k in 1..len {
            kernel[k] = chirp[k].conj();
            kernel[m - k] = chirp[k].conj();
        }
        inner.process(&mut kernel, false);
        Ok(Dft::Bluestein {
            len,
            inner,
            chirp,
            kernel,
        })
    }

    pub fn len(&self) -> usize {
        match self {
            Dft::Radix2(r) => r.len,
            Dft::Bluestein { len, .. } => *len,
        }
    }

    /// Unnormalized transform in place.
    pub fn process(&self, buf: &mut [Complex64], inverse: bool) {
        match self {
            Dft::Radix2(r) => r.process(buf, inverse),
            Dft::Bluestein {
                len,
                inner,
                chirp,
                kernel,
            } => {
                assert_eq!(buf.len(), *len);
                // The inverse is the forward transform of the conjugate.
                let m = inner.len();
                let mut work = vec![Complex64::new(0.0, 0.0); m];
                for k in 0..*len {
                    let x = if inverse { buf[k].conj() } else { buf[k] };
                    work[k] = x * chirp[k];
                }
                inner.process(&mut work, false);
                for (w, k) in work.iter_mut().zip(kernel) {
                    *w *= k;
                }
                inner.process(&mut work, true);
                let scale = 1.0 / m as f64;
                for k in 0..*len {
                    let y = work[k] * chirp[k] * scale;
                    buf[k] = if inverse { y.conj() } else { y };
                }
            }
        }
    }
}

/// Non-negative-frequency half of the DFT of a zero-padded real row.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfSpectrum {
    pub padded_len: usize,
    /// `padded_len / 2 + 1` bins at `ω_k = k / padded_len`.
    pub bins: Vec<Complex64>,
}

impl HalfSpectrum {
    pub fn omega(&self, k: usize) -> f64 {
        k as f64 / self.padded_len as f64
    }
}

/// Checks `padded_len` is a power of two able to hold `n` samples.
pub fn check_padded_len(padded_len: usize, n: usize) -> Result<()> {
    if !padded_len.is_power_of_two() || padded_len < 2 {
        return Err(Error::invalid(format!(
            "padded length must be a power of two >= 2, got {padded_len}"
        )));
    }
    if padded_len < n {
        return Err(Error::invalid(format!(
            "padded length {padded_len} is shorter than the row length {n}"
        )));
    }
    Ok(())
}

/// Smallest power of two `>= 2n`.
pub fn default_padded_len(n: usize) -> usize {
    (2 * n).next_power_of_two()
}

/// Forward transform of one real row, zero padded to the plan length.
pub fn row_to_halfspectrum(row: &[f64], plan: &Radix2) -> HalfSpectrum {
    let p = plan.len();
    let mut buf = vec![Complex64::new(0.0, 0.0); p];
    for (b, &v) in buf.iter_mut().zip(row) {
        b.re = v;
    }
    plan.process(&mut buf, false);
    buf.truncate(p / 2 + 1);
    HalfSpectrum {
        padded_len: p,
        bins: buf,
    }
}

/// Inverse of [`row_to_halfspectrum`], truncated to `out.len()` samples.
///
/// The full spectrum is rebuilt by Hermitian extension; any imaginary part the
/// result still carries comes from bins 0 and `P/2`, which must be real for a
/// real signal.
pub fn halfspectrum_to_row(spec: &HalfSpectrum, plan: &Radix2, out: &mut [f64]) -> Result<()> {
    let p = plan.len();
    if spec.padded_len != p || spec.bins.len() != p / 2 + 1 {
        return Err(Error::invalid(format!(
            "half spectrum of padded length {} does not fit a {p}-point plan",
            spec.padded_len
        )));
    }
    if out.len() > p {
        return Err(Error::invalid("requested row longer than the padded length"));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); p];
    buf[..=p / 2].copy_from_slice(&spec.bins);
    for k in 1..p / 2 {
        buf[p - k] = spec.bins[k].conj();
    }
    plan.process(&mut buf, true);
    let scale = 1.0 / p as f64;
    let max_re = buf.iter().fold(0.0f64, |m, z| m.max(z.re.abs()));
    let max_im = buf.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    let mass: f64 = spec.bins.iter().map(|z| z.norm()).sum();
    let tolerance = 1e-4 * max_re.max(1e-12 * mass);
    if max_im > tolerance {
        return Err(Error::ImaginaryResidue {
            residue: max_im * scale,
            tolerance: tolerance * scale,
        });
    }
    for (o, z) in out.iter_mut().zip(&buf) {
        *o = z.re * scale;
    }
    Ok(())
}

/// Transforms every angle row of `sinogram` after zero padding to `padded_len`.
pub fn rows_to_halfspectrum(sinogram: &Sinogram, padded_len: usize) -> Result<Vec<HalfSpectrum>> {
    let n = sinogram.num_detectors();
    check_padded_len(padded_len, n)?;
    let plan = Radix2::new(padded_len)?;
    let data = sinogram.to_f64();
    Ok(data
        .par_chunks(n)
        .map(|row| row_to_halfspectrum(row, &plan))
        .collect())
}

/// Inverse transforms and truncates every spectrum to `original_len` samples.
pub fn halfspectrum_to_rows(spectra: &[HalfSpectrum], original_len: usize) -> Result<Vec<Vec<f64>>> {
    let Some(first) = spectra.first() else {
        return Ok(Vec::new());
    };
    check_padded_len(first.padded_len, original_len)?;
    let plan = Radix2::new(first.padded_len)?;
    spectra
        .par_iter()
        .map(|s| {
            let mut row = vec![0.0; original_len];
            halfspectrum_to_row(s, &plan, &mut row).map(|_| row)
        })
        .collect()
}

/// Unnormalized 2D DFT of a real plane, natural (uncentered) bin order.
pub fn dft2d(plane: &Plane) -> Result<Vec<Complex64>> {
    let (h, w) = (plane.height, plane.width);
    let mut buf: Vec<Complex64> = plane.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform2d(&mut buf, h, w, false)?;
    Ok(buf)
}

/// Unnormalized 2D transform in place; `inverse` flips the exponent sign.
pub fn transform2d(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) -> Result<()> {
    let row_plan = Dft::new(w)?;
    let col_plan = Dft::new(h)?;
    buf.par_chunks_mut(w).for_each(|row| row_plan.process(row, inverse));
    let mut cols = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for c in 0..w {
            cols[c * h + r] = buf[r * w + c];
        }
    }
    cols.par_chunks_mut(h).for_each(|col| col_plan.process(col, inverse));
    for c in 0..w {
        for r in 0..h {
            buf[r * w + c] = cols[c * h + r];
        }
    }
    Ok(())
}

/// Position of natural-order bin `k` after centering (zero frequency at `n/2`).
#[inline]
pub fn centered_index(k: usize, n: usize) -> usize {
    (k + n / 2) % n
}

/// Centered magnitude of the 2D DFT.
pub fn dft2d_magnitude(image: &Image) -> Result<Plane> {
    let plane = image.to_plane();
    let spec = dft2d(&plane)?;
    let (h, w) = (plane.height, plane.width);
    let mut out = Plane::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            out.data[centered_index(r, h) * w + centered_index(c, w)] = spec[r * w + c].norm();
        }
    }
    Ok(out)
}

/// Centered frequency layout in cycles per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqGrid2D {
    pub height: usize,
    pub width: usize,
    /// Horizontal frequency of each column.
    pub fx: Vec<f64>,
    /// Vertical frequency of each row.
    pub fy: Vec<f64>,
}

impl FreqGrid2D {
    pub fn at(&self, row: usize, col: usize) -> (f64, f64) {
        (self.fx[col], self.fy[row])
    }

    pub fn radius(&self, row: usize, col: usize) -> f64 {
        self.fx[col].hypot(self.fy[row])
    }
}

fn centered_axis(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (i as f64 - (n / 2) as f64) / n as f64)
        .collect()
}

pub fn freq_grid(height: usize, width: usize) -> Result<FreqGrid2D> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("frequency grid needs positive dimensions"));
    }
    Ok(FreqGrid2D {
        height,
        width,
        fx: centered_axis(width),
        fy: centered_axis(height),
    })
}
