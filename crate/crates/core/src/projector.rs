//! Parallel-beam forward projection, pixel-driven backprojection and the
//! Beer-Lambert photon noise model.
//!
//! Coordinate frame: a `size x size` image covers the square `[-1, 1]^2`, so a
//! pixel is `2 / size` wide. Column `c` maps to `x = -1 + (c + 1/2) * 2/size`
//! and row `r` maps to `y = 1 - (r + 1/2) * 2/size` (row 0 at the top). A ray
//! with normal angle `θ` and signed detector offset `s` is the line
//! `x cos θ + y sin θ = s`. Detector `j` sits at `s_j = (j - (N-1)/2) * d`.

use rand::SeedableRng;
use rand_distr::{Distribution, Poisson};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Image, Plane, Sinogram};

/// Parallel-beam scan description.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub num_angles: usize,
    pub angle_start: f64,
    /// Also the `Δθ` weight of the backprojection sum.
    pub angle_step: f64,
    pub num_detectors: usize,
    /// Detector pitch in normalized image units.
    pub detector_spacing: f64,
}

impl Geometry {
    pub fn new(
        num_angles: usize,
        angle_start: f64,
        angle_step: f64,
        num_detectors: usize,
        detector_spacing: f64,
    ) -> Result<Self> {
        let g = Geometry {
            num_angles,
            angle_start,
            angle_step,
            num_detectors,
            detector_spacing,
        };
        g.validate()?;
        Ok(g)
    }

    /// `num_angles` equispaced angles over `[0, π)`.
    pub fn parallel(num_angles: usize, num_detectors: usize, detector_spacing: f64) -> Result<Self> {
        Self::new(
            num_angles,
            0.0,
            std::f64::consts::PI / num_angles.max(1) as f64,
            num_detectors,
            detector_spacing,
        )
    }

    /// Default scan for a `size x size` image: detector pitch equal to the
    /// pixel width and enough detectors (odd count, one at `s = 0`) to cover
    /// the image diagonal.
    pub fn for_image(size: usize, num_angles: usize) -> Result<Self> {
        Self::parallel(num_angles, default_detector_count(size), 2.0 / size as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGeometry(m));
        if self.num_angles < 1 {
            return bad("need at least one angle".into());
        }
        if self.num_detectors < 3 {
            return bad(format!("need at least 3 detectors, got {}", self.num_detectors));
        }
        if !(self.angle_step > 0.0) || !self.angle_step.is_finite() {
            return bad(format!("angle step must be positive, got {}", self.angle_step));
        }
        if !self.angle_start.is_finite() {
            return bad("angle start must be finite".into());
        }
        if self.num_angles as f64 * self.angle_step > std::f64::consts::PI + 1e-9 {
            return bad(format!(
                "{} angles of step {} exceed π",
                self.num_angles, self.angle_step
            ));
        }
        if !(self.detector_spacing > 0.0) || !self.detector_spacing.is_finite() {
            return bad(format!(
                "detector spacing must be positive, got {}",
                self.detector_spacing
            ));
        }
        Ok(())
    }

    pub fn angle(&self, i: usize) -> f64 {
        self.angle_start + i as f64 * self.angle_step
    }

    pub fn detector_offset(&self, j: usize) -> f64 {
        (j as f64 - (self.num_detectors as f64 - 1.0) / 2.0) * self.detector_spacing
    }

    /// Fractional detector index of offset `s`.
    #[inline]
    fn detector_coord(&self, s: f64) -> f64 {
        s / self.detector_spacing + (self.num_detectors as f64 - 1.0) / 2.0
    }

    fn trig(&self) -> Vec<(f64, f64)> {
        (0..self.num_angles)
            .map(|i| {
                let t = self.angle(i);
                (t.cos(), t.sin())
            })
            .collect()
    }
}

/// Smallest odd detector count whose pixel-pitch array spans the diagonal.
pub fn default_detector_count(size: usize) -> usize {
    let n = (size as f64 * std::f64::consts::SQRT_2).ceil() as usize;
    (n | 1).max(3)
}

/// Normalized coordinates of a pixel center.
#[inline]
pub fn pixel_center(row: usize, col: usize, size: usize) -> (f64, f64) {
    let px = 2.0 / size as f64;
    (-1.0 + (col as f64 + 0.5) * px, 1.0 - (row as f64 + 0.5) * px)
}

/// Bilinear sample with zero extension outside the image.
#[inline]
fn sample_bilinear(img: &Plane, x: f64, y: f64) -> f64 {
    let px = 2.0 / img.width as f64;
    let cx = (x + 1.0) / px - 0.5;
    let ry = (1.0 - y) / px - 0.5;
    let c0 = cx.floor();
    let r0 = ry.floor();
    let fc = cx - c0;
    let fr = ry - r0;
    let (c0, r0) = (c0 as i64, r0 as i64);
    let (h, w) = (img.height as i64, img.width as i64);
    if c0 < -1 || r0 < -1 || c0 >= w || r0 >= h {
        return 0.0;
    }
    let at = |r: i64, c: i64| {
        if r < 0 || c < 0 || r >= h || c >= w {
            0.0
        } else {
            img.data[(r * w + c) as usize]
        }
    };
    (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1))
        + fr * ((1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1))
}

/// Ray-driven line-integral projector.
#[derive(Clone, Copy, Debug)]
pub struct ForwardProjector {
    /// Sampling step along each ray, in pixels.
    pub ray_step: f64,
}

impl Default for ForwardProjector {
    fn default() -> Self {
        ForwardProjector { ray_step: 0.5 }
    }
}

impl ForwardProjector {
    pub fn new(ray_step: f64) -> Result<Self> {
        if !(ray_step > 0.0) || !ray_step.is_finite() {
            return Err(Error::invalid(format!("ray step must be positive, got {ray_step}")));
        }
        Ok(ForwardProjector { ray_step })
    }

    pub fn project(&self, image: &Image, geometry: &Geometry) -> Result<Sinogram> {
        if image.height() != image.width() {
            return Err(Error::invalid(format!(
                "forward projection needs a square image, got {}x{}",
                image.height(),
                image.width()
            )));
        }
        geometry.validate()?;
        let data = self.project_plane(&image.to_plane(), geometry);
        Sinogram::new(*geometry, data.into_iter().map(|v| v as f32).collect())
    }

    /// Line integrals of `img` (assumed square) as an `M x N` row-major buffer.
    pub fn project_plane(&self, img: &Plane, geometry: &Geometry) -> Vec<f64> {
        let n = geometry.num_detectors;
        let px = 2.0 / img.width as f64;
        let dt = self.ray_step * px;
        // Half-length of every ray: the image diagonal plus one pixel of margin.
        let reach = std::f64::consts::SQRT_2 + px;
        let half = (reach / dt).ceil() as i64;
        let trig = geometry.trig();
        let mut out = vec![0.0; geometry.num_angles * n];
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let (c, s) = trig[i];
            for (j, cell) in row.iter_mut().enumerate() {
                let off = geometry.detector_offset(j);
                let (x0, y0) = (off * c, off * s);
                let mut acc = 0.0;
                for k in -half..=half {
                    let t = k as f64 * dt;
                    acc += sample_bilinear(img, x0 - t * s, y0 + t * c);
                }
                *cell = acc * dt;
            }
        });
        out
    }
}

pub fn forward_project(image: &Image, geometry: &Geometry) -> Result<Sinogram> {
    ForwardProjector::default().project(image, geometry)
}

/// Discrete backprojection `f(x, y) = Σ_i p(θ_i, x cos θ_i + y sin θ_i) Δθ`
/// with linear interpolation along the detector axis.
pub fn back_project(sinogram: &Sinogram, geometry: &Geometry, out_size: usize) -> Result<Image> {
    if sinogram.geometry() != geometry {
        return Err(Error::GeometryMismatch);
    }
    if out_size == 0 {
        return Err(Error::invalid("output size must be positive"));
    }
    back_project_plane(&sinogram.to_f64(), geometry, out_size).to_image()
}

/// Interpolation stencil of pixel `(x, y)` on row `(c, s)`: lower detector
/// index and weight of the upper neighbour. `None` outside the detector.
#[inline]
fn stencil(geometry: &Geometry, x: f64, y: f64, c: f64, s: f64) -> Option<(usize, f64)> {
    let u = geometry.detector_coord(x * c + y * s);
    let last = (geometry.num_detectors - 1) as f64;
    if !(0.0..=last).contains(&u) {
        return None;
    }
    let j0 = (u.floor() as usize).min(geometry.num_detectors - 2);
    Some((j0, u - j0 as f64))
}

pub fn back_project_plane(sino: &[f64], geometry: &Geometry, out_size: usize) -> Plane {
    let n = geometry.num_detectors;
    let trig = geometry.trig();
    let dtheta = geometry.angle_step;
    let mut out = Plane::zeros(out_size, out_size);
    out.data
        .par_chunks_mut(out_size)
        .enumerate()
        .for_each(|(r, row)| {
            for (col, px) in row.iter_mut().enumerate() {
                let (x, y) = pixel_center(r, col, out_size);
                let mut acc = 0.0;
                for (i, &(c, s)) in trig.iter().enumerate() {
                    if let Some((j0, f)) = stencil(geometry, x, y, c, s) {
                        let p = &sino[i * n..(i + 1) * n];
                        acc += (1.0 - f) * p[j0] + f * p[j0 + 1];
                    }
                }
                *px = acc * dtheta;
            }
        });
    out
}

/// Exact transpose of [`back_project_plane`]: scatters every pixel of `image`
/// onto the two detector cells it reads from, weighted by `Δθ`.
pub fn back_project_adjoint(image: &Plane, geometry: &Geometry) -> Vec<f64> {
    let n = geometry.num_detectors;
    let size = image.width;
    let trig = geometry.trig();
    let dtheta = geometry.angle_step;
    let mut out = vec![0.0; geometry.num_angles * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let (c, s) = trig[i];
        for r in 0..image.height {
            for col in 0..size {
                let g = image.data[r * size + col];
                if g == 0.0 {
                    continue;
                }
                let (x, y) = pixel_center(r, col, size);
                if let Some((j0, f)) = stencil(geometry, x, y, c, s) {
                    row[j0] += dtheta * (1.0 - f) * g;
                    row[j0 + 1] += dtheta * f * g;
                }
            }
        }
    });
    out
}

/// Photon budget of the noise model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PhotonCount {
    /// Noise disabled; the sinogram passes through unchanged.
    Infinite,
    Finite(f64),
}

impl PhotonCount {
    pub fn from_f64(i0: f64) -> Result<Self> {
        if i0.is_infinite() && i0 > 0.0 {
            Ok(PhotonCount::Infinite)
        } else if i0 > 0.0 {
            Ok(PhotonCount::Finite(i0))
        } else {
            Err(Error::invalid(format!("photon count must be positive, got {i0}")))
        }
    }

    pub fn as_option(&self) -> Option<f64> {
        match self {
            PhotonCount::Infinite => None,
            PhotonCount::Finite(v) => Some(*v),
        }
    }
}

/// SplitMix64 finalizer, used to derive independent per-row stream seeds.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulates transmitted photon counts `n ~ Poisson(I0 exp(-p))` and returns
/// `-ln(max(n, 1) / I0)`.
///
/// Row `i` draws from its own Xoshiro256++ stream seeded with
/// `splitmix64(seed ^ splitmix64(i))`, so the result does not depend on how
/// rows are scheduled across threads.
pub fn apply_noise(sinogram: &Sinogram, photons: PhotonCount, seed: u64) -> Result<Sinogram> {
    if sinogram.data().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid(
            "sinogram has negative line integrals; the noise model needs p >= 0",
        ));
    }
    let i0 = match photons {
        PhotonCount::Infinite => return Ok(sinogram.clone()),
        PhotonCount::Finite(i0) => i0,
    };
    let n = sinogram.num_detectors();
    let mut data = sinogram.data().to_vec();
    data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(splitmix64(seed ^ splitmix64(i as u64)));
        for v in row.iter_mut() {
            let lambda = i0 * (-(*v as f64)).exp();
            let count = if lambda > 0.0 {
                Poisson::new(lambda).expect("positive rate").sample(&mut rng)
            } else {
                0.0
            };
            *v = (-(count.max(1.0) / i0).ln()) as f32;
        }
    });
    Sinogram::new(*sinogram.geometry(), data)
}
