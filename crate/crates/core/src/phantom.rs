//! Ellipse phantoms and synthetic (ground truth, clean sinogram, noisy
//! sinogram) datasets.
//!
//! Randomness comes from Xoshiro256++ (`rand_xoshiro`), seeded through
//! SplitMix64. Sample `i` of split `s` uses the stream
//! `splitmix64(seed ^ splitmix64(split_tag(s) + i))` for its phantom, and the
//! noise model receives a second seed derived from the first. Generation is a
//! pure function of the configuration.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projector::{
    apply_noise, pixel_center, splitmix64, ForwardProjector, Geometry, PhotonCount,
};
use crate::raster::{read_image, read_sinogram, write_image, write_sinogram, Image, Sinogram};

/// An ellipse in normalized coordinates adding `rho` to every pixel center it
/// covers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub x0: f64,
    pub y0: f64,
    /// Semi-axis along the rotated x direction.
    pub a: f64,
    pub b: f64,
    /// Counter-clockwise rotation in radians.
    pub phi: f64,
    pub rho: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi.sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// The original ten-ellipse Shepp-Logan head (Shepp & Logan, 1974, Table 1):
/// center, semi-axes, rotation in degrees, additive density. Values span
/// `[0, 2]`, with the skull at 2 and brain tissue near 1.
const SHEPP_LOGAN_TABLE: [(f64, f64, f64, f64, f64, f64); 10] = [
    (0.0, 0.0, 0.69, 0.92, 0.0, 2.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98),
    (0.22, 0.0, 0.11, 0.31, -18.0, -0.02),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -0.02),
    (0.0, 0.35, 0.21, 0.25, 0.0, 0.01),
    (0.0, 0.1, 0.046, 0.046, 0.0, 0.01),
    (0.0, -0.1, 0.046, 0.046, 0.0, 0.01),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 0.01),
    (0.0, -0.606, 0.023, 0.023, 0.0, 0.01),
    (0.06, -0.605, 0.023, 0.046, 0.0, 0.01),
];

pub fn shepp_logan_ellipses() -> Vec<Ellipse> {
    SHEPP_LOGAN_TABLE
        .iter()
        .map(|&(x0, y0, a, b, deg, rho)| Ellipse {
            x0,
            y0,
            a,
            b,
            phi: deg.to_radians(),
            rho,
        })
        .collect()
}

/// Sums `rho` of every ellipse covering each pixel center.
pub fn rasterize(ellipses: &[Ellipse], size: usize) -> Vec<f64> {
    let mut data = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            let (x, y) = pixel_center(r, c, size);
            data[r * size + c] = ellipses
                .iter()
                .filter(|e| e.contains(x, y))
                .map(|e| e.rho)
                .sum();
        }
    }
    data
}

fn check_size(size: usize) -> Result<()> {
    if size < 8 {
        return Err(Error::invalid(format!("phantom size must be >= 8, got {size}")));
    }
    Ok(())
}

pub fn shepp_logan(size: usize) -> Result<Image> {
    check_size(size)?;
    let data = rasterize(&shepp_logan_ellipses(), size);
    Image::new(size, size, data.into_iter().map(|v| v as f32).collect())
}

/// Draws `count` ellipses inside the unit disk.
///
/// The first ellipse is a large "body" with density in `[0.3, 1]`; the rest
/// are smaller inserts with density in `[-0.4, 0.8]`.
pub fn random_ellipses(count: usize, rng: &mut impl Rng) -> Vec<Ellipse> {
    (0..count)
        .map(|i| {
            let (a, b, rho): (f64, f64, f64) = if i == 0 {
                (
                    rng.random_range(0.55..0.85),
                    rng.random_range(0.55..0.85),
                    rng.random_range(0.3..1.0),
                )
            } else {
                (
                    rng.random_range(0.04..0.4),
                    rng.random_range(0.04..0.4),
                    rng.random_range(-0.4..0.8),
                )
            };
            // Center uniformly in the disk that keeps the ellipse inside |r| < 0.95.
            let reach = 0.95 - a.max(b);
            let radius = reach * rng.random::<f64>().sqrt();
            let angle = rng.random_range(0.0..2.0 * PI);
            Ellipse {
                x0: radius * angle.cos(),
                y0: radius * angle.sin(),
                a,
                b,
                phi: rng.random_range(0.0..PI),
                rho,
            }
        })
        .collect()
}

pub fn random_ellipse_phantom(size: usize, num_ellipses: usize, seed: u64) -> Result<Image> {
    check_size(size)?;
    if !(1..=32).contains(&num_ellipses) {
        return Err(Error::invalid(format!(
            "number of ellipses must be in 1..=32, got {num_ellipses}"
        )));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let ellipses = random_ellipses(num_ellipses, &mut rng);
    let data = rasterize(&ellipses, size);
    Image::new(size, size, data.into_iter().map(|v| v.max(0.0) as f32).collect())
}

/// Dataset generation knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub size: usize,
    pub geometry: Geometry,
    /// `None` disables noise.
    pub photons: Option<f64>,
    pub seed: u64,
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    /// Forward projector sampling step in pixels.
    pub ray_step: f64,
}

impl DatasetConfig {
    /// Desk-scale defaults: 200/20/50 samples at 64x64, 96 angles.
    pub fn desk_scale() -> Self {
        DatasetConfig {
            train: 200,
            val: 20,
            test: 50,
            size: 64,
            geometry: Geometry::for_image(64, 96).expect("valid default geometry"),
            photons: Some(DEFAULT_PHOTONS),
            seed: 0,
            min_ellipses: 4,
            max_ellipses: 10,
            ray_step: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_size(self.size)?;
        self.geometry.validate()?;
        if self.min_ellipses < 1 || self.max_ellipses > 32 || self.min_ellipses > self.max_ellipses {
            return Err(Error::invalid(format!(
                "ellipse count range {}..={} must lie within 1..=32",
                self.min_ellipses, self.max_ellipses
            )));
        }
        if let Some(p) = self.photons {
            PhotonCount::from_f64(p)?;
        }
        ForwardProjector::new(self.ray_step)?;
        Ok(())
    }

    fn photon_count(&self) -> PhotonCount {
        match self.photons {
            Some(p) => PhotonCount::from_f64(p).expect("validated"),
            None => PhotonCount::Infinite,
        }
    }
}

/// Default incident photon count per detector cell.
pub const DEFAULT_PHOTONS: f64 = 2000.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub id: String,
    pub gt: String,
    pub sino: String,
    pub noisy: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub name: String,
    pub count: usize,
    pub samples: Vec<SampleFiles>,
}

/// Index of a generated dataset, stored as `manifest.json`. File names are
/// relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub image_size: usize,
    pub geometry: Geometry,
    /// Incident photons; `null` when noise is disabled. Training pairs the
    /// noisy sinogram with the clean ground truth.
    pub photon_count: Option<f64>,
    pub seed: u64,
    pub splits: Vec<SplitManifest>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl DatasetManifest {
    pub fn split(&self, name: &str) -> Result<&SplitManifest> {
        self.splits.iter().find(|s| s.name == name).ok_or_else(|| {
            Error::invalid(format!(
                "unknown split `{name}`; available: {}",
                self.splits.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn total_samples(&self) -> usize {
        self.splits.iter().map(|s| s.count).sum()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Loads a manifest from a dataset directory or a path to the JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_owned() };
        let dir = file.parent().map(Path::to_owned).unwrap_or_default();
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Json { path: file.clone(), source: e })?;
        manifest.geometry.validate()?;
        for split in &manifest.splits {
            if split.count != split.samples.len() {
                return Err(Error::invalid(format!(
                    "split `{}` declares {} samples but lists {}",
                    split.name,
                    split.count,
                    split.samples.len()
                )));
            }
        }
        Ok((manifest, dir))
    }

    /// Reads and checks every file of the listed splits.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for split in &self.splits {
            for s in &split.samples {
                self.load_sample(dir, s)?;
            }
        }
        Ok(())
    }

    /// Ground truth, clean sinogram and noisy sinogram of one sample.
    pub fn load_sample(&self, dir: &Path, files: &SampleFiles) -> Result<(Image, Sinogram, Sinogram)> {
        let gt = read_image(dir.join(&files.gt))?;
        let sino = read_sinogram(dir.join(&files.sino))?;
        let noisy = read_sinogram(dir.join(&files.noisy))?;
        if gt.height() != self.image_size || gt.width() != self.image_size {
            return Err(Error::invalid(format!(
                "{}: expected {}x{} ground truth",
                files.gt, self.image_size, self.image_size
            )));
        }
        if sino.geometry() != &self.geometry || noisy.geometry() != &self.geometry {
            return Err(Error::GeometryMismatch);
        }
        Ok((gt, sino, noisy))
    }
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

fn split_tag(split: usize) -> u64 {
    (split as u64 + 1) << 40
}

/// Seed of the phantom stream of sample `index` in split number `split`.
pub fn sample_seed(seed: u64, split: usize, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(split_tag(split) + index as u64))
}

pub fn generate_dataset(out_dir: impl AsRef<Path>, config: &DatasetConfig) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let projector = ForwardProjector::new(config.ray_step)?;
    let counts = [config.train, config.val, config.test];
    let mut splits = Vec::with_capacity(3);
    for (si, (&name, &count)) in SPLITS.iter().zip(&counts).enumerate() {
        let samples: Vec<SampleFiles> = (0..count)
            .into_par_iter()
            .map(|index| -> Result<SampleFiles> {
                let seed = sample_seed(config.seed, si, index);
                let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
                let num = rng.random_range(config.min_ellipses..=config.max_ellipses);
                let gt = random_ellipse_phantom(config.size, num, rng.random())?;
                let clean = projector.project(&gt, &config.geometry)?;
                let noisy = apply_noise(&clean, config.photon_count(), splitmix64(seed))?;
                let files = SampleFiles {
                    id: format!("{name}_{index}"),
                    gt: format!("{name}_{index}_gt.fbr"),
                    sino: format!("{name}_{index}_sino.fbr"),
                    noisy: format!("{name}_{index}_noisy.fbr"),
                };
                write_image(out_dir.join(&files.gt), &gt)?;
                write_sinogram(out_dir.join(&files.sino), &clean)?;
                write_sinogram(out_dir.join(&files.noisy), &noisy)?;
                Ok(files)
            })
            .collect::<Result<_>>()?;
        splits.push(SplitManifest {
            name: name.to_owned(),
            count,
            samples,
        });
    }
    let manifest = DatasetManifest {
        image_size: config.size,
        geometry: config.geometry,
        photon_count: config.photons,
        seed: config.seed,
        splits,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}
