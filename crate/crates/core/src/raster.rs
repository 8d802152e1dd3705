//! Raster types and the on-disk container shared by images and sinograms.
//!
//! File layout (all header lines are ASCII, terminated by `\n`):
//!
//! ```text
//! FBPRASTER 1
//! dtype=f32
//! h=<int>
//! w=<int>
//! angles=<start>,<step>,<count>     (sinograms only)
//! det_spacing=<float>               (sinograms only)
//! data:
//! <h*w little-endian IEEE-754 f32, row-major>
//! ```
//!
//! Header floats are written with Rust's shortest round-trip formatting, so
//! geometry survives a write/read cycle bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::projector::Geometry;

const MAGIC: &str = "FBPRASTER 1";

/// A row-major `height x width` grid of attenuation values.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height.checked_mul(width) != Some(data.len()) {
            return Err(Error::ShapeMismatch {
                height,
                width,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "image" });
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn to_plane(&self) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Double precision raster used inside the numerical kernels.
///
/// Public entry points take and return [`Image`]; planes carry intermediate
/// results where f32 rounding would spoil gradients and accumulations.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height.checked_mul(width) != Some(data.len()) {
            return Err(Error::ShapeMismatch {
                height,
                width,
                len: data.len(),
            });
        }
        Ok(Plane {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Plane {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Rounds to f32, failing on non-finite values.
    pub fn to_image(&self) -> Result<Image> {
        Image::new(
            self.height,
            self.width,
            self.data.iter().map(|&v| v as f32).collect(),
        )
    }
}

/// An `M x N` grid of line integrals, row `i` at angle `θ_i`, column `j` at
/// detector `s_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    geometry: Geometry,
    data: Vec<f32>,
}

impl Sinogram {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        let (m, n) = (geometry.num_angles, geometry.num_detectors);
        if m.checked_mul(n) != Some(data.len()) {
            return Err(Error::ShapeMismatch {
                height: m,
                width: n,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "sinogram" });
        }
        Ok(Sinogram { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        let len = geometry.num_angles * geometry.num_detectors;
        Sinogram {
            geometry,
            data: vec![0.0; len],
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn num_angles(&self) -> usize {
        self.geometry.num_angles
    }

    pub fn num_detectors(&self) -> usize {
        self.geometry.num_detectors
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let n = self.num_detectors();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Anything that can live in a raster file.
#[derive(Clone, Debug, PartialEq)]
pub enum Raster {
    Image(Image),
    Sinogram(Sinogram),
}

impl Raster {
    pub fn into_image(self) -> Option<Image> {
        match self {
            Raster::Image(img) => Some(img),
            Raster::Sinogram(_) => None,
        }
    }

    pub fn into_sinogram(self) -> Option<Sinogram> {
        match self {
            Raster::Sinogram(s) => Some(s),
            Raster::Image(_) => None,
        }
    }
}

impl From<Image> for Raster {
    fn from(img: Image) -> Self {
        Raster::Image(img)
    }
}

impl From<Sinogram> for Raster {
    fn from(s: Sinogram) -> Self {
        Raster::Sinogram(s)
    }
}

/// Parsed header of a raster file.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterHeader {
    pub height: usize,
    pub width: usize,
    pub geometry: Option<GeometryBlock>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryBlock {
    pub angle_start: f64,
    pub angle_step: f64,
    pub angle_count: usize,
    pub detector_spacing: f64,
}

fn encode(header: &RasterHeader, payload: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(128 + payload.len() * 4);
    let mut text = format!(
        "{MAGIC}\ndtype=f32\nh={}\nw={}\n",
        header.height, header.width
    );
    if let Some(g) = &header.geometry {
        text.push_str(&format!(
            "angles={},{},{}\ndet_spacing={}\n",
            g.angle_start, g.angle_step, g.angle_count, g.detector_spacing
        ));
    }
    text.push_str("data:\n");
    out.extend_from_slice(text.as_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn image_bytes(img: &Image) -> Vec<u8> {
    encode(
        &RasterHeader {
            height: img.height,
            width: img.width,
            geometry: None,
        },
        &img.data,
    )
}

fn sinogram_bytes(s: &Sinogram) -> Vec<u8> {
    let g = &s.geometry;
    encode(
        &RasterHeader {
            height: g.num_angles,
            width: g.num_detectors,
            geometry: Some(GeometryBlock {
                angle_start: g.angle_start,
                angle_step: g.angle_step,
                angle_count: g.num_angles,
                detector_spacing: g.detector_spacing,
            }),
        },
        &s.data,
    )
}

pub fn write_raster(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    match raster {
        Raster::Image(img) => write_image(path, img),
        Raster::Sinogram(s) => write_sinogram(path, s),
    }
}

pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image_bytes(image)).map_err(|e| Error::io(path, e))
}

pub fn write_sinogram(path: impl AsRef<Path>, sinogram: &Sinogram) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, sinogram_bytes(sinogram)).map_err(|e| Error::io(path, e))
}

/// Reads one header line starting at `*pos`, advancing past its newline.
fn next_line<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::BadHeader {
        path: path.to_owned(),
        reason: "unterminated header".into(),
    })?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| Error::BadHeader {
        path: path.to_owned(),
        reason: "header is not ASCII".into(),
    })
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<(RasterHeader, usize)> {
    let bad = |reason: String| Error::BadHeader {
        path: path.to_owned(),
        reason,
    };
    if !bytes.starts_with(MAGIC.as_bytes()) || bytes.get(MAGIC.len()) != Some(&b'\n') {
        return Err(Error::BadMagic {
            path: path.to_owned(),
        });
    }
    let mut pos = MAGIC.len() + 1;
    let mut dtype = None;
    let mut height: Option<u64> = None;
    let mut width: Option<u64> = None;
    let mut angles: Option<(f64, f64, usize)> = None;
    let mut spacing: Option<f64> = None;
    loop {
        let line = next_line(bytes, &mut pos, path)?;
        if line == "data:" {
            break;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got `{line}`")))?;
        match key {
            "dtype" => dtype = Some(value.to_owned()),
            "h" => height = Some(value.parse().map_err(|_| bad(format!("bad height `{value}`")))?),
            "w" => width = Some(value.parse().map_err(|_| bad(format!("bad width `{value}`")))?),
            "angles" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 3 {
                    return Err(bad(format!("bad angles `{value}`")));
                }
                let start = parts[0].parse().map_err(|_| bad(format!("bad angles `{value}`")))?;
                let step = parts[1].parse().map_err(|_| bad(format!("bad angles `{value}`")))?;
                let count = parts[2].parse().map_err(|_| bad(format!("bad angles `{value}`")))?;
                angles = Some((start, step, count));
            }
            "det_spacing" => {
                spacing = Some(value.parse().map_err(|_| bad(format!("bad det_spacing `{value}`")))?)
            }
            other => return Err(bad(format!("unknown key `{other}`"))),
        }
    }
    if dtype.as_deref() != Some("f32") {
        return Err(bad(format!("unsupported dtype {dtype:?}")));
    }
    let (h, w) = match (height, width) {
        (Some(h), Some(w)) => (h, w),
        _ => return Err(bad("missing h or w".into())),
    };
    let overflow = || Error::DimensionOverflow {
        path: path.to_owned(),
        height: h,
        width: w,
    };
    let height = usize::try_from(h).map_err(|_| overflow())?;
    let width = usize::try_from(w).map_err(|_| overflow())?;
    height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(overflow)?;
    let geometry = match (angles, spacing) {
        (None, None) => None,
        (Some((angle_start, angle_step, angle_count)), Some(detector_spacing)) => {
            Some(GeometryBlock {
                angle_start,
                angle_step,
                angle_count,
                detector_spacing,
            })
        }
        _ => return Err(bad("geometry block needs both angles and det_spacing".into())),
    };
    Ok((
        RasterHeader {
            height,
            width,
            geometry,
        },
        pos,
    ))
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, offset) = parse_header(&bytes, path)?;
    let expected = header.height * header.width * 4;
    let found = bytes.len() - offset;
    if found < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_owned(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::BadHeader {
            path: path.to_owned(),
            reason: format!("{} trailing bytes after payload", found - expected),
        });
    }
    let data: Vec<f32> = bytes[offset..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    match header.geometry {
        None => Ok(Raster::Image(Image::new(header.height, header.width, data)?)),
        Some(g) => {
            if g.angle_count != header.height {
                return Err(Error::BadHeader {
                    path: path.to_owned(),
                    reason: format!("angle count {} != h {}", g.angle_count, header.height),
                });
            }
            let geometry = Geometry::new(
                g.angle_count,
                g.angle_start,
                g.angle_step,
                header.width,
                g.detector_spacing,
            )?;
            Ok(Raster::Sinogram(Sinogram::new(geometry, data)?))
        }
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    read_raster(path)?.into_image().ok_or_else(|| Error::BadHeader {
        path: path.to_owned(),
        reason: "expected an image, found a sinogram".into(),
    })
}

pub fn read_sinogram(path: impl AsRef<Path>) -> Result<Sinogram> {
    let path = path.as_ref();
    read_raster(path)?.into_sinogram().ok_or_else(|| Error::BadHeader {
        path: path.to_owned(),
        reason: "expected a sinogram, found an image".into(),
    })
}

/// Maps `v` to an 8-bit gray level over the window `[lo, hi]`.
pub fn window_level(v: f32, lo: f32, hi: f32) -> u8 {
    let t = ((v as f64 - lo as f64) / (hi as f64 - lo as f64)).clamp(0.0, 1.0);
    (255.0 * t).round() as u8
}

/// Writes a binary (`P5`) PGM preview of `image`.
pub fn write_preview(path: impl AsRef<Path>, image: &Image, lo: f32, hi: f32) -> Result<()> {
    let path = path.as_ref();
    if !(hi > lo) {
        return Err(Error::invalid(format!(
            "preview window must satisfy hi > lo, got [{lo}, {hi}]"
        )));
    }
    let mut out = Vec::with_capacity(32 + image.data.len());
    write!(out, "P5\n{} {}\n255\n", image.width, image.height).expect("write to Vec");
    out.extend(image.data.iter().map(|&v| window_level(v, lo, hi)));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
