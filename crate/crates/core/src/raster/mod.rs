//! Multi-band reflectance rasters and the `.mbr` container.
//!
//! A `.mbr` file is a single-line UTF-8 JSON header terminated by `\n`,
//! followed by the raw row-major `H·W·C` payload. Rasters are always written
//! as little-endian `f32`; `u16le` payloads are accepted on ingest and
//! normalised by the header's `max_value`.

mod histogram;
mod resample;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub use histogram::{histogram_match, HIST_BINS};
pub use resample::{
    bicubic_resample, cubic_weight, reflect_index, resize_bicubic, resize_plane_bicubic,
    ScaleFactor,
};

/// Wavelength window used to identify the near-infrared band.
pub const NIR_WINDOW_NM: (f64, f64) = (760.0, 900.0);

const RESERVED_KEYS: [&str; 7] = [
    "h",
    "w",
    "c",
    "dtype",
    "wavelengths_nm",
    "gsd_m",
    "max_value",
];

/// An `H×W×C` reflectance grid in `[0, 1]` with per-band wavelengths.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiBandRaster {
    data: Array3<f32>,
    band_wavelengths_nm: Vec<f64>,
    gsd_m: f64,
    tags: BTreeMap<String, String>,
}

impl MultiBandRaster {
    /// Builds a raster from an `(h, w, c)` array, clipping values into `[0, 1]`.
    pub fn new(data: Array3<f32>, band_wavelengths_nm: Vec<f64>, gsd_m: f64) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Validation(format!("empty raster {h}x{w}x{c}")));
        }
        if band_wavelengths_nm.len() != c {
            return Err(Error::Validation(format!(
                "{} wavelengths for {c} bands",
                band_wavelengths_nm.len()
            )));
        }
        if band_wavelengths_nm
            .iter()
            .any(|&l| !(l.is_finite() && l > 0.0))
        {
            return Err(Error::Validation("wavelengths must be positive".into()));
        }
        if !(gsd_m.is_finite() && gsd_m > 0.0) {
            return Err(Error::Validation(format!("invalid gsd {gsd_m}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "raster contains non-finite values".into(),
            ));
        }
        let data = data.mapv_into(|v| v.clamp(0.0, 1.0));
        Ok(Self {
            data,
            band_wavelengths_nm,
            gsd_m,
            tags: BTreeMap::new(),
        })
    }

    /// Builds a raster from `f64` values (clipped and rounded to `f32`).
    pub fn from_f64(data: &Array3<f64>, band_wavelengths_nm: Vec<f64>, gsd_m: f64) -> Result<Self> {
        Self::new(data.mapv(|v| v as f32), band_wavelengths_nm, gsd_m)
    }

    /// Stacks `H×W` planes into a raster.
    pub fn from_planes(
        planes: &[Array2<f64>],
        band_wavelengths_nm: Vec<f64>,
        gsd_m: f64,
    ) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Validation("no planes".into()))?;
        let (h, w) = first.dim();
        if planes.iter().any(|p| p.dim() != (h, w)) {
            return Err(Error::Validation("planes differ in size".into()));
        }
        let data =
            Array3::from_shape_fn((h, w, planes.len()), |(y, x, b)| planes[b][[y, x]] as f32);
        Self::new(data, band_wavelengths_nm, gsd_m)
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn bands(&self) -> usize {
        self.data.dim().2
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn band_wavelengths_nm(&self) -> &[f64] {
        &self.band_wavelengths_nm
    }

    pub fn gsd_m(&self) -> f64 {
        self.gsd_m
    }

    pub fn tags(&self) -> &BTreeMap<String, String> {
        &self.tags
    }

    pub fn set_tag(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.tags.insert(key.into(), value.into());
    }

    pub fn with_gsd(mut self, gsd_m: f64) -> Self {
        self.gsd_m = gsd_m;
        self
    }

    pub fn band(&self, b: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(Axis(2), b)
    }

    /// Band `b` as an `f64` plane.
    pub fn plane(&self, b: usize) -> Array2<f64> {
        self.band(b).mapv(f64::from)
    }

    pub fn planes(&self) -> Vec<Array2<f64>> {
        (0..self.bands()).map(|b| self.plane(b)).collect()
    }

    pub fn to_f64(&self) -> Array3<f64> {
        self.data.mapv(f64::from)
    }

    /// Index of the first band whose wavelength lies in the NIR window.
    pub fn nir_band(&self) -> Option<usize> {
        self.band_wavelengths_nm
            .iter()
            .position(|&l| (NIR_WINDOW_NM.0..=NIR_WINDOW_NM.1).contains(&l))
    }

    /// Extracts the window `[y0, y0+h) × [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height() || x0 + w > self.width() || h == 0 || w == 0 {
            return Err(Error::Argument(format!(
                "crop {h}x{w}@({y0},{x0}) outside {}x{}",
                self.height(),
                self.width()
            )));
        }
        let data = self
            .data
            .slice(ndarray::s![y0..y0 + h, x0..x0 + w, ..])
            .to_owned();
        Ok(Self {
            data,
            band_wavelengths_nm: self.band_wavelengths_nm.clone(),
            gsd_m: self.gsd_m,
            tags: self.tags.clone(),
        })
    }

    /// Selects a subset of bands in the given order.
    pub fn select_bands(&self, bands: &[usize]) -> Result<Self> {
        if bands.is_empty() || bands.iter().any(|&b| b >= self.bands()) {
            return Err(Error::Argument(format!("invalid band selection {bands:?}")));
        }
        let (h, w, _) = self.dims();
        let data =
            Array3::from_shape_fn((h, w, bands.len()), |(y, x, i)| self.data[[y, x, bands[i]]]);
        let wl = bands.iter().map(|&b| self.band_wavelengths_nm[b]).collect();
        Ok(Self {
            data,
            band_wavelengths_nm: wl,
            gsd_m: self.gsd_m,
            tags: self.tags.clone(),
        })
    }

    /// Raw little-endian payload bytes as written to disk.
    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in self.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn header(&self) -> Value {
        let (h, w, c) = self.dims();
        let mut map = Map::new();
        for (k, v) in &self.tags {
            map.insert(k.clone(), Value::String(v.clone()));
        }
        map.insert("h".into(), h.into());
        map.insert("w".into(), w.into());
        map.insert("c".into(), c.into());
        map.insert("dtype".into(), "f32le".into());
        map.insert(
            "wavelengths_nm".into(),
            self.band_wavelengths_nm.clone().into(),
        );
        map.insert("gsd_m".into(), self.gsd_m.into());
        Value::Object(map)
    }

    /// Serialises to the `.mbr` byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header()).expect("header serialises");
        out.push(b'\n');
        out.extend_from_slice(&self.payload_bytes());
        out
    }

    /// Parses the `.mbr` byte layout.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("missing header terminator".into()))?;
        let header: Value = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        let obj = header
            .as_object()
            .ok_or_else(|| Error::Format("header is not an object".into()))?;
        let dim = |key: &str| -> Result<usize> {
            obj.get(key)
                .and_then(Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| Error::Format(format!("header field `{key}` missing or invalid")))
        };
        let (h, w, c) = (dim("h")?, dim("w")?, dim("c")?);
        let dtype = obj
            .get("dtype")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Format("header field `dtype` missing".into()))?;
        let wavelengths: Vec<f64> = obj
            .get("wavelengths_nm")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Format("header field `wavelengths_nm` missing".into()))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| Error::Format("non-numeric wavelength".into()))
            })
            .collect::<Result<_>>()?;
        let gsd_m = obj
            .get("gsd_m")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Format("header field `gsd_m` missing".into()))?;

        let payload = &bytes[nl + 1..];
        let n = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::Validation("dimensions overflow".into()))?;
        let values: Vec<f32> = match dtype {
            "f32le" => {
                check_payload(payload.len(), n, 4, c)?;
                payload
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect()
            }
            "u16le" => {
                check_payload(payload.len(), n, 2, c)?;
                let max = obj
                    .get("max_value")
                    .and_then(Value::as_f64)
                    .filter(|m| *m > 0.0)
                    .ok_or_else(|| {
                        Error::Format("u16le payload needs a positive `max_value`".into())
                    })?;
                payload
                    .chunks_exact(2)
                    .map(|b| (f64::from(u16::from_le_bytes([b[0], b[1]])) / max) as f32)
                    .collect()
            }
            other => return Err(Error::Format(format!("unsupported dtype `{other}`"))),
        };
        let data = Array3::from_shape_vec((h, w, c), values)
            .map_err(|e| Error::Validation(e.to_string()))?;
        let mut raster = Self::new(data, wavelengths, gsd_m)?;
        for (k, v) in obj {
            if RESERVED_KEYS.contains(&k.as_str()) {
                continue;
            }
            let s = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            raster.tags.insert(k.clone(), s);
        }
        Ok(raster)
    }

    /// Writes a PNG preview using one (grey) or three (RGB) bands.
    pub fn save_png(&self, path: impl AsRef<Path>, bands: &[usize]) -> Result<()> {
        let (h, w, c) = self.dims();
        let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        match *bands {
            [g] if g < c => {
                let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
                    image::Luma([to_u8(self.data[[y as usize, x as usize, g]])])
                });
                img.save(path)?;
            }
            [r, g, b] if r < c && g < c && b < c => {
                let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
                    let (y, x) = (y as usize, x as usize);
                    image::Rgb([
                        to_u8(self.data[[y, x, r]]),
                        to_u8(self.data[[y, x, g]]),
                        to_u8(self.data[[y, x, b]]),
                    ])
                });
                img.save(path)?;
            }
            _ => {
                return Err(Error::Argument(format!(
                    "PNG export needs 1 or 3 valid bands, got {bands:?}"
                )))
            }
        }
        Ok(())
    }
}

fn check_payload(len: usize, n: usize, width: usize, c: usize) -> Result<()> {
    if len != n * width {
        let planes = if n == 0 {
            0.0
        } else {
            len as f64 / (n / c * width) as f64
        };
        return Err(Error::Validation(format!(
            "payload holds {len} bytes ({planes:.2} planes), header declares {c} planes ({} bytes)",
            n * width
        )));
    }
    Ok(())
}

/// Writes a raster to a `.mbr` file.
pub fn save_raster(raster: &MultiBandRaster, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, raster.to_bytes())?;
    Ok(())
}

/// Reads a `.mbr` file.
pub fn load_raster(path: impl AsRef<Path>) -> Result<MultiBandRaster> {
    let bytes = fs::read(path)?;
    MultiBandRaster::from_bytes(&bytes)
}
