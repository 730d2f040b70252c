//! Separable bicubic (Catmull-Rom, `a = -0.5`) resampling with reflect borders.

use ndarray::{Array2, Array3};

use super::MultiBandRaster;
use crate::error::{Error, Result};

const CUBIC_A: f64 = -0.5;

/// A positive rational scale factor `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleFactor {
    pub num: u32,
    pub den: u32,
}

impl ScaleFactor {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Argument(format!(
                "scale factor {num}/{den} must be positive"
            )));
        }
        Ok(Self { num, den })
    }

    pub fn up(r: u32) -> Result<Self> {
        Self::new(r, 1)
    }

    pub fn down(r: u32) -> Result<Self> {
        Self::new(1, r)
    }

    pub fn value(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }

    fn apply(&self, n: usize) -> usize {
        n * self.num as usize / self.den as usize
    }
}

/// Cubic convolution kernel.
pub fn cubic_weight(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Per-output-sample taps `(index, weight)` for resizing `n_in -> n_out`.
fn taps(n_in: usize, n_out: usize) -> Vec<[(usize, f64); 4]> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let t = src - base;
            let mut out = [(0usize, 0.0); 4];
            for (k, slot) in out.iter_mut().enumerate() {
                let offset = k as isize - 1;
                *slot = (
                    reflect_index(base as isize + offset, n_in),
                    cubic_weight(t - offset as f64),
                );
            }
            out
        })
        .collect()
}

/// Resizes one plane to `out_h × out_w` without clipping.
pub fn resize_plane_bicubic(plane: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = plane.dim();
    let tx = taps(w, out_w);
    let ty = taps(h, out_h);
    let mut rows = Array2::<f64>::zeros((h, out_w));
    for y in 0..h {
        for (x, tap) in tx.iter().enumerate() {
            rows[[y, x]] = tap.iter().map(|&(i, wt)| wt * plane[[y, i]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((out_h, out_w));
    for (y, tap) in ty.iter().enumerate() {
        for x in 0..out_w {
            out[[y, x]] = tap.iter().map(|&(i, wt)| wt * rows[[i, x]]).sum();
        }
    }
    out
}

/// Resizes a raster to explicit dimensions; output clipped to `[0, 1]`.
pub fn resize_bicubic(
    img: &MultiBandRaster,
    out_h: usize,
    out_w: usize,
) -> Result<MultiBandRaster> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Argument(
            "output dimensions must be at least 1".into(),
        ));
    }
    let c = img.bands();
    let mut data = Array3::<f32>::zeros((out_h, out_w, c));
    for b in 0..c {
        let plane = resize_plane_bicubic(&img.plane(b), out_h, out_w);
        for ((y, x), v) in plane.indexed_iter() {
            data[[y, x, b]] = v.clamp(0.0, 1.0) as f32;
        }
    }
    let gsd = img.gsd_m() * img.width() as f64 / out_w as f64;
    let mut out = MultiBandRaster::new(data, img.band_wavelengths_nm().to_vec(), gsd)?;
    for (k, v) in img.tags() {
        out.set_tag(k.clone(), v.clone());
    }
    Ok(out)
}

/// Scales a raster by a rational factor using bicubic interpolation.
pub fn bicubic_resample(img: &MultiBandRaster, factor: ScaleFactor) -> Result<MultiBandRaster> {
    if factor.num == 0 || factor.den == 0 {
        return Err(Error::Argument("scale factor must be positive".into()));
    }
    let (h, w) = (factor.apply(img.height()), factor.apply(img.width()));
    resize_bicubic(img, h, w)
}
