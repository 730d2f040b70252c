//! Dense channel-major (`c × h × w`) tensors used by the tape.

use ndarray::{Array2, Array3};
use pantcr_core::{Error, MultiBandRaster, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn filled(c: usize, h: usize, w: usize, v: f64) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![v; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            c * h * w,
            "tensor data length does not match {c}x{h}x{w}"
        );
        Self { c, h, w, data }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.c, self.h, self.w]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Selects a contiguous run of channels.
    pub fn channels(&self, start: usize, len: usize) -> Tensor {
        let n = self.plane_len();
        Tensor::from_vec(
            len,
            self.h,
            self.w,
            self.data[start * n..(start + len) * n].to_vec(),
        )
    }

    /// Converts an `(h, w, c)` raster into channel-major layout.
    pub fn from_raster(r: &MultiBandRaster) -> Self {
        let (h, w, c) = r.dims();
        let d = r.data();
        let mut out = Tensor::zeros(c, h, w);
        for b in 0..c {
            let p = out.plane_mut(b);
            for y in 0..h {
                for x in 0..w {
                    p[y * w + x] = f64::from(d[[y, x, b]]);
                }
            }
        }
        out
    }

    pub fn from_planes(planes: &[Array2<f64>]) -> Self {
        let (h, w) = planes[0].dim();
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            data.extend(p.iter().copied());
        }
        Tensor::from_vec(planes.len(), h, w, data)
    }

    pub fn to_planes(&self) -> Vec<Array2<f64>> {
        (0..self.c)
            .map(|b| {
                Array2::from_shape_vec((self.h, self.w), self.plane(b).to_vec())
                    .expect("plane shape")
            })
            .collect()
    }

    pub fn to_hwc(&self) -> Array3<f64> {
        Array3::from_shape_fn((self.h, self.w, self.c), |(y, x, b)| self.at(b, y, x))
    }

    /// Builds a raster (clipping to `[0, 1]` on ingest).
    pub fn to_raster(&self, wavelengths: Vec<f64>, gsd_m: f64) -> Result<MultiBandRaster> {
        if !self.is_finite() {
            return Err(Error::Numeric("tensor holds non-finite values".into()));
        }
        MultiBandRaster::from_f64(&self.to_hwc(), wavelengths, gsd_m)
    }
}
