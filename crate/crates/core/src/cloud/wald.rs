//! Reduced-resolution degradation: Gaussian anti-alias then `×r` decimation.
//!
//! Output pixel `i` is centred on input coordinate `i·r + (r−1)/2`, the same
//! pixel-centre convention the bicubic resampler uses, so degrade followed by
//! upsample stays spatially registered.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::raster::{reflect_index, MultiBandRaster};

/// Blur width applied before decimation by `r`.
pub fn wald_sigma(r: usize) -> f64 {
    r as f64 / PI
}

fn kernel(r: usize) -> (isize, Vec<f64>) {
    let sigma = wald_sigma(r);
    let centre = (r as f64 - 1.0) / 2.0;
    let reach = (3.0 * sigma).ceil() as isize + 1;
    let start = centre.floor() as isize - reach;
    let end = centre.ceil() as isize + reach;
    let mut weights: Vec<f64> = (start..=end)
        .map(|k| {
            let d = k as f64 - centre;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    (start, weights)
}

/// Blurs and decimates one plane by `r` (dimensions must be divisible).
pub fn gaussian_decimate_plane(plane: &Array2<f64>, r: usize) -> Array2<f64> {
    let (h, w) = plane.dim();
    let (start, weights) = kernel(r);
    let (oh, ow) = (h / r, w / r);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            let base = (x * r) as isize + start;
            rows[[y, x]] = weights
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * plane[[y, reflect_index(base + k as isize, w)]])
                .sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        let base = (y * r) as isize + start;
        for x in 0..ow {
            out[[y, x]] = weights
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * rows[[reflect_index(base + k as isize, h), x]])
                .sum();
        }
    }
    out
}

fn degrade(img: &MultiBandRaster, r: usize) -> Result<MultiBandRaster> {
    let (h, w, c) = img.dims();
    let mut data = Array3::<f32>::zeros((h / r, w / r, c));
    for b in 0..c {
        let low = gaussian_decimate_plane(&img.plane(b), r);
        for ((y, x), v) in low.indexed_iter() {
            data[[y, x, b]] = *v as f32;
        }
    }
    let mut out = MultiBandRaster::new(
        data,
        img.band_wavelengths_nm().to_vec(),
        img.gsd_m() * r as f64,
    )?;
    for (k, v) in img.tags() {
        out.set_tag(k.clone(), v.clone());
    }
    Ok(out)
}

/// Wald-protocol degradation of an HR-MSI and its PAN by the ratio `r`.
pub fn wald_degrade(
    clean_hrmsi: &MultiBandRaster,
    clean_hr_pan: &MultiBandRaster,
    r: usize,
) -> Result<(MultiBandRaster, MultiBandRaster)> {
    if r == 0 {
        return Err(Error::Argument("ratio must be positive".into()));
    }
    for img in [clean_hrmsi, clean_hr_pan] {
        if img.height() % r != 0 || img.width() % r != 0 {
            return Err(Error::Argument(format!(
                "{}x{} not divisible by {r}",
                img.height(),
                img.width()
            )));
        }
    }
    Ok((degrade(clean_hrmsi, r)?, degrade(clean_hr_pan, r)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(
        h: usize,
        w: usize,
        c: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> MultiBandRaster {
        let data = Array3::from_shape_fn((h, w, c), |(y, x, b)| f(y, x, b) as f32);
        MultiBandRaster::new(
            data,
            (0..c).map(|b| 485.0 + 100.0 * b as f64).collect(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn constant_stays_constant() {
        let ms = raster(16, 16, 4, |_, _, _| 0.25);
        let pan = raster(16, 16, 1, |_, _, _| 0.6);
        let (lr, lp) = wald_degrade(&ms, &pan, 4).unwrap();
        assert_eq!(lr.dims(), (4, 4, 4));
        assert!(lr.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
        assert!(lp.data().iter().all(|&v| (v - 0.6).abs() < 1e-6));
        assert!((lr.gsd_m() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn shape_arithmetic() {
        let ms = raster(128, 128, 4, |y, x, _| ((x + y) % 5) as f64 / 5.0);
        let pan = raster(128, 128, 1, |_, _, _| 0.5);
        let (lr, lp) = wald_degrade(&ms, &pan, 4).unwrap();
        assert_eq!(lr.dims(), (32, 32, 4));
        assert_eq!(lp.dims(), (32, 32, 1));
    }

    #[test]
    fn indivisible_rejected() {
        let ms = raster(10, 12, 1, |_, _, _| 0.5);
        assert!(matches!(wald_degrade(&ms, &ms, 4), Err(Error::Argument(_))));
    }

    #[test]
    fn kernel_sums_to_one_and_is_centred() {
        for r in [2, 3, 4] {
            let (start, w) = kernel(r);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mean: f64 = w
                .iter()
                .enumerate()
                .map(|(k, v)| (start + k as isize) as f64 * v)
                .sum();
            assert!((mean - (r as f64 - 1.0) / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn high_frequency_ripple_is_suppressed() {
        // Frequencies from 2.5x to 4x the Nyquist of the decimated grid (1/8 cyc/px for r=4).
        for freq in [0.3125, 0.375, 0.4375, 0.5] {
            let amp = 0.2;
            let img = raster(64, 64, 1, |_, x, _| {
                0.5 + amp * (2.0 * PI * freq * x as f64).cos()
            });
            let pan = raster(64, 64, 1, |_, _, _| 0.5);
            let (lr, _) = wald_degrade(&img, &pan, 4).unwrap();
            let (lo, hi) = lr
                .data()
                .iter()
                .fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
            let ripple = f64::from(hi - lo) / 2.0;
            assert!(ripple < 0.06 * amp, "freq {freq}: ripple {ripple}");
        }
    }
}
