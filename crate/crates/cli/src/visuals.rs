//! PNG figures: side-by-side panels and per-pixel error maps.

use ndarray::{Array2, Array3, Axis};
use pantcr_core::{Error, MultiBandRaster, Result};

const GAP: usize = 4;

/// Bands shown as red, green, blue: the ones nearest 660, 555 and 485 nm,
/// or the first band alone when fewer than three exist.
pub fn display_bands(img: &MultiBandRaster) -> Vec<usize> {
    let wl = img.band_wavelengths_nm();
    if wl.len() < 3 {
        return vec![0];
    }
    let nearest = |target: f64| {
        (0..wl.len())
            .min_by(|&a, &b| (wl[a] - target).abs().total_cmp(&(wl[b] - target).abs()))
            .unwrap_or(0)
    };
    vec![nearest(660.0), nearest(555.0), nearest(485.0)]
}

/// Places equally sized panels left to right on a white background.
pub fn side_by_side(panels: &[&MultiBandRaster]) -> Result<MultiBandRaster> {
    let first = panels
        .first()
        .ok_or_else(|| Error::Argument("no panels".into()))?;
    let (h, w, c) = first.dims();
    if panels.iter().any(|p| p.dims() != (h, w, c)) {
        return Err(Error::Validation("panels differ in shape".into()));
    }
    let n = panels.len();
    let mut canvas = Array3::<f32>::ones((h, n * w + (n - 1) * GAP, c));
    for (i, p) in panels.iter().enumerate() {
        let x0 = i * (w + GAP);
        canvas
            .slice_mut(ndarray::s![.., x0..x0 + w, ..])
            .assign(p.data());
    }
    MultiBandRaster::new(canvas, first.band_wavelengths_nm().to_vec(), first.gsd_m())
}

/// Band-averaged squared error per pixel.
pub fn mse_map(pred: &MultiBandRaster, target: &MultiBandRaster) -> Result<Array2<f64>> {
    if pred.dims() != target.dims() {
        return Err(Error::Validation(format!(
            "shape mismatch {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let diff = pred.to_f64() - target.to_f64();
    Ok(diff.mapv(|d| d * d).mean_axis(Axis(2)).expect("bands > 0"))
}

/// Greyscale image of `map / vmax`, saturating at white.
pub fn error_image(map: &Array2<f64>, vmax: f64, gsd_m: f64) -> Result<MultiBandRaster> {
    if !(vmax.is_finite() && vmax > 0.0) {
        return Err(Error::Argument(format!(
            "error map scale must be positive, got {vmax}"
        )));
    }
    MultiBandRaster::from_planes(&[map.mapv(|v| v / vmax)], vec![1.0], gsd_m)
}
