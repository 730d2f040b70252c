use ndarray::Array3;

use super::field::CloudField;
use crate::error::{Error, Result};
use crate::raster::MultiBandRaster;

/// `E = E0·t + L∞·(1 − t)` with `t = exp(−k·d)`.
pub fn scatter_value(clean: f64, optical_depth: f64, airlight: f64) -> f64 {
    let t = (-optical_depth).exp();
    clean * t + airlight * (1.0 - t)
}

/// Applies the single-scattering thin-cloud model band by band.
pub fn apply_scattering(clean: &MultiBandRaster, cloud: &CloudField) -> Result<MultiBandRaster> {
    let (h, w, c) = clean.dims();
    if cloud.dims() != (h, w) {
        return Err(Error::Validation(format!(
            "cloud field {:?} does not match raster {h}x{w}",
            cloud.dims()
        )));
    }
    cloud.extinction.validate()?;
    let wavelengths = clean.band_wavelengths_nm();
    let mut out = Array3::<f32>::zeros((h, w, c));
    for (b, &lambda) in wavelengths.iter().enumerate() {
        let k = cloud.extinction.k(lambda);
        let airlight = cloud.airlight.at(lambda);
        for y in 0..h {
            for x in 0..w {
                let v = scatter_value(
                    f64::from(clean.data()[[y, x, b]]),
                    k * cloud.depth_map[[y, x]],
                    airlight,
                );
                out[[y, x, b]] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    let mut cloudy = MultiBandRaster::new(out, wavelengths.to_vec(), clean.gsd_m())?;
    for (k, v) in clean.tags() {
        cloudy.set_tag(k.clone(), v.clone());
    }
    Ok(cloudy)
}
