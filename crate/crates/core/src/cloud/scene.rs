//! Procedural clean scenes: warped Voronoi land-cover mosaics with
//! class-correlated spectra, fine texture and a few linear features.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::noise::{derive_seed, fbm};
use super::PAN_WAVELENGTH_NM;
use crate::error::{Error, Result};
use crate::raster::MultiBandRaster;

/// Blue, green, red and NIR band centres.
pub const MSI_WAVELENGTHS_NM: [f64; 4] = [485.0, 555.0, 660.0, 830.0];

/// Relative PAN response to each MSI band.
pub const PAN_WEIGHTS: [f64; 4] = [0.15, 0.25, 0.3, 0.3];

const CELL_PX: f64 = 48.0;
const WARP_PX: f64 = 14.0;

/// Mean reflectance per land-cover class (B, G, R, NIR).
const CLASS_SPECTRA: [[f64; 4]; 6] = [
    [0.07, 0.06, 0.04, 0.03], // water
    [0.04, 0.09, 0.05, 0.42], // forest
    [0.06, 0.12, 0.08, 0.33], // cropland
    [0.16, 0.20, 0.26, 0.31], // bare soil
    [0.24, 0.25, 0.27, 0.29], // built-up
    [0.30, 0.34, 0.39, 0.44], // sand
];

/// Weighted band sum used as the panchromatic response.
pub fn synthesize_pan(hrmsi: &MultiBandRaster) -> Result<MultiBandRaster> {
    let (h, w, c) = hrmsi.dims();
    let weights: Vec<f64> = if c == PAN_WEIGHTS.len() {
        PAN_WEIGHTS.to_vec()
    } else {
        vec![1.0 / c as f64; c]
    };
    let data = Array3::from_shape_fn((h, w, 1), |(y, x, _)| {
        (0..c)
            .map(|b| weights[b] * f64::from(hrmsi.data()[[y, x, b]]))
            .sum::<f64>() as f32
    });
    MultiBandRaster::new(data, vec![PAN_WAVELENGTH_NM], hrmsi.gsd_m())
}

/// Generates a clean `h×w` HR-MSI and its PAN.
pub fn generate_scene(seed: u64, h: usize, w: usize) -> Result<(MultiBandRaster, MultiBandRaster)> {
    if h == 0 || w == 0 {
        return Err(Error::Argument("scene dims must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "scene"));
    let gy = (h as f64 / CELL_PX).ceil() as usize + 2;
    let gx = (w as f64 / CELL_PX).ceil() as usize + 2;
    // One jittered site per grid cell, offset by one cell to cover borders.
    let sites: Vec<(f64, f64, usize, f64)> = (0..gy * gx)
        .map(|i| {
            let (cy, cx) = ((i / gx) as f64 - 1.0, (i % gx) as f64 - 1.0);
            let y = (cy + rng.gen::<f64>()) * CELL_PX;
            let x = (cx + rng.gen::<f64>()) * CELL_PX;
            let class = rng.gen_range(0..CLASS_SPECTRA.len());
            let brightness = rng.gen_range(0.8..1.2);
            (y, x, class, brightness)
        })
        .collect();
    let roads: Vec<(f64, f64, f64, f64)> = (0..rng.gen_range(1..=3))
        .map(|_| {
            let angle = rng.gen_range(0.0..std::f64::consts::PI);
            let offset = rng.gen_range(0.0..(h.max(w) as f64));
            let width = rng.gen_range(1.5..3.5);
            (angle.cos(), angle.sin(), offset, width)
        })
        .collect();

    let warp_seed = derive_seed(seed, "warp");
    let tex_seed = derive_seed(seed, "texture");
    let spec_seed = derive_seed(seed, "spectral");

    let mut planes = vec![Array2::<f64>::zeros((h, w)); 4];
    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f64, x as f64);
            let wy = yf + WARP_PX * (2.0 * fbm(warp_seed, xf / 40.0, yf / 40.0, 3, 0.5) - 1.0);
            let wx = xf + WARP_PX * (2.0 * fbm(warp_seed ^ 7, xf / 40.0, yf / 40.0, 3, 0.5) - 1.0);
            let (cy, cx) = (
                (wy / CELL_PX).floor() as isize + 1,
                (wx / CELL_PX).floor() as isize + 1,
            );
            let mut best = (f64::MAX, 0usize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (sy, sx) = (cy + dy, cx + dx);
                    if sy < 0 || sx < 0 || sy as usize >= gy || sx as usize >= gx {
                        continue;
                    }
                    let idx = sy as usize * gx + sx as usize;
                    let (py, px, _, _) = sites[idx];
                    let d = (py - wy).powi(2) + (px - wx).powi(2);
                    if d < best.0 {
                        best = (d, idx);
                    }
                }
            }
            let (_, _, mut class, brightness) = sites[best.1];
            for &(c, s, offset, width) in &roads {
                if (xf * c + yf * s - offset).abs() < width {
                    class = 4;
                }
            }
            let texture = 1.0 + 0.35 * (fbm(tex_seed, xf / 6.0, yf / 6.0, 3, 0.5) - 0.5);
            let tilt = 0.08 * (fbm(spec_seed, xf / 90.0, yf / 90.0, 2, 0.5) - 0.5);
            for (b, plane) in planes.iter_mut().enumerate() {
                let base = CLASS_SPECTRA[class][b];
                let band_tilt = 1.0 + tilt * (b as f64 - 1.5);
                plane[[y, x]] = (base * brightness * texture * band_tilt).clamp(0.0, 1.0);
            }
        }
    }
    let mut hrmsi = MultiBandRaster::from_planes(&planes, MSI_WAVELENGTHS_NM.to_vec(), 1.0)?;
    hrmsi.set_tag("source", format!("procedural:{seed}"));
    let pan = synthesize_pan(&hrmsi)?;
    Ok((hrmsi, pan))
}
