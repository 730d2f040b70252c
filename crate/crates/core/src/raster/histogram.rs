//! Per-band CDF matching over 256 uniform bins on `[0, 1]`.
//!
//! Every source value is mapped through the mid-rank of its bin, so all values
//! falling into one bin collapse to the same reference quantile; the inverse
//! reference CDF is linearly interpolated inside its bins.

use ndarray::Array3;

use super::MultiBandRaster;
use crate::error::{Error, Result};

pub const HIST_BINS: usize = 256;

fn bin_of(v: f64) -> usize {
    ((v * HIST_BINS as f64) as usize).min(HIST_BINS - 1)
}

/// Cumulative distribution at the `HIST_BINS + 1` bin edges.
fn cdf_edges(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut counts = vec![0usize; HIST_BINS];
    let mut n = 0usize;
    for v in values {
        counts[bin_of(v)] += 1;
        n += 1;
    }
    let mut cdf = Vec::with_capacity(HIST_BINS + 1);
    let mut acc = 0usize;
    cdf.push(0.0);
    for c in counts {
        acc += c;
        cdf.push(acc as f64 / n as f64);
    }
    cdf
}

/// Smallest value whose interpolated CDF reaches `p`.
fn inverse_cdf(cdf: &[f64], p: f64) -> f64 {
    let width = 1.0 / HIST_BINS as f64;
    // First edge index k with cdf[k] >= p.
    let k = cdf.partition_point(|&c| c < p);
    if k == 0 {
        return 0.0;
    }
    if k > HIST_BINS {
        return 1.0;
    }
    let (lo, hi) = (cdf[k - 1], cdf[k]);
    let frac = if hi > lo { (p - lo) / (hi - lo) } else { 0.0 };
    ((k - 1) as f64 + frac) * width
}

/// Matches each band of `src` to the distribution of the same band in `reference`.
pub fn histogram_match(
    src: &MultiBandRaster,
    reference: &MultiBandRaster,
) -> Result<MultiBandRaster> {
    if src.bands() != reference.bands() {
        return Err(Error::Validation(format!(
            "band count mismatch: {} vs {}",
            src.bands(),
            reference.bands()
        )));
    }
    let (h, w, c) = src.dims();
    let mut out = Array3::<f32>::zeros((h, w, c));
    for b in 0..c {
        let src_cdf = cdf_edges(src.band(b).iter().map(|&v| f64::from(v)));
        let ref_cdf = cdf_edges(reference.band(b).iter().map(|&v| f64::from(v)));
        let lut: Vec<f32> = (0..HIST_BINS)
            .map(|k| {
                let mid = 0.5 * (src_cdf[k] + src_cdf[k + 1]);
                inverse_cdf(&ref_cdf, mid) as f32
            })
            .collect();
        for ((y, x), &v) in src.band(b).indexed_iter() {
            out[[y, x, b]] = lut[bin_of(f64::from(v))];
        }
    }
    let mut matched = MultiBandRaster::new(out, src.band_wavelengths_nm().to_vec(), src.gsd_m())?;
    for (k, v) in src.tags() {
        matched.set_tag(k.clone(), v.clone());
    }
    Ok(matched)
}
