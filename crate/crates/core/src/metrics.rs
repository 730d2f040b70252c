//! Reference-based (PSNR, SSIM, SAM, ERGAS) and no-reference (D_λ, D_s,
//! HQNR) fusion quality metrics. All metrics assume a peak value of 1.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cloud::gaussian_decimate_plane;
use crate::error::{Error, Result};
use crate::raster::MultiBandRaster;

/// Reported PSNR for identical inputs.
pub const PSNR_CAP_DB: f64 = 100.0;
/// Pixels with `|p|·|t|` below this are skipped by SAM.
pub const SAM_EPS: f64 = 1e-8;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
/// Block side of the Q index at full resolution.
pub const Q_BLOCK: usize = 32;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sam_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ergas: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hqnr: Option<f64>,
}

impl MetricReport {
    /// PSNR, SSIM, SAM and ERGAS against a reference.
    pub fn reduced(pred: &MultiBandRaster, target: &MultiBandRaster, r: usize) -> Result<Self> {
        Ok(Self {
            psnr_db: Some(psnr(pred, target)?),
            ssim: Some(ssim(pred, target)?),
            sam_deg: Some(sam(pred, target)?),
            ergas: Some(ergas(pred, target, r)?),
            ..Default::default()
        })
    }

    /// D_λ, D_s and HQNR from the fusion inputs only.
    pub fn full(
        fused: &MultiBandRaster,
        lrmsi: &MultiBandRaster,
        pan: &MultiBandRaster,
        r: usize,
    ) -> Result<Self> {
        let q = qnr_family(fused, lrmsi, pan, r)?;
        Ok(Self {
            d_lambda: Some(q.d_lambda),
            d_s: Some(q.d_s),
            hqnr: Some(q.hqnr),
            ..Default::default()
        })
    }
}

fn same_dims(a: &MultiBandRaster, b: &MultiBandRaster) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Validation(format!(
            "shape mismatch {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn pairs<'a>(
    a: &'a MultiBandRaster,
    b: &'a MultiBandRaster,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| (f64::from(x), f64::from(y)))
}

/// Joint-band PSNR in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(pred: &MultiBandRaster, target: &MultiBandRaster) -> Result<f64> {
    same_dims(pred, target)?;
    let n = pred.data().len() as f64;
    let mse = pairs(pred, target)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / n;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable 'valid' filtering with the SSIM window.
fn filter_valid(x: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for xx in 0..ow {
            rows[[y, xx]] = (0..n).map(|i| k[i] * x[[y, xx + i]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for xx in 0..ow {
            out[[y, xx]] = (0..n).map(|i| k[i] * rows[[y + i, xx]]).sum();
        }
    }
    out
}

fn ssim_plane(x: &Array2<f64>, y: &Array2<f64>, k: &[f64]) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mx = filter_valid(x, k);
    let my = filter_valid(y, k);
    let mxx = filter_valid(&(x * x), k);
    let myy = filter_valid(&(y * y), k);
    let mxy = filter_valid(&(x * y), k);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (a, b) = (mx.as_slice().unwrap()[i], my.as_slice().unwrap()[i]);
        let vx = mxx.as_slice().unwrap()[i] - a * a;
        let vy = myy.as_slice().unwrap()[i] - b * b;
        let cxy = mxy.as_slice().unwrap()[i] - a * b;
        total += ((2.0 * a * b + c1) * (2.0 * cxy + c2)) / ((a * a + b * b + c1) * (vx + vy + c2));
    }
    total / mx.len() as f64
}

/// Single-scale SSIM (11×11 Gaussian, σ = 1.5), averaged over bands.
pub fn ssim(pred: &MultiBandRaster, target: &MultiBandRaster) -> Result<f64> {
    same_dims(pred, target)?;
    if pred.height() < SSIM_WINDOW || pred.width() < SSIM_WINDOW {
        return Err(Error::Validation(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            pred.height(),
            pred.width()
        )));
    }
    let k = gaussian_window();
    let c = pred.bands();
    Ok((0..c)
        .map(|b| ssim_plane(&pred.plane(b), &target.plane(b), &k))
        .sum::<f64>()
        / c as f64)
}

/// Mean spectral angle in degrees over non-degenerate pixels.
///
/// Uses `2·atan2(|p̂ − t̂|, |p̂ + t̂|)` on unit vectors, which stays accurate
/// for small angles and is exactly zero for identical spectra.
pub fn sam(pred: &MultiBandRaster, target: &MultiBandRaster) -> Result<f64> {
    same_dims(pred, target)?;
    let (h, w, c) = pred.dims();
    let (p, t) = (pred.data(), target.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            let (mut np, mut nt) = (0.0, 0.0);
            for b in 0..c {
                let (a, r) = (f64::from(p[[y, x, b]]), f64::from(t[[y, x, b]]));
                np += a * a;
                nt += r * r;
            }
            let (np, nt) = (np.sqrt(), nt.sqrt());
            if np * nt > SAM_EPS {
                let (mut diff, mut sum) = (0.0, 0.0);
                for b in 0..c {
                    let (a, r) = (f64::from(p[[y, x, b]]) / np, f64::from(t[[y, x, b]]) / nt);
                    diff += (a - r) * (a - r);
                    sum += (a + r) * (a + r);
                }
                total += 2.0 * diff.sqrt().atan2(sum.sqrt());
                count += 1;
            }
        }
    }
    Ok(if count == 0 {
        0.0
    } else {
        (total / count as f64).to_degrees()
    })
}

/// `(100/r)·sqrt(mean_b (RMSE_b / μ_b)²)` with `μ_b` taken from the target.
pub fn ergas(pred: &MultiBandRaster, target: &MultiBandRaster, r: usize) -> Result<f64> {
    same_dims(pred, target)?;
    if r == 0 {
        return Err(Error::Argument("ratio must be positive".into()));
    }
    let c = pred.bands();
    let mut acc = 0.0;
    for b in 0..c {
        let (pb, tb) = (pred.band(b), target.band(b));
        let n = tb.len() as f64;
        let mu = tb.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        if mu <= 0.0 {
            return Err(Error::Validation(format!(
                "band {b} of the reference has zero mean"
            )));
        }
        let mse = pb
            .iter()
            .zip(tb.iter())
            .map(|(&a, &t)| (f64::from(a) - f64::from(t)).powi(2))
            .sum::<f64>()
            / n;
        acc += mse / (mu * mu);
    }
    Ok(100.0 / r as f64 * (acc / c as f64).sqrt())
}

/// Universal image quality index of two equally sized windows.
fn q_window(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cxy += (a - mx) * (b - my);
    }
    let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
    let means = mx * mx + my * my;
    let vars = vx + vy;
    if vars <= f64::EPSILON * means.max(1e-300) {
        // Flat windows: only the luminance term is defined.
        return if means == 0.0 {
            1.0
        } else {
            2.0 * mx * my / means
        };
    }
    if means == 0.0 {
        return 2.0 * cxy / vars;
    }
    4.0 * cxy * mx * my / (vars * means)
}

/// Mean Q index over `block×block` tiles (partial tiles at the borders included).
pub fn q_index(x: &Array2<f64>, y: &Array2<f64>, block: usize) -> f64 {
    let (h, w) = x.dim();
    let block = block.max(1);
    let mut total = 0.0;
    let mut count = 0usize;
    let mut bx = Vec::new();
    let mut by = Vec::new();
    for y0 in (0..h).step_by(block) {
        for x0 in (0..w).step_by(block) {
            bx.clear();
            by.clear();
            for yy in y0..(y0 + block).min(h) {
                for xx in x0..(x0 + block).min(w) {
                    bx.push(x[[yy, xx]]);
                    by.push(y[[yy, xx]]);
                }
            }
            total += q_window(&bx, &by);
            count += 1;
        }
    }
    total / count as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QnrScores {
    pub d_lambda: f64,
    pub d_s: f64,
    pub hqnr: f64,
}

/// D_λ, D_s (exponents p = q = 1) and their product score.
///
/// LR-scale Q indices use `Q_BLOCK / r` tiles; the PAN is reduced with the
/// same Gaussian as the Wald degradation.
pub fn qnr_family(
    fused: &MultiBandRaster,
    lrmsi: &MultiBandRaster,
    pan: &MultiBandRaster,
    r: usize,
) -> Result<QnrScores> {
    let (h, w, c) = fused.dims();
    if r == 0 || lrmsi.dims() != (h / r, w / r, c) || h % r != 0 || w % r != 0 {
        return Err(Error::Validation(format!(
            "fused {:?} / LR-MSI {:?} inconsistent with ratio {r}",
            fused.dims(),
            lrmsi.dims()
        )));
    }
    if pan.dims() != (h, w, 1) {
        return Err(Error::Validation(format!(
            "PAN {:?} not aligned with {h}x{w}",
            pan.dims()
        )));
    }
    let hr_block = Q_BLOCK;
    let lr_block = (Q_BLOCK / r).max(1);
    let fused_planes = fused.planes();
    let lr_planes = lrmsi.planes();
    let pan_hr = pan.plane(0);
    let pan_lr = gaussian_decimate_plane(&pan_hr, r);

    let d_lambda = if c < 2 {
        0.0
    } else {
        let mut acc = 0.0;
        for b in 0..c {
            for k in 0..c {
                if b != k {
                    let qf = q_index(&fused_planes[b], &fused_planes[k], hr_block);
                    let ql = q_index(&lr_planes[b], &lr_planes[k], lr_block);
                    acc += (qf - ql).abs();
                }
            }
        }
        acc / (c * (c - 1)) as f64
    };
    let d_s = (0..c)
        .map(|b| {
            let qf = q_index(&fused_planes[b], &pan_hr, hr_block);
            let ql = q_index(&lr_planes[b], &pan_lr, lr_block);
            (qf - ql).abs()
        })
        .sum::<f64>()
        / c as f64;
    let d_lambda = d_lambda.clamp(0.0, 1.0);
    let d_s = d_s.clamp(0.0, 1.0);
    Ok(QnrScores {
        d_lambda,
        d_s,
        hqnr: hqnr(d_lambda, d_s),
    })
}

pub fn hqnr(d_lambda: f64, d_s: f64) -> f64 {
    (1.0 - d_lambda) * (1.0 - d_s)
}
