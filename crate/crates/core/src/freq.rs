//! Amplitude/phase decomposition of real grids and the contrast-aware
//! high-pass filter used to build structural prompts.
//!
//! All transforms are orthonormal (`1/sqrt(HW)` in both directions), so
//! Parseval holds exactly and a constant image `c` of size `N×N` has DC
//! amplitude `c·N`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::raster::MultiBandRaster;

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// In-place orthonormal 2-D DFT of a row-major `h×w` buffer.
pub fn fft2(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), h * w);
    let row = plan(w, inverse);
    for r in buf.chunks_exact_mut(w) {
        row.process(r);
    }
    let col = plan(h, inverse);
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Forward transform of a real plane with self-conjugate bins forced real.
///
/// Bins that map onto themselves under `(u, v) -> (-u, -v)` are exactly real
/// for real input; zeroing their rounding residue keeps the phase of a
/// negative DC or Nyquist coefficient pinned at `+π`.
pub fn real_spectrum(plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut buf, h, w, false);
    for &u in self_conjugate(h).iter().flatten() {
        for &v in self_conjugate(w).iter().flatten() {
            buf[u * w + v].im = 0.0;
        }
    }
    buf
}

fn self_conjugate(n: usize) -> [Option<usize>; 2] {
    [Some(0), (n % 2 == 0 && n > 1).then_some(n / 2)]
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_phase(p: f64) -> f64 {
    let mut p = p % (2.0 * PI);
    if p <= -PI {
        p += 2.0 * PI;
    } else if p > PI {
        p -= 2.0 * PI;
    }
    p
}

/// Shortest signed angular distance between two phases.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    wrap_phase(a - b).abs()
}

/// Amplitude and phase of a channel stack in `(h, w, c)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyPair {
    pub amplitude: Array3<f64>,
    pub phase: Array3<f64>,
    pub origin_dims: (usize, usize),
}

/// Spatial signal returned by [`recompose`].
#[derive(Debug, Clone)]
pub struct Recomposed {
    pub signal: Array3<f64>,
    /// Largest `|imag|` discarded when taking the real part.
    pub max_imag_residue: f64,
}

/// Per-channel orthonormal FFT split into modulus and argument.
pub fn decompose(signal: &Array3<f64>) -> Result<FrequencyPair> {
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("decompose: non-finite input".into()));
    }
    let (h, w, c) = signal.dim();
    let mut amplitude = Array3::zeros((h, w, c));
    let mut phase = Array3::zeros((h, w, c));
    for b in 0..c {
        let plane: Vec<f64> = signal.index_axis(Axis(2), b).iter().copied().collect();
        let spec = real_spectrum(&plane, h, w);
        for (i, z) in spec.iter().enumerate() {
            amplitude[[i / w, i % w, b]] = z.norm();
            phase[[i / w, i % w, b]] = wrap_phase(z.arg());
        }
    }
    Ok(FrequencyPair {
        amplitude,
        phase,
        origin_dims: (h, w),
    })
}

/// Inverse transform of `A·e^{iP}`, keeping the real part.
pub fn recompose(fp: &FrequencyPair) -> Result<Recomposed> {
    if fp.amplitude.dim() != fp.phase.dim() {
        return Err(Error::Validation(format!(
            "amplitude {:?} and phase {:?} differ in shape",
            fp.amplitude.dim(),
            fp.phase.dim()
        )));
    }
    let (h, w, c) = fp.amplitude.dim();
    if (h, w) != fp.origin_dims {
        return Err(Error::Validation(
            "origin dims disagree with spectrum".into(),
        ));
    }
    let mut signal = Array3::zeros((h, w, c));
    let mut residue = 0.0f64;
    for b in 0..c {
        let mut buf: Vec<Complex64> = (0..h * w)
            .map(|i| {
                Complex64::from_polar(fp.amplitude[[i / w, i % w, b]], fp.phase[[i / w, i % w, b]])
            })
            .collect();
        fft2(&mut buf, h, w, true);
        for (i, z) in buf.iter().enumerate() {
            signal[[i / w, i % w, b]] = z.re;
            residue = residue.max(z.im.abs());
        }
    }
    Ok(Recomposed {
        signal,
        max_imag_residue: residue,
    })
}

/// Stride-1 box mean over a `(2r+1)²` window with reflect padding.
pub fn avg_pool_reflect(x: &Array2<f64>, radius: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    let k = (2 * radius + 1) as f64;
    let refl = crate::raster::reflect_index;
    let mut rows = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for xx in 0..w {
            let mut s = 0.0;
            for d in -(radius as isize)..=radius as isize {
                s += x[[y, refl(xx as isize + d, w)]];
            }
            rows[[y, xx]] = s / k;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for xx in 0..w {
            let mut s = 0.0;
            for d in -(radius as isize)..=radius as isize {
                s += rows[[refl(y as isize + d, h), xx]];
            }
            out[[y, xx]] = s / k;
        }
    }
    out
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `x · σ(|x − AvgPool(x)|)` with a `(2r+1)²` reflect-padded box window.
pub fn highpass_contrast_filter(x: &Array2<f64>, pool_radius: usize) -> Result<Array2<f64>> {
    if pool_radius == 0 {
        return Err(Error::Argument("pool radius must be at least 1".into()));
    }
    let pooled = avg_pool_reflect(x, pool_radius);
    let mut out = x.clone();
    out.zip_mut_with(&pooled, |v, &p| *v *= sigmoid((*v - p).abs()));
    Ok(out)
}

/// Recombines the amplitude of `a_from` with the phase of `p_from`.
pub fn swap_amplitude(
    a_from: &MultiBandRaster,
    p_from: &MultiBandRaster,
) -> Result<MultiBandRaster> {
    if a_from.dims() != p_from.dims() {
        return Err(Error::Validation(format!(
            "cannot swap spectra of {:?} and {:?}",
            a_from.dims(),
            p_from.dims()
        )));
    }
    let fa = decompose(&a_from.to_f64())?;
    let fp = decompose(&p_from.to_f64())?;
    let mixed = FrequencyPair {
        amplitude: fa.amplitude,
        phase: fp.phase,
        origin_dims: fa.origin_dims,
    };
    let rec = recompose(&mixed)?;
    MultiBandRaster::from_f64(
        &rec.signal,
        p_from.band_wavelengths_nm().to_vec(),
        p_from.gsd_m(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(h: usize, w: usize, c: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((h, w, c), |_| rng.gen::<f64>())
    }

    #[test]
    fn constant_image_spectrum() {
        let n = 8;
        let fp = decompose(&Array3::from_elem((n, n, 1), 0.3)).unwrap();
        assert!((fp.amplitude[[0, 0, 0]] - 0.3 * n as f64).abs() < 1e-12);
        assert_eq!(fp.phase[[0, 0, 0]], 0.0);
        let rest: f64 = fp.amplitude.iter().skip(1).map(|v| v.abs()).sum();
        assert!(rest < 1e-12);
    }

    #[test]
    fn impulse_has_flat_amplitude() {
        let n = 8;
        let mut x = Array3::zeros((n, n, 1));
        x[[0, 0, 0]] = 1.0;
        let fp = decompose(&x).unwrap();
        assert!(fp
            .amplitude
            .iter()
            .all(|a| (a - 1.0 / n as f64).abs() < 1e-12));
    }

    #[test]
    fn round_trip_random() {
        let x = random_grid(16, 16, 4, 7);
        let rec = recompose(&decompose(&x).unwrap()).unwrap();
        let err = (&rec.signal - &x)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-5);
    }

    #[test]
    fn zero_amplitude_gives_zero() {
        let mut fp = decompose(&random_grid(6, 6, 2, 1)).unwrap();
        fp.amplitude.fill(0.0);
        let rec = recompose(&fp).unwrap();
        assert!(rec.signal.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_built_cosine() {
        // cos(2πx/8) on an 8×8 grid: two conjugate bins (0,1), (0,7).
        let n = 8;
        let mut amplitude = Array3::zeros((n, n, 1));
        let phase = Array3::zeros((n, n, 1));
        // Orthonormal scale: coefficient N/2 at each bin.
        amplitude[[0, 1, 0]] = n as f64 / 2.0;
        amplitude[[0, 7, 0]] = n as f64 / 2.0;
        let rec = recompose(&FrequencyPair {
            amplitude,
            phase,
            origin_dims: (n, n),
        })
        .unwrap();
        assert!(rec.max_imag_residue < 1e-6);
        for y in 0..n {
            for x in 0..n {
                let expect = (2.0 * PI * x as f64 / 8.0).cos();
                assert!((rec.signal[[y, x, 0]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut x = random_grid(4, 4, 1, 0);
        x[[1, 1, 0]] = f64::NAN;
        assert!(matches!(decompose(&x), Err(Error::Numeric(_))));
    }

    #[test]
    fn real_input_is_conjugate_symmetric() {
        let (h, w) = (6, 8);
        let fp = decompose(&random_grid(h, w, 1, 11)).unwrap();
        for u in 0..h {
            for v in 0..w {
                let (cu, cv) = ((h - u) % h, (w - v) % w);
                assert!((fp.amplitude[[u, v, 0]] - fp.amplitude[[cu, cv, 0]]).abs() < 1e-12);
                let p = fp.phase[[u, v, 0]];
                assert!(p > -PI && p <= PI);
                if fp.amplitude[[u, v, 0]] > 1e-9 {
                    assert!(angular_distance(p, -fp.phase[[cu, cv, 0]]) < 1e-9);
                }
            }
        }
    }

    #[test]
    fn highpass_constant_and_zero() {
        let c = Array2::from_elem((9, 9), 0.8);
        let out = highpass_contrast_filter(&c, 3).unwrap();
        assert!(out.iter().all(|&v| (v - 0.4).abs() < 1e-12));
        let z = Array2::zeros((5, 5));
        assert!(highpass_contrast_filter(&z, 1)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(matches!(
            highpass_contrast_filter(&z, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn highpass_step_edge_responds_at_edge() {
        let step = Array2::from_shape_fn((16, 16), |(_, x)| if x >= 8 { 1.0 } else { 0.0 });
        let out = highpass_contrast_filter(&step, 3).unwrap();
        // Bright pixel adjacent to the edge vs. a bright pixel far from it.
        assert!(
            out[[8, 8]] > out[[8, 15]],
            "{} vs {}",
            out[[8, 8]],
            out[[8, 15]]
        );
    }

    #[test]
    fn channel_separable() {
        let x = random_grid(8, 6, 3, 5);
        let all = decompose(&x).unwrap();
        for b in 0..3 {
            let single = x.slice(ndarray::s![.., .., b..b + 1]).to_owned();
            let one = decompose(&single).unwrap();
            assert_eq!(
                one.amplitude.index_axis(Axis(2), 0),
                all.amplitude.index_axis(Axis(2), b)
            );
            assert_eq!(
                one.phase.index_axis(Axis(2), 0),
                all.phase.index_axis(Axis(2), b)
            );
        }
    }

    proptest! {
        #[test]
        fn parseval(seed in 0u64..10_000) {
            let x = random_grid(8, 12, 2, seed);
            let fp = decompose(&x).unwrap();
            let e_sig: f64 = x.iter().map(|v| v * v).sum();
            let e_amp: f64 = fp.amplitude.iter().map(|v| v * v).sum();
            prop_assert!(((e_sig - e_amp) / e_sig).abs() < 1e-4);
        }

        #[test]
        fn highpass_bounded_by_input(seed in 0u64..10_000, radius in 1usize..4) {
            let x = random_grid(10, 10, 1, seed).index_axis(Axis(2), 0).to_owned();
            let out = highpass_contrast_filter(&x, radius).unwrap();
            for (o, i) in out.iter().zip(x.iter()) {
                prop_assert!(*o >= 0.0 && *o <= *i);
            }
        }

        #[test]
        fn self_swap_is_identity(seed in 0u64..10_000) {
            let data = random_grid(8, 8, 2, seed).mapv(|v| v as f32);
            let r = MultiBandRaster::new(data, vec![485.0, 830.0], 4.0).unwrap();
            let s = swap_amplitude(&r, &r).unwrap();
            for (a, b) in r.data().iter().zip(s.data().iter()) {
                prop_assert!((a - b).abs() < 1e-5);
            }
        }
    }
}
