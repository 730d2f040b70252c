//! Central finite-difference verification of analytic gradients.
//!
//! The probe loss is `L = Σ r ⊙ f(x; θ)` with a fixed random `r`. For every
//! element the relative error is `|a − n| / max(|a|, |n|, τ)` where the floor
//! `τ = 1e-3 · max|n|` over the tensor keeps round-off on near-zero entries
//! from dominating. Probes that flip a ReLU, `|·|` or phase branch cut (see
//! [`Graph::kink_signature`]) are retried at a smaller step, then skipped and
//! counted.

use pantcr_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::blocks::{AmplitudeBranch, Fdr, Ifc, Mafg, PhaseBranch, Se, Stem};
use crate::config::NetworkConfig;
use crate::graph::{Graph, NodeId};
use crate::layers::{Conv, ConvInit, Dam};
use crate::model::PanTcr;
use crate::params::{InitMode, ParamStore, Registry};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
/// Largest skipped fraction per tensor before the check fails outright.
pub const MAX_KINK_FRACTION: f64 = 0.1;
pub const BLOCKS: [&str; 10] = [
    "linear",
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

const SIDE: usize = 8;
const WIDTH: usize = 4;
/// Elements probed per tensor for the whole network; blocks are exhaustive.
const FULL_SAMPLES: usize = 24;

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Largest |gradient| among the probed elements.
    pub scale: f64,
    pub kinks: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub block: String,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub passed: bool,
}

type Body = Box<dyn Fn(&mut Graph<'_>, &[NodeId]) -> NodeId>;

struct Harness {
    store: ParamStore,
    /// `(name, value, differentiable)`.
    inputs: Vec<(String, Tensor, bool)>,
    body: Body,
    sample: Option<usize>,
}

impl Harness {
    /// Returns `(Σ r ⊙ out, out, kink signature)`.
    fn eval(
        &self,
        store: &ParamStore,
        inputs: &[Tensor],
        r: Option<&Tensor>,
    ) -> (f64, Tensor, u64) {
        let mut g = Graph::new(store);
        let ids: Vec<NodeId> = inputs
            .iter()
            .zip(&self.inputs)
            .map(|(t, (_, _, diff))| {
                if *diff {
                    g.variable(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        let out = (self.body)(&mut g, &ids);
        let v = g.value(out).clone();
        let loss = r.map_or(0.0, |r| {
            v.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
        });
        (loss, v, g.kink_signature())
    }
}

fn random(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_vec(
        c,
        h,
        w,
        (0..c * h * w).map(|_| rng.gen_range(lo..hi)).collect(),
    )
}

fn tiny_cfg() -> NetworkConfig {
    NetworkConfig {
        base_width: WIDTH,
        stage_widths: [4, 6, 8],
        ..NetworkConfig::default()
    }
}

fn build(block: &str, seed: u64) -> Result<Harness> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut store = ParamStore::new();
    let cfg = tiny_cfg();
    let c = WIDTH;
    let feat = |r: &mut ChaCha8Rng, ch: usize| random(r, ch, SIDE, SIDE, -1.0, 1.0);
    let prompt = |r: &mut ChaCha8Rng| random(r, 1, SIDE, SIDE, 0.05, 1.0);
    let (inputs, body): (Vec<(String, Tensor, bool)>, Body) = {
        let mut reg = Registry::new(&mut store, &mut rng, InitMode::RandomAll);
        match block {
            "linear" => {
                let conv = Conv::new(&mut reg, "linear", c, c, 1, true, ConvInit::Uniform);
                (
                    vec![("x".into(), feat(&mut data_rng, c), true)],
                    Box::new(move |g, x| conv.apply(g, x[0])),
                )
            }
            "stem" => {
                let stem = Stem::new(&mut reg, 4, c);
                (
                    vec![("x".into(), feat(&mut data_rng, 5), true)],
                    Box::new(move |g, x| stem.apply(g, x[0])),
                )
            }
            "dam" => {
                let dam = Dam::new(&mut reg, "dam", c, cfg.dam_depth);
                (
                    vec![("x".into(), feat(&mut data_rng, 2 * c), true)],
                    Box::new(move |g, x| dam.apply(g, x[0])),
                )
            }
            "phase_branch" => {
                let b = PhaseBranch::new(&mut reg, c, &cfg);
                (
                    vec![
                        ("f".into(), feat(&mut data_rng, c), true),
                        ("pan".into(), prompt(&mut data_rng), true),
                    ],
                    Box::new(move |g, x| {
                        let p_f = g.phase(x[0]);
                        b.apply(g, p_f, x[1])
                    }),
                )
            }
            "amplitude_branch" => {
                let b = AmplitudeBranch::new(&mut reg, c, &cfg);
                (
                    vec![
                        ("f".into(), feat(&mut data_rng, c), true),
                        ("nir".into(), prompt(&mut data_rng), true),
                    ],
                    Box::new(move |g, x| {
                        let a_f = g.amplitude(x[0]);
                        b.apply(g, a_f, x[1])
                    }),
                )
            }
            "mafg" => {
                let m = Mafg::new(&mut reg, c);
                (
                    vec![("x".into(), feat(&mut data_rng, 2 * c), true)],
                    Box::new(move |g, x| m.apply(g, x[0])),
                )
            }
            "ifc" => {
                let m = Ifc::new(&mut reg, c, cfg.ablation.ifc_mode);
                (
                    vec![
                        ("p".into(), feat(&mut data_rng, c), true),
                        ("a".into(), feat(&mut data_rng, c), true),
                    ],
                    Box::new(move |g, x| {
                        let (p, a) = m.apply(g, x[0], x[1]);
                        g.concat(&[p, a])
                    }),
                )
            }
            "fdr" => {
                let f = Fdr::new(&mut reg, c, &cfg);
                (
                    vec![
                        ("f".into(), feat(&mut data_rng, c), true),
                        ("pan".into(), prompt(&mut data_rng), true),
                        ("nir".into(), prompt(&mut data_rng), true),
                    ],
                    Box::new(move |g, x| f.apply(g, x[0], x[1], x[2])),
                )
            }
            "se" => {
                let s = Se::new(&mut reg, c, &cfg);
                (
                    vec![("x".into(), feat(&mut data_rng, c), true)],
                    Box::new(move |g, x| s.apply(g, x[0])),
                )
            }
            "full" => {
                drop(reg);
                let model = PanTcr::with_init(cfg.clone(), seed, InitMode::RandomAll)?;
                store = model.params().clone();
                // SIDE is the low-resolution side, so the coarsest stage also sees SIDE².
                let hr = SIDE * cfg.scale_ratio;
                let up = random(&mut data_rng, cfg.bands, hr, hr, 0.0, 1.0);
                let pan = random(&mut data_rng, 1, hr, hr, 0.0, 1.0);
                let prepared = model.prepare_tensors(up, pan, cfg.bands - 1);
                (
                    Vec::new(),
                    Box::new(move |g, _| model.forward(g, &prepared)),
                )
            }
            other => {
                return Err(Error::Argument(format!(
                    "unknown block {other:?}; expected one of {}",
                    BLOCKS.join(", ")
                )))
            }
        }
    };
    let sample = (block == "full").then_some(FULL_SAMPLES);
    Ok(Harness {
        store,
        inputs,
        body,
        sample,
    })
}

/// Richardson-extrapolated central difference `(4·D(h/2) − D(h)) / 3` with
/// base step `STEP`, retried at `STEP / 100` when any probe lands on a
/// different smooth piece than the base point.
fn central(sig0: u64, mut loss_at: impl FnMut(f64) -> (f64, u64)) -> Option<f64> {
    'step: for h in [STEP, STEP * 1e-2] {
        let mut d = [0.0; 2];
        for (slot, step) in d.iter_mut().zip([h, 0.5 * h]) {
            let (lp, sp) = loss_at(step);
            let (lm, sm) = loss_at(-step);
            if sp != sig0 || sm != sig0 {
                continue 'step;
            }
            *slot = (lp - lm) / (2.0 * step);
        }
        return Some((4.0 * d[1] - d[0]) / 3.0);
    }
    None
}

/// Element indices to probe: all of them, or a seeded sample without repeats.
fn probe_indices(len: usize, sample: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match sample {
        Some(k) if k < len => rand::seq::index::sample(rng, len, k).into_vec(),
        _ => (0..len).collect(),
    }
}

/// `analytic` and `numeric` hold only the probed elements of a tensor of `elements`.
/// `noise` is the round-off level of one extrapolated difference; entries that
/// cannot rise `1 / TOLERANCE` above it are judged on absolute error.
fn compare(
    name: String,
    elements: usize,
    analytic: &[f64],
    numeric: &[Option<f64>],
    noise: f64,
) -> TensorCheck {
    let scale = numeric
        .iter()
        .flatten()
        .chain(analytic)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(noise / TOLERANCE).max(1e-12);
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut kinks = 0;
    for (a, &n) in analytic.iter().zip(numeric) {
        let Some(n) = n else {
            kinks += 1;
            continue;
        };
        let abs = (a - n).abs();
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(abs / a.abs().max(n.abs()).max(floor));
    }
    if kinks as f64 > MAX_KINK_FRACTION * analytic.len() as f64 {
        max_rel = f64::INFINITY;
    }
    TensorCheck {
        name,
        elements,
        checked: analytic.len(),
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        scale,
        kinks,
    }
}

/// Verifies every parameter tensor (and differentiable input) of `block`.
pub fn gradcheck(block: &str, seed: u64) -> Result<GradcheckReport> {
    let h = build(block, seed)?;
    let inputs: Vec<Tensor> = h.inputs.iter().map(|(_, t, _)| t.clone()).collect();
    let (_, out, sig0) = h.eval(&h.store, &inputs, None);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let r = random(&mut rng, out.c, out.h, out.w, -1.0, 1.0);
    let magnitude: f64 = out
        .data
        .iter()
        .zip(&r.data)
        .map(|(a, b)| (a * b).abs())
        .sum();
    // One ulp of the loss per evaluation; the extrapolation weights make 3δ/h.
    let noise = 3.0 * f64::EPSILON * magnitude / STEP;

    let mut g = Graph::new(&h.store);
    let ids: Vec<NodeId> = inputs
        .iter()
        .zip(&h.inputs)
        .map(|(t, (_, _, diff))| {
            if *diff {
                g.variable(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect();
    let out_id = (h.body)(&mut g, &ids);
    let grads = g.backward(out_id, r.clone());
    let param_grads = grads.param_grads(&h.store);

    let mut pick = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut tensors = Vec::new();
    for id in h.store.ids() {
        let base = h.store.get(id);
        let idx = probe_indices(base.len(), h.sample, &mut pick);
        let mut probe = h.store.clone();
        let numeric: Vec<Option<f64>> = idx
            .iter()
            .map(|&i| {
                let v = base.data[i];
                let n = central(sig0, |d| {
                    probe.get_mut(id).data[i] = v + d;
                    let (l, _, sig) = h.eval(&probe, &inputs, Some(&r));
                    (l, sig)
                });
                probe.get_mut(id).data[i] = v;
                n
            })
            .collect();
        let analytic: Vec<f64> = idx.iter().map(|&i| param_grads[id.0].data[i]).collect();
        tensors.push(compare(
            h.store.name(id).to_string(),
            base.len(),
            &analytic,
            &numeric,
            noise,
        ));
    }
    for (k, (name, base, diff)) in h.inputs.iter().enumerate() {
        if !diff {
            continue;
        }
        let grad = grads
            .node(ids[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(base.c, base.h, base.w));
        let idx = probe_indices(base.len(), h.sample, &mut pick);
        let mut probe = inputs.clone();
        let numeric: Vec<Option<f64>> = idx
            .iter()
            .map(|&i| {
                let v = base.data[i];
                let n = central(sig0, |d| {
                    probe[k].data[i] = v + d;
                    let (l, _, sig) = h.eval(&h.store, &probe, Some(&r));
                    (l, sig)
                });
                probe[k].data[i] = v;
                n
            })
            .collect();
        let analytic: Vec<f64> = idx.iter().map(|&i| grad.data[i]).collect();
        tensors.push(compare(
            format!("input.{name}"),
            base.len(),
            &analytic,
            &numeric,
            noise,
        ));
    }
    let max_rel_err = tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    Ok(GradcheckReport {
        block: block.to_string(),
        seed,
        step: STEP,
        tolerance: TOLERANCE,
        tensors,
        max_rel_err,
        passed: max_rel_err < TOLERANCE,
    })
}
