//! The three-stage encoder–decoder with a global bicubic residual.

use ndarray::Array2;
use pantcr_core::raster::resize_plane_bicubic;
use pantcr_core::{Error, MultiBandRaster, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{Fdr, Se, Stem};
use crate::config::NetworkConfig;
use crate::graph::{Graph, NodeId};
use crate::layers::{Conv, ConvInit};
use crate::params::{InitMode, ParamStore, Registry};
use crate::tensor::Tensor;

pub const STAGES: usize = 3;

#[derive(Debug, Clone)]
pub struct Stage {
    pub fdr: Fdr,
    pub se: Se,
}

/// Network inputs resampled and arranged for one forward pass.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Bicubic ×r upsampled LR-MSI, not clipped.
    pub up: Tensor,
    pub pan: Tensor,
    /// `pan_prompts[i]` and `nir_prompts[i]` live at resolution `H / 2^i`.
    pub pan_prompts: Vec<Tensor>,
    pub nir_prompts: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct PanTcr {
    pub cfg: NetworkConfig,
    params: ParamStore,
    pub stem: Stem,
    pub adapter: Option<Conv>,
    pub stages: Vec<Stage>,
    pub downs: Vec<Conv>,
    pub ups: Vec<Conv>,
    pub fuses: Vec<Conv>,
    pub head: Conv,
}

impl PanTcr {
    /// Builds the network with identity-at-initialisation weights.
    pub fn new(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        Self::with_init(cfg, seed, InitMode::Standard)
    }

    pub fn with_init(cfg: NetworkConfig, seed: u64, mode: InitMode) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reg = Registry::new(&mut params, &mut rng, mode);
        let w = cfg.stage_widths;
        let stem = Stem::new(&mut reg, cfg.bands, cfg.base_width);
        let adapter = (cfg.base_width != w[0]).then(|| {
            Conv::new(
                &mut reg,
                "adapter",
                cfg.base_width,
                w[0],
                1,
                true,
                ConvInit::Uniform,
            )
        });
        let mut stages = Vec::new();
        for (s, &c) in w.iter().enumerate() {
            stages.push(reg.scoped(&format!("stage{s}"), |r| Stage {
                fdr: Fdr::new(r, c, &cfg),
                se: Se::new(r, c, &cfg),
            }));
        }
        let downs = (0..STAGES - 1)
            .map(|s| {
                Conv::new(
                    &mut reg,
                    &format!("down{s}"),
                    w[s],
                    w[s + 1],
                    1,
                    true,
                    ConvInit::Uniform,
                )
            })
            .collect();
        let ups = (0..STAGES - 1)
            .map(|s| {
                Conv::new(
                    &mut reg,
                    &format!("up{s}"),
                    w[s + 1],
                    w[s],
                    3,
                    true,
                    ConvInit::Uniform,
                )
            })
            .collect();
        let fuses = (0..STAGES - 1)
            .map(|s| {
                Conv::new(
                    &mut reg,
                    &format!("fuse{s}"),
                    2 * w[s],
                    w[s],
                    1,
                    true,
                    ConvInit::Uniform,
                )
            })
            .collect();
        let head = Conv::new(&mut reg, "head", w[0], cfg.bands, 3, true, ConvInit::Zero);
        Ok(PanTcr {
            cfg,
            params,
            stem,
            adapter,
            stages,
            downs,
            ups,
            fuses,
            head,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Upsamples the LR-MSI and builds the prompt pyramids.
    pub fn prepare(&self, lrmsi: &MultiBandRaster, pan: &MultiBandRaster) -> Result<Prepared> {
        let cfg = &self.cfg;
        let (h, w, c) = lrmsi.dims();
        if c != cfg.bands {
            return Err(Error::Validation(format!(
                "network expects {} bands, LR-MSI has {c}",
                cfg.bands
            )));
        }
        if pan.bands() != 1 {
            return Err(Error::Validation(format!(
                "PAN must have one band, found {}",
                pan.bands()
            )));
        }
        let (ph, pw) = (pan.height(), pan.width());
        if ph != h * cfg.scale_ratio || pw != w * cfg.scale_ratio {
            return Err(Error::Validation(format!(
                "PAN {ph}x{pw} is not {}x the LR-MSI {h}x{w}",
                cfg.scale_ratio
            )));
        }
        let div = 1 << (STAGES - 1);
        if ph % div != 0 || pw % div != 0 {
            return Err(Error::Validation(format!(
                "target size {ph}x{pw} must be divisible by {div}"
            )));
        }
        let nir = lrmsi
            .nir_band()
            .ok_or_else(|| Error::Validation("LR-MSI has no band in the NIR window".into()))?;
        let planes: Vec<Array2<f64>> = lrmsi
            .planes()
            .iter()
            .map(|p| resize_plane_bicubic(p, ph, pw))
            .collect();
        let up = Tensor::from_planes(&planes);
        Ok(self.prepare_tensors(up, Tensor::from_raster(pan), nir))
    }

    /// Same as [`prepare`](Self::prepare) for already upsampled tensors.
    pub fn prepare_tensors(&self, up: Tensor, pan: Tensor, nir_band: usize) -> Prepared {
        let nir = up.channels(nir_band, 1);
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let mut pan_prompts = vec![pan.clone()];
        let mut nir_prompts = vec![nir];
        for s in 1..STAGES {
            let p = g.constant(pan_prompts[s - 1].clone());
            let p = g.avg_pool2(p);
            pan_prompts.push(g.value(p).clone());
            let n = g.constant(nir_prompts[s - 1].clone());
            let n = g.avg_pool2(n);
            nir_prompts.push(g.value(n).clone());
        }
        Prepared {
            up,
            pan,
            pan_prompts,
            nir_prompts,
        }
    }

    /// Records the forward pass; returns the unclipped output node.
    pub fn forward(&self, g: &mut Graph<'_>, p: &Prepared) -> NodeId {
        let up = g.constant(p.up.clone());
        let pan = g.constant(p.pan.clone());
        let pans: Vec<NodeId> = p
            .pan_prompts
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect();
        let nirs: Vec<NodeId> = p
            .nir_prompts
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect();
        let x = g.concat(&[up, pan]);
        let mut f = self.stem.apply(g, x);
        if let Some(a) = &self.adapter {
            f = a.apply(g, f);
        }
        let mut skips = Vec::new();
        for (s, stage) in self.stages.iter().enumerate() {
            f = stage.fdr.apply(g, f, pans[s], nirs[s]);
            f = stage.se.apply(g, f);
            if s + 1 < STAGES {
                skips.push(f);
                let d = g.avg_pool2(f);
                f = self.downs[s].apply(g, d);
            }
        }
        for s in (0..STAGES - 1).rev() {
            let u = g.upsample2(f);
            let u = self.ups[s].apply(g, u);
            let u = g.relu(u);
            let cat = g.concat(&[u, skips[s]]);
            f = self.fuses[s].apply(g, cat);
        }
        let res = self.head.apply(g, f);
        g.add(up, res)
    }

    /// Unclipped prediction as a tensor.
    pub fn predict(&self, p: &Prepared) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, p);
        let t = g.value(out).clone();
        if !t.is_finite() {
            return Err(Error::Numeric("network produced non-finite output".into()));
        }
        Ok(t)
    }

    /// Inference path: prediction clipped to `[0, 1]` with the LR-MSI's
    /// wavelengths and the PAN's sample distance.
    pub fn infer(&self, lrmsi: &MultiBandRaster, pan: &MultiBandRaster) -> Result<MultiBandRaster> {
        let p = self.prepare(lrmsi, pan)?;
        let t = self.predict(&p)?;
        t.to_raster(lrmsi.band_wavelengths_nm().to_vec(), pan.gsd_m())
    }
}
