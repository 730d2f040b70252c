//! Stage components: stem, frequency-decoupled restoration (phase branch,
//! amplitude branch, modality gate, inter-frequency consistency) and the
//! spectral enhancement transformer.

use crate::config::{Ablation, BranchTopology, FdrMode, IfcMode, NetworkConfig, SeMode};
use crate::graph::{Graph, NodeId};
use crate::layers::{hidden_width, Conv, ConvInit, Dam, Highpass, Mlp};
use crate::params::{Fill, ParamId, Registry};

/// Shallow residual block on `[up(lrmsi), pan]`.
#[derive(Debug, Clone)]
pub struct Stem {
    pub conv_in: Conv,
    pub conv_res: Conv,
}

impl Stem {
    pub fn new(reg: &mut Registry<'_>, bands: usize, width: usize) -> Self {
        reg.scoped("stem", |r| Stem {
            conv_in: Conv::new(r, "conv_in", bands + 1, width, 3, true, ConvInit::Uniform),
            conv_res: Conv::new(r, "conv_res", width, width, 3, true, ConvInit::Uniform),
        })
    }

    /// `x` is the `(C+1)`-channel concatenation of upsampled MSI and PAN.
    pub fn apply(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        let h = self.conv_in.apply(g, x);
        let a = g.relu(h);
        let r = self.conv_res.apply(g, a);
        g.add(h, r)
    }
}

/// Phase restoration guided by the (high-passed) PAN prompt.
#[derive(Debug, Clone)]
pub struct PhaseBranch {
    pub highpass: Option<Highpass>,
    pub lift: Option<Conv>,
    pub dam: Dam,
}

impl PhaseBranch {
    pub fn new(reg: &mut Registry<'_>, c: usize, cfg: &NetworkConfig) -> Self {
        let ab = &cfg.ablation;
        reg.scoped("phase", |r| PhaseBranch {
            highpass: (ab.use_pan_prompt && ab.use_highpass)
                .then(|| Highpass::new(r, "highpass", cfg.pool_radius)),
            lift: ab
                .use_pan_prompt
                .then(|| Conv::new(r, "lift", 1, c, 1, true, ConvInit::Uniform)),
            dam: Dam::new(r, "dam", c, if ab.use_dam { cfg.dam_depth } else { 0 }),
        })
    }

    /// `P̂ = P_F + DAM([lift(phase(H(pan))), P_F])`.
    pub fn apply(&self, g: &mut Graph<'_>, p_f: NodeId, pan: NodeId) -> NodeId {
        let cat = match &self.lift {
            Some(lift) => {
                let src = match &self.highpass {
                    Some(hp) => hp.apply(g, pan),
                    None => pan,
                };
                let p_x = g.phase(src);
                let lifted = lift.apply(g, p_x);
                g.concat(&[lifted, p_f])
            }
            None => g.concat(&[p_f, p_f]),
        };
        let p_deg = self.dam.apply(g, cat);
        g.add(p_f, p_deg)
    }
}

/// Modality-adaptive gate: 1×1 conv `2C → C`, global pooling, MLP, sigmoid.
#[derive(Debug, Clone)]
pub struct Mafg {
    pub reduce: Conv,
    pub mlp: Mlp,
}

impl Mafg {
    pub fn new(reg: &mut Registry<'_>, c: usize) -> Self {
        reg.scoped("mafg", |r| Mafg {
            reduce: Conv::new(r, "reduce", 2 * c, c, 1, true, ConvInit::Uniform),
            mlp: Mlp::new(r, "mlp", c, hidden_width(c), true),
        })
    }

    /// Returns a `C × 1 × 1` gate in `(0, 1)`.
    pub fn apply(&self, g: &mut Graph<'_>, amp_concat: NodeId) -> NodeId {
        let h = self.reduce.apply(g, amp_concat);
        let v = g.gap(h);
        let z = self.mlp.apply(g, v);
        g.sigmoid(z)
    }
}

/// Amplitude restoration guided by the NIR prompt.
#[derive(Debug, Clone)]
pub struct AmplitudeBranch {
    pub lift: Option<Conv>,
    pub dam: Dam,
    pub gate: Option<Mafg>,
}

impl AmplitudeBranch {
    pub fn new(reg: &mut Registry<'_>, c: usize, cfg: &NetworkConfig) -> Self {
        let ab = &cfg.ablation;
        reg.scoped("amplitude", |r| AmplitudeBranch {
            lift: ab
                .use_nir_prompt
                .then(|| Conv::new(r, "lift", 1, c, 1, true, ConvInit::Uniform)),
            dam: Dam::new(r, "dam", c, if ab.use_dam { cfg.dam_depth } else { 0 }),
            gate: ab.use_mafg.then(|| Mafg::new(r, c)),
        })
    }

    /// `Â = A_F + gate([A_I, A_F]) ⊗ DAM([A_I, A_F])`.
    pub fn apply(&self, g: &mut Graph<'_>, a_f: NodeId, nir: NodeId) -> NodeId {
        let cat = match &self.lift {
            Some(lift) => {
                let a_i = g.amplitude(nir);
                let lifted = lift.apply(g, a_i);
                g.concat(&[lifted, a_f])
            }
            None => g.concat(&[a_f, a_f]),
        };
        let a_deg = self.dam.apply(g, cat);
        let a_deg = match &self.gate {
            Some(gate) => {
                let w = gate.apply(g, cat);
                g.mul(a_deg, w)
            }
            None => a_deg,
        };
        g.add(a_f, a_deg)
    }
}

/// Bidirectional cross-modulation of phase and amplitude.
#[derive(Debug, Clone)]
pub struct Ifc {
    pub mlp_p: Mlp,
    pub mlp_a: Mlp,
    pub scale: ParamId,
    pub mode: IfcMode,
}

impl Ifc {
    pub fn new(reg: &mut Registry<'_>, c: usize, mode: IfcMode) -> Self {
        reg.scoped("ifc", |r| Ifc {
            mlp_p: Mlp::new(r, "mlp_p", c, hidden_width(c), true),
            mlp_a: Mlp::new(r, "mlp_a", c, hidden_width(c), true),
            scale: r.param("scale", [1, 1, 1], Fill::Zeros),
            mode,
        })
    }

    /// Modulation weights `(w_P, w_A)`, each `C × 1 × 1`.
    pub fn weights(&self, g: &mut Graph<'_>, p: NodeId, a: NodeId) -> (NodeId, NodeId) {
        let gp = g.gap(p);
        let zp = self.mlp_p.apply(g, gp);
        let w_p = g.sigmoid(zp);
        let ga = g.gap(a);
        let za = self.mlp_a.apply(g, ga);
        let w_a = g.sigmoid(za);
        (w_p, w_a)
    }

    /// Returns `(P_c, A_c)` with `P_c = P̂ + s·w_A ⊗ P̂`, `A_c = Â + s·w_P ⊗ Â`.
    pub fn apply(&self, g: &mut Graph<'_>, p: NodeId, a: NodeId) -> (NodeId, NodeId) {
        let (w_p, w_a) = self.weights(g, p, a);
        let (for_p, for_a) = match self.mode {
            IfcMode::Cross => (w_a, w_p),
            IfcMode::ChannelAttention => (w_p, w_a),
        };
        let s = g.param(self.scale);
        let p_res = g.mul(p, for_p);
        let p_res = g.mul(p_res, s);
        let a_res = g.mul(a, for_a);
        let a_res = g.mul(a_res, s);
        (g.add(p, p_res), g.add(a, a_res))
    }
}

/// Parameter-comparable spatial attention used in place of the frequency
/// block: `F + DAM_a([F, lift(pan)]) ⊗ σ(proj(DAM_b([F, lift(nir)])))`.
#[derive(Debug, Clone)]
pub struct SpatialAttention {
    pub lift_pan: Conv,
    pub lift_nir: Conv,
    pub dam_value: Dam,
    pub dam_map: Dam,
    pub proj: Conv,
}

impl SpatialAttention {
    pub fn new(reg: &mut Registry<'_>, c: usize, depth: usize) -> Self {
        reg.scoped("spatial", |r| {
            let lift_pan = Conv::new(r, "lift_pan", 1, c, 1, true, ConvInit::Uniform);
            let lift_nir = Conv::new(r, "lift_nir", 1, c, 1, true, ConvInit::Uniform);
            let dam_value = Dam::new(r, "dam_value", c, depth);
            let dam_map = r.scoped("dam_map", |r| {
                (0..depth)
                    .map(|i| {
                        Conv::new(
                            r,
                            &format!("conv{i}"),
                            if i == 0 { 2 * c } else { c },
                            c,
                            3,
                            true,
                            ConvInit::Uniform,
                        )
                    })
                    .collect()
            });
            let proj = Conv::new(r, "proj", c, 1, 1, true, ConvInit::Uniform);
            SpatialAttention {
                lift_pan,
                lift_nir,
                dam_value,
                dam_map: Dam::with_convs(dam_map),
                proj,
            }
        })
    }

    pub fn apply(&self, g: &mut Graph<'_>, f: NodeId, pan: NodeId, nir: NodeId) -> NodeId {
        let lp = self.lift_pan.apply(g, pan);
        let cat_v = g.concat(&[f, lp]);
        let value = self.dam_value.apply(g, cat_v);
        let ln = self.lift_nir.apply(g, nir);
        let cat_m = g.concat(&[f, ln]);
        let m = self.dam_map.apply(g, cat_m);
        let m = self.proj.apply(g, m);
        let m = g.sigmoid(m);
        let res = g.mul(value, m);
        g.add(f, res)
    }
}

#[derive(Debug, Clone)]
pub enum FdrBody {
    Off,
    Spatial(SpatialAttention),
    Frequency {
        phase: Option<PhaseBranch>,
        amplitude: Option<AmplitudeBranch>,
        ifc: Option<Ifc>,
        topology: BranchTopology,
    },
}

/// Frequency-decoupled restoration block.
#[derive(Debug, Clone)]
pub struct Fdr {
    pub body: FdrBody,
}

/// Intermediate nodes of one FDR evaluation, exposed for tests.
#[derive(Debug, Clone, Copy)]
pub struct FdrTrace {
    pub a_f: NodeId,
    pub p_f: NodeId,
    pub p_hat: NodeId,
    pub a_hat: NodeId,
    pub p_c: NodeId,
    pub a_c: NodeId,
    pub out: NodeId,
}

impl Fdr {
    pub fn new(reg: &mut Registry<'_>, c: usize, cfg: &NetworkConfig) -> Self {
        let ab: &Ablation = &cfg.ablation;
        let body = reg.scoped("fdr", |r| match ab.fdr_mode {
            FdrMode::Off => FdrBody::Off,
            FdrMode::SpatialAttention => {
                FdrBody::Spatial(SpatialAttention::new(r, c, cfg.dam_depth))
            }
            FdrMode::Fdr => FdrBody::Frequency {
                phase: ab.use_phase_branch.then(|| PhaseBranch::new(r, c, cfg)),
                amplitude: ab.use_amp_branch.then(|| AmplitudeBranch::new(r, c, cfg)),
                ifc: ab.use_ifc.then(|| Ifc::new(r, c, ab.ifc_mode)),
                topology: ab.branch_topology,
            },
        });
        Fdr { body }
    }

    pub fn apply(&self, g: &mut Graph<'_>, f: NodeId, pan: NodeId, nir: NodeId) -> NodeId {
        match &self.body {
            FdrBody::Off => f,
            FdrBody::Spatial(sa) => sa.apply(g, f, pan, nir),
            FdrBody::Frequency { .. } => self.trace(g, f, pan, nir).out,
        }
    }

    /// Frequency path with every intermediate exposed.
    ///
    /// Panics if the block is not in frequency mode.
    pub fn trace(&self, g: &mut Graph<'_>, f: NodeId, pan: NodeId, nir: NodeId) -> FdrTrace {
        let FdrBody::Frequency {
            phase,
            amplitude,
            ifc,
            topology,
        } = &self.body
        else {
            panic!("trace requires the frequency body");
        };
        let (a_f, p_f) = g.decompose(f);
        let p_hat = match phase {
            Some(b) => b.apply(g, p_f, pan),
            None => p_f,
        };
        let (a_src, p_for_ifc) = match topology {
            BranchTopology::Parallel => (a_f, p_hat),
            BranchTopology::Series => {
                let mid = g.recompose(a_f, p_hat);
                g.decompose(mid)
            }
        };
        let a_hat = match amplitude {
            Some(b) => b.apply(g, a_src, nir),
            None => a_src,
        };
        let (p_c, a_c) = match ifc {
            Some(m) => m.apply(g, p_for_ifc, a_hat),
            None => (p_for_ifc, a_hat),
        };
        let out = g.recompose(a_c, p_c);
        FdrTrace {
            a_f,
            p_f,
            p_hat,
            a_hat,
            p_c,
            a_c,
            out,
        }
    }
}

#[derive(Debug, Clone)]
pub enum SeBody {
    Off,
    Swt {
        q: Conv,
        k: Conv,
        v: Conv,
        temperature: ParamId,
        proj: Conv,
        ffn_in: Conv,
        ffn_out: Conv,
        heads: usize,
    },
    ChannelAttention {
        mlp: Mlp,
        proj: Conv,
    },
}

/// Spectral enhancement: self-attention whose tokens are channels.
#[derive(Debug, Clone)]
pub struct Se {
    pub body: SeBody,
}

impl Se {
    pub fn new(reg: &mut Registry<'_>, c: usize, cfg: &NetworkConfig) -> Self {
        let body = reg.scoped("se", |r| match cfg.ablation.se_mode {
            SeMode::Off => SeBody::Off,
            SeMode::Swt => SeBody::Swt {
                q: Conv::new(r, "q", c, c, 1, false, ConvInit::Uniform),
                k: Conv::new(r, "k", c, c, 1, false, ConvInit::Uniform),
                v: Conv::new(r, "v", c, c, 1, false, ConvInit::Uniform),
                temperature: r.param("temperature", [cfg.se_heads, 1, 1], Fill::Const(1.0)),
                proj: Conv::new(r, "proj", c, c, 1, true, ConvInit::Zero),
                ffn_in: Conv::new(r, "ffn_in", c, c, 1, true, ConvInit::Uniform),
                ffn_out: Conv::new(r, "ffn_out", c, c, 1, true, ConvInit::Zero),
                heads: cfg.se_heads,
            },
            SeMode::ChannelAttention => SeBody::ChannelAttention {
                mlp: Mlp::new(r, "mlp", c, hidden_width(c), false),
                proj: Conv::new(r, "proj", c, c, 1, true, ConvInit::Zero),
            },
        });
        Se { body }
    }

    /// Channel-attention matrix (`heads × d × d`) of the transformer body.
    pub fn attention(&self, g: &mut Graph<'_>, x: NodeId) -> Option<NodeId> {
        let SeBody::Swt {
            q,
            k,
            temperature,
            heads,
            ..
        } = &self.body
        else {
            return None;
        };
        let qn = q.apply(g, x);
        let qn = g.l2_normalize(qn);
        let kn = k.apply(g, x);
        let kn = g.l2_normalize(kn);
        let gram = g.gram(qn, kn, *heads);
        let t = g.param(*temperature);
        let logits = g.mul(gram, t);
        Some(g.softmax_rows(logits))
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        match &self.body {
            SeBody::Off => x,
            SeBody::Swt {
                v,
                proj,
                ffn_in,
                ffn_out,
                heads,
                ..
            } => {
                let attn = self.attention(g, x).expect("transformer body");
                let vv = v.apply(g, x);
                let mixed = g.mix_channels(attn, vv, *heads);
                let o = proj.apply(g, mixed);
                let y = g.add(x, o);
                let h = ffn_in.apply(g, y);
                let h = g.relu(h);
                let h = ffn_out.apply(g, h);
                g.add(y, h)
            }
            SeBody::ChannelAttention { mlp, proj } => {
                let s = g.gap(x);
                let z = mlp.apply(g, s);
                let w = g.sigmoid(z);
                let gated = g.mul(x, w);
                let o = proj.apply(g, gated);
                g.add(x, o)
            }
        }
    }
}
