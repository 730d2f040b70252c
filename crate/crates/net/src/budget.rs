//! Analytic parameter and operation counts.
//!
//! Convolutions and attention products are counted in multiply-accumulates;
//! each 2-D FFT of an `H×W` plane costs `5·H·W·log2(H·W)`. Element-wise
//! activations, pooling and additions are not counted.

use serde::Serialize;

use crate::config::{BranchTopology, FdrMode, NetworkConfig, SeMode};
use crate::layers::hidden_width;
use crate::model::STAGES;

pub const CANONICAL_SIZE: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetLine {
    pub name: String,
    pub params: usize,
    pub flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Budget {
    pub params: usize,
    pub flops: f64,
    pub input_size: usize,
    pub lines: Vec<BudgetLine>,
}

#[derive(Default)]
struct Tally {
    params: usize,
    flops: f64,
}

impl Tally {
    fn conv(&mut self, cin: usize, cout: usize, k: usize, bias: bool, hw: usize) {
        self.params += cout * cin * k * k + if bias { cout } else { 0 };
        self.flops += (cout * cin * k * k * hw) as f64;
    }

    fn fft(&mut self, channels: usize, hw: usize) {
        self.flops += channels as f64 * 5.0 * hw as f64 * (hw as f64).log2();
    }

    fn mlp(&mut self, c: usize) {
        let h = hidden_width(c);
        self.conv(c, h, 1, true, 1);
        self.conv(h, c, 1, true, 1);
    }

    fn dam(&mut self, c: usize, depth: usize, hw: usize) {
        if depth == 0 {
            self.conv(2 * c, c, 1, true, hw);
        }
        for i in 0..depth {
            self.conv(if i == 0 { 2 * c } else { c }, c, 3, true, hw);
        }
    }
}

fn fdr(cfg: &NetworkConfig, c: usize, hw: usize) -> Tally {
    let ab = &cfg.ablation;
    let depth = if ab.use_dam { cfg.dam_depth } else { 0 };
    let mut t = Tally::default();
    match ab.fdr_mode {
        FdrMode::Off => {}
        FdrMode::SpatialAttention => {
            t.conv(1, c, 1, true, hw);
            t.conv(1, c, 1, true, hw);
            t.dam(c, cfg.dam_depth, hw);
            t.dam(c, cfg.dam_depth, hw);
            t.conv(c, 1, 1, true, hw);
        }
        FdrMode::Fdr => {
            t.fft(c, hw);
            if ab.use_phase_branch {
                if ab.use_pan_prompt {
                    if ab.use_highpass {
                        t.conv(1, 1, 1, true, hw);
                    }
                    t.fft(1, hw);
                    t.conv(1, c, 1, true, hw);
                }
                t.dam(c, depth, hw);
            }
            if ab.branch_topology == BranchTopology::Series {
                t.fft(2 * c, hw);
            }
            if ab.use_amp_branch {
                if ab.use_nir_prompt {
                    t.fft(1, hw);
                    t.conv(1, c, 1, true, hw);
                }
                t.dam(c, depth, hw);
                if ab.use_mafg {
                    t.conv(2 * c, c, 1, true, hw);
                    t.mlp(c);
                }
            }
            if ab.use_ifc {
                t.mlp(c);
                t.mlp(c);
                t.params += 1;
            }
            t.fft(c, hw);
        }
    }
    t
}

fn se(cfg: &NetworkConfig, c: usize, hw: usize) -> Tally {
    let mut t = Tally::default();
    match cfg.ablation.se_mode {
        SeMode::Off => {}
        SeMode::Swt => {
            for _ in 0..3 {
                t.conv(c, c, 1, false, hw);
            }
            t.params += cfg.se_heads;
            let d = c / cfg.se_heads;
            t.flops += 2.0 * (c * d * hw) as f64;
            t.conv(c, c, 1, true, hw);
            t.conv(c, c, 1, true, hw);
            t.conv(c, c, 1, true, hw);
        }
        SeMode::ChannelAttention => {
            t.mlp(c);
            t.conv(c, c, 1, true, hw);
        }
    }
    t
}

/// Enumerates every layer for a square `size × size` target.
pub fn count_params_flops(cfg: &NetworkConfig, size: usize) -> Budget {
    let mut lines = Vec::new();
    let mut push = |name: String, t: Tally| {
        lines.push(BudgetLine {
            name,
            params: t.params,
            flops: t.flops,
        })
    };
    let w = cfg.stage_widths;
    let hw = |s: usize| (size >> s) * (size >> s);

    let mut t = Tally::default();
    t.conv(cfg.bands + 1, cfg.base_width, 3, true, hw(0));
    t.conv(cfg.base_width, cfg.base_width, 3, true, hw(0));
    if cfg.base_width != w[0] {
        t.conv(cfg.base_width, w[0], 1, true, hw(0));
    }
    push("stem".into(), t);
    for s in 0..STAGES {
        push(format!("stage{s}.fdr"), fdr(cfg, w[s], hw(s)));
        push(format!("stage{s}.se"), se(cfg, w[s], hw(s)));
        if s + 1 < STAGES {
            let mut t = Tally::default();
            t.conv(w[s], w[s + 1], 1, true, hw(s + 1));
            push(format!("down{s}"), t);
        }
    }
    for s in (0..STAGES - 1).rev() {
        let mut t = Tally::default();
        t.conv(w[s + 1], w[s], 3, true, hw(s));
        t.conv(2 * w[s], w[s], 1, true, hw(s));
        push(format!("decoder{s}"), t);
    }
    let mut t = Tally::default();
    t.conv(w[0], cfg.bands, 3, true, hw(0));
    push("head".into(), t);

    let params = lines.iter().map(|l| l.params).sum();
    let flops = lines.iter().map(|l| l.flops).sum();
    Budget {
        params,
        flops,
        input_size: size,
        lines,
    }
}
