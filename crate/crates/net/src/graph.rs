//! Reverse-mode tape over channel-major tensors.
//!
//! Every op is evaluated eagerly when it is recorded; [`Graph::backward`]
//! then walks the tape in reverse. Spectral ops use the orthonormal FFT from
//! `pantcr_core::freq`, so their adjoints are plain inverse transforms.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use num_complex::Complex64;
use pantcr_core::freq::{fft2, real_spectrum, wrap_phase};
use pantcr_core::raster::reflect_index;

use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Per-axis linear resampling taps: `taps[o]` lists `(source, weight)`.
type Taps = Arc<Vec<Vec<(usize, f64)>>>;

enum Op {
    Leaf,
    Param(ParamId),
    Conv {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        k: usize,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine {
        x: NodeId,
        scale: f64,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Abs(NodeId),
    Separable {
        x: NodeId,
        ty: Taps,
        tx: Taps,
    },
    Concat(Vec<NodeId>),
    Slice {
        x: NodeId,
        start: usize,
    },
    Gap(NodeId),
    Amplitude {
        x: NodeId,
        spec: Arc<Vec<Complex64>>,
    },
    Phase {
        x: NodeId,
        spec: Arc<Vec<Complex64>>,
    },
    Recompose {
        a: NodeId,
        p: NodeId,
    },
    L2Norm(NodeId),
    Gram {
        q: NodeId,
        k: NodeId,
        heads: usize,
    },
    Softmax(NodeId),
    Mix {
        attn: NodeId,
        v: NodeId,
        heads: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Gradients for every node of a tape, indexed by [`NodeId`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(ParamId, NodeId)>,
}

impl Gradients {
    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].as_ref()
    }

    /// Adds the gradient of every parameter node into `acc`.
    pub fn accumulate_params(&self, acc: &mut [Tensor]) {
        for &(pid, nid) in &self.params {
            if let Some(g) = &self.nodes[nid.0] {
                acc[pid.0].add_assign(g);
            }
        }
    }

    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut acc = store.zeros_like();
        self.accumulate_params(&mut acc);
        acc
    }
}

fn bcast(n: usize, of: usize) -> bool {
    n == of || n == 1
}

/// Index of `b` that pairs with element `(c, y, x)` of a larger tensor.
#[inline]
fn bidx(b: &Tensor, c: usize, y: usize, x: usize) -> usize {
    let c = if b.c == 1 { 0 } else { c };
    let y = if b.h == 1 { 0 } else { y };
    let x = if b.w == 1 { 0 } else { x };
    (c * b.h + y) * b.w + x
}

fn conv_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, k: usize) -> Tensor {
    let (cin, h, wd) = (x.c, x.h, x.w);
    let cout = w.c;
    let p = (k / 2) as isize;
    let mut out = Tensor::zeros(cout, h, wd);
    for co in 0..cout {
        let o = out.plane_mut(co);
        if let Some(b) = b {
            o.fill(b.data[co]);
        }
        for ci in 0..cin {
            let xin = x.plane(ci);
            let wbase = (co * cin + ci) * k * k;
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = valid_range(wd, dx);
                    if x0 >= x1 {
                        continue;
                    }
                    let wv = w.data[wbase + ky * k + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let orow = &mut o[y * wd + x0..y * wd + x1];
                        let s0 = (sy * wd) as isize + x0 as isize + dx;
                        let irow = &xin[s0 as usize..s0 as usize + (x1 - x0)];
                        for (ov, iv) in orow.iter_mut().zip(irow) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output rows `y` for which `y + d` stays inside `0..n`.
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo.min(hi), hi)
}

/// Returns `(grad_x, grad_w, grad_b)`; `grad_x` only when requested.
fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    k: usize,
    g: &Tensor,
    want_x: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (cin, h, wd) = (x.c, x.h, x.w);
    let cout = w.c;
    let p = (k / 2) as isize;
    let mut gx = want_x.then(|| Tensor::zeros(cin, h, wd));
    let mut gw = Tensor::zeros(w.c, w.h, w.w);
    let mut gb = Tensor::zeros(cout, 1, 1);
    for co in 0..cout {
        let go = g.plane(co);
        gb.data[co] = go.iter().sum();
        for ci in 0..cin {
            let xin = x.plane(ci);
            let wbase = (co * cin + ci) * k * k;
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = valid_range(wd, dx);
                    if x0 >= x1 {
                        continue;
                    }
                    let wv = w.data[wbase + ky * k + kx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let grow = &go[y * wd + x0..y * wd + x1];
                        let s0 = ((sy * wd) as isize + x0 as isize + dx) as usize;
                        let irow = &xin[s0..s0 + (x1 - x0)];
                        acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(gx) = gx.as_mut() {
                            let gxr = &mut gx.plane_mut(ci)[s0..s0 + (x1 - x0)];
                            for (gv, ov) in gxr.iter_mut().zip(grow) {
                                *gv += wv * ov;
                            }
                        }
                    }
                    gw.data[wbase + ky * k + kx] += acc;
                }
            }
        }
    }
    (gx, gw, gb)
}

fn separable_forward(x: &Tensor, ty: &[Vec<(usize, f64)>], tx: &[Vec<(usize, f64)>]) -> Tensor {
    let (oh, ow) = (ty.len(), tx.len());
    let mut out = Tensor::zeros(x.c, oh, ow);
    let mut rows = vec![0.0; x.h * ow];
    for c in 0..x.c {
        let p = x.plane(c);
        for y in 0..x.h {
            for (ox, taps) in tx.iter().enumerate() {
                rows[y * ow + ox] = taps.iter().map(|&(i, wt)| wt * p[y * x.w + i]).sum();
            }
        }
        let o = out.plane_mut(c);
        for (oy, taps) in ty.iter().enumerate() {
            for ox in 0..ow {
                o[oy * ow + ox] = taps.iter().map(|&(i, wt)| wt * rows[i * ow + ox]).sum();
            }
        }
    }
    out
}

fn separable_adjoint(
    g: &Tensor,
    ty: &[Vec<(usize, f64)>],
    tx: &[Vec<(usize, f64)>],
    h: usize,
    w: usize,
) -> Tensor {
    let ow = tx.len();
    let mut out = Tensor::zeros(g.c, h, w);
    let mut rows = vec![0.0; h * ow];
    for c in 0..g.c {
        rows.fill(0.0);
        let gp = g.plane(c);
        for (oy, taps) in ty.iter().enumerate() {
            for &(i, wt) in taps {
                for ox in 0..ow {
                    rows[i * ow + ox] += wt * gp[oy * ow + ox];
                }
            }
        }
        let o = out.plane_mut(c);
        for y in 0..h {
            for (ox, taps) in tx.iter().enumerate() {
                let v = rows[y * ow + ox];
                for &(i, wt) in taps {
                    o[y * w + i] += wt * v;
                }
            }
        }
    }
    out
}

/// Box-mean taps of side `2r+1` with reflected borders.
pub fn box_taps(n: usize, radius: usize) -> Vec<Vec<(usize, f64)>> {
    let k = 1.0 / (2 * radius + 1) as f64;
    (0..n)
        .map(|o| {
            (-(radius as isize)..=radius as isize)
                .map(|d| (reflect_index(o as isize + d, n), k))
                .collect()
        })
        .collect()
}

/// 2:1 mean-pooling taps.
pub fn pool2_taps(n: usize) -> Vec<Vec<(usize, f64)>> {
    (0..n / 2)
        .map(|o| vec![(2 * o, 0.5), (2 * o + 1, 0.5)])
        .collect()
}

/// Linear ×2 taps with half-pixel centres and clamped borders.
pub fn up2_taps(n: usize) -> Vec<Vec<(usize, f64)>> {
    (0..2 * n)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let src = src.max(0.0);
            let i0 = src.floor() as usize;
            let t = src - i0 as f64;
            let i1 = (i0 + 1).min(n - 1);
            vec![(i0, 1.0 - t), (i1, t)]
        })
        .collect()
}

fn spectrum(x: &Tensor) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(x.len());
    for c in 0..x.c {
        out.extend(real_spectrum(x.plane(c), x.h, x.w));
    }
    out
}

/// `Re(IFFT(z))` per channel of a complex stack.
fn inverse_real(mut z: Vec<Complex64>, c: usize, h: usize, w: usize) -> Tensor {
    let n = h * w;
    for ch in z.chunks_exact_mut(n) {
        fft2(ch, h, w, true);
    }
    let _ = c;
    Tensor::from_vec(c, h, w, z.iter().map(|v| v.re).collect())
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, t: Tensor) {
    match &mut grads[id.0] {
        Some(e) => e.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Hash of every non-smooth switch on the tape: the sign of each ReLU and
    /// `|·|` input and the branch-cut side of each phase. Two evaluations with
    /// equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) | Op::Abs(x) => {
                    for v in &self.nodes[x.0].value.data {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Op::Amplitude { spec, .. } => {
                    for z in spec.iter().filter(|z| z.im == 0.0) {
                        (z.re > 0.0).hash(&mut h);
                    }
                }
                Op::Phase { spec, .. } => {
                    // Self-conjugate bins are exactly real, so their phase jumps 0 ↔ π.
                    for z in spec.iter() {
                        (z.re < 0.0 && (z.im < 0.0 || z.im == 0.0)).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Constant input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// Input leaf whose gradient is tracked (for verification).
    pub fn variable(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let v = self.params.get(id).clone();
        self.push(v, Op::Param(id), true)
    }

    pub fn conv(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, k: usize) -> NodeId {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(
            wv.h, xv.c,
            "conv expects {} input channels, got {}",
            wv.h, xv.c
        );
        assert_eq!(wv.w, k * k);
        let out = conv_forward(xv, wv, b.map(|b| self.value(b)), k);
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(out, Op::Conv { x, w, b, k }, ng)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(
            bcast(bv.c, av.c) && bcast(bv.h, av.h) && bcast(bv.w, av.w),
            "cannot broadcast {:?} onto {:?}",
            bv.shape(),
            av.shape()
        );
        let mut out = av.clone();
        let mut i = 0;
        for c in 0..av.c {
            for y in 0..av.h {
                for x in 0..av.w {
                    out.data[i] = f(av.data[i], bv.data[bidx(bv, c, y, x)]);
                    i += 1;
                }
            }
        }
        out
    }

    /// `a + b` with `b` broadcast over singleton axes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.binary(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.binary(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    /// `a ⊗ b` with `b` broadcast over singleton axes.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.binary(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, x: NodeId, scale: f64) -> NodeId {
        let mut out = self.value(x).clone();
        out.scale(scale);
        let ng = self.ng(x);
        self.push(out, Op::Affine { x, scale }, ng)
    }

    fn unary(&mut self, x: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        let ng = self.ng(x);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Sigmoid(x), pantcr_core::freq::sigmoid)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    fn separable(
        &mut self,
        x: NodeId,
        ty: Vec<Vec<(usize, f64)>>,
        tx: Vec<Vec<(usize, f64)>>,
    ) -> NodeId {
        let out = separable_forward(self.value(x), &ty, &tx);
        let ng = self.ng(x);
        self.push(
            out,
            Op::Separable {
                x,
                ty: Arc::new(ty),
                tx: Arc::new(tx),
            },
            ng,
        )
    }

    /// Stride-1 `(2r+1)²` box mean with reflect padding.
    pub fn avg_pool_reflect(&mut self, x: NodeId, radius: usize) -> NodeId {
        let (h, w) = (self.value(x).h, self.value(x).w);
        self.separable(x, box_taps(h, radius), box_taps(w, radius))
    }

    /// 2×2 mean pooling with stride 2.
    pub fn avg_pool2(&mut self, x: NodeId) -> NodeId {
        let (h, w) = (self.value(x).h, self.value(x).w);
        self.separable(x, pool2_taps(h), pool2_taps(w))
    }

    /// Bilinear ×2 upsampling (half-pixel centres).
    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let (h, w) = (self.value(x).h, self.value(x).w);
        self.separable(x, up2_taps(h), up2_taps(w))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let first = self.value(parts[0]);
        let (h, w) = (first.h, first.w);
        let mut data = Vec::new();
        let mut c = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!((v.h, v.w), (h, w), "concat of misaligned tensors");
            data.extend_from_slice(&v.data);
            c += v.c;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(
            Tensor::from_vec(c, h, w, data),
            Op::Concat(parts.to_vec()),
            ng,
        )
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let out = self.value(x).channels(start, len);
        let ng = self.ng(x);
        self.push(out, Op::Slice { x, start }, ng)
    }

    /// Global average pool to a `c × 1 × 1` vector.
    pub fn gap(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let n = v.plane_len() as f64;
        let data = (0..v.c)
            .map(|c| v.plane(c).iter().sum::<f64>() / n)
            .collect();
        let out = Tensor::from_vec(v.c, 1, 1, data);
        let ng = self.ng(x);
        self.push(out, Op::Gap(x), ng)
    }

    /// Per-channel amplitude and phase of the orthonormal spectrum.
    pub fn decompose(&mut self, x: NodeId) -> (NodeId, NodeId) {
        let v = self.value(x);
        let (c, h, w) = (v.c, v.h, v.w);
        let spec = Arc::new(spectrum(v));
        let amp = Tensor::from_vec(c, h, w, spec.iter().map(|z| z.norm()).collect());
        let pha = Tensor::from_vec(c, h, w, spec.iter().map(|z| wrap_phase(z.arg())).collect());
        let ng = self.ng(x);
        let a = self.push(
            amp,
            Op::Amplitude {
                x,
                spec: spec.clone(),
            },
            ng,
        );
        let p = self.push(pha, Op::Phase { x, spec }, ng);
        (a, p)
    }

    pub fn amplitude(&mut self, x: NodeId) -> NodeId {
        self.decompose(x).0
    }

    pub fn phase(&mut self, x: NodeId) -> NodeId {
        self.decompose(x).1
    }

    /// `Re(IFFT(a·e^{ip}))` per channel.
    pub fn recompose(&mut self, a: NodeId, p: NodeId) -> NodeId {
        let (av, pv) = (self.value(a), self.value(p));
        assert!(av.same_shape(pv), "amplitude and phase shapes differ");
        let z: Vec<Complex64> = av
            .data
            .iter()
            .zip(&pv.data)
            .map(|(&m, &t)| Complex64::from_polar(m, t))
            .collect();
        let out = inverse_real(z, av.c, av.h, av.w);
        let ng = self.ng(a) || self.ng(p);
        self.push(out, Op::Recompose { a, p }, ng)
    }

    /// Normalises every channel to unit L2 norm over its spatial extent.
    pub fn l2_normalize(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for c in 0..out.c {
            let p = out.plane_mut(c);
            let n = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(L2_EPS);
            p.iter_mut().for_each(|v| *v /= n);
        }
        let ng = self.ng(x);
        self.push(out, Op::L2Norm(x), ng)
    }

    /// Per-head channel Gram matrix `G[h, i, j] = <q_i, k_j>`.
    pub fn gram(&mut self, q: NodeId, k: NodeId, heads: usize) -> NodeId {
        let (qv, kv) = (self.value(q), self.value(k));
        assert!(qv.same_shape(kv) && qv.c % heads == 0);
        let d = qv.c / heads;
        let mut out = Tensor::zeros(heads, d, d);
        for hd in 0..heads {
            for i in 0..d {
                let qi = qv.plane(hd * d + i);
                for j in 0..d {
                    let kj = kv.plane(hd * d + j);
                    out.data[(hd * d + i) * d + j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                }
            }
        }
        let ng = self.ng(q) || self.ng(k);
        self.push(out, Op::Gram { q, k, heads }, ng)
    }

    /// Softmax along the last axis.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        let w = out.w;
        for row in out.data.chunks_exact_mut(w) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let ng = self.ng(x);
        self.push(out, Op::Softmax(x), ng)
    }

    /// `out[h·d + i] = Σ_j attn[h, i, j] · v[h·d + j]`.
    pub fn mix_channels(&mut self, attn: NodeId, v: NodeId, heads: usize) -> NodeId {
        let (av, vv) = (self.value(attn), self.value(v));
        let d = vv.c / heads;
        assert_eq!(av.shape(), [heads, d, d]);
        let mut out = Tensor::zeros(vv.c, vv.h, vv.w);
        for hd in 0..heads {
            for i in 0..d {
                let o = out.plane_mut(hd * d + i);
                for j in 0..d {
                    let a = av.data[(hd * d + i) * d + j];
                    for (ov, x) in o.iter_mut().zip(vv.plane(hd * d + j)) {
                        *ov += a * x;
                    }
                }
            }
        }
        let ng = self.ng(attn) || self.ng(v);
        self.push(out, Op::Mix { attn, v, heads }, ng)
    }

    /// Reverse pass seeded with `seed = ∂L/∂out`.
    pub fn backward(&self, out: NodeId, seed: Tensor) -> Gradients {
        assert!(
            seed.same_shape(self.value(out)),
            "seed shape differs from output"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        let mut params = Vec::new();
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            if let Op::Param(pid) = node.op {
                params.push((pid, NodeId(i)));
            }
            grads[i] = Some(g);
        }
        Gradients {
            nodes: grads,
            params,
        }
    }

    fn propagate(&self, op: &Op, y: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv { x, w, b, k } => {
                let (gx, gw, gb) =
                    conv_backward(self.value(*x), self.value(*w), *k, g, self.ng(*x));
                if let Some(gx) = gx {
                    accumulate(grads, *x, gx);
                }
                if self.ng(*w) {
                    accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        accumulate(grads, *b, gb);
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.ng(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.ng(*b) {
                    let bv = self.value(*b);
                    let mut gb = Tensor::zeros(bv.c, bv.h, bv.w);
                    self.reduce_into(&mut gb, g, |gv, _| sign * gv);
                    accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let mut ga = g.clone();
                    let mut i = 0;
                    for c in 0..av.c {
                        for yy in 0..av.h {
                            for x in 0..av.w {
                                ga.data[i] *= bv.data[bidx(bv, c, yy, x)];
                                i += 1;
                            }
                        }
                    }
                    accumulate(grads, *a, ga);
                }
                if self.ng(*b) {
                    let mut gb = Tensor::zeros(bv.c, bv.h, bv.w);
                    self.reduce_into(&mut gb, g, |gv, i| gv * av.data[i]);
                    accumulate(grads, *b, gb);
                }
            }
            Op::Affine { x, scale } => {
                let mut gx = g.clone();
                gx.scale(*scale);
                accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let mut gx = g.clone();
                gx.data.iter_mut().zip(&xv.data).for_each(|(gv, v)| {
                    if *v <= 0.0 {
                        *gv = 0.0
                    }
                });
                accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let mut gx = g.clone();
                gx.data
                    .iter_mut()
                    .zip(&y.data)
                    .for_each(|(gv, s)| *gv *= s * (1.0 - s));
                accumulate(grads, *x, gx);
            }
            Op::Abs(x) => {
                let xv = self.value(*x);
                let mut gx = g.clone();
                gx.data.iter_mut().zip(&xv.data).for_each(|(gv, v)| {
                    *gv *= if *v > 0.0 {
                        1.0
                    } else if *v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                accumulate(grads, *x, gx);
            }
            Op::Separable { x, ty, tx } => {
                let xv = self.value(*x);
                accumulate(grads, *x, separable_adjoint(g, ty, tx, xv.h, xv.w));
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let c = self.value(*p).c;
                    if self.ng(*p) {
                        accumulate(grads, *p, g.channels(start, c));
                    }
                    start += c;
                }
            }
            Op::Slice { x, start } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.c, xv.h, xv.w);
                let n = xv.plane_len();
                gx.data[start * n..start * n + g.len()].copy_from_slice(&g.data);
                accumulate(grads, *x, gx);
            }
            Op::Gap(x) => {
                let xv = self.value(*x);
                let n = xv.plane_len();
                let mut gx = Tensor::zeros(xv.c, xv.h, xv.w);
                for c in 0..xv.c {
                    let v = g.data[c] / n as f64;
                    gx.plane_mut(c).fill(v);
                }
                accumulate(grads, *x, gx);
            }
            Op::Amplitude { x, spec } => {
                let gz: Vec<Complex64> = spec
                    .iter()
                    .zip(&g.data)
                    .map(|(z, &ga)| {
                        let m = z.norm();
                        if m > SPEC_EPS {
                            z * (ga / m)
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    })
                    .collect();
                accumulate(grads, *x, inverse_real(gz, y.c, y.h, y.w));
            }
            Op::Phase { x, spec } => {
                let gz: Vec<Complex64> = spec
                    .iter()
                    .zip(&g.data)
                    .map(|(z, &gp)| {
                        let m2 = z.norm_sqr();
                        if m2 > SPEC_EPS * SPEC_EPS {
                            Complex64::new(-z.im, z.re) * (gp / m2)
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    })
                    .collect();
                accumulate(grads, *x, inverse_real(gz, y.c, y.h, y.w));
            }
            Op::Recompose { a, p } => {
                let (av, pv) = (self.value(*a), self.value(*p));
                let n = y.plane_len();
                let mut wspec: Vec<Complex64> =
                    g.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                for ch in wspec.chunks_exact_mut(n) {
                    fft2(ch, y.h, y.w, false);
                }
                if self.ng(*a) {
                    let data = wspec
                        .iter()
                        .zip(&pv.data)
                        .map(|(w, &t)| w.re * t.cos() + w.im * t.sin())
                        .collect();
                    accumulate(grads, *a, Tensor::from_vec(y.c, y.h, y.w, data));
                }
                if self.ng(*p) {
                    let data = wspec
                        .iter()
                        .zip(pv.data.iter().zip(&av.data))
                        .map(|(w, (&t, &m))| m * (w.im * t.cos() - w.re * t.sin()))
                        .collect();
                    accumulate(grads, *p, Tensor::from_vec(y.c, y.h, y.w, data));
                }
            }
            Op::L2Norm(x) => {
                let xv = self.value(*x);
                let mut gx = g.clone();
                for c in 0..xv.c {
                    let n = xv
                        .plane(c)
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt()
                        .max(L2_EPS);
                    let yp = y.plane(c);
                    let dot: f64 = g.plane(c).iter().zip(yp).map(|(a, b)| a * b).sum();
                    let clamped = n <= L2_EPS;
                    for (gv, yv) in gx.plane_mut(c).iter_mut().zip(yp) {
                        *gv = if clamped {
                            *gv / n
                        } else {
                            (*gv - yv * dot) / n
                        };
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Gram { q, k, heads } => {
                let (qv, kv) = (self.value(*q), self.value(*k));
                let d = qv.c / heads;
                let mut gq = Tensor::zeros(qv.c, qv.h, qv.w);
                let mut gk = Tensor::zeros(kv.c, kv.h, kv.w);
                for hd in 0..*heads {
                    for i in 0..d {
                        for j in 0..d {
                            let gij = g.data[(hd * d + i) * d + j];
                            let (ci, cj) = (hd * d + i, hd * d + j);
                            for (o, v) in gq.plane_mut(ci).iter_mut().zip(kv.plane(cj)) {
                                *o += gij * v;
                            }
                            for (o, v) in gk.plane_mut(cj).iter_mut().zip(qv.plane(ci)) {
                                *o += gij * v;
                            }
                        }
                    }
                }
                if self.ng(*q) {
                    accumulate(grads, *q, gq);
                }
                if self.ng(*k) {
                    accumulate(grads, *k, gk);
                }
            }
            Op::Softmax(x) => {
                let mut gx = g.clone();
                let w = y.w;
                for (grow, yrow) in gx.data.chunks_exact_mut(w).zip(y.data.chunks_exact(w)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (gv, yv) in grow.iter_mut().zip(yrow) {
                        *gv = yv * (*gv - dot);
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Mix { attn, v, heads } => {
                let (av, vv) = (self.value(*attn), self.value(*v));
                let d = vv.c / heads;
                if self.ng(*attn) {
                    let mut ga = Tensor::zeros(av.c, av.h, av.w);
                    for hd in 0..*heads {
                        for i in 0..d {
                            for j in 0..d {
                                ga.data[(hd * d + i) * d + j] = g
                                    .plane(hd * d + i)
                                    .iter()
                                    .zip(vv.plane(hd * d + j))
                                    .map(|(a, b)| a * b)
                                    .sum();
                            }
                        }
                    }
                    accumulate(grads, *attn, ga);
                }
                if self.ng(*v) {
                    let mut gv = Tensor::zeros(vv.c, vv.h, vv.w);
                    for hd in 0..*heads {
                        for i in 0..d {
                            for j in 0..d {
                                let a = av.data[(hd * d + i) * d + j];
                                for (o, gg) in
                                    gv.plane_mut(hd * d + j).iter_mut().zip(g.plane(hd * d + i))
                                {
                                    *o += a * gg;
                                }
                            }
                        }
                    }
                    accumulate(grads, *v, gv);
                }
            }
        }
    }

    /// Sums `f(g[i], i)` over the axes along which `out` is broadcast.
    fn reduce_into(&self, out: &mut Tensor, g: &Tensor, f: impl Fn(f64, usize) -> f64) {
        let mut i = 0;
        for c in 0..g.c {
            for y in 0..g.h {
                for x in 0..g.w {
                    let j = bidx(out, c, y, x);
                    out.data[j] += f(g.data[i], i);
                    i += 1;
                }
            }
        }
    }
}

const L2_EPS: f64 = 1e-12;
const SPEC_EPS: f64 = 1e-12;
