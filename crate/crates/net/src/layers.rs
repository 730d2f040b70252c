//! Parameterised building blocks that record themselves on a [`Graph`].

use crate::graph::{Graph, NodeId};
use crate::params::{Fill, ParamId, Registry};

/// Zero-padded `k×k` convolution (odd `k`, stride 1).
#[derive(Debug, Clone)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    w: ParamId,
    b: Option<ParamId>,
}

/// Initial value of a convolution's weight and bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvInit {
    Uniform,
    /// Residual emitter: starts at exactly zero.
    Zero,
    /// Scalar 1→1 map initialised to the identity (weight 1, bias 0).
    Identity,
}

impl Conv {
    pub fn new(
        reg: &mut Registry<'_>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        bias: bool,
        init: ConvInit,
    ) -> Self {
        let fan_in = cin * k * k;
        let (wf, bf) = match init {
            ConvInit::Uniform => (Fill::Uniform { fan_in }, Fill::Uniform { fan_in }),
            ConvInit::Zero => (Fill::Zeros, Fill::Zeros),
            ConvInit::Identity => (Fill::Const(1.0), Fill::Zeros),
        };
        reg.scoped(name, |r| {
            let w = r.param("weight", [cout, cin, k * k], wf);
            let b = bias.then(|| r.param("bias", [cout, 1, 1], bf));
            Conv { cin, cout, k, w, b }
        })
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.b
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.conv(x, w, b, self.k)
    }
}

/// Two-layer perceptron over `c × 1 × 1` vectors with a ReLU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Conv,
    pub fc2: Conv,
}

impl Mlp {
    pub fn new(
        reg: &mut Registry<'_>,
        name: &str,
        c: usize,
        hidden: usize,
        zero_last: bool,
    ) -> Self {
        reg.scoped(name, |r| Mlp {
            fc1: Conv::new(r, "fc1", c, hidden, 1, true, ConvInit::Uniform),
            fc2: Conv::new(
                r,
                "fc2",
                hidden,
                c,
                1,
                true,
                if zero_last {
                    ConvInit::Zero
                } else {
                    ConvInit::Uniform
                },
            ),
        })
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        let h = self.fc1.apply(g, x);
        let h = g.relu(h);
        self.fc2.apply(g, h)
    }
}

pub fn hidden_width(c: usize) -> usize {
    (c / 2).max(1)
}

/// Degradation residual predictor: `2C → C → … → C` convolutions with ReLU
/// between them and a zero-initialised last layer.
///
/// With `depth == 0` the module degrades to a single zero-initialised 1×1
/// fusion of the concatenated inputs.
#[derive(Debug, Clone)]
pub struct Dam {
    convs: Vec<Conv>,
}

impl Dam {
    pub fn new(reg: &mut Registry<'_>, name: &str, c: usize, depth: usize) -> Self {
        reg.scoped(name, |r| {
            if depth == 0 {
                return Dam {
                    convs: vec![Conv::new(r, "fuse", 2 * c, c, 1, true, ConvInit::Zero)],
                };
            }
            let convs = (0..depth)
                .map(|i| {
                    let cin = if i == 0 { 2 * c } else { c };
                    let init = if i + 1 == depth {
                        ConvInit::Zero
                    } else {
                        ConvInit::Uniform
                    };
                    Conv::new(r, &format!("conv{i}"), cin, c, 3, true, init)
                })
                .collect();
            Dam { convs }
        })
    }

    /// Wraps an explicit stack (used where no layer should start at zero).
    pub fn with_convs(convs: Vec<Conv>) -> Self {
        Dam { convs }
    }

    pub fn convs(&self) -> &[Conv] {
        &self.convs
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            if i > 0 {
                h = g.relu(h);
            }
            h = conv.apply(g, h);
        }
        h
    }
}

/// Contrast-aware high-pass filter `x ⊗ σ(a·|x − AvgPool(x)| + b)` with a
/// learnable scalar affine `(a, b)` initialised to `(1, 0)`.
#[derive(Debug, Clone)]
pub struct Highpass {
    pub affine: Conv,
    pub radius: usize,
}

impl Highpass {
    pub fn new(reg: &mut Registry<'_>, name: &str, radius: usize) -> Self {
        Highpass {
            affine: Conv::new(reg, name, 1, 1, 1, true, ConvInit::Identity),
            radius,
        }
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        let pooled = g.avg_pool_reflect(x, self.radius);
        let d = g.sub(x, pooled);
        let d = g.abs(d);
        let t = self.affine.apply(g, d);
        let s = g.sigmoid(t);
        g.mul(x, s)
    }
}
