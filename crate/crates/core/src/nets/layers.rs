use crate::autograd::{ConvSpec, Var};
use crate::tensor::Tensor;

use super::params::{Ctx, Init, ParamGroup, ParamId, ParamStore};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const IN_EPS: f64 = 1e-5;

/// Adds parameters under a common name prefix and group.
pub(crate) struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub group: ParamGroup,
    pub seed: u64,
}

impl Builder<'_> {
    fn add(&mut self, name: &str, shape: &[usize], init: Init, trainable: bool) -> ParamId {
        self.store.add(name, self.group, shape, init, trainable, self.seed)
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    w: ParamId,
    b: ParamId,
    spec: ConvSpec,
}

impl Conv {
    pub(crate) fn new(b: &mut Builder, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        let fan_in = cin * k * k;
        Conv {
            w: b.add(&format!("{name}.w"), &[cout, cin, k, k], Init::Fan(fan_in), true),
            b: b.add(&format!("{name}.b"), &[cout], Init::Const(0.0), true),
            spec: ConvSpec::new(stride, k / 2),
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        x.conv2d(ctx.param(self.w), ctx.param(self.b), self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub(crate) fn new(b: &mut Builder, name: &str, fin: usize, fout: usize) -> Self {
        Linear {
            w: b.add(&format!("{name}.w"), &[fout, fin], Init::Fan(fin), true),
            b: b.add(&format!("{name}.b"), &[fout], Init::Const(0.0), true),
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        x.linear(ctx.param(self.w), ctx.param(self.b))
    }

    pub fn out_features(&self, store: &ParamStore) -> usize {
        store.value(self.w).dim(0)
    }

    pub fn in_features(&self, store: &ParamStore) -> usize {
        store.value(self.w).dim(1)
    }
}

/// Batch normalization over `[N, C]` or `[N, C, H, W]`.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

impl BatchNorm {
    pub(crate) fn new(b: &mut Builder, name: &str, c: usize) -> Self {
        BatchNorm {
            gamma: b.add(&format!("{name}.gamma"), &[c], Init::Const(1.0), true),
            beta: b.add(&format!("{name}.beta"), &[c], Init::Const(0.0), true),
            running_mean: b.add(&format!("{name}.running_mean"), &[c], Init::Const(0.0), false),
            running_var: b.add(&format!("{name}.running_var"), &[c], Init::Const(1.0), false),
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let shape = x.shape();
        let (n, c) = (shape[0], shape[1]);
        let s: usize = shape[2..].iter().product();
        let normed = if ctx.is_train() {
            let (y, stats) = x.normalize((n, c, s), BN_EPS);
            let count = (n * s) as f64;
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let rm = ctx.buffer(self.running_mean);
            let rv = ctx.buffer(self.running_var);
            let new_mean = Tensor::from_fn(&[c], |k| (1.0 - BN_MOMENTUM) * rm.data()[k] + BN_MOMENTUM * stats.mean[k]);
            let new_var =
                Tensor::from_fn(&[c], |k| (1.0 - BN_MOMENTUM) * rv.data()[k] + BN_MOMENTUM * stats.var[k] * unbias);
            ctx.record_stat(self.running_mean, new_mean);
            ctx.record_stat(self.running_var, new_var);
            y
        } else {
            let rm = ctx.buffer(self.running_mean);
            let rv = ctx.buffer(self.running_var);
            let g = ctx.graph;
            let shift = g.constant(rm.map(|m| -m));
            let inv = g.constant(rv.map(|v| 1.0 / (v + BN_EPS).sqrt()));
            x.add_channel(shift).mul_channel(inv)
        };
        normed.mul_channel(ctx.param(self.gamma)).add_channel(ctx.param(self.beta))
    }
}

/// Per-sample, per-channel normalization with a learned affine map.
#[derive(Clone, Debug)]
pub struct InstanceNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl InstanceNorm {
    pub(crate) fn new(b: &mut Builder, name: &str, c: usize) -> Self {
        InstanceNorm {
            gamma: b.add(&format!("{name}.gamma"), &[c], Init::Const(1.0), true),
            beta: b.add(&format!("{name}.beta"), &[c], Init::Const(0.0), true),
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let shape = x.shape();
        let (n, c) = (shape[0], shape[1]);
        let s: usize = shape[2..].iter().product();
        let (y, _) = x.normalize((1, n * c, s), IN_EPS);
        y.mul_channel(ctx.param(self.gamma)).add_channel(ctx.param(self.beta))
    }
}

/// Inverted dropout; identity outside training mode.
pub fn dropout<'g>(ctx: &Ctx<'g>, x: Var<'g>, p: f64) -> Var<'g> {
    if !ctx.is_train() || p == 0.0 {
        return x;
    }
    let mask = ctx.graph.constant(ctx.dropout_mask(&x.shape(), p));
    x.mul(mask)
}
