//! Parameter management and the layer structs shared by encoders and
//! decoders. Parameters live outside the tape and re-enter as leaves on
//! every forward pass; batch-norm running moments are registered as
//! non-trainable parameters so checkpoints capture them.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{ActKind, ConvSpec, BN_EPSILON, BN_MOMENTUM};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered, named parameter set with deterministic seeded initialization.
pub struct ParamStore {
    params: Vec<Param>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total element count over every registered tensor.
    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) {
        debug_assert_eq!(value.shape(), self.params[id.0].value.shape());
        self.params[id.0].value = value;
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    fn register(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        debug_assert!(
            !self.params.iter().any(|p| p.name == name),
            "duplicate parameter name {name}"
        );
        self.params.push(Param {
            name: name.to_string(),
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    /// He-uniform initialization: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
    pub fn he_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let limit = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.gen_range(-limit..limit)).collect();
        self.register(name, Tensor::new(shape.to_vec(), data).unwrap(), true)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.register(name, Tensor::zeros(shape), true)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.register(name, Tensor::full(shape, 1.0), true)
    }

    /// Non-trainable state tensor (running moments); checkpointed but
    /// never bound with gradients.
    pub fn state(&mut self, name: &str, value: Tensor) -> ParamId {
        self.register(name, value, false)
    }

    /// Mark every parameter whose name starts with `prefix`.
    pub fn set_trainable_by_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) && !p.name.ends_with(".running_mean")
                && !p.name.ends_with(".running_var")
            {
                p.trainable = trainable;
            }
        }
    }

    pub fn any_trainable_with_prefix(&self, prefix: &str) -> bool {
        self.params
            .iter()
            .any(|p| p.name.starts_with(prefix) && p.trainable)
    }

    /// Enter every parameter onto a fresh tape.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), p.trainable))
            .collect();
        Binding { vars }
    }
}

/// ParamId -> Var map for one tape.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Everything a layer needs during one forward pass.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a mut ParamStore,
    pub bind: &'a Binding,
    pub training: bool,
}

impl<'a> Ctx<'a> {
    pub fn new(
        tape: &'a mut Tape,
        store: &'a mut ParamStore,
        bind: &'a Binding,
        training: bool,
    ) -> Self {
        Ctx {
            tape,
            store,
            bind,
            training,
        }
    }
}

/// Collect (id, gradient) pairs for the optimizer in registration order.
pub fn trainable_grads<'g>(
    store: &ParamStore,
    bind: &Binding,
    grads: &'g Gradients,
) -> Vec<(ParamId, &'g Tensor)> {
    store
        .iter()
        .filter(|(_, p)| p.trainable)
        .filter_map(|(id, _)| grads.get(bind.var(id)).map(|g| (id, g)))
        .collect()
}

// ── layers ──────────────────────────────────────────────────────────

pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, spec: ConvSpec) -> Self {
        let (kh, kw) = spec.kernel;
        let in_per_group = if spec.depthwise { 1 } else { in_channels };
        let fan_in = in_per_group * kh * kw;
        let weight = store.he_uniform(
            &format!("{name}.weight"),
            &[spec.out_channels, in_per_group, kh, kw],
            fan_in,
        );
        let bias = Some(store.zeros(&format!("{name}.bias"), &[spec.out_channels]));
        Conv2d { weight, bias, spec }
    }

    /// Bias-free variant for layers followed by batch norm.
    pub fn without_bias(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        spec: ConvSpec,
    ) -> Self {
        let (kh, kw) = spec.kernel;
        let in_per_group = if spec.depthwise { 1 } else { in_channels };
        let fan_in = in_per_group * kh * kw;
        let weight = store.he_uniform(
            &format!("{name}.weight"),
            &[spec.out_channels, in_per_group, kh, kw],
            fan_in,
        );
        Conv2d {
            weight,
            bias: None,
            spec,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.bind.var(self.weight);
        let b = self.bias.map(|b| ctx.bind.var(b));
        ctx.tape.conv2d(x, w, b, &self.spec)
    }
}

pub struct TransposedConv2d {
    pub weight: ParamId,
    pub stride: usize,
    pub out_channels: usize,
}

impl TransposedConv2d {
    /// kernel == stride: exact integer upscaling.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Self {
        let fan_in = in_channels * stride * stride;
        let weight = store.he_uniform(
            &format!("{name}.weight"),
            &[in_channels, out_channels, stride, stride],
            fan_in,
        );
        TransposedConv2d {
            weight,
            stride,
            out_channels,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.bind.var(self.weight);
        ctx.tape.transposed_conv2d(x, w, self.stride)
    }
}

pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    pub epsilon: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: store.ones(&format!("{name}.gamma"), &[channels]),
            beta: store.zeros(&format!("{name}.beta"), &[channels]),
            running_mean: store.state(&format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.state(
                &format!("{name}.running_var"),
                Tensor::full(&[channels], 1.0),
            ),
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    /// A frozen layer (non-trainable gamma) runs in inference mode and
    /// leaves its running moments untouched.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let training = ctx.training && ctx.store.is_trainable(self.gamma);
        let gamma = ctx.bind.var(self.gamma);
        let beta = ctx.bind.var(self.beta);
        let rm = ctx.store.value(self.running_mean).data().to_vec();
        let rv = ctx.store.value(self.running_var).data().to_vec();
        let (out, moments) = ctx
            .tape
            .batch_norm(x, gamma, beta, &rm, &rv, self.epsilon, training)?;
        if let Some(m) = moments {
            let mom = self.momentum;
            let mean = ctx.store.value_mut(self.running_mean);
            for (r, b) in mean.data_mut().iter_mut().zip(&m.mean) {
                *r = (1.0 - mom) * *r + mom * b;
            }
            let var = ctx.store.value_mut(self.running_var);
            for (r, b) in var.data_mut().iter_mut().zip(&m.var) {
                *r = (1.0 - mom) * *r + mom * b;
            }
        }
        Ok(out)
    }
}

/// conv -> batch norm -> activation, the workhorse block of every family.
pub struct ConvBnAct {
    pub conv: Conv2d,
    pub bn: Option<BatchNorm2d>,
    pub act: Option<ActKind>,
}

impl ConvBnAct {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        spec: ConvSpec,
        act: Option<ActKind>,
    ) -> Self {
        let conv = Conv2d::without_bias(store, &format!("{name}.conv"), in_channels, spec);
        let bn = BatchNorm2d::new(store, &format!("{name}.bn"), spec.out_channels);
        ConvBnAct {
            conv,
            bn: Some(bn),
            act,
        }
    }

    pub fn without_bn(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        spec: ConvSpec,
        act: Option<ActKind>,
    ) -> Self {
        let conv = Conv2d::new(store, &format!("{name}.conv"), in_channels, spec);
        ConvBnAct {
            conv,
            bn: None,
            act,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut y = self.conv.forward(ctx, x)?;
        if let Some(bn) = &self.bn {
            y = bn.forward(ctx, y)?;
        }
        if let Some(kind) = self.act {
            y = ctx.tape.activation(kind, y)?;
        }
        Ok(y)
    }
}

/// Validate that a batch is N x 3 x H x W with H, W divisible by 32.
pub fn check_input_batch(t: &Tensor) -> Result<()> {
    let shape = t.shape();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected N x 3 x H x W input, got {shape:?}"
        )));
    }
    let (h, w) = (shape[2], shape[3]);
    if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
        return Err(Error::InputNotDivisible { h, w, divisor: 32 });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_parameters() {
        let build = |seed| {
            let mut s = ParamStore::new(seed);
            s.he_uniform("a", &[4, 3, 3, 3], 27);
            s.he_uniform("b", &[8], 4);
            s
        };
        let a = build(9);
        let b = build(9);
        let c = build(10);
        for ((_, pa), (_, pb)) in a.iter().zip(b.iter()) {
            assert_eq!(pa.value.data(), pb.value.data());
        }
        let equal_c = a
            .iter()
            .zip(c.iter())
            .all(|((_, pa), (_, pc))| pa.value.data() == pc.value.data());
        assert!(!equal_c, "different seeds should differ");
    }

    #[test]
    fn he_uniform_within_limit() {
        let mut s = ParamStore::new(0);
        let id = s.he_uniform("w", &[64, 4, 3, 3], 36);
        let limit = (6.0f64 / 36.0).sqrt();
        for &v in s.value(id).data() {
            assert!(v.abs() <= limit);
        }
    }

    #[test]
    fn freeze_by_prefix_spares_running_stats_flag() {
        let mut s = ParamStore::new(0);
        let conv = s.he_uniform("encoder.c.weight", &[1, 1, 1, 1], 1);
        let head = s.he_uniform("head.weight", &[1, 1, 1, 1], 1);
        s.set_trainable_by_prefix("encoder.", false);
        assert!(!s.is_trainable(conv));
        assert!(s.is_trainable(head));
        s.set_trainable_by_prefix("encoder.", true);
        assert!(s.is_trainable(conv));
    }

    #[test]
    fn frozen_bn_keeps_running_stats() {
        let mut store = ParamStore::new(1);
        let bn = BatchNorm2d::new(&mut store, "encoder.bn", 2);
        store.set_trainable_by_prefix("encoder.", false);
        let before = store.value(bn.running_mean).clone();
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let x = tape.constant(Tensor::full(&[1, 2, 2, 2], 5.0));
        let mut ctx = Ctx::new(&mut tape, &mut store, &bind, true);
        bn.forward(&mut ctx, x).unwrap();
        assert_eq!(store.value(bn.running_mean).data(), before.data());
    }

    #[test]
    fn training_bn_updates_running_stats() {
        let mut store = ParamStore::new(1);
        let bn = BatchNorm2d::new(&mut store, "bn", 1);
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let x = tape.constant(Tensor::full(&[1, 1, 2, 2], 10.0));
        let mut ctx = Ctx::new(&mut tape, &mut store, &bind, true);
        bn.forward(&mut ctx, x).unwrap();
        // momentum 0.1, batch mean 10, start 0 -> 1.0
        assert!((store.value(bn.running_mean).data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn input_batch_validation() {
        assert!(check_input_batch(&Tensor::zeros(&[1, 3, 64, 64])).is_ok());
        assert!(matches!(
            check_input_batch(&Tensor::zeros(&[1, 3, 48, 64])),
            Err(Error::InputNotDivisible { .. })
        ));
        assert!(check_input_batch(&Tensor::zeros(&[1, 4, 64, 64])).is_err());
    }
}
