//! The convolutional viewer: a two-scale counting module, the single-scale
//! counting head used when that viewer is off, and the GRU coverage
//! decoder conditioned on counts.

use rand::Rng;

use super::nn::{Conv, Linear};
use crate::error::{Error, Result};
use crate::tensor::{gru_cell, Conv2dSpec, Float, Graph, GruParams, ParamId, ParamStore, PoolKind, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct MscmConfig {
    /// Channels of each branch's first convolution.
    pub hidden: usize,
    /// Squeeze ratio of the channel attention bottleneck.
    pub squeeze: usize,
    /// Width of the count feature handed to the recurrent decoder.
    pub feature_dim: usize,
    pub channel_attention: bool,
    /// Kernel sizes of the two branches.
    pub kernels: [usize; 2],
}

impl Default for MscmConfig {
    fn default() -> Self {
        MscmConfig {
            hidden: 16,
            squeeze: 4,
            feature_dim: 32,
            channel_attention: true,
            kernels: [3, 5],
        }
    }
}

/// `sigmoid(W2 · relu(W1 · avgpool(x)))` gating of each channel.
#[derive(Debug, Clone, Copy)]
pub struct ChannelAttention {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl ChannelAttention {
    pub fn new<F: Float>(store: &mut ParamStore<F>, name: &str, channels: usize, squeeze: usize, rng: &mut impl Rng) -> Self {
        let mid = (channels / squeeze.max(1)).max(1);
        ChannelAttention {
            w1: store.glorot(format!("{name}.w1"), &[channels, mid], channels, mid, rng),
            w2: store.glorot(format!("{name}.w2"), &[mid, channels], mid, channels, rng),
        }
    }

    /// Per-channel gate values, `(C)`.
    pub fn gate<'g, F: Float>(&self, g: &'g Graph<F>, store: &ParamStore<F>, x: Var<'g, F>) -> Result<Var<'g, F>> {
        let s = x.shape();
        if s.len() != 3 {
            return Err(Error::shape("channel_attention", &s, &[0, 0, 0]));
        }
        let pooled = x.global_pool(PoolKind::Avg)?.reshape(&[1, s[0]])?;
        let z = pooled.matmul(g.param(store, self.w1))?.relu();
        z.matmul(g.param(store, self.w2))?.sigmoid().reshape(&[s[0]])
    }
}

/// `x` scaled channel-wise by its attention gate.
pub fn channel_attention<'g, F: Float>(
    g: &'g Graph<F>,
    store: &ParamStore<F>,
    ca: &ChannelAttention,
    x: Var<'g, F>,
) -> Result<Var<'g, F>> {
    let s = x.shape();
    let gate = ca.gate(g, store, x)?.reshape(&[s[0], 1, 1])?.expand(&s)?;
    x.mul(gate)
}

#[derive(Debug, Clone)]
struct Branch {
    conv: Conv,
    attention: ChannelAttention,
    proj: Conv,
}

/// Parameter handles of the counting module.
#[derive(Debug, Clone)]
pub struct Mscm {
    pub cfg: MscmConfig,
    pub classes: usize,
    branches: [Branch; 2],
    feature: Linear,
}

pub struct MscmOutput<'g, F: Float> {
    /// `(classes)`, non-negative.
    pub count_pred: Var<'g, F>,
    /// `(1, feature_dim)`.
    pub count_feature: Var<'g, F>,
}

impl Mscm {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        cfg: &MscmConfig,
        in_channels: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if cfg.hidden == 0 || cfg.feature_dim == 0 || cfg.kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config("counting module: hidden and feature_dim must be positive, kernels odd".into()));
        }
        let branch = |store: &mut ParamStore<F>, i: usize, k: usize, rng: &mut _| Branch {
            conv: Conv::new(store, &format!("mscm.branch{i}.conv"), in_channels, cfg.hidden, k, Conv2dSpec::same(k), true, rng),
            attention: ChannelAttention::new(store, &format!("mscm.branch{i}.attention"), cfg.hidden, cfg.squeeze, rng),
            proj: Conv::new(store, &format!("mscm.branch{i}.proj"), cfg.hidden, classes, 1, Conv2dSpec::UNIT, true, rng),
        };
        let b0 = branch(store, 0, cfg.kernels[0], rng);
        let b1 = branch(store, 1, cfg.kernels[1], rng);
        Ok(Mscm {
            cfg: cfg.clone(),
            classes,
            branches: [b0, b1],
            feature: Linear::new(store, "mscm.feature", classes, cfg.feature_dim, true, rng),
        })
    }

    /// Count estimate of one branch, `(classes)`.
    fn branch<'g, F: Float>(&self, g: &'g Graph<F>, store: &ParamStore<F>, b: &Branch, x: Var<'g, F>) -> Result<Var<'g, F>> {
        let mut h = b.conv.forward(g, store, x)?.relu();
        if self.cfg.channel_attention {
            h = channel_attention(g, store, &b.attention, h)?;
        }
        b.proj.forward(g, store, h)?.sigmoid().global_pool(PoolKind::Sum)
    }

    pub fn forward<'g, F: Float>(&self, g: &'g Graph<F>, store: &ParamStore<F>, features: Var<'g, F>) -> Result<MscmOutput<'g, F>> {
        if features.shape().len() != 3 {
            return Err(Error::shape("mscm_forward", &features.shape(), &[0, 0, 0]));
        }
        let a = self.branch(g, store, &self.branches[0], features)?;
        let b = self.branch(g, store, &self.branches[1], features)?;
        let count_pred = a.add(b)?.mul_scalar(0.5);
        let count_feature = self.feature.forward(g, store, count_pred.reshape(&[1, self.classes])?)?;
        Ok(MscmOutput {
            count_pred,
            count_feature,
        })
    }

    /// The module with its two branches exchanged.
    pub fn swapped(&self) -> Mscm {
        let mut m = self.clone();
        m.branches.swap(0, 1);
        m.cfg.kernels.swap(0, 1);
        m
    }
}

/// Runs the counting module.
pub fn mscm_forward<'g, F: Float>(
    g: &'g Graph<F>,
    store: &ParamStore<F>,
    mscm: &Mscm,
    features: Var<'g, F>,
) -> Result<MscmOutput<'g, F>> {
    mscm.forward(g, store, features)
}

/// Single-scale counting head: 1×1 convolution, sigmoid, sum pooling.
#[derive(Debug, Clone)]
pub struct CountHead {
    pub classes: usize,
    proj: Conv,
}

impl CountHead {
    pub fn new<F: Float>(store: &mut ParamStore<F>, in_channels: usize, classes: usize, rng: &mut impl Rng) -> Self {
        CountHead {
            classes,
            proj: Conv::new(store, "count_head.proj", in_channels, classes, 1, Conv2dSpec::UNIT, true, rng),
        }
    }

    pub fn forward<'g, F: Float>(&self, g: &'g Graph<F>, store: &ParamStore<F>, features: Var<'g, F>) -> Result<Var<'g, F>> {
        self.proj.forward(g, store, features)?.sigmoid().global_pool(PoolKind::Sum)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcadConfig {
    pub hidden: usize,
    pub embed_dim: usize,
    pub attention_dim: usize,
    pub coverage_kernel: usize,
}

impl Default for CcadConfig {
    fn default() -> Self {
        CcadConfig {
            hidden: 64,
            embed_dim: 32,
            attention_dim: 32,
            coverage_kernel: 5,
        }
    }
}

/// Recurrent state of the coverage decoder.
#[derive(Clone, Copy)]
pub struct CoverageState<'g, F: Float> {
    /// `(1, H', W')`, the sum of every attention map so far.
    pub coverage: Var<'g, F>,
    /// `(1, hidden)`.
    pub hidden: Var<'g, F>,
}

/// Step-invariant projections of the features.
#[derive(Clone, Copy)]
pub struct CcadMemory<'g, F: Float> {
    /// `(S, C')`.
    features: Var<'g, F>,
    /// `(S, attention_dim)`.
    projected: Var<'g, F>,
    grid: (usize, usize),
}

/// Parameter handles of the coverage decoder.
#[derive(Debug, Clone)]
pub struct Ccad {
    pub cfg: CcadConfig,
    pub vocab_size: usize,
    embed: ParamId,
    init_hidden: ParamId,
    w_f: Conv,
    w_h: Linear,
    w_c: Conv,
    v: Linear,
    gru: GruParams,
    out: Linear,
}

pub struct CcadStep<'g, F: Float> {
    /// `(1, vocabulary size)`.
    pub logits: Var<'g, F>,
    /// `(1, S)`.
    pub attention: Var<'g, F>,
    pub state: CoverageState<'g, F>,
}

impl Ccad {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        cfg: &CcadConfig,
        feature_channels: usize,
        count_dim: usize,
        vocab_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if cfg.coverage_kernel % 2 == 0 || cfg.hidden == 0 || cfg.attention_dim == 0 || cfg.embed_dim == 0 {
            return Err(Error::Config("coverage decoder: sizes must be positive, kernel odd".into()));
        }
        let (a, k) = (cfg.attention_dim, cfg.coverage_kernel);
        Ok(Ccad {
            cfg: cfg.clone(),
            vocab_size,
            embed: store.glorot("ccad.embed", &[vocab_size, cfg.embed_dim], vocab_size, cfg.embed_dim, rng),
            init_hidden: store.zeros("ccad.init_hidden", &[1, cfg.hidden]),
            w_f: Conv::new(store, "ccad.w_f", feature_channels, a, 1, Conv2dSpec::UNIT, true, rng),
            w_h: Linear::new(store, "ccad.w_h", cfg.hidden, a, false, rng),
            w_c: Conv::new(store, "ccad.w_c", 1, a, k, Conv2dSpec::same(k), false, rng),
            v: Linear::new(store, "ccad.v", a, 1, false, rng),
            gru: GruParams::new(store, "ccad.gru", cfg.embed_dim + feature_channels + count_dim, cfg.hidden, rng),
            out: Linear::new(store, "ccad.out", cfg.hidden, vocab_size, true, rng),
        })
    }

    pub fn memory<'g, F: Float>(&self, g: &'g Graph<F>, store: &ParamStore<F>, features: Var<'g, F>) -> Result<CcadMemory<'g, F>> {
        let s = features.shape();
        if s.len() != 3 {
            return Err(Error::shape("ccad memory", &s, &[0, 0, 0]));
        }
        let n = s[1] * s[2];
        let projected = self
            .w_f
            .forward(g, store, features)?
            .reshape(&[self.cfg.attention_dim, n])?
            .transpose()?;
        Ok(CcadMemory {
            features: features.reshape(&[s[0], n])?.transpose()?,
            projected,
            grid: (s[1], s[2]),
        })
    }

    pub fn initial_state<'g, F: Float>(&self, g: &'g Graph<F>, store: &ParamStore<F>, memory: &CcadMemory<'g, F>) -> CoverageState<'g, F> {
        CoverageState {
            coverage: g.constant(Tensor::zeros(&[1, memory.grid.0, memory.grid.1])),
            hidden: g.param(store, self.init_hidden),
        }
    }

    /// Teacher-forced symbol logits for `input_ids`, `(T, vocabulary size)`,
    /// and the attention maps.
    pub fn forward<'g, F: Float>(
        &self,
        g: &'g Graph<F>,
        store: &ParamStore<F>,
        memory: &CcadMemory<'g, F>,
        count_feature: Var<'g, F>,
        input_ids: &[usize],
    ) -> Result<(Var<'g, F>, Vec<Var<'g, F>>)> {
        let mut state = self.initial_state(g, store, memory);
        let mut logits = Vec::with_capacity(input_ids.len());
        let mut maps = Vec::with_capacity(input_ids.len());
        for &id in input_ids {
            let step = ccad_step(g, store, self, state, memory, count_feature, id)?;
            logits.push(step.logits);
            maps.push(step.attention);
            state = step.state;
        }
        Ok((Var::concat(&logits, 0)?, maps))
    }
}

/// One decoding step: coverage attention over the features, a GRU update
/// on `[embedding, context, count_feature]`, and the symbol logits.
pub fn ccad_step<'g, F: Float>(
    g: &'g Graph<F>,
    store: &ParamStore<F>,
    ccad: &Ccad,
    state: CoverageState<'g, F>,
    memory: &CcadMemory<'g, F>,
    count_feature: Var<'g, F>,
    prev_token: usize,
) -> Result<CcadStep<'g, F>> {
    let n = memory.grid.0 * memory.grid.1;
    let a = ccad.cfg.attention_dim;
    let from_hidden = ccad.w_h.forward(g, store, state.hidden)?.expand(&[n, a])?;
    let from_cov = ccad.w_c.forward(g, store, state.coverage)?.reshape(&[a, n])?.transpose()?;
    let energy = memory.projected.add(from_hidden)?.add(from_cov)?.tanh();
    let scores = ccad.v.forward(g, store, energy)?.reshape(&[1, n])?;
    let attention = scores.softmax(1)?;
    let context = attention.matmul(memory.features)?;
    let embed = g.param(store, ccad.embed).embedding(&[prev_token])?;
    let input = Var::concat(&[embed, context, count_feature], 1)?;
    let hidden = gru_cell(input, state.hidden, &ccad.gru.bind(g, store))?;
    let logits = ccad.out.forward(g, store, hidden)?;
    let coverage = state.coverage.add(attention.reshape(&[1, memory.grid.0, memory.grid.1])?)?;
    Ok(CcadStep {
        logits,
        attention,
        state: CoverageState { coverage, hidden },
    })
}
