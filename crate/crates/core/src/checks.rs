//! Finite-difference gradient checks for every primitive and for the
//! composite modules, at 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Image, synth_vocab};
use crate::error::Result;
use crate::model::cnn::{channel_attention, ccad_step, Ccad, CcadConfig, ChannelAttention, Mscm, MscmConfig};
use crate::model::transformer::{implicit_attention_refine, loss_pos, loss_rec, TransformerConfig, TransformerViewer};
use crate::model::{Model, ModelConfig, TaskFlags, Target};
use crate::posforest::RelPos;
use crate::tensor::{
    grad_check, grad_check_params, gru_cell, Conv2dSpec, GradCheckOptions, Graph, GruParams, ParamStore, PoolKind, Tensor,
    Var,
};
use crate::trainer::{weighted_total, LossWeights};

/// Largest relative error accepted for a single operation.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
/// Largest relative error accepted for a module built from many operations.
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;

/// Central-difference steps. Composites take the larger one: their losses
/// pass through many roundings.
const EPS: f64 = 1e-6;
const COMPOSITE_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Primitive,
    Composite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub kind: CheckKind,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn tolerance(&self) -> f64 {
        match self.kind {
            CheckKind::Primitive => PRIMITIVE_TOLERANCE,
            CheckKind::Composite => COMPOSITE_TOLERANCE,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance()
    }
}

/// Values in `±[0.1, 1]`, clear of the kinks at zero.
fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces `v` to a scalar through a fixed random weighting, so that every
/// output element gets a distinct upstream gradient.
fn probe<'g>(g: &'g Graph<f64>, v: Var<'g, f64>) -> Result<Var<'g, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(v.numel() as u64 ^ 0xC0FFEE);
    let w = rand_tensor(&mut rng, &v.shape());
    Ok(v.mul(g.constant(w))?.sum())
}

/// One entry per differentiable operation of [`Var`].
pub fn primitive_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut run = |name: &str, shapes: &[&[usize]], f: &dyn for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>| -> Result<()> {
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
        let err = grad_check(|g, v| probe(g, f(g, v)?), &inputs, EPS)?;
        out.push(CheckResult {
            name: name.to_owned(),
            kind: CheckKind::Primitive,
            max_rel_error: err,
        });
        Ok(())
    };
    run("add", &[&[2, 3], &[2, 3]], &|_, v| v[0].add(v[1]))?;
    run("sub", &[&[2, 3], &[2, 3]], &|_, v| v[0].sub(v[1]))?;
    run("mul", &[&[2, 3], &[2, 3]], &|_, v| v[0].mul(v[1]))?;
    run("add_scalar", &[&[4]], &|_, v| Ok(v[0].add_scalar(0.7)))?;
    run("mul_scalar", &[&[4]], &|_, v| Ok(v[0].mul_scalar(-1.3)))?;
    run("neg", &[&[4]], &|_, v| Ok(v[0].neg()))?;
    run("relu", &[&[3, 4]], &|_, v| Ok(v[0].relu()))?;
    run("sigmoid", &[&[3, 4]], &|_, v| Ok(v[0].sigmoid()))?;
    run("tanh", &[&[3, 4]], &|_, v| Ok(v[0].tanh()))?;
    run("matmul", &[&[3, 4], &[4, 2]], &|_, v| v[0].matmul(v[1]))?;
    run("matmul_batched", &[&[2, 3, 4], &[2, 4, 5]], &|_, v| v[0].matmul(v[1]))?;
    run("transpose", &[&[3, 4]], &|_, v| v[0].transpose())?;
    run("permute", &[&[2, 3, 4]], &|_, v| v[0].permute(&[2, 0, 1]))?;
    run("reshape", &[&[2, 6]], &|_, v| v[0].reshape(&[3, 4]))?;
    run("expand", &[&[1, 3]], &|_, v| v[0].expand(&[4, 3]))?;
    run("concat", &[&[2, 3], &[2, 2]], &|_, v| Var::concat(&[v[0], v[1]], 1))?;
    run("slice", &[&[4, 3]], &|_, v| v[0].slice(0, 1, 3))?;
    run("conv2d", &[&[2, 5, 6], &[3, 2, 3, 3], &[3]], &|_, v| {
        v[0].conv2d(v[1], Some(v[2]), Conv2dSpec { stride: 2, padding: 1 })
    })?;
    run("conv2d_pointwise", &[&[3, 4, 4], &[2, 3, 1, 1]], &|_, v| v[0].conv2d(v[1], None, Conv2dSpec::UNIT))?;
    run("pool2d_avg", &[&[2, 5, 5]], &|_, v| v[0].pool2d(PoolKind::Avg, 2, 2))?;
    run("pool2d_sum", &[&[2, 4, 5]], &|_, v| v[0].pool2d(PoolKind::Sum, 3, 2))?;
    run("global_pool", &[&[3, 2, 4]], &|_, v| v[0].global_pool(PoolKind::Avg))?;
    run("softmax", &[&[3, 5]], &|_, v| v[0].softmax(1))?;
    run("softmax_axis0", &[&[4, 3]], &|_, v| v[0].softmax(0))?;
    run("layer_norm", &[&[3, 5], &[5], &[5]], &|_, v| v[0].layer_norm(1, Some(v[1]), Some(v[2]), 1e-5))?;
    run("layer_norm_channels", &[&[4, 2, 3], &[4], &[4]], &|_, v| {
        v[0].layer_norm(0, Some(v[1]), Some(v[2]), 1e-5)
    })?;
    run("embedding", &[&[5, 3]], &|_, v| v[0].embedding(&[4, 0, 4, 2]))?;
    run("sum", &[&[2, 3]], &|_, v| Ok(v[0].sum()))?;
    run("mean", &[&[2, 3]], &|_, v| Ok(v[0].mean()))?;
    run("sum_axis", &[&[2, 3, 4]], &|_, v| v[0].sum_axis(1))?;
    run("cross_entropy", &[&[4, 5]], &|_, v| v[0].cross_entropy(&[1, 4, 9, 0], Some(9)))?;
    run("smooth_l1", &[&[6]], &|g, v| {
        // residuals on both sides of the transition point
        let shift = Tensor::from_f64(&[6], &[0.0, -2.5, 0.0, 3.0, 0.0, -4.0])?;
        v[0].add(g.constant(shift))?.smooth_l1(&[0.0; 6])
    })?;
    Ok(out)
}

fn composite(name: &str, err: f64) -> CheckResult {
    CheckResult {
        name: name.to_owned(),
        kind: CheckKind::Composite,
        max_rel_error: err,
    }
}

fn param_opts(seed: u64) -> GradCheckOptions {
    GradCheckOptions {
        epsilon: COMPOSITE_EPS,
        max_coords_per_tensor: Some(6),
        seed,
    }
}

/// Gradient checks of the recurrent cell, channel attention, the counting
/// module with its loss, attention refinement, the coverage decoder, the
/// Transformer decoder, and the full tiny model under `tasks`.
pub fn composite_checks(tasks: TaskFlags, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // GRU cell, inputs stored as parameters so they are checked too
    {
        let mut store = ParamStore::<f64>::new();
        let gru = GruParams::new(&mut store, "gru", 3, 4, &mut rng);
        let x = store.add("x", rand_tensor(&mut rng, &[1, 3]));
        let h = store.add("h", rand_tensor(&mut rng, &[1, 4]));
        let err = grad_check_params(
            |g, s| probe(g, gru_cell(g.param(s, x), g.param(s, h), &gru.bind(g, s))?),
            &store,
            param_opts(seed),
        )?;
        out.push(composite("gru_cell", err));
    }

    {
        let mut store = ParamStore::<f64>::new();
        let ca = ChannelAttention::new(&mut store, "ca", 8, 4, &mut rng);
        let x = store.add("x", rand_tensor(&mut rng, &[8, 3, 3]));
        let err = grad_check_params(
            |g, s| probe(g, channel_attention(g, s, &ca, g.param(s, x))?),
            &store,
            param_opts(seed),
        )?;
        out.push(composite("channel_attention", err));
    }

    {
        let mut store = ParamStore::<f64>::new();
        let cfg = MscmConfig {
            hidden: 4,
            squeeze: 2,
            feature_dim: 3,
            ..MscmConfig::default()
        };
        let mscm = Mscm::new(&mut store, &cfg, 3, 5, &mut rng)?;
        let x = store.add("x", rand_tensor(&mut rng, &[3, 3, 4]));
        let target = [0.0, 1.0, 3.0, 9.0, 5.5];
        let err = grad_check_params(
            |g, s| {
                let m = mscm.forward(g, s, g.param(s, x))?;
                m.count_pred.smooth_l1(&target)?.add(probe(g, m.count_feature)?)
            },
            &store,
            param_opts(seed),
        )?;
        out.push(composite("mscm_smooth_l1", err));
    }

    {
        let mut store = ParamStore::<f64>::new();
        let raw = store.add("raw", rand_tensor(&mut rng, &[2, 6]));
        let hist = store.add("history", Tensor::from_fn(&[2, 6], |i| 0.2 + 0.1 * (i % 5) as f64));
        let kernel = store.add("kernel", rand_tensor(&mut rng, &[2, 2, 3, 3]));
        let err = grad_check_params(
            |g, s| {
                probe(
                    g,
                    implicit_attention_refine(g.param(s, raw), g.param(s, hist), g.param(s, kernel), (2, 3))?,
                )
            },
            &store,
            param_opts(seed),
        )?;
        out.push(composite("attention_refine", err));
    }

    {
        let mut store = ParamStore::<f64>::new();
        let cfg = CcadConfig {
            hidden: 4,
            embed_dim: 3,
            attention_dim: 3,
            coverage_kernel: 3,
        };
        let ccad = Ccad::new(&mut store, &cfg, 3, 2, 6, &mut rng)?;
        let x = store.add("x", rand_tensor(&mut rng, &[3, 2, 3]));
        let cf = store.add("count_feature", rand_tensor(&mut rng, &[1, 2]));
        let err = grad_check_params(
            |g, s| {
                let mem = ccad.memory(g, s, g.param(s, x))?;
                let mut state = ccad.initial_state(g, s, &mem);
                let mut loss = g.scalar(0.0);
                for (tok, target) in [(4, 1), (1, 2), (2, 5)] {
                    let step = ccad_step(g, s, &ccad, state, &mem, g.param(s, cf), tok)?;
                    loss = loss.add(step.logits.cross_entropy(&[target], None)?)?;
                    state = step.state;
                }
                Ok(loss)
            },
            &store,
            param_opts(seed),
        )?;
        out.push(composite("coverage_decoder", err));
    }

    {
        let mut store = ParamStore::<f64>::new();
        let cfg = TransformerConfig {
            model_dim: 16,
            heads: 2,
            ffn_dim: 16,
            layers: 2,
            refine_kernel: 3,
            ..TransformerConfig::default()
        };
        let viewer = TransformerViewer::new(&mut store, &cfg, 3, 7, &mut rng)?;
        let x = store.add("x", rand_tensor(&mut rng, &[3, 2, 3]));
        let depths = [0, 1, 1, 0];
        let relpos = [RelPos::Middle, RelPos::Upper, RelPos::Upper, RelPos::Middle];
        let err = grad_check_params(
            |g, s| {
                let mem = viewer.encode_memory(g, s, g.param(s, x))?;
                let o = viewer.decoder_forward(g, s, &mem, &[4, 0, 2, 3])?;
                loss_rec(o.symbol_logits, &[0, 2, 3, 5], None)?.add(loss_pos(o.depth_logits, o.relpos_logits, &depths, &relpos, None)?)
            },
            &store,
            param_opts(seed),
        )?;
        out.push(composite("transformer_decoder", err));
    }

    {
        let vocab = synth_vocab();
        let mut store = ParamStore::<f64>::new();
        let model = Model::new(&mut store, &ModelConfig::tiny(tasks), &vocab, &mut rng)?;
        let image = Image::new(12, 14, (0..12 * 14).map(|i| ((i * 7) % 11) as f32 / 10.0).collect())?;
        let seq = crate::latex::tokenize("x^{2}+1")?;
        let sample = crate::dataset::ExprSample::new(image, seq, &vocab)?;
        let target = Target::from_sample(&sample, &vocab)?;
        let w = LossWeights::default().effective(tasks);
        let err = grad_check_params(
            |g, s| weighted_total(&model.losses(g, s, &sample.image, &target)?, &w),
            &store,
            param_opts(seed),
        )?;
        out.push(composite(&format!("full_model[{}]", tasks.variant()), err));
    }
    Ok(out)
}

/// [`primitive_checks`] followed by [`composite_checks`].
pub fn gradient_checks(tasks: TaskFlags, seed: u64) -> Result<Vec<CheckResult>> {
    let mut all = primitive_checks(seed)?;
    all.extend(composite_checks(tasks, seed)?);
    Ok(all)
}
