//! The attention decoder: masked self-attention, cross-attention over the
//! encoder features with history-subtracting refinement, and three heads
//! (symbol, nesting depth, relative position) on the last hidden state.

use rand::Rng;

use super::nn::{Linear, Norm};
use crate::error::{Error, Result};
use crate::posforest::{RelPos, D_MAX};
use crate::tensor::{Conv2dSpec, Float, Graph, ParamId, ParamStore, Tensor, Var};

/// Added to masked attention logits.
const MASKED: f64 = -1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    pub d_max: usize,
    /// Refine cross-attention with the attention history.
    pub refine: bool,
    /// Kernel of the history transform.
    pub refine_kernel: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            model_dim: 64,
            heads: 4,
            ffn_dim: 128,
            layers: 3,
            d_max: D_MAX,
            refine: true,
            refine_kernel: 5,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("transformer: {m}")));
        if self.heads == 0 || self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return bad("model_dim must be a positive multiple of heads");
        }
        if self.model_dim % 4 != 0 {
            return bad("model_dim must be divisible by 4 for the 2-D position encoding");
        }
        if self.layers == 0 || self.ffn_dim == 0 {
            return bad("layers and ffn_dim must be positive");
        }
        if self.refine && self.refine_kernel % 2 == 0 {
            return bad("refine_kernel must be odd");
        }
        Ok(())
    }
}

/// Sinusoidal encoding of positions `0..length`: row `p` holds
/// `sin(p / 10000^(2i/dim))` at `2i` and the matching cosine at `2i + 1`.
pub fn positional_encoding(length: usize, dim: usize) -> Result<Tensor<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::BadDim(dim, "1-D position encoding needs a positive even dimension"));
    }
    if length == 0 {
        return Err(Error::BadDim(length, "position encoding needs at least one position"));
    }
    let mut t = Tensor::zeros(&[length, dim]);
    for p in 0..length {
        for i in 0..dim / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            t.data_mut()[p * dim + 2 * i] = angle.sin();
            t.data_mut()[p * dim + 2 * i + 1] = angle.cos();
        }
    }
    Ok(t)
}

/// Encoding of an `h × w` grid as `(h·w, dim)`, row `y·w + x`: the first
/// half of each row encodes `y`, the second half `x`.
pub fn positional_encoding_2d(h: usize, w: usize, dim: usize) -> Result<Tensor<f64>> {
    if dim == 0 || dim % 4 != 0 {
        return Err(Error::BadDim(dim, "2-D position encoding needs a dimension divisible by 4"));
    }
    let half = dim / 2;
    let ey = positional_encoding(h, half)?;
    let ex = positional_encoding(w, half)?;
    let mut t = Tensor::zeros(&[h * w, dim]);
    for y in 0..h {
        for x in 0..w {
            let row = &mut t.data_mut()[(y * w + x) * dim..(y * w + x + 1) * dim];
            row[..half].copy_from_slice(&ey.data()[y * half..(y + 1) * half]);
            row[half..].copy_from_slice(&ex.data()[x * half..(x + 1) * half]);
        }
    }
    Ok(t)
}

/// `softmax(raw − relu(conv(history)))` along the last axis.
///
/// `raw` and `history` are `(heads, S)` with `S = h·w`; `kernel` is a
/// `(heads, heads, k, k)` bias-free convolution over the history viewed as
/// `(heads, h, w)`. Zero history gives plain softmax.
pub fn implicit_attention_refine<'g, F: Float>(
    raw: Var<'g, F>,
    history: Var<'g, F>,
    kernel: Var<'g, F>,
    grid: (usize, usize),
) -> Result<Var<'g, F>> {
    let (rs, hs) = (raw.shape(), history.shape());
    if rs.len() != 2 || rs != hs || rs[1] != grid.0 * grid.1 {
        return Err(Error::shape("implicit_attention_refine", &rs, &hs));
    }
    let heads = rs[0];
    let k = kernel.shape().get(2).copied().unwrap_or(1);
    let corr = history
        .reshape(&[heads, grid.0, grid.1])?
        .conv2d(kernel, None, Conv2dSpec::same(k))?
        .relu()
        .reshape(&rs)?;
    raw.sub(corr)?.softmax(1)
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Attention {
    fn new<F: Float>(store: &mut ParamStore<F>, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        Attention {
            q: Linear::new(store, &format!("{name}.q"), d, d, true, rng),
            // a key bias shifts every score of a query equally, so it would
            // never receive gradient
            k: Linear::new(store, &format!("{name}.k"), d, d, false, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, true, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, true, rng),
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    norm1: Norm,
    self_attn: Attention,
    norm2: Norm,
    cross_attn: Attention,
    refine: Option<ParamId>,
    norm3: Norm,
    ff1: Linear,
    ff2: Linear,
}

/// What the decoder emits for a teacher-forced input of length `T`.
pub struct DecoderOutput<'g, F: Float> {
    /// `(T, vocabulary size)`, reserved entries included so that `<eos>`
    /// can be predicted.
    pub symbol_logits: Var<'g, F>,
    /// `(T, d_max + 1)`.
    pub depth_logits: Var<'g, F>,
    /// `(T, 3)`.
    pub relpos_logits: Var<'g, F>,
    /// Per layer, `(heads, T, S)` cross-attention weights.
    pub cross_attention: Vec<Var<'g, F>>,
}

/// Encoder features projected for attention: `(S, model_dim)` plus the
/// grid shape.
#[derive(Clone, Copy)]
pub struct Memory<'g, F: Float> {
    pub keys: Var<'g, F>,
    pub grid: (usize, usize),
}

/// Parameter handles of the decoder.
#[derive(Debug, Clone)]
pub struct TransformerViewer {
    pub cfg: TransformerConfig,
    pub vocab_size: usize,
    embed: ParamId,
    mem_proj: super::nn::Conv,
    mem_norm: Norm,
    layers: Vec<Layer>,
    final_norm: Norm,
    symbol_head: Linear,
    depth_head: Linear,
    relpos_head: Linear,
}

fn split_heads<'g, F: Float>(x: Var<'g, F>, heads: usize) -> Result<Var<'g, F>> {
    let s = x.shape();
    x.reshape(&[s[0], heads, s[1] / heads])?.permute(&[1, 0, 2])
}

fn merge_heads<'g, F: Float>(x: Var<'g, F>) -> Result<Var<'g, F>> {
    let s = x.shape();
    x.permute(&[1, 0, 2])?.reshape(&[s[1], s[0] * s[2]])
}

impl TransformerViewer {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        cfg: &TransformerConfig,
        feature_channels: usize,
        vocab_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        let embed = store.glorot("decoder.embed", &[vocab_size, d], vocab_size, d, rng);
        let mem_proj = super::nn::Conv::new(store, "decoder.mem_proj", feature_channels, d, 1, Conv2dSpec::UNIT, true, rng);
        let mem_norm = Norm::new(store, "decoder.mem_norm", d);
        let mut layers = Vec::new();
        for l in 0..cfg.layers {
            let name = format!("decoder.layer{l}");
            let h = cfg.heads;
            let k = cfg.refine_kernel;
            layers.push(Layer {
                norm1: Norm::new(store, &format!("{name}.norm1"), d),
                self_attn: Attention::new(store, &format!("{name}.self"), d, rng),
                norm2: Norm::new(store, &format!("{name}.norm2"), d),
                cross_attn: Attention::new(store, &format!("{name}.cross"), d, rng),
                refine: cfg
                    .refine
                    .then(|| store.glorot(format!("{name}.refine"), &[h, h, k, k], h * k * k, h * k * k, rng)),
                norm3: Norm::new(store, &format!("{name}.norm3"), d),
                ff1: Linear::new(store, &format!("{name}.ff1"), d, cfg.ffn_dim, true, rng),
                ff2: Linear::new(store, &format!("{name}.ff2"), cfg.ffn_dim, d, true, rng),
            });
        }
        Ok(TransformerViewer {
            cfg: cfg.clone(),
            vocab_size,
            embed,
            mem_proj,
            mem_norm,
            layers,
            final_norm: Norm::new(store, "decoder.final_norm", d),
            symbol_head: Linear::new(store, "decoder.symbol_head", d, vocab_size, true, rng),
            depth_head: Linear::new(store, "decoder.depth_head", d, cfg.d_max + 1, true, rng),
            relpos_head: Linear::new(store, "decoder.relpos_head", d, RelPos::COUNT, true, rng),
        })
    }

    /// `(C', H', W')` features → attention memory.
    pub fn encode_memory<'g, F: Float>(
        &self,
        g: &'g Graph<F>,
        store: &ParamStore<F>,
        features: Var<'g, F>,
    ) -> Result<Memory<'g, F>> {
        let s = features.shape();
        if s.len() != 3 {
            return Err(Error::shape("encode_memory", &s, &[0, 0, 0]));
        }
        let (h, w, d) = (s[1], s[2], self.cfg.model_dim);
        let x = self.mem_proj.forward(g, store, features)?.reshape(&[d, h * w])?.transpose()?;
        let pe = g.constant(positional_encoding_2d(h, w, d)?.cast());
        let keys = self.mem_norm.forward(g, store, x.add(pe)?, 1)?;
        Ok(Memory { keys, grid: (h, w) })
    }

    #[allow(clippy::too_many_arguments)]
    fn attend<'g, F: Float>(
        &self,
        g: &'g Graph<F>,
        store: &ParamStore<F>,
        att: &Attention,
        x: Var<'g, F>,
        kv: Var<'g, F>,
        causal: bool,
        refine: Option<(ParamId, (usize, usize))>,
    ) -> Result<(Var<'g, F>, Var<'g, F>)> {
        let heads = self.cfg.heads;
        let dh = self.cfg.model_dim / heads;
        let t = x.shape()[0];
        let s = kv.shape()[0];
        let q = split_heads(att.q.forward(g, store, x)?, heads)?;
        let k = split_heads(att.k.forward(g, store, kv)?, heads)?.transpose()?;
        let v = split_heads(att.v.forward(g, store, kv)?, heads)?;
        let mut scores = q.matmul(k)?.mul_scalar(1.0 / (dh as f64).sqrt());
        if causal {
            let mask = Tensor::from_fn(&[heads, t, s], |i| {
                let (row, col) = ((i / s) % t, i % s);
                if col > row {
                    F::cast(MASKED)
                } else {
                    F::zero()
                }
            });
            scores = scores.add(g.constant(mask))?;
        }
        let weights = match refine {
            None => scores.softmax(2)?,
            Some((kernel, grid)) => {
                let kernel = g.param(store, kernel);
                let mut rows = Vec::with_capacity(t);
                let mut history: Option<Var<'g, F>> = None;
                for step in 0..t {
                    let raw = scores.slice(1, step, step + 1)?.reshape(&[heads, s])?;
                    let row = match history {
                        None => raw.softmax(1)?,
                        Some(hist) => implicit_attention_refine(raw, hist, kernel, grid)?,
                    };
                    history = Some(match history {
                        None => row,
                        Some(hist) => hist.add(row)?,
                    });
                    rows.push(row.reshape(&[heads, 1, s])?);
                }
                Var::concat(&rows, 1)?
            }
        };
        let out = merge_heads(weights.matmul(v)?)?;
        Ok((att.o.forward(g, store, out)?, weights))
    }

    /// Teacher-forced pass over `input_ids` (starting with `<sos>`).
    pub fn decoder_forward<'g, F: Float>(
        &self,
        g: &'g Graph<F>,
        store: &ParamStore<F>,
        memory: &Memory<'g, F>,
        input_ids: &[usize],
    ) -> Result<DecoderOutput<'g, F>> {
        let d = self.cfg.model_dim;
        let t = input_ids.len();
        if t == 0 {
            return Err(Error::EmptySequence);
        }
        let ms = memory.keys.shape();
        if ms.len() != 2 || ms[1] != d || ms[0] != memory.grid.0 * memory.grid.1 {
            return Err(Error::shape("decoder memory", &ms, &[memory.grid.0 * memory.grid.1, d]));
        }
        let pe = g.constant(positional_encoding(t, d)?.cast());
        let mut x = g.param(store, self.embed).embedding(input_ids)?.add(pe)?;
        let mut cross_attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let h = layer.norm1.forward(g, store, x, 1)?;
            let (a, _) = self.attend(g, store, &layer.self_attn, h, h, true, None)?;
            x = x.add(a)?;
            let h = layer.norm2.forward(g, store, x, 1)?;
            let refine = layer.refine.map(|k| (k, memory.grid));
            let (a, w) = self.attend(g, store, &layer.cross_attn, h, memory.keys, false, refine)?;
            cross_attention.push(w);
            x = x.add(a)?;
            let h = layer.norm3.forward(g, store, x, 1)?;
            let h = layer.ff2.forward(g, store, layer.ff1.forward(g, store, h)?.relu())?;
            x = x.add(h)?;
        }
        let h = self.final_norm.forward(g, store, x, 1)?;
        Ok(DecoderOutput {
            symbol_logits: self.symbol_head.forward(g, store, h)?,
            depth_logits: self.depth_head.forward(g, store, h)?,
            relpos_logits: self.relpos_head.forward(g, store, h)?,
            cross_attention,
        })
    }
}

/// Mean symbol cross-entropy; positions whose target is `pad` are skipped.
pub fn loss_rec<'g, F: Float>(symbol_logits: Var<'g, F>, targets: &[usize], pad: Option<usize>) -> Result<Var<'g, F>> {
    symbol_logits.cross_entropy(targets, pad)
}

/// Depth plus relative-position cross-entropy, each averaged over the
/// positions where `mask` is true (all positions when `None`).
pub fn loss_pos<'g, F: Float>(
    depth_logits: Var<'g, F>,
    relpos_logits: Var<'g, F>,
    depths: &[usize],
    relpos: &[RelPos],
    mask: Option<&[bool]>,
) -> Result<Var<'g, F>> {
    if depths.len() != relpos.len() {
        return Err(Error::LengthMismatch(depths.len(), relpos.len()));
    }
    let skip = usize::MAX;
    let keep = |i: usize| mask.is_none_or(|m| m.get(i).copied().unwrap_or(false));
    let dt: Vec<usize> = depths.iter().enumerate().map(|(i, &d)| if keep(i) { d } else { skip }).collect();
    let rt: Vec<usize> = relpos.iter().enumerate().map(|(i, r)| if keep(i) { r.index() } else { skip }).collect();
    depth_logits.cross_entropy(&dt, Some(skip))?.add(relpos_logits.cross_entropy(&rt, Some(skip))?)
}

/// Result of [`greedy_decode`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    /// Symbol ids without `<sos>`/`<eos>`.
    pub ids: Vec<usize>,
    /// `max_len` was reached before `<eos>`.
    pub truncated: bool,
}

/// Arg-max decoding from `<sos>` until `<eos>` or `max_len` symbols.
///
/// `<sos>` and `<pad>` are never chosen; ties go to the lowest id. The
/// output is not guaranteed to be well-formed LaTeX.
pub fn greedy_decode<'g, F: Float>(
    g: &'g Graph<F>,
    store: &ParamStore<F>,
    viewer: &TransformerViewer,
    memory: &Memory<'g, F>,
    special: Special,
    max_len: usize,
) -> Result<Decoded> {
    let mut input = vec![special.sos];
    let mut ids = Vec::new();
    while ids.len() < max_len {
        let out = viewer.decoder_forward(g, store, memory, &input)?;
        let v = viewer.vocab_size;
        let last = out.symbol_logits.with_value(|l| l.data()[(input.len() - 1) * v..].to_vec());
        let mut best = None;
        for (id, &score) in last.iter().enumerate() {
            if id == special.sos || id == special.pad {
                continue;
            }
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((id, score));
            }
        }
        let (next, _) = best.expect("vocabulary has a selectable entry");
        if next == special.eos {
            return Ok(Decoded { ids, truncated: false });
        }
        ids.push(next);
        input.push(next);
    }
    Ok(Decoded { ids, truncated: true })
}

/// Ids of the reserved vocabulary entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Special {
    pub sos: usize,
    pub eos: usize,
    pub pad: usize,
}

impl Special {
    pub fn of(vocab: &crate::latex::Vocab) -> Self {
        Special {
            sos: vocab.sos(),
            eos: vocab.eos(),
            pad: vocab.pad(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_at_zero_alternates() {
        let pe = positional_encoding(3, 8).unwrap();
        assert_eq!(&pe.data()[..8], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(matches!(positional_encoding(3, 7), Err(Error::BadDim(7, _))));
        assert!(matches!(positional_encoding_2d(2, 2, 6), Err(Error::BadDim(6, _))));
    }

    #[test]
    fn zero_history_is_plain_softmax() {
        let g = Graph::<f64>::new();
        let raw = g.constant(Tensor::from_fn(&[2, 6], |i| (i as f64 * 0.7).sin()));
        let hist = g.constant(Tensor::zeros(&[2, 6]));
        let k = g.constant(Tensor::from_fn(&[2, 2, 3, 3], |i| (i as f64).cos()));
        let a = implicit_attention_refine(raw, hist, k, (2, 3)).unwrap();
        let b = raw.softmax(1).unwrap();
        assert_eq!(a.value(), b.value());
    }
}
