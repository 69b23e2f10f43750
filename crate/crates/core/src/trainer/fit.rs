//! The training loop, checkpoints and model-level evaluation.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{learning_rate, optimizer_step, AdamState};
use super::{total_loss, weighted_total, TrainConfig};
use crate::dataset::{ExprSample, Image};
use crate::error::{Error, Result};
use crate::latex::Vocab;
use crate::metrics::{evaluate, MetricsReport};
use crate::model::transformer::Decoded;
use crate::model::{Model, Target};
use crate::tensor::{Checkpoint, Gradients, Graph, ParamStore, Tensor};

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LOG_FILE: &str = "train.jsonl";

/// Stream tags keeping the random sources of a run apart.
const INIT_STREAM: u64 = 0;
const AUG_STREAM: u64 = 1 << 32;
const ORDER_STREAM: u64 = 2 << 32;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    /// Batch means of the unweighted components.
    pub l_rec: f64,
    pub l_pos: f64,
    pub l_counting: f64,
    pub l_rec2: f64,
    /// `λ1·(l_rec + l_rec2) + λ2·l_pos + λ3·l_counting`.
    pub l_all: f64,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_exprate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_exprate: Option<f64>,
}

pub struct FitOptions<'a> {
    /// Checkpoints and the log go here when set.
    pub out_dir: Option<&'a Path>,
    /// Training state to continue from.
    pub resume: Option<&'a Checkpoint<f32>>,
    /// Stop after this many total steps even if `max_steps` is larger; the
    /// schedule still spans `max_steps`.
    pub stop_at: Option<usize>,
    /// Echo each log line here as well.
    pub echo: Option<&'a mut dyn Write>,
}

impl Default for FitOptions<'_> {
    fn default() -> Self {
        FitOptions {
            out_dir: None,
            resume: None,
            stop_at: None,
            echo: None,
        }
    }
}

pub struct FitOutcome {
    pub model: Model,
    pub store: ParamStore<f32>,
    pub adam: AdamState<f32>,
    /// Steps completed in total, counting any resumed ones.
    pub steps: usize,
    pub records: Vec<StepRecord>,
    pub best_val_exprate: Option<f64>,
    pub last_train_exprate: Option<f64>,
    pub early_stopped: bool,
}

/// A rebuilt model with everything needed to run it.
pub struct LoadedModel {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub model: Model,
    pub store: ParamStore<f32>,
    pub step: usize,
}

fn vocab_meta(vocab: &Vocab) -> String {
    vocab.classes()[..vocab.num_classes()].join(" ")
}

/// Parameters, optimizer moments, configuration and vocabulary after `step`
/// completed steps.
pub fn training_checkpoint(
    cfg: &TrainConfig,
    vocab: &Vocab,
    store: &ParamStore<f32>,
    adam: &AdamState<f32>,
    step: usize,
) -> Checkpoint<f32> {
    let mut ck = Checkpoint::from_store(store, cfg.hash());
    ck.set_meta("step", step.to_string());
    ck.set_meta("adam_t", adam.t.to_string());
    ck.set_meta("config", cfg.to_text().trim_end().replace('\n', "; "));
    ck.set_meta("vocab", vocab_meta(vocab));
    for (id, name, t) in store.iter() {
        ck.push(&format!("adam.m/{name}"), Tensor::new(t.shape(), adam.m[id.0].clone()).expect("shape"));
        ck.push(&format!("adam.v/{name}"), Tensor::new(t.shape(), adam.v[id.0].clone()).expect("shape"));
    }
    ck
}

fn meta<'c>(ck: &'c Checkpoint<f32>, key: &str) -> Result<&'c str> {
    ck.meta(key)
        .ok_or_else(|| Error::CorruptCheckpoint(format!("missing `{key}` metadata")))
}

/// Rebuilds the model described by a checkpoint from [`training_checkpoint`].
pub fn load_checkpoint(ck: &Checkpoint<f32>) -> Result<LoadedModel> {
    let config = TrainConfig::from_text(meta(ck, "config")?)?;
    if config.hash() != ck.config_hash {
        return Err(Error::CorruptCheckpoint("configuration does not match its hash".into()));
    }
    let vocab = Vocab::from_classes(meta(ck, "vocab")?.split_whitespace())?;
    let step = meta(ck, "step")?
        .parse()
        .map_err(|_| Error::CorruptCheckpoint("bad step".into()))?;
    let mut store = ParamStore::new();
    let model = Model::new(&mut store, &config.model, &vocab, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
    ck.load_into(&mut store)?;
    Ok(LoadedModel {
        config,
        vocab,
        model,
        store,
        step,
    })
}

fn restore_adam(ck: &Checkpoint<f32>, store: &ParamStore<f32>) -> Result<AdamState<f32>> {
    let mut st = AdamState::new(store);
    st.t = meta(ck, "adam_t")?
        .parse()
        .map_err(|_| Error::CorruptCheckpoint("bad adam_t".into()))?;
    for (id, name, t) in store.iter() {
        for (buf, kind) in [(&mut st.m, "m"), (&mut st.v, "v")] {
            let e = ck
                .get(&format!("adam.{kind}/{name}"))
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing adam.{kind}/{name}")))?;
            if e.shape() != t.shape() {
                return Err(Error::shape("adam state", e.shape(), t.shape()));
            }
            buf[id.0] = e.data().to_vec();
        }
    }
    Ok(st)
}

/// Nearest-neighbour rescale by a factor drawn uniformly from `[0.7, 1.4]`,
/// never below `min_side` pixels on either axis.
pub fn augment_scale(image: &Image, rng: &mut impl Rng, min_side: usize) -> Image {
    let f: f64 = rng.gen_range(0.7..=1.4);
    let h = ((image.height() as f64 * f).round() as usize).max(min_side);
    let w = ((image.width() as f64 * f).round() as usize).max(min_side);
    image.resize_nearest(h, w)
}

/// Index of the `j`-th sample of `step`'s batch. Each epoch visits the data
/// in a fresh permutation that depends only on the seed and the epoch.
fn batch_indices(seed: u64, step: usize, batch: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(usize, Vec<usize>)> = None;
    for j in 0..batch {
        let k = step * batch + j;
        let epoch = k / n;
        if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ORDER_STREAM + epoch as u64);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().unwrap().1[k % n]);
    }
    out
}

/// Greedy transcriptions of every sample.
pub fn decode_all(model: &Model, store: &ParamStore<f32>, samples: &[ExprSample], max_len: usize) -> Result<Vec<Decoded>> {
    samples
        .iter()
        .map(|s| Ok(model.predict(store, &s.image, max_len)?.decoded))
        .collect()
}

/// Greedy decoding scored against the samples' own tokens.
pub fn evaluate_model(
    model: &Model,
    store: &ParamStore<f32>,
    vocab: &Vocab,
    samples: &[ExprSample],
    max_len: usize,
) -> Result<MetricsReport> {
    let preds: Vec<Vec<usize>> = decode_all(model, store, samples, max_len)?
        .into_iter()
        .map(|d| d.ids)
        .collect();
    let truths = samples
        .iter()
        .map(|s| vocab.encode(&s.tokens))
        .collect::<Result<Vec<_>>>()?;
    evaluate(&preds, &truths)
}

fn write_line(
    file: &mut Option<std::fs::File>,
    echo: &mut Option<&mut dyn Write>,
    path: &Path,
    line: &str,
) -> Result<()> {
    if let Some(f) = file {
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    if let Some(w) = echo {
        let _ = writeln!(w, "{line}");
    }
    Ok(())
}

/// Trains a model from scratch or from `opts.resume`.
///
/// Each step draws `batch_size` samples, builds one graph per sample,
/// sums the gradients in batch order and averages them, then takes one
/// clipped Adam step. All randomness derives from `cfg.seed` and the step
/// number, so a resumed run retraces the uninterrupted one exactly.
pub fn fit(
    cfg: &TrainConfig,
    vocab: &Vocab,
    train: &[ExprSample],
    val: &[ExprSample],
    mut opts: FitOptions<'_>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let weights = cfg.weights.effective(cfg.model.tasks);
    let targets = train
        .iter()
        .map(|s| Target::from_sample(s, vocab))
        .collect::<Result<Vec<_>>>()?;

    let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
    init.set_stream(INIT_STREAM);
    let mut store = ParamStore::<f32>::new();
    let model = Model::new(&mut store, &cfg.model, vocab, &mut init)?;
    let (mut adam, start, mut best) = match opts.resume {
        Some(ck) => {
            if ck.config_hash != cfg.hash() {
                return Err(Error::Config(format!(
                    "checkpoint was written for configuration {}, not {}",
                    ck.config_hash,
                    cfg.hash()
                )));
            }
            ck.load_into(&mut store)?;
            let step: usize = meta(ck, "step")?
                .parse()
                .map_err(|_| Error::CorruptCheckpoint("bad step".into()))?;
            let best = ck.meta("best_val").and_then(|v| v.parse().ok());
            (restore_adam(ck, &store)?, step, best)
        }
        None => (AdamState::new(&store), 0, None),
    };

    let log_path = opts.out_dir.map(|d| d.join(LOG_FILE)).unwrap_or_default();
    let mut log = match opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(
                OpenOptions::new()
                    .create(true)
                    .append(start > 0)
                    .write(true)
                    .truncate(start == 0)
                    .open(&log_path)
                    .map_err(|e| Error::io(&log_path, e))?,
            )
        }
        None => None,
    };
    let save = |store: &ParamStore<f32>, adam: &AdamState<f32>, step: usize, best: Option<f64>, name: &str| -> Result<()> {
        if let Some(dir) = opts.out_dir {
            let mut ck = training_checkpoint(cfg, vocab, store, adam, step);
            if let Some(b) = best {
                ck.set_meta("best_val", b.to_string());
            }
            ck.save(&dir.join(name))?;
        }
        Ok(())
    };

    let end = opts.stop_at.unwrap_or(cfg.max_steps).min(cfg.max_steps);
    let min_side = cfg.model.backbone.total_stride();
    let mut records = Vec::new();
    let mut last_train = None;
    let mut early = false;
    let mut step = start;
    while step < end {
        let lr = learning_rate(&cfg.optim, step, cfg.max_steps);
        let mut grads = Gradients::zeros_like(&store);
        let mut sums = [0.0f64; 4];
        for (j, idx) in batch_indices(cfg.seed, step, cfg.batch_size, train.len()).into_iter().enumerate() {
            let augmented;
            let image = if cfg.scale_aug {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(AUG_STREAM + (step * cfg.batch_size + j) as u64);
                augmented = augment_scale(&train[idx].image, &mut rng, min_side);
                &augmented
            } else {
                &train[idx].image
            };
            let g = Graph::new();
            let losses = model.losses(&g, &store, image, &targets[idx])?;
            let parts = [
                losses.rec.item() as f64,
                losses.pos.item() as f64,
                losses.count.map_or(0.0, |v| v.item() as f64),
                losses.rec2.map_or(0.0, |v| v.item() as f64),
            ];
            if parts.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: format!(
                        "sample {idx}: l_rec={} l_pos={} l_counting={} l_rec2={}",
                        parts[0], parts[1], parts[2], parts[3]
                    ),
                });
            }
            for (s, p) in sums.iter_mut().zip(parts) {
                *s += p;
            }
            g.backward(weighted_total(&losses, &weights)?)?;
            g.accumulate_param_grads(&mut grads);
        }
        let b = cfg.batch_size as f64;
        let [l_rec, l_pos, l_counting, l_rec2] = sums.map(|s| s / b);
        let l_all = total_loss(l_rec + l_rec2, l_pos, l_counting, &weights).map_err(|e| match e {
            Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { step, detail },
            e => e,
        })?;
        grads.scale(1.0 / cfg.batch_size as f32);
        adam.t = step;
        let grad_norm = optimizer_step(&mut store, &mut grads, &mut adam, &cfg.optim, lr)?;
        step += 1;

        let mut rec = StepRecord {
            step,
            lr,
            l_rec,
            l_pos,
            l_counting,
            l_rec2,
            l_all,
            grad_norm,
            train_exprate: None,
            val_exprate: None,
        };
        let eval_now = step == end || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
        if eval_now {
            if let Some(target) = cfg.early_stop_exprate {
                let r = evaluate_model(&model, &store, vocab, train, cfg.max_decode_len)?;
                rec.train_exprate = Some(r.exprate);
                last_train = Some(r.exprate);
                early = r.exprate >= target;
            }
            if !val.is_empty() {
                let r = evaluate_model(&model, &store, vocab, val, cfg.max_decode_len)?;
                rec.val_exprate = Some(r.exprate);
                if best.is_none_or(|b| r.exprate > b) {
                    best = Some(r.exprate);
                    save(&store, &adam, step, best, BEST_CHECKPOINT)?;
                }
            }
        }
        let line = serde_json::to_string(&rec).expect("record serialises");
        write_line(&mut log, &mut opts.echo, &log_path, &line)?;
        records.push(rec);
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            save(&store, &adam, step, best, LAST_CHECKPOINT)?;
        }
        if early {
            break;
        }
    }
    save(&store, &adam, step, best, LAST_CHECKPOINT)?;
    if val.is_empty() {
        // without validation data the final state is the best one
        save(&store, &adam, step, best, BEST_CHECKPOINT)?;
    }
    Ok(FitOutcome {
        model,
        store,
        adam,
        steps: step,
        records,
        best_val_exprate: best,
        last_train_exprate: last_train,
        early_stopped: early,
    })
}
