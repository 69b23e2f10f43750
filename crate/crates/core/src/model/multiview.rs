//! The shared backbone with its two viewers, wired according to the task
//! flags.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{image_tensor, Backbone, BackboneConfig};
use super::cnn::{Ccad, CcadConfig, CountHead, Mscm, MscmConfig};
use super::transformer::{greedy_decode, loss_pos, loss_rec, Decoded, Special, TransformerConfig, TransformerViewer};
use crate::counting::CountVector;
use crate::dataset::{ExprSample, Image};
use crate::error::{Error, Result};
use crate::latex::Vocab;
use crate::posforest::RelPos;
use crate::tensor::{Float, Graph, ParamStore, Var};

/// Which auxiliary tasks are trained.
///
/// `task2` needs `multi_view`, and `multi_view` needs `task1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFlags {
    /// Symbol counting.
    pub task1: bool,
    /// Counting through the two-scale CNN viewer instead of a plain head.
    pub multi_view: bool,
    /// Text prediction from the CNN viewer's recurrent decoder.
    pub task2: bool,
}

impl TaskFlags {
    pub const BASELINE: TaskFlags = TaskFlags {
        task1: false,
        multi_view: false,
        task2: false,
    };
    pub const TASK1: TaskFlags = TaskFlags {
        task1: true,
        multi_view: false,
        task2: false,
    };
    pub const MULTI_VIEW: TaskFlags = TaskFlags {
        task1: true,
        multi_view: true,
        task2: false,
    };
    pub const MULTI_VIEW_TASK2: TaskFlags = TaskFlags {
        task1: true,
        multi_view: true,
        task2: true,
    };

    pub fn validate(&self) -> Result<()> {
        if self.task2 && !self.multi_view {
            return Err(Error::Config("task2 requires multi_view".into()));
        }
        if self.multi_view && !self.task1 {
            return Err(Error::Config("multi_view requires task1".into()));
        }
        Ok(())
    }

    /// Name of the variant, as accepted by [`TaskFlags::from_variant`].
    pub fn variant(&self) -> &'static str {
        match (self.task1, self.multi_view, self.task2) {
            (false, _, _) => "baseline",
            (true, false, _) => "task1",
            (true, true, false) => "multiview",
            (true, true, true) => "multiview_task2",
        }
    }

    pub fn from_variant(name: &str) -> Result<Self> {
        match name {
            "baseline" => Ok(Self::BASELINE),
            "task1" => Ok(Self::TASK1),
            "multiview" => Ok(Self::MULTI_VIEW),
            "multiview_task2" => Ok(Self::MULTI_VIEW_TASK2),
            _ => Err(Error::Config(format!(
                "unknown variant `{name}` (expected baseline, task1, multiview or multiview_task2)"
            ))),
        }
    }
}

impl Default for TaskFlags {
    fn default() -> Self {
        Self::MULTI_VIEW
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub transformer: TransformerConfig,
    pub mscm: MscmConfig,
    pub ccad: CcadConfig,
    pub tasks: TaskFlags,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.transformer.validate()?;
        self.tasks.validate()
    }

    /// A very small configuration for gradient checks and fast tests.
    pub fn tiny(tasks: TaskFlags) -> Self {
        ModelConfig {
            backbone: BackboneConfig {
                growth_rate: 2,
                block_layers: vec![1, 1],
                initial_channels: 3,
                reduction: 0.5,
                stem_pool: false,
                pooled_transitions: 0,
            },
            transformer: TransformerConfig {
                model_dim: 8,
                heads: 2,
                ffn_dim: 8,
                layers: 1,
                refine_kernel: 3,
                ..TransformerConfig::default()
            },
            mscm: MscmConfig {
                hidden: 4,
                squeeze: 2,
                feature_dim: 3,
                ..MscmConfig::default()
            },
            ccad: CcadConfig {
                hidden: 4,
                embed_dim: 3,
                attention_dim: 3,
                coverage_kernel: 3,
            },
            tasks,
        }
    }
}

#[derive(Debug, Clone)]
enum Counter {
    Off,
    Head(CountHead),
    Mscm(Mscm),
}

/// Supervision for one sample in id form.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    /// Token ids, without `sos` or `eos`.
    pub ids: Vec<usize>,
    pub depths: Vec<usize>,
    pub relpos: Vec<RelPos>,
    pub counts: Vec<f64>,
}

impl Target {
    pub fn from_sample(sample: &ExprSample, vocab: &Vocab) -> Result<Self> {
        Ok(Target {
            ids: vocab.encode(&sample.tokens)?,
            depths: sample.labels.depths.clone(),
            relpos: sample.labels.relpos.clone(),
            counts: sample.counts.counts.clone(),
        })
    }
}

/// Unweighted loss components of one sample.
pub struct SampleLosses<'g, F: Float> {
    pub rec: Var<'g, F>,
    pub pos: Var<'g, F>,
    /// Present when counting is on.
    pub count: Option<Var<'g, F>>,
    /// Present when the CNN viewer's text decoder is on.
    pub rec2: Option<Var<'g, F>>,
}

/// Output of [`Model::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub decoded: Decoded,
    /// Predicted counts when counting is on.
    pub counts: Option<CountVector>,
}

/// Parameter handles of the full model. Parameters live in a separate
/// [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub special: Special,
    pub vocab_size: usize,
    pub classes: usize,
    backbone: Backbone,
    viewer: TransformerViewer,
    counter: Counter,
    ccad: Option<Ccad>,
}

impl Model {
    pub fn new<F: Float>(store: &mut ParamStore<F>, cfg: &ModelConfig, vocab: &Vocab, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (vocab_size, classes) = (vocab.len(), vocab.num_classes());
        let backbone = Backbone::new(store, &cfg.backbone, rng)?;
        let channels = cfg.backbone.out_channels();
        let viewer = TransformerViewer::new(store, &cfg.transformer, channels, vocab_size, rng)?;
        let counter = match (cfg.tasks.task1, cfg.tasks.multi_view) {
            (false, _) => Counter::Off,
            (true, false) => Counter::Head(CountHead::new(store, channels, classes, rng)),
            (true, true) => Counter::Mscm(Mscm::new(store, &cfg.mscm, channels, classes, rng)?),
        };
        let ccad = if cfg.tasks.task2 {
            Some(Ccad::new(store, &cfg.ccad, channels, cfg.mscm.feature_dim, vocab_size, rng)?)
        } else {
            None
        };
        Ok(Model {
            cfg: cfg.clone(),
            special: Special::of(vocab),
            vocab_size,
            classes,
            backbone,
            viewer,
            counter,
            ccad,
        })
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn viewer(&self) -> &TransformerViewer {
        &self.viewer
    }

    pub fn mscm(&self) -> Option<&Mscm> {
        match &self.counter {
            Counter::Mscm(m) => Some(m),
            _ => None,
        }
    }

    pub fn ccad(&self) -> Option<&Ccad> {
        self.ccad.as_ref()
    }

    /// Backbone features, `(C', H', W')`.
    pub fn features<'g, F: Float>(&self, g: &'g Graph<F>, store: &ParamStore<F>, image: &Image) -> Result<Var<'g, F>> {
        self.backbone.forward(g, store, g.constant(image_tensor(image)))
    }

    /// Teacher-forced loss components for one image.
    pub fn losses<'g, F: Float>(
        &self,
        g: &'g Graph<F>,
        store: &ParamStore<F>,
        image: &Image,
        target: &Target,
    ) -> Result<SampleLosses<'g, F>> {
        let t = target.ids.len();
        if target.depths.len() != t || target.relpos.len() != t {
            return Err(Error::LengthMismatch(t, target.depths.len().min(target.relpos.len())));
        }
        let features = self.features(g, store, image)?;
        let mut input = Vec::with_capacity(t + 1);
        input.push(self.special.sos);
        input.extend_from_slice(&target.ids);
        let mut output = target.ids.clone();
        output.push(self.special.eos);
        // the eos step is supervised as a root-level token
        let mut depths = target.depths.clone();
        depths.push(0);
        let mut relpos = target.relpos.clone();
        relpos.push(RelPos::Middle);

        let memory = self.viewer.encode_memory(g, store, features)?;
        let out = self.viewer.decoder_forward(g, store, &memory, &input)?;
        let rec = loss_rec(out.symbol_logits, &output, None)?;
        let pos = loss_pos(out.depth_logits, out.relpos_logits, &depths, &relpos, None)?;

        let count_target = |len: usize| {
            if target.counts.len() != len {
                return Err(Error::LengthMismatch(target.counts.len(), len));
            }
            Ok(target.counts.iter().map(|&c| F::cast(c)).collect::<Vec<F>>())
        };
        let (count, rec2) = match &self.counter {
            Counter::Off => (None, None),
            Counter::Head(head) => {
                let pred = head.forward(g, store, features)?;
                (Some(pred.smooth_l1(&count_target(self.classes)?)?), None)
            }
            Counter::Mscm(mscm) => {
                let m = mscm.forward(g, store, features)?;
                let count = m.count_pred.smooth_l1(&count_target(self.classes)?)?;
                let rec2 = match &self.ccad {
                    Some(ccad) => {
                        let mem = ccad.memory(g, store, features)?;
                        let (logits, _) = ccad.forward(g, store, &mem, m.count_feature, &input)?;
                        Some(logits.cross_entropy(&output, None)?)
                    }
                    None => None,
                };
                (Some(count), rec2)
            }
        };
        Ok(SampleLosses { rec, pos, count, rec2 })
    }

    /// Greedy transcription and, when counting is on, predicted counts.
    pub fn predict<F: Float>(&self, store: &ParamStore<F>, image: &Image, max_len: usize) -> Result<Prediction> {
        let g = Graph::inference();
        let features = self.features(&g, store, image)?;
        let memory = self.viewer.encode_memory(&g, store, features)?;
        let decoded = greedy_decode(&g, store, &self.viewer, &memory, self.special, max_len)?;
        let counts = match &self.counter {
            Counter::Off => None,
            Counter::Head(head) => Some(head.forward(&g, store, features)?),
            Counter::Mscm(m) => Some(m.forward(&g, store, features)?.count_pred),
        }
        .map(|v| CountVector {
            counts: v.value().to_f64(),
        });
        Ok(Prediction { decoded, counts })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_vocab;
    use crate::latex::tokenize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flag_invariants() {
        assert!(TaskFlags {
            task1: false,
            multi_view: true,
            task2: false
        }
        .validate()
        .is_err());
        assert!(TaskFlags {
            task1: true,
            multi_view: false,
            task2: true
        }
        .validate()
        .is_err());
        for name in ["baseline", "task1", "multiview", "multiview_task2"] {
            let f = TaskFlags::from_variant(name).unwrap();
            assert!(f.validate().is_ok());
            assert_eq!(f.variant(), name);
        }
    }

    #[test]
    fn components_follow_flags() {
        let vocab = synth_vocab();
        let sample = ExprSample::synthetic(tokenize("x^{2}+1").unwrap(), &vocab).unwrap();
        let target = Target::from_sample(&sample, &vocab).unwrap();
        for flags in [TaskFlags::BASELINE, TaskFlags::TASK1, TaskFlags::MULTI_VIEW, TaskFlags::MULTI_VIEW_TASK2] {
            let mut store = ParamStore::<f64>::new();
            let model = Model::new(&mut store, &ModelConfig::tiny(flags), &vocab, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let g = Graph::new();
            let l = model.losses(&g, &store, &sample.image, &target).unwrap();
            assert!(l.rec.item() > 0.0 && l.pos.item() > 0.0);
            assert_eq!(l.count.is_some(), flags.task1);
            assert_eq!(l.rec2.is_some(), flags.task2);
            let p = model.predict(&store, &sample.image, 3).unwrap();
            assert!(p.decoded.ids.len() <= 3);
            assert_eq!(p.counts.map(|c| c.len()), flags.task1.then_some(vocab.num_classes()));
        }
    }
}
