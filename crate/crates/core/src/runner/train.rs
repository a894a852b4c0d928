use std::collections::HashMap;
use std::io::Write;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{streams, Experiment, Result, RunnerError};
use crate::bagdata::{derive_seed, sample_epoch_pairs, BagDataset, PairingSample};
use crate::bagloss::{
    distillation_loss, instance_max_pool, loss_ft_terms, pseudo_label_loss, threshold_mask, LossTerms, TrainBatch,
    FIXMATCH_THRESHOLD, FIXMATCH_WEIGHT, KD_TEMPERATURE, KD_WEIGHT, THRESHOLD_MASK_PROB,
};
use crate::corpusgen::{ClassSpec, DescriptionRecord, TextCorpus, TextKind};
use crate::encoders::{Checkpoint, EmaShadow, Optimizer};

/// Noise level of the weak view used for pseudo-labels.
pub const WEAK_AUGMENT_SIGMA: f64 = 0.05;

/// Training objective on top of the group-aware loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Standard,
    /// Pair images only with texts about parts visible in them.
    VisibilityMask,
    /// Positives restricted to texts the initial model already finds likely.
    ThresholdMask,
    /// Only the best-matching pair of each class in a batch.
    InstanceMaxPool,
    /// Plus pseudo-label cross-entropy from a weakly augmented view.
    Fixmatch,
    /// Plus distillation towards the initial model.
    Kd,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub loss_ft: f64,
    pub loss_image: f64,
    pub loss_text: f64,
    pub tau: f64,
    /// The objective actually minimized (equals `loss_ft` for the standard
    /// strategy).
    pub loss_total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepLog>,
}

impl TrainResult {
    pub fn write_log<W: Write>(&self, mut w: W) -> Result<()> {
        for line in &self.log {
            serde_json::to_writer(&mut w, line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// A corpus holding only the template text of each class.
pub fn template_corpus(corpus: &TextCorpus, classes: &[String]) -> TextCorpus {
    let mut out = TextCorpus::new(corpus.dataset.clone(), corpus.domain_word.clone());
    for c in classes {
        let spec = ClassSpec::new(c.clone(), corpus.domain_word.clone());
        out.push(c, DescriptionRecord::template(spec.template_text(), TextKind::Visual));
    }
    out
}

impl Experiment {
    /// Fine-tunes the initial pair on `corpus` (already restricted to the
    /// wanted kinds). Single-threaded and deterministic in the run seed.
    pub fn train_on(&self, corpus: TextCorpus) -> Result<TrainResult> {
        let hyper = self.hyper;
        let seed = self.config.seed;
        let mut ds = BagDataset::new(self.images.clone(), corpus, self.split.clone())?;
        if let Some(n) = self.config.images_per_class {
            ds = ds.cap_images_per_class(n);
        }
        if self.config.strategy == Strategy::VisibilityMask {
            let lexicon = self
                .lexicon
                .as_ref()
                .ok_or_else(|| RunnerError::Config("visibility_mask needs a part lexicon".into()))?;
            ds = crate::bagdata::visibility_filter(&ds, lexicon)?;
            if ds.visibility_fallbacks() > 0 {
                log::info!("{} images kept their full text pool", ds.visibility_fallbacks());
            }
        }
        let initial = self.initial_pair()?;
        let mut pair = initial.clone();
        let mut ema = EmaShadow::new(&pair, hyper.momentum)?;
        let mut opt = Optimizer::new(hyper, &pair);
        let mut aug_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::AUGMENT));
        let class_ix: HashMap<&str, usize> =
            self.split.train.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let mut log = Vec::new();
        let mut step = 0u64;
        for epoch in 0..hyper.epochs {
            let pairs = sample_epoch_pairs(&ds, &self.split.train, derive_seed(seed, streams::EPOCH_BASE + epoch as u64))?;
            for chunk in pairs.chunks(hyper.batch_size) {
                let labels: Vec<usize> = chunk.iter().map(|p| class_ix[p.class_name.as_str()]).collect();
                let (x, t) = self.batch_inputs(chunk)?;
                let tau = pair.tau();
                let (s, ic, tc) = pair.forward(x.view(), t.view())?;
                let batch = TrainBatch::new(labels.clone(), s.clone())?;
                let ft = loss_ft_terms(&batch, tau)?;
                let objective = match self.config.strategy {
                    Strategy::Standard | Strategy::VisibilityMask => ft.total.clone(),
                    Strategy::ThresholdMask => {
                        let (s0, _, _) = initial.forward(x.view(), t.view())?;
                        let masked = threshold_mask(&batch.with_similarity(s0)?, initial.tau(), THRESHOLD_MASK_PROB)?;
                        loss_ft_terms(&masked.with_similarity(s.clone())?, tau)?.total
                    }
                    Strategy::InstanceMaxPool => instance_max_pool(&batch, tau)?,
                    Strategy::Fixmatch => {
                        let noise = Normal::new(0.0, WEAK_AUGMENT_SIGMA).expect("valid sigma");
                        let weak = &x + &Array2::from_shape_simple_fn(x.raw_dim(), || noise.sample(&mut aug_rng));
                        let (s_weak, _, _) = pair.forward(weak.view(), t.view())?;
                        let pseudo = pseudo_label_loss(&s, &s_weak, &labels, tau, FIXMATCH_THRESHOLD)?;
                        combine(&ft.total, &pseudo, FIXMATCH_WEIGHT)
                    }
                    Strategy::Kd => {
                        let (s_teacher, _, _) = initial.forward(x.view(), t.view())?;
                        let kd = distillation_loss(&s, &s_teacher, tau, initial.tau(), KD_TEMPERATURE)?;
                        combine(&ft.total, &kd, KD_WEIGHT)
                    }
                };
                let entry = StepLog {
                    step,
                    epoch,
                    loss_ft: ft.total.value,
                    loss_image: ft.image.value,
                    loss_text: ft.text.value,
                    tau,
                    loss_total: objective.value,
                };
                let diverged = |what: &str| RunnerError::NumericalDivergence { step, epoch, tau, what: what.to_string() };
                if ![entry.loss_ft, entry.loss_total].iter().all(|v| v.is_finite()) {
                    return Err(diverged("loss"));
                }
                let grads = pair.backward(&ic, &tc, &objective.grad_sim, objective.grad_tau);
                if !grads.tensors().iter().all(|(_, _, g)| g.iter().all(|v| v.is_finite())) {
                    return Err(diverged("gradient"));
                }
                opt.step(&mut pair, &grads)?;
                if !pair.tau().is_finite() || pair.tau() <= 0.0 {
                    return Err(diverged("temperature"));
                }
                ema.update(&pair)?;
                log.push(entry);
                step += 1;
            }
        }
        let checkpoint = Checkpoint::new(pair, ema, step, self.model_config(), (*self.featurizer).clone());
        Ok(TrainResult { checkpoint, log })
    }

    /// Fine-tunes on the configured training kinds.
    pub fn train(&self) -> Result<TrainResult> {
        self.train_on(self.corpus.filter_kinds(&self.config.train_kinds))
    }

    /// Fine-tunes on template texts only.
    pub fn train_template(&self) -> Result<TrainResult> {
        let classes: Vec<String> = self.split.train.iter().chain(&self.split.test).cloned().collect();
        self.train_on(template_corpus(&self.corpus, &classes))
    }

    fn batch_inputs(&self, chunk: &[PairingSample]) -> Result<(Array2<f64>, Array2<f64>)> {
        let refs: Vec<_> = chunk.iter().map(|p| p.image.clone()).collect();
        let x = self.images_features.matrix(&refs)?;
        let texts: Vec<&str> = chunk.iter().map(|p| p.text.text.as_str()).collect();
        Ok((x, self.featurizer.featurize(&texts)))
    }
}

fn combine(base: &LossTerms, extra: &LossTerms, weight: f64) -> LossTerms {
    let mut out = base.clone();
    out.add_scaled(extra, weight);
    out
}
