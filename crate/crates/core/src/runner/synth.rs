use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Experiment, ExperimentConfig, FeatureFile, Result, RunnerError, SplitMode};
use crate::bagdata::{ImageRef, Manifest, SplitSpec};
use crate::corpusgen::{DescriptionRecord, Source, TextCorpus, TextKind};
use crate::encoders::{ImageFeatures, OptimizerKind, TextFeaturizer};
use crate::evaluator::{save_newt_tasks, NewtItem, NewtItems, NewtTaskRow};

pub const SYNTH_DOMAIN: &str = "object";
const SHARED_VISUAL_PER_CLASS: usize = 3;
const OWN_VISUAL_PER_CLASS: usize = 2;
const HABITAT_PER_CLASS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    /// Total attribute count. Split into a shared visual pool (3/8), a
    /// train-only pool (3/16), a test-only pool (3/16) and a habitat pool
    /// (the rest).
    pub attributes: usize,
    pub train_classes: usize,
    pub test_classes: usize,
    pub images_per_class: usize,
    pub texts_per_class: usize,
    /// How many of each class's texts are habitat texts.
    pub habitat_texts_per_class: usize,
    /// Probability that a class attribute shows up in a given image.
    pub keep_prob: f64,
    pub noise: f64,
    pub hash_buckets: usize,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            attributes: 64,
            train_classes: 20,
            test_classes: 20,
            images_per_class: 40,
            texts_per_class: 8,
            habitat_texts_per_class: 2,
            keep_prob: 0.85,
            noise: 0.1,
            hash_buckets: 0,
            seed: 0,
        }
    }
}

impl SyntheticParams {
    fn pools(&self) -> [std::ops::Range<usize>; 4] {
        let a = self.attributes;
        let shared = 3 * a / 8;
        let own = 3 * a / 16;
        [0..shared, shared..shared + own, shared + own..shared + 2 * own, shared + 2 * own..a]
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RunnerError::Config(m));
        if self.attributes < 16 {
            return bad(format!("need at least 16 attributes, got {}", self.attributes));
        }
        if self.train_classes == 0 || self.test_classes == 0 || self.images_per_class == 0 {
            return bad("class and image counts must be positive".into());
        }
        if self.habitat_texts_per_class >= self.texts_per_class {
            return bad("each class needs at least one visual text".into());
        }
        if !(0.0..=1.0).contains(&self.keep_prob) || !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("keep_prob must lie in [0, 1] and noise must be >= 0".into());
        }
        Ok(())
    }
}

pub fn attribute_name(k: usize) -> String {
    format!("attr{k:02}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClass {
    pub name: String,
    pub visual: Vec<usize>,
    pub habitat: Vec<usize>,
    pub train: bool,
}

/// A desk-scale stand-in for a fine-grained dataset: classes are attribute
/// sets, images are noisy indicator vectors, texts name single attributes.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub params: SyntheticParams,
    pub classes: Vec<SyntheticClass>,
    pub images: IndexMap<String, Vec<ImageRef>>,
    /// Attributes actually present in each image.
    pub present: BTreeMap<String, BTreeSet<usize>>,
    pub features: FeatureFile,
    pub corpus: TextCorpus,
    pub split: SplitSpec,
    pub lexicon: BTreeMap<String, Vec<String>>,
}

pub fn build_synthetic_world(params: &SyntheticParams) -> Result<SyntheticWorld> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let [shared, train_own, test_own, habitat] = params.pools();
    let n_classes = params.train_classes + params.test_classes;
    let mut classes = Vec::with_capacity(n_classes);
    let mut seen = BTreeSet::new();
    for c in 0..n_classes {
        let train = c < params.train_classes;
        let own = if train { train_own.clone() } else { test_own.clone() };
        let visual = loop {
            let mut v = pick(&mut rng, shared.clone(), SHARED_VISUAL_PER_CLASS);
            v.extend(pick(&mut rng, own.clone(), OWN_VISUAL_PER_CLASS));
            v.sort_unstable();
            if seen.insert(v.clone()) {
                break v;
            }
        };
        let mut hab = pick(&mut rng, habitat.clone(), HABITAT_PER_CLASS);
        hab.sort_unstable();
        classes.push(SyntheticClass { name: format!("class{c:02}"), visual, habitat: hab, train });
    }

    let noise = Normal::new(0.0, params.noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut images = IndexMap::new();
    let mut present = BTreeMap::new();
    let mut features = ImageFeatures::new(params.attributes);
    for class in &classes {
        let mut refs = Vec::with_capacity(params.images_per_class);
        for i in 0..params.images_per_class {
            let id = format!("{}_{i:03}", class.name);
            let mut kept = BTreeSet::new();
            let mut flags = BTreeMap::new();
            for &a in class.visual.iter().chain(&class.habitat) {
                let on = rng.random_bool(params.keep_prob);
                if on {
                    kept.insert(a);
                }
                flags.insert(attribute_name(a), on);
            }
            let x: Vec<f64> = (0..params.attributes)
                .map(|a| {
                    let base = if kept.contains(&a) { 1.0 } else { 0.0 };
                    if params.noise > 0.0 {
                        base + noise.sample(&mut rng)
                    } else {
                        base
                    }
                })
                .collect();
            features.insert(id.clone(), x)?;
            present.insert(id.clone(), kept);
            refs.push(ImageRef::new(id).with_visibility(flags));
        }
        images.insert(class.name.clone(), refs);
    }

    let mut corpus = TextCorpus::new("synthetic", SYNTH_DOMAIN);
    for class in &classes {
        for text in class_texts(&mut rng, class, params) {
            corpus.push(&class.name, text);
        }
    }

    let vocab: Vec<String> = (0..params.attributes).map(attribute_name).collect();
    let lexicon = vocab.iter().map(|a| (a.clone(), vec![a.clone()])).collect();
    let split = SplitSpec {
        train: classes.iter().filter(|c| c.train).map(|c| c.name.clone()).collect(),
        test: classes.iter().filter(|c| !c.train).map(|c| c.name.clone()).collect(),
    };
    Ok(SyntheticWorld {
        params: *params,
        classes,
        images,
        present,
        features: FeatureFile { images: features, text: TextFeaturizer::new(vocab, params.hash_buckets) },
        corpus,
        split,
        lexicon,
    })
}

fn pick(rng: &mut ChaCha8Rng, pool: std::ops::Range<usize>, n: usize) -> Vec<usize> {
    let len = pool.len();
    index::sample(rng, len, n.min(len)).into_iter().map(|i| pool.start + i).collect()
}

/// Visual texts name one attribute (every visual attribute at least once
/// when there is room) or two; habitat texts name one habitat attribute.
fn class_texts(rng: &mut ChaCha8Rng, class: &SyntheticClass, params: &SyntheticParams) -> Vec<DescriptionRecord> {
    let prefix = format!("a photo of a {} {}", class.name, SYNTH_DOMAIN);
    let record = |text: String, kind| DescriptionRecord {
        raw_line: text.clone(),
        text,
        kind,
        source: Source::Template,
    };
    let n_visual = params.texts_per_class - params.habitat_texts_per_class;
    let mut out = Vec::with_capacity(params.texts_per_class);
    let mut order = class.visual.clone();
    order.shuffle(rng);
    for k in 0..n_visual {
        let text = if k < order.len() {
            format!("{prefix} with {}", attribute_name(order[k]))
        } else {
            let two = pick(rng, 0..class.visual.len(), 2);
            format!(
                "{prefix} with {} and {}",
                attribute_name(class.visual[two[0]]),
                attribute_name(class.visual[two[1]])
            )
        };
        out.push(record(text, TextKind::Visual));
    }
    for k in 0..params.habitat_texts_per_class {
        let a = class.habitat[k % class.habitat.len()];
        out.push(record(format!("found in {} surroundings", attribute_name(a)), TextKind::Habitat));
    }
    out
}

impl SyntheticWorld {
    /// Run settings tuned for the toy pair on this world.
    pub fn default_config(&self, output_dir: &str) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new("synthetic", "manifest.json", "corpus.json", "features.json", output_dir);
        cfg.seed = self.params.seed;
        cfg.split_mode = SplitMode::Explicit;
        cfg.split = Some("split.json".into());
        cfg.train_kinds = vec![TextKind::Visual, TextKind::Habitat];
        cfg.test_kinds = vec![TextKind::Visual, TextKind::Habitat];
        cfg.ablation_kinds = vec![vec![TextKind::Visual], vec![TextKind::Habitat], vec![TextKind::Visual, TextKind::Habitat]];
        cfg.part_lexicon = Some("lexicon.json".into());
        cfg.lr_proj = Some(1e-2);
        cfg.lr_main = Some(5e-3);
        cfg.wd_proj = Some(1e-4);
        cfg.wd_main = Some(1e-4);
        cfg.temperature_init = Some(0.1);
        cfg.epochs = Some(15);
        cfg.batch_size = Some(64);
        cfg.optimizer = Some(OptimizerKind::AdamW);
        cfg.ranking_n = 5;
        cfg
    }

    /// Loads this world straight into an experiment, skipping the files.
    pub fn experiment(&self, config: ExperimentConfig) -> Result<Experiment> {
        Experiment::from_parts(
            config,
            self.images.clone(),
            self.corpus.clone(),
            self.split.clone(),
            self.features.clone(),
            Some(self.lexicon.clone()),
        )
    }

    /// Binary tasks "attr A vs attr B" over test images showing exactly one
    /// of two shared visual attributes.
    pub fn newt_tasks(&self, max_tasks: usize) -> (Vec<NewtTaskRow>, NewtItems) {
        let [shared, ..] = self.params.pools();
        let test_ids: Vec<&String> = self
            .split
            .test
            .iter()
            .flat_map(|c| self.images[c].iter().map(|r| &r.id))
            .collect();
        let mut rows = Vec::new();
        let mut items = NewtItems::new();
        'outer: for a in shared.clone() {
            for b in (a + 1)..shared.end {
                if rows.len() >= max_tasks {
                    break 'outer;
                }
                let list: Vec<NewtItem> = test_ids
                    .iter()
                    .filter_map(|id| {
                        let p = &self.present[*id];
                        (p.contains(&a) != p.contains(&b))
                            .then(|| NewtItem { image: (*id).clone(), label: u8::from(p.contains(&a)) })
                    })
                    .collect();
                let pos = list.iter().filter(|i| i.label == 1).count();
                if pos < 5 || list.len() - pos < 5 {
                    continue;
                }
                let task = format!("{}_vs_{}", attribute_name(a), attribute_name(b));
                rows.push(NewtTaskRow {
                    task: task.clone(),
                    negative_text: format!("a photo of an {SYNTH_DOMAIN} with {}", attribute_name(b)),
                    positive_text: format!("a photo of an {SYNTH_DOMAIN} with {}", attribute_name(a)),
                });
                items.insert(task, list);
            }
        }
        (rows, items)
    }

    /// Writes manifest, corpus, features, split, lexicon, config and NeWT
    /// files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<ExperimentConfig> {
        std::fs::create_dir_all(dir)?;
        Manifest::from_images(&self.images).save(&dir.join("manifest.json"))?;
        self.corpus.save(&dir.join("corpus.json"))?;
        self.features.save(&dir.join("features.json"))?;
        self.split.save(&dir.join("split.json"))?;
        std::fs::write(dir.join("lexicon.json"), serde_json::to_string_pretty(&self.lexicon)? + "\n")?;
        let (rows, items) = self.newt_tasks(20);
        save_newt_tasks(&dir.join("newt_tasks.csv"), &rows)?;
        std::fs::write(dir.join("newt_items.json"), serde_json::to_string(&items)? + "\n")?;
        let cfg = self.default_config("run");
        cfg.save(&dir.join("config.toml"))?;
        Ok(cfg)
    }
}
