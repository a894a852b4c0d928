use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Experiment, Result};
use crate::corpusgen::{ClassSpec, TextKind};
use crate::encoders::{Checkpoint, ToyModel, ToyPair};
use crate::evaluator::{
    baseline_texts, evaluate_zero_shot, similarity_ranking_report, BaselineMode, ClassTexts, RankingReport,
    ZeroShotOptions, ZeroShotReport,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub fine_tuned: bool,
    pub texts: BaselineMode,
    pub accuracy: f64,
    pub per_class: BTreeMap<String, f64>,
}

/// Published full-scale accuracies, attached for context only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceNumbers {
    pub dataset: String,
    pub clip: f64,
    pub clip_a: f64,
    pub clip_ft_a: f64,
}

/// Full-scale CUB accuracies (%): CLIP, CLIP+A, CLIP^FT+A.
pub const CUB_REFERENCE: (&str, f64, f64, f64) = ("CUB", 50.54, 50.71, 53.34);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub kinds: Vec<TextKind>,
    pub frozen_accuracy: f64,
    pub fine_tuned_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub dataset: String,
    pub test_classes: usize,
    pub test_images: usize,
    pub rows: Vec<ComparisonRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ablation: Vec<AblationRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceNumbers>,
}

impl ComparisonReport {
    pub fn row(&self, method: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<12} {:>9}\n", "method", "accuracy");
        for r in &self.rows {
            s.push_str(&format!("{:<12} {:>8.2}%\n", r.method, 100.0 * r.accuracy));
        }
        for a in &self.ablation {
            let kinds: Vec<&str> = a.kinds.iter().map(|k| k.as_str()).collect();
            s.push_str(&format!(
                "{:<24} frozen {:>6.2}%  fine-tuned {:>6.2}%\n",
                kinds.join("+"),
                100.0 * a.frozen_accuracy,
                100.0 * a.fine_tuned_accuracy
            ));
        }
        s
    }
}

impl Experiment {
    fn test_specs(&self) -> Vec<ClassSpec> {
        self.split.test.iter().map(|c| ClassSpec::new(c.clone(), self.corpus.domain_word.clone())).collect()
    }

    pub fn eval_options(&self) -> ZeroShotOptions {
        ZeroShotOptions { aggregation: self.config.aggregation, temperature: self.config.eval_temperature }
    }

    pub fn model(&self, pair: ToyPair) -> Result<ToyModel> {
        Ok(ToyModel::new(pair, self.images_features.clone(), self.featurizer.clone())?)
    }

    pub fn test_texts(&self, mode: BaselineMode, kinds: &[TextKind]) -> Result<ClassTexts> {
        Ok(baseline_texts(mode, &self.test_specs(), Some(&self.corpus), kinds)?)
    }

    /// Held-out zero-shot accuracy of `pair` with the given class texts.
    pub fn zero_shot(&self, pair: &ToyPair, texts: &ClassTexts) -> Result<ZeroShotReport> {
        let model = self.model(pair.clone())?;
        Ok(evaluate_zero_shot(&model, &self.test_images(), texts, &self.eval_options())?)
    }

    /// The four-way comparison: initial or fine-tuned weights, template or
    /// description texts. `template_ft` is the pair fine-tuned on template
    /// texts; without it the main checkpoint fills that row too.
    pub fn compare(&self, ft: &Checkpoint, template_ft: Option<&Checkpoint>) -> Result<ComparisonReport> {
        let frozen = self.initial_pair()?;
        let use_ema = self.config.use_ema;
        let ft_pair = ft.weights(use_ema);
        let template_pair = template_ft.map_or_else(|| ft_pair.clone(), |c| c.weights(use_ema));
        let clip_texts = self.test_texts(BaselineMode::Clip, &self.config.test_kinds)?;
        let desc_texts = self.test_texts(BaselineMode::ClipA, &self.config.test_kinds)?;
        let plan = [
            ("CLIP", false, BaselineMode::Clip, &frozen, &clip_texts),
            ("CLIP+A", false, BaselineMode::ClipA, &frozen, &desc_texts),
            ("CLIP^FT", true, BaselineMode::Clip, &template_pair, &clip_texts),
            ("CLIP^FT+A", true, BaselineMode::ClipA, &ft_pair, &desc_texts),
        ];
        let mut rows = Vec::with_capacity(plan.len());
        for (method, fine_tuned, mode, pair, texts) in plan {
            let r = self.zero_shot(pair, texts)?;
            rows.push(ComparisonRow {
                method: method.to_string(),
                fine_tuned,
                texts: mode,
                accuracy: r.accuracy,
                per_class: r.per_class,
            });
        }
        let is_cub = self.config.dataset.to_ascii_lowercase().starts_with("cub");
        let reference = is_cub.then(|| ReferenceNumbers {
                dataset: CUB_REFERENCE.0.to_string(),
                clip: CUB_REFERENCE.1,
                clip_a: CUB_REFERENCE.2,
                clip_ft_a: CUB_REFERENCE.3,
            });
        Ok(ComparisonReport {
            dataset: self.config.dataset.clone(),
            test_classes: self.split.test.len(),
            test_images: self.test_images().len(),
            rows,
            ablation: Vec::new(),
            reference,
        })
    }

    /// For each configured kind set: train and test with only those kinds.
    pub fn ablation(&self) -> Result<Vec<AblationRow>> {
        let frozen = self.initial_pair()?;
        let mut rows = Vec::new();
        for kinds in &self.config.ablation_kinds {
            let texts = self.test_texts(BaselineMode::ClipA, kinds)?;
            let trained = self.train_on(self.corpus.filter_kinds(kinds))?;
            let ft = trained.checkpoint.weights(self.config.use_ema);
            rows.push(AblationRow {
                kinds: kinds.clone(),
                frozen_accuracy: self.zero_shot(&frozen, &texts)?.accuracy,
                fine_tuned_accuracy: self.zero_shot(&ft, &texts)?.accuracy,
            });
        }
        Ok(rows)
    }

    /// Per test class, its images ranked against the class's first test text.
    pub fn rankings(&self, pair: &ToyPair, n: usize) -> Result<Vec<RankingReport>> {
        let model = self.model(pair.clone())?;
        let mut out = Vec::new();
        for class in &self.split.test {
            if let Some(text) = self.corpus.texts(class, &self.config.test_kinds).first() {
                out.push(similarity_ranking_report(&model, &self.images[class], text, n, n)?);
            }
        }
        Ok(out)
    }
}
