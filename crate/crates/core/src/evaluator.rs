//! Zero-shot classification over class text bags, the template/description
//! baselines, binary-task average precision, and similarity rankings.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bagdata::ImageRef;
use crate::corpusgen::{ClassSpec, TextCorpus, TextKind};
use crate::encoders::{DualEncoder, EncoderError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no texts for test class `{0}`")]
    EmptyTestCorpus(String),
    #[error("no test classes")]
    NoClasses,
    #[error("task `{0}` needs at least one positive and one negative item")]
    DegenerateLabels(String),
    #[error("{0} scores but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("evaluation temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("malformed task file: {0}")]
    Format(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// How per-text probabilities of one class are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Arithmetic,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ZeroShotOptions {
    pub aggregation: Aggregation,
    /// Divide similarities by this before the softmax. Off by default.
    pub temperature: Option<f64>,
}

impl ZeroShotOptions {
    fn scale(&self) -> Result<f64> {
        match self.temperature {
            None => Ok(1.0),
            Some(t) if t.is_finite() && t > 0.0 => Ok(1.0 / t),
            Some(t) => Err(EvalError::InvalidTemperature(t)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class_name: String,
    pub similarities: Vec<f64>,
    pub aggregated_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotPrediction {
    pub predicted: usize,
    pub class_name: String,
    /// Another class reached exactly the same aggregated probability.
    pub tie: bool,
    pub scores: Vec<ClassScore>,
}

/// Aggregated class probabilities from per-class similarity lists. The
/// softmax runs jointly over every text of every class.
pub fn aggregate_class_probs(sims: &[Vec<f64>], opts: &ZeroShotOptions) -> Result<Vec<f64>> {
    if sims.is_empty() {
        return Err(EvalError::NoClasses);
    }
    if let Some(k) = sims.iter().position(|s| s.is_empty()) {
        return Err(EvalError::EmptyTestCorpus(format!("#{k}")));
    }
    let scale = opts.scale()?;
    let max = sims.iter().flatten().fold(f64::NEG_INFINITY, |m, &s| m.max(s * scale));
    let log_z = max + sims.iter().flatten().map(|&s| (s * scale - max).exp()).sum::<f64>().ln();
    Ok(sims
        .iter()
        .map(|class| {
            let l = class.len() as f64;
            match opts.aggregation {
                Aggregation::Arithmetic => class.iter().map(|&s| (s * scale - log_z).exp()).sum::<f64>() / l,
                Aggregation::Geometric => (class.iter().map(|&s| s * scale - log_z).sum::<f64>() / l).exp(),
            }
        })
        .collect())
}

/// Index of the largest value, lowest index on ties, and whether a tie
/// occurred at the top.
pub fn argmax_lowest(values: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
            tie = false;
        } else if v == values[best] {
            tie = true;
        }
    }
    (best, tie)
}

/// Per-class text lists used as the zero-shot label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTexts {
    pub class_names: Vec<String>,
    pub texts: Vec<Vec<String>>,
}

impl ClassTexts {
    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(EvalError::NoClasses);
        }
        for (name, t) in self.class_names.iter().zip(&self.texts) {
            if t.is_empty() {
                return Err(EvalError::EmptyTestCorpus(name.clone()));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == class)
    }

    fn flat(&self) -> Vec<&str> {
        self.texts.iter().flatten().map(String::as_str).collect()
    }
}

/// Which texts stand for each class at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMode {
    /// One `a photo of a <class> <domain>` text per class.
    #[serde(rename = "clip")]
    Clip,
    /// The class's description corpus.
    #[serde(rename = "clip+a")]
    ClipA,
}

impl BaselineMode {
    pub fn label(self) -> &'static str {
        match self {
            BaselineMode::Clip => "CLIP",
            BaselineMode::ClipA => "CLIP+A",
        }
    }
}

pub fn baseline_texts(
    mode: BaselineMode,
    specs: &[ClassSpec],
    corpus: Option<&TextCorpus>,
    kinds: &[TextKind],
) -> Result<ClassTexts> {
    let class_names: Vec<String> = specs.iter().map(|s| s.class_name.clone()).collect();
    let texts = match mode {
        BaselineMode::Clip => specs.iter().map(|s| vec![s.template_text()]).collect(),
        BaselineMode::ClipA => {
            let corpus = corpus.ok_or_else(|| EvalError::EmptyTestCorpus(class_names.first().cloned().unwrap_or_default()))?;
            specs
                .iter()
                .map(|s| corpus.texts(&s.class_name, kinds).into_iter().map(str::to_string).collect())
                .collect()
        }
    };
    let out = ClassTexts { class_names, texts };
    out.validate()?;
    Ok(out)
}

pub fn classify_zero_shot<E: DualEncoder + ?Sized>(
    pair: &E,
    image: &ImageRef,
    texts: &ClassTexts,
    opts: &ZeroShotOptions,
) -> Result<ZeroShotPrediction> {
    texts.validate()?;
    let img = pair.embed_images(std::slice::from_ref(image))?;
    let txt = pair.embed_texts(&texts.flat())?;
    let row = crate::encoders::similarity_from_embeddings(&img, &txt)?;
    predict_row(row.row(0).as_slice().expect("row-major"), texts, opts)
}

fn predict_row(row: &[f64], texts: &ClassTexts, opts: &ZeroShotOptions) -> Result<ZeroShotPrediction> {
    let mut sims = Vec::with_capacity(texts.texts.len());
    let mut at = 0;
    for t in &texts.texts {
        sims.push(row[at..at + t.len()].to_vec());
        at += t.len();
    }
    let probs = aggregate_class_probs(&sims, opts)?;
    let (predicted, tie) = argmax_lowest(&probs);
    let scores = texts
        .class_names
        .iter()
        .zip(sims)
        .zip(&probs)
        .map(|((name, similarities), &aggregated_prob)| ClassScore {
            class_name: name.clone(),
            similarities,
            aggregated_prob,
        })
        .collect();
    Ok(ZeroShotPrediction { predicted, class_name: texts.class_names[predicted].clone(), tie, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePrediction {
    pub image: String,
    pub true_class: String,
    pub predicted: String,
    pub tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub accuracy: f64,
    /// Top-1 accuracy per true class.
    pub per_class: BTreeMap<String, f64>,
    pub predictions: Vec<ImagePrediction>,
}

impl ZeroShotReport {
    /// `{"accuracy": .., "per_class": {..}}`
    pub fn results_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a> {
            accuracy: f64,
            per_class: &'a BTreeMap<String, f64>,
        }
        let mut s = serde_json::to_string_pretty(&Out { accuracy: self.accuracy, per_class: &self.per_class })?;
        s.push('\n');
        Ok(s)
    }
}

/// Classifies every `(image, true class)` pair; each image and text is
/// embedded once.
pub fn evaluate_zero_shot<E: DualEncoder + ?Sized>(
    pair: &E,
    images: &[(ImageRef, String)],
    texts: &ClassTexts,
    opts: &ZeroShotOptions,
) -> Result<ZeroShotReport> {
    texts.validate()?;
    let refs: Vec<ImageRef> = images.iter().map(|(r, _)| r.clone()).collect();
    let img = pair.embed_images(&refs)?;
    let txt = pair.embed_texts(&texts.flat())?;
    let s = crate::encoders::similarity_from_embeddings(&img, &txt)?;
    let mut predictions = Vec::with_capacity(images.len());
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for ((image, truth), row) in images.iter().zip(s.rows()) {
        let p = predict_row(row.as_slice().expect("row-major"), texts, opts)?;
        let e = tally.entry(truth.clone()).or_default();
        e.1 += 1;
        if &p.class_name == truth {
            e.0 += 1;
        }
        predictions.push(ImagePrediction {
            image: image.id.clone(),
            true_class: truth.clone(),
            predicted: p.class_name,
            tie: p.tie,
        });
    }
    let correct: usize = tally.values().map(|(c, _)| c).sum();
    let accuracy = if images.is_empty() { 0.0 } else { correct as f64 / images.len() as f64 };
    let per_class = tally.into_iter().map(|(k, (c, n))| (k, c as f64 / n as f64)).collect();
    Ok(ZeroShotReport { accuracy, per_class, predictions })
}

/// Mean of precision@k over the ranks k holding a positive. Labels are in
/// rank order, best first.
pub fn average_precision(ranked_labels: &[bool]) -> Result<f64> {
    let positives = ranked_labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == ranked_labels.len() {
        return Err(EvalError::DegenerateLabels(String::new()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &l) in ranked_labels.iter().enumerate() {
        if l {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Sorts by descending score (stable, so equal scores keep input order) and
/// returns the average precision.
pub fn ranked_ap(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    average_precision(&order.iter().map(|&i| labels[i]).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryTask {
    pub task_id: String,
    pub positive_text: String,
    pub negative_text: String,
    pub items: Vec<(ImageRef, bool)>,
}

impl BinaryTask {
    pub fn validate(&self) -> Result<()> {
        if self.positive_text.trim().is_empty() || self.negative_text.trim().is_empty() {
            return Err(EvalError::Format(format!("task `{}` has an empty text", self.task_id)));
        }
        let pos = self.items.iter().filter(|(_, l)| *l).count();
        if pos == 0 || pos == self.items.len() {
            return Err(EvalError::DegenerateLabels(self.task_id.clone()));
        }
        Ok(())
    }
}

/// Two-way softmax probability of the positive text for each item.
pub fn binary_task_scores<E: DualEncoder + ?Sized>(pair: &E, task: &BinaryTask, temperature: Option<f64>) -> Result<Vec<f64>> {
    let scale = ZeroShotOptions { temperature, ..Default::default() }.scale()?;
    let refs: Vec<ImageRef> = task.items.iter().map(|(r, _)| r.clone()).collect();
    let s = crate::encoders::similarity_matrix(pair, &refs, &[&task.positive_text, &task.negative_text])?;
    Ok(s.rows().into_iter().map(|r| 1.0 / (1.0 + (-(r[0] - r[1]) * scale).exp())).collect())
}

pub fn binary_task_ap<E: DualEncoder + ?Sized>(pair: &E, task: &BinaryTask, temperature: Option<f64>) -> Result<f64> {
    task.validate()?;
    let scores = binary_task_scores(pair, task, temperature)?;
    let labels: Vec<bool> = task.items.iter().map(|(_, l)| *l).collect();
    ranked_ap(&scores, &labels).map_err(|e| match e {
        EvalError::DegenerateLabels(_) => EvalError::DegenerateLabels(task.task_id.clone()),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtReport {
    pub per_task: Vec<(String, f64)>,
    pub mean_ap: f64,
}

impl NewtReport {
    /// `task,ap` CSV.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["task", "ap"])?;
        for (task, ap) in &self.per_task {
            w.write_record([task.as_str(), &ap.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn newt_map<E: DualEncoder + ?Sized>(pair: &E, tasks: &[BinaryTask], temperature: Option<f64>) -> Result<NewtReport> {
    let per_task = tasks
        .iter()
        .map(|t| Ok((t.task_id.clone(), binary_task_ap(pair, t, temperature)?)))
        .collect::<Result<Vec<_>>>()?;
    let mean_ap = if per_task.is_empty() { 0.0 } else { per_task.iter().map(|(_, ap)| ap).sum::<f64>() / per_task.len() as f64 };
    Ok(NewtReport { per_task, mean_ap })
}

/// One line of the task file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewtTaskRow {
    pub task: String,
    pub negative_text: String,
    pub positive_text: String,
}

pub const NEWT_HEADER: [&str; 3] = ["task", "negative_text", "positive_text"];

pub fn read_newt_tasks<R: Read>(reader: R) -> Result<Vec<NewtTaskRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != NEWT_HEADER {
        return Err(EvalError::Format(format!("expected header {}, got {}", NEWT_HEADER.join(","), header.join(","))));
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<NewtTaskRow>, _>>()?)
}

pub fn write_newt_tasks<W: Write>(writer: W, rows: &[NewtTaskRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(NEWT_HEADER)?;
    for row in rows {
        w.write_record([&row.task, &row.negative_text, &row.positive_text])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_newt_tasks(path: &Path) -> Result<Vec<NewtTaskRow>> {
    read_newt_tasks(std::fs::File::open(path)?)
}

pub fn save_newt_tasks(path: &Path, rows: &[NewtTaskRow]) -> Result<()> {
    write_newt_tasks(std::fs::File::create(path)?, rows)
}

/// Labelled images per task, stored as JSON `{task: [{image, label}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewtItem {
    pub image: String,
    pub label: u8,
}

pub type NewtItems = BTreeMap<String, Vec<NewtItem>>;

pub fn assemble_tasks(rows: &[NewtTaskRow], items: &NewtItems) -> Result<Vec<BinaryTask>> {
    rows.iter()
        .map(|row| {
            let list = items
                .get(&row.task)
                .ok_or_else(|| EvalError::Format(format!("no items for task `{}`", row.task)))?;
            let items = list
                .iter()
                .map(|it| match it.label {
                    0 | 1 => Ok((ImageRef::new(it.image.clone()), it.label == 1)),
                    l => Err(EvalError::Format(format!("label {l} for `{}` is not 0 or 1", it.image))),
                })
                .collect::<Result<Vec<_>>>()?;
            let task = BinaryTask {
                task_id: row.task.clone(),
                positive_text: row.positive_text.clone(),
                negative_text: row.negative_text.clone(),
                items,
            };
            task.validate()?;
            Ok(task)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedImage {
    pub image: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub text: String,
    pub ranked: Vec<RankedImage>,
}

/// Images sorted by similarity to `text`, keeping the top `top_n` and bottom
/// `bottom_n`. If those overlap the full ordering is returned. Equal scores
/// keep input order.
pub fn similarity_ranking_report<E: DualEncoder + ?Sized>(
    pair: &E,
    images: &[ImageRef],
    text: &str,
    top_n: usize,
    bottom_n: usize,
) -> Result<RankingReport> {
    let s = crate::encoders::similarity_matrix(pair, images, &[text])?;
    let mut ranked: Vec<RankedImage> = images
        .iter()
        .zip(s.column(0))
        .map(|(r, &score)| RankedImage { image: r.id.clone(), score })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    if top_n + bottom_n < ranked.len() {
        let tail = ranked.split_off(ranked.len() - bottom_n);
        ranked.truncate(top_n);
        ranked.extend(tail);
    }
    Ok(RankingReport { text: text.to_string(), ranked })
}

pub fn write_rankings_jsonl<W: Write>(mut w: W, reports: &[RankingReport]) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Everything one evaluation pass produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub zero_shot: Option<ZeroShotReport>,
    pub newt: Option<NewtReport>,
    pub rankings: Vec<RankingReport>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn arith() -> ZeroShotOptions {
        ZeroShotOptions::default()
    }

    fn geo() -> ZeroShotOptions {
        ZeroShotOptions { aggregation: Aggregation::Geometric, temperature: None }
    }

    #[test]
    fn single_text_reduces_to_argmax() {
        let p = aggregate_class_probs(&[vec![2.0], vec![1.0]], &arith()).unwrap();
        assert_eq!(argmax_lowest(&p), (0, false));
    }

    #[test]
    fn bag_mean_beats_flat_bag() {
        let sims = [vec![1.0, 3.0], vec![2.0, 2.0]];
        let p = aggregate_class_probs(&sims, &arith()).unwrap();
        let z = 1f64.exp() + 3f64.exp() + 2.0 * 2f64.exp();
        assert!((p[0] - (1f64.exp() + 3f64.exp()) / (2.0 * z)).abs() < 1e-12);
        assert!((p[1] - 2f64.exp() / z).abs() < 1e-12);
        assert_eq!(argmax_lowest(&p), (0, false));
        // the geometric mean of e^1 and e^3 is e^2, so the two classes tie
        let g = aggregate_class_probs(&sims, &geo()).unwrap();
        assert!((g[0] - g[1]).abs() < 1e-12);
        // and with a slightly stronger flat bag it strictly prefers B
        let g = aggregate_class_probs(&[vec![1.0, 3.0], vec![2.1, 2.1]], &geo()).unwrap();
        assert_eq!(argmax_lowest(&g).0, 1);
        let a = aggregate_class_probs(&[vec![1.0, 3.0], vec![2.1, 2.1]], &arith()).unwrap();
        assert_eq!(argmax_lowest(&a).0, 0);
    }

    #[test]
    fn duplicate_classes_tie_to_lowest() {
        let p = aggregate_class_probs(&[vec![0.3, 0.9], vec![0.3, 0.9]], &arith()).unwrap();
        assert_eq!(argmax_lowest(&p), (0, true));
    }

    #[test]
    fn probabilities_sum_to_one_before_averaging() {
        let sims = [vec![0.1, 0.5, -0.2], vec![0.7], vec![0.0, 0.3]];
        let p = aggregate_class_probs(&sims, &arith()).unwrap();
        let total: f64 = p.iter().zip(&sims).map(|(p, s)| p * s.len() as f64).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn temperature_option() {
        let sims = [vec![0.2], vec![0.1]];
        let hot = aggregate_class_probs(&sims, &ZeroShotOptions { temperature: Some(0.01), ..arith() }).unwrap();
        assert!(hot[0] > 0.99);
        assert!(aggregate_class_probs(&sims, &ZeroShotOptions { temperature: Some(0.0), ..arith() }).is_err());
    }

    #[test]
    fn empty_class_rejected() {
        assert!(matches!(aggregate_class_probs(&[vec![1.0], vec![]], &arith()), Err(EvalError::EmptyTestCorpus(_))));
        assert!(matches!(aggregate_class_probs(&[], &arith()), Err(EvalError::NoClasses)));
    }

    #[test]
    fn ap_examples() {
        assert!((average_precision(&[true, false, true]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[true, true, false]).unwrap(), 1.0);
        assert!(matches!(average_precision(&[false, false]), Err(EvalError::DegenerateLabels(_))));
        assert!(matches!(average_precision(&[true]), Err(EvalError::DegenerateLabels(_))));
        assert!((ranked_ap(&[0.1, 0.9, 0.5], &[true, true, false]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn baselines() {
        let specs = vec![ClassSpec::new("Common Tern", "bird"), ClassSpec::new("Arctic Tern", "bird")];
        let clip = baseline_texts(BaselineMode::Clip, &specs, None, &TextKind::ALL).unwrap();
        assert_eq!(clip.texts[0], vec!["a photo of a Common Tern bird".to_string()]);
        let mut corpus = TextCorpus::new("toy", "bird");
        for i in 0..20 {
            corpus.push("Common Tern", crate::corpusgen::DescriptionRecord::template(format!("t{i}"), TextKind::Visual));
        }
        corpus.push("Arctic Tern", crate::corpusgen::DescriptionRecord::template("x", TextKind::Habitat));
        let with = baseline_texts(BaselineMode::Clip, &specs, Some(&corpus), &TextKind::ALL).unwrap();
        assert_eq!(with, clip);
        let a = baseline_texts(BaselineMode::ClipA, &specs, Some(&corpus), &TextKind::ALL).unwrap();
        assert_eq!(a.texts[0].len(), 20);
        let vis_only = baseline_texts(BaselineMode::ClipA, &specs, Some(&corpus), &[TextKind::Visual]);
        assert!(matches!(vis_only, Err(EvalError::EmptyTestCorpus(c)) if c == "Arctic Tern"));
    }

    #[test]
    fn newt_csv_round_trip() {
        let rows = vec![
            NewtTaskRow { task: "ml_age_x".into(), negative_text: "an adult bird".into(), positive_text: "a juvenile, \"young\" bird".into() },
            NewtTaskRow { task: "t2".into(), negative_text: "a".into(), positive_text: "b".into() },
        ];
        let mut first = Vec::new();
        write_newt_tasks(&mut first, &rows).unwrap();
        assert!(first.starts_with(b"task,negative_text,positive_text\n"));
        let back = read_newt_tasks(first.as_slice()).unwrap();
        assert_eq!(back, rows);
        let mut second = Vec::new();
        write_newt_tasks(&mut second, &back).unwrap();
        assert_eq!(first, second);
        assert!(read_newt_tasks("a,b,c\n".as_bytes()).is_err());
    }

    #[test]
    fn assemble_requires_items_and_both_labels() {
        let rows = vec![NewtTaskRow { task: "t".into(), negative_text: "n".into(), positive_text: "p".into() }];
        let mut items = NewtItems::new();
        assert!(assemble_tasks(&rows, &items).is_err());
        items.insert("t".into(), vec![NewtItem { image: "a".into(), label: 1 }]);
        assert!(matches!(assemble_tasks(&rows, &items), Err(EvalError::DegenerateLabels(_))));
        items.get_mut("t").unwrap().push(NewtItem { image: "b".into(), label: 0 });
        assert_eq!(assemble_tasks(&rows, &items).unwrap()[0].items.len(), 2);
    }

    /// Embeds image `ix` and text `tx` as fixed unit vectors.
    struct Lookup;

    impl DualEncoder for Lookup {
        fn embed_dim(&self) -> usize {
            2
        }
        fn embed_images(&self, images: &[ImageRef]) -> crate::encoders::Result<Array2<f64>> {
            let mut m = Array2::zeros((images.len(), 2));
            for (i, r) in images.iter().enumerate() {
                let a: f64 = r.id.parse().unwrap();
                m[[i, 0]] = a.cos();
                m[[i, 1]] = a.sin();
            }
            Ok(m)
        }
        fn embed_texts(&self, texts: &[&str]) -> crate::encoders::Result<Array2<f64>> {
            let mut m = Array2::zeros((texts.len(), 2));
            for (i, t) in texts.iter().enumerate() {
                let a: f64 = t.parse().unwrap();
                m[[i, 0]] = a.cos();
                m[[i, 1]] = a.sin();
            }
            Ok(m)
        }
        fn temperature(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn ranking_report_orders_and_truncates() {
        let imgs: Vec<ImageRef> = ["0.5", "0.1", "1.5", "0.1", "0.9"].iter().map(|s| ImageRef::new(*s)).collect();
        let full = similarity_ranking_report(&Lookup, &imgs, "0", 5, 0).unwrap();
        let ids: Vec<_> = full.ranked.iter().map(|r| r.image.as_str()).collect();
        assert_eq!(ids, ["0.1", "0.1", "0.5", "0.9", "1.5"]);
        assert!(full.ranked.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(full.ranked[0].score, full.ranked[1].score);
        let cut = similarity_ranking_report(&Lookup, &imgs, "0", 1, 1).unwrap();
        let ids: Vec<_> = cut.ranked.iter().map(|r| r.image.as_str()).collect();
        assert_eq!(ids, ["0.1", "1.5"]);
        let mut out = Vec::new();
        write_rankings_jsonl(&mut out, &[cut]).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("{\"text\":\"0\",\"ranked\":[{\"image\":\"0.1\""));
    }

    #[test]
    fn zero_shot_through_encoder() {
        let texts = ClassTexts {
            class_names: vec!["a".into(), "b".into()],
            texts: vec![vec!["0".into(), "0.2".into()], vec!["1.5".into()]],
        };
        let p = classify_zero_shot(&Lookup, &ImageRef::new("0.1"), &texts, &arith()).unwrap();
        assert_eq!(p.class_name, "a");
        assert_eq!(p.scores[0].similarities.len(), 2);
        let images = vec![(ImageRef::new("0.1"), "a".to_string()), (ImageRef::new("1.4"), "a".to_string())];
        let r = evaluate_zero_shot(&Lookup, &images, &texts, &arith()).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.per_class["a"], 0.5);
        assert!(r.results_json().unwrap().contains("\"per_class\""));
    }

    #[test]
    fn binary_task_through_encoder() {
        let task = BinaryTask {
            task_id: "t".into(),
            positive_text: "0".into(),
            negative_text: "1.5".into(),
            items: vec![(ImageRef::new("0.1"), true), (ImageRef::new("1.4"), false), (ImageRef::new("0.3"), true)],
        };
        assert_eq!(binary_task_ap(&Lookup, &task, None).unwrap(), 1.0);
        let rep = newt_map(&Lookup, &[task], None).unwrap();
        assert_eq!(rep.to_csv().unwrap(), "task,ap\nt,1\n");
    }
}
