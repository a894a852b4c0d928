//! Class-keyed bags of images with attached text corpora, class splits, and
//! the per-epoch image/text pairing sampler.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use indexmap::IndexMap;
use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpusgen::{DescriptionRecord, TextCorpus};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("need at least 2 classes to split, got {0}")]
    TooFewClasses(usize),
    #[error("class `{0}` has no texts to pair with")]
    EmptyCorpusForClass(String),
    #[error("class `{0}` has no images")]
    NoImages(String),
    #[error("class `{0}` is in both the train and test split")]
    OverlappingSplit(String),
    #[error("class `{0}` is not a training class")]
    NotTrainClass(String),
    #[error("image `{0}` has no visibility flags")]
    MissingVisibility(String),
    #[error("part lexicon is empty")]
    EmptyLexicon,
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Opaque image handle. Pixels are the encoder provider's business; only
/// the optional part-visibility flags are interpreted here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<BTreeMap<String, bool>>,
}

impl ImageRef {
    pub fn new(id: impl Into<String>) -> Self {
        ImageRef { id: id.into(), visibility: None }
    }

    pub fn with_visibility(mut self, flags: BTreeMap<String, bool>) -> Self {
        self.visibility = Some(flags);
        self
    }
}

/// Disjoint train and test class lists, each in dataset order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let train: BTreeSet<&String> = self.train.iter().collect();
        if let Some(c) = self.test.iter().find(|c| train.contains(c)) {
            return Err(DataError::OverlappingSplit(c.clone()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: SplitSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingSample {
    pub image: ImageRef,
    pub text: DescriptionRecord,
    pub class_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestClass {
    images: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    visibility: Option<Vec<BTreeMap<String, bool>>>,
}

/// Dataset manifest: `{"classes": {name: {"images": [...], "visibility": [...]}}}`.
/// Class order in the file is the dataset order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    classes: IndexMap<String, ManifestClass>,
}

impl Manifest {
    pub fn from_images(images: &IndexMap<String, Vec<ImageRef>>) -> Self {
        let classes = images
            .iter()
            .map(|(name, imgs)| {
                let vis: Option<Vec<_>> = imgs.iter().map(|i| i.visibility.clone()).collect();
                let entry = ManifestClass {
                    images: imgs.iter().map(|i| i.id.clone()).collect(),
                    visibility: vis,
                };
                (name.clone(), entry)
            })
            .collect();
        Manifest { classes }
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.keys().cloned().collect()
    }

    pub fn images(&self) -> Result<IndexMap<String, Vec<ImageRef>>> {
        self.classes
            .iter()
            .map(|(name, c)| {
                let refs = match &c.visibility {
                    Some(v) if v.len() != c.images.len() => {
                        return Err(DataError::Manifest(format!(
                            "class `{name}`: {} images but {} visibility entries",
                            c.images.len(),
                            v.len()
                        )))
                    }
                    Some(v) => c
                        .images
                        .iter()
                        .zip(v)
                        .map(|(id, flags)| ImageRef::new(id.clone()).with_visibility(flags.clone()))
                        .collect(),
                    None => c.images.iter().map(|id| ImageRef::new(id.clone())).collect(),
                };
                Ok((name.clone(), refs))
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// Images per class, the class text corpus, and the class split.
///
/// A per-image text pool can override the class pool (see
/// [`visibility_filter`]); pools hold indices into the class's corpus list.
#[derive(Debug, Clone)]
pub struct BagDataset {
    images: IndexMap<String, Vec<ImageRef>>,
    corpus: TextCorpus,
    split: SplitSpec,
    pools: HashMap<(String, usize), Vec<usize>>,
    fallbacks: usize,
}

impl BagDataset {
    pub fn new(images: IndexMap<String, Vec<ImageRef>>, corpus: TextCorpus, split: SplitSpec) -> Result<Self> {
        split.validate()?;
        for class in split.train.iter().chain(&split.test) {
            if images.get(class).is_none_or(Vec::is_empty) {
                return Err(DataError::NoImages(class.clone()));
            }
            if corpus.len_of(class) == 0 {
                return Err(DataError::EmptyCorpusForClass(class.clone()));
            }
        }
        Ok(BagDataset { images, corpus, split, pools: HashMap::new(), fallbacks: 0 })
    }

    pub fn images(&self, class: &str) -> &[ImageRef] {
        self.images.get(class).map_or(&[], Vec::as_slice)
    }

    pub fn class_names(&self) -> impl Iterator<Item = &String> {
        self.images.keys()
    }

    pub fn corpus(&self) -> &TextCorpus {
        &self.corpus
    }

    pub fn split(&self) -> &SplitSpec {
        &self.split
    }

    /// Number of images whose filtered pool was empty and fell back to the
    /// full class pool.
    pub fn visibility_fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Indices into `corpus[class]` that image `image_ix` may be paired with.
    pub fn text_pool(&self, class: &str, image_ix: usize) -> Vec<usize> {
        match self.pools.get(&(class.to_string(), image_ix)) {
            Some(p) => p.clone(),
            None => (0..self.corpus.len_of(class)).collect(),
        }
    }

    /// Keeps at most `n` images per class (first `n` in manifest order).
    pub fn cap_images_per_class(&self, n: usize) -> BagDataset {
        let mut out = self.clone();
        for imgs in out.images.values_mut() {
            imgs.truncate(n);
        }
        out.pools.retain(|(_, ix), _| *ix < n);
        out
    }

    pub fn total_images(&self, classes: &[String]) -> usize {
        classes.iter().map(|c| self.images(c).len()).sum()
    }
}

/// First half of the classes (dataset order) for training, the rest for
/// testing. With an odd count the middle class goes to train.
pub fn halves_split(classes_in_dataset_order: &[String]) -> Result<SplitSpec> {
    let k = classes_in_dataset_order.len();
    if k < 2 {
        return Err(DataError::TooFewClasses(k));
    }
    let cut = k.div_ceil(2);
    Ok(SplitSpec {
        train: classes_in_dataset_order[..cut].to_vec(),
        test: classes_in_dataset_order[cut..].to_vec(),
    })
}

/// Case-insensitive exact name match after trimming.
pub fn names_equivalent(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapRemoval {
    pub kept: Vec<String>,
    pub removed: Vec<String>,
}

/// Drops every training class that `matcher` deems equivalent to some test class.
pub fn remove_overlap<F>(train: &[String], test: &[String], matcher: F) -> OverlapRemoval
where
    F: Fn(&str, &str) -> bool,
{
    let (removed, kept): (Vec<String>, Vec<String>) = train
        .iter()
        .cloned()
        .partition(|c| test.iter().any(|t| matcher(c, t)));
    if kept.is_empty() {
        warn!("overlap removal left no training classes");
    }
    OverlapRemoval { kept, removed }
}

/// Mixes a base seed with a stream index (SplitMix64 finalizer), for
/// per-epoch or per-shard seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One pairing per image of `classes`: each image gets a text drawn
/// uniformly from its pool, and the result is shuffled. Deterministic in
/// `seed`.
pub fn sample_epoch_pairs(ds: &BagDataset, classes: &[String], seed: u64) -> Result<Vec<PairingSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(ds.total_images(classes));
    for class in classes {
        if !ds.split.train.contains(class) {
            return Err(DataError::NotTrainClass(class.clone()));
        }
        let texts = ds.corpus.records(class).unwrap_or(&[]);
        for (ix, image) in ds.images(class).iter().enumerate() {
            let pool = ds.text_pool(class, ix);
            if pool.is_empty() || texts.is_empty() {
                return Err(DataError::EmptyCorpusForClass(class.clone()));
            }
            let pick = pool[rng.random_range(0..pool.len())];
            out.push(PairingSample {
                image: image.clone(),
                text: texts[pick].clone(),
                class_name: class.clone(),
            });
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

fn mentions(text: &str, keyword: &str) -> bool {
    let kw = keyword.to_ascii_lowercase();
    text.split(|c: char| !c.is_alphanumeric())
        .map(str::to_ascii_lowercase)
        .any(|tok| tok == kw || tok == format!("{kw}s") || tok == format!("{kw}es"))
}

/// Restricts each image's text pool to texts that mention no keyword of a
/// part flagged not visible in that image. An image whose pool would become
/// empty keeps the full class pool.
pub fn visibility_filter(ds: &BagDataset, part_lexicon: &BTreeMap<String, Vec<String>>) -> Result<BagDataset> {
    if part_lexicon.values().all(Vec::is_empty) {
        return Err(DataError::EmptyLexicon);
    }
    let mut out = ds.clone();
    out.pools.clear();
    out.fallbacks = 0;
    for (class, imgs) in &ds.images {
        let texts = ds.corpus.records(class).unwrap_or(&[]);
        for (ix, img) in imgs.iter().enumerate() {
            let flags = img
                .visibility
                .as_ref()
                .ok_or_else(|| DataError::MissingVisibility(img.id.clone()))?;
            let hidden: Vec<&String> = flags
                .iter()
                .filter(|(_, &visible)| !visible)
                .filter_map(|(part, _)| part_lexicon.get(part))
                .flatten()
                .collect();
            if hidden.is_empty() {
                continue;
            }
            let pool: Vec<usize> = (0..texts.len())
                .filter(|&t| !hidden.iter().any(|kw| mentions(&texts[t].text, kw)))
                .collect();
            if pool.is_empty() {
                warn!("all texts of `{class}` mention parts hidden in `{}`; using full pool", img.id);
                out.fallbacks += 1;
                continue;
            }
            if pool.len() < texts.len() {
                out.pools.insert((class.clone(), ix), pool);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpusgen::TextKind;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i:03}")).collect()
    }

    fn dataset(texts: &[(&str, &[&str])], imgs_per_class: usize) -> BagDataset {
        let mut corpus = TextCorpus::new("toy", "bird");
        let mut images = IndexMap::new();
        for (class, ts) in texts {
            for t in *ts {
                corpus.push(class, DescriptionRecord::template(*t, TextKind::Visual));
            }
            images.insert(
                class.to_string(),
                (0..imgs_per_class).map(|i| ImageRef::new(format!("{class}/{i}"))).collect(),
            );
        }
        let split = SplitSpec { train: texts.iter().map(|(c, _)| c.to_string()).collect(), test: vec![] };
        BagDataset::new(images, corpus, split).unwrap()
    }

    #[test]
    fn halves() {
        let s = halves_split(&names(200)).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (100, 100));
        assert_eq!(s.train[0], "c000");
        assert_eq!(s.test[0], "c100");
        let s = halves_split(&names(102)).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (51, 51));
        let s = halves_split(&names(5)).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (3, 2));
        assert!(matches!(halves_split(&names(1)), Err(DataError::TooFewClasses(1))));
        assert_eq!(halves_split(&names(7)).unwrap(), halves_split(&names(7)).unwrap());
    }

    #[test]
    fn overlap_removal_counts() {
        // 404 training species, 73 of which also appear (modulo case) among 100 test species.
        let train: Vec<String> = (0..404).map(|i| format!("Species {i}")).collect();
        let test: Vec<String> = (331..431).map(|i| format!("species {i}")).collect();
        let r = remove_overlap(&train, &test, names_equivalent);
        assert_eq!(r.kept.len(), 331);
        assert_eq!(r.removed.len(), 73);

        let disjoint = remove_overlap(&names(4), &["zz".to_string()], names_equivalent);
        assert_eq!(disjoint.kept, names(4));
        let same = remove_overlap(&names(4), &names(4), names_equivalent);
        assert!(same.kept.is_empty());
    }

    #[test]
    fn pluggable_matcher() {
        let sci: HashMap<&str, &str> = [("Common Tern", "Sterna hirundo"), ("Tern (common)", "Sterna hirundo")].into();
        let r = remove_overlap(
            &["Common Tern".to_string(), "Arctic Tern".to_string()],
            &["Tern (common)".to_string()],
            |a, b| matches!((sci.get(a), sci.get(b)), (Some(x), Some(y)) if x == y),
        );
        assert_eq!(r.kept, vec!["Arctic Tern".to_string()]);
    }

    #[test]
    fn single_text_class_pairs_everything_with_it() {
        let ds = dataset(&[("a", &["only"])], 10);
        let pairs = sample_epoch_pairs(&ds, &["a".into()], 1).unwrap();
        assert_eq!(pairs.len(), 10);
        assert!(pairs.iter().all(|p| p.text.text == "only"));
    }

    #[test]
    fn pairs_stay_in_class_and_cover_every_image() {
        let ds = dataset(&[("a", &["a1", "a2"]), ("b", &["b1", "b2", "b3"])], 7);
        let classes = vec!["a".to_string(), "b".to_string()];
        let pairs = sample_epoch_pairs(&ds, &classes, 9).unwrap();
        assert_eq!(pairs.len(), ds.total_images(&classes));
        for p in &pairs {
            assert!(p.image.id.starts_with(&p.class_name));
            assert!(p.text.text.starts_with(&p.class_name));
        }
        let ids: BTreeSet<_> = pairs.iter().map(|p| p.image.id.clone()).collect();
        assert_eq!(ids.len(), 14);
        assert_eq!(pairs, sample_epoch_pairs(&ds, &classes, 9).unwrap());
        assert_ne!(pairs, sample_epoch_pairs(&ds, &classes, 10).unwrap());
    }

    #[test]
    fn sampling_test_class_is_rejected() {
        let mut ds = dataset(&[("a", &["a1"]), ("b", &["b1"])], 2);
        ds.split = SplitSpec { train: vec!["a".into()], test: vec!["b".into()] };
        assert!(matches!(sample_epoch_pairs(&ds, &["b".into()], 0), Err(DataError::NotTrainClass(_))));
    }

    #[test]
    fn construction_checks() {
        let mut images = IndexMap::new();
        images.insert("a".to_string(), vec![ImageRef::new("a/0")]);
        let corpus = TextCorpus::new("toy", "bird");
        let split = SplitSpec { train: vec!["a".into()], test: vec![] };
        assert!(matches!(
            BagDataset::new(images.clone(), corpus, split),
            Err(DataError::EmptyCorpusForClass(_))
        ));
        let split = SplitSpec { train: vec!["a".into()], test: vec!["a".into()] };
        assert!(matches!(
            BagDataset::new(images, TextCorpus::new("t", "b"), split),
            Err(DataError::OverlappingSplit(_))
        ));
    }

    fn vis_dataset(flags: &[(&str, bool)]) -> BagDataset {
        let mut corpus = TextCorpus::new("cub", "bird");
        for t in [
            "a photo of a Common Tern bird with short, red legs.",
            "a photo of a Common Tern bird with a black cap.",
            "a photo of a Common Tern bird with webbed feet.",
        ] {
            corpus.push("tern", DescriptionRecord::template(t, TextKind::Visual));
        }
        let flags: BTreeMap<String, bool> = flags.iter().map(|(p, v)| (p.to_string(), *v)).collect();
        let mut images = IndexMap::new();
        images.insert("tern".to_string(), vec![ImageRef::new("tern/0").with_visibility(flags)]);
        BagDataset::new(images, corpus, SplitSpec { train: vec!["tern".into()], test: vec![] }).unwrap()
    }

    fn lexicon() -> BTreeMap<String, Vec<String>> {
        [
            ("legs".to_string(), vec!["leg".to_string(), "foot".to_string(), "feet".to_string()]),
            ("crown".to_string(), vec!["cap".to_string(), "crown".to_string()]),
        ]
        .into()
    }

    #[test]
    fn hidden_legs_exclude_leg_texts() {
        let ds = visibility_filter(&vis_dataset(&[("legs", false), ("crown", true)]), &lexicon()).unwrap();
        assert_eq!(ds.text_pool("tern", 0), vec![1]);
        let pairs = sample_epoch_pairs(&ds, &["tern".into()], 3).unwrap();
        assert!(pairs[0].text.text.contains("black cap"));
    }

    #[test]
    fn all_visible_leaves_pool_unchanged() {
        let ds = visibility_filter(&vis_dataset(&[("legs", true), ("crown", true)]), &lexicon()).unwrap();
        assert_eq!(ds.text_pool("tern", 0), vec![0, 1, 2]);
        assert_eq!(ds.visibility_fallbacks(), 0);
    }

    #[test]
    fn fully_occluded_image_falls_back_to_full_pool() {
        let ds = visibility_filter(&vis_dataset(&[("legs", false), ("crown", false)]), &lexicon()).unwrap();
        assert_eq!(ds.text_pool("tern", 0), vec![0, 1, 2]);
        assert_eq!(ds.visibility_fallbacks(), 1);
    }

    #[test]
    fn visibility_errors() {
        let ds = dataset(&[("a", &["a leg"])], 1);
        assert!(matches!(visibility_filter(&ds, &lexicon()), Err(DataError::MissingVisibility(_))));
        assert!(matches!(visibility_filter(&ds, &BTreeMap::new()), Err(DataError::EmptyLexicon)));
    }

    #[test]
    fn manifest_round_trip_keeps_order() {
        let mut images = IndexMap::new();
        images.insert("zeta".to_string(), vec![ImageRef::new("z/0")]);
        images.insert(
            "alpha".to_string(),
            vec![ImageRef::new("a/0").with_visibility([("legs".to_string(), false)].into())],
        );
        let m = Manifest::from_images(&images);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.starts_with("{\"classes\":{\"zeta\""));
        let back: Manifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back.class_names(), vec!["zeta", "alpha"]);
        assert_eq!(back.images().unwrap(), images);
    }

    #[test]
    fn cap_images() {
        let ds = dataset(&[("a", &["x"])], 20).cap_images_per_class(16);
        assert_eq!(ds.images("a").len(), 16);
    }

    #[test]
    fn derived_seeds_differ() {
        let s: BTreeSet<u64> = (0..100).map(|i| derive_seed(42, i)).collect();
        assert_eq!(s.len(), 100);
        assert_eq!(derive_seed(1, 2), derive_seed(1, 2));
    }
}
