//! Per-class text corpora: prompt templates, LLM querying with a response
//! cache, response normalization, and the on-disk corpus and vetting formats.

mod cache;
mod llm;
mod normalize;
mod prompts;
mod vetting;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheEntry, CacheKey, ResponseCache};
pub use llm::{
    generate_corpus, query_and_normalize, ChatProvider, ChatRequest, LlmClient, OpenAiProvider,
    ProviderError, RetryPolicy, DEFAULT_HABITAT_SYSTEM_ROLE, DEFAULT_VISUAL_SYSTEM_ROLE,
};
pub use normalize::{normalize_lines, normalize_response};
pub use prompts::{build_habitat_prompt, build_taxonomy_texts, build_visual_prompt, plural};
pub use vetting::{export_vetting_sheet, read_vetting_csv, write_vetting_csv, VettingRow};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("invalid class spec: {0}")]
    InvalidSpec(String),
    #[error("class `{0}` has no scientific name, family, or order")]
    NoTaxonomyFields(String),
    #[error("provider error: {0}")]
    Provider(#[from] ProviderError),
    #[error("no usable lines in response: {0}")]
    Format(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("cache conflict for key {0}: existing entry has a different response")]
    CacheConflict(String),
    #[error("unknown text kind `{0}`")]
    UnknownKind(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// A class to generate descriptions for.
///
/// `organism_type` switches prompts to the "a type of X with scientific name Y"
/// form, so it requires `scientific_name`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_name: String,
    pub domain_word: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub organism_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scientific_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<String>,
    #[serde(default)]
    pub class_id: u32,
}

impl ClassSpec {
    pub fn new(class_name: impl Into<String>, domain_word: impl Into<String>) -> Self {
        ClassSpec {
            class_name: class_name.into(),
            domain_word: domain_word.into(),
            organism_type: None,
            scientific_name: None,
            family: None,
            order: None,
            class_id: 0,
        }
    }

    pub fn with_organism(mut self, organism_type: &str, scientific_name: &str) -> Self {
        self.organism_type = Some(organism_type.to_string());
        self.scientific_name = Some(scientific_name.to_string());
        self
    }

    pub fn with_scientific_name(mut self, name: &str) -> Self {
        self.scientific_name = Some(name.to_string());
        self
    }

    pub fn with_family(mut self, family: &str) -> Self {
        self.family = Some(family.to_string());
        self
    }

    pub fn with_order(mut self, order: &str) -> Self {
        self.order = Some(order.to_string());
        self
    }

    pub fn with_id(mut self, class_id: u32) -> Self {
        self.class_id = class_id;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_name.trim().is_empty() {
            return Err(CorpusError::MissingField("class_name"));
        }
        if self.domain_word.trim().is_empty() {
            return Err(CorpusError::MissingField("domain_word"));
        }
        if let Some(kind) = &self.organism_type {
            if kind.trim().is_empty() {
                return Err(CorpusError::MissingField("organism_type"));
            }
            match &self.scientific_name {
                Some(s) if !s.trim().is_empty() => {}
                _ => return Err(CorpusError::MissingField("scientific_name")),
            }
        }
        Ok(())
    }

    /// The noun the LLM is asked to identify: the organism type when given,
    /// otherwise the domain word.
    /// `a photo of a <class> <domain>`: the plain template text and the
    /// prefix of every assembled visual description.
    pub fn template_text(&self) -> String {
        format!("a photo of a {} {}", self.class_name, self.domain_word)
    }

    pub fn target_word(&self) -> &str {
        self.organism_type.as_deref().unwrap_or(&self.domain_word)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextKind {
    Visual,
    Habitat,
    Taxonomy,
}

impl TextKind {
    pub const ALL: [TextKind; 3] = [TextKind::Visual, TextKind::Habitat, TextKind::Taxonomy];

    pub fn as_str(self) -> &'static str {
        match self {
            TextKind::Visual => "visual",
            TextKind::Habitat => "habitat",
            TextKind::Taxonomy => "taxonomy",
        }
    }

    /// Parses a comma- or plus-separated kind list such as `visual,habitat`.
    pub fn parse_list(s: &str) -> Result<Vec<TextKind>> {
        let mut kinds = Vec::new();
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            let kind: TextKind = part.parse()?;
            if !kinds.contains(&kind) {
                kinds.push(kind);
            }
        }
        Ok(kinds)
    }
}

impl fmt::Display for TextKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TextKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "visual" | "vis" => Ok(TextKind::Visual),
            "habitat" | "hab" => Ok(TextKind::Habitat),
            "taxonomy" | "tax" => Ok(TextKind::Taxonomy),
            _ => Err(CorpusError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Gpt4,
    Gpt3,
    Llama,
    Human,
    Template,
}

impl Source {
    /// Infers the source tag from a model identifier like `gpt-4-0613`.
    pub fn from_model(model: &str) -> Option<Source> {
        let m = model.to_ascii_lowercase();
        if m.starts_with("gpt-4") || m.starts_with("gpt4") {
            Some(Source::Gpt4)
        } else if m.starts_with("gpt-3") || m.starts_with("gpt3") {
            Some(Source::Gpt3)
        } else if m.contains("llama") {
            Some(Source::Llama)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub text: String,
    pub kind: TextKind,
    pub source: Source,
    pub raw_line: String,
}

impl DescriptionRecord {
    pub fn template(text: impl Into<String>, kind: TextKind) -> Self {
        let text = text.into();
        DescriptionRecord {
            raw_line: text.clone(),
            text,
            kind,
            source: Source::Template,
        }
    }
}

/// Per-class description bags. Class keys are kept sorted so the JSON form
/// is canonical.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextCorpus {
    pub dataset: String,
    pub domain_word: String,
    pub classes: BTreeMap<String, Vec<DescriptionRecord>>,
}

impl TextCorpus {
    pub fn new(dataset: impl Into<String>, domain_word: impl Into<String>) -> Self {
        TextCorpus {
            dataset: dataset.into(),
            domain_word: domain_word.into(),
            classes: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, class_name: &str, record: DescriptionRecord) {
        self.classes
            .entry(class_name.to_string())
            .or_default()
            .push(record);
    }

    pub fn extend(&mut self, class_name: &str, records: impl IntoIterator<Item = DescriptionRecord>) {
        self.classes
            .entry(class_name.to_string())
            .or_default()
            .extend(records);
    }

    pub fn records(&self, class_name: &str) -> Option<&[DescriptionRecord]> {
        self.classes.get(class_name).map(Vec::as_slice)
    }

    /// Number of texts `l_k` for a class (0 when absent).
    pub fn len_of(&self, class_name: &str) -> usize {
        self.classes.get(class_name).map_or(0, Vec::len)
    }

    /// Texts of a class restricted to `kinds`, in generation order.
    pub fn texts(&self, class_name: &str, kinds: &[TextKind]) -> Vec<&str> {
        self.classes
            .get(class_name)
            .map(|recs| {
                recs.iter()
                    .filter(|r| kinds.contains(&r.kind))
                    .map(|r| r.text.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// A copy keeping only records whose kind is in `kinds`. Classes left
    /// empty are kept with an empty list.
    pub fn filter_kinds(&self, kinds: &[TextKind]) -> TextCorpus {
        TextCorpus {
            dataset: self.dataset.clone(),
            domain_word: self.domain_word.clone(),
            classes: self
                .classes
                .iter()
                .map(|(k, recs)| {
                    let kept = recs.iter().filter(|r| kinds.contains(&r.kind)).cloned().collect();
                    (k.clone(), kept)
                })
                .collect(),
        }
    }

    /// Canonical JSON: two-space indentation, sorted class keys, trailing newline.
    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}
