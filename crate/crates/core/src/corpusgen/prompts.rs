use super::{ClassSpec, CorpusError, DescriptionRecord, Result, TextKind};

/// English plural for a single domain noun ("bird" -> "birds",
/// "butterfly" -> "butterflies"). Only regular forms are handled.
pub fn plural(word: &str) -> String {
    let lower = word.to_ascii_lowercase();
    if lower.ends_with('s') || lower.ends_with('x') || lower.ends_with("ch") || lower.ends_with("sh")
    {
        format!("{word}es")
    } else if lower.ends_with('y')
        && !matches!(lower.chars().rev().nth(1), Some('a' | 'e' | 'i' | 'o' | 'u'))
    {
        format!("{}ies", &word[..word.len() - 1])
    } else {
        format!("{word}s")
    }
}

fn class_mention(spec: &ClassSpec) -> String {
    match (&spec.organism_type, &spec.scientific_name) {
        (Some(kind), Some(sci)) => {
            format!("{}, a type of {} with scientific name {}", spec.class_name, kind, sci)
        }
        _ => spec.class_name.clone(),
    }
}

pub fn build_visual_prompt(spec: &ClassSpec) -> Result<String> {
    spec.validate()?;
    let target = spec.target_word();
    Ok(format!(
        "What characteristics can be used to differentiate a {} from other {} based on just a photo? \
         Provide an exhaustive list of all attributes that can be used to identify the {} uniquely. \
         Texts should be of the form \"{} with [characteristic]\".",
        class_mention(spec),
        plural(&spec.domain_word),
        target,
        target,
    ))
}

pub fn build_habitat_prompt(spec: &ClassSpec) -> Result<String> {
    spec.validate()?;
    Ok(format!(
        "Where can we find a {}? Produce a list of habitat and geographic location information \
         that can be used to identify the {}.",
        class_mention(spec),
        spec.target_word(),
    ))
}

/// Template texts built from whichever taxonomy fields the class carries,
/// in the order scientific name, family, order.
pub fn build_taxonomy_texts(spec: &ClassSpec) -> Result<Vec<DescriptionRecord>> {
    spec.validate()?;
    let stem = format!("a photo of {} {}", spec.class_name, spec.domain_word);
    fn present(f: &Option<String>) -> Option<&str> {
        f.as_deref().filter(|s| !s.trim().is_empty())
    }
    let mut out = Vec::new();
    if let Some(s) = present(&spec.scientific_name) {
        out.push(format!("{stem}, with scientific name {s}"));
    }
    if let Some(f) = present(&spec.family) {
        out.push(format!("{stem}, with family name {f}"));
    }
    if let Some(o) = present(&spec.order) {
        out.push(format!("{stem}, of the order {o}"));
    }
    if out.is_empty() {
        return Err(CorpusError::NoTaxonomyFields(spec.class_name.clone()));
    }
    Ok(out
        .into_iter()
        .map(|t| DescriptionRecord::template(t, TextKind::Taxonomy))
        .collect())
}
