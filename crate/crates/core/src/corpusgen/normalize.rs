//! LLM response post-processing.
//!
//! A response is split into lines. If any line carries a list marker
//! (`-`, `•`, `*`, `N.` or `N)`), only marked lines are kept and unmarked
//! lines are treated as preamble or closing chatter. Otherwise every
//! non-empty line is taken as a bare sentence. Lines ending in `:` are
//! always dropped. Visual lines are then assembled into the
//! `a photo of a <class> <domain> ...` form.

use super::{ClassSpec, TextKind};

fn strip_marker_once(line: &str) -> Option<&str> {
    let t = line.trim_start();
    for m in ['-', '•', '*', '–', '—'] {
        if let Some(rest) = t.strip_prefix(m) {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                return Some(rest.trim_start());
            }
        }
    }
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        for m in ['.', ')'] {
            if let Some(after) = rest.strip_prefix(m) {
                if after.is_empty() || after.starts_with(char::is_whitespace) {
                    return Some(after.trim_start());
                }
            }
        }
    }
    None
}

/// Strips any number of stacked list markers; `None` if the line had none.
fn strip_markers(line: &str) -> Option<&str> {
    let mut cur = strip_marker_once(line)?;
    while let Some(next) = strip_marker_once(cur) {
        cur = next;
    }
    Some(cur)
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits a raw response into `(raw_line, cleaned_text)` pairs.
pub fn normalize_lines(response: &str) -> Vec<(String, String)> {
    let lines: Vec<&str> = response.lines().collect();
    let marked = lines.iter().any(|l| strip_markers(l).is_some());
    lines
        .into_iter()
        .filter_map(|raw| {
            let body = match strip_markers(raw) {
                Some(b) => b,
                None if marked => return None,
                None => raw,
            };
            let text = collapse_ws(body);
            if text.is_empty() || text.ends_with(':') {
                return None;
            }
            Some((raw.to_string(), text))
        })
        .collect()
}

fn starts_with_ci(s: &str, prefix: &str) -> bool {
    s.len() >= prefix.len()
        && s.is_char_boundary(prefix.len())
        && s[..prefix.len()].eq_ignore_ascii_case(prefix)
}

/// Rewrites a cleaned visual line into `a photo of a <class> <domain> ...`.
///
/// A leading `[a|an] <stem>` (stem = organism type or domain word) is
/// replaced by the prefix and the remainder kept verbatim. Lines already
/// carrying the prefix are left as is. Any other line is appended after
/// the prefix and a comma.
pub fn assemble_visual(spec: &ClassSpec, text: &str) -> String {
    let prefix = spec.template_text();
    if text.starts_with(&prefix) {
        return text.to_string();
    }
    let mut rest = text;
    for article in ["a ", "an "] {
        if starts_with_ci(rest, article) {
            rest = &rest[article.len()..];
            break;
        }
    }
    let mut stems = vec![spec.target_word(), spec.domain_word.as_str()];
    stems.dedup();
    for stem in stems {
        if starts_with_ci(rest, stem) {
            let after = &rest[stem.len()..];
            if after.starts_with(' ') || after.starts_with(',') {
                return format!("{prefix}{after}");
            }
        }
    }
    format!("{prefix}, {text}")
}

/// Full normalization of one response for one class and kind. Returns the
/// `(raw_line, text)` pairs that survive; empty if nothing usable remains.
pub fn normalize_response(response: &str, spec: &ClassSpec, kind: TextKind) -> Vec<(String, String)> {
    normalize_lines(response)
        .into_iter()
        .map(|(raw, text)| match kind {
            TextKind::Visual => (raw, assemble_visual(spec, &text)),
            _ => (raw, text),
        })
        .collect()
}
