// SPDX-License-Identifier: MIT OR Apache-2.0

//! Concept files: a YAML sequence of `{base, positive, negative}` maps.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FslError, Result};
use crate::types::ConceptTriplet;

const SLUG_MAX: usize = 64;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConceptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub base: Option<String>,
    pub positive: Option<String>,
    pub negative: Option<String>,
}

/// Lowercase ASCII words joined by `-`, at most 64 characters.
pub fn slug(text: &str) -> String {
    let mut out = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.is_empty() && !out.ends_with('-') {
            out.push('-');
        }
    }
    if out.len() > SLUG_MAX {
        out.truncate(SLUG_MAX);
    }
    let out = out.trim_end_matches('-');
    if out.is_empty() {
        "concept".to_string()
    } else {
        out.to_string()
    }
}

/// Validates entries and assigns unique names.
pub fn entries_to_triplets(entries: Vec<ConceptEntry>) -> Result<Vec<ConceptTriplet>> {
    if entries.is_empty() {
        return Err(FslError::Parse {
            line: 1,
            message: "concept list is empty".into(),
        });
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(entries.len());
    for (index, e) in entries.into_iter().enumerate() {
        let base = e.base.ok_or(FslError::MissingField {
            index,
            field: "base",
        })?;
        let positive = e.positive.ok_or(FslError::MissingField {
            index,
            field: "positive",
        })?;
        let negative = e.negative.ok_or(FslError::MissingField {
            index,
            field: "negative",
        })?;
        let stem = e.name.unwrap_or_else(|| slug(&positive));
        let mut name = stem.clone();
        let mut k = 2;
        while !seen.insert(name.clone()) {
            name = format!("{stem}-{k}");
            k += 1;
        }
        out.push(ConceptTriplet::new(name, base, positive, negative)?);
    }
    Ok(out)
}

pub fn parse_concept_specs(text: &str) -> Result<Vec<ConceptTriplet>> {
    if text.trim().is_empty() {
        return Err(FslError::Parse {
            line: 1,
            message: "concept file is empty".into(),
        });
    }
    let entries: Vec<ConceptEntry> = serde_yaml::from_str(text).map_err(|e| FslError::Parse {
        line: e.location().map_or(1, |l| l.line()),
        message: e.to_string(),
    })?;
    entries_to_triplets(entries)
}

pub fn load_concept_specs(path: &Path) -> Result<Vec<ConceptTriplet>> {
    parse_concept_specs(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(
            slug("A realistic image of a person, wearing glasses."),
            "a-realistic-image-of-a-person-wearing-glasses"
        );
        assert_eq!(slug("!!!"), "concept");
        assert!(slug(&"word ".repeat(40)).len() <= SLUG_MAX);
    }

    #[test]
    fn parses_and_names() {
        let text = "- base: b\n  positive: p q\n  negative: n\n- name: custom\n  base: b\n  positive: x\n  negative: y\n- base: b\n  positive: p q\n  negative: m\n";
        let t = parse_concept_specs(text).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t[0].concept_name, "p-q");
        assert_eq!(t[1].concept_name, "custom");
        assert_eq!(t[2].concept_name, "p-q-2");
    }

    #[test]
    fn errors_carry_location() {
        assert!(matches!(
            parse_concept_specs("  \n"),
            Err(FslError::Parse { line: 1, .. })
        ));
        let missing = "- base: b\n  positive: p\n  negative: n\n- base: b\n  positive: p2\n";
        assert!(matches!(
            parse_concept_specs(missing),
            Err(FslError::MissingField {
                index: 1,
                field: "negative"
            })
        ));
        let unterminated = "- base: \"b\"\n  positive: \"p\"\n  negative: \"n\n";
        assert!(matches!(
            parse_concept_specs(unterminated),
            Err(FslError::Parse { .. })
        ));
        let err = parse_concept_specs("- base: b\n  positive: [1\n").unwrap_err();
        assert!(
            matches!(err, FslError::Parse { line, .. } if line >= 2),
            "{err:?}"
        );
    }
}
