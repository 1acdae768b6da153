//! Prompt templates: the formatting function applied to each scenario before
//! it is embedded.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Scenario;

pub const PLACEHOLDER: &str = "{}";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {id:?} must contain exactly one {{}} placeholder, found {found}")]
    InvalidTemplate { id: String, found: usize },
    #[error("template file line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("template index {index} out of range (0..{len})")]
    UnknownIndex { index: usize, len: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub pattern: String,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, pattern: impl Into<String>) -> Result<Self, PromptError> {
        let tpl = Self {
            id: id.into(),
            pattern: pattern.into(),
        };
        tpl.validate()?;
        Ok(tpl)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let found = self.pattern.matches(PLACEHOLDER).count();
        if found != 1 {
            return Err(PromptError::InvalidTemplate {
                id: self.id.clone(),
                found,
            });
        }
        Ok(())
    }
}

/// The five built-in templates, in their canonical order.
pub fn builtin_templates() -> Vec<PromptTemplate> {
    [
        ("copy", "{}"),
        ("instantaneous", "Consider the instantaneous pleasantness of \"{}\""),
        ("how_pleasant", "How pleasant is the following scenario? \"{}\""),
        ("better_than", "\"{}\" is better than"),
        ("more_pleasant_than", "\"{}\" is more pleasant than"),
    ]
    .into_iter()
    .map(|(id, pattern)| PromptTemplate {
        id: id.to_string(),
        pattern: pattern.to_string(),
    })
    .collect()
}

pub fn builtin_template(index: usize) -> Result<PromptTemplate, PromptError> {
    let all = builtin_templates();
    let len = all.len();
    all.into_iter()
        .nth(index)
        .ok_or(PromptError::UnknownIndex { index, len })
}

/// Substitutes the scenario text for the placeholder. Nothing else in the
/// pattern is touched, trailing text included.
pub fn apply_template(tpl: &PromptTemplate, s: &Scenario) -> Result<String, PromptError> {
    tpl.validate()?;
    Ok(tpl.pattern.replacen(PLACEHOLDER, s.text(), 1))
}

/// Parses a template file: one `id<TAB>pattern` per line. Blank lines and
/// lines starting with `#` are ignored.
pub fn parse_templates(text: &str) -> Result<Vec<PromptTemplate>, PromptError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, pattern) = line.split_once('\t').ok_or_else(|| PromptError::ParseError {
            line: i + 1,
            message: "expected id<TAB>pattern".into(),
        })?;
        if id.is_empty() {
            return Err(PromptError::ParseError {
                line: i + 1,
                message: "empty template id".into(),
            });
        }
        out.push(PromptTemplate::new(id, pattern)?);
    }
    Ok(out)
}

pub fn load_templates(path: &Path) -> Result<Vec<PromptTemplate>, PromptError> {
    parse_templates(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const APPLE: &str = "I ate an apple since it looked tasty and sweet, but it was sour.";

    fn sc(s: &str) -> Scenario {
        Scenario::new(s).unwrap()
    }

    #[test]
    fn five_builtins_each_with_one_placeholder() {
        let t = builtin_templates();
        assert_eq!(t.len(), 5);
        for tpl in &t {
            assert_eq!(tpl.pattern.matches("{}").count(), 1, "{}", tpl.id);
        }
        assert_eq!(t[3].pattern, "\"{}\" is better than");
        assert_eq!(t[4].pattern, "\"{}\" is more pleasant than");
    }

    #[test]
    fn copy_template_is_identity() {
        let t = &builtin_templates()[0];
        assert_eq!(apply_template(t, &sc(APPLE)).unwrap(), APPLE);
        assert_eq!(apply_template(t, &sc("x")).unwrap(), "x");
    }

    #[test]
    fn instantaneous_expansion() {
        let t = &builtin_templates()[1];
        assert_eq!(
            apply_template(t, &sc(APPLE)).unwrap(),
            "Consider the instantaneous pleasantness of \"I ate an apple since it looked tasty and sweet, but it was sour.\""
        );
    }

    #[test]
    fn placeholder_count_enforced() {
        let bad = PromptTemplate {
            id: "none".into(),
            pattern: "no slot".into(),
        };
        assert!(matches!(
            apply_template(&bad, &sc("x")),
            Err(PromptError::InvalidTemplate { found: 0, .. })
        ));
        assert!(PromptTemplate::new("two", "{} and {}").is_err());
    }

    #[test]
    fn scenario_containing_braces_is_inserted_once() {
        let t = &builtin_templates()[2];
        let out = apply_template(t, &sc("a {} b")).unwrap();
        assert_eq!(out, "How pleasant is the following scenario? \"a {} b\"");
    }

    #[test]
    fn template_file_parsing() {
        let text = "# custom\nplain\t{}\n\nq\tIs \"{}\" nice?\r\n";
        let t = parse_templates(text).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].pattern, "Is \"{}\" nice?");
        assert!(matches!(parse_templates("nope"), Err(PromptError::ParseError { line: 1, .. })));
        assert!(matches!(parse_templates("a\tb"), Err(PromptError::InvalidTemplate { .. })));
    }

    proptest! {
        #[test]
        fn injective_and_findable(a in "[a-zA-Z ,.']{1,40}", b in "[a-zA-Z ,.']{1,40}") {
            prop_assume!(!a.trim().is_empty() && !b.trim().is_empty());
            for t in builtin_templates() {
                let pa = apply_template(&t, &sc(&a)).unwrap();
                let pb = apply_template(&t, &sc(&b)).unwrap();
                prop_assert!(pa.contains(&a));
                prop_assert_eq!(a == b, pa == pb);
            }
        }
    }
}
