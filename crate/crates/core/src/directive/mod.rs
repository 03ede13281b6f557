//! Directive parsing: a restricted-English grammar that turns scene text
//! into ordered synthesis / editing / erasing directives, plus a plain-text
//! script format for pre-split directives from external tools.

mod lexicon;
mod parse;
mod script;

pub use lexicon::{LexEntry, Lexicon};
pub use parse::{decompose, decompose_with, parse_directive, parse_directive_with, render_directive};
pub use script::{load_script, parse_script, render_script, save_script};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DirectiveError {
    #[error("clause {clause:?} matches no directive template{}: {detail}", index.map(|i| format!(" (clause {i})")).unwrap_or_default())]
    TemplateMismatch { index: Option<usize>, clause: String, detail: String },
    #[error("required {slot} entity is empty in clause {clause:?}")]
    EmptyEntity { slot: &'static str, clause: String },
    #[error("text cannot be decomposed into directives: {text:?}")]
    Undecomposable { text: String },
    #[error("script line {line}: {detail}")]
    ScriptParse { line: usize, detail: String },
    #[error("relation lexicon: {0}")]
    BadLexicon(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A scene object: canonical singular noun plus ordered adjectives.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Entity {
    name: String,
    attributes: Vec<String>,
}

impl Entity {
    pub fn new(name: impl Into<String>, attributes: Vec<String>) -> Self {
        let e = Self { name: name.into(), attributes };
        debug_assert!(!e.name.trim().is_empty());
        e
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    /// Adjectives then noun, space-joined.
    pub fn render(&self) -> String {
        let mut parts: Vec<&str> = self.attributes.iter().map(|s| s.as_str()).collect();
        parts.push(&self.name);
        parts.join(" ")
    }
}

impl std::fmt::Display for Entity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationKind {
    Spatial,
    Interactional,
}

/// A relation drawn from the lexicon; `lexeme` is always the canonical form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    kind: RelationKind,
    lexeme: String,
    conjunct: bool,
}

impl Relation {
    pub(crate) fn new(kind: RelationKind, lexeme: String, conjunct: bool) -> Self {
        Self { kind, lexeme, conjunct }
    }

    pub fn kind(&self) -> RelationKind {
        self.kind
    }

    pub fn lexeme(&self) -> &str {
        &self.lexeme
    }

    /// Conjunct relations read "X and Y <lexeme>" rather than "X <lexeme> Y".
    pub fn is_conjunct(&self) -> bool {
        self.conjunct
    }
}

/// One atomic structured prompt.
#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    Synthesis {
        subject: Entity,
        /// Interaction with a partner entity, jointly present or absent.
        relation: Option<(Relation, Entity)>,
        /// Spatial placement against an anchor entity, jointly present or absent.
        position: Option<(Relation, Entity)>,
    },
    Editing {
        source: Entity,
        target: Entity,
    },
    Erasing {
        target: Entity,
    },
}

impl Directive {
    pub fn mode_name(&self) -> &'static str {
        match self {
            Directive::Synthesis { .. } => "synthesis",
            Directive::Editing { .. } => "editing",
            Directive::Erasing { .. } => "erasing",
        }
    }
}

/// Ordered directives plus the text they came from, when any.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectiveScript {
    directives: Vec<Directive>,
    source_text: Option<String>,
}

impl DirectiveScript {
    pub fn new(directives: Vec<Directive>, source_text: Option<String>) -> Result<Self, DirectiveError> {
        if directives.is_empty() {
            return Err(DirectiveError::ScriptParse { line: 0, detail: "script has no directives".into() });
        }
        Ok(Self { directives, source_text })
    }

    pub fn directives(&self) -> &[Directive] {
        &self.directives
    }

    pub fn len(&self) -> usize {
        self.directives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directives.is_empty()
    }

    pub fn source_text(&self) -> Option<&str> {
        self.source_text.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entity_render_order() {
        let e = Entity::new("dog", vec!["big".into(), "red".into()]);
        assert_eq!(e.render(), "big red dog");
        assert_eq!(e.name(), "dog");
    }

    #[test]
    fn script_rejects_empty() {
        assert!(DirectiveScript::new(vec![], None).is_err());
    }
}
