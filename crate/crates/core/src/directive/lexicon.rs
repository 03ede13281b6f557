//! Relation lexicon: the registry of spatial and interactional phrases the
//! parser recognizes. Bundled as a data file so vocabularies can be swapped
//! without touching the grammar.

use std::sync::OnceLock;

use super::{DirectiveError, Relation, RelationKind};

const BUILTIN: &str = include_str!("data/relations.lex");

/// One lexicon entry: a canonical phrase, its grammatical class, and every
/// surface form (the canonical itself plus aliases), all pre-tokenized.
#[derive(Debug, Clone)]
pub struct LexEntry {
    canonical: String,
    kind: RelationKind,
    conjunct: bool,
    forms: Vec<Vec<String>>,
}

impl LexEntry {
    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    pub fn kind(&self) -> RelationKind {
        self.kind
    }

    pub fn is_conjunct(&self) -> bool {
        self.conjunct
    }

    /// All surface forms, canonical first, one token sequence each.
    pub fn forms(&self) -> &[Vec<String>] {
        &self.forms
    }

    pub fn relation(&self) -> Relation {
        Relation::new(self.kind, self.canonical.clone(), self.conjunct)
    }
}

/// A phrase match inside a token sequence.
#[derive(Debug, Clone, Copy)]
pub struct LexMatch<'a> {
    pub entry: &'a LexEntry,
    /// Token index where the matched form starts.
    pub start: usize,
    /// Number of tokens the matched form spans.
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<LexEntry>,
}

impl Lexicon {
    /// The lexicon compiled into the binary.
    pub fn builtin() -> &'static Lexicon {
        static BUILT: OnceLock<Lexicon> = OnceLock::new();
        BUILT.get_or_init(|| Lexicon::parse(BUILTIN).expect("bundled lexicon is well-formed"))
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Lexicon, DirectiveError> {
        Lexicon::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Lexicon, DirectiveError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (kind_str, rest) = line.split_once(':').ok_or_else(|| {
                DirectiveError::BadLexicon(format!("line {}: missing `kind:` prefix", i + 1))
            })?;
            let (kind, conjunct) = match kind_str.trim() {
                "spatial" => (RelationKind::Spatial, false),
                "interactional" => (RelationKind::Interactional, false),
                "conjunct" => (RelationKind::Interactional, true),
                other => {
                    return Err(DirectiveError::BadLexicon(format!(
                        "line {}: unknown kind {other:?}",
                        i + 1
                    )))
                }
            };
            let mut forms = Vec::new();
            for phrase in rest.split('|') {
                let tokens: Vec<String> =
                    phrase.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
                if tokens.is_empty() {
                    return Err(DirectiveError::BadLexicon(format!(
                        "line {}: empty phrase",
                        i + 1
                    )));
                }
                forms.push(tokens);
            }
            let canonical = forms[0].join(" ");
            entries.push(LexEntry { canonical, kind, conjunct, forms });
        }
        if entries.is_empty() {
            return Err(DirectiveError::BadLexicon("lexicon has no entries".into()));
        }
        Ok(Lexicon { entries })
    }

    pub fn entries(&self) -> &[LexEntry] {
        &self.entries
    }

    /// Looks a phrase up by any surface form and returns its relation.
    pub fn relation(&self, phrase: &str) -> Option<Relation> {
        let tokens: Vec<String> =
            phrase.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
        self.entries
            .iter()
            .find(|e| e.forms.iter().any(|f| f[..] == tokens[..]))
            .map(|e| e.relation())
    }

    /// Leftmost match in `tokens` among entries passing `accept`; at equal
    /// start positions the longest surface form wins.
    pub fn find_in<'a>(
        &'a self,
        tokens: &[String],
        accept: impl Fn(&LexEntry) -> bool,
    ) -> Option<LexMatch<'a>> {
        for start in 0..tokens.len() {
            let mut best: Option<LexMatch<'a>> = None;
            for entry in self.entries.iter().filter(|e| accept(e)) {
                for form in &entry.forms {
                    if start + form.len() <= tokens.len()
                        && tokens[start..start + form.len()] == form[..]
                        && best.map_or(true, |b| form.len() > b.len)
                    {
                        best = Some(LexMatch { entry, start, len: form.len() });
                    }
                }
            }
            if best.is_some() {
                return best;
            }
        }
        None
    }
}
