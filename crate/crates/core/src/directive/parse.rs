//! The clause grammar: mode keywords first, then slot-filling around
//! lexicon phrases. All matching happens on lowercase word tokens.

use super::lexicon::{LexMatch, Lexicon};
use super::{Directive, DirectiveError, DirectiveScript, Entity, RelationKind};

const ARTICLES: &[&str] = &["a", "an", "the"];

/// Connector words that can never be part of an entity; finding one in an
/// entity slot means the clause was carved up wrongly.
const BLOCKED_ENTITY_TOKENS: &[&str] =
    &["and", "then", "between", "of", "to", "on", "in", "at", "with", "into"];

/// Leading verbs a synthesis clause may carry; they add no information.
const SYNTHESIS_VERBS: &[&str] = &["add", "insert", "put", "place", "draw", "create"];

const ERASE_VERBS: &[&str] = &["delete", "remove", "erase"];

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| !matches!(c, '.' | ',' | ';' | ':' | '!' | '?' | '"' | '\''))
                .collect::<String>()
                .to_ascii_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Crude plural stripping, sufficient for the restricted noun vocabulary:
/// -ies -> -y, -Xes -> -X for sibilant stems, else trailing -s.
fn singularize(word: &str) -> String {
    let w = word;
    if w.len() > 4 && w.ends_with("ies") {
        return format!("{}y", &w[..w.len() - 3]);
    }
    for suffix in ["sses", "shes", "ches", "xes", "zes"] {
        if w.len() > suffix.len() && w.ends_with(suffix) {
            return w[..w.len() - 2].to_string();
        }
    }
    if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") {
        return w[..w.len() - 1].to_string();
    }
    w.to_string()
}

fn parse_entity(tokens: &[String], slot: &'static str, clause: &str) -> Result<Entity, DirectiveError> {
    let words: Vec<&String> =
        tokens.iter().filter(|t| !ARTICLES.contains(&t.as_str())).collect();
    if words.is_empty() {
        return Err(DirectiveError::EmptyEntity { slot, clause: clause.to_string() });
    }
    for w in &words {
        if BLOCKED_ENTITY_TOKENS.contains(&w.as_str()) {
            return Err(DirectiveError::TemplateMismatch {
                index: None,
                clause: clause.to_string(),
                detail: format!("connector word {w:?} inside the {slot} entity"),
            });
        }
        if !w.chars().all(|c| c.is_ascii_alphabetic()) {
            return Err(DirectiveError::TemplateMismatch {
                index: None,
                clause: clause.to_string(),
                detail: format!("token {w:?} is not a plain word"),
            });
        }
    }
    let name = singularize(words[words.len() - 1]);
    let attributes = words[..words.len() - 1].iter().map(|w| w.to_string()).collect();
    Ok(Entity::new(name, attributes))
}

fn mismatch(clause: &str, detail: impl Into<String>) -> DirectiveError {
    DirectiveError::TemplateMismatch { index: None, clause: clause.to_string(), detail: detail.into() }
}

/// Parses one clause against the three mode templates.
pub fn parse_directive(text: &str) -> Result<Directive, DirectiveError> {
    parse_directive_with(Lexicon::builtin(), text)
}

pub fn parse_directive_with(lexicon: &Lexicon, text: &str) -> Result<Directive, DirectiveError> {
    let tokens = tokenize(text);
    parse_tokens(lexicon, &tokens, text)
}

fn parse_tokens(lexicon: &Lexicon, tokens: &[String], clause: &str) -> Result<Directive, DirectiveError> {
    let first = tokens.first().ok_or_else(|| mismatch(clause, "empty clause"))?;

    if first == "change" {
        let to = tokens
            .iter()
            .position(|t| t == "to")
            .ok_or_else(|| mismatch(clause, "editing clause without `to`"))?;
        let source = parse_entity(&tokens[1..to], "source", clause)?;
        let target = parse_entity(&tokens[to + 1..], "target", clause)?;
        if source.name() == target.name() {
            return Err(mismatch(clause, "editing source and target name the same entity"));
        }
        return Ok(Directive::Editing { source, target });
    }

    if ERASE_VERBS.contains(&first.as_str()) {
        let target = parse_entity(&tokens[1..], "target", clause)?;
        return Ok(Directive::Erasing { target });
    }

    // Synthesis: optional leading verb, then
    //   [subject] ([rel lexeme] [partner])? ([spatial lexeme] [anchor])?
    let rest = if SYNTHESIS_VERBS.contains(&first.as_str()) && tokens.len() > 1 {
        &tokens[1..]
    } else {
        tokens
    };

    let (head, position) = match lexicon.find_in(rest, |e| e.kind() == RelationKind::Spatial) {
        Some(LexMatch { entry, start, len }) => {
            let anchor = parse_entity(&rest[start + len..], "anchor", clause)?;
            (&rest[..start], Some((entry.relation(), anchor)))
        }
        None => (rest, None),
    };
    if head.is_empty() {
        return Err(DirectiveError::EmptyEntity { slot: "subject", clause: clause.to_string() });
    }

    if let Some(LexMatch { entry, start, len }) =
        lexicon.find_in(head, |e| e.kind() == RelationKind::Interactional)
    {
        if entry.is_conjunct() {
            if start + len != head.len() {
                return Err(mismatch(clause, "words after a conjunct relation"));
            }
            let and = head[..start]
                .iter()
                .position(|t| t == "and")
                .ok_or_else(|| mismatch(clause, "conjunct relation without `X and Y` subjects"))?;
            let subject = parse_entity(&head[..and], "subject", clause)?;
            let partner = parse_entity(&head[and + 1..start], "partner", clause)?;
            return Ok(Directive::Synthesis {
                subject,
                relation: Some((entry.relation(), partner)),
                position,
            });
        }
        let subject = parse_entity(&head[..start], "subject", clause)?;
        let partner = parse_entity(&head[start + len..], "partner", clause)?;
        return Ok(Directive::Synthesis {
            subject,
            relation: Some((entry.relation(), partner)),
            position,
        });
    }

    let subject = parse_entity(head, "subject", clause)?;
    Ok(Directive::Synthesis { subject, relation: None, position })
}

/// Splits scene text into clauses and parses each one.
pub fn decompose(full_text: &str) -> Result<DirectiveScript, DirectiveError> {
    decompose_with(Lexicon::builtin(), full_text)
}

pub fn decompose_with(lexicon: &Lexicon, full_text: &str) -> Result<DirectiveScript, DirectiveError> {
    let trimmed = full_text.trim();
    if trimmed.is_empty() {
        return Err(DirectiveError::Undecomposable { text: full_text.to_string() });
    }

    // Clause boundaries: sentence punctuation, then "then" / "and then".
    let mut fragments: Vec<Vec<String>> = Vec::new();
    for sentence in trimmed.split(['.', ';', '!', '?']) {
        let tokens = tokenize(sentence);
        if tokens.is_empty() {
            continue;
        }
        for group in tokens.split(|t| t == "then") {
            let mut g = group.to_vec();
            if g.last().map(|t| t.as_str()) == Some("and") {
                g.pop();
            }
            if !g.is_empty() {
                fragments.push(g);
            }
        }
    }
    if fragments.is_empty() {
        return Err(DirectiveError::Undecomposable { text: full_text.to_string() });
    }

    let single_fragment = fragments.len() == 1;
    let mut directives = Vec::new();
    for (i, fragment) in fragments.iter().enumerate() {
        match parse_fragment(lexicon, fragment) {
            Ok(mut ds) => directives.append(&mut ds),
            Err(e) if single_fragment => {
                // No usable clause boundary and the whole text fails.
                return Err(match e {
                    DirectiveError::TemplateMismatch { .. } => {
                        DirectiveError::Undecomposable { text: full_text.to_string() }
                    }
                    other => other,
                });
            }
            Err(e) => {
                return Err(match e {
                    DirectiveError::TemplateMismatch { clause, detail, .. } => {
                        DirectiveError::TemplateMismatch { index: Some(i), clause, detail }
                    }
                    other => other,
                });
            }
        }
    }
    DirectiveScript::new(directives, Some(full_text.to_string()))
}

/// One punctuation-delimited fragment: either a single clause, or several
/// full clauses joined by "and".
fn parse_fragment(lexicon: &Lexicon, tokens: &[String]) -> Result<Vec<Directive>, DirectiveError> {
    let clause = tokens.join(" ");
    let whole = parse_tokens(lexicon, tokens, &clause);
    match whole {
        Ok(d) => Ok(vec![d]),
        Err(whole_err) => {
            for (i, t) in tokens.iter().enumerate() {
                if t == "and" && i > 0 && i + 1 < tokens.len() {
                    let left = parse_tokens(lexicon, &tokens[..i], &tokens[..i].join(" "));
                    if let Ok(d) = left {
                        if let Ok(mut rest) = parse_fragment(lexicon, &tokens[i + 1..]) {
                            let mut out = vec![d];
                            out.append(&mut rest);
                            return Ok(out);
                        }
                    }
                }
            }
            Err(whole_err)
        }
    }
}

/// Prints a directive back into clause text that reparses to the same value.
pub fn render_directive(d: &Directive) -> String {
    match d {
        Directive::Synthesis { subject, relation, position } => {
            let mut out = String::new();
            match relation {
                Some((rel, partner)) if rel.is_conjunct() => {
                    out.push_str(&format!("{} and {} {}", subject, partner, rel.lexeme()));
                }
                Some((rel, partner)) => {
                    out.push_str(&format!("{} {} {}", subject, rel.lexeme(), partner));
                }
                None => out.push_str(&subject.render()),
            }
            if let Some((rel, anchor)) = position {
                out.push_str(&format!(" {} {}", rel.lexeme(), anchor));
            }
            out
        }
        Directive::Editing { source, target } => format!("change {source} to {target}"),
        Directive::Erasing { target } => format!("delete {target}"),
    }
}
