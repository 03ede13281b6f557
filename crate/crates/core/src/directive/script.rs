//! Directive-script files: one directive per line, `#` comments, so an
//! external decomposer (or a person) can hand the engine a pre-split plan.
//!
//! Grammar per line:
//!   `add: <subject> [| rel=<lexeme> partner=<entity>] [| pos=<lexeme> anchor=<entity>]`
//!   `edit: <source> -> <target>`
//!   `erase: <target>`

use std::path::Path;

use super::lexicon::Lexicon;
use super::parse::parse_directive_with;
use super::{Directive, DirectiveError, DirectiveScript, Entity, Relation, RelationKind};

fn entity_from(text: &str, line: usize) -> Result<Entity, DirectiveError> {
    // Reuse the clause grammar for a lone entity: it must parse to a bare
    // synthesis subject.
    match parse_directive_with(Lexicon::builtin(), text) {
        Ok(Directive::Synthesis { subject, relation: None, position: None }) => Ok(subject),
        _ => Err(DirectiveError::ScriptParse {
            line,
            detail: format!("{text:?} is not a plain entity"),
        }),
    }
}

fn relation_from(
    lexicon: &Lexicon,
    phrase: &str,
    want: RelationKind,
    line: usize,
) -> Result<Relation, DirectiveError> {
    let rel = lexicon.relation(phrase).ok_or_else(|| DirectiveError::ScriptParse {
        line,
        detail: format!("unknown relation lexeme {phrase:?}"),
    })?;
    if rel.kind() != want {
        return Err(DirectiveError::ScriptParse {
            line,
            detail: format!("{phrase:?} is not a {want:?} relation"),
        });
    }
    Ok(rel)
}

fn parse_add_line(lexicon: &Lexicon, body: &str, line: usize) -> Result<Directive, DirectiveError> {
    let mut parts = body.split('|').map(str::trim);
    let subject = entity_from(
        parts.next().filter(|s| !s.is_empty()).ok_or_else(|| DirectiveError::ScriptParse {
            line,
            detail: "add line without a subject".into(),
        })?,
        line,
    )?;
    let mut relation = None;
    let mut position = None;
    for part in parts {
        if let Some(rest) = part.strip_prefix("rel=") {
            let (lexeme, partner) =
                rest.split_once(" partner=").ok_or_else(|| DirectiveError::ScriptParse {
                    line,
                    detail: "rel clause needs `rel=<lexeme> partner=<entity>`".into(),
                })?;
            let rel = relation_from(lexicon, lexeme.trim(), RelationKind::Interactional, line)?;
            relation = Some((rel, entity_from(partner.trim(), line)?));
        } else if let Some(rest) = part.strip_prefix("pos=") {
            let (lexeme, anchor) =
                rest.split_once(" anchor=").ok_or_else(|| DirectiveError::ScriptParse {
                    line,
                    detail: "pos clause needs `pos=<lexeme> anchor=<entity>`".into(),
                })?;
            let rel = relation_from(lexicon, lexeme.trim(), RelationKind::Spatial, line)?;
            position = Some((rel, entity_from(anchor.trim(), line)?));
        } else {
            return Err(DirectiveError::ScriptParse {
                line,
                detail: format!("unknown add clause {part:?}"),
            });
        }
    }
    Ok(Directive::Synthesis { subject, relation, position })
}

/// Parses script text. Line numbers in errors are 1-based.
pub fn parse_script(text: &str) -> Result<DirectiveScript, DirectiveError> {
    let lexicon = Lexicon::builtin();
    let mut directives = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (op, body) = line.split_once(':').ok_or_else(|| DirectiveError::ScriptParse {
            line: line_no,
            detail: "missing `op:` prefix".into(),
        })?;
        let body = body.trim();
        let directive = match op.trim() {
            "add" => parse_add_line(lexicon, body, line_no)?,
            "edit" => {
                let (src, tgt) =
                    body.split_once("->").ok_or_else(|| DirectiveError::ScriptParse {
                        line: line_no,
                        detail: "edit line needs `<source> -> <target>`".into(),
                    })?;
                let source = entity_from(src.trim(), line_no)?;
                let target = entity_from(tgt.trim(), line_no)?;
                if source.name() == target.name() {
                    return Err(DirectiveError::ScriptParse {
                        line: line_no,
                        detail: "edit source and target name the same entity".into(),
                    });
                }
                Directive::Editing { source, target }
            }
            "erase" => Directive::Erasing { target: entity_from(body, line_no)? },
            other => {
                return Err(DirectiveError::ScriptParse {
                    line: line_no,
                    detail: format!("unknown op {other:?}"),
                })
            }
        };
        directives.push(directive);
    }
    DirectiveScript::new(directives, None)
}

/// Renders a script in the file grammar; `load(save(s))` equals `s` up to
/// the source text, which files do not carry.
pub fn render_script(script: &DirectiveScript) -> String {
    let mut out = String::new();
    for d in script.directives() {
        match d {
            Directive::Synthesis { subject, relation, position } => {
                out.push_str(&format!("add: {subject}"));
                if let Some((rel, partner)) = relation {
                    out.push_str(&format!(" | rel={} partner={partner}", rel.lexeme()));
                }
                if let Some((rel, anchor)) = position {
                    out.push_str(&format!(" | pos={} anchor={anchor}", rel.lexeme()));
                }
            }
            Directive::Editing { source, target } => {
                out.push_str(&format!("edit: {source} -> {target}"));
            }
            Directive::Erasing { target } => out.push_str(&format!("erase: {target}")),
        }
        out.push('\n');
    }
    out
}

pub fn load_script(path: impl AsRef<Path>) -> Result<DirectiveScript, DirectiveError> {
    parse_script(&std::fs::read_to_string(path)?)
}

pub fn save_script(script: &DirectiveScript, path: impl AsRef<Path>) -> Result<(), DirectiveError> {
    Ok(std::fs::write(path, render_script(script))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directive::parse_directive;

    #[test]
    fn parses_each_op() {
        let s = parse_script(
            "# demo\n\
             add: cat | pos=left of anchor=sofa\n\
             add: cat and? no\n",
        );
        assert!(s.is_err());

        let s = parse_script(
            "# demo\n\
             add: red cat | rel=playing with partner=dog | pos=right of anchor=yard\n\
             edit: cat -> rabbit\n\
             erase: rabbit\n",
        )
        .unwrap();
        assert_eq!(s.len(), 3);
        match &s.directives()[0] {
            Directive::Synthesis { subject, relation, position } => {
                assert_eq!(subject.render(), "red cat");
                assert_eq!(relation.as_ref().unwrap().0.lexeme(), "playing with");
                assert_eq!(position.as_ref().unwrap().1.name(), "yard");
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            s.directives()[1],
            Directive::Editing {
                source: Entity::new("cat", vec![]),
                target: Entity::new("rabbit", vec![]),
            }
        );
    }

    #[test]
    fn roundtrip_identity() {
        let text = "add: cat and dog play together — no such grammar";
        assert!(parse_script(text).is_err());

        let script = DirectiveScript::new(
            vec![
                parse_directive("a cat and a dog play together on the right side of the yard")
                    .unwrap(),
                parse_directive("a bird above the tree").unwrap(),
                parse_directive("change the bird to a plane").unwrap(),
                parse_directive("delete the plane").unwrap(),
            ],
            None,
        )
        .unwrap();
        let rendered = render_script(&script);
        let loaded = parse_script(&rendered).unwrap();
        assert_eq!(loaded, script);
        assert_eq!(render_script(&loaded), rendered);
    }

    #[test]
    fn save_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.txt");
        let script = DirectiveScript::new(
            vec![parse_directive("add a cat next to the sofa").unwrap()],
            None,
        )
        .unwrap();
        save_script(&script, &path).unwrap();
        assert_eq!(load_script(&path).unwrap(), script);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse_script("add: cat\nbogus line\n") {
            Err(DirectiveError::ScriptParse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_script("") {
            Err(DirectiveError::ScriptParse { line: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_script("edit: cat -> cat\n") {
            Err(DirectiveError::ScriptParse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn conjunct_roundtrip_in_script() {
        let script = DirectiveScript::new(
            vec![parse_directive("a cat and a dog play together").unwrap()],
            None,
        )
        .unwrap();
        let rendered = render_script(&script);
        assert!(rendered.contains("rel=play together partner=dog"));
        assert_eq!(parse_script(&rendered).unwrap(), script);
    }
}
