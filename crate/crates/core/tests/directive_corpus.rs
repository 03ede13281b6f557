//! Round-trip coverage for the clause grammar over a fixed corpus: every
//! line must parse, render back to text, and reparse to the same value.

use anyhow::{Context, Result};
use latentstage::directive::{
    decompose, parse_directive, render_directive, Directive, DirectiveError,
};

fn corpus_lines() -> Result<Vec<String>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/parser_corpus.txt");
    let text = std::fs::read_to_string(path).context("reading corpus")?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

#[test]
fn corpus_has_expected_size() -> Result<()> {
    assert_eq!(corpus_lines()?.len(), 50);
    Ok(())
}

#[test]
fn every_corpus_line_parses_and_roundtrips() -> Result<()> {
    for line in corpus_lines()? {
        let parsed = parse_directive(&line).with_context(|| format!("parsing {line:?}"))?;
        let rendered = render_directive(&parsed);
        let reparsed = parse_directive(&rendered)
            .with_context(|| format!("reparsing {rendered:?} from {line:?}"))?;
        assert_eq!(parsed, reparsed, "{line:?} -> {rendered:?} changed meaning");
    }
    Ok(())
}

#[test]
fn corpus_covers_all_three_modes() -> Result<()> {
    let mut modes = std::collections::BTreeSet::new();
    for line in corpus_lines()? {
        modes.insert(parse_directive(&line).unwrap().mode_name().to_string());
    }
    assert_eq!(
        modes.into_iter().collect::<Vec<_>>(),
        vec!["editing", "erasing", "synthesis"]
    );
    Ok(())
}

#[test]
fn corpus_decomposes_as_single_clause_scenes() -> Result<()> {
    for line in corpus_lines()? {
        let script = decompose(&line).with_context(|| format!("decomposing {line:?}"))?;
        assert_eq!(script.len(), 1, "{line:?} split into extra clauses");
    }
    Ok(())
}

#[test]
fn nested_relation_chain_is_rejected_not_misread() {
    // Two relation phrases competing for one subject slot cannot be carved
    // into clauses, so the whole text must be refused rather than guessed at.
    let text = "a horse under a car and between a cat and a dog";
    match decompose(text) {
        Err(DirectiveError::Undecomposable { text: reported }) => assert_eq!(reported, text),
        other => panic!("expected a decomposition refusal, got {other:?}"),
    }
}

#[test]
fn multi_clause_scene_text_splits_in_order() -> Result<()> {
    let script = decompose("add a cat. then add a dog right of the cat; delete the cat")?;
    let modes: Vec<&str> = script.directives().iter().map(Directive::mode_name).collect();
    assert_eq!(modes, vec!["synthesis", "synthesis", "erasing"]);
    Ok(())
}
