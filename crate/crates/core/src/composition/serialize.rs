//! Composition → markdown bullets.

use super::{Composition, CompositionBlock};
use crate::artifacts::{Artifact, ArtifactKind};
use crate::markdown::{escape_label, single_line};
use crate::state::{Element, ResolveError, StructuredState};

pub const INDENT: &str = "  ";
pub const BULLET: &str = "* ";

/// Link targets may not contain whitespace or parentheses.
pub fn link_target(path: &str) -> String {
    let mut out = String::with_capacity(path.len());
    for c in path.chars() {
        match c {
            ' ' => out.push_str("%20"),
            '(' => out.push_str("%28"),
            ')' => out.push_str("%29"),
            c if c.is_whitespace() => out.push_str(&format!("%{:02X}", c as u32 & 0xff)),
            c => out.push(c),
        }
    }
    out
}

/// Caption of an artifact: its own label, or the title of its turn.
pub fn artifact_caption(state: &StructuredState, artifact: &Artifact) -> String {
    if artifact.label.trim().is_empty() {
        state.turn_title(artifact.turn_index)
    } else {
        artifact.label.clone()
    }
}

/// Note text that would read as another prefix gets a leading backslash.
fn escape_note(text: &str) -> String {
    if text.starts_with(['[', '!', '\\']) {
        format!("\\{text}")
    } else {
        text.to_string()
    }
}

/// The bullet content (without indent and marker) for one block.
pub fn block_line(state: &StructuredState, block: &CompositionBlock) -> Result<String, ResolveError> {
    let text = |own: &str| single_line(block.override_text.as_deref().unwrap_or(own));
    Ok(match state.resolve(&block.element)? {
        Element::Turn(turn) => {
            format!("[Chat Turn {}] {}", turn.turn_index, text(&state.turn_title(turn.turn_index)))
        }
        Element::Thread(node) => format!("[Thread] {}", text(&node.title)),
        Element::Insight(_, insight) => format!("[Insight] {}", text(&insight.statement)),
        Element::Artifact(artifact) => {
            let caption = escape_label(&text(&artifact_caption(state, artifact)));
            let turn = artifact.turn_index + 1;
            let target = link_target(&artifact.path);
            match artifact.kind {
                ArtifactKind::DataTable => format!("[Table for {caption} | Turn {turn}]({target})"),
                ArtifactKind::Code => format!("[Code for {caption} | Turn {turn}]({target})"),
                ArtifactKind::Visualization => format!("![{caption}... Turn {turn}]({target})"),
            }
        }
        Element::Note(own) => escape_note(&text(own)),
    })
}

fn write_block(
    state: &StructuredState,
    block: &CompositionBlock,
    depth: usize,
    lines: &mut Vec<String>,
) -> Result<(), ResolveError> {
    lines.push(format!("{}{BULLET}{}", INDENT.repeat(depth), block_line(state, block)?));
    for child in &block.children {
        write_block(state, child, depth + 1, lines)?;
    }
    Ok(())
}

/// One bullet per block, children indented two spaces per level. No
/// trailing newline; an empty composition gives an empty string.
pub fn serialize_composition(composition: &Composition, state: &StructuredState) -> Result<String, ResolveError> {
    let mut lines = Vec::new();
    for block in &composition.blocks {
        write_block(state, block, 0, &mut lines)?;
    }
    Ok(lines.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_lose_spaces_and_parens() {
        assert_eq!(link_target("a b(1).png"), "a%20b%281%29.png");
        assert_eq!(link_target("artifacts/viz-0.png"), "artifacts/viz-0.png");
    }

    #[test]
    fn notes_that_look_like_prefixes_are_escaped() {
        assert_eq!(escape_note("[Insight] fake"), "\\[Insight] fake");
        assert_eq!(escape_note("!x"), "\\!x");
        assert_eq!(escape_note("plain"), "plain");
    }
}
