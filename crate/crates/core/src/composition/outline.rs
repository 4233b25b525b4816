//! Structural re-parse of serialized compositions.

use serde::{Deserialize, Serialize};

use super::serialize::{BULLET, INDENT};
use crate::markdown::{extract_links, unescape};
use crate::model::ElementKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlineKind {
    Turn,
    Thread,
    Insight,
    Table,
    Code,
    Visualization,
    Note,
}

impl OutlineKind {
    pub fn element_kind(self) -> ElementKind {
        match self {
            OutlineKind::Turn => ElementKind::Turn,
            OutlineKind::Thread => ElementKind::Thread,
            OutlineKind::Insight => ElementKind::Insight,
            OutlineKind::Table | OutlineKind::Code | OutlineKind::Visualization => ElementKind::Artifact,
            OutlineKind::Note => ElementKind::Note,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlineItem {
    pub kind: OutlineKind,
    /// Turn index for turns; 1-based turn number shown on artifacts.
    pub turn: Option<usize>,
    pub text: String,
    pub target: Option<String>,
    pub children: Vec<OutlineItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OutlineError {
    #[error("line {0}: not a bullet")]
    NotABullet(usize),
    #[error("line {0}: indentation jumps more than one level")]
    BadIndent(usize),
}

/// `"... | Turn 6"` → ("...", 6).
fn split_turn_suffix<'a>(label: &'a str, sep: &str) -> Option<(&'a str, usize)> {
    let (head, n) = label.rsplit_once(sep)?;
    Some((head, n.trim().parse().ok()?))
}

fn whole_link(content: &str, image: bool) -> Option<(String, String)> {
    let links = extract_links(content);
    let link = links.first()?;
    let len = if image { 1 } else { 0 } + link.text.len() + link.target.len() + 4;
    (links.len() == 1 && link.is_image == image && len == content.len()).then(|| (link.text.clone(), link.target.clone()))
}

fn classify(content: &str) -> OutlineItem {
    let item = |kind, turn, text: &str, target: Option<String>| OutlineItem {
        kind,
        turn,
        text: text.to_string(),
        target,
        children: Vec::new(),
    };
    if let Some(rest) = content.strip_prefix("[Chat Turn ") {
        if let Some((n, title)) = rest.split_once("] ").or_else(|| rest.strip_suffix(']').map(|n| (n, ""))) {
            if let Ok(n) = n.parse() {
                return item(OutlineKind::Turn, Some(n), title, None);
            }
        }
    }
    if let Some(rest) = content.strip_prefix("[Thread] ") {
        return item(OutlineKind::Thread, None, rest, None);
    }
    if let Some(rest) = content.strip_prefix("[Insight] ") {
        return item(OutlineKind::Insight, None, rest, None);
    }
    for (prefix, kind) in [("[Table for ", OutlineKind::Table), ("[Code for ", OutlineKind::Code)] {
        if content.starts_with(prefix) {
            if let Some((label, target)) = whole_link(content, false) {
                let label = unescape(&label[prefix.len() - 1..]);
                if let Some((caption, turn)) = split_turn_suffix(&label, " | Turn ") {
                    return item(kind, Some(turn), caption, Some(target));
                }
            }
        }
    }
    if content.starts_with("![") {
        if let Some((label, target)) = whole_link(content, true) {
            let label = unescape(&label);
            if let Some((caption, turn)) = split_turn_suffix(&label, "... Turn ") {
                return item(OutlineKind::Visualization, Some(turn), caption, Some(target));
            }
        }
    }
    let text = content.strip_prefix('\\').unwrap_or(content);
    item(OutlineKind::Note, None, text, None)
}

/// Reads bullets back into a tree: depth from indentation, kind from the
/// prefix, targets from the link. Blank lines are ignored.
pub fn parse_outline(markdown: &str) -> Result<Vec<OutlineItem>, OutlineError> {
    let mut roots: Vec<OutlineItem> = Vec::new();
    let mut open_depth = 0usize;
    for (lineno, line) in markdown.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let stripped = line.trim_start_matches(' ');
        let spaces = line.len() - stripped.len();
        if spaces % INDENT.len() != 0 {
            return Err(OutlineError::BadIndent(lineno + 1));
        }
        let depth = spaces / INDENT.len();
        let content = stripped
            .strip_prefix(BULLET)
            .ok_or(OutlineError::NotABullet(lineno + 1))?;
        if depth > open_depth {
            return Err(OutlineError::BadIndent(lineno + 1));
        }
        let mut list = &mut roots;
        for _ in 0..depth {
            list = &mut list.last_mut().expect("depth checked").children;
        }
        list.push(classify(content));
        open_depth = depth + 1;
    }
    Ok(roots)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coffee_lines_reparse() {
        let md = "* [Chat Turn 5] Coffee shop preferences\n  * [Insight] Specialty Coffee Shops lead.\n  * [Table for Coffee shop preferences | Turn 6](table.csv)\n* ![Title - A, Title - B... Turn 8](viz_0.png)\n* plain note";
        let items = parse_outline(md).unwrap();
        assert_eq!(items.len(), 3);
        assert_eq!(items[0].kind, OutlineKind::Turn);
        assert_eq!(items[0].turn, Some(5));
        assert_eq!(items[0].text, "Coffee shop preferences");
        assert_eq!(items[0].children[1].kind, OutlineKind::Table);
        assert_eq!(items[0].children[1].text, "Coffee shop preferences");
        assert_eq!(items[0].children[1].turn, Some(6));
        assert_eq!(items[0].children[1].target.as_deref(), Some("table.csv"));
        assert_eq!(items[1].kind, OutlineKind::Visualization);
        assert_eq!(items[1].text, "Title - A, Title - B");
        assert_eq!(items[2].kind, OutlineKind::Note);
    }

    #[test]
    fn escaped_note_stays_a_note() {
        let items = parse_outline("* \\[Insight] not really").unwrap();
        assert_eq!(items[0].kind, OutlineKind::Note);
        assert_eq!(items[0].text, "[Insight] not really");
    }

    #[test]
    fn indentation_errors() {
        assert_eq!(parse_outline("    * x"), Err(OutlineError::BadIndent(1)));
        assert_eq!(parse_outline("* a\n   * b"), Err(OutlineError::BadIndent(2)));
        assert_eq!(parse_outline("- a"), Err(OutlineError::NotABullet(1)));
    }
}
