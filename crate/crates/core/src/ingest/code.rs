use serde::{Deserialize, Serialize};

use crate::markdown::scan_fences;
use crate::model::{Role, Turn};

/// Fence languages treated as executable cells.
const EXECUTABLE_LANGUAGES: &[&str] = &["python", "py", "python3"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBlock {
    pub turn_index: usize,
    pub ordinal: usize,
    pub source: String,
    pub console_output: Option<String>,
}

impl CodeBlock {
    /// Source with trailing whitespace stripped from every line and from the
    /// end. This is what dedup hashes.
    pub fn normalized_source(&self) -> String {
        normalize_source(&self.source)
    }
}

pub fn normalize_source(source: &str) -> String {
    source
        .lines()
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
        .trim_end()
        .to_string()
}

/// Code cells of a turn, in order, each paired with the tool output that
/// immediately follows the assistant message holding it. Unclosed fences are
/// skipped with a warning.
pub fn extract_code_blocks(turn: &Turn) -> Vec<CodeBlock> {
    let mut blocks: Vec<CodeBlock> = Vec::new();
    let mut awaiting_output = false;
    for msg in turn.messages() {
        match msg.role {
            Role::Assistant => {
                let scan = scan_fences(&msg.content);
                if scan.unclosed > 0 {
                    log::warn!(
                        "turn {}: skipped {} unclosed code fence(s) in message {}",
                        turn.turn_index,
                        scan.unclosed,
                        msg.message_id
                    );
                }
                let before = blocks.len();
                for block in scan.blocks {
                    if !EXECUTABLE_LANGUAGES.contains(&block.language.as_str()) {
                        continue;
                    }
                    if block.body.trim().is_empty() {
                        continue;
                    }
                    blocks.push(CodeBlock {
                        turn_index: turn.turn_index,
                        ordinal: blocks.len(),
                        source: block.body,
                        console_output: None,
                    });
                }
                awaiting_output = blocks.len() > before;
            }
            Role::Tool => {
                if awaiting_output {
                    if let Some(last) = blocks.last_mut() {
                        let text = console_text(&msg.content);
                        if !text.is_empty() {
                            last.console_output = Some(match last.console_output.take() {
                                Some(prev) => format!("{prev}\n{text}"),
                                None => text,
                            });
                        }
                    }
                }
            }
            Role::User => awaiting_output = false,
        }
    }
    blocks
}

/// Tool message text minus image embeds.
fn console_text(content: &str) -> String {
    content
        .lines()
        .filter(|l| !l.trim_start().starts_with("![image]("))
        .collect::<Vec<_>>()
        .join("\n")
        .trim_end()
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{assemble_turns, parse_export, ExportBuilder};

    fn first_turn(builder: ExportBuilder) -> Turn {
        let t = parse_export(&builder.to_bytes()).unwrap();
        assemble_turns(t.messages).turns.remove(0)
    }

    #[test]
    fn no_code_no_blocks() {
        let turn = first_turn(ExportBuilder::new("x").user("hi").assistant("hello"));
        assert!(extract_code_blocks(&turn).is_empty());
    }

    #[test]
    fn two_cells_one_output() {
        let turn = first_turn(
            ExportBuilder::new("x")
                .user("describe")
                .code("import pandas as pd")
                .code("df.describe()")
                .tool_output("count  4042"),
        );
        let blocks = extract_code_blocks(&turn);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].console_output, None);
        assert_eq!(blocks[1].console_output.as_deref(), Some("count  4042"));
        assert_eq!((blocks[0].ordinal, blocks[1].ordinal), (0, 1));
    }

    #[test]
    fn fenced_code_in_prose_counts_but_other_languages_do_not() {
        let turn = first_turn(ExportBuilder::new("x").user("show").assistant(
            "Here:\n```python\nprint('a')\n```\nand shell:\n```bash\nls\n```\nand broken:\n```python\nx = 1",
        ));
        let blocks = extract_code_blocks(&turn);
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].source, "print('a')");
    }

    #[test]
    fn normalization_strips_trailing_whitespace_only() {
        assert_eq!(normalize_source("a = 1   \nb = 2\n\n"), "a = 1\nb = 2");
        assert_ne!(normalize_source("  a"), normalize_source("a"));
    }
}
