//! Approximate tokenizer used for message length statistics.
//!
//! Text is split on whitespace; each chunk then yields one token per maximal
//! run of alphanumeric characters (plus `_`) and one token per remaining
//! punctuation character. Fenced code, table grids and image embeds are
//! removed before counting.

use crate::ingest::tables::table_line_mask;
use crate::markdown::scan_fences;

pub const TOKENIZER_VERSION: &str = "ws-punct-1";

pub fn count_tokens(text: &str) -> usize {
    let mut count = 0;
    for chunk in text.split_whitespace() {
        let mut in_word = false;
        for c in chunk.chars() {
            if c.is_alphanumeric() || c == '_' {
                if !in_word {
                    count += 1;
                    in_word = true;
                }
            } else {
                count += 1;
                in_word = false;
            }
        }
    }
    count
}

/// Message text with artifacts (code fences, table grids, image embeds)
/// removed.
pub fn strip_artifacts(content: &str) -> String {
    let prose = scan_fences(content).prose;
    let mask = table_line_mask(&prose);
    prose
        .lines()
        .zip(mask)
        .filter(|(line, in_table)| !in_table && !line.trim_start().starts_with("!["))
        .map(|(line, _)| line)
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn count_prose_tokens(content: &str) -> usize {
    count_tokens(&strip_artifacts(content))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_and_punctuation() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("Hello, world!"), 4);
        assert_eq!(count_tokens("don't"), 3);
        assert_eq!(count_tokens("25-34 years"), 4);
        assert_eq!(count_tokens("snake_case  word"), 2);
    }

    #[test]
    fn artifacts_are_excluded() {
        let content = "Here is the result.\n```python\nprint(df.head())\n```\n| a | b |\n|---|---|\n| 1 | 2 |\n![image](x.png)";
        assert_eq!(count_prose_tokens(content), count_tokens("Here is the result."));
    }
}
