//! Small markdown scanners: fenced code blocks and inline links/images.
//!
//! These are deliberately narrow. They understand exactly the constructs the
//! rest of the crate produces or consumes and nothing else.

/// A fenced block found in a markdown text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock {
    /// First word of the info string, lowercased; empty when absent.
    pub language: String,
    pub body: String,
}

/// Result of scanning a text for fences.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FenceScan {
    pub blocks: Vec<FencedBlock>,
    /// Text outside any well-formed fence, line structure preserved.
    pub prose: String,
    /// Opening fences that were never closed.
    pub unclosed: usize,
}

fn fence_opener(line: &str) -> Option<(char, usize, &str)> {
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    let rest = &line[indent..];
    let ch = rest.chars().next()?;
    if ch != '`' && ch != '~' {
        return None;
    }
    let run = rest.chars().take_while(|c| *c == ch).count();
    if run < 3 {
        return None;
    }
    let info = rest[run..].trim();
    if ch == '`' && info.contains('`') {
        return None;
    }
    Some((ch, run, info))
}

fn closes(line: &str, ch: char, len: usize) -> bool {
    let trimmed = line.trim();
    let run = trimmed.chars().take_while(|c| *c == ch).count();
    run >= len && run == trimmed.chars().count()
}

/// Splits `text` into fenced blocks and the remaining prose. An opening fence
/// without a matching close is counted in `unclosed` and its lines are kept
/// as prose.
pub fn scan_fences(text: &str) -> FenceScan {
    let lines: Vec<&str> = text.lines().collect();
    let mut scan = FenceScan::default();
    let mut prose_lines: Vec<&str> = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let Some((ch, len, info)) = fence_opener(lines[i]) else {
            prose_lines.push(lines[i]);
            i += 1;
            continue;
        };
        let close = (i + 1..lines.len()).find(|&j| closes(lines[j], ch, len));
        match close {
            Some(j) => {
                scan.blocks.push(FencedBlock {
                    language: info
                        .split_whitespace()
                        .next()
                        .unwrap_or("")
                        .to_ascii_lowercase(),
                    body: lines[i + 1..j].join("\n"),
                });
                i = j + 1;
            }
            None => {
                scan.unclosed += 1;
                prose_lines.push(lines[i]);
                i += 1;
            }
        }
    }
    scan.prose = prose_lines.join("\n");
    scan
}

/// Wraps `body` in a backtick fence long enough not to collide with any
/// backtick run inside it.
pub fn fence(language: &str, body: &str) -> String {
    let longest = body
        .lines()
        .map(|l| l.trim_start().chars().take_while(|c| *c == '`').count())
        .max()
        .unwrap_or(0);
    let ticks = "`".repeat(longest.max(2) + 1);
    format!("{ticks}{language}\n{body}\n{ticks}")
}

/// An inline link `[text](target)` or image `![text](target)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub is_image: bool,
    /// Raw link text, escapes preserved.
    pub text: String,
    pub target: String,
}

/// Extracts inline links and images. Link text may contain balanced or
/// backslash-escaped brackets; targets may not contain whitespace.
pub fn extract_links(text: &str) -> Vec<Link> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '\\' {
            i += 2;
            continue;
        }
        if chars[i] != '[' {
            i += 1;
            continue;
        }
        let is_image = i > 0 && chars[i - 1] == '!' && !(i > 1 && chars[i - 2] == '\\');
        match parse_link_at(&chars, i) {
            Some((label, target, end)) => {
                out.push(Link {
                    is_image,
                    text: label,
                    target,
                });
                i = end;
            }
            None => i += 1,
        }
    }
    out
}

fn parse_link_at(chars: &[char], open: usize) -> Option<(String, String, usize)> {
    let mut depth = 0usize;
    let mut j = open;
    let close = loop {
        match chars.get(j)? {
            '\\' => j += 1,
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    break j;
                }
            }
            '\n' => return None,
            _ => {}
        }
        j += 1;
    };
    if chars.get(close + 1) != Some(&'(') {
        return None;
    }
    let start = close + 2;
    let mut k = start;
    while k < chars.len() && chars[k] != ')' {
        if chars[k].is_whitespace() {
            return None;
        }
        k += 1;
    }
    if k >= chars.len() || k == start {
        return None;
    }
    let label: String = chars[open + 1..close].iter().collect();
    let target: String = chars[start..k].iter().collect();
    Some((label, target, k + 1))
}

/// Canonical form of a link target for set comparisons: surrounding angle
/// brackets, a leading `./` or `/`, and a `sandbox:` scheme are ignored.
pub fn normalize_target(target: &str) -> String {
    let mut t = target.trim();
    t = t.strip_prefix('<').unwrap_or(t);
    t = t.strip_suffix('>').unwrap_or(t);
    t = t.strip_prefix("sandbox:").unwrap_or(t);
    loop {
        if let Some(rest) = t.strip_prefix("./") {
            t = rest;
        } else if let Some(rest) = t.strip_prefix('/') {
            t = rest;
        } else {
            break;
        }
    }
    t.to_string()
}

/// Backslash-escapes brackets and backslashes so `text` can sit inside a
/// link label.
pub fn escape_label(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if matches!(c, '[' | ']' | '\\') {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

pub fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(next) = chars.next() {
                out.push(next);
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// Collapses all whitespace runs (including newlines) to single spaces.
pub fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fences_are_split_from_prose() {
        let text = "Loading data.\n```python\nimport pandas as pd\ndf = pd.read_csv('x.csv')\n```\nDone.";
        let scan = scan_fences(text);
        assert_eq!(scan.blocks.len(), 1);
        assert_eq!(scan.blocks[0].language, "python");
        assert_eq!(scan.blocks[0].body, "import pandas as pd\ndf = pd.read_csv('x.csv')");
        assert_eq!(scan.prose, "Loading data.\nDone.");
        assert_eq!(scan.unclosed, 0);
    }

    #[test]
    fn unclosed_fence_is_counted_and_kept_as_prose() {
        let scan = scan_fences("a\n```python\nprint(1)\n");
        assert!(scan.blocks.is_empty());
        assert_eq!(scan.unclosed, 1);
        assert!(scan.prose.contains("print(1)"));
    }

    #[test]
    fn longer_fence_encloses_shorter() {
        let body = "```\ninner\n```";
        let fenced = fence("md", body);
        let scan = scan_fences(&fenced);
        assert_eq!(scan.blocks.len(), 1);
        assert_eq!(scan.blocks[0].body, body);
    }

    #[test]
    fn links_with_nested_brackets() {
        let text = "See ![[Coffee Preferences Table]](table.csv) and [Code for x | Turn 11](code_snippet.py).";
        let links = extract_links(text);
        assert_eq!(links.len(), 2);
        assert!(links[0].is_image);
        assert_eq!(links[0].text, "[Coffee Preferences Table]");
        assert_eq!(links[0].target, "table.csv");
        assert!(!links[1].is_image);
        assert_eq!(links[1].target, "code_snippet.py");
    }

    #[test]
    fn escaped_brackets_stay_inside_label() {
        let label = escape_label("a [weird] title");
        let text = format!("[{label}](t.csv)");
        let links = extract_links(&text);
        assert_eq!(links.len(), 1);
        assert_eq!(unescape(&links[0].text), "a [weird] title");
        assert!(extract_links("\\[not a link](x)").is_empty());
    }

    #[test]
    fn targets_normalize() {
        assert_eq!(normalize_target("/viz_1.png"), "viz_1.png");
        assert_eq!(normalize_target("./a/b.csv"), "a/b.csv");
        assert_eq!(normalize_target("sandbox:/mnt/data/x.png"), "mnt/data/x.png");
    }
}
