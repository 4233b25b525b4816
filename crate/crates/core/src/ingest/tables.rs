//! Grid heuristic for spotting data tables in console output and message
//! text.
//!
//! A table is a run of at least two consecutive non-blank lines that share a
//! column separator pattern: pipe-delimited rows with the same number of
//! pipes, tab-delimited rows with the same number of tabs, or rows split by
//! runs of two or more spaces into the same number of fields (a header may
//! have one field fewer, as when an index column is unnamed). Each row needs
//! at least two fields.

use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectedTable {
    pub rows: Vec<Vec<String>>,
}

impl DetectedTable {
    /// Hash over the trimmed cell contents, independent of how the grid was
    /// laid out.
    pub fn dedup_key(&self) -> String {
        table_key(&self.rows)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        rows_to_csv(&self.rows)
    }
}

pub fn table_key(rows: &[Vec<String>]) -> String {
    let mut hasher = Sha256::new();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                hasher.update(b"\x1f");
            }
            hasher.update(cell.trim().as_bytes());
        }
        hasher.update(b"\x1e");
    }
    format!("table:{}", hex::encode(hasher.finalize()))
}

pub fn rows_to_csv(rows: &[Vec<String>]) -> Vec<u8> {
    let mut writer = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    for row in rows {
        writer.write_record(row).expect("in-memory write");
    }
    writer.into_inner().expect("in-memory flush")
}

/// Parses a produced tabular file (CSV or TSV) into rows.
pub fn parse_delimited(bytes: &[u8], delimiter: u8) -> Option<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .from_reader(bytes);
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.ok()?;
        rows.push(record.iter().map(|c| c.trim().to_string()).collect());
    }
    Some(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pattern {
    Pipe(usize),
    Tab(usize),
    Spaced(usize),
}

fn pipe_cells(line: &str) -> Option<Vec<String>> {
    let t = line.trim();
    if t.matches('|').count() < 1 {
        return None;
    }
    let inner = t.strip_prefix('|').unwrap_or(t);
    let inner = inner.strip_suffix('|').unwrap_or(inner);
    let cells: Vec<String> = inner.split('|').map(|c| c.trim().to_string()).collect();
    (cells.len() >= 2).then_some(cells)
}

fn is_pipe_rule(line: &str) -> bool {
    let t = line.trim();
    t.contains('-') && t.chars().all(|c| matches!(c, '|' | '-' | ':' | ' '))
}

fn spaced_cells(line: &str) -> Vec<String> {
    let mut cells = Vec::new();
    let mut current = String::new();
    let mut spaces = 0;
    for c in line.trim().chars() {
        if c == ' ' {
            spaces += 1;
            continue;
        }
        if spaces >= 2 && !current.is_empty() {
            cells.push(std::mem::take(&mut current));
        } else if spaces == 1 {
            current.push(' ');
        }
        spaces = 0;
        current.push(c);
    }
    if !current.is_empty() {
        cells.push(current);
    }
    cells
}

fn classify(line: &str) -> Option<(Pattern, Vec<String>)> {
    if line.contains('|') {
        if let Some(cells) = pipe_cells(line) {
            return Some((Pattern::Pipe(cells.len()), cells));
        }
    }
    if line.contains('\t') {
        let cells: Vec<String> = line.split('\t').map(|c| c.trim().to_string()).collect();
        if cells.len() >= 2 {
            return Some((Pattern::Tab(cells.len()), cells));
        }
    }
    let cells = spaced_cells(line);
    (cells.len() >= 2).then_some((Pattern::Spaced(cells.len()), cells))
}

fn compatible(run: Pattern, next: Pattern, run_len: usize) -> bool {
    match (run, next) {
        (Pattern::Pipe(a), Pattern::Pipe(b)) | (Pattern::Tab(a), Pattern::Tab(b)) => a == b,
        // a header row one field short of the body (unnamed index column)
        (Pattern::Spaced(a), Pattern::Spaced(b)) => a == b || (run_len == 1 && b == a + 1),
        _ => false,
    }
}

/// Finds every grid-shaped run in `text`.
pub fn detect_tables(text: &str) -> Vec<DetectedTable> {
    detect_runs(text).into_iter().map(|(_, rows)| DetectedTable { rows }).collect()
}

/// One flag per line of `text`, set for lines that belong to a detected
/// table (including markdown rule lines).
pub fn table_line_mask(text: &str) -> Vec<bool> {
    let mut mask = vec![false; text.lines().count()];
    for (lines, _) in detect_runs(text) {
        for i in lines {
            mask[i] = true;
        }
    }
    mask
}

type Run = (Vec<usize>, Vec<Vec<String>>);

fn detect_runs(text: &str) -> Vec<Run> {
    let mut found: Vec<Run> = Vec::new();
    let mut lines: Vec<usize> = Vec::new();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut pattern: Option<Pattern> = None;
    let flush = |lines: &mut Vec<usize>, rows: &mut Vec<Vec<String>>, found: &mut Vec<Run>| {
        if rows.len() >= 2 {
            found.push((std::mem::take(lines), std::mem::take(rows)));
        } else {
            lines.clear();
            rows.clear();
        }
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            flush(&mut lines, &mut rows, &mut found);
            pattern = None;
            continue;
        }
        if matches!(pattern, Some(Pattern::Pipe(_))) && is_pipe_rule(line) {
            lines.push(i);
            continue;
        }
        match classify(line) {
            Some((p, cells)) => {
                let continues = pattern.is_some_and(|current| compatible(current, p, rows.len()));
                if !continues {
                    flush(&mut lines, &mut rows, &mut found);
                }
                lines.push(i);
                rows.push(cells);
                pattern = Some(p);
            }
            None => {
                flush(&mut lines, &mut rows, &mut found);
                pattern = None;
            }
        }
    }
    flush(&mut lines, &mut rows, &mut found);
    found
}
