//! Turning code cells, execution output and static embeds into registry
//! entries with payload files.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use super::registry::{Artifact, ArtifactKind, ArtifactRegistry};
use super::runner::{ExecutionResult, FileKind};
use crate::ingest::code::{extract_code_blocks, CodeBlock};
use crate::ingest::tables::{detect_tables, parse_delimited, rows_to_csv, table_key};
use crate::markdown::{extract_links, scan_fences};
use crate::model::{Conversation, Role, Turn};

pub const ARTIFACT_DIR: &str = "artifacts";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registration {
    pub registry: ArtifactRegistry,
    /// Payload bytes keyed by session-relative path.
    pub files: BTreeMap<String, Vec<u8>>,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn code_key(normalized_source: &str) -> String {
    format!("code:{}", sha_hex(normalized_source.as_bytes()))
}

pub fn viz_key(bytes: &[u8]) -> String {
    format!("viz:{}", sha_hex(bytes))
}

fn title_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?:\.title|set_title|suptitle|plt\.title)\(\s*[fr]?(?:"([^"\n]*)"|'([^'\n]*)')"#)
            .expect("valid regex")
    })
}

/// Caption for a figure made by `source`: every literal title in the code as
/// "Title - X", comma separated. Empty when the code sets no title.
pub fn viz_label(source: &str) -> String {
    let titles: Vec<String> = title_regex()
        .captures_iter(source)
        .filter_map(|c| c.get(1).or_else(|| c.get(2)))
        .map(|m| m.as_str().trim())
        .filter(|t| !t.is_empty() && !t.contains('{'))
        .map(|t| format!("Title - {t}"))
        .collect();
    titles.join(", ")
}

fn extension(name: &str) -> String {
    std::path::Path::new(name)
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_else(|| "bin".into())
}

fn image_media_type(ext: &str) -> &'static str {
    match ext {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "svg" => "image/svg+xml",
        "gif" => "image/gif",
        "webp" => "image/webp",
        _ => "application/octet-stream",
    }
}

struct Builder {
    reg: Registration,
}

impl Builder {
    #[allow(clippy::too_many_arguments)]
    fn add(&mut self, kind: ArtifactKind, key: String, turn: usize, ext: &str, media: &str, label: String, payload: Vec<u8>) {
        let mut fresh_path = None;
        let (_, fresh) = self.reg.registry.register(kind, &key, turn, |id| {
            let path = format!("{ARTIFACT_DIR}/{id}.{ext}");
            fresh_path = Some(path.clone());
            Artifact {
                artifact_id: id,
                kind,
                turn_index: turn,
                turn_refs: vec![turn],
                path,
                media_type: media.to_string(),
                label,
                dedup_key: key.clone(),
                thumbnail: None,
            }
        });
        if fresh {
            self.reg.files.insert(fresh_path.expect("set for fresh"), payload);
        }
    }

    fn table(&mut self, turn: usize, rows: Vec<Vec<String>>) {
        let key = table_key(&rows);
        let csv = rows_to_csv(&rows);
        self.add(ArtifactKind::DataTable, key, turn, "csv", "text/csv", String::new(), csv);
    }
}

/// Assistant prose of a turn with fenced blocks removed.
fn assistant_prose(turn: &Turn) -> Vec<String> {
    turn.responses
        .iter()
        .filter(|m| m.role == Role::Assistant)
        .map(|m| scan_fences(&m.content).prose)
        .collect()
}

fn static_images(turn: &Turn) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for msg in &turn.responses {
        for link in extract_links(&msg.content) {
            if link.is_image && !out.contains(&link.target) {
                out.push(link.target);
            }
        }
    }
    out
}

/// Registers every artifact of the conversation.
///
/// Per turn, in order: one code artifact per code block; data tables from
/// produced tabular files, from grids in console output (recorded or
/// re-executed) and from grids in assistant prose; visualizations from
/// produced figures. A turn whose cells produced no figure falls back to the
/// image embeds of the export, stored as pointer text. Identical content
/// collapses onto the first artifact via its dedup key. The result depends
/// only on the inputs, so registering twice gives the same registry.
pub fn register_artifacts(conversation: &Conversation, results: &[ExecutionResult]) -> Registration {
    let mut b = Builder {
        reg: Registration::default(),
    };
    let mut by_turn: BTreeMap<usize, Vec<&ExecutionResult>> = BTreeMap::new();
    for r in results {
        by_turn.entry(r.turn_index).or_default().push(r);
    }

    for turn in &conversation.turns {
        let t = turn.turn_index;
        let blocks: Vec<CodeBlock> = extract_code_blocks(turn);
        let turn_results = by_turn.get(&t).map(Vec::as_slice).unwrap_or(&[]);

        for block in &blocks {
            let normalized = block.normalized_source();
            b.add(
                ArtifactKind::Code,
                code_key(&normalized),
                t,
                "py",
                "text/x-python",
                String::new(),
                normalized.into_bytes(),
            );
        }

        for r in turn_results {
            for file in r.produced_files.iter().filter(|f| f.kind == FileKind::Table) {
                let delim = if extension(&file.name) == "tsv" { b'\t' } else { b',' };
                match parse_delimited(&file.bytes, delim) {
                    Some(rows) if !rows.is_empty() => b.table(t, rows),
                    _ => log::warn!("turn {t}: produced file {} is not readable as a table", file.name),
                }
            }
        }
        let mut console: Vec<&str> = blocks.iter().filter_map(|c| c.console_output.as_deref()).collect();
        console.extend(turn_results.iter().map(|r| r.stdout.as_str()));
        for text in console {
            for table in detect_tables(text) {
                b.table(t, table.rows);
            }
        }
        for prose in assistant_prose(turn) {
            for table in detect_tables(&prose) {
                b.table(t, table.rows);
            }
        }

        let mut figures = 0;
        for r in turn_results {
            let label = blocks
                .iter()
                .zip(turn_results.iter())
                .find(|(_, res)| res.step_index == r.step_index)
                .map(|(blk, _)| viz_label(&blk.source))
                .unwrap_or_default();
            for file in r.produced_files.iter().filter(|f| f.kind == FileKind::Figure) {
                let ext = extension(&file.name);
                b.add(
                    ArtifactKind::Visualization,
                    viz_key(&file.bytes),
                    t,
                    &ext,
                    image_media_type(&ext),
                    label.clone(),
                    file.bytes.clone(),
                );
                figures += 1;
            }
        }
        if figures == 0 {
            let label = blocks.iter().map(|blk| viz_label(&blk.source)).find(|l| !l.is_empty()).unwrap_or_default();
            for pointer in static_images(turn) {
                b.add(
                    ArtifactKind::Visualization,
                    viz_key(pointer.as_bytes()),
                    t,
                    "uri",
                    "text/uri-list",
                    label.clone(),
                    format!("{pointer}\n").into_bytes(),
                );
            }
        }
    }
    b.reg
}
