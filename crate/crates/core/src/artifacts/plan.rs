//! Ordering code cells into an execution plan and pointing upload paths at
//! local dataset copies.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::code::extract_code_blocks;
use crate::ingest::export::UPLOAD_DIR;
use crate::model::Conversation;

/// Upload filename → local path.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetManifest {
    pub entries: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, path: impl Into<String>) {
        self.entries.insert(name.into(), path.into());
    }

    pub fn with(mut self, name: impl Into<String>, path: impl Into<String>) -> Self {
        self.insert(name, path);
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.entries.get(name).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads a JSON object of `name: path` pairs. Relative paths are taken
    /// relative to the manifest's directory.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut manifest: DatasetManifest = serde_json::from_slice(&bytes)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        if let Some(base) = path.parent() {
            for local in manifest.entries.values_mut() {
                if Path::new(local.as_str()).is_relative() {
                    *local = base.join(local.as_str()).to_string_lossy().into_owned();
                }
            }
        }
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionStep {
    pub step_index: usize,
    pub turn_index: usize,
    /// Position of the code block within its turn.
    pub ordinal: usize,
    pub source: String,
    pub remapped_source: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub steps: Vec<ExecutionStep>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("dataset {name:?} is read in turn {turn_index} but not provided")]
    MissingDataset { name: String, turn_index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Remapped {
    pub source: String,
    /// Upload-directory filenames with no manifest entry, in order of first
    /// appearance.
    pub unmapped: Vec<String>,
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '.')
}

/// True when `after` cannot continue a filename: end of text, or a
/// character that is not part of one (a dot only counts if more name
/// follows it).
fn ends_name(after: &str) -> bool {
    let mut chars = after.chars();
    match chars.next() {
        None => true,
        Some('.') => !chars.next().is_some_and(|c| c.is_alphanumeric()),
        Some(c) => !(c.is_alphanumeric() || c == '_' || c == '-'),
    }
}

/// Replaces every manifest filename, bare or under the upload directory
/// (optionally `sandbox:`-prefixed), by its local path. Bare names only match
/// at filename boundaries. Upload paths naming files outside the manifest
/// are left alone and reported.
pub fn remap_data_paths(source: &str, manifest: &DatasetManifest) -> Remapped {
    let mut names: Vec<&str> = manifest.entries.keys().map(String::as_str).collect();
    names.sort_by_key(|n| std::cmp::Reverse(n.len()));

    let mut out = String::with_capacity(source.len());
    let mut unmapped: Vec<String> = Vec::new();
    let mut i = 0;
    let mut prev: Option<char> = None;
    while i < source.len() {
        let rest = &source[i..];
        let upload = rest
            .strip_prefix("sandbox:")
            .unwrap_or(rest)
            .strip_prefix(UPLOAD_DIR)
            .map(|tail| (rest.len() - tail.len(), tail));

        if let Some((prefix_len, tail)) = upload {
            let name_len = tail.find(|c: char| !is_name_char(c)).unwrap_or(tail.len());
            let name = &tail[..name_len];
            if let Some(local) = manifest.get(name) {
                out.push_str(local);
                i += prefix_len + name_len;
                prev = source[..i].chars().next_back();
                continue;
            }
            if !name.is_empty() && !unmapped.iter().any(|u| u == name) {
                unmapped.push(name.to_string());
            }
            out.push_str(&rest[..prefix_len + name_len]);
            i += prefix_len + name_len;
            prev = source[..i].chars().next_back();
            continue;
        }

        let at_boundary = prev.is_none_or(|p| !is_name_char(p) && p != '/');
        if at_boundary {
            let hit = names.iter().find(|n| rest.starts_with(**n) && ends_name(&rest[n.len()..]));
            if let Some(name) = hit {
                out.push_str(manifest.get(name).expect("name from manifest"));
                i += name.len();
                prev = name.chars().next_back();
                continue;
            }
        }

        let c = rest.chars().next().expect("non-empty rest");
        out.push(c);
        i += c.len_utf8();
        prev = Some(c);
    }
    Remapped {
        source: out,
        unmapped,
    }
}

/// Whether `line` reads the file it mentions rather than writing it.
fn reads_file(line: &str) -> bool {
    let l = line.replace(' ', "");
    let writes = ["to_csv(", "to_excel(", "to_json(", "to_parquet(", "savefig(", ".save(", "'w'", "\"w\"", "'wb'", "\"wb\"", "'a'", "\"a\""]
        .iter()
        .any(|w| l.contains(w));
    if writes {
        return false;
    }
    ["read_", "load(", "loadtxt(", "open(", "Image.open("]
        .iter()
        .any(|r| l.contains(r))
}

/// Builds the ordered step list for all code cells of `conversation`.
///
/// A file under the upload directory that is missing from the manifest is a
/// `MissingDataset` error when a cell reads it before any earlier cell could
/// have written it. Manifest entries that no cell mentions produce warnings.
pub fn plan_execution(conversation: &Conversation, manifest: &DatasetManifest) -> Result<ExecutionPlan, PlanError> {
    let mut plan = ExecutionPlan::default();
    let mut written: BTreeSet<String> = BTreeSet::new();
    let mut used: BTreeSet<&str> = BTreeSet::new();
    let mut flagged: BTreeSet<String> = BTreeSet::new();

    for turn in &conversation.turns {
        for block in extract_code_blocks(turn) {
            let remapped = remap_data_paths(&block.source, manifest);
            for name in manifest.entries.keys() {
                if remapped.source != block.source && block.source.contains(name.as_str()) {
                    used.insert(name);
                }
            }
            for name in &remapped.unmapped {
                let upload_path = format!("{UPLOAD_DIR}{name}");
                for line in block.source.lines().filter(|l| l.contains(&upload_path)) {
                    if reads_file(line) {
                        if !written.contains(name) {
                            return Err(PlanError::MissingDataset {
                                name: name.clone(),
                                turn_index: turn.turn_index,
                            });
                        }
                    } else {
                        written.insert(name.clone());
                    }
                }
                if flagged.insert(name.clone()) && !written.contains(name) {
                    plan.warnings.push(format!(
                        "turn {}: upload path {upload_path} has no dataset and was left unchanged",
                        turn.turn_index
                    ));
                }
            }
            plan.steps.push(ExecutionStep {
                step_index: plan.steps.len(),
                turn_index: block.turn_index,
                ordinal: block.ordinal,
                source: block.source,
                remapped_source: remapped.source,
            });
        }
    }
    for name in manifest.entries.keys() {
        if !used.contains(name.as_str()) {
            plan.warnings.push(format!("dataset {name:?} is not referenced by any code cell"));
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ingest_export, ExportBuilder};

    fn coffee() -> DatasetManifest {
        DatasetManifest::new().with("coffee_survey.csv", "./data/coffee_survey.csv")
    }

    #[test]
    fn no_references_unchanged() {
        let src = "import pandas as pd\nprint(1)";
        let r = remap_data_paths(src, &coffee());
        assert_eq!(r.source, src);
        assert!(r.unmapped.is_empty());
    }

    #[test]
    fn upload_path_rewritten() {
        let r = remap_data_paths("df = pd.read_csv('/mnt/data/coffee_survey.csv')", &coffee());
        assert_eq!(r.source, "df = pd.read_csv('./data/coffee_survey.csv')");
    }

    #[test]
    fn bare_and_sandbox_forms_and_two_files() {
        let m = coffee().with("prices.xlsx", "/tmp/p.xlsx");
        let src = "a = read('coffee_survey.csv')\nb = read(\"sandbox:/mnt/data/prices.xlsx\")";
        let r = remap_data_paths(src, &m);
        assert_eq!(r.source, "a = read('./data/coffee_survey.csv')\nb = read(\"/tmp/p.xlsx\")");
    }

    #[test]
    fn bare_names_respect_boundaries() {
        let m = DatasetManifest::new().with("data.csv", "/x/data.csv");
        let src = "old_data.csv data.csv.bak other/data.csv data.csv";
        let r = remap_data_paths(src, &m);
        assert_eq!(r.source, "old_data.csv data.csv.bak other/data.csv /x/data.csv");
    }

    #[test]
    fn unmapped_upload_paths_flagged() {
        let r = remap_data_paths("open('/mnt/data/other.csv')", &coffee());
        assert_eq!(r.source, "open('/mnt/data/other.csv')");
        assert_eq!(r.unmapped, vec!["other.csv"]);
    }

    fn two_by_two() -> Conversation {
        let doc = ExportBuilder::new("t")
            .user("load")
            .code("df = pd.read_csv('/mnt/data/coffee_survey.csv')")
            .code("print(len(df))")
            .user("more")
            .code("a = 1")
            .code("print(a)")
            .to_bytes();
        ingest_export(&doc).unwrap()
    }

    #[test]
    fn steps_follow_turn_then_ordinal() {
        let plan = plan_execution(&two_by_two(), &coffee()).unwrap();
        let order: Vec<(usize, usize)> = plan.steps.iter().map(|s| (s.turn_index, s.ordinal)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(plan.steps[0].remapped_source, "df = pd.read_csv('./data/coffee_survey.csv')");
        assert!(plan.warnings.is_empty());
    }

    #[test]
    fn missing_dataset_and_unused_entry() {
        let err = plan_execution(&two_by_two(), &DatasetManifest::new()).unwrap_err();
        assert_eq!(
            err,
            PlanError::MissingDataset {
                name: "coffee_survey.csv".into(),
                turn_index: 0
            }
        );
        let doc = ExportBuilder::new("t").user("hi").code("print(2)").to_bytes();
        let conv = ingest_export(&doc).unwrap();
        let plan = plan_execution(&conv, &coffee()).unwrap();
        assert_eq!(plan.warnings.len(), 1);
        assert!(plan.warnings[0].contains("coffee_survey.csv"));
    }

    #[test]
    fn written_then_read_is_not_missing() {
        let doc = ExportBuilder::new("t")
            .user("save")
            .code("df.to_csv('/mnt/data/clean.csv')")
            .user("reload")
            .code("df2 = pd.read_csv('/mnt/data/clean.csv')")
            .to_bytes();
        let conv = ingest_export(&doc).unwrap();
        let plan = plan_execution(&conv, &DatasetManifest::new()).unwrap();
        assert_eq!(plan.steps.len(), 2);
    }

    #[test]
    fn empty_plan_without_code() {
        let doc = ExportBuilder::new("t").user("hi").assistant("hello").to_bytes();
        let plan = plan_execution(&ingest_export(&doc).unwrap(), &DatasetManifest::new()).unwrap();
        assert!(plan.steps.is_empty());
    }
}
