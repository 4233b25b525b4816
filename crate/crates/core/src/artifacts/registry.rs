use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Visualization,
    DataTable,
    Code,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 3] = [
        ArtifactKind::Visualization,
        ArtifactKind::DataTable,
        ArtifactKind::Code,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Visualization => "visualization",
            ArtifactKind::DataTable => "data_table",
            ArtifactKind::Code => "code",
        }
    }

    pub fn id_prefix(self) -> &'static str {
        match self {
            ArtifactKind::Visualization => "viz",
            ArtifactKind::DataTable => "table",
            ArtifactKind::Code => "code",
        }
    }

    pub fn parse(raw: &str) -> Option<ArtifactKind> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "visualization" | "visualisation" | "viz" => Some(ArtifactKind::Visualization),
            "data_table" | "datatable" | "table" => Some(ArtifactKind::DataTable),
            "code" => Some(ArtifactKind::Code),
            _ => None,
        }
    }

    /// Recognises registry ids of the form `<prefix>-<n>`.
    pub fn from_artifact_id(id: &str) -> Option<ArtifactKind> {
        let (prefix, n) = id.split_once('-')?;
        if n.is_empty() || !n.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        ArtifactKind::ALL.into_iter().find(|k| k.id_prefix() == prefix)
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub artifact_id: String,
    pub kind: ArtifactKind,
    /// First turn the artifact appeared in.
    pub turn_index: usize,
    /// Every turn that produced an artifact with this dedup key, ascending.
    pub turn_refs: Vec<usize>,
    /// Session-relative path of the payload file.
    pub path: String,
    pub media_type: String,
    /// Caption text; empty when the turn title should be used instead.
    #[serde(default)]
    pub label: String,
    pub dedup_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thumbnail: Option<String>,
}

/// Artifacts keyed by id, with secondary indices by turn/kind and by dedup
/// key. Only the artifact list is serialized; the indices are rebuilt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RegistryRepr", into = "RegistryRepr")]
pub struct ArtifactRegistry {
    artifacts: BTreeMap<String, Artifact>,
    by_turn_kind: BTreeMap<(usize, ArtifactKind), Vec<String>>,
    by_dedup_key: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct RegistryRepr {
    artifacts: Vec<Artifact>,
}

impl From<RegistryRepr> for ArtifactRegistry {
    fn from(repr: RegistryRepr) -> Self {
        let mut registry = ArtifactRegistry::default();
        for artifact in repr.artifacts {
            registry.index(&artifact);
            registry.artifacts.insert(artifact.artifact_id.clone(), artifact);
        }
        registry
    }
}

impl From<ArtifactRegistry> for RegistryRepr {
    fn from(registry: ArtifactRegistry) -> Self {
        let mut artifacts: Vec<Artifact> = registry.artifacts.into_values().collect();
        artifacts.sort_by(|a, b| {
            (a.turn_index, a.kind, id_number(&a.artifact_id))
                .cmp(&(b.turn_index, b.kind, id_number(&b.artifact_id)))
        });
        RegistryRepr { artifacts }
    }
}

fn id_number(id: &str) -> u64 {
    id.rsplit_once('-')
        .and_then(|(_, n)| n.parse().ok())
        .unwrap_or(u64::MAX)
}

impl ArtifactRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.artifacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.artifacts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Artifact> {
        self.artifacts.get(id)
    }

    pub fn by_dedup_key(&self, key: &str) -> Option<&Artifact> {
        self.by_dedup_key.get(key).and_then(|id| self.artifacts.get(id))
    }

    /// Artifacts referenced from `turn_index` with the given kind, in id
    /// order.
    pub fn for_turn(&self, turn_index: usize, kind: ArtifactKind) -> impl Iterator<Item = &Artifact> {
        self.by_turn_kind
            .get(&(turn_index, kind))
            .into_iter()
            .flatten()
            .filter_map(|id| self.artifacts.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Artifact> {
        self.artifacts.values()
    }

    pub fn of_kind(&self, kind: ArtifactKind) -> impl Iterator<Item = &Artifact> {
        self.artifacts.values().filter(move |a| a.kind == kind)
    }

    pub fn count(&self, kind: ArtifactKind) -> usize {
        self.of_kind(kind).count()
    }

    /// Number of distinct turns referencing at least one artifact of `kind`.
    pub fn turns_with(&self, kind: ArtifactKind) -> usize {
        self.by_turn_kind
            .iter()
            .filter(|((_, k), ids)| *k == kind && !ids.is_empty())
            .count()
    }

    /// Registers an artifact, or, when one with the same dedup key exists,
    /// adds `turn_index` to its references. Returns the id that now
    /// represents the content. `make` is only called for new content.
    pub fn register(
        &mut self,
        kind: ArtifactKind,
        dedup_key: &str,
        turn_index: usize,
        make: impl FnOnce(String) -> Artifact,
    ) -> (String, bool) {
        if let Some(id) = self.by_dedup_key.get(dedup_key).cloned() {
            let artifact = self.artifacts.get_mut(&id).expect("index consistent");
            if !artifact.turn_refs.contains(&turn_index) {
                artifact.turn_refs.push(turn_index);
                artifact.turn_refs.sort_unstable();
                let slot = self.by_turn_kind.entry((turn_index, artifact.kind)).or_default();
                slot.push(id.clone());
                slot.sort_by_key(|id| id_number(id));
            }
            return (id, false);
        }
        let id = format!("{}-{}", kind.id_prefix(), self.count(kind));
        let mut artifact = make(id.clone());
        artifact.artifact_id = id.clone();
        artifact.kind = kind;
        artifact.dedup_key = dedup_key.to_string();
        artifact.turn_index = turn_index;
        artifact.turn_refs = vec![turn_index];
        self.index(&artifact);
        self.artifacts.insert(id.clone(), artifact);
        (id, true)
    }

    fn index(&mut self, artifact: &Artifact) {
        for turn in &artifact.turn_refs {
            let slot = self.by_turn_kind.entry((*turn, artifact.kind)).or_default();
            if !slot.contains(&artifact.artifact_id) {
                slot.push(artifact.artifact_id.clone());
                slot.sort_by_key(|id| id_number(id));
            }
        }
        self.by_dedup_key
            .insert(artifact.dedup_key.clone(), artifact.artifact_id.clone());
    }

    /// Checks that the indices agree with the artifact list.
    pub fn is_consistent(&self) -> bool {
        let keys_ok = self.artifacts.values().all(|a| {
            self.by_dedup_key.get(&a.dedup_key) == Some(&a.artifact_id)
                && a.turn_refs.iter().all(|t| {
                    self.by_turn_kind
                        .get(&(*t, a.kind))
                        .is_some_and(|ids| ids.contains(&a.artifact_id))
                })
        });
        keys_ok && self.by_dedup_key.len() == self.artifacts.len()
    }
}
