//! Compositions: ordered, nestable blocks of element references and notes.

pub mod outline;
pub mod serialize;
pub mod summary;

use serde::{Deserialize, Serialize};

use crate::forest::ThreadNode;
use crate::model::ElementRef;
use crate::state::{Element, ResolveError, StructuredState};

pub use outline::{parse_outline, OutlineItem, OutlineKind};
pub use serialize::serialize_composition;
pub use summary::{
    build_summary_prompt, generate_summary, validate_summary, SummaryError, SummaryOutcome, SummaryParams,
};

pub type BlockId = u64;

/// Index path into the block tree: `[2]` is the third top-level slot,
/// `[2, 0]` the first child slot of that block.
pub type Position = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionBlock {
    pub block_id: BlockId,
    #[serde(rename = "ref")]
    pub element: ElementRef,
    #[serde(default)]
    pub children: Vec<CompositionBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub override_text: Option<String>,
}

impl CompositionBlock {
    fn find(&self, id: BlockId) -> Option<&CompositionBlock> {
        if self.block_id == id {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(id))
    }

    fn find_mut(&mut self, id: BlockId) -> Option<&mut CompositionBlock> {
        if self.block_id == id {
            return Some(self);
        }
        self.children.iter_mut().find_map(|c| c.find_mut(id))
    }

    fn count(&self) -> usize {
        1 + self.children.iter().map(CompositionBlock::count).sum::<usize>()
    }

    fn collect_ids(&self, out: &mut Vec<BlockId>) {
        out.push(self.block_id);
        for c in &self.children {
            c.collect_ids(out);
        }
    }

    fn depth(&self) -> usize {
        1 + self.children.iter().map(CompositionBlock::depth).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Composition {
    pub composition_id: String,
    pub blocks: Vec<CompositionBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serialized_markdown: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_params: Option<SummaryParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_summary: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub summary_warnings: Vec<String>,
    /// Next block id to hand out.
    #[serde(default)]
    pub next_block_id: BlockId,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompositionError {
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error("invalid position {0:?}")]
    InvalidPosition(Position),
    #[error("block {0} cannot move into its own subtree")]
    CycleMove(BlockId),
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
}

/// One mutation, as sent to the service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum CompositionOp {
    Add {
        #[serde(rename = "ref")]
        element: ElementRef,
        #[serde(default)]
        position: Option<Position>,
    },
    Move {
        block_id: BlockId,
        position: Position,
    },
    Edit {
        block_id: BlockId,
        text: String,
    },
    Insert {
        text: String,
        #[serde(default)]
        position: Option<Position>,
    },
    Remove {
        block_id: BlockId,
    },
}

fn slot_list<'a>(blocks: &'a mut Vec<CompositionBlock>, parent_path: &[usize]) -> Option<&'a mut Vec<CompositionBlock>> {
    let mut list = blocks;
    for &i in parent_path {
        list = &mut list.get_mut(i)?.children;
    }
    Some(list)
}

fn path_of(blocks: &[CompositionBlock], id: BlockId) -> Option<Position> {
    for (i, b) in blocks.iter().enumerate() {
        if b.block_id == id {
            return Some(vec![i]);
        }
        if let Some(mut rest) = path_of(&b.children, id) {
            rest.insert(0, i);
            return Some(rest);
        }
    }
    None
}

impl Composition {
    pub fn new(composition_id: impl Into<String>) -> Self {
        Composition {
            composition_id: composition_id.into(),
            blocks: Vec::new(),
            serialized_markdown: None,
            summary_params: None,
            generated_summary: None,
            summary_warnings: Vec::new(),
            next_block_id: 1,
        }
    }

    pub fn find(&self, id: BlockId) -> Option<&CompositionBlock> {
        self.blocks.iter().find_map(|b| b.find(id))
    }

    pub fn path_of(&self, id: BlockId) -> Option<Position> {
        path_of(&self.blocks, id)
    }

    pub fn block_count(&self) -> usize {
        self.blocks.iter().map(CompositionBlock::count).sum()
    }

    pub fn depth(&self) -> usize {
        self.blocks.iter().map(CompositionBlock::depth).max().unwrap_or(0)
    }

    /// Every block id, depth first.
    pub fn block_ids(&self) -> Vec<BlockId> {
        let mut out = Vec::new();
        for b in &self.blocks {
            b.collect_ids(&mut out);
        }
        out
    }

    /// Block ids are unique and all below the id counter.
    pub fn is_well_formed(&self) -> bool {
        let mut ids = self.block_ids();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        ids.len() == n && ids.iter().all(|id| *id < self.next_block_id)
    }

    fn fresh_id(&mut self) -> BlockId {
        let id = self.next_block_id.max(1);
        self.next_block_id = id + 1;
        id
    }

    fn invalidate(&mut self) {
        self.serialized_markdown = None;
    }

    fn insert_at(&mut self, block: CompositionBlock, position: Option<&[usize]>) -> Result<(), CompositionError> {
        let position = match position {
            Some(p) => p.to_vec(),
            None => vec![self.blocks.len()],
        };
        let Some((&index, parent)) = position.split_last() else {
            return Err(CompositionError::InvalidPosition(position));
        };
        let list = slot_list(&mut self.blocks, parent).ok_or_else(|| CompositionError::InvalidPosition(position.clone()))?;
        if index > list.len() {
            return Err(CompositionError::InvalidPosition(position));
        }
        list.insert(index, block);
        self.invalidate();
        Ok(())
    }

    /// Materializes `element` as a block (with its full nested content at
    /// this moment) and inserts it at `position`, or appends it at the top
    /// level when no position is given.
    pub fn add_block(
        &mut self,
        state: &StructuredState,
        element: &ElementRef,
        position: Option<&[usize]>,
    ) -> Result<BlockId, CompositionError> {
        let mut trial = self.clone();
        let block = trial.materialize(state, element)?;
        let id = block.block_id;
        trial.insert_at(block, position)?;
        *self = trial;
        Ok(id)
    }

    pub fn insert_note(&mut self, text: &str, position: Option<&[usize]>) -> Result<BlockId, CompositionError> {
        let mut trial = self.clone();
        let id = trial.fresh_id();
        trial.insert_at(
            CompositionBlock {
                block_id: id,
                element: ElementRef::note(text),
                children: Vec::new(),
                override_text: None,
            },
            position,
        )?;
        *self = trial;
        Ok(id)
    }

    /// Relocates a block with its subtree. `position` is a slot in the tree
    /// as it is now (the block lands before whatever occupies that slot), so
    /// moving a block to its own path changes nothing. A slot inside the
    /// block's own subtree is a cycle.
    pub fn move_block(&mut self, id: BlockId, position: &[usize]) -> Result<(), CompositionError> {
        let from = self.path_of(id).ok_or(CompositionError::UnknownBlock(id))?;
        if position.len() > from.len() && position.starts_with(&from) {
            return Err(CompositionError::CycleMove(id));
        }
        let mut trial = self.clone();
        let (&index, parent) = from.split_last().expect("paths are non-empty");
        let list = slot_list(&mut trial.blocks, parent).expect("path just found");
        let block = list.remove(index);
        let mut target = position.to_vec();
        if target.len() > parent.len() && target.starts_with(parent) && target[parent.len()] > index {
            target[parent.len()] -= 1;
        }
        trial
            .insert_at(block, Some(&target))
            .map_err(|_| CompositionError::InvalidPosition(position.to_vec()))?;
        *self = trial;
        Ok(())
    }

    /// Sets the text shown for a block. An empty text restores the
    /// element's own text.
    pub fn edit_block(&mut self, id: BlockId, text: &str) -> Result<(), CompositionError> {
        let block = self
            .blocks
            .iter_mut()
            .find_map(|b| b.find_mut(id))
            .ok_or(CompositionError::UnknownBlock(id))?;
        block.override_text = (!text.is_empty()).then(|| text.to_string());
        self.invalidate();
        Ok(())
    }

    pub fn remove_block(&mut self, id: BlockId) -> Result<CompositionBlock, CompositionError> {
        let path = self.path_of(id).ok_or(CompositionError::UnknownBlock(id))?;
        let (&index, parent) = path.split_last().expect("paths are non-empty");
        let list = slot_list(&mut self.blocks, parent).expect("path just found");
        let removed = list.remove(index);
        self.invalidate();
        Ok(removed)
    }

    /// Applies one operation; returns the id of the block it created or
    /// touched.
    pub fn apply(&mut self, state: &StructuredState, op: &CompositionOp) -> Result<BlockId, CompositionError> {
        match op {
            CompositionOp::Add { element, position } => self.add_block(state, element, position.as_deref()),
            CompositionOp::Move { block_id, position } => self.move_block(*block_id, position).map(|()| *block_id),
            CompositionOp::Edit { block_id, text } => self.edit_block(*block_id, text).map(|()| *block_id),
            CompositionOp::Insert { text, position } => self.insert_note(text, position.as_deref()),
            CompositionOp::Remove { block_id } => self.remove_block(*block_id).map(|b| b.block_id),
        }
    }

    fn leaf_block(&mut self, element: ElementRef) -> CompositionBlock {
        CompositionBlock {
            block_id: self.fresh_id(),
            element,
            children: Vec::new(),
            override_text: None,
        }
    }

    fn materialize(&mut self, state: &StructuredState, element: &ElementRef) -> Result<CompositionBlock, CompositionError> {
        match state.resolve(element)? {
            Element::Turn(turn) => Ok(self.turn_block(state, turn.turn_index)),
            Element::Thread(node) => Ok(self.thread_block(state, node)),
            Element::Insight(i, _) => Ok(self.leaf_block(ElementRef::insight(i))),
            Element::Artifact(a) => Ok(self.leaf_block(ElementRef::artifact(a.artifact_id.clone()))),
            Element::Note(text) => Ok(self.leaf_block(ElementRef::note(text))),
        }
    }

    /// A turn with its anchored insights, then its code, tables and figures.
    fn turn_block(&mut self, state: &StructuredState, turn_index: usize) -> CompositionBlock {
        let mut block = self.leaf_block(ElementRef::turn(turn_index));
        for i in state.insights_anchored_at(turn_index) {
            let child = self.leaf_block(ElementRef::insight(i));
            block.children.push(child);
        }
        let ids: Vec<String> = state
            .artifacts_of_turn(turn_index)
            .iter()
            .map(|a| a.artifact_id.clone())
            .collect();
        for id in ids {
            let child = self.leaf_block(ElementRef::artifact(id));
            block.children.push(child);
        }
        block
    }

    /// A thread over its sub-threads; leaf threads appear as their turn.
    fn thread_block(&mut self, state: &StructuredState, node: &ThreadNode) -> CompositionBlock {
        let mut block = self.leaf_block(ElementRef::thread(node.thread_id));
        if let Some(turn) = node.turn_index {
            let child = self.turn_block(state, turn);
            block.children.push(child);
            return block;
        }
        for child_id in node.children() {
            let Some(child) = state.thread_forest.get(*child_id) else { continue };
            let child_block = match child.turn_index {
                Some(turn) => self.turn_block(state, turn),
                None => self.thread_block(state, child),
            };
            block.children.push(child_block);
        }
        block
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ElementKind;
    use crate::artifacts::{Artifact, ArtifactKind, ArtifactRegistry};
    use crate::forest::{ThreadForest, ThreadNode};
    use crate::ingest::{ingest_export, ExportBuilder};
    use crate::model::{Insight, InsightEvidence};
    use crate::taxonomy::InsightType;

    fn state() -> StructuredState {
        let doc = ExportBuilder::new("t")
            .user("count rows")
            .assistant("There are 12 rows.")
            .user("show the table")
            .assistant("here")
            .user("unrelated")
            .assistant("ok")
            .to_bytes();
        let conv = ingest_export(&doc).unwrap();
        let mut forest = ThreadForest::from_leaves([
            ThreadNode::leaf(1, "rows", 0),
            ThreadNode::leaf(2, "table", 1),
            ThreadNode::leaf(3, "other", 2),
        ]);
        forest.nodes.insert(4, ThreadNode::group(4, "overview", vec![1, 2]));
        forest.roots = vec![4, 3];
        let mut registry = ArtifactRegistry::new();
        registry.register(ArtifactKind::DataTable, "t", 1, |id| Artifact {
            artifact_id: id,
            kind: ArtifactKind::DataTable,
            turn_index: 1,
            turn_refs: vec![1],
            path: "artifacts/table-0.csv".into(),
            media_type: "text/csv".into(),
            label: String::new(),
            dedup_key: "t".into(),
            thumbnail: None,
        });
        let insight = Insight {
            statement: "There are 12 rows.".into(),
            keywords: vec![],
            source_message_ids: vec![conv.turns[0].responses[0].message_id.clone()],
            types: vec![InsightType::Value],
            evidence: InsightEvidence {
                source_text: Some("12 rows".into()),
                ..Default::default()
            },
        };
        StructuredState::new(conv, forest, vec![], vec![insight], registry)
    }

    #[test]
    fn add_insight_to_empty() {
        let s = state();
        let mut c = Composition::new("c");
        c.add_block(&s, &ElementRef::insight(0), None).unwrap();
        assert_eq!(c.blocks.len(), 1);
        assert!(c.blocks[0].children.is_empty());
    }

    #[test]
    fn thread_expands_to_turns_and_artifacts() {
        let s = state();
        let mut c = Composition::new("c");
        c.add_block(&s, &ElementRef::thread(4), None).unwrap();
        let b = &c.blocks[0];
        assert_eq!(b.children.len(), 2);
        assert_eq!(b.children[0].element, ElementRef::turn(0));
        assert_eq!(b.children[0].children[0].element, ElementRef::insight(0));
        assert_eq!(b.children[1].children.len(), 1);
        assert_eq!(b.children[1].children[0].element.kind, ElementKind::Artifact);
        assert!(c.is_well_formed());
    }

    #[test]
    fn bad_positions_and_refs() {
        let s = state();
        let mut c = Composition::new("c");
        assert_eq!(
            c.add_block(&s, &ElementRef::insight(0), Some(&[1])),
            Err(CompositionError::InvalidPosition(vec![1]))
        );
        assert!(matches!(
            c.add_block(&s, &ElementRef::insight(7), None),
            Err(CompositionError::Resolve(ResolveError::UnknownRef(_)))
        ));
        assert!(c.blocks.is_empty());
        assert_eq!(c.next_block_id, 1);
    }

    #[test]
    fn moves() {
        let s = state();
        let mut c = Composition::new("c");
        let a = c.add_block(&s, &ElementRef::turn(0), None).unwrap();
        let b = c.add_block(&s, &ElementRef::turn(2), None).unwrap();
        let before = c.clone();
        c.move_block(a, &[0]).unwrap();
        assert_eq!(c, before);
        c.move_block(b, &[0]).unwrap();
        assert_eq!(c.blocks[0].block_id, b);
        assert_eq!(c.blocks[1].block_id, a);
        assert_eq!(c.move_block(a, &[1, 0]), Err(CompositionError::CycleMove(a)));
        c.move_block(a, &[2]).unwrap();
        assert_eq!(c.blocks[1].block_id, a);
        c.move_block(b, &[1, 0]).unwrap();
        assert_eq!(c.blocks.len(), 1);
        assert_eq!(c.blocks[0].children[0].block_id, b);
        assert_eq!(c.move_block(99, &[0]), Err(CompositionError::UnknownBlock(99)));
    }

    #[test]
    fn notes_and_edits() {
        let s = state();
        let mut c = Composition::new("c");
        c.add_block(&s, &ElementRef::insight(0), None).unwrap();
        let n = c.insert_note("Context first", Some(&[0])).unwrap();
        assert_eq!(c.blocks[0].block_id, n);
        c.edit_block(n, "Edited").unwrap();
        assert_eq!(c.blocks[0].override_text.as_deref(), Some("Edited"));
        c.edit_block(n, "").unwrap();
        assert_eq!(c.blocks[0].override_text, None);
        assert_eq!(c.edit_block(42, "x"), Err(CompositionError::UnknownBlock(42)));
        c.remove_block(n).unwrap();
        assert_eq!(c.blocks.len(), 1);
    }

    #[test]
    fn ops_round_trip_as_json() {
        let op: CompositionOp = serde_json::from_str(r#"{"op":"add","ref":{"kind":"thread","target_id":"4"},"position":[0]}"#).unwrap();
        assert_eq!(
            op,
            CompositionOp::Add {
                element: ElementRef::thread(4),
                position: Some(vec![0])
            }
        );
        let op: CompositionOp = serde_json::from_str(r#"{"op":"insert","text":"hi"}"#).unwrap();
        assert_eq!(op, CompositionOp::Insert { text: "hi".into(), position: None });
    }
}
