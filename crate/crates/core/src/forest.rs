//! Hierarchical grouping of turns into analysis threads.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub type ThreadId = u32;

/// A thread is either a leaf summarising one turn, or a grouping of other
/// threads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadNode {
    pub thread_id: ThreadId,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub child_ids: Option<Vec<ThreadId>>,
}

impl ThreadNode {
    pub fn leaf(thread_id: ThreadId, title: impl Into<String>, turn_index: usize) -> Self {
        ThreadNode {
            thread_id,
            title: title.into(),
            turn_index: Some(turn_index),
            child_ids: None,
        }
    }

    pub fn group(thread_id: ThreadId, title: impl Into<String>, child_ids: Vec<ThreadId>) -> Self {
        ThreadNode {
            thread_id,
            title: title.into(),
            turn_index: None,
            child_ids: Some(child_ids),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.turn_index.is_some()
    }

    pub fn children(&self) -> &[ThreadId] {
        self.child_ids.as_deref().unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ForestError {
    #[error("thread {0} must have exactly one of turn_index and non-empty child_ids")]
    MalformedNode(ThreadId),
    #[error("thread {parent} references unknown child {child}")]
    UnknownChild { parent: ThreadId, child: ThreadId },
    #[error("thread {child} has more than one parent")]
    MultipleParents { child: ThreadId },
    #[error("root {0} is not a known thread or has a parent")]
    BadRoot(ThreadId),
    #[error("thread {0} is not reachable from any root or lies on a cycle")]
    Unreachable(ThreadId),
    #[error("turn {0} is covered by more than one leaf thread")]
    DuplicateTurn(usize),
    #[error("turn {0} is not covered by any leaf thread")]
    MissingTurn(usize),
    #[error("leaf thread {thread} references turn {turn} outside the conversation")]
    TurnOutOfRange { thread: ThreadId, turn: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadForest {
    pub nodes: BTreeMap<ThreadId, ThreadNode>,
    pub roots: Vec<ThreadId>,
}

impl ThreadForest {
    /// Flat forest where every leaf is a root, in the given order.
    pub fn from_leaves(leaves: impl IntoIterator<Item = ThreadNode>) -> Self {
        let mut forest = ThreadForest::default();
        for leaf in leaves {
            forest.roots.push(leaf.thread_id);
            forest.nodes.insert(leaf.thread_id, leaf);
        }
        forest
    }

    pub fn get(&self, id: ThreadId) -> Option<&ThreadNode> {
        self.nodes.get(&id)
    }

    pub fn next_free_id(&self) -> ThreadId {
        self.nodes.keys().next_back().map_or(1, |max| max + 1)
    }

    pub fn parent_of(&self, id: ThreadId) -> Option<ThreadId> {
        self.nodes
            .values()
            .find(|n| n.children().contains(&id))
            .map(|n| n.thread_id)
    }

    /// Chain of ancestors of `id`, outermost first, excluding `id` itself.
    pub fn ancestors(&self, id: ThreadId) -> Vec<ThreadId> {
        let mut chain = Vec::new();
        let mut cursor = id;
        while let Some(parent) = self.parent_of(cursor) {
            if chain.contains(&parent) {
                break;
            }
            chain.push(parent);
            cursor = parent;
        }
        chain.reverse();
        chain
    }

    pub fn leaf_for_turn(&self, turn_index: usize) -> Option<&ThreadNode> {
        self.nodes.values().find(|n| n.turn_index == Some(turn_index))
    }

    /// Turn indices under `id` in depth-first child order.
    pub fn leaf_turns(&self, id: ThreadId) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        let mut seen = BTreeSet::new();
        while let Some(cur) = stack.pop() {
            if !seen.insert(cur) {
                continue;
            }
            let Some(node) = self.nodes.get(&cur) else { continue };
            if let Some(turn) = node.turn_index {
                out.push(turn);
            }
            stack.extend(node.children().iter().rev());
        }
        out
    }

    /// Depth of the deepest root-to-leaf path, counting nodes.
    pub fn depth(&self) -> usize {
        fn walk(forest: &ThreadForest, id: ThreadId, guard: usize) -> usize {
            if guard == 0 {
                return 0;
            }
            let Some(node) = forest.nodes.get(&id) else { return 0 };
            1 + node
                .children()
                .iter()
                .map(|c| walk(forest, *c, guard - 1))
                .max()
                .unwrap_or(0)
        }
        let guard = self.nodes.len() + 1;
        self.roots.iter().map(|r| walk(self, *r, guard)).max().unwrap_or(0)
    }

    /// Validates the structural invariants and that leaf turns cover
    /// `0..turn_count` exactly once.
    pub fn validate(&self, turn_count: usize) -> Result<(), ForestError> {
        let mut parent: BTreeMap<ThreadId, ThreadId> = BTreeMap::new();
        for node in self.nodes.values() {
            match (&node.turn_index, &node.child_ids) {
                (Some(_), None) => {}
                (None, Some(children)) if !children.is_empty() => {
                    for child in children {
                        if !self.nodes.contains_key(child) {
                            return Err(ForestError::UnknownChild {
                                parent: node.thread_id,
                                child: *child,
                            });
                        }
                        if parent.insert(*child, node.thread_id).is_some() {
                            return Err(ForestError::MultipleParents { child: *child });
                        }
                    }
                }
                _ => return Err(ForestError::MalformedNode(node.thread_id)),
            }
        }
        let mut root_set = BTreeSet::new();
        for root in &self.roots {
            if !self.nodes.contains_key(root) || parent.contains_key(root) || !root_set.insert(*root)
            {
                return Err(ForestError::BadRoot(*root));
            }
        }
        // Single parent plus reachability from parentless roots rules out cycles.
        let mut reached = BTreeSet::new();
        let mut stack: Vec<ThreadId> = self.roots.clone();
        while let Some(cur) = stack.pop() {
            if reached.insert(cur) {
                stack.extend(self.nodes[&cur].children().iter().copied());
            }
        }
        if let Some(lost) = self.nodes.keys().find(|id| !reached.contains(id)) {
            return Err(ForestError::Unreachable(*lost));
        }
        let mut covered = vec![false; turn_count];
        for node in self.nodes.values() {
            if let Some(turn) = node.turn_index {
                let slot = covered.get_mut(turn).ok_or(ForestError::TurnOutOfRange {
                    thread: node.thread_id,
                    turn,
                })?;
                if *slot {
                    return Err(ForestError::DuplicateTurn(turn));
                }
                *slot = true;
            }
        }
        if let Some(missing) = covered.iter().position(|c| !c) {
            return Err(ForestError::MissingTurn(missing));
        }
        Ok(())
    }
}
