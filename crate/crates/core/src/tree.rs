//! Draft token trees and their attention masks.
//!
//! Nodes live in one array in creation order, root first, so a parent always
//! has a smaller [`NodeId`] than its children and the ancestry mask is
//! lower-triangular.

use std::fmt;

use crate::dist::{Distribution, Token};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub token: Token,
    pub depth: usize,
    /// Product of single-step draft probabilities from the root.
    pub path_prob: f64,
    /// Draft probability of `token` given the parent's context.
    pub draft_prob: f64,
}

/// One child to append: `(parent, token, draft_prob)`.
pub type LayerEntry = (NodeId, Token, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct DraftTree {
    nodes: Vec<TreeNode>,
    layers: Vec<Vec<NodeId>>,
    children: Vec<Vec<NodeId>>,
    /// Distribution a node's children were sampled from, when they were sampled
    /// rather than selected deterministically.
    proposals: Vec<Option<Distribution>>,
    budget: usize,
}

impl DraftTree {
    /// A root-only tree. The root stands for the last committed token and
    /// counts against `budget`.
    pub fn new(root_token: Token, budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::Parameter("tree budget must be positive".into()));
        }
        Ok(Self {
            nodes: vec![TreeNode {
                id: NodeId::ROOT,
                parent: None,
                token: root_token,
                depth: 0,
                path_prob: 1.0,
                draft_prob: 1.0,
            }],
            layers: vec![vec![NodeId::ROOT]],
            children: vec![Vec::new()],
            proposals: vec![None],
            budget,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Never true: a tree always holds its root.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn remaining_budget(&self) -> usize {
        self.budget.saturating_sub(self.nodes.len())
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> Result<&TreeNode> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::Structural(format!("unknown node {id}")))
    }

    pub fn layers(&self) -> &[Vec<NodeId>] {
        &self.layers
    }

    /// Depth of the deepest node.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn children(&self, id: NodeId) -> Result<&[NodeId]> {
        self.node(id)?;
        Ok(&self.children[id.0])
    }

    pub fn proposal(&self, id: NodeId) -> Option<&Distribution> {
        self.proposals.get(id.0).and_then(Option::as_ref)
    }

    /// Marks `id`'s children as drawn by sampling from `dist`.
    pub fn set_proposal(&mut self, id: NodeId, dist: Distribution) -> Result<()> {
        self.node(id)?;
        self.proposals[id.0] = Some(dist);
        Ok(())
    }

    /// Appends one layer of children. All parents must sit at the same depth.
    pub fn add_layer(&mut self, entries: &[LayerEntry]) -> Result<Vec<NodeId>> {
        let Some(&(first, _, _)) = entries.first() else {
            return Ok(Vec::new());
        };
        let depth = self.node(first)?.depth;
        for &(parent, token, draft_prob) in entries {
            let p = self.node(parent)?;
            if p.depth != depth {
                return Err(Error::Structural(format!(
                    "parents span depths {depth} and {}",
                    p.depth
                )));
            }
            if !(0.0..=1.0).contains(&draft_prob) {
                return Err(Error::Input(format!(
                    "draft probability {draft_prob} for token {token} outside [0, 1]"
                )));
            }
        }
        if self.nodes.len() + entries.len() > self.budget {
            return Err(Error::Budget {
                have: self.nodes.len(),
                adding: entries.len(),
                budget: self.budget,
            });
        }

        if self.layers.len() == depth + 1 {
            self.layers.push(Vec::with_capacity(entries.len()));
        }
        let mut ids = Vec::with_capacity(entries.len());
        for &(parent, token, draft_prob) in entries {
            let id = NodeId(self.nodes.len());
            let path_prob = self.nodes[parent.0].path_prob * draft_prob;
            self.nodes.push(TreeNode {
                id,
                parent: Some(parent),
                token,
                depth: depth + 1,
                path_prob,
                draft_prob,
            });
            self.children.push(Vec::new());
            self.proposals.push(None);
            self.children[parent.0].push(id);
            self.layers[depth + 1].push(id);
            ids.push(id);
        }
        Ok(ids)
    }

    /// Root-first inclusive ancestor chain of `id`.
    pub fn path_to(&self, id: NodeId) -> Result<Vec<NodeId>> {
        let mut path = vec![id];
        let mut cur = self.node(id)?;
        while let Some(parent) = cur.parent {
            path.push(parent);
            cur = &self.nodes[parent.0];
        }
        path.reverse();
        Ok(path)
    }

    /// Tokens along the path to `id`, root excluded: what a model conditions on
    /// beyond the committed context.
    pub fn path_tokens(&self, id: NodeId) -> Result<Vec<Token>> {
        Ok(self
            .path_to(id)?
            .into_iter()
            .skip(1)
            .map(|n| self.nodes[n.0].token)
            .collect())
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.children
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_empty())
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    pub fn build_mask(&self) -> TreeMask {
        let n = self.nodes.len();
        let mut bits = vec![false; n * n];
        for node in &self.nodes {
            let row = node.id.0 * n;
            bits[row + node.id.0] = true;
            if let Some(parent) = node.parent {
                // Parent rows are complete before their children are visited.
                let (before, after) = bits.split_at_mut(row);
                let parent_row = &before[parent.0 * n..parent.0 * n + n];
                for (dst, &src) in after[..n].iter_mut().zip(parent_row) {
                    *dst |= src;
                }
            }
        }
        TreeMask { size: n, bits }
    }

    /// The subtree of nodes flagged in `keep`, renumbered in original order.
    /// Every kept node's parent must also be kept.
    pub fn retain(&self, keep: &[bool], budget: usize) -> Result<DraftTree> {
        if keep.len() != self.nodes.len() {
            return Err(Error::Input(format!(
                "keep mask has {} entries for {} nodes",
                keep.len(),
                self.nodes.len()
            )));
        }
        if !keep[0] {
            return Err(Error::Structural("the root must be retained".into()));
        }
        let kept = keep.iter().filter(|k| **k).count();
        if kept > budget {
            return Err(Error::Budget {
                have: 0,
                adding: kept,
                budget,
            });
        }
        let mut remap = vec![None; self.nodes.len()];
        let mut out = DraftTree::new(self.nodes[0].token, budget)?;
        out.proposals[0] = self.proposals[0].clone();
        remap[0] = Some(NodeId::ROOT);
        for node in self.nodes.iter().skip(1).filter(|n| keep[n.id.0]) {
            let parent = node.parent.expect("non-root node has a parent");
            let new_parent = remap[parent.0].ok_or_else(|| {
                Error::Structural(format!("{} kept without its parent {parent}", node.id))
            })?;
            let id = NodeId(out.nodes.len());
            if out.layers.len() == node.depth {
                out.layers.push(Vec::new());
            }
            out.nodes.push(TreeNode {
                id,
                parent: Some(new_parent),
                // Copied, not recomputed, so pruning never perturbs scores.
                ..node.clone()
            });
            out.children.push(Vec::new());
            out.proposals.push(self.proposals[node.id.0].clone());
            out.children[new_parent.0].push(id);
            out.layers[node.depth].push(id);
            remap[node.id.0] = Some(id);
        }
        Ok(out)
    }

    /// Checks the structural and path-probability invariants.
    pub fn validate(&self) -> Result<()> {
        let root = &self.nodes[0];
        if root.parent.is_some() || root.depth != 0 || root.path_prob != 1.0 {
            return Err(Error::Structural("malformed root".into()));
        }
        if self.nodes.len() > self.budget {
            return Err(Error::Budget {
                have: self.nodes.len(),
                adding: 0,
                budget: self.budget,
            });
        }
        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            let parent = node
                .parent
                .ok_or_else(|| Error::Structural(format!("second root at {i}")))?;
            if parent.0 >= i {
                return Err(Error::Structural(format!("{parent} does not precede #{i}")));
            }
            let p = &self.nodes[parent.0];
            if node.depth != p.depth + 1 {
                return Err(Error::Structural(format!("depth mismatch at #{i}")));
            }
            let expected = p.path_prob * node.draft_prob;
            if (node.path_prob - expected).abs() > 1e-12 * expected.abs().max(f64::MIN_POSITIVE) {
                return Err(Error::Structural(format!(
                    "path probability {} at #{i}, expected {expected}",
                    node.path_prob
                )));
            }
            if node.path_prob > p.path_prob {
                return Err(Error::Structural(format!("path probability grows at #{i}")));
            }
        }
        let mut seen = vec![false; self.nodes.len()];
        for (d, layer) in self.layers.iter().enumerate() {
            for id in layer {
                let node = self.node(*id)?;
                if node.depth != d || seen[id.0] {
                    return Err(Error::Structural(format!("layer {d} misfiles {id}")));
                }
                seen[id.0] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Structural("layers do not cover every node".into()));
        }
        Ok(())
    }
}

/// Ancestry matrix: `get(i, j)` iff node `j` is on the root-to-`i` path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeMask {
    size: usize,
    bits: Vec<bool>,
}

impl TreeMask {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.size + col]
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.bits[row * self.size..(row + 1) * self.size]
    }
}
