//! Draft-tree construction.
//!
//! Three strategies share one candidate machinery:
//!
//! * **chain** drafting proposes `gamma` tokens one after another;
//! * the **static** grid expands every parent's top-`K` children, shrinks the
//!   union back to `K` parents per layer for `D + 1` layers and finally prunes
//!   the tree to `N` nodes by path probability;
//! * **TALON** grows the tree layer by layer until `N` nodes are placed. The
//!   first `init_layers` layers take the pool's top-`K`; deeper layers keep
//!   every candidate whose path probability reaches `mu` times the layer's
//!   best (the anchor), truncated to the remaining budget.
//!
//! Ranking is a total order everywhere: descending path probability, then
//! ascending parent id, then ascending token id. Zero-probability
//! continuations never enter a pool.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{argmax_token, sample, Token};
use crate::error::{Error, Result};
use crate::models::{Context, SequenceModel};
use crate::tree::{DraftTree, LayerEntry, NodeId};

/// Path probabilities below this are treated as zero.
pub const UNDERFLOW: f64 = 1e-300;

fn default_budget() -> usize {
    60
}
fn default_width() -> usize {
    10
}
fn default_depth() -> usize {
    8
}
fn default_mu() -> f64 {
    0.03
}
fn default_init_layers() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ExpansionPolicy {
    Chain {
        gamma: usize,
    },
    #[serde(rename = "eagle")]
    StaticEagle {
        #[serde(rename = "K", default = "default_width")]
        width: usize,
        #[serde(rename = "D", default = "default_depth")]
        depth: usize,
        #[serde(rename = "N", default = "default_budget")]
        budget: usize,
    },
    Talon {
        #[serde(rename = "N", default = "default_budget")]
        budget: usize,
        #[serde(rename = "K", default = "default_width")]
        width: usize,
        #[serde(default = "default_mu")]
        mu: f64,
        #[serde(default = "default_init_layers")]
        init_layers: usize,
    },
}

impl ExpansionPolicy {
    /// TALON with N=60, K=10, mu=0.03, one top-K layer.
    pub fn talon_default() -> Self {
        ExpansionPolicy::Talon {
            budget: default_budget(),
            width: default_width(),
            mu: default_mu(),
            init_layers: default_init_layers(),
        }
    }

    /// The static grid with K=10, D=8, N=60.
    pub fn eagle_default() -> Self {
        ExpansionPolicy::StaticEagle {
            width: default_width(),
            depth: default_depth(),
            budget: default_budget(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExpansionPolicy::Chain { .. } => "chain",
            ExpansionPolicy::StaticEagle { .. } => "eagle",
            ExpansionPolicy::Talon { .. } => "talon",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Parameter(msg));
        match *self {
            ExpansionPolicy::Chain { gamma: 0 } => fail("chain gamma must be ≥ 1".into()),
            ExpansionPolicy::StaticEagle { width, budget, .. } => {
                if width == 0 {
                    fail("eagle K must be ≥ 1".into())
                } else if budget < width + 1 {
                    fail(format!(
                        "eagle N must be ≥ K+1 = {}, got {budget}",
                        width + 1
                    ))
                } else {
                    Ok(())
                }
            }
            ExpansionPolicy::Talon {
                budget,
                width,
                mu,
                init_layers,
            } => {
                if !(mu > 0.0 && mu <= 1.0) {
                    fail(format!("talon mu must lie in (0, 1], got {mu}"))
                } else if budget < 2 {
                    fail(format!("talon N must be ≥ 2, got {budget}"))
                } else if width == 0 {
                    fail("talon K must be ≥ 1".into())
                } else if init_layers == 0 {
                    fail("talon init_layers must be ≥ 1".into())
                } else {
                    Ok(())
                }
            }
            ExpansionPolicy::Chain { .. } => Ok(()),
        }
    }
}

/// A proposed child `(parent, token)` with its scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub parent: NodeId,
    pub token: Token,
    pub path_prob: f64,
    pub draft_prob: f64,
}

impl Candidate {
    fn entry(&self) -> LayerEntry {
        (self.parent, self.token, self.draft_prob)
    }
}

/// Descending path probability, then ascending parent id, then token id.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.path_prob
        .total_cmp(&a.path_prob)
        .then(a.parent.cmp(&b.parent))
        .then(a.token.cmp(&b.token))
}

/// Every nonzero child extension of a set of same-depth parents, ordered by
/// parent id then token id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidatePool {
    pub entries: Vec<Candidate>,
}

impl CandidatePool {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn anchor(&self) -> Option<f64> {
        self.entries.iter().map(|c| c.path_prob).reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    /// Largest path probability in the pool.
    pub anchor: f64,
    /// Admitted candidates in rank order.
    pub kept: Vec<Candidate>,
    pub truncated_by_budget: bool,
}

pub fn gather_pool<M: SequenceModel + ?Sized>(
    tree: &DraftTree,
    parents: &[NodeId],
    model: &M,
    ctx: &Context,
) -> Result<CandidatePool> {
    let Some(first) = parents.first() else {
        return Err(Error::Input(
            "candidate pool needs at least one parent".into(),
        ));
    };
    let depth = tree.node(*first)?.depth;
    let mut sorted = parents.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut entries = Vec::new();
    for parent in sorted {
        let node = tree.node(parent)?;
        if node.depth != depth {
            return Err(Error::Input(format!(
                "pool parents span depths {depth} and {}",
                node.depth
            )));
        }
        let dist = model.next_dist(&ctx.joined(&tree.path_tokens(parent)?))?;
        for (token, &p) in dist.probs().iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let path_prob = node.path_prob * p;
            if path_prob >= UNDERFLOW {
                entries.push(Candidate {
                    parent,
                    token: token as Token,
                    path_prob,
                    draft_prob: p,
                });
            }
        }
    }
    Ok(CandidatePool { entries })
}

fn nonempty_anchor(pool: &CandidatePool) -> Result<f64> {
    pool.anchor()
        .ok_or_else(|| Error::Gating("candidate pool is empty".into()))
}

/// Confidence gating: keeps candidates with `path_prob ≥ mu · anchor`, then
/// the best `remaining_budget` of those.
pub fn gate_layer(pool: &CandidatePool, mu: f64, remaining_budget: usize) -> Result<GateOutcome> {
    let anchor = nonempty_anchor(pool)?;
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::Parameter(format!("mu must lie in (0, 1], got {mu}")));
    }
    let threshold = mu * anchor;
    let mut kept: Vec<Candidate> = pool
        .entries
        .iter()
        .filter(|c| c.path_prob >= threshold)
        .copied()
        .collect();
    kept.sort_by(rank_order);
    let truncated_by_budget = kept.len() > remaining_budget || remaining_budget == 0;
    kept.truncate(remaining_budget);
    Ok(GateOutcome {
        anchor,
        kept,
        truncated_by_budget,
    })
}

/// Forced top-`width` selection over the pool, clamped by the budget.
pub fn init_top_k(
    pool: &CandidatePool,
    width: usize,
    remaining_budget: usize,
) -> Result<GateOutcome> {
    let anchor = nonempty_anchor(pool)?;
    let mut kept = pool.entries.clone();
    kept.sort_by(rank_order);
    kept.truncate(width);
    let truncated_by_budget = kept.len() > remaining_budget || remaining_budget == 0;
    kept.truncate(remaining_budget);
    Ok(GateOutcome {
        anchor,
        kept,
        truncated_by_budget,
    })
}

/// The static grid's layer step: each parent's top-`width` children by draft
/// probability, then the top-`width` of their union by path probability.
/// Returns the survivors in rank order.
pub fn static_layer(pool: &CandidatePool, width: usize) -> Vec<Candidate> {
    let mut union = Vec::with_capacity(width * width);
    for group in pool.entries.chunk_by(|a, b| a.parent == b.parent) {
        let mut children = group.to_vec();
        children.sort_by(|a, b| {
            b.draft_prob
                .total_cmp(&a.draft_prob)
                .then(a.token.cmp(&b.token))
        });
        children.truncate(width);
        union.extend(children);
    }
    union.sort_by(rank_order);
    union.truncate(width);
    union
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    TopK,
    Gate,
}

/// What happened while building one TALON layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Depth of the layer being built.
    pub depth: usize,
    pub rule: SelectionRule,
    pub pool: CandidatePool,
    pub outcome: GateOutcome,
}

fn root_token(ctx: &Context) -> Result<Token> {
    ctx.last()
        .ok_or_else(|| Error::Input("drafting needs a nonempty context".into()))
}

pub fn build_talon<M: SequenceModel + ?Sized>(
    model: &M,
    ctx: &Context,
    policy: &ExpansionPolicy,
) -> Result<DraftTree> {
    build_talon_traced(model, ctx, policy).map(|(tree, _)| tree)
}

/// [`build_talon`] that also returns every layer's pool and selection.
pub fn build_talon_traced<M: SequenceModel + ?Sized>(
    model: &M,
    ctx: &Context,
    policy: &ExpansionPolicy,
) -> Result<(DraftTree, Vec<LayerTrace>)> {
    let ExpansionPolicy::Talon {
        budget,
        width,
        mu,
        init_layers,
    } = *policy
    else {
        return Err(Error::Input(format!(
            "build_talon given a {} policy",
            policy.name()
        )));
    };
    policy.validate()?;

    let mut tree = DraftTree::new(root_token(ctx)?, budget)?;
    let mut parents = vec![NodeId::ROOT];
    let mut traces = Vec::new();
    while tree.len() < budget {
        let pool = gather_pool(&tree, &parents, model, ctx)?;
        if pool.is_empty() {
            break;
        }
        let depth = tree.depth() + 1;
        let (rule, outcome) = if depth <= init_layers {
            (
                SelectionRule::TopK,
                init_top_k(&pool, width, tree.remaining_budget())?,
            )
        } else {
            (
                SelectionRule::Gate,
                gate_layer(&pool, mu, tree.remaining_budget())?,
            )
        };
        let entries: Vec<LayerEntry> = outcome.kept.iter().map(Candidate::entry).collect();
        parents = tree.add_layer(&entries)?;
        traces.push(LayerTrace {
            depth,
            rule,
            pool,
            outcome,
        });
    }
    Ok((tree, traces))
}

/// The static grid before its final prune: `depth + 1` layers of at most
/// `width` nodes each.
pub fn expand_static<M: SequenceModel + ?Sized>(
    model: &M,
    ctx: &Context,
    width: usize,
    depth: usize,
) -> Result<DraftTree> {
    if width == 0 {
        return Err(Error::Parameter("static width must be ≥ 1".into()));
    }
    let capacity = width
        .checked_mul(depth + 1)
        .and_then(|n| n.checked_add(1))
        .ok_or_else(|| Error::Parameter("static grid too large".into()))?;
    let mut tree = DraftTree::new(root_token(ctx)?, capacity)?;
    let mut parents = vec![NodeId::ROOT];
    for _ in 0..=depth {
        let pool = gather_pool(&tree, &parents, model, ctx)?;
        if pool.is_empty() {
            break;
        }
        let entries: Vec<LayerEntry> = static_layer(&pool, width)
            .iter()
            .map(Candidate::entry)
            .collect();
        parents = tree.add_layer(&entries)?;
    }
    Ok(tree)
}

/// Keeps the `budget` best nodes by path probability. A node is only admitted
/// once its parent is, so the result is always a rooted tree.
pub fn prune_to_budget(tree: &DraftTree, budget: usize) -> Result<DraftTree> {
    if budget == 0 {
        return Err(Error::Parameter("prune budget must be positive".into()));
    }
    let nodes = tree.nodes();
    let mut order: Vec<usize> = (1..nodes.len()).collect();
    order.sort_by(|&a, &b| {
        let (a, b) = (&nodes[a], &nodes[b]);
        b.path_prob
            .total_cmp(&a.path_prob)
            .then(a.parent.cmp(&b.parent))
            .then(a.token.cmp(&b.token))
    });
    let mut keep = vec![false; nodes.len()];
    keep[0] = true;
    let mut count = 1;
    for i in order {
        if count == budget {
            break;
        }
        let parent = nodes[i].parent.expect("non-root node has a parent");
        if keep[parent.0] {
            keep[i] = true;
            count += 1;
        }
    }
    tree.retain(&keep, budget)
}

pub fn build_static<M: SequenceModel + ?Sized>(
    model: &M,
    ctx: &Context,
    policy: &ExpansionPolicy,
) -> Result<DraftTree> {
    let ExpansionPolicy::StaticEagle {
        width,
        depth,
        budget,
    } = *policy
    else {
        return Err(Error::Input(format!(
            "build_static given a {} policy",
            policy.name()
        )));
    };
    policy.validate()?;
    prune_to_budget(&expand_static(model, ctx, width, depth)?, budget)
}

/// A single path of `gamma` drafted tokens, argmax or sampled at each step.
pub fn build_chain<M, R>(
    model: &M,
    ctx: &Context,
    gamma: usize,
    rng: &mut R,
    greedy: bool,
) -> Result<DraftTree>
where
    M: SequenceModel + ?Sized,
    R: Rng + ?Sized,
{
    if gamma == 0 {
        return Err(Error::Parameter("chain gamma must be ≥ 1".into()));
    }
    let mut tree = DraftTree::new(root_token(ctx)?, gamma + 1)?;
    let mut tail = NodeId::ROOT;
    let mut context = ctx.tokens().to_vec();
    for _ in 0..gamma {
        let dist = model.next_dist(&context)?;
        let token = if greedy {
            argmax_token(&dist)
        } else {
            sample(&dist, rng)
        };
        let p = dist.prob(token);
        if !greedy {
            tree.set_proposal(tail, dist)?;
        }
        tail = tree.add_layer(&[(tail, token, p)])?[0];
        context.push(token);
    }
    Ok(tree)
}

/// Builds a tree for any policy. `rng` and `greedy` only matter for chains.
pub fn build<M, R>(
    model: &M,
    ctx: &Context,
    policy: &ExpansionPolicy,
    rng: &mut R,
    greedy: bool,
) -> Result<DraftTree>
where
    M: SequenceModel + ?Sized,
    R: Rng + ?Sized,
{
    match policy {
        ExpansionPolicy::Chain { gamma } => build_chain(model, ctx, *gamma, rng, greedy),
        ExpansionPolicy::StaticEagle { .. } => build_static(model, ctx, policy),
        ExpansionPolicy::Talon { .. } => build_talon(model, ctx, policy),
    }
}

/// Draft-model forward passes spent building `tree` under `policy`.
pub fn draft_forwards(tree: &DraftTree, policy: &ExpansionPolicy) -> Result<usize> {
    let mismatch = || Error::Input(format!("tree does not fit a {} policy", policy.name()));
    match *policy {
        ExpansionPolicy::Chain { gamma } => {
            let is_chain = tree.layers().iter().all(|l| l.len() == 1);
            if is_chain && tree.depth() == gamma {
                Ok(gamma)
            } else {
                Err(mismatch())
            }
        }
        ExpansionPolicy::StaticEagle { depth, budget, .. } => {
            if tree.depth() <= depth + 1 && tree.len() <= budget {
                Ok(depth + 1)
            } else {
                Err(mismatch())
            }
        }
        ExpansionPolicy::Talon { budget, .. } => {
            if tree.len() <= budget {
                Ok(tree.depth())
            } else {
                Err(mismatch())
            }
        }
    }
}
