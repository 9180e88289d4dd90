//! Lossless token-tree verification and the draft-and-verify decode loop.
//!
//! Greedy mode walks the tree following the target's argmax. Stochastic mode
//! runs a recursive rejection trial at every visited node:
//!
//! * children that were *sampled* from a recorded draft distribution `p` (a
//!   stochastic chain) are accepted with probability `min(1, q(w) / p(w))`,
//!   and a rejection replaces `q` by the residual `norm(max(q − p, 0))`;
//! * children that were *selected* deterministically (top-K, gating, pruning)
//!   are tried in descending draft probability; the proposal is then a point
//!   mass, so child `w` is accepted with probability `q(w)` and a rejection
//!   zeroes `q(w)` and renormalizes.
//!
//! Either way the committed token at each position is distributed exactly as
//! the target's next-token distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::builders::{self, ExpansionPolicy};
use crate::dist::{argmax_token, sample, Distribution, Token};
use crate::error::{Error, Result};
use crate::metrics::RunMetrics;
use crate::models::{Context, SequenceModel};
use crate::tree::{DraftTree, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcceptanceRecord {
    pub node: NodeId,
    pub depth: usize,
    /// 1-based rank of the node's draft probability among its siblings.
    pub rank: usize,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationOutcome {
    /// Accepted nodes in depth order, root excluded.
    pub accepted_path: Vec<NodeId>,
    /// Target token committed after the last accepted node.
    pub correction_token: Token,
    pub accepted_count: usize,
    /// One record per child of every visited node.
    pub records: Vec<AcceptanceRecord>,
}

impl VerificationOutcome {
    /// Accepted tokens followed by the correction token.
    pub fn committed_tokens(&self, tree: &DraftTree) -> Result<Vec<Token>> {
        let mut tokens = Vec::with_capacity(self.accepted_count + 1);
        for id in &self.accepted_path {
            tokens.push(tree.node(*id)?.token);
        }
        tokens.push(self.correction_token);
        Ok(tokens)
    }

    /// Cuts the outcome at the first accepted `stop` token, which then becomes
    /// the correction token.
    fn truncate_at_stop(&mut self, tree: &DraftTree, stop: Token) -> Result<()> {
        for (i, id) in self.accepted_path.iter().enumerate() {
            if tree.node(*id)?.token == stop {
                self.accepted_path.truncate(i);
                self.accepted_count = i;
                self.correction_token = stop;
                break;
            }
        }
        Ok(())
    }
}

/// Children of `id` in trial order: descending draft probability, then token.
fn trial_order(tree: &DraftTree, id: NodeId) -> Result<Vec<NodeId>> {
    let mut children = tree.children(id)?.to_vec();
    let nodes = tree.nodes();
    children.sort_by(|a, b| {
        let (a, b) = (&nodes[a.0], &nodes[b.0]);
        b.draft_prob
            .total_cmp(&a.draft_prob)
            .then(a.token.cmp(&b.token))
    });
    Ok(children)
}

fn check_vocab<M: SequenceModel + ?Sized>(tree: &DraftTree, target: &M) -> Result<()> {
    let vocab = target.vocab();
    match tree.nodes().iter().find(|n| !vocab.contains(n.token)) {
        Some(n) => Err(Error::Input(format!(
            "tree token {} outside target vocabulary of size {}",
            n.token,
            vocab.size()
        ))),
        None => Ok(()),
    }
}

fn record_children(
    records: &mut Vec<AcceptanceRecord>,
    tree: &DraftTree,
    order: &[NodeId],
    accepted: Option<NodeId>,
) {
    for (rank, &child) in order.iter().enumerate() {
        records.push(AcceptanceRecord {
            node: child,
            depth: tree.nodes()[child.0].depth,
            rank: rank + 1,
            accepted: Some(child) == accepted,
        });
    }
}

pub fn verify_greedy<M: SequenceModel + ?Sized>(
    tree: &DraftTree,
    target: &M,
    ctx: &Context,
) -> Result<VerificationOutcome> {
    check_vocab(tree, target)?;
    let mut context = ctx.tokens().to_vec();
    let mut node = NodeId::ROOT;
    let mut accepted_path = Vec::new();
    let mut records = Vec::new();
    loop {
        let best = argmax_token(&target.next_dist(&context)?);
        let order = trial_order(tree, node)?;
        let hit = order
            .iter()
            .copied()
            .find(|c| tree.nodes()[c.0].token == best);
        record_children(&mut records, tree, &order, hit);
        match hit {
            Some(child) => {
                accepted_path.push(child);
                context.push(best);
                node = child;
            }
            None => {
                return Ok(VerificationOutcome {
                    accepted_count: accepted_path.len(),
                    accepted_path,
                    correction_token: best,
                    records,
                })
            }
        }
    }
}

/// `norm(max(q − p, 0))`, or `None` when `q ≤ p` everywhere.
pub fn residual(q: &Distribution, p: &Distribution) -> Option<Distribution> {
    let weights: Vec<f64> = q
        .probs()
        .iter()
        .zip(p.probs())
        .map(|(a, b)| (a - b).max(0.0))
        .collect();
    Distribution::from_weights(weights).ok()
}

/// `q` with `token` removed and the rest renormalized.
fn without(q: &Distribution, token: Token) -> Option<Distribution> {
    let mut weights = q.probs().to_vec();
    weights[token as usize] = 0.0;
    Distribution::from_weights(weights).ok()
}

pub fn verify_stochastic<M, R>(
    tree: &DraftTree,
    target: &M,
    ctx: &Context,
    rng: &mut R,
) -> Result<VerificationOutcome>
where
    M: SequenceModel + ?Sized,
    R: Rng + ?Sized,
{
    check_vocab(tree, target)?;
    if let Some(n) = tree
        .nodes()
        .iter()
        .skip(1)
        .find(|n| n.draft_prob.is_nan() || n.draft_prob <= 0.0)
    {
        return Err(Error::Contract(format!(
            "node {} carries draft probability {}",
            n.id, n.draft_prob
        )));
    }

    let mut context = ctx.tokens().to_vec();
    let mut node = NodeId::ROOT;
    let mut accepted_path = Vec::new();
    let mut records = Vec::new();
    loop {
        let mut q = target.next_dist(&context)?;
        let proposal = tree.proposal(node);
        let order = match proposal {
            // Sampled children are tried in draw order.
            Some(_) => tree.children(node)?.to_vec(),
            None => trial_order(tree, node)?,
        };
        let mut hit = None;
        for &child in &order {
            let token = tree.nodes()[child.0].token;
            let u: f64 = rng.random();
            match proposal {
                Some(p) => {
                    let ratio = q.prob(token) / p.prob(token);
                    if u < ratio.min(1.0) {
                        hit = Some(child);
                        break;
                    }
                    if let Some(r) = residual(&q, p) {
                        q = r;
                    }
                }
                None => {
                    if u < q.prob(token) {
                        hit = Some(child);
                        break;
                    }
                    if let Some(r) = without(&q, token) {
                        q = r;
                    }
                }
            }
        }
        record_children(&mut records, tree, &order, hit);
        match hit {
            Some(child) => {
                accepted_path.push(child);
                context.push(tree.nodes()[child.0].token);
                node = child;
            }
            None => {
                return Ok(VerificationOutcome {
                    accepted_count: accepted_path.len(),
                    accepted_path,
                    correction_token: sample(&q, rng),
                    records,
                })
            }
        }
    }
}

/// `ctx` extended by the accepted tokens and the correction token.
pub fn commit(ctx: &Context, outcome: &VerificationOutcome, tree: &DraftTree) -> Result<Context> {
    if outcome.accepted_count != outcome.accepted_path.len() {
        return Err(Error::Input(
            "accepted_count disagrees with accepted_path".into(),
        ));
    }
    let mut expected_parent = NodeId::ROOT;
    for id in &outcome.accepted_path {
        let node = tree
            .node(*id)
            .map_err(|_| Error::Input(format!("outcome names {id}, absent from the tree")))?;
        if node.parent != Some(expected_parent) {
            return Err(Error::Input(format!(
                "{id} does not continue the accepted chain"
            )));
        }
        expected_parent = *id;
    }
    let mut out = ctx.clone();
    out.extend_from_slice(&outcome.committed_tokens(tree)?);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Greedy,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeConfig {
    pub mode: Mode,
    pub max_new_tokens: usize,
    pub stop_token: Option<Token>,
}

/// Repeats draft → verify → commit until `max_new_tokens` are committed or the
/// stop token is. The last step may overshoot `max_new_tokens`.
pub fn decode<D, T, R>(
    draft: &D,
    target: &T,
    prompt: &Context,
    policy: &ExpansionPolicy,
    cfg: &DecodeConfig,
    rng: &mut R,
) -> Result<(Context, RunMetrics)>
where
    D: SequenceModel + ?Sized,
    T: SequenceModel + ?Sized,
    R: Rng + ?Sized,
{
    if draft.vocab() != target.vocab() {
        return Err(Error::Input(format!(
            "draft vocabulary {} differs from target vocabulary {}",
            draft.vocab().size(),
            target.vocab().size()
        )));
    }
    if cfg.max_new_tokens == 0 {
        return Err(Error::Parameter("max_new_tokens must be ≥ 1".into()));
    }
    policy.validate()?;

    let greedy = cfg.mode == Mode::Greedy;
    let mut ctx = prompt.clone();
    let mut metrics = RunMetrics::default();
    let mut generated = 0;
    while generated < cfg.max_new_tokens {
        let tree = builders::build(draft, &ctx, policy, rng, greedy)?;
        let forwards = builders::draft_forwards(&tree, policy)?;
        let mut outcome = match cfg.mode {
            Mode::Greedy => verify_greedy(&tree, target, &ctx)?,
            Mode::Stochastic => verify_stochastic(&tree, target, &ctx, rng)?,
        };
        if let Some(stop) = cfg.stop_token {
            outcome.truncate_at_stop(&tree, stop)?;
        }
        metrics.record_step(&outcome, forwards);
        ctx = commit(&ctx, &outcome, &tree)?;
        generated += outcome.accepted_count + 1;
        if cfg.stop_token == Some(outcome.correction_token) {
            break;
        }
    }
    Ok((ctx, metrics))
}

/// Plain target-only greedy decoding: `n` tokens, or fewer if `stop` appears.
pub fn autoregressive_greedy<T: SequenceModel + ?Sized>(
    target: &T,
    prompt: &Context,
    n: usize,
    stop: Option<Token>,
) -> Result<Vec<Token>> {
    let mut context = prompt.tokens().to_vec();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = argmax_token(&target.next_dist(&context)?);
        context.push(t);
        out.push(t);
        if stop == Some(t) {
            break;
        }
    }
    Ok(out)
}
