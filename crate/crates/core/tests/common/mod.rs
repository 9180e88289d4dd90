//! Test-only oracles: brute-force reimplementations of the tree builders,
//! exact enumeration of target sequence laws, and random model generators.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use talon_core::models::{Distribution, SequenceModel, TableModel, Token, Vocab};
use talon_core::tree::{DraftTree, NodeId};
use talon_core::ExpansionPolicy;

/// Root-exclusive token path → path probability.
pub type Paths = BTreeMap<Vec<Token>, f64>;

pub fn tree_paths(tree: &DraftTree) -> Paths {
    (0..tree.len())
        .map(|i| {
            let id = NodeId(i);
            (
                tree.path_tokens(id).unwrap(),
                tree.node(id).unwrap().path_prob,
            )
        })
        .collect()
}

fn joined(ctx: &[Token], path: &[Token]) -> Vec<Token> {
    ctx.iter().chain(path).copied().collect()
}

/// (parent position, token, path prob, path), compared with the documented
/// order: probability descending, parent position, token.
type Cand = (usize, Token, f64, Vec<Token>);

fn by_rank(a: &Cand, b: &Cand) -> std::cmp::Ordering {
    b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
}

fn children(
    model: &dyn SequenceModel,
    ctx: &[Token],
    pos: usize,
    path: &[Token],
    p: f64,
) -> Vec<Cand> {
    let dist = model.next_dist(&joined(ctx, path)).unwrap();
    let mut out = Vec::new();
    for w in 0..model.vocab().size() {
        let q = dist.probs()[w];
        if q > 0.0 && p * q >= 1e-300 {
            let mut child = path.to_vec();
            child.push(w as Token);
            out.push((pos, w as Token, p * q, child));
        }
    }
    out
}

/// Literal budget-driven expansion: top-K for the first `init_layers` layers,
/// relative-threshold gating after, clipped to the remaining budget.
pub fn oracle_talon(model: &dyn SequenceModel, ctx: &[Token], policy: &ExpansionPolicy) -> Paths {
    let ExpansionPolicy::Talon {
        budget,
        width,
        mu,
        init_layers,
    } = *policy
    else {
        panic!("not a talon policy");
    };
    let mut paths = Paths::new();
    paths.insert(vec![], 1.0);
    let mut layer: Vec<(Vec<Token>, f64)> = vec![(vec![], 1.0)];
    let mut depth = 0;
    while paths.len() < budget {
        depth += 1;
        let mut pool: Vec<Cand> = layer
            .iter()
            .enumerate()
            .flat_map(|(pos, (path, p))| children(model, ctx, pos, path, *p))
            .collect();
        if pool.is_empty() {
            break;
        }
        pool.sort_by(by_rank);
        let mut kept: Vec<Cand> = if depth <= init_layers {
            pool.into_iter().take(width).collect()
        } else {
            let anchor = pool.iter().map(|c| c.2).fold(0.0, f64::max);
            pool.into_iter().filter(|c| c.2 >= mu * anchor).collect()
        };
        kept.truncate(budget - paths.len());
        for c in &kept {
            paths.insert(c.3.clone(), c.2);
        }
        layer = kept.into_iter().map(|c| (c.3, c.2)).collect();
    }
    paths
}

/// Literal expand-then-shrink grid followed by a global top-N prune.
pub fn oracle_static(model: &dyn SequenceModel, ctx: &[Token], policy: &ExpansionPolicy) -> Paths {
    let ExpansionPolicy::StaticEagle {
        width,
        depth,
        budget,
    } = *policy
    else {
        panic!("not a static policy");
    };
    // Every node ever added: (global parent index, token, path prob, path).
    let mut all: Vec<(usize, Token, f64, Vec<Token>)> = vec![(usize::MAX, 0, 1.0, vec![])];
    let mut layer: Vec<usize> = vec![0];
    for _ in 0..=depth {
        let mut union: Vec<Cand> = Vec::new();
        for &g in &layer {
            let (path, p) = (all[g].3.clone(), all[g].2);
            let dist = model.next_dist(&joined(ctx, &path)).unwrap();
            let mut tokens: Vec<usize> =
                (0..dist.len()).filter(|&w| dist.probs()[w] > 0.0).collect();
            tokens.sort_by(|&a, &b| dist.probs()[b].total_cmp(&dist.probs()[a]).then(a.cmp(&b)));
            for w in tokens.into_iter().take(width) {
                let pp = p * dist.probs()[w];
                if pp >= 1e-300 {
                    let mut child = path.clone();
                    child.push(w as Token);
                    union.push((g, w as Token, pp, child));
                }
            }
        }
        if union.is_empty() {
            break;
        }
        union.sort_by(by_rank);
        union.truncate(width);
        layer = Vec::new();
        for c in union {
            layer.push(all.len());
            all.push(c);
        }
    }
    let mut order: Vec<usize> = (1..all.len()).collect();
    order.sort_by(|&a, &b| {
        all[b]
            .2
            .total_cmp(&all[a].2)
            .then(all[a].0.cmp(&all[b].0))
            .then(all[a].1.cmp(&all[b].1))
    });
    let mut kept = vec![false; all.len()];
    kept[0] = true;
    let mut count = 1;
    for i in order {
        if count == budget {
            break;
        }
        if kept[all[i].0] {
            kept[i] = true;
            count += 1;
        }
    }
    all.into_iter()
        .zip(kept)
        .filter(|(_, k)| *k)
        .map(|((_, _, p, path), _)| (path, p))
        .collect()
}

/// Exact law of the next `horizon` tokens under the target.
pub fn enumerate_sequences(
    target: &dyn SequenceModel,
    prompt: &[Token],
    horizon: usize,
) -> BTreeMap<Vec<Token>, f64> {
    let mut out = BTreeMap::new();
    let mut frontier = vec![(Vec::<Token>::new(), 1.0f64)];
    for _ in 0..horizon {
        let mut next = Vec::new();
        for (seq, p) in frontier {
            let dist = target.next_dist(&joined(prompt, &seq)).unwrap();
            for (w, &q) in dist.probs().iter().enumerate() {
                if q > 0.0 {
                    let mut s = seq.clone();
                    s.push(w as Token);
                    next.push((s, p * q));
                }
            }
        }
        frontier = next;
    }
    out.extend(frontier);
    out
}

pub fn total_variation(
    exact: &BTreeMap<Vec<Token>, f64>,
    counts: &BTreeMap<Vec<Token>, u64>,
    trials: u64,
) -> f64 {
    let mut keys: Vec<&Vec<Token>> = exact.keys().chain(counts.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| {
            let e = exact.get(k).copied().unwrap_or(0.0);
            let c = counts.get(k).copied().unwrap_or(0) as f64 / trials as f64;
            (e - c).abs()
        })
        .sum::<f64>()
}

/// A random distribution drawn from one of several shapes, some with exact
/// ties and some with zeros.
pub fn random_dist(rng: &mut ChaCha8Rng, v: usize) -> Distribution {
    match rng.random_range(0..5) {
        0 => Distribution::one_hot(v, rng.random_range(0..v) as Token).unwrap(),
        1 => {
            let mut w: Vec<f64> = (0..v)
                .map(|_| f64::from(rng.random_range(0..2u8)))
                .collect();
            w[rng.random_range(0..v)] = 1.0;
            Distribution::from_weights(w).unwrap()
        }
        2 => {
            let mut w: Vec<f64> = (0..v)
                .map(|_| f64::from(rng.random_range(0..5u8)))
                .collect();
            w[rng.random_range(0..v)] += 1.0;
            Distribution::from_weights(w).unwrap()
        }
        3 => {
            // Peaked: one dominant token.
            let mut w: Vec<f64> = (0..v).map(|_| rng.random::<f64>() * 0.05).collect();
            w[rng.random_range(0..v)] = 1.0;
            Distribution::from_weights(w).unwrap()
        }
        _ => Distribution::from_weights((0..v).map(|_| rng.random::<f64>() + 1e-3).collect())
            .unwrap(),
    }
}

pub fn random_table(rng: &mut ChaCha8Rng, v: usize, order: usize) -> TableModel {
    let vocab = Vocab::new(v).unwrap();
    TableModel::from_fn(vocab, order, |_| Ok(random_dist(rng, v))).unwrap()
}

pub fn random_talon(rng: &mut ChaCha8Rng) -> ExpansionPolicy {
    const MUS: [f64; 6] = [0.01, 0.03, 0.1, 0.3, 0.5, 1.0];
    ExpansionPolicy::Talon {
        budget: rng.random_range(2..=16),
        width: rng.random_range(1..=5),
        mu: MUS[rng.random_range(0..MUS.len())],
        init_layers: rng.random_range(1..=3),
    }
}

pub fn random_static(rng: &mut ChaCha8Rng) -> ExpansionPolicy {
    let width = rng.random_range(1..=4);
    ExpansionPolicy::StaticEagle {
        width,
        depth: rng.random_range(0..=3),
        budget: rng.random_range(width + 1..=20),
    }
}

pub fn random_policy(rng: &mut ChaCha8Rng) -> ExpansionPolicy {
    match rng.random_range(0..3) {
        0 => ExpansionPolicy::Chain {
            gamma: rng.random_range(1..=5),
        },
        1 => random_static(rng),
        _ => random_talon(rng),
    }
}

/// One generated oracle-suite instance.
pub struct Instance {
    pub model: TableModel,
    pub ctx: Vec<Token>,
}

/// Seeded suite of small table models: vocab 2..=6, order 1..=3.
pub fn table_suite(seed: u64, n: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v = rng.random_range(2..=6);
            let order = rng.random_range(1..=3usize.min(if v > 4 { 2 } else { 3 }));
            let model = random_table(&mut rng, v, order);
            let len = rng.random_range(1..=3);
            let ctx = (0..len).map(|_| rng.random_range(0..v) as Token).collect();
            Instance { model, ctx }
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
