//! Synthetic next-token sources standing in for draft and target LLMs.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use crate::dist::{
    argmax_token, sample, sample_with_uniform, zipf_weights, Distribution, Token, Vocab,
};
use crate::error::{Error, Result};

/// Zipf exponent of the noise component mixed into a [`PerturbedPair`] draft.
pub const NOISE_ALPHA: f64 = 0.7;

/// The conditioning prefix: prompt plus committed output.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Context(Vec<Token>);

impl Context {
    pub fn new(tokens: Vec<Token>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<Token> {
        self.0.last().copied()
    }

    pub fn push(&mut self, token: Token) {
        self.0.push(token);
    }

    pub fn extend_from_slice(&mut self, tokens: &[Token]) {
        self.0.extend_from_slice(tokens);
    }

    /// This context followed by `suffix`.
    pub fn joined(&self, suffix: &[Token]) -> Vec<Token> {
        let mut v = Vec::with_capacity(self.0.len() + suffix.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(suffix);
        v
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.0
    }
}

impl From<Vec<Token>> for Context {
    fn from(tokens: Vec<Token>) -> Self {
        Self(tokens)
    }
}

/// A deterministic map from context to next-token distribution.
pub trait SequenceModel: Send + Sync {
    fn vocab(&self) -> Vocab;

    fn next_dist(&self, ctx: &[Token]) -> Result<Distribution>;
}

impl<M: SequenceModel + ?Sized> SequenceModel for Arc<M> {
    fn vocab(&self) -> Vocab {
        (**self).vocab()
    }

    fn next_dist(&self, ctx: &[Token]) -> Result<Distribution> {
        (**self).next_dist(ctx)
    }
}

impl<M: SequenceModel + ?Sized> SequenceModel for &M {
    fn vocab(&self) -> Vocab {
        (**self).vocab()
    }

    fn next_dist(&self, ctx: &[Token]) -> Result<Distribution> {
        (**self).next_dist(ctx)
    }
}

fn check_tokens(vocab: Vocab, ctx: &[Token]) -> Result<()> {
    match ctx.iter().find(|t| !vocab.contains(**t)) {
        Some(t) => Err(Error::Input(format!(
            "token {t} outside vocabulary of size {}",
            vocab.size()
        ))),
        None => Ok(()),
    }
}

fn check_dist(vocab: Vocab, dist: &Distribution) -> Result<()> {
    if dist.len() != vocab.size() {
        return Err(Error::Distribution(format!(
            "distribution has {} entries for vocabulary of size {}",
            dist.len(),
            vocab.size()
        )));
    }
    Ok(())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable across platforms and releases, unlike `std::hash`.
pub fn context_hash(ctx: &[Token], seed: u64) -> u64 {
    let mut h = splitmix64(seed ^ (ctx.len() as u64).rotate_left(32));
    for &t in ctx {
        h = splitmix64(h ^ u64::from(t));
    }
    h
}

/// Places rank weights onto tokens through a permutation keyed by `key`.
fn permuted(base: &[f64], key: u64) -> Vec<f64> {
    let mut tokens: Vec<usize> = (0..base.len()).collect();
    tokens.shuffle(&mut ChaCha8Rng::seed_from_u64(key));
    let mut probs = vec![0.0; base.len()];
    for (rank, &token) in tokens.iter().enumerate() {
        probs[token] = base[rank];
    }
    probs
}

/// Order-`m` lookup table over context suffixes.
///
/// Contexts shorter than `m` are left-padded with the begin marker.
#[derive(Debug, Clone)]
pub struct TableModel {
    vocab: Vocab,
    order: usize,
    table: HashMap<Vec<Token>, Distribution>,
    fallback: Distribution,
    begin: Token,
}

impl TableModel {
    pub fn new(vocab: Vocab, order: usize, fallback: Distribution) -> Result<Self> {
        if order == 0 {
            return Err(Error::Parameter("table order must be at least 1".into()));
        }
        check_dist(vocab, &fallback)?;
        Ok(Self {
            vocab,
            order,
            table: HashMap::new(),
            fallback,
            begin: 0,
        })
    }

    /// Fills every one of the `V^order` suffixes from `f`.
    pub fn from_fn<F>(vocab: Vocab, order: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(&[Token]) -> Result<Distribution>,
    {
        let fallback = Distribution::uniform(vocab.size())?;
        let mut model = Self::new(vocab, order, fallback)?;
        let mut suffix = vec![0 as Token; order];
        loop {
            let dist = f(&suffix)?;
            model.insert(suffix.clone(), dist)?;
            // Odometer increment over the suffix.
            let mut i = order;
            loop {
                if i == 0 {
                    return Ok(model);
                }
                i -= 1;
                suffix[i] += 1;
                if (suffix[i] as usize) < vocab.size() {
                    break;
                }
                suffix[i] = 0;
            }
        }
    }

    pub fn with_begin_token(mut self, begin: Token) -> Result<Self> {
        check_tokens(self.vocab, &[begin])?;
        self.begin = begin;
        Ok(self)
    }

    pub fn insert(&mut self, suffix: Vec<Token>, dist: Distribution) -> Result<()> {
        if suffix.len() != self.order {
            return Err(Error::Input(format!(
                "suffix of length {} for order-{} table",
                suffix.len(),
                self.order
            )));
        }
        check_tokens(self.vocab, &suffix)?;
        check_dist(self.vocab, &dist)?;
        self.table.insert(suffix, dist);
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn begin_token(&self) -> Token {
        self.begin
    }

    pub fn fallback(&self) -> &Distribution {
        &self.fallback
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Vec<Token>, &Distribution)> {
        self.table.iter()
    }

    fn key(&self, ctx: &[Token]) -> Vec<Token> {
        let take = ctx.len().min(self.order);
        let mut key = vec![self.begin; self.order - take];
        key.extend_from_slice(&ctx[ctx.len() - take..]);
        key
    }
}

impl SequenceModel for TableModel {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn next_dist(&self, ctx: &[Token]) -> Result<Distribution> {
        check_tokens(self.vocab, ctx)?;
        Ok(self
            .table
            .get(&self.key(ctx))
            .unwrap_or(&self.fallback)
            .clone())
    }
}

/// Zipf-shaped next-token law, optionally reshuffled per context.
#[derive(Debug, Clone)]
pub struct ZipfModel {
    alpha: f64,
    vocab: Vocab,
    seed: u64,
    permute_per_context: bool,
    base: Vec<f64>,
}

impl ZipfModel {
    pub fn new(vocab: Vocab, alpha: f64, seed: u64, permute_per_context: bool) -> Result<Self> {
        let base = zipf_weights(vocab.size(), alpha)?.into_probs();
        Ok(Self {
            alpha,
            vocab,
            seed,
            permute_per_context,
            base,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl SequenceModel for ZipfModel {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn next_dist(&self, ctx: &[Token]) -> Result<Distribution> {
        check_tokens(self.vocab, ctx)?;
        let probs = if self.permute_per_context {
            permuted(&self.base, context_hash(ctx, self.seed))
        } else {
            self.base.clone()
        };
        Distribution::new(probs)
    }
}

/// A draft model derived from a target by mixing in context-keyed noise:
/// `beta · target + (1 − beta) · noise`, renormalized.
#[derive(Clone)]
pub struct PerturbedPair {
    target: Arc<dyn SequenceModel>,
    beta: f64,
    noise_seed: u64,
    noise_base: Vec<f64>,
}

impl PerturbedPair {
    pub fn new(target: Arc<dyn SequenceModel>, beta: f64, noise_seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Parameter(format!(
                "beta must lie in [0, 1], got {beta}"
            )));
        }
        let noise_base = zipf_weights(target.vocab().size(), NOISE_ALPHA)?.into_probs();
        Ok(Self {
            target,
            beta,
            noise_seed,
            noise_base,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn target(&self) -> &Arc<dyn SequenceModel> {
        &self.target
    }
}

impl std::fmt::Debug for PerturbedPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerturbedPair")
            .field("beta", &self.beta)
            .field("noise_seed", &self.noise_seed)
            .finish_non_exhaustive()
    }
}

impl SequenceModel for PerturbedPair {
    fn vocab(&self) -> Vocab {
        self.target.vocab()
    }

    fn next_dist(&self, ctx: &[Token]) -> Result<Distribution> {
        let target = self.target.next_dist(ctx)?;
        if self.beta == 1.0 {
            return Ok(target);
        }
        let noise = permuted(&self.noise_base, context_hash(ctx, self.noise_seed));
        let mixed = target
            .probs()
            .iter()
            .zip(&noise)
            .map(|(t, n)| self.beta * t + (1.0 - self.beta) * n)
            .collect();
        Distribution::from_weights(mixed)
    }
}
