//! Vocabularies and next-token distributions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token id, `0..vocab.size`.
pub type Token = u32;

/// Absolute tolerance on the unit sum of a [`Distribution`].
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Parameter(format!(
                "vocabulary size must be at least 2, got {size}"
            )));
        }
        if size > Token::MAX as usize {
            return Err(Error::Parameter(format!(
                "vocabulary size {size} does not fit a token id"
            )));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn contains(&self, token: Token) -> bool {
        (token as usize) < self.size
    }
}

/// A probability vector over token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates non-negativity and a unit sum within [`SUM_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Distribution("empty probability vector".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::Distribution(format!("entry {i} is {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Distribution(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Distribution(
                "weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if sum.is_nan() || sum <= 0.0 {
            return Err(Error::Distribution("weights have zero mass".into()));
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / sum).collect(),
        })
    }

    pub fn one_hot(size: usize, token: Token) -> Result<Self> {
        if token as usize >= size {
            return Err(Error::Input(format!(
                "token {token} outside vocabulary of size {size}"
            )));
        }
        let mut probs = vec![0.0; size];
        probs[token as usize] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Distribution("empty vocabulary".into()));
        }
        Ok(Self {
            probs: vec![1.0 / size as f64; size],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability of `token`; zero outside the support.
    pub fn prob(&self, token: Token) -> f64 {
        self.probs.get(token as usize).copied().unwrap_or(0.0)
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}

/// Inverse-CDF lookup over ascending token ids for a uniform draw `u ∈ [0, 1)`.
pub fn sample_with_uniform(dist: &Distribution, u: f64) -> Token {
    let mut cumulative = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
            cumulative += p;
            if u < cumulative {
                return i as Token;
            }
        }
    }
    // Rounding left the cumulative sum just under u.
    last_nonzero as Token
}

pub fn sample<R: Rng + ?Sized>(dist: &Distribution, rng: &mut R) -> Token {
    sample_with_uniform(dist, rng.random::<f64>())
}

/// Index of the largest probability, lowest id on ties.
pub fn argmax_token(dist: &Distribution) -> Token {
    let mut best = 0;
    for (i, &p) in dist.probs.iter().enumerate().skip(1) {
        if p > dist.probs[best] {
            best = i;
        }
    }
    best as Token
}

/// Zipf law over ranks `1..=vocab_size`: entry `r-1` is `r^-alpha / Σ s^-alpha`.
pub fn zipf_weights(vocab_size: usize, alpha: f64) -> Result<Distribution> {
    if vocab_size == 0 {
        return Err(Error::Parameter("vocab_size must be positive".into()));
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Parameter(format!(
            "zipf exponent must be positive, got {alpha}"
        )));
    }
    let weights: Vec<f64> = (1..=vocab_size).map(|r| (r as f64).powf(-alpha)).collect();
    Distribution::from_weights(weights)
}
