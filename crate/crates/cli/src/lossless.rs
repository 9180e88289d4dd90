//! Empirical check of stochastic decoding against the exactly enumerated
//! target sequence law.

use std::collections::BTreeMap;

use rayon::prelude::*;
use talon_core::models::Token;
use talon_core::{decode, Context, DecodeConfig, Mode, SequenceModel};

use crate::config::{LosslessSpec, ModelSpec, RunConfig};
use crate::error::{CliError, Result};
use crate::run::prompt_rng;

pub const MAX_VOCAB: usize = 4;
pub const MAX_HORIZON: usize = 3;
const CHUNK: u64 = 4096;

pub type SequenceLaw = BTreeMap<Vec<Token>, f64>;

/// Probability of every length-`horizon` continuation of `prompt`.
pub fn enumerate_law(
    target: &dyn SequenceModel,
    prompt: &[Token],
    horizon: usize,
) -> Result<SequenceLaw> {
    let mut frontier = vec![(Vec::new(), 1.0)];
    for _ in 0..horizon {
        let mut next = Vec::new();
        for (seq, p) in frontier {
            let ctx: Vec<Token> = prompt.iter().chain(&seq).copied().collect();
            for (w, &q) in target.next_dist(&ctx)?.probs().iter().enumerate() {
                if q > 0.0 {
                    let mut s: Vec<Token> = seq.clone();
                    s.push(w as Token);
                    next.push((s, p * q));
                }
            }
        }
        frontier = next;
    }
    Ok(frontier.into_iter().collect())
}

pub fn total_variation(law: &SequenceLaw, counts: &BTreeMap<Vec<Token>, u64>, trials: u64) -> f64 {
    let n = trials as f64;
    let on_support: f64 = law
        .iter()
        .map(|(s, p)| (p - counts.get(s).copied().unwrap_or(0) as f64 / n).abs())
        .sum();
    let off_support: u64 = counts
        .iter()
        .filter(|(s, _)| !law.contains_key(*s))
        .map(|(_, c)| c)
        .sum();
    0.5 * (on_support + off_support as f64 / n)
}

/// Expected total variation of an exact sampler after `trials` draws, from
/// the normal approximation E|p̂ − p| ≈ sqrt(2p(1−p)/(πn)).
pub fn expected_noise(law: &SequenceLaw, trials: u64) -> f64 {
    let n = trials as f64;
    0.5 * law
        .values()
        .map(|p| (2.0 * p * (1.0 - p) / (std::f64::consts::PI * n)).sqrt())
        .sum::<f64>()
}

pub struct LosslessReport {
    pub tv: f64,
    pub threshold: f64,
    pub trials: u64,
    pub expected_noise: f64,
}

impl LosslessReport {
    pub fn passed(&self) -> bool {
        self.tv <= self.threshold
    }

    /// Too few trials for the threshold to mean anything.
    pub fn underpowered(&self) -> bool {
        self.expected_noise > self.threshold / 2.0
    }
}

fn check_enumerable(cfg: &RunConfig) -> Result<&LosslessSpec> {
    let spec = cfg
        .lossless
        .as_ref()
        .ok_or_else(|| CliError::Validation("lossless: section missing".into()))?;
    match &cfg.models.target {
        ModelSpec::Table {
            vocab_size, order, ..
        } if *order == 1 && *vocab_size <= MAX_VOCAB => {}
        _ => {
            return Err(CliError::Validation(format!(
                "models.target: must be an order-1 table with vocab_size ≤ {MAX_VOCAB}"
            )))
        }
    }
    if !matches!(
        &cfg.models.draft,
        ModelSpec::Table { order: 1, .. } | ModelSpec::Perturbed { .. }
    ) {
        return Err(CliError::Validation(
            "models.draft: must be an order-1 table or a perturbed target".into(),
        ));
    }
    if spec.horizon > MAX_HORIZON {
        return Err(CliError::Validation(format!(
            "lossless.horizon: must be ≤ {MAX_HORIZON}"
        )));
    }
    Ok(spec)
}

pub fn verify_lossless(cfg: &RunConfig) -> Result<LosslessReport> {
    let models = cfg.validate()?;
    let spec = check_enumerable(cfg)?;
    let law = enumerate_law(&*models.target, &spec.prompt, spec.horizon)?;
    let prompt = Context::new(spec.prompt.clone());
    let decode_cfg = DecodeConfig {
        mode: Mode::Stochastic,
        max_new_tokens: spec.horizon,
        stop_token: None,
    };
    let chunks = spec.trials.div_ceil(CHUNK);
    let partials = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = prompt_rng(cfg.decode.seed, c as usize);
            let n = CHUNK.min(spec.trials - c * CHUNK);
            let mut counts = BTreeMap::<Vec<Token>, u64>::new();
            for _ in 0..n {
                let (out, _) = decode(
                    &*models.draft,
                    &*models.target,
                    &prompt,
                    &cfg.policy,
                    &decode_cfg,
                    &mut rng,
                )?;
                let seq = out.tokens()[prompt.len()..prompt.len() + spec.horizon].to_vec();
                *counts.entry(seq).or_default() += 1;
            }
            Ok(counts)
        })
        .collect::<Result<Vec<_>, talon_core::Error>>()?;
    let mut counts = BTreeMap::new();
    for part in partials {
        for (s, c) in part {
            *counts.entry(s).or_insert(0) += c;
        }
    }
    Ok(LosslessReport {
        tv: total_variation(&law, &counts, spec.trials),
        threshold: spec.threshold,
        trials: spec.trials,
        expected_noise: expected_noise(&law, spec.trials),
    })
}
