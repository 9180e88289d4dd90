//! JSON run and sweep configurations.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use talon_core::models::{Distribution, PerturbedPair, TableModel, Token, Vocab, ZipfModel};
use talon_core::{ExpansionPolicy, Mode, SequenceModel, SpeedupModel};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub models: ModelPair,
    pub policy: ExpansionPolicy,
    pub decode: DecodeSpec,
    #[serde(default = "default_c")]
    pub speedup_c: f64,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lossless: Option<LosslessSpec>,
}

fn default_c() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPair {
    pub target: ModelSpec,
    pub draft: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub context: Vec<Token>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Table {
        vocab_size: usize,
        order: usize,
        #[serde(default)]
        entries: Vec<TableEntry>,
        /// Uniform when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fallback: Option<Vec<f64>>,
    },
    Zipf {
        vocab_size: usize,
        alpha: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "yes")]
        permute_per_context: bool,
    },
    /// Draft only: the target blended with context-keyed noise.
    Perturbed {
        beta: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSpec {
    pub mode: Mode,
    pub max_new_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_token: Option<Token>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub num_prompts: usize,
    #[serde(default = "four")]
    pub prompt_len: usize,
}

fn one() -> usize {
    1
}
fn four() -> usize {
    4
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub funnel_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plots_dir: Option<PathBuf>,
}

/// Settings for the exact output-law check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LosslessSpec {
    pub trials: u64,
    #[serde(default = "three")]
    pub horizon: usize,
    #[serde(default = "tv_threshold")]
    pub threshold: f64,
    #[serde(default = "zero_prompt")]
    pub prompt: Vec<Token>,
}

fn three() -> usize {
    3
}
fn tv_threshold() -> f64 {
    0.02
}
fn zero_prompt() -> Vec<Token> {
    vec![0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "mu")]
    Mu,
    #[serde(rename = "N")]
    Budget,
    #[serde(rename = "init_layers")]
    InitLayers,
    #[serde(rename = "beta")]
    Beta,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Mu => "mu",
            Axis::Budget => "N",
            Axis::InitLayers => "init_layers",
            Axis::Beta => "beta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Base run config, relative to the sweep file.
    pub base: PathBuf,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub sweep_csv: PathBuf,
    /// δ-τ table, beta sweeps only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_csv: Option<PathBuf>,
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {msg}"))
}

impl ModelSpec {
    pub fn vocab_size(&self) -> Option<usize> {
        match self {
            ModelSpec::Table { vocab_size, .. } | ModelSpec::Zipf { vocab_size, .. } => {
                Some(*vocab_size)
            }
            ModelSpec::Perturbed { .. } => None,
        }
    }

    fn build_base(&self, field: &str) -> Result<Arc<dyn SequenceModel>> {
        let vocab =
            |v: usize| Vocab::new(v).map_err(|e| invalid(&format!("{field}.vocab_size"), e));
        Ok(match self {
            ModelSpec::Table {
                vocab_size,
                order,
                entries,
                fallback,
            } => {
                let v = vocab(*vocab_size)?;
                let fb = match fallback {
                    Some(p) => Distribution::new(p.clone()),
                    None => Distribution::uniform(*vocab_size),
                }
                .map_err(|e| invalid(&format!("{field}.fallback"), e))?;
                let mut model = TableModel::new(v, *order, fb)
                    .map_err(|e| invalid(&format!("{field}.order"), e))?;
                for (i, entry) in entries.iter().enumerate() {
                    let at = format!("{field}.entries[{i}]");
                    let dist =
                        Distribution::new(entry.probs.clone()).map_err(|e| invalid(&at, e))?;
                    model
                        .insert(entry.context.clone(), dist)
                        .map_err(|e| invalid(&at, e))?;
                }
                Arc::new(model)
            }
            ModelSpec::Zipf {
                vocab_size,
                alpha,
                seed,
                permute_per_context,
            } => Arc::new(
                ZipfModel::new(vocab(*vocab_size)?, *alpha, *seed, *permute_per_context)
                    .map_err(|e| invalid(&format!("{field}.alpha"), e))?,
            ),
            ModelSpec::Perturbed { .. } => {
                return Err(invalid(
                    field,
                    "a perturbed model needs a target to perturb; use it as the draft",
                ))
            }
        })
    }
}

/// The instantiated target and draft.
pub struct Models {
    pub target: Arc<dyn SequenceModel>,
    pub draft: Arc<dyn SequenceModel>,
}

impl ModelPair {
    pub fn build(&self) -> Result<Models> {
        let target = self.target.build_base("models.target")?;
        let draft = match &self.draft {
            ModelSpec::Perturbed { beta, seed } => Arc::new(
                PerturbedPair::new(target.clone(), *beta, *seed)
                    .map_err(|e| invalid("models.draft.beta", e))?,
            ) as Arc<dyn SequenceModel>,
            spec => spec.build_base("models.draft")?,
        };
        if draft.vocab() != target.vocab() {
            return Err(invalid(
                "models.draft.vocab_size",
                format!(
                    "{} differs from the target's {}",
                    draft.vocab().size(),
                    target.vocab().size()
                ),
            ));
        }
        Ok(Models { target, draft })
    }

    pub fn beta(&self) -> Option<f64> {
        match self.draft {
            ModelSpec::Perturbed { beta, .. } => Some(beta),
            _ => None,
        }
    }
}

impl RunConfig {
    /// Checks everything that can be checked without running, and builds
    /// the models.
    pub fn validate(&self) -> Result<Models> {
        let models = self.models.build()?;
        self.policy.validate().map_err(|e| invalid("policy", e))?;
        let d = &self.decode;
        if d.max_new_tokens == 0 {
            return Err(invalid("decode.max_new_tokens", "must be ≥ 1"));
        }
        if d.num_prompts == 0 {
            return Err(invalid("decode.num_prompts", "must be ≥ 1"));
        }
        if d.prompt_len == 0 {
            return Err(invalid("decode.prompt_len", "must be ≥ 1"));
        }
        let vocab = models.target.vocab();
        if let Some(t) = d.stop_token.filter(|t| !vocab.contains(*t)) {
            return Err(invalid(
                "decode.stop_token",
                format!("{t} outside vocabulary of {}", vocab.size()),
            ));
        }
        SpeedupModel::new(self.speedup_c).map_err(|e| invalid("speedup_c", e))?;
        if let Some(l) = &self.lossless {
            if l.trials == 0 {
                return Err(invalid("lossless.trials", "must be ≥ 1"));
            }
            if l.horizon == 0 {
                return Err(invalid("lossless.horizon", "must be ≥ 1"));
            }
            if !(l.threshold > 0.0 && l.threshold <= 1.0) {
                return Err(invalid("lossless.threshold", "must lie in (0, 1]"));
            }
            if l.prompt.is_empty() || l.prompt.iter().any(|t| !vocab.contains(*t)) {
                return Err(invalid(
                    "lossless.prompt",
                    "must be nonempty with in-vocabulary tokens",
                ));
            }
        }
        Ok(models)
    }

    /// Copy with one axis overridden.
    pub fn with_axis(&self, axis: Axis, value: f64) -> Result<RunConfig> {
        let mut cfg = self.clone();
        let field = format!("values[{}={value}]", axis.name());
        let as_count = |v: f64, min: f64| -> Result<usize> {
            if v.fract() != 0.0 || v < min {
                Err(invalid(
                    &field,
                    format!("{} takes integers ≥ {min}", axis.name()),
                ))
            } else {
                Ok(v as usize)
            }
        };
        match (axis, &mut cfg.policy) {
            (Axis::Mu, ExpansionPolicy::Talon { mu, .. }) => {
                if !(value > 0.0 && value <= 1.0) {
                    return Err(invalid(&field, "mu must lie in (0, 1]"));
                }
                *mu = value;
            }
            (Axis::Budget, ExpansionPolicy::Talon { budget, .. })
            | (Axis::Budget, ExpansionPolicy::StaticEagle { budget, .. }) => {
                *budget = as_count(value, 2.0)?
            }
            (Axis::InitLayers, ExpansionPolicy::Talon { init_layers, .. }) => {
                *init_layers = as_count(value, 1.0)?
            }
            (Axis::Beta, _) => match &mut cfg.models.draft {
                ModelSpec::Perturbed { beta, .. } => {
                    if !(0.0..=1.0).contains(&value) {
                        return Err(invalid(&field, "beta must lie in [0, 1]"));
                    }
                    *beta = value;
                }
                _ => return Err(invalid("axis", "a beta sweep needs a perturbed draft")),
            },
            (axis, policy) => {
                return Err(invalid(
                    "axis",
                    format!(
                        "{} does not apply to a {} policy",
                        axis.name(),
                        policy.name()
                    ),
                ))
            }
        }
        Ok(cfg)
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(invalid("values", "must list at least one value"));
        }
        if self.curve_csv.is_some() && self.axis != Axis::Beta {
            return Err(invalid("curve_csv", "only beta sweeps produce a δ-τ curve"));
        }
        Ok(())
    }
}
