//! Single-layer expansion latency: the static grid's dual top-K against
//! confidence gating, on Zipf-shaped next-token distributions.

use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::builders::{rank_order, Candidate, CandidatePool};
use crate::dist::{zipf_weights, Token};
use crate::error::{Error, Result};
use crate::metrics::write_csv_file;
use crate::models::context_hash;
use crate::tree::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub vocab_sizes: Vec<usize>,
    pub alphas: Vec<f64>,
    pub width: usize,
    pub mu: f64,
    pub warmup_iters: usize,
    pub timed_iters: usize,
    /// Parents expanded per simulated layer.
    pub parents: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            vocab_sizes: vec![32_000, 128_000, 152_000],
            alphas: vec![0.7, 1.35, 5.0],
            width: 10,
            mu: 0.03,
            warmup_iters: 20,
            timed_iters: 100,
            parents: 10,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Parameter(m.to_string()));
        if self.vocab_sizes.is_empty() || self.alphas.is_empty() {
            return fail("vocabulary and alpha lists must be nonempty");
        }
        if self.warmup_iters == 0 || self.timed_iters == 0 {
            return fail("iteration counts must be ≥ 1");
        }
        if self.width == 0 || self.parents == 0 {
            return fail("K and the parent count must be ≥ 1");
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return fail("mu must lie in (0, 1]");
        }
        if let Some(v) = self.vocab_sizes.iter().find(|v| **v < self.width.max(2)) {
            return Err(Error::Parameter(format!("vocabulary {v} smaller than K")));
        }
        if self.alphas.iter().any(|a| a.is_nan() || *a <= 0.0) {
            return fail("alphas must be positive");
        }
        Ok(())
    }
}

/// One simulated layer: parent path probabilities and each parent's
/// next-token distribution.
#[derive(Debug, Clone)]
pub struct LayerInput {
    pub parent_probs: Vec<f64>,
    pub dists: Vec<Vec<f64>>,
}

impl LayerInput {
    /// Zipf rank weights placed on tokens by a seeded permutation per parent;
    /// parent path probabilities follow the same Zipf law over parents.
    pub fn synthesize(vocab_size: usize, alpha: f64, parents: usize, seed: u64) -> Result<Self> {
        let base = zipf_weights(vocab_size, alpha)?.into_probs();
        let parent_probs = if parents == 1 {
            vec![1.0]
        } else {
            zipf_weights(parents, alpha)?.into_probs()
        };
        let dists = (0..parents)
            .map(|i| {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut tokens: Vec<usize> = (0..vocab_size).collect();
                let key = context_hash(&[i as Token], seed);
                tokens.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(key));
                let mut probs = vec![0.0; vocab_size];
                for (rank, &t) in tokens.iter().enumerate() {
                    probs[t] = base[rank];
                }
                probs
            })
            .collect();
        Ok(Self {
            parent_probs,
            dists,
        })
    }

    /// The same layer as a builders-module candidate pool, parent `i` as
    /// node `i`.
    pub fn to_pool(&self) -> CandidatePool {
        let mut entries = Vec::new();
        for (i, (pp, dist)) in self.parent_probs.iter().zip(&self.dists).enumerate() {
            for (t, &p) in dist.iter().enumerate() {
                if p > 0.0 {
                    entries.push(Candidate {
                        parent: NodeId(i),
                        token: t as Token,
                        path_prob: pp * p,
                        draft_prob: p,
                    });
                }
            }
        }
        CandidatePool { entries }
    }
}

/// Top-`width` children per parent by partial selection, then top-`width`
/// over their union. Output in rank order.
pub fn dual_topk_kernel(input: &LayerInput, width: usize) -> Vec<Candidate> {
    let mut union = Vec::with_capacity(width * input.dists.len());
    for (i, (pp, dist)) in input.parent_probs.iter().zip(&input.dists).enumerate() {
        let mut idx: Vec<u32> = (0..dist.len() as u32)
            .filter(|&t| dist[t as usize] > 0.0)
            .collect();
        let by_prob = |a: &u32, b: &u32| {
            dist[*b as usize]
                .total_cmp(&dist[*a as usize])
                .then(a.cmp(b))
        };
        let k = width.min(idx.len());
        if k == 0 {
            continue;
        }
        if k < idx.len() {
            idx.select_nth_unstable_by(k - 1, by_prob);
        }
        union.extend(idx[..k].iter().map(|&t| Candidate {
            parent: NodeId(i),
            token: t,
            path_prob: pp * dist[t as usize],
            draft_prob: dist[t as usize],
        }));
    }
    union.sort_by(rank_order);
    union.truncate(width);
    union
}

/// Threshold mask plus index gather: every candidate with
/// `path_prob ≥ mu · max path_prob`, in (parent, token) order. No ranking.
pub fn gated_kernel(input: &LayerInput, mu: f64) -> Vec<Candidate> {
    let mut anchor = 0.0f64;
    for (pp, dist) in input.parent_probs.iter().zip(&input.dists) {
        for &p in dist {
            anchor = anchor.max(pp * p);
        }
    }
    let threshold = mu * anchor;
    let mut kept = Vec::new();
    for (i, (pp, dist)) in input.parent_probs.iter().zip(&input.dists).enumerate() {
        for (t, &p) in dist.iter().enumerate() {
            let score = pp * p;
            if p > 0.0 && score >= threshold {
                kept.push(Candidate {
                    parent: NodeId(i),
                    token: t as Token,
                    path_prob: score,
                    draft_prob: p,
                });
            }
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    DualTopk,
    Gated,
}

impl Kernel {
    pub fn name(&self) -> &'static str {
        match self {
            Kernel::DualTopk => "dual_topk",
            Kernel::Gated => "gated",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub vocab_size: usize,
    pub alpha: f64,
    pub kernel: Kernel,
    /// Seconds, mean over the timed iterations.
    pub mean_latency: f64,
    pub std_latency: f64,
    /// Median of five batch means, in seconds.
    pub median_of_means: f64,
    pub speedup_vs_dual: f64,
    /// Size of the kernel's output set.
    pub kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
}

struct Timing {
    mean: f64,
    std: f64,
    median_of_means: f64,
}

fn time_kernel<F: FnMut() -> usize>(warmup: usize, iters: usize, mut f: F) -> Timing {
    for _ in 0..warmup {
        black_box(f());
    }
    let samples: Vec<f64> = (0..iters)
        .map(|_| {
            let start = Instant::now();
            black_box(f());
            // Clamp so that a coarse clock never reports zero.
            start.elapsed().as_secs_f64().max(1e-9)
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let batches = samples.len().min(5);
    let mut means: Vec<f64> = (0..batches)
        .map(|b| {
            let chunk: Vec<f64> = samples.iter().skip(b).step_by(batches).copied().collect();
            chunk.iter().sum::<f64>() / chunk.len() as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    Timing {
        mean,
        std: var.sqrt(),
        median_of_means: means[means.len() / 2],
    }
}

pub fn bench_layer_kernels(cfg: &BenchConfig) -> Result<BenchResult> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &vocab_size in &cfg.vocab_sizes {
        for &alpha in &cfg.alphas {
            let input = LayerInput::synthesize(vocab_size, alpha, cfg.parents, cfg.seed)?;
            let dual_kept = dual_topk_kernel(&input, cfg.width).len();
            let gated_kept = gated_kernel(&input, cfg.mu).len();
            let dual = time_kernel(cfg.warmup_iters, cfg.timed_iters, || {
                dual_topk_kernel(black_box(&input), cfg.width).len()
            });
            let gated = time_kernel(cfg.warmup_iters, cfg.timed_iters, || {
                gated_kernel(black_box(&input), cfg.mu).len()
            });
            for (kernel, t, kept) in [
                (Kernel::DualTopk, &dual, dual_kept),
                (Kernel::Gated, &gated, gated_kept),
            ] {
                rows.push(BenchRow {
                    vocab_size,
                    alpha,
                    kernel,
                    mean_latency: t.mean,
                    std_latency: t.std,
                    median_of_means: t.median_of_means,
                    speedup_vs_dual: dual.mean / t.mean,
                    kept,
                });
            }
        }
    }
    Ok(BenchResult { rows })
}

#[derive(Serialize)]
struct BenchCsvRow {
    vocab_size: usize,
    alpha: f64,
    kernel: &'static str,
    mean_latency_us: f64,
    speedup_vs_dual: f64,
}

pub const BENCH_HEADER: &[&str] = &[
    "vocab_size",
    "alpha",
    "kernel",
    "mean_latency_us",
    "speedup_vs_dual",
];

pub fn export_bench(result: &BenchResult, path: &Path) -> Result<()> {
    if result.rows.is_empty() {
        return Err(Error::Input("benchmark result has no rows".into()));
    }
    let rows: Vec<BenchCsvRow> = result
        .rows
        .iter()
        .map(|r| BenchCsvRow {
            vocab_size: r.vocab_size,
            alpha: r.alpha,
            kernel: r.kernel.name(),
            mean_latency_us: r.mean_latency * 1e6,
            speedup_vs_dual: r.speedup_vs_dual,
        })
        .collect();
    write_csv_file(path, BENCH_HEADER, &rows)
}
