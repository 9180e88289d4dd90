//! Simulation and sweep drivers.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use talon_core::metrics::{
    delta_tau_curve, write_csv_file, CurveBucket, CurveRow, FunnelRow, MetricsRow, CURVE_HEADER,
    FUNNEL_HEADER, METRICS_HEADER,
};
use talon_core::verify::autoregressive_greedy;
use talon_core::{decode, Context, DecodeConfig, Mode, RunMetrics, SequenceModel, SpeedupModel};

use crate::config::{load_json, Axis, Models, RunConfig, SweepSpec};
use crate::error::{CliError, Result};
use crate::plot;

/// Where outputs go and how missing directories are handled.
#[derive(Debug, Clone, Default)]
pub struct OutputEnv {
    /// Relative output paths resolve against this directory.
    pub out_dir: Option<PathBuf>,
    pub mkdirs: bool,
}

impl OutputEnv {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }

    /// Makes sure `dir` exists, creating it only under `--mkdirs`.
    pub fn ensure_dir(&self, dir: &Path) -> Result<()> {
        if dir.as_os_str().is_empty() || dir.is_dir() {
            return Ok(());
        }
        if self.mkdirs {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))
        } else {
            Err(CliError::Validation(format!(
                "output directory {} does not exist (pass --mkdirs to create it)",
                dir.display()
            )))
        }
    }

    /// Resolves an output file and makes sure its directory exists.
    pub fn prepare_file(&self, path: &Path) -> Result<PathBuf> {
        let full = self.resolve(path);
        self.ensure_dir(full.parent().unwrap_or(Path::new("")))?;
        Ok(full)
    }
}

/// The rng for prompt `index`: one independent ChaCha stream per prompt, so
/// results do not depend on scheduling.
pub fn prompt_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn synthesize_prompt(rng: &mut ChaCha8Rng, vocab_size: usize, len: usize) -> Context {
    Context::new(
        (0..len)
            .map(|_| rng.random_range(0..vocab_size as u32))
            .collect(),
    )
}

pub struct PromptRun {
    pub prompt: Context,
    pub output: Context,
    pub metrics: RunMetrics,
}

pub struct Simulation {
    pub runs: Vec<PromptRun>,
    pub total: RunMetrics,
    /// Greedy mode only: whether every output matched target-only decoding.
    pub lossless: Option<bool>,
}

pub fn simulate(cfg: &RunConfig, models: &Models) -> Result<Simulation> {
    let d = &cfg.decode;
    let vocab = models.target.vocab().size();
    let decode_cfg = DecodeConfig {
        mode: d.mode,
        max_new_tokens: d.max_new_tokens,
        stop_token: d.stop_token,
    };
    let runs = (0..d.num_prompts)
        .into_par_iter()
        .map(|i| {
            let mut rng = prompt_rng(d.seed, i);
            let prompt = synthesize_prompt(&mut rng, vocab, d.prompt_len);
            let (output, metrics) = decode(
                &*models.draft,
                &*models.target,
                &prompt,
                &cfg.policy,
                &decode_cfg,
                &mut rng,
            )?;
            Ok(PromptRun {
                prompt,
                output,
                metrics,
            })
        })
        .collect::<Result<Vec<_>, talon_core::Error>>()?;

    let mut total = RunMetrics::default();
    for r in &runs {
        total.merge(&r.metrics);
    }
    let lossless = match d.mode {
        Mode::Greedy => Some(greedy_replay_matches(&*models.target, &runs, d.stop_token)?),
        Mode::Stochastic => None,
    };
    Ok(Simulation {
        runs,
        total,
        lossless,
    })
}

fn greedy_replay_matches(
    target: &dyn SequenceModel,
    runs: &[PromptRun],
    stop: Option<u32>,
) -> Result<bool> {
    for r in runs {
        let produced = &r.output.tokens()[r.prompt.len()..];
        if autoregressive_greedy(target, &r.prompt, produced.len(), stop)? != produced {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn metrics_rows(cfg: &RunConfig, sim: &Simulation) -> Result<Vec<MetricsRow>> {
    let c = SpeedupModel::new(cfg.speedup_c)?;
    sim.runs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            MetricsRow::from_metrics(
                i,
                cfg.policy.name(),
                cfg.models.beta(),
                cfg.decode.seed,
                &r.metrics,
                &c,
            )
            .map_err(CliError::from)
        })
        .collect()
}

fn bucket_label(cfg: &RunConfig) -> String {
    match cfg.models.beta() {
        Some(b) => format!("beta={b}"),
        None => cfg.policy.name().to_string(),
    }
}

pub fn curve_rows(cfg: &RunConfig, sim: &Simulation) -> Result<Vec<CurveRow>> {
    let bucket = CurveBucket {
        label: bucket_label(cfg),
        runs: sim.runs.iter().map(|r| r.metrics.clone()).collect(),
    };
    Ok(delta_tau_curve(&[bucket])?)
}

/// One line with the aggregate τ, δ and estimated speedup.
pub fn summary_line(cfg: &RunConfig, total: &RunMetrics) -> Result<String> {
    let tau = total.mat()?;
    let delta = total.draft_efficiency()?;
    let r = talon_core::metrics::speedup_estimate(tau, delta, &SpeedupModel::new(cfg.speedup_c)?);
    Ok(format!(
        "summary: policy={} prompts={} steps={} tau={tau:.4} delta={delta:.4} R={r:.4} (c={})",
        cfg.policy.name(),
        cfg.decode.num_prompts,
        total.n_p,
        cfg.speedup_c
    ))
}

/// Resolved output files of a run, checked before any work starts.
pub struct RunOutputs {
    pub metrics_csv: Option<PathBuf>,
    pub funnel_csv: Option<PathBuf>,
    pub curve_csv: Option<PathBuf>,
    pub plots_dir: Option<PathBuf>,
}

impl RunOutputs {
    pub fn prepare(cfg: &RunConfig, env: &OutputEnv) -> Result<Self> {
        let o = &cfg.outputs;
        let file = |p: &Option<PathBuf>| p.as_deref().map(|p| env.prepare_file(p)).transpose();
        let plots_dir = o
            .plots_dir
            .as_deref()
            .map(|p| {
                let dir = env.resolve(p);
                env.ensure_dir(&dir).map(|_| dir)
            })
            .transpose()?;
        Ok(Self {
            metrics_csv: file(&o.metrics_csv)?,
            funnel_csv: file(&o.funnel_csv)?,
            curve_csv: file(&o.curve_csv)?,
            plots_dir,
        })
    }
}

fn write<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    write_csv_file(path, header, rows).map_err(|e| CliError::io(path.display(), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
}

/// Runs a simulation and writes every configured artifact. Returns the
/// lines to print.
pub fn run_simulate(cfg: &RunConfig, env: &OutputEnv) -> Result<Vec<String>> {
    let models = cfg.validate()?;
    let outputs = RunOutputs::prepare(cfg, env)?;
    let sim = simulate(cfg, &models)?;

    let funnel: Vec<FunnelRow> = sim.total.funnel_export();
    let curve = curve_rows(cfg, &sim)?;
    if let Some(p) = &outputs.metrics_csv {
        write(p, METRICS_HEADER, &metrics_rows(cfg, &sim)?)?;
    }
    if let Some(p) = &outputs.funnel_csv {
        write(p, FUNNEL_HEADER, &funnel)?;
    }
    if let Some(p) = &outputs.curve_csv {
        write(p, CURVE_HEADER, &curve)?;
    }
    if let Some(dir) = &outputs.plots_dir {
        write_text(
            &dir.join("funnel_heatmap.svg"),
            &plot::funnel_heatmap(&funnel),
        )?;
        write_text(&dir.join("delta_tau.svg"), &plot::delta_tau_scatter(&curve))?;
    }

    let mut lines = vec![summary_line(cfg, &sim.total)?];
    match sim.lossless {
        Some(true) => lines.push("lossless: ok".into()),
        Some(false) => {
            return Err(CliError::Acceptance(
                "greedy output differs from target-only greedy decoding".into(),
            ))
        }
        None => {}
    }
    Ok(lines)
}

/// One sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub policy: String,
    #[serde(rename = "N_p")]
    pub n_p: u64,
    #[serde(rename = "N_q")]
    pub n_q: u64,
    #[serde(rename = "L")]
    pub l: u64,
    pub tau: f64,
    pub delta: f64,
    #[serde(rename = "R_at_c")]
    pub r_at_c: f64,
}

pub const SWEEP_HEADER: &[&str] = &[
    "axis", "value", "policy", "N_p", "N_q", "L", "tau", "delta", "R_at_c",
];

pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub curve: Option<Vec<CurveRow>>,
}

/// Runs one simulation per axis value, in value order.
pub fn sweep(spec: &SweepSpec, base: &RunConfig) -> Result<SweepResult> {
    spec.validate()?;
    let configs = spec
        .values
        .iter()
        .map(|&v| base.with_axis(spec.axis, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut buckets = Vec::new();
    for (cfg, &value) in configs.iter().zip(&spec.values) {
        let models = cfg.validate()?;
        let sim = simulate(cfg, &models)?;
        if sim.lossless == Some(false) {
            return Err(CliError::Acceptance(format!(
                "{}={value}: greedy output differs from target-only greedy decoding",
                spec.axis.name()
            )));
        }
        let m = MetricsRow::from_metrics(
            0,
            cfg.policy.name(),
            None,
            cfg.decode.seed,
            &sim.total,
            &SpeedupModel::new(cfg.speedup_c)?,
        )?;
        rows.push(SweepRow {
            axis: spec.axis.name().into(),
            value,
            policy: m.policy,
            n_p: m.n_p,
            n_q: m.n_q,
            l: m.l,
            tau: m.tau,
            delta: m.delta,
            r_at_c: m.r_at_c,
        });
        buckets.push(CurveBucket {
            label: bucket_label(cfg),
            runs: sim.runs.into_iter().map(|r| r.metrics).collect(),
        });
    }
    let curve = match spec.axis {
        Axis::Beta => Some(delta_tau_curve(&buckets)?),
        _ => None,
    };
    Ok(SweepResult { rows, curve })
}

pub fn run_sweep(
    spec_path: &Path,
    spec: &SweepSpec,
    seed: Option<u64>,
    env: &OutputEnv,
) -> Result<Vec<String>> {
    spec.validate()?;
    let base_path = spec_path.parent().unwrap_or(Path::new("")).join(&spec.base);
    let mut base: RunConfig = load_json(&base_path)?;
    if let Some(seed) = seed {
        base.decode.seed = seed;
    }
    let sweep_csv = env.prepare_file(&spec.sweep_csv)?;
    let curve_csv = spec
        .curve_csv
        .as_deref()
        .map(|p| env.prepare_file(p))
        .transpose()?;
    let plots_dir = base
        .outputs
        .plots_dir
        .as_deref()
        .map(|p| {
            let dir = env.resolve(p);
            env.ensure_dir(&dir).map(|_| dir)
        })
        .transpose()?;

    let result = sweep(spec, &base)?;
    write(&sweep_csv, SWEEP_HEADER, &result.rows)?;
    if let (Some(p), Some(curve)) = (&curve_csv, &result.curve) {
        write(p, CURVE_HEADER, curve)?;
    }
    if let Some(dir) = &plots_dir {
        write_text(&dir.join("sweep.svg"), &plot::sweep_lines(&result.rows))?;
        if let Some(curve) = &result.curve {
            write_text(&dir.join("delta_tau.svg"), &plot::delta_tau_scatter(curve))?;
        }
    }
    Ok(result
        .rows
        .iter()
        .map(|r| {
            format!(
                "{}={} tau={:.4} delta={:.4} R={:.4}",
                r.axis, r.value, r.tau, r.delta, r.r_at_c
            )
        })
        .collect())
}
