use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn talon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_talon"))
        .args(args)
        .output()
        .unwrap()
}

fn cfg(name: &str) -> String {
    configs().join(name).to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(config: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "simulate",
        "--config",
        config,
        "--out",
        out.to_str().unwrap(),
        "--mkdirs",
    ];
    args.extend_from_slice(extra);
    talon(&args)
}

#[test]
fn deterministic_summary() {
    let dir = TempDir::new().unwrap();
    let o = simulate(&cfg("deterministic.json"), dir.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("tau=8.0000 delta=7.0000"), "{text}");
    assert!(text.lines().any(|l| l == "lossless: ok"));
    let metrics =
        std::fs::read_to_string(dir.path().join("results/deterministic_metrics.csv")).unwrap();
    assert!(metrics.starts_with("run_id,policy,beta,seed,N_p,N_q,L,tau,delta,R_at_c\n"));
    assert_eq!(metrics.lines().count(), 5);
}

#[test]
fn missing_output_directory_fails_without_mkdirs() {
    let dir = TempDir::new().unwrap();
    let o = talon(&[
        "simulate",
        "--config",
        &cfg("deterministic.json"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1);
    assert!(
        err.starts_with("error[validation]: output directory"),
        "{err}"
    );
}

#[test]
fn unreadable_config_is_io_error() {
    let o = talon(&["simulate", "--config", "/nonexistent/run.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[io]:"));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert!(
        simulate(&cfg("zipf_eagle.json"), a.path(), &["--threads", "1"])
            .status
            .success()
    );
    assert!(
        simulate(&cfg("zipf_eagle.json"), b.path(), &["--threads", "4"])
            .status
            .success()
    );
    for f in ["results/eagle_metrics.csv", "results/eagle_funnel.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_changes_stochastic_runs() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert!(
        simulate(&cfg("zipf_eagle.json"), a.path(), &["--seed", "1"])
            .status
            .success()
    );
    assert!(
        simulate(&cfg("zipf_eagle.json"), b.path(), &["--seed", "2"])
            .status
            .success()
    );
    let f = "results/eagle_funnel.csv";
    assert_ne!(
        std::fs::read(a.path().join(f)).unwrap(),
        std::fs::read(b.path().join(f)).unwrap()
    );
}

fn sweep_rows(config: &str, dir: &Path, csv: &str) -> Vec<csv::StringRecord> {
    let o = talon(&[
        "sweep",
        "--config",
        &cfg(config),
        "--out",
        dir.to_str().unwrap(),
        "--mkdirs",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(dir.join(csv)).unwrap();
    r.records().map(Result::unwrap).collect()
}

#[test]
fn mu_sweep_has_one_row_per_value() {
    let dir = TempDir::new().unwrap();
    let rows = sweep_rows("sweep_mu.json", dir.path(), "results/sweep_mu.csv");
    let values: Vec<&str> = rows.iter().map(|r| &r[1]).collect();
    assert_eq!(values, ["0.01", "0.03", "0.04"]);
}

#[test]
fn budget_sweep_tau_is_nondecreasing() {
    let dir = TempDir::new().unwrap();
    let rows = sweep_rows("sweep_n.json", dir.path(), "results/sweep_n.csv");
    assert_eq!(rows.len(), 3);
    let taus: Vec<f64> = rows.iter().map(|r| r[6].parse().unwrap()).collect();
    assert!(taus.windows(2).all(|w| w[0] <= w[1]), "{taus:?}");
}

#[test]
fn beta_sweep_emits_curve() {
    let dir = TempDir::new().unwrap();
    sweep_rows("sweep_beta.json", dir.path(), "results/sweep_beta.csv");
    let curve = std::fs::read_to_string(dir.path().join("results/sweep_beta_curve.csv")).unwrap();
    assert!(curve.starts_with("bucket,tau_mean,delta_mean,oracle_delta\n"));
    assert_eq!(curve.lines().count(), 5);
    assert!(dir.path().join("results/plots/sweep.svg").exists());
}

#[test]
fn empty_sweep_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("sweep.json");
    let base = cfg("deterministic.json");
    std::fs::write(
        &spec,
        format!(r#"{{"base": "{base}", "axis": "mu", "values": [], "sweep_csv": "x.csv"}}"#),
    )
    .unwrap();
    let o = talon(&["sweep", "--config", spec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[validation]: values"));
}

fn lossless_config(dir: &Path, draft_rows: &str, trials: u64) -> PathBuf {
    let target = r#"[{"context": [0], "probs": [0.1, 0.5, 0.3, 0.1]},
        {"context": [1], "probs": [0.25, 0.25, 0.25, 0.25]},
        {"context": [2], "probs": [0.6, 0.0, 0.1, 0.3]},
        {"context": [3], "probs": [0.05, 0.15, 0.4, 0.4]}]"#;
    let draft = if draft_rows.is_empty() {
        target
    } else {
        draft_rows
    };
    let text = format!(
        r#"{{"models": {{"target": {{"kind": "table", "vocab_size": 4, "order": 1, "entries": {target}}},
                       "draft": {{"kind": "table", "vocab_size": 4, "order": 1, "entries": {draft}}}}},
            "policy": {{"type": "talon", "N": 12, "K": 4}},
            "decode": {{"mode": "stochastic", "max_new_tokens": 3, "seed": 3}},
            "lossless": {{"trials": {trials}, "horizon": 3, "prompt": [0]}}}}"#
    );
    let path = dir.join("lossless.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn identical_pair_passes_lossless() {
    let dir = TempDir::new().unwrap();
    let path = lossless_config(dir.path(), "", 120_000);
    let o = talon(&["verify-lossless", "--config", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).trim_end().ends_with("pass"));
    assert!(stderr(&o).is_empty());
}

#[test]
fn adversarial_pair_passes_lossless() {
    let o = talon(&[
        "verify-lossless",
        "--config",
        &cfg("lossless_adversarial.json"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("trials=200000"));
}

#[test]
fn few_trials_warn() {
    let dir = TempDir::new().unwrap();
    let path = lossless_config(dir.path(), "", 100);
    let o = talon(&["verify-lossless", "--config", path.to_str().unwrap()]);
    assert!(
        stderr(&o).contains("statistical power is insufficient"),
        "{}",
        stderr(&o)
    );
    assert!(stdout(&o).contains("tv="));
}

#[test]
fn lossless_rejects_non_enumerable_models() {
    let o = talon(&["verify-lossless", "--config", &cfg("zipf_talon.json")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn plots_from_csvs() {
    let dir = TempDir::new().unwrap();
    assert!(simulate(&cfg("zipf_talon.json"), dir.path(), &[])
        .status
        .success());
    let out = dir.path().join("plots");
    let o = talon(&[
        "plot",
        "--funnel",
        dir.path()
            .join("results/talon_funnel.csv")
            .to_str()
            .unwrap(),
        "--curve",
        dir.path().join("results/talon_curve.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--mkdirs",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let heat = std::fs::read_to_string(out.join("funnel_heatmap.svg")).unwrap();
    assert!(
        heat.starts_with("<svg") && heat.contains("<rect") && heat.trim_end().ends_with("</svg>")
    );
    let scatter = std::fs::read_to_string(out.join("delta_tau.svg")).unwrap();
    assert!(scatter.contains("class=\"oracle\"") && scatter.contains("stroke-dasharray"));
    assert!(scatter.contains("<circle"));
}

#[test]
fn empty_csv_gives_placeholder() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("funnel.csv");
    std::fs::write(&csv, "depth,rank,offered,accepted,freq\n").unwrap();
    let o = talon(&[
        "plot",
        "--funnel",
        csv.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stderr(&o).starts_with("warning:"));
    let svg = std::fs::read_to_string(dir.path().join("funnel_heatmap.svg")).unwrap();
    assert!(svg.contains("no data"));
}

#[test]
fn schema_mismatch_names_missing_column() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("curve.csv");
    std::fs::write(&csv, "bucket,tau_mean,oracle_delta\nx,1.0,1.0\n").unwrap();
    let o = talon(&[
        "plot",
        "--curve",
        csv.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("missing column `delta_mean`"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn bench_tree_writes_csv() {
    let dir = TempDir::new().unwrap();
    let o = talon(&[
        "bench-tree",
        "--config",
        &cfg("bench_quick.json"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(dir.path().join("bench.csv")).unwrap();
    assert_eq!(
        r.headers().unwrap(),
        vec![
            "vocab_size",
            "alpha",
            "kernel",
            "mean_latency_us",
            "speedup_vs_dual"
        ]
    );
    assert_eq!(r.records().count(), 4);
    assert!(stdout(&o).starts_with("# dual top-K"));
}
