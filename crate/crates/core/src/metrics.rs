//! Accounting for verification steps, draft forwards and committed tokens,
//! plus the derived τ (mean accepted tokens), δ (draft efficiency) and the
//! analytical speedup `R = τ / (1 + c·δ)`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::verify::VerificationOutcome;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelCell {
    pub accepted: u64,
    pub offered: u64,
}

/// Acceptance counts keyed by `(depth, sibling rank)`, both 1-based.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FunnelMatrix {
    counts: BTreeMap<(usize, usize), FunnelCell>,
}

impl FunnelMatrix {
    pub fn record(&mut self, depth: usize, rank: usize, accepted: bool) {
        let cell = self.counts.entry((depth, rank)).or_default();
        cell.offered += 1;
        cell.accepted += u64::from(accepted);
    }

    pub fn cell(&self, depth: usize, rank: usize) -> FunnelCell {
        self.counts.get(&(depth, rank)).copied().unwrap_or_default()
    }

    pub fn cells(&self) -> impl Iterator<Item = ((usize, usize), FunnelCell)> + '_ {
        self.counts.iter().map(|(k, v)| (*k, *v))
    }

    pub fn merge(&mut self, other: &FunnelMatrix) {
        for (key, cell) in &other.counts {
            let mine = self.counts.entry(*key).or_default();
            mine.accepted += cell.accepted;
            mine.offered += cell.offered;
        }
    }

    /// Of the acceptances at depths matching `depths`, how many were rank 1.
    /// Returns `(rank1_accepted, all_accepted)`.
    pub fn rank1_share<F: Fn(usize) -> bool>(&self, depths: F) -> (u64, u64) {
        self.counts.iter().filter(|((d, _), _)| depths(*d)).fold(
            (0, 0),
            |(top, all), ((_, r), c)| {
                (top + if *r == 1 { c.accepted } else { 0 }, all + c.accepted)
            },
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunMetrics {
    /// Target verification steps.
    pub n_p: u64,
    /// Draft forward passes.
    pub n_q: u64,
    /// Committed tokens, correction tokens included.
    pub l: u64,
    /// Tokens committed at each step (accepted plus correction), so every
    /// entry is at least 1.
    pub per_step_accepted: Vec<usize>,
    pub funnel: FunnelMatrix,
}

impl RunMetrics {
    pub fn record_step(&mut self, outcome: &VerificationOutcome, forwards: usize) {
        let committed = outcome.accepted_count + 1;
        self.n_p += 1;
        self.n_q += forwards as u64;
        self.l += committed as u64;
        self.per_step_accepted.push(committed);
        for r in &outcome.records {
            self.funnel.record(r.depth, r.rank, r.accepted);
        }
    }

    /// Combines two stream-local accumulators.
    pub fn merge(&mut self, other: &RunMetrics) {
        self.n_p += other.n_p;
        self.n_q += other.n_q;
        self.l += other.l;
        self.per_step_accepted
            .extend_from_slice(&other.per_step_accepted);
        self.funnel.merge(&other.funnel);
    }

    fn per_step(&self, what: &str, numerator: u64) -> Result<f64> {
        if self.n_p == 0 {
            return Err(Error::UndefinedMetric(format!(
                "{what} needs at least one verification step"
            )));
        }
        Ok(numerator as f64 / self.n_p as f64)
    }

    /// Mean accepted tokens τ = L / N_p.
    pub fn mat(&self) -> Result<f64> {
        self.per_step("tau", self.l)
    }

    /// Draft efficiency δ = N_q / N_p.
    pub fn draft_efficiency(&self) -> Result<f64> {
        self.per_step("delta", self.n_q)
    }

    pub fn funnel_export(&self) -> Vec<FunnelRow> {
        self.funnel
            .cells()
            .filter(|(_, c)| c.offered > 0)
            .map(|((depth, rank), c)| FunnelRow {
                depth,
                rank,
                offered: c.offered,
                accepted: c.accepted,
                freq: c.accepted as f64 / c.offered as f64,
            })
            .collect()
    }
}

/// Relative draft cost `c = T_q / T_p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupModel {
    c: f64,
}

impl SpeedupModel {
    pub fn new(c: f64) -> Result<Self> {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::Parameter(format!(
                "relative cost c must be positive, got {c}"
            )));
        }
        Ok(Self { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

/// Wall-time speedup over autoregressive decoding, `τ / (1 + c·δ)`.
pub fn speedup_estimate(tau: f64, delta: f64, model: &SpeedupModel) -> f64 {
    tau / (1.0 + model.c * delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelRow {
    pub depth: usize,
    pub rank: usize,
    pub offered: u64,
    pub accepted: u64,
    /// accepted / offered
    pub freq: f64,
}

/// Runs sharing one difficulty setting.
#[derive(Debug, Clone)]
pub struct CurveBucket {
    pub label: String,
    pub runs: Vec<RunMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub bucket: String,
    pub tau_mean: f64,
    pub delta_mean: f64,
    /// The δ an oracle drafter would spend: exactly τ.
    pub oracle_delta: f64,
}

/// Per-bucket mean τ and δ over runs.
pub fn delta_tau_curve(buckets: &[CurveBucket]) -> Result<Vec<CurveRow>> {
    buckets
        .iter()
        .map(|b| {
            if b.runs.is_empty() {
                return Err(Error::Input(format!("bucket {} has no runs", b.label)));
            }
            let n = b.runs.len() as f64;
            let mut tau = 0.0;
            let mut delta = 0.0;
            for r in &b.runs {
                tau += r.mat()?;
                delta += r.draft_efficiency()?;
            }
            Ok(CurveRow {
                bucket: b.label.clone(),
                tau_mean: tau / n,
                delta_mean: delta / n,
                oracle_delta: tau / n,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: usize,
    pub policy: String,
    pub beta: Option<f64>,
    pub seed: u64,
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

impl MetricsRow {
    pub fn from_metrics(
        run_id: usize,
        policy: &str,
        beta: Option<f64>,
        seed: u64,
        metrics: &RunMetrics,
        speedup: &SpeedupModel,
    ) -> Result<Self> {
        let tau = metrics.mat()?;
        let delta = metrics.draft_efficiency()?;
        Ok(Self {
            run_id,
            policy: policy.to_string(),
            beta,
            seed,
            n_p: metrics.n_p,
            n_q: metrics.n_q,
            l: metrics.l,
            tau,
            delta,
            r_at_c: speedup_estimate(tau, delta, speedup),
        })
    }
}

pub const METRICS_HEADER: &[&str] = &[
    "run_id", "policy", "beta", "seed", "N_p", "N_q", "L", "tau", "delta", "R_at_c",
];
pub const FUNNEL_HEADER: &[&str] = &["depth", "rank", "offered", "accepted", "freq"];
pub const CURVE_HEADER: &[&str] = &["bucket", "tau_mean", "delta_mean", "oracle_delta"];

/// Writes `header` then one line per row. The header is written even when
/// there are no rows.
pub fn write_csv<W: Write, T: Serialize>(out: W, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(file), header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::NodeId;
    use crate::verify::AcceptanceRecord;

    fn outcome(accepted: usize, records: Vec<AcceptanceRecord>) -> VerificationOutcome {
        VerificationOutcome {
            accepted_path: (1..=accepted).map(NodeId).collect(),
            correction_token: 0,
            accepted_count: accepted,
            records,
        }
    }

    #[test]
    fn step_accounting() {
        let mut m = RunMetrics::default();
        m.record_step(&outcome(3, vec![]), 5);
        assert_eq!((m.n_p, m.n_q, m.l), (1, 5, 4));
        m.record_step(&outcome(0, vec![]), 2);
        assert_eq!(m.l, 5);
        assert_eq!(m.per_step_accepted, vec![4, 1]);

        let mut twice = RunMetrics::default();
        let step = outcome(2, vec![]);
        twice.record_step(&step, 3);
        let once = twice.clone();
        twice.record_step(&step, 3);
        assert_eq!(
            (twice.n_p, twice.n_q, twice.l),
            (2 * once.n_p, 2 * once.n_q, 2 * once.l)
        );
    }

    #[test]
    fn ratios() {
        let m = RunMetrics {
            n_p: 3,
            n_q: 15,
            l: 12,
            ..Default::default()
        };
        assert_eq!(m.mat().unwrap(), 4.0);
        assert_eq!(m.draft_efficiency().unwrap(), 5.0);
        assert!(matches!(
            RunMetrics::default().mat(),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(RunMetrics::default().draft_efficiency().is_err());

        let mut single = RunMetrics::default();
        single.record_step(&outcome(7, vec![]), 7);
        assert_eq!(single.mat().unwrap(), 8.0);
    }

    #[test]
    fn speedup_formula() {
        let c = SpeedupModel::new(0.1).unwrap();
        assert!((speedup_estimate(4.0, 5.0, &c) - 2.6667).abs() < 1e-4);
        assert_eq!(speedup_estimate(3.5, 0.0, &c), 3.5);
        assert!(speedup_estimate(1.0, 0.5, &c) < 1.0);
        assert!(SpeedupModel::new(0.0).is_err());
    }

    #[test]
    fn funnel_cells() {
        assert!(RunMetrics::default().funnel_export().is_empty());
        let mut m = RunMetrics::default();
        let rec = AcceptanceRecord {
            node: NodeId(1),
            depth: 1,
            rank: 1,
            accepted: true,
        };
        m.record_step(&outcome(1, vec![rec]), 1);
        assert_eq!(
            m.funnel_export(),
            vec![FunnelRow {
                depth: 1,
                rank: 1,
                offered: 1,
                accepted: 1,
                freq: 1.0
            }]
        );
    }

    #[test]
    fn curve_rows() {
        let run = RunMetrics {
            n_p: 1,
            n_q: 5,
            l: 4,
            per_step_accepted: vec![4],
            ..Default::default()
        };
        let rows = delta_tau_curve(&[CurveBucket {
            label: "b".into(),
            runs: vec![run],
        }])
        .unwrap();
        assert_eq!((rows[0].tau_mean, rows[0].delta_mean), (4.0, 5.0));
        assert!(delta_tau_curve(&[CurveBucket {
            label: "empty".into(),
            runs: vec![]
        }])
        .is_err());
    }

    #[test]
    fn csv_schema() {
        let mut buf = Vec::new();
        write_csv::<_, FunnelRow>(&mut buf, FUNNEL_HEADER, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "depth,rank,offered,accepted,freq\n"
        );

        let m = RunMetrics {
            n_p: 2,
            n_q: 14,
            l: 16,
            ..Default::default()
        };
        let row =
            MetricsRow::from_metrics(0, "talon", None, 7, &m, &SpeedupModel::new(0.1).unwrap())
                .unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, METRICS_HEADER, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("run_id,policy,beta,seed,N_p,N_q,L,tau,delta,R_at_c\n"));
        assert!(text.contains("0,talon,,7,2,14,16,8.0,7.0,"));
    }
}
