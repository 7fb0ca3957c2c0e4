//! Speedup and computing-power metrics.
//!
//! `speedup` is the sequential-to-volunteer wall-time ratio. `computing_power`
//! is the nine-factor product estimating available GFLOPS from host-pool
//! characteristics; `estimate_factors` recovers those factors from a host
//! contact log. `summarize`/`render_*` turn an assimilated experiment ledger
//! into per-sweep report tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("domain error: {0}")]
    Domain(String),
}

/// The nine factors of the computing-power product.
///
/// Units: `x_arrival` in hosts/day, `x_life` in days, `x_flops` in GFLOPS
/// per cpu; the rest dimensionless. `x_arrival * x_life` is the expected
/// live host count, so the product comes out in GFLOPS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorSet {
    pub x_arrival: f64,
    pub x_life: f64,
    pub x_ncpus: f64,
    pub x_flops: f64,
    pub x_eff: f64,
    pub x_onfrac: f64,
    pub x_active: f64,
    pub x_redundancy: f64,
    pub x_share: f64,
}

impl FactorSet {
    pub fn as_array(&self) -> [f64; 9] {
        [
            self.x_arrival,
            self.x_life,
            self.x_ncpus,
            self.x_flops,
            self.x_eff,
            self.x_onfrac,
            self.x_active,
            self.x_redundancy,
            self.x_share,
        ]
    }
}

/// One completed result's contribution to efficiency estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultSample {
    pub cpu_time: f64,
    /// total FLOP the payload performed
    pub flops_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostLogEntry {
    pub host_id: String,
    pub first_contact: f64,
    pub last_contact: f64,
    pub ncpus: u32,
    /// benchmark rate in FLOPS
    pub benchmark_flops: f64,
    /// seconds the host was reachable
    pub on_time: f64,
    /// seconds the host spent computing payloads
    pub busy_time: f64,
    pub results: Vec<ResultSample>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HostLog {
    pub entries: Vec<HostLogEntry>,
}

pub fn speedup(t_seq: f64, t_b: f64) -> Result<f64, MetricsError> {
    // NaN is rejected along with non-positive values
    if t_b.is_nan() || t_b <= 0.0 {
        return Err(MetricsError::Domain(format!("t_b must be positive, got {t_b}")));
    }
    if t_seq < 0.0 {
        return Err(MetricsError::Domain(format!("t_seq must be non-negative, got {t_seq}")));
    }
    Ok(t_seq / t_b)
}

pub fn computing_power(f: &FactorSet) -> Result<f64, MetricsError> {
    for (i, x) in f.as_array().iter().enumerate() {
        if *x < 0.0 || !x.is_finite() {
            return Err(MetricsError::Domain(format!("factor {i} out of range: {x}")));
        }
    }
    Ok(f.as_array().iter().product())
}

/// Estimate the factor set from a host contact log.
///
/// Lifetime rule: a host silent for at least one day before the project end
/// is treated as departed (its observed life stands); anything heard from
/// within the final day is censored at the project end.
pub fn estimate_factors(
    log: &HostLog,
    project_duration_days: f64,
    redundancy: f64,
    share: f64,
) -> Result<FactorSet, MetricsError> {
    if project_duration_days.is_nan() || project_duration_days <= 0.0 {
        return Err(MetricsError::Domain("project duration must be positive".into()));
    }
    if log.entries.is_empty() {
        return Err(MetricsError::Domain("host log is empty".into()));
    }
    let n = log.entries.len() as f64;
    let project_end = log
        .entries
        .iter()
        .map(|e| e.first_contact)
        .fold(f64::INFINITY, f64::min)
        + project_duration_days * SECS_PER_DAY;

    let mut life_sum = 0.0;
    let mut ncpus_sum = 0.0;
    let mut flops_sum = 0.0;
    let mut on_sum = 0.0;
    let mut active_sum = 0.0;
    let mut eff_sum = 0.0;
    let mut eff_n = 0.0;
    for e in &log.entries {
        let departed = project_end - e.last_contact >= SECS_PER_DAY;
        let life = if departed {
            e.last_contact - e.first_contact
        } else {
            project_end - e.first_contact
        };
        let life = life.max(0.0);
        life_sum += life / SECS_PER_DAY;
        ncpus_sum += e.ncpus as f64;
        flops_sum += e.benchmark_flops / 1e9;
        on_sum += if life > 0.0 { (e.on_time / life).min(1.0) } else { 1.0 };
        active_sum += if e.on_time > 0.0 { (e.busy_time / e.on_time).min(1.0) } else { 0.0 };
        for s in &e.results {
            if s.cpu_time > 0.0 && e.benchmark_flops > 0.0 {
                eff_sum += ((s.flops_estimate / s.cpu_time) / e.benchmark_flops).min(1.0);
                eff_n += 1.0;
            }
        }
    }
    Ok(FactorSet {
        x_arrival: n / project_duration_days,
        x_life: life_sum / n,
        x_ncpus: ncpus_sum / n,
        x_flops: flops_sum / n,
        x_eff: if eff_n > 0.0 { eff_sum / eff_n } else { 1.0 },
        x_onfrac: on_sum / n,
        x_active: active_sum / n,
        x_redundancy: redundancy,
        x_share: share,
    })
}

/// One row of the experiment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub sweep: String,
    pub runs: usize,
    pub perfect: usize,
    /// sum of per-run cpu times, seconds
    pub t_seq: f64,
    /// wall span first registration -> last upload, seconds
    pub t_b: f64,
    pub acc: f64,
    pub mean_run_secs: f64,
}

/// A minimal view of one assimilated run, as the report needs it.
pub struct LedgerRow<'a> {
    pub sweep: &'a str,
    pub raw: f64,
    pub cpu_time: f64,
    pub completed_at: f64,
}

/// Fold assimilated runs into per-sweep rows. `t_start` is the campaign
/// start (first host registration); without one the earliest completion
/// stands in, making `t_b` a lower bound.
pub fn summarize<'a>(rows: impl IntoIterator<Item = LedgerRow<'a>>, t_start: Option<f64>) -> Vec<SweepSummary> {
    struct Agg {
        runs: usize,
        perfect: usize,
        t_seq: f64,
        first: f64,
        last: f64,
    }
    let mut by_sweep: BTreeMap<String, Agg> = BTreeMap::new();
    for r in rows {
        let a = by_sweep.entry(r.sweep.to_string()).or_insert(Agg {
            runs: 0,
            perfect: 0,
            t_seq: 0.0,
            first: f64::INFINITY,
            last: f64::NEG_INFINITY,
        });
        a.runs += 1;
        if r.raw == 0.0 {
            a.perfect += 1;
        }
        a.t_seq += r.cpu_time;
        a.first = a.first.min(r.completed_at);
        a.last = a.last.max(r.completed_at);
    }
    by_sweep
        .into_iter()
        .map(|(sweep, a)| {
            let start = t_start.unwrap_or(a.first).min(a.first);
            let t_b = (a.last - start).max(0.0);
            SweepSummary {
                sweep,
                runs: a.runs,
                perfect: a.perfect,
                t_seq: a.t_seq,
                t_b,
                acc: if t_b > 0.0 { a.t_seq / t_b } else { f64::NAN },
                mean_run_secs: a.t_seq / a.runs as f64,
            }
        })
        .collect()
}

pub fn render_csv(rows: &[SweepSummary]) -> String {
    let mut out = String::from("sweep,runs,perfect,t_seq_secs,t_b_secs,acc,mean_run_secs\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.3},{:.3},{:.4},{:.3}\n",
            r.sweep, r.runs, r.perfect, r.t_seq, r.t_b, r.acc, r.mean_run_secs
        ));
    }
    out
}

pub fn render_text(rows: &[SweepSummary]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<20} {:>6} {:>8} {:>12} {:>12} {:>8} {:>12}\n",
        "sweep", "runs", "perfect", "t_seq(s)", "t_b(s)", "acc", "mean_run(s)"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<20} {:>6} {:>8} {:>12.1} {:>12.1} {:>8.4} {:>12.1}\n",
            r.sweep, r.runs, r.perfect, r.t_seq, r.t_b, r.acc, r.mean_run_secs
        ));
    }
    out
}
