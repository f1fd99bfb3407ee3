//! Seeded batch evaluation and the five navigation metrics.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for, Stream};
use crate::simulation::{generate_scenario, run_episode, EpisodeRecord, Outcome, Policy, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_episodes: usize,
    pub success: usize,
    pub collision: usize,
    pub timeout: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    /// Mean arrival time over successful episodes, seconds.
    pub nav_time: Option<f64>,
    /// Percentage of steps spent closer than the discomfort distance.
    pub disc_rate: f64,
    pub total_steps: usize,
    pub discomfort_steps: usize,
}

impl MetricsReport {
    /// Builds a report from raw tallies.
    pub fn from_counts(
        success: usize,
        collision: usize,
        timeout: usize,
        nav_time: Option<f64>,
        discomfort_steps: usize,
        total_steps: usize,
    ) -> Result<Self> {
        let n = success + collision + timeout;
        if n == 0 {
            return Err(Error::Empty("episode records"));
        }
        let nf = n as f64;
        Ok(Self {
            n_episodes: n,
            success,
            collision,
            timeout,
            success_rate: success as f64 / nf,
            collision_rate: collision as f64 / nf,
            timeout_rate: timeout as f64 / nf,
            nav_time,
            disc_rate: if total_steps == 0 {
                0.0
            } else {
                100.0 * discomfort_steps as f64 / total_steps as f64
            },
            total_steps,
            discomfort_steps,
        })
    }
}

/// Aggregates records in the order given. Discomfort steps are recounted
/// from the per-step clearances with `d_disc`.
pub fn compute_metrics(records: &[EpisodeRecord], d_disc: f64) -> Result<MetricsReport> {
    let (mut s, mut c, mut t) = (0, 0, 0);
    let mut nav_sum = 0.0;
    let mut disc = 0;
    let mut steps = 0;
    for r in records {
        match r.outcome {
            Outcome::Success => {
                s += 1;
                nav_sum += r.nav_time.unwrap_or_else(|| r.steps.last().map_or(0.0, |st| st.t));
            }
            Outcome::Collision => c += 1,
            Outcome::Timeout => t += 1,
        }
        disc += crate::simulation::count_discomfort(&r.steps, d_disc);
        steps += r.steps.len();
    }
    let nav = (s > 0).then(|| nav_sum / s as f64);
    MetricsReport::from_counts(s, c, t, nav, disc, steps)
}

/// Runs `n_episodes` greedy episodes. Episode `i` draws its scenario from
/// the evaluation stream `(master_seed, i)`, so every policy evaluated with
/// the same seed faces the same sequence. Results do not depend on
/// `workers`.
pub fn run_evaluation(
    policy: &dyn Policy,
    n_episodes: usize,
    master_seed: u64,
    sim: &SimConfig,
    config_hash: &str,
    workers: usize,
) -> Result<(MetricsReport, Vec<EpisodeRecord>)> {
    let one = |i: usize| -> Result<EpisodeRecord> {
        let mut rng = rng_for(master_seed, Stream::Evaluation, i as u64);
        let scenario = generate_scenario(&sim.scenario, &mut rng)?;
        let mut rec = run_episode(policy, &scenario, sim, &mut rng)?;
        rec.index = i as u64;
        rec.seed = derive_seed(master_seed, Stream::Evaluation, i as u64);
        rec.config_hash = config_hash.to_string();
        Ok(rec)
    };
    let records: Vec<EpisodeRecord> = if workers <= 1 {
        (0..n_episodes).map(one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| (0..n_episodes).into_par_iter().map(one).collect::<Result<_>>())?
    };
    let report = compute_metrics(&records, sim.reward.d_disc)?;
    Ok((report, records))
}

/// Aligned text table, one row per labelled report.
pub fn format_table(rows: &[(&str, &MetricsReport)]) -> String {
    let header = ["Method", "Succ.", "Coll.", "Time Out", "Nav. Time", "Disc. Rate"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|(label, r)| {
            [
                label.to_string(),
                format!("{:.2}", r.success_rate),
                format!("{:.2}", r.collision_rate),
                format!("{:.2}", r.timeout_rate),
                r.nav_time.map_or_else(|| "-".to_string(), |t| format!("{t:.2}")),
                format!("{:.2}", r.disc_rate),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[&str]| {
        let mut parts = Vec::with_capacity(row.len());
        for (i, c) in row.iter().enumerate() {
            if i == 0 {
                parts.push(format!("{c:<w$}", w = widths[i]));
            } else {
                parts.push(format!("{c:>w$}", w = widths[i]));
            }
        }
        let _ = writeln!(out, "{}", parts.join(" | ").trim_end());
    };
    line(&mut out, &header);
    let total: usize = widths.iter().sum::<usize>() + 3 * (widths.len() - 1);
    let _ = writeln!(out, "{}", "-".repeat(total));
    for row in &cells {
        let refs: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&mut out, &refs);
    }
    out
}

pub fn report_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serialises");
    s.push('\n');
    s
}
