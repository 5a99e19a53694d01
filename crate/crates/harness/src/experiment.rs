//! Seeded batches of sessions in both modes, their CSV and summary statistics.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use convoforge_core::{GatewayContext, Mode};
use rayon::prelude::*;

use crate::policy::OperatorPolicy;
use crate::session::{run_session, MetricsRecord, SessionRun};
use crate::HarnessError;

pub const CSV_HEADER: [&str; 6] = ["session_id", "mode", "seed", "total_time_s", "steps_correct", "turns"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub n_per_mode: usize,
    pub error_rate: f64,
    pub base_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub stddev: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        let n = values.len() as f64;
        if values.is_empty() {
            return Stats { mean: 0.0, stddev: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n;
        let stddev = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stats { mean, stddev }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeSummary {
    pub sessions: usize,
    pub time: Stats,
    pub steps: Stats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentSummary {
    pub conversation: ModeSummary,
    pub baseline: ModeSummary,
    /// (conversation - baseline) / baseline of mean time.
    pub time_delta: f64,
    /// (conversation - baseline) / baseline of mean correct steps.
    pub steps_delta: f64,
}

impl ExperimentSummary {
    pub fn from_records(records: &[MetricsRecord]) -> ExperimentSummary {
        let mode = |m: Mode| {
            let rs: Vec<&MetricsRecord> = records.iter().filter(|r| r.mode == m).collect();
            ModeSummary {
                sessions: rs.len(),
                time: Stats::of(&rs.iter().map(|r| r.total_time_s).collect::<Vec<_>>()),
                steps: Stats::of(&rs.iter().map(|r| r.steps_correct as f64).collect::<Vec<_>>()),
            }
        };
        let conversation = mode(Mode::Conversation);
        let baseline = mode(Mode::Baseline);
        let rel = |a: f64, b: f64| if b == 0.0 { 0.0 } else { (a - b) / b };
        ExperimentSummary {
            time_delta: rel(conversation.time.mean, baseline.time.mean),
            steps_delta: rel(conversation.steps.mean, baseline.steps.mean),
            conversation,
            baseline,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub runs: Vec<SessionRun>,
    pub summary: ExperimentSummary,
}

impl Experiment {
    pub fn records(&self) -> Vec<MetricsRecord> {
        self.runs.iter().map(|r| r.record.clone()).collect()
    }
}

pub fn session_id(mode: Mode, index: usize) -> String {
    format!("{mode}-{index:03}")
}

/// Runs `n_per_mode` sessions per mode. Session `i` of either mode uses seed
/// `base_seed + i`, so both modes face the same noise draws.
pub fn run_experiment(ctx: Arc<GatewayContext>, cfg: ExperimentConfig) -> Result<Experiment, HarnessError> {
    if cfg.n_per_mode == 0 {
        return Err(HarnessError::EmptyExperiment);
    }
    let jobs: Vec<(Mode, usize)> = [Mode::Conversation, Mode::Baseline]
        .into_iter()
        .flat_map(|m| (0..cfg.n_per_mode).map(move |i| (m, i)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(mode, i)| {
            let seed = cfg.base_seed.wrapping_add(i as u64);
            let policy = OperatorPolicy::nominal(&ctx.task, cfg.error_rate, seed)?;
            run_session(ctx.clone(), &policy, mode, &session_id(mode, i))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let records: Vec<MetricsRecord> = runs.iter().map(|r| r.record.clone()).collect();
    Ok(Experiment {
        summary: ExperimentSummary::from_records(&records),
        runs,
    })
}

pub fn write_csv<W: io::Write>(records: &[MetricsRecord], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.session_id.clone(),
            r.mode.to_string(),
            r.seed.to_string(),
            format!("{:.3}", r.total_time_s),
            r.steps_correct.to_string(),
            r.turns.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every transcript as `<session_id>.jsonl` under `dir`.
pub fn write_transcripts(runs: &[SessionRun], dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    for r in runs {
        fs::write(dir.join(format!("{}.jsonl", r.record.session_id)), &r.transcript)?;
    }
    Ok(())
}
