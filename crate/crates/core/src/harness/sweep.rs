//! Multi-seed sweeps with per-cell mean and standard deviation.

use std::io::Write;
use std::path::Path;

use log::warn;
use serde::Serialize;

use crate::error::Result;
use crate::harness::config::RunConfig;
use crate::harness::run::run_experiment;

pub const SWEEP_SEEDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub config: String,
    /// `seed` for a single run, `aggregate` for the per-config mean/std row.
    pub kind: String,
    pub seed: Option<u64>,
    pub policy: String,
    pub mechanism: String,
    pub eps_total: f64,
    pub horizon: usize,
    pub min_horizon: usize,
    pub rounds_executed: Option<f64>,
    pub final_rmse: Option<f64>,
    pub final_f1: Option<f64>,
    pub rmse_std: Option<f64>,
    pub f1_std: Option<f64>,
    pub error: String,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every config over `seeds` consecutive seeds starting at its own
/// `seed`. Failed runs become rows with an error message; the sweep goes on.
/// When `out_dir` is given each run's files go to `out_dir/<name>/seed_<s>`.
pub fn sweep(configs: &[(String, RunConfig)], seeds: usize, out_dir: Option<&Path>) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for (name, cfg) in configs {
        let base = |kind: &str, seed: Option<u64>| SweepRow {
            config: name.clone(),
            kind: kind.to_string(),
            seed,
            policy: cfg.policy.name().to_string(),
            mechanism: cfg.mechanism.name().to_string(),
            eps_total: cfg.eps_total,
            horizon: cfg.horizon,
            min_horizon: cfg.min_horizon,
            rounds_executed: None,
            final_rmse: None,
            final_f1: None,
            rmse_std: None,
            f1_std: None,
            error: String::new(),
        };
        let (mut rmse, mut f1, mut rounds) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..seeds as u64 {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = cfg.seed + i;
            let mut row = base("seed", Some(run_cfg.seed));
            let outcome = run_experiment(&run_cfg).and_then(|res| {
                if let Some(dir) = out_dir {
                    res.write(&dir.join(name).join(format!("seed_{}", run_cfg.seed)), run_cfg.actions)?;
                }
                Ok(res)
            });
            match outcome {
                Ok(res) => {
                    let s = &res.summary;
                    row.rounds_executed = Some(s.rounds_executed as f64);
                    row.final_rmse = Some(s.final_rmse);
                    row.final_f1 = Some(s.final_f1);
                    rmse.push(s.final_rmse);
                    f1.push(s.final_f1);
                    rounds.push(s.rounds_executed as f64);
                }
                Err(e) => {
                    warn!("{name} seed {}: {e}", run_cfg.seed);
                    row.error = e.to_string();
                }
            }
            rows.push(row);
        }
        let mut agg = base("aggregate", None);
        if !rmse.is_empty() {
            let (rm, rs) = mean_std(&rmse);
            let (fm, fs) = mean_std(&f1);
            agg.rounds_executed = Some(mean_std(&rounds).0);
            agg.final_rmse = Some(rm);
            agg.rmse_std = Some(rs);
            agg.final_f1 = Some(fm);
            agg.f1_std = Some(fs);
        }
        if rmse.len() < seeds {
            agg.error = format!("{} of {seeds} runs failed", seeds - rmse.len());
        }
        rows.push(agg);
    }
    rows
}

pub fn write_rows<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }
}
