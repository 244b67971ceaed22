//! Baseline-versus-seeded summaries over the seeds of two run directories.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig};
use crate::runner::{read_metrics_csv, MetricRow, RunError};

#[derive(Debug, thiserror::Error)]
pub enum CompareError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}: no seed_* run directories")]
    NoRuns(PathBuf),
    #[error("runs differ in {0}")]
    Mismatch(String),
}

/// The runs of one arm, in seed order.
#[derive(Debug, Clone)]
pub struct Arm {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub rows: Vec<Vec<MetricRow>>,
}

pub fn load_arm(dir: &Path) -> Result<Arm, CompareError> {
    let mut runs = Vec::new();
    let entries =
        std::fs::read_dir(dir).map_err(|source| RunError::Io(crate::io::IoError::Io { path: dir.into(), source }))?;
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(seed) = name.strip_prefix("seed_").and_then(|s| s.parse::<u64>().ok()) {
            runs.push((seed, entry.path()));
        }
    }
    runs.sort();
    let Some((_, first)) = runs.first() else {
        return Err(CompareError::NoRuns(dir.into()));
    };
    let config = ExperimentConfig::load(&first.join("config.toml"))?;
    let mut arm = Arm { dir: dir.into(), config, seeds: Vec::new(), rows: Vec::new() };
    for (seed, path) in &runs {
        let cfg = ExperimentConfig::load(&path.join("config.toml"))?;
        if cfg.penalty != arm.config.penalty {
            return Err(CompareError::Mismatch(format!("penalty settings within {}", dir.display())));
        }
        arm.seeds.push(*seed);
        arm.rows.push(read_metrics_csv(&path.join("metrics.csv"))?);
    }
    Ok(arm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMeans {
    pub epoch: u32,
    pub test_acc: f64,
    pub task_loss: f64,
    pub region_count: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub early_mean_acc: f64,
    pub final_test_acc: f64,
    pub final_task_loss: f64,
    pub final_region_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmSummary {
    pub dir: PathBuf,
    pub seeds: Vec<SeedSummary>,
    pub per_epoch: Vec<EpochMeans>,
    pub early_mean_acc: f64,
    pub final_test_acc: f64,
    pub final_region_count: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochDelta {
    pub epoch: u32,
    pub test_acc: f64,
    pub task_loss: f64,
    pub region_count: Option<f64>,
}

/// Seeded minus baseline throughout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub early_fraction: f64,
    /// Epochs `1..=early_last` form the early window.
    pub early_last: u32,
    pub baseline: ArmSummary,
    pub seeded: ArmSummary,
    pub deltas: Vec<EpochDelta>,
    pub early_acc_delta: f64,
    pub final_acc_delta: f64,
    pub final_region_delta: Option<f64>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn summarize(arm: &Arm, early_last: u32) -> ArmSummary {
    let seeds: Vec<SeedSummary> = arm
        .seeds
        .iter()
        .zip(&arm.rows)
        .map(|(&seed, rows)| {
            let last = rows.last().expect("runs have rows");
            SeedSummary {
                seed,
                early_mean_acc: mean(rows.iter().filter(|r| (1..=early_last).contains(&r.epoch)).map(|r| r.test_acc)),
                final_test_acc: last.test_acc,
                final_task_loss: last.task_loss,
                final_region_count: rows.iter().rev().find_map(|r| r.region_count),
            }
        })
        .collect();
    let per_epoch = arm.rows[0]
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let at = || arm.rows.iter().map(move |rows| &rows[i]);
            EpochMeans {
                epoch: r.epoch,
                test_acc: mean(at().map(|r| r.test_acc)),
                task_loss: mean(at().map(|r| r.task_loss)),
                region_count: r.region_count.map(|_| mean(at().filter_map(|r| r.region_count).map(|n| n as f64))),
            }
        })
        .collect();
    let final_region_count = seeds
        .iter()
        .map(|s| s.final_region_count)
        .collect::<Option<Vec<_>>>()
        .map(|v| mean(v.into_iter().map(|n| n as f64)));
    ArmSummary {
        dir: arm.dir.clone(),
        early_mean_acc: mean(seeds.iter().map(|s| s.early_mean_acc)),
        final_test_acc: mean(seeds.iter().map(|s| s.final_test_acc)),
        final_region_count,
        seeds,
        per_epoch,
    }
}

fn check_compatible(a: &Arm, b: &Arm) -> Result<(), CompareError> {
    let (x, y) = (&a.config, &b.config);
    let blocks = [
        ("dataset", x.dataset == y.dataset),
        ("model", x.model == y.model),
        ("optimizer", x.optimizer == y.optimizer),
        (
            "schedule",
            x.schedule.enumerate_every == y.schedule.enumerate_every
                && x.schedule.metric_every == y.schedule.metric_every,
        ),
    ];
    if let Some((name, _)) = blocks.iter().find(|(_, same)| !same) {
        return Err(CompareError::Mismatch(format!("the {name} block")));
    }
    for arm in [a, b] {
        let epochs: Vec<u32> = arm.rows[0].iter().map(|r| r.epoch).collect();
        for rows in &arm.rows {
            if rows.iter().map(|r| r.epoch).ne(epochs.iter().copied()) {
                return Err(CompareError::Mismatch(format!("recorded epochs within {}", arm.dir.display())));
            }
        }
    }
    if a.rows[0].iter().map(|r| r.epoch).ne(b.rows[0].iter().map(|r| r.epoch)) {
        return Err(CompareError::Mismatch("recorded epochs".into()));
    }
    Ok(())
}

/// Compares two arms whose runs share dataset, model and optimizer settings.
pub fn compare_arms(baseline: &Arm, seeded: &Arm, early_fraction: f64) -> Result<CompareReport, CompareError> {
    check_compatible(baseline, seeded)?;
    let epochs = baseline.config.optimizer.epochs;
    let early_last = ((early_fraction * epochs as f64).floor() as u32).clamp(1, epochs);
    let b = summarize(baseline, early_last);
    let s = summarize(seeded, early_last);
    let deltas = b
        .per_epoch
        .iter()
        .zip(&s.per_epoch)
        .map(|(x, y)| EpochDelta {
            epoch: x.epoch,
            test_acc: y.test_acc - x.test_acc,
            task_loss: y.task_loss - x.task_loss,
            region_count: x.region_count.zip(y.region_count).map(|(p, q)| q - p),
        })
        .collect();
    Ok(CompareReport {
        early_fraction,
        early_last,
        early_acc_delta: s.early_mean_acc - b.early_mean_acc,
        final_acc_delta: s.final_test_acc - b.final_test_acc,
        final_region_delta: b.final_region_count.zip(s.final_region_count).map(|(p, q)| q - p),
        baseline: b,
        seeded: s,
        deltas,
    })
}

pub fn compare(baseline: &Path, seeded: &Path, early_fraction: f64) -> Result<CompareReport, CompareError> {
    compare_arms(&load_arm(baseline)?, &load_arm(seeded)?, early_fraction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::run_experiment;

    fn tiny(dir: &Path, alpha: f64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.n = 40;
        cfg.model.width = 4;
        cfg.model.depth = 2;
        cfg.optimizer.epochs = 10;
        cfg.optimizer.lr = 1e-2;
        cfg.schedule.enumerate_every = 5;
        cfg.penalty.alpha = alpha;
        cfg.output.dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn run_compared_with_itself_has_zero_deltas() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path(), 1e-2);
        for seed in [0, 1] {
            run_experiment(&cfg, seed).unwrap();
        }
        let r = compare(dir.path(), dir.path(), 0.2).unwrap();
        assert_eq!(r.early_last, 2);
        assert_eq!(r.early_acc_delta, 0.0);
        assert_eq!(r.final_region_delta, Some(0.0));
        assert!(r.deltas.iter().all(|d| d.test_acc == 0.0 && d.task_loss == 0.0));
        assert_eq!(r.seeded.seeds.len(), 2);
        assert_eq!(r.seeded.seeds[1].seed, 1);
    }

    #[test]
    fn per_epoch_means_and_deltas() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for seed in [0, 1, 2] {
            run_experiment(&tiny(a.path(), 0.0), seed).unwrap();
            run_experiment(&tiny(b.path(), 0.5), seed).unwrap();
        }
        let r = compare(a.path(), b.path(), 0.5).unwrap();
        let arm = load_arm(a.path()).unwrap();
        let want = mean(arm.rows.iter().map(|rows| rows[3].test_acc));
        assert_eq!(r.baseline.per_epoch[3].test_acc, want);
        let n = r.baseline.final_region_count.unwrap();
        let m = r.seeded.final_region_count.unwrap();
        assert_eq!(r.final_region_delta, Some(m - n));
        assert_eq!(r.deltas.len(), 11);
    }

    #[test]
    fn mismatched_configs_are_rejected() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&tiny(a.path(), 0.0), 0).unwrap();
        let mut other = tiny(b.path(), 0.0);
        other.model.width = 5;
        run_experiment(&other, 0).unwrap();
        assert!(matches!(compare(a.path(), b.path(), 0.2), Err(CompareError::Mismatch(_))));
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(compare(a.path(), empty.path(), 0.2), Err(CompareError::NoRuns(_))));
    }
}
