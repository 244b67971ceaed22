//! End-to-end training runs: Adam on the seeded loss, periodic metrics and
//! exact region counts, and the run directory on disk.
//!
//! Epoch numbering: row `t` describes the network after `t` completed epochs,
//! so row 0 is the initialization. Training epoch `t` (zero-based) uses the
//! annealing factor `η(t)`, and row `t` reports the penalty at `η(t)`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cpaseed_core::data::Dataset;
use cpaseed_core::geometry::{enumerate_with, ConvexPolygon, EnumerateOptions, GeometryError, PartitionAtlas};
use cpaseed_core::net::{accuracy, softmax_cross_entropy, AdamState, Mode, NetError};
use cpaseed_core::seeding::{penalty_gradients, seeded_loss, total_penalty, PenaltyError};
use cpaseed_core::{CpaGraph, Matrix, Rng};

use crate::config::{ConfigError, ExperimentConfig};
use crate::io::{write_dataset_csv, AtlasFile, Checkpoint, IoError};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("network: {0}")]
    Net(#[from] NetError),
    #[error("penalty: {0}")]
    Penalty(#[from] PenaltyError),
    #[error("enumeration at epoch {epoch}: {source}")]
    Enumeration { epoch: u32, source: GeometryError },
    #[error("non-finite loss in epoch {epoch}, batch {batch}: task {task}, penalty {penalty}")]
    NonFinite { epoch: u32, batch: usize, task: f64, penalty: f64 },
    #[error("{path}: {message}")]
    Metrics { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: u32,
    /// Cross-entropy on the training set, penalty excluded.
    pub task_loss: f64,
    pub total_loss: f64,
    pub test_acc: f64,
    /// `α·η(t)·Σ λ_ℓ R_ℓ`.
    pub penalty: f64,
    /// Unweighted `R_ℓ` per activation module.
    pub per_layer: Vec<f64>,
    pub region_count: Option<usize>,
    pub wallclock_s: Option<f64>,
}

pub fn metrics_header(modules: usize) -> Vec<String> {
    let mut h: Vec<String> =
        ["epoch", "task_loss", "total_loss", "test_acc", "penalty"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=modules).map(|l| format!("penalty_l{l}")));
    h.push("region_count".into());
    h.push("wallclock_s".into());
    h
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow], modules: usize) -> Result<(), RunError> {
    let csv_err = |e: csv::Error| RunError::Metrics { path: path.to_path_buf(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(metrics_header(modules)).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.epoch.to_string(),
            r.task_loss.to_string(),
            r.total_loss.to_string(),
            r.test_acc.to_string(),
            r.penalty.to_string(),
        ];
        rec.extend(r.per_layer.iter().map(|v| v.to_string()));
        rec.push(r.region_count.map_or_else(String::new, |n| n.to_string()));
        rec.push(r.wallclock_s.map_or_else(String::new, |s| format!("{s:.3}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| RunError::Metrics { path: path.to_path_buf(), message: e.to_string() })
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>, RunError> {
    let bad = |message: String| RunError::Metrics { path: path.to_path_buf(), message };
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let modules = header.len().checked_sub(7).ok_or_else(|| bad("too few columns".into()))?;
    if header.iter().collect::<Vec<_>>() != metrics_header(modules) {
        return Err(bad(format!("unexpected header {:?}", header)));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        rows.push(MetricRow {
            epoch: rec[0].parse().map_err(|e| bad(format!("epoch: {e}")))?,
            task_loss: num(&rec[1])?,
            total_loss: num(&rec[2])?,
            test_acc: num(&rec[3])?,
            penalty: num(&rec[4])?,
            per_layer: (0..modules).map(|l| num(&rec[5 + l])).collect::<Result<_, _>>()?,
            region_count: opt(&rec[5 + modules])?.map(|v| v as usize),
            wallclock_s: opt(&rec[6 + modules])?,
        });
    }
    Ok(rows)
}

/// What a finished run leaves behind, besides its directory.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    pub net: CpaGraph,
    pub train: Dataset,
    pub test: Dataset,
}

impl RunOutcome {
    pub fn final_region_count(&self) -> Option<usize> {
        self.rows.iter().rev().find_map(|r| r.region_count)
    }
}

/// `<output.dir>/seed_<seed>`.
pub fn run_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output.dir.join(format!("seed_{seed}"))
}

/// The input domain of every run.
pub fn domain() -> ConvexPolygon {
    ConvexPolygon::square([0.0, 0.0], 1.0)
}

/// Exact partition of the eval-mode network on the domain.
pub fn enumerate_net(net: &CpaGraph, with_traces: bool) -> Result<PartitionAtlas, GeometryError> {
    let folded = net.fold_batchnorm().map_err(GeometryError::from)?;
    let opts = EnumerateOptions { collect_traces: with_traces, ..EnumerateOptions::default() };
    enumerate_with(&folded, &domain(), &opts)
}

fn is_enumeration_epoch(cfg: &ExperimentConfig, t: u32) -> bool {
    t == 0 || t == cfg.optimizer.epochs || t.is_multiple_of(cfg.schedule.enumerate_every)
}

fn is_metric_epoch(cfg: &ExperimentConfig, t: u32) -> bool {
    is_enumeration_epoch(cfg, t) || t.is_multiple_of(cfg.schedule.metric_every)
}

fn gather(ds: &Dataset, idx: &[usize]) -> (Matrix, Vec<usize>) {
    let mut x = Vec::with_capacity(2 * idx.len());
    for &i in idx {
        x.extend_from_slice(&ds.points[i]);
    }
    (Matrix::from_vec(idx.len(), 2, x), idx.iter().map(|&i| ds.labels[i]).collect())
}

struct Evaluator<'a> {
    cfg: &'a ExperimentConfig,
    train_x: Matrix,
    test_x: Matrix,
    train: &'a Dataset,
    test: &'a Dataset,
    dir: &'a Path,
    start: Instant,
}

impl Evaluator<'_> {
    fn row(&self, net: &CpaGraph, t: u32) -> Result<MetricRow, RunError> {
        let trace = net.forward_with(&self.train_x, Mode::Eval)?;
        let (task_loss, _) = softmax_cross_entropy(trace.logits(), &self.train.labels)?;
        let report = total_penalty(&trace, &self.cfg.penalty, t)?;
        let test_logits = net.forward_with(&self.test_x, Mode::Eval)?;
        let region_count = if is_enumeration_epoch(self.cfg, t) {
            let before = net.fingerprint();
            let atlas = enumerate_net(net, self.cfg.schedule.dump_atlas)
                .map_err(|source| RunError::Enumeration { epoch: t, source })?;
            debug_assert_eq!(before, net.fingerprint());
            if self.cfg.schedule.dump_atlas {
                let n = atlas.count();
                AtlasFile::new(atlas, Some(t)).save(&self.dir.join("atlas").join(format!("epoch_{t:04}.json")))?;
                Some(n)
            } else {
                Some(atlas.count())
            }
        } else {
            None
        };
        Ok(MetricRow {
            epoch: t,
            task_loss,
            total_loss: seeded_loss(task_loss, report.total),
            test_acc: accuracy(test_logits.logits(), &self.test.labels),
            penalty: report.total,
            per_layer: report.per_layer,
            region_count,
            wallclock_s: self.cfg.schedule.wallclock.then(|| self.start.elapsed().as_secs_f64()),
        })
    }
}

/// Trains one seed of `cfg` and writes its run directory: `metrics.csv`,
/// `checkpoint.json`, `config.toml`, `data/{train,test}.csv` and, when
/// enabled, `atlas/epoch_NNNN.json`.
///
/// The dataset and split depend only on the config; `seed` drives the
/// initialization and the minibatch order.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let dir = run_dir(cfg, seed);
    std::fs::create_dir_all(&dir).map_err(|source| IoError::Io { path: dir.clone(), source })?;
    let (train, test) = cfg.dataset.generate_split()?;
    let mut rng = Rng::seed_from_u64(seed);
    let mut init_rng = rng.fork(0);
    let mut order_rng = rng.fork(1);
    let mut net = cfg.model.build(train.classes.max(test.classes), &mut init_rng)?;
    net.set_mode(Mode::Eval);
    let modules = net.num_modules();
    let adam_cfg = cfg.optimizer.adam();
    let mut adam = AdamState::new(&net);

    let eval = Evaluator {
        cfg,
        train_x: train.inputs(),
        test_x: test.inputs(),
        train: &train,
        test: &test,
        dir: &dir,
        start: Instant::now(),
    };
    let mut rows = vec![eval.row(&net, 0)?];
    let mut order: Vec<usize> = (0..train.len()).collect();
    for t in 0..cfg.optimizer.epochs {
        order_rng.shuffle(&mut order);
        for (batch, idx) in order.chunks(cfg.optimizer.batch_size).enumerate() {
            let (x, labels) = gather(&train, idx);
            let trace = net.forward_with(&x, Mode::Train)?;
            let (task, dlogits) = softmax_cross_entropy(trace.logits(), &labels)?;
            let (penalty, pgrads) = if cfg.penalty.scale(t) > 0.0 {
                let report = total_penalty(&trace, &cfg.penalty, t)?;
                (report.total, Some(penalty_gradients(&trace, &cfg.penalty, t)?))
            } else {
                (0.0, None)
            };
            if !task.is_finite() || !penalty.is_finite() {
                return Err(RunError::NonFinite { epoch: t, batch, task, penalty });
            }
            let grads = net.backward(&trace, &dlogits, pgrads.as_deref())?;
            net.update_running_stats(&trace)?;
            adam.step_net(&mut net, &grads, &adam_cfg)?;
        }
        if is_metric_epoch(cfg, t + 1) {
            rows.push(eval.row(&net, t + 1)?);
        }
    }

    write_metrics_csv(&dir.join("metrics.csv"), &rows, modules)?;
    let mut ck = Checkpoint::new(net.clone(), cfg.optimizer.epochs, seed);
    ck.adam = Some(adam);
    ck.config = Some(cfg.clone());
    ck.save(&dir.join("checkpoint.json"))?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())
        .map_err(|source| IoError::Io { path: dir.join("config.toml"), source })?;
    write_dataset_csv(&train, &dir.join("data").join("train.csv"))?;
    write_dataset_csv(&test, &dir.join("data").join("test.csv"))?;
    Ok(RunOutcome { dir, seed, rows, net, train, test })
}
