use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cpaseed::compare::compare;
use cpaseed::config::{ConfigError, ExperimentConfig};
use cpaseed::io::{read_dataset_csv, AtlasFile, Checkpoint};
use cpaseed::report::{network_distance_profile, VerifyReport};
use cpaseed::runner::run_experiment;
use cpaseed::svg::{median, render_histogram_svg, render_partition_svg, HistogramOptions, HistogramSeries};
use cpaseed_core::geometry::{enumerate_with, ConvexPolygon, EnumerateOptions, LOG_DISTANCE_FLOOR};
use cpaseed_core::verify::{run_suite_with, SuiteConfig, SuiteKind};

#[derive(Parser)]
#[command(name = "cpaseed", version, about = "Region-seeded training and exact region analysis of small CPA networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Lower,
    Upper,
    Growth,
    Intersection,
    Oracle,
}

impl From<Suite> for SuiteKind {
    fn from(s: Suite) -> Self {
        match s {
            Suite::Lower => SuiteKind::Lower,
            Suite::Upper => SuiteKind::Upper,
            Suite::Growth => SuiteKind::Growth,
            Suite::Intersection => SuiteKind::Intersection,
            Suite::Oracle => SuiteKind::Oracle,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config (or just `--seed`) and write run directories.
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exactly enumerate the regions of a checkpoint and write an atlas JSON.
    Enumerate {
        checkpoint: PathBuf,
        /// `xmin,ymin,xmax,ymax`.
        #[arg(long, default_value = "-1,-1,1,1")]
        domain: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a randomized theorem or oracle suite; exits nonzero on any violation.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Histogram of log data-to-hyperplane distances for one layer.
    Histogram {
        checkpoint: PathBuf,
        /// CSV with `x1,x2,label` columns.
        dataset: PathBuf,
        #[arg(long, default_value_t = 1)]
        layer: usize,
        /// A second checkpoint to overlay, e.g. the baseline.
        #[arg(long)]
        against: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        bins: usize,
        /// Neighborhood radius for the intersect scope.
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, default_value = "histogram.svg")]
        out: PathBuf,
    },
    /// Compare a baseline arm with a seeded arm (directories of `seed_*` runs).
    Compare {
        baseline: PathBuf,
        seeded: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        early_fraction: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render an atlas JSON as an SVG partition map.
    Plot {
        atlas: PathBuf,
        /// Dataset CSV to scatter on top.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    /// Bad input: missing files, malformed config.
    Usage(String),
    Runtime(String),
    Violations(String),
}

impl<E: std::fmt::Display> From<E> for Failure
where
    E: Into<Box<dyn std::error::Error>>,
{
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn parse_domain(s: &str) -> Result<ConvexPolygon, Failure> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Usage(format!("--domain `{s}`: {e}")))?;
    match v[..] {
        [x0, y0, x1, y1] if x0 < x1 && y0 < y1 => Ok(ConvexPolygon::rect([x0, y0], [x1, y1])),
        _ => Err(Failure::Usage(format!("--domain `{s}`: expected xmin,ymin,xmax,ymax"))),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    if !path.exists() {
        return Err(Failure::Usage(format!("{}: no such file", path.display())));
    }
    Checkpoint::load(path).map_err(|e| Failure::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config).map_err(|e| match e {
                e @ (ConfigError::Io { .. } | ConfigError::Parse { .. } | ConfigError::Invalid(_)) => {
                    Failure::Usage(e.to_string())
                }
            })?;
            if let Some(dir) = out {
                cfg.output.dir = dir;
            }
            let seeds = seed.map_or_else(|| cfg.schedule.seeds.clone(), |s| vec![s]);
            for s in seeds {
                let outcome = run_experiment(&cfg, s)?;
                let n = outcome.final_region_count().map_or_else(|| "-".to_string(), |n| n.to_string());
                println!("{}\tfinal regions {n}", outcome.dir.display());
            }
        }
        Command::Enumerate { checkpoint, domain, out } => {
            let ck = load_checkpoint(&checkpoint)?;
            let domain = parse_domain(&domain)?;
            let net = ck.net.fold_batchnorm()?;
            let atlas = enumerate_with(&net, &domain, &EnumerateOptions::default())?;
            let n = atlas.count();
            AtlasFile::new(atlas, Some(ck.epoch)).save(&out)?;
            println!("{n}");
        }
        Command::Verify { suite, instances, seed, out } => {
            let cfg = SuiteConfig::new(suite.into(), instances, seed);
            let report = run_suite_with(&cfg, |rec| {
                if rec.verdict == cpaseed_core::verify::Verdict::Violated {
                    eprintln!("violation: instance {} ({})", rec.instance.id, rec.reason);
                }
            })?;
            let json = serde_json::to_string_pretty(&VerifyReport::from(&report))?;
            match out {
                Some(path) => write_text(&path, &(json + "\n"))?,
                None => println!("{json}"),
            }
            eprintln!(
                "{} adjudicated, {} violations, {} skipped of {} attempts",
                report.adjudicated(),
                report.violated,
                report.skipped,
                report.attempts
            );
            if report.violated > 0 {
                return Err(Failure::Violations(format!("{} violations", report.violated)));
            }
            if !report.passed() {
                return Err(Failure::Runtime(format!(
                    "only {} of {} instances adjudicated",
                    report.adjudicated(),
                    instances
                )));
            }
        }
        Command::Histogram { checkpoint, dataset, layer, against, bins, eps, out } => {
            if !dataset.exists() {
                return Err(Failure::Usage(format!("{}: no such file", dataset.display())));
            }
            let ds = read_dataset_csv(&dataset)?;
            let mut series = Vec::new();
            let mut add = |path: &Path, name: &str| -> Result<(), Failure> {
                let ck = load_checkpoint(path)?;
                let p = network_distance_profile(&ck.net, &ds.points, layer, eps)?;
                for (scope, samples) in [("all neurons", p.all), ("intersect neurons", p.intersect)] {
                    let label = format!("{name}{scope}");
                    println!("{label}\tn={}\tmedian={:?}", samples.len(), median(&samples));
                    series.push(HistogramSeries { label, samples });
                }
                Ok(())
            };
            if let Some(other) = &against {
                add(other, "against: ")?;
                add(&checkpoint, "this: ")?;
            } else {
                add(&checkpoint, "")?;
            }
            let opts = HistogramOptions {
                bins,
                title: format!("Layer {layer} data-to-hyperplane distances"),
                floor: Some(LOG_DISTANCE_FLOOR.ln()),
                ..HistogramOptions::default()
            };
            write_text(&out, &render_histogram_svg(&series, &opts))?;
        }
        Command::Compare { baseline, seeded, early_fraction, out } => {
            let report = compare(&baseline, &seeded, early_fraction)?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => write_text(&path, &(json + "\n"))?,
                None => println!("{json}"),
            }
        }
        Command::Plot { atlas, data, out } => {
            if !atlas.exists() {
                return Err(Failure::Usage(format!("{}: no such file", atlas.display())));
            }
            let file = AtlasFile::load(&atlas)?;
            let ds = data.as_deref().map(read_dataset_csv).transpose()?;
            let out = out.unwrap_or_else(|| atlas.with_extension("svg"));
            write_text(&out, &render_partition_svg(&file.atlas, ds.as_ref()))?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::FAILURE
        }
        Err(Failure::Violations(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(3)
        }
    }
}
