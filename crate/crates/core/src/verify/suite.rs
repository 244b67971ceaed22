use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{
    check_intersection_sufficiency, check_lower_bound, check_monotone_growth, check_oracle_equivalence,
    check_upper_bound, random_verification_net, Check, NetSampler, NewUnit, OracleConfig, Verdict, VerificationRecord,
    VerifyError, VerifyOptions,
};
use crate::geometry::{
    enumerate_regions, enumerate_with, local_neighborhood, local_pre_activation_maps, parent_cell, ConvexPolygon,
    EnumerateOptions, GeometryError, NeighborhoodShape, Point,
};
use crate::net::CpaGraph;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SuiteKind {
    Lower,
    Upper,
    Growth,
    Intersection,
    Oracle,
}

impl SuiteKind {
    pub fn check(self) -> Check {
        match self {
            SuiteKind::Lower => Check::LowerBound,
            SuiteKind::Upper => Check::UpperBound,
            SuiteKind::Growth => Check::MonotoneGrowth,
            SuiteKind::Intersection => Check::IntersectionSufficiency,
            SuiteKind::Oracle => Check::Oracle,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SuiteConfig {
    pub kind: SuiteKind,
    /// Number of adjudicated (non-skipped) instances to collect.
    pub instances: usize,
    pub seed: u64,
    /// Give up after `instances × max_attempt_factor` draws.
    pub max_attempt_factor: usize,
    pub eps_choices: Vec<f64>,
    pub sampler: NetSampler,
    pub options: VerifyOptions,
    pub oracle: OracleConfig,
    pub domain: ConvexPolygon,
}

impl SuiteConfig {
    pub fn new(kind: SuiteKind, instances: usize, seed: u64) -> Self {
        SuiteConfig {
            kind,
            instances,
            seed,
            max_attempt_factor: 20,
            eps_choices: vec![0.05, 0.1, 0.2],
            sampler: NetSampler::default(),
            options: VerifyOptions::default(),
            oracle: OracleConfig::default(),
            domain: ConvexPolygon::square([0.0, 0.0], 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SuiteReport {
    pub kind: SuiteKind,
    pub seed: u64,
    pub requested: usize,
    pub attempts: usize,
    pub holds: usize,
    pub violated: usize,
    pub skipped: usize,
    /// Skip reasons with their counts, sorted by reason.
    pub skip_reasons: Vec<(String, usize)>,
    /// All records in instance order; only violations carry reproducers.
    pub records: Vec<VerificationRecord>,
}

impl SuiteReport {
    pub fn adjudicated(&self) -> usize {
        self.holds + self.violated
    }

    pub fn skip_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.skipped as f64 / self.attempts as f64
        }
    }

    pub fn violations(&self) -> impl Iterator<Item = &VerificationRecord> {
        self.records.iter().filter(|r| r.verdict == Verdict::Violated)
    }

    /// No violations and the requested number of adjudicated instances.
    pub fn passed(&self) -> bool {
        self.violated == 0 && self.adjudicated() >= self.requested
    }
}

/// Seed of instance `id` of a suite seeded with `suite_seed`.
pub fn instance_seed(suite_seed: u64, id: usize) -> u64 {
    Rng::seed_from_u64(suite_seed).fork(id as u64).next_u64()
}

/// Draws and checks instances until `cfg.instances` are adjudicated or the
/// attempt budget runs out.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport, VerifyError> {
    run_suite_with(cfg, |_| {})
}

/// [`run_suite`] with a callback after every record.
pub fn run_suite_with(
    cfg: &SuiteConfig,
    mut progress: impl FnMut(&VerificationRecord),
) -> Result<SuiteReport, VerifyError> {
    let budget = cfg.instances.saturating_mul(cfg.max_attempt_factor.max(1));
    let mut report = SuiteReport {
        kind: cfg.kind,
        seed: cfg.seed,
        requested: cfg.instances,
        attempts: 0,
        holds: 0,
        violated: 0,
        skipped: 0,
        skip_reasons: Vec::new(),
        records: Vec::new(),
    };
    while report.adjudicated() < cfg.instances && report.attempts < budget {
        let id = report.attempts;
        let seed = instance_seed(cfg.seed, id);
        let mut rec = run_instance(cfg, seed)?;
        rec.instance.id = id;
        rec.instance.seed = seed;
        report.attempts += 1;
        match rec.verdict {
            Verdict::Holds => report.holds += 1,
            Verdict::Violated => report.violated += 1,
            Verdict::SkippedDegenerate => {
                report.skipped += 1;
                match report.skip_reasons.binary_search_by(|(r, _)| r.as_str().cmp(&rec.reason)) {
                    Ok(k) => report.skip_reasons[k].1 += 1,
                    Err(k) => report.skip_reasons.insert(k, (rec.reason.clone(), 1)),
                }
            }
        }
        progress(&rec);
        report.records.push(rec);
    }
    Ok(report)
}

fn draw_point(rng: &mut Rng, domain: &ConvexPolygon) -> Point {
    let (lo, hi) = domain.bbox();
    loop {
        let x = [rng.uniform_in(lo[0], hi[0]), rng.uniform_in(lo[1], hi[1])];
        if domain.contains_strict(x, 0.0) {
            return x;
        }
    }
}

/// One instance of `cfg.kind`, fully determined by `seed`.
pub fn run_instance(cfg: &SuiteConfig, seed: u64) -> Result<VerificationRecord, VerifyError> {
    let mut rng = Rng::seed_from_u64(seed);
    let net = random_verification_net(&mut rng, &cfg.sampler);
    let opts = &cfg.options;
    let tol = &opts.tol;
    if cfg.kind == SuiteKind::Oracle {
        return check_oracle_equivalence(&net, &cfg.domain, tol, &cfg.oracle);
    }
    let x = draw_point(&mut rng, &cfg.domain);
    let eps = cfg.eps_choices[rng.index(cfg.eps_choices.len())];
    let mut rec = match cfg.kind {
        SuiteKind::Lower => {
            let atlas = enumerate_regions(&net, &cfg.domain, tol)?;
            check_lower_bound(&net, &atlas, x, eps, NeighborhoodShape::Square, opts)?
        }
        SuiteKind::Upper => {
            let atlas = enumerate_regions(&net, &cfg.domain, tol)?;
            check_upper_bound(&net, &atlas, x, eps, opts)?
        }
        SuiteKind::Growth => {
            let atlas = enumerate_regions(&net, &cfg.domain, tol)?;
            let module = 1 + rng.index(net.num_modules());
            let unit = placed_unit(&net, module, x, eps, cfg.sampler.bias_half_width, &mut rng)?;
            check_monotone_growth(&net, &atlas, &unit, x, eps, opts)?
        }
        SuiteKind::Intersection => intersection_instance(&net, cfg, x, eps, &mut rng)?,
        SuiteKind::Oracle => unreachable!(),
    };
    rec.instance.eps = Some(eps);
    Ok(rec)
}

/// A random unit for `module` whose bias is shifted so that its pre-activation
/// at `x` is uniform in `±ε·‖a‖`, where `a` is its local normal at `x`; its zero
/// line then passes within `ε` of `x` on the cell of `x`.
fn placed_unit(
    net: &CpaGraph,
    module: usize,
    x: Point,
    eps: f64,
    bias_half_width: f64,
    rng: &mut Rng,
) -> Result<NewUnit, VerifyError> {
    let mut unit = NewUnit::random(net, module, bias_half_width, rng)?;
    unit.bias = 0.0;
    let aug = super::augment_with_unit(net, &unit)?;
    let maps = local_pre_activation_maps(&aug, x)?;
    let index = aug.module_widths()[module - 1] - 1;
    let a = maps[module - 1].normal(index);
    let z0 = maps[module - 1].eval(index, x);
    let norm = libm::hypot(a[0], a[1]);
    unit.bias = rng.uniform_in(-eps, eps) * norm - z0;
    Ok(unit)
}

/// Picks a module, builds the partition of the modules before it, clips the
/// square neighborhood to the parent cell, and checks one unit whose
/// pre-activation meets the sufficient condition, chosen uniformly among
/// those that do.
fn intersection_instance(
    net: &CpaGraph,
    cfg: &SuiteConfig,
    x: Point,
    eps: f64,
    rng: &mut Rng,
) -> Result<VerificationRecord, VerifyError> {
    let opts = &cfg.options;
    let module = 1 + rng.index(net.num_modules());
    let enum_opts =
        EnumerateOptions { tol: opts.tol, collect_traces: false, max_modules: Some(module - 1), shuffle_units: None };
    let atlas = enumerate_with(net, &cfg.domain, &enum_opts)?;
    let skip = |why: &str| {
        let mut rec = VerificationRecord::new(Check::IntersectionSufficiency, super::Instance::new(net));
        rec.instance.x = Some(x);
        Ok(rec.skip(why))
    };
    let cell = match parent_cell(&atlas, x) {
        Ok(c) => c,
        Err(GeometryError::OnBoundary) => return skip("x on a cell boundary"),
        Err(e) => return Err(e.into()),
    };
    let p = match local_neighborhood(&atlas, x, eps, NeighborhoodShape::ParentClip) {
        Ok(p) => p,
        Err(GeometryError::EmptyNeighborhood) => return skip("neighborhood has no area"),
        Err(e) => return Err(e.into()),
    };
    let width = net.module_widths()[module - 1];
    let mut candidates = Vec::new();
    for unit in 0..width {
        let rec = check_intersection_sufficiency(net, cell, (module, unit), x, &p, opts)?;
        if rec.verdict != Verdict::SkippedDegenerate {
            candidates.push(rec);
        }
    }
    if candidates.is_empty() {
        return skip("no unit meets the condition");
    }
    let k = rng.index(candidates.len());
    Ok(candidates.swap_remove(k))
}
