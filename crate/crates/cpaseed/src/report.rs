//! JSON verification reports and distance profiles of saved networks.

use std::collections::BTreeMap;

use cpaseed_core::geometry::{distance_profile, DistanceProfile, GeometryError, NeighborhoodShape, Point};
use cpaseed_core::verify::{SuiteKind, SuiteReport, VerificationRecord};
use cpaseed_core::CpaGraph;
use serde::Serialize;

use crate::runner::enumerate_net;

/// Totals, skip reasons and violation reproducers of one suite.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suite: SuiteKind,
    pub seed: u64,
    pub requested: usize,
    pub attempts: usize,
    pub holds: usize,
    pub violated: usize,
    pub skipped: usize,
    pub skip_rate: f64,
    pub skip_reasons: BTreeMap<String, usize>,
    pub passed: bool,
    pub violations: Vec<VerificationRecord>,
}

impl From<&SuiteReport> for VerifyReport {
    fn from(r: &SuiteReport) -> Self {
        VerifyReport {
            suite: r.kind,
            seed: r.seed,
            requested: r.requested,
            attempts: r.attempts,
            holds: r.holds,
            violated: r.violated,
            skipped: r.skipped,
            skip_rate: r.skip_rate(),
            skip_reasons: r.skip_reasons.iter().cloned().collect(),
            passed: r.passed(),
            violations: r.violations().cloned().collect(),
        }
    }
}

/// Log distances from `points` to the zero sets of activation module `layer`
/// of the eval-mode network, with square neighborhoods of radius `eps` for the
/// intersect scope.
pub fn network_distance_profile(
    net: &CpaGraph,
    points: &[Point],
    layer: usize,
    eps: f64,
) -> Result<DistanceProfile, GeometryError> {
    let folded = net.fold_batchnorm().map_err(GeometryError::from)?;
    let atlas = enumerate_net(&folded, true)?;
    distance_profile(&folded, &atlas, points, layer, eps, NeighborhoodShape::Square)
}
