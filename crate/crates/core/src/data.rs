//! Seeded synthetic 2D classification datasets on `[−1, 1]²`.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::geometry::Point;
use crate::linalg::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("{what} must be at least {min}")]
    TooSmall { what: &'static str, min: usize },
    #[error("train fraction {0} must lie strictly between 0 and 1 and leave both sides nonempty")]
    BadFraction(f64),
    #[error("noise must be finite and nonnegative")]
    BadNoise,
}

/// How raw generator coordinates map into the domain: `p = (raw − center)/scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Frame {
    pub center: Point,
    pub scale: f64,
}

impl Frame {
    pub const IDENTITY: Frame = Frame { center: [0.0, 0.0], scale: 1.0 };

    pub fn to_domain(&self, raw: Point) -> Point {
        [(raw[0] - self.center[0]) / self.scale, (raw[1] - self.center[1]) / self.scale]
    }

    pub fn to_raw(&self, p: Point) -> Point {
        [p[0] * self.scale + self.center[0], p[1] * self.scale + self.center[1]]
    }

    /// Isotropic frame mapping the bounding box of `raw` into `[−1, 1]²`.
    fn fitting(raw: &[Point]) -> Frame {
        let (lo, hi) = raw.iter().fold(([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]), |(lo, hi), p| {
            ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])])
        });
        let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        let half = f64::max(0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1]));
        Frame { center, scale: if half > 0.0 { half } else { 1.0 } }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub name: String,
    pub points: Vec<Point>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub seed: u64,
    pub frame: Frame,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `n × 2` input matrix.
    pub fn inputs(&self) -> Matrix {
        Matrix::from_vec(self.len(), 2, self.points.iter().flatten().copied().collect())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            points: idx.iter().map(|&i| self.points[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            seed: self.seed,
            frame: self.frame,
        }
    }
}

/// Label assignment for the uniform-random dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LabelRule {
    /// Independent fair coin per point.
    #[default]
    Uniform,
    /// Exactly `⌊n/2⌋` / `⌈n/2⌉` labels, randomly placed.
    Balanced,
}

/// `n` points uniform on `[−1, 1]²` with two classes.
pub fn gen_random(n: usize, seed: u64, rule: LabelRule) -> Result<Dataset, DataError> {
    if n == 0 {
        return Err(DataError::TooSmall { what: "sample count", min: 1 });
    }
    let mut rng = Rng::seed_from_u64(seed);
    let points: Vec<Point> = (0..n).map(|_| [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)]).collect();
    let labels = match rule {
        LabelRule::Uniform => (0..n).map(|_| rng.coin() as usize).collect(),
        LabelRule::Balanced => {
            let mut l: Vec<usize> = (0..n).map(|i| i % 2).collect();
            rng.shuffle(&mut l);
            l
        }
    };
    Ok(Dataset { name: "random".to_string(), points, labels, classes: 2, seed, frame: Frame::IDENTITY })
}

/// Two interleaving half circles of radius 1: the upper arc centred at the
/// origin and the lower arc centred at `(1, 0.5)`, sampled at evenly spaced
/// angles, plus isotropic Gaussian noise, shuffled, then fitted into the domain.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset, DataError> {
    if n < 2 {
        return Err(DataError::TooSmall { what: "sample count", min: 2 });
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(DataError::BadNoise);
    }
    let mut rng = Rng::seed_from_u64(seed);
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let angles = |k: usize, count: usize| {
        if count > 1 {
            PI * k as f64 / (count - 1) as f64
        } else {
            0.0
        }
    };
    let mut raw: Vec<(Point, usize)> = Vec::with_capacity(n);
    for k in 0..n_outer {
        let t = angles(k, n_outer);
        raw.push(([libm::cos(t), libm::sin(t)], 0));
    }
    for k in 0..n_inner {
        let t = angles(k, n_inner);
        raw.push(([1.0 - libm::cos(t), 0.5 - libm::sin(t)], 1));
    }
    if noise > 0.0 {
        for (p, _) in &mut raw {
            p[0] += noise * rng.normal();
            p[1] += noise * rng.normal();
        }
    }
    rng.shuffle(&mut raw);
    let frame = Frame::fitting(&raw.iter().map(|(p, _)| *p).collect::<Vec<_>>());
    Ok(Dataset {
        name: "two_moons".to_string(),
        points: raw.iter().map(|(p, _)| clamp_unit(frame.to_domain(*p))).collect(),
        labels: raw.iter().map(|(_, l)| *l).collect(),
        classes: 2,
        seed,
        frame,
    })
}

/// Standard 2D Gaussian points labelled by equal-count radius shells, scaled
/// about the origin into the domain.
pub fn gen_gaussian_quantiles(n: usize, classes: usize, seed: u64) -> Result<Dataset, DataError> {
    if classes < 2 {
        return Err(DataError::TooSmall { what: "class count", min: 2 });
    }
    if n < classes {
        return Err(DataError::TooSmall { what: "sample count", min: classes });
    }
    let mut rng = Rng::seed_from_u64(seed);
    let raw: Vec<Point> = (0..n).map(|_| [rng.normal(), rng.normal()]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let r2 = |p: &Point| p[0] * p[0] + p[1] * p[1];
    order.sort_by(|&i, &j| r2(&raw[i]).total_cmp(&r2(&raw[j])).then(i.cmp(&j)));
    let mut labels = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = rank * classes / n;
    }
    let half = raw.iter().fold(0.0f64, |m, p| m.max(p[0].abs()).max(p[1].abs()));
    let frame = Frame { center: [0.0, 0.0], scale: if half > 0.0 { half } else { 1.0 } };
    Ok(Dataset {
        name: "gaussian_quantiles".to_string(),
        points: raw.iter().map(|&p| clamp_unit(frame.to_domain(p))).collect(),
        labels,
        classes,
        seed,
        frame,
    })
}

/// Rounding can push the extreme point a hair past ±1.
fn clamp_unit(p: Point) -> Point {
    [p[0].clamp(-1.0, 1.0), p[1].clamp(-1.0, 1.0)]
}

/// Seeded shuffle, then prefix split. A class missing from one side is
/// moved over from the other when the other side holds at least two.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let n = ds.len();
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::BadFraction(train_fraction));
    }
    let n_train = libm::round(train_fraction * n as f64) as usize;
    if n_train == 0 || n_train == n {
        return Err(DataError::BadFraction(train_fraction));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::seed_from_u64(seed).shuffle(&mut idx);
    let (train, test) = idx.split_at_mut(n_train);
    for class in 0..ds.classes {
        rebalance(class, &ds.labels, train, test);
        rebalance(class, &ds.labels, test, train);
    }
    Ok((ds.subset(train), ds.subset(test)))
}

/// Ensures `class` appears in `want` by swapping with `from`, without
/// emptying the class on `from` or dropping a class `want` holds only once.
fn rebalance(class: usize, labels: &[usize], want: &mut [usize], from: &mut [usize]) {
    if want.iter().any(|&i| labels[i] == class) {
        return;
    }
    let donors: Vec<usize> = (0..from.len()).filter(|&k| labels[from[k]] == class).collect();
    if donors.len() < 2 {
        return;
    }
    let count = |side: &[usize], c: usize| side.iter().filter(|&&i| labels[i] == c).count();
    let Some(slot) = (0..want.len()).rev().find(|&k| count(want, labels[want[k]]) >= 2) else {
        return;
    };
    core::mem::swap(&mut want[slot], &mut from[donors[donors.len() - 1]]);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn in_domain(ds: &Dataset) -> bool {
        ds.points.iter().all(|p| p.iter().all(|v| (-1.0..=1.0).contains(v)))
    }

    #[test]
    fn random_examples() {
        let ds = gen_random(500, 1, LabelRule::Uniform).unwrap();
        assert_eq!(ds.len(), 500);
        assert_eq!(ds.classes, 2);
        assert!(in_domain(&ds));
        assert_eq!(gen_random(1, 1, LabelRule::Uniform).unwrap().len(), 1);
        assert!(gen_random(0, 1, LabelRule::Uniform).is_err());
        let bal = gen_random(501, 3, LabelRule::Balanced).unwrap().class_counts();
        assert_eq!(bal, vec![251, 250]);
    }

    #[test]
    fn random_labels_are_fair() {
        let n = 100_000;
        let ds = gen_random(n, 7, LabelRule::Uniform).unwrap();
        let ones = ds.class_counts()[1] as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((ones - n as f64 / 2.0).abs() < 5.0 * sigma);
    }

    #[test]
    fn noiseless_moons_lie_on_arcs() {
        let ds = gen_two_moons(200, 0.0, 4).unwrap();
        assert!(in_domain(&ds));
        for (p, &l) in ds.points.iter().zip(&ds.labels) {
            let raw = ds.frame.to_raw(*p);
            let centre = if l == 0 { [0.0, 0.0] } else { [1.0, 0.5] };
            let r = libm::hypot(raw[0] - centre[0], raw[1] - centre[1]);
            assert!((r - 1.0).abs() < 1e-9);
            // domain-space distance to the rescaled arc
            assert!((r - 1.0).abs() / ds.frame.scale < 1e-9);
        }
    }

    #[test]
    fn moons_replay_and_balance() {
        let a = gen_two_moons(500, 0.1, 9).unwrap();
        let b = gen_two_moons(500, 0.1, 9).unwrap();
        assert_eq!(a, b);
        let c = a.class_counts();
        assert!(c[0].abs_diff(c[1]) <= 1);
        let odd = gen_two_moons(501, 0.1, 9).unwrap().class_counts();
        assert!(odd[0].abs_diff(odd[1]) <= 1);
        assert!(in_domain(&a));
    }

    #[test]
    fn quantile_shells_are_ordered() {
        let ds = gen_gaussian_quantiles(1000, 5, 2).unwrap();
        assert!(in_domain(&ds));
        assert_eq!(ds.class_counts(), vec![200; 5]);
        let r = |p: &Point| libm::hypot(p[0], p[1]);
        for k in 0..4 {
            let max_k =
                ds.points.iter().zip(&ds.labels).filter(|(_, &l)| l == k).map(|(p, _)| r(p)).fold(0.0, f64::max);
            let min_next = ds
                .points
                .iter()
                .zip(&ds.labels)
                .filter(|(_, &l)| l == k + 1)
                .map(|(p, _)| r(p))
                .fold(f64::INFINITY, f64::min);
            assert!(max_k < min_next);
        }
        let small = gen_gaussian_quantiles(50, 5, 3).unwrap();
        assert!(small.class_counts().iter().all(|&c| c > 0));
    }

    #[test]
    fn two_class_boundary_near_chi_median() {
        let ds = gen_gaussian_quantiles(200_000, 2, 5).unwrap();
        let boundary = ds
            .points
            .iter()
            .zip(&ds.labels)
            .filter(|(_, &l)| l == 0)
            .map(|(p, _)| libm::hypot(p[0], p[1]) * ds.frame.scale)
            .fold(0.0, f64::max);
        let median = libm::sqrt(2.0 * core::f64::consts::LN_2);
        assert!((boundary - median).abs() < 0.01, "{boundary} vs {median}");
    }

    #[test]
    fn split_examples() {
        let ds = gen_random(500, 1, LabelRule::Uniform).unwrap();
        let (tr, te) = split(&ds, 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (400, 100));
        assert_eq!(split(&ds, 0.8, 3).unwrap(), (tr.clone(), te.clone()));
        let mut all: Vec<(u64, u64, usize)> = tr
            .points
            .iter()
            .chain(&te.points)
            .zip(tr.labels.iter().chain(&te.labels))
            .map(|(p, &l)| (p[0].to_bits(), p[1].to_bits(), l))
            .collect();
        let mut orig: Vec<_> =
            ds.points.iter().zip(&ds.labels).map(|(p, &l)| (p[0].to_bits(), p[1].to_bits(), l)).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
        assert!(split(&ds, 0.0, 1).is_err());
        assert!(split(&ds, 1.0, 1).is_err());
        assert!(split(&gen_random(3, 1, LabelRule::Uniform).unwrap(), 0.1, 1).is_err());
    }

    #[test]
    fn split_keeps_rare_class_on_both_sides() {
        let mut ds = gen_random(20, 1, LabelRule::Uniform).unwrap();
        ds.labels = vec![0; 20];
        ds.labels[3] = 1;
        ds.labels[11] = 1;
        for seed in 0..20 {
            let (tr, te) = split(&ds, 0.5, seed).unwrap();
            assert!(tr.class_counts().iter().all(|&c| c > 0));
            assert!(te.class_counts().iter().all(|&c| c > 0));
        }
    }
}
