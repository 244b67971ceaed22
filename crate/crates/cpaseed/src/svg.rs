//! Plain SVG output: partition maps and log-distance histograms.

use std::fmt::Write;
use std::hash::Hasher;

use cpaseed_core::data::Dataset;
use cpaseed_core::geometry::{PartitionAtlas, Point};

const SIZE: f64 = 600.0;
const MARGIN: f64 = 40.0;
const LABEL_COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#17becf"];

/// Maps domain coordinates to the drawing square, y pointing up.
struct Frame {
    lo: Point,
    scale: f64,
}

impl Frame {
    fn new(lo: Point, hi: Point) -> Self {
        let extent = f64::max(hi[0] - lo[0], hi[1] - lo[1]).max(f64::MIN_POSITIVE);
        Frame { lo, scale: (SIZE - 2.0 * MARGIN) / extent }
    }

    fn map(&self, p: Point) -> (f64, f64) {
        (MARGIN + (p[0] - self.lo[0]) * self.scale, SIZE - MARGIN - (p[1] - self.lo[1]) * self.scale)
    }
}

fn pattern_color(bits: &str) -> String {
    let mut h = fnv::FnvHasher::default();
    h.write(bits.as_bytes());
    let v = h.finish();
    // pastel: each channel in 110..=245
    let c = |shift: u32| 110 + ((v >> shift) & 0xff) as u32 * 135 / 255;
    format!("#{:02x}{:02x}{:02x}", c(0), c(8), c(16))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn path_data(frame: &Frame, vertices: &[Point]) -> String {
    let mut d = String::new();
    for (i, &v) in vertices.iter().enumerate() {
        let (x, y) = frame.map(v);
        let _ = write!(d, "{}{x} {y} ", if i == 0 { "M" } else { "L" });
    }
    d.push('Z');
    d
}

/// One filled `<path class="cell">` per cell, the domain border, an optional
/// scatter of the dataset and the region count in the title. Coordinates are
/// written at full precision so the cells can be parsed back.
pub fn render_partition_svg(atlas: &PartitionAtlas, dataset: Option<&Dataset>) -> String {
    let (lo, hi) = atlas.domain.bbox();
    let frame = Frame::new(lo, hi);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let title = format!("{} regions", atlas.count());
    let _ = writeln!(s, "<title>{title}</title>");
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>"#,
        SIZE / 2.0,
        MARGIN * 0.6
    );
    let _ = writeln!(s, r##"<g stroke="#333" stroke-width="0.4" stroke-linejoin="round">"##);
    for cell in &atlas.cells {
        let _ = writeln!(
            s,
            r#"<path class="cell" data-pattern="{}" fill="{}" d="{}"/>"#,
            cell.pattern_bits(),
            pattern_color(&cell.pattern_bits()),
            path_data(&frame, cell.polygon.vertices())
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<path class="domain" fill="none" stroke="black" stroke-width="1.5" d="{}"/>"#,
        path_data(&frame, atlas.domain.vertices())
    );
    if let Some(ds) = dataset {
        let _ = writeln!(s, r#"<g class="data" stroke="black" stroke-width="0.3">"#);
        for (p, &label) in ds.points.iter().zip(&ds.labels) {
            let (x, y) = frame.map(*p);
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.2" fill="{}"/>"#,
                LABEL_COLORS[label % LABEL_COLORS.len()]
            );
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

/// One histogram layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramSeries {
    pub label: String,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramOptions {
    pub bins: usize,
    pub title: String,
    pub x_label: String,
    /// Drawn as a dashed vertical line when inside the plotted range.
    pub floor: Option<f64>,
}

impl Default for HistogramOptions {
    fn default() -> Self {
        HistogramOptions {
            bins: 60,
            title: "Data-to-hyperplane distances".into(),
            x_label: "log distance".into(),
            floor: None,
        }
    }
}

pub fn median(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Bin counts over `[lo, hi]`; a zero-width range puts everything in bin 0.
pub fn histogram(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<usize> {
    let bins = bins.max(1);
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &x in samples {
        let k = if width > 0.0 { (((x - lo) / width) as usize).min(bins - 1) } else { 0 };
        counts[k] += 1;
    }
    counts
}

/// Overlaid step histograms on shared bins, with each series' sample count
/// and median in the legend and its median marked.
pub fn render_histogram_svg(series: &[HistogramSeries], opts: &HistogramOptions) -> String {
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];
    let all = series.iter().flat_map(|s| s.samples.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let bins = if hi > lo { opts.bins.max(1) } else { 1 };
    let counts: Vec<Vec<usize>> = series.iter().map(|s| histogram(&s.samples, bins, lo, hi)).collect();
    let peak = counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;

    let (w, h) = (SIZE * 1.2, SIZE * 0.7);
    let (x0, x1, y0, y1) = (MARGIN * 1.5, w - MARGIN, h - MARGIN * 1.5, MARGIN * 1.5);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = |x: f64| x0 + (x - lo) / span * (x1 - x0);
    let py = |c: f64| y0 - c / peak * (y0 - y1);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, "<title>{}</title>", escape(&opts.title));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        w / 2.0,
        MARGIN * 0.8,
        escape(&opts.title)
    );
    let _ = writeln!(s, r#"<path class="axes" stroke="black" fill="none" d="M{x0} {y1} L{x0} {y0} L{x1} {y0}"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        (x0 + x1) / 2.0,
        h - MARGIN * 0.5,
        escape(&opts.x_label)
    );
    for (x, anchor) in [(lo, "start"), (hi, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{x:.3}</text>"#,
            px(x),
            y0 + 15.0
        );
    }
    for (i, (ser, c)) in series.iter().zip(&counts).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = format!("M{x0:.2} {y0:.2}");
        for (k, &n) in c.iter().enumerate() {
            let (a, b) = if bins == 1 && hi <= lo {
                (x0, x1)
            } else {
                (px(lo + span * k as f64 / bins as f64), px(lo + span * (k + 1) as f64 / bins as f64))
            };
            let _ = write!(d, " L{a:.2} {:.2} L{b:.2} {:.2}", py(n as f64), py(n as f64));
        }
        let _ = write!(d, " L{x1:.2} {y0:.2}");
        let _ = writeln!(
            s,
            r#"<path class="series" data-label="{}" data-counts="{}" fill="{color}" fill-opacity="0.25" stroke="{color}" d="{d}"/>"#,
            escape(&ser.label),
            c.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")
        );
        let med = median(&ser.samples);
        if let Some(m) = med {
            let _ = writeln!(
                s,
                r#"<line class="median" x1="{:.2}" x2="{:.2}" y1="{y0}" y2="{y1}" stroke="{color}" stroke-width="1.5"/>"#,
                px(m),
                px(m)
            );
        }
        let legend = format!(
            "{} (n={}, median={})",
            ser.label,
            ser.samples.len(),
            med.map_or_else(|| "n/a".to_string(), |m| format!("{m:.3}"))
        );
        let _ = writeln!(
            s,
            r#"<text class="legend" x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            x0 + 10.0,
            y1 + 16.0 * (i as f64 + 1.0),
            escape(&legend)
        );
    }
    if let Some(f) = opts.floor.filter(|f| (lo..=hi).contains(f)) {
        let _ = writeln!(
            s,
            r##"<line class="floor" x1="{:.2}" x2="{:.2}" y1="{y0}" y2="{y1}" stroke="#555" stroke-dasharray="4 3"/>"##,
            px(f),
            px(f)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use cpaseed_core::geometry::{enumerate_regions, ConvexPolygon, Tolerances};
    use cpaseed_core::net::{build_mlp, NetSpec};
    use cpaseed_core::{CpaGraph, Rng};

    fn atlas(net: &CpaGraph) -> PartitionAtlas {
        enumerate_regions(net, &ConvexPolygon::square([0.0, 0.0], 1.0), &Tolerances::default()).unwrap()
    }

    /// Shoelace area of every `class="cell"` path, back in domain units.
    fn parsed_cell_areas(svg: &str) -> Vec<f64> {
        let scale = (SIZE - 2.0 * MARGIN) / 2.0;
        svg.lines()
            .filter(|l| l.contains(r#"class="cell""#))
            .map(|l| {
                let d = l.split(" d=\"").nth(1).unwrap().split('"').next().unwrap();
                let nums: Vec<f64> =
                    d.split(['M', 'L', 'Z', ' ']).filter(|t| !t.is_empty()).map(|t| t.parse().unwrap()).collect();
                let pts: Vec<(f64, f64)> = nums.chunks(2).map(|c| (c[0], c[1])).collect();
                let twice: f64 = (0..pts.len())
                    .map(|i| {
                        let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
                        a.0 * b.1 - b.0 * a.1
                    })
                    .sum();
                twice.abs() / 2.0 / (scale * scale)
            })
            .collect()
    }

    #[test]
    fn single_region_is_one_square() {
        let net = CpaGraph::new(
            2,
            vec![cpaseed_core::net::Op::Linear(cpaseed_core::net::Linear {
                weight: cpaseed_core::Matrix::identity(2),
                bias: vec![0.0, 0.0],
            })],
        )
        .unwrap();
        let svg = render_partition_svg(&atlas(&net), None);
        let areas = parsed_cell_areas(&svg);
        assert_eq!(areas.len(), 1);
        assert!((areas[0] - 4.0).abs() < 1e-9);
        assert!(svg.contains("<title>1 regions</title>"));
    }

    #[test]
    fn cells_and_areas_survive_rendering() {
        let net = build_mlp(&NetSpec::default(), 8, 3, &mut Rng::seed_from_u64(3)).unwrap();
        let atlas = atlas(&net);
        let ds = cpaseed_core::data::gen_two_moons(30, 0.1, 1).unwrap();
        let svg = render_partition_svg(&atlas, Some(&ds));
        let areas = parsed_cell_areas(&svg);
        assert_eq!(areas.len(), atlas.count());
        assert!((areas.iter().sum::<f64>() - 4.0).abs() < 1e-4);
        assert_eq!(svg.matches("<circle").count(), 30);
        assert!(svg.contains(&format!("{} regions", atlas.count())));
    }

    #[test]
    fn colors_depend_only_on_pattern() {
        assert_eq!(pattern_color("0101"), pattern_color("0101"));
        assert_ne!(pattern_color("0101"), pattern_color("0110"));
    }

    #[test]
    fn equal_samples_fill_one_bin() {
        let series = [HistogramSeries { label: "all".into(), samples: vec![-2.5; 17] }];
        let svg = render_histogram_svg(&series, &HistogramOptions::default());
        assert!(svg.contains(r#"data-counts="17""#));
        assert!(svg.contains("all (n=17, median=-2.500)"));
    }

    #[test]
    fn legend_counts_and_bins() {
        let a: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let b: Vec<f64> = (0..40).map(|i| i as f64 / 8.0).collect();
        let series = [
            HistogramSeries { label: "baseline".into(), samples: a },
            HistogramSeries { label: "seeded".into(), samples: b },
        ];
        let opts = HistogramOptions { bins: 10, floor: Some(0.5), ..HistogramOptions::default() };
        let svg = render_histogram_svg(&series, &opts);
        assert!(svg.contains("baseline (n=100, median=4.950)"));
        assert!(svg.contains("seeded (n=40"));
        assert_eq!(svg.matches(r#"class="median""#).count(), 2);
        assert!(svg.contains(r#"class="floor""#));
        assert_eq!(histogram(&[0.0, 0.5, 1.0], 2, 0.0, 1.0), vec![1, 2]);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), Some(2.5));
    }
}
