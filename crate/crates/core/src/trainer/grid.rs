//! Grid search over width, depth and pooling region, and its CSV report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, train, Splits, TrainConfig};
use crate::arch::{default_dense_width, default_dropout, default_filters, default_l2, in_optimal_band, ArchitectureSpec, Family};
use crate::corpus::IndexedDocument;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::Activation;

const CSV_HEADER: [&str; 11] = [
    "family",
    "W",
    "D",
    "r_per_stack",
    "aggregate_r",
    "final_map_len",
    "in_band",
    "dev_acc",
    "test_acc",
    "params",
    "seconds",
];

/// Axes of a grid plus the hyperparameters shared by every point.
///
/// The single family has no depth or region axis; it contributes one point per width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub families: Vec<Family>,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
    pub regions: Vec<usize>,
    pub input_length: usize,
    #[serde(default = "default_filters")]
    pub filters: usize,
    #[serde(default = "default_dense_width")]
    pub dense_width: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default = "default_l2")]
    pub l2_lambda: f64,
    #[serde(default)]
    pub dense_activation: Activation,
}

impl GridSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("grid file: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Every grid point in (family, W, D, r) order.
    pub fn points(&self, embed_dim: usize) -> Vec<ArchitectureSpec> {
        let mut families = self.families.clone();
        families.sort();
        families.dedup();
        let sorted = |v: &[usize]| {
            let mut v = v.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        };
        let (widths, depths, regions) = (sorted(&self.widths), sorted(&self.depths), sorted(&self.regions));
        let mut out = Vec::new();
        for &family in &families {
            for &w in &widths {
                let axes: Vec<(usize, usize)> = if family == Family::Single {
                    vec![(2, 1)]
                } else {
                    depths.iter().flat_map(|&d| regions.iter().map(move |&r| (d, r))).collect()
                };
                for (d, r) in axes {
                    let mut spec = ArchitectureSpec::new(family, w, d, r, self.input_length, embed_dim);
                    spec.filters = self.filters;
                    spec.dense_width = self.dense_width;
                    spec.dropout_rate = self.dropout_rate;
                    spec.l2_lambda = self.l2_lambda;
                    spec.dense_activation = self.dense_activation;
                    out.push(spec);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub family: Family,
    pub width: usize,
    pub depth: usize,
    pub region: usize,
    pub aggregate_r: usize,
    /// Length of the longest final feature map (the k=1 branch).
    pub final_map_len: usize,
    pub in_band: bool,
    pub dev_acc: f64,
    pub test_acc: f64,
    pub params: usize,
    pub seconds: Option<f64>,
}

impl GridPoint {
    fn order_key(&self) -> (Family, usize, usize, usize) {
        (self.family, self.width, self.depth, self.region)
    }
}

/// Ranks by dev accuracy, then fewer parameters, then (family, W, D, r).
pub fn rank(points: &mut [GridPoint]) {
    points.sort_by(|a, b| {
        b.dev_acc
            .total_cmp(&a.dev_acc)
            .then(a.params.cmp(&b.params))
            .then(a.order_key().cmp(&b.order_key()))
    });
}

/// Trains every spec on the same split with the same configuration. Point `i`
/// draws its RNG stream from `(cfg.seed, i)`, so results do not depend on `jobs`.
pub fn grid_search(
    specs: &[ArchitectureSpec],
    data: &Splits<IndexedDocument>,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<Vec<GridPoint>> {
    if specs.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    cfg.validate()?;
    let graphs = specs.iter().map(ArchitectureSpec::build).collect::<Result<Vec<_>>>()?;
    if data.test.is_empty() {
        return Err(Error::NoData("test split is empty".into()));
    }
    let run = |(i, graph): (usize, &crate::arch::LayerGraph)| -> Result<GridPoint> {
        let start = Instant::now();
        let cfg = TrainConfig {
            stream: i as u64,
            ..cfg.clone()
        };
        let (state, dev) = train(graph, table, &data.train, &data.dev, &cfg)?;
        let test = evaluate(graph, &state, table, &data.test)?;
        let spec = &graph.spec;
        let l = graph.final_map_len();
        Ok(GridPoint {
            family: spec.family,
            width: spec.width,
            depth: spec.depth,
            region: spec.region,
            aggregate_r: spec.aggregate_region(),
            final_map_len: l,
            in_band: in_optimal_band(l),
            dev_acc: dev.accuracy,
            test_acc: test.accuracy,
            params: graph.param_count(),
            seconds: Some(start.elapsed().as_secs_f64()),
        })
    };
    let mut points = if jobs <= 1 {
        graphs.iter().enumerate().map(run).collect::<Result<Vec<_>>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| graphs.par_iter().enumerate().map(run).collect::<Result<Vec<_>>>())?
    };
    rank(&mut points);
    Ok(points)
}

/// Writes the ranked report. The `seconds` column stays empty unless `timing` is set.
pub fn write_grid_csv<W: io::Write>(points: &[GridPoint], out: W, timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Data(format!("writing grid report: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for p in points {
        let seconds = match (timing, p.seconds) {
            (true, Some(s)) => format!("{s}"),
            _ => String::new(),
        };
        w.write_record([
            p.family.to_string(),
            p.width.to_string(),
            p.depth.to_string(),
            p.region.to_string(),
            p.aggregate_r.to_string(),
            p.final_map_len.to_string(),
            p.in_band.to_string(),
            p.dev_acc.to_string(),
            p.test_acc.to_string(),
            p.params.to_string(),
            seconds,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing grid report: {e}")))?;
    Ok(())
}

pub fn read_grid_csv(text: &str) -> Result<Vec<GridPoint>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| Error::Data(format!("grid report: {e}")))?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Data("grid report: unexpected header".into()));
    }
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let bad = |j: usize| Error::Parse {
            line,
            msg: format!("bad {} value {:?}", CSV_HEADER[j], field(j)),
        };
        let int = |j: usize| field(j).parse::<usize>().map_err(|_| bad(j));
        let float = |j: usize| {
            field(j)
                .parse::<f64>()
                .ok()
                .filter(|v| (0.0..=1.0).contains(v))
                .ok_or_else(|| bad(j))
        };
        points.push(GridPoint {
            family: field(0).parse().map_err(|_| bad(0))?,
            width: int(1)?,
            depth: int(2)?,
            region: int(3)?,
            aggregate_r: int(4)?,
            final_map_len: int(5)?,
            in_band: field(6).parse().map_err(|_| bad(6))?,
            dev_acc: float(7)?,
            test_acc: float(8)?,
            params: int(9)?,
            seconds: match field(10) {
                "" => None,
                s => Some(s.parse().map_err(|_| bad(10))?),
            },
        });
    }
    if points.is_empty() {
        return Err(Error::NoData("grid report has no rows".into()));
    }
    Ok(points)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Map-length bucket used in the report: below, inside or above the optimal band.
pub fn band_bucket(l: usize) -> &'static str {
    if l < *crate::arch::OPTIMAL_MAP_BAND.start() {
        "l < 6"
    } else if in_optimal_band(l) {
        "6 <= l <= 18"
    } else {
        "l > 18"
    }
}

/// Top five rows by test accuracy and mean accuracy pivots over map-length band, W and D.
pub fn render_report(points: &[GridPoint]) -> String {
    let mut top = points.to_vec();
    top.sort_by(|a, b| b.test_acc.total_cmp(&a.test_acc).then(a.order_key().cmp(&b.order_key())));
    let mut s = String::new();
    let _ = writeln!(s, "top structures by test accuracy");
    let _ = writeln!(
        s,
        "{:<12} {:>3} {:>3} {:>4} {:>6} {:>5} {:>7} {:>8} {:>8} {:>10}",
        "family", "W", "D", "r", "agg_r", "l", "in_band", "dev", "test", "params"
    );
    for p in top.iter().take(5) {
        let _ = writeln!(
            s,
            "{:<12} {:>3} {:>3} {:>4} {:>6} {:>5} {:>7} {:>8.4} {:>8.4} {:>10}",
            p.family.to_string(),
            p.width,
            p.depth,
            p.region,
            p.aggregate_r,
            p.final_map_len,
            p.in_band,
            p.dev_acc,
            p.test_acc,
            p.params
        );
    }
    let pivot = |s: &mut String, title: &str, key: &dyn Fn(&GridPoint) -> String| {
        let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for p in points {
            let g = groups.entry(key(p)).or_default();
            g.0.push(p.dev_acc);
            g.1.push(p.test_acc);
        }
        let _ = writeln!(s, "\n{title}");
        let _ = writeln!(s, "{:<14} {:>6} {:>8} {:>8}", "group", "points", "dev", "test");
        for (k, (dev, test)) in &groups {
            let _ = writeln!(s, "{:<14} {:>6} {:>8.4} {:>8.4}", k, dev.len(), mean(dev), mean(test));
        }
    };
    pivot(&mut s, "accuracy by final map length", &|p| band_bucket(p.final_map_len).to_string());
    pivot(&mut s, "accuracy by width", &|p| format!("W={}", p.width));
    pivot(&mut s, "accuracy by depth", &|p| format!("D={}", p.depth));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(family: Family, r: usize, l: usize, dev: f64, params: usize) -> GridPoint {
        GridPoint {
            family,
            width: 1,
            depth: 2,
            region: r,
            aggregate_r: r,
            final_map_len: l,
            in_band: in_optimal_band(l),
            dev_acc: dev,
            test_acc: dev,
            params,
            seconds: None,
        }
    }

    #[test]
    fn ranking_tie_breaks() {
        let mut pts = vec![
            point(Family::Pyramid, 2, 8, 0.8, 100),
            point(Family::Basic, 3, 8, 0.8, 100),
            point(Family::Basic, 2, 8, 0.8, 200),
            point(Family::Basic, 4, 8, 0.9, 500),
        ];
        rank(&mut pts);
        let order: Vec<_> = pts.iter().map(|p| (p.family, p.region)).collect();
        assert_eq!(
            order,
            [(Family::Basic, 4), (Family::Basic, 3), (Family::Pyramid, 2), (Family::Basic, 2)]
        );
    }

    #[test]
    fn points_enumerate_axes() {
        let grid = GridSpec::from_toml(
            "families = [\"single\", \"basic\"]\nwidths = [2, 1]\ndepths = [2, 4]\nregions = [3]\ninput_length = 30\nfilters = 4\n",
        )
        .unwrap();
        let pts = grid.points(10);
        assert_eq!(pts.len(), 2 * 2 + 2);
        assert_eq!(pts[0].family, Family::Basic);
        assert_eq!((pts[0].width, pts[0].depth), (1, 2));
        assert!(pts.iter().all(|p| p.filters == 4 && p.embed_dim == 10));
        assert!(GridSpec::from_toml("families = []\nwidths=[1]\ndepths=[2]\nregions=[2]\ninput_length=3\nextra=1\n").is_err());
    }

    #[test]
    fn csv_round_trip_and_report() {
        let mut pts = vec![
            point(Family::Basic, 2, 15, 0.7, 10),
            point(Family::Basic, 4, 8, 0.75, 10),
            point(Family::Basic, 25, 2, 0.6, 10),
        ];
        pts[0].seconds = Some(1.5);
        let mut buf = Vec::new();
        write_grid_csv(&pts, &mut buf, true).unwrap();
        let back = read_grid_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, pts);

        let mut buf = Vec::new();
        write_grid_csv(&pts, &mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(",10,"));

        let report = render_report(&pts);
        assert!(report.contains("l < 6"));
        assert!(report.contains("6 <= l <= 18"));
        assert_eq!(report.lines().filter(|l| l.starts_with("basic")).count(), 3);
    }

    #[test]
    fn malformed_reports_are_rejected() {
        assert!(read_grid_csv("").is_err());
        assert!(read_grid_csv(&CSV_HEADER.join(",")).is_err());
        let row = "basic,1,2,2,2,15,true,1.5,0.5,10,";
        assert!(read_grid_csv(&format!("{}\n{row}\n", CSV_HEADER.join(","))).is_err());
    }
}
