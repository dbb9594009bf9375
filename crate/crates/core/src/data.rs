//! Count matrix IO, held-out masking, the zero-inflated negative-binomial
//! synthetic generator, and held-out metrics.

use crate::dist::{sample_negative_binomial, NbParams};
use crate::error::{Error, Result};
use crate::model::CountMatrix;
use crate::rng::RngStream;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Which held-out protocol a mask encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Random cells held out; predict them from the rest.
    Smoothing,
    /// The last S whole columns held out; predict the future from history.
    Forecast,
}

/// The held-out entry set defining a smoothing or forecasting split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskSpec {
    pub schema_version: u32,
    pub mode: MaskMode,
    /// Forecast horizon; only present for forecast masks.
    pub horizon: Option<usize>,
    /// Held-out (dimension, time) pairs, sorted.
    pub cells: Vec<(usize, usize)>,
    #[serde(skip)]
    index: HashSet<(usize, usize)>,
}

impl MaskSpec {
    fn new(mode: MaskMode, horizon: Option<usize>, mut cells: Vec<(usize, usize)>) -> Self {
        cells.sort_unstable();
        cells.dedup();
        let index = cells.iter().copied().collect();
        MaskSpec {
            schema_version: 1,
            mode,
            horizon,
            cells,
            index,
        }
    }

    /// An empty mask (no held-out cells): fit on everything.
    pub fn none() -> Self {
        MaskSpec::new(MaskMode::Smoothing, None, Vec::new())
    }

    pub fn is_masked(&self, v: usize, t: usize) -> bool {
        self.index.contains(&(v, t))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.cells.iter().copied().collect();
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let body =
            serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<MaskSpec> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut mask: MaskSpec =
            serde_json::from_str(&body).map_err(|e| Error::Serde(e.to_string()))?;
        mask.reindex();
        Ok(mask)
    }
}

/// Build a held-out mask.
///
/// Smoothing: a uniformly random subset of exactly
/// `round(fraction * V * T)` cells. Forecast: the last `horizon` whole
/// columns.
pub fn make_mask(
    counts: &CountMatrix,
    mode: MaskMode,
    fraction: Option<f64>,
    horizon: Option<usize>,
    rng: &mut RngStream,
) -> Result<MaskSpec> {
    let (v, t) = (counts.v(), counts.t());
    match mode {
        MaskMode::Smoothing => {
            let fraction = fraction
                .ok_or_else(|| Error::Config("smoothing mask needs a holdout fraction".into()))?;
            if !(0.0..1.0).contains(&fraction) || fraction <= 0.0 {
                return Err(Error::Config(format!(
                    "holdout fraction {fraction} outside (0, 1)"
                )));
            }
            let total = v * t;
            let n_masked = ((fraction * total as f64).round() as usize).clamp(1, total - 1);
            let chosen = rand::seq::index::sample(rng, total, n_masked);
            let cells = chosen.iter().map(|i| (i / t, i % t)).collect();
            Ok(MaskSpec::new(MaskMode::Smoothing, None, cells))
        }
        MaskMode::Forecast => {
            let s = horizon
                .ok_or_else(|| Error::Config("forecast mask needs a horizon".into()))?;
            if s == 0 || s >= t {
                return Err(Error::Config(format!(
                    "forecast horizon {s} must be in 1..T ({t})"
                )));
            }
            let mut cells = Vec::with_capacity(v * s);
            for vi in 0..v {
                for ti in (t - s)..t {
                    cells.push((vi, ti));
                }
            }
            Ok(MaskSpec::new(MaskMode::Forecast, Some(s), cells))
        }
    }
}

/// Zero-inflated negative-binomial generator config. Cells are iid
/// `ZINB(p0, r, p)`; the matrix stacks `n_groups` groups of `v` rows each.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZinbConfig {
    /// Zero-inflation weight in [0, 1].
    pub p0: f64,
    /// NB shape.
    pub r: f64,
    /// NB probability parameter; the NB mean is r(1-p)/p.
    pub p: f64,
    pub v: usize,
    pub t: usize,
    #[serde(default = "default_groups")]
    pub n_groups: usize,
}

fn default_groups() -> usize {
    1
}

impl ZinbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(Error::Config(format!("zinb p0 {} outside [0,1]", self.p0)));
        }
        if !self.r.is_finite() || self.r <= 0.0 {
            return Err(Error::Config(format!("zinb r {} invalid", self.r)));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Config(format!("zinb p {} outside (0,1)", self.p)));
        }
        if self.v == 0 || self.t == 0 || self.n_groups == 0 {
            return Err(Error::Config("zinb dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Closed-form variance-to-expectation ratio, `(1 + r p0 (1-p)) / p`.
    pub fn variance_to_expectation(&self) -> f64 {
        (1.0 + self.r * self.p0 * (1.0 - self.p)) / self.p
    }

    /// The five reference configurations used for overdispersion sweeps:
    /// p0 = 0.9, r = 5, p in {0.9, 0.8, 0.7, 0.6, 0.5}, with V/E ratios
    /// {1.61, 2.38, 3.36, 4.67, 6.5}.
    pub fn reference_configs(v: usize, t: usize, n_groups: usize) -> Vec<ZinbConfig> {
        [0.9, 0.8, 0.7, 0.6, 0.5]
            .iter()
            .map(|&p| ZinbConfig {
                p0: 0.9,
                r: 5.0,
                p,
                v,
                t,
                n_groups,
            })
            .collect()
    }
}

/// Draw a ZINB count matrix plus the group id of each row.
pub fn generate_zinb(cfg: &ZinbConfig, rng: &mut RngStream) -> Result<(CountMatrix, Vec<usize>)> {
    cfg.validate()?;
    let rows = cfg.v * cfg.n_groups;
    let nb = NbParams::new(cfg.r, cfg.p)?;
    let mut values = Array2::zeros((rows, cfg.t));
    for v in 0..rows {
        for t in 0..cfg.t {
            values[(v, t)] = if rng.random::<f64>() < cfg.p0 {
                0
            } else {
                sample_negative_binomial(&nb, rng)?
            };
        }
    }
    let groups = (0..rows).map(|v| v / cfg.v).collect();
    let mut counts = CountMatrix::new(values);
    for (v, label) in counts.dim_labels.iter_mut().enumerate() {
        *label = format!("g{}v{}", v / cfg.v, v % cfg.v);
    }
    Ok((counts, groups))
}

/// Held-out mean absolute and mean relative error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mre: f64,
    pub n_cells: usize,
}

/// MAE and MRE of `estimate` against `truth`, averaged over masked cells
/// only. The per-cell relative error divides by `1 + n` so zero-count cells
/// are well defined.
pub fn compute_metrics(
    truth: &CountMatrix,
    estimate: &Array2<f64>,
    mask: &MaskSpec,
) -> Result<Metrics> {
    if estimate.dim() != truth.values.dim() {
        return Err(Error::Config(format!(
            "estimate shape {:?} does not match truth {:?}",
            estimate.dim(),
            truth.values.dim()
        )));
    }
    if mask.is_empty() {
        return Err(Error::Config("metrics over an empty mask".into()));
    }
    let mut mae = 0.0;
    let mut mre = 0.0;
    for &(v, t) in &mask.cells {
        if v >= truth.v() || t >= truth.t() {
            return Err(Error::Config(format!(
                "mask cell ({v}, {t}) outside the {}x{} matrix",
                truth.v(),
                truth.t()
            )));
        }
        let n = truth.values[(v, t)] as f64;
        let err = (n - estimate[(v, t)]).abs();
        mae += err;
        mre += err / (1.0 + n);
    }
    let count = mask.len() as f64;
    Ok(Metrics {
        mae: mae / count,
        mre: mre / count,
        n_cells: mask.len(),
    })
}

/// Load a count matrix from CSV: a header row of time labels (first field is
/// a corner label), then one row per dimension with its label in the first
/// column and nonnegative integer cells. Lines starting with `#` are
/// metadata comments.
pub fn load_counts(path: &Path) -> Result<CountMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        lines.push(line);
    }
    if lines.is_empty() {
        return Err(Error::DataFormat {
            msg: "empty count file".into(),
            row: 0,
            col: 0,
        });
    }
    let header: Vec<&str> = lines[0].split(',').collect();
    if header.len() < 2 {
        return Err(Error::DataFormat {
            msg: "header must contain at least one time label".into(),
            row: 1,
            col: 1,
        });
    }
    let time_labels: Vec<String> = header[1..].iter().map(|s| s.trim().to_string()).collect();
    let t = time_labels.len();
    let v = lines.len() - 1;
    if v == 0 {
        return Err(Error::DataFormat {
            msg: "no data rows".into(),
            row: 2,
            col: 1,
        });
    }
    let mut values = Array2::zeros((v, t));
    let mut dim_labels = Vec::with_capacity(v);
    for (i, line) in lines[1..].iter().enumerate() {
        let row_no = i + 2; // 1-based, counting the header
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != t + 1 {
            return Err(Error::DataFormat {
                msg: format!("expected {} fields, found {}", t + 1, fields.len()),
                row: row_no,
                col: fields.len(),
            });
        }
        dim_labels.push(fields[0].trim().to_string());
        for (j, raw) in fields[1..].iter().enumerate() {
            let cell = raw.trim();
            let parsed: i64 = cell.parse().map_err(|_| Error::DataFormat {
                msg: format!("cell '{cell}' is not an integer"),
                row: row_no,
                col: j + 2,
            })?;
            if parsed < 0 {
                return Err(Error::DataFormat {
                    msg: format!("negative count {parsed}"),
                    row: row_no,
                    col: j + 2,
                });
            }
            values[(i, j)] = parsed as u64;
        }
    }
    Ok(CountMatrix {
        values,
        dim_labels,
        time_labels,
    })
}

/// Write a count matrix as CSV; `comment` lines (e.g. a manifest hash) are
/// prefixed with `#` and skipped by [`load_counts`].
pub fn save_counts(counts: &CountMatrix, path: &Path, comment: Option<&str>) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut write = |s: &str| -> Result<()> {
        file.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    };
    if let Some(c) = comment {
        write(&format!("# {c}\n"))?;
    }
    write(&format!("dim,{}\n", counts.time_labels.join(",")))?;
    for v in 0..counts.v() {
        let row: Vec<String> = (0..counts.t())
            .map(|t| counts.values[(v, t)].to_string())
            .collect();
        write(&format!("{},{}\n", counts.dim_labels[v], row.join(",")))?;
    }
    Ok(())
}
