//! Correlation maps between world-model predictions and ground truth, and
//! aggregation of sweep results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::exec::{map_indexed, Execution};
use crate::gridworld::{observe, GridAction, GridObs, GridWorld};
use crate::nn::{GRID_CELLS, GRID_OBS_LEN, GRID_PLANES};
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{path}: {message}")]
    Metrics { path: PathBuf, message: String },
}

/// A correlation coefficient; `flagged` marks zero variance (value is 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub value: f64,
    pub flagged: bool,
}

/// Streaming co-moment accumulator (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct PearsonAccumulator {
    n: usize,
    mean_x: f64,
    mean_y: f64,
    m2_x: f64,
    m2_y: f64,
    c_xy: f64,
}

impl PearsonAccumulator {
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_x;
        self.mean_x += dx / n;
        let dy = y - self.mean_y;
        self.mean_y += dy / n;
        self.m2_x += dx * (x - self.mean_x);
        self.m2_y += dy * (y - self.mean_y);
        self.c_xy += dx * (y - self.mean_y);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn correlation(&self) -> Correlation {
        if self.m2_x <= 0.0 || self.m2_y <= 0.0 {
            return Correlation {
                value: 0.0,
                flagged: true,
            };
        }
        let r = self.c_xy / (self.m2_x.sqrt() * self.m2_y.sqrt());
        Correlation {
            value: r.clamp(-1.0, 1.0),
            flagged: false,
        }
    }
}

/// Sample Pearson correlation; zero variance in either input gives a
/// flagged 0.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Correlation, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(AnalysisError::TooFewSamples(xs.len()));
    }
    let mut acc = PearsonAccumulator::default();
    for (&x, &y) in xs.iter().zip(ys) {
        acc.push(x, y);
    }
    Ok(acc.correlation())
}

/// Row-major 5x5 map of correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub values: Vec<f64>,
    pub flagged: Vec<bool>,
    pub samples: usize,
}

impl CorrelationMap {
    fn from_accumulators(accs: &[PearsonAccumulator]) -> Self {
        let cs: Vec<Correlation> = accs.iter().map(|a| a.correlation()).collect();
        Self {
            values: cs.iter().map(|c| c.value).collect(),
            flagged: cs.iter().map(|c| c.flagged).collect(),
            samples: accs.first().map_or(0, |a| a.count()),
        }
    }

    pub fn side(&self) -> usize {
        (self.values.len() as f64).sqrt().round() as usize
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.side() + c]
    }

    /// `row,col,value,flagged`.
    pub fn to_csv(&self) -> String {
        let side = self.side();
        let mut out = String::from("row,col,value,flagged\n");
        for (k, (v, f)) in self.values.iter().zip(&self.flagged).enumerate() {
            out.push_str(&format!("{},{},{},{}\n", k / side, k % side, v, f));
        }
        out
    }
}

/// Both planes pooled per window cell, plus each plane separately.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionCorrelation {
    pub direction: GridAction,
    pub combined: CorrelationMap,
    pub planes: [CorrelationMap; GRID_PLANES],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationConfig {
    pub samples: usize,
    pub seed: u64,
    /// Correlate thresholded rather than raw predictions.
    pub thresholded: bool,
    pub threshold: f64,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            seed: 0,
            thresholded: false,
            threshold: 0.5,
        }
    }
}

/// Fresh random layout with the agent somewhere `direction` is not blocked
/// by a wall, so every sample is an actual move.
pub fn sample_transition(world: &GridWorld, direction: GridAction, seed: u64) -> (GridObs, GridObs) {
    for attempt in 0.. {
        let mut state = world.reset(derive_seed(seed, &[attempt]));
        if direction != GridAction::NoOp && state.destination(direction) == state.agent {
            continue;
        }
        let before = observe(&state);
        world.step(&mut state, direction);
        return (before, observe(&state));
    }
    unreachable!()
}

/// Per-cell correlation between predicted and true next observations over
/// random transitions in one direction.
pub fn direction_correlation<F>(
    predict: F,
    world: &GridWorld,
    direction: GridAction,
    cfg: &CorrelationConfig,
    exec: Execution,
) -> DirectionCorrelation
where
    F: Fn(&GridObs, GridAction) -> [f64; GRID_OBS_LEN] + Sync,
{
    let pairs = map_indexed(cfg.samples, exec, |i| {
        let (obs, truth) = sample_transition(world, direction, derive_seed(cfg.seed, &[i as u64]));
        let mut pred = predict(&obs, direction);
        if cfg.thresholded {
            for v in pred.iter_mut() {
                *v = if *v > cfg.threshold { 1.0 } else { 0.0 };
            }
        }
        (pred, truth)
    });
    let mut combined = vec![PearsonAccumulator::default(); GRID_CELLS];
    let mut planes = vec![vec![PearsonAccumulator::default(); GRID_CELLS]; GRID_PLANES];
    for (pred, truth) in &pairs {
        for plane in 0..GRID_PLANES {
            for cell in 0..GRID_CELLS {
                let k = plane * GRID_CELLS + cell;
                combined[cell].push(pred[k], truth[k]);
                planes[plane][cell].push(pred[k], truth[k]);
            }
        }
    }
    DirectionCorrelation {
        direction,
        combined: CorrelationMap::from_accumulators(&combined),
        planes: [
            CorrelationMap::from_accumulators(&planes[0]),
            CorrelationMap::from_accumulators(&planes[1]),
        ],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub p: f64,
    pub run_id: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAggregate {
    pub p: f64,
    pub metric: String,
    pub runs: usize,
    pub mean: f64,
    /// Standard error of the mean; `None` with fewer than two runs.
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

/// Total order on `p` values for grouping (`p` is never NaN here).
fn p_key(p: f64) -> u64 {
    p.to_bits()
}

impl SweepTable {
    pub fn push(&mut self, p: f64, run_id: impl Into<String>, metric: impl Into<String>, value: f64) {
        self.rows.push(SweepRow {
            p,
            run_id: run_id.into(),
            metric: metric.into(),
            value,
        });
    }

    /// Sorted by metric, then `p`.
    pub fn aggregate(&self) -> Vec<SweepAggregate> {
        let mut groups: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.metric.clone(), p_key(r.p))).or_default().push(r.value);
        }
        let mut out: Vec<SweepAggregate> = groups
            .into_iter()
            .map(|((metric, key), vals)| {
                let n = vals.len();
                let mean = vals.iter().sum::<f64>() / n as f64;
                let stderr = (n >= 2).then(|| {
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                    (var / n as f64).sqrt()
                });
                SweepAggregate {
                    p: f64::from_bits(key),
                    metric,
                    runs: n,
                    mean,
                    stderr,
                }
            })
            .collect();
        out.sort_by(|a, b| a.metric.cmp(&b.metric).then(a.p.total_cmp(&b.p)));
        out
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::from("p,run_id,metric,value\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.p, r.run_id, r.metric, r.value));
        }
        out
    }

    /// `metric,p,runs,mean,stderr`; stderr is empty when unavailable.
    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("metric,p,runs,mean,stderr\n");
        for a in self.aggregate() {
            let se = a.stderr.map(|s| s.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{}\n", a.metric, a.p, a.runs, a.mean, se));
        }
        out
    }
}

/// Name of the per-run results file read by [`aggregate_sweep`].
pub const SUMMARY_FILE: &str = "summary.csv";

/// Reads `summary.csv` (`p,run_id,metric,value`) from every run directory.
pub fn aggregate_sweep(run_dirs: &[PathBuf]) -> Result<SweepTable, AnalysisError> {
    let mut table = SweepTable::default();
    for dir in run_dirs {
        read_summary(&dir.join(SUMMARY_FILE), &mut table)?;
    }
    Ok(table)
}

fn read_summary(path: &Path, table: &mut SweepTable) -> Result<(), AnalysisError> {
    let err = |message: String| AnalysisError::Metrics {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    for rec in reader.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", rec.len())));
        }
        let p: f64 = rec[0].parse().map_err(|_| err(format!("bad p {:?}", &rec[0])))?;
        let value: f64 = rec[3].parse().map_err(|_| err(format!("bad value {:?}", &rec[3])))?;
        table.push(p, &rec[1], &rec[2], value);
    }
    Ok(())
}
