//! Grid of head models over (feature, pooling, k), trained in parallel.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::metrics::format_uar_percent;
use crate::model::{Architecture, Classifier, HeadConfig, Pooling};
use crate::training::{train, Example, TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub features: Vec<String>,
    pub poolings: Vec<Pooling>,
    pub ks: Vec<usize>,
    /// Input dimension of each feature tag.
    pub dims: HashMap<String, usize>,
    pub dropout_p: f64,
    /// Shared by every cell, seed included.
    pub train: TrainConfig,
}

impl SweepPlan {
    pub fn cells(&self) -> Vec<(String, Pooling, usize)> {
        let mut out = Vec::new();
        for f in &self.features {
            for &p in &self.poolings {
                for &k in &self.ks {
                    out.push((f.clone(), p, k));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub feature: String,
    pub pooling: Pooling,
    pub k: usize,
    pub dev_uar: f64,
    pub best_step: u64,
}

/// Trains every cell on a pool of `jobs` threads (0: one per core). Cell
/// results do not depend on `jobs`.
pub fn run_sweep(
    plan: &SweepPlan,
    data: &HashMap<String, (Vec<Example>, Vec<Example>)>,
    jobs: usize,
) -> Result<Vec<SweepCell>, TrainError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| TrainError::BadConfig(format!("thread pool: {e}")))?;
    let cells = plan.cells();
    pool.install(|| {
        cells
            .par_iter()
            .map(|(feature, pooling, k)| {
                let (tr, dv) = data
                    .get(feature)
                    .ok_or_else(|| TrainError::BadConfig(format!("no data for feature `{feature}`")))?;
                let dim = plan
                    .dims
                    .get(feature)
                    .copied()
                    .or_else(|| tr.first().map(|e| e.features.dim()))
                    .ok_or(TrainError::EmptyDataset)?;
                let arch = Architecture::Head(HeadConfig {
                    input_dim: dim,
                    k: *k,
                    pooling: *pooling,
                    dropout_p: plan.dropout_p,
                });
                log::info!("sweep cell {feature}/{pooling}/k={k}");
                let out = train(Classifier::new(arch, feature, plan.train.seed), tr, dv, &plan.train)?;
                Ok(SweepCell {
                    feature: feature.clone(),
                    pooling: *pooling,
                    k: *k,
                    dev_uar: out.best.meta.dev_uar.unwrap_or(0.0),
                    best_step: out.best.meta.step,
                })
            })
            .collect()
    })
}

fn best_per_feature(cells: &[SweepCell]) -> HashMap<&str, f64> {
    let mut best: HashMap<&str, f64> = HashMap::new();
    for c in cells {
        let b = best.entry(&c.feature).or_insert(f64::NEG_INFINITY);
        *b = b.max(c.dev_uar);
    }
    best
}

/// One row per (feature, pooling), one column per k, dev UAR in percent.
/// `*` marks each feature's best cell.
pub fn write_table(plan: &SweepPlan, cells: &[SweepCell], path: &Path) -> Result<(), TrainError> {
    let best = best_per_feature(cells);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["feature".to_string(), "pooling".to_string()];
    header.extend(plan.ks.iter().map(|k| format!("k={k}")));
    w.write_record(&header)?;
    for f in &plan.features {
        for &p in &plan.poolings {
            let mut row = vec![f.clone(), p.to_string()];
            for &k in &plan.ks {
                let cell = cells.iter().find(|c| &c.feature == f && c.pooling == p && c.k == k);
                row.push(match cell {
                    Some(c) if best.get(f.as_str()) == Some(&c.dev_uar) => format!("{}*", format_uar_percent(c.dev_uar)),
                    Some(c) => format_uar_percent(c.dev_uar),
                    None => String::new(),
                });
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CellRow<'a> {
    feature: &'a str,
    pooling: Pooling,
    k: usize,
    dev_uar: f64,
    best_step: u64,
    best_for_feature: bool,
}

pub fn write_cells(cells: &[SweepCell], path: &Path) -> Result<(), TrainError> {
    let best = best_per_feature(cells);
    let mut w = csv::Writer::from_path(path)?;
    for c in cells {
        w.serialize(CellRow {
            feature: &c.feature,
            pooling: c.pooling,
            k: c.k,
            dev_uar: c.dev_uar,
            best_step: c.best_step,
            best_for_feature: best.get(c.feature.as_str()) == Some(&c.dev_uar),
        })?;
    }
    w.flush()?;
    Ok(())
}
