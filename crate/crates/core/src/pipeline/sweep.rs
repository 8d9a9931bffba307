use std::collections::hash_map::Entry;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::engine::{Engine, RunOutput, RunSettings};
use super::report::SummaryRow;
use super::PipelineError;
use crate::probe::ProbeConfig;
use crate::types::EvidenceBudget;

/// Values to scan. An empty axis keeps the base setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub tp: Vec<f64>,
    pub k: Vec<usize>,
    pub mt: Vec<usize>,
    pub top_m: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tp: f64,
    pub k: usize,
    pub mt: usize,
    pub top_m: usize,
}

fn or_base<T: Copy>(axis: &[T], base: T) -> Vec<T> {
    if axis.is_empty() {
        vec![base]
    } else {
        axis.to_vec()
    }
}

impl SweepGrid {
    /// Cartesian product in probing-friendly order: for each MT, the largest
    /// K comes first so smaller K values are served from the cache.
    pub fn points(&self, base: &RunSettings) -> Result<Vec<SweepPoint>, PipelineError> {
        if self.tp.iter().any(|t| t.is_nan()) {
            return Err(PipelineError::Config("tp grid contains NaN".into()));
        }
        let mut ks = or_base(&self.k, base.probe.top_k);
        ks.sort_unstable_by(|a, b| b.cmp(a));
        ks.dedup();
        let mut points = Vec::new();
        for mt in or_base(&self.mt, base.probe.max_tokens) {
            for &k in &ks {
                ProbeConfig::new(k, mt)?;
                for top_m in or_base(&self.top_m, base.budget.top_m) {
                    for tp in or_base(&self.tp, base.threshold) {
                        points.push(SweepPoint { tp, k, mt, top_m });
                    }
                }
            }
        }
        Ok(points)
    }
}

impl SweepPoint {
    pub fn settings(&self, base: &RunSettings) -> Result<RunSettings, PipelineError> {
        Ok(RunSettings {
            probe: ProbeConfig::new(self.k, self.mt)?,
            threshold: self.tp,
            budget: EvidenceBudget::new(self.top_m, base.budget.token_guard)
                .map_err(|e| PipelineError::Config(e.to_string()))?,
            ..*base
        })
    }
}

/// One run per grid point over a shared engine. Rollouts are cached by
/// (query, prompt, MT) and truncated for smaller K, so threshold and budget
/// changes never re-probe. Retriever-only baselines are computed once per
/// budget for NTE.
pub fn run_sweep(
    engine: &Engine,
    base: &RunSettings,
    grid: &SweepGrid,
) -> Result<Vec<(SweepPoint, RunOutput)>, PipelineError> {
    let mut baselines: HashMap<(usize, Option<usize>), SummaryRow> = HashMap::new();
    let mut out = Vec::new();
    for point in grid.points(base)? {
        let settings = point.settings(base)?;
        tracing::info!(?point, "sweep point");
        let result = if engine.options().compute_nte {
            let key = (settings.budget.top_m, settings.budget.token_guard);
            let base = match baselines.entry(key) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(engine.run_without_nte(&settings.baseline())?.summary),
            };
            engine.run_against(&settings, base)?
        } else {
            engine.run_without_nte(&settings)?
        };
        out.push((point, result));
    }
    Ok(out)
}
