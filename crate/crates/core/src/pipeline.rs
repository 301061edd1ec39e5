//! Full per-window chain: feature tracking, level one, level two.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::event::EventWindow;
use crate::features::{build_feature_set, build_feature_set_single, TrackerParams};
use crate::level1::{progressive_fit, Level1Params, StopReason};
use crate::level2::{segment, EventLabeling, Level2Params};
use crate::motion::FourParamMotion;
use crate::Result;

/// Where level one gets its feature correspondences from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrackingMode {
    /// Track from the first half of the window to the second half.
    Halves,
    /// Track from the previous window to the current one. The first window
    /// of a stream falls back to halves.
    #[default]
    Consecutive,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineParams {
    pub tracker: TrackerParams,
    pub tracking: TrackingMode,
    pub level1: Level1Params,
    pub level2: Level2Params,
    pub seed: u64,
}

/// Everything the pipeline learned about one window.
#[derive(Debug, Clone)]
pub struct WindowResult {
    pub labeling: EventLabeling,
    pub models: Vec<FourParamMotion>,
    pub num_features: usize,
    pub level1_models: Vec<FourParamMotion>,
    pub level1_stop: StopReason,
    pub pearl_traces: Vec<Vec<f64>>,
    pub level2_trace: Vec<f64>,
}

/// Segments one window. `index` only feeds the RNG seed, so windows can be
/// processed in any order with identical results.
pub fn segment_window(
    w: &EventWindow,
    prev: Option<&EventWindow>,
    index: usize,
    p: &PipelineParams,
) -> Result<WindowResult> {
    let fs = match (p.tracking, prev) {
        (TrackingMode::Consecutive, Some(prev)) => build_feature_set(prev, w, &p.tracker)?,
        _ => build_feature_set_single(w, &p.tracker)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let l1 = progressive_fit(&fs, &p.level1, &mut rng)?;
    let l2 = segment(w, &l1.pool.models, &p.level2)?;
    Ok(WindowResult {
        labeling: l2.labeling,
        models: l2.models,
        num_features: fs.len(),
        level1_models: l1.pool.models,
        level1_stop: l1.stop,
        pearl_traces: l1.pearl_traces,
        level2_trace: l2.trace,
    })
}

/// Segments a sliced stream. Windows are processed concurrently when
/// `parallel_windows` is set; output order always follows window order.
pub fn segment_stream(windows: &[EventWindow], p: &PipelineParams, parallel_windows: bool) -> Result<Vec<WindowResult>> {
    let run = |i: usize| segment_window(&windows[i], i.checked_sub(1).map(|j| &windows[j]), i, p);
    let results: Vec<Result<WindowResult>> = if parallel_windows {
        crate::par::map_range(windows.len(), run)
    } else {
        (0..windows.len()).map(run).collect()
    };
    results.into_iter().collect()
}
