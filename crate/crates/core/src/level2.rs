//! Level two: event-wise labeling on a spatio-temporal graph.
//!
//! The energy is a per-event data cost measured against each cluster's own
//! motion-compensated image, a Potts term over a k-nearest-neighbor graph in
//! (x, y, scaled t), and a fixed cost per active model. It is minimized by
//! block-coordinate descent: alpha-expansion relabeling, then per-cluster
//! contrast-maximization refits that are kept only if the energy drops.

use std::num::NonZero;

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;

use crate::error::{Error, Result};
use crate::event::{accumulate_events, contrast_variance, warp_event, Event, EventWindow, Iwe};
use crate::motion::{FourParamMotion, Point2};
use crate::mrf::{alpha_expansion, MultiLabelProblem};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct Level2Params {
    pub lambda_potts: f64,
    pub beta_mdl: f64,
    pub outlier_cost: f64,
    pub k_neighbors: usize,
    /// Pixels per second along the time axis of the graph embedding. `None`
    /// maps the window duration to 10 px.
    pub alpha_scale: Option<f64>,
    pub max_bcd_rounds: usize,
    pub cm_eval_budget: usize,
    /// Gaussian width of the cluster images.
    pub iwe_eps: f64,
}

impl Default for Level2Params {
    fn default() -> Self {
        Self {
            lambda_potts: 1.0,
            beta_mdl: 100.0,
            outlier_cost: 0.95,
            k_neighbors: 8,
            alpha_scale: None,
            max_bcd_rounds: 8,
            cm_eval_budget: 150,
            iwe_eps: 1.0,
        }
    }
}

impl Level2Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_potts >= 0.0 && self.beta_mdl >= 0.0) {
            return Err(Error::Config("level-two weights must be non-negative".into()));
        }
        if !(self.outlier_cost > 0.0 && self.outlier_cost <= 1.0) {
            return Err(Error::Config("outlier_cost must lie in (0, 1]".into()));
        }
        if self.k_neighbors == 0 {
            return Err(Error::Config("k_neighbors must be positive".into()));
        }
        if matches!(self.alpha_scale, Some(a) if !(a >= 0.0)) {
            return Err(Error::Config("alpha_scale must be non-negative".into()));
        }
        if !(self.iwe_eps > 0.0) {
            return Err(Error::Config("iwe_eps must be positive".into()));
        }
        Ok(())
    }

    fn alpha_for(&self, w: &EventWindow) -> f64 {
        self.alpha_scale.unwrap_or_else(|| {
            let d = w.duration_s();
            if d > 0.0 {
                10.0 / d
            } else {
                0.0
            }
        })
    }
}

/// Per-event label: `Some(model)` or `None` for outliers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventLabeling {
    pub labels: Vec<Option<usize>>,
}

impl EventLabeling {
    pub fn all_outliers(n: usize) -> Self {
        Self { labels: vec![None; n] }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Models with at least one member, ascending.
    pub fn active(&self) -> Vec<usize> {
        let mut a: Vec<usize> = self.labels.iter().flatten().copied().collect();
        a.sort_unstable();
        a.dedup();
        a
    }

    pub fn members(&self, model: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == Some(model)).collect()
    }

    fn dense(&self, outlier: usize) -> Vec<usize> {
        self.labels.iter().map(|l| l.unwrap_or(outlier)).collect()
    }

    fn from_dense(labels: &[usize], outlier: usize) -> Self {
        Self {
            labels: labels.iter().map(|&l| (l != outlier).then_some(l)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StGraph {
    /// Undirected, each stored once with `i < j`.
    pub edges: Vec<(usize, usize, f64)>,
    pub alpha: f64,
}

/// k-nearest-neighbor graph over events embedded at `(x, y, alpha * t)`.
pub fn build_st_graph(w: &EventWindow, p: &Level2Params) -> StGraph {
    let alpha = p.alpha_for(w);
    let n = w.len();
    if n < 2 {
        return StGraph { edges: Vec::new(), alpha };
    }
    let pts: Vec<[f64; 3]> = w
        .events
        .iter()
        .map(|e| [e.x as f64, e.y as f64, alpha * (e.t - w.t_start) as f64 * 1e-6])
        .collect();
    let tree: ImmutableKdTree<f64, u32, 3, 32> = ImmutableKdTree::new_from_slice(&pts);
    // One extra neighbor to skip the query point itself.
    let k = NonZero::new((p.k_neighbors + 1).min(n)).expect("n >= 2");
    let lists = par::map_range(n, |i| {
        let mut near: Vec<(f64, usize)> = tree
            .nearest_n::<SquaredEuclidean>(&pts[i], k)
            .into_iter()
            .map(|nn| (nn.distance, nn.item as usize))
            .filter(|&(_, j)| j != i)
            .collect();
        // Stable order among equidistant neighbors.
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        near.truncate(p.k_neighbors);
        near.into_iter().map(|(_, j)| j).collect::<Vec<_>>()
    });
    let mut edges: Vec<(usize, usize)> = lists
        .iter()
        .enumerate()
        .flat_map(|(i, l)| l.iter().map(move |&j| (i.min(j), i.max(j))))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    StGraph {
        edges: edges.into_iter().map(|(i, j)| (i, j, 1.0)).collect(),
        alpha,
    }
}

/// Geometry shared by every cluster image of a window.
#[derive(Debug, Clone, Copy)]
struct Frame {
    width: u32,
    height: u32,
    t_ref: u64,
    center: Point2,
    eps: f64,
}

impl Frame {
    fn of(w: &EventWindow, p: &Level2Params) -> Self {
        Self {
            width: w.width,
            height: w.height,
            t_ref: w.t_start + (w.t_end - w.t_start) / 2,
            center: w.center(),
            eps: p.iwe_eps,
        }
    }

    fn iwe<'a>(&self, events: impl IntoIterator<Item = &'a Event>, m: &FourParamMotion) -> Iwe {
        accumulate_events(events, self.width, self.height, m, self.t_ref, self.center, self.eps)
    }
}

/// Normalized image of one cluster: raw values divided by the 99th
/// percentile of the nonzero pixels, clamped to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterImage {
    pub image: Iwe,
    /// Raw value mapped to 1; zero for an empty cluster.
    pub scale: f64,
    pub raw: Iwe,
}

impl ClusterImage {
    pub fn new(raw: Iwe) -> Self {
        let mut nz: Vec<f64> = raw.pixels.iter().copied().filter(|v| *v > 0.0).collect();
        if nz.is_empty() {
            return Self {
                image: raw.clone(),
                scale: 0.0,
                raw,
            };
        }
        let k = ((nz.len() as f64 * 0.99).ceil() as usize).clamp(1, nz.len()) - 1;
        let (_, q, _) = nz.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
        let scale = *q;
        let mut image = raw.clone();
        for v in &mut image.pixels {
            *v = (*v / scale).min(1.0);
        }
        Self { image, scale, raw }
    }

    /// Unclamped normalized value at `q`; separates events that all saturate.
    fn ratio_at(&self, q: Point2) -> f64 {
        if self.scale > 0.0 {
            self.raw.sample_bilinear(q) / self.scale
        } else {
            0.0
        }
    }

    /// Data cost of an event warped to `q`.
    pub fn cost_at(&self, q: Point2) -> f64 {
        1.0 - self.image.sample_bilinear(q).clamp(0.0, 1.0)
    }
}

/// Images of the members of each model, warped by that model. Models without
/// members get an empty image, against which every event costs 1.
pub fn cluster_iwes(w: &EventWindow, l: &EventLabeling, models: &[FourParamMotion], p: &Level2Params) -> Vec<ClusterImage> {
    let frame = Frame::of(w, p);
    par::map_range(models.len(), |j| {
        let members = l
            .labels
            .iter()
            .zip(&w.events)
            .filter(|(lab, _)| **lab == Some(j))
            .map(|(_, e)| e);
        ClusterImage::new(frame.iwe(members, &models[j]))
    })
}

fn cost(e: &Event, m: &FourParamMotion, img: &ClusterImage, frame: &Frame) -> f64 {
    img.cost_at(warp_event(e, m, frame.t_ref, frame.center))
}

/// Cost in `[0, 1]` of assigning `e` to `model` (`None` for the outlier
/// label) given the cluster images.
pub fn data_cost(
    e: &Event,
    model: Option<usize>,
    models: &[FourParamMotion],
    images: &[ClusterImage],
    w: &EventWindow,
    p: &Level2Params,
) -> f64 {
    match model {
        None => p.outlier_cost,
        Some(j) => cost(e, &models[j], &images[j], &Frame::of(w, p)),
    }
}

/// Total energy: data + Potts + per-active-model cost. `images` must be the
/// cluster images of `l`.
pub fn energy(
    l: &EventLabeling,
    models: &[FourParamMotion],
    g: &StGraph,
    images: &[ClusterImage],
    w: &EventWindow,
    p: &Level2Params,
) -> f64 {
    assert_eq!(l.len(), w.len(), "labeling does not match window");
    let frame = Frame::of(w, p);
    let data: f64 = par::map_range(w.len(), |i| match l.labels[i] {
        None => p.outlier_cost,
        Some(j) => cost(&w.events[i], &models[j], &images[j], &frame),
    })
    .iter()
    .sum();
    let cut = g.edges.iter().filter(|(i, j, _)| l.labels[*i] != l.labels[*j]).map(|e| e.2).sum::<f64>();
    data + p.lambda_potts * cut + p.beta_mdl * l.active().len() as f64
}

fn labeling_problem(
    w: &EventWindow,
    g: &StGraph,
    models: &[FourParamMotion],
    images: &[ClusterImage],
    p: &Level2Params,
) -> MultiLabelProblem {
    let frame = Frame::of(w, p);
    let k = models.len() + 1;
    let rows = par::map_range(w.len(), |i| {
        let e = &w.events[i];
        let mut row: Vec<f64> = models
            .iter()
            .zip(images)
            .map(|(m, img)| cost(e, m, img, &frame))
            .collect();
        row.push(p.outlier_cost);
        row
    });
    let mut prob = MultiLabelProblem::new(w.len(), k);
    prob.unary = rows.concat();
    prob.edges = g.edges.iter().map(|&(i, j, wt)| (i, j, p.lambda_potts * wt)).collect();
    for c in prob.label_costs.iter_mut().take(k - 1) {
        *c = p.beta_mdl;
    }
    prob.outlier_label = Some(k - 1);
    prob
}

/// Alpha-expansion relabeling with the cluster images held fixed.
pub fn label_events(
    w: &EventWindow,
    g: &StGraph,
    models: &[FourParamMotion],
    images: &[ClusterImage],
    init: &EventLabeling,
    p: &Level2Params,
) -> EventLabeling {
    let prob = labeling_problem(w, g, models, images, p);
    let outlier = models.len();
    let r = alpha_expansion(&prob, &init.dense(outlier));
    EventLabeling::from_dense(&r.labels, outlier)
}

/// Downhill simplex maximization of `f` from `x0`. Returns the best point and
/// its value.
pub fn nelder_mead_max<F: Fn(&[f64; 4]) -> f64>(f: F, x0: [f64; 4], step: [f64; 4], budget: usize) -> ([f64; 4], f64) {
    let mut simplex: Vec<([f64; 4], f64)> = Vec::with_capacity(5);
    simplex.push((x0, f(&x0)));
    for d in 0..4 {
        let mut x = x0;
        x[d] += step[d];
        simplex.push((x, f(&x)));
    }
    let mut evals = 5;
    let lerp = |a: &[f64; 4], b: &[f64; 4], t: f64| -> [f64; 4] { std::array::from_fn(|d| a[d] + t * (b[d] - a[d])) };
    while evals < budget {
        // Descending by value: best first.
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let (best, worst) = (simplex[0].1, simplex[4].1);
        if (best - worst).abs() <= 1e-12 * best.abs().max(1e-300) {
            break;
        }
        let centroid: [f64; 4] = std::array::from_fn(|d| simplex[..4].iter().map(|s| s.0[d]).sum::<f64>() / 4.0);
        let w = simplex[4].0;
        let xr = lerp(&centroid, &w, -1.0);
        let fr = f(&xr);
        evals += 1;
        if fr > best {
            let xe = lerp(&centroid, &w, -2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[4] = if fe > fr { (xe, fe) } else { (xr, fr) };
        } else if fr > simplex[3].1 {
            simplex[4] = (xr, fr);
        } else {
            let (xc, fc) = if fr > worst {
                let x = lerp(&centroid, &xr, 0.5);
                (x, f(&x))
            } else {
                let x = lerp(&centroid, &w, 0.5);
                (x, f(&x))
            };
            evals += 1;
            if fc > worst.max(fr) {
                simplex[4] = (xc, fc);
            } else {
                let b = simplex[0].0;
                for s in simplex.iter_mut().skip(1) {
                    s.0 = lerp(&b, &s.0, 0.5);
                    s.1 = f(&s.0);
                }
                evals += 4;
            }
        }
    }
    simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
    simplex[0]
}

/// Initial simplex step: 10% of the parameter magnitude, floored so that a
/// model at rest still moves a fraction of a pixel over the window.
fn simplex_step(m: &FourParamMotion) -> [f64; 4] {
    let a = m.to_array();
    [
        0.1 * a[0].abs().max(50.0),
        0.1 * a[1].abs().max(50.0),
        0.1 * a[2].abs().max(1.0),
        0.1 * a[3].abs().max(1.0),
    ]
}

/// Contrast maximization of one cluster's motion from `m0`.
pub fn maximize_contrast(events: &[&Event], m0: &FourParamMotion, w: &EventWindow, p: &Level2Params) -> FourParamMotion {
    let frame = Frame::of(w, p);
    let objective = |x: &[f64; 4]| {
        let m = FourParamMotion::from_array(*x);
        if !m.is_finite() {
            return f64::NEG_INFINITY;
        }
        contrast_variance(&frame.iwe(events.iter().copied(), &m))
    };
    let (x, _) = nelder_mead_max(objective, m0.to_array(), simplex_step(m0), p.cm_eval_budget);
    FourParamMotion::from_array(x)
}

fn member_cost(w: &EventWindow, idx: &[usize], m: &FourParamMotion, frame: &Frame) -> f64 {
    let img = ClusterImage::new(frame.iwe(idx.iter().map(|&i| &w.events[i]), m));
    idx.iter().map(|&i| cost(&w.events[i], m, &img, frame)).sum()
}

/// Per active cluster, contrast maximization over its members. A refit
/// replaces the old model only if the cluster's data cost, and therefore the
/// total energy, decreases.
pub fn refine_models_cm(w: &EventWindow, l: &EventLabeling, models: &[FourParamMotion], p: &Level2Params) -> Vec<FourParamMotion> {
    let frame = Frame::of(w, p);
    par::map_range(models.len(), |j| {
        let idx = l.members(j);
        if idx.is_empty() {
            return models[j];
        }
        let events: Vec<&Event> = idx.iter().map(|&i| &w.events[i]).collect();
        let cand = maximize_contrast(&events, &models[j], w, p);
        if member_cost(w, &idx, &cand, &frame) < member_cost(w, &idx, &models[j], &frame) {
            cand
        } else {
            models[j]
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Level2Result {
    pub labeling: EventLabeling,
    pub models: Vec<FourParamMotion>,
    /// Total energy after initialization and after every accepted round.
    pub trace: Vec<f64>,
    pub rounds: usize,
}

/// Drops models without members and renumbers labels.
fn compact(l: &EventLabeling, models: &[FourParamMotion]) -> (EventLabeling, Vec<FourParamMotion>) {
    let active = l.active();
    let mut remap = vec![None; models.len()];
    for (new, &old) in active.iter().enumerate() {
        remap[old] = Some(new);
    }
    let labels = l.labels.iter().map(|lab| lab.and_then(|j| remap[j])).collect();
    (EventLabeling { labels }, active.iter().map(|&j| models[j]).collect())
}

/// Block-coordinate descent from the level-one model pool.
pub fn segment(w: &EventWindow, init_models: &[FourParamMotion], p: &Level2Params) -> Result<Level2Result> {
    p.validate()?;
    if init_models.is_empty() {
        return Err(Error::EmptyPool);
    }
    let g = build_st_graph(w, p);
    let frame = Frame::of(w, p);

    // Bootstrap: every model sees all events.
    let full: Vec<ClusterImage> = par::map(init_models, |m| ClusterImage::new(frame.iwe(w.events.iter(), m)));
    let outlier = init_models.len();
    // Saturated lookups tie at zero cost; the unclamped ratio breaks ties.
    let argmin: Vec<usize> = par::map_range(w.len(), |i| {
        let e = &w.events[i];
        let mut best = (outlier, p.outlier_cost, f64::NEG_INFINITY);
        for (j, (m, img)) in init_models.iter().zip(&full).enumerate() {
            let q = warp_event(e, m, frame.t_ref, frame.center);
            let (c, r) = (img.cost_at(q), img.ratio_at(q));
            if c < best.1 || (c == best.1 && best.0 != outlier && r > best.2) {
                best = (j, c, r);
            }
        }
        best.0
    });
    let init = EventLabeling::from_dense(&argmin, outlier);
    let (mut labels, mut models) = compact(&init, init_models);
    let mut e = energy(&labels, &models, &g, &cluster_iwes(w, &labels, &models, p), w, p);
    let mut trace = vec![e];
    let mut rounds = 0;

    while rounds < p.max_bcd_rounds && !models.is_empty() {
        rounds += 1;
        let iwes = cluster_iwes(w, &labels, &models, p);
        let relabeled = label_events(w, &g, &models, &iwes, &labels, p);
        let (new_labels, new_models) = compact(&relabeled, &models);
        let new_models = refine_models_cm(w, &new_labels, &new_models, p);
        let new_e = energy(&new_labels, &new_models, &g, &cluster_iwes(w, &new_labels, &new_models, p), w, p);
        // The relabeling used the previous cluster images; keep the round only
        // if the energy with rebuilt images actually dropped.
        if new_e > e {
            break;
        }
        let gain = e - new_e;
        labels = new_labels;
        models = new_models;
        e = new_e;
        trace.push(e);
        if gain < 1e-4 * w.len() as f64 {
            break;
        }
    }
    Ok(Level2Result {
        labeling: labels,
        models,
        trace,
        rounds,
    })
}
