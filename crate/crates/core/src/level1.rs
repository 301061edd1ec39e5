//! Level one: feature clustering by progressive multi-model fitting.
//!
//! Hypotheses are proposed one at a time by a graph-cut RANSAC whose quality
//! function rewards support that the already accepted models (the compound
//! instance) do not explain. Every accepted proposal is followed by a PEARL
//! round (alpha-expansion labeling alternated with per-model refits), and the
//! loop stops once the upper bound on the inliers of a still-unseen model
//! drops below the minimal sample size plus one.

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::motion::{fit_minimal_dlt, geometric_error, refine_model_geometric, FourParamMotion, MINIMAL_SET};
use crate::mrf::{alpha_expansion, BinaryEnergy, MultiLabelProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct Level1Params {
    /// Inlier-outlier threshold in pixels.
    pub zeta: f64,
    /// Confidence.
    pub mu: f64,
    pub napsac_radius: f64,
    pub gc_lambda: f64,
    pub pearl_lambda: f64,
    pub pearl_beta: f64,
    pub outlier_cost: f64,
    pub k_max: usize,
    /// Consecutive proposals rejected by PEARL before the loop gives up.
    pub max_rejections: usize,
}

impl Default for Level1Params {
    fn default() -> Self {
        let zeta = 1.5;
        Self {
            zeta,
            mu: 0.95,
            napsac_radius: 30.0,
            gc_lambda: 0.1,
            pearl_lambda: 1.0,
            pearl_beta: 2.0 * zeta * zeta,
            outlier_cost: 2.0 * zeta,
            k_max: 10_000,
            max_rejections: 3,
        }
    }
}

impl Level1Params {
    /// MSAC truncation width, 1.5 times the inlier threshold.
    pub fn gamma(&self) -> f64 {
        1.5 * self.zeta
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0) {
            return Err(Error::Config("zeta must be positive".into()));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::Config("mu must lie in (0, 1)".into()));
        }
        let weights = [self.napsac_radius, self.gc_lambda, self.pearl_lambda, self.pearl_beta, self.outlier_cost];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("level-one weights must be non-negative".into()));
        }
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be positive".into()));
        }
        Ok(())
    }
}

/// Active motion instances with their member feature indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelPool {
    pub models: Vec<FourParamMotion>,
    pub inliers: Vec<Vec<usize>>,
}

impl ModelPool {
    pub fn from_models(models: Vec<FourParamMotion>) -> Self {
        let inliers = vec![Vec::new(); models.len()];
        Self { models, inliers }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Smallest geometric error over the pool; infinite for an empty pool.
    pub fn min_error(&self, f: &crate::motion::Correspondence) -> f64 {
        self.models
            .iter()
            .map(|m| geometric_error(f, m))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Per-feature label: `Some(model)` or `None` for outliers.
pub type FeatureLabeling = Vec<Option<usize>>;

/// Neighborhood-restricted minimal-sample drawer.
pub struct Napsac {
    neighborhoods: Vec<Vec<usize>>,
}

impl Napsac {
    pub fn new(fs: &FeatureSet, radius: f64) -> Self {
        let pts: Vec<_> = fs.correspondences.iter().map(|f| f.x_prev).collect();
        let r2 = radius * radius;
        let neighborhoods = (0..pts.len())
            .map(|i| {
                (0..pts.len())
                    .filter(|&j| j != i && (pts[i] - pts[j]).norm_squared() <= r2)
                    .collect()
            })
            .collect();
        Self { neighborhoods }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let n = self.neighborhoods.len();
        assert!(n >= 2, "sampling needs at least two features");
        let first = rng.gen_range(0..n);
        let hood = &self.neighborhoods[first];
        let second = if hood.is_empty() {
            let k = rng.gen_range(0..n - 1);
            if k >= first {
                k + 1
            } else {
                k
            }
        } else {
            hood[rng.gen_range(0..hood.len())]
        };
        (first, second)
    }
}

/// Draws one NAPSAC minimal sample of two distinct correspondence indices.
pub fn napsac_sample<R: Rng + ?Sized>(fs: &FeatureSet, rng: &mut R, radius: f64) -> (usize, usize) {
    Napsac::new(fs, radius).sample(rng)
}

fn msac_loss(e_h: f64, e_union: f64, gamma: f64) -> f64 {
    let g2 = gamma * gamma;
    let own = e_h * e_h / g2;
    let shared = if e_union.is_finite() {
        1.0 - e_union * e_union / g2
    } else {
        f64::NEG_INFINITY
    };
    own.max(shared).min(1.0)
}

fn quality_with(m_h: &FourParamMotion, fs: &FeatureSet, e_union: &[f64], gamma: f64) -> f64 {
    let loss: f64 = fs
        .correspondences
        .iter()
        .zip(e_union)
        .map(|(f, &eu)| msac_loss(geometric_error(f, m_h), eu, gamma))
        .sum();
    fs.len() as f64 - loss
}

/// Compound-aware truncated quality of `m_h`.
pub fn msac_quality(m_h: &FourParamMotion, compound: &ModelPool, fs: &FeatureSet, zeta: f64) -> f64 {
    let e_union: Vec<f64> = fs.correspondences.iter().map(|f| compound.min_error(f)).collect();
    quality_with(m_h, fs, &e_union, 1.5 * zeta)
}

/// RANSAC iterations needed to draw an all-inlier sample with confidence
/// `mu`, clamped to `[1, k_max]`.
pub fn required_iterations(eta: f64, s: usize, mu: f64, k_max: usize) -> usize {
    if eta <= 0.0 {
        return k_max;
    }
    if eta >= 1.0 {
        return 1;
    }
    let denom = (1.0 - eta.powi(s as i32)).ln();
    if denom == 0.0 {
        return k_max;
    }
    let k = ((1.0 - mu).ln() / denom).ceil();
    if !k.is_finite() || k >= k_max as f64 {
        k_max
    } else {
        (k as usize).max(1)
    }
}

/// Upper bound on the inliers of a not-yet-found instance after `n`
/// proposals.
pub fn termination_bound(f_total: usize, compound_inliers: usize, s: usize, n: usize, mu: f64) -> f64 {
    assert!(n >= 1 && compound_inliers <= f_total);
    let remaining = (f_total - compound_inliers) as f64;
    remaining * (1.0 - (1.0 - mu).powf(1.0 / n as f64)).powf(1.0 / s as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub model: FourParamMotion,
    /// Features within `zeta` of the model.
    pub inliers: Vec<usize>,
    pub quality: f64,
    pub iterations: usize,
}

fn graph_cut_inliers(m: &FourParamMotion, fs: &FeatureSet, gamma: f64, lambda: f64) -> Vec<usize> {
    let mut be = BinaryEnergy::with_variables(fs.len());
    let g2 = gamma * gamma;
    for (i, f) in fs.correspondences.iter().enumerate() {
        let e = geometric_error(f, m);
        let inlier = (e * e / g2).min(1.0);
        // x = 1 marks an inlier.
        be.add_unary(i, 1.0 - inlier, inlier);
    }
    if lambda > 0.0 {
        for (i, j) in fs.edges() {
            be.add_pairwise(i, j, 0.0, lambda, lambda, 0.0);
        }
    }
    let (x, _) = be.minimize();
    (0..fs.len()).filter(|&i| x[i]).collect()
}

/// One graph-cut RANSAC run against the current compound instance.
pub fn gc_ransac_propose<R: Rng + ?Sized>(
    fs: &FeatureSet,
    compound: &ModelPool,
    p: &Level1Params,
    rng: &mut R,
) -> Result<Proposal> {
    if fs.len() < MINIMAL_SET {
        return Err(Error::InsufficientFeatures {
            found: fs.len(),
            required: MINIMAL_SET,
        });
    }
    let gamma = p.gamma();
    let e_union: Vec<f64> = fs.correspondences.iter().map(|f| compound.min_error(f)).collect();
    let independent = |m: &FourParamMotion| {
        fs.correspondences
            .iter()
            .zip(&e_union)
            .filter(|(f, &eu)| geometric_error(f, m) < p.zeta && eu >= p.zeta)
            .count()
    };
    let napsac = Napsac::new(fs, p.napsac_radius);

    let mut best: Option<(FourParamMotion, f64)> = None;
    let mut best_q = 0.0;
    let mut budget = p.k_max;
    let mut k = 0;
    while k < budget {
        k += 1;
        let (a, b) = napsac.sample(rng);
        let Ok(mut m) = fit_minimal_dlt(&fs.correspondences[a], &fs.correspondences[b]) else {
            continue;
        };
        let mut q = quality_with(&m, fs, &e_union, gamma);
        if q <= best_q {
            continue;
        }
        // Local optimization: graph-cut inliers, refit, repeat while improving.
        while q > best_q {
            best_q = q;
            best = Some((m, q));
            let inl = graph_cut_inliers(&m, fs, gamma, p.gc_lambda);
            if inl.len() < MINIMAL_SET {
                break;
            }
            let pts: Vec<_> = inl.iter().map(|&i| fs.correspondences[i]).collect();
            m = match refine_model_geometric(&m, &pts) {
                Ok(r) => r,
                Err(Error::NonConvergence { best, .. }) => best,
                Err(_) => break,
            };
            q = quality_with(&m, fs, &e_union, gamma);
        }
        let (bm, _) = best.expect("best set on improvement");
        let eta = independent(&bm) as f64 / fs.len() as f64;
        budget = required_iterations(eta, MINIMAL_SET, p.mu, p.k_max);
    }

    let (model, quality) = best.ok_or(Error::NoModel)?;
    if independent(&model) < MINIMAL_SET + 1 {
        return Err(Error::NoModel);
    }
    let inliers = (0..fs.len())
        .filter(|&i| geometric_error(&fs.correspondences[i], &model) < p.zeta)
        .collect();
    Ok(Proposal {
        model,
        inliers,
        quality,
        iterations: k,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PearlResult {
    pub labels: FeatureLabeling,
    pub pool: ModelPool,
    /// Energy after every labeling and refitting step of the optimization
    /// rounds; non-increasing.
    pub trace: Vec<f64>,
    /// Energy of the returned configuration, after small instances have been
    /// removed and the features relabeled.
    pub final_energy: f64,
}

const PEARL_MAX_ROUNDS: usize = 10;
const MIN_MEMBERS: usize = MINIMAL_SET + 1;

fn pearl_problem(models: &[FourParamMotion], fs: &FeatureSet, p: &Level1Params) -> MultiLabelProblem {
    let k = models.len() + 1;
    let oc2 = p.outlier_cost * p.outlier_cost;
    let mut prob = MultiLabelProblem::new(fs.len(), k);
    for (i, f) in fs.correspondences.iter().enumerate() {
        for (l, m) in models.iter().enumerate() {
            prob.set_unary(i, l, geometric_error(f, m).powi(2).min(oc2));
        }
        prob.set_unary(i, k - 1, oc2);
    }
    prob.edges = fs.edges().into_iter().map(|(i, j)| (i, j, p.pearl_lambda)).collect();
    for c in prob.label_costs.iter_mut().take(k - 1) {
        *c = p.pearl_beta;
    }
    prob.outlier_label = Some(k - 1);
    prob
}

fn members(labels: &[usize], l: usize) -> Vec<usize> {
    labels.iter().enumerate().filter(|(_, &x)| x == l).map(|(i, _)| i).collect()
}

/// Multi-instance optimization over the pool: alternating alpha-expansion
/// relabeling and per-model refitting, then removal of instances with fewer
/// than three members. Features farther than the outlier cost from their
/// model end up as outliers.
pub fn pearl_optimize(pool: &ModelPool, fs: &FeatureSet, p: &Level1Params) -> PearlResult {
    let mut models = pool.models.clone();
    let mut prob = pearl_problem(&models, fs, p);
    let mut labels = prob.unary_argmin();
    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    let oc2 = p.outlier_cost * p.outlier_cost;

    for _ in 0..PEARL_MAX_ROUNDS {
        let r = alpha_expansion(&prob, &labels);
        labels = r.labels;
        trace.push(r.energy);

        for l in 0..models.len() {
            let idx = members(&labels, l);
            if idx.len() < MINIMAL_SET {
                continue;
            }
            let pts: Vec<_> = idx.iter().map(|&i| fs.correspondences[i]).collect();
            let cand = match refine_model_geometric(&models[l], &pts) {
                Ok(m) => m,
                Err(Error::NonConvergence { best, .. }) => best,
                Err(_) => continue,
            };
            let cost = |m: &FourParamMotion| -> f64 {
                pts.iter().map(|f| geometric_error(f, m).powi(2).min(oc2)).sum()
            };
            if cost(&cand) < cost(&models[l]) {
                models[l] = cand;
            }
        }
        prob = pearl_problem(&models, fs, p);
        let e = prob.energy(&labels);
        trace.push(e);
        if prev - e < 1e-6 {
            break;
        }
        prev = e;
    }

    // Members whose error saturates the unary carry no evidence for their
    // model; they only follow their neighbors. Release them, then remove small
    // instances until the labeling is stable.
    loop {
        let outlier = models.len();
        for (i, l) in labels.iter_mut().enumerate() {
            if *l != outlier && geometric_error(&fs.correspondences[i], &models[*l]) >= p.outlier_cost {
                *l = outlier;
            }
        }
        let keep: Vec<usize> = (0..models.len())
            .filter(|&l| labels.iter().filter(|&&x| x == l).count() >= MIN_MEMBERS)
            .collect();
        if keep.len() == models.len() {
            break;
        }
        let mut remap = vec![keep.len(); outlier + 1];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        models = keep.iter().map(|&l| models[l]).collect();
        prob = pearl_problem(&models, fs, p);
        let init: Vec<usize> = labels.iter().map(|&l| remap[l]).collect();
        labels = alpha_expansion(&prob, &init).labels;
    }
    let final_energy = prob.energy(&labels);
    let outlier = models.len();
    let inliers = (0..models.len()).map(|l| members(&labels, l)).collect();
    PearlResult {
        labels: labels.iter().map(|&l| (l != outlier).then_some(l)).collect(),
        pool: ModelPool { models, inliers },
        trace,
        final_energy,
    }
}

/// Why the progressive loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The inlier bound for an unseen instance fell below the minimal set size plus one.
    Bound,
    /// No sample found enough support outside the compound instance.
    NoModel,
    /// Several proposals in a row were absorbed or removed by PEARL.
    Rejections,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Level1Result {
    pub labels: FeatureLabeling,
    pub pool: ModelPool,
    /// Number of proposals made.
    pub proposals: usize,
    /// Termination bound after each proposal.
    pub bounds: Vec<f64>,
    pub pearl_traces: Vec<Vec<f64>>,
    pub stop: StopReason,
}

/// Progressive multi-model fitting on a feature set.
pub fn progressive_fit<R: Rng + ?Sized>(fs: &FeatureSet, p: &Level1Params, rng: &mut R) -> Result<Level1Result> {
    p.validate()?;
    if fs.len() < MINIMAL_SET {
        return Err(Error::InsufficientFeatures {
            found: fs.len(),
            required: MINIMAL_SET,
        });
    }
    let mut pool = ModelPool::default();
    let mut labels = vec![None; fs.len()];
    let mut proposals = 0;
    let mut rejections = 0;
    let mut bounds = Vec::new();
    let mut pearl_traces = Vec::new();

    let stop = loop {
        let prop = match gc_ransac_propose(fs, &pool, p, rng) {
            Ok(prop) => prop,
            Err(Error::NoModel) => break StopReason::NoModel,
            Err(e) => return Err(e),
        };
        proposals += 1;
        let before = pool.len();
        let mut candidate = pool.clone();
        candidate.models.push(prop.model);
        candidate.inliers.push(prop.inliers);
        let r = pearl_optimize(&candidate, fs, p);
        pearl_traces.push(r.trace);
        pool = r.pool;
        labels = r.labels;

        if pool.len() <= before {
            rejections += 1;
        } else {
            rejections = 0;
        }
        let explained = fs
            .correspondences
            .iter()
            .filter(|f| pool.min_error(f) < p.zeta)
            .count();
        let bound = termination_bound(fs.len(), explained, MINIMAL_SET, proposals, p.mu);
        bounds.push(bound);
        if bound < (MINIMAL_SET + 1) as f64 {
            break StopReason::Bound;
        }
        if rejections >= p.max_rejections {
            break StopReason::Rejections;
        }
    };
    Ok(Level1Result {
        labels,
        pool,
        proposals,
        bounds,
        pearl_traces,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{Correspondence, Point2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fs_from(errors_dt: &[(Point2, Point2)]) -> FeatureSet {
        let c = errors_dt
            .iter()
            .map(|&(a, b)| Correspondence::new(a, b, 0.03))
            .collect();
        FeatureSet::new(c, 3)
    }

    #[test]
    fn required_iterations_examples() {
        assert_eq!(required_iterations(1.0, 2, 0.95, 10_000), 1);
        assert_eq!(required_iterations(0.5, 2, 0.95, 10_000), 11);
        assert_eq!(required_iterations(0.0, 2, 0.95, 10_000), 10_000);
        assert_eq!(required_iterations(1e-6, 2, 0.95, 500), 500);
    }

    #[test]
    fn termination_bound_examples() {
        assert_eq!(termination_bound(100, 100, 2, 5, 0.95), 0.0);
        let b = termination_bound(100, 80, 2, 10, 0.95);
        let direct = 20.0 * (1.0 - 0.05f64.powf(0.1)).sqrt();
        assert!((b - direct).abs() < 1e-12);
        assert!((b - 10.17).abs() < 0.02);
        assert!(termination_bound(100, 80, 2, 100, 0.95) < b);
    }

    #[test]
    fn quality_examples() {
        let zeta = 2.0;
        let gamma = 1.5 * zeta;
        let z = Point2::zeros();
        let fs = fs_from(&[
            (z, z),
            (Point2::new(10.0, 0.0), Point2::new(10.0 + gamma, 0.0)),
            (Point2::new(0.0, 10.0), Point2::new(0.0, 10.0 + 2.0 * gamma)),
        ]);
        let q = msac_quality(&FourParamMotion::ZERO, &ModelPool::default(), &fs, zeta);
        assert!((q - 1.0).abs() < 1e-12);

        let exact = fs_from(&[(z, z), (Point2::new(5.0, 5.0), Point2::new(5.0, 5.0))]);
        assert_eq!(msac_quality(&FourParamMotion::ZERO, &ModelPool::default(), &exact, zeta), 2.0);
        let compound = ModelPool::from_models(vec![FourParamMotion::ZERO]);
        assert_eq!(msac_quality(&FourParamMotion::ZERO, &compound, &exact, zeta), 0.0);
    }

    #[test]
    fn napsac_pair_and_fallback() {
        let fs = fs_from(&[
            (Point2::new(0.0, 0.0), Point2::new(0.0, 0.0)),
            (Point2::new(5.0, 0.0), Point2::new(5.0, 0.0)),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let (a, b) = napsac_sample(&fs, &mut rng, 30.0);
            assert_ne!(a, b);
            assert!(a < 2 && b < 2);
        }
        // Isolated feature: falls back to a global pick.
        let far = fs_from(&[
            (Point2::new(0.0, 0.0), Point2::new(0.0, 0.0)),
            (Point2::new(500.0, 0.0), Point2::new(500.0, 0.0)),
        ]);
        let (a, b) = napsac_sample(&far, &mut rng, 30.0);
        assert_ne!(a, b);
    }

    #[test]
    fn proposal_needs_independent_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = FourParamMotion::new(50.0, 10.0, 0.1, 0.0);
        let c: Vec<_> = (0..30)
            .map(|i| Correspondence::generated(Point2::new(i as f64 * 4.0 - 60.0, (i % 5) as f64 * 9.0), &m, 0.03))
            .collect();
        let fs = FeatureSet::new(c, 6);
        let compound = ModelPool::from_models(vec![m]);
        let r = gc_ransac_propose(&fs, &compound, &Level1Params::default(), &mut rng);
        assert_eq!(r, Err(Error::NoModel));
    }
}
