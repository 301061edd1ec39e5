//! Parametric image-plane motion models.
//!
//! A [`FourParamMotion`] describes the velocity field
//!
//! ```text
//! v(x) = (m_u, m_v) + (1 + m_s) R(m_theta) x - x
//! ```
//!
//! and a point is transported over an interval `dt` as `x + dt * v(x)`. All
//! points handed to this module are expressed relative to the rotation center
//! (the caller decides where that is; the pipeline uses the sensor center).

use nalgebra::{Matrix2, Matrix4, Vector4};

use crate::error::{Error, Result};

pub type Point2 = nalgebra::Vector2<f64>;

/// Minimal sample size of the two-correspondence solver.
pub const MINIMAL_SET: usize = 2;

/// Translation (px/s), scale rate and in-plane rotation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FourParamMotion {
    pub m_u: f64,
    pub m_v: f64,
    pub m_s: f64,
    pub m_theta: f64,
}

impl FourParamMotion {
    pub const ZERO: Self = Self {
        m_u: 0.0,
        m_v: 0.0,
        m_s: 0.0,
        m_theta: 0.0,
    };

    pub const fn new(m_u: f64, m_v: f64, m_s: f64, m_theta: f64) -> Self {
        Self {
            m_u,
            m_v,
            m_s,
            m_theta,
        }
    }

    pub const fn translation(m_u: f64, m_v: f64) -> Self {
        Self::new(m_u, m_v, 0.0, 0.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.m_u, self.m_v, self.m_s, self.m_theta]
    }

    pub fn from_array(p: [f64; 4]) -> Self {
        Self::new(p[0], p[1], p[2], p[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Linear part `(1 + m_s) R(m_theta) - I` of the velocity field.
    pub fn linear_part(&self) -> Matrix2<f64> {
        let (s, c) = self.m_theta.sin_cos();
        let k = 1.0 + self.m_s;
        Matrix2::new(k * c - 1.0, -k * s, k * s, k * c - 1.0)
    }

    /// Image-plane velocity at `x` (pixels per second).
    pub fn velocity(&self, x: Point2) -> Point2 {
        Point2::new(self.m_u, self.m_v) + self.linear_part() * x
    }

    /// Transports `x` over `dt` seconds. The displacement is linear in `dt`.
    pub fn warp_point(&self, x: Point2, dt: f64) -> Point2 {
        x + self.velocity(x) * dt
    }
}

/// Pure 2D flow; the four-parameter model with zero scale and rotation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowMotion {
    pub m_u: f64,
    pub m_v: f64,
}

impl FlowMotion {
    pub fn warp_point(&self, x: Point2, dt: f64) -> Point2 {
        x + Point2::new(self.m_u, self.m_v) * dt
    }
}

impl From<FlowMotion> for FourParamMotion {
    fn from(f: FlowMotion) -> Self {
        FourParamMotion::translation(f.m_u, f.m_v)
    }
}

/// A tracked feature `x_prev` at `t - dt` and its match `x_curr` at `t`,
/// both relative to the rotation center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub x_prev: Point2,
    pub x_curr: Point2,
    pub dt: f64,
}

impl Correspondence {
    pub fn new(x_prev: Point2, x_curr: Point2, dt: f64) -> Self {
        Self { x_prev, x_curr, dt }
    }

    /// Builds the correspondence that `m` produces exactly from `x_prev`.
    pub fn generated(x_prev: Point2, m: &FourParamMotion, dt: f64) -> Self {
        Self::new(x_prev, m.warp_point(x_prev, dt), dt)
    }
}

pub fn warp_point(x: Point2, m: &FourParamMotion, dt: f64) -> Point2 {
    m.warp_point(x, dt)
}

/// Reprojection distance `|x_curr - W(x_prev; m)|`.
pub fn geometric_error(f: &Correspondence, m: &FourParamMotion) -> f64 {
    (f.x_curr - m.warp_point(f.x_prev, f.dt)).norm()
}

const DLT_MAX_CONDITION: f64 = 1e8;

/// Exact four-parameter model through two correspondences.
///
/// The warp is linear in `(m_u, m_v, a, b)` with `a = (1+m_s) cos m_theta` and
/// `b = (1+m_s) sin m_theta`; the 4x4 system is solved directly and `m_s`,
/// `m_theta` are read off the polar form of `(a, b)`.
pub fn fit_minimal_dlt(f1: &Correspondence, f2: &Correspondence) -> Result<FourParamMotion> {
    if (f1.x_prev - f2.x_prev).norm() < 1e-6 {
        return Err(Error::DegenerateSample("coincident points"));
    }
    if !(f1.dt > 0.0) || (f1.dt - f2.dt).abs() > 1e-12 * f1.dt.max(f2.dt) {
        return Err(Error::DegenerateSample("correspondences must share a positive dt"));
    }
    // Canonical ordering makes the result independent of argument order.
    let (f1, f2) = if (f1.x_prev.x, f1.x_prev.y) <= (f2.x_prev.x, f2.x_prev.y) {
        (f1, f2)
    } else {
        (f2, f1)
    };

    let mut a = Matrix4::zeros();
    let mut rhs = Vector4::zeros();
    for (k, f) in [f1, f2].into_iter().enumerate() {
        let p = f.x_prev;
        let y = p + (f.x_curr - f.x_prev) / f.dt;
        let r = 2 * k;
        a[(r, 0)] = 1.0;
        a[(r, 2)] = p.x;
        a[(r, 3)] = -p.y;
        rhs[r] = y.x;
        a[(r + 1, 1)] = 1.0;
        a[(r + 1, 2)] = p.y;
        a[(r + 1, 3)] = p.x;
        rhs[r + 1] = y.y;
    }

    let sv = a.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 0.0 || smax / smin > DLT_MAX_CONDITION {
        return Err(Error::DegenerateSample("rank-deficient system"));
    }
    let u = a
        .lu()
        .solve(&rhs)
        .ok_or(Error::DegenerateSample("singular system"))?;

    let scale = u[2].hypot(u[3]);
    Ok(FourParamMotion::new(u[0], u[1], scale - 1.0, u[3].atan2(u[2])))
}

/// Sum of squared geometric errors.
pub fn sum_squared_error(fs: &[Correspondence], m: &FourParamMotion) -> f64 {
    fs.iter()
        .map(|f| (f.x_curr - m.warp_point(f.x_prev, f.dt)).norm_squared())
        .sum()
}

const LM_MAX_ITERS: usize = 200;
const LM_MAX_REJECTS: usize = 20;

/// Levenberg-Marquardt refinement of `m0` on `inliers`, minimizing the sum of
/// squared geometric errors. The returned model never has a higher cost than
/// `m0`. If 20 consecutive damping increases fail to reduce the cost, the
/// best model so far is returned inside [`Error::NonConvergence`].
pub fn refine_model_geometric(
    m0: &FourParamMotion,
    inliers: &[Correspondence],
) -> Result<FourParamMotion> {
    if inliers.len() < MINIMAL_SET {
        return Err(Error::DegenerateSample("fewer than two inliers"));
    }
    let mut params = Vector4::from(m0.to_array());
    let mut cost = sum_squared_error(inliers, m0);
    let mut lambda = 1e-3;
    let mut rejects = 0;

    for _ in 0..LM_MAX_ITERS {
        if cost == 0.0 {
            break;
        }
        let m = FourParamMotion::from_array(params.into());
        let (jtj, jtr) = normal_equations(inliers, &m);
        if jtr.amax() <= 1e-15 * (1.0 + cost) {
            break;
        }

        let mut damped = jtj;
        let max_diag = jtj.diagonal().max().max(1e-300);
        for i in 0..4 {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-9 * max_diag);
        }
        let step = match damped.cholesky() {
            Some(ch) => ch.solve(&(-jtr)),
            None => {
                lambda *= 4.0;
                rejects += 1;
                if rejects >= LM_MAX_REJECTS {
                    return Err(Error::NonConvergence {
                        best: FourParamMotion::from_array(params.into()),
                        cost,
                    });
                }
                continue;
            }
        };
        if step.norm() <= 1e-13 * (params.norm() + 1e-13) {
            break;
        }

        let candidate = FourParamMotion::from_array((params + step).into());
        let new_cost = sum_squared_error(inliers, &candidate);
        if new_cost < cost {
            let rel = (cost - new_cost) / cost;
            params += step;
            cost = new_cost;
            lambda = (lambda / 3.0).max(1e-12);
            rejects = 0;
            if rel < 1e-14 {
                break;
            }
        } else {
            lambda *= 4.0;
            rejects += 1;
            if rejects >= LM_MAX_REJECTS {
                return Err(Error::NonConvergence {
                    best: FourParamMotion::from_array(params.into()),
                    cost,
                });
            }
        }
    }
    Ok(FourParamMotion::from_array(params.into()))
}

fn normal_equations(fs: &[Correspondence], m: &FourParamMotion) -> (Matrix4<f64>, Vector4<f64>) {
    let (s, c) = m.m_theta.sin_cos();
    let k = 1.0 + m.m_s;
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    for f in fs {
        let p = f.x_prev;
        let r = m.warp_point(p, f.dt) - f.x_curr;
        let rp = Point2::new(c * p.x - s * p.y, s * p.x + c * p.y);
        let drp = Point2::new(-s * p.x - c * p.y, c * p.x - s * p.y);
        // Columns: d/dm_u, d/dm_v, d/dm_s, d/dm_theta.
        let jx = Vector4::new(f.dt, 0.0, f.dt * rp.x, f.dt * k * drp.x);
        let jy = Vector4::new(0.0, f.dt, f.dt * rp.y, f.dt * k * drp.y);
        jtj += jx * jx.transpose() + jy * jy.transpose();
        jtr += jx * r.x + jy * r.y;
    }
    (jtj, jtr)
}

/// Mean distance between the endpoints reached by two models from the same
/// start points over `dt`.
pub fn endpoint_error(a: &FourParamMotion, b: &FourParamMotion, points: &[Point2], dt: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points
        .iter()
        .map(|&p| (a.warp_point(p, dt) - b.warp_point(p, dt)).norm())
        .sum::<f64>()
        / points.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    #[test]
    fn warp_examples() {
        assert_eq!(warp_point(p(5.0, 5.0), &FourParamMotion::ZERO, 1.0), p(5.0, 5.0));
        assert_eq!(
            warp_point(p(5.0, 5.0), &FourParamMotion::translation(2.0, -4.0), 0.5),
            p(6.0, 3.0)
        );
        let q = warp_point(p(1.0, 0.0), &FourParamMotion::new(0.0, 0.0, 0.0, FRAC_PI_2), 1.0);
        assert_abs_diff_eq!(q.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.y, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn dlt_recovers_generating_model() {
        let m = FourParamMotion::new(3.0, -1.0, 0.1, 0.05);
        let f1 = Correspondence::generated(p(10.0, 10.0), &m, 0.03);
        let f2 = Correspondence::generated(p(50.0, 80.0), &m, 0.03);
        let fit = fit_minimal_dlt(&f1, &f2).unwrap();
        for (a, b) in fit.to_array().iter().zip(m.to_array()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn dlt_static_and_degenerate() {
        let f1 = Correspondence::new(p(3.0, 4.0), p(3.0, 4.0), 0.01);
        let f2 = Correspondence::new(p(-7.0, 2.0), p(-7.0, 2.0), 0.01);
        let fit = fit_minimal_dlt(&f1, &f2).unwrap();
        for v in fit.to_array() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        let f3 = Correspondence::new(p(3.0, 4.0), p(5.0, 4.0), 0.01);
        assert!(matches!(
            fit_minimal_dlt(&f1, &f3),
            Err(Error::DegenerateSample(_))
        ));
    }

    #[test]
    fn geometric_error_examples() {
        let f = Correspondence::new(p(0.0, 0.0), p(3.0, 4.0), 0.7);
        assert_eq!(geometric_error(&f, &FourParamMotion::ZERO), 5.0);
        let m = FourParamMotion::new(20.0, 5.0, 0.2, -0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mean: f64 = (0..100)
            .map(|_| {
                let x = p(rng.gen_range(-120.0..120.0), rng.gen_range(-90.0..90.0));
                geometric_error(&Correspondence::generated(x, &m, 0.03), &m)
            })
            .sum::<f64>()
            / 100.0;
        assert!(mean < 1e-9);
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point2> {
        (0..n)
            .map(|_| p(rng.gen_range(-120.0..120.0), rng.gen_range(-90.0..90.0)))
            .collect()
    }

    #[test]
    fn refine_from_perturbed_start() {
        let m_true = FourParamMotion::new(40.0, -25.0, 0.3, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fs: Vec<_> = random_points(&mut rng, 40)
            .into_iter()
            .map(|x| Correspondence::generated(x, &m_true, 0.03))
            .collect();
        let m0 = FourParamMotion::from_array(m_true.to_array().map(|v| v * 1.1));
        let m = refine_model_geometric(&m0, &fs).unwrap();
        let rms = (sum_squared_error(&fs, &m) / fs.len() as f64).sqrt();
        assert!(rms < 1e-6, "rms {rms}");
    }

    #[test]
    fn refine_fixed_point() {
        let m_true = FourParamMotion::new(10.0, 5.0, -0.1, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fs: Vec<_> = random_points(&mut rng, 20)
            .into_iter()
            .map(|x| Correspondence::generated(x, &m_true, 0.03))
            .collect();
        let c0 = sum_squared_error(&fs, &m_true);
        let m = refine_model_geometric(&m_true, &fs).unwrap();
        assert!((sum_squared_error(&fs, &m) - c0).abs() <= 1e-12);
    }

    #[test]
    fn refine_with_noise() {
        let m_true = FourParamMotion::new(60.0, 30.0, 0.2, -0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        // 0.5 px RMS displacement noise, split evenly over both axes.
        let normal = rand_distr_normal(&mut rng, 50 * 2, 0.5 / 2f64.sqrt());
        let fs: Vec<_> = random_points(&mut rng, 50)
            .into_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut f = Correspondence::generated(x, &m_true, 0.03);
                f.x_curr += p(normal[2 * i], normal[2 * i + 1]);
                f
            })
            .collect();
        let m = refine_model_geometric(&FourParamMotion::ZERO, &fs).unwrap();
        let rms = (sum_squared_error(&fs, &m) / fs.len() as f64).sqrt();
        assert!(rms <= 0.6, "rms {rms}");
        assert!(sum_squared_error(&fs, &m) <= sum_squared_error(&fs, &m_true));
    }

    // Box-Muller; keeps the test free of extra distribution crates.
    fn rand_distr_normal(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen();
                sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect()
    }

    #[test]
    fn refine_rejects_too_few() {
        let f = Correspondence::new(p(0.0, 0.0), p(1.0, 1.0), 0.01);
        assert!(refine_model_geometric(&FourParamMotion::ZERO, &[f]).is_err());
    }

    fn arb_motion() -> impl Strategy<Value = FourParamMotion> {
        (-300.0..300.0f64, -300.0..300.0f64, -0.8..0.8f64, -1.5..1.5f64)
            .prop_map(|(u, v, s, t)| FourParamMotion::new(u, v, s, t))
    }

    fn arb_point() -> impl Strategy<Value = Point2> {
        (-170.0..170.0f64, -130.0..130.0f64).prop_map(|(x, y)| p(x, y))
    }

    proptest! {
        #[test]
        fn dlt_round_trip(m in arb_motion(), a in arb_point(), b in arb_point(), dt in 0.005..0.05f64) {
            prop_assume!((a - b).norm() > 5.0);
            let f1 = Correspondence::generated(a, &m, dt);
            let f2 = Correspondence::generated(b, &m, dt);
            let fit = fit_minimal_dlt(&f1, &f2).unwrap();
            let swapped = fit_minimal_dlt(&f2, &f1).unwrap();
            prop_assert_eq!(fit, swapped);
            for (x, y) in fit.to_array().iter().zip(m.to_array()) {
                prop_assert!((x - y).abs() < 1e-6 * (1.0 + y.abs()), "{:?} vs {:?}", fit, m);
            }
        }

        #[test]
        fn zero_motion_is_identity(x in arb_point(), dt in 0.0..10.0f64) {
            prop_assert_eq!(FourParamMotion::ZERO.warp_point(x, dt), x);
        }

        #[test]
        fn flow_matches_embedded(u in -500.0..500.0f64, v in -500.0..500.0f64, x in arb_point(), dt in 0.0..1.0f64) {
            let flow = FlowMotion { m_u: u, m_v: v };
            prop_assert_eq!(flow.warp_point(x, dt), FourParamMotion::from(flow).warp_point(x, dt));
        }

        #[test]
        fn refine_never_increases_cost(m in arb_motion(), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fs: Vec<_> = random_points(&mut rng, 12)
                .into_iter()
                .map(|x| {
                    let mut f = Correspondence::generated(x, &m, 0.03);
                    f.x_curr += p(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
                    f
                })
                .collect();
            let start = FourParamMotion::ZERO;
            let refined = match refine_model_geometric(&start, &fs) {
                Ok(r) => r,
                Err(Error::NonConvergence { best, .. }) => best,
                Err(e) => panic!("{e}"),
            };
            prop_assert!(sum_squared_error(&fs, &refined) <= sum_squared_error(&fs, &start));
        }
    }
}
