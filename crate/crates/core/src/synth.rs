//! Synthetic event scenes with ground truth.
//!
//! Every layer (the background and each object) is a cloud of random texture
//! points moving with the layer's motion. A point fires an event each time it
//! has travelled one more emission step since its previous event; the step is
//! one pixel at the nominal contrast threshold 0.2 and scales with the
//! threshold. Objects occlude the background and earlier objects.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event::{sensor_center, Event, EventWindow, Polarity};
use crate::motion::{FourParamMotion, Point2};
use crate::par;

pub const NOMINAL_CONTRAST_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Rect { width: f64, height: f64 },
    Disk { radius: f64 },
}

impl Shape {
    /// Containment test for an offset from the shape center.
    pub fn contains(&self, d: Point2) -> bool {
        match *self {
            Shape::Rect { width, height } => d.x.abs() <= width / 2.0 && d.y.abs() <= height / 2.0,
            Shape::Disk { radius } => d.norm_squared() <= radius * radius,
        }
    }

    fn half_extent(&self) -> Point2 {
        match *self {
            Shape::Rect { width, height } => Point2::new(width / 2.0, height / 2.0),
            Shape::Disk { radius } => Point2::new(radius, radius),
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Shape::Rect { width, height } => width * height,
            Shape::Disk { radius } => std::f64::consts::PI * radius * radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Shape center at t = 0, pixel coordinates.
    pub center: Point2,
    /// Texture points per square pixel.
    pub density: f64,
    pub motion: FourParamMotion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSpec {
    pub density: f64,
    pub motion: FourParamMotion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    /// Seconds.
    pub duration: f64,
    pub background: BackgroundSpec,
    pub objects: Vec<ObjectSpec>,
    pub contrast_threshold: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 240,
            height: 180,
            duration: 0.03,
            background: BackgroundSpec {
                density: 0.02,
                motion: FourParamMotion::ZERO,
            },
            objects: Vec::new(),
            contrast_threshold: NOMINAL_CONTRAST_THRESHOLD,
            seed: 0,
        }
    }
}

/// Per-event labels (0 = background, k = object k), the generating motions
/// and per-label pixel masks at the end of the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub labels: Vec<u32>,
    pub motions: Vec<FourParamMotion>,
    pub masks: Vec<Vec<bool>>,
    /// Texture point that fired each event.
    pub tracks: Vec<u32>,
}

impl GroundTruth {
    pub fn num_labels(&self) -> usize {
        self.motions.len()
    }
}

struct Layer {
    label: u32,
    motion: FourParamMotion,
    points: Vec<Point2>,
}

/// Renders `spec` into one event window spanning `[0, duration]`.
pub fn generate_scene(spec: &SceneSpec) -> Result<(EventWindow, GroundTruth)> {
    validate(spec)?;
    let center = sensor_center(spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let step = spec.contrast_threshold / NOMINAL_CONTRAST_THRESHOLD;

    let mut layers = Vec::with_capacity(1 + spec.objects.len());
    // Background texture covers everything that can enter the sensor.
    let margin = max_travel(&spec.background.motion, spec, center) + 3.0;
    let (x0, x1) = (-center.x - margin, center.x + margin);
    let (y0, y1) = (-center.y - margin, center.y + margin);
    let n_bg = poisson_round(spec.background.density * (x1 - x0) * (y1 - y0));
    let bg_points = (0..n_bg)
        .map(|_| Point2::new(rng.gen_range(x0..x1), rng.gen_range(y0..y1)))
        .collect();
    layers.push(Layer {
        label: 0,
        motion: spec.background.motion,
        points: bg_points,
    });
    for (k, obj) in spec.objects.iter().enumerate() {
        let n = poisson_round(obj.density * obj.shape.area());
        let h = obj.shape.half_extent();
        let mut pts = Vec::with_capacity(n);
        while pts.len() < n {
            let d = Point2::new(rng.gen_range(-h.x..=h.x), rng.gen_range(-h.y..=h.y));
            if obj.shape.contains(d) {
                pts.push(obj.center + d - center);
            }
        }
        layers.push(Layer {
            label: k as u32 + 1,
            motion: obj.motion,
            points: pts,
        });
    }

    let duration_us = (spec.duration * 1e6).round() as u64;
    let mut next_track = 0u32;
    let mut records: Vec<(u64, u32, u32, Event)> = Vec::new();
    for layer in &layers {
        let base = next_track;
        next_track += layer.points.len() as u32;
        let per_point = par::map_range(layer.points.len(), |i| {
            let x0 = layer.points[i];
            let v = layer.motion.velocity(x0);
            let speed = v.norm();
            let mut out = Vec::new();
            if speed <= 0.0 {
                return out;
            }
            let track = base + i as u32;
            for k in 1.. {
                let t = k as f64 * step / speed;
                if t > spec.duration + 1e-12 {
                    break;
                }
                let pos = x0 + v * t + center;
                let (px, py) = (pos.x.round(), pos.y.round());
                if px < 0.0 || py < 0.0 || px >= spec.width as f64 || py >= spec.height as f64 {
                    continue;
                }
                let pixel = Point2::new(px, py);
                if occluded(spec, layer.label, pixel - center, t) {
                    continue;
                }
                let ts = ((t * 1e6).round() as u64).min(duration_us);
                let p = if (track + k as u32) % 2 == 0 {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                };
                out.push((ts, layer.label, track, Event::new(px as u32, py as u32, ts, p)));
            }
            out
        });
        records.extend(per_point.into_iter().flatten());
    }
    if records.is_empty() {
        return Err(Error::InvalidSpec("scene produces no events".into()));
    }
    records.sort_by_key(|r| (r.0, r.1, r.2));

    let labels = records.iter().map(|r| r.1).collect();
    let tracks = records.iter().map(|r| r.2).collect();
    let events = records.into_iter().map(|r| r.3).collect();
    let window = EventWindow::new(events, 0, duration_us, spec.width, spec.height)?;

    let mut motions = vec![spec.background.motion];
    motions.extend(spec.objects.iter().map(|o| o.motion));
    let masks = end_masks(spec, center);
    Ok((
        window,
        GroundTruth {
            labels,
            motions,
            masks,
            tracks,
        },
    ))
}

fn validate(spec: &SceneSpec) -> Result<()> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::InvalidSpec("sensor size must be positive".into()));
    }
    if !(spec.duration > 0.0) {
        return Err(Error::InvalidSpec("duration must be positive".into()));
    }
    if !(spec.contrast_threshold > 0.0) {
        return Err(Error::InvalidSpec("contrast threshold must be positive".into()));
    }
    if !(spec.background.density > 0.0) || !spec.background.motion.is_finite() {
        return Err(Error::InvalidSpec("background needs positive density and finite motion".into()));
    }
    for (k, o) in spec.objects.iter().enumerate() {
        if !(o.density > 0.0) || !o.motion.is_finite() {
            return Err(Error::InvalidSpec(format!("object {k}: bad density or motion")));
        }
        let h = o.shape.half_extent();
        if !(h.x > 0.0 && h.y > 0.0) {
            return Err(Error::InvalidSpec(format!("object {k}: empty shape")));
        }
        let (w, ht) = (spec.width as f64 - 1.0, spec.height as f64 - 1.0);
        if o.center.x - h.x < 0.0 || o.center.y - h.y < 0.0 || o.center.x + h.x > w || o.center.y + h.y > ht {
            return Err(Error::InvalidSpec(format!("object {k} lies outside the sensor")));
        }
    }
    let all_static = std::iter::once(&spec.background.motion)
        .chain(spec.objects.iter().map(|o| &o.motion))
        .all(|m| m.to_array().iter().all(|&v| v == 0.0));
    if all_static {
        return Err(Error::InvalidSpec("all layers are static; no events would be produced".into()));
    }
    Ok(())
}

fn poisson_round(x: f64) -> usize {
    x.round().max(0.0) as usize
}

fn max_travel(m: &FourParamMotion, spec: &SceneSpec, center: Point2) -> f64 {
    let corners = [
        Point2::new(-center.x, -center.y),
        Point2::new(center.x, -center.y),
        Point2::new(-center.x, center.y),
        Point2::new(center.x, center.y),
    ];
    corners
        .iter()
        .map(|&c| m.velocity(c).norm() * spec.duration)
        .fold(0.0, f64::max)
}

/// Start position of the trajectory that is at `p` (centered) at time `t`.
fn trajectory_origin(m: &FourParamMotion, p: Point2, t: f64) -> Option<Point2> {
    // p = x0 + t * (trans + A x0)  =>  (I + tA) x0 = p - t * trans
    let trans = Point2::new(m.m_u, m.m_v);
    let a = m.linear_part();
    let sys = nalgebra::Matrix2::identity() + a * t;
    sys.try_inverse().map(|inv| inv * (p - trans * t))
}

/// Whether object `k` (1-based) covers the centered position `p` at time `t`.
pub(crate) fn object_covers(spec: &SceneSpec, k: usize, p: Point2, t: f64) -> bool {
    let o = &spec.objects[k - 1];
    let center = sensor_center(spec.width, spec.height);
    match trajectory_origin(&o.motion, p, t) {
        Some(x0) => o.shape.contains(x0 + center - o.center),
        None => false,
    }
}

fn occluded(spec: &SceneSpec, label: u32, p: Point2, t: f64) -> bool {
    (label as usize + 1..=spec.objects.len()).any(|k| object_covers(spec, k, p, t))
}

fn end_masks(spec: &SceneSpec, center: Point2) -> Vec<Vec<bool>> {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let n = spec.objects.len() + 1;
    let mut masks = vec![vec![false; w * h]; n];
    for y in 0..h {
        for x in 0..w {
            let p = Point2::new(x as f64, y as f64) - center;
            let top = (1..n)
                .rev()
                .find(|&k| object_covers(spec, k, p, spec.duration))
                .unwrap_or(0);
            masks[top][y * w + x] = true;
        }
    }
    masks
}
