//! Event containers, per-event warping and the image of warped events (IWE).

use crate::error::{Error, Result};
use crate::motion::{FourParamMotion, Point2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Negative => -1,
            Polarity::Positive => 1,
        }
    }
}

/// A single brightness-change event. `t` is in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub x: u32,
    pub y: u32,
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u32, y: u32, t: u64, p: Polarity) -> Self {
        Self { x, y, t, p }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x as f64, self.y as f64)
    }
}

/// Time-sorted events within `[t_start, t_end]` on a `width x height` sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct EventWindow {
    pub events: Vec<Event>,
    pub t_start: u64,
    pub t_end: u64,
    pub width: u32,
    pub height: u32,
}

impl EventWindow {
    /// Validates sortedness, the time range and sensor bounds.
    pub fn new(events: Vec<Event>, t_start: u64, t_end: u64, width: u32, height: u32) -> Result<Self> {
        if t_end <= t_start {
            return Err(Error::Config(format!(
                "window must have positive duration ({t_start}..{t_end})"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::Config("sensor must have non-zero size".into()));
        }
        for (i, e) in events.iter().enumerate() {
            if e.t < t_start || e.t > t_end {
                return Err(Error::Config(format!(
                    "event {i} at t={} outside window {t_start}..{t_end}",
                    e.t
                )));
            }
            if i > 0 && events[i - 1].t > e.t {
                return Err(Error::Config(format!("event {i} breaks time ordering")));
            }
            if e.x >= width || e.y >= height {
                return Err(Error::Config(format!(
                    "event {i} at ({}, {}) outside {width}x{height}",
                    e.x, e.y
                )));
            }
        }
        Ok(Self {
            events,
            t_start,
            t_end,
            width,
            height,
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Window length in seconds.
    pub fn duration_s(&self) -> f64 {
        (self.t_end - self.t_start) as f64 * 1e-6
    }

    /// Rotation center used by the motion models: the middle of the sensor.
    pub fn center(&self) -> Point2 {
        sensor_center(self.width, self.height)
    }

    /// Splits at `t_mid`: events with `t < t_mid` go left. Both halves keep
    /// the sensor geometry.
    pub fn split_at(&self, t_mid: u64) -> (EventWindow, EventWindow) {
        let k = self.events.partition_point(|e| e.t < t_mid);
        let left = EventWindow {
            events: self.events[..k].to_vec(),
            t_start: self.t_start,
            t_end: t_mid,
            width: self.width,
            height: self.height,
        };
        let right = EventWindow {
            events: self.events[k..].to_vec(),
            t_start: t_mid,
            t_end: self.t_end,
            width: self.width,
            height: self.height,
        };
        (left, right)
    }
}

pub fn sensor_center(width: u32, height: u32) -> Point2 {
    Point2::new((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

/// Dense accumulator image. `dropped` is the splat mass that fell outside the
/// sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Iwe {
    pub pixels: Vec<f64>,
    pub width: u32,
    pub height: u32,
    pub t_ref: u64,
    pub dropped: f64,
}

impl Iwe {
    pub fn zeros(width: u32, height: u32, t_ref: u64) -> Self {
        Self {
            pixels: vec![0.0; width as usize * height as usize],
            width,
            height,
            t_ref,
            dropped: 0.0,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width as usize + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let w = self.width as usize;
        self.pixels[y * w + x] = v;
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }

    /// Bilinear lookup; zero outside the image.
    pub fn sample_bilinear(&self, p: Point2) -> f64 {
        let (w, h) = (self.width as i64, self.height as i64);
        let x0 = p.x.floor();
        let y0 = p.y.floor();
        let (fx, fy) = (p.x - x0, p.y - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let at = |x: i64, y: i64| {
            if x < 0 || y < 0 || x >= w || y >= h {
                0.0
            } else {
                self.pixels[(y * w + x) as usize]
            }
        };
        if !p.x.is_finite() || !p.y.is_finite() {
            return 0.0;
        }
        (1.0 - fx) * (1.0 - fy) * at(x0, y0)
            + fx * (1.0 - fy) * at(x0 + 1, y0)
            + (1.0 - fx) * fy * at(x0, y0 + 1)
            + fx * fy * at(x0 + 1, y0 + 1)
    }

    /// Adds one unit of mass at `p` with a 5x5 truncated Gaussian of width
    /// `eps`, renormalized to unit sum.
    pub fn splat(&mut self, p: Point2, eps: f64) {
        if !p.x.is_finite() || !p.y.is_finite() {
            self.dropped += 1.0;
            return;
        }
        let cx = p.x.round();
        let cy = p.y.round();
        // Far outside: the whole kernel misses the sensor.
        if cx < -2.0 || cy < -2.0 || cx > self.width as f64 + 1.0 || cy > self.height as f64 + 1.0 {
            self.dropped += 1.0;
            return;
        }
        let inv = 1.0 / (2.0 * eps * eps);
        let mut gx = [0.0; 5];
        let mut gy = [0.0; 5];
        for k in 0..5 {
            let o = k as f64 - 2.0;
            gx[k] = (-(cx + o - p.x).powi(2) * inv).exp();
            gy[k] = (-(cy + o - p.y).powi(2) * inv).exp();
        }
        let norm = gx.iter().sum::<f64>() * gy.iter().sum::<f64>();
        let (w, h) = (self.width as i64, self.height as i64);
        let (bx, by) = (cx as i64 - 2, cy as i64 - 2);
        let mut inside = 0.0;
        for (j, wy) in gy.iter().enumerate() {
            let y = by + j as i64;
            if y < 0 || y >= h {
                continue;
            }
            let row = (y * w) as usize;
            for (i, wx) in gx.iter().enumerate() {
                let x = bx + i as i64;
                if x < 0 || x >= w {
                    continue;
                }
                let v = wx * wy / norm;
                self.pixels[row + x as usize] += v;
                inside += v;
            }
        }
        self.dropped += 1.0 - inside;
    }
}

/// Position of `e` transported to `t_ref` along `m`, rotating about `center`.
pub fn warp_event(e: &Event, m: &FourParamMotion, t_ref: u64, center: Point2) -> Point2 {
    let dt = (t_ref as f64 - e.t as f64) * 1e-6;
    m.warp_point(e.position() - center, dt) + center
}

/// IWE of the whole window warped by `m` to `t_ref`. Polarity is ignored.
pub fn accumulate_iwe(w: &EventWindow, m: &FourParamMotion, t_ref: u64, smoothing_eps: f64) -> Iwe {
    accumulate_events(w.events.iter(), w.width, w.height, m, t_ref, w.center(), smoothing_eps)
}

/// IWE over an arbitrary subset of events.
pub fn accumulate_events<'a>(
    events: impl IntoIterator<Item = &'a Event>,
    width: u32,
    height: u32,
    m: &FourParamMotion,
    t_ref: u64,
    center: Point2,
    smoothing_eps: f64,
) -> Iwe {
    assert!(smoothing_eps > 0.0, "smoothing width must be positive");
    let mut iwe = Iwe::zeros(width, height, t_ref);
    for e in events {
        iwe.splat(warp_event(e, m, t_ref, center), smoothing_eps);
    }
    iwe
}

/// Pixel-value variance of the IWE.
pub fn contrast_variance(i: &Iwe) -> f64 {
    let n = i.pixels.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mean = i.sum() / n;
    i.pixels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}
