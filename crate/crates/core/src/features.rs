//! Shi-Tomasi corners and pyramidal Lucas-Kanade tracking on raw IWEs.

use crate::error::{Error, Result};
use crate::event::{accumulate_iwe, EventWindow, Iwe};
use crate::motion::{Correspondence, FourParamMotion, Point2, MINIMAL_SET};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerParams {
    pub max_corners: usize,
    pub quality_level: f64,
    pub min_distance: f64,
    pub lk_levels: usize,
    pub lk_window: usize,
    /// Extra blur applied to raw IWEs before detection and tracking.
    pub blur_sigma: f64,
    pub k_neighbors: usize,
    pub smoothing_eps: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            max_corners: 300,
            quality_level: 0.01,
            min_distance: 7.0,
            lk_levels: 3,
            lk_window: 15,
            blur_sigma: 1.0,
            k_neighbors: 6,
            smoothing_eps: 1.0,
        }
    }
}

/// Feature correspondences plus an undirected k-NN graph over `x_prev`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub correspondences: Vec<Correspondence>,
    /// Sorted adjacency lists; symmetric, no self-loops.
    pub neighbors: Vec<Vec<usize>>,
}

impl FeatureSet {
    pub fn new(correspondences: Vec<Correspondence>, k_neighbors: usize) -> Self {
        let pts: Vec<Point2> = correspondences.iter().map(|f| f.x_prev).collect();
        let neighbors = knn_graph(&pts, k_neighbors);
        Self {
            correspondences,
            neighbors,
        }
    }

    pub fn len(&self) -> usize {
        self.correspondences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.correspondences.is_empty()
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }
}

/// Symmetric closure of the k-nearest-neighbor relation (ties by index).
pub fn knn_graph(points: &[Point2], k: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    let nearest = par::map_range(n, |i| {
        let mut order: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((points[i] - points[j]).norm_squared(), j))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().take(k).map(|(_, j)| j).collect::<Vec<_>>()
    });
    let mut adj = vec![Vec::new(); n];
    for (i, ns) in nearest.into_iter().enumerate() {
        for j in ns {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

/// Row-major grayscale image used by the detector and tracker.
#[derive(Debug, Clone, PartialEq)]
struct Gray {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Gray {
    fn from_iwe(i: &Iwe) -> Self {
        Self {
            w: i.width as usize,
            h: i.height as usize,
            data: i.pixels.clone(),
        }
    }

    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    fn bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        (1.0 - fx) * (1.0 - fy) * self.at(x0, y0)
            + fx * (1.0 - fy) * self.at(x0 + 1, y0)
            + (1.0 - fx) * fy * self.at(x0, y0 + 1)
            + fx * fy * self.at(x0 + 1, y0 + 1)
    }

    fn convolve_separable(&self, k: &[f64]) -> Gray {
        let r = (k.len() / 2) as isize;
        let mut tmp = vec![0.0; self.data.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                tmp[y * self.w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * self.at(x as isize + i as isize - r, y as isize))
                    .sum();
            }
        }
        let tmp = Gray {
            w: self.w,
            h: self.h,
            data: tmp,
        };
        let mut out = vec![0.0; self.data.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                out[y * self.w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * tmp.at(x as isize, y as isize + i as isize - r))
                    .sum();
            }
        }
        Gray {
            w: self.w,
            h: self.h,
            data: out,
        }
    }

    fn gaussian_blur(&self, sigma: f64) -> Gray {
        if sigma <= 0.0 {
            return self.clone();
        }
        let r = (3.0 * sigma).ceil() as isize;
        let mut k: Vec<f64> = (-r..=r)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        self.convolve_separable(&k)
    }

    /// Sobel derivatives (scaled to unit gradient for a linear ramp).
    fn sobel(&self) -> (Gray, Gray) {
        let mut gx = vec![0.0; self.data.len()];
        let mut gy = vec![0.0; self.data.len()];
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let a = |dx, dy| self.at(x + dx, y + dy);
                let dx = (a(1, -1) + 2.0 * a(1, 0) + a(1, 1)) - (a(-1, -1) + 2.0 * a(-1, 0) + a(-1, 1));
                let dy = (a(-1, 1) + 2.0 * a(0, 1) + a(1, 1)) - (a(-1, -1) + 2.0 * a(0, -1) + a(1, -1));
                let k = y as usize * self.w + x as usize;
                gx[k] = dx / 8.0;
                gy[k] = dy / 8.0;
            }
        }
        (
            Gray {
                w: self.w,
                h: self.h,
                data: gx,
            },
            Gray {
                w: self.w,
                h: self.h,
                data: gy,
            },
        )
    }

    fn downsample(&self) -> Gray {
        let smooth = self.convolve_separable(&[1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0]);
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut data = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                data[y * w + x] = smooth.at(2 * x as isize, 2 * y as isize);
            }
        }
        Gray { w, h, data }
    }
}

/// Minimum eigenvalue of the 5x5 structure tensor of Sobel gradients.
fn min_eigen_scores(img: &Gray) -> Vec<f64> {
    let (gx, gy) = img.sobel();
    let (w, h) = (img.w as isize, img.h as isize);
    let rows = par::map_range(img.h, |y| {
        let y = y as isize;
        (0..w)
            .map(|x| {
                let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
                for dy in -2..=2 {
                    for dx in -2..=2 {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx < 0 || yy < 0 || xx >= w || yy >= h {
                            continue;
                        }
                        let (ix, iy) = (gx.at(xx, yy), gy.at(xx, yy));
                        a += ix * ix;
                        b += ix * iy;
                        c += iy * iy;
                    }
                }
                (a + c) / 2.0 - (((a - c) / 2.0).powi(2) + b * b).sqrt()
            })
            .collect::<Vec<_>>()
    });
    rows.into_iter().flatten().collect()
}

/// Shi-Tomasi corners: up to `max_n` pixels whose score exceeds
/// `quality_level` times the best score, strongest first, pairwise at least
/// `min_distance` apart.
pub fn detect_corners(i: &Iwe, max_n: usize, quality_level: f64, min_distance: f64) -> Vec<Point2> {
    detect_on(&Gray::from_iwe(i), max_n, quality_level, min_distance)
}

fn detect_on(img: &Gray, max_n: usize, quality_level: f64, min_distance: f64) -> Vec<Point2> {
    let scores = min_eigen_scores(img);
    let best = scores.iter().copied().fold(0.0, f64::max);
    if best <= 1e-12 {
        return Vec::new();
    }
    let thresh = quality_level * best;
    let mut cand: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > thresh)
        .map(|(k, &s)| (s, k))
        .collect();
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let d2 = min_distance * min_distance;
    let mut out: Vec<Point2> = Vec::new();
    for (_, k) in cand {
        if out.len() >= max_n {
            break;
        }
        let p = Point2::new((k % img.w) as f64, (k / img.w) as f64);
        if out.iter().all(|q| (q - p).norm_squared() >= d2) {
            out.push(p);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Track {
    pub point: Point2,
    pub tracked: Point2,
    pub ok: bool,
}

const LK_MAX_ITERS: usize = 30;
const LK_EPS: f64 = 0.01;
const LK_MIN_EIG: f64 = 1e-4;

/// Pyramidal Lucas-Kanade from `prev` to `curr`.
pub fn track_lk(prev: &Iwe, curr: &Iwe, points: &[Point2], levels: usize, win: usize) -> Vec<Track> {
    assert_eq!((prev.width, prev.height), (curr.width, curr.height), "image size mismatch");
    track_on(&Gray::from_iwe(prev), &Gray::from_iwe(curr), points, levels, win)
}

struct Level {
    prev: Gray,
    curr: Gray,
    gx: Gray,
    gy: Gray,
}

fn track_on(prev: &Gray, curr: &Gray, points: &[Point2], levels: usize, win: usize) -> Vec<Track> {
    assert!(levels >= 1 && win >= 5 && win % 2 == 1, "bad LK parameters");
    let mut pyr = Vec::with_capacity(levels);
    let (mut p, mut c) = (prev.clone(), curr.clone());
    for l in 0..levels {
        if l > 0 {
            p = p.downsample();
            c = c.downsample();
        }
        let (gx, gy) = p.sobel();
        pyr.push(Level {
            prev: p.clone(),
            curr: c.clone(),
            gx,
            gy,
        });
    }
    let (w, h) = (prev.w as f64, prev.h as f64);
    par::map(points, |&pt| {
        let flow = track_point(&pyr, pt, win);
        match flow {
            Some(d) => {
                let q = pt + d;
                let ok = q.x >= 0.0 && q.y >= 0.0 && q.x <= w - 1.0 && q.y <= h - 1.0;
                Track {
                    point: pt,
                    tracked: q,
                    ok,
                }
            }
            None => Track {
                point: pt,
                tracked: pt,
                ok: false,
            },
        }
    })
}

fn track_point(pyr: &[Level], pt: Point2, win: usize) -> Option<Point2> {
    let r = (win / 2) as isize;
    let area = (win * win) as f64;
    let mut guess = Point2::zeros();
    for (l, lev) in pyr.iter().enumerate().rev() {
        let scale = (1u32 << l) as f64;
        let p = pt / scale;
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        let mut patch = Vec::with_capacity(win * win);
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (p.x + dx as f64, p.y + dy as f64);
                let ix = lev.gx.bilinear(x, y);
                let iy = lev.gy.bilinear(x, y);
                a += ix * ix;
                b += ix * iy;
                c += iy * iy;
                patch.push((dx as f64, dy as f64, ix, iy, lev.prev.bilinear(x, y)));
            }
        }
        let min_eig = ((a + c) / 2.0 - (((a - c) / 2.0).powi(2) + b * b).sqrt()) / area;
        if min_eig < LK_MIN_EIG {
            return None;
        }
        let det = a * c - b * b;
        let mut nu = Point2::zeros();
        for _ in 0..LK_MAX_ITERS {
            let (mut bx, mut by) = (0.0, 0.0);
            for &(dx, dy, ix, iy, iv) in &patch {
                let jv = lev.curr.bilinear(p.x + guess.x + nu.x + dx, p.y + guess.y + nu.y + dy);
                let diff = iv - jv;
                bx += diff * ix;
                by += diff * iy;
            }
            let step = Point2::new((c * bx - b * by) / det, (a * by - b * bx) / det);
            nu += step;
            if !nu.x.is_finite() || !nu.y.is_finite() {
                return None;
            }
            if step.norm() < LK_EPS {
                break;
            }
        }
        guess += nu;
        if l > 0 {
            guess *= 2.0;
        }
    }
    Some(guess)
}

fn prepared(w: &EventWindow, params: &TrackerParams) -> Gray {
    let iwe = accumulate_iwe(w, &FourParamMotion::ZERO, w.t_start, params.smoothing_eps);
    Gray::from_iwe(&iwe).gaussian_blur(params.blur_sigma)
}

/// Correspondences between the raw IWEs of two adjacent windows.
pub fn build_feature_set(prev: &EventWindow, curr: &EventWindow, params: &TrackerParams) -> Result<FeatureSet> {
    assert_eq!((prev.width, prev.height), (curr.width, curr.height), "window geometry mismatch");
    let required = 2 * MINIMAL_SET;
    if prev.is_empty() || curr.is_empty() {
        return Err(Error::InsufficientFeatures { found: 0, required });
    }
    let a = prepared(prev, params);
    let b = prepared(curr, params);
    let corners = detect_on(&a, params.max_corners, params.quality_level, params.min_distance);
    let tracks = track_on(&a, &b, &corners, params.lk_levels, params.lk_window);
    let dt = (curr.t_start as f64 - prev.t_start as f64) * 1e-6;
    let center = prev.center();
    let fs: Vec<Correspondence> = tracks
        .iter()
        .filter(|t| t.ok)
        .map(|t| Correspondence::new(t.point - center, t.tracked - center, dt))
        .collect();
    if fs.len() < required {
        return Err(Error::InsufficientFeatures {
            found: fs.len(),
            required,
        });
    }
    Ok(FeatureSet::new(fs, params.k_neighbors))
}

/// Single-window variant: tracks from the first half of `w` to the second.
pub fn build_feature_set_single(w: &EventWindow, params: &TrackerParams) -> Result<FeatureSet> {
    let mid = w.t_start + (w.t_end - w.t_start) / 2;
    let (a, b) = w.split_at(mid);
    build_feature_set(&a, &b, params)
}
