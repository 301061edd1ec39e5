//! Event-wise IoU and bounding-box detection rate.

use std::fmt::Write as _;

use crate::event::EventWindow;
use crate::level2::EventLabeling;
use crate::{Error, Result};

pub const DEFAULT_BOX_IOU: f64 = 0.5;

/// Ground-truth labels index clusters by position: 0 is the background and
/// `1..` are the moving objects.
#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    /// IoU per ground-truth label, background first.
    pub per_label: Vec<f64>,
    pub mean: f64,
    /// Predicted cluster matched to each ground-truth label.
    pub assignment: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    /// Hit or miss per object (ground-truth labels `1..`).
    pub hits: Vec<bool>,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub iou: IouReport,
    pub detection: DetectionReport,
}

fn check_len(pred: &EventLabeling, gt: &[u32]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    Ok(())
}

fn num_pred(pred: &EventLabeling) -> usize {
    pred.labels.iter().flatten().map(|&j| j + 1).max().unwrap_or(0)
}

fn num_gt(gt: &[u32]) -> usize {
    gt.iter().map(|&g| g as usize + 1).max().unwrap_or(0)
}

/// Greedy maximum-overlap matching between predicted clusters and
/// ground-truth labels, followed by per-label IoU over event index sets.
pub fn event_iou(pred: &EventLabeling, gt: &[u32]) -> Result<IouReport> {
    check_len(pred, gt)?;
    let (np, ng) = (num_pred(pred), num_gt(gt));
    let mut overlap = vec![vec![0usize; np]; ng];
    let mut pred_size = vec![0usize; np];
    let mut pred_first = vec![usize::MAX; np];
    let mut gt_size = vec![0usize; ng];
    for (i, (l, &g)) in pred.labels.iter().zip(gt).enumerate() {
        gt_size[g as usize] += 1;
        if let Some(j) = *l {
            pred_size[j] += 1;
            pred_first[j] = pred_first[j].min(i);
            overlap[g as usize][j] += 1;
        }
    }
    let iou = |g: usize, j: usize| {
        let inter = overlap[g][j];
        inter as f64 / (pred_size[j] + gt_size[g] - inter) as f64
    };

    let mut pairs: Vec<(usize, usize)> = (0..ng)
        .flat_map(|g| (0..np).map(move |j| (g, j)))
        .filter(|&(g, j)| overlap[g][j] > 0)
        .collect();
    // Ties on overlap go to the better IoU, then to the lower label, then to
    // the cluster whose first event comes first, so the result does not
    // depend on how predicted clusters are numbered.
    pairs.sort_by(|a, b| {
        overlap[b.0][b.1]
            .cmp(&overlap[a.0][a.1])
            .then(iou(b.0, b.1).total_cmp(&iou(a.0, a.1)))
            .then(a.0.cmp(&b.0))
            .then(pred_first[a.1].cmp(&pred_first[b.1]))
    });
    let mut assignment = vec![None; ng];
    let mut taken = vec![false; np];
    for (g, j) in pairs {
        if assignment[g].is_none() && !taken[j] {
            assignment[g] = Some(j);
            taken[j] = true;
        }
    }
    let per_label: Vec<f64> = assignment
        .iter()
        .enumerate()
        .map(|(g, a)| a.map_or(0.0, |j| iou(g, j)))
        .collect();
    let mean = if ng == 0 {
        0.0
    } else {
        per_label.iter().sum::<f64>() / ng as f64
    };
    Ok(IouReport {
        per_label,
        mean,
        assignment,
    })
}

/// Axis-aligned pixel box, inclusive of both corner pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    fn of(points: impl Iterator<Item = (u32, u32)>) -> Option<BBox> {
        points.fold(None, |acc, (x, y)| {
            let (x, y) = (x as f64, y as f64);
            Some(match acc {
                None => BBox {
                    x0: x,
                    y0: y,
                    x1: x + 1.0,
                    y1: y + 1.0,
                },
                Some(b) => BBox {
                    x0: b.x0.min(x),
                    y0: b.y0.min(y),
                    x1: b.x1.max(x + 1.0),
                    y1: b.y1.max(y + 1.0),
                },
            })
        })
    }

    fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn iou(&self, o: &BBox) -> f64 {
        let inter = BBox {
            x0: self.x0.max(o.x0),
            y0: self.y0.max(o.y0),
            x1: self.x1.min(o.x1),
            y1: self.y1.min(o.y1),
        }
        .area();
        let union = self.area() + o.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

/// An object is detected when the box of some predicted non-background
/// cluster overlaps its box with IoU at least `min_box_iou`. The predicted
/// cluster matched to the ground-truth background is not a candidate.
pub fn detection_rate(pred: &EventLabeling, gt: &[u32], w: &EventWindow, min_box_iou: f64) -> Result<DetectionReport> {
    check_len(pred, gt)?;
    if w.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: w.len(),
            right: gt.len(),
        });
    }
    let matched = event_iou(pred, gt)?;
    let background = matched.assignment.first().copied().flatten();
    let pos = |i: usize| (w.events[i].x, w.events[i].y);

    let pred_boxes: Vec<BBox> = (0..num_pred(pred))
        .filter(|&j| Some(j) != background)
        .filter_map(|j| BBox::of((0..w.len()).filter(|&i| pred.labels[i] == Some(j)).map(pos)))
        .collect();
    let hits: Vec<bool> = (1..num_gt(gt))
        .map(|g| {
            BBox::of((0..w.len()).filter(|&i| gt[i] as usize == g).map(pos))
                .is_some_and(|gb| pred_boxes.iter().any(|pb| pb.iou(&gb) >= min_box_iou))
        })
        .collect();
    let rate = if hits.is_empty() {
        1.0
    } else {
        hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64
    };
    Ok(DetectionReport { hits, rate })
}

pub fn evaluate(pred: &EventLabeling, gt: &[u32], w: &EventWindow, min_box_iou: f64) -> Result<EvalReport> {
    Ok(EvalReport {
        iou: event_iou(pred, gt)?,
        detection: detection_rate(pred, gt, w, min_box_iou)?,
    })
}

impl EvalReport {
    /// Window-wise average: IoU and rate are averaged, an object counts as
    /// detected only if it was detected in every window. Windows missing a
    /// label contribute zero IoU for it.
    pub fn average(reports: &[EvalReport]) -> Option<EvalReport> {
        let n = reports.len();
        if n == 0 {
            return None;
        }
        if n == 1 {
            return Some(reports[0].clone());
        }
        let ng = reports.iter().map(|r| r.iou.per_label.len()).max().unwrap_or(0);
        let no = reports.iter().map(|r| r.detection.hits.len()).max().unwrap_or(0);
        let per_label: Vec<f64> = (0..ng)
            .map(|g| reports.iter().map(|r| r.iou.per_label.get(g).copied().unwrap_or(0.0)).sum::<f64>() / n as f64)
            .collect();
        let hits = (0..no)
            .map(|k| reports.iter().all(|r| r.detection.hits.get(k).copied().unwrap_or(true)))
            .collect();
        Some(EvalReport {
            iou: IouReport {
                mean: reports.iter().map(|r| r.iou.mean).sum::<f64>() / n as f64,
                per_label,
                assignment: vec![None; ng],
            },
            detection: DetectionReport {
                hits,
                rate: reports.iter().map(|r| r.detection.rate).sum::<f64>() / n as f64,
            },
        })
    }

    /// `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        for (g, v) in self.iou.per_label.iter().enumerate() {
            let _ = writeln!(s, "iou.{g}={v:.6}");
        }
        let _ = writeln!(s, "iou.mean={:.6}", self.iou.mean);
        for (k, h) in self.detection.hits.iter().enumerate() {
            let _ = writeln!(s, "detected.{}={}", k + 1, u8::from(*h));
        }
        let _ = writeln!(s, "detection_rate={:.6}", self.detection.rate);
        s
    }

    /// One `metric,object,value` triple per line.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (g, v) in self.iou.per_label.iter().enumerate() {
            let _ = writeln!(s, "iou,{g},{v:.6}");
        }
        let _ = writeln!(s, "iou,mean,{:.6}", self.iou.mean);
        for (k, h) in self.detection.hits.iter().enumerate() {
            let _ = writeln!(s, "detected,{},{}", k + 1, u8::from(*h));
        }
        let _ = writeln!(s, "detection_rate,all,{:.6}", self.detection.rate);
        s
    }
}
