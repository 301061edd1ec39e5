use evseg_core::event::{Event, EventWindow, Polarity};
use evseg_core::level2::EventLabeling;
use evseg_core::metrics::{detection_rate, event_iou, DEFAULT_BOX_IOU};
use proptest::prelude::*;

fn labeling(v: &[Option<usize>]) -> EventLabeling {
    EventLabeling { labels: v.to_vec() }
}

fn window(points: &[(u32, u32)]) -> EventWindow {
    let events = points
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Event::new(x, y, i as u64, Polarity::Positive))
        .collect();
    EventWindow::new(events, 0, points.len().max(1) as u64, 100, 100).unwrap()
}

/// Background on a 10x10 grid at the left, one square object at `ox`.
fn scene(ox: u32) -> (EventWindow, Vec<u32>) {
    let mut pts = Vec::new();
    let mut gt = Vec::new();
    for y in 0..10 {
        for x in 0..10 {
            pts.push((x * 2, 50 + y * 2));
            gt.push(0);
        }
    }
    for y in 0..10 {
        for x in 0..10 {
            pts.push((ox + x, y));
            gt.push(1);
        }
    }
    (window(&pts), gt)
}

#[test]
fn perfect_labeling_detects_everything() {
    let (w, gt) = scene(40);
    let pred = labeling(&gt.iter().map(|&g| Some(g as usize)).collect::<Vec<_>>());
    assert_eq!(detection_rate(&pred, &gt, &w, DEFAULT_BOX_IOU).unwrap().rate, 1.0);
}

#[test]
fn all_background_detects_nothing() {
    let (w, gt) = scene(40);
    let pred = labeling(&vec![Some(0); gt.len()]);
    assert_eq!(detection_rate(&pred, &gt, &w, DEFAULT_BOX_IOU).unwrap().rate, 0.0);
}

/// The predicted object box is the ground-truth box shifted by half its
/// width: box IoU 1/3, a miss at 0.5 and a hit at 0.3.
#[test]
fn half_width_shift_misses() {
    let (bg, _) = scene(0);
    let mut pts: Vec<(u32, u32)> = bg.events.iter().take(100).map(|e| (e.x, e.y)).collect();
    let mut gt = vec![0u32; 100];
    let mut pred = vec![Some(0usize); 100];
    for y in 0..10 {
        for x in 40..55 {
            pts.push((x, y));
            gt.push(u32::from(x < 50));
            pred.push(Some(usize::from(x >= 45)));
        }
    }
    let w = window(&pts);
    let pred = labeling(&pred);
    assert_eq!(detection_rate(&pred, &gt, &w, DEFAULT_BOX_IOU).unwrap().hits, vec![false]);
    assert_eq!(detection_rate(&pred, &gt, &w, 0.3).unwrap().hits, vec![true]);
}

fn arb_case() -> impl Strategy<Value = (Vec<u32>, Vec<Option<usize>>)> {
    (1usize..60).prop_flat_map(|n| {
        (
            proptest::collection::vec(0u32..4, n),
            proptest::collection::vec(proptest::option::weighted(0.9, 0usize..5), n),
        )
    })
}

proptest! {
    #[test]
    fn invariant_under_label_permutation((gt, pred) in arb_case(), perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let a = event_iou(&labeling(&pred), &gt).unwrap();
        let permuted: Vec<Option<usize>> = pred.iter().map(|l| l.map(|j| perm[j])).collect();
        let b = event_iou(&labeling(&permuted), &gt).unwrap();
        prop_assert_eq!(a.per_label, b.per_label);
    }

    #[test]
    fn self_iou_is_one(gt in proptest::collection::vec(0u32..5, 1..80)) {
        let pred = labeling(&gt.iter().map(|&g| Some(g as usize)).collect::<Vec<_>>());
        let r = event_iou(&pred, &gt).unwrap();
        for (g, v) in r.per_label.iter().enumerate() {
            if gt.contains(&(g as u32)) {
                prop_assert_eq!(*v, 1.0);
            }
        }
    }

    #[test]
    fn correct_events_never_lower_iou((gt, pred) in arb_case(), extra in proptest::collection::vec(0u32..4, 1..20)) {
        let before = event_iou(&labeling(&pred), &gt).unwrap();
        // Append events labeled with the cluster each label is matched to.
        let mut gt2 = gt.clone();
        let mut pred2 = pred.clone();
        for g in extra {
            if let Some(Some(j)) = before.assignment.get(g as usize) {
                gt2.push(g);
                pred2.push(Some(*j));
            }
        }
        let after = event_iou(&labeling(&pred2), &gt2).unwrap();
        for (g, (a, b)) in before.per_label.iter().zip(&after.per_label).enumerate() {
            prop_assert!(b + 1e-12 >= *a, "label {}: {} -> {}", g, a, b);
        }
    }
}
