use std::collections::HashMap;

use naq_core::annotations::TemporalWindow;
use naq_core::metrics::{evaluate, interval_iou, recall_at_k, Prediction, ScoredWindow};
use proptest::prelude::*;

/// Endpoints on a 1/4-second grid so the reference can stay in integers.
fn grid_window() -> impl Strategy<Value = (i64, i64)> {
    (0i64..200, 0i64..200).prop_map(|(a, b)| (a.min(b), a.max(b)))
}

fn to_window(p: (i64, i64)) -> TemporalWindow {
    TemporalWindow::new(p.0 as f64 / 4.0, p.1 as f64 / 4.0).unwrap()
}

/// `iou >= num/den` by cross-multiplication.
fn iou_at_least(a: (i64, i64), b: (i64, i64), num: i64, den: i64) -> bool {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union == 0 {
        return num <= 0;
    }
    inter * den >= num * union
}

/// Ground truth and ranked predictions for one query.
type Case = ((i64, i64), Vec<(i64, i64)>);

fn instance() -> impl Strategy<Value = Vec<Case>> {
    prop::collection::vec((grid_window(), prop::collection::vec(grid_window(), 0..8)), 1..12)
}

fn build(inst: &[Case]) -> (Vec<Prediction>, HashMap<String, TemporalWindow>) {
    let mut preds = Vec::new();
    let mut gt = HashMap::new();
    for (i, (g, ws)) in inst.iter().enumerate() {
        let id = format!("q{i}");
        gt.insert(id.clone(), to_window(*g));
        preds.push(Prediction {
            query_id: id,
            windows: ws
                .iter()
                .enumerate()
                .map(|(r, &w)| {
                    let w = to_window(w);
                    ScoredWindow { start_sec: w.start_sec, end_sec: w.end_sec, score: -(r as f64) }
                })
                .collect(),
        });
    }
    (preds, gt)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn iou_symmetric_and_bounded(a in grid_window(), b in grid_window()) {
        let (wa, wb) = (to_window(a), to_window(b));
        let x = interval_iou(&wa, &wb);
        prop_assert_eq!(x, interval_iou(&wb, &wa));
        prop_assert!((0.0..=1.0).contains(&x));
        if a.1 > a.0 {
            prop_assert_eq!(interval_iou(&wa, &wa), 1.0);
        }
    }

    #[test]
    fn recall_matches_integer_reference(inst in instance()) {
        let (preds, gt) = build(&inst);
        for (k, num, den) in [(1usize, 3i64, 10i64), (5, 3, 10), (1, 1, 2), (5, 1, 2), (3, 7, 10)] {
            let hits = inst.iter().filter(|(g, ws)| ws.iter().take(k).any(|&w| iou_at_least(w, *g, num, den))).count();
            let expect = 100.0 * hits as f64 / inst.len() as f64;
            let got = recall_at_k(&preds, &gt, k, num as f64 / den as f64).unwrap();
            prop_assert!((got - expect).abs() < 1e-12, "k={} m={}/{} got {} expect {}", k, num, den, got, expect);
        }
    }

    #[test]
    fn recall_monotone_in_k_antitone_in_m(inst in instance()) {
        let (preds, gt) = build(&inst);
        let r = |k, m| recall_at_k(&preds, &gt, k, m).unwrap();
        for m in [0.1, 0.3, 0.5, 0.7] {
            prop_assert!(r(1, m) <= r(5, m));
            prop_assert!(r(5, m) <= r(10, m));
        }
        for k in [1, 5] {
            prop_assert!(r(k, 0.3) >= r(k, 0.5));
            prop_assert!(r(k, 0.5) >= r(k, 0.7));
        }
        let rep = evaluate(&preds, &gt, None).unwrap();
        prop_assert!(rep.r1_iou03 <= rep.r5_iou03 && rep.r1_iou05 <= rep.r5_iou05);
        prop_assert!(rep.r1_iou05 <= rep.r1_iou03 && rep.r5_iou05 <= rep.r5_iou03);
    }

    #[test]
    fn global_recall_is_weighted_mean_of_strata(inst in instance(), labels in prop::collection::vec(0usize..3, 12)) {
        let (preds, gt) = build(&inst);
        let names = ["low", "mid", "high"];
        let map: HashMap<String, String> =
            (0..inst.len()).map(|i| (format!("q{i}"), names[labels[i]].to_string())).collect();
        let rep = evaluate(&preds, &gt, Some(&map)).unwrap();
        let total: usize = rep.strata.values().map(|s| s.n_queries).sum();
        prop_assert_eq!(total, rep.n_queries);
        for (cell, global) in rep.cells().iter().enumerate() {
            // Recover integer hit counts from each stratum and compare counts.
            let hits: f64 = rep.strata.values().map(|s| (s.cells()[cell] * s.n_queries as f64 / 100.0).round()).sum();
            let global_hits = (global * rep.n_queries as f64 / 100.0).round();
            prop_assert_eq!(hits, global_hits);
            let weighted: f64 = rep.strata.values().map(|s| s.cells()[cell] * s.n_queries as f64).sum::<f64>() / total as f64;
            prop_assert!((weighted - global).abs() < 1e-9);
        }
    }
}
