//! NLQ evaluation: temporal IoU, recall@k at IoU=m and stratified reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::annotations::TemporalWindow;
use crate::error::{Error, Result};

pub const KS: [usize; 2] = [1, 5];
pub const IOU_THRESHOLDS: [f64; 2] = [0.3, 0.5];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredWindow {
    pub start_sec: f64,
    pub end_sec: f64,
    pub score: f64,
}

impl ScoredWindow {
    pub fn window(&self) -> TemporalWindow {
        TemporalWindow { start_sec: self.start_sec, end_sec: self.end_sec }
    }
}

/// Ranked candidate windows for one query, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub query_id: String,
    pub windows: Vec<ScoredWindow>,
}

impl Prediction {
    /// Scores must be non-increasing and the list non-empty.
    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() {
            return Err(Error::Empty("prediction has no windows"));
        }
        if self.windows.windows(2).any(|w| w[1].score > w[0].score) {
            return Err(Error::InvalidConfig(format!("scores of {} are not ranked", self.query_id)));
        }
        Ok(())
    }
}

/// `|a ∩ b| / |a ∪ b|`, zero when the union has no length.
pub fn interval_iou(a: &TemporalWindow, b: &TemporalWindow) -> f64 {
    let inter = (a.end_sec.min(b.end_sec) - a.start_sec.max(b.start_sec)).max(0.0);
    let union = a.width() + b.width() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

fn hit(pred: &Prediction, gt: &TemporalWindow, k: usize, m: f64) -> bool {
    pred.windows.iter().take(k).any(|w| interval_iou(&w.window(), gt) >= m)
}

fn ground_truth<'a>(preds: &[Prediction], gt: &'a HashMap<String, TemporalWindow>) -> Result<Vec<&'a TemporalWindow>> {
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(preds.len());
    for p in preds {
        match gt.get(&p.query_id) {
            Some(w) => out.push(w),
            None => missing.push(p.query_id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingGroundTruth(missing));
    }
    Ok(out)
}

/// Percentage of queries with at least one of the top `k` windows at
/// IoU >= `m`. Lists shorter than `k` are evaluated as given.
pub fn recall_at_k(preds: &[Prediction], gt: &HashMap<String, TemporalWindow>, k: usize, m: f64) -> Result<f64> {
    let truth = ground_truth(preds, gt)?;
    if preds.is_empty() {
        return Err(Error::Empty("query set"));
    }
    let hits = preds.iter().zip(&truth).filter(|(p, g)| hit(p, g, k, m)).count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub r1_iou03: f64,
    pub r5_iou03: f64,
    pub r1_iou05: f64,
    pub r5_iou05: f64,
    /// Mean of R@1 at IoU 0.3 and 0.5.
    pub mean_r1: f64,
    pub n_queries: usize,
    pub strata: BTreeMap<String, EvalReport>,
}

impl EvalReport {
    pub fn recall(&self, k: usize, m: f64) -> f64 {
        let cells = self.cells();
        let col = IOU_THRESHOLDS.iter().position(|&t| t == m);
        let row = KS.iter().position(|&x| x == k);
        match (row, col) {
            (Some(r), Some(c)) => cells[2 * c + r],
            _ => panic!("no recall cell for k={k}, m={m}"),
        }
    }

    /// The four recall cells in `(k, m)` order: (1,.3) (5,.3) (1,.5) (5,.5).
    pub fn cells(&self) -> [f64; 4] {
        [self.r1_iou03, self.r5_iou03, self.r1_iou05, self.r5_iou05]
    }

    fn from_hits(hits: [usize; 4], n: usize) -> EvalReport {
        let pct = |h: usize| 100.0 * h as f64 / n as f64;
        let (r1_iou03, r5_iou03, r1_iou05, r5_iou05) = (pct(hits[0]), pct(hits[1]), pct(hits[2]), pct(hits[3]));
        EvalReport {
            r1_iou03,
            r5_iou03,
            r1_iou05,
            r5_iou05,
            mean_r1: (r1_iou03 + r1_iou05) / 2.0,
            n_queries: n,
            strata: BTreeMap::new(),
        }
    }
}

fn cell_hits(pred: &Prediction, gt: &TemporalWindow) -> [bool; 4] {
    [hit(pred, gt, 1, 0.3), hit(pred, gt, 5, 0.3), hit(pred, gt, 1, 0.5), hit(pred, gt, 5, 0.5)]
}

fn report_over(items: &[(&Prediction, &TemporalWindow)]) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Empty("query set"));
    }
    let mut hits = [0usize; 4];
    for (p, g) in items {
        for (h, b) in hits.iter_mut().zip(cell_hits(p, g)) {
            *h += usize::from(b);
        }
    }
    Ok(EvalReport::from_hits(hits, items.len()))
}

/// Fills the 2x2 recall table and, when `strata` labels are given, one
/// sub-report per label. Unlabeled queries only count globally.
pub fn evaluate(
    preds: &[Prediction],
    gt: &HashMap<String, TemporalWindow>,
    strata: Option<&HashMap<String, String>>,
) -> Result<EvalReport> {
    let truth = ground_truth(preds, gt)?;
    let items: Vec<_> = preds.iter().zip(truth).collect();
    let mut report = report_over(&items)?;
    if let Some(labels) = strata {
        report.strata = stratify(preds, gt, labels)?;
    }
    Ok(report)
}

/// Per-stratum reports. Strata without queries are omitted.
pub fn stratify(
    preds: &[Prediction],
    gt: &HashMap<String, TemporalWindow>,
    labels: &HashMap<String, String>,
) -> Result<BTreeMap<String, EvalReport>> {
    let truth = ground_truth(preds, gt)?;
    let mut groups: BTreeMap<&str, Vec<(&Prediction, &TemporalWindow)>> = BTreeMap::new();
    for (p, g) in preds.iter().zip(truth) {
        if let Some(label) = labels.get(&p.query_id) {
            groups.entry(label.as_str()).or_default().push((p, g));
        }
    }
    groups
        .into_iter()
        .map(|(label, items)| Ok((label.to_string(), report_over(&items)?)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotTier {
    Low,
    Mid,
    High,
}

impl ShotTier {
    /// Tier for a training-query count: [2, 10] low, (10, 50] mid,
    /// above 50 high. Counts below 2 have no tier.
    pub fn for_count(count: usize) -> Option<ShotTier> {
        match count {
            0 | 1 => None,
            2..=10 => Some(ShotTier::Low),
            11..=50 => Some(ShotTier::Mid),
            _ => Some(ShotTier::High),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ShotTier::Low => "low",
            ShotTier::Mid => "mid",
            ShotTier::High => "high",
        }
    }
}

impl fmt::Display for ShotTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn assign_shot_tier(object_counts: &BTreeMap<String, usize>) -> BTreeMap<String, ShotTier> {
    object_counts
        .iter()
        .filter_map(|(obj, &c)| ShotTier::for_count(c).map(|t| (obj.clone(), t)))
        .collect()
}

pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_predictions<W: Write>(preds: &[Prediction], mut sink: W) -> Result<usize> {
    for p in preds {
        serde_json::to_writer(&mut sink, p)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(preds.len())
}

/// Header of `report.csv`.
pub const REPORT_HEADER: &str = "stratum,k,m,value,n_queries";

/// Writes one row per (stratum, k, m) and one `mean_r1` row per stratum
/// (`k` = 1, `m` = `mean`). The global stratum is named `all`.
pub fn write_report_csv<W: Write>(report: &EvalReport, mut sink: W) -> Result<()> {
    writeln!(sink, "{REPORT_HEADER}")?;
    write_report_rows(report, "all", &mut sink)?;
    for (name, sub) in &report.strata {
        write_report_rows(sub, name, &mut sink)?;
    }
    sink.flush()?;
    Ok(())
}

fn write_report_rows<W: Write>(r: &EvalReport, stratum: &str, sink: &mut W) -> Result<()> {
    let stratum = csv_field(stratum);
    for m in IOU_THRESHOLDS {
        for k in KS {
            writeln!(sink, "{stratum},{k},{m},{:.4},{}", r.recall(k, m), r.n_queries)?;
        }
    }
    writeln!(sink, "{stratum},1,mean,{:.4},{}", r.mean_r1, r.n_queries)?;
    Ok(())
}

/// Quotes a CSV field when it contains a separator or quote.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: f64, e: f64) -> TemporalWindow {
        TemporalWindow::new(s, e).unwrap()
    }

    fn pred(id: &str, windows: &[(f64, f64)]) -> Prediction {
        let n = windows.len();
        Prediction {
            query_id: id.into(),
            windows: windows
                .iter()
                .enumerate()
                .map(|(i, &(s, e))| ScoredWindow { start_sec: s, end_sec: e, score: (n - i) as f64 })
                .collect(),
        }
    }

    #[test]
    fn iou_examples() {
        assert!((interval_iou(&w(0.0, 10.0), &w(5.0, 15.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(interval_iou(&w(3.0, 7.0), &w(3.0, 7.0)), 1.0);
        assert_eq!(interval_iou(&w(0.0, 1.0), &w(2.0, 3.0)), 0.0);
        assert_eq!(interval_iou(&w(2.0, 2.0), &w(2.0, 2.0)), 0.0);
        assert_eq!(interval_iou(&w(0.0, 1.0), &w(1.0, 2.0)), 0.0);
    }

    #[test]
    fn recall_two_queries() {
        // top-1 IoUs 0.4 and 0.2 against [0, 10]
        let gt: HashMap<_, _> = [("a".to_string(), w(0.0, 10.0)), ("b".to_string(), w(0.0, 10.0))].into();
        let preds = vec![pred("a", &[(0.0, 4.0)]), pred("b", &[(0.0, 2.0)])];
        assert_eq!(recall_at_k(&preds, &gt, 1, 0.3).unwrap(), 50.0);
        assert_eq!(recall_at_k(&preds, &gt, 5, 0.3).unwrap(), recall_at_k(&preds, &gt, 1, 0.3).unwrap());
        assert_eq!(recall_at_k(&preds, &gt, 1, 0.0).unwrap(), 100.0);
    }

    #[test]
    fn recall_missing_ground_truth() {
        let gt: HashMap<_, _> = [("a".to_string(), w(0.0, 10.0))].into();
        let preds = vec![pred("a", &[(0.0, 4.0)]), pred("zz", &[(0.0, 2.0)])];
        match recall_at_k(&preds, &gt, 1, 0.3) {
            Err(Error::MissingGroundTruth(ids)) => assert_eq!(ids, vec!["zz".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn evaluate_exact_match() {
        let gt: HashMap<_, _> = [("a".to_string(), w(3.0, 7.0))].into();
        let r = evaluate(&[pred("a", &[(3.0, 7.0)])], &gt, None).unwrap();
        assert_eq!(r.cells(), [100.0; 4]);
        assert_eq!(r.mean_r1, 100.0);
        assert_eq!(r.n_queries, 1);
    }

    #[test]
    fn evaluate_three_queries() {
        // top-1 IoUs 0.6, 0.35, 0.1 against [0, 100]
        let gt: HashMap<_, _> = ["a", "b", "c"].iter().map(|q| (q.to_string(), w(0.0, 100.0))).collect();
        let preds = vec![pred("a", &[(0.0, 60.0)]), pred("b", &[(0.0, 35.0)]), pred("c", &[(0.0, 10.0)])];
        let r = evaluate(&preds, &gt, None).unwrap();
        assert!((r.r1_iou03 - 200.0 / 3.0).abs() < 1e-12);
        assert!((r.r1_iou05 - 100.0 / 3.0).abs() < 1e-12);
        assert!((r.mean_r1 - 50.0).abs() < 1e-12);
        assert!(evaluate(&[], &gt, None).is_err());
    }

    #[test]
    fn stratified_isolation_and_identity() {
        let gt: HashMap<_, _> = [("a".to_string(), w(0.0, 10.0)), ("b".to_string(), w(0.0, 10.0))].into();
        let preds = vec![pred("a", &[(0.0, 10.0)]), pred("b", &[(20.0, 30.0)])];
        let labels: HashMap<_, _> = [("a".to_string(), "x".to_string()), ("b".to_string(), "y".to_string())].into();
        let s = stratify(&preds, &gt, &labels).unwrap();
        assert_eq!(s["x"].cells(), [100.0; 4]);
        assert_eq!(s["y"].cells(), [0.0; 4]);

        let one: HashMap<_, _> = [("a".to_string(), "x".to_string()), ("b".to_string(), "x".to_string())].into();
        let global = evaluate(&preds, &gt, None).unwrap();
        let s = stratify(&preds, &gt, &one).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s["x"], global);
    }

    #[test]
    fn shot_tiers() {
        let counts: BTreeMap<String, usize> =
            [("a", 7), ("b", 50), ("c", 51), ("d", 1), ("e", 10), ("f", 11), ("g", 2), ("h", 0)]
                .iter()
                .map(|&(k, v)| (k.to_string(), v))
                .collect();
        let t = assign_shot_tier(&counts);
        assert_eq!(t["a"], ShotTier::Low);
        assert_eq!(t["b"], ShotTier::Mid);
        assert_eq!(t["c"], ShotTier::High);
        assert_eq!(t["e"], ShotTier::Low);
        assert_eq!(t["f"], ShotTier::Mid);
        assert_eq!(t["g"], ShotTier::Low);
        assert!(!t.contains_key("d"));
        assert!(!t.contains_key("h"));
    }

    #[test]
    fn report_csv_layout() {
        let gt: HashMap<_, _> = [("a".to_string(), w(0.0, 10.0))].into();
        let labels: HashMap<_, _> = [("a".to_string(), "Where is X?".to_string())].into();
        let r = evaluate(&[pred("a", &[(0.0, 10.0)])], &gt, Some(&labels)).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 5 + 5);
        assert_eq!(lines[1], "all,1,0.3,100.0000,1");
        assert_eq!(lines[2], "all,5,0.3,100.0000,1");
        assert_eq!(lines[5], "all,1,mean,100.0000,1");
        assert_eq!(lines[6], "Where is X?,1,0.3,100.0000,1");
    }

    #[test]
    fn predictions_roundtrip() {
        let preds = vec![pred("a", &[(0.0, 4.5), (1.0, 2.0)])];
        let mut buf = Vec::new();
        write_predictions(&preds, &mut buf).unwrap();
        assert_eq!(read_predictions(&buf[..]).unwrap(), preds);
        assert!(preds[0].validate().is_ok());
    }
}
