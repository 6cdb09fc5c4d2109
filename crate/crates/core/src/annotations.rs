//! Data model and JSON-lines I/O for narrations, NLQ samples and NaQ samples.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Closed interval `[start_sec, end_sec]` in seconds.
///
/// Bounds may be negative before clamping to a video.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalWindow {
    pub start_sec: f64,
    pub end_sec: f64,
}

impl TemporalWindow {
    pub fn new(start_sec: f64, end_sec: f64) -> Result<Self> {
        if !start_sec.is_finite() || !end_sec.is_finite() {
            return Err(Error::NonFiniteWindow);
        }
        if start_sec > end_sec {
            return Err(Error::InvertedWindow { start: start_sec, end: end_sec });
        }
        Ok(TemporalWindow { start_sec, end_sec })
    }

    pub fn width(&self) -> f64 {
        self.end_sec - self.start_sec
    }

    pub fn center(&self) -> f64 {
        (self.start_sec + self.end_sec) / 2.0
    }

    pub fn half_width(&self) -> f64 {
        (self.end_sec - self.start_sec) / 2.0
    }

    /// `other ⊆ self`
    pub fn contains(&self, other: &TemporalWindow) -> bool {
        self.start_sec <= other.start_sec && other.end_sec <= self.end_sec
    }

    /// Intersection, or `None` when the windows are disjoint.
    pub fn intersect(&self, other: &TemporalWindow) -> Option<TemporalWindow> {
        let start = self.start_sec.max(other.start_sec);
        let end = self.end_sec.min(other.end_sec);
        (start <= end).then_some(TemporalWindow { start_sec: start, end_sec: end })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::UnknownSplit(other.to_string())),
        }
    }
}

/// The ten NLQ query templates evaluated separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QueryTemplate {
    WhereBeforeAfter,
    WhereDidIPut,
    WhereIs,
    WhatDidIPutIn,
    HowMany,
    InWhatLocation,
    WhatXDidIY,
    WhatXIsY,
    State,
    WhoDuring,
}

impl QueryTemplate {
    pub const ALL: [QueryTemplate; 10] = [
        QueryTemplate::WhereBeforeAfter,
        QueryTemplate::WhereDidIPut,
        QueryTemplate::WhereIs,
        QueryTemplate::WhatDidIPutIn,
        QueryTemplate::HowMany,
        QueryTemplate::InWhatLocation,
        QueryTemplate::WhatXDidIY,
        QueryTemplate::WhatXIsY,
        QueryTemplate::State,
        QueryTemplate::WhoDuring,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryTemplate::WhereBeforeAfter => "Where is X before/after Y?",
            QueryTemplate::WhereDidIPut => "Where did I put X?",
            QueryTemplate::WhereIs => "Where is X?",
            QueryTemplate::WhatDidIPutIn => "What did I put in X?",
            QueryTemplate::HowMany => "How many X's?",
            QueryTemplate::InWhatLocation => "In what location did I see X?",
            QueryTemplate::WhatXDidIY => "What X did I Y?",
            QueryTemplate::WhatXIsY => "What X is Y?",
            QueryTemplate::State => "State?",
            QueryTemplate::WhoDuring => "Who did I interact with during Y?",
        }
    }
}

impl fmt::Display for QueryTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QueryTemplate::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::UnknownTemplate(s.to_string()))
    }
}

impl Serialize for QueryTemplate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for QueryTemplate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Narration {
    pub video_uid: String,
    pub timestamp_sec: f64,
    pub text: String,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NlqSample {
    pub query_id: String,
    pub video_uid: String,
    pub query: String,
    pub window: TemporalWindow,
    pub template: Option<QueryTemplate>,
    pub object: Option<String>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NaqSample {
    pub video_uid: String,
    pub query: String,
    pub window: TemporalWindow,
    pub narration_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoTimeline {
    pub video_uid: String,
    pub duration_sec: f64,
    pub narrations: Vec<Narration>,
    /// Mean gap between consecutive narrations; `None` with fewer than two.
    pub beta_sec: Option<f64>,
    pub features: Option<FeatureMatrix>,
}

impl VideoTimeline {
    /// Builds a timeline, sorting narrations by timestamp and re-indexing them.
    pub fn new(video_uid: impl Into<String>, duration_sec: f64, mut narrations: Vec<Narration>) -> Result<Self> {
        let video_uid = video_uid.into();
        if !(duration_sec.is_finite() && duration_sec > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "video {video_uid}: duration must be positive, got {duration_sec}"
            )));
        }
        narrations.sort_by(|a, b| a.timestamp_sec.total_cmp(&b.timestamp_sec));
        for (i, n) in narrations.iter_mut().enumerate() {
            if n.timestamp_sec < 0.0 || n.timestamp_sec > duration_sec {
                return Err(Error::OutsideVideo {
                    video_uid: video_uid.clone(),
                    start: n.timestamp_sec,
                    end: n.timestamp_sec,
                    duration: duration_sec,
                });
            }
            n.index = i;
            n.video_uid.clone_from(&video_uid);
        }
        let stamps: Vec<f64> = narrations.iter().map(|n| n.timestamp_sec).collect();
        let beta_sec = crate::trj::compute_beta(&stamps).ok();
        Ok(VideoTimeline { video_uid, duration_sec, narrations, beta_sec, features: None })
    }

    pub fn with_features(mut self, features: FeatureMatrix) -> Self {
        self.features = Some(features);
        self
    }
}

/// Strips `#tag` tokens and collapses whitespace.
pub fn normalize_text(raw: &str) -> String {
    raw.split_whitespace()
        .filter(|tok| !tok.starts_with('#'))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Narrations marked uncertain or with no text left after normalization
/// carry no usable query.
pub fn is_usable_narration(raw: &str) -> bool {
    let unsure = raw.split_whitespace().any(|t| t.eq_ignore_ascii_case("#unsure"));
    !unsure && !normalize_text(raw).is_empty()
}

fn lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(Error::from))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

fn parse_line<'a, T: Deserialize<'a>>(line_no: usize, line: &'a str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })
}

#[derive(Serialize, Deserialize)]
struct NarrationRecord {
    video_uid: String,
    timestamp_sec: f64,
    narration_text: String,
}

/// Reads `narrations.jsonl`.
///
/// Output is grouped by video (ascending uid) and sorted by timestamp
/// within each video; indices are assigned after sorting. Unusable
/// narrations are dropped. Narrations sharing a timestamp are all kept.
pub fn parse_narrations<R: BufRead>(reader: R) -> Result<Vec<Narration>> {
    let mut by_video: BTreeMap<String, Vec<Narration>> = BTreeMap::new();
    for item in lines(reader) {
        let (line_no, line) = item?;
        let rec: NarrationRecord = parse_line(line_no, &line)?;
        if !rec.timestamp_sec.is_finite() {
            return Err(Error::Parse { line: line_no, message: "non-finite timestamp".into() });
        }
        if rec.timestamp_sec < 0.0 {
            return Err(Error::NegativeTimestamp { line: line_no, timestamp: rec.timestamp_sec });
        }
        if !is_usable_narration(&rec.narration_text) {
            continue;
        }
        by_video.entry(rec.video_uid.clone()).or_default().push(Narration {
            video_uid: rec.video_uid,
            timestamp_sec: rec.timestamp_sec,
            text: rec.narration_text,
            index: 0,
        });
    }
    let mut out = Vec::new();
    for (_, mut narrs) in by_video {
        narrs.sort_by(|a, b| a.timestamp_sec.total_cmp(&b.timestamp_sec));
        for (i, n) in narrs.iter_mut().enumerate() {
            n.index = i;
        }
        out.extend(narrs);
    }
    Ok(out)
}

pub fn write_narrations<W: Write>(narrations: &[Narration], mut sink: W) -> Result<usize> {
    for n in narrations {
        let rec = NarrationRecord {
            video_uid: n.video_uid.clone(),
            timestamp_sec: n.timestamp_sec,
            narration_text: n.text.clone(),
        };
        serde_json::to_writer(&mut sink, &rec)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(narrations.len())
}

#[derive(Serialize, Deserialize)]
struct NlqRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query_id: Option<String>,
    video_uid: String,
    query: String,
    start_sec: f64,
    end_sec: f64,
    split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    object: Option<String>,
}

/// Reads `nlq.jsonl`.
///
/// Records without a `query_id` get `q<line>`. When `durations` is given,
/// every window must lie within its video.
pub fn parse_nlq<R: BufRead>(reader: R, durations: Option<&HashMap<String, f64>>) -> Result<Vec<NlqSample>> {
    let mut out = Vec::new();
    for item in lines(reader) {
        let (line_no, line) = item?;
        let rec: NlqRecord = parse_line(line_no, &line)?;
        let window = TemporalWindow::new(rec.start_sec, rec.end_sec)?;
        let split: Split = rec.split.parse()?;
        let template = rec.template.as_deref().map(str::parse).transpose()?;
        if let Some(durations) = durations {
            let duration = *durations
                .get(&rec.video_uid)
                .ok_or_else(|| Error::UnknownVideo(rec.video_uid.clone()))?;
            if window.start_sec < 0.0 || window.end_sec > duration {
                return Err(Error::OutsideVideo {
                    video_uid: rec.video_uid,
                    start: window.start_sec,
                    end: window.end_sec,
                    duration,
                });
            }
        }
        out.push(NlqSample {
            query_id: rec.query_id.unwrap_or_else(|| format!("q{line_no}")),
            video_uid: rec.video_uid,
            query: rec.query,
            window,
            template,
            object: rec.object,
            split,
        });
    }
    Ok(out)
}

pub fn write_nlq<W: Write>(samples: &[NlqSample], mut sink: W) -> Result<usize> {
    for s in samples {
        let rec = NlqRecord {
            query_id: Some(s.query_id.clone()),
            video_uid: s.video_uid.clone(),
            query: s.query.clone(),
            start_sec: s.window.start_sec,
            end_sec: s.window.end_sec,
            split: s.split.as_str().to_string(),
            template: s.template.map(|t| t.as_str().to_string()),
            object: s.object.clone(),
        };
        serde_json::to_writer(&mut sink, &rec)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(samples.len())
}

// Field order here is the on-disk order.
#[derive(Serialize, Deserialize)]
struct NaqRecord {
    video_uid: String,
    query: String,
    start_sec: f64,
    end_sec: f64,
    narration_index: usize,
    source: String,
}

/// Writes one NaQ record per line and returns the number written.
pub fn write_naq<W: Write>(samples: &[NaqSample], mut sink: W) -> Result<usize> {
    for s in samples {
        let rec = NaqRecord {
            video_uid: s.video_uid.clone(),
            query: s.query.clone(),
            start_sec: s.window.start_sec,
            end_sec: s.window.end_sec,
            narration_index: s.narration_index,
            source: "naq".to_string(),
        };
        serde_json::to_writer(&mut sink, &rec)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(samples.len())
}

pub fn parse_naq<R: BufRead>(reader: R) -> Result<Vec<NaqSample>> {
    let mut out = Vec::new();
    for item in lines(reader) {
        let (line_no, line) = item?;
        let rec: NaqRecord = parse_line(line_no, &line)?;
        if rec.source != "naq" {
            return Err(Error::Parse { line: line_no, message: format!("unexpected source {:?}", rec.source) });
        }
        let window = TemporalWindow::new(rec.start_sec, rec.end_sec)?;
        if window.width() <= 0.0 {
            return Err(Error::Parse { line: line_no, message: "zero-width NaQ window".into() });
        }
        out.push(NaqSample {
            video_uid: rec.video_uid,
            query: rec.query,
            window,
            narration_index: rec.narration_index,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naq(uid: &str, q: &str, s: f64, e: f64, i: usize) -> NaqSample {
        NaqSample { video_uid: uid.into(), query: q.into(), window: TemporalWindow::new(s, e).unwrap(), narration_index: i }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("#C C opens the drawer"), "C opens the drawer");
        assert_eq!(normalize_text("C washes   hands "), "C washes hands");
        assert_eq!(normalize_text("#unsure"), "");
        assert_eq!(normalize_text(""), "");
    }

    #[test]
    fn parse_single_narration() {
        let input = r##"{"video_uid":"v1","timestamp_sec":4.0,"narration_text":"#C C opens the drawer"}"##;
        let n = parse_narrations(input.as_bytes()).unwrap();
        assert_eq!(
            n,
            vec![Narration { video_uid: "v1".into(), timestamp_sec: 4.0, text: "#C C opens the drawer".into(), index: 0 }]
        );
    }

    #[test]
    fn narrations_sorted_within_video() {
        let input = concat!(
            r#"{"video_uid":"v1","timestamp_sec":10.0,"narration_text":"C b"}"#,
            "\n",
            r#"{"video_uid":"v0","timestamp_sec":1.0,"narration_text":"C z"}"#,
            "\n\n",
            r#"{"video_uid":"v1","timestamp_sec":4.0,"narration_text":"C a"}"#,
            "\n",
        );
        let n = parse_narrations(input.as_bytes()).unwrap();
        let got: Vec<_> = n.iter().map(|n| (n.video_uid.as_str(), n.timestamp_sec, n.index)).collect();
        assert_eq!(got, vec![("v0", 1.0, 0), ("v1", 4.0, 0), ("v1", 10.0, 1)]);
    }

    #[test]
    fn missing_timestamp_reports_line() {
        let input = concat!(
            r#"{"video_uid":"v1","timestamp_sec":1.0,"narration_text":"C a"}"#,
            "\n",
            r#"{"video_uid":"v1","narration_text":"C b"}"#,
        );
        match parse_narrations(input.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_timestamp_rejected() {
        let input = r#"{"video_uid":"v1","timestamp_sec":-0.5,"narration_text":"C a"}"#;
        assert!(matches!(parse_narrations(input.as_bytes()), Err(Error::NegativeTimestamp { line: 1, .. })));
    }

    #[test]
    fn unsure_narrations_dropped() {
        let input = concat!(
            r##"{"video_uid":"v1","timestamp_sec":1.0,"narration_text":"#unsure"}"##,
            "\n",
            r##"{"video_uid":"v1","timestamp_sec":2.0,"narration_text":"#unsure C picks the cup"}"##,
            "\n",
            r##"{"video_uid":"v1","timestamp_sec":3.0,"narration_text":"C cuts the onion"}"##,
        );
        let n = parse_narrations(input.as_bytes()).unwrap();
        assert_eq!(n.len(), 1);
        assert_eq!(n[0].index, 0);
        assert_eq!(n[0].timestamp_sec, 3.0);
    }

    #[test]
    fn nlq_valid_and_template_passthrough() {
        let input = concat!(
            r#"{"video_uid":"v1","query":"Where did I put the knife?","start_sec":12.0,"end_sec":19.5,"split":"train"}"#,
            "\n",
            r#"{"query_id":"a","video_uid":"v1","query":"How many funnels?","start_sec":1.0,"end_sec":2.0,"split":"val","template":"How many X's?","object":"funnel"}"#,
        );
        let s = parse_nlq(input.as_bytes(), None).unwrap();
        assert_eq!(s[0].query_id, "q1");
        assert_eq!(s[0].window, TemporalWindow { start_sec: 12.0, end_sec: 19.5 });
        assert_eq!(s[0].split, Split::Train);
        assert_eq!(s[0].template, None);
        assert_eq!(s[1].template, Some(QueryTemplate::HowMany));
        assert_eq!(s[1].object.as_deref(), Some("funnel"));
    }

    #[test]
    fn nlq_errors() {
        let inverted = r#"{"video_uid":"v1","query":"q","start_sec":19.5,"end_sec":12.0,"split":"train"}"#;
        let err = parse_nlq(inverted.as_bytes(), None).unwrap_err();
        assert!(err.to_string().contains("inverted window"), "{err}");
        let split = r#"{"video_uid":"v1","query":"q","start_sec":1.0,"end_sec":2.0,"split":"dev"}"#;
        assert!(matches!(parse_nlq(split.as_bytes(), None), Err(Error::UnknownSplit(_))));
        let tmpl = r#"{"video_uid":"v1","query":"q","start_sec":1.0,"end_sec":2.0,"split":"val","template":"Why?"}"#;
        assert!(matches!(parse_nlq(tmpl.as_bytes(), None), Err(Error::UnknownTemplate(_))));
    }

    #[test]
    fn nlq_checked_against_durations() {
        let durations: HashMap<String, f64> = [("v1".to_string(), 15.0)].into();
        let ok = r#"{"video_uid":"v1","query":"q","start_sec":1.0,"end_sec":15.0,"split":"val"}"#;
        assert!(parse_nlq(ok.as_bytes(), Some(&durations)).is_ok());
        let past = r#"{"video_uid":"v1","query":"q","start_sec":1.0,"end_sec":15.5,"split":"val"}"#;
        assert!(matches!(parse_nlq(past.as_bytes(), Some(&durations)), Err(Error::OutsideVideo { .. })));
        let unknown = r#"{"video_uid":"v9","query":"q","start_sec":1.0,"end_sec":2.0,"split":"val"}"#;
        assert!(matches!(parse_nlq(unknown.as_bytes(), Some(&durations)), Err(Error::UnknownVideo(_))));
    }

    #[test]
    fn write_naq_counts_and_determinism() {
        let mut buf = Vec::new();
        assert_eq!(write_naq(&[], &mut buf).unwrap(), 0);
        assert!(buf.is_empty());

        let samples = vec![
            naq("v1", "C opens the drawer", 0.5, 2.25, 0),
            naq("v1", "C closes the drawer", 3.0, 4.0, 1),
            naq("v2", "C cuts the \"onion\"", 0.1, 0.30000000000000004, 0),
        ];
        let mut a = Vec::new();
        let mut b = Vec::new();
        assert_eq!(write_naq(&samples, &mut a).unwrap(), 3);
        write_naq(&samples, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"video_uid":"v1","query":"C opens the drawer","start_sec":0.5,"end_sec":2.25,"narration_index":0,"source":"naq"}"#
        );
        assert_eq!(parse_naq(text.as_bytes()).unwrap(), samples);
    }

    #[test]
    fn timeline_beta() {
        let mk = |t: f64| Narration { video_uid: String::new(), timestamp_sec: t, text: "C a".into(), index: 9 };
        let tl = VideoTimeline::new("v", 20.0, vec![mk(10.0), mk(0.0), mk(4.0)]).unwrap();
        assert_eq!(tl.beta_sec, Some(5.0));
        assert_eq!(tl.narrations.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(tl.narrations[0].video_uid, "v");
        let single = VideoTimeline::new("v", 20.0, vec![mk(3.0)]).unwrap();
        assert_eq!(single.beta_sec, None);
        assert!(VideoTimeline::new("v", 5.0, vec![mk(6.0)]).is_err());
    }
}
