//! Synthetic egocentric corpus: videos as feature sequences, templated
//! narrations and sparse interrogative queries over a long-tailed object
//! vocabulary.
//!
//! One step is one synthetic second. Each video is a sequence of
//! non-overlapping events `(verb, object, place)` separated by short
//! gaps. A timestep inside an event carries the sum of fixed random
//! embeddings of the event's three tokens plus Gaussian noise; the first
//! and last step of an event also carry shared onset/offset markers.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::annotations::{Narration, NlqSample, QueryTemplate, Split, TemporalWindow, VideoTimeline};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::par::{self, Parallelism};
use crate::seed;
use crate::text::pluralize;

pub const VERBS: &[&str] = &[
    "picks_up", "opens", "closes", "cuts", "washes", "holds", "places", "moves", "wipes", "pours", "stirs", "folds",
    "drops", "lifts", "carries", "cleans", "fixes", "checks", "turns", "pushes", "pulls", "shakes", "fills", "empties",
];

pub const PLACES: &[&str] = &[
    "kitchen", "garage", "bathroom", "bedroom", "garden", "workshop", "office", "hallway", "supermarket", "laundry",
    "balcony", "basement",
];

pub const NOUNS: &[&str] = &[
    "knife", "drawer", "funnel", "cup", "bowl", "plate", "spoon", "fork", "pan", "pot", "bottle", "jar", "box", "brush",
    "towel", "sponge", "bag", "phone", "key", "wallet", "book", "pen", "hammer", "spanner", "screw", "nail", "tape",
    "glove", "shoe", "shirt", "lid", "tray", "basket", "bucket", "ladder", "paint", "cloth", "onion", "tomato", "carrot",
];

pub const ADJECTIVES: &[&str] = &[
    "red", "blue", "green", "yellow", "black", "white", "small", "large", "old", "new", "metal", "wooden", "plastic",
    "glass", "paper", "steel", "round", "square", "long", "short", "clean", "dirty", "empty", "full", "heavy",
];

/// Object names by popularity rank: bare nouns first, then
/// adjective-noun compounds.
pub fn object_names(n: usize) -> Vec<String> {
    let compounds = ADJECTIVES
        .iter()
        .flat_map(|a| NOUNS.iter().map(move |n| format!("{a}_{n}")));
    NOUNS.iter().map(|s| s.to_string()).chain(compounds).take(n).collect()
}

pub fn max_objects() -> usize {
    NOUNS.len() * (ADJECTIVES.len() + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_videos: usize,
    pub steps_per_video: usize,
    pub n_verbs: usize,
    pub n_objects: usize,
    pub n_places: usize,
    pub object_zipf_exponent: f64,
    pub narration_period_steps: f64,
    /// Mean event length; event lengths are uniform on [w/2, 3w/2].
    pub response_width_steps: f64,
    pub max_gap_steps: usize,
    pub query_templates: Vec<String>,
    /// Fractions of videos in train, val and test.
    pub split_fractions: [f64; 3],
    pub queries_per_minute: f64,
    /// Keep at most this many train queries (0 keeps all).
    pub train_query_cap: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_videos: 300,
            steps_per_video: 512,
            n_verbs: 24,
            n_objects: 1000,
            n_places: 12,
            object_zipf_exponent: 1.0,
            narration_period_steps: 4.0,
            response_width_steps: 10.0,
            max_gap_steps: 3,
            query_templates: QueryTemplate::ALL.iter().map(|t| t.as_str().to_string()).collect(),
            split_fractions: [0.6, 0.2, 0.2],
            queries_per_minute: 1.0 / 1.4,
            train_query_cap: 200,
            feature_dim: 32,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_videos == 0 {
            return bad("n_videos must be >= 1".into());
        }
        if self.n_verbs == 0 || self.n_verbs > VERBS.len() {
            return bad(format!("n_verbs must be in 1..={}", VERBS.len()));
        }
        if self.n_places == 0 || self.n_places > PLACES.len() {
            return bad(format!("n_places must be in 1..={}", PLACES.len()));
        }
        if self.n_objects == 0 || self.n_objects > max_objects() {
            return bad(format!("n_objects must be in 1..={}", max_objects()));
        }
        if !(self.object_zipf_exponent.is_finite() && self.object_zipf_exponent >= 0.0) {
            return bad("object_zipf_exponent must be >= 0".into());
        }
        if !(self.narration_period_steps.is_finite() && self.narration_period_steps > 0.0) {
            return bad("narration_period_steps must be > 0".into());
        }
        if !(self.response_width_steps.is_finite() && self.response_width_steps >= 2.0) {
            return bad("response_width_steps must be >= 2".into());
        }
        let (_, hi) = self.event_length_range();
        if self.steps_per_video < hi + self.max_gap_steps {
            return bad("steps_per_video too short for one event".into());
        }
        if self.split_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("split fractions must lie in [0, 1]".into());
        }
        if self.split_fractions.iter().sum::<f64>() > 1.0 + 1e-9 {
            return bad(format!("split fractions sum to more than 1: {:?}", self.split_fractions));
        }
        if !(self.queries_per_minute.is_finite() && self.queries_per_minute > 0.0) {
            return bad("queries_per_minute must be > 0".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be >= 1".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad("noise_std must be >= 0".into());
        }
        self.templates()?;
        let (lo, _) = self.event_length_range();
        let max_events = self.steps_per_video / lo;
        let distinct = self.n_verbs.saturating_mul(self.n_objects).saturating_mul(self.n_places);
        if distinct < max_events {
            return Err(Error::InvalidConfig(format!(
                "vocabulary allows {distinct} distinct events but a video may need {max_events}"
            )));
        }
        Ok(())
    }

    pub fn templates(&self) -> Result<Vec<QueryTemplate>> {
        if self.query_templates.is_empty() {
            return Err(Error::InvalidConfig("no query templates configured".into()));
        }
        self.query_templates.iter().map(|t| t.parse()).collect()
    }

    fn event_length_range(&self) -> (usize, usize) {
        let w = self.response_width_steps;
        let lo = ((w / 2.0).round() as usize).max(1);
        let hi = ((1.5 * w).round() as usize).max(lo);
        (lo, hi)
    }

    fn split_counts(&self) -> [usize; 3] {
        let n = self.n_videos;
        let val = (self.split_fractions[1] * n as f64).round() as usize;
        let test = (self.split_fractions[2] * n as f64).round() as usize;
        let val = val.min(n);
        let test = test.min(n - val);
        let train = if self.split_fractions.iter().sum::<f64>() >= 1.0 - 1e-9 {
            n - val - test
        } else {
            ((self.split_fractions[0] * n as f64).round() as usize).min(n - val - test)
        };
        [train, val, test]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub verb: String,
    pub object: String,
    pub place: String,
    pub window: TemporalWindow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthVideo {
    pub split: Split,
    pub timeline: VideoTimeline,
    pub events: Vec<Event>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub config: WorldConfig,
    /// Sorted by video uid.
    pub videos: Vec<SynthVideo>,
    pub nlq: Vec<NlqSample>,
    /// Object counts over train queries.
    pub object_frequency: BTreeMap<String, usize>,
}

impl SynthCorpus {
    pub fn videos_in(&self, split: Split) -> impl Iterator<Item = &SynthVideo> {
        self.videos.iter().filter(move |v| v.split == split)
    }

    pub fn nlq_in(&self, split: Split) -> impl Iterator<Item = &NlqSample> {
        self.nlq.iter().filter(move |q| q.split == split)
    }
}

/// "C <verb> the <object> in the <place>"
pub fn render_narration(event: &Event) -> String {
    format!("C {} the {} in the {}", event.verb, event.object, event.place)
}

fn require<'a>(value: &'a str, template: QueryTemplate, slot: &'static str) -> Result<&'a str> {
    if value.is_empty() {
        Err(Error::MissingSlot { template: template.as_str().to_string(), slot })
    } else {
        Ok(value)
    }
}

/// Instantiates `template` over `event`. The response window is the
/// event's window; every query shares at least one content word with
/// the event's narration.
pub fn render_query(
    event: &Event,
    template: QueryTemplate,
    query_id: impl Into<String>,
    video_uid: impl Into<String>,
    split: Split,
) -> Result<NlqSample> {
    use QueryTemplate::*;
    let obj = || require(&event.object, template, "object");
    let verb = || require(&event.verb, template, "verb");
    let place = || require(&event.place, template, "place");
    let query = match template {
        WhereBeforeAfter => format!("Where is the {} after I {} it?", obj()?, verb()?),
        WhereDidIPut => format!("Where did I put the {}?", obj()?),
        WhereIs => format!("Where is the {}?", obj()?),
        WhatDidIPutIn => format!("What did I put in the {}?", obj()?),
        HowMany => format!("How many {}?", pluralize(obj()?)),
        InWhatLocation => format!("In what location did I see the {}?", obj()?),
        WhatXDidIY => format!("What {} did I {}?", obj()?, verb()?),
        WhatXIsY => format!("What {} is in the {}?", obj()?, place()?),
        State => format!("What is the state of the {}?", obj()?),
        WhoDuring => format!("Who did I interact with during {} in the {}?", verb()?, place()?),
    };
    let object = (template != WhoDuring).then(|| event.object.clone());
    Ok(NlqSample {
        query_id: query_id.into(),
        video_uid: video_uid.into(),
        query,
        window: event.window,
        template: Some(template),
        object,
        split,
    })
}

/// Fixed token embeddings that features are built from.
struct EmbeddingTable {
    verbs: Vec<Vec<f64>>,
    objects: Vec<Vec<f64>>,
    places: Vec<Vec<f64>>,
    onset: Vec<f64>,
    offset: Vec<f64>,
    background: Vec<f64>,
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl EmbeddingTable {
    fn new(cfg: &WorldConfig) -> Self {
        let mut rng = seed::rng(seed::derive(cfg.seed, "embeddings", 0));
        let d = cfg.feature_dim;
        let mut table = |n: usize| (0..n).map(|_| unit_vector(&mut rng, d)).collect::<Vec<_>>();
        let verbs = table(cfg.n_verbs);
        let objects = table(cfg.n_objects);
        let places = table(cfg.n_places);
        let mut markers = table(3);
        let background = markers.pop().unwrap();
        let offset = markers.pop().unwrap();
        let onset = markers.pop().unwrap();
        EmbeddingTable { verbs, objects, places, onset, offset, background }
    }
}

struct Lexicon {
    objects: Vec<String>,
}

/// `(start, end, verb, object, place)` as step and vocabulary indices.
type RawEvent = (usize, usize, usize, usize, usize);

fn gen_events<R: Rng>(cfg: &WorldConfig, rng: &mut R) -> Result<Vec<RawEvent>> {
    let (lo, hi) = cfg.event_length_range();
    let zipf = Zipf::new(cfg.n_objects as f64, cfg.object_zipf_exponent)
        .map_err(|e| Error::InvalidConfig(format!("zipf: {e}")))?;
    let mut events = Vec::new();
    let mut used = BTreeSet::new();
    let mut t = 0usize;
    loop {
        let gap = rng.random_range(0..=cfg.max_gap_steps);
        let len = rng.random_range(lo..=hi);
        if t + gap + len > cfg.steps_per_video {
            break;
        }
        let start = t + gap;
        let mut triple = None;
        for _ in 0..1000 {
            let verb = rng.random_range(0..cfg.n_verbs);
            let object = (zipf.sample(rng) as usize).clamp(1, cfg.n_objects) - 1;
            let place = rng.random_range(0..cfg.n_places);
            if used.insert((verb, object, place)) {
                triple = Some((verb, object, place));
                break;
            }
        }
        let (verb, object, place) = triple.ok_or_else(|| {
            Error::InvalidConfig("vocabulary too small for requested distinct events".into())
        })?;
        events.push((start, start + len, verb, object, place));
        t = start + len;
    }
    Ok(events)
}

fn gen_features<R: Rng>(
    cfg: &WorldConfig,
    table: &EmbeddingTable,
    events: &[RawEvent],
    rng: &mut R,
) -> FeatureMatrix {
    let d = cfg.feature_dim;
    let mut m = FeatureMatrix::zeros(cfg.steps_per_video, d);
    let mut content = vec![table.background.clone(); cfg.steps_per_video];
    for &(start, end, verb, object, place) in events {
        for (t, row) in content.iter_mut().enumerate().take(end).skip(start) {
            let mut v: Vec<f64> = (0..d)
                .map(|j| table.verbs[verb][j] + table.objects[object][j] + table.places[place][j])
                .collect();
            if t == start {
                v.iter_mut().zip(&table.onset).for_each(|(a, b)| *a += b);
            }
            if t + 1 == end {
                v.iter_mut().zip(&table.offset).for_each(|(a, b)| *a += b);
            }
            *row = v;
        }
    }
    let noise = Normal::new(0.0, cfg.noise_std).unwrap();
    for (t, v) in content.iter().enumerate() {
        for (dst, &x) in m.row_mut(t).iter_mut().zip(v) {
            *dst = (x + noise.sample(rng)) as f32;
        }
    }
    m
}

struct VideoDraft {
    uid: String,
    split: Split,
    timeline: VideoTimeline,
    events: Vec<Event>,
    queries: Vec<NlqSample>,
}

fn gen_video(
    cfg: &WorldConfig,
    table: &EmbeddingTable,
    lex: &Lexicon,
    templates: &[QueryTemplate],
    index: usize,
    split: Split,
) -> Result<VideoDraft> {
    let uid = format!("vid{index:04}");
    let mut rng = seed::rng(seed::derive(cfg.seed, "events", index as u64));
    let raw = gen_events(cfg, &mut rng)?;
    let events: Vec<Event> = raw
        .iter()
        .map(|&(s, e, v, o, p)| Event {
            verb: VERBS[v].to_string(),
            object: lex.objects[o].clone(),
            place: PLACES[p].to_string(),
            window: TemporalWindow { start_sec: s as f64, end_sec: e as f64 },
        })
        .collect();

    let mut narrations = Vec::new();
    for ev in &events {
        let len = ev.window.width();
        let n = ((len / cfg.narration_period_steps).round() as usize).max(1);
        let text = render_narration(ev);
        for k in 0..n {
            narrations.push(Narration {
                video_uid: uid.clone(),
                timestamp_sec: ev.window.start_sec + (k as f64 + 0.5) * len / n as f64,
                text: text.clone(),
                index: 0,
            });
        }
    }

    let minutes = cfg.steps_per_video as f64 / 60.0;
    let n_queries = ((minutes * cfg.queries_per_minute).round() as usize).clamp(1, events.len().max(1));
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.shuffle(&mut rng);
    let mut chosen = order[..n_queries.min(events.len())].to_vec();
    chosen.sort_unstable();
    let queries = chosen
        .iter()
        .enumerate()
        .map(|(j, &ei)| {
            let template = templates[rng.random_range(0..templates.len())];
            render_query(&events[ei], template, format!("{uid}-q{j}"), uid.clone(), split)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut frng = seed::rng(seed::derive(cfg.seed, "features", index as u64));
    let features = gen_features(cfg, table, &raw, &mut frng);
    let timeline = VideoTimeline::new(uid.clone(), cfg.steps_per_video as f64, narrations)?.with_features(features);
    Ok(VideoDraft { uid, split, timeline, events, queries })
}

/// Generates a full corpus. Deterministic in `cfg` and independent of
/// `par`.
pub fn generate_world(cfg: &WorldConfig, par: Parallelism) -> Result<SynthCorpus> {
    cfg.validate()?;
    let templates = cfg.templates()?;
    let table = EmbeddingTable::new(cfg);
    let lex = Lexicon { objects: object_names(cfg.n_objects) };

    let [n_train, n_val, n_test] = cfg.split_counts();
    let mut order: Vec<usize> = (0..cfg.n_videos).collect();
    order.shuffle(&mut seed::rng(seed::derive(cfg.seed, "splits", 0)));
    let mut assigned: Vec<(usize, Split)> = order
        .iter()
        .enumerate()
        .filter_map(|(pos, &vi)| {
            let split = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else if pos < n_train + n_val + n_test {
                Split::Test
            } else {
                return None;
            };
            Some((vi, split))
        })
        .collect();
    assigned.sort_unstable();

    let drafts = par::map(&assigned, par, |&(i, split)| gen_video(cfg, &table, &lex, &templates, i, split));
    let mut drafts = drafts.into_iter().collect::<Result<Vec<_>>>()?;
    drafts.sort_by(|a, b| a.uid.cmp(&b.uid));

    let mut nlq: Vec<NlqSample> = drafts.iter_mut().flat_map(|d| std::mem::take(&mut d.queries)).collect();
    if cfg.train_query_cap > 0 {
        let train_idx: Vec<usize> = (0..nlq.len()).filter(|&i| nlq[i].split == Split::Train).collect();
        if train_idx.len() > cfg.train_query_cap {
            let mut shuffled = train_idx.clone();
            shuffled.shuffle(&mut seed::rng(seed::derive(cfg.seed, "train_cap", 0)));
            let drop: BTreeSet<usize> = shuffled[cfg.train_query_cap..].iter().copied().collect();
            nlq = nlq
                .into_iter()
                .enumerate()
                .filter(|(i, _)| !drop.contains(i))
                .map(|(_, q)| q)
                .collect();
        }
    }

    let mut object_frequency = BTreeMap::new();
    for q in nlq.iter().filter(|q| q.split == Split::Train) {
        if let Some(obj) = &q.object {
            *object_frequency.entry(obj.clone()).or_insert(0) += 1;
        }
    }

    let videos = drafts
        .into_iter()
        .map(|d| SynthVideo { split: d.split, timeline: d.timeline, events: d.events })
        .collect();
    Ok(SynthCorpus { config: cfg.clone(), videos, nlq, object_frequency })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(verb: &str, object: &str, place: &str) -> Event {
        Event {
            verb: verb.into(),
            object: object.into(),
            place: place.into(),
            window: TemporalWindow { start_sec: 4.0, end_sec: 12.0 },
        }
    }

    fn small() -> WorldConfig {
        WorldConfig { n_videos: 12, steps_per_video: 240, train_query_cap: 0, ..WorldConfig::default() }
    }

    #[test]
    fn narration_rendering() {
        assert_eq!(render_narration(&ev("picks_up", "knife", "kitchen")), "C picks_up the knife in the kitchen");
        assert_eq!(render_narration(&ev("opens", "drawer", "garage")), "C opens the drawer in the garage");
        assert_eq!(render_narration(&ev("opens", "red_tray", "garage")), "C opens the red_tray in the garage");
    }

    #[test]
    fn query_rendering() {
        let q = render_query(&ev("picks_up", "knife", "kitchen"), QueryTemplate::WhereDidIPut, "q0", "v1", Split::Val)
            .unwrap();
        assert_eq!(q.query, "Where did I put the knife?");
        assert_eq!(q.window, TemporalWindow { start_sec: 4.0, end_sec: 12.0 });
        assert_eq!(q.template, Some(QueryTemplate::WhereDidIPut));
        assert_eq!(q.object.as_deref(), Some("knife"));
        let q = render_query(&ev("holds", "funnel", "garage"), QueryTemplate::HowMany, "q1", "v1", Split::Val).unwrap();
        assert_eq!(q.query, "How many funnels?");
        assert!("Why?".parse::<QueryTemplate>().is_err());
        let err = render_query(&ev("holds", "", "garage"), QueryTemplate::WhereIs, "q", "v", Split::Val);
        assert!(matches!(err, Err(Error::MissingSlot { slot: "object", .. })));
    }

    #[test]
    fn object_names_unique() {
        let names = object_names(max_objects());
        let set: BTreeSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert!(max_objects() >= 1000);
        assert_eq!(names[0], "knife");
    }

    #[test]
    fn config_validation() {
        let mut c = small();
        c.split_fractions = [0.7, 0.3, 0.2];
        assert!(c.validate().is_err());
        let mut c = small();
        c.n_verbs = 1;
        c.n_objects = 1;
        c.n_places = 1;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(m)) if m.contains("distinct events")));
        let mut c = small();
        c.query_templates = vec!["Why?".into()];
        assert!(c.validate().is_err());
        assert!(WorldConfig::default().validate().is_ok());
    }

    #[test]
    fn world_structure() {
        let w = generate_world(&small(), Parallelism::Sequential).unwrap();
        assert_eq!(w.videos.len(), 12);
        for v in &w.videos {
            let f = v.timeline.features.as_ref().unwrap();
            assert_eq!((f.rows(), f.cols()), (240, 32));
            for pair in v.events.windows(2) {
                assert!(pair[0].window.end_sec <= pair[1].window.start_sec);
            }
            assert!(v.events.last().unwrap().window.end_sec <= 240.0);
        }
        for q in &w.nlq {
            let v = w.videos.iter().find(|v| v.timeline.video_uid == q.video_uid).unwrap();
            assert_eq!(v.split, q.split);
            assert!(v.events.iter().any(|e| e.window == q.window));
        }
        let par = generate_world(&small(), Parallelism::Parallel).unwrap();
        assert_eq!(w, par);
    }

    #[test]
    fn train_cap_applies() {
        let cfg = WorldConfig { n_videos: 30, steps_per_video: 240, train_query_cap: 10, ..WorldConfig::default() };
        let w = generate_world(&cfg, Parallelism::Sequential).unwrap();
        assert_eq!(w.nlq_in(Split::Train).count(), 10);
        assert_eq!(w.object_frequency.values().sum::<usize>(), w.nlq_in(Split::Train).filter(|q| q.object.is_some()).count());
        assert!(w.nlq_in(Split::Val).count() > 0);
    }
}
