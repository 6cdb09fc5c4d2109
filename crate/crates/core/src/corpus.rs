//! On-disk corpus layout.
//!
//! ```text
//! <dir>/videos.jsonl       {video_uid, duration_sec, split, feature_file}
//! <dir>/narrations.jsonl   {video_uid, timestamp_sec, narration_text}
//! <dir>/nlq.jsonl          {query_id, video_uid, query, start_sec, end_sec, split, template?, object?}
//! <dir>/features/<uid>.naqf
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotations::{
    normalize_text, parse_narrations, parse_nlq, write_narrations, write_nlq, NlqSample, Split, VideoTimeline,
};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::synthworld::SynthCorpus;
use crate::text::Vocab;

pub const VIDEOS_FILE: &str = "videos.jsonl";
pub const NARRATIONS_FILE: &str = "narrations.jsonl";
pub const NLQ_FILE: &str = "nlq.jsonl";
pub const FEATURES_DIR: &str = "features";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct VideoRecord {
    video_uid: String,
    duration_sec: f64,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_file: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusVideo {
    pub split: Split,
    pub timeline: VideoTimeline,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    /// Sorted by video uid.
    pub videos: Vec<CorpusVideo>,
    pub nlq: Vec<NlqSample>,
}

impl From<&SynthCorpus> for Corpus {
    fn from(s: &SynthCorpus) -> Self {
        Corpus {
            videos: s
                .videos
                .iter()
                .map(|v| CorpusVideo { split: v.split, timeline: v.timeline.clone() })
                .collect(),
            nlq: s.nlq.clone(),
        }
    }
}

impl Corpus {
    /// Timelines of one split.
    pub fn timelines(&self, split: Split) -> Vec<VideoTimeline> {
        self.videos
            .iter()
            .filter(|v| v.split == split)
            .map(|v| v.timeline.clone())
            .collect()
    }

    pub fn queries(&self, split: Split) -> Vec<NlqSample> {
        self.nlq.iter().filter(|q| q.split == split).cloned().collect()
    }

    pub fn durations(&self) -> HashMap<String, f64> {
        self.videos
            .iter()
            .map(|v| (v.timeline.video_uid.clone(), v.timeline.duration_sec))
            .collect()
    }

    /// Object counts over train queries.
    pub fn object_frequency(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for q in self.nlq.iter().filter(|q| q.split == Split::Train) {
            if let Some(obj) = &q.object {
                *counts.entry(obj.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Vocabulary over all narration and query text in the corpus.
    pub fn vocab(&self) -> Vocab {
        let narrations = self
            .videos
            .iter()
            .flat_map(|v| v.timeline.narrations.iter().map(|n| normalize_text(&n.text)));
        let texts: Vec<String> = narrations.chain(self.nlq.iter().map(|q| q.query.clone())).collect();
        Vocab::build(texts.iter().map(String::as_str))
    }

    /// Writes the corpus under `dir` and returns the written paths in a
    /// fixed order.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir.join(FEATURES_DIR))?;
        let mut written = Vec::new();

        let mut records = Vec::new();
        for v in &self.videos {
            let feature_file = match &v.timeline.features {
                Some(f) => {
                    let rel = format!("{FEATURES_DIR}/{}.naqf", v.timeline.video_uid);
                    let path = dir.join(&rel);
                    f.write_to(BufWriter::new(File::create(&path)?))?;
                    written.push(path);
                    Some(rel)
                }
                None => None,
            };
            records.push(VideoRecord {
                video_uid: v.timeline.video_uid.clone(),
                duration_sec: v.timeline.duration_sec,
                split: v.split,
                feature_file,
            });
        }
        let path = dir.join(VIDEOS_FILE);
        let mut w = BufWriter::new(File::create(&path)?);
        for r in &records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        written.push(path);

        let path = dir.join(NARRATIONS_FILE);
        let narrations: Vec<_> = self.videos.iter().flat_map(|v| v.timeline.narrations.iter().cloned()).collect();
        write_narrations(&narrations, BufWriter::new(File::create(&path)?))?;
        written.push(path);

        let path = dir.join(NLQ_FILE);
        write_nlq(&self.nlq, BufWriter::new(File::create(&path)?))?;
        written.push(path);
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<Corpus> {
        let open = |name: &str| -> Result<BufReader<File>> {
            let path = dir.join(name);
            File::open(&path)
                .map(BufReader::new)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
        };
        let mut records = Vec::new();
        for (i, line) in open(VIDEOS_FILE)?.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: VideoRecord =
                serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            records.push(r);
        }
        let mut narrations: BTreeMap<String, Vec<_>> = BTreeMap::new();
        for n in parse_narrations(open(NARRATIONS_FILE)?)? {
            narrations.entry(n.video_uid.clone()).or_default().push(n);
        }
        let mut videos = Vec::with_capacity(records.len());
        for r in records {
            let narrs = narrations.remove(&r.video_uid).unwrap_or_default();
            let mut timeline = VideoTimeline::new(r.video_uid.clone(), r.duration_sec, narrs)?;
            if let Some(rel) = &r.feature_file {
                let f = FeatureMatrix::read_from(BufReader::new(File::open(dir.join(rel))?))?;
                timeline = timeline.with_features(f);
            }
            videos.push(CorpusVideo { split: r.split, timeline });
        }
        if let Some(uid) = narrations.keys().next() {
            return Err(Error::UnknownVideo(uid.clone()));
        }
        videos.sort_by(|a, b| a.timeline.video_uid.cmp(&b.timeline.video_uid));
        let corpus = Corpus { videos, nlq: Vec::new() };
        let nlq = parse_nlq(open(NLQ_FILE)?, Some(&corpus.durations()))?;
        Ok(Corpus { nlq, ..corpus })
    }
}
