//! Builds the narrations-as-queries dataset from a narration corpus.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::annotations::{normalize_text, NaqSample, VideoTimeline};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::seed;
use crate::trj::{clamp_window, jitter_window, seed_window, TrjConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub global_seed: u64,
    pub trj: TrjConfig,
    pub corpus_digest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NaqDataset {
    /// Sorted by `(video_uid, narration_index)`.
    pub samples: Vec<NaqSample>,
    pub provenance: Provenance,
    /// Samples per video.
    pub counts: BTreeMap<String, usize>,
    pub dropped_empty_text: usize,
    pub dropped_degenerate: usize,
    pub warnings: Vec<String>,
}

impl NaqDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn with_samples(&self, samples: Vec<NaqSample>) -> NaqDataset {
        NaqDataset {
            counts: count_per_video(&samples),
            samples,
            provenance: self.provenance.clone(),
            dropped_empty_text: self.dropped_empty_text,
            dropped_degenerate: self.dropped_degenerate,
            warnings: self.warnings.clone(),
        }
    }
}

fn count_per_video(samples: &[NaqSample]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for s in samples {
        *counts.entry(s.video_uid.clone()).or_insert(0) += 1;
    }
    counts
}

/// Order-independent SHA-256 over the narration content of the corpus.
pub fn corpus_digest(corpus: &[VideoTimeline]) -> String {
    let mut videos: Vec<&VideoTimeline> = corpus.iter().collect();
    videos.sort_by(|a, b| a.video_uid.cmp(&b.video_uid));
    let mut h = Sha256::new();
    for v in videos {
        h.update(v.video_uid.as_bytes());
        h.update([0xff]);
        h.update(v.duration_sec.to_le_bytes());
        for n in &v.narrations {
            h.update(n.timestamp_sec.to_le_bytes());
            h.update(n.text.as_bytes());
            h.update([0xff]);
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

struct VideoOutput {
    samples: Vec<NaqSample>,
    dropped_empty_text: usize,
    dropped_degenerate: usize,
}

fn generate_video(video: &VideoTimeline, cfg: &TrjConfig, global_seed: u64) -> Result<VideoOutput> {
    let beta = video.beta_sec.unwrap_or(cfg.alpha_sec);
    let mut out = VideoOutput { samples: Vec::new(), dropped_empty_text: 0, dropped_degenerate: 0 };
    for n in &video.narrations {
        let query = normalize_text(&n.text);
        if query.is_empty() {
            out.dropped_empty_text += 1;
            continue;
        }
        let seed_w = seed_window(n.timestamp_sec, beta, cfg.alpha_sec)?;
        let mut rng = seed::rng(seed::narration_seed(global_seed, &video.video_uid, n.index));
        let (jittered, _) = jitter_window(&seed_w, cfg, &mut rng);
        let window = if cfg.clamp_to_video {
            clamp_window(&jittered, video.duration_sec).window
        } else {
            jittered
        };
        if window.width() <= 0.0 {
            out.dropped_degenerate += 1;
            continue;
        }
        out.samples.push(NaqSample {
            video_uid: video.video_uid.clone(),
            query,
            window,
            narration_index: n.index,
        });
    }
    Ok(out)
}

/// Converts every usable narration into a (query, response window) pair.
///
/// Each narration draws its jitter from a generator seeded by
/// `hash64(global_seed, video_uid, narration_index)`, so the result does
/// not depend on video order or worker count.
pub fn generate_naq(corpus: &[VideoTimeline], cfg: &TrjConfig, global_seed: u64, par: Parallelism) -> Result<NaqDataset> {
    if corpus.is_empty() {
        return Err(Error::Empty("narration corpus"));
    }
    cfg.validate()?;
    let per_video = par::map(corpus, par, |v| generate_video(v, cfg, global_seed));
    let mut samples = Vec::new();
    let mut dropped_empty_text = 0;
    let mut dropped_degenerate = 0;
    for out in per_video {
        let out = out?;
        dropped_empty_text += out.dropped_empty_text;
        dropped_degenerate += out.dropped_degenerate;
        samples.extend(out.samples);
    }
    samples.sort_by(|a, b| {
        a.video_uid
            .cmp(&b.video_uid)
            .then(a.narration_index.cmp(&b.narration_index))
    });
    let mut warnings = Vec::new();
    if samples.is_empty() {
        warnings.push("every narration was dropped; dataset is empty".to_string());
    }
    Ok(NaqDataset {
        counts: count_per_video(&samples),
        samples,
        provenance: Provenance { global_seed, trj: *cfg, corpus_digest: corpus_digest(corpus) },
        dropped_empty_text,
        dropped_degenerate,
        warnings,
    })
}

/// Uniform sample without replacement of `floor(fraction * N)` samples.
///
/// The selection is a prefix of one seeded permutation, so smaller
/// fractions give subsets of larger ones. Canonical order is kept.
pub fn subsample(dataset: &NaqDataset, fraction: f64, seed: u64) -> Result<NaqDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("fraction must be in [0, 1], got {fraction}")));
    }
    let n = dataset.samples.len();
    let keep = ((fraction * n as f64).floor() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, "subsample", n as u64)));
    let mut chosen = order[..keep].to_vec();
    chosen.sort_unstable();
    let samples = chosen.into_iter().map(|i| dataset.samples[i].clone()).collect();
    Ok(dataset.with_samples(samples))
}
