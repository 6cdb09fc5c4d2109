//! Temporal response jittering.
//!
//! A narration timestamp `t` in a video with mean narration gap `beta`
//! gets a seed window `[t - beta/(2 alpha), t + beta/(2 alpha)]`, where
//! `alpha` is the mean of `beta` over all videos. The seed is then
//! expanded by `s ~ U[1, S]` and shifted by `delta ~ U[-(s-1)h, (s-1)h]`
//! (`h` the seed half-width), which keeps the seed inside the result.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{TemporalWindow, VideoTimeline};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrjConfig {
    /// Upper bound `S` of the expansion factor.
    pub scale_max: f64,
    /// Global mean narration gap.
    pub alpha_sec: f64,
    pub clamp_to_video: bool,
}

impl TrjConfig {
    pub fn new(scale_max: f64, alpha_sec: f64) -> Result<Self> {
        let cfg = TrjConfig { scale_max, alpha_sec, clamp_to_video: true };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config with `alpha` computed from the corpus: the mean of every
    /// defined per-video `beta`.
    pub fn for_corpus(corpus: &[VideoTimeline], scale_max: f64) -> Result<Self> {
        let betas: Vec<f64> = corpus.iter().filter_map(|v| v.beta_sec).collect();
        let alpha = compute_alpha(&betas)?;
        Self::new(scale_max, alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_max.is_finite() && self.scale_max >= 1.0) {
            return Err(Error::InvalidConfig(format!("scale_max must be >= 1, got {}", self.scale_max)));
        }
        if !(self.alpha_sec.is_finite() && self.alpha_sec > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha_sec must be > 0, got {}", self.alpha_sec)));
        }
        Ok(())
    }
}

/// Sampled expansion and translation for one window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterDraw {
    pub s: f64,
    pub delta_t: f64,
    /// `(s - 1) * half_width` of the seed it was drawn against.
    pub t_max: f64,
}

/// Mean of consecutive differences of sorted timestamps.
pub fn compute_beta(timestamps: &[f64]) -> Result<f64> {
    if timestamps.len() < 2 {
        return Err(Error::InsufficientNarrations(timestamps.len()));
    }
    let total: f64 = timestamps.windows(2).map(|w| w[1] - w[0]).sum();
    Ok(total / (timestamps.len() - 1) as f64)
}

pub fn compute_alpha(betas: &[f64]) -> Result<f64> {
    if betas.is_empty() {
        return Err(Error::Empty("no per-video narration gaps"));
    }
    if let Some(b) = betas.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
        return Err(Error::InvalidConfig(format!("negative or non-finite beta {b}")));
    }
    Ok(betas.iter().sum::<f64>() / betas.len() as f64)
}

/// Seed window centered on `t`. The half-width `beta / (2 alpha)` is
/// taken as seconds.
pub fn seed_window(t: f64, beta: f64, alpha: f64) -> Result<TemporalWindow> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidConfig(format!("alpha must be > 0, got {alpha}")));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidConfig(format!("timestamp must be >= 0, got {t}")));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidConfig(format!("beta must be >= 0, got {beta}")));
    }
    let half = beta / (2.0 * alpha);
    TemporalWindow::new(t - half, t + half)
}

/// Applies a fixed expansion `s` and shift `delta_t` to `seed`.
///
/// Computed from the seed endpoints as `start - (delta_t + (s - 1) half)`
/// and `end + ((s - 1) half - delta_t)`, so `s = 1, delta_t = 0` returns
/// the seed bit for bit and `|delta_t| <= (s - 1) half` keeps the seed
/// inside under rounding.
pub fn apply_jitter(seed: &TemporalWindow, s: f64, delta_t: f64) -> TemporalWindow {
    let ext = (s - 1.0) * seed.half_width();
    TemporalWindow { start_sec: seed.start_sec - (delta_t + ext), end_sec: seed.end_sec + (ext - delta_t) }
}

/// Draws `(s, delta_t)` and returns the jittered (unclamped) window.
///
/// `s = 1 + u (S - 1)` and `delta_t = (2v - 1) T` with `u, v` uniform on
/// `[0, 1)`.
pub fn jitter_window<R: Rng + ?Sized>(seed: &TemporalWindow, cfg: &TrjConfig, rng: &mut R) -> (TemporalWindow, JitterDraw) {
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    let s = 1.0 + u * (cfg.scale_max - 1.0);
    let t_max = (s - 1.0) * seed.half_width();
    let delta_t = (2.0 * v - 1.0) * t_max;
    (apply_jitter(seed, s, delta_t), JitterDraw { s, delta_t, t_max })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Clamped {
    pub window: TemporalWindow,
    /// Set when the window lay entirely outside the video.
    pub degenerate: bool,
}

/// Clamps to `[0, duration]`. A window wholly outside collapses to a
/// zero-width window at the nearer boundary.
pub fn clamp_window(w: &TemporalWindow, duration: f64) -> Clamped {
    let start = w.start_sec.max(0.0);
    let end = w.end_sec.min(duration);
    if start <= end {
        return Clamped { window: TemporalWindow { start_sec: start, end_sec: end }, degenerate: false };
    }
    let at = if w.end_sec < 0.0 { 0.0 } else { duration };
    Clamped { window: TemporalWindow { start_sec: at, end_sec: at }, degenerate: true }
}
