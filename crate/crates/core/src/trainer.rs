//! Two-stage training: joint NaQ + NLQ training, then NLQ-only finetuning,
//! both with best-on-validation checkpointing and patience-based stopping.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{NaqSample, NlqSample, TemporalWindow, VideoTimeline};
use crate::error::{Error, Result};
use crate::localizer::{accumulate_grad, encode_query, forward, predict_topk, FeatureView, ModelParams, SpanTarget};
use crate::metrics::{evaluate, EvalReport, Prediction};
use crate::par::{self, Parallelism};
use crate::seed;
use crate::text::Vocab;

/// Examples per gradient work unit. Partial gradients are summed in unit
/// order, so the result does not depend on the number of workers.
pub const GRAD_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub momentum: f64,
}

impl StageConfig {
    fn validate(&self, name: &str) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("{name}: {m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        Ok(())
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig { batch_size: 256, learning_rate: 2.0, max_epochs: 200, momentum: 0.0 }
    }
}

/// Which datasets feed stage 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mix {
    #[default]
    Joint,
    NlqOnly,
    NaqOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub stage2_enabled: bool,
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub mix: Mix,
    /// Training clips are cut to at most this many steps around the target.
    /// 0 trains on whole videos.
    pub crop_steps: usize,
    pub max_len_steps: usize,
    pub top_k: usize,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1: StageConfig::default(),
            stage2: StageConfig { batch_size: 32, learning_rate: 0.5, max_epochs: 30, momentum: 0.0 },
            stage2_enabled: true,
            patience: 3,
            eval_every: 1,
            seed: 0,
            mix: Mix::Joint,
            crop_steps: 128,
            max_len_steps: 30,
            top_k: 5,
            init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    /// Settings for NLQ-only training on a few hundred queries: smaller
    /// batches and a lower rate, with more patience.
    pub fn small_data() -> Self {
        TrainConfig {
            stage1: StageConfig { batch_size: 32, learning_rate: 0.5, max_epochs: 200, momentum: 0.0 },
            patience: 10,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate("stage1")?;
        self.stage2.validate("stage2")?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1");
        }
        if self.max_len_steps == 0 || self.top_k == 0 {
            return bad("max_len_steps and top_k must be >= 1");
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return bad("init_scale must be >= 0");
        }
        Ok(())
    }
}

/// Video features converted to f64 once, addressed by index.
#[derive(Clone, Debug, Default)]
pub struct VideoStore {
    uids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<Vec<f64>>,
    steps: Vec<usize>,
    step_sec: Vec<f64>,
    dim: usize,
}

impl VideoStore {
    pub fn from_timelines<'a, I: IntoIterator<Item = &'a VideoTimeline>>(timelines: I) -> Result<VideoStore> {
        let mut store = VideoStore::default();
        for tl in timelines {
            let f = tl
                .features
                .as_ref()
                .ok_or_else(|| Error::Shape(format!("video {} has no features", tl.video_uid)))?;
            if f.rows() == 0 {
                return Err(Error::Empty("video has no steps"));
            }
            if store.uids.is_empty() {
                store.dim = f.cols();
            } else if f.cols() != store.dim {
                return Err(Error::Shape(format!("video {} has dim {}, expected {}", tl.video_uid, f.cols(), store.dim)));
            }
            store.index.insert(tl.video_uid.clone(), store.uids.len());
            store.uids.push(tl.video_uid.clone());
            store.data.push(f.to_f64());
            store.steps.push(f.rows());
            store.step_sec.push(tl.duration_sec / f.rows() as f64);
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.uids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lookup(&self, uid: &str) -> Result<usize> {
        self.index.get(uid).copied().ok_or_else(|| Error::UnknownVideo(uid.to_string()))
    }

    pub fn view(&self, video: usize) -> FeatureView<'_> {
        FeatureView::new(&self.data[video], self.steps[video], self.dim).expect("store shapes are checked on insert")
    }

    pub fn steps(&self, video: usize) -> usize {
        self.steps[video]
    }

    pub fn step_sec(&self, video: usize) -> f64 {
        self.step_sec[video]
    }

    fn target(&self, video: usize, window: &TemporalWindow) -> Result<SpanTarget> {
        SpanTarget::from_window(window, self.step_sec[video], self.steps[video])
    }
}

/// One training pair: encoded query and target span in a stored video.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub video: usize,
    pub tokens: Vec<u32>,
    pub target: SpanTarget,
}

pub fn nlq_examples(samples: &[NlqSample], store: &VideoStore, vocab: &Vocab) -> Result<Vec<Example>> {
    samples
        .iter()
        .map(|s| {
            let video = store.lookup(&s.video_uid)?;
            Ok(Example { video, tokens: vocab.encode(&s.query), target: store.target(video, &s.window)? })
        })
        .collect()
}

pub fn naq_examples(samples: &[NaqSample], store: &VideoStore, vocab: &Vocab) -> Result<Vec<Example>> {
    samples
        .iter()
        .map(|s| {
            let video = store.lookup(&s.video_uid)?;
            Ok(Example { video, tokens: vocab.encode(&s.query), target: store.target(video, &s.window)? })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalQuery {
    pub query_id: String,
    pub video: usize,
    pub tokens: Vec<u32>,
}

/// Validation or test queries with ground truth and optional stratum labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalSet {
    pub queries: Vec<EvalQuery>,
    pub ground_truth: HashMap<String, TemporalWindow>,
    pub labels: Option<HashMap<String, String>>,
}

impl EvalSet {
    pub fn new(samples: &[NlqSample], store: &VideoStore, vocab: &Vocab) -> Result<EvalSet> {
        let mut set = EvalSet::default();
        for s in samples {
            let video = store.lookup(&s.video_uid)?;
            set.queries.push(EvalQuery { query_id: s.query_id.clone(), video, tokens: vocab.encode(&s.query) });
            set.ground_truth.insert(s.query_id.clone(), s.window);
        }
        Ok(set)
    }

    pub fn with_labels(mut self, labels: HashMap<String, String>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Top-k predictions for every query, in query order.
pub fn predict_all(
    params: &ModelParams,
    set: &EvalSet,
    store: &VideoStore,
    top_k: usize,
    max_len_steps: usize,
    par: Parallelism,
) -> Result<Vec<Prediction>> {
    par::map(&set.queries, par, |q| {
        let qv = encode_query(&q.tokens, params)?;
        let dist = forward(store.view(q.video), &qv, params)?;
        Ok(Prediction {
            query_id: q.query_id.clone(),
            windows: predict_topk(&dist, top_k, max_len_steps, store.step_sec(q.video)),
        })
    })
    .into_iter()
    .collect()
}

pub fn evaluate_set(
    params: &ModelParams,
    set: &EvalSet,
    store: &VideoStore,
    cfg: &TrainConfig,
    par: Parallelism,
) -> Result<EvalReport> {
    let preds = predict_all(params, set, store, cfg.top_k, cfg.max_len_steps, par)?;
    evaluate(&preds, &set.ground_truth, set.labels.as_ref())
}

/// An example with its training clip: `len` steps from `offset`.
#[derive(Clone, Copy, Debug)]
pub struct Clip<'a> {
    pub example: &'a Example,
    pub offset: usize,
    pub len: usize,
}

/// A clip of at most `crop` steps containing the target, placed uniformly
/// among the valid offsets.
pub fn draw_clip<'a, R: Rng + ?Sized>(example: &'a Example, store: &VideoStore, crop: usize, rng: &mut R) -> Clip<'a> {
    let steps = store.steps(example.video);
    let span = example.target.end - example.target.start + 1;
    if crop == 0 || steps <= crop || span >= crop {
        let (offset, len) = if crop == 0 || steps <= crop {
            (0, steps)
        } else {
            (example.target.start, span)
        };
        return Clip { example, offset, len };
    }
    let lo = (example.target.end + 1).saturating_sub(crop);
    let hi = example.target.start.min(steps - crop);
    Clip { example, offset: rng.random_range(lo..=hi), len: crop }
}

/// Summed loss and summed gradient over `clips`.
pub fn batch_gradient(params: &ModelParams, clips: &[Clip], store: &VideoStore, par: Parallelism) -> Result<(f64, ModelParams)> {
    let partials = par::map_chunks(clips, GRAD_CHUNK, par, |chunk| -> Result<(f64, ModelParams)> {
        let mut grad = ModelParams::zeros(params.vocab(), params.dim());
        let mut loss = 0.0;
        for c in chunk {
            let view = store.view(c.example.video).crop(c.offset, c.len);
            loss += accumulate_grad(params, view, &c.example.tokens, c.example.target.shifted(c.offset), &mut grad)?;
        }
        Ok((loss, grad))
    });
    let mut total = ModelParams::zeros(params.vocab(), params.dim());
    let mut loss = 0.0;
    for p in partials {
        let (l, g) = p?;
        loss += l;
        total.axpy(1.0, &g);
    }
    Ok((loss, total))
}

/// True iff none of the last `patience` values set a new strict maximum.
pub fn early_stop(values: &[f64], patience: usize) -> bool {
    let Some(first) = values.first() else {
        return false;
    };
    let mut best = (0, *first);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    values.len() - 1 - best.0 >= patience
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    Disabled,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub epoch: usize,
    /// Mean training loss of the epoch; NaN for an evaluation before training.
    pub loss: f64,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainHistory {
    pub stage: u8,
    pub evals: Vec<EvalRecord>,
    /// Mean training loss per epoch, epoch 1 first.
    pub losses: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    fn empty(stage: u8, stop_reason: StopReason) -> Self {
        TrainHistory { stage, evals: Vec::new(), losses: Vec::new(), best_epoch: None, stop_reason }
    }

    pub fn best(&self) -> Option<&EvalRecord> {
        self.best_epoch.and_then(|e| self.evals.iter().find(|r| r.epoch == e))
    }

    pub fn mean_r1_curve(&self) -> Vec<f64> {
        self.evals.iter().map(|r| r.report.mean_r1).collect()
    }
}

pub const HISTORY_HEADER: &str = "stage,epoch,loss,r1_iou03,r5_iou03,r1_iou05,r5_iou05,mean_r1";

pub fn write_history_csv<W: Write>(histories: &[&TrainHistory], mut sink: W) -> Result<()> {
    writeln!(sink, "{HISTORY_HEADER}")?;
    for h in histories {
        for r in &h.evals {
            let c = r.report.cells();
            writeln!(
                sink,
                "{},{},{:.6},{:.4},{:.4},{:.4},{:.4},{:.4}",
                h.stage, r.epoch, r.loss, c[0], c[1], c[2], c[3], r.report.mean_r1
            )?;
        }
    }
    sink.flush()?;
    Ok(())
}

struct Stage<'a> {
    number: u8,
    cfg: &'a StageConfig,
    eval_initial: bool,
}

fn run_stage(
    mut params: ModelParams,
    data: &[&Example],
    val: &EvalSet,
    store: &VideoStore,
    cfg: &TrainConfig,
    stage: Stage,
    par: Parallelism,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut history = TrainHistory::empty(stage.number, StopReason::MaxEpochs);
    let mut best: Option<(f64, ModelParams)> = None;
    let mut record = |epoch: usize, loss: f64, params: &ModelParams, history: &mut TrainHistory| -> Result<bool> {
        let report = evaluate_set(params, val, store, cfg, par)?;
        let score = report.mean_r1;
        history.evals.push(EvalRecord { epoch, loss, report });
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, params.clone()));
            history.best_epoch = Some(epoch);
        }
        Ok(early_stop(&history.mean_r1_curve(), cfg.patience))
    };
    if stage.eval_initial {
        record(0, f64::NAN, &params, &mut history)?;
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut velocity = ModelParams::zeros(params.vocab(), params.dim());
    let sc = stage.cfg;
    for epoch in 1..=sc.max_epochs {
        let mut rng = seed::rng(seed::derive(cfg.seed, &format!("stage{}", stage.number), epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(sc.batch_size) {
            let clips: Vec<Clip> = batch.iter().map(|&i| draw_clip(data[i], store, cfg.crop_steps, &mut rng)).collect();
            let (loss, mut grad) = batch_gradient(&params, &clips, store, par)?;
            epoch_loss += loss;
            grad.scale(1.0 / batch.len() as f64);
            velocity.scale(sc.momentum);
            velocity.axpy(1.0, &grad);
            params.axpy(-sc.learning_rate, &velocity);
        }
        if !params.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "stage {} diverged at epoch {epoch}; lower the learning rate",
                stage.number
            )));
        }
        let mean_loss = epoch_loss / data.len() as f64;
        history.losses.push(mean_loss);
        if (epoch % cfg.eval_every == 0 || epoch == sc.max_epochs) && record(epoch, mean_loss, &params, &mut history)? {
            history.stop_reason = StopReason::Patience;
            break;
        }
    }
    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok((params, history))
}

/// Stage 1: one shuffled pass per epoch over the NLQ and NaQ examples
/// selected by `cfg.mix`, returning the best-on-validation parameters.
pub fn train_stage1(
    params: ModelParams,
    nlq_train: &[Example],
    naq: &[Example],
    val: &EvalSet,
    store: &VideoStore,
    cfg: &TrainConfig,
    par: Parallelism,
) -> Result<(ModelParams, TrainHistory)> {
    let (use_nlq, use_naq) = match cfg.mix {
        Mix::Joint => (true, true),
        Mix::NlqOnly => (true, false),
        Mix::NaqOnly => (false, true),
    };
    let mut data: Vec<&Example> = Vec::with_capacity(nlq_train.len() + naq.len());
    if use_nlq {
        data.extend(nlq_train);
    }
    if use_naq {
        data.extend(naq);
    }
    if data.is_empty() {
        return Err(Error::Empty("stage 1 training set"));
    }
    run_stage(params, &data, val, store, cfg, Stage { number: 1, cfg: &cfg.stage1, eval_initial: false }, par)
}

/// Stage 2: NLQ-only finetuning. The input parameters are evaluated first
/// and remain the result unless an epoch improves on them.
pub fn finetune_stage2(
    params: ModelParams,
    nlq_train: &[Example],
    val: &EvalSet,
    store: &VideoStore,
    cfg: &TrainConfig,
    par: Parallelism,
) -> Result<(ModelParams, TrainHistory)> {
    if !cfg.stage2_enabled {
        return Ok((params, TrainHistory::empty(2, StopReason::Disabled)));
    }
    if nlq_train.is_empty() {
        return Err(Error::Empty("stage 2 NLQ training set"));
    }
    let data: Vec<&Example> = nlq_train.iter().collect();
    run_stage(params, &data, val, store, cfg, Stage { number: 2, cfg: &cfg.stage2, eval_initial: true }, par)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub stage1: TrainHistory,
    pub stage2: TrainHistory,
}

/// Fresh initialisation, stage 1, then stage 2.
pub fn train(
    nlq_train: &[Example],
    naq: &[Example],
    val: &EvalSet,
    store: &VideoStore,
    vocab_len: usize,
    cfg: &TrainConfig,
    par: Parallelism,
) -> Result<TrainOutcome> {
    let init = ModelParams::init(vocab_len, store.dim(), cfg.seed, cfg.init_scale);
    let (params, stage1) = train_stage1(init, nlq_train, naq, val, store, cfg, par)?;
    let (params, stage2) = finetune_stage2(params, nlq_train, val, store, cfg, par)?;
    Ok(TrainOutcome { params, stage1, stage2 })
}

/// Stage-2 learning-rate sweep: best validation mean R@1 per rate.
pub fn sweep_stage2_lr(
    params: &ModelParams,
    nlq_train: &[Example],
    val: &EvalSet,
    store: &VideoStore,
    cfg: &TrainConfig,
    rates: &[f64],
    par: Parallelism,
) -> Result<Vec<(f64, f64)>> {
    rates
        .iter()
        .map(|&lr| {
            let mut c = cfg.clone();
            c.stage2.learning_rate = lr;
            c.stage2_enabled = true;
            let (_, h) = finetune_stage2(params.clone(), nlq_train, val, store, &c, par)?;
            Ok((lr, h.best().map_or(f64::NAN, |r| r.report.mean_r1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_examples() {
        let v = [10.0, 12.0, 11.0, 11.0];
        assert!(!early_stop(&v[..3], 2));
        assert!(early_stop(&v, 2));
        assert!(!early_stop(&[1.0, 2.0, 3.0, 4.0], 1));
        assert!(!early_stop(&[5.0], 1));
        assert!(!early_stop(&[], 1));
        assert!(early_stop(&[5.0, 4.0], 1));
        assert!(!early_stop(&[5.0, 5.0], 2));
        assert!(early_stop(&[5.0, 5.0, 5.0], 2));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let d = TrainConfig::default();
        assert!(d.stage2.learning_rate < d.stage1.learning_rate);
        assert!(TrainConfig { patience: 0, ..TrainConfig::default() }.validate().is_err());
        let mut c = TrainConfig::default();
        c.stage1.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }
}
