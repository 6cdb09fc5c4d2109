//! Span-prediction localizer.
//!
//! A query is the mean of its token embeddings `q`. Every timestep `v_t`
//! is fused with it as `h_t = tanh(W [v_t; q; v_t * q] + b)` and two
//! linear heads give start and end logits `s . h_t` and `e . h_t`.
//! Training minimises `-log p_start(i) - log p_end(j)`.

use rand_distr::{Distribution, Normal};

use crate::annotations::TemporalWindow;
use crate::error::{Error, Result};
use crate::metrics::ScoredWindow;
use crate::seed;

/// Model parameters. `fusion` is `dim x 3*dim`, row-major, with column
/// blocks acting on `v`, `q` and `v * q`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    dim: usize,
    vocab: usize,
    pub embed: Vec<f64>,
    pub fusion: Vec<f64>,
    pub bias: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(vocab: usize, dim: usize) -> Self {
        ModelParams {
            dim,
            vocab,
            embed: vec![0.0; vocab * dim],
            fusion: vec![0.0; dim * 3 * dim],
            bias: vec![0.0; dim],
            start: vec![0.0; dim],
            end: vec![0.0; dim],
        }
    }

    /// Gaussian initialisation; `scale` multiplies the fan-in standard
    /// deviations. Biases start at zero.
    pub fn init(vocab: usize, dim: usize, seed: u64, scale: f64) -> Self {
        let mut p = Self::zeros(vocab, dim);
        let mut rng = seed::rng(seed::derive(seed, "init", 0));
        let mut fill = |xs: &mut [f64], std: f64| {
            let normal = Normal::new(0.0, std * scale).unwrap();
            xs.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        };
        let d = dim as f64;
        fill(&mut p.embed, 1.0 / d.sqrt());
        fill(&mut p.fusion, 1.0 / (3.0 * d).sqrt());
        fill(&mut p.start, 1.0 / d.sqrt());
        fill(&mut p.end, 1.0 / d.sqrt());
        p
    }

    /// Rebuilds parameters from raw tensors, checking shapes.
    pub fn from_parts(
        vocab: usize,
        dim: usize,
        embed: Vec<f64>,
        fusion: Vec<f64>,
        bias: Vec<f64>,
        start: Vec<f64>,
        end: Vec<f64>,
    ) -> Result<Self> {
        let p = ModelParams { dim, vocab, embed, fusion, bias, start, end };
        let expect = Self::zeros(vocab, dim);
        for ((name, got), (_, want)) in p.tensors().iter().zip(expect.tensors().iter()) {
            if got.len() != want.len() {
                return Err(Error::Shape(format!("{name}: {} values, expected {}", got.len(), want.len())));
            }
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("embed", &self.embed),
            ("fusion", &self.fusion),
            ("bias", &self.bias),
            ("start", &self.start),
            ("end", &self.end),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [&mut self.embed, &mut self.fusion, &mut self.bias, &mut self.start, &mut self.end]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat mutable access across all tensors, in `tensors()` order.
    pub fn flat_mut(&mut self, mut i: usize) -> &mut f64 {
        for t in self.tensors_mut() {
            if i < t.len() {
                return &mut t[i];
            }
            i -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn flat(&self, mut i: usize) -> f64 {
        for (_, t) in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("parameter index out of range");
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &ModelParams) {
        let others = other.tensors();
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(others.iter()) {
            dst.iter_mut().zip(src.iter()).for_each(|(x, y)| *x += a * y);
        }
    }

    pub fn scale(&mut self, a: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= a);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    fn embedding(&self, id: usize) -> &[f64] {
        &self.embed[id * self.dim..(id + 1) * self.dim]
    }
}

/// Row-major `steps x dim` features, borrowed.
#[derive(Clone, Copy, Debug)]
pub struct FeatureView<'a> {
    data: &'a [f64],
    steps: usize,
    dim: usize,
}

impl<'a> FeatureView<'a> {
    pub fn new(data: &'a [f64], steps: usize, dim: usize) -> Result<Self> {
        if data.len() != steps * dim {
            return Err(Error::Shape(format!("{} values for {steps}x{dim} features", data.len())));
        }
        Ok(FeatureView { data, steps, dim })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, t: usize) -> &'a [f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Steps `[offset, offset + len)`.
    pub fn crop(&self, offset: usize, len: usize) -> FeatureView<'a> {
        let end = (offset + len).min(self.steps);
        FeatureView { data: &self.data[offset * self.dim..end * self.dim], steps: end - offset, dim: self.dim }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpanDistribution {
    pub start_logits: Vec<f64>,
    pub end_logits: Vec<f64>,
    pub start_probs: Vec<f64>,
    pub end_probs: Vec<f64>,
}

impl SpanDistribution {
    pub fn from_logits(start_logits: Vec<f64>, end_logits: Vec<f64>) -> Self {
        let start_probs = softmax(&start_logits);
        let end_probs = softmax(&end_logits);
        SpanDistribution { start_logits, end_logits, start_probs, end_probs }
    }

    pub fn steps(&self) -> usize {
        self.start_probs.len()
    }
}

/// Inclusive step indices of a target span.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpanTarget {
    pub start: usize,
    pub end: usize,
}

impl SpanTarget {
    pub fn new(start: usize, end: usize, steps: usize) -> Result<Self> {
        if start > end || end >= steps {
            return Err(Error::TargetOutOfRange { start, end, steps });
        }
        Ok(SpanTarget { start, end })
    }

    /// `floor(start / step)` to `ceil(end / step) - 1`, clipped to the
    /// video, so the span covers the whole window.
    pub fn from_window(w: &TemporalWindow, step_sec: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Empty("video has no steps"));
        }
        let last = steps - 1;
        let start = ((w.start_sec / step_sec).floor().max(0.0) as usize).min(last);
        let end = (((w.end_sec / step_sec).ceil() - 1.0).max(0.0) as usize).min(last);
        Self::new(start, end.max(start), steps)
    }

    pub fn shifted(&self, offset: usize) -> SpanTarget {
        SpanTarget { start: self.start - offset, end: self.end - offset }
    }
}

/// Normalised exponentials with max-logit subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

/// Mean of the token embeddings.
pub fn encode_query(tokens: &[u32], params: &ModelParams) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::Empty("query has no tokens"));
    }
    let mut q = vec![0.0; params.dim];
    for &t in tokens {
        let t = t as usize;
        if t >= params.vocab {
            return Err(Error::OutOfVocab { id: t, vocab: params.vocab });
        }
        axpy(&mut q, 1.0, params.embedding(t));
    }
    let n = tokens.len() as f64;
    q.iter_mut().for_each(|x| *x /= n);
    Ok(q)
}

/// Query-conditioned fusion folded into one affine map per query:
/// `z_t = M v_t + c` with `M = W_v + W_vq diag(q)` and `c = W_q q + b`.
/// `m_t` holds `M` transposed (`m_t[j*d + k] = M[k][j]`).
struct Fused {
    m_t: Vec<f64>,
    c: Vec<f64>,
}

fn fuse(q: &[f64], params: &ModelParams) -> Fused {
    let d = params.dim;
    let mut m_t = vec![0.0; d * d];
    let mut c = params.bias.clone();
    for k in 0..d {
        let row = &params.fusion[k * 3 * d..(k + 1) * 3 * d];
        let (w_v, rest) = row.split_at(d);
        let (w_q, w_vq) = rest.split_at(d);
        for j in 0..d {
            m_t[j * d + k] = w_v[j] + w_vq[j] * q[j];
        }
        c[k] += dot(w_q, q);
    }
    Fused { m_t, c }
}

fn hidden_states(video: &FeatureView, fused: &Fused, d: usize) -> Vec<f64> {
    let mut hidden = vec![0.0; video.steps * d];
    for t in 0..video.steps {
        let h = &mut hidden[t * d..(t + 1) * d];
        h.copy_from_slice(&fused.c);
        for (j, &vj) in video.row(t).iter().enumerate() {
            axpy(h, vj, &fused.m_t[j * d..(j + 1) * d]);
        }
        h.iter_mut().for_each(|x| *x = x.tanh());
    }
    hidden
}

fn check_shapes(video: &FeatureView, query_vec: &[f64], params: &ModelParams) -> Result<()> {
    if video.dim != params.dim || query_vec.len() != params.dim {
        return Err(Error::Shape(format!(
            "features dim {}, query dim {}, model dim {}",
            video.dim,
            query_vec.len(),
            params.dim
        )));
    }
    if video.steps == 0 {
        return Err(Error::Empty("video has no steps"));
    }
    Ok(())
}

fn heads(hidden: &[f64], params: &ModelParams) -> (Vec<f64>, Vec<f64>) {
    hidden
        .chunks_exact(params.dim)
        .map(|h| (dot(&params.start, h), dot(&params.end, h)))
        .unzip()
}

pub fn forward(video: FeatureView, query_vec: &[f64], params: &ModelParams) -> Result<SpanDistribution> {
    check_shapes(&video, query_vec, params)?;
    let fused = fuse(query_vec, params);
    let hidden = hidden_states(&video, &fused, params.dim);
    let (ls, le) = heads(&hidden, params);
    Ok(SpanDistribution::from_logits(ls, le))
}

/// `-log p_start(target.start) - log p_end(target.end)`
pub fn span_loss(dist: &SpanDistribution, target: SpanTarget) -> Result<f64> {
    let steps = dist.steps();
    SpanTarget::new(target.start, target.end, steps)?;
    Ok(log_sum_exp(&dist.start_logits) - dist.start_logits[target.start] + log_sum_exp(&dist.end_logits)
        - dist.end_logits[target.end])
}

/// Adds the gradient of the span loss for one example into `grad` and
/// returns the loss.
pub fn accumulate_grad(
    params: &ModelParams,
    video: FeatureView,
    tokens: &[u32],
    target: SpanTarget,
    grad: &mut ModelParams,
) -> Result<f64> {
    let d = params.dim;
    let q = encode_query(tokens, params)?;
    check_shapes(&video, &q, params)?;
    SpanTarget::new(target.start, target.end, video.steps)?;
    let fused = fuse(&q, params);
    let hidden = hidden_states(&video, &fused, d);
    let (ls, le) = heads(&hidden, params);
    let dist = SpanDistribution::from_logits(ls, le);
    let loss = span_loss(&dist, target)?;

    // dM^T accumulated as dm_t[j*d + k] = sum_t dz_tk v_tj
    let mut dm_t = vec![0.0; d * d];
    let mut dc = vec![0.0; d];
    let mut dz = vec![0.0; d];
    for t in 0..video.steps {
        let h = &hidden[t * d..(t + 1) * d];
        let gs = dist.start_probs[t] - f64::from(u8::from(t == target.start));
        let ge = dist.end_probs[t] - f64::from(u8::from(t == target.end));
        axpy(&mut grad.start, gs, h);
        axpy(&mut grad.end, ge, h);
        for k in 0..d {
            dz[k] = (gs * params.start[k] + ge * params.end[k]) * (1.0 - h[k] * h[k]);
        }
        axpy(&mut dc, 1.0, &dz);
        for (j, &vj) in video.row(t).iter().enumerate() {
            axpy(&mut dm_t[j * d..(j + 1) * d], vj, &dz);
        }
    }

    let mut dq = vec![0.0; d];
    for k in 0..d {
        let row = &params.fusion[k * 3 * d..(k + 1) * 3 * d];
        let w_q = &row[d..2 * d];
        let w_vq = &row[2 * d..];
        let g_row = &mut grad.fusion[k * 3 * d..(k + 1) * 3 * d];
        for j in 0..d {
            let dm = dm_t[j * d + k];
            g_row[j] += dm;
            g_row[d + j] += dc[k] * q[j];
            g_row[2 * d + j] += dm * q[j];
            dq[j] += dm * w_vq[j] + dc[k] * w_q[j];
        }
        grad.bias[k] += dc[k];
    }
    let inv = 1.0 / tokens.len() as f64;
    for &tok in tokens {
        let row = &mut grad.embed[tok as usize * d..(tok as usize + 1) * d];
        axpy(row, inv, &dq);
    }
    Ok(loss)
}

/// Loss and full gradient for one example.
pub fn loss_and_grad(
    params: &ModelParams,
    video: FeatureView,
    tokens: &[u32],
    target: SpanTarget,
) -> Result<(f64, ModelParams)> {
    let mut grad = ModelParams::zeros(params.vocab, params.dim);
    let loss = accumulate_grad(params, video, tokens, target, &mut grad)?;
    Ok((loss, grad))
}

/// Best `k` spans `(i, j)` with `i <= j < i + max_len`, scored by
/// `p_start(i) * p_end(j)`. Ties go to the smaller `i`, then smaller `j`.
/// Step `i` covers `[i * step_sec, (i + 1) * step_sec)`.
pub fn predict_topk(dist: &SpanDistribution, k: usize, max_len: usize, step_sec: f64) -> Vec<ScoredWindow> {
    let steps = dist.steps();
    let mut best: Vec<(f64, usize, usize)> = Vec::with_capacity(k + 1);
    if k == 0 || max_len == 0 {
        return Vec::new();
    }
    for i in 0..steps {
        let ps = dist.start_probs[i];
        for j in i..steps.min(i + max_len) {
            let score = ps * dist.end_probs[j];
            if best.len() == k && score <= best[k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(s, _, _)| s >= score);
            best.insert(pos, (score, i, j));
            best.truncate(k);
        }
    }
    best.into_iter()
        .map(|(score, i, j)| ScoredWindow { start_sec: i as f64 * step_sec, end_sec: (j + 1) as f64 * step_sec, score })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> SpanDistribution {
        SpanDistribution::from_logits(vec![0.0; n], vec![0.0; n])
    }

    #[test]
    fn encode_examples() {
        let mut p = ModelParams::zeros(3, 2);
        p.embed = vec![0.0, 0.0, 1.0, 2.0, 3.0, -4.0];
        assert_eq!(encode_query(&[1], &p).unwrap(), vec![1.0, 2.0]);
        assert_eq!(encode_query(&[1, 2], &p).unwrap(), vec![2.0, -1.0]);
        assert_eq!(encode_query(&[2, 1], &p).unwrap(), encode_query(&[1, 2], &p).unwrap());
        assert!(matches!(encode_query(&[], &p), Err(Error::Empty(_))));
        assert!(matches!(encode_query(&[3], &p), Err(Error::OutOfVocab { id: 3, vocab: 3 })));
    }

    #[test]
    fn zero_params_give_uniform() {
        let p = ModelParams::zeros(2, 4);
        let feats = vec![0.3; 5 * 4];
        let dist = forward(FeatureView::new(&feats, 5, 4).unwrap(), &[1.0, 0.0, 0.0, 0.0], &p).unwrap();
        assert!(dist.start_logits.iter().all(|&l| l == 0.0));
        assert!(dist.start_probs.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        assert!(dist.end_probs.iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn single_step_is_certain() {
        let p = ModelParams::init(3, 4, 1, 1.0);
        let feats = vec![0.5, -0.1, 0.2, 0.9];
        let q = encode_query(&[1], &p).unwrap();
        let dist = forward(FeatureView::new(&feats, 1, 4).unwrap(), &q, &p).unwrap();
        assert_eq!(dist.start_probs, vec![1.0]);
        assert_eq!(dist.end_probs, vec![1.0]);
    }

    #[test]
    fn duplicated_step_duplicates_logit() {
        let p = ModelParams::init(3, 4, 7, 1.0);
        let feats = vec![0.5, -0.1, 0.2, 0.9, 0.5, -0.1, 0.2, 0.9, 0.0, 1.0, 0.0, 0.0];
        let q = encode_query(&[2], &p).unwrap();
        let dist = forward(FeatureView::new(&feats, 3, 4).unwrap(), &q, &p).unwrap();
        assert_eq!(dist.start_logits[0], dist.start_logits[1]);
        assert_eq!(dist.end_logits[0], dist.end_logits[1]);
        assert_ne!(dist.start_logits[0], dist.start_logits[2]);
    }

    #[test]
    fn shape_mismatch() {
        let p = ModelParams::zeros(2, 4);
        let feats = vec![0.0; 6];
        let v = FeatureView::new(&feats, 2, 3).unwrap();
        assert!(matches!(forward(v, &[0.0; 4], &p), Err(Error::Shape(_))));
        assert!(FeatureView::new(&feats, 4, 4).is_err());
    }

    #[test]
    fn loss_uniform_and_perfect() {
        let loss = span_loss(&uniform(4), SpanTarget { start: 1, end: 2 }).unwrap();
        assert!((loss - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!((loss - 2.772588722239781).abs() < 1e-12);
        let sharp = SpanDistribution::from_logits(vec![0.0, 800.0, 0.0], vec![0.0, 0.0, 800.0]);
        assert_eq!(span_loss(&sharp, SpanTarget { start: 1, end: 2 }).unwrap(), 0.0);
        assert!(span_loss(&uniform(4), SpanTarget { start: 1, end: 4 }).is_err());
    }

    #[test]
    fn target_mapping() {
        let w = |s, e| TemporalWindow { start_sec: s, end_sec: e };
        assert_eq!(SpanTarget::from_window(&w(3.0, 8.0), 1.0, 20).unwrap(), SpanTarget { start: 3, end: 7 });
        assert_eq!(SpanTarget::from_window(&w(3.2, 7.5), 1.0, 20).unwrap(), SpanTarget { start: 3, end: 7 });
        assert_eq!(SpanTarget::from_window(&w(18.5, 25.0), 1.0, 20).unwrap(), SpanTarget { start: 18, end: 19 });
        assert_eq!(SpanTarget::from_window(&w(4.0, 4.0), 1.0, 20).unwrap(), SpanTarget { start: 4, end: 4 });
        assert!(SpanTarget::new(3, 2, 5).is_err());
        assert!(SpanTarget::new(0, 5, 5).is_err());
    }

    #[test]
    fn topk_uniform_ties() {
        let got = predict_topk(&uniform(2), 4, 2, 1.0);
        let spans: Vec<_> = got.iter().map(|w| (w.start_sec, w.end_sec, w.score)).collect();
        assert_eq!(spans, vec![(0.0, 1.0, 0.25), (0.0, 2.0, 0.25), (1.0, 2.0, 0.25)]);
    }

    #[test]
    fn topk_point_mass() {
        let mut ls = vec![-1e9; 8];
        let mut le = vec![-1e9; 8];
        ls[3] = 0.0;
        le[5] = 0.0;
        let got = predict_topk(&SpanDistribution::from_logits(ls, le), 1, 4, 1.0);
        assert_eq!(got.len(), 1);
        assert_eq!((got[0].start_sec, got[0].end_sec, got[0].score), (3.0, 6.0, 1.0));
    }

    #[test]
    fn topk_ranked_and_respects_max_len() {
        let dist = SpanDistribution::from_logits(vec![0.1, 2.0, -1.0, 0.5, 0.0], vec![1.0, -0.5, 0.3, 2.2, 0.0]);
        let got = predict_topk(&dist, 50, 2, 0.5);
        assert_eq!(got.len(), 9);
        assert!(got.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(got.iter().all(|w| w.end_sec - w.start_sec <= 1.0 + 1e-12));
    }
}
