//! Training arms and the multi-arm studies built from them.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use naq_core::annotations::{NaqSample, NlqSample, Split, VideoTimeline};
use naq_core::corpus::Corpus;
use naq_core::metrics::{assign_shot_tier, csv_field, EvalReport};
use naq_core::naqgen::{generate_naq, subsample, NaqDataset};
use naq_core::par::{self, Parallelism};
use naq_core::seed;
use naq_core::text::Vocab;
use naq_core::trainer::{self, evaluate_set, naq_examples, nlq_examples, EvalSet, Mix, TrainConfig, TrainOutcome, VideoStore};
use naq_core::trj::TrjConfig;
use naq_core::Result;
use rand::seq::SliceRandom;

use crate::config::ExperimentConfig;

/// A loaded corpus with everything arms share.
pub struct Workspace {
    pub corpus: Corpus,
    pub vocab: Vocab,
    pub store: VideoStore,
    pub train_timelines: Vec<VideoTimeline>,
    pub nlq_train: Vec<NlqSample>,
    /// Shot tier per query id, from object counts over train queries.
    pub tiers: HashMap<String, String>,
    pub par: Parallelism,
}

impl Workspace {
    pub fn new(corpus: Corpus, par: Parallelism) -> Result<Workspace> {
        let vocab = corpus.vocab();
        let store = VideoStore::from_timelines(corpus.videos.iter().map(|v| &v.timeline))?;
        let tier_of = assign_shot_tier(&corpus.object_frequency());
        let tiers = corpus
            .nlq
            .iter()
            .filter_map(|q| {
                let tier = tier_of.get(q.object.as_ref()?)?;
                Some((q.query_id.clone(), tier.as_str().to_string()))
            })
            .collect();
        Ok(Workspace {
            train_timelines: corpus.timelines(Split::Train),
            nlq_train: corpus.queries(Split::Train),
            vocab,
            store,
            tiers,
            corpus,
            par,
        })
    }

    pub fn load(dir: &Path, par: Parallelism) -> Result<Workspace> {
        Self::new(Corpus::load(dir)?, par)
    }

    /// Queries of `split` labelled with their shot tier.
    pub fn eval_set(&self, split: Split) -> Result<EvalSet> {
        let set = EvalSet::new(&self.corpus.queries(split), &self.store, &self.vocab)?;
        let labels = set
            .queries
            .iter()
            .filter_map(|q| self.tiers.get(&q.query_id).map(|t| (q.query_id.clone(), t.clone())))
            .collect();
        Ok(set.with_labels(labels))
    }

    /// NaQ over the train videos.
    pub fn naq(&self, scale_max: f64, global_seed: u64) -> Result<NaqDataset> {
        let trj = TrjConfig::for_corpus(&self.train_timelines, scale_max)?;
        generate_naq(&self.train_timelines, &trj, global_seed, self.par)
    }

    /// Seeded subset of `round(fraction * N)` train queries, in corpus order.
    pub fn nlq_subset(&self, fraction: f64, seed: u64) -> Vec<NlqSample> {
        let n = self.nlq_train.len();
        let keep = ((fraction * n as f64).round() as usize).min(n);
        if keep == n {
            return self.nlq_train.clone();
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(seed::derive(seed, "nlq_subset", n as u64)));
        let mut chosen = order[..keep].to_vec();
        chosen.sort_unstable();
        chosen.into_iter().map(|i| self.nlq_train[i].clone()).collect()
    }
}

/// Where an arm's NaQ data comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum NaqSource {
    None,
    /// Generated from the train videos, then subsampled.
    Generated { scale_max: f64, global_seed: u64, fraction: f64 },
    Samples(Vec<NaqSample>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmSpec {
    pub name: String,
    pub seed_index: usize,
    pub train: TrainConfig,
    pub naq: NaqSource,
    pub nlq_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct ArmResult {
    pub name: String,
    pub seed_index: usize,
    pub outcome: TrainOutcome,
    /// Validation report of the returned parameters.
    pub report: EvalReport,
    pub naq_samples: usize,
    pub nlq_samples: usize,
}

/// Trains one arm and evaluates it on the validation split. With no NLQ
/// data the arm trains on NaQ alone and skips finetuning.
pub fn run_arm(ws: &Workspace, spec: &ArmSpec) -> Result<ArmResult> {
    let nlq = ws.nlq_subset(spec.nlq_fraction, spec.train.seed);
    let naq_samples = match &spec.naq {
        NaqSource::None => Vec::new(),
        NaqSource::Samples(s) => s.clone(),
        NaqSource::Generated { scale_max, global_seed, fraction } => {
            let full = ws.naq(*scale_max, *global_seed)?;
            if *fraction >= 1.0 {
                full.samples
            } else {
                subsample(&full, *fraction, *global_seed)?.samples
            }
        }
    };
    let mut cfg = spec.train.clone();
    if nlq.is_empty() {
        cfg.stage2_enabled = false;
        cfg.mix = Mix::NaqOnly;
    }
    let nlq_ex = nlq_examples(&nlq, &ws.store, &ws.vocab)?;
    let naq_ex = naq_examples(&naq_samples, &ws.store, &ws.vocab)?;
    let val = ws.eval_set(Split::Val)?;
    let outcome = trainer::train(&nlq_ex, &naq_ex, &val, &ws.store, ws.vocab.len(), &cfg, ws.par)?;
    let report = evaluate_set(&outcome.params, &val, &ws.store, &cfg, ws.par)?;
    Ok(ArmResult {
        name: spec.name.clone(),
        seed_index: spec.seed_index,
        outcome,
        report,
        naq_samples: naq_ex.len(),
        nlq_samples: nlq_ex.len(),
    })
}

/// Runs arms in order, or concurrently when `parallel_arms` is set.
/// Results come back in spec order either way.
pub fn run_arms(ws: &Workspace, specs: &[ArmSpec], parallel_arms: bool) -> Result<Vec<ArmResult>> {
    let mode = if parallel_arms { Parallelism::Parallel } else { Parallelism::Sequential };
    par::map(specs, mode, |s| run_arm(ws, s)).into_iter().collect()
}

pub fn baseline_spec(cfg: &ExperimentConfig, seed_index: usize) -> ArmSpec {
    let mut train = cfg.baseline.clone();
    train.seed = cfg.baseline.seed + seed_index as u64;
    train.mix = Mix::NlqOnly;
    ArmSpec { name: "baseline".into(), seed_index, train, naq: NaqSource::None, nlq_fraction: 1.0 }
}

pub fn naq_spec(cfg: &ExperimentConfig, seed_index: usize, naq_fraction: f64, scale_max: f64) -> ArmSpec {
    let mut train = cfg.train.clone();
    train.seed = cfg.train.seed + seed_index as u64;
    ArmSpec {
        name: "naq".into(),
        seed_index,
        train,
        naq: NaqSource::Generated { scale_max, global_seed: cfg.trj.seed + seed_index as u64, fraction: naq_fraction },
        nlq_fraction: 1.0,
    }
}

/// One row of a study table.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub group: String,
    pub seed: usize,
    pub report: EvalReport,
}

pub const CELL_COLUMNS: &str = "r1_iou03,r5_iou03,r1_iou05,r5_iou05,mean_r1";

fn cells(r: &EvalReport) -> [f64; 5] {
    let c = r.cells();
    [c[0], c[1], c[2], c[3], r.mean_r1]
}

/// Mean and sample standard deviation per group, groups in first-seen order.
pub fn summarize(rows: &[StudyRow]) -> Vec<(String, [f64; 5], [f64; 5])> {
    let mut groups: Vec<(String, Vec<[f64; 5]>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(g, _)| *g == r.group) {
            Some((_, v)) => v.push(cells(&r.report)),
            None => groups.push((r.group.clone(), vec![cells(&r.report)])),
        }
    }
    groups
        .into_iter()
        .map(|(g, v)| {
            let n = v.len() as f64;
            let mut mean = [0.0; 5];
            let mut std = [0.0; 5];
            for i in 0..5 {
                mean[i] = v.iter().map(|c| c[i]).sum::<f64>() / n;
                std[i] = if v.len() > 1 {
                    (v.iter().map(|c| (c[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    f64::NAN
                };
            }
            (g, mean, std)
        })
        .collect()
}

fn fmt_cells(c: &[f64; 5]) -> String {
    c.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(",")
}

/// Per-seed rows followed by `mean` and `std` rows for every group.
pub fn write_study_csv<W: Write>(group_column: &str, rows: &[StudyRow], mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "{group_column},seed,{CELL_COLUMNS},n_queries")?;
    for r in rows {
        writeln!(sink, "{},{},{},{}", csv_field(&r.group), r.seed, fmt_cells(&cells(&r.report)), r.report.n_queries)?;
    }
    let n_queries = rows.first().map_or(0, |r| r.report.n_queries);
    for (g, mean, std) in summarize(rows) {
        writeln!(sink, "{},mean,{},{n_queries}", csv_field(&g), fmt_cells(&mean))?;
        writeln!(sink, "{},std,{},{n_queries}", csv_field(&g), fmt_cells(&std))?;
    }
    sink.flush()
}

fn fraction_label(f: f64) -> String {
    format!("{f:.2}")
}

/// NaQ fraction sweep. Fraction 0 is the baseline arm.
pub fn scaling(ws: &Workspace, cfg: &ExperimentConfig) -> Result<Vec<StudyRow>> {
    let mut specs = Vec::new();
    for &f in &cfg.study.naq_fractions {
        for s in 0..cfg.study.seeds {
            let mut spec =
                if f == 0.0 { baseline_spec(cfg, s) } else { naq_spec(cfg, s, f, cfg.trj.effective_scale()) };
            spec.name = fraction_label(f);
            specs.push(spec);
        }
    }
    rows_of(run_arms(ws, &specs, cfg.study.parallel_arms)?)
}

/// All NaQ with a fraction of the NLQ train queries, plus the full-NLQ
/// baseline. Fraction 0 is zero-shot.
pub fn fewshot(ws: &Workspace, cfg: &ExperimentConfig) -> Result<Vec<StudyRow>> {
    let mut specs = Vec::new();
    for &k in &cfg.study.nlq_fractions {
        for s in 0..cfg.study.seeds {
            let mut spec = naq_spec(cfg, s, 1.0, cfg.trj.effective_scale());
            spec.nlq_fraction = k;
            spec.name = fraction_label(k);
            specs.push(spec);
        }
    }
    for s in 0..cfg.study.seeds {
        specs.push(baseline_spec(cfg, s));
    }
    rows_of(run_arms(ws, &specs, cfg.study.parallel_arms)?)
}

/// NaQ with and without jittering, sharing every other setting.
pub fn ablate_trj(ws: &Workspace, cfg: &ExperimentConfig) -> Result<Vec<StudyRow>> {
    let mut specs = Vec::new();
    for s in 0..cfg.study.seeds {
        let mut with = naq_spec(cfg, s, 1.0, cfg.trj.scale_max);
        with.name = "trj".into();
        let mut without = naq_spec(cfg, s, 1.0, 1.0);
        without.name = "no_trj".into();
        specs.push(with);
        specs.push(without);
    }
    rows_of(run_arms(ws, &specs, cfg.study.parallel_arms)?)
}

fn rows_of(results: Vec<ArmResult>) -> Result<Vec<StudyRow>> {
    Ok(results
        .into_iter()
        .map(|r| StudyRow { group: r.name, seed: r.seed_index, report: r.report })
        .collect())
}
