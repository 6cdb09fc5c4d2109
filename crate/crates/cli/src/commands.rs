//! One function per CLI verb. Every file written is a pure function of the
//! configuration.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use naq_core::annotations::{parse_naq, write_naq, Split};
use naq_core::checkpoint::{read_checkpoint, write_checkpoint};
use naq_core::corpus::Corpus;
use naq_core::metrics::{evaluate, write_predictions, write_report_csv, EvalReport};
use naq_core::synthworld::generate_world;
use naq_core::trainer::{predict_all, write_history_csv};
use naq_core::Parallelism;
use serde::Serialize;

use crate::config::{digest_of, sha256_hex, ExperimentConfig};
use crate::studies::{self, baseline_spec, naq_spec, ArmResult, NaqSource, StudyRow, Workspace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Arm {
    Baseline,
    Naq,
    Both,
}

impl Arm {
    fn expand(self) -> Vec<&'static str> {
        match self {
            Arm::Baseline => vec!["baseline"],
            Arm::Naq => vec!["naq"],
            Arm::Both => vec!["baseline", "naq"],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    Val,
    Test,
}

impl EvalSplit {
    fn split(self) -> Split {
        match self {
            EvalSplit::Val => Split::Val,
            EvalSplit::Test => Split::Test,
        }
    }

    fn name(self) -> &'static str {
        match self {
            EvalSplit::Val => "val",
            EvalSplit::Test => "test",
        }
    }
}

fn parallelism(cfg: &ExperimentConfig) -> Parallelism {
    if cfg.parallel {
        Parallelism::Parallel
    } else {
        Parallelism::Sequential
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).with_context(|| format!("reading {}", path.display()))?))
}

#[derive(Serialize)]
struct Manifest<T: Serialize> {
    command: &'static str,
    config_digest: String,
    #[serde(flatten)]
    details: T,
    /// Relative path to SHA-256 of every file written.
    files: BTreeMap<String, String>,
}

fn write_manifest<T: Serialize>(
    path: &Path,
    root: &Path,
    command: &'static str,
    config_digest: String,
    details: T,
    written: &[PathBuf],
) -> Result<()> {
    let mut files = BTreeMap::new();
    for p in written {
        let rel = p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/");
        files.insert(rel, file_digest(p)?);
    }
    let manifest = Manifest { command, config_digest, details, files };
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn gen_world(cfg: &ExperimentConfig) -> Result<()> {
    let world = generate_world(&cfg.world, parallelism(cfg))?;
    let dir = cfg.corpus_dir();
    let corpus = Corpus::from(&world);
    let written = corpus.save(&dir).with_context(|| format!("writing corpus to {}", dir.display()))?;
    #[derive(Serialize)]
    struct Details {
        videos: usize,
        narrations: usize,
        queries: usize,
    }
    let details = Details {
        videos: corpus.videos.len(),
        narrations: corpus.videos.iter().map(|v| v.timeline.narrations.len()).sum(),
        queries: corpus.nlq.len(),
    };
    println!(
        "wrote {} videos, {} narrations, {} queries to {}",
        details.videos,
        details.narrations,
        details.queries,
        dir.display()
    );
    write_manifest(&dir.join("manifest.json"), &dir, "gen-world", digest_of(&cfg.world), details, &written)
}

fn load_workspace(cfg: &ExperimentConfig) -> Result<Workspace> {
    let dir = cfg.corpus_dir();
    Workspace::load(&dir, parallelism(cfg)).with_context(|| format!("loading corpus from {}", dir.display()))
}

pub fn gen_naq(cfg: &ExperimentConfig) -> Result<()> {
    let ws = load_workspace(cfg)?;
    let ds = ws.naq(cfg.trj.effective_scale(), cfg.trj.seed)?;
    let path = cfg.naq_file();
    write_naq(&ds.samples, create(&path)?)?;
    let p = &ds.provenance;
    println!(
        "naq samples {} dropped {} (empty text {}, degenerate {}) alpha {:.6} S {}",
        ds.len(),
        ds.dropped_empty_text + ds.dropped_degenerate,
        ds.dropped_empty_text,
        ds.dropped_degenerate,
        p.trj.alpha_sec,
        p.trj.scale_max
    );
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
    #[derive(Serialize)]
    struct Details<'a> {
        samples: usize,
        dropped_empty_text: usize,
        dropped_degenerate: usize,
        alpha_sec: f64,
        scale_max: f64,
        global_seed: u64,
        corpus_digest: &'a str,
    }
    let details = Details {
        samples: ds.len(),
        dropped_empty_text: ds.dropped_empty_text,
        dropped_degenerate: ds.dropped_degenerate,
        alpha_sec: p.trj.alpha_sec,
        scale_max: p.trj.scale_max,
        global_seed: p.global_seed,
        corpus_digest: &p.corpus_digest,
    };
    let root = path.parent().unwrap_or(Path::new("."));
    write_manifest(&root.join("manifest.json"), root, "gen-naq", digest_of(&cfg.trj), details, std::slice::from_ref(&path))
}

fn run_dir(cfg: &ExperimentConfig, arm: &str) -> PathBuf {
    cfg.paths.output_dir.join("runs").join(arm)
}

fn load_naq(cfg: &ExperimentConfig) -> Result<Vec<naq_core::NaqSample>> {
    let path = cfg.naq_file();
    let file = File::open(&path).with_context(|| format!("opening {} (run gen-naq first)", path.display()))?;
    Ok(parse_naq(BufReader::new(file))?)
}

/// Evaluates `params` on a split and writes the report and predictions.
fn eval_and_write(
    ws: &Workspace,
    params: &naq_core::localizer::ModelParams,
    cfg: &ExperimentConfig,
    arm: &str,
    split: EvalSplit,
    report_name: &str,
    predictions_name: &str,
) -> Result<EvalReport> {
    let train_cfg = if arm == "baseline" { &cfg.baseline } else { &cfg.train };
    let set = ws.eval_set(split.split())?;
    let preds = predict_all(params, &set, &ws.store, train_cfg.top_k, train_cfg.max_len_steps, ws.par)?;
    let report = evaluate(&preds, &set.ground_truth, set.labels.as_ref())?;
    let dir = run_dir(cfg, arm);
    write_report_csv(&report, create(&dir.join(report_name))?)?;
    write_predictions(&preds, create(&dir.join(predictions_name))?)?;
    Ok(report)
}

const COMPARISON_HEADER: &str = "arm,r1_iou03,r5_iou03,r1_iou05,r5_iou05,mean_r1,n_queries";

fn comparison_row(name: &str, r: &[f64; 5], n: usize) -> String {
    let cells: Vec<String> = r.iter().map(|x| format!("{x:.4}")).collect();
    format!("{name},{},{n}", cells.join(","))
}

fn row_cells(r: &EvalReport) -> [f64; 5] {
    let c = r.cells();
    [c[0], c[1], c[2], c[3], r.mean_r1]
}

pub fn train(cfg: &ExperimentConfig, arm: Arm, split: EvalSplit) -> Result<()> {
    let ws = load_workspace(cfg)?;
    let mut reports = Vec::new();
    for name in arm.expand() {
        let spec = if name == "baseline" {
            baseline_spec(cfg, 0)
        } else {
            let mut s = naq_spec(cfg, 0, 1.0, cfg.trj.effective_scale());
            s.naq = NaqSource::Samples(load_naq(cfg)?);
            s
        };
        let result: ArmResult = studies::run_arm(&ws, &spec)?;
        let dir = run_dir(cfg, name);
        write_checkpoint(&result.outcome.params, create(&dir.join("model.naqm"))?)?;
        write_history_csv(&[&result.outcome.stage1, &result.outcome.stage2], create(&dir.join("history.csv"))?)?;
        let report = eval_and_write(&ws, &result.outcome.params, cfg, name, split, "report.csv", "predictions.jsonl")?;
        println!(
            "{name}: nlq {} naq {} stage1 epochs {} stage2 epochs {} {} R@1@0.3 {:.2} R@1@0.5 {:.2} mean R@1 {:.2}",
            result.nlq_samples,
            result.naq_samples,
            result.outcome.stage1.losses.len(),
            result.outcome.stage2.losses.len(),
            split.name(),
            report.r1_iou03,
            report.r1_iou05,
            report.mean_r1
        );
        reports.push((name, report));
    }
    if let [(_, base), (_, naq)] = &reports[..] {
        let (b, n) = (row_cells(base), row_cells(naq));
        let mut gain = [0.0; 5];
        for i in 0..5 {
            gain[i] = n[i] - b[i];
        }
        let mut w = create(&cfg.paths.output_dir.join("comparison.csv"))?;
        writeln!(w, "{COMPARISON_HEADER}")?;
        writeln!(w, "{}", comparison_row("baseline", &b, base.n_queries))?;
        writeln!(w, "{}", comparison_row("naq", &n, naq.n_queries))?;
        writeln!(w, "{}", comparison_row("gain", &gain, naq.n_queries))?;
        w.flush()?;
        println!("absolute gain R@1@0.3 {:+.2} mean R@1 {:+.2}", gain[0], gain[4]);
    }
    Ok(())
}

fn load_model(cfg: &ExperimentConfig, arm: &str) -> Result<naq_core::localizer::ModelParams> {
    let path = run_dir(cfg, arm).join("model.naqm");
    let file = File::open(&path).with_context(|| format!("no checkpoint at {} (train first)", path.display()))?;
    Ok(read_checkpoint(BufReader::new(file))?)
}

pub fn eval(cfg: &ExperimentConfig, arm: Arm, split: EvalSplit) -> Result<()> {
    let ws = load_workspace(cfg)?;
    for name in arm.expand() {
        let params = load_model(cfg, name)?;
        let report = eval_and_write(
            &ws,
            &params,
            cfg,
            name,
            split,
            &format!("eval_{}.csv", split.name()),
            &format!("predictions_{}.jsonl", split.name()),
        )?;
        println!("{name} {}: {}", split.name(), fmt_report(&report));
    }
    Ok(())
}

fn fmt_report(r: &EvalReport) -> String {
    format!(
        "R@1@0.3 {:.2} R@5@0.3 {:.2} R@1@0.5 {:.2} R@5@0.5 {:.2} mean R@1 {:.2} ({} queries)",
        r.r1_iou03, r.r5_iou03, r.r1_iou05, r.r5_iou05, r.mean_r1, r.n_queries
    )
}

/// Re-evaluates every trained arm on both held-out splits into one table.
pub fn report(cfg: &ExperimentConfig) -> Result<()> {
    let ws = load_workspace(cfg)?;
    let path = cfg.paths.output_dir.join("report.csv");
    let mut w = create(&path)?;
    writeln!(w, "arm,split,stratum,{CELLS_AND_N}")?;
    let mut found = 0;
    for name in ["baseline", "naq"] {
        if !run_dir(cfg, name).join("model.naqm").exists() {
            continue;
        }
        found += 1;
        let params = load_model(cfg, name)?;
        let train_cfg = if name == "baseline" { &cfg.baseline } else { &cfg.train };
        for split in [EvalSplit::Val, EvalSplit::Test] {
            let set = ws.eval_set(split.split())?;
            let preds = predict_all(&params, &set, &ws.store, train_cfg.top_k, train_cfg.max_len_steps, ws.par)?;
            let r = evaluate(&preds, &set.ground_truth, set.labels.as_ref())?;
            println!("{name} {}: {}", split.name(), fmt_report(&r));
            let strata = std::iter::once(("all", &r)).chain(r.strata.iter().map(|(k, v)| (k.as_str(), v)));
            for (stratum, sub) in strata {
                let c = row_cells(sub);
                let cells: Vec<String> = c.iter().map(|x| format!("{x:.4}")).collect();
                writeln!(w, "{name},{},{stratum},{},{}", split.name(), cells.join(","), sub.n_queries)?;
            }
        }
    }
    w.flush()?;
    if found == 0 {
        anyhow::bail!("no trained arms under {}", cfg.paths.output_dir.join("runs").display());
    }
    Ok(())
}

const CELLS_AND_N: &str = "r1_iou03,r5_iou03,r1_iou05,r5_iou05,mean_r1,n_queries";

fn write_study(cfg: &ExperimentConfig, file: &str, group_column: &str, rows: &[StudyRow]) -> Result<()> {
    let path = cfg.paths.output_dir.join(file);
    studies::write_study_csv(group_column, rows, create(&path)?)?;
    for (g, mean, _) in studies::summarize(rows) {
        println!("{group_column} {g}: mean R@1@0.3 {:.2} R@5@0.3 {:.2} mean R@1 {:.2}", mean[0], mean[1], mean[4]);
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn scaling(cfg: &ExperimentConfig) -> Result<()> {
    let ws = load_workspace(cfg)?;
    write_study(cfg, "scaling.csv", "naq_fraction", &studies::scaling(&ws, cfg)?)
}

pub fn fewshot(cfg: &ExperimentConfig) -> Result<()> {
    let ws = load_workspace(cfg)?;
    write_study(cfg, "fewshot.csv", "nlq_fraction", &studies::fewshot(&ws, cfg)?)
}

pub fn ablate_trj(cfg: &ExperimentConfig) -> Result<()> {
    let ws = load_workspace(cfg)?;
    write_study(cfg, "ablation.csv", "arm", &studies::ablate_trj(&ws, cfg)?)
}
