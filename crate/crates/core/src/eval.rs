//! Displacement metrics, best-of-K evaluation, the cross-domain task matrix,
//! ablation sweeps and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adapt::{self, write_feature_csv, AlignmentKind, DomainTag, L2Divisor};
use crate::config::{RunConfig, Selection};
use crate::data::{load_split, recentralize, ObservedSample, Point, SequenceSample};
use crate::error::{Error, Result};
use crate::graph::{self, AdjacencyKind, NormMode};
use crate::numcore::{ParamSet, Tape, Tensor};
use crate::predict::GaussianTrajectory;
use crate::train::{forward, train_task, TaskSpec, TrainConfig};

/// Published full-scale averages over the 20 ETH/UCY tasks, shown in report
/// footers for orientation only.
pub const REFERENCE_ADE: f64 = 0.96;
pub const REFERENCE_FDE: f64 = 1.82;

pub const REPORT_HEADER: &str = "source,target,ade,fde,k,samples,seed,config_hash";
pub const ABLATION_HEADER: &str = "variant,ade,fde,tasks,failed,config_hash";

fn check_shapes(op: &'static str, pred: &[Vec<Point>], truth: &[Vec<Point>]) -> Result<()> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{op}: {} predicted vs {} true pedestrians",
            pred.len(),
            truth.len()
        )));
    }
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        if p.is_empty() || p.len() != t.len() {
            return Err(Error::Contract(format!(
                "{op}: pedestrian {i} has {} predicted vs {} true steps",
                p.len(),
                t.len()
            )));
        }
    }
    Ok(())
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Mean Euclidean error over all pedestrians and steps.
pub fn ade(pred: &[Vec<Point>], truth: &[Vec<Point>]) -> Result<f64> {
    check_shapes("ade", pred, truth)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        for (a, b) in p.iter().zip(t) {
            sum += dist(*a, *b);
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Mean Euclidean error at the final step.
pub fn fde(pred: &[Vec<Point>], truth: &[Vec<Point>]) -> Result<f64> {
    check_shapes("fde", pred, truth)?;
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| dist(*p.last().expect("nonempty"), *t.last().expect("nonempty")))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Best ADE and FDE among the first `k` draws.
pub fn best_of(
    draws: &[Vec<Vec<Point>>],
    truth: &[Vec<Point>],
    k: usize,
    selection: Selection,
) -> Result<(f64, f64)> {
    if k < 1 || k > draws.len() {
        return Err(Error::Config(format!("k = {k} with {} draws", draws.len())));
    }
    let mut best: Option<(f64, f64)> = None;
    let (mut best_ade, mut best_fde) = (f64::INFINITY, f64::INFINITY);
    for d in &draws[..k] {
        let (a, f) = (ade(d, truth)?, fde(d, truth)?);
        match selection {
            Selection::PerMetric => {
                best_ade = best_ade.min(a);
                best_fde = best_fde.min(f);
            }
            Selection::ByAde => {
                if best.is_none_or(|(ba, _)| a < ba) {
                    best = Some((a, f));
                }
            }
        }
    }
    Ok(best.unwrap_or((best_ade, best_fde)))
}

/// Pedestrian-weighted metrics over an evaluation set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    /// Draws per sample; 0 marks deterministic mean prediction.
    pub k: usize,
    pub ade: f64,
    pub fde: f64,
    pub samples: usize,
    pub peds: usize,
}

/// One evaluation item: predicted distribution in relative coordinates, the
/// sample's offset and the true future in world coordinates.
pub struct Scored {
    pub prediction: GaussianTrajectory,
    pub offset: Point,
    pub truth: Vec<Vec<Point>>,
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn weighted(k: usize, per_sample: &[(f64, f64, usize)]) -> EvalResult {
    let peds: usize = per_sample.iter().map(|s| s.2).sum();
    let ade = per_sample.iter().map(|s| s.0 * s.2 as f64).sum::<f64>() / peds as f64;
    let fde = per_sample.iter().map(|s| s.1 * s.2 as f64).sum::<f64>() / peds as f64;
    EvalResult {
        k,
        ade,
        fde,
        samples: per_sample.len(),
        peds,
    }
}

/// Best-of-K metrics for every `k` in `ks`, each taken over a prefix of one
/// `max(ks)`-draw sample, so larger `k` never scores worse. Sample `i` draws
/// from its own stream of `seed`.
pub fn best_of_k_scored(
    items: &[Scored],
    ks: &[usize],
    selection: Selection,
    seed: u64,
) -> Result<Vec<EvalResult>> {
    if items.is_empty() {
        return Err(Error::EmptyDomain("no samples to evaluate".into()));
    }
    let k_max = *ks
        .iter()
        .max()
        .ok_or_else(|| Error::Config("no k given".into()))?;
    if ks.contains(&0) {
        return Err(Error::Config(
            "number of sampled trajectories must be >= 1".into(),
        ));
    }
    let per_sample: Vec<Vec<(f64, f64, usize)>> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let draws: Vec<Vec<Vec<Point>>> = item
                .prediction
                .sample_trajectories(k_max, &mut sample_rng(seed, i))?
                .iter()
                .map(|d| recentralize(d, item.offset))
                .collect();
            ks.iter()
                .map(|&k| {
                    let (a, f) = best_of(&draws, &item.truth, k, selection)?;
                    Ok((a, f, item.truth.len()))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(ks
        .iter()
        .enumerate()
        .map(|(j, &k)| weighted(k, &per_sample.iter().map(|s| s[j]).collect::<Vec<_>>()))
        .collect())
}

/// Metrics of the predicted means.
pub fn mean_scored(items: &[Scored]) -> Result<EvalResult> {
    if items.is_empty() {
        return Err(Error::EmptyDomain("no samples to evaluate".into()));
    }
    let per_sample = items
        .iter()
        .map(|item| {
            let pred = recentralize(&item.prediction.means(), item.offset);
            Ok((
                ade(&pred, &item.truth)?,
                fde(&pred, &item.truth)?,
                item.truth.len(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(weighted(0, &per_sample))
}

/// Runs the model on every sample.
pub fn score_samples(
    params: &ParamSet,
    cfg: &TrainConfig,
    samples: &[SequenceSample],
) -> Result<Vec<Scored>> {
    samples
        .par_iter()
        .map(|s| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false);
            let (_, head) = forward(&mut tape, &bound, cfg, &s.observed())?;
            Ok(Scored {
                prediction: GaussianTrajectory::from_head(&tape, &head),
                offset: s.offset,
                truth: s.future_absolute(),
            })
        })
        .collect()
}

pub fn best_of_k_eval(
    params: &ParamSet,
    cfg: &TrainConfig,
    samples: &[SequenceSample],
    k: usize,
    selection: Selection,
    seed: u64,
) -> Result<EvalResult> {
    if k < 1 {
        return Err(Error::Config(
            "number of sampled trajectories must be >= 1".into(),
        ));
    }
    let items = score_samples(params, cfg, samples)?;
    Ok(best_of_k_scored(&items, &[k], selection, seed)?[0])
}

/// One row of a report.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskReport {
    pub source: String,
    pub target: String,
    pub ade: f64,
    pub fde: f64,
    pub k: usize,
    pub samples: usize,
    pub seed: u64,
    pub config_hash: String,
    /// Set when the task failed; metrics are then NaN.
    pub error: Option<String>,
}

impl TaskReport {
    pub fn task(&self) -> String {
        format!("{}2{}", self.source, self.target)
    }

    fn failed(
        source: String,
        target: String,
        k: usize,
        seed: u64,
        config_hash: String,
        err: &Error,
    ) -> Self {
        Self {
            source,
            target,
            ade: f64::NAN,
            fde: f64::NAN,
            k,
            samples: 0,
            seed,
            config_hash,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatrixReport {
    pub rows: Vec<TaskReport>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl MatrixReport {
    /// Unweighted mean ADE and FDE over rows that completed.
    pub fn averages(&self) -> Option<(f64, f64)> {
        let ok: Vec<&TaskReport> = self.rows.iter().filter(|r| r.error.is_none()).collect();
        if ok.is_empty() {
            return None;
        }
        let n = ok.len() as f64;
        Some((
            ok.iter().map(|r| r.ade).sum::<f64>() / n,
            ok.iter().map(|r| r.fde).sum::<f64>() / n,
        ))
    }

    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{},{},{},{}",
                r.source, r.target, r.ade, r.fde, r.k, r.samples, r.seed, r.config_hash
            )
            .expect("write to string");
        }
        if let Some((a, f)) = self.averages() {
            writeln!(out, "Ave,,{a:.6},{f:.6},,,,").expect("write to string");
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| task | ADE | FDE | K | samples | seed | config |\n|---|---|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            match &r.error {
                None => writeln!(
                    out,
                    "| {} | {:.4} | {:.4} | {} | {} | {} | `{}` |",
                    r.task(),
                    r.ade,
                    r.fde,
                    r.k,
                    r.samples,
                    r.seed,
                    r.config_hash
                ),
                Some(e) => writeln!(
                    out,
                    "| {} | failed: {} | | | | {} | `{}` |",
                    r.task(),
                    e.replace('|', "/"),
                    r.seed,
                    r.config_hash
                ),
            }
            .expect("write to string");
        }
        if let Some((a, f)) = self.averages() {
            let n = self.rows.len() - self.failed();
            writeln!(
                out,
                "| **Ave** (mean of {n} tasks) | {a:.4} | {f:.4} | | | | |"
            )
            .expect("write to string");
        }
        writeln!(
            out,
            "\nReference: published full-scale ETH/UCY averages are ADE {REFERENCE_ADE:.2} / FDE {REFERENCE_FDE:.2}. \
             Desk-scale runs are not expected to reproduce them."
        )
        .expect("write to string");
        out
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Markdown => self.to_markdown(),
        }
    }
}

pub fn emit_report(report: &MatrixReport, format: ReportFormat, path: &Path) -> Result<()> {
    write_text(path, &report.render(format))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a CSV written by [`MatrixReport::to_csv`]. The averages line is
/// skipped since it is derived.
pub fn parse_report_csv(text: &str) -> Result<MatrixReport> {
    let origin = PathBuf::from("<report>");
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == REPORT_HEADER => {}
        _ => {
            return Err(Error::Parse {
                path: origin,
                line: 1,
                msg: "missing report header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with("Ave,") {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            path: origin.clone(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(err("expected 8 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
        let int = |s: &str| s.parse::<u64>().map_err(|_| err("bad integer"));
        let (ade, fde) = (num(f[2])?, num(f[3])?);
        rows.push(TaskReport {
            source: f[0].to_string(),
            target: f[1].to_string(),
            ade,
            fde,
            k: int(f[4])? as usize,
            samples: int(f[5])? as usize,
            seed: int(f[6])?,
            config_hash: f[7].to_string(),
            error: (ade.is_nan() || fde.is_nan()).then(|| "failed".to_string()),
        });
    }
    Ok(MatrixReport { rows })
}

/// `A`, `B`, … for the first 26 domains, then `D26`, `D27`, ….
pub fn domain_label(index: usize) -> String {
    if index < 26 {
        char::from(b'A' + index as u8).to_string()
    } else {
        format!("D{index}")
    }
}

/// Every ordered `(source, target)` pair with `source ≠ target`,
/// source-major.
pub fn enumerate_tasks(domains: usize) -> Vec<(usize, usize)> {
    (0..domains)
        .flat_map(|s| (0..domains).filter(move |&t| t != s).map(move |t| (s, t)))
        .collect()
}

/// Trains on `source` (train split, plus the observed part of the target
/// validation split) and evaluates best-of-K on the target test split.
pub fn run_task(
    source: &Path,
    target: &Path,
    cfg: &RunConfig,
    eval_seed: u64,
    out: &Path,
) -> Result<EvalResult> {
    cfg.validate()?;
    let task = TaskSpec {
        source: source.to_path_buf(),
        target: target.to_path_buf(),
        out_dir: out.to_path_buf(),
    };
    let ckpt = train_task(&task, &cfg.train)?;
    let test = load_split(target, "test", cfg.train.frame_interval, cfg.train.window())?;
    best_of_k_eval(
        &ckpt.params,
        &cfg.train,
        &test,
        cfg.k,
        cfg.selection,
        eval_seed,
    )
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))
}

fn matrix_rows(domains: &[PathBuf], cfg: &RunConfig, seed: u64, out: &Path) -> Vec<TaskReport> {
    let hash = cfg.train.hash();
    enumerate_tasks(domains.len())
        .into_par_iter()
        .map(|(s, t)| {
            let (src, tgt) = (domain_label(s), domain_label(t));
            let dir = out.join(format!("{src}2{tgt}"));
            let row = match run_task(&domains[s], &domains[t], cfg, seed, &dir) {
                Ok(r) => TaskReport {
                    source: src,
                    target: tgt,
                    ade: r.ade,
                    fde: r.fde,
                    k: r.k,
                    samples: r.samples,
                    seed,
                    config_hash: hash.clone(),
                    error: None,
                },
                Err(e) => {
                    log::warn!("task {src}2{tgt} failed: {e}");
                    TaskReport::failed(src, tgt, cfg.k, seed, hash.clone(), &e)
                }
            };
            let single = MatrixReport {
                rows: vec![row.clone()],
            };
            if let Err(e) = emit_report(&single, ReportFormat::Csv, &dir.join("report.csv")) {
                log::warn!("could not write {}: {e}", dir.display());
            }
            row
        })
        .collect()
}

fn check_domains(domains: &[PathBuf]) -> Result<()> {
    if domains.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 domains, got {}",
            domains.len()
        )));
    }
    Ok(())
}

/// Trains and evaluates every ordered domain pair, running up to `jobs`
/// tasks at once. Failed tasks become rows with an error. Writes
/// `matrix.csv` and `matrix.md` plus one directory per task under `out`.
pub fn run_task_matrix(
    domains: &[PathBuf],
    cfg: &RunConfig,
    seed: u64,
    out: &Path,
    jobs: usize,
) -> Result<MatrixReport> {
    check_domains(domains)?;
    cfg.validate()?;
    let rows = pool(jobs)?.install(|| matrix_rows(domains, cfg, seed, out));
    let report = MatrixReport { rows };
    emit_report(&report, ReportFormat::Csv, &out.join("matrix.csv"))?;
    emit_report(&report, ReportFormat::Markdown, &out.join("matrix.md"))?;
    Ok(report)
}

pub const LAMBDA_SWEEP: [f64; 5] = [0.01, 0.1, 1.0, 5.0, 10.0];

/// Variant label and configuration for every row of every sweep, each
/// changing one field of `base`.
pub fn ablation_variants(base: &RunConfig) -> Vec<(&'static str, Vec<(String, RunConfig)>)> {
    let with = |f: &dyn Fn(&mut TrainConfig)| {
        let mut c = base.clone();
        f(&mut c.train);
        c
    };
    let lambda = LAMBDA_SWEEP
        .iter()
        .map(|&l| (format!("lambda={l}"), with(&|c| c.lambda = l)))
        .collect();
    let adjacency = [
        AdjacencyKind::L2,
        AdjacencyKind::reciprocal(),
        AdjacencyKind::Gaussian { sigma: 2.0 },
        AdjacencyKind::Gaussian { sigma: 4.0 },
        AdjacencyKind::Gaussian { sigma: 8.0 },
        AdjacencyKind::rational(),
    ]
    .into_iter()
    .map(|k| (k.to_string(), with(&|c| c.adjacency = k)))
    .collect();
    let alignment = AlignmentKind::ALL
        .into_iter()
        .map(|k| (k.to_string(), with(&|c| c.alignment = k)))
        .collect();
    let norm = [NormMode::AsWritten, NormMode::Symmetric]
        .into_iter()
        .map(|m| (m.to_string(), with(&|c| c.norm = m)))
        .collect();
    let divisor = [L2Divisor::FeatureDim, L2Divisor::VectorDim]
        .into_iter()
        .map(|d| (d.to_string(), with(&|c| c.l2_divisor = d)))
        .collect();
    vec![
        ("lambda", lambda),
        ("adjacency", adjacency),
        ("alignment", alignment),
        ("norm", norm),
        ("l2_divisor", divisor),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub ade: f64,
    pub fde: f64,
    pub tasks: usize,
    pub failed: usize,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSweep {
    pub name: String,
    pub rows: Vec<AblationRow>,
}

impl AblationSweep {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{ABLATION_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.6},{:.6},{},{},{}",
                r.variant, r.ade, r.fde, r.tasks, r.failed, r.config_hash
            )
            .expect("write to string");
        }
        out
    }
}

/// Runs the full task matrix once per variant of every sweep and writes
/// `ablation_<sweep>.csv` under `out`. Each row holds the unweighted task
/// averages of one variant.
pub fn run_ablations(
    domains: &[PathBuf],
    cfg: &RunConfig,
    seed: u64,
    out: &Path,
    jobs: usize,
) -> Result<Vec<AblationSweep>> {
    check_domains(domains)?;
    cfg.validate()?;
    let pool = pool(jobs)?;
    let mut sweeps = Vec::new();
    for (name, variants) in ablation_variants(cfg) {
        let mut rows = Vec::new();
        for (label, variant) in variants {
            let dir = out.join(name).join(sanitize(&label));
            let report = MatrixReport {
                rows: pool.install(|| matrix_rows(domains, &variant, seed, &dir)),
            };
            emit_report(&report, ReportFormat::Csv, &dir.join("matrix.csv"))?;
            let (ade, fde) = report.averages().unwrap_or((f64::NAN, f64::NAN));
            rows.push(AblationRow {
                variant: label,
                ade,
                fde,
                tasks: report.rows.len(),
                failed: report.failed(),
                config_hash: variant.train.hash(),
            });
        }
        let sweep = AblationSweep {
            name: name.to_string(),
            rows,
        };
        write_text(&out.join(format!("ablation_{name}.csv")), &sweep.to_csv())?;
        sweeps.push(sweep);
    }
    Ok(sweeps)
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Flattened encoder features of every pedestrian, one row each.
pub fn encode_feature_set(
    params: &ParamSet,
    cfg: &TrainConfig,
    samples: &[ObservedSample],
    domain: DomainTag,
) -> Result<Tensor> {
    if samples.is_empty() {
        return Err(Error::EmptyDomain(format!("no {domain} samples to encode")));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for s in samples {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let features = graph::encode(&mut tape, s, &bound, &cfg.graph())?;
        let set = adapt::flatten_features(&mut tape, features, domain)?;
        let v = tape.value(set.vectors);
        rows += v.rows();
        data.extend_from_slice(v.data());
    }
    Tensor::new(vec![rows, cfg.adapt().vector_dim()], data)
}

/// Writes source and target feature vectors to one CSV.
pub fn export_features(
    params: &ParamSet,
    cfg: &TrainConfig,
    source: &[ObservedSample],
    target: &[ObservedSample],
    path: &Path,
) -> Result<()> {
    let sets = vec![
        (
            DomainTag::Source.to_string(),
            encode_feature_set(params, cfg, source, DomainTag::Source)?,
        ),
        (
            DomainTag::Target.to_string(),
            encode_feature_set(params, cfg, target, DomainTag::Target)?,
        ),
    ];
    write_feature_csv(path, &sets)
}
