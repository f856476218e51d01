//! Experiment orchestration: seed-matrix benchmarks and the three studies,
//! with per-job failure isolation, content-hashed resumability, and CSV
//! artifacts that rebuild byte-for-byte from the same config.

mod plot;
mod studies;

pub use plot::{histogram_svg, scatter_svg};
pub use studies::{
    run_accuracy_alignment_study, run_crossover_study, run_misalignment_study, spearman,
    AccuracyAlignmentOutcome, CrossoverOutcome, MisalignmentOutcome,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbones::train::{accuracy, train_erm, ModelSpec, TrainConfig};
use crate::backbones::{load_checkpoint, save_checkpoint, Model, Readout};
use crate::data::{synmotif, tracks, Dataset, PointCloud, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport, REPORT_HEADER};
use crate::posthoc::{
    gnnexplainer, gradcam, gradxinput, integrated_gradients, pgexplainer, subgraphx,
    InterpreterSpec,
};
use crate::scores::{methods, save_scores, ImportanceScores};
use crate::selfinterp::{
    extract_scores, load_self_model, save_self_model, train_attention, train_lri_bern,
    train_lri_gauss, SelfSpec,
};

pub const CONFIG_VERSION: u32 = 1;

/// Which dataset to synthesize and from what generator seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synmotif {
        seed: u64,
        #[serde(default)]
        config: synmotif::SynMotifConfig,
    },
    Tracks {
        seed: u64,
        #[serde(default)]
        config: tracks::TracksConfig,
    },
}

impl DatasetConfig {
    pub fn build(&self) -> Result<Dataset> {
        match self {
            DatasetConfig::Synmotif { seed, config } => synmotif::generate(config, *seed),
            DatasetConfig::Tracks { seed, config } => tracks::generate(config, *seed),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            DatasetConfig::Synmotif { .. } => "synmotif",
            DatasetConfig::Tracks { .. } => "tracks",
        }
    }
}

/// One experiment: a dataset, a set of architectures, methods, and seeds.
/// `jobs` and `out_dir` steer execution only and do not enter the config
/// hash, so resuming with different parallelism or a relocated directory
/// still matches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub config_version: u32,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub architectures: Vec<ModelSpec>,
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub interpret: InterpreterSpec,
    #[serde(default)]
    pub selector: SelfSpecConfig,
    #[serde(default = "default_precision_k")]
    pub precision_k: usize,
    #[serde(default = "default_study_models")]
    pub study_models: usize,
}

fn default_jobs() -> usize {
    1
}

fn default_precision_k() -> usize {
    20
}

fn default_study_models() -> usize {
    20
}

/// Serde twin of [`SelfSpec`] so configs can omit any subset of fields.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfSpecConfig {
    pub beta: f64,
    pub r: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for SelfSpecConfig {
    fn default() -> Self {
        let s = SelfSpec::default();
        SelfSpecConfig { beta: s.beta, r: s.r, sigma_min: s.sigma_min, sigma_max: s.sigma_max }
    }
}

impl From<SelfSpecConfig> for SelfSpec {
    fn from(c: SelfSpecConfig) -> Self {
        SelfSpec { beta: c.beta, r: c.r, sigma_min: c.sigma_min, sigma_max: c.sigma_max }
    }
}

const POSTHOC_METHODS: [&str; 6] = [
    methods::GRADXINPUT,
    methods::INTGRAD,
    methods::GRADCAM,
    methods::GNNEXPLAINER,
    methods::PGEXPLAINER,
    methods::SUBGRAPHX,
];
const SELF_METHODS: [&str; 3] = [methods::LRI_BERN, methods::LRI_GAUSS, methods::ATTENTION];

pub fn is_posthoc(method: &str) -> bool {
    POSTHOC_METHODS.contains(&method)
}

pub fn is_self_trained(method: &str) -> bool {
    SELF_METHODS.contains(&method)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config_version {} unsupported, this build reads {CONFIG_VERSION}",
                self.config_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list must be non-empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seed list contains duplicates".into()));
        }
        if self.architectures.is_empty() {
            return Err(Error::Config("at least one architecture is required".into()));
        }
        for arch in &self.architectures {
            if arch.hidden == 0 || arch.layers == 0 || arch.k_neighbors == 0 {
                return Err(Error::Config(format!(
                    "architecture dimensions must be >= 1, got {arch:?}"
                )));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        for m in &self.methods {
            if !is_posthoc(m) && !is_self_trained(m) {
                return Err(Error::Config(format!(
                    "unknown method `{m}`; known: {POSTHOC_METHODS:?} and {SELF_METHODS:?}"
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.methods {
            if !seen.insert(m) {
                return Err(Error::Config(format!("method `{m}` listed twice")));
            }
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        if self.precision_k == 0 {
            return Err(Error::Config("precision_k must be >= 1".into()));
        }
        if self.study_models < 2 {
            return Err(Error::Config("study_models must be >= 2".into()));
        }
        self.train.validate()?;
        self.interpret.validate()?;
        SelfSpec::from(self.selector).validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!(
            "cannot read config {}: {e}",
            path.display()
        )))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("unserializable config: {e}")))
    }
}

/// Content hash of the experiment identity: everything except execution
/// knobs (`jobs`, `out_dir`).
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut canon = cfg.clone();
    canon.jobs = default_jobs();
    canon.out_dir = None;
    let text = canon.to_toml()?;
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    Ok(format!("{:x}", h.finalize()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum JobStatus {
    Completed,
    Failed { error: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub status: JobStatus,
    pub wall_secs: f64,
    pub artifacts: Vec<PathBuf>,
    /// Carried over from a previous run instead of being executed.
    #[serde(default)]
    pub reused: bool,
}

/// What ran, what failed, and where the artifacts live.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunLedger {
    pub config_hash: String,
    pub jobs: Vec<JobRecord>,
}

impl RunLedger {
    pub fn failed_jobs(&self) -> Vec<&JobRecord> {
        self.jobs.iter().filter(|j| matches!(j.status, JobStatus::Failed { .. })).collect()
    }

    pub fn job(&self, id: &str) -> Option<&JobRecord> {
        self.jobs.iter().find(|j| j.id == id)
    }

    fn path(out_dir: &Path) -> PathBuf {
        out_dir.join("ledger.json")
    }

    pub fn load(out_dir: &Path) -> Result<Option<RunLedger>> {
        let path = Self::path(out_dir);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        let ledger = serde_json::from_str(&text).map_err(|e| Error::Artifact {
            path: path.display().to_string(),
            msg: format!("unreadable ledger: {e}"),
        })?;
        Ok(Some(ledger))
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(Self::path(out_dir), text + "\n")?;
        Ok(())
    }

    /// A completed record whose artifacts are all still on disk.
    fn intact(&self, id: &str) -> Option<&JobRecord> {
        self.job(id).filter(|j| {
            j.status == JobStatus::Completed && j.artifacts.iter().all(|p| p.exists())
        })
    }
}

/// Refuse to write results for one experiment into another's directory.
pub fn check_hash_compat(out_dir: &Path, hash: &str) -> Result<Option<RunLedger>> {
    match RunLedger::load(out_dir)? {
        Some(ledger) if ledger.config_hash != hash => Err(Error::Config(format!(
            "output directory {} holds results for config hash {}, this config hashes to {hash}",
            out_dir.display(),
            ledger.config_hash
        ))),
        other => Ok(other),
    }
}

pub(crate) fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build a {jobs}-thread pool: {e}")))
}

fn arch_id(arch: &ModelSpec) -> String {
    let readout = match arch.readout {
        Readout::MeanPool => "mean",
        Readout::AttnPool => "attn",
    };
    format!(
        "{}-{readout}-h{}-l{}-k{}",
        arch.backbone.name(),
        arch.hidden,
        arch.layers,
        arch.k_neighbors
    )
}

/// The trainer a method needs: post-hoc methods share one plain model per
/// (architecture, seed); self-interpretable methods train their own.
fn trainer_of(method: &str) -> &str {
    if is_posthoc(method) {
        "erm"
    } else {
        method
    }
}

/// Run one training job and persist the checkpoint.
fn run_train_job(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    arch: &ModelSpec,
    seed: u64,
    trainer: &str,
    path: &Path,
) -> Result<()> {
    match trainer {
        "erm" => {
            let model = train_erm(ds, arch, &cfg.train, seed)?;
            save_checkpoint(path, &model, "erm", &[], &[])
        }
        m if m == methods::LRI_BERN => {
            let sm = train_lri_bern(ds, arch, &cfg.train, &cfg.selector.into(), seed)?;
            save_self_model(path, &sm)
        }
        m if m == methods::LRI_GAUSS => {
            let sm = train_lri_gauss(ds, arch, &cfg.train, &cfg.selector.into(), seed)?;
            save_self_model(path, &sm)
        }
        m if m == methods::ATTENTION => {
            let sm = train_attention(ds, arch, &cfg.train, seed)?;
            save_self_model(path, &sm)
        }
        other => Err(Error::Config(format!("unknown trainer `{other}`"))),
    }
}

/// Produce scores for every sample in `eval` with one post-hoc method.
pub fn apply_posthoc(
    method: &str,
    model: &Model,
    train: &[&PointCloud],
    eval: &[&PointCloud],
    spec: &InterpreterSpec,
) -> Result<Vec<ImportanceScores>> {
    match method {
        m if m == methods::GRADXINPUT => eval.iter().map(|c| gradxinput(model, c)).collect(),
        m if m == methods::INTGRAD => {
            eval.iter().map(|c| integrated_gradients(model, c, spec.steps)).collect()
        }
        m if m == methods::GRADCAM => eval.iter().map(|c| gradcam(model, c, None)).collect(),
        m if m == methods::GNNEXPLAINER => {
            eval.iter().map(|c| gnnexplainer(model, c, spec)).collect()
        }
        m if m == methods::PGEXPLAINER => pgexplainer(model, train, eval, spec),
        m if m == methods::SUBGRAPHX => eval.iter().map(|c| subgraphx(model, c, spec)).collect(),
        other => Err(Error::Config(format!("`{other}` is not a post-hoc method"))),
    }
}

/// Run one explain+evaluate job from a persisted checkpoint.
fn run_explain_job(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    method: &str,
    seed: u64,
    model_path: &Path,
    scores_path: &Path,
    report_path: &Path,
) -> Result<()> {
    let train = ds.split_samples(Split::Train);
    let eval = ds.split_samples(Split::Test);
    let spec = InterpreterSpec { rng_seed: seed, ..cfg.interpret.clone() };
    let (scores, report) = if is_posthoc(method) {
        let model = load_checkpoint(model_path)?.model;
        let scores = apply_posthoc(method, &model, &train, &eval, &spec)?;
        let report = evaluate(&model, &eval, &scores, &model.tag(), seed, cfg.precision_k)?;
        (scores, report)
    } else {
        let sm = load_self_model(model_path)?;
        let scores: Vec<ImportanceScores> =
            eval.iter().map(|c| extract_scores(&sm, c)).collect::<Result<_>>()?;
        let tag = format!("{}-s{}", sm.method, sm.model.meta.seed);
        let report = evaluate(&sm, &eval, &scores, &tag, seed, cfg.precision_k)?;
        (scores, report)
    };
    save_scores(scores_path, &scores)?;
    write_report_csv(report_path, std::slice::from_ref(&report))
}

/// Write reports as CSV, header first.
pub fn write_report_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut text = String::from(REPORT_HEADER);
    text.push('\n');
    for r in reports {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_report_csv(path: &Path) -> Result<Vec<MetricReport>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REPORT_HEADER => {}
        other => {
            return Err(Error::Artifact {
                path: path.display().to_string(),
                msg: format!("expected report header, got {other:?}"),
            })
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            MetricReport::from_csv_row(l).map_err(|e| Error::Artifact {
                path: path.display().to_string(),
                msg: e.to_string(),
            })
        })
        .collect()
}

struct JobPlan {
    id: String,
    artifacts: Vec<PathBuf>,
    kind: JobKind,
}

enum JobKind {
    Train { arch: ModelSpec, seed: u64, trainer: String },
    Explain { method: String, seed: u64, model_job: String },
}

/// Execute a slice of planned jobs in a bounded pool, preserving plan order
/// in the output.
fn execute<F>(pool: &rayon::ThreadPool, plans: &[JobPlan], f: F) -> Vec<JobRecord>
where
    F: Fn(&JobPlan) -> Result<()> + Sync,
{
    use rayon::prelude::*;
    pool.install(|| {
        plans
            .par_iter()
            .map(|plan| {
                let start = Instant::now();
                let status = match f(plan) {
                    Ok(()) => JobStatus::Completed,
                    Err(e) => JobStatus::Failed { error: e.to_string() },
                };
                JobRecord {
                    id: plan.id.clone(),
                    status,
                    wall_secs: start.elapsed().as_secs_f64(),
                    artifacts: plan.artifacts.clone(),
                    reused: false,
                }
            })
            .collect()
    })
}

/// Train every (architecture, seed, trainer) model, score and evaluate every
/// (architecture, seed, method) cell, and summarize mean ± std per cell.
/// Completed jobs from a previous run with the same config hash are skipped.
pub fn run_benchmark(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunLedger> {
    cfg.validate()?;
    let hash = config_hash(cfg)?;
    fs::create_dir_all(out_dir)?;
    let previous = check_hash_compat(out_dir, &hash)?;
    let ds = cfg.dataset.build()?;
    let pool = thread_pool(cfg.jobs)?;

    let models_dir = out_dir.join("models");
    let scores_dir = out_dir.join("scores");
    let reports_dir = out_dir.join("reports");
    for d in [&models_dir, &scores_dir, &reports_dir] {
        fs::create_dir_all(d)?;
    }

    // Phase 1: training jobs, deduplicated across methods sharing a trainer.
    let mut train_plans: Vec<JobPlan> = Vec::new();
    for arch in &cfg.architectures {
        let aid = arch_id(arch);
        fs::create_dir_all(models_dir.join(&aid))?;
        let mut trainers: Vec<&str> = cfg.methods.iter().map(|m| trainer_of(m)).collect();
        trainers.sort_unstable();
        trainers.dedup();
        for trainer in trainers {
            for &seed in &cfg.seeds {
                let id = format!("train/{aid}/{trainer}-s{seed}");
                let path = models_dir.join(&aid).join(format!("{trainer}-s{seed}.json"));
                train_plans.push(JobPlan {
                    id,
                    artifacts: vec![path],
                    kind: JobKind::Train { arch: *arch, seed, trainer: trainer.into() },
                });
            }
        }
    }

    let (reusable, fresh): (Vec<&JobPlan>, Vec<&JobPlan>) = train_plans
        .iter()
        .partition(|p| previous.as_ref().and_then(|l| l.intact(&p.id)).is_some());
    let mut records: Vec<JobRecord> = reusable
        .iter()
        .map(|p| {
            let mut r = previous.as_ref().unwrap().job(&p.id).unwrap().clone();
            r.reused = true;
            r
        })
        .collect();
    let fresh_plans: Vec<JobPlan> = fresh
        .into_iter()
        .map(|p| JobPlan { id: p.id.clone(), artifacts: p.artifacts.clone(), kind: clone_kind(&p.kind) })
        .collect();
    records.extend(execute(&pool, &fresh_plans, |plan| {
        let JobKind::Train { arch, seed, trainer } = &plan.kind else { unreachable!() };
        run_train_job(cfg, &ds, arch, *seed, trainer, &plan.artifacts[0])
    }));

    // Phase 2: explain + evaluate, one job per (architecture, seed, method).
    let mut explain_plans: Vec<JobPlan> = Vec::new();
    for arch in &cfg.architectures {
        let aid = arch_id(arch);
        fs::create_dir_all(scores_dir.join(&aid))?;
        fs::create_dir_all(reports_dir.join(&aid))?;
        for method in &cfg.methods {
            for &seed in &cfg.seeds {
                let trainer = trainer_of(method);
                explain_plans.push(JobPlan {
                    id: format!("explain/{aid}/{method}-s{seed}"),
                    artifacts: vec![
                        scores_dir.join(&aid).join(format!("{method}-s{seed}.jsonl")),
                        reports_dir.join(&aid).join(format!("{method}-s{seed}.csv")),
                    ],
                    kind: JobKind::Explain {
                        method: method.clone(),
                        seed,
                        model_job: format!("train/{aid}/{trainer}-s{seed}"),
                    },
                });
            }
        }
    }

    let train_records: BTreeMap<String, JobRecord> =
        records.iter().map(|r| (r.id.clone(), r.clone())).collect();
    let (reusable, fresh): (Vec<&JobPlan>, Vec<&JobPlan>) = explain_plans
        .iter()
        .partition(|p| previous.as_ref().and_then(|l| l.intact(&p.id)).is_some());
    records.extend(reusable.iter().map(|p| {
        let mut r = previous.as_ref().unwrap().job(&p.id).unwrap().clone();
        r.reused = true;
        r
    }));
    let fresh_plans: Vec<JobPlan> = fresh
        .into_iter()
        .map(|p| JobPlan { id: p.id.clone(), artifacts: p.artifacts.clone(), kind: clone_kind(&p.kind) })
        .collect();
    records.extend(execute(&pool, &fresh_plans, |plan| {
        let JobKind::Explain { method, seed, model_job } = &plan.kind else { unreachable!() };
        let dep = train_records.get(model_job).ok_or_else(|| {
            Error::Config(format!("missing training job `{model_job}`"))
        })?;
        match &dep.status {
            JobStatus::Completed => run_explain_job(
                cfg,
                &ds,
                method,
                *seed,
                &dep.artifacts[0],
                &plan.artifacts[0],
                &plan.artifacts[1],
            ),
            JobStatus::Failed { error } => Err(Error::Train(format!(
                "dependency `{model_job}` failed: {error}"
            ))),
        }
    }));

    records.sort_by(|a, b| a.id.cmp(&b.id));
    let ledger = RunLedger { config_hash: hash, jobs: records };
    write_summary(cfg, out_dir, &ledger)?;
    ledger.save(out_dir)?;
    Ok(ledger)
}

fn clone_kind(kind: &JobKind) -> JobKind {
    match kind {
        JobKind::Train { arch, seed, trainer } => {
            JobKind::Train { arch: *arch, seed: *seed, trainer: trainer.clone() }
        }
        JobKind::Explain { method, seed, model_job } => JobKind::Explain {
            method: method.clone(),
            seed: *seed,
            model_job: model_job.clone(),
        },
    }
}

/// Sample mean and (n-1)-denominator standard deviation; std is 0 for a
/// single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub const SUMMARY_HEADER: &str = "arch,method,n_seeds,fid_auc_mean,fid_auc_std,interp_roc_mean,interp_roc_std,precision_mean,precision_std";

/// Rebuild the per-cell summary from the per-job report CSVs on disk.
fn write_summary(cfg: &ExperimentConfig, out_dir: &Path, ledger: &RunLedger) -> Result<()> {
    let mut cells: BTreeMap<(String, String), Vec<MetricReport>> = BTreeMap::new();
    for arch in &cfg.architectures {
        let aid = arch_id(arch);
        for method in &cfg.methods {
            for &seed in &cfg.seeds {
                let id = format!("explain/{aid}/{method}-s{seed}");
                let Some(job) = ledger.job(&id) else { continue };
                if job.status != JobStatus::Completed {
                    continue;
                }
                let reports = read_report_csv(&job.artifacts[1])?;
                cells.entry((aid.clone(), method.clone())).or_default().extend(reports);
            }
        }
    }
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for ((aid, method), reports) in &cells {
        let fid: Vec<f64> = reports.iter().map(|r| r.fid_auc).collect();
        let roc: Vec<f64> = reports.iter().map(|r| r.interp_roc_auc).collect();
        let prec: Vec<f64> = reports.iter().map(|r| r.precision_at_k).collect();
        let (fm, fs) = mean_std(&fid);
        let (rm, rs) = mean_std(&roc);
        let (pm, ps) = mean_std(&prec);
        text.push_str(&format!(
            "{aid},{method},{},{fm},{fs},{rm},{rs},{pm},{ps}\n",
            reports.len()
        ));
    }
    fs::write(out_dir.join("summary.csv"), text)?;
    Ok(())
}

/// Train one plain model for study use; shared by the study runners.
pub(crate) fn study_model(
    ds: &Dataset,
    arch: &ModelSpec,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<(Model, f64)> {
    let model = train_erm(ds, arch, train_cfg, seed)?;
    let acc = accuracy(&model, &ds.split_samples(Split::Test))?;
    Ok((model, acc))
}
