//! Command-line driver: dataset generation, training, explanation,
//! evaluation, score ensembling, the three studies, and report rollups.
//! Exit codes: 0 success, 1 job or runtime failure, 2 configuration error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gdlib_core::backbones::train::{train_erm, ModelSpec, TrainConfig};
use gdlib_core::backbones::{load_checkpoint, save_checkpoint, Backbone, Readout};
use gdlib_core::data::{io as data_io, synmotif, tracks, Dataset, PointCloud, Split};
use gdlib_core::ensemble::{ensemble_scores, ensemble_weights, EnsembleInput, ModelScores};
use gdlib_core::error::Error;
use gdlib_core::harness::{
    apply_posthoc, is_posthoc, is_self_trained, read_report_csv, run_accuracy_alignment_study,
    run_benchmark, run_crossover_study, run_misalignment_study, write_report_csv,
    ExperimentConfig, JobStatus, RunLedger, SUMMARY_HEADER,
};
use gdlib_core::harness::mean_std;
use gdlib_core::metrics::evaluate;
use gdlib_core::posthoc::InterpreterSpec;
use gdlib_core::scores::{load_scores, save_scores};
use gdlib_core::selfinterp::{
    extract_scores, load_self_model, train_attention, train_lri_bern, train_lri_gauss, SelfSpec,
};
use gdlib_core::Result;

#[derive(Parser)]
#[command(name = "gdlib", version, about = "Point-cloud interpretability benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as JSON.
    GenerateData(GenerateDataArgs),
    /// Train a plain or self-interpretable classifier.
    Train(TrainArgs),
    /// Produce per-point importance scores for one method.
    Explain(ExplainArgs),
    /// Run the metric battery for one (model, scores) pair.
    Evaluate(EvaluateArgs),
    /// Fidelity-weighted average of score files from several models.
    Ensemble(EnsembleArgs),
    /// Train and evaluate the full method × architecture × seed matrix.
    Benchmark(BenchmarkArgs),
    /// The misalignment, accuracy-alignment, and crossover studies.
    Study(StudyArgs),
    /// Summarize report CSVs from a benchmark directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateDataArgs {
    /// Dataset family: synmotif or tracks.
    #[arg(long, default_value = "synmotif")]
    family: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_valid: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Smallest cloud size.
    #[arg(long)]
    n_min: Option<usize>,
    /// Largest cloud size.
    #[arg(long)]
    n_max: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset JSON produced by generate-data.
    #[arg(long)]
    data: PathBuf,
    /// erm, lri-bern, lri-gauss, or attn.
    #[arg(long, default_value = "erm")]
    method: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "egnn")]
    backbone: String,
    /// mean-pool or attn-pool.
    #[arg(long, default_value = "mean-pool")]
    readout: String,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 6)]
    k_neighbors: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 15)]
    patience: usize,
    /// Disable per-epoch rotation augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Information-penalty weight for the lri methods.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Prior keep-probability for lri-bern.
    #[arg(long, default_value_t = 0.5)]
    prior: f64,
    #[arg(long, default_value_t = 0.05)]
    sigma_min: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_max: f64,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint produced by train.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    method: String,
    /// Split to explain: train, valid, or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Output scores JSONL path.
    #[arg(long)]
    out: PathBuf,
    /// Seed for stochastic explainers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    coalitions: Option<usize>,
    #[arg(long)]
    n_cap: Option<usize>,
    /// Epochs for the mask-optimizing explainers.
    #[arg(long)]
    opt_epochs: Option<usize>,
    /// Learning rate for the mask-optimizing explainers.
    #[arg(long)]
    opt_lr: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Scores JSONL produced by explain.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Output report CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Precision@K cutoff.
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Seed column value; defaults to the model's training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EnsembleArgs {
    /// Scores JSONL files, one per model (repeat the flag).
    #[arg(long, required = true)]
    scores: Vec<PathBuf>,
    /// Report CSV holding a fid_auc row for every model.
    #[arg(long)]
    reports: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Experiment TOML.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's parallelism degree.
    #[arg(long)]
    jobs: Option<usize>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    #[command(subcommand)]
    which: StudyKind,
}

#[derive(Subcommand)]
enum StudyKind {
    /// Decisive-induced fidelity across many trained models.
    Misalignment(StudyRunArgs),
    /// Accuracy vs interpretation quality over a recipe sweep.
    Accuracy(StudyRunArgs),
    /// Post-hoc methods on plain vs selector-trained backbones.
    Crossover(StudyRunArgs),
}

#[derive(Args)]
struct StudyRunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the number of study models.
    #[arg(long)]
    models: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Benchmark output directory.
    #[arg(long)]
    dir: PathBuf,
    /// Optional CSV output path for the rollup.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenerateData(args) => generate_data(&args),
        Command::Train(args) => train(&args),
        Command::Explain(args) => explain(&args),
        Command::Evaluate(args) => evaluate_cmd(&args),
        Command::Ensemble(args) => ensemble_cmd(&args),
        Command::Benchmark(args) => benchmark(&args),
        Command::Study(args) => study(&args),
        Command::Report(args) => report(&args),
    }
}

fn generate_data(args: &GenerateDataArgs) -> Result<ExitCode> {
    let ds = match args.family.as_str() {
        "synmotif" => {
            let mut cfg = synmotif::SynMotifConfig::default();
            apply_sizes(
                &mut cfg.n_train,
                &mut cfg.n_valid,
                &mut cfg.n_test,
                &mut cfg.n_min,
                &mut cfg.n_max,
                args,
            );
            synmotif::generate(&cfg, args.seed)?
        }
        "tracks" => {
            let mut cfg = tracks::TracksConfig::default();
            apply_sizes(
                &mut cfg.n_train,
                &mut cfg.n_valid,
                &mut cfg.n_test,
                &mut cfg.n_min,
                &mut cfg.n_max,
                args,
            );
            tracks::generate(&cfg, args.seed)?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown dataset family `{other}` (expected `synmotif` or `tracks`)"
            )))
        }
    };
    data_io::save(&ds, &args.out)?;
    println!(
        "wrote {} samples ({} train / {} valid / {} test) to {}",
        ds.samples.len(),
        ds.splits.train.len(),
        ds.splits.valid.len(),
        ds.splits.test.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn apply_sizes(
    n_train: &mut usize,
    n_valid: &mut usize,
    n_test: &mut usize,
    n_min: &mut usize,
    n_max: &mut usize,
    args: &GenerateDataArgs,
) {
    if let Some(v) = args.n_train {
        *n_train = v;
    }
    if let Some(v) = args.n_valid {
        *n_valid = v;
    }
    if let Some(v) = args.n_test {
        *n_test = v;
    }
    if let Some(v) = args.n_min {
        *n_min = v;
    }
    if let Some(v) = args.n_max {
        *n_max = v;
    }
}

fn parse_readout(s: &str) -> Result<Readout> {
    match s {
        "mean-pool" => Ok(Readout::MeanPool),
        "attn-pool" => Ok(Readout::AttnPool),
        other => Err(Error::Config(format!(
            "unknown readout `{other}` (expected `mean-pool` or `attn-pool`)"
        ))),
    }
}

fn train(args: &TrainArgs) -> Result<ExitCode> {
    let ds = data_io::load(&args.data)?;
    let arch = ModelSpec {
        backbone: args.backbone.parse::<Backbone>()?,
        readout: parse_readout(&args.readout)?,
        hidden: args.hidden,
        layers: args.layers,
        k_neighbors: args.k_neighbors,
    };
    let cfg = TrainConfig {
        lr: args.lr,
        batch_size: args.batch_size,
        max_epochs: args.epochs,
        patience: args.patience,
        augment_rotations: !args.no_augment,
    };
    let spec = SelfSpec {
        beta: args.beta,
        r: args.prior,
        sigma_min: args.sigma_min,
        sigma_max: args.sigma_max,
    };
    let (meta, tag) = match args.method.as_str() {
        "erm" => {
            let model = train_erm(&ds, &arch, &cfg, args.seed)?;
            save_checkpoint(&args.out, &model, "erm", &[], &[])?;
            (model.meta, model.tag())
        }
        "lri-bern" => {
            let sm = train_lri_bern(&ds, &arch, &cfg, &spec, args.seed)?;
            gdlib_core::selfinterp::save_self_model(&args.out, &sm)?;
            (sm.model.meta, format!("{}-s{}", sm.method, args.seed))
        }
        "lri-gauss" => {
            let sm = train_lri_gauss(&ds, &arch, &cfg, &spec, args.seed)?;
            gdlib_core::selfinterp::save_self_model(&args.out, &sm)?;
            (sm.model.meta, format!("{}-s{}", sm.method, args.seed))
        }
        "attn" => {
            let sm = train_attention(&ds, &arch, &cfg, args.seed)?;
            gdlib_core::selfinterp::save_self_model(&args.out, &sm)?;
            (sm.model.meta, format!("{}-s{}", sm.method, args.seed))
        }
        other => {
            return Err(Error::Config(format!(
                "unknown training method `{other}` (expected erm, lri-bern, lri-gauss, or attn)"
            )))
        }
    };
    println!(
        "trained {tag}: valid accuracy {:.4} at epoch {} of {}; saved to {}",
        meta.valid_accuracy,
        meta.best_epoch,
        meta.epochs_run,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn split_samples<'d>(ds: &'d Dataset, name: &str) -> Result<Vec<&'d PointCloud>> {
    let split: Split = name.parse()?;
    Ok(ds.split_samples(split))
}

fn interpreter_spec(args: &ExplainArgs) -> InterpreterSpec {
    let d = InterpreterSpec::default();
    InterpreterSpec {
        steps: args.steps.unwrap_or(d.steps),
        rollouts: args.rollouts.unwrap_or(d.rollouts),
        coalition_samples: args.coalitions.unwrap_or(d.coalition_samples),
        n_cap: args.n_cap.unwrap_or(d.n_cap),
        epochs: args.opt_epochs.unwrap_or(d.epochs),
        lr: args.opt_lr.unwrap_or(d.lr),
        rng_seed: args.seed,
        ..d
    }
}

fn explain(args: &ExplainArgs) -> Result<ExitCode> {
    let ds = data_io::load(&args.data)?;
    let eval = split_samples(&ds, &args.split)?;
    let scores = if is_posthoc(&args.method) {
        let model = load_checkpoint(&args.model)?.model;
        let train = ds.split_samples(Split::Train);
        apply_posthoc(&args.method, &model, &train, &eval, &interpreter_spec(args))?
    } else if is_self_trained(&args.method) {
        let sm = load_self_model(&args.model)?;
        if sm.method != args.method {
            return Err(Error::Config(format!(
                "checkpoint {} was trained with `{}`, not `{}`",
                args.model.display(),
                sm.method,
                args.method
            )));
        }
        eval.iter().map(|c| extract_scores(&sm, c)).collect::<Result<Vec<_>>>()?
    } else {
        return Err(Error::Config(format!("unknown method `{}`", args.method)));
    };
    save_scores(&args.out, &scores)?;
    println!("wrote {} score records to {}", scores.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<ExitCode> {
    let ds = data_io::load(&args.data)?;
    let eval = split_samples(&ds, &args.split)?;
    let scores = load_scores(&args.scores)?;
    let cp = load_checkpoint(&args.model)?;
    let report = if cp.method == "erm" {
        let seed = args.seed.unwrap_or(cp.model.meta.seed);
        evaluate(&cp.model, &eval, &scores, &cp.model.tag(), seed, args.k)?
    } else {
        let sm = load_self_model(&args.model)?;
        let seed = args.seed.unwrap_or(sm.model.meta.seed);
        let tag = format!("{}-s{}", sm.method, sm.model.meta.seed);
        evaluate(&sm, &eval, &scores, &tag, seed, args.k)?
    };
    write_report_csv(&args.out, std::slice::from_ref(&report))?;
    println!("{}", gdlib_core::metrics::REPORT_HEADER);
    println!("{}", report.csv_row());
    Ok(ExitCode::SUCCESS)
}

fn ensemble_cmd(args: &EnsembleArgs) -> Result<ExitCode> {
    if args.scores.len() < 2 {
        return Err(Error::Config("pass --scores at least twice, one file per model".into()));
    }
    let reports = read_report_csv(&args.reports)?;
    let mut models = Vec::new();
    let mut method: Option<String> = None;
    for path in &args.scores {
        let scores = load_scores(path)?;
        let first = scores.first().ok_or_else(|| {
            Error::Data(format!("{} holds no score records", path.display()))
        })?;
        let (model_id, file_method) = (first.model_id.clone(), first.method.clone());
        if scores.iter().any(|s| s.model_id != model_id || s.method != file_method) {
            return Err(Error::Data(format!(
                "{} mixes model ids or methods",
                path.display()
            )));
        }
        match &method {
            None => method = Some(file_method.clone()),
            Some(m) if *m != file_method => {
                return Err(Error::Data(format!(
                    "{} holds `{file_method}` scores, other files hold `{m}`",
                    path.display()
                )))
            }
            Some(_) => {}
        }
        let fid_auc = reports
            .iter()
            .find(|r| r.model_id == model_id && r.method == file_method)
            .map(|r| r.fid_auc)
            .ok_or_else(|| {
                Error::Data(format!(
                    "{} has no row for model `{model_id}` method `{file_method}`",
                    args.reports.display()
                ))
            })?;
        models.push(ModelScores { model_id, fid_auc, scores });
    }
    let method = method.expect("at least two files");
    let weights = ensemble_weights(&models.iter().map(|m| m.fid_auc).collect::<Vec<_>>())?;
    for (m, w) in models.iter().zip(&weights) {
        println!("weight {}: {w:.4} (fid_auc {})", m.model_id, m.fid_auc);
    }
    let out = ensemble_scores(&EnsembleInput { models, method })?;
    save_scores(&args.out, &out)?;
    println!("wrote {} ensembled records to {}", out.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn resolve_out(cfg: &ExperimentConfig, flag: &Option<PathBuf>) -> Result<PathBuf> {
    flag.clone().or_else(|| cfg.out_dir.clone()).ok_or_else(|| {
        Error::Config("no output directory: pass --out or set out_dir in the config".into())
    })
}

fn load_config(path: &Path, jobs: Option<usize>, models: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    if let Some(m) = models {
        cfg.study_models = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn benchmark(args: &BenchmarkArgs) -> Result<ExitCode> {
    let cfg = load_config(&args.config, args.jobs, None)?;
    let out = resolve_out(&cfg, &args.out)?;
    let ledger = run_benchmark(&cfg, &out)?;
    report_ledger(&ledger, &out)
}

fn report_ledger(ledger: &RunLedger, out: &Path) -> Result<ExitCode> {
    let failed = ledger.failed_jobs();
    let reused = ledger.jobs.iter().filter(|j| j.reused).count();
    println!(
        "{} jobs ({} reused, {} failed); artifacts under {}",
        ledger.jobs.len(),
        reused,
        failed.len(),
        out.display()
    );
    for job in &failed {
        if let JobStatus::Failed { error } = &job.status {
            eprintln!("failed {}: {error}", job.id);
        }
    }
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn study(args: &StudyArgs) -> Result<ExitCode> {
    match &args.which {
        StudyKind::Misalignment(run) => {
            let cfg = load_config(&run.config, run.jobs, run.models)?;
            let out = resolve_out(&cfg, &run.out)?;
            let outcome = run_misalignment_study(&cfg, &out)?;
            println!(
                "decisive-induced fidelity AUC over {} models: mean {:.2}, std {:.2}",
                outcome.values.len(),
                outcome.mean,
                outcome.std
            );
            println!("wrote {} and {}", outcome.csv_path.display(), outcome.svg_path.display());
        }
        StudyKind::Accuracy(run) => {
            let cfg = load_config(&run.config, run.jobs, run.models)?;
            let out = resolve_out(&cfg, &run.out)?;
            let outcome = run_accuracy_alignment_study(&cfg, &out)?;
            for (method, rho) in &outcome.spearman {
                match rho {
                    Some(r) => println!("spearman({method}) = {r:.4}"),
                    None => println!("spearman({method}) = n/a"),
                }
            }
            println!("wrote {}", outcome.csv_path.display());
        }
        StudyKind::Crossover(run) => {
            let cfg = load_config(&run.config, run.jobs, run.models)?;
            let out = resolve_out(&cfg, &run.out)?;
            let outcome = run_crossover_study(&cfg, &out)?;
            println!("method,erm,lri_bern,lri_gauss,delta_bern,delta_gauss");
            for r in &outcome.rows {
                println!(
                    "{},{:.2},{:.2},{:.2},{:+.2},{:+.2}",
                    r.method, r.erm, r.lri_bern, r.lri_gauss, r.delta_bern, r.delta_gauss
                );
            }
            println!("wrote {}", outcome.csv_path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn report(args: &ReportArgs) -> Result<ExitCode> {
    let reports_dir = args.dir.join("reports");
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut rocs: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut precs: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut arch_dirs: Vec<PathBuf> = std::fs::read_dir(&reports_dir)
        .map_err(|e| Error::Config(format!("{} is not a benchmark directory: {e}", args.dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    arch_dirs.sort();
    for arch_dir in &arch_dirs {
        let arch = arch_dir.file_name().unwrap_or_default().to_string_lossy().to_string();
        let mut files: Vec<PathBuf> = std::fs::read_dir(arch_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        for file in files {
            for row in read_report_csv(&file)? {
                let key = (arch.clone(), row.method.clone());
                cells.entry(key.clone()).or_default().push(row.fid_auc);
                rocs.entry(key.clone()).or_default().push(row.interp_roc_auc);
                precs.entry(key).or_default().push(row.precision_at_k);
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::Data(format!(
            "no report rows under {}",
            reports_dir.display()
        )));
    }
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    println!("arch method n fid_auc interp_roc precision");
    for ((arch, method), fids) in &cells {
        let key = (arch.clone(), method.clone());
        let (fm, fs) = mean_std(fids);
        let (rm, rs) = mean_std(&rocs[&key]);
        let (pm, ps) = mean_std(&precs[&key]);
        println!(
            "{arch} {method} {} {fm:.2}±{fs:.2} {rm:.2}±{rs:.2} {pm:.2}±{ps:.2}",
            fids.len()
        );
        text.push_str(&format!(
            "{arch},{method},{},{fm},{fs},{rm},{rs},{pm},{ps}\n",
            fids.len()
        ));
    }
    if let Some(out) = &args.out {
        std::fs::write(out, text)?;
        println!("wrote {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}
