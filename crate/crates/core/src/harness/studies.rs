//! The three desk-scale studies: decisive-induced fidelity across many
//! trained models, the accuracy-vs-alignment sweep, and post-hoc methods
//! applied to self-interpretable backbones.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{
    apply_posthoc, arch_id, histogram_svg, is_posthoc, mean_std, scatter_svg, study_model,
    thread_pool, ExperimentConfig,
};
use crate::backbones::train::{ModelSpec, TrainConfig};
use crate::data::Split;
use crate::error::{Error, Result};
use crate::metrics::{decisive_induced_fidelity, pooled_interpretation_roc_auc};
use crate::posthoc::InterpreterSpec;
use crate::selfinterp::{train_lri_bern, train_lri_gauss};

/// Spearman rank correlation with average ranks over ties; `None` when
/// undefined (fewer than two points, or a constant argument).
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Clone, Debug)]
pub struct MisalignmentOutcome {
    /// Per-model decisive-induced fidelity AUC, ordered by model seed.
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub csv_path: PathBuf,
    pub svg_path: PathBuf,
}

/// Train `study_models` plain models and measure how well the ground-truth
/// decisive flags double as sensitive patterns for each of them.
pub fn run_misalignment_study(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<MisalignmentOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let ds = cfg.dataset.build()?;
    let arch = cfg.architectures[0];
    let pool = thread_pool(cfg.jobs)?;

    let rows: Vec<(u64, f64, crate::metrics::FidelityAuc)> = pool.install(|| {
        (0..cfg.study_models as u64)
            .into_par_iter()
            .map(|seed| {
                let (model, acc) = study_model(&ds, &arch, &cfg.train, seed)?;
                let test = ds.split_samples(Split::Test);
                let auc = decisive_induced_fidelity(&model, &test, seed)?;
                Ok((seed, acc, auc))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut text = String::from("model_seed,accuracy,fid_plus_auc,fid_minus_auc,fid_auc\n");
    for (seed, acc, auc) in &rows {
        text.push_str(&format!("{seed},{acc},{},{},{}\n", auc.plus, auc.minus, auc.combined));
    }
    let csv_path = out_dir.join("misalignment.csv");
    fs::write(&csv_path, &text)?;

    let values: Vec<f64> = rows.iter().map(|(_, _, auc)| auc.combined).collect();
    let (mean, std) = mean_std(&values);
    let svg_path = out_dir.join("misalignment.svg");
    fs::write(
        &svg_path,
        histogram_svg(
            &values,
            10,
            &format!("Decisive-induced fidelity AUC over {} models ({})", values.len(), arch_id(&arch)),
            "fidelity AUC",
        ),
    )?;
    Ok(MisalignmentOutcome { values, mean, std, csv_path, svg_path })
}

#[derive(Clone, Debug)]
pub struct AccuracyPair {
    pub model_idx: usize,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    pub accuracy: f64,
    pub method: String,
    pub interp_roc: f64,
}

#[derive(Clone, Debug)]
pub struct AccuracyAlignmentOutcome {
    pub pairs: Vec<AccuracyPair>,
    /// Per method; `None` renders as "n/a" when correlation is undefined.
    pub spearman: Vec<(String, Option<f64>)>,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
    pub svg_paths: Vec<PathBuf>,
}

const EPOCH_GRID: [usize; 10] = [0, 1, 2, 3, 5, 8, 12, 18, 26, 40];

/// Training recipe for sweep position `i`: the epoch grid spans untrained
/// to well-trained, and alternate decades vary rate and width.
fn recipe(i: usize) -> (usize, f64, usize) {
    let epochs = EPOCH_GRID[i % EPOCH_GRID.len()];
    let decade = (i / EPOCH_GRID.len()) % 2;
    let lr = [1e-3, 2e-3][decade];
    let hidden = [16, 32][decade];
    (epochs, lr, hidden)
}

/// Sweep `study_models` training recipes and record (accuracy,
/// interpretation ROC-AUC) per post-hoc method, with Spearman correlations.
pub fn run_accuracy_alignment_study(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<AccuracyAlignmentOutcome> {
    cfg.validate()?;
    let posthoc: Vec<&String> = cfg.methods.iter().filter(|m| is_posthoc(m)).collect();
    if posthoc.is_empty() {
        return Err(Error::Config(
            "the accuracy study explains plain models and needs at least one post-hoc method"
                .into(),
        ));
    }
    fs::create_dir_all(out_dir)?;
    let ds = cfg.dataset.build()?;
    let pool = thread_pool(cfg.jobs)?;

    let pairs: Vec<Vec<AccuracyPair>> = pool.install(|| {
        (0..cfg.study_models)
            .into_par_iter()
            .map(|i| {
                let (epochs, lr, hidden) = recipe(i);
                let seed = i as u64;
                let arch = ModelSpec { hidden, ..cfg.architectures[0] };
                let train_cfg = TrainConfig {
                    lr,
                    max_epochs: epochs,
                    patience: epochs.max(1),
                    ..cfg.train
                };
                let (model, accuracy) = study_model(&ds, &arch, &train_cfg, seed)?;
                let train = ds.split_samples(Split::Train);
                let test = ds.split_samples(Split::Test);
                let spec = InterpreterSpec { rng_seed: seed, ..cfg.interpret.clone() };
                posthoc
                    .iter()
                    .map(|method| {
                        let scores = apply_posthoc(method, &model, &train, &test, &spec)?;
                        let interp_roc = pooled_interpretation_roc_auc(&test, &scores)?;
                        Ok(AccuracyPair {
                            model_idx: i,
                            seed,
                            epochs,
                            lr,
                            hidden,
                            accuracy,
                            method: (*method).clone(),
                            interp_roc,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let pairs: Vec<AccuracyPair> = pairs.into_iter().flatten().collect();

    let mut text =
        String::from("model_idx,seed,epochs,lr,hidden,accuracy,method,interp_roc_auc\n");
    for p in &pairs {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.model_idx, p.seed, p.epochs, p.lr, p.hidden, p.accuracy, p.method, p.interp_roc
        ));
    }
    let csv_path = out_dir.join("accuracy_alignment.csv");
    fs::write(&csv_path, &text)?;

    let mut spear = Vec::new();
    let mut svg_paths = Vec::new();
    let mut summary = String::from("method,n_pairs,spearman\n");
    for method in &posthoc {
        let xs: Vec<f64> =
            pairs.iter().filter(|p| &p.method == *method).map(|p| p.accuracy).collect();
        let ys: Vec<f64> =
            pairs.iter().filter(|p| &p.method == *method).map(|p| p.interp_roc).collect();
        let rho = spearman(&xs, &ys);
        summary.push_str(&format!(
            "{method},{},{}\n",
            xs.len(),
            rho.map_or_else(|| "n/a".into(), |r| r.to_string())
        ));
        spear.push(((*method).clone(), rho));

        let points: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
        let svg_path = out_dir.join(format!("accuracy_{method}.svg"));
        fs::write(
            &svg_path,
            scatter_svg(
                &points,
                &binned_means(&points, 5),
                &format!("Accuracy vs interpretation ROC-AUC ({method})"),
                "test accuracy",
                "interpretation ROC-AUC",
            ),
        )?;
        svg_paths.push(svg_path);
    }
    let summary_path = out_dir.join("accuracy_summary.csv");
    fs::write(&summary_path, &summary)?;

    Ok(AccuracyAlignmentOutcome { pairs, spearman: spear, csv_path, summary_path, svg_paths })
}

/// Mean y per equal-width x bin, skipping empty bins; the overlay points.
fn binned_means(points: &[(f64, f64)], bins: usize) -> Vec<(f64, f64)> {
    if points.is_empty() {
        return vec![];
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        let my = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
        return vec![(lo, my)];
    }
    let mut acc = vec![(0.0, 0.0, 0usize); bins];
    for &(x, y) in points {
        let idx = (((x - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1);
        acc[idx].0 += x;
        acc[idx].1 += y;
        acc[idx].2 += 1;
    }
    acc.into_iter()
        .filter(|(_, _, c)| *c > 0)
        .map(|(sx, sy, c)| (sx / c as f64, sy / c as f64))
        .collect()
}

#[derive(Clone, Debug)]
pub struct CrossoverRow {
    pub method: String,
    pub erm: f64,
    pub lri_bern: f64,
    pub lri_gauss: f64,
    pub delta_bern: f64,
    pub delta_gauss: f64,
}

#[derive(Clone, Debug)]
pub struct CrossoverOutcome {
    pub rows: Vec<CrossoverRow>,
    pub csv_path: PathBuf,
    pub runs_path: PathBuf,
}

/// Apply every post-hoc method to plain backbones and to backbones trained
/// jointly with a selector, per seed; tabulate mean interpretation ROC-AUC
/// per (method, trainer) with deltas against the plain column.
pub fn run_crossover_study(cfg: &ExperimentConfig, out_dir: &Path) -> Result<CrossoverOutcome> {
    cfg.validate()?;
    let posthoc: Vec<&String> = cfg.methods.iter().filter(|m| is_posthoc(m)).collect();
    if posthoc.is_empty() {
        return Err(Error::Config(
            "the crossover study needs at least one post-hoc method".into(),
        ));
    }
    fs::create_dir_all(out_dir)?;
    let ds = cfg.dataset.build()?;
    let arch = cfg.architectures[0];
    let pool = thread_pool(cfg.jobs)?;

    const TRAINERS: [&str; 3] = ["erm", "lri-bern", "lri-gauss"];
    // (seed, trainer, method) -> interp roc; parallel over seeds, which own
    // the expensive trainings.
    let per_seed: Vec<Vec<(u64, String, String, f64)>> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let erm = crate::backbones::train::train_erm(&ds, &arch, &cfg.train, seed)?;
                let bern =
                    train_lri_bern(&ds, &arch, &cfg.train, &cfg.selector.into(), seed)?;
                let gauss =
                    train_lri_gauss(&ds, &arch, &cfg.train, &cfg.selector.into(), seed)?;
                let backbones = [&erm, &bern.model, &gauss.model];
                let train = ds.split_samples(Split::Train);
                let test = ds.split_samples(Split::Test);
                let spec = InterpreterSpec { rng_seed: seed, ..cfg.interpret.clone() };
                let mut out = Vec::new();
                for method in &posthoc {
                    for (trainer, model) in TRAINERS.iter().zip(backbones) {
                        let scores = apply_posthoc(method, model, &train, &test, &spec)?;
                        let roc = pooled_interpretation_roc_auc(&test, &scores)?;
                        out.push((seed, (*trainer).to_string(), (*method).clone(), roc));
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let runs: Vec<(u64, String, String, f64)> = per_seed.into_iter().flatten().collect();

    let mut text = String::from("seed,trainer,method,interp_roc_auc\n");
    for (seed, trainer, method, roc) in &runs {
        text.push_str(&format!("{seed},{trainer},{method},{roc}\n"));
    }
    let runs_path = out_dir.join("crossover_runs.csv");
    fs::write(&runs_path, &text)?;

    let cell = |method: &str, trainer: &str| -> f64 {
        let vals: Vec<f64> = runs
            .iter()
            .filter(|(_, t, m, _)| t == trainer && m == method)
            .map(|(_, _, _, r)| *r)
            .collect();
        mean_std(&vals).0
    };
    let mut rows = Vec::new();
    let mut table = String::from("method,erm,lri_bern,lri_gauss,delta_bern,delta_gauss\n");
    for method in &posthoc {
        let erm = cell(method, "erm");
        let lri_bern = cell(method, "lri-bern");
        let lri_gauss = cell(method, "lri-gauss");
        let row = CrossoverRow {
            method: (*method).clone(),
            erm,
            lri_bern,
            lri_gauss,
            delta_bern: lri_bern - erm,
            delta_gauss: lri_gauss - erm,
        };
        table.push_str(&format!(
            "{},{erm},{lri_bern},{lri_gauss},{},{}\n",
            row.method, row.delta_bern, row.delta_gauss
        ));
        rows.push(row);
    }
    let csv_path = out_dir.join("crossover.csv");
    fs::write(&csv_path, &table)?;
    Ok(CrossoverOutcome { rows, csv_path, runs_path })
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_config;
    use super::*;
    use crate::scores::methods;

    #[test]
    fn spearman_matches_known_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 0.0, -5.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert_eq!(spearman(&[1.0], &[1.0]), None);

        // Hand-ranked with a tie: x ranks [1.5, 1.5, 3], y ranks [1, 2, 3]
        // → Pearson on ranks = sqrt(3)/2.
        let rho = spearman(&[4.0, 4.0, 9.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((rho - 0.75f64.sqrt()).abs() < 1e-12, "{rho}");
    }

    #[test]
    fn average_ranks_split_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn binned_means_cover_the_span() {
        let pts = [(0.0, 1.0), (0.1, 3.0), (1.0, 5.0)];
        let bins = binned_means(&pts, 2);
        assert_eq!(bins.len(), 2);
        assert!((bins[0].1 - 2.0).abs() < 1e-12);
        assert!((bins[1].1 - 5.0).abs() < 1e-12);
    }

    #[test]
    fn misalignment_study_emits_one_row_per_model() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("study");
        let mut cfg = tiny_config(&out);
        cfg.study_models = 3;

        let outcome = run_misalignment_study(&cfg, &out).unwrap();
        assert_eq!(outcome.values.len(), 3);
        let csv = fs::read_to_string(&outcome.csv_path).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(outcome.svg_path.exists());

        let again = run_misalignment_study(&cfg, &out).unwrap();
        assert_eq!(again.values, outcome.values);
        assert_eq!(fs::read_to_string(&outcome.csv_path).unwrap(), csv);
    }

    #[test]
    fn accuracy_study_pairs_and_correlation_report() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("study");
        let mut cfg = tiny_config(&out);
        cfg.study_models = 4;

        let outcome = run_accuracy_alignment_study(&cfg, &out).unwrap();
        assert_eq!(outcome.pairs.len(), 4);
        assert_eq!(outcome.spearman.len(), 1);
        assert_eq!(outcome.spearman[0].0, methods::GRADXINPUT);
        let csv = fs::read_to_string(&outcome.csv_path).unwrap();
        assert_eq!(csv.lines().count(), 5);
        let summary = fs::read_to_string(&outcome.summary_path).unwrap();
        assert!(summary.starts_with("method,n_pairs,spearman"));
        assert!(outcome.svg_paths[0].exists());

        let again = run_accuracy_alignment_study(&cfg, &out).unwrap();
        assert_eq!(fs::read_to_string(&again.csv_path).unwrap(), csv);
    }

    #[test]
    fn accuracy_study_requires_a_posthoc_method() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("study");
        let mut cfg = tiny_config(&out);
        cfg.methods = vec![methods::LRI_BERN.into()];
        assert!(run_accuracy_alignment_study(&cfg, &out).is_err());
    }

    #[test]
    fn crossover_study_tabulates_methods_by_trainer() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("study");
        let mut cfg = tiny_config(&out);
        cfg.seeds = vec![0];

        let outcome = run_crossover_study(&cfg, &out).unwrap();
        assert_eq!(outcome.rows.len(), 1);
        let row = &outcome.rows[0];
        assert_eq!(row.method, methods::GRADXINPUT);
        assert!((row.delta_bern - (row.lri_bern - row.erm)).abs() < 1e-12);
        let runs = fs::read_to_string(&outcome.runs_path).unwrap();
        assert_eq!(runs.lines().count(), 1 + 3);

        let table = fs::read_to_string(&outcome.csv_path).unwrap();
        let again = run_crossover_study(&cfg, &out).unwrap();
        assert_eq!(fs::read_to_string(&again.csv_path).unwrap(), table);
    }
}
