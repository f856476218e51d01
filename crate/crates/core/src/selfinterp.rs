//! Self-interpretable training: a selector module fitted jointly with the
//! backbone, with interpretation read directly off the learned selector.
//! Variants: stochastic point gates, learned coordinate noise, and
//! attention pooling.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::backbones::train::{accuracy, train_erm, Adam, ModelSpec, TrainConfig};
use crate::backbones::{
    affine, init_params, load_checkpoint, save_checkpoint, Checkpoint, Hyper, Model, ModelMeta,
    Prediction, Readout,
};
use crate::data::{Dataset, PointCloud, Split};
use crate::error::{Error, Result};
use crate::relax::{concrete_gate, logistic_noise, temperature};
use crate::scores::{methods, ImportanceScores};
use crate::tape::{sigmoid, Tape, VarId};
use crate::tensor::Tensor;

const SEL_HIDDEN: usize = 32;
const SEL_NAMES: [&str; 4] = ["sel.hidden.w", "sel.hidden.b", "sel.out.w", "sel.out.b"];
/// Decorrelates the fixed validation noise from the training stream.
const EPS_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Selector hyperparameters; each method reads the fields it needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfSpec {
    /// Weight on the information penalty.
    pub beta: f64,
    /// Prior keep-probability the gates are pulled toward.
    pub r: f64,
    /// Bounds on the learned per-point noise scale.
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for SelfSpec {
    fn default() -> Self {
        SelfSpec { beta: 1.0, r: 0.5, sigma_min: 0.05, sigma_max: 1.0 }
    }
}

impl SelfSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::Config(format!("prior keep-probability must lie in (0,1), got {}", self.r)));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::Config(format!(
                "noise bounds need 0 < min < max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        Ok(())
    }
}

/// A trained backbone plus its selector and read-out rule.
#[derive(Clone, Debug)]
pub struct SelfModel {
    pub model: Model,
    /// sel.hidden.w, sel.hidden.b, sel.out.w, sel.out.b; empty for the
    /// attention method, whose selector is the pooling itself.
    pub selector: Vec<Tensor>,
    pub method: String,
    pub spec: SelfSpec,
}

/// Tensor shapes of the selector head, in `SEL_NAMES` order.
pub fn selector_layout(hidden: usize) -> [Vec<usize>; 4] {
    [vec![hidden, SEL_HIDDEN], vec![SEL_HIDDEN], vec![SEL_HIDDEN, 1], vec![1]]
}

fn init_selector(hidden: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    // The output layer starts at zero so every gate opens at sigmoid(0):
    // the selector begins uninformative and must earn any deviation.
    selector_layout(hidden)
        .iter()
        .enumerate()
        .map(|(i, shape)| {
            if i == 0 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                Tensor::new(
                    shape.clone(),
                    (0..shape[0] * shape[1]).map(|_| rng.gen_range(-limit..limit)).collect(),
                )
                .unwrap()
            } else {
                Tensor::zeros(shape.clone())
            }
        })
        .collect()
}

/// Per-point selector logits `(n, 1)` from embeddings already on the tape.
pub fn selector_logits(tape: &mut Tape, emb: VarId, svars: &[VarId]) -> Result<VarId> {
    let h = affine(tape, emb, svars[0], svars[1])?;
    let h = tape.relu(h);
    affine(tape, h, svars[2], svars[3])
}

/// `sum_i KL(Bern(p_i) || Bern(r))` with `p = sigmoid(logits)`.
fn kl_to_prior(tape: &mut Tape, logits: VarId, r: f64) -> Result<VarId> {
    let p = tape.sigmoid(logits);
    let shape = tape.value(p).shape().to_vec();
    let ones = tape.leaf(Tensor::full(shape, 1.0));
    let q = tape.sub(ones, p)?;
    let lp = tape.add_scalar(p, 1e-12);
    let lp = tape.ln(lp);
    let lq = tape.add_scalar(q, 1e-12);
    let lq = tape.ln(lq);
    let lp = tape.add_scalar(lp, -r.ln());
    let lq = tape.add_scalar(lq, -(1.0 - r).ln());
    let a = tape.mul(p, lp)?;
    let b = tape.mul(q, lq)?;
    let s = tape.add(a, b)?;
    Ok(tape.sum(s))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Flavor {
    Bern,
    Gauss,
}

impl Flavor {
    fn method(self) -> &'static str {
        match self {
            Flavor::Bern => methods::LRI_BERN,
            Flavor::Gauss => methods::LRI_GAUSS,
        }
    }
}

/// Shared trainer: joint gradient steps on backbone and selector, early
/// stopping on deterministic validation accuracy, best-epoch snapshot.
/// Mean IB objective (CE under the selector's perturbation plus the weighted
/// information penalty) over `samples`, evaluated deterministically: Bern
/// uses the keep-probabilities as a soft mask instead of sampling, Gauss
/// draws one fixed noise realization per call so epochs are comparable.
fn valid_objective(
    sm: &SelfModel,
    samples: &[&PointCloud],
    flavor: Flavor,
    eps_seed: u64,
) -> Result<f64> {
    let spec = &sm.spec;
    let span = spec.sigma_max - spec.sigma_min;
    let coord_dim = sm.model.hyper.coord_dim;
    let mut eps_rng = ChaCha8Rng::seed_from_u64(eps_seed);
    let mut total = 0.0;
    for cloud in samples {
        let n = cloud.n_points();
        let mut tape = Tape::new();
        let pvars: Vec<VarId> = sm.model.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let svars: Vec<VarId> = sm.selector.iter().map(|p| tape.leaf(p.clone())).collect();
        let coords = tape.leaf(cloud.coords.clone());
        let features = tape.leaf(cloud.features.clone());
        let scan = sm.model.trace_on(&mut tape, coords, features, None, &pvars)?;
        let emb = *scan.layer_h.last().expect("at least one layer");
        let logits = selector_logits(&mut tape, emb, &svars)?;
        let (logit, penalty) = match flavor {
            Flavor::Bern => {
                let gates = tape.sigmoid(logits);
                let pass = sm.model.trace_on(&mut tape, coords, features, Some(gates), &pvars)?;
                (pass.logit, kl_to_prior(&mut tape, logits, spec.r)?)
            }
            Flavor::Gauss => {
                let sig = tape.sigmoid(logits);
                let sig = tape.mul_scalar(sig, span);
                let sig = tape.add_scalar(sig, spec.sigma_min);
                let eps: Vec<f64> =
                    (0..n * coord_dim).map(|_| eps_rng.sample(StandardNormal)).collect();
                let eps = tape.leaf(Tensor::new(vec![n, coord_dim], eps)?);
                let sig_exp = tape.expand(sig, &[n, coord_dim])?;
                let jitter = tape.mul(sig_exp, eps)?;
                let noisy = tape.add(coords, jitter)?;
                let pass = sm
                    .model
                    .trace_anchored(&mut tape, &cloud.coords, noisy, features, None, &pvars)?;
                let ln_sig = tape.ln(sig);
                let sum_ln = tape.sum(ln_sig);
                let neg = tape.mul_scalar(sum_ln, -1.0);
                (pass.logit, tape.add_scalar(neg, n as f64 * spec.sigma_max.ln()))
            }
        };
        let ce = tape.bce_with_logits(logit, f64::from(cloud.label))?;
        let pen = tape.mul_scalar(penalty, spec.beta);
        let loss = tape.add(ce, pen)?;
        total += tape.value(loss).item();
    }
    Ok(total / samples.len() as f64)
}

fn fit_lri(
    ds: &Dataset,
    arch: &ModelSpec,
    cfg: &TrainConfig,
    spec: &SelfSpec,
    seed: u64,
    flavor: Flavor,
) -> Result<SelfModel> {
    cfg.validate()?;
    spec.validate()?;
    let hyper = Hyper {
        hidden: arch.hidden,
        layers: arch.layers,
        k_neighbors: arch.k_neighbors,
        coord_dim: ds.coord_dim,
        feat_dim: ds.feat_dim,
    };
    hyper.validate()?;
    let train = ds.split_samples(Split::Train);
    let valid = ds.split_samples(Split::Valid);
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Train("training needs non-empty train and valid splits".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model {
        backbone: arch.backbone,
        readout: arch.readout,
        hyper,
        params: init_params(arch.backbone, arch.readout, &hyper, &mut rng),
        meta: ModelMeta { seed, ..ModelMeta::default() },
    };
    let mut selector = init_selector(arch.hidden, &mut rng);
    let mut current = SelfModel {
        model,
        selector: selector.clone(),
        method: flavor.method().into(),
        spec: *spec,
    };
    model = current.model.clone();

    let mut adam_f = Adam::new(&model.params, cfg.lr);
    let mut adam_g = Adam::new(&selector, cfg.lr);
    if cfg.max_epochs == 0 {
        current.model.meta.valid_accuracy = self_accuracy(&current, &valid)?;
        return Ok(current);
    }

    let span = spec.sigma_max - spec.sigma_min;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(Vec<Tensor>, Vec<Tensor>, f64, usize)> = None;
    let mut stale = 0usize;
    let mut epochs_run = 0;

    for epoch in 0..cfg.max_epochs {
        epochs_run = epoch + 1;
        let tau = temperature(epoch, cfg.max_epochs);
        crate::data::shuffle(&mut order, &mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc_f: Vec<Tensor> =
                model.params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
            let mut acc_g: Vec<Tensor> =
                selector.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut tape = Tape::new();
                let sample;
                let cloud = if cfg.augment_rotations && ds.coord_dim == 3 {
                    sample = rotated(train[i], &mut rng);
                    &sample
                } else {
                    train[i]
                };
                let n = cloud.n_points();
                let pvars: Vec<VarId> =
                    model.params.iter().map(|p| tape.var(p.clone())).collect();
                let svars: Vec<VarId> =
                    selector.iter().map(|p| tape.var(p.clone())).collect();
                let coords = tape.leaf(cloud.coords.clone());
                let features = tape.leaf(cloud.features.clone());
                // First pass, unperturbed: the selector reads these states.
                let scan = model.trace_on(&mut tape, coords, features, None, &pvars)?;
                let emb = *scan.layer_h.last().expect("at least one layer");
                let logits = selector_logits(&mut tape, emb, &svars)?;
                let (logit, penalty) = match flavor {
                    Flavor::Bern => {
                        let noise: Vec<f64> =
                            (0..n).map(|_| logistic_noise(&mut rng)).collect();
                        let gates = concrete_gate(&mut tape, logits, &noise, tau)?;
                        let pass =
                            model.trace_on(&mut tape, coords, features, Some(gates), &pvars)?;
                        (pass.logit, kl_to_prior(&mut tape, logits, spec.r)?)
                    }
                    Flavor::Gauss => {
                        let sig = tape.sigmoid(logits);
                        let sig = tape.mul_scalar(sig, span);
                        let sig = tape.add_scalar(sig, spec.sigma_min);
                        let eps: Vec<f64> = (0..n * ds.coord_dim)
                            .map(|_| rng.sample(StandardNormal))
                            .collect();
                        let eps = tape.leaf(Tensor::new(vec![n, ds.coord_dim], eps)?);
                        let sig_exp = tape.expand(sig, &[n, ds.coord_dim])?;
                        let jitter = tape.mul(sig_exp, eps)?;
                        let noisy = tape.add(coords, jitter)?;
                        // Noise perturbs the distance features but not the
                        // neighbor graph, keeping d(loss)/d(sigma) smooth.
                        let pass = model.trace_anchored(
                            &mut tape,
                            &cloud.coords,
                            noisy,
                            features,
                            None,
                            &pvars,
                        )?;
                        // sum_i log(sigma_max / sigma_i): zero when every
                        // point takes maximal noise.
                        let ln_sig = tape.ln(sig);
                        let sum_ln = tape.sum(ln_sig);
                        let neg = tape.mul_scalar(sum_ln, -1.0);
                        (pass.logit, tape.add_scalar(neg, n as f64 * spec.sigma_max.ln()))
                    }
                };
                let ce = tape.bce_with_logits(logit, f64::from(train[i].label))?;
                let pen = tape.mul_scalar(penalty, spec.beta);
                let loss = tape.add(ce, pen)?;
                batch_loss += tape.value(loss).item();
                let grads = tape.backward(loss)?;
                for (acc, &pid) in acc_f.iter_mut().zip(&pvars) {
                    let g = grads.wrt(pid);
                    for (a, &ge) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += ge;
                    }
                }
                for (acc, &sid) in acc_g.iter_mut().zip(&svars) {
                    let g = grads.wrt(sid);
                    for (a, &ge) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += ge;
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Train(format!(
                    "{}: loss diverged in epoch {epoch}",
                    flavor.method()
                )));
            }
            let scale = 1.0 / batch.len() as f64;
            for acc in acc_f.iter_mut().chain(acc_g.iter_mut()) {
                for a in acc.data_mut() {
                    *a *= scale;
                }
            }
            adam_f.step(&mut model.params, &acc_f);
            adam_g.step(&mut selector, &acc_g);
        }
        current.model = model.clone();
        current.selector = selector.clone();
        // Snapshot on the validation objective, not accuracy: for Gauss the
        // clean-forward accuracy ignores the selector entirely and would
        // freeze an epoch where the noise scales are still uninformative.
        let obj = valid_objective(&current, &valid, flavor, seed ^ EPS_SALT)?;
        let improved = best.as_ref().map_or(true, |(_, _, b, _)| obj < *b);
        if improved {
            best = Some((model.params.clone(), selector.clone(), obj, epoch + 1));
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= cfg.patience {
            break;
        }
    }

    let (params, selector, _, best_epoch) = best.expect("at least one epoch ran");
    current.model.params = params;
    current.selector = selector;
    let valid_accuracy = self_accuracy(&current, &valid)?;
    current.model.meta = ModelMeta { seed, epochs_run, best_epoch, valid_accuracy };
    Ok(current)
}

fn rotated(cloud: &PointCloud, rng: &mut ChaCha8Rng) -> PointCloud {
    let rot = crate::data::synmotif::random_rotation(rng);
    let n = cloud.coords.shape()[0];
    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        let p = cloud.coords.row(i);
        for row in &rot {
            data.push(row[0] * p[0] + row[1] * p[1] + row[2] * p[2]);
        }
    }
    let mut out = cloud.clone();
    out.coords = Tensor::new(vec![n, 3], data).unwrap();
    out
}

pub fn train_lri_bern(
    ds: &Dataset,
    arch: &ModelSpec,
    cfg: &TrainConfig,
    spec: &SelfSpec,
    seed: u64,
) -> Result<SelfModel> {
    fit_lri(ds, arch, cfg, spec, seed, Flavor::Bern)
}

pub fn train_lri_gauss(
    ds: &Dataset,
    arch: &ModelSpec,
    cfg: &TrainConfig,
    spec: &SelfSpec,
    seed: u64,
) -> Result<SelfModel> {
    fit_lri(ds, arch, cfg, spec, seed, Flavor::Gauss)
}

/// Attention variant: a plain supervised run with softmax attention
/// pooling; the attention weights are the interpretation.
pub fn train_attention(
    ds: &Dataset,
    arch: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<SelfModel> {
    let arch = ModelSpec { readout: Readout::AttnPool, ..*arch };
    let model = train_erm(ds, &arch, cfg, seed)?;
    Ok(SelfModel {
        model,
        selector: vec![],
        method: methods::ATTENTION.into(),
        spec: SelfSpec::default(),
    })
}

impl SelfModel {
    fn check_structure(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Interpret { method: self.method.clone(), msg });
        match self.method.as_str() {
            methods::ATTENTION => {
                if self.model.readout != Readout::AttnPool {
                    return fail("attention read-out requires attention pooling".into());
                }
            }
            methods::LRI_BERN | methods::LRI_GAUSS => {
                let want = selector_layout(self.model.hyper.hidden);
                if self.selector.len() != want.len() {
                    return fail(format!(
                        "selector has {} tensors, want {}",
                        self.selector.len(),
                        want.len()
                    ));
                }
                for ((t, shape), name) in self.selector.iter().zip(&want).zip(SEL_NAMES) {
                    if t.shape() != &shape[..] {
                        return fail(format!(
                            "selector tensor `{name}` has shape {:?}, want {shape:?}",
                            t.shape()
                        ));
                    }
                }
            }
            other => return fail(format!("unknown self-interpretation method `{other}`")),
        }
        Ok(())
    }

    /// Per-point selector read-out on one cloud: keep-probabilities for the
    /// gate method, rescaled inverse noise for the Gaussian one.
    fn selector_read(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let emb = self.model.embeddings(cloud)?;
        let mut tape = Tape::new();
        let svars: Vec<VarId> = self.selector.iter().map(|t| tape.leaf(t.clone())).collect();
        let ev = tape.leaf(emb);
        let logits = selector_logits(&mut tape, ev, &svars)?;
        Ok(tape.value(logits).data().iter().map(|&z| sigmoid(z)).collect())
    }

    /// Deterministic prediction: gates applied at their mean for the gate
    /// method, noiseless forward otherwise.
    pub fn predict(&self, cloud: &PointCloud) -> Result<Prediction> {
        self.check_structure()?;
        match self.method.as_str() {
            methods::LRI_BERN => {
                let gates = self.selector_read(cloud)?;
                self.model.predict_masked(cloud, &gates)
            }
            _ => self.model.predict(cloud),
        }
    }
}

impl crate::metrics::Classifier for SelfModel {
    fn predict(&self, cloud: &PointCloud) -> Result<Prediction> {
        SelfModel::predict(self, cloud)
    }
}

/// Read importance scores off a trained self-model without touching its
/// parameters.
pub fn extract_scores(sm: &SelfModel, cloud: &PointCloud) -> Result<ImportanceScores> {
    sm.check_structure()?;
    let tag = format!("{}-s{}", sm.method, sm.model.meta.seed);
    let w = match sm.method.as_str() {
        methods::LRI_BERN => sm.selector_read(cloud)?,
        methods::LRI_GAUSS => {
            // sigma = min + span*sigmoid(z), so importance
            // (max - sigma)/span collapses to 1 - sigmoid(z).
            sm.selector_read(cloud)?.iter().map(|p| 1.0 - p).collect()
        }
        methods::ATTENTION => {
            let mut tape = Tape::new();
            let trace = sm.model.trace(
                &mut tape,
                cloud,
                &crate::backbones::ForwardSpec::plain(),
            )?;
            let a = trace.attention.expect("attention pooling provides weights");
            tape.value(a).data().to_vec()
        }
        _ => unreachable!("checked above"),
    };
    Ok(ImportanceScores::new(cloud.id, &sm.method, &tag, w))
}

/// Mean KL of the gates to the prior over a sample set; the quantity the
/// information penalty actually charges.
pub fn mean_gate_kl(sm: &SelfModel, samples: &[&PointCloud]) -> Result<f64> {
    if sm.method != methods::LRI_BERN {
        return Err(Error::Interpret {
            method: sm.method.clone(),
            msg: "gate KL is defined for the Bernoulli selector".into(),
        });
    }
    let r = sm.spec.r;
    let mut total = 0.0;
    let mut count = 0usize;
    for cloud in samples {
        for p in extract_scores(sm, cloud)?.scores {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            total += p * (p / r).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - r)).ln();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Classification accuracy of the self-model's deterministic predictions.
pub fn self_accuracy(sm: &SelfModel, samples: &[&PointCloud]) -> Result<f64> {
    if sm.method == methods::LRI_BERN {
        if samples.is_empty() {
            return Err(Error::Metric("accuracy over an empty sample set".into()));
        }
        let mut hits = 0usize;
        for cloud in samples {
            if sm.predict(cloud)?.label == cloud.label {
                hits += 1;
            }
        }
        Ok(hits as f64 / samples.len() as f64)
    } else {
        accuracy(&sm.model, samples)
    }
}

pub fn save_self_model(path: &Path, sm: &SelfModel) -> Result<()> {
    sm.check_structure()?;
    let named: Vec<(String, Tensor)> = SEL_NAMES
        .iter()
        .zip(&sm.selector)
        .map(|(name, t)| (name.to_string(), t.clone()))
        .collect();
    let scalars = [
        ("beta".to_string(), sm.spec.beta),
        ("r".to_string(), sm.spec.r),
        ("sigma_min".to_string(), sm.spec.sigma_min),
        ("sigma_max".to_string(), sm.spec.sigma_max),
    ];
    save_checkpoint(path, &sm.model, &sm.method, &named, &scalars)
}

pub fn load_self_model(path: &Path) -> Result<SelfModel> {
    self_model_from(load_checkpoint(path)?, path)
}

fn self_model_from(cp: Checkpoint, path: &Path) -> Result<SelfModel> {
    let bad = |msg: String| Error::Artifact { path: path.display().to_string(), msg };
    let scalar = |name: &str| -> Result<f64> {
        cp.scalars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| bad(format!("missing scalar `{name}`")))
    };
    let spec = SelfSpec {
        beta: scalar("beta")?,
        r: scalar("r")?,
        sigma_min: scalar("sigma_min")?,
        sigma_max: scalar("sigma_max")?,
    };
    let mut selector = Vec::with_capacity(SEL_NAMES.len());
    if cp.method != methods::ATTENTION {
        for name in SEL_NAMES {
            let t = cp
                .selector
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| bad(format!("missing selector tensor `{name}`")))?;
            selector.push(t);
        }
    }
    let sm = SelfModel { model: cp.model, selector, method: cp.method, spec };
    sm.check_structure()
        .map_err(|e| bad(format!("checkpoint is not a self-model: {e}")))?;
    Ok(sm)
}
