//! Supervised training with Adam and early stopping on validation accuracy.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{init_params, Backbone, ForwardSpec, Hyper, Model, ModelMeta, Readout};
use crate::data::{Dataset, PointCloud, Split};
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Architecture knobs that do not depend on the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub backbone: Backbone,
    pub readout: Readout,
    pub hidden: usize,
    pub layers: usize,
    pub k_neighbors: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            backbone: Backbone::Egnn,
            readout: Readout::MeanPool,
            hidden: 64,
            layers: 3,
            k_neighbors: 6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a new best validation accuracy.
    pub patience: usize,
    /// Rotate each 3-D training cloud by a fresh seeded rotation every epoch.
    /// A no-op for rotation-invariant backbones; teaches the others that
    /// orientation carries no label information.
    pub augment_rotations: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 15,
            augment_rotations: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction; one moment pair per parameter tensor.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for ((pe, &ge), (me, ve)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *me = self.beta1 * *me + (1.0 - self.beta1) * ge;
                *ve = self.beta2 * *ve + (1.0 - self.beta2) * ge * ge;
                *pe -= self.lr * (*me / bc1) / ((*ve / bc2).sqrt() + self.eps);
            }
        }
    }
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

/// Fraction of samples whose predicted label matches.
pub fn accuracy(model: &Model, samples: &[&PointCloud]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Metric("accuracy over an empty sample set".into()));
    }
    let mut hits = 0usize;
    for cloud in samples {
        if model.predict(cloud)?.label == cloud.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Minimize binary cross-entropy on the training split; keep the
/// parameters from the epoch with the best validation accuracy.
pub fn train_erm(ds: &Dataset, spec: &ModelSpec, cfg: &TrainConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let hyper = Hyper {
        hidden: spec.hidden,
        layers: spec.layers,
        k_neighbors: spec.k_neighbors,
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
        backbone: spec.backbone,
        readout: spec.readout,
        hyper,
        params: init_params(spec.backbone, spec.readout, &hyper, &mut rng),
        meta: ModelMeta { seed, ..ModelMeta::default() },
    };
    let mut adam = Adam::new(&model.params, cfg.lr);

    // A zero-epoch budget is legal and returns the initialized model.
    if cfg.max_epochs == 0 {
        model.meta.valid_accuracy = accuracy(&model, &valid)?;
        return Ok(model);
    }

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best_params = model.params.clone();
    let mut best_acc = -1.0;
    let mut best_epoch = 0;
    let mut stale = 0usize;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        crate::data::shuffle(&mut order, &mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut accum: Vec<Tensor> =
                model.params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
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
                let trace = model.trace(&mut tape, cloud, &ForwardSpec::for_params())?;
                let loss = tape.bce_with_logits(trace.logit, f64::from(train[i].label))?;
                batch_loss += tape.value(loss).item();
                let grads = tape.backward(loss)?;
                for (acc, &pid) in accum.iter_mut().zip(&trace.params) {
                    let g = grads.wrt(pid);
                    for (a, &ge) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += ge;
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Train(format!("loss diverged in epoch {epoch}")));
            }
            let scale = 1.0 / batch.len() as f64;
            for acc in &mut accum {
                for a in acc.data_mut() {
                    *a *= scale;
                }
            }
            adam.step(&mut model.params, &accum);
        }
        let acc = accuracy(&model, &valid)?;
        if acc > best_acc {
            best_acc = acc;
            best_epoch = epoch;
            best_params = model.params.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        // A perfect score can never be strictly beaten, so the selected
        // parameters are already final.
        if stale >= cfg.patience || best_acc == 1.0 {
            break;
        }
    }

    model.params = best_params;
    model.meta = ModelMeta { seed, epochs_run, best_epoch, valid_accuracy: best_acc };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synmotif::{self, SynMotifConfig};

    fn tiny_dataset(seed: u64) -> crate::data::Dataset {
        let config = SynMotifConfig {
            n_train: 96,
            n_valid: 32,
            n_test: 32,
            n_min: 10,
            n_max: 18,
            ..SynMotifConfig::default()
        };
        synmotif::generate(&config, seed).unwrap()
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize (p - 3)^2 elementwise from p = 0.
        let mut params = vec![Tensor::zeros(vec![4])];
        let mut adam = Adam::new(&params, 0.05);
        for _ in 0..500 {
            let grads: Vec<Tensor> = params
                .iter()
                .map(|p| {
                    Tensor::new(vec![4], p.data().iter().map(|v| 2.0 * (v - 3.0)).collect())
                        .unwrap()
                })
                .collect();
            adam.step(&mut params, &grads);
        }
        for &v in params[0].data() {
            assert!((v - 3.0).abs() < 1e-2, "stopped at {v}");
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let ds = tiny_dataset(4);
        let spec = ModelSpec { hidden: 8, layers: 1, k_neighbors: 4, ..ModelSpec::default() };
        let cfg = TrainConfig { max_epochs: 2, ..TrainConfig::default() };
        let a = train_erm(&ds, &spec, &cfg, 11).unwrap();
        let b = train_erm(&ds, &spec, &cfg, 11).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.meta, b.meta);
        let c = train_erm(&ds, &spec, &cfg, 12).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn training_beats_chance_on_motif_data() {
        let config = SynMotifConfig {
            n_train: 160,
            n_valid: 48,
            n_test: 48,
            n_min: 12,
            n_max: 20,
            ..SynMotifConfig::default()
        };
        let ds = synmotif::generate(&config, 7).unwrap();
        let cfg = TrainConfig { max_epochs: 40, patience: 12, ..TrainConfig::default() };
        let model = train_erm(&ds, &ModelSpec::default(), &cfg, 1).unwrap();
        let test = ds.split_samples(Split::Test);
        let acc = accuracy(&model, &test).unwrap();
        assert!(acc >= 0.8, "test accuracy only {acc}");
        assert!(model.meta.valid_accuracy >= 0.8);
        assert!(model.meta.best_epoch >= 1);
    }

    #[test]
    fn zero_epochs_returns_initialized_model_near_chance() {
        let ds = tiny_dataset(3);
        let cfg = TrainConfig { max_epochs: 0, ..TrainConfig::default() };
        let spec = ModelSpec { hidden: 8, layers: 1, k_neighbors: 4, ..ModelSpec::default() };
        let model = train_erm(&ds, &spec, &cfg, 9).unwrap();
        assert_eq!(model.meta.epochs_run, 0);
        let acc = accuracy(&model, &ds.split_samples(Split::Test)).unwrap();
        assert!((acc - 0.5).abs() <= 0.1, "untrained accuracy {acc}");
        let fresh = Model::new(spec.backbone, spec.readout, model.hyper, 9).unwrap();
        assert_eq!(model.params, fresh.params);
    }

    #[test]
    fn empty_split_is_rejected() {
        let mut ds = tiny_dataset(2);
        ds.splits.valid.clear();
        let err = train_erm(&ds, &ModelSpec::default(), &TrainConfig::default(), 0).unwrap_err();
        assert!(err.to_string().contains("split"));
    }
}
