//! Post-hoc importance-score producers operating on a frozen trained model:
//! gradient-based attributions, learned mask explainers, and a Monte-Carlo
//! tree search over point subsets.

mod learned;
mod subgraphx;

pub use learned::{gnnexplainer, pgexplainer, train_pgexplainer, PgExplainer};
pub use subgraphx::{exhaustive_best_subset, subgraphx, subgraphx_search, SubgraphxOutcome};

use serde::{Deserialize, Serialize};

use crate::backbones::{ForwardSpec, Model, Prediction};
use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::scores::{methods, ImportanceScores};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

/// Hyperparameters shared across interpreters; each method reads the
/// fields it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpreterSpec {
    /// Path resolution for integrated gradients.
    pub steps: usize,
    /// Weight on the mask L1 term in mask optimizers.
    pub lambda_sparsity: f64,
    /// Weight on the element-wise mask entropy term.
    pub lambda_entropy: f64,
    /// Tree-search budget for the subset explainer.
    pub rollouts: usize,
    /// Coalition draws per subset evaluation.
    pub coalition_samples: usize,
    /// Largest cloud the subset explainer accepts.
    pub n_cap: usize,
    pub lr: f64,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl Default for InterpreterSpec {
    fn default() -> Self {
        InterpreterSpec {
            steps: 64,
            lambda_sparsity: 0.01,
            lambda_entropy: 0.01,
            rollouts: 24,
            coalition_samples: 12,
            n_cap: 60,
            lr: 0.05,
            epochs: 100,
            rng_seed: 0,
        }
    }
}

impl InterpreterSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| {
            Err(Error::Interpret { method: "spec".into(), msg })
        };
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if !(self.lambda_sparsity >= 0.0 && self.lambda_sparsity.is_finite())
            || !(self.lambda_entropy >= 0.0 && self.lambda_entropy.is_finite())
        {
            return fail("penalty weights must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// What the learned explainers need from the model under explanation:
/// plain predictions, a mask-differentiable forward, and frozen per-point
/// embeddings. Implemented by [`Model`] and by test stubs.
pub trait ExplainTarget {
    fn predict(&self, cloud: &PointCloud) -> Result<Prediction>;
    /// Logit of the forward pass under a caller-built `(n, 1)` mask node.
    fn masked_logit(&self, tape: &mut Tape, cloud: &PointCloud, mask: VarId) -> Result<VarId>;
    /// Frozen per-point representations, `(n, e)`.
    fn embeddings(&self, cloud: &PointCloud) -> Result<Tensor>;
    fn tag(&self) -> String;
}

impl ExplainTarget for Model {
    fn predict(&self, cloud: &PointCloud) -> Result<Prediction> {
        Model::predict(self, cloud)
    }

    fn masked_logit(&self, tape: &mut Tape, cloud: &PointCloud, mask: VarId) -> Result<VarId> {
        Ok(self.trace_masked_var(tape, cloud, mask)?.logit)
    }

    fn embeddings(&self, cloud: &PointCloud) -> Result<Tensor> {
        Model::embeddings(self, cloud)
    }

    fn tag(&self) -> String {
        Model::tag(self)
    }
}

/// `score_i = |sum_d(gp[i,d] * p[i,d]) + sum_d(gx[i,d] * x[i,d])|`:
/// signed per-dimension products summed per point, absolute value last so
/// opposing contributions may cancel.
fn abs_sum_reduce(parts: &[(&Tensor, &Tensor)]) -> Vec<f64> {
    let n = parts[0].0.shape()[0];
    let mut out = vec![0.0; n];
    for (grad, input) in parts {
        let cols = grad.shape()[1];
        for i in 0..n {
            let g = grad.row(i);
            let x = input.row(i);
            for d in 0..cols {
                out[i] += g[d] * x[d];
            }
        }
    }
    for v in &mut out {
        *v = v.abs();
    }
    out
}

/// Gradient of the logit times the input, per point, over both the
/// coordinates and the features.
pub fn gradxinput(model: &Model, cloud: &PointCloud) -> Result<ImportanceScores> {
    let mut tape = Tape::new();
    let trace = model.trace(&mut tape, cloud, &ForwardSpec::for_inputs())?;
    let grads = tape.backward(trace.logit)?;
    let gp = grads.wrt(trace.coords);
    let gx = grads.wrt(trace.features);
    let w = abs_sum_reduce(&[(&gp, &cloud.coords), (&gx, &cloud.features)]);
    Ok(ImportanceScores::new(cloud.id, methods::GRADXINPUT, &model.tag(), w))
}

/// Integrated-gradients output plus the bookkeeping needed to check the
/// completeness identity.
pub struct IgOutcome {
    pub scores: ImportanceScores,
    /// Sum of the raw signed attributions over all points and dimensions.
    pub signed_total: f64,
    /// `logit(input) - logit(baseline)`, which `signed_total` approximates.
    pub logit_gap: f64,
}

impl IgOutcome {
    pub fn residual(&self) -> f64 {
        (self.signed_total - self.logit_gap).abs()
    }
}

/// Midpoint-rule path integral of gradients from an uninformative baseline
/// (all points collapsed onto the centroid, zero features) to the input.
pub fn integrated_gradients_outcome(
    model: &Model,
    cloud: &PointCloud,
    steps: usize,
) -> Result<IgOutcome> {
    if steps < 8 {
        return Err(Error::Interpret {
            method: methods::INTGRAD.into(),
            msg: format!("path needs at least 8 steps, got {steps}"),
        });
    }
    let n = cloud.n_points();
    let cdim = cloud.coords.shape()[1];
    let fdim = cloud.features.shape()[1];
    let mut centroid = vec![0.0; cdim];
    for i in 0..n {
        for (c, v) in centroid.iter_mut().zip(cloud.coords.row(i)) {
            *c += v / n as f64;
        }
    }
    let base_coords =
        Tensor::new(vec![n, cdim], centroid.iter().cycle().take(n * cdim).copied().collect())?;
    let delta_coords = cloud.coords.sub(&base_coords)?;
    // The feature baseline is zero, so the feature delta is the input itself.
    let mut gp_acc = vec![0.0; n * cdim];
    let mut gx_acc = vec![0.0; n * fdim];
    for k in 0..steps {
        let alpha = (2 * k + 1) as f64 / (2 * steps) as f64;
        let coords_k = base_coords.add(&delta_coords.scale(alpha))?;
        let feats_k = cloud.features.scale(alpha);
        let probe = PointCloud {
            id: cloud.id,
            coords: coords_k,
            features: feats_k,
            decisive: cloud.decisive.clone(),
            label: cloud.label,
        };
        let mut tape = Tape::new();
        let trace = model.trace(&mut tape, &probe, &ForwardSpec::for_inputs())?;
        let grads = tape.backward(trace.logit)?;
        for (acc, g) in gp_acc.iter_mut().zip(grads.wrt(trace.coords).data()) {
            *acc += g / steps as f64;
        }
        for (acc, g) in gx_acc.iter_mut().zip(grads.wrt(trace.features).data()) {
            *acc += g / steps as f64;
        }
    }
    let gp = Tensor::new(vec![n, cdim], gp_acc)?;
    let gx = Tensor::new(vec![n, fdim], gx_acc)?;
    let attr_p = gp.mul_elem(&delta_coords)?;
    let attr_x = gx.mul_elem(&cloud.features)?;
    let signed_total: f64 =
        attr_p.data().iter().sum::<f64>() + attr_x.data().iter().sum::<f64>();
    let mut w = vec![0.0; n];
    for i in 0..n {
        let s: f64 = attr_p.row(i).iter().sum::<f64>() + attr_x.row(i).iter().sum::<f64>();
        w[i] = s.abs();
    }
    let logit_in = logit_of(model, cloud)?;
    let baseline = PointCloud {
        id: cloud.id,
        coords: base_coords,
        features: Tensor::zeros(vec![n, fdim]),
        decisive: cloud.decisive.clone(),
        label: cloud.label,
    };
    let logit_base = logit_of(model, &baseline)?;
    Ok(IgOutcome {
        scores: ImportanceScores::new(cloud.id, methods::INTGRAD, &model.tag(), w),
        signed_total,
        logit_gap: logit_in - logit_base,
    })
}

pub fn integrated_gradients(
    model: &Model,
    cloud: &PointCloud,
    steps: usize,
) -> Result<ImportanceScores> {
    Ok(integrated_gradients_outcome(model, cloud, steps)?.scores)
}

fn logit_of(model: &Model, cloud: &PointCloud) -> Result<f64> {
    let mut tape = Tape::new();
    let trace = model.trace(&mut tape, cloud, &ForwardSpec::plain())?;
    Ok(tape.value(trace.logit).item())
}

/// `score_i = relu(sum_c dlogit/dh[i,c] * h[i,c])` at one message-passing
/// layer; `layer` defaults to the last.
pub fn gradcam(model: &Model, cloud: &PointCloud, layer: Option<usize>) -> Result<ImportanceScores> {
    let layers = model.hyper.layers;
    let l = layer.unwrap_or(layers - 1);
    if l >= layers {
        return Err(Error::Interpret {
            method: methods::GRADCAM.into(),
            msg: format!("layer {l} out of range, model has layers 0..{layers}"),
        });
    }
    let mut tape = Tape::new();
    let trace = model.trace(&mut tape, cloud, &ForwardSpec::for_inputs())?;
    let grads = tape.backward(trace.logit)?;
    let h = tape.value(trace.layer_h[l]).clone();
    let g = grads.wrt(trace.layer_h[l]);
    let n = h.shape()[0];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let s: f64 = g.row(i).iter().zip(h.row(i)).map(|(gi, hi)| gi * hi).sum();
        w[i] = s.max(0.0);
    }
    Ok(ImportanceScores::new(cloud.id, methods::GRADCAM, &model.tag(), w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::{Backbone, Hyper, Readout};
    use crate::data::synmotif::{self, SynMotifConfig};

    fn tiny_model(backbone: Backbone, seed: u64) -> Model {
        let hyper =
            Hyper { hidden: 16, layers: 2, k_neighbors: 5, coord_dim: 3, feat_dim: 4 };
        Model::new(backbone, Readout::MeanPool, hyper, seed).unwrap()
    }

    fn sample_cloud(seed: u64) -> PointCloud {
        let cfg = SynMotifConfig {
            n_train: 6,
            n_valid: 1,
            n_test: 1,
            n_min: 10,
            n_max: 14,
            ..SynMotifConfig::default()
        };
        let ds = synmotif::generate(&cfg, seed).unwrap();
        ds.samples.into_iter().find(|c| c.label == 1).unwrap()
    }

    #[test]
    fn gradxinput_is_deterministic_and_sized() {
        let model = tiny_model(Backbone::Egnn, 3);
        let cloud = sample_cloud(11);
        let a = gradxinput(&model, &cloud).unwrap();
        let b = gradxinput(&model, &cloud).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scores.len(), cloud.n_points());
        assert!(a.scores.iter().all(|s| s.is_finite()));
    }

    #[test]
    fn gradient_scores_survive_point_relabeling() {
        let model = tiny_model(Backbone::Egnn, 5);
        let cloud = sample_cloud(12);
        let n = cloud.n_points();
        // Rotate the point order; scores must follow the permutation.
        let perm: Vec<usize> = (0..n).map(|i| (i + 3) % n).collect();
        let permuted = PointCloud {
            id: cloud.id,
            coords: Tensor::new(
                vec![n, 3],
                perm.iter().flat_map(|&i| cloud.coords.row(i).to_vec()).collect(),
            )
            .unwrap(),
            features: Tensor::new(
                vec![n, 4],
                perm.iter().flat_map(|&i| cloud.features.row(i).to_vec()).collect(),
            )
            .unwrap(),
            decisive: perm.iter().map(|&i| cloud.decisive[i]).collect(),
            label: cloud.label,
        };
        let w = gradxinput(&model, &cloud).unwrap().scores;
        let wp = gradxinput(&model, &permuted).unwrap().scores;
        for (slot, &src) in perm.iter().enumerate() {
            assert!((wp[slot] - w[src]).abs() < 1e-9, "point {src}");
        }
        let ig = integrated_gradients(&model, &cloud, 8).unwrap().scores;
        let igp = integrated_gradients(&model, &permuted, 8).unwrap().scores;
        for (slot, &src) in perm.iter().enumerate() {
            assert!((igp[slot] - ig[src]).abs() < 1e-9, "point {src}");
        }
    }

    #[test]
    fn intgrad_on_baseline_input_is_all_zero() {
        let model = tiny_model(Backbone::Egnn, 7);
        let cloud = sample_cloud(13);
        let n = cloud.n_points();
        // Collapse the input onto its own baseline: centroid + zero features.
        let mut centroid = [0.0; 3];
        for i in 0..n {
            for (c, v) in centroid.iter_mut().zip(cloud.coords.row(i)) {
                *c += v / n as f64;
            }
        }
        let degenerate = PointCloud {
            id: cloud.id,
            coords: Tensor::new(
                vec![n, 3],
                centroid.iter().cycle().take(3 * n).copied().collect(),
            )
            .unwrap(),
            features: Tensor::zeros(vec![n, 4]),
            decisive: cloud.decisive.clone(),
            label: cloud.label,
        };
        let out = integrated_gradients_outcome(&model, &degenerate, 16).unwrap();
        assert!(out.scores.scores.iter().all(|&s| s == 0.0));
        assert_eq!(out.logit_gap, 0.0);
    }

    #[test]
    fn intgrad_steps_floor_is_enforced() {
        let model = tiny_model(Backbone::Egnn, 7);
        let cloud = sample_cloud(14);
        let err = integrated_gradients(&model, &cloud, 7).unwrap_err().to_string();
        assert!(err.contains("8"), "{err}");
    }

    #[test]
    fn intgrad_completeness_tightens_with_steps() {
        let model = tiny_model(Backbone::EdgeConv, 9);
        let cloud = sample_cloud(15);
        let coarse = integrated_gradients_outcome(&model, &cloud, 16).unwrap();
        let fine = integrated_gradients_outcome(&model, &cloud, 256).unwrap();
        assert!(fine.residual() <= coarse.residual() + 1e-9);
        assert!(fine.residual() < 0.05, "residual {}", fine.residual());
    }

    #[test]
    fn gradcam_is_nonnegative_and_rejects_bad_layer() {
        let model = tiny_model(Backbone::Egnn, 4);
        let cloud = sample_cloud(16);
        let w = gradcam(&model, &cloud, None).unwrap();
        assert!(w.scores.iter().all(|&s| s >= 0.0));
        assert_eq!(w.scores, gradcam(&model, &cloud, Some(1)).unwrap().scores);
        let err = gradcam(&model, &cloud, Some(2)).unwrap_err().to_string();
        assert!(err.contains("layer 2"), "{err}");
    }

    #[test]
    fn gradcam_treats_duplicated_points_equally() {
        // Full connectivity (k = n) keeps the two copies symmetric, and the
        // sum aggregation avoids max's first-index gradient routing.
        let hyper = Hyper { hidden: 16, layers: 2, k_neighbors: 8, coord_dim: 3, feat_dim: 4 };
        let model = Model::new(Backbone::Egnn, Readout::MeanPool, hyper, 5).unwrap();
        let base = sample_cloud(17);
        let n = 9.min(base.n_points());
        let mut coords: Vec<f64> = (0..n).flat_map(|i| base.coords.row(i).to_vec()).collect();
        let mut feats: Vec<f64> = (0..n).flat_map(|i| base.features.row(i).to_vec()).collect();
        coords.extend_from_slice(base.coords.row(2));
        feats.extend_from_slice(base.features.row(2));
        let cloud = PointCloud {
            id: 0,
            coords: Tensor::new(vec![n + 1, 3], coords).unwrap(),
            features: Tensor::new(vec![n + 1, 4], feats).unwrap(),
            decisive: vec![0; n + 1],
            label: 1,
        };
        let w = gradcam(&model, &cloud, None).unwrap().scores;
        assert!((w[2] - w[n]).abs() < 1e-9, "copies scored {} vs {}", w[2], w[n]);
    }
}
