//! Point-cloud classifiers: two message-passing backbones over a k-NN
//! graph, with a traced forward pass that interpreters can differentiate
//! through. Soft masks scale messages and pooling weights; binary masks
//! additionally rebuild the graph over the surviving points, so masking
//! a point to zero is equivalent to deleting it.

pub mod knn;
pub mod train;

use std::collections::HashSet;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::tape::{sigmoid, Tape, VarId};
use crate::tensor::Tensor;

pub use knn::{knn_graph, knn_graph_masked, NeighborLists};
pub use train::{train_erm, Adam, TrainConfig};

const CHECKPOINT_FORMAT: &str = "gdlib-model-v1";

/// Message-passing flavor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backbone {
    /// Messages from receiver state, sender state, and squared edge
    /// length; sum aggregation. Invariant to rotations and translations.
    Egnn,
    /// Messages from receiver state, state difference, and coordinate
    /// difference; max aggregation. Sensitive to orientation.
    EdgeConv,
}

impl Backbone {
    pub fn name(self) -> &'static str {
        match self {
            Backbone::Egnn => "egnn",
            Backbone::EdgeConv => "edge-conv",
        }
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "egnn" => Ok(Backbone::Egnn),
            "edge-conv" => Ok(Backbone::EdgeConv),
            other => Err(Error::Config(format!(
                "unknown backbone `{other}` (expected `egnn` or `edge-conv`)"
            ))),
        }
    }
}

/// Graph-to-vector readout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    /// Mask-weighted mean over point states.
    MeanPool,
    /// Learned softmax attention over point states; the weights double
    /// as importance scores.
    AttnPool,
}

/// Architecture dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyper {
    pub hidden: usize,
    pub layers: usize,
    pub k_neighbors: usize,
    pub coord_dim: usize,
    pub feat_dim: usize,
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0
            || self.layers == 0
            || self.k_neighbors == 0
            || self.coord_dim == 0
            || self.feat_dim == 0
        {
            return Err(Error::Config(format!(
                "all architecture dimensions must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Where a trained model came from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub valid_accuracy: f64,
}

/// Binary point-cloud classifier with a single positive-class logit.
#[derive(Clone, Debug)]
pub struct Model {
    pub backbone: Backbone,
    pub readout: Readout,
    pub hyper: Hyper,
    /// Aligned with `layout(backbone, readout, &hyper)`.
    pub params: Vec<Tensor>,
    pub meta: ModelMeta,
}

/// Parameter names and shapes, in storage order.
pub fn layout(backbone: Backbone, readout: Readout, hyper: &Hyper) -> Vec<(String, Vec<usize>)> {
    let h = hyper.hidden;
    let edge_in = match backbone {
        Backbone::Egnn => 2 * h + 1,
        Backbone::EdgeConv => 2 * h + hyper.coord_dim,
    };
    let mut out = vec![
        ("embed.w".into(), vec![hyper.feat_dim, h]),
        ("embed.b".into(), vec![h]),
    ];
    for l in 0..hyper.layers {
        out.push((format!("mp{l}.edge1.w"), vec![edge_in, h]));
        out.push((format!("mp{l}.edge1.b"), vec![h]));
        out.push((format!("mp{l}.edge2.w"), vec![h, h]));
        out.push((format!("mp{l}.edge2.b"), vec![h]));
        out.push((format!("mp{l}.update.w"), vec![2 * h, h]));
        out.push((format!("mp{l}.update.b"), vec![h]));
    }
    if readout == Readout::AttnPool {
        out.push(("attn.w".into(), vec![h, 1]));
        out.push(("attn.b".into(), vec![1]));
    }
    out.push(("head.hidden.w".into(), vec![h, h]));
    out.push(("head.hidden.b".into(), vec![h]));
    out.push(("head.out.w".into(), vec![h, 1]));
    out.push(("head.out.b".into(), vec![1]));
    out
}

/// Xavier-uniform weights, zero biases, in layout order.
pub fn init_params(
    backbone: Backbone,
    readout: Readout,
    hyper: &Hyper,
    rng: &mut ChaCha8Rng,
) -> Vec<Tensor> {
    layout(backbone, readout, hyper)
        .iter()
        .map(|(_, shape)| {
            if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let data = (0..shape[0] * shape[1])
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect();
                Tensor::new(shape.clone(), data).unwrap()
            } else {
                Tensor::zeros(shape.clone())
            }
        })
        .collect()
}

impl Model {
    pub fn new(backbone: Backbone, readout: Readout, hyper: Hyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(backbone, readout, &hyper, &mut rng);
        Ok(Model {
            backbone,
            readout,
            hyper,
            params,
            meta: ModelMeta { seed, ..ModelMeta::default() },
        })
    }

    fn param_index(&self, name: &str) -> usize {
        layout(self.backbone, self.readout, &self.hyper)
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn param(&self, name: &str) -> &Tensor {
        &self.params[self.param_index(name)]
    }

    fn check_dims(&self, cloud: &PointCloud) -> Result<()> {
        if cloud.coords.shape()[1] != self.hyper.coord_dim
            || cloud.features.shape()[1] != self.hyper.feat_dim
        {
            return Err(Error::Forward(format!(
                "cloud has coords {:?} / features {:?} but model expects {} / {} columns",
                cloud.coords.shape(),
                cloud.features.shape(),
                self.hyper.coord_dim,
                self.hyper.feat_dim
            )));
        }
        Ok(())
    }

    /// Register inputs and parameters on `tape` and run the forward pass.
    pub fn trace(&self, tape: &mut Tape, cloud: &PointCloud, spec: &ForwardSpec) -> Result<Trace> {
        let n = cloud.coords.shape()[0];
        self.check_dims(cloud)?;
        let reg = |tape: &mut Tape, t: Tensor, diff: bool| {
            if diff {
                tape.var(t)
            } else {
                tape.leaf(t)
            }
        };
        let coords = reg(tape, cloud.coords.clone(), spec.diff_inputs);
        let features = reg(tape, cloud.features.clone(), spec.diff_inputs);
        let mask = match spec.mask {
            None => None,
            Some(m) => {
                if m.len() != n {
                    return Err(Error::Forward(format!(
                        "mask has {} entries for {n} points",
                        m.len()
                    )));
                }
                if m.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                    return Err(Error::Forward("mask entries must be finite in [0, 1]".into()));
                }
                Some(tape.leaf(Tensor::new(vec![n, 1], m.to_vec())?))
            }
        };
        let params: Vec<VarId> = self
            .params
            .iter()
            .map(|p| reg(tape, p.clone(), spec.diff_params))
            .collect();
        self.trace_on(tape, coords, features, mask, &params)
    }

    /// Forward pass over inputs already registered on `tape`. Points with
    /// mask weight zero are excluded from the neighbor graph; soft weights
    /// in (0, 1) keep the full graph and scale messages and pooling.
    pub fn trace_on(
        &self,
        tape: &mut Tape,
        coords: VarId,
        features: VarId,
        mask: Option<VarId>,
        params: &[VarId],
    ) -> Result<Trace> {
        let anchors = tape.value(coords).clone();
        self.trace_anchored(tape, &anchors, coords, features, mask, params)
    }

    /// [`Model::trace_on`] with the neighbor graph built from `anchors`
    /// instead of `coords`. Lets perturbed coordinates flow through distance
    /// features while the message topology stays that of the unperturbed
    /// cloud, so gradients through the perturbation stay smooth.
    pub fn trace_anchored(
        &self,
        tape: &mut Tape,
        anchors: &Tensor,
        coords: VarId,
        features: VarId,
        mask: Option<VarId>,
        params: &[VarId],
    ) -> Result<Trace> {
        let coords_val = anchors;
        let n = coords_val.shape()[0];
        let hdim = self.hyper.hidden;
        let p = |name: &str| params[self.param_index(name)];

        let active: Vec<bool> = match mask {
            None => vec![true; n],
            Some(m) => tape.value(m).data().iter().map(|&v| v > 0.0).collect(),
        };
        let graph = knn_graph_masked(coords_val, self.hyper.k_neighbors, &active)?;
        let k_eff = graph.k_eff;
        // Flatten to edge lists grouped by receiver; inactive receivers get
        // self-loop padding so every group has exactly k_eff slots.
        let mut src = Vec::with_capacity(n * k_eff);
        let mut dst = Vec::with_capacity(n * k_eff);
        for (i, nbrs) in graph.neighbors.iter().enumerate() {
            if nbrs.is_empty() {
                src.extend(std::iter::repeat(i).take(k_eff));
                dst.extend(std::iter::repeat(i).take(k_eff));
            } else {
                src.extend_from_slice(nbrs);
                dst.extend(std::iter::repeat(i).take(k_eff));
            }
        }
        let src = Rc::new(src);
        let dst = Rc::new(dst);

        let mut h = affine(tape, features, p("embed.w"), p("embed.b"))?;
        let mut layer_h = Vec::with_capacity(self.hyper.layers);
        for l in 0..self.hyper.layers {
            let agg = if k_eff == 0 {
                tape.leaf(Tensor::zeros(vec![n, hdim]))
            } else {
                let h_src = tape.gather_rows(h, Rc::clone(&src))?;
                let h_dst = tape.gather_rows(h, Rc::clone(&dst))?;
                let p_src = tape.gather_rows(coords, Rc::clone(&src))?;
                let p_dst = tape.gather_rows(coords, Rc::clone(&dst))?;
                let edge_in = match self.backbone {
                    Backbone::Egnn => {
                        let diff = tape.sub(p_src, p_dst)?;
                        let sq = tape.mul(diff, diff)?;
                        let d2 = tape.sum_axis(sq, 1)?;
                        let d2 = tape.reshape(d2, vec![src.len(), 1])?;
                        tape.concat_cols(&[h_dst, h_src, d2])?
                    }
                    Backbone::EdgeConv => {
                        let hdiff = tape.sub(h_src, h_dst)?;
                        let pdiff = tape.sub(p_src, p_dst)?;
                        tape.concat_cols(&[h_dst, hdiff, pdiff])?
                    }
                };
                let m1 = affine(tape, edge_in, p(&format!("mp{l}.edge1.w")), p(&format!("mp{l}.edge1.b")))?;
                let m1 = tape.relu(m1);
                let mut msg = affine(tape, m1, p(&format!("mp{l}.edge2.w")), p(&format!("mp{l}.edge2.b")))?;
                if self.backbone == Backbone::EdgeConv {
                    // Keep messages non-negative so a masked-to-zero message
                    // can never win the max over a live one.
                    msg = tape.relu(msg);
                }
                if let Some(m) = mask {
                    let m_src = tape.gather_rows(m, Rc::clone(&src))?;
                    let m_exp = tape.expand(m_src, &[src.len(), hdim])?;
                    msg = tape.mul(msg, m_exp)?;
                }
                let grouped = tape.reshape(msg, vec![n, k_eff, hdim])?;
                match self.backbone {
                    Backbone::Egnn => tape.sum_axis(grouped, 1)?,
                    Backbone::EdgeConv => tape.max_axis(grouped, 1)?,
                }
            };
            let cat = tape.concat_cols(&[h, agg])?;
            let up = affine(tape, cat, p(&format!("mp{l}.update.w")), p(&format!("mp{l}.update.b")))?;
            h = tape.relu(up);
            if !tape.value(h).is_finite_all() {
                return Err(Error::Forward(format!(
                    "{}: non-finite activations in message-passing layer {l}",
                    self.backbone.name()
                )));
            }
            layer_h.push(h);
        }

        let (pooled_vec, attention) = match self.readout {
            Readout::MeanPool => {
                let (num, den) = match mask {
                    Some(m) => {
                        let m_exp = tape.expand(m, &[n, hdim])?;
                        let hw = tape.mul(h, m_exp)?;
                        (tape.sum_axis(hw, 0)?, tape.sum(m))
                    }
                    None => {
                        let num = tape.sum_axis(h, 0)?;
                        (num, tape.leaf(Tensor::scalar(n as f64)))
                    }
                };
                let den_exp = tape.expand(den, &[hdim])?;
                (tape.div(num, den_exp)?, None)
            }
            Readout::AttnPool => {
                let s = affine(tape, h, p("attn.w"), p("attn.b"))?;
                let s_max = tape.max_axis(s, 0)?;
                let s_max = tape.expand(s_max, &[n, 1])?;
                let shifted = tape.sub(s, s_max)?;
                let mut e = tape.exp(shifted);
                if let Some(m) = mask {
                    e = tape.mul(e, m)?;
                }
                let z = tape.sum(e);
                let z_exp = tape.expand(z, &[n, 1])?;
                let a = tape.div(e, z_exp)?;
                let a_exp = tape.expand(a, &[n, hdim])?;
                let hw = tape.mul(h, a_exp)?;
                (tape.sum_axis(hw, 0)?, Some(a))
            }
        };
        let pooled = tape.reshape(pooled_vec, vec![1, hdim])?;
        let hid = affine(tape, pooled, p("head.hidden.w"), p("head.hidden.b"))?;
        let hid = tape.relu(hid);
        let logit = affine(tape, hid, p("head.out.w"), p("head.out.b"))?;
        let logit_val = tape.value(logit).item();
        if !logit_val.is_finite() {
            return Err(Error::Forward(format!(
                "{}: non-finite logit out of the readout head",
                self.backbone.name()
            )));
        }
        Ok(Trace {
            logit,
            prob: sigmoid(logit_val),
            coords,
            features,
            mask,
            layer_h,
            attention,
            pooled,
            params: params.to_vec(),
        })
    }

    pub fn predict(&self, cloud: &PointCloud) -> Result<Prediction> {
        let mut tape = Tape::new();
        let trace = self.trace(&mut tape, cloud, &ForwardSpec::plain())?;
        Ok(Prediction::from_logit(tape.value(trace.logit).item()))
    }

    pub fn predict_masked(&self, cloud: &PointCloud, mask: &[f64]) -> Result<Prediction> {
        let mut tape = Tape::new();
        let spec = ForwardSpec { mask: Some(mask), ..ForwardSpec::plain() };
        let trace = self.trace(&mut tape, cloud, &spec)?;
        Ok(Prediction::from_logit(tape.value(trace.logit).item()))
    }

    /// Forward pass with a caller-built `(n, 1)` mask node, so gradients can
    /// flow into whatever computed the mask. Inputs and parameters are
    /// registered as constants.
    pub fn trace_masked_var(
        &self,
        tape: &mut Tape,
        cloud: &PointCloud,
        mask: VarId,
    ) -> Result<Trace> {
        self.check_dims(cloud)?;
        let n = cloud.coords.shape()[0];
        if tape.value(mask).shape() != [n, 1] {
            return Err(Error::Forward(format!(
                "mask node has shape {:?}, want [{n}, 1]",
                tape.value(mask).shape()
            )));
        }
        let coords = tape.leaf(cloud.coords.clone());
        let features = tape.leaf(cloud.features.clone());
        let params: Vec<VarId> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        self.trace_on(tape, coords, features, Some(mask), &params)
    }

    /// Per-point states from the last message-passing layer, `(n, hidden)`.
    pub fn embeddings(&self, cloud: &PointCloud) -> Result<Tensor> {
        let mut tape = Tape::new();
        let trace = self.trace(&mut tape, cloud, &ForwardSpec::plain())?;
        Ok(tape.value(*trace.layer_h.last().expect("at least one layer")).clone())
    }

    /// Short identifier used to stamp artifacts derived from this model.
    pub fn tag(&self) -> String {
        format!("{}-s{}", self.backbone.name(), self.meta.seed)
    }
}

/// `x @ w + b` with the bias broadcast over rows.
pub(crate) fn affine(tape: &mut Tape, x: VarId, w: VarId, b: VarId) -> Result<VarId> {
    let y = tape.matmul(x, w)?;
    let rows = tape.value(y).shape()[0];
    let cols = tape.value(y).shape()[1];
    let b_exp = tape.expand(b, &[rows, cols])?;
    tape.add(y, b_exp)
}

/// Options for a traced forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardSpec<'a> {
    /// Per-point weights in [0, 1]; zero removes the point from the graph.
    pub mask: Option<&'a [f64]>,
    /// Track gradients for coordinates and features.
    pub diff_inputs: bool,
    /// Track gradients for model parameters.
    pub diff_params: bool,
}

impl ForwardSpec<'_> {
    pub fn plain() -> Self {
        ForwardSpec::default()
    }

    pub fn for_inputs() -> Self {
        ForwardSpec { diff_inputs: true, ..ForwardSpec::default() }
    }

    pub fn for_params() -> Self {
        ForwardSpec { diff_params: true, ..ForwardSpec::default() }
    }
}

/// Handles into a traced forward pass.
pub struct Trace {
    /// `(1, 1)` positive-class logit.
    pub logit: VarId,
    pub prob: f64,
    pub coords: VarId,
    pub features: VarId,
    pub mask: Option<VarId>,
    /// Point states after each message-passing layer, each `(n, hidden)`.
    pub layer_h: Vec<VarId>,
    /// Normalized attention weights `(n, 1)` when the readout is attention.
    pub attention: Option<VarId>,
    pub pooled: VarId,
    pub params: Vec<VarId>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub logit: f64,
    pub prob: f64,
    pub label: u8,
}

impl Prediction {
    pub fn from_logit(logit: f64) -> Self {
        let prob = sigmoid(logit);
        Prediction { logit, prob, label: u8::from(prob >= 0.5) }
    }
}

// ---- checkpoints ----

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    tensor: Tensor,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    method: String,
    backbone: Backbone,
    readout: Readout,
    hyper: Hyper,
    meta: ModelMeta,
    params: Vec<NamedTensor>,
    selector: Vec<NamedTensor>,
    scalars: Vec<(String, f64)>,
}

/// A model plus whatever auxiliary state its training method produced.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: Model,
    /// `erm`, `lri-bern`, `lri-gauss`, or `attention`.
    pub method: String,
    pub selector: Vec<(String, Tensor)>,
    pub scalars: Vec<(String, f64)>,
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    method: &str,
    selector: &[(String, Tensor)],
    scalars: &[(String, f64)],
) -> Result<()> {
    let names = layout(model.backbone, model.readout, &model.hyper);
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        method: method.into(),
        backbone: model.backbone,
        readout: model.readout,
        hyper: model.hyper,
        meta: model.meta,
        params: names
            .iter()
            .zip(&model.params)
            .map(|((name, _), tensor)| NamedTensor { name: name.clone(), tensor: tensor.clone() })
            .collect(),
        selector: selector
            .iter()
            .map(|(name, tensor)| NamedTensor { name: name.clone(), tensor: tensor.clone() })
            .collect(),
        scalars: scalars.to_vec(),
    };
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bad = |msg: String| Error::Artifact { path: path.display().to_string(), msg };
    let r = BufReader::new(std::fs::File::open(path)?);
    let file: CheckpointFile =
        serde_json::from_reader(r).map_err(|e| bad(format!("not a model checkpoint: {e}")))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(bad(format!(
            "format `{}` is not `{CHECKPOINT_FORMAT}`",
            file.format
        )));
    }
    file.hyper.validate()?;
    let expected = layout(file.backbone, file.readout, &file.hyper);
    if file.params.len() != expected.len() {
        return Err(bad(format!(
            "{} parameter tensors, expected {}",
            file.params.len(),
            expected.len()
        )));
    }
    let mut params = Vec::with_capacity(expected.len());
    for (got, (name, shape)) in file.params.into_iter().zip(&expected) {
        if &got.name != name || got.tensor.shape() != &shape[..] {
            return Err(bad(format!(
                "parameter `{}` with shape {:?}, expected `{name}` with {shape:?}",
                got.name,
                got.tensor.shape()
            )));
        }
        if !got.tensor.is_finite_all() {
            return Err(bad(format!("parameter `{name}` has non-finite entries")));
        }
        params.push(got.tensor);
    }
    let mut seen = HashSet::new();
    for nt in &file.selector {
        if !seen.insert(nt.name.clone()) {
            return Err(bad(format!("duplicate selector tensor `{}`", nt.name)));
        }
        if !nt.tensor.is_finite_all() {
            return Err(bad(format!("selector tensor `{}` has non-finite entries", nt.name)));
        }
    }
    Ok(Checkpoint {
        model: Model {
            backbone: file.backbone,
            readout: file.readout,
            hyper: file.hyper,
            params,
            meta: file.meta,
        },
        method: file.method,
        selector: file.selector.into_iter().map(|nt| (nt.name, nt.tensor)).collect(),
        scalars: file.scalars,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synmotif;

    fn small_hyper() -> Hyper {
        Hyper { hidden: 8, layers: 2, k_neighbors: 4, coord_dim: 3, feat_dim: 4 }
    }

    fn sample_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = Tensor::new(
            vec![n, 3],
            (0..n * 3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let mut feats = vec![0.0; n * 4];
        for i in 0..n {
            feats[i * 4 + rng.gen_range(0..4)] = 1.0;
        }
        PointCloud {
            id: 0,
            label: 1,
            decisive: vec![0; n],
            coords,
            features: Tensor::new(vec![n, 4], feats).unwrap(),
        }
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        for backbone in [Backbone::Egnn, Backbone::EdgeConv] {
            let model = Model::new(backbone, Readout::MeanPool, small_hyper(), 7).unwrap();
            let cloud = sample_cloud(1, 12);
            let a = model.predict(&cloud).unwrap();
            let b = model.predict(&cloud).unwrap();
            assert_eq!(a, b);
            assert!(a.prob > 0.0 && a.prob < 1.0);
        }
    }

    #[test]
    fn egnn_is_invariant_to_rotation_and_translation() {
        let model = Model::new(Backbone::Egnn, Readout::MeanPool, small_hyper(), 3).unwrap();
        let cloud = sample_cloud(5, 14);
        let base = model.predict(&cloud).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rot = synmotif::random_rotation(&mut rng);
        let shift = [0.7, -1.3, 2.1];
        let mut moved = cloud.clone();
        let rows: Vec<Vec<f64>> = (0..14)
            .map(|i| {
                let p = cloud.coords.row(i);
                (0..3)
                    .map(|r| {
                        (0..3).map(|c| rot[r][c] * p[c]).sum::<f64>() + shift[r]
                    })
                    .collect()
            })
            .collect();
        moved.coords = Tensor::from_rows(&rows).unwrap();
        let turned = model.predict(&moved).unwrap();
        assert!(
            (base.logit - turned.logit).abs() < 1e-9,
            "rigid motion changed the logit: {} vs {}",
            base.logit,
            turned.logit
        );
    }

    #[test]
    fn edge_conv_is_translation_but_not_scale_invariant() {
        let model = Model::new(Backbone::EdgeConv, Readout::MeanPool, small_hyper(), 3).unwrap();
        let cloud = sample_cloud(9, 14);
        let base = model.predict(&cloud).unwrap();
        let mut shifted = cloud.clone();
        let data: Vec<f64> = cloud.coords.data().iter().map(|v| v + 3.5).collect();
        shifted.coords = Tensor::new(vec![14, 3], data).unwrap();
        let moved = model.predict(&shifted).unwrap();
        assert!((base.logit - moved.logit).abs() < 1e-9);
        let mut scaled = cloud.clone();
        let data: Vec<f64> = cloud.coords.data().iter().map(|v| v * 2.0).collect();
        scaled.coords = Tensor::new(vec![14, 3], data).unwrap();
        let grown = model.predict(&scaled).unwrap();
        assert!((base.logit - grown.logit).abs() > 1e-9);
    }

    #[test]
    fn binary_mask_matches_physical_deletion() {
        for backbone in [Backbone::Egnn, Backbone::EdgeConv] {
            for readout in [Readout::MeanPool, Readout::AttnPool] {
                let model = Model::new(backbone, readout, small_hyper(), 21).unwrap();
                for seed in 0..20 {
                    let n = 8 + (seed as usize % 9);
                    let cloud = sample_cloud(100 + seed, n);
                    let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
                    let keep: Vec<usize> =
                        (0..n).filter(|_| rng.gen_bool(0.6)).collect();
                    if keep.len() < 2 {
                        continue;
                    }
                    let mask: Vec<f64> =
                        (0..n).map(|i| f64::from(u8::from(keep.contains(&i)))).collect();
                    let masked = model.predict_masked(&cloud, &mask).unwrap();
                    let cut = model.predict(&cloud.subcloud(&keep).unwrap()).unwrap();
                    assert!(
                        (masked.logit - cut.logit).abs() <= 1e-8,
                        "{backbone:?}/{readout:?} seed {seed}: {} vs {}",
                        masked.logit,
                        cut.logit
                    );
                }
            }
        }
    }

    #[test]
    fn soft_mask_keeps_full_graph_and_moves_logit() {
        let model = Model::new(Backbone::Egnn, Readout::MeanPool, small_hyper(), 2).unwrap();
        let cloud = sample_cloud(3, 10);
        let base = model.predict(&cloud).unwrap();
        let soft = vec![0.5; 10];
        let softened = model.predict_masked(&cloud, &soft).unwrap();
        assert!((base.logit - softened.logit).abs() > 1e-12);
        let ones = vec![1.0; 10];
        let same = model.predict_masked(&cloud, &ones).unwrap();
        assert!((base.logit - same.logit).abs() <= 1e-12);
    }

    #[test]
    fn attention_weights_are_a_distribution() {
        let model = Model::new(Backbone::EdgeConv, Readout::AttnPool, small_hyper(), 4).unwrap();
        let cloud = sample_cloud(8, 11);
        let mut tape = Tape::new();
        let trace = model.trace(&mut tape, &cloud, &ForwardSpec::plain()).unwrap();
        let a = tape.value(trace.attention.unwrap());
        assert_eq!(a.shape(), &[11, 1]);
        let total: f64 = a.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(a.data().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn rejects_wrong_feature_width() {
        let model = Model::new(Backbone::Egnn, Readout::MeanPool, small_hyper(), 1).unwrap();
        let mut cloud = sample_cloud(2, 6);
        cloud.features = Tensor::zeros(vec![6, 3]);
        let err = model.predict(&cloud).unwrap_err();
        assert!(err.to_string().contains("features"));
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut model = Model::new(Backbone::EdgeConv, Readout::AttnPool, small_hyper(), 13).unwrap();
        model.meta.epochs_run = 17;
        model.meta.valid_accuracy = 0.9375;
        let sel = vec![("sel.out.w".to_string(), Tensor::full(vec![8, 1], 0.25))];
        let scalars = vec![("beta".to_string(), 0.01)];
        save_checkpoint(&path, &model, "lri-bern", &sel, &scalars).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.method, "lri-bern");
        assert_eq!(loaded.model.params, model.params);
        assert_eq!(loaded.model.meta, model.meta);
        assert_eq!(loaded.selector, sel);
        assert_eq!(loaded.scalars, scalars);
        let cloud = sample_cloud(2, 9);
        assert_eq!(
            model.predict(&cloud).unwrap().logit,
            loaded.model.predict(&cloud).unwrap().logit
        );
    }

    #[test]
    fn checkpoint_with_tampered_shape_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = Model::new(Backbone::Egnn, Readout::MeanPool, small_hyper(), 5).unwrap();
        save_checkpoint(&path, &model, "erm", &[], &[]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let tampered = text.replacen("\"shape\":[4,8]", "\"shape\":[8,4]", 1);
        assert_ne!(text, tampered);
        std::fs::write(&path, tampered).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("embed.w"), "{err}");
    }
}
