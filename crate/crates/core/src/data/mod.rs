//! Point-cloud samples, labeled datasets, and subset selection.

pub mod io;
pub mod synmotif;
pub mod tracks;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = "gdlib-v1";

/// One classification sample: `n` points with coordinates, per-point feature
/// vectors, a binary label, and per-point decisive flags marking the planted
/// pattern that determines the label (all zeros on negatives).
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub id: usize,
    /// `(n, coord_dim)`
    pub coords: Tensor,
    /// `(n, feat_dim)`
    pub features: Tensor,
    pub decisive: Vec<u8>,
    pub label: u8,
}

impl PointCloud {
    pub fn n_points(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_points();
        if n < 2 {
            return Err(Error::Data(format!("sample {}: needs >= 2 points, has {n}", self.id)));
        }
        if self.features.shape()[0] != n || self.decisive.len() != n {
            return Err(Error::Data(format!(
                "sample {}: coords/features/decisive row counts disagree ({n}, {}, {})",
                self.id,
                self.features.shape()[0],
                self.decisive.len()
            )));
        }
        if !self.coords.is_finite_all() || !self.features.is_finite_all() {
            return Err(Error::Data(format!("sample {}: non-finite values", self.id)));
        }
        if self.label > 1 || self.decisive.iter().any(|&z| z > 1) {
            return Err(Error::Data(format!("sample {}: labels and flags must be 0/1", self.id)));
        }
        Ok(())
    }

    /// Physically delete all points except `keep` (ascending, deduplicated).
    /// Point order among the survivors is preserved.
    pub fn subcloud(&self, keep: &[usize]) -> Result<PointCloud> {
        let n = self.n_points();
        if keep.is_empty() {
            return Err(Error::Data("subcloud: cannot keep zero points".into()));
        }
        if keep.windows(2).any(|w| w[0] >= w[1]) || *keep.last().unwrap() >= n {
            return Err(Error::Data(format!(
                "subcloud: indices must be strictly ascending and < {n}"
            )));
        }
        let pick = |t: &Tensor| {
            let m = t.shape()[1];
            let mut data = Vec::with_capacity(keep.len() * m);
            for &i in keep {
                data.extend_from_slice(t.row(i));
            }
            Tensor::with_shape_unchecked(vec![keep.len(), m], data)
        };
        Ok(PointCloud {
            id: self.id,
            coords: pick(&self.coords),
            features: pick(&self.features),
            decisive: keep.iter().map(|&i| self.decisive[i]).collect(),
            label: self.label,
        })
    }

    /// Complement of `subset` within this cloud, ascending.
    pub fn complement(&self, subset: &[usize]) -> Vec<usize> {
        let mut inside = vec![false; self.n_points()];
        for &i in subset {
            inside[i] = true;
        }
        (0..self.n_points()).filter(|&i| !inside[i]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn all(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().chain(&self.valid).chain(&self.test).copied()
    }
}

/// Provenance of a dataset: which generator and settings produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Provenance {
    Synmotif { config: synmotif::SynMotifConfig, seed: u64 },
    Tracks { config: tracks::TracksConfig, seed: u64 },
    /// Data ingested from outside; nothing is known about its origin.
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub coord_dim: usize,
    pub feat_dim: usize,
    pub provenance: Provenance,
    pub samples: Vec<PointCloud>,
    pub splits: Splits,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            s.validate()?;
            if s.coords.shape()[1] != self.coord_dim || s.features.shape()[1] != self.feat_dim {
                return Err(Error::Data(format!(
                    "sample {}: dims {:?}/{:?} disagree with dataset ({}, {})",
                    s.id,
                    s.coords.shape(),
                    s.features.shape(),
                    self.coord_dim,
                    self.feat_dim
                )));
            }
        }
        // Splits must partition 0..n_samples exactly.
        let n = self.samples.len();
        let mut seen = vec![false; n];
        for i in self.splits.all() {
            if i >= n {
                return Err(Error::Data(format!("split index {i} out of range ({n} samples)")));
            }
            if seen[i] {
                return Err(Error::Data(format!("split index {i} appears twice")));
            }
            seen[i] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Data("splits do not cover every sample".into()));
        }
        Ok(())
    }

    pub fn split_samples(&self, split: Split) -> Vec<&PointCloud> {
        let idx = match split {
            Split::Train => &self.splits.train,
            Split::Valid => &self.splits.valid,
            Split::Test => &self.splits.test,
        };
        idx.iter().map(|&i| &self.samples[i]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Fisher-Yates shuffle driven by the caller's seeded rng stream.
pub(crate) fn shuffle<T>(items: &mut [T], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Indices of the `round(rho * n)` highest-scoring points (clamped to
/// `[1, n]`), ties broken toward the lower index. Returned ascending.
pub fn select_topk(scores: &[f64], rho: f64) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::Data("select_topk: empty scores".into()));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Data(format!("select_topk: rho must be in (0, 1], got {rho}")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("select_topk: non-finite score".into()));
    }
    let n = scores.len();
    let m = ((rho * n as f64).round() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort by descending score keeps lower indices first on ties.
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut top: Vec<usize> = order[..m].to_vec();
    top.sort_unstable();
    Ok(top)
}
