//! Synthetic point clouds where the positive class carries a planted
//! three-point motif: one point of each of the types 1, 2, 3, mutually
//! separated by distances inside a fixed band. Type assignments alone do not
//! give the label away — background points reuse the motif types freely — so
//! a classifier has to read the geometry.

use super::{Dataset, PointCloud, Provenance, Splits};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const FEAT_DIM: usize = 4;
pub const COORD_DIM: usize = 3;
const MOTIF_TYPES: [usize; 3] = [1, 2, 3];
const MAX_ATTEMPTS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynMotifConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// Inclusive bounds on points per cloud.
    pub n_min: usize,
    pub n_max: usize,
    pub positive_fraction: f64,
    /// Side length of the cubic volume points are scattered in.
    pub box_size: f64,
    /// Pairwise-distance band the motif must satisfy.
    pub band_lo: f64,
    pub band_hi: f64,
}

impl Default for SynMotifConfig {
    fn default() -> Self {
        SynMotifConfig {
            n_train: 800,
            n_valid: 100,
            n_test: 100,
            n_min: 15,
            n_max: 40,
            positive_fraction: 0.5,
            box_size: 8.0,
            band_lo: 0.9,
            band_hi: 1.1,
        }
    }
}

impl SynMotifConfig {
    fn validate(&self) -> Result<()> {
        if self.n_min < 6 {
            return Err(Error::Generator(format!(
                "synmotif needs n_min >= 6, got {}",
                self.n_min
            )));
        }
        if self.n_max < self.n_min {
            return Err(Error::Generator("n_max < n_min".into()));
        }
        if self.n_train == 0 || self.n_valid == 0 || self.n_test == 0 {
            return Err(Error::Generator("all splits must be non-empty".into()));
        }
        if !(0.0 < self.positive_fraction && self.positive_fraction < 1.0) {
            return Err(Error::Generator("positive_fraction must be in (0, 1)".into()));
        }
        if !(0.0 < self.band_lo && self.band_lo < self.band_hi) {
            return Err(Error::Generator("need 0 < band_lo < band_hi".into()));
        }
        if self.box_size < 2.0 * self.band_hi {
            return Err(Error::Generator("box too small to hold a motif".into()));
        }
        Ok(())
    }
}

/// True when points `(a, b, c)` — (coords, type) pairs — form a motif:
/// one point of each motif type with all three squared distances in band.
pub fn is_motif(
    a: (&[f64], usize),
    b: (&[f64], usize),
    c: (&[f64], usize),
    band_lo: f64,
    band_hi: f64,
) -> bool {
    let mut types = [a.1, b.1, c.1];
    types.sort_unstable();
    if types != MOTIF_TYPES {
        return false;
    }
    let (lo2, hi2) = (band_lo * band_lo, band_hi * band_hi);
    let d2 = |p: &[f64], q: &[f64]| -> f64 {
        p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    [d2(a.0, b.0), d2(a.0, c.0), d2(b.0, c.0)]
        .iter()
        .all(|&v| (lo2..=hi2).contains(&v))
}

/// Count motif triples in a cloud given parallel (coords, type) slices.
pub fn count_motifs(points: &[(Vec<f64>, usize)], band_lo: f64, band_hi: f64) -> usize {
    let n = points.len();
    let mut count = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let p = |t: usize| (points[t].0.as_slice(), points[t].1);
                if is_motif(p(i), p(j), p(k), band_lo, band_hi) {
                    count += 1;
                }
            }
        }
    }
    count
}

pub fn generate(config: &SynMotifConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = [config.n_train, config.n_valid, config.n_test];
    let mut samples = Vec::with_capacity(counts.iter().sum());
    let mut splits = Splits { train: vec![], valid: vec![], test: vec![] };

    for (which, &count) in counts.iter().enumerate() {
        let n_pos = (count as f64 * config.positive_fraction).round() as usize;
        let mut labels = vec![1u8; n_pos];
        labels.resize(count, 0);
        super::shuffle(&mut labels, &mut rng);
        for label in labels {
            let id = samples.len();
            let cloud = sample_cloud(config, id, label, &mut rng)?;
            match which {
                0 => splits.train.push(id),
                1 => splits.valid.push(id),
                _ => splits.test.push(id),
            }
            samples.push(cloud);
        }
    }

    let ds = Dataset {
        coord_dim: COORD_DIM,
        feat_dim: FEAT_DIM,
        provenance: Provenance::Synmotif { config: config.clone(), seed },
        samples,
        splits,
    };
    ds.validate()?;
    Ok(ds)
}

fn sample_cloud(
    config: &SynMotifConfig,
    id: usize,
    label: u8,
    rng: &mut ChaCha8Rng,
) -> Result<PointCloud> {
    let n = rng.gen_range(config.n_min..=config.n_max);
    for _ in 0..MAX_ATTEMPTS {
        let mut points: Vec<(Vec<f64>, usize)> = Vec::with_capacity(n);
        let mut decisive = vec![0u8; n];
        if label == 1 {
            for (slot, coords) in plant_motif(config, rng).into_iter().enumerate() {
                points.push((coords, MOTIF_TYPES[slot]));
                decisive[slot] = 1;
            }
        }
        while points.len() < n {
            let coords = (0..COORD_DIM)
                .map(|_| rng.gen::<f64>() * config.box_size)
                .collect();
            points.push((coords, rng.gen_range(0..FEAT_DIM)));
        }
        // Accept only if the motif census matches the label exactly: one
        // planted occurrence on positives, none at all on negatives.
        let want = usize::from(label == 1);
        if count_motifs(&points, config.band_lo, config.band_hi) != want {
            continue;
        }
        let coords = Tensor::from_rows(
            &points.iter().map(|(c, _)| c.clone()).collect::<Vec<_>>(),
        )?;
        let mut feats = vec![0.0; n * FEAT_DIM];
        for (i, (_, ty)) in points.iter().enumerate() {
            feats[i * FEAT_DIM + ty] = 1.0;
        }
        let cloud = PointCloud {
            id,
            coords,
            features: Tensor::with_shape_unchecked(vec![n, FEAT_DIM], feats),
            decisive,
            label,
        };
        cloud.validate()?;
        return Ok(cloud);
    }
    Err(Error::Generator(format!(
        "sample {id}: no valid cloud after {MAX_ATTEMPTS} attempts"
    )))
}

/// Three points of a near-unit triangle with all side lengths inside the
/// band (sampled with a safety margin), randomly rotated and translated.
fn plant_motif(config: &SynMotifConfig, rng: &mut ChaCha8Rng) -> [Vec<f64>; 3] {
    let margin = 0.1 * (config.band_hi - config.band_lo);
    let side = |rng: &mut ChaCha8Rng| {
        rng.gen_range(config.band_lo + margin..config.band_hi - margin)
    };
    let (a, b, c) = (side(rng), side(rng), side(rng));
    // Triangle with |p0 p1| = a, |p0 p2| = b, |p1 p2| = c in the z=0 plane.
    let x = (a * a + b * b - c * c) / (2.0 * a);
    let y = (b * b - x * x).max(0.0).sqrt();
    let local = [[0.0, 0.0, 0.0], [a, 0.0, 0.0], [x, y, 0.0]];

    let rot = random_rotation(rng);
    let hi = config.box_size - config.band_hi;
    let shift: Vec<f64> = (0..3).map(|_| config.band_hi + rng.gen::<f64>() * (hi - config.band_hi)).collect();
    local.map(|p| {
        (0..3)
            .map(|r| rot[r][0] * p[0] + rot[r][1] * p[1] + rot[r][2] * p[2] + shift[r])
            .collect()
    })
}

/// Uniform random rotation via a normalized quaternion.
pub fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let q: Vec<f64> = (0..4).map(|_| StandardNormal.sample(rng)).collect();
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (w, x, y, z) = (q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynMotifConfig {
            n_train: 12,
            n_valid: 4,
            n_test: 4,
            ..SynMotifConfig::default()
        };
        let a = generate(&cfg, 7).unwrap();
        let b = generate(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = generate(&cfg, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn labels_match_motif_census() {
        let cfg = SynMotifConfig {
            n_train: 20,
            n_valid: 5,
            n_test: 5,
            ..SynMotifConfig::default()
        };
        let ds = generate(&cfg, 3).unwrap();
        for s in &ds.samples {
            let points: Vec<(Vec<f64>, usize)> = (0..s.n_points())
                .map(|i| {
                    let ty = s.features.row(i).iter().position(|&v| v == 1.0).unwrap();
                    (s.coords.row(i).to_vec(), ty)
                })
                .collect();
            let motifs = count_motifs(&points, cfg.band_lo, cfg.band_hi);
            assert_eq!(motifs, usize::from(s.label == 1), "sample {}", s.id);
            let flagged: usize = s.decisive.iter().map(|&z| z as usize).sum();
            assert_eq!(flagged, if s.label == 1 { 3 } else { 0 });
        }
    }

    #[test]
    fn class_balance_is_exact_per_split() {
        let cfg = SynMotifConfig {
            n_train: 30,
            n_valid: 10,
            n_test: 10,
            ..SynMotifConfig::default()
        };
        let ds = generate(&cfg, 1).unwrap();
        for (idx, want) in [(&ds.splits.train, 15), (&ds.splits.valid, 5), (&ds.splits.test, 5)] {
            let pos: usize = idx.iter().map(|&i| ds.samples[i].label as usize).sum();
            assert_eq!(pos, want);
        }
    }

    #[test]
    fn tiny_n_min_is_rejected() {
        let cfg = SynMotifConfig { n_min: 5, ..SynMotifConfig::default() };
        assert!(generate(&cfg, 0).is_err());
    }
}
