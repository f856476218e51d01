//! Synthetic point clouds where positives contain two straight tracks of
//! hits emanating from a shared vertex, buried in uniform background noise.
//! Per-point features are one-hot type codes drawn independently of track
//! membership, so the signal is purely geometric.

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
const MAX_ATTEMPTS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TracksConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub positive_fraction: f64,
    pub box_size: f64,
    pub hits_per_track: usize,
    /// Std-dev of the Gaussian scatter of hits around the ideal line.
    pub jitter: f64,
}

impl Default for TracksConfig {
    fn default() -> Self {
        TracksConfig {
            n_train: 800,
            n_valid: 100,
            n_test: 100,
            n_min: 15,
            n_max: 40,
            positive_fraction: 0.5,
            box_size: 5.0,
            hits_per_track: 5,
            jitter: 0.02,
        }
    }
}

/// Distance from `p` to the infinite line through `a` with unit direction `u`.
pub fn dist_to_line(p: &[f64], a: &[f64], u: &[f64]) -> f64 {
    let d: Vec<f64> = p.iter().zip(a).map(|(x, y)| x - y).collect();
    let t: f64 = d.iter().zip(u).map(|(x, y)| x * y).sum();
    d.iter()
        .zip(u)
        .map(|(x, y)| (x - t * y) * (x - t * y))
        .sum::<f64>()
        .sqrt()
}

/// Collinearity tolerance used both by the generator's rejection scan and
/// by consumers that want to recover tracks geometrically.
pub fn line_tolerance(jitter: f64) -> f64 {
    6.0 * jitter
}

impl TracksConfig {
    fn validate(&self) -> Result<()> {
        if self.hits_per_track < 3 {
            return Err(Error::Generator("hits_per_track must be >= 3".into()));
        }
        if self.n_min < 2 * self.hits_per_track + 2 {
            return Err(Error::Generator(format!(
                "tracks needs n_min >= {}, got {}",
                2 * self.hits_per_track + 2,
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
        if !(self.jitter > 0.0) || self.jitter > 0.1 {
            return Err(Error::Generator("jitter must be in (0, 0.1]".into()));
        }
        if self.box_size < 5.0 {
            return Err(Error::Generator("box_size must be >= 5".into()));
        }
        Ok(())
    }
}

pub fn generate(config: &TracksConfig, seed: u64) -> Result<Dataset> {
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
        provenance: Provenance::Tracks { config: config.clone(), seed },
        samples,
        splits,
    };
    ds.validate()?;
    Ok(ds)
}

fn sample_cloud(
    config: &TracksConfig,
    id: usize,
    label: u8,
    rng: &mut ChaCha8Rng,
) -> Result<PointCloud> {
    let n = rng.gen_range(config.n_min..=config.n_max);
    let h = config.hits_per_track;
    let tol = line_tolerance(config.jitter);
    for _ in 0..MAX_ATTEMPTS {
        let mut coords: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut decisive = vec![0u8; n];
        if label == 1 {
            // Shared vertex well inside the box; two directions with a
            // clearly non-degenerate opening angle.
            let vertex: Vec<f64> = (0..3)
                .map(|_| 1.7 + rng.gen::<f64>() * (config.box_size - 3.4))
                .collect();
            let d1 = random_unit(rng);
            let d2 = loop {
                let d = random_unit(rng);
                let cosang: f64 = d.iter().zip(&d1).map(|(a, b)| a * b).sum();
                // Between ~25 and ~155 degrees apart.
                if cosang.abs() < 0.9 {
                    break d;
                }
            };
            for dir in [&d1, &d2] {
                for j in 0..h {
                    let t = 0.35 + 0.28 * j as f64;
                    let hit: Vec<f64> = (0..3)
                        .map(|c| {
                            let noise: f64 = StandardNormal.sample(rng);
                            vertex[c] + t * dir[c] + config.jitter * noise
                        })
                        .collect();
                    decisive[coords.len()] = 1;
                    coords.push(hit);
                }
            }
        }
        while coords.len() < n {
            coords.push((0..3).map(|_| rng.gen::<f64>() * config.box_size).collect());
        }
        if !accept(&coords, &decisive, label, h, tol) {
            continue;
        }
        let mut feats = vec![0.0; n * FEAT_DIM];
        for row in 0..n {
            feats[row * FEAT_DIM + rng.gen_range(0..FEAT_DIM)] = 1.0;
        }
        let cloud = PointCloud {
            id,
            coords: Tensor::from_rows(&coords)?,
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

/// Reject clouds whose line structure disagrees with the label. Negatives
/// must not contain `h` points within tolerance of any line through two
/// cloud points. On positives, every such dense line must coincide exactly
/// with one planted track's hit set, and each track must be recoverable by
/// at least one pair-line — together this makes greedy line fitting
/// well-posed on accepted clouds.
fn accept(coords: &[Vec<f64>], decisive: &[u8], label: u8, h: usize, tol: f64) -> bool {
    let n = coords.len();
    // Planted layout on positives: points 0..h are track one, h..2h track two.
    let track_a: Vec<usize> = (0..h).collect();
    let track_b: Vec<usize> = (h..2 * h).collect();
    let _ = decisive;
    let mut saw_a = false;
    let mut saw_b = false;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut u: Vec<f64> = coords[j].iter().zip(&coords[i]).map(|(a, b)| a - b).collect();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-9 {
                return false;
            }
            u.iter_mut().for_each(|v| *v /= norm);
            let inliers: Vec<usize> = (0..n)
                .filter(|&q| dist_to_line(&coords[q], &coords[i], &u) <= tol)
                .collect();
            if inliers.len() < h {
                continue;
            }
            if label == 0 {
                return false;
            }
            if inliers == track_a {
                saw_a = true;
            } else if inliers == track_b {
                saw_b = true;
            } else {
                return false;
            }
        }
    }
    label == 0 || (saw_a && saw_b)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..3).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TracksConfig {
        TracksConfig {
            n_train: 12,
            n_valid: 4,
            n_test: 4,
            ..TracksConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_cfg(), 11).unwrap();
        let b = generate(&small_cfg(), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn positives_flag_exactly_two_tracks() {
        let ds = generate(&small_cfg(), 2).unwrap();
        for s in &ds.samples {
            let flagged: usize = s.decisive.iter().map(|&z| z as usize).sum();
            assert_eq!(flagged, if s.label == 1 { 10 } else { 0 });
        }
    }

    #[test]
    fn negatives_contain_no_dense_line() {
        let ds = generate(&small_cfg(), 5).unwrap();
        let tol = line_tolerance(0.02);
        for s in ds.samples.iter().filter(|s| s.label == 0) {
            let coords: Vec<Vec<f64>> = (0..s.n_points()).map(|i| s.coords.row(i).to_vec()).collect();
            assert!(accept(&coords, &s.decisive, 0, 5, tol));
        }
    }

    #[test]
    fn undersized_n_min_is_rejected() {
        let cfg = TracksConfig { n_min: 11, ..small_cfg() };
        assert!(generate(&cfg, 0).is_err());
    }
}
