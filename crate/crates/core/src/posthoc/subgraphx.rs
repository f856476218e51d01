//! Subset search explainer: Monte-Carlo tree search over point-pruning
//! actions, guided by sampled-coalition Shapley estimates of each subset's
//! contribution.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::metrics::Classifier;
use crate::scores::{methods, ImportanceScores};

use super::InterpreterSpec;

const UCT_EXPLORE: f64 = 0.5;

/// Full search output: per-point scores plus the single best subset found.
pub struct SubgraphxOutcome {
    pub scores: ImportanceScores,
    /// Ascending point indices of the highest-value evaluated subset.
    pub best_subset: Vec<usize>,
    /// Its combined removal/retention value.
    pub best_value: f64,
}

struct Search<'a, M: Classifier> {
    model: &'a M,
    cloud: &'a PointCloud,
    full: u64,
    prob_memo: HashMap<u64, f64>,
}

impl<'a, M: Classifier> Search<'a, M> {
    /// Model probability on the retained subset; the empty cloud scores
    /// chance by convention.
    fn prob(&mut self, subset: u64) -> Result<f64> {
        if subset == 0 {
            return Ok(0.5);
        }
        if let Some(&p) = self.prob_memo.get(&subset) {
            return Ok(p);
        }
        let keep = bits(subset);
        let p = if subset == self.full {
            self.model.predict(self.cloud)?.prob
        } else {
            self.model.predict(&self.cloud.subcloud(&keep)?)?.prob
        };
        self.prob_memo.insert(subset, p);
        Ok(p)
    }

    /// Combined criterion: removal impact minus retention gap. The empty
    /// and full subsets are pinned to zero so the boundary never biases a
    /// marginal.
    fn value(&mut self, subset: u64) -> Result<f64> {
        if subset == 0 || subset == self.full {
            return Ok(0.0);
        }
        let f_c = self.prob(self.full)?;
        let f_rest = self.prob(self.full & !subset)?;
        let f_only = self.prob(subset)?;
        Ok((f_c - f_rest).abs() - (f_c - f_only).abs())
    }

    /// Shapley estimate of `subset`'s contribution from sampled coalitions
    /// of the remaining points.
    fn shapley(&mut self, subset: u64, samples: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
        let others = bits(self.full & !subset);
        let mut acc = 0.0;
        for _ in 0..samples {
            let mut t = 0u64;
            for &b in &others {
                if rng.gen_bool(0.5) {
                    t |= 1 << b;
                }
            }
            acc += self.value(subset | t)? - self.value(t)?;
        }
        Ok(acc / samples as f64)
    }
}

struct Node {
    subset: u64,
    visits: f64,
    total: f64,
    /// Shapley estimate from the node's first evaluation.
    reward: Option<f64>,
    /// Exact combined-criterion value of the subset.
    raw: f64,
    children: Option<Vec<usize>>,
}

fn bits(mask: u64) -> Vec<usize> {
    (0..64).filter(|b| mask >> b & 1 == 1).collect()
}

/// Run the search and keep the whole evaluated pool.
pub fn subgraphx_search<M: Classifier>(
    model: &M,
    cloud: &PointCloud,
    spec: &InterpreterSpec,
) -> Result<SubgraphxOutcome> {
    let n = cloud.n_points();
    if spec.rollouts == 0 || spec.coalition_samples == 0 {
        return Err(Error::Interpret {
            method: methods::SUBGRAPHX.into(),
            msg: "rollout and coalition budgets must be >= 1".into(),
        });
    }
    if n > spec.n_cap {
        return Err(Error::Interpret {
            method: methods::SUBGRAPHX.into(),
            msg: format!("cloud has {n} points, cap is {}", spec.n_cap),
        });
    }
    let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut search = Search { model, cloud, full, prob_memo: HashMap::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);

    let mut nodes = vec![Node {
        subset: full,
        visits: 0.0,
        total: 0.0,
        reward: None,
        raw: 0.0,
        children: None,
    }];
    let mut index: HashMap<u64, usize> = HashMap::from([(full, 0)]);

    for _ in 0..spec.rollouts {
        let mut path = vec![0usize];
        loop {
            let cur = *path.last().unwrap();
            let subset = nodes[cur].subset;
            if nodes[cur].reward.is_none() && subset != full {
                let reward = search.shapley(subset, spec.coalition_samples, &mut rng)?;
                nodes[cur].reward = Some(reward);
                nodes[cur].raw = search.value(subset)?;
                break;
            }
            if subset.count_ones() <= 1 {
                break;
            }
            if nodes[cur].children.is_none() {
                // One child per removable point, ascending, sharing nodes
                // across paths that reach the same subset.
                let kids: Vec<usize> = bits(subset)
                    .iter()
                    .map(|&b| {
                        let child = subset & !(1 << b);
                        *index.entry(child).or_insert_with(|| {
                            nodes.push(Node {
                                subset: child,
                                visits: 0.0,
                                total: 0.0,
                                reward: None,
                                raw: 0.0,
                                children: None,
                            });
                            nodes.len() - 1
                        })
                    })
                    .collect();
                nodes[cur].children = Some(kids);
            }
            let parent_visits = nodes[cur].visits;
            let kids = nodes[cur].children.clone().unwrap();
            let mut best = kids[0];
            let mut best_score = f64::NEG_INFINITY;
            for k in kids {
                let node = &nodes[k];
                let q = if node.visits > 0.0 {
                    node.total / node.visits
                } else {
                    node.reward.unwrap_or(0.0)
                };
                let u = UCT_EXPLORE * (((parent_visits + 1.0).ln()) / (1.0 + node.visits)).sqrt();
                if q + u > best_score {
                    best_score = q + u;
                    best = k;
                }
            }
            path.push(best);
        }
        let leaf = *path.last().unwrap();
        let r = nodes[leaf].reward.unwrap_or(0.0);
        for &i in &path {
            nodes[i].visits += 1.0;
            nodes[i].total += r;
        }
    }

    // Per-point score: reward-weighted membership over every evaluated
    // subset, rescaled to [0, 1]; a flat pool falls back to 1/2.
    let pool: Vec<&Node> = nodes.iter().filter(|nd| nd.reward.is_some()).collect();
    let mut w = vec![0.0; n];
    for node in &pool {
        let r = node.reward.unwrap();
        for b in bits(node.subset) {
            w[b] += r;
        }
    }
    let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = if pool.is_empty() || hi - lo <= 1e-12 {
        vec![0.5; n]
    } else {
        w.iter().map(|v| (v - lo) / (hi - lo)).collect()
    };

    let (best_subset, best_value) = match best_by_raw(&pool) {
        Some((subset, value)) => (bits(subset), value),
        None => ((0..n).collect(), 0.0),
    };
    Ok(SubgraphxOutcome {
        scores: ImportanceScores::new(cloud.id, methods::SUBGRAPHX, "subset-search", w),
        best_subset,
        best_value,
    })
}

/// Highest raw value; ties prefer smaller subsets, then lexicographic
/// member order.
fn best_by_raw(pool: &[&Node]) -> Option<(u64, f64)> {
    let mut best: Option<(u64, f64)> = None;
    for node in pool {
        let candidate = (node.subset, node.raw);
        best = Some(match best {
            None => candidate,
            Some(cur) => {
                if better(candidate, cur) {
                    candidate
                } else {
                    cur
                }
            }
        });
    }
    best
}

fn better(a: (u64, f64), b: (u64, f64)) -> bool {
    if a.1 != b.1 {
        return a.1 > b.1;
    }
    let (ca, cb) = (a.0.count_ones(), b.0.count_ones());
    if ca != cb {
        return ca < cb;
    }
    bits(a.0) < bits(b.0)
}

pub fn subgraphx<M: Classifier>(
    model: &M,
    cloud: &PointCloud,
    spec: &InterpreterSpec,
) -> Result<ImportanceScores> {
    Ok(subgraphx_search(model, cloud, spec)?.scores)
}

/// Brute-force argmax of the combined criterion over every proper
/// non-empty subset; the oracle the search is measured against.
pub fn exhaustive_best_subset<M: Classifier>(
    model: &M,
    cloud: &PointCloud,
) -> Result<(Vec<usize>, f64)> {
    let n = cloud.n_points();
    if n > 20 {
        return Err(Error::Interpret {
            method: methods::SUBGRAPHX.into(),
            msg: format!("exhaustive oracle capped at 20 points, got {n}"),
        });
    }
    let full = (1u64 << n) - 1;
    let mut search = Search { model, cloud, full, prob_memo: HashMap::new() };
    let mut best: Option<(u64, f64)> = None;
    for subset in 1..full {
        let v = search.value(subset)?;
        let candidate = (subset, v);
        best = Some(match best {
            None => candidate,
            Some(cur) => {
                if better(candidate, cur) {
                    candidate
                } else {
                    cur
                }
            }
        });
    }
    let (subset, value) = best.ok_or_else(|| Error::Interpret {
        method: methods::SUBGRAPHX.into(),
        msg: "no proper subsets to search".into(),
    })?;
    Ok((bits(subset), value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::Prediction;
    use crate::metrics::FnClassifier;
    use crate::tensor::Tensor;

    fn plain_cloud(n: usize) -> PointCloud {
        PointCloud {
            id: 0,
            coords: Tensor::new(
                vec![n, 3],
                (0..n * 3).map(|i| (i as f64 * 0.29).sin()).collect(),
            )
            .unwrap(),
            features: Tensor::new(
                vec![n, 1],
                (0..n).map(|i| i as f64).collect(),
            )
            .unwrap(),
            decisive: vec![0; n],
            label: 1,
        }
    }

    /// Predicts positive iff at least `need` of the marker feature values
    /// in `marks` survive in the cloud.
    fn marker_model(marks: Vec<f64>, need: usize) -> impl Classifier {
        FnClassifier(move |cloud: &PointCloud| {
            let hits = (0..cloud.n_points())
                .filter(|&i| marks.contains(&cloud.features.row(i)[0]))
                .count();
            Ok(Prediction::from_logit(if hits >= need { 2.2 } else { -2.2 }))
        })
    }

    #[test]
    fn search_recovers_the_planted_pair() {
        let cloud = plain_cloud(5);
        // Points 1 and 3 together determine the prediction.
        let model = marker_model(vec![1.0, 3.0], 2);
        let (oracle, v_star) = exhaustive_best_subset(&model, &cloud).unwrap();
        assert_eq!(oracle, vec![1, 3]);
        let spec = InterpreterSpec { rollouts: 64, coalition_samples: 16, rng_seed: 4, ..InterpreterSpec::default() };
        let out = subgraphx_search(&model, &cloud, &spec).unwrap();
        assert!(out.best_value >= 0.95 * v_star, "{} vs {v_star}", out.best_value);
        let w = &out.scores.scores;
        let mut order: Vec<usize> = (0..5).collect();
        order.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap());
        let mut top2 = order[..2].to_vec();
        top2.sort_unstable();
        assert_eq!(top2, vec![1, 3], "scores {w:?}");
    }

    #[test]
    fn constant_model_yields_uniform_scores() {
        let cloud = plain_cloud(6);
        let constant = FnClassifier(|_: &PointCloud| Ok(Prediction::from_logit(0.7)));
        let spec = InterpreterSpec { rollouts: 16, coalition_samples: 4, rng_seed: 1, ..InterpreterSpec::default() };
        let w = subgraphx(&constant, &cloud, &spec).unwrap().scores;
        assert!(w.iter().all(|&v| (v - 0.5).abs() < 1e-6), "{w:?}");
    }

    #[test]
    fn zero_budget_is_rejected() {
        let cloud = plain_cloud(4);
        let model = marker_model(vec![0.0], 1);
        for spec in [
            InterpreterSpec { rollouts: 0, ..InterpreterSpec::default() },
            InterpreterSpec { coalition_samples: 0, ..InterpreterSpec::default() },
        ] {
            let err = subgraphx(&model, &cloud, &spec).unwrap_err().to_string();
            assert!(err.contains("budget"), "{err}");
        }
    }

    #[test]
    fn oversized_cloud_is_rejected() {
        let cloud = plain_cloud(9);
        let model = marker_model(vec![0.0], 1);
        let spec = InterpreterSpec { n_cap: 8, ..InterpreterSpec::default() };
        let err = subgraphx(&model, &cloud, &spec).unwrap_err().to_string();
        assert!(err.contains("cap is 8"), "{err}");
    }

    #[test]
    fn search_is_deterministic_per_seed() {
        let cloud = plain_cloud(6);
        let model = marker_model(vec![2.0, 4.0], 2);
        let spec = InterpreterSpec { rollouts: 20, coalition_samples: 6, rng_seed: 13, ..InterpreterSpec::default() };
        let a = subgraphx_search(&model, &cloud, &spec).unwrap();
        let b = subgraphx_search(&model, &cloud, &spec).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.best_subset, b.best_subset);
    }

    #[test]
    fn more_rollouts_do_not_hurt_oracle_agreement() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut stubs = Vec::new();
        for id in 0..6 {
            let n = rng.gen_range(5..=8);
            let mut cloud = plain_cloud(n);
            cloud.id = id;
            let k = rng.gen_range(1..=2usize);
            let mut marks: Vec<f64> = Vec::new();
            while marks.len() < k {
                let m = rng.gen_range(0..n) as f64;
                if !marks.contains(&m) {
                    marks.push(m);
                }
            }
            stubs.push((cloud, marks.clone(), marker_model(marks, k)));
        }
        let mut last = -1.0;
        for rollouts in [8usize, 16, 32] {
            let mut ratio_sum = 0.0;
            for (i, (cloud, _, model)) in stubs.iter().enumerate() {
                let (_, v_star) = exhaustive_best_subset(model, cloud).unwrap();
                let spec = InterpreterSpec {
                    rollouts,
                    coalition_samples: 8,
                    rng_seed: 100 + i as u64,
                    ..InterpreterSpec::default()
                };
                let out = subgraphx_search(model, cloud, &spec).unwrap();
                ratio_sum += if v_star > 0.0 { (out.best_value / v_star).min(1.0) } else { 1.0 };
            }
            let agreement = ratio_sum / stubs.len() as f64;
            assert!(agreement >= last - 1e-9, "{agreement} after {last}");
            last = agreement;
        }
        assert!(last > 0.9, "final agreement {last}");
    }
}
