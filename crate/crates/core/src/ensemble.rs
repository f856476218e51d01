//! Fidelity-weighted averaging of importance scores from several trained
//! models of the same method: high-fidelity explainers dominate the mix,
//! sub-chance ones drop out.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::scores::ImportanceScores;

/// Score sets produced by one trained model, with the fidelity its
/// explanations achieved.
#[derive(Clone, Debug)]
pub struct ModelScores {
    pub model_id: String,
    pub fid_auc: f64,
    pub scores: Vec<ImportanceScores>,
}

/// Everything the aggregation needs: at least two models covering the same
/// samples with the same method.
#[derive(Clone, Debug)]
pub struct EnsembleInput {
    pub models: Vec<ModelScores>,
    pub method: String,
}

/// Mixing weights from fidelity: `max(0, fid - 50)`, normalized to sum 1;
/// uniform when every model sits at or below chance.
pub fn ensemble_weights(fid_aucs: &[f64]) -> Result<Vec<f64>> {
    if fid_aucs.is_empty() {
        return Err(Error::Data("ensemble weights need at least one fidelity value".into()));
    }
    for &f in fid_aucs {
        if !(0.0..=100.0).contains(&f) {
            return Err(Error::Data(format!("fidelity {f} outside [0, 100]")));
        }
    }
    let raw: Vec<f64> = fid_aucs.iter().map(|&f| (f - 50.0).max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        Ok(raw.iter().map(|w| w / total).collect())
    } else {
        Ok(vec![1.0 / fid_aucs.len() as f64; fid_aucs.len()])
    }
}

/// Per-sample min-max rescale; a flat vector carries no ordering and maps
/// to all 0.5.
fn min_max(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; scores.len()]
    }
}

/// Weighted average of per-sample min-max normalized scores across models.
///
/// Models are sorted by id before mixing, so the output is identical for
/// any input order. Output scores carry the method tag
/// `ensemble(<method>)`.
pub fn ensemble_scores(input: &EnsembleInput) -> Result<Vec<ImportanceScores>> {
    if input.models.len() < 2 {
        return Err(Error::Data(format!(
            "ensembling needs at least two models, got {}",
            input.models.len()
        )));
    }
    let mut models: Vec<&ModelScores> = input.models.iter().collect();
    models.sort_by(|a, b| a.model_id.cmp(&b.model_id));

    let reference: BTreeSet<usize> = models[0].scores.iter().map(|s| s.id).collect();
    if reference.is_empty() {
        return Err(Error::Data(format!("model `{}` carries no samples", models[0].model_id)));
    }
    if reference.len() != models[0].scores.len() {
        return Err(Error::Data(format!(
            "model `{}` repeats a sample id",
            models[0].model_id
        )));
    }
    for m in &models {
        let ids: BTreeSet<usize> = m.scores.iter().map(|s| s.id).collect();
        if ids != reference {
            let missing: Vec<String> =
                reference.difference(&ids).map(ToString::to_string).collect();
            let extra: Vec<String> = ids.difference(&reference).map(ToString::to_string).collect();
            let mut msg = format!("model `{}` does not cover the shared samples", m.model_id);
            if !missing.is_empty() {
                msg.push_str(&format!("; missing ids [{}]", missing.join(", ")));
            }
            if !extra.is_empty() {
                msg.push_str(&format!("; unexpected ids [{}]", extra.join(", ")));
            }
            return Err(Error::Data(msg));
        }
        for s in &m.scores {
            if s.method != input.method {
                return Err(Error::Data(format!(
                    "model `{}` sample {} carries method `{}`, ensemble expects `{}`",
                    m.model_id, s.id, s.method, input.method
                )));
            }
        }
    }

    let weights = ensemble_weights(&models.iter().map(|m| m.fid_auc).collect::<Vec<_>>())?;
    let tag = format!("ensemble({})", input.method);
    let joint_id = models
        .iter()
        .map(|m| m.model_id.as_str())
        .collect::<Vec<_>>()
        .join("+");

    let mut out = Vec::with_capacity(reference.len());
    for &id in &reference {
        let mut mixed: Option<Vec<f64>> = None;
        for (m, &w) in models.iter().zip(&weights) {
            let s = m.scores.iter().find(|s| s.id == id).expect("id checked above");
            let norm = min_max(&s.scores);
            match &mut mixed {
                None => mixed = Some(norm.iter().map(|v| w * v).collect()),
                Some(acc) => {
                    if acc.len() != norm.len() {
                        return Err(Error::Data(format!(
                            "sample {id} has {} points under model `{}` but {} elsewhere",
                            norm.len(),
                            m.model_id,
                            acc.len()
                        )));
                    }
                    for (a, v) in acc.iter_mut().zip(&norm) {
                        *a += w * v;
                    }
                }
            }
        }
        out.push(ImportanceScores::new(id, &tag, &joint_id, mixed.expect("≥2 models")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(id: &str, fid: f64, rows: &[(usize, &[f64])]) -> ModelScores {
        ModelScores {
            model_id: id.into(),
            fid_auc: fid,
            scores: rows
                .iter()
                .map(|(sid, s)| ImportanceScores::new(*sid, "m", id, s.to_vec()))
                .collect(),
        }
    }

    #[test]
    fn weights_follow_the_clipped_normalized_rule() {
        let w = ensemble_weights(&[60.0, 40.0, 75.0]).unwrap();
        assert_eq!(w, vec![10.0 / 35.0, 0.0, 25.0 / 35.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        assert_eq!(ensemble_weights(&[50.0, 31.0, 7.5]).unwrap(), vec![1.0 / 3.0; 3]);
        assert_eq!(ensemble_weights(&[80.0]).unwrap(), vec![1.0]);
        assert!(ensemble_weights(&[]).is_err());
        assert!(ensemble_weights(&[101.0]).is_err());
        assert!(ensemble_weights(&[60.0, -2.0]).is_err());
    }

    #[test]
    fn equal_weights_take_the_arithmetic_mean() {
        // Score vectors with min 0 and max 1 pass through the per-sample
        // rescale unchanged, exposing the raw mixing arithmetic.
        let input = EnsembleInput {
            models: vec![
                model("a", 60.0, &[(0, &[0.0, 0.2, 0.8, 1.0])]),
                model("b", 60.0, &[(0, &[0.0, 0.6, 0.4, 1.0])]),
            ],
            method: "m".into(),
        };
        let out = ensemble_scores(&input).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, 0);
        assert_eq!(out[0].method, "ensemble(m)");
        assert_eq!(out[0].model_id, "a+b");
        for (got, want) in out[0].scores.iter().zip([0.0, 0.4, 0.6, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn identical_normalized_inputs_pass_through() {
        let rows: &[(usize, &[f64])] = &[(3, &[0.0, 0.25, 1.0]), (5, &[1.0, 0.0, 0.5])];
        let input = EnsembleInput {
            models: vec![model("a", 72.0, rows), model("b", 55.0, rows), model("c", 48.0, rows)],
            method: "m".into(),
        };
        let out = ensemble_scores(&input).unwrap();
        for (got, (sid, want)) in out.iter().zip(rows) {
            assert_eq!(got.id, *sid);
            for (g, w) in got.scores.iter().zip(*want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chance_level_models_drop_out_of_the_mix() {
        let input = EnsembleInput {
            models: vec![
                model("keep", 80.0, &[(0, &[0.0, 0.3, 1.0])]),
                model("drop", 42.0, &[(0, &[1.0, 0.5, 0.0])]),
            ],
            method: "m".into(),
        };
        let out = ensemble_scores(&input).unwrap();
        for (g, w) in out[0].scores.iter().zip([0.0, 0.3, 1.0]) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn model_order_does_not_change_the_output() {
        let a = model("a", 64.0, &[(0, &[0.1, 0.9, 0.4]), (1, &[0.0, 2.0, 1.0])]);
        let b = model("b", 71.0, &[(0, &[5.0, 1.0, 3.0]), (1, &[0.2, 0.2, 0.9])]);
        let c = model("c", 49.0, &[(0, &[0.0, 0.0, 1.0]), (1, &[3.0, 1.0, 2.0])]);
        let forward = EnsembleInput {
            models: vec![a.clone(), b.clone(), c.clone()],
            method: "m".into(),
        };
        let backward = EnsembleInput { models: vec![c, a, b], method: "m".into() };
        let x = ensemble_scores(&forward).unwrap();
        let y = ensemble_scores(&backward).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn flat_scores_normalize_to_half() {
        let input = EnsembleInput {
            models: vec![
                model("a", 60.0, &[(0, &[2.0, 2.0, 2.0])]),
                model("b", 60.0, &[(0, &[0.0, 1.0, 0.5])]),
            ],
            method: "m".into(),
        };
        let out = ensemble_scores(&input).unwrap();
        for (g, w) in out[0].scores.iter().zip([0.25, 0.75, 0.5]) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn coverage_and_shape_mismatches_are_named() {
        let input = EnsembleInput {
            models: vec![
                model("a", 60.0, &[(0, &[0.5, 0.5]), (7, &[0.1, 0.2])]),
                model("b", 60.0, &[(0, &[0.5, 0.5]), (9, &[0.1, 0.2])]),
            ],
            method: "m".into(),
        };
        let err = ensemble_scores(&input).unwrap_err().to_string();
        assert!(err.contains('b') && err.contains('7') && err.contains('9'), "{err}");

        let input = EnsembleInput {
            models: vec![
                model("a", 60.0, &[(0, &[0.5, 0.5, 0.5])]),
                model("b", 60.0, &[(0, &[0.5, 0.5])]),
            ],
            method: "m".into(),
        };
        let err = ensemble_scores(&input).unwrap_err().to_string();
        assert!(err.contains("points"), "{err}");

        let solo = EnsembleInput {
            models: vec![model("a", 60.0, &[(0, &[0.5])])],
            method: "m".into(),
        };
        assert!(ensemble_scores(&solo).is_err());

        let mut tagged = model("a", 60.0, &[(0, &[0.5])]);
        tagged.scores[0].method = "other".into();
        let input = EnsembleInput {
            models: vec![tagged, model("b", 60.0, &[(0, &[0.5])])],
            method: "m".into(),
        };
        let err = ensemble_scores(&input).unwrap_err().to_string();
        assert!(err.contains("other"), "{err}");
    }
}
