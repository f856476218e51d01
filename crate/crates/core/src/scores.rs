//! Per-point importance scores and their JSONL persistence.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical method tags, as written into score files and reports.
pub mod methods {
    pub const GRADXINPUT: &str = "gradxinput";
    pub const INTGRAD: &str = "intgrad";
    pub const GRADCAM: &str = "gradcam";
    pub const GNNEXPLAINER: &str = "gnnexplainer";
    pub const PGEXPLAINER: &str = "pgexplainer";
    pub const SUBGRAPHX: &str = "subgraphx";
    pub const LRI_BERN: &str = "lri-bern";
    pub const LRI_GAUSS: &str = "lri-gauss";
    pub const ATTENTION: &str = "attn";
    pub const DECISIVE: &str = "decisive";

    /// The gradient-family post-hoc methods.
    pub const GRADIENT_FAMILY: [&str; 3] = [GRADXINPUT, INTGRAD, GRADCAM];
}

/// One sample's importance scores; higher means more important.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportanceScores {
    pub id: usize,
    pub method: String,
    pub model_id: String,
    pub scores: Vec<f64>,
}

impl ImportanceScores {
    pub fn new(id: usize, method: &str, model_id: &str, scores: Vec<f64>) -> Self {
        ImportanceScores { id, method: method.into(), model_id: model_id.into(), scores }
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        if self.scores.len() != n_points {
            return Err(Error::Interpret {
                method: self.method.clone(),
                msg: format!(
                    "sample {}: {} scores for {n_points} points",
                    self.id,
                    self.scores.len()
                ),
            });
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Interpret {
                method: self.method.clone(),
                msg: format!("sample {}: non-finite score", self.id),
            });
        }
        Ok(())
    }
}

/// One JSON object per line, in input order.
pub fn save_scores(path: &Path, scores: &[ImportanceScores]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for s in scores {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_scores(path: &Path) -> Result<Vec<ImportanceScores>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: ImportanceScores = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: idx + 1,
            msg: format!("bad scores record: {e}"),
        })?;
        if s.scores.is_empty() || s.scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema {
                line: idx + 1,
                msg: format!("sample {}: scores must be non-empty and finite", s.id),
            });
        }
        out.push(s);
    }
    Ok(out)
}
