//! Line-oriented JSON persistence for datasets.
//!
//! Line 1 is a header carrying the schema tag, dimensions, split indices, and
//! generator provenance; every following line is one sample. Serialization is
//! fully deterministic, so identical datasets produce identical bytes.

use super::{Dataset, PointCloud, Provenance, Splits, SCHEMA};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    k: usize,
    d: usize,
    splits: Splits,
    generator: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: usize,
    label: u8,
    coords: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
    decisive: Vec<u8>,
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let header = Header {
        schema: SCHEMA.to_string(),
        k: dataset.coord_dim,
        d: dataset.feat_dim,
        splits: dataset.splits.clone(),
        generator: dataset.provenance.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for s in &dataset.samples {
        let rec = SampleRecord {
            id: s.id,
            label: s.label,
            coords: rows(&s.coords),
            features: rows(&s.features),
            decisive: s.decisive.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (_, first) = lines.next().ok_or_else(|| Error::Schema {
        line: 1,
        msg: "empty file, expected a header".into(),
    })?;
    let header: Header = serde_json::from_str(&first?).map_err(|e| Error::Schema {
        line: 1,
        msg: e.to_string(),
    })?;
    if header.schema != SCHEMA {
        return Err(Error::Schema {
            line: 1,
            msg: format!("unsupported schema `{}`, expected `{SCHEMA}`", header.schema),
        });
    }

    let mut samples = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: lineno,
            msg: e.to_string(),
        })?;
        if rec.id != samples.len() {
            return Err(Error::Schema {
                line: lineno,
                msg: format!("id {} out of order, expected {}", rec.id, samples.len()),
            });
        }
        let coords = tensor_from(&rec.coords, header.k, lineno, "coords")?;
        let features = tensor_from(&rec.features, header.d, lineno, "features")?;
        let cloud = PointCloud {
            id: rec.id,
            coords,
            features,
            decisive: rec.decisive,
            label: rec.label,
        };
        cloud.validate().map_err(|e| Error::Schema {
            line: lineno,
            msg: e.to_string(),
        })?;
        samples.push(cloud);
    }

    let ds = Dataset {
        coord_dim: header.k,
        feat_dim: header.d,
        provenance: header.generator,
        samples,
        splits: header.splits,
    };
    ds.validate()?;
    Ok(ds)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}

fn tensor_from(rows: &[Vec<f64>], dim: usize, line: usize, field: &str) -> Result<Tensor> {
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Schema {
            line,
            msg: format!("field `{field}`: every row must have {dim} values"),
        });
    }
    Tensor::from_rows(rows).map_err(|e| Error::Schema {
        line,
        msg: format!("field `{field}`: {e}"),
    })
}
