//! k-nearest-neighbor graph over point coordinates.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Directed neighbor lists: `neighbors[i]` are the points `i` receives
/// messages from, sorted by (squared distance, index) ascending. Inactive
/// points get empty lists.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborLists {
    pub k_eff: usize,
    pub neighbors: Vec<Vec<usize>>,
}

/// Neighbors among all points. `k` must leave at least one non-neighbor:
/// callers that shrink the point set are responsible for clamping.
pub fn knn_graph(coords: &Tensor, k: usize) -> Result<NeighborLists> {
    let n = coords.shape()[0];
    if k >= n {
        return Err(Error::BadOperand {
            op: "knn_graph",
            msg: format!("k = {k} needs at least {} points, got {n}", k + 1),
        });
    }
    let active = vec![true; n];
    knn_graph_masked(coords, k, &active)
}

/// Neighbors among the active subset only; ties break toward the lower
/// index. `k` is clamped to the number of other active points.
pub fn knn_graph_masked(coords: &Tensor, k: usize, active: &[bool]) -> Result<NeighborLists> {
    if coords.rank() != 2 {
        return Err(Error::BadOperand {
            op: "knn_graph",
            msg: format!("coords must be rank 2, got {:?}", coords.shape()),
        });
    }
    let n = coords.shape()[0];
    if active.len() != n {
        return Err(Error::BadOperand {
            op: "knn_graph",
            msg: format!("active mask has {} entries for {n} points", active.len()),
        });
    }
    if k == 0 {
        return Err(Error::BadOperand {
            op: "knn_graph",
            msg: "k must be >= 1".into(),
        });
    }
    let alive: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
    if alive.is_empty() {
        return Err(Error::BadOperand {
            op: "knn_graph",
            msg: "no active points".into(),
        });
    }
    let k_eff = k.min(alive.len() - 1);
    let mut neighbors = vec![Vec::new(); n];
    if k_eff == 0 {
        return Ok(NeighborLists { k_eff, neighbors });
    }
    for &i in &alive {
        let mut cand: Vec<(f64, usize)> = alive
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| {
                let d2: f64 = coords
                    .row(i)
                    .iter()
                    .zip(coords.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d2, j)
            })
            .collect();
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        neighbors[i] = cand[..k_eff].iter().map(|&(_, j)| j).collect();
    }
    Ok(NeighborLists { k_eff, neighbors })
}
