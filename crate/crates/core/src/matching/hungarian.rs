//! Kuhn–Munkres assignment for rectangular cost matrices.

use ndarray::Array2;

use crate::error::{Error, Result};

/// One-to-one matching of predictions to ground truths.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    /// `(prediction, ground truth)` pairs sorted by ground-truth index.
    pub pairs: Vec<(usize, usize)>,
    /// Prediction indices left without a partner, ascending.
    pub unmatched: Vec<usize>,
}

impl Assignment {
    /// Ground-truth index per prediction, `None` when unmatched.
    pub fn target_of(&self, num_preds: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; num_preds];
        for &(p, g) in &self.pairs {
            out[p] = Some(g);
        }
        out
    }

    /// Sum of matched costs, accumulated in ground-truth order.
    pub fn total_cost(&self, cost: &Array2<f64>) -> f64 {
        self.pairs.iter().map(|&(p, g)| cost[[p, g]]).sum()
    }
}

/// Minimum-cost assignment of every column (ground truth) of an `N x M`
/// cost matrix to a distinct row (prediction); requires `N >= M`.
///
/// Among equal-cost optima the result is pushed toward the lexicographically
/// smallest list of prediction indices (in ground-truth order) by a final
/// exchange pass that only accepts moves that do not raise the total.
pub fn hungarian(cost: &Array2<f64>) -> Result<Assignment> {
    let (n, m) = cost.dim();
    if n < m {
        return Err(Error::InvalidArgument(format!(
            "{n} predictions cannot cover {m} ground truths"
        )));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }
    if m == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            unmatched: (0..n).collect(),
        });
    }

    // Shortest augmenting path with potentials; rows are ground truths
    // (1-based, 0 is the virtual root), columns are predictions.
    let c = |g: usize, p: usize| cost[[p - 1, g - 1]];
    let mut u = vec![0.0f64; m + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for g in 1..=m {
        owner[0] = g;
        let mut p0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[p0] = true;
            let g0 = owner[p0];
            let mut delta = f64::INFINITY;
            let mut p1 = 0usize;
            for p in 1..=n {
                if used[p] {
                    continue;
                }
                let cur = c(g0, p) - u[g0] - v[p];
                if cur < minv[p] {
                    minv[p] = cur;
                    way[p] = p0;
                }
                if minv[p] < delta {
                    delta = minv[p];
                    p1 = p;
                }
            }
            for p in 0..=n {
                if used[p] {
                    u[owner[p]] += delta;
                    v[p] -= delta;
                } else {
                    minv[p] -= delta;
                }
            }
            p0 = p1;
            if owner[p0] == 0 {
                break;
            }
        }
        loop {
            let p1 = way[p0];
            owner[p0] = owner[p1];
            p0 = p1;
            if p0 == 0 {
                break;
            }
        }
    }

    let mut pred_of = vec![usize::MAX; m];
    for p in 1..=n {
        if owner[p] != 0 {
            pred_of[owner[p] - 1] = p - 1;
        }
    }
    lexicographic_exchange(cost, &mut pred_of);

    let mut taken = vec![false; n];
    for &p in &pred_of {
        taken[p] = true;
    }
    Ok(Assignment {
        pairs: pred_of.iter().enumerate().map(|(g, &p)| (p, g)).collect(),
        unmatched: (0..n).filter(|&p| !taken[p]).collect(),
    })
}

/// Cost-non-increasing moves that make `pred_of` lexicographically smaller.
fn lexicographic_exchange(cost: &Array2<f64>, pred_of: &mut [usize]) {
    let n = cost.nrows();
    let m = pred_of.len();
    let mut owner = vec![usize::MAX; n];
    for (g, &p) in pred_of.iter().enumerate() {
        owner[p] = g;
    }
    let mut changed = true;
    while changed {
        changed = false;
        for g in 0..m {
            let cur = pred_of[g];
            for q in 0..cur {
                let h = owner[q];
                let better = if h == usize::MAX {
                    cost[[q, g]] <= cost[[cur, g]]
                } else if h > g {
                    cost[[q, g]] + cost[[cur, h]] <= cost[[cur, g]] + cost[[q, h]]
                } else {
                    false
                };
                if better {
                    if h != usize::MAX {
                        pred_of[h] = cur;
                        owner[cur] = h;
                    } else {
                        owner[cur] = usize::MAX;
                    }
                    pred_of[g] = q;
                    owner[q] = g;
                    changed = true;
                    break;
                }
            }
        }
    }
}
