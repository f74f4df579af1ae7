//! Evaluation metrics: OSPA map error, UE localization error, realized SE.

use crate::channel::{self, BeamPair, ChannelMatrix};
use crate::vec2::Vec2;
use crate::{Error, Result};

/// OSPA settings. The metric order is fixed at 1.
#[derive(Debug, Clone, Copy)]
pub struct OspaConfig {
    /// Cutoff distance (m); also the cost charged per cardinality mismatch.
    pub cutoff: f64,
}

impl Default for OspaConfig {
    fn default() -> Self {
        OspaConfig { cutoff: 10.0 }
    }
}

/// Exact minimum-cost assignment of rows to distinct columns (rows <= cols).
///
/// Hungarian algorithm in the potentials formulation, O(r^2 c). Returns the
/// column chosen for each row and the total cost.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let rows = cost.len();
    if rows == 0 {
        return (Vec::new(), 0.0);
    }
    let cols = cost[0].len();
    assert!(
        rows <= cols,
        "assignment expects rows <= cols ({rows} x {cols})"
    );

    let mut u = vec![0.0_f64; rows + 1];
    let mut v = vec![0.0_f64; cols + 1];
    let mut assigned_row = vec![0_usize; cols + 1]; // 1-based row per column, 0 = free
    let mut way = vec![0_usize; cols + 1];

    for i in 1..=rows {
        assigned_row[0] = i;
        let mut j0 = 0_usize;
        let mut min_slack = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < min_slack[j] {
                    min_slack[j] = reduced;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![usize::MAX; rows];
    for j in 1..=cols {
        if assigned_row[j] != 0 {
            assignment[assigned_row[j] - 1] = j - 1;
        }
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum();
    (assignment, total)
}

/// First-order OSPA distance between two point sets.
///
/// `(1/L_max) * (min-assignment sum of cutoff distances + cutoff * |m - n|)`,
/// where the assignment injects the smaller set into the larger one and each
/// pairwise distance saturates at the cutoff. Two empty sets have distance 0
/// by convention.
pub fn ospa(estimated: &[Vec2], truth: &[Vec2], cutoff: f64) -> Result<f64> {
    if cutoff <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "OSPA cutoff must be positive (got {cutoff})"
        )));
    }
    let m = estimated.len();
    let n = truth.len();
    if m == 0 && n == 0 {
        return Ok(0.0);
    }
    let l_max = m.max(n);
    let l_delta = m.abs_diff(n);
    if m == 0 || n == 0 {
        return Ok(cutoff * l_delta as f64 / l_max as f64);
    }
    let (small, large) = if m <= n {
        (estimated, truth)
    } else {
        (truth, estimated)
    };
    let cost: Vec<Vec<f64>> = small
        .iter()
        .map(|a| large.iter().map(|b| a.distance(*b).min(cutoff)).collect())
        .collect();
    let (_, total) = min_cost_assignment(&cost);
    Ok((total + cutoff * l_delta as f64) / l_max as f64)
}

/// Per-UE Euclidean localization errors and their mean.
pub fn ue_error(estimates: &[Vec2], truth: &[Vec2]) -> Result<(Vec<f64>, f64)> {
    if estimates.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} estimates but {} true positions",
            estimates.len(),
            truth.len()
        )));
    }
    let errors: Vec<f64> = estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| e.distance(*t))
        .collect();
    let mean = if errors.is_empty() {
        0.0
    } else {
        errors.iter().sum::<f64>() / errors.len() as f64
    };
    Ok((errors, mean))
}

/// Distance from each true feature to its nearest map feature, saturated at
/// the cutoff. Gives per-feature accuracy curves for maps whose cardinality
/// may differ from the truth.
pub fn feature_errors(map: &[Vec2], truth: &[Vec2], cutoff: f64) -> Vec<f64> {
    truth
        .iter()
        .map(|t| {
            map.iter()
                .map(|m| m.distance(*t))
                .fold(cutoff, f64::min)
        })
        .collect()
}

/// Realized sum spectral efficiency under the chosen beam pairs.
pub fn realized_se(channels: &[ChannelMatrix], pairs: &[BeamPair], sigma2: f64) -> Result<f64> {
    channel::sum_se(channels, pairs, sigma2)
}
