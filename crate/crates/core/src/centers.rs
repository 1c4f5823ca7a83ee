//! Robust central proxies of a neighborhood: coordinate-wise median,
//! geometric median, and the pairwise mean distance used by the
//! quasi-geometric loss.

use crate::error::{Error, Result};
use crate::state::{dist2, NeighborStates, StateVector};
use crate::NodeId;

pub const DEFAULT_GM_TOL: f64 = 1e-10;
pub const DEFAULT_GM_MAX_ITER: usize = 1000;

/// Median of each coordinate; even counts take the midpoint of the two
/// central order statistics.
pub fn coordinate_median(ns: &NeighborStates) -> StateVector {
    coordinate_median_of(ns.states())
}

pub(crate) fn coordinate_median_of(points: &[StateVector]) -> StateVector {
    let m = points.len();
    let dim = points[0].len();
    let mut column = vec![0.0; m];
    (0..dim)
        .map(|k| {
            for (slot, p) in column.iter_mut().zip(points) {
                *slot = p[k];
            }
            column.sort_by(f64::total_cmp);
            if m % 2 == 1 {
                column[m / 2]
            } else {
                0.5 * (column[m / 2 - 1] + column[m / 2])
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricMedian {
    pub point: StateVector,
    pub iterations: usize,
    pub converged: bool,
}

fn objective(y: &[f64], points: &[StateVector]) -> f64 {
    points.iter().map(|p| dist2(y, p)).sum()
}

/// Weiszfeld iteration for `argmin_y Σ_v ‖y − x_v‖₂`, started at the
/// centroid, with the Vardi–Zhang correction whenever the iterate lands on
/// an input point.
///
/// Stops once an iterate moves less than `tol`. Hitting `max_iter` returns
/// the last iterate with `converged = false`. The returned point is never
/// worse than the best input point.
pub fn geometric_median(ns: &NeighborStates, tol: f64, max_iter: usize) -> Result<GeometricMedian> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::param("tol", "must be positive"));
    }
    Ok(weiszfeld(ns.states(), tol, max_iter))
}

pub(crate) fn weiszfeld(points: &[StateVector], tol: f64, max_iter: usize) -> GeometricMedian {
    let m = points.len();
    let dim = points[0].len();

    let mut y = vec![0.0; dim];
    for p in points {
        for (acc, v) in y.iter_mut().zip(p) {
            *acc += v;
        }
    }
    for v in &mut y {
        *v /= m as f64;
    }

    let mut converged = false;
    let mut iterations = 0;
    let mut numer = vec![0.0; dim];
    let mut resultant = vec![0.0; dim];
    while iterations < max_iter {
        iterations += 1;
        numer.fill(0.0);
        resultant.fill(0.0);
        let mut denom = 0.0;
        let mut coincident = 0usize;
        for p in points {
            let d = dist2(p, &y);
            if d == 0.0 {
                coincident += 1;
                continue;
            }
            denom += 1.0 / d;
            for k in 0..dim {
                numer[k] += p[k] / d;
                resultant[k] += (p[k] - y[k]) / d;
            }
        }
        if denom == 0.0 {
            converged = true;
            break;
        }
        let target: Vec<f64> = numer.iter().map(|n| n / denom).collect();
        let next = if coincident == 0 {
            target
        } else {
            let r = resultant.iter().map(|v| v * v).sum::<f64>().sqrt();
            let eta = coincident as f64;
            if r <= eta {
                // Zero lies in the subdifferential at the anchor point.
                converged = true;
                break;
            }
            let gamma = (eta / r).min(1.0);
            target
                .iter()
                .zip(&y)
                .map(|(t, cur)| (1.0 - gamma) * t + gamma * cur)
                .collect()
        };
        let step = dist2(&next, &y);
        y = next;
        if step < tol {
            converged = true;
            break;
        }
    }

    let mut best = objective(&y, points);
    for p in points {
        let f = objective(p, points);
        if f < best {
            best = f;
            y = p.clone();
        }
    }
    GeometricMedian {
        point: y,
        iterations,
        converged,
    }
}

/// `Σ_v ‖x_j − x_v‖₂ / |N_i|` over the whole neighbor set; the `v = j` term
/// contributes zero.
pub fn pairwise_mean_distance(j: NodeId, ns: &NeighborStates) -> Result<f64> {
    let xj = ns.get(j).ok_or(Error::UnknownNeighbor(j))?;
    Ok(ns.states().iter().map(|xv| dist2(xj, xv)).sum::<f64>() / ns.len() as f64)
}
