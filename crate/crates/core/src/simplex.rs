//! Normalizers mapping real score vectors onto the probability simplex.
//!
//! All three maps are instances of `argmax_{p ∈ Δ} ⟨p, z⟩ + H(p)` for a
//! different entropy `H`:
//!
//! | map       | regularizer           | support |
//! |-----------|-----------------------|---------|
//! | softmax   | Shannon entropy       | dense   |
//! | sparsemax | `-½‖p‖²`              | sparse  |
//! | α-entmax  | Tsallis α-entropy     | tunable |
//!
//! Sparsemax is the Euclidean projection onto the simplex. Entries whose
//! score falls at or below the threshold come out as exact `0.0`, which is
//! what lets the consensus layer remove a neighbor's influence completely.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point on the probability simplex: nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    /// Uniform distribution over `k` entries.
    pub fn uniform(k: usize) -> Self {
        SimplexPoint(vec![1.0 / k as f64; k])
    }

    /// Wraps raw weights, checking nonnegativity and unit mass to `1e-12`.
    pub fn try_from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyScores);
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::param("weights", format!("entry {w} is not a nonnegative real")));
        }
        let mass: f64 = weights.iter().sum();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::param("weights", format!("mass {mass} is not 1")));
        }
        Ok(SimplexPoint(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for SimplexPoint {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn validate(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(Error::EmptyScores);
    }
    match z.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteScore {
            index,
            value: z[index],
        }),
        None => Ok(()),
    }
}

#[inline]
fn positive_part(v: f64) -> f64 {
    // `f64::max` may return -0.0; the support test downstream wants +0.0.
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Threshold `τ(z)` of the sorted-support rule:
/// `k★ = max{k : 1 + k·z_(k) > Σ_{j≤k} z_(j)}`, `τ = (Σ_{j≤k★} z_(j) − 1)/k★`.
///
/// The stable descending sort makes `τ` a function of the multiset of
/// scores, so tied entries always receive identical weights.
pub fn sparsemax_threshold(z: &[f64]) -> Result<f64> {
    validate(z)?;
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut running = 0.0;
    let mut support_sum = sorted[0];
    let mut support = 1usize;
    for (idx, &value) in sorted.iter().enumerate() {
        running += value;
        let k = idx + 1;
        if 1.0 + k as f64 * value > running {
            support = k;
            support_sum = running;
        }
    }
    Ok((support_sum - 1.0) / support as f64)
}

/// Sparsemax: `p_i = max{z_i − τ(z), 0}`.
pub fn sparsemax(z: &[f64]) -> Result<SimplexPoint> {
    let tau = sparsemax_threshold(z)?;
    Ok(SimplexPoint(z.iter().map(|&v| positive_part(v - tau)).collect()))
}

/// Max-shifted softmax. Every entry is strictly positive unless it underflows.
pub fn softmax(z: &[f64]) -> Result<SimplexPoint> {
    validate(z)?;
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(SimplexPoint(exps.into_iter().map(|e| e / total).collect()))
}

const ENTMAX_TOL: f64 = 1e-12;
const ENTMAX_MAX_ITER: usize = 200;

/// α-entmax, the maximizer of `⟨p, z⟩ + H_α(p)` with Tsallis entropy `H_α`.
///
/// `α = 1` and `α = 2` dispatch to [`softmax`] and [`sparsemax`]; any other
/// `α > 1` bisects on the threshold `τ` of
/// `p_i = [(α−1)·z_i − τ]_+^{1/(α−1)}` and renormalizes.
pub fn entmax(z: &[f64], alpha: f64) -> Result<SimplexPoint> {
    if !(alpha.is_finite() && alpha >= 1.0) {
        return Err(Error::UnsupportedEntropyIndex(alpha));
    }
    if alpha == 1.0 {
        return softmax(z);
    }
    if alpha == 2.0 {
        return sparsemax(z);
    }
    validate(z)?;

    let am1 = alpha - 1.0;
    let exponent = 1.0 / am1;
    let scaled: Vec<f64> = z.iter().map(|&v| am1 * v).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k = z.len() as f64;

    let mass = |tau: f64| -> f64 {
        scaled
            .iter()
            .map(|&s| positive_part(s - tau).powf(exponent))
            .sum()
    };

    // mass(lo) >= 1 (the top entry alone contributes 1), mass(hi) <= 1.
    let mut lo = max - 1.0;
    let mut hi = max - (1.0 / k).powf(am1);
    for _ in 0..ENTMAX_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mass(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < ENTMAX_TOL {
            break;
        }
    }
    let tau = 0.5 * (lo + hi);
    let raw: Vec<f64> = scaled
        .iter()
        .map(|&s| positive_part(s - tau).powf(exponent))
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(SimplexPoint(raw.into_iter().map(|p| p / total).collect()))
}

/// Euclidean projection onto the simplex by the full-sort scan, kept
/// separate from [`sparsemax_threshold`] so the two can check each other.
pub fn project_simplex_oracle(z: &[f64]) -> Result<SimplexPoint> {
    validate(z)?;
    let mut ascending = z.to_vec();
    ascending.sort_by(f64::total_cmp);

    // Walk from the largest entry down; θ_j is the shift that would give the
    // top-j entries unit mass. The support is the longest prefix whose last
    // element stays strictly above its own θ.
    let mut theta = ascending[ascending.len() - 1] - 1.0;
    let mut acc = 0.0;
    for (count, &u) in ascending.iter().rev().enumerate() {
        acc += u;
        let candidate = (acc - 1.0) / (count + 1) as f64;
        if u > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    Ok(SimplexPoint(
        z.iter()
            .map(|&v| if v > theta { v - theta } else { 0.0 })
            .collect(),
    ))
}
