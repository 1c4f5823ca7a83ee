//! Reputation pipeline: per-neighbor loss, accumulation over rounds, and
//! normalization of `−η·L` onto the simplex.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::centers::{self, DEFAULT_GM_MAX_ITER, DEFAULT_GM_TOL};
use crate::error::{Error, Result};
use crate::simplex::{self, SimplexPoint};
use crate::state::{dist2, dist_inf, NeighborStates};
use crate::NodeId;

/// Which reference point a neighbor is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `‖x_j − cm_i‖_∞` against the coordinate-wise median of the neighbors.
    CoordinateMedian,
    /// `‖x_j − gm_i‖₂` against the geometric median of the neighbors.
    GeometricMedian,
    /// Mean 2-norm distance from `x_j` to every neighbor.
    QuasiGeometric,
    /// `‖x_j − x_i‖₂` against the node's own state (weight-learning baseline).
    OwnState,
}

impl LossKind {
    pub fn default_norm(self) -> LossNorm {
        match self {
            LossKind::CoordinateMedian => LossNorm::Inf,
            _ => LossNorm::L2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    Inf,
    L2,
}

impl LossNorm {
    fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            LossNorm::Inf => dist_inf(a, b),
            LossNorm::L2 => dist2(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Accumulation {
    /// `L ← λ·L + l`.
    Decay { lambda: f64 },
    /// Sum of the `length` most recent losses.
    Horizon { length: usize },
    /// `L ← L + l` over the whole history.
    InfiniteSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalizer {
    Sparsemax { eta: f64 },
    Softmax { eta: f64 },
    Entmax { eta: f64, alpha: f64 },
}

impl Normalizer {
    pub fn eta(&self) -> f64 {
        match *self {
            Normalizer::Sparsemax { eta }
            | Normalizer::Softmax { eta }
            | Normalizer::Entmax { eta, .. } => eta,
        }
    }

    pub fn apply(&self, scores: &[f64]) -> Result<SimplexPoint> {
        match *self {
            Normalizer::Sparsemax { .. } => simplex::sparsemax(scores),
            Normalizer::Softmax { .. } => simplex::softmax(scores),
            Normalizer::Entmax { alpha, .. } => simplex::entmax(scores, alpha),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReputationConfig {
    pub loss: LossKind,
    /// Overrides the loss kind's natural norm. Center-based kinds only; mixed
    /// pairings such as a 2-norm against the coordinate median are allowed
    /// but carry no honest-loss bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_norm: Option<LossNorm>,
    pub accumulation: Accumulation,
    pub normalizer: Normalizer,
}

impl ReputationConfig {
    /// The pipeline of the reference algorithm: coordinate-median loss,
    /// exponential forgetting, sparsemax.
    pub fn arepc(eta: f64, lambda: f64) -> Self {
        ReputationConfig {
            loss: LossKind::CoordinateMedian,
            loss_norm: None,
            accumulation: Accumulation::Decay { lambda },
            normalizer: Normalizer::Sparsemax { eta },
        }
    }

    pub fn norm(&self) -> LossNorm {
        self.loss_norm.unwrap_or_else(|| self.loss.default_norm())
    }

    pub fn validate(&self) -> Result<()> {
        let eta = self.normalizer.eta();
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::param("eta", format!("{eta} is not > 0")));
        }
        if let Normalizer::Entmax { alpha, .. } = self.normalizer {
            if !(alpha.is_finite() && alpha >= 1.0) {
                return Err(Error::UnsupportedEntropyIndex(alpha));
            }
        }
        match self.accumulation {
            Accumulation::Decay { lambda } if !(0.0..=1.0).contains(&lambda) => {
                return Err(Error::param("lambda", format!("{lambda} is outside [0, 1]")));
            }
            Accumulation::Horizon { length: 0 } => {
                return Err(Error::param("horizon", "length must be >= 1"));
            }
            _ => {}
        }
        if self.loss_norm.is_some()
            && matches!(self.loss, LossKind::QuasiGeometric | LossKind::OwnState)
        {
            return Err(Error::param(
                "loss_norm",
                "norm override applies to center-based losses only",
            ));
        }
        Ok(())
    }

    /// Extra restrictions for the reputation-learning protocol: unbounded
    /// memory and own-state reference belong to the weight-learning baseline.
    pub fn validate_for_arepc(&self) -> Result<()> {
        self.validate()?;
        if self.accumulation == Accumulation::InfiniteSum {
            return Err(Error::param(
                "accumulation",
                "infinite_sum is reserved for the wla baseline; unbounded memory lets an attacker bank trust",
            ));
        }
        if self.loss == LossKind::OwnState {
            return Err(Error::param("loss", "own_state is reserved for the wla baseline"));
        }
        Ok(())
    }
}

/// Instantaneous loss of every neighbor, in the order of `ns.ids()`.
///
/// The reference center is computed over the neighbors only; `self_state`
/// is read by [`LossKind::OwnState`] alone.
pub fn instantaneous_loss(
    cfg: &ReputationConfig,
    self_state: &[f64],
    ns: &NeighborStates,
) -> Result<Vec<f64>> {
    if self_state.len() != ns.dim() {
        return Err(Error::DimensionMismatch {
            expected: self_state.len(),
            got: ns.dim(),
        });
    }
    let norm = cfg.norm();
    let against = |center: &[f64]| -> Vec<f64> {
        ns.states().iter().map(|x| norm.distance(x, center)).collect()
    };
    Ok(match cfg.loss {
        LossKind::CoordinateMedian => against(&centers::coordinate_median(ns)),
        LossKind::GeometricMedian => {
            let gm = centers::geometric_median(ns, DEFAULT_GM_TOL, DEFAULT_GM_MAX_ITER)?;
            against(&gm.point)
        }
        LossKind::QuasiGeometric => ns
            .ids()
            .iter()
            .map(|&j| centers::pairwise_mean_distance(j, ns))
            .collect::<Result<_>>()?,
        LossKind::OwnState => against(self_state),
    })
}

/// Per-neighbor accumulated losses, indexed by position in the node's
/// ascending neighbor list.
#[derive(Debug, Clone, PartialEq)]
pub struct LossLedger {
    last: Vec<f64>,
    accumulated: Vec<f64>,
    window: Option<Vec<VecDeque<f64>>>,
}

impl LossLedger {
    /// Fresh ledger with `L^{(−1)} = 0` for every neighbor.
    pub fn new(neighbors: usize, accumulation: &Accumulation) -> Self {
        let window = match *accumulation {
            Accumulation::Horizon { length } => {
                Some(vec![VecDeque::with_capacity(length + 1); neighbors])
            }
            _ => None,
        };
        LossLedger {
            last: vec![0.0; neighbors],
            accumulated: vec![0.0; neighbors],
            window,
        }
    }

    pub fn len(&self) -> usize {
        self.accumulated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accumulated.is_empty()
    }

    /// Accumulated losses `L_ij^{(t)}`.
    pub fn accumulated(&self) -> &[f64] {
        &self.accumulated
    }

    /// Most recent instantaneous losses `l_ij^{(t)}`.
    pub fn instantaneous(&self) -> &[f64] {
        &self.last
    }

    pub fn accumulate(&mut self, losses: &[f64], accumulation: &Accumulation) -> Result<()> {
        if losses.len() != self.accumulated.len() {
            return Err(Error::DimensionMismatch {
                expected: self.accumulated.len(),
                got: losses.len(),
            });
        }
        self.last.copy_from_slice(losses);
        match *accumulation {
            Accumulation::Decay { lambda } => {
                for (acc, &l) in self.accumulated.iter_mut().zip(losses) {
                    *acc = lambda * *acc + l;
                }
            }
            Accumulation::InfiniteSum => {
                for (acc, &l) in self.accumulated.iter_mut().zip(losses) {
                    *acc += l;
                }
            }
            Accumulation::Horizon { length } => {
                let windows = self
                    .window
                    .get_or_insert_with(|| vec![VecDeque::new(); losses.len()]);
                for ((acc, win), &l) in self.accumulated.iter_mut().zip(windows).zip(losses) {
                    win.push_back(l);
                    while win.len() > length {
                        win.pop_front();
                    }
                    // Re-summing the window keeps L an exact sum of the
                    // retained losses rather than a drifting recursion.
                    *acc = win.iter().sum();
                }
            }
        }
        Ok(())
    }
}

/// A node's weights over its neighbors, in ascending neighbor id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationVector {
    pub neighbors: Vec<NodeId>,
    pub weights: SimplexPoint,
}

impl ReputationVector {
    pub fn weight_of(&self, id: NodeId) -> Option<f64> {
        self.neighbors
            .binary_search(&id)
            .ok()
            .map(|idx| self.weights[idx])
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.neighbors.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Applies the normalizer to `(−η·L_ij)_j`.
pub fn normalize(
    ledger: &LossLedger,
    neighbors: &[NodeId],
    normalizer: &Normalizer,
) -> Result<ReputationVector> {
    let eta = normalizer.eta();
    let scores: Vec<f64> = ledger.accumulated().iter().map(|&l| -eta * l).collect();
    Ok(ReputationVector {
        neighbors: neighbors.to_vec(),
        weights: normalizer.apply(&scores)?,
    })
}

/// One full pipeline pass: loss, accumulate into `ledger`, normalize.
pub fn update(
    cfg: &ReputationConfig,
    ledger: &mut LossLedger,
    self_state: &[f64],
    ns: &NeighborStates,
) -> Result<ReputationVector> {
    let losses = instantaneous_loss(cfg, self_state, ns)?;
    ledger.accumulate(&losses, &cfg.accumulation)?;
    normalize(ledger, ns.ids(), &cfg.normalizer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ns(points: &[&[f64]]) -> NeighborStates {
        NeighborStates::new(points.iter().enumerate().map(|(i, p)| (i, p.to_vec())).collect())
            .unwrap()
    }

    fn with_loss(loss: LossKind) -> ReputationConfig {
        ReputationConfig {
            loss,
            ..ReputationConfig::arepc(1.0, 0.0)
        }
    }

    #[test]
    fn identical_neighbors_have_zero_loss() {
        let set = ns(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        for kind in [
            LossKind::CoordinateMedian,
            LossKind::GeometricMedian,
            LossKind::QuasiGeometric,
            LossKind::OwnState,
        ] {
            let l = instantaneous_loss(&with_loss(kind), &[1.0, 2.0], &set).unwrap();
            assert!(l.iter().all(|&v| v == 0.0), "{kind:?}: {l:?}");
        }
    }

    #[test]
    fn coordinate_median_loss_example() {
        let set = ns(&[&[0.0, 0.0], &[2.0, 2.0], &[10.0, 0.0]]);
        let l = instantaneous_loss(&with_loss(LossKind::CoordinateMedian), &[0.0, 0.0], &set).unwrap();
        assert_eq!(l, vec![2.0, 2.0, 8.0]);
    }

    #[test]
    fn own_state_loss_is_euclidean_distance_to_self() {
        let set = ns(&[&[3.0, 4.0], &[0.0, 0.0]]);
        let l = instantaneous_loss(&with_loss(LossKind::OwnState), &[0.0, 0.0], &set).unwrap();
        assert_eq!(l, vec![5.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let set = ns(&[&[1.0, 2.0]]);
        assert!(matches!(
            instantaneous_loss(&with_loss(LossKind::CoordinateMedian), &[1.0], &set),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn decay_accumulation() {
        let acc = Accumulation::Decay { lambda: 0.8 };
        let mut ledger = LossLedger::new(1, &acc);
        ledger.accumulate(&[1.0], &acc).unwrap();
        assert_eq!(ledger.accumulated(), &[1.0]);
        ledger.accumulate(&[1.0], &acc).unwrap();
        assert_eq!(ledger.accumulated(), &[1.8]);
    }

    #[test]
    fn zero_forgetting_tracks_instantaneous_loss() {
        let acc = Accumulation::Decay { lambda: 0.0 };
        let mut ledger = LossLedger::new(2, &acc);
        for l in [[3.0, 0.5], [0.25, 7.0], [1e9, 0.0]] {
            ledger.accumulate(&l, &acc).unwrap();
            assert_eq!(ledger.accumulated(), &l);
        }
    }

    #[test]
    fn horizon_accumulation() {
        let acc = Accumulation::Horizon { length: 2 };
        let mut ledger = LossLedger::new(1, &acc);
        ledger.accumulate(&[1.0], &acc).unwrap();
        assert_eq!(ledger.accumulated(), &[1.0]);
        ledger.accumulate(&[2.0], &acc).unwrap();
        assert_eq!(ledger.accumulated(), &[3.0]);
        ledger.accumulate(&[3.0], &acc).unwrap();
        assert_eq!(ledger.accumulated(), &[5.0]);
    }

    #[test]
    fn infinite_sum_accumulation() {
        let acc = Accumulation::InfiniteSum;
        let mut ledger = LossLedger::new(1, &acc);
        for _ in 0..4 {
            ledger.accumulate(&[0.5], &acc).unwrap();
        }
        assert_eq!(ledger.accumulated(), &[2.0]);
    }

    #[test]
    fn equal_losses_give_uniform_weights() {
        for normalizer in [
            Normalizer::Sparsemax { eta: 0.3 },
            Normalizer::Softmax { eta: 0.3 },
            Normalizer::Entmax { eta: 0.3, alpha: 1.5 },
        ] {
            let acc = Accumulation::Decay { lambda: 0.5 };
            let mut ledger = LossLedger::new(4, &acc);
            ledger.accumulate(&[2.0; 4], &acc).unwrap();
            let rep = normalize(&ledger, &[1, 3, 5, 7], &normalizer).unwrap();
            for w in rep.weights.iter() {
                assert!((w - 0.25).abs() < 1e-12);
            }
            assert_eq!(rep.weight_of(5), Some(rep.weights[2]));
        }
    }

    #[test]
    fn sparsemax_truncates_far_neighbor() {
        // η = 1, L = (0, 0.2, 5): z = (0, −0.2, −5). Support {0, 1}:
        // τ = (0 − 0.2 − 1)/2 = −0.6, p = (0.6, 0.4, 0).
        let acc = Accumulation::Decay { lambda: 0.0 };
        let mut ledger = LossLedger::new(3, &acc);
        ledger.accumulate(&[0.0, 0.2, 5.0], &acc).unwrap();
        let rep = normalize(&ledger, &[0, 1, 2], &Normalizer::Sparsemax { eta: 1.0 }).unwrap();
        assert_eq!(rep.weights[2], 0.0);
        assert!((rep.weights[0] - 0.6).abs() < 1e-15);
        assert!((rep.weights[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn softmax_never_zero() {
        let acc = Accumulation::Decay { lambda: 0.0 };
        let mut ledger = LossLedger::new(3, &acc);
        ledger.accumulate(&[0.0, 10.0, 100.0], &acc).unwrap();
        let rep = normalize(&ledger, &[0, 1, 2], &Normalizer::Softmax { eta: 1.0 }).unwrap();
        assert!(rep.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(ReputationConfig::arepc(0.001, 0.8).validate_for_arepc().is_ok());
        assert!(ReputationConfig::arepc(0.0, 0.8).validate().is_err());
        assert!(ReputationConfig::arepc(0.1, 1.5).validate().is_err());
        let mut cfg = ReputationConfig::arepc(0.1, 0.5);
        cfg.accumulation = Accumulation::InfiniteSum;
        assert!(cfg.validate().is_ok());
        assert!(cfg.validate_for_arepc().is_err());
        cfg.accumulation = Accumulation::Horizon { length: 0 };
        assert!(cfg.validate().is_err());
        cfg.accumulation = Accumulation::Horizon { length: 3 };
        cfg.normalizer = Normalizer::Entmax { eta: 1.0, alpha: 0.9 };
        assert!(cfg.validate().is_err());
        let mixed = ReputationConfig {
            loss_norm: Some(LossNorm::L2),
            ..ReputationConfig::arepc(0.1, 0.0)
        };
        assert!(mixed.validate_for_arepc().is_ok());
        assert_eq!(mixed.norm(), LossNorm::L2);
        let bad = ReputationConfig {
            loss: LossKind::QuasiGeometric,
            loss_norm: Some(LossNorm::Inf),
            ..ReputationConfig::arepc(0.1, 0.0)
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative(
            points in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..8),
            kind in prop_oneof![
                Just(LossKind::CoordinateMedian),
                Just(LossKind::GeometricMedian),
                Just(LossKind::QuasiGeometric),
                Just(LossKind::OwnState),
            ],
        ) {
            let set = NeighborStates::new(points.into_iter().enumerate().collect()).unwrap();
            let l = instantaneous_loss(&with_loss(kind), &[0.0, 0.0, 0.0], &set).unwrap();
            prop_assert!(l.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn horizon_matches_window_sum(
            seq in prop::collection::vec(0.0f64..10.0, 1..40),
            h in 1usize..6,
        ) {
            let acc = Accumulation::Horizon { length: h };
            let mut ledger = LossLedger::new(1, &acc);
            for (t, &l) in seq.iter().enumerate() {
                ledger.accumulate(&[l], &acc).unwrap();
                let start = (t + 1).saturating_sub(h);
                let expect: f64 = seq[start..=t].iter().sum();
                prop_assert_eq!(ledger.accumulated()[0], expect);
            }
        }
    }
}
