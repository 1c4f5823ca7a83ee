//! Per-node update rules, all written as
//! `x ← (1−α)·x + α·x̂` for a rule-specific target `x̂`.
//!
//! The blend is evaluated as `x + α·(x̂ − x)` with `x̂ − x` accumulated as a
//! weighted sum of displacements `x_j − x`. At a consensus configuration every
//! retained displacement is exactly zero, so a node sitting at agreement stays
//! bitwise where it is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reputation::{
    self, Accumulation, LossKind, LossLedger, Normalizer, ReputationConfig, ReputationVector,
};
use crate::simplex::SimplexPoint;
use crate::state::{NeighborStates, StateVector};
use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    /// Reputation-weighted consensus.
    Arepc(ReputationConfig),
    /// Plain neighbor averaging.
    Average,
    /// Coordinate-wise trimmed mean discarding up to `f` values on each side.
    Wmsr { f: usize },
    /// Own-state loss, unbounded memory, softmax with inverse temperature `theta`.
    Wla { theta: f64 },
    /// Slot for an externally supplied trust rule; see [`RepcRule`].
    Repc { f: usize, epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Step size in `(0, 1]`.
    pub alpha: f64,
    #[serde(flatten)]
    pub rule: Rule,
}

impl ProtocolConfig {
    pub fn new(alpha: f64, rule: Rule) -> Result<Self> {
        let cfg = ProtocolConfig { alpha, rule };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::param("alpha", format!("{} is outside (0, 1]", self.alpha)));
        }
        match &self.rule {
            Rule::Arepc(rep) => rep.validate_for_arepc(),
            Rule::Wla { theta } if !(theta.is_finite() && *theta > 0.0) => {
                Err(Error::param("theta", format!("{theta} is not > 0")))
            }
            Rule::Repc { epsilon, .. } if !(epsilon.is_finite() && *epsilon >= 0.0) => {
                Err(Error::param("epsilon", format!("{epsilon} is negative")))
            }
            _ => Ok(()),
        }
    }

    /// Pipeline actually run by reputation-based rules.
    pub fn reputation_config(&self) -> Option<ReputationConfig> {
        match &self.rule {
            Rule::Arepc(rep) => Some(*rep),
            Rule::Wla { theta } => Some(wla_config(*theta)),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.rule {
            Rule::Arepc(_) => "arepc",
            Rule::Average => "average",
            Rule::Wmsr { .. } => "wmsr",
            Rule::Wla { .. } => "wla",
            Rule::Repc { .. } => "repc",
        }
    }
}

fn wla_config(theta: f64) -> ReputationConfig {
    ReputationConfig {
        loss: LossKind::OwnState,
        loss_norm: None,
        accumulation: Accumulation::InfiniteSum,
        normalizer: Normalizer::Softmax { eta: theta },
    }
}

/// An externally supplied trust rule for the `repc` slot. Implementations
/// must be memoryless and return a point on the simplex over `ns.ids()`.
pub trait RepcRule: Send + Sync {
    fn weights(&self, own: &[f64], ns: &NeighborStates, f: usize, epsilon: f64)
        -> Result<SimplexPoint>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: StateVector,
    pub reputation: Option<ReputationVector>,
}

/// An honest participant: its state, fixed neighbor list, and whatever
/// memory its rule keeps between rounds.
#[derive(Debug, Clone)]
pub struct HonestNode {
    id: NodeId,
    state: StateVector,
    neighbors: Vec<NodeId>,
    ledger: Option<LossLedger>,
    reputation: Option<ReputationVector>,
    config: ProtocolConfig,
}

impl HonestNode {
    pub fn new(
        id: NodeId,
        initial: StateVector,
        mut neighbors: Vec<NodeId>,
        config: ProtocolConfig,
    ) -> Result<Self> {
        config.validate()?;
        if neighbors.is_empty() {
            return Err(Error::NoNeighbors);
        }
        neighbors.sort_unstable();
        neighbors.dedup();
        let ledger = config
            .reputation_config()
            .map(|rep| LossLedger::new(neighbors.len(), &rep.accumulation));
        Ok(HonestNode {
            id,
            state: initial,
            neighbors,
            ledger,
            reputation: None,
            config,
        })
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn neighbors(&self) -> &[NodeId] {
        &self.neighbors
    }

    pub fn reputation(&self) -> Option<&ReputationVector> {
        self.reputation.as_ref()
    }

    pub fn ledger(&self) -> Option<&LossLedger> {
        self.ledger.as_ref()
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    fn check_inbox(&self, ns: &NeighborStates) -> Result<()> {
        if ns.dim() != self.state.len() {
            return Err(Error::DimensionMismatch {
                expected: self.state.len(),
                got: ns.dim(),
            });
        }
        if let Some(&missing) = self.neighbors.iter().find(|id| ns.get(**id).is_none()) {
            return Err(Error::MissingMessage {
                node: self.id,
                neighbor: missing,
            });
        }
        if ns.len() != self.neighbors.len() {
            let stray = ns
                .ids()
                .iter()
                .find(|id| self.neighbors.binary_search(id).is_err())
                .copied()
                .unwrap_or_default();
            return Err(Error::UnknownNeighbor(stray));
        }
        Ok(())
    }

    /// Runs one round of the configured rule on this round's inbox.
    pub fn step(&mut self, ns: &NeighborStates, repc: Option<&dyn RepcRule>) -> Result<StepOutcome> {
        self.check_inbox(ns)?;
        let (delta, reputation) = match self.config.rule.clone() {
            Rule::Arepc(rep) => {
                let weights = self.learn(&rep, ns)?;
                (weighted_displacement(&self.state, ns, &weights.weights), Some(weights))
            }
            Rule::Average => {
                let weights = ReputationVector {
                    neighbors: self.neighbors.clone(),
                    weights: SimplexPoint::uniform(ns.len()),
                };
                (weighted_displacement(&self.state, ns, &weights.weights), Some(weights))
            }
            Rule::Wmsr { f } => (trimmed_displacement(&self.state, ns, f), None),
            Rule::Wla { theta } => {
                let weights = self.learn(&wla_config(theta), ns)?;
                (weighted_displacement(&self.state, ns, &weights.weights), Some(weights))
            }
            Rule::Repc { f, epsilon } => {
                let rule = repc.ok_or(Error::RepcNotProvided)?;
                let weights = rule.weights(&self.state, ns, f, epsilon)?;
                if weights.len() != ns.len() {
                    return Err(Error::DimensionMismatch {
                        expected: ns.len(),
                        got: weights.len(),
                    });
                }
                let weights = SimplexPoint::try_from_weights(weights.into_inner())?;
                let displacement = weighted_displacement(&self.state, ns, &weights);
                (
                    displacement,
                    Some(ReputationVector {
                        neighbors: self.neighbors.clone(),
                        weights,
                    }),
                )
            }
        };
        let alpha = self.config.alpha;
        for (x, d) in self.state.iter_mut().zip(&delta) {
            *x += alpha * d;
        }
        self.reputation = reputation.clone();
        Ok(StepOutcome {
            state: self.state.clone(),
            reputation,
        })
    }

    fn learn(&mut self, rep: &ReputationConfig, ns: &NeighborStates) -> Result<ReputationVector> {
        let ledger = self
            .ledger
            .get_or_insert_with(|| LossLedger::new(ns.len(), &rep.accumulation));
        reputation::update(rep, ledger, &self.state, ns)
    }
}

/// `Σ_j p_j (x_j − x)` in ascending neighbor order.
fn weighted_displacement(own: &[f64], ns: &NeighborStates, weights: &[f64]) -> StateVector {
    let mut delta = vec![0.0; own.len()];
    for (xj, &p) in ns.states().iter().zip(weights) {
        for ((d, a), b) in delta.iter_mut().zip(xj).zip(own) {
            *d += p * (a - b);
        }
    }
    delta
}

/// Per coordinate: drop up to `f` neighbor values above and `f` below the
/// own value (the most extreme ones), then average the survivors together
/// with the own value.
fn trimmed_displacement(own: &[f64], ns: &NeighborStates, f: usize) -> StateVector {
    let mut diffs = Vec::with_capacity(ns.len());
    own.iter()
        .enumerate()
        .map(|(k, &v)| {
            diffs.clear();
            diffs.extend(ns.states().iter().map(|x| x[k] - v));
            diffs.sort_by(f64::total_cmp);
            let below = diffs.iter().take_while(|d| **d < 0.0).count();
            let above = diffs.iter().rev().take_while(|d| **d > 0.0).count();
            let kept = &diffs[below.min(f)..diffs.len() - above.min(f)];
            kept.iter().sum::<f64>() / (kept.len() + 1) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ns(entries: &[(NodeId, &[f64])]) -> NeighborStates {
        NeighborStates::new(entries.iter().map(|(i, p)| (*i, p.to_vec())).collect()).unwrap()
    }

    fn node(initial: &[f64], neighbors: &[NodeId], alpha: f64, rule: Rule) -> HonestNode {
        HonestNode::new(0, initial.to_vec(), neighbors.to_vec(), ProtocolConfig::new(alpha, rule).unwrap())
            .unwrap()
    }

    #[test]
    fn average_examples() {
        let mut n = node(&[1.0], &[1, 2], 1.0, Rule::Average);
        assert_eq!(n.step(&ns(&[(1, &[0.0]), (2, &[2.0])]), None).unwrap().state, vec![1.0]);
        let mut n = node(&[0.0], &[1], 0.5, Rule::Average);
        assert_eq!(n.step(&ns(&[(1, &[4.0])]), None).unwrap().state, vec![2.0]);
        let mut n = node(&[3.0, -1.0], &[1, 2], 0.7, Rule::Average);
        let out = n.step(&ns(&[(1, &[3.0, -1.0]), (2, &[3.0, -1.0])]), None).unwrap();
        assert_eq!(out.state, vec![3.0, -1.0]);
    }

    #[test]
    fn wmsr_examples() {
        let inbox = ns(&[(1, &[1.0]), (2, &[4.0]), (3, &[6.0]), (4, &[100.0])]);
        let mut n = node(&[5.0], &[1, 2, 3, 4], 1.0, Rule::Wmsr { f: 1 });
        assert_eq!(n.step(&inbox, None).unwrap().state, vec![5.0]);

        // f = 0 keeps everything and includes the own value in the mean.
        let mut n = node(&[5.0], &[1, 2, 3, 4], 1.0, Rule::Wmsr { f: 0 });
        let got = n.step(&inbox, None).unwrap().state[0];
        assert!((got - (5.0 + 1.0 + 4.0 + 6.0 + 100.0) / 5.0).abs() < 1e-12);

        let mut n = node(&[2.0, 2.0], &[1, 2], 0.4, Rule::Wmsr { f: 1 });
        let out = n.step(&ns(&[(1, &[2.0, 2.0]), (2, &[2.0, 2.0])]), None).unwrap();
        assert_eq!(out.state, vec![2.0, 2.0]);
        assert!(out.reputation.is_none());
    }

    #[test]
    fn wmsr_trims_fewer_when_one_side_is_short() {
        // Only one value lies below the own value; f = 2 removes it and the
        // two largest above.
        let inbox = ns(&[(1, &[-3.0]), (2, &[1.0]), (3, &[2.0]), (4, &[50.0]), (5, &[60.0])]);
        let mut n = node(&[0.0], &[1, 2, 3, 4, 5], 1.0, Rule::Wmsr { f: 2 });
        let got = n.step(&inbox, None).unwrap().state[0];
        assert!((got - (0.0 + 1.0 + 2.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn arepc_fixed_point_when_neighbors_agree() {
        let rule = Rule::Arepc(ReputationConfig::arepc(0.01, 0.0));
        let mut n = node(&[1.5, -2.0], &[1, 2, 3], 0.5, rule);
        let inbox = ns(&[(1, &[1.5, -2.0]), (2, &[1.5, -2.0]), (3, &[1.5, -2.0])]);
        let out = n.step(&inbox, None).unwrap();
        assert_eq!(out.state, vec![1.5, -2.0]);
        for w in out.reputation.unwrap().weights.iter() {
            assert_eq!(*w, 1.0 / 3.0);
        }
    }

    #[test]
    fn arepc_hand_rolled_round() {
        // η = 0.005, λ = 0: neighbors 0, 0.1, 1000 around own state 0.
        // cm = 0.1, l = (0.1, 0, 999.9), z = −η·l = (−0.0005, 0, −4.9995).
        // Support {first two}: τ = (−0.0005 − 1)/2 = −0.50025,
        // p = (0.49975, 0.50025, 0). x̂ = 0.50025·0.1 = 0.050025,
        // x_new = 0.5·0 + 0.5·0.050025 = 0.0250125.
        let rule = Rule::Arepc(ReputationConfig::arepc(0.005, 0.0));
        let mut n = node(&[0.0], &[1, 2, 3], 0.5, rule);
        let out = n.step(&ns(&[(1, &[0.0]), (2, &[0.1]), (3, &[1000.0])]), None).unwrap();
        let p = out.reputation.unwrap();
        assert_eq!(p.weights[2], 0.0);
        assert!((p.weights[0] - 0.49975).abs() < 1e-15);
        assert!((p.weights[1] - 0.50025).abs() < 1e-15);
        assert!((out.state[0] - 0.0250125).abs() < 1e-15);
    }

    #[test]
    fn arepc_stays_in_convex_hull() {
        let rule = Rule::Arepc(ReputationConfig::arepc(0.05, 0.5));
        let mut n = node(&[0.0, 0.0], &[1, 2, 3], 0.9, rule);
        for _ in 0..5 {
            let out = n
                .step(&ns(&[(1, &[1.0, 2.0]), (2, &[-1.0, 3.0]), (3, &[40.0, -9.0])]), None)
                .unwrap();
            assert!(out.state[0] >= -1.0 && out.state[0] <= 40.0);
            assert!(out.state[1] >= -9.0 && out.state[1] <= 3.0);
        }
    }

    #[test]
    fn missing_message_is_an_error() {
        let mut n = node(&[0.0], &[1, 2], 0.5, Rule::Average);
        assert!(matches!(
            n.step(&ns(&[(1, &[0.0])]), None),
            Err(Error::MissingMessage { neighbor: 2, .. })
        ));
        assert!(matches!(
            n.step(&ns(&[(1, &[0.0]), (2, &[0.0]), (7, &[0.0])]), None),
            Err(Error::UnknownNeighbor(7))
        ));
        assert!(matches!(
            n.step(&ns(&[(1, &[0.0, 1.0]), (2, &[0.0, 1.0])]), None),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn wla_examples() {
        // Round 0 with equidistant neighbors: uniform weights.
        let mut n = node(&[0.0, 0.0], &[1, 2, 3, 4], 0.5, Rule::Wla { theta: 0.1 });
        let out = n
            .step(&ns(&[(1, &[1.0, 0.0]), (2, &[0.0, 1.0]), (3, &[-1.0, 0.0]), (4, &[0.0, -1.0])]), None)
            .unwrap();
        for w in out.reputation.unwrap().weights.iter() {
            assert!((w - 0.25).abs() < 1e-15);
        }

        // A neighbor that always mirrors the node keeps L = 0 and the
        // largest weight.
        let mut n = node(&[0.0], &[1, 2], 0.3, Rule::Wla { theta: 0.5 });
        for _ in 0..10 {
            let me = n.state()[0];
            let out = n.step(&ns(&[(1, &[me]), (2, &[me + 1.0])]), None).unwrap();
            let rep = out.reputation.unwrap();
            assert!(rep.weights[0] >= rep.weights[1]);
            assert_eq!(n.ledger().unwrap().accumulated()[0], 0.0);
        }
    }

    #[test]
    fn wla_inverts_to_two_thirds() {
        // Two neighbors at distances 0 and ln(2)/θ from self give softmax
        // weights (2/3, 1/3) on the first round.
        let theta = 0.25;
        let gap = 2f64.ln() / theta;
        let mut n = node(&[0.0], &[1, 2], 1.0, Rule::Wla { theta });
        let out = n.step(&ns(&[(1, &[0.0]), (2, &[gap])]), None).unwrap();
        let w = out.reputation.unwrap();
        assert!((w.weights[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.weights[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    struct Uniform;

    impl RepcRule for Uniform {
        fn weights(&self, _own: &[f64], ns: &NeighborStates, _f: usize, _eps: f64) -> Result<SimplexPoint> {
            Ok(SimplexPoint::uniform(ns.len()))
        }
    }

    #[test]
    fn repc_slot() {
        let rule = Rule::Repc { f: 1, epsilon: 0.001 };
        let inbox = ns(&[(1, &[2.0]), (2, &[2.0])]);
        let mut n = node(&[2.0], &[1, 2], 0.5, rule.clone());
        let err = n.step(&inbox, None).unwrap_err();
        assert_eq!(err.to_string(), "repc baseline not provided");

        let mut n = node(&[2.0], &[1, 2], 0.5, rule);
        let out = n.step(&inbox, Some(&Uniform)).unwrap();
        assert_eq!(out.state, vec![2.0]);
        let w = out.reputation.unwrap();
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(ProtocolConfig::new(0.0, Rule::Average).is_err());
        assert!(ProtocolConfig::new(1.2, Rule::Average).is_err());
        assert!(ProtocolConfig::new(1.0, Rule::Average).is_ok());
        assert!(ProtocolConfig::new(0.5, Rule::Wla { theta: 0.0 }).is_err());
        let mut rep = ReputationConfig::arepc(0.1, 0.2);
        rep.accumulation = Accumulation::InfiniteSum;
        assert!(ProtocolConfig::new(0.5, Rule::Arepc(rep)).is_err());
    }
}
