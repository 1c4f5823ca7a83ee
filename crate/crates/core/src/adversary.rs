//! Byzantine behaviors. A Byzantine node may address a different payload to
//! every neighbor in the same round.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{node_rng, STREAM_ATTACK, STREAM_INIT};
use crate::state::{norm2, NeighborStates, StateVector};
use crate::NodeId;

/// Axis-aligned box `[lo, hi]^d` used for initial draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitBox {
    pub lo: f64,
    pub hi: f64,
}

impl InitBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::param("init", format!("[{}, {}] is not a finite interval", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng, dim: usize) -> StateVector {
        (0..dim).map(|_| rng.random_range(self.lo..=self.hi)).collect()
    }

    /// Largest possible 2-norm of a point in the box.
    pub fn max_norm(&self, dim: usize) -> f64 {
        self.lo.abs().max(self.hi.abs()) * (dim as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    /// Broadcasts one constant vector forever. Without an explicit value the
    /// constant is drawn once from the initial-state box.
    FixedInitial {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<Vec<f64>>,
    },
    /// A fresh uniform vector in `[lo, hi]^d` each round, same for every
    /// neighbor.
    UniformRandom { lo: f64, hi: f64 },
    /// Echoes each neighbor's last state back to it, adding
    /// `magnitude · e_direction` whenever that state's round is a multiple of
    /// `period`. `direction` is 1-based and defaults to the first axis.
    Relay {
        period: u64,
        magnitude: f64,
        #[serde(default = "first_axis")]
        direction: usize,
    },
    /// A named script from [`builtin_script`].
    Custom {
        script: String,
        #[serde(default)]
        params: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    #[serde(flatten)]
    pub kind: AttackKind,
    /// Declared cap `M_B` on the 2-norm of every emitted message. `None`
    /// leaves emissions unchecked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

fn first_axis() -> usize {
    1
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        AttackSpec { kind, bound: None }
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if let Some(b) = self.bound {
            if b.is_nan() || b <= 0.0 {
                return Err(Error::param("bound", format!("{b} is not > 0")));
            }
        }
        match &self.kind {
            AttackKind::FixedInitial { value: Some(v) } => {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::param("value", "must be finite"));
                }
            }
            AttackKind::FixedInitial { value: None } => {}
            AttackKind::UniformRandom { lo, hi } => InitBox { lo: *lo, hi: *hi }.validate()?,
            AttackKind::Relay { period, magnitude, direction } => {
                if *period == 0 {
                    return Err(Error::param("period", "must be >= 1"));
                }
                if !magnitude.is_finite() {
                    return Err(Error::param("magnitude", "must be finite"));
                }
                if *direction == 0 || *direction > dim {
                    return Err(Error::param("direction", format!("{direction} is outside 1..={dim}")));
                }
            }
            AttackKind::Custom { script, params } => {
                builtin_script(script, params)?;
            }
        }
        Ok(())
    }
}

/// Scripted attacker behavior. `received` is what the node got last round
/// (`None` on round 0); the script returns one payload per entry of
/// `recipients`.
pub trait AttackScript: Send {
    fn emit(
        &mut self,
        round: u64,
        recipients: &[NodeId],
        received: Option<&NeighborStates>,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<StateVector>>;
}

/// Independent uniform vectors per edge: `params = [lo, hi]`.
struct PerEdgeUniform {
    range: InitBox,
}

impl AttackScript for PerEdgeUniform {
    fn emit(
        &mut self,
        _round: u64,
        recipients: &[NodeId],
        _received: Option<&NeighborStates>,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<StateVector>> {
        Ok(recipients.iter().map(|_| self.range.sample(rng, dim)).collect())
    }
}

/// Pushes every neighbor away from where it was: `x_j + params[0]·𝟙`.
struct Push {
    offset: f64,
}

impl AttackScript for Push {
    fn emit(
        &mut self,
        _round: u64,
        recipients: &[NodeId],
        received: Option<&NeighborStates>,
        dim: usize,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<StateVector>> {
        Ok(recipients
            .iter()
            .map(|&j| match received.and_then(|r| r.get(j)) {
                Some(x) => x.iter().map(|v| v + self.offset).collect(),
                None => vec![self.offset; dim],
            })
            .collect())
    }
}

/// Resolves a script name to an implementation.
///
/// * `per_edge_uniform` with `params = [lo, hi]`
/// * `push` with `params = [offset]`
pub fn builtin_script(name: &str, params: &[f64]) -> Result<Box<dyn AttackScript>> {
    match (name, params) {
        ("per_edge_uniform", &[lo, hi]) => {
            let range = InitBox { lo, hi };
            range.validate()?;
            Ok(Box::new(PerEdgeUniform { range }))
        }
        ("push", &[offset]) if offset.is_finite() => Ok(Box::new(Push { offset })),
        _ => Err(Error::param(
            "script",
            format!("unknown script `{name}` with {} parameter(s)", params.len()),
        )),
    }
}

/// A Byzantine participant with its own random stream.
pub struct ByzantineNode {
    id: NodeId,
    neighbors: Vec<NodeId>,
    spec: AttackSpec,
    dim: usize,
    constant: Option<StateVector>,
    script: Option<Box<dyn AttackScript>>,
    rng: ChaCha8Rng,
}

impl fmt::Debug for ByzantineNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ByzantineNode")
            .field("id", &self.id)
            .field("neighbors", &self.neighbors)
            .field("spec", &self.spec)
            .finish_non_exhaustive()
    }
}

impl ByzantineNode {
    pub fn new(
        id: NodeId,
        mut neighbors: Vec<NodeId>,
        spec: AttackSpec,
        dim: usize,
        init: InitBox,
        master_seed: u64,
    ) -> Result<Self> {
        spec.validate(dim)?;
        neighbors.sort_unstable();
        neighbors.dedup();
        let constant = match &spec.kind {
            AttackKind::FixedInitial { value: Some(v) } => Some(v.clone()),
            AttackKind::FixedInitial { value: None } => {
                Some(init.sample(&mut node_rng(master_seed, id, STREAM_INIT), dim))
            }
            _ => None,
        };
        let script = match &spec.kind {
            AttackKind::Custom { script, params } => Some(builtin_script(script, params)?),
            _ => None,
        };
        Ok(ByzantineNode {
            id,
            neighbors,
            spec,
            dim,
            constant,
            script,
            rng: node_rng(master_seed, id, STREAM_ATTACK),
        })
    }

    /// Replaces the behavior with a caller-provided script.
    pub fn with_script(mut self, script: Box<dyn AttackScript>) -> Self {
        self.script = Some(script);
        self
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn neighbors(&self) -> &[NodeId] {
        &self.neighbors
    }

    pub fn spec(&self) -> &AttackSpec {
        &self.spec
    }

    /// The constant this node broadcasts, for fixed attackers.
    pub fn constant(&self) -> Option<&[f64]> {
        self.constant.as_deref()
    }

    /// Payloads for round `t`, one per neighbor in ascending id order.
    /// `received` holds the messages this node got in round `t − 1`.
    pub fn emit(&mut self, t: u64, received: Option<&NeighborStates>) -> Result<Vec<(NodeId, StateVector)>> {
        let payloads: Vec<StateVector> = if let Some(script) = self.script.as_mut() {
            let out = script.emit(t, &self.neighbors, received, self.dim, &mut self.rng)?;
            if out.len() != self.neighbors.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.neighbors.len(),
                    got: out.len(),
                });
            }
            out
        } else {
            match &self.spec.kind {
                AttackKind::FixedInitial { .. } => {
                    let c = self.constant.as_ref().expect("fixed attacker has a constant");
                    vec![c.clone(); self.neighbors.len()]
                }
                AttackKind::UniformRandom { lo, hi } => {
                    let v = InitBox { lo: *lo, hi: *hi }.sample(&mut self.rng, self.dim);
                    vec![v; self.neighbors.len()]
                }
                AttackKind::Relay { period, magnitude, direction } => self
                    .neighbors
                    .iter()
                    .map(|&j| match (t.checked_sub(1), received.and_then(|r| r.get(j))) {
                        (Some(source_round), Some(x)) => {
                            relay_payload(x, source_round, *period, *magnitude, *direction)
                        }
                        _ => vec![0.0; self.dim],
                    })
                    .collect(),
                AttackKind::Custom { .. } => unreachable!("custom attacks always carry a script"),
            }
        };

        for p in &payloads {
            if p.len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: p.len() });
            }
            if let Some(bound) = self.spec.bound {
                let norm = norm2(p);
                if norm.is_nan() || norm > bound {
                    return Err(Error::AttackBoundViolated { node: self.id, norm, bound });
                }
            }
        }
        Ok(self.neighbors.iter().copied().zip(payloads).collect())
    }
}

/// Relay payload built from a neighbor state observed at `source_round`.
pub fn relay_payload(
    observed: &[f64],
    source_round: u64,
    period: u64,
    magnitude: f64,
    direction: usize,
) -> StateVector {
    let mut out = observed.to_vec();
    if source_round.is_multiple_of(period) {
        out[direction - 1] += magnitude;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const BOX: InitBox = InitBox { lo: -100.0, hi: 100.0 };

    fn received(entries: &[(NodeId, &[f64])]) -> NeighborStates {
        NeighborStates::new(entries.iter().map(|(i, v)| (*i, v.to_vec())).collect()).unwrap()
    }

    #[test]
    fn relay_formula() {
        let zero = vec![0.0; 20];
        let hit = relay_payload(&zero, 10, 10, 100.0, 1);
        assert_eq!(hit[0], 100.0);
        assert!(hit[1..].iter().all(|&v| v == 0.0));
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        assert_eq!(relay_payload(&x, 11, 10, 100.0, 1), x);
    }

    #[test]
    fn relay_node_round_trip() {
        let spec = AttackSpec::new(AttackKind::Relay { period: 10, magnitude: 100.0, direction: 1 });
        let mut node = ByzantineNode::new(5, vec![1, 2], spec, 2, BOX, 1).unwrap();
        // Round 0: nothing received yet.
        let out = node.emit(0, None).unwrap();
        assert_eq!(out, vec![(1, vec![0.0, 0.0]), (2, vec![0.0, 0.0])]);
        // Round 1 relays round-0 states, and 0 mod 10 == 0.
        let r0 = received(&[(1, &[1.0, 1.0]), (2, &[-3.0, 2.0])]);
        let out = node.emit(1, Some(&r0)).unwrap();
        assert_eq!(out, vec![(1, vec![101.0, 1.0]), (2, vec![97.0, 2.0])]);
        // Round 2 relays round-1 states unchanged, inconsistently per edge.
        let out = node.emit(2, Some(&r0)).unwrap();
        assert_eq!(out, vec![(1, vec![1.0, 1.0]), (2, vec![-3.0, 2.0])]);
        assert_ne!(out[0].1, out[1].1);
    }

    #[test]
    fn fixed_initial_is_constant() {
        let c = vec![3.0, -4.0];
        let spec = AttackSpec::new(AttackKind::FixedInitial { value: Some(c.clone()) });
        let mut node = ByzantineNode::new(9, vec![0, 4, 2], spec, 2, BOX, 3).unwrap();
        for t in 0..5 {
            for (_, msg) in node.emit(t, None).unwrap() {
                assert_eq!(msg, c);
            }
        }
        // Drawn constant stays inside the box and never changes.
        let spec = AttackSpec::new(AttackKind::FixedInitial { value: None });
        let mut node = ByzantineNode::new(9, vec![0], spec, 4, BOX, 3).unwrap();
        let first = node.emit(0, None).unwrap()[0].1.clone();
        assert!(first.iter().all(|v| (-100.0..=100.0).contains(v)));
        assert_eq!(node.emit(7, None).unwrap()[0].1, first);
    }

    #[test]
    fn uniform_random_broadcasts_one_vector_per_round() {
        let spec = AttackSpec::new(AttackKind::UniformRandom { lo: -1.0, hi: 1.0 });
        let mut node = ByzantineNode::new(2, vec![0, 1, 3], spec.clone(), 5, BOX, 11).unwrap();
        let a = node.emit(0, None).unwrap();
        assert!(a.iter().all(|(_, v)| v == &a[0].1));
        let b = node.emit(1, None).unwrap();
        assert_ne!(a[0].1, b[0].1);
        assert!(a[0].1.iter().all(|v| (-1.0..=1.0).contains(v)));

        let mut again = ByzantineNode::new(2, vec![0, 1, 3], spec, 5, BOX, 11).unwrap();
        assert_eq!(again.emit(0, None).unwrap(), a);
        assert_eq!(again.emit(1, None).unwrap(), b);
    }

    #[test]
    fn bound_violation_is_reported() {
        let spec = AttackSpec::new(AttackKind::FixedInitial { value: Some(vec![3.0, 4.0]) }).with_bound(4.9);
        let mut node = ByzantineNode::new(1, vec![0], spec, 2, BOX, 0).unwrap();
        let err = node.emit(0, None).unwrap_err();
        assert!(err.to_string().starts_with("attack spec violates declared bound"));

        let ok = AttackSpec::new(AttackKind::FixedInitial { value: Some(vec![3.0, 4.0]) }).with_bound(5.0);
        assert!(ByzantineNode::new(1, vec![0], ok, 2, BOX, 0).unwrap().emit(0, None).is_ok());
    }

    #[test]
    fn custom_scripts() {
        let spec = AttackSpec::new(AttackKind::Custom {
            script: "per_edge_uniform".into(),
            params: vec![-2.0, 2.0],
        });
        let mut node = ByzantineNode::new(4, vec![0, 1], spec, 3, BOX, 5).unwrap();
        let out = node.emit(0, None).unwrap();
        assert_ne!(out[0].1, out[1].1);

        let spec = AttackSpec::new(AttackKind::Custom { script: "push".into(), params: vec![1.0] });
        let mut node = ByzantineNode::new(4, vec![0], spec, 1, BOX, 5).unwrap();
        let r = received(&[(0, &[2.0])]);
        assert_eq!(node.emit(3, Some(&r)).unwrap(), vec![(0, vec![3.0])]);

        let bad = AttackSpec::new(AttackKind::Custom { script: "nope".into(), params: vec![] });
        assert!(bad.validate(1).is_err());
    }

    #[test]
    fn spec_validation() {
        let relay = |direction| AttackSpec::new(AttackKind::Relay { period: 10, magnitude: 1.0, direction });
        assert!(relay(0).validate(3).is_err());
        assert!(relay(4).validate(3).is_err());
        assert!(relay(3).validate(3).is_ok());
        assert!(AttackSpec::new(AttackKind::Relay { period: 0, magnitude: 1.0, direction: 1 }).validate(3).is_err());
        assert!(AttackSpec::new(AttackKind::UniformRandom { lo: 1.0, hi: -1.0 }).validate(3).is_err());
        assert!(AttackSpec::new(AttackKind::FixedInitial { value: Some(vec![1.0]) }).validate(3).is_err());
        assert!(AttackSpec::new(AttackKind::FixedInitial { value: None }).with_bound(0.0).validate(3).is_err());
    }
}
