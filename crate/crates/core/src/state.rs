use crate::error::{Error, Result};
use crate::NodeId;

/// A node's state in `ℝ^d`.
pub type StateVector = Vec<f64>;

/// The states a node has received this round, one per neighbor, ordered by
/// ascending neighbor id.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborStates {
    ids: Vec<NodeId>,
    states: Vec<StateVector>,
}

impl NeighborStates {
    /// Builds a neighbor set, sorting by id and checking that ids are
    /// distinct and every state shares one finite dimension.
    pub fn new(mut entries: Vec<(NodeId, StateVector)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::NoNeighbors);
        }
        entries.sort_by_key(|(id, _)| *id);
        let dim = entries[0].1.len();
        for window in entries.windows(2) {
            if window[0].0 == window[1].0 {
                return Err(Error::param(
                    "neighbors",
                    format!("duplicate neighbor id {}", window[0].0),
                ));
            }
        }
        for (id, state) in &entries {
            if state.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: state.len(),
                });
            }
            if state.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { node: *id });
            }
        }
        let (ids, states) = entries.into_iter().unzip();
        Ok(NeighborStates { ids, states })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.ids
            .binary_search(&id)
            .ok()
            .map(|idx| self.states[idx].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &[f64])> {
        self.ids
            .iter()
            .copied()
            .zip(self.states.iter().map(Vec::as_slice))
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorts_and_validates() {
        let ns = NeighborStates::new(vec![(3, vec![1.0]), (1, vec![2.0])]).unwrap();
        assert_eq!(ns.ids(), &[1, 3]);
        assert_eq!(ns.get(3), Some(&[1.0][..]));
        assert_eq!(ns.get(2), None);
        assert!(matches!(
            NeighborStates::new(vec![]),
            Err(Error::NoNeighbors)
        ));
        assert!(matches!(
            NeighborStates::new(vec![(0, vec![1.0]), (1, vec![1.0, 2.0])]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(NeighborStates::new(vec![(0, vec![1.0]), (0, vec![1.0])]).is_err());
        assert!(NeighborStates::new(vec![(0, vec![f64::NAN])]).is_err());
    }
}
