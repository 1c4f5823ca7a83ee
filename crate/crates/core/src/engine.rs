//! Synchronous in-process simulator.
//!
//! Row `t` of the trace describes the honest states `x^{(t)}` entering round
//! `t` together with the weights each honest node computed during that round.
//! The states after the last round are returned separately.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackKind, AttackSpec, ByzantineNode, InitBox};
use crate::error::{Error, Result};
use crate::protocol::{HonestNode, ProtocolConfig, RepcRule};
use crate::reputation::ReputationVector;
use crate::seed::{node_rng, STREAM_INIT};
use crate::state::{dist2, dist_inf, norm2, NeighborStates, StateVector};
use crate::topology::Graph;
use crate::NodeId;

/// Everything that determines a run besides the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub protocol: ProtocolConfig,
    /// Behavior per Byzantine id. Byzantine nodes without an entry broadcast
    /// a constant drawn from the init box.
    pub attacks: BTreeMap<NodeId, AttackSpec>,
    pub init: InitBox,
    pub dim: usize,
    pub rounds: u64,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::param("dimension", "must be >= 1"));
        }
        self.protocol.validate()?;
        self.init.validate()?;
        if graph.honest_ids().is_empty() {
            return Err(Error::InvalidGraph("no honest nodes".into()));
        }
        for (&id, spec) in &self.attacks {
            if id >= graph.n() || !graph.is_byzantine(id) {
                return Err(Error::param(
                    format!("attack.{id}"),
                    "attack assigned to a node that is not Byzantine",
                ));
            }
            spec.validate(self.dim)?;
        }
        for i in graph.honest_ids() {
            if graph.neighbors(i).is_empty() {
                return Err(Error::InvalidGraph(format!("honest node {i} has no neighbors")));
            }
        }
        Ok(())
    }

    pub fn attack_for(&self, id: NodeId) -> AttackSpec {
        self.attacks
            .get(&id)
            .cloned()
            .unwrap_or_else(|| AttackSpec::new(AttackKind::FixedInitial { value: None }))
    }
}

/// Initial state of an honest node, identical across backends.
pub fn initial_state(seed: u64, id: NodeId, init: &InitBox, dim: usize) -> StateVector {
    init.sample(&mut node_rng(seed, id, STREAM_INIT), dim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub t: u64,
    pub rmse: f64,
    pub dia: f64,
    /// Honest diameter in the ∞-norm.
    pub d_inf: f64,
    /// Honest diameter in the 2-norm.
    pub d_2: f64,
    /// `‖E_H‖`, the Frobenius norm of honest deviations from their mean.
    pub disagreement: f64,
    /// Largest honest state 2-norm.
    pub max_norm: f64,
    /// Weights computed by each honest node this round, when the rule has any.
    pub reputations: Vec<(NodeId, ReputationVector)>,
    /// `(i, Σ_{j∈N_i∩B} p_ij)` for every honest node with weights.
    pub byz_mass: Vec<(NodeId, f64)>,
    pub byz_mass_mean: Option<f64>,
    pub byz_mass_max: Option<f64>,
}

pub fn mean(states: &[StateVector]) -> StateVector {
    let dim = states.first().map_or(0, Vec::len);
    let mut m = vec![0.0; dim];
    for x in states {
        for (a, b) in m.iter_mut().zip(x) {
            *a += b;
        }
    }
    let n = states.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

/// Round metrics over honest nodes only.
///
/// `honest` lists honest ids in ascending order; `now` and `initial` are
/// aligned with it.
pub fn compute_metrics(
    t: u64,
    honest: &[NodeId],
    now: &[StateVector],
    initial: &[StateVector],
    reputations: Vec<(NodeId, ReputationVector)>,
    graph: &Graph,
) -> RoundTrace {
    let center = mean(now);
    let sq: f64 = now.iter().map(|x| dist2(x, &center).powi(2)).sum();
    let disagreement = sq.sqrt();
    let rmse = (sq / now.len() as f64).sqrt();
    let dia = dist2(&center, &mean(initial));
    let (mut d_inf, mut d_2) = (0.0f64, 0.0f64);
    for (a, x) in now.iter().enumerate() {
        for y in &now[a + 1..] {
            d_inf = d_inf.max(dist_inf(x, y));
            d_2 = d_2.max(dist2(x, y));
        }
    }
    let max_norm = now.iter().map(|x| norm2(x)).fold(0.0, f64::max);
    debug_assert_eq!(honest.len(), now.len());

    let has_byz = !graph.byzantine_ids().is_empty();
    let byz_mass: Vec<(NodeId, f64)> = if has_byz {
        reputations
            .iter()
            .map(|(i, rep)| {
                let m = rep
                    .iter()
                    .filter(|(j, _)| graph.is_byzantine(*j))
                    .fold(0.0, |acc, (_, p)| acc + p);
                (*i, m)
            })
            .collect()
    } else {
        Vec::new()
    };
    let (byz_mass_mean, byz_mass_max) = if byz_mass.is_empty() {
        (None, None)
    } else {
        let total = byz_mass.iter().fold(0.0, |acc, (_, m)| acc + m);
        let max = byz_mass.iter().map(|(_, m)| *m).fold(0.0, f64::max);
        (Some(total / byz_mass.len() as f64), Some(max))
    };
    RoundTrace {
        t,
        rmse,
        dia,
        d_inf,
        d_2,
        disagreement,
        max_norm,
        reputations,
        byz_mass,
        byz_mass_mean,
        byz_mass_max,
    }
}

/// Raw per-round inputs kept for offline checks.
#[derive(Debug, Clone, Default)]
pub struct Recording {
    pub honest: Vec<NodeId>,
    /// `states[t][k]` is `x^{(t)}` of `honest[k]`.
    pub states: Vec<Vec<StateVector>>,
    /// `inboxes[t][k]` is what `honest[k]` received in round `t`.
    pub inboxes: Vec<Vec<NeighborStates>>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub honest: Vec<NodeId>,
    pub initial: Vec<StateVector>,
    pub trace: Vec<RoundTrace>,
    /// `x^{(T)}` aligned with `honest`.
    pub final_states: Vec<StateVector>,
    pub recording: Option<Recording>,
}

#[derive(Default, Clone, Copy)]
pub struct RunOptions<'a> {
    pub record: bool,
    /// Skip the assumption check on the graph. The run still requires every
    /// honest node to have at least one neighbor.
    pub waive_assumptions: bool,
    pub repc: Option<&'a dyn RepcRule>,
}

/// Executes `scenario.rounds` synchronous rounds.
pub fn run(graph: &Graph, scenario: &Scenario, opts: RunOptions<'_>) -> Result<RunOutput> {
    scenario.validate(graph)?;
    if !opts.waive_assumptions {
        let report = crate::topology::check_assumptions(graph);
        if !report.all_pass() {
            log::warn!(
                "graph violates assumptions: failing nodes {:?}, honest connected = {}",
                report.failing_nodes(),
                report.honest_connected
            );
        }
    }
    let dim = scenario.dim;
    let honest = graph.honest_ids();
    let initial: Vec<StateVector> = honest
        .iter()
        .map(|&i| initial_state(scenario.seed, i, &scenario.init, dim))
        .collect();
    let mut nodes: Vec<HonestNode> = honest
        .iter()
        .zip(&initial)
        .map(|(&i, x)| HonestNode::new(i, x.clone(), graph.neighbors(i).to_vec(), scenario.protocol.clone()))
        .collect::<Result<_>>()?;
    let mut byzantine: Vec<ByzantineNode> = graph
        .byzantine_ids()
        .into_iter()
        .map(|b| {
            ByzantineNode::new(
                b,
                graph.neighbors(b).to_vec(),
                scenario.attack_for(b),
                dim,
                scenario.init,
                scenario.seed,
            )
        })
        .collect::<Result<_>>()?;
    let mut byz_inbox: Vec<Option<NeighborStates>> = vec![None; byzantine.len()];

    let mut trace = Vec::with_capacity(scenario.rounds as usize);
    let mut recording = opts.record.then(|| Recording { honest: honest.clone(), ..Default::default() });
    let mut slot = vec![usize::MAX; graph.n()];
    for (k, &i) in honest.iter().enumerate() {
        slot[i] = k;
    }
    let byz_slot: BTreeMap<NodeId, usize> =
        byzantine.iter().enumerate().map(|(k, b)| (b.id(), k)).collect();

    for t in 0..scenario.rounds {
        let states: Vec<StateVector> = nodes.iter().map(|n| n.state().to_vec()).collect();

        // Per-edge Byzantine payloads for this round.
        let mut byz_out: Vec<BTreeMap<NodeId, StateVector>> = Vec::with_capacity(byzantine.len());
        for (b, inbox) in byzantine.iter_mut().zip(&byz_inbox) {
            byz_out.push(b.emit(t, inbox.as_ref())?.into_iter().collect());
        }
        let message = |from: NodeId, to: NodeId| -> StateVector {
            if graph.is_byzantine(from) {
                byz_out[byz_slot[&from]][&to].clone()
            } else {
                states[slot[from]].clone()
            }
        };
        let inbox_of = |i: NodeId| -> Result<NeighborStates> {
            NeighborStates::new(graph.neighbors(i).iter().map(|&j| (j, message(j, i))).collect())
        };
        let inboxes: Vec<NeighborStates> = honest.iter().map(|&i| inbox_of(i)).collect::<Result<_>>()?;
        let next_byz_inbox: Vec<Option<NeighborStates>> = byzantine
            .iter()
            .map(|b| if b.neighbors().is_empty() { Ok(None) } else { inbox_of(b.id()).map(Some) })
            .collect::<Result<_>>()?;

        let outcomes = step_all(&mut nodes, &inboxes, opts.repc)?;
        let reputations: Vec<(NodeId, ReputationVector)> = honest
            .iter()
            .zip(outcomes)
            .filter_map(|(&i, rep)| rep.map(|r| (i, r)))
            .collect();
        trace.push(compute_metrics(t, &honest, &states, &initial, reputations, graph));
        if let Some(rec) = recording.as_mut() {
            rec.states.push(states);
            rec.inboxes.push(inboxes);
        }
        byz_inbox = next_byz_inbox;
    }

    let final_states = nodes.iter().map(|n| n.state().to_vec()).collect();
    Ok(RunOutput { honest, initial, trace, final_states, recording })
}

#[cfg(feature = "parallel")]
fn step_all(
    nodes: &mut [HonestNode],
    inboxes: &[NeighborStates],
    repc: Option<&dyn RepcRule>,
) -> Result<Vec<Option<ReputationVector>>> {
    use rayon::prelude::*;
    nodes
        .par_iter_mut()
        .zip(inboxes)
        .map(|(n, inbox)| n.step(inbox, repc).map(|o| o.reputation))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn step_all(
    nodes: &mut [HonestNode],
    inboxes: &[NeighborStates],
    repc: Option<&dyn RepcRule>,
) -> Result<Vec<Option<ReputationVector>>> {
    nodes
        .iter_mut()
        .zip(inboxes)
        .map(|(n, inbox)| n.step(inbox, repc).map(|o| o.reputation))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionFit {
    pub rho_hat: f64,
    pub r_squared: f64,
    /// Rounds `[start, end)` that entered the regression.
    pub start: usize,
    pub end: usize,
}

/// Relative RMSE level below which rounds are left out of the fit, since
/// rounding noise dominates there.
pub const DEFAULT_FIT_FLOOR: f64 = 1e-12;

/// Least-squares fit of `log RMSE` against `t` from `burn_in` on, with the
/// default floor.
pub fn fit_contraction(rmse: &[f64], burn_in: usize) -> Result<ContractionFit> {
    fit_contraction_with_floor(rmse, burn_in, DEFAULT_FIT_FLOOR)
}

/// Like [`fit_contraction`], but the fitted range also stops at the first
/// round where `RMSE ≤ floor · RMSE_0` (or exactly 0).
pub fn fit_contraction_with_floor(rmse: &[f64], burn_in: usize, floor: f64) -> Result<ContractionFit> {
    let needed = burn_in + 11;
    if rmse.len() < needed {
        return Err(Error::InsufficientTrace { needed, found: rmse.len() });
    }
    let cutoff = floor * rmse[0];
    let end = rmse
        .iter()
        .enumerate()
        .skip(burn_in)
        .find(|(_, &r)| r <= 0.0 || r <= cutoff)
        .map_or(rmse.len(), |(t, _)| t);
    let points = end.saturating_sub(burn_in);
    if points < 2 {
        return Err(Error::InsufficientTrace { needed: burn_in + 2, found: end });
    }
    let xs: Vec<f64> = (burn_in..end).map(|t| t as f64).collect();
    let ys: Vec<f64> = rmse[burn_in..end].iter().map(|r| r.ln()).collect();
    let n = points as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(ContractionFit { rho_hat: slope.exp(), r_squared, start: burn_in, end })
}
