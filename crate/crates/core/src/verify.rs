//! Executable bound checks over recorded runs.
//!
//! Centers are recomputed here from the raw inboxes with separate median and
//! geometric-median routines, so a bug in the reputation pipeline cannot hide
//! itself behind shared code.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::RunOutput;
use crate::error::{Error, Result};
use crate::protocol::{HonestNode, ProtocolConfig, Rule};
use crate::reputation::{
    instantaneous_loss, Accumulation, LossKind, LossNorm, Normalizer, ReputationConfig,
};
use crate::simplex::sparsemax;
use crate::state::{NeighborStates, StateVector};
use crate::topology::Graph;
use crate::NodeId;

/// Absolute slack granted to every inequality.
pub const TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub name: String,
    pub rounds: usize,
    /// Number of inequality instances evaluated.
    pub evaluated: usize,
    /// Instances skipped because a hypothesis did not hold locally.
    pub skipped: usize,
    /// `min(bound − observed)`; `+∞` when nothing was evaluated.
    pub worst_slack: f64,
    pub pass: bool,
    /// `(node, round)` attaining `worst_slack`.
    pub witness: Option<(NodeId, u64)>,
    pub note: Option<String>,
}

impl BoundReport {
    fn new(name: &str) -> Self {
        BoundReport {
            name: name.to_string(),
            rounds: 0,
            evaluated: 0,
            skipped: 0,
            worst_slack: f64::INFINITY,
            pass: true,
            witness: None,
            note: None,
        }
    }

    fn observe(&mut self, bound: f64, observed: f64, node: NodeId, round: u64) {
        self.evaluated += 1;
        let slack = bound - observed;
        if slack < self.worst_slack || slack.is_nan() {
            self.worst_slack = slack;
            self.witness = Some((node, round));
        }
    }

    fn finish(mut self, tolerance: f64) -> Self {
        self.pass = self.worst_slack >= -tolerance;
        self
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let witness = self
            .witness
            .map_or_else(|| "-".to_string(), |(i, t)| format!("node {i} @ t={t}"));
        write!(
            f,
            "{:<22} {:<4} rounds={:<6} checked={:<8} skipped={:<6} worst_slack={:<12.4e} worst={}",
            self.name,
            if self.pass { "ok" } else { "FAIL" },
            self.rounds,
            self.evaluated,
            self.skipped,
            self.worst_slack,
            witness
        )?;
        if let Some(note) = &self.note {
            write!(f, " ({note})")?;
        }
        Ok(())
    }
}

pub fn render_table(reports: &[BoundReport]) -> String {
    reports.iter().map(|r| format!("{r}\n")).collect()
}

fn oracle_median(points: &[&[f64]]) -> StateVector {
    let dim = points[0].len();
    let m = points.len();
    (0..dim)
        .map(|k| {
            let mut col: Vec<f64> = points.iter().map(|p| p[k]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if m % 2 == 1 {
                col[m / 2]
            } else {
                0.5 * (col[m / 2 - 1] + col[m / 2])
            }
        })
        .collect()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn gm_objective(points: &[&[f64]], y: &[f64]) -> f64 {
    points.iter().map(|p| l2(p, y)).sum()
}

/// Weiszfeld iteration with Ostresh's step off a data vertex: at a vertex
/// the resultant pull of the other points decides between stopping there
/// and a damped move along the pull.
fn oracle_geometric_median(points: &[&[f64]]) -> StateVector {
    let dim = points[0].len();
    let scale = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1.0);
    let tol = 1e-15 * scale;
    let mut y = oracle_median(points);
    for _ in 0..5000 {
        // Multiplicity of data points sitting on the current iterate.
        let mut on_vertex = 0usize;
        let mut pull = vec![0.0; dim];
        let mut inv_sum = 0.0;
        let mut weighted = vec![0.0; dim];
        for p in points {
            let d = l2(p, &y);
            if d <= tol {
                on_vertex += 1;
                continue;
            }
            inv_sum += 1.0 / d;
            for c in 0..dim {
                pull[c] += (p[c] - y[c]) / d;
                weighted[c] += p[c] / d;
            }
        }
        if inv_sum == 0.0 {
            break;
        }
        let next: StateVector = if on_vertex > 0 {
            let r = pull.iter().map(|v| v * v).sum::<f64>().sqrt();
            let m = on_vertex as f64;
            if r <= m {
                break;
            }
            let step = (r - m) / inv_sum;
            y.iter().zip(&pull).map(|(yc, pc)| yc + step * pc / r).collect()
        } else {
            weighted.iter().map(|w| w / inv_sum).collect()
        };
        let moved = l2(&next, &y);
        y = next;
        if moved <= tol {
            break;
        }
    }
    // Guard against ending on a worse point than an input vertex.
    let best = points
        .iter()
        .min_by(|a, b| gm_objective(points, a).total_cmp(&gm_objective(points, b)))
        .unwrap();
    if gm_objective(points, best) < gm_objective(points, &y) {
        best.to_vec()
    } else {
        y
    }
}

fn recording(out: &RunOutput) -> Result<&crate::engine::Recording> {
    out.recording
        .as_ref()
        .ok_or_else(|| Error::NotApplicable("run was not recorded".into()))
}

fn diameter(states: &[StateVector], dist: fn(&[f64], &[f64]) -> f64) -> f64 {
    let mut d = 0.0f64;
    for (a, x) in states.iter().enumerate() {
        for y in &states[a + 1..] {
            d = d.max(dist(x, y));
        }
    }
    d
}

fn inbox_points(inbox: &NeighborStates) -> Vec<&[f64]> {
    inbox.states().iter().map(Vec::as_slice).collect()
}

fn majority_ok(graph: &Graph, i: NodeId) -> bool {
    graph.honest_degree(i) > graph.byzantine_degree(i)
}

/// Honest losses against the coordinate median never exceed `D_H` in the
/// ∞-norm. Nodes without an honest majority are skipped.
pub fn check_lemma1(graph: &Graph, out: &RunOutput) -> Result<BoundReport> {
    let rec = recording(out)?;
    let mut report = BoundReport::new("lemma1_cm_honest_loss");
    report.rounds = rec.states.len();
    for (t, (states, inboxes)) in rec.states.iter().zip(&rec.inboxes).enumerate() {
        let d_h = diameter(states, linf);
        for (&i, inbox) in rec.honest.iter().zip(inboxes) {
            if !majority_ok(graph, i) {
                report.skipped += 1;
                continue;
            }
            let cm = oracle_median(&inbox_points(inbox));
            for (j, x) in inbox.iter() {
                if !graph.is_byzantine(j) {
                    report.observe(d_h, linf(x, &cm), i, t as u64);
                }
            }
        }
    }
    Ok(report.finish(TOLERANCE))
}

fn zero_forgetting(acc: &Accumulation) -> bool {
    matches!(*acc, Accumulation::Decay { lambda } if lambda == 0.0)
        || matches!(*acc, Accumulation::Horizon { length: 1 })
}

fn require_cm_zero_forgetting(cfg: &ReputationConfig) -> Result<f64> {
    if !zero_forgetting(&cfg.accumulation) {
        return Err(Error::LemmaRequiresZeroForgetting);
    }
    if cfg.loss != LossKind::CoordinateMedian || cfg.norm() != LossNorm::Inf {
        return Err(Error::NotApplicable("needs the coordinate-median ∞-norm loss".into()));
    }
    Ok(cfg.normalizer.eta())
}

/// Any neighbor with positive sparsemax weight has loss below
/// `D_H + 1/(η·|N_i∩H|)`.
pub fn check_lemma2(graph: &Graph, out: &RunOutput, cfg: &ReputationConfig) -> Result<BoundReport> {
    let eta = require_cm_zero_forgetting(cfg)?;
    if !matches!(cfg.normalizer, Normalizer::Sparsemax { .. }) {
        return Err(Error::NotApplicable("needs the sparsemax normalizer".into()));
    }
    let rec = recording(out)?;
    let mut report = BoundReport::new("lemma2_support");
    report.rounds = rec.states.len();
    for (t, (states, inboxes)) in rec.states.iter().zip(&rec.inboxes).enumerate() {
        let d_h = diameter(states, linf);
        let reps: BTreeMap<NodeId, _> = out.trace[t].reputations.iter().map(|(i, r)| (*i, r)).collect();
        for (&i, inbox) in rec.honest.iter().zip(inboxes) {
            if !majority_ok(graph, i) {
                report.skipped += 1;
                continue;
            }
            let rep = reps
                .get(&i)
                .ok_or_else(|| Error::NotApplicable(format!("no weights for node {i} at t={t}")))?;
            let cm = oracle_median(&inbox_points(inbox));
            let bound = d_h + 1.0 / (eta * graph.honest_degree(i) as f64);
            for (j, x) in inbox.iter() {
                if rep.weight_of(j).unwrap_or(0.0) > 0.0 {
                    report.observe(bound, linf(x, &cm), i, t as u64);
                }
            }
        }
    }
    Ok(report.finish(TOLERANCE))
}

/// Softmax variant: Byzantine weight times loss is at most
/// `e^{η D_H}/(η e)`.
pub fn check_softmax_influence(
    graph: &Graph,
    out: &RunOutput,
    cfg: &ReputationConfig,
) -> Result<BoundReport> {
    let eta = require_cm_zero_forgetting(cfg)?;
    if !matches!(cfg.normalizer, Normalizer::Softmax { .. }) {
        return Err(Error::NotApplicable("needs the softmax normalizer".into()));
    }
    let rec = recording(out)?;
    let mut report = BoundReport::new("lemma7_softmax_influence");
    report.rounds = rec.states.len();
    for (t, (states, inboxes)) in rec.states.iter().zip(&rec.inboxes).enumerate() {
        let d_h = diameter(states, linf);
        let bound = (eta * d_h).exp() / (eta * std::f64::consts::E);
        let reps: BTreeMap<NodeId, _> = out.trace[t].reputations.iter().map(|(i, r)| (*i, r)).collect();
        for (&i, inbox) in rec.honest.iter().zip(inboxes) {
            if !majority_ok(graph, i) {
                report.skipped += 1;
                continue;
            }
            let rep = reps
                .get(&i)
                .ok_or_else(|| Error::NotApplicable(format!("no weights for node {i} at t={t}")))?;
            let cm = oracle_median(&inbox_points(inbox));
            let lhs: f64 = inbox
                .iter()
                .filter(|(j, _)| graph.is_byzantine(*j))
                .map(|(j, x)| rep.weight_of(j).unwrap_or(0.0) * linf(x, &cm))
                .sum();
            report.observe(bound, lhs, i, t as u64);
        }
    }
    Ok(report.finish(TOLERANCE))
}

/// Honest losses against the geometric median of the full inbox stay within
/// `|N_i|/(2|N_i∩H|−|N_i|)·D_{H,2}` wherever `2|N_i∩H| > |N_i|`.
pub fn check_lemma6(graph: &Graph, out: &RunOutput) -> Result<BoundReport> {
    let rec = recording(out)?;
    let mut report = BoundReport::new("lemma6_gm_honest_loss");
    report.rounds = rec.states.len();
    for (t, (states, inboxes)) in rec.states.iter().zip(&rec.inboxes).enumerate() {
        let d_h2 = diameter(states, l2);
        for (&i, inbox) in rec.honest.iter().zip(inboxes) {
            let n_i = graph.neighbors(i).len();
            let h_i = graph.honest_degree(i);
            if 2 * h_i <= n_i {
                report.skipped += 1;
                continue;
            }
            let gm = oracle_geometric_median(&inbox_points(inbox));
            let bound = n_i as f64 / (2 * h_i - n_i) as f64 * d_h2;
            for (j, x) in inbox.iter() {
                if !graph.is_byzantine(j) {
                    report.observe(bound, l2(x, &gm), i, t as u64);
                }
            }
        }
    }
    if report.skipped > 0 {
        report.note = Some(format!("{} node-rounds fail 2|N∩H| > |N|", report.skipped));
    }
    Ok(report.finish(TOLERANCE))
}

/// Outcome of the fixed-point check at the separation boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryOutcome {
    ExactZero,
    Tiny,
}

/// At an honest consensus `honest_value` with every Byzantine message at
/// ∞-distance at least `1/(η·δ_min)`, one step must put weight exactly 0 on
/// Byzantine neighbors and exactly `1/|N_i∩H|` on honest ones, and leave the
/// state unchanged bit for bit.
pub fn check_prop2(
    graph: &Graph,
    eta: f64,
    honest_value: &[f64],
    byzantine_values: &BTreeMap<NodeId, StateVector>,
) -> Result<BoundReport> {
    let mut report = BoundReport::new("prop2_fixed_point");
    report.rounds = 1;
    let stats = graph.stats();
    let threshold = stats.separation_threshold(eta);
    let mut min_sep = f64::INFINITY;
    for b in graph.byzantine_ids() {
        let v = byzantine_values
            .get(&b)
            .ok_or_else(|| Error::param(format!("byzantine.{b}"), "missing value"))?;
        min_sep = min_sep.min(linf(v, honest_value));
    }
    if min_sep < threshold {
        report.note = Some(format!(
            "hypothesis not satisfied: separation {min_sep:e} < threshold {threshold:e}"
        ));
        return Ok(report);
    }
    let at_boundary = min_sep <= threshold * (1.0 + 4.0 * f64::EPSILON);
    let protocol = ProtocolConfig::new(0.5, Rule::Arepc(ReputationConfig::arepc(eta, 0.0)))?;
    let mut tiny = false;
    for i in graph.honest_ids() {
        let inbox = NeighborStates::new(
            graph
                .neighbors(i)
                .iter()
                .map(|&j| {
                    let x = if graph.is_byzantine(j) {
                        byzantine_values[&j].clone()
                    } else {
                        honest_value.to_vec()
                    };
                    (j, x)
                })
                .collect(),
        )?;
        let mut node = HonestNode::new(i, honest_value.to_vec(), graph.neighbors(i).to_vec(), protocol.clone())?;
        let outcome = node.step(&inbox, None)?;
        let rep = outcome.reputation.expect("arepc always yields weights");
        let expected_honest = 1.0 / graph.honest_degree(i) as f64;
        let mut worst = 0.0f64;
        let mut node_tiny = false;
        for (j, p) in rep.iter() {
            if graph.is_byzantine(j) {
                if p != 0.0 && at_boundary && p < 1e-15 {
                    node_tiny = true;
                } else {
                    worst = worst.max(p);
                }
            } else {
                worst = worst.max((p - expected_honest).abs());
            }
        }
        let moved = outcome.state.iter().zip(honest_value).any(|(a, b)| a.to_bits() != b.to_bits());
        if moved && !node_tiny {
            worst = f64::INFINITY;
        }
        tiny |= node_tiny;
        report.observe(0.0, worst, i, 0);
    }
    if at_boundary {
        let outcome = if tiny { BoundaryOutcome::Tiny } else { BoundaryOutcome::ExactZero };
        report.note = Some(format!("separation at the boundary: {outcome:?}"));
    }
    // Exact weights are required; the boundary case may leave sub-1e-15
    // Byzantine weight, which shifts honest weights by the same order.
    Ok(report.finish(if tiny { 1e-15 } else { 0.0 }))
}

/// Samples `n_pairs` state pairs over all nodes and checks
/// `‖L_i(X)−L_i(Y)‖ ≤ 2√|N_i|·‖X−Y‖` for every honest `i` and
/// `‖P(X)−P(Y)‖_F ≤ 2η√(Σ|N_i|)·‖X−Y‖`, using the λ=0 coordinate-median
/// loss and sparsemax weights under test.
pub fn check_lipschitz(
    graph: &Graph,
    eta: f64,
    dim: usize,
    n_pairs: usize,
    seed: u64,
) -> Result<(BoundReport, BoundReport)> {
    let cfg = ReputationConfig::arepc(eta, 0.0);
    let mut loss_report = BoundReport::new("lemma4_loss_lipschitz");
    let mut weight_report = BoundReport::new("lemma5_weight_lipschitz");
    loss_report.rounds = n_pairs;
    weight_report.rounds = n_pairs;
    let honest = graph.honest_ids();
    let total_degree: usize = honest.iter().map(|&i| graph.neighbors(i).len()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.n();

    for pair in 0..n_pairs {
        let x: Vec<StateVector> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-100.0..100.0)).collect())
            .collect();
        let y: Vec<StateVector> = match pair % 3 {
            // Small perturbation where the median tends to keep its index.
            0 => perturb(&x, &mut rng, 1e-3),
            1 => perturb(&x, &mut rng, 50.0),
            // One coordinate of one node moved.
            _ => {
                let mut y = x.clone();
                let node = rng.random_range(0..n);
                let c = rng.random_range(0..dim);
                y[node][c] += rng.random_range(-200.0..200.0);
                y
            }
        };
        let dist: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| l2(a, b).powi(2))
            .sum::<f64>()
            .sqrt();
        let mut frob_sq = 0.0;
        for &i in &honest {
            let nbrs = graph.neighbors(i);
            let inbox = |s: &[StateVector]| {
                NeighborStates::new(nbrs.iter().map(|&j| (j, s[j].clone())).collect())
            };
            let (ix, iy) = (inbox(&x)?, inbox(&y)?);
            let lx = instantaneous_loss(&cfg, &x[i], &ix)?;
            let ly = instantaneous_loss(&cfg, &y[i], &iy)?;
            let dl = l2(&lx, &ly);
            loss_report.observe(2.0 * (nbrs.len() as f64).sqrt() * dist, dl, i, pair as u64);
            let px = sparsemax(&lx.iter().map(|l| -eta * l).collect::<Vec<_>>())?;
            let py = sparsemax(&ly.iter().map(|l| -eta * l).collect::<Vec<_>>())?;
            frob_sq += l2(&px, &py).powi(2);
        }
        let bound = 2.0 * eta * (total_degree as f64).sqrt() * dist;
        weight_report.observe(bound, frob_sq.sqrt(), usize::MAX, pair as u64);
    }
    Ok((loss_report.finish(TOLERANCE), weight_report.finish(TOLERANCE)))
}

fn perturb(x: &[StateVector], rng: &mut ChaCha8Rng, scale: f64) -> Vec<StateVector> {
    x.iter()
        .map(|v| v.iter().map(|a| a + rng.random_range(-scale..scale)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{AttackKind, AttackSpec, InitBox};
    use crate::engine::{run, RunOptions, Scenario};
    use crate::topology::{generate, GeneratorKind};

    fn pts(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn oracle_geometric_median_cases() {
        // Equilateral triangle: the Fermat point is the centroid.
        let h = 3f64.sqrt() / 2.0;
        let tri = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, h]];
        let gm = oracle_geometric_median(&pts(&tri));
        assert!(l2(&gm, &[0.5, h / 3.0]) < 1e-9);
        // Triangle with a 120°+ angle: median sits on that vertex.
        let obtuse = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![5.0, 0.1]];
        let gm = oracle_geometric_median(&pts(&obtuse));
        assert!(l2(&gm, &[5.0, 0.1]) < 1e-12);
        // Repeated majority point.
        let rep = vec![vec![2.0], vec![2.0], vec![2.0], vec![-7.0], vec![40.0]];
        assert_eq!(oracle_geometric_median(&pts(&rep)), vec![2.0]);
    }

    #[test]
    fn cm_loss_hand_example() {
        // Honest 0, 1, 2 on a triangle; D_H = 2.
        let g = Graph::new(3, &[(0, 1), (1, 2), (0, 2)], &[]).unwrap();
        let sc = Scenario {
            protocol: ProtocolConfig::new(0.5, Rule::Arepc(ReputationConfig::arepc(0.1, 0.0))).unwrap(),
            attacks: BTreeMap::new(),
            init: InitBox { lo: 0.0, hi: 2.0 },
            dim: 1,
            rounds: 1,
            seed: 0,
        };
        let mut out = run(&g, &sc, RunOptions { record: true, ..Default::default() }).unwrap();
        let rec = out.recording.as_mut().unwrap();
        rec.states[0] = vec![vec![0.0], vec![1.0], vec![2.0]];
        rec.inboxes[0] = vec![
            NeighborStates::new(vec![(1, vec![1.0]), (2, vec![2.0])]).unwrap(),
            NeighborStates::new(vec![(0, vec![0.0]), (2, vec![2.0])]).unwrap(),
            NeighborStates::new(vec![(0, vec![0.0]), (1, vec![1.0])]).unwrap(),
        ];
        let r = check_lemma1(&g, &out).unwrap();
        assert!(r.pass);
        assert_eq!(r.evaluated, 6);
        // Node 1 hears {0, 2}: median 1, losses 1 against D_H = 2.
        assert_eq!(r.worst_slack, 1.0);
    }

    fn fixture_run(cfg: ReputationConfig, rounds: u64) -> (Graph, RunOutput) {
        let g = generate(&GeneratorKind::RandomRegular { k: 6 }, 20, 4, 21).unwrap();
        let mut attacks = BTreeMap::new();
        attacks.insert(20, AttackSpec::new(AttackKind::UniformRandom { lo: -150.0, hi: 150.0 }));
        attacks.insert(21, AttackSpec::new(AttackKind::Relay { period: 5, magnitude: 80.0, direction: 1 }));
        let sc = Scenario {
            protocol: ProtocolConfig::new(0.5, Rule::Arepc(cfg)).unwrap(),
            attacks,
            init: InitBox { lo: -100.0, hi: 100.0 },
            dim: 4,
            rounds,
            seed: 8,
        };
        let out = run(&g, &sc, RunOptions { record: true, ..Default::default() }).unwrap();
        (g, out)
    }

    #[test]
    fn bounds_hold_on_random_fixture() {
        let cfg = ReputationConfig::arepc(0.005, 0.0);
        let (g, out) = fixture_run(cfg, 150);
        assert!(check_lemma1(&g, &out).unwrap().pass);
        let r2 = check_lemma2(&g, &out, &cfg).unwrap();
        assert!(r2.pass, "{r2}");
        assert!(r2.evaluated > 0);
        assert!(matches!(check_softmax_influence(&g, &out, &cfg), Err(Error::NotApplicable(_))));

        let soft = ReputationConfig { normalizer: Normalizer::Softmax { eta: 0.005 }, ..cfg };
        let (g, out) = fixture_run(soft, 150);
        assert!(check_softmax_influence(&g, &out, &soft).unwrap().pass);

        let gm = ReputationConfig { loss: LossKind::GeometricMedian, ..cfg };
        let (g, out) = fixture_run(gm, 60);
        assert!(check_lemma6(&g, &out).unwrap().pass);
    }

    #[test]
    fn support_check_requires_zero_forgetting() {
        let cfg = ReputationConfig::arepc(0.005, 0.5);
        let (g, out) = fixture_run(cfg, 3);
        assert!(matches!(check_lemma2(&g, &out, &cfg), Err(Error::LemmaRequiresZeroForgetting)));
    }

    #[test]
    fn support_check_outlier_example() {
        // Node 0 hears 0, 0.1 and a Byzantine 1000; the outlier gets no weight,
        // both honest neighbors do, and their losses respect the bound.
        let g = Graph::new(4, &[(0, 1), (0, 2), (0, 3), (1, 2)], &[3]).unwrap();
        let inbox = NeighborStates::new(vec![(1, vec![0.0]), (2, vec![0.1]), (3, vec![1000.0])]).unwrap();
        let cm = oracle_median(&inbox_points(&inbox));
        assert_eq!(cm, vec![0.1]);
        let eta = 0.005;
        let losses: Vec<f64> = inbox.states().iter().map(|x| linf(x, &cm)).collect();
        let p = sparsemax(&losses.iter().map(|l| -eta * l).collect::<Vec<_>>()).unwrap();
        let bound = 0.1 + 1.0 / (eta * g.honest_degree(0) as f64);
        assert_eq!(p[2], 0.0);
        for k in 0..2 {
            assert!(p[k] > 0.0 && losses[k] < bound);
        }
    }

    #[test]
    fn fixed_point_cases() {
        let g = generate(&GeneratorKind::RandomRegular { k: 6 }, 20, 4, 5).unwrap();
        let eta = 0.005;
        let threshold = g.stats().separation_threshold(eta);
        let far: BTreeMap<_, _> = g.byzantine_ids().into_iter().map(|b| (b, vec![10.0 * threshold])).collect();
        let r = check_prop2(&g, eta, &[0.0], &far).unwrap();
        assert!(r.pass && r.evaluated == 20, "{r}");
        assert_eq!(r.worst_slack, 0.0);

        let boundary: BTreeMap<_, _> = g.byzantine_ids().into_iter().map(|b| (b, vec![threshold])).collect();
        let r = check_prop2(&g, eta, &[0.0], &boundary).unwrap();
        assert!(r.pass, "{r}");
        assert!(r.note.unwrap().contains("boundary"));

        let near: BTreeMap<_, _> = g.byzantine_ids().into_iter().map(|b| (b, vec![0.5 * threshold])).collect();
        let r = check_prop2(&g, eta, &[0.0], &near).unwrap();
        assert_eq!(r.evaluated, 0);
        assert!(r.note.unwrap().contains("hypothesis not satisfied"));

        let honest_only = generate(&GeneratorKind::RandomRegular { k: 4 }, 10, 0, 5).unwrap();
        let r = check_prop2(&honest_only, eta, &[3.0, -1.0], &BTreeMap::new()).unwrap();
        assert!(r.pass && r.evaluated == 10);
    }

    #[test]
    fn lipschitz_pairs() {
        let g = generate(&GeneratorKind::RandomRegular { k: 6 }, 20, 4, 5).unwrap();
        let (l, p) = check_lipschitz(&g, 0.005, 4, 200, 1).unwrap();
        assert!(l.pass && p.pass, "{l}\n{p}");
        assert_eq!(l.evaluated, 200 * 20);
        assert_eq!(p.evaluated, 200);
    }
}
