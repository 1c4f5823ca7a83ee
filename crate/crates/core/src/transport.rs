//! One OS process per node, talking over Unix domain sockets.
//!
//! Wire format per message, all integers little-endian:
//!
//! | bytes | field                |
//! |-------|----------------------|
//! | 4     | magic `ARPC`         |
//! | 1     | version (1)          |
//! | 8     | round                |
//! | 4     | sender               |
//! | 4     | receiver             |
//! | 4     | dim                  |
//! | 8·dim | payload (`f64` LE)   |
//!
//! During the handshake the higher id of every edge connects to the lower
//! one and sends a hello frame (`round = u64::MAX`, `dim = 0`). Rounds then
//! run in lockstep: write to every neighbor, then read exactly one frame
//! from every neighbor.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use crate::adversary::ByzantineNode;
use crate::config::ExperimentConfig;
use crate::engine::{compute_metrics, initial_state, RunOutput};
use crate::error::{Error, Result};
use crate::protocol::HonestNode;
use crate::reputation::ReputationVector;
use crate::simplex::SimplexPoint;
use crate::state::{NeighborStates, StateVector};
use crate::topology::{self, Graph};
use crate::NodeId;

pub const MAGIC: [u8; 4] = *b"ARPC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 25;
pub const HELLO_ROUND: u64 = u64::MAX;

const CONNECT_TIMEOUT: Duration = Duration::from_secs(20);
const READ_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq)]
pub struct WireFrame {
    pub round: u64,
    pub sender: u32,
    pub receiver: u32,
    pub payload: Vec<f64>,
}

impl WireFrame {
    pub fn hello(sender: NodeId, receiver: NodeId) -> Self {
        WireFrame { round: HELLO_ROUND, sender: sender as u32, receiver: receiver as u32, payload: Vec::new() }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 8 * self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        buf.extend_from_slice(&MAGIC);
        buf.push(VERSION);
        buf.extend_from_slice(&self.round.to_le_bytes());
        buf.extend_from_slice(&self.sender.to_le_bytes());
        buf.extend_from_slice(&self.receiver.to_le_bytes());
        buf.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        for v in &self.payload {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let frame = read_frame(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Protocol(format!("{} trailing bytes after frame", cursor.len())));
        }
        Ok(frame)
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn read_frame(r: &mut impl Read) -> Result<WireFrame> {
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head)?;
    if head[..4] != MAGIC {
        return Err(Error::Protocol(format!("bad magic {:?}", &head[..4])));
    }
    if head[4] != VERSION {
        return Err(Error::Protocol(format!("unsupported version {}", head[4])));
    }
    let round = u64::from_le_bytes(head[5..13].try_into().unwrap());
    let sender = u32_at(&head, 13);
    let receiver = u32_at(&head, 17);
    let dim = u32_at(&head, 21) as usize;
    let mut body = vec![0u8; 8 * dim];
    r.read_exact(&mut body)?;
    let payload = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(WireFrame { round, sender, receiver, payload })
}

pub fn write_frame(w: &mut impl Write, frame: &WireFrame) -> Result<()> {
    w.write_all(&frame.encode())?;
    Ok(())
}

/// Everything a node process needs to find its session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLaunch {
    pub session: PathBuf,
    pub id: NodeId,
    pub rendezvous: PathBuf,
    pub fragment: PathBuf,
}

impl NodeLaunch {
    /// Arguments of the hidden `node` subcommand.
    pub fn to_args(&self) -> Vec<OsString> {
        vec![
            "node".into(),
            "--session".into(),
            self.session.clone().into(),
            "--id".into(),
            self.id.to_string().into(),
            "--rendezvous".into(),
            self.rendezvous.clone().into(),
            "--fragment".into(),
            self.fragment.clone().into(),
        ]
    }
}

fn parse_rendezvous(path: &Path) -> Result<BTreeMap<NodeId, PathBuf>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let Some((id, addr)) = line.trim().split_once(' ') else {
            continue;
        };
        let id: NodeId = id
            .parse()
            .map_err(|_| Error::Protocol(format!("rendezvous line {}: bad id `{id}`", k + 1)))?;
        out.insert(id, PathBuf::from(addr.trim()));
    }
    Ok(out)
}

fn connect_with_retry(addr: &Path) -> Result<UnixStream> {
    let start = Instant::now();
    loop {
        match UnixStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if start.elapsed() < CONNECT_TIMEOUT => {
                log::trace!("connect {}: {e}, retrying", addr.display());
                std::thread::sleep(Duration::from_millis(2));
            }
            Err(e) => return Err(Error::io(addr, e)),
        }
    }
}

/// Opens one stream per neighbor.
fn handshake(id: NodeId, neighbors: &[NodeId], listener: &UnixListener, addrs: &BTreeMap<NodeId, PathBuf>) -> Result<BTreeMap<NodeId, UnixStream>> {
    let mut streams = BTreeMap::new();
    for &j in neighbors.iter().filter(|&&j| j < id) {
        let addr = addrs
            .get(&j)
            .ok_or_else(|| Error::Protocol(format!("no address for node {j}")))?;
        let mut s = connect_with_retry(addr)?;
        write_frame(&mut s, &WireFrame::hello(id, j))?;
        streams.insert(j, s);
    }
    let higher = neighbors.iter().filter(|&&j| j > id).count();
    for _ in 0..higher {
        let (mut s, _) = listener.accept()?;
        s.set_read_timeout(Some(READ_TIMEOUT))?;
        let hello = read_frame(&mut s)?;
        let from = hello.sender as NodeId;
        if hello.round != HELLO_ROUND || hello.receiver as NodeId != id || !hello.payload.is_empty() {
            return Err(Error::Protocol(format!("node {id}: malformed hello from {from}")));
        }
        if neighbors.binary_search(&from).is_err() || from < id || streams.contains_key(&from) {
            return Err(Error::Protocol(format!("node {id}: unexpected hello from {from}")));
        }
        streams.insert(from, s);
    }
    for s in streams.values() {
        s.set_read_timeout(Some(READ_TIMEOUT))?;
    }
    Ok(streams)
}

fn receive_round(
    id: NodeId,
    t: u64,
    dim: usize,
    streams: &mut BTreeMap<NodeId, UnixStream>,
) -> Result<NeighborStates> {
    let mut entries = Vec::with_capacity(streams.len());
    for (&j, s) in streams.iter_mut() {
        let frame = read_frame(s).map_err(|e| Error::Protocol(format!("node {id}: reading from {j} in round {t}: {e}")))?;
        if frame.round != t {
            return Err(Error::Protocol(format!(
                "node {id}: frame for round {} from {j} while in round {t}",
                frame.round
            )));
        }
        if frame.sender as NodeId != j || frame.receiver as NodeId != id {
            return Err(Error::Protocol(format!(
                "node {id}: misaddressed frame {}→{} on link with {j}",
                frame.sender, frame.receiver
            )));
        }
        if frame.payload.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: frame.payload.len() });
        }
        entries.push((j, frame.payload));
    }
    NeighborStates::new(entries)
}

fn hex_vec(out: &mut String, v: &[f64]) {
    for x in v {
        write!(out, " {:016x}", x.to_bits()).unwrap();
    }
}

/// Main loop of one node process.
pub fn serve_node(launch: &NodeLaunch) -> Result<()> {
    let cfg = ExperimentConfig::load(&launch.session)?;
    let graph = cfg.build_graph()?;
    let scenario = cfg.scenario();
    let id = launch.id;
    if id >= graph.n() {
        return Err(Error::param("id", format!("{id} is not a node of the session graph")));
    }
    let addrs = parse_rendezvous(&launch.rendezvous)?;
    let own = addrs
        .get(&id)
        .ok_or_else(|| Error::Protocol(format!("no address for node {id}")))?;
    let listener = UnixListener::bind(own).map_err(|e| Error::io(own, e))?;
    let neighbors = graph.neighbors(id).to_vec();
    let mut streams = handshake(id, &neighbors, &listener, &addrs)?;
    let dim = scenario.dim;

    if graph.is_byzantine(id) {
        let mut node = ByzantineNode::new(id, neighbors, scenario.attack_for(id), dim, scenario.init, scenario.seed)?;
        let mut inbox: Option<NeighborStates> = None;
        for t in 0..scenario.rounds {
            for (j, payload) in node.emit(t, inbox.as_ref())? {
                let frame = WireFrame { round: t, sender: id as u32, receiver: j as u32, payload };
                write_frame(streams.get_mut(&j).expect("stream per neighbor"), &frame)?;
            }
            inbox = if streams.is_empty() { None } else { Some(receive_round(id, t, dim, &mut streams)?) };
        }
        return Ok(());
    }

    let initial = initial_state(scenario.seed, id, &scenario.init, dim);
    let mut node = HonestNode::new(id, initial, neighbors, scenario.protocol.clone())?;
    let mut fragment = String::new();
    for t in 0..scenario.rounds {
        let state = node.state().to_vec();
        for (&j, s) in streams.iter_mut() {
            let frame = WireFrame { round: t, sender: id as u32, receiver: j as u32, payload: state.clone() };
            write_frame(s, &frame)?;
        }
        let inbox = receive_round(id, t, dim, &mut streams)?;
        let outcome = node.step(&inbox, None)?;
        write!(fragment, "state {t}").unwrap();
        hex_vec(&mut fragment, &state);
        fragment.push('\n');
        if let Some(rep) = outcome.reputation {
            write!(fragment, "rep {t}").unwrap();
            for (j, p) in rep.iter() {
                write!(fragment, " {j}:{:016x}", p.to_bits()).unwrap();
            }
            fragment.push('\n');
        }
    }
    fragment.push_str("final");
    hex_vec(&mut fragment, node.state());
    fragment.push('\n');
    std::fs::write(&launch.fragment, fragment).map_err(|e| Error::io(&launch.fragment, e))
}

struct Fragment {
    states: Vec<StateVector>,
    reps: Vec<Option<ReputationVector>>,
    last: StateVector,
}

fn parse_hex(tok: &str) -> Result<f64> {
    u64::from_str_radix(tok, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::Protocol(format!("bad float `{tok}` in fragment")))
}

fn read_fragment(path: &Path, rounds: u64) -> Result<Fragment> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut frag = Fragment {
        states: Vec::with_capacity(rounds as usize),
        reps: vec![None; rounds as usize],
        last: Vec::new(),
    };
    let mut has_final = false;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("state") => {
                tokens.next();
                frag.states.push(tokens.map(parse_hex).collect::<Result<_>>()?);
            }
            Some("rep") => {
                let t: usize = tokens
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Protocol("bad rep line".into()))?;
                let mut neighbors = Vec::new();
                let mut weights = Vec::new();
                for tok in tokens {
                    let (j, p) = tok.split_once(':').ok_or_else(|| Error::Protocol("bad rep entry".into()))?;
                    neighbors.push(j.parse().map_err(|_| Error::Protocol("bad rep id".into()))?);
                    weights.push(parse_hex(p)?);
                }
                let weights = SimplexPoint::try_from_weights(weights)?;
                *frag
                    .reps
                    .get_mut(t)
                    .ok_or_else(|| Error::Protocol(format!("rep line for round {t} beyond run")))? =
                    Some(ReputationVector { neighbors, weights });
            }
            Some("final") => {
                frag.last = tokens.map(parse_hex).collect::<Result<_>>()?;
                has_final = true;
            }
            _ => return Err(Error::Protocol(format!("unexpected fragment line `{line}`"))),
        }
    }
    if !has_final || frag.states.len() as u64 != rounds {
        return Err(Error::Protocol(format!("incomplete fragment {}", path.display())));
    }
    Ok(frag)
}

/// How node processes get started.
#[derive(Debug, Clone)]
pub enum Launcher {
    /// Spawn this executable with the `node` subcommand.
    Process(PathBuf),
    /// Run every node on its own thread inside this process.
    Threads,
}

enum Running {
    Child(Child, PathBuf),
    Thread(std::thread::JoinHandle<Result<()>>),
}

fn kill_all(running: &mut [(NodeId, Option<Running>)]) {
    for (_, slot) in running.iter_mut() {
        if let Some(Running::Child(child, _)) = slot {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Runs the experiment with one node per process (or thread) and
/// reassembles the same trace the in-process engine produces.
pub fn orchestrate(cfg: &ExperimentConfig, graph: &Graph, launcher: &Launcher) -> Result<RunOutput> {
    let scenario = cfg.scenario();
    scenario.validate(graph)?;
    let work = tempfile::Builder::new()
        .prefix("arpc")
        .tempdir()
        .map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let dir = work.path();

    let graph_path = dir.join("graph.txt");
    topology::save_graph(graph, &graph_path)?;
    let mut session = cfg.clone();
    session.graph = crate::config::GraphSpec { file: Some(graph_path), ..Default::default() };
    session.out_dir = None;
    session.derived = None;
    let session_path = dir.join("session.toml");
    std::fs::write(&session_path, session.to_toml()).map_err(|e| Error::io(&session_path, e))?;

    let rendezvous = dir.join("rendezvous.txt");
    let mut table = String::new();
    for i in 0..graph.n() {
        writeln!(table, "{i} {}", dir.join(format!("n{i}.sock")).display()).unwrap();
    }
    std::fs::write(&rendezvous, table).map_err(|e| Error::io(&rendezvous, e))?;

    let launches: Vec<NodeLaunch> = (0..graph.n())
        .map(|i| NodeLaunch {
            session: session_path.clone(),
            id: i,
            rendezvous: rendezvous.clone(),
            fragment: dir.join(format!("n{i}.frag")),
        })
        .collect();

    let mut running: Vec<(NodeId, Option<Running>)> = Vec::with_capacity(launches.len());
    for launch in &launches {
        let handle = match launcher {
            Launcher::Process(exe) => {
                let log_path = dir.join(format!("n{}.log", launch.id));
                let log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
                let spawned = Command::new(exe)
                    .args(launch.to_args())
                    .stdin(Stdio::null())
                    .stdout(Stdio::null())
                    .stderr(log)
                    .spawn();
                match spawned {
                    Ok(child) => Running::Child(child, log_path),
                    Err(e) => {
                        kill_all(&mut running);
                        return Err(Error::io(exe, e));
                    }
                }
            }
            Launcher::Threads => {
                let launch = launch.clone();
                Running::Thread(std::thread::spawn(move || serve_node(&launch)))
            }
        };
        running.push((launch.id, Some(handle)));
    }

    let mut failure: Option<Error> = None;
    loop {
        let mut pending = 0;
        for (id, slot) in running.iter_mut() {
            let id = *id;
            match slot.take() {
                Some(Running::Child(mut child, log)) => match child.try_wait()? {
                    None => {
                        pending += 1;
                        *slot = Some(Running::Child(child, log));
                    }
                    Some(status) if status.success() => {}
                    Some(status) => {
                        let diag = std::fs::read_to_string(&log).unwrap_or_default();
                        failure = Some(Error::NodeFailed(format!(
                            "node {id} exited with {status}: {}",
                            diag.trim()
                        )));
                    }
                },
                Some(Running::Thread(h)) => {
                    if h.is_finished() {
                        match h.join() {
                            Ok(Ok(())) => {}
                            Ok(Err(e)) => failure = failure.or(Some(Error::NodeFailed(format!("node {id}: {e}")))),
                            Err(_) => failure = failure.or(Some(Error::NodeFailed(format!("node {id} panicked")))),
                        }
                    } else {
                        pending += 1;
                        *slot = Some(Running::Thread(h));
                    }
                }
                None => {}
            }
            if failure.is_some() {
                break;
            }
        }
        if let Some(err) = failure.take() {
            kill_all(&mut running);
            // Stuck threads unblock once their peers' sockets close with `work`.
            return Err(err);
        }
        if pending == 0 {
            break;
        }
        std::thread::sleep(Duration::from_millis(1));
    }

    let honest = graph.honest_ids();
    let fragments: Vec<Fragment> = honest
        .iter()
        .map(|&i| read_fragment(&launches[i].fragment, scenario.rounds))
        .collect::<Result<_>>()?;
    let initial: Vec<StateVector> = honest
        .iter()
        .map(|&i| initial_state(scenario.seed, i, &scenario.init, scenario.dim))
        .collect();
    let trace = (0..scenario.rounds as usize)
        .map(|t| {
            let states: Vec<StateVector> = fragments.iter().map(|f| f.states[t].clone()).collect();
            let reps = honest
                .iter()
                .zip(&fragments)
                .filter_map(|(&i, f)| f.reps[t].clone().map(|r| (i, r)))
                .collect();
            compute_metrics(t as u64, &honest, &states, &initial, reps, graph)
        })
        .collect();
    let final_states = fragments.into_iter().map(|f| f.last).collect();
    Ok(RunOutput { honest, initial, trace, final_states, recording: None })
}
