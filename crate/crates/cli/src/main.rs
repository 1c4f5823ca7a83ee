use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arepc::config::{Backend, ExperimentConfig};
use arepc::topology::{generate, save_graph, GeneratorKind};
use arepc::verify::render_table;
use arepc::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

use arepc_cli::{describe, is_usage_error, out_dir, run_to_dir, verify_config, DEFAULT_LIPSCHITZ_PAIRS};

#[derive(Parser)]
#[command(name = "arepc", version, about = "Byzantine-resilient consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Engine,
    Sockets,
}

#[derive(Args)]
struct Overrides {
    /// Replace the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    RandomRegular,
    ErdosRenyi,
    RingPlusChords,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics.csv, reputations.csv and final_states.csv.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run an experiment in-process and check the applicable bounds.
    Verify {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Random state pairs for the Lipschitz checks.
        #[arg(long, default_value_t = DEFAULT_LIPSCHITZ_PAIRS)]
        pairs: usize,
    },
    /// Generate a labeled topology that satisfies both graph assumptions.
    GenTopology {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        honest: usize,
        #[arg(long, default_value_t = 0)]
        byzantine: usize,
        /// Degree for random-regular graphs.
        #[arg(long)]
        k: Option<usize>,
        /// Edge probability for Erdős–Rényi graphs.
        #[arg(long)]
        p: Option<f64>,
        /// Extra honest chords for ring-plus-chords graphs.
        #[arg(long)]
        chords: Option<usize>,
        /// Honest contacts per Byzantine node for ring-plus-chords graphs.
        #[arg(long, default_value_t = 2)]
        byz_degree: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// One node of a socket run; started by `run` itself.
    #[command(hide = true)]
    Node {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        id: usize,
        #[arg(long)]
        rendezvous: PathBuf,
        #[arg(long)]
        fragment: PathBuf,
    },
}

fn load(path: &Path, seed: Option<u64>) -> arepc::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn missing(flag: &str) -> Error {
    Error::InvalidParameter { field: flag.into(), reason: "required for this --kind".into() }
}

fn dispatch(cmd: Command) -> arepc::Result<ExitCode> {
    match cmd {
        Command::Run { config, overrides } => {
            let mut cfg = load(&config, overrides.seed)?;
            if let Some(b) = overrides.backend {
                cfg.backend = match b {
                    BackendArg::Engine => Backend::Engine,
                    BackendArg::Sockets => Backend::Sockets,
                };
            }
            let dir = out_dir(&cfg, overrides.out_dir.as_deref());
            let graph = cfg.build_graph()?;
            eprintln!("{}", describe(&cfg, &graph));
            let (_, out) = run_to_dir(&cfg, &dir, None)?;
            if let Some(last) = out.trace.last() {
                eprintln!(
                    "round {}: rmse={:.6e} dia={:.6e} -> {}",
                    last.t,
                    last.rmse,
                    last.dia,
                    dir.display()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { config, seed, pairs } => {
            let cfg = load(&config, seed)?;
            let graph = cfg.build_graph()?;
            eprintln!("{}", describe(&cfg, &graph));
            let reports = verify_config(&cfg, pairs)?;
            if reports.is_empty() {
                println!("no bound checks apply to protocol `{}`", cfg.protocol.name());
            }
            print!("{}", render_table(&reports));
            Ok(if reports.iter().all(|r| r.pass) { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::GenTopology { kind, honest, byzantine, k, p, chords, byz_degree, seed, out } => {
            let kind = match kind {
                KindArg::RandomRegular => GeneratorKind::RandomRegular { k: k.ok_or_else(|| missing("k"))? },
                KindArg::ErdosRenyi => GeneratorKind::ErdosRenyi { p: p.ok_or_else(|| missing("p"))? },
                KindArg::RingPlusChords => GeneratorKind::RingPlusChords {
                    chords: chords.ok_or_else(|| missing("chords"))?,
                    byz_degree,
                },
            };
            let g = generate(&kind, honest, byzantine, seed)?;
            save_graph(&g, &out)?;
            let s = g.stats();
            eprintln!("wrote {} (delta_min={}, lambda2={:.6})", out.display(), s.delta_min, s.lambda2);
            Ok(ExitCode::SUCCESS)
        }
        #[cfg(unix)]
        Command::Node { session, id, rendezvous, fragment } => {
            arepc::transport::serve_node(&arepc::transport::NodeLaunch { session, id, rendezvous, fragment })?;
            Ok(ExitCode::SUCCESS)
        }
        #[cfg(not(unix))]
        Command::Node { .. } => Err(Error::NotApplicable("node processes need Unix domain sockets".into())),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_usage_error(&e) { 2 } else { 1 })
        }
    }
}
