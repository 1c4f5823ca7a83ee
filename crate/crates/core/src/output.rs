//! CSV export. Floats carry 17 significant digits so every value reads back
//! to the same double.

use std::fmt::Write as _;
use std::path::Path;

use crate::engine::RunOutput;
use crate::error::{Error, Result};
use crate::topology::Graph;

pub const METRICS_FILE: &str = "metrics.csv";
pub const REPUTATIONS_FILE: &str = "reputations.csv";
pub const FINAL_STATES_FILE: &str = "final_states.csv";
pub const CONFIG_ECHO_FILE: &str = "config_echo.toml";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row per round. The two Byzantine-mass columns exist only when the
/// graph has Byzantine nodes and stay empty for rules without weights.
pub fn metrics_csv(out: &RunOutput, graph: &Graph) -> String {
    let byz = !graph.byzantine_ids().is_empty();
    let mut s = String::from("round,rmse,dia,d_inf,d_2,disagreement");
    if byz {
        s.push_str(",byz_mass_mean,byz_mass_max");
    }
    s.push('\n');
    for r in &out.trace {
        write!(
            s,
            "{},{},{},{},{},{}",
            r.t,
            fmt_f64(r.rmse),
            fmt_f64(r.dia),
            fmt_f64(r.d_inf),
            fmt_f64(r.d_2),
            fmt_f64(r.disagreement)
        )
        .unwrap();
        if byz {
            let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
            write!(s, ",{},{}", opt(r.byz_mass_mean), opt(r.byz_mass_max)).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn reputations_csv(out: &RunOutput, graph: &Graph) -> String {
    let mut s = String::from("round,observer,neighbor,weight,neighbor_is_byzantine\n");
    for r in &out.trace {
        for (i, rep) in &r.reputations {
            for (j, p) in rep.iter() {
                writeln!(s, "{},{},{},{},{}", r.t, i, j, fmt_f64(p), u8::from(graph.is_byzantine(j))).unwrap();
            }
        }
    }
    s
}

pub fn final_states_csv(out: &RunOutput) -> String {
    let dim = out.final_states.first().map_or(0, Vec::len);
    let mut s = String::from("node");
    for k in 0..dim {
        write!(s, ",x{k}").unwrap();
    }
    s.push('\n');
    for (i, x) in out.honest.iter().zip(&out.final_states) {
        write!(s, "{i}").unwrap();
        for v in x {
            write!(s, ",{}", fmt_f64(*v)).unwrap();
        }
        s.push('\n');
    }
    s
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the three CSV files into `dir`, creating it if needed.
pub fn write_all(dir: &Path, out: &RunOutput, graph: &Graph) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, METRICS_FILE, &metrics_csv(out, graph))?;
    write(dir, REPUTATIONS_FILE, &reputations_csv(out, graph))?;
    write(dir, FINAL_STATES_FILE, &final_states_csv(out))
}

pub fn write_echo(dir: &Path, echo: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, CONFIG_ECHO_FILE, echo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::InitBox;
    use crate::engine::{run, RunOptions, Scenario};
    use crate::protocol::{ProtocolConfig, Rule};
    use std::collections::BTreeMap;

    fn sc(rule: Rule) -> Scenario {
        Scenario {
            protocol: ProtocolConfig::new(0.5, rule).unwrap(),
            attacks: BTreeMap::new(),
            init: InitBox { lo: -1.0, hi: 1.0 },
            dim: 2,
            rounds: 5,
            seed: 1,
        }
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, -1.0 / 3.0, 1e-300, f64::MAX, 0.0, 123456.789] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn minimal_ring_has_five_rows_and_no_byz_columns() {
        let g = Graph::new(3, &[(0, 1), (1, 2), (0, 2)], &[]).unwrap();
        let out = run(&g, &sc(Rule::Average), RunOptions::default()).unwrap();
        let m = metrics_csv(&out, &g);
        let lines: Vec<_> = m.lines().collect();
        assert_eq!(lines[0], "round,rmse,dia,d_inf,d_2,disagreement");
        assert_eq!(lines.len(), 6);
        assert_eq!(reputations_csv(&out, &g).lines().count(), 1 + 5 * 3 * 2);
        assert_eq!(final_states_csv(&out).lines().next(), Some("node,x0,x1"));
    }

    #[test]
    fn byz_columns_empty_for_trimming() {
        let g = Graph::new(4, &[(0, 1), (1, 2), (0, 2), (2, 3)], &[3]).unwrap();
        let out = run(&g, &sc(Rule::Wmsr { f: 1 }), RunOptions::default()).unwrap();
        let m = metrics_csv(&out, &g);
        assert!(m.lines().next().unwrap().ends_with("byz_mass_mean,byz_mass_max"));
        assert!(m.lines().nth(1).unwrap().ends_with(",,"));
        assert_eq!(reputations_csv(&out, &g).lines().count(), 1);
    }
}
