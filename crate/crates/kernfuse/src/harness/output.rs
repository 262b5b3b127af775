//! CSV and checkpoint files. Every real number is written with 17
//! significant digits so files round-trip exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::config::{parse_number, parse_numbers, parse_schedule};
use super::experiment::MetricsRow;
use super::HarnessError;
use crate::learning_runtime::{ReconstructionRho, RunConfig, Schedule, Trajectory};

pub const METRICS_HEADER: [&str; 8] =
    ["n", "rmse_agent1", "rmse_agent2", "rmse_fused", "window_stat", "rho1", "rho2", "rho_fusion"];

pub const FUNCTIONS_HEADER: [&str; 5] = ["x", "agent1", "agent2", "fused", "truth"];

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, HarnessError> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    let mut w = writer(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            fmt_real(r.rmse_agent[0]),
            fmt_real(r.rmse_agent[1]),
            fmt_real(r.rmse_fused),
            r.window_stat.map(fmt_real).unwrap_or_default(),
            fmt_real(r.rho[0]),
            fmt_real(r.rho[1]),
            fmt_real(r.rho[2]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_final_functions(path: &Path, grid: &[f64], columns: &[Vec<f64>; 4]) -> Result<(), HarnessError> {
    let mut w = writer(path)?;
    w.write_record(FUNCTIONS_HEADER)?;
    for (k, &x) in grid.iter().enumerate() {
        let mut rec = vec![fmt_real(x)];
        rec.extend(columns.iter().map(|c| fmt_real(c[k])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Run configuration and final state of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub iterations: usize,
    /// Index of the last completed iteration (`first_iteration − 1` if none).
    pub last_n: usize,
    /// Final downloaded coefficients per agent.
    pub coefficients: [Vec<f64>; 2],
    /// Final fused coefficients; empty if no iteration completed.
    pub fused: Vec<f64>,
}

impl Checkpoint {
    pub fn from_run(run: &RunConfig, trajectory: &Trajectory) -> Self {
        let last = trajectory.last_estimates();
        Checkpoint {
            run: run.clone(),
            iterations: trajectory.records.len(),
            last_n: trajectory.records.last().map(|r| r.n).unwrap_or(run.first_iteration - 1),
            coefficients: [last[0].as_slice().to_vec(), last[1].as_slice().to_vec()],
            fused: trajectory.records.last().map(|r| r.fused.as_slice().to_vec()).unwrap_or_default(),
        }
    }

    /// Run configuration that continues from this state.
    pub fn resume_config(&self) -> RunConfig {
        RunConfig {
            initial: [Some(self.coefficients[0].clone()), Some(self.coefficients[1].clone())],
            first_iteration: self.last_n + 1,
            ..self.run.clone()
        }
    }
}

fn fmt_schedule(s: &Schedule) -> String {
    match *s {
        Schedule::Constant(c) => format!("constant({})", fmt_real(c)),
        Schedule::Linear(c) => format!("linear({})", fmt_real(c)),
        Schedule::Geometric { base, ratio } => format!("geometric({}, {})", fmt_real(base), fmt_real(ratio)),
    }
}

fn fmt_reals(v: &[f64]) -> String {
    v.iter().map(|&x| fmt_real(x)).collect::<Vec<_>>().join(", ")
}

pub fn write_checkpoint(c: &Checkpoint) -> String {
    let r = &c.run;
    let mut s = String::from("# kernfuse run checkpoint\n[run]\n");
    let _ = writeln!(s, "epsilon = {}", fmt_real(r.epsilon));
    let _ = writeln!(s, "k_max = {}", r.k_max);
    let _ = writeln!(s, "max_iterations = {}", r.max_iterations);
    let _ = writeln!(s, "agent1_rho = {}", fmt_schedule(&r.agent_rho[0]));
    let _ = writeln!(s, "agent2_rho = {}", fmt_schedule(&r.agent_rho[1]));
    let _ = writeln!(s, "fusion_rho = {}", fmt_schedule(&r.fusion_rho));
    let _ = writeln!(s, "normalize_download = {}", r.normalize_download);
    let _ = writeln!(s, "reconstruction_rho = {}", r.reconstruction);
    let _ = writeln!(s, "seed = {}", r.seed);
    let _ = writeln!(s, "first_iteration = {}", r.first_iteration);
    for (i, init) in r.initial.iter().enumerate() {
        if let Some(v) = init {
            let _ = writeln!(s, "agent{}_initial = {}", i + 1, fmt_reals(v));
        }
    }
    s.push_str("[state]\n");
    let _ = writeln!(s, "iterations = {}", c.iterations);
    let _ = writeln!(s, "last_n = {}", c.last_n);
    let _ = writeln!(s, "agent1 = {}", fmt_reals(&c.coefficients[0]));
    let _ = writeln!(s, "agent2 = {}", fmt_reals(&c.coefficients[1]));
    if !c.fused.is_empty() {
        let _ = writeln!(s, "fused = {}", fmt_reals(&c.fused));
    }
    s
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint, HarnessError> {
    let bad = |line: usize, msg: String| HarnessError::Checkpoint(format!("line {line}: {msg}"));
    let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            section = name.trim().to_string();
            if section != "run" && section != "state" {
                return Err(bad(line, format!("unknown section [{section}]")));
            }
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| bad(line, "expected `key = value`".into()))?;
        map.insert(format!("{section}.{}", k.trim()), (line, v.trim().to_string()));
    }
    let mut get = |key: &str| map.remove(key);
    fn need<T>(
        entry: Option<(usize, String)>,
        key: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, HarnessError> {
        let (line, v) = entry.ok_or_else(|| HarnessError::Checkpoint(format!("missing {key}")))?;
        parse(&v).map_err(|m| HarnessError::Checkpoint(format!("line {line}: {key}: {m}")))
    }
    let count = |s: &str| s.parse::<usize>().map_err(|_| format!("`{s}` is not an integer"));
    let flag = |s: &str| s.parse::<bool>().map_err(|_| format!("`{s}` is not a boolean"));
    let recon = |s: &str| match s {
        "agent" => Ok(ReconstructionRho::Agent),
        "fusion" => Ok(ReconstructionRho::Fusion),
        _ => Err(format!("`{s}` is not agent or fusion")),
    };
    let run = RunConfig {
        epsilon: need(get("run.epsilon"), "epsilon", parse_number)?,
        k_max: need(get("run.k_max"), "k_max", count)?,
        max_iterations: need(get("run.max_iterations"), "max_iterations", count)?,
        agent_rho: [
            need(get("run.agent1_rho"), "agent1_rho", parse_schedule)?,
            need(get("run.agent2_rho"), "agent2_rho", parse_schedule)?,
        ],
        fusion_rho: need(get("run.fusion_rho"), "fusion_rho", parse_schedule)?,
        normalize_download: need(get("run.normalize_download"), "normalize_download", flag)?,
        reconstruction: need(get("run.reconstruction_rho"), "reconstruction_rho", recon)?,
        seed: need(get("run.seed"), "seed", |s| s.parse::<u64>().map_err(|_| format!("`{s}` is not a seed")))?,
        first_iteration: need(get("run.first_iteration"), "first_iteration", count)?,
        initial: [
            get("run.agent1_initial").map(|e| need(Some(e), "agent1_initial", parse_numbers)).transpose()?,
            get("run.agent2_initial").map(|e| need(Some(e), "agent2_initial", parse_numbers)).transpose()?,
        ],
    };
    let checkpoint = Checkpoint {
        run,
        iterations: need(get("state.iterations"), "iterations", count)?,
        last_n: need(get("state.last_n"), "last_n", count)?,
        coefficients: [
            need(get("state.agent1"), "agent1", parse_numbers)?,
            need(get("state.agent2"), "agent2", parse_numbers)?,
        ],
        fused: get("state.fused").map(|e| need(Some(e), "fused", parse_numbers)).transpose()?.unwrap_or_default(),
    };
    if let Some((key, (line, _))) = map.into_iter().next() {
        return Err(bad(line, format!("unknown key {key}")));
    }
    Ok(checkpoint)
}
