use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use super::config::{AnchorSpec, ExperimentConfig};
use super::output::{write_checkpoint, write_final_functions, write_metrics, Checkpoint};
use super::svg::{LineChart, Series};
use super::HarnessError;
use crate::agent_estimator::AgentSpace;
use crate::fusion_center::FusionSpace;
use crate::learning_runtime::{run, DataGenerator, DataSource, RuntimeError, System, Trajectory};
use crate::operator_analysis::{fusion_operator_norm, gram_scale, schur_report};
use crate::rkhs_core::{
    gram_points, linspace, matrix_rank, select_anchors, AnchorSet, Domain, FeatureSet, Kernel, RkhsError, SpaceTag,
    FEATURE_RANK_RTOL,
};

/// Points used to decide feature independence and the dimension of `H`.
pub const RANK_GRID_POINTS: usize = 512;

/// Regularization values listed in the operator report.
pub const REPORT_RHOS: [f64; 4] = [1e2, 1e4, 1e6, 1e8];

/// `n` points spread over all pieces of `domain` (at least two per piece).
pub fn domain_grid(domain: &Domain, n: usize) -> Vec<f64> {
    domain.grid(n.div_ceil(domain.pieces().len()).max(2))
}

/// Evaluation grid: `n` uniform points on the hull of both domains.
pub fn evaluation_grid(config: &ExperimentConfig) -> Vec<f64> {
    let (lo, hi) = config.input_space().hull();
    linspace(lo, hi, config.output.grid_points)
}

pub fn generate_data(config: &ExperimentConfig, seed: u64) -> DataSource {
    DataSource::Generated(DataGenerator {
        truth: config.data.truth.clone(),
        sigma: config.data.noise_sigma,
        domains: [config.agents[0].domain.clone(), config.agents[1].domain.clone()],
        seed,
    })
}

fn setup(context: &str) -> impl Fn(RkhsError) -> HarnessError + '_ {
    move |source| HarnessError::Setup { context: context.to_string(), source }
}

/// Spaces, operators and the scale applied to both kernels.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub system: System,
    /// Factor multiplying both kernels (1 without Gram normalization).
    pub kernel_scale: f64,
    pub anchor_conditions: [f64; 2],
}

fn build_system(config: &ExperimentConfig, features: [FeatureSet; 2], anchors: &[AnchorSet; 2]) -> Result<System, HarnessError> {
    let rank_grid = domain_grid(&config.input_space(), RANK_GRID_POINTS);
    let [f1, f2] = features;
    let a1 = AgentSpace::new(0, f1, &anchors[0], config.agents[0].domain.clone(), config.agents[0].norm_grid_points)
        .map_err(setup("agent1"))?;
    let a2 = AgentSpace::new(1, f2, &anchors[1], config.agents[1].domain.clone(), config.agents[1].norm_grid_points)
        .map_err(setup("agent2"))?;
    let space = FusionSpace::new(a1, a2, &rank_grid).map_err(setup("fusion space"))?;
    System::new(space).map_err(setup("download operators"))
}

/// Builds feature sets, picks or checks anchors and assembles the system.
pub fn assemble(config: &ExperimentConfig) -> Result<Assembly, HarnessError> {
    let rank_grid = domain_grid(&config.input_space(), RANK_GRID_POINTS);
    let mut features = Vec::with_capacity(2);
    for (i, a) in config.agents.iter().enumerate() {
        let grid = domain_grid(&a.domain, RANK_GRID_POINTS);
        features.push(FeatureSet::new(a.features.clone(), &grid).map_err(setup(["agent1", "agent2"][i]))?);
    }
    let [f1, f2]: [FeatureSet; 2] = features.try_into().expect("two agents");
    let kernel = Kernel::sum(Kernel::Feature(f1.clone()), Kernel::Feature(f2.clone()));
    let m = matrix_rank(&kernel.feature_matrix(&rank_grid), FEATURE_RANK_RTOL);

    let mut anchors = Vec::with_capacity(2);
    let mut conditions = [0.0; 2];
    for (i, a) in config.agents.iter().enumerate() {
        let name = ["agent1", "agent2"][i];
        let tag = SpaceTag::agent(i);
        let set = match &a.anchors {
            AnchorSpec::Points(p) => {
                if p.len() != m {
                    return Err(setup(name)(RkhsError::LengthMismatch { got: p.len(), expected: m }));
                }
                let set = AnchorSet::new(p.clone(), tag).map_err(setup(name))?;
                conditions[i] = set.check_basis(&kernel).map_err(setup(name))?;
                set
            }
            AnchorSpec::Pool(pool) => {
                let sel = select_anchors(&kernel, pool, m, tag).map_err(setup(name))?;
                conditions[i] = sel.condition;
                sel.anchors
            }
            AnchorSpec::PoolGrid(n) => {
                let sel = select_anchors(&kernel, &a.domain.grid(*n), m, tag).map_err(setup(name))?;
                conditions[i] = sel.condition;
                sel.anchors
            }
        };
        anchors.push(set);
    }
    let anchors: [AnchorSet; 2] = anchors.try_into().expect("two agents");

    let system = build_system(config, [f1.clone(), f2.clone()], &anchors)?;
    let Some(how) = config.fusion.normalize_gram else {
        return Ok(Assembly { system, kernel_scale: 1.0, anchor_conditions: conditions });
    };
    let s = gram_scale(&system.space, how);
    let system = build_system(config, [f1.scaled(s), f2.scaled(s)], &anchors)?;
    Ok(Assembly { system, kernel_scale: s, anchor_conditions: conditions })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub n: usize,
    /// Per-agent RMSE of `f̄ⁱₙ` against `f*` on the agent's own domain grid.
    pub rmse_agent: [f64; 2],
    /// RMSE of the fused `fₙ` against `f*` on the evaluation grid.
    pub rmse_fused: f64,
    pub window_stat: Option<f64>,
    pub rho: [f64; 3],
}

/// Kernel columns at fixed grids, for fast repeated evaluation.
struct Evaluator {
    agent: [DMatrix<f64>; 2],
    agent_truth: [DVector<f64>; 2],
    agent_on_eval: [DMatrix<f64>; 2],
    fused: DMatrix<f64>,
    truth: DVector<f64>,
}

impl Evaluator {
    fn new(config: &ExperimentConfig, system: &System, grid: &[f64]) -> Self {
        let space = &system.space;
        let truth_on = |pts: &[f64]| DVector::from_iterator(pts.len(), pts.iter().map(|&x| config.data.truth.eval(x)));
        let agent = |i: usize, pts: &[f64]| {
            let a = space.agent(i);
            gram_points(a.kernel(), pts, a.anchors().points())
        };
        Evaluator {
            agent: [agent(0, space.agent(0).grid()), agent(1, space.agent(1).grid())],
            agent_truth: [truth_on(space.agent(0).grid()), truth_on(space.agent(1).grid())],
            agent_on_eval: [agent(0, grid), agent(1, grid)],
            fused: gram_points(space.kernel(), grid, space.anchors().points()),
            truth: truth_on(grid),
        }
    }

    /// Scaled by the largest error so huge but finite errors do not overflow.
    fn rmse(values: DVector<f64>, truth: &DVector<f64>) -> f64 {
        let e = values - truth;
        let top = e.amax();
        if top == 0.0 || !top.is_finite() {
            return top;
        }
        top * ((e / top).norm_squared() / truth.len().max(1) as f64).sqrt()
    }
}

/// A finished or interrupted run with its metrics.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub trajectory: Trajectory,
    pub error: Option<RuntimeError>,
    pub metrics: Vec<MetricsRow>,
    pub grid: Vec<f64>,
    /// Columns: agent 1, agent 2, fused, truth, evaluated on `grid`.
    pub final_values: [Vec<f64>; 4],
}

impl Simulation {
    /// Row with the smallest fused RMSE (first one on ties).
    pub fn best_fused(&self) -> Option<&MetricsRow> {
        self.metrics.iter().fold(None, |best: Option<&MetricsRow>, r| match best {
            Some(b) if b.rmse_fused <= r.rmse_fused => Some(b),
            _ => Some(r),
        })
    }

    pub fn stop_reason(&self) -> String {
        match &self.error {
            None => "window statistic below epsilon".into(),
            Some(e) => e.to_string(),
        }
    }
}

/// Runs the learning loop on `source` and computes metrics.
pub fn simulate(config: &ExperimentConfig, system: &System, source: &DataSource) -> Simulation {
    let (trajectory, error) = match run(&config.run, source, system) {
        Ok(t) => (t, None),
        Err(f) => (f.trajectory, Some(f.error)),
    };
    let grid = evaluation_grid(config);
    let ev = Evaluator::new(config, system, &grid);
    let metrics = trajectory
        .records
        .iter()
        .map(|r| MetricsRow {
            n: r.n,
            rmse_agent: [
                Evaluator::rmse(&ev.agent[0] * &r.downloaded[0], &ev.agent_truth[0]),
                Evaluator::rmse(&ev.agent[1] * &r.downloaded[1], &ev.agent_truth[1]),
            ],
            rmse_fused: Evaluator::rmse(&ev.fused * &r.fused, &ev.truth),
            window_stat: r.window_stat,
            rho: r.rho,
        })
        .collect();
    let last = trajectory.last_estimates();
    let fused = trajectory.records.last().map(|r| r.fused.clone()).unwrap_or_else(|| DVector::zeros(2 * system.m()));
    let final_values = [
        (&ev.agent_on_eval[0] * &last[0]).as_slice().to_vec(),
        (&ev.agent_on_eval[1] * &last[1]).as_slice().to_vec(),
        (&ev.fused * fused).as_slice().to_vec(),
        ev.truth.as_slice().to_vec(),
    ];
    Simulation { trajectory, error, metrics, grid, final_values }
}

/// What a run produced, for reporting.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub iterations: usize,
    pub stop_reason: String,
    /// `(n, rmse)` of the smallest fused RMSE.
    pub best_fused: Option<(usize, f64)>,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl RunSummary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        let _ = writeln!(s, "iterations: {}", self.iterations);
        let _ = writeln!(s, "stop reason: {}", self.stop_reason);
        match self.best_fused {
            Some((n, r)) => {
                let _ = writeln!(s, "min fused grid RMSE vs f* (oracle-only diagnostic): {r:.6e} at n = {n}");
            }
            None => {
                let _ = writeln!(s, "min fused grid RMSE vs f* (oracle-only diagnostic): none, no iterations");
            }
        }
        for f in &self.files {
            let _ = writeln!(s, "wrote {}", f.display());
        }
        s
    }
}

pub fn write_artifacts(
    config: &ExperimentConfig,
    sim: &Simulation,
    dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let path = dir.join("metrics.csv");
    write_metrics(&path, &sim.metrics)?;
    files.push(path);
    let path = dir.join("final_functions.csv");
    write_final_functions(&path, &sim.grid, &sim.final_values)?;
    files.push(path);
    let path = dir.join("run.checkpoint");
    std::fs::write(&path, write_checkpoint(&Checkpoint::from_run(&config.run, &sim.trajectory)))?;
    files.push(path);
    if config.output.plots {
        let path = dir.join("functions.svg");
        std::fs::write(&path, functions_chart(sim).render(720, 420))?;
        files.push(path);
        let path = dir.join("rmse.svg");
        std::fs::write(&path, rmse_chart(sim).render(720, 420))?;
        files.push(path);
    }
    Ok(files)
}

pub fn functions_chart(sim: &Simulation) -> LineChart {
    let names = ["agent 1", "agent 2", "fused", "f* (oracle)"];
    let series = names
        .iter()
        .zip(&sim.final_values)
        .map(|(name, ys)| Series::new(*name, sim.grid.iter().copied().zip(ys.iter().copied()).collect()))
        .collect();
    LineChart { title: "Final estimates".into(), x_label: "x".into(), y_label: "f(x)".into(), log_y: false, series }
}

pub fn rmse_chart(sim: &Simulation) -> LineChart {
    let pick = |f: &dyn Fn(&MetricsRow) -> f64| sim.metrics.iter().map(|r| (r.n as f64, f(r))).collect::<Vec<_>>();
    let series = vec![
        Series::new("agent 1", pick(&|r| r.rmse_agent[0])),
        Series::new("agent 2", pick(&|r| r.rmse_agent[1])),
        Series::new("fused", pick(&|r| r.rmse_fused)),
    ];
    LineChart { title: "Grid RMSE vs f* (oracle-only)".into(), x_label: "n".into(), y_label: "RMSE".into(), log_y: true, series }
}

/// Full run: assemble, simulate, write artifacts. A runtime failure still
/// writes the artifacts for the completed iterations before returning.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunSummary, HarnessError> {
    let assembly = assemble(config)?;
    let source = generate_data(config, config.run.seed);
    let sim = simulate(config, &assembly.system, &source);
    let dir = out.unwrap_or(&config.output.dir);
    let files = write_artifacts(config, &sim, dir)?;
    let summary = RunSummary {
        iterations: sim.metrics.len(),
        stop_reason: sim.stop_reason(),
        best_fused: sim.best_fused().map(|r| (r.n, r.rmse_fused)),
        files,
        warnings: config.warnings.clone(),
    };
    match sim.error {
        None => Ok(summary),
        Some(error) => Err(HarnessError::Run { error, summary: Box::new(summary) }),
    }
}

/// Rounds to 12 decimals, printing `-0` as `0`.
pub fn fmt_entry(v: f64) -> String {
    let r = (v * 1e12).round() / 1e12;
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r:.12}")
}

pub fn render_matrix(m: &DMatrix<f64>) -> String {
    let cells: Vec<Vec<String>> = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| fmt_entry(m[(i, j)])).collect()).collect();
    let width = cells.iter().flatten().map(String::len).max().unwrap_or(1);
    let mut s = String::new();
    for row in cells {
        let line: Vec<String> = row.iter().map(|c| format!("{c:>width$}")).collect();
        let _ = writeln!(s, "  [{}]", line.join("  "));
    }
    s
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Text report of the fusion space and its operators.
pub fn dump_operators(config: &ExperimentConfig) -> Result<String, HarnessError> {
    let assembly = assemble(config)?;
    let system = &assembly.system;
    let space = &system.space;
    let mut s = String::new();
    let names: Vec<String> = space.agents().iter().flat_map(|a| a.features().features().iter().map(|f| f.name())).collect();
    let _ = writeln!(s, "dimension of H: m = {}", space.m());
    let _ = writeln!(s, "stacked features: {}", names.join(", "));
    let _ = writeln!(s, "kernel scale: {:.16e}", assembly.kernel_scale);
    for i in 0..2 {
        let a = space.agent(i);
        let _ = writeln!(
            s,
            "agent{} anchors: {} (Gram condition {:.6e}, rank of agent Gram {})",
            i + 1,
            fmt_list(a.anchors().points()),
            assembly.anchor_conditions[i],
            a.rank()
        );
    }
    let _ = writeln!(s, "\nPhi basis (columns, stacked feature coordinates):");
    s.push_str(&render_matrix(space.phi()));
    for (i, d) in system.downloads.iter().enumerate() {
        let _ = writeln!(s, "\nL{} (Phi coordinates):", i + 1);
        s.push_str(&render_matrix(d.matrix()));
        let _ = writeln!(s, "sqrt(L{}):", i + 1);
        s.push_str(&render_matrix(d.sqrt()));
        let _ = writeln!(s, "projector onto the range of sqrt(L{}):", i + 1);
        s.push_str(&render_matrix(d.projector()));
    }
    let _ = writeln!(s, "\nc_d = {}", fmt_entry(system.c_d));
    let schur = schur_report(space.gram(), space.m());
    let _ = writeln!(s, "lambda_max(K) = {:.16e}", schur.lambda_max_k);
    let _ = writeln!(s, "lambda_max(K~1) = {:.16e}", schur.block_max[0]);
    let _ = writeln!(s, "lambda_max(K~2) = {:.16e}", schur.block_max[1]);
    let _ = writeln!(s, "lambda_max(D) = {:.16e}", schur.lambda_max_d);
    let _ = writeln!(
        s,
        "lambda_max(K) <= max block: {}; lambda_max(D) <= max block: {}",
        schur.k_within_bound(1e-8),
        schur.d_within_bound(1e-8)
    );
    let _ = writeln!(s, "\nfusion operator norm ||T(rho)||:");
    for rho in REPORT_RHOS {
        let t = fusion_operator_norm(space, rho).map_err(setup("fusion operator norm"))?;
        let _ = writeln!(s, "  rho = {rho:e}: {:.16e}", t.norm);
    }
    Ok(s)
}
