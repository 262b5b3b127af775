//! The iterative two-agent algorithm and its windowed stopping rule.
//!
//! Each iteration: both agents fit one new data point around their last
//! downloaded estimate, the fusion center reconstructs data from the two
//! local estimates, refits in the fusion space, and downloads the result
//! back to each agent. Once `k_max` iterations have run, the window statistic
//! `max_j Σᵢ ‖f̄ⁱ_{n−k+j} − f̄ⁱ_{n−k}‖` is recomputed every iteration and the
//! run stops as soon as it drops below `ε`.

use std::fmt;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::agent_estimator::DataPoint;
use crate::fusion_center::{build_download_operator, download_normalization, DownloadOperator, FusionSpace};
use crate::rkhs_core::{Domain, Feature, RkhsError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// `c · n`
    Linear(f64),
    /// `base · ratioⁿ`
    Geometric { base: f64, ratio: f64 },
}

impl Schedule {
    pub fn value(&self, n: usize) -> f64 {
        match *self {
            Schedule::Constant(c) => c,
            Schedule::Linear(c) => c * n as f64,
            Schedule::Geometric { base, ratio } => base * ratio.powf(n as f64),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        match *self {
            Schedule::Constant(c) | Schedule::Linear(c) if ok(c) => Ok(()),
            Schedule::Geometric { base, ratio } if ok(base) && ok(ratio) => Ok(()),
            _ => Err(format!("schedule {self} must have positive finite parameters")),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Constant(c) => write!(f, "constant({c:?})"),
            Schedule::Linear(c) => write!(f, "linear({c:?})"),
            Schedule::Geometric { base, ratio } => write!(f, "geometric({base:?}, {ratio:?})"),
        }
    }
}

/// Which regularization value feeds the data reconstruction of agent `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructionRho {
    /// The agent's own `ϱⁱₙ`.
    Agent,
    /// The fusion value `ϱₙ`.
    Fusion,
}

impl fmt::Display for ReconstructionRho {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReconstructionRho::Agent => "agent",
            ReconstructionRho::Fusion => "fusion",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub epsilon: f64,
    pub k_max: usize,
    pub max_iterations: usize,
    pub agent_rho: [Schedule; 2],
    pub fusion_rho: Schedule,
    pub normalize_download: bool,
    pub reconstruction: ReconstructionRho,
    pub seed: u64,
    /// Initial agent coefficients; `None` means the zero function.
    pub initial: [Option<Vec<f64>>; 2],
    /// Index of the first iteration, used when resuming.
    pub first_iteration: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = Schedule::Geometric { base: 10.0, ratio: 2.0 };
        RunConfig {
            epsilon: 1e-3,
            k_max: 5,
            max_iterations: 10_000,
            agent_rho: [g, g],
            fusion_rho: g,
            normalize_download: true,
            reconstruction: ReconstructionRho::Agent,
            seed: 0,
            initial: [None, None],
            first_iteration: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        let bad = |m: String| Err(RuntimeError::InvalidConfig(m));
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.k_max == 0 {
            return bad("k_max must be at least 1".into());
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        if self.first_iteration == 0 {
            return bad("first_iteration must be at least 1".into());
        }
        for s in self.agent_rho.iter().chain(std::iter::once(&self.fusion_rho)) {
            s.validate().map_err(RuntimeError::InvalidConfig)?;
        }
        Ok(())
    }

    /// `[ϱ¹ₙ, ϱ²ₙ, ϱₙ]`.
    pub fn rhos(&self, n: usize) -> [f64; 3] {
        [self.agent_rho[0].value(n), self.agent_rho[1].value(n), self.fusion_rho.value(n)]
    }
}

/// Linear combination of named features.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueFunction {
    pub terms: Vec<(f64, Feature)>,
}

impl TrueFunction {
    pub fn eval(&self, x: f64) -> f64 {
        self.terms.iter().map(|(c, f)| c * f.eval(x)).sum()
    }
}

/// Seeded synthetic data: `x` uniform on the agent's domain, `y = f*(x) + σ ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataGenerator {
    pub truth: TrueFunction,
    pub sigma: f64,
    pub domains: [Domain; 2],
    pub seed: u64,
}

impl DataGenerator {
    /// Point for `agent` (0-based) at iteration `n`. Each `(n, agent)` pair has
    /// its own random stream, so any iteration can be regenerated alone.
    pub fn point(&self, agent: usize, n: usize) -> DataPoint {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 * n as u64 + agent as u64);
        let domain = &self.domains[agent];
        let total = domain.length();
        let pieces = domain.pieces();
        let x = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = pieces[pieces.len() - 1];
            for &(lo, hi) in pieces {
                if u <= hi - lo {
                    chosen = (lo, hi);
                    break;
                }
                u -= hi - lo;
            }
            let (lo, hi) = chosen;
            (lo + rng.random::<f64>() * (hi - lo)).clamp(lo, hi)
        } else {
            pieces[rng.random_range(0..pieces.len())].0
        };
        let noise: f64 = rng.sample(StandardNormal);
        DataPoint { x, y: self.truth.eval(x) + self.sigma * noise }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Recorded([Vec<DataPoint>; 2]),
    Generated(DataGenerator),
}

impl DataSource {
    /// Data point for `agent` at iteration `n ≥ 1`.
    pub fn point(&self, agent: usize, n: usize) -> Option<DataPoint> {
        match self {
            DataSource::Recorded(lists) => n.checked_sub(1).and_then(|i| lists[agent].get(i).copied()),
            DataSource::Generated(g) => Some(g.point(agent, n)),
        }
    }
}

/// Everything the loop needs that does not change between iterations.
#[derive(Debug, Clone)]
pub struct System {
    pub space: FusionSpace,
    pub downloads: [DownloadOperator; 2],
    /// Download normalization constant `c_d`.
    pub c_d: f64,
}

impl System {
    pub fn new(space: FusionSpace) -> Result<Self, RkhsError> {
        let d1 = build_download_operator(&space, 0)?;
        let d2 = build_download_operator(&space, 1)?;
        let c_d = download_normalization(&d1, &d2);
        Ok(System { space, downloads: [d1, d2], c_d })
    }

    pub fn m(&self) -> usize {
        self.space.m()
    }

    /// Sum of the two agent-space norms of `a − b`.
    pub fn pair_distance(&self, a: &[DVector<f64>; 2], b: &[DVector<f64>; 2]) -> f64 {
        (0..2).map(|i| self.space.agent(i).norm(&(&a[i] - &b[i]))).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub n: usize,
    pub data: [DataPoint; 2],
    /// `[ϱ¹ₙ, ϱ²ₙ, ϱₙ]`.
    pub rho: [f64; 3],
    /// Local estimates `αⁱₙ`.
    pub local: [DVector<f64>; 2],
    /// Uploaded coefficients `Mⁱ αⁱₙ`.
    pub uploaded: [DVector<f64>; 2],
    /// Reconstructed outputs `𝐘̂ₙ`, agent 1 first.
    pub reconstructed: DVector<f64>,
    /// Fused coefficients `αₙ` over both anchor sets.
    pub fused: DVector<f64>,
    /// Downloaded coefficients `ᾱⁱₙ`.
    pub downloaded: [DVector<f64>; 2],
    /// `‖f̄ⁱₙ − f̄ⁱₙ₋₁‖` per agent.
    pub step_norms: [f64; 2],
    pub window_stat: Option<f64>,
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("no stop after {0} iterations")]
    MaxIterationsExceeded(usize),
    #[error("iteration {iteration}: {source}")]
    Numerical { iteration: usize, source: RkhsError },
    #[error("iteration {iteration}: estimates are no longer finite")]
    NonFinite { iteration: usize },
    #[error("iteration {iteration}: regularization schedule overflowed")]
    ScheduleOverflow { iteration: usize },
    #[error("iteration {iteration}: no data for agent {}", agent + 1)]
    DataExhausted { agent: usize, iteration: usize },
    #[error("window needs {k_max} iterations, only {n} done")]
    WindowNotFilled { n: usize, k_max: usize },
}

/// Output of a completed or interrupted run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: [DVector<f64>; 2],
    pub records: Vec<IterationRecord>,
}

impl Trajectory {
    /// Downloaded estimates: the initial pair, then one pair per record.
    pub fn history(&self) -> Vec<[DVector<f64>; 2]> {
        std::iter::once(self.initial.clone()).chain(self.records.iter().map(|r| r.downloaded.clone())).collect()
    }

    pub fn last_estimates(&self) -> [DVector<f64>; 2] {
        self.records.last().map(|r| r.downloaded.clone()).unwrap_or_else(|| self.initial.clone())
    }
}

/// A run that ended with an error, with the iterations completed before it.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct RunFailure {
    #[source]
    pub error: RuntimeError,
    pub trajectory: Trajectory,
}

fn initial_estimates(config: &RunConfig, system: &System) -> Result<[DVector<f64>; 2], RuntimeError> {
    let m = system.m();
    let mut out = [DVector::zeros(m), DVector::zeros(m)];
    for (i, init) in config.initial.iter().enumerate() {
        if let Some(v) = init {
            if v.len() != m {
                return Err(RuntimeError::InvalidConfig(format!(
                    "initial estimate for agent {} has {} coefficients, expected {m}",
                    i + 1,
                    v.len()
                )));
            }
            out[i] = DVector::from_column_slice(v);
        }
    }
    Ok(out)
}

/// One iteration from the previous downloaded estimates and the new data.
pub fn iterate(
    system: &System,
    config: &RunConfig,
    prior: &[DVector<f64>; 2],
    data: [DataPoint; 2],
    n: usize,
) -> Result<IterationRecord, RuntimeError> {
    let rho = config.rhos(n);
    if rho.iter().any(|r| !r.is_finite()) {
        return Err(RuntimeError::ScheduleOverflow { iteration: n });
    }
    let numerical = |source| RuntimeError::Numerical { iteration: n, source };
    let space = &system.space;
    let m = space.m();
    let mut local = Vec::with_capacity(2);
    for i in 0..2 {
        local.push(space.agent(i).local_estimate_coeffs(&prior[i], data[i], rho[i]).map_err(numerical)?);
    }
    let uploaded = [space.upload_coeffs(0, &local[0]), space.upload_coeffs(1, &local[1])];
    let mut reconstructed = DVector::zeros(2 * m);
    for i in 0..2 {
        let r = match config.reconstruction {
            ReconstructionRho::Agent => rho[i],
            ReconstructionRho::Fusion => rho[2],
        };
        let g = space.agent(i).gram();
        let y = g * &local[i] + &local[i] * r;
        reconstructed.rows_mut(i * m, m).copy_from(&y);
    }
    let fused = space.fuse_coeffs(&reconstructed, rho[2]).map_err(numerical)?;
    let b = space.phi_coords(&fused);
    let scale = if config.normalize_download { 1.0 / system.c_d } else { 1.0 };
    let downloaded = [
        system.downloads[0].apply_closed_form(&b) * scale,
        system.downloads[1].apply_closed_form(&b) * scale,
    ];
    let finite = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
    if !downloaded.iter().all(finite) || !finite(&fused) {
        return Err(RuntimeError::NonFinite { iteration: n });
    }
    let step_norms = [
        space.agent(0).norm(&(&downloaded[0] - &prior[0])),
        space.agent(1).norm(&(&downloaded[1] - &prior[1])),
    ];
    if !step_norms.iter().all(|v| v.is_finite()) {
        return Err(RuntimeError::NonFinite { iteration: n });
    }
    let [l1, l2]: [DVector<f64>; 2] = local.try_into().expect("two agents");
    Ok(IterationRecord {
        n,
        data,
        rho,
        local: [l1, l2],
        uploaded,
        reconstructed,
        fused,
        downloaded,
        step_norms,
        window_stat: None,
        stop: false,
    })
}

/// Maximum that lets NaN through instead of skipping it.
fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// `max_{j=1..k} Σᵢ ‖f̄ⁱ_{n−k+j} − f̄ⁱ_{n−k}‖`, where `history[j]` holds the
/// estimates after `j` iterations and `history[0]` the initial pair.
pub fn window_statistic(
    system: &System,
    history: &[[DVector<f64>; 2]],
    n: usize,
    k_max: usize,
) -> Result<f64, RuntimeError> {
    if n < k_max || k_max == 0 || n >= history.len() {
        return Err(RuntimeError::WindowNotFilled { n, k_max });
    }
    let base = &history[n - k_max];
    Ok((1..=k_max).map(|j| system.pair_distance(&history[n - k_max + j], base)).fold(0.0, nan_max))
}

/// Largest `Σᵢ ‖f̄ⁱ_{a} − f̄ⁱ_{b}‖` over all pairs in the window ending at `n`.
pub fn window_pair_max(system: &System, history: &[[DVector<f64>; 2]], n: usize, k_max: usize) -> f64 {
    let lo = n.saturating_sub(k_max);
    let mut worst: f64 = 0.0;
    for a in lo..=n {
        for b in a + 1..=n {
            worst = nan_max(worst, system.pair_distance(&history[a], &history[b]));
        }
    }
    worst
}

/// Runs until the window statistic falls below `ε` or a limit is hit.
pub fn run(config: &RunConfig, source: &DataSource, system: &System) -> Result<Trajectory, RunFailure> {
    let empty = |error, initial: [DVector<f64>; 2]| RunFailure { error, trajectory: Trajectory { initial, records: vec![] } };
    let m = system.m();
    if let Err(e) = config.validate() {
        return Err(empty(e, [DVector::zeros(m), DVector::zeros(m)]));
    }
    let initial = match initial_estimates(config, system) {
        Ok(v) => v,
        Err(e) => return Err(empty(e, [DVector::zeros(m), DVector::zeros(m)])),
    };
    let mut history = vec![initial.clone()];
    let mut records: Vec<IterationRecord> = Vec::new();
    let fail = |error, records: Vec<IterationRecord>| RunFailure {
        error,
        trajectory: Trajectory { initial: initial.clone(), records },
    };
    for done in 1..=config.max_iterations {
        let n = config.first_iteration + done - 1;
        let mut data = [DataPoint { x: 0.0, y: 0.0 }; 2];
        for (agent, slot) in data.iter_mut().enumerate() {
            match source.point(agent, n) {
                Some(p) => *slot = p,
                None => return Err(fail(RuntimeError::DataExhausted { agent, iteration: n }, records)),
            }
        }
        let prior = history.last().expect("history starts non-empty");
        let mut rec = match iterate(system, config, prior, data, n) {
            Ok(r) => r,
            Err(e) => return Err(fail(e, records)),
        };
        history.push(rec.downloaded.clone());
        if done >= config.k_max {
            let stat = window_statistic(system, &history, done, config.k_max).expect("window is filled");
            if !stat.is_finite() {
                return Err(fail(RuntimeError::NonFinite { iteration: n }, records));
            }
            rec.window_stat = Some(stat);
            rec.stop = stat < config.epsilon;
        }
        let stop = rec.stop;
        records.push(rec);
        if stop {
            return Ok(Trajectory { initial, records });
        }
    }
    Err(fail(RuntimeError::MaxIterationsExceeded(config.max_iterations), records))
}
