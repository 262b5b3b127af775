//! Browser bindings. Each exported function takes configuration text and
//! returns a text report or an HTML fragment; the pure `*_inner` versions
//! are what the native tests exercise.

use kernfuse::agent_estimator::agent_operator_norm;
use kernfuse::harness::experiment::{functions_chart, rmse_chart};
use kernfuse::harness::svg::{LineChart, Series};
use kernfuse::harness::{assemble, dump_operators, generate_data, parse_config, simulate, ExperimentConfig, BUNDLED_CONFIG};
use kernfuse::operator_analysis::fusion_operator_norm;
use wasm_bindgen::prelude::*;

/// Iteration cap applied to in-browser runs.
pub const MAX_DEMO_ITERATIONS: u32 = 2000;

const SWEEP_POINTS: usize = 21;

fn load(text: &str) -> Result<ExperimentConfig, String> {
    parse_config(text).map_err(|e| e.to_string())
}

pub fn operator_report_inner(config: &str) -> Result<String, String> {
    dump_operators(&load(config)?).map_err(|e| e.to_string())
}

/// Agent and fusion operator norms over `ρ = 10^lo .. 10^hi`, as an SVG chart.
pub fn norm_sweep_inner(config: &str, lo: f64, hi: f64) -> Result<String, String> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(format!("need lo < hi, got {lo} and {hi}"));
    }
    if lo < -6.0 || hi > 12.0 {
        return Err("exponents must lie in -6..12".into());
    }
    let cfg = load(config)?;
    let system = assemble(&cfg).map_err(|e| e.to_string())?.system;
    let space = &system.space;
    let mut series = vec![Series::new("agent 1", vec![]), Series::new("agent 2", vec![]), Series::new("fusion", vec![])];
    for k in 0..SWEEP_POINTS {
        let e = lo + (hi - lo) * k as f64 / (SWEEP_POINTS - 1) as f64;
        let rho = 10f64.powf(e);
        for i in 0..2 {
            let agent = space.agent(i);
            let n = agent_operator_norm(agent, rho, agent.grid()).map_err(|e| e.to_string())?;
            series[i].points.push((e, n.norm));
        }
        let t = fusion_operator_norm(space, rho).map_err(|e| e.to_string())?;
        series[2].points.push((e, t.norm));
    }
    let chart = LineChart {
        title: "Operator norms".into(),
        x_label: "log10(rho)".into(),
        y_label: "norm".into(),
        log_y: true,
        series,
    };
    Ok(chart.render(720, 420))
}

/// Runs the configuration with `seed` for at most `iterations` steps and
/// returns a summary line followed by the two charts.
pub fn simulate_inner(config: &str, seed: u32, iterations: u32) -> Result<String, String> {
    if iterations == 0 || iterations > MAX_DEMO_ITERATIONS {
        return Err(format!("iterations must be in 1..={MAX_DEMO_ITERATIONS}"));
    }
    let mut cfg = load(config)?;
    cfg.run.seed = u64::from(seed);
    cfg.run.max_iterations = iterations as usize;
    let system = assemble(&cfg).map_err(|e| e.to_string())?.system;
    let source = generate_data(&cfg, cfg.run.seed);
    let sim = simulate(&cfg, &system, &source);
    let best = match sim.best_fused() {
        Some(r) => format!("; lowest fused RMSE {:.4e} at n = {}", r.rmse_fused, r.n),
        None => String::new(),
    };
    let summary = format!("{} iterations, {}{best}", sim.metrics.len(), sim.stop_reason());
    Ok(format!(
        "<p>{}</p>\n{}{}",
        summary.replace('&', "&amp;").replace('<', "&lt;"),
        functions_chart(&sim).render(720, 420),
        rmse_chart(&sim).render(720, 420)
    ))
}

#[wasm_bindgen]
pub fn bundled_config() -> String {
    BUNDLED_CONFIG.to_string()
}

#[wasm_bindgen]
pub fn operator_report(config: &str) -> Result<String, JsError> {
    operator_report_inner(config).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn norm_sweep(config: &str, lo: f64, hi: f64) -> Result<String, JsError> {
    norm_sweep_inner(config, lo, hi).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = simulate)]
pub fn simulate_run(config: &str, seed: u32, iterations: u32) -> Result<String, JsError> {
    simulate_inner(config, seed, iterations).map_err(|e| JsError::new(&e))
}
