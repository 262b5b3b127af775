//! Experiment configuration files.
//!
//! ```text
//! # comment
//! [agent1]
//! features = constant, monomial(1), monomial(2)
//! domain = -5..5
//! anchors = 0, 2, 4, -2, -4
//!
//! [agent2]
//! features = exp(-1), exp(+1)
//! domain = -10..-5 | 5..10
//! anchor_pool = grid(50)
//!
//! [run]
//! epsilon = 1e-3
//! ```
//!
//! Sections are `agent1`, `agent2`, `fusion`, `run`, `data` and `output`.
//! Lists are comma separated; commas inside parentheses do not split.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::learning_runtime::{ReconstructionRho, RunConfig, Schedule, TrueFunction};
use crate::operator_analysis::GramNormalization;
use crate::rkhs_core::{Domain, Feature};

pub const SECTIONS: [&str; 6] = ["agent1", "agent2", "fusion", "run", "data", "output"];

const AGENT_KEYS: [&str; 6] = ["features", "domain", "anchors", "anchor_pool", "rho", "initial"];
const AGENT_KEYS_EXTRA: [&str; 1] = ["norm_grid_points"];
const FUSION_KEYS: [&str; 4] = ["rho", "normalize_gram", "normalize_download", "reconstruction_rho"];
const RUN_KEYS: [&str; 5] = ["epsilon", "k_max", "max_iterations", "seed", "first_iteration"];
const DATA_KEYS: [&str; 2] = ["truth", "noise_sigma"];
const OUTPUT_KEYS: [&str; 3] = ["dir", "grid_points", "plots"];

pub const DEFAULT_TRUTH: &str = "2 * constant, 1 * monomial(1), -0.5 * monomial(2)";
pub const DEFAULT_SIGMA: f64 = 0.1;
pub const DEFAULT_NORM_GRID: usize = 256;
pub const DEFAULT_EVAL_GRID: usize = 401;
pub const DEFAULT_OUTPUT_DIR: &str = "kernfuse-out";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{field}: {message}")]
    Validation { field: String, message: String },
}

impl ConfigError {
    fn parse(line: usize, message: impl Into<String>) -> Self {
        ConfigError::Parse { line, message: message.into() }
    }

    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Validation { field: field.into(), message: message.into() }
    }
}

/// Every problem found in one configuration file.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

/// Where an agent's anchors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum AnchorSpec {
    Points(Vec<f64>),
    /// Explicit candidate pool for greedy selection.
    Pool(Vec<f64>),
    /// `n` evenly spaced candidates per domain interval.
    PoolGrid(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub features: Vec<Feature>,
    pub domain: Domain,
    pub anchors: AnchorSpec,
    pub rho: Schedule,
    pub initial: Option<Vec<f64>>,
    /// Points per domain interval for norm sweeps and agent RMSE.
    pub norm_grid_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub rho: Schedule,
    pub normalize_gram: Option<GramNormalization>,
    pub normalize_download: bool,
    pub reconstruction: ReconstructionRho,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub truth: TrueFunction,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub grid_points: usize,
    pub plots: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub agents: [AgentConfig; 2],
    pub fusion: FusionConfig,
    pub run: RunConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
    /// Non-fatal findings, such as anchors shared by both agents.
    pub warnings: Vec<String>,
}

impl ExperimentConfig {
    /// Union of both agents' domains.
    pub fn input_space(&self) -> Domain {
        self.agents[0].domain.union(&self.agents[1].domain)
    }
}

struct Entry {
    line: usize,
    value: String,
}

type Sections = BTreeMap<String, BTreeMap<String, Entry>>;

fn allowed_keys(section: &str) -> Vec<&'static str> {
    match section {
        "agent1" | "agent2" => AGENT_KEYS.iter().chain(&AGENT_KEYS_EXTRA).copied().collect(),
        "fusion" => FUSION_KEYS.to_vec(),
        "run" => RUN_KEYS.to_vec(),
        "data" => DATA_KEYS.to_vec(),
        "output" => OUTPUT_KEYS.to_vec(),
        _ => vec![],
    }
}

fn is_snake_case(key: &str) -> bool {
    !key.is_empty()
        && key.starts_with(|c: char| c.is_ascii_lowercase())
        && key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn read_sections(text: &str, errors: &mut Vec<ConfigError>) -> Sections {
    let mut sections = Sections::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                errors.push(ConfigError::parse(line, "unterminated section header"));
                current = None;
                continue;
            };
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                errors.push(ConfigError::parse(line, format!("unknown section [{name}]")));
                current = None;
                continue;
            }
            if sections.contains_key(name) {
                errors.push(ConfigError::parse(line, format!("section [{name}] appears twice")));
            }
            sections.entry(name.to_string()).or_default();
            current = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            errors.push(ConfigError::parse(line, "expected `key = value`"));
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        let Some(section) = current.as_deref() else {
            errors.push(ConfigError::parse(line, format!("key `{key}` outside any section")));
            continue;
        };
        if !is_snake_case(key) {
            errors.push(ConfigError::parse(line, format!("key `{key}` is not lowercase snake_case")));
            continue;
        }
        if !allowed_keys(section).contains(&key) {
            errors.push(ConfigError::parse(line, format!("unknown key `{key}` in [{section}]")));
            continue;
        }
        if value.is_empty() {
            errors.push(ConfigError::parse(line, format!("key `{key}` has no value")));
            continue;
        }
        let map = sections.get_mut(section).expect("section was inserted");
        if map.contains_key(key) {
            errors.push(ConfigError::parse(line, format!("key `{key}` repeated in [{section}]")));
            continue;
        }
        map.insert(key.to_string(), Entry { line, value: value.to_string() });
    }
    sections
}

/// Splits on commas that are not inside parentheses.
pub fn split_list(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    out.push(cur.trim().to_string());
    out
}

pub fn parse_number(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{}` is not a number", s.trim()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{}` is not finite", s.trim()))
    }
}

pub fn parse_numbers(s: &str) -> Result<Vec<f64>, String> {
    split_list(s).iter().map(|p| parse_number(p)).collect()
}

fn call_args<'a>(s: &'a str, name: &str) -> Option<&'a str> {
    s.strip_prefix(name)?.trim_start().strip_prefix('(')?.strip_suffix(')')
}

pub fn parse_feature(s: &str) -> Result<Feature, String> {
    let s = s.trim();
    if s == "constant" {
        return Ok(Feature::Constant);
    }
    if let Some(arg) = call_args(s, "monomial") {
        let k: u32 = arg.trim().parse().map_err(|_| format!("bad monomial degree `{}`", arg.trim()))?;
        return Ok(if k == 0 { Feature::Constant } else { Feature::Monomial(k) });
    }
    if let Some(arg) = call_args(s, "exp") {
        return match arg.trim() {
            "+1" | "1" => Ok(Feature::ExpPos),
            "-1" => Ok(Feature::ExpNeg),
            other => Err(format!("exp takes +1 or -1, got `{other}`")),
        };
    }
    Err(format!("unknown feature `{s}`"))
}

/// `lo..hi` pieces joined by `|`.
pub fn parse_domain(s: &str) -> Result<Domain, String> {
    let mut pieces = Vec::new();
    for part in s.split('|') {
        let (lo, hi) = part.split_once("..").ok_or_else(|| format!("interval `{}` needs `lo..hi`", part.trim()))?;
        let lo = parse_number(lo)?;
        let hi = parse_number(hi)?;
        if lo > hi {
            return Err(format!("interval {lo}..{hi} is reversed"));
        }
        pieces.push((lo, hi));
    }
    Domain::new(pieces).map_err(|e| e.to_string())
}

/// `constant(c)`, `linear(c)`, `geometric(base, ratio)` or a bare number.
pub fn parse_schedule(s: &str) -> Result<Schedule, String> {
    let s = s.trim();
    let schedule = if let Some(arg) = call_args(s, "constant") {
        Schedule::Constant(parse_number(arg)?)
    } else if let Some(arg) = call_args(s, "linear") {
        Schedule::Linear(parse_number(arg)?)
    } else if let Some(arg) = call_args(s, "geometric") {
        match parse_numbers(arg)?.as_slice() {
            &[base, ratio] => Schedule::Geometric { base, ratio },
            _ => return Err("geometric takes (base, ratio)".into()),
        }
    } else {
        Schedule::Constant(parse_number(s).map_err(|_| format!("unknown schedule `{s}`"))?)
    };
    Ok(schedule)
}

/// `coef * feature` terms; a bare feature has coefficient 1.
pub fn parse_truth(s: &str) -> Result<TrueFunction, String> {
    let mut terms = Vec::new();
    for term in split_list(s) {
        let (c, f) = match term.split_once('*') {
            Some((c, f)) => (parse_number(c)?, f),
            None => (1.0, term.as_str()),
        };
        terms.push((c, parse_feature(f)?));
    }
    Ok(TrueFunction { terms })
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim() {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        other => Err(format!("`{other}` is not a boolean")),
    }
}

fn parse_count(s: &str) -> Result<usize, String> {
    s.trim().parse().map_err(|_| format!("`{}` is not a non-negative integer", s.trim()))
}

fn parse_anchor_pool(s: &str) -> Result<AnchorSpec, String> {
    match call_args(s.trim(), "grid") {
        Some(arg) => Ok(AnchorSpec::PoolGrid(parse_count(arg)?)),
        None => Ok(AnchorSpec::Pool(parse_numbers(s)?)),
    }
}

/// Typed access to one section with error collection.
struct Reader<'a> {
    section: &'a str,
    entries: Option<&'a BTreeMap<String, Entry>>,
    errors: &'a mut Vec<ConfigError>,
}

impl Reader<'_> {
    fn field(&self, key: &str) -> String {
        format!("{}.{key}", self.section)
    }

    fn has(&self, key: &str) -> bool {
        self.entries.is_some_and(|e| e.contains_key(key))
    }

    fn get<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Option<T> {
        let entry = self.entries?.get(key)?;
        match parse(&entry.value) {
            Ok(v) => Some(v),
            Err(msg) => {
                self.errors.push(ConfigError::parse(entry.line, format!("{}: {msg}", self.field(key))));
                None
            }
        }
    }

    fn required<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Option<T> {
        if !self.has(key) {
            let field = self.field(key);
            self.errors.push(ConfigError::invalid(field, "required"));
            return None;
        }
        self.get(key, parse)
    }

    fn invalid(&mut self, key: &str, message: impl Into<String>) {
        let field = self.field(key);
        self.errors.push(ConfigError::invalid(field, message));
    }
}

fn read_agent(sections: &Sections, name: &str, errors: &mut Vec<ConfigError>) -> Option<AgentConfig> {
    if !sections.contains_key(name) {
        errors.push(ConfigError::invalid(name, "section is missing"));
        return None;
    }
    let mut r = Reader { section: name, entries: sections.get(name), errors };
    let features = r.required("features", |s| split_list(s).iter().map(|f| parse_feature(f)).collect());
    let domain = r.required("domain", parse_domain);
    let anchors = match (r.has("anchors"), r.has("anchor_pool")) {
        (true, true) => {
            r.invalid("anchors", "give either anchors or anchor_pool, not both");
            None
        }
        (true, false) => r.get("anchors", parse_numbers).map(AnchorSpec::Points),
        (false, true) => r.get("anchor_pool", parse_anchor_pool),
        (false, false) => {
            r.invalid("anchors", "required (or anchor_pool)");
            None
        }
    };
    let rho = r.get("rho", parse_schedule).unwrap_or(Schedule::Geometric { base: 10.0, ratio: 2.0 });
    if let Err(msg) = rho.validate() {
        r.invalid("rho", msg);
    }
    let initial = r.get("initial", parse_numbers);
    let norm_grid_points = r.get("norm_grid_points", parse_count).unwrap_or(DEFAULT_NORM_GRID);
    if norm_grid_points < 2 {
        r.invalid("norm_grid_points", "must be at least 2");
    }
    if let Some(AnchorSpec::Points(p)) = &anchors {
        check_distinct(p, &mut r, "anchors");
    }
    if let Some(AnchorSpec::PoolGrid(0)) = &anchors {
        r.invalid("anchor_pool", "grid size must be positive");
    }
    Some(AgentConfig {
        features: features?,
        domain: domain?,
        anchors: anchors?,
        rho,
        initial,
        norm_grid_points,
    })
}

fn check_distinct(points: &[f64], r: &mut Reader<'_>, key: &str) {
    for (i, a) in points.iter().enumerate() {
        if points[..i].contains(a) {
            r.invalid(key, format!("anchor {a} listed twice"));
        }
    }
}

fn read_fusion(sections: &Sections, errors: &mut Vec<ConfigError>) -> FusionConfig {
    let mut r = Reader { section: "fusion", entries: sections.get("fusion"), errors };
    let rho = r.get("rho", parse_schedule).unwrap_or(Schedule::Geometric { base: 10.0, ratio: 2.0 });
    if let Err(msg) = rho.validate() {
        r.invalid("rho", msg);
    }
    let normalize_gram = r
        .get("normalize_gram", |s| match s.trim() {
            "none" | "false" | "off" => Ok(None),
            "full" | "true" | "on" => Ok(Some(GramNormalization::Full)),
            "blocks" => Ok(Some(GramNormalization::Blocks)),
            other => Err(format!("expected none, full or blocks, got `{other}`")),
        })
        .flatten();
    let normalize_download = r.get("normalize_download", parse_bool).unwrap_or(true);
    let reconstruction = r
        .get("reconstruction_rho", |s| match s.trim() {
            "agent" => Ok(ReconstructionRho::Agent),
            "fusion" => Ok(ReconstructionRho::Fusion),
            other => Err(format!("expected agent or fusion, got `{other}`")),
        })
        .unwrap_or(ReconstructionRho::Agent);
    FusionConfig { rho, normalize_gram, normalize_download, reconstruction }
}

fn read_run(sections: &Sections, errors: &mut Vec<ConfigError>) -> Option<RunConfig> {
    let mut r = Reader { section: "run", entries: sections.get("run"), errors };
    let defaults = RunConfig::default();
    let epsilon = r.required("epsilon", parse_number);
    if epsilon.is_some_and(|e| e <= 0.0) {
        r.invalid("epsilon", "must be positive");
    }
    let k_max = r.get("k_max", parse_count).unwrap_or(defaults.k_max);
    if k_max == 0 {
        r.invalid("k_max", "must be at least 1");
    }
    let max_iterations = r.get("max_iterations", parse_count).unwrap_or(defaults.max_iterations);
    if max_iterations == 0 {
        r.invalid("max_iterations", "must be at least 1");
    }
    let seed = r.get("seed", |s| s.trim().parse::<u64>().map_err(|_| format!("`{}` is not a seed", s.trim())));
    let first_iteration = r.get("first_iteration", parse_count).unwrap_or(defaults.first_iteration);
    if first_iteration == 0 {
        r.invalid("first_iteration", "must be at least 1");
    }
    Some(RunConfig {
        epsilon: epsilon?,
        k_max,
        max_iterations,
        seed: seed.unwrap_or(defaults.seed),
        first_iteration,
        ..defaults
    })
}

fn read_data(sections: &Sections, errors: &mut Vec<ConfigError>) -> DataConfig {
    let mut r = Reader { section: "data", entries: sections.get("data"), errors };
    let truth = r.get("truth", parse_truth).unwrap_or_else(|| parse_truth(DEFAULT_TRUTH).expect("default truth parses"));
    let noise_sigma = r.get("noise_sigma", parse_number).unwrap_or(DEFAULT_SIGMA);
    if noise_sigma < 0.0 {
        r.invalid("noise_sigma", "must be non-negative");
    }
    DataConfig { truth, noise_sigma }
}

fn read_output(sections: &Sections, errors: &mut Vec<ConfigError>) -> OutputConfig {
    let mut r = Reader { section: "output", entries: sections.get("output"), errors };
    let dir = r.get("dir", |s| Ok(PathBuf::from(s.trim()))).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    let grid_points = r.get("grid_points", parse_count).unwrap_or(DEFAULT_EVAL_GRID);
    if grid_points < 2 {
        r.invalid("grid_points", "must be at least 2");
    }
    let plots = r.get("plots", parse_bool).unwrap_or(false);
    OutputConfig { dir, grid_points, plots }
}

/// Parses and validates a configuration file.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let mut errors = Vec::new();
    let sections = read_sections(text, &mut errors);
    let a1 = read_agent(&sections, "agent1", &mut errors);
    let a2 = read_agent(&sections, "agent2", &mut errors);
    let fusion = read_fusion(&sections, &mut errors);
    let run = read_run(&sections, &mut errors);
    let data = read_data(&sections, &mut errors);
    let output = read_output(&sections, &mut errors);

    let mut warnings = Vec::new();
    if let (Some(a1), Some(a2)) = (&a1, &a2) {
        let space = a1.domain.union(&a2.domain);
        for (name, a) in [("agent1", a1), ("agent2", a2)] {
            let points = match &a.anchors {
                AnchorSpec::Points(p) | AnchorSpec::Pool(p) => p.as_slice(),
                AnchorSpec::PoolGrid(_) => &[],
            };
            for &p in points {
                if !space.contains(p) {
                    errors.push(ConfigError::invalid(
                        format!("{name}.anchors"),
                        format!("anchor {p} lies outside the input space"),
                    ));
                }
            }
        }
        if let (AnchorSpec::Points(p1), AnchorSpec::Points(p2)) = (&a1.anchors, &a2.anchors) {
            let shared: Vec<String> = p1.iter().filter(|p| p2.contains(p)).map(|p| p.to_string()).collect();
            if !shared.is_empty() {
                warnings.push(format!("anchors shared by both agents: {}", shared.join(", ")));
            }
        }
    }

    if !errors.is_empty() {
        return Err(ConfigErrors(errors));
    }
    let (Some(a1), Some(a2), Some(mut run)) = (a1, a2, run) else {
        unreachable!("missing pieces always record an error");
    };
    run.agent_rho = [a1.rho, a2.rho];
    run.fusion_rho = fusion.rho;
    run.normalize_download = fusion.normalize_download;
    run.reconstruction = fusion.reconstruction;
    run.initial = [a1.initial.clone(), a2.initial.clone()];
    Ok(ExperimentConfig { agents: [a1, a2], fusion, run, data, output, warnings })
}
