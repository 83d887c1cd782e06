//! Study configuration, dispatch and report output for the command-line tool.
//!
//! Configs are flat `key = value` sections; see the README for the grammar.
//! Reports are long-format rows `study,level,metric,value,verdict,wall_time_ms`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::time::Instant;

use crate::error::Error;
use crate::fem::{self, Coefficient, EllipticProblem};
use crate::forward::{
    make_quadrature_family, uniform_gap, DomainSpec, IntegralOperator, Kernel, OperatorFamily, OperatorHandle,
};
use crate::gamma::{self, CauchyCriterion, ChainMode};
use crate::solve::{self, SolveConfig, StepRule};
use crate::space::{Grid, GridFunction, NormTag};
use crate::tikhonov::{AlphaSchedule, ApproxSequence, NoiseSchedule, Penalty};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 2;
pub const EXIT_REFUSED: i32 = 3;
pub const EXIT_IO: i32 = 4;

const KERNELS: &[&str] = &["gaussian(sigma)", "constant(kappa)", "separable"];
const OPERATORS: &[&str] = &["quadrature", "exact", "fem"];
const TRUTHS: &[&str] = &["sin-pi", "poly", "zero"];
const SOLUTIONS: &[&str] = &["sin-pi", "poly"];
const DOMAINS: &[&str] = &["whole", "ball(radius)", "ball-nonneg(radius)"];
const ALPHAS: &[&str] = &["constant(alpha)", "power(a, beta)", "offset(alpha, a, beta)"];
const NOISES: &[&str] = &["none", "power(c, gamma)", "random(c, gamma)"];
const PENALTIES: &[&str] = &["half-sq-l2", "power-l2(q)", "power-h10(q)", "linf"];
const EPSILONS: &[&str] = &["power(c, gamma)"];
const FAMILIES: &[&str] = &["oscillating", "constant(c)", "uniform"];
const CHAIN_MODES: &[&str] = &["converged", "early-stop"];
const FORMATS: &[&str] = &["csv", "json-lines"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    FemRate,
    IntegralDemo,
    InfStudy,
    AlphaZero,
    GammaEstimate,
    Coercivity,
    EpsChain,
}

impl StudyKind {
    const ALL: [StudyKind; 7] = [
        StudyKind::FemRate,
        StudyKind::IntegralDemo,
        StudyKind::InfStudy,
        StudyKind::AlphaZero,
        StudyKind::GammaEstimate,
        StudyKind::Coercivity,
        StudyKind::EpsChain,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StudyKind::FemRate => "fem-rate",
            StudyKind::IntegralDemo => "integral-demo",
            StudyKind::InfStudy => "inf-study",
            StudyKind::AlphaZero => "alpha-zero",
            StudyKind::GammaEstimate => "gamma-estimate",
            StudyKind::Coercivity => "coercivity",
            StudyKind::EpsChain => "eps-chain",
        }
    }

    fn default_levels(self) -> Vec<usize> {
        match self {
            StudyKind::FemRate => vec![7, 15, 31, 63, 127],
            StudyKind::AlphaZero => vec![8, 16, 32, 64, 128],
            _ => vec![9, 17, 33, 65],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Gaussian(f64),
    Constant(f64),
    Separable,
}

impl KernelSpec {
    fn build(self) -> crate::Result<Kernel> {
        match self {
            KernelSpec::Gaussian(s) => Kernel::gaussian(s),
            KernelSpec::Constant(k) => Ok(Kernel::constant(k)),
            KernelSpec::Separable => Ok(Kernel::separable()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Quadrature,
    Exact,
    Fem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthSpec {
    SinPi,
    Poly,
    Zero,
}

impl TruthSpec {
    fn eval(self, s: f64) -> f64 {
        match self {
            TruthSpec::SinPi => (PI * s).sin(),
            TruthSpec::Poly => s * (1.0 - s),
            TruthSpec::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainChoice {
    Whole,
    Ball(f64),
    BallNonneg(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    None,
    Power { c: f64, gamma: f64 },
    Random { c: f64, gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltySpec {
    HalfSqL2,
    PowerL2(f64),
    PowerH10(f64),
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaFamily {
    /// `sin(j x)`.
    Oscillating,
    Constant(f64),
    /// `(x - 3)^2 + cos x + 1/j`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    JsonLines,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyParams {
    pub tol: f64,
    pub slope_min: f64,
    pub slope_max: f64,
    pub thresholds: Vec<f64>,
    pub samples: usize,
    pub sample_radius: f64,
    pub cauchy_tail: usize,
    pub cauchy_tol: f64,
    pub value_tol: f64,
    pub chain_mode: ChainMode,
    /// `eps_n = c n^(-gamma)`.
    pub eps: (f64, f64),
    pub family: GammaFamily,
    pub points: Vec<f64>,
    pub radii: Vec<f64>,
    pub window: usize,
    pub grid_nodes: usize,
    pub expected: Option<f64>,
    pub expected_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kernel: KernelSpec,
    pub operator: OperatorKind,
    pub reference_m: usize,
    pub truth: TruthSpec,
    pub potential: f64,
    pub solution: TruthSpec,
    pub domain: DomainChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    pub levels: Vec<usize>,
    pub alpha: AlphaSchedule,
    pub noise: NoiseSpec,
    pub p: f64,
    pub penalty: PenaltySpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub format: OutputFormat,
    pub path: Option<String>,
    pub seed: u64,
    /// Record wall times; off by default so reports are reproducible.
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub study: StudyKind,
    pub params: StudyParams,
    pub problem: ProblemSpec,
    pub schedule: ScheduleSpec,
    pub solver: SolveConfig,
    pub output: OutputSpec,
}

/// One validation problem, with the config line it refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Every problem found in a config.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("\n"))]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "study",
        &[
            "kind", "tol", "slope_min", "slope_max", "thresholds", "samples", "sample_radius", "cauchy_tail",
            "cauchy_tol", "value_tol", "chain_mode", "eps", "family", "points", "radii", "window", "grid_nodes",
            "expected", "expected_tol",
        ],
    ),
    (
        "problem",
        &["kernel", "operator", "reference_m", "truth", "potential", "solution", "domain"],
    ),
    ("schedule", &["levels", "alpha", "noise", "p", "penalty"]),
    (
        "solver",
        &["max_iter", "grad_tol", "restarts", "initial_step", "shrink", "sufficient_decrease"],
    ),
    ("output", &["format", "path", "seed", "timing"]),
];

struct Entries {
    map: BTreeMap<(String, String), (usize, String)>,
    issues: Vec<ConfigIssue>,
}

impl Entries {
    fn issue(&mut self, line: Option<usize>, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            line,
            message: message.into(),
        });
    }

    fn raw(&self, section: &str, key: &str) -> Option<(usize, String)> {
        self.map.get(&(section.to_string(), key.to_string())).cloned()
    }

    /// Parses `section.key` with `parse`, or returns `default` when absent.
    fn get<T>(&mut self, section: &str, key: &str, default: T, parse: impl Fn(&str) -> Result<T, String>) -> T {
        match self.raw(section, key) {
            None => default,
            Some((line, v)) => match parse(&v) {
                Ok(t) => t,
                Err(e) => {
                    self.issue(Some(line), format!("{section}.{key}: {e}"));
                    default
                }
            },
        }
    }

    fn line(&self, section: &str, key: &str) -> Option<usize> {
        self.raw(section, key).map(|(l, _)| l)
    }
}

fn tokenize(text: &str) -> Entries {
    let mut e = Entries {
        map: BTreeMap::new(),
        issues: Vec::new(),
    };
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                e.issue(Some(line), format!("malformed section header {content:?}"));
                section = None;
                continue;
            };
            let name = name.trim();
            if SECTIONS.iter().any(|(s, _)| *s == name) {
                section = Some(name.to_string());
            } else {
                let known: Vec<&str> = SECTIONS.iter().map(|(s, _)| *s).collect();
                e.issue(
                    Some(line),
                    format!("unknown section [{name}]; available: {}", known.join(", ")),
                );
                section = None;
            }
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            e.issue(Some(line), format!("expected key = value, got {content:?}"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(sec) = section.clone() else {
            e.issue(Some(line), format!("key {key:?} outside a known section"));
            continue;
        };
        let keys = SECTIONS.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !keys.contains(&key) {
            e.issue(
                Some(line),
                format!("unknown key {sec}.{key}; available: {}", keys.join(", ")),
            );
            continue;
        }
        let slot = (sec.clone(), key.to_string());
        if let Some((first, _)) = e.map.get(&slot) {
            let first = *first;
            e.issue(Some(line), format!("duplicate key {sec}.{key} (first set on line {first})"));
            continue;
        }
        e.map.insert(slot, (line, value.to_string()));
    }
    e
}

fn number(s: &str) -> Result<f64, String> {
    let ok = !s.is_empty()
        && s.chars().all(|c| c.is_ascii_digit() || matches!(c, '+' | '-' | '.' | 'e' | 'E'))
        && s.chars().any(|c| c.is_ascii_digit());
    match s.parse::<f64>() {
        Ok(v) if ok && v.is_finite() => Ok(v),
        _ => Err(format!("malformed number {s:?}")),
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v = number(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

fn integer(s: &str) -> Result<usize, String> {
    s.parse::<usize>().map_err(|_| format!("malformed integer {s:?}"))
}

fn boolean(s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {s:?}")),
    }
}

fn list<T>(s: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    if s.is_empty() {
        return Err("empty list".into());
    }
    s.split(',').map(|t| item(t.trim())).collect()
}

/// `name` or `name(a, b, ...)` with numeric arguments.
fn call(s: &str) -> Result<(String, Vec<f64>), String> {
    match s.split_once('(') {
        None => Ok((s.to_string(), Vec::new())),
        Some((name, rest)) => {
            let inner = rest
                .strip_suffix(')')
                .ok_or_else(|| format!("missing ')' in {s:?}"))?;
            let args = if inner.trim().is_empty() {
                Vec::new()
            } else {
                list(inner, number)?
            };
            Ok((name.trim().to_string(), args))
        }
    }
}

/// Matches a call against labels of the form `name(arg, ...)`.
fn labelled<T>(s: &str, what: &str, available: &[&str], build: impl Fn(&str, &[f64]) -> Option<T>) -> Result<T, String> {
    let (name, args) = call(s)?;
    build(&name, &args).ok_or_else(|| format!("unknown {what} {s:?}; available: {}", available.join(", ")))
}

fn strictly_increasing(levels: &[usize]) -> bool {
    levels.windows(2).all(|w| w[1] > w[0])
}

/// Parses and validates a config, reporting every problem found.
pub fn parse_config(text: &str) -> Result<StudyConfig, ConfigErrors> {
    let mut e = tokenize(text);

    let study = match e.raw("study", "kind") {
        None => {
            e.issue(None, "missing study.kind");
            None
        }
        Some((line, v)) => {
            let found = StudyKind::ALL.iter().copied().find(|k| k.label() == v);
            if found.is_none() {
                let labels: Vec<&str> = StudyKind::ALL.iter().map(|k| k.label()).collect();
                e.issue(
                    Some(line),
                    format!("unknown study {v:?}; available: {}", labels.join(", ")),
                );
            }
            found
        }
    };
    let kind = study.unwrap_or(StudyKind::FemRate);

    let params = StudyParams {
        tol: e.get("study", "tol", 1e-6, positive),
        slope_min: e.get("study", "slope_min", -2.2, number),
        slope_max: e.get("study", "slope_max", -1.8, number),
        thresholds: e.get("study", "thresholds", vec![0.1, 1.0, 10.0], |s| list(s, positive)),
        samples: e.get("study", "samples", 1000, integer),
        sample_radius: e.get("study", "sample_radius", 3.0, positive),
        cauchy_tail: e.get("study", "cauchy_tail", 3, integer),
        cauchy_tol: e.get("study", "cauchy_tol", 0.05, positive),
        value_tol: e.get("study", "value_tol", 1e-4, positive),
        chain_mode: e.get("study", "chain_mode", ChainMode::Converged, |s| match s {
            "converged" => Ok(ChainMode::Converged),
            "early-stop" => Ok(ChainMode::EarlyStop),
            _ => Err(format!("unknown chain mode {s:?}; available: {}", CHAIN_MODES.join(", "))),
        }),
        eps: e.get("study", "eps", (1.0, 1.0), |s| {
            labelled(s, "epsilon schedule", EPSILONS, |n, a| match (n, a) {
                ("power", [c, g]) if *c > 0.0 && *g > 0.0 => Some((*c, *g)),
                _ => None,
            })
        }),
        family: e.get("study", "family", GammaFamily::Oscillating, |s| {
            labelled(s, "family", FAMILIES, |n, a| match (n, a) {
                ("oscillating", []) => Some(GammaFamily::Oscillating),
                ("constant", [c]) => Some(GammaFamily::Constant(*c)),
                ("uniform", []) => Some(GammaFamily::Uniform),
                _ => None,
            })
        }),
        points: e.get("study", "points", vec![1.0, 2.0, 3.0, 4.0, 5.0], |s| list(s, number)),
        radii: e.get("study", "radii", vec![0.4, 0.2, 0.1, 0.05], |s| list(s, positive)),
        window: e.get("study", "window", 512, integer),
        grid_nodes: e.get("study", "grid_nodes", 4096, integer),
        expected: e.get("study", "expected", None, |s| number(s).map(Some)),
        expected_tol: e.get("study", "expected_tol", 0.05, positive),
    };
    if params.radii.windows(2).any(|w| w[1] >= w[0]) {
        let l = e.line("study", "radii");
        e.issue(l, "radii must be strictly decreasing");
    }
    if params.cauchy_tail < 2 {
        let l = e.line("study", "cauchy_tail");
        e.issue(l, "cauchy_tail must be at least 2");
    }
    if params.slope_min > params.slope_max {
        let l = e.line("study", "slope_max");
        e.issue(l, "slope_min exceeds slope_max");
    }

    let problem = ProblemSpec {
        kernel: e.get("problem", "kernel", KernelSpec::Gaussian(0.2), |s| {
            labelled(s, "kernel", KERNELS, |n, a| match (n, a) {
                ("gaussian", [s]) if *s > 0.0 => Some(KernelSpec::Gaussian(*s)),
                ("constant", [k]) => Some(KernelSpec::Constant(*k)),
                ("separable", []) => Some(KernelSpec::Separable),
                _ => None,
            })
        }),
        operator: e.get("problem", "operator", OperatorKind::Quadrature, |s| match s {
            "quadrature" => Ok(OperatorKind::Quadrature),
            "exact" => Ok(OperatorKind::Exact),
            "fem" => Ok(OperatorKind::Fem),
            _ => Err(format!("unknown operator {s:?}; available: {}", OPERATORS.join(", "))),
        }),
        reference_m: e.get("problem", "reference_m", 513, integer),
        truth: e.get("problem", "truth", TruthSpec::SinPi, |s| truth(s, TRUTHS)),
        potential: e.get("problem", "potential", 1.0, number),
        solution: e.get("problem", "solution", TruthSpec::SinPi, |s| match truth(s, SOLUTIONS) {
            Ok(TruthSpec::Zero) => Err(format!("unknown solution {s:?}; available: {}", SOLUTIONS.join(", "))),
            r => r,
        }),
        domain: e.get("problem", "domain", DomainChoice::Whole, |s| {
            labelled(s, "domain", DOMAINS, |n, a| match (n, a) {
                ("whole", []) => Some(DomainChoice::Whole),
                ("ball", [r]) if *r > 0.0 => Some(DomainChoice::Ball(*r)),
                ("ball-nonneg", [r]) if *r > 0.0 => Some(DomainChoice::BallNonneg(*r)),
                _ => None,
            })
        }),
    };
    if problem.reference_m < 2 {
        let l = e.line("problem", "reference_m");
        e.issue(l, "reference_m must be at least 2");
    }

    let levels = e.get("schedule", "levels", kind.default_levels(), |s| list(s, integer));
    if !strictly_increasing(&levels) {
        let l = e.line("schedule", "levels");
        e.issue(l, "levels must be strictly increasing");
    }
    if levels.first() == Some(&0) {
        let l = e.line("schedule", "levels");
        e.issue(l, "levels must be positive");
    }
    let default_alpha = if kind == StudyKind::AlphaZero {
        AlphaSchedule::Power { a: 1.0, beta: 0.5 }
    } else {
        AlphaSchedule::Offset {
            alpha: 0.1,
            a: 1.0,
            beta: 1.0,
        }
    };
    let schedule = ScheduleSpec {
        levels,
        alpha: e.get("schedule", "alpha", default_alpha, |s| {
            labelled(s, "alpha schedule", ALPHAS, |n, a| match (n, a) {
                ("constant", [c]) => Some(AlphaSchedule::Constant(*c)),
                ("power", [a, b]) => Some(AlphaSchedule::Power { a: *a, beta: *b }),
                ("offset", [al, a, b]) => Some(AlphaSchedule::Offset {
                    alpha: *al,
                    a: *a,
                    beta: *b,
                }),
                _ => None,
            })
        }),
        noise: e.get("schedule", "noise", NoiseSpec::Power { c: 1.0, gamma: 1.0 }, |s| {
            labelled(s, "noise schedule", NOISES, |n, a| match (n, a) {
                ("none", []) => Some(NoiseSpec::None),
                ("power", [c, g]) => Some(NoiseSpec::Power { c: *c, gamma: *g }),
                ("random", [c, g]) => Some(NoiseSpec::Random { c: *c, gamma: *g }),
                _ => None,
            })
        }),
        p: e.get("schedule", "p", 2.0, positive),
        penalty: e.get("schedule", "penalty", PenaltySpec::HalfSqL2, |s| {
            labelled(s, "penalty", PENALTIES, |n, a| match (n, a) {
                ("half-sq-l2", []) => Some(PenaltySpec::HalfSqL2),
                ("power-l2", [q]) if *q >= 1.0 => Some(PenaltySpec::PowerL2(*q)),
                ("power-h10", [q]) if *q >= 1.0 => Some(PenaltySpec::PowerH10(*q)),
                ("linf", []) => Some(PenaltySpec::Linf),
                _ => None,
            })
        }),
    };
    if schedule.p < 1.0 {
        let l = e.line("schedule", "p");
        e.issue(l, format!("p must be at least 1, got {}", schedule.p));
    }

    let d = SolveConfig::default();
    let solver = SolveConfig {
        max_iter: e.get("solver", "max_iter", d.max_iter, integer),
        grad_tol: e.get("solver", "grad_tol", d.grad_tol, number),
        restarts: e.get("solver", "restarts", d.restarts, integer),
        step_rule: StepRule {
            initial_step: e.get("solver", "initial_step", d.step_rule.initial_step, number),
            shrink: e.get("solver", "shrink", d.step_rule.shrink, number),
            sufficient_decrease: e.get("solver", "sufficient_decrease", d.step_rule.sufficient_decrease, number),
        },
    };
    if let Err(err) = solver.validate() {
        let l = e.map.iter().find(|((s, _), _)| s == "solver").map(|(_, (l, _))| *l);
        e.issue(l, err.to_string());
    }

    let output = OutputSpec {
        format: e.get("output", "format", OutputFormat::Csv, |s| match s {
            "csv" => Ok(OutputFormat::Csv),
            "json-lines" => Ok(OutputFormat::JsonLines),
            _ => Err(format!("unknown format {s:?}; available: {}", FORMATS.join(", "))),
        }),
        path: e.get("output", "path", None, |s| Ok(Some(s.to_string()))),
        seed: e.get("output", "seed", 0, |s| s.parse::<u64>().map_err(|_| format!("malformed seed {s:?}"))),
        timing: e.get("output", "timing", false, boolean),
    };

    match study {
        Some(study) if e.issues.is_empty() => Ok(StudyConfig {
            study,
            params,
            problem,
            schedule,
            solver,
            output,
        }),
        _ => {
            e.issues.sort_by_key(|i| i.line.unwrap_or(0));
            Err(ConfigErrors(e.issues))
        }
    }
}

fn truth(s: &str, available: &[&str]) -> Result<TruthSpec, String> {
    match s {
        "sin-pi" => Ok(TruthSpec::SinPi),
        "poly" => Ok(TruthSpec::Poly),
        "zero" => Ok(TruthSpec::Zero),
        _ => Err(format!("unknown function {s:?}; available: {}", available.join(", "))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Refused,
    Diagnostic,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Refused => "refused",
            Verdict::Diagnostic => "diagnostic",
        }
    }

    fn judge(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// One line of a report. Summary rows have no level.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub study: &'static str,
    pub level: Option<usize>,
    pub metric: String,
    pub value: f64,
    pub verdict: Verdict,
    pub wall_time_ms: u128,
}

/// Rows plus the process exit code they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcome {
    pub rows: Vec<ReportRow>,
    pub exit_code: i32,
    /// Messages for standard error.
    pub notes: Vec<String>,
}

struct Rows {
    study: &'static str,
    timing: bool,
    rows: Vec<ReportRow>,
    notes: Vec<String>,
}

impl Rows {
    fn push(&mut self, level: Option<usize>, metric: impl Into<String>, value: f64, verdict: Verdict, start: Instant) {
        let wall_time_ms = if self.timing { start.elapsed().as_millis() } else { 0 };
        self.rows.push(ReportRow {
            study: self.study,
            level,
            metric: metric.into(),
            value,
            verdict,
            wall_time_ms,
        });
    }

    fn flag(b: bool) -> f64 {
        if b {
            1.0
        } else {
            0.0
        }
    }
}

fn build_sequence(cfg: &StudyConfig) -> crate::Result<ApproxSequence> {
    let pr = &cfg.problem;
    let sc = &cfg.schedule;
    let m = pr.reference_m;
    let family = match pr.operator {
        OperatorKind::Quadrature => make_quadrature_family(&pr.kernel.build()?, &sc.levels, m)?,
        OperatorKind::Exact => {
            let op = OperatorHandle::whole_space(IntegralOperator::new(pr.kernel.build()?, m)?);
            OperatorFamily::exact(op, &sc.levels)?
        }
        OperatorKind::Fem => {
            let n_ref = 16 * sc.levels.iter().copied().max().unwrap_or(1);
            fem::make_fem_family(&Coefficient::Constant(pr.potential), &sc.levels, n_ref, m, m)?
        }
    };
    let family = match pr.domain {
        DomainChoice::Whole => family,
        DomainChoice::Ball(r) => family.with_domain(DomainSpec::norm_ball(r, NormTag::L2)?),
        DomainChoice::BallNonneg(r) => family.with_domain(DomainSpec::norm_ball_nonneg(r, NormTag::L2)?),
    };
    let input = family.reference().input_grid();
    let truth = pr.truth;
    let xt = GridFunction::from_fn(input, move |s| truth.eval(s))?;
    let y = family.reference().apply(&xt)?;
    let noise = match sc.noise {
        NoiseSpec::None => NoiseSchedule::None,
        NoiseSpec::Power { c, gamma } => NoiseSchedule::Power { c, gamma },
        NoiseSpec::Random { c, gamma } => NoiseSchedule::Random {
            c,
            gamma,
            seed: cfg.output.seed,
        },
    };
    let penalty = match sc.penalty {
        PenaltySpec::HalfSqL2 => Penalty::HalfSqL2,
        PenaltySpec::PowerL2(q) => Penalty::power_norm(q, NormTag::L2)?,
        PenaltySpec::PowerH10(q) => Penalty::power_norm(q, NormTag::H10)?,
        PenaltySpec::Linf => Penalty::Linf,
    };
    ApproxSequence::new(family, y, sc.alpha, noise, sc.p, penalty)
}

/// Runs the configured study. `seed` overrides `output.seed`.
pub fn run_study(config: &StudyConfig, seed: Option<u64>) -> StudyOutcome {
    let mut cfg = config.clone();
    if let Some(s) = seed {
        cfg.output.seed = s;
    }
    let mut out = Rows {
        study: cfg.study.label(),
        timing: cfg.output.timing,
        rows: Vec::new(),
        notes: Vec::new(),
    };
    let result = match cfg.study {
        StudyKind::FemRate => fem_rate(&cfg, &mut out),
        StudyKind::IntegralDemo => integral_demo(&cfg, &mut out),
        StudyKind::InfStudy => inf_study(&cfg, &mut out),
        StudyKind::AlphaZero => alpha_zero(&cfg, &mut out),
        StudyKind::GammaEstimate => gamma_estimate(&cfg, &mut out),
        StudyKind::Coercivity => coercivity(&cfg, &mut out),
        StudyKind::EpsChain => eps_chain(&cfg, &mut out),
    };
    if let Err(err) = result {
        let verdict = match err {
            Error::Refused(_) | Error::Unsupported(_) => Verdict::Refused,
            _ => Verdict::Fail,
        };
        out.notes.push(err.to_string());
        out.push(None, "error", f64::NAN, verdict, Instant::now());
    }
    let verdicts = || out.rows.iter().map(|r| r.verdict);
    let exit_code = if verdicts().any(|v| v == Verdict::Refused) {
        EXIT_REFUSED
    } else if verdicts().any(|v| v == Verdict::Fail) {
        EXIT_FAIL
    } else {
        EXIT_OK
    };
    StudyOutcome {
        exit_code,
        rows: out.rows,
        notes: out.notes,
    }
}

fn fem_rate(cfg: &StudyConfig, out: &mut Rows) -> crate::Result<()> {
    let start = Instant::now();
    let c = cfg.problem.potential;
    let problem = match cfg.problem.solution {
        TruthSpec::Poly => EllipticProblem::new(
            Coefficient::Constant(c),
            Coefficient::function(move |x| 2.0 + c * x * (1.0 - x)),
        )
        .with_solution(|x| x * (1.0 - x)),
        _ => EllipticProblem::sin_pi(c),
    };
    let study = fem::rate_study(&problem, &cfg.schedule.levels)?;
    for (&n, &err) in study.levels.iter().zip(&study.errors) {
        out.push(Some(n), "l2_error", err, Verdict::Diagnostic, start);
    }
    let p = &cfg.params;
    let ok = study.slope >= p.slope_min && study.slope <= p.slope_max;
    out.push(None, "slope", study.slope, Verdict::judge(ok), start);
    out.push(None, "constant", study.constant, Verdict::Diagnostic, start);
    Ok(())
}

fn integral_demo(cfg: &StudyConfig, out: &mut Rows) -> crate::Result<()> {
    let start = Instant::now();
    let seq = build_sequence(cfg)?;
    let input = seq.family().reference().input_grid();
    let truth = cfg.problem.truth;
    let xt = GridFunction::from_fn(input, move |s| truth.eval(s))?;
    for &n in &cfg.schedule.levels {
        let gap = uniform_gap(seq.family(), n, std::slice::from_ref(&xt))?.value;
        out.push(Some(n), "operator_gap", gap, Verdict::Diagnostic, start);
        out.push(Some(n), "data_gap", seq.data_gap(n)?, Verdict::Diagnostic, start);
        let res = solve::minimize(&seq.level_problem(n)?, &cfg.solver)?;
        out.push(Some(n), "inf_value", res.value.to_f64(), Verdict::Diagnostic, start);
    }
    Ok(())
}

fn inf_study(cfg: &StudyConfig, out: &mut Rows) -> crate::Result<()> {
    let start = Instant::now();
    let seq = build_sequence(cfg)?;
    let target = seq.target_problem()?;
    let r = gamma::inf_convergence_study(&target, &seq, &cfg.schedule.levels, &cfg.solver, cfg.params.tol)?;
    for (k, &n) in r.levels.iter().enumerate() {
        out.push(Some(n), "inf_value", r.inf_values[k].to_f64(), Verdict::Diagnostic, start);
        out.push(Some(n), "gap", r.gaps[k], Verdict::Diagnostic, start);
        out.push(Some(n), "minimizer_distance", r.minimizer_distances[k], Verdict::Diagnostic, start);
    }
    out.push(None, "reference_min", r.reference_min.to_f64(), Verdict::Diagnostic, start);
    if let Some(n) = r.failed_level {
        out.notes.push(format!("minimization failed at level {n}"));
        out.push(None, "failed_level", n as f64, Verdict::Fail, start);
        return Ok(());
    }
    out.push(None, "final_gap", *r.gaps.last().unwrap_or(&f64::NAN), Verdict::judge(r.final_gap_ok), start);
    out.push(None, "gap_trend", Rows::flag(r.trend_ok), Verdict::judge(r.trend_ok), start);
    Ok(())
}

fn alpha_zero(cfg: &StudyConfig, out: &mut Rows) -> crate::Result<()> {
    let start = Instant::now();
    let seq = build_sequence(cfg)?;
    let r = gamma::alpha_zero_study(&seq, &cfg.schedule.levels, &cfg.solver, cfg.params.tol)?;
    for (k, &n) in r.levels.iter().enumerate() {
        out.push(Some(n), "alpha", r.alphas[k], Verdict::Diagnostic, start);
        out.push(Some(n), "data_ratio", r.data_ratios[k], Verdict::Diagnostic, start);
        out.push(Some(n), "operator_ratio", r.operator_ratios[k], Verdict::Diagnostic, start);
        if let Some(d) = r.distances.get(k) {
            out.push(Some(n), "minimizer_distance", *d, Verdict::Diagnostic, start);
            out.push(Some(n), "penalty", r.omega_values[k], Verdict::Diagnostic, start);
        }
    }
    if let Some(why) = &r.refused {
        out.notes.push(why.clone());
        out.push(None, "ratio_condition", 0.0, Verdict::Refused, start);
        return Ok(());
    }
    out.push(None, "ratio_condition", 1.0, Verdict::Pass, start);
    out.push(None, "target_penalty", r.omega_target, Verdict::Diagnostic, start);
    out.push(None, "penalty_audit", Rows::flag(r.omega_audit), Verdict::judge(r.omega_audit), start);
    let last = *r.distances.last().unwrap_or(&f64::NAN);
    out.push(None, "final_distance", last, Verdict::judge(r.verdict == Some(true)), start);
    Ok(())
}

fn gamma_estimate(cfg: &StudyConfig, out: &mut Rows) -> crate::Result<()> {
    let start = Instant::now();
    let p = &cfg.params;
    if p.grid_nodes < 2 {
        return Err(Error::InvalidGrid("grid_nodes must be at least 2".into()));
    }
    let b = 2.0 * PI;
    let nodes: Vec<f64> = (0..p.grid_nodes)
        .map(|i| b * i as f64 / (p.grid_nodes - 1) as f64)
        .collect();
    let family = p.family;
    let f = move |j: usize, x: f64| match family {
        GammaFamily::Oscillating => (j as f64 * x).sin(),
        GammaFamily::Constant(c) => c,
        GammaFamily::Uniform => (x - 3.0).powi(2) + x.cos() + 1.0 / j as f64,
    };
    for (k, &x) in p.points.iter().enumerate() {
        let e = gamma::estimate_gamma_limits(&f, &nodes, x, &p.radii, p.window, p.expected_tol)?;
        let level = Some(k + 1);
        let verdict = match p.expected {
            Some(v) => Verdict::judge((e.value_lower - v).abs() <= p.expected_tol),
            None => Verdict::Diagnostic,
        };
        out.push(level, "point", x, Verdict::Diagnostic, start);
        out.push(level, "gamma_lower", e.value_lower, verdict, start);
        out.push(level, "gamma_upper", e.value_upper, Verdict::Diagnostic, start);
        out.push(level, "sequential_lower", e.sequential_lower, Verdict::Diagnostic, start);
        out.push(level, "stabilized", Rows::flag(e.stabilized), Verdict::Diagnostic, start);
    }
    Ok(())
}

fn coercivity(cfg: &StudyConfig, out: &mut Rows) -> crate::Result<()> {
    let start = Instant::now();
    let seq = build_sequence(cfg)?;
    let p = &cfg.params;
    let grid: Grid = seq.family().reference().input_grid();
    let samples = gamma::random_samples(grid, p.samples, p.sample_radius, cfg.output.seed)?;
    let r = gamma::equi_coercivity_probe(&seq, &cfg.schedule.levels, &samples, &p.thresholds, Some(&cfg.solver))?;
    for c in &r.checks {
        out.push(Some(c.level), format!("in_sublevel[t={}]", c.threshold), c.in_sublevel as f64, Verdict::Diagnostic, start);
        out.push(Some(c.level), format!("violations[t={}]", c.threshold), c.violations as f64, Verdict::judge(c.violations == 0), start);
    }
    out.push(None, "alpha_floor", r.alpha_floor, Verdict::Diagnostic, start);
    out.push(None, "samples", r.sample_count as f64, Verdict::Diagnostic, start);
    if let Some(m) = &r.mild {
        out.push(None, "sup_minimizer_norm", m.sup_minimizer_norm, Verdict::Diagnostic, start);
        out.push(None, "sup_minimizer_penalty", m.sup_minimizer_penalty, Verdict::Diagnostic, start);
        out.push(None, "penalty_bound", m.penalty_bound, Verdict::judge(m.bounded), start);
    }
    let total: usize = r.checks.iter().map(|c| c.violations).sum();
    out.push(None, "total_violations", total as f64, Verdict::judge(r.verdict), start);
    Ok(())
}

fn eps_chain(cfg: &StudyConfig, out: &mut Rows) -> crate::Result<()> {
    let start = Instant::now();
    let seq = build_sequence(cfg)?;
    let p = &cfg.params;
    let levels = &cfg.schedule.levels;
    let (c, g) = p.eps;
    let eps: Vec<f64> = levels.iter().map(|&n| c * (n as f64).powf(-g)).collect();
    let cauchy = CauchyCriterion {
        tail: p.cauchy_tail.min(levels.len()),
        tol: p.cauchy_tol,
    };
    let r = gamma::eps_minimizer_chain(&seq, &eps, levels, &cfg.solver, p.chain_mode, cauchy, p.value_tol)?;
    for (k, &n) in r.levels.iter().enumerate() {
        out.push(Some(n), "eps", r.eps[k], Verdict::Diagnostic, start);
        out.push(Some(n), "value", r.values[k].to_f64(), Verdict::Diagnostic, start);
        out.push(Some(n), "inf_estimate", r.inf_estimates[k].to_f64(), Verdict::Diagnostic, start);
        out.push(Some(n), "certified", Rows::flag(r.certified[k]), Verdict::judge(r.certified[k]), start);
        out.push(Some(n), "in_domain", Rows::flag(r.in_domain[k]), Verdict::judge(r.in_domain[k]), start);
    }
    out.push(None, "tail_spread", r.tail_spread, Verdict::Diagnostic, start);
    match &r.cluster {
        Some(cl) => {
            out.push(None, "limit_value", cl.value.to_f64(), Verdict::Diagnostic, start);
            out.push(None, "limit_gap", cl.limit_gap, Verdict::judge(cl.limit_gap <= p.value_tol), start);
        }
        None => {
            out.notes.push("no cluster point found at tested levels".into());
            out.push(None, "limit_gap", f64::NAN, Verdict::Diagnostic, start);
        }
    }
    Ok(())
}

fn level_field(level: Option<usize>) -> String {
    level.map(|n| n.to_string()).unwrap_or_default()
}

/// Writes rows in the configured format.
pub fn write_report(rows: &[ReportRow], format: OutputFormat, w: &mut dyn Write) -> std::io::Result<()> {
    match format {
        OutputFormat::Csv => {
            writeln!(w, "study,level,metric,value,verdict,wall_time_ms")?;
            for r in rows {
                writeln!(
                    w,
                    "{},{},{},{:e},{},{}",
                    r.study,
                    level_field(r.level),
                    r.metric,
                    r.value,
                    r.verdict.label(),
                    r.wall_time_ms
                )?;
            }
        }
        OutputFormat::JsonLines => {
            for r in rows {
                let line = serde_json::json!({
                    "study": r.study,
                    "level": r.level,
                    "metric": r.metric,
                    "value": r.value,
                    "verdict": r.verdict.label(),
                    "wall_time_ms": r.wall_time_ms,
                });
                writeln!(w, "{line}")?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("[study]\nkind = fem-rate\n").unwrap();
        assert_eq!(c.study, StudyKind::FemRate);
        assert_eq!(c.schedule.levels, vec![7, 15, 31, 63, 127]);
        assert_eq!(c.solver, SolveConfig::default());
        assert_eq!(c.output.format, OutputFormat::Csv);
        assert_eq!(c.output.seed, 0);
        assert!(!c.output.timing);
    }

    #[test]
    fn decreasing_levels_are_rejected() {
        let err = parse_config("[study]\nkind = fem-rate\n[schedule]\nlevels = 31,15\n").unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert_eq!(err.0[0].line, Some(4));
        assert!(err.0[0].message.contains("levels must be strictly increasing"));
    }

    #[test]
    fn unknown_kernel_lists_labels() {
        let err = parse_config("[study]\nkind = inf-study\n[problem]\nkernel = foo\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4"));
        for k in KERNELS {
            assert!(msg.contains(k), "{msg}");
        }
    }

    #[test]
    fn all_errors_are_reported() {
        let text = "[study]\nkind = nope\ntol = abc\n[schedule]\nlevels = 3,2\np = 1e\n[bogus]\nx = 1\n[output]\nformat = xml\n";
        let err = parse_config(text).unwrap_err();
        let lines: Vec<Option<usize>> = err.0.iter().map(|i| i.line).collect();
        assert_eq!(lines, vec![Some(2), Some(3), Some(5), Some(6), Some(7), Some(8), Some(10)]);
    }

    #[test]
    fn numbers_are_plain_decimals() {
        assert_eq!(number("1.5e-3"), Ok(1.5e-3));
        assert_eq!(number("-2"), Ok(-2.0));
        assert!(number("inf").is_err());
        assert!(number("NaN").is_err());
        assert!(number("0x10").is_err());
        assert!(number("").is_err());
    }

    #[test]
    fn call_syntax() {
        assert_eq!(call("offset(0.1, 1, 1)"), Ok(("offset".into(), vec![0.1, 1.0, 1.0])));
        assert_eq!(call("none"), Ok(("none".into(), vec![])));
        assert!(call("power(1, 2").is_err());
    }

    #[test]
    fn wrong_arity_is_an_unknown_label() {
        let err = parse_config("[study]\nkind = inf-study\n[schedule]\nalpha = offset(0.1)\n").unwrap_err();
        assert!(err.to_string().contains("available"));
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = parse_config("[study]\nkind = fem-rate\nkind = fem-rate\n").unwrap_err();
        assert!(err.0[0].message.contains("duplicate"));
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = parse_config("# header\n\n[study]  \nkind = coercivity # trailing\n").unwrap();
        assert_eq!(c.study, StudyKind::Coercivity);
    }

    #[test]
    fn fem_rate_default_passes() {
        let c = parse_config("[study]\nkind = fem-rate\n").unwrap();
        let o = run_study(&c, None);
        assert_eq!(o.exit_code, EXIT_OK);
        let slope = o.rows.iter().find(|r| r.metric == "slope").unwrap();
        assert!(slope.value > -2.2 && slope.value < -1.8);
        assert_eq!(slope.verdict, Verdict::Pass);
    }

    #[test]
    fn inf_study_exact_family() {
        let c = parse_config(
            "[study]\nkind = inf-study\ntol = 1e-12\n[problem]\noperator = exact\nreference_m = 65\n[schedule]\nlevels = 1,2,3\nnoise = none\nalpha = constant(0.1)\n",
        )
        .unwrap();
        let o = run_study(&c, None);
        assert_eq!(o.exit_code, EXIT_OK, "{:?}", o.notes);
        assert!(o.rows.iter().filter(|r| r.metric == "gap").all(|r| r.value == 0.0));
    }

    #[test]
    fn diverging_alpha_zero_is_refused() {
        let c = parse_config(
            "[study]\nkind = alpha-zero\n[problem]\noperator = exact\nreference_m = 33\n[schedule]\nlevels = 8,16,32,64\nalpha = power(1, 4)\nnoise = power(1, 1)\n",
        )
        .unwrap();
        let o = run_study(&c, None);
        assert_eq!(o.exit_code, EXIT_REFUSED);
        assert!(o.rows.iter().any(|r| r.metric == "data_ratio"));
        assert!(!o.notes.is_empty());
    }

    #[test]
    fn csv_layout() {
        let rows = vec![
            ReportRow {
                study: "fem-rate",
                level: Some(7),
                metric: "l2_error".into(),
                value: 0.25,
                verdict: Verdict::Diagnostic,
                wall_time_ms: 0,
            },
            ReportRow {
                study: "fem-rate",
                level: None,
                metric: "slope".into(),
                value: -2.0,
                verdict: Verdict::Pass,
                wall_time_ms: 0,
            },
        ];
        let mut buf = Vec::new();
        write_report(&rows, OutputFormat::Csv, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "study,level,metric,value,verdict,wall_time_ms\nfem-rate,7,l2_error,2.5e-1,diagnostic,0\nfem-rate,,slope,-2e0,pass,0\n"
        );
        let mut buf = Vec::new();
        write_report(&rows[1..], OutputFormat::JsonLines, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["level"], serde_json::Value::Null);
        assert_eq!(v["verdict"], "pass");
    }
}
