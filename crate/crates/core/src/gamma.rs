//! Numerical studies of how the approximating functionals `T_n` relate to
//! the target `T`: convergence of infima and minimizers, chains of
//! epsilon-minimizers, grid estimates of Gamma-lower and Gamma-upper limits,
//! sublevel inclusions, the vanishing-`alpha` limit and positive scaling.
//!
//! Every space here is finite dimensional, so norm, weak and weak-* limits
//! coincide; reports carry [`TOPOLOGY`] as a reminder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::fem::fit_line;
use crate::forward::{membership, uniform_gap, DomainSpec};
use crate::solve::{self, min_penalty_solution, SolveConfig, SolveResult, SolveStatus};
use crate::space::{self, Grid, GridFunction, NormTag};
use crate::tikhonov::{eval_tn, is_eps_minimizer, ApproxSequence, ExtReal, TikhonovProblem};

/// The topology in which all limits are taken.
pub const TOPOLOGY: &str = "norm (finite-dimensional collapse)";

/// Relative slack allowed when auditing a sequence for monotone decrease.
const TREND_SLACK: f64 = 0.10;

/// `v` is nonincreasing over its last three entries up to 10% slack and an
/// absolute floor for roundoff.
fn tail_nonincreasing(v: &[f64], floor: f64) -> bool {
    let tail = &v[v.len().saturating_sub(3)..];
    tail.windows(2)
        .all(|w| w[1] <= (1.0 + TREND_SLACK) * w[0] + floor)
}

fn to_reference(x: &GridFunction, reference: Grid) -> Result<GridFunction> {
    if x.grid() == reference {
        Ok(x.clone())
    } else {
        space::resample(x, reference.len())
    }
}

fn usable(res: &SolveResult) -> bool {
    matches!(res.status, SolveStatus::Converged | SolveStatus::TargetReached) && res.value.is_finite()
}

/// Outcome of [`inf_convergence_study`].
#[derive(Debug, Clone, PartialEq)]
pub struct InfConvergenceReport {
    pub levels: Vec<usize>,
    pub inf_values: Vec<ExtReal>,
    pub reference_min: ExtReal,
    /// `|inf T_n - min T|`.
    pub gaps: Vec<f64>,
    /// `||x_n - x*||_L2` on the reference input grid.
    pub minimizer_distances: Vec<f64>,
    pub tol: f64,
    pub final_gap_ok: bool,
    pub trend_ok: bool,
    /// `None` when a solve failed.
    pub verdict: Option<bool>,
    pub failed_level: Option<usize>,
    pub topology: &'static str,
}

/// Compares `inf T_n` with `min T` along the levels.
///
/// Verdict: the final gap is at most `tol` and the gaps over the last three
/// levels do not increase by more than 10%.
pub fn inf_convergence_study(
    target: &TikhonovProblem,
    seq: &ApproxSequence,
    levels: &[usize],
    solver: &SolveConfig,
    tol: f64,
) -> Result<InfConvergenceReport> {
    if !(target.alpha() > 0.0) {
        return Err(Error::Refused(
            "the infimum study needs alpha > 0 for equi-coercivity".into(),
        ));
    }
    if !target.penalty().is_smooth() {
        return Err(Error::Unsupported(format!(
            "penalty {} cannot be minimized",
            target.penalty().label()
        )));
    }
    let reference = solve::minimize(target, solver)?;
    let mut report = InfConvergenceReport {
        levels: Vec::new(),
        inf_values: Vec::new(),
        reference_min: reference.value,
        gaps: Vec::new(),
        minimizer_distances: Vec::new(),
        tol,
        final_gap_ok: false,
        trend_ok: false,
        verdict: None,
        failed_level: None,
        topology: TOPOLOGY,
    };
    if !usable(&reference) {
        report.failed_level = Some(0);
        return Ok(report);
    }
    let min = reference.value.to_f64();
    let ref_grid = target.input_grid();
    for &n in levels {
        let res = solve::minimize(&seq.level_problem(n)?, solver)?;
        if !usable(&res) {
            report.failed_level = Some(n);
            return Ok(report);
        }
        report.levels.push(n);
        report.inf_values.push(res.value);
        report.gaps.push((res.value.to_f64() - min).abs());
        report.minimizer_distances.push(space::l2_distance(
            &to_reference(&res.minimizer, ref_grid)?,
            &reference.minimizer,
        )?);
    }
    let floor = 1e-12 * min.abs().max(1.0);
    report.final_gap_ok = report.gaps.last().is_some_and(|&g| g <= tol);
    report.trend_ok = tail_nonincreasing(&report.gaps, floor);
    report.verdict = Some(report.final_gap_ok && report.trend_ok);
    Ok(report)
}

/// How each link of an epsilon-minimizer chain is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainMode {
    /// The solver's minimizer, an epsilon-minimizer for every epsilon.
    Converged,
    /// Projected gradient from the origin, stopped once the value is within
    /// `eps_j` of the infimum estimate.
    EarlyStop,
}

/// Cauchy-tail test for a cluster point: the last `tail` iterates are
/// pairwise closer than `tol` in L2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CauchyCriterion {
    pub tail: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPoint {
    /// The last iterate on the reference grid.
    pub point: GridFunction,
    /// Largest pairwise distance over the tail.
    pub spread: f64,
    /// `T(x_inf)`.
    pub value: ExtReal,
    /// `|T(x_inf) - T_J(x_J)|` at the final level `J`.
    pub limit_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainReport {
    pub levels: Vec<usize>,
    pub eps: Vec<f64>,
    /// `T_j(x_j)`.
    pub values: Vec<ExtReal>,
    pub inf_estimates: Vec<ExtReal>,
    pub certified: Vec<bool>,
    pub in_domain: Vec<bool>,
    /// Largest pairwise distance over the Cauchy tail.
    pub tail_spread: f64,
    /// `None` means no cluster point was found at the tested levels; that is
    /// a diagnostic, not a failure.
    pub cluster: Option<ClusterPoint>,
    pub value_tol: f64,
    /// All links certified, all in their domains, a cluster point found and
    /// its limit gap within `value_tol`.
    pub verdict: bool,
    pub topology: &'static str,
}

/// Builds `x_j`, an `eps_j`-minimizer of `T_{n_j}`, for each level, and looks
/// for a cluster point of the chain.
pub fn eps_minimizer_chain(
    seq: &ApproxSequence,
    eps: &[f64],
    levels: &[usize],
    solver: &SolveConfig,
    mode: ChainMode,
    cauchy: CauchyCriterion,
    value_tol: f64,
) -> Result<ChainReport> {
    let target = seq.target_problem()?;
    if !(target.alpha() > 0.0) {
        return Err(Error::Refused(
            "the minimizer chain needs lim alpha_n > 0".into(),
        ));
    }
    if eps.len() != levels.len() {
        return Err(Error::Contract(format!(
            "{} epsilons for {} levels",
            eps.len(),
            levels.len()
        )));
    }
    if eps.iter().any(|&e| !(e > 0.0)) || eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Contract(
            "epsilons must be positive and strictly decreasing".into(),
        ));
    }
    if cauchy.tail < 2 || cauchy.tail > levels.len() {
        return Err(Error::Contract(format!(
            "Cauchy tail {} must lie in [2, {}]",
            cauchy.tail,
            levels.len()
        )));
    }
    let ref_grid = target.input_grid();
    let mut report = ChainReport {
        levels: levels.to_vec(),
        eps: eps.to_vec(),
        values: Vec::new(),
        inf_estimates: Vec::new(),
        certified: Vec::new(),
        in_domain: Vec::new(),
        tail_spread: f64::INFINITY,
        cluster: None,
        value_tol,
        verdict: false,
        topology: TOPOLOGY,
    };
    let mut iterates = Vec::new();
    for (&n, &e) in levels.iter().zip(eps) {
        let problem = seq.level_problem(n)?;
        let oracle = solve::minimize(&problem, solver)?;
        if !usable(&oracle) {
            return Err(Error::Numerical(format!(
                "no infimum estimate at level {n}: {:?}",
                oracle.status
            )));
        }
        let inf = oracle.value;
        let x = match mode {
            ChainMode::Converged => oracle.minimizer,
            ChainMode::EarlyStop => {
                let x0 = problem.domain().project(&GridFunction::zeros(problem.input_grid()))?;
                let stop = inf.to_f64() + e;
                solve::projected_gradient_until(&problem, problem.domain(), solver, &x0, Some(stop))?.minimizer
            }
        };
        let value = problem.eval(&x)?;
        report.certified.push(is_eps_minimizer(value, inf, e));
        report.in_domain.push(membership(problem.domain(), &x));
        report.values.push(value);
        report.inf_estimates.push(inf);
        iterates.push(to_reference(&x, ref_grid)?);
    }
    let tail = &iterates[iterates.len() - cauchy.tail..];
    let mut spread = 0.0_f64;
    for (i, a) in tail.iter().enumerate() {
        for b in &tail[i + 1..] {
            spread = spread.max(space::l2_distance(a, b)?);
        }
    }
    report.tail_spread = spread;
    if spread < cauchy.tol {
        let point = iterates.last().expect("levels are nonempty").clone();
        let value = target.eval(&point)?;
        let last = report.values.last().expect("levels are nonempty").to_f64();
        let limit_gap = (value.to_f64() - last).abs();
        report.cluster = Some(ClusterPoint {
            point,
            spread,
            value,
            limit_gap,
        });
    }
    report.verdict = report.certified.iter().all(|&c| c)
        && report.in_domain.iter().all(|&c| c)
        && report
            .cluster
            .as_ref()
            .is_some_and(|c| c.limit_gap <= value_tol);
    Ok(report)
}

/// Neighbourhood infima at one radius.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusEstimate {
    pub radius: f64,
    /// `liminf_j inf_{|y - x| < r} f_j(y)`, estimated over the window tail.
    pub lower: f64,
    /// The same with `limsup`.
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaEstimate {
    pub point: f64,
    pub window: usize,
    /// Indices `j` in the tail over which lim inf / lim sup are taken.
    pub tail: (usize, usize),
    pub per_radius: Vec<RadiusEstimate>,
    /// Gamma-lower limit: the lower value at the smallest radius.
    pub value_lower: f64,
    /// Gamma-upper limit: the upper value at the smallest radius.
    pub value_upper: f64,
    /// The lower values at the two smallest radii agree within the tolerance.
    pub stabilized: bool,
    /// `liminf_j f_j(x_j)` along `x_j -> x`, where `x_j` minimizes `f_j`
    /// over balls whose radii shrink across the tail.
    pub sequential_lower: f64,
    pub topology: &'static str,
}

/// Grid estimate of the Gamma-lower and Gamma-upper limits of `(f_j)` at
/// `point`.
///
/// For each radius and each `j = 1..=window` the minimum of `f_j` over grid
/// nodes with `|y - point| < r` is taken; lim inf and lim sup are replaced
/// by the minimum and maximum over `j` in `[window/2, window]`. The outer
/// supremum over neighbourhoods is the value at the smallest radius, since
/// neighbourhood infima only grow as the radius shrinks.
pub fn estimate_gamma_limits(
    family: &dyn Fn(usize, f64) -> f64,
    nodes: &[f64],
    point: f64,
    radii: &[f64],
    window: usize,
    stab_tol: f64,
) -> Result<GammaEstimate> {
    if nodes.len() < 2 || nodes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidGrid("nodes must be strictly increasing".into()));
    }
    if radii.is_empty() || radii.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Contract("radii must be nonempty and strictly decreasing".into()));
    }
    if window < 2 {
        return Err(Error::Contract("the index window must be at least 2".into()));
    }
    let spacing = nodes
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0_f64, f64::max);
    let r_min = *radii.last().expect("nonempty");
    if r_min <= spacing {
        return Err(Error::Resolution(format!(
            "radius {r_min} does not exceed the grid spacing {spacing}"
        )));
    }
    let (j0, j1) = (window / 2, window);
    let ball = |r: f64| -> Vec<f64> {
        nodes
            .iter()
            .copied()
            .filter(|y| (y - point).abs() < r)
            .collect()
    };
    let ball_min = |j: usize, pts: &[f64]| -> (f64, f64) {
        pts.iter()
            .map(|&y| (family(j, y), y))
            .fold((f64::INFINITY, f64::NAN), |a, b| if b.0 < a.0 { b } else { a })
    };
    let per_radius: Vec<RadiusEstimate> = radii
        .iter()
        .map(|&r| {
            let pts = ball(r);
            let (lower, upper) = (j0..=j1)
                .map(|j| ball_min(j, &pts).0)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            RadiusEstimate {
                radius: r,
                lower,
                upper,
            }
        })
        .collect();
    let last = per_radius.last().expect("nonempty");
    let stabilized = per_radius.len() >= 2
        && (per_radius[per_radius.len() - 2].lower - last.lower).abs() <= stab_tol;
    let r_max = radii[0];
    let sequential_lower = (j0..=j1)
        .map(|j| {
            let frac = (j - j0) as f64 / (j1 - j0).max(1) as f64;
            let r = r_max + frac * (r_min - r_max);
            ball_min(j, &ball(r)).0
        })
        .fold(f64::INFINITY, f64::min);
    Ok(GammaEstimate {
        point,
        window,
        tail: (j0, j1),
        value_lower: last.lower,
        value_upper: last.upper,
        per_radius,
        stabilized,
        sequential_lower,
        topology: TOPOLOGY,
    })
}

/// `count` points of the given grid with L2 norms spread uniformly over
/// `[0, radius_max]` along Gaussian random directions.
pub fn random_samples(grid: Grid, count: usize, radius_max: f64, seed: u64) -> Result<Vec<GridFunction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = Uniform::new_inclusive(0.0, radius_max)
        .map_err(|e| Error::Contract(format!("invalid sampling radius: {e}")))?;
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let dir = GridFunction::new(grid, v)?;
            let nrm = space::norm(&dir, NormTag::L2)?;
            dir.scaled(radius.sample(&mut rng) / nrm)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InclusionCheck {
    pub level: usize,
    pub threshold: f64,
    /// Samples with `T_n(x) <= t`.
    pub in_sublevel: usize,
    /// Of those, samples with `delta Omega(x) > t`.
    pub violations: usize,
}

/// Evidence that minimizers of `T_n` stay bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct MildCoercivity {
    pub sup_minimizer_norm: f64,
    pub sup_minimizer_penalty: f64,
    /// `sup_n T_n(0) / delta`, an a priori bound for `Omega(x_n)`.
    pub penalty_bound: f64,
    pub bounded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityProbe {
    pub thresholds: Vec<f64>,
    /// `delta = inf_n alpha_n` over the tested levels.
    pub alpha_floor: f64,
    pub sample_count: usize,
    pub checks: Vec<InclusionCheck>,
    pub mild: Option<MildCoercivity>,
    pub verdict: bool,
    pub topology: &'static str,
}

/// Audits the inclusion `{T_n <= t} ⊆ {Omega <= t / delta}` on samples given
/// on the reference input grid. With a solver, also reports whether the
/// minimizers of `T_n` are bounded.
pub fn equi_coercivity_probe(
    seq: &ApproxSequence,
    levels: &[usize],
    samples: &[GridFunction],
    thresholds: &[f64],
    solver: Option<&SolveConfig>,
) -> Result<CoercivityProbe> {
    if !(seq.alpha_schedule().limit() > 0.0) {
        return Err(Error::Refused(
            "the sublevel inclusion needs alpha_n >= delta > 0, but alpha_n -> 0".into(),
        ));
    }
    let alphas = levels
        .iter()
        .map(|&n| seq.alpha_at(n))
        .collect::<Result<Vec<_>>>()?;
    let delta = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let mut checks = Vec::new();
    let mut mins = Vec::new();
    let mut zero_values = Vec::new();
    for &n in levels {
        let problem = seq.level_problem(n)?;
        let grid = problem.input_grid();
        let mut rows: Vec<InclusionCheck> = thresholds
            .iter()
            .map(|&t| InclusionCheck {
                level: n,
                threshold: t,
                in_sublevel: 0,
                violations: 0,
            })
            .collect();
        for x in samples {
            let xn = if x.grid() == grid {
                x.clone()
            } else {
                space::resample(x, grid.len())?
            };
            let tn = problem.eval(&xn)?;
            let omega = problem.penalty().eval(&xn)?;
            for row in &mut rows {
                if tn <= ExtReal::Finite(row.threshold) {
                    row.in_sublevel += 1;
                    // T_n >= alpha_n Omega >= delta Omega, so this never fires.
                    if delta * omega > row.threshold {
                        row.violations += 1;
                    }
                }
            }
        }
        checks.extend(rows);
        if let Some(cfg) = solver {
            let res = solve::minimize(&problem, cfg)?;
            if usable(&res) {
                mins.push(res.minimizer);
            }
            zero_values.push(problem.eval(&problem.domain().project(&GridFunction::zeros(grid))?)?.to_f64());
        }
    }
    let mild = if solver.is_some() {
        let sup_norm = mins
            .iter()
            .map(|x| space::norm(x, NormTag::L2))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0_f64, f64::max);
        let sup_pen = mins
            .iter()
            .map(|x| seq.penalty().eval(x))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0_f64, f64::max);
        let bound = zero_values.iter().copied().fold(0.0_f64, f64::max) / delta;
        Some(MildCoercivity {
            sup_minimizer_norm: sup_norm,
            sup_minimizer_penalty: sup_pen,
            penalty_bound: bound,
            bounded: mins.len() == levels.len() && sup_pen <= bound,
        })
    } else {
        None
    };
    let verdict = checks.iter().all(|c| c.violations == 0);
    Ok(CoercivityProbe {
        thresholds: thresholds.to_vec(),
        alpha_floor: delta,
        sample_count: samples.len(),
        checks,
        mild,
        verdict,
        topology: TOPOLOGY,
    })
}

/// A positive sequence tends to zero on the tested levels when it is
/// identically zero, or its log-log slope against `n` is negative, its last
/// entry is below its first and its tail does not grow by more than 10%.
pub fn judged_vanishing(levels: &[usize], values: &[f64]) -> bool {
    if values.iter().all(|&v| v == 0.0) {
        return true;
    }
    if values.iter().any(|&v| !(v > 0.0)) || values.len() < 2 {
        return false;
    }
    let xs: Vec<f64> = levels.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let (slope, _) = fit_line(&xs, &ys);
    slope < 0.0 && values[values.len() - 1] < values[0] && tail_nonincreasing(values, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaZeroReport {
    pub levels: Vec<usize>,
    pub alphas: Vec<f64>,
    /// `||y_n - y|| / alpha_n^(1/p)`.
    pub data_ratios: Vec<f64>,
    /// `||F_n(x†) - F(x†)|| / alpha_n^(1/p)`.
    pub operator_ratios: Vec<f64>,
    pub ratios_vanish: bool,
    /// Set when the ratio conditions fail; the study stops there.
    pub refused: Option<String>,
    /// `||x_n - x†||_L2` for minimizers `x_n` of `T_n / alpha_n`.
    pub distances: Vec<f64>,
    pub omega_values: Vec<f64>,
    pub omega_target: f64,
    /// `Omega(x_n) <= 1.1 Omega(x†) + |Omega(x_n) - Omega(x_{n'})|` over the
    /// last three levels, i.e. no growth beyond the target penalty.
    pub omega_audit: bool,
    pub tol: f64,
    pub verdict: Option<bool>,
    pub topology: &'static str,
}

/// Follows minimizers of `T_n / alpha_n` with `alpha_n -> 0` towards the
/// minimum-norm solution `x†` of `F x = y`.
///
/// The two ratio conditions are measured at `x†`; if either fails to vanish
/// the report is returned with `refused` set and no minimization is done.
pub fn alpha_zero_study(
    seq: &ApproxSequence,
    levels: &[usize],
    solver: &SolveConfig,
    tol: f64,
) -> Result<AlphaZeroReport> {
    let target = seq.target_problem()?;
    if target.alpha() != 0.0 {
        return Err(Error::Contract(format!(
            "the vanishing-alpha study needs alpha_n -> 0, limit is {}",
            target.alpha()
        )));
    }
    if !seq.penalty().is_half_square() || matches!(seq.penalty(), crate::tikhonov::Penalty::ShiftedHalfSq(_)) {
        return Err(Error::Unsupported(
            "the minimum-norm oracle is only available for the (1/2)||x||^2 penalty".into(),
        ));
    }
    let reference = target.operator();
    let matrix = reference
        .matrix()
        .ok_or_else(|| Error::Unsupported("the minimum-norm oracle needs a linear operator".into()))?;
    let dagger = min_penalty_solution(matrix, reference.input_grid(), seq.data())?.solution;
    let p = seq.exponent();
    let alphas = levels
        .iter()
        .map(|&n| seq.alpha_at(n))
        .collect::<Result<Vec<_>>>()?;
    let mut data_ratios = Vec::new();
    let mut operator_ratios = Vec::new();
    for (&n, &a) in levels.iter().zip(&alphas) {
        let root = a.powf(1.0 / p);
        data_ratios.push(seq.data_gap(n)? / root);
        let gap = uniform_gap(seq.family(), n, std::slice::from_ref(&dagger))?.value;
        operator_ratios.push(gap / root);
    }
    let data_ok = judged_vanishing(levels, &data_ratios);
    let op_ok = judged_vanishing(levels, &operator_ratios);
    let omega_target = seq.penalty().eval(&dagger)?;
    let mut report = AlphaZeroReport {
        levels: levels.to_vec(),
        alphas: alphas.clone(),
        data_ratios,
        operator_ratios,
        ratios_vanish: data_ok && op_ok,
        refused: None,
        distances: Vec::new(),
        omega_values: Vec::new(),
        omega_target,
        omega_audit: false,
        tol,
        verdict: None,
        topology: TOPOLOGY,
    };
    if !report.ratios_vanish {
        let mut why = Vec::new();
        if !data_ok {
            why.push(format!("||y_n - y|| / alpha_n^(1/p) does not vanish: {:?}", report.data_ratios));
        }
        if !op_ok {
            why.push(format!(
                "||F_n(x) - F(x)|| / alpha_n^(1/p) does not vanish: {:?}",
                report.operator_ratios
            ));
        }
        report.refused = Some(why.join("; "));
        return Ok(report);
    }
    let ref_grid = reference.input_grid();
    for (&n, &a) in levels.iter().zip(&alphas) {
        let res = solve::minimize_scaled(&seq.level_problem(n)?, 1.0 / a, solver)?;
        if !usable(&res) {
            return Err(Error::Numerical(format!(
                "minimization failed at level {n}: {:?}",
                res.status
            )));
        }
        let x = to_reference(&res.minimizer, ref_grid)?;
        report.distances.push(space::l2_distance(&x, &dagger)?);
        report.omega_values.push(seq.penalty().eval(&x)?);
    }
    let tail = &report.omega_values[report.omega_values.len().saturating_sub(3)..];
    let drift = tail.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0_f64, f64::max);
    report.omega_audit = tail
        .iter()
        .all(|&o| o <= (1.0 + TREND_SLACK) * omega_target + drift);
    report.verdict = Some(report.distances.last().is_some_and(|&d| d <= tol));
    Ok(report)
}

/// Scale factors `lambda_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSchedule {
    Constant(f64),
    /// `lambda + a n^(-beta)`.
    Offset { lambda: f64, a: f64, beta: f64 },
    /// `1 / alpha_n` of the sequence under test.
    InverseAlpha,
}

impl LambdaSchedule {
    pub fn at(&self, seq: &ApproxSequence, n: usize) -> Result<f64> {
        Ok(match *self {
            LambdaSchedule::Constant(c) => c,
            LambdaSchedule::Offset { lambda, a, beta } => lambda + a * (n as f64).powf(-beta),
            LambdaSchedule::InverseAlpha => 1.0 / seq.alpha_at(n)?,
        })
    }

    pub fn limit(&self, seq: &ApproxSequence) -> f64 {
        match *self {
            LambdaSchedule::Constant(c) => c,
            LambdaSchedule::Offset { lambda, a, beta } => {
                if beta > 0.0 {
                    lambda
                } else if beta == 0.0 {
                    lambda + a
                } else {
                    f64::INFINITY
                }
            }
            LambdaSchedule::InverseAlpha => 1.0 / seq.alpha_schedule().limit(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingTolerances {
    /// Relative tolerance for `inf(lambda_n T_n) = lambda_n inf T_n`.
    pub identity_rtol: f64,
    /// L2 tolerance for the minimizers of `lambda_n T_n` and `T_n`.
    pub argmin_tol: f64,
    /// Relative tolerance for `min(lambda T) = lambda min T`.
    pub limit_rtol: f64,
}

impl Default for ScalingTolerances {
    fn default() -> Self {
        Self {
            identity_rtol: 1e-12,
            argmin_tol: 1e-8,
            limit_rtol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub levels: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub infs: Vec<f64>,
    pub scaled_infs: Vec<f64>,
    /// `|inf(lambda_n T_n) - lambda_n inf T_n| / |lambda_n inf T_n|`.
    pub identity_errors: Vec<f64>,
    pub argmin_distances: Vec<f64>,
    pub lambda_limit: f64,
    /// `min(lambda T)` at the reference.
    pub limit_scaled: f64,
    /// `lambda min T` at the reference.
    pub limit_unscaled: f64,
    pub limit_error: f64,
    pub identity_ok: bool,
    pub argmin_ok: bool,
    pub limit_ok: bool,
    pub verdict: bool,
}

/// Checks that positive scaling commutes with taking infima and minimizers,
/// per level and in the limit.
pub fn scaling_invariance_check(
    seq: &ApproxSequence,
    lambda: LambdaSchedule,
    levels: &[usize],
    solver: &SolveConfig,
    tol: ScalingTolerances,
) -> Result<ScalingReport> {
    let lambda_limit = lambda.limit(seq);
    if !(lambda_limit > 0.0 && lambda_limit.is_finite()) {
        return Err(Error::Unsupported(format!(
            "scale limit {lambda_limit} makes 0 * inf indeterminate"
        )));
    }
    let mut report = ScalingReport {
        levels: levels.to_vec(),
        lambdas: Vec::new(),
        infs: Vec::new(),
        scaled_infs: Vec::new(),
        identity_errors: Vec::new(),
        argmin_distances: Vec::new(),
        lambda_limit,
        limit_scaled: f64::NAN,
        limit_unscaled: f64::NAN,
        limit_error: f64::NAN,
        identity_ok: false,
        argmin_ok: false,
        limit_ok: false,
        verdict: false,
    };
    for &n in levels {
        let l = lambda.at(seq, n)?;
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Unsupported(format!("lambda_{n} = {l} is not positive and finite")));
        }
        let problem = seq.level_problem(n)?;
        let plain = solve::minimize(&problem, solver)?;
        let scaled = solve::minimize_scaled(&problem, l, solver)?;
        if !usable(&plain) || !usable(&scaled) {
            return Err(Error::Numerical(format!("minimization failed at level {n}")));
        }
        let inf = plain.value.to_f64();
        let sinf = scaled.value.to_f64();
        report.lambdas.push(l);
        report.infs.push(inf);
        report.scaled_infs.push(sinf);
        report.identity_errors.push(relative(sinf, l * inf));
        report
            .argmin_distances
            .push(space::l2_distance(&plain.minimizer, &scaled.minimizer)?);
    }
    let target = seq.target_problem()?;
    let plain = solve::minimize(&target, solver)?;
    let scaled = solve::minimize_scaled(&target, lambda_limit, solver)?;
    report.limit_scaled = scaled.value.to_f64();
    report.limit_unscaled = lambda_limit * plain.value.to_f64();
    report.limit_error = relative(report.limit_scaled, report.limit_unscaled);
    report.identity_ok = report.identity_errors.iter().all(|&e| e <= tol.identity_rtol);
    report.argmin_ok = report.argmin_distances.iter().all(|&d| d <= tol.argmin_tol);
    report.limit_ok = report.limit_error <= tol.limit_rtol;
    report.verdict = report.identity_ok && report.argmin_ok && report.limit_ok;
    Ok(report)
}

fn relative(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

/// `T_n(x) <= t` implies `delta Omega(x) <= t` for a single evaluation; the
/// arithmetic behind the inclusion audited by [`equi_coercivity_probe`].
pub fn inclusion_holds(seq: &ApproxSequence, n: usize, x: &GridFunction, t: f64, delta: f64) -> Result<bool> {
    let tn = eval_tn(seq, n, x)?;
    if tn > ExtReal::Finite(t) {
        return Ok(true);
    }
    Ok(delta * seq.penalty().eval(x)? <= t)
}

/// Whether `x` satisfies the domain of level `n`.
pub fn in_level_domain(seq: &ApproxSequence, n: usize, x: &GridFunction) -> Result<bool> {
    let domain: DomainSpec = *seq.family().level(n)?.operator.domain();
    Ok(membership(&domain, x))
}
