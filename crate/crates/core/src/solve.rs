//! Minimizers for Tikhonov functionals.
//!
//! * [`solve_linear_quadratic`]: closed-form minimizer via the weighted normal
//!   equations when `F` is linear, `p = 2` and the penalty is a half square.
//! * [`projected_gradient`]: Armijo projected gradient descent for smooth
//!   objectives on norm balls.
//! * [`min_penalty_solution`]: minimum-L2-norm solution of `F x = y`, used as
//!   the target of the vanishing-`alpha` study.
//!
//! Gradients are Euclidean in the nodal values; descent directions use the
//! Riesz representative `g / w` with respect to the trapezoid inner product,
//! so step sizes do not depend on the grid resolution.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{membership, DomainSpec};
use crate::space::{self, Grid, GridFunction, NormTag};
use crate::tikhonov::{ExtReal, TikhonovProblem};

/// Backtracking line-search parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRule {
    pub initial_step: f64,
    /// Step reduction factor in (0, 1).
    pub shrink: f64,
    /// Armijo constant in (0, 1).
    pub sufficient_decrease: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_rule: StepRule,
    /// Times the line search may reset to the initial step after stalling.
    pub restarts: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            grad_tol: 1e-8,
            step_rule: StepRule::default(),
            restarts: 2,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.step_rule;
        let mut bad = Vec::new();
        if self.max_iter == 0 {
            bad.push("max_iter must be positive".to_string());
        }
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            bad.push(format!("grad_tol must be positive, got {}", self.grad_tol));
        }
        if !(s.initial_step > 0.0 && s.initial_step.is_finite()) {
            bad.push(format!("initial_step must be positive, got {}", s.initial_step));
        }
        if !(s.shrink > 0.0 && s.shrink < 1.0) {
            bad.push(format!("shrink must lie in (0, 1), got {}", s.shrink));
        }
        if !(s.sufficient_decrease > 0.0 && s.sufficient_decrease < 1.0) {
            bad.push(format!(
                "sufficient_decrease must lie in (0, 1), got {}",
                s.sufficient_decrease
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Contract(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
    /// Stopped early because the objective reached the requested value.
    TargetReached,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub minimizer: GridFunction,
    pub value: ExtReal,
    pub iterations: usize,
    pub status: SolveStatus,
    /// L2 norm of the (projected) Riesz gradient at the returned point.
    pub grad_norm_final: f64,
    /// Objective value after each accepted step, starting with `x0`.
    pub history: Vec<f64>,
    /// Relative residual of the normal equations, for the closed-form solver.
    pub normal_residual: Option<f64>,
}

/// An objective with a Euclidean gradient, defined on one grid.
pub trait SmoothObjective {
    fn grid(&self) -> Grid;

    fn value(&self, x: &GridFunction) -> Result<f64>;

    fn gradient(&self, x: &GridFunction) -> Result<Vec<f64>>;

    fn ensure_smooth(&self) -> Result<()> {
        Ok(())
    }
}

impl SmoothObjective for TikhonovProblem {
    fn grid(&self) -> Grid {
        self.input_grid()
    }

    fn value(&self, x: &GridFunction) -> Result<f64> {
        self.eval_unconstrained(x)
    }

    fn gradient(&self, x: &GridFunction) -> Result<Vec<f64>> {
        TikhonovProblem::gradient(self, x)
    }

    fn ensure_smooth(&self) -> Result<()> {
        if self.exponent() <= 1.0 {
            return Err(Error::Unsupported(
                "gradient descent needs a misfit exponent p > 1".into(),
            ));
        }
        if self.alpha() > 0.0 && !self.penalty().is_smooth() {
            return Err(Error::Unsupported(format!(
                "penalty {} is not smooth",
                self.penalty().label()
            )));
        }
        Ok(())
    }
}

type ValueFn<'a> = Box<dyn Fn(&GridFunction) -> Result<f64> + 'a>;
type GradFn<'a> = Box<dyn Fn(&GridFunction) -> Result<Vec<f64>> + 'a>;

/// An objective given by closures.
pub struct FnObjective<'a> {
    grid: Grid,
    value: ValueFn<'a>,
    gradient: GradFn<'a>,
}

impl<'a> FnObjective<'a> {
    pub fn new(
        grid: Grid,
        value: impl Fn(&GridFunction) -> Result<f64> + 'a,
        gradient: impl Fn(&GridFunction) -> Result<Vec<f64>> + 'a,
    ) -> Self {
        Self {
            grid,
            value: Box::new(value),
            gradient: Box::new(gradient),
        }
    }
}

impl SmoothObjective for FnObjective<'_> {
    fn grid(&self) -> Grid {
        self.grid
    }

    fn value(&self, x: &GridFunction) -> Result<f64> {
        (self.value)(x)
    }

    fn gradient(&self, x: &GridFunction) -> Result<Vec<f64>> {
        (self.gradient)(x)
    }
}

/// `lambda f` for a positive constant `lambda`.
pub struct Scaled<'a, O: SmoothObjective + ?Sized> {
    pub inner: &'a O,
    pub lambda: f64,
}

impl<O: SmoothObjective + ?Sized> SmoothObjective for Scaled<'_, O> {
    fn grid(&self) -> Grid {
        self.inner.grid()
    }

    fn value(&self, x: &GridFunction) -> Result<f64> {
        Ok(self.lambda * self.inner.value(x)?)
    }

    fn gradient(&self, x: &GridFunction) -> Result<Vec<f64>> {
        Ok(self
            .inner
            .gradient(x)?
            .into_iter()
            .map(|g| self.lambda * g)
            .collect())
    }

    fn ensure_smooth(&self) -> Result<()> {
        self.inner.ensure_smooth()
    }
}

/// L2 norm of the Riesz representative of a Euclidean gradient.
fn riesz_norm(g: &[f64], w: &[f64]) -> f64 {
    g.iter().zip(w).map(|(g, w)| g * g / w).sum::<f64>().sqrt()
}

/// Minimizes `(1/2) ||A x - y||^2 + (alpha/2) ||x - x0||^2` (trapezoid L2 norms
/// on the input and output grids) by the normal equations
/// `(A^T W_y A + alpha W_x) x = A^T W_y y + alpha W_x x0`.
///
/// With `alpha = 0` and a numerically singular `A^T W_y A`, the status is
/// [`SolveStatus::Infeasible`] and the minimizer is zero.
pub fn solve_linear_quadratic(
    matrix: &DMatrix<f64>,
    input_grid: Grid,
    y: &GridFunction,
    alpha: f64,
    shift: Option<&GridFunction>,
) -> Result<SolveResult> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Contract(format!("alpha must be >= 0, got {alpha}")));
    }
    if matrix.ncols() != input_grid.len() || matrix.nrows() != y.len() {
        return Err(Error::GridMismatch(format!(
            "matrix is {}x{}, data has {} and input grid {} nodes",
            matrix.nrows(),
            matrix.ncols(),
            y.len(),
            input_grid.len()
        )));
    }
    if let Some(x0) = shift {
        if x0.grid() != input_grid {
            return Err(Error::GridMismatch("shift must live on the input grid".into()));
        }
    }
    let wx = input_grid.weights();
    let wy = y.grid().weights();
    let sy: Vec<f64> = wy.iter().map(|w| w.sqrt()).collect();
    let mut b = matrix.clone();
    for (i, mut row) in b.row_iter_mut().enumerate() {
        row *= sy[i];
    }
    let by = DVector::from_iterator(y.len(), y.values().iter().zip(&sy).map(|(v, s)| v * s));
    let mut normal = b.transpose() * &b;
    let mut rhs = b.transpose() * &by;
    for i in 0..wx.len() {
        normal[(i, i)] += alpha * wx[i];
        if let Some(x0) = shift {
            rhs[i] += alpha * wx[i] * x0.values()[i];
        }
    }
    let infeasible = |why: String| -> Result<SolveResult> {
        let _ = why;
        Ok(SolveResult {
            minimizer: GridFunction::zeros(input_grid),
            value: ExtReal::PosInf,
            iterations: 0,
            status: SolveStatus::Infeasible,
            grad_norm_final: f64::INFINITY,
            history: Vec::new(),
            normal_residual: None,
        })
    };
    let Some(chol) = normal.clone().cholesky() else {
        return infeasible("normal matrix is not positive definite".into());
    };
    if alpha == 0.0 {
        let d = chol.l_dirty().diagonal();
        let max = d.iter().fold(0.0_f64, |m, v| m.max(v * v));
        let min = d.iter().fold(f64::INFINITY, |m, v| m.min(v * v));
        if min < 1e-13 * max {
            return infeasible(format!("pivot ratio {:e}", min / max));
        }
    }
    let mut x = chol.solve(&rhs);
    // One step of iterative refinement.
    let r = &rhs - &normal * &x;
    x += chol.solve(&r);
    let grad = &normal * &x - &rhs;
    let scale = normal.norm() * x.norm() + rhs.norm();
    let normal_residual = if scale > 0.0 { grad.norm() / scale } else { 0.0 };
    let minimizer = GridFunction::new(input_grid, x.as_slice().to_vec())?;
    let resid = &b * &x - &by;
    let mut value = 0.5 * resid.norm_squared();
    if alpha > 0.0 {
        let d = match shift {
            Some(x0) => minimizer.sub(x0)?,
            None => minimizer.clone(),
        };
        value += 0.5 * alpha * space::inner_l2(&d, &d)?;
    }
    Ok(SolveResult {
        minimizer,
        value: ExtReal::Finite(value),
        iterations: 1,
        status: SolveStatus::Converged,
        grad_norm_final: riesz_norm(grad.as_slice(), &wx),
        history: vec![value],
        normal_residual: Some(normal_residual),
    })
}

/// Projected gradient descent with Armijo backtracking along the projection
/// arc `t -> P(x - t g)`.
pub fn projected_gradient(
    objective: &(impl SmoothObjective + ?Sized),
    domain: &DomainSpec,
    config: &SolveConfig,
    x0: &GridFunction,
) -> Result<SolveResult> {
    projected_gradient_until(objective, domain, config, x0, None)
}

/// As [`projected_gradient`], but stops with [`SolveStatus::TargetReached`]
/// once the objective value drops to `stop_at`.
pub fn projected_gradient_until(
    objective: &(impl SmoothObjective + ?Sized),
    domain: &DomainSpec,
    config: &SolveConfig,
    x0: &GridFunction,
    stop_at: Option<f64>,
) -> Result<SolveResult> {
    config.validate()?;
    objective.ensure_smooth()?;
    let grid = objective.grid();
    if x0.grid() != grid {
        return Err(Error::GridMismatch(format!(
            "starting point lives on {:?}, objective on {grid:?}",
            x0.grid()
        )));
    }
    if !membership(domain, x0) {
        return Ok(SolveResult {
            minimizer: x0.clone(),
            value: ExtReal::PosInf,
            iterations: 0,
            status: SolveStatus::Infeasible,
            grad_norm_final: f64::INFINITY,
            history: Vec::new(),
            normal_residual: None,
        });
    }
    let w = grid.weights();
    let rule = config.step_rule;
    let mut x = x0.clone();
    let mut f = objective.value(&x)?;
    let mut history = vec![f];
    let mut step = rule.initial_step;
    let mut restarts = config.restarts;
    let mut iterations = 0;
    let finish = |x: GridFunction, f: f64, iterations, status, pg, history| SolveResult {
        minimizer: x,
        value: ExtReal::Finite(f),
        iterations,
        status,
        grad_norm_final: pg,
        history,
        normal_residual: None,
    };
    loop {
        let g = objective.gradient(&x)?;
        let d: Vec<f64> = g.iter().zip(&w).map(|(g, w)| g / w).collect();
        let trial = |t: f64| -> Result<GridFunction> {
            let v = x.values().iter().zip(&d).map(|(x, d)| x - t * d).collect();
            domain.project(&x.with_values(v)?)
        };
        let pg = space::norm(&x.sub(&trial(1.0)?)?, NormTag::L2)?;
        if stop_at.is_some_and(|target| f <= target) {
            return Ok(finish(x, f, iterations, SolveStatus::TargetReached, pg, history));
        }
        if pg <= config.grad_tol {
            return Ok(finish(x, f, iterations, SolveStatus::Converged, pg, history));
        }
        if iterations >= config.max_iter {
            return Ok(finish(x, f, iterations, SolveStatus::MaxIter, pg, history));
        }
        let mut t = step;
        let mut accepted = None;
        while t > 1e-20 * rule.initial_step {
            let xt = trial(t)?;
            let ft = objective.value(&xt)?;
            // Predicted decrease <g, x - xt>, nonnegative for a convex domain.
            let dec: f64 = g
                .iter()
                .zip(x.values().iter().zip(xt.values()))
                .map(|(g, (a, b))| g * (a - b))
                .sum();
            let required = rule.sufficient_decrease * dec;
            let roundoff = 4.0 * f64::EPSILON * f.abs();
            if ft <= f - required {
                accepted = Some((xt, ft, t));
                break;
            }
            // Below the resolution of f, insist on a smaller projected
            // gradient instead of a visible decrease.
            if required <= roundoff && ft <= f && projected_step(objective, domain, &xt, &w)? < pg {
                accepted = Some((xt, ft, t));
                break;
            }
            t *= rule.shrink;
        }
        iterations += 1;
        match accepted {
            Some((xt, ft, t)) => {
                x = xt;
                f = ft;
                history.push(f);
                step = t / rule.shrink;
            }
            None if restarts > 0 => {
                restarts -= 1;
                step = rule.initial_step;
            }
            None => return Ok(finish(x, f, iterations, SolveStatus::MaxIter, pg, history)),
        }
    }
}

/// `||x - P(x - g/w)||_L2` at `x`.
fn projected_step(
    objective: &(impl SmoothObjective + ?Sized),
    domain: &DomainSpec,
    x: &GridFunction,
    w: &[f64],
) -> Result<f64> {
    let g = objective.gradient(x)?;
    let v = x.values().iter().zip(g.iter().zip(w)).map(|(x, (g, w))| x - g / w).collect();
    space::norm(&x.sub(&domain.project(&x.with_values(v)?)?)?, NormTag::L2)
}

/// Minimum-L2-norm solution of `A x = y` and its residual.
#[derive(Debug, Clone, PartialEq)]
pub struct MinNormSolution {
    pub solution: GridFunction,
    /// `||A x - y||_L2` at the returned point.
    pub residual: f64,
    /// Least-squares residual from the consistency check.
    pub consistency_residual: f64,
}

/// The alpha values of the continuation ladder, `1e-2` down to `1e-10`.
pub const LADDER: [f64; 9] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10];

/// Minimum-norm solution of `A x = y` as the limit of Tikhonov minimizers
/// along [`LADDER`], with two rounds of Richardson extrapolation on the last
/// three iterates. `y` must be consistent: the weighted least-squares
/// residual has to be below `1e-8`.
pub fn min_penalty_solution(matrix: &DMatrix<f64>, input_grid: Grid, y: &GridFunction) -> Result<MinNormSolution> {
    if matrix.ncols() != input_grid.len() || matrix.nrows() != y.len() {
        return Err(Error::GridMismatch("matrix does not match the grids".into()));
    }
    let wx = input_grid.weights();
    let wy = y.grid().weights();
    // Substitute z = W_x^(1/2) x, so the weighted problem becomes Euclidean.
    let c = DMatrix::from_fn(matrix.nrows(), matrix.ncols(), |i, j| {
        wy[i].sqrt() * matrix[(i, j)] / wx[j].sqrt()
    });
    let b = DVector::from_iterator(y.len(), y.values().iter().zip(&wy).map(|(v, w)| v * w.sqrt()));

    // Rank-revealing QR; the least-squares residual is the part of b outside
    // the span of the leading columns of Q.
    let qr = c.clone().col_piv_qr();
    let r = qr.r();
    let rdiag = r.diagonal();
    let r11 = rdiag.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = r11 * f64::EPSILON * matrix.nrows().max(matrix.ncols()) as f64;
    let rank = rdiag.iter().take_while(|v| v.abs() > tol).count();
    let q = qr.q();
    let qtb = q.columns(0, rank).transpose() * &b;
    let consistency_residual = (&b - q.columns(0, rank) * qtb).norm();
    if consistency_residual >= 1e-8 {
        return Err(Error::Infeasible(format!(
            "data is not in the range: least-squares residual {consistency_residual:e}"
        )));
    }

    let (m, n) = (c.nrows(), c.ncols());
    let iterates: Vec<DVector<f64>> = LADDER
        .iter()
        .map(|&alpha| {
            let stacked = DMatrix::from_fn(m + n, n, |i, j| {
                if i < m {
                    c[(i, j)]
                } else if i - m == j {
                    alpha.sqrt()
                } else {
                    0.0
                }
            });
            let mut rhs = DVector::zeros(m + n);
            rhs.rows_mut(0, m).copy_from(&b);
            let qr = stacked.qr();
            let qtb = qr.q().transpose() * rhs;
            qr.r()
                .solve_upper_triangular(&qtb)
                .ok_or_else(|| Error::Numerical(format!("singular QR factor at alpha = {alpha}")))
        })
        .collect::<Result<_>>()?;
    let k = iterates.len();
    let (z0, z1, z2) = (&iterates[k - 3], &iterates[k - 2], &iterates[k - 1]);
    let r1 = (z2 * 10.0 - z1) / 9.0;
    let r0 = (z1 * 10.0 - z0) / 9.0;
    let z = (r1 * 100.0 - r0) / 99.0;
    let x: Vec<f64> = z.iter().zip(&wx).map(|(z, w)| z / w.sqrt()).collect();
    let solution = GridFunction::new(input_grid, x)?;
    let ax = GridFunction::new(y.grid(), (matrix * DVector::from_column_slice(solution.values())).as_slice().to_vec())?;
    let residual = space::l2_distance(&ax, y)?;
    Ok(MinNormSolution {
        solution,
        residual,
        consistency_residual,
    })
}

/// Largest deviation between the analytic gradient and central differences
/// with step `h_fd`, relative to the largest gradient component.
pub fn grad_check(objective: &(impl SmoothObjective + ?Sized), x: &GridFunction, h_fd: f64) -> Result<f64> {
    if !(h_fd > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {h_fd}")));
    }
    let g = objective.gradient(x)?;
    let mut v = x.values().to_vec();
    let mut worst = 0.0_f64;
    for i in 0..v.len() {
        let orig = v[i];
        v[i] = orig + h_fd;
        let up = objective.value(&x.with_values(v.clone())?)?;
        v[i] = orig - h_fd;
        let dn = objective.value(&x.with_values(v.clone())?)?;
        v[i] = orig;
        worst = worst.max(((up - dn) / (2.0 * h_fd) - g[i]).abs());
    }
    let scale = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok(if scale > 0.0 { worst / scale } else { worst })
}

/// True when `problem` can be handed to [`solve_linear_quadratic`].
pub fn is_linear_quadratic(problem: &TikhonovProblem) -> bool {
    problem.operator().matrix().is_some()
        && problem.exponent() == 2.0
        && (problem.alpha() == 0.0 || problem.penalty().is_half_square())
        && *problem.domain() == DomainSpec::WholeSpace
}

/// Minimizes `lambda T` for `lambda > 0`: closed form for linear-quadratic
/// problems, projected gradient from the origin otherwise.
pub fn minimize_scaled(problem: &TikhonovProblem, lambda: f64, config: &SolveConfig) -> Result<SolveResult> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Unsupported(format!(
            "scaling by {lambda} is not a positive finite factor"
        )));
    }
    if is_linear_quadratic(problem) {
        let a = problem.operator().matrix().expect("checked") * lambda.sqrt();
        let y = problem.data().scaled(lambda.sqrt())?;
        let shift = problem.penalty().shift_on(problem.input_grid())?;
        let mut res = solve_linear_quadratic(&a, problem.input_grid(), &y, lambda * problem.alpha(), shift.as_ref())?;
        if res.status != SolveStatus::Infeasible {
            res.value = problem.eval(&res.minimizer)?.scale(lambda);
        }
        return Ok(res);
    }
    let x0 = problem.domain().project(&GridFunction::zeros(problem.input_grid()))?;
    let scaled = Scaled {
        inner: problem,
        lambda,
    };
    let mut res = projected_gradient(&scaled, problem.domain(), config, &x0)?;
    if res.status != SolveStatus::Infeasible {
        res.value = problem.eval(&res.minimizer)?.scale(lambda);
    }
    Ok(res)
}

pub fn minimize(problem: &TikhonovProblem, config: &SolveConfig) -> Result<SolveResult> {
    minimize_scaled(problem, 1.0, config)
}
