//! Tikhonov functionals `T(x) = (1/p) ||F(x) - y||^p + alpha Omega(x)`, their
//! approximations `T_n`, and the epsilon-minimizer predicate.
//!
//! The data misfit is always measured in the discrete L2 norm of the output
//! grid. Outside the operator's domain every functional is `+inf`.

use std::cmp::Ordering;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{membership, DomainSpec, OperatorFamily, OperatorHandle};
use crate::space::{self, Grid, GridFunction, GridLayout, NormTag};

/// An extended real number.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub enum ExtReal {
    NegInf,
    Finite(f64),
    PosInf,
}

impl ExtReal {
    pub fn is_finite(&self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            ExtReal::Finite(v) => Some(v),
            _ => None,
        }
    }

    /// `f64` view, with the infinities mapped to the float infinities.
    pub fn to_f64(&self) -> f64 {
        match *self {
            ExtReal::NegInf => f64::NEG_INFINITY,
            ExtReal::Finite(v) => v,
            ExtReal::PosInf => f64::INFINITY,
        }
    }

    /// Multiplication by a positive finite scalar.
    pub fn scale(&self, lambda: f64) -> Self {
        assert!(
            lambda > 0.0 && lambda.is_finite(),
            "scale factor must be positive and finite, got {lambda}"
        );
        match *self {
            ExtReal::Finite(v) => ExtReal::Finite(lambda * v),
            other => other,
        }
    }

    /// Sum with a finite number.
    pub fn add(&self, c: f64) -> Self {
        match *self {
            ExtReal::Finite(v) => ExtReal::Finite(v + c),
            other => other,
        }
    }

    pub fn max(self, other: Self) -> Self {
        match self.partial_cmp(&other) {
            Some(Ordering::Less) => other,
            _ => self,
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::NegInf => write!(f, "-inf"),
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::PosInf => write!(f, "inf"),
        }
    }
}

/// The penalty `Omega`.
#[derive(Debug, Clone, PartialEq)]
pub enum Penalty {
    /// `(1/2) ||x||_L2^2`.
    HalfSqL2,
    /// `(1/q) ||x||^q` in the given norm, `q >= 1`.
    PowerNorm { q: f64, tag: NormTag },
    /// `||x||_Linf`.
    Linf,
    /// `(1/2) ||x - x0||_L2^2`; `x0` is interpolated onto the argument's grid.
    ShiftedHalfSq(GridFunction),
}

impl Penalty {
    pub fn power_norm(q: f64, tag: NormTag) -> Result<Self> {
        if !(q >= 1.0 && q.is_finite()) {
            return Err(Error::Contract(format!("penalty power must be >= 1, got {q}")));
        }
        Ok(Penalty::PowerNorm { q, tag })
    }

    pub fn label(&self) -> String {
        match self {
            Penalty::HalfSqL2 => "half_sq_l2".into(),
            Penalty::PowerNorm { q, tag } => format!("p_power_norm({q},{})", tag.label()),
            Penalty::Linf => "linf".into(),
            Penalty::ShiftedHalfSq(_) => "shifted_half_sq".into(),
        }
    }

    pub fn is_smooth(&self) -> bool {
        match self {
            Penalty::HalfSqL2 | Penalty::ShiftedHalfSq(_) => true,
            Penalty::PowerNorm { q, tag } => *q > 1.0 && *tag != NormTag::Linf,
            Penalty::Linf => false,
        }
    }

    /// True when the penalty is `(1/2) ||x - x0||^2` for some `x0`.
    pub fn is_half_square(&self) -> bool {
        match self {
            Penalty::HalfSqL2 | Penalty::ShiftedHalfSq(_) => true,
            Penalty::PowerNorm { q, tag } => *q == 2.0 && *tag == NormTag::L2,
            Penalty::Linf => false,
        }
    }

    /// The shift `x0` on `grid`, if any.
    pub fn shift_on(&self, grid: Grid) -> Result<Option<GridFunction>> {
        match self {
            Penalty::ShiftedHalfSq(x0) => shift_to(x0, grid).map(Some),
            _ => Ok(None),
        }
    }

    pub fn eval(&self, x: &GridFunction) -> Result<f64> {
        match self {
            Penalty::HalfSqL2 => Ok(0.5 * space::inner_l2(x, x)?),
            Penalty::PowerNorm { q, tag } => Ok(space::norm(x, *tag)?.powf(*q) / q),
            Penalty::Linf => space::norm(x, NormTag::Linf),
            Penalty::ShiftedHalfSq(x0) => {
                let d = x.sub(&shift_to(x0, x.grid())?)?;
                Ok(0.5 * space::inner_l2(&d, &d)?)
            }
        }
    }

    /// Euclidean gradient with respect to the nodal values.
    pub fn gradient(&self, x: &GridFunction) -> Result<Vec<f64>> {
        let w = x.grid().weights();
        let weighted = |v: &[f64]| v.iter().zip(&w).map(|(a, b)| a * b).collect::<Vec<_>>();
        match self {
            Penalty::HalfSqL2 => Ok(weighted(x.values())),
            Penalty::ShiftedHalfSq(x0) => Ok(weighted(x.sub(&shift_to(x0, x.grid())?)?.values())),
            Penalty::PowerNorm { q, tag } if self.is_smooth() => {
                let nrm = space::norm(x, *tag)?;
                let base = match tag {
                    NormTag::L2 => weighted(x.values()),
                    NormTag::H10 => h10_half_sq_gradient(x),
                    NormTag::Linf => unreachable!("excluded by is_smooth"),
                };
                let factor = if nrm == 0.0 { 0.0 } else { nrm.powf(q - 2.0) };
                Ok(base.into_iter().map(|v| factor * v).collect())
            }
            _ => Err(Error::Unsupported(format!(
                "{} is not differentiable",
                self.label()
            ))),
        }
    }

    /// A function `gamma` with `Omega(x) >= gamma(||x||_L2)` for every `x` on
    /// any grid; `gamma(r) -> inf` as `r -> inf`, so sublevel sets are bounded.
    pub fn lower_bound(&self, r: f64) -> f64 {
        match self {
            Penalty::HalfSqL2 => 0.5 * r * r,
            // ||x||_L2 <= ||x||_Linf since the trapezoid weights sum to at most 1,
            // and ||x||_H1_0 >= 2 ||x||_L2 by the discrete Poincare inequality.
            Penalty::PowerNorm { q, tag } => {
                let c = if *tag == NormTag::H10 { 2.0 } else { 1.0 };
                (c * r).powf(*q) / q
            }
            Penalty::Linf => r,
            Penalty::ShiftedHalfSq(x0) => {
                let r0 = space::norm(x0, NormTag::L2).unwrap_or(0.0);
                let d = (r - r0).max(0.0);
                0.5 * d * d
            }
        }
    }
}

fn shift_to(x0: &GridFunction, grid: Grid) -> Result<GridFunction> {
    if x0.grid() == grid {
        return Ok(x0.clone());
    }
    match grid.layout() {
        GridLayout::Full => space::resample(x0, grid.len()),
        GridLayout::Interior => Err(Error::GridMismatch(
            "a penalty shift can only be transferred to full grids".into(),
        )),
    }
}

/// Gradient of `(1/2) ||x||_H1_0^2`: the stiffness matrix applied to `x`.
fn h10_half_sq_gradient(x: &GridFunction) -> Vec<f64> {
    let v = x.values();
    let n = v.len();
    let h = x.spacing();
    (0..n)
        .map(|i| {
            let left = if i > 0 { v[i - 1] } else { 0.0 };
            let right = if i + 1 < n { v[i + 1] } else { 0.0 };
            (2.0 * v[i] - left - right) / h
        })
        .collect()
}

/// A Tikhonov functional on the input grid of its operator.
#[derive(Debug, Clone)]
pub struct TikhonovProblem {
    operator: OperatorHandle,
    data: GridFunction,
    alpha: f64,
    exponent: f64,
    penalty: Penalty,
}

impl TikhonovProblem {
    pub fn new(operator: OperatorHandle, data: GridFunction, alpha: f64, exponent: f64, penalty: Penalty) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Contract(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(exponent >= 1.0 && exponent.is_finite()) {
            return Err(Error::Contract(format!("exponent must be >= 1, got {exponent}")));
        }
        if data.grid() != operator.output_grid() {
            return Err(Error::GridMismatch(format!(
                "data lives on {:?}, operator maps into {:?}",
                data.grid(),
                operator.output_grid()
            )));
        }
        Ok(Self {
            operator,
            data,
            alpha,
            exponent,
            penalty,
        })
    }

    pub fn operator(&self) -> &OperatorHandle {
        &self.operator
    }

    pub fn data(&self) -> &GridFunction {
        &self.data
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn penalty(&self) -> &Penalty {
        &self.penalty
    }

    pub fn domain(&self) -> &DomainSpec {
        self.operator.domain()
    }

    pub fn input_grid(&self) -> Grid {
        self.operator.input_grid()
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(
            self.operator.clone(),
            self.data.clone(),
            alpha,
            self.exponent,
            self.penalty.clone(),
        )
    }

    fn require_input(&self, x: &GridFunction) -> Result<()> {
        if x.grid() != self.input_grid() {
            return Err(Error::GridMismatch(format!(
                "argument lives on {:?}, functional is defined on {:?}",
                x.grid(),
                self.input_grid()
            )));
        }
        Ok(())
    }

    /// `F(x) - y`, ignoring the domain.
    pub fn residual(&self, x: &GridFunction) -> Result<GridFunction> {
        self.require_input(x)?;
        self.operator.operator().apply(x)?.sub(&self.data)
    }

    /// `||F(x) - y||_L2`, ignoring the domain.
    pub fn discrepancy(&self, x: &GridFunction) -> Result<f64> {
        space::norm(&self.residual(x)?, NormTag::L2)
    }

    /// The functional without the domain constraint.
    pub fn eval_unconstrained(&self, x: &GridFunction) -> Result<f64> {
        let r = self.discrepancy(x)?;
        let misfit = r.powf(self.exponent) / self.exponent;
        if self.alpha == 0.0 {
            return Ok(misfit);
        }
        Ok(misfit + self.alpha * self.penalty.eval(x)?)
    }

    pub fn eval(&self, x: &GridFunction) -> Result<ExtReal> {
        self.require_input(x)?;
        if !membership(self.domain(), x) {
            return Ok(ExtReal::PosInf);
        }
        Ok(ExtReal::Finite(self.eval_unconstrained(x)?))
    }

    /// Euclidean gradient of the unconstrained functional.
    pub fn gradient(&self, x: &GridFunction) -> Result<Vec<f64>> {
        let r = self.residual(x)?;
        let wr: Vec<f64> = r
            .values()
            .iter()
            .zip(r.grid().weights())
            .map(|(v, w)| v * w)
            .collect();
        let nrm = space::norm(&r, NormTag::L2)?;
        let factor = if self.exponent == 2.0 {
            1.0
        } else if nrm == 0.0 {
            0.0
        } else {
            nrm.powf(self.exponent - 2.0)
        };
        let mut g = self.operator.operator().jacobian_transpose(x, &wr)?;
        for v in &mut g {
            *v *= factor;
        }
        if self.alpha > 0.0 {
            for (gi, pi) in g.iter_mut().zip(self.penalty.gradient(x)?) {
                *gi += self.alpha * pi;
            }
        }
        Ok(g)
    }
}

/// Regularization weights `alpha_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum AlphaSchedule {
    Constant(f64),
    /// `a n^(-beta)`.
    Power { a: f64, beta: f64 },
    /// `alpha + a n^(-beta)`.
    Offset { alpha: f64, a: f64, beta: f64 },
}

impl AlphaSchedule {
    pub fn at(&self, n: usize) -> f64 {
        let n = n as f64;
        match *self {
            AlphaSchedule::Constant(a) => a,
            AlphaSchedule::Power { a, beta } => a * n.powf(-beta),
            AlphaSchedule::Offset { alpha, a, beta } => alpha + a * n.powf(-beta),
        }
    }

    /// `lim alpha_n`.
    pub fn limit(&self) -> f64 {
        let tail = |a: f64, beta: f64| match beta.partial_cmp(&0.0) {
            Some(Ordering::Greater) => 0.0,
            Some(Ordering::Equal) => a,
            _ if a == 0.0 => 0.0,
            _ => f64::INFINITY.copysign(a),
        };
        match *self {
            AlphaSchedule::Constant(a) => a,
            AlphaSchedule::Power { a, beta } => tail(a, beta),
            AlphaSchedule::Offset { alpha, a, beta } => alpha + tail(a, beta),
        }
    }

    /// `inf_n alpha_n` over the given levels.
    pub fn floor(&self, levels: &[usize]) -> f64 {
        levels
            .iter()
            .map(|&n| self.at(n))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Perturbations `y_n - y` of prescribed size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum NoiseSchedule {
    None,
    /// `||y_n - y|| = c n^(-gamma)` along the constant direction.
    Power { c: f64, gamma: f64 },
    /// Same size along a seeded random direction.
    Random { c: f64, gamma: f64, seed: u64 },
}

impl NoiseSchedule {
    pub fn magnitude(&self, n: usize) -> f64 {
        match *self {
            NoiseSchedule::None => 0.0,
            NoiseSchedule::Power { c, gamma } | NoiseSchedule::Random { c, gamma, .. } => {
                c * (n as f64).powf(-gamma)
            }
        }
    }

    /// `y_n - y` on `grid`, with L2 norm `magnitude(n)`.
    pub fn perturbation(&self, grid: Grid, n: usize) -> Result<GridFunction> {
        let delta = self.magnitude(n);
        let dir = match *self {
            NoiseSchedule::None => return Ok(GridFunction::zeros(grid)),
            NoiseSchedule::Power { .. } => GridFunction::constant(grid, 1.0)?,
            NoiseSchedule::Random { seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let v = (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
                GridFunction::new(grid, v)?
            }
        };
        let nrm = space::norm(&dir, NormTag::L2)?;
        dir.scaled(delta / nrm)
    }
}

/// The approximating functionals `T_n` built from `(F_n, y_n, alpha_n)`.
#[derive(Debug, Clone)]
pub struct ApproxSequence {
    family: OperatorFamily,
    data: GridFunction,
    alpha: AlphaSchedule,
    noise: NoiseSchedule,
    exponent: f64,
    penalty: Penalty,
}

impl ApproxSequence {
    /// `data` is the exact `y` on the reference output grid.
    pub fn new(
        family: OperatorFamily,
        data: GridFunction,
        alpha: AlphaSchedule,
        noise: NoiseSchedule,
        exponent: f64,
        penalty: Penalty,
    ) -> Result<Self> {
        if data.grid() != family.reference().output_grid() {
            return Err(Error::GridMismatch(
                "data must live on the reference output grid".into(),
            ));
        }
        if !(exponent >= 1.0 && exponent.is_finite()) {
            return Err(Error::Contract(format!("exponent must be >= 1, got {exponent}")));
        }
        Ok(Self {
            family,
            data,
            alpha,
            noise,
            exponent,
            penalty,
        })
    }

    pub fn family(&self) -> &OperatorFamily {
        &self.family
    }

    pub fn data(&self) -> &GridFunction {
        &self.data
    }

    pub fn alpha_schedule(&self) -> &AlphaSchedule {
        &self.alpha
    }

    pub fn noise(&self) -> &NoiseSchedule {
        &self.noise
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn penalty(&self) -> &Penalty {
        &self.penalty
    }

    pub fn levels(&self) -> Vec<usize> {
        self.family.level_indices()
    }

    pub fn alpha_at(&self, n: usize) -> Result<f64> {
        let a = self.alpha.at(n);
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Contract(format!("alpha_{n} = {a} is not positive")));
        }
        Ok(a)
    }

    /// Noisy data on the reference output grid.
    pub fn reference_data_at(&self, n: usize) -> Result<GridFunction> {
        self.data.add(&self.noise.perturbation(self.data.grid(), n)?)
    }

    /// `y_n` on the output grid of `F_n`.
    pub fn data_at(&self, n: usize) -> Result<GridFunction> {
        let out = self.family.level(n)?.operator.output_grid();
        let yn = self.reference_data_at(n)?;
        if out == yn.grid() {
            Ok(yn)
        } else {
            space::resample(&yn, out.len())
        }
    }

    /// `||y_n - y||` measured on the reference grid.
    pub fn data_gap(&self, n: usize) -> Result<f64> {
        let out = self.family.level(n)?.operator.output_grid();
        let yn = self.data_at(n)?;
        let yn = if out == self.data.grid() {
            yn
        } else {
            space::resample(&yn, self.data.len())?
        };
        space::l2_distance(&yn, &self.data)
    }

    pub fn level_problem(&self, n: usize) -> Result<TikhonovProblem> {
        TikhonovProblem::new(
            self.family.level(n)?.operator.clone(),
            self.data_at(n)?,
            self.alpha_at(n)?,
            self.exponent,
            self.penalty.clone(),
        )
    }

    /// `T` with the reference operator, exact data and `alpha = lim alpha_n`.
    pub fn target_problem(&self) -> Result<TikhonovProblem> {
        let alpha = self.alpha.limit();
        if !alpha.is_finite() {
            return Err(Error::Contract("alpha_n diverges".into()));
        }
        TikhonovProblem::new(
            self.family.reference().clone(),
            self.data.clone(),
            alpha,
            self.exponent,
            self.penalty.clone(),
        )
    }
}

pub fn eval_t(problem: &TikhonovProblem, x: &GridFunction) -> Result<ExtReal> {
    problem.eval(x)
}

pub fn eval_tn(seq: &ApproxSequence, n: usize, x: &GridFunction) -> Result<ExtReal> {
    seq.level_problem(n)?.eval(x)
}

/// `T_n(x) / alpha_n`.
pub fn eval_scaled(seq: &ApproxSequence, n: usize, x: &GridFunction) -> Result<ExtReal> {
    let a = seq.alpha_at(n)?;
    Ok(eval_tn(seq, n, x)?.scale(1.0 / a))
}

/// `value <= max(inf + eps, -1/eps)`.
///
/// # Panics
/// If `eps` is not positive.
pub fn is_eps_minimizer(value: ExtReal, inf_estimate: ExtReal, eps: f64) -> bool {
    assert!(eps > 0.0, "eps must be positive, got {eps}");
    let threshold = inf_estimate.add(eps).max(ExtReal::Finite(-1.0 / eps));
    value <= threshold
}
