//! Piecewise-linear Galerkin finite elements for `-u'' + c u = f` on (0, 1)
//! with homogeneous Dirichlet conditions.
//!
//! Level `n` has `n` interior nodes `x_i = i h`, `h = 1/(n+1)`, and the usual
//! hat basis. The stiffness matrix is assembled exactly; the potential and
//! load terms use two-point Gauss quadrature on each element.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::forward::{FamilyLevel, MatrixOperator, OperatorFamily, OperatorHandle};
use crate::space::{self, Grid, GridFunction};

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A coefficient function on [0, 1]: the potential `c` or the source `f`.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    Function(Arc<ScalarFn>),
    /// Sampled values, interpolated piecewise linearly.
    Table(GridFunction),
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Function(_) => write!(f, "Function(..)"),
            Coefficient::Table(g) => write!(f, "Table({} nodes)", g.len()),
        }
    }
}

impl Coefficient {
    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Function(Arc::new(f))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Function(f) => f(x),
            Coefficient::Table(g) => g.eval_at(x),
        }
    }
}

/// `-u'' + c u = f`, `u(0) = u(1) = 0`, optionally with a known solution.
#[derive(Clone)]
pub struct EllipticProblem {
    pub potential: Coefficient,
    pub source: Coefficient,
    pub manufactured: Option<Arc<ScalarFn>>,
}

impl fmt::Debug for EllipticProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EllipticProblem")
            .field("potential", &self.potential)
            .field("source", &self.source)
            .field("manufactured", &self.manufactured.is_some())
            .finish()
    }
}

impl EllipticProblem {
    pub fn new(potential: Coefficient, source: Coefficient) -> Self {
        Self {
            potential,
            source,
            manufactured: None,
        }
    }

    pub fn with_solution(mut self, u: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.manufactured = Some(Arc::new(u));
        self
    }

    /// `u = sin(pi x)` with constant potential `c`, so `f = (pi^2 + c) sin(pi x)`.
    pub fn sin_pi(c: f64) -> Self {
        use std::f64::consts::PI;
        Self::new(
            Coefficient::Constant(c),
            Coefficient::function(move |x| (PI * PI + c) * (PI * x).sin()),
        )
        .with_solution(|x| (PI * x).sin())
    }
}

/// The finite element space with `n` interior nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GalerkinLevel {
    n: usize,
}

impl GalerkinLevel {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGrid("a Galerkin level needs n >= 1".into()));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n + 1) as f64
    }

    /// The next nested level, `n -> 2n + 1`, which halves `h`.
    pub fn refine(&self) -> Self {
        Self { n: 2 * self.n + 1 }
    }

    pub fn grid(&self) -> Grid {
        Grid::interior(self.n).expect("n >= 1")
    }
}

/// A tridiagonal linear system `A u = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalSystem {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl TridiagonalSystem {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn is_symmetric(&self) -> bool {
        self.sub == self.sup
    }

    pub fn matvec(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * u[i];
                if i > 0 {
                    v += self.sub[i - 1] * u[i - 1];
                }
                if i + 1 < n {
                    v += self.sup[i] * u[i + 1];
                }
                v
            })
            .collect()
    }

    /// `A u - rhs`.
    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        self.matvec(u)
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Thomas algorithm.
    pub fn solve(&self) -> Result<Vec<f64>> {
        self.solve_rhs(&self.rhs)
    }

    fn solve_rhs(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let scale = self.diag.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            let lower = if i > 0 { self.sub[i - 1] } else { 0.0 };
            let prev_c = if i > 0 { c[i - 1] } else { 0.0 };
            let prev_d = if i > 0 { d[i - 1] } else { 0.0 };
            let pivot = self.diag[i] - lower * prev_c;
            if !(pivot.abs() > f64::EPSILON * scale) {
                return Err(Error::Numerical(format!("zero pivot at row {i}")));
            }
            c[i] = if i + 1 < n { self.sup[i] / pivot } else { 0.0 };
            d[i] = (rhs[i] - lower * prev_d) / pivot;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        Ok(d)
    }
}

const GAUSS2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

const GAUSS5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GAUSS5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Assembles the Galerkin system for `problem` on `level`.
pub fn assemble(problem: &EllipticProblem, level: GalerkinLevel) -> Result<TridiagonalSystem> {
    let n = level.n;
    let h = level.h();
    let mut diag = vec![2.0 / h; n];
    let mut off = vec![-1.0 / h; n.saturating_sub(1)];
    let mut rhs = vec![0.0; n];
    // Element k spans [k h, (k+1) h]; its left node is interior index k-1 and
    // its right node is interior index k.
    for k in 0..=n {
        let x0 = k as f64 * h;
        for g in GAUSS2 {
            let xi = x0 + 0.5 * h * (1.0 + g);
            let w = 0.5 * h;
            let c = problem.potential.eval(xi);
            if c < 0.0 || c.is_nan() {
                return Err(Error::Ellipticity { value: c, at: xi });
            }
            let f = problem.source.eval(xi);
            if !f.is_finite() {
                return Err(Error::Numerical(format!("source is not finite at x = {xi}")));
            }
            let right = (xi - x0) / h;
            let left = 1.0 - right;
            if k >= 1 {
                let i = k - 1;
                diag[i] += w * c * left * left;
                rhs[i] += w * f * left;
            }
            if k < n {
                diag[k] += w * c * right * right;
                rhs[k] += w * f * right;
            }
            if k >= 1 && k < n {
                off[k - 1] += w * c * left * right;
            }
        }
    }
    Ok(TridiagonalSystem {
        sub: off.clone(),
        diag,
        sup: off,
        rhs,
    })
}

fn check_residual(system: &TridiagonalSystem, u: &[f64]) -> Result<()> {
    let inf = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let a_norm = (0..system.len())
        .map(|i| {
            system.diag[i].abs()
                + if i > 0 { system.sub[i - 1].abs() } else { 0.0 }
                + if i + 1 < system.len() { system.sup[i].abs() } else { 0.0 }
        })
        .fold(0.0_f64, f64::max);
    let r = inf(&system.residual(u));
    let scale = a_norm * inf(u) + inf(&system.rhs);
    if r > 1e-12 * scale {
        return Err(Error::Numerical(format!(
            "tridiagonal residual {r:e} exceeds tolerance (scale {scale:e})"
        )));
    }
    Ok(())
}

/// Galerkin solution `u_n` as an interior-node function.
pub fn solve_bvp(problem: &EllipticProblem, level: GalerkinLevel) -> Result<GridFunction> {
    let system = assemble(problem, level)?;
    let u = system.solve()?;
    check_residual(&system, &u)?;
    GridFunction::new(level.grid(), u)
}

/// `F_n(f) = u_n`: the source-to-solution map at `level`, with `f` given on
/// any grid.
pub fn fem_forward(f: &GridFunction, c: &Coefficient, level: GalerkinLevel) -> Result<GridFunction> {
    let problem = EllipticProblem::new(c.clone(), Coefficient::Table(f.clone()));
    solve_bvp(&problem, level)
}

/// `a_c(u, u)` for the system's matrix.
pub fn energy(system: &TridiagonalSystem, u: &[f64]) -> f64 {
    system.matvec(u).iter().zip(u).map(|(a, b)| a * b).sum()
}

/// Dense realization of `F_n` from sources sampled on a full grid with `m_x`
/// nodes to solutions sampled on a full grid with `m_y` nodes.
pub fn fem_matrix(c: &Coefficient, level: GalerkinLevel, m_x: usize, m_y: usize) -> Result<DMatrix<f64>> {
    let x_grid = Grid::full(m_x)?;
    Grid::full(m_y)?;
    // The system matrix does not depend on the source.
    let base = assemble(&EllipticProblem::new(c.clone(), Coefficient::Constant(0.0)), level)?;
    let mut m = DMatrix::zeros(m_y, m_x);
    for j in 0..m_x {
        let mut e = vec![0.0; m_x];
        e[j] = 1.0;
        let unit = GridFunction::new(x_grid, e)?;
        let load = assemble(
            &EllipticProblem::new(Coefficient::Constant(0.0), Coefficient::Table(unit)),
            level,
        )?
        .rhs;
        let u = base.solve_rhs(&load)?;
        let u = space::resample(&GridFunction::new(level.grid(), u)?, m_y)?;
        m.set_column(j, &nalgebra::DVector::from_column_slice(u.values()));
    }
    Ok(m)
}

/// `F_n` as a linear operator between full grids.
pub fn fem_operator(c: &Coefficient, level: GalerkinLevel, m_x: usize, m_y: usize) -> Result<MatrixOperator> {
    MatrixOperator::new(
        format!("fem[n={}]", level.n()),
        Grid::full(m_x)?,
        Grid::full(m_y)?,
        fem_matrix(c, level, m_x, m_y)?,
    )
}

/// Family of Galerkin solution operators with the reference `F = F_{n_ref}`.
pub fn make_fem_family(
    potential: &Coefficient,
    levels: &[usize],
    n_ref: usize,
    m_x: usize,
    m_y: usize,
) -> Result<OperatorFamily> {
    let max = levels.iter().copied().max().unwrap_or(0);
    if n_ref < 16 * max {
        return Err(Error::Contract(format!(
            "reference level {n_ref} must be at least 16 x the finest level {max}"
        )));
    }
    let lv = levels
        .iter()
        .map(|&n| {
            Ok(FamilyLevel {
                n,
                operator: OperatorHandle::whole_space(fem_operator(
                    potential,
                    GalerkinLevel::new(n)?,
                    m_x,
                    m_y,
                )?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reference =
        OperatorHandle::whole_space(fem_operator(potential, GalerkinLevel::new(n_ref)?, m_x, m_y)?);
    OperatorFamily::new("fem", lv, reference)
}

/// L2 distance between the piecewise-linear `u_n` and a function `u`, with
/// five-point Gauss quadrature on each element.
pub fn l2_error(u_n: &GridFunction, u: &dyn Fn(f64) -> f64) -> f64 {
    let n = u_n.len();
    let h = 1.0 / (n + 1) as f64;
    let node = |i: usize| -> f64 {
        if i == 0 || i == n + 1 {
            0.0
        } else {
            u_n.values()[i - 1]
        }
    };
    let mut acc = 0.0;
    for k in 0..=n {
        let x0 = k as f64 * h;
        let (a, b) = (node(k), node(k + 1));
        for (g, w) in GAUSS5_NODES.iter().zip(GAUSS5_WEIGHTS) {
            let t = 0.5 * (1.0 + g);
            let x = x0 + t * h;
            let d = a + t * (b - a) - u(x);
            acc += 0.5 * h * w * d * d;
        }
    }
    acc.sqrt()
}

/// Result of a convergence-rate study.
#[derive(Debug, Clone, PartialEq)]
pub struct RateStudy {
    pub levels: Vec<usize>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `log(error)` against `log(n)`.
    pub slope: f64,
    /// `exp(intercept)` of the same fit: the empirical constant in `C n^slope`.
    pub constant: f64,
}

pub fn rate_study(problem: &EllipticProblem, levels: &[usize]) -> Result<RateStudy> {
    if levels.len() < 3 {
        return Err(Error::Contract(format!(
            "a rate study needs at least 3 levels, got {}",
            levels.len()
        )));
    }
    let u = problem
        .manufactured
        .as_ref()
        .ok_or_else(|| Error::Contract("a rate study needs a manufactured solution".into()))?;
    let errors = levels
        .iter()
        .map(|&n| Ok(l2_error(&solve_bvp(problem, GalerkinLevel::new(n)?)?, u.as_ref())))
        .collect::<Result<Vec<_>>>()?;
    if errors.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Numerical(
            "an error is zero, so no log-log slope exists".into(),
        ));
    }
    let xs: Vec<f64> = levels.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (slope, intercept) = fit_line(&xs, &ys);
    Ok(RateStudy {
        levels: levels.to_vec(),
        errors,
        slope,
        constant: intercept.exp(),
    })
}

/// Ordinary least-squares line `y = slope x + intercept`.
pub(crate) fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::NormTag;
    use std::f64::consts::PI;

    fn level(n: usize) -> GalerkinLevel {
        GalerkinLevel::new(n).unwrap()
    }

    #[test]
    fn pure_stiffness_with_zero_data() {
        let p = EllipticProblem::new(Coefficient::Constant(0.0), Coefficient::Constant(0.0));
        let s = assemble(&p, level(4)).unwrap();
        assert!(s.rhs.iter().all(|&v| v == 0.0));
        assert!(s.diag.iter().all(|&v| (v - 10.0).abs() < 1e-12));
        assert!(s.sub.iter().all(|&v| (v + 5.0).abs() < 1e-12));
    }

    #[test]
    fn single_hat_with_unit_potential() {
        let p = EllipticProblem::new(Coefficient::Constant(1.0), Coefficient::Constant(0.0));
        let s = assemble(&p, level(1)).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s.diag[0] - (4.0 + 1.0 / 3.0)).abs() < 1e-14);
    }

    #[test]
    fn assembled_matrix_is_symmetric() {
        let p = EllipticProblem::new(
            Coefficient::function(|x| 1.0 + x * x),
            Coefficient::function(|x| x.exp()),
        );
        assert!(assemble(&p, level(17)).unwrap().is_symmetric());
    }

    #[test]
    fn negative_potential_rejected() {
        let p = EllipticProblem::new(Coefficient::function(|x| x - 0.5), Coefficient::Constant(1.0));
        match assemble(&p, level(7)) {
            Err(Error::Ellipticity { value, at }) => {
                assert!(value < 0.0);
                assert!(at < 0.5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_level_rejected() {
        assert!(GalerkinLevel::new(0).is_err());
        assert_eq!(level(3).refine().n(), 7);
        assert!((level(3).refine().h() - level(3).h() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn thomas_detects_zero_pivot() {
        let s = TridiagonalSystem {
            sub: vec![1.0],
            diag: vec![0.0, 1.0],
            sup: vec![1.0],
            rhs: vec![1.0, 1.0],
        };
        assert!(matches!(s.solve(), Err(Error::Numerical(_))));
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let p = EllipticProblem::new(Coefficient::Constant(1.0), Coefficient::Constant(0.0));
        let u = solve_bvp(&p, level(9)).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn manufactured_sine_solutions() {
        for c in [0.0, 1.0] {
            let p = EllipticProblem::sin_pi(c);
            let u = solve_bvp(&p, level(31)).unwrap();
            let e = l2_error(&u, &|x| (PI * x).sin());
            assert!(e < 1e-2, "c = {c}: error {e}");
        }
    }

    #[test]
    fn quadratic_solution_is_nodally_exact() {
        let p = EllipticProblem::new(Coefficient::Constant(0.0), Coefficient::Constant(2.0));
        let u = solve_bvp(&p, level(15)).unwrap();
        for (x, v) in u.grid().nodes().iter().zip(u.values()) {
            assert!((v - x * (1.0 - x)).abs() < 1e-13);
        }
        let e = l2_error(&u, &|x| x * (1.0 - x));
        // Only the interpolation error of the quadratic remains: h^2 / sqrt(30).
        let h = level(15).h();
        assert!((e - h * h / 30f64.sqrt()).abs() < 1e-12, "error {e}");
    }

    #[test]
    fn rate_study_on_sine() {
        let r = rate_study(&EllipticProblem::sin_pi(1.0), &[7, 15, 31, 63, 127]).unwrap();
        assert!((-2.2..=-1.8).contains(&r.slope), "slope {}", r.slope);
        let i31 = r.levels.iter().position(|&n| n == 31).unwrap();
        let ratio = r.errors[i31] / r.errors[i31 + 1];
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
        assert!(r.errors.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.constant > 0.0);
    }

    #[test]
    fn rate_study_preconditions() {
        assert!(rate_study(&EllipticProblem::sin_pi(1.0), &[7, 15]).is_err());
        let p = EllipticProblem::new(Coefficient::Constant(1.0), Coefficient::Constant(1.0));
        assert!(rate_study(&p, &[7, 15, 31]).is_err());
    }

    #[test]
    fn forward_map_is_linear() {
        let c = Coefficient::Constant(1.0);
        let f1 = GridFunction::full_from_fn(65, |x| (PI * x).sin()).unwrap();
        let f2 = GridFunction::full_from_fn(65, |x| x * x - 0.2).unwrap();
        let lv = level(31);
        let zero = fem_forward(&GridFunction::zeros(f1.grid()), &c, lv).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let sum = fem_forward(&f1.add(&f2).unwrap(), &c, lv).unwrap();
        let parts = fem_forward(&f1, &c, lv)
            .unwrap()
            .add(&fem_forward(&f2, &c, lv).unwrap())
            .unwrap();
        for (a, b) in sum.values().iter().zip(parts.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_map_converges_to_reference() {
        let c = Coefficient::Constant(1.0);
        let f = GridFunction::full_from_fn(4097, |x| (PI * PI + 1.0) * (PI * x).sin()).unwrap();
        let coarse = fem_forward(&f, &c, level(255)).unwrap();
        let fine = fem_forward(&f, &c, level(4095)).unwrap();
        let d = space::l2_distance(
            &space::resample(&coarse, 4097).unwrap(),
            &space::resample(&fine, 4097).unwrap(),
        )
        .unwrap();
        assert!(d < 1e-4, "gap {d}");
    }

    #[test]
    fn galerkin_orthogonality_and_coercivity() {
        let p = EllipticProblem::new(
            Coefficient::function(|x| 2.0 + (3.0 * x).sin()),
            Coefficient::function(|x| (5.0 * x).cos()),
        );
        let lv = level(40);
        let s = assemble(&p, lv).unwrap();
        let u = solve_bvp(&p, lv).unwrap();
        assert!(s.residual(u.values()).iter().all(|r| r.abs() < 1e-10));
        let h10 = space::norm(&u, NormTag::H10).unwrap();
        assert!(energy(&s, u.values()) >= h10 * h10);
    }

    #[test]
    fn matrix_realization_matches_direct_solve() {
        let c = Coefficient::Constant(1.0);
        let lv = level(15);
        let op = fem_operator(&c, lv, 33, 17).unwrap();
        let f = GridFunction::full_from_fn(33, |x| (2.0 * x).exp()).unwrap();
        use crate::forward::Operator;
        let a = op.apply(&f).unwrap();
        let b = space::resample(&fem_forward(&f, &c, lv).unwrap(), 17).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn fem_family_reference_must_be_fine() {
        let c = Coefficient::Constant(1.0);
        assert!(make_fem_family(&c, &[7, 15], 200, 17, 17).is_err());
        let fam = make_fem_family(&c, &[3, 7], 127, 17, 17).unwrap();
        assert_eq!(fam.level_indices(), vec![3, 7]);
    }

    #[test]
    fn table_potential_interpolates() {
        let table = GridFunction::full_from_fn(3, |x| x).unwrap();
        let c = Coefficient::Table(table);
        assert!((c.eval(0.25) - 0.25).abs() < 1e-15);
    }
}
