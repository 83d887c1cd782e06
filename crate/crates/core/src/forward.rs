//! Forward operators and their approximating families.
//!
//! The built-in operator is the first-kind integral operator
//! `F(x)(t) = int_0^1 K(s, t) x(s) ds`, discretized by the trapezoid rule on
//! a uniform grid. Approximating operators `F_n` use the same kernel with
//! fewer quadrature nodes.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::space::{self, Grid, GridFunction, GridLayout, NormTag};

type KernelFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A continuous kernel `K: [0,1]^2 -> R`.
#[derive(Clone)]
pub struct Kernel {
    label: String,
    eval: Arc<KernelFn>,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel").field("label", &self.label).finish()
    }
}

impl Kernel {
    pub fn custom(
        label: impl Into<String>,
        eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            eval: Arc::new(eval),
        }
    }

    pub fn constant(kappa: f64) -> Self {
        Self::custom(format!("constant({kappa})"), move |_, _| kappa)
    }

    /// `K(s, t) = s t`.
    pub fn separable() -> Self {
        Self::custom("separable", |s, t| s * t)
    }

    /// `K(s, t) = exp(-(s - t)^2 / sigma^2)`.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Contract(format!(
                "gaussian kernel width must be positive, got {sigma}"
            )));
        }
        let s2 = sigma * sigma;
        Ok(Self::custom(format!("gaussian({sigma})"), move |s, t| {
            (-(s - t) * (s - t) / s2).exp()
        }))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        (self.eval)(s, t)
    }
}

/// Quadrature-weighted collocation matrix on the full grid with `m` nodes:
/// `A[j, i] = w_i K(s_i, t_j)`, so that `(A x)_j` is the trapezoid rule for
/// `int K(s, t_j) x(s) ds`.
pub fn collocation_matrix(kernel: &Kernel, m: usize) -> Result<DMatrix<f64>> {
    let grid = Grid::full(m)?;
    let nodes = grid.nodes();
    let w = grid.weights();
    let a = DMatrix::from_fn(m, m, |j, i| w[i] * kernel.eval(nodes[i], nodes[j]));
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract(format!(
            "kernel {} is not finite on the grid",
            kernel.label()
        )));
    }
    Ok(a)
}

/// Applies the integral operator with `quad_m` trapezoid nodes. The input is
/// first interpolated onto the quadrature grid; the output lives on the same
/// grid.
pub fn integral_apply(kernel: &Kernel, x: &GridFunction, quad_m: usize) -> Result<GridFunction> {
    if quad_m < 2 {
        return Err(Error::InvalidGrid(format!(
            "quadrature needs at least 2 nodes, got {quad_m}"
        )));
    }
    let xq = space::resample(x, quad_m)?;
    let grid = xq.grid();
    let nodes = grid.nodes();
    let w = grid.weights();
    let wx: Vec<f64> = w.iter().zip(xq.values()).map(|(w, v)| w * v).collect();
    let out = nodes
        .iter()
        .map(|&t| {
            nodes
                .iter()
                .zip(&wx)
                .map(|(&s, &v)| kernel.eval(s, t) * v)
                .sum()
        })
        .collect();
    GridFunction::new(grid, out)
}

/// The admissible set `dom(F)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainSpec {
    WholeSpace,
    NormBall { radius: f64, tag: NormTag },
    /// Nonnegative functions inside the ball.
    NormBallNonneg { radius: f64, tag: NormTag },
}

impl DomainSpec {
    pub fn norm_ball(radius: f64, tag: NormTag) -> Result<Self> {
        Self::check_radius(radius)?;
        Ok(Self::NormBall { radius, tag })
    }

    pub fn norm_ball_nonneg(radius: f64, tag: NormTag) -> Result<Self> {
        Self::check_radius(radius)?;
        Ok(Self::NormBallNonneg { radius, tag })
    }

    fn check_radius(radius: f64) -> Result<()> {
        if radius > 0.0 && radius.is_finite() {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "ball radius must be positive, got {radius}"
            )))
        }
    }

    pub fn radius(&self) -> Option<f64> {
        match *self {
            DomainSpec::WholeSpace => None,
            DomainSpec::NormBall { radius, .. } | DomainSpec::NormBallNonneg { radius, .. } => {
                Some(radius)
            }
        }
    }

    /// Same kind of set with the radius replaced.
    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        match *self {
            DomainSpec::WholeSpace => Err(Error::Contract(
                "the whole space has no radius to change".into(),
            )),
            DomainSpec::NormBall { tag, .. } => Self::norm_ball(radius, tag),
            DomainSpec::NormBallNonneg { tag, .. } => Self::norm_ball_nonneg(radius, tag),
        }
    }

    /// Metric projection with respect to the trapezoid inner product of the
    /// function's grid. L2 balls are projected by radial scaling, L-infinity
    /// balls by clipping.
    pub fn project(&self, x: &GridFunction) -> Result<GridFunction> {
        let (radius, tag, nonneg) = match *self {
            DomainSpec::WholeSpace => return Ok(x.clone()),
            DomainSpec::NormBall { radius, tag } => (radius, tag, false),
            DomainSpec::NormBallNonneg { radius, tag } => (radius, tag, true),
        };
        let x = if nonneg { x.map(|v| v.max(0.0))? } else { x.clone() };
        match tag {
            NormTag::L2 => {
                let nrm = space::norm(&x, NormTag::L2)?;
                if nrm <= radius {
                    return Ok(x);
                }
                let mut scale = radius / nrm;
                let mut y = x.scaled(scale)?;
                // Scaling can overshoot the radius by an ulp.
                while space::norm(&y, NormTag::L2)? > radius {
                    scale *= 1.0 - f64::EPSILON;
                    y = x.scaled(scale)?;
                }
                Ok(y)
            }
            NormTag::Linf => x.map(|v| v.clamp(-radius, radius)),
            NormTag::H10 => Err(Error::Unsupported(
                "projection onto H1_0 balls".into(),
            )),
        }
    }
}

/// Exact membership test for `dom(F)`. Norms that are undefined on the
/// function's grid make it a non-member.
pub fn membership(domain: &DomainSpec, x: &GridFunction) -> bool {
    let (radius, tag, nonneg) = match *domain {
        DomainSpec::WholeSpace => return true,
        DomainSpec::NormBall { radius, tag } => (radius, tag, false),
        DomainSpec::NormBallNonneg { radius, tag } => (radius, tag, true),
    };
    if nonneg && x.values().iter().any(|&v| v < 0.0) {
        return false;
    }
    matches!(space::norm(x, tag), Ok(n) if n <= radius)
}

/// A forward map between grid function spaces.
pub trait Operator: Send + Sync {
    fn label(&self) -> String;

    fn input_grid(&self) -> Grid;

    fn output_grid(&self) -> Grid;

    fn apply(&self, x: &GridFunction) -> Result<GridFunction>;

    /// `J(x)^T r` in Euclidean coordinates, with `x` on the input grid.
    fn jacobian_transpose(&self, x: &GridFunction, r: &[f64]) -> Result<Vec<f64>>;

    /// Dense realization `F(x) = M x` for linear operators.
    fn matrix(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

fn require_grid(x: &GridFunction, grid: Grid, what: &str) -> Result<()> {
    if x.grid() == grid {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "{what}: expected {grid:?}, got {:?}",
            x.grid()
        )))
    }
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).as_slice().to_vec()
}

fn mat_tr_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    m.tr_mul(&DVector::from_column_slice(v)).as_slice().to_vec()
}

/// A linear operator given by its matrix. Inputs must sit on the input grid.
#[derive(Debug, Clone)]
pub struct MatrixOperator {
    label: String,
    input: Grid,
    output: Grid,
    matrix: DMatrix<f64>,
}

impl MatrixOperator {
    pub fn new(label: impl Into<String>, input: Grid, output: Grid, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != output.len() || matrix.ncols() != input.len() {
            return Err(Error::GridMismatch(format!(
                "matrix is {}x{}, grids need {}x{}",
                matrix.nrows(),
                matrix.ncols(),
                output.len(),
                input.len()
            )));
        }
        Ok(Self {
            label: label.into(),
            input,
            output,
            matrix,
        })
    }

    pub fn identity(grid: Grid) -> Self {
        Self {
            label: "identity".into(),
            input: grid,
            output: grid,
            matrix: DMatrix::identity(grid.len(), grid.len()),
        }
    }

    /// `x -> c x` on one grid.
    pub fn scalar(grid: Grid, c: f64) -> Self {
        Self {
            label: format!("scalar({c})"),
            input: grid,
            output: grid,
            matrix: DMatrix::identity(grid.len(), grid.len()) * c,
        }
    }
}

impl Operator for MatrixOperator {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn input_grid(&self) -> Grid {
        self.input
    }

    fn output_grid(&self) -> Grid {
        self.output
    }

    fn apply(&self, x: &GridFunction) -> Result<GridFunction> {
        require_grid(x, self.input, "operator input")?;
        GridFunction::new(self.output, mat_vec(&self.matrix, x.values()))
    }

    fn jacobian_transpose(&self, x: &GridFunction, r: &[f64]) -> Result<Vec<f64>> {
        require_grid(x, self.input, "operator input")?;
        Ok(mat_tr_vec(&self.matrix, r))
    }

    fn matrix(&self) -> Option<&DMatrix<f64>> {
        Some(&self.matrix)
    }
}

/// The trapezoid integral operator on the full grid with `m` nodes. Inputs on
/// other grids are interpolated onto the quadrature grid first.
#[derive(Debug, Clone)]
pub struct IntegralOperator {
    kernel: Kernel,
    grid: Grid,
    matrix: DMatrix<f64>,
}

impl IntegralOperator {
    pub fn new(kernel: Kernel, m: usize) -> Result<Self> {
        let matrix = collocation_matrix(&kernel, m)?;
        Ok(Self {
            kernel,
            grid: Grid::full(m)?,
            matrix,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }
}

impl Operator for IntegralOperator {
    fn label(&self) -> String {
        format!("integral[{}; m={}]", self.kernel.label(), self.grid.len())
    }

    fn input_grid(&self) -> Grid {
        self.grid
    }

    fn output_grid(&self) -> Grid {
        self.grid
    }

    fn apply(&self, x: &GridFunction) -> Result<GridFunction> {
        let xq = space::resample(x, self.grid.len())?;
        GridFunction::new(self.grid, mat_vec(&self.matrix, xq.values()))
    }

    fn jacobian_transpose(&self, x: &GridFunction, r: &[f64]) -> Result<Vec<f64>> {
        require_grid(x, self.grid, "operator input")?;
        Ok(mat_tr_vec(&self.matrix, r))
    }

    fn matrix(&self) -> Option<&DMatrix<f64>> {
        Some(&self.matrix)
    }
}

type Pointwise = dyn Fn(f64) -> f64 + Send + Sync;

/// `F(x) = phi(G(x))` for a linear inner operator `G` and a smooth scalar
/// function `phi` applied node by node.
#[derive(Clone)]
pub struct PointwiseComposition {
    label: String,
    inner: Arc<dyn Operator>,
    phi: Arc<Pointwise>,
    dphi: Arc<Pointwise>,
}

impl PointwiseComposition {
    pub fn new(
        label: impl Into<String>,
        inner: Arc<dyn Operator>,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dphi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            inner,
            phi: Arc::new(phi),
            dphi: Arc::new(dphi),
        }
    }
}

impl Operator for PointwiseComposition {
    fn label(&self) -> String {
        format!("{}({})", self.label, self.inner.label())
    }

    fn input_grid(&self) -> Grid {
        self.inner.input_grid()
    }

    fn output_grid(&self) -> Grid {
        self.inner.output_grid()
    }

    fn apply(&self, x: &GridFunction) -> Result<GridFunction> {
        self.inner.apply(x)?.map(|v| (self.phi)(v))
    }

    fn jacobian_transpose(&self, x: &GridFunction, r: &[f64]) -> Result<Vec<f64>> {
        let g = self.inner.apply(x)?;
        let scaled: Vec<f64> = g
            .values()
            .iter()
            .zip(r)
            .map(|(&v, &ri)| (self.dphi)(v) * ri)
            .collect();
        self.inner.jacobian_transpose(x, &scaled)
    }
}

/// An operator together with its domain.
#[derive(Clone)]
pub struct OperatorHandle {
    operator: Arc<dyn Operator>,
    domain: DomainSpec,
}

impl fmt::Debug for OperatorHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorHandle")
            .field("operator", &self.operator.label())
            .field("domain", &self.domain)
            .finish()
    }
}

impl OperatorHandle {
    pub fn new(operator: Arc<dyn Operator>, domain: DomainSpec) -> Self {
        Self { operator, domain }
    }

    pub fn whole_space(operator: impl Operator + 'static) -> Self {
        Self::new(Arc::new(operator), DomainSpec::WholeSpace)
    }

    pub fn operator(&self) -> &Arc<dyn Operator> {
        &self.operator
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn with_domain(&self, domain: DomainSpec) -> Self {
        Self {
            operator: Arc::clone(&self.operator),
            domain,
        }
    }

    pub fn input_grid(&self) -> Grid {
        self.operator.input_grid()
    }

    pub fn output_grid(&self) -> Grid {
        self.operator.output_grid()
    }

    pub fn matrix(&self) -> Option<&DMatrix<f64>> {
        self.operator.matrix()
    }

    pub fn label(&self) -> String {
        self.operator.label()
    }

    /// Evaluates `F(x)`; `x` must belong to the domain.
    pub fn apply(&self, x: &GridFunction) -> Result<GridFunction> {
        if !membership(&self.domain, x) {
            return Err(Error::Contract(format!(
                "argument outside dom({}) = {:?}",
                self.operator.label(),
                self.domain
            )));
        }
        self.operator.apply(x)
    }
}

/// One member `F_n` of an approximating family.
#[derive(Debug, Clone)]
pub struct FamilyLevel {
    pub n: usize,
    pub operator: OperatorHandle,
}

/// A sequence `(F_n)` with increasing domains approximating a reference `F`.
#[derive(Debug, Clone)]
pub struct OperatorFamily {
    label: String,
    levels: Vec<FamilyLevel>,
    reference: OperatorHandle,
}

fn check_levels(levels: &[usize]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Contract("level list is empty".into()));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Contract("levels must be strictly increasing".into()));
    }
    Ok(())
}

impl OperatorFamily {
    /// Assembles a family from explicit levels. Level outputs must live on
    /// full grids so they can be compared with the reference.
    pub fn new(label: impl Into<String>, levels: Vec<FamilyLevel>, reference: OperatorHandle) -> Result<Self> {
        let ns: Vec<usize> = levels.iter().map(|l| l.n).collect();
        check_levels(&ns)?;
        for l in levels.iter().map(|l| &l.operator).chain(Some(&reference)) {
            if l.output_grid().layout() != GridLayout::Full {
                return Err(Error::InvalidGrid(format!(
                    "{} must map into a full grid",
                    l.label()
                )));
            }
        }
        if reference.input_grid().layout() != GridLayout::Full {
            return Err(Error::InvalidGrid(
                "the reference operator must act on a full grid".into(),
            ));
        }
        Ok(Self {
            label: label.into(),
            levels,
            reference,
        })
    }

    /// `F_n = F` for every level.
    pub fn exact(reference: OperatorHandle, levels: &[usize]) -> Result<Self> {
        let lv = levels
            .iter()
            .map(|&n| FamilyLevel {
                n,
                operator: reference.clone(),
            })
            .collect();
        Self::new(format!("exact[{}]", reference.label()), lv, reference)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn levels(&self) -> &[FamilyLevel] {
        &self.levels
    }

    pub fn level_indices(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.n).collect()
    }

    pub fn reference(&self) -> &OperatorHandle {
        &self.reference
    }

    pub fn level(&self, n: usize) -> Result<&FamilyLevel> {
        self.levels
            .iter()
            .find(|l| l.n == n)
            .ok_or_else(|| Error::Contract(format!("level {n} is not part of {}", self.label)))
    }

    /// Puts the reference and every level on the same domain.
    pub fn with_domain(mut self, domain: DomainSpec) -> Self {
        self.reference = self.reference.with_domain(domain);
        for l in &mut self.levels {
            l.operator = l.operator.with_domain(domain);
        }
        self
    }

    /// Strict-subdomain mode: level `n` gets the reference ball shrunk to
    /// radius `rho (1 - 1/n)`.
    pub fn with_strict_subdomains(mut self) -> Result<Self> {
        let domain = *self.reference.domain();
        let rho = domain.radius().ok_or_else(|| {
            Error::Contract("strict subdomains need a ball-shaped reference domain".into())
        })?;
        for l in &mut self.levels {
            if l.n < 2 {
                return Err(Error::Contract(format!(
                    "strict subdomains need levels >= 2, got {}",
                    l.n
                )));
            }
            let r = rho * (1.0 - 1.0 / l.n as f64);
            l.operator = l.operator.with_domain(domain.with_radius(r)?);
        }
        Ok(self)
    }
}

/// Quadrature family: `F_n` is the trapezoid integral operator with `n`
/// nodes and `F` the one with `m_ref` nodes.
pub fn make_quadrature_family(kernel: &Kernel, levels: &[usize], m_ref: usize) -> Result<OperatorFamily> {
    check_levels(levels)?;
    if levels[levels.len() - 1] > m_ref {
        return Err(Error::Contract(format!(
            "finest level {} exceeds the reference resolution {m_ref}",
            levels[levels.len() - 1]
        )));
    }
    let lv = levels
        .iter()
        .map(|&n| {
            Ok(FamilyLevel {
                n,
                operator: OperatorHandle::whole_space(IntegralOperator::new(kernel.clone(), n)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = OperatorHandle::whole_space(IntegralOperator::new(kernel.clone(), m_ref)?);
    OperatorFamily::new(format!("quadrature[{}]", kernel.label()), lv, reference)
}

/// Sampled estimate of `sup ||F_n(x) - F(x)||` over a set of inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapEstimate {
    /// Largest observed gap, a lower bound for the true supremum.
    pub value: f64,
    pub sample_count: usize,
}

/// Largest L2 distance between `F_n(x)` and `F(x)` over the samples, measured
/// on the reference output grid.
pub fn uniform_gap(family: &OperatorFamily, n: usize, samples: &[GridFunction]) -> Result<GapEstimate> {
    let level = family.level(n)?;
    let m_out = family.reference().output_grid().len();
    let mut value = 0.0_f64;
    for (i, x) in samples.iter().enumerate() {
        if !membership(level.operator.domain(), x) {
            return Err(Error::Contract(format!(
                "sample {i} lies outside dom(F_{n})"
            )));
        }
        let fine = family.reference().apply(x)?;
        let coarse = space::resample(&level.operator.apply(x)?, m_out)?;
        value = value.max(space::l2_distance(&coarse, &fine)?);
    }
    Ok(GapEstimate {
        value,
        sample_count: samples.len(),
    })
}
