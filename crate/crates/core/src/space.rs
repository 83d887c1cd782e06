//! Grid functions on `[0, 1]`: the finite-dimensional stand-ins for the
//! parameter space `X` and the data space `Y`.
//!
//! Two layouts are supported. A *full* grid with `m >= 2` nodes includes both
//! endpoints (`h = 1/(m-1)`); an *interior* grid with `n >= 1` nodes carries
//! only the interior nodes of a Dirichlet problem (`h = 1/(n+1)`), and the
//! boundary values are implicitly zero.
//!
//! All integrals use the composite trapezoid rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GridLayout {
    /// Nodes `i/(m-1)`, `i = 0..m`.
    Full,
    /// Nodes `(i+1)/(n+1)`, `i = 0..n`, with zero boundary values.
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormTag {
    L2,
    Linf,
    /// `(int |u'|^2)^{1/2}`; defined for interior-node functions only.
    H10,
}

impl NormTag {
    pub fn label(self) -> &'static str {
        match self {
            NormTag::L2 => "L2",
            NormTag::Linf => "Linf",
            NormTag::H10 => "H1_0",
        }
    }
}

/// Shape of a uniform grid on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    nodes: usize,
    layout: GridLayout,
}

impl Grid {
    pub fn full(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidGrid(format!(
                "a full grid needs at least 2 nodes, got {m}"
            )));
        }
        Ok(Self {
            nodes: m,
            layout: GridLayout::Full,
        })
    }

    pub fn interior(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidGrid(
                "an interior grid needs at least 1 node".into(),
            ));
        }
        Ok(Self {
            nodes: n,
            layout: GridLayout::Interior,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.nodes == 0
    }

    pub fn layout(&self) -> GridLayout {
        self.layout
    }

    pub fn includes_endpoints(&self) -> bool {
        self.layout == GridLayout::Full
    }

    pub fn spacing(&self) -> f64 {
        match self.layout {
            GridLayout::Full => 1.0 / (self.nodes - 1) as f64,
            GridLayout::Interior => 1.0 / (self.nodes + 1) as f64,
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        match self.layout {
            GridLayout::Full => i as f64 / (self.nodes - 1) as f64,
            GridLayout::Interior => (i + 1) as f64 / (self.nodes + 1) as f64,
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.nodes).map(|i| self.node(i)).collect()
    }

    /// Trapezoid weights. Interior grids get `h` everywhere because the
    /// omitted boundary nodes carry zero values.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.nodes];
        if self.layout == GridLayout::Full {
            w[0] *= 0.5;
            w[self.nodes - 1] *= 0.5;
        }
        w
    }

    /// Number of intervals between consecutive nodes, boundary included.
    fn intervals(&self) -> usize {
        match self.layout {
            GridLayout::Full => self.nodes - 1,
            GridLayout::Interior => self.nodes + 1,
        }
    }
}

/// Trapezoid weights of the full grid with `m` nodes.
pub fn trapezoid_weights(m: usize) -> Result<Vec<f64>> {
    Ok(Grid::full(m)?.weights())
}

/// A real function sampled on a uniform grid over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "value {} at node {i} is not finite",
                values[i]
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn full(values: Vec<f64>) -> Result<Self> {
        Self::new(Grid::full(values.len())?, values)
    }

    pub fn interior(values: Vec<f64>) -> Result<Self> {
        Self::new(Grid::interior(values.len())?, values)
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().into_iter().map(f).collect();
        Self::new(grid, values)
    }

    pub fn full_from_fn(m: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_fn(Grid::full(m)?, f)
    }

    pub fn interior_from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_fn(Grid::interior(n)?, f)
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Result<Self> {
        Self::new(grid, vec![c; grid.len()])
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn includes_endpoints(&self) -> bool {
        self.grid.includes_endpoints()
    }

    pub fn spacing(&self) -> f64 {
        self.grid.spacing()
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        self.grid == other.grid
    }

    fn require_same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )))
        }
    }

    /// Replaces the values, keeping the grid.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.grid, values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        self.map(|v| s * v)
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &GridFunction, b: f64) -> Result<Self> {
        self.require_same_grid(other)?;
        self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }

    pub fn add(&self, other: &GridFunction) -> Result<Self> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        self.lin_comb(1.0, other, -1.0)
    }

    /// Values with the implicit zero boundary entries made explicit.
    fn padded(&self) -> Vec<f64> {
        match self.grid.layout {
            GridLayout::Full => self.values.clone(),
            GridLayout::Interior => {
                let mut p = Vec::with_capacity(self.values.len() + 2);
                p.push(0.0);
                p.extend_from_slice(&self.values);
                p.push(0.0);
                p
            }
        }
    }

    /// Piecewise-linear interpolant evaluated at `t in [0, 1]`.
    pub fn eval_at(&self, t: f64) -> f64 {
        let p = self.padded();
        let intervals = self.grid.intervals();
        let u = (t.clamp(0.0, 1.0) * intervals as f64).min(intervals as f64);
        let i = (u.floor() as usize).min(intervals - 1);
        let frac = u - i as f64;
        (1.0 - frac) * p[i] + frac * p[i + 1]
    }
}

pub fn norm(g: &GridFunction, tag: NormTag) -> Result<f64> {
    match tag {
        NormTag::L2 => Ok(weighted_sq(g).sqrt()),
        NormTag::Linf => Ok(g.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))),
        NormTag::H10 => {
            if g.grid.layout != GridLayout::Interior {
                return Err(Error::IncompatibleNorm {
                    tag,
                    layout: g.grid.layout,
                });
            }
            let h = g.spacing();
            let p = g.padded();
            let s: f64 = p.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
            Ok((s / h).sqrt())
        }
    }
}

fn weighted_sq(g: &GridFunction) -> f64 {
    g.grid
        .weights()
        .iter()
        .zip(&g.values)
        .map(|(w, v)| w * v * v)
        .sum()
}

/// Trapezoid-weighted inner product.
pub fn inner_l2(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    a.require_same_grid(b)?;
    Ok(a.grid
        .weights()
        .iter()
        .zip(a.values.iter().zip(&b.values))
        .map(|(w, (x, y))| w * x * y)
        .sum())
}

/// L2 distance of two functions on the same grid.
pub fn l2_distance(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    norm(&a.sub(b)?, NormTag::L2)
}

/// Piecewise-linear interpolation onto the full grid with `target_m` nodes.
///
/// Node positions are located with integer arithmetic, so nested grids
/// transfer nodal values bit-exactly.
pub fn resample(g: &GridFunction, target_m: usize) -> Result<GridFunction> {
    let target = Grid::full(target_m)?;
    if g.grid == target {
        return Ok(g.clone());
    }
    let p = g.padded();
    let src = g.grid.intervals() as u128;
    let dst = (target_m - 1) as u128;
    let values = (0..target_m)
        .map(|k| {
            let num = k as u128 * src;
            let i = (num / dst) as usize;
            let rem = num % dst;
            if rem == 0 {
                p[i]
            } else {
                let frac = rem as f64 / dst as f64;
                (1.0 - frac) * p[i] + frac * p[i + 1]
            }
        })
        .collect();
    GridFunction::new(target, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn l2_norm_examples() {
        let zero = GridFunction::zeros(Grid::full(7).unwrap());
        assert_eq!(norm(&zero, NormTag::L2).unwrap(), 0.0);

        let one = GridFunction::constant(Grid::full(101).unwrap(), 1.0).unwrap();
        assert!((norm(&one, NormTag::L2).unwrap() - 1.0).abs() < 1e-14);

        let s = GridFunction::full_from_fn(1001, |x| (PI * x).sin()).unwrap();
        assert!((norm(&s, NormTag::L2).unwrap() - 0.5f64.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn inner_product_examples() {
        let a = GridFunction::constant(Grid::full(11).unwrap(), 1.0).unwrap();
        assert!((inner_l2(&a, &a).unwrap() - 1.0).abs() < 1e-14);

        let s = GridFunction::full_from_fn(1001, |x| (PI * x).sin()).unwrap();
        let c = GridFunction::full_from_fn(1001, |x| (PI * x).cos()).unwrap();
        assert!(inner_l2(&s, &c).unwrap().abs() < 1e-6);
        assert!((inner_l2(&s, &s).unwrap() - 0.5).abs() < 1e-5);
    }

    #[test]
    fn inner_product_rejects_grid_mismatch() {
        let a = GridFunction::constant(Grid::full(11).unwrap(), 1.0).unwrap();
        let b = GridFunction::constant(Grid::full(12).unwrap(), 1.0).unwrap();
        assert!(matches!(inner_l2(&a, &b), Err(Error::GridMismatch(_))));
        let c = GridFunction::constant(Grid::interior(11).unwrap(), 1.0).unwrap();
        assert!(matches!(inner_l2(&a, &c), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn linf_and_h10() {
        let g = GridFunction::interior(vec![1.0, -3.0, 2.0]).unwrap();
        assert_eq!(norm(&g, NormTag::Linf).unwrap(), 3.0);
        // Padded [0, 1, -3, 2, 0], h = 1/4: sum of squared jumps 1 + 16 + 25 + 4 = 46.
        let expected = (46.0_f64 * 4.0).sqrt();
        assert!((norm(&g, NormTag::H10).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn h10_on_full_grid_is_rejected() {
        let g = GridFunction::constant(Grid::full(5).unwrap(), 1.0).unwrap();
        assert_eq!(
            norm(&g, NormTag::H10),
            Err(Error::IncompatibleNorm {
                tag: NormTag::H10,
                layout: GridLayout::Full
            })
        );
    }

    #[test]
    fn h10_of_sine_approaches_pi_over_sqrt2() {
        let g = GridFunction::interior_from_fn(999, |x| (PI * x).sin()).unwrap();
        let exact = PI / 2f64.sqrt();
        assert!((norm(&g, NormTag::H10).unwrap() - exact).abs() < 1e-5);
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::full(1).is_err());
        assert!(Grid::interior(0).is_err());
        assert!(GridFunction::full(vec![0.0, f64::NAN]).is_err());
        assert!(GridFunction::new(Grid::full(3).unwrap(), vec![0.0; 2]).is_err());
    }

    #[test]
    fn resample_examples() {
        let c = GridFunction::constant(Grid::full(5).unwrap(), 2.5).unwrap();
        let r = resample(&c, 17).unwrap();
        assert!(r.values().iter().all(|&v| v == 2.5));

        let lin = GridFunction::full_from_fn(3, |x| x).unwrap();
        let r = resample(&lin, 9).unwrap();
        for (i, v) in r.values().iter().enumerate() {
            assert!((v - i as f64 / 8.0).abs() < 1e-15);
        }

        let coarse = GridFunction::full_from_fn(33, |x| (PI * x).sin()).unwrap();
        let direct = GridFunction::full_from_fn(65, |x| (PI * x).sin()).unwrap();
        let d = l2_distance(&resample(&coarse, 65).unwrap(), &direct).unwrap();
        // Interpolation error bound h^2 pi^2 / 8 with h = 1/32.
        assert!(d < 2e-3);
        assert!(d <= PI * PI / (8.0 * 32.0 * 32.0));
    }

    #[test]
    fn resample_interior_pads_zero_boundary() {
        let g = GridFunction::interior(vec![1.0]).unwrap();
        let r = resample(&g, 5).unwrap();
        assert_eq!(r.values(), &[0.0, 0.5, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn eval_at_matches_resample() {
        let g = GridFunction::full_from_fn(9, |x| x * x).unwrap();
        let r = resample(&g, 13).unwrap();
        for (t, v) in r.grid().nodes().iter().zip(r.values()) {
            assert!((g.eval_at(*t) - v).abs() < 1e-14);
        }
    }
}
