//! The one-sided Fredholm representation and its discretized objective.
//!
//! For `c > √(2r)` and `k = c²/2 - r`, the continuation set
//! `{(s, y) : s < d(y)}` over `[0, b_inf]` satisfies
//!
//! ```text
//! R(c; d) = ∫_{-∞}^0 e^{cy} h̃(y) dy + ∫_0^{b_inf} e^{cy + k·d(y)} h̃(y) dy = 0
//! ```
//!
//! which is `k` times the space-time integral of `e^{cy + ks} h̃(y)` over the
//! continuation set. Since `h̃ ≥ 0` on `[0, b_inf]`, `R` is non-decreasing in
//! `d` pointwise.
//!
//! On a grid, `d` is piecewise constant with the left-node value on each
//! segment, so `R(c; d) = L(c) + Σ_{n<N} e^{k d_n} w_n(c)` with
//! `w_n(c) = ∫_{y_n}^{y_{n+1}} e^{cy} h̃(y) dy`.

use rayon::prelude::*;
use thiserror::Error;

use crate::numerics::{self, Direction, NumericsError, QuadratureSpec};
use crate::problem::{Problem, ProblemError};

#[derive(Debug, Error)]
pub enum FredholmError {
    #[error("grid nodes must be finite, strictly increasing and start at 0 (node {index} = {value})")]
    BadNodes { index: usize, value: f64 },
    #[error("grid needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("{nodes} nodes but {values} values")]
    LengthMismatch { nodes: usize, values: usize },
    #[error("boundary values must be finite, non-positive and non-increasing (node {index} = {value})")]
    BadValues { index: usize, value: f64 },
    #[error("c-grid must be non-empty, strictly increasing and above √(2r) = {c_min} (c = {value})")]
    BadCGrid { value: f64, c_min: f64 },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, FredholmError>;

/// Spatial nodes `0 = y₁ < … < y_N` with boundary values `d₁ ≥ … ≥ d_N`, all `≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGrid {
    nodes: Vec<f64>,
    values: Vec<f64>,
}

pub fn check_nodes(nodes: &[f64]) -> Result<()> {
    if nodes.len() < 2 {
        return Err(FredholmError::TooFewNodes(nodes.len()));
    }
    if nodes[0] != 0.0 {
        return Err(FredholmError::BadNodes {
            index: 0,
            value: nodes[0],
        });
    }
    for (i, w) in nodes.windows(2).enumerate() {
        if !(w[1] > w[0]) || !w[1].is_finite() {
            return Err(FredholmError::BadNodes {
                index: i + 1,
                value: w[1],
            });
        }
    }
    Ok(())
}

impl BoundaryGrid {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_nodes(&nodes)?;
        if nodes.len() != values.len() {
            return Err(FredholmError::LengthMismatch {
                nodes: nodes.len(),
                values: values.len(),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v <= 0.0) || !v.is_finite() || (i > 0 && v > values[i - 1]) {
                return Err(FredholmError::BadValues { index: i, value: v });
            }
        }
        Ok(Self { nodes, values })
    }

    /// All values zero.
    pub fn zeros(nodes: Vec<f64>) -> Result<Self> {
        let n = nodes.len();
        Self::new(nodes, vec![0.0; n])
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Piecewise-constant evaluation with the left-node convention; `y` beyond
    /// the last node takes the last value.
    pub fn value_at(&self, y: f64) -> f64 {
        let i = self.nodes.partition_point(|&n| n <= y);
        self.values[i.saturating_sub(1)]
    }
}

/// `y_k = b·(k-1)/(n-1)`, `k = 1..n`.
pub fn uniform_nodes(b: f64, n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n)
        .map(|k| if k + 1 == n { b } else { b * k as f64 / last })
        .collect()
}

/// Strictly increasing transform parameters above `√(2r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CGrid {
    values: Vec<f64>,
}

impl CGrid {
    pub fn new(values: Vec<f64>, r: f64) -> Result<Self> {
        let c_min = (2.0 * r).sqrt();
        if values.is_empty() {
            return Err(FredholmError::BadCGrid { value: f64::NAN, c_min });
        }
        for (i, &c) in values.iter().enumerate() {
            if !(c > c_min) || !c.is_finite() || (i > 0 && c <= values[i - 1]) {
                return Err(FredholmError::BadCGrid { value: c, c_min });
            }
        }
        Ok(Self { values })
    }

    /// `c_l = √(2r) + l·step`, `l = 1..m`.
    pub fn arithmetic(r: f64, m: usize, step: f64) -> Result<Self> {
        let c_min = (2.0 * r).sqrt();
        Self::new((1..=m).map(|l| c_min + l as f64 * step).collect(), r)
    }

    /// This grid followed by `count` geometrically spaced values up to
    /// `factor·c_M`.
    pub fn extended(&self, factor: f64, count: usize, r: f64) -> Result<Self> {
        let last = *self.values.last().expect("non-empty");
        let ratio = factor.powf(1.0 / count as f64);
        let mut values = self.values.clone();
        values.extend((1..=count).map(|j| last * ratio.powi(j as i32)));
        Self::new(values, r)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn kernel_spec() -> QuadratureSpec {
    QuadratureSpec::with_tolerances(1e-12, 1e-15)
}

/// `w_n = ∫_{y_n}^{y_{n+1}} e^{cy} h̃(y) dy` plus `e^{ca}·weight` for atoms
/// `a ∈ [y_n, y_{n+1})`, for `n = 1..N-1`.
pub fn segment_weights(p: &Problem, nodes: &[f64], c: f64) -> Result<Vec<f64>> {
    check_nodes(nodes)?;
    let spec = kernel_spec();
    let f = |y: f64| (c * y).exp() * p.h_tilde(y);
    nodes
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let mut cuts = vec![a];
            cuts.extend(p.breakpoints.iter().copied().filter(|&x| x > a && x < b));
            cuts.push(b);
            let mut total = 0.0;
            for piece in cuts.windows(2) {
                total += numerics::integrate_finite(f, piece[0], piece[1], &spec)?.value;
            }
            total += p
                .atoms
                .iter()
                .filter(|atom| atom.location >= a && atom.location < b)
                .map(|atom| (c * atom.location).exp() * atom.weight)
                .sum::<f64>();
            Ok(total)
        })
        .collect()
}

/// Precomputed `L(c_l)`, `k_l` and `w_{l,n}` for fixed nodes and c-grid.
/// Immutable once built, so concurrent objective evaluations share it freely.
#[derive(Debug, Clone)]
pub struct KernelTable {
    pub nodes: Vec<f64>,
    pub cvalues: Vec<f64>,
    pub exponents: Vec<f64>,
    pub laplace: Vec<f64>,
    /// `weights[l][n]`, `n < N-1`.
    pub weights: Vec<Vec<f64>>,
}

impl KernelTable {
    pub fn build(p: &Problem, nodes: &[f64], cgrid: &CGrid) -> Result<Self> {
        check_nodes(nodes)?;
        // Re-validate against this problem's discount.
        CGrid::new(cgrid.values().to_vec(), p.r)?;
        let rows: Vec<(f64, Vec<f64>)> = cgrid
            .values()
            .par_iter()
            .map(|&c| -> Result<(f64, Vec<f64>)> { Ok((p.laplace_h_tilde(c)?, segment_weights(p, nodes, c)?)) })
            .collect::<Result<_>>()?;
        let (laplace, weights) = rows.into_iter().unzip();
        Ok(Self {
            nodes: nodes.to_vec(),
            cvalues: cgrid.values().to_vec(),
            exponents: cgrid.values().iter().map(|c| 0.5 * c * c - p.r).collect(),
            laplace,
            weights,
        })
    }

    pub fn m(&self) -> usize {
        self.cvalues.len()
    }

    /// `R(c_l; d)` for any value vector of node length (need not be monotone).
    pub fn residual(&self, l: usize, values: &[f64]) -> f64 {
        let k = self.exponents[l];
        self.laplace[l]
            + self.weights[l]
                .iter()
                .zip(values)
                .map(|(w, d)| (k * d).exp() * w)
                .sum::<f64>()
    }

    pub fn residuals(&self, values: &[f64]) -> Vec<f64> {
        (0..self.m()).map(|l| self.residual(l, values)).collect()
    }

    pub fn objective(&self, values: &[f64]) -> ResidualVector {
        let residuals = self.residuals(values);
        ResidualVector::from_residuals(self.cvalues.clone(), residuals)
    }
}

/// `F_c(x) = (c²x + 1/(1+c²x))²`, `+∞` where `1 + c²x ≤ 0`.
pub fn penalty(c: f64, x: f64) -> f64 {
    let u = c * c * x;
    if !(1.0 + u > 0.0) {
        return f64::INFINITY;
    }
    let v = u + 1.0 / (1.0 + u);
    v * v
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub cvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub penalties: Vec<f64>,
    pub objective: f64,
}

impl ResidualVector {
    pub fn from_residuals(cvalues: Vec<f64>, residuals: Vec<f64>) -> Self {
        let penalties: Vec<f64> = cvalues.iter().zip(&residuals).map(|(&c, &x)| penalty(c, x)).collect();
        let objective = penalties.iter().sum();
        Self {
            cvalues,
            residuals,
            penalties,
            objective,
        }
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

pub fn residual(p: &Problem, grid: &BoundaryGrid, c: f64) -> Result<f64> {
    let cg = CGrid::new(vec![c], p.r)?;
    let table = KernelTable::build(p, grid.nodes(), &cg)?;
    Ok(table.residual(0, grid.values()))
}

pub fn objective(p: &Problem, grid: &BoundaryGrid, cgrid: &CGrid) -> Result<ResidualVector> {
    let table = KernelTable::build(p, grid.nodes(), cgrid)?;
    Ok(table.objective(grid.values()))
}

/// `R(c; d)` for a continuous boundary `d` on `[0, upper)`, by quadrature.
/// `upper` may be infinite when `d` decays fast enough for the integrand to
/// fall below `e^{-50}` within a finite range.
pub fn continuous_residual(p: &Problem, d: &dyn Fn(f64) -> f64, c: f64, upper: f64) -> Result<f64> {
    CGrid::new(vec![c], p.r)?;
    let k = 0.5 * c * c - p.r;
    let f = |y: f64| (c * y + k * d(y)).exp() * p.h_tilde(y);
    let spec = QuadratureSpec {
        max_subdivisions: 2000,
        ..QuadratureSpec::with_tolerances(1e-12, 1e-14)
    };
    let top = if upper.is_finite() {
        upper
    } else {
        // First y beyond the integrand's peak where its exponent is below -50.
        let mut y = 1.0 / c;
        while c * y + k * d(y) > -50.0 {
            y *= 1.5;
            if y > 1e8 {
                return Err(NumericsError::NonFinite(y).into());
            }
        }
        y
    };
    let mut cuts = vec![0.0];
    cuts.extend(p.breakpoints.iter().copied().filter(|&x| x > 0.0 && x < top));
    cuts.push(top);
    let mut total = p.laplace_h_tilde(c)?;
    for w in cuts.windows(2) {
        total += numerics::integrate_finite(f, w[0], w[1], &spec)?.value;
    }
    total += p
        .atoms
        .iter()
        .filter(|a| a.location >= 0.0 && a.location < top)
        .map(|a| (c * a.location + k * d(a.location)).exp() * a.weight)
        .sum::<f64>();
    Ok(total)
}

/// The space-time integral `∫_{-∞}^0 ∫_{-∞}^{α√(-s)} y·e^{cy + c²s/2} dy ds`
/// for the `x³/3` problem in normalized coordinates, by iterated quadrature.
pub fn stadje_double_integral(alpha: f64, c: f64) -> Result<f64> {
    let spec = QuadratureSpec {
        max_subdivisions: 2000,
        ..QuadratureSpec::with_tolerances(1e-10, 1e-12)
    };
    // The inner integral crosses zero at α√(-s) = 1/c, so it needs an
    // absolute floor well above rounding of its O(e^{cα√(-s)}) terms.
    let inner_spec = QuadratureSpec {
        max_subdivisions: 2000,
        ..QuadratureSpec::with_tolerances(1e-12, 1e-13)
    };
    let inner = |s: f64| -> f64 {
        let top = alpha * (-s).sqrt();
        numerics::integrate_semi_infinite(
            |y: f64| y * (c * y).exp(),
            top,
            Direction::NegInfinity,
            0.5 * c,
            &inner_spec,
        )
        .map(|e| e.value)
        .unwrap_or(f64::NAN)
    };
    let outer = |s: f64| (0.5 * c * c * s).exp() * inner(s);
    let est = numerics::integrate_semi_infinite(outer, 0.0, Direction::NegInfinity, 0.25 * c * c, &spec)?;
    if !est.value.is_finite() {
        return Err(NumericsError::NonFinite(est.value).into());
    }
    Ok(est.value)
}

/// Closed form of [`stadje_double_integral`]:
/// `(2/c⁴)·(α³Φ(α)/φ(α) - (1 - α²))`.
pub fn stadje_closed_form(alpha: f64, c: f64) -> f64 {
    let ratio = numerics::norm_cdf(alpha) / numerics::norm_pdf(alpha);
    2.0 / c.powi(4) * (alpha.powi(3) * ratio - (1.0 - alpha * alpha))
}

/// Max `|double integral|` over `cvalues` at boundary coefficient `alpha`.
pub fn verify_closed_form(alpha: f64, cvalues: &[f64]) -> Result<f64> {
    cvalues
        .iter()
        .map(|&c| stadje_double_integral(alpha, c).map(f64::abs))
        .try_fold(0.0_f64, |m, v| Ok(m.max(v?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::stadje_alpha;
    use crate::problem::{builtin, stadje, Builtin};
    use approx::assert_abs_diff_eq;

    fn linear() -> Problem {
        builtin(Builtin::Linear).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(BoundaryGrid::new(vec![0.0, 0.5, 1.0], vec![0.0, -0.1, -0.1]).is_ok());
        assert!(matches!(
            BoundaryGrid::new(vec![0.0, 0.5, 0.5], vec![0.0; 3]),
            Err(FredholmError::BadNodes { index: 2, .. })
        ));
        assert!(matches!(
            BoundaryGrid::new(vec![0.1, 0.5], vec![0.0; 2]),
            Err(FredholmError::BadNodes { index: 0, .. })
        ));
        assert!(matches!(
            BoundaryGrid::new(vec![0.0, 1.0], vec![-0.1, 0.0]),
            Err(FredholmError::BadValues { index: 1, .. })
        ));
        assert!(matches!(
            BoundaryGrid::new(vec![0.0, 1.0], vec![0.1, 0.0]),
            Err(FredholmError::BadValues { index: 0, .. })
        ));
        assert!(matches!(
            BoundaryGrid::new(vec![0.0], vec![0.0]),
            Err(FredholmError::TooFewNodes(1))
        ));
        assert!(CGrid::new(vec![1.0, 2.0], 1.0).is_err());
        assert!(CGrid::new(vec![2.0, 1.5], 1.0).is_err());
        let g = CGrid::arithmetic(1.0, 40, 0.1).unwrap();
        assert_eq!(g.len(), 40);
        assert_abs_diff_eq!(g.values()[0], 2f64.sqrt() + 0.1, epsilon = 1e-15);
        let e = g.extended(4.0, 8, 1.0).unwrap();
        assert_abs_diff_eq!(*e.values().last().unwrap(), 4.0 * g.values()[39], epsilon = 1e-12);
        let nodes = uniform_nodes(0.5_f64.sqrt(), 60);
        assert_eq!(nodes[59], 0.5_f64.sqrt());
        assert_abs_diff_eq!(nodes[1], 0.5_f64.sqrt() / 59.0, epsilon = 1e-16);
    }

    #[test]
    fn weights_examples() {
        let p = linear();
        let w = segment_weights(&p, &[0.0, 1.0], 1.0).unwrap();
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-12);
        // Antiderivative (y/2 - 1/4)e^{2y} on [0, √½].
        let b = 0.5_f64.sqrt();
        let expect = (b / 2.0 - 0.25) * (2.0 * b).exp() + 0.25;
        let w = segment_weights(&p, &[0.0, b], 2.0).unwrap();
        assert_abs_diff_eq!(w[0], expect, epsilon = 1e-12);
        let zero = Problem::new("zero", 1.0, |_| 0.0, 1.0);
        assert_eq!(segment_weights(&zero, &[0.0, 0.3, 1.0], 2.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn residual_limits() {
        let p = linear();
        let nodes = uniform_nodes(p.b_inf, 20);
        let deep = BoundaryGrid::new(nodes.clone(), vec![-1e6; 20]).unwrap();
        let c = 3.0;
        assert_abs_diff_eq!(residual(&p, &deep, c).unwrap(), -1.0 / 9.0, epsilon = 1e-14);
        // A vanishing interval leaves only the transform.
        let tiny = BoundaryGrid::zeros(vec![0.0, 1e-300]).unwrap();
        assert_abs_diff_eq!(
            residual(&p, &tiny, c).unwrap(),
            p.laplace_h_tilde(c).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn penalty_values() {
        assert_eq!(penalty(2.0, 0.0), 1.0);
        assert_abs_diff_eq!(penalty(2.0, 0.25), 2.25, epsilon = 1e-15);
        assert_eq!(penalty(2.0, -0.25), f64::INFINITY);
        assert_eq!(penalty(2.0, -0.3), f64::INFINITY);
        let rv = ResidualVector::from_residuals(vec![1.0, 2.0, 3.0], vec![0.0; 3]);
        assert_eq!(rv.objective, 3.0);
    }

    #[test]
    fn linear_laplace_limit() {
        let p = linear();
        let c: f64 = 1e3;
        let v = c * c * p.laplace_numeric(c).unwrap();
        // m = -1 in the left coefficient sense: L h̃(c) = -1/c².
        assert!((v + 1.0).abs() <= 0.01);
    }

    #[test]
    fn stadje_continuous_residual() {
        let p = stadje();
        let alpha = stadje_alpha();
        let d = move |y: f64| -y * y / (alpha * alpha);
        for c in [1.0, 2.0, 4.0] {
            let r = continuous_residual(&p, &d, c, f64::INFINITY).unwrap();
            assert!(r.abs() <= 1e-6, "c = {c}: {r}");
        }
        let wrong = |y: f64| -y * y / 0.81;
        assert!(continuous_residual(&p, &wrong, 1.0, f64::INFINITY).unwrap().abs() > 1e-2);
    }

    #[test]
    fn stadje_double_integral_matches_closed_form() {
        for alpha in [0.4, stadje_alpha(), 0.9] {
            for c in [1.0, 2.0] {
                let q = stadje_double_integral(alpha, c).unwrap();
                let f = stadje_closed_form(alpha, c);
                assert!((q - f).abs() <= 1e-8 * f.abs().max(1.0), "α={alpha} c={c}: {q} vs {f}");
            }
        }
        assert!(verify_closed_form(stadje_alpha(), &[1.0, 2.0, 4.0]).unwrap() <= 1e-8);
        // Continuous residual = (c²/2)·double integral for r = 0.
        let p = stadje();
        let d = |y: f64| -y * y / 0.81;
        let r = continuous_residual(&p, &d, 2.0, f64::INFINITY).unwrap();
        assert_abs_diff_eq!(r, 2.0 * stadje_double_integral(0.9, 2.0).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn table_matches_direct_residual() {
        let p = linear();
        let nodes = uniform_nodes(p.b_inf, 12);
        let values: Vec<f64> = nodes.iter().map(|y| -2.45 * y * y).collect();
        let grid = BoundaryGrid::new(nodes.clone(), values.clone()).unwrap();
        let cg = CGrid::arithmetic(1.0, 5, 0.5).unwrap();
        let rv = objective(&p, &grid, &cg).unwrap();
        for (l, &c) in cg.values().iter().enumerate() {
            assert_eq!(rv.residuals[l], residual(&p, &grid, c).unwrap());
        }
    }
}
