//! Minimization of the penalized residual objective over monotone grids.
//!
//! Projected cyclic coordinate descent: each node in turn is moved within
//! `[max(lower_n, d_{n+1}), min(upper_n, d_{n-1})]`, so every iterate stays
//! monotone and inside the envelope. The last node does not enter any
//! residual and stays at its lower bound.

use thiserror::Error;

use crate::bounds::BoundaryEnvelope;
use crate::constants::{self, ConstantsError};
use crate::fredholm::{self, penalty, BoundaryGrid, CGrid, FredholmError, KernelTable, ResidualVector};
use crate::problem::Problem;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    BadConfig(&'static str),
    #[error("need at least 3 positive nodes for the asymptotic fit, have {0}")]
    InsufficientData(usize),
    #[error("custom seed has {got} values for {expected} nodes")]
    SeedLength { expected: usize, got: usize },
    #[error(transparent)]
    Fredholm(#[from] FredholmError),
    #[error(transparent)]
    Constants(#[from] ConstantsError),
}

pub type Result<T> = std::result::Result<T, SolverError>;

#[derive(Debug, Clone, PartialEq)]
pub enum SeedMode {
    /// `-B_β·y²` clamped into the envelope.
    Asymptotic,
    EnvelopeMidpoint,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Maximum number of full sweeps.
    pub max_iterations: usize,
    pub value_tolerance: f64,
    pub coordinate_tolerance: f64,
    pub seed_mode: SeedMode,
    /// Interior points of the per-coordinate scan preceding golden section.
    pub scan_points: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            value_tolerance: 1e-10,
            coordinate_tolerance: 1e-7,
            seed_mode: SeedMode::Asymptotic,
            scan_points: 3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(SolverError::BadConfig("max_iterations must be positive"));
        }
        if !(self.value_tolerance > 0.0) || !(self.coordinate_tolerance > 0.0) {
            return Err(SolverError::BadConfig("tolerances must be positive"));
        }
        if self.scan_points == 0 {
            return Err(SolverError::BadConfig("scan_points must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub grid: BoundaryGrid,
    /// Objective at the seed, then after each sweep.
    pub trace: Vec<f64>,
    pub residuals: ResidualVector,
    pub iterations: usize,
    pub converged: bool,
}

fn project_monotone(values: &mut [f64], lower: &[f64], upper: &[f64]) {
    values[0] = 0.0;
    for i in 1..values.len() {
        values[i] = values[i].clamp(lower[i], upper[i]).min(values[i - 1]);
    }
}

/// Starting grid for [`solve`]; the last node sits at its lower bound.
pub fn seed(p: &Problem, envelope: &BoundaryEnvelope, mode: &SeedMode) -> Result<BoundaryGrid> {
    let nodes = envelope.lower.nodes();
    let lower = envelope.lower.values();
    let upper = envelope.upper.values();
    let n = nodes.len();
    let mut values: Vec<f64> = match mode {
        SeedMode::Asymptotic => {
            let b = constants::solve_b(p.beta, p.m_ratio)?.b;
            nodes.iter().map(|y| -b * y * y).collect()
        }
        SeedMode::EnvelopeMidpoint => lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect(),
        SeedMode::Custom(v) => {
            if v.len() != n {
                return Err(SolverError::SeedLength {
                    expected: n,
                    got: v.len(),
                });
            }
            v.clone()
        }
    };
    values[n - 1] = lower[n - 1];
    project_monotone(&mut values, lower, upper);
    Ok(BoundaryGrid::new(nodes.to_vec(), values)?)
}

struct Coordinate<'a> {
    table: &'a KernelTable,
    residuals: &'a [f64],
    n: usize,
    current: f64,
    /// `e^{k_l·current}`
    base: &'a [f64],
}

impl Coordinate<'_> {
    fn value(&self, t: f64) -> f64 {
        let tb = self.table;
        (0..tb.m())
            .map(|l| {
                let r = self.residuals[l] + tb.weights[l][self.n] * ((tb.exponents[l] * t).exp() - self.base[l]);
                penalty(tb.cvalues[l], r)
            })
            .sum()
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Minimizer estimate of `f` on `[a, b]`: best of an evenly spaced scan, then
/// golden section inside the neighbouring scan cell.
fn scan_golden(f: &dyn Fn(f64) -> f64, a: f64, b: f64, scan: usize, tol: f64) -> (f64, f64) {
    let pts: Vec<f64> = (0..=scan + 1)
        .map(|j| a + (b - a) * j as f64 / (scan + 1) as f64)
        .collect();
    let vals: Vec<f64> = pts.iter().map(|&t| f(t)).collect();
    let best = (0..pts.len()).fold(0, |bi, j| if vals[j] < vals[bi] { j } else { bi });
    let (mut lo, mut hi) = (pts[best.saturating_sub(1)], pts[(best + 1).min(pts.len() - 1)]);
    let (mut best_t, mut best_v) = (pts[best], vals[best]);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    for (t, v) in [(x1, f1), (x2, f2)] {
        if v < best_v {
            best_t = t;
            best_v = v;
        }
    }
    (best_t, best_v)
}

/// Projected cyclic coordinate descent from `seed(p, envelope, cfg.seed_mode)`.
pub fn solve(p: &Problem, cgrid: &CGrid, envelope: &BoundaryEnvelope, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let start = seed(p, envelope, &cfg.seed_mode)?;
    let table = KernelTable::build(p, start.nodes(), cgrid)?;
    Ok(solve_with_table(&table, envelope, start.values().to_vec(), cfg))
}

pub(crate) fn solve_with_table(
    table: &KernelTable,
    envelope: &BoundaryEnvelope,
    mut d: Vec<f64>,
    cfg: &SolverConfig,
) -> SolveReport {
    let lower = envelope.lower.values();
    let upper = envelope.upper.values();
    let n_nodes = d.len();
    let objective = |r: &[f64]| -> f64 { table.cvalues.iter().zip(r).map(|(&c, &x)| penalty(c, x)).sum() };
    let mut residuals = table.residuals(&d);
    let mut current = objective(&residuals);
    let mut trace = vec![current];
    let mut converged = false;
    let mut sweeps = 0;
    // Golden section runs a little below the stopping threshold so that
    // converged coordinates stop moving.
    let line_tol = 0.25 * cfg.coordinate_tolerance;
    while sweeps < cfg.max_iterations {
        sweeps += 1;
        let mut max_move: f64 = 0.0;
        for n in 1..n_nodes - 1 {
            let lo = lower[n].max(d[n + 1]);
            let hi = upper[n].min(d[n - 1]);
            if !(hi > lo) {
                continue;
            }
            let base: Vec<f64> = table.exponents.iter().map(|k| (k * d[n]).exp()).collect();
            let (here, t, v) = {
                let coord = Coordinate {
                    table,
                    residuals: &residuals,
                    n,
                    current: d[n],
                    base: &base,
                };
                let (t, v) = scan_golden(&|t| coord.value(t), lo, hi, cfg.scan_points, line_tol);
                (coord.value(coord.current), t, v)
            };
            if v < here {
                for l in 0..table.m() {
                    residuals[l] += table.weights[l][n] * ((table.exponents[l] * t).exp() - base[l]);
                }
                max_move = max_move.max((t - d[n]).abs());
                d[n] = t;
            }
        }
        // Refresh to avoid drift from incremental updates.
        residuals = table.residuals(&d);
        let next = objective(&residuals);
        let improvement = current - next;
        current = next.min(current);
        trace.push(current);
        if max_move < cfg.coordinate_tolerance || improvement.abs() < cfg.value_tolerance {
            converged = true;
            break;
        }
    }
    let residual_vector = ResidualVector::from_residuals(table.cvalues.clone(), residuals);
    SolveReport {
        grid: BoundaryGrid::new(table.nodes.clone(), d).expect("iterates stay monotone and non-positive"),
        trace,
        residuals: residual_vector,
        iterations: sweeps,
        converged,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticFit {
    pub fitted_b: f64,
    pub theoretical_b: f64,
    pub nodes_used: usize,
}

impl AsymptoticFit {
    pub fn relative_error(&self) -> f64 {
        (self.fitted_b - self.theoretical_b).abs() / self.theoretical_b
    }
}

/// Least-squares `B` in `d_n ≈ -B·y_n²` over the `k` smallest positive nodes,
/// compared with `B_β` for the problem's local behaviour.
pub fn asymptotic_check(grid: &BoundaryGrid, p: &Problem, k: usize) -> Result<AsymptoticFit> {
    let pairs: Vec<(f64, f64)> = grid
        .nodes()
        .iter()
        .zip(grid.values())
        .filter(|(y, _)| **y > 0.0)
        .take(k)
        .map(|(y, d)| (*y, *d))
        .collect();
    if pairs.len() < 3 {
        return Err(SolverError::InsufficientData(pairs.len()));
    }
    let num: f64 = pairs.iter().map(|(y, d)| d * y * y).sum();
    let den: f64 = pairs.iter().map(|(y, _)| y.powi(4)).sum();
    Ok(AsymptoticFit {
        fitted_b: -num / den,
        theoretical_b: constants::solve_b(p.beta, p.m_ratio)?.b,
        nodes_used: pairs.len(),
    })
}

/// Objective of a grid on a c-grid; convenience for reports.
pub fn objective_of(p: &Problem, grid: &BoundaryGrid, cgrid: &CGrid) -> Result<ResidualVector> {
    Ok(fredholm::objective(p, grid, cgrid)?)
}
