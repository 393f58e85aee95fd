//! Certified pointwise bounds for the discretized boundary.
//!
//! `R(c; d)` is non-decreasing in `d`, so any test boundary that lies below
//! the true one forces `R ≤ 0` and any test boundary above forces `R ≥ 0`.
//! Given an upper bound `u`, the lower bound at `x` is the smallest `t` for
//! which `y ↦ min(t, u(y))` on `[x, b_inf]` (and `u` left of `x`) keeps every
//! residual non-negative; symmetrically for the upper bound with
//! `max(t, l(y))` on `[0, x]` and `l` right of `x`.
//!
//! The sign conditions are checked on a finite c-grid extended geometrically
//! towards large `c`, so certificates hold for the discretized problem on
//! that grid only.

use rayon::prelude::*;

use crate::fredholm::{self, BoundaryGrid, CGrid, KernelTable};
use crate::problem::Problem;

pub type Result<T> = fredholm::Result<T>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeConfig {
    pub bisection_tolerance: f64,
    /// Depth of the search interval `[-t_max, 0]`.
    pub t_max: f64,
    /// Extension reaches `extension_factor·c_M`.
    pub extension_factor: f64,
    pub extension_count: usize,
}

impl EnvelopeConfig {
    /// `t_max = 50/r`, or 50 when `r = 0`.
    pub fn for_problem(p: &Problem) -> Self {
        Self {
            bisection_tolerance: 1e-6,
            t_max: if p.r > 0.0 { 50.0 / p.r } else { 50.0 },
            extension_factor: 4.0,
            extension_count: 16,
        }
    }

    pub fn certification_grid(&self, p: &Problem, cgrid: &CGrid) -> Result<CGrid> {
        if self.extension_count == 0 || self.extension_factor <= 1.0 {
            return Ok(cgrid.clone());
        }
        cgrid.extended(self.extension_factor, self.extension_count, p.r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEnvelope {
    pub lower: BoundaryGrid,
    pub upper: BoundaryGrid,
    pub iteration: usize,
    /// Nodes where the search hit `-t_max` instead of a sign change.
    pub lower_truncated: Vec<bool>,
    pub upper_truncated: Vec<bool>,
}

impl BoundaryEnvelope {
    pub fn widths(&self) -> Vec<f64> {
        self.upper
            .values()
            .iter()
            .zip(self.lower.values())
            .map(|(u, l)| u - l)
            .collect()
    }

    /// Whether `d` lies inside the envelope at interior nodes, with `slack`.
    pub fn contains(&self, d: &[f64], slack: f64) -> bool {
        let n = self.lower.len();
        (1..n - 1).all(|i| self.lower.values()[i] - slack <= d[i] && d[i] <= self.upper.values()[i] + slack)
    }
}

/// One bound step's output.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub grid: BoundaryGrid,
    pub truncated: Vec<bool>,
}

fn all_residuals(table: &KernelTable, values: &[f64], want_nonneg: bool) -> bool {
    (0..table.m()).all(|l| {
        let r = table.residual(l, values);
        if want_nonneg {
            r >= 0.0
        } else {
            r <= 0.0
        }
    })
}

/// Bisection on `[-t_max, 0]` for the switch point of a monotone predicate,
/// true on `[t*, 0]` when `holds_at_zero`, else on `[-t_max, t*]`. Returns the
/// endpoint of the final bracket on the failing side, so the bound errs
/// outward. The flag marks a predicate that never switches inside the range.
fn bisect(pred: impl Fn(f64) -> bool, t_max: f64, tol: f64, holds_at_zero: bool) -> (f64, bool) {
    let (mut lo, mut hi) = (-t_max, 0.0);
    if holds_at_zero {
        // Lower-bound search: predicate holds on [t*, 0].
        if pred(lo) {
            return (lo, true);
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if pred(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (lo, false)
    } else {
        // Upper-bound search: predicate holds on [-t_max, t*].
        if pred(hi) {
            return (hi, false);
        }
        if !pred(lo) {
            return (lo, true);
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if pred(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (hi, false)
    }
}

fn project_lower(values: &mut [f64]) {
    // A lower bound at a later node also bounds every earlier node.
    for i in (0..values.len() - 1).rev() {
        values[i] = values[i].max(values[i + 1]).min(0.0);
    }
}

fn project_upper(values: &mut [f64]) {
    for i in 1..values.len() {
        values[i] = values[i].min(values[i - 1]);
    }
}

pub(crate) fn lower_step_with(table: &KernelTable, upper: &BoundaryGrid, cfg: &EnvelopeConfig) -> Result<StepResult> {
    let u = upper.values();
    let n = u.len();
    let found: Vec<(f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            if i == 0 {
                return (0.0, false);
            }
            let pred = |t: f64| {
                let mut v = u.to_vec();
                for j in i..n {
                    v[j] = t.min(u[j]);
                }
                all_residuals(table, &v, true)
            };
            bisect(pred, cfg.t_max, cfg.bisection_tolerance, true)
        })
        .collect();
    let mut values: Vec<f64> = found.iter().map(|f| f.0).collect();
    project_lower(&mut values);
    Ok(StepResult {
        grid: BoundaryGrid::new(table.nodes.clone(), values)?,
        truncated: found.iter().map(|f| f.1).collect(),
    })
}

pub(crate) fn upper_step_with(table: &KernelTable, lower: &BoundaryGrid, cfg: &EnvelopeConfig) -> Result<StepResult> {
    let lo = lower.values();
    let n = lo.len();
    let found: Vec<(f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            if i == 0 {
                return (0.0, false);
            }
            let pred = |t: f64| {
                let mut v = lo.to_vec();
                for j in 0..=i {
                    v[j] = t.max(lo[j]);
                }
                all_residuals(table, &v, false)
            };
            let (t, truncated) = bisect(pred, cfg.t_max, cfg.bisection_tolerance, false);
            (t.max(lo[i]), truncated)
        })
        .collect();
    let mut values: Vec<f64> = found.iter().map(|f| f.0).collect();
    project_upper(&mut values);
    Ok(StepResult {
        grid: BoundaryGrid::new(table.nodes.clone(), values)?,
        truncated: found.iter().map(|f| f.1).collect(),
    })
}

/// Lower bound from an upper bound, certified on `cgrid` extended per `cfg`.
pub fn lower_step(p: &Problem, upper: &BoundaryGrid, cgrid: &CGrid, cfg: &EnvelopeConfig) -> Result<StepResult> {
    let table = KernelTable::build(p, upper.nodes(), &cfg.certification_grid(p, cgrid)?)?;
    lower_step_with(&table, upper, cfg)
}

/// Upper bound from a lower bound, certified on `cgrid` extended per `cfg`.
pub fn upper_step(p: &Problem, lower: &BoundaryGrid, cgrid: &CGrid, cfg: &EnvelopeConfig) -> Result<StepResult> {
    let table = KernelTable::build(p, lower.nodes(), &cfg.certification_grid(p, cgrid)?)?;
    upper_step_with(&table, lower, cfg)
}

fn initial_with(table: &KernelTable, cfg: &EnvelopeConfig) -> Result<BoundaryEnvelope> {
    let upper = BoundaryGrid::zeros(table.nodes.clone())?;
    let n = upper.len();
    let lower = lower_step_with(table, &upper, cfg)?;
    Ok(BoundaryEnvelope {
        lower: lower.grid,
        upper,
        iteration: 0,
        lower_truncated: lower.truncated,
        upper_truncated: vec![false; n],
    })
}

/// `upper ≡ 0` and the lower bound it certifies.
pub fn initial_envelope(p: &Problem, nodes: &[f64], cgrid: &CGrid, cfg: &EnvelopeConfig) -> Result<BoundaryEnvelope> {
    let table = KernelTable::build(p, nodes, &cfg.certification_grid(p, cgrid)?)?;
    initial_with(&table, cfg)
}

/// Envelopes for iterations `0..=k`: iteration 0 is the initial envelope,
/// iteration `j ≥ 1` refines the upper bound from the current lower bound and,
/// for `j ≥ 2`, first refines the lower bound from the previous upper bound.
pub fn iterate(
    p: &Problem,
    nodes: &[f64],
    cgrid: &CGrid,
    k: usize,
    cfg: &EnvelopeConfig,
) -> Result<Vec<BoundaryEnvelope>> {
    let table = KernelTable::build(p, nodes, &cfg.certification_grid(p, cgrid)?)?;
    let mut history = vec![initial_with(&table, cfg)?];
    for j in 1..=k {
        let prev = history.last().expect("non-empty");
        let (lower, lower_truncated) = if j == 1 {
            (prev.lower.clone(), prev.lower_truncated.clone())
        } else {
            let s = lower_step_with(&table, &prev.upper, cfg)?;
            (s.grid, s.truncated)
        };
        let upper = upper_step_with(&table, &lower, cfg)?;
        history.push(BoundaryEnvelope {
            lower,
            upper: upper.grid,
            iteration: j,
            lower_truncated,
            upper_truncated: upper.truncated,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fredholm::uniform_nodes;
    use crate::problem::{builtin, Builtin};

    fn setup(n: usize) -> (Problem, Vec<f64>, CGrid, EnvelopeConfig) {
        let p = builtin(Builtin::Linear).unwrap();
        let nodes = uniform_nodes(p.b_inf, n);
        let cg = CGrid::arithmetic(p.r, 40, 0.1).unwrap();
        let cfg = EnvelopeConfig::for_problem(&p);
        (p, nodes, cg, cfg)
    }

    #[test]
    fn bisection_directions() {
        let (t, tr) = bisect(|t| t >= -3.0, 50.0, 1e-9, true);
        assert!(!tr && t <= -3.0);
        assert!(t > -3.0 - 1e-8);
        let (t, tr) = bisect(|t| t <= -3.0, 50.0, 1e-9, false);
        assert!(!tr && (-3.0..-3.0 + 1e-8).contains(&t));
        assert_eq!(bisect(|_| true, 50.0, 1e-9, true), (-50.0, true));
        assert_eq!(bisect(|_| true, 50.0, 1e-9, false), (0.0, false));
    }

    #[test]
    fn initial_envelope_linear() {
        let (p, nodes, cg, cfg) = setup(20);
        let env = initial_envelope(&p, &nodes, &cg, &cfg).unwrap();
        assert!(env.upper.values().iter().all(|&u| u == 0.0));
        assert_eq!(env.lower.values()[0], 0.0);
        for i in 1..nodes.len() - 1 {
            let l = env.lower.values()[i];
            assert!(l.is_finite() && l <= -1e-6, "node {i}: {l}");
        }
    }

    #[test]
    fn iterations_tighten() {
        let (p, nodes, cg, cfg) = setup(20);
        let hist = iterate(&p, &nodes, &cg, 3, &cfg).unwrap();
        assert_eq!(hist.len(), 4);
        for w in hist.windows(2) {
            for i in 0..nodes.len() {
                let tol = 2.0 * cfg.bisection_tolerance;
                assert!(w[1].lower.values()[i] >= w[0].lower.values()[i] - tol);
                assert!(w[1].upper.values()[i] <= w[0].upper.values()[i] + tol);
            }
        }
        let last = hist.last().unwrap();
        for i in 0..nodes.len() {
            assert!(last.lower.values()[i] <= last.upper.values()[i]);
        }
        // Upper bounds become strictly negative inside.
        assert!(hist[1].upper.values()[1..nodes.len() - 1].iter().all(|&u| u < 0.0));
    }

    #[test]
    fn first_iteration_is_initial_plus_upper_step() {
        let (p, nodes, cg, cfg) = setup(12);
        let hist = iterate(&p, &nodes, &cg, 1, &cfg).unwrap();
        let init = initial_envelope(&p, &nodes, &cg, &cfg).unwrap();
        let up = upper_step(&p, &init.lower, &cg, &cfg).unwrap();
        assert_eq!(hist[1].lower, init.lower);
        assert_eq!(hist[1].upper, up.grid);
    }
}
