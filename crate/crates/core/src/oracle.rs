//! Reference solutions independent of the integral representation: backward
//! induction for the Bermudan approximation and Monte Carlo evaluation of
//! stopping rules.
//!
//! Values are discounted to the common epoch 0: stopping at `t ≤ 0` in state
//! `x` pays `e^{-rt}·h(x)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::fredholm::{BoundaryGrid, FredholmError};
use crate::problem::{PayoffProblem, Problem};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("grid resolution too small: {what} = {value} (need ≥ 16)")]
    Resolution { what: &'static str, value: usize },
    #[error("invalid oracle setting: {0}")]
    BadConfig(&'static str),
    #[error("node y = {y} outside the oracle space grid [{lo}, {hi}]")]
    OutOfRange { y: f64, lo: f64, hi: f64 },
    #[error("Monte Carlo needs at least 1000 paths, got {0}")]
    TooFewPaths(usize),
    #[error(transparent)]
    Fredholm(#[from] FredholmError),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Probabilists' Gauss–Hermite rule with 5 nodes: `E[f(Z)] ≈ Σ w_i f(z_i)`.
pub fn gauss_hermite5() -> ([f64; 5], [f64; 5]) {
    let s10 = 10f64.sqrt();
    let (a, b) = ((5.0 - s10).sqrt(), (5.0 + s10).sqrt());
    let nodes = [-b, -a, 0.0, a, b];
    // w = n! / (n·He_{n-1}(z))², He_4(z) = z⁴ - 6z² + 3.
    let w = |z: f64| {
        let he4 = z.powi(4) - 6.0 * z * z + 3.0;
        120.0 / (25.0 * he4 * he4)
    };
    (nodes, nodes.map(w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpConfig {
    pub t_min: f64,
    pub t_steps: usize,
    pub x_steps: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    /// Every `store_stride`-th value slice is kept (the `t_min` slice always).
    pub store_stride: usize,
}

impl DpConfig {
    /// `[-4√|T|, b_inf + 4√|T|]`, widened to `±6√|T|` around the origin for
    /// undiscounted problems or unbounded `b_inf`.
    pub fn for_problem(p: &Problem, t_min: f64, t_steps: usize, x_steps: usize) -> Self {
        let s = (-t_min).sqrt();
        let (x_lo, x_hi) = if p.r == 0.0 || !p.b_inf.is_finite() {
            (-6.0 * s, 6.0 * s)
        } else {
            (-4.0 * s, p.b_inf + 4.0 * s)
        };
        Self {
            t_min,
            t_steps,
            x_steps,
            x_lo,
            x_hi,
            store_stride: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_steps < 16 {
            return Err(OracleError::Resolution {
                what: "t_steps",
                value: self.t_steps,
            });
        }
        if self.x_steps < 16 {
            return Err(OracleError::Resolution {
                what: "x_steps",
                value: self.x_steps,
            });
        }
        if !(self.t_min < 0.0) || !self.t_min.is_finite() {
            return Err(OracleError::BadConfig("t_min must be finite and negative"));
        }
        if !(self.x_hi > self.x_lo) {
            return Err(OracleError::BadConfig("x bounds must satisfy lo < hi"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        -self.t_min / self.t_steps as f64
    }
}

/// Boundary `b(t_k)` as a time series, ascending in `t` and ending at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBoundary {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    /// Time step the series resolves.
    pub dt: f64,
}

impl TimeBoundary {
    pub fn at(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&s| s < t).min(self.times.len() - 1);
        if i == 0 || self.times[i] == t {
            return self.positions[i];
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        (1.0 - w) * self.positions[i - 1] + w * self.positions[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpGrid {
    pub config: DpConfig,
    pub x: Vec<f64>,
    /// `b(t_k)` for `k = 0..=t_steps`, `t_0 = t_min`, `t_K = 0`.
    pub boundary: TimeBoundary,
    /// `(t, V(t, ·))` pairs, ascending in `t`.
    pub slices: Vec<(f64, Vec<f64>)>,
}

impl DpGrid {
    /// Value slice at `t_min`.
    pub fn initial_values(&self) -> &[f64] {
        &self.slices[0].1
    }

    pub fn value_at(&self, slice: &[f64], x: f64) -> f64 {
        interpolate(&self.x, slice, x)
    }

    /// Stored slice whose time is within half a step of `t`.
    pub fn slice_at(&self, t: f64) -> Option<&[f64]> {
        let half = 0.5 * self.config.dt();
        self.slices
            .iter()
            .find(|(s, _)| (s - t).abs() <= half)
            .map(|(_, v)| v.as_slice())
    }
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let y = if x < lo {
        2.0 * lo - x
    } else if x > hi {
        2.0 * hi - x
    } else {
        x
    };
    y.clamp(lo, hi)
}

/// Linear interpolation on a uniform grid with reflection at the ends.
fn interpolate(xs: &[f64], v: &[f64], x: f64) -> f64 {
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    let x = reflect(x, lo, hi);
    let h = (hi - lo) / (xs.len() - 1) as f64;
    let pos = (x - lo) / h;
    let i = (pos.floor() as usize).min(xs.len() - 2);
    let w = pos - i as f64;
    (1.0 - w) * v[i] + w * v[i + 1]
}

/// Crossing of `payoff - continuation` from negative to non-negative at the
/// right end of the first continuation run; `x_lo` if nothing continues,
/// `x_hi` if the run reaches the edge. Stopping points before the run are
/// artefacts of the reflecting edge and are skipped.
fn crossing(xs: &[f64], g: &[f64]) -> f64 {
    let Some(start) = g.iter().position(|&v| v < 0.0) else {
        return xs[0];
    };
    match (start..g.len()).find(|&j| g[j] >= 0.0) {
        None => xs[xs.len() - 1],
        Some(j) => {
            let w = g[j - 1] / (g[j - 1] - g[j]);
            xs[j - 1] + w * (xs[j] - xs[j - 1])
        }
    }
}

/// Bermudan backward induction with Gauss–Hermite expectations. The boundary
/// at each slice is where the payoff crosses the one-step continuation value.
pub fn backward_induction(pp: &PayoffProblem, cfg: &DpConfig) -> Result<DpGrid> {
    cfg.validate()?;
    let (gz, gw) = gauss_hermite5();
    let n_x = cfg.x_steps + 1;
    let xs: Vec<f64> = (0..n_x)
        .map(|i| cfg.x_lo + (cfg.x_hi - cfg.x_lo) * i as f64 / cfg.x_steps as f64)
        .collect();
    let dt = cfg.dt();
    let sd = dt.sqrt();
    let shift = pp.drift * dt;
    let payoff: Vec<f64> = xs.iter().map(|&x| pp.payoff(x)).collect();
    let time = |k: usize| {
        if k == cfg.t_steps {
            0.0
        } else {
            cfg.t_min + k as f64 * dt
        }
    };

    let mut v = payoff.clone();
    let mut slices = vec![(0.0, v.clone())];
    // At t = 0 every point stops; the boundary is the terminal root, 0.
    let mut positions = vec![0.0; cfg.t_steps + 1];
    for k in (0..cfg.t_steps).rev() {
        let t = time(k);
        let disc = (-pp.r * t).exp();
        let cont: Vec<f64> = xs
            .par_iter()
            .map(|&x| {
                gz.iter()
                    .zip(&gw)
                    .map(|(z, w)| w * interpolate(&xs, &v, x + shift + sd * z))
                    .sum()
            })
            .collect();
        let g: Vec<f64> = payoff.iter().zip(&cont).map(|(h, c)| disc * h - c).collect();
        positions[k] = crossing(&xs, &g);
        v = cont.iter().zip(&payoff).map(|(c, h)| c.max(disc * h)).collect();
        if k == 0 || (cfg.store_stride > 0 && k % cfg.store_stride == 0) {
            slices.push((t, v.clone()));
        }
    }
    slices.reverse();
    Ok(DpGrid {
        config: cfg.clone(),
        x: xs,
        boundary: TimeBoundary {
            times: (0..=cfg.t_steps).map(time).collect(),
            positions,
            dt,
        },
        slices,
    })
}

/// Removes the `O(√Δt)` Bermudan bias: `2·b_{4n} - b_n` on the coarse times.
/// Both levels run on `4·x_steps` space intervals so that interpolation error
/// stays below the time-discretization error of the finer level.
pub fn richardson_boundary(pp: &PayoffProblem, cfg: &DpConfig) -> Result<TimeBoundary> {
    let base = DpConfig {
        x_steps: 4 * cfg.x_steps,
        store_stride: 0,
        ..cfg.clone()
    };
    let coarse = backward_induction(pp, &base)?;
    let fine = backward_induction(
        pp,
        &DpConfig {
            t_steps: 4 * cfg.t_steps,
            ..base.clone()
        },
    )?;
    let positions = coarse
        .boundary
        .positions
        .iter()
        .enumerate()
        .map(|(k, b)| 2.0 * fine.boundary.positions[4 * k] - b)
        .collect();
    Ok(TimeBoundary {
        times: coarse.boundary.times.clone(),
        positions,
        dt: coarse.boundary.dt,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedBoundary {
    pub grid: BoundaryGrid,
    /// Nodes never inside the continuation region on the time range.
    pub truncated: Vec<bool>,
}

/// `d(y)` = latest time with `y < b(t)`, interpolated linearly between
/// slices; `t_min` with a truncation flag where `y` is never reached.
pub fn extract_d(boundary: &TimeBoundary, nodes: &[f64], x_range: (f64, f64)) -> Result<ExtractedBoundary> {
    let (lo, hi) = x_range;
    if let Some(&y) = nodes.iter().find(|&&y| y < lo || y > hi) {
        return Err(OracleError::OutOfRange { y, lo, hi });
    }
    let t = &boundary.times;
    let b = &boundary.positions;
    let k_last = t.len() - 1;
    let mut truncated = vec![false; nodes.len()];
    let mut values: Vec<f64> = nodes
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if y <= 0.0 {
                return 0.0;
            }
            match (0..=k_last).rev().find(|&k| b[k] > y) {
                None => {
                    truncated[i] = true;
                    t[0]
                }
                Some(k) if k == k_last => 0.0,
                Some(k) => {
                    let w = (b[k] - y) / (b[k] - b[k + 1]);
                    (t[k] + w * (t[k + 1] - t[k])).min(0.0)
                }
            }
        })
        .collect();
    for i in 1..values.len() {
        values[i] = values[i].min(values[i - 1]);
    }
    Ok(ExtractedBoundary {
        grid: BoundaryGrid::new(nodes.to_vec(), values)?,
        truncated,
    })
}

/// Decides whether to stop at `(t, x)`; stopping at `t = 0` is forced.
pub trait StoppingRule: Sync {
    fn stop(&self, t: f64, x: f64) -> bool;
}

pub struct StopImmediately;

impl StoppingRule for StopImmediately {
    fn stop(&self, _t: f64, _x: f64) -> bool {
        true
    }
}

/// Continue while `x < b(t)`.
impl StoppingRule for TimeBoundary {
    fn stop(&self, t: f64, x: f64) -> bool {
        x >= self.at(t)
    }
}

/// Continue while `x < 0`, or `x ∈ [0, b_inf)` and `t < d(x)`.
pub struct GridRule<'a> {
    pub grid: &'a BoundaryGrid,
}

impl StoppingRule for GridRule<'_> {
    fn stop(&self, t: f64, x: f64) -> bool {
        let last = *self.grid.nodes().last().expect("non-empty");
        if x < 0.0 {
            false
        } else if x >= last {
            true
        } else {
            t >= self.grid.value_at(x)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub paths: usize,
    pub seed: u64,
}

/// Mean discounted payoff of `rule` from `(t0, x0)` with `steps` Euler steps
/// to time 0. Path `i` draws from ChaCha8 stream `i` of `seed`, and payoffs
/// are summed in path order, so results do not depend on the thread count.
pub fn mc_value(
    pp: &PayoffProblem,
    t0: f64,
    x0: f64,
    rule: &dyn StoppingRule,
    paths: usize,
    steps: usize,
    seed: u64,
) -> Result<McEstimate> {
    if paths < 1000 {
        return Err(OracleError::TooFewPaths(paths));
    }
    if !(t0 < 0.0) || steps == 0 {
        return Err(OracleError::BadConfig("need t0 < 0 and at least one step"));
    }
    let dt = -t0 / steps as f64;
    let sd = dt.sqrt();
    let discounted = |t: f64, x: f64| (-pp.r * t).exp() * pp.payoff(x);
    let payoffs: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut x = x0;
            for k in 0..steps {
                let t = t0 + k as f64 * dt;
                if rule.stop(t, x) {
                    return discounted(t, x);
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                x += pp.drift * dt + sd * z;
            }
            discounted(0.0, x)
        })
        .collect();
    // Shifted sums keep a constant sample exact.
    let n = paths as f64;
    let p0 = payoffs[0];
    let s1: f64 = payoffs.iter().map(|p| p - p0).sum();
    let s2: f64 = payoffs.iter().map(|p| (p - p0).powi(2)).sum();
    let mean = p0 + s1 / n;
    let var = ((s2 - s1 * s1 / n) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        paths,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin, Builtin};
    use approx::assert_abs_diff_eq;

    #[test]
    fn hermite_rule_moments() {
        let (z, w) = gauss_hermite5();
        let m = |p: i32| z.iter().zip(&w).map(|(z, w)| w * z.powi(p)).sum::<f64>();
        assert_abs_diff_eq!(m(0), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m(2), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(m(4), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m(6), 15.0, epsilon = 1e-11);
        assert_abs_diff_eq!(m(8), 105.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m(3), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn constant_payoff_stops_at_once() {
        let pp = PayoffProblem::new("const", 0.5, |_| 2.0);
        let cfg = DpConfig {
            t_min: -1.0,
            t_steps: 32,
            x_steps: 32,
            x_lo: -3.0,
            x_hi: 3.0,
            store_stride: 1,
        };
        let g = backward_induction(&pp, &cfg).unwrap();
        assert!(g.slices.last().unwrap().1.iter().all(|&v| v == 2.0));
        // Discounting to epoch 0 makes earlier stopping worth more.
        assert_abs_diff_eq!(g.initial_values()[10], 2.0 * 0.5f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn resolution_guard() {
        let pp = PayoffProblem::new("const", 0.5, |_| 2.0);
        let mut cfg = DpConfig {
            t_min: -1.0,
            t_steps: 8,
            x_steps: 32,
            x_lo: -3.0,
            x_hi: 3.0,
            store_stride: 0,
        };
        assert!(matches!(
            backward_induction(&pp, &cfg),
            Err(OracleError::Resolution { what: "t_steps", .. })
        ));
        cfg.t_steps = 32;
        cfg.x_lo = 4.0;
        assert!(matches!(backward_induction(&pp, &cfg), Err(OracleError::BadConfig(_))));
    }

    #[test]
    fn extraction_on_synthetic_boundary() {
        // b(t) = √(-t)/2 on [-4, 0] ⇒ d(y) = -4y².
        let times: Vec<f64> = (0..=400).map(|k| -4.0 + k as f64 * 0.01).collect();
        let positions = times.iter().map(|t| 0.5 * (-t).sqrt()).collect();
        let tb = TimeBoundary {
            times,
            positions,
            dt: 0.01,
        };
        let nodes = vec![0.0, 0.1, 0.5, 0.9, 1.5];
        let e = extract_d(&tb, &nodes, (-5.0, 5.0)).unwrap();
        assert_eq!(e.grid.values()[0], 0.0);
        assert_abs_diff_eq!(e.grid.values()[2], -1.0, epsilon = 5e-3);
        assert_abs_diff_eq!(e.grid.values()[3], -3.24, epsilon = 5e-3);
        assert_eq!(e.grid.values()[4], -4.0);
        assert_eq!(e.truncated, vec![false, false, false, false, true]);
        assert!(matches!(
            extract_d(&tb, &[0.0, 7.0], (-5.0, 5.0)),
            Err(OracleError::OutOfRange { .. })
        ));
    }

    #[test]
    fn mc_stop_immediately_and_determinism() {
        let p = builtin(Builtin::Linear).unwrap();
        let pp = p.payoff().unwrap();
        let e = mc_value(&pp, -1.0, 0.3, &StopImmediately, 1000, 10, 7).unwrap();
        assert_abs_diff_eq!(e.estimate, 1f64.exp() * 0.3, epsilon = 1e-14);
        assert_eq!(e.std_error, 0.0);
        let tb = TimeBoundary {
            times: vec![-1.0, 0.0],
            positions: vec![0.7, 0.0],
            dt: 1.0,
        };
        let a = mc_value(&pp, -1.0, 0.0, &tb, 2000, 50, 11).unwrap();
        let b = mc_value(&pp, -1.0, 0.0, &tb, 2000, 50, 11).unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert!(matches!(
            mc_value(&pp, -1.0, 0.0, &tb, 10, 50, 11),
            Err(OracleError::TooFewPaths(10))
        ));
    }
}
