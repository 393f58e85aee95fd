//! Numerical kernels: adaptive Gauss–Kronrod quadrature on finite and
//! semi-infinite intervals, the standard normal CDF/PDF, Brent root finding
//! and a Lanczos gamma function.
//!
//! Everything here is a pure function of its inputs.

use std::f64::consts::PI;

use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("quadrature tolerance not met after {subdivisions} subdivisions (estimate {estimate:e}, error bound {error_bound:e})")]
    ToleranceNotMet {
        estimate: f64,
        error_bound: f64,
        subdivisions: usize,
    },
    #[error("root search on [{lo}, {hi}] did not converge")]
    RootNotConverged { lo: f64, hi: f64 },
    #[error("declared decay rate must be positive, got {0}")]
    InvalidDecay(f64),
    #[error("invalid root bracket [{lo}, {hi}] with f(lo) = {f_lo:e}, f(hi) = {f_hi:e}")]
    InvalidBracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("invalid quadrature specification: {0}")]
    InvalidSpec(&'static str),
    #[error("non-finite integrand value at x = {0}")]
    NonFinite(f64),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// How far a semi-infinite integral is truncated.
///
/// The caller declares an exponential decay rate `λ` for the integrand. The
/// first truncation length is `ln(envelope / (λ·abs_tol)) / λ`; the cut is then
/// pushed outwards by `growth` while the integrand at the cut still exceeds
/// `λ·abs_tol`, at most `max_extensions` times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffPolicy {
    pub envelope: f64,
    pub growth: f64,
    pub max_extensions: usize,
}

impl Default for CutoffPolicy {
    fn default() -> Self {
        Self {
            envelope: 1.0,
            growth: 1.5,
            max_extensions: 60,
        }
    }
}

impl CutoffPolicy {
    /// Truncation length for integrand `f` starting at `a` in direction `sign`.
    fn truncation<F: Fn(f64) -> f64>(&self, f: &F, a: f64, sign: f64, rate: f64, abs_tol: f64) -> f64 {
        let mut len = ((self.envelope / (rate * abs_tol)).ln() / rate).max(1.0);
        let small = 0.1 * rate * abs_tol;
        for _ in 0..self.max_extensions {
            let tail_ok = [1.0, 1.25, 1.5].iter().all(|k| f(a + sign * len * k).abs() <= small);
            if tail_ok {
                break;
            }
            len *= self.growth;
        }
        len
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub relative_tolerance: f64,
    pub absolute_tolerance: f64,
    pub max_subdivisions: usize,
    pub cutoff: CutoffPolicy,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            relative_tolerance: 1e-10,
            absolute_tolerance: 1e-12,
            max_subdivisions: 500,
            cutoff: CutoffPolicy::default(),
        }
    }
}

impl QuadratureSpec {
    pub fn with_tolerances(relative: f64, absolute: f64) -> Self {
        Self {
            relative_tolerance: relative,
            absolute_tolerance: absolute,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.relative_tolerance > 0.0 && self.absolute_tolerance > 0.0) {
            return Err(NumericsError::InvalidSpec("tolerances must be strictly positive"));
        }
        if self.max_subdivisions == 0 {
            return Err(NumericsError::InvalidSpec("max_subdivisions must be at least 1"));
        }
        Ok(())
    }
}

/// A quadrature result together with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub subdivisions: usize,
}

// 21-point Kronrod abscissae and weights with the embedded 10-point Gauss rule
// (QUADPACK qk21). The last abscissa is the centre.
const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208931311069,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994743223,
];

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// One 21-point Kronrod panel. Endpoints are never evaluated.
fn kronrod_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Panel> {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    if !fc.is_finite() {
        return Err(NumericsError::NonFinite(centre));
    }
    let mut res_k = fc * WGK[10];
    let mut res_g = 0.0;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let x = half * XGK[j];
        let f1 = f(centre - x);
        let f2 = f(centre + x);
        if !f1.is_finite() {
            return Err(NumericsError::NonFinite(centre - x));
        }
        if !f2.is_finite() {
            return Err(NumericsError::NonFinite(centre + x));
        }
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (1.0_f64).min((200.0 * error / res_asc).powf(1.5));
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Panel { a, b, value, error })
}

/// Adaptive Gauss–Kronrod integral of `f` over `[a, b]`.
///
/// The panel with the largest error estimate is bisected until the summed
/// error drops below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate_finite<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<Estimate> {
    spec.validate()?;
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
            subdivisions: 0,
        });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut panels = vec![kronrod_panel(&f, lo, hi)?];
    loop {
        let value: f64 = panels.iter().map(|p| p.value).sum();
        let error: f64 = panels.iter().map(|p| p.error).sum();
        let target = spec.absolute_tolerance.max(spec.relative_tolerance * value.abs());
        if error <= target {
            return Ok(Estimate {
                value: sign * value,
                error,
                subdivisions: panels.len(),
            });
        }
        if panels.len() >= spec.max_subdivisions {
            return Err(NumericsError::ToleranceNotMet {
                estimate: sign * value,
                error_bound: error,
                subdivisions: panels.len(),
            });
        }
        // Bisect the worst panel; ties resolve to the leftmost for determinism.
        let (worst, _) =
            panels.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, p)| if p.error > acc.1 { (i, p.error) } else { acc },
            );
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            // Panel cannot be split further in floating point.
            return Err(NumericsError::ToleranceNotMet {
                estimate: sign * value,
                error_bound: error,
                subdivisions: panels.len() + 1,
            });
        }
        panels.push(kronrod_panel(&f, p.a, mid)?);
        panels.push(kronrod_panel(&f, mid, p.b)?);
    }
}

/// Direction of a semi-infinite integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    PosInfinity,
    NegInfinity,
}

/// Integral of `f` from `a` to ±∞ for an integrand decaying at least like
/// `exp(-decay_rate·|x - a|)`.
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    direction: Direction,
    decay_rate: f64,
    spec: &QuadratureSpec,
) -> Result<Estimate> {
    if !(decay_rate > 0.0) || !decay_rate.is_finite() {
        return Err(NumericsError::InvalidDecay(decay_rate));
    }
    spec.validate()?;
    let sign = match direction {
        Direction::PosInfinity => 1.0,
        Direction::NegInfinity => -1.0,
    };
    let len = spec.cutoff.truncation(&f, a, sign, decay_rate, spec.absolute_tolerance);
    let est = match direction {
        Direction::PosInfinity => integrate_finite(&f, a, a + len, spec)?,
        Direction::NegInfinity => integrate_finite(&f, a - len, a, spec)?,
    };
    Ok(est)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// A sign-verified bracket for a scalar root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootBracket {
    pub lo: f64,
    pub hi: f64,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl RootBracket {
    /// Evaluates `f` at both ends and checks the sign condition.
    pub fn new<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> Result<Self> {
        Self::from_values(lo, hi, f(lo), f(hi))
    }

    pub fn from_values(lo: f64, hi: f64, f_lo: f64, f_hi: f64) -> Result<Self> {
        let ok = lo < hi && f_lo.is_finite() && f_hi.is_finite() && (f_lo * f_hi <= 0.0);
        if ok {
            Ok(Self { lo, hi, f_lo, f_hi })
        } else {
            Err(NumericsError::InvalidBracket { lo, hi, f_lo, f_hi })
        }
    }
}

struct BracketWidth {
    tol: f64,
}

impl roots::Convergency<f64> for BracketWidth {
    fn is_root_found(&mut self, y: f64) -> bool {
        y == 0.0
    }

    fn is_converged(&mut self, x1: f64, x2: f64) -> bool {
        (x1 - x2).abs() < self.tol
    }

    fn is_iteration_limit_reached(&mut self, iter: usize) -> bool {
        iter >= 500
    }
}

/// Brent's method. Stops once the bracket is narrower than `tol` (or an exact
/// zero is hit); the result always lies inside the initial bracket.
pub fn find_root<F: Fn(f64) -> f64>(f: F, bracket: RootBracket, tol: f64) -> Result<f64> {
    let RootBracket { lo, hi, f_lo, f_hi } =
        RootBracket::from_values(bracket.lo, bracket.hi, bracket.f_lo, bracket.f_hi)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    roots::find_root_brent(lo, hi, &f, &mut BracketWidth { tol })
        .map(|x| x.clamp(lo, hi))
        .map_err(|_| NumericsError::RootNotConverged { lo, hi })
}

pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn polynomial_and_zero_integrands() {
        let i = integrate_finite(|x| x, 0.0, 1.0, &spec()).unwrap();
        assert_abs_diff_eq!(i.value, 0.5, epsilon = 1e-14);
        let z = integrate_finite(|_| 0.0, -3.0, 7.0, &spec()).unwrap();
        assert_eq!(z.value, 0.0);
        let rev = integrate_finite(|x| x * x, 1.0, 0.0, &spec()).unwrap();
        assert_abs_diff_eq!(rev.value, -1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn endpoint_singularity_is_never_evaluated() {
        // 1/sqrt(x) on (0, 1] integrates to 2; f(0) is infinite.
        let s = QuadratureSpec {
            max_subdivisions: 2000,
            ..QuadratureSpec::with_tolerances(1e-9, 1e-10)
        };
        let i = integrate_finite(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, &s).unwrap();
        assert_abs_diff_eq!(i.value, 2.0, epsilon = 1e-8);
    }

    #[test]
    fn gaussian_moment_on_finite_interval() {
        let b = 2.4503_f64;
        let i = integrate_finite(|z: f64| z * (-b * z * z / 2.0 + z).exp(), 0.0, 40.0, &spec()).unwrap();
        assert_abs_diff_eq!(i.value, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn tolerance_not_met_reports_best_estimate() {
        let s = QuadratureSpec {
            max_subdivisions: 2,
            ..QuadratureSpec::with_tolerances(1e-15, 1e-15)
        };
        let err = integrate_finite(|x: f64| (50.0 * x).sin().abs(), 0.0, 10.0, &s).unwrap_err();
        match err {
            NumericsError::ToleranceNotMet {
                estimate, error_bound, ..
            } => {
                assert!(estimate.is_finite() && error_bound > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let s = QuadratureSpec {
            max_subdivisions: 0,
            ..spec()
        };
        assert!(matches!(
            integrate_finite(|x| x, 0.0, 1.0, &s),
            Err(NumericsError::InvalidSpec(_))
        ));
        let s = QuadratureSpec::with_tolerances(0.0, 1e-12);
        assert!(integrate_finite(|x| x, 0.0, 1.0, &s).is_err());
    }

    #[test]
    fn semi_infinite_examples() {
        let i =
            integrate_semi_infinite(|y: f64| (2.0 * y).exp() * y, 0.0, Direction::NegInfinity, 2.0, &spec()).unwrap();
        assert_abs_diff_eq!(i.value, -0.25, epsilon = 1e-11);
        let i = integrate_semi_infinite(|y: f64| y.exp(), 0.0, Direction::NegInfinity, 1.0, &spec()).unwrap();
        assert_abs_diff_eq!(i.value, 1.0, epsilon = 1e-11);
        let b = 2.4503_f64;
        let i = integrate_semi_infinite(
            |z: f64| z * (-b * z * z / 2.0 + z).exp(),
            0.0,
            Direction::PosInfinity,
            1.0,
            &spec(),
        )
        .unwrap();
        assert_abs_diff_eq!(i.value, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn semi_infinite_rejects_bad_decay() {
        for rate in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                integrate_semi_infinite(|y: f64| y.exp(), 0.0, Direction::NegInfinity, rate, &spec()),
                Err(NumericsError::InvalidDecay(_))
            ));
        }
    }

    #[test]
    fn normal_basics() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert_abs_diff_eq!(norm_pdf(0.0), 0.398_942_280_401_432_7, epsilon = 1e-15);
        for x in [-3.0, -0.7, 0.2, 1.9, 6.0] {
            assert_abs_diff_eq!(norm_cdf(-x), 1.0 - norm_cdf(x), epsilon = 1e-15);
        }
    }

    #[test]
    fn root_examples() {
        let r = find_root(|x| x - 1.0, RootBracket::new(|x| x - 1.0, 0.0, 2.0).unwrap(), 1e-12).unwrap();
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-12);
        let g = |a: f64| a.powi(3) * norm_cdf(a) - (1.0 - a * a) * norm_pdf(a);
        let r = find_root(g, RootBracket::new(g, 0.1, 2.0).unwrap(), 1e-12).unwrap();
        assert_abs_diff_eq!(r, 0.638833, epsilon = 1e-6);
    }

    #[test]
    fn bad_bracket() {
        assert!(matches!(
            RootBracket::new(|x| x * x + 1.0, -1.0, 1.0),
            Err(NumericsError::InvalidBracket { .. })
        ));
        assert!(RootBracket::new(|x| x, 1.0, -1.0).is_err());
        // An exact zero at an end is a valid bracket.
        let b = RootBracket::new(|x| x, 0.0, 1.0).unwrap();
        assert_eq!(find_root(|x| x, b, 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn gamma_values() {
        assert_abs_diff_eq!(gamma(1.0), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(gamma(2.0), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(gamma(4.0), 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gamma(1.5), PI.sqrt() / 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(gamma(0.5), PI.sqrt(), epsilon = 1e-13);
    }
}
