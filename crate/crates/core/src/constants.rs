//! Universal small-time boundary constants.
//!
//! Near the terminal time the boundary behaves like `d(y) ≈ -B_β·y²`, where
//! `B_β` solves
//!
//! ```text
//! ∫₀^∞ z^β exp(-B z²/2 + z) dz = m_ratio · Γ(β + 1)
//! ```
//!
//! and `β` is the local power of `h̃` at the edge of the initial continuation
//! set. In space-over-time form the boundary is `b(t) ≈ α·√(-t)` with
//! `α = 1/√B`.

use thiserror::Error;

use crate::numerics::{
    self, find_root, gamma, norm_cdf, norm_pdf, Direction, NumericsError, QuadratureSpec, RootBracket,
};

pub const B_BRACKET: (f64, f64) = (1e-3, 1e3);
pub const ROOT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstantsError {
    #[error("beta must be finite and non-negative, got {0}")]
    InvalidBeta(f64),
    #[error("m_ratio must be finite and positive, got {0}")]
    InvalidRatio(f64),
    #[error("no root of the moment identity in B ∈ [{lo}, {hi}] (residuals {f_lo:e}, {f_hi:e})")]
    OutOfRange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticConstant {
    pub beta: f64,
    pub m_ratio: f64,
    pub b: f64,
    pub alpha: f64,
}

impl AsymptoticConstant {
    /// Residual of the defining identity at the stored `B`.
    pub fn identity_residual(&self) -> Result<f64, ConstantsError> {
        Ok(moment(self.beta, self.b)? - self.m_ratio * gamma(self.beta + 1.0))
    }
}

fn moment_spec() -> QuadratureSpec {
    QuadratureSpec {
        max_subdivisions: 2000,
        ..QuadratureSpec::with_tolerances(1e-12, 1e-14)
    }
}

/// `∫₀^∞ z^β exp(-B z²/2 + z) dz` by adaptive quadrature.
pub fn moment(beta: f64, b: f64) -> Result<f64, NumericsError> {
    let f = move |z: f64| z.powf(beta) * (-b * z * z / 2.0 + z).exp();
    // Beyond z = 4/B the exponent is below -z, so rate 1 bounds the tail there;
    // the cutoff policy extends past the peak on its own.
    let est = numerics::integrate_semi_infinite(f, 0.0, Direction::PosInfinity, 1.0, &moment_spec())?;
    Ok(est.value)
}

/// Analytic value of `∫₀^∞ z exp(-B z²/2 + z) dz`, by completing the square.
pub fn closed_form_moment(b: f64) -> f64 {
    let s = b.sqrt();
    1.0 / b + (2.0 * std::f64::consts::PI).sqrt() * (0.5 / b).exp() * norm_cdf(1.0 / s) / (b * s)
}

/// Solves the moment identity for `B_β`.
pub fn solve_b(beta: f64, m_ratio: f64) -> Result<AsymptoticConstant, ConstantsError> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(ConstantsError::InvalidBeta(beta));
    }
    if !(m_ratio > 0.0) || !m_ratio.is_finite() {
        return Err(ConstantsError::InvalidRatio(m_ratio));
    }
    let target = m_ratio * gamma(beta + 1.0);
    let residual = |b: f64| moment(beta, b).map(|m| m - target);
    let (lo, hi) = B_BRACKET;
    let (f_lo, f_hi) = (residual(lo)?, residual(hi)?);
    let bracket =
        RootBracket::from_values(lo, hi, f_lo, f_hi).map_err(|_| ConstantsError::OutOfRange { lo, hi, f_lo, f_hi })?;
    // The moment is smooth and strictly decreasing in B; quadrature failures
    // inside the bracket surface as NaN and are caught below.
    let b = find_root(|b| residual(b).unwrap_or(f64::NAN), bracket, ROOT_TOLERANCE)?;
    let constant = AsymptoticConstant {
        beta,
        m_ratio,
        b,
        alpha: 1.0 / b.sqrt(),
    };
    let res = constant.identity_residual()?;
    if !res.is_finite() {
        return Err(ConstantsError::OutOfRange { lo, hi, f_lo, f_hi });
    }
    Ok(constant)
}

/// Residual of `α³Φ(α) = (1 - α²)φ(α)`.
pub fn stadje_equation(alpha: f64) -> f64 {
    alpha.powi(3) * norm_cdf(alpha) - (1.0 - alpha * alpha) * norm_pdf(alpha)
}

/// Positive root of `α³Φ(α) = (1 - α²)φ(α)`, the boundary coefficient of the
/// `x³/3` problem.
pub fn stadje_alpha() -> f64 {
    let bracket = RootBracket::new(stadje_equation, 0.1, 2.0).expect("sign change on [0.1, 2]");
    find_root(stadje_equation, bracket, 1e-14).expect("valid bracket")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn b1_and_alpha() {
        let k = solve_b(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(k.b, 2.4503, epsilon = 1e-4);
        assert_abs_diff_eq!(k.alpha, 0.6388, epsilon = 1e-4);
        assert!(k.identity_residual().unwrap().abs() <= 1e-8);
    }

    #[test]
    fn table_is_decreasing_in_beta() {
        let bs: Vec<f64> = [0.0, 0.5, 1.0, 2.0, 3.0]
            .iter()
            .map(|&beta| solve_b(beta, 1.0).unwrap().b)
            .collect();
        assert!(bs.windows(2).all(|w| w[0] > w[1]), "{bs:?}");
        // β = 0 has the closed form √(2π/B)·e^{1/(2B)}·Φ(1/√B) = 1.
        let b0 = bs[0];
        let lhs = (2.0 * std::f64::consts::PI / b0).sqrt() * (0.5 / b0).exp() * norm_cdf(1.0 / b0.sqrt());
        assert_abs_diff_eq!(lhs, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn decreasing_in_ratio() {
        let bs: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|&m| solve_b(1.0, m).unwrap().b).collect();
        assert!(bs[0] > bs[1] && bs[1] > bs[2], "{bs:?}");
    }

    #[test]
    fn continuity_in_beta() {
        let b1 = solve_b(1.0, 1.0).unwrap().b;
        for beta in [1.0 - 1e-4, 1.0 + 1e-4] {
            assert!((solve_b(beta, 1.0).unwrap().b - b1).abs() <= 1e-2);
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(solve_b(-0.5, 1.0), Err(ConstantsError::InvalidBeta(_))));
        assert!(matches!(solve_b(1.0, 0.0), Err(ConstantsError::InvalidRatio(_))));
        // Ratio so large the root leaves the bracket.
        assert!(matches!(solve_b(1.0, 1e300), Err(ConstantsError::OutOfRange { .. })));
    }

    #[test]
    fn closed_form_matches_quadrature() {
        for b in [0.5, 1.0, 2.4503, 5.0] {
            let q = moment(1.0, b).unwrap();
            assert!((closed_form_moment(b) - q).abs() <= 1e-9 * q.max(1.0), "B = {b}");
        }
        assert!(closed_form_moment(1e6) < 2e-6);
    }

    #[test]
    fn stadje_root() {
        let a = stadje_alpha();
        assert_abs_diff_eq!(a, 0.638833, epsilon = 1e-6);
        assert!(stadje_equation(a).abs() <= 1e-10);
        let b1 = solve_b(1.0, 1.0).unwrap().b;
        assert_abs_diff_eq!(a, 1.0 / b1.sqrt(), epsilon = 1e-5);
    }
}
