//! Pass/fail checks behind the `verify` subcommand.

use std::io::Write;

use fredstop::constants;
use fredstop::fredholm;
use fredstop::problem::Problem;

use crate::args::{Options, ProblemLabel};
use crate::commands::{self, OracleRun, SolveRun};
use crate::output::{fmt, OutDir};
use crate::CliError;

/// Transform parameters of the closed-form residual check.
pub const STADJE_CVALUES: [f64; 3] = [1.0, 2.0, 4.0];
pub const STADJE_RESIDUAL_TOL: f64 = 1e-5;
/// Deliberately wrong boundary coefficient and the residual it must produce.
pub const STADJE_WRONG_ALPHA: f64 = 0.9;
pub const STADJE_WRONG_MIN: f64 = 1e-2;
pub const STADJE_SIGN_OFFSET: f64 = 0.01;
/// Quadrature and closed form are independent routes to the same integral.
pub const STADJE_ROUTE_TOL: f64 = 1e-7;
pub const ALPHA_IDENTITY_TOL: f64 = 1e-4;
/// Sup gap between solved and oracle `d`, in oracle time steps.
pub const GAP_TIME_STEPS: f64 = 3.0;
pub const B_INF_TOL: f64 = 0.02;
pub const FIT_TOL_LINEAR: f64 = 0.25;
pub const FIT_TOL_PUT: f64 = 0.35;
/// Oracle boundary one step before expiry, in units of `√Δt`.
pub const ROOT_TOL_SQRT_DT: f64 = 2.0;
pub const FRAME_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub tolerance: f64,
}

impl Check {
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: Relation::AtMost,
            tolerance,
        }
    }

    pub fn at_least(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: Relation::AtLeast,
            tolerance,
        }
    }

    /// NaN never passes.
    pub fn pass(&self) -> bool {
        match self.relation {
            Relation::AtMost => self.value <= self.tolerance,
            Relation::AtLeast => self.value >= self.tolerance,
        }
    }
}

pub fn stadje_checks() -> Result<Vec<Check>, CliError> {
    let alpha = constants::stadje_alpha();
    let mut checks = Vec::new();

    let integral = fredholm::verify_closed_form(alpha, &STADJE_CVALUES)?;
    checks.push(Check::at_most(
        "closed_form.max_residual",
        integral,
        STADJE_RESIDUAL_TOL,
    ));

    let mut route_gap: f64 = 0.0;
    for a in [alpha, STADJE_WRONG_ALPHA] {
        for &c in &STADJE_CVALUES {
            let q = fredholm::stadje_double_integral(a, c)?;
            route_gap = route_gap.max((q - fredholm::stadje_closed_form(a, c)).abs());
        }
    }
    checks.push(Check::at_most(
        "closed_form.quadrature_gap",
        route_gap,
        STADJE_ROUTE_TOL,
    ));

    let wrong = STADJE_CVALUES
        .iter()
        .map(|&c| fredholm::stadje_closed_form(STADJE_WRONG_ALPHA, c).abs())
        .fold(f64::INFINITY, f64::min);
    checks.push(Check::at_least("closed_form.wrong_alpha_min", wrong, STADJE_WRONG_MIN));

    // Largest product of the residuals on either side of α₁; negative iff
    // the sign changes for every c.
    let product = STADJE_CVALUES
        .iter()
        .map(|&c| {
            fredholm::stadje_closed_form(alpha - STADJE_SIGN_OFFSET, c)
                * fredholm::stadje_closed_form(alpha + STADJE_SIGN_OFFSET, c)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::at_most("closed_form.sign_change_product", product, 0.0));

    let b1 = constants::solve_b(1.0, 1.0).map_err(|e| CliError::Solver(e.into()))?;
    checks.push(Check::at_most(
        "alpha_identity",
        (alpha - 1.0 / b1.b.sqrt()).abs(),
        ALPHA_IDENTITY_TOL,
    ));
    Ok(checks)
}

/// Largest `|d - d_oracle|` over interior nodes the oracle resolves.
pub fn sup_gap(solved: &[f64], oracle: &OracleRun) -> f64 {
    let od = oracle.d.grid.values();
    let n = solved.len();
    (1..n - 1)
        .filter(|&i| !oracle.d.truncated[i])
        .map(|i| (solved[i] - od[i]).abs())
        .fold(0.0, f64::max)
}

pub fn comparison_checks(p: &Problem, solve: &SolveRun, oracle: &OracleRun, fit_tol: f64) -> Vec<Check> {
    let dt = oracle.boundary.dt;
    let mut checks = vec![Check::at_most(
        "solver.not_converged",
        if solve.report.converged { 0.0 } else { 1.0 },
        0.0,
    )];
    checks.push(Check::at_most(
        "oracle.b_tmin_gap",
        (oracle.boundary.positions[0] - p.b_inf).abs(),
        B_INF_TOL,
    ));
    checks.push(Check::at_most(
        "solve_vs_oracle.sup_gap",
        sup_gap(solve.report.grid.values(), oracle),
        GAP_TIME_STEPS * dt,
    ));
    checks.push(Check::at_most(
        "asymptotic.relative_error",
        solve.fit.map_or(f64::NAN, |f| f.relative_error()),
        fit_tol,
    ));
    checks
}

/// Canonical root at the origin maps to `log(r/q)`; the oracle boundary
/// one step before expiry must sit within `O(√Δt)` of it.
pub fn root_checks(p: &Problem, oracle: &OracleRun, theta: f64) -> Vec<Check> {
    let b = &oracle.boundary;
    let dt = b.dt;
    vec![
        Check::at_most(
            "root.frame_shift",
            (p.to_original(0.0) - (1.0 / theta).ln()).abs(),
            FRAME_TOL,
        ),
        Check::at_most("root.oracle_last_step", b.at(-dt).abs(), ROOT_TOL_SQRT_DT * dt.sqrt()),
    ]
}

pub fn run_checks(opts: &Options) -> Result<Vec<Check>, CliError> {
    let p = commands::load_problem(opts)?;
    let label = if opts.problem_file.is_some() {
        None
    } else {
        Some(opts.problem)
    };
    if label == Some(ProblemLabel::Stadje) {
        return stadje_checks();
    }
    let solve = commands::solve_pipeline(&p, opts)?;
    let oracle = commands::oracle_pipeline(&p, opts)?;
    let fit_tol = if label == Some(ProblemLabel::Linear) {
        FIT_TOL_LINEAR
    } else {
        FIT_TOL_PUT
    };
    let mut checks = comparison_checks(&p, &solve, &oracle, fit_tol);
    if label == Some(ProblemLabel::AmericanPut) {
        checks.extend(root_checks(&p, &oracle, opts.theta));
    }
    Ok(checks)
}

pub fn cmd_verify(opts: &Options, out: &mut dyn Write) -> Result<(), CliError> {
    let checks = run_checks(opts)?;
    let io = |e| CliError::Io {
        path: "<stdout>".into(),
        source: e,
    };
    writeln!(
        out,
        "{:<34} {:>14} {:>4} {:>12}  result",
        "check", "value", "", "tolerance"
    )
    .map_err(io)?;
    let mut rows = Vec::new();
    for c in &checks {
        let rel = match c.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        };
        let verdict = if c.pass() { "PASS" } else { "FAIL" };
        writeln!(
            out,
            "{:<34} {:>14.6e} {:>4} {:>12.4e}  {verdict}",
            c.name, c.value, rel, c.tolerance
        )
        .map_err(io)?;
        rows.push(vec![
            c.name.clone(),
            fmt(c.value),
            rel.to_string(),
            fmt(c.tolerance),
            verdict.to_string(),
        ]);
    }
    let p = commands::load_problem(opts)?;
    let mut dir = OutDir::create(&opts.out_dir)?;
    dir.csv(
        "verify.csv",
        &["check", "value", "relation", "tolerance", "result"],
        &rows,
    )?;
    dir.text(
        "manifest.txt",
        &crate::output::manifest("verify", opts, &commands::fixed_tolerances(&p, opts)),
    )?;
    let failed = checks.iter().filter(|c| !c.pass()).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::VerificationFailed {
            failed,
            total: checks.len(),
        })
    }
}
