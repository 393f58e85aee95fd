//! One-dimensional one-sided discounted stopping problems.
//!
//! A [`Problem`] lives in the *normalized frame*: the driving process is a
//! standard Brownian motion, the initial continuation set is `C₀ = (-∞, 0)`,
//! and the continuation set is `{(t, y) : y < b(t)}` with `b(t) → b_inf` as
//! `t → -∞`. Payoffs are discounted to the common epoch 0, i.e. stopping at
//! `τ ≤ 0` pays `exp(-r·τ)·h(W_τ)`.
//!
//! `h̃ = r·h - h''/2` is stored directly, optionally with point masses
//! ([`Atom`]) for payoffs with kinks.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::numerics::{self, find_root, Direction, NumericsError, QuadratureSpec, RootBracket};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown builtin problem '{0}' (expected linear, stadje or american_put)")]
    UnknownLabel(String),
    #[error("american_put needs q > r (theta = q/r > 1) for a smooth boundary root, got theta = {0}")]
    UnsupportedRegime(f64),
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("problem file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("problem file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing key '{0}' in problem definition")]
    MissingKey(&'static str),
    #[error("bad expression '{expr}': {message}")]
    Expression { expr: String, message: String },
    #[error("sign convention violated: h̃({y}) = {value}")]
    SignConvention { y: f64, value: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, ProblemError>;

/// Point mass of `h̃` at `location` with signed `weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

/// How normalized coordinates map back to the original state variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// `x = shift + y`
    Direct,
    /// `x = shift - y`
    Mirrored,
}

#[derive(Clone)]
pub enum Laplace {
    Analytic(ScalarFn),
    Numeric,
}

/// A stopping problem `sup E[exp(-r τ) h(X_τ)]` for `X` a Brownian motion
/// with constant `drift`, expressed through its payoff.
#[derive(Clone)]
pub struct PayoffProblem {
    pub label: String,
    pub r: f64,
    pub drift: f64,
    pub payoff: ScalarFn,
}

/// Same representation; `drift` is the `μ` to be removed.
pub type DriftedProblem = PayoffProblem;

impl PayoffProblem {
    pub fn new(label: impl Into<String>, r: f64, payoff: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            r,
            drift: 0.0,
            payoff: Arc::new(payoff),
        }
    }

    pub fn with_drift(mut self, mu: f64) -> Self {
        self.drift = mu;
        self
    }

    pub fn payoff(&self, x: f64) -> f64 {
        (self.payoff)(x)
    }
}

impl fmt::Debug for PayoffProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PayoffProblem")
            .field("label", &self.label)
            .field("r", &self.r)
            .field("drift", &self.drift)
            .finish_non_exhaustive()
    }
}

/// Girsanov transform to a driftless problem: payoff `exp(μ y)·h(y)` and
/// discount `r + μ²/2`. Values relate by
/// `V(t, x) = exp(-μ x + μ² t / 2)·V'(t, x)`, so stopping sets coincide.
pub fn remove_drift(p: &DriftedProblem) -> PayoffProblem {
    let mu = p.drift;
    if mu == 0.0 {
        return p.clone();
    }
    let h = p.payoff.clone();
    PayoffProblem {
        label: p.label.clone(),
        r: p.r + 0.5 * mu * mu,
        drift: 0.0,
        payoff: Arc::new(move |y| (mu * y).exp() * h(y)),
    }
}

/// Parameters of the canonical American put: `ρ = r/σ²`, `θ = q/r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PutParams {
    pub rho: f64,
    pub theta: f64,
}

impl PutParams {
    /// Drift `ρ - θρ - 1/2` of the log-price in the canonical time scale.
    pub fn drift(&self) -> f64 {
        self.rho - self.theta * self.rho - 0.5
    }

    /// `log(r/q)`, the root of `h̃` at the terminal time.
    pub fn shift(&self) -> f64 {
        -self.theta.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Builtin {
    Linear,
    Stadje,
    AmericanPut(PutParams),
}

impl Builtin {
    pub fn parse(label: &str, put: Option<PutParams>) -> Result<Self> {
        match label {
            "linear" => Ok(Self::Linear),
            "stadje" => Ok(Self::Stadje),
            "american_put" => Ok(Self::AmericanPut(put.unwrap_or(PutParams { rho: 1.0, theta: 2.0 }))),
            other => Err(ProblemError::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Clone)]
pub struct Problem {
    pub label: String,
    pub r: f64,
    h_tilde: ScalarFn,
    laplace: Laplace,
    pub atoms: Vec<Atom>,
    /// Points where `h̃` may jump; quadrature splits there.
    pub breakpoints: Vec<f64>,
    pub b_inf: f64,
    pub beta: f64,
    pub m_ratio: f64,
    pub shift: f64,
    pub orientation: Orientation,
    payoff: Option<ScalarFn>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("label", &self.label)
            .field("r", &self.r)
            .field("b_inf", &self.b_inf)
            .field("beta", &self.beta)
            .field("m_ratio", &self.m_ratio)
            .field("shift", &self.shift)
            .field("orientation", &self.orientation)
            .field("atoms", &self.atoms)
            .finish_non_exhaustive()
    }
}

fn laplace_spec() -> QuadratureSpec {
    QuadratureSpec {
        max_subdivisions: 2000,
        ..QuadratureSpec::with_tolerances(1e-12, 1e-14)
    }
}

impl Problem {
    pub fn new(
        label: impl Into<String>,
        r: f64,
        h_tilde: impl Fn(f64) -> f64 + Send + Sync + 'static,
        b_inf: f64,
    ) -> Self {
        Self {
            label: label.into(),
            r,
            h_tilde: Arc::new(h_tilde),
            laplace: Laplace::Numeric,
            atoms: Vec::new(),
            breakpoints: Vec::new(),
            b_inf,
            beta: 1.0,
            m_ratio: 1.0,
            shift: 0.0,
            orientation: Orientation::Direct,
            payoff: None,
        }
    }

    pub fn with_laplace(mut self, l: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.laplace = Laplace::Analytic(Arc::new(l));
        self
    }

    pub fn with_payoff(mut self, h: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.payoff = Some(Arc::new(h));
        self
    }

    pub fn with_atoms(mut self, atoms: Vec<Atom>) -> Self {
        for a in &atoms {
            if !self.breakpoints.contains(&a.location) {
                self.breakpoints.push(a.location);
            }
        }
        self.breakpoints.sort_by(f64::total_cmp);
        self.atoms = atoms;
        self
    }

    pub fn with_local(mut self, beta: f64, m_ratio: f64) -> Self {
        self.beta = beta;
        self.m_ratio = m_ratio;
        self
    }

    pub fn with_frame(mut self, shift: f64, orientation: Orientation) -> Self {
        self.shift = shift;
        self.orientation = orientation;
        self
    }

    pub fn h_tilde(&self, y: f64) -> f64 {
        (self.h_tilde)(y)
    }

    pub fn h_tilde_fn(&self) -> ScalarFn {
        self.h_tilde.clone()
    }

    /// Smallest admissible transform parameter, `√(2r)`.
    pub fn c_min(&self) -> f64 {
        (2.0 * self.r).sqrt()
    }

    /// `∫_{-∞}^0 e^{cy} h̃(y) dy` plus atoms in `(-∞, 0)`.
    pub fn laplace_h_tilde(&self, c: f64) -> Result<f64> {
        match &self.laplace {
            Laplace::Analytic(l) => Ok(l(c)),
            Laplace::Numeric => self.laplace_numeric(c),
        }
    }

    /// The Laplace transform by quadrature, ignoring any analytic form.
    pub fn laplace_numeric(&self, c: f64) -> Result<f64> {
        if !(c > 0.0) {
            return Err(ProblemError::InvalidParameter { name: "c", value: c });
        }
        let h = self.h_tilde.clone();
        let f = move |y: f64| (c * y).exp() * h(y);
        let spec = laplace_spec();
        let cuts: Vec<f64> = self.breakpoints.iter().copied().filter(|&b| b < 0.0).collect();
        let left = cuts.first().copied().unwrap_or(0.0);
        let mut total = numerics::integrate_semi_infinite(&f, left, Direction::NegInfinity, 0.5 * c, &spec)?.value;
        let mut pts = cuts.clone();
        pts.push(0.0);
        for w in pts.windows(2) {
            total += numerics::integrate_finite(&f, w[0], w[1], &spec)?.value;
        }
        total += self
            .atoms
            .iter()
            .filter(|a| a.location < 0.0)
            .map(|a| (c * a.location).exp() * a.weight)
            .sum::<f64>();
        Ok(total)
    }

    pub fn payoff(&self) -> Option<PayoffProblem> {
        self.payoff.as_ref().map(|h| PayoffProblem {
            label: self.label.clone(),
            r: self.r,
            drift: 0.0,
            payoff: h.clone(),
        })
    }

    pub fn to_original(&self, y: f64) -> f64 {
        match self.orientation {
            Orientation::Direct => self.shift + y,
            Orientation::Mirrored => self.shift - y,
        }
    }

    /// Copy with `h̃`, its transform and atoms multiplied by `k > 0`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        let h = self.h_tilde.clone();
        out.h_tilde = Arc::new(move |y| k * h(y));
        out.laplace = match &self.laplace {
            Laplace::Analytic(l) => {
                let l = l.clone();
                Laplace::Analytic(Arc::new(move |c| k * l(c)))
            }
            Laplace::Numeric => Laplace::Numeric,
        };
        out.atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                location: a.location,
                weight: k * a.weight,
            })
            .collect();
        if let Some(p) = &self.payoff {
            let p = p.clone();
            out.payoff = Some(Arc::new(move |y| k * p(y)));
        }
        out
    }

    /// Checks the sign convention on 64 points either side of the origin,
    /// within `neighborhood` (clipped to `b_inf`).
    pub fn check_sign_convention(&self, neighborhood: f64) -> Result<()> {
        let reach = neighborhood.min(self.b_inf);
        for k in 1..=64 {
            let y = reach * k as f64 / 65.0;
            let right = self.h_tilde(y);
            if right < 0.0 {
                return Err(ProblemError::SignConvention { y, value: right });
            }
            let left = self.h_tilde(-y);
            if left > 0.0 {
                return Err(ProblemError::SignConvention { y: -y, value: left });
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 0.0) || !self.r.is_finite() {
            return Err(ProblemError::InvalidParameter {
                name: "r",
                value: self.r,
            });
        }
        if !(self.b_inf > 0.0) {
            return Err(ProblemError::InvalidParameter {
                name: "b_inf",
                value: self.b_inf,
            });
        }
        if !(self.beta >= 0.0) {
            return Err(ProblemError::InvalidParameter {
                name: "beta",
                value: self.beta,
            });
        }
        if !(self.m_ratio > 0.0) {
            return Err(ProblemError::InvalidParameter {
                name: "m_ratio",
                value: self.m_ratio,
            });
        }
        self.check_sign_convention(self.b_inf.min(1.0))
    }
}

/// Declared local power and coefficient ratio of `h̃` at the origin.
pub fn h_tilde_local(p: &Problem) -> (f64, f64) {
    (p.beta, p.m_ratio)
}

/// Numerical estimate of `(β, m'/m)` from `h̃` near the origin, for checking
/// declared values: `β` from the log-ratio of `h̃(ε)` and `h̃(ε/2)`, the ratio
/// from `-h̃(-ε)/h̃(ε)`.
pub fn estimate_local_behavior(h: &dyn Fn(f64) -> f64, eps: f64) -> (f64, f64) {
    let beta = (h(eps) / h(0.5 * eps)).log2();
    let ratio = -h(-eps) / h(eps);
    (beta, ratio)
}

/// Boundary of the perpetual problem `sup E[e^{-rτ} h(W_τ)]` with
/// continuation to the left, from the smooth-fit condition
/// `√(2r)·h(b) = h'(b)` on `bracket`.
pub fn smooth_fit_boundary(
    h: &dyn Fn(f64) -> f64,
    dh: &dyn Fn(f64) -> f64,
    r: f64,
    bracket: (f64, f64),
) -> Result<f64> {
    let k = (2.0 * r).sqrt();
    let g = |b: f64| k * h(b) - dh(b);
    let br = RootBracket::new(g, bracket.0, bracket.1)?;
    Ok(find_root(g, br, 1e-13)?)
}

/// `h̃(y) = y` with `r` given; Example-style linear payoff `h(y) = y`.
pub fn linear(r: f64) -> Result<Problem> {
    if !(r > 0.0) {
        return Err(ProblemError::InvalidParameter { name: "r", value: r });
    }
    let b_inf = 1.0 / (2.0 * r).sqrt();
    let fitted = smooth_fit_boundary(&|y| y, &|_| 1.0, r, (1e-9, 1e3))?;
    debug_assert!((fitted - b_inf).abs() < 1e-10);
    Ok(Problem::new("linear", r, |y| y, b_inf)
        .with_laplace(|c| -1.0 / (c * c))
        .with_payoff(|y| y))
}

/// The `x³/3`, `r = 0` problem, mirrored so the continuation set lies to the
/// left: `h(y) = -y³/3`, `h̃(y) = y`. In original coordinates `x = -y` this is
/// `h(x) = x³/3` with `h̃(x) = -x`. `b_inf` is infinite.
pub fn stadje() -> Problem {
    Problem::new("stadje", 0.0, |y| y, f64::INFINITY)
        .with_laplace(|c| -1.0 / (c * c))
        .with_payoff(|y| -y * y * y / 3.0)
        .with_frame(0.0, Orientation::Mirrored)
}

/// Canonical American put with large dividend (`θ = q/r > 1`).
///
/// The log-price `X` has drift `μ = ρ - θρ - 1/2`; the terminal root of `h̃`
/// sits at `X₀ = log(r/q)`. With `y = X₀ - X` the exercise region is on the
/// right, and after removing the drift `-μ` of `y`:
///
/// * payoff `h(y) = e^{νy}(1 - e^{X₀-y})⁺`, `ν = -μ`, discount `ρ + μ²/2`;
/// * `h̃(y) = e^{νy}·ρ(1 - e^{-y})` for `y > X₀`, zero below, and an atom of
///   weight `-e^{νX₀}/2` at the strike `y = X₀`.
pub fn american_put(params: PutParams) -> Result<Problem> {
    let PutParams { rho, theta } = params;
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(ProblemError::InvalidParameter {
            name: "rho",
            value: rho,
        });
    }
    if !(theta > 1.0) || !theta.is_finite() {
        return Err(ProblemError::UnsupportedRegime(theta));
    }
    let mu = params.drift();
    let x0 = params.shift();
    let nu = -mu;
    let drifted = PayoffProblem::new("american_put", rho, move |y: f64| (1.0 - (x0 - y).exp()).max(0.0)).with_drift(nu);
    let driftless = remove_drift(&drifted);
    let r = driftless.r;

    let h_tilde = move |y: f64| {
        if y > x0 {
            (nu * y).exp() * rho * (1.0 - (-y).exp())
        } else {
            0.0
        }
    };
    let laplace = move |c: f64| {
        let a = c + nu;
        rho * ((1.0 - (a * x0).exp()) / a - (1.0 - ((a - 1.0) * x0).exp()) / (a - 1.0)) - 0.5 * (a * x0).exp()
    };
    let h = driftless.payoff.clone();
    let dh = move |y: f64| {
        if y <= x0 {
            0.0
        } else {
            (nu * y).exp() * (nu * (1.0 - (x0 - y).exp()) + (x0 - y).exp())
        }
    };
    let b_inf = smooth_fit_boundary(&|y| h(y), &dh, r, (0.0, 20.0))?;
    let (beta, m_ratio) = one_sided_coefficients(&h_tilde);
    let payoff = driftless.payoff.clone();
    Ok(Problem::new("american_put", r, h_tilde, b_inf)
        .with_laplace(laplace)
        .with_atoms(vec![Atom {
            location: x0,
            weight: -0.5 * (nu * x0).exp(),
        }])
        .with_payoff(move |y| payoff(y))
        .with_local(beta, m_ratio)
        .with_frame(x0, Orientation::Mirrored))
}

/// `(1, m'/m)` from Richardson-extrapolated one-sided difference quotients at
/// the origin of a function with a simple zero there.
fn one_sided_coefficients(h: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let slope = |s: f64| {
        let e = 1e-4;
        let d1 = h(s * e) / (s * e);
        let d2 = h(s * e / 2.0) / (s * e / 2.0);
        2.0 * d2 - d1
    };
    let m = slope(1.0);
    let m_left = slope(-1.0);
    (1.0, m_left / m)
}

pub fn builtin(label: Builtin) -> Result<Problem> {
    match label {
        Builtin::Linear => linear(1.0),
        Builtin::Stadje => Ok(stadje()),
        Builtin::AmericanPut(p) => american_put(p),
    }
}

type CachedExpr = (String, Box<dyn Fn(f64) -> f64>);

fn compile_expr(expr: &str) -> Result<ScalarFn> {
    let parsed: meval::Expr = expr.parse().map_err(|e: meval::Error| ProblemError::Expression {
        expr: expr.to_string(),
        message: e.to_string(),
    })?;
    let mut ctx = meval::Context::new();
    ctx.func("log", f64::ln);
    ctx.func2("pow", f64::powf);
    let f = parsed
        .bind_with_context(ctx, "y")
        .map_err(|e| ProblemError::Expression {
            expr: expr.to_string(),
            message: e.to_string(),
        })?;
    // meval closures are not Sync; evaluate through a per-thread rebuild.
    let src = expr.to_string();
    drop(f);
    Ok(Arc::new(move |y: f64| {
        thread_local! {
            static CACHE: std::cell::RefCell<Vec<CachedExpr>> = const { std::cell::RefCell::new(Vec::new()) };
        }
        CACHE.with(|cache| {
            let mut cache = cache.borrow_mut();
            if let Some((_, f)) = cache.iter().find(|(s, _)| *s == src) {
                return f(y);
            }
            let parsed: meval::Expr = src.parse().expect("validated at load");
            let mut ctx = meval::Context::new();
            ctx.func("log", f64::ln);
            ctx.func2("pow", f64::powf);
            let f = parsed.bind_with_context(ctx, "y").expect("validated at load");
            let v = f(y);
            cache.push((src.clone(), Box::new(f)));
            v
        })
    }))
}

fn parse_atoms(s: &str, line: usize) -> Result<Vec<Atom>> {
    s.split(';')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|pair| {
            let (loc, w) = pair.split_once(':').ok_or_else(|| ProblemError::Parse {
                line,
                message: format!("atom '{pair}' is not location:weight"),
            })?;
            let parse = |v: &str| {
                v.trim().parse::<f64>().map_err(|e| ProblemError::Parse {
                    line,
                    message: format!("atom value '{v}': {e}"),
                })
            };
            Ok(Atom {
                location: parse(loc)?,
                weight: parse(w)?,
            })
        })
        .collect()
}

/// Parses a flat `key=value` problem definition.
///
/// Required keys: `r`, `b_inf`, `htilde_expr`. Optional: `label`, `beta`,
/// `m_ratio`, `shift`, `atoms` (`loc:weight;loc:weight`), `payoff_expr`,
/// `orientation` (`direct`/`mirrored`). `#` starts a comment.
pub fn parse_problem_definition(text: &str) -> Result<Problem> {
    let mut kv: BTreeMap<String, (String, usize)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ProblemError::Parse {
            line: i + 1,
            message: format!("expected key=value, got '{line}'"),
        })?;
        kv.insert(k.trim().to_string(), (v.trim().to_string(), i + 1));
    }
    let num = |key: &'static str, default: Option<f64>| -> Result<f64> {
        match kv.get(key) {
            Some((v, line)) => v.parse::<f64>().map_err(|e| ProblemError::Parse {
                line: *line,
                message: format!("{key}: {e}"),
            }),
            None => default.ok_or(ProblemError::MissingKey(key)),
        }
    };
    let r = num("r", None)?;
    let b_inf = num("b_inf", None)?;
    let beta = num("beta", Some(1.0))?;
    let m_ratio = num("m_ratio", Some(1.0))?;
    let shift = num("shift", Some(0.0))?;
    let label = kv
        .get("label")
        .map(|(v, _)| v.clone())
        .unwrap_or_else(|| "custom".into());
    let (expr, _) = kv.get("htilde_expr").ok_or(ProblemError::MissingKey("htilde_expr"))?;
    let h_tilde = compile_expr(expr)?;
    let mut p = Problem::new(label, r, move |y| h_tilde(y), b_inf).with_local(beta, m_ratio);
    if let Some((atoms, line)) = kv.get("atoms") {
        p = p.with_atoms(parse_atoms(atoms, *line)?);
    }
    if let Some((expr, _)) = kv.get("payoff_expr") {
        let h = compile_expr(expr)?;
        p = p.with_payoff(move |y| h(y));
    }
    let orientation = match kv.get("orientation").map(|(v, l)| (v.as_str(), *l)) {
        None | Some(("direct", _)) => Orientation::Direct,
        Some(("mirrored", _)) => Orientation::Mirrored,
        Some((other, line)) => {
            return Err(ProblemError::Parse {
                line,
                message: format!("orientation must be direct or mirrored, got '{other}'"),
            })
        }
    };
    p = p.with_frame(shift, orientation);
    p.validate()?;
    Ok(p)
}

pub fn load_problem_file(path: &Path) -> Result<Problem> {
    let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_problem_definition(&text)
}
