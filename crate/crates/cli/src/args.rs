use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Parser)]
#[command(
    name = "fredstop",
    version,
    about = "Stopping boundaries of finite-horizon Brownian stopping problems",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Constants,
    Solve,
    Bounds,
    Verify,
    Oracle,
    Residuals,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Universal small-time constants B_β and α_β.
    Constants(Options),
    /// Bound iteration, asymptotic seed and penalized minimization.
    Solve(Options),
    /// Certified lower/upper envelope only.
    Bounds(Options),
    /// Closed-form and oracle checks with a pass/fail table.
    Verify(Options),
    /// Backward-induction reference boundary.
    Oracle(Options),
    /// Residuals and penalties of a boundary on the c-grid.
    Residuals(Options),
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::Constants(_) => CommandKind::Constants,
            Command::Solve(_) => CommandKind::Solve,
            Command::Bounds(_) => CommandKind::Bounds,
            Command::Verify(_) => CommandKind::Verify,
            Command::Oracle(_) => CommandKind::Oracle,
            Command::Residuals(_) => CommandKind::Residuals,
        }
    }

    pub fn options(&self) -> &Options {
        match self {
            Command::Constants(o)
            | Command::Solve(o)
            | Command::Bounds(o)
            | Command::Verify(o)
            | Command::Oracle(o)
            | Command::Residuals(o) => o,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind() {
            CommandKind::Constants => "constants",
            CommandKind::Solve => "solve",
            CommandKind::Bounds => "bounds",
            CommandKind::Verify => "verify",
            CommandKind::Oracle => "oracle",
            CommandKind::Residuals => "residuals",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProblemLabel {
    Linear,
    Stadje,
    #[value(alias = "american_put")]
    AmericanPut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SeedChoice {
    Asymptotic,
    Midpoint,
}

/// Options shared by every subcommand; each uses the subset it needs.
/// A `--config` file supplies defaults in `key = value` form with the long
/// flag names as keys; flags on the command line take precedence.
#[derive(Debug, Clone, Args)]
pub struct Options {
    /// Flat key=value file with defaults for any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "linear")]
    pub problem: ProblemLabel,
    /// Problem-definition file; overrides --problem.
    #[arg(long)]
    pub problem_file: Option<PathBuf>,
    #[arg(long, default_value = "fredstop-out")]
    pub out_dir: PathBuf,
    /// Spatial nodes N on [0, b_inf].
    #[arg(long, default_value_t = 60)]
    pub nodes: usize,
    /// Number M of transform parameters c_l = √(2r) + l·c_step.
    #[arg(long, default_value_t = 40)]
    pub cvals: usize,
    #[arg(long, default_value_t = 0.1)]
    pub c_step: f64,
    /// Envelope iterations before solving (bounds: iterations to report).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Coordinate tolerance of the solver.
    #[arg(long, default_value_t = 1e-7)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 500)]
    pub max_sweeps: usize,
    #[arg(long, value_enum, default_value = "asymptotic")]
    pub seed_mode: SeedChoice,
    /// Nodes used by the asymptotic least-squares fit.
    #[arg(long, default_value_t = 5)]
    pub fit_nodes: usize,
    #[arg(long, default_value_t = -10.0, allow_negative_numbers = true)]
    pub t_min: f64,
    #[arg(long, default_value_t = 2000)]
    pub t_steps: usize,
    #[arg(long, default_value_t = 2000)]
    pub x_steps: usize,
    /// Extrapolate the oracle boundary from t_steps and 4·t_steps.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub richardson: bool,
    /// Monte Carlo paths for the oracle value spot-check (0 disables).
    #[arg(long, default_value_t = 0)]
    pub mc_paths: usize,
    #[arg(long, default_value_t = 20240601)]
    pub seed: u64,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub m_ratio: f64,
    /// American put: r/σ².
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// American put: q/r.
    #[arg(long, default_value_t = 2.0)]
    pub theta: f64,
    /// CSV with columns y,d to evaluate (residuals subcommand).
    #[arg(long)]
    pub boundary: Option<PathBuf>,
}

impl Options {
    /// `key = value` lines that reproduce these options through `--config`.
    pub fn manifest_lines(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put(
            "problem",
            self.problem
                .to_possible_value()
                .map(|v| v.get_name().to_string())
                .unwrap_or_default(),
        );
        if let Some(f) = &self.problem_file {
            put("problem-file", f.display().to_string());
        }
        put("out-dir", self.out_dir.display().to_string());
        put("nodes", self.nodes.to_string());
        put("cvals", self.cvals.to_string());
        put("c-step", self.c_step.to_string());
        if let Some(k) = self.iterations {
            put("iterations", k.to_string());
        }
        put("tolerance", self.tolerance.to_string());
        put("max-sweeps", self.max_sweeps.to_string());
        put(
            "seed-mode",
            self.seed_mode
                .to_possible_value()
                .map(|v| v.get_name().to_string())
                .unwrap_or_default(),
        );
        put("fit-nodes", self.fit_nodes.to_string());
        put("t-min", self.t_min.to_string());
        put("t-steps", self.t_steps.to_string());
        put("x-steps", self.x_steps.to_string());
        put("richardson", self.richardson.to_string());
        put("mc-paths", self.mc_paths.to_string());
        put("seed", self.seed.to_string());
        if let Some(t) = self.threads {
            put("threads", t.to_string());
        }
        if let Some(b) = self.beta {
            put("beta", b.to_string());
        }
        put("m-ratio", self.m_ratio.to_string());
        put("rho", self.rho.to_string());
        put("theta", self.theta.to_string());
        if let Some(b) = &self.boundary {
            put("boundary", b.display().to_string());
        }
        out
    }
}
