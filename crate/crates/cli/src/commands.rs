//! Subcommand pipelines. Each `*_pipeline` computes without writing files,
//! and each `cmd_*` writes its outputs and the run manifest.

use std::io::Write;
use std::path::Path;

use fredstop::bounds::{self, BoundaryEnvelope, EnvelopeConfig};
use fredstop::constants::{self, AsymptoticConstant};
use fredstop::fredholm::{self, BoundaryGrid, CGrid, ResidualVector};
use fredstop::oracle::{self, DpConfig, ExtractedBoundary, McEstimate, TimeBoundary};
use fredstop::problem::{self, Builtin, Problem, PutParams};
use fredstop::solver::{self, AsymptoticFit, SeedMode, SolveReport, SolverConfig};

use crate::args::{Command, CommandKind, Options, ProblemLabel, SeedChoice};
use crate::output::{self, fmt, FixedTolerances, OutDir};
use crate::verify;
use crate::CliError;

/// β values tabulated by `constants` when no `--beta` is given.
pub const TABLE_BETAS: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 3.0];
pub const SOLVE_DEFAULT_ITERATIONS: usize = 2;
pub const BOUNDS_DEFAULT_ITERATIONS: usize = 3;

pub fn dispatch(cmd: &Command, out: &mut dyn Write) -> Result<(), CliError> {
    let opts = cmd.options();
    let work = |out: &mut dyn Write| match cmd.kind() {
        CommandKind::Constants => cmd_constants(opts, out),
        CommandKind::Solve => cmd_solve(opts, out),
        CommandKind::Bounds => cmd_bounds(opts, out),
        CommandKind::Verify => verify::cmd_verify(opts, out),
        CommandKind::Oracle => cmd_oracle(opts, out),
        CommandKind::Residuals => cmd_residuals(opts, out),
    };
    match opts.threads {
        None => work(out),
        Some(0) => Err(CliError::Usage("--threads must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?;
            let mut buf: Vec<u8> = Vec::new();
            let result = pool.install(|| work(&mut buf));
            out.write_all(&buf).map_err(io_err)?;
            result
        }
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Io {
        path: "<stdout>".into(),
        source: e,
    }
}

pub fn load_problem(opts: &Options) -> Result<Problem, CliError> {
    if let Some(path) = &opts.problem_file {
        return Ok(problem::load_problem_file(path)?);
    }
    let label = match opts.problem {
        ProblemLabel::Linear => Builtin::Linear,
        ProblemLabel::Stadje => Builtin::Stadje,
        ProblemLabel::AmericanPut => Builtin::AmericanPut(PutParams {
            rho: opts.rho,
            theta: opts.theta,
        }),
    };
    Ok(problem::builtin(label)?)
}

pub fn c_grid(p: &Problem, opts: &Options) -> Result<CGrid, CliError> {
    if opts.cvals == 0 {
        return Err(CliError::Usage("--cvals must be at least 1".into()));
    }
    if !(opts.c_step > 0.0) {
        return Err(CliError::Usage("--c-step must be positive".into()));
    }
    Ok(CGrid::arithmetic(p.r, opts.cvals, opts.c_step)?)
}

/// Uniform nodes on `[0, b_inf]`; the Fredholm grid needs a finite `b_inf`.
pub fn node_grid(p: &Problem, opts: &Options) -> Result<Vec<f64>, CliError> {
    if opts.nodes < 2 {
        return Err(CliError::Usage("--nodes must be at least 2".into()));
    }
    if !p.b_inf.is_finite() {
        return Err(CliError::Usage(format!(
            "problem '{}' has unbounded b_inf; the node grid needs a finite one",
            p.label
        )));
    }
    Ok(fredholm::uniform_nodes(p.b_inf, opts.nodes))
}

pub fn solver_config(opts: &Options) -> SolverConfig {
    SolverConfig {
        max_iterations: opts.max_sweeps,
        coordinate_tolerance: opts.tolerance,
        seed_mode: match opts.seed_mode {
            SeedChoice::Asymptotic => SeedMode::Asymptotic,
            SeedChoice::Midpoint => SeedMode::EnvelopeMidpoint,
        },
        ..SolverConfig::default()
    }
}

pub fn fixed_tolerances(p: &Problem, opts: &Options) -> FixedTolerances {
    let env = EnvelopeConfig::for_problem(p);
    let sc = solver_config(opts);
    FixedTolerances {
        entries: vec![
            ("solver.value_tolerance", sc.value_tolerance),
            ("solver.coordinate_tolerance", sc.coordinate_tolerance),
            ("solver.scan_points", sc.scan_points as f64),
            ("bounds.bisection_tolerance", env.bisection_tolerance),
            ("bounds.t_max", env.t_max),
            ("bounds.extension_factor", env.extension_factor),
            ("bounds.extension_count", env.extension_count as f64),
            ("constants.root_tolerance", constants::ROOT_TOLERANCE),
        ],
    }
}

fn write_manifest(dir: &mut OutDir, name: &str, p: &Problem, opts: &Options) -> Result<(), CliError> {
    dir.text(
        "manifest.txt",
        &output::manifest(name, opts, &fixed_tolerances(p, opts)),
    )
}

// ---------------------------------------------------------------- constants

pub fn constants_table(opts: &Options) -> Result<Vec<(AsymptoticConstant, f64)>, CliError> {
    let betas: Vec<f64> = match opts.beta {
        Some(b) => vec![b],
        None => TABLE_BETAS.to_vec(),
    };
    betas
        .into_iter()
        .map(|b| {
            if !(b >= 0.0) {
                return Err(CliError::Usage(format!("--beta must be non-negative, got {b}")));
            }
            let k = constants::solve_b(b, opts.m_ratio).map_err(|e| match e {
                constants::ConstantsError::InvalidBeta(_) | constants::ConstantsError::InvalidRatio(_) => {
                    CliError::Usage(e.to_string())
                }
                other => CliError::Solver(other.into()),
            })?;
            let res = k.identity_residual().map_err(|e| CliError::Solver(e.into()))?;
            Ok((k, res))
        })
        .collect()
}

pub fn cmd_constants(opts: &Options, out: &mut dyn Write) -> Result<(), CliError> {
    let table = constants_table(opts)?;
    writeln!(
        out,
        "{:>8} {:>8} {:>14} {:>14} {:>12}",
        "beta", "m_ratio", "B", "alpha", "residual"
    )
    .map_err(io_err)?;
    let mut rows = Vec::new();
    for (k, res) in &table {
        writeln!(
            out,
            "{:>8} {:>8} {:>14.10} {:>14.10} {:>12.3e}",
            k.beta, k.m_ratio, k.b, k.alpha, res
        )
        .map_err(io_err)?;
        rows.push(vec![fmt(k.beta), fmt(k.m_ratio), fmt(k.b), fmt(k.alpha), fmt(*res)]);
    }
    let mut dir = OutDir::create(&opts.out_dir)?;
    dir.csv("constants.csv", &["beta", "m_ratio", "b", "alpha", "residual"], &rows)?;
    dir.text(
        "manifest.txt",
        &output::manifest(
            "constants",
            opts,
            &FixedTolerances {
                entries: vec![("constants.root_tolerance", constants::ROOT_TOLERANCE)],
            },
        ),
    )?;
    Ok(())
}

// -------------------------------------------------------------------- bounds

pub fn bounds_pipeline(p: &Problem, opts: &Options, default_k: usize) -> Result<Vec<BoundaryEnvelope>, CliError> {
    let nodes = node_grid(p, opts)?;
    let cgrid = c_grid(p, opts)?;
    let k = opts.iterations.unwrap_or(default_k);
    Ok(bounds::iterate(p, &nodes, &cgrid, k, &EnvelopeConfig::for_problem(p))?)
}

pub fn cmd_bounds(opts: &Options, out: &mut dyn Write) -> Result<(), CliError> {
    let p = load_problem(opts)?;
    let history = bounds_pipeline(&p, opts, BOUNDS_DEFAULT_ITERATIONS)?;
    let mut rows = Vec::new();
    for env in &history {
        let widths = env.widths();
        let max_w = widths[1..widths.len() - 1].iter().copied().fold(0.0, f64::max);
        writeln!(out, "iteration {}: max interior width {:.6}", env.iteration, max_w).map_err(io_err)?;
        for ((y, lo), up) in env.lower.nodes().iter().zip(env.lower.values()).zip(env.upper.values()) {
            rows.push(vec![fmt(*y), fmt(*lo), fmt(*up), env.iteration.to_string()]);
        }
    }
    let mut dir = OutDir::create(&opts.out_dir)?;
    dir.csv("envelope.csv", &["y", "d_lower", "d_upper", "iteration"], &rows)?;
    write_manifest(&mut dir, "bounds", &p, opts)
}

// --------------------------------------------------------------------- solve

pub struct SolveRun {
    pub envelope: BoundaryEnvelope,
    pub report: SolveReport,
    /// `None` when too few positive nodes exist for the fit.
    pub fit: Option<AsymptoticFit>,
}

pub fn solve_pipeline(p: &Problem, opts: &Options) -> Result<SolveRun, CliError> {
    let cgrid = c_grid(p, opts)?;
    let cfg = solver_config(opts);
    cfg.validate()?;
    let history = bounds_pipeline(p, opts, SOLVE_DEFAULT_ITERATIONS)?;
    let envelope = history.into_iter().last().expect("iteration 0 always present");
    let report = solver::solve(p, &cgrid, &envelope, &cfg)?;
    let fit = match solver::asymptotic_check(&report.grid, p, opts.fit_nodes) {
        Ok(f) => Some(f),
        Err(solver::SolverError::InsufficientData(_)) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(SolveRun { envelope, report, fit })
}

fn residual_rows(rv: &ResidualVector) -> Vec<Vec<String>> {
    rv.cvalues
        .iter()
        .zip(&rv.residuals)
        .zip(&rv.penalties)
        .map(|((c, r), f)| vec![fmt(*c), fmt(*r), fmt(*f)])
        .collect()
}

pub fn cmd_solve(opts: &Options, out: &mut dyn Write) -> Result<(), CliError> {
    let p = load_problem(opts)?;
    let run = solve_pipeline(&p, opts)?;
    let rep = &run.report;
    let b_ref = constants::solve_b(p.beta, p.m_ratio)
        .map_err(|e| CliError::Solver(e.into()))?
        .b;
    let nodes = rep.grid.nodes();
    let d = rep.grid.values();
    let lo = run.envelope.lower.values();
    let up = run.envelope.upper.values();

    let mut dir = OutDir::create(&opts.out_dir)?;
    let rows: Vec<Vec<String>> = (0..nodes.len())
        .map(|i| {
            vec![
                fmt(nodes[i]),
                fmt(p.to_original(nodes[i])),
                fmt(d[i]),
                fmt(lo[i]),
                fmt(up[i]),
            ]
        })
        .collect();
    dir.csv("boundary.csv", &["y", "x_original", "d", "d_lower", "d_upper"], &rows)?;
    let trace: Vec<Vec<String>> = rep
        .trace
        .iter()
        .enumerate()
        .map(|(k, v)| vec![k.to_string(), fmt(*v)])
        .collect();
    dir.csv("trace.csv", &["sweep", "objective"], &trace)?;
    dir.csv(
        "residuals.csv",
        &["c", "residual", "penalty"],
        &residual_rows(&rep.residuals),
    )?;
    let mut dat = String::from("# y d d_lower d_upper reference\n");
    for i in 0..nodes.len() {
        let y = nodes[i];
        dat.push_str(&format!(
            "{} {} {} {} {}\n",
            fmt(y),
            fmt(d[i]),
            fmt(lo[i]),
            fmt(up[i]),
            fmt(-b_ref * y * y)
        ));
    }
    dir.text("plot.dat", &dat)?;
    dir.text("plot.gp", &output::gnuplot_script(&p.label, b_ref))?;
    write_manifest(&mut dir, "solve", &p, opts)?;

    writeln!(
        out,
        "{}: N = {}, M = {}, envelope iteration {}, objective {} after {} sweeps ({})",
        p.label,
        nodes.len(),
        rep.residuals.cvalues.len(),
        run.envelope.iteration,
        fmt(rep.residuals.objective),
        rep.iterations,
        if rep.converged { "converged" } else { "not converged" }
    )
    .map_err(io_err)?;
    match &run.fit {
        Some(f) => writeln!(
            out,
            "asymptotic check: fitted B = {:.6} over {} nodes, theoretical B = {:.6}, relative error {:.4}",
            f.fitted_b,
            f.nodes_used,
            f.theoretical_b,
            f.relative_error()
        ),
        None => writeln!(out, "asymptotic check: too few positive nodes"),
    }
    .map_err(io_err)?;
    writeln!(out, "wrote {}", opts.out_dir.display()).map_err(io_err)?;
    if rep.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged { sweeps: rep.iterations })
    }
}

// -------------------------------------------------------------------- oracle

pub struct OracleRun {
    pub config: DpConfig,
    pub boundary: TimeBoundary,
    pub d: ExtractedBoundary,
    pub mc: Option<McEstimate>,
}

pub fn dp_config(p: &Problem, opts: &Options) -> DpConfig {
    DpConfig::for_problem(p, opts.t_min, opts.t_steps, opts.x_steps)
}

pub fn oracle_pipeline(p: &Problem, opts: &Options) -> Result<OracleRun, CliError> {
    let pp = p.payoff().ok_or_else(|| {
        CliError::Usage(format!(
            "problem '{}' has no payoff; add payoff_expr to the problem file",
            p.label
        ))
    })?;
    let config = dp_config(p, opts);
    config.validate()?;
    let boundary = if opts.richardson {
        oracle::richardson_boundary(&pp, &config)?
    } else {
        oracle::backward_induction(&pp, &config)?.boundary
    };
    let extent = if p.b_inf.is_finite() {
        p.b_inf
    } else {
        boundary.positions.iter().copied().fold(0.0, f64::max)
    };
    let nodes = fredholm::uniform_nodes(extent, opts.nodes.max(2));
    let d = oracle::extract_d(&boundary, &nodes, (config.x_lo, config.x_hi))?;
    let mc = if opts.mc_paths > 0 {
        Some(oracle::mc_value(
            &pp,
            opts.t_min,
            0.0,
            &boundary,
            opts.mc_paths,
            opts.t_steps,
            opts.seed,
        )?)
    } else {
        None
    };
    Ok(OracleRun {
        config,
        boundary,
        d,
        mc,
    })
}

pub fn cmd_oracle(opts: &Options, out: &mut dyn Write) -> Result<(), CliError> {
    let p = load_problem(opts)?;
    let run = oracle_pipeline(&p, opts)?;
    let b = &run.boundary;
    let mut dir = OutDir::create(&opts.out_dir)?;
    let rows: Vec<Vec<String>> = b
        .times
        .iter()
        .zip(&b.positions)
        .map(|(t, x)| vec![fmt(*t), fmt(*x), fmt(p.to_original(*x))])
        .collect();
    dir.csv("oracle_boundary.csv", &["t", "b", "x_original"], &rows)?;
    let g = &run.d.grid;
    let rows: Vec<Vec<String>> = (0..g.len())
        .map(|i| vec![fmt(g.nodes()[i]), fmt(g.values()[i]), run.d.truncated[i].to_string()])
        .collect();
    dir.csv("oracle_d.csv", &["y", "d", "truncated"], &rows)?;
    if let Some(mc) = &run.mc {
        dir.csv(
            "mc.csv",
            &["estimate", "stderr", "paths", "seed"],
            &[vec![
                fmt(mc.estimate),
                fmt(mc.std_error),
                mc.paths.to_string(),
                mc.seed.to_string(),
            ]],
        )?;
    }
    write_manifest(&mut dir, "oracle", &p, opts)?;
    writeln!(
        out,
        "{}: b({}) = {:.6} (original x = {:.6}), dt = {}, {}",
        p.label,
        fmt(b.times[0]),
        b.positions[0],
        p.to_original(b.positions[0]),
        fmt(b.dt),
        if opts.richardson { "Richardson" } else { "raw grid" }
    )
    .map_err(io_err)?;
    if let Some(mc) = &run.mc {
        writeln!(
            out,
            "Monte Carlo value at (t_min, 0): {:.6} ± {:.6}",
            mc.estimate, mc.std_error
        )
        .map_err(io_err)?;
    }
    Ok(())
}

// ----------------------------------------------------------------- residuals

/// Reads columns `y` and `d` from a CSV with a header row.
pub fn read_boundary_csv(path: &Path) -> Result<BoundaryGrid, CliError> {
    let csv_err = |message: String| CliError::Csv {
        path: path.display().to_string(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| csv_err(format!("missing column '{name}'")))
    };
    let (iy, id) = (col("y")?, col("d")?);
    let (mut nodes, mut values) = (Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(e.to_string()))?;
        let num = |i: usize| {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| csv_err(format!("row {}: bad number", line + 2)))
        };
        nodes.push(num(iy)?);
        values.push(num(id)?);
    }
    Ok(BoundaryGrid::new(nodes, values)?)
}

pub fn cmd_residuals(opts: &Options, out: &mut dyn Write) -> Result<(), CliError> {
    let p = load_problem(opts)?;
    let path = opts
        .boundary
        .as_ref()
        .ok_or_else(|| CliError::Usage("residuals needs --boundary <csv with columns y,d>".into()))?;
    let grid = read_boundary_csv(path)?;
    let cgrid = c_grid(&p, opts)?;
    let rv = fredholm::objective(&p, &grid, &cgrid)?;
    let mut dir = OutDir::create(&opts.out_dir)?;
    dir.csv("residuals.csv", &["c", "residual", "penalty"], &residual_rows(&rv))?;
    write_manifest(&mut dir, "residuals", &p, opts)?;
    writeln!(
        out,
        "objective {} over {} c-values, max |residual| {}",
        fmt(rv.objective),
        rv.cvalues.len(),
        fmt(rv.max_abs_residual())
    )
    .map_err(io_err)?;
    Ok(())
}
