//! `pqcrit`: thresholds, eigenvalues, audits and mountain-pass searches
//! from the command line.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pqcrit::config::KeyValueConfig;

use commands::Ctx;
use settings::{usage, CliResult, Run, Settings};

#[derive(Parser)]
#[command(name = "pqcrit", version, about = "Critical p- and (p,q)-Laplacian thresholds and solution searches")]
struct Cli {
    /// Key-value config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: runs/<time>-<checksum>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 is the deterministic sequential mode.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a Kuhn box mesh.
    Mesh(MeshArgs),
    /// Eigenvalues of the p-Laplacian on a mesh.
    Eigs(EigsArgs),
    /// Multiplicity thresholds from eigenvalues.
    Threshold(ThresholdArgs),
    /// Origin, geometry and Hölder audits.
    EnergyAudit(AuditArgs),
    /// One mountain-pass search.
    Solve(SolveArgs),
    /// Pair counts over a λ grid next to the predicted thresholds.
    Scan(ScanArgs),
}

#[derive(Args, Default)]
struct MeshArgs {
    #[arg(long)]
    dim: Option<usize>,
    /// Comma-separated, or one value for every axis.
    #[arg(long)]
    divisions: Option<String>,
    #[arg(long)]
    lengths: Option<String>,
}

#[derive(Args, Default)]
struct ProblemArgs {
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
}

#[derive(Args, Default)]
struct EigenArgs {
    /// EigenSequence JSON to reuse instead of solving.
    #[arg(long)]
    eigs: Option<PathBuf>,
    /// auto, linear, first or continuation.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Default)]
struct SolverArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    #[arg(long = "grad-tol")]
    grad_tol: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "energy-sep")]
    energy_sep: Option<f64>,
    #[arg(long = "max-rounds")]
    max_rounds: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args, Default)]
struct EigsArgs {
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Default)]
struct ThresholdArgs {
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    volume: Option<f64>,
    /// Mesh whose volume and dimension are used.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Comma-separated λ_1, λ_2, ...
    #[arg(long = "lambdas-m")]
    lambdas_m: Option<String>,
    #[arg(long)]
    eigs: Option<PathBuf>,
    #[arg(long = "m-max")]
    m_max: Option<usize>,
}

#[derive(Args, Default)]
struct AuditArgs {
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    radii: Option<String>,
    #[command(flatten)]
    eigen: EigenArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Default)]
struct SolveArgs {
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    lambda: Option<f64>,
    /// Eigenfunction index of the endpoint direction.
    #[arg(long)]
    direction: Option<usize>,
    /// Start from the negated endpoint.
    #[arg(long)]
    flip: bool,
    #[command(flatten)]
    eigen: EigenArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Default)]
struct ScanArgs {
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[command(flatten)]
    problem: ProblemArgs,
    /// Increasing comma-separated λ grid.
    #[arg(long)]
    lambdas: Option<String>,
    #[arg(long = "m-max")]
    m_max: Option<usize>,
    #[command(flatten)]
    eigen: EigenArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

struct Flags(KeyValueConfig);

impl Flags {
    fn put<T: ToString>(&mut self, key: &str, v: &Option<T>) {
        if let Some(v) = v {
            self.0.set(key, v.to_string()).expect("static keys are valid");
        }
    }

    fn path(&mut self, key: &str, v: &Option<PathBuf>) {
        self.put(key, &v.as_ref().map(|p| p.display().to_string()));
    }

    fn problem(&mut self, a: &ProblemArgs) {
        self.put("p", &a.p);
        self.put("q", &a.q);
        self.put("r", &a.r);
    }

    fn eigen(&mut self, a: &EigenArgs) {
        self.path("eigs", &a.eigs);
        self.put("method", &a.method);
        self.put("steps", &a.steps);
    }

    fn solver(&mut self, a: &SolverArgs) {
        self.put("seed", &a.seed);
        self.put("nodes", &a.nodes);
        self.put("max-iter", &a.max_iter);
        self.put("grad-tol", &a.grad_tol);
        self.put("delta", &a.delta);
        self.put("energy-sep", &a.energy_sep);
        self.put("max-rounds", &a.max_rounds);
        self.put("epsilon", &a.epsilon);
    }
}

fn flags_of(cmd: &Command) -> (&'static str, KeyValueConfig) {
    let mut f = Flags(KeyValueConfig::new());
    let name = match cmd {
        Command::Mesh(a) => {
            f.put("dim", &a.dim);
            f.put("divisions", &a.divisions);
            f.put("lengths", &a.lengths);
            "mesh"
        }
        Command::Eigs(a) => {
            f.path("mesh", &a.mesh);
            f.put("p", &a.p);
            f.put("m", &a.m);
            f.put("method", &a.method);
            f.put("steps", &a.steps);
            f.put("seed", &a.seed);
            "eigs"
        }
        Command::Threshold(a) => {
            f.put("n", &a.n);
            f.problem(&a.problem);
            f.put("volume", &a.volume);
            f.path("mesh", &a.mesh);
            f.put("lambdas-m", &a.lambdas_m);
            f.path("eigs", &a.eigs);
            f.put("m-max", &a.m_max);
            "threshold"
        }
        Command::EnergyAudit(a) => {
            f.path("mesh", &a.mesh);
            f.problem(&a.problem);
            f.put("lambda", &a.lambda);
            f.put("m", &a.m);
            f.put("radii", &a.radii);
            f.eigen(&a.eigen);
            f.solver(&a.solver);
            "energy-audit"
        }
        Command::Solve(a) => {
            f.path("mesh", &a.mesh);
            f.problem(&a.problem);
            f.put("lambda", &a.lambda);
            f.put("direction", &a.direction);
            if a.flip {
                f.put("flip", &Some(true));
            }
            f.eigen(&a.eigen);
            f.solver(&a.solver);
            "solve"
        }
        Command::Scan(a) => {
            f.path("mesh", &a.mesh);
            f.problem(&a.problem);
            f.put("lambdas", &a.lambdas);
            f.put("m-max", &a.m_max);
            f.eigen(&a.eigen);
            f.solver(&a.solver);
            "scan"
        }
    };
    (name, f.0)
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.threads == 0 {
        return Err(usage("--threads must be >= 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| usage(e.to_string()))?;
    let (name, flags) = flags_of(&cli.command);
    let settings = Settings::new(cli.config.as_deref(), flags)?;
    let mut ctx = Ctx {
        settings,
        run: Run::new(name, cli.out.clone()),
        threads: cli.threads,
    };
    let result = match &cli.command {
        Command::Mesh(_) => commands::mesh(&mut ctx),
        Command::Eigs(_) => commands::eigs(&mut ctx),
        Command::Threshold(_) => commands::threshold(&mut ctx),
        Command::EnergyAudit(_) => commands::energy_audit(&mut ctx),
        Command::Solve(_) => commands::solve(&mut ctx),
        Command::Scan(_) => commands::scan(&mut ctx),
    };
    match result {
        Ok(()) => {
            let seed = ctx.settings.get("seed", 0u64)?;
            let dir = ctx.run.finish(&ctx.settings, seed)?;
            println!("run directory {}", dir.display());
            Ok(())
        }
        Err(e @ settings::CliError::Solver(_)) => {
            let seed = ctx.settings.get("seed", 0u64)?;
            ctx.run.finish(&ctx.settings, seed)?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
