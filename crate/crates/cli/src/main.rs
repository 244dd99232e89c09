//! `bdlt`: simulate, analyse and design buffer-based distributed LT codes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bdlt::harness::{self, HarnessError};
use bdlt::optimizer::{self, Lp2Form, OptimizerError, UepSpec};
use bdlt::{DegreeDistribution, DistKind};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bdlt", version, about = "Buffer-based distributed LT codes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo erasure-rate curves for a network config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's trial count.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Density-evolution fixed points over the config's `epsilon_r` grid.
    De {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize the relay-degree distribution by linear programming.
    Optimize(OptimizeArgs),
    /// Degree-0 lower bound per class over the config's `epsilon_r` grid.
    Bound {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct OptimizeArgs {
    /// Check-degree distribution: a `degree:probability` file or `rsd:K,c,delta`.
    #[arg(long)]
    omega: String,
    /// Average decoder variable degree, or a sweep `start:stop:step`.
    #[arg(long)]
    mu: String,
    #[arg(long)]
    dmax: usize,
    /// Target erasure probability.
    #[arg(long)]
    eps: f64,
    /// Number of grid points.
    #[arg(long)]
    grid: usize,
    /// Optimize for unequal protection (needs `--q` and `--alpha`).
    #[arg(long, requires_all = ["q", "alpha"])]
    uep: bool,
    /// File with one selection probability per source.
    #[arg(long, requires = "uep")]
    q: Option<PathBuf>,
    /// File with one size fraction per source.
    #[arg(long, requires = "uep")]
    alpha: Option<PathBuf>,
    /// Use the printed form of the UEP program.
    #[arg(long, requires = "uep")]
    lp2_literal: bool,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit status with its message.
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

fn classify(e: HarnessError) -> Failure {
    match e {
        HarnessError::Config(_) | HarnessError::Source(_) | HarnessError::Relay(_) | HarnessError::Analysis(_) => {
            Failure::Config(e.to_string())
        }
        _ => Failure::Runtime(e.to_string()),
    }
}

fn load(path: &Path) -> Result<harness::ConfigFile, Failure> {
    harness::load_config(path).map_err(|e| Failure::Config(e.to_string()))
}

fn write_out(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>, trials: Option<usize>) -> Result<(), Failure> {
    let mut cfg = load(config)?.experiment;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    cfg.validate().map_err(classify)?;
    let result = harness::run_experiment(&cfg).map_err(classify)?;
    harness::emit_csv(&result, out).map_err(|e| Failure::Runtime(e.to_string()))?;
    for (j, fills) in result.delay.fill_rounds.iter().enumerate() {
        let max_fill = fills.iter().max().copied().unwrap_or(0);
        let stalls: u64 = result.delay.stalls[j].iter().sum();
        eprintln!(
            "relay {}: mean fill round {:.2}, max {max_fill}, stalls {stalls}",
            j + 1,
            result.delay.mean_fill_round(j)
        );
    }
    Ok(())
}

fn de(config: &Path, out: &Path) -> Result<(), Failure> {
    let file = load(config)?;
    let rows = harness::de_rows(&file).map_err(classify)?;
    let mut text = String::from("epsilon_r,scope,P_fixed,iterations,converged\n");
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            harness::format_float(r.epsilon_r),
            r.scope,
            harness::format_float(r.fixed_point),
            r.iterations,
            r.converged
        );
    }
    write_out(out, &text)
}

fn bound(config: &Path, out: &Path) -> Result<(), Failure> {
    let file = load(config)?;
    let rows = harness::bound_rows(&file).map_err(classify)?;
    let mut text = String::from("epsilon_r,scope,bound\n");
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{}",
            harness::format_float(r.epsilon_r),
            r.scope,
            harness::format_float(r.bound)
        );
    }
    write_out(out, &text)
}

/// Numbers separated by commas or whitespace; `#` starts a comment.
fn read_vector(path: &Path) -> Result<Vec<f64>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Failure::Config(format!("{}: {t:?}: {e}", path.display())))
        })
        .collect()
}

fn optimize(a: &OptimizeArgs) -> Result<(), Failure> {
    let spec = if a.omega.starts_with("rsd:") {
        a.omega.clone()
    } else {
        format!("file:{}", a.omega)
    };
    let omega: DegreeDistribution = harness::parse_dist(&spec, DistKind::Check, Path::new("."))
        .map_err(|e| Failure::Config(format!("omega: {e}")))?;
    let mus = harness::parse_grid(&a.mu).map_err(|e| Failure::Config(format!("mu: {e}")))?;
    let uep = match (a.uep, &a.q, &a.alpha) {
        (true, Some(q), Some(alpha)) => Some(UepSpec {
            q: read_vector(q)?,
            alpha: read_vector(alpha)?,
            form: if a.lp2_literal { Lp2Form::Literal } else { Lp2Form::DeConsistent },
        }),
        _ => None,
    };
    let sweep = mus.len() > 1;
    let mut text = String::new();
    let mut solved = 0;
    let mut last_err = None;
    for mu in mus {
        match optimizer::optimize_relay_distribution(&omega, mu, a.dmax, a.eps, a.grid, uep.as_ref()) {
            Ok(res) => {
                if sweep {
                    let _ = writeln!(text, "# mu = {mu}");
                }
                let _ = write!(text, "{}", res.gamma_node);
                let _ = writeln!(text, "# epsilon_r_star = {}", res.epsilon_r_star);
                solved += 1;
            }
            Err(e) if sweep => {
                let _ = writeln!(text, "# mu = {mu}: {e}");
                last_err = Some(e);
            }
            Err(e) => return Err(optimizer_failure(e)),
        }
        if sweep {
            text.push('\n');
        }
    }
    if solved == 0 {
        if let Some(e) = last_err {
            return Err(optimizer_failure(e));
        }
    }
    match &a.out {
        Some(path) => write_out(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn optimizer_failure(e: OptimizerError) -> Failure {
    match e {
        OptimizerError::InvalidGrid(_) | OptimizerError::InvalidInput(_) | OptimizerError::Dist(_) => {
            Failure::Config(e.to_string())
        }
        _ => Failure::Runtime(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            trials,
        } => simulate(config, out, *seed, *trials),
        Command::De { config, out } => de(config, out),
        Command::Optimize(a) => optimize(a),
        Command::Bound { config, out } => bound(config, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
