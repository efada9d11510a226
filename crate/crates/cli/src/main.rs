mod commands;
mod model;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use model::{CliError, CliResult, Loaded};

#[derive(Parser, Debug)]
#[command(name = "oqs", version, about = "Second-order open quantum system analyses from a JSON model file")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Model file (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Tolerance override for the command's primary check (integration rtol for `simulate`).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Seed for randomized commands; recorded in the output.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Propagate the TCL2 master equation; CSV output.
    Simulate(Common),
    /// Perturbative Liouvillian spectrum and damping basis.
    Spectrum(Common),
    /// Pauli rate matrix, stationary state and detailed balance.
    Pauli(Common),
    /// Second-order coefficient tables and bath checks.
    Coefficients(Common),
    /// Complete-positivity audit.
    CpAudit(Common),
    /// Nonlocal (Laplace-domain) poles and asymptotic state.
    Nonlocal(Common),
    /// Two-time correlations with the non-Markovian correction.
    Qrt(Common),
    /// Convergence order of TCL2 against exact finite-environment dynamics.
    OracleCompare(Common),
    /// Always refused; see the message.
    Compose {
        #[arg(long)]
        model: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("OQS_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("OQS_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::Validation("OQS_THREADS must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Writes beside the target and renames, so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Validation(format!("{}: not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        CliError::Io(format!("{}: {e}", path.display()))
    })
}

fn emit(out: Option<&Path>, bytes: Vec<u8>) -> CliResult<()> {
    match out {
        Some(p) => write_atomic(p, &bytes),
        None => {
            use std::io::Write;
            let mut so = std::io::stdout().lock();
            so.write_all(&bytes)
                .and_then(|_| so.flush())
                .map_err(|e| CliError::Io(format!("stdout: {e}")))
        }
    }
}

const COMPOSE_REFUSAL: &str = "refusing to compose Liouvillians: adding second-order generators that were \
derived separately for each environment misses the cross terms between the couplings and gives the wrong \
dynamics; put every coupling into one model file and run that single microscopic model instead";

type Handler = fn(&Loaded, &Common) -> CliResult<Vec<u8>>;

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let (common, f): (Common, Handler) = match cli.command {
        Command::Simulate(c) => (c, commands::simulate),
        Command::Spectrum(c) => (c, commands::spectrum),
        Command::Pauli(c) => (c, commands::pauli),
        Command::Coefficients(c) => (c, commands::coefficients),
        Command::CpAudit(c) => (c, commands::cp_audit),
        Command::Nonlocal(c) => (c, commands::nonlocal),
        Command::Qrt(c) => (c, commands::qrt),
        Command::OracleCompare(c) => (c, commands::oracle_compare),
        Command::Compose { .. } => return Err(CliError::Validation(COMPOSE_REFUSAL.into())),
    };
    let loaded = Loaded::read(&common.model)?;
    let bytes = f(&loaded, &common)?;
    emit(common.out.as_deref(), bytes)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Numerical { kind, message } => {
                    let diag = serde_json::json!({
                        "error": "numerical_failure",
                        "kind": kind,
                        "message": message,
                    });
                    eprintln!("{diag}");
                }
                other => eprintln!("oqs: {other}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
