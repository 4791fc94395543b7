//! `radonlab`: configuration-driven experiment runner.

mod config;
mod experiments;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use radonlab_core::circle_method::{parse_rational, proven_region, reciprocal_exponent, EpsProvenance};
use radonlab_core::kernels::CZKernel;
use radonlab_core::poly_map::{fixture, fixtures};
use serde_json::json;

use crate::config::{canonical_json, params_hash, Diagnostic};

const EXIT_RUNTIME: u8 = 1;
const EXIT_INVALID: u8 = 2;
const THREADS_ENV: &str = "RADONLAB_THREADS";

fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Parser)]
#[command(name = "radonlab", version, about = "Discrete Radon transform multiplier and sparse-bound experiments")]
struct Cli {
    /// Cap on worker threads; RADONLAB_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output prefix; overrides the config's `output`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// List built-in polynomial maps and kernels.
    Fixtures,
    /// Evaluate the proven exponent region at one point.
    Region {
        #[arg(long)]
        map: String,
        #[arg(long = "eps-prime")]
        eps_prime: String,
        #[arg(long)]
        r: String,
        #[arg(long)]
        s: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads(cli.threads) {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_INVALID);
    }
    match cli.command {
        Command::Run { config, output } => run(&config, output),
        Command::Fixtures => {
            print_fixtures();
            ExitCode::SUCCESS
        }
        Command::Region { map, eps_prime, r, s } => region(&map, &eps_prime, &r, &s),
    }
}

fn configure_threads(flag: Option<usize>) -> Result<(), String> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| format!("{THREADS_ENV}={v} is not a thread count"))?),
        Err(_) => flag,
    };
    match threads {
        Some(0) => Err("thread count must be positive".into()),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string()),
        None => Ok(()),
    }
}

fn print_fixtures() {
    println!("maps:");
    for (name, p) in fixtures() {
        println!("  {name:<18} {p}");
    }
    println!("kernels:");
    for k in CZKernel::registry() {
        println!("  {k}");
    }
}

fn region(map: &str, eps: &str, r: &str, s: &str) -> ExitCode {
    let verdict = (|| {
        let p = fixture(map)?;
        proven_region(&p, &parse_rational(eps)?, &reciprocal_exponent(r)?, &reciprocal_exponent(s)?, EpsProvenance::Supplied)
    })();
    match verdict {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("verdict serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn invalid(path: &Path, diags: &[Diagnostic]) -> ExitCode {
    for d in diags {
        eprintln!("error: {}", d.render(path));
    }
    ExitCode::from(EXIT_INVALID)
}

fn run(path: &Path, output: Option<PathBuf>) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let cfg = match config::parse(&text) {
        Ok(c) => c,
        Err(d) => return invalid(path, &d),
    };
    let res = match config::validate(cfg, &text) {
        Ok(r) => r,
        Err(d) => return invalid(path, &d),
    };
    let prefix = output.or_else(|| res.config.output.clone()).unwrap_or_else(|| path.with_extension(""));
    let hash = params_hash(&res.config);
    let outcome = match experiments::run(&res) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let summary = json!({
        "version": version(),
        "kind": res.config.kind.to_string(),
        "params_hash": hash,
        "params": serde_json::from_str::<serde_json::Value>(&canonical_json(&res.config)).expect("canonical JSON parses"),
        "rows": outcome.rows.len(),
        "partial": outcome.partial,
        "warnings": outcome.warnings,
        "result": outcome.summary,
    });
    match write_outputs(&prefix, &outcome, &res.config.regime, &hash, &summary) {
        Ok((csv, js)) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            if outcome.partial {
                eprintln!("warning: partial results; some rows exceeded a budget");
            }
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            eprintln!("wrote {} and {}", csv.display(), js.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: writing outputs under {}: {e}", prefix.display());
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_outputs(
    prefix: &Path,
    outcome: &experiments::Outcome,
    regime: &str,
    hash: &str,
    summary: &serde_json::Value,
) -> Result<(PathBuf, PathBuf), Box<dyn std::error::Error>> {
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let csv_path = with_suffix(prefix, ".csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut header: Vec<&str> = outcome.header.clone();
    header.extend(["regime", "params_hash"]);
    w.write_record(&header)?;
    for row in &outcome.rows {
        w.write_record(row.iter().map(String::as_str).chain([regime, hash]))?;
    }
    w.flush()?;
    let json_path = with_suffix(prefix, ".summary.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(summary)? + "\n")?;
    Ok((csv_path, json_path))
}
