use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use permsim::compliance::demonstrate_theorem_3_3;
use permsim::harness::attacks::{run_named_attack, ATTACKS};
use permsim::harness::exhaustive::{exhaustive_pos_bb, standard_configs};
use permsim::harness::{run_scenario, sweep, verify_trace, HarnessError, Scenario, Verdict};
use permsim::trace::Trace;

/// Sets the default number of worker threads.
const THREADS_VAR: &str = "PERMSIM_THREADS";

#[derive(Parser)]
#[command(name = "permsim", version, about = "Permitter-oracle consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a scenario and print the verdict.
    Run {
        scenario: PathBuf,
        /// Write the verdict here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a per-seed CSV summary.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a built-in attack experiment.
    Attack {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(ATTACKS))]
        name: String,
        #[arg(long, default_value_t = 1000)]
        seeds: u64,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the compliant k-run chain for a scenario's protocol.
    Chain {
        scenario: PathBuf,
        /// Largest decision slot searched for.
        #[arg(long, default_value_t = 8)]
        max_t: u64,
        /// Branch budget for each enumeration.
        #[arg(long, default_value_t = 1_000_000)]
        budget: usize,
    },
    /// Check a stored JSON-lines trace.
    Verify { trace: PathBuf },
    /// Run a scenario once per value of a field, given as a JSON pointer.
    Sweep {
        scenario: PathBuf,
        /// `/pointer/to/field=v1,v2,...`; values are JSON, or strings.
        #[arg(long)]
        param: String,
    },
    /// Enumerate every delay choice for the stake-weighted broadcast protocol.
    Exhaustive,
}

fn load(path: &Path) -> Result<Scenario, HarnessError> {
    Scenario::from_json(&fs::read_to_string(path)?)
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), HarnessError> {
    match out {
        Some(p) => fs::write(p, format!("{text}\n"))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn write_csv(verdict: &Verdict, path: &Path) -> Result<(), HarnessError> {
    let names: Vec<&String> = verdict.checks.keys().collect();
    let mut w = csv::Writer::from_path(path).map_err(std::io::Error::from)?;
    let mut header = vec!["seed".to_string(), "outputs".to_string()];
    header.extend(names.iter().map(|n| n.to_string()));
    let mut rows = vec![header];
    for s in &verdict.seeds {
        let outputs: Vec<String> = s.outputs.iter().map(|o| o.map_or("-".into(), |z| z.to_string())).collect();
        let mut row = vec![s.seed.to_string(), outputs.join(" ")];
        row.extend(names.iter().map(|n| match s.checks.get(*n) {
            Some(true) => "1".into(),
            Some(false) => "0".into(),
            None => String::new(),
        }));
        rows.push(row);
    }
    for row in rows {
        w.write_record(&row).map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_param(spec: &str) -> Result<(String, Vec<serde_json::Value>), HarnessError> {
    let (path, values) =
        spec.split_once('=').ok_or_else(|| HarnessError::Scenario(format!("expected path=values, got {spec:?}")))?;
    let values = values
        .split(',')
        .map(|v| serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string())))
        .collect();
    Ok((path.to_string(), values))
}

fn execute(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Run { scenario, out, csv: csv_path } => {
            let verdict = run_scenario(&load(&scenario)?)?;
            emit(&verdict.to_json(), out.as_deref())?;
            if let Some(p) = csv_path {
                write_csv(&verdict, &p)?;
            }
            Ok(verdict.passed)
        }
        Command::Attack { name, seeds, epsilon, out } => {
            let seeds: Vec<u64> = (0..seeds).collect();
            let verdict = run_named_attack(&name, &seeds, epsilon)?;
            emit(&verdict.to_json(), out.as_deref())?;
            Ok(verdict.passed)
        }
        Command::Chain { scenario, max_t, budget } => {
            let system = load(&scenario)?.krun_system()?;
            let report = demonstrate_theorem_3_3(&system, max_t, budget)?;
            emit(&serde_json::to_string_pretty(&report)?, None)?;
            Ok(report.propagation_holds && report.breach.is_some())
        }
        Command::Verify { trace } => {
            let file = fs::File::open(trace)?;
            let trace = Trace::read_jsonl(&mut BufReader::new(file))
                .map_err(|e| HarnessError::Scenario(format!("trace: {e}")))?;
            let report = verify_trace(&trace);
            emit(&serde_json::to_string_pretty(&report)?, None)?;
            Ok(report.passed)
        }
        Command::Sweep { scenario, param } => {
            let (path, values) = parse_param(&param)?;
            let verdicts = sweep(&load(&scenario)?, &path, &values)?;
            emit(&serde_json::to_string_pretty(&verdicts)?, None)?;
            Ok(verdicts.iter().all(|v| v.passed))
        }
        Command::Exhaustive => {
            let mut all = true;
            let mut reports = Vec::new();
            for c in standard_configs() {
                let r = exhaustive_pos_bb(&c)?;
                all &= r.passed();
                reports.push(r);
            }
            emit(&serde_json::to_string_pretty(&reports)?, None)?;
            Ok(all)
        }
    }
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var(THREADS_VAR).ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
