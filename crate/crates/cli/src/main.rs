use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wbc_core::multibody::builtin_model_names;
use wbc_core::runner::{run, write_artifacts};
use wbc_core::scenario::builtin_scenario_names;
use wbc_core::{verify, Scenario};

const EXIT_ASSERTION: u8 = 1;
const EXIT_SCHEMA: u8 = 2;
const EXIT_FAULT: u8 = 3;

#[derive(Parser)]
#[command(name = "wbc", version, about = "Whole-body QP control scenarios and verification suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or built-in scenario and write trajectory.csv and metrics.json.
    Run {
        /// Scenario path (extension optional) or built-in name.
        scenario: String,
        /// Override a scenario value, e.g. `ext_force.fy=-30`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output root; artifacts go to `<out>/<scenario>/`.
        #[arg(long, env = "WBC_OUT_DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Run verification suites and print a JSON report.
    Verify {
        /// One of the suite names, or `all`.
        #[arg(default_value = "all")]
        suite: String,
    },
    /// List built-in models and scenarios, plus scenario files in an extra directory.
    List {
        #[arg(long, env = "WBC_SCENARIO_DIR")]
        scenario_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { scenario, set, out } => cmd_run(&scenario, &set, &out),
        Command::Verify { suite } => cmd_verify(&suite),
        Command::List { scenario_dir } => cmd_list(scenario_dir.as_deref()),
    }
}

fn cmd_run(path: &str, overrides: &[String], out_root: &Path) -> ExitCode {
    let scenario = match Scenario::load(path, overrides) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {path}: {e}");
            return ExitCode::from(EXIT_SCHEMA);
        }
    };
    let output = match run(&scenario) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("fault: {e}");
            return ExitCode::from(EXIT_FAULT);
        }
    };
    let dir = out_root.join(&scenario.file.name);
    if let Err(e) = write_artifacts(&output, &dir) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_FAULT);
    }
    let m = &output.metrics;
    println!("{}", m.to_json());
    eprintln!("wrote {}", dir.display());
    if let Some(fault) = &m.fault {
        eprintln!("fault: {fault}");
        return ExitCode::from(EXIT_FAULT);
    }
    for a in m.assertions.iter().filter(|a| !a.passed) {
        eprintln!("assertion failed: {} ({})", a.name, a.detail);
    }
    if m.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_ASSERTION)
    }
}

fn cmd_verify(suite: &str) -> ExitCode {
    let reports = if suite == "all" {
        verify::run_all()
    } else if verify::SUITES.contains(&suite) {
        verify::run_suite(suite).map(|r| vec![r])
    } else {
        eprintln!("error: unknown suite `{suite}`, expected `all` or one of {:?}", verify::SUITES);
        return ExitCode::from(EXIT_SCHEMA);
    };
    let reports = match reports {
        Ok(r) => r,
        Err(e) => {
            eprintln!("fault: {e}");
            return ExitCode::from(EXIT_FAULT);
        }
    };
    let passed = reports.iter().all(|r| r.passed);
    let json = serde_json::json!({ "passed": passed, "suites": reports });
    println!("{}", serde_json::to_string_pretty(&json).unwrap_or_default());
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_ASSERTION)
    }
}

fn cmd_list(extra: Option<&Path>) -> ExitCode {
    println!("models:");
    for m in builtin_model_names() {
        println!("  {m}");
    }
    println!("scenarios:");
    for s in builtin_scenario_names() {
        println!("  {s}");
    }
    let Some(dir) = extra else { return ExitCode::SUCCESS };
    let mut files: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect(),
        Err(e) => {
            eprintln!("error: {}: {e}", dir.display());
            return ExitCode::from(EXIT_SCHEMA);
        }
    };
    files.sort();
    for f in files {
        println!("  {}", f.display());
    }
    ExitCode::SUCCESS
}
