//! Runs a scenario file and prints the event log.
//!
//! cargo run --example run_scenario -- scenarios/scenario_conflict.json

use std::path::PathBuf;

use ni_stratum::api::scenario::{run_scenario, RunOptions};

fn main() -> anyhow::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "scenarios/scenario_conflict.json".into());
    let out = std::env::temp_dir().join("nist-example-run");
    let run = run_scenario(&PathBuf::from(&path), &out, &RunOptions::default())?;
    print!("{}", run.log_text());
    println!("violations: {}", run.summary.violations.len());
    println!("written to {}", out.display());
    Ok(())
}
