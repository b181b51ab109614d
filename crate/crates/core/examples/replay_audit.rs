//! Writes a trace, audits it, then audits a copy with one edited field.

use std::fs;

use asap::driver::{run, RunConfig};
use asap::environment::{make_aligned_suite, SuiteSpec};
use asap::trace::audit;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("asap-replay-{}", std::process::id()));
    fs::create_dir_all(&dir)?;
    let path = dir.join("ucb.csv");

    let (env, _) = make_aligned_suite(SuiteSpec { dim: 6, num_aux: 4, aligned_index: 0, alignment_cos: 0.9, seed: 2 })?;
    let mut cfg = RunConfig::synthetic(60, env);
    cfg.trace_path = Some(path.clone());
    run(&cfg)?;

    let report = audit(&path)?;
    println!("clean trace: {} turns, {} findings", report.turns, report.findings.len());

    let text = fs::read_to_string(&path)?;
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut fields: Vec<String> = lines[30].split(',').map(str::to_string).collect();
    fields[1] = ((fields[1].parse::<usize>()? + 1) % 4).to_string();
    lines[30] = fields.join(",");
    fs::write(&path, lines.join("\n") + "\n")?;

    let report = audit(&path)?;
    println!("edited trace: {} findings", report.findings.len());
    for f in report.findings.iter().take(4) {
        println!("  {f}");
    }
    fs::remove_dir_all(&dir)?;
    Ok(())
}
