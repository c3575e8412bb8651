use std::path::Path;
use std::process::ExitCode;

use duality_cli::{run, Subcommand, WORKERS_ENV};

const USAGE: &str = "usage: duality <primal|dual1|dual2|search|hjb-check|bench|diagnose-degeneracy> <config.toml>";

fn configure_workers() -> Result<(), String> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{WORKERS_ENV} must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [sub, path] = args.as_slice() else {
        eprintln!("{USAGE}");
        return ExitCode::from(1);
    };
    let sub: Subcommand = match sub.parse() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}\n{USAGE}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = configure_workers() {
        eprintln!("{e}");
        return ExitCode::from(1);
    }

    let outcome = run(sub, Path::new(path));
    let report = &outcome.report;
    if let Some(err) = &report.error {
        eprintln!("error [{}]: {}", err.code, err.message);
    }
    for e in &report.estimates {
        println!(
            "{:>8?} {:>14.8} ± {:.2e}  ({})",
            e.kind, e.value, e.std_error, e.subject
        );
    }
    for g in report.gaps.iter().filter(|g| g.failed) {
        eprintln!(
            "weak duality violated: {:?} {} above {:?} {} (se {:.2e}, allowance {:.2e})",
            g.primal.kind, g.primal.value, g.dual.kind, g.dual.value, g.combined_std_error, g.allowance
        );
    }
    println!(
        "report: {}",
        outcome.output_dir.join(duality_cli::REPORT_FILE).display()
    );
    ExitCode::from(outcome.exit_code as u8)
}
