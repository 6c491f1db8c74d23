mod args;
mod commands;
mod report;

use clap::Parser;
use serde_json::{json, Value};

use args::{Cli, Command, PencilMode, QuadricMode};
use commands::Failure;
use report::{Inputs, Report, Status};

fn command_name(c: &Command) -> String {
    match c {
        Command::Check { .. } => "check".into(),
        Command::Nijenhuis { .. } => "nijenhuis".into(),
        Command::Classify { .. } => "classify".into(),
        Command::Bryant { .. } => "bryant".into(),
        Command::Frame4 { .. } => "frame4".into(),
        Command::Web { .. } => "web".into(),
        Command::Pencil { mode: PencilMode::Generate { .. } } => "pencil generate".into(),
        Command::Pencil { mode: PencilMode::Verify { .. } } => "pencil verify".into(),
        Command::Quadric { mode } => format!(
            "quadric {}",
            match mode {
                QuadricMode::Fit { .. } => "fit",
                QuadricMode::Nondegeneracy { .. } => "nondegeneracy",
                QuadricMode::InvariantPlanes { .. } => "invariant-planes",
                QuadricMode::Certificate { .. } => "certificate",
            }
        ),
        Command::Jetcount { .. } => "jetcount".into(),
        Command::Scan { .. } => "scan".into(),
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("NIJ_TOOLKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("NIJ_TOOLKIT_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    let mut inputs = Inputs::default();
    let tolerances = cli.global.tolerances();
    let config = json!({
        "seed": cli.global.seed,
        "samples": cli.global.samples,
        "tolerances": tolerances.as_ref().ok(),
    });
    let outcome = tolerances
        .map_err(Failure::Usage)
        .and_then(|tol| commands::run(&cli.command, &cli.global, &tol, &mut inputs));
    let report = match outcome {
        Ok(o) => Report {
            command: command_name(&cli.command),
            config,
            status: if o.passed { Status::Ok } else { Status::VerdictFailure },
            result: o.result,
            error: None,
        },
        Err(f) => {
            eprintln!("error: {}", f.message());
            Report {
                command: command_name(&cli.command),
                config,
                status: if f.is_input_error() { Status::Error } else { Status::VerdictFailure },
                result: Value::Null,
                error: Some((f.code().to_string(), f.message())),
            }
        }
    };
    if let Err(e) = report.emit(&inputs, cli.global.out.as_deref()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    std::process::exit(report.status.exit_code());
}
