use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use layeredit::harness::{self, RunOptions, ToleranceClass};
use layeredit::scenario::Overrides;
use serde_json::json;

#[derive(Parser)]
#[command(name = "layeredit", version, about = "Run layered editing scenarios and manage golden outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run(RunArgs),
    /// Run scenarios and store their outputs as golden cases.
    CaptureGoldens(CaptureArgs),
    /// Replay every golden case and print a pass/fail table.
    VerifyGoldens(VerifyArgs),
}

#[derive(Args)]
struct KnobArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Number of sampler steps.
    #[arg(long)]
    steps: Option<usize>,
    /// IoU threshold for conflict regions.
    #[arg(long)]
    eta: Option<f64>,
    /// Sharpness of the removal-rate curve.
    #[arg(long)]
    k: Option<f64>,
    /// Query removal threshold, as a sampler step.
    #[arg(long)]
    tq: Option<usize>,
    /// Key removal threshold, as a sampler step.
    #[arg(long)]
    tk: Option<usize>,
}

impl KnobArgs {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, steps: self.steps, eta: self.eta, k: self.k, t_query: self.tq, t_key: self.tk }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write PGM previews next to the binary dumps.
    #[arg(long)]
    viz: bool,
    /// Write the transparency maps after every step.
    #[arg(long)]
    history: bool,
    #[command(flatten)]
    knobs: KnobArgs,
}

#[derive(Args)]
struct CaptureArgs {
    /// Scenario files to capture; repeat for several.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    #[arg(long)]
    goldens: PathBuf,
    /// bit-exact, 1e-9 or 1e-3.
    #[arg(long, default_value = "bit-exact")]
    tolerance: ToleranceClass,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    goldens: PathBuf,
}

fn fail(stage: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({ "error": { "stage": stage, "message": message, "fields": [] } }));
    ExitCode::from(2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(args) => {
            let options = RunOptions { overrides: args.knobs.overrides(), viz: args.viz, history: args.history };
            match harness::run(&args.config, &args.out, &options) {
                Ok(summary) => {
                    let m = &summary.manifest;
                    println!(
                        "{}",
                        json!({
                            "out": args.out,
                            "seed": m.seed,
                            "steps": m.steps_run,
                            "files": m.files.len() + 1,
                            "seconds": m.timings.total,
                        })
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{}", e.to_json());
                    ExitCode::from(2)
                }
            }
        }
        Command::CaptureGoldens(args) => match harness::capture_goldens(&args.config, &args.goldens, args.tolerance) {
            Ok(index) => {
                for case in &index.cases {
                    println!("captured {} ({} files, {})", case.name, case.files.len(), case.tolerance.name());
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail("capture", e.to_string()),
        },
        Command::VerifyGoldens(args) => match harness::verify_goldens(&args.goldens) {
            Ok(report) => {
                print!("{}", report.table());
                if report.passed() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                }
            }
            Err(e) => fail("verify", e.to_string()),
        },
    }
}
