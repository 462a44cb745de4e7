use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use krflow::config::{parse_config, KEYS};
use krflow::experiment::{output_dir, run_experiment, EXIT_ERROR};
use krflow::report::write_report;
use krflow::sweep::sweep;

/// Reduced Kähler–Ricci flow experiments.
#[derive(Parser)]
#[command(name = "krflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment. Exit code: 0 converged, 2 diverged,
    /// 3 numerical failure, 4 inconclusive, 5 bad input or I/O error.
    Run {
        config: PathBuf,
        /// Output directory; takes precedence over KRFLOW_OUT and the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Checkpoint directory to resume from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run one experiment per value of a scalar parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent runs; defaults to the available parallelism.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Aggregate finished runs into report.json.
    Report {
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Also write SVG plots of F, ν, Osc and sup|h|.
        #[arg(long)]
        plots: bool,
    },
    /// List the configuration keys.
    Keys,
}

fn fail(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_ERROR as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_ERROR as u8) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Run { config, out, resume } => {
            let mut cfg = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            if resume.is_some() {
                cfg.resume = resume;
            }
            let dir = out.unwrap_or_else(|| output_dir(&cfg));
            match run_experiment(&cfg, &dir) {
                Ok(r) => {
                    let s = &r.summary;
                    println!(
                        "{}: {} (classification {}, sup|h| {:.3e}, Osc {:.4}) -> {}",
                        s.preset,
                        s.outcome,
                        s.classification,
                        s.final_snapshot.sup_h,
                        s.final_snapshot.osc,
                        dir.display()
                    );
                    ExitCode::from(s.exit_code as u8)
                }
                Err(e) => fail(e),
            }
        }
        Command::Sweep { config, axis, values, out, threads } => {
            let cfg = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let dir = out.unwrap_or_else(|| output_dir(&cfg));
            let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            match sweep(&cfg, &axis, &values, &dir, threads) {
                Ok(index) => {
                    for r in &index.runs {
                        let what = r.outcome.as_deref().or(r.error.as_deref()).unwrap_or("");
                        println!("{axis} = {}: exit {} {what}", r.value, r.exit_code);
                    }
                    for row in &index.order_table {
                        println!("order {}: {:?}", row.quantity, row.orders);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Report { dirs, out, plots } => match write_report(&dirs, &out, plots) {
            Ok(report) => {
                for w in &report.warnings {
                    eprintln!("warning: {w}");
                }
                for r in &report.runs {
                    println!("{}: {} {}", r.dir.display(), r.outcome, r.classification);
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Keys => {
            for (k, doc) in KEYS {
                println!("{k:24} {doc}");
            }
            ExitCode::SUCCESS
        }
    }
}
