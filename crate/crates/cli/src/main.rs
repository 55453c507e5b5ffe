use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mfg_sinkhorn::config::RunConfig;
use mfg_sinkhorn::runner::{self, Overrides, EXIT_ERROR};
use mfg_sinkhorn::solver::{LogDomain, SweepOrder};

#[derive(Parser)]
#[command(name = "mfgsolve", version, about = "Multi-population entropic mean field game solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an experiment and write frames, potentials and logs.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output.out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long, value_enum)]
        sweep: Option<SweepArg>,
        #[arg(long, value_enum)]
        log_domain: Option<LogArg>,
        #[arg(long)]
        frame_stride: Option<usize>,
        /// Only print the final status line.
        #[arg(long)]
        quiet: bool,
    },
    /// Run the brute-force oracle suite on random tiny instances.
    VerifyOracle {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 24)]
        count: usize,
    },
    /// Recompute energies and cross-checks from a finished run directory.
    Diagnose {
        /// Run directory holding `manifest.json`.
        run: PathBuf,
    },
    /// Print the fully resolved configuration.
    Describe {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    GaussSeidel,
    Jacobi,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogArg {
    Auto,
    On,
    Off,
}

fn fail(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(EXIT_ERROR as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve {
            config,
            out,
            tol,
            max_iter,
            sweep,
            log_domain,
            frame_stride,
            quiet,
        } => {
            let overrides = Overrides {
                out,
                tol,
                max_iter,
                sweep: sweep.map(|s| match s {
                    SweepArg::GaussSeidel => SweepOrder::GaussSeidel,
                    SweepArg::Jacobi => SweepOrder::Jacobi,
                }),
                log_domain: log_domain.map(|l| match l {
                    LogArg::Auto => LogDomain::Auto,
                    LogArg::On => LogDomain::On,
                    LogArg::Off => LogDomain::Off,
                }),
                frame_stride,
            };
            let mut cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            if let Err(e) = overrides.apply(&mut cfg) {
                return fail(e);
            }
            let outcome = runner::run(&cfg, |r| {
                if !quiet {
                    eprintln!(
                        "sweep {:>5}  error {:.3e}  max du {:.3e}",
                        r.index, r.convergence_error, r.max_potential_change
                    );
                }
            });
            match outcome {
                Ok(o) => {
                    println!(
                        "{:?} after {} sweeps (error {:.3e}); wrote {}",
                        o.report.status,
                        o.report.iterations.len(),
                        o.report.final_error().unwrap_or(f64::NAN),
                        o.out_dir.display()
                    );
                    ExitCode::from(o.exit_code() as u8)
                }
                Err(e) => fail(e),
            }
        }
        Command::VerifyOracle { seed, count } => match runner::verify_oracle(seed, count) {
            Ok(report) => {
                for (n, c) in report.cases.iter().enumerate() {
                    println!(
                        "case {:>3}  marginals {:.1e}  entropy {:.1e}  inner {:.1e}  {}",
                        n + 1,
                        c.marginal_error,
                        c.entropy_error,
                        c.inner_error,
                        c.description
                    );
                }
                let verdict = if report.passed() { "PASS" } else { "FAIL" };
                println!(
                    "{verdict}: worst marginal {:.2e} (tol {:.0e}), entropy {:.2e} (tol {:.0e}), inner step {:.2e} (tol {:.0e})",
                    report.worst_marginal(),
                    report.marginal_tol,
                    report.worst_entropy(),
                    report.entropy_tol,
                    report.worst_inner(),
                    report.inner_tol
                );
                if report.passed() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_ERROR as u8)
                }
            }
            Err(e) => fail(e),
        },
        Command::Diagnose { run } => match runner::diagnose(&run) {
            Ok(d) => {
                for problem in &d.checksum_failures {
                    eprintln!("checksum: {problem}");
                }
                let e = &d.recomputed.energies;
                println!("status        {:?}", d.manifest.status);
                println!("entropic      {:?}", e.entropic);
                println!("interaction   {:.12e}", e.interaction);
                println!("final cost    {:.12e}", e.final_cost);
                println!("total         {:.12e}", e.total);
                let note = if e.eulerian_valid { "" } else { " (valid at epsilon = 1 only)" };
                println!("kinetic est.  {:?}{note}", e.eulerian_estimate);
                for p in &d.recomputed.populations {
                    let worst = p.fp_residuals.iter().copied().fold(0.0, f64::max);
                    println!(
                        "population {}  barycenter {:?}  second moment {:.5e}  max FP residual {:.3e}",
                        p.population, p.barycenter_final, p.second_moment_final, worst
                    );
                }
                for s in &d.recomputed.separation {
                    println!("separation {}-{} at r={}  max {:.4e}", s.i, s.j, s.radius, s.max);
                }
                match d.energy_deviation {
                    Some(dev) => println!("energy deviation from run  {dev:.3e}"),
                    None => println!("energy deviation from run  n/a (no diagnostics.json)"),
                }
                println!("frame deviation from run   {:.3e}", d.frame_deviation);
                let reproduced = d.energy_deviation.is_none_or(|x| x <= 1e-12) && d.frame_deviation <= 1e-12;
                if d.checksum_failures.is_empty() && reproduced {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_ERROR as u8)
                }
            }
            Err(e) => fail(e),
        },
        Command::Describe { config } => match runner::describe(&config) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
    }
}
