//! Drivers behind the `mfgsolve` subcommands.

use std::path::{Path, PathBuf};

use crate::config::{CostConfig, InitialConfig, KernelConfig, RunConfig};
use crate::diagnostics::{barycenter, energy_breakdown, fp_residuals, second_moment, separation_metric, EnergyBreakdown};
use crate::interaction::InteractionKernel;
use crate::oracle::{run_suite, SuiteReport};
use crate::output::{
    write_run, DiagnosticsReport, Manifest, PopulationReport, RunArtifacts, SeparationEntry, DIAGNOSTICS,
};
use crate::solver::{LogDomain, SolveReport, SolveStatus, Solver, SweepOrder};
use crate::Result;

/// Exit code for configuration and I/O errors.
pub const EXIT_ERROR: i32 = 1;

/// Command-line overrides of config values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub sweep: Option<SweepOrder>,
    pub log_domain: Option<LogDomain>,
    pub frame_stride: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) -> Result<()> {
        if let Some(out) = &self.out {
            config.output.out_dir = out.clone();
        }
        if let Some(t) = self.tol {
            config.solver.tol = t;
        }
        if let Some(m) = self.max_iter {
            config.solver.max_iter = m;
        }
        if let Some(s) = self.sweep {
            config.solver.sweep = s;
        }
        if let Some(l) = self.log_domain {
            config.solver.log_domain = l;
        }
        if let Some(f) = self.frame_stride {
            config.output.frame_stride = f;
        }
        config.validate()
    }
}

/// Rewrites relative data paths against the config directory, so the
/// saved copy of a config is usable from anywhere.
pub fn absolutize(config: &RunConfig) -> RunConfig {
    let mut out = config.clone();
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            let joined = config.base_dir.join(&*p);
            *p = std::path::absolute(&joined).unwrap_or(joined);
        }
    };
    for pop in &mut out.population {
        if let InitialConfig::File { path } = &mut pop.initial {
            fix(path);
        }
        if let CostConfig::File { path } = &mut pop.final_cost {
            fix(path);
        }
    }
    if let Some(KernelConfig::Tabulated { path }) = &mut out.interaction {
        fix(path);
    }
    for pair in &mut out.interaction_pair {
        if let KernelConfig::Tabulated { path } = &mut pair.kernel {
            fix(path);
        }
    }
    out.base_dir = PathBuf::new();
    out
}

/// Energies, FP residuals and figure metrics of a solved state.
pub fn diagnostics_report(solver: &Solver<f64>, status: SolveStatus) -> Result<DiagnosticsReport> {
    let problem = solver.problem();
    let grid = &problem.grid;
    let k = problem.steps;
    let populations = (0..problem.populations())
        .map(|i| {
            let rho = solver.marginals().get(i, k)?;
            Ok(PopulationReport {
                population: i + 1,
                barycenter_final: barycenter(grid, rho)?,
                second_moment_final: second_moment(grid, rho)?,
                fp_residuals: fp_residuals(solver, i)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut separation = Vec::new();
    for i in 0..problem.populations() {
        for j in i + 1..problem.populations() {
            let radius = match problem.interactions.get(i, j) {
                InteractionKernel::BallIndicator { radius, .. } => Some(*radius),
                _ => None,
            };
            if let Some(r) = radius {
                let m = separation_metric(grid, solver.marginals(), i, j, r)?;
                separation.push(SeparationEntry {
                    i: i + 1,
                    j: j + 1,
                    radius: r,
                    max: m.into_iter().fold(0.0, f64::max),
                });
            }
        }
    }
    Ok(DiagnosticsReport {
        status,
        energies: energy_breakdown(solver)?,
        populations,
        separation,
    })
}

/// Result of `solve`.
pub struct RunOutcome {
    pub report: SolveReport<f64>,
    pub manifest: Manifest,
    pub out_dir: PathBuf,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.report.status.exit_code()
    }
}

/// Solves the experiment and writes all artifacts. `progress` receives
/// every iteration record as it completes.
pub fn run(config: &RunConfig, mut progress: impl FnMut(&crate::solver::IterationRecord<f64>)) -> Result<RunOutcome> {
    let problem = config.problem()?;
    let saved = absolutize(config);
    let config_text = saved.describe();
    let mut solver = Solver::new(problem)?;
    let report = solver.run_with(config.solver.tol, config.solver.max_iter, &mut progress)?;
    let diagnostics = if config.output.emit_diagnostics {
        Some(diagnostics_report(&solver, report.status)?)
    } else {
        None
    };
    let out_dir = config.output.out_dir.clone();
    let manifest = write_run(
        &out_dir,
        &RunArtifacts {
            problem: solver.problem(),
            config_text: &config_text,
            mode: solver.mode(),
            status: report.status,
            iterations: &report.iterations,
            marginals: solver.marginals(),
            potentials: solver.potentials(),
            frame_stride: config.output.frame_stride,
            diagnostics: diagnostics.as_ref(),
        },
    )?;
    Ok(RunOutcome {
        report,
        manifest,
        out_dir,
    })
}

/// Result of recomputing a run from its artifacts.
#[derive(Debug, Clone)]
pub struct Diagnosis {
    pub manifest: Manifest,
    pub checksum_failures: Vec<String>,
    pub recomputed: DiagnosticsReport,
    /// Largest difference between the recomputed and the stored energies,
    /// when the run saved diagnostics.
    pub energy_deviation: Option<f64>,
    /// Largest difference between stored frames and recomputed marginals.
    pub frame_deviation: f64,
}

fn energy_distance(a: &EnergyBreakdown<f64>, b: &EnergyBreakdown<f64>) -> f64 {
    let scalars = [
        (a.interaction, b.interaction),
        (a.final_cost, b.final_cost),
        (a.total, b.total),
    ];
    let lists = a
        .entropic
        .iter()
        .zip(&b.entropic)
        .chain(a.initial_entropy.iter().zip(&b.initial_entropy))
        .chain(a.eulerian_estimate.iter().zip(&b.eulerian_estimate))
        .map(|(x, y)| (*x, *y));
    scalars
        .into_iter()
        .chain(lists)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Rebuilds the solver state from saved potentials and recomputes energies,
/// marginals and cross-checks.
pub fn diagnose(dir: &Path) -> Result<Diagnosis> {
    let manifest = Manifest::read(dir)?;
    let checksum_failures = manifest.verify(dir);
    let config = RunConfig::load(&dir.join(crate::output::CONFIG))?;
    let problem = config.problem()?;
    let potentials = crate::output::read_potentials(dir, &manifest)?;
    let solver = Solver::from_potentials(problem, potentials)?;
    let recomputed = diagnostics_report(&solver, manifest.status)?;
    let energy_deviation = if dir.join(DIAGNOSTICS).exists() {
        let stored = DiagnosticsReport::read(dir)?;
        Some(energy_distance(&stored.energies, &recomputed.energies))
    } else {
        None
    };
    let mut frame_deviation: f64 = 0.0;
    for entry in &manifest.frames {
        let stored = crate::output::read_frame(&dir.join(&entry.file))?;
        let fresh = solver.marginals().get(entry.population - 1, entry.step)?;
        for (a, b) in stored.iter().zip(fresh) {
            frame_deviation = frame_deviation.max((a - b).abs());
        }
    }
    Ok(Diagnosis {
        manifest,
        checksum_failures,
        recomputed,
        energy_deviation,
        frame_deviation,
    })
}

/// The resolved config document.
pub fn describe(path: &Path) -> Result<String> {
    Ok(RunConfig::load(path)?.describe())
}

pub fn verify_oracle(seed: u64, count: usize) -> Result<SuiteReport> {
    run_suite(seed, count)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIVIAL: &str = r#"
[grid]
points = [12, 10]

[problem]
horizon = 1.0
steps = 4

[[population]]
initial = { kind = "gaussian", center = [0.3, 0.5], weights = [30.0, 30.0] }

[solver]
tol = 1e-10
"#;

    #[test]
    fn trivial_run_writes_normalized_frames_and_diagnoses() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RunConfig::from_toml(TRIVIAL).unwrap();
        config.output.out_dir = dir.path().join("run");
        let outcome = run(&config, |_| {}).unwrap();
        assert_eq!(outcome.exit_code(), 0);
        assert_eq!(outcome.manifest.frames.len(), 5);
        for f in &outcome.manifest.frames {
            let v = crate::output::read_frame(&outcome.out_dir.join(&f.file)).unwrap();
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        let d = diagnose(&outcome.out_dir).unwrap();
        assert!(d.checksum_failures.is_empty());
        assert_eq!(d.recomputed.energies.interaction, 0.0);
        assert!(d.energy_deviation.unwrap() <= 1e-12);
        assert!(d.frame_deviation <= 1e-12);
    }

    #[test]
    fn overrides_are_validated() {
        let mut config = RunConfig::from_toml(TRIVIAL).unwrap();
        let o = Overrides {
            frame_stride: Some(0),
            ..Default::default()
        };
        assert!(o.apply(&mut config).is_err());
        let mut config = RunConfig::from_toml(TRIVIAL).unwrap();
        let o = Overrides {
            tol: Some(1e-3),
            sweep: Some(SweepOrder::Jacobi),
            ..Default::default()
        };
        o.apply(&mut config).unwrap();
        assert_eq!(config.solver.tol, 1e-3);
        assert_eq!(config.solver.sweep, SweepOrder::Jacobi);
    }
}
