//! TOML experiment files.
//!
//! ```toml
//! [grid]
//! points = [50, 50]
//!
//! [problem]
//! horizon = 1.0
//! steps = 16
//! epsilon = 1.0
//!
//! [[population]]
//! initial = { kind = "gaussian", center = [0.2, 0.5], weights = [50.0, 50.0] }
//! final_cost = { kind = "quadratic_bowl", center = [0.8, 0.45], strength = 50.0 }
//!
//! [[population]]
//! initial = { kind = "gaussian", center = [0.8, 0.5], weights = [50.0, 50.0] }
//! final_cost = { kind = "quadratic_bowl", center = [0.2, 0.5], strength = 50.0 }
//!
//! [interaction]
//! kind = "ball"
//! strength = 120.0
//! radius = 0.2
//! ```
//!
//! `[interaction]` applies one kernel to every ordered pair;
//! `[[interaction_pair]]` entries (1-based `i`, `j`) override single pairs.
//! Relative file paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grid::{gaussian_field, normalize, Boundary, GridSpec, MassField, ScalarField};
use crate::interaction::{DisplacementTable, InteractionKernel, InteractionMatrix};
use crate::output::read_frame;
use crate::solver::{LogDomain, ProblemSpec, SolverOptions, SweepOrder, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub problem: ProblemConfig,
    pub population: Vec<PopulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<KernelConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interaction_pair: Vec<PairConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub points: Vec<usize>,
    /// Per-axis `[lo, hi]`; the unit cube when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub horizon: f64,
    pub steps: usize,
    #[serde(default = "one")]
    pub epsilon: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub initial: InitialConfig,
    #[serde(default)]
    pub final_cost: CostConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    /// `exp(-sum_a w_a (x_a - c_a)^2)`, normalized.
    Gaussian { center: Vec<f64>, weights: Vec<f64> },
    Uniform,
    /// Raw little-endian `f64` frame, normalized after reading.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostConfig {
    /// `strength * |x - center|^2`.
    QuadraticBowl { center: Vec<f64>, strength: f64 },
    #[default]
    Zero,
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Zero,
    Ball { strength: f64, radius: f64 },
    TruncatedCoulomb { cap: f64 },
    Radial { radii: Vec<f64>, values: Vec<f64> },
    /// Raw little-endian `f64` values on the displacement lattice.
    Tabulated { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub i: usize,
    pub j: usize,
    pub kernel: KernelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub sweep: SweepOrder,
    pub symmetrize: bool,
    pub legacy_unweighted: bool,
    pub literal_signs: bool,
    pub damping: f64,
    pub log_domain: LogDomain,
    pub boundary: Boundary,
    pub track_energy: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            sweep: SweepOrder::GaussSeidel,
            symmetrize: false,
            legacy_unweighted: false,
            literal_signs: false,
            damping: 1.0,
            log_domain: LogDomain::Auto,
            boundary: Boundary::Reflecting,
            track_energy: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub out_dir: PathBuf,
    pub frame_stride: usize,
    pub emit_diagnostics: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            frame_stride: 1,
            emit_diagnostics: true,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().message().to_string();
            Error::config(path, message)
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    /// The fully resolved document, defaults included.
    pub fn describe(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.grid.points.len();
        if dims == 0 || self.grid.points.contains(&0) {
            return Err(Error::config("grid.points", "need at least one axis, each with at least one point"));
        }
        if let Some(ext) = &self.grid.extent {
            if ext.len() != dims {
                return Err(Error::config("grid.extent", "one [lo, hi] pair per axis"));
            }
            if ext.iter().any(|[lo, hi]| !(hi > lo) || !lo.is_finite() || !hi.is_finite()) {
                return Err(Error::config("grid.extent", "each axis needs lo < hi"));
            }
        }
        let p = &self.problem;
        if !(p.horizon > 0.0) || !p.horizon.is_finite() {
            return Err(Error::config("problem.horizon", "must be positive"));
        }
        if p.steps == 0 {
            return Err(Error::config("problem.steps", "must be at least 1"));
        }
        if !(p.epsilon > 0.0) || !p.epsilon.is_finite() {
            return Err(Error::config("problem.epsilon", "must be positive"));
        }
        let n = self.population.len();
        if n == 0 {
            return Err(Error::config("population", "need at least one [[population]]"));
        }
        for (idx, pop) in self.population.iter().enumerate() {
            let at = |field: &str| format!("population[{idx}].{field}");
            match &pop.initial {
                InitialConfig::Gaussian { center, weights } => {
                    if center.len() != dims || weights.len() != dims {
                        return Err(Error::config(at("initial"), "center and weights need one entry per axis"));
                    }
                    if weights.iter().any(|w| !(*w > 0.0)) {
                        return Err(Error::config(at("initial.weights"), "must be positive"));
                    }
                }
                InitialConfig::Uniform | InitialConfig::File { .. } => {}
            }
            if let CostConfig::QuadraticBowl { center, strength } = &pop.final_cost {
                if center.len() != dims {
                    return Err(Error::config(at("final_cost.center"), "one entry per axis"));
                }
                if !strength.is_finite() {
                    return Err(Error::config(at("final_cost.strength"), "must be finite"));
                }
            }
        }
        for (idx, pair) in self.interaction_pair.iter().enumerate() {
            if pair.i == 0 || pair.j == 0 || pair.i > n || pair.j > n || pair.i == pair.j {
                return Err(Error::config(
                    format!("interaction_pair[{idx}]"),
                    format!("i and j must be distinct population indices in 1..={n}"),
                ));
            }
        }
        let s = &self.solver;
        if !(s.tol > 0.0) {
            return Err(Error::config("solver.tol", "must be positive"));
        }
        if !(s.damping > 0.0 && s.damping <= 1.0) {
            return Err(Error::config("solver.damping", "must lie in (0, 1]"));
        }
        if self.output.frame_stride == 0 {
            return Err(Error::config("output.frame_stride", "must be at least 1"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec<f64>> {
        let extent: Vec<(f64, f64)> = match &self.grid.extent {
            Some(e) => e.iter().map(|[lo, hi]| (*lo, *hi)).collect(),
            None => vec![(0.0, 1.0); self.grid.points.len()],
        };
        GridSpec::new(&self.grid.points, &extent)
    }

    fn kernel(&self, cfg: &KernelConfig, grid: &GridSpec<f64>, at: &str) -> Result<InteractionKernel<f64>> {
        let wrap = |e: Error| Error::config(at, e.to_string());
        Ok(match cfg {
            KernelConfig::Zero => InteractionKernel::Zero,
            KernelConfig::Ball { strength, radius } => InteractionKernel::ball(*strength, *radius).map_err(wrap)?,
            KernelConfig::TruncatedCoulomb { cap } => InteractionKernel::truncated_coulomb(*cap).map_err(wrap)?,
            KernelConfig::Radial { radii, values } => {
                InteractionKernel::radial(radii.clone(), values.clone()).map_err(wrap)?
            }
            KernelConfig::Tabulated { path } => {
                InteractionKernel::Tabulated(DisplacementTable::read(grid, &self.resolve(path))?)
            }
        })
    }

    /// The experiment described by this file.
    pub fn problem(&self) -> Result<ProblemSpec<f64>> {
        self.validate()?;
        let grid = self.grid()?;
        let mut rho0 = Vec::with_capacity(self.population.len());
        let mut g = Vec::with_capacity(self.population.len());
        for (idx, pop) in self.population.iter().enumerate() {
            let at = |field: &str| format!("population[{idx}].{field}");
            let wrap = |field: &str| {
                let path = at(field);
                move |e: Error| Error::config(path, e.to_string())
            };
            rho0.push(match &pop.initial {
                InitialConfig::Gaussian { center, weights } => {
                    gaussian_field(&grid, center, weights).map_err(wrap("initial"))?
                }
                InitialConfig::Uniform => MassField::uniform(grid.len()),
                InitialConfig::File { path } => {
                    let values = read_frame(&self.resolve(path))?;
                    grid.check_len(values.len()).map_err(wrap("initial.path"))?;
                    normalize(&values).map_err(wrap("initial.path"))?
                }
            });
            g.push(match &pop.final_cost {
                CostConfig::QuadraticBowl { center, strength } => {
                    ScalarField::quadratic_bowl(&grid, center, *strength).map_err(wrap("final_cost"))?
                }
                CostConfig::Zero => ScalarField::zeros(grid.len()),
                CostConfig::File { path } => {
                    let values = read_frame(&self.resolve(path))?;
                    grid.check_len(values.len()).map_err(wrap("final_cost.path"))?;
                    ScalarField::new(values).map_err(wrap("final_cost.path"))?
                }
            });
        }
        let n = self.population.len();
        let mut interactions = match &self.interaction {
            Some(k) => InteractionMatrix::uniform(n, self.kernel(k, &grid, "interaction")?),
            None => InteractionMatrix::zero(n),
        };
        for (idx, pair) in self.interaction_pair.iter().enumerate() {
            let at = format!("interaction_pair[{idx}]");
            let kernel = self.kernel(&pair.kernel, &grid, &at)?;
            interactions
                .set(pair.i - 1, pair.j - 1, kernel)
                .map_err(|e| Error::config(at, e.to_string()))?;
        }
        let s = &self.solver;
        let mut problem = ProblemSpec::new(grid, self.problem.horizon, self.problem.steps, self.problem.epsilon, rho0, g);
        problem.interactions = interactions;
        problem.options = SolverOptions {
            sweep: s.sweep,
            symmetrize: s.symmetrize,
            legacy_unweighted: s.legacy_unweighted,
            literal_signs: s.literal_signs,
            damping: s.damping,
            log_domain: s.log_domain,
            boundary: s.boundary,
            track_energy: s.track_energy,
        };
        problem.validate()?;
        Ok(problem)
    }
}
