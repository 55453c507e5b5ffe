//! The semi-implicit multi-population Sinkhorn loop.
//!
//! Each sweep visits the populations in order. For population `i` the
//! other populations' marginals are frozen (Gauss-Seidel: the freshest
//! available, Jacobi: those of the previous sweep), which turns the
//! interaction term into a linear cost and leaves a convex single-population
//! problem whose optimal plan is `prod_k exp(u_k) R`:
//!
//! * interior potentials: `u_k = -w * sum_{j != i} V^{i,j} * rho^j_k`, with
//!   `w = T / K` the time quadrature weight of the interaction cost;
//! * final potential: `u_K = -g^i`;
//! * initial potential: `u_0 = log rho^i_0 - log r_0 - log beta_0`, which
//!   makes the plan's initial marginal exactly `rho^i_0`.
//!
//! Potentials are the exponents of the plan factorization, so costs enter
//! with a negative sign. `literal_signs` flips them for comparison runs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{energy_breakdown, EnergyBreakdown};
use crate::grid::{Boundary, GridSpec, MassField, ScalarField};
use crate::interaction::{assemble_linearized_potential, InteractionMatrix, InteractionPlans};
use crate::mmot::{MarginalSet, MarkovReference, MessageCache, MessageMode, PotentialStack};
use crate::scalar::{l1_distance, Scalar};
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 2000;

/// Consecutive sweeps above ten times the best error before giving up.
const DIVERGENCE_PATIENCE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    #[default]
    GaussSeidel,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogDomain {
    #[default]
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions<S> {
    pub sweep: SweepOrder,
    /// Use `V^{i,j} + V^{j,i}` in the interior update.
    pub symmetrize: bool,
    /// Drop the `T / K` weight from the interior update.
    pub legacy_unweighted: bool,
    /// Store `+g` and `+field` instead of their negatives.
    pub literal_signs: bool,
    /// Relaxation `theta` of the interior update, in `(0, 1]`.
    pub damping: S,
    pub log_domain: LogDomain,
    pub boundary: Boundary,
    /// Record an energy breakdown after every sweep.
    pub track_energy: bool,
}

impl<S: Scalar> Default for SolverOptions<S> {
    fn default() -> Self {
        Self {
            sweep: SweepOrder::GaussSeidel,
            symmetrize: false,
            legacy_unweighted: false,
            literal_signs: false,
            damping: S::one(),
            log_domain: LogDomain::Auto,
            boundary: Boundary::Reflecting,
            track_energy: false,
        }
    }
}

/// A complete experiment: grid, horizon, viscosity and population data.
#[derive(Debug, Clone)]
pub struct ProblemSpec<S> {
    pub grid: GridSpec<S>,
    /// Horizon `T`.
    pub horizon: S,
    /// Number of time steps `K`.
    pub steps: usize,
    pub epsilon: S,
    pub rho0: Vec<MassField<S>>,
    pub g: Vec<ScalarField<S>>,
    pub interactions: InteractionMatrix<S>,
    pub options: SolverOptions<S>,
}

impl<S: Scalar> ProblemSpec<S> {
    /// A problem with default options and no interactions.
    pub fn new(
        grid: GridSpec<S>,
        horizon: S,
        steps: usize,
        epsilon: S,
        rho0: Vec<MassField<S>>,
        g: Vec<ScalarField<S>>,
    ) -> Self {
        let n = rho0.len();
        Self {
            grid,
            horizon,
            steps,
            epsilon,
            rho0,
            g,
            interactions: InteractionMatrix::zero(n),
            options: SolverOptions::default(),
        }
    }

    pub fn populations(&self) -> usize {
        self.rho0.len()
    }

    /// Time step `T / K`.
    pub fn dt(&self) -> S {
        self.horizon / S::of_usize(self.steps)
    }

    /// Per-step diffusion variance `epsilon * T / K`.
    pub fn tau(&self) -> S {
        self.epsilon * self.dt()
    }

    pub fn message_mode(&self) -> MessageMode {
        match self.options.log_domain {
            LogDomain::On => MessageMode::Log,
            LogDomain::Off => MessageMode::Linear,
            LogDomain::Auto => MessageMode::auto(self.tau(), self.grid.min_spacing()),
        }
    }

    /// Weight multiplying the interaction field in the interior update.
    pub fn interior_weight(&self) -> S {
        if self.options.legacy_unweighted {
            S::one()
        } else {
            self.dt()
        }
    }

    pub(crate) fn cost_sign(&self) -> S {
        if self.options.literal_signs {
            S::one()
        } else {
            -S::one()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.populations();
        if n == 0 {
            return Err(Error::param("populations", "need at least one population"));
        }
        if self.steps == 0 {
            return Err(Error::param("steps", "K must be at least 1"));
        }
        if !(self.horizon > S::zero()) || !self.horizon.is_finite() {
            return Err(Error::param("horizon", "T must be positive"));
        }
        if !(self.epsilon > S::zero()) || !self.epsilon.is_finite() {
            return Err(Error::param("epsilon", "viscosity must be positive"));
        }
        if self.g.len() != n || self.interactions.populations() != n {
            return Err(Error::param("populations", "rho0, g and interactions disagree on N"));
        }
        let d = self.options.damping;
        if !(d > S::zero() && d <= S::one()) {
            return Err(Error::param("damping", "must lie in (0, 1]"));
        }
        for (i, (r, g)) in self.rho0.iter().zip(&self.g).enumerate() {
            self.grid.check_len(r.len())?;
            self.grid.check_len(g.len())?;
            MassField::new(r.values().to_vec()).map_err(|e| {
                Error::param("rho0", format!("population {}: {e}", i + 1))
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Diverged,
}

impl SolveStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            SolveStatus::Converged => 0,
            SolveStatus::MaxIter => 2,
            SolveStatus::Diverged => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord<S> {
    pub index: usize,
    /// L1 distance of each population's initial marginal to `rho^i_0`,
    /// measured before the initial-potential update.
    pub marginal_errors: Vec<S>,
    pub max_potential_change: S,
    pub convergence_error: S,
    pub energies: Option<EnergyBreakdown<S>>,
    /// Seconds since the start of the solve.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport<S> {
    pub iterations: Vec<IterationRecord<S>>,
    pub status: SolveStatus,
}

impl<S: Scalar> SolveReport<S> {
    pub fn final_error(&self) -> Option<S> {
        self.iterations.last().map(|r| r.convergence_error)
    }
}

/// Errors and potential change of one sweep.
#[derive(Debug, Clone)]
pub struct SweepRecord<S> {
    pub marginal_errors: Vec<S>,
    pub max_potential_change: S,
}

impl<S: Scalar> SweepRecord<S> {
    /// Summed initial-marginal error plus the potential change.
    pub fn convergence_error(&self) -> S {
        self.marginal_errors.iter().copied().sum::<S>() + self.max_potential_change
    }
}

/// Solver state: potentials, messages and marginals of every population.
pub struct Solver<S: Scalar> {
    problem: ProblemSpec<S>,
    reference: MarkovReference<S>,
    plans: InteractionPlans<S>,
    mode: MessageMode,
    potentials: PotentialStack<S>,
    cache: MessageCache<S>,
    marginals: MarginalSet<S>,
    /// `log rho^i_0 - log r_0`, with zero-mass cells mapped to a finite
    /// value whose exponential is zero.
    target: Vec<Vec<S>>,
    sweeps: usize,
}

impl<S: Scalar> Solver<S> {
    /// Initialize with all potentials zero.
    pub fn new(problem: ProblemSpec<S>) -> Result<Self> {
        let n = problem.populations();
        let cells = problem.grid.len();
        let potentials = PotentialStack::zeros(n, problem.steps, cells);
        Self::from_potentials(problem, potentials)
    }

    /// Rebuild messages and marginals for given potentials.
    pub fn from_potentials(problem: ProblemSpec<S>, potentials: PotentialStack<S>) -> Result<Self> {
        problem.validate()?;
        if potentials.populations() != problem.populations() || potentials.steps() != problem.steps {
            return Err(Error::param("potentials", "stack shape does not match the problem"));
        }
        let reference = MarkovReference::new(&problem.grid, problem.tau(), problem.options.boundary)?;
        let plans = InteractionPlans::new(&problem.interactions, &problem.grid)?;
        let mode = problem.message_mode();
        let cache = MessageCache::new(&potentials, &reference, mode)?;
        let marginals = MarginalSet::from_fields(
            (0..problem.populations())
                .map(|i| cache.get(i).marginals(potentials.population(i), &reference))
                .collect::<Result<_>>()?,
        );
        let log_r0 = reference.log_initial();
        let target = problem
            .rho0
            .iter()
            .map(|r| {
                r.values()
                    .iter()
                    .map(|&m| if m > S::zero() { m.ln() - log_r0 } else { S::log_zero() })
                    .collect()
            })
            .collect();
        Ok(Self {
            problem,
            reference,
            plans,
            mode,
            potentials,
            cache,
            marginals,
            target,
            sweeps: 0,
        })
    }

    pub fn problem(&self) -> &ProblemSpec<S> {
        &self.problem
    }

    pub fn reference(&self) -> &MarkovReference<S> {
        &self.reference
    }

    pub fn plans(&self) -> &InteractionPlans<S> {
        &self.plans
    }

    pub fn mode(&self) -> MessageMode {
        self.mode
    }

    pub fn potentials(&self) -> &PotentialStack<S> {
        &self.potentials
    }

    pub fn marginals(&self) -> &MarginalSet<S> {
        &self.marginals
    }

    pub fn cache(&self) -> &MessageCache<S> {
        &self.cache
    }

    pub fn sweeps_done(&self) -> usize {
        self.sweeps
    }

    /// Scalars held across potentials, messages and marginals.
    pub fn storage_len(&self) -> usize {
        self.potentials.storage_len() + self.cache.storage_len() + self.marginals.storage_len()
    }

    /// `u[i][K] := -g^i`.
    pub fn update_final_potential(&mut self, i: usize) {
        let sign = self.problem.cost_sign();
        let k = self.problem.steps;
        let field = self.problem.g[i].values().iter().map(|&g| sign * g).collect();
        self.potentials.set(i, k, ScalarField::new(field).expect("g is finite"));
    }

    /// `u[i][k] := -w * sum_{j != i} V^{i,j} * rho^j_k` for `0 < k < K`,
    /// reading the other populations from `others`.
    pub fn update_interior_potentials(&mut self, i: usize, others: &MarginalSet<S>) -> Result<()> {
        let sign = self.problem.cost_sign();
        let weight = self.problem.interior_weight();
        let theta = self.problem.options.damping;
        for k in 1..self.problem.steps {
            let field = assemble_linearized_potential(
                i,
                k,
                &self.plans,
                others,
                self.problem.options.symmetrize,
                weight,
            )?;
            let old = self.potentials.get(i, k).values();
            let new: Vec<S> = field
                .values()
                .iter()
                .zip(old)
                .map(|(&f, &o)| {
                    let target = sign * f;
                    if theta == S::one() {
                        target
                    } else {
                        (S::one() - theta) * o + theta * target
                    }
                })
                .collect();
            self.potentials.set(i, k, ScalarField::new(new)?);
        }
        Ok(())
    }

    pub fn refresh_backward(&mut self, i: usize) -> Result<()> {
        self.cache
            .get_mut(i)
            .refresh_backward(self.potentials.population(i), &self.reference)
    }

    /// Recompute forward messages and all marginals of population `i`.
    pub fn refresh_forward(&mut self, i: usize) -> Result<()> {
        let u = self.potentials.population(i);
        let messages = self.cache.get_mut(i);
        messages.refresh_forward(u, &self.reference)?;
        let rho = messages.marginals(u, &self.reference)?;
        self.marginals.set_population(i, rho);
        Ok(())
    }

    /// Current initial marginal of population `i` from its messages.
    pub fn initial_marginal(&self, i: usize) -> Result<Vec<S>> {
        self.cache.get(i).marginal(0, self.potentials.population(i), &self.reference)
    }

    /// `u[i][0] := log rho^i_0 - log r_0 - log beta_0`. Needs current backward
    /// messages. Returns the L1 error of the initial marginal before the update.
    pub fn update_initial_potential(&mut self, i: usize) -> Result<S> {
        let before = self.initial_marginal(i)?;
        let error = l1_distance(&before, self.problem.rho0[i].values());
        let beta0 = self.cache.get(i).beta(0);
        let rho0 = self.problem.rho0[i].values();
        let mut u0 = Vec::with_capacity(beta0.len());
        for ((&b, &t), &m) in beta0.iter().zip(&self.target[i]).zip(rho0) {
            let log_b = match self.mode {
                MessageMode::Linear => b.ln(),
                MessageMode::Log => b,
            };
            if m > S::zero() {
                if !log_b.is_finite() {
                    return Err(Error::Infeasible { population: i });
                }
                u0.push(t - log_b);
            } else {
                u0.push(S::log_zero());
            }
        }
        self.potentials.set(i, 0, ScalarField::new(u0)?);
        Ok(error)
    }

    /// One pass over all populations.
    pub fn sweep(&mut self) -> Result<SweepRecord<S>> {
        let previous = self.potentials.clone();
        let snapshot = match self.problem.options.sweep {
            SweepOrder::Jacobi => Some(self.marginals.clone()),
            SweepOrder::GaussSeidel => None,
        };
        let n = self.problem.populations();
        let mut marginal_errors = Vec::with_capacity(n);
        for i in 0..n {
            if !self.plans.is_zero() {
                let others = match &snapshot {
                    Some(s) => s.clone(),
                    None => self.marginals.clone(),
                };
                self.update_interior_potentials(i, &others)?;
            }
            self.update_final_potential(i);
            self.refresh_backward(i)?;
            marginal_errors.push(self.update_initial_potential(i)?);
            self.refresh_forward(i)?;
        }
        self.sweeps += 1;
        Ok(SweepRecord {
            marginal_errors,
            max_potential_change: self.potentials.max_change(&previous),
        })
    }

    /// Sweep until the convergence error drops below `tol`.
    pub fn run(&mut self, tol: S, max_iter: usize) -> Result<SolveReport<S>> {
        self.run_with(tol, max_iter, |_| {})
    }

    /// [`Solver::run`], reporting every iteration record to `progress`.
    pub fn run_with(
        &mut self,
        tol: S,
        max_iter: usize,
        mut progress: impl FnMut(&IterationRecord<S>),
    ) -> Result<SolveReport<S>> {
        self.run_observed(tol, max_iter, |_, record| progress(record))
    }

    /// [`Solver::run`], handing the solver state and the iteration record
    /// to `observe` after every sweep.
    pub fn run_observed(
        &mut self,
        tol: S,
        max_iter: usize,
        mut observe: impl FnMut(&Self, &IterationRecord<S>),
    ) -> Result<SolveReport<S>> {
        let start = Instant::now();
        let mut iterations = Vec::new();
        let mut best = S::infinity();
        let mut above = 0usize;
        let mut status = SolveStatus::MaxIter;
        for index in 1..=max_iter {
            let sweep = self.sweep()?;
            let convergence_error = sweep.convergence_error();
            let energies = if self.problem.options.track_energy {
                Some(energy_breakdown(self)?)
            } else {
                None
            };
            iterations.push(IterationRecord {
                index,
                marginal_errors: sweep.marginal_errors,
                max_potential_change: sweep.max_potential_change,
                convergence_error,
                energies,
                wall_time: start.elapsed().as_secs_f64(),
            });
            observe(self, iterations.last().expect("just pushed"));
            if !convergence_error.is_finite() {
                status = SolveStatus::Diverged;
                break;
            }
            if convergence_error < tol {
                status = SolveStatus::Converged;
                break;
            }
            best = best.min(convergence_error);
            if convergence_error > S::lit(10.0) * best {
                above += 1;
                if above >= DIVERGENCE_PATIENCE {
                    status = SolveStatus::Diverged;
                    break;
                }
            } else {
                above = 0;
            }
        }
        Ok(SolveReport { iterations, status })
    }
}

/// Solver output: final marginals, potentials and the convergence record.
pub struct Solution<S: Scalar> {
    pub marginals: MarginalSet<S>,
    pub potentials: PotentialStack<S>,
    pub report: SolveReport<S>,
}

pub fn solve<S: Scalar>(problem: ProblemSpec<S>, tol: S, max_iter: usize) -> Result<Solution<S>> {
    let mut solver = Solver::new(problem)?;
    let report = solver.run(tol, max_iter)?;
    Ok(Solution {
        marginals: solver.marginals,
        potentials: solver.potentials,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::gaussian_field;
    use crate::interaction::InteractionKernel;

    fn heat_problem(points: usize, steps: usize) -> ProblemSpec<f64> {
        let grid = GridSpec::unit(&[points, points]).unwrap();
        let rho = gaussian_field(&grid, &[0.3, 0.6], &[50.0, 50.0]).unwrap();
        let g = ScalarField::zeros(grid.len());
        ProblemSpec::new(grid, 1.0, steps, 1.0, vec![rho], vec![g])
    }

    #[test]
    fn final_potential_pins_negative_cost() {
        let grid = GridSpec::unit(&[8, 8]).unwrap();
        let rho = gaussian_field(&grid, &[0.2, 0.5], &[50.0, 50.0]).unwrap();
        let g = ScalarField::quadratic_bowl(&grid, &[0.8, 0.45], 50.0).unwrap();
        let p = ProblemSpec::new(grid, 1.0, 4, 1.0, vec![rho], vec![g.clone()]);
        let mut s = Solver::new(p).unwrap();
        s.update_final_potential(0);
        let once = s.potentials().get(0, 4).clone();
        s.update_final_potential(0);
        assert_eq!(&once, s.potentials().get(0, 4));
        for (u, g) in once.values().iter().zip(g.values()) {
            assert_eq!(*u, -g);
        }
    }

    #[test]
    fn initial_potential_without_coupling_is_log_density_ratio() {
        let p = heat_problem(6, 3);
        let r0 = 1.0 / 36.0;
        let rho = p.rho0[0].clone();
        let mut s = Solver::new(p).unwrap();
        s.refresh_backward(0).unwrap();
        s.update_initial_potential(0).unwrap();
        for (u, m) in s.potentials().get(0, 0).values().iter().zip(rho.values()) {
            assert!((u - (m / r0).ln()).abs() < 1e-12);
        }
        s.refresh_forward(0).unwrap();
        let l1 = l1_distance(s.marginals().get(0, 0).unwrap(), rho.values());
        assert!(l1 < 1e-13);
    }

    #[test]
    fn uniform_initial_data_gives_zero_initial_potential() {
        let grid = GridSpec::unit(&[5, 5]).unwrap();
        let p = ProblemSpec::new(
            grid.clone(),
            1.0,
            2,
            1.0,
            vec![MassField::uniform(grid.len())],
            vec![ScalarField::zeros(grid.len())],
        );
        let mut s = Solver::new(p).unwrap();
        s.refresh_backward(0).unwrap();
        s.update_initial_potential(0).unwrap();
        assert!(s.potentials().get(0, 0).values().iter().all(|u: &f64| u.abs() < 1e-12));
    }

    #[test]
    fn uncoupled_solve_converges_in_two_sweeps() {
        let mut s = Solver::new(heat_problem(10, 4)).unwrap();
        let report = s.run(1e-10, 50).unwrap();
        assert_eq!(report.status, SolveStatus::Converged);
        assert!(report.iterations.len() <= 2);
    }

    #[test]
    fn interior_update_under_dirac_partner() {
        let grid = GridSpec::<f64>::unit(&[10, 10]).unwrap();
        let y0 = grid.ravel(&[5, 5]);
        let rho1 = gaussian_field(&grid, &[0.2, 0.5], &[50.0, 50.0]).unwrap();
        let rho2 = MassField::dirac(grid.len(), y0);
        let zeros = ScalarField::zeros(grid.len());
        let mut p = ProblemSpec::new(grid.clone(), 1.0, 4, 1.0, vec![rho1, rho2.clone()], vec![zeros.clone(), zeros]);
        p.interactions = InteractionMatrix::uniform(2, InteractionKernel::ball(120.0, 0.2).unwrap());
        let mut s = Solver::new(p).unwrap();
        let others = MarginalSet::from_fields(vec![
            vec![vec![0.0; grid.len()]; 5],
            vec![rho2.values().to_vec(); 5],
        ]);
        s.update_interior_potentials(0, &others).unwrap();
        let c0 = grid.cell_center(y0);
        for k in 1..4 {
            for x in 0..grid.len() {
                let c = grid.cell_center(x);
                let r = ((c[0] - c0[0]).powi(2) + (c[1] - c0[1]).powi(2)).sqrt();
                if (r - 0.2f64).abs() < 1e-9 {
                    continue;
                }
                let expect = if r < 0.2 { -0.25 * 120.0 } else { 0.0 };
                assert!((s.potentials().get(0, k).values()[x] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn validation_rejects_bad_problems() {
        let mut p = heat_problem(4, 2);
        p.epsilon = 0.0;
        assert!(Solver::new(p).is_err());
        let mut p = heat_problem(4, 2);
        p.steps = 0;
        assert!(Solver::new(p).is_err());
        let mut p = heat_problem(4, 2);
        p.options.damping = 1.5;
        assert!(Solver::new(p).is_err());
    }

    #[test]
    fn infeasible_initial_constraint_is_reported() {
        // Truncated kernel with vanishing variance starves the corner cell.
        let grid = GridSpec::unit(&[3]).unwrap();
        let rho = MassField::new(vec![0.5, 0.25, 0.25]).unwrap();
        let g = ScalarField::new(vec![0.0, 0.0, 2000.0]).unwrap();
        let mut p = ProblemSpec::new(grid, 1.0, 1, 1e-9, vec![rho], vec![g]);
        p.options.boundary = Boundary::Truncated;
        p.options.log_domain = LogDomain::Off;
        let mut s = Solver::new(p).unwrap();
        s.update_final_potential(0);
        s.refresh_backward(0).unwrap();
        assert!(matches!(s.update_initial_potential(0), Err(Error::Infeasible { .. })));
    }
}
