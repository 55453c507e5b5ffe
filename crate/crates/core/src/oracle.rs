//! Brute-force references on tiny instances.
//!
//! Everything here materializes the full `M^{K+1}` path tensor and sums it
//! directly. The functions share no code with the message-passing path
//! beyond the kernel entries themselves, so agreement between the two is a
//! genuine check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{Boundary, GridSpec, MassField, ScalarField};
use crate::interaction::{InteractionKernel, InteractionMatrix};
use crate::mmot::{plan_entropy, MarginalSet, MarkovReference, PotentialStack};
use crate::scalar::Scalar;
use crate::solver::{LogDomain, ProblemSpec, Solver};
use crate::{Error, Result};

/// Largest tensor the oracle agrees to build.
pub const MAX_ENTRIES: u128 = 10_000_000;

/// A materialized plan `pi(x_0, ..., x_K)` and its reference `R`, stored
/// row-major with `x_0` varying slowest.
#[derive(Debug, Clone)]
pub struct DensePlan<S> {
    cells: usize,
    steps: usize,
    plan: Vec<S>,
    reference: Vec<S>,
}

fn tensor_len(cells: usize, steps: usize) -> Result<usize> {
    let entries = (cells as u128).checked_pow(steps as u32 + 1).unwrap_or(u128::MAX);
    if entries > MAX_ENTRIES {
        return Err(Error::OracleTooLarge {
            entries,
            limit: MAX_ENTRIES,
        });
    }
    Ok(entries as usize)
}

/// Path indices in tensor order.
fn paths(cells: usize, steps: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = cells.pow(steps as u32 + 1);
    (0..total).map(move |mut flat| {
        let mut path = vec![0; steps + 1];
        for slot in path.iter_mut().rev() {
            *slot = flat % cells;
            flat /= cells;
        }
        path
    })
}

impl<S: Scalar> DensePlan<S> {
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn values(&self) -> &[S] {
        &self.plan
    }

    pub fn mass(&self) -> S {
        self.plan.iter().copied().sum()
    }

    /// Marginal at time index `k` by summing out all other coordinates.
    pub fn marginal(&self, k: usize) -> Vec<S> {
        let stride = self.cells.pow((self.steps - k) as u32);
        let mut out = vec![S::zero(); self.cells];
        for (flat, &p) in self.plan.iter().enumerate() {
            out[(flat / stride) % self.cells] = out[(flat / stride) % self.cells] + p;
        }
        out
    }

    /// `sum pi log(pi / R)` with `0 log 0 = 0`.
    pub fn entropy(&self) -> S {
        self.plan
            .iter()
            .zip(&self.reference)
            .filter(|(p, _)| **p > S::zero())
            .map(|(&p, &r)| p * (p / r).ln())
            .sum()
    }
}

/// `pi = prod_k exp(u_k(x_k)) * r_0(x_0) prod_k H(x_k, x_{k-1})`.
pub fn materialize_plan<S: Scalar>(
    grid: &GridSpec<S>,
    reference: &MarkovReference<S>,
    u: &[ScalarField<S>],
) -> Result<DensePlan<S>> {
    let cells = grid.len();
    if u.is_empty() || u.iter().any(|f| f.len() != cells) {
        return Err(Error::param("potentials", "need K + 1 fields on the grid"));
    }
    let steps = u.len() - 1;
    tensor_len(cells, steps)?;
    let kernel: Vec<S> = (0..cells * cells)
        .map(|e| reference.kernel().entry(grid, e / cells, e % cells))
        .collect();
    let r0 = reference.log_initial().exp();
    let mut plan = Vec::new();
    let mut refs = Vec::new();
    for path in paths(cells, steps) {
        let mut r = r0;
        for k in 1..=steps {
            r = r * kernel[path[k] * cells + path[k - 1]];
        }
        let tilt: S = path.iter().zip(u).map(|(&x, f)| f.values()[x]).sum();
        refs.push(r);
        plan.push(r * tilt.exp());
    }
    Ok(DensePlan {
        cells,
        steps,
        plan,
        reference: refs,
    })
}

pub fn direct_marginal<S: Scalar>(plan: &DensePlan<S>, k: usize) -> Vec<S> {
    plan.marginal(k)
}

pub fn direct_entropy<S: Scalar>(plan: &DensePlan<S>) -> S {
    plan.entropy()
}

/// Potentials and marginals of one population's inner problem.
#[derive(Debug, Clone)]
pub struct InnerSolution<S> {
    pub potentials: Vec<ScalarField<S>>,
    pub marginals: Vec<Vec<S>>,
    pub iterations: usize,
}

/// Solves population `i`'s linearized subproblem from scratch: interior
/// and final potentials by direct double sums over the grid, then the
/// initial potential by fixed-point iteration on the dense tensor until its
/// initial marginal matches `rho^i_0`.
pub fn inner_subproblem_bruteforce<S: Scalar>(
    problem: &ProblemSpec<S>,
    i: usize,
    others: &MarginalSet<S>,
) -> Result<InnerSolution<S>> {
    const MAX_ITER: usize = 100_000;
    let grid = &problem.grid;
    let cells = grid.len();
    let steps = problem.steps;
    let sign = if problem.options.literal_signs { S::one() } else { -S::one() };
    let weight = if problem.options.legacy_unweighted { S::one() } else { problem.dt() };
    let displacement = |x: usize, y: usize| -> Vec<S> {
        grid.cell_center(x)
            .iter()
            .zip(grid.cell_center(y))
            .map(|(&a, b)| a - b)
            .collect()
    };

    let mut u = vec![ScalarField::zeros(cells); steps + 1];
    for (k, uk) in u.iter_mut().enumerate().take(steps).skip(1) {
        let mut field = vec![S::zero(); cells];
        for j in (0..problem.populations()).filter(|&j| j != i) {
            let rho = others.get(j, k)?;
            for (x, f) in field.iter_mut().enumerate() {
                for (y, &m) in rho.iter().enumerate() {
                    let z = displacement(x, y);
                    let mut v = problem.interactions.get(i, j).eval(&z);
                    if problem.options.symmetrize {
                        v = v + problem.interactions.get(j, i).eval(&z);
                    }
                    *f = *f + v * m;
                }
            }
        }
        *uk = ScalarField::new(field.into_iter().map(|f| sign * weight * f).collect())?;
    }
    u[steps] = ScalarField::new(problem.g[i].values().iter().map(|&g| sign * g).collect())?;

    let reference = MarkovReference::new(grid, problem.tau(), problem.options.boundary)?;
    let rho0 = problem.rho0[i].values();
    let mut iterations = 0;
    loop {
        let plan = materialize_plan(grid, &reference, &u)?;
        let current = plan.marginal(0);
        let mut change = S::zero();
        let mut next = Vec::with_capacity(cells);
        for ((&old, &target), &have) in u[0].values().iter().zip(rho0).zip(&current) {
            let new = if target > S::zero() {
                if !(have > S::zero()) {
                    return Err(Error::Infeasible { population: i });
                }
                old + target.ln() - have.ln()
            } else {
                S::log_zero()
            };
            if target > S::zero() {
                change = change.max((new - old).abs());
            }
            next.push(new);
        }
        u[0] = ScalarField::new(next)?;
        iterations += 1;
        if change < S::lit(1e-14) * (S::one() + u[0].values().iter().fold(S::zero(), |a, &b| a.max(b.abs()))) {
            let plan = materialize_plan(grid, &reference, &u)?;
            let marginals = (0..=steps).map(|k| plan.marginal(k)).collect();
            return Ok(InnerSolution {
                potentials: u,
                marginals,
                iterations,
            });
        }
        if iterations >= MAX_ITER {
            return Err(Error::OracleNoConvergence(MAX_ITER));
        }
    }
}

/// Worst discrepancies of one randomized instance.
#[derive(Debug, Clone)]
pub struct CaseReport {
    pub description: String,
    /// Max abs difference of message-passing vs dense marginals.
    pub marginal_error: f64,
    /// Closed-form vs direct plan entropy.
    pub entropy_error: f64,
    /// Solver inner step vs from-scratch subproblem, potentials and marginals.
    pub inner_error: f64,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub cases: Vec<CaseReport>,
    pub marginal_tol: f64,
    pub entropy_tol: f64,
    pub inner_tol: f64,
}

impl SuiteReport {
    pub fn worst_marginal(&self) -> f64 {
        self.cases.iter().map(|c| c.marginal_error).fold(0.0, f64::max)
    }

    pub fn worst_entropy(&self) -> f64 {
        self.cases.iter().map(|c| c.entropy_error).fold(0.0, f64::max)
    }

    pub fn worst_inner(&self) -> f64 {
        self.cases.iter().map(|c| c.inner_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst_marginal() <= self.marginal_tol
            && self.worst_entropy() <= self.entropy_tol
            && self.worst_inner() <= self.inner_tol
    }
}

fn random_mass(rng: &mut ChaCha8Rng, cells: usize) -> Result<MassField<f64>> {
    let raw: Vec<f64> = (0..cells).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    MassField::new(raw.into_iter().map(|x| x / total).collect())
}

fn random_field(rng: &mut ChaCha8Rng, cells: usize, scale: f64) -> Result<ScalarField<f64>> {
    ScalarField::new((0..cells).map(|_| rng.gen_range(-scale..scale)).collect())
}

/// A random tiny problem: grid at most 3x3, `K <= 3`, `N <= 2`.
pub fn random_problem(rng: &mut ChaCha8Rng) -> Result<ProblemSpec<f64>> {
    let dims = rng.gen_range(1..=2);
    let points: Vec<usize> = (0..dims).map(|_| rng.gen_range(2..=3)).collect();
    let grid = GridSpec::unit(&points)?;
    let steps = rng.gen_range(1..=3);
    let n = rng.gen_range(1..=2);
    let cells = grid.len();
    let rho0 = (0..n).map(|_| random_mass(rng, cells)).collect::<Result<Vec<_>>>()?;
    let g = (0..n).map(|_| random_field(rng, cells, 3.0)).collect::<Result<Vec<_>>>()?;
    let epsilon = rng.gen_range(0.05..1.5);
    let horizon = rng.gen_range(0.2..1.0);
    let mut problem = ProblemSpec::new(grid, horizon, steps, epsilon, rho0, g);
    let mut matrix = InteractionMatrix::zero(n);
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let kernel = match rng.gen_range(0..3) {
                0 => InteractionKernel::ball(rng.gen_range(0.5..20.0), rng.gen_range(0.2..0.8))?,
                1 => InteractionKernel::truncated_coulomb(rng.gen_range(1.0..10.0))?,
                _ => InteractionKernel::Zero,
            };
            matrix.set(i, j, kernel)?;
        }
    }
    problem.interactions = matrix;
    problem.options.symmetrize = rng.gen_bool(0.3);
    problem.options.log_domain = if rng.gen_bool(0.5) { LogDomain::On } else { LogDomain::Off };
    problem.options.boundary = if rng.gen_bool(0.8) {
        Boundary::Reflecting
    } else {
        Boundary::Truncated
    };
    Ok(problem)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Compares message passing against the dense tensor on one instance.
pub fn check_case(problem: &ProblemSpec<f64>, rng: &mut ChaCha8Rng) -> Result<CaseReport> {
    let grid = &problem.grid;
    let cells = grid.len();
    let n = problem.populations();
    let steps = problem.steps;
    let description = format!(
        "grid {:?}, K={}, N={}, eps={:.3}, {:?}, {:?}",
        grid.points(),
        steps,
        n,
        problem.epsilon,
        problem.options.boundary,
        problem.message_mode()
    );

    // Arbitrary (unnormalized) potentials.
    let random_u = (0..n)
        .map(|_| (0..=steps).map(|_| random_field(rng, cells, 1.5)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let probe = Solver::from_potentials(problem.clone(), PotentialStack::from_fields(random_u.clone()))?;
    let mut marginal_error: f64 = 0.0;
    for (i, u) in random_u.iter().enumerate() {
        let dense = materialize_plan(grid, probe.reference(), u)?;
        for k in 0..=steps {
            marginal_error = marginal_error.max(max_abs_diff(probe.marginals().get(i, k)?, &dense.marginal(k)));
        }
    }

    // A few sweeps give normalized plans and a coupled state.
    let mut solver = Solver::new(problem.clone())?;
    for _ in 0..3 {
        solver.sweep()?;
    }
    let mut entropy_error: f64 = 0.0;
    for i in 0..n {
        let u = solver.potentials().population(i);
        let dense = materialize_plan(grid, solver.reference(), u)?;
        for k in 0..=steps {
            marginal_error = marginal_error.max(max_abs_diff(solver.marginals().get(i, k)?, &dense.marginal(k)));
        }
        let closed = plan_entropy(u, solver.marginals().population(i))?;
        entropy_error = entropy_error.max((closed - dense.entropy()).abs());
    }

    // One inner step of population 0 against the from-scratch subproblem.
    let others = solver.marginals().clone();
    let expected = inner_subproblem_bruteforce(problem, 0, &others)?;
    let mut stepper = Solver::from_potentials(problem.clone(), solver.potentials().clone())?;
    if !stepper.plans().is_zero() {
        stepper.update_interior_potentials(0, &others)?;
    }
    stepper.update_final_potential(0);
    stepper.refresh_backward(0)?;
    stepper.update_initial_potential(0)?;
    stepper.refresh_forward(0)?;
    let mut inner_error: f64 = 0.0;
    for k in 0..=steps {
        let got = stepper.potentials().get(0, k).values();
        let want = expected.potentials[k].values();
        for ((&a, &b), &m) in got.iter().zip(want).zip(problem.rho0[0].values()) {
            if k > 0 || m > 0.0 {
                inner_error = inner_error.max((a - b).abs());
            }
        }
        inner_error = inner_error.max(max_abs_diff(stepper.marginals().get(0, k)?, &expected.marginals[k]));
    }

    Ok(CaseReport {
        description,
        marginal_error,
        entropy_error,
        inner_error,
    })
}

/// Runs `count` randomized instances drawn from `seed`.
pub fn run_suite(seed: u64, count: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(count);
    for _ in 0..count {
        let problem = random_problem(&mut rng)?;
        cases.push(check_case(&problem, &mut rng)?);
    }
    Ok(SuiteReport {
        cases,
        marginal_tol: 1e-12,
        entropy_tol: 1e-10,
        inner_tol: 1e-10,
    })
}
