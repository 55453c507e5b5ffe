//! Energies of the discrete objective, Hopf-Cole / Fokker-Planck
//! cross-checks of a solution, and figure-level metrics.

use serde::{Deserialize, Serialize};

use crate::grid::{GridSpec, ScalarField};
use crate::interaction::{ConvolutionPlan, InteractionKernel, InteractionPlans};
use crate::mmot::{plan_entropy, MarginalSet, MarkovReference, PotentialStack};
use crate::scalar::{dot, l1_distance, log_sum_exp, Scalar};
use crate::solver::{ProblemSpec, Solver};
use crate::{Error, Result};

/// Components of `sum_i S^K(rho^i) + F^K(rho^1, ..., rho^N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown<S> {
    /// Plan entropy `H(pi^i | R)` per population.
    pub entropic: Vec<S>,
    pub interaction: S,
    pub final_cost: S,
    pub total: S,
    /// `H(rho^i_0 | r_0)` per population.
    pub initial_entropy: Vec<S>,
    /// `S^K_i - H(rho^i_0 | r_0)`, the kinetic-energy estimate.
    pub eulerian_estimate: Vec<S>,
    /// The kinetic-energy identity only holds as stated at unit viscosity.
    pub eulerian_valid: bool,
}

/// `H(s) = s (log s - 1) + 1`, with `H(0) = 1`.
pub fn entropy_function<S: Scalar>(s: S) -> S {
    if s > S::zero() {
        s * (s.ln() - S::one()) + S::one()
    } else {
        S::one()
    }
}

/// `H(rho | uniform) = sum_x r_0 H(rho(x) / r_0)`.
pub fn relative_entropy_to_uniform<S: Scalar>(rho: &[S]) -> S {
    let r0 = S::one() / S::of_usize(rho.len());
    rho.iter().map(|&m| r0 * entropy_function(m / r0)).sum()
}

/// `(T/K) sum_{k=1}^{K-1} sum_{i != j} <V^{i,j} * rho^j_k, rho^i_k>`.
pub fn interaction_energy<S: Scalar>(marginals: &MarginalSet<S>, plans: &InteractionPlans<S>, dt: S) -> Result<S> {
    let n = marginals.populations();
    let steps = marginals.steps();
    let mut total = S::zero();
    for k in 1..steps {
        for i in 0..n {
            for j in 0..n {
                if let Some(plan) = plans.get(i, j) {
                    let field = plan.convolve(marginals.get(j, k)?)?;
                    total = total + dot(&field, marginals.get(i, k)?);
                }
            }
        }
    }
    Ok(dt * total)
}

/// `sum_i <g^i, rho^i_K>`.
pub fn final_cost<S: Scalar>(marginals: &MarginalSet<S>, g: &[ScalarField<S>]) -> Result<S> {
    let k = marginals.steps();
    let mut total = S::zero();
    for (i, gi) in g.iter().enumerate() {
        total = total + dot(gi.values(), marginals.get(i, k)?);
    }
    Ok(total)
}

/// Energy breakdown of arbitrary potentials and their marginals.
pub fn energy_of<S: Scalar>(
    problem: &ProblemSpec<S>,
    plans: &InteractionPlans<S>,
    potentials: &PotentialStack<S>,
    marginals: &MarginalSet<S>,
) -> Result<EnergyBreakdown<S>> {
    let n = problem.populations();
    let entropic = (0..n)
        .map(|i| plan_entropy(potentials.population(i), marginals.population(i)))
        .collect::<Result<Vec<_>>>()?;
    let interaction = interaction_energy(marginals, plans, problem.dt())?;
    let final_cost = final_cost(marginals, &problem.g)?;
    let total = entropic.iter().copied().sum::<S>() + interaction + final_cost;
    let initial_entropy: Vec<S> = problem
        .rho0
        .iter()
        .map(|r| relative_entropy_to_uniform(r.values()))
        .collect();
    let eulerian_estimate = entropic.iter().zip(&initial_entropy).map(|(&s, &h)| s - h).collect();
    Ok(EnergyBreakdown {
        entropic,
        interaction,
        final_cost,
        total,
        initial_entropy,
        eulerian_estimate,
        eulerian_valid: problem.epsilon == S::one(),
    })
}

pub fn energy_breakdown<S: Scalar>(solver: &Solver<S>) -> Result<EnergyBreakdown<S>> {
    energy_of(solver.problem(), solver.plans(), solver.potentials(), solver.marginals())
}

/// Unweighted interaction fields `H^i_k` for every population and every
/// `k = 0..=K`, with `V^{i,j} + V^{j,i}` when `symmetrize`.
pub fn interaction_fields<S: Scalar>(
    marginals: &MarginalSet<S>,
    plans: &InteractionPlans<S>,
    symmetrize: bool,
) -> Result<Vec<Vec<ScalarField<S>>>> {
    (0..marginals.populations())
        .map(|i| {
            (0..=marginals.steps())
                .map(|k| ScalarField::new(plans.interaction_field(i, k, marginals, symmetrize)?))
                .collect()
        })
        .collect()
}

/// `H^i(t_k, x) = sum_{j != i} ((V^{i,j} + V^{j,i}) * rho^j_k)(x)`.
pub fn assemble_h_fields<S: Scalar>(
    marginals: &MarginalSet<S>,
    plans: &InteractionPlans<S>,
) -> Result<Vec<Vec<ScalarField<S>>>> {
    interaction_fields(marginals, plans, true)
}

/// Hopf-Cole transformed value function of one population.
#[derive(Debug, Clone)]
pub struct HopfColeState<S> {
    epsilon: S,
    log_v: Vec<ScalarField<S>>,
    u: Vec<ScalarField<S>>,
    h_fields: Vec<ScalarField<S>>,
}

impl<S: Scalar> HopfColeState<S> {
    pub fn steps(&self) -> usize {
        self.u.len() - 1
    }

    /// `v_k = exp(-u_k / epsilon)`.
    pub fn v(&self, k: usize) -> Vec<S> {
        self.log_v[k].values().iter().map(|l| l.exp()).collect()
    }

    pub fn log_v(&self, k: usize) -> &[S] {
        self.log_v[k].values()
    }

    /// Recovered value function `u_k = -epsilon log v_k`.
    pub fn u(&self, k: usize) -> &ScalarField<S> {
        &self.u[k]
    }

    pub fn h_fields(&self) -> &[ScalarField<S>] {
        &self.h_fields
    }

    pub fn epsilon(&self) -> S {
        self.epsilon
    }

    /// Optimal feedback velocity `-grad u_k`, one component per axis.
    pub fn velocity(&self, grid: &GridSpec<S>, k: usize) -> Result<Vec<Vec<S>>> {
        let grad = gradient(grid, self.u[k].values())?;
        Ok(grad.into_iter().map(|c| c.into_iter().map(|g| -g).collect()).collect())
    }
}

/// Backward Hopf-Cole recursion for `-d_t u - (eps/2) Lap u + |grad u|^2 / 2 = H`,
/// `u(T) = g`, in the variable `v = exp(-u / eps)`:
///
/// ```text
/// v_K = exp(-g / eps)
/// v_k = H_tau (exp(-dt H_{k+1} / eps) v_{k+1})
/// ```
///
/// with the solver's heat kernel. The recursion runs on `log v`.
pub fn hopf_cole_backward<S: Scalar>(
    reference: &MarkovReference<S>,
    h_fields: &[ScalarField<S>],
    g: &ScalarField<S>,
    epsilon: S,
    dt: S,
) -> Result<HopfColeState<S>> {
    if h_fields.is_empty() {
        return Err(Error::param("h_fields", "need K + 1 time instants"));
    }
    if !(epsilon > S::zero()) {
        return Err(Error::param("epsilon", "viscosity must be positive"));
    }
    let steps = h_fields.len() - 1;
    let cells = reference.cells();
    for f in h_fields.iter().chain(std::iter::once(g)) {
        if f.len() != cells {
            return Err(Error::ShapeMismatch {
                expected: cells,
                actual: f.len(),
            });
        }
    }
    let mut log_v = vec![Vec::new(); steps + 1];
    log_v[steps] = g.values().iter().map(|&x| -x / epsilon).collect();
    for k in (0..steps).rev() {
        let tilted: Vec<S> = log_v[k + 1]
            .iter()
            .zip(h_fields[k + 1].values())
            .map(|(&l, &h)| l - dt * h / epsilon)
            .collect();
        log_v[k] = reference.kernel().apply_log(&tilted)?;
        if log_v[k].iter().any(|l| !l.is_finite()) {
            return Err(Error::HopfColeUnderflow { step: k });
        }
    }
    let u = log_v
        .iter()
        .map(|l| ScalarField::new(l.iter().map(|&x| -epsilon * x).collect()))
        .collect::<Result<Vec<_>>>()?;
    let log_v = log_v.into_iter().map(ScalarField::new).collect::<Result<Vec<_>>>()?;
    Ok(HopfColeState {
        epsilon,
        log_v,
        u,
        h_fields: h_fields.to_vec(),
    })
}

/// Hopf-Cole state of population `i` built from the solver's marginals, with
/// the interaction fields the solver itself uses (no cost at `k = 0, K`).
///
/// Minimizing `H(Q | R_eps) + F` is the viscous system at viscosity `eps`
/// with the costs `g` and `V` multiplied by `eps`, so the fields and the
/// terminal cost are scaled accordingly and `u` is the value function of
/// that system.
pub fn hopf_cole_for_population<S: Scalar>(solver: &Solver<S>, i: usize) -> Result<HopfColeState<S>> {
    let problem = solver.problem();
    let steps = problem.steps;
    let eps = problem.epsilon;
    let weight = eps * problem.interior_weight() / problem.dt();
    let fields = (0..=steps)
        .map(|k| {
            if k == 0 || k == steps {
                Ok(ScalarField::zeros(problem.grid.len()))
            } else {
                let f = solver
                    .plans()
                    .interaction_field(i, k, solver.marginals(), problem.options.symmetrize)?;
                ScalarField::new(f.into_iter().map(|x| x * weight).collect())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let g = ScalarField::new(problem.g[i].values().iter().map(|&x| eps * x).collect())?;
    hopf_cole_backward(solver.reference(), &fields, &g, eps, problem.dt())
}

/// Propagates `rho_0` forward with the optimal Markov transitions implied by
/// the Hopf-Cole state (the Doob transform of the heat kernel by `v`):
///
/// ```text
/// rho_{k+1} ~ v_{k+1} exp(-dt H_{k+1} / eps) H_tau (rho_k / v_k)
/// ```
///
/// renormalized at every step, and returns `L1(rho_k, target_k)` for each `k`.
pub fn fp_forward_consistency<S: Scalar>(
    reference: &MarkovReference<S>,
    hopf_cole: &HopfColeState<S>,
    rho0: &[S],
    targets: &[Vec<S>],
    dt: S,
) -> Result<Vec<S>> {
    let steps = hopf_cole.steps();
    if targets.len() != steps + 1 {
        return Err(Error::param("targets", "need one marginal per time instant"));
    }
    let eps = hopf_cole.epsilon;
    let to_log = |m: &[S]| -> Vec<S> {
        m.iter()
            .map(|&x| if x > S::zero() { x.ln() } else { S::log_zero() })
            .collect()
    };
    let mut log_rho = to_log(rho0);
    let mut residuals = Vec::with_capacity(steps + 1);
    residuals.push(l1_distance(rho0, &targets[0]));
    for k in 0..steps {
        let ratio: Vec<S> = log_rho.iter().zip(hopf_cole.log_v(k)).map(|(&r, &v)| r - v).collect();
        let spread = reference.kernel().apply_log(&ratio)?;
        let mut next: Vec<S> = spread
            .iter()
            .zip(hopf_cole.log_v(k + 1))
            .zip(hopf_cole.h_fields[k + 1].values())
            .map(|((&s, &v), &h)| s + v - dt * h / eps)
            .collect();
        let norm = log_sum_exp(next.iter().copied());
        for x in &mut next {
            *x = *x - norm;
        }
        let rho: Vec<S> = next.iter().map(|x| x.exp()).collect();
        residuals.push(l1_distance(&rho, &targets[k + 1]));
        log_rho = next;
    }
    Ok(residuals)
}

/// FP residuals of population `i` against the solver's own marginals.
pub fn fp_residuals<S: Scalar>(solver: &Solver<S>, i: usize) -> Result<Vec<S>> {
    let hc = hopf_cole_for_population(solver, i)?;
    fp_forward_consistency(
        solver.reference(),
        &hc,
        solver.problem().rho0[i].values(),
        solver.marginals().population(i),
        solver.problem().dt(),
    )
}

/// Centered differences, one-sided at the first and last cell of each axis.
pub fn gradient<S: Scalar>(grid: &GridSpec<S>, field: &[S]) -> Result<Vec<Vec<S>>> {
    grid.check_len(field.len())?;
    let points = grid.points();
    let mut out = Vec::with_capacity(grid.dims());
    for axis in 0..grid.dims() {
        let n = points[axis];
        let h = grid.spacing()[axis];
        let stride: usize = points[axis + 1..].iter().product();
        let mut comp = vec![S::zero(); field.len()];
        if n > 1 {
            for (flat, c) in comp.iter_mut().enumerate() {
                let idx = (flat / stride) % n;
                let (lo, hi, span) = if idx == 0 {
                    (flat, flat + stride, h)
                } else if idx == n - 1 {
                    (flat - stride, flat, h)
                } else {
                    (flat - stride, flat + stride, h + h)
                };
                *c = (field[hi] - field[lo]) / span;
            }
        }
        out.push(comp);
    }
    Ok(out)
}

/// `m_k = <chi_{|z| < r} * rho^j_k, rho^i_k>` for every `k`.
pub fn separation_metric<S: Scalar>(
    grid: &GridSpec<S>,
    marginals: &MarginalSet<S>,
    i: usize,
    j: usize,
    radius: S,
) -> Result<Vec<S>> {
    if i == j {
        return Err(Error::param("populations", "separation needs two distinct populations"));
    }
    let plan = ConvolutionPlan::new(&InteractionKernel::ball(S::one(), radius)?, grid)?;
    (0..=marginals.steps())
        .map(|k| {
            let field = plan.convolve(marginals.get(j, k)?)?;
            Ok(dot(&field, marginals.get(i, k)?).max(S::zero()).min(S::one()))
        })
        .collect()
}

/// Mass-weighted mean position.
pub fn barycenter<S: Scalar>(grid: &GridSpec<S>, mass: &[S]) -> Result<Vec<S>> {
    grid.check_len(mass.len())?;
    let total: S = mass.iter().copied().sum();
    if !(total > S::zero()) {
        return Err(Error::InvalidField("barycenter of a field without mass".into()));
    }
    let mut b = vec![S::zero(); grid.dims()];
    for (flat, &m) in mass.iter().enumerate() {
        for (bc, c) in b.iter_mut().zip(grid.cell_center(flat)) {
            *bc = *bc + m * c;
        }
    }
    Ok(b.into_iter().map(|x| x / total).collect())
}

/// `sum_x rho(x) |x - b|^2 / sum_x rho(x)` about the barycenter `b`.
pub fn second_moment<S: Scalar>(grid: &GridSpec<S>, mass: &[S]) -> Result<S> {
    let b = barycenter(grid, mass)?;
    let total: S = mass.iter().copied().sum();
    let mut acc = S::zero();
    for (flat, &m) in mass.iter().enumerate() {
        let d2: S = grid
            .cell_center(flat)
            .iter()
            .zip(&b)
            .map(|(&c, &bc)| (c - bc) * (c - bc))
            .sum();
        acc = acc + m * d2;
    }
    Ok(acc / total)
}

/// `sum_x |a(x) - b(P x)|` for a cell permutation `P` (see [`GridSpec::reflection`]).
pub fn mirror_distance<S: Scalar>(a: &[S], b: &[S], permutation: &[usize]) -> Result<S> {
    if a.len() != b.len() || a.len() != permutation.len() {
        return Err(Error::ShapeMismatch {
            expected: a.len(),
            actual: b.len().min(permutation.len()),
        });
    }
    Ok(a.iter()
        .zip(permutation)
        .map(|(&x, &p)| (x - b[p]).abs())
        .sum())
}
