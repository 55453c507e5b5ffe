//! Multi-marginal entropic machinery for one population's path plan.
//!
//! The discrete reference measure is the Markov chain
//! `R(x_0, ..., x_K) = r_0(x_0) * prod_k H(x_k, x_{k-1})` with a uniform
//! initial law `r_0 = 1 / M` and the (column-stochastic, symmetric) heat
//! kernel `H` of variance `epsilon * T / K`. A plan of product form
//! `pi = prod_k exp(u_k(x_k)) * R` is handled through messages
//!
//! ```text
//! alpha_0 = 1,  alpha_{k+1} = H (e^{u_k} alpha_k)
//! beta_K  = 1,  beta_{k-1}  = H (e^{u_k} beta_k)
//! rho_k   = r_0 e^{u_k} alpha_k beta_k
//! ```
//!
//! so every time marginal costs `O(K)` kernel applications and the
//! `M^{K+1}` tensor never exists. In [`MessageMode::Log`] the messages hold
//! `log alpha`, `log beta` and the kernel is applied with log-sum-exp.

use serde::{Deserialize, Serialize};

use crate::grid::{discretize_heat_kernel, Boundary, GridSpec, MassField, ScalarField, SeparableKernel};
use crate::scalar::{dot, Scalar};
use crate::{Error, Result};

/// Dual potentials `u[i][k]`, `i < N`, `k <= K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialStack<S> {
    u: Vec<Vec<ScalarField<S>>>,
}

impl<S: Scalar> PotentialStack<S> {
    pub fn zeros(populations: usize, steps: usize, cells: usize) -> Self {
        Self {
            u: vec![vec![ScalarField::zeros(cells); steps + 1]; populations],
        }
    }

    pub fn from_fields(u: Vec<Vec<ScalarField<S>>>) -> Self {
        Self { u }
    }

    pub fn populations(&self) -> usize {
        self.u.len()
    }

    pub fn steps(&self) -> usize {
        self.u.first().map_or(0, |p| p.len().saturating_sub(1))
    }

    pub fn get(&self, i: usize, k: usize) -> &ScalarField<S> {
        &self.u[i][k]
    }

    pub fn set(&mut self, i: usize, k: usize, field: ScalarField<S>) {
        self.u[i][k] = field;
    }

    pub fn population(&self, i: usize) -> &[ScalarField<S>] {
        &self.u[i]
    }

    /// Sup-norm distance to another stack of the same shape.
    pub fn max_change(&self, other: &Self) -> S {
        self.u
            .iter()
            .flatten()
            .zip(other.u.iter().flatten())
            .map(|(a, b)| crate::scalar::sup_distance(a.values(), b.values()))
            .fold(S::zero(), S::max)
    }

    /// Number of scalars held.
    pub fn storage_len(&self) -> usize {
        self.u.iter().flatten().map(ScalarField::len).sum()
    }
}

/// Time marginals `rho[i][k]` of every population's plan, as raw masses.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSet<S> {
    rho: Vec<Vec<Vec<S>>>,
}

impl<S: Scalar> MarginalSet<S> {
    pub fn from_fields(rho: Vec<Vec<Vec<S>>>) -> Self {
        Self { rho }
    }

    pub fn populations(&self) -> usize {
        self.rho.len()
    }

    pub fn steps(&self) -> usize {
        self.rho.first().map_or(0, |p| p.len().saturating_sub(1))
    }

    pub fn cells(&self) -> usize {
        self.rho
            .iter()
            .flatten()
            .next()
            .map_or(0, Vec::len)
    }

    pub fn get(&self, i: usize, k: usize) -> Result<&[S]> {
        self.rho
            .get(i)
            .and_then(|p| p.get(k))
            .map(Vec::as_slice)
            .ok_or(Error::MissingMarginal {
                population: i,
                step: k,
            })
    }

    pub fn population(&self, i: usize) -> &[Vec<S>] {
        &self.rho[i]
    }

    pub fn set_population(&mut self, i: usize, marginals: Vec<Vec<S>>) {
        self.rho[i] = marginals;
    }

    pub fn total(&self, i: usize, k: usize) -> Result<S> {
        Ok(self.get(i, k)?.iter().copied().sum())
    }

    /// The marginal rescaled to unit mass.
    pub fn normalized(&self, i: usize, k: usize) -> Result<MassField<S>> {
        crate::grid::normalize(self.get(i, k)?)
    }

    pub fn storage_len(&self) -> usize {
        self.rho.iter().flatten().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageMode {
    Linear,
    Log,
}

impl MessageMode {
    /// Linear messages on coarse diffusion, log-domain once the per-step
    /// variance falls below four squared cells.
    pub fn auto<S: Scalar>(tau: S, min_spacing: S) -> Self {
        if tau < S::lit(4.0) * min_spacing * min_spacing {
            MessageMode::Log
        } else {
            MessageMode::Linear
        }
    }

    fn neutral<S: Scalar>(self) -> S {
        match self {
            MessageMode::Linear => S::one(),
            MessageMode::Log => S::zero(),
        }
    }
}

/// The normalized discrete reference: uniform initial law and heat-kernel steps.
#[derive(Debug, Clone)]
pub struct MarkovReference<S> {
    kernel: SeparableKernel<S>,
    log_initial: S,
}

impl<S: Scalar> MarkovReference<S> {
    pub fn new(grid: &GridSpec<S>, tau: S, boundary: Boundary) -> Result<Self> {
        Ok(Self {
            kernel: discretize_heat_kernel(grid, tau, boundary)?,
            log_initial: -S::of_usize(grid.len()).ln(),
        })
    }

    pub fn kernel(&self) -> &SeparableKernel<S> {
        &self.kernel
    }

    /// `log r_0`, identical on every cell.
    pub fn log_initial(&self) -> S {
        self.log_initial
    }

    pub fn cells(&self) -> usize {
        self.kernel.len()
    }
}

fn check_finite<S: Scalar>(v: &[S], what: &'static str) -> Result<()> {
    if v.iter().any(|x| x.is_nan() || *x == S::infinity()) {
        return Err(Error::Overflow(what));
    }
    Ok(())
}

/// `H (e^{u} * m)` in the representation of `mode`.
fn transport<S: Scalar>(
    reference: &MarkovReference<S>,
    mode: MessageMode,
    u: &ScalarField<S>,
    message: &[S],
) -> Result<Vec<S>> {
    let out = match mode {
        MessageMode::Linear => {
            let tilted: Vec<S> = u
                .values()
                .iter()
                .zip(message)
                .map(|(&uk, &m)| uk.exp() * m)
                .collect();
            reference.kernel.apply(&tilted)?
        }
        MessageMode::Log => {
            let tilted: Vec<S> = u.values().iter().zip(message).map(|(&uk, &m)| uk + m).collect();
            reference.kernel.apply_log(&tilted)?
        }
    };
    check_finite(&out, "message")?;
    Ok(out)
}

fn check_potentials<S: Scalar>(u: &[ScalarField<S>], reference: &MarkovReference<S>) -> Result<()> {
    if u.is_empty() {
        return Err(Error::param("potentials", "need at least one time index"));
    }
    for f in u {
        if f.len() != reference.cells() {
            return Err(Error::ShapeMismatch {
                expected: reference.cells(),
                actual: f.len(),
            });
        }
    }
    Ok(())
}

/// `alpha_0, ..., alpha_K` for one population's potentials.
pub fn forward_messages<S: Scalar>(
    u: &[ScalarField<S>],
    reference: &MarkovReference<S>,
    mode: MessageMode,
) -> Result<Vec<Vec<S>>> {
    check_potentials(u, reference)?;
    let mut alpha = Vec::with_capacity(u.len());
    alpha.push(vec![mode.neutral::<S>(); reference.cells()]);
    for k in 0..u.len() - 1 {
        let next = transport(reference, mode, &u[k], &alpha[k])?;
        alpha.push(next);
    }
    Ok(alpha)
}

/// `beta_0, ..., beta_K` for one population's potentials.
pub fn backward_messages<S: Scalar>(
    u: &[ScalarField<S>],
    reference: &MarkovReference<S>,
    mode: MessageMode,
) -> Result<Vec<Vec<S>>> {
    check_potentials(u, reference)?;
    let steps = u.len() - 1;
    let mut beta = vec![Vec::new(); steps + 1];
    beta[steps] = vec![mode.neutral::<S>(); reference.cells()];
    for k in (1..=steps).rev() {
        beta[k - 1] = transport(reference, mode, &u[k], &beta[k])?;
    }
    Ok(beta)
}

/// `r_0 e^{u_k} alpha_k beta_k`.
pub fn marginal<S: Scalar>(
    u_k: &ScalarField<S>,
    alpha_k: &[S],
    beta_k: &[S],
    reference: &MarkovReference<S>,
    mode: MessageMode,
) -> Result<Vec<S>> {
    let r0 = reference.log_initial;
    let out: Vec<S> = u_k
        .values()
        .iter()
        .zip(alpha_k.iter().zip(beta_k))
        .map(|(&u, (&a, &b))| match mode {
            MessageMode::Linear => r0.exp() * u.exp() * a * b,
            MessageMode::Log => (r0 + u + a + b).exp(),
        })
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow("marginal"));
    }
    Ok(out)
}

/// Total plan mass `r_0 <e^{u_k} alpha_k, beta_k>` (independent of `k`).
pub fn plan_mass<S: Scalar>(
    u_k: &ScalarField<S>,
    alpha_k: &[S],
    beta_k: &[S],
    reference: &MarkovReference<S>,
    mode: MessageMode,
) -> Result<S> {
    Ok(marginal(u_k, alpha_k, beta_k, reference, mode)?.iter().copied().sum())
}

/// `H(pi | R) = sum_k <u_k, rho_k>`, exact for product-form plans because
/// `log(d pi / d R) = sum_k u_k(x_k)`.
pub fn plan_entropy<S: Scalar>(u: &[ScalarField<S>], marginals: &[Vec<S>]) -> Result<S> {
    if u.len() != marginals.len() || u.is_empty() {
        return Err(Error::param("marginals", "one marginal per potential required"));
    }
    let mass: S = marginals[0].iter().copied().sum();
    if (mass - S::one()).abs() > S::sum_tolerance(1e-9, marginals[0].len()) {
        return Err(Error::Unnormalized {
            mass: mass.to_f64_lossy(),
        });
    }
    Ok(u
        .iter()
        .zip(marginals)
        .map(|(uk, rho)| dot(uk.values(), rho))
        .sum())
}

/// Forward and backward messages of one population.
#[derive(Debug, Clone)]
pub struct Messages<S> {
    mode: MessageMode,
    alpha: Vec<Vec<S>>,
    beta: Vec<Vec<S>>,
}

impl<S: Scalar> Messages<S> {
    pub fn compute(u: &[ScalarField<S>], reference: &MarkovReference<S>, mode: MessageMode) -> Result<Self> {
        Ok(Self {
            mode,
            alpha: forward_messages(u, reference, mode)?,
            beta: backward_messages(u, reference, mode)?,
        })
    }

    pub fn mode(&self) -> MessageMode {
        self.mode
    }

    pub fn alpha(&self, k: usize) -> &[S] {
        &self.alpha[k]
    }

    pub fn beta(&self, k: usize) -> &[S] {
        &self.beta[k]
    }

    pub fn refresh_forward(&mut self, u: &[ScalarField<S>], reference: &MarkovReference<S>) -> Result<()> {
        self.alpha = forward_messages(u, reference, self.mode)?;
        Ok(())
    }

    pub fn refresh_backward(&mut self, u: &[ScalarField<S>], reference: &MarkovReference<S>) -> Result<()> {
        self.beta = backward_messages(u, reference, self.mode)?;
        Ok(())
    }

    /// Update after `u[changed]` alone was modified: only `alpha_{k > changed}`
    /// and `beta_{k < changed}` depend on it.
    pub fn refresh_after_change(
        &mut self,
        u: &[ScalarField<S>],
        reference: &MarkovReference<S>,
        changed: usize,
    ) -> Result<()> {
        for k in changed..u.len() - 1 {
            self.alpha[k + 1] = transport(reference, self.mode, &u[k], &self.alpha[k])?;
        }
        for k in (1..=changed).rev() {
            self.beta[k - 1] = transport(reference, self.mode, &u[k], &self.beta[k])?;
        }
        Ok(())
    }

    pub fn marginal(&self, k: usize, u: &[ScalarField<S>], reference: &MarkovReference<S>) -> Result<Vec<S>> {
        marginal(&u[k], &self.alpha[k], &self.beta[k], reference, self.mode)
    }

    pub fn marginals(&self, u: &[ScalarField<S>], reference: &MarkovReference<S>) -> Result<Vec<Vec<S>>> {
        (0..u.len()).map(|k| self.marginal(k, u, reference)).collect()
    }

    pub fn mass(&self, k: usize, u: &[ScalarField<S>], reference: &MarkovReference<S>) -> Result<S> {
        plan_mass(&u[k], &self.alpha[k], &self.beta[k], reference, self.mode)
    }

    pub fn storage_len(&self) -> usize {
        self.alpha.iter().chain(&self.beta).map(Vec::len).sum()
    }
}

/// Messages of every population, owned by one solver.
#[derive(Debug, Clone)]
pub struct MessageCache<S> {
    per_population: Vec<Messages<S>>,
}

impl<S: Scalar> MessageCache<S> {
    pub fn new(potentials: &PotentialStack<S>, reference: &MarkovReference<S>, mode: MessageMode) -> Result<Self> {
        let per_population = (0..potentials.populations())
            .map(|i| Messages::compute(potentials.population(i), reference, mode))
            .collect::<Result<_>>()?;
        Ok(Self { per_population })
    }

    pub fn get(&self, i: usize) -> &Messages<S> {
        &self.per_population[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Messages<S> {
        &mut self.per_population[i]
    }

    pub fn storage_len(&self) -> usize {
        self.per_population.iter().map(Messages::storage_len).sum()
    }
}
