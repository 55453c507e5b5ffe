//! Non-local interaction potentials `V^{i,j}` and their convolution with
//! density marginals.
//!
//! Every kernel is sampled once on the grid's displacement lattice (offsets
//! `-(n_a - 1) ..= n_a - 1` on each axis). Convolution against a mass field
//! then is `out(x) = sum_y V(x - y) mass(y)`, evaluated by direct summation
//! on small grids and by an FFT over the displacement lattice otherwise.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::grid::{GridSpec, ScalarField};
use crate::mmot::MarginalSet;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Grids with at most this many cells use direct summation.
pub const DENSE_THRESHOLD: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum InteractionKernel<S> {
    Zero,
    /// `strength` inside the open ball of `radius`, zero outside.
    BallIndicator { strength: S, radius: S },
    /// `min(cap, 1 / |z|)`; the self-cell takes the cap.
    TruncatedCoulomb { cap: S },
    /// Piecewise-linear in `|z|` through `(radii, values)`, zero past the last radius.
    Radial { radii: Vec<S>, values: Vec<S> },
    /// Values given directly on a displacement lattice.
    Tabulated(DisplacementTable<S>),
}

impl<S: Scalar> InteractionKernel<S> {
    pub fn ball(strength: S, radius: S) -> Result<Self> {
        if !(strength >= S::zero()) || !(radius > S::zero()) {
            return Err(Error::param("ball", "strength must be >= 0 and radius > 0"));
        }
        Ok(Self::BallIndicator { strength, radius })
    }

    pub fn truncated_coulomb(cap: S) -> Result<Self> {
        if !(cap > S::zero()) || !cap.is_finite() {
            return Err(Error::param("cap", "must be positive and finite"));
        }
        Ok(Self::TruncatedCoulomb { cap })
    }

    pub fn radial(radii: Vec<S>, values: Vec<S>) -> Result<Self> {
        if radii.is_empty() || radii.len() != values.len() {
            return Err(Error::param("radial", "radii and values must be non-empty and equal length"));
        }
        if radii.windows(2).any(|w| !(w[1] > w[0])) || radii[0] < S::zero() {
            return Err(Error::param("radial", "radii must be nonnegative and increasing"));
        }
        if values.iter().any(|v| !(*v >= S::zero()) || !v.is_finite()) {
            return Err(Error::param("radial", "values must be finite and nonnegative"));
        }
        Ok(Self::Radial { radii, values })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::BallIndicator { strength, .. } => *strength == S::zero(),
            _ => false,
        }
    }

    /// Whether `V(z) = V(-z)`.
    pub fn is_symmetric(&self) -> bool {
        match self {
            Self::Tabulated(t) => t.symmetric,
            _ => true,
        }
    }

    /// Evaluate at displacement `z`.
    pub fn eval(&self, z: &[S]) -> S {
        let norm = || z.iter().map(|&c| c * c).sum::<S>().sqrt();
        match self {
            Self::Zero => S::zero(),
            Self::BallIndicator { strength, radius } => {
                if norm() < *radius {
                    *strength
                } else {
                    S::zero()
                }
            }
            Self::TruncatedCoulomb { cap } => {
                let r = norm();
                if r == S::zero() {
                    *cap
                } else {
                    cap.min(r.recip())
                }
            }
            Self::Radial { radii, values } => {
                let r = norm();
                if r <= radii[0] {
                    return values[0];
                }
                match radii.iter().position(|&x| x >= r) {
                    None => S::zero(),
                    Some(hi) => {
                        let lo = hi - 1;
                        let t = (r - radii[lo]) / (radii[hi] - radii[lo]);
                        values[lo] + t * (values[hi] - values[lo])
                    }
                }
            }
            Self::Tabulated(t) => t.eval(z),
        }
    }

    /// Samples on the displacement lattice of `grid`, row-major over
    /// `(2 n_1 - 1) x ... x (2 n_d - 1)` with offset `-(n_a - 1)` first.
    pub fn displacement_table(&self, grid: &GridSpec<S>) -> Result<Vec<S>> {
        let shape = lattice_shape(grid.points());
        if let Self::Tabulated(t) = self {
            if t.points != grid.points() {
                return Err(Error::param("tabulated", "table lattice does not match the grid"));
            }
            return Ok(t.values.clone());
        }
        let total: usize = shape.iter().product();
        let values = (0..total)
            .map(|flat| {
                let z = lattice_displacement(flat, grid.points(), grid.spacing());
                self.eval(&z)
            })
            .collect();
        Ok(values)
    }
}

fn lattice_shape(points: &[usize]) -> Vec<usize> {
    points.iter().map(|&n| 2 * n - 1).collect()
}

fn lattice_displacement<S: Scalar>(mut flat: usize, points: &[usize], spacing: &[S]) -> Vec<S> {
    let mut z = vec![S::zero(); points.len()];
    for a in (0..points.len()).rev() {
        let len = 2 * points[a] - 1;
        let offset = (flat % len) as i64 - (points[a] as i64 - 1);
        flat /= len;
        z[a] = S::from_i64(offset).unwrap() * spacing[a];
    }
    z
}

/// A kernel tabulated on a grid's displacement lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementTable<S> {
    points: Vec<usize>,
    spacing: Vec<S>,
    values: Vec<S>,
    symmetric: bool,
}

impl<S: Scalar> DisplacementTable<S> {
    pub fn new(grid: &GridSpec<S>, values: Vec<S>) -> Result<Self> {
        let expected: usize = lattice_shape(grid.points()).iter().product();
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !(*v >= S::zero()) || !v.is_finite()) {
            return Err(Error::param("tabulated", "values must be finite and nonnegative"));
        }
        // V(-z) sits at the mirrored flat index.
        let symmetric = (0..values.len()).all(|i| values[i] == values[expected - 1 - i]);
        Ok(Self {
            points: grid.points().to_vec(),
            spacing: grid.spacing().to_vec(),
            values,
            symmetric,
        })
    }

    /// Decode little-endian `f64` values.
    pub fn from_le_bytes(grid: &GridSpec<S>, bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(8) {
            return Err(Error::param("tabulated", "byte length is not a multiple of 8"));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| S::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Self::new(grid, values)
    }

    pub fn read(grid: &GridSpec<S>, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_le_bytes(grid, &bytes)
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    /// Nearest lattice sample; zero outside the lattice.
    fn eval(&self, z: &[S]) -> S {
        let mut flat = 0usize;
        for (a, (&n, &h)) in self.points.iter().zip(&self.spacing).enumerate() {
            let offset = (z[a] / h).round().to_i64().unwrap_or(i64::MAX);
            if offset.unsigned_abs() as usize >= n {
                return S::zero();
            }
            flat = flat * (2 * n - 1) + (offset + n as i64 - 1) as usize;
        }
        self.values[flat]
    }
}

/// `N x N` interaction kernels; the diagonal is always [`InteractionKernel::Zero`].
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix<S> {
    populations: usize,
    kernels: Vec<InteractionKernel<S>>,
}

impl<S: Scalar> InteractionMatrix<S> {
    pub fn zero(populations: usize) -> Self {
        Self {
            populations,
            kernels: vec![InteractionKernel::Zero; populations * populations],
        }
    }

    /// The same kernel for every ordered pair `i != j`.
    pub fn uniform(populations: usize, kernel: InteractionKernel<S>) -> Self {
        let mut m = Self::zero(populations);
        for i in 0..populations {
            for j in 0..populations {
                if i != j {
                    m.kernels[i * populations + j] = kernel.clone();
                }
            }
        }
        m
    }

    pub fn populations(&self) -> usize {
        self.populations
    }

    /// Set `V^{i,j}` (zero-based).
    pub fn set(&mut self, i: usize, j: usize, kernel: InteractionKernel<S>) -> Result<()> {
        if i >= self.populations || j >= self.populations {
            return Err(Error::param("interaction", format!("pair ({i}, {j}) out of range")));
        }
        if i == j {
            return Err(Error::param("interaction", "self-interaction is not part of the model"));
        }
        self.kernels[i * self.populations + j] = kernel;
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> &InteractionKernel<S> {
        &self.kernels[i * self.populations + j]
    }

    pub fn is_zero(&self) -> bool {
        self.kernels.iter().all(InteractionKernel::is_zero)
    }

    /// `V^{i,j} = V^{j,i}` for all pairs and each kernel even.
    pub fn is_symmetric(&self) -> bool {
        (0..self.populations).all(|i| {
            (0..self.populations)
                .all(|j| self.get(i, j) == self.get(j, i) && self.get(i, j).is_symmetric())
        })
    }
}

/// A kernel prepared for repeated convolution on one grid.
pub struct ConvolutionPlan<S: Scalar> {
    points: Vec<usize>,
    table: Vec<S>,
    zero: bool,
    spectral: Option<Spectral<S>>,
}

struct Spectral<S: Scalar> {
    forward: Vec<Arc<dyn Fft<S>>>,
    inverse: Vec<Arc<dyn Fft<S>>>,
    table_hat: Vec<Complex<S>>,
}

impl<S: Scalar> ConvolutionPlan<S> {
    pub fn new(kernel: &InteractionKernel<S>, grid: &GridSpec<S>) -> Result<Self> {
        Self::with_threshold(kernel, grid, DENSE_THRESHOLD)
    }

    /// Plan that switches to the FFT path when the grid exceeds `threshold` cells.
    pub fn with_threshold(kernel: &InteractionKernel<S>, grid: &GridSpec<S>, threshold: usize) -> Result<Self> {
        let table = kernel.displacement_table(grid)?;
        let zero = table.iter().all(|&v| v == S::zero());
        let spectral = if !zero && grid.len() > threshold {
            Some(Spectral::new(&table, grid.points()))
        } else {
            None
        };
        Ok(Self {
            points: grid.points().to_vec(),
            table,
            zero,
            spectral,
        })
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn uses_fft(&self) -> bool {
        self.spectral.is_some()
    }

    /// `out(x) = sum_y V(x - y) mass(y)`.
    pub fn convolve(&self, mass: &[S]) -> Result<Vec<S>> {
        if mass.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                actual: mass.len(),
            });
        }
        if self.zero {
            return Ok(vec![S::zero(); mass.len()]);
        }
        Ok(match &self.spectral {
            Some(s) => s.convolve(mass, &self.points),
            None => self.convolve_dense(mass),
        })
    }

    /// Direct double sum, regardless of grid size.
    pub fn convolve_dense(&self, mass: &[S]) -> Vec<S> {
        // The lattice index of `x - y` splits as `base(x) - offset(y)`.
        let d = self.points.len();
        let mut strides = vec![1usize; d];
        for a in (0..d.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * (2 * self.points[a + 1] - 1);
        }
        let split = |mut flat: usize, shift: bool| -> usize {
            let mut t = 0;
            for a in (0..d).rev() {
                let c = flat % self.points[a];
                flat /= self.points[a];
                t += (c + if shift { self.points[a] - 1 } else { 0 }) * strides[a];
            }
            t
        };
        let support: Vec<(usize, S)> = (0..mass.len())
            .filter(|&y| mass[y] != S::zero())
            .map(|y| (split(y, false), mass[y]))
            .collect();
        (0..mass.len())
            .into_par_iter()
            .map(|x| {
                let base = split(x, true);
                support.iter().map(|&(off, m)| self.table[base - off] * m).sum()
            })
            .collect()
    }
}

impl<S: Scalar> Spectral<S> {
    fn new(table: &[S], points: &[usize]) -> Self {
        let shape = lattice_shape(points);
        let mut planner = FftPlanner::new();
        let forward: Vec<_> = shape.iter().map(|&l| planner.plan_fft_forward(l)).collect();
        let inverse = shape.iter().map(|&l| planner.plan_fft_inverse(l)).collect();
        let mut table_hat: Vec<Complex<S>> = table.iter().map(|&v| Complex::new(v, S::zero())).collect();
        fft_nd(&mut table_hat, &shape, &forward);
        Self {
            forward,
            inverse,
            table_hat,
        }
    }

    fn convolve(&self, mass: &[S], points: &[usize]) -> Vec<S> {
        let shape = lattice_shape(points);
        let total: usize = shape.iter().product();
        let d = points.len();
        let mut buf = vec![Complex::new(S::zero(), S::zero()); total];
        for (flat, &m) in mass.iter().enumerate() {
            buf[embed(flat, points, &shape, &vec![0; d])] = Complex::new(m, S::zero());
        }
        fft_nd(&mut buf, &shape, &self.forward);
        for (b, t) in buf.iter_mut().zip(&self.table_hat) {
            *b = *b * *t;
        }
        fft_nd(&mut buf, &shape, &self.inverse);
        let scale = S::of_usize(total).recip();
        let shift: Vec<usize> = points.iter().map(|&n| n - 1).collect();
        (0..mass.len())
            .map(|flat| buf[embed(flat, points, &shape, &shift)].re * scale)
            .collect()
    }
}

/// Flat index in `shape` of grid cell `flat` shifted by `shift` per axis.
fn embed(mut flat: usize, points: &[usize], shape: &[usize], shift: &[usize]) -> usize {
    let mut idx = vec![0; points.len()];
    for a in (0..points.len()).rev() {
        idx[a] = flat % points[a] + shift[a];
        flat /= points[a];
    }
    idx.iter().zip(shape).fold(0, |acc, (&i, &l)| acc * l + i)
}

fn fft_nd<S: Scalar>(buf: &mut [Complex<S>], shape: &[usize], plans: &[Arc<dyn Fft<S>>]) {
    for (axis, plan) in plans.iter().enumerate() {
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        if inner == 1 {
            plan.process(buf);
            continue;
        }
        let mut fiber = vec![Complex::new(S::zero(), S::zero()); n];
        for block in buf.chunks_mut(n * inner) {
            for i in 0..inner {
                for b in 0..n {
                    fiber[b] = block[b * inner + i];
                }
                plan.process(&mut fiber);
                for b in 0..n {
                    block[b * inner + i] = fiber[b];
                }
            }
        }
    }
}

/// One-shot convolution of `rho` with `kernel` on `grid`.
pub fn convolve_density<S: Scalar>(
    kernel: &InteractionKernel<S>,
    grid: &GridSpec<S>,
    rho: &[S],
) -> Result<ScalarField<S>> {
    grid.check_len(rho.len())?;
    let plan = ConvolutionPlan::new(kernel, grid)?;
    ScalarField::new(plan.convolve(rho)?)
}

/// Convolution plans for every ordered pair of an [`InteractionMatrix`].
pub struct InteractionPlans<S: Scalar> {
    populations: usize,
    plans: Vec<Option<ConvolutionPlan<S>>>,
}

impl<S: Scalar> InteractionPlans<S> {
    pub fn new(matrix: &InteractionMatrix<S>, grid: &GridSpec<S>) -> Result<Self> {
        let n = matrix.populations();
        let mut plans = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let k = matrix.get(i, j);
                plans.push(if i == j || k.is_zero() {
                    None
                } else {
                    Some(ConvolutionPlan::new(k, grid)?)
                });
            }
        }
        Ok(Self {
            populations: n,
            plans,
        })
    }

    pub fn populations(&self) -> usize {
        self.populations
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&ConvolutionPlan<S>> {
        self.plans[i * self.populations + j].as_ref()
    }

    pub fn is_zero(&self) -> bool {
        self.plans.iter().all(Option::is_none)
    }

    /// `sum_{j != i} (V^{i,j} [+ V^{j,i}]) * rho^j_k`, unweighted.
    pub fn interaction_field(
        &self,
        i: usize,
        k: usize,
        marginals: &MarginalSet<S>,
        symmetrize: bool,
    ) -> Result<Vec<S>> {
        let len = marginals.cells();
        let mut field = vec![S::zero(); len];
        for j in 0..self.populations {
            if j == i {
                continue;
            }
            let directions = [Some((i, j)), symmetrize.then_some((j, i))];
            for (a, b) in directions.into_iter().flatten() {
                if let Some(plan) = self.get(a, b) {
                    let rho = marginals.get(j, k)?;
                    for (f, c) in field.iter_mut().zip(plan.convolve(rho)?) {
                        *f = *f + c;
                    }
                }
            }
        }
        Ok(field)
    }
}

/// The field exponentiated by the interior potential update for
/// population `i` at time index `k`: `weight * sum_{j != i} V^{i,j} * rho^j_k`
/// (with `V^{i,j} + V^{j,i}` when `symmetrize`).
pub fn assemble_linearized_potential<S: Scalar>(
    i: usize,
    k: usize,
    plans: &InteractionPlans<S>,
    marginals: &MarginalSet<S>,
    symmetrize: bool,
    weight: S,
) -> Result<ScalarField<S>> {
    let mut field = plans.interaction_field(i, k, marginals, symmetrize)?;
    for f in &mut field {
        *f = *f * weight;
    }
    ScalarField::new(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::gaussian_field;

    fn unit(points: &[usize]) -> GridSpec<f64> {
        GridSpec::unit(points).unwrap()
    }

    #[test]
    fn ball_indicator_values() {
        let v = InteractionKernel::ball(120.0, 0.2).unwrap();
        assert_eq!(v.eval(&[0.1, 0.0]), 120.0);
        assert_eq!(v.eval(&[0.0, 0.2]), 0.0);
        assert_eq!(v.eval(&[0.3, 0.0]), 0.0);
    }

    #[test]
    fn truncated_coulomb_values() {
        let v = InteractionKernel::truncated_coulomb(1000.0).unwrap();
        assert_eq!(v.eval(&[0.0, 0.0]), 1000.0);
        assert!((v.eval(&[0.1, 0.0]) - 10.0f64).abs() < 1e-12);
        assert_eq!(v.eval(&[1e-5, 0.0]), 1000.0);
    }

    #[test]
    fn radial_interpolates() {
        let v = InteractionKernel::radial(vec![0.0, 1.0], vec![4.0, 2.0]).unwrap();
        assert!((v.eval(&[0.5]) - 3.0f64).abs() < 1e-15);
        assert_eq!(v.eval(&[2.0]), 0.0);
        assert!(InteractionKernel::radial(vec![1.0, 0.5], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn zero_kernel_gives_zero_field() {
        let g = unit(&[5, 5]);
        let rho = gaussian_field(&g, &[0.5, 0.5], &[10.0, 10.0]).unwrap();
        let out = convolve_density(&InteractionKernel::Zero, &g, rho.values()).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dirac_sifting() {
        let g = unit(&[10, 10]);
        let y0 = g.ravel(&[4, 6]);
        let mut rho = vec![0.0; g.len()];
        rho[y0] = 1.0;
        let v = InteractionKernel::truncated_coulomb(1000.0).unwrap();
        let out = convolve_density(&v, &g, &rho).unwrap();
        let c0 = g.cell_center(y0);
        for x in 0..g.len() {
            let cx = g.cell_center(x);
            let z = [cx[0] - c0[0], cx[1] - c0[1]];
            assert!((out.values()[x] - v.eval(&z)).abs() < 1e-12);
        }
    }

    /// Dense oracle: explicit double loop over cell centers.
    fn brute_force(v: &InteractionKernel<f64>, g: &GridSpec<f64>, rho: &[f64]) -> Vec<f64> {
        (0..g.len())
            .map(|x| {
                let cx = g.cell_center(x);
                (0..g.len())
                    .map(|y| {
                        let cy = g.cell_center(y);
                        let z: Vec<f64> = cx.iter().zip(&cy).map(|(a, b)| a - b).collect();
                        v.eval(&z) * rho[y]
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn fft_matches_dense_on_8x8() {
        let g = unit(&[8, 8]);
        let rho: Vec<f64> = (0..64).map(|i| ((i * 7919) % 97) as f64).collect();
        let rho = crate::grid::normalize(&rho).unwrap();
        let v = InteractionKernel::ball(120.0, 0.2).unwrap();
        let fft = ConvolutionPlan::with_threshold(&v, &g, 0).unwrap();
        assert!(fft.uses_fft());
        let a = fft.convolve(rho.values()).unwrap();
        let b = brute_force(&v, &g, rho.values());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn fft_handles_odd_three_dimensional_grid() {
        let g = unit(&[3, 4, 5]);
        let rho: Vec<f64> = (0..60).map(|i| 1.0 + (i as f64).sin().abs()).collect();
        let v = InteractionKernel::truncated_coulomb(50.0).unwrap();
        let fft = ConvolutionPlan::with_threshold(&v, &g, 0).unwrap();
        let dense = ConvolutionPlan::with_threshold(&v, &g, usize::MAX).unwrap();
        let a = fft.convolve(&rho).unwrap();
        let b = dense.convolve(&rho).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn tabulated_roundtrip_through_bytes() {
        let g = unit(&[4, 3]);
        let v = InteractionKernel::ball(2.0, 0.5).unwrap();
        let table = v.displacement_table(&g).unwrap();
        assert_eq!(table.len(), 7 * 5);
        let bytes: Vec<u8> = table.iter().flat_map(|x| x.to_le_bytes()).collect();
        let t = DisplacementTable::from_le_bytes(&g, &bytes).unwrap();
        let tab = InteractionKernel::Tabulated(t);
        assert!(tab.is_symmetric());
        let rho = gaussian_field(&g, &[0.3, 0.6], &[5.0, 5.0]).unwrap();
        let a = convolve_density(&v, &g, rho.values()).unwrap();
        let b = convolve_density(&tab, &g, rho.values()).unwrap();
        assert_eq!(a, b);
        assert!(DisplacementTable::from_le_bytes(&g, &bytes[..16]).is_err());
    }

    #[test]
    fn asymmetric_table_detected() {
        let g = unit(&[2]);
        let t = DisplacementTable::new(&g, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(!InteractionKernel::Tabulated(t).is_symmetric());
    }

    #[test]
    fn matrix_diagonal_stays_zero() {
        let mut m = InteractionMatrix::<f64>::zero(3);
        assert!(m.set(1, 1, InteractionKernel::ball(1.0, 0.1).unwrap()).is_err());
        m.set(0, 2, InteractionKernel::ball(1.0, 0.1).unwrap()).unwrap();
        assert!(!m.is_symmetric());
        let u = InteractionMatrix::uniform(3, InteractionKernel::ball(1.0, 0.1).unwrap());
        assert!(u.is_symmetric());
        assert_eq!(u.get(2, 2), &InteractionKernel::Zero);
    }

    #[test]
    fn assemble_two_population_cases() {
        let g = unit(&[6, 6]);
        let rho1 = gaussian_field(&g, &[0.2, 0.5], &[20.0, 20.0]).unwrap();
        let rho2 = gaussian_field(&g, &[0.7, 0.5], &[20.0, 20.0]).unwrap();
        let marg = MarginalSet::from_fields(vec![vec![rho1.into_values()], vec![rho2.into_values()]]);

        let zero = InteractionPlans::new(&InteractionMatrix::zero(2), &g).unwrap();
        let f = assemble_linearized_potential(0, 0, &zero, &marg, false, 1.0).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));

        let m = InteractionMatrix::uniform(2, InteractionKernel::ball(120.0, 0.2).unwrap());
        let plans = InteractionPlans::new(&m, &g).unwrap();
        let one = assemble_linearized_potential(0, 0, &plans, &marg, false, 1.0).unwrap();
        let two = assemble_linearized_potential(0, 0, &plans, &marg, true, 1.0).unwrap();
        for (a, b) in one.values().iter().zip(two.values()) {
            assert_eq!(2.0 * a, *b);
        }
        assert!(one.values().iter().any(|&v| v > 0.0));
    }

    #[test]
    fn missing_marginal_is_reported() {
        let g = unit(&[3]);
        let m = InteractionMatrix::uniform(2, InteractionKernel::ball(1.0, 0.5).unwrap());
        let plans = InteractionPlans::new(&m, &g).unwrap();
        let marg = MarginalSet::from_fields(vec![vec![vec![1.0 / 3.0; 3]], vec![]]);
        assert!(matches!(
            assemble_linearized_potential(0, 0, &plans, &marg, false, 1.0),
            Err(Error::MissingMarginal { .. })
        ));
    }
}
