//! Cell-centered tensor-product grids and the discrete heat kernel.
//!
//! Fields are stored as flat arrays in row-major order (axis 0 slowest).
//! A [`MassField`] holds per-cell probability *mass*, not density values, so
//! that normalization and marginal checks are plain sums; the heat kernel
//! matrices absorb the cell-width quadrature factor accordingly.
//!
//! The heat kernel `H_t(z) = prod_a h_t(z_a)` is stored as one `n_a x n_a`
//! matrix per axis and applied one tensor mode at a time. Under the default
//! reflecting boundary each axis matrix is the Gaussian summed over mirror
//! images of the domain, which makes every column sum to one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scalar::{log_sum_exp, Scalar};
use crate::{Error, Result};

/// Number of mirror images folded in on each side of the domain.
/// Minimum number of image pairs on each side in the reflecting sum.
const IMAGE_REFLECTIONS: i64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec<S> {
    points: Vec<usize>,
    extent: Vec<(S, S)>,
    spacing: Vec<S>,
}

impl<S: Scalar> GridSpec<S> {
    pub fn new(points: &[usize], extent: &[(S, S)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidGrid("at least one axis required".into()));
        }
        if extent.len() != points.len() {
            return Err(Error::InvalidGrid(format!(
                "{} axes but {} extents",
                points.len(),
                extent.len()
            )));
        }
        let mut spacing = Vec::with_capacity(points.len());
        for (axis, (&n, &(lo, hi))) in points.iter().zip(extent).enumerate() {
            if n < 2 {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} has {n} points, need at least 2"
                )));
            }
            let h = (hi - lo) / S::of_usize(n);
            if !(h > S::zero()) || !h.is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} has degenerate extent [{lo}, {hi}]"
                )));
            }
            spacing.push(h);
        }
        Ok(Self {
            points: points.to_vec(),
            extent: extent.to_vec(),
            spacing,
        })
    }

    /// Grid on the unit cube `[0, 1]^d`.
    pub fn unit(points: &[usize]) -> Result<Self> {
        Self::new(points, &vec![(S::zero(), S::one()); points.len()])
    }

    pub fn dims(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn extent(&self) -> &[(S, S)] {
        &self.extent
    }

    pub fn spacing(&self) -> &[S] {
        &self.spacing
    }

    /// Total number of cells `M`.
    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_spacing(&self) -> S {
        self.spacing.iter().copied().fold(S::infinity(), S::min)
    }

    pub fn cell_volume(&self) -> S {
        self.spacing.iter().copied().fold(S::one(), |a, b| a * b)
    }

    /// Center coordinate of cell `index` along `axis`.
    pub fn center(&self, axis: usize, index: usize) -> S {
        self.extent[axis].0 + (S::of_usize(index) + S::lit(0.5)) * self.spacing[axis]
    }

    pub fn axis_centers(&self, axis: usize) -> Vec<S> {
        (0..self.points[axis]).map(|i| self.center(axis, i)).collect()
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims()];
        for axis in (0..self.dims()).rev() {
            idx[axis] = flat % self.points[axis];
            flat /= self.points[axis];
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.points)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn cell_center(&self, flat: usize) -> Vec<S> {
        self.unravel(flat)
            .iter()
            .enumerate()
            .map(|(axis, &i)| self.center(axis, i))
            .collect()
    }

    /// Flat index of the cell containing `point` (clamped to the grid).
    pub fn nearest_cell(&self, point: &[S]) -> usize {
        let idx: Vec<usize> = point
            .iter()
            .enumerate()
            .map(|(axis, &p)| {
                let rel = ((p - self.extent[axis].0) / self.spacing[axis]).floor();
                let rel = rel.max(S::zero()).to_usize().unwrap_or(0);
                rel.min(self.points[axis] - 1)
            })
            .collect();
        self.ravel(&idx)
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Flat permutation realizing `x_a -> lo_a + hi_a - x_a` on the given axes.
    pub fn reflection(&self, axes: &[usize]) -> Vec<usize> {
        (0..self.len())
            .map(|flat| {
                let mut idx = self.unravel(flat);
                for &a in axes {
                    idx[a] = self.points[a] - 1 - idx[a];
                }
                self.ravel(&idx)
            })
            .collect()
    }
}

/// Free-function form of [`GridSpec::new`] with an explicit axis count.
pub fn build_grid<S: Scalar>(
    dims: usize,
    points_per_axis: &[usize],
    extent_per_axis: &[(S, S)],
) -> Result<GridSpec<S>> {
    if dims == 0 || points_per_axis.len() != dims {
        return Err(Error::InvalidGrid(format!(
            "dims = {dims} but {} point counts given",
            points_per_axis.len()
        )));
    }
    GridSpec::new(points_per_axis, extent_per_axis)
}

/// Per-cell finite real values: potentials, costs, interaction fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<S> {
    values: Vec<S>,
}

impl<S: Scalar> ScalarField<S> {
    pub fn new(values: Vec<S>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at cell {pos}")));
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![S::zero(); len],
        }
    }

    pub fn constant(len: usize, value: S) -> Self {
        Self {
            values: vec![value; len],
        }
    }

    /// Evaluate `f` at every cell center.
    pub fn from_fn(grid: &GridSpec<S>, f: impl Fn(&[S]) -> S) -> Result<Self> {
        Self::new((0..grid.len()).map(|c| f(&grid.cell_center(c))).collect())
    }

    /// `strength * |x - center|^2`.
    pub fn quadratic_bowl(grid: &GridSpec<S>, center: &[S], strength: S) -> Result<Self> {
        if center.len() != grid.dims() {
            return Err(Error::param("center", "dimension does not match grid"));
        }
        Self::from_fn(grid, |x| {
            strength
                * x.iter()
                    .zip(center)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<S>()
        })
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Nonnegative per-cell probability masses summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MassField<S> {
    values: Vec<S>,
}

impl<S: Scalar> MassField<S> {
    /// Validate an already normalized mass vector.
    pub fn new(values: Vec<S>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !(*v >= S::zero()) || !v.is_finite()) {
            return Err(Error::InvalidField(format!(
                "mass at cell {pos} is negative or non-finite"
            )));
        }
        let total: S = values.iter().copied().sum();
        let tol = S::sum_tolerance(1e-12, values.len());
        if (total - S::one()).abs() > tol {
            return Err(Error::InvalidField(format!("total mass {total} is not 1")));
        }
        Ok(Self { values })
    }

    pub fn uniform(len: usize) -> Self {
        Self {
            values: vec![S::one() / S::of_usize(len); len],
        }
    }

    /// Unit mass concentrated in one cell.
    pub fn dirac(len: usize, cell: usize) -> Self {
        let mut values = vec![S::zero(); len];
        values[cell] = S::one();
        Self { values }
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> S {
        self.values.iter().copied().sum()
    }
}

/// Rescale nonnegative values to unit total mass.
pub fn normalize<S: Scalar>(values: &[S]) -> Result<MassField<S>> {
    if values.iter().any(|v| !(*v >= S::zero()) || !v.is_finite()) {
        return Err(Error::InvalidField("negative or non-finite entry".into()));
    }
    let total: S = values.iter().copied().sum();
    if !(total > S::zero()) {
        return Err(Error::InvalidField("cannot normalize an all-zero field".into()));
    }
    Ok(MassField {
        values: values.iter().map(|&v| v / total).collect(),
    })
}

/// `exp(-sum_a w_a (x_a - c_a)^2)` at cell centers, normalized to unit mass.
///
/// Evaluated relative to its peak so large weights stay representable; cells
/// that would underflow are floored at the smallest positive normal value so
/// the field remains strictly positive.
pub fn gaussian_field<S: Scalar>(
    grid: &GridSpec<S>,
    center: &[S],
    axis_weights: &[S],
) -> Result<MassField<S>> {
    if center.len() != grid.dims() || axis_weights.len() != grid.dims() {
        return Err(Error::param("center", "dimension does not match grid"));
    }
    if axis_weights.iter().any(|w| !(*w >= S::zero())) {
        return Err(Error::param("axis_weights", "weights must be nonnegative"));
    }
    let exponent: Vec<S> = (0..grid.len())
        .map(|c| {
            let x = grid.cell_center(c);
            -x.iter()
                .zip(center)
                .zip(axis_weights)
                .map(|((&xa, &ca), &wa)| wa * (xa - ca) * (xa - ca))
                .sum::<S>()
        })
        .collect();
    let peak = exponent.iter().copied().fold(S::neg_infinity(), S::max);
    let raw: Vec<S> = exponent.iter().map(|&e| (e - peak).exp()).collect();
    let mut field = normalize(&raw)?;
    for v in &mut field.values {
        if *v < S::min_positive_value() {
            *v = S::min_positive_value();
        }
    }
    Ok(field)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Neumann walls via the method of images; conserves mass.
    #[default]
    Reflecting,
    /// Raw Gaussian weights; mass leaving the domain is lost.
    Truncated,
}

#[derive(Debug, Clone)]
struct AxisMatrix<S> {
    n: usize,
    weights: Vec<S>,
    log_weights: Vec<S>,
}

/// The heat kernel `H_tau` as `d` one-dimensional factor matrices.
#[derive(Debug, Clone)]
pub struct SeparableKernel<S> {
    axes: Vec<AxisMatrix<S>>,
    tau: S,
    boundary: Boundary,
}

/// Discretize the heat kernel of variance `tau` per axis on `grid`.
pub fn discretize_heat_kernel<S: Scalar>(
    grid: &GridSpec<S>,
    tau: S,
    boundary: Boundary,
) -> Result<SeparableKernel<S>> {
    if !(tau > S::zero()) || !tau.is_finite() {
        return Err(Error::param("tau", format!("must be positive, got {tau}")));
    }
    let axes = (0..grid.dims())
        .map(|axis| axis_matrix(grid, axis, tau, boundary))
        .collect();
    Ok(SeparableKernel {
        axes,
        tau,
        boundary,
    })
}

fn axis_matrix<S: Scalar>(grid: &GridSpec<S>, axis: usize, tau: S, boundary: Boundary) -> AxisMatrix<S> {
    let n = grid.points()[axis];
    let h = grid.spacing()[axis];
    let (lo, hi) = grid.extent()[axis];
    let length = hi - lo;
    let two_tau = S::lit(2.0) * tau;
    let centers: Vec<S> = grid.axis_centers(axis).iter().map(|&z| z - lo).collect();

    // Normalizer: the Gaussian summed over the full lattice of cell offsets.
    // Under reflection every column sums to exactly this value, since the
    // images of the cell centers tile the lattice.
    // Enough images that the neglected tails lie beyond 12 standard deviations.
    let sigma = tau.sqrt().to_f64_lossy();
    let images = IMAGE_REFLECTIONS.max((12.0 * sigma / (2.0 * length.to_f64_lossy())).ceil() as i64 + 1);
    let reach = (n as i64) * (2 * images + 1);
    let log_norm = log_sum_exp((-reach..=reach).map(|m| {
        let d = S::from_i64(m).unwrap() * h;
        -(d * d) / two_tau
    }));

    let mut log_weights = vec![S::zero(); n * n];
    for a in 0..n {
        for b in a..n {
            let za = centers[a];
            let zb = centers[b];
            let lw = match boundary {
                Boundary::Truncated => -((za - zb) * (za - zb)) / two_tau,
                Boundary::Reflecting => {
                    log_sum_exp((-images..=images).flat_map(|m| {
                        let shift = S::from_i64(2 * m).unwrap() * length;
                        let direct = za - (shift + zb);
                        let mirrored = za - (shift - zb);
                        [-(direct * direct) / two_tau, -(mirrored * mirrored) / two_tau]
                    }))
                }
            } - log_norm;
            log_weights[a * n + b] = lw;
            log_weights[b * n + a] = lw;
        }
    }
    let weights = log_weights.iter().map(|&lw| lw.exp()).collect();
    AxisMatrix {
        n,
        weights,
        log_weights,
    }
}

impl<S: Scalar> SeparableKernel<S> {
    pub fn tau(&self) -> S {
        self.tau
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major `n_a x n_a` weights of one axis factor.
    pub fn axis_weights(&self, axis: usize) -> &[S] {
        &self.axes[axis].weights
    }

    /// The factor `H(x, y)` between two flat cell indices.
    pub fn entry(&self, grid: &GridSpec<S>, x: usize, y: usize) -> S {
        let ix = grid.unravel(x);
        let iy = grid.unravel(y);
        self.axes
            .iter()
            .zip(ix.iter().zip(&iy))
            .fold(S::one(), |acc, (m, (&a, &b))| acc * m.weights[a * m.n + b])
    }

    fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.n).collect()
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Apply the kernel to raw cell values, one tensor mode at a time.
    pub fn apply(&self, input: &[S]) -> Result<Vec<S>> {
        self.check(input.len())?;
        let shape = self.shape();
        let mut current = input.to_vec();
        for (axis, m) in self.axes.iter().enumerate() {
            current = apply_axis(&current, &shape, axis, |fiber, out| {
                for (a, o) in out.iter_mut().enumerate() {
                    let row = &m.weights[a * m.n..(a + 1) * m.n];
                    *o = row.iter().zip(fiber).map(|(&w, &x)| w * x).sum();
                }
            });
        }
        Ok(current)
    }

    /// Same operator acting on log values: returns `log(K exp(input))`.
    pub fn apply_log(&self, log_input: &[S]) -> Result<Vec<S>> {
        self.check(log_input.len())?;
        let shape = self.shape();
        let mut current = log_input.to_vec();
        for (axis, m) in self.axes.iter().enumerate() {
            current = apply_axis(&current, &shape, axis, |fiber, out| {
                for (a, o) in out.iter_mut().enumerate() {
                    let row = &m.log_weights[a * m.n..(a + 1) * m.n];
                    *o = log_sum_exp(row.iter().zip(fiber).map(|(&w, &x)| w + x));
                }
            });
        }
        Ok(current)
    }

    pub fn apply_field(&self, field: &ScalarField<S>) -> Result<ScalarField<S>> {
        ScalarField::new(self.apply(field.values())?)
    }

    /// Propagate a probability mass; only defined for the mass-conserving
    /// reflecting boundary.
    pub fn propagate(&self, mass: &MassField<S>) -> Result<MassField<S>> {
        if self.boundary != Boundary::Reflecting {
            return Err(Error::param(
                "boundary",
                "mass propagation requires the reflecting boundary",
            ));
        }
        Ok(MassField {
            values: self.apply(mass.values())?,
        })
    }
}

/// Run `op(fiber_in, fiber_out)` on every fiber along `axis`.
fn apply_axis<S, F>(input: &[S], shape: &[usize], axis: usize, op: F) -> Vec<S>
where
    S: Scalar,
    F: Fn(&[S], &mut [S]) + Sync,
{
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut output = vec![S::zero(); input.len()];
    if inner == 1 {
        output
            .par_chunks_mut(n)
            .zip(input.par_chunks(n))
            .for_each(|(out, fiber)| op(fiber, out));
        return output;
    }
    // Gather strided fibers, transform, scatter back. Each block of
    // `n * inner` values is independent.
    output
        .par_chunks_mut(n * inner)
        .zip(input.par_chunks(n * inner))
        .take(outer)
        .for_each(|(out_block, in_block)| {
            let mut fiber = vec![S::zero(); n];
            let mut result = vec![S::zero(); n];
            for i in 0..inner {
                for b in 0..n {
                    fiber[b] = in_block[b * inner + i];
                }
                op(&fiber, &mut result);
                for a in 0..n {
                    out_block[a * inner + i] = result[a];
                }
            }
        });
    output
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(points: &[usize]) -> GridSpec<f64> {
        GridSpec::unit(points).unwrap()
    }

    #[test]
    fn full_scale_grid_has_ten_thousand_cells() {
        let g = build_grid(2, &[100, 100], &[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        assert_eq!(g.len(), 10_000);
    }

    #[test]
    fn two_point_axis_centers() {
        let g = unit(&[2]);
        assert_eq!(g.axis_centers(0), vec![0.25, 0.75]);
    }

    #[test]
    fn uniform_spacing() {
        let g = unit(&[3, 3]);
        for &h in g.spacing() {
            assert!((h - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::<f64>::unit(&[1, 4]).is_err());
        assert!(GridSpec::<f64>::unit(&[]).is_err());
        assert!(GridSpec::new(&[4], &[(1.0, 1.0)]).is_err());
        assert!(GridSpec::new(&[4], &[(1.0, 0.0)]).is_err());
        assert!(build_grid::<f64>(3, &[4, 4], &[(0.0, 1.0); 2]).is_err());
    }

    #[test]
    fn ravel_roundtrip() {
        let g = unit(&[3, 4, 5]);
        for flat in 0..g.len() {
            assert_eq!(g.ravel(&g.unravel(flat)), flat);
        }
        assert_eq!(g.ravel(&[1, 2, 3]), (4 + 2) * 5 + 3);
    }

    #[test]
    fn rejects_nonpositive_tau() {
        let g = unit(&[4]);
        assert!(discretize_heat_kernel(&g, 0.0, Boundary::Reflecting).is_err());
        assert!(discretize_heat_kernel(&g, -1.0, Boundary::Reflecting).is_err());
    }

    #[test]
    fn tiny_tau_is_identity() {
        let g = unit(&[7, 5]);
        let k = discretize_heat_kernel(&g, 1e-12, Boundary::Reflecting).unwrap();
        let input: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let out = k.apply(&input).unwrap();
        for (a, b) in input.iter().zip(&out) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn reflecting_columns_sum_to_one() {
        for &n in &[2usize, 5, 16, 64] {
            for &tau in &[1e-6, 1e-3, 0.02, 0.5, 3.0] {
                let g = unit(&[n]);
                let k = discretize_heat_kernel(&g, tau, Boundary::Reflecting).unwrap();
                let w = k.axis_weights(0);
                for b in 0..n {
                    let col: f64 = (0..n).map(|a| w[a * n + b]).sum();
                    assert!((col - 1.0).abs() < 1e-12, "n={n} tau={tau} col={col}");
                }
                for a in 0..n {
                    for b in 0..n {
                        assert_eq!(w[a * n + b], w[b * n + a]);
                        assert!(w[a * n + b] >= 0.0);
                    }
                }
            }
        }
    }

    fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
        (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    /// Closed-form oracle: Gaussian * Gaussian = Gaussian with summed variances.
    #[test]
    fn gaussian_convolution_matches_closed_form() {
        let n = 64;
        let g = unit(&[n]);
        let h = 1.0 / n as f64;
        let (tau, s2) = (0.02, 0.05f64 * 0.05);
        let input: Vec<f64> = g.axis_centers(0).iter().map(|&z| h * normal_pdf(z, 0.5, s2)).collect();

        let k = discretize_heat_kernel(&g, tau, Boundary::Truncated).unwrap();
        let out = k.apply(&input).unwrap();
        let expected: Vec<f64> = g
            .axis_centers(0)
            .iter()
            .map(|&z| h * normal_pdf(z, 0.5, s2 + tau))
            .collect();
        let l1: f64 = out.iter().zip(&expected).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 < 1e-4, "truncated L1 = {l1}");

        // Reflecting boundary: compare with the image-summed closed form.
        let k = discretize_heat_kernel(&g, tau, Boundary::Reflecting).unwrap();
        let out = k.apply(&input).unwrap();
        let expected: Vec<f64> = g
            .axis_centers(0)
            .iter()
            .map(|&z| {
                (-6..=6)
                    .map(|m| {
                        let shift = 2.0 * m as f64;
                        normal_pdf(z, shift + 0.5, s2 + tau) + normal_pdf(z, shift - 0.5, s2 + tau)
                    })
                    .sum::<f64>()
                    * h
            })
            .collect();
        let l1: f64 = out.iter().zip(&expected).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 < 1e-4, "reflecting L1 = {l1}");
    }

    #[test]
    fn uniform_is_a_fixed_point() {
        let g = unit(&[6, 9]);
        let k = discretize_heat_kernel(&g, 0.07, Boundary::Reflecting).unwrap();
        let u = MassField::<f64>::uniform(g.len());
        let out = k.propagate(&u).unwrap();
        for v in out.values() {
            assert!((v - 1.0 / 54.0).abs() < 1e-15);
        }
    }

    /// Dense oracle: explicit 4x4 matrix on a 2x2 grid.
    #[test]
    fn separable_equals_dense_on_2x2() {
        let g = GridSpec::new(&[2, 2], &[(0.0, 1.0), (-1.0, 2.0)]).unwrap();
        let k = discretize_heat_kernel(&g, 0.3, Boundary::Reflecting).unwrap();
        let input = [0.1, 0.7, -0.3, 2.0];
        let mut dense = [[0.0; 4]; 4];
        for (x, row) in dense.iter_mut().enumerate() {
            let ix = g.unravel(x);
            for (y, cell) in row.iter_mut().enumerate() {
                let iy = g.unravel(y);
                *cell = k.axis_weights(0)[ix[0] * 2 + iy[0]] * k.axis_weights(1)[ix[1] * 2 + iy[1]];
            }
        }
        let out = k.apply(&input).unwrap();
        for x in 0..4 {
            let expect: f64 = (0..4).map(|y| dense[x][y] * input[y]).sum();
            assert!((out[x] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn semigroup_property() {
        let g = unit(&[32, 20]);
        let tau = 0.01;
        let k1 = discretize_heat_kernel(&g, tau, Boundary::Reflecting).unwrap();
        let k2 = discretize_heat_kernel(&g, 2.0 * tau, Boundary::Reflecting).unwrap();
        let input = gaussian_field(&g, &[0.3, 0.8], &[40.0, 90.0]).unwrap();
        let twice = k1.apply(&k1.apply(input.values()).unwrap()).unwrap();
        let once = k2.apply(input.values()).unwrap();
        let l1: f64 = twice.iter().zip(&once).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 < 1e-10, "semigroup L1 = {l1}");
    }

    #[test]
    fn log_apply_matches_linear() {
        let g = unit(&[9, 7]);
        for b in [Boundary::Reflecting, Boundary::Truncated] {
            let k = discretize_heat_kernel(&g, 0.01, b).unwrap();
            let input: Vec<f64> = (0..g.len()).map(|i| 0.1 + (i as f64 * 1.3).cos().abs()).collect();
            let lin = k.apply(&input).unwrap();
            let logs: Vec<f64> = input.iter().map(|v| v.ln()).collect();
            let out = k.apply_log(&logs).unwrap();
            for (a, b) in lin.iter().zip(&out) {
                assert!((a.ln() - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g = unit(&[4, 4]);
        let k = discretize_heat_kernel(&g, 0.1, Boundary::Reflecting).unwrap();
        assert!(matches!(k.apply(&[1.0; 15]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn truncated_does_not_propagate_mass() {
        let g = unit(&[4]);
        let k = discretize_heat_kernel(&g, 0.1, Boundary::Truncated).unwrap();
        assert!(k.propagate(&MassField::uniform(4)).is_err());
    }

    #[test]
    fn gaussian_initial_density_peaks_near_center() {
        let g = unit(&[100, 100]);
        let rho = gaussian_field(&g, &[0.2, 0.5], &[50.0, 50.0]).unwrap();
        assert!((rho.total() - 1.0).abs() < 1e-12);
        let argmax = (0..g.len())
            .max_by(|&a, &b| rho.values()[a].partial_cmp(&rho.values()[b]).unwrap())
            .unwrap();
        let c = g.cell_center(argmax);
        assert!((c[0] - 0.2).abs() <= 0.01 && (c[1] - 0.5).abs() <= 0.01, "{c:?}");
    }

    #[test]
    fn dirac_limit() {
        let g = unit(&[10, 10]);
        let c = g.cell_center(g.ravel(&[3, 6]));
        let rho = gaussian_field(&g, &c, &[1e6, 1e6]).unwrap();
        assert!((rho.values()[g.ravel(&[3, 6])] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn symmetric_gaussian_is_mirror_invariant() {
        let g = unit(&[12, 12]);
        let rho = gaussian_field(&g, &[0.5, 0.5], &[30.0, 30.0]).unwrap();
        let refl = g.reflection(&[0]);
        for c in 0..g.len() {
            assert!((rho.values()[c] - rho.values()[refl[c]]).abs() < 1e-14);
        }
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(normalize(&[0.0f64; 4]).is_err());
        assert!(normalize(&[1.0f64, -1.0, 1.0]).is_err());
        let m = normalize(&[1.0f64, 3.0]).unwrap();
        assert_eq!(m.values(), &[0.25, 0.75]);
    }

    #[test]
    fn mass_field_validation() {
        assert!(MassField::new(vec![0.5f64, 0.5]).is_ok());
        assert!(MassField::new(vec![0.5f64, 0.6]).is_err());
        assert!(MassField::new(vec![1.5f64, -0.5]).is_err());
        assert!(ScalarField::new(vec![1.0f64, f64::NAN]).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let g = GridSpec::<f32>::unit(&[16, 16]).unwrap();
        let k = discretize_heat_kernel(&g, 0.01f32, Boundary::Reflecting).unwrap();
        let rho = gaussian_field(&g, &[0.4, 0.6], &[50.0, 50.0]).unwrap();
        let out = k.propagate(&rho).unwrap();
        assert!((out.total() - 1.0).abs() < 1e-5);
    }
}
