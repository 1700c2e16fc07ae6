//! Axes-aligned equidistant grids and point-mass densities over them.
//!
//! A grid is stored per dimension as a Cartesian product of 1-D equidistant
//! axes, so D axes of N_j points stand in for a grid of prod N_j points. A
//! point-mass density (PMD) attaches a weight tensor (dense or CPD) to such
//! a grid together with the cell volume.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::cpd::{CpdError, CpdTensor, DenseTensor};

pub const EQUIDISTANT_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("axis {0} must have an odd point count of at least 3, got {1}")]
    BadCount(usize, usize),
    #[error("axis {0} is not equidistant")]
    NotEquidistant(usize),
    #[error("axis {0} is not strictly increasing")]
    NotIncreasing(usize),
    #[error("nonpositive variance {1} on dimension {0}")]
    NonpositiveVariance(usize, f64),
    #[error("sigma multiplier must be positive, got {0}")]
    BadSigmaMult(f64),
    #[error("weight tensor shape {0:?} does not match grid counts {1:?}")]
    WeightShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("nonpositive total mass {0}")]
    NonpositiveMass(f64),
    #[error("point-mass density is not normalized (cell mass {0})")]
    NotNormalized(f64),
    #[error("covariance matrix must be diagonal")]
    NotDiagonal,
    #[error("covariance matrix is not symmetric positive semidefinite")]
    NotPsd,
    #[error(transparent)]
    Cpd(#[from] CpdError),
}

/// Mean and covariance of a Gaussian (or of any density summarised by its
/// first two moments).
#[derive(Debug, Clone)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, GridError> {
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-9 * scale {
            return Err(GridError::NotPsd);
        }
        let eig = cov.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&e| e < -1e-9 * scale) {
            return Err(GridError::NotPsd);
        }
        Ok(Self { mean, cov })
    }

    pub fn diagonal(mean: Vec<f64>, vars: Vec<f64>) -> Result<Self, GridError> {
        let d = mean.len();
        let mut cov = DMatrix::zeros(d, d);
        for (j, v) in vars.iter().enumerate() {
            cov[(j, j)] = *v;
        }
        Self::new(DVector::from_vec(mean), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        let scale = self.cov.amax().max(1e-300);
        for i in 0..d {
            for j in 0..d {
                if i != j && self.cov[(i, j)].abs() > 1e-12 * scale {
                    return false;
                }
            }
        }
        true
    }
}

/// Cartesian product of D equidistant 1-D axes. Point counts are required
/// to be odd so the centre of the span is itself a grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisGrid {
    axes: Vec<Vec<f64>>,
    deltas: Vec<f64>,
}

impl AxisGrid {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self, GridError> {
        let mut deltas = Vec::with_capacity(axes.len());
        for (j, axis) in axes.iter().enumerate() {
            let n = axis.len();
            if n < 3 || n % 2 == 0 {
                return Err(GridError::BadCount(j, n));
            }
            let delta = (axis[n - 1] - axis[0]) / (n - 1) as f64;
            if delta <= 0.0 {
                return Err(GridError::NotIncreasing(j));
            }
            for w in axis.windows(2) {
                let step = w[1] - w[0];
                if step <= 0.0 {
                    return Err(GridError::NotIncreasing(j));
                }
                if (step - delta).abs() > EQUIDISTANT_RTOL * delta {
                    return Err(GridError::NotEquidistant(j));
                }
            }
            deltas.push(delta);
        }
        Ok(Self { axes, deltas })
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, j: usize) -> &[f64] {
        &self.axes[j]
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn delta(&self, j: usize) -> f64 {
        self.deltas[j]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    /// Cell volume, the product of per-axis spacings.
    pub fn cell_volume(&self) -> f64 {
        self.deltas.iter().product()
    }

    pub fn center_index(&self, j: usize) -> usize {
        self.axes[j].len() / 2
    }
}

/// Builds a grid whose axis j spans `mean_j ± sigma_mult * sqrt(cov_jj)`
/// with the requested odd point count; the middle point lands on the mean.
pub fn design_grid(
    moments: &GaussianMoments,
    sigma_mult: f64,
    counts: &[usize],
) -> Result<AxisGrid, GridError> {
    if sigma_mult <= 0.0 {
        return Err(GridError::BadSigmaMult(sigma_mult));
    }
    let mut axes = Vec::with_capacity(counts.len());
    for (j, &n) in counts.iter().enumerate() {
        if n < 3 || n % 2 == 0 {
            return Err(GridError::BadCount(j, n));
        }
        let var = moments.cov[(j, j)];
        if var <= 0.0 {
            return Err(GridError::NonpositiveVariance(j, var));
        }
        let half = sigma_mult * var.sqrt();
        let mean = moments.mean[j];
        let step = 2.0 * half / (n - 1) as f64;
        let c = (n / 2) as isize;
        // Construct symmetrically so the centre point is exactly the mean.
        let axis: Vec<f64> = (0..n)
            .map(|i| mean + (i as isize - c) as f64 * step)
            .collect();
        axes.push(axis);
    }
    AxisGrid::new(axes)
}

/// Weight storage of a point-mass density.
#[derive(Debug, Clone)]
pub enum Weights {
    Cpd(CpdTensor),
    Dense(DenseTensor),
}

impl Weights {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Weights::Cpd(t) => t.shape(),
            Weights::Dense(t) => t.shape().to_vec(),
        }
    }

    pub fn sum(&self) -> f64 {
        match self {
            Weights::Cpd(t) => t.sum_entries(),
            Weights::Dense(t) => t.sum(),
        }
    }
}

/// A point-mass density: grid + weights + cell volume.
#[derive(Debug, Clone)]
pub struct Pmd {
    pub grid: AxisGrid,
    pub weights: Weights,
}

impl Pmd {
    pub fn new(grid: AxisGrid, weights: Weights) -> Result<Self, GridError> {
        let shape = weights.shape();
        let counts = grid.counts();
        if shape != counts {
            return Err(GridError::WeightShapeMismatch(shape, counts));
        }
        Ok(Self { grid, weights })
    }

    pub fn volume(&self) -> f64 {
        self.grid.cell_volume()
    }

    /// Total probability mass, `cell volume * sum of weights`.
    pub fn mass(&self) -> f64 {
        self.volume() * self.weights.sum()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.mass() - 1.0).abs() <= tol
    }

    pub fn cpd(&self) -> Option<&CpdTensor> {
        match &self.weights {
            Weights::Cpd(t) => Some(t),
            Weights::Dense(_) => None,
        }
    }

    pub fn dense(&self) -> Option<&DenseTensor> {
        match &self.weights {
            Weights::Dense(t) => Some(t),
            Weights::Cpd(_) => None,
        }
    }
}

/// Rescales the weights so the density integrates to one.
pub fn normalize(p: &Pmd) -> Result<Pmd, GridError> {
    let mass = p.mass();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(GridError::NonpositiveMass(mass));
    }
    let weights = match &p.weights {
        Weights::Cpd(t) => Weights::Cpd(t.scale(1.0 / mass)),
        Weights::Dense(t) => {
            let mut d = t.clone();
            for v in d.values_mut() {
                *v /= mass;
            }
            Weights::Dense(d)
        }
    };
    Ok(Pmd {
        grid: p.grid.clone(),
        weights,
    })
}

pub fn gauss_pdf(x: f64, variance: f64) -> f64 {
    let inv = 1.0 / variance;
    (-0.5 * x * x * inv).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
}

/// Rank-one PMD of a diagonal Gaussian: loading vector j is the 1-D Gaussian
/// density evaluated on axis j. The result is normalized on the grid.
pub fn gaussian_pmd_init(moments: &GaussianMoments, grid: &AxisGrid) -> Result<Pmd, GridError> {
    if !moments.is_diagonal() {
        return Err(GridError::NotDiagonal);
    }
    let d = grid.ndim();
    let mut loadings = Vec::with_capacity(d);
    for j in 0..d {
        let var = moments.cov[(j, j)];
        if var <= 0.0 {
            return Err(GridError::NonpositiveVariance(j, var));
        }
        let mean = moments.mean[j];
        loadings.push(
            grid.axis(j)
                .iter()
                .map(|&x| gauss_pdf(x - mean, var))
                .collect(),
        );
    }
    let t = CpdTensor::rank_one(1.0, loadings)?;
    let p = Pmd::new(grid.clone(), Weights::Cpd(t))?;
    normalize(&p)
}

/// First two moments of a normalized PMD. CPD weights are handled entirely
/// in factored form with raw (possibly signed) values; dense weights are
/// clamped at zero and renormalized over the clamped mass before the sums.
pub fn moments_from_pmd(p: &Pmd) -> Result<GaussianMoments, GridError> {
    if !p.is_normalized(1e-6) {
        return Err(GridError::NotNormalized(p.mass()));
    }
    let d = p.grid.ndim();
    let delta = p.volume();
    let (mean, second) = match &p.weights {
        Weights::Cpd(t) => cpd_raw_moments(t, &p.grid, delta),
        Weights::Dense(t) => dense_raw_moments(t, &p.grid),
    };
    let mut cov = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            cov[(a, b)] = second[(a, b)] - mean[a] * mean[b];
        }
    }
    let cov = (cov.clone() + cov.transpose()) * 0.5;
    Ok(GaussianMoments {
        mean: DVector::from_vec(mean),
        cov,
    })
}

fn cpd_raw_moments(t: &CpdTensor, grid: &AxisGrid, delta: f64) -> (Vec<f64>, DMatrix<f64>) {
    let d = grid.ndim();
    let r = t.rank();
    // Per rank and mode: plain column sum, axis-weighted sum, axis^2 sum.
    let mut s0 = vec![vec![0.0; d]; r];
    let mut s1 = vec![vec![0.0; d]; r];
    let mut s2 = vec![vec![0.0; d]; r];
    for j in 0..d {
        let axis = grid.axis(j);
        let f = t.factor(j);
        for c in 0..r {
            let col = f.column(c);
            let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
            for (i, &x) in axis.iter().enumerate() {
                let w = col[i];
                a0 += w;
                a1 += w * x;
                a2 += w * x * x;
            }
            s0[c][j] = a0;
            s1[c][j] = a1;
            s2[c][j] = a2;
        }
    }
    let mut mean = vec![0.0; d];
    let mut second = DMatrix::zeros(d, d);
    for c in 0..r {
        let l = t.lambdas()[c] * delta;
        let prod_all: f64 = s0[c].iter().product();
        for a in 0..d {
            let base = if s0[c][a].abs() > 0.0 {
                prod_all / s0[c][a]
            } else {
                // Recompute without mode a when its sum is exactly zero.
                (0..d).filter(|&j| j != a).map(|j| s0[c][j]).product()
            };
            mean[a] += l * s1[c][a] * base;
            second[(a, a)] += l * s2[c][a] * base;
            for b in (a + 1)..d {
                let others: f64 = (0..d)
                    .filter(|&j| j != a && j != b)
                    .map(|j| s0[c][j])
                    .product();
                let v = l * s1[c][a] * s1[c][b] * others;
                second[(a, b)] += v;
                second[(b, a)] += v;
            }
        }
    }
    (mean, second)
}

fn dense_raw_moments(t: &DenseTensor, grid: &AxisGrid) -> (Vec<f64>, DMatrix<f64>) {
    let d = grid.ndim();
    let shape = t.shape().to_vec();
    let mut mean = vec![0.0; d];
    let mut second = DMatrix::zeros(d, d);
    let mut total = 0.0;
    let mut idx = vec![0usize; d];
    for &raw in t.values() {
        let w = raw.max(0.0);
        if w > 0.0 {
            total += w;
            for a in 0..d {
                let xa = grid.axis(a)[idx[a]];
                mean[a] += w * xa;
                for b in 0..d {
                    second[(a, b)] += w * xa * grid.axis(b)[idx[b]];
                }
            }
        }
        for j in (0..d).rev() {
            idx[j] += 1;
            if idx[j] < shape[j] {
                break;
            }
            idx[j] = 0;
        }
    }
    if total > 0.0 {
        for a in 0..d {
            mean[a] /= total;
        }
        second /= total;
    }
    (mean, second)
}

/// Piecewise-linear interpolation of `(src_points, src_values)` at
/// `dst_points`. Queries outside the source span evaluate to zero.
pub fn interp_axis(src_points: &[f64], src_values: &[f64], dst_points: &[f64]) -> Vec<f64> {
    debug_assert_eq!(src_points.len(), src_values.len());
    dst_points
        .iter()
        .map(|&x| interp_one(src_points, src_values, x))
        .collect()
}

pub fn interp_one(src_points: &[f64], src_values: &[f64], x: f64) -> f64 {
    let n = src_points.len();
    if n == 0 || x < src_points[0] || x > src_points[n - 1] {
        return 0.0;
    }
    // Binary search for the cell containing x.
    let k = match src_points.partition_point(|&p| p <= x) {
        0 => 0,
        k if k >= n => n - 2,
        k => k - 1,
    };
    let (x0, x1) = (src_points[k], src_points[k + 1]);
    let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
    src_values[k] * (1.0 - t) + src_values[k + 1] * t
}

/// Gaussian diffusion kernel for one axis: the 1-D noise density evaluated
/// at offsets from the centre grid point.
pub fn gaussian_kernel_axis(count: usize, delta: f64, variance: f64) -> Result<Vec<f64>, GridError> {
    if count < 3 || count % 2 == 0 {
        return Err(GridError::BadCount(0, count));
    }
    if variance <= 0.0 {
        return Err(GridError::NonpositiveVariance(0, variance));
    }
    let c = (count / 2) as isize;
    Ok((0..count)
        .map(|i| gauss_pdf((i as isize - c) as f64 * delta, variance))
        .collect())
}

/// "Same"-size discrete convolution with a centred kernel, scaled by the
/// grid spacing (Riemann weight); boundaries are zero-padded.
pub fn convolve_axis(values: &[f64], kernel: &[f64], delta: f64) -> Vec<f64> {
    debug_assert!(kernel.len() % 2 == 1, "kernel must be centred (odd length)");
    let n = values.len();
    let half = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &w) in kernel.iter().enumerate() {
            let m = i as isize + half - k as isize;
            if m >= 0 && (m as usize) < n {
                acc += values[m as usize] * w;
            }
        }
        *o = acc * delta;
    }
    out
}
