//! Full-tensor Lagrangian grid filter.
//!
//! Dense weight tensors over the whole grid; the same recursion as the CPD
//! filter (Bayes weight product, Lagrangian advection, separable Gaussian
//! diffusion) evaluated without any low-rank structure. Usable on its own
//! at small grid sizes and as the equivalence oracle for the CPD path. The
//! building blocks are dimension-generic; [`lgbf_full_step`] ties them to
//! the 4-state navigation model.

use nalgebra::DMatrix;

use super::{kf_predict, FilterError};
use crate::cpd::DenseTensor;
use crate::grid::{
    design_grid, gaussian_kernel_axis, moments_from_pmd, normalize, AxisGrid, GridError, Pmd,
    Weights,
};
use crate::tan::{
    likelihood_position_matrix, likelihood_velocity_matrix, CvModel, MeasModel, TerrainMap,
};

#[derive(Debug, Clone)]
pub struct FullFilterConfig {
    pub counts: Vec<usize>,
    pub sigma_mult: f64,
}

impl Default for FullFilterConfig {
    fn default() -> Self {
        Self {
            counts: vec![21, 21, 21, 21],
            sigma_mult: 4.0,
        }
    }
}

/// State of the dense grid filter.
#[derive(Debug, Clone)]
pub struct FilterStateFull {
    pub pmd: Pmd,
    pub step: usize,
}

impl FilterStateFull {
    pub fn dense(&self) -> &DenseTensor {
        self.pmd
            .dense()
            .expect("full filter state holds dense weights")
    }
}

/// Pointwise Bayes update `posterior ∝ likelihood ⊙ prior`, renormalized.
pub fn bayes_update_dense(pmd: &Pmd, lik: &DenseTensor) -> Result<Pmd, FilterError> {
    let prior = pmd.dense().expect("dense weights");
    assert_eq!(prior.shape(), lik.shape());
    let values: Vec<f64> = prior
        .values()
        .iter()
        .zip(lik.values())
        .map(|(p, l)| p * l)
        .collect();
    let post = DenseTensor::new(prior.shape().to_vec(), values).map_err(GridError::Cpd)?;
    let pmd = Pmd::new(pmd.grid.clone(), Weights::Dense(post))?;
    normalize(&pmd).map_err(super::divergence_from_mass)
}

/// Dense 4-mode likelihood tensor of the navigation measurement: the
/// altimeter matrix over the position axes times the odometer matrix over
/// the velocity axes.
pub fn tan_likelihood_dense(
    map: &TerrainMap,
    z: [f64; 3],
    psi: f64,
    meas: &MeasModel,
    grid: &AxisGrid,
) -> DenseTensor {
    let lik_pos = likelihood_position_matrix(map, z[0], grid, meas.sigma_alt());
    let lik_vel = likelihood_velocity_matrix([z[1], z[2]], psi, grid, [meas.r_diag[1], meas.r_diag[2]]);
    let counts = grid.counts();
    let mut out = DenseTensor::zeros(counts.clone());
    let mut flat = 0usize;
    for i0 in 0..counts[0] {
        for i1 in 0..counts[1] {
            let p = lik_pos[(i0, i1)];
            for i2 in 0..counts[2] {
                for i3 in 0..counts[3] {
                    out.values_mut()[flat] = p * lik_vel[(i2, i3)];
                    flat += 1;
                }
            }
        }
    }
    out
}

/// Multilinear interpolation of dense grid weights at an arbitrary point;
/// zero outside the grid hull on any axis.
pub fn interp_multilinear(weights: &DenseTensor, grid: &AxisGrid, point: &[f64]) -> f64 {
    let d = grid.ndim();
    let mut base = Vec::with_capacity(d);
    let mut frac = Vec::with_capacity(d);
    for j in 0..d {
        let axis = grid.axis(j);
        let n = axis.len();
        let x = point[j];
        if x < axis[0] || x > axis[n - 1] {
            return 0.0;
        }
        let k = match axis.partition_point(|&p| p <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        base.push(k);
        let (x0, x1) = (axis[k], axis[k + 1]);
        frac.push(if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 });
    }
    let strides = weights.strides();
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut flat = 0usize;
        for j in 0..d {
            if corner >> j & 1 == 1 {
                w *= frac[j];
                flat += (base[j] + 1) * strides[j];
            } else {
                w *= 1.0 - frac[j];
                flat += base[j] * strides[j];
            }
        }
        if w != 0.0 {
            acc += w * weights.values()[flat];
        }
    }
    acc
}

/// Raw Lagrangian advection: interpolates the dense weights at the
/// back-in-time image `F^{-1} ξ'` of every new grid point. No
/// normalization.
pub fn advect_full_raw(
    pmd: &Pmd,
    f: &DMatrix<f64>,
    new_grid: &AxisGrid,
) -> Result<DenseTensor, FilterError> {
    let weights = pmd.dense().expect("dense weights");
    let d = new_grid.ndim();
    let f_inv = f
        .clone()
        .try_inverse()
        .ok_or(FilterError::NotBlockStructured)?;
    let counts = new_grid.counts();
    let total: usize = counts.iter().product();
    let mut out = DenseTensor::zeros(counts.clone());
    let mut idx = vec![0usize; d];
    let mut point = vec![0.0; d];
    let mut old = nalgebra::DVector::zeros(d);
    for flat in 0..total {
        for j in 0..d {
            point[j] = new_grid.axis(j)[idx[j]];
        }
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += f_inv[(i, j)] * point[j];
            }
            old[i] = acc;
        }
        out.values_mut()[flat] = interp_multilinear(weights, &pmd.grid, old.as_slice());
        for j in (0..d).rev() {
            idx[j] += 1;
            if idx[j] < counts[j] {
                break;
            }
            idx[j] = 0;
        }
    }
    Ok(out)
}

/// Advection onto an explicit grid with renormalization.
pub fn advect_full_onto(
    pmd: &Pmd,
    f: &DMatrix<f64>,
    new_grid: AxisGrid,
) -> Result<Pmd, FilterError> {
    let weights = advect_full_raw(pmd, f, &new_grid)?;
    let out = Pmd::new(new_grid, Weights::Dense(weights))?;
    normalize(&out).map_err(super::divergence_from_mass)
}

/// Convolves a dense tensor along one axis with a centred kernel, scaled by
/// the grid spacing.
pub fn convolve_dense_axis(
    t: &DenseTensor,
    axis: usize,
    kernel: &[f64],
    delta: f64,
) -> DenseTensor {
    let shape = t.shape().to_vec();
    let n = shape[axis];
    let strides = t.strides();
    let stride = strides[axis];
    let inner = stride;
    let outer: usize = shape.iter().take(axis).product();
    let outer_stride = if axis == 0 { t.len() } else { strides[axis - 1] };
    let half = (kernel.len() / 2) as isize;

    let mut out = DenseTensor::zeros(shape);
    for o in 0..outer {
        let base_o = o * outer_stride;
        for p in 0..inner {
            let base = base_o + p;
            for i in 0..n {
                let mut acc = 0.0;
                for (k, &w) in kernel.iter().enumerate() {
                    let m = i as isize + half - k as isize;
                    if m >= 0 && (m as usize) < n {
                        acc += t.values()[base + m as usize * stride] * w;
                    }
                }
                out.values_mut()[base + i * stride] = acc * delta;
            }
        }
    }
    out
}

/// Separable Gaussian diffusion: convolution along every axis with the 1-D
/// kernel of the matching process-noise variance, then renormalization.
pub fn diffuse_full(pmd: &Pmd, q_diag: &[f64]) -> Result<Pmd, FilterError> {
    let grid = &pmd.grid;
    let mut weights = pmd.dense().expect("dense weights").clone();
    for (j, &q) in q_diag.iter().enumerate() {
        if q <= 0.0 {
            continue;
        }
        let n = grid.axis(j).len();
        let delta = grid.delta(j);
        let kernel = gaussian_kernel_axis(n, delta, q)?;
        weights = convolve_dense_axis(&weights, j, &kernel, delta);
    }
    let out = Pmd::new(grid.clone(), Weights::Dense(weights))?;
    normalize(&out).map_err(super::divergence_from_mass)
}

/// Unnormalized diffusion used by oracle comparisons.
pub fn diffuse_full_raw(pmd: &Pmd, q_diag: &[f64]) -> Result<DenseTensor, FilterError> {
    let grid = &pmd.grid;
    let mut weights = pmd.dense().expect("dense weights").clone();
    for (j, &q) in q_diag.iter().enumerate() {
        if q <= 0.0 {
            continue;
        }
        let n = grid.axis(j).len();
        let delta = grid.delta(j);
        let kernel = gaussian_kernel_axis(n, delta, q)?;
        weights = convolve_dense_axis(&weights, j, &kernel, delta);
    }
    Ok(weights)
}

pub fn measurement_update_full(
    state: &FilterStateFull,
    z: [f64; 3],
    psi: f64,
    map: &TerrainMap,
    meas: &MeasModel,
) -> Result<FilterStateFull, FilterError> {
    let lik = tan_likelihood_dense(map, z, psi, meas, &state.pmd.grid);
    let pmd = bayes_update_dense(&state.pmd, &lik)?;
    Ok(FilterStateFull {
        pmd,
        step: state.step,
    })
}

/// One complete dense filter cycle, mirroring [`super::lgbf_cpd_step`].
pub fn lgbf_full_step(
    state: &FilterStateFull,
    z: [f64; 3],
    psi: f64,
    map: &TerrainMap,
    meas: &MeasModel,
    model: &CvModel,
    cfg: &FullFilterConfig,
) -> Result<(FilterStateFull, [f64; 4]), FilterError> {
    let posterior = measurement_update_full(state, z, psi, map, meas)?;
    let moments = moments_from_pmd(&posterior.pmd)?;
    let estimate = [
        moments.mean[0],
        moments.mean[1],
        moments.mean[2],
        moments.mean[3],
    ];
    let predicted = kf_predict(&moments, model, posterior.step);
    let new_grid = design_grid(&predicted, cfg.sigma_mult, &cfg.counts)?;
    let advected = advect_full_onto(&posterior.pmd, &model.f, new_grid)?;
    let diffused = diffuse_full(&advected, &model.q_diag)?;
    Ok((
        FilterStateFull {
            pmd: diffused,
            step: state.step + 1,
        },
        estimate,
    ))
}

/// Initial dense prior from diagonal Gaussian moments.
pub fn init_full_state(
    moments: &crate::grid::GaussianMoments,
    cfg: &FullFilterConfig,
) -> Result<FilterStateFull, FilterError> {
    let grid = design_grid(moments, cfg.sigma_mult, &cfg.counts)?;
    let p = crate::grid::gaussian_pmd_init(moments, &grid)?;
    let dense = p.cpd().expect("gaussian init is cpd").to_dense()?;
    let pmd = Pmd::new(grid, Weights::Dense(dense))?;
    Ok(FilterStateFull {
        pmd: normalize(&pmd)?,
        step: 0,
    })
}
