//! The estimators.
//!
//! [`lgbf_cpd_step`] is the CPD Lagrangian grid filter: a factored Bayes
//! weight update, Lagrangian advection through an axes-aligned predictive
//! grid, and diffusion by per-axis Gaussian convolution, with rank rounding
//! after the update and after advection. The full-tensor grid filter in
//! [`full`] is the dense oracle for the same recursion; [`pf`] and [`ukf`]
//! are the comparison baselines.

pub mod full;
pub mod pf;
pub mod ukf;

pub use full::{
    advect_full_raw, bayes_update_dense, diffuse_full, lgbf_full_step, measurement_update_full,
    tan_likelihood_dense, FilterStateFull, FullFilterConfig,
};
pub use pf::{pf_bootstrap_step, Particles};
pub use ukf::{ukf_step, UkfParams};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::cpd::{
    embed_svd, rank_reduce_als, svd_truncated, CpdError, CpdTensor, SvdFactors,
};
use crate::grid::{
    design_grid, gaussian_kernel_axis, interp_axis, moments_from_pmd, normalize, AxisGrid,
    GaussianMoments, GridError, Pmd, Weights,
};
use crate::tan::{
    likelihood_position_matrix, likelihood_velocity_matrix, CvModel, MeasModel, TerrainMap,
};

#[derive(Debug, Error)]
pub enum FilterError {
    /// The filter can no longer represent a valid density (zero likelihood
    /// mass, covariance collapse, all particle weights zero, ...).
    #[error("filter diverged: {0}")]
    Divergence(String),
    #[error("invalid filter configuration: {0}")]
    BadConfig(String),
    #[error("dynamics matrix does not decouple into (position, velocity) blocks")]
    NotBlockStructured,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Cpd(#[from] CpdError),
}

/// Configuration of the CPD grid filter.
#[derive(Debug, Clone)]
pub struct CpdFilterConfig {
    /// Grid points per state dimension; all odd, at least 3.
    pub counts: [usize; 4],
    /// Half-span of each designed axis in predicted standard deviations.
    pub sigma_mult: f64,
    /// Rank bound applied after the measurement update and after advection.
    pub max_rank: usize,
    pub als_iters: usize,
    pub als_tol: f64,
    pub seed: u64,
    /// Singular-value energy fraction kept by every SVD truncation.
    pub svd_energy: f64,
}

impl Default for CpdFilterConfig {
    fn default() -> Self {
        Self {
            counts: [21, 21, 21, 21],
            sigma_mult: 4.0,
            max_rank: 10,
            als_iters: 50,
            als_tol: 1e-6,
            seed: 0,
            svd_energy: 0.9999,
        }
    }
}

impl CpdFilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.counts.iter().any(|&n| n < 3 || n % 2 == 0) {
            return Err(FilterError::BadConfig(format!(
                "counts must be odd and >= 3, got {:?}",
                self.counts
            )));
        }
        if self.max_rank == 0 {
            return Err(FilterError::BadConfig("max_rank must be >= 1".into()));
        }
        if !(self.svd_energy > 0.0 && self.svd_energy <= 1.0) {
            return Err(FilterError::BadConfig(format!(
                "svd_energy must be in (0, 1], got {}",
                self.svd_energy
            )));
        }
        Ok(())
    }
}

/// State of the CPD grid filter: a normalized CPD-weighted PMD on the
/// current grid.
#[derive(Debug, Clone)]
pub struct FilterStateCpd {
    pub pmd: Pmd,
    pub step: usize,
}

impl FilterStateCpd {
    pub fn tensor(&self) -> &CpdTensor {
        self.pmd.cpd().expect("cpd filter state holds cpd weights")
    }

    pub fn rank(&self) -> usize {
        self.tensor().rank()
    }
}

/// Kalman moment prediction, `mean <- F mean + u`, `cov <- F cov F^T + Q`.
pub fn kf_predict(moments: &GaussianMoments, model: &CvModel, step: usize) -> GaussianMoments {
    let mean = &model.f * &moments.mean + model.input(step);
    let cov = &model.f * &moments.cov * model.f.transpose() + model.q_matrix();
    GaussianMoments { mean, cov }
}

fn divergence_from_mass(e: GridError) -> FilterError {
    match e {
        GridError::NonpositiveMass(m) => {
            FilterError::Divergence(format!("nonpositive posterior mass {m}"))
        }
        other => FilterError::Grid(other),
    }
}

fn round_and_normalize(
    tensor: CpdTensor,
    grid: &AxisGrid,
    cfg: &CpdFilterConfig,
    seed: u64,
) -> Result<Pmd, FilterError> {
    let rounded = rank_reduce_als(&tensor, cfg.max_rank, cfg.als_iters, cfg.als_tol, seed)?.tensor;
    let pmd = Pmd::new(grid.clone(), Weights::Cpd(rounded))?;
    normalize(&pmd).map_err(divergence_from_mass)
}

/// Factored Bayes measurement update: both likelihood matrices are lifted
/// to 4-mode CPD tensors through a truncated SVD and invariant-mode
/// embedding, multiplied into the prior with two factored Hadamard
/// products, rank-rounded, and renormalized.
pub fn measurement_update_cpd(
    state: &FilterStateCpd,
    z: [f64; 3],
    psi: f64,
    map: &TerrainMap,
    meas: &MeasModel,
    cfg: &CpdFilterConfig,
) -> Result<FilterStateCpd, FilterError> {
    let grid = &state.pmd.grid;
    let shape = grid.counts();

    let lik_pos = likelihood_position_matrix(map, z[0], grid, meas.sigma_alt());
    let lik_vel =
        likelihood_velocity_matrix([z[1], z[2]], psi, grid, [meas.r_diag[1], meas.r_diag[2]]);

    let pos_cpd = embed_svd(&svd_truncated(&lik_pos, cfg.svd_energy)?, (0, 1), &shape)?;
    let vel_cpd = embed_svd(&svd_truncated(&lik_vel, cfg.svd_energy)?, (2, 3), &shape)?;

    let posterior = pos_cpd.hadamard(&vel_cpd)?.hadamard(state.tensor())?;
    let seed = cfg.seed.wrapping_add(2 * state.step as u64);
    let pmd = round_and_normalize(posterior, grid, cfg, seed)?;
    Ok(FilterStateCpd {
        pmd,
        step: state.step,
    })
}

/// Unrounded advection output: the assembled CPD on the new grid together
/// with the per-rank SVD ranks of the two blocks.
#[derive(Debug)]
pub struct AdvectRaw {
    pub tensor: CpdTensor,
    pub grid: AxisGrid,
    /// (R_x^r, R_y^r) per source rank; the combined rank is the sum of the
    /// products.
    pub block_ranks: Vec<(usize, usize)>,
}

impl AdvectRaw {
    pub fn combined_rank(&self) -> usize {
        self.block_ranks.iter().map(|&(a, b)| a * b).sum()
    }
}

/// Extracts the 2x2 block of `f` coupling position mode `p` and velocity
/// mode `v`, checking that these two states couple to nothing else and that
/// the old velocity does not depend on the new position.
fn dynamics_block(f: &DMatrix<f64>, p: usize, v: usize) -> Result<[f64; 4], FilterError> {
    let tol = 1e-12 * f.amax().max(1.0);
    for col in 0..4 {
        if col != p && col != v && (f[(p, col)].abs() > tol || f[(v, col)].abs() > tol) {
            return Err(FilterError::NotBlockStructured);
        }
    }
    if f[(v, p)].abs() > tol {
        return Err(FilterError::NotBlockStructured);
    }
    let a = f[(p, p)];
    let b = f[(p, v)];
    let d = f[(v, v)];
    if a.abs() < 1e-12 || d.abs() < 1e-12 {
        return Err(FilterError::NotBlockStructured);
    }
    Ok([a, b, 0.0, d])
}

struct BlockSvd {
    per_rank: Vec<SvdFactors>,
}

/// Interpolates the loading vectors of one (position, velocity) block onto
/// the back-in-time image of the new grid and refactors the resulting
/// skewed-block matrices with a truncated SVD, rank by rank.
fn advect_block(
    tensor: &CpdTensor,
    old_grid: &AxisGrid,
    new_grid: &AxisGrid,
    block: [f64; 4],
    pos_mode: usize,
    vel_mode: usize,
    energy: f64,
) -> Result<BlockSvd, FilterError> {
    let [a, b, _, d] = block;
    // Inverse of [[a, b], [0, d]].
    let (ia, ib, id) = (1.0 / a, -b / (a * d), 1.0 / d);

    let pos_new = new_grid.axis(pos_mode);
    let vel_new = new_grid.axis(vel_mode);
    let n_pos = pos_new.len();
    let n_vel = vel_new.len();

    // Old velocities: one per new velocity point (the inverse block is
    // upper triangular). Old positions: one per (position, velocity) pair.
    let old_vel: Vec<f64> = vel_new.iter().map(|&v| id * v).collect();
    let mut old_pos = Vec::with_capacity(n_pos * n_vel);
    for &p in pos_new {
        for &v in vel_new {
            old_pos.push(ia * p + ib * v);
        }
    }

    let mut per_rank = Vec::with_capacity(tensor.rank());
    for r in 0..tensor.rank() {
        let load_pos: Vec<f64> = tensor.factor(pos_mode).column(r).iter().copied().collect();
        let load_vel: Vec<f64> = tensor.factor(vel_mode).column(r).iter().copied().collect();
        let interp_pos = interp_axis(old_grid.axis(pos_mode), &load_pos, &old_pos);
        let interp_vel = interp_axis(old_grid.axis(vel_mode), &load_vel, &old_vel);

        // Back-projection: flat index i = i_pos * n_vel + i_vel maps to the
        // skewed-grid cell (i_pos, i_vel).
        let skewed = DMatrix::from_fn(n_pos, n_vel, |ip, iv| {
            interp_pos[ip * n_vel + iv] * interp_vel[iv]
        });
        per_rank.push(svd_truncated(&skewed, energy)?);
    }
    Ok(BlockSvd { per_rank })
}

/// Advection of the posterior onto an explicit new grid, without rank
/// rounding or normalization. Mode pairs (0, 2) and (1, 3) are the x and y
/// world-direction blocks.
pub fn advect_cpd_raw(
    state: &FilterStateCpd,
    model: &CvModel,
    new_grid: AxisGrid,
    cfg: &CpdFilterConfig,
) -> Result<AdvectRaw, FilterError> {
    let tensor = state.tensor();
    let old_grid = &state.pmd.grid;

    let block_x = dynamics_block(&model.f, 0, 2)?;
    let block_y = dynamics_block(&model.f, 1, 3)?;
    let sx = advect_block(tensor, old_grid, &new_grid, block_x, 0, 2, cfg.svd_energy)?;
    let sy = advect_block(tensor, old_grid, &new_grid, block_y, 1, 3, cfg.svd_energy)?;

    let mut block_ranks = Vec::with_capacity(tensor.rank());
    let mut lambdas = Vec::new();
    let counts = new_grid.counts();
    let mut cols: [Vec<Vec<f64>>; 4] = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for r in 0..tensor.rank() {
        let fx = &sx.per_rank[r];
        let fy = &sy.per_rank[r];
        block_ranks.push((fx.rank(), fy.rank()));
        for rx in 0..fx.rank() {
            for ry in 0..fy.rank() {
                lambdas.push(tensor.lambdas()[r] * fx.singular[rx] * fy.singular[ry]);
                cols[0].push(fx.left.column(rx).iter().copied().collect());
                cols[2].push(fx.right.column(rx).iter().copied().collect());
                cols[1].push(fy.left.column(ry).iter().copied().collect());
                cols[3].push(fy.right.column(ry).iter().copied().collect());
            }
        }
    }
    let rank = lambdas.len();
    let mut factors = Vec::with_capacity(4);
    for (j, mode_cols) in cols.iter().enumerate() {
        let mut m = DMatrix::zeros(counts[j], rank);
        for (c, col) in mode_cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                m[(i, c)] = v;
            }
        }
        factors.push(m);
    }
    Ok(AdvectRaw {
        tensor: CpdTensor::new(lambdas, factors)?,
        grid: new_grid,
        block_ranks,
    })
}

/// Advection onto an explicit target grid: raw advection, then rank
/// rounding and renormalization.
pub fn advect_cpd_onto(
    state: &FilterStateCpd,
    model: &CvModel,
    new_grid: AxisGrid,
    cfg: &CpdFilterConfig,
) -> Result<FilterStateCpd, FilterError> {
    let raw = advect_cpd_raw(state, model, new_grid, cfg)?;
    let seed = cfg.seed.wrapping_add(2 * state.step as u64 + 1);
    let pmd = round_and_normalize(raw.tensor, &raw.grid, cfg, seed)?;
    Ok(FilterStateCpd {
        pmd,
        step: state.step,
    })
}

/// Lagrangian advection: designs the axes-aligned predictive grid from the
/// Kalman-predicted moments and moves the posterior onto it.
pub fn advect_cpd(
    state: &FilterStateCpd,
    model: &CvModel,
    cfg: &CpdFilterConfig,
) -> Result<FilterStateCpd, FilterError> {
    let moments = moments_from_pmd(&state.pmd)?;
    let predicted = kf_predict(&moments, model, state.step);
    let new_grid = design_grid(&predicted, cfg.sigma_mult, &cfg.counts)?;
    advect_cpd_onto(state, model, new_grid, cfg)
}

/// Diffusion: each loading vector convolved along its own axis with the 1-D
/// Gaussian kernel of the matching process-noise variance. Rank unchanged.
pub fn diffuse_cpd(state: &FilterStateCpd, model: &CvModel) -> Result<FilterStateCpd, FilterError> {
    let grid = &state.pmd.grid;
    let tensor = state.tensor();
    let rank = tensor.rank();
    let mut factors = Vec::with_capacity(4);
    for j in 0..4 {
        let q = model.q_diag[j];
        if q <= 0.0 {
            factors.push(tensor.factor(j).clone());
            continue;
        }
        let n = grid.axis(j).len();
        let delta = grid.delta(j);
        let kernel = gaussian_kernel_axis(n, delta, q)?;
        let mut f = DMatrix::zeros(n, rank);
        for r in 0..rank {
            let col: Vec<f64> = tensor.factor(j).column(r).iter().copied().collect();
            let conv = crate::grid::convolve_axis(&col, &kernel, delta);
            for (i, &v) in conv.iter().enumerate() {
                f[(i, r)] = v;
            }
        }
        factors.push(f);
    }
    let diffused = CpdTensor::new(tensor.lambdas().to_vec(), factors)?;
    let pmd = Pmd::new(grid.clone(), Weights::Cpd(diffused))?;
    let pmd = normalize(&pmd).map_err(divergence_from_mass)?;
    Ok(FilterStateCpd {
        pmd,
        step: state.step,
    })
}

/// One complete filter cycle: measurement update, point estimate, advection
/// onto the next predictive grid, diffusion. Returns the next prior state
/// and the posterior-mean estimate at the current step.
pub fn lgbf_cpd_step(
    state: &FilterStateCpd,
    z: [f64; 3],
    psi: f64,
    map: &TerrainMap,
    meas: &MeasModel,
    model: &CvModel,
    cfg: &CpdFilterConfig,
) -> Result<(FilterStateCpd, [f64; 4]), FilterError> {
    let posterior = measurement_update_cpd(state, z, psi, map, meas, cfg)?;
    let moments = moments_from_pmd(&posterior.pmd)?;
    let estimate = [
        moments.mean[0],
        moments.mean[1],
        moments.mean[2],
        moments.mean[3],
    ];
    let predicted = kf_predict(&moments, model, posterior.step);
    let new_grid = design_grid(&predicted, cfg.sigma_mult, &cfg.counts)?;
    let advected = advect_cpd_onto(&posterior, model, new_grid, cfg)?;
    let diffused = diffuse_cpd(&advected, model)?;
    Ok((
        FilterStateCpd {
            pmd: diffused.pmd,
            step: state.step + 1,
        },
        estimate,
    ))
}

/// Initial prior state from diagonal Gaussian moments.
pub fn init_cpd_state(
    moments: &GaussianMoments,
    cfg: &CpdFilterConfig,
) -> Result<FilterStateCpd, FilterError> {
    cfg.validate()?;
    let grid = design_grid(moments, cfg.sigma_mult, &cfg.counts)?;
    let pmd = crate::grid::gaussian_pmd_init(moments, &grid)?;
    Ok(FilterStateCpd { pmd, step: 0 })
}
