//! Bootstrap particle filter baseline.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::FilterError;
use crate::grid::GaussianMoments;
use crate::tan::{dcm, terrain_sample, CvModel, MeasModel, TerrainMap};

/// Weighted particle cloud over the 4-dimensional state.
#[derive(Debug, Clone)]
pub struct Particles {
    pub states: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

impl Particles {
    /// Samples an initial cloud from diagonal Gaussian moments.
    pub fn from_moments(moments: &GaussianMoments, n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut states = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = [0.0; 4];
            for (j, xj) in x.iter_mut().enumerate() {
                let std = moments.cov[(j, j)].max(0.0).sqrt();
                let d = Normal::new(moments.mean[j], std).expect("finite moments");
                *xj = d.sample(rng);
            }
            states.push(x);
        }
        Self {
            weights: vec![1.0 / n as f64; n],
            states,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Weighted mean of the cloud.
    pub fn mean(&self) -> [f64; 4] {
        let mut m = [0.0; 4];
        for (x, &w) in self.states.iter().zip(&self.weights) {
            for j in 0..4 {
                m[j] += w * x[j];
            }
        }
        m
    }
}

fn log_gauss(err: f64, var: f64) -> f64 {
    -0.5 * err * err / var
}

/// Log-likelihood of the navigation measurement at one particle; `None`
/// when the particle position leaves the terrain map.
fn particle_log_lik(
    x: &[f64; 4],
    z: [f64; 3],
    psi: f64,
    map: &TerrainMap,
    meas: &MeasModel,
) -> Option<f64> {
    let h = terrain_sample(map, (x[0], x[1])).ok()?;
    let c = dcm(psi);
    let vb = [
        c[(0, 0)] * x[2] + c[(0, 1)] * x[3],
        c[(1, 0)] * x[2] + c[(1, 1)] * x[3],
    ];
    Some(
        log_gauss(z[0] - h, meas.r_diag[0])
            + log_gauss(z[1] - vb[0], meas.r_diag[1])
            + log_gauss(z[2] - vb[1], meas.r_diag[2]),
    )
}

/// Systematic resampling: one uniform offset, `n` evenly spaced pointers.
pub fn systematic_resample(p: &mut Particles, rng: &mut ChaCha8Rng) {
    let n = p.len();
    let u0: f64 = rng.gen::<f64>() / n as f64;
    let mut cum = 0.0;
    let mut out = Vec::with_capacity(n);
    let mut i = 0usize;
    for k in 0..n {
        let u = u0 + k as f64 / n as f64;
        while cum + p.weights[i] < u && i + 1 < n {
            cum += p.weights[i];
            i += 1;
        }
        out.push(p.states[i]);
    }
    p.states = out;
    p.weights = vec![1.0 / n as f64; n];
}

/// One bootstrap cycle: weight with the current measurement, estimate,
/// resample, propagate through the dynamics with sampled process noise.
pub fn pf_bootstrap_step(
    p: &mut Particles,
    z: [f64; 3],
    psi: f64,
    map: &TerrainMap,
    meas: &MeasModel,
    model: &CvModel,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<[f64; 4], FilterError> {
    let n = p.len();
    // Log-weights, shifted by the maximum before exponentiation.
    let mut logs = vec![f64::NEG_INFINITY; n];
    let mut max_log = f64::NEG_INFINITY;
    for (i, x) in p.states.iter().enumerate() {
        if let Some(l) = particle_log_lik(x, z, psi, map, meas) {
            logs[i] = l;
            if l > max_log {
                max_log = l;
            }
        }
    }
    if !max_log.is_finite() {
        return Err(FilterError::Divergence(
            "all particles left the map or had zero likelihood".into(),
        ));
    }
    let mut total = 0.0;
    for i in 0..n {
        let w = p.weights[i] * (logs[i] - max_log).exp();
        p.weights[i] = w;
        total += w;
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(FilterError::Divergence("particle weights collapsed".into()));
    }
    for w in &mut p.weights {
        *w /= total;
    }
    let estimate = p.mean();

    systematic_resample(p, rng);

    let u = model.input(step);
    let noise_std: Vec<f64> = model.q_diag.iter().map(|q| q.max(0.0).sqrt()).collect();
    for x in &mut p.states {
        let xv = DVector::from_row_slice(x);
        let mut pred = &model.f * xv + &u;
        for j in 0..4 {
            if noise_std[j] > 0.0 {
                let d = Normal::new(0.0, noise_std[j]).expect("finite std");
                pred[j] += d.sample(rng);
            }
        }
        for j in 0..4 {
            x[j] = pred[j];
        }
    }
    Ok(estimate)
}
