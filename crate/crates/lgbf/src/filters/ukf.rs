//! Unscented Kalman filter baseline.

use nalgebra::{DMatrix, DVector};

use super::{kf_predict, FilterError};
use crate::grid::GaussianMoments;
use crate::tan::{dcm, terrain_sample, CvModel, MeasModel, TerrainMap};

/// Scaling parameters of the unscented transform.
#[derive(Debug, Clone, Copy)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

fn measurement_fn(
    x: &DVector<f64>,
    psi: f64,
    map: &TerrainMap,
) -> Result<DVector<f64>, FilterError> {
    let h = terrain_sample(map, (x[0], x[1]))
        .map_err(|e| FilterError::Divergence(format!("sigma point off map: {e}")))?;
    let c = dcm(psi);
    Ok(DVector::from_vec(vec![
        h,
        c[(0, 0)] * x[2] + c[(0, 1)] * x[3],
        c[(1, 0)] * x[2] + c[(1, 1)] * x[3],
    ]))
}

/// One UKF cycle: unscented measurement update with the current
/// measurement, then the linear Kalman time update. Returns the predicted
/// moments for the next step and the updated-state estimate.
pub fn ukf_step(
    moments: &GaussianMoments,
    z: [f64; 3],
    psi: f64,
    map: &TerrainMap,
    meas: &MeasModel,
    model: &CvModel,
    step: usize,
    params: &UkfParams,
) -> Result<(GaussianMoments, [f64; 4]), FilterError> {
    let n = moments.mean.len();
    let lambda = params.alpha * params.alpha * (n as f64 + params.kappa) - n as f64;
    let scale = n as f64 + lambda;

    let chol = (moments.cov.clone() * scale)
        .cholesky()
        .ok_or_else(|| FilterError::Divergence("covariance not positive definite".into()))?;
    let l = chol.l();

    let mut sigmas = Vec::with_capacity(2 * n + 1);
    sigmas.push(moments.mean.clone());
    for j in 0..n {
        let col = l.column(j).into_owned();
        sigmas.push(&moments.mean + &col);
        sigmas.push(&moments.mean - &col);
    }

    let w0m = lambda / scale;
    let w0c = w0m + 1.0 - params.alpha * params.alpha + params.beta;
    let wi = 1.0 / (2.0 * scale);

    let zs: Vec<DVector<f64>> = sigmas
        .iter()
        .map(|s| measurement_fn(s, psi, map))
        .collect::<Result<_, _>>()?;

    let m = zs[0].len();
    let mut z_mean = DVector::zeros(m);
    for (i, zi) in zs.iter().enumerate() {
        let w = if i == 0 { w0m } else { wi };
        z_mean += zi * w;
    }

    let mut s = DMatrix::from_diagonal(&DVector::from_row_slice(&meas.r_diag));
    let mut pxz = DMatrix::zeros(n, m);
    for (i, (xi, zi)) in sigmas.iter().zip(&zs).enumerate() {
        let w = if i == 0 { w0c } else { wi };
        let dz = zi - &z_mean;
        let dx = xi - &moments.mean;
        s += &dz * dz.transpose() * w;
        pxz += dx * dz.transpose() * w;
    }

    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or_else(|| FilterError::Divergence("innovation covariance singular".into()))?;
    let k = pxz * &s_inv;
    let innovation = DVector::from_row_slice(&z) - &z_mean;
    let mean_upd = &moments.mean + &k * &innovation;
    let mut cov_upd = &moments.cov - &k * &s * k.transpose();
    // Symmetrize against round-off before the PSD check in the constructor.
    cov_upd = (&cov_upd + cov_upd.transpose()) * 0.5;

    let updated = GaussianMoments::new(mean_upd.clone(), cov_upd)
        .map_err(|e| FilterError::Divergence(format!("updated covariance invalid: {e}")))?;
    let estimate = [mean_upd[0], mean_upd[1], mean_upd[2], mean_upd[3]];
    let predicted = kf_predict(&updated, model, step);
    Ok((predicted, estimate))
}
