//! Rank rounding and dense decomposition by alternating least squares.
//!
//! The solver fits a rank-R model to either a CPD source (rank rounding,
//! fully factored: the source is never densified) or a dense source. Each
//! sweep updates one factor matrix at a time from the matricised-tensor
//! times Khatri-Rao product (MTTKRP) and the Hadamard product of the other
//! factors' Gram matrices; column norms are absorbed into the weights after
//! every mode update.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CpdError, CpdTensor, DenseTensor};

pub const DEFAULT_ALS_ITERS: usize = 50;
pub const DEFAULT_ALS_TOL: f64 = 1e-6;

/// Result of an ALS fit. `fit` is 1 - |T - M|_F / |T|_F for the returned
/// iterate; `fit_history` holds the fit after each completed sweep.
#[derive(Debug, Clone)]
pub struct AlsOutcome {
    pub tensor: CpdTensor,
    pub fit: f64,
    pub sweeps: usize,
    pub fit_history: Vec<f64>,
}

trait AlsSource {
    fn shape(&self) -> Vec<usize>;
    /// Initial model factors. The default is seeded uniform noise; sources
    /// with more structure may override it with something better informed.
    fn init_factors(&self, rank: usize, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
        self.shape()
            .iter()
            .map(|&n| DMatrix::from_fn(n, rank, |_, _| rng.gen::<f64>()))
            .collect()
    }
    fn norm_squared(&self) -> f64;
    /// MTTKRP in mode `n` against the model factors, including the source's
    /// own weights. Shape N_n x R.
    fn mttkrp(&self, model: &[DMatrix<f64>], n: usize) -> DMatrix<f64>;
    /// Inner product <source, model>; `last_mttkrp` is the mode-(D-1) MTTKRP
    /// computed with the current model factors.
    fn inner(
        &self,
        model: &[DMatrix<f64>],
        lambdas: &[f64],
        last_mttkrp: &DMatrix<f64>,
    ) -> f64;
}

struct CpdSource<'a>(&'a CpdTensor);

impl AlsSource for CpdSource<'_> {
    fn shape(&self) -> Vec<usize> {
        self.0.shape()
    }

    /// Seeds the model with the source's own components: candidates ranked
    /// by effective weight |lambda_r| * prod_j ||A_j[:, r]||, greedily
    /// skipping components nearly collinear with an already chosen one
    /// (product of per-mode cosines above 0.999). Remaining columns are
    /// filled with seeded noise. Far faster than a random start when the
    /// structural rank exceeds the true rank, which is the common case for
    /// Hadamard-product and advection outputs.
    fn init_factors(&self, rank: usize, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
        let src = self.0;
        let d = src.ndim();
        let rs = src.rank();
        let col_norms: Vec<Vec<f64>> = (0..d)
            .map(|j| (0..rs).map(|r| src.factor(j).column(r).norm()).collect())
            .collect();
        let weight = |r: usize| -> f64 {
            let mut w = src.lambdas()[r].abs();
            for norms in &col_norms {
                w *= norms[r];
            }
            w
        };
        let mut order: Vec<usize> = (0..rs).collect();
        order.sort_by(|&a, &b| weight(b).total_cmp(&weight(a)));

        let mut chosen: Vec<usize> = Vec::with_capacity(rank);
        for &c in &order {
            if chosen.len() == rank {
                break;
            }
            if weight(c) == 0.0 {
                break;
            }
            let collinear = chosen.iter().any(|&p| {
                let mut cos = 1.0;
                for j in 0..d {
                    let denom = col_norms[j][c] * col_norms[j][p];
                    if denom == 0.0 {
                        return false;
                    }
                    cos *= src.factor(j).column(c).dot(&src.factor(j).column(p)) / denom;
                }
                cos.abs() > 0.999
            });
            if !collinear {
                chosen.push(c);
            }
        }

        self.shape()
            .iter()
            .enumerate()
            .map(|(j, &n)| {
                DMatrix::from_fn(n, rank, |i, r| match chosen.get(r) {
                    Some(&c) => src.factor(j)[(i, c)],
                    None => rng.gen::<f64>(),
                })
            })
            .collect()
    }

    fn norm_squared(&self) -> f64 {
        self.0.norm_squared()
    }

    fn mttkrp(&self, model: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
        // A_n diag(lambda_src) (hadamard_{j != n} A_j^T B_j)
        let src = self.0;
        let rs = src.rank();
        let rm = model[0].ncols();
        let mut cross = DMatrix::from_element(rs, rm, 1.0);
        for j in 0..src.ndim() {
            if j != n {
                let g = src.factor(j).transpose() * &model[j];
                cross.component_mul_assign(&g);
            }
        }
        for (r, l) in src.lambdas().iter().enumerate() {
            for c in 0..rm {
                cross[(r, c)] *= l;
            }
        }
        src.factor(n) * cross
    }

    fn inner(&self, model: &[DMatrix<f64>], lambdas: &[f64], _last: &DMatrix<f64>) -> f64 {
        let src = self.0;
        let rs = src.rank();
        let rm = lambdas.len();
        let mut cross = DMatrix::from_element(rs, rm, 1.0);
        for j in 0..src.ndim() {
            let g = src.factor(j).transpose() * &model[j];
            cross.component_mul_assign(&g);
        }
        let mut total = 0.0;
        for r in 0..rs {
            for c in 0..rm {
                total += src.lambdas()[r] * lambdas[c] * cross[(r, c)];
            }
        }
        total
    }
}

struct DenseSource<'a>(&'a DenseTensor);

impl AlsSource for DenseSource<'_> {
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    fn norm_squared(&self) -> f64 {
        self.0.values().iter().map(|v| v * v).sum()
    }

    fn mttkrp(&self, model: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
        let shape = self.0.shape();
        let d = shape.len();
        let rm = model[0].ncols();
        let mut out = DMatrix::zeros(shape[n], rm);
        let mut idx = vec![0usize; d];
        for &v in self.0.values() {
            if v != 0.0 {
                for r in 0..rm {
                    let mut term = v;
                    for j in 0..d {
                        if j != n {
                            term *= model[j][(idx[j], r)];
                        }
                    }
                    out[(idx[n], r)] += term;
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
        out
    }

    fn inner(&self, model: &[DMatrix<f64>], lambdas: &[f64], last: &DMatrix<f64>) -> f64 {
        // <X, M> = sum_r lambda_r (B_{D-1}[:, r] . MTTKRP_{D-1}[:, r])
        let b = model.last().unwrap();
        let mut total = 0.0;
        for (r, l) in lambdas.iter().enumerate() {
            total += l * b.column(r).dot(&last.column(r));
        }
        total
    }
}

fn als_fit<S: AlsSource>(
    source: &S,
    rank: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<AlsOutcome, CpdError> {
    if rank == 0 {
        return Err(CpdError::InvalidRank(rank));
    }
    let shape = source.shape();
    let d = shape.len();
    let norm_x = source.norm_squared().max(0.0).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factors: Vec<DMatrix<f64>> = source.init_factors(rank, &mut rng);
    let mut lambdas = vec![1.0; rank];

    if norm_x == 0.0 {
        // Zero tensor: the zero model is exact.
        let tensor = CpdTensor::new(vec![0.0; rank], factors)?;
        return Ok(AlsOutcome {
            tensor,
            fit: 1.0,
            sweeps: 0,
            fit_history: vec![],
        });
    }

    let mut grams: Vec<DMatrix<f64>> =
        factors.iter().map(|f| f.transpose() * f).collect();

    let mut fit_history = Vec::new();
    let mut fit_old = 0.0;
    let mut best: Option<(f64, Vec<f64>, Vec<DMatrix<f64>>)> = None;
    let mut sweeps = 0;
    let mut last_mttkrp = DMatrix::zeros(shape[d - 1], rank);

    for _ in 0..max_iters {
        for n in 0..d {
            let m = source.mttkrp(&factors, n);
            if n == d - 1 {
                last_mttkrp = m.clone();
            }
            let mut v = DMatrix::from_element(rank, rank, 1.0);
            for (j, g) in grams.iter().enumerate() {
                if j != n {
                    v.component_mul_assign(g);
                }
            }
            let vp = v
                .pseudo_inverse(1e-12)
                .unwrap_or_else(|_| DMatrix::zeros(rank, rank));
            let mut bn = m * vp;
            // Absorb column norms into the weights.
            for r in 0..rank {
                let norm = bn.column(r).norm();
                lambdas[r] = norm;
                if norm > 0.0 {
                    let inv = 1.0 / norm;
                    bn.column_mut(r).scale_mut(inv);
                }
            }
            grams[n] = bn.transpose() * &bn;
            factors[n] = bn;
        }
        sweeps += 1;

        let inner = source.inner(&factors, &lambdas, &last_mttkrp);
        let mut model_sq = DMatrix::from_element(rank, rank, 1.0);
        for g in &grams {
            model_sq.component_mul_assign(g);
        }
        let mut norm_m_sq = 0.0;
        for a in 0..rank {
            for b in 0..rank {
                norm_m_sq += lambdas[a] * lambdas[b] * model_sq[(a, b)];
            }
        }
        let err_sq = (norm_x * norm_x - 2.0 * inner + norm_m_sq).max(0.0);
        let fit = 1.0 - err_sq.sqrt() / norm_x;
        fit_history.push(fit);

        if best.as_ref().map_or(true, |(bf, _, _)| fit > *bf) {
            best = Some((fit, lambdas.clone(), factors.clone()));
        }
        if (fit - fit_old).abs() < tol {
            break;
        }
        fit_old = fit;
    }

    let (fit, lambdas, factors) = best.expect("at least one sweep ran");
    Ok(AlsOutcome {
        tensor: CpdTensor::new(lambdas, factors)?,
        fit,
        sweeps,
        fit_history,
    })
}

/// Refits `t` at `target_rank` by alternating least squares, entirely in
/// factored form. If `t` already satisfies the rank bound it is returned
/// as-is with a perfect fit. Non-convergence is not an error: the best
/// iterate seen is returned with its fit value.
pub fn rank_reduce_als(
    t: &CpdTensor,
    target_rank: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<AlsOutcome, CpdError> {
    if target_rank == 0 {
        return Err(CpdError::InvalidRank(target_rank));
    }
    if t.rank() <= target_rank {
        return Ok(AlsOutcome {
            tensor: t.clone(),
            fit: 1.0,
            sweeps: 0,
            fit_history: vec![],
        });
    }
    als_fit(&CpdSource(t), target_rank, max_iters, tol, seed)
}

/// CP decomposition of a dense tensor with the default stopping rule.
pub fn decompose_dense(m: &DenseTensor, rank: usize, seed: u64) -> Result<AlsOutcome, CpdError> {
    decompose_dense_with(m, rank, DEFAULT_ALS_ITERS, DEFAULT_ALS_TOL, seed)
}

pub fn decompose_dense_with(
    m: &DenseTensor,
    rank: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<AlsOutcome, CpdError> {
    if m.len() > super::ORACLE_CAP {
        return Err(CpdError::OracleCapExceeded {
            entries: m.len(),
            cap: super::ORACLE_CAP,
        });
    }
    als_fit(&DenseSource(m), rank, max_iters, tol, seed)
}
