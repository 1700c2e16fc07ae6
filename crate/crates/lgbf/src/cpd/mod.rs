//! Canonical polyadic tensor algebra.
//!
//! A D-mode tensor is stored as a weighted sum of R rank-one terms: a weight
//! vector λ and D factor matrices whose r-th columns are the loading vectors
//! of the r-th term. All production operations work on the factored form;
//! dense tensors exist only as test oracles and for small problems.

mod als;

pub use als::{decompose_dense, decompose_dense_with, rank_reduce_als, AlsOutcome};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense entry count above which [`CpdTensor::to_dense`] refuses to run.
pub const ORACLE_CAP: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum CpdError {
    #[error("no factor matrices given")]
    Empty,
    #[error("mode {mode}: factor has {found} columns, expected rank {expected}")]
    RankMismatch {
        mode: usize,
        found: usize,
        expected: usize,
    },
    #[error("mode {mode}: factor has {found} rows, expected {expected}")]
    ShapeMismatch {
        mode: usize,
        found: usize,
        expected: usize,
    },
    #[error("shapes differ: {0:?} vs {1:?}")]
    IncompatibleShapes(Vec<usize>, Vec<usize>),
    #[error("dense tensor would hold {entries} entries, above the cap of {cap}")]
    OracleCapExceeded { entries: usize, cap: usize },
    #[error("invalid rank {0}")]
    InvalidRank(usize),
    #[error("dense value count {found} does not match shape product {expected}")]
    DenseLenMismatch { found: usize, expected: usize },
    #[error("variant position {0} out of range for {1} modes")]
    PositionOutOfRange(usize, usize),
    #[error("variant positions must be strictly increasing")]
    PositionsNotIncreasing,
    #[error("empty matrix")]
    EmptyMatrix,
}

/// A D-mode tensor stored densely in row-major multi-index order
/// (last index varies fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, CpdError> {
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(CpdError::DenseLenMismatch {
                found: values.len(),
                expected,
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row-major strides (last mode has stride 1).
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.shape.len()];
        for j in (0..self.shape.len().saturating_sub(1)).rev() {
            s[j] = s[j + 1] * self.shape[j + 1];
        }
        s
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut flat = 0;
        for (j, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.shape[j]);
            flat = flat * self.shape[j] + i;
        }
        flat
    }

    /// Decodes a flat index back into a multi-index.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.shape.len()];
        for j in (0..self.shape.len()).rev() {
            idx[j] = flat % self.shape[j];
            flat /= self.shape[j];
        }
        idx
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let f = self.flat_index(idx);
        self.values[f] = v;
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Truncated singular value decomposition of a matrix, M ≈ U diag(S) Vᵀ,
/// with singular values sorted in nonincreasing order.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub left: DMatrix<f64>,
    pub singular: Vec<f64>,
    pub right: DMatrix<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.singular.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.left.nrows(), self.right.nrows());
        for r in 0..self.rank() {
            let u = self.left.column(r);
            let v = self.right.column(r);
            let s = self.singular[r];
            for i in 0..u.len() {
                for j in 0..v.len() {
                    m[(i, j)] += s * u[i] * v[j];
                }
            }
        }
        m
    }
}

/// A tensor in canonical polyadic format: `sum_r lambdas[r] *
/// factors[0][:,r] ∘ … ∘ factors[D-1][:,r]`.
#[derive(Debug, Clone)]
pub struct CpdTensor {
    lambdas: Vec<f64>,
    factors: Vec<DMatrix<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CpdDump {
    shape: Vec<usize>,
    lambdas: Vec<f64>,
    /// One row-major (rows × rank) array per factor matrix.
    factors: Vec<Vec<f64>>,
}

impl CpdTensor {
    /// Validates and wraps the given weights and factor matrices.
    pub fn new(lambdas: Vec<f64>, factors: Vec<DMatrix<f64>>) -> Result<Self, CpdError> {
        if factors.is_empty() {
            return Err(CpdError::Empty);
        }
        let rank = lambdas.len();
        if rank == 0 {
            return Err(CpdError::InvalidRank(0));
        }
        for (mode, f) in factors.iter().enumerate() {
            if f.ncols() != rank {
                return Err(CpdError::RankMismatch {
                    mode,
                    found: f.ncols(),
                    expected: rank,
                });
            }
        }
        Ok(Self { lambdas, factors })
    }

    /// Rank-one tensor from one loading vector per mode.
    pub fn rank_one(lambda: f64, loadings: Vec<Vec<f64>>) -> Result<Self, CpdError> {
        let factors = loadings
            .into_iter()
            .map(|v| DMatrix::from_column_slice(v.len(), 1, &v))
            .collect();
        Self::new(vec![lambda], factors)
    }

    pub fn rank(&self) -> usize {
        self.lambdas.len()
    }

    pub fn ndim(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &DMatrix<f64> {
        &self.factors[mode]
    }

    /// Evaluates a single entry, Σ_r λ_r Π_j p_j[i_j, r].
    pub fn entry(&self, idx: &[usize]) -> f64 {
        let mut total = 0.0;
        for r in 0..self.rank() {
            let mut term = self.lambdas[r];
            for (j, &i) in idx.iter().enumerate() {
                term *= self.factors[j][(i, r)];
            }
            total += term;
        }
        total
    }

    /// Materialises the full tensor. Refuses above [`ORACLE_CAP`] entries;
    /// production paths never densify.
    pub fn to_dense(&self) -> Result<DenseTensor, CpdError> {
        self.to_dense_capped(ORACLE_CAP)
    }

    pub fn to_dense_capped(&self, cap: usize) -> Result<DenseTensor, CpdError> {
        let shape = self.shape();
        let entries: usize = shape.iter().product();
        if entries > cap {
            return Err(CpdError::OracleCapExceeded { entries, cap });
        }
        let mut out = DenseTensor::zeros(shape.clone());
        let d = self.ndim();
        let mut idx = vec![0usize; d];
        for flat in 0..entries {
            out.values[flat] = self.entry(&idx);
            // row-major increment
            for j in (0..d).rev() {
                idx[j] += 1;
                if idx[j] < shape[j] {
                    break;
                }
                idx[j] = 0;
            }
        }
        Ok(out)
    }

    /// Factored element-wise product. The result has rank `R_a * R_b`;
    /// component (r, s) maps to column r * R_b + s.
    pub fn hadamard(&self, other: &CpdTensor) -> Result<CpdTensor, CpdError> {
        if self.shape() != other.shape() {
            return Err(CpdError::IncompatibleShapes(self.shape(), other.shape()));
        }
        let ra = self.rank();
        let rb = other.rank();
        let mut lambdas = Vec::with_capacity(ra * rb);
        for r in 0..ra {
            for s in 0..rb {
                lambdas.push(self.lambdas[r] * other.lambdas[s]);
            }
        }
        let mut factors = Vec::with_capacity(self.ndim());
        for j in 0..self.ndim() {
            let a = &self.factors[j];
            let b = &other.factors[j];
            let n = a.nrows();
            let mut f = DMatrix::zeros(n, ra * rb);
            for r in 0..ra {
                for s in 0..rb {
                    let col = r * rb + s;
                    for i in 0..n {
                        f[(i, col)] = a[(i, r)] * b[(i, s)];
                    }
                }
            }
            factors.push(f);
        }
        CpdTensor::new(lambdas, factors)
    }

    /// Sum of all entries without densification:
    /// Σ_r λ_r Π_j (column sum of p_j[:, r]).
    pub fn sum_entries(&self) -> f64 {
        let mut total = 0.0;
        for r in 0..self.rank() {
            let mut term = self.lambdas[r];
            for f in &self.factors {
                term *= f.column(r).sum();
            }
            total += term;
        }
        total
    }

    /// Multiplies all weights by `s`; factors untouched.
    pub fn scale(&self, s: f64) -> CpdTensor {
        CpdTensor {
            lambdas: self.lambdas.iter().map(|l| l * s).collect(),
            factors: self.factors.clone(),
        }
    }

    /// Squared Frobenius norm computed from factor Gram matrices.
    pub fn norm_squared(&self) -> f64 {
        let r = self.rank();
        let mut g = DMatrix::from_element(r, r, 1.0);
        for f in &self.factors {
            let gram = f.transpose() * f;
            g.component_mul_assign(&gram);
        }
        let mut total = 0.0;
        for a in 0..r {
            for b in 0..r {
                total += self.lambdas[a] * self.lambdas[b] * g[(a, b)];
            }
        }
        total
    }

    /// Debug dump used for test fixtures; factors serialised row-major.
    pub fn to_json(&self) -> String {
        let dump = CpdDump {
            shape: self.shape(),
            lambdas: self.lambdas.clone(),
            factors: self
                .factors
                .iter()
                .map(|f| {
                    let mut v = Vec::with_capacity(f.len());
                    for i in 0..f.nrows() {
                        for c in 0..f.ncols() {
                            v.push(f[(i, c)]);
                        }
                    }
                    v
                })
                .collect(),
        };
        serde_json::to_string(&dump).expect("cpd dump serialises")
    }
}

/// Truncated SVD keeping the smallest leading set of singular triplets whose
/// magnitudes cover at least `energy_fraction` of the total.
pub fn svd_truncated(m: &DMatrix<f64>, energy_fraction: f64) -> Result<SvdFactors, CpdError> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(CpdError::EmptyMatrix);
    }
    // Symmetric eigendecomposition of the Gram matrix on the smaller side.
    // For the small factor matrices handled here this is more robust than
    // the iterative bidiagonal SVD, which can fail to converge on
    // degenerate inputs (for example constant matrices). With all triplets
    // kept the reconstruction is M (V V^T) = M up to round-off because the
    // left vectors are recomputed as M v / ||M v||.
    let transposed = m.nrows() < m.ncols();
    let work = if transposed { m.transpose() } else { m.clone() };
    let gram = work.transpose() * &work;
    let eig = gram.symmetric_eigen();

    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut singular_all = Vec::with_capacity(n);
    let mut lefts = Vec::with_capacity(n);
    let mut rights = Vec::with_capacity(n);
    for &i in &order {
        let v = eig.eigenvectors.column(i).into_owned();
        let mut u = &work * &v;
        let s = u.norm();
        if s > 0.0 {
            u /= s;
        }
        singular_all.push(s);
        lefts.push(u);
        rights.push(v);
    }

    let total: f64 = singular_all.iter().sum();
    let mut keep = 1;
    if total > 0.0 {
        let mut cum = 0.0;
        for (pos, &s) in singular_all.iter().enumerate() {
            cum += s;
            keep = pos + 1;
            if cum / total >= energy_fraction {
                break;
            }
        }
    }

    let mut left = DMatrix::zeros(work.nrows(), keep);
    let mut right = DMatrix::zeros(work.ncols(), keep);
    for col in 0..keep {
        left.set_column(col, &lefts[col]);
        right.set_column(col, &rights[col]);
    }
    let singular = singular_all[..keep].to_vec();
    if transposed {
        std::mem::swap(&mut left, &mut right);
    }
    Ok(SvdFactors {
        left,
        singular,
        right,
    })
}

/// Lifts a CPD over `d` variant modes into a D-mode tensor that is constant
/// along every other mode: variant positions receive the component factors,
/// invariant positions all-ones factors. Rank is preserved.
pub fn embed_invariant_modes(
    components: &CpdTensor,
    variant_positions: &[usize],
    full_shape: &[usize],
) -> Result<CpdTensor, CpdError> {
    let d = components.ndim();
    let dd = full_shape.len();
    if variant_positions.len() != d {
        return Err(CpdError::IncompatibleShapes(
            components.shape(),
            full_shape.to_vec(),
        ));
    }
    for w in variant_positions.windows(2) {
        if w[1] <= w[0] {
            return Err(CpdError::PositionsNotIncreasing);
        }
    }
    let rank = components.rank();
    let mut factors = Vec::with_capacity(dd);
    let mut next_variant = 0usize;
    for (mode, &n) in full_shape.iter().enumerate() {
        if next_variant < d && variant_positions[next_variant] == mode {
            let f = components.factor(next_variant);
            if f.nrows() != n {
                return Err(CpdError::ShapeMismatch {
                    mode,
                    found: f.nrows(),
                    expected: n,
                });
            }
            factors.push(f.clone());
            next_variant += 1;
        } else {
            factors.push(DMatrix::from_element(n, rank, 1.0));
        }
    }
    if next_variant != d {
        return Err(CpdError::PositionOutOfRange(
            variant_positions[next_variant],
            dd,
        ));
    }
    CpdTensor::new(components.lambdas.clone(), factors)
}

/// CPD with the singular triplets of `svd` placed at two variant modes.
pub fn embed_svd(
    svd: &SvdFactors,
    positions: (usize, usize),
    full_shape: &[usize],
) -> Result<CpdTensor, CpdError> {
    let components = CpdTensor::new(
        svd.singular.clone(),
        vec![svd.left.clone(), svd.right.clone()],
    )?;
    embed_invariant_modes(&components, &[positions.0, positions.1], full_shape)
}
