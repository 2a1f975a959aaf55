//! Dense symmetric linear algebra and kernel-matrix primitives.
//!
//! Everything here operates on small dense matrices (mini-batch sizes, a few
//! hundred rows at most), so all routines are direct dense algorithms with no
//! sparse or randomized paths. Values are immutable after construction and
//! safe to share across threads.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{CodError, Result};

/// Dense matrix of finite `f64` entries with positive dimensions.
///
/// Construction validates that every entry is finite, so downstream code can
/// assume NaN/Inf never propagate silently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct DenseMatrix {
    inner: DMatrix<f64>,
}

/// Row-major serialization form of [`DenseMatrix`].
#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl From<DenseMatrix> for RawMatrix {
    fn from(m: DenseMatrix) -> Self {
        let mut data = Vec::with_capacity(m.rows() * m.cols());
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                data.push(m.inner[(i, j)]);
            }
        }
        RawMatrix {
            rows: m.rows(),
            cols: m.cols(),
            data,
        }
    }
}

impl TryFrom<RawMatrix> for DenseMatrix {
    type Error = CodError;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        if raw.data.len() != raw.rows * raw.cols {
            return Err(CodError::DimensionMismatch(format!(
                "matrix payload has {} entries, expected {}x{}",
                raw.data.len(),
                raw.rows,
                raw.cols
            )));
        }
        DenseMatrix::from_row_slice(raw.rows, raw.cols, &raw.data)
    }
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, validating dimensions and
    /// finiteness of every entry.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CodError::DimensionMismatch(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(CodError::DimensionMismatch(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        let inner = DMatrix::from_row_slice(rows, cols, data);
        Self::from_inner(inner)
    }

    /// Builds a matrix entry by entry from a closure.
    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CodError::DimensionMismatch(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        Self::from_inner(DMatrix::from_fn(rows, cols, f))
    }

    /// Zero matrix. Panics on zero dimensions (programmer error).
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        DenseMatrix {
            inner: DMatrix::zeros(rows, cols),
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        assert!(n > 0, "matrix dimensions must be positive");
        DenseMatrix {
            inner: DMatrix::identity(n, n),
        }
    }

    pub(crate) fn from_inner(inner: DMatrix<f64>) -> Result<Self> {
        if inner.is_empty() {
            return Err(CodError::DimensionMismatch(
                "matrix dimensions must be positive".into(),
            ));
        }
        if let Some(bad) = inner.iter().find(|v| !v.is_finite()) {
            return Err(CodError::NonFinite(format!(
                "matrix contains non-finite entry {bad}"
            )));
        }
        Ok(DenseMatrix { inner })
    }

    #[cfg(test)]
    pub fn inner_for_debug(&self) -> DMatrix<f64> {
        self.inner.clone()
    }

    pub(crate) fn inner(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    /// Row `i` as a plain vector.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.inner.row(i).iter().copied().collect()
    }

    /// Row-major copy of all entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.inner[(i, j)]);
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix {
            inner: self.inner.transpose(),
        }
    }

    /// New matrix from the given rows, in order. Panics on out-of-range
    /// indices or an empty selection.
    pub fn select_rows(&self, indices: &[usize]) -> DenseMatrix {
        assert!(!indices.is_empty(), "row selection must be nonempty");
        DenseMatrix {
            inner: DMatrix::from_fn(indices.len(), self.cols(), |i, j| {
                self.inner[(indices[i], j)]
            }),
        }
    }

    pub fn trace(&self) -> f64 {
        assert_eq!(self.rows(), self.cols(), "trace of a non-square matrix");
        self.inner.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.norm()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.inner.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(
            self.cols(),
            other.rows(),
            "matmul shape mismatch {}x{} * {}x{}",
            self.rows(),
            self.cols(),
            other.rows(),
            other.cols()
        );
        DenseMatrix {
            inner: &self.inner * &other.inner,
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows(), self.cols()), (other.rows(), other.cols()));
        DenseMatrix {
            inner: &self.inner + &other.inner,
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows(), self.cols()), (other.rows(), other.cols()));
        DenseMatrix {
            inner: &self.inner - &other.inner,
        }
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            inner: &self.inner * s,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            inner: self.inner.map(f),
        }
    }

    /// Symmetry defect `max_ij |M_ij - M_ji|`; zero for non-square input is
    /// never returned because the caller checks squareness first.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows() {
            for j in (i + 1)..self.cols() {
                worst = worst.max((self.inner[(i, j)] - self.inner[(j, i)]).abs());
            }
        }
        worst
    }
}

/// Kernel family together with its free scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `k(a, b) = exp(-||a - b||^2 / bandwidth^2)`.
    Gaussian { bandwidth: f64 },
    /// `k(a, b) = <a, b>`.
    Linear,
    /// `k(a, b) = 1` when `max_i |a_i - b_i| <= tolerance`, else `0`.
    KroneckerDelta { tolerance: f64 },
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(CodError::InvalidParameter(format!(
                "gaussian bandwidth must be a positive finite real, got {bandwidth}"
            )));
        }
        Ok(KernelSpec::Gaussian { bandwidth })
    }

    pub fn delta(tolerance: f64) -> Result<Self> {
        if !(tolerance >= 0.0) || !tolerance.is_finite() {
            return Err(CodError::InvalidParameter(format!(
                "delta tolerance must be a nonnegative finite real, got {tolerance}"
            )));
        }
        Ok(KernelSpec::KroneckerDelta { tolerance })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Gaussian { bandwidth } => {
                KernelSpec::gaussian(*bandwidth).map(|_| ())
            }
            KernelSpec::Linear => Ok(()),
            KernelSpec::KroneckerDelta { tolerance } => KernelSpec::delta(*tolerance).map(|_| ()),
        }
    }

    fn eval(&self, a: nalgebra::DVectorView<f64>, b: nalgebra::DVectorView<f64>) -> f64 {
        match self {
            KernelSpec::Gaussian { bandwidth } => {
                let mut d2 = 0.0;
                for (x, y) in a.iter().zip(b.iter()) {
                    let d = x - y;
                    d2 += d * d;
                }
                (-d2 / (bandwidth * bandwidth)).exp()
            }
            KernelSpec::Linear => a.dot(&b),
            KernelSpec::KroneckerDelta { tolerance } => {
                let mut worst = 0.0f64;
                for (x, y) in a.iter().zip(b.iter()) {
                    worst = worst.max((x - y).abs());
                }
                if worst <= *tolerance {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Kernel matrix with entry `(i, j) = k(a_i, b_j)` over the rows of `a` and
/// `b`. Symmetric when called with the same samples on both sides.
pub fn kernel_matrix(spec: &KernelSpec, a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    spec.validate()?;
    if a.cols() != b.cols() {
        return Err(CodError::DimensionMismatch(format!(
            "kernel inputs have {} and {} features",
            a.cols(),
            b.cols()
        )));
    }
    let (n, m) = (a.rows(), b.rows());
    let at = a.inner();
    let bt = b.inner();
    let mut k = DMatrix::zeros(n, m);
    for i in 0..n {
        let ai = at.row(i).transpose();
        for j in 0..m {
            k[(i, j)] = spec.eval(ai.as_view(), bt.row(j).transpose().as_view());
        }
    }
    DenseMatrix::from_inner(k)
}

/// Centered Gram matrix `G = H K H` with `H = I - (1/n) 1 1^T`.
///
/// Row and column sums of the result vanish up to rounding.
pub fn center_gram(k: &DenseMatrix) -> Result<DenseMatrix> {
    if k.rows() != k.cols() {
        return Err(CodError::DimensionMismatch(format!(
            "centering requires a square matrix, got {}x{}",
            k.rows(),
            k.cols()
        )));
    }
    let n = k.rows();
    let inner = k.inner();
    let nf = n as f64;
    let mut row_means = vec![0.0; n];
    let mut col_means = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = inner[(i, j)];
            row_means[i] += v;
            col_means[j] += v;
            total += v;
        }
    }
    for v in row_means.iter_mut().chain(col_means.iter_mut()) {
        *v /= nf;
    }
    total /= nf * nf;
    let g = DMatrix::from_fn(n, n, |i, j| inner[(i, j)] - row_means[i] - col_means[j] + total);
    DenseMatrix::from_inner(g)
}

/// Eigendecomposition of a symmetric matrix: eigenvalues in descending order
/// with matching orthonormal eigenvector columns.
pub fn sym_eig(m: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    if m.rows() != m.cols() {
        return Err(CodError::DimensionMismatch(format!(
            "eigendecomposition requires a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let defect = m.symmetry_defect();
    if defect > 1e-8 {
        return Err(CodError::NotSymmetric(format!(
            "symmetry defect {defect:.3e} exceeds 1e-8"
        )));
    }
    let sym = (m.inner() + m.inner().transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 100_000).ok_or_else(|| {
        CodError::ConvergenceFailure("symmetric eigendecomposition did not converge".into())
    })?;
    let n = m.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, DenseMatrix::from_inner(vectors)?))
}

/// Symmetric PSD square root via eigendecomposition.
///
/// Eigenvalues in `[-1e-6, 0)` are clamped to zero (rounding noise from
/// regularized Gram matrices); anything below `-1e-6` is treated as a
/// non-PSD bug upstream and rejected.
pub fn psd_sqrt(m: &DenseMatrix) -> Result<DenseMatrix> {
    let (values, vectors) = sym_eig(m)?;
    if let Some(bad) = values.iter().find(|&&w| w < -1e-6) {
        return Err(CodError::NotPsd(format!(
            "eigenvalue {bad:.3e} below -1e-6 in psd_sqrt"
        )));
    }
    let sqrt_vals: Vec<f64> = values.iter().map(|&w| w.max(0.0).sqrt()).collect();
    let v = vectors.inner();
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * sqrt_vals[j]);
    DenseMatrix::from_inner(&scaled * v.transpose())
}

/// Sum of singular values.
///
/// The input is first compressed with an early-terminating column-pivoted
/// Householder QR: singular values are invariant under the orthogonal factor
/// and the column permutation, so only the `rank x cols` triangular factor is
/// passed to the dense SVD. Low-rank inputs (centered cross-Gram matrices of
/// low-dimensional linear kernels) thus cost O(n^2 rank) instead of O(n^3).
pub fn nuclear_norm(m: &DenseMatrix) -> Result<f64> {
    let r = qr_compress(m.inner());
    match r {
        None => Ok(0.0),
        Some(r) => {
            let svd = SVD::try_new(r, false, false, f64::EPSILON, 100_000).ok_or_else(|| {
                CodError::ConvergenceFailure("SVD did not converge in nuclear_norm".into())
            })?;
            Ok(svd.singular_values.iter().sum())
        }
    }
}

/// Column-pivoted Householder QR that stops once the remaining columns are
/// at rounding level. Returns the upper-trapezoidal factor (`rank x cols`,
/// columns permuted) whose singular values match the input's, or `None` for
/// a numerically zero matrix.
fn qr_compress(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let (n, m) = a.shape();
    let kmax = n.min(m);
    let mut work = a.clone();
    let mut norms: Vec<f64> = (0..m).map(|j| work.column(j).norm_squared()).collect();
    let mut ref_norms = norms.clone();
    let max0 = norms.iter().cloned().fold(0.0, f64::max);
    if max0 == 0.0 {
        return None;
    }
    // Squared cutoff for "column is numerically zero".
    let tol2 = max0 * (f64::EPSILON * (n.max(m) as f64)).powi(2);

    let mut rank = kmax;
    for k in 0..kmax {
        // Refresh drifted norm estimates before pivot selection.
        for j in k..m {
            if norms[j] < 1e-4 * ref_norms[j] {
                let fresh = work.view((k, j), (n - k, 1)).norm_squared();
                norms[j] = fresh;
                ref_norms[j] = fresh;
            }
        }
        let (jmax, nmax) = (k..m)
            .map(|j| (j, norms[j]))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if nmax <= tol2 {
            rank = k;
            break;
        }
        if jmax != k {
            work.swap_columns(k, jmax);
            norms.swap(k, jmax);
            ref_norms.swap(k, jmax);
        }

        // Householder reflector for column k, rows k..n.
        let x_norm = work.view((k, k), (n - k, 1)).norm();
        let alpha = if work[(k, k)] >= 0.0 { -x_norm } else { x_norm };
        let mut v = DMatrix::zeros(n - k, 1);
        for i in 0..(n - k) {
            v[(i, 0)] = work[(k + i, k)];
        }
        v[(0, 0)] -= alpha;
        let beta = v.norm_squared();
        if beta > 0.0 {
            for j in k..m {
                let mut dot = 0.0;
                for i in 0..(n - k) {
                    dot += v[(i, 0)] * work[(k + i, j)];
                }
                let coeff = 2.0 * dot / beta;
                for i in 0..(n - k) {
                    work[(k + i, j)] -= coeff * v[(i, 0)];
                }
            }
        }
        work[(k, k)] = alpha;
        for i in (k + 1)..n {
            work[(i, k)] = 0.0;
        }
        for j in (k + 1)..m {
            let r = work[(k, j)];
            norms[j] = (norms[j] - r * r).max(0.0);
        }
    }

    if rank == 0 {
        return None;
    }
    let mut r = DMatrix::zeros(rank, m);
    for i in 0..rank {
        for j in i..m {
            r[(i, j)] = work[(i, j)];
        }
    }
    Some(r)
}

/// Regularized inverse `(M + rho I)^{-1}` of a symmetric PSD matrix.
pub fn reg_inverse(m: &DenseMatrix, rho: f64) -> Result<DenseMatrix> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(CodError::InvalidParameter(format!(
            "regularizer must be a positive finite real, got {rho}"
        )));
    }
    if m.rows() != m.cols() {
        return Err(CodError::DimensionMismatch(format!(
            "regularized inverse requires a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let defect = m.symmetry_defect();
    if defect > 1e-8 {
        return Err(CodError::NotSymmetric(format!(
            "symmetry defect {defect:.3e} exceeds 1e-8"
        )));
    }
    let n = m.rows();
    let mut shifted = (m.inner() + m.inner().transpose()) * 0.5;
    for i in 0..n {
        shifted[(i, i)] += rho;
    }
    if let Some(chol) = nalgebra::Cholesky::new(shifted.clone()) {
        return DenseMatrix::from_inner(chol.inverse());
    }
    // Shifted matrix can fail Cholesky only through rounding-level
    // indefiniteness; fall back to the eigen route.
    let shifted = DenseMatrix::from_inner(shifted)?;
    let (values, vectors) = sym_eig(&shifted)?;
    if let Some(bad) = values.iter().find(|&&w| w <= 0.0) {
        return Err(CodError::NotPsd(format!(
            "shifted matrix has nonpositive eigenvalue {bad:.3e}"
        )));
    }
    let v = vectors.inner();
    let scaled = DMatrix::from_fn(n, n, |i, j| v[(i, j)] / values[j]);
    DenseMatrix::from_inner(&scaled * v.transpose())
}

/// Median-heuristic bandwidth: the square root of the median pairwise
/// squared Euclidean distance over distinct sample pairs. Falls back to 1.0
/// when all samples coincide.
pub fn median_heuristic(x: &DenseMatrix) -> Result<f64> {
    let n = x.rows();
    if n < 2 {
        return Err(CodError::InvalidParameter(format!(
            "median heuristic needs at least 2 samples, got {n}"
        )));
    }
    let inner = x.inner();
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for c in 0..x.cols() {
                let d = inner[(i, c)] - inner[(j, c)];
                acc += d * d;
            }
            d2.push(acc);
        }
    }
    d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = d2.len() / 2;
    let median = if d2.len() % 2 == 1 {
        d2[mid]
    } else {
        0.5 * (d2[mid - 1] + d2[mid])
    };
    if median == 0.0 {
        Ok(1.0)
    } else {
        Ok(median.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0)).unwrap()
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
        let a = random_matrix(rng, n, n);
        a.add(&a.transpose()).scale(0.5)
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
        let a = random_matrix(rng, n, n);
        a.matmul(&a.transpose())
    }

    #[test]
    fn dense_matrix_rejects_nonfinite() {
        let err = DenseMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(matches!(err, Err(CodError::NonFinite(_))));
        let err = DenseMatrix::from_row_slice(0, 2, &[]);
        assert!(matches!(err, Err(CodError::DimensionMismatch(_))));
    }

    #[test]
    fn gaussian_kernel_diagonal_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 6, 3);
        let spec = KernelSpec::gaussian(0.7).unwrap();
        let k = kernel_matrix(&spec, &x, &x).unwrap();
        for i in 0..6 {
            assert!((k.get(i, i) - 1.0).abs() < 1e-15);
        }
        assert!(k.symmetry_defect() < 1e-15);
    }

    #[test]
    fn gaussian_kernel_unit_ratio() {
        // ||a - b||^2 = sigma^2 gives exp(-1).
        let a = DenseMatrix::from_row_slice(1, 2, &[0.0, 0.0]).unwrap();
        let b = DenseMatrix::from_row_slice(1, 2, &[1.5, 0.0]).unwrap();
        let spec = KernelSpec::gaussian(1.5).unwrap();
        let k = kernel_matrix(&spec, &a, &b).unwrap();
        assert!((k.get(0, 0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn delta_kernel_on_labels() {
        let ys = DenseMatrix::from_row_slice(3, 1, &[1.0, 2.0, 1.0]).unwrap();
        let yt = DenseMatrix::from_row_slice(2, 1, &[1.0, 3.0]).unwrap();
        let spec = KernelSpec::delta(0.0).unwrap();
        let k = kernel_matrix(&spec, &ys, &yt).unwrap();
        let expected = [[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]];
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(k.get(i, j), expected[i][j]);
            }
        }
    }

    #[test]
    fn kernel_matrix_rejects_feature_mismatch() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(2, 2);
        let spec = KernelSpec::Linear;
        assert!(matches!(
            kernel_matrix(&spec, &a, &b),
            Err(CodError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn center_gram_identity_two() {
        let k = DenseMatrix::identity(2);
        let g = center_gram(&k).unwrap();
        let expected = [[0.5, -0.5], [-0.5, 0.5]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((g.get(i, j) - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn center_gram_annihilates_constants() {
        let k = DenseMatrix::from_fn(4, 4, |_, _| 3.25).unwrap();
        let g = center_gram(&k).unwrap();
        assert!(g.max_abs() < 1e-14);
    }

    #[test]
    fn center_gram_matches_explicit_product() {
        // Oracle: form H K H explicitly.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = random_symmetric(&mut rng, 5);
        let n = 5;
        let h = DenseMatrix::from_fn(n, n, |i, j| {
            (if i == j { 1.0 } else { 0.0 }) - 1.0 / n as f64
        })
        .unwrap();
        let oracle = h.matmul(&k).matmul(&h);
        let g = center_gram(&k).unwrap();
        assert!(g.sub(&oracle).max_abs() < 1e-12);
        for i in 0..n {
            let row_sum: f64 = (0..n).map(|j| g.get(i, j)).sum();
            assert!(row_sum.abs() < 1e-10);
            let col_sum: f64 = (0..n).map(|j| g.get(j, i)).sum();
            assert!(col_sum.abs() < 1e-10);
        }
    }

    #[test]
    fn center_gram_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let k = random_symmetric(&mut rng, 8);
            let g1 = center_gram(&k).unwrap();
            let g2 = center_gram(&g1).unwrap();
            assert!(g1.sub(&g2).max_abs() < 1e-10);
        }
    }

    #[test]
    fn sym_eig_diagonal() {
        let m = DenseMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]).unwrap();
        let (w, v) = sym_eig(&m).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-12);
        assert!((w[1] - 1.0).abs() < 1e-12);
        // axis-aligned eigenvectors up to sign
        assert!((v.get(0, 0).abs() - 1.0).abs() < 1e-12);
        assert!((v.get(1, 1).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sym_eig_classic_two_by_two() {
        let m = DenseMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        let (w, _) = sym_eig(&m).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-12);
        assert!((w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sym_eig_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_symmetric(&mut rng, 8);
        let (w, v) = sym_eig(&m).unwrap();
        let diag = DenseMatrix::from_fn(8, 8, |i, j| if i == j { w[i] } else { 0.0 }).unwrap();
        let rec = v.matmul(&diag).matmul(&v.transpose());
        let rel = rec.sub(&m).frobenius_norm() / m.frobenius_norm();
        assert!(rel < 1e-8, "reconstruction error {rel:.3e}");
        // descending order
        for i in 1..8 {
            assert!(w[i - 1] >= w[i]);
        }
    }

    #[test]
    fn sym_eig_rejects_nonsymmetric() {
        let m = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(matches!(sym_eig(&m), Err(CodError::NotSymmetric(_))));
    }

    #[test]
    fn psd_sqrt_diagonal() {
        let m = DenseMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]).unwrap();
        let r = psd_sqrt(&m).unwrap();
        assert!((r.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((r.get(1, 1) - 3.0).abs() < 1e-12);
        assert!(r.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn psd_sqrt_identity() {
        let m = DenseMatrix::identity(4);
        let r = psd_sqrt(&m).unwrap();
        assert!(r.sub(&DenseMatrix::identity(4)).max_abs() < 1e-12);
    }

    #[test]
    fn psd_sqrt_recovers_known_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r0 = random_psd(&mut rng, 6);
        let m = r0.matmul(&r0);
        let r = psd_sqrt(&m).unwrap();
        assert!(r.sub(&r0).frobenius_norm() < 1e-7);
        let back = r.matmul(&r);
        assert!(back.sub(&m).frobenius_norm() < 1e-7);
    }

    #[test]
    fn psd_sqrt_commutes_with_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = random_psd(&mut rng, 7);
        let r = psd_sqrt(&m).unwrap();
        let comm = r.matmul(&m).sub(&m.matmul(&r));
        assert!(comm.frobenius_norm() < 1e-7);
    }

    #[test]
    fn psd_sqrt_rejects_indefinite() {
        let m = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]).unwrap();
        assert!(matches!(psd_sqrt(&m), Err(CodError::NotPsd(_))));
    }

    #[test]
    fn nuclear_norm_of_diagonal() {
        let m = DenseMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]).unwrap();
        assert!((nuclear_norm(&m).unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn nuclear_norm_of_zero() {
        let m = DenseMatrix::zeros(3, 5);
        assert_eq!(nuclear_norm(&m).unwrap(), 0.0);
    }

    #[test]
    fn nuclear_norm_matches_gram_eigen_oracle() {
        // Oracle: sum of sqrt of eigenvalues of M^T M.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = random_matrix(&mut rng, 6, 4);
        let gram = m.transpose().matmul(&m);
        let (w, _) = sym_eig(&gram).unwrap();
        let oracle: f64 = w.iter().map(|&x| x.max(0.0).sqrt()).sum();
        let got = nuclear_norm(&m).unwrap();
        assert!((got - oracle).abs() < 1e-10, "got {got}, oracle {oracle}");
    }

    #[test]
    fn nuclear_norm_transpose_and_orthogonal_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let m = random_matrix(&mut rng, 5, 7);
        let direct = nuclear_norm(&m).unwrap();
        let transposed = nuclear_norm(&m.transpose()).unwrap();
        assert!((direct - transposed).abs() < 1e-10);

        // Random orthogonal factors from QR of random matrices via eigenvectors
        // of random symmetric matrices.
        let (_, u) = sym_eig(&random_symmetric(&mut rng, 5)).unwrap();
        let (_, v) = sym_eig(&random_symmetric(&mut rng, 7)).unwrap();
        let rotated = u.matmul(&m).matmul(&v);
        let rot = nuclear_norm(&rotated).unwrap();
        assert!((direct - rot).abs() < 1e-8, "direct {direct}, rotated {rot}");
    }

    #[test]
    fn nuclear_norm_low_rank_large() {
        // rank-2 tall matrix; the QR compression path must stay exact.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_matrix(&mut rng, 300, 2);
        let b = random_matrix(&mut rng, 2, 300);
        let m = a.matmul(&b);
        let gram = m.transpose().matmul(&m);
        let (w, _) = sym_eig(&gram).unwrap();
        // Squaring halves the oracle's precision: eigenvalues at rounding
        // level would each contribute sqrt(noise), so clamp them first.
        let w_max = w[0].max(0.0);
        let oracle: f64 = w
            .iter()
            .map(|&x| if x > 1e-12 * w_max { x.sqrt() } else { 0.0 })
            .sum();
        let got = nuclear_norm(&m).unwrap();
        assert!(
            (got - oracle).abs() < 1e-8 * oracle.max(1.0),
            "got {got}, oracle {oracle}"
        );
    }

    #[test]
    fn reg_inverse_of_zero() {
        let m = DenseMatrix::zeros(3, 3);
        let inv = reg_inverse(&m, 2.0).unwrap();
        let expected = DenseMatrix::identity(3).scale(0.5);
        assert!(inv.sub(&expected).max_abs() < 1e-14);
    }

    #[test]
    fn reg_inverse_of_diagonal() {
        let m = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]).unwrap();
        let inv = reg_inverse(&m, 1.0).unwrap();
        assert!((inv.get(0, 0) - 0.5).abs() < 1e-14);
        assert!((inv.get(1, 1) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn reg_inverse_multiplies_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let m = random_psd(&mut rng, 7);
        let rho = 0.3;
        let inv = reg_inverse(&m, rho).unwrap();
        let shifted = m.add(&DenseMatrix::identity(7).scale(rho));
        let prod = shifted.matmul(&inv);
        assert!(prod.sub(&DenseMatrix::identity(7)).max_abs() < 1e-8);
    }

    #[test]
    fn reg_inverse_eigenvalues_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = random_psd(&mut rng, 6);
        let rho = 0.5;
        let inv = reg_inverse(&m, rho).unwrap();
        let (w, _) = sym_eig(&inv).unwrap();
        for &v in &w {
            assert!(v > 0.0 && v <= 1.0 / rho + 1e-12, "eigenvalue {v}");
        }
    }

    #[test]
    fn reg_inverse_rejects_nonpositive_rho() {
        let m = DenseMatrix::identity(2);
        assert!(matches!(
            reg_inverse(&m, 0.0),
            Err(CodError::InvalidParameter(_))
        ));
    }

    #[test]
    fn median_heuristic_single_pair() {
        let x = DenseMatrix::from_row_slice(2, 1, &[0.0, 2.0]).unwrap();
        assert!((median_heuristic(&x).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn median_heuristic_degenerate_input() {
        let x = DenseMatrix::from_fn(5, 2, |_, _| 0.75).unwrap();
        assert_eq!(median_heuristic(&x).unwrap(), 1.0);
    }

    #[test]
    fn median_heuristic_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let x = random_matrix(&mut rng, 10, 3);
        // Oracle: independent enumeration of all 45 pairs.
        let mut d2 = Vec::new();
        for i in 0..10 {
            for j in (i + 1)..10 {
                let di: f64 = (0..3).map(|c| (x.get(i, c) - x.get(j, c)).powi(2)).sum();
                d2.push(di);
            }
        }
        d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(d2.len(), 45);
        let oracle = d2[22].sqrt();
        assert!((median_heuristic(&x).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn median_heuristic_needs_two_samples() {
        let x = DenseMatrix::zeros(1, 3);
        assert!(matches!(
            median_heuristic(&x),
            Err(CodError::InvalidParameter(_))
        ));
    }

    #[test]
    fn gaussian_gram_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for &n in &[5usize, 20, 50] {
            let x = random_matrix(&mut rng, n, 3);
            let spec = KernelSpec::gaussian(1.1).unwrap();
            let k = kernel_matrix(&spec, &x, &x).unwrap();
            let (w, _) = sym_eig(&k).unwrap();
            assert!(w.iter().all(|&v| v >= -1e-8), "negative eigenvalue at n={n}");
        }
    }
}
