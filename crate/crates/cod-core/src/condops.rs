//! Conditional moment statistics in RKHS.
//!
//! The conditional covariance structure of a labeled batch is carried by the
//! matrix `B = eps*n * (G_Y + eps*n*I)^{-1}` and a factor `A` with
//! `B = A A^T`. Together with the centered Gram matrices these yield the
//! trace and nuclear-norm blocks of the conditional discrepancy metrics.

use crate::error::{CodError, Result};
use crate::numerics::{
    center_gram, kernel_matrix, nuclear_norm, reg_inverse, sym_eig, DenseMatrix, KernelSpec,
};

/// The six kernel matrices of a paired source/target batch plus their
/// centered counterparts. Cross matrices (`kx_ts`, `ky_ts`) are oriented
/// target-rows x source-cols.
#[derive(Debug, Clone)]
pub struct GramBundle {
    pub kx_ss: DenseMatrix,
    pub kx_tt: DenseMatrix,
    pub kx_ts: DenseMatrix,
    pub ky_ss: DenseMatrix,
    pub ky_tt: DenseMatrix,
    pub ky_ts: DenseMatrix,
    pub gx_s: DenseMatrix,
    pub gx_t: DenseMatrix,
    pub gy_s: DenseMatrix,
    pub gy_t: DenseMatrix,
}

impl GramBundle {
    /// Builds every kernel matrix for a paired batch. Both domains must
    /// carry the same number of samples.
    pub fn from_batches(
        zs: &DenseMatrix,
        zt: &DenseMatrix,
        ys: &DenseMatrix,
        yt: &DenseMatrix,
        x_kernel: &KernelSpec,
        y_kernel: &KernelSpec,
    ) -> Result<Self> {
        let n = zs.rows();
        if zt.rows() != n || ys.rows() != n || yt.rows() != n {
            return Err(CodError::DimensionMismatch(format!(
                "batch sizes differ: zs={}, zt={}, ys={}, yt={}",
                zs.rows(),
                zt.rows(),
                ys.rows(),
                yt.rows()
            )));
        }
        let kx_ss = kernel_matrix(x_kernel, zs, zs)?;
        let kx_tt = kernel_matrix(x_kernel, zt, zt)?;
        let kx_ts = kernel_matrix(x_kernel, zt, zs)?;
        let ky_ss = kernel_matrix(y_kernel, ys, ys)?;
        let ky_tt = kernel_matrix(y_kernel, yt, yt)?;
        let ky_ts = kernel_matrix(y_kernel, yt, ys)?;
        let gx_s = center_gram(&kx_ss)?;
        let gx_t = center_gram(&kx_tt)?;
        let gy_s = center_gram(&ky_ss)?;
        let gy_t = center_gram(&ky_tt)?;
        Ok(GramBundle {
            kx_ss,
            kx_tt,
            kx_ts,
            ky_ss,
            ky_tt,
            ky_ts,
            gx_s,
            gx_t,
            gy_s,
            gy_t,
        })
    }

    /// Shared batch size.
    pub fn n(&self) -> usize {
        self.kx_ss.rows()
    }
}

/// Per-domain conditional statistics: `B` and a factor `A` with `B = A A^T`.
#[derive(Debug, Clone)]
pub struct ConditionalStats {
    pub b: DenseMatrix,
    pub a: DenseMatrix,
    pub epsilon: f64,
}

impl ConditionalStats {
    /// Computes `B` from a centered label Gram and factors it.
    pub fn from_label_gram(gy: &DenseMatrix, epsilon: f64) -> Result<Self> {
        let b = compute_b(gy, epsilon)?;
        let a = factor_a(&b)?;
        Ok(ConditionalStats { b, a, epsilon })
    }
}

/// Conditional covariance carrier `B = eps*n * (G_Y + eps*n*I)^{-1}`.
///
/// This resolvent form is algebraically identical to
/// `I - (1/(n*eps)) [G_Y - G_Y (G_Y + eps*n*I)^{-1} G_Y]` but involves a
/// single solve with a well-conditioned shifted matrix. Eigenvalues of the
/// result lie in `(0, 1]`.
pub fn compute_b(gy: &DenseMatrix, epsilon: f64) -> Result<DenseMatrix> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(CodError::InvalidParameter(format!(
            "epsilon must be a positive finite real, got {epsilon}"
        )));
    }
    if gy.rows() != gy.cols() {
        return Err(CodError::DimensionMismatch(format!(
            "label Gram must be square, got {}x{}",
            gy.rows(),
            gy.cols()
        )));
    }
    let defect = gy.symmetry_defect();
    if defect > 1e-8 {
        return Err(CodError::NotSymmetric(format!(
            "label Gram symmetry defect {defect:.3e} exceeds 1e-8"
        )));
    }
    let rho = epsilon * gy.rows() as f64;
    let resolvent = reg_inverse(gy, rho)?;
    Ok(resolvent.scale(rho))
}

/// Symmetric eigen factor `A = V diag(sqrt(w))` of a PSD matrix, with
/// negative eigenvalues clamped at zero and the corresponding columns
/// dropped. Rank deficiency therefore shrinks `A` instead of failing.
pub fn factor_a(b: &DenseMatrix) -> Result<DenseMatrix> {
    let (w, v) = sym_eig(b)?;
    if let Some(bad) = w.iter().find(|&&x| x < -1e-6) {
        return Err(CodError::NotPsd(format!(
            "eigenvalue {bad:.3e} below -1e-6 in factor_a"
        )));
    }
    let kept: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 1e-12).collect();
    if kept.is_empty() {
        return Err(CodError::NotPsd(
            "matrix has no positive eigenvalues to factor".into(),
        ));
    }
    let n = b.rows();
    DenseMatrix::from_fn(n, kept.len(), |i, j| {
        let col = kept[j];
        v.get(i, col) * w[col].sqrt()
    })
}

/// Within-domain conditional trace term
/// `eps * tr[G_X (eps*n*I + G_Y)^{-1}]`, equal to `(1/n) tr(G_X B)`.
pub fn conditional_trace_term(gx: &DenseMatrix, gy: &DenseMatrix, epsilon: f64) -> Result<f64> {
    if gx.rows() != gx.cols() || gx.rows() != gy.rows() || gy.rows() != gy.cols() {
        return Err(CodError::DimensionMismatch(format!(
            "trace term needs square Grams of equal order, got {}x{} and {}x{}",
            gx.rows(),
            gx.cols(),
            gy.rows(),
            gy.cols()
        )));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(CodError::InvalidParameter(format!(
            "epsilon must be a positive finite real, got {epsilon}"
        )));
    }
    let rho = epsilon * gy.rows() as f64;
    let resolvent = reg_inverse(gy, rho)?;
    Ok(epsilon * gx.matmul(&resolvent).trace())
}

/// Cross-domain conditional term
/// `(2/n) || (H A^t)^T K_X^{ts} (H A^s) ||_*`.
pub fn cross_conditional_term(
    kx_ts: &DenseMatrix,
    a_s: &DenseMatrix,
    a_t: &DenseMatrix,
) -> Result<f64> {
    let n = kx_ts.rows();
    if kx_ts.cols() != n || a_s.rows() != n || a_t.rows() != n {
        return Err(CodError::DimensionMismatch(format!(
            "cross term shapes disagree: K={}x{}, A_s={}x{}, A_t={}x{}",
            kx_ts.rows(),
            kx_ts.cols(),
            a_s.rows(),
            a_s.cols(),
            a_t.rows(),
            a_t.cols()
        )));
    }
    let inner = cross_inner_matrix(kx_ts, a_s, a_t);
    Ok(2.0 / n as f64 * nuclear_norm(&inner)?)
}

/// The matrix `(H A^t)^T K_X^{ts} (H A^s)` whose nuclear norm forms the
/// cross-domain conditional term. Shared with the gradient layer, which
/// needs its SVD factors.
pub(crate) fn cross_inner_matrix(
    kx_ts: &DenseMatrix,
    a_s: &DenseMatrix,
    a_t: &DenseMatrix,
) -> DenseMatrix {
    let hat = center_columns(a_t);
    let has = center_columns(a_s);
    hat.transpose().matmul(kx_ts).matmul(&has)
}

/// Applies the centering matrix from the left: subtracts each column's mean
/// (`H M` with `H = I - (1/n) 1 1^T`).
pub(crate) fn center_columns(m: &DenseMatrix) -> DenseMatrix {
    let (n, c) = (m.rows(), m.cols());
    let mut means = vec![0.0; c];
    for j in 0..c {
        for i in 0..n {
            means[j] += m.get(i, j);
        }
        means[j] /= n as f64;
    }
    DenseMatrix::from_fn(n, c, |i, j| m.get(i, j) - means[j])
        .expect("centering preserves finiteness")
}
