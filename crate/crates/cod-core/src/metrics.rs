//! The discrepancy family: MMD, kernel Bures, KGW, CMMD (generic and
//! delta-kernel grouped forms), COD, and the sign-modified variants that
//! trade within-domain similarity for cross-domain matching.
//!
//! Label-kernel inverses are always taken in regularized form
//! `(K_Y + lambda I)^{-1}`; there is no pseudo-inverse path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::condops::{
    conditional_trace_term, cross_conditional_term, ConditionalStats, GramBundle,
};
use crate::data::Dataset;
use crate::error::{CodError, Result};
use crate::numerics::{
    center_gram, kernel_matrix, nuclear_norm, reg_inverse, DenseMatrix, KernelSpec,
};

/// Kernel choices and regularizers shared by the whole metric family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub x_kernel: KernelSpec,
    pub y_kernel: KernelSpec,
    /// Conditional-covariance regularizer (the `eps` in `B`).
    pub epsilon: f64,
    /// Ridge added to label Grams before inversion.
    pub ridge_lambda: f64,
    /// Use the modified mean block exactly as printed (the within-target
    /// term twice) instead of the corrected source+target reading.
    pub literal_modified_terms: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            x_kernel: KernelSpec::Gaussian { bandwidth: 1.0 },
            y_kernel: KernelSpec::Gaussian { bandwidth: 1.0 },
            epsilon: 1e-2,
            ridge_lambda: 1e-3,
            literal_modified_terms: false,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        self.x_kernel.validate()?;
        self.y_kernel.validate()?;
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(CodError::InvalidParameter(format!(
                "epsilon must be a positive finite real, got {}",
                self.epsilon
            )));
        }
        if !(self.ridge_lambda > 0.0) || !self.ridge_lambda.is_finite() {
            return Err(CodError::InvalidParameter(format!(
                "ridge_lambda must be a positive finite real, got {}",
                self.ridge_lambda
            )));
        }
        Ok(())
    }
}

/// A metric total together with its named sub-terms; the total is the exact
/// sum of the components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
}

impl MetricValue {
    fn from_components(parts: &[(&str, f64)]) -> Self {
        let mut components = BTreeMap::new();
        let mut total = 0.0;
        for (name, value) in parts {
            components.insert((*name).to_string(), *value);
            total += value;
        }
        MetricValue { total, components }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }
}

/// `tr(A B)` without forming the product.
fn trace_of_product(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    assert_eq!(a.cols(), b.rows());
    assert_eq!(a.rows(), b.cols());
    let mut acc = 0.0;
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            acc += a.get(i, j) * b.get(j, i);
        }
    }
    acc
}

fn grand_sum(m: &DenseMatrix) -> f64 {
    let mut acc = 0.0;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            acc += m.get(i, j);
        }
    }
    acc
}

/// Squared MMD from the three covariate kernel blocks:
/// `(1/n^2) [1^T K^ss 1 + 1^T K^tt 1 - 2 * 1^T K^ts 1]`.
pub fn mmd2(kx_ss: &DenseMatrix, kx_tt: &DenseMatrix, kx_ts: &DenseMatrix) -> Result<f64> {
    let n = kx_ss.rows();
    if kx_ss.cols() != n || kx_tt.rows() != n || kx_tt.cols() != n || kx_ts.rows() != n || kx_ts.cols() != n
    {
        return Err(CodError::DimensionMismatch(
            "mmd2 requires three n x n kernel blocks".into(),
        ));
    }
    let nf = n as f64;
    let v = (grand_sum(kx_ss) + grand_sum(kx_tt) - 2.0 * grand_sum(kx_ts)) / (nf * nf);
    // The biased estimator is nonnegative for PSD kernels; treat rounding
    // level dips as exact zero.
    Ok(if v < 0.0 && v >= -1e-12 { 0.0 } else { v })
}

/// Kernel Bures block between covariance operators:
/// `(1/n) tr(G^s) + (1/n) tr(G^t) - (2/n) || H K^ts H ||_*`.
pub fn kernel_bures(gx_s: &DenseMatrix, gx_t: &DenseMatrix, kx_ts: &DenseMatrix) -> Result<f64> {
    let n = gx_s.rows();
    if gx_s.cols() != n || gx_t.rows() != n || gx_t.cols() != n || kx_ts.rows() != n || kx_ts.cols() != n
    {
        return Err(CodError::DimensionMismatch(
            "kernel_bures requires three n x n blocks".into(),
        ));
    }
    let nf = n as f64;
    let centered_cross = center_gram(kx_ts)?;
    Ok(gx_s.trace() / nf + gx_t.trace() / nf - 2.0 / nf * nuclear_norm(&centered_cross)?)
}

/// Kernel Gaussian Wasserstein distance: MMD block plus kernel Bures block.
pub fn kgw2(bundle: &GramBundle) -> Result<MetricValue> {
    let mmd = mmd2(&bundle.kx_ss, &bundle.kx_tt, &bundle.kx_ts)?;
    let bures = kernel_bures(&bundle.gx_s, &bundle.gx_t, &bundle.kx_ts)?;
    Ok(MetricValue::from_components(&[
        ("mmd", mmd),
        ("bures", bures),
    ]))
}

/// The three mean-block traces shared by the CMMD family.
pub(crate) struct MeanBlockParts {
    pub within_s: f64,
    pub within_t: f64,
    pub cross: f64,
}

pub(crate) fn mean_block_parts(bundle: &GramBundle, cfg: &MetricConfig) -> Result<MeanBlockParts> {
    let rs = reg_inverse(&bundle.ky_ss, cfg.ridge_lambda)?;
    let rt = reg_inverse(&bundle.ky_tt, cfg.ridge_lambda)?;
    // tr(K_Y R K_X R), evaluated as tr((K_Y R)(K_X R)).
    let within_s = trace_of_product(&bundle.ky_ss.matmul(&rs), &bundle.kx_ss.matmul(&rs));
    let within_t = trace_of_product(&bundle.ky_tt.matmul(&rt), &bundle.kx_tt.matmul(&rt));
    let kx_st = bundle.kx_ts.transpose();
    let cross = trace_of_product(&bundle.ky_ts.matmul(&rs), &kx_st.matmul(&rt));
    Ok(MeanBlockParts {
        within_s,
        within_t,
        cross,
    })
}

/// Conditional-mean block of COD (regularized form of the first three terms
/// of the empirical metric).
pub fn cmmd2(bundle: &GramBundle, cfg: &MetricConfig) -> Result<f64> {
    cfg.validate()?;
    let parts = mean_block_parts(bundle, cfg)?;
    Ok(parts.within_s + parts.within_t - 2.0 * parts.cross)
}

/// Modified conditional-mean block: within-domain similarity terms are
/// negated so that minimizing the block tightens classes instead of
/// spreading them.
pub fn cmmd_mod(bundle: &GramBundle, cfg: &MetricConfig) -> Result<f64> {
    cfg.validate()?;
    let parts = mean_block_parts(bundle, cfg)?;
    let within = if cfg.literal_modified_terms {
        2.0 * parts.within_t
    } else {
        parts.within_s + parts.within_t
    };
    Ok(-within - 2.0 * parts.cross)
}

/// Trace and nuclear-norm pieces of the conditional-covariance block.
pub(crate) struct CovBlockParts {
    pub trace_s: f64,
    pub trace_t: f64,
    pub cross: f64,
}

pub(crate) fn covariance_block_parts(
    bundle: &GramBundle,
    cfg: &MetricConfig,
) -> Result<CovBlockParts> {
    let trace_s = conditional_trace_term(&bundle.gx_s, &bundle.gy_s, cfg.epsilon)?;
    let trace_t = conditional_trace_term(&bundle.gx_t, &bundle.gy_t, cfg.epsilon)?;
    let stats_s = ConditionalStats::from_label_gram(&bundle.gy_s, cfg.epsilon)?;
    let stats_t = ConditionalStats::from_label_gram(&bundle.gy_t, cfg.epsilon)?;
    let cross = cross_conditional_term(&bundle.kx_ts, &stats_s.a, &stats_t.a)?;
    Ok(CovBlockParts {
        trace_s,
        trace_t,
        cross,
    })
}

/// Empirical conditional operator discrepancy: conditional-mean block plus
/// conditional-covariance block, with components reported separately.
pub fn cod2(bundle: &GramBundle, cfg: &MetricConfig) -> Result<MetricValue> {
    cfg.validate()?;
    let mean = cmmd2(bundle, cfg)?;
    let cov = covariance_block_parts(bundle, cfg)?;
    Ok(MetricValue::from_components(&[
        ("mean_block", mean),
        ("trace_block", cov.trace_s + cov.trace_t),
        ("cross_block", -cov.cross),
    ]))
}

/// Modified empirical COD: the sign-modified mean block plus the unchanged
/// conditional-covariance block.
pub fn cod_mod(bundle: &GramBundle, cfg: &MetricConfig) -> Result<MetricValue> {
    cfg.validate()?;
    let mean = cmmd_mod(bundle, cfg)?;
    let cov = covariance_block_parts(bundle, cfg)?;
    Ok(MetricValue::from_components(&[
        ("mean_block", mean),
        ("trace_block", cov.trace_s + cov.trace_t),
        ("cross_block", -cov.cross),
    ]))
}

/// Delta-kernel CMMD as class-grouped similarity sums.
///
/// Labels are grouped by exact equality; every label value must appear with
/// the same count in both domains, otherwise the grouped form is undefined
/// and an error is returned.
pub fn cmmd2_delta(
    source: &Dataset,
    target: &Dataset,
    x_kernel: &KernelSpec,
    lambda: f64,
) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(CodError::InvalidParameter(format!(
            "lambda must be a positive finite real, got {lambda}"
        )));
    }
    if source.label_dim() != target.label_dim() {
        return Err(CodError::DimensionMismatch(format!(
            "label dimensions differ: {} vs {}",
            source.label_dim(),
            target.label_dim()
        )));
    }
    if source.features() != target.features() {
        return Err(CodError::DimensionMismatch(format!(
            "feature dimensions differ: {} vs {}",
            source.features(),
            target.features()
        )));
    }

    let key = |y: &DenseMatrix, i: usize| -> Vec<u64> {
        (0..y.cols()).map(|j| y.get(i, j).to_bits()).collect()
    };
    let mut groups: BTreeMap<Vec<u64>, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for i in 0..source.len() {
        groups.entry(key(&source.y, i)).or_default().0.push(i);
    }
    for i in 0..target.len() {
        groups.entry(key(&target.y, i)).or_default().1.push(i);
    }

    let mut total = 0.0;
    for (label, (src_idx, tgt_idx)) in &groups {
        if src_idx.is_empty() || tgt_idx.is_empty() {
            let value: Vec<f64> = label.iter().map(|&b| f64::from_bits(b)).collect();
            return Err(CodError::LabelGrouping(format!(
                "label {value:?} appears only in the {} domain",
                if src_idx.is_empty() { "target" } else { "source" }
            )));
        }
        if src_idx.len() != tgt_idx.len() {
            let value: Vec<f64> = label.iter().map(|&b| f64::from_bits(b)).collect();
            return Err(CodError::LabelGrouping(format!(
                "label {value:?} has {} source and {} target samples; grouped CMMD needs equal counts",
                src_idx.len(),
                tgt_idx.len()
            )));
        }
        let n_p = src_idx.len() as f64;
        let xs = source.x.select_rows(src_idx);
        let xt = target.x.select_rows(tgt_idx);
        let within_s = grand_sum(&kernel_matrix(x_kernel, &xs, &xs)?);
        let within_t = grand_sum(&kernel_matrix(x_kernel, &xt, &xt)?);
        let cross = grand_sum(&kernel_matrix(x_kernel, &xs, &xt)?);
        total += (within_s + within_t - 2.0 * cross) / (lambda + n_p).powi(2);
    }
    Ok(total)
}
