//! Analytic gradients of every metric with respect to the source and target
//! representation batches.
//!
//! Labels never receive gradient: source labels are ground truth and target
//! pseudo-labels are treated as constants at each step, so every label
//! kernel, resolvent, and conditional factor is a constant of the
//! differentiation. The only moving pieces are the three covariate kernel
//! blocks, and each metric's derivative with respect to them is assembled in
//! closed form before being pushed through the kernel entries.

use serde::{Deserialize, Serialize};

use crate::condops::{center_columns, cross_inner_matrix, ConditionalStats, GramBundle};
use crate::error::{CodError, Result};
use crate::metrics::{self, MetricConfig};
use crate::numerics::{center_gram, reg_inverse, DenseMatrix, KernelSpec};

/// Gradients of a metric with respect to the two representation batches.
#[derive(Debug, Clone)]
pub struct GradPair {
    pub d_zs: DenseMatrix,
    pub d_zt: DenseMatrix,
}

/// The differentiable metric family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Mmd2,
    Kgw2,
    Cmmd2,
    CmmdMod,
    Cod2,
    CodMod,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Mmd2,
        MetricKind::Kgw2,
        MetricKind::Cmmd2,
        MetricKind::CmmdMod,
        MetricKind::Cod2,
        MetricKind::CodMod,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Mmd2 => "mmd2",
            MetricKind::Kgw2 => "kgw2",
            MetricKind::Cmmd2 => "cmmd2",
            MetricKind::CmmdMod => "cmmd_mod",
            MetricKind::Cod2 => "cod2",
            MetricKind::CodMod => "cod_mod",
        }
    }

    pub fn parse(name: &str) -> Result<MetricKind> {
        MetricKind::ALL
            .iter()
            .copied()
            .find(|m| m.name() == name)
            .ok_or_else(|| {
                CodError::InvalidParameter(format!(
                    "unknown metric '{name}' (expected one of: {})",
                    MetricKind::ALL
                        .iter()
                        .map(|m| m.name())
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Forward value of a metric on an already-built bundle.
pub fn metric_value_on_bundle(
    metric: MetricKind,
    bundle: &GramBundle,
    cfg: &MetricConfig,
) -> Result<f64> {
    Ok(match metric {
        MetricKind::Mmd2 => metrics::mmd2(&bundle.kx_ss, &bundle.kx_tt, &bundle.kx_ts)?,
        MetricKind::Kgw2 => metrics::kgw2(bundle)?.total,
        MetricKind::Cmmd2 => metrics::cmmd2(bundle, cfg)?,
        MetricKind::CmmdMod => metrics::cmmd_mod(bundle, cfg)?,
        MetricKind::Cod2 => metrics::cod2(bundle, cfg)?.total,
        MetricKind::CodMod => metrics::cod_mod(bundle, cfg)?.total,
    })
}

/// Forward value of a metric on raw batches.
pub fn metric_value(
    metric: MetricKind,
    zs: &DenseMatrix,
    zt: &DenseMatrix,
    ys: &DenseMatrix,
    yt: &DenseMatrix,
    cfg: &MetricConfig,
) -> Result<f64> {
    let bundle = GramBundle::from_batches(zs, zt, ys, yt, &cfg.x_kernel, &cfg.y_kernel)?;
    metric_value_on_bundle(metric, &bundle, cfg)
}

/// Forward value plus exact analytic gradients with respect to `zs`, `zt`.
pub fn metric_grad(
    metric: MetricKind,
    zs: &DenseMatrix,
    zt: &DenseMatrix,
    ys: &DenseMatrix,
    yt: &DenseMatrix,
    cfg: &MetricConfig,
) -> Result<(f64, GradPair)> {
    cfg.validate()?;
    if matches!(cfg.x_kernel, KernelSpec::KroneckerDelta { .. }) {
        return Err(CodError::InvalidParameter(
            "the delta kernel is not differentiable in the covariates".into(),
        ));
    }
    let bundle = GramBundle::from_batches(zs, zt, ys, yt, &cfg.x_kernel, &cfg.y_kernel)?;
    let value = metric_value_on_bundle(metric, &bundle, cfg)?;

    let n = bundle.n();
    let nf = n as f64;
    let mut w_ss = DenseMatrix::zeros(n, n);
    let mut w_tt = DenseMatrix::zeros(n, n);
    let mut w_ts = DenseMatrix::zeros(n, n);

    let wants_mean = matches!(
        metric,
        MetricKind::Cmmd2 | MetricKind::CmmdMod | MetricKind::Cod2 | MetricKind::CodMod
    );
    let mean_sign_flips = matches!(metric, MetricKind::CmmdMod | MetricKind::CodMod);
    let wants_cov = matches!(metric, MetricKind::Cod2 | MetricKind::CodMod);
    let wants_mmd = matches!(metric, MetricKind::Mmd2 | MetricKind::Kgw2);
    let wants_bures = matches!(metric, MetricKind::Kgw2);

    if wants_mmd {
        let c = 1.0 / (nf * nf);
        w_ss = w_ss.add(&DenseMatrix::from_fn(n, n, |_, _| c)?);
        w_tt = w_tt.add(&DenseMatrix::from_fn(n, n, |_, _| c)?);
        w_ts = w_ts.add(&DenseMatrix::from_fn(n, n, |_, _| -2.0 * c)?);
    }

    if wants_bures {
        // d/dK (1/n) tr(H K H) = (1/n) H
        let h = centering(n);
        w_ss = w_ss.add(&h.scale(1.0 / nf));
        w_tt = w_tt.add(&h.scale(1.0 / nf));
        // d/dK^{ts} (2/n) ||H K^{ts} H||_* = (2/n) H (U V^T) H
        let inner = center_gram(&bundle.kx_ts)?;
        let subgrad = nuclear_subgradient(&inner)?;
        w_ts = w_ts.sub(&center_gram(&subgrad)?.scale(2.0 / nf));
    }

    if wants_mean {
        let rs = reg_inverse(&bundle.ky_ss, cfg.ridge_lambda)?;
        let rt = reg_inverse(&bundle.ky_tt, cfg.ridge_lambda)?;
        let dw_s = rs.matmul(&bundle.ky_ss).matmul(&rs);
        let dw_t = rt.matmul(&bundle.ky_tt).matmul(&rt);
        if mean_sign_flips {
            if cfg.literal_modified_terms {
                w_tt = w_tt.sub(&dw_t.scale(2.0));
            } else {
                w_ss = w_ss.sub(&dw_s);
                w_tt = w_tt.sub(&dw_t);
            }
        } else {
            w_ss = w_ss.add(&dw_s);
            w_tt = w_tt.add(&dw_t);
        }
        // cross term enters every mean-block variant as -2 tr(.)
        let dw_cross = rt.matmul(&bundle.ky_ts).matmul(&rs);
        w_ts = w_ts.sub(&dw_cross.scale(2.0));
    }

    if wants_cov {
        // d/dK_X (eps tr[H K_X H (G_Y + eps n I)^{-1}]) = (1/n) H B H
        let bs = ConditionalStats::from_label_gram(&bundle.gy_s, cfg.epsilon)?;
        let bt = ConditionalStats::from_label_gram(&bundle.gy_t, cfg.epsilon)?;
        w_ss = w_ss.add(&center_gram(&bs.b)?.scale(1.0 / nf));
        w_tt = w_tt.add(&center_gram(&bt.b)?.scale(1.0 / nf));
        // d/dK^{ts} (2/n) ||(H A^t)^T K^{ts} (H A^s)||_*
        //   = (2/n) (H A^t) (U V^T) (H A^s)^T
        let inner = cross_inner_matrix(&bundle.kx_ts, &bs.a, &bt.a);
        let subgrad = nuclear_subgradient(&inner)?;
        let lift = center_columns(&bt.a)
            .matmul(&subgrad)
            .matmul(&center_columns(&bs.a).transpose());
        w_ts = w_ts.sub(&lift.scale(2.0 / nf));
    }

    // Push the kernel-block derivatives through the kernel entries.
    let (ds_ss_a, ds_ss_b) = kernel_backprop(&cfg.x_kernel, &w_ss, &bundle.kx_ss, zs, zs);
    let (dt_tt_a, dt_tt_b) = kernel_backprop(&cfg.x_kernel, &w_tt, &bundle.kx_tt, zt, zt);
    let (dt_ts, ds_ts) = kernel_backprop(&cfg.x_kernel, &w_ts, &bundle.kx_ts, zt, zs);

    let d_zs = ds_ss_a.add(&ds_ss_b).add(&ds_ts);
    let d_zt = dt_tt_a.add(&dt_tt_b).add(&dt_ts);
    Ok((
        value,
        GradPair {
            d_zs: DenseMatrix::from_fn(d_zs.rows(), d_zs.cols(), |i, j| d_zs.get(i, j))?,
            d_zt: DenseMatrix::from_fn(d_zt.rows(), d_zt.cols(), |i, j| d_zt.get(i, j))?,
        },
    ))
}

/// Centering matrix `H = I - (1/n) 1 1^T`.
fn centering(n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n, n, |i, j| {
        (if i == j { 1.0 } else { 0.0 }) - 1.0 / n as f64
    })
    .expect("finite by construction")
}

/// Gradient of `sum_ij W_ij k(a_i, b_j)` with respect to `a` and `b`.
fn kernel_backprop(
    spec: &KernelSpec,
    w: &DenseMatrix,
    k: &DenseMatrix,
    a: &DenseMatrix,
    b: &DenseMatrix,
) -> (DenseMatrix, DenseMatrix) {
    match spec {
        KernelSpec::Linear => (w.matmul(b), w.transpose().matmul(a)),
        KernelSpec::Gaussian { bandwidth } => {
            let c = -2.0 / (bandwidth * bandwidth);
            // m = w .* k
            let m = DenseMatrix::from_fn(w.rows(), w.cols(), |i, j| w.get(i, j) * k.get(i, j))
                .expect("finite by construction");
            let row_sums: Vec<f64> = (0..m.rows())
                .map(|i| (0..m.cols()).map(|j| m.get(i, j)).sum())
                .collect();
            let col_sums: Vec<f64> = (0..m.cols())
                .map(|j| (0..m.rows()).map(|i| m.get(i, j)).sum())
                .collect();
            let mb = m.matmul(b);
            let da = DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| {
                c * (row_sums[i] * a.get(i, j) - mb.get(i, j))
            })
            .expect("finite by construction");
            let mta = m.transpose().matmul(a);
            let db = DenseMatrix::from_fn(b.rows(), b.cols(), |i, j| {
                c * (col_sums[i] * b.get(i, j) - mta.get(i, j))
            })
            .expect("finite by construction");
            (da, db)
        }
        KernelSpec::KroneckerDelta { .. } => {
            unreachable!("rejected before gradient assembly")
        }
    }
}

/// Relative cutoff separating structural/rounding zeros from genuine
/// singular values. Centered factors are rank deficient by construction, so
/// an exact-zero tail is expected and excluded from the subgradient.
const STRUCTURAL_CUTOFF: f64 = 1e-10;
/// Below this, retained singular values or gaps between them signal a
/// nondifferentiable point.
const DEGENERACY_TOL: f64 = 1e-9;

enum SubgradOutcome {
    Ok(DenseMatrix),
    Degenerate,
}

/// Nuclear-norm subgradient `U V^T` from the thin SVD over retained singular
/// values. Near-degenerate spectra trigger one deterministic `1e-8`
/// perturbation retry before giving up.
fn nuclear_subgradient(inner: &DenseMatrix) -> Result<DenseMatrix> {
    match try_subgradient(inner)? {
        SubgradOutcome::Ok(d) => Ok(d),
        SubgradOutcome::Degenerate => {
            let perturbed = inner.add(&deterministic_perturbation(inner.rows(), inner.cols()));
            match try_subgradient(&perturbed)? {
                SubgradOutcome::Ok(d) => Ok(d),
                SubgradOutcome::Degenerate => Err(CodError::DegenerateSpectrum(format!(
                    "nuclear-norm site has singular values within {DEGENERACY_TOL:.0e} \
                     even after perturbation retry"
                ))),
            }
        }
    }
}

fn try_subgradient(inner: &DenseMatrix) -> Result<SubgradOutcome> {
    let svd = nalgebra::SVD::try_new(inner.inner().clone(), true, true, f64::EPSILON, 100_000)
        .ok_or_else(|| {
            CodError::ConvergenceFailure("SVD did not converge in nuclear subgradient".into())
        })?;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().cloned().fold(0.0f64, f64::max);
    if sigma_max == 0.0 {
        // Zero matrix: the zero subgradient is the canonical choice.
        return Ok(SubgradOutcome::Ok(DenseMatrix::zeros(
            inner.rows(),
            inner.cols(),
        )));
    }
    let retained: Vec<usize> = (0..sigma.len())
        .filter(|&i| sigma[i] > STRUCTURAL_CUTOFF * sigma_max)
        .collect();
    let mut kept: Vec<f64> = retained.iter().map(|&i| sigma[i]).collect();
    kept.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if let Some(&smallest) = kept.last() {
        if smallest < DEGENERACY_TOL {
            return Ok(SubgradOutcome::Degenerate);
        }
    }
    if kept.windows(2).any(|w| w[0] - w[1] < DEGENERACY_TOL) {
        return Ok(SubgradOutcome::Degenerate);
    }

    let mut d = nalgebra::DMatrix::zeros(inner.rows(), inner.cols());
    for &idx in &retained {
        let ui = u.column(idx);
        let vi = v_t.row(idx);
        for r in 0..inner.rows() {
            for c in 0..inner.cols() {
                d[(r, c)] += ui[r] * vi[c];
            }
        }
    }
    Ok(SubgradOutcome::Ok(DenseMatrix::from_inner(d)?))
}

/// Fixed-seed perturbation used by the retry path; deterministic across runs
/// so gradients stay reproducible.
fn deterministic_perturbation(rows: usize, cols: usize) -> DenseMatrix {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_c0d0);
    DenseMatrix::from_fn(rows, cols, |_, _| 1e-8 * rng.gen_range(-1.0..1.0))
        .expect("finite by construction")
}

/// Central-difference validation of [`metric_grad`] over every entry of both
/// batches; returns the maximum relative error with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check(
    metric: MetricKind,
    zs: &DenseMatrix,
    zt: &DenseMatrix,
    ys: &DenseMatrix,
    yt: &DenseMatrix,
    cfg: &MetricConfig,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(CodError::InvalidParameter(format!(
            "finite-difference step must be a positive finite real, got {h}"
        )));
    }
    let (_, grads) = metric_grad(metric, zs, zt, ys, yt, cfg)?;
    let mut worst = 0.0f64;

    let mut probe = |which_source: bool, analytic: &DenseMatrix| -> Result<()> {
        let base = if which_source { zs } else { zt };
        for i in 0..base.rows() {
            for j in 0..base.cols() {
                let mut bump = |delta: f64| -> Result<f64> {
                    let shifted = DenseMatrix::from_fn(base.rows(), base.cols(), |r, c| {
                        base.get(r, c) + if (r, c) == (i, j) { delta } else { 0.0 }
                    })?;
                    let v = if which_source {
                        metric_value(metric, &shifted, zt, ys, yt, cfg)?
                    } else {
                        metric_value(metric, zs, &shifted, ys, yt, cfg)?
                    };
                    if !v.is_finite() {
                        return Err(CodError::NonFinite(format!(
                            "metric {metric} is non-finite at a perturbed point"
                        )));
                    }
                    Ok(v)
                };
                let numeric = (bump(h)? - bump(-h)?) / (2.0 * h);
                let analytic_v = analytic.get(i, j);
                let denom = analytic_v.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max((analytic_v - numeric).abs() / denom);
            }
        }
        Ok(())
    };
    probe(true, &grads.d_zs)?;
    probe(false, &grads.d_zt)?;
    Ok(worst)
}

/// True when every nuclear-norm site of `metric` on this batch has retained
/// singular values separated by at least `min_gap` (and no retained value
/// closer than `min_gap` to the discarded tail). Used to exclude
/// near-nondifferentiable points from finite-difference sweeps.
pub fn nuclear_sites_well_separated(
    metric: MetricKind,
    zs: &DenseMatrix,
    zt: &DenseMatrix,
    ys: &DenseMatrix,
    yt: &DenseMatrix,
    cfg: &MetricConfig,
    min_gap: f64,
) -> Result<bool> {
    let bundle = GramBundle::from_batches(zs, zt, ys, yt, &cfg.x_kernel, &cfg.y_kernel)?;
    let mut inners = Vec::new();
    if matches!(metric, MetricKind::Kgw2) {
        inners.push(center_gram(&bundle.kx_ts)?);
    }
    if matches!(metric, MetricKind::Cod2 | MetricKind::CodMod) {
        let bs = ConditionalStats::from_label_gram(&bundle.gy_s, cfg.epsilon)?;
        let bt = ConditionalStats::from_label_gram(&bundle.gy_t, cfg.epsilon)?;
        inners.push(cross_inner_matrix(&bundle.kx_ts, &bs.a, &bt.a));
    }
    for inner in &inners {
        let svd = nalgebra::SVD::try_new(inner.inner().clone(), false, false, f64::EPSILON, 100_000)
            .ok_or_else(|| CodError::ConvergenceFailure("SVD did not converge".into()))?;
        let mut sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
        sigma.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let sigma_max = sigma.first().copied().unwrap_or(0.0);
        if sigma_max == 0.0 {
            continue;
        }
        let kept: Vec<f64> = sigma
            .iter()
            .copied()
            .filter(|&s| s > STRUCTURAL_CUTOFF * sigma_max)
            .collect();
        if kept.windows(2).any(|w| w[0] - w[1] < min_gap) {
            return Ok(false);
        }
        if kept.last().is_some_and(|&s| s < min_gap) {
            return Ok(false);
        }
    }
    Ok(true)
}
