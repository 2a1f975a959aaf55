//! Conditional operator discrepancy metrics and a domain-adaptation
//! regression trainer.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense symmetric linear algebra and kernel matrices
//! - [`condops`]: conditional moment statistics in RKHS
//! - [`metrics`]: the discrepancy family (MMD, kernel Bures, KGW, CMMD, COD
//!   and their modified variants)
//! - [`gradients`]: analytic gradients of every metric with respect to the
//!   source/target representation batches
//! - [`learning`]: MLP extractor + affine predictor, composite objective,
//!   Adam training loop with target pseudo-labels
//! - [`data`]: synthetic conditional-shift task generation and CSV ingestion

pub mod condops;
pub mod data;
pub mod error;
pub mod gradients;
pub mod metrics;
pub mod numerics;

pub use error::{CodError, Result};
#[cfg(test)]
mod dbg_bures {
    use crate::numerics::{center_gram, nuclear_norm, DenseMatrix};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dbg_linear_bures() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 6usize;
        let d = 2usize;
        let zs = DenseMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
        let zt = DenseMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
        // rank-2 cross kernel
        let kts = zt.matmul(&zs.transpose());
        let f = |k: &DenseMatrix| -> f64 { nuclear_norm(&center_gram(k).unwrap()).unwrap() };

        // analytic: H D H from SVD of centered matrix
        let inner = center_gram(&kts).unwrap();
        let svd = nalgebra::SVD::try_new(inner.inner_for_debug(), true, true, f64::EPSILON, 100000).unwrap();
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let sig = &svd.singular_values;
        let smax = sig.iter().cloned().fold(0.0f64, f64::max);
        let mut dmat = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..sig.len() {
            if sig[i] > 1e-10 * smax {
                for r in 0..n { for c in 0..n { dmat[(r,c)] += u[(r,i)] * vt[(i,c)]; } }
            }
        }
        let d_dense = DenseMatrix::from_fn(n, n, |i, j| dmat[(i,j)]).unwrap();
        let analytic_w = center_gram(&d_dense).unwrap();

        let h = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let kp = DenseMatrix::from_fn(n, n, |r, c| kts.get(r, c) + if (r,c)==(i,j) {h} else {0.0}).unwrap();
                let km = DenseMatrix::from_fn(n, n, |r, c| kts.get(r, c) - if (r,c)==(i,j) {h} else {0.0}).unwrap();
                let num = (f(&kp) - f(&km)) / (2.0 * h);
                println!("dW[{i},{j}]: analytic {:.6} numeric {:.6}", analytic_w.get(i, j), num);
            }
        }
    }
}
