//! Synthetic conditional-shift task generation and CSV dataset ingestion.
//!
//! The synthetic generator draws labels from per-domain uniform laws and
//! places covariates on a low-dimensional curve `x = f(y)`, with the target
//! curve additionally rotated/translated/scaled. With different label laws
//! this realizes label shift, and with a nontrivial transform it realizes
//! conditional shift whose marginals can still look aligned.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CodError, Result};
use crate::numerics::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Source,
    Target,
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainTag::Source => write!(f, "source"),
            DomainTag::Target => write!(f, "target"),
        }
    }
}

/// Whether labels may be consumed by training or only by evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelVisibility {
    TrainVisible,
    EvalOnly,
}

/// Paired covariates and continuous labels for one domain.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
    pub domain_tag: DomainTag,
    pub label_visibility: LabelVisibility,
}

impl Dataset {
    pub fn new(
        x: DenseMatrix,
        y: DenseMatrix,
        domain_tag: DomainTag,
        label_visibility: LabelVisibility,
    ) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(CodError::DimensionMismatch(format!(
                "covariates have {} rows but labels have {}",
                x.rows(),
                y.rows()
            )));
        }
        Ok(Dataset {
            x,
            y,
            domain_tag,
            label_visibility,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one row
    }

    pub fn features(&self) -> usize {
        self.x.cols()
    }

    pub fn label_dim(&self) -> usize {
        self.y.cols()
    }

    /// Dataset restricted to the given rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
            domain_tag: self.domain_tag,
            label_visibility: self.label_visibility,
        }
    }

    /// Seeded subsample without replacement down to `k` rows (row order is
    /// the sorted draw, so equal seeds give equal datasets).
    pub fn subsample(&self, k: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
        if k == 0 || k > self.len() {
            return Err(CodError::InvalidParameter(format!(
                "cannot subsample {k} of {} rows",
                self.len()
            )));
        }
        let mut picked = rand::seq::index::sample(rng, self.len(), k).into_vec();
        picked.sort_unstable();
        Ok(self.select_rows(&picked))
    }
}

/// Curve family `x = f(y)` for the synthetic tasks; all families embed into
/// the plane so generated problems stay inspectable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveFamily {
    /// Full circle `(cos 2*pi*y, sin 2*pi*y)`; a rotated copy has an
    /// identical marginal under a uniform label law.
    CircleArc,
    /// Archimedean-style spiral with radius growing in `y`.
    Spiral,
    /// `(y, y^2)` parabola.
    Polynomial,
}

impl CurveFamily {
    pub fn point(&self, y: f64) -> [f64; 2] {
        match self {
            CurveFamily::CircleArc => {
                let theta = 2.0 * std::f64::consts::PI * y;
                [theta.cos(), theta.sin()]
            }
            CurveFamily::Spiral => {
                let theta = 3.0 * std::f64::consts::PI * y;
                let r = 0.3 + y;
                [r * theta.cos(), r * theta.sin()]
            }
            CurveFamily::Polynomial => [y, y * y],
        }
    }

    pub fn dim(&self) -> usize {
        2
    }
}

/// Specification of a paired synthetic conditional-shift task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_per_domain: usize,
    /// Uniform label law `[lo, hi]` for the source domain.
    pub source_label_law: (f64, f64),
    /// Uniform label law `[lo, hi]` for the target domain.
    pub target_label_law: (f64, f64),
    pub curve: CurveFamily,
    /// Rotation (radians) applied to the target curve.
    pub rotation: f64,
    /// Translation applied to the target curve after rotation and scaling.
    pub translation: [f64; 2],
    /// Scale factor applied to the target curve.
    pub scale: f64,
    /// Isotropic Gaussian noise added to covariates in both domains.
    pub noise_std: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_per_domain: 200,
            source_label_law: (0.0, 1.0),
            target_label_law: (0.0, 1.0),
            curve: CurveFamily::CircleArc,
            rotation: 0.0,
            translation: [0.0, 0.0],
            scale: 1.0,
            noise_std: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_domain == 0 {
            return Err(CodError::InvalidParameter(
                "n_per_domain must be positive".into(),
            ));
        }
        for (name, (lo, hi)) in [
            ("source", self.source_label_law),
            ("target", self.target_label_law),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(CodError::InvalidParameter(format!(
                    "{name} label law [{lo}, {hi}] is not a nonempty interval"
                )));
            }
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(CodError::InvalidParameter(format!(
                "noise stddev must be nonnegative, got {}",
                self.noise_std
            )));
        }
        if !self.rotation.is_finite()
            || !self.scale.is_finite()
            || self.scale == 0.0
            || self.translation.iter().any(|t| !t.is_finite())
        {
            return Err(CodError::InvalidParameter(
                "target transform parameters must be finite with nonzero scale".into(),
            ));
        }
        Ok(())
    }

    fn transform(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        let rotated = [c * p[0] - s * p[1], s * p[0] + c * p[1]];
        [
            self.scale * rotated[0] + self.translation[0],
            self.scale * rotated[1] + self.translation[1],
        ]
    }
}

/// Draws a paired source/target task. Deterministic in `seed`.
pub fn gen_synthetic(spec: &SynthSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| CodError::InvalidParameter(format!("noise law: {e}")))?;
    let n = spec.n_per_domain;
    let p = spec.curve.dim();

    let mut draw = |law: (f64, f64), transformed: bool| -> (DenseMatrix, DenseMatrix) {
        let mut xs = Vec::with_capacity(n * p);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let y = if law.0 == law.1 {
                law.0
            } else {
                rng.gen_range(law.0..law.1)
            };
            let mut point = spec.curve.point(y);
            if transformed {
                point = spec.transform(point);
            }
            for v in point {
                let eps = if spec.noise_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                xs.push(v + eps);
            }
            ys.push(y);
        }
        (
            DenseMatrix::from_row_slice(n, p, &xs).expect("finite by construction"),
            DenseMatrix::from_row_slice(n, 1, &ys).expect("finite by construction"),
        )
    };

    let (xs, ys) = draw(spec.source_label_law, false);
    let (xt, yt) = draw(spec.target_label_law, true);
    let source = Dataset::new(xs, ys, DomainTag::Source, LabelVisibility::TrainVisible)?;
    let target = Dataset::new(xt, yt, DomainTag::Target, LabelVisibility::EvalOnly)?;
    Ok((source, target))
}

/// Loads a dataset from a headered CSV file. Columns named in
/// `label_columns` become labels (in the order given); every other column is
/// a covariate, with row order preserved.
pub fn load_csv(path: &Path, label_columns: &[String]) -> Result<Dataset> {
    if label_columns.is_empty() {
        return Err(CodError::InvalidParameter(
            "at least one label column is required".into(),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CodError::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CodError::Data(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();

    let mut label_idx = Vec::with_capacity(label_columns.len());
    for name in label_columns {
        let idx = headers.iter().position(|h| h == name).ok_or_else(|| {
            CodError::Data(format!(
                "{}: label column '{name}' not found (have: {})",
                path.display(),
                headers.join(", ")
            ))
        })?;
        label_idx.push(idx);
    }
    let label_set: BTreeSet<usize> = label_idx.iter().copied().collect();
    if label_set.len() != label_idx.len() {
        return Err(CodError::InvalidParameter(
            "label columns must be distinct".into(),
        ));
    }
    let feature_idx: Vec<usize> =
        (0..headers.len()).filter(|i| !label_set.contains(i)).collect();
    if feature_idx.is_empty() {
        return Err(CodError::Data(format!(
            "{}: no covariate columns remain after removing labels",
            path.display()
        )));
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (rec_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            CodError::Data(format!("{}: row {}: {e}", path.display(), rec_no + 2))
        })?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(rec_no as u64 + 2);
        if record.len() != headers.len() {
            return Err(CodError::Data(format!(
                "{}: row {line}: expected {} fields, got {}",
                path.display(),
                headers.len(),
                record.len()
            )));
        }
        let parse = |idx: usize| -> Result<f64> {
            let cell = record.get(idx).unwrap().trim();
            cell.parse::<f64>().map_err(|_| {
                CodError::Data(format!(
                    "{}: row {line}: non-numeric value '{cell}' in column '{}'",
                    path.display(),
                    headers[idx]
                ))
            })
        };
        for &idx in &feature_idx {
            xs.push(parse(idx)?);
        }
        for &idx in &label_idx {
            ys.push(parse(idx)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CodError::Data(format!(
            "{}: file contains no data rows",
            path.display()
        )));
    }
    let x = DenseMatrix::from_row_slice(rows, feature_idx.len(), &xs)?;
    let y = DenseMatrix::from_row_slice(rows, label_idx.len(), &ys)?;
    Dataset::new(x, y, DomainTag::Source, LabelVisibility::TrainVisible)
}

/// Writes a dataset as CSV with generated headers `x1..xp, y1..ym`.
/// Floats are printed in shortest round-trip form, so reloading recovers
/// bitwise-equal matrices.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CodError::Data(format!("{}: {e}", path.display())))?;
    let mut header = Vec::new();
    for j in 0..dataset.features() {
        header.push(format!("x{}", j + 1));
    }
    for j in 0..dataset.label_dim() {
        header.push(format!("y{}", j + 1));
    }
    writer
        .write_record(&header)
        .map_err(|e| CodError::Data(format!("{}: {e}", path.display())))?;
    for i in 0..dataset.len() {
        let mut record = Vec::with_capacity(header.len());
        for j in 0..dataset.features() {
            record.push(dataset.x.get(i, j).to_string());
        }
        for j in 0..dataset.label_dim() {
            record.push(dataset.y.get(i, j).to_string());
        }
        writer
            .write_record(&record)
            .map_err(|e| CodError::Data(format!("{}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| CodError::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Default label column names (`y1..ym`) as written by [`write_csv`].
pub fn default_label_columns(label_dim: usize) -> Vec<String> {
    (0..label_dim).map(|j| format!("y{}", j + 1)).collect()
}

/// Per-column affine normalization fitted on one matrix and applied to
/// another. Zero-variance columns pass through unscaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(m: &DenseMatrix) -> Standardizer {
        let (n, c) = (m.rows(), m.cols());
        let mut means = vec![0.0; c];
        let mut stds = vec![0.0; c];
        for j in 0..c {
            for i in 0..n {
                means[j] += m.get(i, j);
            }
            means[j] /= n as f64;
            for i in 0..n {
                let d = m.get(i, j) - means[j];
                stds[j] += d * d;
            }
            stds[j] = (stds[j] / n as f64).sqrt();
            if stds[j] == 0.0 {
                stds[j] = 1.0;
            }
        }
        Standardizer { means, stds }
    }

    pub fn apply(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        if m.cols() != self.means.len() {
            return Err(CodError::DimensionMismatch(format!(
                "standardizer fitted on {} columns, input has {}",
                self.means.len(),
                m.cols()
            )));
        }
        DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| {
            (m.get(i, j) - self.means[j]) / self.stds[j]
        })
    }

    pub fn invert(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        if m.cols() != self.means.len() {
            return Err(CodError::DimensionMismatch(format!(
                "standardizer fitted on {} columns, input has {}",
                self.means.len(),
                m.cols()
            )));
        }
        DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| {
            m.get(i, j) * self.stds[j] + self.means[j]
        })
    }
}

/// Standardizes the covariates of `apply_to` using statistics fitted on the
/// covariates of `stats_from`.
pub fn standardize(stats_from: &Dataset, apply_to: &Dataset) -> Result<Dataset> {
    if stats_from.features() != apply_to.features() {
        return Err(CodError::DimensionMismatch(format!(
            "donor has {} features, recipient has {}",
            stats_from.features(),
            apply_to.features()
        )));
    }
    let scaler = Standardizer::fit(&stats_from.x);
    Dataset::new(
        scaler.apply(&apply_to.x)?,
        apply_to.y.clone(),
        apply_to.domain_tag,
        apply_to.label_visibility,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn spec_with_noise(noise: f64) -> SynthSpec {
        SynthSpec {
            n_per_domain: 50,
            noise_std: noise,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = spec_with_noise(0.05);
        let (s1, t1) = gen_synthetic(&spec, 42).unwrap();
        let (s2, t2) = gen_synthetic(&spec, 42).unwrap();
        assert_eq!(s1.x, s2.x);
        assert_eq!(s1.y, s2.y);
        assert_eq!(t1.x, t2.x);
        assert_eq!(t1.y, t2.y);
        let (s3, _) = gen_synthetic(&spec, 43).unwrap();
        assert_ne!(s1.x, s3.x);
    }

    #[test]
    fn generator_marks_roles() {
        let (source, target) = gen_synthetic(&spec_with_noise(0.0), 1).unwrap();
        assert_eq!(source.domain_tag, DomainTag::Source);
        assert_eq!(source.label_visibility, LabelVisibility::TrainVisible);
        assert_eq!(target.domain_tag, DomainTag::Target);
        assert_eq!(target.label_visibility, LabelVisibility::EvalOnly);
        assert_eq!(source.len(), 50);
        assert_eq!(source.features(), 2);
        assert_eq!(source.label_dim(), 1);
    }

    #[test]
    fn zero_noise_points_lie_on_curve() {
        let (source, _) = gen_synthetic(&spec_with_noise(0.0), 9).unwrap();
        for i in 0..source.len() {
            let y = source.y.get(i, 0);
            let p = CurveFamily::CircleArc.point(y);
            assert!((source.x.get(i, 0) - p[0]).abs() < 1e-12);
            assert!((source.x.get(i, 1) - p[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_label_laws_realize_label_shift() {
        let spec = SynthSpec {
            source_label_law: (0.0, 0.5),
            target_label_law: (0.5, 1.0),
            ..spec_with_noise(0.0)
        };
        let (source, target) = gen_synthetic(&spec, 3).unwrap();
        for i in 0..source.len() {
            assert!(source.y.get(i, 0) <= 0.5);
            assert!(target.y.get(i, 0) >= 0.5);
        }
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let spec = SynthSpec {
            noise_std: -1.0,
            ..SynthSpec::default()
        };
        assert!(matches!(
            gen_synthetic(&spec, 0),
            Err(CodError::InvalidParameter(_))
        ));
        let spec = SynthSpec {
            source_label_law: (1.0, 0.0),
            ..SynthSpec::default()
        };
        assert!(gen_synthetic(&spec, 0).is_err());
    }

    #[test]
    fn csv_small_file_shapes() {
        let dir = std::env::temp_dir().join("cod_csv_small");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("small.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "a,b,label").unwrap();
        writeln!(f, "1.0,2.0,0.5").unwrap();
        writeln!(f, "3.0,4.0,1.5").unwrap();
        writeln!(f, "5.0,6.0,2.5").unwrap();
        drop(f);
        let ds = load_csv(&path, &["label".to_string()]).unwrap();
        assert_eq!((ds.x.rows(), ds.x.cols()), (3, 2));
        assert_eq!((ds.y.rows(), ds.y.cols()), (3, 1));
        assert_eq!(ds.x.get(1, 1), 4.0);
        assert_eq!(ds.y.get(2, 0), 2.5);
    }

    #[test]
    fn csv_reports_offending_row() {
        let dir = std::env::temp_dir().join("cod_csv_badrow");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "a,y1").unwrap();
        for i in 0..5 {
            writeln!(f, "{i},0.0").unwrap();
        }
        writeln!(f, "oops,0.0").unwrap(); // file line 7
        drop(f);
        let err = load_csv(&path, &["y1".to_string()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 7"), "message was: {msg}");
        assert!(msg.contains("oops"));
    }

    #[test]
    fn csv_missing_label_column() {
        let dir = std::env::temp_dir().join("cod_csv_missing");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("missing.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        let err = load_csv(&path, &["y1".to_string()]).unwrap_err();
        assert!(err.to_string().contains("y1"));
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let (source, _) = gen_synthetic(&spec_with_noise(0.05), 11).unwrap();
        let dir = std::env::temp_dir().join("cod_csv_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.csv");
        write_csv(&source, &path).unwrap();
        let reloaded = load_csv(&path, &default_label_columns(1)).unwrap();
        assert_eq!(source.x, reloaded.x);
        assert_eq!(source.y, reloaded.y);
    }

    #[test]
    fn standardize_self_is_zero_mean_unit_variance() {
        let (source, _) = gen_synthetic(&spec_with_noise(0.1), 21).unwrap();
        let out = standardize(&source, &source).unwrap();
        for j in 0..out.features() {
            let n = out.len() as f64;
            let mean: f64 = (0..out.len()).map(|i| out.x.get(i, j)).sum::<f64>() / n;
            let var: f64 = (0..out.len())
                .map(|i| (out.x.get(i, j) - mean).powi(2))
                .sum::<f64>()
                / n;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn standardize_passes_constant_columns() {
        let x = DenseMatrix::from_fn(4, 2, |i, j| if j == 0 { 7.5 } else { i as f64 }).unwrap();
        let y = DenseMatrix::zeros(4, 1);
        let ds = Dataset::new(x, y, DomainTag::Source, LabelVisibility::TrainVisible).unwrap();
        let out = standardize(&ds, &ds).unwrap();
        for i in 0..4 {
            assert_eq!(out.x.get(i, 0), 0.0); // centered but unscaled
        }
    }

    #[test]
    fn standardize_inverts_exactly() {
        let (source, target) = gen_synthetic(&spec_with_noise(0.2), 33).unwrap();
        let scaler = Standardizer::fit(&source.x);
        let scaled = scaler.apply(&target.x).unwrap();
        let back = scaler.invert(&scaled).unwrap();
        assert!(back.sub(&target.x).max_abs() < 1e-12);
        // donor stats leave the recipient off-center in general
        let mean0: f64 =
            (0..scaled.rows()).map(|i| scaled.get(i, 0)).sum::<f64>() / scaled.rows() as f64;
        assert!(mean0.is_finite());
    }

    #[test]
    fn subsample_is_seeded_and_sorted() {
        let (source, _) = gen_synthetic(&spec_with_noise(0.0), 5).unwrap();
        let mut rng1 = ChaCha8Rng::seed_from_u64(100);
        let mut rng2 = ChaCha8Rng::seed_from_u64(100);
        let a = source.subsample(10, &mut rng1).unwrap();
        let b = source.subsample(10, &mut rng2).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.len(), 10);
    }
}
