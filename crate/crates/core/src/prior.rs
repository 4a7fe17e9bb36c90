//! A priori model of the configuration: sample mean, covariance and its
//! principal components.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative symmetry tolerance for covariance inputs.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues of a covariance may undershoot zero by this fraction of the
/// largest eigenvalue before the matrix is rejected as indefinite.
pub const NEGATIVE_EIG_TOL: f64 = 1e-10;
/// Floor applied when an explicit inverse of the prior covariance is needed.
pub const INVERSE_CLAMP: f64 = 1e-12;

/// Unit tag carried by a dataset. All solvers are unit-agnostic; the tag is
/// metadata for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleUnits {
    Degrees,
    Radians,
    Dimensionless,
}

impl AngleUnits {
    pub fn as_str(&self) -> &'static str {
        match self {
            AngleUnits::Degrees => "degrees",
            AngleUnits::Radians => "radians",
            AngleUnits::Dimensionless => "dimensionless",
        }
    }
}

/// A set of configuration samples: one labelled dimension per row, one sample
/// per column.
#[derive(Debug, Clone)]
pub struct PoseDataset {
    labels: Vec<String>,
    samples: DMatrix<f64>,
    units: AngleUnits,
}

impl PoseDataset {
    /// `samples` is n x N: row i holds all observations of dimension
    /// `labels[i]`.
    pub fn new(labels: Vec<String>, samples: DMatrix<f64>, units: AngleUnits) -> Result<Self> {
        let (n, cols) = samples.shape();
        if n == 0 || cols == 0 {
            return Err(Error::ShapeError(format!(
                "dataset must be non-empty, got {n} dimensions x {cols} samples"
            )));
        }
        if labels.len() != n {
            return Err(Error::ShapeError(format!(
                "{} labels for {n} dimensions",
                labels.len()
            )));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::InvalidData(format!("duplicate dimension label '{a}'")));
            }
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite sample entry".into()));
        }
        Ok(Self { labels, samples, units })
    }

    pub fn dims(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn units(&self) -> AngleUnits {
        self.units
    }

    pub fn sample(&self, j: usize) -> DVector<f64> {
        DVector::from(self.samples.column(j))
    }
}

/// Prior mean and covariance of the configuration, with the spectral
/// decomposition used by every design algorithm.
#[derive(Debug, Clone)]
pub struct PriorModel {
    labels: Vec<String>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    /// Descending eigenvalues, clamped to be non-negative.
    spectrum: DVector<f64>,
    /// Columns are the principal components matching `spectrum`.
    basis: DMatrix<f64>,
}

impl PriorModel {
    /// Build a prior from an explicit mean and covariance.
    pub fn new(labels: Vec<String>, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.shape() != (n, n) {
            return Err(Error::ShapeError(format!(
                "covariance {}x{} does not match mean length {n}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if labels.len() != n {
            return Err(Error::ShapeError(format!("{} labels for {n} dimensions", labels.len())));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite prior entry".into()));
        }
        let (basis, spectrum) = sorted_symmetric_eigen(&cov)?;
        let sigma1 = spectrum[0];
        if spectrum.iter().any(|&s| s < -NEGATIVE_EIG_TOL * sigma1.max(1.0)) {
            return Err(Error::InvalidPrior(format!(
                "covariance is indefinite: smallest eigenvalue {:.3e}",
                spectrum[n - 1]
            )));
        }
        let spectrum = spectrum.map(|s| s.max(0.0));
        Ok(Self { labels, mean, cov, spectrum, basis })
    }

    /// Like [`PriorModel::new`] with auto-generated labels `dof1..dofn`.
    pub fn from_covariance(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let labels = (1..=mean.len()).map(|i| format!("dof{i}")).collect();
        Self::new(labels, mean, cov)
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Descending eigenvalues of the covariance.
    pub fn spectrum(&self) -> &DVector<f64> {
        &self.spectrum
    }

    /// Orthogonal matrix whose i-th column is the i-th principal component.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Number of eigenvalues above `INVERSE_CLAMP` times the largest.
    pub fn effective_rank(&self) -> usize {
        let floor = INVERSE_CLAMP * self.spectrum[0];
        self.spectrum.iter().filter(|&&s| s > floor).count()
    }

    /// Sum of squared eigenvalues, i.e. the squared Frobenius norm of the
    /// covariance.
    pub fn frobenius_sq(&self) -> f64 {
        self.spectrum.iter().map(|s| s * s).sum()
    }

    /// Tail sum of squared eigenvalues beyond index `m` (1-based count of
    /// leading terms dropped).
    pub fn tail_energy(&self, m: usize) -> f64 {
        self.spectrum.iter().skip(m).map(|s| s * s).sum()
    }

    /// Inverse of the covariance with eigenvalues clamped at
    /// `INVERSE_CLAMP * sigma_1`. Only the information-form cross checks need
    /// this; the reconstruction path never inverts the prior.
    pub fn inverse_clamped(&self) -> DMatrix<f64> {
        let floor = (INVERSE_CLAMP * self.spectrum[0]).max(f64::MIN_POSITIVE);
        let inv_diag = DMatrix::from_diagonal(&self.spectrum.map(|s| 1.0 / s.max(floor)));
        &self.basis * inv_diag * self.basis.transpose()
    }

    /// Symmetric square root of the covariance.
    pub fn sqrt_cov(&self) -> DMatrix<f64> {
        let root = DMatrix::from_diagonal(&self.spectrum.map(f64::sqrt));
        &self.basis * root * self.basis.transpose()
    }
}

/// Estimate the prior from data: per-dimension mean and the unbiased sample
/// covariance, decomposed into principal components.
pub fn compute_prior(data: &PoseDataset) -> Result<PriorModel> {
    let n = data.dims();
    let count = data.len();
    if count < 2 {
        return Err(Error::InsufficientSamples { got: count });
    }
    let x = data.samples();
    let mean = x.column_mean();
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let cov = &centered * centered.transpose() / (count as f64 - 1.0);
    let mut prior = PriorModel::new(data.labels().to_vec(), mean, cov)?;
    // The sample covariance is PSD by construction; tiny negative roundoff
    // eigenvalues were already clamped in the constructor.
    debug_assert!(prior.spectrum.iter().all(|&s| s >= 0.0));
    debug_assert_eq!(prior.dims(), n);
    prior.labels = data.labels().to_vec();
    Ok(prior)
}

/// Eigendecomposition of a symmetric matrix with a deterministic convention:
/// eigenvalues descending, each eigenvector's largest-magnitude entry
/// non-negative (first such entry on ties), and equal eigenvalues ordered by
/// ascending index of the dominant coordinate.
pub fn sorted_symmetric_eigen(mat: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = mat.nrows();
    if mat.ncols() != n {
        return Err(Error::ShapeError(format!("expected square matrix, got {}x{}", n, mat.ncols())));
    }
    let scale = mat.norm();
    let asym = (mat - mat.transpose()).norm();
    if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) && scale > 0.0 {
        return Err(Error::NotSymmetric { relative_asymmetry: asym / scale });
    }
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();

    struct Pair {
        value: f64,
        vector: DVector<f64>,
        dominant: usize,
    }
    let mut pairs: Vec<Pair> = (0..n)
        .map(|i| {
            let mut vector = DVector::from(eig.eigenvectors.column(i));
            let dominant = dominant_index(&vector);
            if vector[dominant] < 0.0 {
                vector.neg_mut();
            }
            Pair { value: eig.eigenvalues[i], vector, dominant }
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.value
            .partial_cmp(&a.value)
            .expect("eigenvalues are finite")
            .then(a.dominant.cmp(&b.dominant))
    });

    let spectrum = DVector::from_iterator(n, pairs.iter().map(|p| p.value));
    let mut basis = DMatrix::zeros(n, n);
    for (i, p) in pairs.iter().enumerate() {
        basis.set_column(i, &p.vector);
    }
    Ok((basis, spectrum))
}

/// Index of the entry with the largest magnitude; first one wins ties.
fn dominant_index(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    best
}
