//! Linear-Gaussian measurement model, minimum-variance reconstruction and the
//! design cost.
//!
//! The measurement model is `y = H x + v` with `x ~ (mu, P_o)` and
//! `v ~ N(0, R)`. Conditioning on `y` leaves the posterior covariance
//! `P_p = P_o - P_o H' (H P_o H' + R)^-1 H P_o`; every solver in this crate
//! minimizes `V1 = ||P_p||_F^2` over some family of measurement matrices.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::prior::{sorted_symmetric_eigen, PriorModel, NEGATIVE_EIG_TOL};

/// Relative floor on the smallest innovation eigenvalue.
pub const INNOVATION_COND_TOL: f64 = 1e-12;
/// Relative floor on the smallest singular value for full row rank.
pub const RANK_TOL: f64 = 1e-10;
/// Orthonormality tolerance for continuous blocks.
pub const ORTHO_TOL: f64 = 1e-8;

/// Measurement-noise covariance with its spectral decomposition. A zero
/// matrix is a legal value and selects the noise-free regime exactly.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    cov: DMatrix<f64>,
    spectrum: DVector<f64>,
    basis: DMatrix<f64>,
}

impl NoiseModel {
    pub fn from_covariance(cov: DMatrix<f64>) -> Result<Self> {
        let m = cov.nrows();
        if cov.ncols() != m {
            return Err(Error::ShapeError(format!(
                "noise covariance must be square, got {}x{}",
                m,
                cov.ncols()
            )));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite noise covariance entry".into()));
        }
        let (basis, spectrum) = sorted_symmetric_eigen(&cov)?;
        let sigma1 = spectrum.get(0).copied().unwrap_or(0.0);
        if spectrum.iter().any(|&s| s < -NEGATIVE_EIG_TOL * sigma1.max(1.0)) {
            return Err(Error::InvalidData(format!(
                "noise covariance is indefinite: smallest eigenvalue {:.3e}",
                spectrum[m - 1]
            )));
        }
        let spectrum = spectrum.map(|s| s.max(0.0));
        Ok(Self { cov, spectrum, basis })
    }

    /// Exactly zero noise of dimension `m`.
    pub fn zero(m: usize) -> Self {
        Self {
            cov: DMatrix::zeros(m, m),
            spectrum: DVector::zeros(m),
            basis: DMatrix::identity(m, m),
        }
    }

    /// Independent sensors with a common standard deviation.
    pub fn isotropic(m: usize, std: f64) -> Self {
        if std == 0.0 {
            return Self::zero(m);
        }
        Self {
            cov: DMatrix::identity(m, m) * (std * std),
            spectrum: DVector::from_element(m, std * std),
            basis: DMatrix::identity(m, m),
        }
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn spectrum(&self) -> &DVector<f64> {
        &self.spectrum
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn is_zero(&self) -> bool {
        self.cov.iter().all(|&v| v == 0.0)
    }

    /// True when the smallest eigenvalue clears the conditioning floor.
    pub fn is_spd(&self) -> bool {
        let m = self.dim();
        m > 0 && self.spectrum[m - 1] > INNOVATION_COND_TOL * self.spectrum[0].max(f64::MIN_POSITIVE)
    }
}

/// Kind of sensing a measurement matrix encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignMode {
    /// Each row is an arbitrary linear combination of coordinates.
    Continuous,
    /// Each row reads exactly one coordinate.
    Discrete,
    /// Orthonormal continuous rows stacked over selection rows.
    Hybrid,
}

impl DesignMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DesignMode::Continuous => "continuous",
            DesignMode::Discrete => "discrete",
            DesignMode::Hybrid => "hybrid",
        }
    }
}

/// An m x n measurement matrix with its mode tag and, for hybrid designs,
/// the block split.
#[derive(Debug, Clone)]
pub struct MeasurementDesign {
    matrix: DMatrix<f64>,
    mode: DesignMode,
    split: Option<(usize, usize)>,
    row_labels: Option<Vec<String>>,
}

impl MeasurementDesign {
    /// General constructor; validates full row rank and the mode-specific
    /// structure invariants.
    pub fn new(matrix: DMatrix<f64>, mode: DesignMode, split: Option<(usize, usize)>) -> Result<Self> {
        let (m, n) = matrix.shape();
        if m == 0 || m > n {
            return Err(Error::ShapeError(format!("measurement matrix must be m x n with 1 <= m <= n, got {m}x{n}")));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite design entry".into()));
        }
        let sv = matrix.clone().singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        if smin <= RANK_TOL * smax {
            return Err(Error::DegenerateDesign(format!(
                "measurement matrix is rank deficient (sigma_min/sigma_max = {:.3e})",
                smin / smax.max(f64::MIN_POSITIVE)
            )));
        }
        let split = match (mode, split) {
            (DesignMode::Hybrid, Some((mc, md))) => {
                if mc + md != m {
                    return Err(Error::ShapeError(format!("hybrid split {mc}+{md} != m = {m}")));
                }
                Some((mc, md))
            }
            (DesignMode::Hybrid, None) => {
                return Err(Error::ModeError("hybrid design requires a block split".into()))
            }
            (_, Some(_)) => {
                return Err(Error::ModeError("block split is only valid for hybrid designs".into()))
            }
            (_, None) => None,
        };
        let design = Self { matrix, mode, split, row_labels: None };
        design.validate_structure()?;
        Ok(design)
    }

    /// Continuous design from an arbitrary full-row-rank matrix.
    pub fn continuous(matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(matrix, DesignMode::Continuous, None)
    }

    /// Selection design reading the given coordinates (1-based, distinct).
    pub fn selection(indices: &[usize], n: usize) -> Result<Self> {
        let matrix = selection_matrix(indices, n)?;
        Self::new(matrix, DesignMode::Discrete, None)
    }

    /// Hybrid design: `continuous_block` rows stacked over selection rows for
    /// `indices` (1-based).
    pub fn hybrid(continuous_block: DMatrix<f64>, indices: &[usize], n: usize) -> Result<Self> {
        let mc = continuous_block.nrows();
        let md = indices.len();
        if continuous_block.ncols() != n {
            return Err(Error::ShapeError(format!(
                "continuous block has {} columns, expected {n}",
                continuous_block.ncols()
            )));
        }
        let sel = selection_matrix(indices, n)?;
        let mut matrix = DMatrix::zeros(mc + md, n);
        matrix.view_mut((0, 0), (mc, n)).copy_from(&continuous_block);
        matrix.view_mut((mc, 0), (md, n)).copy_from(&sel);
        Self::new(matrix, DesignMode::Hybrid, Some((mc, md)))
    }

    fn validate_structure(&self) -> Result<()> {
        match self.mode {
            DesignMode::Continuous => Ok(()),
            DesignMode::Discrete => {
                selection_indices(&self.matrix).map(|_| ()).ok_or_else(|| {
                    Error::ModeError("discrete design rows must be distinct canonical unit vectors".into())
                })
            }
            DesignMode::Hybrid => {
                let (mc, md) = self.split.expect("validated in new");
                let n = self.matrix.ncols();
                let hc = self.matrix.view((0, 0), (mc, n));
                let gram = &hc * hc.transpose();
                if (gram - DMatrix::identity(mc, mc)).norm() > ORTHO_TOL {
                    return Err(Error::ModeError("hybrid continuous block is not orthonormal".into()));
                }
                let hd = self.matrix.view((mc, 0), (md, n)).into_owned();
                selection_indices(&hd).map(|_| ()).ok_or_else(|| {
                    Error::ModeError("hybrid discrete block rows must be distinct canonical unit vectors".into())
                })
            }
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn mode(&self) -> DesignMode {
        self.mode
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn split(&self) -> Option<(usize, usize)> {
        self.split
    }

    pub fn row_labels(&self) -> Option<&[String]> {
        self.row_labels.as_deref()
    }

    pub fn with_row_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.rows() {
            return Err(Error::ShapeError(format!(
                "{} row labels for {} rows",
                labels.len(),
                self.rows()
            )));
        }
        self.row_labels = Some(labels);
        Ok(self)
    }

    /// 1-based coordinates read by exact selection rows (all rows for
    /// discrete designs, the discrete block for hybrid ones).
    pub fn measured_coordinates(&self) -> Vec<usize> {
        match self.mode {
            DesignMode::Continuous => Vec::new(),
            DesignMode::Discrete => selection_indices(&self.matrix).unwrap_or_default(),
            DesignMode::Hybrid => {
                let (mc, md) = self.split.expect("hybrid always has a split");
                let hd = self.matrix.view((mc, 0), (md, self.matrix.ncols())).into_owned();
                selection_indices(&hd).unwrap_or_default()
            }
        }
    }

    /// Frobenius distance of `H H'` from the identity.
    pub fn orthonormality_violation(&self) -> f64 {
        let m = self.rows();
        (&self.matrix * self.matrix.transpose() - DMatrix::identity(m, m)).norm()
    }
}

/// Build an m x n selection matrix from 1-based coordinate indices.
pub fn selection_matrix(indices: &[usize], n: usize) -> Result<DMatrix<f64>> {
    let m = indices.len();
    if m == 0 || m > n {
        return Err(Error::ShapeError(format!("need 1 <= m <= n selection rows, got m = {m}, n = {n}")));
    }
    let mut matrix = DMatrix::zeros(m, n);
    for (row, &idx) in indices.iter().enumerate() {
        if idx == 0 || idx > n {
            return Err(Error::ShapeError(format!("selection index {idx} out of range 1..={n}")));
        }
        if indices[..row].contains(&idx) {
            return Err(Error::InvalidData(format!("duplicate selection index {idx}")));
        }
        matrix[(row, idx - 1)] = 1.0;
    }
    Ok(matrix)
}

/// If every row of `h` is exactly a canonical unit vector and the selected
/// columns are distinct, return the 1-based indices in row order.
pub fn selection_indices(h: &DMatrix<f64>) -> Option<Vec<usize>> {
    let (m, n) = h.shape();
    let mut indices = Vec::with_capacity(m);
    for row in 0..m {
        let mut hit = None;
        for col in 0..n {
            let v = h[(row, col)];
            if v == 0.0 {
                continue;
            }
            if v != 1.0 || hit.is_some() {
                return None;
            }
            hit = Some(col + 1);
        }
        let idx = hit?;
        if indices.contains(&idx) {
            return None;
        }
        indices.push(idx);
    }
    Some(indices)
}

fn check_shapes(prior: &PriorModel, h: &DMatrix<f64>, noise: &NoiseModel) -> Result<()> {
    if h.ncols() != prior.dims() {
        return Err(Error::ShapeError(format!(
            "design has {} columns but the prior has {} dimensions",
            h.ncols(),
            prior.dims()
        )));
    }
    if noise.dim() != h.nrows() {
        return Err(Error::ShapeError(format!(
            "noise covariance is {}x{} but the design has {} rows",
            noise.dim(),
            noise.dim(),
            h.nrows()
        )));
    }
    Ok(())
}

/// Innovation matrix `H P_o H' + R`, factored for reuse. Fails when the
/// innovation is numerically singular, e.g. a noise-free row in the null
/// space of the prior.
pub(crate) struct Innovation {
    /// `H P_o`, kept for the gain computation.
    pub(crate) h_po: DMatrix<f64>,
    pub(crate) chol: Cholesky<f64, nalgebra::Dyn>,
}

impl Innovation {
    pub(crate) fn new(prior: &PriorModel, h: &DMatrix<f64>, noise: &NoiseModel) -> Result<Self> {
        check_shapes(prior, h, noise)?;
        let h_po = h * prior.cov();
        let mut s = &h_po * h.transpose() + noise.cov();
        s = (&s + s.transpose()) * 0.5;
        let eigs = s.clone().symmetric_eigen().eigenvalues;
        let (mut smin, mut smax) = (f64::INFINITY, f64::NEG_INFINITY);
        for &e in eigs.iter() {
            smin = smin.min(e);
            smax = smax.max(e);
        }
        if smin <= INNOVATION_COND_TOL * smax.max(f64::MIN_POSITIVE) {
            return Err(Error::DegenerateDesign(format!(
                "innovation matrix is singular (eig range [{smin:.3e}, {smax:.3e}])"
            )));
        }
        let chol = Cholesky::new(s).ok_or_else(|| {
            Error::DegenerateDesign("innovation matrix is not positive definite".into())
        })?;
        Ok(Self { h_po, chol })
    }

    /// `P_o H' (H P_o H' + R)^-1`, the minimum-variance gain.
    pub(crate) fn gain(&self) -> DMatrix<f64> {
        self.chol.solve(&self.h_po).transpose()
    }
}

/// A posteriori covariance `P_p = P_o - P_o H' (H P_o H' + R)^-1 H P_o`.
pub fn posterior_covariance(
    prior: &PriorModel,
    design: &MeasurementDesign,
    noise: &NoiseModel,
) -> Result<DMatrix<f64>> {
    posterior_covariance_raw(prior, design.matrix(), noise)
}

/// [`posterior_covariance`] on a raw measurement matrix; the solvers call
/// this on flow iterates that are not (yet) valid designs.
pub fn posterior_covariance_raw(
    prior: &PriorModel,
    h: &DMatrix<f64>,
    noise: &NoiseModel,
) -> Result<DMatrix<f64>> {
    let inn = Innovation::new(prior, h, noise)?;
    let p_p = prior.cov() - inn.gain() * &inn.h_po;
    Ok((&p_p + p_p.transpose()) * 0.5)
}

/// Squared Frobenius norm of the a posteriori covariance; the cost every
/// design solver minimizes.
pub fn v1_cost(prior: &PriorModel, design: &MeasurementDesign, noise: &NoiseModel) -> Result<f64> {
    Ok(posterior_covariance(prior, design, noise)?.norm_squared())
}

/// [`v1_cost`] on a raw measurement matrix.
pub fn v1_cost_raw(prior: &PriorModel, h: &DMatrix<f64>, noise: &NoiseModel) -> Result<f64> {
    Ok(posterior_covariance_raw(prior, h, noise)?.norm_squared())
}

/// Precomputed minimum-variance reconstructor for a fixed design.
#[derive(Debug, Clone)]
pub struct Reconstructor {
    mean: DVector<f64>,
    h_mean: DVector<f64>,
    gain: DMatrix<f64>,
}

impl Reconstructor {
    pub fn new(prior: &PriorModel, design: &MeasurementDesign, noise: &NoiseModel) -> Result<Self> {
        let inn = Innovation::new(prior, design.matrix(), noise)?;
        Ok(Self {
            mean: prior.mean().clone(),
            h_mean: design.matrix() * prior.mean(),
            gain: inn.gain(),
        })
    }

    /// `x_hat = mu - K (H mu - y)` for one measurement vector.
    pub fn reconstruct(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.h_mean.len() {
            return Err(Error::ShapeError(format!(
                "measurement has length {}, expected {}",
                y.len(),
                self.h_mean.len()
            )));
        }
        Ok(&self.mean - &self.gain * (&self.h_mean - y))
    }
}

/// Minimum-variance pose reconstruction in the covariance (Woodbury) form,
/// which stays well conditioned as the noise tends to zero.
pub fn mve_reconstruct(
    y: &DVector<f64>,
    design: &MeasurementDesign,
    noise: &NoiseModel,
    prior: &PriorModel,
) -> Result<DVector<f64>> {
    Reconstructor::new(prior, design, noise)?.reconstruct(y)
}

/// Information-form reconstruction
/// `x_hat = (P_o^-1 + H' R^-1 H)^-1 (H' R^-1 y + P_o^-1 mu)`.
///
/// Requires SPD noise and inverts the prior (with the clamped inverse), so it
/// is numerically fragile for small `R`; it is retained as an independent
/// cross-check of [`mve_reconstruct`].
pub fn mve_reconstruct_information_form(
    y: &DVector<f64>,
    design: &MeasurementDesign,
    noise: &NoiseModel,
    prior: &PriorModel,
) -> Result<DVector<f64>> {
    check_shapes(prior, design.matrix(), noise)?;
    if y.len() != design.rows() {
        return Err(Error::ShapeError(format!(
            "measurement has length {}, expected {}",
            y.len(),
            design.rows()
        )));
    }
    if !noise.is_spd() {
        return Err(Error::SingularNoise);
    }
    let r_inv = Cholesky::new(noise.cov().clone())
        .ok_or(Error::SingularNoise)?
        .inverse();
    let p_inv = prior.inverse_clamped();
    let h = design.matrix();
    let info = &p_inv + h.transpose() * &r_inv * h;
    let chol = Cholesky::new(info.clone())
        .ok_or_else(|| Error::DegenerateDesign("information matrix is not positive definite".into()))?;
    Ok(chol.solve(&(h.transpose() * &r_inv * y + &p_inv * prior.mean())))
}

/// Information-form posterior covariance `(P_o^-1 + H' R^-1 H)^-1`; the
/// cross-check counterpart of [`posterior_covariance`].
pub fn posterior_covariance_information_form(
    prior: &PriorModel,
    design: &MeasurementDesign,
    noise: &NoiseModel,
) -> Result<DMatrix<f64>> {
    check_shapes(prior, design.matrix(), noise)?;
    if !noise.is_spd() {
        return Err(Error::SingularNoise);
    }
    let r_inv = Cholesky::new(noise.cov().clone())
        .ok_or(Error::SingularNoise)?
        .inverse();
    let h = design.matrix();
    let info = prior.inverse_clamped() + h.transpose() * &r_inv * h;
    let chol = Cholesky::new(info)
        .ok_or_else(|| Error::DegenerateDesign("information matrix is not positive definite".into()))?;
    let p_p = chol.inverse();
    Ok((&p_p + p_p.transpose()) * 0.5)
}

/// Simulate one glove reading `y = H x + v` with i.i.d. Gaussian noise of the
/// given standard deviation, drawn from the supplied generator.
pub fn measure_with_rng<R: Rng + ?Sized>(
    x: &DVector<f64>,
    design: &MeasurementDesign,
    noise_std: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if x.len() != design.cols() {
        return Err(Error::ShapeError(format!(
            "configuration has length {}, expected {}",
            x.len(),
            design.cols()
        )));
    }
    if noise_std < 0.0 {
        return Err(Error::InvalidData(format!("negative noise std {noise_std}")));
    }
    let mut y = design.matrix() * x;
    if noise_std > 0.0 {
        for v in y.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v += noise_std * e;
        }
    }
    Ok(y)
}

/// Seeded convenience wrapper around [`measure_with_rng`].
pub fn measure(
    x: &DVector<f64>,
    design: &MeasurementDesign,
    noise_std: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    measure_with_rng(x, design, noise_std, &mut rng)
}
