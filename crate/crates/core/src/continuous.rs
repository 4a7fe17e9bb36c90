//! Continuous sensing design: each sensor reads an arbitrary linear
//! combination of coordinates.
//!
//! Closed forms exist for both regimes. Without noise the optimal rows are
//! the first m principal components of the prior and the optimal cost is the
//! tail sum of squared eigenvalues. With SPD noise the classical candidate
//! pairs the i-th prior component with the (m-i+1)-th noise eigenvector. The
//! projected gradient flow handles everything else and is the building block
//! reused by the discrete and hybrid solvers.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};
use crate::estimator::{
    posterior_covariance_raw, v1_cost_raw, Innovation, MeasurementDesign, NoiseModel, RANK_TOL,
};
use crate::flow::{
    descend, multi_start, orthonormality_violation, orthonormalize_rows, random_orthonormal,
    DesignResult, FlowOptions, FlowProblem,
};
use crate::prior::PriorModel;

/// A continuous design together with its cost diagnostics.
#[derive(Debug, Clone)]
pub struct ContinuousSolution {
    pub design: MeasurementDesign,
    /// Cost of the returned design, evaluated through the posterior.
    pub v1_achieved: f64,
    /// Tail sum of squared prior eigenvalues; populated when the noiseless
    /// closed form applies.
    pub v1_closed_form: Option<f64>,
    /// Optimal value of the linear (trace) variant of the cost under SPD
    /// noise. Reported as a diagnostic; it is a different functional and is
    /// not comparable to `v1_achieved`.
    pub trace_cost_value: Option<f64>,
    /// Frobenius distance between the achieved rank-m fit of the prior and
    /// its principal-component truncation. Zero exactly at the noiseless
    /// optimum; strictly positive under noise.
    pub residual: f64,
    /// Solver diagnostics when the design came from the gradient flow.
    pub flow: Option<DesignResult>,
}

/// Gradient of the design cost with respect to the measurement matrix:
/// `grad V1 = -4 [P_p^2 P_o H' S^-1]'` with `S = H P_o H' + R`. The descent
/// direction is its negation.
pub fn v1_gradient(
    prior: &PriorModel,
    design: &MeasurementDesign,
    noise: &NoiseModel,
) -> Result<DMatrix<f64>> {
    v1_gradient_raw(prior, design.matrix(), noise)
}

/// [`v1_gradient`] on a raw measurement matrix.
pub fn v1_gradient_raw(prior: &PriorModel, h: &DMatrix<f64>, noise: &NoiseModel) -> Result<DMatrix<f64>> {
    let inn = Innovation::new(prior, h, noise)?;
    let p_p = prior.cov() - inn.gain() * &inn.h_po;
    let p_p = (&p_p + p_p.transpose()) * 0.5;
    // G = P_p^2 P_o H'  (n x m); grad = -4 (S^-1 G')' = -4 S^-1 G' row-major.
    let g = &p_p * &p_p * inn.h_po.transpose();
    Ok(inn.chol.solve(&g.transpose()) * -4.0)
}

/// Project a gradient onto the tangent space of `{H : H H' = I_m}` at `h` by
/// removing the component in the row space of `h`:
/// `G (I - H'(H H')^-1 H)`.
pub fn project_to_tangent(h: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if g.shape() != h.shape() {
        return Err(Error::ShapeError(format!(
            "gradient is {}x{} but the design is {}x{}",
            g.nrows(),
            g.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    let gram = h * h.transpose();
    let eigs = gram.clone().symmetric_eigen().eigenvalues;
    let (mut emin, mut emax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &e in eigs.iter() {
        emin = emin.min(e);
        emax = emax.max(e);
    }
    if emin <= RANK_TOL * RANK_TOL * emax.max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateDesign("cannot project onto the tangent of a rank-deficient design".into()));
    }
    let chol = Cholesky::new(gram)
        .ok_or_else(|| Error::DegenerateDesign("row Gramian is not positive definite".into()))?;
    // D = G - (G H') (H H')^-1 H
    let coeff = chol.solve(&(g * h.transpose()).transpose()).transpose();
    Ok(g - coeff * h)
}

fn check_m(prior: &PriorModel, m: usize) -> Result<()> {
    let n = prior.dims();
    if m == 0 || m >= n {
        return Err(Error::ShapeError(format!("need 1 <= m < n, got m = {m}, n = {n}")));
    }
    Ok(())
}

/// Distance between the achieved rank-m fit `P_o - P_p` and the
/// principal-component truncation of the prior.
fn truncation_residual(prior: &PriorModel, h: &DMatrix<f64>, noise: &NoiseModel) -> Result<f64> {
    let m = h.nrows();
    let p_p = posterior_covariance_raw(prior, h, noise)?;
    let fit = prior.cov() - p_p;
    let mut truncation = DMatrix::zeros(prior.dims(), prior.dims());
    for i in 0..m.min(prior.dims()) {
        let u = prior.basis().column(i);
        truncation += prior.spectrum()[i] * &u * u.transpose();
    }
    Ok((fit - truncation).norm())
}

/// Noise-free optimum: rows are the first m principal components of the
/// prior and the cost is the tail sum of squared eigenvalues.
pub fn optimal_continuous_noiseless(prior: &PriorModel, m: usize) -> Result<ContinuousSolution> {
    check_m(prior, m)?;
    if prior.spectrum()[m - 1] <= 0.0 {
        return Err(Error::RankDeficientPrior { m, effective_rank: prior.effective_rank() });
    }
    let h = prior.basis().columns(0, m).transpose().into_owned();
    let noise = NoiseModel::zero(m);
    let v1_achieved = v1_cost_raw(prior, &h, &noise)?;
    let residual = truncation_residual(prior, &h, &noise)?;
    let design = MeasurementDesign::continuous(h)?;
    Ok(ContinuousSolution {
        design,
        v1_achieved,
        v1_closed_form: Some(prior.tail_energy(m)),
        trace_cost_value: None,
        residual,
        flow: None,
    })
}

/// Closed-form candidate under SPD noise: the i-th prior component paired
/// with the (m-i+1)-th noise eigenvector,
/// `H = sum_i u_{m-i+1}(R) u_i(P_o)'`. Orthonormal by construction.
pub fn optimal_continuous_noisy(prior: &PriorModel, noise: &NoiseModel, m: usize) -> Result<ContinuousSolution> {
    check_m(prior, m)?;
    if noise.dim() != m {
        return Err(Error::ShapeError(format!("noise covariance is {}x{}, expected {m}x{m}", noise.dim(), noise.dim())));
    }
    if !noise.is_spd() {
        return Err(Error::SingularNoise);
    }
    let n = prior.dims();
    let mut h = DMatrix::zeros(m, n);
    for i in 0..m {
        let u_noise = noise.basis().column(m - i - 1);
        let u_prior = prior.basis().column(i);
        h += u_noise * u_prior.transpose();
    }
    let v1_achieved = v1_cost_raw(prior, &h, noise)?;
    let residual = truncation_residual(prior, &h, noise)?;
    let trace_cost = (0..m)
        .map(|i| {
            let sp = prior.spectrum()[i];
            let sr = noise.spectrum()[m - i - 1];
            sp / (1.0 + sp / sr)
        })
        .sum::<f64>()
        + prior.spectrum().iter().skip(m).sum::<f64>();
    let design = MeasurementDesign::continuous(h)?;
    Ok(ContinuousSolution {
        design,
        v1_achieved,
        v1_closed_form: None,
        trace_cost_value: Some(trace_cost),
        residual,
        flow: None,
    })
}

/// The cost and its projected descent direction on the set of
/// orthonormal-row matrices (or unconstrained for noise-free problems).
pub(crate) struct ContinuousFlow<'a> {
    pub prior: &'a PriorModel,
    pub noise: &'a NoiseModel,
    pub constrained: bool,
}

impl FlowProblem for ContinuousFlow<'_> {
    fn objective(&self, h: &DMatrix<f64>, _k: f64) -> Result<f64> {
        v1_cost_raw(self.prior, h, self.noise)
    }

    fn direction(&self, h: &DMatrix<f64>, _k: f64) -> Result<DMatrix<f64>> {
        let descent = -v1_gradient_raw(self.prior, h, self.noise)?;
        if self.constrained {
            project_to_tangent(h, &descent)
        } else {
            Ok(descent)
        }
    }

    fn retract(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        if self.constrained {
            orthonormalize_rows(h)
        } else {
            h.clone()
        }
    }

    fn constraint_violation(&self, h: &DMatrix<f64>) -> f64 {
        if self.constrained {
            orthonormality_violation(h)
        } else {
            0.0
        }
    }
}

/// Multi-start projected gradient flow for the continuous design.
pub fn design_continuous_flow(
    prior: &PriorModel,
    noise: &NoiseModel,
    m: usize,
    opts: &FlowOptions,
) -> Result<ContinuousSolution> {
    design_continuous_flow_with(prior, noise, m, opts, true)
}

/// As [`design_continuous_flow`], with the orthonormality constraint
/// optional. The unconstrained variant is only meaningful without noise: the
/// noisy cost has no finite unconstrained minimizer.
pub fn design_continuous_flow_with(
    prior: &PriorModel,
    noise: &NoiseModel,
    m: usize,
    opts: &FlowOptions,
    constrained: bool,
) -> Result<ContinuousSolution> {
    check_m(prior, m)?;
    if noise.dim() != m {
        return Err(Error::ShapeError(format!("noise covariance is {}x{}, expected {m}x{m}", noise.dim(), noise.dim())));
    }
    if !constrained && !noise.is_zero() {
        return Err(Error::InvalidOptions(
            "the unconstrained flow diverges under noise; keep the orthonormality constraint".into(),
        ));
    }
    let n = prior.dims();
    let problem = ContinuousFlow { prior, noise, constrained };
    let result = multi_start(opts, |_index, seed| {
        let h0 = random_orthonormal(m, n, seed)?;
        let outcome = descend(&problem, h0, opts)?;
        let v1 = v1_cost_raw(prior, &outcome.h, noise)?;
        let violation = problem.constraint_violation(&outcome.h);
        let design = MeasurementDesign::continuous(outcome.h)?;
        Ok(DesignResult {
            design,
            v1,
            v2: None,
            iterations: outcome.iterations,
            start_index: 0,
            k_final: outcome.k_final,
            constraint_violation: violation,
            rounding_residual: None,
            termination: outcome.termination,
            trajectory: outcome.trajectory,
        })
    })?;

    let residual = truncation_residual(prior, result.design.matrix(), noise)?;
    Ok(ContinuousSolution {
        design: result.design.clone(),
        v1_achieved: result.v1,
        v1_closed_form: noise.is_zero().then(|| prior.tail_energy(m)),
        trace_cost_value: None,
        residual,
        flow: Some(result),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::v1_cost;
    use crate::synth;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag_prior(values: &[f64]) -> PriorModel {
        PriorModel::from_covariance(
            DVector::zeros(values.len()),
            DMatrix::from_diagonal(&DVector::from_row_slice(values)),
        )
        .unwrap()
    }

    #[test]
    fn noiseless_diagonal_picks_the_top_component() {
        let prior = diag_prior(&[4.0, 1.0]);
        let sol = optimal_continuous_noiseless(&prior, 1).unwrap();
        assert_eq!(sol.design.matrix(), &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        assert_relative_eq!(sol.v1_achieved, 1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.v1_closed_form.unwrap(), 1.0);
        assert!(sol.residual <= 1e-10);
    }

    #[test]
    fn noiseless_identity_prior_under_tie_break() {
        let n = 5;
        let prior = PriorModel::from_covariance(DVector::zeros(n), DMatrix::identity(n, n)).unwrap();
        for m in 1..n {
            let sol = optimal_continuous_noiseless(&prior, m).unwrap();
            assert_relative_eq!(sol.v1_achieved, (n - m) as f64, epsilon = 1e-10);
            let expected = DMatrix::<f64>::identity(n, n).rows(0, m).into_owned();
            assert_relative_eq!(sol.design.matrix(), &expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn noiseless_optimum_beats_random_row_perturbations() {
        let prior = synth::random_prior(15, 42);
        let m = 3;
        let sol = optimal_continuous_noiseless(&prior, m).unwrap();
        let tail = prior.tail_energy(m);
        assert_relative_eq!(sol.v1_achieved, tail, max_relative = 1e-9);
        let noise = NoiseModel::zero(m);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let mut h = sol.design.matrix().clone();
            let row = rng.random_range(0..m);
            let mut delta = DVector::from_fn(15, |_, _| rng.random::<f64>() - 0.5);
            delta /= delta.norm();
            let scale = 10f64.powf(rng.random_range(-3.0..0.0));
            for j in 0..15 {
                h[(row, j)] += scale * delta[j];
            }
            if let Ok(v1) = v1_cost_raw(&prior, &h, &noise) {
                assert!(v1 >= sol.v1_achieved - 1e-9 * sol.v1_achieved.max(1.0));
            }
        }
    }

    #[test]
    fn rank_deficient_prior_is_rejected() {
        let prior = diag_prior(&[2.0, 1.0, 0.0, 0.0]);
        let err = optimal_continuous_noiseless(&prior, 3).unwrap_err();
        assert!(matches!(err, Error::RankDeficientPrior { m: 3, .. }));
    }

    #[test]
    fn isotropic_noise_keeps_principal_component_rows() {
        let prior = synth::random_prior(6, 5);
        let m = 3;
        let noise = NoiseModel::isotropic(m, 0.8);
        let sol = optimal_continuous_noisy(&prior, &noise, m).unwrap();
        assert!(sol.design.orthonormality_violation() <= 1e-10);
        // Rows are the first m principal components, in some order.
        for row in 0..m {
            let r = sol.design.matrix().row(row).transpose();
            let best = (0..m)
                .map(|i| (prior.basis().column(i).dot(&r)).abs())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(best > 1.0 - 1e-10, "row {row} is not a principal component (overlap {best})");
        }
        // Same V1 as measuring the leading components directly.
        let direct = prior.basis().columns(0, m).transpose().into_owned();
        let v_direct = v1_cost_raw(&prior, &direct, &noise).unwrap();
        assert_relative_eq!(sol.v1_achieved, v_direct, max_relative = 1e-10);
    }

    #[test]
    fn two_dof_noisy_closed_form_matches_grid_search() {
        let r: f64 = 0.7;
        let prior = diag_prior(&[4.0, 1.0]);
        let noise = NoiseModel::isotropic(1, r.sqrt());
        let sol = optimal_continuous_noisy(&prior, &noise, 1).unwrap();
        assert_eq!(sol.design.matrix(), &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let expected = (4.0 * r / (4.0 + r)).powi(2) + 1.0;
        assert_relative_eq!(sol.v1_achieved, expected, max_relative = 1e-12);
        let mut grid_best = f64::INFINITY;
        for step in 0..=2000 {
            let theta = std::f64::consts::PI * step as f64 / 2000.0;
            let h = DMatrix::from_row_slice(1, 2, &[theta.cos(), theta.sin()]);
            grid_best = grid_best.min(v1_cost_raw(&prior, &h, &noise).unwrap());
        }
        assert!(sol.v1_achieved <= grid_best + 1e-6, "{} vs grid {grid_best}", sol.v1_achieved);
    }

    #[test]
    fn vanishing_noise_recovers_the_noiseless_optimum() {
        let prior = synth::random_prior(5, 23);
        let m = 2;
        let noise = NoiseModel::isotropic(m, 1e-9f64.sqrt());
        let sol = optimal_continuous_noisy(&prior, &noise, m).unwrap();
        let noiseless = prior.tail_energy(m);
        assert!((sol.v1_achieved - noiseless).abs() <= 1e-6 * noiseless.max(1.0));
    }

    #[test]
    fn singular_noise_is_rejected() {
        let prior = synth::random_prior(4, 1);
        let err = optimal_continuous_noisy(&prior, &NoiseModel::zero(2), 2).unwrap_err();
        assert_eq!(err, Error::SingularNoise);
    }

    #[test]
    fn scalar_gradient_matches_the_closed_form() {
        let prior = diag_prior(&[1.0]);
        let noise = NoiseModel::isotropic(1, 1.0);
        for &h in &[0.3, -0.8, 1.7] {
            let grad = v1_gradient_raw(&prior, &DMatrix::from_element(1, 1, h), &noise).unwrap();
            let expected = -4.0 * h / (h * h + 1.0).powi(3);
            assert_relative_eq!(grad[(0, 0)], expected, epsilon = 1e-12);
        }
    }

    /// Central finite differences with a relative step of 1e-6 per entry.
    fn fd_gradient(prior: &PriorModel, h: &DMatrix<f64>, noise: &NoiseModel) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(h.nrows(), h.ncols());
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                let delta = 1e-6 * (1.0 + h[(i, j)].abs());
                let mut plus = h.clone();
                plus[(i, j)] += delta;
                let mut minus = h.clone();
                minus[(i, j)] -= delta;
                let fp = v1_cost_raw(prior, &plus, noise).unwrap();
                let fm = v1_cost_raw(prior, &minus, noise).unwrap();
                g[(i, j)] = (fp - fm) / (2.0 * delta);
            }
        }
        g
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10u64 {
            let n = 3 + (seed as usize % 6);
            let m = 1 + (seed as usize % n.min(4));
            if m >= n {
                continue;
            }
            let prior = synth::random_prior(n, seed);
            let h = synth::random_full_rank(m, n, seed ^ 0xfeed);
            let noise = if seed % 2 == 0 {
                NoiseModel::from_covariance(synth::random_spd(m, seed ^ 0x77)).unwrap()
            } else {
                NoiseModel::zero(m)
            };
            let analytic = v1_gradient_raw(&prior, &h, &noise).unwrap();
            let fd = fd_gradient(&prior, &h, &noise);
            let rel = (&analytic - &fd).norm() / analytic.norm().max(1e-12);
            assert!(rel <= 1e-5, "seed {seed}: fd mismatch {rel}");
        }
    }

    #[test]
    fn projected_gradient_vanishes_at_the_noiseless_optimum() {
        let prior = synth::random_prior(8, 3);
        let m = 3;
        let sol = optimal_continuous_noiseless(&prior, m).unwrap();
        let grad = v1_gradient(&prior, &sol.design, &NoiseModel::zero(m)).unwrap();
        let projected = project_to_tangent(sol.design.matrix(), &grad).unwrap();
        assert!(projected.norm() <= 1e-8 * (1.0 + sol.v1_achieved));
    }

    #[test]
    fn tangent_projection_annihilates_row_space_directions() {
        let h = random_orthonormal(3, 7, 5).unwrap();
        let a = synth::random_spd(3, 9);
        let g = &a * &h;
        let projected = project_to_tangent(&h, &g).unwrap();
        assert!(projected.norm() <= 1e-10, "row-space direction survived: {}", projected.norm());
    }

    #[test]
    fn tangent_projection_keeps_orthogonal_directions() {
        let h = DMatrix::<f64>::identity(4, 4).rows(0, 2).into_owned();
        // Rows supported on coordinates 3 and 4 only: orthogonal to rows of h.
        let mut g = DMatrix::zeros(2, 4);
        g[(0, 2)] = 1.3;
        g[(1, 3)] = -0.4;
        let projected = project_to_tangent(&h, &g).unwrap();
        assert_relative_eq!(&projected, &g, epsilon = 1e-12);
    }

    #[test]
    fn tangent_projection_is_idempotent_and_first_order_feasible() {
        for seed in 0..10u64 {
            let h = random_orthonormal(3, 8, seed).unwrap();
            let g = synth::gaussian_matrix(3, 8, seed ^ 0xaa);
            let once = project_to_tangent(&h, &g).unwrap();
            let twice = project_to_tangent(&h, &once).unwrap();
            assert!((&twice - &once).norm() <= 1e-12 * once.norm().max(1.0));
            let sym = &h * once.transpose() + &once * h.transpose();
            assert!(sym.norm() <= 1e-10);
        }
    }

    #[test]
    fn flow_reaches_the_noiseless_closed_form() {
        let prior = synth::random_prior(4, 77);
        let noise = NoiseModel::zero(2);
        let opts = FlowOptions { starts: 10, seed: 5, record_trajectory: true, ..FlowOptions::for_prior(&prior, 5) };
        let sol = design_continuous_flow(&prior, &noise, 2, &opts).unwrap();
        let oracle = prior.tail_energy(2);
        assert!((sol.v1_achieved - oracle).abs() <= 1e-6 * oracle, "{} vs {oracle}", sol.v1_achieved);
        let flow = sol.flow.unwrap();
        for point in flow.trajectory.as_deref().unwrap() {
            assert!(point.violation <= 1e-8);
        }
    }

    #[test]
    fn flow_started_at_the_optimum_stays_there() {
        let prior = synth::random_prior(6, 9);
        let m = 2;
        let sol = optimal_continuous_noiseless(&prior, m).unwrap();
        let noise = NoiseModel::zero(m);
        let problem = ContinuousFlow { prior: &prior, noise: &noise, constrained: true };
        let opts = FlowOptions::for_prior(&prior, 0);
        let outcome = descend(&problem, sol.design.matrix().clone(), &opts).unwrap();
        assert!(outcome.iterations <= 5, "took {} iterations", outcome.iterations);
        assert!((outcome.objective - sol.v1_achieved).abs() <= 1e-10);
    }

    #[test]
    fn flow_dominates_the_noisy_closed_form_candidate() {
        let prior = synth::random_prior(6, 31);
        let m = 2;
        let noise = NoiseModel::from_covariance(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]))).unwrap();
        let candidate = optimal_continuous_noisy(&prior, &noise, m).unwrap();
        let opts = FlowOptions { starts: 20, seed: 11, ..FlowOptions::for_prior(&prior, 11) };
        let flowed = design_continuous_flow(&prior, &noise, m, &opts).unwrap();
        assert!(
            flowed.v1_achieved <= candidate.v1_achieved + 1e-8,
            "flow {} vs candidate {}",
            flowed.v1_achieved,
            candidate.v1_achieved
        );
    }

    #[test]
    fn noise_free_cost_is_invariant_to_row_basis_changes() {
        let prior = synth::random_prior(6, 13);
        let h = synth::random_full_rank(3, 6, 17);
        let noise = NoiseModel::zero(3);
        let base = v1_cost_raw(&prior, &h, &noise).unwrap();
        for seed in 0..5u64 {
            let mixer = synth::random_full_rank(3, 3, seed ^ 0x51);
            let mixed = &mixer * &h;
            let v = v1_cost_raw(&prior, &mixed, &noise).unwrap();
            assert_relative_eq!(v, base, max_relative = 1e-8);
        }
    }

    #[test]
    fn unconstrained_flow_rejects_noise() {
        let prior = synth::random_prior(4, 2);
        let noise = NoiseModel::isotropic(2, 1.0);
        let err =
            design_continuous_flow_with(&prior, &noise, 2, &FlowOptions::for_prior(&prior, 1), false).unwrap_err();
        assert!(matches!(err, Error::InvalidOptions(_)));
    }

    #[test]
    fn continuous_design_cost_matches_design_level_api() {
        let prior = synth::random_prior(5, 3);
        let sol = optimal_continuous_noiseless(&prior, 2).unwrap();
        let via_design = v1_cost(&prior, &sol.design, &NoiseModel::zero(2)).unwrap();
        assert_relative_eq!(via_design, sol.v1_achieved, epsilon = 1e-14);
    }
}
