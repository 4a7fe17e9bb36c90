//! Discrete sensing design: each sensor reads exactly one coordinate, so a
//! design is a choice of m distinct coordinates.
//!
//! Small problems are solved exactly by enumerating all C(n, m) subsets. The
//! flow solver relaxes the combinatorial set to orthonormal-row matrices and
//! blends the design-cost descent with a penalty flow whose fixed points are
//! selection matrices; the blend weight grows on a schedule until the
//! penalty dominates, after which the iterate is rounded to the nearest
//! exact selection.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimator::{v1_cost, v1_cost_raw, MeasurementDesign, NoiseModel};
use crate::continuous::{project_to_tangent, v1_gradient_raw};
use crate::flow::{
    descend, multi_start, orthonormality_violation, orthonormalize_rows, random_orthonormal,
    DesignResult, FlowOptions, FlowProblem, ROUNDING_RESIDUAL_TOL,
};
use crate::prior::PriorModel;

/// Default cap on the number of enumerated subsets.
pub const DEFAULT_SUBSET_BUDGET: u128 = 10_000_000;

/// A selection design: which coordinates to measure.
#[derive(Debug, Clone)]
pub struct SelectionDesign {
    /// 1-based measured coordinates, ascending.
    pub indices: Vec<usize>,
    pub design: MeasurementDesign,
    pub v1: f64,
    /// Solver diagnostics when the selection came from the gradient flow.
    pub flow: Option<DesignResult>,
}

/// Number of m-subsets of n items, saturating above `cap`.
fn binomial_capped(n: usize, m: usize, cap: u128) -> u128 {
    let mut acc: u128 = 1;
    for i in 0..m.min(n - m) {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if acc > cap {
            return u128::MAX;
        }
    }
    acc
}

/// Advance `indices` (0-based, strictly increasing) to the next combination
/// in lexicographic order. Returns false after the last one.
fn next_combination(indices: &mut [usize], n: usize) -> bool {
    let m = indices.len();
    let mut i = m;
    while i > 0 {
        i -= 1;
        if indices[i] < n - m + i {
            indices[i] += 1;
            for j in i + 1..m {
                indices[j] = indices[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Cost of measuring the given 0-based coordinates directly from the
/// covariance blocks, without building the full measurement matrix.
fn v1_of_subset(prior: &PriorModel, noise: &NoiseModel, subset: &[usize]) -> Result<f64> {
    let p_o = prior.cov();
    let n = prior.dims();
    let m = subset.len();
    let mut s = DMatrix::zeros(m, m);
    for (a, &i) in subset.iter().enumerate() {
        for (b, &j) in subset.iter().enumerate() {
            s[(a, b)] = p_o[(i, j)];
        }
    }
    s += noise.cov();
    let eigs = s.clone().symmetric_eigen().eigenvalues;
    let (mut smin, mut smax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &e in eigs.iter() {
        smin = smin.min(e);
        smax = smax.max(e);
    }
    if smin <= crate::estimator::INNOVATION_COND_TOL * smax.max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateDesign("singular innovation for subset".into()));
    }
    let chol = nalgebra::Cholesky::new(s)
        .ok_or_else(|| Error::DegenerateDesign("subset innovation is not positive definite".into()))?;
    let mut b = DMatrix::zeros(n, m);
    for (col, &j) in subset.iter().enumerate() {
        b.set_column(col, &p_o.column(j));
    }
    let p_p = p_o - &b * chol.solve(&b.transpose());
    Ok(p_p.norm_squared())
}

/// Exact discrete optimum by enumeration of all C(n, m) coordinate subsets,
/// under the default budget. Ties go to the lexicographically smallest
/// index set. When a full noise covariance is supplied, sensor i is attached
/// to the i-th selected coordinate in ascending order.
pub fn exhaustive_select(prior: &PriorModel, noise: &NoiseModel, m: usize) -> Result<SelectionDesign> {
    exhaustive_select_with_budget(prior, noise, m, DEFAULT_SUBSET_BUDGET)
}

/// As [`exhaustive_select`] with an explicit subset budget.
pub fn exhaustive_select_with_budget(
    prior: &PriorModel,
    noise: &NoiseModel,
    m: usize,
    budget: u128,
) -> Result<SelectionDesign> {
    let n = prior.dims();
    if m == 0 || m >= n {
        return Err(Error::ShapeError(format!("need 1 <= m < n, got m = {m}, n = {n}")));
    }
    if noise.dim() != m {
        return Err(Error::ShapeError(format!("noise covariance is {}x{}, expected {m}x{m}", noise.dim(), noise.dim())));
    }
    let subsets = binomial_capped(n, m, budget);
    if subsets > budget {
        return Err(Error::CombinatorialBudget { subsets, budget });
    }

    let mut subset: Vec<usize> = (0..m).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        if let Ok(v1) = v1_of_subset(prior, noise, &subset) {
            let better = match &best {
                None => true,
                Some((bv, _)) => v1 < *bv,
            };
            if better {
                best = Some((v1, subset.clone()));
            }
        }
        if !next_combination(&mut subset, n) {
            break;
        }
    }
    let (v1, subset) =
        best.ok_or_else(|| Error::DegenerateDesign("every coordinate subset has a singular innovation".into()))?;
    let indices: Vec<usize> = subset.iter().map(|&i| i + 1).collect();
    let design = MeasurementDesign::selection(&indices, n)?;
    Ok(SelectionDesign { indices, design, v1, flow: None })
}

/// Permutation penalty `V2(H) = (2/3) tr[H'(H - H o H)]`, zero exactly on
/// selection matrices and positive elsewhere on the orthonormal set.
pub fn v2_penalty(h: &DMatrix<f64>) -> f64 {
    let mut sq = 0.0;
    let mut cube = 0.0;
    for &v in h.iter() {
        sq += v * v;
        cube += v * v * v;
    }
    (2.0 / 3.0) * (sq - cube)
}

/// Descent term of the penalty flow, `-H [(H o H)' H - H' (H o H)]`. The
/// bracket is skew-symmetric, so the flow preserves `H H'` in continuous
/// time; its stable fixed points are selection matrices.
pub fn v2_flow_term(h: &DMatrix<f64>) -> DMatrix<f64> {
    let squared = h.map(|v| v * v);
    let b = squared.transpose() * h;
    let bracket = &b - b.transpose();
    -(h * bracket)
}

/// Round each row to the canonical vector of its largest-magnitude column.
/// Column conflicts are resolved greedily by descending peak magnitude, the
/// losers taking their best unclaimed column. Returns the 1-based selected
/// column per row and the Frobenius distance between `h` and the rounding.
pub fn round_to_selection(h: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let (m, n) = h.shape();
    assert!(m <= n, "cannot round {m} rows into {n} columns");
    let mut order: Vec<usize> = (0..m).collect();
    let peak = |row: usize| -> f64 {
        (0..n).map(|j| h[(row, j)].abs()).fold(f64::NEG_INFINITY, f64::max)
    };
    order.sort_by(|&a, &b| peak(b).partial_cmp(&peak(a)).expect("finite entries").then(a.cmp(&b)));

    let mut claimed = vec![false; n];
    let mut assigned = vec![0usize; m];
    for &row in &order {
        let mut best_col = None;
        let mut best_mag = f64::NEG_INFINITY;
        for col in 0..n {
            if claimed[col] {
                continue;
            }
            let mag = h[(row, col)].abs();
            if mag > best_mag {
                best_mag = mag;
                best_col = Some(col);
            }
        }
        let col = best_col.expect("m <= n leaves an unclaimed column");
        claimed[col] = true;
        assigned[row] = col;
    }

    let mut residual_sq = 0.0;
    for row in 0..m {
        for col in 0..n {
            let target = if col == assigned[row] { 1.0 } else { 0.0 };
            let d = target - h[(row, col)];
            residual_sq += d * d;
        }
    }
    (assigned.iter().map(|&c| c + 1).collect(), residual_sq.sqrt())
}

/// Negate any row whose largest-magnitude entry is negative. Row sign flips
/// leave the design cost unchanged (a diagonal change of basis) and move the
/// iterate into the non-negative half where the penalty vanishes.
pub(crate) fn flip_dominant_negative_rows(h: &mut DMatrix<f64>) {
    let (m, n) = h.shape();
    for row in 0..m {
        let mut dom = 0;
        for col in 1..n {
            if h[(row, col)].abs() > h[(row, dom)].abs() {
                dom = col;
            }
        }
        if h[(row, dom)] < 0.0 {
            for col in 0..n {
                h[(row, col)] = -h[(row, col)];
            }
        }
    }
}

/// Blend of the projected design-cost descent and the permutation-penalty
/// flow, weighted by the stage schedule.
struct DiscreteFlow<'a> {
    prior: &'a PriorModel,
    noise: &'a NoiseModel,
}

impl FlowProblem for DiscreteFlow<'_> {
    fn objective(&self, h: &DMatrix<f64>, k: f64) -> Result<f64> {
        let penalty = v2_penalty(h);
        if k >= 1.0 {
            return Ok(penalty);
        }
        Ok((1.0 - k) * v1_cost_raw(self.prior, h, self.noise)? + k * penalty)
    }

    fn direction(&self, h: &DMatrix<f64>, k: f64) -> Result<DMatrix<f64>> {
        let mut direction = v2_flow_term(h) * k;
        if k < 1.0 {
            let descent = -v1_gradient_raw(self.prior, h, self.noise)?;
            direction += project_to_tangent(h, &descent)? * (1.0 - k);
        }
        Ok(direction)
    }

    fn retract(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        orthonormalize_rows(h)
    }

    fn constraint_violation(&self, h: &DMatrix<f64>) -> f64 {
        orthonormality_violation(h)
    }

    fn v1(&self, h: &DMatrix<f64>) -> Option<f64> {
        v1_cost_raw(self.prior, h, self.noise).ok()
    }

    fn on_stage_boundary(&self, h: &mut DMatrix<f64>) {
        flip_dominant_negative_rows(h);
    }
}

/// Multi-start combined flow for the discrete design. Each start is rounded
/// to an exact selection (rejected when the converged iterate is farther
/// than the rounding tolerance) and re-evaluated; the best rounded result
/// wins.
pub fn design_discrete_flow(
    prior: &PriorModel,
    noise: &NoiseModel,
    m: usize,
    opts: &FlowOptions,
) -> Result<SelectionDesign> {
    let n = prior.dims();
    if m == 0 || m >= n {
        return Err(Error::ShapeError(format!("need 1 <= m < n, got m = {m}, n = {n}")));
    }
    if noise.dim() != m {
        return Err(Error::ShapeError(format!("noise covariance is {}x{}, expected {m}x{m}", noise.dim(), noise.dim())));
    }
    let problem = DiscreteFlow { prior, noise };
    let result = multi_start(opts, |_index, seed| {
        let h0 = random_orthonormal(m, n, seed)?;
        let outcome = descend(&problem, h0, opts)?;
        let mut h = outcome.h;
        flip_dominant_negative_rows(&mut h);
        let (mut indices, residual) = round_to_selection(&h);
        if residual > ROUNDING_RESIDUAL_TOL {
            return Err(Error::PermutationNeighborhood { best_residual: residual });
        }
        indices.sort_unstable();
        let design = MeasurementDesign::selection(&indices, n)?;
        let v1 = v1_cost(prior, &design, noise)?;
        Ok(DesignResult {
            design,
            v1,
            v2: Some(v2_penalty(&h)),
            iterations: outcome.iterations,
            start_index: 0,
            k_final: outcome.k_final,
            constraint_violation: 0.0,
            rounding_residual: Some(residual),
            termination: outcome.termination,
            trajectory: outcome.trajectory,
        })
    })?;

    Ok(SelectionDesign {
        indices: result.design.measured_coordinates(),
        design: result.design.clone(),
        v1: result.v1,
        flow: Some(result),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn diag_prior(values: &[f64]) -> PriorModel {
        PriorModel::from_covariance(
            DVector::zeros(values.len()),
            DMatrix::from_diagonal(&DVector::from_row_slice(values)),
        )
        .unwrap()
    }

    #[test]
    fn exhaustive_on_diagonal_prior() {
        let prior = diag_prior(&[1.0, 2.0, 3.0]);
        let one = exhaustive_select(&prior, &NoiseModel::zero(1), 1).unwrap();
        assert_eq!(one.indices, vec![3]);
        assert_relative_eq!(one.v1, 5.0, epsilon = 1e-12);
        let two = exhaustive_select(&prior, &NoiseModel::zero(2), 2).unwrap();
        assert_eq!(two.indices, vec![2, 3]);
        assert_relative_eq!(two.v1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exhaustive_breaks_symmetric_ties_lexicographically() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        let prior = PriorModel::from_covariance(DVector::zeros(2), cov).unwrap();
        let sel = exhaustive_select(&prior, &NoiseModel::zero(1), 1).unwrap();
        assert_eq!(sel.indices, vec![1]);
    }

    #[test]
    fn exhaustive_respects_the_budget() {
        let prior = synth::random_prior(12, 3);
        let err = exhaustive_select_with_budget(&prior, &NoiseModel::zero(4), 4, 100).unwrap_err();
        assert!(matches!(err, Error::CombinatorialBudget { .. }));
    }

    #[test]
    fn exhaustive_matches_design_level_cost() {
        let prior = synth::random_prior(7, 19);
        let noise = NoiseModel::isotropic(2, 0.5);
        let sel = exhaustive_select(&prior, &noise, 2).unwrap();
        let direct = v1_cost(&prior, &sel.design, &noise).unwrap();
        assert_relative_eq!(sel.v1, direct, max_relative = 1e-12);
    }

    #[test]
    fn penalty_is_zero_exactly_on_selection_matrices() {
        let h = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(v2_penalty(&h), 0.0);
        let e1 = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        assert_eq!(v2_penalty(&e1), 0.0);
    }

    #[test]
    fn penalty_of_a_balanced_row() {
        let a = 0.5f64.sqrt();
        let h = DMatrix::from_row_slice(1, 2, &[a, a]);
        let expected = (2.0 / 3.0) * 2.0 * a * (a - 0.5);
        assert_relative_eq!(v2_penalty(&h), expected, epsilon = 1e-12);
        assert_relative_eq!(v2_penalty(&h), 0.19526, epsilon = 1e-5);
    }

    #[test]
    fn penalty_flow_term_vanishes_on_selections() {
        let h = DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(v2_flow_term(&h).norm(), 0.0);
    }

    #[test]
    fn penalty_bracket_is_skew_symmetric() {
        for seed in 0..20u64 {
            let h = synth::gaussian_matrix(3, 6, seed);
            let squared = h.map(|v| v * v);
            let b = squared.transpose() * &h;
            let bracket = &b - b.transpose();
            assert!((&bracket + bracket.transpose()).norm() <= 1e-12 * bracket.norm().max(1.0));
        }
    }

    #[test]
    fn penalty_flow_snaps_a_single_row_to_an_axis() {
        // Start slightly off the balanced ridge: the exactly symmetric row is
        // an unstable fixed point of the penalty dynamics.
        let theta = std::f64::consts::FRAC_PI_4 - 0.02;
        let mut h = DMatrix::from_row_slice(1, 2, &[theta.cos(), theta.sin()]);
        for _ in 0..20_000 {
            let step = v2_flow_term(&h) * 1e-2;
            h += step;
            h = orthonormalize_rows(&h);
        }
        let dist = h.iter().map(|&v| v.min(1.0 - v).abs().min((v - 1.0).abs()).min(v.abs())).fold(0.0, f64::max);
        assert!(dist <= 1e-3, "entries did not reach {{0,1}}: {h}");
        assert!((h[(0, 0)] - 1.0).abs() <= 1e-3, "expected convergence to e1, got {h}");
    }

    #[test]
    fn rounding_example_by_arithmetic() {
        let h = DMatrix::from_row_slice(2, 3, &[0.98, 0.02, 0.0, 0.01, 0.97, -0.02]);
        let (indices, residual) = round_to_selection(&h);
        assert_eq!(indices, vec![1, 2]);
        // ||rounded - h||_F = sqrt(0.02^2+0.02^2+0.01^2+0.03^2+0.02^2) = sqrt(0.0022)
        assert_relative_eq!(residual, 0.0022f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn rounding_a_selection_is_exact() {
        let h = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let (indices, residual) = round_to_selection(&h);
        assert_eq!(indices, vec![3, 1]);
        assert_eq!(residual, 0.0);
    }

    #[test]
    fn rounding_resolves_column_conflicts_greedily() {
        let h = DMatrix::from_row_slice(2, 3, &[0.9, 0.1, 0.3, 0.8, 0.0, 0.6]);
        let (indices, _) = round_to_selection(&h);
        // Both rows peak on column 1; the stronger first row keeps it and the
        // second row takes its best remaining column.
        assert_eq!(indices, vec![1, 3]);
    }

    #[test]
    fn orthonormal_nonnegative_zero_penalty_implies_selection() {
        use crate::estimator::selection_indices;
        for seed in 0..50u64 {
            let h = random_selection_matrix(3, 7, seed);
            assert!(orthonormality_violation(&h) <= 1e-12);
            assert!(h.iter().all(|&v| v >= 0.0));
            assert_eq!(v2_penalty(&h), 0.0);
            assert!(selection_indices(&h).is_some());
        }
        // A non-selection orthonormal matrix always pays a positive penalty.
        for seed in 0..20u64 {
            let h = random_orthonormal(2, 5, seed).unwrap();
            if crate::estimator::selection_indices(&h).is_none() {
                assert!(v2_penalty(&h) > 1e-12);
            }
        }
    }

    fn random_selection_matrix(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut cols: Vec<usize> = (0..n).collect();
        cols.shuffle(&mut rng);
        let mut h = DMatrix::zeros(m, n);
        for (row, &col) in cols.iter().take(m).enumerate() {
            h[(row, col)] = 1.0;
        }
        h
    }

    #[test]
    fn flow_matches_exhaustive_on_a_small_diagonal_prior() {
        let prior = diag_prior(&[1.0, 2.0, 3.0, 4.0]);
        let noise = NoiseModel::zero(2);
        let opts = FlowOptions { starts: 10, seed: 3, ..FlowOptions::for_prior(&prior, 3) };
        let flow = design_discrete_flow(&prior, &noise, 2, &opts).unwrap();
        let oracle = exhaustive_select(&prior, &noise, 2).unwrap();
        assert_eq!(flow.indices, oracle.indices);
        assert_eq!(flow.indices, vec![3, 4]);
        assert_relative_eq!(flow.v1, oracle.v1, max_relative = 1e-12);
    }

    #[test]
    fn pure_penalty_flow_reaches_a_selection_matrix() {
        let prior = synth::random_prior(5, 8);
        let noise = NoiseModel::zero(2);
        let problem = DiscreteFlow { prior: &prior, noise: &noise };
        let opts = FlowOptions {
            k0: 1.0,
            k_growth: 1.0,
            max_iter: 20_000,
            tol_grad: 1e-12,
            ..FlowOptions::for_prior(&prior, 0)
        };
        let h0 = random_orthonormal(2, 5, 31).unwrap();
        let outcome = descend(&problem, h0, &opts).unwrap();
        let mut h = outcome.h;
        flip_dominant_negative_rows(&mut h);
        assert!(v2_penalty(&h) < 1e-6, "penalty still {}", v2_penalty(&h));
        let (_, residual) = round_to_selection(&h);
        assert!(residual < 1e-3);
    }

    #[test]
    fn flow_never_beats_the_exhaustive_oracle() {
        for seed in 0..3u64 {
            let prior = synth::random_prior(8, seed);
            let noise = NoiseModel::zero(3);
            let oracle = exhaustive_select(&prior, &noise, 3).unwrap();
            let opts = FlowOptions { starts: 20, seed: seed ^ 0xd15c, ..FlowOptions::for_prior(&prior, seed) };
            let flow = design_discrete_flow(&prior, &noise, 3, &opts).unwrap();
            assert!(flow.v1 >= oracle.v1 - 1e-9, "flow {} beat oracle {}", flow.v1, oracle.v1);
            assert!(flow.v1 <= 1.05 * oracle.v1, "flow {} too far above oracle {}", flow.v1, oracle.v1);
        }
    }
}
