//! Projected-gradient-descent driver shared by the continuous, discrete and
//! hybrid solvers: step control, constraint renormalization, convergence
//! detection, the penalty-weight schedule and multi-start orchestration.
//!
//! The continuous-time flows are discretized as explicit steepest-descent
//! steps with backtracking: a step is accepted only when the objective
//! decreases, otherwise the step size is multiplied by `backtrack`.
//! Constraint drift from discretization is repaired by the problem's
//! retraction every `renorm_every` accepted steps.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::MeasurementDesign;
use crate::prior::PriorModel;
use crate::synth::gaussian_matrix;

/// Feasibility required of an initial iterate.
pub const START_FEASIBILITY_TOL: f64 = 1e-8;
/// Step sizes below this abort the line search and flag the run as stalled.
pub const MIN_STEP: f64 = 1e-16;
/// Rounded selections are accepted only when the iterate was at most this
/// far (Frobenius) from an exact selection matrix.
pub const ROUNDING_RESIDUAL_TOL: f64 = 0.05;

/// Tuning knobs for a descent run.
#[derive(Debug, Clone)]
pub struct FlowOptions {
    pub max_iter: usize,
    /// Stop when the Frobenius norm of the projected descent direction drops
    /// below this.
    pub tol_grad: f64,
    /// Stop when an accepted step moves the iterate less than this.
    pub tol_step: f64,
    /// Initial step size.
    pub step0: f64,
    /// Step shrink factor in (0, 1).
    pub backtrack: f64,
    /// Number of random restarts.
    pub starts: usize,
    pub seed: u64,
    /// Initial penalty weight in [0, 1] (discrete and hybrid flows).
    pub k0: f64,
    /// Multiplicative growth of the penalty weight per stage; >= 1.
    pub k_growth: f64,
    /// Iterations per penalty stage.
    pub k_stage_len: usize,
    /// Accepted steps between constraint renormalizations.
    pub renorm_every: usize,
    /// Record a (iteration, V1, constraint violation) triple per accepted
    /// iterate.
    pub record_trajectory: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol_grad: 1e-8,
            tol_step: 1e-12,
            step0: 1e-2,
            backtrack: 0.5,
            starts: 20,
            seed: 0,
            k0: 0.2,
            k_growth: 1.5,
            k_stage_len: 200,
            renorm_every: 1,
            record_trajectory: false,
        }
    }
}

impl FlowOptions {
    /// Scale-aware defaults: the gradient tolerance tracks the squared size
    /// of the prior and the initial step its largest eigenvalue.
    pub fn for_prior(prior: &PriorModel, seed: u64) -> Self {
        let sigma1 = prior.spectrum()[0].max(f64::MIN_POSITIVE);
        Self {
            tol_grad: 1e-8 * (1.0 + prior.frobenius_sq()),
            step0: 1e-2 / (sigma1 * sigma1),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidOptions("max_iter must be >= 1".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidOptions(format!("backtrack must be in (0,1), got {}", self.backtrack)));
        }
        if !(0.0..=1.0).contains(&self.k0) {
            return Err(Error::InvalidOptions(format!("k0 must be in [0,1], got {}", self.k0)));
        }
        if self.k_growth < 1.0 {
            return Err(Error::InvalidOptions(format!("k_growth must be >= 1, got {}", self.k_growth)));
        }
        if self.starts == 0 {
            return Err(Error::InvalidOptions("starts must be >= 1".into()));
        }
        if self.k_stage_len == 0 || self.renorm_every == 0 {
            return Err(Error::InvalidOptions("stage and renormalization periods must be >= 1".into()));
        }
        if !(self.step0 > 0.0) || self.tol_grad < 0.0 || self.tol_step < 0.0 {
            return Err(Error::InvalidOptions("step0 must be positive and tolerances non-negative".into()));
        }
        Ok(())
    }
}

/// Penalty weight at the given stage: `min(1, k0 * k_growth^stage)`.
pub fn k_schedule(opts: &FlowOptions, stage: usize) -> f64 {
    (opts.k0 * opts.k_growth.powi(stage as i32)).min(1.0)
}

/// A differentiable cost with a constraint set, as seen by [`descend`].
pub trait FlowProblem: Sync {
    /// Cost at `h` for penalty weight `k`.
    fn objective(&self, h: &DMatrix<f64>, k: f64) -> Result<f64>;
    /// Descent direction at `h` (already projected onto the tangent of the
    /// constraint set where applicable).
    fn direction(&self, h: &DMatrix<f64>, k: f64) -> Result<DMatrix<f64>>;
    /// Repair the iterate back onto the constraint set.
    fn retract(&self, h: &DMatrix<f64>) -> DMatrix<f64>;
    /// Frobenius distance from the constraint set (0 when unconstrained).
    fn constraint_violation(&self, h: &DMatrix<f64>) -> f64;
    /// The design cost at `h`, when distinct from the objective.
    fn v1(&self, _h: &DMatrix<f64>) -> Option<f64> {
        None
    }
    /// Hook invoked when the penalty stage advances.
    fn on_stage_boundary(&self, _h: &mut DMatrix<f64>) {}
}

/// Why a descent run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
    /// The line search underflowed without finding a decrease.
    Stalled,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::GradientTolerance => "gradient-tolerance",
            Termination::StepTolerance => "step-tolerance",
            Termination::MaxIterations => "max-iterations",
            Termination::Stalled => "stalled",
        }
    }
}

/// One accepted iterate of a recorded trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub v1: f64,
    pub violation: f64,
}

/// Raw outcome of a single descent run.
#[derive(Debug, Clone)]
pub struct FlowOutcome {
    pub h: DMatrix<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub k_final: f64,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

/// Discretized steepest descent on a [`FlowProblem`].
pub fn descend<P: FlowProblem>(problem: &P, h0: DMatrix<f64>, opts: &FlowOptions) -> Result<FlowOutcome> {
    opts.validate()?;
    if problem.constraint_violation(&h0) > START_FEASIBILITY_TOL {
        return Err(Error::InvalidStart(format!(
            "initial iterate violates the constraint by {:.3e}",
            problem.constraint_violation(&h0)
        )));
    }
    let mut k = k_schedule(opts, 0);
    let mut h = h0;
    let mut f = match problem.objective(&h, k) {
        Ok(v) if v.is_finite() => v,
        Ok(v) => return Err(Error::InvalidStart(format!("objective is {v} at the initial iterate"))),
        Err(e) => return Err(Error::InvalidStart(format!("objective failed at the initial iterate: {e}"))),
    };

    let step_cap = opts.step0 * 1e6;
    let mut step = opts.step0;
    let mut accepted = 0usize;
    let mut stage = 0usize;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0usize;
    let mut trajectory = opts.record_trajectory.then(|| {
        vec![TrajectoryPoint {
            iteration: 0,
            v1: problem.v1(&h).unwrap_or(f),
            violation: problem.constraint_violation(&h),
        }]
    });

    for iter in 1..=opts.max_iter {
        iterations = iter;
        let new_stage = (iter - 1) / opts.k_stage_len;
        if new_stage != stage {
            stage = new_stage;
            k = k_schedule(opts, stage);
            problem.on_stage_boundary(&mut h);
            f = match problem.objective(&h, k) {
                Ok(v) => v,
                Err(e) => return Err(Error::InvalidStart(format!("objective failed after stage boundary: {e}"))),
            };
        }

        let direction = problem.direction(&h, k)?;
        if direction.norm() <= opts.tol_grad {
            termination = Termination::GradientTolerance;
            break;
        }

        // Backtracking line search: accept the first strict decrease.
        let mut accepted_trial = None;
        while step >= MIN_STEP {
            let mut trial = &h + &direction * step;
            if (accepted + 1) % opts.renorm_every == 0 {
                trial = problem.retract(&trial);
            }
            match problem.objective(&trial, k) {
                Ok(ft) if ft.is_finite() && ft < f => {
                    accepted_trial = Some((trial, ft));
                    break;
                }
                // A rejected or infeasible trial just shrinks the step.
                _ => step *= opts.backtrack,
            }
        }
        let Some((trial, ft)) = accepted_trial else {
            termination = Termination::Stalled;
            break;
        };

        let moved = (&trial - &h).norm();
        h = trial;
        f = ft;
        accepted += 1;
        step = (step / opts.backtrack).min(step_cap);
        if let Some(t) = trajectory.as_mut() {
            t.push(TrajectoryPoint {
                iteration: iter,
                v1: problem.v1(&h).unwrap_or(f),
                violation: problem.constraint_violation(&h),
            });
        }
        if moved <= opts.tol_step {
            termination = Termination::StepTolerance;
            break;
        }
    }

    let h = problem.retract(&h);
    let objective = problem.objective(&h, k).unwrap_or(f);
    Ok(FlowOutcome { h, objective, iterations, termination, k_final: k, trajectory })
}

/// Final result of a (possibly multi-start) design solve.
#[derive(Debug, Clone)]
pub struct DesignResult {
    pub design: MeasurementDesign,
    pub v1: f64,
    /// Permutation penalty at the converged iterate, when applicable.
    pub v2: Option<f64>,
    pub iterations: usize,
    pub start_index: usize,
    pub k_final: f64,
    pub constraint_violation: f64,
    /// Frobenius distance between the converged iterate and the rounded
    /// selection, when a rounding step was involved.
    pub rounding_residual: Option<f64>,
    pub termination: Termination,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

/// Deterministic per-start seeds derived from a master seed.
pub fn start_seeds(seed: u64, starts: usize) -> Vec<u64> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..starts).map(|_| master.random()).collect()
}

/// Run `starts` independent solves and keep the best final V1 (ties go to the
/// smallest start index). Individual starts may fail; only a full wipeout is
/// an error.
pub fn multi_start<F>(opts: &FlowOptions, run: F) -> Result<DesignResult>
where
    F: Fn(usize, u64) -> Result<DesignResult> + Sync,
{
    opts.validate()?;
    let seeds = start_seeds(opts.seed, opts.starts);
    let outcomes: Vec<Result<DesignResult>> = seeds
        .par_iter()
        .enumerate()
        .map(|(index, &seed)| {
            run(index, seed).map(|mut result| {
                result.start_index = index;
                result
            })
        })
        .collect();

    let mut best: Option<DesignResult> = None;
    let mut last_error = None;
    for outcome in outcomes {
        match outcome {
            Ok(result) => {
                let better = match &best {
                    None => true,
                    Some(b) => result.v1 < b.v1,
                };
                if better {
                    best = Some(result);
                }
            }
            Err(e) => last_error = Some(e),
        }
    }
    match best {
        Some(result) => Ok(result),
        None => Err(match last_error {
            Some(Error::PermutationNeighborhood { best_residual }) => {
                Error::PermutationNeighborhood { best_residual }
            }
            _ => Error::NoFeasibleResult,
        }),
    }
}

/// Random m x n matrix with orthonormal rows: the rows of an i.i.d. Gaussian
/// matrix, orthonormalized.
pub fn random_orthonormal(m: usize, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if m == 0 || m > n {
        return Err(Error::ShapeError(format!("need 1 <= m <= n, got m = {m}, n = {n}")));
    }
    Ok(orthonormalize_rows(&gaussian_matrix(m, n, seed)))
}

/// Orthonormalize the rows of `h` via a QR factorization of its transpose,
/// with signs fixed so a matrix that already has orthonormal rows is
/// returned (numerically) unchanged.
pub fn orthonormalize_rows(h: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, _n) = h.shape();
    let qr = h.transpose().qr();
    let mut q = qr.q();
    let r = qr.r();
    for i in 0..m {
        if r[(i, i)] < 0.0 {
            for k in 0..q.nrows() {
                q[(k, i)] = -q[(k, i)];
            }
        }
    }
    q.transpose()
}

/// `||H H' - I||_F`, the row-orthonormality violation.
pub fn orthonormality_violation(h: &DMatrix<f64>) -> f64 {
    let m = h.nrows();
    (h * h.transpose() - DMatrix::identity(m, m)).norm()
}
