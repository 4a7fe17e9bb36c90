//! Hybrid sensing design: `m_c` orthonormal continuous rows stacked over
//! `m_d` single-coordinate rows.
//!
//! No closed form or enumeration applies here, so the design is found by the
//! combined flow: the block-projected cost descent keeps the continuous
//! block on its constraint set while the permutation penalty, applied to the
//! lifted discrete block only, pulls the bottom rows toward exact
//! selections.

use nalgebra::DMatrix;

use crate::continuous::{design_continuous_flow, project_to_tangent, v1_gradient_raw};
use crate::discrete::{
    design_discrete_flow, flip_dominant_negative_rows, round_to_selection, v2_flow_term, v2_penalty,
};
use crate::error::{Error, Result};
use crate::estimator::{v1_cost, v1_cost_raw, MeasurementDesign, NoiseModel};
use crate::flow::{
    descend, multi_start, orthonormalize_rows, random_orthonormal, DesignResult, FlowOptions,
    FlowProblem, Termination, ROUNDING_RESIDUAL_TOL,
};
use crate::prior::PriorModel;

/// A finalized hybrid design with its block diagnostics.
#[derive(Debug, Clone)]
pub struct HybridSolution {
    pub design: MeasurementDesign,
    pub v1: f64,
    /// `||H_c H_c' - I||_F` of the returned design.
    pub continuous_block_violation: f64,
    /// Rounding residual of the discrete block at finalization.
    pub discrete_residual: f64,
    /// Solver diagnostics when the design came from the combined flow.
    pub flow: Option<DesignResult>,
}

/// Zero the continuous rows of a hybrid design, keeping the discrete block:
/// the matrix the permutation penalty acts on.
pub fn lift_discrete_block(design: &MeasurementDesign) -> Result<DMatrix<f64>> {
    let Some((mc, _md)) = design.split() else {
        return Err(Error::ModeError("lift_discrete_block requires a hybrid design".into()));
    };
    Ok(lift_raw(design.matrix(), mc))
}

fn lift_raw(h: &DMatrix<f64>, mc: usize) -> DMatrix<f64> {
    let mut lifted = h.clone();
    lifted.view_mut((0, 0), (mc, h.ncols())).fill(0.0);
    lifted
}

/// Project the top `m_c` rows of `g` onto the tangent of
/// `{H_c : H_c H_c' = I}`; the discrete rows pass through unchanged.
pub fn block_project(h: &DMatrix<f64>, g: &DMatrix<f64>, m_c: usize) -> Result<DMatrix<f64>> {
    if g.shape() != h.shape() {
        return Err(Error::ShapeError(format!(
            "gradient is {}x{} but the design is {}x{}",
            g.nrows(),
            g.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    if m_c > h.nrows() {
        return Err(Error::ShapeError(format!("continuous block of {m_c} rows exceeds {} total", h.nrows())));
    }
    if m_c == 0 {
        return Ok(g.clone());
    }
    let n = h.ncols();
    let hc = h.view((0, 0), (m_c, n)).into_owned();
    let gc = g.view((0, 0), (m_c, n)).into_owned();
    let mut projected = g.clone();
    projected.view_mut((0, 0), (m_c, n)).copy_from(&project_to_tangent(&hc, &gc)?);
    Ok(projected)
}

fn orthonormalize_block(h: &DMatrix<f64>, mc: usize) -> DMatrix<f64> {
    let n = h.ncols();
    let mut repaired = h.clone();
    if mc > 0 {
        let hc = orthonormalize_rows(&h.view((0, 0), (mc, n)).into_owned());
        repaired.view_mut((0, 0), (mc, n)).copy_from(&hc);
    }
    repaired
}

fn block_violation(h: &DMatrix<f64>, mc: usize) -> f64 {
    if mc == 0 {
        return 0.0;
    }
    let hc = h.view((0, 0), (mc, h.ncols()));
    (&hc * hc.transpose() - DMatrix::identity(mc, mc)).norm()
}

struct HybridFlow<'a> {
    prior: &'a PriorModel,
    noise: &'a NoiseModel,
    mc: usize,
}

impl FlowProblem for HybridFlow<'_> {
    fn objective(&self, h: &DMatrix<f64>, k: f64) -> Result<f64> {
        let penalty = v2_penalty(&lift_raw(h, self.mc));
        if k >= 1.0 {
            return Ok(penalty);
        }
        Ok((1.0 - k) * v1_cost_raw(self.prior, h, self.noise)? + k * penalty)
    }

    fn direction(&self, h: &DMatrix<f64>, k: f64) -> Result<DMatrix<f64>> {
        let mut direction = v2_flow_term(&lift_raw(h, self.mc)) * k;
        if k < 1.0 {
            let descent = -v1_gradient_raw(self.prior, h, self.noise)?;
            direction += block_project(h, &descent, self.mc)? * (1.0 - k);
        }
        Ok(direction)
    }

    fn retract(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        orthonormalize_block(h, self.mc)
    }

    fn constraint_violation(&self, h: &DMatrix<f64>) -> f64 {
        block_violation(h, self.mc)
    }

    fn v1(&self, h: &DMatrix<f64>) -> Option<f64> {
        v1_cost_raw(self.prior, h, self.noise).ok()
    }

    fn on_stage_boundary(&self, h: &mut DMatrix<f64>) {
        let n = h.ncols();
        let md = h.nrows() - self.mc;
        let mut hd = h.view((self.mc, 0), (md, n)).into_owned();
        flip_dominant_negative_rows(&mut hd);
        h.view_mut((self.mc, 0), (md, n)).copy_from(&hd);
    }
}

/// Multi-start combined flow for the hybrid design. Each start finalizes by
/// rounding the discrete block (rejected beyond the rounding tolerance),
/// re-orthonormalizing the continuous block and re-evaluating the cost; the
/// best finalized result wins. Degenerate splits fall back to the pure
/// continuous or discrete solver.
pub fn design_hybrid(
    prior: &PriorModel,
    noise: &NoiseModel,
    m_c: usize,
    m_d: usize,
    opts: &FlowOptions,
) -> Result<HybridSolution> {
    let n = prior.dims();
    let m = m_c + m_d;
    if m == 0 || m >= n {
        return Err(Error::ShapeError(format!("need 1 <= m_c + m_d < n, got {m_c} + {m_d}, n = {n}")));
    }
    if noise.dim() != m {
        return Err(Error::ShapeError(format!("noise covariance is {}x{}, expected {m}x{m}", noise.dim(), noise.dim())));
    }

    if m_d == 0 {
        let sol = design_continuous_flow(prior, noise, m, opts)?;
        let design = MeasurementDesign::hybrid(sol.design.matrix().clone(), &[], n)?;
        let violation = block_violation(design.matrix(), m_c);
        return Ok(HybridSolution {
            design,
            v1: sol.v1_achieved,
            continuous_block_violation: violation,
            discrete_residual: 0.0,
            flow: sol.flow,
        });
    }
    if m_c == 0 {
        let sol = design_discrete_flow(prior, noise, m, opts)?;
        let design = MeasurementDesign::hybrid(DMatrix::zeros(0, n), &sol.indices, n)?;
        let residual = sol.flow.as_ref().and_then(|f| f.rounding_residual).unwrap_or(0.0);
        return Ok(HybridSolution {
            design,
            v1: sol.v1,
            continuous_block_violation: 0.0,
            discrete_residual: residual,
            flow: sol.flow,
        });
    }

    let problem = HybridFlow { prior, noise, mc: m_c };
    let result = multi_start(opts, |_index, seed| {
        let h0 = random_orthonormal(m, n, seed)?;
        let outcome = descend(&problem, h0, opts)?;
        let mut h = outcome.h;
        problem.on_stage_boundary(&mut h);

        let hd = h.view((m_c, 0), (m_d, n)).into_owned();
        let (mut indices, residual) = round_to_selection(&hd);
        if residual > ROUNDING_RESIDUAL_TOL {
            return Err(Error::PermutationNeighborhood { best_residual: residual });
        }
        indices.sort_unstable();
        let hc = orthonormalize_rows(&h.view((0, 0), (m_c, n)).into_owned());
        let design = MeasurementDesign::hybrid(hc, &indices, n)?;
        let v1 = v1_cost(prior, &design, noise)?;
        Ok(DesignResult {
            design,
            v1,
            v2: Some(v2_penalty(&lift_raw(&h, m_c))),
            iterations: outcome.iterations,
            start_index: 0,
            k_final: outcome.k_final,
            constraint_violation: 0.0,
            rounding_residual: Some(residual),
            termination: outcome.termination,
            trajectory: outcome.trajectory,
        })
    })?;

    let violation = block_violation(result.design.matrix(), m_c);
    let residual = result.rounding_residual.unwrap_or(0.0);
    debug_assert!(matches!(
        result.termination,
        Termination::GradientTolerance | Termination::StepTolerance | Termination::MaxIterations | Termination::Stalled
    ));
    Ok(HybridSolution {
        design: result.design.clone(),
        v1: result.v1,
        continuous_block_violation: violation,
        discrete_residual: residual,
        flow: Some(result),
    })
}
