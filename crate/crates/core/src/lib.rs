//! Optimal measurement design for under-sensorized pose sensing.
//!
//! Given the covariance of a correlated configuration (for example the joint
//! angles of a hand across a corpus of grasps) and a sensor noise model,
//! this crate computes measurement matrices that minimize the squared
//! Frobenius norm of the Bayesian a posteriori covariance, in three
//! families:
//!
//! - **continuous** — each sensor reads a linear combination of coordinates;
//!   solved in closed form (principal components without noise, an
//!   eigenvector pairing with noise) and by a projected gradient flow on the
//!   set of orthonormal-row matrices;
//! - **discrete** — each sensor reads one coordinate; solved exactly by
//!   subset enumeration or by a flow that blends the cost descent with a
//!   permutation penalty;
//! - **hybrid** — a stacked mix of both, solved by the block-constrained
//!   combined flow.
//!
//! The [`harness`] module evaluates designs end to end on synthetic data
//! (sample poses from the prior, simulate noisy readings, reconstruct with
//! the minimum-variance estimator, report per-coordinate error statistics)
//! and sweeps the design cost against the number of sensors. Everything is
//! deterministic in the supplied seeds.

pub mod continuous;
pub mod discrete;
pub mod error;
pub mod estimator;
pub mod flow;
pub mod harness;
pub mod hybrid;
pub mod io;
pub mod prior;
pub mod synth;

pub use continuous::{
    design_continuous_flow, optimal_continuous_noiseless, optimal_continuous_noisy,
    project_to_tangent, v1_gradient, ContinuousSolution,
};
pub use discrete::{
    design_discrete_flow, exhaustive_select, round_to_selection, v2_flow_term, v2_penalty,
    SelectionDesign,
};
pub use error::{Error, Result};
pub use estimator::{
    measure, mve_reconstruct, posterior_covariance, v1_cost, DesignMode, MeasurementDesign,
    NoiseModel, Reconstructor,
};
pub use flow::{
    descend, k_schedule, multi_start, random_orthonormal, DesignResult, FlowOptions, FlowProblem,
    Termination,
};
pub use harness::{
    compare_designs, run_reconstruction_experiment, sample_poses, v1_curve, CurveOptions,
    CurveReport, CurveSolver, ErrorReport,
};
pub use hybrid::{block_project, design_hybrid, lift_discrete_block, HybridSolution};
pub use prior::{compute_prior, AngleUnits, PoseDataset, PriorModel};
