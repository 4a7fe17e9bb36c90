//! Synthetic end-to-end evaluation: sample poses from the prior, simulate
//! measurements, reconstruct, and report per-coordinate and aggregate error
//! statistics; also sweeps the design cost against the number of sensors.
//!
//! Comparisons use common random numbers: every design sees the same true
//! poses and the same per-sensor noise stream in each trial, so paired
//! differences are meaningful. Trial streams are derived from the seed and
//! the trial index alone, which keeps reports independent of execution
//! order.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::continuous::{design_continuous_flow, optimal_continuous_noiseless, optimal_continuous_noisy};
use crate::discrete::{design_discrete_flow, exhaustive_select};
use crate::error::{Error, Result};
use crate::estimator::{DesignMode, MeasurementDesign, NoiseModel, Reconstructor};
use crate::flow::FlowOptions;
use crate::hybrid::design_hybrid;
use crate::prior::{AngleUnits, PoseDataset, PriorModel};

/// Error statistics of one coordinate over all trials. Measured coordinates
/// carry no statistics, mirroring the report convention of marking them out.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DofError {
    pub label: String,
    pub measured: bool,
    pub mean_abs: Option<f64>,
    pub std: Option<f64>,
    pub max_abs: Option<f64>,
}

/// Pose-level error statistics: the per-trial mean absolute error over the
/// aggregated coordinates, summarized over trials.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AggregateError {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

/// Reconstruction-error report for one design.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ErrorReport {
    pub design_id: String,
    pub trials: usize,
    pub seed: u64,
    pub noise_std: f64,
    /// 1-based coordinates read directly by selection rows.
    pub measured_dofs: Vec<usize>,
    /// Which coordinates the aggregate averages over: "unmeasured", or
    /// "all" when every coordinate is measured.
    pub aggregate_scope: String,
    pub per_dof: Vec<DofError>,
    pub aggregate: AggregateError,
}

/// Win/loss counts of paired per-trial errors between two designs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PairwiseSummary {
    pub design_a: String,
    pub design_b: String,
    pub a_wins: usize,
    pub b_wins: usize,
    pub ties: usize,
}

/// Design-cost sweep over the number of sensors.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CurveReport {
    pub m_values: Vec<usize>,
    pub curves: Vec<ModeCurve>,
    /// `(V1(1) - V1(m)) / V1(1)` for the continuous mode, when requested.
    pub reduction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModeCurve {
    pub mode: String,
    pub v1: Vec<f64>,
}

/// Draw `count` configurations from the prior through its symmetric square
/// root. Deterministic in the seed.
pub fn sample_poses(prior: &PriorModel, count: usize, seed: u64) -> Result<PoseDataset> {
    if count == 0 {
        return Err(Error::InvalidData("need at least one sample".into()));
    }
    let n = prior.dims();
    let root = prior.sqrt_cov();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = DMatrix::zeros(n, count);
    for mut col in samples.column_iter_mut() {
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        col.copy_from(&(prior.mean() + &root * z));
    }
    PoseDataset::new(prior.labels().to_vec(), samples, AngleUnits::Degrees)
}

fn pose_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * trial);
    rng
}

fn noise_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * trial + 1);
    rng
}

/// Short human-readable tag for a design.
pub fn design_label(design: &MeasurementDesign) -> String {
    match design.mode() {
        DesignMode::Continuous => format!("continuous(m={})", design.rows()),
        DesignMode::Discrete => {
            let idx: Vec<String> = design.measured_coordinates().iter().map(|i| i.to_string()).collect();
            format!("discrete[{}]", idx.join(","))
        }
        DesignMode::Hybrid => {
            let (mc, _) = design.split().unwrap_or((0, 0));
            let idx: Vec<String> = design.measured_coordinates().iter().map(|i| i.to_string()).collect();
            format!("hybrid(mc={mc})[{}]", idx.join(","))
        }
    }
}

/// Per-design, per-trial mean absolute reconstruction errors plus the
/// formatted reports, under common random numbers.
pub fn compare_designs_detailed(
    prior: &PriorModel,
    designs: &[(String, MeasurementDesign)],
    noise_std: f64,
    trials: usize,
    seed: u64,
) -> Result<(Vec<ErrorReport>, Vec<Vec<f64>>)> {
    if designs.is_empty() {
        return Err(Error::InvalidData("no designs to evaluate".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidData("need at least one trial".into()));
    }
    if noise_std < 0.0 {
        return Err(Error::InvalidData(format!("negative noise std {noise_std}")));
    }
    let n = prior.dims();
    for (id, design) in designs {
        if design.cols() != n {
            return Err(Error::ShapeError(format!(
                "design '{id}' has {} columns but the prior has {n} dimensions",
                design.cols()
            )));
        }
    }
    let max_m = designs.iter().map(|(_, d)| d.rows()).max().unwrap();
    let root = prior.sqrt_cov();

    struct PerDesign {
        reconstructor: Reconstructor,
        h: DMatrix<f64>,
        measured0: Vec<usize>,
        aggregated0: Vec<usize>,
        abs_sum: DVector<f64>,
        abs_max: DVector<f64>,
        sq_sum: DVector<f64>,
        trial_means: Vec<f64>,
    }

    let mut states: Vec<PerDesign> = designs
        .iter()
        .map(|(_, design)| {
            let noise = NoiseModel::isotropic(design.rows(), noise_std);
            let measured0: Vec<usize> = design.measured_coordinates().iter().map(|i| i - 1).collect();
            let aggregated0: Vec<usize> = if measured0.len() == n {
                (0..n).collect()
            } else {
                (0..n).filter(|i| !measured0.contains(i)).collect()
            };
            Ok(PerDesign {
                reconstructor: Reconstructor::new(prior, design, &noise)?,
                h: design.matrix().clone(),
                measured0,
                aggregated0,
                abs_sum: DVector::zeros(n),
                abs_max: DVector::zeros(n),
                sq_sum: DVector::zeros(n),
                trial_means: Vec::with_capacity(trials),
            })
        })
        .collect::<Result<_>>()?;

    for trial in 0..trials {
        let mut prng = pose_rng(seed, trial as u64);
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut prng));
        let x = prior.mean() + &root * z;
        let mut nrng = noise_rng(seed, trial as u64);
        let eps: Vec<f64> = (0..max_m).map(|_| StandardNormal.sample(&mut nrng)).collect();

        for state in states.iter_mut() {
            let mut y = &state.h * &x;
            if noise_std > 0.0 {
                for (j, v) in y.iter_mut().enumerate() {
                    *v += noise_std * eps[j];
                }
            }
            let xhat = state.reconstructor.reconstruct(&y)?;
            let mut agg = 0.0;
            for i in 0..n {
                let err = (xhat[i] - x[i]).abs();
                state.abs_sum[i] += err;
                state.sq_sum[i] += err * err;
                if err > state.abs_max[i] {
                    state.abs_max[i] = err;
                }
                if state.aggregated0.contains(&i) {
                    agg += err;
                }
            }
            state.trial_means.push(agg / state.aggregated0.len() as f64);
        }
    }

    let mut reports = Vec::with_capacity(designs.len());
    let mut per_trial = Vec::with_capacity(designs.len());
    for ((id, _design), state) in designs.iter().zip(states.into_iter()) {
        let t = trials as f64;
        let per_dof = (0..n)
            .map(|i| {
                let measured = state.measured0.contains(&i);
                if measured {
                    DofError {
                        label: prior.labels()[i].clone(),
                        measured: true,
                        mean_abs: None,
                        std: None,
                        max_abs: None,
                    }
                } else {
                    let mean = state.abs_sum[i] / t;
                    let var = if trials > 1 {
                        ((state.sq_sum[i] - t * mean * mean) / (t - 1.0)).max(0.0)
                    } else {
                        0.0
                    };
                    DofError {
                        label: prior.labels()[i].clone(),
                        measured: false,
                        mean_abs: Some(mean),
                        std: Some(var.sqrt()),
                        max_abs: Some(state.abs_max[i]),
                    }
                }
            })
            .collect();
        let mean = state.trial_means.iter().sum::<f64>() / t;
        let var = if trials > 1 {
            state.trial_means.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (t - 1.0)
        } else {
            0.0
        };
        let max = state.trial_means.iter().copied().fold(0.0, f64::max);
        reports.push(ErrorReport {
            design_id: id.clone(),
            trials,
            seed,
            noise_std,
            measured_dofs: state.measured0.iter().map(|i| i + 1).collect(),
            aggregate_scope: if state.measured0.len() == n { "all".into() } else { "unmeasured".into() },
            per_dof,
            aggregate: AggregateError { mean, std: var.sqrt(), max },
        });
        per_trial.push(state.trial_means);
    }
    Ok((reports, per_trial))
}

/// One report per design, paired by trial through common random numbers.
pub fn compare_designs(
    prior: &PriorModel,
    designs: &[(String, MeasurementDesign)],
    noise_std: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<ErrorReport>> {
    compare_designs_detailed(prior, designs, noise_std, trials, seed).map(|(reports, _)| reports)
}

/// Reconstruction experiment for a single design.
pub fn run_reconstruction_experiment(
    prior: &PriorModel,
    design: &MeasurementDesign,
    noise_std: f64,
    trials: usize,
    seed: u64,
) -> Result<ErrorReport> {
    let labeled = vec![(design_label(design), design.clone())];
    Ok(compare_designs(prior, &labeled, noise_std, trials, seed)?.remove(0))
}

/// Fraction-of-wins summaries for every design pair, from the per-trial
/// means of [`compare_designs_detailed`].
pub fn pairwise_summaries(ids: &[String], per_trial: &[Vec<f64>]) -> Vec<PairwiseSummary> {
    let mut out = Vec::new();
    for a in 0..ids.len() {
        for b in a + 1..ids.len() {
            let mut a_wins = 0;
            let mut b_wins = 0;
            let mut ties = 0;
            for (ea, eb) in per_trial[a].iter().zip(per_trial[b].iter()) {
                if ea < eb {
                    a_wins += 1;
                } else if eb < ea {
                    b_wins += 1;
                } else {
                    ties += 1;
                }
            }
            out.push(PairwiseSummary {
                design_a: ids[a].clone(),
                design_b: ids[b].clone(),
                a_wins,
                b_wins,
                ties,
            });
        }
    }
    out
}

/// Solver policy for [`v1_curve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveSolver {
    /// Closed form / exhaustive enumeration where available, flow otherwise.
    Auto,
    /// Gradient flow for every point.
    Flow,
}

/// Options for the design-cost sweep.
#[derive(Debug, Clone)]
pub struct CurveOptions {
    pub modes: Vec<DesignMode>,
    pub m_values: Vec<usize>,
    pub noise_std: f64,
    /// Continuous rows of the hybrid split (capped at m per point).
    pub hybrid_continuous_rows: usize,
    pub solver: CurveSolver,
    pub flow: FlowOptions,
    /// Also emit the continuous-mode reduction column.
    pub reduction: bool,
}

fn continuous_curve_point(prior: &PriorModel, m: usize, opts: &CurveOptions) -> Result<f64> {
    if opts.noise_std == 0.0 {
        match opts.solver {
            CurveSolver::Auto => Ok(optimal_continuous_noiseless(prior, m)?.v1_achieved),
            CurveSolver::Flow => {
                Ok(design_continuous_flow(prior, &NoiseModel::zero(m), m, &opts.flow)?.v1_achieved)
            }
        }
    } else {
        let noise = NoiseModel::isotropic(m, opts.noise_std);
        let flowed = design_continuous_flow(prior, &noise, m, &opts.flow)?.v1_achieved;
        match opts.solver {
            CurveSolver::Flow => Ok(flowed),
            CurveSolver::Auto => {
                let candidate = optimal_continuous_noisy(prior, &noise, m)?.v1_achieved;
                Ok(flowed.min(candidate))
            }
        }
    }
}

fn discrete_curve_point(prior: &PriorModel, m: usize, opts: &CurveOptions) -> Result<f64> {
    let noise = NoiseModel::isotropic(m, opts.noise_std);
    match opts.solver {
        CurveSolver::Auto => match exhaustive_select(prior, &noise, m) {
            Ok(sel) => Ok(sel.v1),
            Err(Error::CombinatorialBudget { .. }) => {
                Ok(design_discrete_flow(prior, &noise, m, &opts.flow)?.v1)
            }
            Err(e) => Err(e),
        },
        CurveSolver::Flow => Ok(design_discrete_flow(prior, &noise, m, &opts.flow)?.v1),
    }
}

fn hybrid_curve_point(prior: &PriorModel, m: usize, opts: &CurveOptions) -> Result<f64> {
    let mc = opts.hybrid_continuous_rows.min(m);
    let md = m - mc;
    let noise = NoiseModel::isotropic(m, opts.noise_std);
    Ok(design_hybrid(prior, &noise, mc, md, &opts.flow)?.v1)
}

/// Best design cost per mode for each sensor count in the sweep.
pub fn v1_curve(prior: &PriorModel, opts: &CurveOptions) -> Result<CurveReport> {
    let n = prior.dims();
    if opts.modes.is_empty() || opts.m_values.is_empty() {
        return Err(Error::InvalidOptions("curve needs at least one mode and one m value".into()));
    }
    if opts.m_values.iter().any(|&m| m == 0 || m >= n) {
        return Err(Error::ShapeError(format!("curve m values must lie in [1, {}]", n - 1)));
    }
    let mut curves = Vec::new();
    for &mode in &opts.modes {
        let mut v1 = Vec::with_capacity(opts.m_values.len());
        for &m in &opts.m_values {
            let value = match mode {
                DesignMode::Continuous => continuous_curve_point(prior, m, opts)?,
                DesignMode::Discrete => discrete_curve_point(prior, m, opts)?,
                DesignMode::Hybrid => hybrid_curve_point(prior, m, opts)?,
            };
            v1.push(value);
        }
        curves.push(ModeCurve { mode: mode.as_str().into(), v1 });
    }
    let reduction = if opts.reduction && opts.modes.contains(&DesignMode::Continuous) {
        let base = continuous_curve_point(prior, 1, opts)?;
        let curve = curves
            .iter()
            .find(|c| c.mode == DesignMode::Continuous.as_str())
            .expect("continuous curve exists");
        Some(curve.v1.iter().map(|v| (base - v) / base).collect())
    } else {
        None
    };
    Ok(CurveReport { m_values: opts.m_values.clone(), curves, reduction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use approx::assert_relative_eq;

    fn curve_opts(modes: Vec<DesignMode>, m_values: Vec<usize>, prior: &PriorModel, seed: u64) -> CurveOptions {
        CurveOptions {
            modes,
            m_values,
            noise_std: 0.0,
            hybrid_continuous_rows: 1,
            solver: CurveSolver::Auto,
            flow: FlowOptions { starts: 10, seed, ..FlowOptions::for_prior(prior, seed) },
            reduction: false,
        }
    }

    #[test]
    fn zero_covariance_samples_collapse_to_the_mean() {
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let prior = PriorModel::from_covariance(mean.clone(), DMatrix::zeros(2, 2)).unwrap();
        let data = sample_poses(&prior, 10, 3).unwrap();
        for j in 0..10 {
            assert_relative_eq!(&data.sample(j), &mean, epsilon = 1e-14);
        }
    }

    #[test]
    fn sample_covariance_approaches_the_prior() {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let prior = PriorModel::from_covariance(DVector::zeros(2), cov.clone()).unwrap();
        let data = sample_poses(&prior, 100_000, 11).unwrap();
        let est = crate::prior::compute_prior(&data).unwrap();
        let rel = (est.cov() - &cov).norm() / cov.norm();
        assert!(rel <= 0.05, "sample covariance off by {rel}");
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let prior = synth::random_prior(4, 9);
        let a = sample_poses(&prior, 50, 123).unwrap();
        let b = sample_poses(&prior, 50, 123).unwrap();
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn identity_design_without_noise_reconstructs_exactly() {
        let prior = synth::random_prior(5, 2);
        let design = MeasurementDesign::selection(&[1, 2, 3, 4, 5], 5).unwrap();
        let report = run_reconstruction_experiment(&prior, &design, 0.0, 50, 7).unwrap();
        assert_eq!(report.aggregate_scope, "all");
        assert!(report.aggregate.mean <= 1e-9);
        assert!(report.aggregate.max <= 1e-9);
    }

    #[test]
    fn measured_coordinates_are_marked_and_exact() {
        let prior = synth::random_prior(6, 4);
        let design = MeasurementDesign::selection(&[2, 5], 6).unwrap();
        let report = run_reconstruction_experiment(&prior, &design, 0.0, 30, 5).unwrap();
        assert_eq!(report.measured_dofs, vec![2, 5]);
        assert_eq!(report.aggregate_scope, "unmeasured");
        for dof in &report.per_dof {
            if dof.measured {
                assert!(dof.mean_abs.is_none() && dof.std.is_none() && dof.max_abs.is_none());
            } else {
                assert!(dof.max_abs.unwrap() >= dof.mean_abs.unwrap());
            }
        }
    }

    #[test]
    fn comparing_a_design_with_itself_gives_identical_reports() {
        let prior = synth::random_prior(5, 8);
        let design = MeasurementDesign::selection(&[1, 3], 5).unwrap();
        let designs = vec![("a".to_string(), design.clone()), ("b".to_string(), design)];
        let (reports, per_trial) = compare_designs_detailed(&prior, &designs, 2.0, 40, 17).unwrap();
        assert_eq!(reports[0].aggregate, reports[1].aggregate);
        let pw = pairwise_summaries(&["a".into(), "b".into()], &per_trial);
        assert_eq!((pw[0].a_wins, pw[0].b_wins, pw[0].ties), (0, 0, 40));
    }

    #[test]
    fn full_observation_dominates_any_subset_without_noise() {
        let prior = synth::random_prior(5, 12);
        let designs = vec![
            ("full".to_string(), MeasurementDesign::selection(&[1, 2, 3, 4, 5], 5).unwrap()),
            ("partial".to_string(), MeasurementDesign::selection(&[1, 2], 5).unwrap()),
        ];
        let reports = compare_designs(&prior, &designs, 0.0, 25, 3).unwrap();
        assert!(reports[0].aggregate.mean <= 1e-9);
        assert!(reports[1].aggregate.mean > reports[0].aggregate.mean);
    }

    #[test]
    fn optimal_selection_beats_a_fixed_baseline() {
        let prior = synth::synergy_prior(15, 0.5, 2024);
        let m = 5;
        let noise = NoiseModel::isotropic(m, 7.0);
        let optimal = exhaustive_select(&prior, &noise, m).unwrap();
        let baseline = MeasurementDesign::selection(&[3, 6, 8, 11, 14], 15).unwrap();
        let designs = vec![
            ("optimal".to_string(), optimal.design.clone()),
            ("baseline".to_string(), baseline),
        ];
        let reports = compare_designs(&prior, &designs, 7.0, 300, 9).unwrap();
        assert!(
            reports[0].aggregate.mean < reports[1].aggregate.mean,
            "optimal {} vs baseline {}",
            reports[0].aggregate.mean,
            reports[1].aggregate.mean
        );
    }

    #[test]
    fn reports_are_reproducible_bit_for_bit() {
        let prior = synth::random_prior(6, 31);
        let designs = vec![
            ("a".to_string(), MeasurementDesign::selection(&[1, 4], 6).unwrap()),
            ("b".to_string(), MeasurementDesign::selection(&[2, 5], 6).unwrap()),
        ];
        let r1 = compare_designs(&prior, &designs, 3.0, 64, 5).unwrap();
        let r2 = compare_designs(&prior, &designs, 3.0, 64, 5).unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
    }

    #[test]
    fn continuous_curve_matches_tail_sums() {
        let prior = synth::random_prior(8, 5);
        let opts = curve_opts(vec![DesignMode::Continuous], (1..8).collect(), &prior, 1);
        let report = v1_curve(&prior, &opts).unwrap();
        for (j, &m) in report.m_values.iter().enumerate() {
            let tail = prior.tail_energy(m);
            assert_relative_eq!(report.curves[0].v1[j], tail, max_relative = 1e-9);
        }
    }

    #[test]
    fn curves_do_not_increase_with_more_sensors() {
        let prior = synth::random_prior(7, 19);
        let mut opts = curve_opts(
            vec![DesignMode::Continuous, DesignMode::Discrete, DesignMode::Hybrid],
            (1..7).collect(),
            &prior,
            23,
        );
        opts.flow.starts = 12;
        let report = v1_curve(&prior, &opts).unwrap();
        for curve in &report.curves {
            for pair in curve.v1.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-9, "{} curve increased: {:?}", curve.mode, curve.v1);
            }
        }
    }

    #[test]
    fn noisy_curve_dominates_the_noiseless_curve() {
        let prior = synth::random_prior(6, 29);
        let clean = curve_opts(vec![DesignMode::Continuous, DesignMode::Discrete], (1..6).collect(), &prior, 3);
        let mut noisy = clean.clone();
        noisy.noise_std = 2.0;
        let clean_report = v1_curve(&prior, &clean).unwrap();
        let noisy_report = v1_curve(&prior, &noisy).unwrap();
        for (c, n) in clean_report.curves.iter().zip(noisy_report.curves.iter()) {
            for (a, b) in c.v1.iter().zip(n.v1.iter()) {
                assert!(b >= a, "noisy point {b} below noiseless {a} for {}", c.mode);
            }
        }
    }

    #[test]
    fn reduction_column_follows_the_tail_formula() {
        let prior = synth::synergy_prior(15, 0.5, 7);
        let mut opts = curve_opts(vec![DesignMode::Continuous], vec![1, 2, 3], &prior, 5);
        opts.reduction = true;
        let report = v1_curve(&prior, &opts).unwrap();
        let reduction = report.reduction.unwrap();
        let base = prior.tail_energy(1);
        for (j, &m) in report.m_values.iter().enumerate() {
            let expected = (base - prior.tail_energy(m)) / base;
            assert_relative_eq!(reduction[j], expected, epsilon = 1e-9);
        }
        assert!(reduction[2] >= 0.80);
    }

    #[test]
    fn mode_ordering_along_the_curve() {
        let prior = synth::random_prior(8, 99);
        let mut opts = curve_opts(
            vec![DesignMode::Continuous, DesignMode::Hybrid, DesignMode::Discrete],
            vec![2, 3],
            &prior,
            41,
        );
        opts.flow.starts = 20;
        let report = v1_curve(&prior, &opts).unwrap();
        for j in 0..report.m_values.len() {
            let c = report.curves[0].v1[j];
            let h = report.curves[1].v1[j];
            let d = report.curves[2].v1[j];
            assert!(c <= h + 1e-8, "continuous {c} above hybrid {h}");
            assert!(h <= d + 1e-8, "hybrid {h} above discrete {d}");
        }
    }

    #[test]
    fn curve_rejects_out_of_range_m() {
        let prior = synth::random_prior(4, 1);
        let opts = curve_opts(vec![DesignMode::Continuous], vec![4], &prior, 1);
        assert!(matches!(v1_curve(&prior, &opts), Err(Error::ShapeError(_))));
    }

    #[test]
    fn forced_flow_curve_stays_above_the_exhaustive_oracle() {
        let prior = synth::random_prior(6, 77);
        let mut opts = curve_opts(vec![DesignMode::Discrete], vec![2], &prior, 31);
        opts.solver = CurveSolver::Flow;
        opts.flow.starts = 10;
        let report = v1_curve(&prior, &opts).unwrap();
        let oracle = exhaustive_select(&prior, &NoiseModel::zero(2), 2).unwrap();
        assert!(report.curves[0].v1[0] >= oracle.v1 - 1e-9);
    }
}
