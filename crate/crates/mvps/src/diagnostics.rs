//! Convergence and moment diagnostics on simulated trajectories.
//!
//! The predictive distributions of a reinforced urn converge to its
//! directing random measure, and so does the empirical measure. The
//! directing measure itself is not observable, so the predictive at the
//! final checkpoint stands in for it; that proxy choice is part of the
//! series name rather than hidden. The module provides:
//!
//! * [`tv_predictive_trace`]: total-variation distance of the predictive at
//!   each checkpoint from the final-checkpoint predictive;
//! * [`empirical_vs_predictive`]: total-variation distance between the
//!   empirical measure and the predictive at each checkpoint;
//! * [`martingale_increment_check`]: the exact one-step martingale identity
//!   of the predictive (finite specs; delegates to
//!   [`crate::exactlaw::check_cid`]);
//! * [`general_martingale_check`]: the sampling consequence of that
//!   identity for sampler-defined specs, namely equality of the marginal
//!   law across steps, tested on user-supplied sets.
//!
//! Statistical pass thresholds live in [`stat`] so every Monte Carlo check
//! in the crate is calibrated in one place.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exactlaw::{check_cid, LawError};
use crate::kernel::general::{standardized_diff, TestSet};
use crate::kernel::{CheckReport, KernelError};
use crate::measure::{tv_distance, FiniteMeasure, MeasureError, ProbabilityVector};
use crate::urn::{
    general_simulate_replicate, GeneralUrnSpec, Trajectory, UrnError, UrnSpec, UrnState,
};

/// Statistical calibration constants shared by every Monte Carlo check.
pub mod stat {
    /// Pass threshold, in standard errors, for two-sample frequency
    /// comparisons and law-vs-enumeration cell comparisons.
    pub const SE_THRESHOLD: f64 = 4.0;
    /// Pass threshold, in standard errors, for prior/posterior mean
    /// comparisons, which have exact variance oracles.
    pub const PRIOR_MEAN_SE_THRESHOLD: f64 = 3.0;
    /// Replicates for two-point law comparisons against enumeration.
    pub const LAW_REPLICATES: usize = 1_000_000;
    /// Draw count for prior and posterior mean comparisons.
    pub const PRIOR_DRAWS: usize = 100_000;
    /// Sample count for sampler-defined kernel checks.
    pub const MC_KERNEL_SAMPLES: usize = 100_000;
}

/// Errors from diagnostics computation.
#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("bad checkpoints: {0}")]
    BadCheckpoints(String),
    #[error("trajectory was produced by a different spec")]
    SpecMismatch,
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Urn(#[from] UrnError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Named series of diagnostics values over a shared list of step indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSeries {
    steps: Vec<usize>,
    series: BTreeMap<String, Vec<f64>>,
}

impl TraceSeries {
    pub fn new(steps: Vec<usize>) -> Self {
        TraceSeries {
            steps,
            series: BTreeMap::new(),
        }
    }

    /// Adds a named series; its length must match the step list.
    pub fn insert(&mut self, name: &str, values: Vec<f64>) -> Result<(), DiagnosticsError> {
        if values.len() != self.steps.len() {
            return Err(DiagnosticsError::BadCheckpoints(format!(
                "series {name:?} has {} values for {} steps",
                values.len(),
                self.steps.len()
            )));
        }
        self.series.insert(name.to_string(), values);
        Ok(())
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn names(&self) -> Vec<&str> {
        self.series.keys().map(String::as_str).collect()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.series.get(name).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `(step, value)` rows of one series, for CSV export.
    pub fn rows(&self, name: &str) -> Option<Vec<(usize, f64)>> {
        self.series
            .get(name)
            .map(|values| self.steps.iter().cloned().zip(values.iter().cloned()).collect())
    }
}

fn validate_checkpoints(
    checkpoints: &[usize],
    length: usize,
    minimum: usize,
) -> Result<(), DiagnosticsError> {
    for pair in checkpoints.windows(2) {
        if pair[1] <= pair[0] {
            return Err(DiagnosticsError::BadCheckpoints(format!(
                "checkpoints must be strictly increasing, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    if let Some(&first) = checkpoints.first() {
        if first < minimum {
            return Err(DiagnosticsError::BadCheckpoints(format!(
                "checkpoints must start at {minimum} or later, got {first}"
            )));
        }
    }
    if let Some(&last) = checkpoints.last() {
        if last > length {
            return Err(DiagnosticsError::BadCheckpoints(format!(
                "checkpoint {last} exceeds the trajectory length {length}"
            )));
        }
    }
    Ok(())
}

/// Replays a trajectory against its spec, returning the predictive after
/// each requested number of draws.
fn predictives_at(
    spec: &Arc<UrnSpec>,
    trajectory: &Trajectory,
    checkpoints: &[usize],
) -> Result<Vec<ProbabilityVector>, DiagnosticsError> {
    if trajectory.spec_hash != spec.content_hash() {
        return Err(DiagnosticsError::SpecMismatch);
    }
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut state = UrnState::initial(spec.clone());
    let mut next = checkpoints.iter().peekable();
    for n in 0..=trajectory.draws.len() {
        while next.peek() == Some(&&n) {
            out.push(state.predictive());
            next.next();
        }
        if n < trajectory.draws.len() {
            state = state.step(trajectory.draws[n])?;
        }
    }
    Ok(out)
}

/// Total-variation distance of the predictive at each checkpoint from the
/// predictive at the final checkpoint (the observable stand-in for the
/// limiting random measure). Series name: `tv_to_final`.
pub fn tv_predictive_trace(
    spec: &Arc<UrnSpec>,
    trajectory: &Trajectory,
    checkpoints: &[usize],
) -> Result<TraceSeries, DiagnosticsError> {
    validate_checkpoints(checkpoints, trajectory.draws.len(), 0)?;
    let mut series = TraceSeries::new(checkpoints.to_vec());
    if checkpoints.is_empty() {
        return Ok(series);
    }
    let predictives = predictives_at(spec, trajectory, checkpoints)?;
    let last = predictives.last().expect("nonempty checkpoints").clone();
    let values = predictives
        .iter()
        .map(|p| tv_distance(p, &last))
        .collect::<Result<Vec<_>, _>>()?;
    series.insert("tv_to_final", values)?;
    Ok(series)
}

/// Total-variation distance between the empirical measure of the first `n`
/// draws and the predictive after those draws, at each checkpoint. Series
/// name: `tv_empirical_vs_predictive`.
pub fn empirical_vs_predictive(
    spec: &Arc<UrnSpec>,
    trajectory: &Trajectory,
    checkpoints: &[usize],
) -> Result<TraceSeries, DiagnosticsError> {
    validate_checkpoints(checkpoints, trajectory.draws.len(), 1)?;
    let mut series = TraceSeries::new(checkpoints.to_vec());
    if checkpoints.is_empty() {
        return Ok(series);
    }
    let predictives = predictives_at(spec, trajectory, checkpoints)?;
    let k = spec.space().len();
    let mut counts = vec![0.0f64; k];
    let mut seen = 0usize;
    let mut values = Vec::with_capacity(checkpoints.len());
    for (&n, predictive) in checkpoints.iter().zip(&predictives) {
        while seen < n {
            counts[trajectory.draws[seen]] += 1.0;
            seen += 1;
        }
        let empirical =
            FiniteMeasure::new(spec.space().clone(), counts.clone())?.normalize()?;
        values.push(tv_distance(&empirical, predictive)?);
    }
    series.insert("tv_empirical_vs_predictive", values)?;
    Ok(series)
}

/// Exact one-step martingale identity of the predictive for finite specs:
/// the average of the next-step predictive under the current one must
/// reproduce the current one at every history shorter than `depth`.
pub fn martingale_increment_check(
    spec: &Arc<UrnSpec>,
    depth: usize,
    tol: f64,
) -> Result<CheckReport, LawError> {
    check_cid(spec, depth, tol)
}

/// Monte Carlo martingale check for sampler-defined specs: for a sequence
/// with the martingale property every draw shares the marginal law of the
/// first, so for each test set `A` the frequency of `X_i in A` across
/// replicates is compared against the frequency of `X_1 in A`. Residuals
/// are standardized differences; the threshold is [`stat::SE_THRESHOLD`].
pub fn general_martingale_check(
    spec: &GeneralUrnSpec,
    test_sets: &[TestSet],
    steps: usize,
    replicates: usize,
    seed: u64,
) -> Result<CheckReport, DiagnosticsError> {
    const MIN_REPLICATES: usize = 100;
    if replicates < MIN_REPLICATES {
        return Err(DiagnosticsError::Kernel(KernelError::TooFewSamples {
            min: MIN_REPLICATES,
            got: replicates,
        }));
    }
    if test_sets.is_empty() {
        return Err(DiagnosticsError::Kernel(KernelError::NoTestSets));
    }
    if steps < 2 {
        return Err(DiagnosticsError::BadCheckpoints(format!(
            "need at least 2 steps to compare marginals, got {steps}"
        )));
    }
    let mut counts = vec![vec![0usize; steps]; test_sets.len()];
    for r in 0..replicates {
        let trajectory = general_simulate_replicate(spec, steps, seed, r as u64)?;
        for (s, set) in test_sets.iter().enumerate() {
            for (i, &point) in trajectory.points.iter().enumerate() {
                if (set.contains)(point) {
                    counts[s][i] += 1;
                }
            }
        }
    }
    let mut report = CheckReport::new("general_martingale", stat::SE_THRESHOLD);
    report.detail("replicates", replicates as f64);
    report.detail("steps", steps as f64);
    for (s, set) in test_sets.iter().enumerate() {
        let freq: Vec<f64> = counts[s]
            .iter()
            .map(|&c| c as f64 / replicates as f64)
            .collect();
        report.detail(&format!("{}.step1_freq", set.name), freq[0]);
        report.detail(&format!("{}.final_freq", set.name), freq[steps - 1]);
        for (i, &f) in freq.iter().enumerate().skip(1) {
            let z = standardized_diff(f, freq[0], replicates);
            report.detail(&format!("{}.z_step{}", set.name, i + 1), z);
            report.observe(
                z,
                "marginal frequency drifts across steps",
                vec![set.name.clone(), format!("step {}", i + 1)],
            );
        }
    }
    Ok(report.finalize())
}
