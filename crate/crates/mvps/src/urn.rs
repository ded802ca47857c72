//! The predictive recursion and trajectory simulation.
//!
//! An [`UrnSpec`] fixes `(theta, nu, R)` for a finite kernel; the running
//! sufficient statistic is an [`UrnState`] holding the accumulated
//! reinforcement `sum_i R_{X_i}` and its total mass `D_n = sum_i f(X_i)`,
//! from which the predictive is
//!
//! ```text
//! P_n = (theta * nu + sum_i R_{X_i}) / (theta + D_n)
//! ```
//!
//! [`GeneralUrnSpec`] is the sampler-defined counterpart on the real line,
//! simulated through a weighted particle list (one particle per draw, no
//! coalescing). [`cid_recursion_simulate`] runs the explicit predictive
//! recursion `P_n = q_n P_{n-1} + (1 - q_n) R_{X_n}` for a caller-supplied
//! weight sequence `q`.
//!
//! Simulation is deterministic given `(spec, n, seed)`; replicates use child
//! seeds from [`crate::seed::derive_seed`].

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::kernel::{FiniteKernel, GeneralKernel, KernelError};
use crate::measure::{FiniteMeasure, MeasureError, ProbabilityVector};
use crate::seed::{fnv1a64, rng_from};
use crate::EXACT_TOL;

/// Errors from urn construction and simulation.
#[derive(Debug, Error)]
pub enum UrnError {
    #[error("concentration parameter must be positive, got {0}")]
    InvalidTheta(f64),
    #[error("nu and kernel live on different spaces")]
    SpaceMismatch,
    #[error("state index {index} out of range for {size} states")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("kernel must be canonical (every row mass 1), row {label:?} has mass {mass}")]
    NotCanonical { label: String, mass: f64 },
    #[error("weight sequence produced q = {0} outside [0, 1]")]
    BadQ(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Parameters `(theta, nu, R)` of a finite-space sequence.
#[derive(Debug, Clone, Serialize)]
pub struct UrnSpec {
    theta: f64,
    nu: ProbabilityVector,
    kernel: FiniteKernel,
}

impl UrnSpec {
    pub fn new(theta: f64, nu: ProbabilityVector, kernel: FiniteKernel) -> Result<Self, UrnError> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(UrnError::InvalidTheta(theta));
        }
        if nu.space() != kernel.space() {
            return Err(UrnError::SpaceMismatch);
        }
        Ok(UrnSpec { theta, nu, kernel })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn nu(&self) -> &ProbabilityVector {
        &self.nu
    }

    pub fn kernel(&self) -> &FiniteKernel {
        &self.kernel
    }

    pub fn space(&self) -> &Arc<crate::measure::Space> {
        self.nu.space()
    }

    /// Stable content hash of this model, used in trajectory headers.
    pub fn content_hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("spec serializes");
        fnv1a64(&json)
    }
}

/// The sufficient statistic of a history: accumulated reinforcement and its
/// total mass. A value type; [`UrnState::step`] returns a new state.
#[derive(Debug, Clone)]
pub struct UrnState {
    spec: Arc<UrnSpec>,
    n: usize,
    accumulated: FiniteMeasure,
    total_added: f64,
}

impl UrnState {
    /// The empty-history state.
    pub fn initial(spec: Arc<UrnSpec>) -> Self {
        let accumulated = FiniteMeasure::zero(spec.space().clone());
        UrnState {
            spec,
            n: 0,
            accumulated,
            total_added: 0.0,
        }
    }

    pub fn spec(&self) -> &Arc<UrnSpec> {
        &self.spec
    }

    /// Number of observed draws.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn accumulated(&self) -> &FiniteMeasure {
        &self.accumulated
    }

    /// `D_n = sum_i f(X_i)`.
    pub fn total_added(&self) -> f64 {
        self.total_added
    }

    /// The predictive `(theta nu + sum_i R_{X_i}) / (theta + D_n)`; at
    /// `n = 0` this is `nu` itself.
    pub fn predictive(&self) -> ProbabilityVector {
        let spec = &self.spec;
        let denom = spec.theta + self.total_added;
        let weights: Vec<f64> = (0..spec.space().len())
            .map(|y| (spec.theta * spec.nu.prob(y) + self.accumulated.weight(y)) / denom)
            .collect();
        let measure = FiniteMeasure::new(spec.space().clone(), weights).expect("non-negative");
        // The weights sum to 1 by construction up to rounding; avoid
        // re-validation so the predictive is cheap inside enumerations.
        measure.normalize().expect("positive total")
    }

    /// Observes `x`: adds `R_x` to the accumulation and `f(x)` to its mass.
    /// Observing a null state changes only the step count.
    pub fn step(&self, x: usize) -> Result<UrnState, UrnError> {
        let k = self.spec.space().len();
        if x >= k {
            return Err(UrnError::IndexOutOfRange { index: x, size: k });
        }
        let row = self.spec.kernel.row(x);
        Ok(UrnState {
            spec: self.spec.clone(),
            n: self.n + 1,
            accumulated: self.accumulated.plus(row)?,
            total_added: self.total_added + row.total(),
        })
    }

    /// Steps through a whole history in order.
    pub fn step_many(&self, history: &[usize]) -> Result<UrnState, UrnError> {
        let mut state = self.clone();
        for &x in history {
            state = state.step(x)?;
        }
        Ok(state)
    }
}

/// A simulated finite-space path with optional per-step predictive
/// snapshots (`snapshots[i]` is the predictive after `i + 1` draws).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub spec_hash: u64,
    pub seed: u64,
    pub draws: Vec<usize>,
    pub snapshots: Option<Vec<ProbabilityVector>>,
}

impl Trajectory {
    /// Line-oriented text form: a `#`-prefixed header carrying the model
    /// hash, seed and length, then one draw label per line.
    pub fn to_lines(&self, spec: &UrnSpec) -> String {
        let mut out = format!(
            "# spec_hash={:016x} seed={} n={}\n",
            self.spec_hash,
            self.seed,
            self.draws.len()
        );
        for &x in &self.draws {
            out.push_str(spec.space().label(x));
            out.push('\n');
        }
        out
    }
}

/// Simulates `n` draws from the predictive; deterministic in
/// `(spec, n, seed)`. Equivalent to `simulate_replicate(spec, n, seed, 0)`.
pub fn simulate(spec: &Arc<UrnSpec>, n: usize, seed: u64) -> Result<Trajectory, UrnError> {
    simulate_replicate(spec, n, seed, 0)
}

/// Simulates replicate `replicate` of a replicated experiment; each
/// replicate draws from its own child seed stream.
pub fn simulate_replicate(
    spec: &Arc<UrnSpec>,
    n: usize,
    seed: u64,
    replicate: u64,
) -> Result<Trajectory, UrnError> {
    let mut rng = rng_from(seed, replicate, 0);
    let mut state = UrnState::initial(spec.clone());
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let x = state.predictive().sample(&mut rng);
        draws.push(x);
        state = state.step(x)?;
    }
    Ok(Trajectory {
        spec_hash: spec.content_hash(),
        seed,
        draws,
        snapshots: None,
    })
}

/// As [`simulate`], additionally recording the predictive after every step.
pub fn simulate_with_snapshots(
    spec: &Arc<UrnSpec>,
    n: usize,
    seed: u64,
) -> Result<Trajectory, UrnError> {
    let mut rng = rng_from(seed, 0, 0);
    let mut state = UrnState::initial(spec.clone());
    let mut draws = Vec::with_capacity(n);
    let mut snapshots = Vec::with_capacity(n);
    for _ in 0..n {
        let x = state.predictive().sample(&mut rng);
        draws.push(x);
        state = state.step(x)?;
        snapshots.push(state.predictive());
    }
    Ok(Trajectory {
        spec_hash: spec.content_hash(),
        seed,
        draws,
        snapshots: Some(snapshots),
    })
}

/// Parameters of a sampler-defined sequence on the real line; the base
/// measure is the kernel's base sampler.
#[derive(Debug)]
pub struct GeneralUrnSpec {
    theta: f64,
    kernel: GeneralKernel,
    /// Human-readable kernel identity used in trajectory headers.
    label: String,
}

impl GeneralUrnSpec {
    pub fn new(theta: f64, kernel: GeneralKernel, label: impl Into<String>) -> Result<Self, UrnError> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(UrnError::InvalidTheta(theta));
        }
        Ok(GeneralUrnSpec {
            theta,
            kernel,
            label: label.into(),
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn kernel(&self) -> &GeneralKernel {
        &self.kernel
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn content_hash(&self) -> u64 {
        fnv1a64(format!("general:{}:{}", self.label, self.theta).as_bytes())
    }
}

/// A simulated general-space path of points.
#[derive(Debug, Clone)]
pub struct GeneralTrajectory {
    pub spec_hash: u64,
    pub seed: u64,
    pub points: Vec<f64>,
}

impl GeneralTrajectory {
    pub fn to_lines(&self) -> String {
        let mut out = format!(
            "# spec_hash={:016x} seed={} n={}\n",
            self.spec_hash,
            self.seed,
            self.points.len()
        );
        for p in &self.points {
            out.push_str(&format!("{p}\n"));
        }
        out
    }
}

/// Simulates a sampler-defined sequence through a weighted particle list.
///
/// At each step, with probability `theta / (theta + D_n)` the next point
/// comes from the base sampler; otherwise particle `i` is chosen with
/// probability `f(X_i) / (theta + D_n)` and the point is drawn from the
/// normalized row of `X_i`. Every draw becomes a particle with weight given
/// by the mass function, evaluated (and validated) as encountered.
pub fn general_simulate(
    spec: &GeneralUrnSpec,
    n: usize,
    seed: u64,
) -> Result<GeneralTrajectory, UrnError> {
    general_simulate_replicate(spec, n, seed, 0)
}

/// Replicate variant of [`general_simulate`] with child-seeded streams.
pub fn general_simulate_replicate(
    spec: &GeneralUrnSpec,
    n: usize,
    seed: u64,
    replicate: u64,
) -> Result<GeneralTrajectory, UrnError> {
    use rand::Rng;
    let mut rng = rng_from(seed, replicate, 0);
    let mut points = Vec::with_capacity(n);
    let mut particles: Vec<(f64, f64)> = Vec::with_capacity(n); // (point, weight)
    let mut total = 0.0f64;
    for _ in 0..n {
        let u: f64 = rng.gen::<f64>() * (spec.theta + total);
        let next = if u < spec.theta {
            spec.kernel.sample_base(&mut rng)?
        } else {
            let mut acc = spec.theta;
            let mut chosen = particles.len() - 1;
            for (i, &(_, w)) in particles.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            spec.kernel.sample_conditional(particles[chosen].0, &mut rng)?
        };
        let weight = spec.kernel.mass(next)?;
        particles.push((next, weight));
        total += weight;
        points.push(next);
    }
    Ok(GeneralTrajectory {
        spec_hash: spec.content_hash(),
        seed,
        points,
    })
}

/// Runs the explicit predictive recursion
/// `P_n = q_n P_{n-1} + (1 - q_n) R_{X_n}` with `X_n ~ P_{n-1}` and
/// `P_0 = nu0`, recording draws and per-step snapshots.
///
/// The kernel must be canonical with no null rows, so every `R_{X_n}` is a
/// probability and each `P_n` stays one. The weight `q_n` may depend on the
/// step index (1-based) and the history drawn so far, including `X_n`;
/// values outside `[0, 1]` abort with [`UrnError::BadQ`]. With
/// `q_n = (theta + n - 1) / (theta + n)` and the delta kernel this
/// reproduces the Polya-sequence predictive.
pub fn cid_recursion_simulate(
    nu0: &ProbabilityVector,
    kernel: &FiniteKernel,
    qseq: &dyn Fn(usize, &[usize]) -> f64,
    n: usize,
    seed: u64,
) -> Result<Trajectory, UrnError> {
    if nu0.space() != kernel.space() {
        return Err(UrnError::SpaceMismatch);
    }
    for (x, row) in kernel.rows().iter().enumerate() {
        let mass = row.total();
        if (mass - 1.0).abs() > EXACT_TOL {
            return Err(UrnError::NotCanonical {
                label: kernel.space().label(x).to_string(),
                mass,
            });
        }
    }
    let mut rng = rng_from(seed, 0, 0);
    let mut current = nu0.clone();
    let mut draws = Vec::with_capacity(n);
    let mut snapshots = Vec::with_capacity(n);
    for i in 1..=n {
        let x = current.sample(&mut rng);
        draws.push(x);
        let q = qseq(i, &draws);
        if !(0.0..=1.0).contains(&q) || !q.is_finite() {
            return Err(UrnError::BadQ(q));
        }
        let weights: Vec<f64> = (0..nu0.space().len())
            .map(|y| q * current.prob(y) + (1.0 - q) * kernel.row(x).weight(y))
            .collect();
        current = FiniteMeasure::new(nu0.space().clone(), weights)?
            .normalize()
            .expect("convex combination of probabilities");
        snapshots.push(current.clone());
    }
    let hash = fnv1a64(
        serde_json::to_vec(&(nu0, kernel))
            .expect("serializes")
            .as_slice(),
    );
    Ok(Trajectory {
        spec_hash: hash,
        seed,
        draws,
        snapshots: Some(snapshots),
    })
}
