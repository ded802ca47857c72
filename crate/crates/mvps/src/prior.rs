//! Stick-breaking samplers for the random measures directing an urn.
//!
//! The directing measure of a Polya sequence is a Dirichlet process; with a
//! canonical reinforcement kernel it becomes the kernel mixture
//! `P = sum_j V_j R_{U_j}` with stick-breaking weights `V_j` and atom
//! locations `U_j` drawn i.i.d. from the base. This module provides:
//!
//! * [`truncation_level`]: smallest `J` with expected residual mass
//!   `(theta/(theta+1))^J` at or below a target;
//! * [`sample_dp`]: truncated Dirichlet-process draw ([`StickBreakingDraw`]);
//! * [`sample_kernel_sb`]: truncated kernel mixture ([`RandomMeasureDraw`]);
//! * [`sample_posterior`]: the same mixture under the updated parameters
//!   `(theta + n, (theta nu + sum_i R_{X_i}) / (theta + n))`;
//! * [`sample_hierarchical`]: the three-level block representation
//!   `Q ~ DP(theta, nu_pi)`, `p_i | Q i.i.d. Q`, `X_i ~ nu(.|block p_i)`;
//! * [`sample_null_mixture`]: the same with a fixed component on the null
//!   set `Z` selected by an independent Bernoulli flag.
//!
//! Sticks use the inverse transform `W = 1 - (1 - u)^(1/theta)` for
//! `Beta(1, theta)`, one uniform per stick. All samplers are pure functions
//! of their inputs and a `u64` seed.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::kernel::{FiniteKernel, KernelError, Partition};
use crate::measure::{FiniteMeasure, MeasureError, ProbabilityVector, Space};
use crate::seed::rng_from;
use crate::urn::{UrnError, UrnSpec};
use crate::EXACT_TOL;

/// Default truncation target for samplers that pick their own level.
pub const DEFAULT_TRUNCATION_EPSILON: f64 = 1e-8;

const STREAM_STICKS: u64 = 0;
const STREAM_HIERARCHICAL: u64 = 1;
const STREAM_NULL: u64 = 2;

/// Errors from the stick-breaking samplers.
#[derive(Debug, Error)]
pub enum PriorError {
    #[error("truncation target must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("truncation level must be at least 1, got {0}")]
    InvalidTruncation(usize),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Urn(#[from] UrnError),
}

/// What to do with the stick-breaking mass beyond the truncation level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum ResidualPolicy {
    /// Reassign the residual to the base measure, so the realized measure
    /// is a probability measure.
    #[default]
    ReassignToBase,
    /// Keep the truncation as is; the realized total mass is `1 - residual`.
    Keep,
}

/// `a * b` split into the rounded product and its exact rounding error.
fn two_product(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, f64::mul_add(a, b, -p))
}

/// Product of two double-double numbers, keeping roughly 106 bits.
fn dd_mul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (p, e) = two_product(a.0, b.0);
    let e = e + (a.0 * b.1 + a.1 * b.0);
    let hi = p + e;
    (hi, e - (hi - p))
}

/// `base^exp` by square-and-multiply in double-double arithmetic, so the
/// result is correctly rounded for every power that arises here. The plain
/// `powi` loses a couple of ulps to intermediate rounding, which is enough
/// to drift past the 1e-15 relative accuracy the residual report promises.
fn accurate_power(base: f64, mut exp: usize) -> f64 {
    let mut acc = (1.0f64, 0.0f64);
    let mut square = (base, 0.0f64);
    while exp > 0 {
        if exp & 1 == 1 {
            acc = dd_mul(acc, square);
        }
        exp >>= 1;
        if exp > 0 {
            square = dd_mul(square, square);
        }
    }
    acc.0 + acc.1
}

/// Smallest level `J >= 1` whose expected residual `(theta/(theta+1))^J`
/// is at most `epsilon`; returns `(J, expected residual at J)`.
pub fn truncation_level(theta: f64, epsilon: f64) -> Result<(usize, f64), PriorError> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(PriorError::Measure(MeasureError::InvalidTheta(theta)));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(PriorError::InvalidEpsilon(epsilon));
    }
    let ratio = theta / (theta + 1.0);
    // Start from the analytic estimate, then fix it up against floating
    // point so the returned level is exactly the smallest admissible one.
    let mut j = (epsilon.ln() / ratio.ln()).ceil().max(1.0) as usize;
    while j > 1 && accurate_power(ratio, j - 1) <= epsilon {
        j -= 1;
    }
    while accurate_power(ratio, j) > epsilon {
        j += 1;
    }
    Ok((j, accurate_power(ratio, j)))
}

/// A truncated stick-breaking draw: sticks `W_j`, weights
/// `V_j = W_j prod_{i<j} (1 - W_i)`, atom locations `U_j`, and the residual
/// `prod_j (1 - W_j)`. Weights and residual share one running product, so
/// `sum_j V_j + residual = 1` up to a few ulps.
#[derive(Debug, Clone, Serialize)]
pub struct StickBreakingDraw {
    #[serde(skip)]
    space: Arc<Space>,
    pub sticks: Vec<f64>,
    pub weights: Vec<f64>,
    pub atoms: Vec<usize>,
    pub residual: f64,
}

impl StickBreakingDraw {
    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom_labels(&self) -> Vec<&str> {
        self.atoms.iter().map(|&x| self.space.label(x)).collect()
    }

    /// The realized atomic measure `sum_j V_j delta_{U_j}`, with the
    /// residual reassigned to `base` or dropped per the policy.
    pub fn realize(
        &self,
        base: &ProbabilityVector,
        policy: ResidualPolicy,
    ) -> Result<FiniteMeasure, PriorError> {
        if base.space() != &self.space {
            return Err(PriorError::Measure(MeasureError::SpaceMismatch));
        }
        let mut weights = vec![0.0; self.space.len()];
        for (j, &atom) in self.atoms.iter().enumerate() {
            weights[atom] += self.weights[j];
        }
        if policy == ResidualPolicy::ReassignToBase {
            for (w, &b) in weights.iter_mut().zip(base.weights()) {
                *w += self.residual * b;
            }
        }
        Ok(FiniteMeasure::new(self.space.clone(), weights)?)
    }
}

fn draw_sticks(
    theta: f64,
    base: &ProbabilityVector,
    j_max: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StickBreakingDraw, PriorError> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(PriorError::Measure(MeasureError::InvalidTheta(theta)));
    }
    if j_max == 0 {
        return Err(PriorError::InvalidTruncation(0));
    }
    let inv_theta = 1.0 / theta;
    let mut sticks = Vec::with_capacity(j_max);
    let mut weights = Vec::with_capacity(j_max);
    let mut atoms = Vec::with_capacity(j_max);
    let mut remaining = 1.0;
    for _ in 0..j_max {
        let u: f64 = rng.gen();
        let w = 1.0 - (1.0 - u).powf(inv_theta);
        sticks.push(w);
        weights.push(w * remaining);
        remaining *= 1.0 - w;
        atoms.push(base.sample(rng));
    }
    Ok(StickBreakingDraw {
        space: base.space().clone(),
        sticks,
        weights,
        atoms,
        residual: remaining,
    })
}

/// One truncated Dirichlet-process draw with `j_max` sticks.
pub fn sample_dp(
    theta: f64,
    nu: &ProbabilityVector,
    j_max: usize,
    seed: u64,
) -> Result<StickBreakingDraw, PriorError> {
    let mut rng = rng_from(seed, STREAM_STICKS, 0);
    draw_sticks(theta, nu, j_max, &mut rng)
}

/// A realized random measure from a truncated kernel mixture.
#[derive(Debug, Clone, Serialize)]
pub struct RandomMeasureDraw {
    /// The realized measure `sum_j V_j R_{U_j}` (plus `residual * nu` when
    /// the residual is reassigned).
    pub measure: FiniteMeasure,
    pub residual: f64,
    /// Whether the residual mass was folded back into the base measure.
    pub residual_reassigned: bool,
    pub sticks: Vec<f64>,
    pub weights: Vec<f64>,
    pub atoms: Vec<usize>,
}

impl RandomMeasureDraw {
    /// The realized measure as a probability vector; requires the residual
    /// to have been reassigned (or to be negligible).
    pub fn probability(&self) -> Result<ProbabilityVector, PriorError> {
        Ok(self.measure.normalize()?)
    }
}

fn require_canonical_no_null(kernel: &FiniteKernel) -> Result<(), PriorError> {
    for (x, mass) in kernel.masses().into_iter().enumerate() {
        if (mass - 1.0).abs() > EXACT_TOL {
            return Err(PriorError::HypothesisViolated(format!(
                "kernel is not canonical: row {:?} has mass {mass}",
                kernel.space().label(x)
            )));
        }
    }
    Ok(())
}

/// One truncated draw of the kernel mixture `sum_j V_j R_{U_j}` with
/// `U_j` i.i.d. `nu`. Requires a canonical kernel with no null rows.
///
/// With a Dirac kernel this reduces to [`sample_dp`]: the same seed gives
/// the identical realized measure.
pub fn sample_kernel_sb(
    theta: f64,
    nu: &ProbabilityVector,
    kernel: &FiniteKernel,
    j_max: usize,
    seed: u64,
    policy: ResidualPolicy,
) -> Result<RandomMeasureDraw, PriorError> {
    if kernel.space() != nu.space() {
        return Err(PriorError::Measure(MeasureError::SpaceMismatch));
    }
    require_canonical_no_null(kernel)?;
    let draw = sample_dp(theta, nu, j_max, seed)?;
    let k = nu.space().len();
    let mut weights = vec![0.0; k];
    for (j, &atom) in draw.atoms.iter().enumerate() {
        let row = kernel.row(atom);
        for (w, &r) in weights.iter_mut().zip(row.weights()) {
            *w += draw.weights[j] * r;
        }
    }
    if policy == ResidualPolicy::ReassignToBase {
        for (w, &b) in weights.iter_mut().zip(nu.weights()) {
            *w += draw.residual * b;
        }
    }
    let measure = FiniteMeasure::new(nu.space().clone(), weights)?;
    Ok(RandomMeasureDraw {
        measure,
        residual: draw.residual,
        residual_reassigned: policy == ResidualPolicy::ReassignToBase,
        sticks: draw.sticks,
        weights: draw.weights,
        atoms: draw.atoms,
    })
}

/// A truncated stick-breaking draw over a general space: weighted particle
/// locations, with kernel rows attached implicitly through the kernel that
/// produced them.
#[derive(Debug, Clone, Serialize)]
pub struct ParticleDraw {
    pub points: Vec<f64>,
    pub sticks: Vec<f64>,
    pub weights: Vec<f64>,
    pub residual: f64,
}

/// General-space analogue of [`sample_kernel_sb`]: particle locations are
/// drawn from the kernel's base sampler; the caller composes rows on demand.
pub fn sample_sb_particles(
    theta: f64,
    kernel: &crate::kernel::general::GeneralKernel,
    j_max: usize,
    seed: u64,
) -> Result<ParticleDraw, PriorError> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(PriorError::Measure(MeasureError::InvalidTheta(theta)));
    }
    if j_max == 0 {
        return Err(PriorError::InvalidTruncation(0));
    }
    let mut rng = rng_from(seed, STREAM_STICKS, 0);
    let inv_theta = 1.0 / theta;
    let mut points = Vec::with_capacity(j_max);
    let mut sticks = Vec::with_capacity(j_max);
    let mut weights = Vec::with_capacity(j_max);
    let mut remaining = 1.0;
    for _ in 0..j_max {
        let u: f64 = rng.gen();
        let w = 1.0 - (1.0 - u).powf(inv_theta);
        sticks.push(w);
        weights.push(w * remaining);
        remaining *= 1.0 - w;
        points.push(kernel.sample_base(&mut rng)?);
    }
    Ok(ParticleDraw {
        points,
        sticks,
        weights,
        residual: remaining,
    })
}

/// One truncated draw from the posterior of the directing measure given
/// `data`: the kernel mixture under the updated parameters
/// `(theta + n, (theta nu + sum_i R_{data_i}) / (theta + n))`.
///
/// With empty data this is the prior sampler on the same seed path.
pub fn sample_posterior(
    theta: f64,
    nu: &ProbabilityVector,
    kernel: &FiniteKernel,
    data: &[usize],
    j_max: usize,
    seed: u64,
    policy: ResidualPolicy,
) -> Result<RandomMeasureDraw, PriorError> {
    if kernel.space() != nu.space() {
        return Err(PriorError::Measure(MeasureError::SpaceMismatch));
    }
    require_canonical_no_null(kernel)?;
    if data.is_empty() {
        // No observations leave the parameters untouched; rebuilding the base
        // via scale-and-normalize could perturb the weights by an ulp.
        return sample_kernel_sb(theta, nu, kernel, j_max, seed, policy);
    }
    let k = nu.space().len();
    let mut base = nu.as_measure().scaled(theta)?;
    for &x in data {
        if x >= k {
            return Err(PriorError::Measure(MeasureError::IndexOutOfRange {
                index: x,
                size: k,
            }));
        }
        base = base.plus(kernel.row(x))?;
    }
    let posterior_theta = theta + data.len() as f64;
    let posterior_base = base.normalize()?;
    sample_kernel_sb(posterior_theta, &posterior_base, kernel, j_max, seed, policy)
}

/// One replicate of the hierarchical block representation.
#[derive(Debug, Clone, Serialize)]
pub struct HierarchicalDraw {
    /// Truncated mixing draw over the quotient space of blocks.
    pub mixing: StickBreakingDraw,
    /// Latent block label `p_i` for each sample, as a block index.
    pub block_labels: Vec<usize>,
    /// Sampled states `X_i`.
    pub samples: Vec<usize>,
}

/// Samples `n` points from the hierarchical representation: a truncated
/// `Q ~ DP(theta, nu_pi)` over block labels, latent labels `p_i` i.i.d.
/// from the realized `Q`, and `X_i ~ nu(.|block p_i)`.
///
/// Every sample lands in its own latent block because the component
/// measures have disjoint supports.
pub fn sample_hierarchical(
    theta: f64,
    nu: &ProbabilityVector,
    partition: &Partition,
    n: usize,
    j_max: usize,
    seed: u64,
) -> Result<HierarchicalDraw, PriorError> {
    if partition.space() != nu.space() {
        return Err(PriorError::Measure(MeasureError::SpaceMismatch));
    }
    for block in partition.blocks() {
        if nu.prob_of(block) <= 0.0 {
            return Err(PriorError::Kernel(KernelError::BadPartition(format!(
                "block {:?} has zero base mass",
                partition.space().labels_of(block)
            ))));
        }
    }
    let nu_pi = partition.pushforward(nu.as_measure())?.normalize()?;
    let block_conditionals: Vec<ProbabilityVector> = partition
        .blocks()
        .iter()
        .map(|block| nu.as_measure().conditional(block))
        .collect::<Result<_, _>>()?;
    let mut rng = rng_from(seed, STREAM_HIERARCHICAL, 0);
    let mixing = draw_sticks(theta, &nu_pi, j_max, &mut rng)?;
    let realized = mixing
        .realize(&nu_pi, ResidualPolicy::ReassignToBase)?
        .normalize()?;
    let mut block_labels = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let p = realized.sample(&mut rng);
        block_labels.push(p);
        samples.push(block_conditionals[p].sample(&mut rng));
    }
    Ok(HierarchicalDraw {
        mixing,
        block_labels,
        samples,
    })
}

/// One replicate of the null-part mixture representation.
#[derive(Debug, Clone, Serialize)]
pub struct NullMixtureDraw {
    /// Truncated mixing draw over the non-null block labels.
    pub mixing: StickBreakingDraw,
    /// Latent block label `p_i` (an index into the partition's blocks).
    pub block_labels: Vec<usize>,
    /// Latent flag `xi_i`: `true` draws from the block of `p_i`, `false`
    /// from the fixed component `nu(.|Z)`.
    pub in_support: Vec<bool>,
    /// Sampled states `X_i`.
    pub samples: Vec<usize>,
}

/// Samples `n` points from the null-part mixture: latent pairs
/// `(p_i, xi_i)` i.i.d. `Q x Bernoulli(nu(Z^c))` with
/// `Q ~ DP(theta, nu_pi(.|off Z))` truncated at the default target, then
/// `X_i ~ nu(.|block p_i)` when `xi_i` holds and `X_i ~ nu(.|Z)` otherwise.
///
/// `Z` must be a union of blocks with `0 < nu(Z) < 1`.
pub fn sample_null_mixture(
    theta: f64,
    nu: &ProbabilityVector,
    partition: &Partition,
    z: &[usize],
    n: usize,
    seed: u64,
) -> Result<NullMixtureDraw, PriorError> {
    if partition.space() != nu.space() {
        return Err(PriorError::Measure(MeasureError::SpaceMismatch));
    }
    let k = nu.space().len();
    let mut in_z = vec![false; k];
    for &x in z {
        if x >= k {
            return Err(PriorError::Kernel(KernelError::BadNullSet(format!(
                "state index {x} out of range"
            ))));
        }
        in_z[x] = true;
    }
    let z: Vec<usize> = (0..k).filter(|&x| in_z[x]).collect();
    let z_mass = nu.prob_of(&z);
    if !(z_mass > 0.0 && z_mass < 1.0) {
        return Err(PriorError::Kernel(KernelError::BadNullSet(format!(
            "null set must have base mass strictly between 0 and 1, got {z_mass}"
        ))));
    }
    let mut off_z_blocks = Vec::new();
    for (j, block) in partition.blocks().iter().enumerate() {
        let inside = block.iter().filter(|&&x| in_z[x]).count();
        if inside != 0 && inside != block.len() {
            return Err(PriorError::Kernel(KernelError::BadNullSet(format!(
                "block {:?} straddles the null-set boundary",
                partition.space().labels_of(block)
            ))));
        }
        if inside == 0 {
            if nu.prob_of(block) <= 0.0 {
                return Err(PriorError::Kernel(KernelError::BadPartition(format!(
                    "block {:?} has zero base mass",
                    partition.space().labels_of(block)
                ))));
            }
            off_z_blocks.push(j);
        }
    }

    // Mixing base: push-forward of nu conditioned on the non-null blocks.
    let nu_pi = partition.pushforward(nu.as_measure())?;
    let mixing_base = nu_pi.conditional(&off_z_blocks)?;
    let block_conditionals: Vec<Option<ProbabilityVector>> = partition
        .blocks()
        .iter()
        .enumerate()
        .map(|(j, block)| {
            if off_z_blocks.contains(&j) {
                Ok(Some(nu.as_measure().conditional(block)?))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_, MeasureError>>()?;
    let z_conditional = nu.as_measure().conditional(&z)?;

    let (j_max, _) = truncation_level(theta, DEFAULT_TRUNCATION_EPSILON)?;
    let mut rng = rng_from(seed, STREAM_NULL, 0);
    let mixing = draw_sticks(theta, &mixing_base, j_max, &mut rng)?;
    let realized = mixing
        .realize(&mixing_base, ResidualPolicy::ReassignToBase)?
        .normalize()?;
    let zc_mass = 1.0 - z_mass;
    let mut block_labels = Vec::with_capacity(n);
    let mut in_support = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let p = realized.sample(&mut rng);
        let xi = rng.gen::<f64>() < zc_mass;
        block_labels.push(p);
        in_support.push(xi);
        let x = if xi {
            block_conditionals[p]
                .as_ref()
                .expect("realized mixing puts no mass on null blocks")
                .sample(&mut rng)
        } else {
            z_conditional.sample(&mut rng)
        };
        samples.push(x);
    }
    Ok(NullMixtureDraw {
        mixing,
        block_labels,
        in_support,
        samples,
    })
}

/// Convenience: the posterior predictive mean oracle for tests, namely the
/// urn predictive after feeding `data`.
pub fn predictive_after(
    spec: &Arc<UrnSpec>,
    data: &[usize],
) -> Result<ProbabilityVector, PriorError> {
    let state = crate::urn::UrnState::initial(spec.clone()).step_many(data)?;
    Ok(state.predictive())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::stat;
    use crate::seed::derive_seed;

    fn block_spec_pieces() -> (ProbabilityVector, Partition, FiniteKernel) {
        let space = Arc::new(Space::new(["1", "2", "3"]).unwrap());
        let nu = FiniteMeasure::new(space.clone(), vec![0.25, 0.25, 0.5])
            .unwrap()
            .normalize()
            .unwrap();
        let partition = Partition::new(space, vec![vec![0, 1], vec![2]]).unwrap();
        let kernel =
            crate::kernel::exchangeable_kernel_from_partition(&nu, &partition, None).unwrap();
        (nu, partition, kernel)
    }

    #[test]
    fn truncation_level_examples() {
        let (j, residual) = truncation_level(2.0, 1e-8).unwrap();
        assert_eq!(j, 46);
        let expected = (2.0f64 / 3.0).powi(46);
        assert!((residual - expected).abs() <= 1e-15 * expected);
        assert!((residual / 7.9395e-9 - 1.0).abs() < 1e-3);
        assert!(residual <= 1e-8);
        assert!((2.0f64 / 3.0).powi(45) > 1e-8);

        let (j, _) = truncation_level(1.0, 0.5f64.powi(10)).unwrap();
        assert_eq!(j, 10);

        let (j, _) = truncation_level(1e-12, 0.5).unwrap();
        assert_eq!(j, 1);

        assert!(truncation_level(1.0, 0.0).is_err());
        assert!(truncation_level(1.0, 1.0).is_err());
        assert!(truncation_level(0.0, 0.5).is_err());
    }

    #[test]
    fn stick_identity_holds_on_every_draw() {
        let space = Arc::new(Space::new(["a", "b", "c"]).unwrap());
        let nu = ProbabilityVector::uniform(space);
        for theta in [0.5, 1.0, 2.0] {
            for seed in 0..100 {
                let draw = sample_dp(theta, &nu, 30, seed).unwrap();
                let total: f64 = draw.weights.iter().sum();
                assert!((total + draw.residual - 1.0).abs() <= 1e-14);
                assert!(draw.weights.iter().all(|&v| v >= 0.0));
                assert!(draw.sticks.iter().all(|&w| (0.0..1.0).contains(&w)));
                assert!(draw.residual > 0.0);
            }
        }
    }

    #[test]
    fn first_stick_mean_is_half_for_unit_theta() {
        let space = Arc::new(Space::new(["a", "b"]).unwrap());
        let nu = ProbabilityVector::uniform(space);
        let replicates = 100_000;
        let mut sum = 0.0;
        for r in 0..replicates {
            let draw = sample_dp(1.0, &nu, 1, derive_seed(7, r, 0)).unwrap();
            sum += draw.weights[0];
        }
        let mean = sum / replicates as f64;
        // Beta(1,1) is uniform: sd = 1/sqrt(12).
        let se = (1.0f64 / 12.0).sqrt() / (replicates as f64).sqrt();
        assert!((mean - 0.5).abs() <= stat::PRIOR_MEAN_SE_THRESHOLD * se);
    }

    #[test]
    fn dp_prior_mean_is_base_measure() {
        let space = Arc::new(Space::new(["a", "b", "c"]).unwrap());
        let nu = FiniteMeasure::new(space, vec![0.2, 0.3, 0.5])
            .unwrap()
            .normalize()
            .unwrap();
        let theta = 1.0;
        let (j_max, _) = truncation_level(theta, 1e-8).unwrap();
        assert_eq!(j_max, 27);
        let replicates = 20_000;
        let mut sums = vec![0.0; 3];
        for r in 0..replicates {
            let draw = sample_dp(theta, &nu, j_max, derive_seed(11, r, 0)).unwrap();
            let realized = draw.realize(&nu, ResidualPolicy::ReassignToBase).unwrap();
            for x in 0..3 {
                sums[x] += realized.weight(x);
            }
        }
        for x in 0..3 {
            let mean = sums[x] / replicates as f64;
            let p = nu.prob(x);
            // Dirichlet-process marginal variance of a cell.
            let se = (p * (1.0 - p) / (theta + 1.0)).sqrt() / (replicates as f64).sqrt();
            assert!(
                (mean - p).abs() <= stat::PRIOR_MEAN_SE_THRESHOLD * se,
                "state {x}: mean {mean} vs {p}"
            );
        }
    }

    #[test]
    fn dirac_kernel_mixture_reduces_to_dp() {
        let space = Arc::new(Space::new(["a", "b", "c"]).unwrap());
        let nu = FiniteMeasure::new(space.clone(), vec![0.2, 0.3, 0.5])
            .unwrap()
            .normalize()
            .unwrap();
        let kernel = FiniteKernel::identity(space);
        for seed in [0, 1, 42] {
            let via_kernel =
                sample_kernel_sb(1.5, &nu, &kernel, 20, seed, ResidualPolicy::ReassignToBase)
                    .unwrap();
            let via_dp = sample_dp(1.5, &nu, 20, seed)
                .unwrap()
                .realize(&nu, ResidualPolicy::ReassignToBase)
                .unwrap();
            assert_eq!(via_kernel.measure.weights(), via_dp.weights());
        }
    }

    #[test]
    fn kernel_mixture_prior_mean_and_moment() {
        let (nu, partition, kernel) = block_spec_pieces();
        let theta = 1.0;
        let (j_max, _) = truncation_level(theta, 1e-8).unwrap();
        let replicates = 20_000;
        let mut mean = vec![0.0; 3];
        let mut cross = 0.0;
        for r in 0..replicates {
            let draw = sample_kernel_sb(
                theta,
                &nu,
                &kernel,
                j_max,
                derive_seed(13, r, 0),
                ResidualPolicy::ReassignToBase,
            )
            .unwrap();
            for x in 0..3 {
                mean[x] += draw.measure.weight(x);
            }
            cross += draw.measure.weight(0) * draw.measure.weight(2);
        }
        for x in 0..3 {
            let m = mean[x] / replicates as f64;
            let p = nu.prob(x);
            let se = 0.5 / (replicates as f64).sqrt();
            assert!(
                (m - p).abs() <= stat::PRIOR_MEAN_SE_THRESHOLD * se,
                "state {x}: mean {m} vs {p}"
            );
        }
        // Second moment oracle composed from the two-cell product moments of
        // the mixing weights: E[P(1) P(3)] = nu(1|B1) nu(3|B2) E[Q_1 Q_2].
        let nu_pi = partition.pushforward(nu.as_measure()).unwrap().normalize().unwrap();
        let q_moment = crate::measure::dp_product_moment(theta, &nu_pi, 0, 1).unwrap();
        let oracle = 0.5 * 1.0 * q_moment;
        assert!((oracle - 0.0625).abs() <= EXACT_TOL);
        let estimate = cross / replicates as f64;
        let se = 0.1 / (replicates as f64).sqrt();
        assert!(
            (estimate - oracle).abs() <= stat::PRIOR_MEAN_SE_THRESHOLD * se,
            "moment {estimate} vs {oracle}"
        );
    }

    #[test]
    fn kernel_mixture_rejects_bad_kernels() {
        let space = Arc::new(Space::new(["1", "2"]).unwrap());
        let nu = ProbabilityVector::uniform(space.clone());
        // Null row.
        let with_null =
            FiniteKernel::from_matrix(space.clone(), vec![vec![1.0, 0.0], vec![0.0, 0.0]])
                .unwrap();
        assert!(matches!(
            sample_kernel_sb(1.0, &nu, &with_null, 10, 0, ResidualPolicy::ReassignToBase),
            Err(PriorError::HypothesisViolated(_))
        ));
        // Unbalanced rows.
        let unbalanced =
            FiniteKernel::from_matrix(space, vec![vec![0.2, 0.3], vec![0.4, 0.6]]).unwrap();
        assert!(matches!(
            sample_kernel_sb(1.0, &nu, &unbalanced, 10, 0, ResidualPolicy::ReassignToBase),
            Err(PriorError::HypothesisViolated(_))
        ));
    }

    #[test]
    fn residual_policy_controls_total_mass() {
        let (nu, _, kernel) = block_spec_pieces();
        let kept =
            sample_kernel_sb(1.0, &nu, &kernel, 10, 5, ResidualPolicy::Keep).unwrap();
        assert!(!kept.residual_reassigned);
        assert!((kept.measure.total() - (1.0 - kept.residual)).abs() <= 1e-12);
        let reassigned =
            sample_kernel_sb(1.0, &nu, &kernel, 10, 5, ResidualPolicy::ReassignToBase).unwrap();
        assert!(reassigned.residual_reassigned);
        assert!((reassigned.measure.total() - 1.0).abs() <= 1e-12);
        assert!(reassigned.probability().is_ok());
    }

    #[test]
    fn posterior_with_no_data_is_the_prior() {
        let (nu, _, kernel) = block_spec_pieces();
        for seed in [0, 9, 77] {
            let posterior = sample_posterior(
                1.0,
                &nu,
                &kernel,
                &[],
                15,
                seed,
                ResidualPolicy::ReassignToBase,
            )
            .unwrap();
            let prior =
                sample_kernel_sb(1.0, &nu, &kernel, 15, seed, ResidualPolicy::ReassignToBase)
                    .unwrap();
            assert_eq!(posterior.measure.weights(), prior.measure.weights());
        }
    }

    #[test]
    fn polya_posterior_mean_after_one_observation() {
        let space = Arc::new(Space::new(["0", "1"]).unwrap());
        let nu = ProbabilityVector::uniform(space.clone());
        let kernel = FiniteKernel::identity(space);
        let (j_max, _) = truncation_level(2.0, 1e-8).unwrap();
        let replicates = 20_000;
        let mut sum = 0.0;
        for r in 0..replicates {
            let draw = sample_posterior(
                1.0,
                &nu,
                &kernel,
                &[0],
                j_max,
                derive_seed(17, r, 0),
                ResidualPolicy::ReassignToBase,
            )
            .unwrap();
            sum += draw.measure.weight(0);
        }
        let mean = sum / replicates as f64;
        // Posterior base puts 3/4 at state 0; cell sd under the posterior
        // process is sqrt(p(1-p)/(theta+n+1)).
        let se = (0.75f64 * 0.25 / 3.0).sqrt() / (replicates as f64).sqrt();
        assert!(
            (mean - 0.75).abs() <= stat::PRIOR_MEAN_SE_THRESHOLD * se,
            "mean {mean}"
        );
    }

    #[test]
    fn posterior_mean_matches_urn_predictive() {
        let (nu, _, kernel) = block_spec_pieces();
        let data = [0, 2, 2];
        let spec = Arc::new(UrnSpec::new(1.0, nu.clone(), kernel.clone()).unwrap());
        let oracle = predictive_after(&spec, &data).unwrap();
        let (j_max, _) = truncation_level(4.0, 1e-8).unwrap();
        let replicates = 20_000;
        let mut sums = vec![0.0; 3];
        for r in 0..replicates {
            let draw = sample_posterior(
                1.0,
                &nu,
                &kernel,
                &data,
                j_max,
                derive_seed(19, r, 0),
                ResidualPolicy::ReassignToBase,
            )
            .unwrap();
            for x in 0..3 {
                sums[x] += draw.measure.weight(x);
            }
        }
        for x in 0..3 {
            let mean = sums[x] / replicates as f64;
            let se = 0.5 / (replicates as f64).sqrt();
            assert!(
                (mean - oracle.prob(x)).abs() <= stat::PRIOR_MEAN_SE_THRESHOLD * se,
                "state {x}: mean {mean} vs {}",
                oracle.prob(x)
            );
        }
    }

    #[test]
    fn hierarchical_samples_stay_in_their_latent_block() {
        let (nu, partition, _) = block_spec_pieces();
        for seed in 0..200 {
            let draw = sample_hierarchical(1.0, &nu, &partition, 5, 27, seed).unwrap();
            for (p, x) in draw.block_labels.iter().zip(&draw.samples) {
                assert_eq!(partition.block_of(*x), *p);
            }
        }
    }

    #[test]
    fn one_block_hierarchy_draws_iid_from_the_base() {
        let space = Arc::new(Space::new(["a", "b"]).unwrap());
        let nu = FiniteMeasure::new(space.clone(), vec![0.3, 0.7])
            .unwrap()
            .normalize()
            .unwrap();
        let partition = Partition::new(space, vec![vec![0, 1]]).unwrap();
        let replicates = 20_000;
        let mut count_a = 0usize;
        for r in 0..replicates {
            let draw =
                sample_hierarchical(1.0, &nu, &partition, 1, 27, derive_seed(23, r, 0)).unwrap();
            assert_eq!(draw.block_labels[0], 0);
            if draw.samples[0] == 0 {
                count_a += 1;
            }
        }
        let freq = count_a as f64 / replicates as f64;
        let se = (0.3f64 * 0.7 / replicates as f64).sqrt();
        assert!((freq - 0.3).abs() <= stat::SE_THRESHOLD * se);
    }

    #[test]
    fn hierarchical_two_point_law_matches_enumeration() {
        let (nu, partition, kernel) = block_spec_pieces();
        let spec = Arc::new(UrnSpec::new(1.0, nu.clone(), kernel).unwrap());
        let law = crate::exactlaw::joint_law(&spec, 2).unwrap();
        let replicates = 100_000usize;
        let mut counts = vec![0usize; 9];
        for r in 0..replicates {
            let draw =
                sample_hierarchical(1.0, &nu, &partition, 2, 27, derive_seed(29, r as u64, 0))
                    .unwrap();
            counts[draw.samples[0] * 3 + draw.samples[1]] += 1;
        }
        for (i, &count) in counts.iter().enumerate() {
            let p = law.probs()[i];
            let freq = count as f64 / replicates as f64;
            let se = (p * (1.0 - p) / replicates as f64).sqrt().max(1e-9);
            assert!(
                (freq - p).abs() <= stat::SE_THRESHOLD * se,
                "cell {i}: {freq} vs {p}"
            );
        }
    }

    #[test]
    fn null_mixture_marginals() {
        let space = Arc::new(Space::new(["1", "2", "3"]).unwrap());
        let nu = FiniteMeasure::new(space.clone(), vec![0.25, 0.25, 0.5])
            .unwrap()
            .normalize()
            .unwrap();
        let partition = Partition::singletons(space);
        let replicates = 50_000usize;
        let mut in_z = 0usize;
        let mut z_states = [0usize; 3];
        for r in 0..replicates {
            let draw =
                sample_null_mixture(1.0, &nu, &partition, &[2], 1, derive_seed(31, r as u64, 0))
                    .unwrap();
            assert_ne!(draw.block_labels[0], 2, "latent label must avoid Z");
            if draw.samples[0] == 2 {
                in_z += 1;
            }
            z_states[draw.samples[0]] += 1;
            assert_eq!(draw.in_support[0], draw.samples[0] != 2);
        }
        let freq = in_z as f64 / replicates as f64;
        let se = (0.5f64 * 0.5 / replicates as f64).sqrt();
        assert!((freq - 0.5).abs() <= stat::SE_THRESHOLD * se);
        // With Z = {3} a singleton, the Z-conditional law is a point mass.
        assert_eq!(z_states[2], in_z);
    }

    #[test]
    fn null_mixture_two_point_law_matches_enumeration() {
        let space = Arc::new(Space::new(["1", "2", "3"]).unwrap());
        let nu = FiniteMeasure::new(space.clone(), vec![0.25, 0.25, 0.5])
            .unwrap()
            .normalize()
            .unwrap();
        let partition = Partition::singletons(space);
        let kernel =
            crate::kernel::exchangeable_kernel_from_partition(&nu, &partition, Some(&[2]))
                .unwrap();
        let spec = Arc::new(UrnSpec::new(1.0, nu.clone(), kernel).unwrap());
        let law = crate::exactlaw::joint_law(&spec, 2).unwrap();
        let replicates = 100_000usize;
        let mut counts = vec![0usize; 9];
        for r in 0..replicates {
            let draw =
                sample_null_mixture(1.0, &nu, &partition, &[2], 2, derive_seed(37, r as u64, 0))
                    .unwrap();
            counts[draw.samples[0] * 3 + draw.samples[1]] += 1;
        }
        for (i, &count) in counts.iter().enumerate() {
            let p = law.probs()[i];
            let freq = count as f64 / replicates as f64;
            let se = (p * (1.0 - p) / replicates as f64).sqrt().max(1e-9);
            assert!(
                (freq - p).abs() <= stat::SE_THRESHOLD * se,
                "cell {i}: {freq} vs {p}"
            );
        }
    }

    #[test]
    fn null_mixture_rejects_bad_null_sets() {
        let space = Arc::new(Space::new(["1", "2", "3"]).unwrap());
        let nu = ProbabilityVector::uniform(space.clone());
        let singletons = Partition::singletons(space.clone());
        assert!(matches!(
            sample_null_mixture(1.0, &nu, &singletons, &[], 1, 0),
            Err(PriorError::Kernel(KernelError::BadNullSet(_)))
        ));
        assert!(matches!(
            sample_null_mixture(1.0, &nu, &singletons, &[0, 1, 2], 1, 0),
            Err(PriorError::Kernel(KernelError::BadNullSet(_)))
        ));
        let straddling = Partition::new(space, vec![vec![0, 1], vec![2]]).unwrap();
        assert!(matches!(
            sample_null_mixture(1.0, &nu, &straddling, &[1], 1, 0),
            Err(PriorError::Kernel(KernelError::BadNullSet(_)))
        ));
    }

    #[test]
    fn particle_draw_over_a_general_space() {
        let kernel = crate::kernel::general::GeneralKernel::dirac_normal();
        let draw = sample_sb_particles(1.0, &kernel, 20, 3).unwrap();
        assert_eq!(draw.points.len(), 20);
        let total: f64 = draw.weights.iter().sum();
        assert!((total + draw.residual - 1.0).abs() <= 1e-14);
        let again = sample_sb_particles(1.0, &kernel, 20, 3).unwrap();
        assert_eq!(draw.points, again.points);
        assert!(sample_sb_particles(1.0, &kernel, 0, 3).is_err());
    }
}
