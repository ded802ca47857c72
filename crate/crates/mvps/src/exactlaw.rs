//! Exact joint laws on finite spaces and the theorem-level verifiers.
//!
//! [`joint_law`] enumerates the exact law of the first `n` draws from the
//! predictive product `P(x_1..x_n) = prod_i P_{i-1}(x_i)`. On top of it:
//!
//! * [`check_exchangeable`]: invariance of the law under all permutations of
//!   each tuple (for these predictives the two-step symmetry
//!   `P(h,a,b) = P(h,b,a)` at every history is equivalent, and small depths
//!   are conclusive);
//! * [`check_cid`]: the set-wise martingale identity of conditionally
//!   identically distributed (c.i.d.) sequences,
//!   `sum_x P_h(x) P_{h+x}(y) = P_h(y)` at every history;
//! * [`check_cid_structure`]: the finite structure of balanced-free c.i.d.
//!   reinforcement, i.e. block rows `nu(.|B_j)` plus the row-mass
//!   distribution identity `nu(f = a | B_j) = nu(f = a)`;
//! * [`ps_joint_law`]: the closed-form Polya-sequence tuple probability,
//!   used as an independent oracle;
//! * [`project_atoms_law`]: the law of the block labels `pi(X_i)`, compared
//!   against the Polya sequence with base `nu_pi` (or, when the kernel has
//!   a null part, against the projected spec with rows
//!   `nu(Z^c) delta_p + nu(Z) nu_pi(.|pi(Z))`).
//!
//! Enumerations refuse to touch more than [`crate::ENUMERATION_CAP`] tuples.

use std::collections::HashMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::kernel::{
    atoms_of_kernel, decompose_blocks, CheckReport, FiniteKernel, KernelError, Partition,
};
use crate::measure::{MeasureError, ProbabilityVector, Space};
use crate::urn::{UrnError, UrnSpec, UrnState};
use crate::{ENUMERATION_CAP, EXACT_TOL};

/// Errors from exact-law computation.
#[derive(Debug, Error)]
pub enum LawError {
    #[error("enumeration would touch {tuples} tuples, cap is {cap}")]
    TooLarge { tuples: u128, cap: u128 },
    #[error("depth must be at least {min}, got {got}")]
    DepthTooSmall { min: usize, got: usize },
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error(transparent)]
    Urn(#[from] UrnError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// The exact law of `(X_1, ..., X_n)` as a dense table over label tuples.
///
/// Tuples are indexed in mixed radix with the first draw most significant;
/// probabilities are non-negative and sum to 1 within `1e-10 * k^n`.
#[derive(Debug, Clone, Serialize)]
pub struct JointLaw {
    space: Arc<Space>,
    depth: usize,
    probs: Vec<f64>,
}

impl JointLaw {
    fn table_len(k: usize, depth: usize) -> Result<usize, LawError> {
        let tuples = (k as u128).checked_pow(depth as u32).unwrap_or(u128::MAX);
        if tuples > ENUMERATION_CAP {
            return Err(LawError::TooLarge {
                tuples,
                cap: ENUMERATION_CAP,
            });
        }
        Ok(tuples as usize)
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Index of a tuple in the dense table.
    pub fn index_of(&self, tuple: &[usize]) -> usize {
        let k = self.space.len();
        tuple.iter().fold(0, |acc, &x| acc * k + x)
    }

    /// Probability of a full-length tuple.
    pub fn prob(&self, tuple: &[usize]) -> f64 {
        assert_eq!(tuple.len(), self.depth, "tuple length must equal depth");
        self.probs[self.index_of(tuple)]
    }

    /// Decodes the tuple at a table index.
    pub fn tuple_at(&self, mut index: usize) -> Vec<usize> {
        let k = self.space.len();
        let mut tuple = vec![0; self.depth];
        for slot in tuple.iter_mut().rev() {
            *slot = index % k;
            index /= k;
        }
        tuple
    }

    /// Iterates `(tuple, probability)` in table order.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        (0..self.probs.len()).map(|i| (self.tuple_at(i), self.probs[i]))
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Sums out the last coordinate, giving the law at depth `n - 1`.
    pub fn marginalize_last(&self) -> Result<JointLaw, LawError> {
        if self.depth == 0 {
            return Err(LawError::DepthTooSmall {
                min: 1,
                got: self.depth,
            });
        }
        let k = self.space.len();
        let probs = self
            .probs
            .chunks(k)
            .map(|chunk| chunk.iter().sum())
            .collect();
        Ok(JointLaw {
            space: self.space.clone(),
            depth: self.depth - 1,
            probs,
        })
    }

    /// Push-forward through the block map of a partition: the law of the
    /// label tuples `(pi(X_1), ..., pi(X_n))` on the quotient space.
    pub fn pushforward(&self, partition: &Partition) -> Result<JointLaw, LawError> {
        if partition.space() != &self.space {
            return Err(LawError::Kernel(KernelError::SpaceMismatch));
        }
        let quotient = partition.quotient_space();
        let m = quotient.len();
        let len = JointLaw::table_len(m, self.depth)?;
        let mut probs = vec![0.0; len];
        for (i, &p) in self.probs.iter().enumerate() {
            let tuple = self.tuple_at(i);
            let idx = tuple
                .iter()
                .fold(0usize, |acc, &x| acc * m + partition.block_of(x));
            probs[idx] += p;
        }
        Ok(JointLaw {
            space: quotient,
            depth: self.depth,
            probs,
        })
    }

    /// Label-tuple rows `(labels..., probability)` for CSV export.
    pub fn rows_as_labels(&self) -> Vec<(Vec<String>, f64)> {
        self.iter()
            .map(|(tuple, p)| {
                (
                    tuple
                        .iter()
                        .map(|&x| self.space.label(x).to_string())
                        .collect(),
                    p,
                )
            })
            .collect()
    }
}

/// Enumerates the exact law of the first `n` draws.
pub fn joint_law(spec: &Arc<UrnSpec>, n: usize) -> Result<JointLaw, LawError> {
    let k = spec.space().len();
    let len = JointLaw::table_len(k, n)?;
    let mut probs = vec![0.0; len];
    // Depth-first over histories; each node multiplies in one predictive.
    fn descend(
        state: &UrnState,
        prob: f64,
        depth_left: usize,
        index: usize,
        k: usize,
        probs: &mut [f64],
    ) -> Result<(), LawError> {
        if depth_left == 0 {
            probs[index] = prob;
            return Ok(());
        }
        let predictive = state.predictive();
        for x in 0..k {
            let p = predictive.prob(x);
            let child = state.step(x)?;
            descend(&child, prob * p, depth_left - 1, index * k + x, k, probs)?;
        }
        Ok(())
    }
    let initial = UrnState::initial(spec.clone());
    descend(&initial, 1.0, n, 0, k, &mut probs)?;
    let law = JointLaw {
        space: spec.space().clone(),
        depth: n,
        probs,
    };
    debug_assert!(
        (law.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-10 * len as f64,
        "joint law must sum to 1"
    );
    Ok(law)
}

/// Checks invariance of the depth-`n` law under all permutations of each
/// tuple; the witness is the worst tuple pair. Requires `n >= 2`.
///
/// Tables beyond 100k tuples abort at the first above-tolerance witness
/// instead of scanning for the worst one.
pub fn check_exchangeable(
    spec: &Arc<UrnSpec>,
    n: usize,
    tol: f64,
) -> Result<CheckReport, LawError> {
    if n < 2 {
        return Err(LawError::DepthTooSmall { min: 2, got: n });
    }
    let law = joint_law(spec, n)?;
    let early_abort = law.probs().len() > 100_000;
    let mut report = CheckReport::new("exchangeable", tol);
    // Group tuples by sorted contents; within a group all probabilities
    // must agree, which is exactly permutation invariance.
    let mut groups: HashMap<usize, (f64, usize, f64, usize)> = HashMap::new();
    for (i, &p) in law.probs().iter().enumerate() {
        let mut sorted = law.tuple_at(i);
        sorted.sort_unstable();
        let key = law.index_of(&sorted);
        let entry = groups.entry(key).or_insert((p, i, p, i));
        if p < entry.0 {
            entry.0 = p;
            entry.1 = i;
        }
        if p > entry.2 {
            entry.2 = p;
            entry.3 = i;
        }
        let spread = entry.2 - entry.0;
        if spread > report.max_residual {
            let describe = |idx: usize| {
                law.tuple_at(idx)
                    .iter()
                    .map(|&x| spec.space().label(x).to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            report.observe(
                spread,
                "permuted tuples have different probabilities",
                vec![describe(entry.3), describe(entry.1)],
            );
            if early_abort && spread > tol {
                return Ok(report.finalize());
            }
        }
    }
    Ok(report.finalize())
}

/// Checks the martingale identity of c.i.d. predictives at every history of
/// length below `depth`:
///
/// ```text
/// sum_x P_h(x) P_{h+x}(y) = P_h(y)   for every state y.
/// ```
///
/// Histories of probability zero (possible when `nu` has zeros) are skipped
/// and counted in `details["skipped_zero_probability_histories"]`.
pub fn check_cid(spec: &Arc<UrnSpec>, depth: usize, tol: f64) -> Result<CheckReport, LawError> {
    JointLaw::table_len(spec.space().len(), depth)?;
    let k = spec.space().len();
    let mut report = CheckReport::new("cid", tol);
    let mut skipped = 0usize;
    fn descend(
        state: &UrnState,
        prob: f64,
        history: &mut Vec<usize>,
        depth: usize,
        k: usize,
        spec: &UrnSpec,
        report: &mut CheckReport,
        skipped: &mut usize,
    ) -> Result<(), LawError> {
        if prob == 0.0 {
            *skipped += 1;
            return Ok(());
        }
        let predictive = state.predictive();
        let children: Vec<(UrnState, ProbabilityVector)> = (0..k)
            .map(|x| {
                let child = state.step(x)?;
                let child_predictive = child.predictive();
                Ok((child, child_predictive))
            })
            .collect::<Result<_, LawError>>()?;
        for y in 0..k {
            let averaged: f64 = (0..k)
                .map(|x| predictive.prob(x) * children[x].1.prob(y))
                .sum();
            let residual = (averaged - predictive.prob(y)).abs();
            if residual > report.max_residual {
                let h = history
                    .iter()
                    .map(|&x| spec.space().label(x).to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                report.observe(
                    residual,
                    "one-step average of the predictive moves",
                    vec![format!("history=({h})"), spec.space().label(y).to_string()],
                );
            }
        }
        if history.len() + 1 < depth {
            for (x, (child, _)) in children.iter().enumerate() {
                history.push(x);
                descend(
                    child,
                    prob * predictive.prob(x),
                    history,
                    depth,
                    k,
                    spec,
                    report,
                    skipped,
                )?;
                history.pop();
            }
        }
        Ok(())
    }
    let initial = UrnState::initial(spec.clone());
    let mut history = Vec::new();
    descend(
        &initial,
        1.0,
        &mut history,
        depth,
        k,
        spec,
        &mut report,
        &mut skipped,
    )?;
    report.detail("skipped_zero_probability_histories", skipped as f64);
    Ok(report.finalize())
}

/// Checks the finite c.i.d. structure of a strictly positive kernel:
/// (i) closed classes with rows `nu(.|B_j)` (via [`decompose_blocks`]) and
/// (ii) the row-mass distribution identity `nu(f = a | B_j) = nu(f = a)`
/// for every block `j` and every distinct mass value `a`.
///
/// The report's details carry the block assignment (`block_of.<label>`) and
/// the mass-distribution table (`p(f=a)`, `p(f=a|Bj)`). Requires an empty
/// null set and strictly positive `nu`.
pub fn check_cid_structure(
    kernel: &FiniteKernel,
    nu: &ProbabilityVector,
) -> Result<CheckReport, LawError> {
    if !kernel.null_states().is_empty() {
        return Err(LawError::HypothesisViolated(
            "kernel has null rows (Z must be empty)".to_string(),
        ));
    }
    if (0..kernel.len()).any(|x| nu.prob(x) <= 0.0) {
        return Err(LawError::HypothesisViolated(
            "nu must be strictly positive".to_string(),
        ));
    }
    let decomposition = decompose_blocks(kernel, nu)?;
    let blocks = match &decomposition.partition {
        Some(p) => p.clone(),
        // For the mass table on a failed row check, fall back to the finest
        // identical-row grouping.
        None => atoms_of_kernel(kernel),
    };
    let mut report = CheckReport::new("cid_structure", EXACT_TOL);
    report.observe(
        decomposition.report.max_residual,
        "block row structure fails",
        decomposition
            .report
            .witness
            .as_ref()
            .map(|w| w.labels.clone())
            .unwrap_or_default(),
    );
    report.detail("block_count", blocks.num_blocks() as f64);
    for x in 0..kernel.len() {
        report.detail(
            &format!("block_of.{}", kernel.space().label(x)),
            (blocks.block_of(x) + 1) as f64,
        );
    }

    // Distinct row-mass values, clustered at the exact tolerance.
    let masses = kernel.masses();
    let mut sorted: Vec<f64> = masses.clone();
    sorted.sort_by(f64::total_cmp);
    let mut values: Vec<f64> = Vec::new();
    for m in sorted {
        match values.last() {
            Some(&v) if (m - v).abs() <= EXACT_TOL => {}
            _ => values.push(m),
        }
    }
    for &a in &values {
        let in_level: Vec<usize> = (0..kernel.len())
            .filter(|&x| (masses[x] - a).abs() <= EXACT_TOL)
            .collect();
        let global = nu.prob_of(&in_level);
        report.detail(&format!("p(f={a})"), global);
        for (j, block) in blocks.blocks().iter().enumerate() {
            let within: Vec<usize> = block
                .iter()
                .cloned()
                .filter(|&x| (masses[x] - a).abs() <= EXACT_TOL)
                .collect();
            let conditional = nu.prob_of(&within) / nu.prob_of(block);
            report.detail(&format!("p(f={a}|B{})", j + 1), conditional);
            report.observe(
                (conditional - global).abs(),
                "row-mass distribution differs across blocks",
                vec![format!("B{}", j + 1), format!("f={a}")],
            );
        }
    }
    Ok(report.finalize())
}

/// Closed-form Polya-sequence tuple probability
/// `prod_i (theta nu(x_i) + #{j < i : x_j = x_i}) / (theta + i - 1)`.
pub fn ps_joint_law(
    theta: f64,
    nu: &ProbabilityVector,
    tuple: &[usize],
) -> Result<f64, LawError> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(LawError::Measure(MeasureError::InvalidTheta(theta)));
    }
    let k = nu.space().len();
    let mut prob = 1.0;
    for (i, &x) in tuple.iter().enumerate() {
        if x >= k {
            return Err(LawError::Measure(MeasureError::IndexOutOfRange {
                index: x,
                size: k,
            }));
        }
        let repeats = tuple[..i].iter().filter(|&&y| y == x).count() as f64;
        prob *= (theta * nu.prob(x) + repeats) / (theta + i as f64);
    }
    Ok(prob)
}

/// Marginalizes the exact law through a partition and compares it against
/// the reference law of the projected sequence.
///
/// With no null states the reference is the Polya sequence with base
/// `nu_pi` (closed form). With a null part `Z` (which must be a union of
/// blocks) the reference is the projected spec with rows
/// `nu(Z^c) delta_p + nu(Z) nu_pi(.|pi(Z))` off `pi(Z)` and zero rows on
/// `pi(Z)`, evaluated by enumeration.
///
/// The caller is responsible for the input being exchangeable; the input's
/// own exchangeability residual at depth `min(n, 4)` is recorded in
/// `details["input_exchangeability_residual"]`.
pub fn project_atoms_law(
    spec: &Arc<UrnSpec>,
    partition: &Partition,
    n: usize,
) -> Result<(JointLaw, CheckReport), LawError> {
    if partition.space() != spec.space() {
        return Err(LawError::Kernel(KernelError::SpaceMismatch));
    }
    let law = joint_law(spec, n)?;
    let projected = law.pushforward(partition)?;
    let nu_pi = partition.pushforward(spec.nu().as_measure())?.normalize()?;

    // Null part, if any, must respect the partition.
    let null_states = spec.kernel().null_states();
    let is_null = {
        let mut v = vec![false; spec.space().len()];
        for &x in &null_states {
            v[x] = true;
        }
        v
    };
    let mut null_blocks = Vec::new();
    for (j, block) in partition.blocks().iter().enumerate() {
        let inside = block.iter().filter(|&&x| is_null[x]).count();
        if inside != 0 && inside != block.len() {
            return Err(LawError::HypothesisViolated(format!(
                "block B{} straddles the null-set boundary",
                j + 1
            )));
        }
        if inside == block.len() {
            null_blocks.push(j);
        }
    }

    let mut report = CheckReport::new("project_atoms_vs_reference", EXACT_TOL);
    if n >= 2 {
        let pre = check_exchangeable(spec, n.min(4), EXACT_TOL)?;
        report.detail("input_exchangeability_residual", pre.max_residual);
    }

    if null_blocks.is_empty() {
        // Reference: closed-form Polya law with base nu_pi.
        for (tuple, p) in projected.iter() {
            let reference = ps_joint_law(spec.theta(), &nu_pi, &tuple)?;
            observe_tuple(&mut report, &projected, &tuple, p, reference);
        }
    } else {
        // Reference: projected spec with a null part.
        let quotient = projected.space().clone();
        let m = quotient.len();
        let z_mass: f64 = null_blocks.iter().map(|&j| nu_pi.prob(j)).sum();
        let zc_mass = 1.0 - z_mass;
        let z_conditional: Vec<f64> = if z_mass > EXACT_TOL {
            (0..m)
                .map(|j| {
                    if null_blocks.contains(&j) {
                        nu_pi.prob(j) / z_mass
                    } else {
                        0.0
                    }
                })
                .collect()
        } else {
            vec![0.0; m]
        };
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|p| {
                if null_blocks.contains(&p) {
                    vec![0.0; m]
                } else {
                    (0..m)
                        .map(|q| {
                            let dirac = if p == q { zc_mass } else { 0.0 };
                            dirac + z_mass * z_conditional[q]
                        })
                        .collect()
                }
            })
            .collect();
        let projected_kernel = FiniteKernel::from_matrix(quotient.clone(), rows)?;
        let projected_spec = Arc::new(UrnSpec::new(spec.theta(), nu_pi, projected_kernel)?);
        let reference_law = joint_law(&projected_spec, n)?;
        for (tuple, p) in projected.iter() {
            let reference = reference_law.prob(&tuple);
            observe_tuple(&mut report, &projected, &tuple, p, reference);
        }
        report.detail("null_block_count", null_blocks.len() as f64);
    }
    Ok((projected, report.finalize()))
}

fn observe_tuple(
    report: &mut CheckReport,
    law: &JointLaw,
    tuple: &[usize],
    got: f64,
    want: f64,
) {
    let labels = tuple
        .iter()
        .map(|&x| law.space().label(x).to_string())
        .collect::<Vec<_>>()
        .join(",");
    report.observe(
        (got - want).abs(),
        "projected law differs from the reference law",
        vec![format!("({labels})")],
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::exchangeable_kernel_from_partition;
    use crate::measure::FiniteMeasure;

    fn ps_spec() -> Arc<UrnSpec> {
        let space = Arc::new(Space::new(["0", "1"]).unwrap());
        let nu = ProbabilityVector::uniform(space.clone());
        Arc::new(UrnSpec::new(1.0, nu, FiniteKernel::identity(space)).unwrap())
    }

    fn four_state_spec() -> Arc<UrnSpec> {
        let space = Arc::new(Space::new(["1", "2", "3", "4"]).unwrap());
        let kernel = FiniteKernel::from_matrix(
            space.clone(),
            vec![
                vec![0.2, 0.3, 0.0, 0.0],
                vec![0.4, 0.6, 0.0, 0.0],
                vec![0.0, 0.0, 0.2, 0.3],
                vec![0.0, 0.0, 0.4, 0.6],
            ],
        )
        .unwrap();
        let nu = FiniteMeasure::new(space.clone(), vec![0.2, 0.3, 0.2, 0.3])
            .unwrap()
            .normalize()
            .unwrap();
        Arc::new(UrnSpec::new(1.0, nu, kernel).unwrap())
    }

    fn null_part_spec() -> Arc<UrnSpec> {
        let space = Arc::new(Space::new(["1", "2", "3"]).unwrap());
        let nu = FiniteMeasure::new(space.clone(), vec![0.25, 0.25, 0.5])
            .unwrap()
            .normalize()
            .unwrap();
        let partition = Partition::singletons(space.clone());
        let kernel = exchangeable_kernel_from_partition(&nu, &partition, Some(&[2])).unwrap();
        Arc::new(UrnSpec::new(1.0, nu, kernel).unwrap())
    }

    #[test]
    fn two_draw_polya_law_matches_hand_values() {
        let law = joint_law(&ps_spec(), 2).unwrap();
        assert!((law.prob(&[0, 0]) - 0.375).abs() <= EXACT_TOL);
        assert!((law.prob(&[0, 1]) - 0.125).abs() <= EXACT_TOL);
        assert!((law.prob(&[1, 0]) - 0.125).abs() <= EXACT_TOL);
        assert!((law.prob(&[1, 1]) - 0.375).abs() <= EXACT_TOL);
    }

    #[test]
    fn depth_one_law_is_nu() {
        let spec = four_state_spec();
        let law = joint_law(&spec, 1).unwrap();
        for x in 0..4 {
            assert!((law.prob(&[x]) - spec.nu().prob(x)).abs() <= EXACT_TOL);
        }
    }

    #[test]
    fn null_part_two_draw_symmetry() {
        let law = joint_law(&null_part_spec(), 2).unwrap();
        assert!((law.prob(&[0, 2]) - 0.125).abs() <= EXACT_TOL);
        assert!((law.prob(&[2, 0]) - 0.125).abs() <= EXACT_TOL);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let space = Arc::new(Space::new((0..10).map(|i| i.to_string())).unwrap());
        let nu = ProbabilityVector::uniform(space.clone());
        let spec = Arc::new(UrnSpec::new(1.0, nu, FiniteKernel::identity(space)).unwrap());
        assert!(matches!(
            joint_law(&spec, 8),
            Err(LawError::TooLarge { .. })
        ));
    }

    #[test]
    fn marginal_consistency() {
        let spec = four_state_spec();
        let law4 = joint_law(&spec, 4).unwrap();
        let law3 = joint_law(&spec, 3).unwrap();
        let reduced = law4.marginalize_last().unwrap();
        for (i, &p) in law3.probs().iter().enumerate() {
            assert!((reduced.probs()[i] - p).abs() <= EXACT_TOL);
        }
    }

    #[test]
    fn polya_sequence_is_exchangeable() {
        let report = check_exchangeable(&ps_spec(), 4, EXACT_TOL).unwrap();
        assert!(report.passed);
    }

    #[test]
    fn unbalanced_two_block_spec_is_not_exchangeable() {
        let report = check_exchangeable(&four_state_spec(), 3, EXACT_TOL).unwrap();
        assert!(!report.passed);
        let witness = report.witness.unwrap();
        assert_eq!(witness.labels.len(), 2);
        assert!(report.max_residual > 1e-6);
    }

    #[test]
    fn block_kernel_spec_is_exchangeable() {
        let space = Arc::new(Space::new(["1", "2", "3"]).unwrap());
        let nu = FiniteMeasure::new(space.clone(), vec![0.25, 0.25, 0.5])
            .unwrap()
            .normalize()
            .unwrap();
        let partition = Partition::new(space.clone(), vec![vec![0, 1], vec![2]]).unwrap();
        let kernel = exchangeable_kernel_from_partition(&nu, &partition, None).unwrap();
        let spec = Arc::new(UrnSpec::new(1.0, nu, kernel).unwrap());
        assert!(check_exchangeable(&spec, 4, EXACT_TOL).unwrap().passed);
    }

    #[test]
    fn exchangeable_requires_depth_two() {
        assert!(matches!(
            check_exchangeable(&ps_spec(), 1, EXACT_TOL),
            Err(LawError::DepthTooSmall { .. })
        ));
    }

    #[test]
    fn cid_holds_for_unbalanced_two_block_spec() {
        let report = check_cid(&four_state_spec(), 4, EXACT_TOL).unwrap();
        assert!(report.passed, "residual {}", report.max_residual);
    }

    #[test]
    fn cid_holds_for_polya_sequence() {
        assert!(check_cid(&ps_spec(), 4, EXACT_TOL).unwrap().passed);
    }

    #[test]
    fn cid_fails_for_perturbed_kernel() {
        // Entry (2, 1) lowered from 0.4 to 0.1 without renormalization.
        let space = Arc::new(Space::new(["1", "2", "3", "4"]).unwrap());
        let kernel = FiniteKernel::from_matrix(
            space.clone(),
            vec![
                vec![0.2, 0.3, 0.0, 0.0],
                vec![0.1, 0.6, 0.0, 0.0],
                vec![0.0, 0.0, 0.2, 0.3],
                vec![0.0, 0.0, 0.4, 0.6],
            ],
        )
        .unwrap();
        let nu = FiniteMeasure::new(space.clone(), vec![0.2, 0.3, 0.2, 0.3])
            .unwrap()
            .normalize()
            .unwrap();
        let spec = Arc::new(UrnSpec::new(1.0, nu, kernel).unwrap());
        let report = check_cid(&spec, 4, EXACT_TOL).unwrap();
        assert!(!report.passed);
        assert!(report.max_residual > 1e-6);
    }

    #[test]
    fn cid_skips_zero_probability_histories() {
        let space = Arc::new(Space::new(["0", "1"]).unwrap());
        let nu = FiniteMeasure::new(space.clone(), vec![1.0, 0.0])
            .unwrap()
            .normalize()
            .unwrap();
        let spec = Arc::new(UrnSpec::new(1.0, nu, FiniteKernel::identity(space)).unwrap());
        let report = check_cid(&spec, 3, EXACT_TOL).unwrap();
        assert!(report.passed);
        assert!(report.details["skipped_zero_probability_histories"] > 0.0);
    }

    #[test]
    fn cid_structure_passes_on_the_two_block_example() {
        let spec = four_state_spec();
        let report = check_cid_structure(spec.kernel(), spec.nu()).unwrap();
        assert!(report.passed, "residual {}", report.max_residual);
        assert_eq!(report.details["block_count"], 2.0);
        assert_eq!(report.details["block_of.1"], 1.0);
        assert_eq!(report.details["block_of.3"], 2.0);
        assert!((report.details["p(f=0.5)"] - 0.4).abs() <= EXACT_TOL);
        assert!((report.details["p(f=0.5|B1)"] - 0.4).abs() <= EXACT_TOL);
    }

    #[test]
    fn cid_structure_trivial_for_balanced_kernels() {
        let space = Arc::new(Space::new(["1", "2", "3"]).unwrap());
        let nu = FiniteMeasure::new(space.clone(), vec![0.25, 0.25, 0.5])
            .unwrap()
            .normalize()
            .unwrap();
        let partition = Partition::new(space, vec![vec![0, 1], vec![2]]).unwrap();
        let kernel = exchangeable_kernel_from_partition(&nu, &partition, None).unwrap();
        let report = check_cid_structure(&kernel, &nu).unwrap();
        assert!(report.passed);
    }

    #[test]
    fn cid_structure_detects_mass_distribution_mismatch() {
        let spec = four_state_spec();
        let space = spec.space().clone();
        let nu = FiniteMeasure::new(space, vec![0.2, 0.3, 0.3, 0.2])
            .unwrap()
            .normalize()
            .unwrap();
        let report = check_cid_structure(spec.kernel(), &nu).unwrap();
        assert!(!report.passed);
        // The mass table records the block-level mismatch even when the row
        // check fails first: p(f=0.5) = 0.5 globally but 0.4 on block 1.
        assert!((report.details["p(f=0.5)"] - 0.5).abs() <= EXACT_TOL);
        assert!((report.details["p(f=0.5|B1)"] - 0.4).abs() <= EXACT_TOL);
    }

    #[test]
    fn cid_structure_rejects_null_rows_and_zero_nu() {
        let spec = null_part_spec();
        assert!(matches!(
            check_cid_structure(spec.kernel(), spec.nu()),
            Err(LawError::HypothesisViolated(_))
        ));
        let space = Arc::new(Space::new(["0", "1"]).unwrap());
        let nu = FiniteMeasure::new(space.clone(), vec![1.0, 0.0])
            .unwrap()
            .normalize()
            .unwrap();
        assert!(matches!(
            check_cid_structure(&FiniteKernel::identity(space), &nu),
            Err(LawError::HypothesisViolated(_))
        ));
    }

    #[test]
    fn polya_closed_form_values() {
        let space = Arc::new(Space::new(["0", "1"]).unwrap());
        let nu = ProbabilityVector::uniform(space);
        assert!((ps_joint_law(1.0, &nu, &[0, 0]).unwrap() - 0.375).abs() <= EXACT_TOL);
        assert!((ps_joint_law(1.0, &nu, &[0, 1]).unwrap() - 0.125).abs() <= EXACT_TOL);
        assert!((ps_joint_law(1.0, &nu, &[0]).unwrap() - 0.5).abs() <= EXACT_TOL);
        assert!(ps_joint_law(0.0, &nu, &[0]).is_err());
    }

    #[test]
    fn polya_closed_form_matches_enumeration() {
        let spec = ps_spec();
        let law = joint_law(&spec, 3).unwrap();
        for (tuple, p) in law.iter() {
            let closed = ps_joint_law(1.0, spec.nu(), &tuple).unwrap();
            assert!((p - closed).abs() <= EXACT_TOL);
        }
    }

    #[test]
    fn projected_block_law_is_polya() {
        let space = Arc::new(Space::new(["1", "2", "3"]).unwrap());
        let nu = FiniteMeasure::new(space.clone(), vec![0.25, 0.25, 0.5])
            .unwrap()
            .normalize()
            .unwrap();
        let partition = Partition::new(space.clone(), vec![vec![0, 1], vec![2]]).unwrap();
        let kernel = exchangeable_kernel_from_partition(&nu, &partition, None).unwrap();
        let spec = Arc::new(UrnSpec::new(1.0, nu, kernel).unwrap());
        let (projected, report) = project_atoms_law(&spec, &partition, 2).unwrap();
        assert!(report.passed, "residual {}", report.max_residual);
        assert!((projected.prob(&[0, 0]) - 0.375).abs() <= EXACT_TOL);
        assert!((projected.prob(&[0, 1]) - 0.125).abs() <= EXACT_TOL);
        assert!((projected.prob(&[1, 0]) - 0.125).abs() <= EXACT_TOL);
        assert!((projected.prob(&[1, 1]) - 0.375).abs() <= EXACT_TOL);
    }

    #[test]
    fn one_block_projection_is_degenerate() {
        let spec = ps_spec();
        let partition = Partition::new(spec.space().clone(), vec![vec![0, 1]]).unwrap();
        let (projected, report) = project_atoms_law(&spec, &partition, 3).unwrap();
        assert!(report.passed);
        assert!((projected.prob(&[0, 0, 0]) - 1.0).abs() <= EXACT_TOL);
    }

    #[test]
    fn null_part_projection_matches_projected_spec() {
        let spec = null_part_spec();
        let partition = Partition::singletons(spec.space().clone());
        let (_, report) = project_atoms_law(&spec, &partition, 3).unwrap();
        assert!(report.passed, "residual {}", report.max_residual);
    }

    #[test]
    fn exchangeable_implies_cid_on_examples() {
        for spec in [ps_spec(), null_part_spec()] {
            let ex = check_exchangeable(&spec, 4, EXACT_TOL).unwrap();
            let cid = check_cid(&spec, 4, EXACT_TOL).unwrap();
            assert!(ex.passed);
            assert!(cid.passed);
        }
    }
}
