//! Reinforcement kernels on finite spaces and their structural checks.
//!
//! A [`FiniteKernel`] assigns every state `x` a non-negative row measure
//! `R_x`. Row masses `f(x) = R_x(X)` determine the null set
//! `Z = {x : f(x) = 0}`; the canonical representation normalizes every
//! positive row to mass 1. The checks in this module decide, exactly and
//! with witnesses:
//!
//! * balancedness: `f` constant over the `nu`-support of `Z^c`;
//! * scaled stationarity: `nu R = c nu` with `c = nu(f)`;
//! * scaled self-averaging: `R_x R = c R_x` row-wise on the `nu`-support;
//! * properness w.r.t. a partition: canonical rows put mass 1 on their own
//!   block;
//! * block decomposition: closed communicating classes of the canonical
//!   matrix with rows equal to `nu(. | class)`.
//!
//! Kernels given only through samplers live in [`general`], together with
//! the Monte Carlo analogue of the stationarity/self-averaging checks.
//!
//! All exact comparisons use [`crate::EXACT_TOL`]. States with `nu(x) = 0`
//! are excluded from every almost-everywhere check and counted in
//! [`CheckReport::details`] under `"ignored_zero_nu_states"`.

pub mod general;

pub use general::{mc_kernel_check, GeneralKernel, TestSet};

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::{FiniteMeasure, MeasureError, ProbabilityVector, Space};
use crate::EXACT_TOL;

/// Errors from kernel construction and checks.
#[derive(Debug, Error)]
pub enum KernelError {
    #[error("matrix has {got} rows, space has {expected} states")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("negative entry at ({row}, {col}): {value}")]
    NegativeEntry { row: String, col: String, value: f64 },
    #[error("kernel and measure live on different spaces")]
    SpaceMismatch,
    #[error("nu puts no mass on states with positive row mass")]
    EmptyPositivePart,
    #[error("nu must be strictly positive on every state")]
    PositiveSupportRequired,
    #[error("bad partition: {0}")]
    BadPartition(String),
    #[error("bad null set: {0}")]
    BadNullSet(String),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("sampler failure: {0}")]
    SamplerFailure(String),
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("at least one test set is required")]
    NoTestSets,
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// The worst violating configuration found by a check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// What is violated, in words.
    pub description: String,
    /// State labels (or tuples of labels) pinning the violation.
    pub labels: Vec<String>,
    /// The offending value or residual.
    pub value: f64,
}

/// Uniform result of every structural check.
///
/// `passed` holds exactly when `max_residual <= tolerance`. `details` carries
/// named scalars such as the scale constant `c = nu(f)` or the balanced mass
/// `m` where relevant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    /// Name of the check that produced this report.
    pub check: String,
    pub passed: bool,
    pub max_residual: f64,
    pub tolerance: f64,
    pub witness: Option<Witness>,
    pub details: BTreeMap<String, f64>,
}

impl CheckReport {
    pub(crate) fn new(check: &str, tolerance: f64) -> Self {
        CheckReport {
            check: check.to_string(),
            passed: true,
            max_residual: 0.0,
            tolerance,
            witness: None,
            details: BTreeMap::new(),
        }
    }

    /// Records a residual, keeping the worst one and its witness.
    pub(crate) fn observe(&mut self, residual: f64, description: &str, labels: Vec<String>) {
        if residual > self.max_residual {
            self.max_residual = residual;
            self.witness = Some(Witness {
                description: description.to_string(),
                labels,
                value: residual,
            });
        }
    }

    pub(crate) fn detail(&mut self, key: &str, value: f64) {
        self.details.insert(key.to_string(), value);
    }

    /// Fixes `passed` from the recorded residuals; drops the witness on pass.
    pub(crate) fn finalize(mut self) -> Self {
        self.passed = self.max_residual <= self.tolerance;
        if self.passed {
            self.witness = None;
        }
        self
    }
}

/// A non-negative reinforcement kernel on a finite space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteKernel {
    space: Arc<Space>,
    rows: Vec<FiniteMeasure>,
}

impl FiniteKernel {
    /// Builds a kernel from row measures; all rows must share `space`.
    pub fn new(space: Arc<Space>, rows: Vec<FiniteMeasure>) -> Result<Self, KernelError> {
        if rows.len() != space.len() {
            return Err(KernelError::DimensionMismatch {
                expected: space.len(),
                got: rows.len(),
            });
        }
        if rows.iter().any(|r| r.space() != &space) {
            return Err(KernelError::SpaceMismatch);
        }
        Ok(FiniteKernel { space, rows })
    }

    /// Builds a kernel from a row-major matrix, rejecting entries below
    /// `-EXACT_TOL` and clamping tiny negatives to zero.
    pub fn from_matrix(space: Arc<Space>, matrix: Vec<Vec<f64>>) -> Result<Self, KernelError> {
        let negativity = detect_negative(&space, &matrix);
        if !negativity.passed {
            let w = negativity.witness.expect("failed check carries witness");
            return Err(KernelError::NegativeEntry {
                row: w.labels[0].clone(),
                col: w.labels[1].clone(),
                value: -w.value,
            });
        }
        if matrix.len() != space.len() {
            return Err(KernelError::DimensionMismatch {
                expected: space.len(),
                got: matrix.len(),
            });
        }
        let rows = matrix
            .into_iter()
            .map(|row| FiniteMeasure::new(space.clone(), row))
            .collect::<Result<Vec<_>, _>>()?;
        FiniteKernel::new(space, rows)
    }

    /// The delta kernel `R_x = delta_x` (classical Polya reinforcement).
    pub fn identity(space: Arc<Space>) -> Self {
        let rows = (0..space.len())
            .map(|x| FiniteMeasure::dirac(space.clone(), x).expect("index in range"))
            .collect();
        FiniteKernel { space, rows }
    }

    /// The kernel with every row equal to `p` (i.i.d. sampling from `p`).
    pub fn constant(space: Arc<Space>, p: &ProbabilityVector) -> Result<Self, KernelError> {
        if p.space() != &space {
            return Err(KernelError::SpaceMismatch);
        }
        let rows = vec![p.as_measure().clone(); space.len()];
        Ok(FiniteKernel { space, rows })
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    /// Row measure `R_x`.
    pub fn row(&self, x: usize) -> &FiniteMeasure {
        &self.rows[x]
    }

    pub fn rows(&self) -> &[FiniteMeasure] {
        &self.rows
    }

    /// Row masses `f(x) = R_x(X)`.
    pub fn masses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.total()).collect()
    }

    /// The null set `Z = {x : f(x) = 0}` (mass below `EXACT_TOL`).
    pub fn null_states(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&x| self.rows[x].total() <= EXACT_TOL)
            .collect()
    }

    /// The row-major entry matrix.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.weights().to_vec()).collect()
    }

    fn expect_same_space(&self, nu: &ProbabilityVector) -> Result<(), KernelError> {
        if nu.space() != &self.space {
            return Err(KernelError::SpaceMismatch);
        }
        Ok(())
    }
}

/// A partition of a finite space into disjoint non-empty blocks.
///
/// Blocks are stored with members ascending and ordered by smallest member,
/// so structurally equal partitions compare equal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    space: Arc<Space>,
    blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
}

impl Partition {
    pub fn new(space: Arc<Space>, blocks: Vec<Vec<usize>>) -> Result<Self, KernelError> {
        let k = space.len();
        let mut blocks: Vec<Vec<usize>> = blocks
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b.dedup();
                b
            })
            .collect();
        if blocks.iter().any(|b| b.is_empty()) {
            return Err(KernelError::BadPartition("empty block".to_string()));
        }
        blocks.sort_by_key(|b| b[0]);
        let mut block_of = vec![usize::MAX; k];
        for (j, block) in blocks.iter().enumerate() {
            for &x in block {
                if x >= k {
                    return Err(KernelError::BadPartition(format!(
                        "state index {x} out of range"
                    )));
                }
                if block_of[x] != usize::MAX {
                    return Err(KernelError::BadPartition(format!(
                        "state {:?} appears in two blocks",
                        space.label(x)
                    )));
                }
                block_of[x] = j;
            }
        }
        if let Some(x) = block_of.iter().position(|&j| j == usize::MAX) {
            return Err(KernelError::BadPartition(format!(
                "state {:?} not covered",
                space.label(x)
            )));
        }
        Ok(Partition {
            space,
            blocks,
            block_of,
        })
    }

    /// The partition with one block per state.
    pub fn singletons(space: Arc<Space>) -> Self {
        let blocks = (0..space.len()).map(|x| vec![x]).collect();
        Partition::new(space, blocks).expect("singletons form a partition")
    }

    /// Builds a partition from block labels at external interfaces.
    pub fn from_labels(space: Arc<Space>, blocks: &[Vec<String>]) -> Result<Self, KernelError> {
        let mut index_blocks = Vec::with_capacity(blocks.len());
        for block in blocks {
            let ib = block
                .iter()
                .map(|l| space.index_of(l))
                .collect::<Result<Vec<_>, _>>()?;
            index_blocks.push(ib);
        }
        Partition::new(space, index_blocks)
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> &[usize] {
        &self.blocks[j]
    }

    /// Index of the block containing state `x`.
    pub fn block_of(&self, x: usize) -> usize {
        self.block_of[x]
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Blocks as label lists, for reports.
    pub fn blocks_as_labels(&self) -> Vec<Vec<String>> {
        self.blocks
            .iter()
            .map(|b| b.iter().map(|&x| self.space.label(x).to_string()).collect())
            .collect()
    }

    /// The quotient space with one label `B1, B2, ...` per block.
    pub fn quotient_space(&self) -> Arc<Space> {
        let labels: Vec<String> = (1..=self.blocks.len()).map(|j| format!("B{j}")).collect();
        Arc::new(Space::new(labels).expect("block labels are distinct"))
    }

    /// Push-forward of a measure through the block map.
    pub fn pushforward(&self, m: &FiniteMeasure) -> Result<FiniteMeasure, KernelError> {
        if m.space() != &self.space {
            return Err(KernelError::SpaceMismatch);
        }
        let mut weights = vec![0.0; self.blocks.len()];
        for (x, w) in m.weights().iter().enumerate() {
            weights[self.block_of[x]] += w;
        }
        Ok(FiniteMeasure::new(self.quotient_space(), weights)?)
    }
}

/// Reports the most negative entry of a raw row-major matrix.
///
/// Passes iff every entry is at least `-EXACT_TOL`; exchangeability forces
/// reinforcement to be non-negative, so construction from raw data funnels
/// through this check.
pub fn detect_negative(space: &Arc<Space>, matrix: &[Vec<f64>]) -> CheckReport {
    let mut report = CheckReport::new("non_negative", EXACT_TOL);
    if matrix.len() != space.len() || matrix.iter().any(|r| r.len() != space.len()) {
        report.observe(
            f64::INFINITY,
            "matrix dimensions do not match the space",
            vec![],
        );
        return report.finalize();
    }
    for (x, row) in matrix.iter().enumerate() {
        for (y, &v) in row.iter().enumerate() {
            let residual = if v.is_finite() { -v } else { f64::INFINITY };
            if residual > report.max_residual {
                report.observe(
                    residual,
                    "negative kernel entry",
                    vec![space.label(x).to_string(), space.label(y).to_string()],
                );
                if let Some(w) = report.witness.as_mut() {
                    w.value = v;
                }
            }
        }
    }
    report.finalize()
}

/// Checks that the row mass `f` is constant over `{x in Z^c : nu(x) > 0}`.
///
/// On success `details["m"]` holds the common mass. Fails with
/// [`KernelError::EmptyPositivePart`] when `nu` charges no positive-mass row.
pub fn check_balanced(kernel: &FiniteKernel, nu: &ProbabilityVector) -> Result<CheckReport, KernelError> {
    kernel.expect_same_space(nu)?;
    let masses = kernel.masses();
    let mut report = CheckReport::new("balanced", EXACT_TOL);
    let mut ignored = 0usize;
    // (mass, state) pairs actually subject to the a.e. constancy requirement.
    let mut seen: Vec<(f64, usize)> = Vec::new();
    for x in 0..kernel.len() {
        if masses[x] <= EXACT_TOL {
            continue; // null state, outside Z^c
        }
        if nu.prob(x) == 0.0 {
            ignored += 1;
            continue;
        }
        seen.push((masses[x], x));
    }
    if seen.is_empty() {
        return Err(KernelError::EmptyPositivePart);
    }
    let (min_m, min_x) = seen
        .iter()
        .cloned()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("non-empty");
    let (max_m, max_x) = seen
        .iter()
        .cloned()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("non-empty");
    report.observe(
        max_m - min_m,
        "row masses differ on the nu-support of Z^c",
        vec![
            kernel.space.label(max_x).to_string(),
            kernel.space.label(min_x).to_string(),
        ],
    );
    report.detail("ignored_zero_nu_states", ignored as f64);
    report.detail("null_state_count", kernel.null_states().len() as f64);
    let mut report = report.finalize();
    if report.passed {
        // nu-weighted mean of the (constant) masses.
        let nu_mass: f64 = seen.iter().map(|&(_, x)| nu.prob(x)).sum();
        let m: f64 = seen.iter().map(|&(m, x)| m * nu.prob(x)).sum::<f64>() / nu_mass;
        report.detail("m", m);
    }
    Ok(report)
}

/// The common row mass of a balanced kernel, when the report carries one.
pub fn balanced_mass(report: &CheckReport) -> Option<f64> {
    report.details.get("m").copied()
}

/// Normalizes every positive row to mass 1; null rows stay zero.
pub fn canonicalize(kernel: &FiniteKernel) -> FiniteKernel {
    let rows = kernel
        .rows
        .iter()
        .map(|r| {
            if r.total() <= EXACT_TOL {
                FiniteMeasure::zero(kernel.space.clone())
            } else {
                r.normalize().expect("positive total").into_measure()
            }
        })
        .collect();
    FiniteKernel {
        space: kernel.space.clone(),
        rows,
    }
}

/// Checks the scaled stationarity `nu R = c nu` with `c = nu(f)`.
///
/// For canonical balanced kernels `c = 1` and this is plain stationarity of
/// `nu` under the kernel.
pub fn check_scaled_stationarity(
    kernel: &FiniteKernel,
    nu: &ProbabilityVector,
) -> Result<CheckReport, KernelError> {
    kernel.expect_same_space(nu)?;
    let masses = kernel.masses();
    let c: f64 = (0..kernel.len()).map(|x| nu.prob(x) * masses[x]).sum();
    let mut report = CheckReport::new("scaled_stationarity", EXACT_TOL);
    for y in 0..kernel.len() {
        let nu_r: f64 = (0..kernel.len())
            .map(|x| nu.prob(x) * kernel.rows[x].weight(y))
            .sum();
        report.observe(
            (nu_r - c * nu.prob(y)).abs(),
            "nu R differs from c nu",
            vec![kernel.space.label(y).to_string()],
        );
    }
    report.detail("c", c);
    Ok(report.finalize())
}

/// Checks scaled stationarity only on the events of a partition:
/// `(nu R)(B) = c nu(B)` for every block `B`.
pub fn check_scaled_stationarity_on_blocks(
    kernel: &FiniteKernel,
    nu: &ProbabilityVector,
    partition: &Partition,
) -> Result<CheckReport, KernelError> {
    kernel.expect_same_space(nu)?;
    if partition.space() != &kernel.space {
        return Err(KernelError::SpaceMismatch);
    }
    let masses = kernel.masses();
    let c: f64 = (0..kernel.len()).map(|x| nu.prob(x) * masses[x]).sum();
    let mut report = CheckReport::new("scaled_stationarity_on_blocks", EXACT_TOL);
    for (j, block) in partition.blocks().iter().enumerate() {
        let nu_r_b: f64 = (0..kernel.len())
            .map(|x| nu.prob(x) * kernel.rows[x].mass_of(block))
            .sum();
        let nu_b = nu.prob_of(block);
        report.observe(
            (nu_r_b - c * nu_b).abs(),
            "(nu R)(B) differs from c nu(B)",
            vec![format!("B{}", j + 1)],
        );
    }
    report.detail("c", c);
    Ok(report.finalize())
}

/// Checks the scaled self-averaging `R_x R = c R_x` for every `x` in the
/// `nu`-support, with `c = nu(f)`.
///
/// For canonical kernels this is row-wise idempotence `R^2 = R` on the
/// support.
pub fn check_self_averaging(
    kernel: &FiniteKernel,
    nu: &ProbabilityVector,
) -> Result<CheckReport, KernelError> {
    kernel.expect_same_space(nu)?;
    let masses = kernel.masses();
    let c: f64 = (0..kernel.len()).map(|x| nu.prob(x) * masses[x]).sum();
    let mut report = CheckReport::new("self_averaging", EXACT_TOL);
    let mut ignored = 0usize;
    for x in 0..kernel.len() {
        if nu.prob(x) == 0.0 {
            ignored += 1;
            continue;
        }
        for y in 0..kernel.len() {
            let lhs: f64 = (0..kernel.len())
                .map(|z| kernel.rows[x].weight(z) * kernel.rows[z].weight(y))
                .sum();
            report.observe(
                (lhs - c * kernel.rows[x].weight(y)).abs(),
                "R_x R differs from c R_x",
                vec![
                    kernel.space.label(x).to_string(),
                    kernel.space.label(y).to_string(),
                ],
            );
        }
    }
    report.detail("c", c);
    report.detail("ignored_zero_nu_states", ignored as f64);
    Ok(report.finalize())
}

/// Groups states whose canonical rows coincide within `EXACT_TOL`
/// componentwise; all null states share one zero row and hence one block.
///
/// The result is the finest partition whose blocks the kernel cannot
/// distinguish, i.e. the atoms of the sigma-algebra generated by
/// `x -> R_x`.
pub fn atoms_of_kernel(kernel: &FiniteKernel) -> Partition {
    let canonical = canonicalize(kernel);
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for x in 0..canonical.len() {
        let row = canonical.rows[x].weights();
        let found = blocks.iter_mut().find(|b| {
            let rep = canonical.rows[b[0]].weights();
            row.iter().zip(rep).all(|(a, b)| (a - b).abs() <= EXACT_TOL)
        });
        match found {
            Some(b) => b.push(x),
            None => blocks.push(vec![x]),
        }
    }
    Partition::new(canonical.space.clone(), blocks).expect("grouping covers every state")
}

/// Checks properness w.r.t. a partition: for every `x` with `nu(x) > 0` and
/// `f(x) > 0`, the canonical row `x` puts mass 1 on `block_of(x)`.
pub fn check_proper(
    kernel: &FiniteKernel,
    nu: &ProbabilityVector,
    partition: &Partition,
) -> Result<CheckReport, KernelError> {
    kernel.expect_same_space(nu)?;
    if partition.space() != &kernel.space {
        return Err(KernelError::SpaceMismatch);
    }
    let canonical = canonicalize(kernel);
    let masses = kernel.masses();
    let mut report = CheckReport::new("proper", EXACT_TOL);
    let mut ignored = 0usize;
    let mut null_skipped = 0usize;
    for x in 0..kernel.len() {
        if masses[x] <= EXACT_TOL {
            null_skipped += 1;
            continue;
        }
        if nu.prob(x) == 0.0 {
            ignored += 1;
            continue;
        }
        let own = canonical.rows[x].mass_of(partition.block(partition.block_of(x)));
        report.observe(
            (1.0 - own).abs(),
            "canonical row does not concentrate on its own block",
            vec![kernel.space.label(x).to_string()],
        );
    }
    report.detail("ignored_zero_nu_states", ignored as f64);
    report.detail("null_state_count", null_skipped as f64);
    Ok(report.finalize())
}

/// Result of [`decompose_blocks`]: the class partition when the kernel has
/// exchangeable block structure, and the failing witness otherwise.
#[derive(Debug, Clone, Serialize)]
pub struct Decomposition {
    pub report: CheckReport,
    /// Closed classes over `Z^c` plus, when `Z` is non-empty, one flagged
    /// null block; present only when the decomposition succeeded.
    pub partition: Option<Partition>,
    /// Index of the null block inside `partition`, when `Z` is non-empty.
    pub null_block: Option<usize>,
}

/// Strongly connected components of a directed graph given by adjacency
/// lists, via Kosaraju's two-pass depth-first search.
fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    // Iterative DFS recording finish order.
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        seen[start] = true;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < adj[v].len() {
                let w = adj[v][*next];
                *next += 1;
                if !seen[w] {
                    seen[w] = true;
                    stack.push((w, 0));
                }
            } else {
                order.push(v);
                stack.pop();
            }
        }
    }
    let mut radj = vec![Vec::new(); n];
    for (v, outs) in adj.iter().enumerate() {
        for &w in outs {
            radj[w].push(v);
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut components = Vec::new();
    for &start in order.iter().rev() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = vec![start];
        comp[start] = id;
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &w in &radj[v] {
                if comp[w] == usize::MAX {
                    comp[w] = id;
                    members.push(w);
                    stack.push(w);
                }
            }
        }
        components.push(members);
    }
    components
}

/// Decomposes a kernel into closed communicating classes with exchangeable
/// row structure.
///
/// On the canonical kernel restricted to `Z^c`, the closed communicating
/// classes are the candidate blocks; the decomposition passes iff every
/// state of `Z^c` lies in a closed class and, within each class, all rows
/// are identical and equal `normalize(nu restricted to the class)`. `Z`, if
/// non-empty, is reported as a separate flagged block.
///
/// Requires `nu(x) > 0` for every state.
pub fn decompose_blocks(
    kernel: &FiniteKernel,
    nu: &ProbabilityVector,
) -> Result<Decomposition, KernelError> {
    kernel.expect_same_space(nu)?;
    if (0..kernel.len()).any(|x| nu.prob(x) <= 0.0) {
        return Err(KernelError::PositiveSupportRequired);
    }
    let canonical = canonicalize(kernel);
    let null = kernel.null_states();
    let is_null: Vec<bool> = {
        let mut v = vec![false; kernel.len()];
        for &x in &null {
            v[x] = true;
        }
        v
    };
    let positive: Vec<usize> = (0..kernel.len()).filter(|&x| !is_null[x]).collect();
    let mut report = CheckReport::new("decompose_blocks", EXACT_TOL);
    report.detail("null_state_count", null.len() as f64);
    if positive.is_empty() {
        report.observe(f64::INFINITY, "every row is null", vec![]);
        return Ok(Decomposition {
            report: report.finalize(),
            partition: None,
            null_block: None,
        });
    }

    // Digraph on Z^c: x -> y iff the canonical row x charges y.
    let pos_index: BTreeMap<usize, usize> = positive.iter().cloned().zip(0..).collect();
    let adj: Vec<Vec<usize>> = positive
        .iter()
        .map(|&x| {
            positive
                .iter()
                .filter(|&&y| canonical.rows[x].weight(y) > EXACT_TOL)
                .map(|&y| pos_index[&y])
                .collect()
        })
        .collect();
    let components = strongly_connected_components(&adj);
    let comp_of: Vec<usize> = {
        let mut v = vec![usize::MAX; positive.len()];
        for (id, members) in components.iter().enumerate() {
            for &m in members {
                v[m] = id;
            }
        }
        v
    };

    // A class is closed when no member's row leaks to another class.
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for members in &components {
        let closed = members
            .iter()
            .all(|&m| adj[m].iter().all(|&w| comp_of[w] == comp_of[m]));
        let states: Vec<usize> = members.iter().map(|&m| positive[m]).collect();
        if !closed {
            report.observe(
                f64::INFINITY,
                "state communicates out of its class (not in any closed class)",
                states
                    .iter()
                    .map(|&x| kernel.space.label(x).to_string())
                    .collect(),
            );
            return Ok(Decomposition {
                report: report.finalize(),
                partition: None,
                null_block: None,
            });
        }
        classes.push(states);
    }

    // Row conditions: identical within each class and equal nu(.|class).
    for class in &classes {
        let conditional = nu.as_measure().conditional(class)?;
        for &x in class {
            let row = canonical.rows[x].weights();
            for y in 0..kernel.len() {
                report.observe(
                    (row[y] - conditional.prob(y)).abs(),
                    "canonical row differs from nu(.|class)",
                    vec![
                        kernel.space.label(x).to_string(),
                        kernel.space.label(y).to_string(),
                    ],
                );
            }
        }
    }
    let report = report.finalize();
    if !report.passed {
        return Ok(Decomposition {
            report,
            partition: None,
            null_block: None,
        });
    }

    let mut blocks = classes;
    if !null.is_empty() {
        blocks.push(null.clone());
    }
    let partition = Partition::new(kernel.space.clone(), blocks)?;
    let null_block = if null.is_empty() {
        None
    } else {
        Some(partition.block_of(null[0]))
    };
    Ok(Decomposition {
        report,
        partition: Some(partition),
        null_block,
    })
}

/// Builds the exchangeable kernel determined by a partition and an optional
/// null set:
///
/// ```text
/// R_x = nu(Z^c) * nu(. | block_of(x)) + nu(Z) * nu(. | Z)   for x in Z^c
/// R_x = 0                                                    for x in Z
/// ```
///
/// `Z` must be a union of blocks of `P` with `nu(Z) < 1`, and every block
/// off `Z` must carry positive `nu`-mass. With `Z` empty this is the
/// block-diagonal (k-color) construction with rows `nu(. | block)`.
pub fn exchangeable_kernel_from_partition(
    nu: &ProbabilityVector,
    partition: &Partition,
    null_set: Option<&[usize]>,
) -> Result<FiniteKernel, KernelError> {
    if partition.space() != nu.space() {
        return Err(KernelError::SpaceMismatch);
    }
    let space = nu.space().clone();
    let k = space.len();
    let z: Vec<usize> = {
        let mut z = null_set.unwrap_or(&[]).to_vec();
        z.sort_unstable();
        z.dedup();
        if let Some(&bad) = z.iter().find(|&&x| x >= k) {
            return Err(KernelError::BadNullSet(format!(
                "state index {bad} out of range"
            )));
        }
        z
    };
    let in_z = {
        let mut v = vec![false; k];
        for &x in &z {
            v[x] = true;
        }
        v
    };
    // Z must not straddle blocks, and off-Z blocks need positive mass.
    for block in partition.blocks() {
        let inside = block.iter().filter(|&&x| in_z[x]).count();
        if inside != 0 && inside != block.len() {
            return Err(KernelError::BadPartition(format!(
                "block {:?} straddles the null-set boundary",
                block
                    .iter()
                    .map(|&x| space.label(x).to_string())
                    .collect::<Vec<_>>()
            )));
        }
        if inside == 0 && nu.prob_of(block) <= EXACT_TOL {
            return Err(KernelError::BadPartition(format!(
                "block {:?} has zero nu-mass",
                block
                    .iter()
                    .map(|&x| space.label(x).to_string())
                    .collect::<Vec<_>>()
            )));
        }
    }
    let z_mass = nu.prob_of(&z);
    if z_mass >= 1.0 - EXACT_TOL {
        return Err(KernelError::BadNullSet(format!(
            "nu(Z) = {z_mass} leaves no positive part"
        )));
    }
    let zc_mass = 1.0 - z_mass;
    let z_conditional: Option<FiniteMeasure> = if z_mass > EXACT_TOL {
        Some(
            nu.as_measure()
                .conditional(&z)?
                .into_measure()
                .scaled(z_mass)?,
        )
    } else {
        None
    };
    let mut rows = Vec::with_capacity(k);
    for x in 0..k {
        if in_z[x] {
            rows.push(FiniteMeasure::zero(space.clone()));
            continue;
        }
        let block = partition.block(partition.block_of(x));
        let mut row = nu
            .as_measure()
            .conditional(block)?
            .into_measure()
            .scaled(zc_mass)?;
        if let Some(zc) = &z_conditional {
            row = row.plus(zc)?;
        }
        rows.push(row);
    }
    FiniteKernel::new(space, rows)
}
