//! Kernels on general spaces given only through sampling procedures.
//!
//! Points live on the real line. A [`GeneralKernel`] bundles a base sampler
//! for `nu`, a mass function `f`, a sampler for the normalized row
//! `R_x / f(x)`, and an optional atom map assigning each point the label of
//! its kernel atom. Structural conditions that the finite checks verify
//! exactly are verified here statistically by [`mc_kernel_check`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diagnostics::stat;
use crate::kernel::{CheckReport, KernelError};
use crate::seed::rng_from;

/// Maximum rejection-sampling attempts before a builtin conditional sampler
/// reports failure.
const MAX_REJECTION_ATTEMPTS: usize = 1_000_000;

type BaseFn = dyn Fn(&mut ChaCha8Rng) -> Result<f64, String> + Send + Sync;
type MassFn = dyn Fn(f64) -> f64 + Send + Sync;
type CondFn = dyn Fn(f64, &mut ChaCha8Rng) -> Result<f64, String> + Send + Sync;
type AtomFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A reinforcement kernel on the real line described by procedures.
///
/// Procedures must be safe to call from multiple threads; each caller
/// supplies its own RNG, seeded through [`crate::seed`].
pub struct GeneralKernel {
    base_sampler: Box<BaseFn>,
    mass_fn: Box<MassFn>,
    conditional_sampler: Box<CondFn>,
    atom_map: Option<Box<AtomFn>>,
}

impl std::fmt::Debug for GeneralKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneralKernel")
            .field("atom_map", &self.atom_map.is_some())
            .finish_non_exhaustive()
    }
}

impl GeneralKernel {
    pub fn new(
        base_sampler: Box<BaseFn>,
        mass_fn: Box<MassFn>,
        conditional_sampler: Box<CondFn>,
    ) -> Self {
        GeneralKernel {
            base_sampler,
            mass_fn,
            conditional_sampler,
            atom_map: None,
        }
    }

    pub fn with_atom_map(mut self, atom_map: Box<AtomFn>) -> Self {
        self.atom_map = Some(atom_map);
        self
    }

    /// Draws a point from the base measure `nu`.
    pub fn sample_base(&self, rng: &mut ChaCha8Rng) -> Result<f64, KernelError> {
        (self.base_sampler)(rng).map_err(KernelError::SamplerFailure)
    }

    /// Row mass `f(x)`; clamps negatives reported by the procedure to an
    /// error instead of silently proceeding.
    pub fn mass(&self, x: f64) -> Result<f64, KernelError> {
        let m = (self.mass_fn)(x);
        if !(m >= 0.0) || !m.is_finite() {
            return Err(KernelError::SamplerFailure(format!(
                "mass function returned {m} at {x}"
            )));
        }
        Ok(m)
    }

    /// Draws from the normalized row `R_x / f(x)`.
    pub fn sample_conditional(&self, x: f64, rng: &mut ChaCha8Rng) -> Result<f64, KernelError> {
        (self.conditional_sampler)(x, rng).map_err(KernelError::SamplerFailure)
    }

    pub fn has_atom_map(&self) -> bool {
        self.atom_map.is_some()
    }

    /// Label of the kernel atom containing `x`, when an atom map is given.
    pub fn atom(&self, x: f64) -> Option<f64> {
        self.atom_map.as_ref().map(|f| f(x))
    }

    /// The delta kernel over a standard normal base: reinforcement repeats
    /// the observed point exactly.
    pub fn dirac_normal() -> Self {
        GeneralKernel::new(
            Box::new(|rng| Ok(rng.sample(StandardNormal))),
            Box::new(|_| 1.0),
            Box::new(|x, _| Ok(x)),
        )
        .with_atom_map(Box::new(|x| x))
    }

    /// The sign-symmetrized kernel `R_x = (delta_x + delta_{-x}) / 2` over a
    /// standard normal base; its atoms are the pairs `{x, -x}`.
    pub fn symmetrized_normal() -> Self {
        GeneralKernel::new(
            Box::new(|rng| Ok(rng.sample(StandardNormal))),
            Box::new(|_| 1.0),
            Box::new(|x, rng| Ok(if rng.gen_bool(0.5) { x } else { -x })),
        )
        .with_atom_map(Box::new(f64::abs))
    }

    /// The histogram kernel over a standard normal base: `R_x = nu(. | bin
    /// of x)` for the bins cut at the given ascending thresholds. The
    /// conditional sampler redraws from the base until it lands in the bin
    /// of `x`.
    pub fn histogram_normal(cuts: Vec<f64>) -> Result<Self, KernelError> {
        if cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(KernelError::HypothesisViolated(
                "histogram cuts must be strictly ascending".to_string(),
            ));
        }
        let bin = {
            let cuts = cuts.clone();
            move |x: f64| cuts.iter().filter(|&&c| c <= x).count() as f64
        };
        let bin_for_cond = bin.clone();
        Ok(GeneralKernel::new(
            Box::new(|rng| Ok(rng.sample(StandardNormal))),
            Box::new(|_| 1.0),
            Box::new(move |x, rng| {
                let target = bin_for_cond(x);
                for _ in 0..MAX_REJECTION_ATTEMPTS {
                    let y: f64 = rng.sample(StandardNormal);
                    if bin_for_cond(y) == target {
                        return Ok(y);
                    }
                }
                Err(format!("no draw fell in bin {target} of {x}"))
            }),
        )
        .with_atom_map(Box::new(bin)))
    }

    /// A deliberately non-stationary kernel: the conditional sampler ignores
    /// its input and draws from the base shifted by `shift`.
    pub fn shifted_normal(shift: f64) -> Self {
        GeneralKernel::new(
            Box::new(|rng| Ok(rng.sample(StandardNormal))),
            Box::new(|_| 1.0),
            Box::new(move |_, rng| {
                let y: f64 = rng.sample(StandardNormal);
                Ok(y + shift)
            }),
        )
    }
}

/// A named measurable test set for Monte Carlo checks.
pub struct TestSet {
    pub name: String,
    pub contains: Box<dyn Fn(f64) -> bool + Send + Sync>,
}

impl std::fmt::Debug for TestSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestSet").field("name", &self.name).finish()
    }
}

impl TestSet {
    pub fn new(name: impl Into<String>, contains: Box<dyn Fn(f64) -> bool + Send + Sync>) -> Self {
        TestSet {
            name: name.into(),
            contains,
        }
    }

    /// The half line `(-inf, t]`.
    pub fn below(t: f64) -> Self {
        TestSet::new(format!("(-inf,{t}]"), Box::new(move |x| x <= t))
    }
}

/// Two-sample standardized difference of indicator frequencies, with the
/// pooled-variance standard error.
pub(crate) fn standardized_diff(p1: f64, p2: f64, n: usize) -> f64 {
    let pooled = 0.5 * (p1 + p2);
    let var = 2.0 * pooled * (1.0 - pooled) / n as f64;
    if var <= 0.0 {
        return if p1 == p2 { 0.0 } else { f64::INFINITY };
    }
    (p1 - p2).abs() / var.sqrt()
}

/// Statistically checks stationarity and self-averaging of a
/// sampler-defined kernel.
///
/// Three independent batches of `n` draws are taken: points `x ~ nu`, one
/// reinforcement step `x -> y`, and two steps `x -> y -> z`. For each test
/// set `A`, stationarity compares the frequency of `y in A` against
/// `x in A`, and self-averaging compares `z in A` against `y in A`. The
/// check passes iff every standardized residual is at most
/// [`stat::SE_THRESHOLD`] standard errors; the report records estimates and
/// residuals per test set.
pub fn mc_kernel_check(
    kernel: &GeneralKernel,
    test_sets: &[TestSet],
    n: usize,
    seed: u64,
) -> Result<CheckReport, KernelError> {
    const MIN_SAMPLES: usize = 100;
    if n < MIN_SAMPLES {
        return Err(KernelError::TooFewSamples {
            min: MIN_SAMPLES,
            got: n,
        });
    }
    if test_sets.is_empty() {
        return Err(KernelError::NoTestSets);
    }

    // Batch 0: x ~ nu; batch 1: y = one step from a fresh x; batch 2: z = two
    // steps from a fresh x. Separate streams keep the three estimates
    // independent, so the pooled two-sample standard error is honest.
    let mut base_points = Vec::with_capacity(n);
    let mut one_step = Vec::with_capacity(n);
    let mut two_step = Vec::with_capacity(n);
    let mut rng0 = rng_from(seed, 0, 0);
    let mut rng1 = rng_from(seed, 1, 0);
    let mut rng2 = rng_from(seed, 2, 0);
    for _ in 0..n {
        base_points.push(kernel.sample_base(&mut rng0)?);
        let x = kernel.sample_base(&mut rng1)?;
        one_step.push(kernel.sample_conditional(x, &mut rng1)?);
        let x = kernel.sample_base(&mut rng2)?;
        let y = kernel.sample_conditional(x, &mut rng2)?;
        two_step.push(kernel.sample_conditional(y, &mut rng2)?);
    }

    let mut report = CheckReport::new("mc_kernel_check", stat::SE_THRESHOLD);
    report.detail("samples_per_batch", n as f64);
    for set in test_sets {
        let freq = |points: &[f64]| {
            points.iter().filter(|&&p| (set.contains)(p)).count() as f64 / n as f64
        };
        let p_base = freq(&base_points);
        let p_one = freq(&one_step);
        let p_two = freq(&two_step);
        let stationarity = standardized_diff(p_one, p_base, n);
        let self_averaging = standardized_diff(p_two, p_one, n);
        report.detail(&format!("{}.base_freq", set.name), p_base);
        report.detail(&format!("{}.one_step_freq", set.name), p_one);
        report.detail(&format!("{}.two_step_freq", set.name), p_two);
        report.detail(&format!("{}.stationarity_z", set.name), stationarity);
        report.detail(&format!("{}.self_averaging_z", set.name), self_averaging);
        report.observe(
            stationarity,
            "one-step frequency drifts from the base frequency",
            vec![set.name.clone()],
        );
        report.observe(
            self_averaging,
            "two-step frequency drifts from the one-step frequency",
            vec![set.name.clone()],
        );
    }
    Ok(report.finalize())
}

/// Statistically checks that the conditional sampler never leaves the atom
/// of its input: any observed label mismatch fails the check.
pub fn mc_atom_consistency(
    kernel: &GeneralKernel,
    n: usize,
    seed: u64,
) -> Result<CheckReport, KernelError> {
    if !kernel.has_atom_map() {
        return Err(KernelError::HypothesisViolated(
            "kernel has no atom map".to_string(),
        ));
    }
    let mut rng = rng_from(seed, 3, 0);
    let mut report = CheckReport::new("atom_consistency", 0.0);
    let mut mismatches = 0usize;
    let mut worst: Option<(f64, f64)> = None;
    for _ in 0..n {
        let x = kernel.sample_base(&mut rng)?;
        let y = kernel.sample_conditional(x, &mut rng)?;
        let (ax, ay) = (kernel.atom(x).unwrap(), kernel.atom(y).unwrap());
        if ax != ay {
            mismatches += 1;
            worst.get_or_insert((x, y));
        }
    }
    report.detail("pairs_checked", n as f64);
    report.detail("mismatches", mismatches as f64);
    if let Some((x, y)) = worst {
        report.observe(
            mismatches as f64,
            "conditional draw left the atom of its input",
            vec![format!("{x}"), format!("{y}")],
        );
    }
    Ok(report.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_kernel_passes() {
        let kernel = GeneralKernel::dirac_normal();
        let sets = [TestSet::below(-1.0), TestSet::below(0.0), TestSet::below(1.0)];
        let report = mc_kernel_check(&kernel, &sets, 20_000, 7).unwrap();
        assert!(report.passed, "residual {}", report.max_residual);
    }

    #[test]
    fn symmetrized_kernel_passes_interval_checks() {
        let kernel = GeneralKernel::symmetrized_normal();
        let sets = [TestSet::below(-1.0), TestSet::below(0.0), TestSet::below(1.0)];
        let report = mc_kernel_check(&kernel, &sets, 100_000, 11).unwrap();
        assert!(report.passed, "residual {}", report.max_residual);
        assert!(mc_atom_consistency(&kernel, 10_000, 11).unwrap().passed);
    }

    #[test]
    fn shifted_kernel_fails_stationarity_loudly() {
        // Shift 0.2 moves the mass of (-inf, 0] by about 0.079, which is
        // around 35 standard errors at 1e5 samples per batch.
        let kernel = GeneralKernel::shifted_normal(0.2);
        let sets = [TestSet::below(0.0)];
        let report = mc_kernel_check(&kernel, &sets, 100_000, 5).unwrap();
        assert!(!report.passed);
        assert!(report.max_residual > 10.0);
    }

    #[test]
    fn histogram_kernel_stays_in_bin() {
        let kernel = GeneralKernel::histogram_normal(vec![-1.0, 0.0, 1.0]).unwrap();
        assert!(mc_atom_consistency(&kernel, 5_000, 3).unwrap().passed);
        let sets = [TestSet::below(-0.5), TestSet::below(0.5)];
        let report = mc_kernel_check(&kernel, &sets, 20_000, 3).unwrap();
        assert!(report.passed, "residual {}", report.max_residual);
    }

    #[test]
    fn histogram_rejects_unsorted_cuts() {
        assert!(GeneralKernel::histogram_normal(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn atom_mismatch_is_detected() {
        // Conditional draws a fresh point, so atoms (identity labels) differ.
        let broken = GeneralKernel::new(
            Box::new(|rng| Ok(rng.sample(StandardNormal))),
            Box::new(|_| 1.0),
            Box::new(|_, rng| Ok(rng.sample(StandardNormal))),
        )
        .with_atom_map(Box::new(|x| x));
        let report = mc_atom_consistency(&broken, 1_000, 9).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn sampler_failures_propagate() {
        let failing = GeneralKernel::new(
            Box::new(|_| Err("broken base".to_string())),
            Box::new(|_| 1.0),
            Box::new(|x, _| Ok(x)),
        );
        let sets = [TestSet::below(0.0)];
        assert!(matches!(
            mc_kernel_check(&failing, &sets, 1_000, 1),
            Err(KernelError::SamplerFailure(_))
        ));
    }

    #[test]
    fn input_validation() {
        let kernel = GeneralKernel::dirac_normal();
        let sets = [TestSet::below(0.0)];
        assert!(matches!(
            mc_kernel_check(&kernel, &sets, 10, 1),
            Err(KernelError::TooFewSamples { .. })
        ));
        assert!(matches!(
            mc_kernel_check(&kernel, &[], 1_000, 1),
            Err(KernelError::NoTestSets)
        ));
    }
}
