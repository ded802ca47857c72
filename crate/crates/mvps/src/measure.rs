//! Finite state spaces and finite measures on them.
//!
//! States are addressed by index internally; labels appear only at external
//! interfaces (configs, reports, witnesses). A [`FiniteMeasure`] is a
//! non-negative weight vector over a shared [`Space`]; a
//! [`ProbabilityVector`] additionally has total mass 1 within
//! [`crate::EXACT_TOL`].

use std::fmt;
use std::sync::Arc;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::EXACT_TOL;

/// Errors from measure construction and arithmetic.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("state space must have at least one state")]
    EmptySpace,
    #[error("duplicate state label {0:?}")]
    DuplicateLabel(String),
    #[error("expected {expected} weights, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("negative weight {value} at state {label:?}")]
    NegativeWeight { label: String, value: f64 },
    #[error("cannot normalize a measure with zero total mass")]
    ZeroMass,
    #[error("operands live on different state spaces")]
    SpaceMismatch,
    #[error("bad mixture coefficients: {0}")]
    BadCoefficients(String),
    #[error("total mass {0} is not 1 within tolerance")]
    NotNormalized(f64),
    #[error("concentration parameter must be positive, got {0}")]
    InvalidTheta(f64),
    #[error("unknown state label {0:?}")]
    UnknownLabel(String),
    #[error("state index {index} out of range for {size} states")]
    IndexOutOfRange { index: usize, size: usize },
}

/// A finite state space: an ordered list of distinct labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Space {
    labels: Vec<String>,
}

impl Space {
    /// Builds a space from distinct, non-empty labels.
    pub fn new<I, S>(labels: I) -> Result<Self, MeasureError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(MeasureError::EmptySpace);
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(MeasureError::DuplicateLabel(l.clone()));
            }
        }
        Ok(Space { labels })
    }

    /// Number of states.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Label of state `i`.
    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Index of the state with the given label.
    pub fn index_of(&self, label: &str) -> Result<usize, MeasureError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| MeasureError::UnknownLabel(label.to_string()))
    }

    /// Labels of a set of states, in the given order.
    pub fn labels_of(&self, states: &[usize]) -> Vec<String> {
        states.iter().map(|&x| self.labels[x].clone()).collect()
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.labels.join(", "))
    }
}

/// A non-negative finite measure on a [`Space`].
///
/// Weights in `[-EXACT_TOL, 0)` are clamped to zero at construction; anything
/// more negative is rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMeasure {
    space: Arc<Space>,
    weights: Vec<f64>,
}

impl FiniteMeasure {
    pub fn new(space: Arc<Space>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if weights.len() != space.len() {
            return Err(MeasureError::LengthMismatch {
                expected: space.len(),
                got: weights.len(),
            });
        }
        let mut weights = weights;
        for (i, w) in weights.iter_mut().enumerate() {
            if !w.is_finite() || *w < -EXACT_TOL {
                return Err(MeasureError::NegativeWeight {
                    label: space.label(i).to_string(),
                    value: *w,
                });
            }
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        Ok(FiniteMeasure { space, weights })
    }

    /// The zero measure.
    pub fn zero(space: Arc<Space>) -> Self {
        let weights = vec![0.0; space.len()];
        FiniteMeasure { space, weights }
    }

    /// The point mass at state `x`.
    pub fn dirac(space: Arc<Space>, x: usize) -> Result<Self, MeasureError> {
        if x >= space.len() {
            return Err(MeasureError::IndexOutOfRange {
                index: x,
                size: space.len(),
            });
        }
        let mut weights = vec![0.0; space.len()];
        weights[x] = 1.0;
        Ok(FiniteMeasure { space, weights })
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight of state `x`.
    pub fn weight(&self, x: usize) -> f64 {
        self.weights[x]
    }

    /// Total mass.
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Mass of a set of states; indices may repeat without double counting.
    pub fn mass_of(&self, states: &[usize]) -> f64 {
        let mut seen = vec![false; self.weights.len()];
        let mut s = 0.0;
        for &x in states {
            if !seen[x] {
                seen[x] = true;
                s += self.weights[x];
            }
        }
        s
    }

    /// Scales every weight by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Result<Self, MeasureError> {
        FiniteMeasure::new(
            self.space.clone(),
            self.weights.iter().map(|w| w * c).collect(),
        )
    }

    /// Pointwise sum of two measures on the same space.
    pub fn plus(&self, other: &FiniteMeasure) -> Result<Self, MeasureError> {
        if self.space != other.space {
            return Err(MeasureError::SpaceMismatch);
        }
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| a + b)
            .collect();
        Ok(FiniteMeasure {
            space: self.space.clone(),
            weights,
        })
    }

    /// The measure restricted to `states` (zero elsewhere).
    pub fn restricted(&self, states: &[usize]) -> Self {
        let mut weights = vec![0.0; self.weights.len()];
        for &x in states {
            weights[x] = self.weights[x];
        }
        FiniteMeasure {
            space: self.space.clone(),
            weights,
        }
    }

    /// Normalizes to total mass 1.
    ///
    /// Fails with [`MeasureError::ZeroMass`] when the total is below
    /// [`EXACT_TOL`], since dividing by a vanishing total only amplifies
    /// rounding noise.
    pub fn normalize(&self) -> Result<ProbabilityVector, MeasureError> {
        let total = self.total();
        if total <= EXACT_TOL {
            return Err(MeasureError::ZeroMass);
        }
        let weights = self.weights.iter().map(|w| w / total).collect();
        Ok(ProbabilityVector(FiniteMeasure {
            space: self.space.clone(),
            weights,
        }))
    }

    /// The conditional probability `m(. | states)`.
    pub fn conditional(&self, states: &[usize]) -> Result<ProbabilityVector, MeasureError> {
        self.restricted(states).normalize()
    }

    /// Indices of states with strictly positive weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len())
            .filter(|&i| self.weights[i] > 0.0)
            .collect()
    }
}

impl Serialize for FiniteMeasure {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("FiniteMeasure", 2)?;
        s.serialize_field("labels", self.space.labels())?;
        s.serialize_field("weights", &self.weights)?;
        s.end()
    }
}

/// A [`FiniteMeasure`] with total mass 1 within [`EXACT_TOL`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityVector(FiniteMeasure);

impl ProbabilityVector {
    /// Validates the unit total mass; use [`FiniteMeasure::normalize`] to
    /// renormalize instead of validating.
    pub fn new(measure: FiniteMeasure) -> Result<Self, MeasureError> {
        let total = measure.total();
        if (total - 1.0).abs() > EXACT_TOL {
            return Err(MeasureError::NotNormalized(total));
        }
        Ok(ProbabilityVector(measure))
    }

    /// The uniform distribution.
    pub fn uniform(space: Arc<Space>) -> Self {
        let k = space.len();
        let weights = vec![1.0 / k as f64; k];
        ProbabilityVector(FiniteMeasure { space, weights })
    }

    /// The point mass at state `x`.
    pub fn dirac(space: Arc<Space>, x: usize) -> Result<Self, MeasureError> {
        Ok(ProbabilityVector(FiniteMeasure::dirac(space, x)?))
    }

    pub fn as_measure(&self) -> &FiniteMeasure {
        &self.0
    }

    pub fn into_measure(self) -> FiniteMeasure {
        self.0
    }

    pub fn space(&self) -> &Arc<Space> {
        self.0.space()
    }

    pub fn weights(&self) -> &[f64] {
        self.0.weights()
    }

    /// Probability of state `x`.
    pub fn prob(&self, x: usize) -> f64 {
        self.0.weight(x)
    }

    pub fn support(&self) -> Vec<usize> {
        self.0.support()
    }

    /// Probability of a set of states.
    pub fn prob_of(&self, states: &[usize]) -> f64 {
        self.0.mass_of(states)
    }

    /// Draws a state index by inverse transform on one uniform variate.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen::<f64>();
        let mut acc = 0.0;
        let weights = self.weights();
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        // Rounding in the cumulative sum can leave u >= acc; fall back to the
        // last state with positive probability.
        (0..weights.len())
            .rev()
            .find(|&i| weights[i] > 0.0)
            .unwrap_or(weights.len() - 1)
    }
}

impl std::ops::Deref for ProbabilityVector {
    type Target = FiniteMeasure;
    fn deref(&self) -> &FiniteMeasure {
        &self.0
    }
}

/// Total variation distance between two probability vectors on one space:
/// half the L1 distance between their weight vectors.
///
/// ```
/// use std::sync::Arc;
/// use mvps::measure::{Space, FiniteMeasure, tv_distance};
/// let space = Arc::new(Space::new(["a", "b"]).unwrap());
/// let p = FiniteMeasure::new(space.clone(), vec![0.5, 0.5]).unwrap().normalize().unwrap();
/// let q = FiniteMeasure::new(space, vec![0.25, 0.75]).unwrap().normalize().unwrap();
/// assert!((tv_distance(&p, &q).unwrap() - 0.25).abs() < 1e-15);
/// ```
pub fn tv_distance(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<f64, MeasureError> {
    if p.space() != q.space() {
        return Err(MeasureError::SpaceMismatch);
    }
    let l1: f64 = p
        .weights()
        .iter()
        .zip(q.weights())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(0.5 * l1)
}

/// Convex mixture `sum_j coeffs[j] * components[j]`.
///
/// Coefficients must be non-negative and sum to 1 within [`EXACT_TOL`]; all
/// components must share one space.
pub fn mix(
    coeffs: &[f64],
    components: &[ProbabilityVector],
) -> Result<ProbabilityVector, MeasureError> {
    if coeffs.len() != components.len() {
        return Err(MeasureError::BadCoefficients(format!(
            "{} coefficients for {} components",
            coeffs.len(),
            components.len()
        )));
    }
    if components.is_empty() {
        return Err(MeasureError::BadCoefficients("empty mixture".to_string()));
    }
    if let Some(c) = coeffs.iter().find(|c| !c.is_finite() || **c < 0.0) {
        return Err(MeasureError::BadCoefficients(format!(
            "negative or non-finite coefficient {c}"
        )));
    }
    let total: f64 = coeffs.iter().sum();
    if (total - 1.0).abs() > EXACT_TOL {
        return Err(MeasureError::BadCoefficients(format!(
            "coefficients sum to {total}, expected 1"
        )));
    }
    let space = components[0].space().clone();
    let mut weights = vec![0.0; space.len()];
    for (c, comp) in coeffs.iter().zip(components) {
        if comp.space() != &space {
            return Err(MeasureError::SpaceMismatch);
        }
        for (w, v) in weights.iter_mut().zip(comp.weights()) {
            *w += c * v;
        }
    }
    ProbabilityVector::new(FiniteMeasure { space, weights })
}

/// Second product moment of a Dirichlet process with parameters
/// `(theta, nu)`: for singletons `a`, `b`,
///
/// ```text
/// E[P(a) P(b)] = (theta * nu(a) * nu(b) + nu(a if a == b else {})) / (theta + 1)
/// ```
///
/// which also equals the two-draw joint law `P(X_1 = a, X_2 = b)` of the
/// associated Polya sequence.
pub fn dp_product_moment(
    theta: f64,
    nu: &ProbabilityVector,
    a: usize,
    b: usize,
) -> Result<f64, MeasureError> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(MeasureError::InvalidTheta(theta));
    }
    let k = nu.space().len();
    for &x in &[a, b] {
        if x >= k {
            return Err(MeasureError::IndexOutOfRange { index: x, size: k });
        }
    }
    let common = if a == b { nu.prob(a) } else { 0.0 };
    Ok((theta * nu.prob(a) * nu.prob(b) + common) / (theta + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space4() -> Arc<Space> {
        Arc::new(Space::new(["1", "2", "3", "4"]).unwrap())
    }

    #[test]
    fn space_rejects_duplicates_and_empty() {
        assert_eq!(
            Space::new(Vec::<String>::new()),
            Err(MeasureError::EmptySpace)
        );
        assert_eq!(
            Space::new(["a", "a"]),
            Err(MeasureError::DuplicateLabel("a".to_string()))
        );
    }

    #[test]
    fn measure_rejects_negative_and_clamps_tiny() {
        let sp = space4();
        let err = FiniteMeasure::new(sp.clone(), vec![0.1, -0.2, 0.0, 0.0]);
        assert!(matches!(err, Err(MeasureError::NegativeWeight { .. })));
        let m = FiniteMeasure::new(sp, vec![0.1, -1e-13, 0.0, 0.0]).unwrap();
        assert_eq!(m.weight(1), 0.0);
    }

    #[test]
    fn normalize_matches_hand_value() {
        // (0.4, 0.6, 0.2, 0.3) has total 1.5.
        let m = FiniteMeasure::new(space4(), vec![0.4, 0.6, 0.2, 0.3]).unwrap();
        let p = m.normalize().unwrap();
        let want = [0.4 / 1.5, 0.6 / 1.5, 0.2 / 1.5, 0.3 / 1.5];
        for (got, want) in p.weights().iter().zip(want) {
            assert!((got - want).abs() <= EXACT_TOL);
        }
        assert!((p.total() - 1.0).abs() <= EXACT_TOL);
    }

    #[test]
    fn normalize_zero_mass_fails() {
        let m = FiniteMeasure::zero(space4());
        assert_eq!(m.normalize().unwrap_err(), MeasureError::ZeroMass);
    }

    #[test]
    fn normalize_is_idempotent() {
        let m = FiniteMeasure::new(space4(), vec![0.4, 0.6, 0.2, 0.3]).unwrap();
        let p1 = m.normalize().unwrap();
        let p2 = p1.as_measure().normalize().unwrap();
        for (a, b) in p1.weights().iter().zip(p2.weights()) {
            assert!((a - b).abs() <= EXACT_TOL);
        }
    }

    #[test]
    fn tv_distance_examples() {
        let sp = Arc::new(Space::new(["a", "b"]).unwrap());
        let p = ProbabilityVector::uniform(sp.clone());
        let q = FiniteMeasure::new(sp.clone(), vec![0.25, 0.75])
            .unwrap()
            .normalize()
            .unwrap();
        assert!((tv_distance(&p, &q).unwrap() - 0.25).abs() <= EXACT_TOL);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        let other = ProbabilityVector::uniform(space4());
        assert_eq!(
            tv_distance(&p, &other).unwrap_err(),
            MeasureError::SpaceMismatch
        );
    }

    #[test]
    fn mix_validates_and_mixes() {
        let sp = Arc::new(Space::new(["a", "b"]).unwrap());
        let nu = ProbabilityVector::uniform(sp.clone());
        let dx = ProbabilityVector::dirac(sp.clone(), 0).unwrap();
        let m = mix(&[0.5, 0.5], &[nu.clone(), dx]).unwrap();
        assert!((m.prob(0) - 0.75).abs() <= EXACT_TOL);
        assert!((m.prob(1) - 0.25).abs() <= EXACT_TOL);
        assert!(matches!(
            mix(&[0.5, 0.4], &[nu.clone(), nu.clone()]),
            Err(MeasureError::BadCoefficients(_))
        ));
        assert!(matches!(
            mix(&[1.2, -0.2], &[nu.clone(), nu]),
            Err(MeasureError::BadCoefficients(_))
        ));
    }

    #[test]
    fn dp_product_moment_uniform_two_states() {
        let sp = Arc::new(Space::new(["a", "b"]).unwrap());
        let nu = ProbabilityVector::uniform(sp);
        // (1 * 0.25 + 0.5) / 2 and (1 * 0.25 + 0) / 2.
        assert!((dp_product_moment(1.0, &nu, 0, 0).unwrap() - 0.375).abs() <= EXACT_TOL);
        assert!((dp_product_moment(1.0, &nu, 0, 1).unwrap() - 0.125).abs() <= EXACT_TOL);
        assert!(matches!(
            dp_product_moment(0.0, &nu, 0, 0),
            Err(MeasureError::InvalidTheta(_))
        ));
    }

    #[test]
    fn dp_product_moment_symmetry_and_row_sums() {
        let sp = space4();
        let nu = FiniteMeasure::new(sp, vec![0.1, 0.2, 0.3, 0.4])
            .unwrap()
            .normalize()
            .unwrap();
        let theta = 2.5;
        for a in 0..4 {
            // sum_b E[P(a) P(b)] = E[P(a)] = nu(a).
            let mut row = 0.0;
            for b in 0..4 {
                let ab = dp_product_moment(theta, &nu, a, b).unwrap();
                let ba = dp_product_moment(theta, &nu, b, a).unwrap();
                assert!((ab - ba).abs() <= EXACT_TOL);
                row += ab;
            }
            assert!((row - nu.prob(a)).abs() <= EXACT_TOL);
        }
    }

    #[test]
    fn conditional_restricts_and_normalizes() {
        let m = FiniteMeasure::new(space4(), vec![0.2, 0.3, 0.2, 0.3]).unwrap();
        let c = m.conditional(&[0, 1]).unwrap();
        assert!((c.prob(0) - 0.4).abs() <= EXACT_TOL);
        assert!((c.prob(1) - 0.6).abs() <= EXACT_TOL);
        assert_eq!(c.prob(2), 0.0);
    }
}
