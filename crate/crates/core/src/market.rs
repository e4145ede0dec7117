//! Agents, preferences, matchings and the outcome/utility algebra of a single
//! student–school interaction.
//!
//! An interaction between a student with entry level `a_x` and a school with
//! potential `a_y` may end anywhere in `[min(a_x, a_y), max(a_x, a_y)]`
//! (component-wise). Both sides value an outcome identically; only the school
//! pays for the help it gives, at `alpha` per unit.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{Scalar, MAX_RATING};
use crate::strategies::StrategyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StudentId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SchoolId(pub usize);

impl fmt::Display for StudentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for SchoolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ratings on the `0..=5` evaluation scale, one component per criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeVector<T> {
    components: Vec<T>,
}

impl<T: Scalar> AttributeVector<T> {
    pub fn new(components: Vec<T>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        let max = T::lit(MAX_RATING);
        if let Some(bad) = components
            .iter()
            .find(|c| !(**c >= T::zero() && **c <= max))
        {
            return Err(Error::OutOfScale {
                value: bad.as_f64(),
                max: MAX_RATING,
            });
        }
        Ok(Self { components })
    }

    /// Every component set to `level`, which must lie on the scale.
    pub fn uniform(level: T, dims: usize) -> Result<Self> {
        Self::new(vec![level; dims.max(1)])
    }

    /// The maximal potential: every component at 5.
    pub fn max_rating(dims: usize) -> Self {
        Self {
            components: vec![T::lit(MAX_RATING); dims.max(1)],
        }
    }

    pub fn dims(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[T] {
        &self.components
    }

    fn check_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: other.dims(),
            });
        }
        Ok(())
    }

    /// Euclidean distance between two vectors of equal dimension.
    pub fn distance(&self, other: &Self) -> T {
        debug_assert_eq!(self.dims(), other.dims());
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum::<T>()
            .sqrt()
    }
}

impl<T: Scalar> fmt::Display for AttributeVector<T> {
    /// Components joined by `;` so a vector fits in one CSV field.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> Interval<T> {
    pub fn contains(&self, x: T) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Per-component range of outcomes a school can produce for a student.
pub fn outcome_set<T: Scalar>(
    entry: &AttributeVector<T>,
    potential: &AttributeVector<T>,
) -> Result<Vec<Interval<T>>> {
    entry.check_dims(potential)?;
    Ok(entry
        .components
        .iter()
        .zip(&potential.components)
        .map(|(e, p)| Interval {
            lo: e.min(*p),
            hi: e.max(*p),
        })
        .collect())
}

/// True if `outcome` lies inside `outcome_set(entry, potential)`.
pub fn in_outcome_set<T: Scalar>(
    outcome: &AttributeVector<T>,
    entry: &AttributeVector<T>,
    potential: &AttributeVector<T>,
) -> bool {
    match outcome_set(entry, potential) {
        Ok(set) => {
            set.len() == outcome.dims()
                && set
                    .iter()
                    .zip(&outcome.components)
                    .all(|(iv, o)| iv.contains(*o))
        }
        Err(_) => false,
    }
}

/// How a multi-criteria outcome collapses to one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Sum,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UtilitySign {
    #[default]
    Positive,
    /// Each admitted student costs the school the maximal rating on top of the help.
    Negative,
}

pub fn outcome_value<T: Scalar>(outcome: &AttributeVector<T>, aggregation: Aggregation) -> T {
    match aggregation {
        Aggregation::Sum => outcome.components.iter().copied().sum(),
        Aggregation::Min => outcome
            .components
            .iter()
            .copied()
            .fold(T::infinity(), T::min),
    }
}

/// `v(o) - alpha * (v(o) - v(entry))`, shifted by `-5d` for negative-sign markets.
///
/// The outcome is expected to come from the student's outcome set; the formula
/// itself does not know the school's potential, use [`in_outcome_set`] to check.
pub fn school_utility<T: Scalar>(
    outcome: &AttributeVector<T>,
    entry: &AttributeVector<T>,
    alpha: T,
    sign: UtilitySign,
    aggregation: Aggregation,
) -> T {
    let value = outcome_value(outcome, aggregation);
    let help = value - outcome_value(entry, aggregation);
    let utility = value - alpha * help;
    match sign {
        UtilitySign::Positive => utility,
        UtilitySign::Negative => utility - T::lit(MAX_RATING) * T::from_count(outcome.dims()),
    }
}

/// Students bear no cost, so their utility is the outcome value itself.
pub fn student_utility<T: Scalar>(outcome: &AttributeVector<T>, aggregation: Aggregation) -> T {
    outcome_value(outcome, aggregation)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Student<T> {
    pub id: StudentId,
    pub entry: AttributeVector<T>,
    pub round: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct School<T> {
    pub id: SchoolId,
    pub potential: AttributeVector<T>,
    pub capacity: usize,
    /// Cost per unit of help, in `[0, 1)`.
    pub alpha: T,
    pub utility_sign: UtilitySign,
    pub strategy: StrategyKind<T>,
}

/// A weighted ranking over schools. `weights` is indexed by school id.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPreference<T> {
    pub owner: StudentId,
    weights: Vec<T>,
    ranking: Vec<SchoolId>,
}

impl<T: Scalar> WeightedPreference<T> {
    /// Ranks by descending weight; equal weights are ordered by ascending
    /// `tie_keys` (one key per school).
    pub fn with_tie_keys(owner: StudentId, weights: Vec<T>, tie_keys: &[u64]) -> Self {
        assert_eq!(weights.len(), tie_keys.len(), "one tie key per option");
        let mut ranking: Vec<SchoolId> = (0..weights.len()).map(SchoolId).collect();
        ranking.sort_by(|a, b| {
            weights[b.0]
                .partial_cmp(&weights[a.0])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(tie_keys[a.0].cmp(&tie_keys[b.0]))
        });
        Self {
            owner,
            weights,
            ranking,
        }
    }

    /// Ranks by descending weight with a random tie-break drawn from `rng`.
    /// Exactly one draw per option is consumed whatever the weights are.
    pub fn new<R: Rng + ?Sized>(owner: StudentId, weights: Vec<T>, rng: &mut R) -> Self {
        let keys: Vec<u64> = (0..weights.len()).map(|_| rng.random()).collect();
        Self::with_tie_keys(owner, weights, &keys)
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weight(&self, school: SchoolId) -> T {
        self.weights[school.0]
    }

    pub fn ranking(&self) -> &[SchoolId] {
        &self.ranking
    }
}

/// Assignment of the students of one round (by position) to schools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    assignment: Vec<Option<SchoolId>>,
}

impl Matching {
    pub fn unassigned(n_students: usize) -> Self {
        Self {
            assignment: vec![None; n_students],
        }
    }

    pub fn from_assignment(assignment: Vec<Option<SchoolId>>) -> Self {
        Self { assignment }
    }

    pub fn assign(&mut self, student: usize, school: Option<SchoolId>) {
        self.assignment[student] = school;
    }

    pub fn school_of(&self, student: usize) -> Option<SchoolId> {
        self.assignment[student]
    }

    pub fn assignment(&self) -> &[Option<SchoolId>] {
        &self.assignment
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn counts(&self, n_schools: usize) -> Vec<usize> {
        let mut counts = vec![0; n_schools];
        for s in self.assignment.iter().flatten() {
            counts[s.0] += 1;
        }
        counts
    }

    pub fn students_of(&self, school: SchoolId) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, s)| **s == Some(school))
            .map(|(i, _)| i)
    }

    pub fn is_feasible(&self, capacities: &[usize]) -> bool {
        self.assignment
            .iter()
            .flatten()
            .all(|s| s.0 < capacities.len())
            && self
                .counts(capacities.len())
                .iter()
                .zip(capacities)
                .all(|(n, c)| n <= c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord<T> {
    pub student: StudentId,
    pub school: SchoolId,
    pub entry: AttributeVector<T>,
    pub outcome: AttributeVector<T>,
    pub round: u64,
}

/// Append-only log of interactions, ordered by round.
#[derive(Debug, Clone, Default)]
pub struct History<T> {
    records: Vec<InteractionRecord<T>>,
}

impl<T: Scalar> History<T> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: InteractionRecord<T>) {
        if let Some(last) = self.records.last() {
            assert!(
                record.round >= last.round,
                "history must be appended in round order"
            );
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[InteractionRecord<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records with `round` in `[from, to)`.
    pub fn rounds(&self, from: u64, to: u64) -> &[InteractionRecord<T>] {
        let start = self.records.partition_point(|r| r.round < from);
        let end = self.records.partition_point(|r| r.round < to);
        &self.records[start..end.max(start)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> AttributeVector<f64> {
        AttributeVector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn outcome_set_examples() {
        let set = outcome_set(&v(&[3.0]), &v(&[5.0])).unwrap();
        assert_eq!(set, vec![Interval { lo: 3.0, hi: 5.0 }]);

        let set = outcome_set(&v(&[5.0]), &v(&[5.0])).unwrap();
        assert_eq!(set, vec![Interval { lo: 5.0, hi: 5.0 }]);

        let set = outcome_set(&v(&[5.0, 1.0]), &v(&[3.0, 3.0])).unwrap();
        assert_eq!(
            set,
            vec![Interval { lo: 3.0, hi: 5.0 }, Interval { lo: 1.0, hi: 3.0 }]
        );
    }

    #[test]
    fn outcome_set_rejects_mismatched_dims() {
        let err = outcome_set(&v(&[3.0]), &v(&[5.0, 5.0])).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 1,
                got: 2
            }
        ));
    }

    #[test]
    fn attribute_scale_enforced() {
        assert!(AttributeVector::new(vec![5.1_f64]).is_err());
        assert!(AttributeVector::new(vec![-0.1_f64]).is_err());
        assert!(AttributeVector::new(vec![f64::NAN]).is_err());
        assert!(AttributeVector::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn values() {
        assert_eq!(outcome_value(&v(&[4.8]), Aggregation::Sum), 4.8);
        assert_eq!(outcome_value(&v(&[4.8]), Aggregation::Min), 4.8);
        assert_eq!(outcome_value(&v(&[3.0, 2.0]), Aggregation::Sum), 5.0);
        assert_eq!(outcome_value(&v(&[3.0, 2.0]), Aggregation::Min), 2.0);
    }

    #[test]
    fn school_utility_examples() {
        let pos = school_utility(
            &v(&[5.0]),
            &v(&[3.0]),
            0.95,
            UtilitySign::Positive,
            Aggregation::Sum,
        );
        assert!((pos - 3.1).abs() < 1e-12);
        let neg = school_utility(
            &v(&[5.0]),
            &v(&[3.0]),
            0.95,
            UtilitySign::Negative,
            Aggregation::Sum,
        );
        assert!((neg + 1.9).abs() < 1e-12);
        for alpha in [0.0, 0.5, 0.95] {
            let u = school_utility(
                &v(&[3.0]),
                &v(&[3.0]),
                alpha,
                UtilitySign::Positive,
                Aggregation::Sum,
            );
            assert_eq!(u, 3.0);
        }
    }

    #[test]
    fn student_utility_is_the_value() {
        assert_eq!(student_utility(&v(&[4.8]), Aggregation::Sum), 4.8);
        assert_eq!(student_utility(&v(&[0.0]), Aggregation::Sum), 0.0);
        // A school paying a fixed cost of 5 for an outcome worth 100: the
        // student keeps 100, the school 95 (alpha chosen so help * alpha = 5).
        let outcome = 100.0_f64;
        let school = outcome - 0.25 * (outcome - 80.0);
        assert_eq!(school, 95.0);
    }

    #[test]
    fn multi_dimensional_help_and_value() {
        // School (3, 3), student (5, 1), outcome (3, x): value 3 + x.
        let entry = v(&[5.0, 1.0]);
        let potential = v(&[3.0, 3.0]);
        let outcome = v(&[3.0, 2.5]);
        assert!(in_outcome_set(&outcome, &entry, &potential));
        assert_eq!(outcome_value(&outcome, Aggregation::Sum), 5.5);
        assert!(!in_outcome_set(&v(&[5.0, 3.5]), &entry, &potential));
        assert!(!in_outcome_set(&v(&[2.0, 2.5]), &entry, &potential));
    }

    #[test]
    fn ranking_sorts_and_breaks_ties_by_key() {
        let p = WeightedPreference::with_tie_keys(StudentId(0), vec![3.0, 5.0, 3.0], &[9, 0, 1]);
        assert_eq!(p.ranking(), &[SchoolId(1), SchoolId(2), SchoolId(0)]);
        assert_eq!(p.weight(SchoolId(1)), 5.0);
    }

    #[test]
    fn matching_feasibility() {
        let m = Matching::from_assignment(vec![Some(SchoolId(0)), Some(SchoolId(0)), None]);
        assert!(m.is_feasible(&[2, 1]));
        assert!(!m.is_feasible(&[1, 1]));
        assert_eq!(m.counts(2), vec![2, 0]);
        assert_eq!(m.students_of(SchoolId(0)).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn history_window_slices() {
        let mut h = History::new();
        for round in 0..5u64 {
            h.push(InteractionRecord {
                student: StudentId(round),
                school: SchoolId(0),
                entry: v(&[1.0]),
                outcome: v(&[5.0]),
                round,
            });
        }
        let rounds: Vec<u64> = h.rounds(2, 5).iter().map(|r| r.round).collect();
        assert_eq!(rounds, vec![2, 3, 4]);
        assert!(h.rounds(7, 9).is_empty());
    }
}
