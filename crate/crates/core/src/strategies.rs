//! School interaction policies.
//!
//! A truthful school gives every matched student the best outcome it can. An
//! attacking school splits its students into *cheap* ones (help needed at most
//! the threshold) and *expensive* ones; cheap students still get the best
//! outcome, expensive ones get the best outcome minus `level`% of the maximal
//! rating, never less than their entry level.
//!
//! The threshold is derived from the market: how many students the school
//! wants, halved-and-pooled across schools to account for competition, then
//! matched against the expected number of cheap arrivals under the entry
//! distribution.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::market::{AttributeVector, School, SchoolId, UtilitySign};
use crate::scalar::{Scalar, MAX_RATING};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategyKind<T> {
    Truthful,
    /// `level` is in percent of the maximal rating; `threshold` in units of help.
    Attack {
        level: T,
        threshold: T,
    },
}

impl<T: Scalar> StrategyKind<T> {
    pub fn level(&self) -> T {
        match self {
            StrategyKind::Truthful => T::zero(),
            StrategyKind::Attack { level, .. } => *level,
        }
    }
}

/// Entry levels are `clamp(round(N(mean, std)), 0, 5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryDistribution {
    pub mean: f64,
    pub std: f64,
}

impl EntryDistribution {
    /// Probability of each level `0..=5` for one component.
    pub fn pmf(&self) -> [f64; 6] {
        let mut pmf = [0.0; 6];
        if self.std <= 0.0 {
            let level = self.mean.round().clamp(0.0, MAX_RATING) as usize;
            pmf[level] = 1.0;
            return pmf;
        }
        let normal = Normal::new(self.mean, self.std).expect("positive std");
        let mut below = 0.0;
        for (v, p) in pmf.iter_mut().enumerate().take(5) {
            let upper = normal.cdf(v as f64 + 0.5);
            *p = upper - below;
            below = upper;
        }
        pmf[5] = 1.0 - below;
        pmf
    }

    /// Expected value of one component.
    pub fn expected_level(&self) -> f64 {
        self.pmf()
            .iter()
            .enumerate()
            .map(|(v, p)| v as f64 * p)
            .sum()
    }

    /// Distribution of the total help `sum_i (5 - entry_i)` over `dims`
    /// independent components; index is the help amount `0..=5*dims`.
    pub fn help_pmf(&self, dims: usize) -> Vec<f64> {
        let per_component: Vec<f64> = self.pmf().iter().rev().copied().collect();
        let mut total = vec![1.0];
        for _ in 0..dims.max(1) {
            let mut next = vec![0.0; total.len() + per_component.len() - 1];
            for (i, a) in total.iter().enumerate() {
                for (j, b) in per_component.iter().enumerate() {
                    next[i + j] += a * b;
                }
            }
            total = next;
        }
        total
    }
}

/// Market facts a school uses to size its attack.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPolicy {
    pub entry: EntryDistribution,
    pub dims: usize,
    pub n_students: usize,
    /// Capacities of all schools, indexed by school id.
    pub capacities: Vec<usize>,
    pub utility_sign: UtilitySign,
}

impl ThresholdPolicy {
    pub fn n_schools(&self) -> usize {
        self.capacities.len()
    }
}

/// How many students the school would like to receive.
pub fn desired_students(school: SchoolId, policy: &ThresholdPolicy) -> usize {
    let capacity = policy.capacities[school.0];
    match policy.utility_sign {
        UtilitySign::Positive => policy.n_students.min(capacity),
        UtilitySign::Negative => {
            let others: usize = policy
                .capacities
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != school.0)
                .map(|(_, c)| c)
                .sum();
            capacity.min(policy.n_students.saturating_sub(others))
        }
    }
}

/// Number of cheapest students the school aims for: half of what all schools
/// together want, rounded half-up.
pub fn attack_target(school: SchoolId, policy: &ThresholdPolicy) -> usize {
    let pooled = desired_students(school, policy) * policy.n_schools();
    pooled.div_ceil(2)
}

/// Smallest integer help level `t` whose expected count of cheap arrivals
/// reaches the attack target. `-1` when the target is zero (every student is
/// expensive); `5 * dims` when no level reaches it (every student is cheap).
pub fn compute_threshold(policy: &ThresholdPolicy, school: SchoolId) -> i32 {
    let target = attack_target(school, policy);
    if target == 0 {
        return -1;
    }
    let help = policy.entry.help_pmf(policy.dims);
    let max_help = help.len() - 1;
    let mut cumulative = 0.0;
    for (t, p) in help.iter().enumerate() {
        cumulative += p;
        if policy.n_students as f64 * cumulative >= target as f64 - 1e-9 {
            return t as i32;
        }
    }
    max_help as i32
}

/// Total help needed to bring `entry` to the school's best outcome.
pub fn help_required<T: Scalar>(entry: &AttributeVector<T>, potential: &AttributeVector<T>) -> T {
    entry
        .components()
        .iter()
        .zip(potential.components())
        .map(|(e, p)| e.max(*p) - *e)
        .sum()
}

/// Outcome a school produces for a matched student under `strategy`.
pub fn choose_outcome<T: Scalar>(
    strategy: &StrategyKind<T>,
    school: &School<T>,
    entry: &AttributeVector<T>,
) -> AttributeVector<T> {
    let best: Vec<T> = entry
        .components()
        .iter()
        .zip(school.potential.components())
        .map(|(e, p)| e.max(*p))
        .collect();
    let (level, threshold) = match strategy {
        StrategyKind::Truthful => {
            return AttributeVector::new(best).expect("best outcome on scale")
        }
        StrategyKind::Attack { level, threshold } => (*level, *threshold),
    };
    if help_required(entry, &school.potential) <= threshold {
        return AttributeVector::new(best).expect("best outcome on scale");
    }
    let withheld = T::lit(MAX_RATING) * level / T::lit(100.0);
    let reduced = entry
        .components()
        .iter()
        .zip(best)
        .map(|(e, b)| e.max(b - withheld))
        .collect();
    AttributeVector::new(reduced).expect("reduced outcome on scale")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::in_outcome_set;

    fn policy(n_students: usize, capacities: Vec<usize>, sign: UtilitySign) -> ThresholdPolicy {
        ThresholdPolicy {
            entry: EntryDistribution {
                mean: 1.0,
                std: 3.0,
            },
            dims: 1,
            n_students,
            capacities,
            utility_sign: sign,
        }
    }

    fn school(strategy: StrategyKind<f64>) -> School<f64> {
        School {
            id: SchoolId(0),
            potential: AttributeVector::max_rating(1),
            capacity: 20,
            alpha: 0.95,
            utility_sign: UtilitySign::Positive,
            strategy,
        }
    }

    fn entry(x: f64) -> AttributeVector<f64> {
        AttributeVector::new(vec![x]).unwrap()
    }

    #[test]
    fn desired_students_examples() {
        let p = policy(40, vec![80; 3], UtilitySign::Negative);
        assert_eq!(desired_students(SchoolId(0), &p), 0);
        let p = policy(40, vec![15; 3], UtilitySign::Negative);
        assert_eq!(desired_students(SchoolId(1), &p), 10);
        let p = policy(200, vec![20; 10], UtilitySign::Positive);
        assert_eq!(desired_students(SchoolId(0), &p), 20);
    }

    #[test]
    fn attack_target_examples() {
        let p = policy(40, vec![15; 3], UtilitySign::Negative);
        assert_eq!(attack_target(SchoolId(0), &p), 15);
        let p = policy(40, vec![80; 3], UtilitySign::Negative);
        assert_eq!(attack_target(SchoolId(0), &p), 0);
        let p = policy(200, vec![20; 2], UtilitySign::Positive);
        assert_eq!(attack_target(SchoolId(0), &p), 20);
    }

    #[test]
    fn threshold_extremes() {
        // Nobody wanted: everyone is expensive.
        let p = policy(200, vec![80; 10], UtilitySign::Negative);
        assert_eq!(compute_threshold(&p, SchoolId(0)), -1);
        // Capacity covers everyone: the target cannot be met, everyone is cheap.
        let p = policy(200, vec![80; 10], UtilitySign::Positive);
        assert_eq!(compute_threshold(&p, SchoolId(0)), 5);
    }

    #[test]
    fn threshold_monotone_in_target() {
        let mut last = -1;
        for cap in 0..=20 {
            let p = policy(200, vec![cap; 10], UtilitySign::Positive);
            let t = compute_threshold(&p, SchoolId(0));
            assert!(t >= last, "cap {cap}: {t} < {last}");
            last = t;
        }
    }

    #[test]
    fn pmf_sums_to_one_and_help_pmf_mirrors_it() {
        let d = EntryDistribution {
            mean: 3.2,
            std: 0.65,
        };
        let pmf = d.pmf();
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let help = d.help_pmf(1);
        for v in 0..6 {
            assert_eq!(help[5 - v], pmf[v]);
        }
        let help2 = d.help_pmf(2);
        assert_eq!(help2.len(), 11);
        assert!((help2.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_distribution() {
        let d = EntryDistribution {
            mean: 3.0,
            std: 0.0,
        };
        assert_eq!(d.pmf(), [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let d = EntryDistribution {
            mean: 10.0,
            std: 0.0,
        };
        assert_eq!(d.pmf()[5], 1.0);
    }

    #[test]
    fn choose_outcome_examples() {
        let attack = |level: f64, threshold: f64| StrategyKind::Attack { level, threshold };
        let s = school(StrategyKind::Truthful);
        let o = choose_outcome(&attack(4.0, 1.0), &s, &entry(3.0));
        assert!((o.components()[0] - 4.8).abs() < 1e-12);
        let o = choose_outcome(&attack(100.0, 1.0), &s, &entry(3.0));
        assert_eq!(o.components(), &[3.0]);
        for level in [0.0, 4.0, 50.0, 100.0] {
            let o = choose_outcome(&attack(level, 2.0), &s, &entry(3.0));
            assert_eq!(o.components(), &[5.0]);
        }
        let o = choose_outcome(&StrategyKind::Truthful, &s, &entry(3.0));
        assert_eq!(o.components(), &[5.0]);
    }

    #[test]
    fn choose_outcome_respects_low_potential() {
        let mut s = school(StrategyKind::Truthful);
        s.potential = AttributeVector::new(vec![3.0, 3.0]).unwrap();
        let e = AttributeVector::new(vec![5.0, 1.0]).unwrap();
        let o = choose_outcome(
            &StrategyKind::Attack {
                level: 10.0,
                threshold: -1.0,
            },
            &s,
            &e,
        );
        assert_eq!(o.components(), &[5.0, 2.5]);
        assert!(in_outcome_set(&o, &e, &s.potential));
    }
}
