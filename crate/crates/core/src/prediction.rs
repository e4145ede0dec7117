//! Prediction-informed preference formation.
//!
//! The predictor memorises the interactions of the last `window` rounds and
//! answers with the mean outcome of the `k` past students of a school whose
//! entry attributes are closest to the query. There is no fitted parameter:
//! the memorised window is the model.
//!
//! A student weighs each school by blending the (noisy) prediction with the
//! school's prestige, i.e. last year's mean outcome as the student perceives it.

use rand::Rng;

use crate::market::{
    outcome_value, Aggregation, AttributeVector, History, SchoolId, Student, WeightedPreference,
};
use crate::scalar::{Scalar, MAX_RATING};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorConfig<T> {
    /// Number of neighbours averaged.
    pub k: usize,
    /// Rounds of history kept for training.
    pub window: usize,
    /// Noise level in percent: predictions move by up to `5 * p / 100`.
    pub noise_pct: T,
}

impl<T: Scalar> Default for PredictorConfig<T> {
    fn default() -> Self {
        Self {
            k: 1,
            window: 3,
            noise_pct: T::lit(0.01),
        }
    }
}

/// Past `(entry, outcome value)` pairs, grouped by school, in history order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet<T> {
    per_school: Vec<Vec<(AttributeVector<T>, T)>>,
}

impl<T: Scalar> TrainingSet<T> {
    pub fn from_records(per_school: Vec<Vec<(AttributeVector<T>, T)>>) -> Self {
        Self { per_school }
    }

    pub fn school(&self, school: SchoolId) -> &[(AttributeVector<T>, T)] {
        self.per_school.get(school.0).map_or(&[], Vec::as_slice)
    }

    pub fn n_schools(&self) -> usize {
        self.per_school.len()
    }

    pub fn len(&self) -> usize {
        self.per_school.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Records with round in `[now - window, now - 1]`, grouped by school.
pub fn build_training_set<T: Scalar>(
    history: &History<T>,
    window: usize,
    now: u64,
    n_schools: usize,
    aggregation: Aggregation,
) -> TrainingSet<T> {
    let mut per_school = vec![Vec::new(); n_schools];
    let from = now.saturating_sub(window as u64);
    for record in history.rounds(from, now) {
        per_school[record.school.0].push((
            record.entry.clone(),
            outcome_value(&record.outcome, aggregation),
        ));
    }
    TrainingSet { per_school }
}

/// Mean outcome of the `k` nearest past students of `school`, or `None` when
/// the school has no training data. Equal distances favour earlier records;
/// with fewer than `k` records all of them are averaged.
pub fn knn_predict<T: Scalar>(
    training: &TrainingSet<T>,
    school: SchoolId,
    entry: &AttributeVector<T>,
    k: usize,
) -> Option<T> {
    let records = training.school(school);
    if records.is_empty() || k == 0 {
        return None;
    }
    // Bounded buffer of the best (distance, index) pairs, kept sorted.
    let mut best: Vec<(T, usize)> = Vec::with_capacity(k + 1);
    for (i, (past, _)) in records.iter().enumerate() {
        let d = past.distance(entry);
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        let pos = best.partition_point(|(bd, _)| *bd <= d);
        best.insert(pos, (d, i));
        best.truncate(k);
    }
    let sum: T = best.iter().map(|(_, i)| records[*i].1).sum();
    Some(sum / T::from_count(best.len()))
}

/// Adds `U(-5p/100, 5p/100)` and clamps to `[0, max_value]`. Always consumes
/// one draw, also when `p` is zero.
pub fn apply_noise<T: Scalar, R: Rng + ?Sized>(
    prediction: T,
    noise_pct: T,
    max_value: T,
    rng: &mut R,
) -> T {
    let u: f64 = rng.random_range(-1.0..=1.0);
    let half_width = T::lit(MAX_RATING) * noise_pct / T::lit(100.0);
    (prediction + half_width * T::lit(u))
        .max(T::zero())
        .min(max_value)
}

/// Mean outcome value of the school's students in round `now - 1`, or
/// `fallback` when it had none.
pub fn prestige<T: Scalar>(
    history: &History<T>,
    school: SchoolId,
    now: u64,
    aggregation: Aggregation,
    fallback: T,
) -> T {
    if now == 0 {
        return fallback;
    }
    let (sum, n) = history
        .rounds(now - 1, now)
        .iter()
        .filter(|r| r.school == school)
        .fold((T::zero(), 0usize), |(s, n), r| {
            (s + outcome_value(&r.outcome, aggregation), n + 1)
        });
    if n == 0 {
        fallback
    } else {
        sum / T::from_count(n)
    }
}

/// `trust * prediction + (1 - trust) * observation`.
pub fn integrate<T: Scalar>(prediction: T, observation: T, trust: T) -> T {
    trust * prediction + (T::one() - trust) * observation
}

/// What a student sees of the market in one round.
#[derive(Debug, Clone)]
pub struct MarketSignals<T> {
    pub training: TrainingSet<T>,
    /// Prestige per school, before the student's own observation noise.
    pub prestige: Vec<T>,
}

impl<T: Scalar> MarketSignals<T> {
    pub fn from_history(
        history: &History<T>,
        now: u64,
        n_schools: usize,
        window: usize,
        aggregation: Aggregation,
        prestige_fallback: T,
    ) -> Self {
        Self {
            training: build_training_set(history, window, now, n_schools, aggregation),
            prestige: (0..n_schools)
                .map(|s| prestige(history, SchoolId(s), now, aggregation, prestige_fallback))
                .collect(),
        }
    }

    pub fn n_schools(&self) -> usize {
        self.prestige.len()
    }
}

/// Parameters of preference formation shared by all students of a market.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceModel<T> {
    pub predictor: PredictorConfig<T>,
    pub trust: T,
    /// Noise on the student's own prestige observation, in percent.
    pub observation_noise_pct: T,
    pub aggregation: Aggregation,
    pub dims: usize,
}

/// Weighs every school and ranks them. For each school two draws are taken
/// (prediction noise, observation noise) followed by one tie-break key per
/// school, whatever data is available.
pub fn form_student_preference<T: Scalar, R: Rng + ?Sized>(
    student: &Student<T>,
    signals: &MarketSignals<T>,
    model: &PreferenceModel<T>,
    rng: &mut R,
) -> WeightedPreference<T> {
    let max_value = T::lit(MAX_RATING) * T::from_count(model.dims);
    let weights = (0..signals.n_schools())
        .map(|s| {
            let school = SchoolId(s);
            let predicted =
                knn_predict(&signals.training, school, &student.entry, model.predictor.k);
            let noisy = apply_noise(
                predicted.unwrap_or(T::zero()),
                model.predictor.noise_pct,
                max_value,
                rng,
            );
            let observed = apply_noise(
                signals.prestige[s],
                model.observation_noise_pct,
                max_value,
                rng,
            );
            match predicted {
                Some(_) => integrate(noisy, observed, model.trust),
                None => observed,
            }
        })
        .collect();
    WeightedPreference::new(student.id, weights, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{InteractionRecord, StudentId};
    use crate::rng::{stream, Phase};

    fn v(x: f64) -> AttributeVector<f64> {
        AttributeVector::new(vec![x]).unwrap()
    }

    fn record(school: usize, entry: f64, outcome: f64, round: u64) -> InteractionRecord<f64> {
        InteractionRecord {
            student: StudentId(round * 100 + school as u64),
            school: SchoolId(school),
            entry: v(entry),
            outcome: v(outcome),
            round,
        }
    }

    fn training(records: &[(f64, f64)]) -> TrainingSet<f64> {
        TrainingSet::from_records(vec![records.iter().map(|(e, o)| (v(*e), *o)).collect()])
    }

    #[test]
    fn window_arithmetic() {
        let mut h = History::new();
        for round in 0..5 {
            h.push(record(0, 1.0, 5.0, round));
        }
        let rounds_in = |ts: &TrainingSet<f64>| ts.len();
        // window 3 at round 5 keeps rounds 2, 3, 4.
        assert_eq!(
            rounds_in(&build_training_set(&h, 3, 5, 1, Aggregation::Sum)),
            3
        );
        assert!(build_training_set(&History::<f64>::new(), 1, 1, 1, Aggregation::Sum).is_empty());
        let mut short = History::new();
        for round in 0..3 {
            short.push(record(0, 1.0, 5.0, round));
        }
        assert_eq!(
            rounds_in(&build_training_set(&short, 5, 3, 1, Aggregation::Sum)),
            3
        );
    }

    #[test]
    fn training_set_partitions_by_school() {
        let mut h = History::new();
        h.push(record(0, 1.0, 5.0, 0));
        h.push(record(1, 2.0, 4.0, 0));
        h.push(record(1, 3.0, 3.0, 0));
        let ts = build_training_set(&h, 1, 1, 2, Aggregation::Sum);
        assert_eq!(ts.school(SchoolId(0)).len(), 1);
        assert_eq!(ts.school(SchoolId(1)).len(), 2);
    }

    #[test]
    fn knn_examples() {
        let ts = training(&[(3.0, 5.0)]);
        assert_eq!(knn_predict(&ts, SchoolId(0), &v(2.0), 1), Some(5.0));
        let ts = training(&[(2.0, 3.0), (2.0, 4.0), (2.0, 5.0)]);
        assert_eq!(knn_predict(&ts, SchoolId(0), &v(2.0), 3), Some(4.0));
        let ts = training(&[(1.0, 1.0), (4.0, 5.0)]);
        assert_eq!(knn_predict(&ts, SchoolId(0), &v(2.0), 1), Some(1.0));
    }

    #[test]
    fn knn_ties_prefer_earlier_records() {
        let ts = training(&[(1.0, 2.0), (3.0, 4.0)]);
        assert_eq!(knn_predict(&ts, SchoolId(0), &v(2.0), 1), Some(2.0));
        // Fewer records than k: all of them.
        assert_eq!(knn_predict(&ts, SchoolId(0), &v(2.0), 5), Some(3.0));
        assert_eq!(knn_predict(&training(&[]), SchoolId(0), &v(2.0), 1), None);
    }

    #[test]
    fn noise_bounds() {
        let mut rng = stream(5, 0, Phase::Preference, 0);
        assert_eq!(apply_noise(3.0, 0.0, 5.0, &mut rng), 3.0);
        for _ in 0..10_000 {
            let x = apply_noise(2.5, 100.0, 5.0, &mut rng);
            assert!((0.0..=5.0).contains(&x));
            let y: f64 = apply_noise(2.5, 1.0, 5.0, &mut rng);
            assert!((y - 2.5).abs() <= 0.05 + 1e-12);
        }
        // Clamped at the top of the scale.
        for _ in 0..100 {
            assert!(apply_noise(5.0, 10.0, 5.0, &mut rng) <= 5.0);
        }
    }

    #[test]
    fn prestige_examples() {
        let mut h = History::new();
        h.push(record(0, 1.0, 4.0, 3));
        h.push(record(0, 2.0, 5.0, 3));
        h.push(record(1, 2.0, 5.0, 3));
        assert_eq!(prestige(&h, SchoolId(0), 4, Aggregation::Sum, 1.6), 4.5);
        assert_eq!(prestige(&h, SchoolId(1), 4, Aggregation::Sum, 1.6), 5.0);
        assert_eq!(prestige(&h, SchoolId(2), 4, Aggregation::Sum, 1.6), 1.6);
        assert_eq!(prestige(&h, SchoolId(0), 5, Aggregation::Sum, 1.6), 1.6);
    }

    #[test]
    fn integrate_examples() {
        assert_eq!(integrate(100.0, 80.0, 0.5), 90.0);
        assert_eq!(integrate(100.0, 80.0, 1.0), 100.0);
        assert_eq!(integrate(100.0, 80.0, 0.0), 80.0);
        // Blending a flat 80/80 belief with predictions 100/80 ranks A first.
        let pref = WeightedPreference::with_tie_keys(
            StudentId(0),
            vec![integrate(100.0, 80.0, 0.5), integrate(80.0, 80.0, 0.5)],
            &[1, 0],
        );
        assert_eq!(pref.ranking(), &[SchoolId(0), SchoolId(1)]);
    }

    fn model(trust: f64, noise: f64) -> PreferenceModel<f64> {
        PreferenceModel {
            predictor: PredictorConfig {
                k: 1,
                window: 3,
                noise_pct: noise,
            },
            trust,
            observation_noise_pct: 0.0,
            aggregation: Aggregation::Sum,
            dims: 1,
        }
    }

    #[test]
    fn preference_with_consistent_signals() {
        let signals = MarketSignals {
            training: TrainingSet::from_records(vec![vec![(v(2.0), 5.0)], vec![(v(2.0), 3.0)]]),
            prestige: vec![5.0, 3.0],
        };
        let student = Student {
            id: StudentId(1),
            entry: v(2.0),
            round: 0,
        };
        let mut rng = stream(1, 0, Phase::Preference, 1);
        let pref = form_student_preference(&student, &signals, &model(1.0, 0.0), &mut rng);
        assert_eq!(pref.ranking(), &[SchoolId(0), SchoolId(1)]);
        assert_eq!(pref.weights(), &[5.0, 3.0]);
    }

    #[test]
    fn preference_falls_back_to_observation() {
        let signals = MarketSignals {
            training: TrainingSet::from_records(vec![vec![], vec![(v(2.0), 5.0)]]),
            prestige: vec![4.0, 1.0],
        };
        let student = Student {
            id: StudentId(1),
            entry: v(2.0),
            round: 0,
        };
        let mut rng = stream(1, 0, Phase::Preference, 1);
        let pref = form_student_preference(&student, &signals, &model(1.0, 0.0), &mut rng);
        assert_eq!(pref.weights(), &[4.0, 5.0]);
    }
}
