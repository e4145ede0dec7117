//! The repeated market: every round a fresh cohort of students arrives, forms
//! preferences from the predictor and prestige, gets matched, and interacts
//! with its school. Interactions feed the history the next rounds learn from.
//!
//! A simulation starts with `warmup_rounds` rounds of uniformly random
//! matching and truthful interaction so that the predictor and prestige have
//! data; those rounds are recorded in the history but never reported.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::market::{
    outcome_value, school_utility, Aggregation, AttributeVector, History, InteractionRecord,
    Matching, School, SchoolId, Student, StudentId, UtilitySign,
};
use crate::mechanisms::{
    boston, deferred_acceptance, serial_dictatorship, student_ordering, Mechanism, MechanismKind,
    OrderingMode, Priorities, SchoolSide,
};
use crate::prediction::{form_student_preference, MarketSignals, PredictorConfig, PreferenceModel};
use crate::rng::{stream, Phase};
use crate::scalar::{Scalar, MAX_RATING};
use crate::strategies::{
    choose_outcome, compute_threshold, EntryDistribution, StrategyKind, ThresholdPolicy,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig<T> {
    pub n_schools: usize,
    /// Students per round are `students_per_school * n_schools`.
    pub students_per_school: usize,
    /// Students per available seat; each school seats `students_per_school / competition`.
    pub competition: T,
    pub entry_mean: T,
    pub entry_std: T,
    pub dims: usize,
    pub alpha: T,
    pub utility_sign: UtilitySign,
    pub aggregation: Aggregation,
    pub mechanism: Mechanism,
    /// One lottery shared by all schools instead of one per school.
    pub common_lottery: bool,
    pub predictor: PredictorConfig<T>,
    pub trust: T,
    /// Noise on students' own prestige observation, in percent.
    pub observation_noise_pct: T,
    /// Attack level per school in percent; `None` plays truthfully.
    pub attack_levels: Vec<Option<T>>,
    pub rounds: usize,
    pub warmup_rounds: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for SimulationConfig<T> {
    fn default() -> Self {
        let predictor = PredictorConfig::default();
        Self {
            n_schools: 10,
            students_per_school: 20,
            competition: T::one(),
            entry_mean: T::one(),
            entry_std: T::lit(3.0),
            dims: 1,
            alpha: T::lit(0.95),
            utility_sign: UtilitySign::Positive,
            aggregation: Aggregation::Sum,
            mechanism: Mechanism::new(MechanismKind::Rsd),
            common_lottery: false,
            predictor,
            trust: T::one(),
            observation_noise_pct: T::one(),
            attack_levels: vec![None; 10],
            rounds: 100,
            warmup_rounds: predictor.window,
            seed: 0,
        }
    }
}

impl<T: Scalar> SimulationConfig<T> {
    /// Default market with `n_schools` schools, all truthful.
    pub fn with_schools(n_schools: usize) -> Self {
        Self {
            n_schools,
            attack_levels: vec![None; n_schools],
            ..Self::default()
        }
    }

    pub fn n_students(&self) -> usize {
        self.students_per_school * self.n_schools
    }

    pub fn capacity(&self) -> usize {
        (T::from_count(self.students_per_school) / self.competition)
            .round()
            .to_usize()
            .unwrap_or(0)
    }

    pub fn entry_distribution(&self) -> EntryDistribution {
        EntryDistribution {
            mean: self.entry_mean.as_f64(),
            std: self.entry_std.as_f64(),
        }
    }

    pub fn threshold_policy(&self) -> ThresholdPolicy {
        ThresholdPolicy {
            entry: self.entry_distribution(),
            dims: self.dims,
            n_students: self.n_students(),
            capacities: vec![self.capacity(); self.n_schools],
            utility_sign: self.utility_sign,
        }
    }

    /// Same market with school `school` attacking at `level` (or truthful for `None`).
    pub fn with_attack(mut self, school: usize, level: Option<T>) -> Self {
        self.attack_levels[school] = level;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: T| x >= T::zero() && x <= T::one();
        if self.n_schools == 0 {
            return Err(Error::config("n_schools", "must be at least 1"));
        }
        if self.students_per_school == 0 {
            return Err(Error::config("students_per_school", "must be at least 1"));
        }
        if self.competition.is_nan()
            || self.competition <= T::zero()
            || !self.competition.is_finite()
        {
            return Err(Error::config("competition", "must be a positive number"));
        }
        let capacity = self.capacity();
        if capacity == 0 {
            return Err(Error::config(
                "competition",
                format!(
                    "capacity {} / {} rounds to zero seats",
                    self.students_per_school, self.competition
                ),
            ));
        }
        let implied = T::from_count(capacity * self.n_schools) * self.competition;
        let slack = self.competition * T::from_count(self.n_schools);
        if (implied - T::from_count(self.n_students())).abs() > slack {
            return Err(Error::config(
                "competition",
                format!(
                    "capacity {capacity} x {} schools inconsistent with {} students",
                    self.n_schools,
                    self.n_students()
                ),
            ));
        }
        if self.dims == 0 {
            return Err(Error::config("attributes", "must be at least 1"));
        }
        if self.entry_std.is_nan() || self.entry_std < T::zero() {
            return Err(Error::config("sigma", "must be non-negative"));
        }
        if !(self.alpha >= T::zero() && self.alpha < T::one()) {
            return Err(Error::config("alpha", "must be in [0, 1)"));
        }
        if !in_unit(self.trust) {
            return Err(Error::config("trust", "must be in [0, 1]"));
        }
        if self.predictor.k == 0 {
            return Err(Error::config("neighbours", "must be at least 1"));
        }
        if self.predictor.window == 0 {
            return Err(Error::config("training_rounds", "must be at least 1"));
        }
        if self.predictor.noise_pct.is_nan() || self.predictor.noise_pct < T::zero() {
            return Err(Error::config("prediction_noise", "must be non-negative"));
        }
        if self.observation_noise_pct.is_nan() || self.observation_noise_pct < T::zero() {
            return Err(Error::config("observation_noise", "must be non-negative"));
        }
        if self.attack_levels.len() != self.n_schools {
            return Err(Error::config(
                "attack_levels",
                format!(
                    "expected {} entries, got {}",
                    self.n_schools,
                    self.attack_levels.len()
                ),
            ));
        }
        if let Some(level) = self
            .attack_levels
            .iter()
            .flatten()
            .find(|l| !(**l >= T::zero() && **l <= T::lit(100.0)))
        {
            return Err(Error::config(
                "attack_level",
                format!("{level} outside [0, 100]"),
            ));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if self.warmup_rounds < self.predictor.window {
            return Err(Error::config(
                "warmup_rounds",
                format!(
                    "must be at least training_rounds ({})",
                    self.predictor.window
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentOutcome<T> {
    pub id: StudentId,
    pub entry: AttributeVector<T>,
    /// Entry level for unassigned students.
    pub outcome: AttributeVector<T>,
    pub school: Option<SchoolId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult<T> {
    /// 1-based index among measured rounds.
    pub round: usize,
    pub matching: Matching,
    /// Sum of school utility over each school's matched students.
    pub school_utilities: Vec<T>,
    pub n_matched: Vec<usize>,
    pub students: Vec<StudentOutcome<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult<T> {
    pub rounds: Vec<RoundResult<T>>,
    /// Attack level each school played (0 for truthful).
    pub levels: Vec<T>,
    pub seed: u64,
}

impl<T: Scalar> SimulationResult<T> {
    pub fn n_schools(&self) -> usize {
        self.levels.len()
    }

    /// Per-round utility of `school`, averaged with weights `discount^(t-1)`.
    pub fn mean_utility(&self, school: SchoolId, discount: T) -> T {
        let mut weight = T::one();
        let (mut num, mut den) = (T::zero(), T::zero());
        for r in &self.rounds {
            num = num + weight * r.school_utilities[school.0];
            den = den + weight;
            weight = weight * discount;
        }
        num / den
    }

    pub fn mean_utilities(&self, discount: T) -> Vec<T> {
        (0..self.n_schools())
            .map(|s| self.mean_utility(SchoolId(s), discount))
            .collect()
    }
}

/// `n` students with components `clamp(round(N(mean, std)), 0, 5)`.
pub fn sample_students<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    mean: T,
    std: T,
    dims: usize,
    round: u64,
    first_id: u64,
    rng: &mut R,
) -> Vec<Student<T>> {
    let normal =
        (std > T::zero()).then(|| Normal::new(mean.as_f64(), std.as_f64()).expect("finite normal"));
    let mut draw = || -> T {
        let x = match &normal {
            Some(n) => n.sample(rng),
            None => mean.as_f64(),
        };
        T::lit(x.round().clamp(0.0, MAX_RATING))
    };
    (0..n)
        .map(|i| {
            let components = (0..dims).map(|_| draw()).collect();
            Student {
                id: StudentId(first_id + i as u64),
                entry: AttributeVector::new(components).expect("clamped entry on scale"),
                round,
            }
        })
        .collect()
}

/// One repeated market, advanced round by round.
#[derive(Debug, Clone)]
pub struct Simulation<T> {
    config: SimulationConfig<T>,
    schools: Vec<School<T>>,
    history: History<T>,
    /// Global round counter, warm-up included.
    round: u64,
    prestige_fallback: T,
}

impl<T: Scalar> Simulation<T> {
    pub fn new(config: SimulationConfig<T>) -> Result<Self> {
        config.validate()?;
        let policy = config.threshold_policy();
        let capacity = config.capacity();
        let schools = config
            .attack_levels
            .iter()
            .enumerate()
            .map(|(s, level)| School {
                id: SchoolId(s),
                potential: AttributeVector::max_rating(config.dims),
                capacity,
                alpha: config.alpha,
                utility_sign: config.utility_sign,
                strategy: match level {
                    None => StrategyKind::Truthful,
                    Some(level) => StrategyKind::Attack {
                        level: *level,
                        threshold: T::lit(compute_threshold(&policy, SchoolId(s)) as f64),
                    },
                },
            })
            .collect();
        let prestige_fallback =
            T::lit(config.entry_distribution().expected_level()) * T::from_count(config.dims);
        Ok(Self {
            config,
            schools,
            history: History::new(),
            round: 0,
            prestige_fallback,
        })
    }

    pub fn config(&self) -> &SimulationConfig<T> {
        &self.config
    }

    pub fn schools(&self) -> &[School<T>] {
        &self.schools
    }

    pub fn history(&self) -> &History<T> {
        &self.history
    }

    pub fn capacities(&self) -> Vec<usize> {
        self.schools.iter().map(|s| s.capacity).collect()
    }

    fn cohort(&self) -> Vec<Student<T>> {
        let c = &self.config;
        let n = c.n_students();
        let mut rng = stream(c.seed, self.round, Phase::Sampling, 0);
        sample_students(
            n,
            c.entry_mean,
            c.entry_std,
            c.dims,
            self.round,
            self.round * n as u64,
            &mut rng,
        )
    }

    fn preference_model(&self) -> PreferenceModel<T> {
        PreferenceModel {
            predictor: self.config.predictor,
            trust: self.config.trust,
            observation_noise_pct: self.config.observation_noise_pct,
            aggregation: self.config.aggregation,
            dims: self.config.dims,
        }
    }

    fn run_mechanism(&self, students: &[Student<T>], prefs: &[Vec<SchoolId>]) -> Matching {
        let c = &self.config;
        let capacities = self.capacities();
        let values: Vec<T> = students
            .iter()
            .map(|s| outcome_value(&s.entry, c.aggregation))
            .collect();
        match c.mechanism.kind {
            MechanismKind::Sd | MechanismKind::Rsd => {
                let mode = if c.mechanism.kind == MechanismKind::Sd {
                    OrderingMode::EntryLevel
                } else {
                    OrderingMode::Random
                };
                let mut rng = stream(c.seed, self.round, Phase::Ordering, 0);
                let order = student_ordering(mode, &values, &mut rng);
                serial_dictatorship(&order, prefs, &capacities)
            }
            MechanismKind::Boston | MechanismKind::Da => {
                let mut rng = stream(c.seed, self.round, Phase::Priorities, 0);
                let priorities = match c.mechanism.school_side {
                    SchoolSide::Lottery => {
                        Priorities::lottery(students.len(), c.n_schools, c.common_lottery, &mut rng)
                    }
                    SchoolSide::TruePreference => {
                        Priorities::by_value(&values, c.n_schools, &mut rng)
                    }
                };
                if c.mechanism.kind == MechanismKind::Boston {
                    boston(prefs, &priorities, &capacities)
                } else {
                    deferred_acceptance(prefs, &priorities, &capacities)
                }
            }
        }
    }

    /// Uniformly random feasible matching: shuffled students fill the seats.
    fn random_matching(&self, n_students: usize) -> Matching {
        let mut rng = stream(self.config.seed, self.round, Phase::WarmupMatch, 0);
        let mut order: Vec<usize> = (0..n_students).collect();
        order.shuffle(&mut rng);
        let seats = self
            .schools
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.id, s.capacity));
        let mut matching = Matching::unassigned(n_students);
        for (student, school) in order.into_iter().zip(seats) {
            matching.assign(student, Some(school));
        }
        matching
    }

    /// Applies each school's strategy to its matched students, records the
    /// interactions and tallies utilities.
    fn interact(
        &mut self,
        students: Vec<Student<T>>,
        matching: Matching,
        truthful: bool,
        measured: usize,
    ) -> RoundResult<T> {
        let c = &self.config;
        let mut school_utilities = vec![T::zero(); c.n_schools];
        let mut outcomes = Vec::with_capacity(students.len());
        for (i, student) in students.into_iter().enumerate() {
            let school_id = matching.school_of(i);
            let outcome = match school_id {
                Some(id) => {
                    let school = &self.schools[id.0];
                    let strategy = if truthful {
                        StrategyKind::Truthful
                    } else {
                        school.strategy
                    };
                    let outcome = choose_outcome(&strategy, school, &student.entry);
                    school_utilities[id.0] = school_utilities[id.0]
                        + school_utility(
                            &outcome,
                            &student.entry,
                            school.alpha,
                            school.utility_sign,
                            c.aggregation,
                        );
                    self.history.push(InteractionRecord {
                        student: student.id,
                        school: id,
                        entry: student.entry.clone(),
                        outcome: outcome.clone(),
                        round: self.round,
                    });
                    outcome
                }
                None => student.entry.clone(),
            };
            outcomes.push(StudentOutcome {
                id: student.id,
                entry: student.entry,
                outcome,
                school: school_id,
            });
        }
        let n_matched = matching.counts(c.n_schools);
        RoundResult {
            round: measured,
            matching,
            school_utilities,
            n_matched,
            students: outcomes,
        }
    }

    /// Runs one warm-up round; nothing is reported.
    pub fn warmup_round(&mut self) {
        let students = self.cohort();
        let matching = self.random_matching(students.len());
        self.interact(students, matching, true, 0);
        self.round += 1;
    }

    /// Runs one measured round: sample, form preferences, match, interact.
    pub fn run_round(&mut self) -> RoundResult<T> {
        let c = &self.config;
        let students = self.cohort();
        let signals = MarketSignals::from_history(
            &self.history,
            self.round,
            c.n_schools,
            c.predictor.window,
            c.aggregation,
            self.prestige_fallback,
        );
        let model = self.preference_model();
        let prefs: Vec<Vec<SchoolId>> = students
            .iter()
            .enumerate()
            .map(|(i, student)| {
                let mut rng = stream(c.seed, self.round, Phase::Preference, i as u64);
                form_student_preference(student, &signals, &model, &mut rng)
                    .ranking()
                    .to_vec()
            })
            .collect();
        let matching = self.run_mechanism(&students, &prefs);
        debug_assert!(matching.is_feasible(&self.capacities()));
        let measured = (self.round as usize + 1).saturating_sub(self.config.warmup_rounds);
        let result = self.interact(students, matching, false, measured);
        self.round += 1;
        result
    }

    /// Warm-up followed by the configured number of measured rounds.
    pub fn run(mut self) -> SimulationResult<T> {
        for _ in 0..self.config.warmup_rounds {
            self.warmup_round();
        }
        let rounds = (0..self.config.rounds).map(|_| self.run_round()).collect();
        let levels = self.schools.iter().map(|s| s.strategy.level()).collect();
        SimulationResult {
            rounds,
            levels,
            seed: self.config.seed,
        }
    }
}

pub fn run_simulation<T: Scalar>(config: SimulationConfig<T>) -> Result<SimulationResult<T>> {
    Ok(Simulation::new(config)?.run())
}

/// Mean and sample standard deviation (n - 1 denominator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats<T> {
    pub mean: T,
    pub std: T,
}

impl<T: Scalar> Stats<T> {
    pub fn of(xs: &[T]) -> Self {
        let n = T::from_count(xs.len());
        let mean = xs.iter().copied().sum::<T>() / n;
        let std = if xs.len() < 2 {
            T::zero()
        } else {
            let ss: T = xs.iter().map(|x| (*x - mean) * (*x - mean)).sum();
            (ss / (n - T::one())).sqrt()
        };
        Self { mean, std }
    }
}

/// The same market run under consecutive seeds `base_seed + i`.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub results: Vec<SimulationResult<T>>,
}

impl<T: Scalar> Batch<T> {
    /// Per-seed mean per-round utility, `[seed][school]`.
    pub fn per_seed_means(&self, discount: T) -> Vec<Vec<T>> {
        self.results
            .iter()
            .map(|r| r.mean_utilities(discount))
            .collect()
    }

    /// Across-seed statistics of each school's mean per-round utility.
    pub fn school_stats(&self, discount: T) -> Vec<Stats<T>> {
        let per_seed = self.per_seed_means(discount);
        let n_schools = per_seed.first().map_or(0, Vec::len);
        (0..n_schools)
            .map(|s| Stats::of(&per_seed.iter().map(|m| m[s]).collect::<Vec<_>>()))
            .collect()
    }

    /// Every student of every measured round of every seed.
    pub fn students(&self) -> impl Iterator<Item = &StudentOutcome<T>> {
        self.results
            .iter()
            .flat_map(|r| r.rounds.iter().flat_map(|round| round.students.iter()))
    }
}

pub fn run_batch<T: Scalar>(config: &SimulationConfig<T>, n_seeds: usize) -> Result<Batch<T>> {
    if n_seeds < 2 {
        return Err(Error::config("seeds", "a batch needs at least 2 seeds"));
    }
    config.validate()?;
    let results = (0..n_seeds as u64)
        .map(|i| {
            let config = SimulationConfig {
                seed: config.seed.wrapping_add(i),
                ..config.clone()
            };
            run_simulation(config)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch { results })
}
