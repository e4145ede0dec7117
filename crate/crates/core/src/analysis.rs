//! Experiments on top of the engine: unilateral deviations, iterated best
//! response over a finite grid of attack levels, and student welfare.
//!
//! Every utility compared here is a batch statistic: the mean over seeds of a
//! school's mean per-round utility, with the sample standard deviation across
//! seeds. Two batch means differ significantly when their gap exceeds the sum
//! of their standard deviations.

use std::collections::HashMap;

use crate::engine::{run_batch, Batch, SimulationConfig, SimulationResult, Stats, StudentOutcome};
use crate::error::{Error, Result};
use crate::market::{outcome_value, Aggregation, SchoolId};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig<T> {
    pub base: SimulationConfig<T>,
    pub n_seeds: usize,
    /// Attack levels available to every school, ascending, starting at 0.
    pub action_set: Vec<T>,
    /// Weight of round `t` is `discount^(t-1)`; 1 gives the plain mean.
    pub discount: T,
    /// Maximum number of full round-robin passes; `None` uses
    /// `5 * |action_set| * n_schools`.
    pub max_passes: Option<usize>,
}

impl<T: Scalar> AnalysisConfig<T> {
    pub fn new(base: SimulationConfig<T>) -> Self {
        Self {
            base,
            n_seeds: 20,
            action_set: [0.0, 25.0, 50.0, 75.0, 100.0]
                .iter()
                .map(|x| T::lit(*x))
                .collect(),
            discount: T::one(),
            max_passes: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.n_seeds < 2 {
            return Err(Error::config(
                "seeds",
                "at least 2 seeds are needed for a standard deviation",
            ));
        }
        if self.action_set.is_empty() || self.action_set[0] != T::zero() {
            return Err(Error::config("action_set", "must start with 0"));
        }
        if self.action_set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("action_set", "must be strictly ascending"));
        }
        if self.action_set.iter().any(|l| *l > T::lit(100.0)) {
            return Err(Error::config(
                "action_set",
                "levels must be within [0, 100]",
            ));
        }
        if !(self.discount > T::zero() && self.discount <= T::one()) {
            return Err(Error::config("discount_factor", "must be in (0, 1]"));
        }
        Ok(())
    }

    fn passes(&self) -> usize {
        self.max_passes
            .unwrap_or(5 * self.action_set.len() * self.base.n_schools)
    }

    /// Base market with every school truthful.
    pub fn truthful_market(&self) -> SimulationConfig<T> {
        SimulationConfig {
            attack_levels: vec![None; self.base.n_schools],
            ..self.base.clone()
        }
    }

    /// Base market with the given attack level per school.
    pub fn market_at(&self, levels: &[T]) -> SimulationConfig<T> {
        SimulationConfig {
            attack_levels: levels.iter().map(|l| Some(*l)).collect(),
            ..self.base.clone()
        }
    }
}

/// `|mean_a - mean_b| > std_a + std_b`.
pub fn is_significant<T: Scalar>(a: Stats<T>, b: Stats<T>) -> bool {
    (a.mean - b.mean).abs() > a.std + b.std
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport<T> {
    pub school: SchoolId,
    pub level: T,
    pub truthful: Stats<T>,
    pub strategic: Stats<T>,
    pub significant_gain: bool,
}

impl<T: Scalar> DeviationReport<T> {
    pub fn gain(&self) -> T {
        self.strategic.mean - self.truthful.mean
    }

    pub fn relative_gain(&self) -> T {
        self.gain() / self.truthful.mean.abs()
    }
}

/// The deviation report along with both underlying batches.
#[derive(Debug, Clone)]
pub struct DeviationRun<T> {
    pub report: DeviationReport<T>,
    pub truthful: Batch<T>,
    pub strategic: Batch<T>,
}

/// All schools truthful versus `school` alone attacking at `level`, on the same seeds.
pub fn run_deviation<T: Scalar>(
    cfg: &AnalysisConfig<T>,
    school: SchoolId,
    level: T,
) -> Result<DeviationRun<T>> {
    cfg.validate()?;
    if school.0 >= cfg.base.n_schools {
        return Err(Error::config(
            "attacker",
            format!("school {} does not exist", school.0),
        ));
    }
    let truthful_cfg = cfg.truthful_market();
    let strategic_cfg = truthful_cfg.clone().with_attack(school.0, Some(level));
    let truthful = run_batch(&truthful_cfg, cfg.n_seeds)?;
    let strategic = run_batch(&strategic_cfg, cfg.n_seeds)?;
    let t = truthful.school_stats(cfg.discount)[school.0];
    let s = strategic.school_stats(cfg.discount)[school.0];
    let report = DeviationReport {
        school,
        level,
        truthful: t,
        strategic: s,
        significant_gain: s.mean > t.mean && is_significant(s, t),
    };
    Ok(DeviationRun {
        report,
        truthful,
        strategic,
    })
}

pub fn deviation_experiment<T: Scalar>(
    cfg: &AnalysisConfig<T>,
    school: SchoolId,
    level: T,
) -> Result<DeviationReport<T>> {
    run_deviation(cfg, school, level).map(|run| run.report)
}

/// Evaluates action profiles by batch simulation, memoising per profile.
#[derive(Debug)]
pub struct ProfileEvaluator<'a, T> {
    cfg: &'a AnalysisConfig<T>,
    cache: HashMap<Vec<u64>, Vec<Stats<T>>>,
}

impl<'a, T: Scalar> ProfileEvaluator<'a, T> {
    pub fn new(cfg: &'a AnalysisConfig<T>) -> Self {
        Self {
            cfg,
            cache: HashMap::new(),
        }
    }

    /// Per-school statistics when school `i` attacks at `levels[i]`.
    pub fn stats(&mut self, levels: &[T]) -> Result<Vec<Stats<T>>> {
        let key: Vec<u64> = levels.iter().map(|l| l.as_f64().to_bits()).collect();
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        let batch = run_batch(&self.cfg.market_at(levels), self.cfg.n_seeds)?;
        let stats = batch.school_stats(self.cfg.discount);
        self.cache.insert(key, stats.clone());
        Ok(stats)
    }

    pub fn evaluations(&self) -> usize {
        self.cache.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse<T> {
    /// `Some(level)` when the mover switches.
    pub new_level: Option<T>,
    /// Per-school statistics of the profile after the step.
    pub stats: Vec<Stats<T>>,
}

/// Lets `mover` pick the action with the highest mean utility, others fixed.
/// The switch happens only if that action beats the current one significantly;
/// equal means keep the current action, then favour the lowest level.
pub fn best_response_step<T: Scalar>(
    evaluator: &mut ProfileEvaluator<'_, T>,
    levels: &[T],
    mover: SchoolId,
) -> Result<BestResponse<T>> {
    let current_stats = evaluator.stats(levels)?;
    let current = current_stats[mover.0];
    let mut best: Option<(T, Stats<T>, Vec<Stats<T>>)> = None;
    for &action in &evaluator.cfg.action_set.clone() {
        if action == levels[mover.0] {
            continue;
        }
        let mut profile = levels.to_vec();
        profile[mover.0] = action;
        let stats = evaluator.stats(&profile)?;
        let candidate = stats[mover.0];
        if best
            .as_ref()
            .is_none_or(|(_, b, _)| candidate.mean > b.mean)
        {
            best = Some((action, candidate, stats));
        }
    }
    match best {
        Some((action, candidate, stats))
            if candidate.mean > current.mean && is_significant(candidate, current) =>
        {
            Ok(BestResponse {
                new_level: Some(action),
                stats,
            })
        }
        _ => Ok(BestResponse {
            new_level: None,
            stats: current_stats,
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrStep<T> {
    pub mover: SchoolId,
    pub previous_level: T,
    pub new_level: T,
    pub stats: Vec<Stats<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrTrajectory<T> {
    /// Statistics of the all-zero starting profile.
    pub initial: Vec<Stats<T>>,
    pub steps: Vec<BrStep<T>>,
    pub profile: Vec<T>,
    /// A full pass ended without any school moving.
    pub nash: bool,
}

/// Round-robin best response from the all-zero profile, school 0 first.
pub fn best_response_dynamics<T: Scalar>(cfg: &AnalysisConfig<T>) -> Result<BrTrajectory<T>> {
    cfg.validate()?;
    let n = cfg.base.n_schools;
    if n < 2 {
        return Err(Error::config(
            "n_schools",
            "best-response dynamics needs at least 2 schools",
        ));
    }
    let mut evaluator = ProfileEvaluator::new(cfg);
    let mut profile = vec![T::zero(); n];
    let initial = evaluator.stats(&profile)?;
    let mut steps = Vec::new();
    for _ in 0..cfg.passes() {
        let mut moved = false;
        for mover in (0..n).map(SchoolId) {
            let response = best_response_step(&mut evaluator, &profile, mover)?;
            if let Some(level) = response.new_level {
                steps.push(BrStep {
                    mover,
                    previous_level: profile[mover.0],
                    new_level: level,
                    stats: response.stats,
                });
                profile[mover.0] = level;
                moved = true;
            }
        }
        if !moved {
            return Ok(BrTrajectory {
                initial,
                steps,
                profile,
                nash: true,
            });
        }
    }
    Ok(BrTrajectory {
        initial,
        steps,
        profile,
        nash: false,
    })
}

/// True if no school has a significantly better action in the grid, others fixed.
pub fn is_nash<T: Scalar>(cfg: &AnalysisConfig<T>, profile: &[T]) -> Result<bool> {
    let mut evaluator = ProfileEvaluator::new(cfg);
    for mover in (0..profile.len()).map(SchoolId) {
        if best_response_step(&mut evaluator, profile, mover)?
            .new_level
            .is_some()
        {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Students whose entry value lies in `[min_entry, max_entry]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WelfareGroup {
    pub name: String,
    pub min_entry: f64,
    pub max_entry: f64,
}

impl WelfareGroup {
    pub fn new(name: &str, min_entry: f64, max_entry: f64) -> Self {
        Self {
            name: name.to_string(),
            min_entry,
            max_entry,
        }
    }

    fn contains(&self, value: f64) -> bool {
        value >= self.min_entry && value <= self.max_entry
    }
}

/// Entry level 0, levels 1 to 4, and level 5.
pub fn default_groups() -> Vec<WelfareGroup> {
    vec![
        WelfareGroup::new("low", 0.0, 0.0),
        WelfareGroup::new("high", 1.0, 4.0),
        WelfareGroup::new("top", 5.0, 5.0),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupWelfare<T> {
    pub name: String,
    pub count: usize,
    /// Mean outcome over all pooled students; `None` for an empty group.
    pub mean: Option<T>,
    /// Spread of the per-seed group means (seeds where the group is empty are skipped).
    pub seed_stats: Option<Stats<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WelfareReport<T> {
    pub groups: Vec<GroupWelfare<T>>,
    pub overall: GroupWelfare<T>,
}

impl<T: Scalar> WelfareReport<T> {
    pub fn group(&self, name: &str) -> Option<&GroupWelfare<T>> {
        self.groups.iter().find(|g| g.name == name)
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    sum: f64,
    n: usize,
}

/// Per-group accumulators and the overall one.
type Tally = (Vec<Acc>, Acc);

fn tally<'a, T: Scalar>(
    students: impl Iterator<Item = &'a StudentOutcome<T>>,
    groups: &[WelfareGroup],
    aggregation: Aggregation,
) -> Tally {
    let mut per_group = vec![Acc::default(); groups.len()];
    let mut overall = Acc::default();
    for s in students {
        let entry = outcome_value(&s.entry, aggregation).as_f64();
        let outcome = outcome_value(&s.outcome, aggregation).as_f64();
        overall.sum += outcome;
        overall.n += 1;
        for (g, acc) in groups.iter().zip(per_group.iter_mut()) {
            if g.contains(entry) {
                acc.sum += outcome;
                acc.n += 1;
            }
        }
    }
    (per_group, overall)
}

fn mean_of(acc: Acc) -> Option<f64> {
    (acc.n > 0).then(|| acc.sum / acc.n as f64)
}

/// Mean outcome per entry group and overall, pooled over all seeds and rounds.
/// Unassigned students count at their entry level.
pub fn welfare_report<T: Scalar>(
    results: &[SimulationResult<T>],
    groups: &[WelfareGroup],
    aggregation: Aggregation,
) -> WelfareReport<T> {
    fn students<T>(r: &SimulationResult<T>) -> impl Iterator<Item = &StudentOutcome<T>> {
        r.rounds.iter().flat_map(|round| round.students.iter())
    }
    let (pooled, pooled_all) = tally(results.iter().flat_map(students), groups, aggregation);
    let per_seed: Vec<Tally> = results
        .iter()
        .map(|r| tally(students(r), groups, aggregation))
        .collect();

    let seed_stats = |pick: &dyn Fn(&Tally) -> Acc| {
        let means: Vec<T> = per_seed
            .iter()
            .filter_map(|s| mean_of(pick(s)))
            .map(T::lit)
            .collect();
        (!means.is_empty()).then(|| Stats::of(&means))
    };

    let groups_out = groups
        .iter()
        .enumerate()
        .map(|(i, g)| GroupWelfare {
            name: g.name.clone(),
            count: pooled[i].n,
            mean: mean_of(pooled[i]).map(T::lit),
            seed_stats: seed_stats(&|s| s.0[i]),
        })
        .collect();
    WelfareReport {
        groups: groups_out,
        overall: GroupWelfare {
            name: "all".to_string(),
            count: pooled_all.n,
            mean: mean_of(pooled_all).map(T::lit),
            seed_stats: seed_stats(&|s| s.1),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WelfareCell<T> {
    /// Attack level of each school in this cell.
    pub levels: Vec<T>,
    pub report: WelfareReport<T>,
}

/// Welfare for every combination of levels of the first two schools (others truthful).
pub fn welfare_grid<T: Scalar>(
    cfg: &AnalysisConfig<T>,
    levels: &[T],
    groups: &[WelfareGroup],
) -> Result<Vec<WelfareCell<T>>> {
    welfare_grid_with(cfg, levels, groups, |_, _| Ok(()))
}

/// As [`welfare_grid`], handing every cell's batch to `visit` before it is dropped.
pub fn welfare_grid_with<T: Scalar>(
    cfg: &AnalysisConfig<T>,
    levels: &[T],
    groups: &[WelfareGroup],
    mut visit: impl FnMut(&[T], &Batch<T>) -> Result<()>,
) -> Result<Vec<WelfareCell<T>>> {
    cfg.validate()?;
    if cfg.base.n_schools < 2 {
        return Err(Error::config(
            "n_schools",
            "a welfare grid needs at least 2 schools",
        ));
    }
    let mut cells = Vec::with_capacity(levels.len() * levels.len());
    for &a in levels {
        for &b in levels {
            let mut profile = vec![T::zero(); cfg.base.n_schools];
            profile[0] = a;
            profile[1] = b;
            let batch = run_batch(&cfg.market_at(&profile), cfg.n_seeds)?;
            visit(&profile, &batch)?;
            cells.push(WelfareCell {
                report: welfare_report(&batch.results, groups, cfg.base.aggregation),
                levels: profile,
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RoundResult;
    use crate::market::{AttributeVector, Matching, StudentId};

    fn st(mean: f64, std: f64) -> Stats<f64> {
        Stats { mean, std }
    }

    #[test]
    fn significance_rule() {
        assert!(is_significant(st(12.0, 0.4), st(10.0, 0.5)));
        assert!(!is_significant(st(10.5, 0.3), st(10.0, 0.4)));
        assert!(!is_significant(st(10.0, 0.0), st(10.0, 0.0)));
    }

    fn outcome(entry: f64, out: f64) -> StudentOutcome<f64> {
        StudentOutcome {
            id: StudentId(0),
            entry: AttributeVector::new(vec![entry]).unwrap(),
            outcome: AttributeVector::new(vec![out]).unwrap(),
            school: None,
        }
    }

    fn result(students: Vec<StudentOutcome<f64>>) -> SimulationResult<f64> {
        SimulationResult {
            rounds: vec![RoundResult {
                round: 1,
                matching: Matching::unassigned(students.len()),
                school_utilities: vec![],
                n_matched: vec![],
                students,
            }],
            levels: vec![],
            seed: 0,
        }
    }

    #[test]
    fn welfare_arithmetic() {
        let r = result(vec![
            outcome(0.0, 0.0),
            outcome(0.0, 0.0),
            outcome(2.0, 5.0),
        ]);
        let groups = vec![
            WelfareGroup::new("low", 0.0, 0.0),
            WelfareGroup::new("high", 1.0, 4.0),
        ];
        let w = welfare_report(&[r], &groups, Aggregation::Sum);
        assert_eq!(w.group("low").unwrap().mean, Some(0.0));
        assert_eq!(w.group("high").unwrap().mean, Some(5.0));
        assert!((w.overall.mean.unwrap() - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_group_is_absent() {
        let r = result(vec![outcome(2.0, 5.0)]);
        let w = welfare_report(&[r], &default_groups(), Aggregation::Sum);
        let low = w.group("low").unwrap();
        assert_eq!(low.count, 0);
        assert_eq!(low.mean, None);
        assert_eq!(low.seed_stats, None);
    }

    #[test]
    fn overall_is_weighted_mean_of_partition() {
        let r = result(vec![
            outcome(0.0, 1.0),
            outcome(3.0, 5.0),
            outcome(5.0, 5.0),
            outcome(4.0, 4.5),
        ]);
        let w = welfare_report(&[r], &default_groups(), Aggregation::Sum);
        let weighted: f64 = w
            .groups
            .iter()
            .filter_map(|g| g.mean.map(|m| m * g.count as f64))
            .sum::<f64>()
            / w.overall.count as f64;
        assert!((weighted - w.overall.mean.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = AnalysisConfig::new(SimulationConfig::<f64>::with_schools(2));
        c.validate().unwrap();
        c.action_set = vec![25.0, 50.0];
        assert!(c.validate().is_err());
        c.action_set = vec![0.0, 50.0, 25.0];
        assert!(c.validate().is_err());
        c.action_set = vec![0.0];
        c.discount = 0.0;
        assert!(c.validate().is_err());
    }

    fn tiny(n_schools: usize) -> AnalysisConfig<f64> {
        let base = SimulationConfig {
            rounds: 4,
            students_per_school: 5,
            ..SimulationConfig::with_schools(n_schools)
        };
        AnalysisConfig {
            n_seeds: 3,
            ..AnalysisConfig::new(base)
        }
    }

    #[test]
    fn zero_level_deviation_is_a_no_op() {
        let r = deviation_experiment(&tiny(3), SchoolId(0), 0.0).unwrap();
        assert_eq!(r.truthful, r.strategic);
        assert!(!r.significant_gain);
    }

    #[test]
    fn single_action_grid_is_immediately_nash() {
        let mut cfg = tiny(2);
        cfg.action_set = vec![0.0];
        let t = best_response_dynamics(&cfg).unwrap();
        assert!(t.nash);
        assert!(t.steps.is_empty());
        assert_eq!(t.profile, vec![0.0, 0.0]);
    }

    #[test]
    fn best_response_is_deterministic_and_improving() {
        let cfg = tiny(2);
        let a = best_response_dynamics(&cfg).unwrap();
        let b = best_response_dynamics(&cfg).unwrap();
        assert_eq!(a, b);
        let mut previous = a.initial.clone();
        for step in &a.steps {
            let before = previous[step.mover.0];
            let after = step.stats[step.mover.0];
            assert!(after.mean > before.mean && is_significant(after, before));
            previous = step.stats.clone();
        }
    }

    #[test]
    fn dynamics_rejects_single_school() {
        assert!(best_response_dynamics(&tiny(1)).is_err());
    }

    #[test]
    fn grid_has_one_cell_per_pair() {
        let cfg = tiny(2);
        let cells = welfare_grid(&cfg, &[0.0, 100.0], &default_groups()).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[1].levels, vec![0.0, 100.0]);
    }
}
