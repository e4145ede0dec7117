//! Matching procedures: serial dictatorship (entry-ordered or random), Boston
//! (immediate acceptance) and student-proposing deferred acceptance.
//!
//! Students are referred to by their position in the round and rank every
//! school. Schools rank students through [`Priorities`], either a lottery or
//! their true preference (higher entry level first).

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::market::{Matching, SchoolId};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MechanismKind {
    /// Serial dictatorship, students ordered by entry level.
    Sd,
    /// Serial dictatorship, students ordered at random.
    Rsd,
    Boston,
    Da,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 4] = [Self::Sd, Self::Rsd, Self::Boston, Self::Da];
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sd => "SD",
            Self::Rsd => "RSD",
            Self::Boston => "Boston",
            Self::Da => "DA",
        })
    }
}

impl FromStr for MechanismKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sd" => Ok(Self::Sd),
            "rsd" => Ok(Self::Rsd),
            "boston" => Ok(Self::Boston),
            "da" => Ok(Self::Da),
            _ => Err(format!(
                "unknown mechanism `{s}` (expected SD, RSD, Boston or DA)"
            )),
        }
    }
}

/// How schools rank students in Boston and DA. Serial dictatorships ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SchoolSide {
    #[default]
    Lottery,
    TruePreference,
}

impl fmt::Display for SchoolSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lottery => "lottery",
            Self::TruePreference => "true_preference",
        })
    }
}

impl FromStr for SchoolSide {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lottery" => Ok(Self::Lottery),
            "true_preference" | "true" => Ok(Self::TruePreference),
            _ => Err(format!(
                "unknown school side `{s}` (expected lottery or true_preference)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mechanism {
    pub kind: MechanismKind,
    pub school_side: SchoolSide,
}

impl Mechanism {
    pub fn new(kind: MechanismKind) -> Self {
        Self {
            kind,
            school_side: SchoolSide::Lottery,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderingMode {
    EntryLevel,
    Random,
}

/// Strict order of students (by position). In entry-level mode `values` are
/// sorted descending and equal values are settled by a lottery.
pub fn student_ordering<T: Scalar, R: Rng + ?Sized>(
    mode: OrderingMode,
    values: &[T],
    rng: &mut R,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.shuffle(rng);
    if mode == OrderingMode::EntryLevel {
        // Stable sort over a shuffled order: ties keep their lottery order.
        order.sort_by(|a, b| {
            values[*b]
                .partial_cmp(&values[*a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    }
    order
}

/// Each school's strict ranking of the students of one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Priorities {
    /// `rank[school][student]`, 0 = most preferred.
    rank: Vec<Vec<usize>>,
}

impl Priorities {
    /// Builds priorities from per-school orders (most preferred first).
    pub fn from_orders(orders: &[Vec<usize>]) -> Self {
        let rank = orders
            .iter()
            .map(|order| {
                let mut r = vec![usize::MAX; order.len()];
                for (pos, &student) in order.iter().enumerate() {
                    r[student] = pos;
                }
                assert!(
                    r.iter().all(|&x| x != usize::MAX),
                    "priority order must be a permutation of the students"
                );
                r
            })
            .collect();
        Self { rank }
    }

    /// Lottery priorities: one draw per school, or one shared draw.
    pub fn lottery<R: Rng + ?Sized>(
        n_students: usize,
        n_schools: usize,
        common: bool,
        rng: &mut R,
    ) -> Self {
        let draw = |rng: &mut R| {
            let mut order: Vec<usize> = (0..n_students).collect();
            order.shuffle(rng);
            order
        };
        let orders: Vec<Vec<usize>> = if common {
            let shared = draw(rng);
            vec![shared; n_schools]
        } else {
            (0..n_schools).map(|_| draw(rng)).collect()
        };
        Self::from_orders(&orders)
    }

    /// Every school prefers higher entry values; ties by one shared lottery.
    pub fn by_value<T: Scalar, R: Rng + ?Sized>(
        values: &[T],
        n_schools: usize,
        rng: &mut R,
    ) -> Self {
        let order = student_ordering(OrderingMode::EntryLevel, values, rng);
        Self::from_orders(&vec![order; n_schools])
    }

    pub fn rank(&self, school: SchoolId, student: usize) -> usize {
        self.rank[school.0][student]
    }

    pub fn n_schools(&self) -> usize {
        self.rank.len()
    }
}

/// Students pick in `order`, each taking the first school in their ranking
/// with a free seat.
pub fn serial_dictatorship(
    order: &[usize],
    prefs: &[Vec<SchoolId>],
    capacities: &[usize],
) -> Matching {
    let mut remaining = capacities.to_vec();
    let mut matching = Matching::unassigned(prefs.len());
    for &student in order {
        if let Some(&school) = prefs[student].iter().find(|s| remaining[s.0] > 0) {
            remaining[school.0] -= 1;
            matching.assign(student, Some(school));
        }
    }
    matching
}

/// Boston mechanism: in step `k` every unassigned student applies to the
/// `k`-th school on their list and schools admit applicants by priority into
/// their remaining seats. Admissions are final.
pub fn boston(prefs: &[Vec<SchoolId>], priorities: &Priorities, capacities: &[usize]) -> Matching {
    let n_schools = capacities.len();
    let mut remaining = capacities.to_vec();
    let mut matching = Matching::unassigned(prefs.len());
    let longest = prefs.iter().map(Vec::len).max().unwrap_or(0);
    let mut applicants: Vec<Vec<usize>> = vec![Vec::new(); n_schools];

    for k in 0..longest {
        let mut any = false;
        for (student, list) in prefs.iter().enumerate() {
            if matching.school_of(student).is_none() {
                if let Some(school) = list.get(k) {
                    applicants[school.0].push(student);
                    any = true;
                }
            }
        }
        if !any {
            break;
        }
        for (s, pool) in applicants.iter_mut().enumerate() {
            let school = SchoolId(s);
            pool.sort_by_key(|&x| priorities.rank(school, x));
            for &student in pool.iter().take(remaining[s]) {
                matching.assign(student, Some(school));
            }
            remaining[s] -= pool.len().min(remaining[s]);
            pool.clear();
        }
    }
    matching
}

/// Student-proposing deferred acceptance. Schools hold their best applicants
/// tentatively and release them when better ones propose.
pub fn deferred_acceptance(
    prefs: &[Vec<SchoolId>],
    priorities: &Priorities,
    capacities: &[usize],
) -> Matching {
    let n_students = prefs.len();
    let n_schools = capacities.len();
    let mut next_choice = vec![0usize; n_students];
    let mut held: Vec<Vec<usize>> = vec![Vec::new(); n_schools];
    let mut free: VecDeque<usize> = (0..n_students).collect();
    let bound = n_students * n_schools;
    let mut proposals = 0usize;

    while let Some(student) = free.pop_front() {
        let Some(&school) = prefs[student].get(next_choice[student]) else {
            continue;
        };
        next_choice[student] += 1;
        proposals += 1;
        assert!(
            proposals <= bound,
            "deferred acceptance exceeded {bound} proposals"
        );

        let pool = &mut held[school.0];
        if capacities[school.0] == 0 {
            free.push_back(student);
            continue;
        }
        if pool.len() < capacities[school.0] {
            pool.push(student);
            continue;
        }
        let (worst_pos, &worst) = pool
            .iter()
            .enumerate()
            .max_by_key(|(_, &x)| priorities.rank(school, x))
            .expect("full school holds someone");
        if priorities.rank(school, student) < priorities.rank(school, worst) {
            pool[worst_pos] = student;
            free.push_back(worst);
        } else {
            free.push_back(student);
        }
    }

    let mut matching = Matching::unassigned(n_students);
    for (s, pool) in held.iter().enumerate() {
        for &student in pool {
            matching.assign(student, Some(SchoolId(s)));
        }
    }
    matching
}
