//! CSV output.
//!
//! | file | columns |
//! |---|---|
//! | `school_utility.csv` | scenario, seed, round, school, level, utility, n_matched |
//! | `students.csv` | scenario, seed, round, student, entry, outcome, school |
//! | `summary.csv` | scenario, school, mean, std, significant |
//! | `best_response.csv` | step, mover, new_level, school, mean, std |
//! | `welfare.csv` | scenario, level_a, level_b, group, count, mean, seed_mean, seed_std |
//! | `manifest.csv` | file, rows |
//!
//! Files are UTF-8 with LF line endings and a header row. An unassigned
//! student has an empty `school` field and multi-attribute vectors are written
//! as components joined by `;`. Step 0 of `best_response.csv` is the starting
//! profile and leaves `mover` and `new_level` empty. `significant` is empty
//! where no comparison applies. The manifest lists every other file with its
//! data row count and is written last.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use crate::analysis::{BrTrajectory, GroupWelfare, WelfareReport};
use crate::engine::{SimulationResult, Stats};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    SchoolUtility,
    Students,
    Summary,
    BestResponse,
    Welfare,
}

impl Table {
    pub const ALL: [Table; 5] = [
        Table::SchoolUtility,
        Table::Students,
        Table::Summary,
        Table::BestResponse,
        Table::Welfare,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Table::SchoolUtility => "school_utility.csv",
            Table::Students => "students.csv",
            Table::Summary => "summary.csv",
            Table::BestResponse => "best_response.csv",
            Table::Welfare => "welfare.csv",
        }
    }

    pub fn header(self) -> &'static [&'static str] {
        match self {
            Table::SchoolUtility => &[
                "scenario",
                "seed",
                "round",
                "school",
                "level",
                "utility",
                "n_matched",
            ],
            Table::Students => &[
                "scenario", "seed", "round", "student", "entry", "outcome", "school",
            ],
            Table::Summary => &["scenario", "school", "mean", "std", "significant"],
            Table::BestResponse => &["step", "mover", "new_level", "school", "mean", "std"],
            Table::Welfare => &[
                "scenario",
                "level_a",
                "level_b",
                "group",
                "count",
                "mean",
                "seed_mean",
                "seed_std",
            ],
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

pub const MANIFEST: &str = "manifest.csv";

struct Sink {
    writer: csv::Writer<File>,
    rows: usize,
}

/// Writes the tables of one experiment into a directory. Files are created on
/// first use; [`ReportWriter::finish`] flushes them and writes the manifest.
pub struct ReportWriter {
    dir: PathBuf,
    sinks: [Option<Sink>; 5],
}

fn opt<V: ToString>(v: Option<V>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl ReportWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            sinks: Default::default(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn row(&mut self, table: Table, fields: &[String]) -> Result<()> {
        self.ensure(table)?;
        let sink = self.sinks[table.index()]
            .as_mut()
            .expect("sink opened above");
        sink.writer.write_record(fields)?;
        sink.rows += 1;
        Ok(())
    }

    /// Creates `table` with only its header if nothing was written to it yet.
    pub fn ensure(&mut self, table: Table) -> Result<()> {
        if self.sinks[table.index()].is_none() {
            let mut writer = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_path(self.dir.join(table.file_name()))?;
            writer.write_record(table.header())?;
            self.sinks[table.index()] = Some(Sink { writer, rows: 0 });
        }
        Ok(())
    }

    /// One row per school per measured round.
    pub fn school_utilities(
        &mut self,
        scenario: &str,
        result: &SimulationResult<f64>,
    ) -> Result<()> {
        for round in &result.rounds {
            for (s, utility) in round.school_utilities.iter().enumerate() {
                self.row(
                    Table::SchoolUtility,
                    &[
                        scenario.to_string(),
                        result.seed.to_string(),
                        round.round.to_string(),
                        s.to_string(),
                        result.levels[s].to_string(),
                        utility.to_string(),
                        round.n_matched[s].to_string(),
                    ],
                )?;
            }
        }
        Ok(())
    }

    /// One row per student per measured round.
    pub fn students(&mut self, scenario: &str, result: &SimulationResult<f64>) -> Result<()> {
        for round in &result.rounds {
            for st in &round.students {
                self.row(
                    Table::Students,
                    &[
                        scenario.to_string(),
                        result.seed.to_string(),
                        round.round.to_string(),
                        st.id.to_string(),
                        st.entry.to_string(),
                        st.outcome.to_string(),
                        opt(st.school),
                    ],
                )?;
            }
        }
        Ok(())
    }

    pub fn summary(
        &mut self,
        scenario: &str,
        school: usize,
        stats: Stats<f64>,
        significant: Option<bool>,
    ) -> Result<()> {
        self.row(
            Table::Summary,
            &[
                scenario.to_string(),
                school.to_string(),
                stats.mean.to_string(),
                stats.std.to_string(),
                opt(significant),
            ],
        )
    }

    pub fn best_response(&mut self, trajectory: &BrTrajectory<f64>) -> Result<()> {
        let steps = std::iter::once((None, &trajectory.initial)).chain(
            trajectory
                .steps
                .iter()
                .map(|s| (Some((s.mover.0, s.new_level)), &s.stats)),
        );
        for (i, (mv, stats)) in steps.enumerate() {
            for (school, st) in stats.iter().enumerate() {
                self.row(
                    Table::BestResponse,
                    &[
                        i.to_string(),
                        opt(mv.map(|m| m.0)),
                        opt(mv.map(|m| m.1)),
                        school.to_string(),
                        st.mean.to_string(),
                        st.std.to_string(),
                    ],
                )?;
            }
        }
        Ok(())
    }

    /// One row per group, then one for all students.
    pub fn welfare(
        &mut self,
        scenario: &str,
        levels: (f64, f64),
        report: &WelfareReport<f64>,
    ) -> Result<()> {
        let mut write = |g: &GroupWelfare<f64>| {
            self.row(
                Table::Welfare,
                &[
                    scenario.to_string(),
                    levels.0.to_string(),
                    levels.1.to_string(),
                    g.name.clone(),
                    g.count.to_string(),
                    opt(g.mean),
                    opt(g.seed_stats.map(|s| s.mean)),
                    opt(g.seed_stats.map(|s| s.std)),
                ],
            )
        };
        for g in &report.groups {
            write(g)?;
        }
        write(&report.overall)
    }

    /// Flushes every table and writes the manifest. Returns `(file, rows)` per table.
    pub fn finish(mut self) -> Result<Vec<(String, usize)>> {
        let mut entries = Vec::new();
        for table in Table::ALL {
            if let Some(mut sink) = self.sinks[table.index()].take() {
                sink.writer.flush()?;
                entries.push((table.file_name().to_string(), sink.rows));
            }
        }
        let mut manifest = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(self.dir.join(MANIFEST))?;
        manifest.write_record(["file", "rows"])?;
        for (file, rows) in &entries {
            manifest.write_record([file.as_str(), &rows.to_string()])?;
        }
        manifest.flush()?;
        Ok(entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_simulation, SimulationConfig};

    #[test]
    fn headers_and_line_endings() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ReportWriter::create(dir.path()).unwrap();
        w.summary(
            "x, y",
            0,
            Stats {
                mean: 1.5,
                std: 0.25,
            },
            Some(true),
        )
        .unwrap();
        w.summary(
            "z",
            1,
            Stats {
                mean: -2.0,
                std: 0.0,
            },
            None,
        )
        .unwrap();
        let entries = w.finish().unwrap();
        assert_eq!(entries, vec![("summary.csv".to_string(), 2)]);
        let text = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(
            text,
            "scenario,school,mean,std,significant\n\"x, y\",0,1.5,0.25,true\nz,1,-2,0,\n"
        );
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(manifest, "file,rows\nsummary.csv,2\n");
    }

    #[test]
    fn one_round_row_counts() {
        let config = SimulationConfig {
            rounds: 1,
            ..SimulationConfig::with_schools(3)
        };
        let result = run_simulation(config.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut w = ReportWriter::create(dir.path()).unwrap();
        w.school_utilities("s", &result).unwrap();
        w.students("s", &result).unwrap();
        let entries = w.finish().unwrap();
        assert_eq!(entries[0], ("school_utility.csv".to_string(), 3));
        assert_eq!(
            entries[1],
            ("students.csv".to_string(), config.n_students())
        );
    }
}
