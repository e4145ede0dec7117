//! Runs an [`ExperimentSpec`] and writes its CSV tables.

use std::io::Write;
use std::path::Path;

use crate::analysis::{
    best_response_dynamics, default_groups, run_deviation, welfare_grid_with, AnalysisConfig,
};
use crate::config::{ExperimentSpec, Mode, SweepScenario};
use crate::engine::{run_simulation, SimulationConfig, Stats};
use crate::error::Result;
use crate::market::SchoolId;
use crate::report::{ReportWriter, Table};

/// Files written by one experiment, as `(file, rows)`.
pub type Manifest = Vec<(String, usize)>;

/// Runs `spec` into `out`, printing one summary line per scenario to `log`.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path, log: &mut dyn Write) -> Result<Manifest> {
    spec.validate()?;
    let mut report = ReportWriter::create(out)?;
    match spec.mode {
        Mode::Simulate => simulate(spec, "simulate", &mut report, log)?,
        Mode::Deviation => deviation(spec, "", &mut report, log)?,
        Mode::BestResponse => best_response(spec, &mut report, log)?,
        Mode::Sweep => sweep(spec, &mut report, log)?,
        Mode::WelfareGrid => welfare(spec, &mut report, log)?,
    }
    report.finish()
}

fn simulate(
    spec: &ExperimentSpec,
    scenario: &str,
    report: &mut ReportWriter,
    log: &mut dyn Write,
) -> Result<()> {
    let base = spec.simulation_config();
    let n_seeds = spec.analysis.n_seeds;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(n_seeds);
    for i in 0..n_seeds as u64 {
        let result = run_simulation(SimulationConfig {
            seed: base.seed.wrapping_add(i),
            ..base.clone()
        })?;
        report.school_utilities(scenario, &result)?;
        if spec.writes_student_rows() {
            report.students(scenario, &result)?;
        }
        means.push(result.mean_utilities(spec.analysis.discount));
    }
    let stats: Vec<Stats<f64>> = (0..base.n_schools)
        .map(|s| Stats::of(&means.iter().map(|m| m[s]).collect::<Vec<_>>()))
        .collect();
    if n_seeds >= 2 {
        for (s, st) in stats.iter().enumerate() {
            report.summary(scenario, s, *st, None)?;
        }
    }
    let overall = stats.iter().map(|s| s.mean).sum::<f64>() / stats.len() as f64;
    writeln!(
        log,
        "{scenario}: {} seeds, {} schools, mean school utility {overall:.3}",
        n_seeds, base.n_schools
    )?;
    Ok(())
}

fn deviation(
    spec: &ExperimentSpec,
    prefix: &str,
    report: &mut ReportWriter,
    log: &mut dyn Write,
) -> Result<()> {
    let run = run_deviation(&spec.analysis, SchoolId(spec.attacker), spec.attack_level)?;
    let r = &run.report;
    for (name, batch, stats) in [
        ("truthful", &run.truthful, r.truthful),
        ("attack", &run.strategic, r.strategic),
    ] {
        let scenario = format!("{prefix}{name}");
        for result in &batch.results {
            report.school_utilities(&scenario, result)?;
            if spec.writes_student_rows() {
                report.students(&scenario, result)?;
            }
        }
        report.summary(&scenario, spec.attacker, stats, Some(r.significant_gain))?;
    }
    writeln!(
        log,
        "{prefix}deviation: school {} at level {}: {:.3} -> {:.3} ({:+.1}%), significant gain: {}",
        spec.attacker,
        spec.attack_level,
        r.truthful.mean,
        r.strategic.mean,
        100.0 * r.relative_gain(),
        r.significant_gain
    )?;
    Ok(())
}

fn best_response(
    spec: &ExperimentSpec,
    report: &mut ReportWriter,
    log: &mut dyn Write,
) -> Result<()> {
    let trajectory = best_response_dynamics(&spec.analysis)?;
    report.best_response(&trajectory)?;
    let profile: Vec<String> = trajectory.profile.iter().map(f64::to_string).collect();
    writeln!(
        log,
        "best-response: {} moves, final profile ({}), nash: {}",
        trajectory.steps.len(),
        profile.join(", "),
        trajectory.nash
    )?;
    Ok(())
}

fn welfare(spec: &ExperimentSpec, report: &mut ReportWriter, log: &mut dyn Write) -> Result<()> {
    let groups = default_groups();
    let students = spec.writes_student_rows();
    let cells = welfare_grid_with(
        &spec.analysis,
        &spec.welfare_levels,
        &groups,
        |levels, batch| {
            if students {
                let scenario = cell_name(levels);
                for result in &batch.results {
                    report.students(&scenario, result)?;
                }
            }
            Ok(())
        },
    )?;
    for cell in &cells {
        let scenario = cell_name(&cell.levels);
        report.welfare(&scenario, (cell.levels[0], cell.levels[1]), &cell.report)?;
        writeln!(
            log,
            "{scenario}: mean student outcome {}",
            cell.report
                .overall
                .mean
                .map_or_else(|| "n/a".to_string(), |m| format!("{m:.4}"))
        )?;
    }
    Ok(())
}

fn cell_name(levels: &[f64]) -> String {
    format!("a={};b={}", levels[0], levels[1])
}

/// One scenario per cell of the cross product of the `grid_*` keys, the last
/// key varying fastest. The cell name is `key=value;key=value`.
pub fn sweep_cells(spec: &ExperimentSpec) -> Result<Vec<(String, ExperimentSpec)>> {
    let mut cells = vec![(Vec::<String>::new(), spec.clone())];
    for (key, values) in &spec.grid {
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for (name, cell) in &cells {
            for v in values {
                let mut c = cell.clone();
                c.set(key, v)?;
                let mut n = name.clone();
                n.push(format!("{key}={v}"));
                next.push((n, c));
            }
        }
        cells = next;
    }
    Ok(cells
        .into_iter()
        .map(|(name, mut c)| {
            c.grid.clear();
            (name.join(";"), c)
        })
        .collect())
}

fn sweep(spec: &ExperimentSpec, report: &mut ReportWriter, log: &mut dyn Write) -> Result<()> {
    let cells = sweep_cells(spec)?;
    for (_, cell) in &cells {
        match spec.sweep_scenario {
            SweepScenario::Deviation => AnalysisConfig::validate(&cell.analysis)?,
            SweepScenario::Simulate => cell.base().validate()?,
        }
    }
    report.ensure(Table::SchoolUtility)?;
    for (name, cell) in &cells {
        let mut cell = cell.clone();
        cell.student_rows = Some(spec.writes_student_rows());
        match spec.sweep_scenario {
            SweepScenario::Deviation => deviation(&cell, &format!("{name}/"), report, log)?,
            SweepScenario::Simulate => simulate(&cell, name, report, log)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_str;

    #[test]
    fn sweep_cells_enumerate_the_cross_product() {
        let spec = parse_str(
            "mode = sweep\ngrid_mechanism = SD, RSD, Boston, DA\ngrid_competition = 4, 1, 1/4",
        )
        .unwrap();
        let cells = sweep_cells(&spec).unwrap();
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[0].0, "mechanism=SD;competition=4");
        assert_eq!(cells[11].0, "mechanism=DA;competition=1/4");
        assert_eq!(cells[11].1.base().capacity(), 80);

        let spec =
            parse_str("mode = sweep\ngrid_prediction_noise = 0.01, 1, 10, 30\ngrid_trust = 0.5, 1")
                .unwrap();
        assert_eq!(sweep_cells(&spec).unwrap().len(), 8);
    }

    #[test]
    fn single_round_simulate_row_counts() {
        let spec = parse_str("mode = simulate\nn_schools = 3\nrounds = 1\nseeds = 1").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut log = Vec::new();
        let manifest = run_experiment(&spec, dir.path(), &mut log).unwrap();
        assert_eq!(
            manifest,
            vec![
                ("school_utility.csv".to_string(), 3),
                ("students.csv".to_string(), 60)
            ]
        );
        assert_eq!(String::from_utf8(log).unwrap().lines().count(), 1);
    }
}
