//! Statistics over a set of measure rows, summary tables and the output
//! bundle written by a matrix run.

use super::matrix::{write_measures_csv, MatrixError, MatrixResults, MeasureRow};
use super::measures::Measure;
use super::stats::{anova4, chi2_independence, Chi2Test, FactorTest, BONFERRONI_P, FACTOR_NAMES};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureTests {
    pub measure: Measure,
    pub n: usize,
    /// Empty with `note` set when the model could not be fitted.
    pub tests: Vec<FactorTest>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachedTest {
    pub factor: String,
    pub test: Option<Chi2Test>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_trials: usize,
    pub n_faulted: usize,
    pub critical_p: f64,
    pub anova: Vec<MeasureTests>,
    pub reached: Vec<ReachedTest>,
}

/// ANOVA for each continuous measure over the trials where it is defined,
/// and a chi-square test of success against each factor.
pub fn stats_report(rows: &[MeasureRow]) -> StatsReport {
    let ok: Vec<&MeasureRow> = rows.iter().filter(|r| !r.faulted()).collect();
    let anova = Measure::ALL
        .iter()
        .map(|&m| {
            let data: Vec<([String; 4], f64)> = ok
                .iter()
                .filter_map(|r| r.measures().get(m).map(|v| (r.factors(), v)))
                .collect();
            let (tests, note) = match anova4(&data) {
                Ok(t) => (t, None),
                Err(e) => (Vec::new(), Some(e.to_string())),
            };
            MeasureTests { measure: m, n: data.len(), tests, note }
        })
        .collect();
    let reached = FACTOR_NAMES
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut counts: BTreeMap<String, [f64; 2]> = BTreeMap::new();
            for r in &ok {
                let c = counts.entry(r.factors()[j].clone()).or_default();
                c[usize::from(!r.reached)] += 1.0;
            }
            let table: Vec<Vec<f64>> = counts.values().map(|c| c.to_vec()).collect();
            let (test, note) = match chi2_independence(&table) {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ReachedTest { factor: name.to_string(), test, note }
        })
        .collect();
    StatsReport {
        n_trials: rows.len(),
        n_faulted: rows.len() - ok.len(),
        critical_p: BONFERRONI_P,
        anova,
        reached,
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            f64::NAN
        };
        Some(Self { n, mean, std })
    }
}

/// Summary statistics of every measure over one level of one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub factor: String,
    pub level: String,
    pub n: usize,
    pub success_rate: f64,
    pub measures: BTreeMap<Measure, Summary>,
}

fn level_rank(factor: usize, level: &str, seen: &[String]) -> (usize, String) {
    let known: &[&str] = match factor {
        1 => &["None", "Light", "Medium", "Heavy"],
        2 => &["A", "B"],
        3 => &["Left", "Right"],
        _ => &[],
    };
    let pos = known
        .iter()
        .position(|k| *k == level)
        .or_else(|| seen.iter().position(|s| s == level))
        .unwrap_or(usize::MAX);
    (pos, level.to_string())
}

/// Per-level summaries for each factor, levels in design order.
pub fn group_summaries(rows: &[MeasureRow]) -> Vec<GroupSummary> {
    let ok: Vec<&MeasureRow> = rows.iter().filter(|r| !r.faulted()).collect();
    let mut out = Vec::new();
    for (j, name) in FACTOR_NAMES.iter().enumerate() {
        let mut seen: Vec<String> = Vec::new();
        for r in &ok {
            let l = &r.factors()[j];
            if !seen.contains(l) {
                seen.push(l.clone());
            }
        }
        let mut levels = seen.clone();
        levels.sort_by_key(|l| level_rank(j, l, &seen));
        for level in levels {
            let group: Vec<&&MeasureRow> = ok.iter().filter(|r| r.factors()[j] == level).collect();
            let n = group.len();
            let success_rate = group.iter().filter(|r| r.reached).count() as f64 / n as f64;
            let measures = Measure::ALL
                .iter()
                .filter_map(|&m| {
                    let v: Vec<f64> = group.iter().filter_map(|r| r.measures().get(m)).collect();
                    Summary::of(&v).map(|s| (m, s))
                })
                .collect();
            out.push(GroupSummary {
                factor: name.to_string(),
                level,
                n,
                success_rate,
                measures,
            });
        }
    }
    out
}

fn fmt_p(p: f64) -> String {
    let star = if p < BONFERRONI_P { " *" } else { "" };
    format!("{p:.2e}{star}")
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "-".into()
    } else if x.abs() >= 100.0 {
        format!("{x:.0}")
    } else if x.abs() >= 1.0 {
        format!("{x:.2}")
    } else {
        format!("{x:.3}")
    }
}

fn title(factor: &str) -> &str {
    match factor {
        "controller" => "Control",
        "motion" => "Head motion",
        "phantom" => "Phantom",
        "side" => "Side",
        _ => factor,
    }
}

fn stage_table(
    out: &mut String,
    heading: &str,
    measures: &[Measure],
    report: &StatsReport,
    groups: &[GroupSummary],
    with_success: bool,
) {
    let _ = writeln!(out, "{heading}");
    let mut head = format!("{:<14}", "");
    for m in measures {
        let _ = write!(head, "| {:<26}", m.label());
    }
    if with_success {
        let _ = write!(head, "| {:<26}", "Reached NP (chi2)");
    }
    let _ = writeln!(out, "{head}");
    let _ = writeln!(out, "{}", "-".repeat(head.len()));
    for name in FACTOR_NAMES {
        let mut line = format!("{:<14}", title(name));
        for m in measures {
            let t = report
                .anova
                .iter()
                .find(|a| a.measure == *m)
                .and_then(|a| a.tests.iter().find(|t| t.factor == name));
            let cell = t.map_or("-".into(), |t| format!("F {} p {}", fmt_num(t.f), fmt_p(t.p)));
            let _ = write!(line, "| {cell:<26}");
        }
        if with_success {
            let r = report.reached.iter().find(|r| r.factor == name);
            let cell = r
                .and_then(|r| r.test)
                .map_or("-".into(), |t| format!("X2 {} p {}", fmt_num(t.chi2), fmt_p(t.p)));
            let _ = write!(line, "| {cell:<26}");
        }
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out);
    for name in FACTOR_NAMES {
        let mut line = format!("{:<14}", title(name));
        for _ in measures {
            let _ = write!(line, "| {:<12} {:<13}", "Mean", "Stdv.");
        }
        if with_success {
            let _ = write!(line, "| {:<26}", "Success rate");
        }
        let _ = writeln!(out, "{line}");
        for g in groups.iter().filter(|g| g.factor == name) {
            let mut line = format!("{:<14}", g.level);
            for m in measures {
                match g.measures.get(m) {
                    Some(s) => {
                        let _ = write!(line, "| {:<12} {:<13}", fmt_num(s.mean), fmt_num(s.std));
                    }
                    None => {
                        let _ = write!(line, "| {:<12} {:<13}", "-", "-");
                    }
                }
            }
            if with_success {
                let _ = write!(line, "| {:<26}", format!("{:.3}", g.success_rate));
            }
            let _ = writeln!(out, "{line}");
        }
        let _ = writeln!(out);
    }
}

/// Plain-text stage 1 and stage 2 tables: tests on top, group statistics
/// underneath.
pub fn render_tables(rows: &[MeasureRow], report: &StatsReport) -> String {
    let groups = group_summaries(rows);
    let mut out = String::new();
    stage_table(
        &mut out,
        "Stage 1 (insertion)",
        &[Measure::S1Transverse, Measure::S1Axial, Measure::TimeToNp],
        report,
        &groups,
        true,
    );
    stage_table(
        &mut out,
        "Stage 2 (nasopharynx)",
        &[Measure::S2Transverse, Measure::S2Axial, Measure::Oscillation],
        report,
        &groups,
        false,
    );
    let _ = writeln!(
        out,
        "* p < {} (0.05 over four factors). Trials: {}, faulted: {}.",
        report.critical_p, report.n_trials, report.n_faulted
    );
    out
}

/// Outcome counts per controller, in design order.
pub fn outcome_table(rows: &[MeasureRow]) -> String {
    let mut controllers: Vec<String> = Vec::new();
    let mut outcomes: Vec<String> = Vec::new();
    for r in rows {
        if !controllers.contains(&r.controller) {
            controllers.push(r.controller.clone());
        }
        if !outcomes.contains(&r.outcome) {
            outcomes.push(r.outcome.clone());
        }
    }
    outcomes.sort();
    let mut out = format!("{:<12}", "Controller");
    for o in &outcomes {
        let _ = write!(out, "{o:>12}");
    }
    out.push('\n');
    for c in &controllers {
        let _ = write!(out, "{c:<12}");
        for o in &outcomes {
            let n = rows.iter().filter(|r| &r.controller == c && &r.outcome == o).count();
            let _ = write!(out, "{n:>12}");
        }
        out.push('\n');
    }
    out
}

/// Writes `trials.jsonl`, `measures.csv`, `summary.txt`, `stats.json` and
/// `meta.json` into `dir`.
pub fn write_outputs(dir: &Path, results: &MatrixResults) -> Result<StatsReport, MatrixError> {
    std::fs::create_dir_all(dir)?;
    let mut jsonl = std::io::BufWriter::new(std::fs::File::create(dir.join("trials.jsonl"))?);
    for t in &results.trials {
        serde_json::to_writer(&mut jsonl, t)?;
        jsonl.write_all(b"\n")?;
    }
    jsonl.flush()?;
    let rows = results.rows();
    write_measures_csv(std::fs::File::create(dir.join("measures.csv"))?, &rows)?;
    let report = stats_report(&rows);
    let mut summary = render_tables(&rows, &report);
    let _ = write!(
        summary,
        "\nMaster seed {}: {} factorial trials, {} no-motion trials.\n\nOutcomes\n{}",
        results.master_seed,
        results.factorial_trials,
        results.none_trials,
        outcome_table(&rows)
    );
    let faults = results.faults();
    let _ = writeln!(summary, "\nFaulted trials: {}", faults.len());
    for f in faults {
        let _ = writeln!(
            summary,
            "  {} {} {} {} seed {}: {}",
            f.spec.controller,
            f.spec.motion,
            f.spec.phantom,
            f.spec.side,
            f.spec.seed,
            f.fault.as_deref().unwrap_or("").lines().next().unwrap_or("")
        );
    }
    std::fs::write(dir.join("summary.txt"), summary)?;
    std::fs::write(dir.join("stats.json"), serde_json::to_string_pretty(&report)?)?;
    let meta = serde_json::json!({
        "master_seed": results.master_seed,
        "trials": results.trials.len(),
        "factorial_trials": results.factorial_trials,
        "none_trials": results.none_trials,
        "faulted": results.faults().len(),
    });
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn row(c: &str, m: &str, side: &str, v: f64, reached: bool) -> MeasureRow {
        MeasureRow {
            controller: c.into(),
            motion: m.into(),
            phantom: if v > 0.5 { "A".into() } else { "B".into() },
            side: side.into(),
            seed: 0,
            s1_transverse: Some(v),
            s1_axial: Some(2.0 * v),
            time_to_np: reached.then_some(10.0 + v),
            reached,
            s2_transverse: reached.then_some(v / 2.0),
            s2_axial: reached.then_some(v),
            oscillation: reached.then_some(100.0 * v),
            outcome: if reached { "ReachedNP".into() } else { "Stuck".into() },
        }
    }

    fn rows() -> Vec<MeasureRow> {
        let mut out = Vec::new();
        let mut k = 0.0;
        for c in ["D1.0", "S2.0"] {
            for m in ["Light", "Heavy", "None"] {
                for side in ["Left", "Right"] {
                    for _ in 0..3 {
                        k += 1.0;
                        let v = (k * 0.37_f64).sin().abs();
                        out.push(row(c, m, side, v, (k as i32) % 4 != 0));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn group_means_recompute() {
        let rows = rows();
        for g in group_summaries(&rows) {
            let j = FACTOR_NAMES.iter().position(|f| *f == g.factor).unwrap();
            let members: Vec<&MeasureRow> = rows.iter().filter(|r| r.factors()[j] == g.level).collect();
            assert_eq!(g.n, members.len());
            for m in Measure::ALL {
                let v: Vec<f64> = members.iter().filter_map(|r| r.measures().get(m)).collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                assert_relative_eq!(g.measures[&m].mean, mean, epsilon = 1e-12);
            }
            let rate = members.iter().filter(|r| r.reached).count() as f64 / members.len() as f64;
            assert_relative_eq!(g.success_rate, rate);
        }
    }

    #[test]
    fn motion_levels_in_design_order() {
        let levels: Vec<String> = group_summaries(&rows())
            .into_iter()
            .filter(|g| g.factor == "motion")
            .map(|g| g.level)
            .collect();
        assert_eq!(levels, ["None", "Light", "Heavy"]);
    }

    #[test]
    fn report_covers_every_measure() {
        let rows = rows();
        let report = stats_report(&rows);
        assert_eq!(report.critical_p, 0.0125);
        assert_eq!(report.anova.len(), 6);
        assert_eq!(report.reached.len(), 4);
        assert!(report.anova.iter().all(|a| a.note.is_none() && !a.tests.is_empty()));
        let text = render_tables(&rows, &report);
        assert!(text.contains("Stage 1") && text.contains("Stage 2") && text.contains("0.0125"));
    }

    #[test]
    fn faulted_rows_are_left_out() {
        let mut rows = rows();
        let mut bad = rows[0].clone();
        bad.outcome = "Fault".into();
        bad.s1_transverse = None;
        rows.push(bad);
        let report = stats_report(&rows);
        assert_eq!((report.n_trials, report.n_faulted), (rows.len(), 1));
    }

    #[test]
    fn all_successful_gives_degenerate_chi2_note() {
        let rows: Vec<MeasureRow> = rows()
            .into_iter()
            .map(|mut r| {
                r.reached = true;
                r
            })
            .collect();
        let report = stats_report(&rows);
        assert!(report.reached.iter().all(|r| r.test.is_none() && r.note.is_some()));
    }
}
