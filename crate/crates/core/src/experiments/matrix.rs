//! The factorial trial matrix: enumeration, parallel execution and the
//! per-trial result rows.

use super::measures::{compute_measures, MeasureSet};
use crate::phantom::{PhantomId, Side};
use crate::sim::config::{Config, ConfigError};
use crate::sim::rng::derive_seed;
use crate::sim::stage::{Outcome, Transition};
use crate::sim::world::{run_trial, TrialContext, TrialRecord, TrialSpec};
use crate::observers::AbortEvent;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Motion label of the unrepeated no-motion set.
pub const NONE_MOTION: &str = "None";

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Outcome of one trial with the series dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub spec: TrialSpec,
    /// Absent when the simulation faulted.
    pub outcome: Option<Outcome>,
    pub fault: Option<String>,
    pub transitions: Vec<Transition>,
    pub abort: Option<AbortEvent>,
    pub trigger_depth: Option<f64>,
    pub measures: MeasureSet,
}

impl TrialResult {
    pub fn from_record(rec: &TrialRecord) -> Self {
        Self {
            spec: rec.spec.clone(),
            outcome: Some(rec.outcome),
            fault: None,
            transitions: rec.transitions.clone(),
            abort: rec.abort,
            trigger_depth: rec.trigger_depth,
            measures: compute_measures(rec),
        }
    }

    pub fn outcome_label(&self) -> String {
        self.outcome.map_or_else(|| "Fault".to_string(), |o| o.to_string())
    }

    pub fn row(&self) -> MeasureRow {
        let m = &self.measures;
        MeasureRow {
            controller: self.spec.controller.clone(),
            motion: self.spec.motion.clone(),
            phantom: self.spec.phantom.to_string(),
            side: self.spec.side.to_string(),
            seed: self.spec.seed,
            s1_transverse: m.s1_transverse,
            s1_axial: m.s1_axial,
            time_to_np: m.time_to_np,
            reached: m.reached,
            s2_transverse: m.s2_transverse,
            s2_axial: m.s2_axial,
            oscillation: m.oscillation,
            outcome: self.outcome_label(),
        }
    }
}

/// One line of the flat measures CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub controller: String,
    pub motion: String,
    pub phantom: String,
    pub side: String,
    pub seed: u64,
    pub s1_transverse: Option<f64>,
    pub s1_axial: Option<f64>,
    pub time_to_np: Option<f64>,
    pub reached: bool,
    pub s2_transverse: Option<f64>,
    pub s2_axial: Option<f64>,
    pub oscillation: Option<f64>,
    pub outcome: String,
}

impl MeasureRow {
    pub fn faulted(&self) -> bool {
        self.outcome == "Fault"
    }

    pub fn factors(&self) -> [String; 4] {
        [
            self.controller.clone(),
            self.motion.clone(),
            self.phantom.clone(),
            self.side.clone(),
        ]
    }

    pub fn measures(&self) -> MeasureSet {
        MeasureSet {
            s1_transverse: self.s1_transverse,
            s1_axial: self.s1_axial,
            time_to_np: self.time_to_np,
            reached: self.reached,
            s2_transverse: self.s2_transverse,
            s2_axial: self.s2_axial,
            oscillation: self.oscillation,
        }
    }
}

/// Everything a matrix run produces, in spec order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixResults {
    pub master_seed: u64,
    pub factorial_trials: usize,
    pub none_trials: usize,
    pub trials: Vec<TrialResult>,
}

impl MatrixResults {
    pub fn rows(&self) -> Vec<MeasureRow> {
        self.trials.iter().map(TrialResult::row).collect()
    }

    pub fn faults(&self) -> Vec<&TrialResult> {
        self.trials.iter().filter(|t| t.fault.is_some()).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; 0 picks one per core.
    pub workers: usize,
    /// Write one time-series CSV per trial here.
    pub timeseries_dir: Option<PathBuf>,
}

fn trial_seed(master: u64, controller: &str, motion: &str, phantom: PhantomId, side: Side, repeat: usize) -> u64 {
    derive_seed(master, &format!("trial/{controller}/{motion}/{phantom}/{side}/{repeat}"))
}

/// The full design: the repeated factorial followed by the no-motion set.
pub fn matrix_specs(config: &Config, master_seed: u64) -> Vec<TrialSpec> {
    let m = &config.matrix;
    let mut specs = Vec::new();
    let mut push = |controller: &str, motion: &str, phantom, side, repeats| {
        for repeat in 0..repeats {
            specs.push(TrialSpec {
                controller: controller.to_string(),
                motion: motion.to_string(),
                phantom,
                side,
                seed: trial_seed(master_seed, controller, motion, phantom, side, repeat),
                repeat_index: repeat,
            });
        }
    };
    for c in &m.controllers {
        for motion in &m.motions {
            for phantom in [PhantomId::A, PhantomId::B] {
                push(c, motion, phantom, Side::Left, m.repeats_left);
                push(c, motion, phantom, Side::Right, m.repeats_right);
            }
        }
    }
    for c in &m.controllers {
        for phantom in [PhantomId::A, PhantomId::B] {
            for side in [Side::Left, Side::Right] {
                push(c, NONE_MOTION, phantom, side, m.none_trials_per_cell);
            }
        }
    }
    specs
}

/// Runs one trial; a simulation fault becomes a faulted result.
pub fn run_one(config: &Config, spec: TrialSpec) -> Result<(TrialResult, Option<TrialRecord>), ConfigError> {
    let ctx = TrialContext::new(config, spec.clone())?;
    Ok(match run_trial(&ctx, true) {
        Ok(rec) => (TrialResult::from_record(&rec), Some(rec)),
        Err(fault) => {
            log::error!("trial {spec:?} faulted: {fault}");
            (
                TrialResult {
                    spec,
                    outcome: None,
                    fault: Some(fault.to_string()),
                    transitions: Vec::new(),
                    abort: None,
                    trigger_depth: None,
                    measures: MeasureSet::default(),
                },
                None,
            )
        }
    })
}

pub fn timeseries_name(index: usize, spec: &TrialSpec) -> String {
    format!(
        "{index:03}_{}_{}_{}_{}_{}.csv",
        spec.controller, spec.motion, spec.phantom, spec.side, spec.seed
    )
}

/// Runs `specs` on a worker pool; results come back in spec order.
pub fn run_specs(config: &Config, specs: &[TrialSpec], opts: &RunOptions) -> Result<Vec<TrialResult>, MatrixError> {
    config.validate()?;
    if let Some(dir) = &opts.timeseries_dir {
        std::fs::create_dir_all(dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| MatrixError::Pool(e.to_string()))?;
    pool.install(|| {
        specs
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                let (result, rec) = run_one(config, spec.clone())?;
                if let (Some(dir), Some(rec)) = (&opts.timeseries_dir, &rec) {
                    write_timeseries(&dir.join(timeseries_name(i, spec)), rec)?;
                }
                Ok(result)
            })
            .collect()
    })
}

/// Runs the full design with seeds derived from `master_seed`.
pub fn run_matrix(config: &Config, master_seed: u64, opts: &RunOptions) -> Result<MatrixResults, MatrixError> {
    let specs = matrix_specs(config, master_seed);
    let none_trials = specs.iter().filter(|s| s.motion == NONE_MOTION).count();
    let trials = run_specs(config, &specs, opts)?;
    Ok(MatrixResults {
        master_seed,
        factorial_trials: specs.len() - none_trials,
        none_trials,
        trials,
    })
}

/// Writes the per-step series of one trial.
pub fn write_timeseries(path: &Path, rec: &TrialRecord) -> Result<(), MatrixError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t", "stage", "tip_x", "tip_y", "tip_z", "tip_qw", "tip_qx", "tip_qy", "tip_qz",
        "head_pitch", "head_yaw", "head_roll", "fx", "fy", "fz", "filtered_fx", "filtered_fy",
        "filtered_fz", "cursor", "displacement", "tip_depth",
    ])?;
    for s in &rec.series {
        let q = s.tip.orientation.quaternion();
        let mut fields = vec![s.t.to_string(), s.stage.to_string()];
        fields.extend(
            [
                s.tip.position.x, s.tip.position.y, s.tip.position.z, q.w, q.i, q.j, q.k,
                s.head_angles.x, s.head_angles.y, s.head_angles.z, s.force.x, s.force.y,
                s.force.z, s.filtered.x, s.filtered.y, s.filtered.z, s.cursor, s.displacement,
                s.tip_depth,
            ]
            .iter()
            .map(f64::to_string),
        );
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_measures_csv<W: std::io::Write>(out: W, rows: &[MeasureRow]) -> Result<(), MatrixError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_measures_csv<R: std::io::Read>(input: R) -> Result<Vec<MeasureRow>, MatrixError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(MatrixError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_counts() {
        let cfg = Config::default();
        let specs = matrix_specs(&cfg, 1);
        assert_eq!(specs.len(), 564);
        assert_eq!(specs.iter().filter(|s| s.motion == NONE_MOTION).count(), 24);
        let left = specs.iter().filter(|s| s.side == Side::Left && s.motion != NONE_MOTION).count();
        assert_eq!(left, 360);
        let seeds: std::collections::BTreeSet<u64> = specs.iter().map(|s| s.seed).collect();
        assert_eq!(seeds.len(), specs.len());
        assert_eq!(specs, matrix_specs(&cfg, 1));
        assert_ne!(specs[0].seed, matrix_specs(&cfg, 2)[0].seed);
    }

    #[test]
    fn csv_round_trip() {
        let row = MeasureRow {
            controller: "S1.5".into(),
            motion: "Heavy".into(),
            phantom: "B".into(),
            side: "Right".into(),
            seed: 99,
            s1_transverse: Some(0.01),
            s1_axial: Some(0.2),
            time_to_np: None,
            reached: false,
            s2_transverse: None,
            s2_axial: None,
            oscillation: None,
            outcome: "Stuck".into(),
        };
        let mut buf = Vec::new();
        write_measures_csv(&mut buf, &[row.clone(), row.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("controller,motion,phantom,side,seed,s1_transverse,s1_axial,time_to_np,reached,s2_transverse,s2_axial,oscillation,outcome\n"));
        assert_eq!(read_measures_csv(buf.as_slice()).unwrap(), vec![row.clone(), row]);
    }

    #[test]
    fn small_run_is_ordered_and_repeatable() {
        let mut cfg = Config::default();
        cfg.matrix.controllers = vec!["S2.0".into()];
        cfg.matrix.motions = vec!["Light".into()];
        cfg.matrix.repeats_left = 1;
        cfg.matrix.repeats_right = 1;
        cfg.matrix.none_trials_per_cell = 0;
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { workers: 2, timeseries_dir: Some(dir.path().into()) };
        let a = run_matrix(&cfg, 3, &opts).unwrap();
        assert_eq!(a.trials.len(), 4);
        assert_eq!((a.factorial_trials, a.none_trials), (4, 0));
        let specs: Vec<_> = a.trials.iter().map(|t| t.spec.clone()).collect();
        assert_eq!(specs, matrix_specs(&cfg, 3));
        let b = run_matrix(&cfg, 3, &RunOptions { workers: 1, timeseries_dir: None }).unwrap();
        assert_eq!(a, b);
        let files = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(files, 4);
    }
}
