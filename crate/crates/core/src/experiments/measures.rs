//! Per-trial measures and the oscillation coefficient.

use crate::sim::stage::{Outcome, StageId};
use crate::sim::world::TrialRecord;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Band summed by the oscillation coefficient (Hz, inclusive).
pub const OSCILLATION_BAND: (f64, f64) = (0.5, 5.0);
/// Shortest series accepted by [`oscillation_coefficient`] (s).
pub const MIN_OSCILLATION_SPAN: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("series of {len} samples at {rate} Hz is shorter than {MIN_OSCILLATION_SPAN} s")]
    TooShort { len: usize, rate: f64 },
    #[error("sample rate must be positive, got {0}")]
    BadRate(f64),
}

/// The seven measures of one trial. Forces are means of magnitudes (N).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasureSet {
    pub s1_transverse: Option<f64>,
    pub s1_axial: Option<f64>,
    pub time_to_np: Option<f64>,
    pub reached: bool,
    pub s2_transverse: Option<f64>,
    pub s2_axial: Option<f64>,
    pub oscillation: Option<f64>,
}

/// Identifies one of the continuous measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Measure {
    S1Transverse,
    S1Axial,
    TimeToNp,
    S2Transverse,
    S2Axial,
    Oscillation,
}

impl Measure {
    pub const ALL: [Measure; 6] = [
        Measure::S1Transverse,
        Measure::S1Axial,
        Measure::TimeToNp,
        Measure::S2Transverse,
        Measure::S2Axial,
        Measure::Oscillation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::S1Transverse => "s1_transverse",
            Measure::S1Axial => "s1_axial",
            Measure::TimeToNp => "time_to_np",
            Measure::S2Transverse => "s2_transverse",
            Measure::S2Axial => "s2_axial",
            Measure::Oscillation => "oscillation",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Measure::S1Transverse => "Transverse force (N)",
            Measure::S1Axial => "Axial force (N)",
            Measure::TimeToNp => "Time to NP (s)",
            Measure::S2Transverse => "Transverse force (N)",
            Measure::S2Axial => "Axial force (N)",
            Measure::Oscillation => "Oscillation (N)",
        }
    }
}

impl MeasureSet {
    pub fn get(&self, m: Measure) -> Option<f64> {
        match m {
            Measure::S1Transverse => self.s1_transverse,
            Measure::S1Axial => self.s1_axial,
            Measure::TimeToNp => self.time_to_np,
            Measure::S2Transverse => self.s2_transverse,
            Measure::S2Axial => self.s2_axial,
            Measure::Oscillation => self.oscillation,
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Measures of a finished trial. Stage-2 measures are absent when the trial
/// never entered Collect.
pub fn compute_measures(rec: &TrialRecord) -> MeasureSet {
    let transverse = |f: &nalgebra::Vector3<f64>| f.x.hypot(f.y);
    let s1_transverse = mean(rec.window(StageId::Insert).map(|s| transverse(&s.force)));
    let s1_axial = mean(rec.window(StageId::Insert).map(|s| s.force.z.abs()));
    let reached = rec.outcome == Outcome::ReachedNP;
    let time_to_np = match (reached, rec.entered(StageId::Insert), rec.entered(StageId::Collect)) {
        (true, Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    let collect: Vec<_> = rec.window(StageId::Collect).collect();
    let s2_transverse = mean(collect.iter().map(|s| transverse(&s.force)));
    let s2_axial = mean(collect.iter().map(|s| s.force.z.abs()));
    let fx: Vec<f64> = collect.iter().map(|s| s.force.x).collect();
    let oscillation = oscillation_coefficient(&fx, rec.control_rate).ok();
    MeasureSet {
        s1_transverse,
        s1_axial,
        time_to_np,
        reached,
        s2_transverse,
        s2_axial,
        oscillation,
    }
}

/// Sum of DFT magnitudes over the bins between 0.5 and 5 Hz inclusive.
pub fn oscillation_coefficient(series: &[f64], rate: f64) -> Result<f64, MeasureError> {
    if !(rate > 0.0) {
        return Err(MeasureError::BadRate(rate));
    }
    let n = series.len();
    if (n as f64) < MIN_OSCILLATION_SPAN * rate - 1e-9 || n < 2 {
        return Err(MeasureError::TooShort { len: n, rate });
    }
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (lo, hi) = OSCILLATION_BAND;
    let df = rate / n as f64;
    Ok(buf[..=n / 2]
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = *k as f64 * df;
            f >= lo - 1e-9 && f <= hi + 1e-9
        })
        .map(|(_, c)| c.norm())
        .sum())
}
