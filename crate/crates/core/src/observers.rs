//! Nasopharynx arrival detection (fuzzy product of two sigmoids) and the
//! safety observer that releases the swab.

use crate::scalar::{logistic, sigmoid, Real};
use crate::sim::geometry::ForceSample;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuzzyParams<T: Real> {
    pub s_p: T,
    pub i_p: T,
    pub s_f: T,
    pub i_f: T,
    pub threshold: T,
}

impl<T: Real> Default for FuzzyParams<T> {
    fn default() -> Self {
        Self {
            s_p: T::lit(19.04),
            i_p: T::lit(0.08),
            s_f: T::lit(9.24),
            i_f: T::lit(0.323),
            threshold: T::lit(0.5),
        }
    }
}

impl<T: Real> FuzzyParams<T> {
    pub fn validate(&self) -> bool {
        self.s_p > T::zero()
            && self.s_f > T::zero()
            && self.threshold > T::zero()
            && self.threshold < T::one()
    }
}

/// Observer output and decision for displacement `p` and axial force `f_z`.
pub fn fuzzy_eval<T: Real>(p: T, f_z: T, params: &FuzzyParams<T>) -> (T, bool) {
    let o = sigmoid(params.s_p * (p - params.i_p)) * sigmoid(params.s_f * (f_z - params.i_f));
    (o, o >= params.threshold)
}

/// Whether the tanh and logistic forms of the sigmoid agree at `x`.
pub fn sigmoid_equivalence_check(x: f64) -> bool {
    (sigmoid(x) - logistic(x)).abs() < 1e-12
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyParams {
    pub wedge_force: f64,
    pub wedge_depth: f64,
    pub max_force: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            wedge_force: 0.5,
            wedge_depth: 0.040,
            max_force: 2.5,
        }
    }
}

impl SafetyParams {
    pub fn validate(&self) -> bool {
        self.wedge_force > 0.0 && self.wedge_depth > 0.0 && self.max_force > self.wedge_force
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AbortKind {
    Wedge,
    Overload,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbortEvent {
    pub kind: AbortKind,
    pub t: f64,
    pub tip_depth: f64,
}

/// Overload wins over wedge, which wins over a manual request.
pub fn safety_check(
    tip_depth: f64,
    sample: &ForceSample,
    params: &SafetyParams,
    manual: bool,
) -> Option<AbortEvent> {
    let norm = sample.f.norm();
    let kind = if norm > params.max_force {
        AbortKind::Overload
    } else if norm > params.wedge_force && tip_depth < params.wedge_depth {
        AbortKind::Wedge
    } else if manual {
        AbortKind::Manual
    } else {
        return None;
    };
    Some(AbortEvent {
        kind,
        t: sample.t,
        tip_depth,
    })
}

/// One-shot abort latch driving the electromagnet.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SafetyLatch {
    pub event: Option<AbortEvent>,
    /// Time the electromagnet was switched off.
    pub released_at: Option<f64>,
}

impl SafetyLatch {
    pub fn attached(&self) -> bool {
        self.released_at.is_none()
    }

    /// Runs the check if nothing has fired yet; returns a newly latched event.
    pub fn update(
        &mut self,
        tip_depth: f64,
        sample: &ForceSample,
        params: &SafetyParams,
        manual: bool,
    ) -> Option<AbortEvent> {
        if self.event.is_some() {
            return None;
        }
        let event = safety_check(tip_depth, sample, params, manual)?;
        self.event = Some(event);
        self.released_at = Some(sample.t);
        Some(event)
    }
}
