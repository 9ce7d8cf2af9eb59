//! Built-in checks of the analytic pieces: pinned values and independent
//! oracles that need no trial matrix.

use super::measures::oscillation_coefficient;
use super::stats::{anova_main_effects, chi2_independence, BONFERRONI_P};
use crate::contact::{critical_gain, overshoot, SingleAxisLoop};
use crate::head::{motion_preset, ou_step, MotionPreset, OUParams};
use crate::observers::{fuzzy_eval, sigmoid_equivalence_check, AbortKind, FuzzyParams, SafetyLatch, SafetyParams};
use crate::servo::{bandpass_step, BandpassState, ServoGains};
use crate::sim::geometry::ForceSample;
use crate::sim::rng::rng_stream;
use crate::swab::{fit_stiffness_law, SwabBeam};
use crate::trajectory::{advance_cursor, slowdown_rate, SlowdownParams, TrackCursor};
use nalgebra::Vector3;
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:>2} {}: {}", self.id, self.name, self.detail)
    }
}

fn check(id: u32, name: &'static str, passed: bool, detail: String) -> Check {
    Check { id, name, passed, detail }
}

pub fn critical_gain_check() -> Check {
    let a = critical_gain(5.0_f64, 0.5, 11.5);
    let b = critical_gain(5.0_f64, 0.5, 10.5);
    let mut worst: f64 = 0.0;
    for k in [1.0, 2.0, 5.0, 8.0] {
        for alpha in [0.25, 0.5, 1.0] {
            for nu in [8.53, 10.5, 24.6, 41.8] {
                let lambda = critical_gain(k, alpha, nu);
                worst = worst.max(SingleAxisLoop { k, alpha, nu, lambda }.discriminant().abs());
            }
        }
    }
    check(
        1,
        "critical gain",
        (a - 0.880).abs() <= 1e-3 && (b - 0.9643).abs() <= 1e-3 && worst < 1e-9,
        format!("nu 11.5 -> {a:.4}, nu 10.5 -> {b:.4}, worst discriminant {worst:.1e}"),
    )
}

/// Position gain of the damping check. At k = 5 the force overshoot at twice
/// the critical gain stays near 3.5%.
pub const DAMPING_K: f64 = 20.0;

/// Overshoot of the single-axis wall step at `mult` times the critical gain.
pub fn loop_overshoot(k: f64, mult: f64) -> f64 {
    let (alpha, nu) = (0.5, 11.5);
    let lambda = mult * critical_gain(k, alpha, nu);
    let series = SingleAxisLoop { k, alpha, nu, lambda }.wall_step(0.01, 1e-3, 200.0);
    let f: Vec<f64> = series.iter().map(|s| s.1).collect();
    overshoot(&f)
}

pub fn damping_check() -> Check {
    let at = loop_overshoot(DAMPING_K, 1.0);
    let twice = loop_overshoot(DAMPING_K, 2.0);
    check(
        2,
        "damping regime",
        at < 1e-6 && twice > 0.05,
        format!("k {DAMPING_K}: overshoot {:.3}% at critical, {:.3}% at twice critical", at * 100.0, twice * 100.0),
    )
}

pub fn stiffness_check() -> Check {
    let law = SwabBeam::<f64>::default();
    let pairs: Vec<(f64, f64)> = (95..=145)
        .map(|mm| {
            let l = mm as f64 * 1e-3;
            (l, law.stiffness(l).expect("inside domain"))
        })
        .collect();
    let (m, b) = fit_stiffness_law(&pairs).unwrap_or((f64::NAN, f64::NAN));
    let nu = law.stiffness(0.1376).unwrap_or(f64::NAN);
    check(
        3,
        "stiffness law",
        (m - 43.89).abs() < 1e-8 && (b + 0.0193).abs() < 1e-10 && (nu - 10.5).abs() <= 0.1,
        format!("fit ({m:.6}, {b:.6}), nu(0.1376) = {nu:.3}"),
    )
}

/// Mean over `seeds` of the sample variance of θ after burn-in.
pub fn ou_variance(p: &OUParams<f64>, steps: usize, seeds: u64, dt: f64) -> f64 {
    let burn = 2000;
    (0..seeds)
        .map(|seed| {
            let mut rng = rng_stream(seed, "ou-check");
            let (mut theta, mut v) = (p.setpoint, 0.0);
            let (mut sum, mut sq) = (0.0, 0.0);
            for i in 0..steps + burn {
                (theta, v) = ou_step(theta, v, p, dt, &mut rng);
                if i >= burn {
                    sum += theta;
                    sq += theta * theta;
                }
            }
            let n = steps as f64;
            let mean = sum / n;
            sq / n - mean * mean
        })
        .sum::<f64>()
        / seeds as f64
}

pub fn ou_check() -> Check {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for preset in [MotionPreset::Light, MotionPreset::Medium, MotionPreset::Heavy] {
        let p = motion_preset(preset)[0];
        let var = ou_variance(&p, 100_000, 20, 0.01);
        let rel = var / p.stationary_variance() - 1.0;
        worst = worst.max(rel.abs());
        parts.push(format!("{preset} {:+.1}%", rel * 100.0));
    }
    let still = OUParams::<f64>::new(0.0, 1.0, 1.0, 0.4);
    let mut rng = rng_stream(0, "ou-check");
    let (mut theta, mut v) = (1.0_f64, 0.0);
    for _ in 0..10_000 {
        (theta, v) = ou_step(theta, v, &still, 0.01, &mut rng);
    }
    let settled = (theta - 0.4).abs() < 1e-6;
    check(
        4,
        "OU statistics",
        worst < 0.10 && settled,
        format!("variance error {}; noiseless residual {:.1e}", parts.join(", "), (theta - 0.4).abs()),
    )
}

pub fn fuzzy_check() -> Check {
    let p = FuzzyParams::<f64>::default();
    let (low, low_fires) = fuzzy_eval(0.08, 0.323, &p);
    let (np, fires) = fuzzy_eval(0.0931, 0.86, &p);
    let identity = (0..=8000).all(|i| sigmoid_equivalence_check(-40.0 + i as f64 * 0.01));
    check(
        5,
        "fuzzy observer",
        low == 0.25 && !low_fires && (np - 0.558).abs() <= 0.002 && fires && identity,
        format!("o(0.08, 0.323) = {low}, o(0.0931, 0.86) = {np:.4} triggered {fires}, sigmoid identity {identity}"),
    )
}

pub fn slowdown_check() -> Check {
    let s = SlowdownParams::default();
    let half = slowdown_rate(0.5, s.slope, s.intercept);
    let free = slowdown_rate(0.0, s.slope, s.intercept);
    let dt = 0.01;
    let mut c = TrackCursor::default();
    let mut steps = 0;
    while !c.finished && steps < 10_000 {
        c = advance_cursor(&c, 0.0, dt, 20.0, &s);
        steps += 1;
    }
    let t = steps as f64 * dt;
    check(
        6,
        "slowdown",
        half == 0.5 && free > 1.0 - 1e-12 && (t - 20.0).abs() <= dt + 1e-9,
        format!("rate(0.5) = {half}, rate(0) = {free}, free track {t:.2} s"),
    )
}

pub fn bandpass_check() -> Check {
    let g = ServoGains::default();
    let dt = 1e-4;
    let mut s = BandpassState::default();
    let (mut peak, mut peak_t, mut t) = (0.0, 0.0, 0.0);
    let unit = Vector3::new(1.0, 0.0, 0.0);
    while t < 20.0 - 1e-9 {
        s = bandpass_step(&s, &unit, &g, dt).0;
        t += dt;
        let d = s.f1.x - s.f2.x;
        if d > peak {
            peak = d;
            peak_t = t;
        }
    }
    let residual = (s.f1 - s.f2).norm();
    check(
        7,
        "band-pass",
        (peak_t - 1.488).abs() <= 0.02 && residual < 1e-3,
        format!("peak {peak:.4} at {peak_t:.3} s, residual at 20 s {residual:.1e}"),
    )
}

pub fn oscillation_check() -> Check {
    let sine = |amp: f64| -> Vec<f64> {
        (0..1500).map(|i| amp * (2.0 * PI * 2.0 * i as f64 / 100.0).sin()).collect()
    };
    let one = oscillation_coefficient(&sine(1.0), 100.0).unwrap_or(f64::NAN);
    let dc = oscillation_coefficient(&[1.0; 1500], 100.0).unwrap_or(f64::NAN);
    let three = oscillation_coefficient(&sine(3.7), 100.0).unwrap_or(f64::NAN);
    let linear = ((three - 3.7 * one) / (3.7 * one)).abs();
    check(
        8,
        "oscillation coefficient",
        (one - 750.0).abs() <= 1.0 && dc < 1e-6 && linear < 1e-9,
        format!("2 Hz sine {one:.4}, DC {dc:.1e}, linearity error {linear:.1e}"),
    )
}

/// Feeds a constant force at a fixed depth through the latch; returns the
/// abort kind and the release delay after the force appears.
pub fn safety_scenario(force: f64, depth: f64) -> Option<(AbortKind, f64)> {
    let params = SafetyParams::default();
    let mut latch = SafetyLatch::default();
    let (dt, onset) = (0.01, 1.0);
    for i in 0..500 {
        let t = i as f64 * dt;
        let f = if t >= onset { force } else { 0.0 };
        let sample = ForceSample { t, f: Vector3::new(0.0, f * 0.6, f * 0.8) };
        if let Some(ev) = latch.update(depth, &sample, &params, false) {
            return Some((ev.kind, latch.released_at? - onset));
        }
    }
    None
}

pub fn safety_check() -> Check {
    let wedge = safety_scenario(0.6, 0.020);
    let deep = safety_scenario(0.6, 0.060);
    let over = [0.005, 0.030, 0.090].map(|d| safety_scenario(2.6, d));
    let passed = matches!(wedge, Some((AbortKind::Wedge, delay)) if delay <= 0.2)
        && deep.is_none()
        && over.iter().all(|o| matches!(o, Some((AbortKind::Overload, _))));
    check(
        9,
        "safety",
        passed,
        format!("wedge {wedge:?}, 60 mm {deep:?}, 2.6 N {:?}", over.map(|o| o.map(|x| x.0))),
    )
}

pub fn stats_check() -> Check {
    let a = [1.0, 2.5, 3.1, 0.4, 2.2];
    let b = [3.3, 4.1, 2.9, 5.0];
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let all: Vec<f64> = a.iter().chain(&b).copied().collect();
    let g = mean(&all);
    let ssb = a.len() as f64 * (mean(&a) - g).powi(2) + b.len() as f64 * (mean(&b) - g).powi(2);
    let ssw: f64 = a.iter().map(|x| (x - mean(&a)).powi(2)).sum::<f64>()
        + b.iter().map(|x| (x - mean(&b)).powi(2)).sum::<f64>();
    let oracle = ssb / (ssw / (all.len() - 2) as f64);
    let levels: Vec<String> = (0..all.len()).map(|i| if i < a.len() { "a" } else { "b" }.to_string()).collect();
    let f = anova_main_effects(&["g"], &[levels], &all).map_or(f64::NAN, |r| r[0].f);
    let chi2 = chi2_independence(&[vec![50.0, 0.0], vec![0.0, 50.0]]).map_or(f64::NAN, |t| t.chi2);
    check(
        10,
        "stats oracles",
        ((f - oracle) / oracle).abs() < 1e-9 && chi2 == 100.0 && BONFERRONI_P == 0.0125,
        format!("one-way F {f:.6} vs {oracle:.6}, chi2 {chi2}, critical p {BONFERRONI_P}"),
    )
}

/// All checks in criterion order.
pub fn run_all() -> Vec<Check> {
    vec![
        critical_gain_check(),
        damping_check(),
        stiffness_check(),
        ou_check(),
        fuzzy_check(),
        slowdown_check(),
        bandpass_check(),
        oscillation_check(),
        safety_check(),
        stats_check(),
    ]
}
