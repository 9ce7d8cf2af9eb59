//! Fixed-step world: head, camera, plant, observers and controllers advanced
//! together, and the trial runner built on top of it.

use super::config::{Config, ConfigError, SimConfig, StandoffConfig, VisionConfig};
use super::geometry::{integrate_world, ForceSample, Pose6, Twist6};
use super::rng::{rng_stream, SimRng};
use super::stage::{Outcome, StageId, Transition};
use crate::contact::{
    control_step, filter_step, transverse_gain, CollectSpec, ControllerConfig, FilteredForce,
};
use crate::head::HeadMotion;
use crate::observers::{fuzzy_eval, AbortEvent, AbortKind, FuzzyParams, SafetyLatch, SafetyParams};
use crate::phantom::{
    contact_forces, fiducials_world, ContactResult, HeadFixture, NasalCorridor, PhantomId, Side,
};
use crate::servo::{
    bandpass_step, filter_pose, is_converged, measure_fiducials, register_pose, servo_step,
    BandpassState, PoseEstimate, ServoGains,
};
use crate::swab::{AxialContactModel, SwabBeam};
use crate::trajectory::{
    advance_cursor, build_waypoints, SlowdownParams, TrackCursor, WaypointTrack,
};
use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Window below the nasopharynx within which an observer trigger counts as
/// arrival.
pub const REACH_TOLERANCE: f64 = 0.010;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("simulation fault at t = {t:.3} s in {stage}: {message}\n{dump}")]
pub struct SimFault {
    pub t: f64,
    pub stage: StageId,
    pub message: String,
    pub dump: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrialSpec {
    pub controller: String,
    pub motion: String,
    pub phantom: PhantomId,
    pub side: Side,
    pub seed: u64,
    pub repeat_index: usize,
}

/// One control-step sample of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesSample {
    pub t: f64,
    pub stage: StageId,
    /// Tip pose in the world.
    pub tip: Pose6,
    pub head_angles: Vector3<f64>,
    pub force: Vector3<f64>,
    pub filtered: Vector3<f64>,
    pub cursor: f64,
    pub displacement: f64,
    pub tip_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub spec: TrialSpec,
    pub control_rate: f64,
    pub transitions: Vec<Transition>,
    pub outcome: Outcome,
    pub abort: Option<AbortEvent>,
    /// True corridor depth of the tip when the observer fired.
    pub trigger_depth: Option<f64>,
    pub series: Vec<SeriesSample>,
}

impl TrialRecord {
    /// Entry time of the first visit to `stage`.
    pub fn entered(&self, stage: StageId) -> Option<f64> {
        self.transitions
            .iter()
            .find(|tr| tr.stage == stage)
            .map(|tr| tr.t)
    }

    /// Samples taken while in `stage`.
    pub fn window(&self, stage: StageId) -> impl Iterator<Item = &SeriesSample> {
        self.series.iter().filter(move |s| s.stage == stage)
    }
}

/// Everything fixed for the duration of one trial.
#[derive(Debug, Clone)]
pub struct TrialContext {
    pub spec: TrialSpec,
    pub sim: SimConfig,
    pub controller: ControllerConfig,
    pub swab: SwabBeam<f64>,
    pub axial: AxialContactModel<f64>,
    pub vision: VisionConfig,
    pub standoff: StandoffConfig,
    pub servo: ServoGains,
    pub slowdown: SlowdownParams,
    pub fuzzy: FuzzyParams<f64>,
    pub safety: SafetyParams,
    pub collect: CollectSpec,
    pub corridor: NasalCorridor,
    pub track: WaypointTrack,
    pub fixture: HeadFixture,
    pub head: HeadMotion,
    /// Fixed error of the fiducial-to-nostril calibration, in the head frame.
    pub registration_bias: Pose6,
    /// Raise a manual abort once this time is reached.
    pub manual_abort_at: Option<f64>,
}

impl TrialContext {
    pub fn new(config: &Config, spec: TrialSpec) -> Result<Self, ConfigError> {
        config.validate()?;
        let spec_seed = spec.seed;
        let controller = config.controller_for(&spec.controller)?;
        let (_, motion) = config.motion_for(&spec.motion)?;
        let corridor = config.corridor_for(spec.phantom, spec.side)?;
        let track = build_waypoints(
            &config.trajectory.params,
            &corridor,
            &config.trajectory.ellipse,
        )?;
        let mut head = HeadMotion::new(motion, rng_stream(spec.seed, "head"));
        head.gain = config.head.tracking_gain;
        head.excursion = config.head.excursion;
        Ok(Self {
            sim: SimConfig {
                seed: spec.seed,
                ..config.sim
            },
            spec,
            controller,
            swab: config.swab,
            axial: config.axial,
            vision: config.vision,
            standoff: config.standoff,
            servo: config.servo,
            slowdown: config.trajectory.slowdown,
            fuzzy: config.fuzzy,
            safety: config.safety,
            collect: config.collect,
            corridor,
            track,
            fixture: HeadFixture::default(),
            head,
            registration_bias: draw_bias(&config.vision, spec_seed),
            manual_abort_at: None,
        })
    }

    fn nostril_in_head(&self) -> Pose6 {
        *self.fixture.nostril(self.spec.side)
    }

    /// Where the vision pipeline believes the nostril sits in the head frame.
    fn believed_nostril(&self) -> Pose6 {
        self.registration_bias.compose(&self.nostril_in_head())
    }

    /// Grasp pose that puts the tip at `tip`.
    pub fn grasp_for_tip(&self, tip: &Pose6) -> Pose6 {
        tip.compose(&Pose6::from_translation(Vector3::new(
            0.0,
            0.0,
            -self.swab.l_max,
        )))
    }

    pub fn tip_of(&self, grasp: &Pose6) -> Pose6 {
        grasp.compose(&Pose6::from_translation(Vector3::new(
            0.0,
            0.0,
            self.swab.l_max,
        )))
    }

    /// Tip pose the approach converges to, in the nostril frame.
    pub fn approach_tip(&self) -> Pose6 {
        let first = self.track.waypoints[0];
        Pose6::new(
            first.position - first.z_axis() * self.standoff.clearance,
            first.orientation,
        )
    }

    /// Tip pose the sentry stage moves to, in the nostril frame.
    pub fn standoff_tip(&self) -> Pose6 {
        let first = self.track.waypoints[0];
        let s = &self.standoff;
        Pose6::new(
            first.position - first.z_axis() * s.distance + Vector3::from(s.offset),
            first.orientation * UnitQuaternion::from_scaled_axis(Vector3::from(s.rotation)),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub t: f64,
    pub step: u64,
    dt: f64,
    pub stage: StageId,
    pub stage_start: f64,
    pub head: HeadMotion,
    pub vision_rng: SimRng,
    pub estimate: PoseEstimate,
    pub ee: Pose6,
    pub command: Twist6,
    pub bandpass: BandpassState,
    pub filtered: FilteredForce,
    pub force: ForceSample,
    pub contact: ContactResult,
    pub cursor: TrackCursor,
    pub displacement: f64,
    pub latch: SafetyLatch,
    tip_local_prev: Option<Vector3<f64>>,
    /// Held tip pose (nostril frame) and start time of collection.
    collect_hold: Option<(Pose6, f64)>,
    pub outcome: Option<Outcome>,
    pub trigger_depth: Option<f64>,
    pub transitions: Vec<Transition>,
}

impl PartialEq for HeadMotion {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.gain == other.gain
            && self.excursion == other.excursion
            && self.state == other.state
    }
}

impl WorldState {
    pub fn new(ctx: &TrialContext) -> Self {
        Self {
            t: 0.0,
            step: 0,
            dt: ctx.sim.dt(),
            stage: StageId::Sentry,
            stage_start: 0.0,
            head: ctx.head.clone(),
            vision_rng: rng_stream(ctx.sim.seed, "vision"),
            estimate: PoseEstimate::invalid(),
            ee: Pose6::from_translation(Vector3::new(0.4, 0.0, 0.2)),
            command: Twist6::zero(),
            bandpass: BandpassState::default(),
            filtered: FilteredForce::default(),
            force: ForceSample::new(Vector3::zeros(), 0.0),
            contact: ContactResult::default(),
            cursor: TrackCursor::default(),
            displacement: 0.0,
            latch: SafetyLatch::default(),
            tip_local_prev: None,
            collect_hold: None,
            outcome: None,
            trigger_depth: None,
            transitions: vec![Transition {
                stage: StageId::Sentry,
                t: 0.0,
            }],
        }
    }

    fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.ee.is_finite()
            && self.command.is_finite()
            && self.filtered.f.iter().all(|v| v.is_finite())
            && self
                .bandpass
                .f1
                .iter()
                .chain(self.bandpass.f2.iter())
                .all(|v| v.is_finite())
            && self.head.state.is_finite()
            && self.estimate.pose.is_finite()
    }

    fn fault(&self, message: impl Into<String>) -> SimFault {
        SimFault {
            t: self.t,
            stage: self.stage,
            message: message.into(),
            dump: format!(
                "ee={:?}\ncommand={:?}\nforce={:?}\nfiltered={:?}\nhead={:?}\nestimate={:?}",
                self.ee, self.command, self.force, self.filtered, self.head.state, self.estimate
            ),
        }
    }

    fn enter(&mut self, stage: StageId) {
        debug_assert!(
            self.stage.can_transition(stage),
            "{} -> {}",
            self.stage,
            stage
        );
        // the new stage takes effect from the end of the current step
        let t = self.t + self.dt;
        self.stage = stage;
        self.stage_start = t;
        self.transitions.push(Transition { stage, t });
    }

    fn abort(&mut self, outcome: Option<Outcome>) {
        if self.outcome.is_none() {
            self.outcome = outcome;
        }
        self.enter(StageId::Aborted);
    }

    pub fn sample(&self, ctx: &TrialContext) -> SeriesSample {
        SeriesSample {
            t: self.t,
            stage: self.stage,
            tip: ctx.tip_of(&self.ee),
            head_angles: self.head.state.angles,
            force: self.force.f,
            filtered: self.filtered.f,
            cursor: self.cursor.l,
            displacement: self.displacement,
            tip_depth: self.contact.tip_depth,
        }
    }
}

fn draw_bias(vision: &VisionConfig, seed: u64) -> Pose6 {
    let mut rng = rng_stream(seed, "calibration");
    let mut draw = |sigma: f64| {
        let z: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        Vector3::from(z) * sigma
    };
    let t = draw(vision.bias_translation);
    let r = draw(vision.bias_rotation);
    Pose6::new(t, UnitQuaternion::from_scaled_axis(r))
}

/// Re-expresses a twist of frame `from` as the twist of rigidly attached `to`.
pub fn shift_twist(twist: &Twist6, from: &Pose6, to: &Pose6) -> Twist6 {
    let lever = to.position - from.position;
    Twist6::new(twist.linear + twist.angular.cross(&lever), twist.angular)
}

/// Advances the world by one control step of length `dt`.
pub fn step_world(state: &mut WorldState, ctx: &TrialContext, dt: f64) -> Result<(), SimFault> {
    if !state.is_finite() {
        return Err(state.fault("non-finite state"));
    }
    if state.stage == StageId::Done {
        state.t += dt;
        state.step += 1;
        return Ok(());
    }

    state.dt = dt;
    state.head.step(dt);
    let true_head = state.head.head_pose();
    let true_nostril = true_head.compose(&ctx.nostril_in_head());

    let measurement = if ctx.sim.vision_frame(state.step) {
        let points = fiducials_world(&ctx.fixture, &true_head);
        let seen = measure_fiducials(
            &points,
            ctx.vision.noise_sigma,
            ctx.vision.dropout_prob,
            &mut state.vision_rng,
        );
        register_pose(&seen, &ctx.fixture.fiducials)
            .ok()
            .map(|h| h.compose(&ctx.believed_nostril()))
    } else {
        None
    };
    state.estimate = filter_pose(&state.estimate, measurement.as_ref(), dt);

    let tip = ctx.tip_of(&state.ee);
    let tip_local = true_nostril.inverse_transform_point(&tip.position);
    let tip_velocity = state
        .tip_local_prev
        .map_or(Vector3::zeros(), |p| (tip_local - p) / dt);
    state.tip_local_prev = Some(tip_local);
    state.contact = contact_forces(
        &ctx.corridor,
        &true_nostril,
        &state.ee,
        &ctx.swab,
        &ctx.axial,
        &Twist6::new(tip_velocity, Vector3::zeros()),
        state.latch.attached(),
    );
    state.force = ForceSample::new(state.contact.force_ee, state.t);
    if !state.force.is_valid() {
        return Err(state.fault(format!("force sample out of range: {:?}", state.force.f)));
    }
    state.filtered = filter_step(&state.filtered, &state.force, ctx.controller.alpha, dt);
    let (bandpass, repel) = bandpass_step(&state.bandpass, &state.force.f, &ctx.servo, dt);
    state.bandpass = bandpass;

    if state.estimate.valid {
        let local = state.estimate.pose.inverse_transform_point(&tip.position);
        state.displacement = ctx
            .track
            .project_path(&local, 0, ctx.track.waypoints.len())
            .0;
    }

    if matches!(
        state.stage,
        StageId::Approach | StageId::Insert | StageId::Collect
    ) {
        let manual = ctx.manual_abort_at.is_some_and(|at| state.t >= at);
        if let Some(event) =
            state
                .latch
                .update(state.displacement, &state.force, &ctx.safety, manual)
        {
            let outcome = match event.kind {
                AbortKind::Wedge => Outcome::WedgeAbort,
                AbortKind::Overload => Outcome::Overload,
                AbortKind::Manual => Outcome::ManualAbort,
            };
            state.abort(Some(outcome));
        }
    }
    let stage = if state.stage == StageId::Aborted
        && state.transitions.last().is_some_and(|tr| tr.t > state.t)
    {
        None
    } else {
        Some(state.stage)
    };

    let elapsed = state.t + dt - state.stage_start;
    let timed_out = elapsed >= ctx.sim.stage_timeout;
    let k = &ctx.controller.k_gain;
    let lambda = |p: f64| {
        let g = transverse_gain(&ctx.controller, &ctx.swab, p);
        Vector3::new(g, g, ctx.controller.axial_gain)
    };
    let est = state.estimate;
    let state_filtered = state.filtered;
    let ee_now = state.ee;
    let along_track = |l: f64| est.pose.compose(&ctx.track.target_at(l));
    // the controlled frame sits at the swab tip
    let drive = |target: Option<Pose6>, goal: &Vector3<f64>, gains: &Vector3<f64>| {
        let tw = control_step(
            &target.unwrap_or(tip),
            &tip,
            &state_filtered,
            goal,
            k,
            gains,
        );
        shift_twist(&tw, &tip, &ee_now)
    };

    state.command = match stage {
        None => Twist6::zero(),
        Some(stage) => match stage {
            StageId::Sentry => {
                if est.valid {
                    let tip = est.pose.compose(&ctx.standoff_tip());
                    state.ee = ctx.grasp_for_tip(&tip);
                    state.tip_local_prev = None;
                    state.enter(StageId::Approach);
                }
                Twist6::zero()
            }
            StageId::Approach => {
                let target = ctx.approach_tip();
                if est.valid && is_converged(&tip, &est.pose.compose(&target)) {
                    state.cursor = TrackCursor::default();
                    state.enter(StageId::Insert);
                    Twist6::zero()
                } else if timed_out {
                    state.abort(Some(Outcome::NoApproach));
                    Twist6::zero()
                } else {
                    let tw = servo_step(&est, &tip, &target, &repel, &ctx.servo);
                    let lever = state.ee.position - tip.position;
                    Twist6::new(tw.linear + tw.angular.cross(&lever), tw.angular)
                }
            }
            StageId::Insert => {
                state.cursor = advance_cursor(
                    &state.cursor,
                    state.force.f.z,
                    dt,
                    ctx.track.total_duration,
                    &ctx.slowdown,
                );
                let (_, triggered) = fuzzy_eval(state.displacement, state.force.f.z, &ctx.fuzzy);
                if triggered {
                    let depth = state.contact.tip_depth;
                    state.trigger_depth = Some(depth);
                    state.outcome = Some(if depth >= ctx.corridor.np_depth - REACH_TOLERANCE {
                        Outcome::ReachedNP
                    } else {
                        Outcome::Premature
                    });
                    state.collect_hold = Some((ctx.track.target_at(state.cursor.l), state.t + dt));
                    state.enter(StageId::Collect);
                    Twist6::zero()
                } else if timed_out {
                    state.abort(Some(Outcome::Stuck));
                    Twist6::zero()
                } else {
                    let target = est.valid.then(|| along_track(state.cursor.l));
                    drive(target, &Vector3::zeros(), &lambda(state.displacement))
                }
            }
            StageId::Collect => {
                let (held, start) = state.collect_hold.expect("collect starts with a hold pose");
                let tau = state.t + dt - start;
                if tau >= ctx.collect.duration {
                    state.enter(StageId::Extract);
                    Twist6::zero()
                } else {
                    let spin = UnitQuaternion::from_axis_angle(
                        &Vector3::z_axis(),
                        ctx.collect.spin_angle(tau),
                    );
                    let local = Pose6::new(held.position, held.orientation * spin);
                    let target = est.valid.then(|| est.pose.compose(&local));
                    let goal = Vector3::new(0.0, 0.0, ctx.controller.target_force_collect);
                    drive(target, &goal, &lambda(state.displacement))
                }
            }
            StageId::Aborted => {
                state.enter(StageId::Extract);
                Twist6::zero()
            }
            StageId::Extract => {
                state.cursor.l = (state.cursor.l - dt).max(0.0);
                state.cursor.finished = false;
                if state.cursor.l <= 0.0 {
                    state.enter(StageId::Done);
                    Twist6::zero()
                } else {
                    let target = est.valid.then(|| along_track(state.cursor.l));
                    let gains = if state.latch.attached() {
                        lambda(state.displacement)
                    } else {
                        Vector3::zeros()
                    };
                    drive(target, &Vector3::zeros(), &gains)
                }
            }
            StageId::Done => Twist6::zero(),
        },
    };

    state.ee = integrate_world(&state.ee, &state.command, dt);
    state.t += dt;
    state.step += 1;
    if !state.is_finite() {
        return Err(state.fault("non-finite state after integration"));
    }
    Ok(())
}

/// Runs one trial to completion. `keep_series` retains the per-step samples.
pub fn run_trial(ctx: &TrialContext, keep_series: bool) -> Result<TrialRecord, SimFault> {
    let dt = ctx.sim.dt();
    let mut state = WorldState::new(ctx);
    let mut series = Vec::new();
    while state.stage != StageId::Done {
        if state.t > ctx.sim.duration_limit {
            return Err(state.fault("trial exceeded its duration limit"));
        }
        step_world(&mut state, ctx, dt)?;
        if keep_series {
            series.push(state.sample(ctx));
        }
    }
    let outcome = state
        .outcome
        .ok_or_else(|| state.fault("trial finished without an outcome"))?;
    Ok(TrialRecord {
        spec: ctx.spec.clone(),
        control_rate: ctx.sim.control_rate,
        transitions: state.transitions,
        outcome,
        abort: state.latch.event,
        trigger_depth: state.trigger_depth,
        series,
    })
}
