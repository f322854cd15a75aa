//! Gesture-to-motion state machine and task-space pose integration.
//!
//! Axes are the end-effector frame: pinch-in drives `+x`, a push `-x`;
//! one-finger swipes right/left and up/down drive `±y` and `±z`. Two-finger
//! circles rotate about `x` (clockwise seen facing the skin is positive),
//! two-finger vertical swipes about `y`, horizontal swipes about `z`.

use std::collections::VecDeque;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::gesture::GestureClass;
use crate::TICK_S;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ControlError {
    #[error("{0} has no velocity profile")]
    NoProfile(GestureClass),
    #[error("no {0:?} pose is configured")]
    UnsetTarget(AuxTarget),
}

/// Linear (m/s) and angular (rad/s) velocity in the end-effector frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub linear: [f64; 3],
    pub angular: [f64; 3],
}

impl Twist {
    pub const ZERO: Twist = Twist {
        linear: [0.0; 3],
        angular: [0.0; 3],
    };

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

/// Serialized pose: position in meters, orientation as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        let q = p.orientation.quaternion();
        Self {
            position: p.position.into(),
            orientation: [q.w, q.i, q.j, q.k],
        }
    }
}

impl From<PoseRecord> for Pose {
    fn from(r: PoseRecord) -> Self {
        let [w, x, y, z] = r.orientation;
        Self {
            position: r.position.into(),
            orientation: UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
        }
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseRecord::from(*self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        PoseRecord::deserialize(d).map(Pose::from)
    }
}

impl Pose {
    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Self {
            position: Vector3::new(x, y, z),
            orientation: UnitQuaternion::identity(),
        }
    }

    /// One integration step; see [`integrate_pose`].
    pub fn integrate(&self, twist: &Twist, dt: f64) -> Pose {
        integrate_pose(self, twist, dt)
    }

    /// Shortest rotation angle to `other`, in `[0, π]`.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        self.orientation.angle_to(&other.orientation)
    }
}

/// Advances a pose by an end-effector-frame twist held for `dt` seconds:
/// the linear part is rotated into the world frame, the orientation is
/// right-multiplied by `exp(angular · dt)` and renormalized.
pub fn integrate_pose(pose: &Pose, twist: &Twist, dt: f64) -> Pose {
    let v = Vector3::from(twist.linear);
    let w = Vector3::from(twist.angular);
    let position = pose.position + pose.orientation * v * dt;
    let mut q = pose.orientation.into_inner() * UnitQuaternion::from_scaled_axis(w * dt).into_inner();
    q = q.normalize();
    Pose {
        position,
        orientation: UnitQuaternion::new_unchecked(q),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxTarget {
    Initial,
    Home,
}

impl AuxTarget {
    pub fn for_class(class: GestureClass) -> Option<Self> {
        match class {
            GestureClass::AuxInitPose => Some(AuxTarget::Initial),
            GestureClass::AuxHome => Some(AuxTarget::Home),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    /// Translation speed of the motion gestures, m/s.
    pub linear_speed: f64,
    /// Rotation speed of the motion gestures, rad/s.
    pub angular_speed: f64,
    /// Consecutive identical detections before a gesture activates.
    pub dwell_ticks: u32,
    /// Consecutive Invalid detections that end an active gesture.
    pub invalid_release_ticks: u32,
    pub recovery_linear_speed: f64,
    pub recovery_angular_speed: f64,
    pub tick_s: f64,
    pub initial_pose: Option<Pose>,
    pub home_pose: Option<Pose>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            linear_speed: 0.05,
            angular_speed: 0.2,
            dwell_ticks: 20,
            invalid_release_ticks: 5,
            recovery_linear_speed: 0.2,
            recovery_angular_speed: 0.5,
            tick_s: TICK_S,
            initial_pose: Some(Pose::at(0.4, 0.0, 0.3)),
            home_pose: Some(Pose::at(0.3, 0.0, 0.45)),
        }
    }
}

impl ControlConfig {
    pub fn target(&self, t: AuxTarget) -> Result<Pose, ControlError> {
        match t {
            AuxTarget::Initial => self.initial_pose,
            AuxTarget::Home => self.home_pose,
        }
        .ok_or(ControlError::UnsetTarget(t))
    }
}

/// The twist a motion gesture commands.
pub fn velocity_profile(class: GestureClass, cfg: &ControlConfig) -> Result<Twist, ControlError> {
    use GestureClass::*;
    let (v, w) = (cfg.linear_speed, cfg.angular_speed);
    let (linear, angular) = match class {
        TranslateXPos => ([v, 0.0, 0.0], [0.0; 3]),
        TranslateXNeg => ([-v, 0.0, 0.0], [0.0; 3]),
        TranslateYPos => ([0.0, v, 0.0], [0.0; 3]),
        TranslateYNeg => ([0.0, -v, 0.0], [0.0; 3]),
        TranslateZPos => ([0.0, 0.0, v], [0.0; 3]),
        TranslateZNeg => ([0.0, 0.0, -v], [0.0; 3]),
        RotateXPos => ([0.0; 3], [w, 0.0, 0.0]),
        RotateXNeg => ([0.0; 3], [-w, 0.0, 0.0]),
        RotateYPos => ([0.0; 3], [0.0, w, 0.0]),
        RotateYNeg => ([0.0; 3], [0.0, -w, 0.0]),
        RotateZPos => ([0.0; 3], [0.0, 0.0, w]),
        RotateZNeg => ([0.0; 3], [0.0, 0.0, -w]),
        AuxInitPose | AuxHome | Invalid => return Err(ControlError::NoProfile(class)),
    };
    Ok(Twist { linear, angular })
}

/// Poses for a straight-line, shortest-arc move from `from` to `to`, one per
/// tick, paced by whichever of the two speed limits binds. The last pose is
/// exactly `to`; an empty trajectory means `from` is already there.
pub fn recovery_trajectory(from: &Pose, to: &Pose, cfg: &ControlConfig) -> Vec<Pose> {
    let distance = (to.position - from.position).norm();
    let angle = from.angle_to(to);
    let seconds = (distance / cfg.recovery_linear_speed).max(angle / cfg.recovery_angular_speed);
    // The epsilon keeps exact multiples of a tick from rounding up.
    let ticks = (seconds / cfg.tick_s - 1e-9).ceil().max(0.0) as usize;
    if ticks == 0 {
        return Vec::new();
    }
    let mut target_q = to.orientation;
    if from.orientation.coords.dot(&target_q.coords) < 0.0 {
        target_q = UnitQuaternion::new_unchecked(-target_q.into_inner());
    }
    let mut out: Vec<Pose> = (1..ticks)
        .map(|k| {
            let s = k as f64 / ticks as f64;
            Pose {
                position: from.position.lerp(&to.position, s),
                orientation: from.orientation.slerp(&target_q, s),
            }
        })
        .collect();
    out.push(*to);
    out
}

/// Recovery poses from the current pose to a configured target.
pub fn aux_recover(state: &SessionState, target: AuxTarget) -> Result<Vec<Pose>, ControlError> {
    let goal = state.config.target(target)?;
    Ok(recovery_trajectory(&state.pose, &goal, &state.config))
}

/// What one tick commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Idle,
    Move(Twist),
    /// One pose step of an automatic recovery move; `step` counts from 1.
    Recover { target: AuxTarget, step: usize, total: usize },
}

impl Action {
    pub fn twist(&self) -> Option<Twist> {
        match self {
            Action::Move(t) => Some(*t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Recovery {
    target: AuxTarget,
    total: usize,
    remaining: VecDeque<Pose>,
}

/// Tick-driven gesture state machine and the pose it drives.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub config: ControlConfig,
    pub active: Option<GestureClass>,
    /// The class the current run of identical detections belongs to.
    pub candidate: Option<GestureClass>,
    pub dwell_count: u32,
    pub invalid_run: u32,
    pub pose: Pose,
    recovery: Option<Recovery>,
}

impl SessionState {
    /// Starts at the configured initial pose, or the origin if none is set.
    pub fn new(config: ControlConfig) -> Self {
        let pose = config.initial_pose.unwrap_or(Pose::at(0.0, 0.0, 0.0));
        Self::with_pose(config, pose)
    }

    pub fn with_pose(config: ControlConfig, pose: Pose) -> Self {
        Self {
            config,
            active: None,
            candidate: None,
            dwell_count: 0,
            invalid_run: 0,
            pose,
            recovery: None,
        }
    }

    pub fn aux_in_progress(&self) -> bool {
        self.recovery.is_some()
    }

    /// Drops any active gesture, candidate or recovery. The pose stays.
    pub fn halt(&mut self) {
        self.active = None;
        self.candidate = None;
        self.dwell_count = 0;
        self.invalid_run = 0;
        self.recovery = None;
    }

    fn release(&mut self) {
        self.active = None;
        self.candidate = None;
        self.dwell_count = 0;
    }

    /// Consumes one detection and advances the pose by one tick.
    pub fn step(&mut self, detected: GestureClass, contact_present: bool) -> Action {
        if let Some(rec) = &mut self.recovery {
            let pose = rec.remaining.pop_front().expect("recovery holds at least one pose");
            let (target, total, left) = (rec.target, rec.total, rec.remaining.len());
            self.pose = pose;
            if left == 0 {
                self.recovery = None;
                self.active = None;
            }
            return Action::Recover {
                target,
                step: total - left,
                total,
            };
        }

        if !contact_present {
            self.release();
            self.invalid_run = 0;
            return Action::Idle;
        }

        if detected == GestureClass::Invalid {
            self.candidate = None;
            self.dwell_count = 0;
            self.invalid_run += 1;
            if self.invalid_run >= self.config.invalid_release_ticks {
                self.active = None;
            }
            return self.emit();
        }
        self.invalid_run = 0;

        if self.candidate == Some(detected) {
            self.dwell_count = self.dwell_count.saturating_add(1);
        } else {
            self.candidate = Some(detected);
            self.dwell_count = 1;
        }

        if self.dwell_count == self.config.dwell_ticks && self.active != Some(detected) {
            if let Some(target) = AuxTarget::for_class(detected) {
                return self.start_recovery(detected, target);
            }
            self.active = Some(detected);
        }
        self.emit()
    }

    fn start_recovery(&mut self, class: GestureClass, target: AuxTarget) -> Action {
        let Ok(goal) = self.config.target(target) else {
            // No target configured: the gesture is ignored.
            self.active = None;
            return Action::Idle;
        };
        let path = recovery_trajectory(&self.pose, &goal, &self.config);
        if path.is_empty() {
            self.active = None;
            return Action::Idle;
        }
        self.active = Some(class);
        self.recovery = Some(Recovery {
            target,
            total: path.len(),
            remaining: path.into(),
        });
        self.candidate = None;
        self.dwell_count = 0;
        self.step(class, true)
    }

    fn emit(&mut self) -> Action {
        let Some(class) = self.active else {
            return Action::Idle;
        };
        match velocity_profile(class, &self.config) {
            Ok(twist) => {
                self.pose = integrate_pose(&self.pose, &twist, self.config.tick_s);
                Action::Move(twist)
            }
            Err(_) => Action::Idle,
        }
    }
}
