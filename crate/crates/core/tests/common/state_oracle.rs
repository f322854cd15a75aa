//! Reference model for the gesture state machine, shared by the state
//! machine tests and the acceptance run.

use proptest::prelude::*;
use tactile_core::control::{recovery_trajectory, velocity_profile, Action, AuxTarget, ControlConfig, Pose, SessionState};
use tactile_core::GestureClass::{self, *};

pub const DWELL: usize = 20;
pub const INVALID_RELEASE: usize = 5;

/// One tick of input.
#[derive(Debug, Clone, Copy)]
pub struct Tick {
    pub detected: GestureClass,
    pub contact: bool,
}

/// Reference model: decisions come from counting back through history
/// rather than from incremental counters.
struct Oracle {
    cfg: ControlConfig,
    history: Vec<Tick>,
    /// History index where the last recovery ended; earlier ticks never count.
    counted_from: usize,
    active: Option<GestureClass>,
    recovery_left: usize,
    pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expected {
    Idle,
    Move(GestureClass),
    Recover,
}

impl Oracle {
    fn new(cfg: ControlConfig) -> Self {
        let pose = cfg.initial_pose.unwrap();
        Self {
            cfg,
            history: Vec::new(),
            counted_from: 0,
            active: None,
            recovery_left: 0,
            pose,
        }
    }

    /// Trailing ticks (outside recovery) that satisfy `pred`.
    fn run(&self, pred: impl Fn(&Tick) -> bool) -> usize {
        self.history[self.counted_from..].iter().rev().take_while(|t| pred(t)).count()
    }

    fn step(&mut self, tick: Tick) -> Expected {
        if self.recovery_left > 0 {
            self.recovery_left -= 1;
            if self.recovery_left == 0 {
                self.active = None;
                self.counted_from = self.history.len() + 1;
            }
            self.history.push(tick);
            return Expected::Recover;
        }
        self.history.push(tick);
        if !tick.contact {
            self.active = None;
            return Expected::Idle;
        }
        if tick.detected == Invalid {
            if self.run(|t| t.contact && t.detected == Invalid) >= INVALID_RELEASE {
                self.active = None;
            }
        } else {
            let same = self.run(|t| t.contact && t.detected == tick.detected);
            if same == DWELL && self.active != Some(tick.detected) {
                if let Some(target) = AuxTarget::for_class(tick.detected) {
                    let goal = self.cfg.target(target).unwrap();
                    let n = recovery_trajectory(&self.pose, &goal, &self.cfg).len();
                    if n == 0 {
                        self.active = None;
                        return Expected::Idle;
                    }
                    self.active = Some(tick.detected);
                    self.pose = goal;
                    self.recovery_left = n - 1;
                    if self.recovery_left == 0 {
                        self.active = None;
                        self.counted_from = self.history.len();
                    }
                    return Expected::Recover;
                }
                self.active = Some(tick.detected);
            }
        }
        match self.active {
            Some(c) => {
                let tw = velocity_profile(c, &self.cfg).unwrap();
                self.pose = self.pose.integrate(&tw, self.cfg.tick_s);
                Expected::Move(c)
            }
            None => Expected::Idle,
        }
    }
}

fn classify(action: &Action, cfg: &ControlConfig) -> Expected {
    match action {
        Action::Idle => Expected::Idle,
        Action::Recover { .. } => Expected::Recover,
        Action::Move(tw) => {
            let class = GestureClass::gestures()
                .filter(|c| c.is_motion())
                .find(|&c| velocity_profile(c, cfg).unwrap() == *tw)
                .expect("every twist belongs to one motion gesture");
            Expected::Move(class)
        }
    }
}

/// Drives the machine and the oracle together, checking the invariants on
/// every tick. Returns the actions.
pub fn check(ticks: &[Tick]) -> Result<Vec<Expected>, TestCaseError> {
    let cfg = ControlConfig::default();
    let mut sm = SessionState::new(cfg.clone());
    let mut oracle = Oracle::new(cfg.clone());
    let mut out = Vec::with_capacity(ticks.len());
    for (i, t) in ticks.iter().enumerate() {
        let before = sm.active;
        let action = sm.step(t.detected, t.contact);
        let got = classify(&action, &cfg);
        let want = oracle.step(*t);
        prop_assert_eq!(got, want, "tick {}", i);
        prop_assert_eq!(sm.active, oracle.active, "active at tick {}", i);
        prop_assert!(sm.active != Some(Invalid), "Invalid became active at tick {}", i);
        if let Expected::Move(c) = got {
            prop_assert!(t.contact, "twist without contact at tick {}", i);
            prop_assert_eq!(Some(c), sm.active, "twist of an inactive gesture at tick {}", i);
            if before != Some(c) {
                // A new activation must rest on a full dwell of that class.
                prop_assert!(i + 1 >= DWELL);
                prop_assert!(ticks[i + 1 - DWELL..=i].iter().all(|t| t.contact && t.detected == c), "short dwell at tick {}", i);
            }
        }
        if matches!(got, Expected::Idle) && !sm.aux_in_progress() && !t.contact {
            prop_assert_eq!(sm.active, None);
        }
        out.push(got);
    }
    Ok(out)
}

pub fn steady(class: GestureClass, n: usize) -> Vec<Tick> {
    vec![Tick { detected: class, contact: true }; n]
}

pub fn class_strategy() -> impl Strategy<Value = GestureClass> {
    prop_oneof![
        8 => (0..12usize).prop_map(|i| GestureClass::gestures().filter(|c| c.is_motion()).nth(i).unwrap()),
        3 => Just(Invalid),
        1 => prop_oneof![Just(AuxHome), Just(AuxInitPose)],
    ]
}

/// Runs of one detection, sometimes with lift-off, sized around the dwell.
pub fn script_strategy() -> impl Strategy<Value = Vec<Tick>> {
    prop::collection::vec((class_strategy(), 1..45usize, prop::bool::weighted(0.9)), 1..40).prop_map(|runs| {
        runs.into_iter()
            .flat_map(|(c, n, contact)| std::iter::repeat(Tick { detected: c, contact }).take(n))
            .collect()
    })
}


/// Exhaustive scripted scenarios, each an `Err` naming the first violation.
pub mod scenarios {
    use super::*;

    fn motion() -> impl Iterator<Item = GestureClass> {
        GestureClass::gestures().filter(|c| c.is_motion())
    }

    fn run(ticks: &[Tick]) -> Result<Vec<Expected>, String> {
        check(ticks).map_err(|e| e.to_string())
    }

    /// No action on tick 19, action from tick 20 on, for every motion gesture.
    pub fn dwell_exact() -> Result<(), String> {
        for c in motion() {
            let acts = run(&steady(c, 40))?;
            if !acts[..DWELL - 1].iter().all(|a| *a == Expected::Idle) {
                return Err(format!("{c} acted before tick {DWELL}"));
            }
            if !acts[DWELL - 1..].iter().all(|a| *a == Expected::Move(c)) {
                return Err(format!("{c} did not act from tick {DWELL}"));
            }
        }
        Ok(())
    }

    /// One different tick anywhere inside a dwell restarts it.
    pub fn interrupted_dwell() -> Result<(), String> {
        for c in motion() {
            for other in GestureClass::ALL.into_iter().filter(|&o| o != c && !o.is_aux()) {
                for k in 1..DWELL {
                    let mut s = steady(c, k);
                    s.extend(steady(other, 1));
                    s.extend(steady(c, DWELL));
                    let acts = run(&s)?;
                    if acts[..k + DWELL].iter().any(|a| *a == Expected::Move(c)) || acts[k + DWELL] != Expected::Move(c) {
                        return Err(format!("{c} interrupted by {other} after {k} ticks"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Lift-off ends motion on the same tick.
    pub fn lift_off() -> Result<(), String> {
        for c in motion() {
            let mut s = steady(c, 30);
            s.push(Tick { detected: c, contact: false });
            s.extend(steady(c, 5));
            let acts = run(&s)?;
            if acts[29] != Expected::Move(c) || !acts[30..].iter().all(|a| *a == Expected::Idle) {
                return Err(format!("{c} kept moving after lift-off"));
            }
        }
        Ok(())
    }

    /// A newly dwelled gesture replaces the active one in a single tick.
    pub fn preemption() -> Result<(), String> {
        for a in motion() {
            for b in motion().filter(|b| *b != a) {
                let mut s = steady(a, 25);
                s.extend(steady(b, 25));
                let acts = run(&s)?;
                let held = acts[25..25 + DWELL - 1].iter().all(|x| *x == Expected::Move(a));
                let switched = acts[25 + DWELL - 1..].iter().all(|x| *x == Expected::Move(b));
                if !(held && switched) {
                    return Err(format!("{a} -> {b} did not switch atomically"));
                }
            }
        }
        Ok(())
    }

    /// Invalid detections never act, alone or interleaved with lift-offs.
    pub fn invalid_never_acts() -> Result<(), String> {
        let mut s = steady(Invalid, 500);
        s.extend((0..200).map(|i| Tick { detected: Invalid, contact: i % 7 != 0 }));
        if run(&s)?.iter().any(|a| *a != Expected::Idle) {
            return Err("Invalid produced an action".into());
        }
        Ok(())
    }

    pub const ALL: [(&str, fn() -> Result<(), String>); 5] = [
        ("dwell", dwell_exact),
        ("interrupted dwell", interrupted_dwell),
        ("lift-off", lift_off),
        ("preemption", preemption),
        ("invalid", invalid_never_acts),
    ];
}
