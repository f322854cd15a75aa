use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The 15-way gesture label: 12 motion gestures, 2 auxiliary gestures and a
/// catch-all invalid class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GestureClass {
    /// Two-finger pinch-in.
    TranslateXPos,
    /// Single-finger push.
    TranslateXNeg,
    /// Single-finger swipe right.
    TranslateYPos,
    /// Single-finger swipe left.
    TranslateYNeg,
    /// Single-finger swipe up.
    TranslateZPos,
    /// Single-finger swipe down.
    TranslateZNeg,
    /// Two-finger clockwise circular stroke.
    RotateXPos,
    /// Two-finger anti-clockwise circular stroke.
    RotateXNeg,
    /// Two-finger swipe up.
    RotateYPos,
    /// Two-finger swipe down.
    RotateYNeg,
    /// Two-finger swipe right.
    RotateZPos,
    /// Two-finger swipe left.
    RotateZNeg,
    /// Five-finger pinch-in: return to the task's initial pose.
    AuxInitPose,
    /// Five-finger pinch-out: go to the home posture.
    AuxHome,
    Invalid,
}

impl GestureClass {
    pub const COUNT: usize = 15;

    pub const ALL: [GestureClass; 15] = [
        GestureClass::TranslateXPos,
        GestureClass::TranslateXNeg,
        GestureClass::TranslateYPos,
        GestureClass::TranslateYNeg,
        GestureClass::TranslateZPos,
        GestureClass::TranslateZNeg,
        GestureClass::RotateXPos,
        GestureClass::RotateXNeg,
        GestureClass::RotateYPos,
        GestureClass::RotateYNeg,
        GestureClass::RotateZPos,
        GestureClass::RotateZNeg,
        GestureClass::AuxInitPose,
        GestureClass::AuxHome,
        GestureClass::Invalid,
    ];

    /// The 14 actionable gestures (everything but [`GestureClass::Invalid`]).
    pub fn gestures() -> impl Iterator<Item = GestureClass> {
        Self::ALL.into_iter().filter(|c| *c != GestureClass::Invalid)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<GestureClass> {
        Self::ALL.get(i).copied()
    }

    pub fn is_motion(self) -> bool {
        !matches!(
            self,
            GestureClass::AuxInitPose | GestureClass::AuxHome | GestureClass::Invalid
        )
    }

    pub fn is_aux(self) -> bool {
        matches!(self, GestureClass::AuxInitPose | GestureClass::AuxHome)
    }

    /// Number of fingers in the canonical trajectory family.
    pub fn finger_count(self) -> Option<usize> {
        use GestureClass::*;
        match self {
            TranslateXNeg | TranslateYPos | TranslateYNeg | TranslateZPos | TranslateZNeg => {
                Some(1)
            }
            TranslateXPos | RotateXPos | RotateXNeg | RotateYPos | RotateYNeg | RotateZPos
            | RotateZNeg => Some(2),
            AuxInitPose | AuxHome => Some(5),
            Invalid => None,
        }
    }

    pub fn name(self) -> &'static str {
        use GestureClass::*;
        match self {
            TranslateXPos => "TranslateXPos",
            TranslateXNeg => "TranslateXNeg",
            TranslateYPos => "TranslateYPos",
            TranslateYNeg => "TranslateYNeg",
            TranslateZPos => "TranslateZPos",
            TranslateZNeg => "TranslateZNeg",
            RotateXPos => "RotateXPos",
            RotateXNeg => "RotateXNeg",
            RotateYPos => "RotateYPos",
            RotateYNeg => "RotateYNeg",
            RotateZPos => "RotateZPos",
            RotateZNeg => "RotateZNeg",
            AuxInitPose => "AuxInitPose",
            AuxHome => "AuxHome",
            Invalid => "Invalid",
        }
    }
}

impl fmt::Display for GestureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown gesture class `{0}`")]
pub struct UnknownClass(pub String);

impl FromStr for GestureClass {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownClass(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifteen_classes_with_stable_indices() {
        assert_eq!(GestureClass::ALL.len(), GestureClass::COUNT);
        for (i, c) in GestureClass::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(GestureClass::from_index(i), Some(*c));
        }
        assert_eq!(GestureClass::gestures().count(), 14);
        assert_eq!(GestureClass::ALL.iter().filter(|c| c.is_motion()).count(), 12);
    }

    #[test]
    fn parse_round_trip() {
        for c in GestureClass::ALL {
            assert_eq!(c.name().parse::<GestureClass>().unwrap(), c);
        }
        assert!("SwipeSideways".parse::<GestureClass>().is_err());
    }
}
