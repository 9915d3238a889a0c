use serde::{Deserialize, Serialize};

use crate::engine::Violation;
use crate::model::{Expertise, FacilityId, PersonnelId, StaffChangeKind, StaffTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub personnel: PersonnelId,
    pub facility: FacilityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManagementAction {
    #[default]
    NoOp,
    Hire(Expertise),
    Fire(Expertise),
}

impl ManagementAction {
    /// Number of discrete management options (no-op, hire x3, fire x3).
    pub const OPTIONS: usize = 7;

    pub fn is_noop(self) -> bool {
        self == ManagementAction::NoOp
    }

    pub fn kind(self) -> Option<(StaffChangeKind, Expertise)> {
        match self {
            ManagementAction::NoOp => None,
            ManagementAction::Hire(level) => Some((StaffChangeKind::Hire, level)),
            ManagementAction::Fire(level) => Some((StaffChangeKind::Fire, level)),
        }
    }

    /// `0` no-op, `1..=3` hire novice/mid/expert, `4..=6` fire.
    pub fn encode(self) -> u8 {
        match self {
            ManagementAction::NoOp => 0,
            ManagementAction::Hire(l) => 1 + l.index() as u8,
            ManagementAction::Fire(l) => 4 + l.index() as u8,
        }
    }

    pub fn decode(code: u8) -> Option<Self> {
        match code {
            0 => Some(ManagementAction::NoOp),
            1..=3 => Expertise::from_index(code as usize - 1).map(ManagementAction::Hire),
            4..=6 => Expertise::from_index(code as usize - 4).map(ManagementAction::Fire),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacilityWeight {
    pub facility: FacilityId,
    pub weight: f64,
}

/// How the engine places a hire or picks a fire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positioning {
    /// Per-facility heat-map weights in `[0, 1]`, resolved by the engine.
    Weights(Vec<FacilityWeight>),
    /// Already-resolved hire location or fire target.
    Target(StaffTarget),
}

/// One time-step's joint action.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionSet {
    #[serde(default)]
    pub dispatch: Vec<Assignment>,
    #[serde(default)]
    pub management: ManagementAction,
    #[serde(default)]
    pub positioning: Option<Positioning>,
    /// Parts dropped while decoding an encoded action; replayed as
    /// violation events.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<Violation>,
}

impl ActionSet {
    pub fn noop() -> Self {
        Self::default()
    }

    pub fn dispatch_only(dispatch: Vec<Assignment>) -> Self {
        Self {
            dispatch,
            ..Self::default()
        }
    }
}
