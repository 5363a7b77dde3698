//! Token layout shared by the handcrafted hazard model and the gridworld
//! tokenizer.
//!
//! Hazard and ego-marker tokens come in per-column families so that the
//! lateral position of a pedestrian (or of the observing vehicle) is part of
//! the token identity. The raster itself is map-anchored, which means a
//! `HAZARD` token produced by one vehicle names the same road column for
//! every reader of its key/value entries.

use std::fmt;

use serde::Serialize;

/// Widest road the lateral code can represent without aliasing.
pub const MAX_COLUMNS: usize = 7;

pub const CLEAR: u32 = 0;
pub const OBSTACLE: u32 = 1;
pub const OCCLUDED: u32 = 2;
pub const GOAL: u32 = 3;
pub const VEHICLE: u32 = 4;
pub const HAZARD_BASE: u32 = 5;
pub const EGO_BASE: u32 = HAZARD_BASE + MAX_COLUMNS as u32;
pub const ACTION_BASE: u32 = EGO_BASE + 2 * MAX_COLUMNS as u32;

/// Number of token ids used by the layout.
pub const VOCAB_SIZE: usize = ACTION_BASE as usize + Action::ALL.len();

/// Pedestrian visible in road column `col`.
pub fn hazard(col: usize) -> u32 {
    assert!(col < MAX_COLUMNS, "column {col} outside lateral code");
    HAZARD_BASE + col as u32
}

/// Ego marker for a vehicle in column `col`; `stopped` is set at zero speed.
pub fn ego_marker(col: usize, stopped: bool) -> u32 {
    assert!(col < MAX_COLUMNS, "column {col} outside lateral code");
    EGO_BASE + 2 * col as u32 + stopped as u32
}

pub fn is_hazard(token: u32) -> bool {
    (HAZARD_BASE..EGO_BASE).contains(&token)
}

pub fn is_ego_marker(token: u32) -> bool {
    (EGO_BASE..ACTION_BASE).contains(&token)
}

/// Column carried by a hazard or ego-marker token.
pub fn column_of(token: u32) -> Option<usize> {
    if is_hazard(token) {
        Some((token - HAZARD_BASE) as usize)
    } else if is_ego_marker(token) {
        Some(((token - EGO_BASE) / 2) as usize)
    } else {
        None
    }
}

/// Lateral angle used to encode a column: neighbours are 45 degrees apart.
pub fn lateral_angle(col: usize) -> f32 {
    col as f32 * std::f32::consts::FRAC_PI_4
}

/// Driving actions decoded from the action slots of the output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Action {
    Accel,
    Keep,
    Brake,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Accel,
        Action::Keep,
        Action::Brake,
        Action::Left,
        Action::Right,
    ];

    pub fn token(self) -> u32 {
        ACTION_BASE + self as u32
    }

    pub fn from_token(token: u32) -> Option<Action> {
        token
            .checked_sub(ACTION_BASE)
            .and_then(|i| Action::ALL.get(i as usize).copied())
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Accel => "ACCEL",
            Action::Keep => "KEEP",
            Action::Brake => "BRAKE",
            Action::Left => "LEFT",
            Action::Right => "RIGHT",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
