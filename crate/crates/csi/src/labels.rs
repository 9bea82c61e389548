//! Class taxonomies for the two tasks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CsiError, Result};

/// Bumped whenever a class list changes.
pub const TAXONOMY_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occupancy {
    Nobody = 0,
    OnePerson = 1,
    TwoPersons = 2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Sit = 0,
    Stand = 1,
    Walk = 2,
    StandUp = 3,
    SitDown = 4,
}

impl Occupancy {
    pub const ALL: [Occupancy; 3] = [Occupancy::Nobody, Occupancy::OnePerson, Occupancy::TwoPersons];
    pub const NAMES: [&'static str; 3] = ["nobody", "one_person", "two_persons"];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| CsiError::Format(format!("occupancy label {i} outside 0..3")))
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.index()]
    }

    /// Whether a prediction of this class ends inference at the early branch.
    pub fn exits_early(self) -> bool {
        self != Occupancy::OnePerson
    }
}

impl Activity {
    pub const ALL: [Activity; 5] = [
        Activity::Sit,
        Activity::Stand,
        Activity::Walk,
        Activity::StandUp,
        Activity::SitDown,
    ];
    pub const NAMES: [&'static str; 5] = ["sit", "stand", "walk", "stand_up", "sit_down"];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| CsiError::Format(format!("activity label {i} outside 0..5")))
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.index()]
    }
}

impl fmt::Display for Occupancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
