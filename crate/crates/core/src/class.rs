use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Diagnostic class of a region or patch. Discriminants are the classifier's
/// output indices and fix the display order Normal, NPI, NPC.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Normal = 0,
    #[serde(rename = "NPI")]
    Npi = 1,
    #[serde(rename = "NPC")]
    Npc = 2,
}

pub const NUM_CLASSES: usize = 3;

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [ClassLabel::Normal, ClassLabel::Npi, ClassLabel::Npc];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ClassLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Normal => "Normal",
            ClassLabel::Npi => "NPI",
            ClassLabel::Npc => "NPC",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Normal" => Ok(ClassLabel::Normal),
            "NPI" => Ok(ClassLabel::Npi),
            "NPC" => Ok(ClassLabel::Npc),
            other => Err(Error::InvalidInput(format!("unknown class label {other:?}"))),
        }
    }
}
