use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// Treatment arm. Declaration order is the canonical arm order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "placebo")]
    Placebo,
    /// No efficacy at the group level.
    NE,
    /// Lower efficacy.
    LE,
    /// Moderate efficacy.
    ME,
    /// High efficacy.
    HE,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::Placebo, Arm::NE, Arm::LE, Arm::ME, Arm::HE];
    pub const TREATMENTS: [Arm; 4] = [Arm::NE, Arm::LE, Arm::ME, Arm::HE];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Placebo => "placebo",
            Arm::NE => "NE",
            Arm::LE => "LE",
            Arm::ME => "ME",
            Arm::HE => "HE",
        }
    }

    /// Position in [`Arm::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_placebo(self) -> bool {
        self == Arm::Placebo
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "placebo" => Ok(Arm::Placebo),
            "NE" => Ok(Arm::NE),
            "LE" => Ok(Arm::LE),
            "ME" => Ok(Arm::ME),
            "HE" => Ok(Arm::HE),
            other => Err(Error::Data(format!(
                "unknown arm '{other}' (expected placebo|NE|LE|ME|HE)"
            ))),
        }
    }
}
