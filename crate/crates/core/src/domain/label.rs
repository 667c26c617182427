use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Depth-error outcome class. `Fp`: estimate nearer than truth (phantom
/// obstacle); `Fn`: estimate farther than truth (missed obstacle).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureLabel {
    Fp,
    Fn,
    Tp,
    Tn,
}

impl FailureLabel {
    pub const ALL: [FailureLabel; 4] = [FailureLabel::Fp, FailureLabel::Fn, FailureLabel::Tp, FailureLabel::Tn];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_failure(self) -> bool {
        matches!(self, FailureLabel::Fp | FailureLabel::Fn)
    }

    pub fn name(self) -> &'static str {
        match self {
            FailureLabel::Fp => "FP",
            FailureLabel::Fn => "FN",
            FailureLabel::Tp => "TP",
            FailureLabel::Tn => "TN",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown failure label '{s}'")))
    }
}
