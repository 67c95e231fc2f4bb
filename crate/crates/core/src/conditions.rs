//! Condition tags shared by the prompt factory, the planner, and the
//! metrics layer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The five answer-visibility prompt conditions, ordered by decreasing
/// answer visibility: AE > AER > AMR > ARR > AF.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "UPPERCASE")]
pub enum PromptCondition {
    /// Answer-Explicit: the correct final answer is stated outright.
    Ae,
    /// Answer-Embedded-Reasoning: the answer appears inside a full
    /// reasoning chain.
    Aer,
    /// Answer-Masked-Reasoning: the chain is present but every answer
    /// expression is replaced by `[MASK]`.
    Amr,
    /// Answer-Removed-Reasoning: answer-bearing sentences are excised
    /// from the chain.
    Arr,
    /// Answer-Free: the bare problem statement.
    Af,
}

impl PromptCondition {
    pub const ALL: [PromptCondition; 5] = [
        PromptCondition::Ae,
        PromptCondition::Aer,
        PromptCondition::Amr,
        PromptCondition::Arr,
        PromptCondition::Af,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptCondition::Ae => "AE",
            PromptCondition::Aer => "AER",
            PromptCondition::Amr => "AMR",
            PromptCondition::Arr => "ARR",
            PromptCondition::Af => "AF",
        }
    }

    /// True when rendering this condition needs a reasoning chain.
    pub fn requires_chain(self) -> bool {
        matches!(
            self,
            PromptCondition::Aer | PromptCondition::Amr | PromptCondition::Arr
        )
    }
}

impl fmt::Display for PromptCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptCondition {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "AE" => Ok(PromptCondition::Ae),
            "AER" => Ok(PromptCondition::Aer),
            "AMR" => Ok(PromptCondition::Amr),
            "ARR" => Ok(PromptCondition::Arr),
            "AF" => Ok(PromptCondition::Af),
            _ => Err(UnknownTag(s.to_string())),
        }
    }
}

/// Conflicting answer/reasoning pairings built from a problem and its
/// unmodified original counterpart.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConflictCondition {
    /// Right answer, wrong reasoning.
    RaWr,
    /// Wrong answer, right reasoning.
    WaRr,
    /// Wrong answer, wrong reasoning.
    WaWr,
}

impl ConflictCondition {
    pub const ALL: [ConflictCondition; 3] = [
        ConflictCondition::RaWr,
        ConflictCondition::WaRr,
        ConflictCondition::WaWr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConflictCondition::RaWr => "RA_WR",
            ConflictCondition::WaRr => "WA_RR",
            ConflictCondition::WaWr => "WA_WR",
        }
    }
}

impl fmt::Display for ConflictCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConflictCondition {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RA_WR" | "RA/WR" => Ok(ConflictCondition::RaWr),
            "WA_RR" | "WA/RR" => Ok(ConflictCondition::WaRr),
            "WA_WR" | "WA/WR" => Ok(ConflictCondition::WaWr),
            _ => Err(UnknownTag(s.to_string())),
        }
    }
}

/// Warning prefix telling the model to distrust the provided answer.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "UPPERCASE")]
pub enum WarningVariant {
    #[default]
    None,
    Soft,
    Hard,
}

impl WarningVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            WarningVariant::None => "NONE",
            WarningVariant::Soft => "SOFT",
            WarningVariant::Hard => "HARD",
        }
    }
}

impl fmt::Display for WarningVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WarningVariant {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NONE" => Ok(WarningVariant::None),
            "SOFT" => Ok(WarningVariant::Soft),
            "HARD" => Ok(WarningVariant::Hard),
            _ => Err(UnknownTag(s.to_string())),
        }
    }
}

/// Either a visibility condition or a conflict pairing; what a rendered
/// prompt and a metrics cell are keyed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConditionTag {
    Prompt(PromptCondition),
    Conflict(ConflictCondition),
}

impl ConditionTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ConditionTag::Prompt(c) => c.as_str(),
            ConditionTag::Conflict(c) => c.as_str(),
        }
    }

    pub fn requires_chain(self) -> bool {
        match self {
            ConditionTag::Prompt(c) => c.requires_chain(),
            // Conflict prompts always embed a reasoning chain.
            ConditionTag::Conflict(_) => true,
        }
    }
}

impl From<PromptCondition> for ConditionTag {
    fn from(c: PromptCondition) -> Self {
        ConditionTag::Prompt(c)
    }
}

impl From<ConflictCondition> for ConditionTag {
    fn from(c: ConflictCondition) -> Self {
        ConditionTag::Conflict(c)
    }
}

impl fmt::Display for ConditionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionTag {
    type Err = UnknownTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(c) = s.parse::<PromptCondition>() {
            return Ok(ConditionTag::Prompt(c));
        }
        if let Ok(c) = s.parse::<ConflictCondition>() {
            return Ok(ConditionTag::Conflict(c));
        }
        Err(UnknownTag(s.to_string()))
    }
}

impl Serialize for ConditionTag {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ConditionTag {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An unrecognized condition or warning tag.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown tag {0:?}; valid tags: AE, AER, AMR, ARR, AF, RA_WR, WA_RR, WA_WR")]
pub struct UnknownTag(pub String);
