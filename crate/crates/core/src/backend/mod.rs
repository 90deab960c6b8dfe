//! Evaluator contracts for the two reward-model tiers, the step reward, and
//! the backends that implement them.

pub mod oracle;
pub mod remote;
pub mod server;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::domain::{Action, StepContext, Validate};
use crate::rules::RuleError;

pub use oracle::{CoinFlipDs, NoisePattern, NoiseSchedule, OracleDs, OracleGp};
pub use remote::{RemoteBackend, RemoteConfig};
pub use server::{MockServer, MockServerConfig};

/// Input to the domain-specific tier: instruction, screen, history and the
/// proposed action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsInput {
    pub context: StepContext,
    pub a_pred: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsVerdict {
    pub y_ds: bool,
    pub r_ds: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_corr: Option<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_corr: Option<String>,
}

impl Validate for DsVerdict {
    fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.y_ds && self.a_corr.is_some() {
            out.push("a_corr: must be absent when y_ds is true".to_string());
        }
        if self.a_corr.is_some() != self.r_corr.is_some() {
            out.push("r_corr: present exactly when a_corr is present".to_string());
        }
        if let Some(a) = &self.a_corr {
            out.extend(a.violations("a_corr"));
        }
        out
    }
}

/// Input to the general-purpose tier: the DS input plus the DS verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpInput {
    pub context: StepContext,
    pub a_pred: Action,
    pub ds_verdict: DsVerdict,
}

impl GpInput {
    pub fn new(ds: &DsInput, verdict: &DsVerdict) -> Self {
        Self { context: ds.context.clone(), a_pred: ds.a_pred.clone(), ds_verdict: verdict.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    PreferPred,
    PreferCorr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPreference {
    pub preference: Preference,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpVerdict {
    /// Whether the DS decision is endorsed.
    pub y_gp: bool,
    /// Whether the task is judged complete after this step.
    pub e_gp: bool,
    pub s_gp: ActionPreference,
}

impl GpVerdict {
    /// Invariant violations relative to the input the verdict answers.
    pub fn violations_for(&self, input: &GpInput) -> Vec<String> {
        let mut out = Vec::new();
        if self.s_gp.preference == Preference::PreferCorr && input.ds_verdict.a_corr.is_none() {
            out.push("s_gp.preference: prefer_corr without a_corr".to_string());
        }
        out
    }
}

/// Step reward for the DS tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RewardValue {
    Match,
    FalsePositive,
    FalseNegative,
}

impl RewardValue {
    pub const ALL: [RewardValue; 3] = [Self::Match, Self::FalsePositive, Self::FalseNegative];

    pub fn value(&self) -> f64 {
        match self {
            RewardValue::Match => 1.0,
            RewardValue::FalsePositive => -0.5,
            RewardValue::FalseNegative => -0.2,
        }
    }
}

impl fmt::Display for RewardValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for RewardValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for RewardValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        RewardValue::ALL
            .into_iter()
            .find(|r| r.value() == v)
            .ok_or_else(|| serde::de::Error::custom(format!("reward {v} is not one of 1, -0.5, -0.2")))
    }
}

/// +1 when the verdict matches the truth, -0.5 for accepting a wrong action,
/// -0.2 for rejecting a right one.
pub fn ds_reward(y_ds: bool, y_gt: bool) -> RewardValue {
    match (y_ds, y_gt) {
        (a, b) if a == b => RewardValue::Match,
        (true, false) => RewardValue::FalsePositive,
        _ => RewardValue::FalseNegative,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    /// Transport failure or overload after exhausting retries.
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    /// The server refused the request body.
    #[error("request rejected: {error} (field `{field}`)")]
    Rejected { error: String, field: String },
    #[error("backend answered with status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed verdict: {}", .0.join("; "))]
    Malformed(Vec<String>),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

pub trait DsBackend: Send + Sync {
    fn ds_evaluate(&self, input: &DsInput) -> Result<DsVerdict, BackendError>;
}

pub trait GpBackend: Send + Sync {
    fn gp_evaluate(&self, input: &GpInput) -> Result<GpVerdict, BackendError>;
}
