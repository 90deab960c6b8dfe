//! Reward-data construction: rule-verified candidates, perturbation-based
//! easy negatives, intention-checked OS-agent actions with grounding repair,
//! and difficulty-balanced dataset assembly.

pub mod catalog;
pub mod correct;
pub mod dataset;
pub mod perturb;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::codec::CodecError;
use crate::domain::{DifficultyTier, FailureAxis, RewardSample, SampleSource, Split, StepContext, Stratum};
use crate::rules::{RuleConfig, RuleError};
use crate::world::AgentErrorProfile;

pub use catalog::{substitute_instruction, CatalogGroup, InstructionCatalog, SubstitutionError};
pub use correct::{classify_os_action, match_intention, repair_grounding, IntentMatch, OsClassification};
pub use dataset::{build_dataset, collect_sources, export_dataset, DatasetManifest, SourcePools};
pub use perturb::{stitch_trajectories, synthesize_easy_negatives, EasyNegatives, StitchError};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Target share of each tier in the assembled dataset. Weights need not sum
/// to one; they are normalized at assembly time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TierWeights(pub BTreeMap<DifficultyTier, f64>);

impl Default for TierWeights {
    /// Positive share 0.534 (38,909 of 72,922 samples); negatives split
    /// between easy, moderate and hard.
    fn default() -> Self {
        TierWeights(BTreeMap::from([
            (DifficultyTier::Positive, 0.534),
            (DifficultyTier::EasyNegative, 0.18),
            (DifficultyTier::ModerateNegative, 0.143),
            (DifficultyTier::HardNegative, 0.143),
        ]))
    }
}

impl TierWeights {
    pub fn get(&self, t: DifficultyTier) -> f64 {
        self.0.get(&t).copied().unwrap_or(0.0)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (t, w) in &self.0 {
            if !w.is_finite() || *w < 0.0 {
                out.push(format!("tier_weights.{}: must be a non-negative number", t.short()));
            }
        }
        if self.0.values().copied().filter(|w| w.is_finite()).sum::<f64>() <= 0.0 {
            out.push("tier_weights: at least one weight must be positive".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub total: usize,
    pub tier_weights: TierWeights,
    /// Distance within which an off-target point still counts as aiming at
    /// a valid region.
    pub snap_radius: f64,
    /// Share of easy negatives produced by trajectory stitching; the rest
    /// come from instruction substitution.
    pub stitch_share: f64,
    /// Policy whose proposals are labeled directly by the rules.
    pub main_agent: AgentErrorProfile,
    pub main_agent_draws: u32,
    /// Open-source-style agents whose proposals go through intention
    /// matching and repair.
    pub os_agents: Vec<AgentErrorProfile>,
    pub strict_text: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            total: 5000,
            tier_weights: TierWeights::default(),
            snap_radius: 0.05,
            stitch_share: 0.5,
            main_agent: AgentErrorProfile {
                p_type_error: 0.12,
                p_grounding_offset: 0.25,
                p_intent_error: 0.0,
                p_semantic_error: 0.12,
                grounding_offset_scale: 0.08,
            },
            main_agent_draws: 2,
            os_agents: vec![
                AgentErrorProfile {
                    p_type_error: 0.0,
                    p_grounding_offset: 0.5,
                    p_intent_error: 0.25,
                    p_semantic_error: 0.0,
                    grounding_offset_scale: 0.03,
                },
                AgentErrorProfile {
                    p_type_error: 0.0,
                    p_grounding_offset: 0.6,
                    p_intent_error: 0.35,
                    p_semantic_error: 0.0,
                    grounding_offset_scale: 0.04,
                },
            ],
            strict_text: false,
        }
    }
}

impl SynthConfig {
    pub fn rules(&self) -> RuleConfig {
        RuleConfig { strict_text: self.strict_text }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = self.tier_weights.violations();
        if self.total == 0 {
            out.push("total: must be at least 1".to_string());
        }
        if !(self.snap_radius >= 0.0 && self.snap_radius < 1.0) {
            out.push("snap_radius: must be in [0,1)".to_string());
        }
        if !(0.0..=1.0).contains(&self.stitch_share) {
            out.push("stitch_share: must be in [0,1]".to_string());
        }
        out.extend(self.main_agent.violations().into_iter().map(|v| format!("main_agent.{v}")));
        for (i, p) in self.os_agents.iter().enumerate() {
            out.extend(p.violations().into_iter().map(|v| format!("os_agents[{i}].{v}")));
        }
        out
    }
}

/// Label-bearing part of a sample before it is bound to an id and split.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub candidate: crate::domain::Action,
    pub label: bool,
    pub tier: DifficultyTier,
    pub source: SampleSource,
    pub failure_axis: FailureAxis,
}

impl Labeled {
    pub fn into_sample(self, sample_id: String, context: StepContext, split: Split) -> RewardSample {
        let stratum = Stratum::of_negative(self.tier).unwrap_or(Stratum::Easy);
        RewardSample {
            sample_id,
            context,
            candidate: self.candidate,
            label: self.label,
            tier: self.tier,
            source: self.source,
            split,
            failure_axis: self.failure_axis,
            stratum,
        }
    }
}

/// Samples with the same instruction, step, history and candidate are
/// interchangeable; pools keep only the first.
pub(crate) fn duplicate_key(s: &RewardSample) -> (String, u32, String, String) {
    use crate::domain::codec::encode;
    (s.context.instruction.id.clone(), s.context.step_index, encode(&s.context.history), encode(&s.candidate))
}
