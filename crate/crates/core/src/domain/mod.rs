//! Shared domain types: screens, actions, step contexts, trajectories and
//! labeled reward samples.
//!
//! Every type is an immutable value once constructed and validated. All
//! spatial quantities are normalized to `[0, 1]`; pixel sizes are metadata.

mod action;
pub mod codec;
mod geometry;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use action::{Action, ActionKind, SwipeDirection};
pub use geometry::{BBox, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionLevel {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstruction {
    pub id: String,
    pub text: String,
    pub level: InstructionLevel,
    pub app: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Button,
    TextField,
    ListItem,
    Icon,
    Panel,
    Other,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Button => "button",
            Role::TextField => "text_field",
            Role::ListItem => "list_item",
            Role::Icon => "icon",
            Role::Panel => "panel",
            Role::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiElement {
    pub element_id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub role: Role,
    pub text: Option<String>,
    pub interactive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenState {
    pub screen_id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub elements: Vec<UiElement>,
}

impl ScreenState {
    pub fn element(&self, id: &str) -> Option<&UiElement> {
        self.elements.iter().find(|e| e.element_id == id)
    }

    /// First interactive element whose box contains `p`, falling back to any
    /// element.
    pub fn element_at(&self, p: &Point) -> Option<&UiElement> {
        self.elements
            .iter()
            .find(|e| e.interactive && e.bbox.contains(p))
            .or_else(|| self.elements.iter().find(|e| e.bbox.contains(p)))
    }
}

/// Ground truth for one step: the reference action and the element regions
/// in which a spatial action counts as valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepGroundTruth {
    pub a_gt: Action,
    pub valid_regions: Vec<String>,
    pub terminal: bool,
}

/// One executed step of history. `target` is the abstract target descriptor
/// resolved against the screen when the step was recorded, so prerequisite
/// checks never need the full screen back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub screen_id: String,
    pub action: Action,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepContext {
    pub instruction: TaskInstruction,
    pub screen: ScreenState,
    pub history: Vec<HistoryEntry>,
    pub step_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub screen: ScreenState,
    pub gt: StepGroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: TaskInstruction,
    pub steps: Vec<TrajectoryStep>,
    pub app: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyTier {
    Positive,
    EasyNegative,
    ModerateNegative,
    HardNegative,
}

impl DifficultyTier {
    pub const ALL: [DifficultyTier; 4] =
        [Self::Positive, Self::EasyNegative, Self::ModerateNegative, Self::HardNegative];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Positive => "positive",
            Self::EasyNegative => "easy_negative",
            Self::ModerateNegative => "moderate_negative",
            Self::HardNegative => "hard_negative",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s || t.short() == s)
    }

    pub fn short(&self) -> &'static str {
        match self {
            Self::Positive => "positive",
            Self::EasyNegative => "easy",
            Self::ModerateNegative => "moderate",
            Self::HardNegative => "hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    RuleVerified,
    InstructionSubstitution,
    TrajectoryStitching,
    OsAgentIntentError,
    OsAgentRepaired,
}

impl SampleSource {
    pub const ALL: [SampleSource; 5] = [
        Self::RuleVerified,
        Self::InstructionSubstitution,
        Self::TrajectoryStitching,
        Self::OsAgentIntentError,
        Self::OsAgentRepaired,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::RuleVerified => "rule_verified",
            Self::InstructionSubstitution => "instruction_substitution",
            Self::TrajectoryStitching => "trajectory_stitching",
            Self::OsAgentIntentError => "os_agent_intent_error",
            Self::OsAgentRepaired => "os_agent_repaired",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Idd,
    Ood,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Idd => "idd",
            Split::Ood => "ood",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FailureAxis {
    Type,
    Spatial,
    Semantic,
    Prerequisite,
    #[default]
    None,
}

impl FailureAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Type => "type",
            Self::Spatial => "spatial",
            Self::Semantic => "semantic",
            Self::Prerequisite => "prerequisite",
            Self::None => "none",
        }
    }
}

/// Benchmark difficulty cell. Negatives map from their tier; positives carry
/// the stratum of the negative pool they are paired with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Easy,
    Moderate,
    Hard,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Self::Easy, Self::Moderate, Self::Hard];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Easy => "Easy",
            Self::Moderate => "Moderate",
            Self::Hard => "Hard",
        }
    }

    pub fn of_negative(tier: DifficultyTier) -> Option<Stratum> {
        match tier {
            DifficultyTier::EasyNegative => Some(Stratum::Easy),
            DifficultyTier::ModerateNegative => Some(Stratum::Moderate),
            DifficultyTier::HardNegative => Some(Stratum::Hard),
            DifficultyTier::Positive => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSample {
    pub sample_id: String,
    pub context: StepContext,
    pub candidate: Action,
    pub label: bool,
    pub tier: DifficultyTier,
    pub source: SampleSource,
    pub split: Split,
    #[serde(default)]
    pub failure_axis: FailureAxis,
    pub stratum: Stratum,
}

/// Field-and-rule descriptions of every invariant an entity breaks.
pub trait Validate {
    fn validate(&self) -> Vec<String>;
}

impl Validate for TaskInstruction {
    fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.trim().is_empty() {
            out.push("id: must be non-empty".to_string());
        }
        if self.text.trim().is_empty() {
            out.push("text: must be non-empty".to_string());
        }
        out
    }
}

impl Validate for UiElement {
    fn validate(&self) -> Vec<String> {
        let mut out = self.bbox.violations("box");
        if self.element_id.is_empty() {
            out.push("element_id: must be non-empty".to_string());
        }
        out
    }
}

impl Validate for ScreenState {
    fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.width_px == 0 || self.height_px == 0 {
            out.push("width_px/height_px: must be positive".to_string());
        }
        if self.elements.is_empty() {
            out.push("elements: at least one element required".to_string());
        }
        let mut seen = HashSet::new();
        for (i, e) in self.elements.iter().enumerate() {
            if !seen.insert(e.element_id.as_str()) {
                out.push(format!("elements[{i}].element_id: duplicate id {}", e.element_id));
            }
            out.extend(e.validate().into_iter().map(|v| format!("elements[{i}].{v}")));
        }
        out
    }
}

impl Validate for Action {
    fn validate(&self) -> Vec<String> {
        self.violations("action")
    }
}

impl StepGroundTruth {
    /// Invariants that need the paired screen.
    pub fn validate_on(&self, screen: &ScreenState) -> Vec<String> {
        let mut out = self.validate();
        for id in &self.valid_regions {
            if screen.element(id).is_none() {
                out.push(format!("valid_regions: element {id} not on screen {}", screen.screen_id));
            }
        }
        out
    }
}

impl Validate for StepGroundTruth {
    fn validate(&self) -> Vec<String> {
        let mut out = self.a_gt.violations("a_gt");
        if self.valid_regions.is_empty() {
            out.push("valid_regions: must be non-empty".to_string());
        }
        if self.terminal != (self.a_gt.kind() == ActionKind::Complete) {
            out.push("terminal: must be true exactly when a_gt is complete".to_string());
        }
        out
    }
}

impl Validate for StepContext {
    fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        out.extend(self.instruction.validate().into_iter().map(|v| format!("instruction.{v}")));
        out.extend(self.screen.validate().into_iter().map(|v| format!("screen.{v}")));
        if self.step_index < 1 {
            out.push("step_index: must be ≥ 1".to_string());
        }
        if self.history.len() as u64 != u64::from(self.step_index.saturating_sub(1)) {
            out.push("history: length must equal step_index − 1".to_string());
        }
        for (i, h) in self.history.iter().enumerate() {
            out.extend(h.action.violations(&format!("history[{i}].action")));
        }
        out
    }
}

impl Validate for Trajectory {
    fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        out.extend(self.task.validate().into_iter().map(|v| format!("task.{v}")));
        if self.steps.is_empty() {
            out.push("steps: must be non-empty".to_string());
        }
        let last = self.steps.len().saturating_sub(1);
        for (i, step) in self.steps.iter().enumerate() {
            out.extend(step.screen.validate().into_iter().map(|v| format!("steps[{i}].screen.{v}")));
            out.extend(step.gt.validate_on(&step.screen).into_iter().map(|v| format!("steps[{i}].gt.{v}")));
            if step.gt.terminal && i != last {
                out.push(format!("steps[{i}].gt.terminal: only the last step may be terminal"));
            }
        }
        out
    }
}

impl Validate for RewardSample {
    fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        out.extend(self.context.validate().into_iter().map(|v| format!("context.{v}")));
        out.extend(self.candidate.violations("candidate"));
        if self.label != (self.tier == DifficultyTier::Positive) {
            out.push("label/tier inconsistent".to_string());
        }
        if self.label != (self.failure_axis == FailureAxis::None) {
            out.push("label/failure_axis inconsistent".to_string());
        }
        if let Some(s) = Stratum::of_negative(self.tier) {
            if s != self.stratum {
                out.push("stratum/tier inconsistent".to_string());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn element(id: &str, b: BBox) -> UiElement {
        UiElement { element_id: id.into(), bbox: b, role: Role::Button, text: Some(id.into()), interactive: true }
    }

    fn screen3() -> ScreenState {
        ScreenState {
            screen_id: "s".into(),
            width_px: 1080,
            height_px: 2400,
            elements: vec![
                element("a", BBox::new(0.1, 0.1, 0.3, 0.2)),
                element("b", BBox::new(0.4, 0.1, 0.6, 0.2)),
                element("c", BBox::new(0.1, 0.5, 0.9, 0.6)),
            ],
        }
    }

    #[test]
    fn inverted_box_reports_both_axes() {
        let e = element("x", BBox::new(0.4, 0.3, 0.2, 0.2));
        assert_eq!(e.validate(), vec!["box: x0 ≥ x1".to_string(), "box: y0 ≥ y1".to_string()]);
    }

    #[test]
    fn well_formed_screen_is_clean() {
        assert!(screen3().validate().is_empty());
    }

    #[test]
    fn duplicate_element_ids_rejected() {
        let mut s = screen3();
        s.elements[1].element_id = "a".into();
        assert_eq!(s.validate().len(), 1);
    }

    #[test]
    fn label_tier_mismatch() {
        let s = RewardSample {
            sample_id: "x".into(),
            context: StepContext {
                instruction: TaskInstruction {
                    id: "t".into(),
                    text: "do it".into(),
                    level: InstructionLevel::High,
                    app: "a".into(),
                },
                screen: screen3(),
                history: vec![],
                step_index: 1,
            },
            candidate: Action::Back,
            label: true,
            tier: DifficultyTier::HardNegative,
            source: SampleSource::RuleVerified,
            split: Split::Idd,
            failure_axis: FailureAxis::None,
            stratum: Stratum::Hard,
        };
        assert_eq!(s.validate(), vec!["label/tier inconsistent".to_string()]);
    }

    #[test]
    fn empty_input_text_is_invalid() {
        let a = Action::InputText { text: "  ".into(), target: None };
        assert_eq!(a.validate().len(), 1);
        let a = Action::Click { point: Point::new(1.2, 0.5) };
        assert_eq!(a.validate().len(), 1);
    }

    #[test]
    fn history_length_must_match_step_index() {
        let ctx = StepContext {
            instruction: TaskInstruction { id: "t".into(), text: "x".into(), level: InstructionLevel::Low, app: "a".into() },
            screen: screen3(),
            history: vec![],
            step_index: 2,
        };
        assert_eq!(ctx.validate(), vec!["history: length must equal step_index − 1".to_string()]);
    }
}
