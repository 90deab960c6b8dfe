//! Deterministic rule layer: type alignment, spatial validity, semantic
//! equivalence and the operational-knowledge prerequisite check.
//!
//! Axes are always evaluated in the fixed order type → spatial → semantic →
//! prerequisite; `failed_axis` is the first failure in that order.

pub mod eok;
pub mod text;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Action, FailureAxis, HistoryEntry, ScreenState, StepContext, StepGroundTruth};

pub use eok::{template_of, target_descriptor, ActionTemplate, EokGraph, EokNode};
pub use text::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Type,
    Spatial,
    Semantic,
    Prerequisite,
}

impl Axis {
    pub const ORDER: [Axis; 4] = [Axis::Type, Axis::Spatial, Axis::Semantic, Axis::Prerequisite];

    pub fn as_failure(&self) -> FailureAxis {
        match self {
            Axis::Type => FailureAxis::Type,
            Axis::Spatial => FailureAxis::Spatial,
            Axis::Semantic => FailureAxis::Semantic,
            Axis::Prerequisite => FailureAxis::Prerequisite,
        }
    }

    pub fn as_str(&self) -> &'static str {
        self.as_failure().as_str()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisVerdict {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub passed: bool,
    pub axis_results: BTreeMap<Axis, AxisVerdict>,
    pub failed_axis: Option<Axis>,
    pub reasons: Vec<String>,
}

impl VerificationResult {
    pub fn failure_axis(&self) -> FailureAxis {
        self.failed_axis.map_or(FailureAxis::None, |a| a.as_failure())
    }

    /// Assembles a result from per-axis verdicts, deriving `passed` and
    /// `failed_axis` so the two can never disagree.
    pub fn from_axes(axis_results: BTreeMap<Axis, AxisVerdict>, reasons: Vec<String>) -> Self {
        let failed_axis = Axis::ORDER
            .into_iter()
            .find(|a| axis_results.get(a) == Some(&AxisVerdict::Fail));
        Self { passed: failed_axis.is_none(), axis_results, failed_axis, reasons }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleConfig {
    /// Disable case folding in semantic comparison.
    #[serde(default)]
    pub strict_text: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleError {
    #[error("valid region `{element_id}` does not resolve on screen `{screen_id}`")]
    UnresolvedElement { element_id: String, screen_id: String },
}

pub fn check_type_alignment(a_pred: &Action, a_gt: &Action) -> AxisVerdict {
    if a_pred.kind() == a_gt.kind() {
        AxisVerdict::Pass
    } else {
        AxisVerdict::Fail
    }
}

pub fn check_spatial_validity(
    a_pred: &Action,
    screen: &ScreenState,
    valid_regions: &[String],
) -> Result<AxisVerdict, RuleError> {
    let mut boxes = Vec::with_capacity(valid_regions.len());
    for id in valid_regions {
        let e = screen.element(id).ok_or_else(|| RuleError::UnresolvedElement {
            element_id: id.clone(),
            screen_id: screen.screen_id.clone(),
        })?;
        boxes.push(e.bbox);
    }
    Ok(match a_pred.point() {
        None => AxisVerdict::NotApplicable,
        Some(p) if boxes.iter().any(|b| b.contains(&p)) => AxisVerdict::Pass,
        Some(_) => AxisVerdict::Fail,
    })
}

pub fn check_semantic_equivalence(a_pred: &Action, a_gt: &Action, cfg: RuleConfig) -> AxisVerdict {
    let eq = |a: &str, b: &str| normalize(a, cfg.strict_text) == normalize(b, cfg.strict_text);
    let pass_if = |ok: bool| if ok { AxisVerdict::Pass } else { AxisVerdict::Fail };
    match (a_pred, a_gt) {
        (Action::InputText { text: p, .. }, Action::InputText { text: g, .. }) => pass_if(eq(p, g)),
        (Action::Swipe { direction: p, .. }, Action::Swipe { direction: g, .. }) => pass_if(p == g),
        (Action::OpenApp { name: p }, Action::OpenApp { name: g }) => pass_if(eq(p, g)),
        _ => AxisVerdict::NotApplicable,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrerequisiteCheck {
    pub verdict: AxisVerdict,
    pub reason: Option<String>,
}

/// Passes when some graph node matching `candidate` has every ancestor
/// matched by an earlier history action.
pub fn check_prerequisites(
    history: &[HistoryEntry],
    candidate: &ActionTemplate,
    eok: Option<&EokGraph>,
) -> PrerequisiteCheck {
    let Some(graph) = eok else {
        return PrerequisiteCheck { verdict: AxisVerdict::NotApplicable, reason: None };
    };
    let matched = graph.matching(candidate);
    if matched.is_empty() {
        return PrerequisiteCheck { verdict: AxisVerdict::Fail, reason: Some("off-path action".to_string()) };
    }
    let done = |node_id: &str| {
        let node = graph.node(node_id).expect("ancestor ids come from the graph");
        history
            .iter()
            .any(|h| h.action.kind() == node.action_type && h.target == node.target_descriptor)
    };
    let mut missing_first = None;
    for node in matched {
        let missing: Vec<&str> = graph.ancestors(&node.id).into_iter().filter(|a| !done(a)).collect();
        if missing.is_empty() {
            return PrerequisiteCheck { verdict: AxisVerdict::Pass, reason: None };
        }
        missing_first.get_or_insert_with(|| format!("unmet prerequisites of {}: {}", node.id, missing.join(", ")));
    }
    PrerequisiteCheck { verdict: AxisVerdict::Fail, reason: missing_first }
}

/// Full rule verification of one candidate action for one step.
pub fn verify(
    context: &StepContext,
    gt: &StepGroundTruth,
    a_pred: &Action,
    eok: Option<&EokGraph>,
    cfg: RuleConfig,
) -> Result<VerificationResult, RuleError> {
    let mut axes = BTreeMap::new();
    let mut reasons = Vec::new();

    let type_v = check_type_alignment(a_pred, &gt.a_gt);
    if type_v == AxisVerdict::Fail {
        reasons.push(format!("type: predicted {} but expected {}", a_pred.kind(), gt.a_gt.kind()));
    }
    axes.insert(Axis::Type, type_v);

    let spatial_v = check_spatial_validity(a_pred, &context.screen, &gt.valid_regions)?;
    if spatial_v == AxisVerdict::Fail {
        reasons.push("spatial: point outside every valid region".to_string());
    }
    axes.insert(Axis::Spatial, spatial_v);

    let semantic_v = if type_v == AxisVerdict::Pass {
        check_semantic_equivalence(a_pred, &gt.a_gt, cfg)
    } else {
        AxisVerdict::NotApplicable
    };
    if semantic_v == AxisVerdict::Fail {
        reasons.push("semantic: parameters differ from the intended operation".to_string());
    }
    axes.insert(Axis::Semantic, semantic_v);

    let prereq = check_prerequisites(&context.history, &template_of(a_pred, &context.screen), eok);
    if let Some(r) = prereq.reason {
        reasons.push(format!("prerequisite: {r}"));
    }
    axes.insert(Axis::Prerequisite, prereq.verdict);

    Ok(VerificationResult::from_axes(axes, reasons))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{
        BBox, InstructionLevel, Point, Role, ScreenState, SwipeDirection, TaskInstruction, UiElement,
    };
    use eok::tests::charging_station_graph;

    fn el(id: &str, role: Role, text: &str, b: BBox) -> UiElement {
        UiElement { element_id: id.into(), bbox: b, role, text: Some(text.into()), interactive: true }
    }

    fn screen() -> ScreenState {
        ScreenState {
            screen_id: "s1".into(),
            width_px: 1080,
            height_px: 2400,
            elements: vec![
                el("target", Role::Button, "Go", BBox::new(0.2, 0.2, 0.4, 0.3)),
                el("other", Role::Button, "Stop", BBox::new(0.6, 0.6, 0.8, 0.7)),
                el("entry", Role::ListItem, "Charging Station", BBox::new(0.1, 0.8, 0.9, 0.85)),
            ],
        }
    }

    fn ctx(history: Vec<HistoryEntry>) -> StepContext {
        let step_index = history.len() as u32 + 1;
        StepContext {
            instruction: TaskInstruction {
                id: "maps-t0".into(),
                text: "find an EV charging station".into(),
                level: InstructionLevel::High,
                app: "maps".into(),
            },
            screen: screen(),
            history,
            step_index,
        }
    }

    fn click(u: f64, v: f64) -> Action {
        Action::Click { point: Point::new(u, v) }
    }

    fn regions() -> Vec<String> {
        vec!["target".to_string()]
    }

    #[test]
    fn type_alignment_ignores_parameters() {
        assert_eq!(check_type_alignment(&click(0.1, 0.1), &click(0.9, 0.9)), AxisVerdict::Pass);
        let input = Action::InputText { text: "x".into(), target: None };
        assert_eq!(check_type_alignment(&click(0.1, 0.1), &input), AxisVerdict::Fail);
        let up = Action::Swipe { direction: SwipeDirection::Up, start: None };
        let down = Action::Swipe { direction: SwipeDirection::Down, start: None };
        assert_eq!(check_type_alignment(&up, &down), AxisVerdict::Pass);
    }

    #[test]
    fn spatial_validity_cases() {
        let s = screen();
        assert_eq!(check_spatial_validity(&click(0.3, 0.25), &s, &regions()), Ok(AxisVerdict::Pass));
        assert_eq!(check_spatial_validity(&click(0.2, 0.2), &s, &regions()), Ok(AxisVerdict::Pass));
        assert_eq!(check_spatial_validity(&click(0.7, 0.65), &s, &regions()), Ok(AxisVerdict::Fail));
        assert_eq!(check_spatial_validity(&Action::Back, &s, &regions()), Ok(AxisVerdict::NotApplicable));
        let err = check_spatial_validity(&click(0.3, 0.25), &s, &["ghost".to_string()]).unwrap_err();
        assert!(matches!(err, RuleError::UnresolvedElement { .. }));
    }

    #[test]
    fn semantic_equivalence_cases() {
        let cfg = RuleConfig::default();
        let t = |s: &str| Action::InputText { text: s.into(), target: None };
        assert_eq!(check_semantic_equivalence(&t("  Paris "), &t("paris"), cfg), AxisVerdict::Pass);
        assert_eq!(check_semantic_equivalence(&t("Paris"), &t("London"), cfg), AxisVerdict::Fail);
        let up = Action::Swipe { direction: SwipeDirection::Up, start: None };
        let down = Action::Swipe { direction: SwipeDirection::Down, start: None };
        assert_eq!(check_semantic_equivalence(&up, &down, cfg), AxisVerdict::Fail);
        assert_eq!(check_semantic_equivalence(&click(0.1, 0.1), &click(0.2, 0.2), cfg), AxisVerdict::NotApplicable);
        let strict = RuleConfig { strict_text: true };
        assert_eq!(check_semantic_equivalence(&t("Paris"), &t("paris"), strict), AxisVerdict::Fail);
    }

    fn hist(action: Action, target: &str) -> HistoryEntry {
        HistoryEntry { screen_id: "prev".into(), action, target: target.into() }
    }

    #[test]
    fn charging_station_prerequisites() {
        let g = charging_station_graph();
        let entry = ActionTemplate {
            action_type: crate::domain::ActionKind::Click,
            target_descriptor: "list_item:charging station".into(),
        };
        let full = vec![
            hist(Action::OpenApp { name: "Maps".into() }, "app:maps"),
            hist(click(0.5, 0.05), "text_field:search"),
            hist(Action::Swipe { direction: SwipeDirection::Up, start: None }, "swipe:up"),
        ];
        assert_eq!(check_prerequisites(&full, &entry, Some(&g)).verdict, AxisVerdict::Pass);
        assert_eq!(check_prerequisites(&[], &entry, Some(&g)).verdict, AxisVerdict::Fail);
        assert_eq!(check_prerequisites(&[], &entry, None).verdict, AxisVerdict::NotApplicable);
        let off = ActionTemplate { action_type: crate::domain::ActionKind::Back, target_descriptor: "-".into() };
        let c = check_prerequisites(&full, &off, Some(&g));
        assert_eq!(c.verdict, AxisVerdict::Fail);
        assert_eq!(c.reason.as_deref(), Some("off-path action"));
    }

    #[test]
    fn launch_then_search_then_entry_without_panel_swipe() {
        // Ancestors must all be met, not just the direct parent.
        let g = charging_station_graph();
        let partial = vec![
            hist(Action::OpenApp { name: "Maps".into() }, "app:maps"),
            hist(click(0.5, 0.05), "text_field:search"),
        ];
        let entry = template_of(&click(0.5, 0.82), &screen());
        assert_eq!(entry.target_descriptor, "list_item:charging station");
        assert_eq!(check_prerequisites(&partial, &entry, Some(&g)).verdict, AxisVerdict::Fail);
    }

    #[test]
    fn verify_ground_truth_passes() {
        let gt = StepGroundTruth { a_gt: click(0.3, 0.25), valid_regions: regions(), terminal: false };
        let r = verify(&ctx(vec![]), &gt, &gt.a_gt, None, RuleConfig::default()).unwrap();
        assert!(r.passed);
        assert_eq!(r.failed_axis, None);
        assert_eq!(r.axis_results[&Axis::Prerequisite], AxisVerdict::NotApplicable);
    }

    #[test]
    fn verify_reports_first_failing_axis() {
        let gt = StepGroundTruth { a_gt: click(0.3, 0.25), valid_regions: regions(), terminal: false };
        let r = verify(&ctx(vec![]), &gt, &click(0.7, 0.65), None, RuleConfig::default()).unwrap();
        assert_eq!(r.failed_axis, Some(Axis::Spatial));
        // type and spatial both fail: type is reported
        let lp = Action::LongPress { point: Point::new(0.7, 0.65) };
        let r = verify(&ctx(vec![]), &gt, &lp, None, RuleConfig::default()).unwrap();
        assert_eq!(r.failed_axis, Some(Axis::Type));
        assert_eq!(r.axis_results[&Axis::Spatial], AxisVerdict::Fail);
    }
}
