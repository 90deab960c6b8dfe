//! Intention-centric correction of OS-agent actions.
//!
//! An action whose type and parameters match the ground truth and whose point
//! aims at a valid region has the right intention even when its coordinates
//! miss; such actions are repaired into positives. Everything else is a
//! moderate negative.

use crate::domain::{Action, BBox, DifficultyTier, FailureAxis, Point, SampleSource, ScreenState, StepContext, StepGroundTruth};
use crate::rules::{check_semantic_equivalence, check_type_alignment, verify, AxisVerdict, EokGraph, RuleConfig};

use super::{Labeled, SynthError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntentMatch {
    CorrectIntent,
    WrongIntent,
}

fn valid_boxes(gt: &StepGroundTruth, screen: &ScreenState) -> Vec<BBox> {
    gt.valid_regions.iter().filter_map(|id| screen.element(id)).map(|e| e.bbox).collect()
}

/// The interactive element closest to `p`; earlier elements win ties.
fn nearest_interactive<'a>(screen: &'a ScreenState, p: &Point) -> Option<&'a crate::domain::UiElement> {
    let mut best: Option<(&crate::domain::UiElement, f64)> = None;
    for e in screen.elements.iter().filter(|e| e.interactive) {
        let d = e.bbox.distance_to(p);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((e, d));
        }
    }
    best.map(|(e, _)| e)
}

pub fn match_intention(
    a_os: &Action,
    gt: &StepGroundTruth,
    screen: &ScreenState,
    snap_radius: f64,
    cfg: RuleConfig,
) -> IntentMatch {
    if check_type_alignment(a_os, &gt.a_gt) == AxisVerdict::Fail
        || check_semantic_equivalence(a_os, &gt.a_gt, cfg) == AxisVerdict::Fail
    {
        return IntentMatch::WrongIntent;
    }
    let Some(p) = a_os.point() else {
        return IntentMatch::CorrectIntent;
    };
    let aims_at_region = nearest_interactive(screen, &p).is_some_and(|e| gt.valid_regions.contains(&e.element_id))
        || valid_boxes(gt, screen).iter().any(|b| b.distance_to(&p) <= snap_radius);
    if aims_at_region {
        IntentMatch::CorrectIntent
    } else {
        IntentMatch::WrongIntent
    }
}

/// Moves the action's point to the centre of the nearest valid-region box.
/// Points already inside a region are recentred too.
pub fn repair_grounding(a_os: &Action, gt: &StepGroundTruth, screen: &ScreenState) -> Result<Action, SynthError> {
    let p = a_os
        .point()
        .ok_or_else(|| SynthError::Data(format!("cannot repair {} without a point", a_os.kind())))?;
    let boxes = valid_boxes(gt, screen);
    let nearest = boxes
        .iter()
        .min_by(|a, b| a.distance_to(&p).total_cmp(&b.distance_to(&p)))
        .ok_or_else(|| SynthError::Data(format!("no valid region resolves on screen {}", screen.screen_id)))?;
    Ok(a_os.with_point(nearest.center()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum OsClassification {
    AlreadyValid,
    Repaired(Action),
    WrongIntent(FailureAxis),
}

impl OsClassification {
    pub fn labeled(&self, a_os: &Action) -> Labeled {
        match self {
            // Already-valid OS actions are indistinguishable from rule-verified positives.
            OsClassification::AlreadyValid => Labeled {
                candidate: a_os.clone(),
                label: true,
                tier: DifficultyTier::Positive,
                source: SampleSource::RuleVerified,
                failure_axis: FailureAxis::None,
            },
            OsClassification::Repaired(a) => Labeled {
                candidate: a.clone(),
                label: true,
                tier: DifficultyTier::Positive,
                source: SampleSource::OsAgentRepaired,
                failure_axis: FailureAxis::None,
            },
            OsClassification::WrongIntent(axis) => Labeled {
                candidate: a_os.clone(),
                label: false,
                tier: DifficultyTier::ModerateNegative,
                source: SampleSource::OsAgentIntentError,
                failure_axis: *axis,
            },
        }
    }
}

pub fn classify_os_action(
    a_os: &Action,
    context: &StepContext,
    gt: &StepGroundTruth,
    eok: Option<&EokGraph>,
    snap_radius: f64,
    cfg: RuleConfig,
) -> Result<OsClassification, SynthError> {
    let direct = verify(context, gt, a_os, eok, cfg)?;
    if direct.passed {
        return Ok(OsClassification::AlreadyValid);
    }
    let intent = match_intention(a_os, gt, &context.screen, snap_radius, cfg);
    if intent == IntentMatch::CorrectIntent && a_os.point().is_some() {
        let repaired = repair_grounding(a_os, gt, &context.screen)?;
        if verify(context, gt, &repaired, eok, cfg)?.passed {
            return Ok(OsClassification::Repaired(repaired));
        }
    }
    Ok(OsClassification::WrongIntent(direct.failure_axis()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Role, UiElement};
    use crate::rules::{check_spatial_validity, AxisVerdict};
    use crate::seed;
    use rand::Rng;

    fn el(id: &str, b: BBox) -> UiElement {
        UiElement { element_id: id.into(), bbox: b, role: Role::Button, text: Some(id.into()), interactive: true }
    }

    fn screen() -> ScreenState {
        ScreenState {
            screen_id: "s".into(),
            width_px: 1080,
            height_px: 2400,
            elements: vec![
                el("target", BBox::new(0.2, 0.2, 0.4, 0.3)),
                el("other", BBox::new(0.6, 0.6, 0.8, 0.7)),
                el("field", BBox::new(0.1, 0.8, 0.9, 0.85)),
            ],
        }
    }

    fn click_gt() -> StepGroundTruth {
        StepGroundTruth { a_gt: Action::Click { point: Point::new(0.3, 0.25) }, valid_regions: vec!["target".into()], terminal: false }
    }

    /// Exhaustive nearest-element computation over every element.
    fn oracle_nearest(s: &ScreenState, p: &Point) -> String {
        let mut ds: Vec<(f64, usize)> = s
            .elements
            .iter()
            .enumerate()
            .filter(|(_, e)| e.interactive)
            .map(|(i, e)| {
                let dx = (e.bbox.x0 - p.u).max(0.0).max(p.u - e.bbox.x1);
                let dy = (e.bbox.y0 - p.v).max(0.0).max(p.v - e.bbox.y1);
                ((dx * dx + dy * dy).sqrt(), i)
            })
            .collect();
        ds.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        s.elements[ds[0].1].element_id.clone()
    }

    #[test]
    fn near_miss_on_target_is_correct_intent() {
        let s = screen();
        let p = Point::new(0.42, 0.25);
        assert_eq!(oracle_nearest(&s, &p), "target");
        let a = Action::Click { point: p };
        assert_eq!(match_intention(&a, &click_gt(), &s, 0.05, RuleConfig::default()), IntentMatch::CorrectIntent);
    }

    #[test]
    fn click_on_unrelated_element_is_wrong_intent() {
        let a = Action::Click { point: Point::new(0.7, 0.65) };
        assert_eq!(match_intention(&a, &click_gt(), &screen(), 0.05, RuleConfig::default()), IntentMatch::WrongIntent);
    }

    #[test]
    fn wrong_text_in_right_field_is_wrong_intent() {
        let gt = StepGroundTruth {
            a_gt: Action::InputText { text: "Paris".into(), target: Some(Point::new(0.5, 0.82)) },
            valid_regions: vec!["field".into()],
            terminal: false,
        };
        let a = Action::InputText { text: "London".into(), target: Some(Point::new(0.5, 0.82)) };
        assert_eq!(match_intention(&a, &gt, &screen(), 0.05, RuleConfig::default()), IntentMatch::WrongIntent);
    }

    #[test]
    fn intent_agrees_with_nearest_element_oracle() {
        let s = screen();
        let gt = click_gt();
        let target = s.element("target").unwrap().bbox;
        let mut rng = seed::rng(1, &["intent-sweep"]);
        for _ in 0..2000 {
            let p = Point::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let expected = oracle_nearest(&s, &p) == "target" || target.distance_to(&p) <= 0.05;
            let got = match_intention(&Action::Click { point: p }, &gt, &s, 0.05, RuleConfig::default());
            assert_eq!(got == IntentMatch::CorrectIntent, expected, "{p:?}");
        }
    }

    #[test]
    fn repair_recenters_on_sole_region() {
        let centre = Point::new(0.3, 0.25);
        let a = repair_grounding(&Action::Click { point: Point::new(0.9, 0.9) }, &click_gt(), &screen()).unwrap();
        assert!(matches!(a, Action::Click { point } if point.distance(&centre) < 1e-12), "{a:?}");
        let inside = repair_grounding(&Action::Click { point: Point::new(0.21, 0.21) }, &click_gt(), &screen()).unwrap();
        assert!(matches!(inside, Action::Click { point } if point.distance(&centre) < 1e-12), "{inside:?}");
        assert!(repair_grounding(&Action::Back, &click_gt(), &screen()).is_err());
    }

    #[test]
    fn repaired_action_passes_spatial_check() {
        let s = screen();
        let mut rng = seed::rng(2, &["repair-sweep"]);
        let ids = ["target", "other", "field"];
        for _ in 0..1000 {
            let k = rng.random_range(1..=ids.len());
            let regions: Vec<String> = ids[..k].iter().map(|s| s.to_string()).collect();
            let gt = StepGroundTruth { a_gt: Action::LongPress { point: Point::new(0.3, 0.25) }, valid_regions: regions, terminal: false };
            let a = Action::LongPress { point: Point::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)) };
            let r = repair_grounding(&a, &gt, &s).unwrap();
            assert_eq!(check_spatial_validity(&r, &s, &gt.valid_regions).unwrap(), AxisVerdict::Pass);
        }
    }

    #[test]
    fn classification_paths() {
        let s = screen();
        let gt = click_gt();
        let ctx = StepContext {
            instruction: crate::domain::TaskInstruction {
                id: "t".into(),
                text: "open target".into(),
                level: crate::domain::InstructionLevel::High,
                app: "a".into(),
            },
            screen: s,
            history: vec![],
            step_index: 1,
        };
        let cfg = RuleConfig::default();
        let off = Action::Click { point: Point::new(0.41, 0.25) };
        match classify_os_action(&off, &ctx, &gt, None, 0.05, cfg).unwrap() {
            OsClassification::Repaired(Action::Click { point }) => assert!(point.distance(&Point::new(0.3, 0.25)) < 1e-12),
            other => panic!("{other:?}"),
        }
        let wrong = Action::Click { point: Point::new(0.7, 0.65) };
        let c = classify_os_action(&wrong, &ctx, &gt, None, 0.05, cfg).unwrap();
        assert_eq!(c, OsClassification::WrongIntent(FailureAxis::Spatial));
        assert_eq!(c.labeled(&wrong).tier, DifficultyTier::ModerateNegative);
        assert_eq!(classify_os_action(&gt.a_gt, &ctx, &gt, None, 0.05, cfg).unwrap(), OsClassification::AlreadyValid);
    }
}
