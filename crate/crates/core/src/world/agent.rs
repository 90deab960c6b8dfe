//! Scripted fallible agent standing in for a GUI agent policy.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Action, ActionKind, Point, ScreenState, StepContext, StepGroundTruth, SwipeDirection};

/// Independent per-step corruption probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentErrorProfile {
    pub p_type_error: f64,
    pub p_grounding_offset: f64,
    pub p_intent_error: f64,
    pub p_semantic_error: f64,
    pub grounding_offset_scale: f64,
}

impl AgentErrorProfile {
    pub const PERFECT: AgentErrorProfile = AgentErrorProfile {
        p_type_error: 0.0,
        p_grounding_offset: 0.0,
        p_intent_error: 0.0,
        p_semantic_error: 0.0,
        grounding_offset_scale: 0.0,
    };

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, p) in [
            ("p_type_error", self.p_type_error),
            ("p_grounding_offset", self.p_grounding_offset),
            ("p_intent_error", self.p_intent_error),
            ("p_semantic_error", self.p_semantic_error),
        ] {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("{name}: probability outside [0,1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.grounding_offset_scale) {
            out.push("grounding_offset_scale: must be in [0,1]".to_string());
        }
        out
    }
}

/// Retargeted intent errors land at least this far from every valid region.
pub const INTENT_MARGIN: f64 = 0.08;

const TYPE_SUBSTITUTES: [ActionKind; 6] = [
    ActionKind::Click,
    ActionKind::LongPress,
    ActionKind::Swipe,
    ActionKind::InputText,
    ActionKind::Back,
    ActionKind::Wait,
];

/// Proposes an action for `context`. Starts from the ground truth and applies
/// each enabled error axis independently: intent, grounding, semantic, type.
pub fn scripted_agent_act<R: Rng + ?Sized>(
    profile: &AgentErrorProfile,
    context: &StepContext,
    gt: &StepGroundTruth,
    rng: &mut R,
) -> Action {
    let screen = &context.screen;
    let mut action = gt.a_gt.clone();

    // Draw every coin up front so the streams of different axes stay aligned.
    let intent = rng.random_bool(profile.p_intent_error);
    let grounding = rng.random_bool(profile.p_grounding_offset);
    let semantic = rng.random_bool(profile.p_semantic_error);
    let type_err = rng.random_bool(profile.p_type_error);

    if intent {
        action = retarget(&action, screen, gt, rng);
    }
    if grounding {
        if let Some(p) = action.point() {
            action = action.with_point(displace(p, profile.grounding_offset_scale, rng));
        }
    }
    if semantic {
        action = corrupt_parameters(&action, rng);
    }
    if type_err {
        action = change_type(&action, screen, gt, rng);
    }
    action
}

/// Moves `p` by exactly `scale` in a random direction that stays on screen;
/// falls back to clamping when no direction fits.
pub fn displace<R: Rng + ?Sized>(p: Point, scale: f64, rng: &mut R) -> Point {
    for _ in 0..64 {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let q = Point::new(p.u + scale * theta.cos(), p.v + scale * theta.sin());
        if q.in_unit_square() {
            return q;
        }
    }
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    Point::new((p.u + scale * theta.cos()).clamp(0.0, 1.0), (p.v + scale * theta.sin()).clamp(0.0, 1.0))
}

fn retarget<R: Rng + ?Sized>(action: &Action, screen: &ScreenState, gt: &StepGroundTruth, rng: &mut R) -> Action {
    let valid: Vec<_> = gt.valid_regions.iter().filter_map(|id| screen.element(id)).map(|e| e.bbox).collect();
    let others: Vec<_> = screen
        .elements
        .iter()
        .filter(|e| e.interactive && !gt.valid_regions.contains(&e.element_id))
        .collect();
    let far: Vec<_> = others
        .iter()
        .copied()
        .filter(|e| valid.iter().all(|b| b.distance_to(&e.bbox.center()) > INTENT_MARGIN))
        .collect();
    let pool = if far.is_empty() { &others } else { &far };
    let Some(target) = pool.choose(rng) else {
        return action.clone();
    };
    let center = target.bbox.center();
    match action {
        Action::Click { .. } => Action::Click { point: center },
        Action::LongPress { .. } => Action::LongPress { point: center },
        Action::OpenApp { .. } => Action::OpenApp {
            name: target.text.clone().unwrap_or_else(|| target.element_id.clone()),
        },
        _ => Action::Click { point: center },
    }
}

fn corrupt_parameters<R: Rng + ?Sized>(action: &Action, rng: &mut R) -> Action {
    match action {
        Action::InputText { text, target } => Action::InputText { text: format!("{text} {}", garble(rng)), target: *target },
        Action::Swipe { direction, start } => {
            let others: Vec<_> = SwipeDirection::ALL.into_iter().filter(|d| d != direction).collect();
            Action::Swipe { direction: *others.choose(rng).expect("three other directions"), start: *start }
        }
        Action::OpenApp { name } => Action::OpenApp { name: format!("{name} {}", garble(rng)) },
        other => other.clone(),
    }
}

fn garble<R: Rng + ?Sized>(rng: &mut R) -> String {
    (0..4).map(|_| char::from(b'a' + rng.random_range(0..26u8))).collect()
}

fn change_type<R: Rng + ?Sized>(action: &Action, screen: &ScreenState, gt: &StepGroundTruth, rng: &mut R) -> Action {
    let kinds: Vec<_> = TYPE_SUBSTITUTES.into_iter().filter(|k| *k != action.kind()).collect();
    let kind = *kinds.choose(rng).expect("at least five substitutes");
    let point = action
        .point()
        .or_else(|| gt.valid_regions.first().and_then(|id| screen.element(id)).map(|e| e.bbox.center()))
        .unwrap_or(Point::new(0.5, 0.5));
    match kind {
        ActionKind::Click => Action::Click { point },
        ActionKind::LongPress => Action::LongPress { point },
        ActionKind::Swipe => Action::Swipe { direction: *SwipeDirection::ALL.choose(rng).expect("non-empty"), start: None },
        ActionKind::InputText => Action::InputText { text: garble(rng), target: Some(point) },
        ActionKind::Back => Action::Back,
        _ => Action::Wait,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{verify, Axis, RuleConfig};
    use crate::world::{context_at, generate_world, gt_history, WorldSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world() -> crate::world::World {
        generate_world(&WorldSpec { seed: 5, n_apps: 6, n_tasks_per_app: 10, ..WorldSpec::default() }).unwrap()
    }

    fn each_step(w: &crate::world::World, mut f: impl FnMut(&StepContext, &StepGroundTruth)) {
        for t in &w.trajectories {
            for i in 1..=t.len() as u32 {
                let ctx = context_at(t, i, gt_history(t, i));
                f(&ctx, &t.steps[i as usize - 1].gt);
            }
        }
    }

    #[test]
    fn perfect_profile_returns_ground_truth() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        each_step(&w, |ctx, gt| {
            assert_eq!(scripted_agent_act(&AgentErrorProfile::PERFECT, ctx, gt, &mut rng), gt.a_gt);
        });
    }

    #[test]
    fn grounding_offset_displaces_by_scale() {
        let w = world();
        let profile = AgentErrorProfile { p_grounding_offset: 1.0, grounding_offset_scale: 0.2, ..AgentErrorProfile::PERFECT };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut checked = 0;
        each_step(&w, |ctx, gt| {
            let a = scripted_agent_act(&profile, ctx, gt, &mut rng);
            assert_eq!(a.kind(), gt.a_gt.kind());
            if let (Action::Click { point: p }, Action::Click { point: g }) = (&a, &gt.a_gt) {
                assert!((p.distance(g) - 0.2).abs() < 1e-9);
                assert!(p.in_unit_square());
                checked += 1;
            }
        });
        assert!(checked > 20);
    }

    #[test]
    fn type_error_changes_click() {
        let w = world();
        let profile = AgentErrorProfile { p_type_error: 1.0, ..AgentErrorProfile::PERFECT };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        each_step(&w, |ctx, gt| {
            let a = scripted_agent_act(&profile, ctx, gt, &mut rng);
            assert_ne!(a.kind(), gt.a_gt.kind());
        });
    }

    #[test]
    fn intent_error_always_breaks_a_rule() {
        let w = world();
        let profile = AgentErrorProfile { p_intent_error: 1.0, ..AgentErrorProfile::PERFECT };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        each_step(&w, |ctx, gt| {
            let a = scripted_agent_act(&profile, ctx, gt, &mut rng);
            let r = verify(ctx, gt, &a, None, RuleConfig::default()).unwrap();
            assert!(!r.passed, "{a:?} vs {:?}", gt.a_gt);
            assert_ne!(r.failed_axis, Some(Axis::Prerequisite));
        });
    }
}
