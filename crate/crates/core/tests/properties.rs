use std::sync::OnceLock;

use proptest::prelude::*;
use proptest::sample::Index;

use rms_core::domain::codec::{decode, decode_validated, encode, SchemaMode};
use rms_core::domain::{
    Action, BBox, DifficultyTier, FailureAxis, Point, RewardSample, Role, SampleSource, ScreenState, Split, StepContext,
    StepGroundTruth, Stratum, SwipeDirection, UiElement,
};
use rms_core::metrics::{
    aggregate_report, discrimination_accuracy, exact_match, type_match, Metric, SplitCells, EM_RADIUS,
};
use rms_core::rules::{check_type_alignment, verify, Axis, AxisVerdict, RuleConfig};
use rms_core::seed;
use rms_core::world::{
    context_at, enumerate_valid_actions, generate_world, gt_history, scripted_agent_act, AgentErrorProfile, World, WorldSpec,
};

fn world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| generate_world(&WorldSpec { seed: 99, n_apps: 8, n_tasks_per_app: 10, ..WorldSpec::default() }).unwrap())
}

fn unit() -> impl Strategy<Value = f64> {
    0.0..=1.0f64
}

fn point() -> impl Strategy<Value = Point> {
    (unit(), unit()).prop_map(|(u, v)| Point::new(u, v))
}

fn direction() -> impl Strategy<Value = SwipeDirection> {
    prop_oneof![
        Just(SwipeDirection::Up),
        Just(SwipeDirection::Down),
        Just(SwipeDirection::Left),
        Just(SwipeDirection::Right)
    ]
}

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        point().prop_map(|point| Action::Click { point }),
        point().prop_map(|point| Action::LongPress { point }),
        (direction(), proptest::option::of(point())).prop_map(|(direction, start)| Action::Swipe { direction, start }),
        ("[A-Za-z][A-Za-z ]{0,11}", proptest::option::of(point()))
            .prop_map(|(text, target)| Action::InputText { text, target }),
        "[A-Za-z]{1,10}".prop_map(|name| Action::OpenApp { name }),
        Just(Action::Back),
        Just(Action::Home),
        Just(Action::Wait),
        Just(Action::Complete),
        Just(Action::Impossible),
    ]
}

/// A step of the shared world with its ground-truth history.
fn step() -> impl Strategy<Value = (usize, u32)> {
    (any::<Index>(), any::<Index>()).prop_map(|(t, j)| {
        let w = world();
        let ti = t.index(w.trajectories.len());
        let len = w.trajectories[ti].len();
        (ti, j.index(len) as u32 + 1)
    })
}

fn profile() -> impl Strategy<Value = AgentErrorProfile> {
    (unit(), unit(), unit(), unit(), 0.0..0.3f64).prop_map(|(a, b, c, d, s)| AgentErrorProfile {
        p_type_error: a,
        p_grounding_offset: b,
        p_intent_error: c,
        p_semantic_error: d,
        grounding_offset_scale: s,
    })
}

/// `a` with one more parameter broken: the point moved outside every valid
/// region, the text or app name altered, the swipe reversed, or a
/// parameter-free action swapped for another wrong kind.
fn add_fault(a: &Action, screen: &ScreenState, gt: &StepGroundTruth) -> Option<Action> {
    let boxes: Vec<BBox> = gt.valid_regions.iter().filter_map(|id| screen.element(id)).map(|e| e.bbox).collect();
    if a.point().is_some() {
        let outside = (0..=20)
            .flat_map(|i| (0..=20).map(move |j| Point::new(i as f64 / 20.0, j as f64 / 20.0)))
            .find(|p| !boxes.iter().any(|b| b.contains(p)))?;
        return Some(a.with_point(outside));
    }
    Some(match a {
        Action::InputText { text, target } => Action::InputText { text: format!("{text} zz"), target: *target },
        Action::OpenApp { name } => Action::OpenApp { name: format!("{name}x") },
        Action::Swipe { direction, start } => {
            let flipped = match direction {
                SwipeDirection::Up => SwipeDirection::Down,
                SwipeDirection::Down => SwipeDirection::Up,
                SwipeDirection::Left => SwipeDirection::Right,
                SwipeDirection::Right => SwipeDirection::Left,
            };
            Action::Swipe { direction: flipped, start: *start }
        }
        other => [Action::Wait, Action::Back, Action::Home, Action::Impossible]
            .into_iter()
            .find(|c| c.kind() != other.kind() && c.kind() != gt.a_gt.kind())?,
    })
}

fn context_and_candidate() -> impl Strategy<Value = (StepContext, usize, Action)> {
    (step(), profile(), any::<u64>()).prop_map(|((ti, j), p, s)| {
        let t = &world().trajectories[ti];
        let ctx = context_at(t, j, gt_history(t, j));
        let mut rng = seed::rng(s, &["prop"]);
        let a = scripted_agent_act(&p, &ctx, &t.steps[j as usize - 1].gt, &mut rng);
        (ctx, ti, a)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn actions_round_trip(a in action()) {
        let back: Action = decode(&encode(&a), 1, SchemaMode::Strict).unwrap();
        prop_assert_eq!(back, a);
    }

    #[test]
    fn contexts_and_samples_round_trip((ctx, ti, a) in context_and_candidate(), label: bool) {
        let back: StepContext = decode(&encode(&ctx), 1, SchemaMode::Strict).unwrap();
        prop_assert_eq!(&back, &ctx);
        let w = world();
        let sample = RewardSample {
            sample_id: "p".into(),
            context: ctx,
            candidate: a,
            label,
            tier: if label { DifficultyTier::Positive } else { DifficultyTier::HardNegative },
            source: SampleSource::RuleVerified,
            split: w.split_of(&w.trajectories[ti].app),
            failure_axis: FailureAxis::None,
            stratum: Stratum::Hard,
        };
        let back: RewardSample = decode(&encode(&sample), 1, SchemaMode::Strict).unwrap();
        prop_assert_eq!(back, sample);
    }

    #[test]
    fn validated_decode_accepts_exactly_valid_boxes(x0 in -0.5..1.5f64, y0 in -0.5..1.5f64, x1 in -0.5..1.5f64, y1 in -0.5..1.5f64) {
        let screen = ScreenState {
            screen_id: "s".into(),
            width_px: 100,
            height_px: 200,
            elements: vec![UiElement {
                element_id: "e".into(),
                bbox: BBox::new(x0, y0, x1, y1),
                role: Role::Button,
                text: None,
                interactive: true,
            }],
        };
        let inside = |c: f64| (0.0..=1.0).contains(&c);
        let valid = [x0, y0, x1, y1].into_iter().all(inside) && x0 < x1 && y0 < y1;
        let decoded = decode_validated::<ScreenState>(&encode(&screen), 1, SchemaMode::Strict);
        prop_assert_eq!(decoded.is_ok(), valid);
    }

    #[test]
    fn verify_is_deterministic_and_orders_axes((ctx, ti, a) in context_and_candidate()) {
        let w = world();
        let t = &w.trajectories[ti];
        let gt = &t.steps[ctx.step_index as usize - 1].gt;
        let eok = w.eok_for(&t.task.id);
        let r1 = verify(&ctx, gt, &a, eok, RuleConfig::default()).unwrap();
        let r2 = verify(&ctx, gt, &a, eok, RuleConfig::default()).unwrap();
        prop_assert_eq!(&r1, &r2);
        let first_fail = Axis::ORDER.into_iter().find(|x| r1.axis_results.get(x) == Some(&AxisVerdict::Fail));
        prop_assert_eq!(r1.failed_axis, first_fail);
        prop_assert_eq!(r1.passed, first_fail.is_none());
    }

    #[test]
    fn verify_agrees_with_enumerated_valid_actions((ctx, ti, a) in context_and_candidate()) {
        let w = world();
        let t = &w.trajectories[ti];
        let gt = &t.steps[ctx.step_index as usize - 1].gt;
        // Ground-truth history satisfies every prerequisite, so the rule
        // verdict reduces to membership in the enumerated classes.
        let passed = verify(&ctx, gt, &a, w.eok_for(&t.task.id), RuleConfig::default()).unwrap().passed;
        let member = enumerate_valid_actions(&ctx.screen, gt, false).contains(&a, false);
        prop_assert_eq!(passed, member);
    }

    #[test]
    fn adding_a_fault_never_repairs((ctx, ti, a) in context_and_candidate()) {
        let w = world();
        let t = &w.trajectories[ti];
        let gt = &t.steps[ctx.step_index as usize - 1].gt;
        let eok = w.eok_for(&t.task.id);
        let before = verify(&ctx, gt, &a, eok, RuleConfig::default()).unwrap();
        if let Some(worse) = add_fault(&a, &ctx.screen, gt) {
            let after = verify(&ctx, gt, &worse, eok, RuleConfig::default()).unwrap();
            if !before.passed {
                prop_assert!(!after.passed, "{:?} -> {:?}", a, worse);
            }
        }
    }

    #[test]
    fn discrimination_accuracy_is_permutation_invariant(
        cells in proptest::collection::vec((any::<bool>(), any::<bool>(), any::<bool>(), 0usize..3), 1..60),
        shuffle_seed: u64,
    ) {
        let w = world();
        let t = &w.trajectories[0];
        let ctx = context_at(t, 1, vec![]);
        let samples: Vec<RewardSample> = cells
            .iter()
            .enumerate()
            .map(|(i, &(_, label, ood, st))| RewardSample {
                sample_id: format!("s{i}"),
                context: ctx.clone(),
                candidate: Action::Back,
                label,
                tier: if label { DifficultyTier::Positive } else { DifficultyTier::EasyNegative },
                source: SampleSource::RuleVerified,
                split: if ood { Split::Ood } else { Split::Idd },
                failure_axis: FailureAxis::None,
                stratum: Stratum::ALL[st],
            })
            .collect();
        let decisions: Vec<bool> = cells.iter().map(|c| c.0).collect();
        let rows = discrimination_accuracy("m", &decisions, &samples).unwrap();

        let mut order: Vec<usize> = (0..samples.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut seed::rng(shuffle_seed, &["perm"]));
        let s2: Vec<RewardSample> = order.iter().map(|&i| samples[i].clone()).collect();
        let d2: Vec<bool> = order.iter().map(|&i| decisions[i]).collect();
        prop_assert_eq!(discrimination_accuracy("m", &d2, &s2).unwrap(), rows.clone());
        prop_assert!(aggregate_report(rows, None).is_ok());
    }

    #[test]
    fn all_cell_is_weighted_mean(ih in 0usize..500, ix in 0usize..500, oh in 0usize..500, ox in 0usize..500) {
        let cells = SplitCells::from_counts((ih, ih + ix), (oh, oh + ox));
        let n = cells.idd.n + cells.ood.n;
        prop_assert_eq!(cells.all.n, n);
        if n > 0 {
            let expected = 100.0 * (ih + oh) as f64 / n as f64;
            prop_assert!((cells.all.value - expected).abs() < 1e-9);
        }
        prop_assert!(aggregate_report(cells.rows("m", Metric::StepSr, None), None).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, ..ProptestConfig::default() })]

    #[test]
    fn exact_match_implies_type_match(a in action(), g in action(), b in (unit(), unit(), unit(), unit()), with_region: bool) {
        let (x0, x1) = if b.0 < b.1 { (b.0, b.1) } else { (b.1, b.0) };
        let (y0, y1) = if b.2 < b.3 { (b.2, b.3) } else { (b.3, b.2) };
        let screen = ScreenState {
            screen_id: "s".into(),
            width_px: 100,
            height_px: 100,
            elements: vec![UiElement { element_id: "r".into(), bbox: BBox::new(x0, y0, x1, y1), role: Role::Button, text: None, interactive: true }],
        };
        let regions: Vec<String> = if with_region { vec!["r".into()] } else { vec![] };
        let tm = type_match(&a, &g);
        prop_assert_eq!(tm, check_type_alignment(&a, &g) == AxisVerdict::Pass);
        if exact_match(&a, &g, &screen, &regions, EM_RADIUS) {
            prop_assert!(tm);
        }
        prop_assert!(exact_match(&g, &g, &screen, &[], EM_RADIUS));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn world_generation_is_pure(s in 0u64..1000) {
        let spec = WorldSpec { seed: s, n_apps: 4, n_tasks_per_app: 6, ..WorldSpec::default() };
        let a = generate_world(&spec).unwrap();
        let b = generate_world(&spec).unwrap();
        prop_assert_eq!(&a.trajectories, &b.trajectories);
        prop_assert!(a.violations().is_empty());
        // A perfect agent matches every ground-truth step exactly.
        for t in &a.trajectories {
            for (i, st) in t.steps.iter().enumerate() {
                let j = i as u32 + 1;
                let ctx = context_at(t, j, gt_history(t, j));
                let p = scripted_agent_act(&AgentErrorProfile::PERFECT, &ctx, &st.gt, &mut seed::rng(s, &["perfect"]));
                prop_assert!(exact_match(&p, &st.gt.a_gt, &st.screen, &st.gt.valid_regions, EM_RADIUS));
                prop_assert!(verify(&ctx, &st.gt, &st.gt.a_gt, a.eok_for(&t.task.id), RuleConfig::default()).unwrap().passed);
            }
        }
    }
}
