//! Synthetic app worlds: apps split into in-domain and out-of-domain sets,
//! tasks with ground-truth trajectories, prerequisite graphs, and the
//! instruction catalog used for substitution.
//!
//! Generation is a pure function of the [`WorldSpec`]; each app draws from
//! its own seeded stream so output does not depend on iteration order.

pub mod agent;
pub mod io;
pub mod oracle;
mod vocab;

use std::collections::{BTreeSet, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    Action, BBox, HistoryEntry, InstructionLevel, Point, Role, ScreenState, Split, StepContext, StepGroundTruth,
    SwipeDirection, TaskInstruction, Trajectory, TrajectoryStep, UiElement,
};
use crate::rules::{template_of, ActionTemplate, EokGraph, EokNode};
use crate::seed;
use crate::synth::catalog::{CatalogGroup, InstructionCatalog};

pub use agent::{scripted_agent_act, AgentErrorProfile};
pub use oracle::{enumerate_valid_actions, ValidActionSet, GRID_STEPS};
use vocab::Vocab;

/// Box coordinates are multiples of `1 / GRID_UNITS`.
pub const GRID_UNITS: u32 = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub seed: u64,
    pub n_apps: u32,
    pub n_tasks_per_app: u32,
    pub steps_distribution: (u32, u32),
    pub elements_per_screen: (u32, u32),
    pub ood_app_fraction: f64,
    /// Tasks per family of related-but-incompatible instructions.
    #[serde(default = "default_family_size")]
    pub family_size: u32,
}

fn default_family_size() -> u32 {
    3
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_apps: 30,
            n_tasks_per_app: 25,
            steps_distribution: (2, 6),
            elements_per_screen: (8, 16),
            ood_app_fraction: 0.3,
            family_size: 3,
        }
    }
}

impl WorldSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let (smin, smax) = self.steps_distribution;
        let (emin, emax) = self.elements_per_screen;
        if self.n_apps == 0 {
            out.push("n_apps: must be ≥ 1".to_string());
        }
        if self.n_tasks_per_app == 0 {
            out.push("n_tasks_per_app: must be ≥ 1".to_string());
        }
        if smin > smax {
            out.push("steps_distribution: min > max".to_string());
        }
        if smin < 2 {
            out.push("steps_distribution: min must be ≥ 2 (launch plus completion)".to_string());
        }
        if emin > emax {
            out.push("elements_per_screen: min > max".to_string());
        }
        if emin < 6 {
            out.push("elements_per_screen: min must be ≥ 6".to_string());
        }
        if emax > 50 {
            out.push("elements_per_screen: max must be ≤ 50".to_string());
        }
        if !(0.0..1.0).contains(&self.ood_app_fraction) {
            out.push("ood_app_fraction: must be in [0, 1)".to_string());
        }
        if self.family_size == 0 || self.family_size + 2 > emin {
            out.push("family_size: must be ≥ 1 and leave room for distinct targets on a screen".to_string());
        }
        out
    }

    pub fn n_ood_apps(&self) -> u32 {
        // tolerate float products such as 0.3 * 10 = 3.0000000000000004
        ((self.ood_app_fraction * f64::from(self.n_apps)) - 1e-9).ceil().max(0.0) as u32
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("invalid world spec: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Codec(#[from] crate::domain::codec::CodecError),
    #[error("inconsistent world data: {0}")]
    Data(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppInfo {
    pub app_id: String,
    pub name: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    pub apps: Vec<AppInfo>,
    pub trajectories: Vec<Trajectory>,
    pub eok: Vec<EokGraph>,
    pub catalog: InstructionCatalog,
    index: WorldIndex,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct WorldIndex {
    task: HashMap<String, usize>,
    eok: HashMap<String, usize>,
    app: HashMap<String, usize>,
}

impl World {
    pub fn from_parts(
        spec: WorldSpec,
        apps: Vec<AppInfo>,
        trajectories: Vec<Trajectory>,
        eok: Vec<EokGraph>,
        catalog: InstructionCatalog,
    ) -> Self {
        let mut index = WorldIndex::default();
        for (i, t) in trajectories.iter().enumerate() {
            index.task.insert(t.task.id.clone(), i);
        }
        for (i, g) in eok.iter().enumerate() {
            for t in &g.task_ids {
                index.eok.insert(t.clone(), i);
            }
        }
        for (i, a) in apps.iter().enumerate() {
            index.app.insert(a.app_id.clone(), i);
        }
        Self { spec, apps, trajectories, eok, catalog, index }
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskInstruction> {
        self.trajectories.iter().map(|t| &t.task)
    }

    pub fn trajectory(&self, task_id: &str) -> Option<&Trajectory> {
        self.index.task.get(task_id).map(|&i| &self.trajectories[i])
    }

    /// Screen and ground truth for a 1-based step of a task.
    pub fn step(&self, task_id: &str, step_index: u32) -> Option<&TrajectoryStep> {
        let t = self.trajectory(task_id)?;
        t.steps.get((step_index as usize).checked_sub(1)?)
    }

    pub fn eok_for(&self, task_id: &str) -> Option<&EokGraph> {
        self.index.eok.get(task_id).map(|&i| &self.eok[i])
    }

    pub fn app(&self, app_id: &str) -> Option<&AppInfo> {
        self.index.app.get(app_id).map(|&i| &self.apps[i])
    }

    pub fn split_of(&self, app_id: &str) -> Split {
        self.app(app_id).map_or(Split::Idd, |a| a.split)
    }

    pub fn ood_apps(&self) -> impl Iterator<Item = &AppInfo> {
        self.apps.iter().filter(|a| a.split == Split::Ood)
    }

    /// Trajectories eligible for any training export (in-domain apps only).
    pub fn training_trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().filter(|t| self.split_of(&t.app) == Split::Idd)
    }

    pub fn screens(&self) -> Vec<&ScreenState> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for t in &self.trajectories {
            for s in &t.steps {
                if seen.insert(s.screen.screen_id.as_str()) {
                    out.push(&s.screen);
                }
            }
        }
        out
    }

    /// Every invariant violation across the world's records.
    pub fn violations(&self) -> Vec<String> {
        use crate::domain::Validate;
        let mut out = self.spec.violations();
        let mut ids = BTreeSet::new();
        for t in &self.trajectories {
            if !ids.insert(t.task.id.as_str()) {
                out.push(format!("task {}: duplicate id", t.task.id));
            }
            if self.app(&t.app).is_none() {
                out.push(format!("task {}: unknown app {}", t.task.id, t.app));
            }
            out.extend(t.validate().into_iter().map(|v| format!("task {}: {v}", t.task.id)));
            if t.steps.last().is_some_and(|s| !s.gt.terminal) {
                out.push(format!("task {}: last step must be terminal", t.task.id));
            }
        }
        for g in &self.eok {
            out.extend(g.validate().into_iter().map(|v| format!("eok {}: {v}", g.pattern_id)));
        }
        out.extend(self.catalog.violations(|id| self.trajectory(id).is_some()));
        out
    }
}

/// Context for the 1-based `step_index` of `traj` with a recorded history.
pub fn context_at(traj: &Trajectory, step_index: u32, history: Vec<HistoryEntry>) -> StepContext {
    StepContext {
        instruction: traj.task.clone(),
        screen: traj.steps[step_index as usize - 1].screen.clone(),
        history,
        step_index,
    }
}

/// History entry for an action executed on `screen`.
pub fn history_entry(screen: &ScreenState, action: &Action) -> HistoryEntry {
    HistoryEntry {
        screen_id: screen.screen_id.clone(),
        action: action.clone(),
        target: template_of(action, screen).target_descriptor,
    }
}

/// Ground-truth history for the first `step_index - 1` steps of `traj`.
pub fn gt_history(traj: &Trajectory, step_index: u32) -> Vec<HistoryEntry> {
    traj.steps[..step_index as usize - 1]
        .iter()
        .map(|s| history_entry(&s.screen, &s.gt.a_gt))
        .collect()
}

pub fn generate_world(spec: &WorldSpec) -> Result<World, WorldError> {
    let violations = spec.violations();
    if !violations.is_empty() {
        return Err(WorldError::Config(violations));
    }

    let mut order: Vec<u32> = (0..spec.n_apps).collect();
    order.shuffle(&mut seed::rng(spec.seed, &["ood-partition"]));
    let ood: BTreeSet<u32> = order.into_iter().take(spec.n_ood_apps() as usize).collect();

    let mut apps = Vec::new();
    let (mut idd_i, mut ood_i) = (0usize, 0usize);
    for a in 0..spec.n_apps {
        let split = if ood.contains(&a) { Split::Ood } else { Split::Idd };
        let (vocab, i) = match split {
            Split::Idd => (&vocab::IDD, &mut idd_i),
            Split::Ood => (&vocab::OOD, &mut ood_i),
        };
        let base = vocab.app_names[*i % vocab.app_names.len()];
        let name = if *i < vocab.app_names.len() { base.to_string() } else { format!("{base} {}", *i / vocab.app_names.len() + 1) };
        *i += 1;
        apps.push(AppInfo { app_id: format!("app{a:02}"), name, split });
    }

    let mut trajectories = Vec::new();
    let mut eok = Vec::new();
    let mut groups = Vec::new();
    for app in &apps {
        let mut rng = seed::rng(spec.seed, &["app", &app.app_id]);
        let built = AppBuilder::new(spec, app, &apps, &mut rng).build();
        trajectories.extend(built.trajectories);
        eok.extend(built.eok);
        groups.extend(built.groups);
    }
    let world = World::from_parts(spec.clone(), apps, trajectories, eok, InstructionCatalog { groups });
    debug_assert!(world.violations().is_empty(), "{:?}", world.violations());
    Ok(world)
}

struct Built {
    trajectories: Vec<Trajectory>,
    eok: Vec<EokGraph>,
    groups: Vec<CatalogGroup>,
}

struct AppBuilder<'a> {
    spec: &'a WorldSpec,
    app: &'a AppInfo,
    all_apps: &'a [AppInfo],
    vocab: &'static Vocab,
    rng: &'a mut ChaCha8Rng,
    size_px: (u32, u32),
}

/// Middle-step action kinds and their weights.
const MIDDLE_KINDS: [(StepKind, u32); 6] = [
    (StepKind::Click, 55),
    (StepKind::InputText, 15),
    (StepKind::Swipe, 10),
    (StepKind::LongPress, 8),
    (StepKind::Back, 6),
    (StepKind::Wait, 6),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StepKind {
    Click,
    LongPress,
    InputText,
    Swipe,
    Back,
    Wait,
    Complete,
}

impl<'a> AppBuilder<'a> {
    fn new(spec: &'a WorldSpec, app: &'a AppInfo, all_apps: &'a [AppInfo], rng: &'a mut ChaCha8Rng) -> Self {
        let vocab = match app.split {
            Split::Idd => &vocab::IDD,
            Split::Ood => &vocab::OOD,
        };
        let size_px = *[(1080, 2400), (1440, 3200), (720, 1600)].choose(rng).expect("non-empty");
        Self { spec, app, all_apps, vocab, rng, size_px }
    }

    fn build(mut self) -> Built {
        let (smin, smax) = self.spec.steps_distribution;
        let lengths: Vec<u32> = (0..self.spec.n_tasks_per_app).map(|_| self.rng.random_range(smin..=smax)).collect();

        // tasks of length ≥ 3 can branch at step 2 on a shared home screen
        let mut families: Vec<Vec<u32>> = Vec::new();
        let mut open: Vec<u32> = Vec::new();
        for (t, &len) in lengths.iter().enumerate() {
            if len >= 3 && self.spec.family_size > 1 {
                open.push(t as u32);
                if open.len() == self.spec.family_size as usize {
                    families.push(std::mem::take(&mut open));
                }
            } else {
                families.push(vec![t as u32]);
            }
        }
        if !open.is_empty() {
            families.push(open);
        }
        families.sort_by_key(|f| f[0]);

        let launcher = self.launcher_screen();
        let mut slots: Vec<Option<Trajectory>> = vec![None; lengths.len()];
        let mut eok = Vec::new();
        let mut groups = Vec::new();
        for (fi, members) in families.iter().enumerate() {
            let family_id = format!("{}-f{fi:02}", self.app.app_id);
            let (trajs, graph) = self.build_family(&family_id, members, &lengths, &launcher);
            if members.len() >= 2 {
                groups.push(CatalogGroup {
                    group_id: family_id.clone(),
                    app: self.app.app_id.clone(),
                    task_ids: trajs.iter().map(|t| t.task.id.clone()).collect(),
                });
            }
            eok.push(graph);
            for (m, t) in members.iter().zip(trajs) {
                slots[*m as usize] = Some(t);
            }
        }
        Built { trajectories: slots.into_iter().map(|t| t.expect("every task built")).collect(), eok, groups }
    }

    fn build_family(
        &mut self,
        family_id: &str,
        members: &[u32],
        lengths: &[u32],
        launcher: &ScreenState,
    ) -> (Vec<Trajectory>, EokGraph) {
        let object = *self.vocab.objects.choose(self.rng).expect("non-empty");
        let verbs: Vec<&str> = vocab::VERBS.choose_multiple(self.rng, members.len()).copied().collect();
        let shared = members.len() >= 2;

        let clickable_needed = members.len() + 1;
        let home = self.content_screen(&format!("{family_id}-home"), clickable_needed);
        let home_targets: Vec<usize> = {
            let mut idx = content_interactive(&home);
            idx.shuffle(self.rng);
            idx
        };

        let open_app = Action::OpenApp { name: self.app.name.clone() };
        let icon = launcher
            .elements
            .iter()
            .find(|e| e.text.as_deref() == Some(self.app.name.as_str()))
            .expect("launcher shows its own app");
        let root_template = template_of(&open_app, launcher);
        let root_id = format!("{family_id}-n0");
        let mut nodes = vec![EokNode {
            id: root_id.clone(),
            action_type: root_template.action_type,
            target_descriptor: root_template.target_descriptor.clone(),
        }];
        let mut edges = Vec::new();

        let mut trajs = Vec::new();
        for (mi, &m) in members.iter().enumerate() {
            let len = lengths[m as usize];
            let task_id = format!("{}-t{m:03}", self.app.app_id);
            let text = format!("{} the {object} in {}", verbs[mi], self.app.name);
            let task = TaskInstruction {
                id: task_id.clone(),
                text,
                level: InstructionLevel::High,
                app: self.app.app_id.clone(),
            };
            let mut used: BTreeSet<ActionTemplate> = BTreeSet::from([root_template.clone()]);
            let mut steps = vec![TrajectoryStep {
                screen: launcher.clone(),
                gt: StepGroundTruth { a_gt: open_app.clone(), valid_regions: vec![icon.element_id.clone()], terminal: false },
            }];

            // step 2 on the family home screen
            if len == 2 {
                let (screen, gt) = self.make_step(home.clone(), StepKind::Complete, &mut used);
                steps.push(TrajectoryStep { screen, gt });
            } else if shared {
                let e = &home.elements[home_targets[mi]];
                let a = Action::Click { point: e.bbox.center() };
                used.insert(template_of(&a, &home));
                steps.push(TrajectoryStep {
                    screen: home.clone(),
                    gt: StepGroundTruth { a_gt: a, valid_regions: vec![e.element_id.clone()], terminal: false },
                });
            } else {
                let kind = self.middle_kind();
                let (screen, gt) = self.make_step(home.clone(), kind, &mut used);
                steps.push(TrajectoryStep { screen, gt });
            }

            for s in 2..len {
                let kind = if s + 1 == len { StepKind::Complete } else { self.middle_kind() };
                let screen = self.content_screen(&format!("{task_id}-s{s}"), 1);
                let (screen, gt) = self.make_step(screen, kind, &mut used);
                steps.push(TrajectoryStep { screen, gt });
            }

            let mut prev = root_id.clone();
            for (si, step) in steps.iter().enumerate().skip(1) {
                let t = template_of(&step.gt.a_gt, &step.screen);
                let id = format!("{task_id}-n{si}");
                nodes.push(EokNode { id: id.clone(), action_type: t.action_type, target_descriptor: t.target_descriptor });
                edges.push((prev.clone(), id.clone()));
                prev = id;
            }
            trajs.push(Trajectory { task, steps, app: self.app.app_id.clone() });
        }
        let graph = EokGraph {
            pattern_id: family_id.to_string(),
            task_ids: trajs.iter().map(|t| t.task.id.clone()).collect(),
            nodes,
            edges,
        };
        (trajs, graph)
    }

    fn middle_kind(&mut self) -> StepKind {
        MIDDLE_KINDS.choose_weighted(self.rng, |(_, w)| *w).expect("weights positive").0
    }

    /// Builds the ground truth for `kind` on `screen`, possibly retyping the
    /// target element. Templates are kept unique within a trajectory.
    fn make_step(
        &mut self,
        screen: ScreenState,
        kind: StepKind,
        used: &mut BTreeSet<ActionTemplate>,
    ) -> (ScreenState, StepGroundTruth) {
        let mut kind = kind;
        for attempt in 0..64 {
            if attempt > 0 && attempt % 8 == 0 && kind != StepKind::Complete {
                kind = StepKind::Click;
            }
            let mut s = screen.clone();
            let (a_gt, region) = self.draw_action(&mut s, kind);
            let t = template_of(&a_gt, &s);
            if used.contains(&t) {
                continue;
            }
            used.insert(t);
            let terminal = kind == StepKind::Complete;
            return (s, StepGroundTruth { a_gt, valid_regions: vec![region], terminal });
        }
        unreachable!("screens carry enough distinct elements for a unique step")
    }

    fn draw_action(&mut self, s: &mut ScreenState, kind: StepKind) -> (Action, String) {
        let content = content_interactive(s);
        let pick = *content.choose(self.rng).expect("content screens have interactive elements");
        let nav = |suffix: &str| format!("{}-{suffix}", s.screen_id);
        match kind {
            StepKind::Click | StepKind::LongPress => {
                let e = &s.elements[pick];
                let point = e.bbox.center();
                let a = if kind == StepKind::Click { Action::Click { point } } else { Action::LongPress { point } };
                (a, e.element_id.clone())
            }
            StepKind::InputText => {
                let e = &mut s.elements[pick];
                e.role = Role::TextField;
                e.interactive = true;
                let text = self.vocab.phrases.choose(self.rng).expect("non-empty").to_string();
                (Action::InputText { text, target: Some(e.bbox.center()) }, e.element_id.clone())
            }
            StepKind::Swipe => {
                let e = &mut s.elements[pick];
                e.role = Role::Panel;
                e.interactive = true;
                let direction = *SwipeDirection::ALL.choose(self.rng).expect("non-empty");
                (Action::Swipe { direction, start: None }, e.element_id.clone())
            }
            StepKind::Back => (Action::Back, nav("back")),
            StepKind::Wait => (Action::Wait, s.elements[pick].element_id.clone()),
            StepKind::Complete => (Action::Complete, s.elements[pick].element_id.clone()),
        }
    }

    fn launcher_screen(&mut self) -> ScreenState {
        let mut names: Vec<&str> = self
            .all_apps
            .iter()
            .filter(|a| a.split == self.app.split && a.app_id != self.app.app_id)
            .map(|a| a.name.as_str())
            .collect();
        names.shuffle(self.rng);
        names.truncate(7);
        names.push(&self.app.name);
        names.shuffle(self.rng);
        let screen_id = format!("{}-launcher", self.app.app_id);
        let cols = 4u32;
        let mut elements = Vec::new();
        for (i, name) in names.iter().enumerate() {
            let (r, c) = (i as u32 / cols, i as u32 % cols);
            let x0 = 8 + c * 48;
            let y0 = 20 + r * 40;
            elements.push(UiElement {
                element_id: format!("{screen_id}-e{i}"),
                bbox: grid_box(x0, y0, x0 + 36, y0 + 30),
                role: Role::Icon,
                text: Some(name.to_string()),
                interactive: true,
            });
        }
        elements.extend(nav_elements(&screen_id));
        ScreenState { screen_id, width_px: self.size_px.0, height_px: self.size_px.1, elements }
    }

    /// Grid-laid content screen with at least `min_interactive` interactive
    /// content elements, plus the navigation bar.
    fn content_screen(&mut self, screen_id: &str, min_interactive: usize) -> ScreenState {
        let (emin, emax) = self.spec.elements_per_screen;
        let n = self.rng.random_range(emin..=emax);
        let n_content = (n - 2) as usize;
        let min_cols = n_content.div_ceil(8) as u32;
        let cols = self.rng.random_range(min_cols..=min_cols.max(3));
        let rows = (n_content as u32).div_ceil(cols);
        let (cw, ch) = (192 / cols, 174 / rows);

        let labels: Vec<&str> = self.vocab.labels.choose_multiple(self.rng, n_content).copied().collect();
        let mut interactive: Vec<bool> = (0..n_content).map(|_| self.rng.random_bool(0.85)).collect();
        let mut order: Vec<usize> = (0..n_content).collect();
        order.shuffle(self.rng);
        for &i in order.iter().take(min_interactive.max(2)) {
            interactive[i] = true;
        }

        let mut elements = Vec::with_capacity(n as usize);
        for i in 0..n_content {
            let (r, c) = (i as u32 / cols, i as u32 % cols);
            let (cx, cy) = (4 + c * cw, 6 + r * ch);
            let px = |rng: &mut ChaCha8Rng, span: u32| rng.random_range(2..=(span / 6).max(2));
            let (l, rr) = (px(self.rng, cw), px(self.rng, cw));
            let (t, b) = (px(self.rng, ch), px(self.rng, ch));
            let role = match (self.app.split, interactive[i]) {
                (Split::Idd, true) => *[Role::Button, Role::ListItem].choose(self.rng).expect("non-empty"),
                (Split::Idd, false) => Role::Other,
                (Split::Ood, true) => Role::Icon,
                (Split::Ood, false) => Role::Panel,
            };
            elements.push(UiElement {
                element_id: format!("{screen_id}-e{i}"),
                bbox: grid_box(cx + l, cy + t, cx + cw - rr, cy + ch - b),
                role,
                text: Some(labels[i].to_string()),
                interactive: interactive[i],
            });
        }
        elements.extend(nav_elements(screen_id));
        ScreenState { screen_id: screen_id.to_string(), width_px: self.size_px.0, height_px: self.size_px.1, elements }
    }
}

fn grid_box(x0: u32, y0: u32, x1: u32, y1: u32) -> BBox {
    let g = f64::from(GRID_UNITS);
    BBox::new(f64::from(x0) / g, f64::from(y0) / g, f64::from(x1) / g, f64::from(y1) / g)
}

fn nav_elements(screen_id: &str) -> [UiElement; 2] {
    [
        UiElement {
            element_id: format!("{screen_id}-back"),
            bbox: grid_box(20, 184, 80, 198),
            role: Role::Other,
            text: Some("Back".to_string()),
            interactive: true,
        },
        UiElement {
            element_id: format!("{screen_id}-home"),
            bbox: grid_box(120, 184, 180, 198),
            role: Role::Other,
            text: Some("Home".to_string()),
            interactive: true,
        },
    ]
}

fn is_nav(e: &UiElement) -> bool {
    e.element_id.ends_with("-back") || e.element_id.ends_with("-home")
}

fn content_interactive(s: &ScreenState) -> Vec<usize> {
    s.elements
        .iter()
        .enumerate()
        .filter(|(_, e)| e.interactive && !is_nav(e))
        .map(|(i, _)| i)
        .collect()
}

/// Centre of an element, the canonical click point for it.
pub fn element_center(screen: &ScreenState, id: &str) -> Option<Point> {
    screen.element(id).map(|e| e.bbox.center())
}
