//! Brute-force enumeration of rule-valid actions, used to re-derive labels
//! independently of the rule verifier.

use crate::domain::{Action, ActionKind, Point, ScreenState, StepGroundTruth, SwipeDirection};
use crate::rules::normalize;

/// Grid nodes per unit length (resolution 0.005).
pub const GRID_STEPS: u32 = 200;

/// Equivalence classes of actions accepted for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidActionSet {
    pub kind: ActionKind,
    /// Grid nodes inside each valid region, grouped per region.
    pub region_nodes: Vec<Vec<Point>>,
    pub text_class: Option<String>,
    pub direction: Option<SwipeDirection>,
    pub app_class: Option<String>,
}

impl ValidActionSet {
    /// Whether `a` falls in one of the enumerated classes. A point is accepted
    /// when it lies within the span of some region's enumerated nodes.
    pub fn contains(&self, a: &Action, strict_text: bool) -> bool {
        if a.kind() != self.kind {
            return false;
        }
        if let Some(p) = a.point() {
            let inside = self.region_nodes.iter().any(|nodes| {
                let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
                for n in nodes {
                    umin = umin.min(n.u);
                    umax = umax.max(n.u);
                    vmin = vmin.min(n.v);
                    vmax = vmax.max(n.v);
                }
                !nodes.is_empty() && p.u >= umin && p.u <= umax && p.v >= vmin && p.v <= vmax
            });
            if !inside {
                return false;
            }
        }
        match a {
            Action::InputText { text, .. } => self.text_class.as_deref() == Some(normalize(text, strict_text).as_str()),
            Action::Swipe { direction, .. } => self.direction == Some(*direction),
            Action::OpenApp { name } => self.app_class.as_deref() == Some(normalize(name, strict_text).as_str()),
            _ => true,
        }
    }

    /// Concrete members: one action per grid node for spatial kinds, or the
    /// single parameter class otherwise.
    pub fn members(&self) -> Vec<Action> {
        let nodes = || self.region_nodes.iter().flatten().copied();
        match self.kind {
            ActionKind::Click => nodes().map(|point| Action::Click { point }).collect(),
            ActionKind::LongPress => nodes().map(|point| Action::LongPress { point }).collect(),
            ActionKind::InputText => vec![Action::InputText { text: self.text_class.clone().unwrap_or_default(), target: None }],
            ActionKind::Swipe => vec![Action::Swipe { direction: self.direction.unwrap_or(SwipeDirection::Up), start: None }],
            ActionKind::OpenApp => vec![Action::OpenApp { name: self.app_class.clone().unwrap_or_default() }],
            ActionKind::Back => vec![Action::Back],
            ActionKind::Home => vec![Action::Home],
            ActionKind::Wait => vec![Action::Wait],
            ActionKind::Complete => vec![Action::Complete],
            ActionKind::Impossible => vec![Action::Impossible],
        }
    }
}

/// Enumerates every action class consistent with `gt` on `screen` by
/// sampling the grid over each valid-region box.
pub fn enumerate_valid_actions(screen: &ScreenState, gt: &StepGroundTruth, strict_text: bool) -> ValidActionSet {
    let g = f64::from(GRID_STEPS);
    let region_nodes = gt
        .valid_regions
        .iter()
        .filter_map(|id| screen.element(id))
        .map(|e| {
            let b = e.bbox;
            let (i0, i1) = (((b.x0 * g).floor() as i64 - 1).max(0), ((b.x1 * g).ceil() as i64 + 1).min(i64::from(GRID_STEPS)));
            let (j0, j1) = (((b.y0 * g).floor() as i64 - 1).max(0), ((b.y1 * g).ceil() as i64 + 1).min(i64::from(GRID_STEPS)));
            let mut nodes = Vec::new();
            for i in i0..=i1 {
                for j in j0..=j1 {
                    let p = Point::new(i as f64 / g, j as f64 / g);
                    if p.u >= b.x0 && p.u <= b.x1 && p.v >= b.y0 && p.v <= b.y1 {
                        nodes.push(p);
                    }
                }
            }
            nodes
        })
        .collect();
    let (text_class, direction, app_class) = match &gt.a_gt {
        Action::InputText { text, .. } => (Some(normalize(text, strict_text)), None, None),
        Action::Swipe { direction, .. } => (None, Some(*direction), None),
        Action::OpenApp { name } => (None, None, Some(normalize(name, strict_text))),
        _ => (None, None, None),
    };
    ValidActionSet { kind: gt.a_gt.kind(), region_nodes, text_class, direction, app_class }
}
