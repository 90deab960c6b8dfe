use std::fmt;

use serde::{Deserialize, Serialize};

use super::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwipeDirection {
    Up,
    Down,
    Left,
    Right,
}

impl SwipeDirection {
    pub const ALL: [SwipeDirection; 4] = [Self::Up, Self::Down, Self::Left, Self::Right];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Up => "up",
            Self::Down => "down",
            Self::Left => "left",
            Self::Right => "right",
        }
    }
}

/// The GUI action space shared by agents, reward models and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Click { point: Point },
    LongPress { point: Point },
    Swipe { direction: SwipeDirection, start: Option<Point> },
    InputText { text: String, target: Option<Point> },
    OpenApp { name: String },
    Back,
    Home,
    Wait,
    Complete,
    Impossible,
}

/// Tag of an [`Action`] without its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    LongPress,
    Swipe,
    InputText,
    OpenApp,
    Back,
    Home,
    Wait,
    Complete,
    Impossible,
}

impl ActionKind {
    pub const ALL: [ActionKind; 10] = [
        Self::Click,
        Self::LongPress,
        Self::Swipe,
        Self::InputText,
        Self::OpenApp,
        Self::Back,
        Self::Home,
        Self::Wait,
        Self::Complete,
        Self::Impossible,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Click => "click",
            Self::LongPress => "long_press",
            Self::Swipe => "swipe",
            Self::InputText => "input_text",
            Self::OpenApp => "open_app",
            Self::Back => "back",
            Self::Home => "home",
            Self::Wait => "wait",
            Self::Complete => "complete",
            Self::Impossible => "impossible",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Click { .. } => ActionKind::Click,
            Action::LongPress { .. } => ActionKind::LongPress,
            Action::Swipe { .. } => ActionKind::Swipe,
            Action::InputText { .. } => ActionKind::InputText,
            Action::OpenApp { .. } => ActionKind::OpenApp,
            Action::Back => ActionKind::Back,
            Action::Home => ActionKind::Home,
            Action::Wait => ActionKind::Wait,
            Action::Complete => ActionKind::Complete,
            Action::Impossible => ActionKind::Impossible,
        }
    }

    /// The screen point this action carries, if any.
    pub fn point(&self) -> Option<Point> {
        match self {
            Action::Click { point } | Action::LongPress { point } => Some(*point),
            Action::Swipe { start, .. } => *start,
            Action::InputText { target, .. } => *target,
            _ => None,
        }
    }

    /// Returns a copy with the carried point replaced. Point-free actions are
    /// returned unchanged.
    pub fn with_point(&self, p: Point) -> Action {
        match self {
            Action::Click { .. } => Action::Click { point: p },
            Action::LongPress { .. } => Action::LongPress { point: p },
            Action::Swipe { direction, start: Some(_) } => Action::Swipe { direction: *direction, start: Some(p) },
            Action::InputText { text, target: Some(_) } => Action::InputText { text: text.clone(), target: Some(p) },
            other => other.clone(),
        }
    }

    pub fn violations(&self, field: &str) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(p) = self.point() {
            if !p.in_unit_square() {
                out.push(format!("{field}: point outside [0,1]²"));
            }
        }
        match self {
            Action::InputText { text, .. } if text.trim().is_empty() => {
                out.push(format!("{field}.text: must be non-empty"));
            }
            Action::OpenApp { name } if name.trim().is_empty() => {
                out.push(format!("{field}.name: must be non-empty"));
            }
            _ => {}
        }
        out
    }
}
