//! Explicit operational knowledge: a prerequisite DAG over abstract action
//! templates (action type plus target descriptor, never coordinates).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::domain::{Action, ActionKind, ScreenState, Validate};

use super::text::normalize;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionTemplate {
    pub action_type: ActionKind,
    pub target_descriptor: String,
}

/// Abstract target of an action on `screen`. Spatial actions resolve to the
/// element under their point; parameterized actions to their parameter.
pub fn target_descriptor(action: &Action, screen: &ScreenState) -> String {
    match action {
        Action::InputText { text, .. } => format!("text:{}", normalize(text, false)),
        Action::Swipe { direction, .. } => format!("swipe:{}", direction.as_str()),
        Action::OpenApp { name } => format!("app:{}", normalize(name, false)),
        Action::Click { point } | Action::LongPress { point } => match screen.element_at(point) {
            Some(e) => match &e.text {
                Some(t) if !t.trim().is_empty() => format!("{}:{}", e.role.as_str(), normalize(t, false)),
                _ => format!("{}:#{}", e.role.as_str(), e.element_id),
            },
            None => "none".to_string(),
        },
        _ => "-".to_string(),
    }
}

pub fn template_of(action: &Action, screen: &ScreenState) -> ActionTemplate {
    ActionTemplate { action_type: action.kind(), target_descriptor: target_descriptor(action, screen) }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EokNode {
    pub id: String,
    pub action_type: ActionKind,
    pub target_descriptor: String,
}

impl EokNode {
    pub fn template(&self) -> ActionTemplate {
        ActionTemplate { action_type: self.action_type, target_descriptor: self.target_descriptor.clone() }
    }
}

/// Edges `(a, b)` mean `a` must have happened before `b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EokGraph {
    pub pattern_id: String,
    pub task_ids: Vec<String>,
    pub nodes: Vec<EokNode>,
    pub edges: Vec<(String, String)>,
}

impl EokGraph {
    fn parents(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut parents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (a, b) in &self.edges {
            parents.entry(b.as_str()).or_default().push(a.as_str());
        }
        parents
    }

    /// Nodes whose template equals `t`.
    pub fn matching(&self, t: &ActionTemplate) -> Vec<&EokNode> {
        self.nodes
            .iter()
            .filter(|n| n.action_type == t.action_type && n.target_descriptor == t.target_descriptor)
            .collect()
    }

    /// All transitive prerequisites of `node_id`.
    pub fn ancestors(&self, node_id: &str) -> BTreeSet<&str> {
        let parents = self.parents();
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&str> = VecDeque::from([node_id]);
        while let Some(n) = queue.pop_front() {
            for p in parents.get(n).into_iter().flatten() {
                if seen.insert(*p) {
                    queue.push_back(p);
                }
            }
        }
        seen
    }

    pub fn node(&self, id: &str) -> Option<&EokNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    fn has_cycle(&self) -> bool {
        let mut indegree: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
        let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (a, b) in &self.edges {
            if let Some(d) = indegree.get_mut(b.as_str()) {
                *d += 1;
            }
            children.entry(a.as_str()).or_default().push(b.as_str());
        }
        let mut ready: Vec<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
        let mut visited = 0;
        while let Some(n) = ready.pop() {
            visited += 1;
            for c in children.get(n).into_iter().flatten() {
                let d = indegree.get_mut(c).expect("edge targets checked");
                *d -= 1;
                if *d == 0 {
                    ready.push(c);
                }
            }
        }
        visited != self.nodes.len()
    }
}

impl Validate for EokGraph {
    fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                out.push(format!("nodes: duplicate id {}", n.id));
            }
        }
        if self.nodes.is_empty() {
            out.push("nodes: must be non-empty".to_string());
        }
        for (a, b) in &self.edges {
            if !ids.contains(a.as_str()) || !ids.contains(b.as_str()) {
                out.push(format!("edges: ({a}, {b}) references an unknown node"));
            }
        }
        if out.is_empty() && self.has_cycle() {
            out.push("edges: graph must be acyclic".to_string());
        }
        out
    }
}
