use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::TaskInstruction;

/// Related-but-incompatible instructions within one app surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogGroup {
    pub group_id: String,
    pub app: String,
    pub task_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InstructionCatalog {
    pub groups: Vec<CatalogGroup>,
}

impl InstructionCatalog {
    pub fn group_of(&self, task_id: &str) -> Option<&CatalogGroup> {
        self.groups.iter().find(|g| g.task_ids.iter().any(|t| t == task_id))
    }

    pub fn violations(&self, task_exists: impl Fn(&str) -> bool) -> Vec<String> {
        let mut out = Vec::new();
        for g in &self.groups {
            let mut ids: Vec<&str> = g.task_ids.iter().map(String::as_str).collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                out.push(format!("catalog group {}: repeated instruction", g.group_id));
            }
            for id in &g.task_ids {
                if !task_exists(id) {
                    out.push(format!("catalog group {}: unknown task {id}", g.group_id));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubstitutionError {
    #[error("instruction {0} has no substitutable sibling")]
    NoSubstitute(String),
}

/// Replaces `x` with a different member of its catalog group.
pub fn substitute_instruction<R: Rng + ?Sized>(
    x: &TaskInstruction,
    catalog: &InstructionCatalog,
    rng: &mut R,
) -> Result<String, SubstitutionError> {
    let group = catalog.group_of(&x.id).ok_or_else(|| SubstitutionError::NoSubstitute(x.id.clone()))?;
    let others: Vec<&String> = group.task_ids.iter().filter(|t| **t != x.id).collect();
    others
        .choose(rng)
        .map(|t| (*t).clone())
        .ok_or_else(|| SubstitutionError::NoSubstitute(x.id.clone()))
}
