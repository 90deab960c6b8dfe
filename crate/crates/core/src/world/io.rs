//! World directory layout:
//!
//! ```text
//! world.json          spec and app partition
//! tasks.jsonl         TaskInstruction per line
//! screens.jsonl       ScreenState per line (shared screens once)
//! trajectories.jsonl  {task_id, app, steps: [{screen_id, gt}]}
//! eok.jsonl           EokGraph per line
//! catalog.json        instruction groups for substitution
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::codec::{read_json, read_jsonl, write_json, write_jsonl, CodecError, SchemaMode};
use crate::domain::{ScreenState, StepGroundTruth, TaskInstruction, Trajectory, TrajectoryStep};
use crate::rules::EokGraph;
use crate::synth::catalog::InstructionCatalog;

use super::{AppInfo, World, WorldError, WorldSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldMeta {
    pub spec: WorldSpec,
    pub apps: Vec<AppInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub screen_id: String,
    pub gt: StepGroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub task_id: String,
    pub app: String,
    pub steps: Vec<StepRecord>,
}

fn io_err(path: &Path, source: std::io::Error) -> WorldError {
    WorldError::Codec(CodecError::Io { path: path.display().to_string(), source })
}

pub fn export_world(world: &World, dir: &Path) -> Result<(), WorldError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_json(&dir.join("world.json"), &WorldMeta { spec: world.spec.clone(), apps: world.apps.clone() })?;
    write_jsonl(&dir.join("tasks.jsonl"), world.tasks())?;
    write_jsonl(&dir.join("screens.jsonl"), world.screens())?;
    let records: Vec<TrajectoryRecord> = world
        .trajectories
        .iter()
        .map(|t| TrajectoryRecord {
            task_id: t.task.id.clone(),
            app: t.app.clone(),
            steps: t
                .steps
                .iter()
                .map(|s| StepRecord { screen_id: s.screen.screen_id.clone(), gt: s.gt.clone() })
                .collect(),
        })
        .collect();
    write_jsonl(&dir.join("trajectories.jsonl"), &records)?;
    write_jsonl(&dir.join("eok.jsonl"), &world.eok)?;
    write_json(&dir.join("catalog.json"), &world.catalog)?;
    Ok(())
}

pub fn import_world(dir: &Path, mode: SchemaMode) -> Result<World, WorldError> {
    if !dir.is_dir() {
        return Err(WorldError::Data(format!("world directory {} not found", dir.display())));
    }
    let meta: WorldMeta = read_json(&dir.join("world.json"), mode)?;
    let tasks: Vec<TaskInstruction> = read_jsonl(&dir.join("tasks.jsonl"), mode)?;
    let screens: Vec<ScreenState> = read_jsonl(&dir.join("screens.jsonl"), mode)?;
    let records: Vec<TrajectoryRecord> = read_jsonl(&dir.join("trajectories.jsonl"), mode)?;
    let eok: Vec<EokGraph> = read_jsonl(&dir.join("eok.jsonl"), mode)?;
    let catalog: InstructionCatalog = read_json(&dir.join("catalog.json"), mode)?;

    let screens: HashMap<String, ScreenState> = screens.into_iter().map(|s| (s.screen_id.clone(), s)).collect();
    let tasks: HashMap<String, TaskInstruction> = tasks.into_iter().map(|t| (t.id.clone(), t)).collect();
    let mut trajectories = Vec::with_capacity(records.len());
    for r in records {
        let task = tasks
            .get(&r.task_id)
            .cloned()
            .ok_or_else(|| WorldError::Data(format!("trajectory references unknown task {}", r.task_id)))?;
        let steps = r
            .steps
            .into_iter()
            .map(|s| {
                let screen = screens
                    .get(&s.screen_id)
                    .cloned()
                    .ok_or_else(|| WorldError::Data(format!("task {} references unknown screen {}", r.task_id, s.screen_id)))?;
                Ok(TrajectoryStep { screen, gt: s.gt })
            })
            .collect::<Result<Vec<_>, WorldError>>()?;
        trajectories.push(Trajectory { task, steps, app: r.app });
    }
    Ok(World::from_parts(meta.spec, meta.apps, trajectories, eok, catalog))
}
