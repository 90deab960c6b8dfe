//! Per-step proposal, two-tier evaluation, endorsed-action selection and
//! reflux into the agent and reward-model training sets.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{
    ds_reward, BackendError, DsBackend, DsInput, DsVerdict, GpBackend, GpInput, GpVerdict, NoisePattern, Preference,
    RewardValue,
};
use crate::domain::codec::{write_json, write_jsonl, CodecError};
use crate::domain::{Action, Split, StepContext, StepGroundTruth, Trajectory};
use crate::metrics::{episode_rows, MetricRow};
use crate::rules::{verify, EokGraph, RuleConfig, RuleError};
use crate::seed;
use crate::world::{history_entry, scripted_agent_act, AgentErrorProfile, World};

/// Position of a step in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub round: u32,
    pub episode: u32,
    pub step: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("round {} episode {} step {}: {source}", .at.round, .at.episode, .at.step)]
    Backend { at: Provenance, source: BackendError },
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("store: {0}")]
    Store(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Proposes one action per step.
pub trait Agent: Send + Sync {
    fn propose(&self, context: &StepContext, gt: &StepGroundTruth) -> Action;
}

/// Scripted fallible policy. Its choice is a fixed function of the context
/// fingerprint (task, step, screen), so revisiting a context repeats it.
#[derive(Debug, Clone, Copy)]
pub struct ScriptedAgent {
    pub profile: AgentErrorProfile,
    pub seed: u64,
}

impl Agent for ScriptedAgent {
    fn propose(&self, context: &StepContext, gt: &StepGroundTruth) -> Action {
        let mut rng = seed::rng(
            self.seed,
            &["agent", &context.instruction.id, &context.step_index.to_string(), &context.screen.screen_id],
        );
        scripted_agent_act(&self.profile, context, gt, &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub provenance: Provenance,
    pub context: StepContext,
    pub a_star: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsRecord {
    pub provenance: Provenance,
    pub high_priority: bool,
    /// Failure axis of the proposal crossed with its kind.
    pub pattern: NoisePattern,
    pub gp_input: GpInput,
    pub gp_verdict: GpVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub provenance: Provenance,
    pub a_pred: Action,
    pub ds_verdict: DsVerdict,
    pub gp_verdict: GpVerdict,
    pub a_star: Action,
    pub refluxed_agent_sample: Option<AgentRecord>,
    pub refluxed_rms_sample: Option<RmsRecord>,
    pub reward: RewardValue,
    pub pred_correct: bool,
    pub star_correct: bool,
    /// GP rejected the DS decision and no correction was available.
    pub unresolved: bool,
}

/// Ground truth the evaluation is scored against.
#[derive(Debug, Clone, Copy)]
pub struct StepTruth<'a> {
    pub gt: &'a StepGroundTruth,
    pub eok: Option<&'a EokGraph>,
    pub rules: RuleConfig,
}

pub fn evaluate_step(
    agent: &dyn Agent,
    ds: &dyn DsBackend,
    gp: &dyn GpBackend,
    context: &StepContext,
    truth: StepTruth<'_>,
    at: Provenance,
) -> Result<StepOutcome, PipelineError> {
    let a_pred = agent.propose(context, truth.gt);
    let ds_input = DsInput { context: context.clone(), a_pred: a_pred.clone() };
    let ds_verdict = ds.ds_evaluate(&ds_input).map_err(|source| PipelineError::Backend { at, source })?;
    let gp_input = GpInput::new(&ds_input, &ds_verdict);
    let gp_verdict = gp.gp_evaluate(&gp_input).map_err(|source| PipelineError::Backend { at, source })?;

    let a_star = match (&gp_verdict.s_gp.preference, &ds_verdict.a_corr) {
        (Preference::PreferCorr, Some(corr)) => corr.clone(),
        _ => a_pred.clone(),
    };
    let pred_check = verify(context, truth.gt, &a_pred, truth.eok, truth.rules)?;
    let star_correct = if a_star == a_pred { pred_check.passed } else { verify(context, truth.gt, &a_star, truth.eok, truth.rules)?.passed };
    let unresolved = !gp_verdict.y_gp && ds_verdict.a_corr.is_none();

    let refluxed_agent_sample = Some(AgentRecord { provenance: at, context: context.clone(), a_star: a_star.clone() });
    let refluxed_rms_sample = (!gp_verdict.y_gp).then(|| RmsRecord {
        provenance: at,
        high_priority: true,
        pattern: NoisePattern { axis: pred_check.failure_axis(), kind: a_pred.kind() },
        gp_input: gp_input.clone(),
        gp_verdict: gp_verdict.clone(),
    });
    Ok(StepOutcome {
        provenance: at,
        reward: ds_reward(ds_verdict.y_ds, pred_check.passed),
        a_pred,
        ds_verdict,
        gp_verdict,
        a_star,
        refluxed_agent_sample,
        refluxed_rms_sample,
        pred_correct: pred_check.passed,
        star_correct,
        unresolved,
    })
}

/// Append-only reflux stores keyed by provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefluxStores {
    agent: BTreeMap<Provenance, AgentRecord>,
    rms: BTreeMap<Provenance, RmsRecord>,
}

impl RefluxStores {
    pub fn agent_training_set(&self) -> impl Iterator<Item = &AgentRecord> {
        self.agent.values()
    }

    pub fn rms_training_set(&self) -> impl Iterator<Item = &RmsRecord> {
        self.rms.values()
    }

    pub fn agent_len(&self) -> usize {
        self.agent.len()
    }

    pub fn rms_len(&self) -> usize {
        self.rms.len()
    }

    /// Moves every record of `other` in; overlapping provenance is refused.
    pub fn extend(&mut self, other: RefluxStores) -> Result<(), PipelineError> {
        if let Some(at) = other.agent.keys().chain(other.rms.keys()).find(|k| self.agent.contains_key(k) || self.rms.contains_key(k)) {
            return Err(PipelineError::Store(format!("step {at:?} already refluxed")));
        }
        self.agent.extend(other.agent);
        self.rms.extend(other.rms);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::Store(format!("{}: {e}", dir.display())))?;
        write_jsonl(&dir.join("agent_training_set.jsonl"), self.agent.values())?;
        write_jsonl(&dir.join("rms_training_set.jsonl"), self.rms.values())?;
        Ok(())
    }
}

/// Appends the step's agent record and, on disagreement, its RMS record.
/// A provenance already present is refused so each step lands once.
pub fn route_reflux(outcome: &StepOutcome, stores: &mut RefluxStores) -> Result<(), PipelineError> {
    let at = outcome.provenance;
    if stores.agent.contains_key(&at) || stores.rms.contains_key(&at) {
        return Err(PipelineError::Store(format!("step {at:?} already refluxed")));
    }
    if let Some(r) = &outcome.refluxed_agent_sample {
        stores.agent.insert(at, r.clone());
    }
    if let Some(r) = &outcome.refluxed_rms_sample {
        stores.rms.insert(at, r.clone());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub round: u32,
    pub episode: u32,
    pub task_id: String,
    pub split: Split,
    pub steps: usize,
    /// Steps whose proposal passes verification.
    pub raw_correct: usize,
    /// Steps whose endorsed action passes verification.
    pub endorsed_correct: usize,
    pub raw_sr: f64,
    pub step_sr: f64,
    pub completed: bool,
    pub disagreements: usize,
    pub unresolved: usize,
    pub outcomes: Vec<StepOutcome>,
}

/// Runs one trajectory step by step; history accumulates endorsed actions.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    agent: &dyn Agent,
    ds: &dyn DsBackend,
    gp: &dyn GpBackend,
    world: &World,
    trajectory: &Trajectory,
    round: u32,
    episode: u32,
    rules: RuleConfig,
) -> Result<EpisodeReport, PipelineError> {
    let eok = world.eok_for(&trajectory.task.id);
    let mut history = Vec::with_capacity(trajectory.len());
    let mut outcomes = Vec::with_capacity(trajectory.len());
    for (i, step) in trajectory.steps.iter().enumerate() {
        let j = i as u32 + 1;
        let context = StepContext {
            instruction: trajectory.task.clone(),
            screen: step.screen.clone(),
            history: history.clone(),
            step_index: j,
        };
        let at = Provenance { round, episode, step: j };
        let outcome = evaluate_step(agent, ds, gp, &context, StepTruth { gt: &step.gt, eok, rules }, at)?;
        history.push(history_entry(&step.screen, &outcome.a_star));
        outcomes.push(outcome);
    }
    let n = outcomes.len();
    let raw_correct = outcomes.iter().filter(|o| o.pred_correct).count();
    let endorsed_correct = outcomes.iter().filter(|o| o.star_correct).count();
    let ratio = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Ok(EpisodeReport {
        round,
        episode,
        task_id: trajectory.task.id.clone(),
        split: world.split_of(&trajectory.app),
        steps: n,
        raw_correct,
        endorsed_correct,
        raw_sr: ratio(raw_correct),
        step_sr: ratio(endorsed_correct),
        completed: outcomes.last().is_some_and(|o| o.gp_verdict.e_gp),
        disagreements: outcomes.iter().filter(|o| !o.gp_verdict.y_gp).count(),
        unresolved: outcomes.iter().filter(|o| o.unresolved).count(),
        outcomes,
    })
}

/// Runs `tasks` as episodes `0..` of `round` concurrently and routes every
/// outcome into `stores` in (round, episode, step) order.
#[allow(clippy::too_many_arguments)]
pub fn run_round(
    agent: &dyn Agent,
    ds: &dyn DsBackend,
    gp: &dyn GpBackend,
    world: &World,
    tasks: &[&Trajectory],
    round: u32,
    rules: RuleConfig,
    stores: &mut RefluxStores,
) -> Result<Vec<EpisodeReport>, PipelineError> {
    let reports: Vec<Result<EpisodeReport, PipelineError>> = tasks
        .par_iter()
        .enumerate()
        .map(|(e, t)| run_episode(agent, ds, gp, world, t, round, e as u32, rules))
        .collect();
    let mut out = Vec::with_capacity(reports.len());
    for r in reports {
        let r = r?;
        for o in &r.outcomes {
            route_reflux(o, stores)?;
        }
        out.push(r);
    }
    Ok(out)
}

/// Summary written as `report.json` for a reflux run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefluxSummary {
    pub episodes: usize,
    pub steps: usize,
    pub raw_sr: f64,
    pub step_sr: f64,
    pub completed: usize,
    pub agent_records: usize,
    pub rms_records: usize,
    pub disagreements: usize,
    pub unresolved: usize,
    /// Step SR of endorsed actions, TM and EM of proposals, by split.
    pub rows: Vec<MetricRow>,
    pub episode_reports: Vec<EpisodeReport>,
}

impl RefluxSummary {
    pub fn of(reports: Vec<EpisodeReport>, stores: &RefluxStores, world: &World) -> Self {
        let steps: usize = reports.iter().map(|r| r.steps).sum();
        let raw: usize = reports.iter().map(|r| r.raw_correct).sum();
        let endorsed: usize = reports.iter().map(|r| r.endorsed_correct).sum();
        let ratio = |k: usize| if steps == 0 { 0.0 } else { k as f64 / steps as f64 };
        Self {
            episodes: reports.len(),
            steps,
            raw_sr: ratio(raw),
            step_sr: ratio(endorsed),
            completed: reports.iter().filter(|r| r.completed).count(),
            agent_records: stores.agent_len(),
            rms_records: stores.rms_len(),
            disagreements: reports.iter().map(|r| r.disagreements).sum(),
            unresolved: reports.iter().map(|r| r.unresolved).sum(),
            rows: episode_rows("agent", &reports, world),
            episode_reports: reports,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        Ok(write_json(path, self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{NoiseSchedule, OracleDs, OracleGp};
    use crate::world::{generate_world, WorldSpec};
    use std::sync::Arc;

    fn world() -> Arc<World> {
        Arc::new(generate_world(&WorldSpec { seed: 31, n_apps: 6, n_tasks_per_app: 10, ..WorldSpec::default() }).unwrap())
    }

    fn run(w: &Arc<World>, agent: &dyn Agent, ds: &dyn DsBackend) -> (Vec<EpisodeReport>, RefluxStores) {
        let gp = OracleGp::new(w.clone());
        let tasks: Vec<&Trajectory> = w.trajectories.iter().collect();
        let mut stores = RefluxStores::default();
        let reports = run_round(agent, ds, &gp, w, &tasks, 0, RuleConfig::default(), &mut stores).unwrap();
        (reports, stores)
    }

    #[test]
    fn perfect_agent_scores_one() {
        let w = world();
        let agent = ScriptedAgent { profile: AgentErrorProfile::PERFECT, seed: 1 };
        let (reports, stores) = run(&w, &agent, &OracleDs::new(w.clone()));
        for r in &reports {
            assert_eq!(r.step_sr, 1.0);
            assert_eq!(r.raw_sr, 1.0);
            assert!(r.completed);
        }
        assert_eq!(stores.rms_len(), 0);
    }

    #[test]
    fn grounding_errors_are_closed_by_correction() {
        let w = world();
        let profile = AgentErrorProfile { p_grounding_offset: 0.3, grounding_offset_scale: 0.3, ..AgentErrorProfile::PERFECT };
        let agent = ScriptedAgent { profile, seed: 2 };
        let (reports, stores) = run(&w, &agent, &OracleDs::new(w.clone()));
        let steps: usize = reports.iter().map(|r| r.steps).sum();
        let raw: usize = reports.iter().map(|r| r.raw_correct).sum();
        let endorsed: usize = reports.iter().map(|r| r.endorsed_correct).sum();
        assert_eq!(endorsed, steps);
        assert!(raw < steps);
        assert_eq!(stores.agent_len(), steps);
        assert_eq!(stores.rms_len(), 0);
        for r in &reports {
            assert_eq!(r.completed, r.outcomes.last().unwrap().gp_verdict.e_gp);
        }
    }

    #[test]
    fn noisy_rejection_of_correct_action_is_overridden() {
        let w = world();
        let agent = ScriptedAgent { profile: AgentErrorProfile::PERFECT, seed: 3 };
        let ds = OracleDs::new(w.clone()).with_noise(NoiseSchedule::uniform(0.2), 4);
        let (reports, stores) = run(&w, &agent, &ds);
        let overrides: Vec<&StepOutcome> = reports.iter().flat_map(|r| &r.outcomes).filter(|o| !o.ds_verdict.y_ds).collect();
        assert!(!overrides.is_empty());
        for o in &overrides {
            assert!(o.pred_correct);
            assert!(!o.gp_verdict.y_gp);
            assert_eq!(o.a_star, o.a_pred);
            assert!(o.refluxed_rms_sample.is_some());
            assert_eq!(o.reward, RewardValue::FalseNegative);
        }
        assert_eq!(stores.rms_len(), overrides.len());
        for rec in stores.rms_training_set() {
            let o = &reports[rec.provenance.episode as usize].outcomes[rec.provenance.step as usize - 1];
            assert_eq!(rec.gp_input.ds_verdict, o.ds_verdict);
        }
    }

    #[test]
    fn reflux_refuses_duplicates() {
        let w = world();
        let agent = ScriptedAgent { profile: AgentErrorProfile::PERFECT, seed: 1 };
        let (reports, mut stores) = run(&w, &agent, &OracleDs::new(w.clone()));
        let before = stores.agent_len();
        assert!(route_reflux(&reports[0].outcomes[0], &mut stores).is_err());
        assert_eq!(stores.agent_len(), before);
    }
}
