//! Multi-round self-evolution: rollout, two-tier evaluation, reflux, and
//! simulated retraining of the agent and the domain-specific reward model.
//!
//! Retraining is simulated. The agent learns by installing endorsed actions
//! in a policy table keyed by context fingerprint, which overrides its
//! fallible base policy on revisited contexts. The reward model learns by
//! scaling down the noise rate of every disagreement pattern it was shown.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backend::{NoisePattern, NoiseSchedule, OracleDs, OracleGp};
use crate::domain::codec::{write_json, CodecError};
use crate::domain::{Action, RewardSample, StepContext, StepGroundTruth, Trajectory};
use crate::metrics::{self, Metric, MetricRow, MetricsError, SplitCells, SplitSel, Tally};
use crate::pipeline::{run_round, Agent, AgentRecord, EpisodeReport, PipelineError, RefluxStores, RmsRecord, ScriptedAgent};
use crate::rules::RuleConfig;
use crate::seed;
use crate::world::{AgentErrorProfile, World};

#[derive(Debug, thiserror::Error)]
pub enum EvolutionError {
    #[error("invalid evolution config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Context fingerprint for exact replay in a static world.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextKey {
    pub task_id: String,
    pub step_index: u32,
    pub screen_id: String,
}

impl ContextKey {
    pub fn of(context: &StepContext) -> Self {
        Self {
            task_id: context.instruction.id.clone(),
            step_index: context.step_index,
            screen_id: context.screen.screen_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearnerState {
    pub policy: BTreeMap<ContextKey, Action>,
    pub noise: NoiseSchedule,
}

impl LearnerState {
    pub fn new(noise: NoiseSchedule) -> Self {
        Self { policy: BTreeMap::new(), noise }
    }
}

/// Installs every refluxed (context, endorsed action) pair; later records
/// for the same context replace earlier ones.
pub fn apply_agent_reflux<'a>(mut state: LearnerState, agent_set: impl IntoIterator<Item = &'a AgentRecord>) -> LearnerState {
    for r in agent_set {
        state.policy.insert(ContextKey::of(&r.context), r.a_star.clone());
    }
    state
}

/// Scales the noise rate of each pattern present in `rms_set` by
/// `1 - factor`, once per pattern.
pub fn apply_rms_reflux<'a>(
    mut state: LearnerState,
    rms_set: impl IntoIterator<Item = &'a RmsRecord>,
    factor: f64,
) -> Result<LearnerState, EvolutionError> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(EvolutionError::Config(vec![format!("reduction_factor: {factor} outside (0,1]")]));
    }
    let patterns: BTreeSet<NoisePattern> = rms_set.into_iter().map(|r| r.pattern).collect();
    for p in patterns {
        state.noise.reduce(p, factor);
    }
    Ok(state)
}

/// The table's action where the context was refluxed, the base policy
/// elsewhere.
pub struct PolicyAgent<'a> {
    pub table: &'a BTreeMap<ContextKey, Action>,
    pub base: ScriptedAgent,
}

impl Agent for PolicyAgent<'_> {
    fn propose(&self, context: &StepContext, gt: &StepGroundTruth) -> Action {
        match self.table.get(&ContextKey::of(context)) {
            Some(a) => a.clone(),
            None => self.base.propose(context, gt),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeMode {
    /// The same episodes every round.
    #[default]
    Revisit,
    /// A fresh seeded draw of episodes every round.
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub rounds: u32,
    pub episodes_per_round: usize,
    pub mode: EpisodeMode,
    pub agent: AgentErrorProfile,
    pub ds_noise: NoiseSchedule,
    pub gp_noise: f64,
    pub reduction_factor: f64,
    /// Size of the fixed dataset the reward model is scored on each round.
    pub benchmark_size: usize,
    pub strict_text: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            episodes_per_round: 200,
            mode: EpisodeMode::Revisit,
            agent: AgentErrorProfile {
                p_type_error: 0.06,
                p_grounding_offset: 0.2,
                p_intent_error: 0.06,
                p_semantic_error: 0.06,
                grounding_offset_scale: 0.08,
            },
            ds_noise: NoiseSchedule::uniform(0.2),
            gp_noise: 0.0,
            reduction_factor: 0.5,
            benchmark_size: 2000,
            strict_text: false,
        }
    }
}

impl EvolutionConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.rounds < 1 {
            out.push("rounds: must be at least 1".to_string());
        }
        if self.episodes_per_round < 1 {
            out.push("episodes_per_round: must be at least 1".to_string());
        }
        out.extend(self.agent.violations().into_iter().map(|v| format!("agent.{v}")));
        out.extend(self.ds_noise.violations().into_iter().map(|v| format!("ds_noise.{v}")));
        if !(0.0..=1.0).contains(&self.gp_noise) {
            out.push("gp_noise: must be in [0,1]".to_string());
        }
        if !(self.reduction_factor > 0.0 && self.reduction_factor <= 1.0) {
            out.push("reduction_factor: must be in (0,1]".to_string());
        }
        out
    }

    pub fn rules(&self) -> RuleConfig {
        RuleConfig { strict_text: self.strict_text }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    /// Step success rate of the agent's own proposals.
    pub agent_sr: SplitCells,
    /// Step success rate of the endorsed actions.
    pub endorsed_sr: SplitCells,
    /// Reward-model discrimination accuracy on the benchmark.
    pub ds_accuracy: SplitCells,
    pub episodes: usize,
    pub agent_reflux: usize,
    pub rms_reflux: usize,
    pub disagreements: usize,
    pub unresolved: usize,
    /// Policy entries in effect during the round.
    pub policy_entries: usize,
    pub noise: NoiseSchedule,
}

impl RoundReport {
    pub fn rows(&self) -> Vec<MetricRow> {
        let r = self.round;
        let mut rows = self.agent_sr.rows(&format!("round {r} agent"), Metric::StepSr, None);
        rows.extend(self.ds_accuracy.rows(&format!("round {r} ds-rm"), Metric::DiscAcc, None));
        rows
    }
}

/// Everything a run produced: per-round reports, the final learner state
/// and all refluxed records.
#[derive(Debug, Clone)]
pub struct EvolutionRun {
    pub reports: Vec<RoundReport>,
    pub state: LearnerState,
    pub stores: RefluxStores,
}

/// Episodes for `round`: one draw shared by every round in revisit mode, a
/// fresh draw per round otherwise.
pub fn episodes_for<'w>(world: &'w World, cfg: &EvolutionConfig, round: u32, seed: u64) -> Vec<&'w Trajectory> {
    let mut all: Vec<&Trajectory> = world.trajectories.iter().collect();
    let round_tag = match cfg.mode {
        EpisodeMode::Revisit => String::new(),
        EpisodeMode::Fresh => round.to_string(),
    };
    all.shuffle(&mut seed::rng(seed, &["episodes", &round_tag]));
    all.truncate(cfg.episodes_per_round);
    all
}

fn sr_cells(reports: &[EpisodeReport], pick: impl Fn(&crate::pipeline::StepOutcome) -> bool) -> SplitCells {
    let mut t = Tally::default();
    for r in reports {
        for o in &r.outcomes {
            t.add(r.split, None, pick(o));
        }
    }
    t.cells(None)
}

fn ds_cells(ds: &OracleDs, benchmark: &[RewardSample]) -> Result<SplitCells, EvolutionError> {
    let verdicts = metrics::judge_samples(ds, benchmark)?;
    let mut t = Tally::default();
    for (v, s) in verdicts.iter().zip(benchmark) {
        t.add(s.split, None, v.y_ds == s.label);
    }
    Ok(t.cells(None))
}

/// Runs `cfg.rounds` rounds starting from `state`. Round 0 measures the
/// initial learners; each round's reflux is applied before the next.
pub fn simulate_evolution(
    world: Arc<World>,
    state: LearnerState,
    cfg: &EvolutionConfig,
    benchmark: &[RewardSample],
    seed: u64,
) -> Result<EvolutionRun, EvolutionError> {
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(EvolutionError::Config(problems));
    }
    let base = ScriptedAgent { profile: cfg.agent, seed: seed::derive(seed, &["agent"]) };
    let ds_seed = seed::derive(seed, &["ds"]);
    let gp = OracleGp::new(world.clone()).with_noise(cfg.gp_noise, seed::derive(seed, &["gp"]));
    let mut state = state;
    let mut stores = RefluxStores::default();
    let mut reports = Vec::with_capacity(cfg.rounds as usize);
    for round in 0..cfg.rounds {
        let tasks = episodes_for(&world, cfg, round, seed);
        let agent = PolicyAgent { table: &state.policy, base };
        let ds = OracleDs::new(world.clone()).with_noise(state.noise.clone(), ds_seed);
        let ds = OracleDs { rules: cfg.rules(), ..ds };
        let gp = OracleGp { rules: cfg.rules(), ..gp.clone() };

        let mut round_stores = RefluxStores::default();
        let episodes = run_round(&agent, &ds, &gp, &world, &tasks, round, cfg.rules(), &mut round_stores)?;
        let report = RoundReport {
            round,
            agent_sr: sr_cells(&episodes, |o| o.pred_correct),
            endorsed_sr: sr_cells(&episodes, |o| o.star_correct),
            ds_accuracy: ds_cells(&ds, benchmark)?,
            episodes: episodes.len(),
            agent_reflux: round_stores.agent_len(),
            rms_reflux: round_stores.rms_len(),
            disagreements: episodes.iter().map(|e| e.disagreements).sum(),
            unresolved: episodes.iter().map(|e| e.unresolved).sum(),
            policy_entries: state.policy.len(),
            noise: state.noise.clone(),
        };
        log::info!(
            "round {round}: agent SR {:.2}, DS accuracy {:.2}, {} disagreements",
            report.agent_sr.all.value,
            report.ds_accuracy.all.value,
            report.disagreements
        );
        reports.push(report);

        state = apply_agent_reflux(state, round_stores.agent_training_set());
        state = apply_rms_reflux(state, round_stores.rms_training_set(), cfg.reduction_factor)?;
        stores.extend(round_stores)?;
    }
    Ok(EvolutionRun { reports, state, stores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionReport {
    pub seed: u64,
    pub config: EvolutionConfig,
    pub rounds: Vec<RoundReport>,
}

impl EvolutionReport {
    pub fn rows(&self) -> Vec<MetricRow> {
        self.rounds.iter().flat_map(RoundReport::rows).collect()
    }

    /// Round by {Agent, DS-RM} by {ALL, IDD, OOD}, as percentages.
    pub fn to_text(&self) -> String {
        let mut out = String::from("Round   Agent ALL    IDD    OOD   DS-RM ALL    IDD    OOD\n");
        for r in &self.rounds {
            let _ = writeln!(
                out,
                "{:<5} {:>11.1} {:>6.1} {:>6.1} {:>11.1} {:>6.1} {:>6.1}",
                r.round,
                r.agent_sr.all.value,
                r.agent_sr.idd.value,
                r.agent_sr.ood.value,
                r.ds_accuracy.all.value,
                r.ds_accuracy.idd.value,
                r.ds_accuracy.ood.value
            );
        }
        out
    }

    pub fn to_csv(&self) -> Result<String, EvolutionError> {
        let err = |e: csv::Error| EvolutionError::Metrics(MetricsError::Inconsistent(format!("csv: {e}")));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["round", "model", "split", "value", "n", "agent_reflux", "rms_reflux", "disagreements"]).map_err(err)?;
        for r in &self.rounds {
            for (model, cells) in [("agent", &r.agent_sr), ("ds_rm", &r.ds_accuracy)] {
                for split in SplitSel::ORDER {
                    let c = cells.get(split);
                    w.write_record([
                        r.round.to_string(),
                        model.to_string(),
                        split.as_str().to_string(),
                        c.value.to_string(),
                        c.n.to_string(),
                        r.agent_reflux.to_string(),
                        r.rms_reflux.to_string(),
                        r.disagreements.to_string(),
                    ])
                    .map_err(err)?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| EvolutionError::Metrics(MetricsError::Inconsistent(format!("csv: {e}"))))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Writes `evolution_report.json` and `evolution_report.csv`.
    pub fn write(&self, dir: &Path) -> Result<(), EvolutionError> {
        let io = |e: std::io::Error| EvolutionError::Codec(CodecError::Io { path: dir.display().to_string(), source: e });
        std::fs::create_dir_all(dir).map_err(io)?;
        write_json(&dir.join("evolution_report.json"), self)?;
        std::fs::write(dir.join("evolution_report.csv"), self.to_csv()?).map_err(io)?;
        Ok(())
    }
}

/// True when every value in `series` is at least the one before it.
pub fn non_decreasing(series: &[f64]) -> bool {
    series.windows(2).all(|w| w[1] >= w[0])
}

/// Index of the round with the largest gain over its predecessor; the
/// earliest wins ties.
pub fn largest_gain_round(series: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in 1..series.len() {
        let gain = series[i] - series[i - 1];
        if best.is_none_or(|(_, g)| gain > g) {
            best = Some((i, gain));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::FailureAxis;
    use crate::domain::ActionKind;
    use crate::synth::{build_dataset, collect_sources, SynthConfig};
    use crate::world::{generate_world, WorldSpec};

    fn setup() -> (Arc<World>, Vec<RewardSample>) {
        let w = Arc::new(generate_world(&WorldSpec { seed: 13, n_apps: 12, n_tasks_per_app: 12, ..WorldSpec::default() }).unwrap());
        let cfg = SynthConfig { total: 600, ..SynthConfig::default() };
        let pools = collect_sources(&w, &w.catalog, &cfg, 2).unwrap();
        let (bench, _) = build_dataset(&pools, cfg.total, &cfg.tier_weights, 2).unwrap();
        (w, bench)
    }

    fn cfg() -> EvolutionConfig {
        EvolutionConfig { episodes_per_round: 80, ..EvolutionConfig::default() }
    }

    fn series(run: &EvolutionRun, f: impl Fn(&RoundReport) -> &SplitCells, split: SplitSel) -> Vec<f64> {
        run.reports.iter().map(|r| f(r).get(split).value).collect()
    }

    #[test]
    fn empty_reflux_leaves_state_unchanged() {
        let s = LearnerState::new(NoiseSchedule::uniform(0.3));
        assert_eq!(apply_agent_reflux(s.clone(), []), s);
        assert_eq!(apply_rms_reflux(s.clone(), [], 0.5).unwrap(), s);
        assert!(apply_rms_reflux(s, [], 0.0).is_err());
    }

    #[test]
    fn full_reduction_zeroes_a_pattern() {
        let (w, _) = setup();
        let t = &w.trajectories[0];
        let ctx = crate::world::context_at(t, 1, vec![]);
        let input = crate::backend::DsInput { context: ctx, a_pred: Action::Back };
        let verdict = crate::backend::DsVerdict { y_ds: true, r_ds: "x".into(), a_corr: None, r_corr: None };
        let rec = RmsRecord {
            provenance: crate::pipeline::Provenance { round: 0, episode: 0, step: 1 },
            high_priority: true,
            pattern: NoisePattern { axis: FailureAxis::Spatial, kind: ActionKind::Click },
            gp_input: crate::backend::GpInput::new(&input, &verdict),
            gp_verdict: crate::backend::GpVerdict {
                y_gp: false,
                e_gp: false,
                s_gp: crate::backend::ActionPreference { preference: crate::backend::Preference::PreferPred, summary: String::new() },
            },
        };
        let s = apply_rms_reflux(LearnerState::new(NoiseSchedule::uniform(0.3)), [&rec], 1.0).unwrap();
        assert_eq!(s.noise.rate(&rec.pattern), 0.0);
        assert_eq!(s.noise.rate(&NoisePattern { axis: FailureAxis::Type, kind: ActionKind::Click }), 0.3);
    }

    #[test]
    fn installed_context_replays_endorsed_action() {
        let (w, _) = setup();
        let t = &w.trajectories[3];
        let ctx = crate::world::context_at(t, 1, vec![]);
        let rec = AgentRecord { provenance: crate::pipeline::Provenance { round: 0, episode: 0, step: 1 }, context: ctx.clone(), a_star: Action::Wait };
        let s = apply_agent_reflux(LearnerState::default(), [&rec]);
        let base = ScriptedAgent { profile: AgentErrorProfile::PERFECT, seed: 0 };
        let agent = PolicyAgent { table: &s.policy, base };
        assert_eq!(agent.propose(&ctx, &t.steps[0].gt), Action::Wait);
        let other = crate::world::context_at(t, 2, vec![]);
        assert_eq!(agent.propose(&other, &t.steps[1].gt), t.steps[1].gt.a_gt);
    }

    #[test]
    fn noisy_run_improves_monotonically_with_front_loaded_gain() {
        let (w, bench) = setup();
        let c = cfg();
        let run = simulate_evolution(w, LearnerState::new(c.ds_noise.clone()), &c, &bench, 11).unwrap();
        assert_eq!(run.reports.len(), 3);
        for split in SplitSel::ORDER {
            let agent = series(&run, |r| &r.agent_sr, split);
            let ds = series(&run, |r| &r.ds_accuracy, split);
            assert!(non_decreasing(&agent), "{split:?} agent {agent:?}");
            assert!(non_decreasing(&ds), "{split:?} ds {ds:?}");
        }
        let agent = series(&run, |r| &r.agent_sr, SplitSel::All);
        assert_eq!(largest_gain_round(&agent), Some(1), "{agent:?}");
        let disagreements: Vec<usize> = run.reports.iter().map(|r| r.disagreements).collect();
        assert!(disagreements.windows(2).all(|p| p[1] < p[0]), "{disagreements:?}");
        for r in &run.reports {
            let steps = r.agent_sr.all.n;
            assert_eq!(r.agent_reflux, steps);
            assert_eq!(r.rms_reflux, r.disagreements);
        }
        let total: usize = run.reports.iter().map(|r| r.agent_reflux).sum();
        assert_eq!(run.stores.agent_len(), total);
    }

    #[test]
    fn zero_noise_is_flat_at_one_hundred() {
        let (w, bench) = setup();
        let c = EvolutionConfig { agent: AgentErrorProfile::PERFECT, ds_noise: NoiseSchedule::uniform(0.0), ..cfg() };
        let run = simulate_evolution(w, LearnerState::new(c.ds_noise.clone()), &c, &bench, 4).unwrap();
        for r in &run.reports {
            for split in SplitSel::ORDER {
                assert_eq!(r.agent_sr.get(split).value, 100.0);
                assert_eq!(r.ds_accuracy.get(split).value, 100.0);
            }
            assert_eq!(r.disagreements, 0);
        }
    }

    #[test]
    fn runs_are_pure_functions_of_seed() {
        let (w, bench) = setup();
        let c = EvolutionConfig { mode: EpisodeMode::Fresh, episodes_per_round: 30, ..cfg() };
        let a = simulate_evolution(w.clone(), LearnerState::new(c.ds_noise.clone()), &c, &bench, 5).unwrap();
        let b = simulate_evolution(w, LearnerState::new(c.ds_noise.clone()), &c, &bench, 5).unwrap();
        assert_eq!(a.reports, b.reports);
        assert_eq!(a.stores, b.stores);
    }

    #[test]
    fn report_rows_pass_the_consistency_check() {
        let (w, bench) = setup();
        let c = EvolutionConfig { rounds: 2, episodes_per_round: 30, ..cfg() };
        let run = simulate_evolution(w, LearnerState::new(c.ds_noise.clone()), &c, &bench, 6).unwrap();
        let report = EvolutionReport { seed: 6, config: c, rounds: run.reports };
        metrics::aggregate_report(report.rows(), None).unwrap();
        assert_eq!(report.to_text().lines().count(), 3);
        assert_eq!(report.to_csv().unwrap().lines().count(), 1 + 2 * 2 * 3);
    }
}
