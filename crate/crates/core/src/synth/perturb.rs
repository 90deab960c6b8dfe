//! Structured perturbations producing easy negatives: instruction
//! substitution and trajectory stitching.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::domain::{DifficultyTier, HistoryEntry, RewardSample, SampleSource, StepContext, Trajectory};
use crate::rules::{verify, RuleConfig};
use crate::seed;
use crate::world::{gt_history, history_entry, World};

use super::{substitute_instruction, InstructionCatalog, Labeled, SynthError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StitchError {
    #[error("cut index {k} outside 1..{len}")]
    CutOutOfRange { k: usize, len: usize },
    #[error("cannot stitch task {0} with itself")]
    SameTask(String),
}

/// `τ1[1..=k]` followed by `τ2[k+1..]`, under τ1's instruction.
pub fn stitch_trajectories(t1: &Trajectory, t2: &Trajectory, k: usize) -> Result<Trajectory, StitchError> {
    if t1.task.id == t2.task.id {
        return Err(StitchError::SameTask(t1.task.id.clone()));
    }
    if k < 1 || k >= t1.len() {
        return Err(StitchError::CutOutOfRange { k, len: t1.len() });
    }
    let mut steps = t1.steps[..k].to_vec();
    steps.extend(t2.steps.iter().skip(k).cloned());
    Ok(Trajectory { task: t1.task.clone(), steps, app: t1.app.clone() })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EasyNegatives {
    pub samples: Vec<RewardSample>,
    /// Perturbed actions that turned out to satisfy every rule.
    pub rejected: BTreeMap<SampleSource, usize>,
    /// Samples short of the requested budget.
    pub shortfall: usize,
}

/// Up to `budget` easy negatives, `stitch_share` of them from stitching and
/// the rest from substitution. Either mechanism tops up the other when its
/// material runs out.
pub fn synthesize_easy_negatives(
    world: &World,
    catalog: &InstructionCatalog,
    budget: usize,
    stitch_share: f64,
    seed: u64,
    cfg: RuleConfig,
) -> Result<EasyNegatives, SynthError> {
    if budget == 0 {
        return Err(SynthError::Config(vec!["easy budget: must be at least 1".to_string()]));
    }
    let mut out = EasyNegatives::default();
    let stitch_target = (budget as f64 * stitch_share).round() as usize;
    let sub_target = budget - stitch_target;

    let subs = substitution_samples(world, catalog, budget, seed, cfg, &mut out.rejected)?;
    let sub_take = sub_target.min(subs.len());
    let stitches = stitching_samples(world, budget - sub_take, seed, cfg, &mut out.rejected)?;
    let stitch_take = stitches.len().min(budget - sub_take);
    let sub_take = (budget - stitch_take).min(subs.len());

    out.samples.extend(subs.into_iter().take(sub_take));
    out.samples.extend(stitches.into_iter().take(stitch_take));
    out.shortfall = budget - out.samples.len();
    if out.shortfall > 0 {
        log::warn!("easy negatives: {} of {budget} produced", out.samples.len());
    }
    Ok(out)
}

fn easy(candidate: crate::domain::Action, source: SampleSource, axis: crate::domain::FailureAxis) -> Labeled {
    Labeled { candidate, label: false, tier: DifficultyTier::EasyNegative, source, failure_axis: axis }
}

/// Each sample pairs a substituted instruction with the original task's
/// action at the first step where the two trajectories diverge on a shared
/// screen.
fn substitution_samples(
    world: &World,
    catalog: &InstructionCatalog,
    limit: usize,
    seed: u64,
    cfg: RuleConfig,
    rejected: &mut BTreeMap<SampleSource, usize>,
) -> Result<Vec<RewardSample>, SynthError> {
    let mut members: Vec<&str> = catalog.groups.iter().flat_map(|g| g.task_ids.iter().map(String::as_str)).collect();
    members.sort_unstable();
    members.dedup();
    let mut rng = seed::rng(seed, &["substitution"]);
    members.shuffle(&mut rng);

    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    // Several passes so tasks with more than one sibling contribute each pair.
    let max_group = catalog.groups.iter().map(|g| g.task_ids.len()).max().unwrap_or(0);
    for _pass in 0..max_group.saturating_sub(1) * 2 {
        for &x_id in &members {
            if out.len() >= limit {
                return Ok(out);
            }
            let Some(tx) = world.trajectory(x_id) else { continue };
            let Ok(xp_id) = substitute_instruction(&tx.task, catalog, &mut rng) else { continue };
            if !seen.insert((x_id.to_string(), xp_id.clone())) {
                continue;
            }
            let Some(txp) = world.trajectory(&xp_id) else { continue };
            let Some(j) = divergent_step(tx, txp) else { continue };
            let gt = &txp.steps[j - 1].gt;
            let context = StepContext {
                instruction: txp.task.clone(),
                screen: txp.steps[j - 1].screen.clone(),
                history: gt_history(txp, j as u32),
                step_index: j as u32,
            };
            let candidate = tx.steps[j - 1].gt.a_gt.clone();
            let r = verify(&context, gt, &candidate, world.eok_for(&xp_id), cfg)?;
            if r.passed {
                *rejected.entry(SampleSource::InstructionSubstitution).or_default() += 1;
                continue;
            }
            let id = format!("sub-{x_id}-as-{xp_id}-s{j}");
            let split = world.split_of(&txp.app);
            out.push(easy(candidate, SampleSource::InstructionSubstitution, r.failure_axis()).into_sample(id, context, split));
        }
    }
    Ok(out)
}

/// First 1-based index where the ground-truth actions differ while the
/// screens are still shared.
fn divergent_step(a: &Trajectory, b: &Trajectory) -> Option<usize> {
    for (i, (sa, sb)) in a.steps.iter().zip(&b.steps).enumerate() {
        if sa.screen != sb.screen {
            return None;
        }
        if sa.gt.a_gt != sb.gt.a_gt {
            return Some(i + 1);
        }
    }
    None
}

fn stitching_samples(
    world: &World,
    limit: usize,
    seed: u64,
    cfg: RuleConfig,
    rejected: &mut BTreeMap<SampleSource, usize>,
) -> Result<Vec<RewardSample>, SynthError> {
    let mut out = Vec::new();
    if limit == 0 {
        return Ok(out);
    }
    let heads: Vec<&Trajectory> = world.trajectories.iter().filter(|t| t.len() >= 2).collect();
    if heads.len() < 2 {
        return Ok(out);
    }
    let mut rng = seed::rng(seed, &["stitching"]);
    let mut seen = BTreeSet::new();
    let mut keys = BTreeSet::new();
    let max_attempts = limit * 50;
    for _ in 0..max_attempts {
        if out.len() >= limit {
            break;
        }
        let t1 = *heads.choose(&mut rng).expect("non-empty");
        let k = rng.random_range(1..t1.len());
        let same_app: Vec<&Trajectory> =
            heads.iter().copied().filter(|t| t.app == t1.app && t.task.id != t1.task.id && t.len() > k).collect();
        let pool = if same_app.is_empty() {
            heads.iter().copied().filter(|t| t.task.id != t1.task.id && t.len() > k).collect()
        } else {
            same_app
        };
        let Some(&t2) = pool.choose(&mut rng) else { continue };
        if !seen.insert((t1.task.id.clone(), t2.task.id.clone(), k)) {
            continue;
        }
        let stitched = stitch_trajectories(t1, t2, k).expect("preconditions checked above");
        let eok = world.eok_for(&t1.task.id);
        let split = world.split_of(&t1.app);
        let mut history: Vec<HistoryEntry> = gt_history(t1, k as u32 + 1);
        for j in (k + 1)..=stitched.len().min(t1.len()) {
            let gt = &t1.steps[j - 1].gt;
            let context = StepContext {
                instruction: t1.task.clone(),
                screen: t1.steps[j - 1].screen.clone(),
                history: history.clone(),
                step_index: j as u32,
            };
            let candidate = stitched.steps[j - 1].gt.a_gt.clone();
            history.push(history_entry(&stitched.steps[j - 1].screen, &candidate));
            let r = verify(&context, gt, &candidate, eok, cfg)?;
            if r.passed {
                *rejected.entry(SampleSource::TrajectoryStitching).or_default() += 1;
                continue;
            }
            if out.len() < limit {
                let id = format!("st-{}-{}-k{k}-s{j}", t1.task.id, t2.task.id);
                let sample = easy(candidate, SampleSource::TrajectoryStitching, r.failure_axis()).into_sample(id, context, split);
                if keys.insert(super::duplicate_key(&sample)) {
                    out.push(sample);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Action, Validate};
    use crate::rules::{template_of, verify, RuleConfig};
    use crate::world::{generate_world, WorldSpec};

    fn world() -> World {
        generate_world(&WorldSpec { seed: 21, n_apps: 8, n_tasks_per_app: 12, ..WorldSpec::default() }).unwrap()
    }

    fn of_len(w: &World, n: usize) -> &Trajectory {
        w.trajectories.iter().find(|t| t.len() == n).unwrap()
    }

    #[test]
    fn stitch_arithmetic_and_errors() {
        let w = world();
        let t1 = of_len(&w, 4);
        let t2 = of_len(&w, 5);
        let s = stitch_trajectories(t1, t2, 2).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.task, t1.task);
        assert_eq!(s.steps[..2], t1.steps[..2]);
        assert_eq!(s.steps[2..], t2.steps[2..]);
        assert_eq!(stitch_trajectories(t1, t2, 4).unwrap_err(), StitchError::CutOutOfRange { k: 4, len: 4 });
        assert_eq!(stitch_trajectories(t1, t2, 0).unwrap_err(), StitchError::CutOutOfRange { k: 0, len: 4 });
        assert!(matches!(stitch_trajectories(t1, t1, 1), Err(StitchError::SameTask(_))));
    }

    #[test]
    fn substitution_never_compatible_with_original_trajectory() {
        let w = world();
        let mut rng = seed::rng(3, &["subst-test"]);
        let members: Vec<&str> = w.catalog.groups.iter().flat_map(|g| g.task_ids.iter().map(String::as_str)).collect();
        let mut checked = 0;
        while checked < 1000 {
            let x = w.trajectory(members[rng.random_range(0..members.len())]).unwrap();
            let xp = w.trajectory(&substitute_instruction(&x.task, &w.catalog, &mut rng).unwrap()).unwrap();
            assert_ne!(xp.task.id, x.task.id);
            // Replay x's trajectory under x' until the first step where the actions differ.
            let j = (1..=x.len().min(xp.len())).find(|&j| x.steps[j - 1].gt.a_gt != xp.steps[j - 1].gt.a_gt).unwrap();
            let ctx = crate::world::context_at(xp, j as u32, gt_history(xp, j as u32));
            let r = verify(&ctx, &xp.steps[j - 1].gt, &x.steps[j - 1].gt.a_gt, w.eok_for(&xp.task.id), RuleConfig::default()).unwrap();
            assert!(!r.passed, "{} as {} at step {j}", x.task.id, xp.task.id);
            checked += 1;
        }
    }

    /// Post-cut steps fail against τ1 unless the borrowed action has exactly
    /// τ1's template at that index and every earlier template is present.
    #[test]
    fn stitched_steps_fail_against_head_ground_truth() {
        let w = world();
        let cfg = RuleConfig::default();
        let (mut failing, mut compatible) = (0usize, 0usize);
        for (i, t1) in w.trajectories.iter().enumerate().filter(|(_, t)| t.len() >= 2) {
            let t2 = &w.trajectories[(i * 7 + 3) % w.trajectories.len()];
            if t2.task.id == t1.task.id || t2.len() < 2 {
                continue;
            }
            let k = 1 + i % (t1.len() - 1);
            let s = stitch_trajectories(t1, t2, k).unwrap();
            let mut history = gt_history(t1, k as u32 + 1);
            for j in (k + 1)..=s.len().min(t1.len()) {
                let ctx = StepContext { instruction: t1.task.clone(), screen: t1.steps[j - 1].screen.clone(), history: history.clone(), step_index: j as u32 };
                let a = &s.steps[j - 1].gt.a_gt;
                let r = verify(&ctx, &t1.steps[j - 1].gt, a, w.eok_for(&t1.task.id), cfg).unwrap();
                let same_template = template_of(a, &ctx.screen) == template_of(&t1.steps[j - 1].gt.a_gt, &ctx.screen);
                if r.passed {
                    assert!(same_template, "{} + {} k={k} j={j}: {a:?}", t1.task.id, t2.task.id);
                    compatible += 1;
                } else {
                    failing += 1;
                }
                history.push(history_entry(&s.steps[j - 1].screen, a));
            }
        }
        assert!(failing > 100);
        assert!(compatible * 10 < failing, "{compatible} compatible vs {failing} failing");
    }

    #[test]
    fn easy_budget_met_with_even_mix() {
        let w = world();
        let e = synthesize_easy_negatives(&w, &w.catalog, 100, 0.5, 4, RuleConfig::default()).unwrap();
        assert_eq!(e.samples.len(), 100);
        assert_eq!(e.shortfall, 0);
        let stitched = e.samples.iter().filter(|s| s.source == SampleSource::TrajectoryStitching).count();
        assert!((40..=60).contains(&stitched), "{stitched}");
        for s in &e.samples {
            assert!(!s.label);
            assert_eq!(s.tier, DifficultyTier::EasyNegative);
            assert!(s.validate().is_empty(), "{:?}", s.validate());
            let gt = &w.step(&s.context.instruction.id, s.context.step_index).unwrap().gt;
            let r = verify(&s.context, gt, &s.candidate, w.eok_for(&s.context.instruction.id), RuleConfig::default()).unwrap();
            assert!(!r.passed);
            assert_eq!(r.failure_axis(), s.failure_axis);
        }
    }

    #[test]
    fn accidental_compatibility_is_rejected_and_counted() {
        let w = generate_world(&WorldSpec { seed: 2, n_apps: 10, n_tasks_per_app: 20, ..WorldSpec::default() }).unwrap();
        let e = synthesize_easy_negatives(&w, &w.catalog, 600, 1.0, 5, RuleConfig::default()).unwrap();
        let rejected = e.rejected.get(&SampleSource::TrajectoryStitching).copied().unwrap_or(0);
        assert!(rejected > 0, "expected some accidental passes");
        assert!(rejected * 5 < e.samples.len(), "{rejected} rejected");
        assert!(e.samples.iter().all(|s| s.candidate != Action::Impossible));
    }
}
