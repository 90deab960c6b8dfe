//! Source pools and difficulty-balanced dataset assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::codec::{write_json, write_jsonl};
use crate::domain::{DifficultyTier, FailureAxis, RewardSample, SampleSource, Split, Stratum};
use crate::rules::verify;
use crate::seed;
use crate::world::{context_at, gt_history, scripted_agent_act, AgentErrorProfile, World};

use super::correct::classify_os_action;
use super::perturb::synthesize_easy_negatives;
use super::{InstructionCatalog, Labeled, SynthConfig, SynthError, TierWeights};

/// Where a source pool came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceProvenance {
    pub corpus: String,
    pub mechanism: String,
    pub produced: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourcePools {
    pub by_tier: BTreeMap<DifficultyTier, Vec<RewardSample>>,
    pub rejected: BTreeMap<SampleSource, usize>,
    pub provenance: Vec<SourceProvenance>,
}

impl SourcePools {
    pub fn len(&self, tier: DifficultyTier) -> usize {
        self.by_tier.get(&tier).map_or(0, Vec::len)
    }

    fn add(&mut self, samples: Vec<RewardSample>) {
        for s in samples {
            self.by_tier.entry(s.tier).or_default().push(s);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub total: usize,
    pub positive_fraction: f64,
    pub counts_by_tier: BTreeMap<DifficultyTier, usize>,
    pub counts_by_source: BTreeMap<SampleSource, usize>,
    pub counts_by_split: BTreeMap<Split, usize>,
    pub counts_by_stratum: BTreeMap<Stratum, usize>,
    pub counts_by_failure_axis: BTreeMap<FailureAxis, usize>,
    pub rejected_accidental: BTreeMap<SampleSource, usize>,
    /// Samples in the in-domain training export.
    pub train_total: usize,
    pub provenance: Vec<SourceProvenance>,
}

impl DatasetManifest {
    pub fn of(samples: &[RewardSample], seed: u64, rejected: BTreeMap<SampleSource, usize>, provenance: Vec<SourceProvenance>) -> Self {
        let mut m = DatasetManifest {
            seed,
            total: samples.len(),
            positive_fraction: 0.0,
            counts_by_tier: BTreeMap::new(),
            counts_by_source: BTreeMap::new(),
            counts_by_split: BTreeMap::new(),
            counts_by_stratum: BTreeMap::new(),
            counts_by_failure_axis: BTreeMap::new(),
            rejected_accidental: rejected,
            train_total: 0,
            provenance,
        };
        for s in samples {
            *m.counts_by_tier.entry(s.tier).or_default() += 1;
            *m.counts_by_source.entry(s.source).or_default() += 1;
            *m.counts_by_split.entry(s.split).or_default() += 1;
            *m.counts_by_stratum.entry(s.stratum).or_default() += 1;
            *m.counts_by_failure_axis.entry(s.failure_axis).or_default() += 1;
        }
        let positives = m.counts_by_tier.get(&DifficultyTier::Positive).copied().unwrap_or(0);
        m.positive_fraction = if samples.is_empty() { 0.0 } else { positives as f64 / samples.len() as f64 };
        m.train_total = m.counts_by_split.get(&Split::Idd).copied().unwrap_or(0);
        m
    }
}

/// Largest-remainder apportionment of `total` by `weights`; ties go to the
/// earlier index.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let mut left = total - counts.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        if weights[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

fn tier_targets(total: usize, weights: &TierWeights) -> BTreeMap<DifficultyTier, usize> {
    let w: Vec<f64> = DifficultyTier::ALL.iter().map(|t| weights.get(*t)).collect();
    DifficultyTier::ALL.into_iter().zip(apportion(total, &w)).collect()
}

/// Every sample pool the configured mechanisms can produce from `world`.
pub fn collect_sources(
    world: &World,
    catalog: &InstructionCatalog,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<SourcePools, SynthError> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(SynthError::Config(violations));
    }
    let corpus = format!("world seed {} ({} tasks)", world.spec.seed, world.trajectories.len());
    let mut pools = SourcePools::default();

    let direct = rule_verified_corpus(world, &cfg.main_agent, cfg.main_agent_draws, cfg, seed)?;
    pools.provenance.push(SourceProvenance {
        corpus: corpus.clone(),
        mechanism: "scripted agent proposals labeled by rule verification".to_string(),
        produced: direct.len(),
    });
    pools.add(direct);

    let os = os_agent_corpus(world, &cfg.os_agents, cfg, seed)?;
    pools.provenance.push(SourceProvenance {
        corpus: corpus.clone(),
        mechanism: "OS-agent proposals with intention matching and grounding repair".to_string(),
        produced: os.len(),
    });
    pools.add(os);

    let easy_target = tier_targets(cfg.total, &cfg.tier_weights)[&DifficultyTier::EasyNegative];
    if easy_target > 0 {
        // Headroom for samples the two mechanisms both produce, which the
        // dedup below drops.
        let budget = easy_target + easy_target / 10 + 8;
        let easy = synthesize_easy_negatives(world, catalog, budget, cfg.stitch_share, seed, cfg.rules())?;
        pools.provenance.push(SourceProvenance {
            corpus,
            mechanism: "instruction substitution and trajectory stitching".to_string(),
            produced: easy.samples.len(),
        });
        pools.rejected = easy.rejected;
        pools.add(easy.samples);
    }

    for samples in pools.by_tier.values_mut() {
        let mut keys = BTreeSet::new();
        samples.retain(|s| keys.insert(super::duplicate_key(s)));
    }
    Ok(pools)
}

/// One sample per draw per step: the main agent's proposal, labeled
/// positive or hard negative by the rules alone.
pub fn rule_verified_corpus(
    world: &World,
    profile: &AgentErrorProfile,
    draws: u32,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<Vec<RewardSample>, SynthError> {
    let per_traj: Vec<Result<Vec<RewardSample>, SynthError>> = world
        .trajectories
        .par_iter()
        .map(|t| {
            let mut out = Vec::new();
            let split = world.split_of(&t.app);
            let eok = world.eok_for(&t.task.id);
            for j in 1..=t.len() as u32 {
                let ctx = context_at(t, j, gt_history(t, j));
                let gt = &t.steps[j as usize - 1].gt;
                for d in 0..draws {
                    let mut rng = seed::rng(seed, &["main-agent", &t.task.id, &j.to_string(), &d.to_string()]);
                    let a = scripted_agent_act(profile, &ctx, gt, &mut rng);
                    let r = verify(&ctx, gt, &a, eok, cfg.rules())?;
                    let labeled = Labeled {
                        candidate: a,
                        label: r.passed,
                        tier: if r.passed { DifficultyTier::Positive } else { DifficultyTier::HardNegative },
                        source: SampleSource::RuleVerified,
                        failure_axis: r.failure_axis(),
                    };
                    out.push(labeled.into_sample(format!("rv-{}-s{j}-d{d}", t.task.id), ctx.clone(), split));
                }
            }
            Ok(out)
        })
        .collect();
    flatten(per_traj)
}

/// One sample per OS profile per step, classified by intention.
pub fn os_agent_corpus(
    world: &World,
    profiles: &[AgentErrorProfile],
    cfg: &SynthConfig,
    seed: u64,
) -> Result<Vec<RewardSample>, SynthError> {
    let per_traj: Vec<Result<Vec<RewardSample>, SynthError>> = world
        .trajectories
        .par_iter()
        .map(|t| {
            let mut out = Vec::new();
            let split = world.split_of(&t.app);
            let eok = world.eok_for(&t.task.id);
            for j in 1..=t.len() as u32 {
                let ctx = context_at(t, j, gt_history(t, j));
                let gt = &t.steps[j as usize - 1].gt;
                for (p, profile) in profiles.iter().enumerate() {
                    let mut rng = seed::rng(seed, &["os-agent", &p.to_string(), &t.task.id, &j.to_string()]);
                    let a = scripted_agent_act(profile, &ctx, gt, &mut rng);
                    let class = classify_os_action(&a, &ctx, gt, eok, cfg.snap_radius, cfg.rules())?;
                    out.push(class.labeled(&a).into_sample(format!("os{p}-{}-s{j}", t.task.id), ctx.clone(), split));
                }
            }
            Ok(out)
        })
        .collect();
    flatten(per_traj)
}

fn flatten(parts: Vec<Result<Vec<RewardSample>, SynthError>>) -> Result<Vec<RewardSample>, SynthError> {
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Draws each tier's share from its pool and assigns benchmark strata to
/// positives in proportion to the negative strata. Output is ordered by
/// (source, sample id).
pub fn build_dataset(
    pools: &SourcePools,
    total: usize,
    weights: &TierWeights,
    seed: u64,
) -> Result<(Vec<RewardSample>, DatasetManifest), SynthError> {
    let mut problems = weights.violations();
    if total == 0 {
        problems.push("total: must be at least 1".to_string());
    }
    if !problems.is_empty() {
        return Err(SynthError::Config(problems));
    }
    let targets = tier_targets(total, weights);
    let shortfalls: Vec<String> = targets
        .iter()
        .filter(|(t, n)| pools.len(**t) < **n)
        .map(|(t, n)| format!("{}: need {n}, have {}", t.as_str(), pools.len(*t)))
        .collect();
    if !shortfalls.is_empty() {
        return Err(SynthError::Config(shortfalls));
    }

    let mut samples = Vec::with_capacity(total);
    for (tier, n) in &targets {
        let Some(pool) = pools.by_tier.get(tier) else { continue };
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.sort_by(|&a, &b| pool[a].sample_id.cmp(&pool[b].sample_id));
        idx.shuffle(&mut seed::rng(seed, &["select", tier.as_str()]));
        samples.extend(idx.into_iter().take(*n).map(|i| pool[i].clone()));
    }

    assign_positive_strata(&mut samples, seed);
    samples.sort_by(|a, b| a.source.cmp(&b.source).then_with(|| a.sample_id.cmp(&b.sample_id)));
    let manifest = DatasetManifest::of(&samples, seed, pools.rejected.clone(), pools.provenance.clone());
    Ok((samples, manifest))
}

fn assign_positive_strata(samples: &mut [RewardSample], seed: u64) {
    let negatives: Vec<f64> = Stratum::ALL
        .iter()
        .map(|s| samples.iter().filter(|x| !x.label && x.stratum == *s).count() as f64)
        .collect();
    let mut positives: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label).collect();
    positives.sort_by(|&a, &b| samples[a].sample_id.cmp(&samples[b].sample_id));
    positives.shuffle(&mut seed::rng(seed, &["positive-strata"]));
    // Repaired positives go first so they land in the moderate cell when it has room.
    positives.sort_by_key(|&i| samples[i].source != SampleSource::OsAgentRepaired);

    let quotas = if negatives.iter().sum::<f64>() > 0.0 {
        apportion(positives.len(), &negatives)
    } else {
        vec![positives.len(), 0, 0]
    };
    let fill_order = [(Stratum::Moderate, quotas[1]), (Stratum::Hard, quotas[2]), (Stratum::Easy, quotas[0])];
    let mut it = positives.into_iter();
    for (stratum, n) in fill_order {
        for i in it.by_ref().take(n) {
            samples[i].stratum = stratum;
        }
    }
}

/// Writes `rms_dataset.jsonl`, the in-domain `rms_train.jsonl` and
/// `manifest.json` into `dir`.
pub fn export_dataset(dir: &Path, samples: &[RewardSample], manifest: &DatasetManifest) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir).map_err(|e| {
        SynthError::Codec(crate::domain::codec::CodecError::Io { path: dir.display().to_string(), source: e })
    })?;
    write_jsonl(&dir.join("rms_dataset.jsonl"), samples)?;
    write_jsonl(&dir.join("rms_train.jsonl"), samples.iter().filter(|s| s.split == Split::Idd))?;
    write_json(&dir.join("manifest.json"), manifest)?;
    Ok(())
}
