use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use rms_core::backend::{DsBackend, MockServer, MockServerConfig, OracleDs, OracleGp, RemoteBackend, RemoteConfig};
use rms_core::domain::codec::{read_json, read_jsonl, write_jsonl, SchemaMode};
use rms_core::domain::{FailureAxis, RewardSample};
use rms_core::evolution::{episodes_for, simulate_evolution, EvolutionConfig, EvolutionReport, LearnerState};
use rms_core::metrics::{aggregate_report, decisions_of, discrimination_accuracy, judge_samples, MetricRow};
use rms_core::pipeline::{run_round, RefluxStores, RefluxSummary, ScriptedAgent};
use rms_core::rules::verify as verify_rules;
use rms_core::seed;
use rms_core::synth::{build_dataset, collect_sources, export_dataset, DatasetManifest, SynthConfig};
use rms_core::world::io::{export_world, import_world};
use rms_core::world::{generate_world, World};

use crate::config::{config_error, parse_tier_weights, BackendKind, RunConfig};
use crate::CommonArgs;

/// Reads the config file and applies flag overrides. `--seed` sets both the
/// run seed and the seed of an inline world spec.
pub fn load(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
        cfg.world_spec.seed = s;
    }
    if let Some(w) = &args.world {
        cfg.world = Some(w.clone());
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(b) = args.backend {
        cfg.backend = b;
    }
    if let Some(e) = &args.endpoint {
        cfg.endpoint = Some(e.clone());
    }
    if let Some(n) = args.workers {
        cfg.workers = Some(n);
    }
    if !args.tier_weights.is_empty() {
        cfg.synth.tier_weights = parse_tier_weights(&args.tier_weights)?;
    }
    if let Some(r) = args.rounds {
        cfg.evolution.rounds = r;
    }
    if let Some(e) = args.episodes {
        cfg.evolution.episodes_per_round = e;
        cfg.reflux.episodes = e;
    }
    cfg.strict_schema |= args.strict_schema;

    if let Some(w) = &cfg.world {
        if !w.is_dir() {
            return Err(config_error(format!("world: directory {} not found", w.display())));
        }
    }
    if cfg.backend == BackendKind::Remote && cfg.endpoint.is_none() {
        return Err(config_error("endpoint: the remote backend needs --endpoint or RMS_BACKEND_URL"));
    }
    let mut problems: Vec<String> = cfg.backends.ds_noise.violations().into_iter().map(|v| format!("backends.ds_noise.{v}")).collect();
    if !(0.0..=1.0).contains(&cfg.backends.gp_noise) {
        problems.push("backends.gp_noise: must be in [0,1]".to_string());
    }
    problems.extend(cfg.reflux.agent.violations().into_iter().map(|v| format!("reflux.agent.{v}")));
    if !problems.is_empty() {
        return Err(config_error(problems.join("; ")));
    }
    if let Some(n) = cfg.workers {
        if n == 0 {
            return Err(config_error("workers: must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting worker pool")?;
    }
    Ok(cfg)
}

fn schema_mode(cfg: &RunConfig) -> SchemaMode {
    if cfg.strict_schema {
        SchemaMode::Strict
    } else {
        SchemaMode::Lenient
    }
}

fn world_of(cfg: &RunConfig) -> Result<World> {
    match &cfg.world {
        Some(dir) => import_world(dir, schema_mode(cfg)).with_context(|| format!("loading world from {}", dir.display())),
        None => Ok(generate_world(&cfg.world_spec)?),
    }
}

fn remote(cfg: &RunConfig) -> Result<RemoteBackend> {
    let rc = RemoteConfig::from_env(cfg.endpoint.as_deref())?;
    Ok(RemoteBackend::new(rc)?)
}

/// Dataset file named directly, or `rms_dataset.jsonl` inside a directory.
fn dataset_file(path: &Path) -> Result<PathBuf> {
    let file = if path.is_dir() { path.join("rms_dataset.jsonl") } else { path.to_path_buf() };
    if !file.is_file() {
        return Err(config_error(format!("dataset: {} not found", file.display())));
    }
    Ok(file)
}

fn read_dataset(cfg: &RunConfig, path: &Path) -> Result<Vec<RewardSample>> {
    let file = dataset_file(path)?;
    read_jsonl(&file, schema_mode(cfg)).with_context(|| format!("reading {}", file.display()))
}

fn print(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn genworld(mut cfg: RunConfig, apps: Option<u32>, tasks_per_app: Option<u32>, ood: Option<f64>) -> Result<()> {
    if let Some(a) = apps {
        cfg.world_spec.n_apps = a;
    }
    if let Some(t) = tasks_per_app {
        cfg.world_spec.n_tasks_per_app = t;
    }
    if let Some(f) = ood {
        cfg.world_spec.ood_app_fraction = f;
    }
    let world = generate_world(&cfg.world_spec)?;
    export_world(&world, &cfg.out)?;
    let ood_apps = world.ood_apps().count();
    print(&format!(
        "world: {} apps ({} out-of-distribution), {} tasks, {} screens\n",
        world.apps.len(),
        ood_apps,
        world.trajectories.len(),
        world.screens().len()
    ))
}

pub(crate) fn synthesize(world: &World, synth: &SynthConfig, seed: u64) -> Result<(Vec<RewardSample>, DatasetManifest)> {
    let pools = collect_sources(world, &world.catalog, synth, seed)?;
    Ok(build_dataset(&pools, synth.total, &synth.tier_weights, seed)?)
}

pub fn synth(mut cfg: RunConfig, total: Option<usize>) -> Result<()> {
    if let Some(t) = total {
        cfg.synth.total = t;
    }
    let world = world_of(&cfg)?;
    let (samples, manifest) = synthesize(&world, &cfg.synth, cfg.seed)?;
    export_dataset(&cfg.out, &samples, &manifest)?;
    let mut text = format!("samples: {}\npositive_fraction: {:.4}\n", manifest.total, manifest.positive_fraction);
    for (tier, n) in &manifest.counts_by_tier {
        text.push_str(&format!("  {}: {n}\n", tier.as_str()));
    }
    for (split, n) in &manifest.counts_by_split {
        text.push_str(&format!("  {}: {n}\n", split.as_str()));
    }
    text.push_str(&format!("train samples (in-domain): {}\n", manifest.train_total));
    print(&text)
}

#[derive(Debug, Serialize)]
struct VerifyRecord {
    sample_id: String,
    label: bool,
    passed: bool,
    failure_axis: FailureAxis,
    agrees: bool,
}

pub fn verify(cfg: RunConfig, dataset: &Path) -> Result<()> {
    let samples = read_dataset(&cfg, dataset)?;
    let world = world_of(&cfg)?;
    let rules = cfg.synth.rules();
    let mut records = Vec::with_capacity(samples.len());
    for s in &samples {
        let task = &s.context.instruction.id;
        let step = world
            .step(task, s.context.step_index)
            .with_context(|| format!("sample {}: no step {} of task {task} in the world", s.sample_id, s.context.step_index))?;
        let result = verify_rules(&s.context, &step.gt, &s.candidate, world.eok_for(task), rules)?;
        records.push(VerifyRecord {
            sample_id: s.sample_id.clone(),
            label: s.label,
            passed: result.passed,
            failure_axis: result.failure_axis(),
            agrees: result.passed == s.label && (s.label || result.failure_axis() == s.failure_axis),
        });
    }
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write_jsonl(&cfg.out.join("verify.jsonl"), &records)?;
    let disagree = records.iter().filter(|r| !r.agrees).count();
    print(&format!("verified {} samples, {} disagree with their label\n", records.len(), disagree))?;
    if disagree > 0 {
        bail!("{disagree} of {} labels disagree with rule verification", records.len());
    }
    Ok(())
}

pub fn eval_rm(cfg: RunConfig, dataset: &Path) -> Result<()> {
    let samples = read_dataset(&cfg, dataset)?;
    let ds: Box<dyn DsBackend> = match cfg.backend {
        BackendKind::Oracle => {
            let world = Arc::new(world_of(&cfg)?);
            Box::new(OracleDs::new(world).with_noise(cfg.backends.ds_noise.clone(), seed::derive(cfg.seed, &["ds"])))
        }
        BackendKind::Remote => Box::new(remote(&cfg)?),
    };
    let verdicts = judge_samples(ds.as_ref(), &samples)?;
    let rows = discrimination_accuracy("ds-rm", &decisions_of(&verdicts), &samples)?;
    let manifest_path = dataset_file(dataset)?.with_file_name("manifest.json");
    let manifest = if manifest_path.is_file() {
        Some(read_json::<serde_json::Value>(&manifest_path, SchemaMode::Lenient)?)
    } else {
        None
    };
    let doc = aggregate_report(rows, manifest)?;
    doc.write(&cfg.out)?;
    print(&doc.to_text())
}

fn reflux_tasks<'w>(world: &'w World, cfg: &RunConfig) -> Vec<&'w rms_core::domain::Trajectory> {
    let ecfg = EvolutionConfig { episodes_per_round: cfg.reflux.episodes, ..cfg.evolution.clone() };
    episodes_for(world, &ecfg, 0, cfg.seed)
}

pub fn reflux(cfg: RunConfig) -> Result<()> {
    let world = Arc::new(world_of(&cfg)?);
    let agent = ScriptedAgent { profile: cfg.reflux.agent, seed: seed::derive(cfg.seed, &["agent"]) };
    let tasks = reflux_tasks(&world, &cfg);
    let rules = cfg.synth.rules();
    let mut stores = RefluxStores::default();
    let reports = match cfg.backend {
        BackendKind::Oracle => {
            let ds = OracleDs::new(world.clone()).with_noise(cfg.backends.ds_noise.clone(), seed::derive(cfg.seed, &["ds"]));
            let gp = OracleGp::new(world.clone()).with_noise(cfg.backends.gp_noise, seed::derive(cfg.seed, &["gp"]));
            run_round(&agent, &ds, &gp, &world, &tasks, 0, rules, &mut stores)?
        }
        BackendKind::Remote => {
            let rm = remote(&cfg)?;
            run_round(&agent, &rm, &rm, &world, &tasks, 0, rules, &mut stores)?
        }
    };
    stores.write(&cfg.out)?;
    let summary = RefluxSummary::of(reports, &stores, &world);
    summary.write(&cfg.out.join("report.json"))?;
    print(&format!(
        "episodes: {}\nsteps: {}\nagent SR: {:.4}\nendorsed SR: {:.4}\nagent training records: {}\nRMS training records: {}\n",
        summary.episodes, summary.steps, summary.raw_sr, summary.step_sr, summary.agent_records, summary.rms_records
    ))
}

pub fn evolve(cfg: RunConfig) -> Result<()> {
    let problems = cfg.evolution.violations();
    if !problems.is_empty() {
        return Err(config_error(format!("evolution: {}", problems.join("; "))));
    }
    let world = Arc::new(world_of(&cfg)?);
    let bench_cfg = SynthConfig { total: cfg.evolution.benchmark_size, ..cfg.synth.clone() };
    let (benchmark, _) = synthesize(&world, &bench_cfg, seed::derive(cfg.seed, &["benchmark"]))
        .context("building the discrimination benchmark")?;
    let state = LearnerState::new(cfg.evolution.ds_noise.clone());
    let run = simulate_evolution(world, state, &cfg.evolution, &benchmark, cfg.seed)?;
    let report = EvolutionReport { seed: cfg.seed, config: cfg.evolution.clone(), rounds: run.reports };
    aggregate_report(report.rows(), None).context("evolution report failed its consistency check")?;
    report.write(&cfg.out)?;
    run.stores.write(&cfg.out)?;
    print(&report.to_text())
}

pub fn report(cfg: RunConfig, dir: Option<PathBuf>) -> Result<()> {
    let dir = dir.unwrap_or(cfg.out.clone());
    if !dir.is_dir() {
        return Err(config_error(format!("report: directory {} not found", dir.display())));
    }
    let mut rows: Vec<MetricRow> = Vec::new();
    let report_json = dir.join("report.json");
    if report_json.is_file() {
        let doc: serde_json::Value = read_json(&report_json, SchemaMode::Lenient)?;
        if let Some(r) = doc.get("rows") {
            rows.extend(serde_json::from_value::<Vec<MetricRow>>(r.clone()).context("report.json rows")?);
        }
    }
    let evolution_json = dir.join("evolution_report.json");
    if evolution_json.is_file() {
        let evo: EvolutionReport = read_json(&evolution_json, schema_mode(&cfg))?;
        rows.extend(evo.rows());
    }
    let doc = aggregate_report(rows, None)?;
    print(&doc.to_text())
}

pub fn serve_mock_rm(cfg: RunConfig, addr: Option<String>) -> Result<()> {
    let addr = addr.unwrap_or(cfg.server.addr.clone());
    let addr: SocketAddr = addr.parse().map_err(|e| config_error(format!("addr: `{addr}`: {e}")))?;
    let world = Arc::new(world_of(&cfg)?);
    let ds = OracleDs::new(world.clone()).with_noise(cfg.backends.ds_noise.clone(), seed::derive(cfg.seed, &["ds"]));
    let gp = OracleGp::new(world).with_noise(cfg.backends.gp_noise, seed::derive(cfg.seed, &["gp"]));
    let token = std::env::var(rms_core::backend::remote::TOKEN_ENV).ok().filter(|t| !t.is_empty());
    let server = MockServer::start(addr, ds, gp, MockServerConfig { token, capacity: cfg.server.capacity })
        .with_context(|| format!("binding {addr}"))?;
    print(&format!("listening on {}\n", server.base_url()))?;
    server.wait();
    Ok(())
}
