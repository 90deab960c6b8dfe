//! Ground-truth backed evaluators with deterministic, content-keyed noise.
//!
//! Noise is decided by hashing the request: a verdict flips when the hash
//! falls below the rate of the request's pattern. Lowering a rate can
//! therefore only remove flips, never add new ones.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::codec::encode;
use crate::domain::{Action, ActionKind, FailureAxis, StepGroundTruth};
use crate::rules::{verify, EokGraph, RuleConfig, VerificationResult};
use crate::seed;
use crate::synth::{match_intention, repair_grounding, IntentMatch};
use crate::world::World;

use super::{ActionPreference, BackendError, DsBackend, DsInput, DsVerdict, GpBackend, GpInput, GpVerdict, Preference};

/// Failure axis of the proposed action crossed with its kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NoisePattern {
    pub axis: FailureAxis,
    pub kind: ActionKind,
}

impl fmt::Display for NoisePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.axis.as_str(), self.kind.as_str())
    }
}

impl FromStr for NoisePattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, k) = s.split_once(':').ok_or_else(|| format!("pattern `{s}` is not axis:kind"))?;
        let axis = [FailureAxis::Type, FailureAxis::Spatial, FailureAxis::Semantic, FailureAxis::Prerequisite, FailureAxis::None]
            .into_iter()
            .find(|x| x.as_str() == a)
            .ok_or_else(|| format!("unknown failure axis `{a}`"))?;
        let kind = ActionKind::ALL.into_iter().find(|x| x.as_str() == k).ok_or_else(|| format!("unknown action kind `{k}`"))?;
        Ok(NoisePattern { axis, kind })
    }
}

impl Serialize for NoisePattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NoisePattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-pattern error rates with a default for unlisted patterns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub default_rate: f64,
    #[serde(default)]
    pub rates: BTreeMap<NoisePattern, f64>,
}

impl NoiseSchedule {
    pub fn uniform(rate: f64) -> Self {
        Self { default_rate: rate, rates: BTreeMap::new() }
    }

    pub fn rate(&self, p: &NoisePattern) -> f64 {
        self.rates.get(p).copied().unwrap_or(self.default_rate)
    }

    /// Multiplies the rate of `p` by `(1 - factor)`.
    pub fn reduce(&mut self, p: NoisePattern, factor: f64) {
        let r = self.rate(&p) * (1.0 - factor);
        self.rates.insert(p, r);
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.default_rate) {
            out.push("default_rate: must be in [0,1]".to_string());
        }
        for (p, r) in &self.rates {
            if !(0.0..=1.0).contains(r) {
                out.push(format!("rates.{p}: must be in [0,1]"));
            }
        }
        out
    }
}

fn lookup<'w>(
    world: &'w World,
    input_ctx: &crate::domain::StepContext,
) -> Result<(&'w StepGroundTruth, Option<&'w EokGraph>), BackendError> {
    let id = &input_ctx.instruction.id;
    let step = world
        .step(id, input_ctx.step_index)
        .ok_or_else(|| BackendError::Data(format!("no ground truth for task {id} step {}", input_ctx.step_index)))?;
    if step.screen.screen_id != input_ctx.screen.screen_id {
        return Err(BackendError::Data(format!(
            "screen {} does not belong to task {id} step {}",
            input_ctx.screen.screen_id, input_ctx.step_index
        )));
    }
    Ok((&step.gt, world.eok_for(id)))
}

/// Domain-specific oracle: rule verification against the stored ground truth.
#[derive(Debug, Clone)]
pub struct OracleDs {
    pub world: Arc<World>,
    pub noise: NoiseSchedule,
    pub seed: u64,
    pub rules: RuleConfig,
    pub snap_radius: f64,
}

impl OracleDs {
    pub fn new(world: Arc<World>) -> Self {
        Self { world, noise: NoiseSchedule::default(), seed: 0, rules: RuleConfig::default(), snap_radius: 0.05 }
    }

    pub fn with_noise(mut self, noise: NoiseSchedule, seed: u64) -> Self {
        self.noise = noise;
        self.seed = seed;
        self
    }

    /// The rule verdict on the proposed action, before noise.
    pub fn truth(&self, input: &DsInput) -> Result<VerificationResult, BackendError> {
        let (gt, eok) = lookup(&self.world, &input.context)?;
        Ok(verify(&input.context, gt, &input.a_pred, eok, self.rules)?)
    }

    pub fn pattern(input: &DsInput, truth: &VerificationResult) -> NoisePattern {
        NoisePattern { axis: truth.failure_axis(), kind: input.a_pred.kind() }
    }

    /// Whether injected noise flips the verdict on `input`.
    pub fn flips(&self, input: &DsInput, truth: &VerificationResult) -> bool {
        let rate = self.noise.rate(&Self::pattern(input, truth));
        rate > 0.0 && seed::unit(self.seed, &["ds-noise", &encode(input)]) < rate
    }

    fn correction(&self, input: &DsInput, gt: &StepGroundTruth, eok: Option<&EokGraph>, axis: FailureAxis) -> Result<Option<(Action, String)>, BackendError> {
        let ctx = &input.context;
        let passes = |a: &Action| -> Result<bool, BackendError> { Ok(verify(ctx, gt, a, eok, self.rules)?.passed) };
        if input.a_pred.point().is_some()
            && match_intention(&input.a_pred, gt, &ctx.screen, self.snap_radius, self.rules) == IntentMatch::CorrectIntent
        {
            if let Ok(repaired) = repair_grounding(&input.a_pred, gt, &ctx.screen) {
                if passes(&repaired)? {
                    return Ok(Some((repaired, format!("grounding repaired; failed axis {}", axis.as_str()))));
                }
            }
        }
        if passes(&gt.a_gt)? {
            return Ok(Some((gt.a_gt.clone(), format!("intent override; failed axis {}", axis.as_str()))));
        }
        Ok(None)
    }
}

impl DsBackend for OracleDs {
    fn ds_evaluate(&self, input: &DsInput) -> Result<DsVerdict, BackendError> {
        let (gt, eok) = lookup(&self.world, &input.context)?;
        let truth = verify(&input.context, gt, &input.a_pred, eok, self.rules)?;
        let y_ds = truth.passed != self.flips(input, &truth);
        if y_ds {
            return Ok(DsVerdict { y_ds, r_ds: "all rules satisfied".to_string(), a_corr: None, r_corr: None });
        }
        let r_ds = if truth.reasons.is_empty() { "judged incorrect".to_string() } else { truth.reasons.join("; ") };
        let (a_corr, r_corr) = match self.correction(input, gt, eok, truth.failure_axis())? {
            Some((a, r)) => (Some(a), Some(r)),
            None => (None, None),
        };
        Ok(DsVerdict { y_ds, r_ds, a_corr, r_corr })
    }
}

/// General-purpose oracle: knows whether the DS decision and each candidate
/// are right, and prefers the candidate that is.
#[derive(Debug, Clone)]
pub struct OracleGp {
    pub world: Arc<World>,
    pub noise_rate: f64,
    pub seed: u64,
    pub rules: RuleConfig,
}

impl OracleGp {
    pub fn new(world: Arc<World>) -> Self {
        Self { world, noise_rate: 0.0, seed: 0, rules: RuleConfig::default() }
    }

    pub fn with_noise(mut self, rate: f64, seed: u64) -> Self {
        self.noise_rate = rate;
        self.seed = seed;
        self
    }

    fn noisy(&self, input: &GpInput, what: &str) -> bool {
        self.noise_rate > 0.0 && seed::unit(self.seed, &["gp-noise", what, &encode(input)]) < self.noise_rate
    }
}

impl GpBackend for OracleGp {
    fn gp_evaluate(&self, input: &GpInput) -> Result<GpVerdict, BackendError> {
        let (gt, eok) = lookup(&self.world, &input.context)?;
        let ctx = &input.context;
        let pred_ok = verify(ctx, gt, &input.a_pred, eok, self.rules)?.passed;
        let corr_ok = match &input.ds_verdict.a_corr {
            Some(a) => verify(ctx, gt, a, eok, self.rules)?.passed,
            None => false,
        };
        let y_gp = (input.ds_verdict.y_ds == pred_ok) != self.noisy(input, "endorse");
        let has_corr = input.ds_verdict.a_corr.is_some();
        let prefer_corr = has_corr && ((corr_ok && !pred_ok) != self.noisy(input, "prefer"));
        let (preference, endorsed, endorsed_ok) = if prefer_corr {
            (Preference::PreferCorr, input.ds_verdict.a_corr.as_ref().expect("has_corr"), corr_ok)
        } else {
            (Preference::PreferPred, &input.a_pred, pred_ok)
        };
        let e_gp = gt.terminal && matches!(endorsed, Action::Complete) && endorsed_ok;
        let summary = format!("intent: {}; endorse {}", ctx.instruction.text, endorsed.kind());
        Ok(GpVerdict { y_gp, e_gp, s_gp: ActionPreference { preference, summary } })
    }
}

/// Baseline that accepts or rejects each request by a fair coin keyed on the
/// request content.
#[derive(Debug, Clone, Copy)]
pub struct CoinFlipDs {
    pub seed: u64,
}

impl DsBackend for CoinFlipDs {
    fn ds_evaluate(&self, input: &DsInput) -> Result<DsVerdict, BackendError> {
        let y_ds = seed::unit(self.seed, &["coin", &encode(input)]) < 0.5;
        Ok(DsVerdict { y_ds, r_ds: "coin flip".to_string(), a_corr: None, r_corr: None })
    }
}
