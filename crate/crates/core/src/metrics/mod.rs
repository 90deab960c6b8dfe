//! Action-match metrics, reward-model discrimination accuracy and report
//! rendering.
//!
//! Every cell is a count over samples. Rows for the ALL split are never
//! counted directly; they are derived from the IDD and OOD cells with
//! [`combine`], and [`aggregate_report`] re-derives them to enforce that.

pub mod report;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, DsBackend, DsInput, DsVerdict};
use crate::domain::{Action, Point, RewardSample, ScreenState, Split, Stratum};
use crate::pipeline::EpisodeReport;
use crate::rules::{check_type_alignment, normalize, AxisVerdict};
use crate::world::World;

pub use report::{aggregate_report, ReportDocument};

/// Fallback acceptance radius for point actions whose ground truth names no
/// valid region.
pub const EM_RADIUS: f64 = 0.04;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{verdicts} verdicts for {samples} samples")]
    LengthMismatch { verdicts: usize, samples: usize },
    #[error("inconsistent report: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SplitSel {
    #[serde(rename = "ALL")]
    All,
    #[serde(rename = "IDD")]
    Idd,
    #[serde(rename = "OOD")]
    Ood,
}

impl SplitSel {
    pub const ORDER: [SplitSel; 3] = [SplitSel::All, SplitSel::Idd, SplitSel::Ood];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitSel::All => "ALL",
            SplitSel::Idd => "IDD",
            SplitSel::Ood => "OOD",
        }
    }
}

impl From<Split> for SplitSel {
    fn from(s: Split) -> Self {
        match s {
            Split::Idd => SplitSel::Idd,
            Split::Ood => SplitSel::Ood,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "TM")]
    Tm,
    #[serde(rename = "EM")]
    Em,
    #[serde(rename = "StepSR")]
    StepSr,
    #[serde(rename = "DiscAcc")]
    DiscAcc,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Tm => "TM",
            Metric::Em => "EM",
            Metric::StepSr => "StepSR",
            Metric::DiscAcc => "DiscAcc",
        })
    }
}

/// One cell of a results table. `value` is a percentage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRow {
    pub label: String,
    pub split: SplitSel,
    pub stratum: Option<Stratum>,
    pub metric: Metric,
    pub value: f64,
    pub n: usize,
}

/// n-weighted mean of two cells. Absent cells have `n = 0`.
pub fn combine(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    let n = a.1 + b.1;
    if n == 0 {
        return (0.0, 0);
    }
    ((a.0 * a.1 as f64 + b.0 * b.1 as f64) / n as f64, n)
}

fn percent(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * hits as f64 / n as f64
    }
}

/// One split's value with its sample count.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Cell {
    pub value: f64,
    pub n: usize,
}

/// A metric on IDD, OOD and their n-weighted combination.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitCells {
    pub all: Cell,
    pub idd: Cell,
    pub ood: Cell,
}

impl SplitCells {
    /// Percentages from hit counts per split; ALL is derived with [`combine`].
    pub fn from_counts(idd: (usize, usize), ood: (usize, usize)) -> Self {
        let idd = (percent(idd.0, idd.1), idd.1);
        let ood = (percent(ood.0, ood.1), ood.1);
        let all = combine(idd, ood);
        let cell = |(value, n)| Cell { value, n };
        Self { all: cell(all), idd: cell(idd), ood: cell(ood) }
    }

    pub fn get(&self, split: SplitSel) -> Cell {
        match split {
            SplitSel::All => self.all,
            SplitSel::Idd => self.idd,
            SplitSel::Ood => self.ood,
        }
    }

    /// Rows for the non-empty cells.
    pub fn rows(&self, label: &str, metric: Metric, stratum: Option<Stratum>) -> Vec<MetricRow> {
        SplitSel::ORDER
            .into_iter()
            .map(|split| (split, self.get(split)))
            .filter(|(_, c)| c.n > 0)
            .map(|(split, c)| MetricRow { label: label.to_string(), split, stratum, metric, value: c.value, n: c.n })
            .collect()
    }
}

/// Hit counts keyed by (split, stratum); `None` stratum is the whole split.
#[derive(Debug, Clone, Default)]
pub struct Tally(BTreeMap<(Split, Option<Stratum>), (usize, usize)>);

impl Tally {
    pub fn add(&mut self, split: Split, stratum: Option<Stratum>, hit: bool) {
        let cell = self.0.entry((split, stratum)).or_default();
        cell.0 += usize::from(hit);
        cell.1 += 1;
    }

    pub fn cells(&self, stratum: Option<Stratum>) -> SplitCells {
        let count = |split| self.0.get(&(split, stratum)).copied().unwrap_or((0, 0));
        SplitCells::from_counts(count(Split::Idd), count(Split::Ood))
    }

    fn rows(&self, label: &str, metric: Metric, strata: &[Option<Stratum>]) -> Vec<MetricRow> {
        strata.iter().flat_map(|&s| self.cells(s).rows(label, metric, s)).collect()
    }
}

pub fn type_match(a_pred: &Action, a_gt: &Action) -> bool {
    check_type_alignment(a_pred, a_gt) == AxisVerdict::Pass
}

/// Type match plus every parameter. Point actions must land in a valid
/// region box, or within `radius` of the ground-truth point when the step
/// names no region.
pub fn exact_match(a_pred: &Action, a_gt: &Action, screen: &ScreenState, valid_regions: &[String], radius: f64) -> bool {
    if !type_match(a_pred, a_gt) {
        return false;
    }
    let text_eq = |a: &str, b: &str| normalize(a, false) == normalize(b, false);
    match (a_pred, a_gt) {
        (Action::Click { point: p }, Action::Click { point: g })
        | (Action::LongPress { point: p }, Action::LongPress { point: g }) => point_matches(p, g, screen, valid_regions, radius),
        (Action::InputText { text: p, .. }, Action::InputText { text: g, .. }) => text_eq(p, g),
        (Action::Swipe { direction: p, .. }, Action::Swipe { direction: g, .. }) => p == g,
        (Action::OpenApp { name: p }, Action::OpenApp { name: g }) => text_eq(p, g),
        _ => true,
    }
}

fn point_matches(p: &Point, g: &Point, screen: &ScreenState, valid_regions: &[String], radius: f64) -> bool {
    if valid_regions.is_empty() {
        return p.distance(g) <= radius;
    }
    valid_regions.iter().filter_map(|id| screen.element(id)).any(|e| e.bbox.contains(p))
}

/// Discrimination accuracy of `decisions` against the sample labels, by
/// split and stratum, plus an unstratified row per split.
pub fn discrimination_accuracy(label: &str, decisions: &[bool], samples: &[RewardSample]) -> Result<Vec<MetricRow>, MetricsError> {
    if decisions.len() != samples.len() {
        return Err(MetricsError::LengthMismatch { verdicts: decisions.len(), samples: samples.len() });
    }
    let mut tally = Tally::default();
    for (d, s) in decisions.iter().zip(samples) {
        let hit = *d == s.label;
        tally.add(s.split, Some(s.stratum), hit);
        tally.add(s.split, None, hit);
    }
    let strata = [None, Some(Stratum::Easy), Some(Stratum::Moderate), Some(Stratum::Hard)];
    Ok(tally.rows(label, Metric::DiscAcc, &strata))
}

/// Runs `ds` over every sample in parallel; verdicts come back in sample
/// order.
pub fn judge_samples(ds: &dyn DsBackend, samples: &[RewardSample]) -> Result<Vec<DsVerdict>, MetricsError> {
    samples
        .par_iter()
        .map(|s| ds.ds_evaluate(&DsInput { context: s.context.clone(), a_pred: s.candidate.clone() }))
        .collect::<Result<Vec<_>, _>>()
        .map_err(MetricsError::from)
}

/// Step success rate of the endorsed actions and TM / EM of the raw
/// proposals over a set of episodes.
pub fn episode_rows(label: &str, reports: &[EpisodeReport], world: &World) -> Vec<MetricRow> {
    let mut sr = Tally::default();
    let mut tm = Tally::default();
    let mut em = Tally::default();
    for r in reports {
        for o in &r.outcomes {
            sr.add(r.split, None, o.star_correct);
            if let Some(step) = world.step(&r.task_id, o.provenance.step) {
                let gt = &step.gt;
                tm.add(r.split, None, type_match(&o.a_pred, &gt.a_gt));
                em.add(r.split, None, exact_match(&o.a_pred, &gt.a_gt, &step.screen, &gt.valid_regions, EM_RADIUS));
            }
        }
    }
    let mut rows = sr.rows(label, Metric::StepSr, &[None]);
    rows.extend(tm.rows(label, Metric::Tm, &[None]));
    rows.extend(em.rows(label, Metric::Em, &[None]));
    rows
}

/// The accept/reject decision of each verdict.
pub fn decisions_of(verdicts: &[DsVerdict]) -> Vec<bool> {
    verdicts.iter().map(|v| v.y_ds).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CoinFlipDs, OracleDs};
    use crate::domain::{BBox, Role, SwipeDirection, UiElement};
    use crate::synth::{build_dataset, collect_sources, SynthConfig};
    use crate::world::{generate_world, WorldSpec};
    use std::sync::Arc;

    fn screen() -> ScreenState {
        ScreenState {
            screen_id: "s".into(),
            width_px: 1080,
            height_px: 2400,
            elements: vec![UiElement {
                element_id: "e1".into(),
                bbox: BBox::new(0.2, 0.2, 0.4, 0.3),
                role: Role::Button,
                text: Some("OK".into()),
                interactive: true,
            }],
        }
    }

    #[test]
    fn match_metrics_on_simple_pairs() {
        let s = screen();
        let click = |u, v| Action::Click { point: Point::new(u, v) };
        assert!(type_match(&click(0.1, 0.1), &click(0.3, 0.25)));
        assert!(!type_match(&Action::Wait, &Action::Back));
        assert!(exact_match(&click(0.2, 0.2), &click(0.3, 0.25), &s, &["e1".into()], EM_RADIUS));
        assert!(!exact_match(&click(0.5, 0.5), &click(0.3, 0.25), &s, &["e1".into()], EM_RADIUS));
        assert!(exact_match(&click(0.33, 0.25), &click(0.3, 0.25), &s, &[], EM_RADIUS));
        assert!(!exact_match(&click(0.35, 0.25), &click(0.3, 0.25), &s, &[], EM_RADIUS));
        let text = |t: &str| Action::InputText { text: t.into(), target: None };
        assert!(exact_match(&text(" Paris "), &text("paris"), &s, &[], EM_RADIUS));
        assert!(!exact_match(&text("Lyon"), &text("paris"), &s, &[], EM_RADIUS));
        let swipe = |d| Action::Swipe { direction: d, start: None };
        assert!(!exact_match(&swipe(SwipeDirection::Up), &swipe(SwipeDirection::Down), &s, &[], EM_RADIUS));
        assert!(exact_match(&Action::Back, &Action::Back, &s, &[], EM_RADIUS));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(discrimination_accuracy("x", &[true], &[]), Err(MetricsError::LengthMismatch { .. })));
    }

    fn dataset() -> (Arc<crate::world::World>, Vec<RewardSample>) {
        let w = Arc::new(generate_world(&WorldSpec { seed: 41, n_apps: 10, n_tasks_per_app: 12, ..WorldSpec::default() }).unwrap());
        let cfg = SynthConfig { total: 600, ..SynthConfig::default() };
        let pools = collect_sources(&w, &w.catalog, &cfg, 5).unwrap();
        let (samples, _) = build_dataset(&pools, cfg.total, &cfg.tier_weights, 5).unwrap();
        (w, samples)
    }

    #[test]
    fn oracle_closes_the_loop_and_coin_flip_is_chance() {
        let (w, samples) = dataset();
        let oracle = decisions_of(&judge_samples(&OracleDs::new(w.clone()), &samples).unwrap());
        let rows = discrimination_accuracy("oracle", &oracle, &samples).unwrap();
        assert_eq!(rows.len(), 12);
        assert!(rows.iter().all(|r| r.value == 100.0), "{rows:?}");

        let coin = decisions_of(&judge_samples(&CoinFlipDs { seed: 8 }, &samples).unwrap());
        for r in discrimination_accuracy("coin", &coin, &samples).unwrap() {
            // Four standard errors of a fair coin.
            let bound = 4.0 * 50.0 / (r.n as f64).sqrt();
            assert!((r.value - 50.0).abs() <= bound, "{r:?}");
        }
        aggregate_report(rows, None).unwrap();
    }
}
