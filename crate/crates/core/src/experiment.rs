//! Replicated runs of several policies on one scenario, with common random
//! numbers, and the Gittins-dominance verdict.

use rayon::prelude::*;
use thiserror::Error;

use crate::gittins::RankTable;
use crate::jobmodel::JobChain;
use crate::metrics::{MetricsError, MetricsReport};
use crate::policies::{make_policy, PolicyError, PolicyKind};
use crate::simengine::{run, streams, substream, EventSink, SimConfig, SimError, SimOutcome};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no seeds given")]
    NoSeeds,
}

/// Horizon, warmup and seeds shared by every policy of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct RunPlan {
    pub batch_rate: f64,
    pub horizon: f64,
    pub warmup: f64,
    pub seeds: Vec<u64>,
}

impl RunPlan {
    pub fn config(&self, seed: u64) -> SimConfig {
        SimConfig {
            warmup: self.warmup,
            ..SimConfig::new(self.batch_rate, self.horizon, seed)
        }
    }
}

/// One run of `kind` with seed `config.seed`.
pub fn run_policy(
    chain: &JobChain,
    table: &RankTable,
    kind: PolicyKind,
    priority_order: Option<&[usize]>,
    config: &SimConfig,
    sink: &mut dyn EventSink,
) -> Result<SimOutcome, ExperimentError> {
    let mut policy = make_policy(kind, chain, priority_order, substream(config.seed, streams::POLICY))?;
    Ok(run(chain, table, policy.as_mut(), config, sink)?)
}

#[derive(Clone, Debug)]
pub struct PolicyResult {
    pub kind: PolicyKind,
    /// One outcome per seed, in plan order.
    pub runs: Vec<SimOutcome>,
    /// All seeds pooled.
    pub pooled: MetricsReport,
}

/// Run every policy under every seed (in parallel), pooling seeds per policy.
pub fn replicate(
    chain: &JobChain,
    table: &RankTable,
    kinds: &[PolicyKind],
    priority_order: Option<&[usize]>,
    plan: &RunPlan,
) -> Result<Vec<PolicyResult>, ExperimentError> {
    if plan.seeds.is_empty() {
        return Err(ExperimentError::NoSeeds);
    }
    let jobs: Vec<(PolicyKind, u64)> = kinds
        .iter()
        .flat_map(|&k| plan.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(kind, seed)| {
            run_policy(chain, table, kind, priority_order, &plan.config(seed), &mut crate::simengine::NullSink)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut outcomes = outcomes.into_iter();
    kinds
        .iter()
        .map(|&kind| {
            let runs: Vec<SimOutcome> = outcomes.by_ref().take(plan.seeds.len()).collect();
            let reports: Vec<MetricsReport> = runs.iter().map(|o| o.report.clone()).collect();
            Ok(PolicyResult {
                kind,
                pooled: MetricsReport::merge(&reports)?,
                runs,
            })
        })
        .collect()
}

/// Where Gittins's point estimate exceeds another policy's upper 95% bound.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DominanceVerdict {
    /// Policies whose `E[H]` upper bound lies below Gittins's `E[H]`.
    pub holding: Vec<PolicyKind>,
    /// `(policy, r)` where the same happens for `E[W(r)]`.
    pub rwork: Vec<(PolicyKind, f64)>,
}

impl DominanceVerdict {
    pub fn pass(&self) -> bool {
        self.holding.is_empty() && self.rwork.is_empty()
    }
}

/// `None` when the results contain no Gittins run.
pub fn dominance(results: &[PolicyResult]) -> Option<DominanceVerdict> {
    let g = results.iter().find(|r| r.kind == PolicyKind::Gittins)?;
    let gw = g.pooled.w_curve();
    let mut verdict = DominanceVerdict::default();
    for other in results.iter().filter(|r| r.kind != PolicyKind::Gittins) {
        if g.pooled.mean_h.mean > other.pooled.mean_h.upper() {
            verdict.holding.push(other.kind);
        }
        for ((k, w), &r) in other.pooled.w_curve().iter().enumerate().zip(&g.pooled.r_grid) {
            // Relative slack of 1e-12 absorbs rounding where both curves are
            // the same deterministic quantity (e.g. zero).
            if gw[k].mean > w.upper() + 1e-12 * w.mean.abs().max(1.0) {
                verdict.rwork.push((other.kind, r));
            }
        }
    }
    Some(verdict)
}
