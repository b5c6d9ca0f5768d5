//! Finite absorbing Markov job chains.
//!
//! A job is a walk through a finite set of states that ends in the absorbing
//! state `done`. Each non-done state carries a sojourn law, a successor
//! distribution, a preemptibility flag and a holding-cost rate. Jobs enter
//! the system in batches whose composition is drawn from an explicit finite
//! batch law.
//!
//! Internally states are numbered `0..n` and `done` is the index `n`.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Tolerance for probability rows and batch laws summing to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// The transient sub-kernel must have spectral radius below `1 - ABSORBING_MARGIN`.
pub const ABSORBING_MARGIN: f64 = 1e-10;
/// Reserved identifier of the absorbing state in model files.
pub const DONE_ID: &str = "done";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("state index {index} out of range (chain has {len} states)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("state {state}: {reason}")]
    BadState { state: String, reason: String },
    #[error("unknown state id `{0}`")]
    UnknownId(String),
    #[error("duplicate state id `{0}`")]
    DuplicateId(String),
    #[error("service distribution: {0}")]
    BadDistribution(String),
    #[error("support point {point} is not a multiple of grid step {step}")]
    OffGrid { point: f64, step: f64 },
    #[error("feedback row for class {class} has mass {mass} > 1")]
    FeedbackMass { class: usize, mass: f64 },
    #[error("model failed validation: {0}")]
    Invalid(ValidationReport),
    #[error("path-cost expectation not computable: {0}")]
    NotComputable(String),
    #[error("path cost depends on the past at state {0}: paths reaching it carry different attained service")]
    PastDependent(String),
}

/// Sojourn law of a state. `Exponential` holds the rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Sojourn {
    Deterministic(f64),
    Exponential(f64),
}

impl Sojourn {
    pub fn mean(&self) -> f64 {
        match *self {
            Sojourn::Deterministic(d) => d,
            Sojourn::Exponential(rate) => 1.0 / rate,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Sojourn::Deterministic(d) => d,
            Sojourn::Exponential(rate) => Exp::new(rate).expect("validated rate").sample(rng),
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            Sojourn::Deterministic(v) | Sojourn::Exponential(v) => v.is_finite() && v > 0.0,
        }
    }
}

/// Successor of a transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    State(usize),
    Done,
}

impl From<usize> for Target {
    fn from(i: usize) -> Self {
        Target::State(i)
    }
}

/// One entry of the batch law: with `probability`, a batch holding jobs in
/// the listed initial states arrives.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchEntry {
    pub probability: f64,
    pub initial: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobChain {
    labels: Vec<String>,
    sojourn: Vec<Sojourn>,
    /// Successor rows; index `len()` is `done`.
    kernel: Vec<Vec<(usize, f64)>>,
    preemptible: Vec<bool>,
    holding_cost: Vec<f64>,
    batches: Vec<BatchEntry>,
    /// Topological order of the transient states if the chain is acyclic.
    topo: Option<Vec<usize>>,
}

#[derive(Default)]
pub struct JobChainBuilder {
    labels: Vec<String>,
    sojourn: Vec<Sojourn>,
    kernel: Vec<Vec<(Target, f64)>>,
    preemptible: Vec<bool>,
    holding_cost: Vec<f64>,
    batches: Vec<BatchEntry>,
}

impl JobChainBuilder {
    pub fn state(
        &mut self,
        label: impl Into<String>,
        sojourn: Sojourn,
        preemptible: bool,
        holding_cost: f64,
    ) -> usize {
        self.labels.push(label.into());
        self.sojourn.push(sojourn);
        self.kernel.push(Vec::new());
        self.preemptible.push(preemptible);
        self.holding_cost.push(holding_cost);
        self.labels.len() - 1
    }

    pub fn edge(&mut self, from: usize, to: impl Into<Target>, p: f64) -> &mut Self {
        if let Some(row) = self.kernel.get_mut(from) {
            row.push((to.into(), p));
        } else {
            // Reported by `build`.
            self.kernel.resize(from + 1, Vec::new());
            self.kernel[from].push((to.into(), p));
        }
        self
    }

    pub fn batch(&mut self, probability: f64, initial: impl IntoIterator<Item = usize>) -> &mut Self {
        self.batches.push(BatchEntry {
            probability,
            initial: initial.into_iter().collect(),
        });
        self
    }

    /// Structural checks only (indices, finite numbers, positive sojourns).
    /// Probabilistic invariants are checked by [`validate`].
    pub fn build(self) -> Result<JobChain, ModelError> {
        let n = self.labels.len();
        if self.kernel.len() != n {
            return Err(ModelError::IndexOutOfRange {
                index: self.kernel.len() - 1,
                len: n,
            });
        }
        let mut kernel = Vec::with_capacity(n);
        for (x, row) in self.kernel.into_iter().enumerate() {
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (to, p) in row {
                let j = match to {
                    Target::State(j) if j < n => j,
                    Target::State(j) => return Err(ModelError::IndexOutOfRange { index: j, len: n }),
                    Target::Done => n,
                };
                if !p.is_finite() || p < 0.0 {
                    return Err(ModelError::BadState {
                        state: self.labels[x].clone(),
                        reason: format!("transition probability {p} is not a probability"),
                    });
                }
                if p == 0.0 {
                    continue;
                }
                match merged.iter_mut().find(|(k, _)| *k == j) {
                    Some(slot) => slot.1 += p,
                    None => merged.push((j, p)),
                }
            }
            kernel.push(merged);
        }
        for (x, s) in self.sojourn.iter().enumerate() {
            if !s.is_valid() {
                return Err(ModelError::BadState {
                    state: self.labels[x].clone(),
                    reason: format!("sojourn {s:?} must be finite and positive"),
                });
            }
            if !self.holding_cost[x].is_finite() {
                return Err(ModelError::BadState {
                    state: self.labels[x].clone(),
                    reason: "holding cost must be finite".into(),
                });
            }
        }
        for b in &self.batches {
            if let Some(&bad) = b.initial.iter().find(|&&i| i >= n) {
                return Err(ModelError::IndexOutOfRange { index: bad, len: n });
            }
        }
        let mut seen = HashMap::new();
        for l in &self.labels {
            if l == DONE_ID || seen.insert(l.as_str(), ()).is_some() {
                return Err(ModelError::DuplicateId(l.clone()));
            }
        }
        let topo = linalg::topological_order(n, &kernel);
        Ok(JobChain {
            labels: self.labels,
            sojourn: self.sojourn,
            kernel,
            preemptible: self.preemptible,
            holding_cost: self.holding_cost,
            batches: self.batches,
            topo,
        })
    }
}

impl JobChain {
    pub fn builder() -> JobChainBuilder {
        JobChainBuilder::default()
    }

    /// Number of non-done states.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Index of the absorbing state.
    pub fn done(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, x: usize) -> &str {
        &self.labels[x]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn sojourn(&self, x: usize) -> Sojourn {
        self.sojourn[x]
    }

    pub fn mean_sojourn(&self, x: usize) -> f64 {
        self.sojourn[x].mean()
    }

    /// Successors of `x` with their probabilities. Index `done()` is `done`.
    pub fn successors(&self, x: usize) -> &[(usize, f64)] {
        &self.kernel[x]
    }

    pub fn is_preemptible(&self, x: usize) -> bool {
        self.preemptible[x]
    }

    pub fn holding_cost(&self, x: usize) -> f64 {
        self.holding_cost[x]
    }

    pub fn holding_costs(&self) -> &[f64] {
        &self.holding_cost
    }

    pub fn batches(&self) -> &[BatchEntry] {
        &self.batches
    }

    pub fn preemptible_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&x| self.preemptible[x])
    }

    pub fn has_nonpreemptible(&self) -> bool {
        self.preemptible.iter().any(|p| !p)
    }

    /// Topological order of the transient states, present iff the transient
    /// graph is acyclic.
    pub fn topological_order(&self) -> Option<&[usize]> {
        self.topo.as_deref()
    }

    /// True when every state has a deterministic sojourn and a single successor,
    /// so that a job's remaining service is a function of its state.
    pub fn has_deterministic_paths(&self) -> bool {
        (0..self.len()).all(|x| {
            matches!(self.sojourn[x], Sojourn::Deterministic(_)) && self.kernel[x].len() == 1
        })
    }

    pub fn mean_batch_size(&self) -> f64 {
        self.batches
            .iter()
            .map(|b| b.probability * b.initial.len() as f64)
            .sum()
    }

    /// Marginal law of a uniformly chosen job's initial state (the
    /// length-biased pick from a batch).
    pub fn initial_state_law(&self) -> Vec<f64> {
        let mut law = vec![0.0; self.len()];
        for b in &self.batches {
            for &x in &b.initial {
                law[x] += b.probability;
            }
        }
        let mean = self.mean_batch_size();
        if mean > 0.0 {
            law.iter_mut().for_each(|v| *v /= mean);
        }
        law
    }

    /// Replace the batch law, keeping everything else.
    pub fn with_batches(mut self, batches: Vec<BatchEntry>) -> Result<Self, ModelError> {
        if let Some(&bad) = batches.iter().flat_map(|b| b.initial.iter()).find(|&&i| i >= self.len()) {
            return Err(ModelError::IndexOutOfRange { index: bad, len: self.len() });
        }
        self.batches = batches;
        Ok(self)
    }

    /// Copy with holding costs replaced; dynamics untouched.
    pub fn with_holding_costs(&self, costs: Vec<f64>) -> Self {
        assert_eq!(costs.len(), self.len());
        JobChain {
            holding_cost: costs,
            ..self.clone()
        }
    }

    /// Mean time to absorption from every state.
    pub fn mean_absorption_times(&self) -> Option<Vec<f64>> {
        let stop = vec![false; self.len()];
        let rhs: Vec<f64> = (0..self.len()).map(|x| self.mean_sojourn(x)).collect();
        linalg::solve_stopped(self, &stop, &[&rhs]).map(|mut v| v.swap_remove(0))
    }

    /// Mean service requirement of a job drawn from the initial-state law.
    pub fn mean_service(&self) -> Option<f64> {
        let t = self.mean_absorption_times()?;
        Some(self.initial_state_law().iter().zip(&t).map(|(p, t)| p * t).sum())
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    KernelRowSum { state: String, sum: f64 },
    NotAbsorbing { spectral_radius: f64 },
    NonpreemptibleInitial { state: String },
    NonpositiveHolding { state: String, cost: f64 },
    BatchLawSum { sum: f64 },
    EmptyBatch { entry: usize },
    NoStates,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::KernelRowSum { state, sum } => {
                write!(f, "kernel row of state {state} sums to {sum}")
            }
            Violation::NotAbsorbing { spectral_radius } => write!(
                f,
                "not absorbing: transient sub-kernel has spectral radius {spectral_radius}"
            ),
            Violation::NonpreemptibleInitial { state } => {
                write!(f, "initial state {state} is nonpreemptible")
            }
            Violation::NonpositiveHolding { state, cost } => {
                write!(f, "preemptible state {state} has holding cost {cost} <= 0")
            }
            Violation::BatchLawSum { sum } => write!(f, "batch law probabilities sum to {sum}"),
            Violation::EmptyBatch { entry } => write!(f, "batch entry {entry} is empty"),
            Violation::NoStates => write!(f, "chain has no states"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub ok: bool,
    /// Expected time to absorption per state; empty unless the chain is absorbing.
    pub mean_service_per_state: Vec<f64>,
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

pub fn validate(chain: &JobChain) -> ValidationReport {
    let mut violations = Vec::new();
    let n = chain.len();
    if n == 0 {
        violations.push(Violation::NoStates);
    }
    for x in 0..n {
        let sum: f64 = chain.kernel[x].iter().map(|&(_, p)| p).sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            violations.push(Violation::KernelRowSum {
                state: chain.labels[x].clone(),
                sum,
            });
        }
        if chain.preemptible[x] && chain.holding_cost[x] <= 0.0 {
            violations.push(Violation::NonpositiveHolding {
                state: chain.labels[x].clone(),
                cost: chain.holding_cost[x],
            });
        }
    }
    let batch_sum: f64 = chain.batches.iter().map(|b| b.probability).sum();
    if (batch_sum - 1.0).abs() > ROW_SUM_TOLERANCE
        || chain.batches.iter().any(|b| !(b.probability >= 0.0))
    {
        violations.push(Violation::BatchLawSum { sum: batch_sum });
    }
    for (i, b) in chain.batches.iter().enumerate() {
        if b.initial.is_empty() {
            violations.push(Violation::EmptyBatch { entry: i });
        }
        for &x in &b.initial {
            if !chain.preemptible[x] {
                let v = Violation::NonpreemptibleInitial {
                    state: chain.labels[x].clone(),
                };
                if !violations.contains(&v) {
                    violations.push(v);
                }
            }
        }
    }

    let mut mean_service_per_state = Vec::new();
    if n > 0 {
        let radius = linalg::transient_spectral_radius(chain);
        if radius >= 1.0 - ABSORBING_MARGIN {
            violations.push(Violation::NotAbsorbing {
                spectral_radius: radius,
            });
        } else if let Some(t) = chain.mean_absorption_times() {
            mean_service_per_state = t;
        } else {
            violations.push(Violation::NotAbsorbing {
                spectral_radius: radius,
            });
        }
    }
    ValidationReport {
        ok: violations.is_empty(),
        mean_service_per_state,
        violations,
    }
}

impl JobChain {
    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }

    /// Validate and convert failures into an error.
    pub fn ensure_valid(&self) -> Result<ValidationReport, ModelError> {
        let report = validate(self);
        if report.ok {
            Ok(report)
        } else {
            Err(ModelError::Invalid(report))
        }
    }
}

// ---------------------------------------------------------------------------
// Service-time distributions and builders

/// Finite discrete distribution over positive durations, sorted by value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceDist {
    points: Vec<(f64, f64)>,
}

impl ServiceDist {
    /// `points` are `(value, probability)` pairs; duplicates are merged.
    pub fn new(points: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, ModelError> {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for (v, p) in points {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::BadDistribution(format!("support point {v} must be positive")));
            }
            if !(p.is_finite() && p >= 0.0) {
                return Err(ModelError::BadDistribution(format!("probability {p} is invalid")));
            }
            if p > 0.0 {
                pts.push((v, p));
            }
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|later, earlier| {
            if later.0 == earlier.0 {
                earlier.1 += later.1;
                true
            } else {
                false
            }
        });
        let total: f64 = pts.iter().map(|p| p.1).sum();
        if pts.is_empty() || (total - 1.0).abs() > 1e-9 {
            return Err(ModelError::BadDistribution(format!("probabilities sum to {total}")));
        }
        Ok(ServiceDist { points: pts })
    }

    pub fn deterministic(value: f64) -> Result<Self, ModelError> {
        Self::new([(value, 1.0)])
    }

    /// Discretize a continuous CDF onto `levels` grid points `step, 2·step, …`:
    /// level `k` receives `F(k·step) − F((k−1)·step)` and the last level also
    /// absorbs the tail mass.
    pub fn from_cdf(step: f64, levels: usize, cdf: impl Fn(f64) -> f64) -> Result<Self, ModelError> {
        let mut pts = Vec::with_capacity(levels);
        let mut prev = 0.0;
        for k in 1..=levels {
            let cur = if k == levels { 1.0 } else { cdf(k as f64 * step) };
            pts.push((k as f64 * step, (cur - prev).max(0.0)));
            prev = cur;
        }
        Self::new(pts)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn mean(&self) -> f64 {
        self.points.iter().map(|(v, p)| v * p).sum()
    }

    pub fn max(&self) -> f64 {
        self.points.last().map(|p| p.0).unwrap_or(0.0)
    }

    pub fn tail(&self, x: f64) -> f64 {
        self.points.iter().filter(|(v, _)| *v > x).map(|p| p.1).sum()
    }

    fn grid_levels(&self, step: f64) -> Result<Vec<(usize, f64)>, ModelError> {
        if !(step.is_finite() && step > 0.0) {
            return Err(ModelError::BadDistribution(format!("grid step {step} must be positive")));
        }
        self.points
            .iter()
            .map(|&(v, p)| {
                let k = (v / step).round();
                if k < 1.0 || (v / step - k).abs() > 1e-9 * k.max(1.0) {
                    Err(ModelError::OffGrid { point: v, step })
                } else {
                    Ok((k as usize, p))
                }
            })
            .collect()
    }
}

fn fmt_level(v: f64) -> String {
    // Trim float noise in labels such as 0.30000000000000004.
    let s = format!("{:.9}", v);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Known service times: a job's state is its remaining service.
///
/// States are the levels `k·grid_step` for `k = 1..=max`, each served for
/// exactly one grid step before moving down a level; level 1 completes.
pub fn build_known_service_time(dist: &ServiceDist, grid_step: f64) -> Result<JobChain, ModelError> {
    let levels = dist.grid_levels(grid_step)?;
    let top = levels.iter().map(|l| l.0).max().unwrap_or(0);
    let mut b = JobChain::builder();
    for k in 1..=top {
        b.state(
            format!("rem={}", fmt_level(k as f64 * grid_step)),
            Sojourn::Deterministic(grid_step),
            true,
            1.0,
        );
    }
    for k in 1..=top {
        let x = k - 1;
        if k == 1 {
            b.edge(x, Target::Done, 1.0);
        } else {
            b.edge(x, x - 1, 1.0);
        }
    }
    for (k, p) in levels {
        b.batch(p, [k - 1]);
    }
    b.build()
}

/// Known service times where the state also records the original size, so
/// that per-path costs such as `1/size` are functions of the state.
/// State `(s, r)` has remaining service `r` out of a total `s`.
pub fn build_known_service_time_by_size(dist: &ServiceDist, grid_step: f64) -> Result<JobChain, ModelError> {
    let levels = dist.grid_levels(grid_step)?;
    let mut b = JobChain::builder();
    for &(k, p) in &levels {
        let size = k as f64 * grid_step;
        let first = b.labels.len();
        for rem in (1..=k).rev() {
            b.state(
                format!("size={},rem={}", fmt_level(size), fmt_level(rem as f64 * grid_step)),
                Sojourn::Deterministic(grid_step),
                true,
                1.0,
            );
        }
        for i in 0..k {
            let x = first + i;
            if i + 1 == k {
                b.edge(x, Target::Done, 1.0);
            } else {
                b.edge(x, x + 1, 1.0);
            }
        }
        b.batch(p, [first]);
    }
    b.build()
}

/// Unknown service times: a job's state is its attained service.
///
/// From level `x` the job completes within the next grid step with the
/// hazard `P(S ≤ x + step | S > x)`, and otherwise advances one level.
pub fn build_attained_service(dist: &ServiceDist, grid_step: f64) -> Result<JobChain, ModelError> {
    let levels = dist.grid_levels(grid_step)?;
    let top = levels.iter().map(|l| l.0).max().unwrap_or(0);
    let mut mass = vec![0.0; top + 1];
    for (k, p) in levels {
        mass[k] += p;
    }
    // survival[k] = P(S > k·step)
    let mut survival = vec![0.0; top + 1];
    for k in (0..top).rev() {
        survival[k] = survival[k + 1] + mass[k + 1];
    }
    let mut b = JobChain::builder();
    for k in 0..top {
        b.state(
            format!("att={}", fmt_level(k as f64 * grid_step)),
            Sojourn::Deterministic(grid_step),
            true,
            1.0,
        );
    }
    for k in 0..top {
        let hazard = if k + 1 == top {
            1.0
        } else {
            (mass[k + 1] / survival[k]).clamp(0.0, 1.0)
        };
        b.edge(k, Target::Done, hazard);
        if hazard < 1.0 {
            b.edge(k, k + 1, 1.0 - hazard);
        }
    }
    if top > 0 {
        b.batch(1.0, [0]);
    }
    b.build()
}

/// One job class of a multiclass (optionally feedback) exponential model.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    pub completion_rate: f64,
    pub holding_cost: f64,
    /// Probability of moving to each class on leaving; the residual mass exits.
    pub feedback: Vec<f64>,
}

/// Multiclass M/M/1 with Markovian feedback. `arrival_mix[i]` is the
/// probability that an arriving job belongs to class `i`.
pub fn build_multiclass_feedback(classes: &[ClassSpec], arrival_mix: &[f64]) -> Result<JobChain, ModelError> {
    let mut b = JobChain::builder();
    for (i, c) in classes.iter().enumerate() {
        if !(c.completion_rate > 0.0) {
            return Err(ModelError::BadState {
                state: format!("class{}", i + 1),
                reason: "completion rate must be positive".into(),
            });
        }
        b.state(format!("class{}", i + 1), Sojourn::Exponential(c.completion_rate), true, c.holding_cost);
    }
    for (i, c) in classes.iter().enumerate() {
        let mass: f64 = c.feedback.iter().sum();
        if mass > 1.0 + ROW_SUM_TOLERANCE || c.feedback.iter().any(|p| *p < 0.0) {
            return Err(ModelError::FeedbackMass { class: i, mass });
        }
        if c.feedback.len() > classes.len() {
            return Err(ModelError::IndexOutOfRange {
                index: c.feedback.len() - 1,
                len: classes.len(),
            });
        }
        for (j, &p) in c.feedback.iter().enumerate() {
            b.edge(i, j, p);
        }
        let exit = (1.0 - mass).max(0.0);
        b.edge(i, Target::Done, exit);
    }
    for (i, &p) in arrival_mix.iter().enumerate() {
        if p > 0.0 {
            b.batch(p, [i]);
        }
    }
    b.build()
}

// ---------------------------------------------------------------------------
// Unknown (per-path) holding costs

/// Replace holding costs by `E[rule(S) | job reached x]`, where `S` is the
/// job's total service time and `rule` maps it to a constant cost rate.
///
/// Exact computation requires deterministic sojourns on an acyclic chain and
/// that every path reaching a state has accumulated the same service, so
/// that `S` is attained-so-far plus a future that depends only on the state.
pub fn transform_path_costs(chain: &JobChain, rule: impl Fn(f64) -> f64) -> Result<JobChain, ModelError> {
    let topo = chain
        .topological_order()
        .ok_or_else(|| ModelError::NotComputable("chain has cycles".into()))?;
    let n = chain.len();
    let mut step = vec![0.0; n];
    for x in 0..n {
        match chain.sojourn(x) {
            Sojourn::Deterministic(d) => step[x] = d,
            Sojourn::Exponential(_) => {
                return Err(ModelError::NotComputable(format!(
                    "state {} has an exponential sojourn",
                    chain.label(x)
                )))
            }
        }
    }

    // Attained service on entry, propagated from the initial states.
    let mut attained: Vec<Option<f64>> = vec![None; n];
    for b in chain.batches() {
        for &x in &b.initial {
            attained[x] = Some(0.0);
        }
    }
    for &x in topo {
        let Some(a) = attained[x] else { continue };
        for &(y, _) in chain.successors(x) {
            if y == n {
                continue;
            }
            let next = a + step[x];
            match attained[y] {
                None => attained[y] = Some(next),
                Some(prev) if (prev - next).abs() > 1e-9 * next.max(1.0) => {
                    return Err(ModelError::PastDependent(chain.label(y).to_string()))
                }
                Some(_) => {}
            }
        }
    }

    // Law of the remaining service from each state, backwards.
    const MAX_SUPPORT: usize = 1 << 20;
    let mut future: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
    for &x in topo.iter().rev() {
        let mut law: Vec<(f64, f64)> = Vec::new();
        for &(y, p) in chain.successors(x) {
            if y == n {
                law.push((step[x], p));
            } else {
                law.extend(future[y].iter().map(|&(v, q)| (v + step[x], p * q)));
            }
        }
        law.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(law.len());
        for (v, q) in law {
            match merged.last_mut() {
                Some(last) if (last.0 - v).abs() <= 1e-9 * v.max(1.0) => last.1 += q,
                _ => merged.push((v, q)),
            }
        }
        if merged.len() > MAX_SUPPORT {
            return Err(ModelError::NotComputable("future service law too large".into()));
        }
        future[x] = merged;
    }

    let costs = (0..n)
        .map(|x| match attained[x] {
            Some(a) => future[x].iter().map(|&(v, q)| q * rule(a + v)).sum(),
            None => chain.holding_cost(x),
        })
        .collect();
    Ok(chain.with_holding_costs(costs))
}

/// Holding cost `1/S` per job, i.e. mean slowdown as the objective.
pub fn transform_slowdown_costs(chain: &JobChain) -> Result<JobChain, ModelError> {
    transform_path_costs(chain, |s| 1.0 / s)
}

// ---------------------------------------------------------------------------
// Sampling

/// Draw the `(state, sojourn)` sequence of one job from `start` until `done`.
pub fn sample_path<R: Rng + ?Sized>(chain: &JobChain, start: usize, rng: &mut R) -> Vec<(usize, f64)> {
    let mut path = Vec::new();
    let mut x = start;
    while x != chain.done() {
        path.push((x, chain.sojourn(x).sample(rng)));
        x = sample_successor(chain, x, rng);
    }
    path
}

pub(crate) fn sample_successor<R: Rng + ?Sized>(chain: &JobChain, x: usize, rng: &mut R) -> usize {
    let row = chain.successors(x);
    if row.len() == 1 {
        return row[0].0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(y, p) in row {
        acc += p;
        if u < acc {
            return y;
        }
    }
    row.last().map(|r| r.0).unwrap_or(chain.done())
}

// ---------------------------------------------------------------------------
// Model files

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub to: String,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub id: String,
    pub sojourn: Sojourn,
    pub kernel: Vec<EdgeRecord>,
    pub preemptible: bool,
    pub holding_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub p: f64,
    pub initial: Vec<String>,
}

/// JSON model description. `arrival_rate` is the batch arrival rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub states: Vec<StateRecord>,
    pub batches: Vec<BatchRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_rate: Option<f64>,
}

impl ModelFile {
    pub fn to_chain(&self) -> Result<JobChain, ModelError> {
        let mut ids = HashMap::new();
        for (i, s) in self.states.iter().enumerate() {
            if s.id == DONE_ID || ids.insert(s.id.as_str(), i).is_some() {
                return Err(ModelError::DuplicateId(s.id.clone()));
            }
        }
        let lookup = |id: &str| -> Result<Target, ModelError> {
            if id == DONE_ID {
                Ok(Target::Done)
            } else {
                ids.get(id)
                    .map(|&i| Target::State(i))
                    .ok_or_else(|| ModelError::UnknownId(id.to_string()))
            }
        };
        let mut b = JobChain::builder();
        for s in &self.states {
            b.state(s.id.clone(), s.sojourn, s.preemptible, s.holding_cost);
        }
        for (i, s) in self.states.iter().enumerate() {
            for e in &s.kernel {
                b.edge(i, lookup(&e.to)?, e.p);
            }
        }
        for batch in &self.batches {
            let initial = batch
                .initial
                .iter()
                .map(|id| match lookup(id)? {
                    Target::State(i) => Ok(i),
                    Target::Done => Err(ModelError::UnknownId(id.clone())),
                })
                .collect::<Result<Vec<_>, _>>()?;
            b.batch(batch.p, initial);
        }
        b.build()
    }

    pub fn from_chain(chain: &JobChain, arrival_rate: Option<f64>) -> Self {
        let id = |y: usize| {
            if y == chain.done() {
                DONE_ID.to_string()
            } else {
                chain.label(y).to_string()
            }
        };
        ModelFile {
            states: (0..chain.len())
                .map(|x| StateRecord {
                    id: chain.label(x).to_string(),
                    sojourn: chain.sojourn(x),
                    kernel: chain
                        .successors(x)
                        .iter()
                        .map(|&(y, p)| EdgeRecord { to: id(y), p })
                        .collect(),
                    preemptible: chain.is_preemptible(x),
                    holding_cost: chain.holding_cost(x),
                })
                .collect(),
            batches: chain
                .batches()
                .iter()
                .map(|b| BatchRecord {
                    p: b.probability,
                    initial: b.initial.iter().map(|&x| id(x)).collect(),
                })
                .collect(),
            arrival_rate,
        }
    }
}
