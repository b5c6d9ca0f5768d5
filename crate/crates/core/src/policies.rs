//! Scheduling policies.
//!
//! A policy sees only the jobs currently present (their states, arrival
//! times and attained service) and precomputed per-state tables. It is
//! consulted at decision epochs, i.e. whenever the job in service is
//! preemptible or the server is idle.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gittins::RankTable;
use crate::jobmodel::JobChain;
use crate::simengine::{JobId, JobRecord, SystemState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyDecision {
    Serve(JobId),
    Idle,
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("unknown policy `{0}` (expected gittins | srpt | fcfs | las | priority | antigittins | random)")]
    Unknown(String),
    #[error("SRPT needs a model whose remaining service is determined by the state")]
    SrptNeedsKnownSizes,
    #[error("priority order must be a permutation of the {0} states")]
    BadPriorityOrder(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Gittins,
    Srpt,
    Fcfs,
    Las,
    Priority,
    AntiGittins,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Gittins,
        PolicyKind::Srpt,
        PolicyKind::Fcfs,
        PolicyKind::Las,
        PolicyKind::Priority,
        PolicyKind::AntiGittins,
        PolicyKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Gittins => "gittins",
            PolicyKind::Srpt => "srpt",
            PolicyKind::Fcfs => "fcfs",
            PolicyKind::Las => "las",
            PolicyKind::Priority => "priority",
            PolicyKind::AntiGittins => "antigittins",
            PolicyKind::Random => "random",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| PolicyError::Unknown(s.to_string()))
    }
}

/// Read-only inputs available to every policy.
pub struct PolicyContext<'a> {
    pub chain: &'a JobChain,
    pub table: &'a RankTable,
}

pub trait Policy: Send {
    fn kind(&self) -> PolicyKind;
    fn decide(&mut self, state: &SystemState, ctx: &PolicyContext<'_>) -> PolicyDecision;
}

/// Earliest arrival first, then lowest id.
fn arrival_order(a: &JobRecord, b: &JobRecord) -> Ordering {
    a.arrival_time
        .total_cmp(&b.arrival_time)
        .then(a.id.cmp(&b.id))
}

/// Job minimizing `key`, ties by arrival order.
fn argmin_by_key(state: &SystemState, key: impl Fn(&JobRecord) -> f64) -> PolicyDecision {
    state
        .jobs()
        .min_by(|a, b| key(a).total_cmp(&key(b)).then_with(|| arrival_order(a, b)))
        .map_or(PolicyDecision::Idle, |j| PolicyDecision::Serve(j.id))
}

/// Serve the job of minimal rank.
pub struct Gittins;

impl Policy for Gittins {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Gittins
    }

    fn decide(&mut self, state: &SystemState, ctx: &PolicyContext<'_>) -> PolicyDecision {
        argmin_by_key(state, |j| ctx.table.rank(j.state))
    }
}

/// Serve the job of maximal rank; a deliberately bad baseline.
pub struct AntiGittins;

impl Policy for AntiGittins {
    fn kind(&self) -> PolicyKind {
        PolicyKind::AntiGittins
    }

    fn decide(&mut self, state: &SystemState, ctx: &PolicyContext<'_>) -> PolicyDecision {
        argmin_by_key(state, |j| -ctx.table.rank(j.state))
    }
}

/// Shortest remaining processing time.
pub struct Srpt;

impl Policy for Srpt {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Srpt
    }

    fn decide(&mut self, state: &SystemState, ctx: &PolicyContext<'_>) -> PolicyDecision {
        argmin_by_key(state, |j| ctx.table.mean_service(j.state))
    }
}

/// First come first served. The job in service is always the earliest
/// arrival, so it is never preempted.
pub struct Fcfs;

impl Policy for Fcfs {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Fcfs
    }

    fn decide(&mut self, state: &SystemState, _ctx: &PolicyContext<'_>) -> PolicyDecision {
        argmin_by_key(state, |_| 0.0)
    }
}

/// Least attained service.
pub struct Las;

impl Policy for Las {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Las
    }

    fn decide(&mut self, state: &SystemState, _ctx: &PolicyContext<'_>) -> PolicyDecision {
        argmin_by_key(state, |j| j.attained)
    }
}

/// Fixed priority among states (classes); lower position wins.
pub struct StaticPriority {
    position: Vec<usize>,
}

impl StaticPriority {
    /// `order` lists every state from highest to lowest priority.
    pub fn new(order: &[usize], states: usize) -> Result<Self, PolicyError> {
        let mut position = vec![usize::MAX; states];
        for (pos, &x) in order.iter().enumerate() {
            if x >= states || position[x] != usize::MAX {
                return Err(PolicyError::BadPriorityOrder(states));
            }
            position[x] = pos;
        }
        if order.len() != states {
            return Err(PolicyError::BadPriorityOrder(states));
        }
        Ok(StaticPriority { position })
    }
}

impl Policy for StaticPriority {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Priority
    }

    fn decide(&mut self, state: &SystemState, _ctx: &PolicyContext<'_>) -> PolicyDecision {
        argmin_by_key(state, |j| self.position[j.state] as f64)
    }
}

/// Uniformly random job, from a policy-owned stream.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(rng: ChaCha8Rng) -> Self {
        RandomPolicy { rng }
    }
}

impl Policy for RandomPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Random
    }

    fn decide(&mut self, state: &SystemState, _ctx: &PolicyContext<'_>) -> PolicyDecision {
        let n = state.len();
        if n == 0 {
            return PolicyDecision::Idle;
        }
        let k = self.rng.random_range(0..n);
        state
            .jobs()
            .nth(k)
            .map_or(PolicyDecision::Idle, |j| PolicyDecision::Serve(j.id))
    }
}

/// Instantiate a policy. `priority_order` defaults to state index order;
/// `rng` is only used by [`RandomPolicy`].
pub fn make_policy(
    kind: PolicyKind,
    chain: &JobChain,
    priority_order: Option<&[usize]>,
    rng: ChaCha8Rng,
) -> Result<Box<dyn Policy>, PolicyError> {
    Ok(match kind {
        PolicyKind::Gittins => Box::new(Gittins),
        PolicyKind::AntiGittins => Box::new(AntiGittins),
        PolicyKind::Srpt => {
            if !chain.has_deterministic_paths() {
                return Err(PolicyError::SrptNeedsKnownSizes);
            }
            Box::new(Srpt)
        }
        PolicyKind::Fcfs => Box::new(Fcfs),
        PolicyKind::Las => Box::new(Las),
        PolicyKind::Priority => {
            let default: Vec<usize> = (0..chain.len()).collect();
            Box::new(StaticPriority::new(priority_order.unwrap_or(&default), chain.len())?)
        }
        PolicyKind::Random => Box::new(RandomPolicy::new(rng)),
    })
}
