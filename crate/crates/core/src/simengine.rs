//! Discrete-event simulation of a single-server queue with batch Poisson
//! arrivals and Markov-process jobs.
//!
//! Service is preempt-resume: a preempted job keeps its state and the
//! unfinished part of its current sojourn. Queued jobs never change state.
//! The policy is consulted after every event unless the job in service is
//! in a nonpreemptible state.
//!
//! Randomness comes from independent substreams of the master seed: one for
//! batch interarrival times, one for batch composition, one for the policy
//! and one per job (indexed by arrival order). Two runs with the same seed
//! and different policies therefore see the same arrivals and the same job
//! paths.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gittins::RankTable;
use crate::jobmodel::{sample_successor, JobChain};
use crate::metrics::{Accumulator, MetricsReport, Snapshot, CI_BATCHES};
use crate::policies::{Policy, PolicyContext, PolicyDecision};

pub type JobId = u64;

pub mod streams {
    pub const ARRIVALS: u64 = 1;
    pub const BATCHES: u64 = 2;
    pub const POLICY: u64 = 3;
    /// Job `k` uses stream `JOB_BASE + k`.
    pub const JOB_BASE: u64 = 1 << 32;
}

/// Independent random stream `stream` of master seed `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug)]
pub struct JobRecord {
    pub id: JobId,
    pub state: usize,
    pub arrival_time: f64,
    pub attained: f64,
    pub batch: u64,
    /// Unserved part of the current sojourn.
    residual: f64,
    rng: ChaCha8Rng,
}

#[derive(Clone, Debug, Default)]
pub struct SystemState {
    jobs: BTreeMap<JobId, JobRecord>,
    in_service: Option<JobId>,
    clock: f64,
    next_id: JobId,
}

impl SystemState {
    /// Jobs in arrival order.
    pub fn jobs(&self) -> impl Iterator<Item = &JobRecord> {
        self.jobs.values()
    }

    pub fn job(&self, id: JobId) -> Option<&JobRecord> {
        self.jobs.get(&id)
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn in_service(&self) -> Option<JobId> {
        self.in_service
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Add a job in state `state`. Its private stream is derived from its id.
    pub fn admit(&mut self, state: usize, arrival_time: f64, batch: u64) -> JobId {
        let rng = ChaCha8Rng::seed_from_u64(self.next_id);
        self.admit_with(state, arrival_time, batch, rng, 0.0)
    }

    fn admit_with(&mut self, state: usize, arrival_time: f64, batch: u64, rng: ChaCha8Rng, residual: f64) -> JobId {
        let id = self.next_id;
        self.next_id += 1;
        self.jobs.insert(
            id,
            JobRecord {
                id,
                state,
                arrival_time,
                attained: 0.0,
                batch,
                residual,
                rng,
            },
        );
        id
    }
}

// ---------------------------------------------------------------------------
// Event log

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    Transition,
    Completion,
    Recycle,
    Decision,
}

/// One log line. States are indices; `null` stands for `done` or for an
/// idle server.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub job: Option<JobId>,
    pub from: Option<usize>,
    pub to: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

pub trait EventSink {
    fn record(&mut self, event: &Event);

    fn enabled(&self) -> bool {
        true
    }
}

pub struct NullSink;

impl EventSink for NullSink {
    fn record(&mut self, _: &Event) {}

    fn enabled(&self) -> bool {
        false
    }
}

impl EventSink for Vec<Event> {
    fn record(&mut self, event: &Event) {
        self.push(event.clone());
    }
}

/// Newline-delimited JSON writer. The first IO error is kept and returned
/// by [`NdjsonSink::finish`].
pub struct NdjsonSink<W: Write> {
    out: W,
    error: Option<std::io::Error>,
}

impl<W: Write> NdjsonSink<W> {
    pub fn new(out: W) -> Self {
        NdjsonSink { out, error: None }
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        if let Some(e) = self.error {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> EventSink for NdjsonSink<W> {
    fn record(&mut self, event: &Event) {
        if self.error.is_some() {
            return;
        }
        let res = serde_json::to_writer(&mut self.out, event)
            .map_err(std::io::Error::from)
            .and_then(|_| self.out.write_all(b"\n"));
        if let Err(e) = res {
            self.error = Some(e);
        }
    }
}

/// SHA-256 of the NDJSON rendering of the log, without storing it.
#[derive(Default)]
pub struct DigestSink {
    hasher: Sha256,
    pub events: u64,
}

impl DigestSink {
    pub fn hex(self) -> String {
        self.hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

impl EventSink for DigestSink {
    fn record(&mut self, event: &Event) {
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        self.hasher.update(&line);
        self.events += 1;
    }
}

// ---------------------------------------------------------------------------
// Building blocks

/// Draw one batch from the chain's batch law.
pub fn generate_batch<R: Rng + ?Sized>(chain: &JobChain, rng: &mut R) -> Vec<usize> {
    let batches = chain.batches();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for b in batches {
        acc += b.probability;
        if u < acc {
            return b.initial.clone();
        }
    }
    batches.last().map(|b| b.initial.clone()).unwrap_or_default()
}

/// Grid indices `k` at which a transition `from → to` turns an `r`-bad job
/// (preemptible with rank ≥ r) into an `r`-good one. Completions
/// (`to = None`) never recycle.
pub fn detect_recycles(table: &RankTable, from: usize, to: Option<usize>) -> Vec<usize> {
    let Some(to) = to else { return Vec::new() };
    (0..table.r_grid().len())
        .filter(|&k| table.gives_up(from, k) && !table.gives_up(to, k))
        .collect()
}

// ---------------------------------------------------------------------------
// Runs

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("horizon {horizon} must exceed warmup {warmup}")]
    Horizon { horizon: f64, warmup: f64 },
    #[error("batch arrival rate {0} must be finite and nonnegative")]
    ArrivalRate(f64),
    #[error("initial state {0} is not a valid preemptible state")]
    InitialState(usize),
    #[error("rank table does not match the chain")]
    TableMismatch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// Rate of the batch Poisson process.
    pub batch_rate: f64,
    pub horizon: f64,
    /// Statistics ignore `[0, warmup)`.
    pub warmup: f64,
    pub seed: u64,
    /// Jobs present at time 0, by initial state.
    pub initial_jobs: Vec<usize>,
    pub ci_batches: usize,
}

impl SimConfig {
    pub fn new(batch_rate: f64, horizon: f64, seed: u64) -> Self {
        SimConfig {
            batch_rate,
            horizon,
            warmup: 0.1 * horizon,
            seed,
            initial_jobs: Vec::new(),
            ci_batches: CI_BATCHES,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventSummary {
    pub arrivals: u64,
    pub transitions: u64,
    pub completions: u64,
    pub recycles: u64,
    pub decisions: u64,
    /// Recycle events at which other jobs held positive preemptible r-work.
    pub recycles_with_rwork: u64,
    pub max_jobs: usize,
    /// Longest stretch with jobs present but the server idle.
    pub idle_with_jobs: f64,
}

impl EventSummary {
    /// Arrivals, transitions and completions.
    pub fn state_events(&self) -> u64 {
        self.arrivals + self.transitions + self.completions
    }
}

#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub report: MetricsReport,
    pub summary: EventSummary,
    /// Load `λ·E[S]`.
    pub load: f64,
    pub warnings: Vec<String>,
}

/// Running expected-form sums over the jobs present.
struct Totals {
    hp: f64,
    hnp: f64,
    wp: Vec<f64>,
    wnp: Vec<f64>,
    track_wnp: bool,
}

impl Totals {
    fn new(k: usize, track_wnp: bool) -> Self {
        Totals {
            hp: 0.0,
            hnp: 0.0,
            wp: vec![0.0; k],
            wnp: vec![0.0; if track_wnp { k } else { 0 }],
            track_wnp,
        }
    }

    fn apply(&mut self, chain: &JobChain, table: &RankTable, x: usize, sign: f64) {
        let row = table.serve_row(x);
        if chain.is_preemptible(x) {
            self.hp += sign * chain.holding_cost(x);
            for (w, t) in self.wp.iter_mut().zip(row) {
                *w += sign * t;
            }
        } else {
            self.hnp += sign * chain.holding_cost(x);
            if self.track_wnp {
                for (w, t) in self.wnp.iter_mut().zip(row) {
                    *w += sign * t;
                }
            }
        }
    }

    /// Clear accumulated rounding when the system empties.
    fn reset(&mut self) {
        self.hp = 0.0;
        self.hnp = 0.0;
        self.wp.iter_mut().for_each(|w| *w = 0.0);
        self.wnp.iter_mut().for_each(|w| *w = 0.0);
    }
}

pub fn run(
    chain: &JobChain,
    table: &RankTable,
    policy: &mut dyn Policy,
    config: &SimConfig,
    sink: &mut dyn EventSink,
) -> Result<SimOutcome, SimError> {
    if !(config.horizon > config.warmup && config.warmup >= 0.0 && config.horizon.is_finite()) {
        return Err(SimError::Horizon {
            horizon: config.horizon,
            warmup: config.warmup,
        });
    }
    if !(config.batch_rate >= 0.0 && config.batch_rate.is_finite()) {
        return Err(SimError::ArrivalRate(config.batch_rate));
    }
    if table.len() != chain.len() {
        return Err(SimError::TableMismatch);
    }
    if let Some(&x) = config
        .initial_jobs
        .iter()
        .find(|&&x| x >= chain.len() || !chain.is_preemptible(x))
    {
        return Err(SimError::InitialState(x));
    }

    let mut warnings = Vec::new();
    let load = config.batch_rate * chain.mean_batch_size() * chain.mean_service().unwrap_or(f64::INFINITY);
    let unstable = load >= 1.0;
    if unstable {
        warnings.push(format!(
            "load {load:.4} >= 1: the system is not stable and steady-state estimates are unreliable"
        ));
    }

    let grid_len = table.r_grid().len();
    let track_wnp = chain.has_nonpreemptible();
    let mut acc = Accumulator::new(config.warmup, config.horizon, config.ci_batches, grid_len, track_wnp);
    let mut totals = Totals::new(grid_len, track_wnp);
    let mut recycle_count = vec![0u64; grid_len];
    let mut summary = EventSummary::default();
    let ctx = PolicyContext { chain, table };
    let logging = sink.enabled();

    let mut arrivals_rng = substream(config.seed, streams::ARRIVALS);
    let mut batch_rng = substream(config.seed, streams::BATCHES);
    let interarrival = (config.batch_rate > 0.0).then(|| Exp::new(config.batch_rate).expect("positive rate"));
    let mut next_arrival = interarrival
        .as_ref()
        .map_or(f64::INFINITY, |e| e.sample(&mut arrivals_rng));

    let mut state = SystemState::default();
    let mut batch_id = 0u64;

    let admit = |state: &mut SystemState, totals: &mut Totals, x: usize, t: f64, batch: u64| -> JobId {
        let mut rng = substream(config.seed, streams::JOB_BASE + state.next_id);
        let residual = chain.sojourn(x).sample(&mut rng);
        totals.apply(chain, table, x, 1.0);
        state.admit_with(x, t, batch, rng, residual)
    };

    for &x in &config.initial_jobs {
        let id = admit(&mut state, &mut totals, x, 0.0, batch_id);
        summary.arrivals += 1;
        if logging {
            sink.record(&Event { t: 0.0, kind: EventKind::Arrival, job: Some(id), from: None, to: Some(x), r: None });
        }
    }
    if !config.initial_jobs.is_empty() {
        batch_id += 1;
    }
    decide(&mut state, policy, &ctx, sink, &mut summary);
    let mut idle_since: Option<f64> = None;

    loop {
        let service_end = state
            .in_service
            .map_or(f64::INFINITY, |id| state.clock + state.jobs[&id].residual);
        let t_next = service_end.min(next_arrival).min(config.horizon);
        acc.add_interval(
            state.clock,
            t_next,
            &Snapshot {
                hp: totals.hp,
                hnp: totals.hnp,
                n: state.len(),
                wp: &totals.wp,
                wnp: &totals.wnp,
            },
        );
        let dt = t_next - state.clock;
        if let Some(id) = state.in_service {
            let job = state.jobs.get_mut(&id).expect("job in service exists");
            job.attained += dt;
            job.residual -= dt;
        }
        state.clock = t_next;
        if t_next >= config.horizon {
            break;
        }

        if service_end <= next_arrival {
            let id = state.in_service.expect("service event without a job");
            let now = state.clock;
            let job = state.jobs.get_mut(&id).expect("job in service exists");
            job.residual = 0.0;
            let from = job.state;
            let to = sample_successor(chain, from, &mut job.rng);
            totals.apply(chain, table, from, -1.0);
            if to == chain.done() {
                let job = state.jobs.remove(&id).expect("job exists");
                state.in_service = None;
                summary.completions += 1;
                acc.record_response(now, now - job.arrival_time);
                if state.jobs.is_empty() {
                    totals.reset();
                }
                if logging {
                    sink.record(&Event { t: now, kind: EventKind::Completion, job: Some(id), from: Some(from), to: None, r: None });
                }
            } else {
                job.state = to;
                job.residual = chain.sojourn(to).sample(&mut job.rng);
                totals.apply(chain, table, to, 1.0);
                summary.transitions += 1;
                if logging {
                    sink.record(&Event { t: now, kind: EventKind::Transition, job: Some(id), from: Some(from), to: Some(to), r: None });
                }
                for k in detect_recycles(table, from, Some(to)) {
                    recycle_count[k] += 1;
                    summary.recycles += 1;
                    let others: f64 = state
                        .jobs()
                        .filter(|j| j.id != id && table.is_preemptible(j.state))
                        .map(|j| table.serve(j.state, k))
                        .sum();
                    if others != 0.0 {
                        summary.recycles_with_rwork += 1;
                    }
                    if logging {
                        sink.record(&Event {
                            t: now,
                            kind: EventKind::Recycle,
                            job: Some(id),
                            from: Some(from),
                            to: Some(to),
                            r: Some(table.r_grid()[k]),
                        });
                    }
                }
            }
        } else {
            let now = state.clock;
            acc.record_arrival_epoch(now, state.len());
            for x in generate_batch(chain, &mut batch_rng) {
                let id = admit(&mut state, &mut totals, x, now, batch_id);
                summary.arrivals += 1;
                if logging {
                    sink.record(&Event { t: now, kind: EventKind::Arrival, job: Some(id), from: None, to: Some(x), r: None });
                }
            }
            batch_id += 1;
            next_arrival = now
                + interarrival
                    .as_ref()
                    .map_or(f64::INFINITY, |e| e.sample(&mut arrivals_rng));
        }

        decide(&mut state, policy, &ctx, sink, &mut summary);
        summary.max_jobs = summary.max_jobs.max(state.len());
        match (state.in_service, state.is_empty(), idle_since) {
            (None, false, None) => idle_since = Some(state.clock),
            (Some(_), _, Some(since)) | (None, true, Some(since)) => {
                summary.idle_with_jobs = summary.idle_with_jobs.max(state.clock - since);
                idle_since = None;
            }
            _ => {}
        }
    }

    let job_rate = config.batch_rate * chain.mean_batch_size();
    let report = acc.finish(table.r_grid(), recycle_count, job_rate, unstable);
    Ok(SimOutcome {
        report,
        summary,
        load,
        warnings,
    })
}

fn decide(
    state: &mut SystemState,
    policy: &mut dyn Policy,
    ctx: &PolicyContext<'_>,
    sink: &mut dyn EventSink,
    summary: &mut EventSummary,
) {
    if let Some(id) = state.in_service {
        if !ctx.chain.is_preemptible(state.jobs[&id].state) {
            return;
        }
    }
    let chosen = match policy.decide(state, ctx) {
        PolicyDecision::Serve(id) => {
            assert!(state.jobs.contains_key(&id), "policy chose a job that is not present");
            Some(id)
        }
        PolicyDecision::Idle => None,
    };
    if chosen != state.in_service {
        state.in_service = chosen;
        summary.decisions += 1;
        if sink.enabled() {
            sink.record(&Event {
                t: state.clock,
                kind: EventKind::Decision,
                job: chosen,
                from: None,
                to: chosen.map(|id| state.jobs[&id].state),
                r: None,
            });
        }
    }
}
