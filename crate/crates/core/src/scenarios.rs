//! Ready-made models used by the tests, the guide and `verify`.
//!
//! Every scenario is stable: its load `λ·E[batch size]·E[S]` is below 1.

use crate::jobmodel::{
    build_attained_service, build_known_service_time, build_multiclass_feedback, transform_slowdown_costs,
    BatchEntry, ClassSpec, JobChain, ServiceDist, Sojourn, Target,
};

/// A chain together with its batch arrival rate.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub chain: JobChain,
    pub batch_rate: f64,
    /// Order used by the static-priority baseline (highest first).
    pub priority_order: Vec<usize>,
}

impl Scenario {
    pub fn new(name: &str, chain: JobChain, batch_rate: f64) -> Self {
        let priority_order = (0..chain.len()).collect();
        Scenario {
            name: name.to_string(),
            chain,
            batch_rate,
            priority_order,
        }
    }

    pub fn load(&self) -> f64 {
        self.batch_rate * self.chain.mean_batch_size() * self.chain.mean_service().unwrap_or(f64::INFINITY)
    }
}

/// One preemptible state `a` with cost 2 and an Exponential(1) sojourn.
/// Its game has `V(a, r) = min(2r, 1)` and rank `0.5`.
pub fn two_state() -> JobChain {
    let mut b = JobChain::builder();
    let a = b.state("a", Sojourn::Exponential(1.0), true, 2.0);
    b.edge(a, Target::Done, 1.0).batch(1.0, [a]);
    b.build().expect("valid fixture")
}

/// M/M/1 with unit holding cost.
pub fn mm1(lambda: f64, mu: f64) -> Scenario {
    let mut b = JobChain::builder();
    let a = b.state("job", Sojourn::Exponential(mu), true, 1.0);
    b.edge(a, Target::Done, 1.0).batch(1.0, [a]);
    Scenario::new("mm1", b.build().expect("valid fixture"), lambda)
}

/// `(holding cost, completion rate)` of the three multiclass classes.
pub const CMU_CLASSES: [(f64, f64); 3] = [(1.0, 2.0), (3.0, 1.5), (2.0, 0.5)];

/// Three exponential classes, equally likely, no feedback. Load 0.7.
pub fn multiclass() -> Scenario {
    let classes: Vec<ClassSpec> = CMU_CLASSES
        .iter()
        .map(|&(c, mu)| ClassSpec {
            completion_rate: mu,
            holding_cost: c,
            feedback: vec![],
        })
        .collect();
    let chain = build_multiclass_feedback(&classes, &[1.0 / 3.0; 3]).expect("valid fixture");
    let rate = 0.7 / chain.mean_service().unwrap();
    Scenario::new("multiclass", chain, rate)
}

/// Known sizes uniform on `{0.25, 0.5, …, 2}`, unit costs. Load 0.8.
pub fn known_sizes() -> Scenario {
    let dist = ServiceDist::new((1..=8).map(|k| (0.25 * k as f64, 0.125))).expect("valid distribution");
    let chain = build_known_service_time(&dist, 0.25).expect("valid fixture");
    let rate = 0.8 / chain.mean_service().unwrap();
    Scenario::new("known_sizes", chain, rate)
}

/// Hyperexponential `0.8·Exp(2) + 0.2·Exp(0.25)` on a grid of step 0.25,
/// truncated at 40.
pub fn hyperexponential_dist() -> ServiceDist {
    let cdf = |x: f64| 1.0 - 0.8 * (-2.0 * x).exp() - 0.2 * (-0.25 * x).exp();
    ServiceDist::from_cdf(0.25, 160, cdf).expect("valid distribution")
}

/// Unknown hyperexponential sizes, unit costs: a job's state is its
/// attained service. Load 0.7.
pub fn hyperexponential() -> Scenario {
    let chain = build_attained_service(&hyperexponential_dist(), 0.25).expect("valid fixture");
    let rate = 0.7 / chain.mean_service().unwrap();
    Scenario::new("hyperexponential", chain, rate)
}

/// Hyperexponential sizes with holding cost `1/S`, i.e. mean slowdown.
pub fn slowdown() -> Scenario {
    let base = hyperexponential();
    let chain = transform_slowdown_costs(&base.chain).expect("acyclic deterministic chain");
    Scenario {
        name: "slowdown".into(),
        chain,
        ..base
    }
}

/// Multiclass classes arriving in correlated batches: class 1 jobs come in
/// pairs, classes 2 and 3 often arrive together. Load 0.7.
pub fn correlated_batches() -> Scenario {
    let base = multiclass().chain;
    let chain = base
        .with_batches(vec![
            BatchEntry {
                probability: 0.4,
                initial: vec![0, 0],
            },
            BatchEntry {
                probability: 0.35,
                initial: vec![1, 2],
            },
            BatchEntry {
                probability: 0.25,
                initial: vec![2],
            },
        ])
        .expect("valid batches");
    let per_batch = chain.mean_batch_size() * chain.mean_service().unwrap();
    Scenario::new("correlated_batches", chain, 0.7 / per_batch)
}

/// Three-stage job with a nonpreemptible middle stage:
/// `A` (preemptible, Exp(2), cost 1) → `B` (nonpreemptible, 0.5, cost 3) →
/// `C` (preemptible, Exp(1), cost 2) → done, or back to `A` w.p. 0.2.
/// A second class starts directly in `C`. Load 0.7.
pub fn klimov() -> Scenario {
    let mut b = JobChain::builder();
    let a = b.state("A", Sojourn::Exponential(2.0), true, 1.0);
    let m = b.state("B", Sojourn::Deterministic(0.5), false, 3.0);
    let c = b.state("C", Sojourn::Exponential(1.0), true, 2.0);
    b.edge(a, m, 1.0).edge(m, c, 1.0).edge(c, Target::Done, 0.8).edge(c, a, 0.2);
    b.batch(0.6, [a]).batch(0.4, [c]);
    let chain = b.build().expect("valid fixture");
    let rate = 0.7 / chain.mean_service().unwrap();
    Scenario::new("klimov", chain, rate)
}

/// Unknown sizes on `{0.25, 1, 3}` whose rank rises after the first
/// quarter (short jobs have left) and then falls as the remaining size
/// becomes certain. Load 0.75.
pub fn nonmonotone() -> Scenario {
    let dist = ServiceDist::new([(0.25, 0.5), (1.0, 0.3), (3.0, 0.2)]).expect("valid distribution");
    let chain = build_attained_service(&dist, 0.25).expect("valid fixture");
    let rate = 0.75 / chain.mean_service().unwrap();
    Scenario::new("nonmonotone", chain, rate)
}

/// Scenarios used in the policy comparison.
pub fn dominance_suite() -> Vec<Scenario> {
    vec![multiclass(), hyperexponential(), slowdown(), correlated_batches(), klimov()]
}

/// Look up a scenario by name.
pub fn by_name(name: &str) -> Option<Scenario> {
    Some(match name {
        "mm1" => mm1(0.6, 1.0),
        "multiclass" => multiclass(),
        "known_sizes" => known_sizes(),
        "hyperexponential" => hyperexponential(),
        "slowdown" => slowdown(),
        "correlated_batches" => correlated_batches(),
        "klimov" => klimov(),
        "nonmonotone" => nonmonotone(),
        _ => return None,
    })
}

pub const NAMES: [&str; 8] = [
    "mm1",
    "multiclass",
    "known_sizes",
    "hyperexponential",
    "slowdown",
    "correlated_batches",
    "klimov",
    "nonmonotone",
];
