//! Gittins scheduling for single-server queues whose jobs are finite
//! absorbing Markov chains, with batch Poisson arrivals, nonpreemptible
//! states and state-dependent holding costs.
//!
//! * [`jobmodel`]: job chains, example builders and the per-path cost transform.
//! * [`gittins`]: the Gittins game, ranks and closed-form indices.
//! * [`policies`]: Gittins and baseline schedulers.
//! * [`simengine`]: the discrete-event simulator.
//! * [`metrics`]: holding cost and r-work estimates and the identities they satisfy.
//! * [`experiment`]: replicated multi-policy runs and the dominance verdict.
//! * [`scenarios`]: ready-made models.
//!
//! ```
//! use gittins_sched::gittins::{compute_rank_table, RGrid};
//! use gittins_sched::jobmodel::{JobChain, Sojourn, Target};
//!
//! let mut b = JobChain::builder();
//! let a = b.state("a", Sojourn::Exponential(1.0), true, 2.0);
//! b.edge(a, Target::Done, 1.0).batch(1.0, [a]);
//! let chain = b.build().unwrap();
//! assert!(chain.validate().ok);
//!
//! let table = compute_rank_table(&chain, &RGrid::default(), 1e-10).unwrap();
//! assert!((table.rank(a) - 0.5).abs() < 1e-12);
//! ```

pub mod experiment;
pub mod gittins;
pub mod jobmodel;
mod linalg;
pub mod metrics;
pub mod policies;
pub mod scenarios;
pub mod simengine;
