//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! Run a subset with `cargo test --test acceptance -- 3 7`.

mod common;

use std::time::{Duration, Instant};

use gittins_sched::experiment::{dominance, replicate, run_policy, PolicyResult, RunPlan};
use gittins_sched::gittins::{compute_rank_table, log_grid, solve_game, RGrid};
use gittins_sched::jobmodel::JobChain;
use gittins_sched::metrics::{analytic_nonpreemptible_cost, invariance_checks, little_law_check};
use gittins_sched::policies::PolicyKind;
use gittins_sched::scenarios::{self, CMU_CLASSES};
use gittins_sched::simengine::{DigestSink, NullSink, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{brute_force_rank, random_chain, rel_diff};

const TOLERANCE: f64 = 1e-10;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Criterion 1: on known sizes, Gittins and SRPT produce the same log.
fn srpt_reduction() -> Verdict {
    let start = Instant::now();
    let s = scenarios::known_sizes();
    let table = compute_rank_table(&s.chain, &RGrid::default(), TOLERANCE).unwrap();
    let mut config = SimConfig::new(s.batch_rate, 40_000.0, 2024);
    config.warmup = 0.0;
    let mut digests = Vec::new();
    for kind in [PolicyKind::Gittins, PolicyKind::Srpt] {
        let mut sink = DigestSink::default();
        run_policy(&s.chain, &table, kind, None, &config, &mut sink).unwrap();
        digests.push((sink.events, sink.hex()));
    }
    let elapsed = start.elapsed();
    let (events, ref g) = digests[0];
    let same = digests[0] == digests[1];
    verdict(
        same && events >= 100_000 && elapsed <= Duration::from_secs(30),
        format!("{events} events, identical logs: {same}, sha256 {}…, {elapsed:.1?}", &g[..16]),
    )
}

/// Criterion 2: indices of exponential classes equal c·μ.
fn cmu_indices() -> Verdict {
    let chain = scenarios::multiclass().chain;
    let table = compute_rank_table(&chain, &RGrid::default(), TOLERANCE).unwrap();
    let worst = CMU_CLASSES
        .iter()
        .enumerate()
        .map(|(i, &(c, mu))| rel_diff(table.index(i), c * mu))
        .fold(0.0, f64::max);
    verdict(worst <= 1e-9, format!("max relative error {worst:.2e}"))
}

/// Criterion 3: the two-state game in closed form.
fn two_state_game() -> Verdict {
    let chain = scenarios::two_state();
    let table = compute_rank_table(&chain, &RGrid::default(), TOLERANCE).unwrap();
    let rank_err = (table.rank(0) - 0.5).abs();
    let mut value_err: f64 = 0.0;
    let mut set_ok = true;
    for r in log_grid(1e-3, 1e3, 400).unwrap().into_iter().chain([0.5, 0.5 - 1e-9, 0.5 + 1e-9]) {
        let sol = solve_game(&chain, r).unwrap();
        value_err = value_err.max((sol.cost_to_go[0] - (2.0 * r).min(1.0)).abs());
        set_ok &= sol.give_up[0] == (r <= 0.5);
    }
    verdict(
        rank_err <= 1e-10 && value_err <= 1e-10 && set_ok,
        format!("rank error {rank_err:.1e}, V error {value_err:.1e}, Y*(r) correct: {set_ok}"),
    )
}

/// Criterion 4: bisection ranks against exhaustive give-up-set enumeration.
fn brute_force_ranks() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut states = 0;
    for i in 0..100 {
        let pre = 1 + i % 8;
        let np = i % 3;
        let chain = random_chain(&mut rng, pre, np);
        let table = compute_rank_table(&chain, &RGrid::Auto { points: 8 }, TOLERANCE).unwrap();
        for x in 0..chain.len() {
            worst = worst.max(rel_diff(table.rank(x), brute_force_rank(&chain, x)));
            states += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-8 && elapsed <= Duration::from_secs(120),
        format!("{states} states in 100 chains, max relative error {worst:.2e}, {elapsed:.1?}"),
    )
}

/// Criterion 5: V(x, ·) is nondecreasing and concave with slope h(x, Y*(r)).
fn cost_to_go_shape() -> Verdict {
    let mut chains: Vec<(String, JobChain)> = scenarios::NAMES
        .iter()
        .map(|n| (n.to_string(), scenarios::by_name(n).unwrap().chain))
        .collect();
    chains.push(("two_state".into(), scenarios::two_state()));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..10 {
        chains.push((format!("random{i}"), random_chain(&mut rng, 1 + i % 8, i % 3)));
    }
    let (mut monotone, mut concave, mut slope, mut checked) = (0.0f64, 0.0f64, 0.0f64, 0);
    for (_, chain) in &chains {
        let table = compute_rank_table(chain, &RGrid::default(), TOLERANCE).unwrap();
        let grid = table.r_grid().to_vec();
        let sols: Vec<_> = grid.iter().map(|&r| solve_game(chain, r).unwrap()).collect();
        for x in 0..chain.len() {
            let v: Vec<f64> = sols.iter().map(|s| s.cost_to_go[x]).collect();
            let q: Vec<f64> = (1..grid.len()).map(|k| (v[k] - v[k - 1]) / (grid[k] - grid[k - 1])).collect();
            for k in 1..v.len() {
                monotone = monotone.max(v[k - 1] - v[k]);
            }
            for k in 1..q.len() {
                concave = concave.max(q[k] - q[k - 1]);
            }
        }
        // Central differences where Y*(r) is locally constant.
        for (k, &r) in grid.iter().enumerate() {
            let d = 1e-3 * r;
            let lo = solve_game(chain, r - d).unwrap();
            let hi = solve_game(chain, r + d).unwrap();
            if lo.give_up != sols[k].give_up || hi.give_up != sols[k].give_up {
                continue;
            }
            for x in 0..chain.len() {
                let fd = (hi.cost_to_go[x] - lo.cost_to_go[x]) / (2.0 * d);
                slope = slope.max(rel_diff(fd, sols[k].hold_moment[x]));
                checked += 1;
            }
        }
    }
    verdict(
        monotone <= 1e-9 && concave <= 1e-9 && slope <= 1e-6,
        format!(
            "{} chains: monotonicity violation {monotone:.1e}, concavity violation {concave:.1e}, \
             derivative error {slope:.1e} over {checked} points",
            chains.len()
        ),
    )
}

/// Criterion 6: ∫ E[W_P(r)]/r² dr = E[H_P] under Gittins and FCFS.
fn integral_identity() -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for s in [scenarios::mm1(0.6, 1.0), scenarios::hyperexponential()] {
        let start = Instant::now();
        let table = compute_rank_table(&s.chain, &RGrid::Auto { points: 200 }, TOLERANCE).unwrap();
        let plan = RunPlan {
            batch_rate: s.batch_rate,
            horizon: 1e6,
            warmup: 5e4,
            seeds: vec![6],
        };
        let res = replicate(&s.chain, &table, &[PolicyKind::Gittins, PolicyKind::Fcfs], None, &plan).unwrap();
        let elapsed = start.elapsed();
        pass &= elapsed <= Duration::from_secs(300);
        for r in &res {
            let e = r.pooled.rel_err_integral;
            pass &= e <= 0.05;
            lines.push(format!("{}/{} {:.2}%", s.name, r.kind, 100.0 * e));
        }
    }
    verdict(pass, format!("relative errors: {}", lines.join(", ")))
}

/// Criterion 7: recycling under Gittins happens only with zero other
/// preemptible r-work.
fn recycle_at_zero() -> Verdict {
    let s = scenarios::nonmonotone();
    let table = compute_rank_table(&s.chain, &RGrid::default(), TOLERANCE).unwrap();
    let ranks = table.ranks();
    let rises = ranks.windows(2).any(|w| w[1] > w[0]);
    let falls = ranks.windows(2).any(|w| w[1] < w[0]);
    let mut config = SimConfig::new(s.batch_rate, 50_000.0, 7);
    config.warmup = 0.0;
    let out = run_policy(&s.chain, &table, PolicyKind::Gittins, None, &config, &mut NullSink).unwrap();
    let sum = &out.summary;
    verdict(
        rises && falls && sum.recycles > 0 && sum.recycles_with_rwork == 0 && sum.state_events() >= 100_000,
        format!(
            "{} events, {} recycle events, {} with other preemptible r-work; ranks rise and fall: {}",
            sum.state_events(),
            sum.recycles,
            sum.recycles_with_rwork,
            rises && falls
        ),
    )
}

const ZOO: [PolicyKind; 6] = [
    PolicyKind::Gittins,
    PolicyKind::Fcfs,
    PolicyKind::Las,
    PolicyKind::Priority,
    PolicyKind::AntiGittins,
    PolicyKind::Random,
];

/// Criterion 8: Gittins minimizes E[H] and E[W(r)] across the policy zoo.
/// Returns the Klimov results for criterion 9.
fn optimality_dominance() -> (Verdict, Option<(f64, JobChain, Vec<PolicyResult>)>) {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    let mut klimov = None;
    for s in scenarios::dominance_suite() {
        let table = compute_rank_table(&s.chain, &RGrid::default(), TOLERANCE).unwrap();
        let plan = RunPlan {
            batch_rate: s.batch_rate,
            horizon: 1e6,
            warmup: 5e4,
            seeds: vec![81, 82, 83, 84, 85],
        };
        let res = replicate(&s.chain, &table, &ZOO, Some(&s.priority_order), &plan).unwrap();
        let v = dominance(&res).unwrap();
        pass &= v.pass();
        let g = res[0].pooled.mean_h.mean;
        let best_other = res[1..]
            .iter()
            .map(|r| (r.pooled.mean_h.mean, r.kind))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap();
        lines.push(format!(
            "{}: E[H] gittins {g:.4} vs best other {} {:.4}{}",
            s.name,
            best_other.1,
            best_other.0,
            if v.pass() {
                String::new()
            } else {
                format!(" [violations: H {:?}, W(r) {}]", v.holding, v.rwork.len())
            }
        ));
        if s.name == "klimov" {
            klimov = Some((s.batch_rate, s.chain.clone(), res));
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed <= Duration::from_secs(1200);
    (verdict(pass, format!("{}; {elapsed:.1?}", lines.join("; "))), klimov)
}

/// Criterion 9: nonpreemptible cost and r-work do not depend on the policy.
fn invariance(klimov: Option<(f64, JobChain, Vec<PolicyResult>)>) -> Verdict {
    let (rate, chain, res) = match klimov {
        Some(k) => k,
        None => {
            let s = scenarios::klimov();
            let table = compute_rank_table(&s.chain, &RGrid::default(), TOLERANCE).unwrap();
            let plan = RunPlan {
                batch_rate: s.batch_rate,
                horizon: 1e6,
                warmup: 5e4,
                seeds: vec![81, 82, 83, 84, 85],
            };
            let res = replicate(&s.chain, &table, &ZOO, Some(&s.priority_order), &plan).unwrap();
            (s.batch_rate, s.chain, res)
        }
    };
    let named: Vec<(&str, &_)> = res.iter().map(|r| (r.kind.name(), &r.pooled)).collect();
    let report = invariance_checks(&named).unwrap();
    let analytic = analytic_nonpreemptible_cost(&chain, rate);
    let worst = res
        .iter()
        .map(|r| rel_diff(r.pooled.mean_hnp.mean, analytic))
        .fold(0.0, f64::max);
    verdict(
        report.ok() && worst <= 0.03,
        format!(
            "E[H_NP] analytic {analytic:.4}, max deviation {:.2}%, CI conflicts: H_NP {}, W_NP {}",
            100.0 * worst,
            report.hnp_conflicts.len(),
            report.wnp_conflicts.len()
        ),
    )
}

/// Criterion 10: M/M/1 FCFS at load 0.5 and Little's law.
fn mm1_closed_form() -> Verdict {
    let s = scenarios::mm1(0.5, 1.0);
    let table = compute_rank_table(&s.chain, &RGrid::default(), TOLERANCE).unwrap();
    let plan = RunPlan {
        batch_rate: s.batch_rate,
        horizon: 1e6,
        warmup: 5e4,
        seeds: vec![101, 102, 103, 104, 105],
    };
    let res = replicate(&s.chain, &table, &[PolicyKind::Fcfs, PolicyKind::Gittins], None, &plan).unwrap();
    let n = &res[0].pooled.mean_n;
    let n_ok = (n.mean - 1.0).abs() <= 3.0 * n.std_err();
    let mut little_ok = true;
    let mut worst: f64 = 0.0;
    for r in res.iter().flat_map(|r| &r.runs) {
        let c = little_law_check(&r.report).expect("stable run with arrivals");
        little_ok &= c.within(3.0);
        worst = worst.max(c.rel_err / c.std_err);
    }
    verdict(
        n_ok && little_ok,
        format!(
            "E[N] = {:.4} ± {:.4} (SE), Little's law worst error {worst:.2} SE over 10 runs",
            n.mean,
            n.std_err()
        ),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |i: usize| selected.is_empty() || selected.contains(&i);
    let mut failures = 0;
    let mut report = |i: usize, name: &str, v: Verdict| {
        println!("criterion {i:>2} [{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failures += 1;
        }
    };

    let cheap: [(usize, &str, fn() -> Verdict); 7] = [
        (1, "SRPT reduction", srpt_reduction),
        (2, "c-mu indices", cmu_indices),
        (3, "two-state game", two_state_game),
        (4, "brute-force ranks", brute_force_ranks),
        (5, "cost-to-go shape", cost_to_go_shape),
        (6, "integral identity", integral_identity),
        (7, "recycle at zero", recycle_at_zero),
    ];
    for (i, name, f) in cheap {
        if want(i) {
            report(i, name, f());
        }
    }
    let mut klimov = None;
    if want(8) {
        let (v, k) = optimality_dominance();
        klimov = k;
        report(8, "optimality dominance", v);
    }
    if want(9) {
        report(9, "nonpreemptible invariance", invariance(klimov));
    }
    if want(10) {
        report(10, "M/M/1 closed form", mm1_closed_form());
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
