//! Helpers shared by the integration tests: random chains and an
//! independent brute-force rank oracle.
#![allow(dead_code)]

use gittins_sched::jobmodel::{JobChain, Sojourn, Target};
use rand::Rng;

/// A random absorbing chain with `preemptible` preemptible states and
/// `nonpreemptible` nonpreemptible ones. Cycles are allowed; every state
/// completes with probability at least 0.15 per visit.
pub fn random_chain<R: Rng>(rng: &mut R, preemptible: usize, nonpreemptible: usize) -> JobChain {
    let n = preemptible + nonpreemptible;
    let mut b = JobChain::builder();
    for x in 0..n {
        let sojourn = if rng.random_bool(0.5) {
            Sojourn::Exponential(rng.random_range(0.5..3.0))
        } else {
            Sojourn::Deterministic(rng.random_range(0.2..2.0))
        };
        let label = if x < preemptible { format!("p{x}") } else { format!("np{x}") };
        b.state(label, sojourn, x < preemptible, rng.random_range(0.2..5.0));
    }
    for x in 0..n {
        let done = rng.random_range(0.15..1.0);
        let k = rng.random_range(0..=3usize.min(n));
        let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        b.edge(x, Target::Done, if k == 0 { 1.0 } else { done });
        for w in weights {
            let y = rng.random_range(0..n);
            b.edge(x, y, (1.0 - done) * w / total);
        }
    }
    let starts: Vec<usize> = (0..preemptible).filter(|_| rng.random_bool(0.6)).collect();
    let starts = if starts.is_empty() { vec![0] } else { starts };
    let p = 1.0 / starts.len() as f64;
    for &x in &starts {
        b.batch(p, [x]);
    }
    b.build().expect("random chain is well formed")
}

/// Solve `A v = b` by Gaussian elimination with partial pivoting.
pub fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        assert!(d.abs() > 1e-14, "singular system");
        for row in col + 1..n {
            let f = a[row][col] / d;
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut v = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * v[k]).sum();
        v[row] = (b[row] - s) / a[row][row];
    }
    v
}

/// Expected service until entering `give_up` or completing, and the
/// holding cost at that moment, from every state.
pub fn brute_moments(chain: &JobChain, give_up: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let n = chain.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut bt = vec![0.0; n];
    let mut bh = vec![0.0; n];
    for x in 0..n {
        a[x][x] = 1.0;
        if give_up[x] {
            bh[x] = chain.holding_cost(x);
            continue;
        }
        bt[x] = chain.mean_sojourn(x);
        for &(y, p) in chain.successors(x) {
            if y < n {
                a[x][y] -= p;
            }
        }
    }
    (gauss(a.clone(), bt), gauss(a, bh))
}

/// Rank straight from the index definition: the smallest ratio of expected
/// service to expected holding-cost decrease over every give-up set not
/// containing `x`.
pub fn brute_force_rank(chain: &JobChain, x: usize) -> f64 {
    let pre: Vec<usize> = chain.preemptible_states().filter(|&y| y != x).collect();
    let mut best = f64::INFINITY;
    for bits in 0u32..(1 << pre.len()) {
        let mut mask = vec![false; chain.len()];
        for (i, &y) in pre.iter().enumerate() {
            mask[y] = bits & (1 << i) != 0;
        }
        let (t, h) = brute_moments(chain, &mask);
        let drop = chain.holding_cost(x) - h[x];
        if drop > 0.0 {
            best = best.min(t[x] / drop);
        }
    }
    best
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
