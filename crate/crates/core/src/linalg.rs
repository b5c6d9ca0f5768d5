//! Linear solves on the transient part of a job chain.

use nalgebra::{DMatrix, DVector};

use crate::jobmodel::JobChain;

/// Kahn's algorithm on the transient states. `None` if there is a cycle.
pub(crate) fn topological_order(n: usize, kernel: &[Vec<(usize, f64)>]) -> Option<Vec<usize>> {
    let mut indegree = vec![0usize; n];
    for row in kernel {
        for &(y, _) in row {
            if y < n {
                indegree[y] += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|&x| indegree[x] == 0).collect();
    let mut head = 0;
    while head < order.len() {
        let x = order[head];
        head += 1;
        for &(y, _) in &kernel[x] {
            if y < n {
                indegree[y] -= 1;
                if indegree[y] == 0 {
                    order.push(y);
                }
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Solve `v(x) = rhs(x)` for stopped `x`, and
/// `v(x) = rhs(x) + Σ_y kernel(x, y)·v(y)` otherwise, with `v(done) = 0`.
/// Several right-hand sides share one factorization.
pub(crate) fn solve_stopped(chain: &JobChain, stopped: &[bool], rhs: &[&[f64]]) -> Option<Vec<Vec<f64>>> {
    let n = chain.len();
    if let Some(order) = chain.topological_order() {
        let mut out: Vec<Vec<f64>> = rhs.iter().map(|_| vec![0.0; n]).collect();
        for &x in order.iter().rev() {
            for (v, b) in out.iter_mut().zip(rhs) {
                let mut acc = b[x];
                if !stopped[x] {
                    for &(y, p) in chain.successors(x) {
                        if y < n {
                            acc += p * v[y];
                        }
                    }
                }
                v[x] = acc;
            }
        }
        return Some(out);
    }

    let mut a = DMatrix::<f64>::identity(n, n);
    for x in (0..n).filter(|&x| !stopped[x]) {
        for &(y, p) in chain.successors(x) {
            if y < n {
                a[(x, y)] -= p;
            }
        }
    }
    let lu = a.lu();
    rhs.iter()
        .map(|b| {
            let sol = lu.solve(&DVector::from_column_slice(b))?;
            sol.iter().all(|v| v.is_finite()).then(|| sol.iter().copied().collect())
        })
        .collect()
}

/// Spectral radius of the kernel restricted to the transient states.
pub(crate) fn transient_spectral_radius(chain: &JobChain) -> f64 {
    let n = chain.len();
    if chain.topological_order().is_some() {
        // Nilpotent.
        return 0.0;
    }
    let mut q = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        for &(y, p) in chain.successors(x) {
            if y < n {
                q[(x, y)] += p;
            }
        }
    }
    match q.clone().try_schur(1e-14, 10_000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
        None => reachability_radius(chain),
    }
}

/// Fallback when the eigenvalue iteration fails: 1 if some state cannot
/// reach `done`, else 0.
fn reachability_radius(chain: &JobChain) -> f64 {
    let n = chain.len();
    let mut reaches = vec![false; n];
    let mut changed = true;
    while changed {
        changed = false;
        for x in 0..n {
            if !reaches[x] && chain.successors(x).iter().any(|&(y, _)| y == n || reaches[y]) {
                reaches[x] = true;
                changed = true;
            }
        }
    }
    if reaches.iter().all(|&r| r) {
        0.0
    } else {
        1.0
    }
}
