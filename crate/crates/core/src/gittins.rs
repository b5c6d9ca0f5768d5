//! The Gittins game and Gittins ranks.
//!
//! For a penalty `r ≥ 0`, the game serves a single job and may give up in
//! any preemptible state `y`, paying a delay of `r·h(y)`. Its optimal cost
//! `V(x, r)` is concave and nondecreasing in `r`, and the rank of a state is
//! the largest penalty at which giving up there is still optimal. Ranks are
//! found by bisection on that characterization; the closed-form attained
//! service and slowdown indices serve as independent checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jobmodel::{JobChain, ServiceDist};
use crate::linalg;

/// Relative tolerance for giving up at a tie: `x ∈ Y*(r)` iff
/// `r·h(x) − V(x, r) ≤ TIE_TOLERANCE · max(1, r·h(x))`.
pub const TIE_TOLERANCE: f64 = 1e-9;
pub const VALUE_ITERATION_TOLERANCE: f64 = 1e-12;
pub const VALUE_ITERATION_CAP: usize = 1_000_000;
const POLICY_ITERATION_CAP: usize = 10_000;
/// Number of points in the default penalty grid.
pub const DEFAULT_GRID_POINTS: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("penalty {0} must be finite and nonnegative")]
    BadPenalty(f64),
    #[error("give-up set contains nonpreemptible state {0}")]
    NonpreemptibleGiveUp(String),
    #[error("state index {0} out of range")]
    NoSuchState(usize),
    #[error("no convergence after {0} iterations; is the chain absorbing?")]
    NoConvergence(usize),
    #[error("absorption system is singular; the chain is not absorbing")]
    Singular,
    #[error("internal error: state {0} never enters a give-up set")]
    Bracket(String),
    #[error("invalid penalty grid: {0}")]
    BadGrid(String),
    #[error("tolerance {0} must be positive")]
    BadTolerance(f64),
    #[error("{0} preemptible states exceed the enumeration limit {ENUMERATION_LIMIT}")]
    TooLarge(usize),
    #[error("attained service {0} is at or beyond the largest support point")]
    BeyondSupport(f64),
}

/// Expected service until first entering the give-up set or completing,
/// and the expected holding cost at that moment.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub serve: Vec<f64>,
    pub hold: Vec<f64>,
}

/// Serve/hold moments under give-up set `give_up` (a per-state mask).
pub fn give_up_moments(chain: &JobChain, give_up: &[bool]) -> Result<Moments, GameError> {
    let n = chain.len();
    let t_rhs: Vec<f64> = (0..n)
        .map(|x| if give_up[x] { 0.0 } else { chain.mean_sojourn(x) })
        .collect();
    let h_rhs: Vec<f64> = (0..n)
        .map(|x| if give_up[x] { chain.holding_cost(x) } else { 0.0 })
        .collect();
    let mut sol = linalg::solve_stopped(chain, give_up, &[&t_rhs, &h_rhs]).ok_or(GameError::Singular)?;
    let hold = sol.pop().unwrap();
    let serve = sol.pop().unwrap();
    Ok(Moments { serve, hold })
}

fn mask(chain: &JobChain, give_up: &[usize]) -> Result<Vec<bool>, GameError> {
    let mut m = vec![false; chain.len()];
    for &y in give_up {
        if y >= chain.len() {
            return Err(GameError::NoSuchState(y));
        }
        if !chain.is_preemptible(y) {
            return Err(GameError::NonpreemptibleGiveUp(chain.label(y).to_string()));
        }
        m[y] = true;
    }
    Ok(m)
}

fn check_penalty(r: f64) -> Result<(), GameError> {
    if r.is_finite() && r >= 0.0 {
        Ok(())
    } else {
        Err(GameError::BadPenalty(r))
    }
}

/// Cost `t(x, Y) + r·h(x, Y)` of playing the game from `x` with give-up set `Y`.
pub fn game_cost(chain: &JobChain, x: usize, r: f64, give_up: &[usize]) -> Result<f64, GameError> {
    check_penalty(r)?;
    if x >= chain.len() {
        return Err(GameError::NoSuchState(x));
    }
    let m = give_up_moments(chain, &mask(chain, give_up)?)?;
    Ok(m.serve[x] + r * m.hold[x])
}

/// Expected cost of serving `x` for one sojourn and then playing optimally.
fn continuation(chain: &JobChain, values: &[f64], x: usize) -> f64 {
    let n = chain.len();
    chain.mean_sojourn(x)
        + chain
            .successors(x)
            .iter()
            .filter(|&&(y, _)| y < n)
            .map(|&(y, p)| p * values[y])
            .sum::<f64>()
}

fn gives_up(chain: &JobChain, values: &[f64], x: usize, r: f64) -> bool {
    let stop = r * chain.holding_cost(x);
    stop - continuation(chain, values, x) <= TIE_TOLERANCE * stop.abs().max(1.0)
}

/// Optimal game values at penalty `r`.
///
/// Acyclic chains are solved exactly by one backward pass. Chains with
/// cycles use policy iteration over give-up sets, each step an exact
/// linear solve; it terminates in finitely many steps.
pub fn optimal_values(chain: &JobChain, r: f64) -> Result<Vec<f64>, GameError> {
    check_penalty(r)?;
    let n = chain.len();
    if let Some(order) = chain.topological_order() {
        let mut v = vec![0.0; n];
        for &x in order.iter().rev() {
            let c = continuation(chain, &v, x);
            v[x] = if chain.is_preemptible(x) {
                c.min(r * chain.holding_cost(x))
            } else {
                c
            };
        }
        return Ok(v);
    }

    let mut stop: Vec<bool> = (0..n).map(|x| chain.is_preemptible(x)).collect();
    for _ in 0..POLICY_ITERATION_CAP {
        let rhs: Vec<f64> = (0..n)
            .map(|x| {
                if stop[x] {
                    r * chain.holding_cost(x)
                } else {
                    chain.mean_sojourn(x)
                }
            })
            .collect();
        let v = linalg::solve_stopped(chain, &stop, &[&rhs])
            .ok_or(GameError::Singular)?
            .pop()
            .unwrap();
        let mut changed = false;
        for x in chain.preemptible_states() {
            let give = r * chain.holding_cost(x);
            let cont = continuation(chain, &v, x);
            let eps = 1e-12 * give.abs().max(cont.abs()).max(1.0);
            // Switch only on strict improvement so the iteration cannot cycle.
            if stop[x] && cont < give - eps {
                stop[x] = false;
                changed = true;
            } else if !stop[x] && give < cont - eps {
                stop[x] = true;
                changed = true;
            }
        }
        if !changed {
            return Ok(v);
        }
    }
    Err(GameError::NoConvergence(POLICY_ITERATION_CAP))
}

/// Plain value iteration on the Bellman operator
/// `V(x) = min(r·h(x), E[sojourn(x)] + Σ kernel(x, y)·V(y))` (no minimum at
/// nonpreemptible states), started from zero. Returns the values and the
/// number of sweeps.
pub fn value_iteration(
    chain: &JobChain,
    r: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<(Vec<f64>, usize), GameError> {
    check_penalty(r)?;
    let n = chain.len();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    for it in 1..=max_iterations {
        let mut delta: f64 = 0.0;
        for x in 0..n {
            let c = continuation(chain, &v, x);
            next[x] = if chain.is_preemptible(x) {
                c.min(r * chain.holding_cost(x))
            } else {
                c
            };
            delta = delta.max((next[x] - v[x]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if delta < tolerance {
            return Ok((v, it));
        }
    }
    Err(GameError::NoConvergence(max_iterations))
}

/// Solution of the Gittins game at one penalty.
#[derive(Clone, Debug, PartialEq)]
pub struct GameSolution {
    pub penalty: f64,
    /// `V(x, r)`, equal to `serve_moment + penalty·hold_moment`.
    pub cost_to_go: Vec<f64>,
    /// Optimal give-up set `Y*(r)` as a per-state mask.
    pub give_up: Vec<bool>,
    pub serve_moment: Vec<f64>,
    pub hold_moment: Vec<f64>,
}

impl GameSolution {
    pub fn give_up_states(&self) -> Vec<usize> {
        (0..self.give_up.len()).filter(|&x| self.give_up[x]).collect()
    }
}

pub fn solve_game(chain: &JobChain, r: f64) -> Result<GameSolution, GameError> {
    let values = optimal_values(chain, r)?;
    let give_up: Vec<bool> = (0..chain.len())
        .map(|x| chain.is_preemptible(x) && gives_up(chain, &values, x, r))
        .collect();
    let m = give_up_moments(chain, &give_up)?;
    let cost_to_go = m.serve.iter().zip(&m.hold).map(|(t, h)| t + r * h).collect();
    Ok(GameSolution {
        penalty: r,
        cost_to_go,
        give_up,
        serve_moment: m.serve,
        hold_moment: m.hold,
    })
}

/// `(r, V(x, r))` for every `r` in `grid`.
pub fn cost_to_go_curve(chain: &JobChain, x: usize, grid: &[f64]) -> Result<Vec<(f64, f64)>, GameError> {
    if x >= chain.len() {
        return Err(GameError::NoSuchState(x));
    }
    grid.iter()
        .map(|&r| Ok((r, solve_game(chain, r)?.cost_to_go[x])))
        .collect()
}

// ---------------------------------------------------------------------------
// Ranks

/// Rank of state `x`: the largest `r` with `x ∈ Y*(r)` (for nonpreemptible
/// `x`, the largest `r` at which serving on is no cheaper than `r·h(x)`).
///
/// Bisection on `[0, t(x, ∅)/h(x)]`, then the bracket is snapped to the
/// exact breakpoint `t(x, Y)/(h(x) − h(x, Y))` of the give-up set `Y`
/// optimal just above the rank. States with `h(x) ≤ 0` (only allowed when
/// nonpreemptible) have infinite rank.
pub fn state_rank(chain: &JobChain, x: usize, mean_absorption: &[f64], tolerance: f64) -> Result<f64, GameError> {
    let h = chain.holding_cost(x);
    if h <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let member = |r: f64| -> Result<(bool, Vec<f64>), GameError> {
        let v = optimal_values(chain, r)?;
        Ok((gives_up(chain, &v, x, r), v))
    };

    let mut lo = 0.0;
    let mut hi = mean_absorption[x] / h * (1.0 + 1e-3) + f64::MIN_POSITIVE;
    let (inside, mut hi_values) = member(hi)?;
    if inside {
        return Err(GameError::Bracket(chain.label(x).to_string()));
    }
    while hi - lo > tolerance * hi {
        let mid = 0.5 * (lo + hi);
        let (inside, v) = member(mid)?;
        if inside {
            lo = mid;
        } else {
            hi = mid;
            hi_values = v;
        }
    }

    let stop: Vec<bool> = (0..chain.len())
        .map(|y| y != x && chain.is_preemptible(y) && gives_up(chain, &hi_values, y, hi))
        .collect();
    let m = give_up_moments(chain, &stop)?;
    let drop = h - m.hold[x];
    if drop > 0.0 {
        let exact = m.serve[x] / drop;
        if exact <= hi * (1.0 + 1e-12) && exact >= lo * (1.0 - 1e-6) {
            return Ok(exact);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// How the penalty grid of a [`RankTable`] is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RGrid {
    /// Log-spaced over `[min finite rank / 10, max finite rank × 10]`.
    Auto { points: usize },
    Log { min: f64, max: f64, points: usize },
    Explicit(Vec<f64>),
}

impl Default for RGrid {
    fn default() -> Self {
        RGrid::Auto {
            points: DEFAULT_GRID_POINTS,
        }
    }
}

pub fn log_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>, GameError> {
    if !(min > 0.0 && max > min && min.is_finite() && max.is_finite()) {
        return Err(GameError::BadGrid(format!("need 0 < min < max, got [{min}, {max}]")));
    }
    if points < 2 {
        return Err(GameError::BadGrid(format!("need at least 2 points, got {points}")));
    }
    let (a, b) = (min.ln(), max.ln());
    Ok((0..points)
        .map(|i| {
            if i == 0 {
                min
            } else if i + 1 == points {
                max
            } else {
                (a + (b - a) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect())
}

/// Default grid spanning two decades beyond the finite positive ranks.
pub fn default_r_grid(ranks: &[f64], points: usize) -> Result<Vec<f64>, GameError> {
    let finite = ranks.iter().copied().filter(|r| r.is_finite() && *r > 0.0);
    let (lo, hi) = finite.fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
    if lo.is_finite() {
        log_grid(lo / 10.0, hi * 10.0, points)
    } else {
        log_grid(1e-3, 1e3, points)
    }
}

fn check_grid(grid: &[f64]) -> Result<(), GameError> {
    if grid.is_empty() {
        return Err(GameError::BadGrid("empty".into()));
    }
    if grid.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(GameError::BadGrid("penalties must be finite and positive".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GameError::BadGrid("penalties must be strictly increasing".into()));
    }
    Ok(())
}

/// Per-state ranks plus serve/hold moments `t(x, r)`, `h(x, r)` tabulated
/// on a penalty grid, with `Y*(r) = {x preemptible : rank(x) ≥ r}`.
#[derive(Clone, Debug, PartialEq)]
pub struct RankTable {
    rank: Vec<f64>,
    index: Vec<f64>,
    preemptible: Vec<bool>,
    mean_service: Vec<f64>,
    r_grid: Vec<f64>,
    /// `serve[x][k] = t(x, r_grid[k])`
    serve: Vec<Vec<f64>>,
    hold: Vec<Vec<f64>>,
}

impl RankTable {
    pub fn rank(&self, x: usize) -> f64 {
        self.rank[x]
    }

    pub fn ranks(&self) -> &[f64] {
        &self.rank
    }

    pub fn index(&self, x: usize) -> f64 {
        self.index[x]
    }

    pub fn len(&self) -> usize {
        self.rank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rank.is_empty()
    }

    /// Expected time to absorption `t(x, ∅)`.
    pub fn mean_service(&self, x: usize) -> f64 {
        self.mean_service[x]
    }

    pub fn r_grid(&self) -> &[f64] {
        &self.r_grid
    }

    pub fn grid_index(&self, r: f64) -> Option<usize> {
        self.r_grid
            .iter()
            .position(|&g| (g - r).abs() <= 1e-12 * g.max(r.abs()))
    }

    pub fn serve(&self, x: usize, k: usize) -> f64 {
        self.serve[x][k]
    }

    pub fn hold(&self, x: usize, k: usize) -> f64 {
        self.hold[x][k]
    }

    /// `t(x, r)` over the whole grid.
    pub fn serve_row(&self, x: usize) -> &[f64] {
        &self.serve[x]
    }

    pub fn is_preemptible(&self, x: usize) -> bool {
        self.preemptible[x]
    }

    /// Whether `x ∈ Y*(r_grid[k])`, i.e. a job in `x` is `r`-bad.
    pub fn gives_up(&self, x: usize, k: usize) -> bool {
        self.preemptible[x] && self.rank[x] >= self.r_grid[k]
    }
}

pub fn compute_rank_table(chain: &JobChain, grid: &RGrid, tolerance: f64) -> Result<RankTable, GameError> {
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(GameError::BadTolerance(tolerance));
    }
    let n = chain.len();
    let mean_service = chain.mean_absorption_times().ok_or(GameError::Singular)?;
    let rank = (0..n)
        .into_par_iter()
        .map(|x| state_rank(chain, x, &mean_service, tolerance))
        .collect::<Result<Vec<f64>, _>>()?;
    let index = rank.iter().map(|&r| if r > 0.0 { 1.0 / r } else { f64::INFINITY }).collect();

    let r_grid = match grid {
        RGrid::Auto { points } => default_r_grid(&rank, *points)?,
        RGrid::Log { min, max, points } => log_grid(*min, *max, *points)?,
        RGrid::Explicit(g) => {
            check_grid(g)?;
            g.clone()
        }
    };

    let columns = r_grid
        .par_iter()
        .map(|&r| {
            let stop: Vec<bool> = (0..n)
                .map(|x| chain.is_preemptible(x) && rank[x] >= r)
                .collect();
            give_up_moments(chain, &stop)
        })
        .collect::<Result<Vec<Moments>, _>>()?;
    let mut serve = vec![Vec::with_capacity(r_grid.len()); n];
    let mut hold = vec![Vec::with_capacity(r_grid.len()); n];
    for col in &columns {
        for x in 0..n {
            serve[x].push(col.serve[x]);
            hold[x].push(col.hold[x]);
        }
    }
    Ok(RankTable {
        rank,
        index,
        preemptible: (0..n).map(|x| chain.is_preemptible(x)).collect(),
        mean_service,
        r_grid,
        serve,
        hold,
    })
}

// ---------------------------------------------------------------------------
// Checks

/// Most preemptible states [`enumerate_rank`] accepts (other than `x`).
pub const ENUMERATION_LIMIT: usize = 16;

/// Rank of `x` straight from the index definition: the smallest ratio
/// `t(x, Y) / (h(x) − h(x, Y))` over every give-up set `Y ∌ x` with a
/// positive denominator. Exponential in the number of preemptible states.
pub fn enumerate_rank(chain: &JobChain, x: usize) -> Result<f64, GameError> {
    if x >= chain.len() {
        return Err(GameError::NoSuchState(x));
    }
    let others: Vec<usize> = chain.preemptible_states().filter(|&y| y != x).collect();
    if others.len() > ENUMERATION_LIMIT {
        return Err(GameError::TooLarge(others.len()));
    }
    let mut best = f64::INFINITY;
    for bits in 0u32..(1 << others.len()) {
        let mut stop = vec![false; chain.len()];
        for (i, &y) in others.iter().enumerate() {
            stop[y] = bits & (1 << i) != 0;
        }
        let m = give_up_moments(chain, &stop)?;
        let drop = chain.holding_cost(x) - m.hold[x];
        if drop > 0.0 {
            best = best.min(m.serve[x] / drop);
        }
    }
    Ok(best)
}

/// Worst deviations of `V(x, ·)` from the shape the game guarantees.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShapeReport {
    /// Largest decrease of `V(x, ·)` between consecutive grid points.
    pub monotonicity: f64,
    /// Largest increase of the difference quotient of `V(x, ·)`.
    pub concavity: f64,
    /// Largest relative gap between a central difference of `V(x, ·)` and
    /// `h(x, Y*(r))`, over points where `Y*` is locally constant.
    pub derivative: f64,
    /// Number of derivative comparisons.
    pub derivative_points: usize,
}

/// Check monotonicity, concavity and the derivative identity of every
/// state's cost-to-go on `grid`.
pub fn shape_check(chain: &JobChain, grid: &[f64]) -> Result<ShapeReport, GameError> {
    check_grid(grid)?;
    let sols = grid.iter().map(|&r| solve_game(chain, r)).collect::<Result<Vec<_>, _>>()?;
    let mut out = ShapeReport::default();
    for x in 0..chain.len() {
        let v: Vec<f64> = sols.iter().map(|s| s.cost_to_go[x]).collect();
        let q: Vec<f64> = (1..grid.len()).map(|k| (v[k] - v[k - 1]) / (grid[k] - grid[k - 1])).collect();
        for k in 1..v.len() {
            out.monotonicity = out.monotonicity.max(v[k - 1] - v[k]);
        }
        for k in 1..q.len() {
            out.concavity = out.concavity.max(q[k] - q[k - 1]);
        }
    }
    // Y*(r) only shrinks as r grows, so equal sets at r ± d mean V is
    // exactly linear on [r − d, r + d]; a wide step then costs no accuracy
    // and keeps rounding small relative to small slopes.
    for (k, &r) in grid.iter().enumerate() {
        let d = 1e-3 * r;
        let lo = solve_game(chain, r - d)?;
        let hi = solve_game(chain, r + d)?;
        if lo.give_up != sols[k].give_up || hi.give_up != sols[k].give_up {
            continue;
        }
        for x in 0..chain.len() {
            let fd = (hi.cost_to_go[x] - lo.cost_to_go[x]) / (2.0 * d);
            let exact = sols[k].hold_moment[x];
            let scale = fd.abs().max(exact.abs());
            if scale > 0.0 {
                out.derivative = out.derivative.max((fd - exact).abs() / scale);
            }
            out.derivative_points += 1;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Closed forms for attained-service models

fn threshold_index(dist: &ServiceDist, x: f64, weight: impl Fn(f64) -> f64) -> Result<f64, GameError> {
    let above: Vec<(f64, f64)> = dist.points().iter().copied().filter(|&(s, _)| s > x).collect();
    if above.is_empty() {
        return Err(GameError::BeyondSupport(x));
    }
    let mut best = f64::NEG_INFINITY;
    let mut gain = 0.0;
    for &(y, _) in &above {
        // Conditioning on S > x cancels between numerator and denominator.
        gain += above
            .iter()
            .filter(|&&(s, _)| s == y)
            .map(|&(s, p)| p * weight(s))
            .sum::<f64>();
        let service: f64 = above.iter().map(|&(s, p)| p * (s.min(y) - x)).sum();
        best = best.max(gain / service);
    }
    Ok(best)
}

/// `sup_{y>x} P(S ≤ y | S > x) / E[min(S, y) − x | S > x]`.
pub fn attained_service_index(dist: &ServiceDist, x: f64) -> Result<f64, GameError> {
    threshold_index(dist, x, |_| 1.0)
}

/// `sup_{y>x} E[S⁻¹·1(S ≤ y) | S > x] / E[min(S, y) − x | S > x]`.
pub fn slowdown_index(dist: &ServiceDist, x: f64) -> Result<f64, GameError> {
    threshold_index(dist, x, |s| 1.0 / s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jobmodel::{build_known_service_time, ClassSpec, Sojourn, Target};

    /// State `a`: preemptible, cost 2, Exponential(1), then done.
    fn single() -> JobChain {
        let mut b = JobChain::builder();
        let a = b.state("a", Sojourn::Exponential(1.0), true, 2.0);
        b.edge(a, Target::Done, 1.0).batch(1.0, [a]);
        b.build().unwrap()
    }

    #[test]
    fn game_cost_single_state() {
        let c = single();
        assert_eq!(game_cost(&c, 0, 3.0, &[]).unwrap(), 1.0);
        assert_eq!(game_cost(&c, 0, 3.0, &[0]).unwrap(), 6.0);
    }

    #[test]
    fn game_cost_rejects_nonpreemptible() {
        let mut b = JobChain::builder();
        let a = b.state("a", Sojourn::Exponential(1.0), true, 1.0);
        let np = b.state("np", Sojourn::Exponential(1.0), false, 1.0);
        b.edge(a, np, 1.0).edge(np, Target::Done, 1.0).batch(1.0, [a]);
        let c = b.build().unwrap();
        assert_eq!(
            game_cost(&c, 0, 1.0, &[np]),
            Err(GameError::NonpreemptibleGiveUp("np".into()))
        );
        assert!(matches!(solve_game(&c, -1.0), Err(GameError::BadPenalty(_))));
    }

    #[test]
    fn solve_game_single_state() {
        let c = single();
        let s = solve_game(&c, 0.0).unwrap();
        assert_eq!(s.cost_to_go, vec![0.0]);
        assert!(s.give_up[0]);
        let s = solve_game(&c, 0.3).unwrap();
        assert!((s.cost_to_go[0] - 0.6).abs() < 1e-15);
        assert!(s.give_up[0]);
        let s = solve_game(&c, 0.7).unwrap();
        assert_eq!(s.cost_to_go[0], 1.0);
        assert!(!s.give_up[0]);
        let s = solve_game(&c, 1e6).unwrap();
        assert_eq!(s.give_up_states(), Vec::<usize>::new());
    }

    #[test]
    fn rank_single_state() {
        let t = compute_rank_table(&single(), &RGrid::default(), 1e-10).unwrap();
        assert!((t.rank(0) - 0.5).abs() < 1e-14);
        assert!((t.index(0) - 2.0).abs() < 1e-13);
    }

    #[test]
    fn known_service_rank_is_remaining_time() {
        let d = ServiceDist::new((1..=6).map(|k| (k as f64 * 0.5, 1.0 / 6.0))).unwrap();
        let c = build_known_service_time(&d, 0.5).unwrap();
        let t = compute_rank_table(&c, &RGrid::default(), 1e-10).unwrap();
        for x in 0..c.len() {
            let rem = (x + 1) as f64 * 0.5;
            assert!((t.rank(x) - rem).abs() <= 1e-12 * rem, "{} {}", t.rank(x), rem);
        }
    }

    #[test]
    fn c_mu_indices() {
        let classes = [
            ClassSpec { completion_rate: 3.0, holding_cost: 1.0, feedback: vec![] },
            ClassSpec { completion_rate: 1.0, holding_cost: 2.0, feedback: vec![] },
        ];
        let c = crate::jobmodel::build_multiclass_feedback(&classes, &[0.5, 0.5]).unwrap();
        let t = compute_rank_table(&c, &RGrid::default(), 1e-10).unwrap();
        assert!((t.index(0) - 3.0).abs() < 1e-12);
        assert!((t.index(1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn policy_iteration_matches_value_iteration() {
        // Self-feedback makes the chain cyclic.
        let classes = [
            ClassSpec { completion_rate: 1.0, holding_cost: 1.0, feedback: vec![0.3, 0.4] },
            ClassSpec { completion_rate: 2.0, holding_cost: 3.0, feedback: vec![0.5, 0.0] },
        ];
        let c = crate::jobmodel::build_multiclass_feedback(&classes, &[1.0, 0.0]).unwrap();
        for r in [0.05, 0.2, 0.5, 1.0, 4.0] {
            let exact = optimal_values(&c, r).unwrap();
            let (vi, _) = value_iteration(&c, r, 1e-13, VALUE_ITERATION_CAP).unwrap();
            for (a, b) in exact.iter().zip(&vi) {
                assert!((a - b).abs() < 1e-10, "r={r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn index_formulas() {
        let det = ServiceDist::deterministic(1.0).unwrap();
        assert_eq!(attained_service_index(&det, 0.0).unwrap(), 1.0);
        let two = ServiceDist::new([(1.0, 0.5), (2.0, 0.5)]).unwrap();
        assert!((attained_service_index(&two, 0.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(attained_service_index(&two, 2.0), Err(GameError::BeyondSupport(_))));

        let s = ServiceDist::deterministic(2.0).unwrap();
        assert!((slowdown_index(&s, 0.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((slowdown_index(&two, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((slowdown_index(&two, 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn discretized_exponential_index_is_rate() {
        let mu: f64 = 1.5;
        let step = 0.01;
        let d = ServiceDist::from_cdf(step, 4000, |s| 1.0 - (-mu * s).exp()).unwrap();
        for x in [0.0, 0.5, 2.0] {
            let idx = attained_service_index(&d, x).unwrap();
            // Atoms at grid points shift the ratio by O(step).
            assert!((idx - mu).abs() < mu * step, "{idx}");
        }
    }

    #[test]
    fn grid_validation() {
        assert!(log_grid(0.0, 1.0, 10).is_err());
        assert!(log_grid(1.0, 1.0, 10).is_err());
        assert!(check_grid(&[1.0, 1.0]).is_err());
        let g = log_grid(0.1, 10.0, 3).unwrap();
        assert!((g[1] - 1.0).abs() < 1e-12);
    }
}
