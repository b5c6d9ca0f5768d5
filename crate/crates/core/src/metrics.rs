//! Holding-cost and r-work accounting.
//!
//! All steady-state quantities are time averages over `[warmup, horizon]`
//! with batch-means confidence intervals. System r-work is kept in expected
//! form: a job in state `x` contributes `t(x, r)`, the mean service it needs
//! to complete or give up at penalty `r`. Since
//! `∫₀^∞ t(x, r)/r² dr = h(x)` for every preemptible `x`, integrating the
//! preemptible r-work curve recovers the mean preemptible holding cost.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::gittins::RankTable;
use crate::jobmodel::JobChain;
use crate::linalg;
use crate::simengine::SystemState;

/// Number of batches for batch-means intervals.
pub const CI_BATCHES: usize = 30;
/// Two-sided confidence level of every reported interval.
pub const CONFIDENCE: f64 = 0.95;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("r-work curve is empty")]
    EmptyCurve,
    #[error("penalty {0} is not on the tabulated grid")]
    NotTabulated(f64),
    #[error("reports are not comparable: {0}")]
    Mismatched(String),
    #[error("need at least two reports")]
    TooFew,
}

/// Student-t quantile for a two-sided interval with `df` degrees of freedom.
pub fn t_quantile(df: usize) -> f64 {
    if df == 0 {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + CONFIDENCE / 2.0)
}

/// A point estimate with a confidence half-width from batch means.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
    #[serde(skip)]
    pub batch_means: Vec<f64>,
}

impl Estimate {
    pub fn from_batches(mean: f64, batch_means: Vec<f64>) -> Self {
        let half_width = standard_error(&batch_means) * t_quantile(batch_means.len().saturating_sub(1));
        Estimate {
            mean,
            half_width,
            batch_means,
        }
    }

    pub fn std_err(&self) -> f64 {
        standard_error(&self.batch_means)
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn overlaps(&self, other: &Estimate) -> bool {
        self.lower() <= other.upper() && other.lower() <= self.upper()
    }

    /// Pool independent replications; `weights` are their relative sizes.
    pub fn pooled(parts: &[&Estimate], weights: &[f64]) -> Estimate {
        let total: f64 = weights.iter().sum();
        let mean = if total > 0.0 {
            parts.iter().zip(weights).map(|(e, w)| e.mean * w).sum::<f64>() / total
        } else {
            f64::NAN
        };
        let batches = parts.iter().flat_map(|e| e.batch_means.iter().copied()).collect();
        Estimate::from_batches(mean, batches)
    }
}

fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Steady-state summary of one simulation run (or pooled replications).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub mean_h: Estimate,
    pub mean_hp: Estimate,
    pub mean_hnp: Estimate,
    pub mean_n: Estimate,
    pub mean_t: Estimate,
    /// Number in system seen by arriving batches.
    pub mean_n_at_arrivals: Estimate,
    pub r_grid: Vec<f64>,
    pub wp_curve: Vec<Estimate>,
    pub wnp_curve: Vec<Estimate>,
    pub recycle_count: Vec<u64>,
    pub integral_hp: f64,
    pub rel_err_integral: f64,
    /// Job (not batch) arrival rate.
    pub job_arrival_rate: f64,
    pub completions: u64,
    /// Length of the measurement window.
    pub window: f64,
    pub unstable: bool,
    /// Per-batch `N − λ·T`, for the Little's-law check.
    #[serde(skip)]
    pub little_diffs: Vec<f64>,
}

impl MetricsReport {
    /// Total r-work `W(r) = W_P(r) + W_NP(r)`.
    pub fn w_curve(&self) -> Vec<Estimate> {
        self.wp_curve
            .iter()
            .zip(&self.wnp_curve)
            .map(|(p, np)| {
                let batches = p
                    .batch_means
                    .iter()
                    .zip(&np.batch_means)
                    .map(|(a, b)| a + b)
                    .collect();
                Estimate::from_batches(p.mean + np.mean, batches)
            })
            .collect()
    }

    /// Pool independent replications of the same scenario.
    pub fn merge(reports: &[MetricsReport]) -> Result<MetricsReport, MetricsError> {
        let first = reports.first().ok_or(MetricsError::TooFew)?;
        if reports.iter().any(|r| r.r_grid != first.r_grid) {
            return Err(MetricsError::Mismatched("different r grids".into()));
        }
        let windows: Vec<f64> = reports.iter().map(|r| r.window).collect();
        let pool = |f: &dyn Fn(&MetricsReport) -> &Estimate, w: &[f64]| {
            let parts: Vec<&Estimate> = reports.iter().map(f).collect();
            Estimate::pooled(&parts, w)
        };
        let mean_hp = pool(&|r| &r.mean_hp, &windows);
        let mean_hnp = pool(&|r| &r.mean_hnp, &windows);
        let completions: Vec<f64> = reports.iter().map(|r| r.completions as f64).collect();
        let curve = |f: &dyn Fn(&MetricsReport) -> &Vec<Estimate>| -> Vec<Estimate> {
            (0..first.r_grid.len())
                .map(|k| {
                    let parts: Vec<&Estimate> = reports.iter().map(|r| &f(r)[k]).collect();
                    Estimate::pooled(&parts, &windows)
                })
                .collect()
        };
        let wp_curve = curve(&|r| &r.wp_curve);
        let wnp_curve = curve(&|r| &r.wnp_curve);
        let wp_means: Vec<f64> = wp_curve.iter().map(|e| e.mean).collect();
        let check = integral_identity_check(&first.r_grid, &wp_means, mean_hp.mean)?;
        Ok(MetricsReport {
            mean_h: combine_sum(&mean_hp, &mean_hnp),
            mean_hp,
            mean_hnp,
            mean_n: pool(&|r| &r.mean_n, &windows),
            mean_t: pool(&|r| &r.mean_t, &completions),
            mean_n_at_arrivals: pool(&|r| &r.mean_n_at_arrivals, &windows),
            r_grid: first.r_grid.clone(),
            wp_curve,
            wnp_curve,
            recycle_count: (0..first.r_grid.len())
                .map(|k| reports.iter().map(|r| r.recycle_count[k]).sum())
                .collect(),
            integral_hp: check.integral,
            rel_err_integral: check.rel_err,
            job_arrival_rate: first.job_arrival_rate,
            completions: reports.iter().map(|r| r.completions).sum(),
            window: windows.iter().sum(),
            unstable: reports.iter().any(|r| r.unstable),
            little_diffs: reports.iter().flat_map(|r| r.little_diffs.iter().copied()).collect(),
        })
    }
}

/// `H = H_P + H_NP`, with batch means added pairwise.
fn combine_sum(p: &Estimate, np: &Estimate) -> Estimate {
    let batches = p
        .batch_means
        .iter()
        .zip(&np.batch_means)
        .map(|(a, b)| a + b)
        .collect();
    Estimate::from_batches(p.mean + np.mean, batches)
}

// ---------------------------------------------------------------------------
// Snapshots

/// `(H, H_P, H_NP)` for the jobs currently present.
pub fn holding_cost_snapshot(state: &SystemState, chain: &JobChain) -> (f64, f64, f64) {
    let (mut hp, mut hnp) = (0.0, 0.0);
    for job in state.jobs() {
        if chain.is_preemptible(job.state) {
            hp += chain.holding_cost(job.state);
        } else {
            hnp += chain.holding_cost(job.state);
        }
    }
    (hp + hnp, hp, hnp)
}

/// Expected-form `(W(r), W_P(r), W_NP(r))` for a tabulated penalty `r`.
pub fn rwork_snapshot(state: &SystemState, table: &RankTable, r: f64) -> Result<(f64, f64, f64), MetricsError> {
    let k = table.grid_index(r).ok_or(MetricsError::NotTabulated(r))?;
    let (mut wp, mut wnp) = (0.0, 0.0);
    for job in state.jobs() {
        let t = table.serve(job.state, k);
        if table.is_preemptible(job.state) {
            wp += t;
        } else {
            wnp += t;
        }
    }
    Ok((wp + wnp, wp, wnp))
}

// ---------------------------------------------------------------------------
// Time-weighted accumulation

/// Piecewise-constant system quantities between two events.
pub struct Snapshot<'a> {
    pub hp: f64,
    pub hnp: f64,
    pub n: usize,
    pub wp: &'a [f64],
    pub wnp: &'a [f64],
}

/// Batch-means accumulator over the window `[start, end]`.
pub struct Accumulator {
    start: f64,
    end: f64,
    batch_len: f64,
    hp: Vec<f64>,
    hnp: Vec<f64>,
    n: Vec<f64>,
    wp: Vec<Vec<f64>>,
    wnp: Vec<Vec<f64>>,
    track_wnp: bool,
    t_sum: Vec<f64>,
    t_count: Vec<u64>,
    arrivals_n: Vec<f64>,
    arrivals: Vec<u64>,
}

impl Accumulator {
    pub fn new(start: f64, end: f64, batches: usize, grid_len: usize, track_wnp: bool) -> Self {
        let batches = batches.max(1);
        Accumulator {
            start,
            end,
            batch_len: (end - start) / batches as f64,
            hp: vec![0.0; batches],
            hnp: vec![0.0; batches],
            n: vec![0.0; batches],
            wp: vec![vec![0.0; grid_len]; batches],
            wnp: vec![vec![0.0; if track_wnp { grid_len } else { 0 }]; batches],
            track_wnp,
            t_sum: vec![0.0; batches],
            t_count: vec![0; batches],
            arrivals_n: vec![0.0; batches],
            arrivals: vec![0; batches],
        }
    }

    fn batch_of(&self, t: f64) -> Option<usize> {
        if t < self.start || t > self.end {
            return None;
        }
        let b = ((t - self.start) / self.batch_len) as usize;
        Some(b.min(self.hp.len() - 1))
    }

    pub fn add_interval(&mut self, t0: f64, t1: f64, s: &Snapshot<'_>) {
        let mut a = t0.max(self.start);
        let stop = t1.min(self.end);
        while a < stop {
            let b = self.batch_of(a).expect("inside window");
            let boundary = if b + 1 == self.hp.len() {
                self.end
            } else {
                self.start + (b + 1) as f64 * self.batch_len
            };
            let z = stop.min(boundary);
            let dt = z - a;
            if dt > 0.0 {
                self.hp[b] += s.hp * dt;
                self.hnp[b] += s.hnp * dt;
                self.n[b] += s.n as f64 * dt;
                for (acc, w) in self.wp[b].iter_mut().zip(s.wp) {
                    *acc += w * dt;
                }
                if self.track_wnp {
                    for (acc, w) in self.wnp[b].iter_mut().zip(s.wnp) {
                        *acc += w * dt;
                    }
                }
            }
            if z <= a {
                break;
            }
            a = z;
        }
    }

    pub fn record_response(&mut self, t: f64, response: f64) {
        if let Some(b) = self.batch_of(t) {
            self.t_sum[b] += response;
            self.t_count[b] += 1;
        }
    }

    pub fn record_arrival_epoch(&mut self, t: f64, n: usize) {
        if let Some(b) = self.batch_of(t) {
            self.arrivals_n[b] += n as f64;
            self.arrivals[b] += 1;
        }
    }

    fn time_average(&self, areas: &[f64]) -> Estimate {
        let window = self.end - self.start;
        let mean = areas.iter().sum::<f64>() / window;
        Estimate::from_batches(mean, areas.iter().map(|a| a / self.batch_len).collect())
    }

    fn ratio(sums: &[f64], counts: &[u64]) -> Estimate {
        let total: u64 = counts.iter().sum();
        let mean = if total > 0 {
            sums.iter().sum::<f64>() / total as f64
        } else {
            f64::NAN
        };
        let batches = sums
            .iter()
            .zip(counts)
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| s / c as f64)
            .collect();
        Estimate::from_batches(mean, batches)
    }

    pub fn finish(self, r_grid: &[f64], recycle_count: Vec<u64>, job_arrival_rate: f64, unstable: bool) -> MetricsReport {
        let mean_hp = self.time_average(&self.hp);
        let mean_hnp = self.time_average(&self.hnp);
        let mean_n = self.time_average(&self.n);
        let column = |rows: &[Vec<f64>], k: usize| -> Vec<f64> { rows.iter().map(|row| row[k]).collect() };
        let wp_curve: Vec<Estimate> = (0..r_grid.len()).map(|k| self.time_average(&column(&self.wp, k))).collect();
        let wnp_curve: Vec<Estimate> = if self.track_wnp {
            (0..r_grid.len()).map(|k| self.time_average(&column(&self.wnp, k))).collect()
        } else {
            let zeros = vec![0.0; self.hp.len()];
            (0..r_grid.len()).map(|_| self.time_average(&zeros)).collect()
        };
        let little_diffs = (0..self.hp.len())
            .filter(|&b| self.t_count[b] > 0)
            .map(|b| self.n[b] / self.batch_len - job_arrival_rate * self.t_sum[b] / self.t_count[b] as f64)
            .collect();
        let wp_means: Vec<f64> = wp_curve.iter().map(|e| e.mean).collect();
        let (integral_hp, rel_err_integral) = match integral_identity_check(r_grid, &wp_means, mean_hp.mean) {
            Ok(c) => (c.integral, c.rel_err),
            Err(_) => (f64::NAN, f64::NAN),
        };
        MetricsReport {
            mean_h: combine_sum(&mean_hp, &mean_hnp),
            mean_hp,
            mean_hnp,
            mean_n,
            mean_t: Self::ratio(&self.t_sum, &self.t_count),
            mean_n_at_arrivals: Self::ratio(&self.arrivals_n, &self.arrivals),
            r_grid: r_grid.to_vec(),
            wp_curve,
            wnp_curve,
            recycle_count,
            integral_hp,
            rel_err_integral,
            job_arrival_rate,
            completions: self.t_count.iter().sum(),
            window: self.end - self.start,
            unstable,
            little_diffs,
        }
    }
}

// ---------------------------------------------------------------------------
// Identities

#[derive(Clone, Debug, PartialEq)]
pub struct IntegralCheck {
    pub integral: f64,
    pub rel_err: f64,
    /// Contribution below the first grid point.
    pub head: f64,
    /// Trapezoidal part over the grid.
    pub body: f64,
    /// Contribution above the last grid point.
    pub tail: f64,
}

/// Compare `∫₀^∞ W_P(r)/r² dr` against the mean preemptible holding cost.
///
/// Over the grid the integrand is integrated by the trapezoid rule in
/// `u = ln r` (where it becomes `W_P(e^u)·e^{−u}`). Above the grid `W_P`
/// is frozen at its last value, contributing `W_P(r_max)/r_max`. Below
/// the grid, `W_P` vanishes once `r` is below every preemptible rank; a
/// nonzero first value is treated as a step at `r_min/2`, contributing
/// `W_P(r_min)/r_min`.
pub fn integral_identity_check(r_grid: &[f64], wp: &[f64], mean_hp: f64) -> Result<IntegralCheck, MetricsError> {
    if r_grid.is_empty() || wp.len() != r_grid.len() {
        return Err(MetricsError::EmptyCurve);
    }
    let head = if wp[0] == 0.0 { 0.0 } else { wp[0] / r_grid[0] };
    let g: Vec<f64> = wp.iter().zip(r_grid).map(|(w, r)| w / r).collect();
    let body = (1..r_grid.len())
        .map(|i| 0.5 * (g[i - 1] + g[i]) * (r_grid[i].ln() - r_grid[i - 1].ln()))
        .sum::<f64>();
    let last = r_grid.len() - 1;
    let tail = wp[last] / r_grid[last];
    let integral = head + body + tail;
    let rel_err = if mean_hp == 0.0 {
        if integral == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (integral - mean_hp).abs() / mean_hp.abs()
    };
    Ok(IntegralCheck {
        integral,
        rel_err,
        head,
        body,
        tail,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LittleCheck {
    /// `|E[N] − λ·E[T]| / E[N]`.
    pub rel_err: f64,
    /// Standard error of `rel_err` from per-batch differences.
    pub std_err: f64,
}

impl LittleCheck {
    pub fn within(&self, std_errs: f64) -> bool {
        self.rel_err <= std_errs * self.std_err
    }
}

/// `None` when Little's law is not applicable (no arrivals or completions).
pub fn little_law_check(report: &MetricsReport) -> Option<LittleCheck> {
    let n = report.mean_n.mean;
    if report.job_arrival_rate <= 0.0 || report.completions == 0 || !(n > 0.0) {
        return None;
    }
    let diff = n - report.job_arrival_rate * report.mean_t.mean;
    Some(LittleCheck {
        rel_err: diff.abs() / n,
        std_err: standard_error(&report.little_diffs) / n,
    })
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct InvarianceReport {
    /// Policy pairs whose `E[H_NP]` intervals do not overlap.
    pub hnp_conflicts: Vec<(String, String)>,
    /// `(policy, policy, r)` whose `E[W_NP(r)]` intervals do not overlap.
    pub wnp_conflicts: Vec<(String, String, f64)>,
}

impl InvarianceReport {
    pub fn ok(&self) -> bool {
        self.hnp_conflicts.is_empty() && self.wnp_conflicts.is_empty()
    }
}

/// Nonpreemptible holding cost and r-work must not depend on the policy.
pub fn invariance_checks(reports: &[(&str, &MetricsReport)]) -> Result<InvarianceReport, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::TooFew);
    }
    let grid = &reports[0].1.r_grid;
    if reports.iter().any(|(_, r)| &r.r_grid != grid) {
        return Err(MetricsError::Mismatched("different r grids".into()));
    }
    let mut out = InvarianceReport::default();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            let (a, ra) = reports[i];
            let (b, rb) = reports[j];
            if !ra.mean_hnp.overlaps(&rb.mean_hnp) {
                out.hnp_conflicts.push((a.to_string(), b.to_string()));
            }
            for (k, &r) in grid.iter().enumerate() {
                if !ra.wnp_curve[k].overlaps(&rb.wnp_curve[k]) {
                    out.wnp_conflicts.push((a.to_string(), b.to_string(), r));
                }
            }
        }
    }
    Ok(out)
}

/// Per-job expectation of `Σ over nonpreemptible visits of weight(x)·E[sojourn(x)]`,
/// averaged over arrivals and scaled by the batch rate.
fn nonpreemptible_flow(chain: &JobChain, batch_rate: f64, weight: impl Fn(usize) -> f64) -> f64 {
    let n = chain.len();
    let rhs: Vec<f64> = (0..n)
        .map(|x| if chain.is_preemptible(x) { 0.0 } else { weight(x) * chain.mean_sojourn(x) })
        .collect();
    let per_state = linalg::solve_stopped(chain, &vec![false; n], &[&rhs])
        .expect("absorbing chain")
        .pop()
        .unwrap();
    let per_batch: f64 = chain
        .batches()
        .iter()
        .map(|b| b.probability * b.initial.iter().map(|&x| per_state[x]).sum::<f64>())
        .sum();
    batch_rate * per_batch
}

/// `E[H_NP] = λ·E[cost a job accrues while nonpreemptible]`, the same
/// under every policy.
pub fn analytic_nonpreemptible_cost(chain: &JobChain, batch_rate: f64) -> f64 {
    nonpreemptible_flow(chain, batch_rate, |x| chain.holding_cost(x))
}

/// Expected-form `E[W_NP(r)]` on the table's grid, policy-independent for
/// the same reason.
pub fn analytic_nonpreemptible_rwork(chain: &JobChain, table: &RankTable, batch_rate: f64) -> Vec<f64> {
    (0..table.r_grid().len())
        .map(|k| nonpreemptible_flow(chain, batch_rate, |x| table.serve(x, k)))
        .collect()
}
