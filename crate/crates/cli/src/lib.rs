//! Command-line front end: rank tables, simulations, policy comparisons and
//! the verification suite, driven by a JSON scenario config.

pub mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use gittins_sched::experiment::{dominance, run_policy, ExperimentError, PolicyResult};
use gittins_sched::gittins::{compute_rank_table, enumerate_rank, log_grid, shape_check, solve_game, GameError, RankTable};
use gittins_sched::jobmodel::ModelError;
use gittins_sched::metrics::{
    analytic_nonpreemptible_cost, invariance_checks, little_law_check, MetricsError, MetricsReport,
};
use gittins_sched::policies::PolicyKind;
use gittins_sched::scenarios;
use gittins_sched::simengine::{EventSink, NdjsonSink, NullSink, SimOutcome};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use config::{ModelRef, RGridConfig, Resolved, ScenarioConfig, Spacing};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("invalid model: {0}")]
    Model(ModelError),
    #[error("invalid model:\n  {}", .0.join("\n  "))]
    InvalidModel(Vec<String>),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Io(String),
    #[error("{0} check(s) failed")]
    VerificationFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::VerificationFailed(_) => EXIT_VERIFY_FAILED,
            _ => EXIT_INVALID,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "gittins-sched", version, about = "Gittins scheduling: ranks, simulation and verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Scenario config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config's `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Added to every seed in the config.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed_offset: u64,
    /// Print nothing but errors and warnings.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the rank table of the model (ranks.csv).
    Rank,
    /// Simulate every policy and seed (metrics.csv, rwork.csv).
    Simulate,
    /// Simulate and compare policies (adds comparison.csv and a verdict).
    Compare,
    /// Run the property suite on the model; exits 1 if any check fails.
    Verify,
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run_cli(cli: &Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Invalid("--config <path> is required".into()))?;
    let mut config = ScenarioConfig::load(path)?;
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    for s in &mut config.seeds {
        *s = s
            .checked_add(cli.seed_offset)
            .ok_or_else(|| CliError::Invalid("seed offset overflows".into()))?;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let resolved = config.resolve(base)?;
    let out = Output { quiet: cli.quiet };
    match cli.command {
        Command::Rank => cmd_rank(&resolved, &out),
        Command::Simulate => cmd_simulate(&resolved, &out).map(|_| ()),
        Command::Compare => cmd_compare(&resolved, &out),
        Command::Verify => cmd_verify(&resolved, &out),
    }
}

/// Console output, silenced by `--quiet`.
pub struct Output {
    pub quiet: bool,
}

impl Output {
    fn line(&self, s: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", s.as_ref());
        }
    }
}

fn out_dir(r: &Resolved) -> Result<&Path, CliError> {
    let dir = r.config.output_dir.as_path();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(dir)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(io_err(path))
}

fn rank_table(r: &Resolved) -> Result<RankTable, CliError> {
    Ok(compute_rank_table(&r.chain, &r.config.rgrid(), r.config.tolerance)?)
}

// ---------------------------------------------------------------------------
// rank

#[derive(Debug, Serialize)]
pub struct RankRow {
    pub state_id: String,
    pub preemptible: bool,
    pub holding_cost: f64,
    pub rank: f64,
    pub index: f64,
}

pub fn rank_rows(r: &Resolved, table: &RankTable) -> Vec<RankRow> {
    (0..r.chain.len())
        .map(|x| RankRow {
            state_id: r.chain.label(x).to_string(),
            preemptible: r.chain.is_preemptible(x),
            holding_cost: r.chain.holding_cost(x),
            rank: table.rank(x),
            index: table.index(x),
        })
        .collect()
}

pub fn cmd_rank(r: &Resolved, out: &Output) -> Result<(), CliError> {
    let table = rank_table(r)?;
    let rows = rank_rows(r, &table);
    let path = out_dir(r)?.join("ranks.csv");
    write_csv(&path, &rows)?;
    out.line(format!("{:<20} {:>5} {:>12} {:>14} {:>14}", "state", "pre", "cost", "rank", "index"));
    for row in &rows {
        out.line(format!(
            "{:<20} {:>5} {:>12.6} {:>14.8} {:>14.8}",
            row.state_id, row.preemptible, row.holding_cost, row.rank, row.index
        ));
    }
    out.line(format!("wrote {}", path.display()));
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Serialize)]
pub struct MetricsRow<'a> {
    pub policy: &'a str,
    pub scenario: &'a str,
    pub seed: u64,
    #[serde(rename = "mean_H")]
    pub mean_h: f64,
    #[serde(rename = "ci_H")]
    pub ci_h: f64,
    #[serde(rename = "mean_HP")]
    pub mean_hp: f64,
    #[serde(rename = "mean_HNP")]
    pub mean_hnp: f64,
    #[serde(rename = "mean_N")]
    pub mean_n: f64,
    #[serde(rename = "mean_T")]
    pub mean_t: f64,
    #[serde(rename = "integral_HP")]
    pub integral_hp: f64,
    pub rel_err_integral: f64,
}

#[derive(Debug, Serialize)]
pub struct RworkRow<'a> {
    pub policy: &'a str,
    pub r: f64,
    #[serde(rename = "mean_WP")]
    pub mean_wp: f64,
    pub ci: f64,
    #[serde(rename = "mean_WNP")]
    pub mean_wnp: f64,
}

/// Per-policy outcomes of a simulate run.
pub struct Simulation {
    pub table: RankTable,
    pub results: Vec<PolicyResult>,
}

fn simulate(r: &Resolved, out: &Output, policies: &[PolicyKind]) -> Result<Simulation, CliError> {
    let table = rank_table(r)?;
    let seeds = &r.config.seeds;
    let log_dir = if r.config.event_log { Some(out_dir(r)?.to_path_buf()) } else { None };
    let jobs: Vec<(PolicyKind, u64)> = policies
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&s| (k, s)))
        .collect();
    let plan = gittins_sched::experiment::RunPlan {
        batch_rate: r.batch_rate,
        horizon: r.config.horizon,
        warmup: r.config.warmup,
        seeds: seeds.clone(),
    };
    let outcomes = jobs
        .par_iter()
        .map(|&(kind, seed)| -> Result<SimOutcome, CliError> {
            let cfg = plan.config(seed);
            let order = Some(r.priority_order.as_slice());
            match &log_dir {
                Some(dir) => {
                    let path = dir.join(format!("events_{}_{seed}.ndjson", kind.name()));
                    let file = File::create(&path).map_err(io_err(&path))?;
                    let mut sink = NdjsonSink::new(BufWriter::new(file));
                    let o = run_policy(&r.chain, &table, kind, order, &cfg, &mut sink as &mut dyn EventSink)?;
                    sink.finish().map_err(io_err(&path))?;
                    Ok(o)
                }
                None => Ok(run_policy(&r.chain, &table, kind, order, &cfg, &mut NullSink)?),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(w) = outcomes.iter().flat_map(|o| &o.warnings).next() {
        eprintln!("warning: {w}");
    }
    let mut outcomes = outcomes.into_iter();
    let mut results = Vec::new();
    for &kind in policies {
        let runs: Vec<SimOutcome> = outcomes.by_ref().take(seeds.len()).collect();
        let reports: Vec<MetricsReport> = runs.iter().map(|o| o.report.clone()).collect();
        results.push(PolicyResult {
            kind,
            pooled: MetricsReport::merge(&reports)?,
            runs,
        });
    }
    out.line(format!(
        "scenario {}: {} states, load {:.4}, {} policies x {} seeds, horizon {}",
        r.config.name,
        r.chain.len(),
        r.batch_rate * r.chain.mean_batch_size() * r.chain.mean_service().unwrap_or(f64::NAN),
        policies.len(),
        seeds.len(),
        r.config.horizon
    ));
    Ok(Simulation { table, results })
}

fn write_simulation(r: &Resolved, sim: &Simulation) -> Result<(PathBuf, PathBuf), CliError> {
    let dir = out_dir(r)?;
    let mut metrics = Vec::new();
    let mut rwork = Vec::new();
    for res in &sim.results {
        for (o, &seed) in res.runs.iter().zip(&r.config.seeds) {
            let m = &o.report;
            metrics.push(MetricsRow {
                policy: res.kind.name(),
                scenario: &r.config.name,
                seed,
                mean_h: m.mean_h.mean,
                ci_h: m.mean_h.half_width,
                mean_hp: m.mean_hp.mean,
                mean_hnp: m.mean_hnp.mean,
                mean_n: m.mean_n.mean,
                mean_t: m.mean_t.mean,
                integral_hp: m.integral_hp,
                rel_err_integral: m.rel_err_integral,
            });
        }
        let p = &res.pooled;
        for (k, &rv) in p.r_grid.iter().enumerate() {
            rwork.push(RworkRow {
                policy: res.kind.name(),
                r: rv,
                mean_wp: p.wp_curve[k].mean,
                ci: p.wp_curve[k].half_width,
                mean_wnp: p.wnp_curve[k].mean,
            });
        }
    }
    let mp = dir.join("metrics.csv");
    let rp = dir.join("rwork.csv");
    write_csv(&mp, &metrics)?;
    write_csv(&rp, &rwork)?;
    Ok((mp, rp))
}

pub fn cmd_simulate(r: &Resolved, out: &Output) -> Result<Simulation, CliError> {
    let sim = simulate(r, out, &r.config.policies)?;
    let (mp, rp) = write_simulation(r, &sim)?;
    out.line(format!("{:<12} {:>6} {:>12} {:>12} {:>10}", "policy", "seed", "E[H]", "ci", "E[N]"));
    for res in &sim.results {
        for (o, seed) in res.runs.iter().zip(&r.config.seeds) {
            out.line(format!(
                "{:<12} {:>6} {:>12.6} {:>12.6} {:>10.4}",
                res.kind.name(),
                seed,
                o.report.mean_h.mean,
                o.report.mean_h.half_width,
                o.report.mean_n.mean
            ));
        }
    }
    out.line(format!("wrote {} and {}", mp.display(), rp.display()));
    Ok(sim)
}

// ---------------------------------------------------------------------------
// compare

#[derive(Debug, Serialize)]
pub struct ComparisonRow<'a> {
    pub policy: &'a str,
    #[serde(rename = "mean_H")]
    pub mean_h: f64,
    #[serde(rename = "ci_H")]
    pub ci_h: f64,
    #[serde(rename = "mean_HNP")]
    pub mean_hnp: f64,
    #[serde(rename = "ci_HNP")]
    pub ci_hnp: f64,
    #[serde(rename = "mean_T")]
    pub mean_t: f64,
    /// Whether Gittins's E[H] is at most this policy's upper bound, and
    /// likewise E[W(r)] at every r. Empty without a Gittins run.
    pub gittins_dominates: String,
}

pub fn cmd_compare(r: &Resolved, out: &Output) -> Result<(), CliError> {
    if r.config.policies.len() < 2 {
        return Err(CliError::Invalid("compare needs at least two policies".into()));
    }
    let sim = simulate(r, out, &r.config.policies)?;
    write_simulation(r, &sim)?;
    let verdict = dominance(&sim.results);
    let named: Vec<(&str, &MetricsReport)> = sim.results.iter().map(|p| (p.kind.name(), &p.pooled)).collect();
    let inv = invariance_checks(&named)?;

    let rows: Vec<ComparisonRow> = sim
        .results
        .iter()
        .map(|p| ComparisonRow {
            policy: p.kind.name(),
            mean_h: p.pooled.mean_h.mean,
            ci_h: p.pooled.mean_h.half_width,
            mean_hnp: p.pooled.mean_hnp.mean,
            ci_hnp: p.pooled.mean_hnp.half_width,
            mean_t: p.pooled.mean_t.mean,
            gittins_dominates: match &verdict {
                None => String::new(),
                Some(_) if p.kind == PolicyKind::Gittins => String::new(),
                Some(v) => {
                    let ok = !v.holding.contains(&p.kind) && !v.rwork.iter().any(|(k, _)| *k == p.kind);
                    if ok { "yes" } else { "no" }.to_string()
                }
            },
        })
        .collect();
    let path = out_dir(r)?.join("comparison.csv");
    write_csv(&path, &rows)?;

    out.line(format!(
        "{:<12} {:>12} {:>10} {:>12} {:>10} {:>10}",
        "policy", "E[H]", "±95%", "E[H_NP]", "±95%", "E[T]"
    ));
    for row in &rows {
        out.line(format!(
            "{:<12} {:>12.6} {:>10.6} {:>12.6} {:>10.6} {:>10.4}",
            row.policy, row.mean_h, row.ci_h, row.mean_hnp, row.ci_hnp, row.mean_t
        ));
    }
    let mut failed = 0;
    match &verdict {
        Some(v) if v.pass() => out.line("gittins dominance: PASS"),
        Some(v) => {
            failed += 1;
            println!(
                "gittins dominance: FAIL (E[H] exceeds upper bound of {:?}; E[W(r)] at {} points)",
                v.holding.iter().map(|k| k.name()).collect::<Vec<_>>(),
                v.rwork.len()
            );
        }
        None => out.line("gittins dominance: not applicable (no gittins run)"),
    }
    if inv.ok() {
        out.line("nonpreemptible invariance: PASS");
    } else {
        failed += 1;
        println!(
            "nonpreemptible invariance: FAIL (E[H_NP] conflicts {:?}; E[W_NP(r)] conflicts {})",
            inv.hnp_conflicts,
            inv.wnp_conflicts.len()
        );
    }
    out.line(format!("wrote {}", path.display()));
    if failed > 0 {
        return Err(CliError::VerificationFailed(failed));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verify

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            pass: measured <= tolerance,
            measured,
            tolerance,
            detail: detail.into(),
        }
    }

    fn skipped(name: impl Into<String>, why: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            pass: true,
            measured: f64::NAN,
            tolerance: f64::NAN,
            detail: format!("skipped: {}", why.into()),
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Hand-solved two-state game: `V(a, r) = min(2r, 1)`, rank 0.5.
fn fixture_checks() -> Result<Vec<Check>, CliError> {
    let chain = scenarios::two_state();
    let table = compute_rank_table(&chain, &gittins_sched::gittins::RGrid::default(), 1e-10)?;
    let mut v_err: f64 = 0.0;
    let mut y_wrong = 0usize;
    for r in log_grid(1e-3, 1e3, 200)? {
        let s = solve_game(&chain, r)?;
        v_err = v_err.max((s.cost_to_go[0] - (2.0 * r).min(1.0)).abs());
        y_wrong += usize::from(s.give_up[0] != (r <= 0.5));
    }
    Ok(vec![
        Check::new("fixture.rank", (table.rank(0) - 0.5).abs(), 1e-10, "two-state rank = 0.5"),
        Check::new("fixture.cost_to_go", v_err, 1e-10, "V(a,r) = min(2r, 1)"),
        Check::new("fixture.give_up_set", y_wrong as f64, 0.0, "Y*(r) = {a} iff r <= 0.5"),
    ])
}

fn model_checks(r: &Resolved, table: &RankTable) -> Result<Vec<Check>, CliError> {
    let mut checks = Vec::new();
    let shape = shape_check(&r.chain, table.r_grid())?;
    checks.push(Check::new("game.monotone", shape.monotonicity, 1e-9, "V(x,.) nondecreasing"));
    checks.push(Check::new("game.concave", shape.concavity, 1e-9, "V(x,.) concave"));
    checks.push(Check::new(
        "game.derivative",
        shape.derivative,
        1e-6,
        format!("dV/dr = h(x, Y*(r)) at {} points", shape.derivative_points),
    ));
    let pre = r.chain.preemptible_states().count();
    if pre <= 12 {
        let mut worst: f64 = 0.0;
        for x in 0..r.chain.len() {
            worst = worst.max(rel(table.rank(x), enumerate_rank(&r.chain, x)?));
        }
        checks.push(Check::new("rank.enumeration", worst, 1e-8, "bisection vs every give-up set"));
    } else {
        checks.push(Check::skipped("rank.enumeration", format!("{pre} preemptible states")));
    }
    Ok(checks)
}

fn simulation_checks(r: &Resolved, sim: &Simulation) -> Result<Vec<Check>, CliError> {
    let mut checks = Vec::new();
    for p in &sim.results {
        checks.push(Check::new(
            format!("integral_identity.{}", p.kind.name()),
            p.pooled.rel_err_integral,
            0.05,
            format!("integral {:.6} vs E[H_P] {:.6}", p.pooled.integral_hp, p.pooled.mean_hp.mean),
        ));
        let mut worst: f64 = 0.0;
        let mut applicable = false;
        for o in &p.runs {
            if let Some(c) = little_law_check(&o.report) {
                applicable = true;
                worst = worst.max(if c.std_err > 0.0 { c.rel_err / c.std_err } else { 0.0 });
            }
        }
        checks.push(if applicable {
            Check::new(
                format!("little_law.{}", p.kind.name()),
                worst,
                3.0,
                "worst run, in standard errors",
            )
        } else {
            Check::skipped(format!("little_law.{}", p.kind.name()), "no arrivals")
        });
    }
    if let Some(g) = sim.results.iter().find(|p| p.kind == PolicyKind::Gittins) {
        let recycles: u64 = g.runs.iter().map(|o| o.summary.recycles).sum();
        let bad: u64 = g.runs.iter().map(|o| o.summary.recycles_with_rwork).sum();
        checks.push(Check::new(
            "recycle_at_zero",
            bad as f64,
            0.0,
            format!("{recycles} recycle events under gittins"),
        ));
    }
    if r.chain.has_nonpreemptible() {
        let named: Vec<(&str, &MetricsReport)> = sim.results.iter().map(|p| (p.kind.name(), &p.pooled)).collect();
        let inv = invariance_checks(&named)?;
        checks.push(Check::new(
            "invariance.ci_overlap",
            (inv.hnp_conflicts.len() + inv.wnp_conflicts.len()) as f64,
            0.0,
            "E[H_NP], E[W_NP(r)] CIs overlap across policies",
        ));
        let analytic = analytic_nonpreemptible_cost(&r.chain, r.batch_rate);
        let worst = sim
            .results
            .iter()
            .map(|p| rel(p.pooled.mean_hnp.mean, analytic))
            .fold(0.0, f64::max);
        checks.push(Check::new(
            "invariance.analytic_hnp",
            worst,
            0.03,
            format!("analytic E[H_NP] = {analytic:.6}"),
        ));
    }
    Ok(checks)
}

pub fn cmd_verify(r: &Resolved, out: &Output) -> Result<(), CliError> {
    let mut policies = vec![PolicyKind::Gittins, PolicyKind::Fcfs];
    for &k in &r.config.policies {
        if !policies.contains(&k) {
            policies.push(k);
        }
    }
    let mut checks = fixture_checks()?;
    let sim = simulate(r, out, &policies)?;
    checks.extend(model_checks(r, &sim.table)?);
    checks.extend(simulation_checks(r, &sim)?);

    let path = out_dir(r)?.join("verify.csv");
    write_csv(&path, &checks)?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    for c in &checks {
        let line = format!(
            "{} {:<32} measured {:<12.4e} tolerance {:<10.1e} {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance,
            c.detail
        );
        if c.pass {
            out.line(line);
        } else {
            println!("{line}");
        }
    }
    out.line(format!("{} checks, {failed} failed; wrote {}", checks.len(), path.display()));
    if failed > 0 {
        return Err(CliError::VerificationFailed(failed));
    }
    Ok(())
}
