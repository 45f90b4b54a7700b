//! Experiment driver: JSON configs in, CSV/JSON artifacts out.
//!
//! Subcommands: `solve` (refinement with a V-cycle inner solver), `sweep`
//! (one solve per axis point with a fitted floor-scaling slope), `bounds`
//! (predicted-versus-measured table), `fmg` (per-level accuracy table) and
//! `gen` (Matrix Market dumps). Exit codes: 0 success, 1 usage or I/O
//! failure, 2 mathematical failure.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bounds::{self, BoundReport};
use crate::cycles::CycleTrace;
use crate::error::{Error, Result};
use crate::fpemu::PrecisionSpec;
use crate::hierarchy::{self, Hierarchy, PrecisionPolicy, PrecisionTriple};
use crate::probgen::ModelProblem;
use crate::refine::{self, IrOptions, SolveReport, TgInner, VCycleInner};
use crate::smoothers::SmootherConfig;
use crate::sparse::io as mmio;

fn default_seed() -> u64 {
    42
}

fn default_max_iter() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    /// Interior points for line problems, side length for square ones.
    pub n: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecisionsConfig {
    pub high: PrecisionSpec,
    pub work: PrecisionSpec,
    pub low: PrecisionSpec,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    #[default]
    Uniform,
    KappaMatched,
    FixedLadder,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    #[default]
    IrV,
    IrTg,
    Fmg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Problem sizes.
    Size,
    /// Work-precision significand widths.
    WorkBits,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhsKind {
    #[default]
    Manufactured,
    Random,
}

/// Schema-validated experiment description; unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    /// 0 coarsens until at most 7 unknowns remain.
    #[serde(default)]
    pub levels: usize,
    #[serde(default)]
    pub smoother: SmootherConfig,
    pub precisions: PrecisionsConfig,
    #[serde(default)]
    pub policy: PolicyName,
    /// Target for the kappa-matched policy: `kappa_j * eps_low_j <= target`.
    #[serde(default)]
    pub policy_target: Option<f64>,
    /// Low-precision widths (coarsest first) for the fixed-ladder policy.
    #[serde(default)]
    pub ladder: Option<Vec<u32>>,
    #[serde(default)]
    pub solver: SolverKind,
    /// Refinement cycles per level for `fmg`; 0 derives the minimal count.
    #[serde(default)]
    pub n_cycles: usize,
    /// Residual tolerance; absent means run to stagnation.
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub rhs: RhsKind,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn policy(&self) -> Result<PrecisionPolicy> {
        Ok(match self.policy {
            PolicyName::Uniform => PrecisionPolicy::Uniform,
            PolicyName::KappaMatched => PrecisionPolicy::KappaMatched {
                target: self.policy_target.unwrap_or(0.0625),
            },
            PolicyName::FixedLadder => PrecisionPolicy::FixedLadder {
                low_bits: self
                    .ladder
                    .clone()
                    .ok_or_else(|| Error::Config("fixed-ladder policy needs `ladder`".into()))?,
            },
        })
    }

    pub fn triple(&self) -> Result<PrecisionTriple> {
        PrecisionTriple::new(
            self.precisions.high,
            self.precisions.work,
            self.precisions.low,
        )
    }

    fn build(&self, size: usize) -> Result<(ModelProblem, Hierarchy)> {
        let problem = ModelProblem::by_name(&self.problem.name, size)?;
        let hier = hierarchy::build_hierarchy(
            &problem,
            self.levels,
            &self.policy()?,
            self.triple()?,
            &self.smoother,
        )?;
        Ok((problem, hier))
    }

    fn rhs_for(&self, problem: &ModelProblem, seed: u64) -> Vec<f64> {
        match self.rhs {
            RhsKind::Manufactured => problem.b.clone(),
            RhsKind::Random => {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                (0..problem.a.n()).map(|_| rng.random::<f64>() - 0.5).collect()
            }
        }
    }
}

/// Outcome of one `solve` run plus everything the CSV/JSON writers need.
struct SolveOutcome {
    report: SolveReport,
    traces: Vec<CycleTrace>,
    kappa: f64,
    tau: f64,
    chi: f64,
    rho_plus_delta: f64,
    rho_star_v: f64,
}

fn run_ir(cfg: &ExperimentConfig, size: usize, record_traces: bool) -> Result<SolveOutcome> {
    let (problem, hier) = cfg.build(size)?;
    let b = cfg.rhs_for(&problem, cfg.seed);
    let stats = hier.finest().a.estimate_stats()?;
    let (_, rho_star_v) = bounds::measure_rho_star(&hier)?;
    let triple = cfg.triple()?;
    let ir = bounds::eval_ir_bounds(
        &stats,
        hier.finest().a.m_a(),
        rho_star_v.min(1.0 - 1e-12),
        triple.work.unit_roundoff(),
        triple.high.unit_roundoff(),
    )?;
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = cfg
        .tol
        .unwrap_or(1e-2 * ir.chi * b_norm)
        .max(f64::MIN_POSITIVE);
    let reference = hier.finest().a.solve_carrier(&b)?;
    let opts = IrOptions {
        tol,
        max_iter: cfg.max_iter,
        record_traces,
    };
    let (x, report, traces) = match cfg.solver {
        SolverKind::IrV => {
            let inner = VCycleInner::finest(&hier);
            refine::ir_solve(&hier.finest().a, &b, &inner, triple, opts, &vec![0.0; b.len()], &reference)?
        }
        SolverKind::IrTg => {
            let inner = TgInner { hier: &hier };
            refine::ir_solve(&hier.finest().a, &b, &inner, triple, opts, &vec![0.0; b.len()], &reference)?
        }
        SolverKind::Fmg => {
            return Err(Error::Config(
                "solver `fmg` belongs to the fmg subcommand".into(),
            ))
        }
    };
    let _ = x;
    Ok(SolveOutcome {
        report,
        traces,
        kappa: stats.kappa,
        tau: ir.tau,
        chi: ir.chi,
        rho_plus_delta: rho_star_v + ir.delta_rho_ir,
        rho_star_v,
    })
}

fn write_history_csv(path: &Path, report: &SolveReport) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "iteration,rel_energy_error,residual_norm")?;
    let rows = report.error_energy.len().max(report.residual_norms.len());
    for i in 0..rows {
        let e = report
            .error_energy
            .get(i)
            .map(|v| v.to_string())
            .unwrap_or_default();
        let r = report
            .residual_norms
            .get(i)
            .map(|v| v.to_string())
            .unwrap_or_default();
        writeln!(f, "{i},{e},{r}")?;
    }
    Ok(())
}

fn write_traces(path: &Path, traces: &[CycleTrace]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for (cycle, trace) in traces.iter().enumerate() {
        for visit in &trace.visits {
            let mut v = serde_json::to_value(visit).map_err(|e| Error::Config(e.to_string()))?;
            v["cycle"] = json!(cycle);
            writeln!(f, "{v}")?;
        }
    }
    Ok(())
}

pub fn cmd_solve(cfg: &ExperimentConfig, out_dir: &Path, trace: bool) -> Result<i32> {
    fs::create_dir_all(out_dir)?;
    let outcome = run_ir(cfg, cfg.problem.n, trace)?;
    write_history_csv(&out_dir.join("history.csv"), &outcome.report)?;
    if trace {
        write_traces(&out_dir.join("trace.jsonl"), &outcome.traces)?;
    }
    let report = json!({
        "config": cfg,
        "kappa": outcome.kappa,
        "tau": outcome.tau,
        "predicted_chi": outcome.chi,
        "predicted_rate": outcome.rho_plus_delta,
        "rho_star_v": outcome.rho_star_v,
        "solve": outcome.report,
    });
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))? + "\n",
    )?;
    let r = &outcome.report;
    println!(
        "solve: {} n={} iterations={} converged={} floor={:e} measured_rho={:.4}",
        cfg.problem.name, cfg.problem.n, r.iterations, r.converged, r.floor, r.measured_rho
    );
    if r.diverged() {
        eprintln!("outer iteration diverged");
        return Ok(2);
    }
    Ok(0)
}

struct SweepRow {
    n: usize,
    work_bits: u32,
    kappa: f64,
    tau: f64,
    floor: f64,
    measured_rho: f64,
    chi: f64,
    rho_plus_delta: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out_dir: &Path, threads: usize) -> Result<i32> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("sweep subcommand needs a `sweep` section".into()))?;
    fs::create_dir_all(out_dir)?;
    let points: Vec<(usize, ExperimentConfig, usize)> = sweep
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut point_cfg = cfg.clone();
            let size = match sweep.axis {
                SweepAxis::Size => v,
                SweepAxis::WorkBits => {
                    point_cfg.precisions.work = PrecisionSpec::new(v as u32)?;
                    cfg.problem.n
                }
            };
            Ok((i, point_cfg, size))
        })
        .collect::<Result<_>>()?;

    let results: Mutex<Vec<Option<Result<SweepRow>>>> =
        Mutex::new((0..points.len()).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    let width = threads.max(1).min(points.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..width {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= points.len() {
                    break;
                }
                let (idx, point_cfg, size) = &points[i];
                let row = run_ir(point_cfg, *size, false).map(|o| SweepRow {
                    n: *size,
                    work_bits: point_cfg.precisions.work.bits(),
                    kappa: o.kappa,
                    tau: o.tau,
                    floor: o.report.floor,
                    measured_rho: o.report.measured_rho,
                    chi: o.chi,
                    rho_plus_delta: o.rho_plus_delta,
                });
                results.lock().unwrap()[*idx] = Some(row);
            });
        }
    });

    let rows: Vec<SweepRow> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("all sweep points visited"))
        .collect::<Result<_>>()?;

    let mut f = fs::File::create(out_dir.join("sweep.csv"))?;
    writeln!(
        f,
        "n,work_bits,kappa,tau,floor,measured_rho,predicted_chi,predicted_rho_plus_delta"
    )?;
    for r in &rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.n, r.work_bits, r.kappa, r.tau, r.floor, r.measured_rho, r.chi, r.rho_plus_delta
        )?;
    }
    let slope = loglog_slope(
        &rows
            .iter()
            .map(|r| (r.tau, r.floor))
            .collect::<Vec<_>>(),
    );
    let summary = json!({
        "config": cfg,
        "points": rows.len(),
        "floor_vs_tau_loglog_slope": slope,
    });
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))? + "\n",
    )?;
    println!(
        "sweep: {} points, floor-vs-tau slope {}",
        rows.len(),
        slope.map(|s| format!("{s:.3}")).unwrap_or_else(|| "n/a".into())
    );
    Ok(0)
}

pub fn cmd_bounds(cfg: &ExperimentConfig, out_dir: &Path) -> Result<i32> {
    fs::create_dir_all(out_dir)?;
    let (problem, hier) = cfg.build(cfg.problem.n)?;
    let b = cfg.rhs_for(&problem, cfg.seed);
    let n_cycles = if cfg.n_cycles > 0 { Some(cfg.n_cycles) } else { None };
    let report = BoundReport::evaluate(&hier, &b, n_cycles, cfg.seed)?;
    fs::write(
        out_dir.join("bounds.json"),
        serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))? + "\n",
    )?;
    print_bounds_table(&report);
    if let Some(err) = &report.v_error {
        eprintln!("multilevel rate bound unavailable: {err}");
        return Ok(2);
    }
    Ok(0)
}

fn print_bounds_table(r: &BoundReport) {
    println!("bounds: {} with {} levels", r.problem, r.levels);
    println!("{:<34} {:>14} {:>14}", "quantity", "predicted", "measured");
    let row = |name: &str, p: Option<f64>, m: Option<f64>| {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into());
        println!("{:<34} {:>14} {:>14}", name, fmt(p), fmt(m));
    };
    row("gamma", Some(r.gamma), None);
    row("vartheta", r.vartheta, None);
    row("rho*_tg (dense oracle)", Some(r.rho_star_tg), None);
    row("rho*_v (dense oracle)", Some(r.rho_star_v), None);
    row(
        "tg rate bound rho*+delta",
        r.tg.map(|t| r.rho_star_tg + t.delta_rho_tg),
        r.measured_tg_factor,
    );
    row(
        "v rate bound rho*+delta",
        r.v.map(|v| r.rho_star_v + v.delta_rho_v),
        Some(r.measured_v_factor),
    );
    row("delta_rho_ir", Some(r.ir.delta_rho_ir), None);
    row("chi (limiting accuracy)", Some(r.ir.chi), None);
    row(
        "smoother alpha ratio (<= 1)",
        Some(1.0),
        Some(r.measured_alpha_ratio),
    );
    row("C (measured)", r.c_measured, None);
    if let Some(f) = &r.fmg {
        row("fmg n_min", Some(f.n_min as f64), None);
        for fr in &f.rows {
            println!(
                "  level {:>2}: lhs {:>12.4e} <= rhs {:>12.4e} : {}",
                fr.level,
                fr.lhs,
                fr.rhs,
                if fr.holds { "holds" } else { "violated" }
            );
        }
    } else if let Some(e) = &r.fmg_error {
        println!("  fmg condition unavailable: {e}");
    }
}

pub fn cmd_fmg(cfg: &ExperimentConfig, out_dir: &Path) -> Result<i32> {
    fs::create_dir_all(out_dir)?;
    let (problem, hier) = cfg.build(cfg.problem.n)?;
    let b = cfg.rhs_for(&problem, cfg.seed);
    let q = hier.disc_q;
    let c = bounds::measure_c(&hier, &b, q)?;
    let n = if cfg.n_cycles > 0 {
        cfg.n_cycles
    } else {
        let (_, rho_star_v) = bounds::measure_rho_star(&hier)?;
        bounds::minimal_cycles(&hier, q, rho_star_v)?
    };
    let (_, reports) = refine::fmg(&hier, &b, n)?;
    let mut f = fs::File::create(out_dir.join("fmg_levels.csv"))?;
    writeln!(f, "level,h,rel_energy_error,c_h_q,pass")?;
    println!("fmg: {} n_cycles={} C={:.4e} q={}", cfg.problem.name, n, c, q);
    let mut all_pass = true;
    for (idx, rep) in reports.iter().enumerate() {
        let level = hier.level(idx + 1);
        let err = *rep.error_energy.last().unwrap();
        let target = c * level.h.powf(q);
        let pass = err <= target;
        all_pass &= pass;
        writeln!(f, "{},{},{},{},{}", idx + 1, level.h, err, target, pass)?;
        println!(
            "  level {:>2}: h={:<10.4e} err={:<12.4e} target={:<12.4e} {}",
            idx + 1,
            level.h,
            err,
            target,
            if pass { "pass" } else { "fail" }
        );
    }
    let report = json!({
        "config": cfg,
        "n_cycles": n,
        "c_measured": c,
        "q": q,
        "levels": reports,
        "all_pass": all_pass,
    });
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))? + "\n",
    )?;
    Ok(0)
}

pub fn cmd_gen(cfg: &ExperimentConfig, out_dir: &Path) -> Result<i32> {
    fs::create_dir_all(out_dir)?;
    let (problem, hier) = cfg.build(cfg.problem.n)?;
    mmio::write_matrix_file(&out_dir.join("A.mtx"), &problem.a)?;
    mmio::write_vector_file(&out_dir.join("b.txt"), &problem.b)?;
    if hier.num_levels() > 1 {
        for level in hier.levels() {
            mmio::write_matrix_file(
                &out_dir.join(format!("A_{}.mtx", level.index)),
                &level.a,
            )?;
            if let Some(interp) = &level.interp {
                let mut f = fs::File::create(out_dir.join(format!("P_{}.mtx", level.index)))?;
                mmio::write_matrix_market_general(&mut f, interp.p())?;
            }
        }
    }
    fs::write(
        out_dir.join("hierarchy.json"),
        serde_json::to_string_pretty(&hier.summary_json())
            .map_err(|e| Error::Config(e.to_string()))?
            + "\n",
    )?;
    println!(
        "gen: wrote {} level(s) of {} to {}",
        hier.num_levels(),
        cfg.problem.name,
        out_dir.display()
    );
    Ok(0)
}

/// Maps an error to the documented exit code.
pub fn exit_code_for(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

/// Resolves the worker count: flag, then `MPMG_THREADS`, then 1.
pub fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("MPMG_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(1)
    .max(1)
}

pub fn out_dir_or_default(out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from("mpmg-out"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config(extra: &str) -> String {
        format!(
            r#"{{
  "problem": {{ "name": "poisson1d", "n": 15 }},
  "levels": 2,
  "precisions": {{ "high": "fp64", "work": "fp32", "low": "fp16" }}{extra}
}}"#
        )
    }

    #[test]
    fn config_parses_with_aliases_and_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(&minimal_config("")).unwrap();
        assert_eq!(cfg.precisions.high.bits(), 53);
        assert_eq!(cfg.precisions.work.bits(), 24);
        assert_eq!(cfg.precisions.low.bits(), 11);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.max_iter, 200);
        assert_eq!(cfg.solver, SolverKind::IrV);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = minimal_config(",\n  \"unknown_field\": 1");
        assert!(serde_json::from_str::<ExperimentConfig>(&text).is_err());
    }

    #[test]
    fn fixed_ladder_requires_ladder_key() {
        let mut cfg: ExperimentConfig = serde_json::from_str(&minimal_config("")).unwrap();
        cfg.policy = PolicyName::FixedLadder;
        assert!(cfg.policy().is_err());
        cfg.ladder = Some(vec![8, 11]);
        assert!(matches!(
            cfg.policy().unwrap(),
            PrecisionPolicy::FixedLadder { .. }
        ));
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (1..6).map(|i| (i as f64, (i as f64).powi(2))).collect();
        let s = loglog_slope(&pts).unwrap();
        assert!((s - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn threads_resolution_order() {
        assert_eq!(resolve_threads(Some(3)), 3);
        assert_eq!(resolve_threads(None).max(1), resolve_threads(None));
    }
}
