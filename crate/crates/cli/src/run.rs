//! Run orchestration: hypothesis gate, experiment or plain solve, output emission.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use kdv_gauge::coefficients::{check_hypotheses, CoefficientSet, HypothesisReport};
use kdv_gauge::experiments::{
    self, BonaSmithParams, CommutatorParams, ContinuityParams, ExperimentKind, ExperimentReport, Pulse,
    SolitonParams, TransformConsistencyParams, Verdict, WavepacketParams, HYPOTHESIS_TIME_SAMPLES,
};
use kdv_gauge::gauge::{forward_transform, inverse_transform, GaugeBuilder};
use kdv_gauge::io;
use kdv_gauge::solver::{solve, weak_residual, EquationForm, Problem, SolverConfig, StepSize, TestField, TransformedProblem};
use kdv_gauge::spectral::{make_grid, Grid, SpectralState};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Largest monitored dissipation term accepted as "nonpositive".
pub const DISSIPATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub allow_hypothesis_violation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Error,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Error => 2,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Error => "error",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: Status,
    pub run_id: String,
    pub hypotheses: Option<HypothesisReport>,
    pub verdicts: Vec<Verdict>,
    pub error: Option<String>,
    pub files: Vec<String>,
}

/// Short content hash of everything that determines the outputs.
pub fn run_id(cfg: &RunConfig, opts: &RunOptions) -> String {
    let mut h = Sha256::new();
    h.update(cfg.config_hash.as_bytes());
    h.update(format!("\nseed={:?}\nallow={}\nversion={}", opts.seed, opts.allow_hypothesis_violation, env!("CARGO_PKG_VERSION")));
    hex::encode(&h.finalize()[..8])
}

struct SolvePlan {
    grid: Arc<Grid>,
    config: SolverConfig,
    initial: String,
    seed: u64,
}

enum Plan {
    Solve(SolvePlan),
    Soliton(SolitonParams),
    Consistency(TransformConsistencyParams),
    BonaSmith(BonaSmithParams),
    Wavepacket(WavepacketParams),
    Continuity(ContinuityParams),
    Commutator(CommutatorParams),
}

fn list_usize(cfg: &RunConfig, key: &str) -> Option<Vec<usize>> {
    cfg.param_list(key).map(|v| v.iter().map(|x| x.round().max(0.0) as usize).collect())
}

fn fixed_dt(cfg: &RunConfig) -> Option<f64> {
    match cfg.solver.dt {
        Some(StepSize::Fixed(dt)) => Some(dt),
        _ => None,
    }
}

impl Plan {
    fn new(cfg: &RunConfig, seed_override: Option<u64>) -> kdv_gauge::Result<Plan> {
        let g = &cfg.grid;
        let sv = &cfg.solver;
        let seed = seed_override.or(cfg.seed);
        Ok(match cfg.kind {
            None => {
                let grid = make_grid(g.half_width.unwrap_or(16.0 * PI), g.points.unwrap_or(512))?;
                let mut config = SolverConfig::new(sv.form, sv.dt.unwrap_or(StepSize::Auto), sv.t_final.unwrap_or(1.0));
                config.s = sv.s.unwrap_or(config.s);
                config.dealias = sv.dealias.unwrap_or(config.dealias);
                config.blowup_threshold = sv.blowup_threshold;
                config.monitor_stride = sv.monitor_stride.unwrap_or(config.monitor_stride);
                Plan::Solve(SolvePlan {
                    grid,
                    config,
                    initial: sv.initial.clone().unwrap_or_else(|| "0".into()),
                    seed: seed.unwrap_or(0),
                })
            }
            Some(ExperimentKind::SolitonBenchmark) => {
                let d = SolitonParams::default();
                Plan::Soliton(SolitonParams {
                    kappa: cfg.param_f64("kappa").unwrap_or(d.kappa),
                    half_width: g.half_width.unwrap_or(d.half_width),
                    grid_points: g.points.unwrap_or(d.grid_points),
                    dt: fixed_dt(cfg).unwrap_or(d.dt),
                    t_final: sv.t_final.unwrap_or(d.t_final),
                    dealias: sv.dealias.unwrap_or(d.dealias),
                    dt_sweep: cfg.param_list("dt_sweep").unwrap_or(d.dt_sweep),
                    dt_reference: cfg.param_f64("dt_reference").unwrap_or(d.dt_reference),
                    ..d
                })
            }
            Some(ExperimentKind::TransformConsistency) => {
                let d = TransformConsistencyParams::default();
                Plan::Consistency(TransformConsistencyParams {
                    set: if cfg.coefficients_given { cfg.coefficients.clone() } else { d.set.clone() },
                    half_width: g.half_width.unwrap_or(d.half_width),
                    n_values: list_usize(cfg, "n_values").unwrap_or(d.n_values.clone()),
                    t_final: sv.t_final.unwrap_or(d.t_final),
                    pulse: Pulse {
                        amplitude: cfg.param_f64("pulse_amplitude").unwrap_or(d.pulse.amplitude),
                        center: cfg.param_f64("pulse_center").unwrap_or(d.pulse.center),
                        width: cfg.param_f64("pulse_width").unwrap_or(d.pulse.width),
                    },
                    slices: cfg.param_usize("slices").unwrap_or(d.slices),
                    threshold: cfg.param_f64("threshold").unwrap_or(d.threshold),
                    seed: seed.unwrap_or(d.seed),
                })
            }
            Some(ExperimentKind::BonaSmith) => {
                let d = BonaSmithParams::default();
                Plan::BonaSmith(BonaSmithParams {
                    half_width: g.half_width.unwrap_or(d.half_width),
                    grid_points: g.points.unwrap_or(d.grid_points),
                    n_values: list_usize(cfg, "n_values").unwrap_or(d.n_values.clone()),
                    n_ref: cfg.param_usize("n_ref").unwrap_or(d.n_ref),
                    s: sv.s.unwrap_or(d.s),
                    amplitude: cfg.param_f64("amplitude").unwrap_or(d.amplitude),
                    t_final: sv.t_final.unwrap_or(d.t_final),
                    band_limit: cfg.param_f64("band_limit").or(d.band_limit),
                    slices: cfg.param_usize("slices").unwrap_or(d.slices),
                    step_fraction: cfg.param_f64("step_fraction").unwrap_or(d.step_fraction),
                    seed: seed.unwrap_or(d.seed),
                    ..d
                })
            }
            Some(ExperimentKind::Wavepacket) => {
                let d = WavepacketParams::default();
                let alpha = cfg.coefficients.alpha.constant_value().unwrap_or(d.alpha);
                Plan::Wavepacket(WavepacketParams {
                    half_width: g.half_width.unwrap_or(d.half_width),
                    grid_points: g.points.unwrap_or(d.grid_points),
                    alpha,
                    beta: cfg.param_f64("beta").unwrap_or(d.beta),
                    radius: cfg.param_f64("radius").unwrap_or(d.radius),
                    smoothing: cfg.param_f64("smoothing").unwrap_or(d.smoothing),
                    xi_values: cfg.param_list("xi_values").unwrap_or(d.xi_values.clone()),
                    envelope_width: cfg.param_f64("envelope_width").unwrap_or(d.envelope_width),
                    x_start: cfg.param_f64("x_start").unwrap_or(d.x_start),
                    x_end: cfg.param_f64("x_end").unwrap_or(d.x_end),
                    t_max: sv.t_final,
                    ..d
                })
            }
            Some(ExperimentKind::Continuity) => {
                let d = ContinuityParams::default();
                Plan::Continuity(ContinuityParams {
                    half_width: g.half_width.unwrap_or(d.half_width),
                    grid_points: g.points.unwrap_or(d.grid_points),
                    kappa: cfg.param_f64("kappa").unwrap_or(d.kappa),
                    e: cfg.param_f64("e").unwrap_or(d.e),
                    sizes: cfg.param_list("sizes").unwrap_or(d.sizes.clone()),
                    t_final: sv.t_final.unwrap_or(d.t_final),
                    s: sv.s.unwrap_or(d.s),
                    slices: cfg.param_usize("slices").unwrap_or(d.slices),
                    ..d
                })
            }
            Some(ExperimentKind::CommutatorSurvey) => {
                let d = CommutatorParams::default();
                Plan::Commutator(CommutatorParams {
                    half_width: g.half_width.unwrap_or(d.half_width),
                    grid_points: g.points.unwrap_or(d.grid_points),
                    seed: seed.unwrap_or(d.seed),
                    draws: cfg.param_usize("draws").unwrap_or(d.draws),
                    levels: cfg.param_list("levels").map(|v| v.iter().map(|x| *x as u64).collect()).unwrap_or(d.levels.clone()),
                    draws_per_level: cfg.param_usize("draws_per_level").unwrap_or(d.draws_per_level),
                    resonance_triples: cfg.param_usize("resonance_triples").unwrap_or(d.resonance_triples),
                    ..d
                })
            }
        })
    }

    /// Coefficients, grid and horizon that the hypothesis gate screens.
    fn hypothesis_scope(&self, cfg: &RunConfig) -> kdv_gauge::Result<(CoefficientSet, Grid, f64)> {
        Ok(match self {
            Plan::Solve(p) => (cfg.coefficients.clone(), (*p.grid).clone(), p.config.t_final),
            Plan::Consistency(p) => {
                let n = *p.n_values.first().ok_or_else(|| kdv_gauge::Error::Invalid("n_values is empty".into()))?;
                (p.set.clone(), Grid::new(p.half_width, n)?, p.t_final)
            }
            Plan::Wavepacket(p) => {
                let longest = p.xi_values.iter().map(|xi| (p.x_start - p.x_end) / (3.0 * p.alpha * xi * xi)).fold(0.0, f64::max);
                (p.coefficient_set()?, Grid::new(p.half_width, p.grid_points)?, longest.max(f64::MIN_POSITIVE))
            }
            Plan::Soliton(p) => (cfg.coefficients.clone(), Grid::new(p.half_width, p.grid_points)?, p.t_final),
            Plan::BonaSmith(p) => (cfg.coefficients.clone(), Grid::new(p.half_width, p.grid_points)?, p.t_final),
            Plan::Continuity(p) => (cfg.coefficients.clone(), Grid::new(p.half_width, p.grid_points)?, p.t_final),
            Plan::Commutator(p) => (cfg.coefficients.clone(), Grid::new(p.half_width, p.grid_points)?, 1.0),
        })
    }

    fn execute(&self, cfg: &RunConfig) -> kdv_gauge::Result<Output> {
        let report = match self {
            Plan::Solve(p) => return run_solve(cfg, p),
            Plan::Soliton(p) => experiments::run_soliton_benchmark(p)?,
            Plan::Consistency(p) => experiments::run_transform_consistency(p)?,
            Plan::BonaSmith(p) => experiments::run_bona_smith(p)?,
            Plan::Wavepacket(p) => experiments::run_wavepacket(p)?,
            Plan::Continuity(p) => experiments::run_continuity(p)?,
            Plan::Commutator(p) => experiments::run_commutator_survey(p)?,
        };
        Ok(Output::from_report(report))
    }
}

struct OutTable {
    name: String,
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

#[derive(Default)]
struct Output {
    tables: Vec<OutTable>,
    verdicts: Vec<Verdict>,
    fits: Value,
    notes: Vec<String>,
    extra: Value,
    snapshot: Option<(SpectralState, f64)>,
}

impl Output {
    fn from_report(r: ExperimentReport) -> Self {
        let fits = r.fits.iter().map(|f| (f.name.clone(), serde_json::to_value(f.fit).unwrap_or(Value::Null))).collect();
        Output {
            tables: r.tables.into_iter().map(|t| OutTable { name: t.name, columns: t.columns, rows: t.rows }).collect(),
            verdicts: r.verdicts,
            fits: Value::Object(fits),
            notes: r.notes,
            extra: Value::Null,
            snapshot: None,
        }
    }
}

fn table(name: &str, columns: &[&str], rows: Vec<Vec<f64>>) -> OutTable {
    OutTable { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows }
}

fn run_solve(cfg: &RunConfig, p: &SolvePlan) -> kdv_gauge::Result<Output> {
    let init = kdv_gauge::coefficients::CoefficientExpr::parse(&p.initial)?;
    init.screen(&[0.0], p.grid.nodes())?;
    let u0 = SpectralState::from_fn(&p.grid, |x| init.value(0.0, x));
    let mut out = Output::default();
    let (traj, problem) = match p.config.form {
        EquationForm::Original => {
            let problem = Problem::Original(Arc::new(cfg.coefficients.clone()));
            (solve(&u0, &p.config, &problem)?, problem)
        }
        EquationForm::Transformed => {
            let builder = Arc::new(GaugeBuilder::new(cfg.coefficients.clone(), p.grid.clone(), p.config.t_final)?);
            let map0 = builder.map_at(0.0)?;
            let v0 = forward_transform(&u0, &map0)?;
            out.tables.push(table("gauge", &io::GAUGE_COLUMNS, io::gauge_rows(&map0)));
            let problem = Problem::Transformed(TransformedProblem::Gauge(builder.clone()));
            let traj = solve(&v0, &p.config, &problem)?;
            if traj.blowup_time.is_none() {
                let map_end = builder.map_at(traj.final_time())?;
                let u_end = inverse_transform(traj.final_state(), &map_end)?;
                let rows = p.grid.nodes().iter().zip(u_end.to_real()).map(|(x, u)| vec![*x, u]).collect();
                out.tables.push(table("final_original", &["x", "u"], rows));
            }
            (traj, problem)
        }
    };
    out.tables.push(table("trajectory", &["t", "x", "u"], io::trajectory_rows(&traj)));
    out.tables.push(table("norms", &io::NORM_COLUMNS, io::norm_rows(&traj)));

    let blown = traj.blowup_time;
    out.verdicts.push(Verdict {
        name: "no_blowup".into(),
        passed: blown.is_none(),
        value: blown.unwrap_or(traj.final_time()),
        threshold: "sup-norm stays below the blow-up threshold up to t_final".into(),
    });
    if p.config.form == EquationForm::Transformed {
        let worst = traj.norms.max_dissipation();
        out.verdicts.push(Verdict {
            name: "dissipation_sign".into(),
            passed: worst <= DISSIPATION_TOL,
            value: worst,
            threshold: format!("monitored dyadic dissipation term ≤ {DISSIPATION_TOL:e}"),
        });
    }
    if blown.is_none() && traj.times.len() > 2 {
        let grid = traj.final_state().grid().clone();
        let phi = TestField::seeded(p.seed, &grid, traj.final_time());
        match weak_residual(&traj, &phi, &problem) {
            Ok(w) => out.extra = json!({ "weak_residual": { "value": w.value, "scale": w.scale, "relative": w.relative() } }),
            Err(e) => out.notes.push(format!("weak residual not evaluated: {e}")),
        }
    } else if blown.is_none() {
        out.notes.push("weak residual needs at least 3 stored times; lower solver.monitor_stride".into());
    }
    out.notes.push(format!("{} steps of size {:e}", traj.steps, traj.dt));
    out.snapshot = Some((traj.final_state().clone(), traj.final_time()));
    Ok(out)
}

/// Hypothesis report for the coefficients a config would run.
pub fn check(cfg: &RunConfig) -> kdv_gauge::Result<HypothesisReport> {
    let plan = Plan::new(cfg, None)?;
    let (set, grid, t) = plan.hypothesis_scope(cfg)?;
    Ok(check_hypotheses(&set, &grid, t, HYPOTHESIS_TIME_SAMPLES))
}

pub fn format_hypotheses(r: &HypothesisReport) -> String {
    let mut s = format!("hypotheses on [-{}, {}] x [0, {}] ({} time samples)\n", r.half_width, r.half_width, r.t_final, r.t_samples);
    for e in &r.entries {
        let trend = e.boundary_trend.map(|s| format!(", still growing at the {s:?} boundary")).unwrap_or_default();
        s.push_str(&format!(
            "  {:<9}{:5} {} (extremal {:e} at t={}, x={}{trend}){}\n",
            e.id,
            if e.passed { "pass" } else { "FAIL" },
            e.description,
            e.extremal_value,
            e.at_t,
            e.at_x,
            if e.note.is_empty() { String::new() } else { format!(": {}", e.note) }
        ));
    }
    s
}

/// Run a validated config, writing outputs under `out_dir`.
pub fn run(cfg: &RunConfig, out_dir: &Path, opts: &RunOptions) -> RunOutcome {
    let id = run_id(cfg, opts);
    let mut outcome = RunOutcome { status: Status::Error, run_id: id.clone(), hypotheses: None, verdicts: vec![], error: None, files: vec![] };
    let mut summary = json!({
        "run_id": id,
        "config_hash": cfg.config_hash,
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": cfg.kind_name(),
        "seed": opts.seed.or(cfg.seed),
        "allow_hypothesis_violation": opts.allow_hypothesis_violation,
    });
    if let Err(e) = fs::create_dir_all(out_dir) {
        outcome.error = Some(format!("cannot create {}: {e}", out_dir.display()));
        return outcome;
    }
    let result = (|| -> Result<(), String> {
        let plan = Plan::new(cfg, opts.seed).map_err(|e| e.to_string())?;
        let (set, grid, t) = plan.hypothesis_scope(cfg).map_err(|e| e.to_string())?;
        let hyp = check_hypotheses(&set, &grid, t, HYPOTHESIS_TIME_SAMPLES);
        let violated = !hyp.all_pass();
        summary["hypotheses"] = serde_json::to_value(&hyp).unwrap_or(Value::Null);
        summary["hypothesis_violation"] = json!(violated);
        outcome.hypotheses = Some(hyp);
        if violated && !opts.allow_hypothesis_violation {
            return Err("hypothesis check failed; pass --allow-hypothesis-violation to run anyway".into());
        }
        let out = plan.execute(cfg).map_err(|e| e.to_string())?;
        let header = |name: &str| {
            let mut h = vec![
                format!("run_id: {id}"),
                format!("config_hash: {}", cfg.config_hash),
                format!("experiment: {}", cfg.kind_name()),
                format!("table: {name}"),
            ];
            if violated {
                h.push("hypothesis_violation: true (rows carry hypothesis_violation = 1)".into());
            }
            h
        };
        for t in &out.tables {
            let file = format!("{}.csv", t.name);
            let mut columns: Vec<&str> = t.columns.iter().map(String::as_str).collect();
            let mut rows = t.rows.clone();
            if violated {
                columns.push("hypothesis_violation");
                rows.iter_mut().for_each(|r| r.push(1.0));
            }
            let mut buf = Vec::new();
            io::write_csv(&mut buf, &header(&t.name), &columns, &rows).map_err(|e| e.to_string())?;
            fs::write(out_dir.join(&file), buf).map_err(|e| format!("{file}: {e}"))?;
            outcome.files.push(file);
        }
        if let Some((state, t)) = &out.snapshot {
            let mut buf = Vec::new();
            io::write_snapshot(&mut buf, state, *t).map_err(|e| e.to_string())?;
            fs::write(out_dir.join("final.snap"), buf).map_err(|e| format!("final.snap: {e}"))?;
            outcome.files.push("final.snap".into());
        }
        summary["verdicts"] = serde_json::to_value(&out.verdicts).unwrap_or(Value::Null);
        summary["fits"] = out.fits;
        summary["notes"] = json!(out.notes);
        if !out.extra.is_null() {
            summary["results"] = out.extra;
        }
        outcome.status = if out.verdicts.iter().all(|v| v.passed) { Status::Pass } else { Status::Fail };
        outcome.verdicts = out.verdicts;
        Ok(())
    })();
    if let Err(e) = result {
        outcome.status = Status::Error;
        outcome.error = Some(e);
    }
    summary["status"] = json!(outcome.status.label());
    summary["complete"] = json!(outcome.status != Status::Error);
    summary["error"] = json!(outcome.error);
    summary["files"] = json!(outcome.files);
    let text = serde_json::to_string_pretty(&summary).unwrap_or_default();
    match fs::File::create(out_dir.join("summary.json")).and_then(|mut f| writeln!(f, "{text}")) {
        Ok(()) => outcome.files.push("summary.json".into()),
        Err(e) => {
            outcome.status = Status::Error;
            outcome.error = Some(format!("summary.json: {e}"));
        }
    }
    outcome
}
