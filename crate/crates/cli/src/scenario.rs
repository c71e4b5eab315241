//! Scenario orchestration: build the patch, run the solver, evaluate the
//! requested checks and persist every artifact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use vortex_lab::dyadic::{l_sigma_norm, NormReport};
use vortex_lab::estimates::{
    calibrate_lifespan, check_cz, check_lp_bounds, check_plateau_density_bound,
    lifespan_bound, lp_samples, CheckReport, DEFAULT_MARGIN,
};
use vortex_lab::flow::{integrate_flow, GriddedVelocity};
use vortex_lab::geometry::polygon_area;
use vortex_lab::io::{encode_fields, encode_tracks, file_digest};
use vortex_lab::patch::{
    blowup_h_grid, boundary_holder_estimate, build_patch, plateau_persistence, singular_blowup_profile,
    DensityProfile, PatchKind, PatchParams, PatchSpec,
};
use vortex_lab::solver::{run, RunOutput, SolverConfig, StandardAnalyzer};
use vortex_lab::{GridSpec, LabError};

use crate::config::{CheckMode, Kind, Profile, ScenarioConfig};

pub const SERIES_SCHEMA: &str = "vortex-lab-series/1";
pub const SERIES_COLUMNS: &[&str] = &[
    "t",
    "omega_linf",
    "omega_l2",
    "omega_la",
    "grad_rho_linf",
    "grad_rho_la",
    "v_accum",
    "w_accum",
    "ll_norm",
    "l_sigma",
    "holder_boundary",
];

pub const NORMS_SCHEMA: &str = "vortex-lab-norms/1";
pub const CHECKS_SCHEMA: &str = "vortex-lab-checks/1";
pub const STATUS_SCHEMA: &str = "vortex-lab-status/1";
pub const MANIFEST_SCHEMA: &str = "vortex-lab-manifest/1";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

/// Evaluated check: one value per snapshot plus an overall verdict
/// (`None` for report-only checks).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckOutcome {
    pub id: String,
    pub mode: CheckMode,
    pub passed: Option<bool>,
    pub constant: Option<f64>,
    pub note: String,
    /// `(t, slack)` per snapshot; positive means the inequality holds.
    pub series: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChecksDoc {
    pub schema: String,
    pub checks: Vec<CheckOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    /// SHA-256 per artifact file name.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunStatus {
    pub schema: String,
    pub exit_code: i32,
    pub completed: bool,
    pub failure: Option<String>,
    pub under_resolved: bool,
    pub snapshots: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

pub fn patch_params(cfg: &ScenarioConfig, grid: &GridSpec) -> PatchParams {
    let p = cfg.patch.as_ref().expect("validated config has a patch");
    let kind = match p.kind {
        Kind::Disc => PatchKind::Disc {
            radius: p.radius.unwrap_or(1.0),
        },
        Kind::Ellipse => PatchKind::Ellipse {
            a: p.a.unwrap_or(1.0),
            b: p.b.unwrap_or(1.0),
        },
        Kind::Square => PatchKind::Square {
            half_width: p.half_width.unwrap_or(0.5),
        },
    };
    let mut params = PatchParams::new(kind).with_width(p.mollify_cells * grid.dx());
    params.singular_set = p.singular_set.clone();
    params.density.amplitude = cfg.density.amplitude;
    params.density.plateau_radius = p.plateau_radius;
    params.density.profile = match cfg.density.profile {
        Profile::Linear => DensityProfile::Linear,
        Profile::Constant => DensityProfile::Constant,
    };
    if let Some(t) = p.tangency_order {
        params.tangency_order = t;
    }
    params.contour_points = p.contour_points;
    params
}

fn constant_density(cfg: &ScenarioConfig) -> bool {
    cfg.density.amplitude == 0.0 || cfg.density.profile == Profile::Constant
}

struct Context<'a> {
    cfg: &'a ScenarioConfig,
    spec: &'a PatchSpec,
    out: &'a RunOutput,
    flow: Option<GriddedVelocity>,
    contour_area: Vec<f64>,
}

fn outcome(id: &str, mode: CheckMode, constant: Option<f64>, rep: &CheckReport, note: String) -> CheckOutcome {
    let mut series: Vec<(f64, f64)> = Vec::new();
    for r in &rep.rows {
        match series.iter_mut().find(|(t, _)| *t == r.t) {
            Some(e) => e.1 = e.1.min(r.slack),
            None => series.push((r.t, r.slack)),
        }
    }
    CheckOutcome {
        id: id.to_string(),
        mode,
        passed: Some(rep.passed()),
        constant,
        note,
        series,
    }
}

fn fitted(id: &str, rep: &CheckReport) -> std::result::Result<f64, LabError> {
    let f = vortex_lab::estimates::EstimateFit::calibrate(id, "self", 0, &rep.required(), DEFAULT_MARGIN)?;
    Ok(f.constant)
}

fn evaluate(ctx: &Context<'_>, id: &str, mode: CheckMode, constant: Option<f64>, rel_tol: f64) -> Result<CheckOutcome> {
    let cfg = ctx.cfg;
    let reports = ctx.out.reports();
    let a = cfg.analysis.a;
    let ps = [a, 2.0, f64::INFINITY];
    let resolve = |rep_at: &dyn Fn(f64) -> std::result::Result<CheckReport, LabError>| -> Result<CheckOutcome> {
        let c = match (mode, constant) {
            (CheckMode::Assert, Some(c)) => c,
            _ => fitted(id, &rep_at(0.0)?)?,
        };
        let rep = rep_at(c)?;
        let note = match mode {
            CheckMode::Fit => format!("fitted with margin {DEFAULT_MARGIN}"),
            CheckMode::Assert => String::new(),
        };
        Ok(outcome(id, mode, Some(c), &rep, note))
    };
    match id {
        "lp_bounds" => {
            let s = lp_samples(&reports, a);
            resolve(&|c| check_lp_bounds(&s, &ps, c, rel_tol))
        }
        "plateau_density" => {
            let s = lp_samples(&reports, a);
            let r = ctx.spec.density.plateau_radius;
            resolve(&|c| check_plateau_density_bound(&s, &ps, r, c, rel_tol))
        }
        "cz" => {
            let states: Vec<_> = ctx.out.snapshots.iter().filter_map(|s| s.state.clone()).collect();
            let eval = |c: f64| -> std::result::Result<CheckReport, LabError> {
                let mut all: Option<CheckReport> = None;
                for st in &states {
                    let mut rep = check_cz(&st.omega, &[a, 2.0, 3.0, 6.0], c)?;
                    for r in &mut rep.rows {
                        r.t = st.t;
                    }
                    match &mut all {
                        None => all = Some(rep),
                        Some(acc) => acc.rows.extend(rep.rows),
                    }
                }
                all.ok_or_else(|| LabError::InsufficientData("no stored states".into()))
            };
            resolve(&eval)
        }
        "conservation" => {
            let w0 = &reports[0];
            let euler = constant_density(cfg);
            let mut series = Vec::new();
            let mut ok = true;
            for (k, r) in reports.iter().enumerate() {
                let mut slack = f64::INFINITY;
                if euler {
                    let drift = (r.omega_l2 - w0.omega_l2).abs() / w0.omega_l2.max(f64::MIN_POSITIVE);
                    let over = (r.omega_linf - w0.omega_linf) / w0.omega_linf.max(f64::MIN_POSITIVE);
                    slack = slack.min(1e-6 - drift).min(1e-2 - over);
                }
                if let (Some(a0), Some(ak)) = (ctx.contour_area.first(), ctx.contour_area.get(k)) {
                    slack = slack.min(1e-4 - (ak - a0).abs() / a0.abs().max(f64::MIN_POSITIVE));
                }
                ok &= slack >= 0.0;
                series.push((r.t, slack));
            }
            Ok(CheckOutcome {
                id: id.into(),
                mode: CheckMode::Assert,
                passed: Some(ok),
                constant: None,
                note: if euler {
                    "L2 drift <= 1e-6, Linf overshoot <= 1e-2, contour area drift <= 1e-4".into()
                } else {
                    "contour area drift <= 1e-4".into()
                },
                series,
            })
        }
        "plateau_persistence" => {
            let Some(flow) = &ctx.flow else {
                return Ok(report_only(id, "no velocity history"));
            };
            let sigma0 = &ctx.spec.singular_set;
            if sigma0.is_empty() {
                return Ok(report_only(id, "empty singular set"));
            }
            let r = ctx.spec.density.plateau_radius;
            let mut series = Vec::new();
            let mut ok = true;
            for s in &ctx.out.snapshots {
                let Some(st) = &s.state else { continue };
                let p = plateau_persistence(&st.rho, sigma0, &s.markers, r / 2.0, flow, st.t, cfg.time.dt)?;
                let slack = 1e-3 - p.ratio();
                ok &= slack >= 0.0;
                series.push((st.t, slack));
            }
            Ok(CheckOutcome {
                id: id.into(),
                mode: CheckMode::Assert,
                passed: Some(ok),
                constant: None,
                note: "max |grad rho| on the advected plateau <= 1e-3 ||grad rho||_inf".into(),
                series,
            })
        }
        "blowup_profile" => {
            let grid = ctx.spec.grid;
            let hg = blowup_h_grid(&grid);
            let mut series = Vec::new();
            for s in &ctx.out.snapshots {
                let Some(st) = &s.state else { continue };
                let b = singular_blowup_profile(st.velocity(), &s.markers, &hg)?;
                series.push((st.t, b.fit.slope));
            }
            Ok(CheckOutcome {
                id: id.into(),
                mode,
                passed: None,
                constant: None,
                note: "fitted slope of the masked gradient sup against -log h".into(),
                series,
            })
        }
        "lifespan" => {
            let w0 = &reports[0];
            let wn = w0.omega_la + w0.omega_linf;
            let (c, c0, t) = match constant {
                Some(c) => {
                    let c0 = w0.grad_v_linf / (c * wn);
                    (c, c0, lifespan_bound(wn, w0.grad_rho_linf, c, c0)?)
                }
                None => calibrate_lifespan(&reports, wn)?,
            };
            let reached = ctx.out.is_complete();
            let series = reports.iter().map(|r| (r.t, t - r.t)).collect();
            Ok(CheckOutcome {
                id: id.into(),
                mode,
                passed: Some(reached),
                constant: Some(c),
                note: format!("T = {t}, C = {c}, C0 = {c0}"),
                series,
            })
        }
        other => Err(LabError::Config(format!("unknown check {other}")).into()),
    }
}

fn report_only(id: &str, why: &str) -> CheckOutcome {
    CheckOutcome {
        id: id.into(),
        mode: CheckMode::Fit,
        passed: None,
        constant: None,
        note: why.into(),
        series: Vec::new(),
    }
}

/// Advect the initial contour to every snapshot, estimate boundary
/// regularity and record the enclosed area.
fn contour_diagnostics(
    cfg: &ScenarioConfig,
    spec: &PatchSpec,
    out: &mut RunOutput,
    flow: Option<&GriddedVelocity>,
) -> Result<(Vec<f64>, Vec<[f64; 2]>)> {
    let times: Vec<f64> = out.snapshots.iter().map(|s| s.report.t).collect();
    let Some(flow) = flow else {
        return Ok((Vec::new(), spec.contour.clone()));
    };
    if spec.contour.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let map = integrate_flow(flow, &spec.contour, &times, cfg.time.dt, spec.grid.length)?;
    let mut areas = Vec::new();
    for (k, snap) in out.snapshots.iter_mut().enumerate() {
        let c = map.at(k);
        areas.push(polygon_area(c));
        let est = boundary_holder_estimate(c, &snap.markers, cfg.analysis.contour_mask);
        snap.report.holder_boundary = est.map(|e| e.exponent).unwrap_or(0.0);
    }
    Ok((areas, map.last().to_vec()))
}

fn write_series(path: &Path, reports: &[NormReport], checks: &[CheckOutcome]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# schema={SERIES_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(f);
    let mut header: Vec<String> = SERIES_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(checks.iter().map(|c| format!("slack_{}", c.id)));
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.t,
            r.omega_linf,
            r.omega_l2,
            r.omega_la,
            r.grad_rho_linf,
            r.grad_rho_la,
            r.v_accum,
            r.w_accum,
            r.ll,
            r.l_sigma,
            r.holder_boundary,
        ];
        for c in checks {
            let v = c
                .series
                .iter()
                .find(|(t, _)| (t - r.t).abs() <= 1e-9 * r.t.abs().max(1.0))
                .map_or(f64::NAN, |p| p.1);
            row.push(v);
        }
        w.write_record(row.iter().map(|x| format!("{x:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Run one scenario into `dir`; returns the exit code.
pub fn run_scenario(cfg: &ScenarioConfig, dir: &Path) -> Result<RunStatus> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), toml::to_string(cfg).expect("config serializes"))?;
    let grid = GridSpec::new(cfg.grid.n, cfg.grid.length, cfg.grid.dealias_fraction)?;
    let params = patch_params(cfg, &grid);
    let (spec, state) = match build_patch(&params, grid) {
        Ok(p) => p,
        Err(e @ LabError::Config(_)) => {
            let status = RunStatus {
                schema: STATUS_SCHEMA.into(),
                exit_code: EXIT_CONFIG,
                completed: false,
                failure: Some(e.to_string()),
                under_resolved: false,
                snapshots: 0,
            };
            write_status(dir, &status)?;
            return Ok(status);
        }
        Err(e) => return Err(e.into()),
    };
    let diag = cfg.time.diagnostics_every;
    let solver = SolverConfig {
        dt: cfg.time.dt,
        t_end: cfg.time.t_end,
        cfl_max: cfg.time.cfl_max,
        diagnostics_every: diag,
        history_every: (diag / 5).max(1),
        max_halvings: cfg.time.max_halvings,
        store_snapshots: true,
    };
    let mut analyzer = StandardAnalyzer {
        a: cfg.analysis.a,
        holder_indices: vec![cfg.analysis.eps],
        sample_pairs: cfg.analysis.sample_pairs,
        h_grid: cfg.analysis.h_grid.clone(),
        sigma_from_markers: !spec.singular_set.is_empty(),
        compute_ll: true,
    };
    let mut out = run(&state, &solver, &mut analyzer, spec.singular_set.clone())?;
    let flow = match &out.history {
        Some(h) if h.times.len() >= 2 => Some(GriddedVelocity::new(h)?),
        _ => None,
    };
    let (areas, final_contour) = contour_diagnostics(cfg, &spec, &mut out, flow.as_ref())?;
    let ctx = Context {
        cfg,
        spec: &spec,
        out: &out,
        flow,
        contour_area: areas,
    };
    let mut checks = Vec::new();
    for c in &cfg.checks {
        let o = evaluate(&ctx, &c.id, c.mode, c.constant, c.rel_tol).unwrap_or_else(|e| CheckOutcome {
            id: c.id.clone(),
            mode: c.mode,
            passed: Some(false),
            constant: c.constant,
            note: e.to_string(),
            series: Vec::new(),
        });
        checks.push(o);
    }
    let reports = out.reports();
    if cfg.has_format("json") {
        let mut f = fs::File::create(dir.join("norms.jsonl"))?;
        writeln!(f, "{}", serde_json::json!({ "schema": NORMS_SCHEMA }))?;
        for r in &reports {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
        let doc = ChecksDoc {
            schema: CHECKS_SCHEMA.into(),
            checks: checks.clone(),
        };
        fs::write(dir.join("checks.json"), serde_json::to_string_pretty(&doc)?)?;
    }
    if cfg.has_format("csv") {
        write_series(&dir.join("series.csv"), &reports, &checks)?;
        let mut f = fs::File::create(dir.join("contour.csv"))?;
        writeln!(f, "# schema=vortex-lab-contour/1")?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["sigma", "x1", "x2"])?;
        for (k, p) in final_contour.iter().enumerate() {
            w.write_record([k.to_string(), format!("{:e}", p[0]), format!("{:e}", p[1])])?;
        }
        w.flush()?;
        if !spec.singular_set.is_empty() {
            write_blowup(&dir.join("blowup.csv"), &out, &grid)?;
        }
    }
    if cfg.has_format("binary") {
        let init = state.dealiased();
        fs::write(dir.join("initial.vlf"), encode_fields(init.t, &[&init.omega, &init.rho])?)?;
        let fin = &out.final_state;
        fs::write(dir.join("final.vlf"), encode_fields(fin.t, &[&fin.omega, &fin.rho])?)?;
        if !spec.singular_set.is_empty() {
            let times: Vec<f64> = out.snapshots.iter().map(|s| s.report.t).collect();
            let pos: Vec<Vec<[f64; 2]>> = out.snapshots.iter().map(|s| s.markers.clone()).collect();
            fs::write(dir.join("markers.vlt"), encode_tracks(&times, &pos)?)?;
        }
    }
    let diverged = matches!(out.failure, Some(LabError::Divergence { .. } | LabError::Cfl { .. }));
    let failed = checks
        .iter()
        .any(|c| c.mode == CheckMode::Assert && c.passed == Some(false));
    let exit_code = if diverged || out.failure.is_some() {
        EXIT_DIVERGENCE
    } else if failed {
        EXIT_CHECK_FAILED
    } else {
        EXIT_PASS
    };
    let status = RunStatus {
        schema: STATUS_SCHEMA.into(),
        exit_code,
        completed: out.is_complete(),
        failure: out.failure.as_ref().map(|e| e.to_string()),
        under_resolved: out.under_resolved,
        snapshots: out.snapshots.len(),
    };
    write_status(dir, &status)?;
    Ok(status)
}

fn write_blowup(path: &Path, out: &RunOutput, grid: &GridSpec) -> Result<()> {
    let hg = blowup_h_grid(grid);
    let mut f = fs::File::create(path)?;
    writeln!(f, "# schema=vortex-lab-blowup/1")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["t", "h", "masked_sup"])?;
    for s in &out.snapshots {
        let Some(st) = &s.state else { continue };
        let gv = st.velocity().gradient_magnitude();
        for (h, m) in l_sigma_norm(&gv, &s.markers, &hg)?.per_scale {
            w.write_record([format!("{:e}", st.t), format!("{h:e}"), format!("{m:e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_status(dir: &Path, status: &RunStatus) -> Result<()> {
    fs::write(dir.join("status.json"), serde_json::to_string_pretty(status)?)?;
    write_manifest(dir)
}

/// `manifest.json`: SHA-256 of every artifact in the run directory.
pub fn write_manifest(dir: &Path) -> Result<()> {
    let mut entries = BTreeMap::new();
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != "manifest.json"))
        .collect();
    names.sort();
    for p in names {
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        entries.insert(name, file_digest(&p)?);
    }
    let m = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        files: entries,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}
