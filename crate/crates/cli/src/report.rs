//! Post-processing of run directories: integrity checks, re-evaluated
//! estimates, summaries, comparisons and corpus calibration.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use vortex_lab::dyadic::NormReport;
use vortex_lab::estimates::{
    check_lp_bounds, check_plateau_density_bound, lp_samples, CheckReport, EstimateFit, DEFAULT_MARGIN,
};
use vortex_lab::io::{decode_fields, decode_tracks, file_digest};
use vortex_lab::LabError;

use crate::config::{parse_str, CheckMode, ScenarioConfig};
use crate::scenario::{CheckOutcome, ChecksDoc, Manifest};

pub const SUMMARY_SCHEMA: &str = "vortex-lab-summary/1";
pub const COMPARE_SCHEMA: &str = "vortex-lab-compare/1";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("missing artifact {0}")]
    Missing(String),
    #[error("{0}")]
    Lab(#[from] LabError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, ReportError>;

/// Verify every manifest digest and the embedded trailers of binary dumps.
pub fn verify_run_dir(dir: &Path) -> Result<()> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|_| ReportError::Missing(mpath.display().to_string()))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    for (name, digest) in &manifest.files {
        let p = dir.join(name);
        if !p.exists() {
            return Err(ReportError::Missing(p.display().to_string()));
        }
        let is_dump = name.ends_with(".vlf") || name.ends_with(".vlt");
        if is_dump {
            let bytes = fs::read(&p)?;
            let decoded = if name.ends_with(".vlf") {
                decode_fields(&bytes, &p).map(|_| ())
            } else {
                decode_tracks(&bytes, &p).map(|_| ())
            };
            match decoded {
                Err(LabError::Checksum(f)) => return Err(ReportError::Checksum(f)),
                Err(e) => return Err(e.into()),
                Ok(()) => {}
            }
        }
        if file_digest(&p)? != *digest {
            return Err(ReportError::Checksum(p.display().to_string()));
        }
    }
    Ok(())
}

pub fn load_norms(dir: &Path) -> Result<Vec<NormReport>> {
    let p = dir.join("norms.jsonl");
    let text = fs::read_to_string(&p).map_err(|_| ReportError::Missing(p.display().to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with("{\"schema\""))
        .map(|l| serde_json::from_str(l).map_err(ReportError::from))
        .collect()
}

pub fn load_checks(dir: &Path) -> Result<Vec<CheckOutcome>> {
    let p = dir.join("checks.json");
    let text = fs::read_to_string(&p).map_err(|_| ReportError::Missing(p.display().to_string()))?;
    let doc: ChecksDoc = serde_json::from_str(&text)?;
    Ok(doc.checks)
}

pub fn load_config(dir: &Path) -> Result<ScenarioConfig> {
    let p = dir.join("config.toml");
    let text = fs::read_to_string(&p).map_err(|_| ReportError::Missing(p.display().to_string()))?;
    parse_str(&text, &p.display().to_string()).map_err(|e| ReportError::Config(e.to_string()))
}

/// Re-evaluate an estimate from the stored norm series. Estimates that need
/// fields (`cz`, `plateau_persistence`, `blowup_profile`, ...) are read back
/// from the stored outcomes.
pub fn check_run(dir: &Path, id: &str, constant: Option<f64>, rel_tol: f64) -> Result<CheckOutcome> {
    verify_run_dir(dir)?;
    let reports = load_norms(dir)?;
    let cfg = load_config(dir)?;
    let a = cfg.analysis.a;
    let ps = [a, 2.0, f64::INFINITY];
    let samples = lp_samples(&reports, a);
    let eval = |c: f64| -> std::result::Result<CheckReport, LabError> {
        match id {
            "lp_bounds" => check_lp_bounds(&samples, &ps, c, rel_tol),
            _ => {
                let r = cfg.patch.as_ref().map_or(0.3, |p| p.plateau_radius);
                check_plateau_density_bound(&samples, &ps, r, c, rel_tol)
            }
        }
    };
    match id {
        "lp_bounds" | "plateau_density" => {
            let (mode, c) = match constant {
                Some(c) => (CheckMode::Assert, c),
                None => {
                    let req = eval(0.0)?.required();
                    (CheckMode::Fit, EstimateFit::calibrate(id, "self", 0, &req, DEFAULT_MARGIN)?.constant)
                }
            };
            let rep = eval(c)?;
            let mut series: Vec<(f64, f64)> = Vec::new();
            for r in &rep.rows {
                match series.iter_mut().find(|(t, _)| *t == r.t) {
                    Some(e) => e.1 = e.1.min(r.slack),
                    None => series.push((r.t, r.slack)),
                }
            }
            let note = rep
                .first_violation()
                .map(|v| format!("first violation at t = {} ({})", v.t, v.label))
                .unwrap_or_default();
            Ok(CheckOutcome {
                id: id.into(),
                mode,
                passed: Some(rep.passed()),
                constant: Some(c),
                note,
                series,
            })
        }
        _ => load_checks(dir)?
            .into_iter()
            .find(|c| c.id == id)
            .ok_or_else(|| ReportError::Missing(format!("check {id} in {}", dir.display()))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SummaryRow {
    pub check: String,
    pub t: f64,
    pub value: f64,
    pub passed: Option<bool>,
}

/// One row per `(check, snapshot)`; snapshots a check did not evaluate
/// carry a NaN slack.
pub fn summary_rows(checks: &[CheckOutcome], times: &[f64]) -> Vec<SummaryRow> {
    let mut rows = Vec::with_capacity(checks.len() * times.len());
    for c in checks {
        for &t in times {
            let value = c.series.iter().find(|p| p.0 == t).map_or(f64::NAN, |p| p.1);
            rows.push(SummaryRow {
                check: c.id.clone(),
                t,
                value,
                passed: c.passed,
            });
        }
    }
    rows
}

fn snapshot_times(dir: &Path) -> Result<Vec<f64>> {
    Ok(load_norms(dir)?.iter().map(|r| r.t).collect())
}

fn fmt_passed(p: Option<bool>) -> &'static str {
    match p {
        Some(true) => "pass",
        Some(false) => "fail",
        None => "report",
    }
}

/// Write `summary.json` and `summary.csv`; with `compare`, also
/// `compare.csv` joined on `(check, t)`.
pub fn write_report(dir: &Path, compare: Option<&Path>) -> Result<Vec<SummaryRow>> {
    verify_run_dir(dir)?;
    let checks = load_checks(dir)?;
    let rows = summary_rows(&checks, &snapshot_times(dir)?);
    let doc = serde_json::json!({ "schema": SUMMARY_SCHEMA, "rows": &rows });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&doc)?)?;
    let mut f = fs::File::create(dir.join("summary.csv"))?;
    writeln!(f, "# schema={SUMMARY_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["check", "t", "slack", "status"])?;
    for r in &rows {
        w.write_record([r.check.clone(), format!("{:e}", r.t), format!("{:e}", r.value), fmt_passed(r.passed).into()])?;
    }
    w.flush()?;
    if let Some(other) = compare {
        verify_run_dir(other)?;
        let theirs = summary_rows(&load_checks(other)?, &snapshot_times(other)?);
        let mut f = fs::File::create(dir.join("compare.csv"))?;
        writeln!(f, "# schema={COMPARE_SCHEMA}")?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["check", "t", "slack", "slack_other", "delta_slack"])?;
        for r in &rows {
            if let Some(o) = theirs.iter().find(|o| o.check == r.check && o.t == r.t) {
                w.write_record([
                    r.check.clone(),
                    format!("{:e}", r.t),
                    format!("{:e}", r.value),
                    format!("{:e}", o.value),
                    format!("{:e}", r.value - o.value),
                ])?;
            }
        }
        w.flush()?;
    }
    Ok(rows)
}

/// Corpus calibration: run directories sorted by name are split in
/// alternation into calibration and held-out halves (`seed` picks which
/// half calibrates); one fit per series estimate is written to `fits.json`.
pub fn calibrate_corpus(corpus: &Path, seed: u64) -> Result<Vec<EstimateFit>> {
    let mut runs: Vec<PathBuf> = fs::read_dir(corpus)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("norms.jsonl").is_file())
        .collect();
    runs.sort();
    if runs.len() < 2 {
        return Err(LabError::Fit(format!("{}: need at least two runs", corpus.display())).into());
    }
    let name = corpus
        .file_name()
        .map_or_else(|| corpus.display().to_string(), |n| n.to_string_lossy().to_string());
    let mut fits = Vec::new();
    for id in ["lp_bounds", "plateau_density"] {
        let mut cal = Vec::new();
        let mut held = Vec::new();
        for (k, run) in runs.iter().enumerate() {
            verify_run_dir(run)?;
            let cfg = load_config(run)?;
            let reports = load_norms(run)?;
            let a = cfg.analysis.a;
            let s = lp_samples(&reports, a);
            let ps = [a, 2.0, f64::INFINITY];
            let rep = if id == "lp_bounds" {
                check_lp_bounds(&s, &ps, 0.0, 1e-3)?
            } else {
                let r = cfg.patch.as_ref().map_or(0.3, |p| p.plateau_radius);
                check_plateau_density_bound(&s, &ps, r, 0.0, 1e-3)?
            };
            let target = if (k as u64 + seed) % 2 == 0 { &mut cal } else { &mut held };
            target.extend(rep.required());
        }
        let mut fit = EstimateFit::calibrate(id, name.clone(), seed, &cal, DEFAULT_MARGIN)?;
        fit.assert_on(&held);
        fits.push(fit);
    }
    fs::write(corpus.join("fits.json"), serde_json::to_string_pretty(&fits)?)?;
    Ok(fits)
}
