//! Scenario configuration: TOML with fixed sections, unknown keys rejected,
//! every violation reported at once.

use std::path::Path;

use serde::{Deserialize, Serialize};

use vortex_lab::spectral::{DEFAULT_DEALIAS, DEFAULT_LENGTH};

pub const CHECK_IDS: &[&str] = &[
    "conservation",
    "lp_bounds",
    "cz",
    "plateau_density",
    "plateau_persistence",
    "blowup_profile",
    "lifespan",
];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default = "d_length")]
    pub length: f64,
    #[serde(default = "d_dealias")]
    pub dealias_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_t_end")]
    pub t_end: f64,
    #[serde(default = "d_diag")]
    pub diagnostics_every: usize,
    #[serde(default = "d_cfl")]
    pub cfl_max: f64,
    #[serde(default = "d_halvings")]
    pub max_halvings: u32,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Disc,
    Ellipse,
    Square,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PatchSection {
    pub kind: Kind,
    pub radius: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub half_width: Option<f64>,
    /// Gaussian width in grid cells.
    #[serde(default = "d_mollify_cells")]
    pub mollify_cells: f64,
    pub singular_set: Option<Vec<[f64; 2]>>,
    #[serde(default = "d_plateau")]
    pub plateau_radius: f64,
    pub tangency_order: Option<f64>,
    #[serde(default = "d_contour_points")]
    pub contour_points: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Linear,
    Constant,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "d_profile")]
    pub profile: Profile,
}

impl Default for DensitySection {
    fn default() -> Self {
        Self {
            amplitude: 0.0,
            profile: Profile::Linear,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_a")]
    pub a: f64,
    /// Explicit scales for the `L(Sigma)` seminorm; empty selects the grid default.
    #[serde(default)]
    pub h_grid: Vec<f64>,
    #[serde(default = "d_pairs")]
    pub sample_pairs: usize,
    /// Radius of the singular-set mask used for the boundary regularity estimate.
    #[serde(default = "d_mask")]
    pub contour_mask: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            eps: d_eps(),
            a: d_a(),
            h_grid: Vec::new(),
            sample_pairs: d_pairs(),
            contour_mask: d_mask(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    Fit,
    Assert,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub id: String,
    #[serde(default = "d_mode")]
    pub mode: CheckMode,
    pub constant: Option<f64>,
    #[serde(default = "d_tol")]
    pub rel_tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: Option<String>,
    #[serde(default = "d_formats")]
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: None,
            formats: d_formats(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "d_grid")]
    pub grid: GridSection,
    #[serde(default = "d_time")]
    pub time: TimeSection,
    pub patch: Option<PatchSection>,
    #[serde(default)]
    pub density: DensitySection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub output: OutputSection,
}

fn d_n() -> usize {
    256
}
fn d_length() -> f64 {
    DEFAULT_LENGTH
}
fn d_dealias() -> f64 {
    DEFAULT_DEALIAS
}
fn d_dt() -> f64 {
    1e-2
}
fn d_t_end() -> f64 {
    1.0
}
fn d_diag() -> usize {
    10
}
fn d_cfl() -> f64 {
    0.5
}
fn d_halvings() -> u32 {
    4
}
fn d_mollify_cells() -> f64 {
    4.0
}
fn d_plateau() -> f64 {
    0.3
}
fn d_contour_points() -> usize {
    1024
}
fn d_profile() -> Profile {
    Profile::Linear
}
fn d_eps() -> f64 {
    0.5
}
fn d_a() -> f64 {
    1.5
}
fn d_pairs() -> usize {
    2000
}
fn d_mask() -> f64 {
    0.1
}
fn d_mode() -> CheckMode {
    CheckMode::Assert
}
fn d_tol() -> f64 {
    1e-3
}
fn d_formats() -> Vec<String> {
    vec!["json".into(), "csv".into(), "binary".into()]
}
fn d_grid() -> GridSection {
    GridSection {
        n: d_n(),
        length: d_length(),
        dealias_fraction: d_dealias(),
    }
}
fn d_time() -> TimeSection {
    TimeSection {
        dt: d_dt(),
        t_end: d_t_end(),
        diagnostics_every: d_diag(),
        cfl_max: d_cfl(),
        max_halvings: d_halvings(),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Syntax { path: String, detail: String },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    pub fn violations(&self) -> Vec<String> {
        match self {
            Self::Invalid(v) => v.clone(),
            other => vec![other.to_string()],
        }
    }
}

pub fn parse_str(text: &str, origin: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax {
        path: origin.to_string(),
        detail: e.to_string(),
    })?;
    let v = cfg.violations();
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(v))
    }
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_str(&text, &path.display().to_string())
}

impl ScenarioConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Err(e) = vortex_lab::GridSpec::new(self.grid.n, self.grid.length, self.grid.dealias_fraction) {
            v.push(format!("grid: {e}"));
        }
        let t = &self.time;
        if !(t.dt > 0.0) {
            v.push(format!("time.dt = {} must be positive", t.dt));
        }
        if !(t.t_end >= 0.0) {
            v.push(format!("time.t_end = {} must be nonnegative", t.t_end));
        }
        if t.diagnostics_every == 0 {
            v.push("time.diagnostics_every must be at least 1".into());
        }
        if !(t.cfl_max > 0.0) {
            v.push(format!("time.cfl_max = {} must be positive", t.cfl_max));
        }
        let an = &self.analysis;
        if !(an.eps > 0.0 && an.eps < 1.0) {
            v.push(format!("analysis.eps = {} violates 0 < ε < 1", an.eps));
        }
        if !(an.a > 1.0 && an.a < 2.0) {
            let singular = self.patch.as_ref().is_some_and(|p| p.kind == Kind::Square || p.singular_set.as_ref().is_some_and(|s| !s.is_empty()));
            let which = if singular { "singular patch" } else { "patch" };
            v.push(format!("analysis.a = {} violates 1 < a < 2 ({which})", an.a));
        }
        if an.h_grid.iter().any(|h| !(*h > 0.0 && *h <= (-1.0f64).exp())) {
            v.push("analysis.h_grid entries must lie in (0, 1/e]".into());
        }
        if an.sample_pairs < 1000 {
            v.push(format!("analysis.sample_pairs = {} below 1000", an.sample_pairs));
        }
        match &self.patch {
            None => v.push("missing [patch] section".into()),
            Some(p) => {
                let need = |name: &str, val: Option<f64>, v: &mut Vec<String>| match val {
                    None => v.push(format!("patch.{name} is required for kind {:?}", p.kind)),
                    Some(x) if !(x > 0.0) => v.push(format!("patch.{name} = {x} must be positive")),
                    _ => {}
                };
                match p.kind {
                    Kind::Disc => need("radius", p.radius, &mut v),
                    Kind::Ellipse => {
                        need("a", p.a, &mut v);
                        need("b", p.b, &mut v);
                    }
                    Kind::Square => need("half_width", p.half_width, &mut v),
                }
                if !(p.mollify_cells >= 0.0) {
                    v.push(format!("patch.mollify_cells = {} must be nonnegative", p.mollify_cells));
                }
                if !(p.plateau_radius > 0.0 && p.plateau_radius < 1.0) {
                    v.push(format!("patch.plateau_radius = {} must lie in (0, 1)", p.plateau_radius));
                }
                if p.contour_points < 512 {
                    v.push(format!("patch.contour_points = {} below 512", p.contour_points));
                }
            }
        }
        if self.density.amplitude.is_nan() {
            v.push("density.amplitude is NaN".into());
        }
        for c in &self.checks {
            if !CHECK_IDS.contains(&c.id.as_str()) {
                v.push(format!("checks: unknown id {:?} (known: {})", c.id, CHECK_IDS.join(", ")));
            }
            if c.mode == CheckMode::Assert && c.constant.is_none() && needs_constant(&c.id) {
                v.push(format!("checks.{}: assert mode needs a constant", c.id));
            }
            if !(c.rel_tol >= 0.0) {
                v.push(format!("checks.{}: rel_tol must be nonnegative", c.id));
            }
        }
        for f in &self.output.formats {
            if !["json", "csv", "binary"].contains(&f.as_str()) {
                v.push(format!("output.formats: unknown format {f:?}"));
            }
        }
        v
    }

    pub fn has_format(&self, f: &str) -> bool {
        self.output.formats.iter().any(|x| x == f)
    }
}

pub fn needs_constant(id: &str) -> bool {
    matches!(id, "lp_bounds" | "cz" | "plateau_density")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_str("[patch]\nkind = \"disc\"\nradius = 1.0\n", "mem").unwrap();
        assert_eq!(c.grid.n, 256);
        assert_eq!(c.analysis.eps, 0.5);
        assert_eq!(c.analysis.a, 1.5);
        assert_eq!(c.patch.unwrap().plateau_radius, 0.3);
        assert!(c.checks.is_empty());
    }

    #[test]
    fn all_violations_are_listed() {
        let text = "[analysis]\neps = 1.2\na = 2.5\n[patch]\nkind = \"square\"\nhalf_width = 0.5\n";
        let err = parse_str(text, "mem").unwrap_err();
        let v = err.violations();
        assert!(v.iter().any(|m| m.contains("0 < ε < 1")));
        assert!(v.iter().any(|m| m.contains("1 < a < 2") && m.contains("singular")));
    }

    #[test]
    fn unknown_keys_are_fatal() {
        let err = parse_str("[patch]\nkind = \"disc\"\nradius = 1.0\nradiuss = 2.0\n", "mem").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { .. }));
    }

    #[test]
    fn missing_patch_is_reported() {
        let err = parse_str("[grid]\nn = 64\n", "mem").unwrap_err();
        assert!(err.violations().iter().any(|m| m.contains("[patch]")));
    }
}
