//! Initial patches, density plateaus, admissible families (smooth and
//! singular), contours and boundary diagnostics.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dyadic::{holder_norm, l_sigma_from_distance};
use crate::error::{domain, LabError, Result};
use crate::frame::{FrameFamily, FrameMember, Order};
use crate::geometry::{distance_field, marching_squares, resample_closed};
use crate::smooth::{annulus_ramp, jinc, sinc, smooth_cutoff, smooth_step};
use crate::solver::State;
use crate::spectral::{GridSpec, ScalarField, VelocityField};

pub type LevelFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum PatchKind {
    Disc { radius: f64 },
    Ellipse { a: f64, b: f64 },
    Square { half_width: f64 },
    /// `{level > 0}` inside the disc of radius `extent`; corners, if any, go in
    /// the singular set of [`PatchParams`].
    Custom { level: LevelFn, extent: f64 },
}

impl std::fmt::Debug for PatchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Disc { radius } => write!(f, "Disc {{ radius: {radius} }}"),
            Self::Ellipse { a, b } => write!(f, "Ellipse {{ a: {a}, b: {b} }}"),
            Self::Square { half_width } => write!(f, "Square {{ half_width: {half_width} }}"),
            Self::Custom { extent, .. } => write!(f, "Custom {{ extent: {extent} }}"),
        }
    }
}

impl PatchKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Disc { .. } => "disc",
            Self::Ellipse { .. } => "ellipse",
            Self::Square { .. } => "square",
            Self::Custom { .. } => "custom",
        }
    }

    pub fn is_singular(&self) -> bool {
        matches!(self, Self::Square { .. } | Self::Custom { .. })
    }

    pub fn area(&self) -> Option<f64> {
        match self {
            Self::Disc { radius } => Some(PI * radius * radius),
            Self::Ellipse { a, b } => Some(PI * a * b),
            Self::Square { half_width } => Some(4.0 * half_width * half_width),
            Self::Custom { .. } => None,
        }
    }

    /// Radius beyond which every constructed field vanishes.
    pub fn outer_radius(&self) -> f64 {
        match self {
            Self::Disc { radius } => 3.0 * radius,
            Self::Ellipse { a, b } => 3.0 * a.max(*b),
            Self::Square { half_width } => 3.0 * half_width,
            Self::Custom { extent, .. } => 1.5 * extent,
        }
    }

    fn default_singular_set(&self) -> Vec<[f64; 2]> {
        match self {
            Self::Square { half_width: s } => vec![[*s, *s], [-*s, *s], [-*s, -*s], [*s, -*s]],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityProfile {
    /// `amplitude * x2`, flattened on the plateau and cut off far away.
    Linear,
    /// `rho_0 = amplitude` everywhere.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySpec {
    pub amplitude: f64,
    pub plateau_radius: f64,
    pub profile: DensityProfile,
}

#[derive(Debug, Clone)]
pub struct PatchParams {
    pub kind: PatchKind,
    /// Gaussian mollification width; `None` means four grid cells.
    pub mollify_width: Option<f64>,
    /// `None` uses the kind's default (square corners, otherwise empty).
    pub singular_set: Option<Vec<[f64; 2]>>,
    pub density: DensitySpec,
    /// Exponent in the lower bound `|grad f0| >= c d(x, Sigma0)^gamma`.
    pub tangency_order: f64,
    pub contour_points: usize,
}

impl PatchParams {
    pub fn new(kind: PatchKind) -> Self {
        let tangency_order = if matches!(kind, PatchKind::Square { .. }) { 1.0 } else { 0.0 };
        Self {
            kind,
            mollify_width: None,
            singular_set: None,
            density: DensitySpec {
                amplitude: 0.0,
                plateau_radius: 0.3,
                profile: DensityProfile::Linear,
            },
            tangency_order,
            contour_points: 1024,
        }
    }

    pub fn with_density(mut self, amplitude: f64, plateau_radius: f64) -> Self {
        self.density.amplitude = amplitude;
        self.density.plateau_radius = plateau_radius;
        self
    }

    pub fn with_width(mut self, eta: f64) -> Self {
        self.mollify_width = Some(eta);
        self
    }
}

/// Constructed initial patch with its level function and cutoffs.
#[derive(Debug, Clone)]
pub struct PatchSpec {
    pub kind: PatchKind,
    pub grid: GridSpec,
    pub f0: ScalarField,
    /// Analytic `grad f0` sampled on the grid.
    pub grad_f0: [ScalarField; 2],
    pub alpha: ScalarField,
    pub contour: Vec<[f64; 2]>,
    pub singular_set: Vec<[f64; 2]>,
    pub mollify_width: f64,
    pub density: DensitySpec,
    pub tangency_order: f64,
    /// Measured `min |grad f0| / d(x, Sigma0)^gamma` over the support of `alpha`.
    pub hypothesis_constant: f64,
}

/// Geometry-dependent cutoff radii: `alpha` ramps, level cutoff, density cutoff.
struct Layout {
    ramp: [f64; 4],
    level_cut: [f64; 2],
    density_cut: [f64; 2],
}

fn layout(kind: &PatchKind) -> Layout {
    match kind {
        PatchKind::Disc { radius: r } => Layout {
            ramp: [0.2 * r, 0.4 * r, 1.6 * r, 1.8 * r],
            level_cut: [1.9 * r, 2.5 * r],
            density_cut: [2.0 * r, 3.0 * r],
        },
        PatchKind::Ellipse { .. } => Layout {
            ramp: [0.2, 0.4, 1.6, 1.8],
            level_cut: [1.9, 2.5],
            density_cut: [2.0, 3.0],
        },
        PatchKind::Square { half_width: s } => Layout {
            ramp: [0.4 * s, 0.7 * s, 1.7 * s, 2.0 * s],
            level_cut: [2.2 * s, 3.0 * s],
            density_cut: [2.2 * s, 3.0 * s],
        },
        PatchKind::Custom { extent: e, .. } => Layout {
            ramp: [0.1 * e, 0.2 * e, 1.1 * e, 1.2 * e],
            level_cut: [1.25 * e, 1.5 * e],
            density_cut: [1.25 * e, 1.5 * e],
        },
    }
}

/// `(f0, grad f0)` before the far cutoff, and the radius used by the cutoffs.
fn level_raw(kind: &PatchKind, x: f64, y: f64) -> (f64, [f64; 2], f64) {
    match kind {
        PatchKind::Disc { radius: r } => {
            let q = x * x + y * y;
            ((r * r - q) / r, [-2.0 * x / r, -2.0 * y / r], q.sqrt())
        }
        PatchKind::Ellipse { a, b } => {
            let m = a.max(*b);
            let q = x * x / (a * a) + y * y / (b * b);
            (
                m * (1.0 - q),
                [-2.0 * m * x / (a * a), -2.0 * m * y / (b * b)],
                q.sqrt(),
            )
        }
        PatchKind::Square { half_width: s } => {
            let s3 = s * s * s;
            let (p, q) = (s * s - x * x, s * s - y * y);
            (p * q / s3, [-2.0 * x * q / s3, -2.0 * y * p / s3], x.hypot(y))
        }
        PatchKind::Custom { level, .. } => {
            let d = 1e-6;
            let f = level(x, y);
            let gx = (level(x + d, y) - level(x - d, y)) / (2.0 * d);
            let gy = (level(x, y + d) - level(x, y - d)) / (2.0 * d);
            (f, [gx, gy], x.hypot(y))
        }
    }
}

fn smooth_step_prime(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a * b * (1.0 / (t * t) + 1.0 / ((1.0 - t) * (1.0 - t))) / ((a + b) * (a + b))
    }
}

/// `(value, d/dr)` of `1 - s((r - lo)/(hi - lo))`.
fn cutoff_with_slope(r: f64, lo: f64, hi: f64) -> (f64, f64) {
    let t = (r - lo) / (hi - lo);
    (1.0 - smooth_step(t), -smooth_step_prime(t) / (hi - lo))
}

/// Compactly supported level function `f0 = raw * cut(radius)` and its gradient.
fn level_fn(kind: &PatchKind, x: f64, y: f64) -> (f64, [f64; 2]) {
    let lay = layout(kind);
    let (f, g, q) = level_raw(kind, x, y);
    let (c, dc) = cutoff_with_slope(q, lay.level_cut[0], lay.level_cut[1]);
    if dc == 0.0 {
        return (f * c, [g[0] * c, g[1] * c]);
    }
    // gradient of the cutoff radius q
    let dq = match kind {
        PatchKind::Ellipse { a, b } => {
            let qq = q.max(1e-300);
            [x / (a * a * qq), y / (b * b * qq)]
        }
        _ => {
            let r = q.max(1e-300);
            [x / r, y / r]
        }
    };
    (
        f * c,
        [g[0] * c + f * dc * dq[0], g[1] * c + f * dc * dq[1]],
    )
}

fn alpha_fn(kind: &PatchKind, x: f64, y: f64) -> f64 {
    let lay = layout(kind);
    let q = level_raw(kind, x, y).2;
    annulus_ramp(q, lay.ramp[0], lay.ramp[1], lay.ramp[2], lay.ramp[3])
}

/// Gaussian-mollified indicator built from the exact Fourier transform of the
/// shape (supersampled indicator for custom shapes).
pub fn mollified_indicator(grid: GridSpec, kind: &PatchKind, eta: f64) -> ScalarField {
    let n = grid.n;
    let half = grid.half();
    let norm = (n * n) as f64 / (grid.length * grid.length);
    let gauss = |k1: f64, k2: f64| (-0.5 * eta * eta * (k1 * k1 + k2 * k2)).exp();
    let transform: Option<Box<dyn Fn(f64, f64) -> f64>> = match kind {
        PatchKind::Disc { radius: r } => {
            let r = *r;
            Some(Box::new(move |k1: f64, k2: f64| {
                PI * r * r * jinc(r * k1.hypot(k2))
            }))
        }
        PatchKind::Ellipse { a, b } => {
            let (a, b) = (*a, *b);
            Some(Box::new(move |k1: f64, k2: f64| {
                PI * a * b * jinc((a * k1).hypot(b * k2))
            }))
        }
        PatchKind::Square { half_width: s } => {
            let s = *s;
            Some(Box::new(move |k1: f64, k2: f64| {
                4.0 * s * s * sinc(s * k1) * sinc(s * k2)
            }))
        }
        PatchKind::Custom { .. } => None,
    };
    let field = match transform {
        Some(ft) => {
            let mut spec = vec![Complex64::new(0.0, 0.0); grid.spectrum_len()];
            for k2 in 0..n {
                let m2 = grid.mode2(k2);
                let ky = grid.ky(k2);
                for k1 in 0..half {
                    let kx = grid.kx(k1);
                    let sign = if (k1 as i64 + m2).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    spec[k2 * half + k1] = Complex64::new(sign * norm * ft(kx, ky) * gauss(kx, ky), 0.0);
                }
            }
            ScalarField::from_spectrum(grid, spec).expect("length")
        }
        None => {
            let PatchKind::Custom { level, .. } = kind else {
                unreachable!()
            };
            let sub = 4;
            let dx = grid.dx();
            let raw = ScalarField::from_fn(grid, |x, y| {
                let mut c = 0;
                for a in 0..sub {
                    for b in 0..sub {
                        let px = x + dx * ((a as f64 + 0.5) / sub as f64 - 0.5);
                        let py = y + dx * ((b as f64 + 0.5) / sub as f64 - 0.5);
                        if level(px, py) > 0.0 {
                            c += 1;
                        }
                    }
                }
                c as f64 / (sub * sub) as f64
            });
            raw.gaussian_filter(eta)
        }
    };
    // rebuild from samples so both representations are exact transforms of each other
    ScalarField::from_values(grid, field.values().to_vec()).expect("length")
}

fn initial_contour(kind: &PatchKind, grid: &GridSpec, f0: &ScalarField, m: usize) -> Vec<[f64; 2]> {
    match kind {
        PatchKind::Disc { radius: r } => (0..m)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / m as f64;
                [r * t.cos(), r * t.sin()]
            })
            .collect(),
        PatchKind::Ellipse { a, b } => {
            let dense: Vec<[f64; 2]> = (0..16 * m)
                .map(|k| {
                    let t = 2.0 * PI * k as f64 / (16 * m) as f64;
                    [a * t.cos(), b * t.sin()]
                })
                .collect();
            resample_closed(&dense, m)
        }
        PatchKind::Square { half_width: s } => {
            let s = *s;
            // start at a corner so that corners are sample points when 4 | m
            let poly = vec![[s, -s], [s, s], [-s, s], [-s, -s]];
            resample_closed(&poly, m)
        }
        PatchKind::Custom { .. } => {
            let _ = grid;
            marching_squares(f0, 0.0)
                .into_iter()
                .next()
                .map(|c| resample_closed(&c, m))
                .unwrap_or_default()
        }
    }
}

/// Density with an exact plateau on `(Sigma0)_r`.
pub fn plateau_density(
    grid: GridSpec,
    kind: &PatchKind,
    density: &DensitySpec,
    sigma: &[[f64; 2]],
) -> ScalarField {
    let d = density.amplitude;
    if density.profile == DensityProfile::Constant {
        return ScalarField::constant(grid, d);
    }
    let lay = layout(kind);
    let r = density.plateau_radius;
    let taper = 1.6 * r;
    let sigma = sigma.to_vec();
    ScalarField::from_fn(grid, move |x, y| {
        let cut = smooth_cutoff(x.hypot(y), lay.density_cut[0], lay.density_cut[1]);
        let mut nearest = None;
        let mut best = f64::INFINITY;
        for c in &sigma {
            let dist = grid.torus_distance([x, y], *c);
            if dist < best {
                best = dist;
                nearest = Some(*c);
            }
        }
        let base = match nearest {
            Some(c) => {
                let p = smooth_cutoff(best, r, taper);
                (1.0 - p) * y + p * c[1]
            }
            None => y,
        };
        d * base * cut
    })
}

/// Build the patch description and the (undealiased) initial state.
pub fn build_patch(params: &PatchParams, grid: GridSpec) -> Result<(PatchSpec, State)> {
    let kind = &params.kind;
    let outer = kind.outer_radius();
    if outer > 0.25 * grid.length * (1.0 + 1e-12) {
        return Err(LabError::Config(format!(
            "patch support radius {outer} exceeds the central quarter (L/4 = {})",
            0.25 * grid.length
        )));
    }
    let eta = params.mollify_width.unwrap_or(4.0 * grid.dx());
    if !(eta >= 0.0) {
        return Err(LabError::Config(format!("mollify_width = {eta} must be nonnegative")));
    }
    let sigma = params
        .singular_set
        .clone()
        .unwrap_or_else(|| kind.default_singular_set());
    let omega = mollified_indicator(grid, kind, eta);
    let kf = kind.clone();
    let f0 = ScalarField::from_fn(grid, |x, y| level_fn(&kf, x, y).0);
    let g1 = ScalarField::from_fn(grid, |x, y| level_fn(&kf, x, y).1[0]);
    let g2 = ScalarField::from_fn(grid, |x, y| level_fn(&kf, x, y).1[1]);
    let alpha = ScalarField::from_fn(grid, |x, y| alpha_fn(&kf, x, y));
    let contour = initial_contour(kind, &grid, &f0, params.contour_points);
    let r = params.density.plateau_radius;
    if !sigma.is_empty() && !kind.is_singular() && params.density.profile == DensityProfile::Linear {
        let swallowed = contour
            .iter()
            .all(|p| crate::geometry::distance_to_set(&grid, *p, &sigma) <= r);
        if swallowed {
            return Err(LabError::Config(format!(
                "plateau radius {r} covers the whole boundary of a smooth patch"
            )));
        }
    }
    let rho = plateau_density(grid, kind, &params.density, &sigma);
    let hypothesis_constant = hypothesis_constant(&grid, &g1, &g2, &alpha, &sigma, params.tangency_order);
    if !(hypothesis_constant > 0.0) {
        return Err(LabError::Config(format!(
            "level function violates the tangency hypothesis (constant {hypothesis_constant})"
        )));
    }
    let spec = PatchSpec {
        kind: kind.clone(),
        grid,
        f0,
        grad_f0: [g1, g2],
        alpha,
        contour,
        singular_set: sigma,
        mollify_width: eta,
        density: params.density,
        tangency_order: params.tangency_order,
        hypothesis_constant,
    };
    let state = State::new(0.0, omega, rho)?;
    Ok((spec, state))
}

/// `min |grad f0(x)| / d(x, Sigma0)^gamma` over grid points of `supp alpha`
/// (excluding the singular points themselves).
fn hypothesis_constant(
    grid: &GridSpec,
    g1: &ScalarField,
    g2: &ScalarField,
    alpha: &ScalarField,
    sigma: &[[f64; 2]],
    gamma: f64,
) -> f64 {
    let dist = distance_field(grid, sigma);
    let (a, b, al) = (g1.values(), g2.values(), alpha.values());
    let mut best = f64::INFINITY;
    for k in 0..grid.len() {
        if al[k] <= 0.0 {
            continue;
        }
        let d = dist[k];
        if d == 0.0 {
            continue;
        }
        let w = if d.is_finite() { d.powf(gamma) } else { 1.0 };
        best = best.min(a[k].hypot(b[k]) / w);
    }
    best
}

impl PatchSpec {
    /// `X_{0,0} = grad_perp f0`.
    pub fn tangent_member(&self) -> FrameMember {
        FrameMember::new(
            "grad_perp_f0",
            self.grad_f0[1].scale(-1.0),
            self.grad_f0[0].clone(),
        )
        .expect("same grid")
    }

    /// `X_{0,1} = (1 - alpha) e_1`.
    pub fn transverse_member(&self) -> FrameMember {
        FrameMember::new(
            "one_minus_alpha_e1",
            self.alpha.map_values(|a| 1.0 - a),
            ScalarField::zeros(self.grid),
        )
        .expect("same grid")
    }

    pub fn distance_to_sigma(&self) -> Vec<f64> {
        distance_field(&self.grid, &self.singular_set)
    }
}

/// Two-member family `grad_perp f0`, `(1 - alpha) e_1` of a smooth patch.
pub fn build_admissible_family(spec: &PatchSpec) -> Result<FrameFamily> {
    if !spec.singular_set.is_empty() {
        return Err(domain(
            "singular_set",
            "admissible family needs an empty singular set; use the singular family",
        ));
    }
    let fam = FrameFamily::new(vec![spec.tangent_member(), spec.transverse_member()])?;
    fam.require_nondegenerate(None)?;
    Ok(fam)
}

/// `theta_h`: 0 on `(Sigma0)_{h/2}`, 1 on `(Sigma0)_h^c`, with its gradient.
fn theta_with_gradient(x: [f64; 2], sigma: &[[f64; 2]], grid: &GridSpec, h: f64) -> (f64, [f64; 2]) {
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for c in sigma {
        let d1 = grid.wrap_delta(x[0] - c[0]);
        let d2 = grid.wrap_delta(x[1] - c[1]);
        let d = d1.hypot(d2);
        if d < best.0 {
            best = (d, [d1, d2]);
        }
    }
    let (d, dv) = best;
    if !d.is_finite() {
        return (1.0, [0.0, 0.0]);
    }
    let t = 2.0 * d / h - 1.0;
    let th = smooth_step(t);
    let sp = smooth_step_prime(t);
    if sp == 0.0 || d == 0.0 {
        return (th, [0.0, 0.0]);
    }
    let s = sp * 2.0 / h / d;
    (th, [s * dv[0], s * dv[1]])
}

/// `X_{0,0,h} = grad_perp(theta_h f0)`, `X_{0,1,h} = (1 - alpha) e_1`.
pub fn build_singular_family(spec: &PatchSpec, h: f64) -> Result<FrameFamily> {
    if spec.singular_set.is_empty() {
        return Err(domain("singular_set", "singular family needs a nonempty singular set"));
    }
    if !(h > 0.0 && h <= (-1.0f64).exp()) {
        return Err(domain("h", format!("{h} outside (0, 1/e]")));
    }
    let g = spec.grid;
    let (f, g1, g2) = (spec.f0.values(), spec.grad_f0[0].values(), spec.grad_f0[1].values());
    let mut x1 = vec![0.0; g.len()];
    let mut x2 = vec![0.0; g.len()];
    for k in 0..g.len() {
        let p = g.point(k % g.n, k / g.n);
        let (th, dth) = theta_with_gradient(p, &spec.singular_set, &g, h);
        if th == 0.0 && dth == [0.0, 0.0] {
            continue;
        }
        // grad_perp(u) = (-d2 u, d1 u)
        x1[k] = -(th * g2[k] + f[k] * dth[1]);
        x2[k] = th * g1[k] + f[k] * dth[0];
    }
    let member = FrameMember::new(
        "grad_perp_theta_f0",
        ScalarField::from_values(g, x1)?,
        ScalarField::from_values(g, x2)?,
    )?;
    let mut fam = FrameFamily::new(vec![member, spec.transverse_member()])?;
    fam.h = Some(h);
    Ok(fam)
}

/// Least-squares line `y = a + b x` with coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub r2: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let m = x.len();
    if m < 2 || y.len() != m {
        return Err(LabError::Fit(format!("need at least two points, got {m}")));
    }
    let mx = x.iter().sum::<f64>() / m as f64;
    let my = y.iter().sum::<f64>() / m as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return Err(LabError::Fit("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(LineFit {
        intercept,
        slope,
        r2,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingularScaleRow {
    pub h: f64,
    /// Smallest distance from `Sigma0` at which either member is nonzero.
    pub support_distance: f64,
    pub i: f64,
    pub n_eps: f64,
    /// `||d_X omega_0||_{eps-1}` over members.
    pub omega_derivative: f64,
    /// `||d_X rho_0||_eps` over members.
    pub rho_derivative: f64,
    /// `||theta_h||_r` for `r` in `{eps, 1, 1 + eps}`.
    pub theta_norms: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingularOrderReport {
    pub eps: f64,
    pub order: Order,
    /// `gamma0 - eps - 1`, the admissible choice derived from the construction.
    pub derived_beta: f64,
    pub gamma_fit: LineFit,
    pub beta_fit: LineFit,
    pub rows: Vec<SingularScaleRow>,
}

impl SingularOrderReport {
    /// `sup_h h^{-beta} N_eps` finite on the grid for the derived `beta`.
    pub fn derived_beta_admissible(&self) -> bool {
        self.order.beta >= self.derived_beta - 1e-9
    }
}

/// Build the singular family across `h_grid` and fit its order `(alpha, beta, gamma)`.
pub fn singular_family_order(
    spec: &PatchSpec,
    state: &State,
    h_grid: &[f64],
    eps: f64,
) -> Result<SingularOrderReport> {
    if h_grid.len() < 2 {
        return Err(LabError::InsufficientData("need at least two scales".into()));
    }
    let dist = spec.distance_to_sigma();
    let g = spec.grid;
    let mut rows = Vec::new();
    for &h in h_grid {
        let fam = build_singular_family(spec, h)?;
        let mask: Vec<bool> = dist.iter().map(|&d| d >= h).collect();
        let nd = fam.require_nondegenerate(Some(&mask))?;
        let n_eps = fam.n_eps_with(eps, nd.value);
        let mut support_distance = f64::INFINITY;
        let mag = fam.members[0].magnitude();
        for k in 0..g.len() {
            if mag[k] > 0.0 {
                support_distance = support_distance.min(dist[k]);
            }
        }
        let mut od: f64 = 0.0;
        let mut rd: f64 = 0.0;
        for m in &fam.members {
            od = od.max(holder_norm(&m.derivative_of(&state.omega)?, eps - 1.0));
            rd = rd.max(holder_norm(&m.derivative_of(&state.rho)?, eps));
        }
        let theta = ScalarField::from_fn(g, |x, y| {
            theta_with_gradient([x, y], &spec.singular_set, &g, h).0
        });
        let set = crate::dyadic::DyadicBlockSet::new(&theta);
        let theta_norms = [set.holder(eps).value, set.holder(1.0).value, set.holder(1.0 + eps).value];
        rows.push(SingularScaleRow {
            h,
            support_distance,
            i: nd.value,
            n_eps,
            omega_derivative: od,
            rho_derivative: rd,
            theta_norms,
        });
    }
    let lh: Vec<f64> = rows.iter().map(|r| r.h.ln()).collect();
    let li: Vec<f64> = rows.iter().map(|r| r.i.ln()).collect();
    let ln: Vec<f64> = rows.iter().map(|r| r.n_eps.ln()).collect();
    let gamma_fit = fit_line(&lh, &li)?;
    let beta_fit = fit_line(&lh, &ln)?;
    let alpha = rows
        .iter()
        .map(|r| r.support_distance.ln() / r.h.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let gamma = -gamma_fit.slope;
    Ok(SingularOrderReport {
        eps,
        order: Order {
            alpha,
            beta: beta_fit.slope,
            gamma,
        },
        derived_beta: gamma - eps - 1.0,
        gamma_fit,
        beta_fit,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryHolder {
    pub exponent: f64,
    pub seminorm: f64,
    pub r2: f64,
    pub unmasked: usize,
    /// True when the second differences vanish and the ceiling is returned.
    pub at_ceiling: bool,
}

/// Estimate the Hölder exponent of the tangent of a closed, uniformly
/// resampled contour from second differences at dyadic separations,
/// ignoring stencils that touch points within `h` of `sigma`.
pub fn boundary_holder_estimate(
    contour: &[[f64; 2]],
    sigma: &[[f64; 2]],
    h: f64,
) -> Result<BoundaryHolder> {
    let m = contour.len();
    let masked: Vec<bool> = contour
        .iter()
        .map(|p| sigma.iter().any(|c| (p[0] - c[0]).hypot(p[1] - c[1]) < h))
        .collect();
    let unmasked = masked.iter().filter(|b| !**b).count();
    if unmasked < 64 {
        return Err(LabError::InsufficientData(format!(
            "{unmasked} unmasked contour points (need at least 64)"
        )));
    }
    let length = crate::geometry::polygon_length(contour);
    let ds = length / m as f64;
    // prefix sums over a tripled array give masked counts of cyclic windows
    let mut pre = vec![0usize; 3 * m + 1];
    for i in 0..3 * m {
        pre[i + 1] = pre[i] + masked[i % m] as usize;
    }
    let window_clear = |i: usize, k: usize| {
        let lo = i + m - k;
        let hi = i + m + k;
        pre[hi + 1] - pre[lo] == 0
    };
    let kmax = (m / 16).max(2);
    let mut ks = Vec::new();
    let mut k = 1;
    while k <= kmax {
        ks.push(k);
        k *= 2;
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut all_zero = true;
    for &k in &ks {
        let mut best: f64 = 0.0;
        let mut any = false;
        for i in 0..m {
            if !window_clear(i, k) {
                continue;
            }
            any = true;
            let a = contour[(i + m - k) % m];
            let b = contour[i];
            let c = contour[(i + k) % m];
            let d = (a[0] - 2.0 * b[0] + c[0]).hypot(a[1] - 2.0 * b[1] + c[1]);
            best = best.max(d);
        }
        if !any {
            continue;
        }
        if best > 1e-10 * length {
            all_zero = false;
        }
        xs.push((k as f64 * ds).ln());
        ys.push(best);
    }
    if xs.len() < 2 {
        return Err(LabError::InsufficientData("no clear stencils at two scales".into()));
    }
    if all_zero {
        return Ok(BoundaryHolder {
            exponent: 1.0,
            seminorm: 0.0,
            r2: 1.0,
            unmasked,
            at_ceiling: true,
        });
    }
    let floor = 1e-300;
    let ly: Vec<f64> = ys.iter().map(|v| v.max(floor).ln()).collect();
    let fit = fit_line(&xs, &ly)?;
    Ok(BoundaryHolder {
        exponent: (fit.slope - 1.0).clamp(0.0, 1.0),
        seminorm: fit.intercept.exp(),
        r2: fit.r2,
        unmasked,
        at_ceiling: false,
    })
}

/// Scales `1/4 * 2^{-k/2}` down to `4 dx`.
pub fn blowup_h_grid(grid: &GridSpec) -> Vec<f64> {
    let mut h = 0.25;
    let mut out = Vec::new();
    while h >= 4.0 * grid.dx() * (1.0 - 1e-12) {
        out.push(h);
        h /= std::f64::consts::SQRT_2;
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlowupProfile {
    /// `(h, ||grad v||_{L^inf((Sigma_t)_h^c)})`.
    pub rows: Vec<(f64, f64)>,
    /// Fit of the masked sup against `-log h`.
    pub fit: LineFit,
    pub grad_v_linf: f64,
    pub l_sigma: f64,
}

/// Masked gradient sup across scales and its affine fit in `-log h`.
pub fn singular_blowup_profile(
    v: &VelocityField,
    sigma_t: &[[f64; 2]],
    h_grid: &[f64],
) -> Result<BlowupProfile> {
    let g = *v.grid();
    let gv = v.gradient_magnitude();
    let dist = distance_field(&g, sigma_t);
    let rep = l_sigma_from_distance(gv.values(), &dist, h_grid);
    let x: Vec<f64> = rep.per_scale.iter().map(|(h, _)| -h.ln()).collect();
    let y: Vec<f64> = rep.per_scale.iter().map(|(_, s)| *s).collect();
    let fit = fit_line(&x, &y)?;
    Ok(BlowupProfile {
        rows: rep.per_scale,
        fit,
        grad_v_linf: gv.max_abs(),
        l_sigma: rep.value,
    })
}

/// Principal-axis angle of a vorticity distribution from its second moments.
pub fn orientation_angle(omega: &ScalarField) -> f64 {
    let g = *omega.grid();
    let v = omega.values();
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for j in 0..g.n {
        let y = g.coord(j);
        for i in 0..g.n {
            let x = g.coord(i);
            let w = v[j * g.n + i];
            sxx += w * x * x;
            syy += w * y * y;
            sxy += w * x * y;
        }
    }
    0.5 * (2.0 * sxy).atan2(sxx - syy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauReport {
    pub max_grad_on_plateau: f64,
    pub grad_linf: f64,
    pub points: usize,
}

impl PlateauReport {
    pub fn ratio(&self) -> f64 {
        if self.grad_linf > 0.0 {
            self.max_grad_on_plateau / self.grad_linf
        } else {
            0.0
        }
    }
}

/// `max |grad rho(t)|` over grid points whose preimage lies in `(Sigma0)_radius`.
pub fn plateau_persistence(
    rho_t: &ScalarField,
    sigma0: &[[f64; 2]],
    sigma_t: &[[f64; 2]],
    radius: f64,
    flow: &dyn crate::flow::VelocitySource,
    t: f64,
    dt: f64,
) -> Result<PlateauReport> {
    let g = *rho_t.grid();
    let (a, b) = (rho_t.derivative(crate::spectral::Axis::X1), rho_t.derivative(crate::spectral::Axis::X2));
    let mag: Vec<f64> = a.values().iter().zip(b.values()).map(|(p, q)| p.hypot(*q)).collect();
    let grad_linf = mag.iter().copied().fold(0.0, f64::max);
    let drift = sigma0
        .iter()
        .zip(sigma_t)
        .map(|(p, q)| g.torus_distance(*p, *q))
        .fold(0.0, f64::max);
    let window = 2.0 * radius + 2.0 * drift;
    let dist_t = distance_field(&g, sigma_t);
    let cand: Vec<usize> = (0..g.len()).filter(|&k| dist_t[k] <= window).collect();
    let pts: Vec<[f64; 2]> = cand.iter().map(|&k| g.point(k % g.n, k / g.n)).collect();
    let pre = crate::flow::inverse_flow(flow, &pts, t, dt)?;
    let mut best: f64 = 0.0;
    let mut count = 0;
    for (k, y) in cand.iter().zip(&pre) {
        if crate::geometry::distance_to_set(&g, *y, sigma0) <= radius {
            best = best.max(mag[*k]);
            count += 1;
        }
    }
    Ok(PlateauReport {
        max_grad_on_plateau: best,
        grad_linf,
        points: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc_grid() -> GridSpec {
        GridSpec::new(128, 8.0 * PI, 2.0 / 3.0).unwrap()
    }

    #[test]
    fn disc_mass_matches_area() {
        let g = disc_grid();
        let (spec, st) = build_patch(&PatchParams::new(PatchKind::Disc { radius: 1.0 }), g).unwrap();
        let l1 = st.omega.lp_norm(1.0);
        assert!((l1 - PI).abs() / PI < 1e-3, "l1 {l1}");
        assert!(spec.singular_set.is_empty());
        assert!(spec.hypothesis_constant > 0.0);
    }

    #[test]
    fn square_plateau_is_bit_identical() {
        let g = GridSpec::new(128, 2.0 * PI, 2.0 / 3.0).unwrap();
        let params = PatchParams::new(PatchKind::Square { half_width: 0.5 }).with_density(0.1, 0.3);
        let (spec, st) = build_patch(&params, g).unwrap();
        assert_eq!(spec.singular_set.len(), 4);
        for c in &spec.singular_set {
            let mut vals = Vec::new();
            for k in 0..g.len() {
                if g.torus_distance(g.point(k % g.n, k / g.n), *c) <= 0.3 {
                    vals.push(st.rho.values()[k]);
                }
            }
            assert!(vals.len() > 10);
            assert!(vals.iter().all(|v| v.to_bits() == vals[0].to_bits()));
        }
    }

    #[test]
    fn singular_support_vanishes_near_corners() {
        let g = GridSpec::new(128, 2.0 * PI, 2.0 / 3.0).unwrap();
        let (spec, _) = build_patch(&PatchParams::new(PatchKind::Square { half_width: 0.5 }), g).unwrap();
        let h = 0.2;
        let fam = build_singular_family(&spec, h).unwrap();
        let dist = spec.distance_to_sigma();
        let m = fam.members[0].magnitude();
        for k in 0..g.len() {
            if dist[k] <= h / 2.0 {
                assert_eq!(m[k], 0.0);
            }
        }
    }

    #[test]
    fn admissible_family_rejects_singular_patch() {
        let g = GridSpec::new(64, 2.0 * PI, 2.0 / 3.0).unwrap();
        let (spec, _) = build_patch(&PatchParams::new(PatchKind::Square { half_width: 0.5 }), g).unwrap();
        assert!(build_admissible_family(&spec).is_err());
    }

    #[test]
    fn circle_holder_at_ceiling_and_corner_drop() {
        let m = 1024;
        let circle: Vec<[f64; 2]> = (0..m)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / m as f64;
                [t.cos(), t.sin()]
            })
            .collect();
        let est = boundary_holder_estimate(&circle, &[], 0.0).unwrap();
        assert!(est.exponent >= 0.95 && est.r2 >= 0.9, "{est:?}");

        let sq = resample_closed(&[[0.5, -0.5], [0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5]], m);
        let corners = [[0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]];
        let masked = boundary_holder_estimate(&sq, &corners, 0.1).unwrap();
        assert!(masked.exponent >= 0.95);
        let raw = boundary_holder_estimate(&sq, &[], 0.0).unwrap();
        assert!(raw.exponent < 0.5, "{raw:?}");
        assert!(boundary_holder_estimate(&sq[..40], &[], 0.0).is_err());
    }

    #[test]
    fn oversized_patch_is_rejected() {
        let g = GridSpec::new(64, 2.0 * PI, 2.0 / 3.0).unwrap();
        let p = PatchParams::new(PatchKind::Disc { radius: 1.0 });
        assert!(matches!(build_patch(&p, g), Err(LabError::Config(_))));
    }
}
