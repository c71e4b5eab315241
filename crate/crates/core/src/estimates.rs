//! Executable checks of the a priori inequalities, the lifespan formulas,
//! the stationary swirl, mollifier commutators and continuous dependence.
//!
//! Inequalities with non-explicit constants follow a calibrate/assert
//! protocol: [`EstimateFit::calibrate`] takes the smallest constant each
//! calibration sample requires, multiplies the worst one by a margin, and
//! [`EstimateFit::assert_on`] counts violations on held-out samples.

use std::collections::BTreeMap;
use std::f64::consts::E;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{conormal_norm, holder_norm, low_pass, NormReport};
use crate::error::{domain, LabError, Result};
use crate::frame::FrameFamily;
use crate::geometry::{distance_field, masked_sup};
use crate::patch::{fit_line, LineFit};
use crate::smooth::{bump, bump_mass_2d};
use crate::solver::{run, SolverConfig, StandardAnalyzer, State};
use crate::spectral::{biot_savart, Axis, GridSpec, ScalarField, VelocityField};

pub const DEFAULT_MARGIN: f64 = 1.5;

/// Held-out statistics of a calibrated constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub checked: usize,
    pub violations: usize,
    /// Smallest `1 - required / constant` over the held-out samples.
    pub min_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateFit {
    pub id: String,
    pub constant: f64,
    pub c0: Option<f64>,
    pub corpus: String,
    pub seed: u64,
    pub margin: f64,
    pub calibration_samples: usize,
    pub held_out: Option<HeldOut>,
}

impl EstimateFit {
    /// `constant = margin * max(required)`; `required` lists, per calibration
    /// sample, the smallest constant for which the inequality holds.
    pub fn calibrate(
        id: impl Into<String>,
        corpus: impl Into<String>,
        seed: u64,
        required: &[f64],
        margin: f64,
    ) -> Result<Self> {
        let id = id.into();
        if required.is_empty() {
            return Err(LabError::Fit(format!("{id}: empty calibration corpus")));
        }
        if let Some(bad) = required.iter().find(|r| !r.is_finite()) {
            return Err(LabError::Fit(format!(
                "{id}: no finite constant bounds the calibration data ({bad})"
            )));
        }
        let worst = required.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            id,
            constant: margin * worst,
            c0: None,
            corpus: corpus.into(),
            seed,
            margin,
            calibration_samples: required.len(),
            held_out: None,
        })
    }

    pub fn assert_on(&mut self, required: &[f64]) -> HeldOut {
        let mut h = HeldOut {
            checked: required.len(),
            violations: 0,
            min_slack: f64::INFINITY,
        };
        for &r in required {
            if !(r <= self.constant) {
                h.violations += 1;
            }
            let s = if self.constant > 0.0 {
                1.0 - r / self.constant
            } else if r <= 0.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            h.min_slack = h.min_slack.min(s);
        }
        self.held_out = Some(h);
        h
    }

    pub fn passes(&self) -> bool {
        self.held_out.is_some_and(|h| h.violations == 0)
    }
}

/// One evaluated inequality `lhs <= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub t: f64,
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    /// Smallest constant making this row hold.
    pub required: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub id: String,
    pub constant: f64,
    pub rel_tol: f64,
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    fn new(id: &str, constant: f64, rel_tol: f64) -> Self {
        Self {
            id: id.to_string(),
            constant,
            rel_tol,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, label: String, lhs: f64, rhs: f64, required: f64) {
        self.rows.push(CheckRow {
            t,
            label,
            lhs,
            rhs,
            slack: rhs - lhs,
            required,
        });
    }

    fn violated(&self, r: &CheckRow) -> bool {
        !(r.slack >= -self.rel_tol * r.lhs.abs().max(r.rhs.abs()))
    }

    pub fn first_violation(&self) -> Option<&CheckRow> {
        self.rows.iter().find(|r| self.violated(r))
    }

    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| self.violated(r)).count()
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }

    pub fn min_slack(&self) -> f64 {
        self.rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min)
    }

    pub fn required(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.required).collect()
    }

    /// Minimal slack per snapshot time.
    pub fn slack_by_time(&self) -> BTreeMap<String, f64> {
        let mut m: BTreeMap<String, f64> = BTreeMap::new();
        for r in &self.rows {
            let e = m.entry(format!("{:.12e}", r.t)).or_insert(f64::INFINITY);
            *e = e.min(r.slack);
        }
        m
    }
}

/// `L^p` norms at one snapshot, keyed by `p` (`f64::INFINITY` allowed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSample {
    pub t: f64,
    pub v_accum: f64,
    pub w_accum: f64,
    pub omega: Vec<(f64, f64)>,
    pub grad_rho: Vec<(f64, f64)>,
}

/// Samples for `p` in `{a, 2, inf}` from a report series.
pub fn lp_samples(reports: &[NormReport], a: f64) -> Vec<LpSample> {
    reports
        .iter()
        .map(|r| LpSample {
            t: r.t,
            v_accum: r.v_accum,
            w_accum: r.w_accum,
            omega: vec![(a, r.omega_la), (2.0, r.omega_l2), (f64::INFINITY, r.omega_linf)],
            grad_rho: vec![
                (a, r.grad_rho_la),
                (2.0, r.grad_rho_l2),
                (f64::INFINITY, r.grad_rho_linf),
            ],
        })
        .collect()
}

fn lookup(v: &[(f64, f64)], p: f64) -> Result<f64> {
    v.iter()
        .find(|(q, _)| *q == p)
        .map(|(_, x)| *x)
        .ok_or_else(|| domain("p", format!("{p} not recorded in the series")))
}

fn p_label(p: f64) -> String {
    if p.is_infinite() {
        "inf".into()
    } else {
        format!("{p}")
    }
}

/// Smallest `c >= 0` with `lhs <= base + scale * exp(c * x)`, up to the
/// relative tolerance of the check.
fn required_exp(lhs: f64, base: f64, scale: f64, x: f64, rel_tol: f64) -> f64 {
    if lhs - (base + scale) <= rel_tol * lhs.abs().max((base + scale).abs()) {
        return 0.0;
    }
    if scale <= 0.0 || x <= 0.0 {
        return f64::INFINITY;
    }
    ((lhs - base) / scale).ln() / x
}

/// `||omega(t)||_p <= ||omega_0||_p + ||grad rho_0||_p e^{C V(t)} t` and
/// `||grad rho(t)||_p <= ||grad rho_0||_p e^{C V(t)}` at every snapshot.
pub fn check_lp_bounds(series: &[LpSample], p_list: &[f64], c: f64, rel_tol: f64) -> Result<CheckReport> {
    let first = series
        .first()
        .ok_or_else(|| LabError::InsufficientData("empty series".into()))?;
    let mut rep = CheckReport::new("lp_bounds", c, rel_tol);
    for &p in p_list {
        let w0 = lookup(&first.omega, p)?;
        let g0 = lookup(&first.grad_rho, p)?;
        for s in series {
            let w = lookup(&s.omega, p)?;
            let g = lookup(&s.grad_rho, p)?;
            let grow = (c * s.v_accum).exp();
            rep.push(
                s.t,
                format!("omega p={}", p_label(p)),
                w,
                w0 + g0 * grow * s.t,
                required_exp(w, w0, g0 * s.t, s.v_accum, rel_tol),
            );
            rep.push(
                s.t,
                format!("grad_rho p={}", p_label(p)),
                g,
                g0 * grow,
                required_exp(g, 0.0, g0, s.v_accum, rel_tol),
            );
        }
    }
    Ok(rep)
}

/// Calderón–Zygmund: `||grad v||_p <= C p^2/(p-1) ||omega||_p`.
pub fn check_cz(omega: &ScalarField, p_list: &[f64], c: f64) -> Result<CheckReport> {
    let mut rep = CheckReport::new("cz", c, 0.0);
    let gv = biot_savart(omega).gradient_magnitude();
    for &p in p_list {
        if !(p > 1.0 && p.is_finite()) {
            return Err(domain("p", format!("{p} outside (1, inf)")));
        }
        let lhs = gv.lp_norm(p);
        let w = omega.lp_norm(p);
        let k = p * p / (p - 1.0);
        let required = if lhs == 0.0 { 0.0 } else { lhs / (k * w) };
        rep.push(0.0, format!("p={p}"), lhs, c * k * w, required);
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEstimate {
    pub lhs: f64,
    /// `a ||omega||_{L^a}`, to be multiplied by `C`.
    pub first: f64,
    /// `||omega||_inf / eps * log(e + conormal / ||omega||_inf)`, to be multiplied by `C`.
    pub second: f64,
    pub conormal: f64,
    pub log_factor: f64,
    pub required: f64,
    pub constant: f64,
}

impl LogEstimate {
    pub fn rhs(&self) -> f64 {
        self.constant * (self.first + self.second)
    }

    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs()
    }
}

/// Logarithmic gradient estimate with the masked sup of `|grad v|` on the
/// left; `mask` marks the points outside the singular set.
pub fn check_log_estimate(
    omega: &ScalarField,
    family: &FrameFamily,
    mask: Option<&[bool]>,
    eps: f64,
    a: f64,
    c: f64,
) -> Result<LogEstimate> {
    let cn = conormal_norm(omega, family, mask, eps, 0)?;
    let gv = biot_savart(omega).gradient_magnitude();
    let lhs = match mask {
        Some(m) => masked_sup(gv.values(), m),
        None => gv.max_abs(),
    };
    let winf = omega.max_abs();
    let log_factor = if winf > 0.0 { (E + cn.value / winf).ln() } else { 1.0 };
    let first = a * omega.lp_norm(a);
    let second = winf / eps * log_factor;
    let required = if lhs == 0.0 { 0.0 } else { lhs / (first + second) };
    Ok(LogEstimate {
        lhs,
        first,
        second,
        conormal: cn.value,
        log_factor,
        required,
        constant: c,
    })
}

/// Lifespan lower bound for smooth patches. `omega_norm` is
/// `||omega_0||_{L^a cap L^inf}`; infinite when `grad_rho_linf = 0`.
pub fn lifespan_bound(omega_norm: f64, grad_rho_linf: f64, c: f64, c0: f64) -> Result<f64> {
    for (what, v) in [("omega_norm", omega_norm), ("c", c)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(domain(what, format!("{v} must be positive and finite")));
        }
    }
    if !(c0 >= 0.0 && c0.is_finite()) {
        return Err(domain("c0", format!("{c0} must be nonnegative and finite")));
    }
    if !(grad_rho_linf >= 0.0) {
        return Err(domain("grad_rho_linf", format!("{grad_rho_linf} must be nonnegative")));
    }
    if grad_rho_linf == 0.0 {
        return Ok(f64::INFINITY);
    }
    let w = omega_norm;
    let inner = (c * w.min(w * w) / grad_rho_linf).ln_1p();
    Ok((w / (w * c0 + 1.0) * inner).ln_1p() / (c * w))
}

/// Smallest `T > 0` with
/// `T g r^{-(C0 + T) exp(e^{C T w})} = min(1, ||omega_0||_{L^1 cap L^inf})`.
/// The left side is increasing in `T`, so the root is unique.
pub fn singular_lifespan(
    omega_la_inf: f64,
    omega_l1_inf: f64,
    grad_rho_linf: f64,
    r: f64,
    c: f64,
    c0: f64,
) -> Result<f64> {
    if !(r > 0.0 && r < 1.0) {
        return Err(domain("r", format!("plateau radius {r} outside (0, 1)")));
    }
    for (what, v) in [("omega_la_inf", omega_la_inf), ("omega_l1_inf", omega_l1_inf), ("c", c)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(domain(what, format!("{v} must be positive and finite")));
        }
    }
    if !(c0 >= 0.0) || !(grad_rho_linf >= 0.0) {
        return Err(domain("c0", "constants and norms must be nonnegative"));
    }
    if grad_rho_linf == 0.0 {
        return Ok(f64::INFINITY);
    }
    let target = omega_l1_inf.min(1.0).ln();
    let f = |t: f64| {
        let expo = (c0 + t) * (c * t * omega_la_inf).exp().exp();
        t.ln() + grad_rho_linf.ln() - expo * r.ln() - target
    };
    let mut hi = 1e-3;
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(LabError::Fit("no root below 1e6".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Gradient bound `||grad v(t)||_inf <= C w (C0 + t) e^{C w t}` with
/// `C0 = ||grad v_0||_inf / (C w)`; returns the smallest admissible `C` on a
/// series together with the matching `C0`.
pub fn calibrate_gradient_growth(reports: &[NormReport], omega_norm: f64) -> Result<(f64, f64)> {
    let first = reports
        .first()
        .ok_or_else(|| LabError::InsufficientData("empty series".into()))?;
    let g0 = first.grad_v_linf;
    let holds = |c: f64| {
        reports.iter().all(|r| {
            let w = c * omega_norm;
            r.grad_v_linf <= (g0 + w * r.t) * (w * r.t).exp() * (1.0 + 1e-12)
        })
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while !holds(hi) {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(LabError::Fit("gradient growth not bounded".into()));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((hi, g0 / (hi * omega_norm)))
}

/// Calibrated lifespan: among constants `C` for which the gradient bound of
/// [`calibrate_gradient_growth`] holds on the series, the one giving the
/// longest lifespan. Returns `(C, C0, T)`.
pub fn calibrate_lifespan(reports: &[NormReport], omega_norm: f64) -> Result<(f64, f64, f64)> {
    let (c_min, _) = calibrate_gradient_growth(reports, omega_norm)?;
    let first = &reports[0];
    let g0 = first.grad_v_linf;
    let grho = first.grad_rho_linf;
    let c_min = c_min.max(1e-12);
    let eval = |lc: f64| {
        let c = lc.exp();
        let c0 = g0 / (c * omega_norm);
        lifespan_bound(omega_norm, grho, c, c0).map(|t| (c, c0, t))
    };
    let (lo, hi) = (c_min.ln(), c_min.ln() + 40.0);
    let mut best = eval(lo)?;
    let steps = 400;
    let mut best_k = 0;
    for k in 1..=steps {
        let r = eval(lo + (hi - lo) * k as f64 / steps as f64)?;
        if r.2 > best.2 {
            best = r;
            best_k = k;
        }
    }
    let h = (hi - lo) / steps as f64;
    let (mut a, mut b) = (lo + h * (best_k as f64 - 1.0).max(0.0), lo + h * (best_k as f64 + 1.0).min(steps as f64));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let m1 = b - g * (b - a);
        let m2 = a + g * (b - a);
        if eval(m1)?.2 < eval(m2)?.2 {
            a = m1;
        } else {
            b = m2;
        }
    }
    let r = eval(0.5 * (a + b))?;
    Ok(if r.2 > best.2 { r } else { best })
}

/// `||grad rho(t)||_p <= ||grad rho_0||_p r^{-C int W}` and
/// `||omega(t)||_p <= ||omega_0||_p + t ||grad rho_0||_p r^{-C int W}`.
pub fn check_plateau_density_bound(
    series: &[LpSample],
    p_list: &[f64],
    r: f64,
    c: f64,
    rel_tol: f64,
) -> Result<CheckReport> {
    if !(r > 0.0 && r < 1.0) {
        return Err(domain("r", format!("plateau radius {r} outside (0, 1)")));
    }
    let first = series
        .first()
        .ok_or_else(|| LabError::InsufficientData("empty series".into()))?;
    let mut rep = CheckReport::new("plateau_density", c, rel_tol);
    let lr = -r.ln();
    for &p in p_list {
        let w0 = lookup(&first.omega, p)?;
        let g0 = lookup(&first.grad_rho, p)?;
        for s in series {
            let w = lookup(&s.omega, p)?;
            let g = lookup(&s.grad_rho, p)?;
            let grow = r.powf(-c * s.w_accum);
            let x = lr * s.w_accum;
            rep.push(
                s.t,
                format!("grad_rho p={}", p_label(p)),
                g,
                g0 * grow,
                required_exp(g, 0.0, g0, x, rel_tol),
            );
            rep.push(
                s.t,
                format!("omega p={}", p_label(p)),
                w,
                w0 + s.t * g0 * grow,
                required_exp(w, w0, s.t * g0, x, rel_tol),
            );
        }
    }
    Ok(rep)
}

/// One snapshot of a transported quantity: `||f(t)||_r`, `||g(t)||_r` and `V(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportSample {
    pub t: f64,
    pub f_norm: f64,
    pub g_norm: f64,
    pub v_accum: f64,
}

/// `||f(t)||_r <= ||f(0)||_r e^{C V(t)} + int_0^t ||g||_r e^{C (V(t) - V(tau))}`,
/// trapezoidal in time.
pub fn check_transport_holder(series: &[TransportSample], r: f64, c: f64, rel_tol: f64) -> Result<CheckReport> {
    if !(r > -1.0 && r < 1.0) {
        return Err(domain("r", format!("{r} outside (-1, 1)")));
    }
    let first = series
        .first()
        .ok_or_else(|| LabError::InsufficientData("empty series".into()))?;
    let mut rep = CheckReport::new("transport_holder", c, rel_tol);
    let bound = |k: usize, c: f64| {
        let s = &series[k];
        let mut integral = 0.0;
        for j in 1..=k {
            let (a, b) = (&series[j - 1], &series[j]);
            let fa = a.g_norm * (c * (s.v_accum - a.v_accum)).exp();
            let fb = b.g_norm * (c * (s.v_accum - b.v_accum)).exp();
            integral += 0.5 * (b.t - a.t) * (fa + fb);
        }
        first.f_norm * (c * s.v_accum).exp() + integral
    };
    for (k, s) in series.iter().enumerate() {
        let rhs = bound(k, c);
        // the right side is nondecreasing in C; bisect for the smallest admissible one
        let required = if s.f_norm <= bound(k, 0.0) {
            0.0
        } else {
            let mut hi = 1.0;
            while bound(k, hi) < s.f_norm && hi < 1e6 {
                hi *= 2.0;
            }
            if bound(k, hi) < s.f_norm {
                f64::INFINITY
            } else {
                let mut lo = 0.0;
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if bound(k, mid) >= s.f_norm {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            }
        };
        rep.push(s.t, format!("r={r}"), s.f_norm, rhs, required);
    }
    Ok(rep)
}

/// Radial bump supported on `[lo, hi]`.
pub fn radial_bump(s: f64, lo: f64, hi: f64) -> f64 {
    bump((2.0 * s - lo - hi) / (hi - lo))
}

#[derive(Debug, Clone)]
pub struct SigmaField {
    pub velocity: VelocityField,
    /// `||P(sigma . grad sigma)||_{L^2}`.
    pub residual: f64,
    /// `||sigma||_inf * ||grad sigma||_{L^2}`, the size of the unprojected term.
    pub scale: f64,
    /// `max |curl sigma - g(|x|)|`.
    pub curl_error: f64,
}

/// Cumulative `int_0^r s g(s) ds` on a uniform table, Simpson per cell.
struct RadialPrimitive {
    step: f64,
    values: Vec<f64>,
    support_end: f64,
}

impl RadialPrimitive {
    fn new(g: &dyn Fn(f64) -> f64, support_end: f64, cells: usize) -> Self {
        let step = support_end / cells as f64;
        let mut values = vec![0.0; cells + 1];
        let w = |s: f64| s * g(s);
        for i in 0..cells {
            let a = i as f64 * step;
            let b = a + step;
            values[i + 1] = values[i] + step / 6.0 * (w(a) + 4.0 * w(0.5 * (a + b)) + w(b));
        }
        Self {
            step,
            values,
            support_end,
        }
    }

    fn total(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Cubic Hermite interpolation with the exact derivative `s g(s)`.
    fn eval(&self, g: &dyn Fn(f64) -> f64, r: f64) -> f64 {
        if r >= self.support_end {
            return self.total();
        }
        let i = ((r / self.step) as usize).min(self.values.len() - 2);
        let a = i as f64 * self.step;
        let h = self.step;
        let t = (r - a) / h;
        let (p0, p1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (a * g(a) * h, (a + h) * g(a + h) * h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * p1
            + (t3 - t2) * m1
    }
}

/// Swirl `sigma(x) = x_perp / |x|^2 int_0^{|x|} s g(s) ds` for a radial
/// profile supported in `(0, support_end]` with zero total `int s g(s) ds`.
pub fn stationary_sigma(
    g: &(dyn Fn(f64) -> f64 + Sync),
    support_end: f64,
    grid: GridSpec,
) -> Result<SigmaField> {
    if support_end >= 0.5 * grid.length {
        return Err(domain("support_end", "profile support must fit inside the box"));
    }
    let prim = RadialPrimitive::new(g, support_end, 1 << 16);
    let abs_prim = RadialPrimitive::new(&|s| g(s).abs(), support_end, 1 << 14);
    let total = prim.total();
    if total.abs() > 1e-9 * abs_prim.total().max(f64::MIN_POSITIVE) {
        return Err(domain(
            "g",
            format!(
                "int s g(s) ds = {total:e} is nonzero; the 1/|x| tail of the swirl is not periodic"
            ),
        ));
    }
    let phi = |r: f64| if r >= support_end { 0.0 } else { prim.eval(g, r) };
    let u1 = ScalarField::from_fn(grid, |x, y| {
        let r2 = x * x + y * y;
        if r2 == 0.0 { 0.0 } else { -y / r2 * phi(r2.sqrt()) }
    });
    let u2 = ScalarField::from_fn(grid, |x, y| {
        let r2 = x * x + y * y;
        if r2 == 0.0 { 0.0 } else { x / r2 * phi(r2.sqrt()) }
    });
    let v = VelocityField::explicit(u1, u2)?;
    let [[a11, a12], [a21, a22]] = v.gradient();
    let (s1, s2) = (&v.u1, &v.u2);
    let n1 = s1.zip_values(&a11, |a, b| a * b)?.add(&s2.zip_values(&a12, |a, b| a * b)?)?;
    let n2 = s1.zip_values(&a21, |a, b| a * b)?.add(&s2.zip_values(&a22, |a, b| a * b)?)?;
    let (p1, p2) = leray(&n1, &n2);
    let residual = (p1.l2_norm().powi(2) + p2.l2_norm().powi(2)).sqrt();
    let grad_l2 = [&a11, &a12, &a21, &a22]
        .iter()
        .map(|f| f.l2_norm().powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = v.max_magnitude() * grad_l2;
    let target = ScalarField::from_fn(grid, |x, y| g(x.hypot(y)));
    let curl_error = v.curl().sub(&target)?.max_abs();
    Ok(SigmaField {
        velocity: v,
        residual,
        scale,
        curl_error,
    })
}

/// Leray projection onto divergence-free fields.
pub fn leray(u1: &ScalarField, u2: &ScalarField) -> (ScalarField, ScalarField) {
    let g = *u1.grid();
    let half = g.half();
    let (a, b) = (u1.spectrum(), u2.spectrum());
    let mut p1 = vec![Complex64::new(0.0, 0.0); g.spectrum_len()];
    let mut p2 = p1.clone();
    for k2 in 0..g.n {
        let ky = g.ky(k2);
        for k1 in 0..half {
            let kx = g.kx(k1);
            let idx = k2 * half + k1;
            let kk = kx * kx + ky * ky;
            if kk == 0.0 {
                p1[idx] = a[idx];
                p2[idx] = b[idx];
                continue;
            }
            let dot = a[idx] * kx + b[idx] * ky;
            p1[idx] = a[idx] - dot * (kx / kk);
            p2[idx] = b[idx] - dot * (ky / kk);
        }
    }
    (
        ScalarField::from_spectrum(g, p1).expect("length"),
        ScalarField::from_spectrum(g, p2).expect("length"),
    )
}

/// Observed convergence order `log2(res(n) / res(2n))` for consecutive pairs.
pub fn refinement_orders(residuals: &[f64]) -> Vec<f64> {
    residuals
        .windows(2)
        .map(|w| (w[0] / w[1]).log2())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MollifyMode {
    SpectralCutoff,
    CompactMollifier,
}

/// Compact mollifier `phi_n = n^2 phi(n x)` sampled on the grid, as stencil
/// offsets with weights normalized to sum one.
pub fn mollifier_stencil(grid: &GridSpec, n: f64) -> Vec<(isize, isize, f64)> {
    let dx = grid.dx();
    let reach = (1.0 / (n * dx)).ceil() as isize;
    let mass = bump_mass_2d();
    let mut st = Vec::new();
    for dj in -reach..=reach {
        for di in -reach..=reach {
            let r = n * dx * (di as f64).hypot(dj as f64);
            let w = bump(r) / mass;
            if w > 0.0 {
                st.push((di, dj, w));
            }
        }
    }
    let total: f64 = st.iter().map(|s| s.2).sum();
    for s in &mut st {
        s.2 /= total;
    }
    st
}

/// Direct convolution, written as `u(x) + sum w (u(x - y) - u(x))` so that
/// values on a locally constant region are reproduced exactly.
pub fn convolve_stencil(u: &ScalarField, stencil: &[(isize, isize, f64)]) -> ScalarField {
    let g = *u.grid();
    let n = g.n as isize;
    let v = u.values();
    let out: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = ((k as isize) % n, (k as isize) / n);
            let c = v[k];
            let mut acc = 0.0;
            for &(di, dj, w) in stencil {
                let ii = (i - di).rem_euclid(n);
                let jj = (j - dj).rem_euclid(n);
                let d = v[(jj * n + ii) as usize] - c;
                if d != 0.0 {
                    acc += w * d;
                }
            }
            c + acc
        })
        .collect();
    ScalarField::from_values(g, out).expect("length")
}

/// Periodic convolution with the stencil through the FFT.
pub fn convolve_spectral(u: &ScalarField, stencil: &[(isize, isize, f64)]) -> ScalarField {
    let g = *u.grid();
    let n = g.n as isize;
    let mut kernel = vec![0.0; g.len()];
    for &(di, dj, w) in stencil {
        let ii = di.rem_euclid(n) as usize;
        let jj = dj.rem_euclid(n) as usize;
        kernel[jj * g.n + ii] += w;
    }
    let kf = ScalarField::from_values(g, kernel).expect("length");
    let ks = kf.spectrum();
    let spec: Vec<Complex64> = u.spectrum().iter().zip(ks).map(|(c, k)| c * k).collect();
    ScalarField::from_spectrum(g, spec).expect("length")
}

#[derive(Debug, Clone)]
pub struct MollifiedData {
    pub velocity: VelocityField,
    pub rho: ScalarField,
    pub n: f64,
    pub mode: MollifyMode,
    /// Grid points of `(Sigma0)_{r/2}` inspected and whether `rho_n` was bit-constant
    /// on each neighbourhood.
    pub plateau: Option<(usize, bool)>,
}

/// Regularized initial data: `S_n` (dyadic low pass at `2^n`) or the compact
/// mollifier `phi_n`. The compact mode certifies the plateau on `(Sigma0)_{r/2}`.
pub fn mollify_init(
    v0: &VelocityField,
    rho0: &ScalarField,
    n: f64,
    mode: MollifyMode,
    sigma0: &[[f64; 2]],
    r: f64,
) -> Result<MollifiedData> {
    let g = *rho0.grid();
    match mode {
        MollifyMode::SpectralCutoff => {
            let q = n.round() as i32;
            if q < 0 || q > crate::dyadic::q_max(&g) {
                return Err(domain("n", format!("cutoff 2^{q} outside the resolved band")));
            }
            let velocity = VelocityField::explicit(low_pass(&v0.u1, q), low_pass(&v0.u2, q))?;
            Ok(MollifiedData {
                velocity,
                rho: low_pass(rho0, q),
                n,
                mode,
                plateau: None,
            })
        }
        MollifyMode::CompactMollifier => {
            if !(1.0 / n >= 2.0 * g.dx()) {
                return Err(domain("n", format!("support 1/n = {} below two grid cells", 1.0 / n)));
            }
            if !sigma0.is_empty() && 1.0 / n >= r / 2.0 {
                return Err(domain(
                    "n",
                    format!("1/n = {} >= r/2 = {}: plateau cannot be certified", 1.0 / n, r / 2.0),
                ));
            }
            let st = mollifier_stencil(&g, n);
            let rho = convolve_stencil(rho0, &st);
            let velocity = VelocityField::explicit(convolve_spectral(&v0.u1, &st), convolve_spectral(&v0.u2, &st))?;
            let plateau = (!sigma0.is_empty()).then(|| {
                let mut count = 0;
                let mut ok = true;
                for c in sigma0 {
                    let mut first: Option<u64> = None;
                    for k in 0..g.len() {
                        if g.torus_distance(g.point(k % g.n, k / g.n), *c) <= r / 2.0 {
                            count += 1;
                            let b = rho.values()[k].to_bits();
                            match first {
                                None => first = Some(b),
                                Some(f) => ok &= f == b,
                            }
                        }
                    }
                }
                (count, ok)
            });
            Ok(MollifiedData {
                velocity,
                rho,
                n,
                mode: MollifyMode::CompactMollifier,
                plateau,
            })
        }
    }
}

/// `||[d_X, R_n] f||_eps / (||X||_eps ||grad f||_inf)` with
/// `[d_X, R_n] f = X . R_n grad f - R_n (X . grad f)`.
pub fn commutator_ratio(x: [&ScalarField; 2], f: &ScalarField, n: f64, eps: f64) -> Result<f64> {
    let g = *f.grid();
    let st = mollifier_stencil(&g, n);
    let (f1, f2) = (f.derivative(Axis::X1), f.derivative(Axis::X2));
    let r1 = convolve_spectral(&f1, &st);
    let r2 = convolve_spectral(&f2, &st);
    let a = x[0].mul(&r1)?.add(&x[1].mul(&r2)?)?;
    let xf = x[0].mul(&f1)?.add(&x[1].mul(&f2)?)?;
    let b = convolve_spectral(&xf, &st);
    let comm = a.sub(&b)?;
    let xn = holder_norm(x[0], eps).max(holder_norm(x[1], eps));
    let gradf = f1.zip_values(&f2, |p, q| p.hypot(q))?.max_abs();
    if xn == 0.0 || gradf == 0.0 {
        return Ok(0.0);
    }
    Ok(holder_norm(&comm, eps) / (xn * gradf))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwinReport {
    pub times: Vec<f64>,
    pub deltas: Vec<f64>,
    /// `distances[i][k]`: `D(t_k)` for `deltas[i]`.
    pub distances: Vec<Vec<f64>>,
    /// Slope of `log D(t_k)` against `log delta`.
    pub theta: Vec<f64>,
    pub fits: Vec<LineFit>,
    /// `D` vanished identically for a zero perturbation.
    pub zero_delta_identical: bool,
}

impl TwinReport {
    /// Exponent at the snapshot closest to `t`.
    pub fn theta_at(&self, t: f64) -> f64 {
        let k = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|p| p.0)
            .unwrap_or(0);
        self.theta[k]
    }
}

fn twin_distance(a: &State, b: &State) -> Result<f64> {
    let dv = a.velocity().sub(b.velocity())?;
    let dr = a.rho.sub(&b.rho)?;
    Ok((dv.l2_norm().powi(2) + dr.l2_norm().powi(2)).sqrt())
}

/// Continuous-dependence experiment: runs from `initial` and from
/// `initial + delta * perturbation` for each `delta`, measuring
/// `D(t) = (||v1 - v2||^2 + ||rho1 - rho2||^2)^{1/2}` at every snapshot.
pub fn uniqueness_twin_experiment(
    initial: &State,
    perturbation: (&ScalarField, &ScalarField),
    deltas: &[f64],
    cfg: &SolverConfig,
) -> Result<TwinReport> {
    let mut cfg = cfg.clone();
    cfg.store_snapshots = true;
    let mut analyzer = StandardAnalyzer {
        compute_ll: false,
        ..Default::default()
    };
    let runner = |st: &State, an: &mut StandardAnalyzer| -> Result<Vec<State>> {
        let out = run(st, &cfg, an, Vec::new())?;
        if let Some(e) = out.failure {
            return Err(e);
        }
        Ok(out.snapshots.into_iter().filter_map(|s| s.state).collect())
    };
    let base = runner(initial, &mut analyzer)?;
    let times: Vec<f64> = base.iter().map(|s| s.t).collect();
    let same = runner(initial, &mut analyzer)?;
    let mut zero_delta_identical = true;
    for (a, b) in base.iter().zip(&same) {
        zero_delta_identical &= a.omega.values() == b.omega.values() && a.rho.values() == b.rho.values();
    }
    let mut distances = Vec::new();
    for &d in deltas {
        let w = initial.omega.lincomb(&[(d, perturbation.0)], 1.0)?;
        let r = initial.rho.lincomb(&[(d, perturbation.1)], 1.0)?;
        let pert = runner(&State::new(0.0, w, r)?, &mut analyzer)?;
        let row: Vec<f64> = base
            .iter()
            .zip(&pert)
            .map(|(a, b)| twin_distance(a, b))
            .collect::<Result<_>>()?;
        distances.push(row);
    }
    let ld: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let mut theta = Vec::new();
    let mut fits = Vec::new();
    for k in 0..times.len() {
        let y: Vec<f64> = distances.iter().map(|row| row[k].max(f64::MIN_POSITIVE).ln()).collect();
        let fit = fit_line(&ld, &y)?;
        theta.push(fit.slope);
        fits.push(fit);
    }
    Ok(TwinReport {
        times,
        deltas: deltas.to_vec(),
        distances,
        theta,
        fits,
        zero_delta_identical,
    })
}

/// Mask of grid points at distance at least `h` from `sigma`.
pub fn outside(grid: &GridSpec, sigma: &[[f64; 2]], h: f64) -> Vec<bool> {
    distance_field(grid, sigma).into_iter().map(|d| d >= h).collect()
}
