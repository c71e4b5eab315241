//! Lagrangian flow maps, their inverses, transported frames and the
//! distance-set calculus `delta_t(h) = h^{exp int ||v||_LL}`.

use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, LabError, Result};
use crate::frame::{FrameFamily, FrameMember};
use crate::geometry::distance_to_set;
use crate::interp::{Spline, VelocitySpline};
use crate::solver::VorticityHistory;
use crate::spectral::{biot_savart_spectra, dealias_in_place, plan, Axis, GridSpec, ScalarField};

type Jac = [[f64; 2]; 2];

/// Time-dependent velocity that can be sampled anywhere in its time range.
pub trait VelocitySource: Sync {
    fn time_range(&self) -> (f64, f64);
    fn velocity(&self, t: f64, x: [f64; 2]) -> [f64; 2];
    /// Velocity and `J[i][j] = d_j v_i`.
    fn jacobian(&self, t: f64, x: [f64; 2]) -> ([f64; 2], Jac);

    fn check_range(&self, from: f64, to: f64) -> Result<()> {
        let (start, end) = self.time_range();
        let tol = 1e-9 * (1.0 + end.abs());
        let (lo, hi) = (from.min(to), from.max(to));
        if lo < start - tol || hi > end + tol {
            return Err(LabError::HistoryRange {
                start,
                end,
                from,
                to,
            });
        }
        Ok(())
    }
}

/// Closed-form velocity `(t, x) -> (v, grad v)`.
pub struct AnalyticVelocity<F> {
    pub f: F,
    pub range: (f64, f64),
}

impl<F> AnalyticVelocity<F>
where
    F: Fn(f64, [f64; 2]) -> ([f64; 2], Jac) + Sync,
{
    pub fn new(range: (f64, f64), f: F) -> Self {
        Self { f, range }
    }
}

impl<F> VelocitySource for AnalyticVelocity<F>
where
    F: Fn(f64, [f64; 2]) -> ([f64; 2], Jac) + Sync,
{
    fn time_range(&self) -> (f64, f64) {
        self.range
    }
    fn velocity(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        (self.f)(t, x).0
    }
    fn jacobian(&self, t: f64, x: [f64; 2]) -> ([f64; 2], Jac) {
        (self.f)(t, x)
    }
}

/// Velocity reconstructed from stored vorticity: cubic splines in space,
/// linear in time. Splines are built on first use.
pub struct GriddedVelocity {
    pub grid: GridSpec,
    pub times: Vec<f64>,
    omega: Vec<ScalarField>,
    splines: Vec<OnceLock<VelocitySpline>>,
}

impl GriddedVelocity {
    pub fn new(history: &VorticityHistory) -> Result<Self> {
        if history.times.is_empty() {
            return Err(LabError::InsufficientData("empty velocity history".into()));
        }
        Ok(Self {
            grid: history.grid,
            times: history.times.clone(),
            omega: history.spectra.clone(),
            splines: (0..history.times.len()).map(|_| OnceLock::new()).collect(),
        })
    }

    fn spline(&self, k: usize) -> &VelocitySpline {
        self.splines[k].get_or_init(|| VelocitySpline::new(&crate::spectral::biot_savart(&self.omega[k])))
    }

    fn bracket(&self, t: f64) -> (usize, usize, f64) {
        let m = self.times.len();
        if m == 1 || t <= self.times[0] {
            return (0, 0, 0.0);
        }
        if t >= self.times[m - 1] {
            return (m - 1, m - 1, 0.0);
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        (k, k + 1, w)
    }

    /// Grid vorticity spectrum at `t`, linear in time between stored entries.
    pub fn omega_spectrum_at(&self, t: f64) -> Vec<Complex64> {
        let (a, b, w) = self.bracket(t);
        let sa = self.omega[a].spectrum();
        if a == b || w == 0.0 {
            return sa.to_vec();
        }
        let sb = self.omega[b].spectrum();
        sa.iter().zip(sb).map(|(x, y)| x * (1.0 - w) + y * w).collect()
    }
}

impl VelocitySource for GriddedVelocity {
    fn time_range(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    fn velocity(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let (a, b, w) = self.bracket(t);
        let va = self.spline(a).velocity(x);
        if a == b || w == 0.0 {
            return va;
        }
        let vb = self.spline(b).velocity(x);
        [va[0] * (1.0 - w) + vb[0] * w, va[1] * (1.0 - w) + vb[1] * w]
    }

    fn jacobian(&self, t: f64, x: [f64; 2]) -> ([f64; 2], Jac) {
        let (a, b, w) = self.bracket(t);
        let (va, ja) = self.spline(a).velocity_jacobian(x);
        if a == b || w == 0.0 {
            return (va, ja);
        }
        let (vb, jb) = self.spline(b).velocity_jacobian(x);
        let l = |p: f64, q: f64| p * (1.0 - w) + q * w;
        (
            [l(va[0], vb[0]), l(va[1], vb[1])],
            [
                [l(ja[0][0], jb[0][0]), l(ja[0][1], jb[0][1])],
                [l(ja[1][0], jb[1][0]), l(ja[1][1], jb[1][1])],
            ],
        )
    }
}

/// Trajectories of a set of seeds recorded at requested times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowMap {
    pub seeds: Vec<[f64; 2]>,
    pub times: Vec<f64>,
    /// `positions[k][i]` is the image of seed `i` at `times[k]`, unwrapped.
    pub positions: Vec<Vec<[f64; 2]>>,
    /// Number of final positions lying outside the fundamental cell.
    pub wrapped: usize,
}

impl FlowMap {
    pub fn at(&self, k: usize) -> &[[f64; 2]] {
        &self.positions[k]
    }

    pub fn last(&self) -> &[[f64; 2]] {
        self.positions.last().expect("at least the seed time")
    }
}

fn step_count(span: f64, dt: f64) -> usize {
    ((span.abs() / dt) - 1e-9).ceil().max(1.0) as usize
}

fn rk4_point(src: &dyn VelocitySource, t: f64, h: f64, p: [f64; 2]) -> [f64; 2] {
    let k1 = src.velocity(t, p);
    let k2 = src.velocity(t + 0.5 * h, [p[0] + 0.5 * h * k1[0], p[1] + 0.5 * h * k1[1]]);
    let k3 = src.velocity(t + 0.5 * h, [p[0] + 0.5 * h * k2[0], p[1] + 0.5 * h * k2[1]]);
    let k4 = src.velocity(t + h, [p[0] + h * k3[0], p[1] + h * k3[1]]);
    [
        p[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        p[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Advect points from `t_from` to `t_to` (either direction) with RK4 steps
/// of size at most `dt`, marching all points together in time.
pub fn advect(
    src: &dyn VelocitySource,
    points: &[[f64; 2]],
    t_from: f64,
    t_to: f64,
    dt: f64,
) -> Result<Vec<[f64; 2]>> {
    if !(dt > 0.0) {
        return Err(domain("dt", format!("{dt} must be positive")));
    }
    src.check_range(t_from, t_to)?;
    let m = step_count(t_to - t_from, dt);
    let h = (t_to - t_from) / m as f64;
    let mut pts = points.to_vec();
    for s in 0..m {
        let t = t_from + s as f64 * h;
        pts.par_iter_mut().for_each(|p| *p = rk4_point(src, t, h, *p));
    }
    Ok(pts)
}

fn count_wrapped(grid_half: f64, pts: &[[f64; 2]]) -> usize {
    pts.iter()
        .filter(|p| p[0].abs() >= grid_half || p[1].abs() >= grid_half)
        .count()
}

/// Forward flow `psi(t, x0)` recorded at each of `times` (increasing, starting
/// at or after the seed time `times[0]`).
pub fn integrate_flow(
    src: &dyn VelocitySource,
    seeds: &[[f64; 2]],
    times: &[f64],
    dt: f64,
    box_length: f64,
) -> Result<FlowMap> {
    if times.is_empty() {
        return Err(domain("times", "no output times"));
    }
    let mut positions = vec![seeds.to_vec()];
    for w in times.windows(2) {
        let next = advect(src, positions.last().unwrap(), w[0], w[1], dt)?;
        positions.push(next);
    }
    let wrapped = count_wrapped(0.5 * box_length, positions.last().unwrap());
    Ok(FlowMap {
        seeds: seeds.to_vec(),
        times: times.to_vec(),
        positions,
        wrapped,
    })
}

/// Preimages `psi^{-1}(t, x)` by backward integration from `t` to the start.
pub fn inverse_flow(
    src: &dyn VelocitySource,
    points: &[[f64; 2]],
    t: f64,
    dt: f64,
) -> Result<Vec<[f64; 2]>> {
    let t0 = src.time_range().0;
    advect(src, points, t, t0, dt)
}

fn matmul(a: &Jac, b: &Jac) -> Jac {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn jac_axpy(y: &Jac, a: f64, x: &Jac) -> Jac {
    [
        [y[0][0] + a * x[0][0], y[0][1] + a * x[0][1]],
        [y[1][0] + a * x[1][0], y[1][1] + a * x[1][1]],
    ]
}

const IDENTITY: Jac = [[1.0, 0.0], [0.0, 1.0]];

/// RK4 for the pair `(x, M)` with `x' = v(t, x)`, `M' = grad v(t, x) M`.
fn rk4_tangent(src: &dyn VelocitySource, t: f64, h: f64, p: [f64; 2], m: Jac) -> ([f64; 2], Jac) {
    let f = |t: f64, p: [f64; 2], m: &Jac| {
        let (v, j) = src.jacobian(t, p);
        (v, matmul(&j, m))
    };
    let (v1, d1) = f(t, p, &m);
    let p2 = [p[0] + 0.5 * h * v1[0], p[1] + 0.5 * h * v1[1]];
    let (v2, d2) = f(t + 0.5 * h, p2, &jac_axpy(&m, 0.5 * h, &d1));
    let p3 = [p[0] + 0.5 * h * v2[0], p[1] + 0.5 * h * v2[1]];
    let (v3, d3) = f(t + 0.5 * h, p3, &jac_axpy(&m, 0.5 * h, &d2));
    let p4 = [p[0] + h * v3[0], p[1] + h * v3[1]];
    let (v4, d4) = f(t + h, p4, &jac_axpy(&m, h, &d3));
    let pn = [
        p[0] + h / 6.0 * (v1[0] + 2.0 * v2[0] + 2.0 * v3[0] + v4[0]),
        p[1] + h / 6.0 * (v1[1] + 2.0 * v2[1] + 2.0 * v3[1] + v4[1]),
    ];
    let mut mn = m;
    for i in 0..2 {
        for j in 0..2 {
            mn[i][j] += h / 6.0 * (d1[i][j] + 2.0 * d2[i][j] + 2.0 * d3[i][j] + d4[i][j]);
        }
    }
    (pn, mn)
}

/// Positions and flow Jacobians `D psi` of seeds, recorded at `times`.
pub fn integrate_tangent(
    src: &dyn VelocitySource,
    seeds: &[[f64; 2]],
    times: &[f64],
    dt: f64,
) -> Result<Vec<Vec<([f64; 2], Jac)>>> {
    if times.is_empty() {
        return Err(domain("times", "no output times"));
    }
    let mut cur: Vec<([f64; 2], Jac)> = seeds.iter().map(|p| (*p, IDENTITY)).collect();
    let mut out = vec![cur.clone()];
    for w in times.windows(2) {
        src.check_range(w[0], w[1])?;
        let m = step_count(w[1] - w[0], dt);
        let h = (w[1] - w[0]) / m as f64;
        for s in 0..m {
            let t = w[0] + s as f64 * h;
            cur.par_iter_mut()
                .for_each(|(p, j)| (*p, *j) = rk4_tangent(src, t, h, *p, *j));
        }
        out.push(cur.clone());
    }
    Ok(out)
}

fn apply(j: &Jac, x: [f64; 2]) -> [f64; 2] {
    [
        j[0][0] * x[0] + j[0][1] * x[1],
        j[1][0] * x[0] + j[1][1] * x[1],
    ]
}

/// `I(X_t)` along characteristics: for each output time the infimum over
/// seeds of `sup_lambda |D psi X_{0,lambda}|`, with the image of the minimising seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LagrangianFrameTrack {
    pub times: Vec<f64>,
    pub i_values: Vec<f64>,
    pub witnesses: Vec<[f64; 2]>,
}

/// Transport a frame along characteristics started at the grid points
/// selected by `mask` (all points for `None`).
pub fn track_frame(
    family0: &FrameFamily,
    src: &dyn VelocitySource,
    mask: Option<&[bool]>,
    times: &[f64],
    dt: f64,
) -> Result<LagrangianFrameTrack> {
    let g = *family0.grid();
    let idx: Vec<usize> = (0..g.len())
        .filter(|&k| mask.is_none_or(|m| m[k]))
        .collect();
    let seeds: Vec<[f64; 2]> = idx.iter().map(|&k| g.point(k % g.n, k / g.n)).collect();
    let x0: Vec<Vec<[f64; 2]>> = family0
        .members
        .iter()
        .map(|m| {
            let (a, b) = (m.x1.values(), m.x2.values());
            idx.iter().map(|&k| [a[k], b[k]]).collect()
        })
        .collect();
    let tracks = integrate_tangent(src, &seeds, times, dt)?;
    let mut out = LagrangianFrameTrack {
        times: times.to_vec(),
        i_values: Vec::new(),
        witnesses: Vec::new(),
    };
    for snap in &tracks {
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for (s, (p, j)) in snap.iter().enumerate() {
            let sup = x0
                .iter()
                .map(|xs| {
                    let y = apply(j, xs[s]);
                    y[0].hypot(y[1])
                })
                .fold(0.0, f64::max);
            if sup < best.0 {
                best = (sup, *p);
            }
        }
        out.i_values.push(best.0);
        out.witnesses.push(best.1);
    }
    Ok(out)
}

fn invert(m: &Jac) -> Jac {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ]
}

/// `X_t(x) = D psi(t, y) X_0(y)` at grid points, `y = psi^{-1}(t, x)`, computed
/// by integrating position and `d y / d x` backwards from `t`.
pub fn transport_frame(
    family0: &FrameFamily,
    src: &dyn VelocitySource,
    t: f64,
    dt: f64,
) -> Result<FrameFamily> {
    let g = *family0.grid();
    let t0 = src.time_range().0;
    src.check_range(t0, t)?;
    let pts: Vec<[f64; 2]> = (0..g.len()).map(|k| g.point(k % g.n, k / g.n)).collect();
    let m = step_count(t - t0, dt);
    let h = (t0 - t) / m as f64;
    let mut cur: Vec<([f64; 2], Jac)> = pts.iter().map(|p| (*p, IDENTITY)).collect();
    for s in 0..m {
        let ts = t + s as f64 * h;
        cur.par_iter_mut()
            .for_each(|(p, j)| (*p, *j) = rk4_tangent(src, ts, h, *p, *j));
    }
    let splines: Vec<(Spline, Spline)> = family0
        .members
        .iter()
        .map(|mb| (Spline::new(&mb.x1), Spline::new(&mb.x2)))
        .collect();
    let mut members = Vec::new();
    for (mb, (s1, s2)) in family0.members.iter().zip(&splines) {
        let vals: Vec<[f64; 2]> = cur
            .par_iter()
            .map(|(y, mm)| {
                let x0 = [s1.eval(*y), s2.eval(*y)];
                apply(&invert(mm), x0)
            })
            .collect();
        let a = ScalarField::from_values(g, vals.iter().map(|v| v[0]).collect())?;
        let b = ScalarField::from_values(g, vals.iter().map(|v| v[1]).collect())?;
        members.push(FrameMember::new(mb.label.clone(), a, b)?);
    }
    Ok(FrameFamily {
        members,
        h: family0.h,
        order: family0.order,
    })
}

/// Evolve a frame with the grid equation
/// `d_t X = -curl(X x v) - v div X` (equivalent to `d_t X + v.grad X = X.grad v`
/// for divergence-free `v`), RK4 with dealiased products.
pub fn transport_frame_eulerian(
    family0: &FrameFamily,
    src: &GriddedVelocity,
    t: f64,
    dt: f64,
) -> Result<FrameFamily> {
    let g = *family0.grid();
    if g != src.grid {
        return Err(LabError::GridMismatch);
    }
    let t0 = src.time_range().0;
    src.check_range(t0, t)?;
    let m = step_count(t - t0, dt);
    let h = (t - t0) / m as f64;
    let p = plan(g.n);
    let velocity = |time: f64| -> (Vec<f64>, Vec<f64>) {
        let w = src.omega_spectrum_at(time);
        let (a, b) = biot_savart_spectra(&g, &w);
        (p.inverse(&a), p.inverse(&b))
    };
    let deriv = |s: &[Complex64], axis: Axis| -> Vec<Complex64> {
        let f = ScalarField::from_spectrum(g, s.to_vec()).expect("length");
        f.derivative(axis).spectrum().to_vec()
    };
    let rate = |x1: &[Complex64], x2: &[Complex64], v: &(Vec<f64>, Vec<f64>)| {
        let a = p.inverse(x1);
        let b = p.inverse(x2);
        let d1 = deriv(x1, Axis::X1);
        let d2 = deriv(x2, Axis::X2);
        let div: Vec<Complex64> = d1.iter().zip(&d2).map(|(u, w)| u + w).collect();
        let divg = p.inverse(&div);
        let n = g.len();
        let mut s = vec![0.0; n];
        let mut q1 = vec![0.0; n];
        let mut q2 = vec![0.0; n];
        for k in 0..n {
            s[k] = a[k] * v.1[k] - b[k] * v.0[k];
            q1[k] = v.0[k] * divg[k];
            q2[k] = v.1[k] * divg[k];
        }
        let mut sh = p.forward(&s);
        let mut q1h = p.forward(&q1);
        let mut q2h = p.forward(&q2);
        dealias_in_place(&g, &mut sh);
        dealias_in_place(&g, &mut q1h);
        dealias_in_place(&g, &mut q2h);
        let s1 = deriv(&sh, Axis::X1);
        let s2 = deriv(&sh, Axis::X2);
        let r1: Vec<Complex64> = s2.iter().zip(&q1h).map(|(u, w)| -u - w).collect();
        let r2: Vec<Complex64> = s1.iter().zip(&q2h).map(|(u, w)| u - w).collect();
        (r1, r2)
    };
    let add = |y: &[Complex64], a: f64, x: &[Complex64]| -> Vec<Complex64> {
        y.iter().zip(x).map(|(u, w)| u + w * a).collect()
    };
    let mut members = Vec::new();
    for mb in &family0.members {
        let mut x1 = mb.x1.spectrum().to_vec();
        let mut x2 = mb.x2.spectrum().to_vec();
        dealias_in_place(&g, &mut x1);
        dealias_in_place(&g, &mut x2);
        for s in 0..m {
            let ts = t0 + s as f64 * h;
            let va = velocity(ts);
            let vm = velocity(ts + 0.5 * h);
            let vb = velocity(ts + h);
            let k1 = rate(&x1, &x2, &va);
            let k2 = rate(&add(&x1, 0.5 * h, &k1.0), &add(&x2, 0.5 * h, &k1.1), &vm);
            let k3 = rate(&add(&x1, 0.5 * h, &k2.0), &add(&x2, 0.5 * h, &k2.1), &vm);
            let k4 = rate(&add(&x1, h, &k3.0), &add(&x2, h, &k3.1), &vb);
            for i in 0..x1.len() {
                x1[i] += h / 6.0 * (k1.0[i] + 2.0 * k2.0[i] + 2.0 * k3.0[i] + k4.0[i]);
                x2[i] += h / 6.0 * (k1.1[i] + 2.0 * k2.1[i] + 2.0 * k3.1[i] + k4.1[i]);
            }
        }
        members.push(FrameMember::new(
            mb.label.clone(),
            ScalarField::from_spectrum(g, x1)?,
            ScalarField::from_spectrum(g, x2)?,
        )?);
    }
    Ok(FrameFamily {
        members,
        h: family0.h,
        order: family0.order,
    })
}

fn check_h(h: f64) -> Result<()> {
    if h > 0.0 && h <= (-1.0f64).exp() {
        Ok(())
    } else {
        Err(domain("h", format!("{h} outside (0, 1/e]")))
    }
}

/// `delta_t(h) = h^{exp(ll_integral)}`.
pub fn delta_scale(h: f64, ll_integral: f64) -> Result<f64> {
    check_h(h)?;
    if !(ll_integral >= 0.0) {
        return Err(domain("ll_integral", format!("{ll_integral} < 0")));
    }
    Ok(h.powf(ll_integral.exp()))
}

/// Inverse function `delta_t^{-1}(h) = h^{exp(-ll_integral)}`.
pub fn delta_scale_inverse(h: f64, ll_integral: f64) -> Result<f64> {
    check_h(h)?;
    if !(ll_integral >= 0.0) {
        return Err(domain("ll_integral", format!("{ll_integral} < 0")));
    }
    Ok(h.powf((-ll_integral).exp()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InclusionReport {
    pub h: f64,
    pub delta: f64,
    pub samples: usize,
    /// Minimum over samples of `dist(psi(x), A(t)) - delta_t(h)`.
    pub worst_margin: f64,
    pub worst_point: [f64; 2],
}

impl InclusionReport {
    pub fn holds(&self, tolerance: f64) -> bool {
        self.worst_margin >= -tolerance
    }
}

/// Sample the boundary of `(A_0)_h^c` on circles of radius `h` around the
/// points of `a0`, advect samples and `a0` to `t`, and measure how far the
/// images stay from `A(t)` relative to `delta_t(h)`.
#[allow(clippy::too_many_arguments)]
pub fn check_distance_set_inclusion(
    grid: &GridSpec,
    a0: &[[f64; 2]],
    src: &dyn VelocitySource,
    t: f64,
    dt: f64,
    h: f64,
    ll_integral: f64,
    per_point: usize,
) -> Result<InclusionReport> {
    let delta = delta_scale(h, ll_integral)?;
    let mut samples = Vec::new();
    for p in a0 {
        for k in 0..per_point {
            let th = 2.0 * std::f64::consts::PI * k as f64 / per_point as f64;
            let q = [p[0] + h * th.cos(), p[1] + h * th.sin()];
            if distance_to_set(grid, q, a0) >= h * (1.0 - 1e-12) {
                samples.push(q);
            }
        }
    }
    let t0 = src.time_range().0;
    let moved = advect(src, &samples, t0, t, dt)?;
    let at = advect(src, a0, t0, t, dt)?;
    let mut worst = (f64::INFINITY, [0.0, 0.0]);
    for q in &moved {
        let m = distance_to_set(grid, *q, &at) - delta;
        if m < worst.0 {
            worst = (m, *q);
        }
    }
    Ok(InclusionReport {
        h,
        delta,
        samples: moved.len(),
        worst_margin: worst.0,
        worst_point: worst.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotation(omega: f64) -> AnalyticVelocity<impl Fn(f64, [f64; 2]) -> ([f64; 2], Jac) + Sync> {
        AnalyticVelocity::new((0.0, 10.0), move |_, x| {
            ([-omega * x[1], omega * x[0]], [[0.0, -omega], [omega, 0.0]])
        })
    }

    #[test]
    fn zero_velocity_is_identity() {
        let z = AnalyticVelocity::new((0.0, 1.0), |_, _| ([0.0, 0.0], [[0.0; 2]; 2]));
        let pts = vec![[0.3, -0.2], [1.0, 2.0]];
        assert_eq!(advect(&z, &pts, 0.0, 1.0, 0.1).unwrap(), pts);
        assert_eq!(inverse_flow(&z, &pts, 1.0, 0.1).unwrap(), pts);
    }

    #[test]
    fn rigid_rotation_is_exact() {
        let om = 0.8;
        let src = rotation(om);
        let pts = vec![[1.0, 0.0], [0.3, -0.7]];
        let t = 1.5;
        let out = advect(&src, &pts, 0.0, t, 1e-3).unwrap();
        for (p, q) in pts.iter().zip(&out) {
            let (c, s) = ((om * t).cos(), (om * t).sin());
            let want = [c * p[0] - s * p[1], s * p[0] + c * p[1]];
            assert!((q[0] - want[0]).abs() < 1e-8 && (q[1] - want[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn out_of_range_history_is_an_error() {
        let src = rotation(1.0);
        assert!(matches!(
            advect(&src, &[[0.0, 0.0]], 0.0, 11.0, 0.1),
            Err(LabError::HistoryRange { .. })
        ));
    }

    #[test]
    fn delta_scale_arithmetic() {
        let h = 0.2;
        assert_eq!(delta_scale(h, 0.0).unwrap(), h);
        assert!((delta_scale(h, 2f64.ln()).unwrap() - h * h).abs() < 1e-15);
        assert!((delta_scale_inverse(delta_scale(h, 0.7).unwrap(), 0.7).unwrap() - h).abs() < 1e-14);
        assert!(delta_scale(0.5, 0.0).is_err());
        assert!(delta_scale(0.1, -1.0).is_err());
    }
}
