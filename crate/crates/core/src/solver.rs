//! Pseudo-spectral RK4 integration of the vorticity-density system
//! `d_t omega + v . grad omega = d_1 rho`, `d_t rho + v . grad rho = 0`,
//! `v = BS(omega)`.

use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dyadic::{default_h_grid, l_sigma_norm, log_lipschitz_norm, NormReport};
use crate::error::{LabError, Result};
use crate::spectral::{
    biot_savart, biot_savart_spectra, dealias, dealias_in_place, eval_spectral, plan, Axis,
    GridSpec, ScalarField, VelocityField,
};

/// Spectral-tail energy fraction above which a run is flagged under-resolved.
pub const TAIL_WARNING: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct State {
    pub t: f64,
    pub omega: ScalarField,
    pub rho: ScalarField,
    v: OnceLock<VelocityField>,
}

impl State {
    pub fn new(t: f64, omega: ScalarField, rho: ScalarField) -> Result<Self> {
        if omega.grid() != rho.grid() {
            return Err(LabError::GridMismatch);
        }
        Ok(Self {
            t,
            omega,
            rho,
            v: OnceLock::new(),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.omega.grid()
    }

    pub fn velocity(&self) -> &VelocityField {
        self.v.get_or_init(|| biot_savart(&self.omega))
    }

    /// Both fields projected onto the retained modes.
    pub fn dealiased(&self) -> Self {
        Self::new(self.t, dealias(&self.omega), dealias(&self.rho)).expect("same grid")
    }

    /// The state whose forward evolution retraces this one backwards in time.
    pub fn time_reversed(&self) -> Self {
        Self::new(self.t, self.omega.scale(-1.0), self.rho.clone()).expect("same grid")
    }

    pub fn grad_rho(&self) -> (ScalarField, ScalarField) {
        (self.rho.derivative(Axis::X1), self.rho.derivative(Axis::X2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub cfl_max: f64,
    /// Steps between diagnostic snapshots.
    pub diagnostics_every: usize,
    /// Steps between stored vorticity spectra for flow reconstruction; 0 disables.
    pub history_every: usize,
    pub max_halvings: u32,
    /// Keep full field snapshots alongside the reports.
    pub store_snapshots: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            t_end: 1.0,
            cfl_max: 0.5,
            diagnostics_every: 10,
            history_every: 0,
            max_halvings: 4,
            store_snapshots: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            p.push(format!("dt = {} must be positive", self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            p.push(format!("t_end = {} must be nonnegative", self.t_end));
        }
        if !(self.cfl_max > 0.0) {
            p.push(format!("cfl_max = {} must be positive", self.cfl_max));
        }
        if self.diagnostics_every == 0 {
            p.push("diagnostics_every must be at least 1".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(LabError::Config(p.join("; ")))
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

pub(crate) struct Rhs {
    pub domega: Vec<Complex64>,
    pub drho: Vec<Complex64>,
    pub v1: Vec<Complex64>,
    pub v2: Vec<Complex64>,
    pub vmax: f64,
}

fn times_ik(g: &GridSpec, s: &[Complex64], axis: Axis) -> Vec<Complex64> {
    let half = g.half();
    let mut out = vec![Complex64::new(0.0, 0.0); s.len()];
    for k2 in 0..g.n {
        for k1 in 0..half {
            let (k, nyq) = match axis {
                Axis::X1 => (g.kx(k1), g.is_nyquist(k1)),
                Axis::X2 => (g.ky(k2), g.is_nyquist(k2)),
            };
            if !nyq {
                let i = k2 * half + k1;
                out[i] = s[i] * Complex64::new(0.0, k);
            }
        }
    }
    out
}

pub(crate) fn rhs_spectral(g: &GridSpec, w: &[Complex64], r: &[Complex64], t: f64) -> Result<Rhs> {
    let p = plan(g.n);
    let (v1h, v2h) = biot_savart_spectra(g, w);
    let v1 = p.inverse(&v1h);
    let v2 = p.inverse(&v2h);
    let w1 = p.inverse(&times_ik(g, w, Axis::X1));
    let w2 = p.inverse(&times_ik(g, w, Axis::X2));
    let r1h = times_ik(g, r, Axis::X1);
    let r1 = p.inverse(&r1h);
    let r2 = p.inverse(&times_ik(g, r, Axis::X2));
    let mut vmax: f64 = 0.0;
    let mut aw = vec![0.0; g.len()];
    let mut ar = vec![0.0; g.len()];
    for k in 0..g.len() {
        aw[k] = v1[k] * w1[k] + v2[k] * w2[k];
        ar[k] = v1[k] * r1[k] + v2[k] * r2[k];
        vmax = vmax.max(v1[k].hypot(v2[k]));
    }
    if !vmax.is_finite() {
        return Err(LabError::Divergence { field: "velocity", t });
    }
    let mut aw_h = p.forward(&aw);
    let mut ar_h = p.forward(&ar);
    dealias_in_place(g, &mut aw_h);
    dealias_in_place(g, &mut ar_h);
    let domega: Vec<Complex64> = aw_h.iter().zip(&r1h).map(|(a, b)| b - a).collect();
    let drho: Vec<Complex64> = ar_h.iter().map(|a| -a).collect();
    if domega.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(LabError::Divergence { field: "omega", t });
    }
    if drho.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(LabError::Divergence { field: "rho", t });
    }
    Ok(Rhs {
        domega,
        drho,
        v1: v1h,
        v2: v2h,
        vmax,
    })
}

/// Right-hand side `(d_t omega, d_t rho)` at a state.
pub fn rhs(state: &State) -> Result<(ScalarField, ScalarField)> {
    let g = *state.grid();
    let r = rhs_spectral(&g, state.omega.spectrum(), state.rho.spectrum(), state.t)?;
    Ok((
        ScalarField::from_spectrum(g, r.domega)?,
        ScalarField::from_spectrum(g, r.drho)?,
    ))
}

fn axpy(y: &[Complex64], a: f64, x: &[Complex64]) -> Vec<Complex64> {
    y.iter().zip(x).map(|(u, v)| u + v * a).collect()
}

fn marker_velocity(g: &GridSpec, r: &Rhs, p: [f64; 2]) -> [f64; 2] {
    [eval_spectral(*g, &r.v1, p), eval_spectral(*g, &r.v2, p)]
}

/// Spectral integrator carrying optional Lagrangian markers.
pub struct Integrator {
    pub grid: GridSpec,
    pub t: f64,
    w: Vec<Complex64>,
    r: Vec<Complex64>,
    pub markers: Vec<[f64; 2]>,
    pub halvings_used: u32,
    pub last_vmax: f64,
}

impl Integrator {
    pub fn new(state: &State, markers: Vec<[f64; 2]>) -> Self {
        let s = state.dealiased();
        Self {
            grid: *s.grid(),
            t: s.t,
            w: s.omega.spectrum().to_vec(),
            r: s.rho.spectrum().to_vec(),
            markers,
            halvings_used: 0,
            last_vmax: 0.0,
        }
    }

    pub fn state(&self) -> State {
        State::new(
            self.t,
            ScalarField::from_spectrum(self.grid, self.w.clone()).expect("length"),
            ScalarField::from_spectrum(self.grid, self.r.clone()).expect("length"),
        )
        .expect("same grid")
    }

    pub fn omega_spectrum(&self) -> &[Complex64] {
        &self.w
    }

    fn rk4(&mut self, dt: f64, k1: Rhs) -> Result<()> {
        let g = self.grid;
        let t = self.t;
        let m0 = self.markers.clone();
        let mv1: Vec<[f64; 2]> = m0.iter().map(|p| marker_velocity(&g, &k1, *p)).collect();
        let shift = |m: &[[f64; 2]], v: &[[f64; 2]], a: f64| -> Vec<[f64; 2]> {
            m.iter()
                .zip(v)
                .map(|(p, u)| [p[0] + a * u[0], p[1] + a * u[1]])
                .collect()
        };

        let w2 = axpy(&self.w, 0.5 * dt, &k1.domega);
        let r2 = axpy(&self.r, 0.5 * dt, &k1.drho);
        let k2 = rhs_spectral(&g, &w2, &r2, t + 0.5 * dt)?;
        let m2 = shift(&m0, &mv1, 0.5 * dt);
        let mv2: Vec<[f64; 2]> = m2.iter().map(|p| marker_velocity(&g, &k2, *p)).collect();

        let w3 = axpy(&self.w, 0.5 * dt, &k2.domega);
        let r3 = axpy(&self.r, 0.5 * dt, &k2.drho);
        let k3 = rhs_spectral(&g, &w3, &r3, t + 0.5 * dt)?;
        let m3 = shift(&m0, &mv2, 0.5 * dt);
        let mv3: Vec<[f64; 2]> = m3.iter().map(|p| marker_velocity(&g, &k3, *p)).collect();

        let w4 = axpy(&self.w, dt, &k3.domega);
        let r4 = axpy(&self.r, dt, &k3.drho);
        let k4 = rhs_spectral(&g, &w4, &r4, t + dt)?;
        let m4 = shift(&m0, &mv3, dt);
        let mv4: Vec<[f64; 2]> = m4.iter().map(|p| marker_velocity(&g, &k4, *p)).collect();

        let c = dt / 6.0;
        for i in 0..self.w.len() {
            self.w[i] += c * (k1.domega[i] + 2.0 * k2.domega[i] + 2.0 * k3.domega[i] + k4.domega[i]);
            self.r[i] += c * (k1.drho[i] + 2.0 * k2.drho[i] + 2.0 * k3.drho[i] + k4.drho[i]);
        }
        for (k, p) in self.markers.iter_mut().enumerate() {
            for d in 0..2 {
                p[d] += c * (mv1[k][d] + 2.0 * mv2[k][d] + 2.0 * mv3[k][d] + mv4[k][d]);
            }
        }
        self.t = t + dt;
        Ok(())
    }

    /// Advance by `dt`, splitting into `2^h` substeps when the Courant number
    /// exceeds `cfl_max`; fails after `max_halvings` refinements.
    pub fn advance(&mut self, dt: f64, cfl_max: f64, max_halvings: u32) -> Result<()> {
        let g = self.grid;
        let k1 = rhs_spectral(&g, &self.w, &self.r, self.t)?;
        self.last_vmax = k1.vmax;
        let courant = |h: u32| dt / 2f64.powi(h as i32) * k1.vmax / g.dx();
        let mut h = 0;
        while courant(h) > cfl_max {
            if h == max_halvings {
                return Err(LabError::Cfl {
                    t: self.t,
                    courant: courant(h),
                    cfl_max,
                    halvings: h,
                });
            }
            h += 1;
        }
        self.halvings_used = self.halvings_used.max(h);
        let sub = dt / 2f64.powi(h as i32);
        self.rk4(sub, k1)?;
        for _ in 1..(1u32 << h) {
            let k = rhs_spectral(&g, &self.w, &self.r, self.t)?;
            self.rk4(sub, k)?;
        }
        Ok(())
    }
}

/// One RK4 step of size `cfg.dt` (with CFL halving).
pub fn step(state: &State, cfg: &SolverConfig) -> Result<State> {
    let mut it = Integrator::new(state, Vec::new());
    it.advance(cfg.dt, cfg.cfl_max, cfg.max_halvings)?;
    Ok(it.state())
}

/// Data handed to an analyzer at each snapshot.
pub struct SnapshotContext<'a> {
    pub state: &'a State,
    pub markers: &'a [[f64; 2]],
    pub step: usize,
}

/// Instantaneous diagnostics; time integrals are filled in by [`run`].
pub trait Analyzer {
    fn analyze(&mut self, ctx: &SnapshotContext<'_>) -> Result<NormReport>;
}

/// Norms every scenario reports.
#[derive(Debug, Clone)]
pub struct StandardAnalyzer {
    pub a: f64,
    pub holder_indices: Vec<f64>,
    pub sample_pairs: usize,
    /// Scale grid for the `L(Sigma)` seminorm; empty means the grid default.
    pub h_grid: Vec<f64>,
    /// Use the tracked markers as the singular set.
    pub sigma_from_markers: bool,
    pub compute_ll: bool,
}

impl Default for StandardAnalyzer {
    fn default() -> Self {
        Self {
            a: 1.5,
            holder_indices: Vec::new(),
            sample_pairs: 2000,
            h_grid: Vec::new(),
            sigma_from_markers: false,
            compute_ll: true,
        }
    }
}

impl Analyzer for StandardAnalyzer {
    fn analyze(&mut self, ctx: &SnapshotContext<'_>) -> Result<NormReport> {
        let s = ctx.state;
        let g = *s.grid();
        let v = s.velocity();
        let (r1, r2) = s.grad_rho();
        let grad_rho: Vec<f64> = r1
            .values()
            .iter()
            .zip(r2.values())
            .map(|(a, b)| a.hypot(*b))
            .collect();
        let gr = ScalarField::from_values(g, grad_rho)?;
        let gv = v.gradient_magnitude();
        let sigma: &[[f64; 2]] = if self.sigma_from_markers { ctx.markers } else { &[] };
        let h_grid = if self.h_grid.is_empty() {
            default_h_grid(&g)
        } else {
            self.h_grid.clone()
        };
        let mut rep = NormReport {
            t: s.t,
            omega_linf: s.omega.max_abs(),
            omega_l2: s.omega.l2_norm(),
            omega_la: s.omega.lp_norm(self.a),
            omega_l1: s.omega.lp_norm(1.0),
            grad_rho_linf: gr.max_abs(),
            grad_rho_l2: gr.l2_norm(),
            grad_rho_la: gr.lp_norm(self.a),
            grad_v_linf: gv.max_abs(),
            v_l2: v.l2_norm(),
            rho_l2: s.rho.l2_norm(),
            rho_min: s.rho.min_value(),
            rho_max: s.rho.max_value(),
            tail_fraction: s.omega.spectral_tail_fraction(),
            l_sigma: l_sigma_norm(&gv, sigma, &h_grid)?.value,
            ..Default::default()
        };
        if self.compute_ll {
            rep.ll = log_lipschitz_norm(v, self.sample_pairs)?;
        }
        for &si in &self.holder_indices {
            rep.holder
                .insert(NormReport::holder_key(si), crate::dyadic::holder_norm(&s.omega, si));
        }
        Ok(rep)
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub report: NormReport,
    pub state: Option<State>,
    pub markers: Vec<[f64; 2]>,
}

/// Stored vorticity spectra at uniformly spaced times.
#[derive(Debug, Clone)]
pub struct VorticityHistory {
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub spectra: Vec<ScalarField>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub snapshots: Vec<Snapshot>,
    pub history: Option<VorticityHistory>,
    pub final_state: State,
    pub markers: Vec<[f64; 2]>,
    pub halvings_used: u32,
    /// Error that stopped the run early, if any; the series above is still valid.
    pub failure: Option<LabError>,
    pub under_resolved: bool,
}

impl RunOutput {
    pub fn reports(&self) -> Vec<NormReport> {
        self.snapshots.iter().map(|s| s.report.clone()).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }
}

fn accumulate(prev: Option<&NormReport>, rep: &mut NormReport) {
    let lip_outside = rep.l_sigma;
    match prev {
        None => {
            rep.v_accum = 0.0;
            rep.ll_accum = 0.0;
            rep.w_accum = 0.0;
        }
        Some(p) => {
            let dt = rep.t - p.t;
            rep.v_accum = p.v_accum + 0.5 * dt * (p.grad_v_linf + rep.grad_v_linf);
            rep.ll_accum = p.ll_accum + 0.5 * dt * (p.ll + rep.ll);
        }
    }
    let w_now = w_integrand(lip_outside, rep.omega_la, rep.omega_linf, rep.ll_accum);
    if let Some(p) = prev {
        let w_prev = w_integrand(p.l_sigma, p.omega_la, p.omega_linf, p.ll_accum);
        rep.w_accum = p.w_accum + 0.5 * (rep.t - p.t) * (w_prev + w_now);
    }
}

/// `W = (||grad v||_{L(Sigma)} + ||omega||_{L^a cap L^inf}) exp(int ||v||_LL)`.
pub fn w_integrand(l_sigma: f64, omega_la: f64, omega_linf: f64, ll_accum: f64) -> f64 {
    (l_sigma + omega_la + omega_linf) * ll_accum.exp()
}

/// Integrate to `cfg.t_end`, calling the analyzer every `diagnostics_every`
/// steps (and at both ends) and accumulating `V`, `int LL` and `int W` by
/// the trapezoidal rule between snapshots.
pub fn run(
    initial: &State,
    cfg: &SolverConfig,
    analyzer: &mut dyn Analyzer,
    markers: Vec<[f64; 2]>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let mut it = Integrator::new(initial, markers);
    let steps = cfg.steps();
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut history = (cfg.history_every > 0).then(|| VorticityHistory {
        grid: it.grid,
        times: Vec::new(),
        spectra: Vec::new(),
    });
    let mut under = false;
    let mut take = |it: &Integrator, step: usize, snaps: &mut Vec<Snapshot>| -> Result<()> {
        let st = it.state();
        let mut rep = analyzer.analyze(&SnapshotContext {
            state: &st,
            markers: &it.markers,
            step,
        })?;
        accumulate(snaps.last().map(|s| &s.report), &mut rep);
        under |= rep.tail_fraction > TAIL_WARNING;
        snaps.push(Snapshot {
            report: rep,
            state: cfg.store_snapshots.then_some(st),
            markers: it.markers.clone(),
        });
        Ok(())
    };
    let record = |it: &Integrator, h: &mut Option<VorticityHistory>| {
        if let Some(h) = h {
            h.times.push(it.t);
            h.spectra.push(
                ScalarField::from_spectrum(it.grid, it.omega_spectrum().to_vec()).expect("length"),
            );
        }
    };
    take(&it, 0, &mut snapshots)?;
    record(&it, &mut history);
    let mut failure = None;
    for s in 1..=steps {
        let dt = cfg.dt.min(cfg.t_end - it.t).max(0.0);
        let dt = if s == steps { cfg.t_end - it.t } else { dt };
        if let Err(e) = it.advance(dt, cfg.cfl_max, cfg.max_halvings) {
            failure = Some(e);
            break;
        }
        if cfg.history_every > 0 && (s % cfg.history_every == 0 || s == steps) {
            record(&it, &mut history);
        }
        if s % cfg.diagnostics_every == 0 || s == steps {
            if let Err(e) = take(&it, s, &mut snapshots) {
                failure = Some(e);
                break;
            }
        }
    }
    drop(take);
    Ok(RunOutput {
        snapshots,
        history,
        final_state: it.state(),
        markers: it.markers.clone(),
        halvings_used: it.halvings_used,
        failure,
        under_resolved: under,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> GridSpec {
        GridSpec::new(32, 2.0 * PI, 2.0 / 3.0).unwrap()
    }

    #[test]
    fn constant_density_gives_euler_rhs() {
        let g = grid();
        let w = ScalarField::from_fn(g, |x, y| (x).sin() * (2.0 * y).cos());
        let s = State::new(0.0, w, ScalarField::constant(g, 1.0)).unwrap();
        let (dw, dr) = rhs(&s).unwrap();
        assert!(dr.max_abs() < 1e-13);
        assert!(dw.max_abs().is_finite());
    }

    #[test]
    fn stratified_rest_state_is_steady() {
        let g = grid();
        let s = State::new(0.0, ScalarField::zeros(g), ScalarField::from_fn(g, |_, y| y.sin())).unwrap();
        let (dw, dr) = rhs(&s).unwrap();
        assert!(dw.max_abs() < 1e-13 && dr.max_abs() < 1e-13);
    }

    #[test]
    fn buoyancy_generates_vorticity() {
        let g = grid();
        let s = State::new(0.0, ScalarField::zeros(g), ScalarField::from_fn(g, |x, _| x.sin())).unwrap();
        let (dw, dr) = rhs(&s).unwrap();
        let want = ScalarField::from_fn(g, |x, _| x.cos());
        assert!(dw.sub(&want).unwrap().max_abs() < 1e-13);
        assert!(dr.max_abs() < 1e-13);
    }

    #[test]
    fn zero_state_stays_zero() {
        let g = grid();
        let s = State::new(0.0, ScalarField::zeros(g), ScalarField::zeros(g)).unwrap();
        let out = step(&s, &SolverConfig::default()).unwrap();
        assert_eq!(out.omega.max_abs(), 0.0);
        assert_eq!(out.rho.max_abs(), 0.0);
        assert!((out.t - 0.01).abs() < 1e-15);
    }

    #[test]
    fn divergence_is_reported() {
        let g = grid();
        let w = ScalarField::from_fn(g, |x, _| if x > 0.0 { f64::NAN } else { 0.0 });
        let s = State::new(0.0, w, ScalarField::zeros(g)).unwrap();
        assert!(matches!(step(&s, &SolverConfig::default()), Err(LabError::Divergence { .. })));
    }

    #[test]
    fn cfl_violation_after_halvings() {
        let g = grid();
        let w = ScalarField::from_fn(g, |x, y| 1e4 * (x.sin() + y.cos()));
        let s = State::new(0.0, w, ScalarField::zeros(g)).unwrap();
        let cfg = SolverConfig {
            dt: 1.0,
            ..Default::default()
        };
        match step(&s, &cfg) {
            Err(LabError::Cfl { halvings, .. }) => assert_eq!(halvings, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rk4_order_on_smooth_flow() {
        let g = grid();
        let w = ScalarField::from_fn(g, |x, y| x.sin() * y.sin() + 0.3 * (2.0 * x + y).cos());
        let r = ScalarField::from_fn(g, |x, y| 0.5 * (x - y).sin());
        let s0 = State::new(0.0, w, r).unwrap();
        let solve = |dt: f64| {
            let mut it = Integrator::new(&s0, vec![]);
            let n = (0.8 / dt).round() as usize;
            for _ in 0..n {
                it.advance(dt, 10.0, 0).unwrap();
            }
            it.state().omega
        };
        let a = solve(0.1);
        let b = solve(0.05);
        let c = solve(0.025);
        let e1 = a.sub(&b).unwrap().l2_norm();
        let e2 = b.sub(&c).unwrap().l2_norm();
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }
}
