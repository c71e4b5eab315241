//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//! The process fails when a criterion outside `KNOWN_FAILING` fails, or
//! when any criterion fails under `ACCEPTANCE_STRICT=1`.
//! `ACCEPTANCE_ONLY=3,7` restricts the run.

use std::f64::consts::PI;
use std::time::Instant;

use vortex_lab::dyadic::{bernstein_ratios, bony_decompose, dyadic_block, DyadicBlockSet};
use vortex_lab::estimates::{
    calibrate_gradient_growth, calibrate_lifespan, check_lp_bounds, check_plateau_density_bound, commutator_ratio,
    lifespan_bound, lp_samples, radial_bump, refinement_orders, singular_lifespan, stationary_sigma,
    uniqueness_twin_experiment, EstimateFit, DEFAULT_MARGIN,
};
use vortex_lab::flow::{integrate_flow, inverse_flow, track_frame, GriddedVelocity};
use vortex_lab::geometry::polygon_area;
use vortex_lab::patch::{
    blowup_h_grid, build_admissible_family, build_patch, mollified_indicator, plateau_persistence,
    singular_blowup_profile, PatchKind, PatchParams,
};
use vortex_lab::random::{band_limited, uniform_points};
use vortex_lab::solver::{run, RunOutput, SolverConfig, StandardAnalyzer, State};
use vortex_lab::{biot_savart, dealias, GridSpec};

// Pinned tolerances.
const RANKINE_SUP: f64 = 1e-2;
const ENERGY_IDENTITY: f64 = 1e-10;
const L2_DRIFT: f64 = 1e-6;
const LINF_OVERSHOOT: f64 = 1e-2;
const RECONSTRUCTION: f64 = 1e-10;
const ORTHOGONALITY: f64 = 1e-12;
const BONY: f64 = 1e-10;
/// Frozen Bernstein band for first and second derivatives.
const BERNSTEIN_1: (f64, f64) = (0.5, 2.5);
const BERNSTEIN_2: (f64, f64) = (0.25, 6.0);
const CHECK_REL_TOL: f64 = 1e-3;
const UNIT_LIFESPAN: f64 = 0.297_563;
const ROUND_TRIP: f64 = 1e-4;
const AREA_DRIFT: f64 = 1e-4;
const PLATEAU_RATIO: f64 = 1e-3;
const BLOWUP_R2: f64 = 0.9;
const SLOPE_FACTOR: f64 = 2.0;
const SIGMA_RESIDUAL: f64 = 1e-6;
const SIGMA_ORDER: f64 = 2.0;
const THETA_MIN: f64 = 0.5;

const EIGHT_PI: f64 = 8.0 * PI;

/// Criteria that fail under the prescribed protocol; see the notes printed
/// next to them.
const KNOWN_FAILING: &[(usize, &str)] = &[(
    4,
    "the single calibration scenario barely deforms the density, so its constant underestimates the stretching at the largest amplitude",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn grid(n: usize, l: f64) -> GridSpec {
    GridSpec::new(n, l, 2.0 / 3.0).unwrap()
}

fn disc_state(n: usize, delta: f64, width_cells: f64) -> (vortex_lab::patch::PatchSpec, State) {
    let g = grid(n, EIGHT_PI);
    let p = PatchParams::new(PatchKind::Disc { radius: 1.0 })
        .with_width(width_cells * g.dx())
        .with_density(delta, 0.3);
    build_patch(&p, g).unwrap()
}

fn solve(st: &State, dt: f64, t_end: f64, every: usize, history: usize, markers: Vec<[f64; 2]>) -> RunOutput {
    let cfg = SolverConfig {
        dt,
        t_end,
        diagnostics_every: every,
        history_every: history,
        store_snapshots: true,
        ..Default::default()
    };
    let mut an = StandardAnalyzer {
        sample_pairs: 1000,
        sigma_from_markers: !markers.is_empty(),
        ..Default::default()
    };
    run(st, &cfg, &mut an, markers).unwrap()
}

/// Rankine vortex velocity plus the periodic images on a square lattice,
/// minus the rotation induced by the uniform background vorticity.
fn rankine_periodic(x: [f64; 2], l: f64, images: i64) -> [f64; 2] {
    let k = |z: [f64; 2]| {
        let r2 = z[0] * z[0] + z[1] * z[1];
        [-z[1] / (2.0 * PI * r2), z[0] / (2.0 * PI * r2)]
    };
    let r2 = x[0] * x[0] + x[1] * x[1];
    let mut v = if r2 < 1.0 {
        [-x[1] / 2.0, x[0] / 2.0]
    } else {
        [-x[1] / (2.0 * r2), x[0] / (2.0 * r2)]
    };
    for m1 in -images..=images {
        for m2 in -images..=images {
            if m1 == 0 && m2 == 0 {
                continue;
            }
            let w = k([x[0] - m1 as f64 * l, x[1] - m2 as f64 * l]);
            v[0] += PI * w[0];
            v[1] += PI * w[1];
        }
    }
    let c = PI / (l * l);
    [v[0] + 0.5 * c * x[1], v[1] - 0.5 * c * x[0]]
}

fn c1_kernel() -> Outcome {
    let g = grid(512, EIGHT_PI);
    let omega = dealias(&mollified_indicator(g, &PatchKind::Disc { radius: 1.0 }, g.dx()));
    let v = biot_savart(&omega);
    let mut err: f64 = 0.0;
    for j in (0..g.n).step_by(16) {
        for i in (0..g.n).step_by(16) {
            let x = g.point(i, j);
            let e = rankine_periodic(x, g.length, 150);
            let k = j * g.n + i;
            err = err.max((v.u1.values()[k] - e[0]).hypot(v.u2.values()[k] - e[1]));
        }
    }
    let gv = v
        .gradient()
        .iter()
        .flatten()
        .map(|d| d.spectral_l2_norm().powi(2))
        .sum::<f64>()
        .sqrt();
    let w = omega.map_values({
        let m = omega.mean();
        move |x| x - m
    });
    let wl2 = w.spectral_l2_norm();
    let rel = (gv - wl2).abs() / wl2;
    outcome(
        err <= RANKINE_SUP && rel <= ENERGY_IDENTITY,
        format!("sup error {err:.3e} (<= {RANKINE_SUP:e}), | ||grad v||_2 - ||omega||_2 | / ||omega||_2 = {rel:.2e}"),
    )
}

fn c2_euler() -> Outcome {
    let (_, st) = disc_state(256, 0.0, 2.0);
    let out = solve(&st, 2e-3, 1.0, 50, 0, Vec::new());
    let r = out.reports();
    let (l2, li) = (r[0].omega_l2, r[0].omega_linf);
    let drift = r.iter().map(|x| (x.omega_l2 - l2).abs() / l2).fold(0.0, f64::max);
    let over = r.iter().map(|x| (x.omega_linf - li) / li).fold(0.0, f64::max);
    outcome(
        out.is_complete() && drift <= L2_DRIFT && over <= LINF_OVERSHOOT,
        format!("L2 drift {drift:.2e}, Linf overshoot {over:.2e}, {} snapshots", r.len()),
    )
}

fn c3_littlewood_paley() -> Outcome {
    let g = grid(128, 2.0 * PI);
    let (mut rec, mut orth, mut bony): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let (mut b1, mut b2) = ((f64::INFINITY, 0.0f64), (f64::INFINITY, 0.0f64));
    for seed in 0..8u64 {
        let u = band_limited(g, seed, 40, 1.0);
        let v = band_limited(g, seed + 100, 40, 1.0);
        let set = DyadicBlockSet::new(&u);
        rec = rec.max(set.reconstruct().sub(&u).unwrap().max_abs() / u.max_abs());
        for p in -1..=set.q_max {
            for q in -1..=set.q_max {
                if (p - q).abs() >= 2 {
                    let pq = dyadic_block(set.block(q), p).unwrap();
                    orth = orth.max(pq.max_abs() / u.max_abs());
                }
            }
        }
        let (a, b, c) = bony_decompose(&u, &v).unwrap();
        let sum = a.add(&b).unwrap().add(&c).unwrap();
        let prod = dealias(&u.mul(&v).unwrap());
        bony = bony.max(sum.sub(&prod).unwrap().max_abs() / (u.max_abs() * v.max_abs()));
        for (_, r1, r2) in bernstein_ratios(&u) {
            b1 = (b1.0.min(r1[0]), b1.1.max(r1[1]));
            b2 = (b2.0.min(r2[0]), b2.1.max(r2[1]));
        }
    }
    let band = b1.0 >= BERNSTEIN_1.0 && b1.1 <= BERNSTEIN_1.1 && b2.0 >= BERNSTEIN_2.0 && b2.1 <= BERNSTEIN_2.1;
    outcome(
        rec <= RECONSTRUCTION && orth <= ORTHOGONALITY && bony <= BONY && band,
        format!(
            "reconstruction {rec:.1e}, orthogonality {orth:.1e}, Bony {bony:.1e}, Bernstein [{:.3}, {:.3}] / [{:.3}, {:.3}]",
            b1.0, b1.1, b2.0, b2.1
        ),
    )
}

fn lp_required(out: &RunOutput, a: f64) -> Vec<f64> {
    let s = lp_samples(&out.reports(), a);
    check_lp_bounds(&s, &[a, 2.0, f64::INFINITY], 0.0, CHECK_REL_TOL)
        .unwrap()
        .required()
}

fn c4_lp_sweep() -> Outcome {
    let a = 1.5;
    let runs: Vec<(f64, RunOutput)> = [0.01, 0.0, 0.1, 1.0]
        .iter()
        .map(|&d| {
            let (_, st) = disc_state(256, d, 4.0);
            (d, solve(&st, 0.01, 1.0, 10, 0, Vec::new()))
        })
        .collect();
    let fit = EstimateFit::calibrate("lp_bounds", "disc-0.01", 0, &lp_required(&runs[0].1, a), DEFAULT_MARGIN).unwrap();
    let mut violations = 0;
    let mut rows = 0;
    let mut complete = true;
    let mut first = String::new();
    for (d, out) in &runs[1..] {
        complete &= out.is_complete();
        let s = lp_samples(&out.reports(), a);
        let rep = check_lp_bounds(&s, &[a, 2.0, f64::INFINITY], fit.constant, CHECK_REL_TOL).unwrap();
        if let (true, Some(v)) = (first.is_empty(), rep.first_violation()) {
            first = format!(", first at delta = {d}, t = {:.2}, {} (needs C = {:.4})", v.t, v.label, v.required);
        }
        violations += rep.violations();
        rows += rep.rows.len();
    }
    outcome(
        complete && violations == 0,
        format!("C = {:.4}, {violations} violations over {rows} held-out rows{first}", fit.constant),
    )
}

fn c5_lifespan() -> Outcome {
    let unit = lifespan_bound(1.0, 1.0, 1.0, 1.0).unwrap();
    let exact = (1.0 + 0.5 * 2f64.ln()).ln();
    let mut bad = 0;
    for i in 0..100 {
        let w = 10f64.powf(-2.0 + 4.0 * i as f64 / 99.0);
        let mut prev = f64::INFINITY;
        for j in 0..100 {
            let g = 10f64.powf(-4.0 + 6.0 * j as f64 / 99.0);
            let t = lifespan_bound(w, g, 1.0, 1.0).unwrap();
            if !(t < prev) {
                bad += 1;
            }
            prev = t;
        }
    }
    let (_, st) = disc_state(256, 0.1, 4.0);
    let pilot = solve(&st, 0.01, 0.5, 10, 0, Vec::new());
    let r = pilot.reports();
    let w = r[0].omega_la + r[0].omega_linf;
    let (c, c0, t) = calibrate_lifespan(&r, w).unwrap();
    let out = solve(&st, 0.01, (t / 0.01).ceil() * 0.01, 10, 0, Vec::new());
    let v = out.reports().last().map_or(f64::NAN, |x| x.v_accum);
    outcome(
        (unit - exact).abs() < 1e-12 && (unit - UNIT_LIFESPAN).abs() < 1e-6 && bad == 0 && out.is_complete() && v.is_finite(),
        format!("T(1,1,1,1) = {unit:.6}, {bad} monotonicity violations, run to T = {t:.3} (C = {c:.3}, C0 = {c0:.3}) with V(T) = {v:.3}"),
    )
}

fn c6_flow_frame() -> Outcome {
    let (spec, st) = disc_state(128, 0.1, 4.0);
    let out = solve(&st, 0.01, 1.0, 10, 2, Vec::new());
    let src = GriddedVelocity::new(out.history.as_ref().unwrap()).unwrap();
    let l = spec.grid.length;
    let seeds = uniform_points(7, 1000, 0.25 * l);
    let fwd = integrate_flow(&src, &seeds, &[0.0, 1.0], 0.01, l).unwrap();
    let back = inverse_flow(&src, fwd.last(), 1.0, 0.01).unwrap();
    let rt = seeds
        .iter()
        .zip(&back)
        .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
        .fold(0.0, f64::max);
    let times: Vec<f64> = out.snapshots.iter().map(|s| s.report.t).collect();
    let contour = integrate_flow(&src, &spec.contour, &times, 0.01, l).unwrap();
    let a0 = polygon_area(&spec.contour);
    let drift = (0..times.len())
        .map(|k| (polygon_area(contour.at(k)) - a0).abs() / a0)
        .fold(0.0, f64::max);
    let fam = build_admissible_family(&spec).unwrap();
    let track = track_frame(&fam, &src, None, &times, 0.01).unwrap();
    let i0 = track.i_values[0];
    let mut frame_bad = 0;
    for (k, r) in out.reports().iter().enumerate() {
        if track.i_values[k] < i0 * (-r.v_accum).exp() * (1.0 - 1e-9) {
            frame_bad += 1;
        }
    }
    outcome(
        rt <= ROUND_TRIP * l && drift <= AREA_DRIFT && frame_bad == 0,
        format!(
            "round trip {:.2e} L, area drift {drift:.2e}, frame bound violated at {frame_bad} of {} snapshots",
            rt / l,
            times.len()
        ),
    )
}

fn square(n: usize, delta: f64, t_end: f64) -> (vortex_lab::patch::PatchSpec, State, RunOutput) {
    let g = grid(n, 2.0 * PI);
    let p = PatchParams::new(PatchKind::Square { half_width: 0.5 })
        .with_width(2.0 * g.dx())
        .with_density(delta, 0.3);
    let (spec, st) = build_patch(&p, g).unwrap();
    let cfg = SolverConfig {
        dt: 0.01,
        t_end,
        diagnostics_every: 5,
        history_every: 2,
        store_snapshots: true,
        ..Default::default()
    };
    let mut an = StandardAnalyzer {
        sample_pairs: 1000,
        sigma_from_markers: true,
        h_grid: blowup_h_grid(&g),
        ..Default::default()
    };
    let out = run(&st, &cfg, &mut an, spec.singular_set.clone()).unwrap();
    (spec, st, out)
}

fn c7_singular_square() -> Outcome {
    let r = 0.3;
    let a = 1.5;
    let ps = [a, 2.0, f64::INFINITY];
    // calibration run
    let (_, _, cal) = square(256, 0.01, 1.0);
    let cr = cal.reports();
    let w_cal = cr[0].omega_la + cr[0].omega_linf;
    let (c, _) = calibrate_gradient_growth(&cr, w_cal).unwrap();
    let c0 = cr
        .iter()
        .map(|x| x.w_accum / (c * x.t * w_cal).exp().exp() - x.t)
        .fold(0.0, f64::max);
    let req = check_plateau_density_bound(&lp_samples(&cr, a), &ps, r, 0.0, CHECK_REL_TOL)
        .unwrap()
        .required();
    let fit = EstimateFit::calibrate("plateau_density", "square-0.01", 0, &req, DEFAULT_MARGIN).unwrap();

    let (spec, _, out) = square(512, 0.1, 0.5);
    let rep = out.reports();
    let r0 = &rep[0];
    let w_la = r0.omega_la + r0.omega_linf;
    let w_l1 = r0.omega_l1 + r0.omega_linf;
    let t = singular_lifespan(w_la, w_l1, r0.grad_rho_linf, r, c, c0).unwrap();
    let half = 0.5 * t;

    let bound = check_plateau_density_bound(&lp_samples(&rep, a), &ps, r, fit.constant, CHECK_REL_TOL).unwrap();
    let src = GriddedVelocity::new(out.history.as_ref().unwrap()).unwrap();
    let hg = blowup_h_grid(&spec.grid);
    let mut worst_ratio: f64 = 0.0;
    let mut slopes = Vec::new();
    let mut r2_0 = 0.0;
    for s in out.snapshots.iter().filter(|s| s.report.t <= half + 1e-9) {
        let st = s.state.as_ref().unwrap();
        let p = plateau_persistence(&st.rho, &spec.singular_set, &s.markers, r / 2.0, &src, st.t, 0.01).unwrap();
        worst_ratio = worst_ratio.max(p.ratio());
        let b = singular_blowup_profile(st.velocity(), &s.markers, &hg).unwrap();
        if slopes.is_empty() {
            r2_0 = b.fit.r2;
        }
        slopes.push(b.fit.slope);
    }
    let s0 = slopes[0];
    let slope_ok = s0 > 0.0 && slopes.iter().all(|s| *s >= s0 / SLOPE_FACTOR && *s <= s0 * SLOPE_FACTOR);
    outcome(
        out.is_complete() && worst_ratio <= PLATEAU_RATIO && bound.passed() && r2_0 >= BLOWUP_R2 && slope_ok,
        format!(
            "T = {t:.3} (C = {c:.2e}, C0 = {c0:.3}), {} snapshots in [0, T/2]: plateau ratio {worst_ratio:.2e}, \
             density bound C = {:.3} with {} violations, R2(0) = {r2_0:.3}, slopes {:.4}..{:.4}",
            slopes.len(),
            fit.constant,
            bound.violations(),
            slopes.iter().copied().fold(f64::INFINITY, f64::min),
            slopes.iter().copied().fold(0.0, f64::max),
        ),
    )
}

fn c8_commutator() -> Outcome {
    let g = grid(256, 1.0);
    let ns = [4.0, 8.0, 16.0, 32.0, 64.0];
    let worst: Vec<f64> = (0..20u64)
        .map(|s| {
            let x1 = band_limited(g, 3 * s, 12, 1.0);
            let x2 = band_limited(g, 3 * s + 1, 12, 1.0);
            let f = band_limited(g, 3 * s + 2, 24, 1.0);
            ns.iter()
                .map(|&n| commutator_ratio([&x1, &x2], &f, n, 0.5).unwrap())
                .fold(0.0, f64::max)
        })
        .collect();
    let mut fit = EstimateFit::calibrate("commutator", "band-limited", 0, &worst[..10], DEFAULT_MARGIN).unwrap();
    let held = fit.assert_on(&worst[10..]);
    outcome(
        held.violations == 0,
        format!("C = {:.4}, {} held-out violations (min slack {:.3})", fit.constant, held.violations, held.min_slack),
    )
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn c9_stationary() -> Outcome {
    let inner = simpson(|s| s * radial_bump(s, 1.0, 2.0), 1.0, 2.0, 20000);
    let outer = simpson(|s| s * radial_bump(s, 3.0, 4.0), 3.0, 4.0, 20000);
    let c = inner / outer;
    let g = move |s: f64| radial_bump(s, 1.0, 2.0) - c * radial_bump(s, 3.0, 4.0);
    let res: Vec<f64> = [128, 256, 512]
        .iter()
        .map(|&n| stationary_sigma(&g, 4.0, grid(n, 8.5)).unwrap().residual)
        .collect();
    let orders = refinement_orders(&res);
    let ok = res[2] <= SIGMA_RESIDUAL && orders.iter().all(|o| *o >= SIGMA_ORDER);
    outcome(ok, format!("residuals {:.2e} {:.2e} {:.2e}, orders {:.2?}", res[0], res[1], res[2], orders))
}

fn c10_twin() -> Outcome {
    let (_, st) = disc_state(128, 0.1, 4.0);
    let g = *st.grid();
    let pw = band_limited(g, 11, 6, 1.0);
    let pr = band_limited(g, 12, 6, 1.0);
    let cfg = SolverConfig {
        dt: 0.01,
        t_end: 1.0,
        diagnostics_every: 10,
        ..Default::default()
    };
    let rep = uniqueness_twin_experiment(&st, (&pw, &pr), &[1e-2, 1e-3, 1e-4], &cfg).unwrap();
    let theta = rep.theta_at(0.5);
    outcome(
        theta >= THETA_MIN && rep.zero_delta_identical,
        format!("theta(T/2) = {theta:.4}, zero perturbation bit-identical: {}", rep.zero_delta_identical),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("spectral kernel", c1_kernel),
        ("Euler reduction", c2_euler),
        ("Littlewood-Paley suite", c3_littlewood_paley),
        ("Lp bounds sweep", c4_lp_sweep),
        ("lifespan", c5_lifespan),
        ("flow and frame", c6_flow_frame),
        ("singular square", c7_singular_square),
        ("commutator", c8_commutator),
        ("stationary swirl", c9_stationary),
        ("continuous dependence", c10_twin),
    ];
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = 0;
    let mut unexpected = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let id = k + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {name}: {tag} ({:.1} s) {}", t0.elapsed().as_secs_f64(), o.detail);
        let known = KNOWN_FAILING.iter().find(|k| k.0 == id);
        if !o.pass {
            failed += 1;
            match known {
                Some((_, why)) => println!("             known failure: {why}"),
                None => unexpected += 1,
            }
        }
    }
    println!("{failed} criteria failed, {unexpected} unexpectedly");
    if unexpected > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}
