use proptest::prelude::*;

use vortex_lab::dyadic::{block_symbol, bony_decompose, chi, q_max, DyadicBlockSet};
use vortex_lab::estimates::{lifespan_bound, EstimateFit};
use vortex_lab::io::{decode_fields, encode_fields};
use vortex_lab::patch::fit_line;
use vortex_lab::random::band_limited;
use vortex_lab::smooth::smooth_cutoff;
use vortex_lab::solver::{run, SolverConfig, StandardAnalyzer, State};
use vortex_lab::{biot_savart, dealias, GridSpec, ScalarField};

fn grid(n: usize, l: f64) -> GridSpec {
    GridSpec::new(n, l, 2.0 / 3.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partition_of_unity(xi in 0.0f64..1e3) {
        let g = grid(256, 2.0 * std::f64::consts::PI);
        let qm = q_max(&g);
        if xi <= g.max_wavenumber() {
            let s: f64 = (-1..=qm).map(|q| block_symbol(q, xi)).sum();
            prop_assert!((s - 1.0).abs() < 1e-14);
        }
        prop_assert!((0.0..=1.0).contains(&chi(xi)));
    }

    #[test]
    fn cutoff_is_nonincreasing(x in -5.0f64..5.0, dx in 0.0f64..1.0) {
        let a = smooth_cutoff(x, -1.0, 2.0);
        let b = smooth_cutoff(x + dx, -1.0, 2.0);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a);
    }

    #[test]
    fn lifespan_decreases_with_density_gradient(
        w in 1e-2f64..1e2, g in 1e-4f64..1e2, f in 1.01f64..10.0,
        c in 0.1f64..10.0, c0 in 0.0f64..10.0,
    ) {
        let t1 = lifespan_bound(w, g, c, c0).unwrap();
        let t2 = lifespan_bound(w, g * f, c, c0).unwrap();
        prop_assert!(t1 > 0.0 && t2 > 0.0);
        prop_assert!(t2 < t1);
        prop_assert!(lifespan_bound(w, 0.0, c, c0).unwrap().is_infinite());
    }

    #[test]
    fn fitted_constant_dominates_its_corpus(v in prop::collection::vec(0.0f64..1e3, 1..40)) {
        let mut f = EstimateFit::calibrate("x", "corpus", 1, &v, 1.5).unwrap();
        let held = f.assert_on(&v);
        prop_assert_eq!(held.violations, 0);
    }

    #[test]
    fn line_fit_recovers_lines(a in -10.0f64..10.0, b in -5.0f64..5.0) {
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|t| a + b * t).collect();
        let fit = fit_line(&x, &y).unwrap();
        prop_assert!((fit.slope - b).abs() < 1e-10);
        prop_assert!((fit.intercept - a).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn blocks_reconstruct_and_bony_sums(seed in 0u64..1000, kmax in 2usize..20) {
        let g = grid(64, 3.0);
        let u = band_limited(g, seed, kmax, 1.0);
        let v = band_limited(g, seed + 1, kmax, 1.0);
        let set = DyadicBlockSet::new(&u);
        prop_assert!(set.reconstruct().sub(&u).unwrap().max_abs() <= 1e-12 * u.max_abs());
        let (a, b, c) = bony_decompose(&u, &v).unwrap();
        let sum = a.add(&b).unwrap().add(&c).unwrap();
        let prod = dealias(&u.mul(&v).unwrap());
        prop_assert!(sum.sub(&prod).unwrap().max_abs() <= 1e-12 * u.max_abs() * v.max_abs());
    }

    #[test]
    fn velocity_is_divergence_free_with_matching_curl(seed in 0u64..1000) {
        let g = grid(64, 5.0);
        let w = band_limited(g, seed, 10, 2.0);
        let v = biot_savart(&w);
        let m = w.mean();
        prop_assert!(v.divergence().max_abs() <= 1e-12 * w.max_abs());
        let curl = v.curl();
        let err = curl.zip_values(&w, |a, b| a - (b - m)).unwrap().max_abs();
        prop_assert!(err <= 1e-12 * w.max_abs());
    }

    #[test]
    fn norm_reports_are_nonnegative(seed in 0u64..1000) {
        let g = grid(32, 6.0);
        let w = band_limited(g, seed, 4, 1.0);
        let r = band_limited(g, seed + 7, 4, 0.1);
        let st = State::new(0.0, w, r).unwrap();
        let cfg = SolverConfig { dt: 0.01, t_end: 0.04, diagnostics_every: 2, ..Default::default() };
        let mut an = StandardAnalyzer { sample_pairs: 1000, holder_indices: vec![0.5], ..Default::default() };
        let out = run(&st, &cfg, &mut an, Vec::new()).unwrap();
        prop_assert!(out.is_complete());
        for rep in out.reports() {
            prop_assert!(rep.is_nonnegative());
        }
    }

    #[test]
    fn field_dumps_round_trip(seed in 0u64..1000, t in 0.0f64..10.0) {
        let g = grid(16, 2.0);
        let a = band_limited(g, seed, 5, 1.0);
        let b = ScalarField::from_fn(g, |x, y| x * y + seed as f64);
        let bytes = encode_fields(t, &[&a, &b]).unwrap();
        let d = decode_fields(&bytes, std::path::Path::new("p.vlf")).unwrap();
        prop_assert_eq!(d.t, t);
        prop_assert_eq!(d.fields[0].values(), a.values());
        prop_assert_eq!(d.fields[1].values(), b.values());
    }
}
