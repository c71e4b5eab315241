//! Littlewood-Paley analysis on the periodic grid: dyadic blocks, Hölder
//! norms of any real index, Bony's decomposition, and the log-Lipschitz,
//! `L(Sigma)` and conormal norms used by the diagnostics.
//!
//! The partition is built from `chi(xi) = 1 - s((|xi| - 3/4) / (4/3 - 3/4))`
//! with the smooth step `s` of [`crate::smooth::smooth_step`], and
//! `phi(xi) = chi(xi / 2) - chi(xi)`. Blocks act on physical wavenumbers.
//! Changing this profile changes every calibrated constant downstream, so it
//! is versioned by [`PROFILE_VERSION`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::frame::FrameFamily;
use crate::geometry::{distance_field, masked_sup};
use crate::smooth::smooth_cutoff;
use crate::spectral::{dealias, Axis, GridSpec, ScalarField, VelocityField};

pub const PROFILE_VERSION: &str = "lp-expstep-v1";

const CHI_INNER: f64 = 0.75;
const CHI_OUTER: f64 = 4.0 / 3.0;

pub fn chi(xi: f64) -> f64 {
    smooth_cutoff(xi, CHI_INNER, CHI_OUTER)
}

pub fn phi(xi: f64) -> f64 {
    chi(0.5 * xi) - chi(xi)
}

/// Multiplier of block `q` at radial wavenumber `k`.
pub fn block_symbol(q: i32, k: f64) -> f64 {
    if q < 0 {
        chi(k)
    } else {
        phi(k / 2f64.powi(q))
    }
}

/// Largest block index with non-empty support on the grid.
///
/// Blocks through `q_max` already sum to one on every representable mode.
pub fn q_max(grid: &GridSpec) -> i32 {
    (grid.max_wavenumber() / CHI_INNER).log2().floor() as i32
}

pub fn dyadic_block(u: &ScalarField, q: i32) -> Result<ScalarField> {
    let qm = q_max(u.grid());
    if q < -1 || q > qm {
        return Err(LabError::BlockIndex { q, q_max: qm });
    }
    Ok(u.filter_radial(|k| block_symbol(q, k)))
}

/// Low-frequency cut-off `S_q = sum_{p <= q-1} Delta_p`, i.e. `chi(2^{-q} xi)`.
pub fn low_pass(u: &ScalarField, q: i32) -> ScalarField {
    let s = 2f64.powi(q);
    u.filter_radial(|k| chi(k / s))
}

#[derive(Debug, Clone)]
pub struct DyadicBlockSet {
    pub q_min: i32,
    pub q_max: i32,
    pub blocks: Vec<ScalarField>,
    pub block_sup: Vec<f64>,
}

impl DyadicBlockSet {
    pub fn new(u: &ScalarField) -> Self {
        let qm = q_max(u.grid());
        let blocks: Vec<ScalarField> = (-1..=qm)
            .into_par_iter()
            .map(|q| u.filter_radial(|k| block_symbol(q, k)))
            .collect();
        let block_sup = blocks.iter().map(|b| b.max_abs()).collect();
        Self {
            q_min: -1,
            q_max: qm,
            blocks,
            block_sup,
        }
    }

    pub fn block(&self, q: i32) -> &ScalarField {
        &self.blocks[(q + 1) as usize]
    }

    pub fn sup(&self, q: i32) -> f64 {
        self.block_sup[(q + 1) as usize]
    }

    pub fn reconstruct(&self) -> ScalarField {
        let first = &self.blocks[0];
        let rest: Vec<(f64, &ScalarField)> = self.blocks[1..].iter().map(|b| (1.0, b)).collect();
        first.lincomb_spectral(&rest, 1.0).expect("blocks share a grid")
    }

    pub fn holder(&self, s: f64) -> HolderNorm {
        let mut best = (0.0, -1);
        for q in self.q_min..=self.q_max {
            let w = 2f64.powf(q as f64 * s) * self.sup(q);
            if w > best.0 {
                best = (w, q);
            }
        }
        HolderNorm {
            value: best.0,
            s,
            q_star: best.1,
            q_max: self.q_max,
            top_block: 2f64.powf(self.q_max as f64 * s) * self.sup(self.q_max),
        }
    }
}

/// Hölder norm value with truncation bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderNorm {
    pub value: f64,
    pub s: f64,
    /// Block attaining the supremum.
    pub q_star: i32,
    pub q_max: i32,
    /// Weighted contribution of the last computable block; when it equals
    /// `value` the supremum may be truncated by resolution.
    pub top_block: f64,
}

impl HolderNorm {
    pub fn truncated(&self) -> bool {
        self.q_star == self.q_max
    }
}

pub fn holder_norm(u: &ScalarField, s: f64) -> f64 {
    DyadicBlockSet::new(u).holder(s).value
}

pub fn holder_norm_report(u: &ScalarField, s: f64) -> HolderNorm {
    DyadicBlockSet::new(u).holder(s)
}

/// Paraproducts and remainder `(T_u v, T_v u, R(u, v))`, each dealiased.
pub fn bony_decompose(
    u: &ScalarField,
    v: &ScalarField,
) -> Result<(ScalarField, ScalarField, ScalarField)> {
    if u.grid() != v.grid() {
        return Err(LabError::GridMismatch);
    }
    let g = *u.grid();
    let bu = DyadicBlockSet::new(u);
    let bv = DyadicBlockSet::new(v);
    let qm = bu.q_max;
    let len = g.len();
    let (mut tuv, mut tvu, mut rem) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    // running low-pass sums S_{q-1} = sum_{p <= q-2} Delta_p
    let mut su = vec![0.0; len];
    let mut sv = vec![0.0; len];
    for q in -1..=qm {
        if q >= 1 {
            let p = q - 2;
            for (a, b) in su.iter_mut().zip(bu.block(p).values()) {
                *a += b;
            }
            for (a, b) in sv.iter_mut().zip(bv.block(p).values()) {
                *a += b;
            }
        }
        let du = bu.block(q).values();
        let dv = bv.block(q).values();
        for k in 0..len {
            tuv[k] += su[k] * dv[k];
            tvu[k] += sv[k] * du[k];
        }
        for p in (q - 1).max(-1)..=(q + 1).min(qm) {
            let dvp = bv.block(p).values();
            for k in 0..len {
                rem[k] += du[k] * dvp[k];
            }
        }
    }
    let f = |v: Vec<f64>| dealias(&ScalarField::from_values(g, v).expect("grid length"));
    Ok((f(tuv), f(tvu), f(rem)))
}

/// Dealiased pointwise product.
pub fn dealiased_product(u: &ScalarField, v: &ScalarField) -> Result<ScalarField> {
    Ok(dealias(&u.mul(v)?))
}

/// `||T_u v||_s / (||u||_inf ||v||_s)`.
pub fn paraproduct_ratio(u: &ScalarField, v: &ScalarField, s: f64) -> Result<f64> {
    let (tuv, _, _) = bony_decompose(u, v)?;
    let den = u.max_abs() * holder_norm(v, s);
    Ok(if den > 0.0 { holder_norm(&tuv, s) / den } else { 0.0 })
}

/// Bernstein ratios `||d^alpha Delta_q u||_inf / (2^{q|alpha|} ||Delta_q u||_inf)`
/// for `|alpha| in {1, 2}`, worst case over multi-indices, for each block `q >= 0`
/// with non-negligible content.
pub fn bernstein_ratios(u: &ScalarField) -> Vec<(i32, [f64; 2], [f64; 2])> {
    let set = DyadicBlockSet::new(u);
    let scale = u.max_abs().max(f64::MIN_POSITIVE);
    let mut out = Vec::new();
    for q in 0..=set.q_max {
        let b = set.block(q);
        let sup = set.sup(q);
        if sup <= 1e-8 * scale {
            continue;
        }
        let d1 = b.derivative(Axis::X1);
        let d2 = b.derivative(Axis::X2);
        let first: Vec<f64> = [&d1, &d2].iter().map(|d| d.max_abs()).collect();
        let second: Vec<f64> = [
            d1.derivative(Axis::X1),
            d1.derivative(Axis::X2),
            d2.derivative(Axis::X2),
        ]
        .iter()
        .map(|d| d.max_abs())
        .collect();
        let w1 = 2f64.powi(q) * sup;
        let w2 = 4f64.powi(q) * sup;
        let r1 = [
            first.iter().copied().fold(f64::INFINITY, f64::min) / w1,
            first.iter().copied().fold(0.0, f64::max) / w1,
        ];
        let r2 = [
            second.iter().copied().fold(f64::INFINITY, f64::min) / w2,
            second.iter().copied().fold(0.0, f64::max) / w2,
        ];
        out.push((q, r1, r2));
    }
    out
}

fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn ll_weight(d: f64) -> f64 {
    d * (std::f64::consts::E / d).ln()
}

/// Log-Lipschitz norm `||v||_inf + sup |v(x)-v(y)| / (|x-y| log(e/|x-y|))`.
///
/// Pairs are all nearest-neighbour grid pairs plus `sample_pairs`
/// low-discrepancy pairs snapped to grid points with `0 < |x-y| < 1`; the
/// value is therefore a lower bound of the continuum supremum.
pub fn log_lipschitz_norm(v: &VelocityField, sample_pairs: usize) -> Result<f64> {
    if sample_pairs < 1000 {
        return Err(crate::error::domain(
            "sample_pairs",
            format!("{sample_pairs} < 1000"),
        ));
    }
    let g = *v.grid();
    let n = g.n;
    let (a, b) = (v.u1.values(), v.u2.values());
    let sup = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.hypot(*y))
        .fold(0.0, f64::max);
    let incr = |k: usize, l: usize| (a[k] - a[l]).hypot(b[k] - b[l]);
    let dx = g.dx();
    let mut best: f64 = 0.0;
    if dx < 1.0 {
        let w = ll_weight(dx);
        let nn = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut m: f64 = 0.0;
                for i in 0..n {
                    let k = j * n + i;
                    m = m.max(incr(k, j * n + (i + 1) % n));
                    m = m.max(incr(k, ((j + 1) % n) * n + i));
                }
                m
            })
            .reduce(|| 0.0, f64::max);
        best = nn / w;
    }
    let rmax = (1.0 / dx).floor() as i64;
    for s in 1..=sample_pairs as u64 {
        let i = (halton(s, 2) * n as f64) as usize % n;
        let j = (halton(s, 3) * n as f64) as usize % n;
        let r = halton(s, 5).sqrt();
        let th = 2.0 * std::f64::consts::PI * halton(s, 7);
        let di = (r * th.cos() * rmax as f64).round() as i64;
        let dj = (r * th.sin() * rmax as f64).round() as i64;
        let d = dx * ((di * di + dj * dj) as f64).sqrt();
        if d <= 0.0 || d >= 1.0 {
            continue;
        }
        let i2 = (i as i64 + di).rem_euclid(n as i64) as usize;
        let j2 = (j as i64 + dj).rem_euclid(n as i64) as usize;
        best = best.max(incr(j * n + i, j2 * n + i2) / ll_weight(d));
    }
    Ok(sup + best)
}

/// Geometric scale grid `e^{-1} 2^{-k}` down to the finest scale not below `2 dx`.
pub fn default_h_grid(grid: &GridSpec) -> Vec<f64> {
    let mut h = (-1.0f64).exp();
    let mut out = Vec::new();
    while h >= 2.0 * grid.dx() {
        out.push(h);
        h *= 0.5;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LSigmaReport {
    pub value: f64,
    /// Set when the singular set is empty and the plain sup norm is returned.
    pub empty_sigma: bool,
    pub per_scale: Vec<(f64, f64)>,
}

fn check_h_grid(grid: &GridSpec, h_grid: &[f64]) -> Result<()> {
    let top = (-1.0f64).exp();
    for &h in h_grid {
        if !(h > 0.0 && h <= top * (1.0 + 1e-12)) {
            return Err(crate::error::domain("h", format!("{h} outside (0, 1/e]")));
        }
        if h < 2.0 * grid.dx() * (1.0 - 1e-12) {
            return Err(crate::error::domain(
                "h",
                format!("{h} below twice the grid spacing {}", grid.dx()),
            ));
        }
    }
    if h_grid.is_empty() {
        return Err(crate::error::domain("h_grid", "empty scale grid"));
    }
    Ok(())
}

/// `sup_h ||g||_{L^inf(Sigma_h^c)} / (-log h)` over a scale grid.
pub fn l_sigma_norm(g: &ScalarField, sigma: &[[f64; 2]], h_grid: &[f64]) -> Result<LSigmaReport> {
    let grid = *g.grid();
    if sigma.is_empty() {
        return Ok(LSigmaReport {
            value: g.max_abs(),
            empty_sigma: true,
            per_scale: Vec::new(),
        });
    }
    check_h_grid(&grid, h_grid)?;
    let dist = distance_field(&grid, sigma);
    Ok(l_sigma_from_distance(g.values(), &dist, h_grid))
}

pub(crate) fn l_sigma_from_distance(values: &[f64], dist: &[f64], h_grid: &[f64]) -> LSigmaReport {
    let per_scale: Vec<(f64, f64)> = h_grid
        .iter()
        .map(|&h| {
            let m: Vec<bool> = dist.iter().map(|&d| d >= h).collect();
            (h, masked_sup(values, &m))
        })
        .collect();
    let value = per_scale
        .iter()
        .map(|(h, s)| s / (-h.ln()))
        .fold(0.0, f64::max);
    LSigmaReport {
        value,
        empty_sigma: false,
        per_scale,
    }
}

/// Breakdown of a conormal norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConormalNorm {
    pub value: f64,
    pub n_eps: f64,
    pub i: f64,
    pub witness: [f64; 2],
    pub sup_part: f64,
    pub derivative_part: f64,
}

/// `N_eps * sum_{|alpha| <= k} ||d^alpha u||_inf + sup_lambda ||d_X u||_{eps+k-1} / I`
/// with `I` taken over the grid points where `mask` is true.
pub fn conormal_norm(
    u: &ScalarField,
    family: &FrameFamily,
    mask: Option<&[bool]>,
    eps: f64,
    k: u32,
) -> Result<ConormalNorm> {
    if k > 1 {
        return Err(crate::error::domain("k", format!("{k} not in {{0, 1}}")));
    }
    let nd = family.require_nondegenerate(mask)?;
    let n_eps = family.n_eps_with(eps, nd.value);
    let mut sup_part = u.max_abs();
    if k == 1 {
        sup_part += u.derivative(Axis::X1).max_abs() + u.derivative(Axis::X2).max_abs();
    }
    let mut d_part: f64 = 0.0;
    for m in &family.members {
        let d = m.derivative_of(u)?;
        d_part = d_part.max(holder_norm(&d, eps + k as f64 - 1.0));
    }
    let derivative_part = d_part / nd.value;
    Ok(ConormalNorm {
        value: n_eps * sup_part + derivative_part,
        n_eps,
        i: nd.value,
        witness: nd.witness,
        sup_part,
        derivative_part,
    })
}

/// Time-stamped bundle of norms for one snapshot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub t: f64,
    pub holder: BTreeMap<String, f64>,
    pub ll: f64,
    pub l_sigma: f64,
    pub conormal: BTreeMap<String, f64>,
    pub v_accum: f64,
    pub w_accum: f64,
    pub ll_accum: f64,
    pub omega_linf: f64,
    pub omega_l2: f64,
    pub omega_la: f64,
    pub omega_l1: f64,
    pub grad_rho_linf: f64,
    pub grad_rho_l2: f64,
    pub grad_rho_la: f64,
    pub grad_v_linf: f64,
    pub v_l2: f64,
    pub rho_l2: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub holder_boundary: f64,
    pub tail_fraction: f64,
}

impl NormReport {
    pub fn holder_key(s: f64) -> String {
        format!("{s}")
    }

    /// Nonnegativity of every norm entry (bounds of rho excluded).
    pub fn is_nonnegative(&self) -> bool {
        let scalars = [
            self.ll,
            self.l_sigma,
            self.v_accum,
            self.w_accum,
            self.ll_accum,
            self.omega_linf,
            self.omega_l2,
            self.omega_la,
            self.omega_l1,
            self.grad_rho_linf,
            self.grad_rho_l2,
            self.grad_rho_la,
            self.grad_v_linf,
            self.v_l2,
            self.rho_l2,
            self.holder_boundary,
            self.tail_fraction,
        ];
        scalars.iter().all(|v| *v >= 0.0)
            && self.holder.values().all(|v| *v >= 0.0)
            && self.conormal.values().all(|v| *v >= 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::band_limited;
    use std::f64::consts::PI;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n, 2.0 * PI, 2.0 / 3.0).unwrap()
    }

    #[test]
    fn partition_of_unity_on_all_modes() {
        let g = grid(64);
        let qm = q_max(&g);
        for k in [0.0, 0.5, 1.0, 7.3, 31.9, g.max_wavenumber()] {
            let s: f64 = (-1..=qm).map(|q| block_symbol(q, k)).sum();
            assert!((s - 1.0).abs() < 1e-15, "k = {k}");
        }
        assert!(block_symbol(qm, g.max_wavenumber()) > 0.0 || qm >= 0);
    }

    #[test]
    fn constant_lives_in_low_block() {
        let g = grid(32);
        let u = ScalarField::constant(g, 3.0);
        let set = DyadicBlockSet::new(&u);
        assert!((set.sup(-1) - 3.0).abs() < 1e-13);
        for q in 0..=set.q_max {
            assert!(set.sup(q) < 1e-13);
        }
        let h = holder_norm(&u, 0.5);
        assert!((h - 3.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(dyadic_block(&u, set.q_max + 1).is_err());
        assert!(dyadic_block(&u, -2).is_err());
    }

    #[test]
    fn single_mode_touches_three_blocks() {
        let g = grid(64);
        let u = ScalarField::from_fn(g, |x, _| (5.0 * x).sin());
        let set = DyadicBlockSet::new(&u);
        let q0 = 2; // 4 <= 5 < 8
        for q in -1..=set.q_max {
            if (q - q0).abs() > 1 {
                assert!(set.sup(q) < 1e-13, "q = {q}");
            }
        }
        assert!(set.reconstruct().sub(&u).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn holder_scaling_with_frequency() {
        // doubling the frequency of a single mode doubles the s = 1 norm
        let g = grid(128);
        let a = holder_norm(&ScalarField::from_fn(g, |x, _| (4.0 * x).sin()), 1.0);
        let b = holder_norm(&ScalarField::from_fn(g, |x, _| (8.0 * x).sin()), 1.0);
        assert!((b / a - 2.0).abs() < 1e-10, "ratio {}", b / a);
    }

    #[test]
    fn holder_equivalence_on_abs_sine() {
        let g = grid(256);
        let s = 0.5;
        let u = ScalarField::from_fn(g, |x, _| x.sin().abs().powf(s));
        let dyadic = holder_norm(&u, s);
        // direct C^s norm: sup |u| + sup over sampled pairs |u(x)-u(y)|/|x-y|^s
        let vals = u.values();
        let n = g.n;
        let mut quot: f64 = 0.0;
        for i in 0..n {
            for step in 1..n / 2 {
                let d = step as f64 * g.dx();
                let a = vals[i];
                let b = vals[(i + step) % n];
                quot = quot.max((a - b).abs() / d.powf(s));
            }
        }
        let direct = u.max_abs() + quot;
        let r = dyadic / direct;
        assert!(r > 0.25 && r < 4.0, "ratio {r}");
    }

    #[test]
    fn bony_identity_with_unit_factor() {
        let g = grid(64);
        let v = band_limited(g, 7, 10, 1.0);
        let one = ScalarField::constant(g, 1.0);
        let (a, b, r) = bony_decompose(&one, &v).unwrap();
        let sum = a.lincomb_spectral(&[(1.0, &b), (1.0, &r)], 1.0).unwrap();
        assert!(sum.sub(&v.dealias()).unwrap().l2_norm() <= 1e-12 * v.l2_norm());
    }

    #[test]
    fn ll_of_constant_and_linear_fields() {
        let g = GridSpec::new(64, 8.0 * PI, 2.0 / 3.0).unwrap();
        let c = VelocityField::explicit(ScalarField::constant(g, 2.0), ScalarField::zeros(g)).unwrap();
        assert!((log_lipschitz_norm(&c, 1000).unwrap() - 2.0).abs() < 1e-14);
        let k = g.fundamental();
        let lam = 0.7;
        let s = VelocityField::explicit(
            ScalarField::from_fn(g, |_, y| lam / k * (k * y).sin()),
            ScalarField::zeros(g),
        )
        .unwrap();
        let ll = log_lipschitz_norm(&s, 2000).unwrap();
        assert!(ll <= s.max_magnitude() + lam + 1e-12);
        assert!(log_lipschitz_norm(&s, 10).is_err());
    }

    #[test]
    fn l_sigma_trivial_cases() {
        let g = grid(64);
        let h = default_h_grid(&g);
        let z = ScalarField::zeros(g);
        assert_eq!(l_sigma_norm(&z, &[[0.0, 0.0]], &h).unwrap().value, 0.0);
        let m = ScalarField::from_fn(g, |x, _| 0.5 * x.cos());
        assert!(l_sigma_norm(&m, &[[0.0, 0.0]], &h).unwrap().value <= 0.5 + 1e-15);
        let e = l_sigma_norm(&m, &[], &h).unwrap();
        assert!(e.empty_sigma);
        assert!(l_sigma_norm(&m, &[[0.0, 0.0]], &[0.5]).is_err());
    }
}
