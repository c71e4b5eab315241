//! Periodic grid, real-to-complex transforms, spectral differentiation,
//! dealiasing and Biot-Savart velocity recovery.
//!
//! The plane is truncated to the torus `[-L/2, L/2)^2` sampled on an `n x n`
//! grid with `x_i = (i - n/2) dx`, so the origin is a grid point. Values are
//! stored row-major with the `x1` index running fastest. Spectra use Hermitian
//! storage: `n` rows (the `x2` wavenumber) of `n/2 + 1` entries (the
//! non-negative `x1` wavenumbers), unnormalised forward transform.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Torus side used when none is configured.
pub const DEFAULT_LENGTH: f64 = 8.0 * PI;
/// Fraction of the half-band kept by the product dealiasing filter.
pub const DEFAULT_DEALIAS: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub length: f64,
    pub dealias_fraction: f64,
}

impl GridSpec {
    pub fn new(n: usize, length: f64, dealias_fraction: f64) -> Result<Self> {
        let mut problems = Vec::new();
        if n < 16 {
            problems.push(format!("n = {n} must be at least 16"));
        }
        if !n.is_power_of_two() {
            problems.push(format!("n = {n} must be a power of two"));
        }
        if !(length.is_finite() && length > 0.0) {
            problems.push(format!("length = {length} must be positive"));
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            problems.push(format!(
                "dealias_fraction = {dealias_fraction} must lie in (0, 1]"
            ));
        }
        if problems.is_empty() {
            Ok(Self {
                n,
                length,
                dealias_fraction,
            })
        } else {
            Err(LabError::Config(problems.join("; ")))
        }
    }

    /// `n` points on the default `8 pi` torus with the 2/3 rule.
    pub fn with_n(n: usize) -> Result<Self> {
        Self::new(n, DEFAULT_LENGTH, DEFAULT_DEALIAS)
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dx()
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Number of stored Hermitian columns, `n/2 + 1`.
    pub fn half(&self) -> usize {
        self.n / 2 + 1
    }

    pub fn spectrum_len(&self) -> usize {
        self.n * self.half()
    }

    /// Physical coordinate of grid index `i` along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - (self.n / 2) as f64) * self.dx()
    }

    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [self.coord(i), self.coord(j)]
    }

    /// Integer mode number of `x2` spectral row `k2`.
    pub fn mode2(&self, k2: usize) -> i64 {
        if k2 <= self.n / 2 {
            k2 as i64
        } else {
            k2 as i64 - self.n as i64
        }
    }

    pub fn fundamental(&self) -> f64 {
        2.0 * PI / self.length
    }

    pub fn kx(&self, k1: usize) -> f64 {
        self.fundamental() * k1 as f64
    }

    pub fn ky(&self, k2: usize) -> f64 {
        self.fundamental() * self.mode2(k2) as f64
    }

    /// Largest wavenumber magnitude the grid represents (the diagonal corner).
    pub fn max_wavenumber(&self) -> f64 {
        std::f64::consts::SQRT_2 * PI * self.n as f64 / self.length
    }

    /// Largest retained mode index under the dealiasing filter.
    pub fn dealias_cutoff(&self) -> i64 {
        (self.dealias_fraction * (self.n / 2) as f64).floor() as i64
    }

    /// Wrap a coordinate difference into `[-L/2, L/2)`.
    pub fn wrap_delta(&self, d: f64) -> f64 {
        let l = self.length;
        d - l * (d / l + 0.5).floor()
    }

    /// Minimum-image distance on the torus.
    pub fn torus_distance(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let d1 = self.wrap_delta(a[0] - b[0]);
        let d2 = self.wrap_delta(a[1] - b[1]);
        d1.hypot(d2)
    }

    pub(crate) fn is_nyquist(&self, k: usize) -> bool {
        k == self.n / 2
    }
}

pub(crate) struct FftPlan {
    n: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

pub(crate) fn plan(n: usize) -> Arc<FftPlan> {
    static PLANS: OnceLock<Mutex<HashMap<usize, Arc<FftPlan>>>> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut real = RealFftPlanner::<f64>::new();
            let mut cplx = FftPlanner::<f64>::new();
            Arc::new(FftPlan {
                n,
                r2c: real.plan_fft_forward(n),
                c2r: real.plan_fft_inverse(n),
                fwd: cplx.plan_fft_forward(n),
                inv: cplx.plan_fft_inverse(n),
            })
        })
        .clone()
}

fn transpose(src: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut dst = vec![Complex64::new(0.0, 0.0); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
    dst
}

impl FftPlan {
    pub(crate) fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let n = self.n;
        let m = n / 2 + 1;
        let mut rows = vec![Complex64::new(0.0, 0.0); n * m];
        rows.par_chunks_mut(m)
            .zip(values.par_chunks(n))
            .for_each_init(
                || (self.r2c.make_input_vec(), self.r2c.make_scratch_vec()),
                |(buf, scratch), (out, row)| {
                    buf.copy_from_slice(row);
                    self.r2c
                        .process_with_scratch(buf, out, scratch)
                        .expect("r2c length mismatch");
                },
            );
        let mut cols = transpose(&rows, n, m);
        self.fwd.process(&mut cols);
        transpose(&cols, m, n)
    }

    pub(crate) fn inverse(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let n = self.n;
        let m = n / 2 + 1;
        let mut cols = transpose(spectrum, n, m);
        self.inv.process(&mut cols);
        let mut rows = transpose(&cols, m, n);
        let scale = 1.0 / (n * n) as f64;
        let mut out = vec![0.0; n * n];
        out.par_chunks_mut(n)
            .zip(rows.par_chunks_mut(m))
            .for_each_init(
                || self.c2r.make_scratch_vec(),
                |scratch, (dst, row)| {
                    row[0].im = 0.0;
                    row[m - 1].im = 0.0;
                    self.c2r
                        .process_with_scratch(row, dst, scratch)
                        .expect("c2r length mismatch");
                    for v in dst.iter_mut() {
                        *v *= scale;
                    }
                },
            );
        out
    }
}

struct Inner {
    grid: GridSpec,
    values: OnceLock<Vec<f64>>,
    spectrum: OnceLock<Vec<Complex64>>,
}

/// Real periodic grid function with a lazily synchronised spectrum.
///
/// A field is immutable once built; whichever representation is missing is
/// computed on first access from the other one, so a stale cache cannot
/// exist. Clones share storage.
#[derive(Clone)]
pub struct ScalarField(Arc<Inner>);

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("grid", &self.0.grid)
            .field("values_cached", &self.0.values.get().is_some())
            .field("spectrum_cached", &self.0.spectrum.get().is_some())
            .finish()
    }
}

impl ScalarField {
    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::Config(format!(
                "expected {} samples for n = {}, got {}",
                grid.len(),
                grid.n,
                values.len()
            )));
        }
        let cell = OnceLock::new();
        let _ = cell.set(values);
        Ok(Self(Arc::new(Inner {
            grid,
            values: cell,
            spectrum: OnceLock::new(),
        })))
    }

    pub fn from_spectrum(grid: GridSpec, spectrum: Vec<Complex64>) -> Result<Self> {
        if spectrum.len() != grid.spectrum_len() {
            return Err(LabError::Config(format!(
                "expected {} spectral coefficients, got {}",
                grid.spectrum_len(),
                spectrum.len()
            )));
        }
        let cell = OnceLock::new();
        let _ = cell.set(spectrum);
        Ok(Self(Arc::new(Inner {
            grid,
            values: OnceLock::new(),
            spectrum: cell,
        })))
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let n = grid.n;
        let mut values = vec![0.0; grid.len()];
        values.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
            let x2 = grid.coord(j);
            for (i, v) in row.iter_mut().enumerate() {
                *v = f(grid.coord(i), x2);
            }
        });
        Self::from_values(grid, values).expect("length matches grid")
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self::from_values(grid, vec![c; grid.len()]).expect("length matches grid")
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.0.grid
    }

    pub fn values(&self) -> &[f64] {
        self.0.values.get_or_init(|| {
            let spec = self
                .0
                .spectrum
                .get()
                .expect("field holds at least one representation");
            plan(self.0.grid.n).inverse(spec)
        })
    }

    pub fn spectrum(&self) -> &[Complex64] {
        self.0.spectrum.get_or_init(|| {
            let vals = self
                .0
                .values
                .get()
                .expect("field holds at least one representation");
            plan(self.0.grid.n).forward(vals)
        })
    }

    pub(crate) fn has_spectrum(&self) -> bool {
        self.0.spectrum.get().is_some()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values()[j * self.0.grid.n + i]
    }

    fn check_grid(&self, other: &Self) -> Result<()> {
        if self.0.grid == other.0.grid {
            Ok(())
        } else {
            Err(LabError::GridMismatch)
        }
    }

    /// Apply a Fourier multiplier `m(k1_index, k2_index)`.
    pub fn map_spectrum(&self, m: impl Fn(usize, usize, Complex64) -> Complex64 + Sync) -> Self {
        let g = self.0.grid;
        let half = g.half();
        let mut out = self.spectrum().to_vec();
        out.par_chunks_mut(half).enumerate().for_each(|(k2, row)| {
            for (k1, c) in row.iter_mut().enumerate() {
                *c = m(k1, k2, *c);
            }
        });
        Self::from_spectrum(g, out).expect("length matches grid")
    }

    /// Apply a real radial filter `m(|k|)`.
    pub fn filter_radial(&self, m: impl Fn(f64) -> f64 + Sync) -> Self {
        let g = self.0.grid;
        self.map_spectrum(|k1, k2, c| c * m(g.kx(k1).hypot(g.ky(k2))))
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        let v: Vec<f64> = self.values().par_iter().map(|&x| f(x)).collect();
        Self::from_values(self.0.grid, v).expect("length matches grid")
    }

    pub fn zip_values(&self, other: &Self, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self> {
        self.check_grid(other)?;
        let v: Vec<f64> = self
            .values()
            .par_iter()
            .zip(other.values().par_iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_values(self.0.grid, v)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.lincomb(&[(1.0, other)], 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.lincomb(&[(-1.0, other)], 1.0)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.lincomb(&[], c).expect("no operands to mismatch")
    }

    /// Pointwise (aliased) product on the grid.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_values(other, |a, b| a * b)
    }

    /// `a * self + sum c_i f_i`, evaluated in spectral space when every operand
    /// already carries its spectrum and on grid values otherwise.
    pub fn lincomb(&self, terms: &[(f64, &ScalarField)], a: f64) -> Result<Self> {
        for (_, f) in terms {
            self.check_grid(f)?;
        }
        let g = self.0.grid;
        if self.has_spectrum() && terms.iter().all(|(_, f)| f.has_spectrum()) {
            let mut out: Vec<Complex64> = self.spectrum().iter().map(|c| c * a).collect();
            for (c, f) in terms {
                for (o, s) in out.iter_mut().zip(f.spectrum()) {
                    *o += s * *c;
                }
            }
            Self::from_spectrum(g, out)
        } else {
            let mut out: Vec<f64> = self.values().iter().map(|v| v * a).collect();
            for (c, f) in terms {
                for (o, s) in out.iter_mut().zip(f.values()) {
                    *o += s * *c;
                }
            }
            Self::from_values(g, out)
        }
    }

    /// Spectral-space linear combination; forces spectra of all operands.
    pub fn lincomb_spectral(&self, terms: &[(f64, &ScalarField)], a: f64) -> Result<Self> {
        for (_, f) in terms {
            self.check_grid(f)?;
        }
        let mut out: Vec<Complex64> = self.spectrum().iter().map(|c| c * a).collect();
        for (c, f) in terms {
            for (o, s) in out.iter_mut().zip(f.spectrum()) {
                *o += s * *c;
            }
        }
        Self::from_spectrum(self.0.grid, out)
    }

    pub fn max_abs(&self) -> f64 {
        self.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Torus L^p norm with equal-weight quadrature; `p = inf` gives the grid max.
    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_norm_slice(self.values(), p, self.0.grid.cell_area())
    }

    pub fn l2_norm(&self) -> f64 {
        self.lp_norm(2.0)
    }

    /// L^2 norm computed from the spectrum (Parseval).
    pub fn spectral_l2_norm(&self) -> f64 {
        let g = self.0.grid;
        let half = g.half();
        let mut acc = 0.0;
        for row in self.spectrum().chunks(half) {
            for (k1, c) in row.iter().enumerate() {
                let w = if k1 == 0 || k1 == half - 1 { 1.0 } else { 2.0 };
                acc += w * c.norm_sqr();
            }
        }
        let n2 = (g.n * g.n) as f64;
        (acc * g.length * g.length / (n2 * n2)).sqrt()
    }

    pub fn integral(&self) -> f64 {
        self.values().iter().sum::<f64>() * self.0.grid.cell_area()
    }

    pub fn mean(&self) -> f64 {
        self.integral() / (self.0.grid.length * self.0.grid.length)
    }

    pub fn has_non_finite(&self) -> bool {
        if let Some(s) = self.0.spectrum.get() {
            s.iter().any(|c| !c.re.is_finite() || !c.im.is_finite())
        } else {
            self.values().iter().any(|v| !v.is_finite())
        }
    }

    /// Trigonometric interpolant evaluated at an arbitrary point.
    pub fn eval_spectral(&self, x: [f64; 2]) -> f64 {
        eval_spectral(self.0.grid, self.spectrum(), x)
    }

    pub fn derivative(&self, axis: Axis) -> Self {
        spectral_derivative(self, axis)
    }

    pub fn dealias(&self) -> Self {
        dealias(self)
    }

    /// Heat-kernel smoothing `exp(-|k|^2 width^2 / 2)`.
    pub fn gaussian_filter(&self, width: f64) -> Self {
        self.filter_radial(|k| (-0.5 * k * k * width * width).exp())
    }

    /// Fraction of spectral energy in the outer third of the retained band.
    pub fn spectral_tail_fraction(&self) -> f64 {
        let g = self.0.grid;
        let kc = g.dealias_cutoff();
        let edge = (2 * kc) / 3;
        let half = g.half();
        let (mut tail, mut total) = (0.0, 0.0);
        for (k2, row) in self.spectrum().chunks(half).enumerate() {
            let m2 = g.mode2(k2).abs();
            for (k1, c) in row.iter().enumerate() {
                let w = if k1 == 0 || k1 == half - 1 { 1.0 } else { 2.0 };
                let e = w * c.norm_sqr();
                total += e;
                if (k1 as i64).max(m2) > edge {
                    tail += e;
                }
            }
        }
        if total > 0.0 {
            tail / total
        } else {
            0.0
        }
    }
}

pub(crate) fn lp_norm_slice(values: &[f64], p: f64, cell_area: f64) -> f64 {
    if p.is_infinite() {
        values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    } else if p == 2.0 {
        (values.iter().map(|v| v * v).sum::<f64>() * cell_area).sqrt()
    } else {
        (values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * cell_area).powf(1.0 / p)
    }
}

pub(crate) fn eval_spectral(g: GridSpec, spec: &[Complex64], x: [f64; 2]) -> f64 {
    let n = g.n;
    let half = g.half();
    // grid index i sits at coord(i); shift so that index 0 is the origin of the DFT
    let s1 = x[0] + (n / 2) as f64 * g.dx();
    let s2 = x[1] + (n / 2) as f64 * g.dx();
    let e1: Vec<Complex64> = (0..half)
        .map(|k1| Complex64::from_polar(1.0, g.kx(k1) * s1))
        .collect();
    let mut acc = 0.0;
    for (k2, row) in spec.chunks(half).enumerate() {
        let e2 = Complex64::from_polar(1.0, g.ky(k2) * s2);
        let mut rowsum = 0.0;
        for (k1, c) in row.iter().enumerate() {
            let w = if k1 == 0 || k1 == half - 1 { 1.0 } else { 2.0 };
            rowsum += w * (c * e1[k1] * e2).re;
        }
        acc += rowsum;
    }
    acc / (n * n) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X1,
    X2,
}

/// `d f / d x_axis` by multiplication with `i k_axis`; the Nyquist line is zeroed.
pub fn spectral_derivative(f: &ScalarField, axis: Axis) -> ScalarField {
    let g = *f.grid();
    f.map_spectrum(|k1, k2, c| match axis {
        Axis::X1 if g.is_nyquist(k1) => Complex64::new(0.0, 0.0),
        Axis::X2 if g.is_nyquist(k2) => Complex64::new(0.0, 0.0),
        Axis::X1 => c * Complex64::new(0.0, g.kx(k1)),
        Axis::X2 => c * Complex64::new(0.0, g.ky(k2)),
    })
}

/// Zero every mode with `max(|m1|, |m2|)` above the dealiasing cutoff.
pub fn dealias(f: &ScalarField) -> ScalarField {
    let g = *f.grid();
    let kc = g.dealias_cutoff();
    f.map_spectrum(|k1, k2, c| {
        if (k1 as i64) > kc || g.mode2(k2).abs() > kc {
            Complex64::new(0.0, 0.0)
        } else {
            c
        }
    })
}

pub(crate) fn dealias_in_place(g: &GridSpec, spec: &mut [Complex64]) {
    let kc = g.dealias_cutoff();
    let half = g.half();
    for (k2, row) in spec.chunks_mut(half).enumerate() {
        let m2 = g.mode2(k2).abs();
        for (k1, c) in row.iter_mut().enumerate() {
            if (k1 as i64) > kc || m2 > kc {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    BiotSavart,
    Explicit,
}

/// Planar velocity as a pair of scalar components.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub u1: ScalarField,
    pub u2: ScalarField,
    pub provenance: Provenance,
}

impl VelocityField {
    pub fn explicit(u1: ScalarField, u2: ScalarField) -> Result<Self> {
        if u1.grid() != u2.grid() {
            return Err(LabError::GridMismatch);
        }
        Ok(Self {
            u1,
            u2,
            provenance: Provenance::Explicit,
        })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        let z = ScalarField::zeros(grid);
        Self {
            u1: z.clone(),
            u2: z,
            provenance: Provenance::Explicit,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.u1.grid()
    }

    pub fn divergence(&self) -> ScalarField {
        let d1 = self.u1.derivative(Axis::X1);
        let d2 = self.u2.derivative(Axis::X2);
        d1.lincomb_spectral(&[(1.0, &d2)], 1.0)
            .expect("components share a grid")
    }

    /// Scalar vorticity `d1 u2 - d2 u1`.
    pub fn curl(&self) -> ScalarField {
        let a = self.u2.derivative(Axis::X1);
        let b = self.u1.derivative(Axis::X2);
        a.lincomb_spectral(&[(-1.0, &b)], 1.0)
            .expect("components share a grid")
    }

    pub fn magnitude(&self) -> ScalarField {
        self.u1.zip_values(&self.u2, f64::hypot).expect("same grid")
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitude().max_abs()
    }

    pub fn l2_norm(&self) -> f64 {
        self.u1.l2_norm().hypot(self.u2.l2_norm())
    }

    /// The four partials `[[d1 u1, d2 u1], [d1 u2, d2 u2]]`.
    pub fn gradient(&self) -> [[ScalarField; 2]; 2] {
        [
            [
                self.u1.derivative(Axis::X1),
                self.u1.derivative(Axis::X2),
            ],
            [
                self.u2.derivative(Axis::X1),
                self.u2.derivative(Axis::X2),
            ],
        ]
    }

    /// Pointwise Frobenius norm of the velocity gradient.
    pub fn gradient_magnitude(&self) -> ScalarField {
        let g = self.gradient();
        let (a, b, c, d) = (
            g[0][0].values(),
            g[0][1].values(),
            g[1][0].values(),
            g[1][1].values(),
        );
        let v: Vec<f64> = (0..a.len())
            .map(|i| (a[i] * a[i] + b[i] * b[i] + c[i] * c[i] + d[i] * d[i]).sqrt())
            .collect();
        ScalarField::from_values(*self.grid(), v).expect("same grid")
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            u1: self.u1.sub(&other.u1)?,
            u2: self.u2.sub(&other.u2)?,
            provenance: Provenance::Explicit,
        })
    }
}

/// Velocity spectra `(v1_hat, v2_hat)` for a vorticity spectrum, with the mean
/// and Nyquist lines projected out.
pub(crate) fn biot_savart_spectra(
    g: &GridSpec,
    omega_hat: &[Complex64],
) -> (Vec<Complex64>, Vec<Complex64>) {
    let half = g.half();
    let mut v1 = vec![Complex64::new(0.0, 0.0); omega_hat.len()];
    let mut v2 = vec![Complex64::new(0.0, 0.0); omega_hat.len()];
    for k2 in 0..g.n {
        if g.is_nyquist(k2) {
            continue;
        }
        let ky = g.ky(k2);
        for k1 in 0..half {
            if g.is_nyquist(k1) || (k1 == 0 && k2 == 0) {
                continue;
            }
            let kx = g.kx(k1);
            let idx = k2 * half + k1;
            let w = omega_hat[idx] / (kx * kx + ky * ky);
            v1[idx] = Complex64::new(0.0, ky) * w;
            v2[idx] = Complex64::new(0.0, -kx) * w;
        }
    }
    (v1, v2)
}

/// Divergence-free velocity whose curl is `omega` minus its mean.
///
/// Uses `v = grad_perp(Delta^{-1} omega)`; the zero mode is dropped, which
/// removes the uniform-rotation background of a net circulation.
pub fn biot_savart(omega: &ScalarField) -> VelocityField {
    let g = *omega.grid();
    let (v1, v2) = biot_savart_spectra(&g, omega.spectrum());
    VelocityField {
        u1: ScalarField::from_spectrum(g, v1).expect("same grid"),
        u2: ScalarField::from_spectrum(g, v2).expect("same grid"),
        provenance: Provenance::BiotSavart,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n, 2.0 * PI, DEFAULT_DEALIAS).unwrap()
    }

    #[test]
    fn grid_validation_collects_problems() {
        let err = GridSpec::new(12, -1.0, 0.0).unwrap_err().to_string();
        assert!(err.contains("at least 16"));
        assert!(err.contains("power of two"));
        assert!(err.contains("length"));
        assert!(err.contains("dealias_fraction"));
        assert!(GridSpec::new(32, 1.0, 1.0).is_ok());
    }

    #[test]
    fn zero_vorticity_gives_zero_velocity() {
        let v = biot_savart(&ScalarField::zeros(grid(32)));
        assert_eq!(v.max_magnitude(), 0.0);
        assert_eq!(v.provenance, Provenance::BiotSavart);
    }

    #[test]
    fn single_mode_velocity() {
        let g = GridSpec::new(64, 8.0 * PI, DEFAULT_DEALIAS).unwrap();
        let k = g.fundamental();
        let omega = ScalarField::from_fn(g, |x1, _| (k * x1).sin());
        let v = biot_savart(&omega);
        let expect = ScalarField::from_fn(g, |x1, _| -(k * x1).cos() / k);
        assert!(v.u1.max_abs() < 1e-12);
        let err = v.u2.sub(&expect).unwrap().max_abs();
        assert!(err < 1e-12, "err = {err}");
    }

    #[test]
    fn derivative_of_sine_and_constant() {
        let g = grid(64);
        let f = ScalarField::from_fn(g, |x1, _| x1.sin());
        let d = f.derivative(Axis::X1);
        let expect = ScalarField::from_fn(g, |x1, _| x1.cos());
        assert!(d.sub(&expect).unwrap().max_abs() < 1e-12);
        let c = ScalarField::constant(g, 3.5).derivative(Axis::X2);
        assert!(c.max_abs() < 1e-14);
    }

    #[test]
    fn dealias_keeps_low_and_kills_high_modes() {
        let g = grid(32);
        let low = ScalarField::from_fn(g, |x1, x2| (3.0 * x1).sin() + (2.0 * x2).cos());
        let err = low.dealias().sub(&low).unwrap().max_abs();
        assert!(err < 1e-13);
        let high = ScalarField::from_fn(g, |x1, _| (14.0 * x1).cos());
        assert!(high.dealias().max_abs() < 1e-13);
    }

    #[test]
    fn dealiased_square_of_high_sine() {
        // sin^2(kx) = (1 - cos 2kx)/2 with 2k above the cutoff
        let g = grid(32);
        let kc = g.dealias_cutoff() as f64;
        let k = 9.0;
        assert!(2.0 * k > kc && k <= kc);
        let s = ScalarField::from_fn(g, |x1, _| (k * x1).sin());
        let prod = s.mul(&s).unwrap().dealias();
        assert!((prod.mean() - 0.5).abs() < 1e-13);
        assert!(prod.map_values(|v| v - 0.5).max_abs() < 1e-13);
    }

    #[test]
    fn curl_of_biot_savart_round_trip() {
        let g = grid(64);
        let omega = ScalarField::from_fn(g, |x1, x2| {
            (x1 + 2.0 * x2).sin() + 0.3 * (3.0 * x1).cos() * (x2).sin()
        });
        let v = biot_savart(&omega);
        let back = v.curl();
        let err = back.sub(&omega).unwrap().l2_norm() / omega.l2_norm();
        assert!(err < 1e-10, "err = {err}");
        let div = v.divergence().max_abs();
        assert!(div <= 1e-10 * v.max_magnitude());
    }

    #[test]
    fn spectral_evaluation_matches_grid_and_analytic() {
        let g = grid(32);
        let f = ScalarField::from_fn(g, |x1, x2| (x1 - 2.0 * x2).cos());
        assert!((f.eval_spectral(g.point(5, 9)) - f.at(5, 9)).abs() < 1e-12);
        let p = [0.123, -1.7];
        assert!((f.eval_spectral(p) - (p[0] - 2.0 * p[1]).cos()).abs() < 1e-12);
    }
}
