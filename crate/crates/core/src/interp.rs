//! Periodic cubic B-spline interpolation of grid fields.

use crate::spectral::{GridSpec, ScalarField, VelocityField};

/// Interpolating periodic cubic spline through the samples of a field.
#[derive(Debug, Clone)]
pub struct Spline {
    grid: GridSpec,
    coef: Vec<f64>,
}

fn symbol(k: usize, n: usize) -> f64 {
    let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
    (4.0 + 2.0 * th.cos()) / 6.0
}

fn weights(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [
        s * s * s / 6.0,
        (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0,
        (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0,
        t * t * t / 6.0,
    ]
}

fn dweights(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [
        -s * s / 2.0,
        (3.0 * t * t - 4.0 * t) / 2.0,
        (-3.0 * t * t + 2.0 * t + 1.0) / 2.0,
        t * t / 2.0,
    ]
}

impl Spline {
    pub fn new(f: &ScalarField) -> Self {
        let g = *f.grid();
        let n = g.n;
        let c = f.map_spectrum(|k1, k2, c| c / (symbol(k1, n) * symbol(k2, n)));
        Self {
            grid: g,
            coef: c.values().to_vec(),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn locate(&self, x: f64) -> (i64, f64) {
        let s = x / self.grid.dx() + (self.grid.n / 2) as f64;
        let i0 = s.floor();
        (i0 as i64, s - i0)
    }

    fn idx(&self, i: i64) -> usize {
        i.rem_euclid(self.grid.n as i64) as usize
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let (i0, t1) = self.locate(x[0]);
        let (j0, t2) = self.locate(x[1]);
        let w1 = weights(t1);
        let w2 = weights(t2);
        let n = self.grid.n;
        let mut acc = 0.0;
        for (b, wb) in w2.iter().enumerate() {
            let row = self.idx(j0 + b as i64 - 1) * n;
            let mut r = 0.0;
            for (a, wa) in w1.iter().enumerate() {
                r += wa * self.coef[row + self.idx(i0 + a as i64 - 1)];
            }
            acc += wb * r;
        }
        acc
    }

    /// Value and gradient at a point.
    pub fn eval_grad(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        let (i0, t1) = self.locate(x[0]);
        let (j0, t2) = self.locate(x[1]);
        let (w1, d1) = (weights(t1), dweights(t1));
        let (w2, d2) = (weights(t2), dweights(t2));
        let n = self.grid.n;
        let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
        for b in 0..4 {
            let row = self.idx(j0 + b as i64 - 1) * n;
            let (mut r, mut rd) = (0.0, 0.0);
            for a in 0..4 {
                let c = self.coef[row + self.idx(i0 + a as i64 - 1)];
                r += w1[a] * c;
                rd += d1[a] * c;
            }
            v += w2[b] * r;
            gx += w2[b] * rd;
            gy += d2[b] * r;
        }
        let inv = 1.0 / self.grid.dx();
        (v, [gx * inv, gy * inv])
    }
}

/// Spline pair for a velocity field, giving `v` and `grad v` anywhere.
#[derive(Debug, Clone)]
pub struct VelocitySpline {
    pub s1: Spline,
    pub s2: Spline,
}

impl VelocitySpline {
    pub fn new(v: &VelocityField) -> Self {
        Self {
            s1: Spline::new(&v.u1),
            s2: Spline::new(&v.u2),
        }
    }

    pub fn velocity(&self, x: [f64; 2]) -> [f64; 2] {
        [self.s1.eval(x), self.s2.eval(x)]
    }

    /// Velocity and Jacobian `J[i][j] = d_j v_i`.
    pub fn velocity_jacobian(&self, x: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let (a, ga) = self.s1.eval_grad(x);
        let (b, gb) = self.s2.eval_grad(x);
        ([a, b], [ga, gb])
    }
}
