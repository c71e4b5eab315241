//! Smooth profiles shared by the dyadic partition, cutoffs and mollifiers.

use std::f64::consts::PI;

/// C-infinity step: 0 for `t <= 0`, 1 for `t >= 1`.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a / (a + b)
    }
}

/// Equals 1 for `x <= lo` and 0 for `x >= hi`, smooth in between.
pub fn smooth_cutoff(x: f64, lo: f64, hi: f64) -> f64 {
    1.0 - smooth_step((x - lo) / (hi - lo))
}

/// Radial plateau: 1 on `[a, b]`, 0 outside `(a0, b1)`.
pub fn annulus_ramp(r: f64, a0: f64, a: f64, b: f64, b1: f64) -> f64 {
    smooth_step((r - a0) / (a - a0)) * smooth_cutoff(r, b, b1)
}

/// Compactly supported bump `exp(-1/(1-r^2))` on the unit disc, unnormalised.
pub fn bump(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r * r)).exp()
    }
}

/// Normalising constant making `bump(|x|)` integrate to one over the plane.
pub fn bump_mass_2d() -> f64 {
    // 2 pi * int_0^1 r bump(r) dr by composite Simpson on a fine grid
    let m = 4000;
    let h = 1.0 / m as f64;
    let mut acc = 0.0;
    for i in 0..=m {
        let r = i as f64 * h;
        let w = if i == 0 || i == m {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * r * bump(r);
    }
    2.0 * PI * acc * h / 3.0
}

/// Bessel function of the first kind of order one.
pub fn bessel_j1(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 8.0 {
        let y = x * x;
        let num = x
            * (72362614232.0
                + y * (-7895059235.0
                    + y * (242396853.1
                        + y * (-2972611.439 + y * (15704.48260 + y * (-30.16036606))))));
        let den = 144725228442.0
            + y * (2300535178.0
                + y * (18583304.74 + y * (99447.43394 + y * (376.9991397 + y))));
        num / den
    } else {
        let z = 8.0 / ax;
        let y = z * z;
        let xx = ax - 2.356194491;
        let p = 1.0
            + y * (0.183105e-2
                + y * (-0.3516396496e-4 + y * (0.2457520174e-5 + y * (-0.240337019e-6))));
        let q = 0.04687499995
            + y * (-0.2002690873e-3
                + y * (0.8449199096e-5 + y * (-0.88228987e-6 + y * 0.105787412e-6)));
        let ans = (0.636619772 / ax).sqrt() * (xx.cos() * p - z * xx.sin() * q);
        if x < 0.0 {
            -ans
        } else {
            ans
        }
    }
}

/// `2 J1(x) / x`, continuous at the origin.
pub fn jinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 8.0
    } else {
        2.0 * bessel_j1(x) / x
    }
}

pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}
