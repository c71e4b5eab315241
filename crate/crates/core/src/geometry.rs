//! Distances to finite point sets on the torus, neighbourhood masks, closed
//! polylines and level-set contour extraction.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::spectral::{GridSpec, ScalarField};

/// Minimum-image distance from every grid point to the nearest point of `set`.
///
/// Returns `+inf` everywhere for an empty set.
pub fn distance_field(grid: &GridSpec, set: &[[f64; 2]]) -> Vec<f64> {
    let n = grid.n;
    let mut out = vec![f64::INFINITY; grid.len()];
    if set.is_empty() {
        return out;
    }
    out.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        let x2 = grid.coord(j);
        for (i, d) in row.iter_mut().enumerate() {
            let x = [grid.coord(i), x2];
            *d = set
                .iter()
                .map(|p| grid.torus_distance(x, *p))
                .fold(f64::INFINITY, f64::min);
        }
    });
    out
}

pub fn distance_to_set(grid: &GridSpec, x: [f64; 2], set: &[[f64; 2]]) -> f64 {
    set.iter()
        .map(|p| grid.torus_distance(x, *p))
        .fold(f64::INFINITY, f64::min)
}

/// `true` where the grid point lies at distance at least `h` from `set`.
pub fn outside_mask(dist: &[f64], h: f64) -> Vec<bool> {
    dist.iter().map(|&d| d >= h).collect()
}

/// Grid max of `|f|` restricted to a mask; 0 on an empty mask.
pub fn masked_sup(values: &[f64], mask: &[bool]) -> f64 {
    values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold(0.0_f64, |acc, (v, _)| acc.max(v.abs()))
}

/// Masked sup together with the grid index attaining it.
pub fn masked_argmax(values: &[f64], mask: &[bool]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, (v, &m)) in values.iter().zip(mask).enumerate() {
        if m && best.is_none_or(|(_, b)| v.abs() > b) {
            best = Some((k, v.abs()));
        }
    }
    best
}

/// Shoelace area of a closed polygon (positive for counter-clockwise order).
pub fn polygon_area(pts: &[[f64; 2]]) -> f64 {
    let m = pts.len();
    let mut acc = 0.0;
    for k in 0..m {
        let a = pts[k];
        let b = pts[(k + 1) % m];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc
}

pub fn polygon_length(pts: &[[f64; 2]]) -> f64 {
    let m = pts.len();
    (0..m)
        .map(|k| {
            let a = pts[k];
            let b = pts[(k + 1) % m];
            (b[0] - a[0]).hypot(b[1] - a[1])
        })
        .sum()
}

/// Resample a closed polyline to `m` points equally spaced in arclength.
pub fn resample_closed(pts: &[[f64; 2]], m: usize) -> Vec<[f64; 2]> {
    let k = pts.len();
    if k < 2 || m == 0 {
        return pts.to_vec();
    }
    let mut cum = Vec::with_capacity(k + 1);
    cum.push(0.0);
    for i in 0..k {
        let a = pts[i];
        let b = pts[(i + 1) % k];
        cum.push(cum[i] + (b[0] - a[0]).hypot(b[1] - a[1]));
    }
    let total = cum[k];
    let mut out = Vec::with_capacity(m);
    let mut seg = 0;
    for s in 0..m {
        let target = total * s as f64 / m as f64;
        while seg + 1 < k && cum[seg + 1] <= target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (target - cum[seg]) / len } else { 0.0 };
        let a = pts[seg];
        let b = pts[(seg + 1) % k];
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out
}

/// Signed curvature at each vertex of a closed, uniformly sampled polyline.
pub fn discrete_curvature(pts: &[[f64; 2]]) -> Vec<f64> {
    let m = pts.len();
    (0..m)
        .map(|k| {
            let a = pts[(k + m - 1) % m];
            let b = pts[k];
            let c = pts[(k + 1) % m];
            let (ux, uy) = (b[0] - a[0], b[1] - a[1]);
            let (vx, vy) = (c[0] - b[0], c[1] - b[1]);
            let cross = ux * vy - uy * vx;
            let dot = ux * vx + uy * vy;
            let ds = 0.5 * (ux.hypot(uy) + vx.hypot(vy));
            if ds > 0.0 {
                cross.atan2(dot) / ds
            } else {
                0.0
            }
        })
        .collect()
}

/// Closed contours of `f = level` by marching squares, longest first.
///
/// The field is treated as non-periodic; contours touching the box edge are
/// returned open and sorted after the closed ones.
pub fn marching_squares(f: &ScalarField, level: f64) -> Vec<Vec<[f64; 2]>> {
    let g = *f.grid();
    let n = g.n;
    let v = f.values();
    let val = |i: usize, j: usize| v[j * n + i] - level;
    // edge ids: horizontal edge from (i,j) to (i+1,j) -> 2*(j*n+i); vertical (i,j)-(i,j+1) -> +1
    let h_edge = |i: usize, j: usize| 2 * (j * n + i);
    let v_edge = |i: usize, j: usize| 2 * (j * n + i) + 1;
    let cross_point = |e: usize| -> [f64; 2] {
        let cell = e / 2;
        let (i, j) = (cell % n, cell / n);
        let (i2, j2) = if e % 2 == 0 { (i + 1, j) } else { (i, j + 1) };
        let (a, b) = (val(i, j), val(i2, j2));
        let t = a / (a - b);
        let p = g.point(i, j);
        if e % 2 == 0 {
            [p[0] + t * g.dx(), p[1]]
        } else {
            [p[0], p[1] + t * g.dx()]
        }
    };
    let mut segments: Vec<(usize, usize)> = Vec::new();
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let c = [val(i, j), val(i + 1, j), val(i + 1, j + 1), val(i, j + 1)];
            let mut idx = 0;
            for (b, cv) in c.iter().enumerate() {
                if *cv > 0.0 {
                    idx |= 1 << b;
                }
            }
            let bottom = h_edge(i, j);
            let right = v_edge(i + 1, j);
            let top = h_edge(i, j + 1);
            let left = v_edge(i, j);
            let centre_in = c.iter().sum::<f64>() > 0.0;
            match idx {
                0 | 15 => {}
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((right, top)),
                6 | 9 => segments.push((bottom, top)),
                7 | 8 => segments.push((left, top)),
                5 => {
                    if centre_in {
                        segments.push((left, top));
                        segments.push((bottom, right));
                    } else {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    }
                }
                10 => {
                    if centre_in {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    } else {
                        segments.push((left, top));
                        segments.push((bottom, right));
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
    for (s, (a, b)) in segments.iter().enumerate() {
        adj.entry(*a).or_default().push(s);
        adj.entry(*b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut closed = Vec::new();
    let mut open = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (a0, b0) = segments[start];
        let mut chain = vec![a0, b0];
        let mut is_closed = false;
        // extend forward from b0, then backward from a0
        for dir in 0..2 {
            loop {
                let tip = *chain.last().unwrap();
                let next = adj
                    .get(&tip)
                    .and_then(|l| l.iter().copied().find(|&s| !used[s]));
                match next {
                    Some(s) => {
                        used[s] = true;
                        let (p, q) = segments[s];
                        let other = if p == tip { q } else { p };
                        if other == chain[0] && dir == 0 {
                            is_closed = true;
                            break;
                        }
                        chain.push(other);
                    }
                    None => break,
                }
            }
            if is_closed {
                break;
            }
            chain.reverse();
        }
        let pts: Vec<[f64; 2]> = chain.iter().map(|&e| cross_point(e)).collect();
        if is_closed {
            closed.push(pts);
        } else {
            open.push(pts);
        }
    }
    closed.sort_by(|a, b| b.len().cmp(&a.len()));
    open.sort_by(|a, b| b.len().cmp(&a.len()));
    closed.extend(open);
    closed
}
