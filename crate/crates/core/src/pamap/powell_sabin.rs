//! Powell–Sabin six-split `C¹` quadratic interpolation on a triangle.
//!
//! Input is a value and gradient at each vertex, an interior split point `Z`
//! and one split point per edge. Neighbouring triangles join `C¹` when the
//! shared edge point lies on the segment between their interior points; an
//! edge whose other side is a single quadratic (or nothing) may use any
//! point.

use super::{M2, P2};

#[derive(Clone, Copy, Debug)]
pub struct NodeData {
    pub x: P2,
    pub value: f64,
    pub grad: P2,
}

/// One of the six pieces: vertices (counter-clockwise when the macro
/// triangle is), the constant Hessian, and the base vertex data.
#[derive(Clone, Copy, Debug)]
pub struct Piece {
    pub vertices: [P2; 3],
    pub hessian: M2,
    pub base: NodeData,
}

fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: P2, b: P2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn mid(a: P2, b: P2) -> P2 {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

/// Point where segment `z1 z2` crosses the line through `p q`.
pub fn split_point(z1: P2, z2: P2, p: P2, q: P2) -> P2 {
    let d = sub(z2, z1);
    let e = sub(q, p);
    let den = d[0] * e[1] - d[1] * e[0];
    if den.abs() < f64::MIN_POSITIVE {
        return mid(p, q);
    }
    let w = sub(p, z1);
    let s = (w[0] * e[1] - w[1] * e[0]) / den;
    [z1[0] + s * d[0], z1[1] + s * d[1]]
}

/// Splits the triangle `v` into six quadratic pieces. `r[k]` lies on the edge
/// from `v[k]` to `v[k+1]`.
pub fn six_split(v: [NodeData; 3], r: [P2; 3], z: P2) -> [Piece; 6] {
    // Work relative to the first vertex to limit cancellation.
    let o = v[0].x;
    let loc = |p: P2| sub(p, o);
    let zl = loc(z);
    let xs = [loc(v[0].x), loc(v[1].x), loc(v[2].x)];
    let tangent = |i: usize, p: P2| v[i].value + 0.5 * dot(v[i].grad, sub(p, xs[i]));

    // Plane through the ordinates at the midpoints of V_i Z.
    let pts: Vec<P2> = (0..3).map(|i| mid(xs[i], zl)).collect();
    let vals: Vec<f64> = (0..3).map(|i| tangent(i, zl)).collect();
    let (a1, a2) = (sub(pts[1], pts[0]), sub(pts[2], pts[0]));
    let (b1, b2) = (vals[1] - vals[0], vals[2] - vals[0]);
    let det = a1[0] * a2[1] - a1[1] * a2[0];
    let slope = [(b1 * a2[1] - b2 * a1[1]) / det, (a1[0] * b2 - a2[0] * b1) / det];
    let plane = |p: P2| vals[0] + dot(slope, sub(p, pts[0]));
    let bz = plane(zl);

    let mut out = [Piece { vertices: [[0.0; 2]; 3], hessian: [[0.0; 2]; 2], base: v[0] }; 6];
    for k in 0..3 {
        let (i, j) = (k, (k + 1) % 3);
        let rl = loc(r[k]);
        let e = sub(xs[i], xs[j]);
        let t = dot(sub(rl, xs[j]), e) / dot(e, e);
        let b_mir = tangent(i, rl);
        let b_mjr = tangent(j, rl);
        let b_r = t * b_mir + (1.0 - t) * b_mjr;
        let b_mrz = plane(mid(rl, zl));
        for (slot, base) in [(2 * k, i), (2 * k + 1, j)] {
            let vb = xs[base];
            let b_v = v[base].value;
            let b_mvr = if base == i { b_mir } else { b_mjr };
            let b_mvz = tangent(base, zl);
            let e1 = sub(rl, vb);
            let e2 = sub(zl, vb);
            let d11 = 2.0 * (b_v - 2.0 * b_mvr + b_r);
            let d22 = 2.0 * (b_v - 2.0 * b_mvz + bz);
            let d12 = 2.0 * (b_v - b_mvr - b_mvz + b_mrz);
            let hessian = hessian_from_directional(e1, e2, d11, d12, d22);
            let vertices = if base == i { [v[i].x, r[k], z] } else { [r[k], v[j].x, z] };
            out[slot] = Piece { vertices, hessian, base: v[base] };
        }
    }
    out
}

/// Symmetric `Q` with `e_aᵀ Q e_b = d_ab`.
fn hessian_from_directional(e1: P2, e2: P2, d11: f64, d12: f64, d22: f64) -> M2 {
    // Q = E^{-T} D E^{-1} with E = [e1 e2].
    let det = e1[0] * e2[1] - e2[0] * e1[1];
    let inv = [[e2[1] / det, -e2[0] / det], [-e1[1] / det, e1[0] / det]];
    let d = [[d11, d12], [d12, d22]];
    let mut t = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            t[a][b] = d[a][0] * inv[0][b] + d[a][1] * inv[1][b];
        }
    }
    let mut q = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            q[a][b] = inv[0][a] * t[0][b] + inv[1][a] * t[1][b];
        }
    }
    let off = 0.5 * (q[0][1] + q[1][0]);
    q[0][1] = off;
    q[1][0] = off;
    q
}
