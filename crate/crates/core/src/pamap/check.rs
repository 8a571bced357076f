//! Facet matching by line hashing and the continuity residual.

use std::collections::BTreeMap;

use super::{dist2, PiecewiseAffineMap, P2};

/// Pairs of cells sharing a facet segment, with the segment endpoints.
#[derive(Clone, Debug, Default)]
pub struct Adjacency {
    pub pairs: Vec<(u32, u32, P2, P2)>,
}

#[derive(Clone, Debug)]
pub struct ContinuityReport {
    pub max_residual: f64,
    /// `(cell, cell, point)` attaining the maximum.
    pub worst: Option<(usize, usize, P2)>,
    pub shared_facets: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    Axis(u8, u64),
    Seg([u64; 4]),
}

fn bits(x: f64) -> u64 {
    (x + 0.0).to_bits()
}

/// Finds all shared facet segments. Axis-parallel facets are matched by
/// interval overlap on their supporting line, which handles T-junctions
/// between refinement levels; other facets must match end to end.
pub fn adjacency(f: &PiecewiseAffineMap) -> Adjacency {
    let mut groups: BTreeMap<Key, Vec<(f64, f64, u32)>> = BTreeMap::new();
    for (ci, c) in f.cells.iter().enumerate() {
        let v = &c.vertices;
        for i in 0..v.len() {
            let (p, q) = (v[i], v[(i + 1) % v.len()]);
            if p == q {
                continue;
            }
            let (key, lo, hi) = if p[0] == q[0] {
                (Key::Axis(0, bits(p[0])), p[1].min(q[1]), p[1].max(q[1]))
            } else if p[1] == q[1] {
                (Key::Axis(1, bits(p[1])), p[0].min(q[0]), p[0].max(q[0]))
            } else {
                let (a, b) = if (p[0], p[1]) < (q[0], q[1]) { (p, q) } else { (q, p) };
                (Key::Seg([bits(a[0]), bits(a[1]), bits(b[0]), bits(b[1])]), 0.0, 1.0)
            };
            groups.entry(key).or_default().push((lo, hi, ci as u32));
        }
    }
    let mut pairs = Vec::new();
    for (key, mut list) in groups {
        match key {
            Key::Seg(b) => {
                let a = [f64::from_bits(b[0]), f64::from_bits(b[1])];
                let c = [f64::from_bits(b[2]), f64::from_bits(b[3])];
                for i in 0..list.len() {
                    for j in i + 1..list.len() {
                        if list[i].2 != list[j].2 {
                            pairs.push((list[i].2, list[j].2, a, c));
                        }
                    }
                }
            }
            Key::Axis(axis, coord) => {
                let coord = f64::from_bits(coord);
                let point = |t: f64| if axis == 0 { [coord, t] } else { [t, coord] };
                list.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                let mut active: Vec<(f64, f64, u32)> = Vec::new();
                for (lo, hi, ci) in list {
                    active.retain(|a| a.1 > lo);
                    for a in &active {
                        let end = hi.min(a.1);
                        if a.2 != ci && end > lo {
                            pairs.push((a.2, ci, point(lo), point(end)));
                        }
                    }
                    active.push((lo, hi, ci));
                }
            }
        }
    }
    Adjacency { pairs }
}

/// Maximum disagreement of neighbouring affine maps on shared facets.
pub fn continuity_report(f: &PiecewiseAffineMap) -> (ContinuityReport, Adjacency) {
    let adj = adjacency(f);
    let mut worst = None;
    let mut max_residual: f64 = 0.0;
    for &(i, j, p, q) in &adj.pairs {
        let (ci, cj) = (&f.cells[i as usize], &f.cells[j as usize]);
        for x in [p, q] {
            let r = dist2(&ci.eval(&x), &cj.eval(&x));
            if r > max_residual || worst.is_none() {
                max_residual = max_residual.max(r);
                worst = Some((i as usize, j as usize, x));
            }
        }
    }
    (ContinuityReport { max_residual, worst, shared_facets: adj.pairs.len() }, adj)
}
