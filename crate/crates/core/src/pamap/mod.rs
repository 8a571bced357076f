//! Piecewise-affine maps on planar boxes.
//!
//! A map is a list of convex polygonal cells, each carrying an affine map
//! `x ↦ Mx + b`. Realized maps are gradients of `C¹` piecewise-quadratic
//! potentials, so every cell matrix is symmetric.
//!
//! Only `n = 2` is supported for realization; the domain type itself is
//! dimension-agnostic so that callers get a clear `Unsupported` error.

mod check;
mod emit;
mod holder;
mod potential;
mod powell_sabin;
pub(crate) mod realize;

use num::{BigInt, Float, One, Zero};
use serde_json::{json, Value};
use rstar::primitives::{GeomWithData, Rectangle};
use rstar::{RTree, AABB};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rational};

pub use check::{continuity_report, ContinuityReport, Adjacency};
pub use emit::{histogram_csv, map_svg, SvgColoring};
pub use holder::{
    assemble_patches, glue, holder_seminorm_estimate, holder_seminorm_estimate_seeded, seminorm_bound, GlueReport,
    HolderEstimate, Patch,
};
pub use potential::{
    check_injectivity, reconstruct_potential, reconstruct_potential_seeded, InjectivityReport, Potential, MIDPOINT_TESTS,
};
pub use realize::{
    gradient_histogram, realize_laminate, BandRule, realize_laminate_with, realize_simple, realize_simple_with, GradientHistogram,
    RealizeParams, SplitStats,
};

/// 2×2 matrix in row-major nested form.
pub type M2 = [[f64; 2]; 2];
pub type P2 = [f64; 2];

pub(crate) fn m2_from(m: &Matrix) -> Result<M2> {
    if m.n() != 2 {
        return Err(Error::Unsupported(format!("planar maps need 2x2 matrices, got {0}x{0}", m.n())));
    }
    Ok([[*m.get(0, 0), *m.get(0, 1)], [*m.get(1, 0), *m.get(1, 1)]])
}

pub(crate) fn m2_to_matrix(m: &M2) -> Matrix {
    Matrix::from_rows(vec![m[0].to_vec(), m[1].to_vec()]).expect("2x2")
}

pub(crate) fn m2_apply(m: &M2, x: &P2) -> P2 {
    [m[0][0] * x[0] + m[0][1] * x[1], m[1][0] * x[0] + m[1][1] * x[1]]
}

pub(crate) fn m2_sub(a: &M2, b: &M2) -> M2 {
    [[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]]
}

pub(crate) fn m2_add(a: &M2, b: &M2) -> M2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

pub(crate) fn m2_scale(a: &M2, s: f64) -> M2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

/// Largest singular value.
pub fn op_norm2(m: &M2) -> f64 {
    let f = m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1];
    let d = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (f * f - 4.0 * d * d).max(0.0).sqrt();
    ((f + disc) / 2.0).sqrt()
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eig2(m: &M2) -> (f64, f64) {
    let a = m[0][0];
    let c = m[1][1];
    let b = 0.5 * (m[0][1] + m[1][0]);
    let mean = 0.5 * (a + c);
    let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (mean - r, mean + r)
}

pub(crate) fn is_sym2(m: &M2, rel: f64) -> bool {
    let scale = op_norm2(m).max(1.0);
    (m[0][1] - m[1][0]).abs() <= rel * scale
}

fn dist2(a: &P2, b: &P2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Axis-aligned box `[lower, upper]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidInput("box corners must have equal nonzero length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u)) {
            return Err(Error::InvalidInput("box must have nonempty interior".into()));
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn unit(n: usize) -> Self {
        BoxDomain { lower: vec![0.0; n], upper: vec![1.0; n] }
    }

    pub fn n(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn diameter(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (u - l).powi(2)).sum::<f64>().sqrt()
    }

    pub(crate) fn require_planar(&self) -> Result<()> {
        if self.n() != 2 {
            return Err(Error::Unsupported(format!("realization is implemented for n = 2 only, got n = {}", self.n())));
        }
        Ok(())
    }

    pub(crate) fn corners(&self) -> Vec<P2> {
        let (l, u) = (&self.lower, &self.upper);
        vec![[l[0], l[1]], [u[0], l[1]], [u[0], u[1]], [l[0], u[1]]]
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    pub(crate) fn on_boundary(&self, x: &P2, tol: f64) -> bool {
        self.contains(x, tol)
            && (0..2).any(|k| (x[k] - self.lower[k]).abs() <= tol || (x[k] - self.upper[k]).abs() <= tol)
    }

    pub fn to_json(&self) -> Value {
        json!({ "n": self.n(), "lower": self.lower, "upper": self.upper })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let get = |k: &str| -> Result<Vec<f64>> {
            v.get(k)
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Serialization(format!("domain.{k} missing")))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| Error::Serialization(format!("domain.{k} not numeric"))))
                .collect()
        };
        BoxDomain::new(get("lower")?, get("upper")?)
    }
}

/// Role of a cell in a realization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    /// Gradient equals a target matrix exactly.
    Core,
    /// Boundary transition layer of a split.
    Transition,
    /// Left unrefined (truncation or budget).
    Unrefined,
}

impl CellKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellKind::Core => "core",
            CellKind::Transition => "transition",
            CellKind::Unrefined => "unrefined",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "core" => Ok(CellKind::Core),
            "transition" => Ok(CellKind::Transition),
            "unrefined" => Ok(CellKind::Unrefined),
            _ => Err(Error::Serialization(format!("unknown cell kind {s}"))),
        }
    }
}

/// Convex polygon with an affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    /// Counter-clockwise; collinear vertices allowed so that facets match.
    pub vertices: Vec<P2>,
    pub matrix: M2,
    pub offset: P2,
    pub kind: CellKind,
    /// Certificate node whose matrix this cell realizes (core cells), or the
    /// split parent (transition cells).
    pub node: Option<usize>,
}

impl Cell {
    pub fn eval(&self, x: &P2) -> P2 {
        let y = m2_apply(&self.matrix, x);
        [y[0] + self.offset[0], y[1] + self.offset[1]]
    }

    /// Signed shoelace area in binary64.
    pub fn area(&self) -> f64 {
        let v = &self.vertices;
        let Some(&o) = v.first() else { return 0.0 };
        let mut s = 0.0;
        for i in 1..v.len().saturating_sub(1) {
            let (p, q) = (v[i], v[i + 1]);
            s += (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0]);
        }
        0.5 * s
    }

    /// Shoelace area of the stored vertices in exact arithmetic.
    pub fn area_exact(&self) -> Rational {
        self.area_dyadic().to_rational()
    }

    pub fn area_dyadic(&self) -> Dyadic {
        let v = &self.vertices;
        let mut s = Dyadic::zero();
        for i in 0..v.len() {
            let (p, q) = (v[i], v[(i + 1) % v.len()]);
            s = s.add(&Dyadic::from_f64(p[0]).mul(&Dyadic::from_f64(q[1])));
            s = s.add(&Dyadic::from_f64(p[1]).mul(&Dyadic::from_f64(q[0])).neg());
        }
        Dyadic { mant: s.mant, exp: s.exp - 1 }
    }

    pub fn centroid(&self) -> P2 {
        // Relative to the first vertex to avoid cancellation on small cells.
        let Some(&o) = self.vertices.first() else { return [f64::NAN; 2] };
        let v: Vec<P2> = self.vertices.iter().map(|p| [p[0] - o[0], p[1] - o[1]]).collect();
        let (mut cx, mut cy, mut a) = (0.0, 0.0, 0.0);
        for i in 0..v.len() {
            let (p, q) = (v[i], v[(i + 1) % v.len()]);
            let cr = p[0] * q[1] - q[0] * p[1];
            a += cr;
            cx += (p[0] + q[0]) * cr;
            cy += (p[1] + q[1]) * cr;
        }
        if a.abs() < f64::MIN_POSITIVE {
            let k = v.len() as f64;
            let (sx, sy) = v.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
            return [o[0] + sx / k, o[1] + sy / k];
        }
        [o[0] + cx / (3.0 * a), o[1] + cy / (3.0 * a)]
    }

    pub fn diameter(&self) -> f64 {
        let v = &self.vertices;
        let mut d: f64 = 0.0;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                d = d.max(dist2(&v[i], &v[j]));
            }
        }
        d
    }

    /// Point-in-convex-polygon with an absolute tolerance on the edge tests.
    pub fn contains(&self, x: &P2, tol: f64) -> bool {
        let v = &self.vertices;
        for i in 0..v.len() {
            let (p, q) = (v[i], v[(i + 1) % v.len()]);
            let (ex, ey) = (q[0] - p[0], q[1] - p[1]);
            let len = (ex * ex + ey * ey).sqrt();
            if len == 0.0 {
                continue;
            }
            let cr = (ex * (x[1] - p[1]) - ey * (x[0] - p[0])) / len;
            if cr < -tol {
                return false;
            }
        }
        true
    }

    pub fn bbox(&self) -> (P2, P2) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Whether the polygon is convex, counter-clockwise and nondegenerate.
    pub fn is_valid(&self) -> bool {
        let v = &self.vertices;
        if v.len() < 3 || self.area() <= 0.0 {
            return false;
        }
        let scale = self.diameter().max(f64::MIN_POSITIVE);
        (0..v.len()).all(|i| {
            let (a, b, c) = (v[i], v[(i + 1) % v.len()], v[(i + 2) % v.len()]);
            let cr = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
            cr >= -1e-12 * scale * scale
        })
    }

    fn to_json(&self) -> Value {
        json!({
            "vertices": self.vertices,
            "matrix": self.matrix,
            "offset": self.offset,
            "kind": self.kind.as_str(),
            "node": self.node,
        })
    }

    fn from_json(v: &Value) -> Result<Self> {
        let err = |k: &str| Error::Serialization(format!("cell.{k} malformed"));
        let vertices: Vec<P2> = serde_json::from_value(v.get("vertices").cloned().ok_or_else(|| err("vertices"))?)
            .map_err(|_| err("vertices"))?;
        let matrix: M2 =
            serde_json::from_value(v.get("matrix").cloned().ok_or_else(|| err("matrix"))?).map_err(|_| err("matrix"))?;
        let offset: P2 =
            serde_json::from_value(v.get("offset").cloned().ok_or_else(|| err("offset"))?).map_err(|_| err("offset"))?;
        let kind = match v.get("kind").and_then(Value::as_str) {
            Some(s) => CellKind::parse(s)?,
            None => CellKind::Core,
        };
        let node = v.get("node").and_then(Value::as_u64).map(|x| x as usize);
        Ok(Cell { vertices, matrix, offset, kind, node })
    }
}

/// Continuous piecewise-affine map on a box.
#[derive(Clone, Debug)]
pub struct PiecewiseAffineMap {
    pub domain: BoxDomain,
    pub cells: Vec<Cell>,
    /// Trace on the boundary: `x ↦ boundary_matrix·x + boundary_offset`.
    pub boundary_matrix: M2,
    pub boundary_offset: P2,
}

impl PiecewiseAffineMap {
    /// The affine map `x ↦ Ax` as a single cell.
    pub fn affine(domain: BoxDomain, a: &Matrix) -> Result<Self> {
        domain.require_planar()?;
        let m = m2_from(a)?;
        Ok(PiecewiseAffineMap {
            cells: vec![Cell { vertices: domain.corners(), matrix: m, offset: [0.0; 2], kind: CellKind::Core, node: None }],
            domain,
            boundary_matrix: m,
            boundary_offset: [0.0; 2],
        })
    }

    pub fn identity(domain: BoxDomain) -> Result<Self> {
        Self::affine(domain, &Matrix::identity(2))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn boundary_eval(&self, x: &P2) -> P2 {
        let y = m2_apply(&self.boundary_matrix, x);
        [y[0] + self.boundary_offset[0], y[1] + self.boundary_offset[1]]
    }

    pub fn index(&self) -> CellIndex {
        CellIndex::new(&self.cells, &self.domain)
    }

    /// Evaluates by cell search; `None` outside the domain.
    pub fn eval(&self, x: &P2) -> Option<P2> {
        self.index().locate(&self.cells, x).map(|i| self.cells[i].eval(x))
    }

    pub fn total_area(&self) -> f64 {
        self.cells.iter().map(Cell::area).sum()
    }

    pub fn total_area_exact(&self) -> Rational {
        Dyadic::sum(self.cells.iter().map(Cell::area_dyadic)).to_rational()
    }

    /// Volume accounting: `(|Σ cell areas − |Ω|| / |Ω|, all cells valid)`.
    pub fn volume_check(&self) -> (f64, bool) {
        let total = self.total_area_exact();
        let vol = Rational::from_float(self.domain.volume()).unwrap_or_default();
        let rel = crate::numeric::Scalar::to_float(&((total - vol.clone()) / vol)).abs();
        (rel, self.cells.iter().all(Cell::is_valid))
    }

    /// Max deviation of cell maps from the boundary trace at boundary vertices.
    pub fn boundary_residual(&self) -> f64 {
        let tol = 1e-13 * self.domain.diameter();
        let mut worst: f64 = 0.0;
        for c in &self.cells {
            for v in &c.vertices {
                if self.domain.on_boundary(v, tol) {
                    let (a, b) = (c.eval(v), self.boundary_eval(v));
                    worst = worst.max(dist2(&a, &b));
                }
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.cells.iter().map(|c| sym_eig2(&c.matrix).0).fold(f64::INFINITY, f64::min)
    }

    pub fn max_gradient_norm(&self) -> f64 {
        self.cells.iter().map(|c| op_norm2(&c.matrix)).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "domain": self.domain.to_json(),
            "cells": self.cells.iter().map(Cell::to_json).collect::<Vec<_>>(),
            "boundary_matrix": self.boundary_matrix,
            "boundary_offset": self.boundary_offset,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let domain = BoxDomain::from_json(v.get("domain").ok_or_else(|| Error::Serialization("domain missing".into()))?)?;
        domain.require_planar()?;
        let cells = v
            .get("cells")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Serialization("cells missing".into()))?
            .iter()
            .map(Cell::from_json)
            .collect::<Result<Vec<_>>>()?;
        let boundary_matrix: M2 = serde_json::from_value(v.get("boundary_matrix").cloned().unwrap_or(Value::Null))
            .map_err(|_| Error::Serialization("boundary_matrix malformed".into()))?;
        let boundary_offset: P2 = match v.get("boundary_offset") {
            Some(b) => serde_json::from_value(b.clone()).map_err(|_| Error::Serialization("boundary_offset malformed".into()))?,
            None => [0.0; 2],
        };
        Ok(PiecewiseAffineMap { domain, cells, boundary_matrix, boundary_offset })
    }
}

/// Exact binary rational `mant·2^exp`; every finite `f64` is one.
#[derive(Clone, Debug, PartialEq)]
pub struct Dyadic {
    mant: BigInt,
    exp: i64,
}

impl Dyadic {
    pub fn zero() -> Self {
        Dyadic { mant: BigInt::zero(), exp: 0 }
    }

    pub fn from_f64(x: f64) -> Self {
        let (m, e, sign) = x.integer_decode();
        let mant = BigInt::from(m) * i64::from(sign);
        Dyadic { mant, exp: i64::from(e) }
    }

    pub fn add(&self, o: &Dyadic) -> Dyadic {
        if self.mant.is_zero() {
            return o.clone();
        }
        if o.mant.is_zero() {
            return self.clone();
        }
        let exp = self.exp.min(o.exp);
        let mant = (&self.mant << (self.exp - exp) as usize) + (&o.mant << (o.exp - exp) as usize);
        Dyadic { mant, exp }
    }

    pub fn mul(&self, o: &Dyadic) -> Dyadic {
        Dyadic { mant: &self.mant * &o.mant, exp: self.exp + o.exp }
    }

    pub fn neg(&self) -> Dyadic {
        Dyadic { mant: -self.mant.clone(), exp: self.exp }
    }

    pub fn sum(items: impl Iterator<Item = Dyadic>) -> Dyadic {
        items.fold(Dyadic::zero(), |acc, d| acc.add(&d))
    }

    pub fn to_rational(&self) -> Rational {
        if self.exp >= 0 {
            Rational::from_integer(&self.mant << self.exp as usize)
        } else {
            Rational::new(self.mant.clone(), BigInt::one() << (-self.exp) as usize)
        }
    }
}

/// R-tree over cell bounding boxes for point location.
#[derive(Clone, Debug)]
pub struct CellIndex {
    tree: RTree<GeomWithData<Rectangle<P2>, u32>>,
    scale: f64,
}

impl CellIndex {
    pub fn new(cells: &[Cell], domain: &BoxDomain) -> Self {
        let items = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let (a, b) = c.bbox();
                GeomWithData::new(Rectangle::from_corners(a, b), i as u32)
            })
            .collect();
        let scale = domain.upper.iter().zip(&domain.lower).map(|(u, l)| (u - l).abs()).fold(0.0, f64::max);
        CellIndex { tree: RTree::bulk_load(items), scale }
    }

    /// Indices of cells whose bounding boxes meet the box `[lo, hi]`, sorted.
    pub fn overlapping(&self, lo: &P2, hi: &P2) -> Vec<usize> {
        let env = AABB::from_corners(*lo, *hi);
        let mut out: Vec<usize> = self.tree.locate_in_envelope_intersecting(env).map(|g| g.data as usize).collect();
        out.sort_unstable();
        out
    }

    pub fn locate(&self, cells: &[Cell], x: &P2) -> Option<usize> {
        let scale = self.scale.max(1e-300);
        for tol in [0.0, 1e-12 * scale, 1e-9 * scale] {
            let env = AABB::from_corners([x[0] - tol, x[1] - tol], [x[0] + tol, x[1] + tol]);
            let found = self
                .tree
                .locate_in_envelope_intersecting(env)
                .map(|g| g.data as usize)
                .filter(|&i| cells[i].contains(x, tol))
                .min();
            if found.is_some() {
                return found;
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_map_basics() {
        let a = Matrix::from_rows(vec![vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let f = PiecewiseAffineMap::affine(BoxDomain::unit(2), &a).unwrap();
        assert_eq!(f.eval(&[0.5, 0.5]).unwrap(), [1.5, 2.0]);
        assert_eq!(f.boundary_residual(), 0.0);
        assert_eq!(f.volume_check(), (0.0, true));
        let back = PiecewiseAffineMap::from_json(&f.to_json()).unwrap();
        assert_eq!(back.cells, f.cells);
    }

    #[test]
    fn planar_only() {
        assert!(matches!(
            PiecewiseAffineMap::affine(BoxDomain::unit(3), &Matrix::identity(3)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn eig_and_norm() {
        let m = [[2.0, 1.0], [1.0, 2.0]];
        assert_eq!(sym_eig2(&m), (1.0, 3.0));
        assert!((op_norm2(&m) - 3.0).abs() < 1e-15);
        assert!((op_norm2(&[[0.0, 2.0], [0.0, 0.0]]) - 2.0).abs() < 1e-15);
    }
}
