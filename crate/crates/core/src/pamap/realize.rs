//! Realization of rank-one splits and finite-order laminates on rectangles.
//!
//! For a split `A = λB + (1−λ)C` with `B − C = c·e_d e_dᵀ` the potential is
//! `u = ½xᵀAx + β·x + ψ`, where in the core `ψ(s) = c·H(s)` is a periodic
//! `C¹` quadratic spline in `s = x_d` with `H'' ∈ {1−λ, −λ}`. The phase puts
//! `H = H' = 0` on the two sides `s = const`, so no transition is needed
//! there. Along the other two sides a band of width `w` carries the
//! Powell–Sabin interpolant of `θ(ρ)·ψ(s)`, where `ρ` is the scaled distance
//! to the side and `θ(ρ) = 3ρ² − 2ρ³`.

use num::Zero;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measure::DiscreteMatrixMeasure;
use crate::numeric::{Matrix, Rational, Scalar};
use crate::tolerances::{RANK_ONE_REL, SYMMETRY_REL};

use super::powell_sabin::{six_split, split_point, NodeData};
use super::{
    is_sym2, m2_add, Dyadic, m2_from, m2_scale, m2_sub, op_norm2, sym_eig2, BoxDomain, Cell, CellKind,
    PiecewiseAffineMap, M2, P2,
};

/// When a transition band is accepted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BandRule {
    /// Band gradients within `delta` of `[B, C]` with eigenvalues at least
    /// `(1 − delta)·min(λ_min(B), λ_min(C))`.
    Strict,
    /// Band gradients positive definite with eigenvalues at least the given
    /// multiple of `min(λ_min(B), λ_min(C))`; no closeness requirement.
    PositiveDefinite(f64),
}

/// Tuning of the transition band.
#[derive(Clone, Debug)]
pub struct RealizeParams {
    pub band_rule: BandRule,
    /// Gradients in the band must lie within `delta` of `[B, C]`.
    pub delta: f64,
    pub eps_bnd: f64,
    /// Initial band width in periods; doubled until the band passes.
    pub ratio: f64,
    pub max_ratio: f64,
    /// Band rows per unit of `ratio`.
    pub rows_per_ratio: f64,
    /// Upper bound on the oscillation period.
    pub max_period: f64,
    /// Refuse a single split that would emit more cells than this.
    pub max_cells: usize,
    /// Scale the band by the minority weight so that both atom fractions
    /// lose at most `eps_bnd` relative volume. When off, the band is bounded
    /// by `eps_bnd` of the cell only.
    pub weighted_band: bool,
}

impl RealizeParams {
    pub fn new(delta: f64, eps_bnd: f64) -> Self {
        RealizeParams {
            band_rule: BandRule::Strict,
            delta,
            eps_bnd,
            ratio: 2.0,
            max_ratio: 512.0,
            rows_per_ratio: 0.5,
            max_period: f64::INFINITY,
            max_cells: 4_000_000,
            weighted_band: true,
        }
    }
}

/// Diagnostics of one realized split.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitStats {
    pub node: Option<usize>,
    pub periods: usize,
    pub rows: usize,
    pub ratio: f64,
    pub band_fraction: f64,
    /// Max distance of band gradients to `[B, C]` (operator norm).
    pub band_deviation: f64,
    pub band_min_eigenvalue: f64,
    pub cells: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Role {
    B,
    C,
    Band,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Rect {
    pub lo: P2,
    pub hi: P2,
}

impl Rect {
    pub fn from_domain(d: &BoxDomain) -> Self {
        Rect { lo: [d.lower[0], d.lower[1]], hi: [d.upper[0], d.upper[1]] }
    }

    pub fn from_cell(c: &Cell) -> Option<Self> {
        let (lo, hi) = c.bbox();
        let on_box = c.vertices.iter().all(|p| (p[0] == lo[0] || p[0] == hi[0]) || (p[1] == lo[1] || p[1] == hi[1]));
        (on_box && c.vertices.len() >= 4).then_some(Rect { lo, hi })
    }
}

/// A rank-one split prepared for realization.
#[derive(Clone, Debug)]
pub(crate) struct SplitSpec {
    pub lambda: f64,
    pub b: M2,
    pub c: M2,
    pub node: Option<usize>,
    pub child_b: Option<usize>,
    pub child_c: Option<usize>,
}

fn min_eig_pair(b: &M2, c: &M2) -> f64 {
    sym_eig2(b).0.min(sym_eig2(c).0)
}

/// Axis and coefficient with `B − C = c·e_d e_dᵀ`.
fn axis_direction(b: &M2, c: &M2) -> Result<(usize, f64)> {
    let d = m2_sub(b, c);
    let scale = op_norm2(b).max(op_norm2(c)).max(1.0);
    let tol = RANK_ONE_REL * scale;
    let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
    if det.abs() > tol * op_norm2(&d).max(1.0) {
        return Err(Error::InvalidInput("B - C is not rank one".into()));
    }
    if d[0][1].abs() <= tol && d[1][0].abs() <= tol {
        if d[1][1].abs() <= tol {
            return Ok((0, d[0][0]));
        }
        if d[0][0].abs() <= tol {
            return Ok((1, d[1][1]));
        }
    }
    Err(Error::Unsupported("realization needs a coordinate rank-one direction".into()))
}

fn theta(r: f64) -> (f64, f64) {
    (r * r * (3.0 - 2.0 * r), 6.0 * r * (1.0 - r))
}

/// Column of the core profile: `B` around `center`, or `C` around `center`.
#[derive(Clone, Copy)]
struct Column {
    lo: f64,
    hi: f64,
    is_b: bool,
    center: f64,
}

struct Profile {
    c: f64,
    lambda: f64,
    period: f64,
}

impl Profile {
    /// `ψ(s)` and `ψ'(s)` inside `col`.
    fn eval(&self, col: &Column, s: f64) -> (f64, f64) {
        let (c, l, p) = (self.c, self.lambda, self.period);
        let t = s - col.center;
        if col.is_b {
            (0.5 * c * (1.0 - l) * t * t, c * (1.0 - l) * t)
        } else {
            (-0.5 * c * l * t * t + c * l * (1.0 - l) * p * p / 8.0, -c * l * t)
        }
    }
}

fn columns(s0: f64, s1: f64, n: usize, lambda: f64) -> (Vec<Column>, f64) {
    let p = (s1 - s0) / n as f64;
    let b = |k: usize| if k == n { s1 } else { s0 + k as f64 * p };
    let half = 0.5 * lambda * p;
    let mut cols = Vec::with_capacity(2 * n + 1);
    let mut left = s0;
    for k in 0..n {
        let bk = b(k);
        let e1 = bk + half;
        cols.push(Column { lo: left, hi: e1, is_b: true, center: bk });
        let e2 = b(k + 1) - half;
        cols.push(Column { lo: e1, hi: e2, is_b: false, center: bk + 0.5 * p });
        left = e2;
    }
    cols.push(Column { lo: left, hi: s1, is_b: true, center: s1 });
    cols.retain(|c| c.hi > c.lo);
    (cols, p)
}

/// Local frame: `s` along the split axis, `r` across.
struct Frame {
    d: usize,
}

impl Frame {
    fn to_xy(&self, p: P2) -> P2 {
        if self.d == 0 {
            p
        } else {
            [p[1], p[0]]
        }
    }

    fn matrix_to_xy(&self, q: &M2) -> M2 {
        if self.d == 0 {
            *q
        } else {
            [[q[1][1], q[1][0]], [q[0][1], q[0][0]]]
        }
    }

    /// Maps a counter-clockwise local polygon to a counter-clockwise global one.
    fn polygon_to_xy(&self, pts: &[P2]) -> Vec<P2> {
        let mut v: Vec<P2> = pts.iter().map(|p| self.to_xy(*p)).collect();
        if self.d == 1 {
            v.reverse();
        }
        v
    }
}

pub(crate) struct SplitOutput {
    pub cells: Vec<(Cell, Role)>,
    pub stats: SplitStats,
}

fn band_levels(outer: f64, inner: f64, m: usize) -> Vec<f64> {
    (0..=m).map(|j| if j == m { inner } else { outer + (inner - outer) * (j as f64 / m as f64) }).collect()
}

fn band_share(lam: f64, params: &RealizeParams) -> f64 {
    if params.weighted_band {
        (lam / (1.0 - lam)).min((1.0 - lam) / lam).min(1.0)
    } else {
        1.0
    }
}

/// Cells emitted by `split_rect` at the initial band ratio; a lower bound
/// for the adaptive result.
pub(crate) fn split_cost(spec: &SplitSpec, rect: Rect, params: &RealizeParams, eps: f64) -> usize {
    let lam = spec.lambda;
    if lam <= 0.0 || lam >= 1.0 {
        return 1;
    }
    let Ok((d, c)) = axis_direction(&spec.b, &spec.c) else { return 1 };
    if c == 0.0 {
        return 1;
    }
    let share = band_share(lam, params);
    let w_max = 0.45 * eps * share * (rect.hi[1 - d] - rect.lo[1 - d]);
    let p_max = (w_max / params.ratio).min(params.max_period);
    let n = (((rect.hi[d] - rect.lo[d]) / p_max).ceil() as usize).max(1);
    let rows = ((params.ratio * params.rows_per_ratio).ceil() as usize).max(1);
    (2 * n + 1) * (rows * 24 + 1)
}

/// Realizes one split on `rect` with boundary trace `x ↦ Ax + β`.
pub(crate) fn split_rect(spec: &SplitSpec, rect: Rect, beta: P2, params: &RealizeParams, eps: f64) -> Result<SplitOutput> {
    let lam = spec.lambda;
    let a = m2_add(&m2_scale(&spec.b, lam), &m2_scale(&spec.c, 1.0 - lam));
    let single = |m: M2, node: Option<usize>, role: Role| -> SplitOutput {
        let verts = vec![rect.lo, [rect.hi[0], rect.lo[1]], rect.hi, [rect.lo[0], rect.hi[1]]];
        SplitOutput {
            cells: vec![(Cell { vertices: verts, matrix: m, offset: beta, kind: CellKind::Core, node }, role)],
            stats: SplitStats {
                node: spec.node,
                periods: 0,
                rows: 0,
                ratio: 0.0,
                band_fraction: 0.0,
                band_deviation: 0.0,
                band_min_eigenvalue: f64::INFINITY,
                cells: 1,
            },
        }
    };
    if lam >= 1.0 {
        return Ok(single(spec.b, spec.child_b, Role::B));
    }
    if lam <= 0.0 {
        return Ok(single(spec.c, spec.child_c, Role::C));
    }
    let (d, c) = axis_direction(&spec.b, &spec.c)?;
    if c == 0.0 {
        return Ok(single(spec.b, spec.child_b, Role::B));
    }
    let frame = Frame { d };
    let (s0, s1) = (rect.lo[d], rect.hi[d]);
    let (r0, r1) = (rect.lo[1 - d], rect.hi[1 - d]);
    let (s_len, t_len) = (s1 - s0, r1 - r0);
    let share = band_share(lam, params);
    let f_target = 0.9 * eps * share;
    let linv = min_eig_pair(&spec.b, &spec.c);
    let mut ratio = params.ratio;
    loop {
        let w_max = 0.5 * f_target * t_len;
        let p_max = (w_max / ratio).min(params.max_period);
        let n = ((s_len / p_max).ceil() as usize).max(1);
        let (cols, period) = columns(s0, s1, n, lam);
        let w = (ratio * period).min(w_max);
        let rows = ((ratio * params.rows_per_ratio).ceil() as usize).max(1);
        let estimate = cols.len() * (rows * 24 + 1);
        if estimate > params.max_cells {
            return Err(Error::SizeGuard(format!(
                "split needs about {estimate} cells (limit {}) at band ratio {ratio}",
                params.max_cells
            )));
        }
        let profile = Profile { c, lambda: lam, period };
        let out = build(spec, &frame, &cols, &profile, (r0, r1), w, rows, &a, beta);
        let mut dev: f64 = 0.0;
        let mut min_eig = f64::INFINITY;
        for (cell, role) in &out {
            if *role == Role::Band {
                dev = dev.max(segment_distance(&cell.matrix, &spec.b, &spec.c, d, c));
                min_eig = min_eig.min(sym_eig2(&cell.matrix).0);
            }
        }
        let ok = match params.band_rule {
            BandRule::Strict => dev <= params.delta && min_eig >= (1.0 - params.delta) * linv,
            BandRule::PositiveDefinite(k) => min_eig >= k * linv,
        };
        if ok || ratio * 2.0 > params.max_ratio {
            if !ok {
                return Err(Error::Domain(format!(
                    "transition band deviation {dev:.3e} (min eigenvalue {min_eig:.3e}) not within delta {} at ratio {ratio}",
                    params.delta
                )));
            }
            let cells = out.len();
            return Ok(SplitOutput {
                cells: out,
                stats: SplitStats {
                    node: spec.node,
                    periods: n,
                    rows,
                    ratio,
                    band_fraction: 2.0 * w / t_len,
                    band_deviation: dev,
                    band_min_eigenvalue: min_eig,
                    cells,
                },
            });
        }
        ratio *= 2.0;
    }
}

/// Upper bound on `dist(M, [B, C])` using the projection on the split axis.
fn segment_distance(m: &M2, b: &M2, c_mat: &M2, d: usize, c: f64) -> f64 {
    let t = ((m[d][d] - c_mat[d][d]) / c).clamp(0.0, 1.0);
    let on_seg = m2_add(c_mat, &m2_scale(&m2_sub(b, c_mat), t));
    op_norm2(&m2_sub(m, &on_seg))
}

#[allow(clippy::too_many_arguments)]
fn build(
    spec: &SplitSpec,
    frame: &Frame,
    cols: &[Column],
    profile: &Profile,
    (r0, r1): (f64, f64),
    w: f64,
    rows: usize,
    a: &M2,
    beta: P2,
) -> Vec<(Cell, Role)> {
    let knots: Vec<f64> = cols.iter().map(|c| c.lo).chain(std::iter::once(cols[cols.len() - 1].hi)).collect();
    let rb = r0 + w;
    let rt = r1 - w;
    let bottom = band_levels(r0, rb, rows);
    let top = band_levels(r1, rt, rows);
    let mut out = Vec::new();
    // Core edge split points, one per column, on each band.
    let mut core_pts_bottom = Vec::new();
    let mut core_pts_top = Vec::new();
    for (levels, core_pts) in [(&bottom, &mut core_pts_bottom), (&top, &mut core_pts_top)] {
        band(spec, frame, cols, &knots, profile, levels, w, a, beta, &mut out, core_pts);
    }
    // Core cells.
    let (dd, c, lam) = (frame.d, profile.c, profile.lambda);
    for (i, col) in cols.iter().enumerate() {
        let (m, offset_s, node, role) = if col.is_b {
            (spec.b, -c * (1.0 - lam) * col.center, spec.child_b, Role::B)
        } else {
            (spec.c, c * lam * col.center, spec.child_c, Role::C)
        };
        let mut offset = beta;
        offset[dd] += offset_s;
        let local = vec![[col.lo, rb], core_pts_bottom[i], [col.hi, rb], [col.hi, rt], core_pts_top[i], [col.lo, rt]];
        out.push((
            Cell { vertices: frame.polygon_to_xy(&local), matrix: m, offset, kind: CellKind::Core, node },
            role,
        ));
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn band(
    spec: &SplitSpec,
    frame: &Frame,
    cols: &[Column],
    knots: &[f64],
    profile: &Profile,
    levels: &[f64],
    w: f64,
    a: &M2,
    beta: P2,
    out: &mut Vec<(Cell, Role)>,
    core_pts: &mut Vec<P2>,
) {
    let nc = cols.len();
    let m = levels.len() - 1;
    // Levels run from the outer side (index 0) to the core (index m); the
    // triangulation is built in the (s, r) order so flip when r decreases.
    let ascending = levels[m] > levels[0];
    let r_at = |j: usize| if ascending { levels[j] } else { levels[m - j] };
    let rho_at = |j: usize| if ascending { j as f64 / m as f64 } else { (m - j) as f64 / m as f64 };
    let sign = if ascending { 1.0 } else { -1.0 };
    let node = |i: usize, j: usize| -> NodeData {
        let s = knots[i];
        let col = if i == nc { &cols[nc - 1] } else { &cols[i] };
        let (psi, dpsi) = profile.eval(col, s);
        let rho = rho_at(j);
        let (th, dth) = if j == if ascending { m } else { 0 } { (1.0, 0.0) } else { theta(rho) };
        let x = [s, r_at(j)];
        if rho == 0.0 {
            return NodeData { x, value: 0.0, grad: [0.0, 0.0] };
        }
        NodeData { x, value: th * psi, grad: [th * dpsi, sign * dth * psi / w] }
    };
    let nodes: Vec<Vec<NodeData>> = (0..=nc).map(|i| (0..=m).map(|j| node(i, j)).collect()).collect();
    let pt = |i: usize, j: usize| nodes[i][j].x;
    let centroid = |p: [P2; 3]| [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
    let zl = |i: usize, j: usize| centroid([pt(i, j), pt(i + 1, j), pt(i + 1, j + 1)]);
    let zu = |i: usize, j: usize| centroid([pt(i, j), pt(i + 1, j + 1), pt(i, j + 1)]);
    let mid = |p: P2, q: P2| [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
    // Horizontal edge points: column i, level j.
    let rh: Vec<Vec<P2>> = (0..nc)
        .map(|i| {
            (0..=m)
                .map(|j| {
                    if j > 0 && j < m {
                        split_point(zu(i, j - 1), zl(i, j), pt(i, j), pt(i + 1, j))
                    } else {
                        mid(pt(i, j), pt(i + 1, j))
                    }
                })
                .collect()
        })
        .collect();
    // Vertical edge points: knot i, row j.
    let rv: Vec<Vec<P2>> = (0..=nc)
        .map(|i| {
            (0..m)
                .map(|j| {
                    if i > 0 && i < nc {
                        split_point(zl(i - 1, j), zu(i, j), pt(i, j), pt(i, j + 1))
                    } else {
                        mid(pt(i, j), pt(i, j + 1))
                    }
                })
                .collect()
        })
        .collect();
    let core_level = if ascending { m } else { 0 };
    for i in 0..nc {
        core_pts.push(rh[i][core_level]);
    }
    let cell_node = spec.node;
    let mut emit = |pieces: [super::powell_sabin::Piece; 6]| {
        for p in pieces {
            let q = frame.matrix_to_xy(&p.hessian);
            let base = frame.to_xy(p.base.x);
            let g = frame.to_xy(p.base.grad);
            let mm = m2_add(a, &q);
            let qb = super::m2_apply(&q, &base);
            let offset = [beta[0] + g[0] - qb[0], beta[1] + g[1] - qb[1]];
            out.push((
                Cell {
                    vertices: frame.polygon_to_xy(&p.vertices),
                    matrix: mm,
                    offset,
                    kind: CellKind::Transition,
                    node: cell_node,
                },
                Role::Band,
            ));
        }
    };
    for j in 0..m {
        for i in 0..nc {
            let diag = split_point(zl(i, j), zu(i, j), pt(i, j), pt(i + 1, j + 1));
            let lower = [nodes[i][j], nodes[i + 1][j], nodes[i + 1][j + 1]];
            emit(six_split(lower, [rh[i][j], rv[i + 1][j], diag], zl(i, j)));
            let upper = [nodes[i][j], nodes[i + 1][j + 1], nodes[i][j + 1]];
            emit(six_split(upper, [diag, rh[i][j + 1], rv[i][j]], zu(i, j)));
        }
    }
}

fn check_split_inputs(b: &M2, c: &M2, delta: f64, eps: f64) -> Result<f64> {
    if !is_sym2(b, SYMMETRY_REL) || !is_sym2(c, SYMMETRY_REL) {
        return Err(Error::InvalidInput("split matrices must be symmetric".into()));
    }
    let linv = min_eig_pair(b, c);
    if linv <= 0.0 {
        return Err(Error::InvalidInput("split matrices must be positive definite".into()));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidInput("eps_bnd must lie in (0, 1)".into()));
    }
    let gap = op_norm2(&m2_sub(b, c));
    if !(delta > 0.0 && delta < 0.5 * linv.min(if gap > 0.0 { gap } else { f64::INFINITY })) {
        return Err(Error::InvalidInput(format!(
            "delta = {delta} must lie in (0, min(L^-1, |B-C|)/2) = (0, {})",
            0.5 * linv.min(gap)
        )));
    }
    Ok(linv)
}

fn assemble(domain: BoxDomain, a: M2, cells: Vec<Cell>) -> PiecewiseAffineMap {
    PiecewiseAffineMap { domain, cells, boundary_matrix: a, boundary_offset: [0.0; 2] }
}

/// Realizes `λδ_B + (1−λ)δ_C` on a planar box with trace `A = λB + (1−λ)C`.
pub fn realize_simple(
    lambda: f64,
    b: &Matrix,
    c: &Matrix,
    domain: &BoxDomain,
    delta: f64,
    eps_bnd: f64,
) -> Result<PiecewiseAffineMap> {
    realize_simple_with(lambda, b, c, domain, &RealizeParams::new(delta, eps_bnd)).map(|(f, _)| f)
}

pub fn realize_simple_with(
    lambda: f64,
    b: &Matrix,
    c: &Matrix,
    domain: &BoxDomain,
    params: &RealizeParams,
) -> Result<(PiecewiseAffineMap, SplitStats)> {
    domain.require_planar()?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput("lambda must lie in [0, 1]".into()));
    }
    let (b2, c2) = (m2_from(b)?, m2_from(c)?);
    check_split_inputs(&b2, &c2, params.delta, params.eps_bnd)?;
    let spec = SplitSpec { lambda, b: b2, c: c2, node: None, child_b: None, child_c: None };
    let out = split_rect(&spec, Rect::from_domain(domain), [0.0; 2], params, params.eps_bnd)?;
    let a = m2_add(&m2_scale(&b2, lambda), &m2_scale(&c2, 1.0 - lambda));
    let cells = out.cells.into_iter().map(|(c, _)| c).collect();
    Ok((assemble(domain.clone(), a, cells), out.stats))
}

/// Longest root-to-leaf path in a split DAG.
pub(crate) fn tree_depth<T: Scalar>(tree: &crate::measure::SplitTree<T>, node: usize) -> usize {
    match tree.split_at(node) {
        None => 0,
        Some(sp) => 1 + tree_depth(tree, sp.b).max(tree_depth(tree, sp.c)),
    }
}

/// Realizes a certified laminate of finite order by recursion over its
/// split tree. Each level receives `eps_bnd / depth` of the band budget.
pub fn realize_laminate<T: Scalar>(
    nu: &DiscreteMatrixMeasure<T>,
    domain: &BoxDomain,
    delta: f64,
    eps_bnd: f64,
) -> Result<PiecewiseAffineMap> {
    realize_laminate_with(nu, domain, &RealizeParams::new(delta, eps_bnd)).map(|(f, _)| f)
}

pub fn realize_laminate_with<T: Scalar>(
    nu: &DiscreteMatrixMeasure<T>,
    domain: &BoxDomain,
    params: &RealizeParams,
) -> Result<(PiecewiseAffineMap, Vec<SplitStats>)> {
    domain.require_planar()?;
    if nu.n() != 2 {
        return Err(Error::Unsupported("realization is implemented for n = 2 only".into()));
    }
    let report = nu.certify();
    if !report.passed() {
        return Err(Error::InvalidInput(format!("measure is not a certified laminate ({} violations)", report.violations.len())));
    }
    let tree = nu.certificate().ok_or(Error::Uncertified)?;
    let atoms: Vec<M2> = nu.atoms().iter().map(|a| m2_from(&a.matrix.to_f64())).collect::<Result<_>>()?;
    let linv = atoms.iter().map(|m| sym_eig2(m).0).fold(f64::INFINITY, f64::min);
    if linv <= 0.0 {
        return Err(Error::InvalidInput("atoms must be positive definite".into()));
    }
    let mut sep = f64::INFINITY;
    for i in 0..atoms.len() {
        for j in i + 1..atoms.len() {
            sep = sep.min(op_norm2(&m2_sub(&atoms[i], &atoms[j])));
        }
    }
    if !(params.delta > 0.0 && params.delta < 0.5 * linv.min(sep)) {
        return Err(Error::InvalidInput(format!(
            "delta = {} must lie in (0, {}) for these atoms",
            params.delta,
            0.5 * linv.min(sep)
        )));
    }
    let root = m2_from(&tree.node(0).to_f64())?;
    let depth = tree_depth(tree, 0).max(1);
    let eps = params.eps_bnd / depth as f64;
    let rect = Rect::from_domain(domain);
    let first = Cell {
        vertices: vec![rect.lo, [rect.hi[0], rect.lo[1]], rect.hi, [rect.lo[0], rect.hi[1]]],
        matrix: root,
        offset: [0.0; 2],
        kind: CellKind::Core,
        node: Some(0),
    };
    let (cells, stats) = realize_cell(tree, first, params, eps)?;
    Ok((assemble(domain.clone(), root, cells), stats))
}

pub(crate) fn spec_for<T: Scalar>(tree: &crate::measure::SplitTree<T>, node: usize) -> Result<Option<SplitSpec>> {
    let Some(sp) = tree.split_at(node) else { return Ok(None) };
    Ok(Some(SplitSpec {
        lambda: sp.lambda.to_float(),
        b: m2_from(&tree.node(sp.b).to_f64())?,
        c: m2_from(&tree.node(sp.c).to_f64())?,
        node: Some(node),
        child_b: Some(sp.b),
        child_c: Some(sp.c),
    }))
}

fn realize_cell<T: Scalar>(
    tree: &crate::measure::SplitTree<T>,
    cell: Cell,
    params: &RealizeParams,
    eps: f64,
) -> Result<(Vec<Cell>, Vec<SplitStats>)> {
    let Some(node) = cell.node else { return Ok((vec![cell], vec![])) };
    let Some(spec) = spec_for(tree, node)? else { return Ok((vec![cell], vec![])) };
    let rect = Rect::from_cell(&cell).ok_or_else(|| Error::Unsupported("only rectangular cells can be refined".into()))?;
    let out = split_rect(&spec, rect, cell.offset, params, eps)?;
    let mut stats = vec![out.stats];
    let parts: Vec<Result<(Vec<Cell>, Vec<SplitStats>)>> = out
        .cells
        .into_par_iter()
        .map(|(c, role)| if role == Role::Band { Ok((vec![c], vec![])) } else { realize_cell(tree, c, params, eps) })
        .collect();
    let mut cells = Vec::new();
    for p in parts {
        let (c, s) = p?;
        cells.extend(c);
        stats.extend(s);
    }
    Ok((cells, stats))
}

/// Volume fractions of `{|Df − A_i| < δ}`, by exact summation of cell areas.
#[derive(Clone, Debug)]
pub struct GradientHistogram {
    /// `(reference matrix, δ, fraction)`.
    pub entries: Vec<(Matrix, f64, f64)>,
    pub residual: f64,
}

impl GradientHistogram {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.2).sum::<f64>() + self.residual
    }
}

pub fn gradient_histogram(f: &PiecewiseAffineMap, refs: &[Matrix], delta: f64) -> Result<GradientHistogram> {
    let refs2: Vec<M2> = refs.iter().map(m2_from).collect::<Result<_>>()?;
    let mut sums = vec![Dyadic::zero(); refs.len()];
    let mut total = Dyadic::zero();
    let areas: Vec<(Dyadic, Option<usize>)> = f
        .cells
        .par_iter()
        .map(|c| {
            let hit = refs2.iter().position(|r| op_norm2(&m2_sub(&c.matrix, r)) < delta);
            (c.area_dyadic(), hit)
        })
        .collect();
    for (a, hit) in areas {
        if let Some(k) = hit {
            sums[k] = sums[k].add(&a);
        }
        total = total.add(&a);
    }
    let sums: Vec<Rational> = sums.iter().map(Dyadic::to_rational).collect();
    let total = total.to_rational();
    if total <= Rational::zero() {
        return Err(Error::InvalidInput("map has no area".into()));
    }
    let fr: Vec<f64> = sums.iter().map(|s| (s / total.clone()).to_float()).collect();
    let covered = sums.iter().fold(Rational::zero(), |acc, s| acc + s.clone());
    let residual = ((total.clone() - covered) / total).to_float();
    Ok(GradientHistogram {
        entries: refs.iter().cloned().zip(fr).map(|(m, f)| (m, delta, f)).collect(),
        residual,
    })
}
