//! Hölder norm estimates for differences of piecewise-affine maps, and gluing.
//!
//! For `h = f − g` continuous and piecewise affine on a convex box, `h` is
//! Lipschitz with constant `L = max` over cells, so
//! `|h(x) − h(y)| ≤ min(L|x−y|, 2‖h‖_∞)` and hence
//! `|h|_{C^α} ≤ min(L^α (2‖h‖_∞)^{1−α}, L·diam^{1−α})`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tolerances::BOUNDARY_ABS;

use super::{dist2, m2_sub, op_norm2, BoxDomain, Cell, CellIndex, PiecewiseAffineMap, P2};

const HOLDER_SEED: u64 = 0x5eed_4a1d;
const RANDOM_PAIRS: usize = 10_000;
/// Vertex pairs are exhaustive up to this many vertices, subsampled beyond.
const VERTEX_CAP: usize = 1500;

/// Two-sided estimate of `‖f − g‖_{C^α}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HolderEstimate {
    pub alpha: f64,
    pub seminorm_lower: f64,
    pub seminorm_upper: f64,
    pub sup_lower: f64,
    pub sup_upper: f64,
    pub lipschitz_upper: f64,
}

impl HolderEstimate {
    pub fn lower(&self) -> f64 {
        self.seminorm_lower + self.sup_lower
    }

    pub fn upper(&self) -> f64 {
        self.seminorm_upper + self.sup_upper
    }

    pub fn zero(alpha: f64) -> Self {
        HolderEstimate {
            alpha,
            seminorm_lower: 0.0,
            seminorm_upper: 0.0,
            sup_lower: 0.0,
            sup_upper: 0.0,
            lipschitz_upper: 0.0,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "alpha": self.alpha,
            "seminorm": [self.seminorm_lower, self.seminorm_upper],
            "sup": [self.sup_lower, self.sup_upper],
            "norm": [self.lower(), self.upper()],
            "lipschitz_upper": self.lipschitz_upper,
        })
    }
}

/// Seminorm bound from a Lipschitz constant, a sup bound and a diameter.
pub fn seminorm_bound(lip: f64, sup: f64, diam: f64, alpha: f64) -> f64 {
    if lip == 0.0 || sup == 0.0 {
        return 0.0;
    }
    (lip.powf(alpha) * (2.0 * sup).powf(1.0 - alpha)).min(lip * diam.powf(1.0 - alpha))
}

/// Bound for a difference supported on pairwise disjoint patches with
/// per-patch seminorm bounds `s_i`: `2·max s_i`.
pub fn assemble_patches(seminorms: &[f64]) -> f64 {
    2.0 * seminorms.iter().cloned().fold(0.0, f64::max)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput("alpha must lie in (0, 1)".into()))
    }
}

fn same_domain(a: &BoxDomain, b: &BoxDomain) -> bool {
    a.n() == b.n()
        && a.lower.iter().zip(&b.lower).all(|(x, y)| (x - y).abs() <= BOUNDARY_ABS)
        && a.upper.iter().zip(&b.upper).all(|(x, y)| (x - y).abs() <= BOUNDARY_ABS)
}

/// Per-cell bounds `(Lip, sup)` of `f − g` on a cell of `f`.
fn cell_bounds(c: &Cell, g: &PiecewiseAffineMap, gi: &CellIndex) -> Result<(f64, f64)> {
    let host = gi.locate(&g.cells, &c.centroid());
    let exact_host = host.filter(|&k| c.vertices.iter().all(|v| g.cells[k].contains(v, 1e-12)));
    let diffs: Vec<f64> = c
        .vertices
        .iter()
        .map(|v| {
            let gv = match exact_host {
                Some(k) => g.cells[k].eval(v),
                None => gi
                    .locate(&g.cells, v)
                    .map(|k| g.cells[k].eval(v))
                    .ok_or_else(|| Error::Domain(format!("point {v:?} outside the second map")))?,
            };
            Ok(dist2(&c.eval(v), &gv))
        })
        .collect::<Result<_>>()?;
    let vmax = diffs.iter().cloned().fold(0.0, f64::max);
    match exact_host {
        // Affine difference on a convex cell: maximum at a vertex.
        Some(k) => Ok((op_norm2(&m2_sub(&c.matrix, &g.cells[k].matrix)), vmax)),
        None => {
            let (lo, hi) = c.bbox();
            let lip_g = gi
                .overlapping(&lo, &hi)
                .into_iter()
                .map(|k| &g.cells[k])
                .filter(|gc| {
                    let (a, b) = gc.bbox();
                    a[0] <= hi[0] && a[1] <= hi[1] && b[0] >= lo[0] && b[1] >= lo[1]
                })
                .map(|gc| op_norm2(&gc.matrix))
                .fold(0.0, f64::max);
            let lip = op_norm2(&c.matrix) + lip_g;
            Ok((lip, vmax + lip * c.diameter()))
        }
    }
}

/// Sampled lower bounds `(seminorm, sup)` of `f − g`.
fn sampled_lower(
    f: &PiecewiseAffineMap,
    fi: &CellIndex,
    g: &PiecewiseAffineMap,
    gi: &CellIndex,
    alpha: f64,
    seed: u64,
) -> (f64, f64) {
    let h = |x: &P2| -> Option<P2> {
        let a = fi.locate(&f.cells, x).map(|k| f.cells[k].eval(x))?;
        let b = gi.locate(&g.cells, x).map(|k| g.cells[k].eval(x))?;
        Some([a[0] - b[0], a[1] - b[1]])
    };
    let mut verts: Vec<P2> = f.cells.iter().flat_map(|c| c.vertices.iter().cloned()).collect();
    verts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    verts.dedup();
    if verts.len() > VERTEX_CAP {
        let stride = verts.len() as f64 / VERTEX_CAP as f64;
        verts = (0..VERTEX_CAP).map(|i| verts[(i as f64 * stride) as usize]).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = [f.domain.lower[0], f.domain.lower[1]];
    let hi = [f.domain.upper[0], f.domain.upper[1]];
    let mut pick = || [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])];
    let random: Vec<(P2, P2)> = (0..RANDOM_PAIRS)
        .map(|_| {
            let x = pick();
            let y = pick();
            (x, y)
        })
        .collect();
    let hv: Vec<(P2, P2)> = verts.iter().filter_map(|x| h(x).map(|v| (*x, v))).collect();
    let quotient = |x: &P2, hx: &P2, y: &P2, hy: &P2| {
        let d = dist2(x, y);
        if d > 0.0 {
            dist2(hx, hy) / d.powf(alpha)
        } else {
            0.0
        }
    };
    let semi_v = hv
        .par_iter()
        .enumerate()
        .map(|(i, (x, hx))| hv[i + 1..].iter().map(|(y, hy)| quotient(x, hx, y, hy)).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max);
    let (semi_r, sup_r) = random
        .par_iter()
        .map(|(x, y)| match (h(x), h(y)) {
            (Some(hx), Some(hy)) => (quotient(x, &hx, y, &hy), dist2(&hx, &[0.0; 2]).max(dist2(&hy, &[0.0; 2]))),
            _ => (0.0, 0.0),
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    let sup_v = hv.iter().map(|(_, v)| dist2(v, &[0.0; 2])).fold(0.0, f64::max);
    (semi_v.max(semi_r), sup_v.max(sup_r))
}

/// Certified upper and sampled lower estimates of `‖f − g‖_{C^α}`.
pub fn holder_seminorm_estimate(f: &PiecewiseAffineMap, g: &PiecewiseAffineMap, alpha: f64) -> Result<HolderEstimate> {
    holder_seminorm_estimate_seeded(f, g, alpha, HOLDER_SEED)
}

pub fn holder_seminorm_estimate_seeded(
    f: &PiecewiseAffineMap,
    g: &PiecewiseAffineMap,
    alpha: f64,
    seed: u64,
) -> Result<HolderEstimate> {
    check_alpha(alpha)?;
    if f.domain.n() != g.domain.n() {
        return Err(Error::DimensionMismatch { expected: f.domain.n(), got: g.domain.n() });
    }
    if !same_domain(&f.domain, &g.domain) {
        return Err(Error::InvalidInput("maps live on different domains".into()));
    }
    let (fi, gi) = (f.index(), g.index());
    let bounds: Vec<(f64, f64)> = f.cells.par_iter().map(|c| cell_bounds(c, g, &gi)).collect::<Result<_>>()?;
    let lip = bounds.iter().map(|b| b.0).fold(0.0, f64::max);
    let sup = bounds.iter().map(|b| b.1).fold(0.0, f64::max);
    let (semi_lo, sup_lo) = sampled_lower(f, &fi, g, &gi, alpha, seed);
    Ok(HolderEstimate {
        alpha,
        seminorm_lower: semi_lo,
        seminorm_upper: seminorm_bound(lip, sup, f.domain.diameter(), alpha).max(semi_lo),
        sup_lower: sup_lo,
        sup_upper: sup.max(sup_lo),
        lipschitz_upper: lip,
    })
}

/// A replacement map on a sub-box.
#[derive(Clone, Debug)]
pub struct Patch {
    pub domain: BoxDomain,
    pub map: PiecewiseAffineMap,
}

#[derive(Clone, Debug)]
pub struct GlueReport {
    pub patches: usize,
    pub removed_cells: usize,
    pub added_cells: usize,
    pub max_trace_residual: f64,
    /// Per-patch estimates of `‖g_i − f‖_{C^α}` on the patch.
    pub patch_norms: Vec<HolderEstimate>,
    /// `2·max_i` of the patch upper bounds.
    pub assembled_bound: f64,
    /// Direct estimate of the glued map against the base.
    pub direct: HolderEstimate,
}

impl GlueReport {
    /// The sampled lower bound of the glued increment must not exceed the
    /// assembled upper bound.
    pub fn consistent(&self) -> bool {
        self.direct.lower() <= self.assembled_bound + 1e-12
    }
}

fn inside(dom: &BoxDomain, c: &Cell, tol: f64) -> bool {
    c.vertices.iter().all(|v| dom.contains(v, tol))
}

fn disjoint(a: &BoxDomain, b: &BoxDomain) -> bool {
    (0..2).any(|k| a.upper[k] <= b.lower[k] || b.upper[k] <= a.lower[k])
}

/// Replaces the base map on each patch domain. Patch domains must be unions of
/// base cells and pairwise disjoint, and each patch must agree with the base
/// on its boundary.
pub fn glue(base: &PiecewiseAffineMap, patches: &[Patch], alpha: f64) -> Result<(PiecewiseAffineMap, GlueReport)> {
    check_alpha(alpha)?;
    for (i, p) in patches.iter().enumerate() {
        if !same_domain(&p.domain, &p.map.domain) {
            return Err(Error::InvalidInput(format!("patch {i}: map domain differs from patch domain")));
        }
        for (j, q) in patches.iter().enumerate().skip(i + 1) {
            if !disjoint(&p.domain, &q.domain) {
                return Err(Error::InvalidInput(format!("patches {i} and {j} overlap")));
            }
        }
    }
    let bi = base.index();
    let mut owner = vec![None; base.cells.len()];
    for (k, c) in base.cells.iter().enumerate() {
        for (i, p) in patches.iter().enumerate() {
            if inside(&p.domain, c, 1e-12) {
                owner[k] = Some(i);
            } else if p.domain.contains(&c.centroid(), 0.0) {
                return Err(Error::InvalidInput(format!("patch {i} cuts base cell {k}")));
            }
        }
    }
    let mut max_trace: f64 = 0.0;
    let mut patch_norms = Vec::with_capacity(patches.len());
    for (i, p) in patches.iter().enumerate() {
        let pd = &p.domain;
        for c in &p.map.cells {
            let n = c.vertices.len();
            for e in 0..n {
                let (a, b) = (c.vertices[e], c.vertices[(e + 1) % n]);
                if !(pd.on_boundary(&a, BOUNDARY_ABS) && pd.on_boundary(&b, BOUNDARY_ABS)) {
                    continue;
                }
                for x in [a, b] {
                    let want = bi
                        .locate(&base.cells, &x)
                        .map(|k| base.cells[k].eval(&x))
                        .ok_or_else(|| Error::Domain(format!("patch {i} vertex {x:?} outside the base domain")))?;
                    let r = dist2(&c.eval(&x), &want);
                    max_trace = max_trace.max(r);
                    if r > BOUNDARY_ABS {
                        return Err(Error::InvalidInput(format!(
                            "patch {i}: trace mismatch {r:.3e} on boundary facet [{a:?}, {b:?}]"
                        )));
                    }
                }
            }
        }
        let restricted = PiecewiseAffineMap {
            domain: pd.clone(),
            cells: base.cells.iter().zip(&owner).filter(|(_, o)| **o == Some(i)).map(|(c, _)| c.clone()).collect(),
            boundary_matrix: base.boundary_matrix,
            boundary_offset: base.boundary_offset,
        };
        patch_norms.push(holder_seminorm_estimate(&p.map, &restricted, alpha)?);
    }
    let mut cells: Vec<Cell> = base.cells.iter().zip(&owner).filter(|(_, o)| o.is_none()).map(|(c, _)| c.clone()).collect();
    let removed = base.cells.len() - cells.len();
    let mut added = 0;
    for p in patches {
        added += p.map.cells.len();
        cells.extend(p.map.cells.iter().cloned());
    }
    let glued = PiecewiseAffineMap {
        domain: base.domain.clone(),
        cells,
        boundary_matrix: base.boundary_matrix,
        boundary_offset: base.boundary_offset,
    };
    let direct = if patches.is_empty() { HolderEstimate::zero(alpha) } else { holder_seminorm_estimate(&glued, base, alpha)? };
    let sup = patch_norms.iter().map(|e| e.sup_upper).fold(0.0, f64::max);
    let semi = assemble_patches(&patch_norms.iter().map(|e| e.seminorm_upper).collect::<Vec<_>>());
    let report = GlueReport {
        patches: patches.len(),
        removed_cells: removed,
        added_cells: added,
        max_trace_residual: max_trace,
        assembled_bound: semi + sup,
        patch_norms,
        direct,
    };
    Ok((glued, report))
}
