//! Truncated stage constructions: refinement rounds, bridge steps, the stage
//! iteration and gradient statistics.
//!
//! Every construction first builds an exact split certificate, then realizes
//! it on cells in order of decreasing area until the cell budget is spent.
//! Cells that could not be refined, transition bands, and leaves that missed
//! the target set at the truncation depth form the flagged residual.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use num::{One, Zero};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::lamination::{bridge_split, lamlem_split, seed_split, SEED_TOP};
use crate::measure::SplitTree;
use crate::numeric::{rat, ExactMatrix, Rational, Scalar};
use crate::pamap::realize::{spec_for, split_cost, split_rect, Rect, Role, SplitSpec};
use crate::pamap::{
    holder_seminorm_estimate_seeded, m2_from, op_norm2, sym_eig2, BandRule, BoxDomain, Cell, CellKind, Dyadic,
    HolderEstimate, PiecewiseAffineMap, RealizeParams, M2,
};
use crate::target_sets::{in_e_j, in_e_j_spectrum, nearest_e_a, psd_spectrum, r_small};

/// Parameters of a truncated stage construction.
#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub delta: f64,
    pub j1: u32,
    pub stages: usize,
    pub k_max: usize,
    /// Maximum number of cells of the final map.
    pub budget: usize,
    /// Transition band fraction allowed per split.
    pub band_fraction: f64,
    pub seed: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            n: 2,
            m: 2,
            alpha: 0.25,
            delta: 0.5,
            j1: 2,
            stages: 3,
            k_max: 4,
            budget: 1_000_000,
            band_fraction: 0.2,
            seed: 7,
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        crate::numeric::check_dim(self.n)?;
        if self.m < 2 || self.m > self.n {
            return Err(Error::InvalidInput(format!("need 2 <= m <= n (n={}, m={})", self.n, self.m)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput("alpha must lie in (0, 1)".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidInput("delta must be positive".into()));
        }
        if self.j1 < 2 {
            return Err(Error::InvalidInput("j1 must be at least 2".into()));
        }
        if self.stages < 1 || self.k_max < 1 {
            return Err(Error::InvalidInput("stages and k_max must be at least 1".into()));
        }
        if self.budget < 1 {
            return Err(Error::InvalidInput("budget must be positive".into()));
        }
        if !(self.band_fraction > 0.0 && self.band_fraction < 1.0) {
            return Err(Error::InvalidInput("band_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Target index of stage `j` (1-based): `j₁ + (j−1)m`.
    pub fn target_j(&self, stage: usize) -> u32 {
        self.j1 + (stage as u32 - 1) * self.m as u32
    }

    pub fn to_json(&self) -> Value {
        json!({
            "n": self.n,
            "m": self.m,
            "alpha": self.alpha,
            "delta": self.delta,
            "j1": self.j1,
            "stages": self.stages,
            "k_max": self.k_max,
            "budget": self.budget,
            "band_fraction": self.band_fraction,
            "seed": self.seed,
        })
    }
}

// ---------------------------------------------------------------------------
// Exact certificates

fn leaves(tree: &SplitTree<Rational>) -> Vec<usize> {
    let seen = tree.reachable();
    (0..tree.nodes().len()).filter(|&i| seen[i] && tree.split_at(i).is_none()).collect()
}

fn top_eigenvalue(a: &ExactMatrix) -> Result<Rational> {
    psd_spectrum(a)?.pop().ok_or_else(|| Error::InvalidInput("empty matrix".into()))
}

/// Applies up to `rounds` refinement rounds to every leaf outside `E_j`,
/// starting at level `R = r0`. Returns the number of rounds performed.
fn grow_rounds(tree: &mut SplitTree<Rational>, j: u32, r0: &Rational, m: usize, rounds: usize) -> Result<usize> {
    let n = tree.root().n();
    let mut r = r0.clone();
    for done in 0..rounds {
        let mut todo = Vec::new();
        for l in leaves(tree) {
            let sig = psd_spectrum(tree.node(l))?;
            if in_e_j_spectrum(&sig, j, m) {
                continue;
            }
            let (a, d) = nearest_e_a(&sig, j, &r, m);
            if d < r_small(j, &r, m, n)? {
                todo.push((l, a));
            }
        }
        if todo.is_empty() {
            return Ok(done);
        }
        for (l, a) in todo {
            let lam = lamlem_split(&tree.node(l).clone(), j, &r, a, m)?;
            let sub = lam.measure.certificate().ok_or(Error::Uncertified)?;
            tree.graft(l, sub)?;
        }
        r += Rational::one();
    }
    Ok(rounds)
}

/// Seed split of `I` followed by `K_max − 1` refinement rounds at `j₁`.
pub fn seed_tree(n: usize, m: usize, j1: u32, k_max: usize) -> Result<SplitTree<Rational>> {
    let lam = seed_split::<Rational>(n, m, j1)?;
    let mut tree = lam.measure.certificate().ok_or(Error::Uncertified)?.clone();
    grow_rounds(&mut tree, j1, &rat(SEED_TOP, 1), m, k_max.saturating_sub(1))?;
    Ok(tree)
}

/// Refinement rounds from `F` near `⋃_a E^a_{j,|F|}`; `K_max = 1` leaves `F`.
pub fn tau_tree(f: &ExactMatrix, j: u32, m: usize, k_max: usize) -> Result<SplitTree<Rational>> {
    let n = f.n();
    let r = top_eigenvalue(f)?;
    let sig = psd_spectrum(f)?;
    let (_, d) = nearest_e_a(&sig, j, &r, m);
    if d >= r_small(j, &r, m, n)? {
        return Err(Error::Domain(format!(
            "distance {} to the step sets is not below r_small",
            d.to_float()
        )));
    }
    let mut tree = SplitTree::new(f.clone());
    grow_rounds(&mut tree, j, &r, m, k_max.saturating_sub(1))?;
    Ok(tree)
}

/// Bridge split of `A ∈ E_j` followed by `K_max − 1` rounds at `j + m`.
pub fn h_tree(a: &ExactMatrix, j: u32, m: usize, k_max: usize) -> Result<SplitTree<Rational>> {
    let lam = bridge_split(a, j, m)?;
    let mut tree = lam.measure.certificate().ok_or(Error::Uncertified)?.clone();
    let r = top_eigenvalue(a)?;
    grow_rounds(&mut tree, j + m as u32, &r, m, k_max.saturating_sub(1))?;
    Ok(tree)
}

/// Exact masses of the final leaves that lie in `E_j` and outside it.
pub fn leaf_split_masses(tree: &SplitTree<Rational>, j: u32, m: usize) -> Result<(Rational, Rational)> {
    let mut inside = Rational::zero();
    let mut outside = Rational::zero();
    for (l, w) in tree.leaf_masses()? {
        if in_e_j(tree.node(l), j, m)? {
            inside += w;
        } else {
            outside += w;
        }
    }
    Ok((inside, outside))
}

/// Contraction diagnostic for the refinement recursion: exact residual mass
/// after `k = 1..=k_max` rounds, and the first `k` at which it decreases.
pub fn k0_diagnostic(n: usize, m: usize, j: u32, k_max: usize) -> Result<(Vec<Rational>, Option<usize>)> {
    let mut masses = Vec::new();
    for k in 1..=k_max {
        let tree = seed_tree(n, m, j, k)?;
        masses.push(leaf_split_masses(&tree, j, m)?.1);
    }
    let k0 = (1..masses.len()).find(|&i| masses[i] < masses[i - 1]).map(|i| i + 1);
    Ok((masses, k0))
}

// ---------------------------------------------------------------------------
// Budgeted realization

#[derive(Clone, Debug)]
struct PCell {
    cell: Cell,
    tree: Option<u32>,
}

struct Forest {
    trees: Vec<SplitTree<Rational>>,
    specs: HashMap<(u32, usize), Option<SplitSpec>>,
    members: HashMap<(u32, usize, u32), bool>,
    /// Band ratio accepted by a previous realization of the node, or `None`
    /// when the band rule failed at the largest ratio.
    ratios: HashMap<(u32, usize), Option<f64>>,
}

impl Forest {
    fn new() -> Self {
        Forest { trees: Vec::new(), specs: HashMap::new(), members: HashMap::new(), ratios: HashMap::new() }
    }

    fn in_target(&mut self, tree: u32, node: usize, j: u32, m: usize) -> Result<bool> {
        if let Some(&b) = self.members.get(&(tree, node, j)) {
            return Ok(b);
        }
        let b = in_e_j(self.matrix(tree, node), j, m)?;
        self.members.insert((tree, node, j), b);
        Ok(b)
    }

    fn push(&mut self, t: SplitTree<Rational>) -> u32 {
        self.trees.push(t);
        self.trees.len() as u32 - 1
    }

    fn spec(&mut self, tree: u32, node: usize) -> Result<Option<SplitSpec>> {
        if let Some(s) = self.specs.get(&(tree, node)) {
            return Ok(s.clone());
        }
        let s = spec_for(&self.trees[tree as usize], node)?;
        self.specs.insert((tree, node), s.clone());
        Ok(s)
    }

    fn matrix(&self, tree: u32, node: usize) -> &ExactMatrix {
        self.trees[tree as usize].node(node)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefineStats {
    pub splits: usize,
    pub unrefined: usize,
    pub failed: usize,
    pub budget_exhausted: bool,
    pub max_ratio: f64,
    pub min_band_eigenvalue: f64,
}

impl RefineStats {
    fn to_json(&self) -> Value {
        json!({
            "splits": self.splits,
            "unrefined": self.unrefined,
            "failed": self.failed,
            "budget_exhausted": self.budget_exhausted,
            "max_band_ratio": self.max_ratio,
            "min_band_eigenvalue": finite_or_null(self.min_band_eigenvalue),
        })
    }
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

#[derive(PartialEq)]
struct Pending {
    area: f64,
    seq: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, o: &Self) -> Ordering {
        self.area.total_cmp(&o.area).then(o.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

const PROBE_CELLS: usize = 2_000_000;

/// Smallest band ratio accepted for `spec` on the unit square.
fn probe_ratio(spec: &SplitSpec, params: &RealizeParams) -> Option<f64> {
    let unit = Rect { lo: [0.0, 0.0], hi: [1.0, 1.0] };
    let p = RealizeParams { max_period: f64::INFINITY, max_cells: PROBE_CELLS, ..params.clone() };
    split_rect(spec, unit, [0.0, 0.0], &p, p.eps_bnd).ok().map(|o| o.stats.ratio)
}

/// Realizes pending splits, largest cells first, keeping at most `limit`
/// cells. Cells that do not fit are marked unrefined.
fn refine(cells: Vec<PCell>, forest: &mut Forest, limit: usize, params: &RealizeParams) -> Result<(Vec<PCell>, RefineStats)> {
    let mut slots: Vec<Option<PCell>> = cells.into_iter().map(Some).collect();
    let mut live = slots.len();
    let mut heap = BinaryHeap::new();
    let mut stats = RefineStats { min_band_eigenvalue: f64::INFINITY, ..Default::default() };
    let pending = |c: &PCell, forest: &Forest| {
        c.cell.kind == CellKind::Core
            && c.tree.is_some_and(|t| c.cell.node.is_some_and(|n| forest.trees[t as usize].split_at(n).is_some()))
    };
    for (i, s) in slots.iter().enumerate() {
        if let Some(c) = s {
            if pending(c, forest) {
                heap.push(Pending { area: c.cell.area(), seq: i });
            }
        }
    }
    while let Some(Pending { seq, .. }) = heap.pop() {
        let Some(pc) = slots[seq].take() else { continue };
        let (tree, node) = (pc.tree.unwrap_or(0), pc.cell.node.unwrap_or(0));
        let spec = forest.spec(tree, node)?.ok_or_else(|| Error::InvalidInput("pending cell without split".into()))?;
        let rect = Rect::from_cell(&pc.cell);
        let room = limit.saturating_sub(live - 1);
        // The band test is scale invariant: probe it once per node on the
        // unit square and start every cell at the accepted ratio.
        let hint = match forest.ratios.get(&(tree, node)) {
            Some(&h) => Some(h),
            None => {
                let h = probe_ratio(&spec, params);
                forest.ratios.insert((tree, node), h);
                Some(h)
            }
        };
        let p = RealizeParams { max_cells: room, ratio: hint.flatten().unwrap_or(params.ratio), ..params.clone() };
        let out = match (hint, rect) {
            (Some(None), _) => Err(Error::Domain("transition band rejected for this split".into())),
            (_, None) => Err(Error::Unsupported("cell is not an axis rectangle".into())),
            (_, Some(r)) if split_cost(&spec, r, &p, p.eps_bnd) > room => {
                Err(Error::SizeGuard("cost estimate exceeds budget".into()))
            }
            (_, Some(r)) => split_rect(&spec, r, pc.cell.offset, &p, p.eps_bnd),
        };
        let out = match out {
            Ok(out) => out,
            Err(e) => {
                match e {
                    Error::SizeGuard(_) => stats.budget_exhausted = true,
                    _ => stats.failed += 1,
                }
                stats.unrefined += 1;
                let mut c = pc;
                c.cell.kind = CellKind::Unrefined;
                slots[seq] = Some(c);
                continue;
            }
        };
        stats.splits += 1;
        stats.max_ratio = stats.max_ratio.max(out.stats.ratio);
        stats.min_band_eigenvalue = stats.min_band_eigenvalue.min(out.stats.band_min_eigenvalue);
        live = live - 1 + out.cells.len();
        for (cell, role) in out.cells {
            let c = PCell { tree: if role == Role::Band { None } else { pc.tree }, cell };
            let is_pending = pending(&c, forest);
            let area = c.cell.area();
            slots.push(Some(c));
            if is_pending {
                heap.push(Pending { area, seq: slots.len() - 1 });
            }
        }
    }
    Ok((slots.into_iter().flatten().collect(), stats))
}

fn root_cell(domain: &BoxDomain, a: M2) -> Cell {
    let c = domain.corners();
    Cell { vertices: c, matrix: a, offset: [0.0; 2], kind: CellKind::Core, node: Some(0) }
}

fn to_map(domain: &BoxDomain, boundary: M2, cells: &[PCell]) -> PiecewiseAffineMap {
    PiecewiseAffineMap {
        domain: domain.clone(),
        cells: cells.iter().map(|c| c.cell.clone()).collect(),
        boundary_matrix: boundary,
        boundary_offset: [0.0; 2],
    }
}

/// Period cap making the increment estimate of a split with gradient jumps up
/// to `lip` fall below `target`: `L^α(2Lp)^{1−α} + Lp ≤ target`.
fn period_cap(target: f64, lip: f64, alpha: f64) -> f64 {
    if lip <= 0.0 {
        return f64::INFINITY;
    }
    let q = (target / (lip.powf(alpha) * 2f64.powf(1.0 - alpha))).powf(1.0 / (1.0 - alpha));
    0.5 * q.min(target) / lip
}

fn max_node_norm(tree: &SplitTree<Rational>) -> f64 {
    tree.nodes().iter().map(|m| op_norm2(&m2_from(&m.to_f64()).unwrap_or([[0.0; 2]; 2]))).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Statistics

/// Cell classes used for volume bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Class {
    Member,
    Truncated,
    Unrefined,
    Transition,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeBook {
    pub member: f64,
    pub truncated: f64,
    pub unrefined: f64,
    pub transition: f64,
    /// `|Σ classes − |Ω|| / |Ω|` in exact arithmetic.
    pub closure_error: f64,
}

impl VolumeBook {
    pub fn residual(&self) -> f64 {
        self.truncated + self.unrefined + self.transition
    }

    fn to_json(&self) -> Value {
        json!({
            "member": self.member,
            "truncated": self.truncated,
            "unrefined": self.unrefined,
            "transition": self.transition,
            "residual": self.residual(),
            "closure_error": self.closure_error,
        })
    }
}

pub const TAIL_T_MIN: u32 = 2;
pub const TAIL_T_MAX: u32 = 32;
pub const P_GRID: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    pub target_j: u32,
    pub cells: usize,
    pub refine: RefineStats,
    /// Volume fractions of the domain.
    pub volumes: VolumeBook,
    /// Fraction of the non-residual volume whose gradient passes the
    /// target-set test.
    pub membership: f64,
    pub increment: Option<HolderEstimate>,
    pub increment_threshold: f64,
    /// `∫|Df_j − Df_{j−1}| / |Ω|`.
    pub l1_increment: f64,
    pub boundary_residual: f64,
    /// `(t, fraction{|Df| > t})` for integer `t` in `[TAIL_T_MIN, TAIL_T_MAX]`.
    pub tail: Vec<(u32, f64)>,
    pub tail_slope: Option<f64>,
    /// `max_t t^m·fraction{|Df| > t}`.
    pub tail_constant: f64,
    /// `(p, ∫|Df|^p / |Ω|)`.
    pub lp: Vec<(f64, f64)>,
    /// `(k, fraction)` with `2^k ≤ σ_min < 2^{k+1}`.
    pub min_singular_histogram: Vec<(i32, f64)>,
    pub barycenter: M2,
    pub max_gradient_norm: f64,
    pub min_eigenvalue: f64,
}

impl StageReport {
    pub fn to_json(&self) -> Value {
        json!({
            "stage": self.stage,
            "target_j": self.target_j,
            "cells": self.cells,
            "refine": self.refine.to_json(),
            "volumes": self.volumes.to_json(),
            "membership_outside_residual": self.membership,
            "holder_increment": self.increment.map(|e| e.to_json()),
            "holder_threshold": self.increment_threshold,
            "l1_increment": self.l1_increment,
            "boundary_residual": self.boundary_residual,
            "tail": self.tail.iter().map(|(t, f)| json!([t, f])).collect::<Vec<_>>(),
            "tail_slope": self.tail_slope,
            "tail_constant": self.tail_constant,
            "lp": self.lp.iter().map(|(p, s)| json!([p, s])).collect::<Vec<_>>(),
            "min_singular_histogram": self.min_singular_histogram.iter().map(|(k, f)| json!([k, f])).collect::<Vec<_>>(),
            "barycenter": self.barycenter,
            "max_gradient_norm": self.max_gradient_norm,
            "min_eigenvalue": self.min_eigenvalue,
        })
    }

    /// Tail table as CSV.
    pub fn tail_csv(&self) -> String {
        let mut s = String::from("t,fraction\n");
        for (t, f) in &self.tail {
            s.push_str(&format!("{t},{f}\n"));
        }
        s
    }
}

/// Least-squares slope of `log y` against `log x` over points with `y > 0`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.ln(), p.1.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Tail fractions `fraction{|Df| > t}` over integer `t ∈ [t_min, t_max]`.
pub fn tail_profile(f: &PiecewiseAffineMap, t_min: u32, t_max: u32) -> Vec<(u32, f64)> {
    let total: f64 = f.cells.iter().map(Cell::area).sum();
    let mut by_norm: Vec<(f64, f64)> = f.cells.iter().map(|c| (op_norm2(&c.matrix), c.area())).collect();
    by_norm.sort_by(|a, b| b.0.total_cmp(&a.0));
    (t_min..=t_max)
        .map(|t| {
            let s: f64 = by_norm.iter().take_while(|(n, _)| *n > t as f64).fold(0.0, |s, (_, a)| s + a);
            (t, s / total)
        })
        .collect()
}

/// `∫|Df|^p / |Ω|` for each `p`.
pub fn lp_sums(f: &PiecewiseAffineMap, p_grid: &[f64]) -> Vec<(f64, f64)> {
    let total: f64 = f.cells.iter().map(Cell::area).sum();
    p_grid
        .iter()
        .map(|&p| (p, f.cells.iter().map(|c| c.area() * op_norm2(&c.matrix).powf(p)).sum::<f64>() / total))
        .collect()
}

fn min_singular(m: &M2) -> f64 {
    // σ_min² is the smaller eigenvalue of MᵀM.
    let mtm = [
        [m[0][0] * m[0][0] + m[1][0] * m[1][0], m[0][0] * m[0][1] + m[1][0] * m[1][1]],
        [m[0][1] * m[0][0] + m[1][1] * m[1][0], m[0][1] * m[0][1] + m[1][1] * m[1][1]],
    ];
    sym_eig2(&mtm).0.max(0.0).sqrt()
}

fn classify(pc: &PCell, forest: &mut Forest, target_j: u32, m: usize) -> Result<Class> {
    Ok(match pc.cell.kind {
        CellKind::Transition => Class::Transition,
        CellKind::Unrefined => Class::Unrefined,
        CellKind::Core => match (pc.tree, pc.cell.node) {
            (Some(t), Some(n)) if forest.trees[t as usize].split_at(n).is_none() => {
                if forest.in_target(t, n, target_j, m)? {
                    Class::Member
                } else {
                    Class::Truncated
                }
            }
            _ => Class::Unrefined,
        },
    })
}

fn stage_report(
    stage: usize,
    target_j: u32,
    m: usize,
    cells: &[PCell],
    forest: &mut Forest,
    map: &PiecewiseAffineMap,
    prev: Option<&PiecewiseAffineMap>,
    refine: RefineStats,
    alpha: f64,
    delta: f64,
    seed: u64,
) -> Result<StageReport> {
    let mut sums = [Dyadic::zero(), Dyadic::zero(), Dyadic::zero(), Dyadic::zero()];
    let mut member_ok = Dyadic::zero();
    for pc in cells {
        let class = classify(pc, forest, target_j, m)?;
        let a = pc.cell.area_dyadic();
        if class == Class::Member && crate::target_sets::in_e_j(&crate::pamap::m2_to_matrix(&pc.cell.matrix), target_j, m)? {
            member_ok = member_ok.add(&a);
        }
        let k = class as usize;
        sums[k] = sums[k].add(&a);
    }
    let total = Dyadic::sum(sums.iter().cloned()).to_rational();
    let vol = Rational::from_float(map.domain.volume()).unwrap_or_default();
    let frac = |d: &Dyadic| (d.to_rational() / vol.clone()).to_float();
    let volumes = VolumeBook {
        member: frac(&sums[0]),
        truncated: frac(&sums[1]),
        unrefined: frac(&sums[2]),
        transition: frac(&sums[3]),
        closure_error: ((total - vol.clone()) / vol.clone()).to_float().abs(),
    };
    let membership = if sums[0].to_rational().is_zero() {
        1.0
    } else {
        (member_ok.to_rational() / sums[0].to_rational()).to_float()
    };
    let (increment, l1_increment) = match prev {
        Some(p) => {
            let est = holder_seminorm_estimate_seeded(map, p, alpha, seed)?;
            (Some(est), l1_distance(map, p))
        }
        None => (None, 0.0),
    };
    let tail = tail_profile(map, TAIL_T_MIN, TAIL_T_MAX);
    let tail_slope = loglog_slope(&tail.iter().map(|&(t, f)| (t as f64, f)).collect::<Vec<_>>());
    let tail_constant = tail.iter().map(|&(t, f)| (t as f64).powi(m as i32) * f).fold(0.0, f64::max);
    let area: f64 = map.cells.iter().map(Cell::area).sum();
    let mut hist: std::collections::BTreeMap<i32, f64> = Default::default();
    let mut bary = [[0.0; 2]; 2];
    for c in &map.cells {
        let a = c.area();
        let s = min_singular(&c.matrix);
        let k = if s > 0.0 { s.log2().floor() as i32 } else { i32::MIN };
        *hist.entry(k).or_default() += a / area;
        for (r, row) in bary.iter_mut().enumerate() {
            for (q, v) in row.iter_mut().enumerate() {
                *v += a * c.matrix[r][q] / area;
            }
        }
    }
    Ok(StageReport {
        stage,
        target_j,
        cells: map.cells.len(),
        refine,
        volumes,
        membership,
        increment,
        increment_threshold: delta * 0.5f64.powi(stage as i32),
        l1_increment,
        boundary_residual: map.boundary_residual(),
        tail,
        tail_slope,
        tail_constant,
        lp: lp_sums(map, &P_GRID),
        min_singular_histogram: hist.into_iter().collect(),
        barycenter: bary,
        max_gradient_norm: map.max_gradient_norm(),
        min_eigenvalue: map.min_eigenvalue(),
    })
}

/// `∫|Df − Dg| / |Ω|` for a refinement `f` of `g`.
fn l1_distance(f: &PiecewiseAffineMap, g: &PiecewiseAffineMap) -> f64 {
    let gi = g.index();
    let total: f64 = f.cells.iter().map(Cell::area).sum();
    f.cells
        .iter()
        .map(|c| match gi.locate(&g.cells, &c.centroid()) {
            Some(k) => c.area() * op_norm2(&crate::pamap::m2_sub(&c.matrix, &g.cells[k].matrix)),
            None => 0.0,
        })
        .sum::<f64>()
        / total
}

fn stage_params(cfg: &StageConfig, target: f64, lip: f64) -> RealizeParams {
    let mut p = RealizeParams::new(f64::INFINITY, cfg.band_fraction);
    p.band_rule = BandRule::PositiveDefinite(0.5);
    p.weighted_band = false;
    p.ratio = 2.0;
    p.max_ratio = 64.0;
    p.max_period = period_cap(target, lip, cfg.alpha);
    p
}

// ---------------------------------------------------------------------------
// Entry points

/// Output of a single-cell construction.
#[derive(Clone, Debug)]
pub struct BuildOutput {
    pub map: PiecewiseAffineMap,
    pub report: StageReport,
    pub tree: SplitTree<Rational>,
}

fn build_single(
    tree: SplitTree<Rational>,
    domain: &BoxDomain,
    target_j: u32,
    m: usize,
    alpha: f64,
    delta: f64,
    budget: usize,
    band_fraction: f64,
) -> Result<BuildOutput> {
    domain.require_planar()?;
    let root = m2_from(&tree.node(0).to_f64())?;
    let cfg = StageConfig { alpha, delta, budget, band_fraction, ..StageConfig::default() };
    let params = stage_params(&cfg, delta, 2.0 * max_node_norm(&tree));
    let mut forest = Forest::new();
    let t = forest.push(tree);
    let start = vec![PCell { cell: root_cell(domain, root), tree: Some(t) }];
    let (cells, stats) = refine(start, &mut forest, budget, &params)?;
    let map = to_map(domain, root, &cells);
    let base = PiecewiseAffineMap { cells: vec![root_cell(domain, root)], ..map.clone() };
    let mut report = stage_report(1, target_j, m, &cells, &mut forest, &map, Some(&base), stats, alpha, delta, 0)?;
    report.increment_threshold = delta;
    let tree = forest.trees.swap_remove(0);
    Ok(BuildOutput { map, report, tree })
}

/// Refinement rounds from `F` near `⋃_a E^a_{j,|F|}` realized on `domain`.
#[allow(clippy::too_many_arguments)]
pub fn tau_build(
    f: &ExactMatrix,
    domain: &BoxDomain,
    j: u32,
    m: usize,
    alpha: f64,
    delta: f64,
    k_max: usize,
    budget: usize,
) -> Result<BuildOutput> {
    let tree = tau_tree(f, j, m, k_max)?;
    build_single(tree, domain, j, m, alpha, delta, budget, StageConfig::default().band_fraction)
}

/// Bridge split of `A ∈ E_j` plus refinement rounds, realized on `domain`.
#[allow(clippy::too_many_arguments)]
pub fn h_step(
    a: &ExactMatrix,
    domain: &BoxDomain,
    j: u32,
    m: usize,
    alpha: f64,
    eta: f64,
    k_max: usize,
    budget: usize,
) -> Result<BuildOutput> {
    if !in_e_j(a, j, m)? {
        return Err(Error::Domain(format!("matrix is not in E_{j}")));
    }
    let tree = h_tree(a, j, m, k_max)?;
    build_single(tree, domain, j + m as u32, m, alpha, eta, budget, StageConfig::default().band_fraction)
}

/// Result of the stage iteration.
#[derive(Clone, Debug)]
pub struct TheoremRun {
    pub config: StageConfig,
    pub reports: Vec<StageReport>,
    /// Stage maps `f_1, …, f_J` when requested.
    pub maps: Vec<PiecewiseAffineMap>,
    pub final_map: PiecewiseAffineMap,
    pub sharpness: SharpnessTable,
}

impl TheoremRun {
    pub fn to_json(&self) -> Value {
        json!({
            "config": self.config.to_json(),
            "stages": self.reports.iter().map(StageReport::to_json).collect::<Vec<_>>(),
            "sharpness": self.sharpness.to_json(),
            "increments_decreasing": self.increments_decreasing(),
            "increments_below_threshold": self.increments_below_threshold(),
        })
    }

    /// Hölder increment upper estimates strictly decrease across stages.
    pub fn increments_decreasing(&self) -> bool {
        let ups: Vec<f64> = self.reports.iter().filter_map(|r| r.increment.map(|e| e.upper())).collect();
        ups.windows(2).all(|w| w[1] < w[0])
    }

    pub fn increments_below_threshold(&self) -> bool {
        self.reports.iter().all(|r| r.increment.is_some_and(|e| e.upper() < r.increment_threshold))
    }
}

/// Runs stages `1..=J` on the unit square.
pub fn run_theorem(cfg: &StageConfig) -> Result<TheoremRun> {
    run_theorem_on(cfg, &BoxDomain::unit(2), false)
}

pub fn run_theorem_on(cfg: &StageConfig, domain: &BoxDomain, keep_maps: bool) -> Result<TheoremRun> {
    cfg.validate()?;
    if cfg.n != 2 {
        return Err(Error::Unsupported("stage realization is implemented for n = 2 only".into()));
    }
    domain.require_planar()?;
    let id = [[1.0, 0.0], [0.0, 1.0]];
    let mut forest = Forest::new();
    let mut prev = PiecewiseAffineMap::identity(domain.clone())?;
    let mut cells: Vec<PCell> = Vec::new();
    let mut reports = Vec::new();
    let mut maps = Vec::new();
    let mut lp_rows = Vec::new();
    let mut cache: HashMap<String, u32> = HashMap::new();
    for stage in 1..=cfg.stages {
        let target_j = cfg.target_j(stage);
        let threshold = cfg.delta * 0.5f64.powi(stage as i32);
        let mut lip: f64 = 0.0;
        if stage == 1 {
            let tree = seed_tree(cfg.n, cfg.m, cfg.j1, cfg.k_max)?;
            lip = lip.max(max_node_norm(&tree) + 1.0);
            let t = forest.push(tree);
            cells = vec![PCell { cell: root_cell(domain, id), tree: Some(t) }];
        } else {
            let jp = cfg.target_j(stage - 1);
            for pc in cells.iter_mut() {
                if classify(pc, &mut forest, jp, cfg.m)? != Class::Member {
                    continue;
                }
                let (t0, n0) = (pc.tree.unwrap_or(0), pc.cell.node.unwrap_or(0));
                let a = forest.matrix(t0, n0).clone();
                let key = a.to_json().to_string();
                let t = match cache.get(&key) {
                    Some(&t) => t,
                    None => {
                        let tree = h_tree(&a, jp, cfg.m, cfg.k_max)?;
                        let t = forest.push(tree);
                        cache.insert(key, t);
                        t
                    }
                };
                lip = lip.max(2.0 * max_node_norm(&forest.trees[t as usize]));
                pc.tree = Some(t);
                pc.cell.node = Some(0);
            }
        }
        // Aim below both the stage threshold and half the previous increment.
        let target = match reports.last().and_then(|r: &StageReport| r.increment) {
            Some(e) if e.upper() > 0.0 => threshold.min(0.5 * e.upper()),
            _ => threshold,
        };
        let params = stage_params(cfg, target, lip);
        // Leave an even share of the remaining budget to each later stage.
        let remaining = cfg.budget.saturating_sub(cells.len());
        let later = (cfg.stages - stage + 1) as usize;
        let limit = cells.len() + remaining / later;
        let (next, stats) = refine(std::mem::take(&mut cells), &mut forest, limit, &params)?;
        cells = next;
        let map = to_map(domain, id, &cells);
        let rep = stage_report(stage, target_j, cfg.m, &cells, &mut forest, &map, Some(&prev), stats, cfg.alpha, cfg.delta, cfg.seed)?;
        lp_rows.push(rep.lp.iter().map(|x| x.1).collect::<Vec<_>>());
        reports.push(rep);
        if keep_maps {
            maps.push(map.clone());
        }
        prev = map;
    }
    let sharpness = SharpnessTable::from_sums(&P_GRID, lp_rows, cfg.m);
    Ok(TheoremRun { config: cfg.clone(), reports, maps, final_map: prev, sharpness })
}

// ---------------------------------------------------------------------------
// Sharpness probe

#[derive(Clone, Debug, PartialEq)]
pub struct SharpnessTable {
    pub p_grid: Vec<f64>,
    /// One row per stage: `∫|Df_j|^p / |Ω|` for each `p`.
    pub rows: Vec<Vec<f64>>,
    /// `(p, flag)` for every flagged column.
    pub flags: Vec<(f64, String)>,
}

pub const MONOTONE_GROWTH: &str = "MONOTONE-GROWTH";
pub const BOUNDED: &str = "BOUNDED";

impl SharpnessTable {
    pub fn from_sums(p_grid: &[f64], rows: Vec<Vec<f64>>, m: usize) -> Self {
        let mut flags = Vec::new();
        if rows.len() >= 2 {
            for (k, &p) in p_grid.iter().enumerate() {
                let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
                if p == m as f64 && col.windows(2).all(|w| w[1] > w[0]) {
                    flags.push((p, MONOTONE_GROWTH.to_string()));
                }
                if p <= m as f64 - 0.5 {
                    let tail = if col.len() > 2 { &col[1..] } else { &col[..] };
                    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = tail.iter().cloned().fold(0.0, f64::max);
                    if lo > 0.0 && (hi - lo) / lo < 0.1 {
                        flags.push((p, BOUNDED.to_string()));
                    }
                }
            }
        }
        SharpnessTable { p_grid: p_grid.to_vec(), rows, flags }
    }

    pub fn has_flag(&self, p: f64, flag: &str) -> bool {
        self.flags.iter().any(|(q, f)| *q == p && f == flag)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "p_grid": self.p_grid,
            "rows": self.rows,
            "flags": self.flags.iter().map(|(p, f)| json!([p, f])).collect::<Vec<_>>(),
        })
    }
}

/// Cell sums of `|Df_j|^p` per stage with growth and boundedness flags.
pub fn sharpness_probe(stages: &[PiecewiseAffineMap], p_grid: &[f64], m: usize) -> SharpnessTable {
    let rows = stages.iter().map(|f| lp_sums(f, p_grid).into_iter().map(|x| x.1).collect()).collect();
    SharpnessTable::from_sums(p_grid, rows, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::DiscreteMatrixMeasure;

    fn dq(v: &[(i64, i64)]) -> ExactMatrix {
        ExactMatrix::from_diag(&v.iter().map(|&(p, q)| rat(p, q)).collect::<Vec<_>>())
    }

    #[test]
    fn seed_tree_is_certified_with_barycenter_identity() {
        let tree = seed_tree(2, 2, 2, 3).unwrap();
        let nu = DiscreteMatrixMeasure::from_tree(tree.clone()).unwrap();
        assert!(nu.certify().passed());
        assert_eq!(nu.barycenter().unwrap(), ExactMatrix::identity(2));
        // Two rounds lift the step level from 2 to 4.
        assert!(nu.atoms().iter().any(|a| a.matrix == dq(&[(4, 1), (4, 1)])));
    }

    #[test]
    fn k_max_one_is_affine() {
        let f = dq(&[(2, 1), (2, 1)]);
        let out = tau_build(&f, &BoxDomain::unit(2), 2, 2, 0.5, 0.5, 1, 1000).unwrap();
        assert_eq!(out.map.len(), 1);
        assert_eq!(out.report.volumes.truncated, 1.0);
    }

    #[test]
    fn residual_mass_nonincreasing_in_k_max() {
        let f = dq(&[(2, 1), (2, 1)]);
        let mut last = Rational::one();
        for k in 1..=4 {
            let (_, out) = leaf_split_masses(&tau_tree(&f, 2, 2, k).unwrap(), 2, 2).unwrap();
            assert!(out <= last);
            last = out;
        }
        let (masses, k0) = k0_diagnostic(2, 2, 2, 4).unwrap();
        assert_eq!(masses.len(), 4);
        assert!(k0.is_some());
    }

    #[test]
    fn bridge_step_hand_trace() {
        let a = dq(&[(1, 16), (1, 1)]);
        let out = h_step(&a, &BoxDomain::unit(2), 3, 2, 0.5, 0.5, 1, 200_000).unwrap();
        let p1 = [[3.0 / 128.0, 0.0], [0.0, 1.0]];
        let near: f64 = out
            .map
            .cells
            .iter()
            .filter(|c| op_norm2(&crate::pamap::m2_sub(&c.matrix, &p1)) < 1e-9)
            .map(Cell::area)
            .sum();
        assert!(near >= 0.96 * (1.0 - StageConfig::default().band_fraction), "{near}");
        assert!(out.report.l1_increment <= 8.0 * 0.125, "{}", out.report.l1_increment);
        assert!(out.map.boundary_residual() <= 1e-12);
    }

    #[test]
    fn slope_and_probe_flags() {
        let pts: Vec<(f64, f64)> = (1..5).map(|t| (t as f64, 3.0 / (t * t) as f64)).collect();
        assert!((loglog_slope(&pts).unwrap() + 2.0).abs() < 1e-12);
        let t = SharpnessTable::from_sums(&[1.5, 2.0], vec![vec![1.0, 1.0], vec![1.02, 1.5], vec![1.05, 2.0]], 2);
        assert!(t.has_flag(2.0, MONOTONE_GROWTH) && t.has_flag(1.5, BOUNDED));
        let one = SharpnessTable::from_sums(&[1.5, 2.0], vec![vec![1.0, 1.0]], 2);
        assert!(one.flags.is_empty());
    }
}
