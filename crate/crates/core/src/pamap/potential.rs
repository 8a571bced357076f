//! Convex potentials of gradient-type piecewise-affine maps, and injectivity.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tolerances::{CONVEXITY_SLACK, LOOP_RESIDUAL_MAX, SYMMETRY_REL};

use super::check::continuity_report;
use super::{dist2, is_sym2, sym_eig2, BoxDomain, CellIndex, PiecewiseAffineMap, M2, P2};

pub const POTENTIAL_SEED: u64 = 0xc0_4e_c5;
pub const MIDPOINT_TESTS: usize = 10_000;

/// `u = ½xᵀMx + b·x + k` on each cell.
#[derive(Clone, Debug)]
pub struct Potential {
    pub pieces: Vec<(M2, P2, f64)>,
    /// Largest mismatch of neighbouring pieces on shared facets.
    pub loop_residual: f64,
    pub midpoint_tests: usize,
    pub convexity_violations: usize,
    domain: BoxDomain,
    index: CellIndex,
    cells: Vec<super::Cell>,
}

fn quad(m: &M2, b: &P2, k: f64, x: &P2) -> f64 {
    let mx = [m[0][0] * x[0] + m[0][1] * x[1], m[1][0] * x[0] + m[1][1] * x[1]];
    0.5 * (x[0] * mx[0] + x[1] * mx[1]) + b[0] * x[0] + b[1] * x[1] + k
}

impl Potential {
    pub fn eval(&self, x: &P2) -> Option<f64> {
        let i = self.index.locate(&self.cells, x)?;
        let (m, b, k) = &self.pieces[i];
        Some(quad(m, b, *k, x))
    }

    pub fn is_convex(&self) -> bool {
        self.convexity_violations == 0
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "pieces": self.pieces.len(),
            "loop_residual": self.loop_residual,
            "midpoint_tests": self.midpoint_tests,
            "convexity_violations": self.convexity_violations,
        })
    }
}

pub fn reconstruct_potential(f: &PiecewiseAffineMap) -> Result<Potential> {
    reconstruct_potential_seeded(f, POTENTIAL_SEED)
}

/// Integrates `f` along a spanning tree of the cell adjacency graph and
/// measures the mismatch on every shared facet.
pub fn reconstruct_potential_seeded(f: &PiecewiseAffineMap, seed: u64) -> Result<Potential> {
    if let Some(i) = f.cells.iter().position(|c| !is_sym2(&c.matrix, SYMMETRY_REL)) {
        return Err(Error::InvalidInput(format!("cell {i} has a non-symmetric gradient")));
    }
    let n = f.cells.len();
    if n == 0 {
        return Err(Error::InvalidInput("map has no cells".into()));
    }
    let (_, adj) = continuity_report(f);
    let mut nbrs: Vec<Vec<(u32, P2)>> = vec![Vec::new(); n];
    for &(i, j, p, q) in &adj.pairs {
        let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
        nbrs[i as usize].push((j, mid));
        nbrs[j as usize].push((i, mid));
    }
    let zero = |c: &super::Cell, x: &P2| quad(&c.matrix, &c.offset, 0.0, x);
    let mut k: Vec<Option<f64>> = vec![None; n];
    k[0] = Some(0.0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let ki = k[i].unwrap_or(0.0);
        for &(j, x) in &nbrs[i] {
            let j = j as usize;
            if k[j].is_none() {
                k[j] = Some(ki + zero(&f.cells[i], &x) - zero(&f.cells[j], &x));
                queue.push_back(j);
            }
        }
    }
    if let Some(i) = k.iter().position(|v| v.is_none()) {
        return Err(Error::InvalidInput(format!("cell {i} is not connected to cell 0")));
    }
    let pieces: Vec<(M2, P2, f64)> =
        f.cells.iter().zip(&k).map(|(c, k)| (c.matrix, c.offset, k.unwrap_or(0.0))).collect();
    let u = |i: usize, x: &P2| quad(&pieces[i].0, &pieces[i].1, pieces[i].2, x);
    let loop_residual = adj
        .pairs
        .par_iter()
        .map(|&(i, j, p, q)| {
            let (i, j) = (i as usize, j as usize);
            (u(i, &p) - u(j, &p)).abs().max((u(i, &q) - u(j, &q)).abs())
        })
        .reduce(|| 0.0, f64::max);
    if !(loop_residual <= LOOP_RESIDUAL_MAX) {
        return Err(Error::NonIntegrable(loop_residual));
    }
    let index = f.index();
    let mut pot = Potential {
        pieces,
        loop_residual,
        midpoint_tests: 0,
        convexity_violations: 0,
        domain: f.domain.clone(),
        index,
        cells: f.cells.clone(),
    };
    let pairs = sample_pairs(&f.domain, seed, MIDPOINT_TESTS);
    let violations = pairs
        .par_iter()
        .filter(|(x, y)| {
            let m = [0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1])];
            match (pot.eval(x), pot.eval(y), pot.eval(&m)) {
                (Some(ux), Some(uy), Some(um)) => um > 0.5 * (ux + uy) + CONVEXITY_SLACK,
                _ => true,
            }
        })
        .count();
    pot.midpoint_tests = pairs.len();
    pot.convexity_violations = violations;
    Ok(pot)
}

pub(crate) fn sample_pairs(d: &BoxDomain, seed: u64, count: usize) -> Vec<(P2, P2)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = ([d.lower[0], d.lower[1]], [d.upper[0], d.upper[1]]);
    (0..count)
        .map(|_| {
            let x = [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])];
            let y = [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])];
            (x, y)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct InjectivityReport {
    pub passed: bool,
    pub min_eigenvalue: f64,
    /// First cell whose gradient is not symmetric positive definite.
    pub bad_cell: Option<usize>,
    pub loop_residual: Option<f64>,
    pub convexity_violations: Option<usize>,
    pub pairs_tested: usize,
    /// Pairs with `|f(x) − f(y)| < (λ_min/2)|x − y|`.
    pub pair_violations: usize,
    pub message: String,
}

impl InjectivityReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "passed": self.passed,
            "min_eigenvalue": self.min_eigenvalue,
            "bad_cell": self.bad_cell,
            "loop_residual": self.loop_residual,
            "convexity_violations": self.convexity_violations,
            "pairs_tested": self.pairs_tested,
            "pair_violations": self.pair_violations,
            "message": self.message,
        })
    }
}

/// Injectivity through monotonicity: symmetric positive definite cell
/// gradients plus a convex potential make `f` the gradient of a strongly
/// convex function.
pub fn check_injectivity(f: &PiecewiseAffineMap) -> InjectivityReport {
    let eig: Vec<(bool, f64)> = f.cells.iter().map(|c| (is_sym2(&c.matrix, SYMMETRY_REL), sym_eig2(&c.matrix).0)).collect();
    let min_eigenvalue = eig.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    let bad_cell = eig.iter().position(|&(sym, l)| !sym || !(l > 0.0));
    let mut rep = InjectivityReport {
        passed: false,
        min_eigenvalue,
        bad_cell,
        loop_residual: None,
        convexity_violations: None,
        pairs_tested: 0,
        pair_violations: 0,
        message: String::new(),
    };
    if let Some(i) = bad_cell {
        rep.message = format!("cell {i} gradient is not symmetric positive definite");
        return rep;
    }
    let pot = match reconstruct_potential(f) {
        Ok(p) => p,
        Err(e) => {
            rep.message = format!("potential reconstruction failed: {e}");
            return rep;
        }
    };
    rep.loop_residual = Some(pot.loop_residual);
    rep.convexity_violations = Some(pot.convexity_violations);
    let index = &pot.index;
    let eval = |x: &P2| index.locate(&f.cells, x).map(|i| f.cells[i].eval(x));
    let pairs = sample_pairs(&f.domain, POTENTIAL_SEED ^ 0x1, MIDPOINT_TESTS);
    rep.pairs_tested = pairs.len();
    rep.pair_violations = pairs
        .par_iter()
        .filter(|(x, y)| match (eval(x), eval(y)) {
            (Some(fx), Some(fy)) => dist2(&fx, &fy) < 0.5 * min_eigenvalue * dist2(x, y),
            _ => true,
        })
        .count();
    rep.passed = pot.is_convex() && rep.pair_violations == 0;
    rep.message = if rep.passed {
        "ok".into()
    } else {
        format!("{} convexity violations, {} pair violations", pot.convexity_violations, rep.pair_violations)
    };
    rep
}
