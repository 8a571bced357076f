//! The diagonal staircase sequence `ν₁ = δ_I, ν₂, …, ν_K` in exact arithmetic.
//!
//! `S(i, k)` is the set of matrices `k·diag(v)` with `v ∈ {0,1}ⁿ` of rank
//! `n − i`, and `E` the matrices of rank below `m`. Passing from level `k−1`
//! to `k`, every atom in some `S(i, k−1)` is split one nonzero coordinate at a
//! time: the entry `k−1` becomes `0` with weight `1/k` or `k` with weight
//! `(k−1)/k`. A branch stops as soon as it falls into `E`.

use num::{One, Signed, Zero};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::measure::{rational_pair, ExactMeasure, SplitTree};
use crate::numeric::{check_dim, format_rational, rat, rat_from_f64, rpow, ExactMatrix, Rational};

/// Largest level accepted by the exact construction.
pub const MAX_LEVEL: u32 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StairParams {
    pub n: usize,
    pub m: usize,
    pub k: u32,
}

impl StairParams {
    pub fn new(n: usize, m: usize, k: u32) -> Result<Self> {
        check_dim(n)?;
        if m < 2 || m > n {
            return Err(Error::InvalidInput(format!("need 2 <= m <= n, got m = {m}, n = {n}")));
        }
        if k == 0 {
            return Err(Error::InvalidInput("level must be at least 1".into()));
        }
        if k > MAX_LEVEL {
            return Err(Error::SizeGuard(format!("level {k} exceeds {MAX_LEVEL}")));
        }
        Ok(Self { n, m, k })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupportClass {
    S { i: usize, k: u32 },
    E,
    None,
}

fn int(v: i64) -> Rational {
    rat(v, 1)
}

fn rank_of(a: &ExactMatrix) -> usize {
    if a.is_diagonal() {
        a.diag_rank()
    } else {
        crate::numeric::rank_exact(a)
    }
}

/// Exact classification into `S(i, k)`, `E` or neither.
pub fn classify(a: &ExactMatrix, k: u32, p: &StairParams) -> SupportClass {
    if a.n() != p.n {
        return SupportClass::None;
    }
    let r = rank_of(a);
    if r < p.m {
        return SupportClass::E;
    }
    let kk = int(k as i64);
    if a.is_diagonal() && a.diag().iter().all(|d| d.is_zero() || *d == kk) {
        let i = p.n - r;
        if i <= p.n - p.m {
            return SupportClass::S { i, k };
        }
    }
    SupportClass::None
}

/// Splits the subtree rooted at `node` for the passage `k−1 → k`.
fn split_node(tree: &mut SplitTree<Rational>, node: usize, k: u32, m: usize) -> Result<()> {
    let prev = int(k as i64 - 1);
    let mut stack = vec![node];
    while let Some(x) = stack.pop() {
        if tree.split_at(x).is_some() {
            continue;
        }
        let a = tree.node(x).clone();
        if a.diag_rank() < m {
            continue;
        }
        let Some(coord) = a.diag().iter().position(|d| *d == prev) else {
            continue;
        };
        let mut low = a.clone();
        low.set(coord, coord, Rational::zero());
        let mut high = a;
        high.set(coord, coord, int(k as i64));
        let b = tree.intern(low);
        let c = tree.intern(high);
        tree.add_split(x, rat(1, k as i64), b, c)?;
        stack.push(c);
        stack.push(b);
    }
    Ok(())
}

/// `ν_A` for `A ∈ S(i, k−1)`, with its own certificate rooted at `A`.
pub fn split_s_matrix(a: &ExactMatrix, k: u32, p: &StairParams) -> Result<ExactMeasure> {
    if k < 2 {
        return Err(Error::InvalidInput("splitting needs k >= 2".into()));
    }
    match classify(a, k - 1, p) {
        SupportClass::S { .. } => {}
        other => {
            return Err(Error::InvalidInput(format!("matrix is {other:?}, not in S(·, {})", k - 1)));
        }
    }
    let mut tree = SplitTree::new(a.clone());
    split_node(&mut tree, 0, k, p.m)?;
    ExactMeasure::from_tree(tree)
}

/// `[ν₁, …, ν_K]`, each carrying a certificate rooted at `I`.
pub fn staircase_sequence(p: &StairParams) -> Result<Vec<ExactMeasure>> {
    let mut tree = SplitTree::new(ExactMatrix::identity(p.n));
    let mut out = vec![ExactMeasure::from_tree(tree.clone())?];
    for k in 2..=p.k {
        let leaves: Vec<usize> = tree.leaf_masses()?.into_iter().map(|(i, _)| i).collect();
        for leaf in leaves {
            if matches!(classify(tree.node(leaf), k - 1, p), SupportClass::S { .. }) {
                split_node(&mut tree, leaf, k, p.m)?;
            }
        }
        out.push(ExactMeasure::from_tree(tree.clone())?);
    }
    Ok(out)
}

/// `C_k = ∏_{j=1}^{k−1} (1 + 2ⁿ/j²)`.
pub fn c_k(k: u32, n: usize) -> Rational {
    let two_n = int(1i64 << n);
    (1..k as i64).fold(Rational::one(), |acc, j| acc * (Rational::one() + &two_n / int(j * j)))
}

/// Number of factors in the explicit part of the product bound.
pub const THETA_TERMS: u32 = 1_000_000;

/// Certified upper bound for `∏_{j≥1} (1 + 2ⁿ/j²)`.
///
/// The first `THETA_TERMS` factors are multiplied in binary64; each step has
/// relative error at most `2⁻⁵²`, so inflating by `1 + 1e−8` covers the
/// accumulated rounding. The tail is bounded by
/// `exp(2ⁿ Σ_{j>N} j⁻²) ≤ exp(2ⁿ/N)`.
pub fn infinite_product_upper(n: usize) -> Rational {
    let x = (1u64 << n) as f64;
    let mut prod = 1.0f64;
    for j in 1..=THETA_TERMS {
        let jf = j as f64;
        prod *= 1.0 + x / (jf * jf);
    }
    let tail = (x / THETA_TERMS as f64).exp() * (1.0 + 1e-15);
    let bound = prod * (1.0 + 1e-8) * tail;
    rat_from_f64(bound.next_up()).expect("finite bound")
}

/// `Θ = 2^m (n−m+1) ∏_{j≥1}(1 + 2ⁿ/j²)`, as a certified rational upper bound.
pub fn theta(n: usize, m: usize) -> Rational {
    int(1i64 << m) * int((n - m + 1) as i64) * infinite_product_upper(n)
}

/// One checked inequality `lhs ≤ rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundRecord {
    pub k: u32,
    /// `"S"` (index is `i`) or `"tail"` (index is `t`).
    pub kind: &'static str,
    pub index: u32,
    pub lhs: Rational,
    pub rhs: Rational,
    pub pass: bool,
}

impl BoundRecord {
    pub fn to_json(&self) -> Value {
        let key = if self.kind == "S" { "i" } else { "t" };
        json!({
            "k": self.k,
            "kind": self.kind,
            key: self.index,
            "lhs": rational_pair(&self.lhs),
            "rhs": rational_pair(&self.rhs),
            "pass": self.pass,
        })
    }
}

/// Exact bound checks over a whole sequence.
#[derive(Clone, Debug)]
pub struct StairReport {
    pub records: Vec<BoundRecord>,
    pub theta: Rational,
    /// `max_{k,t} t^m · ν_k{|A| > t}` over the checked grid.
    pub empirical_tail_max: Rational,
    /// Structural failures: support outside `∪S ∪ E`, norm above `k`,
    /// barycenter not `I`, shrinking `E` mass.
    pub structural: Vec<String>,
}

impl StairReport {
    pub fn passed(&self) -> bool {
        self.structural.is_empty() && self.records.iter().all(|r| r.pass)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "pass": self.passed(),
            "theta_upper": rational_pair(&self.theta),
            "empirical_tail_max": rational_pair(&self.empirical_tail_max),
            "structural_failures": self.structural,
            "records": self.records.iter().map(BoundRecord::to_json).collect::<Vec<_>>(),
        })
    }
}

/// Checks `ν_k(S(i,k)) ≤ C_k k^{i−n}` and `t^m ν_k{|A|>t} ≤ Θ` for integer `t ∈ [1, k]`.
pub fn verify_staircase_bounds(seq: &[ExactMeasure], p: &StairParams) -> StairReport {
    let th = theta(p.n, p.m);
    let mut records = Vec::new();
    let mut structural = Vec::new();
    let mut emp = Rational::zero();
    let mut prev_e = Rational::zero();
    let id = ExactMatrix::identity(p.n);
    for (idx, nu) in seq.iter().enumerate() {
        let k = idx as u32 + 1;
        let ck = c_k(k, p.n);
        let kk = int(k as i64);
        for i in 0..=(p.n - p.m) {
            let lhs = nu.mass_where(|a| classify(a, k, p) == SupportClass::S { i, k });
            let rhs = &ck * rpow(&kk, i as i64 - p.n as i64);
            records.push(BoundRecord { k, kind: "S", index: i as u32, pass: lhs <= rhs, lhs, rhs });
        }
        for t in 1..=k {
            let tt = int(t as i64);
            let mass = nu.tail(std::slice::from_ref(&tt)).points[0].mass.clone();
            let lhs = rpow(&tt, p.m as i64) * mass;
            if lhs > emp {
                emp = lhs.clone();
            }
            records.push(BoundRecord { k, kind: "tail", index: t, pass: lhs <= th, lhs, rhs: th.clone() });
        }
        for a in nu.atoms() {
            let cls = classify(&a.matrix, k, p);
            if cls == SupportClass::None {
                structural.push(format!("k={k}: atom outside S ∪ E"));
            }
            if a.matrix.diag().iter().any(|d| d.abs() > kk) || !a.matrix.is_diagonal() {
                structural.push(format!("k={k}: atom norm above k"));
            }
        }
        match nu.barycenter() {
            Ok(b) if b == id => {}
            _ => structural.push(format!("k={k}: barycenter is not I")),
        }
        let e_mass = nu.mass_where(|a| classify(a, k, p) == SupportClass::E);
        if e_mass < prev_e {
            structural.push(format!("k={k}: E mass decreased"));
        }
        prev_e = e_mass;
    }
    StairReport { records, theta: th, empirical_tail_max: emp, structural }
}

/// Diagnostic: `(k, Σ_i ν_k(S(i,k)) · k^m)`, the quantity that the
/// `ν_k(∪S) ≲ k^{−m}` estimate keeps bounded.
pub fn s_mass_profile(seq: &[ExactMeasure], p: &StairParams) -> Vec<(u32, Rational)> {
    seq.iter()
        .enumerate()
        .map(|(idx, nu)| {
            let k = idx as u32 + 1;
            let s = nu.mass_where(|a| matches!(classify(a, k, p), SupportClass::S { .. }));
            (k, s * rpow(&int(k as i64), p.m as i64))
        })
        .collect()
}

/// Text form used by reports, e.g. `"S(1,2)"`.
pub fn class_label(c: &SupportClass) -> String {
    match c {
        SupportClass::S { i, k } => format!("S({i},{k})"),
        SupportClass::E => "E".into(),
        SupportClass::None => "none".into(),
    }
}

/// Renders an atom list as `diag(...) : weight` lines.
pub fn describe_atoms(nu: &ExactMeasure) -> Vec<String> {
    nu.atoms()
        .iter()
        .map(|a| {
            let d: Vec<String> = a.matrix.diag().iter().map(format_rational).collect();
            format!("diag({}) : {}", d.join(","), format_rational(&a.weight))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{same_atoms, Atom};

    fn d(v: &[i64]) -> ExactMatrix {
        ExactMatrix::from_diag(&v.iter().map(|&x| int(x)).collect::<Vec<_>>())
    }

    fn atom(v: &[i64], w: (i64, i64)) -> Atom<Rational> {
        Atom { matrix: d(v), weight: rat(w.0, w.1) }
    }

    #[test]
    fn classification_examples() {
        let p22 = StairParams::new(2, 2, 4).unwrap();
        assert_eq!(classify(&d(&[2, 2]), 2, &p22), SupportClass::S { i: 0, k: 2 });
        assert_eq!(classify(&d(&[0, 1]), 5, &p22), SupportClass::E);
        let p32 = StairParams::new(3, 2, 4).unwrap();
        assert_eq!(classify(&d(&[2, 0, 2]), 2, &p32), SupportClass::S { i: 1, k: 2 });
        assert_eq!(classify(&d(&[2, 1, 2]), 2, &p32), SupportClass::None);
    }

    #[test]
    fn nu2_for_n2_m2() {
        let p = StairParams::new(2, 2, 2).unwrap();
        let nu = split_s_matrix(&ExactMatrix::identity(2), 2, &p).unwrap();
        let want = [atom(&[0, 1], (1, 2)), atom(&[2, 0], (1, 4)), atom(&[2, 2], (1, 4))];
        assert!(same_atoms(nu.atoms(), &want));
        assert!(nu.certify().passed());
    }

    #[test]
    fn seven_atom_split_for_n3_m2() {
        let p = StairParams::new(3, 2, 2).unwrap();
        let nu = split_s_matrix(&ExactMatrix::identity(3), 2, &p).unwrap();
        let want = [
            atom(&[0, 0, 1], (1, 4)),
            atom(&[2, 0, 2], (1, 8)),
            atom(&[0, 2, 2], (1, 8)),
            atom(&[2, 2, 0], (1, 8)),
            atom(&[2, 0, 0], (1, 8)),
            atom(&[0, 2, 0], (1, 8)),
            atom(&[2, 2, 2], (1, 8)),
        ];
        assert!(same_atoms(nu.atoms(), &want));
    }

    #[test]
    fn misclassified_input_is_rejected() {
        let p = StairParams::new(2, 2, 3).unwrap();
        assert!(split_s_matrix(&d(&[0, 1]), 2, &p).is_err());
    }

    #[test]
    fn sequence_heads() {
        let p = StairParams::new(2, 2, 2).unwrap();
        let seq = staircase_sequence(&p).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq[0].atoms(), &[atom(&[1, 1], (1, 1))]);
        assert_eq!(seq[1].atoms().len(), 3);
        let p = StairParams::new(3, 2, 3).unwrap();
        let seq = staircase_sequence(&p).unwrap();
        assert_eq!(seq[2].total_mass(), Rational::one());
        assert_eq!(seq[2].max_norm(), 3.0);
    }

    #[test]
    fn c_k_values() {
        assert_eq!(c_k(1, 2), int(1));
        assert_eq!(c_k(2, 2), int(5));
        assert_eq!(c_k(3, 2), int(10));
    }

    #[test]
    fn bounds_hold_on_small_grid() {
        let p = StairParams::new(2, 2, 4).unwrap();
        let seq = staircase_sequence(&p).unwrap();
        let rep = verify_staircase_bounds(&seq, &p);
        assert!(rep.passed(), "{:?}", rep.structural);
        let r = rep.records.iter().find(|r| r.k == 2 && r.kind == "S" && r.index == 0).unwrap();
        assert_eq!((r.lhs.clone(), r.rhs.clone()), (rat(1, 4), rat(5, 4)));
        let r = rep.records.iter().find(|r| r.k == 2 && r.kind == "tail" && r.index == 1).unwrap();
        assert_eq!(r.lhs, rat(1, 2));
    }

    #[test]
    fn oversized_level_is_guarded() {
        assert!(matches!(StairParams::new(2, 2, 13), Err(Error::SizeGuard(_))));
        assert!(StairParams::new(3, 4, 2).is_err());
    }
}
