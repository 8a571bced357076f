//! Coordinate-wise splitting constructions in the eigenbasis of the input.
//!
//! All three constructions share one engine: walk the eigenvalues of `A` in
//! ascending order and split the current coordinate `σ` between a low value
//! and a high value,
//!
//! ```text
//! σ = (high − σ)/(high − low) · low + (σ − low)/(high − low) · high,
//! ```
//!
//! stopping a branch once it lands in a frozen set. Every split changes one
//! eigenvalue, so `b − c` is a multiple of `q qᵀ` for an eigenvector `q`.
//!
//! | construction | low            | high  | frozen in   |
//! |--------------|----------------|-------|-------------|
//! | lamlem       | `ρ_{j,R+1}`    | `R+1` | `E_j`       |
//! | bridge       | `ρ_{j+m,σ_n}`  | `σ_n` | `E_{j+m}`   |
//! | seed         | `ρ_{j₁,2}`     | `2`   | `E_{j₁}`    |

use num::One;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::measure::{DiscreteMatrixMeasure, NodeMeta, SplitTree};
use crate::numeric::{from_spectral, pow2, rat, spectral, Basis, Rational, Scalar, SquareMatrix};
use crate::target_sets::{c_bound, dist_e_a_spectrum, in_e_j_spectrum, psd_spectrum, r_small, rho, uvw};
use crate::tolerances::MERGE_ABS;

/// A leaf of the split with its eigenvalues in the fixed basis.
#[derive(Clone, Debug)]
pub struct Leaf<T> {
    pub node: usize,
    pub values: Vec<T>,
    pub weight: T,
    pub meta: NodeMeta,
    pub frozen: bool,
}

/// Output of a splitting construction.
#[derive(Clone, Debug)]
pub struct Lamination<T> {
    pub measure: DiscreteMatrixMeasure<T>,
    /// Ascending spectrum of the input and the basis shared by all atoms.
    pub spectrum: Vec<T>,
    pub basis: Basis,
    pub leaves: Vec<Leaf<T>>,
}

impl<T: Scalar> Lamination<T> {
    /// Leaf reached by always taking the low child.
    pub fn principal_leaf(&self) -> Option<&Leaf<T>> {
        let tree = self.measure.certificate()?;
        let mut node = 0;
        while let Some(sp) = tree.split_at(node) {
            node = sp.b;
        }
        self.leaves.iter().find(|l| l.node == node)
    }
}

fn sorted<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    s
}

fn coordinate_split<T: Scalar>(
    root: &SquareMatrix<T>,
    spectrum: &[T],
    basis: &Basis,
    low: &T,
    high: &T,
    a0: usize,
    frozen: &dyn Fn(&[T]) -> bool,
) -> Result<Lamination<T>> {
    let n = spectrum.len();
    let mut tree = SplitTree::new(root.clone());
    tree.set_meta(0, NodeMeta::default());
    let mut leaves = Vec::new();
    // (node, values, next coordinate, weight, meta)
    let mut stack = vec![(0usize, spectrum.to_vec(), 0usize, T::one(), NodeMeta::default())];
    let span = high.clone() - low.clone();
    while let Some((node, values, mut coord, weight, meta)) = stack.pop() {
        let is_frozen = frozen(&sorted(&values));
        if !is_frozen {
            while coord < n && (values[coord] == *low || values[coord] == *high) {
                coord += 1;
            }
        }
        if is_frozen || coord == n {
            leaves.push(Leaf { node, values, weight, meta, frozen: is_frozen });
            continue;
        }
        let s = values[coord].clone();
        let w_low = (high.clone() - s.clone()) / span.clone();
        let w_high = (s - low.clone()) / span.clone();
        if w_low.is_negative() || w_high.is_negative() {
            return Err(Error::Domain(format!(
                "eigenvalue {} outside [{}, {}]",
                values[coord].to_float(),
                low.to_float(),
                high.to_float()
            )));
        }
        let mut v_low = values.clone();
        v_low[coord] = low.clone();
        let mut v_high = values;
        v_high[coord] = high.clone();
        let b = tree.add_node(from_spectral(&v_low, basis)?);
        let c = tree.add_node(from_spectral(&v_high, basis)?);
        let mut m_low = meta;
        if coord < a0 {
            m_low.beta += 1;
        } else {
            m_low.gamma += 1;
        }
        m_low.depth = coord as u32 + 1;
        let m_high = NodeMeta { depth: coord as u32 + 1, ..meta };
        tree.set_meta(b, m_low);
        tree.set_meta(c, m_high);
        tree.add_split(node, w_low.clone(), b, c)?;
        stack.push((c, v_high, coord + 1, weight.clone() * w_high, m_high));
        stack.push((b, v_low, coord + 1, weight * w_low, m_low));
    }
    leaves.sort_by_key(|l| l.node);
    let measure = DiscreteMatrixMeasure::from_tree(tree)?;
    Ok(Lamination { measure, spectrum: spectrum.to_vec(), basis: basis.clone(), leaves })
}

fn rho_t<T: Scalar>(j: u32, r: &T, m: usize) -> Result<T> {
    Ok(T::from_rational(&rho(j, &r.to_rational()?, m)))
}

/// Splits `A` near `E^{a₀}_{j,R}` into `E_j ∪ ⋃_a E^a_{j,R+1}`.
pub fn lamlem_split<T: Scalar>(a: &SquareMatrix<T>, j: u32, r: &Rational, a0: usize, m: usize) -> Result<Lamination<T>> {
    let n = a.n();
    if m < 2 || m > n || a0 > n - m {
        return Err(Error::InvalidInput(format!("need 2 <= m <= n and a0 <= n - m (n={n}, m={m}, a0={a0})")));
    }
    if !a.is_symmetric() {
        return Err(Error::InvalidInput("matrix is not symmetric".into()));
    }
    if rho(j, r, m) >= *r {
        return Err(Error::Domain("rho_{j,R} must be below R".into()));
    }
    let radius = r_small(j, r, m, n)?;
    let sig = psd_spectrum(a)?;
    let dist = dist_e_a_spectrum(&sig, j, r, a0, m);
    if dist >= T::from_rational(&radius) {
        return Err(Error::Domain(format!(
            "distance {} to E^{a0}_(j,R) is not below r_small = {}",
            dist.to_float(),
            radius.to_float()
        )));
    }
    let basis = spectral(a)?.basis;
    let r1 = r + Rational::one();
    let low = T::from_rational(&rho(j, &r1, m));
    let high = T::from_rational(&r1);
    coordinate_split(a, &sig, &basis, &low, &high, a0, &|s: &[T]| in_e_j_spectrum(s, j, m))
}

/// Splits `A ∈ E_j` into `E_{j+m} ∪ ⋃_a E^a_{j+m}` without changing the norm.
pub fn bridge_split<T: Scalar>(a: &SquareMatrix<T>, j: u32, m: usize) -> Result<Lamination<T>> {
    let n = a.n();
    if m < 2 || m > n {
        return Err(Error::InvalidInput(format!("need 2 <= m <= n (n={n}, m={m})")));
    }
    if !a.is_symmetric() {
        return Err(Error::InvalidInput("matrix is not symmetric".into()));
    }
    let sig = psd_spectrum(a)?;
    if !in_e_j_spectrum(&sig, j, m) {
        return Err(Error::Domain(format!("matrix is not in E_{j}")));
    }
    let basis = spectral(a)?.basis;
    let top = sig[n - 1].clone();
    let low = rho_t(j + m as u32, &top, m)?;
    let jm = j + m as u32;
    coordinate_split(a, &sig, &basis, &low, &top, 0, &|s: &[T]| in_e_j_spectrum(s, jm, m))
}

/// Top eigenvalue used by the seed split.
pub const SEED_TOP: i64 = 2;

/// Splits `I` into `E_{j₁} ∪ ⋃_a E^a_{j₁,2}` with atom norms in `[1/2, 2]`.
///
/// Requires `j₁ ≥ 2`: for `j₁ = 1` the frozen set needs `|A| > 1`, which the
/// branch sending every coordinate low can never reach.
pub fn seed_split<T: Scalar>(n: usize, m: usize, j1: u32) -> Result<Lamination<T>> {
    crate::numeric::check_dim(n)?;
    if m < 2 || m > n {
        return Err(Error::InvalidInput(format!("need 2 <= m <= n (n={n}, m={m})")));
    }
    if j1 < 2 {
        return Err(Error::InvalidInput("seed split needs j1 >= 2".into()));
    }
    let id = SquareMatrix::<T>::identity(n);
    let sig = vec![T::one(); n];
    let basis = Basis::Permutation((0..n).collect());
    let top = rat(SEED_TOP, 1);
    let low = T::from_rational(&rho(j1, &top, m));
    let high = T::from_rational(&top);
    coordinate_split(&id, &sig, &basis, &low, &high, 0, &|s: &[T]| in_e_j_spectrum(s, j1, m))
}

fn slack<T: Scalar>(x: f64) -> T {
    if T::EXACT {
        T::zero()
    } else {
        T::from_f64(x).unwrap_or_else(|_| T::zero())
    }
}

fn leaf_norm<T: Scalar>(l: &Leaf<T>) -> T {
    l.values.iter().fold(T::zero(), |acc, v| if v.abs() > acc { v.abs() } else { acc })
}

/// Which target set a leaf belongs to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LeafClass {
    Ej,
    Ea(usize),
    Unclassified,
}

/// Classifies a spectrum into `E_j` or the unique `E^a_{j,R}` containing it.
pub fn classify_leaf<T: Scalar>(values: &[T], j: u32, r: &Rational, m: usize) -> LeafClass {
    let s = sorted(values);
    if in_e_j_spectrum(&s, j, m) {
        return LeafClass::Ej;
    }
    let n = s.len();
    let floor = T::from_rational(&(rat(1, 2) + pow2(-(j as i64))));
    if s[n - 1] <= floor {
        return LeafClass::Unclassified;
    }
    let tol = slack::<T>(MERGE_ABS * r.to_float().max(1.0));
    let hits: Vec<usize> = (0..=n - m).filter(|&a| dist_e_a_spectrum(&s, j, r, a, m) <= tol).collect();
    match hits.as_slice() {
        [a] => LeafClass::Ea(*a),
        _ => LeafClass::Unclassified,
    }
}

/// Checks of a lamlem output against the lemma's conclusions.
#[derive(Clone, Debug)]
pub struct LamlemReport {
    pub certified: bool,
    pub barycenter_rel_error: f64,
    pub classes: Vec<LeafClass>,
    /// `(a, ν(E^a_{j,R+1}), C(j,R,a₀,a), pass)`.
    pub mass_bounds: Vec<(usize, f64, f64, bool)>,
    pub max_norm: f64,
    pub leaf_bound_failures: usize,
    pub exclusivity_failures: usize,
    pub atoms: usize,
}

impl LamlemReport {
    pub fn passed(&self, n: usize) -> bool {
        self.certified
            && self.barycenter_rel_error <= 1e-9
            && self.classes.iter().all(|c| *c != LeafClass::Unclassified)
            && self.mass_bounds.iter().all(|b| b.3)
            && self.leaf_bound_failures == 0
            && self.exclusivity_failures == 0
            && self.atoms <= 1 << n
    }

    pub fn to_json(&self, n: usize) -> Value {
        json!({
            "pass": self.passed(n),
            "certified": self.certified,
            "barycenter_rel_error": self.barycenter_rel_error,
            "classes": self.classes.iter().map(|c| match c {
                LeafClass::Ej => "E_j".to_string(),
                LeafClass::Ea(a) => format!("E^{a}"),
                LeafClass::Unclassified => "unclassified".to_string(),
            }).collect::<Vec<_>>(),
            "mass_bounds": self.mass_bounds.iter().map(|(a, mass, bound, pass)| json!({
                "a": a, "mass": mass, "c_bound": bound, "pass": pass
            })).collect::<Vec<_>>(),
            "max_norm": self.max_norm,
            "leaf_bound_failures": self.leaf_bound_failures,
            "exclusivity_failures": self.exclusivity_failures,
            "atoms": self.atoms,
        })
    }
}

/// Relative barycenter error `|bar(ν) − A| / |A|` in operator norm.
pub fn barycenter_error<T: Scalar>(nu: &DiscreteMatrixMeasure<T>, a: &SquareMatrix<T>) -> f64 {
    match nu.barycenter() {
        Ok(b) => {
            let d = crate::numeric::op_norm(&b.sub(a).to_f64());
            d / crate::numeric::op_norm(&a.to_f64()).max(f64::MIN_POSITIVE)
        }
        Err(_) => f64::INFINITY,
    }
}

pub fn verify_lamlem<T: Scalar>(
    out: &Lamination<T>,
    a: &SquareMatrix<T>,
    j: u32,
    r: &Rational,
    a0: usize,
    m: usize,
) -> Result<LamlemReport> {
    let n = a.n();
    let r1 = r + Rational::one();
    let classes: Vec<LeafClass> = out.leaves.iter().map(|l| classify_leaf(&l.values, j, &r1, m)).collect();
    let mut mass_bounds = Vec::new();
    for k in 0..=n - m {
        let mass = out
            .leaves
            .iter()
            .zip(&classes)
            .filter(|(_, c)| **c == LeafClass::Ea(k))
            .fold(T::zero(), |s, (l, _)| s + l.weight.clone());
        let bound = c_bound(j, r, a0, k, m, n)?;
        let pass = mass <= T::from_rational(&bound) + slack(1e-9);
        mass_bounds.push((k, mass.to_float(), bound.to_float(), pass));
    }
    let (u, v, w) = uvw(j, r, m, n)?;
    let mut leaf_bound_failures = 0;
    for l in &out.leaves {
        let depth = l.meta.depth as usize;
        let eu = a0.min(depth) as i64 - l.meta.beta as i64;
        let ev = l.meta.gamma as i64;
        let ew = (depth as i64 - a0 as i64 - ev).max(0);
        let bound = crate::numeric::rpow(&u, eu) * crate::numeric::rpow(&v, ev) * crate::numeric::rpow(&w, ew);
        let b_t = T::from_rational(&bound);
        if l.weight > b_t.clone() + slack::<T>(1e-12) * b_t {
            leaf_bound_failures += 1;
        }
    }
    let radius = r_small(j, &r1, m, n).ok();
    let mut exclusivity_failures = 0;
    if let Some(radius) = radius {
        let rad = T::from_rational(&radius);
        for l in &out.leaves {
            let s = sorted(&l.values);
            let near = (0..=n - m).filter(|&k| dist_e_a_spectrum(&s, j, &r1, k, m) < rad).count();
            if near > 1 {
                exclusivity_failures += 1;
            }
        }
    }
    Ok(LamlemReport {
        certified: out.measure.certify().passed(),
        barycenter_rel_error: barycenter_error(&out.measure, a),
        classes,
        mass_bounds,
        max_norm: out.leaves.iter().map(|l| leaf_norm(l).to_float()).fold(0.0, f64::max),
        leaf_bound_failures,
        exclusivity_failures,
        atoms: out.measure.atoms().len(),
    })
}

/// Checks of a bridge output.
#[derive(Clone, Debug)]
pub struct BridgeReport {
    pub certified: bool,
    pub barycenter_rel_error: f64,
    /// `|A − P₁|` in operator norm (both share the eigenbasis).
    pub dist_a_p1: f64,
    pub dist_bound: f64,
    pub p1_in_target: bool,
    pub others_classified: bool,
    /// `max_i ||P_i| − |A||`.
    pub norm_deviation: f64,
    pub lambda1: f64,
    /// `(1 − λ₁)·|A|·max{1,|A|^{m−1}}·2^j`, to be compared with `n − m + 1`.
    pub lambda_defect: f64,
    pub atoms: usize,
    pub distinct: bool,
}

impl BridgeReport {
    pub fn passed(&self, n: usize, m: usize, norm_a: f64) -> bool {
        self.certified
            && self.dist_a_p1 < self.dist_bound
            && self.p1_in_target
            && self.others_classified
            && self.norm_deviation <= 1e-12 * norm_a
            && self.lambda_defect <= (n - m + 1) as f64 + 1e-9
            && self.distinct
    }

    pub fn to_json(&self, n: usize, m: usize, norm_a: f64) -> Value {
        json!({
            "pass": self.passed(n, m, norm_a),
            "certified": self.certified,
            "barycenter_rel_error": self.barycenter_rel_error,
            "dist_a_p1": self.dist_a_p1,
            "dist_bound": self.dist_bound,
            "p1_in_e_jm": self.p1_in_target,
            "others_classified": self.others_classified,
            "norm_deviation": self.norm_deviation,
            "lambda1": self.lambda1,
            "lambda_defect": self.lambda_defect,
            "lambda_defect_bound": (n - m + 1) as f64,
            "atoms": self.atoms,
            "distinct": self.distinct,
        })
    }
}

/// `P₁` and its merged weight `λ₁`.
pub fn principal_atom<T: Scalar>(out: &Lamination<T>) -> Option<(SquareMatrix<T>, T)> {
    let leaf = out.principal_leaf()?;
    let tree = out.measure.certificate()?;
    let p1 = tree.node(leaf.node).clone();
    let w = out
        .measure
        .atoms()
        .iter()
        .find(|a| a.matrix.same_as(&p1, MERGE_ABS))
        .map(|a| a.weight.clone())?;
    Some((p1, w))
}

pub fn verify_bridge<T: Scalar>(out: &Lamination<T>, a: &SquareMatrix<T>, j: u32, m: usize) -> Result<BridgeReport> {
    let n = a.n();
    let jm = j + m as u32;
    let top = out.spectrum[n - 1].clone();
    let leaf = out.principal_leaf().ok_or_else(|| Error::InvalidInput("missing certificate".into()))?;
    let (_, lambda1) = principal_atom(out).ok_or_else(|| Error::InvalidInput("missing principal atom".into()))?;
    let dist = out
        .spectrum
        .iter()
        .zip(&leaf.values)
        .map(|(x, y)| (x.clone() - y.clone()).abs())
        .fold(T::zero(), |acc, d| if d > acc { d } else { acc });
    let p1_in_target = in_e_j_spectrum(&sorted(&leaf.values), jm, m);
    let top_r = top.to_rational()?;
    let others_classified = out
        .leaves
        .iter()
        .all(|l| classify_leaf(&l.values, jm, &top_r, m) != LeafClass::Unclassified);
    let norm_deviation = out
        .leaves
        .iter()
        .map(|l| (leaf_norm(l) - top.clone()).abs().to_float())
        .fold(0.0, f64::max);
    let norm = top.to_float();
    let defect = (T::one() - lambda1.clone()).to_float() * norm * norm.powi(m as i32 - 1).max(1.0) * 2f64.powi(j as i32);
    let atoms = out.measure.atoms();
    let distinct = (0..atoms.len())
        .all(|i| (i + 1..atoms.len()).all(|k| !atoms[i].matrix.same_as(&atoms[k].matrix, MERGE_ABS)));
    Ok(BridgeReport {
        certified: out.measure.certify().passed(),
        barycenter_rel_error: barycenter_error(&out.measure, a),
        dist_a_p1: dist.to_float(),
        dist_bound: pow2(-(j as i64)).to_float(),
        p1_in_target,
        others_classified,
        norm_deviation,
        lambda1: lambda1.to_float(),
        lambda_defect: defect,
        atoms: atoms.len(),
        distinct,
    })
}

/// Checks of a seed output.
#[derive(Clone, Debug)]
pub struct SeedReport {
    pub certified: bool,
    pub barycenter_is_identity: bool,
    pub classified: bool,
    pub min_norm: f64,
    pub max_norm: f64,
    pub atoms: usize,
}

impl SeedReport {
    pub fn passed(&self, n: usize) -> bool {
        self.certified
            && self.barycenter_is_identity
            && self.classified
            && self.min_norm >= 0.5
            && self.max_norm <= 2.0
            && self.atoms <= 1 << n
    }
}

pub fn verify_seed<T: Scalar>(out: &Lamination<T>, n: usize, m: usize, j1: u32) -> SeedReport {
    let top = rat(SEED_TOP, 1);
    let id = SquareMatrix::<T>::identity(n);
    let bar_ok = match out.measure.barycenter() {
        Ok(b) => b.same_as(&id, 1e-12),
        Err(_) => false,
    };
    let norms: Vec<f64> = out.leaves.iter().map(|l| leaf_norm(l).to_float()).collect();
    SeedReport {
        certified: out.measure.certify().passed(),
        barycenter_is_identity: bar_ok,
        classified: out
            .leaves
            .iter()
            .all(|l| classify_leaf(&l.values, j1, &top, m) != LeafClass::Unclassified),
        min_norm: norms.iter().cloned().fold(f64::INFINITY, f64::min),
        max_norm: norms.iter().cloned().fold(0.0, f64::max),
        atoms: out.measure.atoms().len(),
    }
}

/// Smallest `j ≥ 2` for which the seed leaves satisfy the lamlem
/// precondition of the first refinement round (`dist < r_{j,2}`), searched up
/// to `j_max`. Diagnostic only.
pub fn search_j1(n: usize, m: usize, j_max: u32) -> Option<u32> {
    (2..=j_max).find(|&j| {
        seed_split::<Rational>(n, m, j).is_ok_and(|out| {
            let top = rat(SEED_TOP, 1);
            out.leaves.iter().all(|l| match classify_leaf(&l.values, j, &top, m) {
                LeafClass::Ej => true,
                LeafClass::Ea(a) => lamlem_split(&from_spectral(&l.values, &out.basis).unwrap(), j, &top, a, m).is_ok(),
                LeafClass::Unclassified => false,
            })
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{same_atoms, Atom};
    use crate::numeric::{ExactMatrix, Matrix};

    fn dq(v: &[(i64, i64)]) -> ExactMatrix {
        ExactMatrix::from_diag(&v.iter().map(|&(p, q)| rat(p, q)).collect::<Vec<_>>())
    }

    #[test]
    fn bridge_hand_trace() {
        let a = dq(&[(1, 16), (1, 1)]);
        let out = bridge_split(&a, 3, 2).unwrap();
        let want = [
            Atom { matrix: dq(&[(3, 128), (1, 1)]), weight: rat(24, 25) },
            Atom { matrix: ExactMatrix::identity(2), weight: rat(1, 25) },
        ];
        assert!(same_atoms(out.measure.atoms(), &want));
        let (p1, l1) = principal_atom(&out).unwrap();
        assert_eq!(p1, dq(&[(3, 128), (1, 1)]));
        assert_eq!(l1, rat(24, 25));
        let rep = verify_bridge(&out, &a, 3, 2).unwrap();
        assert!(rep.passed(2, 2, 1.0), "{rep:?}");
        assert!((rep.dist_a_p1 - 5.0 / 128.0).abs() < 1e-15);
        assert!((rep.lambda_defect - 8.0 / 25.0).abs() < 1e-12);
    }

    #[test]
    fn bridge_rejects_outside_e_j() {
        assert!(bridge_split(&ExactMatrix::identity(2), 3, 2).is_err());
    }

    #[test]
    fn lamlem_from_scaled_identity() {
        let r = rat(2, 1);
        let a = ExactMatrix::identity(2).scale(&r);
        let out = lamlem_split(&a, 1, &r, 0, 2).unwrap();
        let rep = verify_lamlem(&out, &a, 1, &r, 0, 2).unwrap();
        assert!(rep.passed(2), "{rep:?}");
        assert_eq!(out.measure.barycenter().unwrap(), a);
        let rho3 = rho(1, &rat(3, 1), 2);
        for at in out.measure.atoms() {
            let d = at.matrix.diag();
            let in_ej = crate::target_sets::in_e_j(&at.matrix, 1, 2).unwrap();
            assert!(in_ej || d.iter().all(|x| *x == rho3 || *x == rat(3, 1)));
        }
    }

    #[test]
    fn lamlem_rejects_far_input() {
        let a = ExactMatrix::identity(2).scale(&rat(3, 1));
        assert!(matches!(lamlem_split(&a, 1, &rat(2, 1), 0, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn lamlem_rotated_input() {
        let q = crate::numeric::Rotation::planar(3, 0, 2, 0.4).unwrap();
        let r = rat(3, 1);
        let a: Matrix = crate::numeric::conjugate_diag(&q, &[3.0004, 2.9997, 3.0]).unwrap();
        let out = lamlem_split(&a, 2, &r, 0, 2).unwrap();
        let rep = verify_lamlem(&out, &a, 2, &r, 0, 2).unwrap();
        assert!(rep.passed(3), "{rep:?}");
    }

    #[test]
    fn seed_for_n2_m2() {
        let out = seed_split::<Rational>(2, 2, 3).unwrap();
        assert_eq!(out.measure.barycenter().unwrap(), ExactMatrix::identity(2));
        assert_eq!(out.measure.atoms().len(), 3);
        let rep = verify_seed(&out, 2, 2, 3);
        assert!(rep.passed(2), "{rep:?}");
        assert!(seed_split::<Rational>(2, 2, 1).is_err());
    }

    #[test]
    fn j1_search_finds_an_index() {
        assert_eq!(search_j1(2, 2, 6), Some(2));
    }
}
