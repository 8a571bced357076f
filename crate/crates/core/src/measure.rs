//! Finitely supported probability measures on matrices and their split
//! certificates.
//!
//! A certificate is a table of matrix nodes plus a list of binary splits
//! `parent = λ·b + (1−λ)·c` with `rank(b − c) ≤ 1`. Nodes may be shared by
//! several parents (the table is a DAG); unfolding shared nodes yields an
//! ordinary split tree, so a valid table certifies a laminate of finite order.
//! Mass enters at the root and flows along splits; the atoms are the leaves
//! with their accumulated mass, collapsed by matrix equality.

use std::collections::{HashMap, VecDeque};

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::numeric::{format_rational, Rational, Scalar, SquareMatrix};
use crate::tolerances::{MERGE_ABS, SPLIT_ABS};

/// A weighted Dirac mass.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom<T> {
    pub matrix: SquareMatrix<T>,
    pub weight: T,
}

/// Combinatorial counters attached to a certificate node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NodeMeta {
    pub beta: u32,
    pub gamma: u32,
    /// Number of coordinates already processed on the path to this node.
    pub depth: u32,
}

/// One recorded split `parent = λ·b + (1−λ)·c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Split<T> {
    pub parent: usize,
    pub b: usize,
    pub c: usize,
    pub lambda: T,
}

/// Split certificate. Node 0 is the root.
#[derive(Clone, Debug)]
pub struct SplitTree<T> {
    nodes: Vec<SquareMatrix<T>>,
    meta: Vec<Option<NodeMeta>>,
    splits: Vec<Split<T>>,
    split_of: Vec<Option<usize>>,
    index: HashMap<String, usize>,
}

fn matrix_key<T: Scalar>(m: &SquareMatrix<T>) -> Option<String> {
    if !T::EXACT {
        return None;
    }
    Some(m.entries().iter().map(|v| v.to_json().to_string()).collect::<Vec<_>>().join(","))
}

impl<T: Scalar> SplitTree<T> {
    pub fn new(root: SquareMatrix<T>) -> Self {
        let mut t = Self {
            nodes: Vec::new(),
            meta: Vec::new(),
            splits: Vec::new(),
            split_of: Vec::new(),
            index: HashMap::new(),
        };
        t.add_node(root);
        t
    }

    pub fn root(&self) -> &SquareMatrix<T> {
        &self.nodes[0]
    }

    pub fn node(&self, i: usize) -> &SquareMatrix<T> {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[SquareMatrix<T>] {
        &self.nodes
    }

    pub fn splits(&self) -> &[Split<T>] {
        &self.splits
    }

    pub fn meta(&self, i: usize) -> Option<NodeMeta> {
        self.meta[i]
    }

    pub fn set_meta(&mut self, i: usize, meta: NodeMeta) {
        self.meta[i] = Some(meta);
    }

    /// The split whose parent is node `i`, if any.
    pub fn split_at(&self, i: usize) -> Option<&Split<T>> {
        self.split_of[i].map(|s| &self.splits[s])
    }

    /// Appends a node without deduplication.
    pub fn add_node(&mut self, m: SquareMatrix<T>) -> usize {
        let i = self.nodes.len();
        if let Some(k) = matrix_key(&m) {
            self.index.entry(k).or_insert(i);
        }
        self.nodes.push(m);
        self.meta.push(None);
        self.split_of.push(None);
        i
    }

    /// Index of an existing node with this matrix (exact mode only).
    pub fn find(&self, m: &SquareMatrix<T>) -> Option<usize> {
        matrix_key(m).and_then(|k| self.index.get(&k).copied())
    }

    /// Returns the existing node with this matrix, or appends one.
    pub fn intern(&mut self, m: SquareMatrix<T>) -> usize {
        match self.find(&m) {
            Some(i) => i,
            None => self.add_node(m),
        }
    }

    /// Records `parent = λ·b + (1−λ)·c`. Validity is checked by certification.
    pub fn add_split(&mut self, parent: usize, lambda: T, b: usize, c: usize) -> Result<()> {
        let len = self.nodes.len();
        if parent >= len || b >= len || c >= len {
            return Err(Error::InvalidInput("split refers to a missing node".into()));
        }
        if self.split_of[parent].is_some() {
            return Err(Error::InvalidInput(format!("node {parent} is already split")));
        }
        self.split_of[parent] = Some(self.splits.len());
        self.splits.push(Split { parent, b, c, lambda });
        Ok(())
    }

    /// Mass reaching every leaf, in topological order; errors on cycles.
    pub fn leaf_masses(&self) -> Result<Vec<(usize, T)>> {
        let len = self.nodes.len();
        let mut indeg = vec![0usize; len];
        for s in &self.splits {
            indeg[s.b] += 1;
            indeg[s.c] += 1;
        }
        let mut mass = vec![T::zero(); len];
        mass[0] = T::one();
        let mut queue: VecDeque<usize> = (0..len).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        let mut leaves = Vec::new();
        while let Some(i) = queue.pop_front() {
            seen += 1;
            match self.split_of[i] {
                Some(s) => {
                    let sp = &self.splits[s];
                    let m = mass[i].clone();
                    mass[sp.b] = mass[sp.b].clone() + sp.lambda.clone() * m.clone();
                    mass[sp.c] = mass[sp.c].clone() + (T::one() - sp.lambda.clone()) * m;
                    for child in [sp.b, sp.c] {
                        indeg[child] -= 1;
                        if indeg[child] == 0 {
                            queue.push_back(child);
                        }
                    }
                }
                None => {
                    if !mass[i].is_zero() {
                        leaves.push((i, mass[i].clone()));
                    }
                }
            }
        }
        if seen != len {
            return Err(Error::InvalidInput("split table contains a cycle".into()));
        }
        leaves.sort_by_key(|(i, _)| *i);
        Ok(leaves)
    }

    /// Leaves with their masses, collapsed by matrix equality.
    pub fn leaf_atoms(&self) -> Result<Vec<Atom<T>>> {
        let atoms = self
            .leaf_masses()?
            .into_iter()
            .map(|(i, w)| Atom { matrix: self.nodes[i].clone(), weight: w })
            .collect();
        Ok(merge_atoms(atoms))
    }

    /// Nodes reachable from the root (every node, for well-formed tables).
    pub fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut seen[i], true) {
                continue;
            }
            if let Some(sp) = self.split_at(i) {
                stack.push(sp.b);
                stack.push(sp.c);
            }
        }
        seen
    }

    /// Copies `other` into this table, identifying `other`'s root with node `at`.
    ///
    /// Nodes of `other` are reused when an identical matrix with an identical
    /// split status already exists; otherwise fresh nodes are appended.
    pub fn graft(&mut self, at: usize, other: &SplitTree<T>) -> Result<()> {
        if !self.nodes[at].same_as(other.root(), MERGE_ABS) {
            return Err(Error::InvalidInput("graft root does not match the leaf".into()));
        }
        if other.splits.is_empty() {
            return Ok(());
        }
        if self.split_of[at].is_some() {
            return Err(Error::InvalidInput(format!("graft target {at} is not a leaf")));
        }
        let mut map: Vec<Option<usize>> = vec![None; other.nodes.len()];
        map[0] = Some(at);
        // Depth-first so parents are mapped before their children.
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let Some(sp) = other.split_at(i) else { continue };
            let parent = map[i].expect("parent mapped before children");
            let mut kids = [0usize; 2];
            for (slot, &child) in [sp.b, sp.c].iter().enumerate() {
                kids[slot] = match map[child] {
                    Some(x) => x,
                    None => {
                        let x = self.place(other, child);
                        map[child] = Some(x);
                        if let Some(meta) = other.meta[child] {
                            self.meta[x].get_or_insert(meta);
                        }
                        if self.split_of[x].is_none() {
                            stack.push(child);
                        }
                        x
                    }
                };
            }
            if self.split_of[parent].is_none() {
                self.add_split(parent, sp.lambda.clone(), kids[0], kids[1])?;
            }
        }
        Ok(())
    }

    fn place(&mut self, other: &SplitTree<T>, child: usize) -> usize {
        let m = &other.nodes[child];
        if let Some(x) = self.find(m) {
            let same = match (self.split_at(x), other.split_at(child)) {
                (None, None) => true,
                (Some(a), Some(b)) => {
                    a.lambda == b.lambda
                        && self.nodes[a.b] == other.nodes[b.b]
                        && self.nodes[a.c] == other.nodes[b.c]
                }
                _ => false,
            };
            if same {
                return x;
            }
        }
        let i = self.nodes.len();
        self.nodes.push(m.clone());
        self.meta.push(None);
        self.split_of.push(None);
        i
    }

    pub fn to_json(&self) -> (Value, Value) {
        let nodes = self
            .nodes
            .iter()
            .zip(&self.meta)
            .map(|(m, meta)| {
                let mut o = json!({ "matrix": m.to_json() });
                if let Some(meta) = meta {
                    o["meta"] = serde_json::to_value(meta).unwrap_or(Value::Null);
                }
                o
            })
            .collect();
        let splits = self
            .splits
            .iter()
            .map(|s| json!({ "parent": s.parent, "b": s.b, "c": s.c, "lambda": s.lambda.to_json() }))
            .collect();
        (Value::Array(nodes), Value::Array(splits))
    }

    pub fn from_json(nodes: &Value, splits: &Value) -> Result<Self> {
        let nodes = nodes.as_array().ok_or_else(|| ser("nodes must be an array"))?;
        let first = nodes.first().ok_or_else(|| ser("empty node table"))?;
        let mut tree = SplitTree::new(SquareMatrix::from_json(&first["matrix"])?);
        for n in &nodes[1..] {
            tree.add_node(SquareMatrix::from_json(&n["matrix"])?);
        }
        for (i, n) in nodes.iter().enumerate() {
            if let Some(meta) = n.get("meta") {
                let get = |k: &str| meta.get(k).and_then(Value::as_u64).unwrap_or(0) as u32;
                tree.meta[i] = Some(NodeMeta { beta: get("beta"), gamma: get("gamma"), depth: get("depth") });
            }
        }
        for s in splits.as_array().ok_or_else(|| ser("splits must be an array"))? {
            let idx = |k: &str| {
                s.get(k)
                    .and_then(Value::as_u64)
                    .map(|v| v as usize)
                    .ok_or_else(|| ser("split index missing"))
            };
            tree.add_split(idx("parent")?, T::from_json(&s["lambda"])?, idx("b")?, idx("c")?)?;
        }
        Ok(tree)
    }
}

fn ser(msg: &str) -> Error {
    Error::Serialization(msg.to_string())
}

/// Drops zero weights and merges atoms with equal matrices, keeping first-seen order.
pub fn merge_atoms<T: Scalar>(atoms: Vec<Atom<T>>) -> Vec<Atom<T>> {
    let mut out: Vec<Atom<T>> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for a in atoms {
        if a.weight.is_zero() {
            continue;
        }
        let slot = match matrix_key(&a.matrix) {
            Some(k) => index.get(&k).copied().or_else(|| {
                index.insert(k, out.len());
                None
            }),
            None => out.iter().position(|b| b.matrix.same_as(&a.matrix, MERGE_ABS)),
        };
        match slot {
            Some(i) => out[i].weight = out[i].weight.clone() + a.weight,
            None => out.push(a),
        }
    }
    out
}

/// Finitely supported probability measure on `n × n` matrices.
#[derive(Clone, Debug)]
pub struct DiscreteMatrixMeasure<T> {
    n: usize,
    atoms: Vec<Atom<T>>,
    certificate: Option<SplitTree<T>>,
}

pub type ExactMeasure = DiscreteMatrixMeasure<Rational>;
pub type ApproxMeasure = DiscreteMatrixMeasure<f64>;

/// Kind of certificate violation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    WeightSum,
    NegativeWeight,
    LambdaRange,
    SplitBarycenter,
    RankOne,
    Structure,
    LeafMismatch,
    Barycenter,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending split (index into the split list) or atom, when applicable.
    pub index: Option<usize>,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateStatus {
    Pass,
    Fail,
    Uncertified,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateReport {
    pub status: CertificateStatus,
    pub nodes: usize,
    pub splits: usize,
    pub violations: Vec<Violation>,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.status == CertificateStatus::Pass
    }
}

/// One sample of `t ↦ mass{|A| > t}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TailPoint<T> {
    pub t: T,
    pub mass: T,
}

/// Sampled tail profile; masses are nonincreasing in `t` once sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct TailProfile<T> {
    pub points: Vec<TailPoint<T>>,
}

fn weight_sum_ok<T: Scalar>(total: &T) -> bool {
    total.close(&T::one(), 1.0, SPLIT_ABS)
}

impl<T: Scalar> DiscreteMatrixMeasure<T> {
    /// Validated constructor: merges duplicates, drops zero weights, checks mass 1.
    pub fn new(atoms: Vec<Atom<T>>, certificate: Option<SplitTree<T>>) -> Result<Self> {
        let n = atoms
            .first()
            .map(|a| a.matrix.n())
            .ok_or_else(|| Error::InvalidInput("empty atom list".into()))?;
        for a in &atoms {
            if a.matrix.n() != n {
                return Err(Error::DimensionMismatch { expected: n, got: a.matrix.n() });
            }
            if a.weight.is_negative() {
                return Err(Error::InvalidInput("negative atom weight".into()));
            }
        }
        let atoms = merge_atoms(atoms);
        let total = atoms.iter().fold(T::zero(), |s, a| s + a.weight.clone());
        if !weight_sum_ok(&total) {
            return Err(Error::InvalidInput(format!("weights sum to {}", total.to_float())));
        }
        Ok(Self { n, atoms, certificate })
    }

    /// Structure-only constructor used for deserialization; certification
    /// reports any mass defect.
    pub fn from_parts(n: usize, atoms: Vec<Atom<T>>, certificate: Option<SplitTree<T>>) -> Self {
        Self { n, atoms, certificate }
    }

    pub fn dirac(a: SquareMatrix<T>) -> Self {
        let n = a.n();
        Self {
            n,
            atoms: vec![Atom { matrix: a.clone(), weight: T::one() }],
            certificate: Some(SplitTree::new(a)),
        }
    }

    /// Measure of the leaves of a certificate.
    pub fn from_tree(tree: SplitTree<T>) -> Result<Self> {
        let atoms = tree.leaf_atoms()?;
        Self::new(atoms, Some(tree))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn atoms(&self) -> &[Atom<T>] {
        &self.atoms
    }

    pub fn certificate(&self) -> Option<&SplitTree<T>> {
        self.certificate.as_ref()
    }

    pub fn into_certificate(self) -> Option<SplitTree<T>> {
        self.certificate
    }

    pub fn total_mass(&self) -> T {
        self.atoms.iter().fold(T::zero(), |s, a| s + a.weight.clone())
    }

    /// Mass of the atoms satisfying `pred`.
    pub fn mass_where(&self, pred: impl Fn(&SquareMatrix<T>) -> bool) -> T {
        self.atoms
            .iter()
            .filter(|a| pred(&a.matrix))
            .fold(T::zero(), |s, a| s + a.weight.clone())
    }

    pub fn barycenter(&self) -> Result<SquareMatrix<T>> {
        if self.atoms.is_empty() {
            return Err(Error::InvalidInput("empty atom list".into()));
        }
        Ok(self
            .atoms
            .iter()
            .fold(SquareMatrix::zeros(self.n), |s, a| s.add(&a.matrix.scale(&a.weight))))
    }

    /// Largest operator norm over the support.
    pub fn max_norm(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| crate::numeric::op_norm(&a.matrix.to_f64()))
            .fold(0.0, f64::max)
    }

    /// `mass{|A| > t}` for each threshold.
    pub fn tail(&self, thresholds: &[T]) -> TailProfile<T> {
        let points = thresholds
            .iter()
            .map(|t| TailPoint { t: t.clone(), mass: self.mass_where(|a| T::norm_exceeds(a, t)) })
            .collect();
        TailProfile { points }
    }

    /// Checks every split and the leaf/atom correspondence.
    pub fn certify(&self) -> CertificateReport {
        let Some(tree) = &self.certificate else {
            return CertificateReport {
                status: CertificateStatus::Uncertified,
                nodes: 0,
                splits: 0,
                violations: Vec::new(),
            };
        };
        let mut v = Vec::new();
        let total = self.total_mass();
        if !weight_sum_ok(&total) {
            v.push(Violation {
                kind: ViolationKind::WeightSum,
                index: None,
                detail: format!("weights sum to {}", describe(&total)),
            });
        }
        for (i, a) in self.atoms.iter().enumerate() {
            if a.weight.is_negative() {
                v.push(Violation {
                    kind: ViolationKind::NegativeWeight,
                    index: Some(i),
                    detail: describe(&a.weight),
                });
            }
            if a.matrix.n() != self.n {
                v.push(Violation {
                    kind: ViolationKind::Structure,
                    index: Some(i),
                    detail: "atom dimension differs".into(),
                });
            }
        }
        for (s, sp) in tree.splits.iter().enumerate() {
            if sp.lambda.is_negative() || sp.lambda > T::one() {
                v.push(Violation {
                    kind: ViolationKind::LambdaRange,
                    index: Some(s),
                    detail: describe(&sp.lambda),
                });
            }
            let (p, b, c) = (&tree.nodes[sp.parent], &tree.nodes[sp.b], &tree.nodes[sp.c]);
            if p.n() != b.n() || p.n() != c.n() {
                v.push(Violation {
                    kind: ViolationKind::Structure,
                    index: Some(s),
                    detail: "split dimensions differ".into(),
                });
                continue;
            }
            let mix = b.scale(&sp.lambda).add(&c.scale(&(T::one() - sp.lambda.clone())));
            let scale = p.max_abs().max(1.0);
            if !mix.same_as(p, SPLIT_ABS * scale) {
                v.push(Violation {
                    kind: ViolationKind::SplitBarycenter,
                    index: Some(s),
                    detail: format!("|λb + (1−λ)c − parent| = {:e}", mix.max_abs_diff(p)),
                });
            }
            if !T::rank_at_most_one(&b.sub(c)) {
                v.push(Violation {
                    kind: ViolationKind::RankOne,
                    index: Some(s),
                    detail: "b − c has rank above one".into(),
                });
            }
        }
        match tree.leaf_atoms() {
            Err(e) => v.push(Violation { kind: ViolationKind::Structure, index: None, detail: e.to_string() }),
            Ok(leaves) => {
                let reached = tree.reachable();
                if reached.iter().any(|r| !r) {
                    v.push(Violation {
                        kind: ViolationKind::Structure,
                        index: None,
                        detail: "node table has nodes unreachable from the root".into(),
                    });
                }
                compare_leaves(&leaves, &self.atoms, &mut v);
            }
        }
        if let Ok(bar) = self.barycenter() {
            let scale = tree.root().max_abs().max(1.0);
            if !bar.same_as(tree.root(), SPLIT_ABS * scale) {
                v.push(Violation {
                    kind: ViolationKind::Barycenter,
                    index: None,
                    detail: format!("|barycenter − root| = {:e}", bar.max_abs_diff(tree.root())),
                });
            }
        }
        CertificateReport {
            status: if v.is_empty() { CertificateStatus::Pass } else { CertificateStatus::Fail },
            nodes: tree.nodes.len(),
            splits: tree.splits.len(),
            violations: v,
        }
    }

    /// `Σ w_j ν_j`. With `base`, whose leaves must be the roots of the inner
    /// certificates, the inner certificates are grafted onto it and the
    /// result is certified; without it the result carries no certificate
    /// unless there is a single component.
    pub fn compose(outer: &[(T, Self)], base: Option<&SplitTree<T>>) -> Result<Self> {
        if outer.is_empty() {
            return Err(Error::InvalidInput("empty composition".into()));
        }
        let total = outer.iter().fold(T::zero(), |s, (w, _)| s + w.clone());
        if !weight_sum_ok(&total) {
            return Err(Error::InvalidInput(format!("outer weights sum to {}", total.to_float())));
        }
        let mut atoms = Vec::new();
        for (w, nu) in outer {
            if w.is_negative() {
                return Err(Error::InvalidInput("negative outer weight".into()));
            }
            for a in &nu.atoms {
                atoms.push(Atom { matrix: a.matrix.clone(), weight: a.weight.clone() * w.clone() });
            }
        }
        let certificate = match base {
            Some(base) => Some(Self::graft_all(base, outer)?),
            None if outer.len() == 1 => outer[0].1.certificate.clone(),
            None => None,
        };
        Self::new(atoms, certificate)
    }

    fn graft_all(base: &SplitTree<T>, outer: &[(T, Self)]) -> Result<SplitTree<T>> {
        let mut tree = base.clone();
        let leaves: Vec<usize> = tree.leaf_masses()?.into_iter().map(|(i, _)| i).collect();
        for (_, nu) in outer {
            let cert = nu
                .certificate
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("component without certificate".into()))?;
            let targets: Vec<usize> = leaves
                .iter()
                .copied()
                .filter(|&i| tree.nodes[i].same_as(cert.root(), MERGE_ABS))
                .collect();
            if targets.is_empty() {
                return Err(Error::InvalidInput("component root is not a leaf of the base".into()));
            }
            for t in targets {
                if tree.split_of[t].is_none() {
                    tree.graft(t, cert)?;
                }
            }
        }
        Ok(tree)
    }

    pub fn to_json(&self) -> Value {
        let atoms: Vec<Value> = self
            .atoms
            .iter()
            .map(|a| json!({ "matrix": a.matrix.to_json(), "weight": a.weight.to_json() }))
            .collect();
        let mut out = json!({ "n": self.n, "mode": T::MODE, "atoms": atoms });
        match &self.certificate {
            Some(tree) => {
                let (nodes, splits) = tree.to_json();
                out["nodes"] = nodes;
                out["splits"] = splits;
            }
            None => out["splits"] = Value::Null,
        }
        out
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let mode = v.get("mode").and_then(Value::as_str).unwrap_or(T::MODE);
        if mode != T::MODE {
            return Err(ser(&format!("expected mode {}, found {mode}", T::MODE)));
        }
        let n = v.get("n").and_then(Value::as_u64).ok_or_else(|| ser("missing n"))? as usize;
        let atoms = v
            .get("atoms")
            .and_then(Value::as_array)
            .ok_or_else(|| ser("missing atoms"))?
            .iter()
            .map(|a| {
                Ok(Atom { matrix: SquareMatrix::from_json(&a["matrix"])?, weight: T::from_json(&a["weight"])? })
            })
            .collect::<Result<Vec<_>>>()?;
        if atoms.iter().any(|a| a.matrix.n() != n) {
            return Err(ser("atom dimension differs from n"));
        }
        let certificate = match (v.get("nodes"), v.get("splits")) {
            (Some(nodes), Some(splits)) if !splits.is_null() => Some(SplitTree::from_json(nodes, splits)?),
            _ => None,
        };
        Ok(Self { n, atoms, certificate })
    }
}

impl DiscreteMatrixMeasure<Rational> {
    /// Rounds every entry and weight to binary64.
    pub fn to_approx(&self) -> ApproxMeasure {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom { matrix: a.matrix.to_f64(), weight: a.weight.to_float() })
            .collect();
        let certificate = self.certificate.as_ref().map(|t| {
            let mut out = SplitTree::new(t.root().to_f64());
            for m in &t.nodes[1..] {
                out.add_node(m.to_f64());
            }
            out.meta.clone_from(&t.meta);
            for s in &t.splits {
                let _ = out.add_split(s.parent, s.lambda.to_float(), s.b, s.c);
            }
            out
        });
        DiscreteMatrixMeasure { n: self.n, atoms, certificate }
    }
}

fn describe<T: Scalar>(x: &T) -> String {
    match x.to_json() {
        Value::String(s) => s,
        other => other.to_string(),
    }
}

fn compare_leaves<T: Scalar>(leaves: &[Atom<T>], atoms: &[Atom<T>], v: &mut Vec<Violation>) {
    let atoms_merged = merge_atoms(atoms.to_vec());
    if atoms_merged.len() != atoms.len() {
        v.push(Violation {
            kind: ViolationKind::Structure,
            index: None,
            detail: "atom list contains duplicate or zero-weight atoms".into(),
        });
    }
    for (i, a) in atoms_merged.iter().enumerate() {
        match leaves.iter().find(|l| l.matrix.same_as(&a.matrix, MERGE_ABS)) {
            None => v.push(Violation {
                kind: ViolationKind::LeafMismatch,
                index: Some(i),
                detail: "atom is not a certificate leaf".into(),
            }),
            Some(l) if !l.weight.close(&a.weight, 1.0, SPLIT_ABS) => v.push(Violation {
                kind: ViolationKind::LeafMismatch,
                index: Some(i),
                detail: format!("atom weight {} but leaf mass {}", describe(&a.weight), describe(&l.weight)),
            }),
            Some(_) => {}
        }
    }
    for l in leaves {
        if !atoms_merged.iter().any(|a| a.matrix.same_as(&l.matrix, MERGE_ABS)) {
            v.push(Violation {
                kind: ViolationKind::LeafMismatch,
                index: None,
                detail: format!("leaf with mass {} missing from the atom list", describe(&l.weight)),
            });
        }
    }
}

/// Exact `"p/q"` rendering paired with a decimal, for reports.
pub fn rational_pair(r: &Rational) -> Value {
    json!({ "exact": format_rational(r), "decimal": r.to_float() })
}

/// `Σ weights` of a list, for tests and reports.
pub fn weight_total<T: Scalar>(atoms: &[Atom<T>]) -> T {
    atoms.iter().fold(T::zero(), |s, a| s + a.weight.clone())
}

/// True iff the two atom lists agree as measures (order-insensitive).
pub fn same_atoms<T: Scalar>(a: &[Atom<T>], b: &[Atom<T>]) -> bool {
    let a = merge_atoms(a.to_vec());
    let b = merge_atoms(b.to_vec());
    a.len() == b.len()
        && a.iter().all(|x| {
            b.iter()
                .any(|y| y.matrix.same_as(&x.matrix, MERGE_ABS) && y.weight.close(&x.weight, 1.0, SPLIT_ABS))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{rat, ExactMatrix};
    use num::Zero;

    fn d(v: &[i64]) -> ExactMatrix {
        ExactMatrix::from_diag(&v.iter().map(|&x| rat(x, 1)).collect::<Vec<_>>())
    }

    fn nu2() -> ExactMeasure {
        let mut t = SplitTree::new(d(&[1, 1]));
        let b = t.add_node(d(&[0, 1]));
        let c = t.add_node(d(&[2, 1]));
        t.add_split(0, rat(1, 2), b, c).unwrap();
        let b2 = t.add_node(d(&[2, 0]));
        let c2 = t.add_node(d(&[2, 2]));
        t.add_split(c, rat(1, 2), b2, c2).unwrap();
        ExactMeasure::from_tree(t).unwrap()
    }

    #[test]
    fn nu2_certifies_and_has_identity_barycenter() {
        let nu = nu2();
        assert!(nu.certify().passed());
        assert_eq!(nu.barycenter().unwrap(), ExactMatrix::identity(2));
        assert_eq!(nu.atoms().len(), 3);
    }

    #[test]
    fn missing_certificate_is_uncertified() {
        let nu = ExactMeasure::new(vec![Atom { matrix: d(&[1, 1]), weight: rat(1, 1) }], None).unwrap();
        assert_eq!(nu.certify().status, CertificateStatus::Uncertified);
    }

    #[test]
    fn perturbed_weight_is_reported() {
        let nu = nu2().to_approx();
        let mut atoms = nu.atoms().to_vec();
        let i = atoms.iter().position(|a| (a.weight - 0.25).abs() < 1e-15).unwrap();
        atoms[i].weight = 0.25 + 1e-6;
        let bad = ApproxMeasure::from_parts(2, atoms, nu.certificate().cloned());
        let rep = bad.certify();
        assert_eq!(rep.status, CertificateStatus::Fail);
        assert!(rep.violations.iter().any(|v| v.kind == ViolationKind::WeightSum));
    }

    #[test]
    fn rank_two_split_is_reported() {
        let mut t = SplitTree::new(ExactMatrix::identity(2).scale(&rat(3, 2)));
        let b = t.add_node(ExactMatrix::identity(2));
        let c = t.add_node(ExactMatrix::identity(2).scale(&rat(2, 1)));
        t.add_split(0, rat(1, 2), b, c).unwrap();
        let rep = ExactMeasure::from_tree(t).unwrap().certify();
        assert!(rep.violations.iter().any(|v| v.kind == ViolationKind::RankOne));
    }

    #[test]
    fn compose_merges_and_grafts() {
        let a = d(&[1, 1]);
        let one = ExactMeasure::compose(&[(rat(1, 1), ExactMeasure::dirac(a.clone()))], None).unwrap();
        assert_eq!(one.atoms().len(), 1);
        let two = ExactMeasure::compose(
            &[(rat(1, 2), ExactMeasure::dirac(a.clone())), (rat(1, 2), ExactMeasure::dirac(a.clone()))],
            None,
        )
        .unwrap();
        assert_eq!(two.atoms(), &[Atom { matrix: a, weight: rat(1, 1) }]);

        // Refining one leaf of nu2 through a base graft keeps a valid certificate.
        let nu = nu2();
        let mut t = SplitTree::new(d(&[2, 2]));
        let b = t.add_node(d(&[0, 2]));
        let c = t.add_node(d(&[3, 2]));
        t.add_split(0, rat(1, 3), b, c).unwrap();
        let refined = ExactMeasure::from_tree(t).unwrap();
        let outer: Vec<(Rational, ExactMeasure)> = nu
            .atoms()
            .iter()
            .map(|at| {
                let inner = if at.matrix == d(&[2, 2]) { refined.clone() } else { ExactMeasure::dirac(at.matrix.clone()) };
                (at.weight.clone(), inner)
            })
            .collect();
        let composed = ExactMeasure::compose(&outer, nu.certificate()).unwrap();
        assert!(composed.certify().passed(), "{:?}", composed.certify());
        assert_eq!(composed.barycenter().unwrap(), ExactMatrix::identity(2));
    }

    #[test]
    fn tail_values() {
        let nu = nu2();
        let p = nu.tail(&[rat(1, 1), rat(2, 1)]);
        assert_eq!(p.points[0].mass, rat(1, 2));
        assert_eq!(p.points[1].mass, rat(0, 1));
        let delta = ExactMeasure::dirac(ExactMatrix::identity(2));
        assert!(delta.tail(&[rat(2, 1)]).points[0].mass.is_zero());
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let nu = nu2();
        let back = ExactMeasure::from_json(&nu.to_json()).unwrap();
        assert_eq!(back.atoms(), nu.atoms());
        assert!(back.certify().passed());
        assert_eq!(back.to_json(), nu.to_json());
    }
}
