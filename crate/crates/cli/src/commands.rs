//! Subcommand handlers. Each returns `Ok(true)` when every check passed.

use std::path::{Path, PathBuf};

use laminate_forge::lamination::{self, bridge_split, lamlem_split, verify_bridge, verify_lamlem, Lamination, LeafClass};
use laminate_forge::measure::{CertificateReport, DiscreteMatrixMeasure};
use laminate_forge::numeric::{format_rational, op_norm, parse_rational, sym_eigen};
use laminate_forge::pamap::{
    check_injectivity, continuity_report, gradient_histogram, histogram_csv, map_svg, realize_laminate_with,
    realize_simple_with, reconstruct_potential_seeded, BoxDomain, PiecewiseAffineMap, RealizeParams, SplitStats,
    SvgColoring,
};
use laminate_forge::pipeline::{run_theorem_on, StageConfig};
use laminate_forge::staircase::{self, staircase_sequence, verify_staircase_bounds, StairParams};
use laminate_forge::target_sets::{self, nearest_e_a, psd_spectrum, R_SMALL_TERM_NAMES};
use laminate_forge::tolerances::{BOUNDARY_ABS, CONTINUITY_ABS, VOLUME_REL};
use laminate_forge::{ExactMatrix, Matrix, Rational, Scalar, SquareMatrix};
use serde_json::{json, Value};

use crate::args::*;
use crate::config::Layered;
use crate::output::{kv, pass_word, sci, CliError, OutDir, Table};

/// Budget used when neither a flag nor the config sets one.
pub const DEFAULT_PIPELINE_BUDGET: usize = 200_000;
pub const DEFAULT_SEED: u64 = 7;

pub struct Ctx {
    pub out: OutDir,
    pub seed: u64,
    pub mode: Mode,
}

type Outcome = Result<bool, CliError>;

// ---------------------------------------------------------------------------
// Parsing helpers

/// Exact value of a decimal literal such as `-0.125` or `3.5e-2`; plain
/// rationals `p/q` and integers go through the library parser.
pub fn parse_number(s: &str) -> Result<Rational, CliError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(CliError::Usage("empty number".into()));
    }
    if s.contains('/') || s.bytes().all(|b| b.is_ascii_digit() || b == b'-' || b == b'+') {
        let t = s.strip_prefix('+').unwrap_or(s);
        return parse_rational(t).map_err(|_| CliError::Usage(format!("not a number: {s:?}")));
    }
    let (mant, exp) = match s.find(['e', 'E']) {
        Some(i) => {
            let e: i64 = s[i + 1..].parse().map_err(|_| CliError::Usage(format!("not a number: {s:?}")))?;
            (&s[..i], e)
        }
        None => (s, 0),
    };
    let (neg, body) = match mant.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, mant.strip_prefix('+').unwrap_or(mant)),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let digits = format!("{int}{frac}");
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || exp.abs() > 400 {
        return Err(CliError::Usage(format!("not a number: {s:?}")));
    }
    let mut v = parse_rational(&digits).map_err(|_| CliError::Usage(format!("not a number: {s:?}")))?;
    let shift = exp - frac.len() as i64;
    let ten = Rational::from_integer(10.into());
    v *= laminate_forge::numeric::rpow(&ten, shift);
    Ok(if neg { -v } else { v })
}

fn split_entries(s: &str) -> Vec<&str> {
    s.split([',', ' ', '\t']).filter(|e| !e.is_empty()).collect()
}

/// `"a b; c d"` (or commas) into an exact matrix.
pub fn parse_matrix(text: &str) -> Result<ExactMatrix, CliError> {
    let t = text.trim().trim_start_matches('[').trim_end_matches(']');
    let rows = t
        .split(';')
        .filter(|r| !r.trim().is_empty())
        .map(|r| split_entries(r).into_iter().map(parse_number).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SquareMatrix::from_rows(rows)?)
}

pub fn parse_diag(text: &str) -> Result<ExactMatrix, CliError> {
    let d = split_entries(text.trim().trim_start_matches('[').trim_end_matches(']'))
        .into_iter()
        .map(parse_number)
        .collect::<Result<Vec<_>, _>>()?;
    if d.is_empty() {
        return Err(CliError::Usage("empty diagonal".into()));
    }
    laminate_forge::numeric::check_dim(d.len())?;
    Ok(ExactMatrix::from_diag(&d))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Usage(format!("{} is not valid JSON: {e}", path.display())))
}

fn matrix_input(cfg: &mut Layered, input: MatrixInput) -> Result<ExactMatrix, CliError> {
    let matrix = cfg.text("matrix", input.matrix)?;
    let diag = cfg.text("diag", input.diag)?;
    let file: Option<PathBuf> = cfg.opt("a_file", input.a_file)?;
    match (matrix, diag, file) {
        (Some(m), None, None) => parse_matrix(&m),
        (None, Some(d), None) => parse_diag(&d),
        (None, None, Some(p)) => {
            let text = read_text(&p)?;
            match serde_json::from_str::<Value>(&text) {
                Ok(v) => Ok(ExactMatrix::from_json(&v)?),
                Err(_) => parse_matrix(&text),
            }
        }
        (None, None, None) => Err(CliError::Usage("give one of --matrix, --diag or --A".into())),
        _ => Err(CliError::Usage("--matrix, --diag and --A are mutually exclusive".into())),
    }
}

fn parse_domain(text: Option<String>) -> Result<BoxDomain, CliError> {
    let Some(t) = text else { return Ok(BoxDomain::unit(2)) };
    let v: Vec<f64> = split_entries(&t)
        .into_iter()
        .map(|x| x.parse::<f64>().map_err(|_| CliError::Usage(format!("bad domain entry {x:?}"))))
        .collect::<Result<_, _>>()?;
    if v.len() != 4 {
        return Err(CliError::Usage("domain must be x0,y0,x1,y1".into()));
    }
    Ok(BoxDomain::new(vec![v[0], v[1]], vec![v[2], v[3]])?)
}

fn both(r: &Rational) -> String {
    let exact = format_rational(r);
    let dec = sci(r.to_float());
    if exact.len() > 40 {
        format!("{dec} (exact value in JSON)")
    } else if exact == dec || !exact.contains('/') {
        exact
    } else {
        format!("{exact} ≈ {dec}")
    }
}

fn exact_json(r: &Rational) -> Value {
    json!({ "exact": format_rational(r), "decimal": r.to_float() })
}

fn matrix_text<T: Scalar>(m: &SquareMatrix<T>) -> String {
    if m.is_diagonal() {
        let d: Vec<String> = m.diag().iter().map(scalar_text).collect();
        format!("diag({})", d.join(", "))
    } else {
        let rows: Vec<String> =
            m.rows().iter().map(|r| r.iter().map(scalar_text).collect::<Vec<_>>().join(" ")).collect();
        format!("[{}]", rows.join("; "))
    }
}

fn scalar_text<T: Scalar>(x: &T) -> String {
    match x.to_json() {
        Value::String(s) => s,
        v => v.to_string(),
    }
}

fn require_exact(ctx: &Ctx, what: &str) -> Result<(), CliError> {
    if ctx.mode == Mode::Approx {
        return Err(CliError::Usage(format!("{what} runs in exact arithmetic only")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// staircase

pub fn staircase(ctx: &Ctx, cfg: &mut Layered, a: StaircaseArgs) -> Outcome {
    let n = cfg.get("n", a.n, 2)?;
    let m = cfg.get("m", a.m, 2)?;
    let k = cfg.get("k", a.k, 2)?;
    let verify = cfg.switch("verify", a.verify)?;
    cfg.finish()?;
    let p = StairParams::new(n, m, k)?;
    let seq = staircase_sequence(&p)?;
    let mut t = Table::new(&["k", "atom", "class"]);
    for (idx, nu) in seq.iter().enumerate() {
        let level = idx as u32 + 1;
        for (atom, line) in nu.atoms().iter().zip(staircase::describe_atoms(nu)) {
            let cls = staircase::class_label(&staircase::classify(&atom.matrix, level, &p));
            t.row(vec![level.to_string(), line, cls]);
        }
    }
    t.print();
    let measures: Vec<Value> = seq
        .iter()
        .map(|nu| if ctx.mode == Mode::Approx { nu.to_approx().to_json() } else { nu.to_json() })
        .collect();
    ctx.out.write_json("measures.json", &json!({ "n": n, "m": m, "k": k, "measures": measures }))?;
    if !verify {
        return Ok(true);
    }
    let rep = verify_staircase_bounds(&seq, &p);
    println!();
    let mut t = Table::new(&["k", "kind", "i/t", "lhs", "rhs", "result"]);
    for r in &rep.records {
        t.row(vec![r.k.to_string(), r.kind.to_string(), r.index.to_string(), both(&r.lhs), both(&r.rhs), pass_word(r.pass)]);
    }
    t.print();
    for s in &rep.structural {
        println!("structural failure: {s}");
    }
    println!("theta = {}, empirical max t^m tail = {}", both(&rep.theta), both(&rep.empirical_tail_max));
    println!("staircase bounds: {}", pass_word(rep.passed()));
    ctx.out.write_json("report.json", &rep.to_json())?;
    Ok(rep.passed())
}

// ---------------------------------------------------------------------------
// constants

pub fn constants(ctx: &Ctx, cfg: &mut Layered, a: ConstantsArgs) -> Outcome {
    require_exact(ctx, "constants")?;
    let n = cfg.get("n", a.n, 2)?;
    let m = cfg.get("m", a.m, 2)?;
    let j = cfg.get("j", a.j, 2)?;
    let r = parse_number(&cfg.text("r", a.r)?.unwrap_or_else(|| "2".into()))?;
    let a0: Option<usize> = cfg.opt("a0", a.a0)?;
    let a_idx: Option<usize> = cfg.opt("a", a.a)?;
    let kmax = cfg.get("kmax", a.kmax, 6)?;
    let j_max = cfg.get("j_max", a.j_max, 12)?;
    cfg.finish()?;
    StairParams::new(n, m, 1)?;
    if a0.or(a_idx).is_some_and(|x| x > n - m) {
        return Err(CliError::Usage(format!("a0 and a must not exceed n - m = {}", n - m)));
    }
    let rho = target_sets::rho(j, &r, m);
    let small = target_sets::r_small_terms(j, &r, m, n)?;
    let (u, v, w) = target_sets::uvw(j, &r, m, n)?;
    let mut t = kv(&[
        ("rho_{j,R}", both(&rho)),
        ("r_{j,R}", both(&small.value)),
        ("U", both(&u)),
        ("V", both(&v)),
        ("W", both(&w)),
    ]);
    for (name, term) in R_SMALL_TERM_NAMES.iter().zip(&small.terms) {
        t.row(vec![format!("r term {name}"), both(term)]);
    }
    let a0s: Vec<usize> = a0.map(|x| vec![x]).unwrap_or_else(|| (0..=n - m).collect());
    let as_: Vec<usize> = a_idx.map(|x| vec![x]).unwrap_or_else(|| (0..=n - m).collect());
    let mut cb = Vec::new();
    for &x in &a0s {
        for &y in &as_ {
            let c = target_sets::c_bound(j, &r, x, y, m, n)?;
            t.row(vec![format!("C(j,R,a0={x},a={y})"), both(&c)]);
            cb.push(json!({ "a0": x, "a": y, "value": exact_json(&c) }));
        }
    }
    let theta = staircase::theta(n, m);
    let prod = staircase::infinite_product_upper(n);
    t.row(vec!["Theta(n,m)".into(), both(&theta)]);
    t.row(vec!["prod (1 + k^-n) upper".into(), both(&prod)]);
    let mut ck = Vec::new();
    for k in 1..=kmax {
        let c = staircase::c_k(k, n);
        t.row(vec![format!("C_{k}"), both(&c)]);
        ck.push(json!({ "k": k, "value": exact_json(&c) }));
    }
    let j1 = lamination::search_j1(n, m, j_max);
    t.row(vec![format!("smallest admissible j1 <= {j_max}"), j1.map_or("none".into(), |x| x.to_string())]);
    t.print();
    ctx.out.write_json(
        "constants.json",
        &json!({
            "n": n, "m": m, "j": j, "R": format_rational(&r),
            "rho": exact_json(&rho),
            "r_small": exact_json(&small.value),
            "r_small_terms": R_SMALL_TERM_NAMES.iter().zip(&small.terms)
                .map(|(name, v)| json!({ "name": name, "value": exact_json(v) })).collect::<Vec<_>>(),
            "uvw": [exact_json(&u), exact_json(&v), exact_json(&w)],
            "c_bound": cb,
            "theta": exact_json(&theta),
            "infinite_product_upper": exact_json(&prod),
            "c_k": ck,
            "j1_search": { "j_max": j_max, "j1": j1 },
        }),
    )?;
    Ok(true)
}

// ---------------------------------------------------------------------------
// lamlem and bridge

fn class_text(c: &LeafClass) -> String {
    match c {
        LeafClass::Ej => "E_j".into(),
        LeafClass::Ea(a) => format!("E^{a}"),
        LeafClass::Unclassified => "unclassified".into(),
    }
}

fn atoms_table<T: Scalar>(out: &Lamination<T>, classes: Option<&[LeafClass]>) {
    let mut t = Table::new(&["leaf", "matrix", "weight", "class"]);
    let tree = out.measure.certificate();
    for (i, l) in out.leaves.iter().enumerate() {
        let matrix = tree.map(|tr| matrix_text(tr.node(l.node))).unwrap_or_default();
        let cls = classes.and_then(|c| c.get(i)).map(class_text).unwrap_or_default();
        t.row(vec![i.to_string(), matrix, sci(l.weight.to_float()), cls]);
    }
    t.print();
}

fn lamlem_in<T: Scalar>(ctx: &Ctx, a: &SquareMatrix<T>, j: u32, r: &Rational, a0: usize, m: usize) -> Outcome {
    let n = a.n();
    let out = lamlem_split(a, j, r, a0, m)?;
    let rep = verify_lamlem(&out, a, j, r, a0, m)?;
    atoms_table(&out, Some(&rep.classes));
    println!();
    let mut t = kv(&[
        ("certified", pass_word(rep.certified)),
        ("barycenter relative error", sci(rep.barycenter_rel_error)),
        ("max atom norm", sci(rep.max_norm)),
        ("leaf weight bound failures", rep.leaf_bound_failures.to_string()),
        ("exclusivity failures", rep.exclusivity_failures.to_string()),
        ("atoms", format!("{} (limit {})", rep.atoms, 1usize << n)),
    ]);
    for (k, mass, bound, pass) in &rep.mass_bounds {
        t.row(vec![format!("mass E^{k}_(j,R+1) <= C(j,R,{a0},{k})"), format!("{} <= {} {}", sci(*mass), sci(*bound), pass_word(*pass))]);
    }
    t.row(vec!["lamlem".into(), pass_word(rep.passed(n))]);
    t.print();
    ctx.out.write_json("measure.json", &out.measure.to_json())?;
    ctx.out.write_json("report.json", &rep.to_json(n))?;
    Ok(rep.passed(n))
}

pub fn lamlem(ctx: &Ctx, cfg: &mut Layered, a: LamlemArgs) -> Outcome {
    let mat = matrix_input(cfg, a.input)?;
    let m = cfg.get("m", a.m, 2)?;
    let j = cfg.get("j", a.j, 2)?;
    let r = parse_number(&cfg.text("r", a.r)?.unwrap_or_else(|| "2".into()))?;
    let a0_flag: Option<usize> = cfg.opt("a0", a.a0)?;
    cfg.finish()?;
    let a0 = match a0_flag {
        Some(x) => x,
        None => {
            let sig = psd_spectrum(&mat)?;
            if m > mat.n() {
                return Err(CliError::Usage(format!("m = {m} exceeds n = {}", mat.n())));
            }
            let (best, dist) = nearest_e_a(&sig, j, &r, m);
            println!("nearest step set: a0 = {best} at distance {}", both(&dist));
            best
        }
    };
    match ctx.mode {
        Mode::Exact => lamlem_in(ctx, &mat, j, &r, a0, m),
        Mode::Approx => lamlem_in(ctx, &mat.to_f64(), j, &r, a0, m),
    }
}

fn bridge_in<T: Scalar>(ctx: &Ctx, a: &SquareMatrix<T>, j: u32, m: usize) -> Outcome {
    let n = a.n();
    let out = bridge_split(a, j, m)?;
    let rep = verify_bridge(&out, a, j, m)?;
    let norm_a = op_norm(&a.to_f64());
    atoms_table(&out, None);
    println!();
    let t = kv(&[
        ("certified", pass_word(rep.certified)),
        ("barycenter relative error", sci(rep.barycenter_rel_error)),
        ("|A - P1|", format!("{} < {}", sci(rep.dist_a_p1), sci(rep.dist_bound))),
        ("P1 in E_(j+m)", pass_word(rep.p1_in_target)),
        ("other atoms classified", pass_word(rep.others_classified)),
        ("max ||P_i| - |A||", sci(rep.norm_deviation)),
        ("lambda_1", sci(rep.lambda1)),
        ("(1 - lambda_1) defect", format!("{} <= {}", sci(rep.lambda_defect), n - m + 1)),
        ("distinct atoms", format!("{} ({})", rep.atoms, pass_word(rep.distinct))),
        ("bridge", pass_word(rep.passed(n, m, norm_a))),
    ]);
    t.print();
    ctx.out.write_json("measure.json", &out.measure.to_json())?;
    ctx.out.write_json("report.json", &rep.to_json(n, m, norm_a))?;
    Ok(rep.passed(n, m, norm_a))
}

pub fn bridge(ctx: &Ctx, cfg: &mut Layered, a: BridgeArgs) -> Outcome {
    let mat = matrix_input(cfg, a.input)?;
    let m = cfg.get("m", a.m, 2)?;
    let j = cfg.get("j", a.j, 2)?;
    cfg.finish()?;
    match ctx.mode {
        Mode::Exact => bridge_in(ctx, &mat, j, m),
        Mode::Approx => bridge_in(ctx, &mat.to_f64(), j, m),
    }
}

// ---------------------------------------------------------------------------
// map checks shared by realize and verify

struct MapChecks {
    json: Value,
    passed: bool,
}

fn map_checks(f: &PiecewiseAffineMap, seed: u64) -> MapChecks {
    let (vol_rel, valid) = f.volume_check();
    let cont = continuity_report(f).0;
    let bres = f.boundary_residual();
    let inj = check_injectivity(f);
    let pot = reconstruct_potential_seeded(f, seed);
    let (pot_ok, pot_msg) = match &pot {
        Ok(p) => (p.is_convex(), if p.is_convex() { "convex".to_string() } else { "not convex".to_string() }),
        Err(e) => (false, e.to_string()),
    };
    let checks = [
        ("cells valid", valid, String::new()),
        ("volume closure", vol_rel <= VOLUME_REL, sci(vol_rel)),
        ("continuity", cont.max_residual <= CONTINUITY_ABS, sci(cont.max_residual)),
        ("boundary trace", bres <= BOUNDARY_ABS, sci(bres)),
        ("injectivity", inj.passed, inj.message.clone()),
        ("convex potential", pot_ok, pot_msg.clone()),
    ];
    let mut t = Table::new(&["check", "result", "detail"]);
    for (name, ok, detail) in &checks {
        t.row(vec![name.to_string(), pass_word(*ok), detail.clone()]);
    }
    t.print();
    let passed = checks.iter().all(|c| c.1);
    MapChecks {
        json: json!({
            "pass": passed,
            "cells": f.len(),
            "cells_valid": valid,
            "volume_rel_error": vol_rel,
            "continuity_max_residual": cont.max_residual,
            "shared_facets": cont.shared_facets,
            "boundary_residual": bres,
            "injectivity": inj.to_json(),
            "potential": { "convex": pot_ok, "detail": pot_msg },
            "min_eigenvalue": f.min_eigenvalue(),
            "max_gradient_norm": f.max_gradient_norm(),
        }),
        passed,
    }
}

// ---------------------------------------------------------------------------
// realize

fn min_eig(m: &Matrix) -> Result<f64, CliError> {
    Ok(sym_eigen(&m.symmetrized())?.0.into_iter().fold(f64::INFINITY, f64::min))
}

/// Largest admissible `delta` is half of `min(λ_min, separation)`; default to half of that.
fn auto_delta(atoms: &[Matrix]) -> Result<f64, CliError> {
    let mut lo = f64::INFINITY;
    for (i, a) in atoms.iter().enumerate() {
        lo = lo.min(min_eig(a)?);
        for b in &atoms[i + 1..] {
            let d = op_norm(&a.sub(b));
            if d > 0.0 {
                lo = lo.min(d);
            }
        }
    }
    Ok(0.25 * lo)
}

fn stats_json(s: &SplitStats) -> Value {
    json!({
        "node": s.node,
        "periods": s.periods,
        "rows": s.rows,
        "ratio": s.ratio,
        "band_fraction": s.band_fraction,
        "band_deviation": s.band_deviation,
        "band_min_eigenvalue": s.band_min_eigenvalue,
        "cells": s.cells,
    })
}

fn load_measure_any(path: &Path) -> Result<(Value, String), CliError> {
    let v = read_json(path)?;
    let mode = v.get("mode").and_then(Value::as_str).unwrap_or("rational").to_string();
    Ok((v, mode))
}

pub fn realize(ctx: &Ctx, cfg: &mut Layered, a: RealizeArgs) -> Outcome {
    let measure: Option<PathBuf> = cfg.opt("measure", a.measure)?;
    let lambda: Option<f64> = cfg.opt("lambda", a.lambda)?;
    let b = cfg.text("b", a.b)?;
    let c = cfg.text("c", a.c)?;
    let domain = parse_domain(cfg.text("domain", a.domain)?)?;
    let delta: Option<f64> = cfg.opt("delta", a.delta)?;
    let eps = cfg.get("eps", a.eps, 0.1)?;
    cfg.finish()?;
    let (f, stats, refs) = match (measure, lambda, b, c) {
        (Some(path), None, None, None) => {
            let (v, mode) = load_measure_any(&path)?;
            let realized = if mode == "float64" {
                let nu = DiscreteMatrixMeasure::<f64>::from_json(&v)?;
                let refs: Vec<Matrix> = nu.atoms().iter().map(|x| x.matrix.clone()).collect();
                let d = match delta { Some(d) => d, None => auto_delta(&refs)? };
                realize_laminate_with(&nu, &domain, &RealizeParams::new(d, eps)).map(|(f, s)| (f, s, refs))
            } else {
                let nu = DiscreteMatrixMeasure::<Rational>::from_json(&v)?;
                let refs: Vec<Matrix> = nu.atoms().iter().map(|x| x.matrix.to_f64()).collect();
                let d = match delta { Some(d) => d, None => auto_delta(&refs)? };
                realize_laminate_with(&nu, &domain, &RealizeParams::new(d, eps)).map(|(f, s)| (f, s, refs))
            };
            realized?
        }
        (None, Some(lambda), Some(b), Some(c)) => {
            let (bm, cm) = (parse_matrix(&b)?.to_f64(), parse_matrix(&c)?.to_f64());
            let refs = vec![bm.clone(), cm.clone()];
            let d = match delta { Some(d) => d, None => auto_delta(&refs)? };
            let (f, s) = realize_simple_with(lambda, &bm, &cm, &domain, &RealizeParams::new(d, eps))?;
            (f, vec![s], refs)
        }
        _ => return Err(CliError::Usage("give either --measure, or all of --lambda --b --c".into())),
    };
    let hist_delta = match delta { Some(d) => d, None => auto_delta(&refs)? };
    let hist = gradient_histogram(&f, &refs, hist_delta)?;
    let mut t = Table::new(&["reference", "delta", "volume fraction"]);
    for (m, d, fr) in &hist.entries {
        t.row(vec![matrix_text(m), sci(*d), sci(*fr)]);
    }
    t.row(vec!["residual".into(), String::new(), sci(hist.residual)]);
    t.print();
    println!("cells: {}, splits: {}", f.len(), stats.len());
    println!();
    let checks = map_checks(&f, ctx.seed);
    ctx.out.write_json_compact("map.json", &f.to_json())?;
    ctx.out.write_json(
        "report.json",
        &json!({
            "checks": checks.json,
            "splits": stats.iter().map(stats_json).collect::<Vec<_>>(),
            "histogram": {
                "entries": hist.entries.iter().map(|(m, d, fr)| json!({ "matrix": m.to_json(), "delta": d, "fraction": fr })).collect::<Vec<_>>(),
                "residual": hist.residual,
            },
        }),
    )?;
    ctx.out.write("histogram.csv", &histogram_csv(&hist))?;
    if ctx.out.enabled() {
        ctx.out.write("map.svg", &map_svg(&f, &SvgColoring::NearestAtom { atoms: refs, delta: hist_delta })?)?;
    }
    Ok(checks.passed)
}

// ---------------------------------------------------------------------------
// pipeline

pub fn pipeline(ctx: &Ctx, cfg: &mut Layered, a: PipelineArgs) -> Outcome {
    require_exact(ctx, "pipeline")?;
    let d = StageConfig::default();
    let sc = StageConfig {
        n: cfg.get("n", a.n, d.n)?,
        m: cfg.get("m", a.m, d.m)?,
        alpha: cfg.get("alpha", a.alpha, d.alpha)?,
        delta: cfg.get("delta", a.delta, d.delta)?,
        j1: cfg.get("j1", a.j1, d.j1)?,
        stages: cfg.get("stages", a.stages, d.stages)?,
        k_max: cfg.get("kmax", a.kmax, d.k_max)?,
        budget: cfg.get("budget", a.budget, DEFAULT_PIPELINE_BUDGET)?,
        band_fraction: cfg.get("band_fraction", a.band_fraction, d.band_fraction)?,
        seed: ctx.seed,
    };
    cfg.finish()?;
    sc.validate()?;
    let run = run_theorem_on(&sc, &BoxDomain::unit(2), ctx.out.enabled())?;
    let mut t = Table::new(&[
        "stage", "j", "cells", "splits", "member", "residual", "holder upper", "threshold", "membership", "tail slope",
    ]);
    for r in &run.reports {
        t.row(vec![
            r.stage.to_string(),
            r.target_j.to_string(),
            r.cells.to_string(),
            r.refine.splits.to_string(),
            sci(r.volumes.member),
            sci(r.volumes.residual()),
            r.increment.map_or("n/a".into(), |e| sci(e.upper())),
            sci(r.increment_threshold),
            sci(r.membership),
            r.tail_slope.map_or("n/a".into(), sci),
        ]);
    }
    t.print();
    println!();
    let mut header = vec!["stage".to_string()];
    header.extend(run.sharpness.p_grid.iter().map(|p| format!("p={p}")));
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut s = Table::new(&hdr);
    for (i, row) in run.sharpness.rows.iter().enumerate() {
        let mut cells = vec![(i + 1).to_string()];
        cells.extend(row.iter().map(|x| sci(*x)));
        s.row(cells);
    }
    s.print();
    for (p, flag) in &run.sharpness.flags {
        println!("p = {p}: {flag}");
    }
    let passed = run.increments_below_threshold() && run.increments_decreasing();
    println!("hölder increments below threshold and decreasing: {}", pass_word(passed));
    ctx.out.write_json("report.json", &run.to_json())?;
    for (r, map) in run.reports.iter().zip(&run.maps) {
        let j = r.stage;
        ctx.out.write_json_compact(&format!("stage_{j}_map.json"), &map.to_json())?;
        ctx.out.write(&format!("stage_{j}_tail.csv"), &r.tail_csv())?;
        ctx.out.write(&format!("stage_{j}.svg"), &map_svg(map, &SvgColoring::GradientNorm)?)?;
    }
    Ok(passed)
}

// ---------------------------------------------------------------------------
// verify

fn certificate_table(rep: &CertificateReport) {
    println!("certificate: {:?} ({} nodes, {} splits)", rep.status, rep.nodes, rep.splits);
    if rep.violations.is_empty() {
        return;
    }
    let mut t = Table::new(&["kind", "index", "detail"]);
    for v in &rep.violations {
        let kind = serde_json::to_value(v.kind).ok().and_then(|k| k.as_str().map(String::from)).unwrap_or_default();
        t.row(vec![kind, v.index.map_or(String::new(), |i| i.to_string()), v.detail.clone()]);
    }
    t.print();
}

pub fn verify(ctx: &Ctx, cfg: &mut Layered, a: VerifyArgs) -> Outcome {
    let measure: Option<PathBuf> = cfg.opt("measure", a.measure)?;
    let map: Option<PathBuf> = cfg.opt("map", a.map)?;
    cfg.finish()?;
    if measure.is_none() && map.is_none() {
        return Err(CliError::Usage("give --measure and/or --map".into()));
    }
    let mut passed = true;
    let mut report = json!({});
    if let Some(path) = measure {
        let (v, file_mode) = load_measure_any(&path)?;
        let approx = match ctx.mode {
            Mode::Approx => true,
            Mode::Exact => file_mode == "float64",
        };
        let rep = if approx && file_mode == "float64" {
            DiscreteMatrixMeasure::<f64>::from_json(&v)?.certify()
        } else if approx {
            DiscreteMatrixMeasure::<Rational>::from_json(&v)?.to_approx().certify()
        } else {
            DiscreteMatrixMeasure::<Rational>::from_json(&v)?.certify()
        };
        certificate_table(&rep);
        passed &= rep.passed();
        report["measure"] = serde_json::to_value(&rep).map_err(|e| CliError::Io(e.to_string()))?;
    }
    if let Some(path) = map {
        let f = PiecewiseAffineMap::from_json(&read_json(&path)?)?;
        let checks = map_checks(&f, ctx.seed);
        passed &= checks.passed;
        report["map"] = checks.json;
    }
    report["pass"] = json!(passed);
    ctx.out.write_json("verify.json", &report)?;
    println!("verify: {}", pass_word(passed));
    Ok(passed)
}
