//! Target sets `E_j`, `E^a_{j,R}` and the constants `ρ_{j,R}`, `r_{j,R}`,
//! `C(j,R,a₀,a)`.
//!
//! Constants are exact rationals. Membership and distance predicates work on
//! the ascending spectrum of a symmetric PSD matrix, in either scalar mode.

use num::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::numeric::{pow2, rat, rpow, spectral, Rational, Scalar, SquareMatrix};
use crate::tolerances::SYMMETRY_REL;

fn max1(x: Rational) -> Rational {
    if x > Rational::one() {
        x
    } else {
        Rational::one()
    }
}

/// `ρ_{j,R} = 3·2^{−j−2} / max{R^{m−1}, 1}`.
pub fn rho(j: u32, r: &Rational, m: usize) -> Rational {
    rat(3, 1) * pow2(-(j as i64) - 2) / max1(rpow(r, m as i64 - 1))
}

/// Rational `q ≥ (2/3)^{1/(m−1)}`, exact for `m = 2`.
fn two_thirds_root_upper(m: usize) -> Rational {
    if m == 2 {
        return rat(2, 3);
    }
    let target = rat(2, 3);
    let scale = 1i64 << 30;
    let guess = (2.0f64 / 3.0).powf(1.0 / (m as f64 - 1.0));
    let mut num = (guess * scale as f64).ceil() as i64;
    loop {
        let q = rat(num, scale);
        if rpow(&q, m as i64 - 1) >= target {
            return q;
        }
        num += 1;
    }
}

/// The six terms whose half-minimum is `r_{j,R}`.
#[derive(Clone, Debug, PartialEq)]
pub struct RSmall {
    pub terms: [Rational; 6],
    pub value: Rational,
}

pub const R_SMALL_TERM_NAMES: [&str; 6] = [
    "1 - (2/3)^(1/(m-1))",
    "rho_{j,R} (1 - max{1,R^(m-1)} / (R+1)^(m-1))",
    "rho_{j,R} / 3",
    "R - 1/2 - 2^-j",
    "2^-n (R+1)^(-m-1)",
    "(1 - rho_{j,R+1}) / max{1,R}",
];

/// `r_{j,R}` with its terms. For `m > 2` the first term is replaced by a
/// certified rational lower bound, which only shrinks the radius.
pub fn r_small_terms(j: u32, r: &Rational, m: usize, n: usize) -> Result<RSmall> {
    let one = Rational::one();
    let rho_r = rho(j, r, m);
    let rho_next = rho(j, &(r + &one), m);
    let rp1 = r + &one;
    let terms = [
        &one - two_thirds_root_upper(m),
        &rho_r * (&one - max1(rpow(r, m as i64 - 1)) / rpow(&rp1, m as i64 - 1)),
        &rho_r / rat(3, 1),
        r - rat(1, 2) - pow2(-(j as i64)),
        pow2(-(n as i64)) * rpow(&rp1, -(m as i64) - 1),
        (&one - &rho_next) / max1(r.clone()),
    ];
    for (t, name) in terms.iter().zip(R_SMALL_TERM_NAMES) {
        if !t.is_positive() {
            return Err(Error::Domain(format!("r_small term `{name}` is not positive")));
        }
    }
    let min = terms.iter().min().cloned().unwrap_or_else(Rational::zero);
    Ok(RSmall { value: min / rat(2, 1), terms })
}

pub fn r_small(j: u32, r: &Rational, m: usize, n: usize) -> Result<Rational> {
    r_small_terms(j, r, m, n).map(|t| t.value)
}

/// The factors `U`, `V`, `W` of the leaf-weight bound.
pub fn uvw(j: u32, r: &Rational, m: usize, n: usize) -> Result<(Rational, Rational, Rational)> {
    let one = Rational::one();
    let rp1 = r + &one;
    let u = pow2(-(j as i64)) / (&rp1 * max1(rpow(r, m as i64 - 1)));
    let v = one.clone() / max1(r.clone());
    let w = (r + r_small(j, r, m, n)?) / rp1;
    Ok((u, v, w))
}

fn binom(n: usize, k: usize) -> Rational {
    if k > n {
        return Rational::zero();
    }
    let mut acc = Rational::one();
    for i in 0..k {
        acc = acc * rat((n - i) as i64, (i + 1) as i64);
    }
    acc
}

/// `C(j,R,a₀,a) = Σ_b C(a₀,b) C(n−a₀,a−b) W^{n−a₀−a+b} V^{a−b} U^{a₀−b}`.
pub fn c_bound(j: u32, r: &Rational, a0: usize, a: usize, m: usize, n: usize) -> Result<Rational> {
    if a0 > n - m || a > n - m {
        return Err(Error::InvalidInput(format!("indices a0 = {a0}, a = {a} exceed n - m = {}", n - m)));
    }
    if rho(j, r, m) >= *r {
        return Err(Error::Domain("rho_{j,R} must be below R".into()));
    }
    let (u, v, w) = uvw(j, r, m, n)?;
    let lo = (a0 + a).saturating_sub(n);
    let hi = a0.min(a);
    let mut sum = Rational::zero();
    for b in lo..=hi {
        sum += binom(a0, b)
            * binom(n - a0, a - b)
            * rpow(&w, (n - a0 - a + b) as i64)
            * rpow(&v, (a - b) as i64)
            * rpow(&u, (a0 - b) as i64);
    }
    Ok(sum)
}

/// Ascending spectrum of a PSD matrix; errors when it is not PSD.
pub fn psd_spectrum<T: Scalar>(a: &SquareMatrix<T>) -> Result<Vec<T>> {
    let s = spectral(a)?;
    let floor = if T::EXACT {
        T::zero()
    } else {
        -T::from_f64(SYMMETRY_REL * a.max_abs().max(1.0))?
    };
    if s.values[0] < floor {
        return Err(Error::Domain(format!("matrix is not PSD (smallest eigenvalue {})", s.values[0].to_float())));
    }
    Ok(s.values)
}

fn max1_t<T: Scalar>(x: T) -> T {
    if x > T::one() {
        x
    } else {
        T::one()
    }
}

/// `E_j` membership from an ascending spectrum.
pub fn in_e_j_spectrum<T: Scalar>(sig: &[T], j: u32, m: usize) -> bool {
    let n = sig.len();
    let top = sig[n - 1].clone();
    let floor = T::from_rational(&(rat(1, 2) + pow2(-(j as i64))));
    if top <= floor {
        return false;
    }
    let lo = T::from_rational(&pow2(-(j as i64) - m as i64));
    let hi = T::from_rational(&pow2(-(j as i64)));
    let scale = max1_t(pow_t(&top, m - 1));
    sig[..=n - m].iter().all(|s| {
        let v = s.clone() * scale.clone();
        lo < v && v < hi
    })
}

fn pow_t<T: Scalar>(x: &T, e: usize) -> T {
    (0..e).fold(T::one(), |acc, _| acc * x.clone())
}

/// Whether a PSD matrix lies in `E_j`.
pub fn in_e_j<T: Scalar>(a: &SquareMatrix<T>, j: u32, m: usize) -> Result<bool> {
    Ok(in_e_j_spectrum(&psd_spectrum(a)?, j, m))
}

/// Spectral distance `max_i |σ_i − target_i|` to `E^a_{j,R}`.
pub fn dist_e_a_spectrum<T: Scalar>(sig: &[T], j: u32, r: &Rational, a: usize, m: usize) -> T {
    let rho_t = T::from_rational(&rho(j, r, m));
    let r_t = T::from_rational(r);
    sig.iter()
        .enumerate()
        .map(|(i, s)| {
            let target = if i < a { rho_t.clone() } else { r_t.clone() };
            (s.clone() - target).abs()
        })
        .fold(T::zero(), |acc, d| if d > acc { d } else { acc })
}

fn check_admissible(j: u32, r: &Rational, m: usize) -> Result<()> {
    if *r <= rat(1, 2) + pow2(-(j as i64)) {
        return Err(Error::Domain("R must exceed 1/2 + 2^-j".into()));
    }
    if rho(j, r, m) >= *r {
        return Err(Error::Domain("rho_{j,R} must be below R".into()));
    }
    Ok(())
}

/// Distance (operator norm, spectral matching) from a PSD matrix to `E^a_{j,R}`.
///
/// Exact for matrices commuting with the nearest point; an upper bound otherwise.
/// Any `a ≤ n` is accepted; the construction only uses `a ≤ n − m`.
pub fn dist_e_a<T: Scalar>(a_mat: &SquareMatrix<T>, j: u32, r: &Rational, a: usize, m: usize) -> Result<T> {
    check_admissible(j, r, m)?;
    if a > a_mat.n() {
        return Err(Error::InvalidInput(format!("a = {a} exceeds n")));
    }
    Ok(dist_e_a_spectrum(&psd_spectrum(a_mat)?, j, r, a, m))
}

/// The nearest `E^a_{j,R}` over `a ∈ {0, …, n−m}` and its distance.
pub fn nearest_e_a<T: Scalar>(sig: &[T], j: u32, r: &Rational, m: usize) -> (usize, T) {
    let n = sig.len();
    let mut best = (0, dist_e_a_spectrum(sig, j, r, 0, m));
    for a in 1..=n - m {
        let d = dist_e_a_spectrum(sig, j, r, a, m);
        if d < best.1 {
            best = (a, d);
        }
    }
    best
}
