use laminate_forge::lamination::{bridge_split, lamlem_split, principal_atom};
use laminate_forge::measure::ExactMeasure;
use laminate_forge::numeric::{conjugate_diag, format_rational, op_norm, parse_rational, rat, Rotation};
use laminate_forge::pamap::{continuity_report, realize_simple, BoxDomain, PiecewiseAffineMap};
use laminate_forge::staircase::{staircase_sequence, StairParams};
use laminate_forge::target_sets::{r_small, r_small_terms, rho};
use laminate_forge::{ExactMatrix, Matrix, Rational};
use num::{One, Zero};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn barycenter(nu: &ExactMeasure) -> ExactMatrix {
    nu.atoms().iter().fold(ExactMatrix::zeros(nu.n()), |acc, a| acc.add(&a.matrix.scale(&a.weight)))
}

fn mass(nu: &ExactMeasure) -> Rational {
    nu.atoms().iter().fold(Rational::zero(), |s, a| s + &a.weight)
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (2usize..=4).prop_flat_map(|n| (Just(n), 2usize..=n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn staircase_measures_are_probability_laminates_of_identity((n, m) in dims(), k in 1u32..=4) {
        let p = StairParams::new(n, m, k).unwrap();
        for nu in staircase_sequence(&p).unwrap() {
            prop_assert!(mass(&nu).is_one());
            prop_assert_eq!(barycenter(&nu), ExactMatrix::identity(n));
            prop_assert!(nu.certify().passed());
            prop_assert!(nu.atoms().iter().all(|a| a.weight > Rational::zero()));
        }
    }

    #[test]
    fn measure_json_round_trips((n, m) in dims(), k in 1u32..=3) {
        let p = StairParams::new(n, m, k).unwrap();
        let nu = staircase_sequence(&p).unwrap().pop().unwrap();
        let back = ExactMeasure::from_json(&nu.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), nu.to_json());
        prop_assert!(back.certify().passed());
    }

    #[test]
    fn rationals_round_trip_through_text(p in -10_000i64..10_000, q in 1i64..10_000) {
        let r = rat(p, q);
        prop_assert_eq!(parse_rational(&format_rational(&r)).unwrap(), r);
    }

    #[test]
    fn random_rotations_are_orthogonal(n in 2usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Rotation::random(n, &mut rng).unwrap();
        let d: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let a = conjugate_diag(&q, &d).unwrap();
        // Conjugation keeps the spectrum, so the norm is the largest entry.
        prop_assert!((op_norm(&a) - n as f64).abs() < 1e-12 * n as f64);
        prop_assert!((0..n).all(|i| (0..n).all(|j| (a.get(i, j) - a.get(j, i)).abs() < 1e-12)));
    }

    #[test]
    fn lamlem_preserves_barycenter_and_mass(
        (n, m) in dims(),
        j in 2u32..=5,
        r_num in 2i64..=8,
        offsets in prop::collection::vec(-90i64..=90, 4),
        a0_pick in 0usize..3,
    ) {
        let r = rat(r_num, 2);
        prop_assume!(r_small_terms(j, &r, m, n).is_ok() && rho(j, &r, m) < r);
        let a0 = a0_pick % (n - m + 1);
        let rad = r_small(j, &r, m, n).unwrap();
        let rh = rho(j, &r, m);
        let d: Vec<Rational> = (0..n)
            .map(|i| if i < a0 { rh.clone() } else { r.clone() } + &rad * rat(offsets[i], 100))
            .collect();
        let a = ExactMatrix::from_diag(&d);
        let out = lamlem_split(&a, j, &r, a0, m).unwrap();
        prop_assert!(mass(&out.measure).is_one());
        prop_assert_eq!(barycenter(&out.measure), a);
        prop_assert!(out.measure.certify().passed());
    }

    #[test]
    fn bridge_principal_atom_is_close(j in 1u32..=6, num in 1i64..=1000) {
        // diag(s/t, t): lower entry in the band rescaled by the top one.
        let lo = rat(1, 1 << (j + 2));
        let hi = rat(1, 1 << j);
        let s = &lo + (&hi - &lo) * rat(num, 1001);
        let t = rat(1, 1) + rat(num, 500);
        let scaled = ExactMatrix::from_diag(&[s / &t, t.clone()]);
        let out = bridge_split(&scaled, j, 2).unwrap();
        prop_assert!(mass(&out.measure).is_one());
        prop_assert_eq!(barycenter(&out.measure), scaled.clone());
        let (p1, l1) = principal_atom(&out).unwrap();
        prop_assert!(l1 > Rational::zero() && l1 <= Rational::one());
        prop_assert!(op_norm(&scaled.to_f64().sub(&p1.to_f64())) < 0.5f64.powi(j as i32));
    }

    #[test]
    fn simple_realizations_close_up(lambda in 0.2f64..0.8, gap in 0.2f64..1.0) {
        let b = Matrix::from_diag(&[1.0 - (1.0 - lambda) * gap, 1.0]);
        let c = Matrix::from_diag(&[1.0 + lambda * gap, 1.0]);
        let f = realize_simple(lambda, &b, &c, &BoxDomain::unit(2), 0.1, 0.1).unwrap();
        prop_assert!(f.volume_check().1);
        prop_assert!(f.boundary_residual() <= 1e-14);
        prop_assert!(continuity_report(&f).0.max_residual <= 1e-10);
        let back = PiecewiseAffineMap::from_json(&f.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), f.to_json());
    }
}
