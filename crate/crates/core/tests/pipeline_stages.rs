//! Stage invariants on a reduced two-stage run.

use std::sync::OnceLock;

use laminate_forge::pamap::{check_injectivity, continuity_report, BoxDomain, PiecewiseAffineMap};
use laminate_forge::pipeline::{run_theorem_on, tail_profile, StageConfig, TheoremRun, TAIL_T_MAX, TAIL_T_MIN};
use laminate_forge::staircase::theta;
use laminate_forge::Scalar;

fn config() -> StageConfig {
    StageConfig { stages: 2, budget: 120_000, ..StageConfig::default() }
}

fn run() -> &'static TheoremRun {
    static RUN: OnceLock<TheoremRun> = OnceLock::new();
    RUN.get_or_init(|| run_theorem_on(&config(), &BoxDomain::unit(2), true).unwrap())
}

#[test]
fn stage_maps_glue_continuously() {
    for (j, f) in run().maps.iter().enumerate() {
        let (cont, _) = continuity_report(f);
        assert!(cont.max_residual <= 1e-10, "stage {}: jump {:e}", j + 1, cont.max_residual);
        assert!(f.boundary_residual() <= 1e-12, "stage {}: boundary {:e}", j + 1, f.boundary_residual());
        assert!(f.cells.iter().all(|c| c.is_valid()));
    }
}

#[test]
fn volumes_close_up() {
    let r = run();
    for (rep, f) in r.reports.iter().zip(&r.maps) {
        let v = &rep.volumes;
        let sum = v.member + v.residual();
        assert!((sum - 1.0).abs() < 1e-12, "stage {}: classes sum to {sum}", rep.stage);
        assert!(v.closure_error < 1e-12);
        assert!(f.volume_check().1);
        assert_eq!(rep.cells, f.len());
    }
}

#[test]
fn tail_is_dominated_by_staircase_constant() {
    let r = run();
    let th = theta(2, 2).to_float();
    for (rep, f) in r.reports.iter().zip(&r.maps) {
        let tail = tail_profile(f, TAIL_T_MIN, TAIL_T_MAX);
        assert_eq!(tail, rep.tail);
        for (t, frac) in tail {
            assert!((t as f64).powi(2) * frac <= th, "stage {}: t={t} fraction {frac}", rep.stage);
        }
    }
}

#[test]
fn stages_are_monotone_maps_with_shrinking_increments() {
    let r = run();
    for f in &r.maps {
        assert!(f.min_eigenvalue() > 0.0);
        assert!(check_injectivity(f).passed);
    }
    assert!(r.increments_below_threshold());
    assert!(r.increments_decreasing());
    assert!(r.reports.iter().all(|rep| rep.membership >= 0.999));
    // The identity boundary trace survives every stage.
    let id = PiecewiseAffineMap::identity(BoxDomain::unit(2)).unwrap();
    assert_eq!(r.final_map.boundary_matrix, id.boundary_matrix);
}

#[test]
fn runs_repeat_exactly() {
    let cfg = StageConfig { stages: 1, budget: 60_000, ..StageConfig::default() };
    let a = run_theorem_on(&cfg, &BoxDomain::unit(2), false).unwrap();
    let b = run_theorem_on(&cfg, &BoxDomain::unit(2), false).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.final_map.to_json(), b.final_map.to_json());
}
