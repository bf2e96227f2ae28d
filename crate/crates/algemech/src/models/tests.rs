use super::*;
use crate::algebroid::DualPoint;
use crate::mechanics;
use crate::rng::Rng;

#[test]
fn registry_is_sorted_and_unique() {
    let names = list_models();
    assert_eq!(
        names,
        vec![
            "broken-jacobi",
            "canonical-tm",
            "sleigh",
            "so3-top",
            "vac-particle"
        ]
    );
    let mut dedup = names.clone();
    dedup.dedup();
    assert_eq!(dedup, names);
    // loading does not mutate the registry
    let _ = load_builtin("sleigh").unwrap();
    assert_eq!(list_models(), names);
}

#[test]
fn builtins_load_and_classify() {
    for name in list_models() {
        let model = load_builtin(name).unwrap();
        assert_eq!(model.name, name);
        match name {
            "broken-jacobi" => {
                assert!(model.report.skew <= 1e-9);
                assert!(model.report.jacobiator.unwrap() > 0.1);
                assert_eq!(model.report.classification(), "almost-Lie algebroid");
            }
            _ => {
                assert!(model.report.skew <= 1e-9, "{name} skew");
                assert!(model.report.jacobiator.unwrap() <= 1e-9, "{name} jacobi");
                assert_eq!(model.report.classification(), "Lie algebroid");
            }
        }
    }
}

#[test]
fn canonical_tm_matches_textbook_hamilton_equations() {
    let model = load_builtin("canonical-tm").unwrap();
    let h = model.hamiltonian.as_ref().unwrap();
    let mut rng = Rng::new(0xCAFE);
    for _ in 0..200 {
        let pt = DualPoint {
            x: rng.uniform_vec(2, -1.0, 1.0),
            xi: rng.uniform_vec(2, -1.0, 1.0),
        };
        let (xdot, xidot) = mechanics::hamilton_rhs(&model.spec, h, &pt).unwrap();
        // hard-coded oracle: xdot = xi, xidot = -x
        for i in 0..2 {
            assert!((xdot[i] - pt.xi[i]).abs() <= 1e-12 * (1.0 + pt.xi[i].abs()));
            assert!((xidot[i] + pt.x[i]).abs() <= 1e-12 * (1.0 + pt.x[i].abs()));
        }
    }
}

#[test]
fn sleigh_carries_constraint_and_metric() {
    let model = load_builtin("sleigh").unwrap();
    let con = model.constraint.as_ref().unwrap();
    assert_eq!(con.r(), 1);
    assert_eq!(con.rank_d(), Some(2));
    assert!(con.linear_flag());
    assert!(model.mechanical.is_some());
    // hamiltonian synthesized from the metric
    let h = model.hamiltonian.as_ref().unwrap();
    let v = h.eval(&[0.4, -1.0, 0.2]).unwrap();
    assert!((v - 0.5 * (0.16 + 1.0 + 2.0 * 0.04)).abs() < 1e-14);
    // defaults satisfy the constraint in Hamiltonian form
    let res = crate::constraints::nh_constraint_residual(
        &model.spec,
        h,
        con,
        &DualPoint {
            x: model.defaults.x0.clone(),
            xi: model.defaults.xi0.clone(),
        },
    )
    .unwrap();
    assert!(res[0].abs() < 1e-12);
}

#[test]
fn wrong_c_shape_is_rejected() {
    let src = "
[model]
name = bad
n = 0
m = 2

[structure]
c = [[[0, 0], [0, 0]]]
";
    assert!(matches!(load_source(src), Err(Error::DimensionMismatch(_))));
}

#[test]
fn false_linear_declaration_is_rejected() {
    let src = "
[model]
name = bad-linear
n = 1
m = 1
sample_box = [[0.5, 1.5]]

[structure]
rho = [[1]]

[constraints]
phi = [y1 - 1]
linear = true
";
    assert!(matches!(
        load_source(src),
        Err(Error::InvariantViolation(_))
    ));
}

#[test]
fn hamiltonian_metric_mismatch_is_rejected() {
    let src = "
[model]
name = mismatch
n = 0
m = 1

[structure]

[hamiltonian]
h = xi1^2

[metric]
ginv = [[1]]
v = 0
";
    assert!(matches!(
        load_source(src),
        Err(Error::InvariantViolation(_))
    ));
}

#[test]
fn parse_errors_carry_positions() {
    match load_source("name = orphan\n") {
        Err(Error::ModelParse { line, .. }) => assert_eq!(line, 1),
        other => panic!("expected parse error, got {other:?}"),
    }
    let src = "[model]\nname = x\nn = 0\nm = 1\n\n[hamiltonian]\nh = xi1 +\n";
    match load_source(src) {
        Err(Error::ModelParse { line, .. }) => assert_eq!(line, 7),
        other => panic!("expected parse error, got {other:?}"),
    }
    // unknown variables in section expressions are rejected
    let src = "[model]\nname = x\nn = 0\nm = 1\n\n[hamiltonian]\nh = y1\n";
    assert!(matches!(load_source(src), Err(Error::ModelParse { .. })));
}

#[test]
fn defaults_and_multiline_arrays() {
    let model = load_builtin("so3-top").unwrap();
    assert_eq!(model.defaults.xi0, vec![0.0, 1.0, 1.0]);
    assert_eq!(model.defaults.t1, 10.0);
    assert_eq!(model.defaults.dt, 1e-3);
    assert_eq!(model.defaults.method, mechanics::Method::Rk4);
    assert!(model.defaults.x0.is_empty());
    // ginv uses exact rational literals
    let mech = model.mechanical.as_ref().unwrap();
    let ginv = mech.ginv_at(&[]).unwrap();
    assert_eq!(ginv.at(1, 1), 0.5);
    assert_eq!(ginv.at(2, 2), 1.0 / 3.0);
}

#[test]
fn non_skew_structure_classifies_as_general_algebroid() {
    // sigma differs from rho: no skew bracket, so the Jacobi residual is
    // not even defined
    let src = "
[model]
name = twisted
n = 1
m = 1
sample_box = [[0.5, 1.5]]

[structure]
rho = [[1]]
sigma = [[2]]

[hamiltonian]
h = 0.5*xi1^2
";
    let model = load_source(src).unwrap();
    assert!(model.report.skew >= 1.0);
    assert!(model.report.jacobiator.is_none());
    assert_eq!(model.report.classification(), "general algebroid");
}

#[test]
fn skew_but_not_almost_lie_classifies_correctly() {
    // rho = sigma = x1 with c = 0 is skew and almost-Lie at rank 1; adding
    // an x-dependent anchor with a rank-2 coupling breaks the morphism rule
    let src = "
[model]
name = skew-only
n = 1
m = 2
sample_box = [[0.5, 1.5]]

[structure]
rho = [[x1, 1]]
c = [[[0, 1], [-1, 0]], [[0, 0], [0, 0]]]

[hamiltonian]
h = 0.5*(xi1^2 + xi2^2)
";
    let model = load_source(src).unwrap();
    assert!(model.report.skew <= 1e-9);
    assert!(model.report.almost_lie.unwrap() > 0.1);
    assert_eq!(model.report.classification(), "skew-algebroid");
}

#[test]
fn loaded_objects_are_shareable_across_threads() {
    fn assert_send_sync<T: Send + Sync>() {}
    assert_send_sync::<LoadedModel>();
    assert_send_sync::<crate::algebroid::AlgebroidSpec>();
    assert_send_sync::<crate::constraints::ConstraintSpec>();
}

#[test]
fn missing_file_is_io_error() {
    let err = load_model(Path::new("/nonexistent/path.model")).unwrap_err();
    assert!(matches!(err, Error::Io(_)));
}
