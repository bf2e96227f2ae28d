use super::*;
use crate::rng::Rng;

// ---------------------------------------------------------------------------
// Independent oracle: central finite differences at step h = 1e-5.
// ---------------------------------------------------------------------------

const FD_STEP: f64 = 1e-5;

fn fd_gradient(e: &Expr, env: &[f64]) -> Vec<f64> {
    let n = env.len();
    let mut grad = vec![0.0; n];
    let mut pt = env.to_vec();
    for i in 0..n {
        pt[i] = env[i] + FD_STEP;
        let fp = e.eval(&pt).unwrap();
        pt[i] = env[i] - FD_STEP;
        let fm = e.eval(&pt).unwrap();
        pt[i] = env[i];
        grad[i] = (fp - fm) / (2.0 * FD_STEP);
    }
    grad
}

fn fd_hessian(e: &Expr, env: &[f64]) -> Vec<f64> {
    let n = env.len();
    let f0 = e.eval(env).unwrap();
    let mut hess = vec![0.0; n * n];
    let mut pt = env.to_vec();
    for i in 0..n {
        pt[i] = env[i] + FD_STEP;
        let fp = e.eval(&pt).unwrap();
        pt[i] = env[i] - FD_STEP;
        let fm = e.eval(&pt).unwrap();
        pt[i] = env[i];
        hess[i * n + i] = (fp - 2.0 * f0 + fm) / (FD_STEP * FD_STEP);
        for j in 0..i {
            let mut val = 0.0;
            for (si, sj, sign) in [
                (1.0, 1.0, 1.0),
                (1.0, -1.0, -1.0),
                (-1.0, 1.0, -1.0),
                (-1.0, -1.0, 1.0),
            ] {
                pt[i] = env[i] + si * FD_STEP;
                pt[j] = env[j] + sj * FD_STEP;
                val += sign * e.eval(&pt).unwrap();
                pt[i] = env[i];
                pt[j] = env[j];
            }
            let mixed = val / (4.0 * FD_STEP * FD_STEP);
            hess[i * n + j] = mixed;
            hess[j * n + i] = mixed;
        }
    }
    hess
}

use super::testing::random_checked_pair;

#[test]
fn jet_gradient_and_hessian_match_finite_differences() {
    let vars = ["x1", "x2", "x3"];
    let mut rng = Rng::new(0x5EED_0001);
    for _ in 0..50 {
        let (e, env) = random_checked_pair(&mut rng, &vars);
        let jet = e.eval_jet2(&env).unwrap();
        let fd_g = fd_gradient(&e, &env);
        let fd_h = fd_hessian(&e, &env);
        for i in 0..vars.len() {
            let tol = (1e-6_f64).max(1e-6 * jet.grad[i].abs());
            assert!(
                (jet.grad[i] - fd_g[i]).abs() <= tol,
                "grad[{i}] jet={} fd={} expr={}",
                jet.grad[i],
                fd_g[i],
                e.render()
            );
        }
        for (k, (&hj, &hf)) in jet.hess.iter().zip(&fd_h).enumerate() {
            assert!(
                (hj - hf).abs() <= 1e-4,
                "hess[{k}] jet={hj} fd={hf} expr={}",
                e.render()
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Grammar and evaluation
// ---------------------------------------------------------------------------

#[test]
fn parse_collects_free_variables() {
    let e = parse("x1^2 + sin(x2)", &["x1", "x2"]).unwrap();
    assert_eq!(e.free_vars(), vec![0, 1]);
    let e = parse("0.5*(xi1^2 + xi2^2/2)", &["xi1", "xi2"]).unwrap();
    assert_eq!(e.free_vars(), vec![0, 1]);
    // declared but unused variables are fine
    let e = parse("x1", &["x1", "x2"]).unwrap();
    assert_eq!(e.free_vars(), vec![0]);
}

#[test]
fn parse_reports_positions() {
    match parse("y3 - ", &["y3"]) {
        Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 5),
        other => panic!("expected syntax error, got {other:?}"),
    }
    match parse("x1 + 2.q", &["x1"]) {
        Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 8),
        other => panic!("expected syntax error, got {other:?}"),
    }
    match parse("x1 + q2", &["x1"]) {
        Err(Error::UnknownVariable(name)) => assert_eq!(name, "q2"),
        other => panic!("expected unknown variable, got {other:?}"),
    }
    match parse("foo(x1)", &["x1"]) {
        Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 1),
        other => panic!("expected unknown function error, got {other:?}"),
    }
}

#[test]
fn malformed_inputs_are_rejected() {
    assert!(matches!(parse("", &[]), Err(Error::Syntax { pos: 1, .. })));
    assert!(matches!(
        parse("   ", &[]),
        Err(Error::Syntax { pos: 1, .. })
    ));
    assert!(matches!(parse("((x1)", &["x1"]), Err(Error::Syntax { .. })));
    assert!(matches!(parse("x1)", &["x1"]), Err(Error::Syntax { .. })));
    assert!(matches!(parse("1.2.3", &[]), Err(Error::Syntax { .. })));
    assert!(matches!(
        parse("x1 @ 2", &["x1"]),
        Err(Error::Syntax { .. })
    ));
    assert!(matches!(
        parse("x1 x2", &["x1", "x2"]),
        Err(Error::Syntax { .. })
    ));
    assert!(matches!(parse("2.", &[]), Err(Error::Syntax { .. })));
    // a function name without parentheses falls back to variable lookup
    assert!(matches!(parse("sin", &[]), Err(Error::UnknownVariable(_))));
    assert!(matches!(parse("sin(1", &[]), Err(Error::Syntax { .. })));
}

#[test]
fn precedence_and_associativity() {
    let e = parse("2^3^2", &[]).unwrap();
    assert_eq!(e.eval(&[]).unwrap(), 512.0); // right-associative
    let e = parse("-2^2", &[]).unwrap();
    assert_eq!(e.eval(&[]).unwrap(), -4.0); // ^ binds above unary minus
    let e = parse("2*-3", &[]).unwrap();
    assert_eq!(e.eval(&[]).unwrap(), -6.0);
    let e = parse("1 - 2 - 3", &[]).unwrap();
    assert_eq!(e.eval(&[]).unwrap(), -4.0); // left-associative
    let e = parse("12/4/3", &[]).unwrap();
    assert_eq!(e.eval(&[]).unwrap(), 1.0);
    let e = parse("1 + 2*3^2", &[]).unwrap();
    assert_eq!(e.eval(&[]).unwrap(), 19.0);
    let e = parse("x1^-2", &["x1"]).unwrap();
    assert_eq!(e.eval(&[2.0]).unwrap(), 0.25);
}

#[test]
fn eval_spec_examples() {
    let e = parse("x1^2+sin(x2)", &["x1", "x2"]).unwrap();
    assert_eq!(e.eval(&[2.0, 0.0]).unwrap(), 4.0);

    let e = parse("1/x1", &["x1"]).unwrap();
    assert!(matches!(e.eval(&[0.0]), Err(Error::Domain(_))));

    let e = parse("exp(0)", &[]).unwrap();
    assert_eq!(e.eval(&[]).unwrap(), 1.0);
}

#[test]
fn domain_errors() {
    let log = parse("log(x1)", &["x1"]).unwrap();
    assert!(matches!(log.eval(&[-1.0]), Err(Error::Domain(_))));
    assert!(matches!(log.eval_jet2(&[0.0]), Err(Error::Domain(_))));
    let sqrt = parse("sqrt(x1)", &["x1"]).unwrap();
    assert!(matches!(sqrt.eval(&[-4.0]), Err(Error::Domain(_))));
    let pow = parse("x1^0.5", &["x1"]).unwrap();
    assert!(matches!(pow.eval(&[-4.0]), Err(Error::Domain(_))));
    assert_eq!(pow.eval(&[4.0]).unwrap(), 2.0);
}

#[test]
fn integer_powers_allow_negative_bases() {
    let e = parse("x1^3", &["x1"]).unwrap();
    assert_eq!(e.eval(&[-2.0]).unwrap(), -8.0);
    let j = e.eval_jet2(&[-2.0]).unwrap();
    assert_eq!(j.grad[0], 12.0);
    assert_eq!(j.hess[0], -12.0);
}

#[test]
fn jet_spec_examples() {
    let e = parse("x1*x2", &["x1", "x2"]).unwrap();
    let j = e.eval_jet2(&[3.0, 5.0]).unwrap();
    assert_eq!(j.value, 15.0);
    assert_eq!(j.grad, vec![5.0, 3.0]);
    assert_eq!(j.hess, vec![0.0, 1.0, 1.0, 0.0]);

    let e = parse("sin(x1)", &["x1"]).unwrap();
    let j = e.eval_jet2(&[0.0]).unwrap();
    assert_eq!(j.value, 0.0);
    assert_eq!(j.grad, vec![1.0]);
    assert_eq!(j.hess, vec![0.0]);
}

#[test]
fn hessian_is_symmetric() {
    let vars = ["x1", "x2", "x3"];
    let mut rng = Rng::new(0x5EED_0002);
    for _ in 0..25 {
        let (e, env) = random_checked_pair(&mut rng, &vars);
        let j = e.eval_jet2(&env).unwrap();
        let n = vars.len();
        for i in 0..n {
            for k in 0..n {
                assert_eq!(j.hess[i * n + k], j.hess[k * n + i]);
            }
        }
    }
}

#[test]
fn jet_value_equals_eval() {
    let vars = ["x1", "x2", "x3"];
    let mut rng = Rng::new(0x5EED_0003);
    for _ in 0..25 {
        let (e, env) = random_checked_pair(&mut rng, &vars);
        assert_eq!(e.eval(&env).unwrap(), e.eval_jet2(&env).unwrap().value);
    }
}

#[test]
fn render_round_trip_is_bit_identical() {
    let vars = ["x1", "x2", "x3"];
    let mut rng = Rng::new(0x5EED_0004);
    for _ in 0..20 {
        let (e, _) = random_checked_pair(&mut rng, &vars);
        let rendered = e.render();
        let reparsed = parse(&rendered, &vars)
            .unwrap_or_else(|err| panic!("rendered `{rendered}` failed to reparse: {err}"));
        for _ in 0..100 {
            let env: Vec<f64> = (0..vars.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let a = e.eval(&env);
            let b = reparsed.eval(&env);
            match (a, b) {
                (Ok(x), Ok(y)) => assert!(
                    x == y || (x.is_nan() && y.is_nan()),
                    "mismatch for `{rendered}`"
                ),
                (Err(_), Err(_)) => {}
                other => panic!("divergent results {other:?} for `{rendered}`"),
            }
        }
    }
}

#[test]
fn eval_is_deterministic() {
    let e = parse("exp(sin(x1) + cos(x2)^2)/(1 + x1^2)", &["x1", "x2"]).unwrap();
    let env = [0.37, -1.21];
    let v1 = e.eval(&env).unwrap();
    let v2 = e.eval(&env).unwrap();
    assert_eq!(v1.to_bits(), v2.to_bits());
    let j1 = e.eval_jet2(&env).unwrap();
    let j2 = e.eval_jet2(&env).unwrap();
    assert_eq!(j1, j2);
}

#[test]
fn eval_map_binds_by_name() {
    let e = parse("x1 + 2*x2", &["x1", "x2"]).unwrap();
    let mut env = HashMap::new();
    env.insert("x2".to_string(), 10.0);
    env.insert("x1".to_string(), 1.0);
    assert_eq!(e.eval_map(&env).unwrap(), 21.0);
    env.remove("x1");
    assert!(matches!(
        e.eval_map(&env),
        Err(Error::UnknownVariable(name)) if name == "x1"
    ));
}

#[test]
fn sqrt_of_constant_argument_keeps_zero_gradient() {
    // derivative factor is infinite at 0, but a constant argument must not
    // poison the gradient with NaN
    let e = parse("sqrt(x1 - x1)", &["x1"]).unwrap();
    let j = e.eval_jet2(&[2.0]).unwrap();
    assert_eq!(j.value, 0.0);
    assert_eq!(j.grad, vec![0.0]);
}

#[test]
fn expressions_are_shareable_across_threads() {
    // immutable after parse: evaluation is pure and freely concurrent
    fn assert_send_sync<T: Send + Sync>() {}
    assert_send_sync::<Expr>();
    assert_send_sync::<Jet2>();
}

#[test]
fn variable_exponent_uses_exp_log() {
    let e = parse("x1^x2", &["x1", "x2"]).unwrap();
    let j = e.eval_jet2(&[2.0, 3.0]).unwrap();
    assert!((j.value - 8.0).abs() < 1e-12);
    // d/dx1 = x2 x1^(x2-1) = 12, d/dx2 = x1^x2 ln x1
    assert!((j.grad[0] - 12.0).abs() < 1e-12);
    assert!((j.grad[1] - 8.0 * 2.0_f64.ln()).abs() < 1e-12);
    assert!(matches!(e.eval(&[-2.0, 3.5]), Err(Error::Domain(_))));
}
