//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities. Run with `cargo test --test acceptance`.

#![allow(clippy::needless_range_loop)] // contractions follow index notation

use std::time::Instant;

use algemech::algebroid::{self, DualPoint};
use algemech::constraints::{self, ConstraintSpec};
use algemech::expr::{self, Expr};
use algemech::mechanics::{self, Method, Trajectory, VariationGenerator};
use algemech::models::{self, LoadedModel};
use algemech::rng::Rng;

fn builtin(name: &str) -> LoadedModel {
    models::load_builtin(name).expect("built-in model loads")
}

fn hamiltonian(model: &LoadedModel) -> &Expr {
    model.hamiltonian.as_ref().expect("model has a Hamiltonian")
}

fn random_dual_point(model: &LoadedModel, rng: &mut Rng) -> DualPoint {
    let n = model.spec.base_dim();
    let m = model.spec.rank();
    let x = model
        .spec
        .sample_box()
        .iter()
        .map(|&(lo, hi)| rng.uniform(lo, hi))
        .collect::<Vec<_>>();
    debug_assert_eq!(x.len(), n);
    DualPoint {
        x,
        xi: rng.uniform_vec(m, -1.0, 1.0),
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn sup_state_dist(a: &Trajectory, b: &Trajectory, cols: usize) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut worst = 0.0_f64;
    for (sa, sb) in a.states.iter().zip(&b.states) {
        for i in 0..cols {
            worst = worst.max((sa[i] - sb[i]).abs());
        }
    }
    worst
}

#[test]
fn criterion_01_canonical_reduction() {
    let start = Instant::now();
    let model = builtin("canonical-tm");
    let h = hamiltonian(&model);
    let mut rng = Rng::new(0xACC_0001);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let pt = random_dual_point(&model, &mut rng);
        let (xdot, xidot) = mechanics::hamilton_rhs(&model.spec, h, &pt).unwrap();
        // hard-coded classical Hamilton equations for H = |xi|^2/2 + |x|^2/2
        for i in 0..2 {
            assert!(rel_close(xdot[i], pt.xi[i], 1e-12), "xdot mismatch");
            assert!(rel_close(xidot[i], -pt.x[i], 1e-12), "xidot mismatch");
            worst = worst
                .max((xdot[i] - pt.xi[i]).abs())
                .max((xidot[i] + pt.x[i]).abs());
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 1 (canonical reduction): PASS (max defect {worst:.2e}, {} ms)",
        elapsed.as_millis()
    );
}

#[test]
fn criterion_02_pi_consistency() {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    for name in models::list_models() {
        let model = builtin(name);
        let h = hamiltonian(&model);
        let n = model.spec.base_dim();
        let m = model.spec.rank();
        let mut rng = Rng::new(0xACC_0002);
        for _ in 0..1000 {
            let pt = random_dual_point(&model, &mut rng);
            let (xdot, xidot) = mechanics::hamilton_rhs(&model.spec, h, &pt).unwrap();
            // independent route: contract dH into the Pi matrix
            let pi = algebroid::pi_tensor(&model.spec, &pt).unwrap();
            let jet = mechanics::hamiltonian_jet(h, n, m, &pt.x, &pt.xi).unwrap();
            let mut dh = Vec::with_capacity(n + m);
            dh.extend_from_slice(&jet.d_xi);
            dh.extend_from_slice(&jet.d_x);
            let mut contracted = vec![0.0; n + m];
            for beta in 0..n + m {
                let mut acc = 0.0;
                for (alpha, &dha) in dh.iter().enumerate() {
                    acc += dha * pi.at(alpha, beta);
                }
                contracted[beta] = acc;
            }
            for j in 0..m {
                assert!(
                    rel_close(xidot[j], contracted[j], 1e-12),
                    "{name}: xidot[{j}] {} vs {}",
                    xidot[j],
                    contracted[j]
                );
                worst = worst.max((xidot[j] - contracted[j]).abs());
            }
            for a in 0..n {
                assert!(
                    rel_close(xdot[a], contracted[m + a], 1e-12),
                    "{name}: xdot[{a}]"
                );
                worst = worst.max((xdot[a] - contracted[m + a]).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 2 (Pi-consistency): PASS (max defect {worst:.2e}, {} ms)",
        elapsed.as_millis()
    );
}

#[test]
fn criterion_03_so3_conservation() {
    let start = Instant::now();
    let model = builtin("so3-top");
    let h = hamiltonian(&model);
    let pt0 = DualPoint {
        x: vec![],
        xi: vec![0.0, 1.0, 1.0],
    };
    let traj =
        mechanics::integrate_hamilton(&model.spec, h, &pt0, 0.0, 10.0, 1e-3, Method::Rk4).unwrap();
    let h0 = h.eval(&pt0.xi).unwrap();
    let c0: f64 = pt0.xi.iter().map(|v| v * v).sum();
    let mut h_drift = 0.0_f64;
    let mut c_drift = 0.0_f64;
    for s in &traj.states {
        h_drift = h_drift.max((h.eval(s).unwrap() - h0).abs());
        let c: f64 = s.iter().map(|v| v * v).sum();
        c_drift = c_drift.max((c - c0).abs());
    }
    assert!(h_drift <= 1e-8, "H drift {h_drift:e}");
    assert!(c_drift <= 1e-8, "Casimir drift {c_drift:e}");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!(
        "criterion 3 (so3 conservation): PASS (H drift {h_drift:.2e}, Casimir drift {c_drift:.2e}, {} ms)",
        elapsed.as_millis()
    );
}

#[test]
fn criterion_04_livens_theorem() {
    let start = Instant::now();
    let (t0, t1) = (0.0, 2.0);
    for name in ["canonical-tm", "so3-top"] {
        let model = builtin(name);
        let h = hamiltonian(&model);
        let m = model.spec.rank();
        let pt0 = DualPoint {
            x: model.defaults.x0.clone(),
            xi: model.defaults.xi0.clone(),
        };
        let max_ds = |dt: f64| -> f64 {
            let traj = mechanics::integrate_hamilton(&model.spec, h, &pt0, t0, t1, dt, Method::Rk4)
                .unwrap();
            let lift = mechanics::hamiltonian_lift(&model.spec, h, &traj).unwrap();
            let mut worst = 0.0_f64;
            for trial in 0..20 {
                let gen = VariationGenerator::random(m, t0, t1, 1000 + trial);
                let ds = mechanics::first_variation(&model.spec, h, &lift, &gen).unwrap();
                worst = worst.max(ds.abs());
            }
            worst
        };
        let coarse = max_ds(1e-3);
        let fine = max_ds(5e-4);
        assert!(coarse <= 1e-6, "{name}: max |dS| = {coarse:e}");
        let factor = coarse / fine;
        assert!(factor >= 3.0, "{name}: reduction factor {factor}");

        // control: perturb xi by a bump of height 0.1 after lifting
        let traj =
            mechanics::integrate_hamilton(&model.spec, h, &pt0, t0, t1, 1e-3, Method::Rk4).unwrap();
        let mut lift = mechanics::hamiltonian_lift(&model.spec, h, &traj).unwrap();
        for (idx, p) in lift.points.iter_mut().enumerate() {
            let s = (lift.t[idx] - t0) / (t1 - t0);
            let bump = (std::f64::consts::PI * s).sin().powi(2);
            for xi in p.xi.iter_mut() {
                *xi += 0.1 * bump;
            }
        }
        let mut control = 0.0_f64;
        for trial in 0..20 {
            let gen = VariationGenerator::random(m, t0, t1, 1000 + trial);
            let ds = mechanics::first_variation(&model.spec, h, &lift, &gen).unwrap();
            control = control.max(ds.abs());
        }
        assert!(control >= 1e-2, "{name}: control |dS| = {control:e}");
        println!(
            "criterion 4 (Livens, {name}): PASS (max|dS| {coarse:.2e}, factor {factor:.2}, control {control:.2e})"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
}

#[test]
fn criterion_05_kappa_epsilon_duality() {
    let start = Instant::now();
    let mut worst_ratio = 0.0_f64;
    for name in models::list_models() {
        let model = builtin(name);
        let n = model.spec.base_dim();
        let m = model.spec.rank();
        let mut rng = Rng::new(0xACC_0005);
        for _ in 0..1000 {
            let x: Vec<f64> = model
                .spec
                .sample_box()
                .iter()
                .map(|&(lo, hi)| rng.uniform(lo, hi))
                .collect();
            let y = rng.uniform_vec(m, -2.0, 2.0);
            let cap_y = rng.uniform_vec(m, -2.0, 2.0);
            let cap_ydot = rng.uniform_vec(m, -2.0, 2.0);
            let p = rng.uniform_vec(n, -2.0, 2.0);
            let pi_ = rng.uniform_vec(m, -2.0, 2.0);
            let magnitude = y
                .iter()
                .chain(&cap_y)
                .chain(&cap_ydot)
                .chain(&p)
                .chain(&pi_)
                .chain(&x)
                .fold(0.0_f64, |a, v| a.max(v.abs()));
            let r = algebroid::duality_residual(&model.spec, &x, &y, &cap_y, &cap_ydot, &p, &pi_)
                .unwrap();
            let bound = 1e-12 * (1.0 + magnitude);
            assert!(r <= bound, "{name}: residual {r:e} > {bound:e}");
            worst_ratio = worst_ratio.max(r / bound);
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 5 (kappa-epsilon duality): PASS (worst residual at {:.1}% of bound, {} ms)",
        worst_ratio * 100.0,
        elapsed.as_millis()
    );
}

#[test]
fn criterion_06_nonholonomic_suite() {
    let start = Instant::now();
    let model = builtin("sleigh");
    let h = hamiltonian(&model);
    let con = model.constraint.as_ref().unwrap();
    let pt0 = DualPoint {
        x: vec![],
        xi: model.defaults.xi0.clone(),
    };
    let traj =
        constraints::integrate_nh(&model.spec, h, con, &pt0, 0.0, 5.0, 1e-3, Method::Rk4).unwrap();

    // constraint preservation and energy conservation
    let h0 = h.eval(&pt0.xi).unwrap();
    let mut phi_drift = 0.0_f64;
    let mut h_drift = 0.0_f64;
    for s in &traj.states {
        let res = constraints::nh_constraint_residual(
            &model.spec,
            h,
            con,
            &DualPoint {
                x: vec![],
                xi: s.clone(),
            },
        )
        .unwrap();
        phi_drift = phi_drift.max(res[0].abs());
        h_drift = h_drift.max((h.eval(s).unwrap() - h0).abs());
    }
    assert!(phi_drift <= 1e-8, "constraint drift {phi_drift:e}");
    assert!(h_drift <= 1e-8, "energy drift {h_drift:e}");

    // independent Lagrange-d'Alembert oracle on the Euler-Lagrange side:
    // pdot_i = c^k_ji y^j dL/dy^k + lambda dPhi/dy^i with y = ginv p and
    // lambda chosen so that d/dt Phi(y) = 0
    let mech = model.mechanical.as_ref().unwrap();
    let ginv = mech.ginv_at(&[]).unwrap();
    let c = model.spec.c_at(&[]).unwrap();
    let a_dir = [-0.5, 0.0, 1.0]; // dPhi/dy for phi = y3 - 0.5 y1
    let mut el_rhs = |_t: f64, p: &[f64]| -> algemech::Result<Vec<f64>> {
        let y = ginv.matvec(p);
        // dL/dy = p at y = ginv p for the quadratic Lagrangian
        let mut f = [0.0; 3];
        for i in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                for j in 0..3 {
                    acc += c[k][j][i] * y[j] * p[k];
                }
            }
            f[i] = acc;
        }
        let a_ginv_a: f64 = (0..3)
            .map(|i| {
                (0..3)
                    .map(|j| a_dir[i] * ginv.at(i, j) * a_dir[j])
                    .sum::<f64>()
            })
            .sum();
        let a_ginv_f: f64 = (0..3)
            .map(|i| (0..3).map(|j| a_dir[i] * ginv.at(i, j) * f[j]).sum::<f64>())
            .sum();
        let lambda = -a_ginv_f / a_ginv_a;
        Ok((0..3).map(|i| f[i] + lambda * a_dir[i]).collect())
    };
    let el_traj = mechanics::integrate(&mut el_rhs, &pt0.xi, 0.0, 5.0, 1e-3, Method::Rk4).unwrap();
    let el_dist = sup_state_dist(&traj, &el_traj, 3);
    assert!(el_dist <= 1e-6, "EL-side distance {el_dist:e}");

    // geometric tangency along the nonholonomic trajectory
    let tang = constraints::tangency_residual(&model.spec, h, con, &traj).unwrap();
    assert!(tang <= 1e-5, "tangency residual {tang:e}");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "criterion 6 (nonholonomic suite): PASS (phi drift {phi_drift:.2e}, H drift {h_drift:.2e}, EL dist {el_dist:.2e}, tangency {tang:.2e}, {} ms)",
        elapsed.as_millis()
    );
}

#[test]
fn criterion_07_reduction_theorem() {
    let start = Instant::now();

    // sleigh: i*(nh trajectory) vs reduced trajectory on D*
    let model = builtin("sleigh");
    let h = hamiltonian(&model);
    let con = model.constraint.as_ref().unwrap();
    let mech = model.mechanical.as_ref().unwrap();
    let pt0 = DualPoint {
        x: vec![],
        xi: model.defaults.xi0.clone(),
    };
    let nh =
        constraints::integrate_nh(&model.spec, h, con, &pt0, 0.0, 5.0, 1e-3, Method::Rk4).unwrap();
    let red = constraints::reduce(&model.spec, con, mech).unwrap();
    let eta0 = red.project_momentum(&[], &pt0.xi).unwrap();
    let red_traj = red
        .integrate(&[], &eta0, 0.0, 5.0, 1e-3, Method::Rk4)
        .unwrap();
    let mut sleigh_dist = 0.0_f64;
    for (s, rs) in nh.states.iter().zip(&red_traj.states) {
        let eta = red.project_momentum(&[], s).unwrap();
        for (alpha, &e) in eta.iter().enumerate() {
            sleigh_dist = sleigh_dist.max((e - rs[alpha]).abs());
        }
    }
    assert!(
        sleigh_dist <= 1e-6,
        "sleigh reduction distance {sleigh_dist:e}"
    );

    // identity-frame control on canonical-tm: reduction must be exact
    let model = builtin("canonical-tm");
    let h = hamiltonian(&model);
    let mech = model.mechanical.as_ref().unwrap();
    let xvars = algebroid::base_vars(2);
    let xrefs: Vec<&str> = xvars.iter().map(|s| s.as_str()).collect();
    let id_frame = vec![
        vec![
            expr::parse("1", &xrefs).unwrap(),
            expr::parse("0", &xrefs).unwrap(),
        ],
        vec![
            expr::parse("0", &xrefs).unwrap(),
            expr::parse("1", &xrefs).unwrap(),
        ],
    ];
    let con_id = ConstraintSpec::new(&model.spec, vec![], Some(id_frame), true).unwrap();
    let red = constraints::reduce(&model.spec, &con_id, mech).unwrap();
    let pt0 = DualPoint {
        x: model.defaults.x0.clone(),
        xi: model.defaults.xi0.clone(),
    };
    let free =
        mechanics::integrate_hamilton(&model.spec, h, &pt0, 0.0, 5.0, 1e-3, Method::Rk4).unwrap();
    let red_traj = red
        .integrate(&pt0.x, &pt0.xi, 0.0, 5.0, 1e-3, Method::Rk4)
        .unwrap();
    let id_dist = sup_state_dist(&free, &red_traj, 4);
    assert!(id_dist <= 1e-12, "identity reduction distance {id_dist:e}");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "criterion 7 (reduction theorem): PASS (sleigh {sleigh_dist:.2e}, identity control {id_dist:.2e}, {} ms)",
        elapsed.as_millis()
    );
}

#[test]
fn criterion_08_vaconomic_nh_inequivalence() {
    let start = Instant::now();
    let model = builtin("vac-particle");
    let h = hamiltonian(&model);
    let con = model.constraint.as_ref().unwrap();
    let pt0 = DualPoint {
        x: model.defaults.x0.clone(),
        xi: model.defaults.xi0.clone(),
    };
    let nh =
        constraints::integrate_nh(&model.spec, h, con, &pt0, 0.0, 5.0, 1e-3, Method::Rk4).unwrap();
    let vac = constraints::integrate_vac(
        &model.spec,
        h,
        con,
        &pt0,
        &[0.0],
        0.0,
        5.0,
        1e-3,
        Method::Rk4,
    )
    .unwrap();
    let dist = sup_state_dist(&nh, &vac, 6);
    assert!(dist > 1e-2, "regimes did not diverge ({dist:e})");

    let mut nh_drift = 0.0_f64;
    let mut vac_drift = 0.0_f64;
    for (snh, svac) in nh.states.iter().zip(&vac.states) {
        let r = constraints::nh_constraint_residual(
            &model.spec,
            h,
            con,
            &DualPoint {
                x: snh[..3].to_vec(),
                xi: snh[3..6].to_vec(),
            },
        )
        .unwrap();
        nh_drift = nh_drift.max(r[0].abs());
        let r = constraints::nh_constraint_residual(
            &model.spec,
            h,
            con,
            &DualPoint {
                x: svac[..3].to_vec(),
                xi: svac[3..6].to_vec(),
            },
        )
        .unwrap();
        vac_drift = vac_drift.max(r[0].abs());
    }
    assert!(nh_drift <= 1e-8, "nh drift {nh_drift:e}");
    assert!(vac_drift <= 1e-8, "vac drift {vac_drift:e}");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "criterion 8 (vaconomic/nh inequivalence): PASS (sup-dist {dist:.2e}, drifts {nh_drift:.2e}/{vac_drift:.2e}, {} ms)",
        elapsed.as_millis()
    );
}

#[test]
fn criterion_09_structure_classification() {
    let start = Instant::now();
    let broken = builtin("broken-jacobi");
    let jac = broken.report.jacobiator.expect("skew holds");
    assert!(jac > 0.1, "broken-jacobi jacobiator {jac:e}");
    for name in ["canonical-tm", "sleigh", "so3-top", "vac-particle"] {
        let model = builtin(name);
        let jac = model.report.jacobiator.expect("skew holds");
        assert!(jac <= 1e-9, "{name} jacobiator {jac:e}");
        assert!(model.report.skew <= 1e-9, "{name} skew");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 9 (structure classification): PASS (broken {jac:.2e} > 0.1, Lie models <= 1e-9, {} ms)",
        elapsed.as_millis()
    );
}

#[test]
fn criterion_10_autodiff_oracle() {
    let start = Instant::now();
    // central finite differences at h = 1e-5, independent of the jet path
    const H: f64 = 1e-5;
    let vars = ["x1", "x2", "x3"];
    let mut rng = Rng::new(0xACC_0010);
    let mut checked = 0;
    while checked < 50 {
        let (e, env) = algemech::expr::testing::random_checked_pair(&mut rng, &vars);
        let jet = e.eval_jet2(&env).unwrap();
        let mut pt = env.clone();
        for i in 0..vars.len() {
            pt[i] = env[i] + H;
            let fp = e.eval(&pt).unwrap();
            pt[i] = env[i] - H;
            let fm = e.eval(&pt).unwrap();
            pt[i] = env[i];
            let fd = (fp - fm) / (2.0 * H);
            let tol = (1e-6_f64).max(1e-6 * jet.grad[i].abs());
            assert!(
                (jet.grad[i] - fd).abs() <= tol,
                "grad[{i}]: jet {} vs fd {fd} for {}",
                jet.grad[i],
                e.render()
            );
        }
        let f0 = e.eval(&env).unwrap();
        for i in 0..vars.len() {
            pt[i] = env[i] + H;
            let fp = e.eval(&pt).unwrap();
            pt[i] = env[i] - H;
            let fm = e.eval(&pt).unwrap();
            pt[i] = env[i];
            let fd = (fp - 2.0 * f0 + fm) / (H * H);
            assert!(
                (jet.hess_at(i, i) - fd).abs() <= 1e-4,
                "hess[{i}][{i}] for {}",
                e.render()
            );
            for j in 0..i {
                let mut acc = 0.0;
                for (si, sj, sign) in [
                    (1.0, 1.0, 1.0),
                    (1.0, -1.0, -1.0),
                    (-1.0, 1.0, -1.0),
                    (-1.0, -1.0, 1.0),
                ] {
                    pt[i] = env[i] + si * H;
                    pt[j] = env[j] + sj * H;
                    acc += sign * e.eval(&pt).unwrap();
                    pt[i] = env[i];
                    pt[j] = env[j];
                }
                let fd = acc / (4.0 * H * H);
                assert!(
                    (jet.hess_at(i, j) - fd).abs() <= 1e-4,
                    "hess[{i}][{j}] for {}",
                    e.render()
                );
            }
        }
        checked += 1;
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 10 (autodiff oracle): PASS (50 expression/point pairs, {} ms)",
        elapsed.as_millis()
    );
}
