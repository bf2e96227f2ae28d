//! Subcommand implementations. Each returns the process exit code:
//! 0 success/PASS, 1 numerical FAIL, 2 usage or load error.

use std::fs::File;
use std::io::Write;

use algemech::algebroid::{self, DualPoint};
use algemech::constraints::{self, ConstraintSpec, ReducedAlgebroid};
use algemech::expr::Expr;
use algemech::mechanics::{self, Method, MixedPath, Trajectory, VariationGenerator};
use algemech::models::{self, LoadedModel};
use algemech::{Error, Result};

use crate::table::Table;
use crate::RunArgs;

const LIVENS_TOL: f64 = 1e-6;
const LIVENS_FACTOR: f64 = 3.0;
const REDUCE_TOL: f64 = 1e-6;

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Syntax { .. }
        | Error::UnknownVariable(_)
        | Error::ModelParse { .. }
        | Error::Io(_)
        | Error::DimensionMismatch(_)
        | Error::InvariantViolation(_)
        | Error::PreconditionViolated(_) => 2,
        _ => 1,
    }
}

fn fail(err: Error) -> i32 {
    eprintln!("error: {err}");
    exit_code_for(&err)
}

fn load(model: &str) -> Result<LoadedModel> {
    models::resolve(model).map_err(|err| match err {
        Error::Io(io) => Error::InvariantViolation(format!("cannot load model `{model}`: {io}")),
        other => other,
    })
}

fn parse_vec(text: &str, what: &str, expected: usize) -> Result<Vec<f64>> {
    let trimmed = text.trim();
    let vals: Vec<f64> = if trimmed.is_empty() {
        vec![]
    } else {
        trimmed
            .split(',')
            .map(|item| {
                item.trim().parse::<f64>().map_err(|_| {
                    Error::PreconditionViolated(format!("{what}: `{item}` is not a number"))
                })
            })
            .collect::<Result<Vec<f64>>>()?
    };
    if vals.len() != expected {
        return Err(Error::PreconditionViolated(format!(
            "{what} must have {expected} entries (got {})",
            vals.len()
        )));
    }
    Ok(vals)
}

/// Flags override the model-file defaults.
struct RunConfig {
    x0: Vec<f64>,
    xi0: Vec<f64>,
    mu0: Vec<f64>,
    t0: f64,
    t1: f64,
    dt: f64,
    method: Method,
    seed: u64,
}

fn run_config(args: &RunArgs, model: &LoadedModel) -> Result<RunConfig> {
    let n = model.spec.base_dim();
    let m = model.spec.rank();
    let r = model.constraint.as_ref().map_or(0, |c| c.r());
    let cfg = RunConfig {
        x0: match &args.x0 {
            Some(s) => parse_vec(s, "--x0", n)?,
            None => model.defaults.x0.clone(),
        },
        xi0: match &args.xi0 {
            Some(s) => parse_vec(s, "--xi0", m)?,
            None => model.defaults.xi0.clone(),
        },
        mu0: match &args.mu0 {
            Some(s) => parse_vec(s, "--mu0", r)?,
            None => model.defaults.mu0.clone(),
        },
        t0: args.t0.unwrap_or(model.defaults.t0),
        t1: args.t1.unwrap_or(model.defaults.t1),
        dt: args.dt.unwrap_or(model.defaults.dt),
        method: match &args.method {
            Some(s) => s.parse()?,
            None => model.defaults.method,
        },
        seed: args.seed,
    };
    if cfg.dt.is_nan() || cfg.dt <= 0.0 {
        return Err(Error::PreconditionViolated("dt must be positive".into()));
    }
    if cfg.t0.is_nan() || cfg.t1.is_nan() || cfg.t1 <= cfg.t0 {
        return Err(Error::PreconditionViolated(
            "t1 must be greater than t0".into(),
        ));
    }
    Ok(cfg)
}

fn hamiltonian_of(model: &LoadedModel) -> Result<&Expr> {
    model.hamiltonian.as_ref().ok_or_else(|| {
        Error::PreconditionViolated(format!(
            "model `{}` declares no hamiltonian (and no metric to induce one)",
            model.name
        ))
    })
}

fn constraint_of(model: &LoadedModel) -> Result<&ConstraintSpec> {
    model.constraint.as_ref().ok_or_else(|| {
        Error::PreconditionViolated(format!("model `{}` declares no constraints", model.name))
    })
}

fn generator_seed(seed: u64, trial: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(1000 + trial)
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

pub fn check(model_arg: &str) -> i32 {
    let model = match load(model_arg) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let tol = algebroid::STRUCTURE_TOL;
    let verdict = |residual: f64| if residual <= tol { "PASS" } else { "FAIL" };
    println!(
        "model: {} (n = {}, m = {})",
        model.name,
        model.spec.base_dim(),
        model.spec.rank()
    );
    let report = &model.report;
    println!(
        "skew residual:       {:.2e}  {} (tol {tol:.0e})",
        report.skew,
        verdict(report.skew)
    );
    match report.almost_lie {
        Some(al) => println!(
            "almost-Lie residual: {:.2e}  {} (tol {tol:.0e})",
            al,
            verdict(al)
        ),
        None => println!("almost-Lie residual: skipped"),
    }
    match report.jacobiator {
        Some(jac) => println!(
            "jacobi residual:     {:.2e}  {} (tol {tol:.0e})",
            jac,
            verdict(jac)
        ),
        None => println!("jacobi residual:     skipped (bracket is not skew-symmetric)"),
    }
    println!("classification: {}", report.classification());
    0
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn simulate(args: &RunArgs, mode: &str, output: Option<&str>, format: &str) -> i32 {
    match simulate_inner(args, mode, output, format) {
        Ok(()) => 0,
        Err(e) => fail(e),
    }
}

fn simulate_inner(args: &RunArgs, mode: &str, output: Option<&str>, format: &str) -> Result<()> {
    if format != "csv" && format != "json" {
        return Err(Error::PreconditionViolated(format!(
            "unknown format `{format}` (expected csv or json)"
        )));
    }
    let model = load(&args.model)?;
    let cfg = run_config(args, &model)?;
    let table = match mode {
        "hamilton" => simulate_hamilton(&model, &cfg)?,
        "lagrange" => simulate_lagrange(&model, &cfg)?,
        "nonholonomic" => simulate_nonholonomic(&model, &cfg)?,
        "vaconomic" => simulate_vaconomic(&model, &cfg)?,
        "reduced" => simulate_reduced(&model, &cfg)?,
        other => {
            return Err(Error::PreconditionViolated(format!(
                "unknown mode `{other}` (expected lagrange, hamilton, nonholonomic, vaconomic or reduced)"
            )))
        }
    };
    match output {
        Some(path) => {
            let mut file = File::create(path)?;
            write_table(&table, format, &mut file)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_table(&table, format, &mut lock)?;
        }
    }
    Ok(())
}

fn write_table(table: &Table, format: &str, out: &mut dyn Write) -> Result<()> {
    match format {
        "json" => table.write_json(out)?,
        _ => table.write_csv(out)?,
    }
    Ok(())
}

/// Common Hamiltonian-side columns: t, x, xi, y = dH/dxi, H, phi residuals.
fn hamiltonian_table(
    model: &LoadedModel,
    traj: &Trajectory,
    mu: Option<&[Vec<f64>]>,
) -> Result<Table> {
    let n = model.spec.base_dim();
    let m = model.spec.rank();
    let h = hamiltonian_of(model)?;
    let mut table = Table::new();
    table.push("t", traj.t.clone());
    for a in 0..n {
        table.push(
            format!("x{}", a + 1),
            traj.states.iter().map(|s| s[a]).collect(),
        );
    }
    for i in 0..m {
        table.push(
            format!("xi{}", i + 1),
            traj.states.iter().map(|s| s[n + i]).collect(),
        );
    }
    let mut y_cols = vec![Vec::with_capacity(traj.len()); m];
    let mut h_col = Vec::with_capacity(traj.len());
    let mut phi_cols: Vec<Vec<f64>> = match &model.constraint {
        Some(con) => vec![Vec::with_capacity(traj.len()); con.r()],
        None => vec![],
    };
    for s in &traj.states {
        let (x, xi) = (&s[..n], &s[n..n + m]);
        let jet = mechanics::hamiltonian_jet(h, n, m, x, xi)?;
        for i in 0..m {
            y_cols[i].push(jet.d_xi[i]);
        }
        h_col.push(jet.value);
        if let Some(con) = &model.constraint {
            let vals = con.phi_at(x, &jet.d_xi)?;
            for (s_idx, v) in vals.into_iter().enumerate() {
                phi_cols[s_idx].push(v);
            }
        }
    }
    for (i, col) in y_cols.into_iter().enumerate() {
        table.push(format!("y{}", i + 1), col);
    }
    table.push("H", h_col);
    for (s_idx, col) in phi_cols.into_iter().enumerate() {
        table.push(format!("phi{}", s_idx + 1), col);
    }
    if let Some(mu) = mu {
        let r = mu.first().map_or(0, |row| row.len());
        for s_idx in 0..r {
            table.push(
                format!("mu{}", s_idx + 1),
                mu.iter().map(|row| row[s_idx]).collect(),
            );
        }
    }
    Ok(table)
}

fn simulate_hamilton(model: &LoadedModel, cfg: &RunConfig) -> Result<Table> {
    let h = hamiltonian_of(model)?;
    let pt0 = DualPoint {
        x: cfg.x0.clone(),
        xi: cfg.xi0.clone(),
    };
    let traj =
        mechanics::integrate_hamilton(&model.spec, h, &pt0, cfg.t0, cfg.t1, cfg.dt, cfg.method)?;
    hamiltonian_table(model, &traj, None)
}

fn simulate_nonholonomic(model: &LoadedModel, cfg: &RunConfig) -> Result<Table> {
    let h = hamiltonian_of(model)?;
    let con = constraint_of(model)?;
    let pt0 = constraints::nh_project_initial(
        &model.spec,
        h,
        con,
        &DualPoint {
            x: cfg.x0.clone(),
            xi: cfg.xi0.clone(),
        },
    )?;
    let traj = constraints::integrate_nh(
        &model.spec,
        h,
        con,
        &pt0,
        cfg.t0,
        cfg.t1,
        cfg.dt,
        cfg.method,
    )?;
    let mu = traj.multipliers.clone().unwrap_or_default();
    hamiltonian_table(model, &traj, Some(&mu))
}

fn simulate_vaconomic(model: &LoadedModel, cfg: &RunConfig) -> Result<Table> {
    let h = hamiltonian_of(model)?;
    let con = constraint_of(model)?;
    let n = model.spec.base_dim();
    let m = model.spec.rank();
    let pt0 = constraints::nh_project_initial(
        &model.spec,
        h,
        con,
        &DualPoint {
            x: cfg.x0.clone(),
            xi: cfg.xi0.clone(),
        },
    )?;
    let traj = constraints::integrate_vac(
        &model.spec,
        h,
        con,
        &pt0,
        &cfg.mu0,
        cfg.t0,
        cfg.t1,
        cfg.dt,
        cfg.method,
    )?;
    // reuse the Hamiltonian-side table on the (x, xi) part of the state
    let dual = Trajectory {
        t: traj.t.clone(),
        states: traj.states.iter().map(|s| s[..n + m].to_vec()).collect(),
        multipliers: None,
    };
    let mu = traj.multipliers.clone().unwrap_or_default();
    hamiltonian_table(model, &dual, Some(&mu))
}

fn simulate_lagrange(model: &LoadedModel, cfg: &RunConfig) -> Result<Table> {
    let l = model.lagrangian.as_ref().ok_or_else(|| {
        Error::PreconditionViolated(format!("model `{}` declares no lagrangian", model.name))
    })?;
    let n = model.spec.base_dim();
    let m = model.spec.rank();
    let traj = mechanics::integrate_el(
        &model.spec,
        l,
        &cfg.x0,
        &cfg.xi0,
        &vec![0.0; m],
        cfg.t0,
        cfg.t1,
        cfg.dt,
        cfg.method,
    )?;
    let mut table = Table::new();
    table.push("t", traj.t.clone());
    for a in 0..n {
        table.push(
            format!("x{}", a + 1),
            traj.states.iter().map(|s| s[a]).collect(),
        );
    }
    for i in 0..m {
        table.push(
            format!("p{}", i + 1),
            traj.states.iter().map(|s| s[n + i]).collect(),
        );
    }
    for i in 0..m {
        table.push(
            format!("y{}", i + 1),
            traj.states.iter().map(|s| s[n + m + i]).collect(),
        );
    }
    // energy p.y - L and constraint residuals on the velocity representation
    let mut h_col = Vec::with_capacity(traj.len());
    let mut phi_cols: Vec<Vec<f64>> = match &model.constraint {
        Some(con) => vec![Vec::with_capacity(traj.len()); con.r()],
        None => vec![],
    };
    for s in &traj.states {
        let (x, p, y) = (&s[..n], &s[n..n + m], &s[n + m..n + 2 * m]);
        let mut env = x.to_vec();
        env.extend_from_slice(y);
        let lv = l.eval(&env)?;
        let pairing: f64 = p.iter().zip(y).map(|(a, b)| a * b).sum();
        h_col.push(pairing - lv);
        if let Some(con) = &model.constraint {
            let vals = con.phi_at(x, y)?;
            for (s_idx, v) in vals.into_iter().enumerate() {
                phi_cols[s_idx].push(v);
            }
        }
    }
    table.push("H", h_col);
    for (s_idx, col) in phi_cols.into_iter().enumerate() {
        table.push(format!("phi{}", s_idx + 1), col);
    }
    Ok(table)
}

fn simulate_reduced(model: &LoadedModel, cfg: &RunConfig) -> Result<Table> {
    let (red, _) = build_reduction(model)?;
    let n = model.spec.base_dim();
    let d = red.rank();
    let eta0 = red.project_momentum(&cfg.x0, &cfg.xi0)?;
    let traj = red.integrate(&cfg.x0, &eta0, cfg.t0, cfg.t1, cfg.dt, cfg.method)?;
    let mut table = Table::new();
    table.push("t", traj.t.clone());
    for a in 0..n {
        table.push(
            format!("x{}", a + 1),
            traj.states.iter().map(|s| s[a]).collect(),
        );
    }
    for alpha in 0..d {
        table.push(
            format!("xi{}", alpha + 1),
            traj.states.iter().map(|s| s[n + alpha]).collect(),
        );
    }
    let mut y_cols = vec![Vec::with_capacity(traj.len()); d];
    let mut h_col = Vec::with_capacity(traj.len());
    for s in &traj.states {
        let (x, eta) = (&s[..n], &s[n..n + d]);
        let (_, d_eta) = red.hamiltonian_grads(x, eta)?;
        for alpha in 0..d {
            y_cols[alpha].push(d_eta[alpha]);
        }
        h_col.push(red.hamiltonian_value(x, eta)?);
    }
    for (alpha, col) in y_cols.into_iter().enumerate() {
        table.push(format!("y{}", alpha + 1), col);
    }
    table.push("H", h_col);
    Ok(table)
}

fn build_reduction(model: &LoadedModel) -> Result<(ReducedAlgebroid, &ConstraintSpec)> {
    let con = constraint_of(model)?;
    if !con.has_frame() {
        return Err(Error::PreconditionViolated(format!(
            "model `{}` has no constraint frame",
            model.name
        )));
    }
    let mech = model.mechanical.as_ref().ok_or_else(|| {
        Error::PreconditionViolated(format!("model `{}` declares no metric section", model.name))
    })?;
    Ok((constraints::reduce(&model.spec, con, mech)?, con))
}

// ---------------------------------------------------------------------------
// livens
// ---------------------------------------------------------------------------

pub fn livens(args: &RunArgs, trials: usize, trajectory: Option<&str>) -> i32 {
    match livens_inner(args, trials, trajectory) {
        Ok(code) => code,
        Err(e) => fail(e),
    }
}

fn max_first_variation(
    model: &LoadedModel,
    h: &Expr,
    lift: &MixedPath,
    trials: usize,
    seed: u64,
    t0: f64,
    t1: f64,
) -> Result<f64> {
    let m = model.spec.rank();
    let mut worst = 0.0_f64;
    for trial in 0..trials {
        let gen = VariationGenerator::random(m, t0, t1, generator_seed(seed, trial as u64));
        let ds = mechanics::first_variation(&model.spec, h, lift, &gen)?;
        worst = worst.max(ds.abs());
    }
    Ok(worst)
}

fn livens_inner(args: &RunArgs, trials: usize, trajectory: Option<&str>) -> Result<i32> {
    let model = load(&args.model)?;
    let h = hamiltonian_of(&model)?;
    let n = model.spec.base_dim();
    let m = model.spec.rank();
    println!("model: {}", model.name);

    if let Some(path) = trajectory {
        let text = std::fs::read_to_string(path)?;
        let table = Table::read_csv(&text)?;
        let t = table
            .column("t")
            .ok_or_else(|| Error::InvariantViolation("trajectory file has no t column".into()))?
            .to_vec();
        let mut states = vec![Vec::with_capacity(n + m); t.len()];
        for a in 0..n {
            let col = table.column(&format!("x{}", a + 1)).ok_or_else(|| {
                Error::InvariantViolation(format!("trajectory file has no x{} column", a + 1))
            })?;
            for (row, &v) in col.iter().enumerate() {
                states[row].push(v);
            }
        }
        for i in 0..m {
            let col = table.column(&format!("xi{}", i + 1)).ok_or_else(|| {
                Error::InvariantViolation(format!("trajectory file has no xi{} column", i + 1))
            })?;
            for (row, &v) in col.iter().enumerate() {
                states[row].push(v);
            }
        }
        let traj = Trajectory {
            t: t.clone(),
            states,
            multipliers: None,
        };
        let lift = mechanics::hamiltonian_lift(&model.spec, h, &traj)?;
        let (t0, t1) = (t[0], *t.last().unwrap());
        let max_ds = max_first_variation(&model, h, &lift, trials, args.seed, t0, t1)?;
        println!("trials: {trials}");
        println!("max|dS| on supplied trajectory: {max_ds:.2e}");
        return if max_ds <= LIVENS_TOL {
            println!("verdict: PASS (max|dS| <= {LIVENS_TOL:.0e})");
            Ok(0)
        } else {
            println!("verdict: FAIL (max|dS| > {LIVENS_TOL:.0e})");
            Ok(1)
        };
    }

    let cfg = run_config(args, &model)?;
    let pt0 = DualPoint {
        x: cfg.x0.clone(),
        xi: cfg.xi0.clone(),
    };
    let run = |dt: f64| -> Result<f64> {
        let traj =
            mechanics::integrate_hamilton(&model.spec, h, &pt0, cfg.t0, cfg.t1, dt, cfg.method)?;
        let lift = mechanics::hamiltonian_lift(&model.spec, h, &traj)?;
        max_first_variation(&model, h, &lift, trials, cfg.seed, cfg.t0, cfg.t1)
    };
    let coarse = run(cfg.dt)?;
    let fine = run(cfg.dt / 2.0)?;
    let factor = coarse / fine;
    println!("trials: {trials}");
    println!("max|dS| at dt = {:.form$e}: {coarse:.2e}", cfg.dt, form = 3);
    println!("max|dS| at dt/2:         {fine:.2e}");
    println!("reduction factor: {factor:.2}");
    if coarse <= LIVENS_TOL && factor >= LIVENS_FACTOR {
        println!("verdict: PASS (max|dS| <= {LIVENS_TOL:.0e}, factor >= {LIVENS_FACTOR})");
        Ok(0)
    } else {
        println!("verdict: FAIL (need max|dS| <= {LIVENS_TOL:.0e} and factor >= {LIVENS_FACTOR})");
        Ok(1)
    }
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

pub fn compare(args: &RunArgs) -> i32 {
    match compare_inner(args) {
        Ok(()) => 0,
        Err(e) => fail(e),
    }
}

fn compare_inner(args: &RunArgs) -> Result<()> {
    let model = load(&args.model)?;
    let h = hamiltonian_of(&model)?;
    let con = constraint_of(&model)?;
    let cfg = run_config(args, &model)?;
    let n = model.spec.base_dim();
    let m = model.spec.rank();
    let pt0 = constraints::nh_project_initial(
        &model.spec,
        h,
        con,
        &DualPoint {
            x: cfg.x0.clone(),
            xi: cfg.xi0.clone(),
        },
    )?;
    let nh = constraints::integrate_nh(
        &model.spec,
        h,
        con,
        &pt0,
        cfg.t0,
        cfg.t1,
        cfg.dt,
        cfg.method,
    )?;
    let mu0 = vec![0.0; con.r()];
    let vac = constraints::integrate_vac(
        &model.spec,
        h,
        con,
        &pt0,
        &mu0,
        cfg.t0,
        cfg.t1,
        cfg.dt,
        cfg.method,
    )?;
    let mut dist = 0.0_f64;
    let mut nh_drift = 0.0_f64;
    let mut vac_drift = 0.0_f64;
    for (snh, svac) in nh.states.iter().zip(&vac.states) {
        for i in 0..n + m {
            dist = dist.max((snh[i] - svac[i]).abs());
        }
        let res = constraints::nh_constraint_residual(
            &model.spec,
            h,
            con,
            &DualPoint {
                x: snh[..n].to_vec(),
                xi: snh[n..n + m].to_vec(),
            },
        )?;
        nh_drift = res.iter().fold(nh_drift, |a, v| a.max(v.abs()));
        let res = constraints::nh_constraint_residual(
            &model.spec,
            h,
            con,
            &DualPoint {
                x: svac[..n].to_vec(),
                xi: svac[n..n + m].to_vec(),
            },
        )?;
        vac_drift = res.iter().fold(vac_drift, |a, v| a.max(v.abs()));
    }
    println!("model: {}", model.name);
    println!("sup-distance (x, xi): {dist:.2e}");
    println!("nonholonomic constraint drift: {nh_drift:.2e}");
    println!("vaconomic constraint drift:    {vac_drift:.2e}");
    Ok(())
}

// ---------------------------------------------------------------------------
// reduce
// ---------------------------------------------------------------------------

pub fn reduce(args: &RunArgs) -> i32 {
    match reduce_inner(args) {
        Ok(code) => code,
        Err(e) => fail(e),
    }
}

fn reduce_inner(args: &RunArgs) -> Result<i32> {
    let model = load(&args.model)?;
    let h = hamiltonian_of(&model)?;
    let cfg = run_config(args, &model)?;
    let (red, con) = build_reduction(&model)?;
    let n = model.spec.base_dim();
    let m = model.spec.rank();
    let pt0 = constraints::nh_project_initial(
        &model.spec,
        h,
        con,
        &DualPoint {
            x: cfg.x0.clone(),
            xi: cfg.xi0.clone(),
        },
    )?;
    let nh = constraints::integrate_nh(
        &model.spec,
        h,
        con,
        &pt0,
        cfg.t0,
        cfg.t1,
        cfg.dt,
        cfg.method,
    )?;
    let eta0 = red.project_momentum(&pt0.x, &pt0.xi)?;
    let red_traj = red.integrate(&pt0.x, &eta0, cfg.t0, cfg.t1, cfg.dt, cfg.method)?;
    let d = red.rank();
    let mut dist = 0.0_f64;
    for (snh, sred) in nh.states.iter().zip(&red_traj.states) {
        let (x, xi) = (&snh[..n], &snh[n..n + m]);
        for a in 0..n {
            dist = dist.max((x[a] - sred[a]).abs());
        }
        let eta = red.project_momentum(x, xi)?;
        for alpha in 0..d {
            dist = dist.max((eta[alpha] - sred[n + alpha]).abs());
        }
    }
    println!("model: {}", model.name);
    println!("sup-distance i*(nh trajectory) vs reduced trajectory: {dist:.2e}");
    if dist <= REDUCE_TOL {
        println!("verdict: PASS (<= {REDUCE_TOL:.0e})");
        Ok(0)
    } else {
        println!("verdict: FAIL (> {REDUCE_TOL:.0e})");
        Ok(1)
    }
}
