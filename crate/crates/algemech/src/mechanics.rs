//! Unconstrained dynamics on an algebroid: generalized Euler-Lagrange and
//! Hamilton equations, fixed-step integration, and the numerical variational
//! verifier on the mixed bundle `F = E (+) E*`.
//!
//! Coordinate conventions (summation over repeated indices):
//!
//! - Hamilton: `xdot^a = rho^a_i dH/dxi_i`,
//!   `xidot_j = xi_k c^k_ij dH/dxi_i - sigma^a_j dH/dx^a`
//!   (the contraction of `dH` with the bivector `Pi`)
//! - Euler-Lagrange (momentum form): `xdot^a = rho^a_i y^i`,
//!   `pdot_i = sigma^a_i dL/dx^a + c^k_ji y^j dL/dy^k` with `p = dL/dy`
//! - admissible variation: `delta_b gamma = (x, y, sigma^c_i b^i, bdot^k + c^k_ij y^i b^j)`
//! - first variation of the mixed action along `(f, h)`:
//!   `dS = int f^j (-xidot_j - sigma^a_j dH/dx^a + xi_k c^k_ij y^i)
//!         + h_k (y^k - dH/dxi_k) dt`
//!
//! Hamiltonians are declared over `(x1..xn, xi1..xim)`, Lagrangians over
//! `(x1..xn, y1..ym)`.

use crate::algebroid::{AlgebroidSpec, DualPoint, EPoint, TangentDual, TangentE};
use crate::expr::Expr;
use crate::linalg::{self, Mat};
use crate::rng::Rng;
use crate::{Error, Result};

/// Point of the mixed bundle `F = E (+) E*`: `(x^a, y^i, xi_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Time grid plus per-node state vectors; the state layout is declared by
/// the producing operation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub multipliers: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Step size when the grid is uniform to `1e-12` relative.
    pub fn uniform_dt(&self) -> Option<f64> {
        if self.t.len() < 2 {
            return None;
        }
        let dt = self.t[1] - self.t[0];
        for w in self.t.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-12 * dt.abs().max(1.0) {
                return None;
            }
        }
        Some(dt)
    }
}

/// Mixed-bundle path on a time grid.
#[derive(Debug, Clone)]
pub struct MixedPath {
    pub t: Vec<f64>,
    pub points: Vec<MixedPoint>,
}

impl MixedPath {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Declared variable list for Hamiltonians: `x1..xn, xi1..xim`.
pub fn hamiltonian_vars(n: usize, m: usize) -> Vec<String> {
    let mut vars: Vec<String> = (1..=n).map(|a| format!("x{a}")).collect();
    vars.extend((1..=m).map(|i| format!("xi{i}")));
    vars
}

/// Declared variable list for Lagrangians: `x1..xn, y1..ym`.
pub fn lagrangian_vars(n: usize, m: usize) -> Vec<String> {
    let mut vars: Vec<String> = (1..=n).map(|a| format!("x{a}")).collect();
    vars.extend((1..=m).map(|i| format!("y{i}")));
    vars
}

/// Split first derivatives of `H(x, xi)` into base and fiber parts.
pub struct HamiltonianJet {
    pub value: f64,
    /// `dH/dx^a`
    pub d_x: Vec<f64>,
    /// `dH/dxi_i`
    pub d_xi: Vec<f64>,
    /// `d2H/dxi_k dxi_l`
    pub d_xi_xi: Mat,
    /// `d2H/dxi_k dx^b`
    pub d_xi_x: Mat,
}

/// Evaluate a Hamiltonian jet at `(x, xi)`.
pub fn hamiltonian_jet(
    h: &Expr,
    n: usize,
    m: usize,
    x: &[f64],
    xi: &[f64],
) -> Result<HamiltonianJet> {
    let mut env = Vec::with_capacity(n + m);
    env.extend_from_slice(x);
    env.extend_from_slice(xi);
    let jet = h.eval_jet2(&env)?;
    let mut d_xi_xi = Mat::zeros(m, m);
    let mut d_xi_x = Mat::zeros(m, n);
    for k in 0..m {
        for l in 0..m {
            *d_xi_xi.at_mut(k, l) = jet.hess_at(n + k, n + l);
        }
        for b in 0..n {
            *d_xi_x.at_mut(k, b) = jet.hess_at(n + k, b);
        }
    }
    Ok(HamiltonianJet {
        value: jet.value,
        d_x: jet.grad[..n].to_vec(),
        d_xi: jet.grad[n..].to_vec(),
        d_xi_xi,
        d_xi_x,
    })
}

// ---------------------------------------------------------------------------
// Finite differences and quadrature on grids
// ---------------------------------------------------------------------------

/// Second-order derivative estimates on a (possibly mildly non-uniform)
/// grid: three-point Lagrange stencils, one-sided at the ends.
pub fn grid_derivative(t: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    let n = t.len();
    if n < 3 {
        return Err(Error::GridTooCoarse(format!(
            "derivative needs at least 3 nodes (got {n})"
        )));
    }
    assert_eq!(f.len(), n);
    let stencil = |i0: usize, te: f64| -> f64 {
        let (t0, t1, t2) = (t[i0], t[i0 + 1], t[i0 + 2]);
        let (f0, f1, f2) = (f[i0], f[i0 + 1], f[i0 + 2]);
        f0 * (2.0 * te - t1 - t2) / ((t0 - t1) * (t0 - t2))
            + f1 * (2.0 * te - t0 - t2) / ((t1 - t0) * (t1 - t2))
            + f2 * (2.0 * te - t0 - t1) / ((t2 - t0) * (t2 - t1))
    };
    let mut out = vec![0.0; n];
    out[0] = stencil(0, t[0]);
    for i in 1..n - 1 {
        out[i] = stencil(i - 1, t[i]);
    }
    out[n - 1] = stencil(n - 3, t[n - 1]);
    Ok(out)
}

/// Composite Simpson quadrature on a uniform grid; an odd interval count is
/// finished with a 3/8 block, non-uniform tails fall back to trapezoids.
pub fn simpson(t: &[f64], f: &[f64]) -> f64 {
    assert_eq!(t.len(), f.len());
    let n = t.len();
    if n < 2 {
        return 0.0;
    }
    if n == 2 {
        return 0.5 * (t[1] - t[0]) * (f[0] + f[1]);
    }
    let dt = t[1] - t[0];
    let uniform = t
        .windows(2)
        .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(1.0));
    if !uniform {
        let mut acc = 0.0;
        for i in 0..n - 1 {
            acc += 0.5 * (t[i + 1] - t[i]) * (f[i] + f[i + 1]);
        }
        return acc;
    }
    let intervals = n - 1;
    let simpson_upto = |k: usize| -> f64 {
        // composite Simpson over the first k intervals, k even
        let mut acc = 0.0;
        let mut i = 0;
        while i + 2 <= k {
            acc += dt / 3.0 * (f[i] + 4.0 * f[i + 1] + f[i + 2]);
            i += 2;
        }
        acc
    };
    if intervals.is_multiple_of(2) {
        simpson_upto(intervals)
    } else if intervals >= 3 {
        let head = simpson_upto(intervals - 3);
        let i = intervals - 3;
        head + 3.0 * dt / 8.0 * (f[i] + 3.0 * f[i + 1] + 3.0 * f[i + 2] + f[i + 3])
    } else {
        0.5 * dt * (f[0] + f[1])
    }
}

// ---------------------------------------------------------------------------
// Admissibility and variations
// ---------------------------------------------------------------------------

/// Defect of the admissibility condition `xdot^a = rho^a_i(x) y^i` along a
/// trajectory with per-node states `(x, y)`, measured against grid
/// derivatives of the base curve.
pub fn admissibility_residual(spec: &AlgebroidSpec, traj: &Trajectory) -> Result<f64> {
    let n = spec.base_dim();
    let m = spec.rank();
    if traj.len() < 3 {
        return Err(Error::GridTooCoarse(format!(
            "admissibility check needs at least 3 nodes (got {})",
            traj.len()
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut xdot_fd = vec![vec![0.0; traj.len()]; n];
    for a in 0..n {
        let col: Vec<f64> = traj.states.iter().map(|s| s[a]).collect();
        xdot_fd[a] = grid_derivative(&traj.t, &col)?;
    }
    let mut worst = 0.0_f64;
    for (idx, state) in traj.states.iter().enumerate() {
        let (x, y) = (&state[..n], &state[n..n + m]);
        let anchored = spec.rho_at(x)?.matvec(y);
        for a in 0..n {
            worst = worst.max((xdot_fd[a][idx] - anchored[a]).abs());
        }
    }
    Ok(worst)
}

/// Admissible variation generated by an infinitesimal variation `b(t)`:
/// `delta_b gamma(t) = (x, y, sigma^c_i b^i, bdot^k + c^k_ij y^i b^j)`,
/// with `bdot` taken by grid derivatives.
pub fn variation_from_b(
    spec: &AlgebroidSpec,
    gamma: &Trajectory,
    b: &[Vec<f64>],
) -> Result<Vec<TangentE>> {
    let n = spec.base_dim();
    let m = spec.rank();
    assert_eq!(b.len(), gamma.len(), "b must be given per node");
    let mut bdot = vec![vec![0.0; gamma.len()]; m];
    for i in 0..m {
        let col: Vec<f64> = b.iter().map(|bi| bi[i]).collect();
        bdot[i] = grid_derivative(&gamma.t, &col)?;
    }
    let mut out = Vec::with_capacity(gamma.len());
    for (idx, state) in gamma.states.iter().enumerate() {
        let (x, y) = (&state[..n], &state[n..n + m]);
        let sigma = spec.sigma_at(x)?;
        let c = spec.c_at(x)?;
        let xdot = sigma.matvec(&b[idx]);
        let mut ydot = vec![0.0; m];
        for k in 0..m {
            let mut acc = bdot[k][idx];
            for i in 0..m {
                for j in 0..m {
                    acc += c[k][i][j] * y[i] * b[idx][j];
                }
            }
            ydot[k] = acc;
        }
        out.push(TangentE {
            x: x.to_vec(),
            y: y.to_vec(),
            xdot,
            ydot,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Legendre maps and Euler-Lagrange dynamics
// ---------------------------------------------------------------------------

/// Legendre map `lambda_L(x, y) = (x, dL/dy)`.
pub fn lambda_l(l: &Expr, n: usize, m: usize, pt: &EPoint) -> Result<DualPoint> {
    let mut env = Vec::with_capacity(n + m);
    env.extend_from_slice(&pt.x);
    env.extend_from_slice(&pt.y);
    let jet = l.eval_jet2(&env)?;
    Ok(DualPoint {
        x: pt.x.clone(),
        xi: jet.grad[n..].to_vec(),
    })
}

/// The map `Lambda_L = eps_E o dL`:
/// `(x, dL/dy, rho^b_k y^k, c^k_ij y^i dL/dy^k + sigma^a_j dL/dx^a)`.
pub fn capital_lambda_l(spec: &AlgebroidSpec, l: &Expr, pt: &EPoint) -> Result<TangentDual> {
    let n = spec.base_dim();
    let m = spec.rank();
    let mut env = Vec::with_capacity(n + m);
    env.extend_from_slice(&pt.x);
    env.extend_from_slice(&pt.y);
    let jet = l.eval_jet2(&env)?;
    let l_x = &jet.grad[..n];
    let l_y = &jet.grad[n..];
    let rho = spec.rho_at(&pt.x)?;
    let sigma = spec.sigma_at(&pt.x)?;
    let c = spec.c_at(&pt.x)?;
    let mut xidot = vec![0.0; m];
    for j in 0..m {
        let mut acc = 0.0;
        for k in 0..m {
            for i in 0..m {
                acc += c[k][i][j] * pt.y[i] * l_y[k];
            }
        }
        for a in 0..n {
            acc += sigma.at(a, j) * l_x[a];
        }
        xidot[j] = acc;
    }
    Ok(TangentDual {
        x: pt.x.clone(),
        xi: l_y.to_vec(),
        xdot: rho.matvec(&pt.y),
        xidot,
    })
}

/// Invert the fiber Legendre map: solve `dL/dy(x, y) = p` for `y` by damped
/// Newton from `y_guess` (residual tolerance `1e-12`, at most 50 iterations,
/// step halved up to 20 times until the residual norm decreases).
pub fn legendre_solve(
    l: &Expr,
    n: usize,
    m: usize,
    x: &[f64],
    p: &[f64],
    y_guess: &[f64],
) -> Result<Vec<f64>> {
    const TOL: f64 = 1e-12;
    const MAX_ITERS: usize = 50;
    let mut y = y_guess.to_vec();
    let residual = |y: &[f64]| -> Result<(Vec<f64>, Mat)> {
        let mut env = Vec::with_capacity(n + m);
        env.extend_from_slice(x);
        env.extend_from_slice(y);
        let jet = l.eval_jet2(&env)?;
        let r: Vec<f64> = (0..m).map(|i| jet.grad[n + i] - p[i]).collect();
        let mut hess = Mat::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                *hess.at_mut(i, j) = jet.hess_at(n + i, n + j);
            }
        }
        Ok((r, hess))
    };
    let norm = |r: &[f64]| r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let (mut r, mut hess) = residual(&y)?;
    for _ in 0..MAX_ITERS {
        if norm(&r) <= TOL {
            return Ok(y);
        }
        let cond = linalg::cond_1(&hess);
        if !cond.is_finite() || cond > 1e12 {
            return Err(Error::SingularLegendre(format!(
                "fiber Hessian condition number {cond:e} at x = {x:?}"
            )));
        }
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let step = linalg::solve(&hess, &neg_r)?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let trial: Vec<f64> = (0..m).map(|i| y[i] + lambda * step[i]).collect();
            // a trial that leaves the domain just shrinks the step
            if let Ok((r_new, h_new)) = residual(&trial) {
                if norm(&r_new) < norm(&r) {
                    y = trial;
                    r = r_new;
                    hess = h_new;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence(MAX_ITERS));
        }
    }
    if norm(&r) <= TOL {
        Ok(y)
    } else {
        Err(Error::NoConvergence(MAX_ITERS))
    }
}

/// Euler-Lagrange right-hand side in momentum form: recover `y` from
/// `p = dL/dy`, then `xdot^a = rho^a_i y^i` and
/// `pdot_i = sigma^a_i dL/dx^a + c^k_ji y^j dL/dy^k`.
#[allow(clippy::type_complexity)]
pub fn el_rhs(
    spec: &AlgebroidSpec,
    l: &Expr,
    x: &[f64],
    p: &[f64],
    y_guess: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = spec.base_dim();
    let m = spec.rank();
    let y = legendre_solve(l, n, m, x, p, y_guess)?;
    let mut env = Vec::with_capacity(n + m);
    env.extend_from_slice(x);
    env.extend_from_slice(&y);
    let jet = l.eval_jet2(&env)?;
    let l_x = &jet.grad[..n];
    let l_y = &jet.grad[n..];
    let rho = spec.rho_at(x)?;
    let sigma = spec.sigma_at(x)?;
    let c = spec.c_at(x)?;
    let xdot = rho.matvec(&y);
    let mut pdot = vec![0.0; m];
    for i in 0..m {
        let mut acc = 0.0;
        for a in 0..n {
            acc += sigma.at(a, i) * l_x[a];
        }
        for k in 0..m {
            for j in 0..m {
                acc += c[k][j][i] * y[j] * l_y[k];
            }
        }
        pdot[i] = acc;
    }
    Ok((xdot, pdot, y))
}

/// Defect of `T(lambda_L(gamma(t))) = Lambda_L(gamma(t))` along a trajectory
/// with per-node states `(x, y)`.
pub fn el_tangent_prolongation_residual(
    spec: &AlgebroidSpec,
    l: &Expr,
    traj: &Trajectory,
) -> Result<f64> {
    let n = spec.base_dim();
    let m = spec.rank();
    if traj.len() < 3 {
        return Err(Error::GridTooCoarse(format!(
            "tangent prolongation check needs at least 3 nodes (got {})",
            traj.len()
        )));
    }
    let mut lambda_path = Vec::with_capacity(traj.len());
    for state in &traj.states {
        let pt = EPoint {
            x: state[..n].to_vec(),
            y: state[n..n + m].to_vec(),
        };
        lambda_path.push(lambda_l(l, n, m, &pt)?);
    }
    let mut fd = vec![vec![0.0; traj.len()]; n + m];
    for a in 0..n {
        let col: Vec<f64> = lambda_path.iter().map(|d| d.x[a]).collect();
        fd[a] = grid_derivative(&traj.t, &col)?;
    }
    for i in 0..m {
        let col: Vec<f64> = lambda_path.iter().map(|d| d.xi[i]).collect();
        fd[n + i] = grid_derivative(&traj.t, &col)?;
    }
    let mut worst = 0.0_f64;
    for (idx, state) in traj.states.iter().enumerate() {
        let pt = EPoint {
            x: state[..n].to_vec(),
            y: state[n..n + m].to_vec(),
        };
        let cap = capital_lambda_l(spec, l, &pt)?;
        for a in 0..n {
            worst = worst.max((fd[a][idx] - cap.xdot[a]).abs());
        }
        for i in 0..m {
            worst = worst.max((fd[n + i][idx] - cap.xidot[i]).abs());
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Hamiltonian dynamics
// ---------------------------------------------------------------------------

/// Contraction shared by the expression-backed and callback-backed Hamilton
/// equations:
/// `xdot^b = rho^b_i W_i`, `xidot_j = xi_k c^k_ij W_i - sigma^a_j G_a`
/// where `W = dH/dxi` and `G = dH/dx`.
pub fn hamilton_contract(
    rho: &Mat,
    sigma: &Mat,
    c: &[Vec<Vec<f64>>],
    xi: &[f64],
    h_x: &[f64],
    h_xi: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = rho.rows;
    let m = rho.cols;
    let xdot = rho.matvec(h_xi);
    let mut xidot = vec![0.0; m];
    for j in 0..m {
        let mut acc = 0.0;
        for k in 0..m {
            for i in 0..m {
                acc += xi[k] * c[k][i][j] * h_xi[i];
            }
        }
        for a in 0..n {
            acc -= sigma.at(a, j) * h_x[a];
        }
        xidot[j] = acc;
    }
    (xdot, xidot)
}

/// Hamilton equations on `E*` for an expression Hamiltonian.
pub fn hamilton_rhs(
    spec: &AlgebroidSpec,
    h: &Expr,
    pt: &DualPoint,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = spec.base_dim();
    let m = spec.rank();
    let jet = hamiltonian_jet(h, n, m, &pt.x, &pt.xi)?;
    let rho = spec.rho_at(&pt.x)?;
    let sigma = spec.sigma_at(&pt.x)?;
    let c = spec.c_at(&pt.x)?;
    Ok(hamilton_contract(
        &rho, &sigma, &c, &pt.xi, &jet.d_x, &jet.d_xi,
    ))
}

/// The Livens-type Lagrangian on the mixed bundle:
/// `L_H(x, y, xi) = y^i xi_i - H(x, xi)`.
pub fn livens_lagrangian(h: &Expr, n: usize, m: usize, pt: &MixedPoint) -> Result<f64> {
    let mut env = Vec::with_capacity(n + m);
    env.extend_from_slice(&pt.x);
    env.extend_from_slice(&pt.xi);
    let hv = h.eval(&env)?;
    let pairing: f64 = pt.y.iter().zip(&pt.xi).map(|(y, xi)| y * xi).sum();
    Ok(pairing - hv)
}

/// Lift a dual trajectory (states `(x, xi)`) to the mixed bundle with
/// `y = dH/dxi(x, xi)`.
pub fn hamiltonian_lift(
    spec: &AlgebroidSpec,
    h: &Expr,
    dual_traj: &Trajectory,
) -> Result<MixedPath> {
    let n = spec.base_dim();
    let m = spec.rank();
    let mut points = Vec::with_capacity(dual_traj.len());
    for state in &dual_traj.states {
        let (x, xi) = (&state[..n], &state[n..n + m]);
        let jet = hamiltonian_jet(h, n, m, x, xi)?;
        points.push(MixedPoint {
            x: x.to_vec(),
            y: jet.d_xi,
            xi: xi.to_vec(),
        });
    }
    Ok(MixedPath {
        t: dual_traj.t.clone(),
        points,
    })
}

// ---------------------------------------------------------------------------
// Variation generators and the first variation
// ---------------------------------------------------------------------------

/// Low-order trigonometric polynomial on `[t0, t1]`:
/// `constant + sum_k sin_k sin(k pi s) + sum_k cos_k cos(k pi s)` with
/// `s = (t - t0) / (t1 - t0)`.
#[derive(Debug, Clone)]
pub struct TrigPoly {
    pub t0: f64,
    pub t1: f64,
    pub constant: f64,
    pub sin_coeffs: Vec<f64>,
    pub cos_coeffs: Vec<f64>,
}

impl TrigPoly {
    pub fn zero(t0: f64, t1: f64) -> Self {
        TrigPoly {
            t0,
            t1,
            constant: 0.0,
            sin_coeffs: vec![],
            cos_coeffs: vec![],
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = std::f64::consts::PI * (t - self.t0) / (self.t1 - self.t0);
        let mut acc = self.constant;
        for (k, a) in self.sin_coeffs.iter().enumerate() {
            acc += a * ((k as f64 + 1.0) * s).sin();
        }
        for (k, a) in self.cos_coeffs.iter().enumerate() {
            acc += a * ((k as f64 + 1.0) * s).cos();
        }
        acc
    }
}

/// Admissible variation data on the mixed bundle: `f` generates the `E`
/// direction (endpoint-vanishing when `endpoint_flag` holds) and `h` the
/// free `E*` direction.
#[derive(Debug, Clone)]
pub struct VariationGenerator {
    pub f: Vec<TrigPoly>,
    pub h: Vec<TrigPoly>,
    pub endpoint_flag: bool,
}

impl VariationGenerator {
    /// Sine-only `f` (endpoint-vanishing by construction) and free
    /// constant-plus-cosine `h`, coefficients drawn uniformly from `[-1, 1)`.
    pub fn random(m: usize, t0: f64, t1: f64, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let f = (0..m)
            .map(|_| TrigPoly {
                t0,
                t1,
                constant: 0.0,
                sin_coeffs: (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                cos_coeffs: vec![],
            })
            .collect();
        let h = (0..m)
            .map(|_| TrigPoly {
                t0,
                t1,
                constant: rng.uniform(-1.0, 1.0),
                sin_coeffs: vec![],
                cos_coeffs: (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            })
            .collect();
        let gen = VariationGenerator {
            f,
            h,
            endpoint_flag: true,
        };
        debug_assert!(gen.endpoint_defect() <= 1e-14);
        gen
    }

    pub fn zero(m: usize, t0: f64, t1: f64) -> Self {
        VariationGenerator {
            f: (0..m).map(|_| TrigPoly::zero(t0, t1)).collect(),
            h: (0..m).map(|_| TrigPoly::zero(t0, t1)).collect(),
            endpoint_flag: true,
        }
    }

    /// Largest magnitude of `f` at the interval ends.
    pub fn endpoint_defect(&self) -> f64 {
        self.f.iter().fold(0.0_f64, |acc, poly| {
            acc.max(poly.eval(poly.t0).abs())
                .max(poly.eval(poly.t1).abs())
        })
    }
}

/// First variation of the mixed action along the generator `(f, h)`:
/// Simpson quadrature of
/// `f^j (-xidot_j - sigma^a_j dH/dx^a + xi_k c^k_ij y^i) + h_k (y^k - dH/dxi_k)`
/// with `xidot` taken by grid derivatives.
pub fn first_variation(
    spec: &AlgebroidSpec,
    h: &Expr,
    path: &MixedPath,
    gen: &VariationGenerator,
) -> Result<f64> {
    if !gen.endpoint_flag {
        return Err(Error::PreconditionViolated(
            "first variation requires endpoint-vanishing generators".into(),
        ));
    }
    let n = spec.base_dim();
    let m = spec.rank();
    let nodes = path.len();
    if nodes < 3 {
        return Err(Error::GridTooCoarse(format!(
            "first variation needs at least 3 nodes (got {nodes})"
        )));
    }
    let mut xidot = vec![vec![0.0; nodes]; m];
    for j in 0..m {
        let col: Vec<f64> = path.points.iter().map(|p| p.xi[j]).collect();
        xidot[j] = grid_derivative(&path.t, &col)?;
    }
    let mut integrand = vec![0.0; nodes];
    for (idx, point) in path.points.iter().enumerate() {
        let t = path.t[idx];
        let jet = hamiltonian_jet(h, n, m, &point.x, &point.xi)?;
        let sigma = spec.sigma_at(&point.x)?;
        let c = spec.c_at(&point.x)?;
        let mut acc = 0.0;
        for j in 0..m {
            let mut bracket = -xidot[j][idx];
            for a in 0..n {
                bracket -= sigma.at(a, j) * jet.d_x[a];
            }
            for k in 0..m {
                for i in 0..m {
                    bracket += point.xi[k] * c[k][i][j] * point.y[i];
                }
            }
            acc += gen.f[j].eval(t) * bracket;
        }
        for k in 0..m {
            acc += gen.h[k].eval(t) * (point.y[k] - jet.d_xi[k]);
        }
        integrand[idx] = acc;
    }
    Ok(simpson(&path.t, &integrand))
}

// ---------------------------------------------------------------------------
// Fixed-step integration
// ---------------------------------------------------------------------------

/// Explicit fixed-step methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Euler,
    Heun,
    Rk4,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        match s {
            "euler" => Ok(Method::Euler),
            "heun" => Ok(Method::Heun),
            "rk4" => Ok(Method::Rk4),
            other => Err(Error::PreconditionViolated(format!(
                "unknown method `{other}` (expected euler, heun or rk4)"
            ))),
        }
    }
}

/// State-derivative callback consumed by [`integrate`].
pub type StateDeriv<'a> = dyn FnMut(f64, &[f64]) -> Result<Vec<f64>> + 'a;

/// Fixed-step explicit integration of `sdot = rhs(t, s)` from `t0` to `t1`.
/// Nodes sit at `t0 + k dt`; the final step is shortened to land on `t1`
/// exactly. RHS failures are reported with the failing time attached.
pub fn integrate(
    rhs: &mut StateDeriv<'_>,
    s0: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
    method: Method,
) -> Result<Trajectory> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::PreconditionViolated("dt must be positive".into()));
    }
    if t0.is_nan() || t1.is_nan() || t1 <= t0 {
        return Err(Error::PreconditionViolated(
            "t1 must be greater than t0".into(),
        ));
    }
    let span = t1 - t0;
    let ratio = span / dt;
    let full = ratio.floor();
    let steps = if ratio - full <= 1e-9 * ratio.max(1.0) {
        full as usize
    } else {
        full as usize + 1
    };
    let steps = steps.max(1);

    let mut t_grid = Vec::with_capacity(steps + 1);
    for k in 0..steps {
        t_grid.push(t0 + k as f64 * dt);
    }
    t_grid.push(t1);

    let mut eval = |t: f64, s: &[f64]| -> Result<Vec<f64>> {
        rhs(t, s).map_err(|e| match e {
            e @ Error::AtTime { .. } => e,
            other => other.at_time(t),
        })
    };

    let mut states = Vec::with_capacity(steps + 1);
    states.push(s0.to_vec());
    let mut s = s0.to_vec();
    for k in 0..steps {
        let t = t_grid[k];
        let h = t_grid[k + 1] - t;
        let next = match method {
            Method::Euler => {
                let k1 = eval(t, &s)?;
                axpy(&s, h, &k1)
            }
            Method::Heun => {
                let k1 = eval(t, &s)?;
                let k2 = eval(t + h, &axpy(&s, h, &k1))?;
                let mut out = s.clone();
                for i in 0..out.len() {
                    out[i] += 0.5 * h * (k1[i] + k2[i]);
                }
                out
            }
            Method::Rk4 => {
                let k1 = eval(t, &s)?;
                let k2 = eval(t + 0.5 * h, &axpy(&s, 0.5 * h, &k1))?;
                let k3 = eval(t + 0.5 * h, &axpy(&s, 0.5 * h, &k2))?;
                let k4 = eval(t + h, &axpy(&s, h, &k3))?;
                let mut out = s.clone();
                for i in 0..out.len() {
                    out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                out
            }
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(t_grid[k + 1]));
        }
        s = next;
        states.push(s.clone());
    }
    Ok(Trajectory {
        t: t_grid,
        states,
        multipliers: None,
    })
}

fn axpy(s: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    s.iter().zip(k).map(|(si, ki)| si + h * ki).collect()
}

/// Integrate the Hamilton equations; states are laid out `(x, xi)`.
pub fn integrate_hamilton(
    spec: &AlgebroidSpec,
    h: &Expr,
    pt0: &DualPoint,
    t0: f64,
    t1: f64,
    dt: f64,
    method: Method,
) -> Result<Trajectory> {
    let n = spec.base_dim();
    let m = spec.rank();
    let mut s0 = Vec::with_capacity(n + m);
    s0.extend_from_slice(&pt0.x);
    s0.extend_from_slice(&pt0.xi);
    let mut rhs = |_t: f64, s: &[f64]| -> Result<Vec<f64>> {
        let pt = DualPoint {
            x: s[..n].to_vec(),
            xi: s[n..n + m].to_vec(),
        };
        let (xdot, xidot) = hamilton_rhs(spec, h, &pt)?;
        let mut out = Vec::with_capacity(n + m);
        out.extend(xdot);
        out.extend(xidot);
        Ok(out)
    };
    integrate(&mut rhs, &s0, t0, t1, dt, method)
}

/// Integrate the Euler-Lagrange dynamics in momentum form with warm-started
/// Legendre inversion; states are laid out `(x, p, y)`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_el(
    spec: &AlgebroidSpec,
    l: &Expr,
    x0: &[f64],
    p0: &[f64],
    y_guess: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
    method: Method,
) -> Result<Trajectory> {
    let n = spec.base_dim();
    let m = spec.rank();
    let mut guess = y_guess.to_vec();
    let mut s0 = Vec::with_capacity(n + m);
    s0.extend_from_slice(x0);
    s0.extend_from_slice(p0);
    let mut rhs = |_t: f64, s: &[f64]| -> Result<Vec<f64>> {
        let (xdot, pdot, y) = el_rhs(spec, l, &s[..n], &s[n..n + m], &guess)?;
        guess = y;
        let mut out = Vec::with_capacity(n + m);
        out.extend(xdot);
        out.extend(pdot);
        Ok(out)
    };
    let traj = integrate(&mut rhs, &s0, t0, t1, dt, method)?;
    // append the recovered velocity to each node for downstream consumers
    let mut guess = y_guess.to_vec();
    let mut states = Vec::with_capacity(traj.len());
    for s in &traj.states {
        let y = legendre_solve(l, n, m, &s[..n], &s[n..n + m], &guess)?;
        guess = y.clone();
        let mut state = s.clone();
        state.extend(y);
        states.push(state);
    }
    Ok(Trajectory {
        t: traj.t,
        states,
        multipliers: None,
    })
}
