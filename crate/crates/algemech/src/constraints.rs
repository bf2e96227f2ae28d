//! Constrained Hamiltonian dynamics for a vector subbundle `D` of `E`, given
//! implicitly by `Phi^s(x, y) = 0` and optionally by a spanning frame
//! `d^i_alpha(x)`.
//!
//! Nonholonomic equations (index notation, `W = dH/dxi`):
//!
//! - `xidot_j = xi_k c^k_ij W_i - sigma^a_j dH/dx^a + mu_s dPhi^s/dy^j(x, W)`
//! - `xdot^a  = rho^a_k W_k`, with `Phi^s(x, W) = 0`
//!
//! The multipliers solve the linear system obtained by one time
//! differentiation of the constraint (index reduction):
//! `A_sr mu_r = b_s` with `A_sr = (dPhi^s/dy) H_xixi (dPhi^r/dy)^T`.
//!
//! Vaconomic equations evolve the modified momentum
//! `pi_j = xi_j + mu_s dPhi^s/dy^j(x, W)`:
//!
//! - `d/dt pi_j = pi_k c^k_ij W_i - sigma^a_j (dH/dx^a - mu_s dPhi^s/dx^a)`
//!
//! expanded by the chain rule into a joint `(xidot, mudot)` solve.

use crate::algebroid::{AlgebroidSpec, DualPoint};
use crate::expr::Expr;
use crate::linalg::{self, Mat};
use crate::mechanics::{
    self, grid_derivative, hamilton_contract, hamiltonian_jet, lagrangian_vars, Method, Trajectory,
};
use crate::rng::{Rng, SAMPLING_SEED};
use crate::{Error, Result};

const COND_LIMIT: f64 = 1e12;

/// Subbundle description: implicit functions `Phi^s(x, y)` (corank `r`) and
/// an optional spanning frame (`m x d` expressions of `x`).
#[derive(Debug, Clone)]
pub struct ConstraintSpec {
    phi: Vec<Expr>,
    frame: Option<Vec<Vec<Expr>>>,
    linear: bool,
    n: usize,
    m: usize,
}

/// Values and partial derivatives of all constraint functions at `(x, y)`.
pub struct ConstraintJet {
    /// `Phi^s`
    pub value: Vec<f64>,
    /// `dPhi^s/dx^b` as `(s, b)`
    pub d_x: Mat,
    /// `dPhi^s/dy^j` as `(s, j)`
    pub d_y: Mat,
    /// per `s`: `d2Phi^s/dy^k dy^j` as `(k, j)`
    pub d_yy: Vec<Mat>,
    /// per `s`: `d2Phi^s/dy^j dx^b` as `(j, b)`
    pub d_yx: Vec<Mat>,
}

impl ConstraintSpec {
    /// Validate a constraint description against the algebroid it lives on.
    ///
    /// Checks run on sampled base points: frame columns must satisfy the
    /// implicit equations, `dPhi/dy` must have full row rank on `D`,
    /// `d + r = m` when both descriptions are present, and a declared
    /// linear flag is verified by homogeneity sampling.
    pub fn new(
        spec: &AlgebroidSpec,
        phi: Vec<Expr>,
        frame: Option<Vec<Vec<Expr>>>,
        linear: bool,
    ) -> Result<Self> {
        let n = spec.base_dim();
        let m = spec.rank();
        let expected = lagrangian_vars(n, m);
        for (s, e) in phi.iter().enumerate() {
            if e.variables() != expected.as_slice() {
                return Err(Error::DimensionMismatch(format!(
                    "phi[{s}] must be declared over {expected:?}"
                )));
            }
        }
        if let Some(fr) = &frame {
            let d = fr.first().map_or(0, |row| row.len());
            if fr.len() != m || fr.iter().any(|row| row.len() != d) || d == 0 {
                return Err(Error::DimensionMismatch(format!(
                    "frame must be an {m} x d matrix with d >= 1"
                )));
            }
            let base = crate::algebroid::base_vars(n);
            for (i, row) in fr.iter().enumerate() {
                for (alpha, e) in row.iter().enumerate() {
                    if e.variables() != base.as_slice() {
                        return Err(Error::DimensionMismatch(format!(
                            "frame[{i}][{alpha}] must be declared over {base:?}"
                        )));
                    }
                }
            }
            if d + phi.len() != m {
                return Err(Error::InvariantViolation(format!(
                    "rank d = {d} plus corank r = {} must equal m = {m}",
                    phi.len()
                )));
            }
        }
        let con = ConstraintSpec {
            phi,
            frame,
            linear,
            n,
            m,
        };
        con.validate_samples(spec)?;
        Ok(con)
    }

    fn validate_samples(&self, spec: &AlgebroidSpec) -> Result<()> {
        let mut rng = Rng::new(SAMPLING_SEED ^ 0x00C0_57A1);
        for x in spec.sample_points(25) {
            if let Some(fr) = &self.frame {
                let frame = self.frame_at(&x)?;
                for alpha in 0..fr[0].len() {
                    let col: Vec<f64> = (0..self.m).map(|i| frame.at(i, alpha)).collect();
                    let vals = self.phi_at(&x, &col)?;
                    for (s, v) in vals.iter().enumerate() {
                        if v.abs() > 1e-9 {
                            return Err(Error::InvariantViolation(format!(
                                "frame column {alpha} violates phi[{s}] by {v:e} at x = {x:?}"
                            )));
                        }
                    }
                }
            }
            if self.r() > 0 {
                let y = self.sample_point_on_d(&x, &mut rng)?;
                let jet = self.jet_at(&x, &y)?;
                let sv = linalg::singular_values(&jet.d_y);
                if sv[0] <= 1e-9 {
                    return Err(Error::InvariantViolation(format!(
                        "dPhi/dy is rank deficient at x = {x:?} (smallest singular value {:e})",
                        sv[0]
                    )));
                }
            }
            if self.linear {
                let y = rng.uniform_vec(self.m, -1.0, 1.0);
                let base = self.phi_at(&x, &y)?;
                for lambda in [2.0, 3.0] {
                    let scaled: Vec<f64> = y.iter().map(|v| lambda * v).collect();
                    let vals = self.phi_at(&x, &scaled)?;
                    for (s, (v, b)) in vals.iter().zip(&base).enumerate() {
                        if (v - lambda * b).abs() > 1e-9 {
                            return Err(Error::InvariantViolation(format!(
                                "phi[{s}] declared linear but Phi(x, {lambda} y) != {lambda} Phi(x, y)"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// A fiber point on `D`: through the frame when present, otherwise by
    /// projecting a random point onto the zero set of `Phi`.
    fn sample_point_on_d(&self, x: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        if let Some(fr) = &self.frame {
            let d = fr[0].len();
            let u = rng.uniform_vec(d, -1.0, 1.0);
            let frame = self.frame_at(x)?;
            return Ok(frame.matvec(&u));
        }
        let mut y = rng.uniform_vec(self.m, -1.0, 1.0);
        let mut best = f64::INFINITY;
        // iterate to stagnation, not to a fixed tolerance: points that only
        // approach D asymptotically (rank-deficient gradients) must end up
        // close enough for the rank check to see the degeneracy
        for _ in 0..60 {
            let jet = self.jet_at(x, &y)?;
            let worst = jet.value.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if worst <= 1e-30 || worst >= best {
                break;
            }
            best = worst;
            // Gauss-Newton step along the row space of dPhi/dy
            let gram = jet.d_y.matmul(&jet.d_y.transpose());
            let neg: Vec<f64> = jet.value.iter().map(|v| -v).collect();
            let delta = linalg::solve(&gram, &neg)?;
            for j in 0..self.m {
                for s in 0..self.r() {
                    y[j] += jet.d_y.at(s, j) * delta[s];
                }
            }
        }
        let worst = self
            .phi_at(x, &y)?
            .iter()
            .fold(0.0_f64, |a, v| a.max(v.abs()));
        if worst <= 1e-10 {
            Ok(y)
        } else {
            Err(Error::NoConvergence(60))
        }
    }

    /// Corank (number of implicit equations).
    pub fn r(&self) -> usize {
        self.phi.len()
    }

    /// Rank of `D` when a frame is present.
    pub fn rank_d(&self) -> Option<usize> {
        self.frame.as_ref().map(|fr| fr[0].len())
    }

    pub fn linear_flag(&self) -> bool {
        self.linear
    }

    pub fn phi(&self) -> &[Expr] {
        &self.phi
    }

    pub fn has_frame(&self) -> bool {
        self.frame.is_some()
    }

    /// Frame matrix `d^i_alpha(x)` (`m x d`).
    pub fn frame_at(&self, x: &[f64]) -> Result<Mat> {
        let fr = self.frame.as_ref().ok_or_else(|| {
            Error::PreconditionViolated("operation requires a constraint frame".into())
        })?;
        let d = fr[0].len();
        let mut out = Mat::zeros(self.m, d);
        for i in 0..self.m {
            for alpha in 0..d {
                *out.at_mut(i, alpha) = fr[i][alpha].eval(x)?;
            }
        }
        Ok(out)
    }

    /// Frame values plus base derivatives `d_a d^i_alpha`.
    pub fn frame_jet_at(&self, x: &[f64]) -> Result<(Mat, Vec<Mat>)> {
        let fr = self.frame.as_ref().ok_or_else(|| {
            Error::PreconditionViolated("operation requires a constraint frame".into())
        })?;
        let d = fr[0].len();
        let mut value = Mat::zeros(self.m, d);
        let mut deriv = vec![Mat::zeros(self.m, d); self.n];
        for i in 0..self.m {
            for alpha in 0..d {
                let jet = fr[i][alpha].eval_jet2(x)?;
                *value.at_mut(i, alpha) = jet.value;
                for a in 0..self.n {
                    *deriv[a].at_mut(i, alpha) = jet.grad[a];
                }
            }
        }
        Ok((value, deriv))
    }

    /// `Phi^s(x, y)` values.
    pub fn phi_at(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let mut env = Vec::with_capacity(self.n + self.m);
        env.extend_from_slice(x);
        env.extend_from_slice(y);
        self.phi.iter().map(|e| e.eval(&env)).collect()
    }

    /// Constraint values with first and second partials at `(x, y)`.
    pub fn jet_at(&self, x: &[f64], y: &[f64]) -> Result<ConstraintJet> {
        let r = self.r();
        let (n, m) = (self.n, self.m);
        let mut env = Vec::with_capacity(n + m);
        env.extend_from_slice(x);
        env.extend_from_slice(y);
        let mut value = vec![0.0; r];
        let mut d_x = Mat::zeros(r, n);
        let mut d_y = Mat::zeros(r, m);
        let mut d_yy = vec![Mat::zeros(m, m); r];
        let mut d_yx = vec![Mat::zeros(m, n); r];
        for (s, e) in self.phi.iter().enumerate() {
            let jet = e.eval_jet2(&env)?;
            value[s] = jet.value;
            for b in 0..n {
                *d_x.at_mut(s, b) = jet.grad[b];
            }
            for j in 0..m {
                *d_y.at_mut(s, j) = jet.grad[n + j];
                for k in 0..m {
                    *d_yy[s].at_mut(k, j) = jet.hess_at(n + k, n + j);
                }
                for b in 0..n {
                    *d_yx[s].at_mut(j, b) = jet.hess_at(n + j, b);
                }
            }
        }
        Ok(ConstraintJet {
            value,
            d_x,
            d_y,
            d_yy,
            d_yx,
        })
    }
}

// ---------------------------------------------------------------------------
// Nonholonomic dynamics
// ---------------------------------------------------------------------------

/// Constraint residual in Hamiltonian variables: `Phi^s(x, dH/dxi)`.
pub fn nh_constraint_residual(
    spec: &AlgebroidSpec,
    h: &Expr,
    con: &ConstraintSpec,
    pt: &DualPoint,
) -> Result<Vec<f64>> {
    let jet = hamiltonian_jet(h, spec.base_dim(), spec.rank(), &pt.x, &pt.xi)?;
    con.phi_at(&pt.x, &jet.d_xi)
}

struct NhParts {
    xdot: Vec<f64>,
    free_xidot: Vec<f64>,
    mu: Vec<f64>,
    /// `dPhi^s/dy^j` at `(x, dH/dxi)`
    a_rows: Mat,
}

fn nh_parts(
    spec: &AlgebroidSpec,
    h: &Expr,
    con: &ConstraintSpec,
    pt: &DualPoint,
) -> Result<NhParts> {
    let n = spec.base_dim();
    let m = spec.rank();
    let r = con.r();
    let hj = hamiltonian_jet(h, n, m, &pt.x, &pt.xi)?;
    let rho = spec.rho_at(&pt.x)?;
    let sigma = spec.sigma_at(&pt.x)?;
    let c = spec.c_at(&pt.x)?;
    let (xdot, free_xidot) = hamilton_contract(&rho, &sigma, &c, &pt.xi, &hj.d_x, &hj.d_xi);
    if r == 0 {
        return Ok(NhParts {
            xdot,
            free_xidot,
            mu: vec![],
            a_rows: Mat::zeros(0, m),
        });
    }
    let cj = con.jet_at(&pt.x, &hj.d_xi)?;
    let mut a_mat = Mat::zeros(r, r);
    for s in 0..r {
        for rr in 0..r {
            let mut acc = 0.0;
            for k in 0..m {
                for l in 0..m {
                    acc += cj.d_y.at(s, k) * hj.d_xi_xi.at(k, l) * cj.d_y.at(rr, l);
                }
            }
            *a_mat.at_mut(s, rr) = acc;
        }
    }
    let cond = linalg::cond_1(&a_mat);
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::DegenerateConstraint(format!(
            "multiplier system condition number {cond:e} at x = {:?}",
            pt.x
        )));
    }
    let mut b = vec![0.0; r];
    for s in 0..r {
        let mut acc = 0.0;
        for bdir in 0..n {
            acc += cj.d_x.at(s, bdir) * xdot[bdir];
            for k in 0..m {
                acc += cj.d_y.at(s, k) * hj.d_xi_x.at(k, bdir) * xdot[bdir];
            }
        }
        for k in 0..m {
            for l in 0..m {
                acc += cj.d_y.at(s, k) * hj.d_xi_xi.at(k, l) * free_xidot[l];
            }
        }
        b[s] = -acc;
    }
    let mu = linalg::solve(&a_mat, &b)?;
    Ok(NhParts {
        xdot,
        free_xidot,
        mu,
        a_rows: cj.d_y,
    })
}

/// Multipliers enforcing `d/dt Phi^s(x, dH/dxi) = 0` along the flow.
pub fn nh_multipliers(
    spec: &AlgebroidSpec,
    h: &Expr,
    con: &ConstraintSpec,
    pt: &DualPoint,
) -> Result<Vec<f64>> {
    Ok(nh_parts(spec, h, con, pt)?.mu)
}

/// Nonholonomic right-hand side `(xdot, xidot, mu)`.
#[allow(clippy::type_complexity)]
pub fn nh_rhs(
    spec: &AlgebroidSpec,
    h: &Expr,
    con: &ConstraintSpec,
    pt: &DualPoint,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let parts = nh_parts(spec, h, con, pt)?;
    let m = spec.rank();
    let mut xidot = parts.free_xidot;
    for j in 0..m {
        for s in 0..con.r() {
            xidot[j] += parts.mu[s] * parts.a_rows.at(s, j);
        }
    }
    Ok((parts.xdot, xidot, parts.mu))
}

/// Newton-project the fiber coordinate onto the constraint manifold along
/// the span of `(dPhi^s/dy)^T`; the base point is left unchanged.
pub fn nh_project_initial(
    spec: &AlgebroidSpec,
    h: &Expr,
    con: &ConstraintSpec,
    pt: &DualPoint,
) -> Result<DualPoint> {
    const TOL: f64 = 1e-12;
    const MAX_ITERS: usize = 50;
    let n = spec.base_dim();
    let m = spec.rank();
    let r = con.r();
    if r == 0 {
        return Ok(pt.clone());
    }
    let mut xi = pt.xi.clone();
    for _ in 0..MAX_ITERS {
        let hj = hamiltonian_jet(h, n, m, &pt.x, &xi)?;
        let cj = con.jet_at(&pt.x, &hj.d_xi)?;
        let worst = cj.value.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if worst <= TOL {
            return Ok(DualPoint {
                x: pt.x.clone(),
                xi,
            });
        }
        // d/d delta_r of Phi^s(x, dH/dxi(x, xi + A^T delta)) = A H_xixi A^T
        let mut jac = Mat::zeros(r, r);
        for s in 0..r {
            for rr in 0..r {
                let mut acc = 0.0;
                for k in 0..m {
                    for l in 0..m {
                        acc += cj.d_y.at(s, k) * hj.d_xi_xi.at(k, l) * cj.d_y.at(rr, l);
                    }
                }
                *jac.at_mut(s, rr) = acc;
            }
        }
        let cond = linalg::cond_1(&jac);
        if !cond.is_finite() || cond > COND_LIMIT {
            return Err(Error::DegenerateConstraint(format!(
                "projection Jacobian condition number {cond:e} at x = {:?}",
                pt.x
            )));
        }
        let neg: Vec<f64> = cj.value.iter().map(|v| -v).collect();
        let delta = linalg::solve(&jac, &neg)?;
        for j in 0..m {
            for s in 0..r {
                xi[j] += cj.d_y.at(s, j) * delta[s];
            }
        }
    }
    Err(Error::NoConvergence(MAX_ITERS))
}

/// Integrate the nonholonomic dynamics; states are `(x, xi)` and the
/// multipliers are recorded per node.
#[allow(clippy::too_many_arguments)]
pub fn integrate_nh(
    spec: &AlgebroidSpec,
    h: &Expr,
    con: &ConstraintSpec,
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
        let (xdot, xidot, _) = nh_rhs(spec, h, con, &pt)?;
        let mut out = Vec::with_capacity(n + m);
        out.extend(xdot);
        out.extend(xidot);
        Ok(out)
    };
    let mut traj = mechanics::integrate(&mut rhs, &s0, t0, t1, dt, method)?;
    let mut mus = Vec::with_capacity(traj.len());
    for s in &traj.states {
        let pt = DualPoint {
            x: s[..n].to_vec(),
            xi: s[n..n + m].to_vec(),
        };
        mus.push(nh_multipliers(spec, h, con, &pt)?);
    }
    traj.multipliers = Some(mus);
    Ok(traj)
}

/// Defect of the geometric tangency statement: the pushforward of the
/// unconstrained Hamiltonian field through `i*` must be the tangent
/// prolongation of `i* gamma(t)` along nonholonomic trajectories.
pub fn tangency_residual(
    spec: &AlgebroidSpec,
    h: &Expr,
    con: &ConstraintSpec,
    dual_traj: &Trajectory,
) -> Result<f64> {
    let n = spec.base_dim();
    let m = spec.rank();
    let d = con.rank_d().ok_or_else(|| {
        Error::PreconditionViolated("tangency check requires a constraint frame".into())
    })?;
    if dual_traj.len() < 3 {
        return Err(Error::GridTooCoarse(format!(
            "tangency check needs at least 3 nodes (got {})",
            dual_traj.len()
        )));
    }
    // i* gamma: eta_alpha = d^i_alpha(x) xi_i per node
    let mut eta = vec![vec![0.0; dual_traj.len()]; d];
    for (idx, s) in dual_traj.states.iter().enumerate() {
        let (x, xi) = (&s[..n], &s[n..n + m]);
        let frame = con.frame_at(x)?;
        for alpha in 0..d {
            let mut acc = 0.0;
            for i in 0..m {
                acc += frame.at(i, alpha) * xi[i];
            }
            eta[alpha][idx] = acc;
        }
    }
    let mut eta_fd = vec![vec![0.0; dual_traj.len()]; d];
    for alpha in 0..d {
        eta_fd[alpha] = grid_derivative(&dual_traj.t, &eta[alpha])?;
    }
    let mut x_fd = vec![vec![0.0; dual_traj.len()]; n];
    for a in 0..n {
        let col: Vec<f64> = dual_traj.states.iter().map(|s| s[a]).collect();
        x_fd[a] = grid_derivative(&dual_traj.t, &col)?;
    }
    let mut worst = 0.0_f64;
    for (idx, s) in dual_traj.states.iter().enumerate() {
        let (x, xi) = (&s[..n], &s[n..n + m]);
        let pt = DualPoint {
            x: x.to_vec(),
            xi: xi.to_vec(),
        };
        // unconstrained X_H
        let (xdot, xidot) = mechanics::hamilton_rhs(spec, h, &pt)?;
        let (frame, frame_d) = con.frame_jet_at(x)?;
        for a in 0..n {
            worst = worst.max((x_fd[a][idx] - xdot[a]).abs());
        }
        for alpha in 0..d {
            let mut push = 0.0;
            for i in 0..m {
                for a in 0..n {
                    push += frame_d[a].at(i, alpha) * xdot[a] * xi[i];
                }
                push += frame.at(i, alpha) * xidot[i];
            }
            worst = worst.max((eta_fd[alpha][idx] - push).abs());
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Vaconomic dynamics
// ---------------------------------------------------------------------------

/// Vaconomic right-hand side: `xdot` is explicit while `(xidot, mudot)`
/// solve the joint linear system from expanding
/// `d/dt (xi_j + mu_s dPhi^s/dy^j(x, dH/dxi))` and the differentiated
/// constraint.
#[allow(clippy::type_complexity)]
pub fn vac_rhs(
    spec: &AlgebroidSpec,
    h: &Expr,
    con: &ConstraintSpec,
    x: &[f64],
    xi: &[f64],
    mu: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = spec.base_dim();
    let m = spec.rank();
    let r = con.r();
    assert_eq!(mu.len(), r, "mu length must equal the corank");
    let hj = hamiltonian_jet(h, n, m, x, xi)?;
    let rho = spec.rho_at(x)?;
    let sigma = spec.sigma_at(x)?;
    let c = spec.c_at(x)?;
    let xdot = rho.matvec(&hj.d_xi);
    if r == 0 {
        let (_, xidot) = hamilton_contract(&rho, &sigma, &c, xi, &hj.d_x, &hj.d_xi);
        return Ok((xdot, xidot, vec![]));
    }
    let cj = con.jet_at(x, &hj.d_xi)?;

    let size = m + r;
    let mut mat = Mat::zeros(size, size);
    let mut rhs = vec![0.0; size];

    // momentum rows
    for j in 0..m {
        for l in 0..m {
            let mut acc = if j == l { 1.0 } else { 0.0 };
            for s in 0..r {
                for k in 0..m {
                    acc += mu[s] * cj.d_yy[s].at(k, j) * hj.d_xi_xi.at(k, l);
                }
            }
            *mat.at_mut(j, l) = acc;
        }
        for s in 0..r {
            *mat.at_mut(j, m + s) = cj.d_y.at(s, j);
        }
        // pi_k = xi_k + mu_s dPhi^s/dy^k
        let mut acc = 0.0;
        for k in 0..m {
            let mut pi_k = xi[k];
            for s in 0..r {
                pi_k += mu[s] * cj.d_y.at(s, k);
            }
            for i in 0..m {
                acc += pi_k * c[k][i][j] * hj.d_xi[i];
            }
        }
        for a in 0..n {
            let mut forced = hj.d_x[a];
            for s in 0..r {
                forced -= mu[s] * cj.d_x.at(s, a);
            }
            acc -= sigma.at(a, j) * forced;
        }
        for s in 0..r {
            for b in 0..n {
                let mut coeff = cj.d_yx[s].at(j, b);
                for k in 0..m {
                    coeff += cj.d_yy[s].at(k, j) * hj.d_xi_x.at(k, b);
                }
                acc -= mu[s] * coeff * xdot[b];
            }
        }
        rhs[j] = acc;
    }

    // differentiated-constraint rows
    for s in 0..r {
        for l in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                acc += cj.d_y.at(s, k) * hj.d_xi_xi.at(k, l);
            }
            *mat.at_mut(m + s, l) = acc;
        }
        let mut acc = 0.0;
        for b in 0..n {
            let mut coeff = cj.d_x.at(s, b);
            for k in 0..m {
                coeff += cj.d_y.at(s, k) * hj.d_xi_x.at(k, b);
            }
            acc -= coeff * xdot[b];
        }
        rhs[m + s] = acc;
    }

    let cond = linalg::cond_1(&mat);
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::DegenerateVaconomic(format!(
            "joint (xidot, mudot) system condition number {cond:e} at x = {x:?}"
        )));
    }
    let sol = linalg::solve(&mat, &rhs)?;
    Ok((xdot, sol[..m].to_vec(), sol[m..].to_vec()))
}

/// Integrate the vaconomic dynamics; states are `(x, xi, mu)` and the
/// multiplier part is mirrored into the `multipliers` field.
#[allow(clippy::too_many_arguments)]
pub fn integrate_vac(
    spec: &AlgebroidSpec,
    h: &Expr,
    con: &ConstraintSpec,
    pt0: &DualPoint,
    mu0: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
    method: Method,
) -> Result<Trajectory> {
    let n = spec.base_dim();
    let m = spec.rank();
    let r = con.r();
    let mut s0 = Vec::with_capacity(n + m + r);
    s0.extend_from_slice(&pt0.x);
    s0.extend_from_slice(&pt0.xi);
    s0.extend_from_slice(mu0);
    let mut rhs = |_t: f64, s: &[f64]| -> Result<Vec<f64>> {
        let (xdot, xidot, mudot) =
            vac_rhs(spec, h, con, &s[..n], &s[n..n + m], &s[n + m..n + m + r])?;
        let mut out = Vec::with_capacity(n + m + r);
        out.extend(xdot);
        out.extend(xidot);
        out.extend(mudot);
        Ok(out)
    };
    let mut traj = mechanics::integrate(&mut rhs, &s0, t0, t1, dt, method)?;
    traj.multipliers = Some(
        traj.states
            .iter()
            .map(|s| s[n + m..n + m + r].to_vec())
            .collect(),
    );
    Ok(traj)
}

/// Whether the variation generated by `b` stays tangent to `D` along an
/// E-path with per-node states `(x, y)`: the pairing of `dPhi` with the
/// variation must vanish (within `1e-8`) at every node.
pub fn vaconomic_variation_class_check(
    spec: &AlgebroidSpec,
    con: &ConstraintSpec,
    gamma: &Trajectory,
    b: &[Vec<f64>],
) -> Result<bool> {
    let n = spec.base_dim();
    let m = spec.rank();
    let variations = mechanics::variation_from_b(spec, gamma, b)?;
    for (state, var) in gamma.states.iter().zip(&variations) {
        let (x, y) = (&state[..n], &state[n..n + m]);
        let cj = con.jet_at(x, y)?;
        for s in 0..con.r() {
            let mut pairing = 0.0;
            for bdir in 0..n {
                pairing += cj.d_x.at(s, bdir) * var.xdot[bdir];
            }
            for k in 0..m {
                pairing += cj.d_y.at(s, k) * var.ydot[k];
            }
            if pairing.abs() > 1e-8 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Mechanical Hamiltonians and nonholonomic reduction
// ---------------------------------------------------------------------------

/// Mechanical Hamiltonian data: inverse fiber metric `g^{-1}(x)` and base
/// potential `V(x)`, inducing `H(x, xi) = xi^T g^{-1}(x) xi / 2 + V(x)`.
#[derive(Debug, Clone)]
pub struct MechanicalHamiltonian {
    ginv: Vec<Vec<Expr>>,
    v: Expr,
    h: Expr,
    n: usize,
    m: usize,
}

impl MechanicalHamiltonian {
    /// Validate symmetry and positive definiteness of `g^{-1}` on sampled
    /// base points and synthesize the induced Hamiltonian expression.
    pub fn new(spec: &AlgebroidSpec, ginv: Vec<Vec<Expr>>, v: Expr) -> Result<Self> {
        let n = spec.base_dim();
        let m = spec.rank();
        if ginv.len() != m || ginv.iter().any(|row| row.len() != m) {
            return Err(Error::DimensionMismatch(format!("ginv must be {m}x{m}")));
        }
        let base = crate::algebroid::base_vars(n);
        for (i, row) in ginv.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                if e.variables() != base.as_slice() {
                    return Err(Error::DimensionMismatch(format!(
                        "ginv[{i}][{j}] must be declared over {base:?}"
                    )));
                }
            }
        }
        if v.variables() != base.as_slice() {
            return Err(Error::DimensionMismatch(format!(
                "V must be declared over {base:?}"
            )));
        }
        for x in spec.sample_points(25) {
            let mut mat = Mat::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    *mat.at_mut(i, j) = ginv[i][j].eval(&x)?;
                }
            }
            for i in 0..m {
                for j in 0..m {
                    if (mat.at(i, j) - mat.at(j, i)).abs() > 1e-9 {
                        return Err(Error::InvariantViolation(format!(
                            "ginv is not symmetric at x = {x:?}"
                        )));
                    }
                }
            }
            linalg::cholesky(&mat).map_err(|_| {
                Error::InvariantViolation(format!("ginv is not positive definite at x = {x:?}"))
            })?;
        }
        // induced H as a parsed expression over (x, xi)
        let mut terms: Vec<String> = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                terms.push(format!("({})*xi{}*xi{}", ginv[i][j].render(), i + 1, j + 1));
            }
        }
        let src = format!("0.5*({}) + ({})", terms.join(" + "), v.render());
        let vars = mechanics::hamiltonian_vars(n, m);
        let refs: Vec<&str> = vars.iter().map(|s| s.as_str()).collect();
        let h = crate::expr::parse(&src, &refs)?;
        Ok(MechanicalHamiltonian { ginv, v, h, n, m })
    }

    /// The induced Hamiltonian `H(x, xi) = xi^T g^{-1} xi / 2 + V(x)`.
    pub fn hamiltonian(&self) -> &Expr {
        &self.h
    }

    pub fn potential(&self) -> &Expr {
        &self.v
    }

    pub fn ginv_at(&self, x: &[f64]) -> Result<Mat> {
        let mut out = Mat::zeros(self.m, self.m);
        for i in 0..self.m {
            for j in 0..self.m {
                *out.at_mut(i, j) = self.ginv[i][j].eval(x)?;
            }
        }
        Ok(out)
    }

    /// Fiber metric `g = (g^{-1})^{-1}`.
    pub fn g_at(&self, x: &[f64]) -> Result<Mat> {
        linalg::inverse(&self.ginv_at(x)?)
    }

    /// `g^{-1}` values plus base derivatives.
    pub fn ginv_jet_at(&self, x: &[f64]) -> Result<(Mat, Vec<Mat>)> {
        let mut value = Mat::zeros(self.m, self.m);
        let mut deriv = vec![Mat::zeros(self.m, self.m); self.n];
        for i in 0..self.m {
            for j in 0..self.m {
                let jet = self.ginv[i][j].eval_jet2(x)?;
                *value.at_mut(i, j) = jet.value;
                for a in 0..self.n {
                    *deriv[a].at_mut(i, j) = jet.grad[a];
                }
            }
        }
        Ok((value, deriv))
    }
}

/// Reduced algebroid structure on `D` with the metric-projected bracket and
/// the reduced mechanical Hamiltonian on `D*`; keeps its provenance
/// (original spec, constraint frame, metric).
#[derive(Debug, Clone)]
pub struct ReducedAlgebroid {
    spec: AlgebroidSpec,
    con: ConstraintSpec,
    mech: MechanicalHamiltonian,
    d: usize,
}

/// Reduced structure functions evaluated at one base point.
pub struct ReducedStructure {
    pub rho_d: Mat,
    pub sigma_d: Mat,
    /// `c_D[gamma][alpha][beta]`
    pub c_d: Vec<Vec<Vec<f64>>>,
    /// Gram matrix `frame^T g frame` of the frame w.r.t. the metric.
    pub gram: Mat,
}

/// Build the nonholonomic reduction of a mechanical system to `D*`:
/// reduced anchors are the restrictions `rho . frame` / `sigma . frame`,
/// the reduced bracket is the `g`-orthogonal projection `P[d_alpha, d_beta]`
/// expanded in the frame, and the reduced Hamiltonian is
/// `H_D(x, eta) = eta^T (frame^T g frame)^{-1} eta / 2 + V(x)`.
pub fn reduce(
    spec: &AlgebroidSpec,
    con: &ConstraintSpec,
    mech: &MechanicalHamiltonian,
) -> Result<ReducedAlgebroid> {
    let d = con.rank_d().ok_or_else(|| {
        Error::PreconditionViolated("reduction requires a constraint frame".into())
    })?;
    let red = ReducedAlgebroid {
        spec: spec.clone(),
        con: con.clone(),
        mech: mech.clone(),
        d,
    };
    // surface frame degeneracy at construction time using sampled points
    for x in spec.sample_points(10) {
        red.structure_at(&x)?;
    }
    Ok(red)
}

impl ReducedAlgebroid {
    pub fn rank(&self) -> usize {
        self.d
    }

    pub fn base_dim(&self) -> usize {
        self.spec.base_dim()
    }

    fn gram_at(&self, x: &[f64]) -> Result<(Mat, Mat, Mat)> {
        let frame = self.con.frame_at(x)?;
        let g = self.mech.g_at(x)?;
        let gram = frame.transpose().matmul(&g).matmul(&frame);
        let cond = linalg::cond_1(&gram);
        if !cond.is_finite() || cond > COND_LIMIT {
            return Err(Error::DegenerateFrame(format!(
                "frame Gram matrix condition number {cond:e} at x = {x:?}"
            )));
        }
        Ok((frame, g, gram))
    }

    /// Reduced anchors and structure functions at a base point.
    pub fn structure_at(&self, x: &[f64]) -> Result<ReducedStructure> {
        let m = self.spec.rank();
        let (frame, g, gram) = self.gram_at(x)?;
        let gram_lu = linalg::Lu::factor(&gram)
            .map_err(|_| Error::DegenerateFrame(format!("singular frame Gram at x = {x:?}")))?;
        let rho_d = self.spec.rho_at(x)?.matmul(&frame);
        let sigma_d = self.spec.sigma_at(x)?.matmul(&frame);

        let fr_exprs = self.con.frame.as_ref().expect("frame checked in reduce");
        let column =
            |alpha: usize| -> Vec<Expr> { (0..m).map(|i| fr_exprs[i][alpha].clone()).collect() };
        let mut c_d = vec![vec![vec![0.0; self.d]; self.d]; self.d];
        for alpha in 0..self.d {
            let col_a = column(alpha);
            for beta in 0..self.d {
                let col_b = column(beta);
                let bracket = crate::algebroid::bracket_sections(&self.spec, &col_a, &col_b, x)?;
                // expand P[d_alpha, d_beta] in the frame: Gram^{-1} frame^T g v
                let gv = g.matvec(&bracket);
                let ftgv = frame.transpose().matvec(&gv);
                let coeffs = gram_lu.solve(&ftgv);
                for gamma in 0..self.d {
                    c_d[gamma][alpha][beta] = coeffs[gamma];
                }
            }
        }
        Ok(ReducedStructure {
            rho_d,
            sigma_d,
            c_d,
            gram,
        })
    }

    /// `i*: E* -> D*`, `eta_alpha = d^i_alpha(x) xi_i`.
    pub fn project_momentum(&self, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        let frame = self.con.frame_at(x)?;
        Ok(frame.transpose().matvec(xi))
    }

    /// The unique `xi` with `i* xi = eta` annihilating the `g`-orthogonal
    /// complement of `D`: `xi = g frame Gram^{-1} eta`.
    pub fn embed_momentum(&self, x: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
        let (frame, g, gram) = self.gram_at(x)?;
        let coeffs = linalg::solve(&gram, eta)?;
        Ok(g.matvec(&frame.matvec(&coeffs)))
    }

    /// Reduced Hamiltonian value `H_D(x, eta)`.
    pub fn hamiltonian_value(&self, x: &[f64], eta: &[f64]) -> Result<f64> {
        let (_, _, gram) = self.gram_at(x)?;
        let w = linalg::solve(&gram, eta)?;
        let kinetic: f64 = 0.5 * eta.iter().zip(&w).map(|(e, w)| e * w).sum::<f64>();
        Ok(kinetic + self.mech.potential().eval(x)?)
    }

    /// Gradients of the reduced Hamiltonian:
    /// `dH_D/deta = Gram^{-1} eta` and
    /// `dH_D/dx^a = -eta^T Gram^{-1} (d_a Gram) Gram^{-1} eta / 2 + dV/dx^a`.
    pub fn hamiltonian_grads(&self, x: &[f64], eta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.spec.base_dim();
        let (frame, frame_d) = self.con.frame_jet_at(x)?;
        let (ginv, ginv_d) = self.mech.ginv_jet_at(x)?;
        let g = linalg::inverse(&ginv)?;
        let gram = frame.transpose().matmul(&g).matmul(&frame);
        let cond = linalg::cond_1(&gram);
        if !cond.is_finite() || cond > COND_LIMIT {
            return Err(Error::DegenerateFrame(format!(
                "frame Gram matrix condition number {cond:e} at x = {x:?}"
            )));
        }
        let w = linalg::solve(&gram, eta)?; // Gram^{-1} eta
        let v_jet = self.mech.potential().eval_jet2(x)?;
        let mut d_x = vec![0.0; n];
        for a in 0..n {
            // d_a g = -g (d_a ginv) g
            let g_a = g.matmul(&ginv_d[a]).matmul(&g).scale(-1.0);
            let gram_a = frame_d[a]
                .transpose()
                .matmul(&g)
                .matmul(&frame)
                .add(&frame.transpose().matmul(&g_a).matmul(&frame))
                .add(&frame.transpose().matmul(&g).matmul(&frame_d[a]));
            let gw = gram_a.matvec(&w);
            let quad: f64 = w.iter().zip(&gw).map(|(a, b)| a * b).sum();
            d_x[a] = -0.5 * quad + v_jet.grad[a];
        }
        Ok((d_x, w))
    }

    /// Reduced Hamilton equations on `D*`.
    pub fn rhs(&self, x: &[f64], eta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let st = self.structure_at(x)?;
        let (d_x, d_eta) = self.hamiltonian_grads(x, eta)?;
        Ok(hamilton_contract(
            &st.rho_d,
            &st.sigma_d,
            &st.c_d,
            eta,
            &d_x,
            &d_eta,
        ))
    }

    /// Integrate the reduced dynamics; states are `(x, eta)`.
    #[allow(clippy::too_many_arguments)]
    pub fn integrate(
        &self,
        x0: &[f64],
        eta0: &[f64],
        t0: f64,
        t1: f64,
        dt: f64,
        method: Method,
    ) -> Result<Trajectory> {
        let n = self.spec.base_dim();
        let d = self.d;
        let mut s0 = Vec::with_capacity(n + d);
        s0.extend_from_slice(x0);
        s0.extend_from_slice(eta0);
        let mut rhs = |_t: f64, s: &[f64]| -> Result<Vec<f64>> {
            let (xdot, etadot) = self.rhs(&s[..n], &s[n..n + d])?;
            let mut out = Vec::with_capacity(n + d);
            out.extend(xdot);
            out.extend(etadot);
            Ok(out)
        };
        mechanics::integrate(&mut rhs, &s0, t0, t1, dt, method)
    }
}
