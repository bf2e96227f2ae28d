//! General algebroid structures in local coordinates.
//!
//! A structure on a rank-`m` bundle over an `n`-dimensional base is given by
//! expression-valued structure functions of the base point `x`:
//! `rho[a][i]`, `sigma[a][i]` (anchors, `n x m`) and `c[k][i][j]` (bracket
//! coefficients, `m x m x m`, stored as `c^k_ij`).
//!
//! Formula bank (every contraction in index notation, summation over
//! repeated indices):
//!
//! - section bracket:  `[X,Y]^k = c^k_ij X^i Y^j + rho^a_i X^i d_a Y^k - sigma^a_j Y^j d_a X^k`
//! - skew residuals:   `c^k_ij + c^k_ji` and `rho^a_i - sigma^a_i`
//! - almost-Lie:       `rho^a_m c^m_ij - (rho^b_i d_b rho^a_j - rho^b_j d_b rho^a_i)`
//! - Jacobiator:       `J^l_ijk = sum_cyc(i,j,k) [ rho^a_i d_a c^l_jk + c^l_im c^m_jk ]`
//! - bivector:         `Pi = c^k_ij xi_k d_xi_i (x) d_xi_j + rho^b_i d_xi_i (x) d_x_b - sigma^b_i d_x_b (x) d_xi_i`
//! - `eps_E`:          `(x, y, p, xi) -> (x, xi, rho^b_k y^k, c^k_ij y^i xi_k + sigma^a_j p_a)`
//! - `R_tau`:          `(x, y, p, pi) -> (x, pi, -p, y)`
//! - `kappa`:          `(x, Y, rho^b_k y^k, Ydot) ~ (x, y, sigma^b_k Y^k, Ydot^j + c^j_kl y^k Y^l)`
//! - tangent pairing of `(x, Y, xdot, Ydot)` with `(x, xi, xdot, xidot)`:
//!   `Ydot^j xi_j + Y^j xidot_j`

use crate::expr::Expr;
use crate::linalg::Mat;
use crate::rng::{Rng, SAMPLING_SEED};
use crate::{Error, Result};

/// Residual below this level counts as "property holds".
pub const STRUCTURE_TOL: f64 = 1e-9;

/// Default number of sampled base points for residual estimation.
pub const DEFAULT_SAMPLES: usize = 100;

/// Point of `E` in adapted coordinates `(x^a, y^i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Point of `E*` in adapted coordinates `(x^a, xi_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Point of `TE`: `(x^a, y^i, xdot^b, ydot^j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentE {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub xdot: Vec<f64>,
    pub ydot: Vec<f64>,
}

/// Point of `T*E`: `(x^a, y^i, p_b, pi_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CotangentE {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    pub pi: Vec<f64>,
}

/// Point of `TE*`: `(x^a, xi_i, xdot^b, xidot_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentDual {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub xdot: Vec<f64>,
    pub xidot: Vec<f64>,
}

/// Point of `T*E*`: `(x^a, xi_i, p_b, phi^j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CotangentDual {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub p: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Structure functions of a general algebroid plus a sampling box for
/// residual estimation.
#[derive(Debug, Clone)]
pub struct AlgebroidSpec {
    n: usize,
    m: usize,
    rho: Vec<Vec<Expr>>,
    sigma: Vec<Vec<Expr>>,
    c: Vec<Vec<Vec<Expr>>>,
    sample_box: Vec<(f64, f64)>,
}

/// Values and base-derivatives of one structure-function family at a point.
#[derive(Debug, Clone)]
pub struct AnchorJet {
    /// `value[a][i]`
    pub value: Mat,
    /// `deriv[b]` is the matrix `d_b rho^a_i` for base direction `b`.
    pub deriv: Vec<Mat>,
}

impl AlgebroidSpec {
    /// Build a spec, validating array shapes and that every expression only
    /// references base variables `x1..xn`.
    pub fn new(
        n: usize,
        m: usize,
        rho: Vec<Vec<Expr>>,
        sigma: Vec<Vec<Expr>>,
        c: Vec<Vec<Vec<Expr>>>,
        sample_box: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::DimensionMismatch("rank m must be at least 1".into()));
        }
        check_matrix_shape("rho", &rho, n, m)?;
        check_matrix_shape("sigma", &sigma, n, m)?;
        if c.len() != m
            || c.iter()
                .any(|ci| ci.len() != m || ci.iter().any(|cj| cj.len() != m))
        {
            return Err(Error::DimensionMismatch(format!(
                "c must be {m}x{m}x{m} (got outer length {})",
                c.len()
            )));
        }
        if sample_box.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "sample_box must have {n} intervals (got {})",
                sample_box.len()
            )));
        }
        let spec = AlgebroidSpec {
            n,
            m,
            rho,
            sigma,
            c,
            sample_box,
        };
        spec.check_base_only()?;
        Ok(spec)
    }

    /// Standard Lie algebroid structure of a tangent bundle `TR^n`:
    /// identity anchors, vanishing bracket coefficients.
    pub fn tangent_bundle(n: usize, sample_box: Vec<(f64, f64)>) -> Result<Self> {
        let xvars = base_vars(n);
        let refs: Vec<&str> = xvars.iter().map(|s| s.as_str()).collect();
        let id = |a: usize, i: usize| if a == i { "1" } else { "0" };
        let rho: Vec<Vec<Expr>> = (0..n)
            .map(|a| {
                (0..n)
                    .map(|i| crate::expr::parse(id(a, i), &refs).unwrap())
                    .collect()
            })
            .collect();
        let zero = crate::expr::parse("0", &refs).unwrap();
        let c = vec![vec![vec![zero; n]; n]; n];
        AlgebroidSpec::new(n, n, rho.clone(), rho, c, sample_box)
    }

    /// Lie algebra (base a point) with constant structure constants
    /// `c[k][i][j]`.
    pub fn lie_algebra(consts: &[Vec<Vec<f64>>]) -> Result<Self> {
        let m = consts.len();
        let c: Vec<Vec<Vec<Expr>>> = consts
            .iter()
            .map(|ci| {
                ci.iter()
                    .map(|cj| {
                        cj.iter()
                            .map(|&v| crate::expr::parse(&format!("{v:?}"), &[]).unwrap())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        AlgebroidSpec::new(0, m, vec![], vec![], c, vec![])
    }

    pub fn base_dim(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.m
    }

    pub fn sample_box(&self) -> &[(f64, f64)] {
        &self.sample_box
    }

    fn check_base_only(&self) -> Result<()> {
        let expected = base_vars(self.n);
        let check = |e: &Expr, what: &str| -> Result<()> {
            if e.variables() != expected.as_slice() {
                return Err(Error::DimensionMismatch(format!(
                    "{what} must be declared over the base variables {expected:?}"
                )));
            }
            Ok(())
        };
        for (a, row) in self.rho.iter().enumerate() {
            for (i, e) in row.iter().enumerate() {
                check(e, &format!("rho[{a}][{i}]"))?;
            }
        }
        for (a, row) in self.sigma.iter().enumerate() {
            for (i, e) in row.iter().enumerate() {
                check(e, &format!("sigma[{a}][{i}]"))?;
            }
        }
        for (k, ci) in self.c.iter().enumerate() {
            for (i, cj) in ci.iter().enumerate() {
                for (j, e) in cj.iter().enumerate() {
                    check(e, &format!("c[{k}][{i}][{j}]"))?;
                }
            }
        }
        Ok(())
    }

    /// `rho^a_i(x)` as an `n x m` matrix.
    pub fn rho_at(&self, x: &[f64]) -> Result<Mat> {
        eval_matrix(&self.rho, self.n, self.m, x)
    }

    /// `sigma^a_i(x)` as an `n x m` matrix.
    pub fn sigma_at(&self, x: &[f64]) -> Result<Mat> {
        eval_matrix(&self.sigma, self.n, self.m, x)
    }

    /// `c^k_ij(x)` with indices `[k][i][j]`.
    pub fn c_at(&self, x: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut out = vec![vec![vec![0.0; self.m]; self.m]; self.m];
        for k in 0..self.m {
            for i in 0..self.m {
                for j in 0..self.m {
                    out[k][i][j] = self.c[k][i][j].eval(x)?;
                }
            }
        }
        Ok(out)
    }

    /// Left anchor with first base derivatives.
    pub fn rho_jet_at(&self, x: &[f64]) -> Result<AnchorJet> {
        anchor_jet(&self.rho, self.n, self.m, x)
    }

    /// Right anchor with first base derivatives.
    pub fn sigma_jet_at(&self, x: &[f64]) -> Result<AnchorJet> {
        anchor_jet(&self.sigma, self.n, self.m, x)
    }

    /// `c` values together with base-derivatives `d_a c^k_ij`.
    #[allow(clippy::type_complexity)]
    pub fn c_jet_at(&self, x: &[f64]) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<Vec<f64>>>>)> {
        let mut val = vec![vec![vec![0.0; self.m]; self.m]; self.m];
        let mut der = vec![vec![vec![vec![0.0; self.m]; self.m]; self.m]; self.n];
        for k in 0..self.m {
            for i in 0..self.m {
                for j in 0..self.m {
                    let jet = self.c[k][i][j].eval_jet2(x)?;
                    val[k][i][j] = jet.value;
                    for a in 0..self.n {
                        der[a][k][i][j] = jet.grad[a];
                    }
                }
            }
        }
        Ok((val, der))
    }

    /// Deterministic base-point samples used by the residual operations.
    pub fn sample_points(&self, count: usize) -> Vec<Vec<f64>> {
        if self.n == 0 {
            return vec![vec![]];
        }
        let mut rng = Rng::new(SAMPLING_SEED);
        (0..count)
            .map(|_| {
                self.sample_box
                    .iter()
                    .map(|&(lo, hi)| rng.uniform(lo, hi))
                    .collect()
            })
            .collect()
    }
}

/// Declared variable list for base functions: `x1..xn`.
pub fn base_vars(n: usize) -> Vec<String> {
    (1..=n).map(|a| format!("x{a}")).collect()
}

fn check_matrix_shape(what: &str, mat: &[Vec<Expr>], rows: usize, cols: usize) -> Result<()> {
    if mat.len() != rows || mat.iter().any(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be {rows}x{cols} (got {} rows)",
            mat.len()
        )));
    }
    Ok(())
}

fn eval_matrix(exprs: &[Vec<Expr>], rows: usize, cols: usize, x: &[f64]) -> Result<Mat> {
    let mut out = Mat::zeros(rows, cols);
    for a in 0..rows {
        for i in 0..cols {
            *out.at_mut(a, i) = exprs[a][i].eval(x)?;
        }
    }
    Ok(out)
}

fn anchor_jet(exprs: &[Vec<Expr>], n: usize, m: usize, x: &[f64]) -> Result<AnchorJet> {
    let mut value = Mat::zeros(n, m);
    let mut deriv = vec![Mat::zeros(n, m); n];
    for a in 0..n {
        for i in 0..m {
            let jet = exprs[a][i].eval_jet2(x)?;
            *value.at_mut(a, i) = jet.value;
            for b in 0..n {
                *deriv[b].at_mut(a, i) = jet.grad[b];
            }
        }
    }
    Ok(AnchorJet { value, deriv })
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Actual base velocity of a generalized velocity: `v^a = rho^a_i(x) y^i`.
pub fn anchor_left(spec: &AlgebroidSpec, pt: &EPoint) -> Result<Vec<f64>> {
    let rho = spec.rho_at(&pt.x)?;
    Ok(rho.matvec(&pt.y))
}

/// Bracket of two sections given by x-dependent component expressions,
/// evaluated at the base point `x`:
/// `[X,Y]^k = c^k_ij X^i Y^j + rho^a_i X^i d_a Y^k - sigma^a_j Y^j d_a X^k`.
pub fn bracket_sections(
    spec: &AlgebroidSpec,
    sec_x: &[Expr],
    sec_y: &[Expr],
    x: &[f64],
) -> Result<Vec<f64>> {
    let m = spec.rank();
    let n = spec.base_dim();
    if sec_x.len() != m || sec_y.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "sections must have {m} components"
        )));
    }
    let c = spec.c_at(x)?;
    let rho = spec.rho_at(x)?;
    let sigma = spec.sigma_at(x)?;
    let mut xv = vec![0.0; m];
    let mut xd = vec![vec![0.0; n]; m]; // d_a X^k
    let mut yv = vec![0.0; m];
    let mut yd = vec![vec![0.0; n]; m];
    for i in 0..m {
        let jx = sec_x[i].eval_jet2(x)?;
        let jy = sec_y[i].eval_jet2(x)?;
        xv[i] = jx.value;
        yv[i] = jy.value;
        for a in 0..n {
            xd[i][a] = jx.grad[a];
            yd[i][a] = jy.grad[a];
        }
    }
    let mut out = vec![0.0; m];
    for k in 0..m {
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m {
                acc += c[k][i][j] * xv[i] * yv[j];
            }
        }
        for i in 0..m {
            for a in 0..n {
                acc += rho.at(a, i) * xv[i] * yd[k][a];
            }
        }
        for j in 0..m {
            for a in 0..n {
                acc -= sigma.at(a, j) * yv[j] * xd[k][a];
            }
        }
        out[k] = acc;
    }
    Ok(out)
}

/// Max over sampled base points of `|c^k_ij + c^k_ji|` and
/// `|rho^a_i - sigma^a_i|`; zero characterizes skew-algebroids.
pub fn skew_residual(spec: &AlgebroidSpec) -> Result<f64> {
    let mut worst = 0.0_f64;
    for x in spec.sample_points(DEFAULT_SAMPLES) {
        let c = spec.c_at(&x)?;
        let rho = spec.rho_at(&x)?;
        let sigma = spec.sigma_at(&x)?;
        for k in 0..spec.m {
            for i in 0..spec.m {
                for j in 0..spec.m {
                    worst = worst.max((c[k][i][j] + c[k][j][i]).abs());
                }
            }
        }
        for a in 0..spec.n {
            for i in 0..spec.m {
                worst = worst.max((rho.at(a, i) - sigma.at(a, i)).abs());
            }
        }
    }
    Ok(worst)
}

/// Residual of the anchor-is-a-morphism condition
/// `rho^a_m c^m_ij = rho^b_i d_b rho^a_j - rho^b_j d_b rho^a_i`,
/// maximized over samples and indices.
pub fn almost_lie_residual(spec: &AlgebroidSpec) -> Result<f64> {
    let mut worst = 0.0_f64;
    for x in spec.sample_points(DEFAULT_SAMPLES) {
        let c = spec.c_at(&x)?;
        let rho = spec.rho_jet_at(&x)?;
        for a in 0..spec.n {
            for i in 0..spec.m {
                for j in 0..spec.m {
                    let mut lhs = 0.0;
                    for mm in 0..spec.m {
                        lhs += rho.value.at(a, mm) * c[mm][i][j];
                    }
                    let mut rhs = 0.0;
                    for b in 0..spec.n {
                        rhs += rho.value.at(b, i) * rho.deriv[b].at(a, j)
                            - rho.value.at(b, j) * rho.deriv[b].at(a, i);
                    }
                    worst = worst.max((lhs - rhs).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Jacobiator residual
/// `J^l_ijk = sum_cyc(i,j,k) [ rho^a_i d_a c^l_jk + c^l_im c^m_jk ]`,
/// maximized over samples and indices. Requires a skew bracket.
pub fn jacobiator_residual(spec: &AlgebroidSpec) -> Result<f64> {
    let skew = skew_residual(spec)?;
    if skew > STRUCTURE_TOL {
        return Err(Error::PreconditionViolated(format!(
            "jacobiator requires a skew bracket (skew residual {skew:e})"
        )));
    }
    let mut worst = 0.0_f64;
    for x in spec.sample_points(DEFAULT_SAMPLES) {
        let (c, dc) = spec.c_jet_at(&x)?;
        let rho = spec.rho_at(&x)?;
        for l in 0..spec.m {
            for i in 0..spec.m {
                for j in 0..spec.m {
                    for k in 0..spec.m {
                        let mut acc = 0.0;
                        for (p, q, r) in [(i, j, k), (j, k, i), (k, i, j)] {
                            for a in 0..spec.n {
                                acc += rho.at(a, p) * dc[a][l][q][r];
                            }
                            for mm in 0..spec.m {
                                acc += c[l][p][mm] * c[mm][q][r];
                            }
                        }
                        worst = worst.max(acc.abs());
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// The linear bivector `Pi` at a point of `E*` as an `(m+n) x (m+n)` matrix
/// in the basis order `(d_xi_1 .. d_xi_m, d_x_1 .. d_x_n)`:
/// top-left `c^k_ij xi_k`, top-right `rho^b_i` (fiber row, base column),
/// bottom-left `-sigma^b_j`, bottom-right zero.
pub fn pi_tensor(spec: &AlgebroidSpec, pt: &DualPoint) -> Result<Mat> {
    let m = spec.rank();
    let n = spec.base_dim();
    let c = spec.c_at(&pt.x)?;
    let rho = spec.rho_at(&pt.x)?;
    let sigma = spec.sigma_at(&pt.x)?;
    let mut out = Mat::zeros(m + n, m + n);
    for i in 0..m {
        for j in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                acc += c[k][i][j] * pt.xi[k];
            }
            *out.at_mut(i, j) = acc;
        }
    }
    for i in 0..m {
        for b in 0..n {
            *out.at_mut(i, m + b) = rho.at(b, i);
            *out.at_mut(m + b, i) = -sigma.at(b, i);
        }
    }
    Ok(out)
}

/// The double-vector-bundle morphism `eps_E: T*E -> TE*`,
/// `(x, y, p, xi) -> (x, xi, rho^b_k y^k, c^k_ij y^i xi_k + sigma^a_j p_a)`.
/// The `pi` component of the input covector is read as the `xi` coordinate.
pub fn epsilon(spec: &AlgebroidSpec, v: &CotangentE) -> Result<TangentDual> {
    let m = spec.rank();
    let n = spec.base_dim();
    let c = spec.c_at(&v.x)?;
    let rho = spec.rho_at(&v.x)?;
    let sigma = spec.sigma_at(&v.x)?;
    let xdot = rho.matvec(&v.y);
    let mut xidot = vec![0.0; m];
    for j in 0..m {
        let mut acc = 0.0;
        for k in 0..m {
            for i in 0..m {
                acc += c[k][i][j] * v.y[i] * v.pi[k];
            }
        }
        for a in 0..n {
            acc += sigma.at(a, j) * v.p[a];
        }
        xidot[j] = acc;
    }
    Ok(TangentDual {
        x: v.x.clone(),
        xi: v.pi.clone(),
        xdot,
        xidot,
    })
}

/// The canonical isomorphism `R_tau: T*E -> T*E*`,
/// `(x, y, p, pi) -> (x, pi, -p, y)`.
pub fn r_tau(v: &CotangentE) -> CotangentDual {
    CotangentDual {
        x: v.x.clone(),
        xi: v.pi.clone(),
        p: v.p.iter().map(|&p| -p).collect(),
        phi: v.y.clone(),
    }
}

/// Explicit inverse of [`r_tau`]: `(x, xi, p, phi) -> (x, phi, -p, xi)`.
pub fn r_tau_inv(v: &CotangentDual) -> CotangentE {
    CotangentE {
        x: v.x.clone(),
        y: v.phi.clone(),
        p: v.p.iter().map(|&p| -p).collect(),
        pi: v.xi.clone(),
    }
}

/// The `kappa`-related pair of tangent vectors
/// `v  = (x, Y, rho^b_k y^k, Ydot)` and
/// `v' = (x, y, sigma^b_k Y^k, Ydot^j + c^j_kl y^k Y^l)`.
pub fn kappa_pair(
    spec: &AlgebroidSpec,
    x: &[f64],
    y: &[f64],
    cap_y: &[f64],
    cap_ydot: &[f64],
) -> Result<(TangentE, TangentE)> {
    let m = spec.rank();
    let c = spec.c_at(x)?;
    let rho = spec.rho_at(x)?;
    let sigma = spec.sigma_at(x)?;
    let v = TangentE {
        x: x.to_vec(),
        y: cap_y.to_vec(),
        xdot: rho.matvec(y),
        ydot: cap_ydot.to_vec(),
    };
    let mut ydot_prime = vec![0.0; m];
    for j in 0..m {
        let mut acc = cap_ydot[j];
        for k in 0..m {
            for l in 0..m {
                acc += c[j][k][l] * y[k] * cap_y[l];
            }
        }
        ydot_prime[j] = acc;
    }
    let v_prime = TangentE {
        x: x.to_vec(),
        y: y.to_vec(),
        xdot: sigma.matvec(cap_y),
        ydot: ydot_prime,
    };
    Ok((v, v_prime))
}

/// Defect of the duality tying `eps_E` and `kappa`:
/// `<v, eps_E(v*)>_{T tau} - <v', v*>_{tau_E}` for the `kappa` pair
/// `(v, v')` built from `(x, y, Y, Ydot)` and the covector
/// `v* = (x, y, p, pi)` at the base point of `v'`.
pub fn duality_residual(
    spec: &AlgebroidSpec,
    x: &[f64],
    y: &[f64],
    cap_y: &[f64],
    cap_ydot: &[f64],
    p: &[f64],
    pi_: &[f64],
) -> Result<f64> {
    let (v, v_prime) = kappa_pair(spec, x, y, cap_y, cap_ydot)?;
    let vstar = CotangentE {
        x: x.to_vec(),
        y: y.to_vec(),
        p: p.to_vec(),
        pi: pi_.to_vec(),
    };
    let eps = epsilon(spec, &vstar)?;
    // tangent pairing: Ydot.xi + Y.xidot
    let mut lhs = 0.0;
    for j in 0..spec.rank() {
        lhs += v.ydot[j] * eps.xi[j] + v.y[j] * eps.xidot[j];
    }
    // canonical pairing on TE x T*E: xdot.p + ydot.pi
    let mut rhs = 0.0;
    for a in 0..spec.base_dim() {
        rhs += v_prime.xdot[a] * vstar.p[a];
    }
    for j in 0..spec.rank() {
        rhs += v_prime.ydot[j] * vstar.pi[j];
    }
    Ok((lhs - rhs).abs())
}
