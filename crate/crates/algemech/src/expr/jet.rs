//! Second-order truncated polynomial arithmetic over the full variable list.

use super::{as_integer, Func, Node};
use crate::{Error, Result};

/// Value, gradient and symmetric Hessian of a scalar expression at a point.
///
/// `grad` is indexed by the declared variable list; `hess` stores the full
/// symmetric matrix row-major (`hess[i * nvars + j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl Jet2 {
    pub fn constant(value: f64, nvars: usize) -> Jet2 {
        Jet2 {
            value,
            grad: vec![0.0; nvars],
            hess: vec![0.0; nvars * nvars],
        }
    }

    pub fn variable(value: f64, index: usize, nvars: usize) -> Jet2 {
        let mut j = Jet2::constant(value, nvars);
        j.grad[index] = 1.0;
        j
    }

    pub fn nvars(&self) -> usize {
        self.grad.len()
    }

    #[inline]
    pub fn hess_at(&self, i: usize, j: usize) -> f64 {
        self.hess[i * self.nvars() + j]
    }

    fn is_const(&self) -> bool {
        self.grad.iter().all(|&g| g == 0.0) && self.hess.iter().all(|&h| h == 0.0)
    }
}

pub(super) fn eval_jet2(node: &Node, env: &[f64]) -> Result<Jet2> {
    let n = env.len();
    Ok(match node {
        Node::Const(c) => Jet2::constant(*c, n),
        Node::Var(i) => Jet2::variable(env[*i], *i, n),
        Node::Neg(a) => neg(eval_jet2(a, env)?),
        Node::Add(a, b) => add(eval_jet2(a, env)?, &eval_jet2(b, env)?),
        Node::Sub(a, b) => sub(eval_jet2(a, env)?, &eval_jet2(b, env)?),
        Node::Mul(a, b) => mul(&eval_jet2(a, env)?, &eval_jet2(b, env)?),
        Node::Div(a, b) => {
            let den = eval_jet2(b, env)?;
            if den.value == 0.0 {
                return Err(Error::Domain("division by zero".into()));
            }
            mul(&eval_jet2(a, env)?, &recip(&den))
        }
        Node::Pow(a, b) => pow(&eval_jet2(a, env)?, &eval_jet2(b, env)?)?,
        Node::Func(f, a) => apply_func(*f, &eval_jet2(a, env)?)?,
    })
}

// Guarded multiply: an exactly-zero perturbation contributes exactly zero,
// even when the analytic derivative factor is infinite (sqrt at 0).
#[inline]
fn gm(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

fn neg(mut a: Jet2) -> Jet2 {
    a.value = -a.value;
    for g in &mut a.grad {
        *g = -*g;
    }
    for h in &mut a.hess {
        *h = -*h;
    }
    a
}

fn add(mut a: Jet2, b: &Jet2) -> Jet2 {
    a.value += b.value;
    for (x, y) in a.grad.iter_mut().zip(&b.grad) {
        *x += y;
    }
    for (x, y) in a.hess.iter_mut().zip(&b.hess) {
        *x += y;
    }
    a
}

fn sub(mut a: Jet2, b: &Jet2) -> Jet2 {
    a.value -= b.value;
    for (x, y) in a.grad.iter_mut().zip(&b.grad) {
        *x -= y;
    }
    for (x, y) in a.hess.iter_mut().zip(&b.hess) {
        *x -= y;
    }
    a
}

fn mul(a: &Jet2, b: &Jet2) -> Jet2 {
    let n = a.nvars();
    let mut out = Jet2::constant(a.value * b.value, n);
    for i in 0..n {
        out.grad[i] = a.grad[i] * b.value + a.value * b.grad[i];
    }
    for i in 0..n {
        for j in 0..n {
            out.hess[i * n + j] = a.hess[i * n + j] * b.value
                + a.grad[i] * b.grad[j]
                + a.grad[j] * b.grad[i]
                + a.value * b.hess[i * n + j];
        }
    }
    out
}

fn recip(b: &Jet2) -> Jet2 {
    let n = b.nvars();
    let inv = 1.0 / b.value;
    let inv2 = inv * inv;
    let inv3 = inv2 * inv;
    let mut out = Jet2::constant(inv, n);
    for i in 0..n {
        out.grad[i] = -b.grad[i] * inv2;
    }
    for i in 0..n {
        for j in 0..n {
            out.hess[i * n + j] = -b.hess[i * n + j] * inv2 + 2.0 * b.grad[i] * b.grad[j] * inv3;
        }
    }
    out
}

/// Chain rule for a scalar function: `f(u)` from `(f, f', f'')` at `u.value`.
fn chain(u: &Jet2, f0: f64, f1: f64, f2: f64) -> Jet2 {
    let n = u.nvars();
    let mut out = Jet2::constant(f0, n);
    for i in 0..n {
        out.grad[i] = gm(f1, u.grad[i]);
    }
    for i in 0..n {
        for j in 0..n {
            out.hess[i * n + j] = gm(f2, gm(u.grad[i], u.grad[j])) + gm(f1, u.hess[i * n + j]);
        }
    }
    out
}

fn pow(base: &Jet2, exp: &Jet2) -> Result<Jet2> {
    if exp.is_const() {
        let c = exp.value;
        if let Some(k) = as_integer(c) {
            return pow_int(base, k);
        }
        if base.value < 0.0 {
            return Err(Error::Domain(format!(
                "non-integer power of a negative base ({:e})^({c:e})",
                base.value
            )));
        }
        let f0 = base.value.powf(c);
        let f1 = c * base.value.powf(c - 1.0);
        let f2 = c * (c - 1.0) * base.value.powf(c - 2.0);
        return Ok(chain(base, f0, f1, f2));
    }
    // variable exponent: a^b = exp(b * log a), requires a > 0
    if base.value <= 0.0 {
        return Err(Error::Domain(format!(
            "variable power of a non-positive base ({:e})",
            base.value
        )));
    }
    let log_base = apply_func(Func::Log, base)?;
    apply_func(Func::Exp, &mul(exp, &log_base))
}

fn pow_int(base: &Jet2, k: i32) -> Result<Jet2> {
    if base.value == 0.0 && k < 0 {
        return Err(Error::Domain("zero raised to a negative power".into()));
    }
    let u = base.value;
    let f0 = u.powi(k);
    let kf = f64::from(k);
    let f1 = if k == 0 { 0.0 } else { kf * u.powi(k - 1) };
    let f2 = if k == 0 || k == 1 {
        0.0
    } else {
        kf * (kf - 1.0) * u.powi(k - 2)
    };
    Ok(chain(base, f0, f1, f2))
}

fn apply_func(f: Func, u: &Jet2) -> Result<Jet2> {
    let v = u.value;
    let (f0, f1, f2) = match f {
        Func::Sin => (v.sin(), v.cos(), -v.sin()),
        Func::Cos => (v.cos(), -v.sin(), -v.cos()),
        Func::Tan => {
            let t = v.tan();
            if !t.is_finite() {
                return Err(Error::Domain("tan at a pole".into()));
            }
            let sec2 = 1.0 + t * t;
            (t, sec2, 2.0 * t * sec2)
        }
        Func::Exp => {
            let e = v.exp();
            (e, e, e)
        }
        Func::Log => {
            if v <= 0.0 {
                return Err(Error::Domain(format!("log of non-positive value {v:e}")));
            }
            (v.ln(), 1.0 / v, -1.0 / (v * v))
        }
        Func::Sqrt => {
            if v < 0.0 {
                return Err(Error::Domain(format!("sqrt of negative value {v:e}")));
            }
            let s = v.sqrt();
            (s, 0.5 / s, -0.25 / (s * s * s))
        }
        Func::Abs => {
            let sign = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
            (v.abs(), sign, 0.0)
        }
        Func::Tanh => {
            let t = v.tanh();
            let sech2 = 1.0 - t * t;
            (t, sech2, -2.0 * t * sech2)
        }
    };
    Ok(chain(u, f0, f1, f2))
}
