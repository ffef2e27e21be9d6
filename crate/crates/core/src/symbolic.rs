//! Exact symbolic calculus for the cylinder oracles.
//!
//! Expressions are finite sums of terms
//! `c(π, k) · e^{2πi m x} · y^{e₀ + i e₁ k} · e^{−2π n y}` with coefficients
//! `c` polynomials in `π` and a real symbol `k` over `ℚ(i)`. This class is
//! closed under `∂ₓ`, `∂_y` and multiplication by powers of `y`, which is all
//! the magnetic Laplacian needs.

use std::collections::BTreeMap;

use num_complex::Complex;
use num_rational::Ratio;
use num_traits::{One, Zero};

use crate::error::{invalid, Result};

pub type Q = Ratio<i64>;
pub type Qi = Complex<Q>;

fn qi(re: i64, im: i64) -> Qi {
    Complex::new(Q::from_integer(re), Q::from_integer(im))
}

/// Polynomial in `(π, k)` with `ℚ(i)` coefficients, keyed by `(deg_π, deg_k)`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Poly(BTreeMap<(u32, u32), Qi>);

impl Poly {
    pub fn constant(c: Qi) -> Self {
        Poly::monomial(c, 0, 0)
    }

    pub fn monomial(c: Qi, pi: u32, k: u32) -> Self {
        let mut m = BTreeMap::new();
        if !c.is_zero() {
            m.insert((pi, k), c);
        }
        Poly(m)
    }

    pub fn is_zero(&self) -> bool {
        self.0.values().all(|c| c.is_zero())
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let mut m = self.0.clone();
        for (key, c) in &o.0 {
            let e = m.entry(*key).or_insert_with(Qi::zero);
            *e += c;
        }
        m.retain(|_, c| !c.is_zero());
        Poly(m)
    }

    pub fn neg(&self) -> Poly {
        Poly(self.0.iter().map(|(k, c)| (*k, -c)).collect())
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut m: BTreeMap<(u32, u32), Qi> = BTreeMap::new();
        for ((p1, k1), c1) in &self.0 {
            for ((p2, k2), c2) in &o.0 {
                let e = m.entry((p1 + p2, k1 + k2)).or_insert_with(Qi::zero);
                *e += c1 * c2;
            }
        }
        m.retain(|_, c| !c.is_zero());
        Poly(m)
    }

    pub fn eval(&self, k: f64) -> num_complex::Complex64 {
        self.0
            .iter()
            .map(|((p, kk), c)| {
                let re = *c.re.numer() as f64 / *c.re.denom() as f64;
                let im = *c.im.numer() as f64 / *c.im.denom() as f64;
                num_complex::Complex64::new(re, im) * std::f64::consts::PI.powi(*p as i32) * k.powi(*kk as i32)
            })
            .sum()
    }
}

/// Term shape `e^{2πi m x} y^{e₀ + i e₁ k} e^{−2π n y}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Shape {
    pub m: i64,
    pub e0: Q,
    pub e1: i64,
    pub n: i64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Expr(BTreeMap<Shape, Poly>);

impl Expr {
    pub fn term(c: Poly, s: Shape) -> Self {
        let mut e = Expr::default();
        e.push(s, c);
        e
    }

    fn push(&mut self, s: Shape, c: Poly) {
        let sum = self.0.get(&s).map(|p| p.add(&c)).unwrap_or(c);
        if sum.is_zero() {
            self.0.remove(&s);
        } else {
            self.0.insert(s, sum);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.values().all(Poly::is_zero)
    }

    pub fn add(&self, o: &Expr) -> Expr {
        let mut e = self.clone();
        for (s, c) in &o.0 {
            e.push(*s, c.clone());
        }
        e
    }

    pub fn scale(&self, c: &Poly) -> Expr {
        let mut e = Expr::default();
        for (s, p) in &self.0 {
            e.push(*s, p.mul(c));
        }
        e
    }

    /// Multiply by `y^p`.
    pub fn mul_y(&self, p: Q) -> Expr {
        Expr(self.0.iter().map(|(s, c)| (Shape { e0: s.e0 + p, ..*s }, c.clone())).collect())
    }

    pub fn dx(&self) -> Expr {
        let mut e = Expr::default();
        for (s, c) in &self.0 {
            // 2πi m
            e.push(*s, c.mul(&Poly::monomial(qi(0, 2 * s.m), 1, 0)));
        }
        e
    }

    pub fn dy(&self) -> Expr {
        let mut e = Expr::default();
        for (s, c) in &self.0 {
            let exponent = Poly::constant(Complex::new(s.e0, Q::zero())).add(&Poly::monomial(qi(0, s.e1), 0, 1));
            e.push(Shape { e0: s.e0 - Q::one(), ..*s }, c.mul(&exponent));
            e.push(*s, c.mul(&Poly::monomial(qi(-2 * s.n, 0), 1, 0)));
        }
        e
    }

    pub fn eval(&self, x: f64, y: f64, k: f64) -> num_complex::Complex64 {
        use num_complex::Complex64;
        let tau = 2.0 * std::f64::consts::PI;
        self.0
            .iter()
            .map(|(s, c)| {
                let e0 = *s.e0.numer() as f64 / *s.e0.denom() as f64;
                let ypow = Complex64::new(e0, s.e1 as f64 * k);
                let shape = Complex64::from_polar(1.0, tau * s.m as f64 * x) * (ypow * y.ln()).exp() * (-tau * s.n as f64 * y).exp();
                c.eval(k) * shape
            })
            .sum()
    }
}

/// `−Δ_{a^b} f = −y²(f_xx + f_yy) + 2iby f_x + b² f`.
pub fn magnetic_laplacian(f: &Expr, b: Q) -> Expr {
    let two = Q::from_integer(2);
    let lap = f.dx().dx().add(&f.dy().dy()).mul_y(two).scale(&Poly::constant(qi(-1, 0)));
    let drift = f.dx().mul_y(Q::one()).scale(&Poly::constant(Complex::new(Q::zero(), two * b)));
    let mass = f.scale(&Poly::constant(Complex::new(b * b, Q::zero())));
    lap.add(&drift).add(&mass)
}

/// Exact rational for a dyadic `f64`.
pub fn rational(v: f64) -> Result<Q> {
    match Q::approximate_float(v) {
        Some(q) if (*q.numer() as f64 / *q.denom() as f64) == v => Ok(q),
        _ => invalid(format!("{v} has no exact small rational representation")),
    }
}

/// The seed `y^b e^{2πi x} e^{−2πy}`.
pub fn seed(b: Q) -> Expr {
    Expr::term(Poly::constant(qi(1, 0)), Shape { m: 1, e0: b, e1: 0, n: 1 })
}

/// `(−Δ_{a^b} − b)` applied to the seed; identically zero.
pub fn seed_residual(b: Q) -> Expr {
    let f = seed(b);
    magnetic_laplacian(&f, b).add(&f.scale(&Poly::constant(Complex::new(-b, Q::zero()))))
}

/// `y^{½ − ik}`.
pub fn generalized_mode() -> Expr {
    Expr::term(Poly::constant(qi(1, 0)), Shape { m: 0, e0: Q::new(1, 2), e1: -1, n: 0 })
}

/// `k² + ¼ + b²` as a polynomial in the symbol `k`.
pub fn generalized_eigenvalue(b: Q) -> Poly {
    Poly::monomial(qi(1, 0), 0, 2).add(&Poly::constant(Complex::new(Q::new(1, 4) + b * b, Q::zero())))
}
