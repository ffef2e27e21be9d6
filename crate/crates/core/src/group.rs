//! Principal congruence subgroups Γ(N) ⊂ SL(2,ℤ).
//!
//! Everything here is exact integer/rational arithmetic except the Möbius
//! action itself. The fundamental domain is the union of coset translates
//! `g_j F` of the modular cell `F = {|Re z| ≤ ½, |z| ≥ 1}`.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use num_complex::Complex64;
use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Iteration cap for [`reduce_to_modular_cell`].
pub const REDUCTION_CAP: usize = 10_000;

/// A point of ℍ ∪ {∞} (finite points may also lie on the real axis when they
/// are images of ∞).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtPoint {
    Finite(Complex64),
    Infinity,
}

/// An element of SL(2,ℤ), compared projectively (`M == -M`).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Moebius {
    pub a: i64,
    pub b: i64,
    pub c: i64,
    pub d: i64,
}

impl PartialEq for Moebius {
    fn eq(&self, o: &Self) -> bool {
        (self.a == o.a && self.b == o.b && self.c == o.c && self.d == o.d) || (self.a == -o.a && self.b == -o.b && self.c == -o.c && self.d == -o.d)
    }
}

impl Eq for Moebius {}

impl Hash for Moebius {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.normalized().entries().hash(state);
    }
}

impl std::ops::Mul for Moebius {
    type Output = Moebius;
    fn mul(self, o: Moebius) -> Moebius {
        Moebius { a: self.a * o.a + self.b * o.c, b: self.a * o.b + self.b * o.d, c: self.c * o.a + self.d * o.c, d: self.c * o.b + self.d * o.d }
    }
}

impl Moebius {
    pub const IDENTITY: Moebius = Moebius { a: 1, b: 0, c: 0, d: 1 };
    /// z ↦ z + 1
    pub const T: Moebius = Moebius { a: 1, b: 1, c: 0, d: 1 };
    /// z ↦ −1/z
    pub const S: Moebius = Moebius { a: 0, b: -1, c: 1, d: 0 };

    pub fn new(a: i64, b: i64, c: i64, d: i64) -> Result<Self> {
        if a * d - b * c != 1 {
            return invalid(format!("({a},{b};{c},{d}) has determinant {} ≠ 1", a * d - b * c));
        }
        Ok(Moebius { a, b, c, d })
    }

    pub fn translation(n: i64) -> Self {
        Moebius { a: 1, b: n, c: 0, d: 1 }
    }

    pub fn entries(&self) -> [i64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn det(&self) -> i64 {
        self.a * self.d - self.b * self.c
    }

    pub fn inverse(&self) -> Self {
        Moebius { a: self.d, b: -self.b, c: -self.c, d: self.a }
    }

    pub fn neg(&self) -> Self {
        Moebius { a: -self.a, b: -self.b, c: -self.c, d: -self.d }
    }

    /// Representative with `c > 0`, or `c = 0` and `d > 0`.
    pub fn normalized(&self) -> Self {
        if self.c < 0 || (self.c == 0 && self.d < 0) {
            self.neg()
        } else {
            *self
        }
    }

    pub fn pow(&self, n: u32) -> Self {
        (0..n).fold(Moebius::IDENTITY, |acc, _| acc * *self)
    }

    /// `cz + d`, the automorphy denominator.
    pub fn denominator(&self, z: Complex64) -> Complex64 {
        Complex64::new(self.c as f64 * z.re + self.d as f64, self.c as f64 * z.im)
    }

    /// Möbius action on ℍ. Rejects points with `Im z ≤ 0`.
    pub fn apply(&self, z: Complex64) -> Result<Complex64> {
        if !(z.im > 0.0) || !z.re.is_finite() || !z.im.is_finite() {
            return invalid(format!("point {z} is not in the upper half-plane"));
        }
        Ok(self.apply_unchecked(z))
    }

    /// Möbius action without the half-plane check. The imaginary part is
    /// evaluated as `Im z / |cz+d|²` so it stays positive.
    pub fn apply_unchecked(&self, z: Complex64) -> Complex64 {
        let den = self.denominator(z);
        let num = Complex64::new(self.a as f64 * z.re + self.b as f64, self.a as f64 * z.im);
        let n2 = den.norm_sqr();
        let re = (num * den.conj()).re / n2;
        Complex64::new(re, z.im / n2)
    }

    /// Action on ℍ ∪ ∂ℍ; real points are mapped by the real Möbius map.
    pub fn apply_ext(&self, p: ExtPoint) -> Result<ExtPoint> {
        match p {
            ExtPoint::Infinity => Ok(if self.c == 0 { ExtPoint::Infinity } else { ExtPoint::Finite(Complex64::new(self.a as f64 / self.c as f64, 0.0)) }),
            ExtPoint::Finite(z) if z.im == 0.0 => {
                let den = self.c as f64 * z.re + self.d as f64;
                Ok(if den == 0.0 { ExtPoint::Infinity } else { ExtPoint::Finite(Complex64::new((self.a as f64 * z.re + self.b as f64) / den, 0.0)) })
            }
            ExtPoint::Finite(z) => Ok(ExtPoint::Finite(self.apply(z)?)),
        }
    }

    /// Membership in Γ(N), up to sign.
    pub fn is_member(&self, n: u64) -> bool {
        let n = n as i64;
        let ok = |s: i64| (self.a - s).rem_euclid(n) == 0 && self.b.rem_euclid(n) == 0 && self.c.rem_euclid(n) == 0 && (self.d - s).rem_euclid(n) == 0;
        n == 1 || ok(1) || ok(-1)
    }

    /// Canonical key of the class of `±self` in PSL(2, ℤ/N).
    pub fn key_mod(&self, n: u64) -> [i64; 4] {
        let n = n as i64;
        let p = self.entries().map(|v| v.rem_euclid(n));
        let m = self.entries().map(|v| (-v).rem_euclid(n));
        p.min(m)
    }

    /// Random element of Γ(N): a product of `factors` conjugates
    /// `W T^{±N} W⁻¹` with short random words `W` in `T^{±1}, S`.
    pub fn random_member<R: Rng>(n: u64, factors: usize, rng: &mut R) -> Self {
        let gens = [Moebius::T, Moebius::T.inverse(), Moebius::S];
        let mut out = Moebius::IDENTITY;
        for _ in 0..factors {
            let len = rng.random_range(0..4);
            let w = (0..len).fold(Moebius::IDENTITY, |acc, _| acc * gens[rng.random_range(0..3)]);
            let e = if rng.random_bool(0.5) { n as i64 } else { -(n as i64) };
            out = out * w * Moebius::translation(e) * w.inverse();
        }
        out
    }
}

/// Möbius action of a real 2×2 matrix `[[a, b], [c, d]]` of determinant 1.
pub fn apply_real(m: &[[f64; 2]; 2], z: Complex64) -> Complex64 {
    let den = Complex64::new(m[1][0] * z.re + m[1][1], m[1][0] * z.im);
    let num = Complex64::new(m[0][0] * z.re + m[0][1], m[0][0] * z.im);
    let n2 = den.norm_sqr();
    Complex64::new((num * den.conj()).re / n2, z.im / n2)
}

fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        if n.is_multiple_of(p) {
            out.push(p);
            while n.is_multiple_of(p) {
                n /= p;
            }
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

fn check_level(n: u64) -> Result<()> {
    if n < 2 {
        return invalid(format!("level N = {n}: N ≥ 2 required (Γ(1) has elliptic points)"));
    }
    Ok(())
}

/// Number of cusps m_N of ℍ/Γ(N).
pub fn cusp_count(n: u64) -> Result<u64> {
    check_level(n)?;
    if n == 2 {
        return Ok(3);
    }
    let mut m = Ratio::from_integer(n as i64 * n as i64);
    for p in prime_factors(n) {
        let p = p as i64;
        m *= Ratio::new(p * p - 1, p * p);
    }
    m /= 2;
    if !m.is_integer() {
        return Err(Error::Internal(format!("cusp count {m} not integral")));
    }
    Ok(m.to_integer() as u64)
}

/// Genus g_N = 1 + (N − 6) m_N / 12.
pub fn genus(n: u64) -> Result<u64> {
    let m = cusp_count(n)? as i64;
    let g = Ratio::from_integer(1) + Ratio::new((n as i64 - 6) * m, 12);
    if !g.is_integer() || g < Ratio::from_integer(0) {
        return Err(Error::Internal(format!("genus {g} for N = {n} is not a non-negative integer")));
    }
    Ok(g.to_integer() as u64)
}

/// |Σ_N| / π = N m_N / 3.
pub fn area_over_pi(n: u64) -> Result<Ratio<i64>> {
    let m = cusp_count(n)? as i64;
    Ok(Ratio::new(n as i64 * m, 3))
}

/// Index of Γ(N) in PSL(2,ℤ).
pub fn psl_index(n: u64) -> Result<u64> {
    check_level(n)?;
    if n == 2 {
        return Ok(6);
    }
    let mut idx = Ratio::from_integer((n * n * n) as i64);
    for p in prime_factors(n) {
        let p = p as i64;
        idx *= Ratio::new(p * p - 1, p * p);
    }
    idx /= 2;
    Ok(idx.to_integer() as u64)
}

/// A cusp of Γ(N), stored as the reduced fraction p/q (`q = 0` is ∞).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cusp {
    pub p: i64,
    pub q: i64,
    pub width: u64,
    /// Integer matrix sending the cusp to ∞ (the inverse of the first coset
    /// representative whose tile has this cusp as its vertex at ∞).
    pub chart: Moebius,
    /// Index of that coset representative.
    pub sheet: usize,
}

impl Cusp {
    pub fn is_infinity(&self) -> bool {
        self.q == 0
    }

    pub fn value(&self) -> ExtPoint {
        if self.q == 0 {
            ExtPoint::Infinity
        } else {
            ExtPoint::Finite(Complex64::new(self.p as f64 / self.q as f64, 0.0))
        }
    }

    /// Width-normalized scaling matrix `diag(w^{-1/2}, w^{1/2}) · chart`: it maps
    /// the cusp to ∞ and conjugates the stabilizer generator to z ↦ z + 1.
    pub fn scaling_matrix(&self) -> [[f64; 2]; 2] {
        let s = (self.width as f64).sqrt();
        let g = &self.chart;
        [[g.a as f64 / s, g.b as f64 / s], [g.c as f64 * s, g.d as f64 * s]]
    }

    /// Parabolic generator of the stabilizer of the cusp in Γ(N).
    pub fn stabilizer_generator(&self) -> Moebius {
        let c = self.chart.inverse();
        c * Moebius::translation(self.width as i64) * self.chart
    }
}

/// Geometric and combinatorial data of Σ = ℍ/Γ(N).
#[derive(Clone, Debug)]
pub struct CongruenceSurface {
    pub level: u64,
    pub cusp_count: u64,
    pub genus: u64,
    pub area_over_pi: Ratio<i64>,
    pub cusps: Vec<Cusp>,
    /// Representatives of Γ(N)\PSL(2,ℤ) found by breadth-first search over
    /// right multiplication by T and S, starting at the identity.
    pub coset_reps: Vec<Moebius>,
    /// `t_next[j]` is the coset of `g_j T`.
    pub t_next: Vec<usize>,
    /// `s_next[j]` is the coset of `g_j S`.
    pub s_next: Vec<usize>,
    /// Cusp of the vertex `g_j ∞` of tile `j`.
    pub sheet_cusp: Vec<usize>,
    coset_index: HashMap<[i64; 4], usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SurfaceSummary {
    pub level: u64,
    pub m: u64,
    pub g: u64,
    pub area_over_pi: String,
    pub cusps: Vec<CuspSummary>,
    pub coset_count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CuspSummary {
    pub p: i64,
    pub q: i64,
}

fn cusp_key(g: &Moebius, n: u64) -> [i64; 2] {
    let n = n as i64;
    let p = [g.a.rem_euclid(n), g.c.rem_euclid(n)];
    let m = [(-g.a).rem_euclid(n), (-g.c).rem_euclid(n)];
    p.min(m)
}

impl CongruenceSurface {
    pub fn new(level: u64) -> Result<Self> {
        check_level(level)?;
        let m = cusp_count(level)?;
        let g = genus(level)?;
        let area = area_over_pi(level)?;

        let mut reps = vec![Moebius::IDENTITY];
        let mut index = HashMap::new();
        index.insert(Moebius::IDENTITY.key_mod(level), 0usize);
        let mut head = 0;
        while head < reps.len() {
            let g = reps[head];
            for gen in [Moebius::T, Moebius::S] {
                let h = (g * gen).normalized();
                let key = h.key_mod(level);
                if let std::collections::hash_map::Entry::Vacant(slot) = index.entry(key) {
                    slot.insert(reps.len());
                    reps.push(h);
                }
            }
            head += 1;
        }
        let lookup = |h: &Moebius| index[&h.key_mod(level)];
        let t_next: Vec<usize> = reps.iter().map(|g| lookup(&(*g * Moebius::T))).collect();
        let s_next: Vec<usize> = reps.iter().map(|g| lookup(&(*g * Moebius::S))).collect();

        let mut cusps: Vec<Cusp> = Vec::new();
        let mut cusp_of_key: HashMap<[i64; 2], usize> = HashMap::new();
        let mut sheet_cusp = Vec::with_capacity(reps.len());
        for (j, g) in reps.iter().enumerate() {
            let key = cusp_key(g, level);
            let ci = *cusp_of_key.entry(key).or_insert_with(|| {
                let (mut p, mut q) = (g.a, g.c);
                if q < 0 || (q == 0 && p < 0) {
                    p = -p;
                    q = -q;
                }
                if q == 0 {
                    p = 1;
                }
                cusps.push(Cusp { p, q, width: level, chart: g.inverse().normalized(), sheet: j });
                cusps.len() - 1
            });
            sheet_cusp.push(ci);
        }

        let surface =
            CongruenceSurface { level, cusp_count: m, genus: g, area_over_pi: area, cusps, coset_reps: reps, t_next, s_next, sheet_cusp, coset_index: index };
        surface.check()?;
        Ok(surface)
    }

    fn check(&self) -> Result<()> {
        let idx = psl_index(self.level)? as usize;
        if self.coset_reps.len() != idx {
            return Err(Error::Internal(format!("found {} cosets, expected index {idx}", self.coset_reps.len())));
        }
        if self.cusps.len() as u64 != self.cusp_count {
            return Err(Error::Internal(format!("found {} cusp classes, formula gives {}", self.cusps.len(), self.cusp_count)));
        }
        let gb = Ratio::from_integer(2 * (2 * self.genus as i64 - 2 + self.cusp_count as i64));
        if gb != self.area_over_pi {
            return Err(Error::Internal("Gauss–Bonnet check failed".into()));
        }
        Ok(())
    }

    /// Area of Σ as a float.
    pub fn area(&self) -> f64 {
        *self.area_over_pi.numer() as f64 / *self.area_over_pi.denom() as f64 * std::f64::consts::PI
    }

    pub fn coset_count(&self) -> usize {
        self.coset_reps.len()
    }

    /// Index `j` with `g ∈ Γ(N) g_j`.
    pub fn coset_of(&self, g: &Moebius) -> usize {
        self.coset_index[&g.key_mod(self.level)]
    }

    /// Reduce `z` into the fundamental domain `∪ g_j F`. Returns `(z₀, γ)` with
    /// `γ ∈ Γ(N)` and `z₀ = γ z`.
    pub fn reduce_point(&self, z: Complex64) -> Result<(Complex64, Moebius)> {
        let (w, delta) = reduce_to_modular_cell(z)?;
        let j = self.coset_of(&delta.inverse());
        let g = self.coset_reps[j];
        let gamma = (g * delta).normalized();
        debug_assert!(gamma.is_member(self.level));
        Ok((g.apply_unchecked(w), gamma))
    }

    /// Cusp-neighbourhood chart `z ↦ chart·z`; the image cylinder has
    /// circumference equal to the cusp width. Points with `Im(chart·z) ≤ 1`
    /// lie outside the horoball neighbourhood and are rejected.
    pub fn cusp_coordinates(&self, cusp: usize, z: Complex64) -> Result<Complex64> {
        let c = self.cusps.get(cusp).ok_or_else(|| Error::InvalidInput(format!("no cusp with index {cusp}")))?;
        let w = c.chart.apply(z)?;
        if w.im <= 1.0 {
            return invalid(format!("{z} lies outside the neighbourhood of cusp {cusp}"));
        }
        Ok(w)
    }

    pub fn summary(&self) -> SurfaceSummary {
        SurfaceSummary {
            level: self.level,
            m: self.cusp_count,
            g: self.genus,
            area_over_pi: self.area_over_pi.to_string(),
            cusps: self.cusps.iter().map(|c| CuspSummary { p: c.p, q: c.q }).collect(),
            coset_count: self.coset_reps.len(),
        }
    }
}

/// Reduce `z` into the modular cell with the standard algorithm. Returns
/// `(w, δ)` with `w = δ z`. Boundary ties prefer the smaller real part.
pub fn reduce_to_modular_cell(z: Complex64) -> Result<(Complex64, Moebius)> {
    if !(z.im > 0.0) || !z.re.is_finite() {
        return invalid(format!("point {z} is not in the upper half-plane"));
    }
    let mut w = z;
    let mut delta = Moebius::IDENTITY;
    for _ in 0..REDUCTION_CAP {
        let n = (w.re + 0.5).floor();
        if n != 0.0 {
            w.re -= n;
            delta = Moebius::translation(-(n as i64)) * delta;
        }
        let r2 = w.norm_sqr();
        if r2 < 1.0 || (r2 == 1.0 && w.re > 0.0) {
            w = Moebius::S.apply_unchecked(w);
            delta = Moebius::S * delta;
            continue;
        }
        return Ok((w, delta.normalized()));
    }
    Err(Error::Internal(format!("reduction of {z} did not terminate in {REDUCTION_CAP} steps")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mobius_examples() {
        let z = Complex64::new(3.0, 4.0);
        assert_eq!(Moebius::IDENTITY.apply(z).unwrap(), z);
        let i = Complex64::new(0.0, 1.0);
        assert!((Moebius::S.apply(i).unwrap() - i).norm() < 1e-15);
        let w = Moebius::S.apply(Complex64::new(0.0, 2.0)).unwrap();
        assert!((w - Complex64::new(0.0, 0.5)).norm() < 1e-15);
        assert!(Moebius::S.apply(Complex64::new(1.0, 0.0)).is_err());
        assert_eq!(Moebius::new(2, 1, 1, 1).unwrap().apply_ext(ExtPoint::Infinity).unwrap(), ExtPoint::Finite(Complex64::new(2.0, 0.0)));
        assert!(Moebius::new(1, 1, 1, 1).is_err());
    }

    #[test]
    fn membership() {
        for n in 1..8 {
            assert!(Moebius::IDENTITY.is_member(n));
        }
        assert!(Moebius::translation(2).is_member(2));
        assert!(!Moebius::T.is_member(2));
        assert!(Moebius::IDENTITY.neg().is_member(3));
        assert_eq!(Moebius::S, Moebius::S.neg());
    }

    #[test]
    fn cusp_and_genus_values() {
        assert_eq!(cusp_count(2).unwrap(), 3);
        assert_eq!(cusp_count(3).unwrap(), 4);
        assert_eq!(cusp_count(6).unwrap(), 12);
        assert_eq!(genus(2).unwrap(), 0);
        assert_eq!(genus(6).unwrap(), 1);
        assert_eq!(genus(7).unwrap(), 3);
        assert!(cusp_count(1).is_err());
        assert!(CongruenceSurface::new(1).is_err());
    }

    #[test]
    fn level_two_cusps() {
        let s = CongruenceSurface::new(2).unwrap();
        let vals: Vec<(i64, i64)> = s.cusps.iter().map(|c| (c.p, c.q)).collect();
        assert_eq!(vals, vec![(1, 0), (0, 1), (1, 1)]);
        assert_eq!(s.area_over_pi, Ratio::from_integer(2));
        assert_eq!(s.cusps[0].chart, Moebius::IDENTITY);
        assert_eq!(s.cusps[1].chart, Moebius::S);
    }

    #[test]
    fn scaling_matrices_normalize_stabilizers() {
        for n in [2, 3, 6] {
            let s = CongruenceSurface::new(n).unwrap();
            for c in &s.cusps {
                let gen = c.stabilizer_generator();
                assert!(gen.is_member(n));
                let sm = c.scaling_matrix();
                let (a, b, cc, d) = (sm[0][0], sm[0][1], sm[1][0], sm[1][1]);
                let g = [[gen.a as f64, gen.b as f64], [gen.c as f64, gen.d as f64]];
                // σ g σ⁻¹ with σ⁻¹ = (d, −b; −c, a)
                let m1 = [[a * g[0][0] + b * g[1][0], a * g[0][1] + b * g[1][1]], [cc * g[0][0] + d * g[1][0], cc * g[0][1] + d * g[1][1]]];
                let r = [[m1[0][0] * d - m1[0][1] * cc, -m1[0][0] * b + m1[0][1] * a], [m1[1][0] * d - m1[1][1] * cc, -m1[1][0] * b + m1[1][1] * a]];
                let sign = r[0][0].signum();
                let res = (r[0][0] * sign - 1.0).abs() + (r[0][1] * sign - 1.0).abs() + r[1][0].abs() + (r[1][1] * sign - 1.0).abs();
                assert!(res < 1e-12, "N={n} cusp {}/{} residual {res}", c.p, c.q);
                assert_eq!(c.chart.apply_ext(c.value()).unwrap(), ExtPoint::Infinity);
            }
        }
    }

    #[test]
    fn reduce_point_examples() {
        let s = CongruenceSurface::new(2).unwrap();
        let z = Complex64::new(0.1, 1.7);
        let (z0, g) = s.reduce_point(z).unwrap();
        assert_eq!(z0, z);
        assert_eq!(g, Moebius::IDENTITY);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let w = Complex64::new(rng.random_range(-0.45..0.45), rng.random_range(1.2..3.0));
            let j = rng.random_range(0..s.coset_count());
            let w = s.coset_reps[j].apply_unchecked(w);
            let gamma = Moebius::random_member(2, 3, &mut rng);
            let z = gamma.apply_unchecked(w);
            let (z0, g) = s.reduce_point(z).unwrap();
            assert!(g.is_member(2));
            assert!((z0 - w).norm() < 1e-8 * (1.0 + w.norm()), "{z0} vs {w}");
        }
    }

    #[test]
    fn cusp_coordinates_examples() {
        let s = CongruenceSurface::new(2).unwrap();
        let z = Complex64::new(0.2, 3.0);
        assert_eq!(s.cusp_coordinates(0, z).unwrap(), z);
        let w = s.cusp_coordinates(1, Complex64::new(0.0, 0.25)).unwrap();
        assert!((w - Complex64::new(0.0, 4.0)).norm() < 1e-14);
        assert!(s.cusp_coordinates(0, Complex64::new(0.0, 0.5)).is_err());
    }
}
