//! Line bundles over Σ: automorphy factors, the constant-curvature connection
//! `a^b = b dx / y`, degree/weight bookkeeping and discrete gauge transforms.
//!
//! Sections are functions `Ψ` on ℍ with `Ψ(γz) = ρ_b(γ, z) Ψ(z)` where
//! `ρ_b(γ, z) = ((cz+d)/(cz̄+d))^b`. The connection satisfies
//! `γ*a^b = a^b + dσ` with `ρ_b = e^{iσ}`; covariant derivatives are `d − i a`.
//! Only the trivial character is supported.

use num_complex::Complex64;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::group::{CongruenceSurface, Moebius};
use crate::mesh::TruncatedMesh;

/// Degree, field strength and weight of a line bundle over ℍ/Γ(N).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleData {
    pub level: u64,
    pub degree: u64,
    /// `b = 2π deg / |Σ|` as an exact rational (|Σ| is a rational multiple of π).
    pub b_exact: (i64, i64),
    pub b: f64,
    /// Maass weight `k = 2b`.
    pub weight: f64,
}

impl BundleData {
    pub fn new(surface: &CongruenceSurface, degree: u64) -> Result<Self> {
        if degree == 0 {
            return invalid("bundle degree must be ≥ 1");
        }
        let b = Ratio::from_integer(2 * degree as i64) / surface.area_over_pi;
        // k (2g − 2 + m) / 2 = degree
        let chi = 2 * surface.genus as i64 - 2 + surface.cusp_count as i64;
        if b * 2 * chi / 2 != Ratio::from_integer(degree as i64) {
            return Err(Error::Internal("Gauss–Bonnet degree cross-check failed".into()));
        }
        let bf = *b.numer() as f64 / *b.denom() as f64;
        Ok(BundleData { level: surface.level, degree, b_exact: (*b.numer(), *b.denom()), b: bf, weight: 2.0 * bf })
    }

    pub fn b_ratio(&self) -> Ratio<i64> {
        Ratio::new(self.b_exact.0, self.b_exact.1)
    }

    /// `b` as an integer when it is one.
    pub fn integer_b(&self) -> Option<i64> {
        (self.b_exact.1 == 1).then_some(self.b_exact.0)
    }

    /// The configuration `b = ½`, whose ground eigenvalue sits at the bottom
    /// of the essential spectrum.
    pub fn is_embedded_case(&self) -> bool {
        self.b_exact == (1, 2)
    }

    /// Refuses `b = ½` and returns the integer field strength required by
    /// the discrete bundle (integer `b` makes the automorphy factor a cocycle).
    pub fn require_integer_b(&self) -> Result<i64> {
        if self.is_embedded_case() {
            return Err(Error::ModelGuard(
                "b = 1/2: the eigenvalue b is embedded at the bottom of the essential \
                 spectrum [1/4 + b², ∞) and cannot be resolved"
                    .into(),
            ));
        }
        self.integer_b().ok_or_else(|| {
            Error::InvalidInput(format!("b = {}/{} is not an integer; the discrete bundle needs an exact cocycle", self.b_exact.0, self.b_exact.1))
        })
    }
}

/// `(b, k)` for a bundle of the given degree.
pub fn weight_degree_convert(surface: &CongruenceSurface, degree: u64) -> Result<(f64, f64)> {
    let bd = BundleData::new(surface, degree)?;
    Ok((bd.b, bd.weight))
}

/// Inverse of [`weight_degree_convert`]: the degree `k (2g − 2 + m) / 2`.
pub fn degree_from_weight(surface: &CongruenceSurface, k: Ratio<i64>) -> Result<u64> {
    let chi = 2 * surface.genus as i64 - 2 + surface.cusp_count as i64;
    let deg = k * chi / 2;
    if !deg.is_integer() || deg <= Ratio::from_integer(0) {
        return invalid(format!("weight {k} gives non-integral or non-positive degree {deg}"));
    }
    Ok(deg.to_integer() as u64)
}

/// A unit-modulus automorphy value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AutomorphyValue {
    pub phase: Complex64,
}

/// `ρ_b(γ, z)` with the principal branch of the power.
pub fn automorphy_factor(g: &Moebius, z: Complex64, b: f64) -> Result<AutomorphyValue> {
    if !(z.im > 0.0) {
        return invalid(format!("point {z} is not in the upper half-plane"));
    }
    Ok(AutomorphyValue { phase: automorphy_phase(g.c as f64, g.d as f64, z, b) })
}

/// `((cz+d)/(cz̄+d))^b` for real `c, d`. The ratio is `e^{2i arg(cz+d)}`, whose
/// principal logarithm does not depend on the sign of `(c, d)`.
pub fn automorphy_phase(c: f64, d: f64, z: Complex64, b: f64) -> Complex64 {
    let j = Complex64::new(c * z.re + d, c * z.im);
    let mut theta = 2.0 * j.arg();
    if theta > std::f64::consts::PI {
        theta -= 2.0 * std::f64::consts::PI;
    } else if theta <= -std::f64::consts::PI {
        theta += 2.0 * std::f64::consts::PI;
    }
    Complex64::from_polar(1.0, b * theta)
}

/// `|ρ(γ₁γ₂, z) − ρ(γ₁, γ₂z) ρ(γ₂, z)|`.
pub fn cocycle_residual(g1: &Moebius, g2: &Moebius, z: Complex64, b: f64) -> Result<f64> {
    let lhs = automorphy_factor(&(*g1 * *g2), z, b)?.phase;
    let w = g2.apply(z)?;
    let rhs = automorphy_factor(g1, w, b)?.phase * automorphy_factor(g2, z, b)?.phase;
    Ok((lhs - rhs).norm())
}

/// Components `(a_x, a_y)` of `a^b = b y⁻¹ dx`.
pub fn constant_connection(z: Complex64, b: f64) -> Result<(f64, f64)> {
    if !(z.im > 0.0) {
        return invalid(format!("point {z} is not in the upper half-plane"));
    }
    Ok((b / z.im, 0.0))
}

/// Pointwise `|γ*a^b − a^b − dσ|` with `ρ_b(γ, ·) = e^{iσ}`, evaluated from
/// closed forms (`dγ/dz = (cz+d)⁻²`, `dσ = 2b d arg(cz+d)`).
pub fn connection_equivariance_residual(g: &Moebius, z: Complex64, b: f64) -> Result<f64> {
    let w = g.apply(z)?;
    let j = g.denominator(z);
    let dg = (j * j).inv();
    let pull = (b / w.im * dg.re, -b / w.im * dg.im);
    let a = constant_connection(z, b)?;
    let q = Complex64::new(g.c as f64, 0.0) / j;
    let dsigma = (2.0 * b * q.im, 2.0 * b * q.re);
    Ok(((pull.0 - a.0 - dsigma.0).powi(2) + (pull.1 - a.1 - dsigma.1).powi(2)).sqrt())
}

/// Maximum of `|Ψ(γz) − ρ_b(γ, z) Ψ(z)|` over the sample points.
pub fn section_equivariance_residual<F>(f: F, g: &Moebius, zs: &[Complex64], b: f64) -> Result<f64>
where
    F: Fn(Complex64) -> Complex64,
{
    let mut worst = 0.0f64;
    for &z in zs {
        let rho = automorphy_factor(g, z, b)?.phase;
        worst = worst.max((f(g.apply(z)?) - rho * f(z)).norm());
    }
    Ok(worst)
}

/// Discrete gauge transform: `ψ ↦ gψ` on nodes and `α ↦ α + dθ` on edges,
/// where `g = e^{iθ}` and `dθ` on an edge `a → b` is `arg(g_b ḡ_a)`.
pub fn gauge_transform(mesh: &TruncatedMesh, psi: &[Complex64], alpha: &[f64], g: &[Complex64]) -> Result<(Vec<Complex64>, Vec<f64>)> {
    if psi.len() != mesh.nodes.len() || g.len() != mesh.nodes.len() || alpha.len() != mesh.edges.len() {
        return invalid("gauge_transform: array lengths do not match the mesh");
    }
    if let Some(v) = g.iter().find(|v| (v.norm() - 1.0).abs() > 1e-12) {
        return invalid(format!("gauge function is not unimodular (|g| = {})", v.norm()));
    }
    let psi2 = psi.iter().zip(g).map(|(p, g)| p * g).collect();
    let alpha2 = mesh.edges.iter().zip(alpha).map(|(e, a)| a + (g[e.b] * g[e.a].conj()).arg()).collect();
    Ok((psi2, alpha2))
}

/// `(1/2π) ∫ da` from edge values of a connection (radians, one per global
/// edge, oriented `a → b`). Each triangle contributes its circulation reduced
/// to `(−π, π]`.
pub fn degree_from_flux(mesh: &TruncatedMesh, edge_values: &[f64]) -> Result<f64> {
    if edge_values.len() != mesh.edges.len() {
        return invalid("degree_from_flux: one value per edge required");
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let total: f64 = mesh
        .tris
        .iter()
        .map(|t| {
            let c: f64 = (0..3).map(|k| t.sign[k] * edge_values[t.e[k]]).sum();
            c - two_pi * (c / two_pi).round()
        })
        .sum();
    Ok(total / two_pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conversion_examples() {
        let s6 = CongruenceSurface::new(6).unwrap();
        let (b, k) = weight_degree_convert(&s6, 12).unwrap();
        assert_eq!((b, k), (1.0, 2.0));
        let s3 = CongruenceSurface::new(3).unwrap();
        let bd = BundleData::new(&s3, 1).unwrap();
        assert_eq!(bd.b_exact, (1, 2));
        assert!(bd.is_embedded_case());
        assert!(matches!(bd.require_integer_b(), Err(Error::ModelGuard(_))));
        let s2 = CongruenceSurface::new(2).unwrap();
        assert_eq!(weight_degree_convert(&s2, 2).unwrap(), (2.0, 4.0));
        assert_eq!(degree_from_weight(&s2, Ratio::from_integer(4)).unwrap(), 2);
        assert_eq!(degree_from_weight(&s6, Ratio::from_integer(2)).unwrap(), 12);
        assert!(degree_from_weight(&s3, Ratio::new(1, 3)).is_err());
    }

    #[test]
    fn automorphy_examples() {
        let z = Complex64::new(0.3, 1.1);
        assert_eq!(automorphy_factor(&Moebius::IDENTITY, z, 1.0).unwrap().phase, Complex64::new(1.0, 0.0));
        assert_eq!(automorphy_factor(&Moebius::translation(5), z, 3.0).unwrap().phase, Complex64::new(1.0, 0.0));
        let r = automorphy_factor(&Moebius::S, Complex64::new(0.0, 1.0), 1.0).unwrap().phase;
        assert!((r + 1.0).norm() < 1e-15);
        assert!(automorphy_factor(&Moebius::S, Complex64::new(0.0, -1.0), 1.0).is_err());
    }

    #[test]
    fn cocycle_and_connection_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let g1 = Moebius::random_member(2, 2, &mut rng);
            let g2 = Moebius::random_member(2, 2, &mut rng);
            let z = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(0.2..3.0));
            for b in 1..=8 {
                assert!(cocycle_residual(&g1, &g2, z, b as f64).unwrap() < 1e-12);
            }
            let r = connection_equivariance_residual(&g1, z, 2.0).unwrap();
            assert!(r < 1e-9 * (1.0 + 1.0 / z.im), "{r}");
        }
        assert_eq!(connection_equivariance_residual(&Moebius::translation(4), Complex64::new(0.1, 2.0), 1.0).unwrap(), 0.0);
    }
}
