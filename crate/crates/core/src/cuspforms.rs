//! Cusp forms: dimension counts, Poincaré series, the spectral ground space
//! and Fourier–Whittaker coefficients in a cusp.
//!
//! The Poincaré series of cusp `i` at a point `z` with class `C ∈ SL(2,ℤ)` is
//!
//! `P_C(z) = Σ_{M ≡ ±C (mod N)} (Im(Mz)/N)^b e^{2πi Mz/N} ρ_b(M, z)⁻¹`,
//!
//! summed over `Γ_∞ \ {M}`, i.e. over coprime bottom rows `(c, d)` of the
//! right residue class. With `C = γ_i` it is the equivariant series `ξ_i` on
//! ℍ; with `C = γ_i g_s` it is `ρ_b(g_s, w)⁻¹ ξ_i(g_s w)`, the value carried
//! by sheet `s` of a mesh at local coordinate `w`.

use num_complex::Complex64;
use num_integer::Integer;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::bundle::automorphy_phase;
use crate::error::{invalid, Error, Result};
use crate::group::{CongruenceSurface, Moebius};
use crate::linalg::cdot_weighted;
use crate::mesh::TruncatedMesh;
use crate::spectra::{DiscreteOperatorPair, SpectralResult};
use crate::whittaker::whittaker_w;

/// Relative half-width of the eigenvalue cluster taken as the ground space.
pub const CLUSTER_WIDTH: f64 = 0.05;

fn check_weight(k: i64) -> Result<()> {
    if k <= 0 || k % 2 != 0 {
        return invalid(format!("weight k = {k}: a positive even integer is required"));
    }
    Ok(())
}

/// `g` for `k = 2` and `(k−1)(g−1) + km/2` for `k ≥ 4`.
pub fn dim_cusp_forms(surface: &CongruenceSurface, k: i64) -> Result<u64> {
    check_weight(k)?;
    let (g, m) = (surface.genus as i64, surface.cusp_count as i64);
    let d = if k == 2 { g } else { (k - 1) * (g - 1) + k * m / 2 };
    Ok(d.max(0) as u64)
}

/// The holomorphic cusp-form count `(k−1)(g−1) + (k/2−1)m` (`g` for `k = 2`).
pub fn dim_cusp_forms_classical(surface: &CongruenceSurface, k: i64) -> Result<u64> {
    check_weight(k)?;
    let (g, m) = (surface.genus as i64, surface.cusp_count as i64);
    let d = if k == 2 { g } else { (k - 1) * (g - 1) + (k / 2 - 1) * m };
    Ok(d.max(0) as u64)
}

/// A truncated Poincaré sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoincareValue {
    pub value: Complex64,
    /// Upper bound on the modulus of the omitted terms (`∞` when the series
    /// does not converge absolutely, i.e. `b = 1`).
    pub tail: f64,
    pub terms: usize,
}

fn check_series_weight(b: f64) -> Result<i64> {
    if !b.is_finite() || b.fract() != 0.0 || b < 1.0 {
        return invalid(format!("Poincaré series need an integer b ≥ 1, got b = {b}"));
    }
    if b > 64.0 {
        return invalid(format!("b = {b} is outside the supported range b ≤ 64"));
    }
    Ok(b as i64)
}

/// Bound on `Σ (Im(Mz)/N)^b` over the classes with `|cz + d| > bound`.
///
/// The points `cz + d` of one residue class form a translate of the lattice
/// `N(ℤz + ℤ)` with cell area `N² y` and diameter at most `D = N(|z| + 1)`;
/// comparing the sum with the integral over the cells gives
/// `(y/N)^b (2π/(N²y)) [R^{2−2b}/(2b−2) + D R^{1−2b}/(2b−1)]` with `R = bound − 2D`.
pub fn poincare_tail(level: u64, z: Complex64, b: i64, bound: f64) -> f64 {
    let n = level as f64;
    let diam = n * (z.norm() + 1.0);
    let r = bound - 2.0 * diam;
    if b <= 1 || r <= 0.0 {
        return f64::INFINITY;
    }
    let bf = b as f64;
    let integral = r.powf(2.0 - 2.0 * bf) / (2.0 * bf - 2.0) + diam * r.powf(1.0 - 2.0 * bf) / (2.0 * bf - 1.0);
    (z.im / n).powf(bf) * 2.0 * std::f64::consts::PI / (n * n * z.im) * integral
}

/// `P_C(z)` over bottom rows with `|cz + d| ≤ bound`.
pub fn poincare_class(level: u64, class: &Moebius, z: Complex64, b: f64, bound: f64) -> Result<PoincareValue> {
    let bi = check_series_weight(b)?;
    if !(z.im > 0.0) || !z.re.is_finite() {
        return invalid(format!("point {z} is not in the upper half-plane"));
    }
    if !(bound >= 1.0) || !bound.is_finite() {
        return invalid(format!("truncation bound {bound}: a finite bound ≥ 1 is required"));
    }
    if class.det() != 1 {
        return invalid(format!("class {:?} is not in SL(2,ℤ)", class.entries()));
    }
    let n = level as i64;
    let nf = level as f64;
    let tau = 2.0 * std::f64::consts::PI;
    // signs giving distinct residue classes ±C
    let signs: &[i64] = if (2 * class.c) % n == 0 && (2 * class.d) % n == 0 { &[1] } else { &[1, -1] };
    let term = |m: &Moebius, w: Complex64| {
        // Mz modulo N
        let mz = if m.c == 0 {
            z + m.b.rem_euclid(n) as f64
        } else {
            let cf = m.c as f64;
            m.a.rem_euclid(m.c * n) as f64 / cf - 1.0 / (cf * w)
        };
        (mz.im / nf).powi(bi as i32)
            * Complex64::from_polar(1.0, tau * mz.re / nf)
            * (-tau * mz.im / nf).exp()
            * automorphy_phase(m.c as f64, m.d as f64, z, b).conj()
    };
    let mut value = Complex64::new(0.0, 0.0);
    let mut terms = 0usize;
    let c_max = (bound / z.im).floor() as i64;
    for c in 0..=c_max {
        for &s in signs {
            if (c - s * class.c).rem_euclid(n) != 0 {
                continue;
            }
            let d0 = (s * class.d).rem_euclid(n);
            let (d_lo, d_hi) = if c == 0 {
                (1, 1)
            } else {
                let cy = c as f64 * z.im;
                let r = (bound * bound - cy * cy).max(0.0).sqrt();
                let centre = -(c as f64) * z.re;
                ((centre - r).ceil() as i64, (centre + r).floor() as i64)
            };
            // first d ≥ d_lo with d ≡ d0
            let mut d = d_lo + (d0 - d_lo).rem_euclid(n);
            while d <= d_hi {
                if c == 0 && (d - d0).rem_euclid(n) != 0 {
                    break;
                }
                if c.gcd(&d) == 1 {
                    let w = Complex64::new(c as f64 * z.re + d as f64, c as f64 * z.im);
                    if w.norm() <= bound {
                        let m = lift(c, d, s, class, n)?;
                        value += term(&m, w);
                        terms += 1;
                    }
                }
                d += n;
            }
        }
    }
    Ok(PoincareValue { value, tail: poincare_tail(level, z, bi, bound), terms })
}

/// The matrix `[[a, b], [c, d]] ≡ s·C (mod N)` of determinant one.
fn lift(c: i64, d: i64, s: i64, class: &Moebius, n: i64) -> Result<Moebius> {
    // a d − b c = 1
    let e = d.extended_gcd(&c);
    let (a, b) = (e.x * e.gcd, -e.y * e.gcd);
    for t in 0..n {
        let (at, bt) = (a + t * c, b + t * d);
        if (at - s * class.a).rem_euclid(n) == 0 && (bt - s * class.b).rem_euclid(n) == 0 {
            return Ok(Moebius { a: at, b: bt, c, d });
        }
    }
    Err(Error::Internal(format!("no lift of bottom row ({c}, {d}) to the class {:?}", class.entries())))
}

fn check_cusp(surface: &CongruenceSurface, cusp: usize) -> Result<()> {
    if cusp >= surface.cusps.len() {
        return invalid(format!("cusp index {cusp} out of range (m = {})", surface.cusps.len()));
    }
    Ok(())
}

/// `ξ_i(z)` on ℍ.
pub fn poincare_series(surface: &CongruenceSurface, cusp: usize, z: Complex64, b: f64, bound: f64) -> Result<PoincareValue> {
    check_cusp(surface, cusp)?;
    poincare_class(surface.level, &surface.cusps[cusp].chart, z, b, bound)
}

/// `ρ_b(g_s, w)⁻¹ ξ_i(g_s w)` for the coset representative `g_s` of sheet `s`.
pub fn poincare_series_local(surface: &CongruenceSurface, cusp: usize, sheet: usize, w: Complex64, b: f64, bound: f64) -> Result<PoincareValue> {
    check_cusp(surface, cusp)?;
    if sheet >= surface.coset_reps.len() {
        return invalid(format!("sheet {sheet} out of range"));
    }
    let class = surface.cusps[cusp].chart * surface.coset_reps[sheet];
    poincare_class(surface.level, &class, w, b, bound)
}

/// Nodal values of `ξ_i` on a mesh, with the largest tail bound.
pub fn poincare_nodal(surface: &CongruenceSurface, mesh: &TruncatedMesh, cusp: usize, b: f64, bound: f64) -> Result<(Vec<Complex64>, f64)> {
    if surface.level != mesh.level {
        return invalid(format!("surface level {} does not match mesh level {}", surface.level, mesh.level));
    }
    let vals = (0..mesh.nodes.len())
        .into_par_iter()
        .map(|i| {
            if mesh.nodes[i].cap.is_some() {
                return Ok(PoincareValue { value: Complex64::new(0.0, 0.0), tail: 0.0, terms: 0 });
            }
            let (s, w) = mesh.node_local(i);
            poincare_series_local(surface, cusp, s, w, b, bound)
        })
        .collect::<Result<Vec<_>>>()?;
    let tail = vals.iter().map(|v| v.tail).fold(0.0, f64::max);
    Ok((vals.into_iter().map(|v| v.value).collect(), tail))
}

/// Values of a section on the horizontal line `ζ_n = (n + ½)/L + iy` of a
/// width-normalized cusp cylinder.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CuspFormSample {
    /// Weight `k = 2b`.
    pub weight: i64,
    pub b: f64,
    pub cusp: usize,
    pub points: Vec<Complex64>,
    pub values: Vec<Complex64>,
    /// Truncation bound on `|cz + d|` (zero for mesh samples).
    pub bound: f64,
    /// Tail bound of each value (zero for mesh samples).
    pub tails: Vec<f64>,
}

impl CuspFormSample {
    /// Wraps values given on the line `ζ_n = (n + ½)/L + iy`.
    pub fn from_line(b: f64, cusp: usize, y: f64, values: Vec<Complex64>) -> Self {
        let l = values.len();
        CuspFormSample { weight: (2.0 * b).round() as i64, b, cusp, points: line_points(y, l), tails: vec![0.0; l], values, bound: 0.0 }
    }

    /// CSV rows `x, y, Re, Im, tail_bound`.
    pub fn rows(&self) -> Vec<[f64; 5]> {
        self.points.iter().zip(&self.values).zip(&self.tails).map(|((p, v), t)| [p.re, p.im, v.re, v.im, *t]).collect()
    }
}

fn line_points(y: f64, count: usize) -> Vec<Complex64> {
    (0..count).map(|n| Complex64::new((n as f64 + 0.5) / count as f64, y)).collect()
}

/// `ξ_i` in its own cusp chart along `ζ_n = (n + ½)/L + iy`: the value at `ζ`
/// is `ρ_b(γ_i⁻¹, Nζ)⁻¹ ξ_i(γ_i⁻¹ Nζ)`.
pub fn sample_poincare_line(surface: &CongruenceSurface, cusp: usize, y: f64, count: usize, b: f64, bound: f64) -> Result<CuspFormSample> {
    check_cusp(surface, cusp)?;
    if count == 0 || !(y > 0.0) {
        return invalid(format!("line sample needs count ≥ 1 and y > 0 (got {count}, {y})"));
    }
    let n = surface.level as f64;
    let points = line_points(y, count);
    // chart · chart⁻¹ = identity class
    let vals = points.par_iter().map(|p| poincare_class(surface.level, &Moebius::IDENTITY, p * n, b, bound)).collect::<Result<Vec<_>>>()?;
    Ok(CuspFormSample {
        weight: (2.0 * b).round() as i64,
        b,
        cusp,
        points,
        values: vals.iter().map(|v| v.value).collect(),
        bound,
        tails: vals.iter().map(|v| v.tail).collect(),
    })
}

/// Nodal section of a mesh along the same line of cusp `cusp`.
pub fn sample_mesh_line(mesh: &TruncatedMesh, values: &[Complex64], b: i64, cusp: usize, y: f64, count: usize) -> Result<CuspFormSample> {
    let vals = mesh.cusp_line_values(cusp, y, count, values, b)?;
    Ok(CuspFormSample::from_line(b as f64, cusp, y, vals))
}

/// `A_k` of `F(ζ) = Σ_k A_k W_{b·sgn k, b−½}(4π|k|y) e^{2πikx}` for `k` in
/// `k_range`; the `k = 0` entry is the raw mean of the line.
pub fn fourier_coefficients(sample: &CuspFormSample, k_range: std::ops::RangeInclusive<i64>) -> Result<Vec<(i64, Complex64)>> {
    let l = sample.values.len();
    if l == 0 || sample.points.len() != l {
        return invalid("sample has no values or mismatched points");
    }
    let y = sample.points[0].im;
    for (n, p) in sample.points.iter().enumerate() {
        let x = (n as f64 + 0.5) / l as f64;
        if (p.im - y).abs() > 1e-12 || (p.re - x).abs() > 1e-12 {
            return invalid("sample points are not the line (n + ½)/L + iy");
        }
    }
    let (k_lo, k_hi) = (*k_range.start(), *k_range.end());
    if k_lo > k_hi || 2 * k_hi.abs().max(k_lo.abs()) >= l as i64 {
        return invalid(format!("k range {k_lo}..={k_hi} needs more than {l} samples"));
    }
    let mut buf = sample.values.clone();
    FftPlanner::new().plan_fft_forward(l).process(&mut buf);
    let b = sample.b;
    (k_lo..=k_hi)
        .map(|k| {
            let c = buf[k.rem_euclid(l as i64) as usize] * Complex64::from_polar(1.0 / l as f64, -std::f64::consts::PI * k as f64 / l as f64);
            if k == 0 {
                return Ok((k, c));
            }
            let w = whittaker_w(b * k.signum() as f64, b - 0.5, 4.0 * std::f64::consts::PI * k.abs() as f64 * y)?;
            if w.abs() < 1e-300 {
                return invalid(format!("W_{{b·sgn k, b−½}}(4π|k|y) underflows at k = {k}, y = {y}; use a lower line"));
            }
            Ok((k, c / w))
        })
        .collect()
}

/// Nodal basis of the eigencluster `|λ − b| ≤ 0.05 b`, orthonormal for
/// `⟨u, v⟩ = ∫ ū v / area`.
pub fn ground_space_basis(op: &DiscreteOperatorPair, result: &SpectralResult, expected: usize, area: f64) -> Result<Vec<Vec<Complex64>>> {
    let b = op.b as f64;
    let idx: Vec<usize> = (0..result.eigenvalues.len()).filter(|&i| (result.eigenvalues[i] - b).abs() <= CLUSTER_WIDTH * b.max(1e-12)).collect();
    if idx.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: idx.len(),
            detail: format!(
                "eigenvalues within {:.0}% of b = {b}: {:?}; the mesh may be too coarse",
                100.0 * CLUSTER_WIDTH,
                idx.iter().map(|&i| result.eigenvalues[i]).collect::<Vec<_>>()
            ),
        });
    }
    let s = area.sqrt();
    Ok(idx.iter().map(|&i| op.to_nodal(&result.eigenvectors[i].iter().map(|v| v * s).collect::<Vec<_>>())).collect())
}

/// Gram matrix `⟨e_j, e_k⟩` of nodal sections with the bracket `∫ · / area`.
pub fn gram(basis: &[Vec<Complex64>], masses: &[f64], area: f64) -> Vec<Vec<Complex64>> {
    basis.iter().map(|u| basis.iter().map(|v| cdot_weighted(u, v, masses) / area).collect()).collect()
}

/// Fraction of the mass of `v` inside the span of an orthonormal `basis`.
pub fn retained_fraction(basis: &[Vec<Complex64>], v: &[Complex64], masses: &[f64], area: f64) -> f64 {
    let total = cdot_weighted(v, v, masses).re / area;
    let kept: f64 = basis.iter().map(|e| (cdot_weighted(e, v, masses) / area).norm_sqr()).sum();
    kept / total
}
