//! Abrikosov functionals on the ground space K, the co-closed correction
//! `η` of the connection, harmonic 1-forms, and the leading-order branch
//! formulas in the rescaled normalization (`κ²r − b` is the bifurcation
//! parameter).
//!
//! Brackets are `⟨f⟩ = ∫ f ω / |Σ|` with the lumped quadrature over the
//! truncated mesh and the exact untruncated area; sections decay
//! exponentially, so nothing is lost beyond the caps.

use std::collections::VecDeque;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{pcg, Cholesky, Csr};
use crate::mesh::{unit_pow, TruncatedMesh};
use crate::solver::GLState;

/// Largest ground-space dimension handled by [`beta_min_max`].
pub const MAX_K_DIM: usize = 16;

/// Accepted deviation of `⟨|ξ|²⟩` from one in [`solve_eta`].
pub const NORMALIZATION_TOL: f64 = 1e-6;

const POISSON_TOL: f64 = 1e-10;

/// `(⟨|ξ|²⟩, ⟨|ξ|⁴⟩)`.
pub fn brackets(xi: &[Complex64], mesh: &TruncatedMesh) -> (f64, f64) {
    let (mut s2, mut s4) = (0.0, 0.0);
    for (v, n) in xi.iter().zip(&mesh.nodes) {
        let a = v.norm_sqr();
        s2 += n.mass * a;
        s4 += n.mass * a * a;
    }
    (s2 / mesh.area_exact(), s4 / mesh.area_exact())
}

/// Result of [`beta_min_max`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AbrikosovReport {
    pub beta: f64,
    pub beta_plus: f64,
    pub kappa_c: f64,
    pub kappa_c_plus: f64,
    /// `(⟨|e_k|²⟩, ⟨|e_k|⁴⟩)` for each basis vector.
    pub brackets: Vec<(f64, f64)>,
    /// Coefficients of the minimizing and maximizing unit directions.
    pub minimizer: Vec<Complex64>,
    pub maximizer: Vec<Complex64>,
}

impl AbrikosovReport {
    /// `Σ c_k e_k` as nodal values.
    pub fn direction(basis: &[Vec<Complex64>], coeffs: &[Complex64]) -> Vec<Complex64> {
        let n = basis.first().map_or(0, |v| v.len());
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (e, c) in basis.iter().zip(coeffs) {
            for (o, v) in out.iter_mut().zip(e) {
                *o += c * v;
            }
        }
        out
    }
}

/// `Q(c) = ⟨|Σ c_k e_k|⁴⟩` through the tensor
/// `T_{ijkl} = ⟨ē_i e_j ē_k e_l⟩`.
pub struct QuarticForm {
    d: usize,
    t: Vec<Complex64>,
}

impl QuarticForm {
    pub fn new(basis: &[Vec<Complex64>], mesh: &TruncatedMesh) -> Self {
        let d = basis.len();
        let mut t = vec![Complex64::new(0.0, 0.0); d * d * d * d];
        let area = mesh.area_exact();
        let mut pair = vec![Complex64::new(0.0, 0.0); d * d];
        for (i, node) in mesh.nodes.iter().enumerate() {
            let w = node.mass / area;
            if w == 0.0 {
                continue;
            }
            for a in 0..d {
                for b in 0..d {
                    pair[a * d + b] = basis[a][i].conj() * basis[b][i];
                }
            }
            for ab in 0..d * d {
                let p = pair[ab] * w;
                if p == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for cd in 0..d * d {
                    t[ab * d * d + cd] += p * pair[cd];
                }
            }
        }
        QuarticForm { d, t }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn idx(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.d + j) * self.d + k) * self.d + l
    }

    pub fn value(&self, c: &[Complex64]) -> f64 {
        let d = self.d;
        let mut s = Complex64::new(0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                let cij = c[i].conj() * c[j];
                for k in 0..d {
                    for l in 0..d {
                        s += self.t[self.idx(i, j, k, l)] * cij * c[k].conj() * c[l];
                    }
                }
            }
        }
        s.re
    }

    /// Real gradient `G` with `dQ = Re Σ Ḡ_k dc_k`.
    pub fn gradient(&self, c: &[Complex64]) -> Vec<Complex64> {
        let d = self.d;
        (0..d)
            .map(|k| {
                let mut s = Complex64::new(0.0, 0.0);
                for j in 0..d {
                    for m in 0..d {
                        for l in 0..d {
                            s += self.t[self.idx(k, j, m, l)] * c[j] * c[m].conj() * c[l];
                        }
                    }
                }
                4.0 * s
            })
            .collect()
    }
}

fn normalize(c: &mut [Complex64]) {
    let n = c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    for v in c.iter_mut() {
        *v /= n;
    }
}

/// Projected-gradient descent of `sign · Q` on the unit sphere from `start`.
fn sphere_descent(q: &QuarticForm, start: &[Complex64], sign: f64) -> (f64, Vec<Complex64>) {
    let mut c = start.to_vec();
    normalize(&mut c);
    let mut f = sign * q.value(&c);
    let mut step = 0.1;
    for _ in 0..5000 {
        let g: Vec<Complex64> = q.gradient(&c).into_iter().map(|v| v * sign).collect();
        let radial: f64 = c.iter().zip(&g).map(|(a, b)| (a.conj() * b).re).sum();
        let tan: Vec<Complex64> = g.iter().zip(&c).map(|(gv, cv)| gv - cv * radial).collect();
        let gn2: f64 = tan.iter().map(|v| v.norm_sqr()).sum();
        if gn2.sqrt() < 1e-13 {
            break;
        }
        let mut accepted = false;
        step *= 2.0;
        for _ in 0..60 {
            let mut trial: Vec<Complex64> = c.iter().zip(&tan).map(|(a, t)| a - t * step).collect();
            normalize(&mut trial);
            let ft = sign * q.value(&trial);
            if ft <= f - 1e-4 * step * gn2 {
                c = trial;
                f = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (sign * f, c)
}

/// Phase-fix so the largest coefficient is real and positive.
fn fix_phase(c: &mut [Complex64]) {
    if let Some(big) = c.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())) {
        let p = big.conj() / big.norm();
        for v in c.iter_mut() {
            *v *= p;
        }
    }
}

/// β and β₊ over the unit sphere of K spanned by a bracket-orthonormal basis.
pub fn beta_min_max(basis: &[Vec<Complex64>], mesh: &TruncatedMesh) -> Result<AbrikosovReport> {
    if basis.is_empty() {
        return Err(Error::ModelGuard("no bifurcation (K trivial)".into()));
    }
    let d = basis.len();
    if d > MAX_K_DIM {
        return invalid(format!("ground space of dimension {d} exceeds the supported {MAX_K_DIM}"));
    }
    let n = mesh.nodes.len();
    if basis.iter().any(|v| v.len() != n) {
        return invalid("basis vectors must carry one value per mesh node");
    }
    let area = mesh.area_exact();
    for i in 0..d {
        for j in 0..d {
            let g: Complex64 = basis[i].iter().zip(&basis[j]).zip(&mesh.nodes).map(|((a, b), nd)| a.conj() * b * nd.mass).sum::<Complex64>() / area;
            let target = if i == j { 1.0 } else { 0.0 };
            if (g - target).norm() > 1e-6 {
                return invalid(format!("basis is not bracket-orthonormal: ⟨e_{i}, e_{j}⟩ = {g}"));
            }
        }
    }
    let brackets_k = basis.iter().map(|v| brackets(v, mesh)).collect();
    let q = QuarticForm::new(basis, mesh);
    let (beta, beta_plus, mut minimizer, mut maximizer) = if d == 1 {
        let one = vec![Complex64::new(1.0, 0.0)];
        let v = q.value(&one);
        (v, v, one.clone(), one)
    } else {
        let mut starts: Vec<Vec<Complex64>> = (0..d).map(|k| (0..d).map(|j| Complex64::new(if j == k { 1.0 } else { 0.0 }, 0.0)).collect()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0xab21);
        for _ in 0..(4 * d).max(12) {
            starts.push((0..d).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect());
        }
        let mut lo = (f64::INFINITY, Vec::new());
        let mut hi = (f64::NEG_INFINITY, Vec::new());
        for s in &starts {
            let a = sphere_descent(&q, s, 1.0);
            if a.0 < lo.0 {
                lo = a;
            }
            let b = sphere_descent(&q, s, -1.0);
            if b.0 > hi.0 {
                hi = b;
            }
        }
        (lo.0, hi.0, lo.1, hi.1)
    };
    fix_phase(&mut minimizer);
    fix_phase(&mut maximizer);
    if !(beta > 1.0) {
        return Err(Error::Numerical(format!("β = {beta} violates β > 1; the basis is not a decaying ground space")));
    }
    Ok(AbrikosovReport { beta, beta_plus, kappa_c: kappa_c(beta)?, kappa_c_plus: kappa_c(beta_plus)?, brackets: brackets_k, minimizer, maximizer })
}

/// `κ_c = √(½(1 − 1/β))`.
pub fn kappa_c(beta: f64) -> Result<f64> {
    if !(beta > 1.0) || !beta.is_finite() {
        return invalid(format!("β = {beta}: β > 1 required"));
    }
    Ok((0.5 * (1.0 - 1.0 / beta)).sqrt())
}

/// Geometry shared by the scalar Poisson problem and the 1-form assembly.
struct ScalarComplex {
    /// Real cotangent Laplacian (Neumann on caps).
    k0: Csr<f64>,
    mass: Vec<f64>,
    /// Cap boundary length per node, in sheet coordinates.
    cap_length: Vec<f64>,
    cap_height: f64,
}

impl ScalarComplex {
    fn new(mesh: &TruncatedMesh) -> Self {
        let n = mesh.nodes.len();
        let mut t = Vec::with_capacity(4 * mesh.edges.len());
        let mut cap_length = vec![0.0; n];
        for e in &mesh.edges {
            t.push((e.a, e.a, e.weight));
            t.push((e.b, e.b, e.weight));
            t.push((e.a, e.b, -e.weight));
            t.push((e.b, e.a, -e.weight));
            if e.cap {
                let (dx, _) = cap_edge_dx(mesh, e.tris[0], e.a, e.b);
                cap_length[e.a] += 0.5 * dx.abs();
                cap_length[e.b] += 0.5 * dx.abs();
            }
        }
        ScalarComplex { k0: Csr::from_triplets(n, t), mass: mesh.masses(), cap_length, cap_height: mesh.level as f64 * mesh.cusp_height }
    }

    /// Solve `K0 φ = rhs` on the mean-zero subspace; `rhs` is first made
    /// compatible. The result has zero mass-weighted mean.
    fn solve(&self, mut rhs: Vec<f64>) -> Result<(Vec<f64>, usize)> {
        let total: f64 = rhs.iter().sum();
        let msum: f64 = self.mass.iter().sum();
        for (r, m) in rhs.iter_mut().zip(&self.mass) {
            *r -= m * total / msum;
        }
        let n = rhs.len();
        let shifted = self.k0.add_scaled(&Csr::diagonal(n, &self.mass), 1e-2);
        let chol = Cholesky::new(&shifted)?;
        let project = |v: &mut Vec<f64>| {
            let s: f64 = v.iter().sum();
            for x in v.iter_mut() {
                *x -= s / n as f64;
            }
        };
        let out = pcg(
            |x| self.k0.matvec(x),
            |r| {
                let mut z = chol.solve(r);
                project(&mut z);
                z
            },
            &rhs,
            POISSON_TOL,
            20_000,
        )?;
        let mut phi = out.x;
        let mean: f64 = phi.iter().zip(&self.mass).map(|(p, m)| p * m).sum::<f64>() / msum;
        for p in phi.iter_mut() {
            *p -= mean;
        }
        Ok((phi, out.iterations))
    }
}

/// Sheet-coordinate `Δx` of the cap edge `a → b` inside its triangle, and
/// the triangle's orientation sign for the edge.
fn cap_edge_dx(mesh: &TruncatedMesh, tri: usize, a: usize, b: usize) -> (f64, f64) {
    let t = &mesh.tris[tri];
    for k in 0..3 {
        let (p, q) = (t.v[k], t.v[(k + 1) % 3]);
        if (p, q) == (a, b) || (p, q) == (b, a) {
            let dx = t.pos[(k + 1) % 3][0] - t.pos[k][0];
            let s = t.sign[k];
            return (s * dx, s);
        }
    }
    (0.0, 1.0)
}

/// Orientation sign of edge `e` in triangle `t`.
fn tri_sign(mesh: &TruncatedMesh, t: usize, e: usize) -> f64 {
    let tri = &mesh.tris[t];
    (0..3).find(|&k| tri.e[k] == e).map_or(0.0, |k| tri.sign[k])
}

/// Solve `d₁ d₁ᵀ λ = r` over the triangles with the cap edges held fixed.
/// The operator has the constants as kernel; `r` must sum to zero and the
/// first triangle is grounded.
fn dual_solve(mesh: &TruncatedMesh, r: &[f64]) -> Result<Vec<f64>> {
    let nt = mesh.tris.len();
    let mut trip = Vec::with_capacity(4 * mesh.edges.len());
    for (i, e) in mesh.edges.iter().enumerate() {
        if e.cap || e.tris.contains(&usize::MAX) {
            continue;
        }
        let [t1, t2] = e.tris;
        let s = tri_sign(mesh, t1, i) * tri_sign(mesh, t2, i);
        for (p, q, v) in [(t1, t1, 1.0), (t2, t2, 1.0), (t1, t2, s), (t2, t1, s)] {
            if p > 0 && q > 0 {
                trip.push((p - 1, q - 1, v));
            }
        }
    }
    let chol = Cholesky::new(&Csr::from_triplets(nt - 1, trip))?;
    let mut out = vec![0.0];
    out.extend(chol.solve(&r[1..]));
    Ok(out)
}

/// Solution of the co-closed problem `dη = f ω`, `d*η = 0`.
#[derive(Clone, Debug)]
pub struct EtaSolution {
    /// Edge values `∫_e η` (orientation `a → b`).
    pub eta: Vec<f64>,
    /// Potential with `Δ_hyp φ = f` behind the initial guess, mass-weighted
    /// mean zero.
    pub phi: Vec<f64>,
    /// Circulation of `η` around each triangle.
    pub d_eta: Vec<f64>,
    /// Value of the source beyond the caps.
    pub cusp_source: f64,
    pub cg_iterations: usize,
}

/// Co-closed `η` with `dη = f ω` for a nodal source `f` that equals
/// `cusp_source` beyond the caps. The cusp part enters through the exact
/// flux `∂_y φ = −f_c / y` at the cap. Each triangle circulation equals
/// `A_T` times the vertex-averaged source, less one uniform shift that makes
/// the total match the cap circulation; `η` is Hodge-orthogonal to the
/// harmonic forms.
pub fn solve_eta_source(mesh: &TruncatedMesh, f: &[f64], cusp_source: f64) -> Result<EtaSolution> {
    if f.len() != mesh.nodes.len() {
        return invalid("source must carry one value per mesh node");
    }
    let sc = ScalarComplex::new(mesh);
    let yc = sc.cap_height;
    let rhs: Vec<f64> = (0..f.len()).map(|i| -sc.mass[i] * f[i] - cusp_source * sc.cap_length[i] / yc).collect();
    let (phi, iterations) = sc.solve(rhs)?;
    let mut sum = vec![0.0; mesh.edges.len()];
    let mut count = vec![0u8; mesh.edges.len()];
    for t in &mesh.tris {
        let [p0, p1, p2] = t.pos;
        let a2 = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]);
        let w = [phi[t.v[0]], phi[t.v[1]], phi[t.v[2]]];
        let gx = (w[0] * (p1[1] - p2[1]) + w[1] * (p2[1] - p0[1]) + w[2] * (p0[1] - p1[1])) / a2;
        let gy = (w[0] * (p2[0] - p1[0]) + w[1] * (p0[0] - p2[0]) + w[2] * (p1[0] - p0[0])) / a2;
        let rot = [-gy, gx];
        for k in 0..3 {
            let (p, q) = (t.pos[k], t.pos[(k + 1) % 3]);
            let v = rot[0] * (q[0] - p[0]) + rot[1] * (q[1] - p[1]);
            sum[t.e[k]] += t.sign[k] * v;
            count[t.e[k]] += 1;
        }
    }
    let mut eta: Vec<f64> = mesh
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if e.cap {
                // η = −∂_yφ dx = f_c dx / y on the cap line
                let (dx, _) = cap_edge_dx(mesh, e.tris[0], e.a, e.b);
                cusp_source * dx / yc
            } else {
                sum[i] / count[i].max(1) as f64
            }
        })
        .collect();
    // The averaged field satisfies dη = f ω only to first order. Correct it
    // by the least-squares change of the interior edges that makes every
    // triangle circulation exact, then restore co-closedness.
    let circulation = |eta: &[f64]| -> Vec<f64> { mesh.tris.iter().map(|t| (0..3).map(|k| t.sign[k] * eta[t.e[k]]).sum()).collect() };
    let mut target: Vec<f64> = mesh.tris.iter().map(|t| t.area * (f[t.v[0]] + f[t.v[1]] + f[t.v[2]]) / 3.0).collect();
    // interior edges cancel in the sum, leaving the cap circulation
    let cap_total: f64 = circulation(&eta).iter().sum();
    let flux_area: f64 = mesh.tris.iter().map(|t| t.area).sum();
    let excess = (target.iter().sum::<f64>() - cap_total) / flux_area;
    for (v, t) in target.iter_mut().zip(&mesh.tris) {
        *v -= excess * t.area;
    }
    let defect: Vec<f64> = target.iter().zip(circulation(&eta)).map(|(t, c)| t - c).collect();
    let lambda = dual_solve(mesh, &defect)?;
    for (i, e) in mesh.edges.iter().enumerate() {
        if !e.cap {
            eta[i] += e.tris.iter().filter(|&&t| t != usize::MAX).map(|&t| tri_sign(mesh, t, i) * lambda[t]).sum::<f64>();
        }
    }
    let mut div = vec![0.0; mesh.nodes.len()];
    for (e, v) in mesh.edges.iter().zip(&eta) {
        div[e.a] += e.weight * v;
        div[e.b] -= e.weight * v;
    }
    let (theta, _) = sc.solve(div)?;
    for (e, v) in mesh.edges.iter().zip(eta.iter_mut()) {
        *v += theta[e.b] - theta[e.a];
    }
    let forms = harmonic_forms(mesh)?;
    for (c, h) in harmonic_coefficients(&eta, &forms, mesh).into_iter().zip(&forms) {
        for (v, hv) in eta.iter_mut().zip(h) {
            *v -= c * hv;
        }
    }
    let d_eta = circulation(&eta);
    Ok(EtaSolution { eta, phi, d_eta, cusp_source, cg_iterations: iterations })
}

/// The correction `η` for a normalized ground state: source `½(1 − |ξ|²)`.
pub fn solve_eta(xi: &[Complex64], mesh: &TruncatedMesh) -> Result<EtaSolution> {
    if xi.len() != mesh.nodes.len() {
        return invalid("ξ must carry one value per mesh node");
    }
    let (s2, _) = brackets(xi, mesh);
    if (s2 - 1.0).abs() > NORMALIZATION_TOL {
        return invalid(format!("⟨|ξ|²⟩ = {s2}: the source has nonzero mean (|⟨|ξ|²⟩ − 1| ≤ {NORMALIZATION_TOL} required)"));
    }
    let f: Vec<f64> = xi.iter().map(|v| 0.5 * (1.0 - v.norm_sqr())).collect();
    solve_eta_source(mesh, &f, 0.5)
}

/// `(‖dη‖²/|Σ|, ¼(⟨|ξ|⁴⟩ − 1))`. The cusps beyond the caps contribute
/// `f_c²(|Σ| − Σ A_T)` exactly.
pub fn curvature_identity(sol: &EtaSolution, xi: &[Complex64], mesh: &TruncatedMesh) -> (f64, f64) {
    let area = mesh.area_exact();
    let inner: f64 = sol.d_eta.iter().zip(&mesh.tris).map(|(d, t)| d * d / t.area).sum();
    let cusp = sol.cusp_source * sol.cusp_source * (area - mesh.flux_area());
    let (_, s4) = brackets(xi, mesh);
    ((inner + cusp) / area, 0.25 * (s4 - 1.0))
}

/// `(⟨ξ, 2iη·∇_{a^b}ξ⟩/|Σ|, ½(⟨|ξ|²⟩² − ⟨|ξ|⁴⟩))`.
pub fn pairing_identity(eta: &[f64], xi: &[Complex64], mesh: &TruncatedMesh, b: i64) -> (f64, f64) {
    let lhs: f64 = mesh
        .edges
        .iter()
        .zip(eta)
        .map(|(e, &h)| {
            let l = unit_pow(e.link, b);
            -2.0 * e.weight * h * (xi[e.a].conj() * l.conj() * xi[e.b]).im
        })
        .sum();
    let (s2, s4) = brackets(xi, mesh);
    (lhs / mesh.area_exact(), 0.5 * (s2 * s2 - s4))
}

/// `R = 1/(2κ²) + (1 − 1/(2κ²)) β`.
#[allow(non_snake_case)]
pub fn coefficient_R(beta: f64, kappa: f64) -> f64 {
    let k2 = kappa * kappa;
    0.5 / k2 + (1.0 - 0.5 / k2) * beta
}

/// Leading-order `s²` and whether a branch exists on this side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Amplitude {
    pub s2: f64,
    pub valid: bool,
}

/// `s² = (κ²r − b)/((κ² − ½)β + ½)`, valid when `s² ≥ 0` and
/// `(κ − √(b/r))(κ − κ_c) > 0`.
pub fn s_squared(r: f64, kappa: f64, b: f64, beta: f64) -> Amplitude {
    let k2 = kappa * kappa;
    let s2 = (k2 * r - b) / ((k2 - 0.5) * beta + 0.5);
    let kc = kappa_c(beta).unwrap_or(f64::NAN);
    let side = (kappa - (b / r).sqrt()) * (kappa - kc);
    let valid = s2.is_finite() && s2 >= 0.0 && (side > 0.0 || s2 == 0.0);
    Amplitude { s2, valid }
}

/// `E_normal = ½(κ²r²/2 + b²)|Σ|`.
pub fn normal_energy(r: f64, kappa: f64, b: f64, area: f64) -> f64 {
    0.5 * (kappa * kappa * r * r / 2.0 + b * b) * area
}

/// `(E_normal, ΔE)` with `ΔE = −(|Σ|/4)(κ²r − b)²/((κ² − ½)β + ½)`.
pub fn energy_expansion(r: f64, kappa: f64, b: f64, beta: f64, area: f64) -> (f64, f64) {
    let k2 = kappa * kappa;
    let de = -0.25 * area * (k2 * r - b).powi(2) / ((k2 - 0.5) * beta + 0.5);
    (normal_energy(r, kappa, b, area), de)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundKind {
    /// Branch energy ≥ bound.
    Lower,
    /// Branch energy ≤ bound.
    Upper,
}

/// Energy bounds of the branch when K is degenerate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EnergyBounds {
    pub e_normal: f64,
    /// `E_normal + ΔE(β)`; a lower bound for `κ ≥ 1/√2`, an upper one below.
    pub beta_bound: f64,
    pub beta_kind: BoundKind,
    /// `E_normal + ΔE(β₊)`, an upper bound, when `κ² ≥ ½`.
    pub beta_plus_upper: Option<f64>,
    pub kappa_c_plus: f64,
}

pub fn energy_bounds(r: f64, kappa: f64, b: f64, beta: f64, beta_plus: f64, area: f64) -> Result<EnergyBounds> {
    if beta_plus < beta {
        return invalid(format!("β₊ = {beta_plus} below β = {beta}"));
    }
    let (e_normal, de) = energy_expansion(r, kappa, b, beta, area);
    let kappa_c_plus = kappa_c(beta_plus)?;
    let beta_kind = if kappa >= std::f64::consts::FRAC_1_SQRT_2 { BoundKind::Lower } else { BoundKind::Upper };
    let beta_plus_upper = (kappa * kappa >= 0.5).then(|| e_normal + energy_expansion(r, kappa, b, beta_plus, area).1);
    Ok(EnergyBounds { e_normal, beta_bound: e_normal + de, beta_kind, beta_plus_upper, kappa_c_plus })
}

/// Closed, co-closed edge 1-forms orthonormal under `Σ W_e α_e β_e`, one
/// pair per handle; empty in genus zero.
///
/// Each cusp is closed off by a cone vertex, a tree–cotree decomposition of
/// the closed surface yields the cohomology generators, and the exact part
/// is removed with a Neumann Poisson solve.
pub fn harmonic_forms(mesh: &TruncatedMesh) -> Result<Vec<Vec<f64>>> {
    let n = mesh.nodes.len();
    let ne = mesh.edges.len();
    let m = mesh.cusp_count();
    // edges: real, then cone edges (node → cusp vertex n + c)
    let mut ends: Vec<(usize, usize)> = mesh.edges.iter().map(|e| (e.a, e.b)).collect();
    let mut cone = vec![usize::MAX; n];
    for (c, cap) in mesh.caps.iter().enumerate() {
        for &i in cap {
            cone[i] = ends.len();
            ends.push((i, n + c));
        }
    }
    // faces as (edge, sign) triples: real, then cone faces
    let mut faces: Vec<[(usize, f64); 3]> = mesh.tris.iter().map(|t| [(t.e[0], t.sign[0]), (t.e[1], t.sign[1]), (t.e[2], t.sign[2])]).collect();
    for (i, e) in mesh.edges.iter().enumerate() {
        if e.cap {
            let (_, s) = cap_edge_dx(mesh, e.tris[0], e.a, e.b);
            // opposite orientation to the real triangle: traverse the cap edge
            // backwards, then a → cone → b (or the reverse)
            let face = if s > 0.0 { [(i, -1.0), (cone[e.a], 1.0), (cone[e.b], -1.0)] } else { [(i, 1.0), (cone[e.b], 1.0), (cone[e.a], -1.0)] };
            faces.push(face);
        }
    }
    let nv = n + m;
    let nedge = ends.len();
    let mut edge_faces = vec![Vec::with_capacity(2); nedge];
    for (f, face) in faces.iter().enumerate() {
        for &(e, _) in face {
            edge_faces[e].push(f);
        }
    }
    if edge_faces.iter().any(|f| f.len() != 2) {
        return Err(Error::Mesh("capped surface is not closed".into()));
    }
    let genus2 = nedge as i64 - (nv as i64 - 1) - (faces.len() as i64 - 1);
    // primal BFS tree
    let mut adj = vec![Vec::new(); nv];
    for (e, &(a, b)) in ends.iter().enumerate() {
        adj[a].push((b, e));
        adj[b].push((a, e));
    }
    let mut in_tree = vec![false; nedge];
    let mut seen = vec![false; nv];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        for &(w, e) in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                in_tree[e] = true;
                queue.push_back(w);
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Mesh("mesh is not connected".into()));
    }
    // dual BFS tree over the remaining edges, recording parents
    let nf = faces.len();
    let mut parent_edge = vec![usize::MAX; nf];
    let mut order = Vec::with_capacity(nf);
    let mut fseen = vec![false; nf];
    let mut in_cotree = vec![false; nedge];
    fseen[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(f) = queue.pop_front() {
        order.push(f);
        for &(e, _) in &faces[f] {
            if in_tree[e] || in_cotree[e] {
                continue;
            }
            let g = if edge_faces[e][0] == f { edge_faces[e][1] } else { edge_faces[e][0] };
            if !fseen[g] {
                fseen[g] = true;
                in_cotree[e] = true;
                parent_edge[g] = e;
                queue.push_back(g);
            }
        }
    }
    let generators: Vec<usize> = (0..nedge).filter(|&e| !in_tree[e] && !in_cotree[e]).collect();
    if generators.len() as i64 != genus2 || genus2 < 0 {
        return Err(Error::Internal(format!("tree–cotree left {} generators, expected {genus2}", generators.len())));
    }
    let sc = ScalarComplex::new(mesh);
    let mut forms: Vec<Vec<f64>> = Vec::with_capacity(generators.len());
    for &gen in &generators {
        let mut w = vec![0.0; nedge];
        w[gen] = 1.0;
        // leaves first: each face fixes its parent edge
        for &f in order.iter().rev() {
            let pe = parent_edge[f];
            if pe == usize::MAX {
                continue;
            }
            let mut s = 0.0;
            let mut sp = 0.0;
            for &(e, sign) in &faces[f] {
                if e == pe {
                    sp = sign;
                } else {
                    s += sign * w[e];
                }
            }
            w[pe] = -s / sp;
        }
        // restrict to the real edges and remove the exact part: d*(dφ) = −K0 φ
        let mut alpha: Vec<f64> = w[..ne].to_vec();
        let mut div = vec![0.0; n];
        for (e, a) in mesh.edges.iter().zip(&alpha) {
            div[e.a] += e.weight * a;
            div[e.b] -= e.weight * a;
        }
        let (phi, _) = sc.solve(div)?;
        for (e, a) in mesh.edges.iter().zip(alpha.iter_mut()) {
            *a += phi[e.b] - phi[e.a];
        }
        forms.push(alpha);
    }
    // orthonormalize under the Hodge pairing, twice for stability
    let ip = |a: &[f64], b: &[f64]| -> f64 { mesh.edges.iter().zip(a).zip(b).map(|((e, x), y)| e.weight * x * y).sum() };
    for j in 0..forms.len() {
        for _pass in 0..2 {
            for i in 0..j {
                let c = ip(&forms[i], &forms[j]);
                let (head, tail) = forms.split_at_mut(j);
                for (t, h) in tail[0].iter_mut().zip(&head[i]) {
                    *t -= c * h;
                }
            }
        }
        let nrm = ip(&forms[j], &forms[j]).sqrt();
        if !(nrm > 1e-12) {
            return Err(Error::Numerical("harmonic form with vanishing norm".into()));
        }
        for t in forms[j].iter_mut() {
            *t /= nrm;
        }
    }
    Ok(forms)
}

/// `B_kl = ⟨η_k, |ξ|² η_l⟩` with the Hodge pairing and edge-averaged `|ξ|²`.
pub fn b_matrix(forms: &[Vec<f64>], xi: &[Complex64], mesh: &TruncatedMesh) -> Vec<Vec<f64>> {
    let d = forms.len();
    let w: Vec<f64> = mesh.edges.iter().map(|e| e.weight * 0.5 * (xi[e.a].norm_sqr() + xi[e.b].norm_sqr())).collect();
    (0..d).map(|k| (0..d).map(|l| w.iter().zip(&forms[k]).zip(&forms[l]).map(|((w, a), b)| w * a * b).sum()).collect()).collect()
}

/// Coefficients `t_k = Σ W_e α_e η_{k,e}` of an edge field on orthonormal forms.
pub fn harmonic_coefficients(alpha: &[f64], forms: &[Vec<f64>], mesh: &TruncatedMesh) -> Vec<f64> {
    forms.iter().map(|f| mesh.edges.iter().zip(alpha).zip(f).map(|((e, a), h)| e.weight * a * h).sum()).collect()
}

/// One point of the leading-order branch.
#[allow(non_snake_case)]
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchPoint {
    pub s: f64,
    pub r: f64,
    pub R: f64,
    pub t: Vec<f64>,
    pub s2_predicted: f64,
    pub e_normal: f64,
    pub de_predicted: f64,
    pub de_measured: Option<f64>,
    pub beta: f64,
    pub kappa_c: f64,
    pub valid: bool,
    #[serde(skip)]
    pub eta: Vec<f64>,
}

pub const BRANCH_CSV_HEADER: [&str; 9] = ["s", "r", "s2_predicted", "E_normal", "dE_predicted", "dE_measured", "beta", "kappa_c", "valid_flag"];

impl BranchPoint {
    /// Leading-order prediction at `r`; `t` starts at zero (one entry per form).
    pub fn predict(r: f64, kappa: f64, b: f64, beta: f64, area: f64, forms: usize, eta: Vec<f64>) -> Result<Self> {
        if !(r > 0.0) || !(kappa > 0.0) {
            return invalid(format!("r = {r}, κ = {kappa}: both must be positive"));
        }
        let amp = s_squared(r, kappa, b, beta);
        let (e_normal, de) = energy_expansion(r, kappa, b, beta, area);
        Ok(BranchPoint {
            s: amp.s2.max(0.0).sqrt(),
            r,
            R: coefficient_R(beta, kappa),
            t: vec![0.0; forms],
            s2_predicted: amp.s2,
            e_normal,
            de_predicted: de,
            de_measured: None,
            beta,
            kappa_c: kappa_c(beta)?,
            valid: amp.valid,
            eta,
        })
    }

    /// Row in [`BRANCH_CSV_HEADER`] order; a missing measurement is NaN.
    pub fn row(&self) -> [f64; 9] {
        [
            self.s,
            self.r,
            self.s2_predicted,
            self.e_normal,
            self.de_predicted,
            self.de_measured.unwrap_or(f64::NAN),
            self.beta,
            self.kappa_c,
            if self.valid { 1.0 } else { 0.0 },
        ]
    }
}

/// Orientation signs of the cap edges of each cusp, so the cap circulation
/// of an edge field is `Σ s_e α_e`.
pub fn cap_loops(mesh: &TruncatedMesh) -> Vec<Vec<(usize, f64)>> {
    let mut loops = vec![Vec::new(); mesh.cusp_count()];
    for (i, e) in mesh.edges.iter().enumerate() {
        if e.cap {
            let (_, s) = cap_edge_dx(mesh, e.tris[0], e.a, e.b);
            if let Some(c) = mesh.nodes[e.a].cap {
                loops[c].push((i, s));
            }
        }
    }
    loops
}

/// Remove the cap circulation of an edge field along the cap edges.
pub fn project_cap_circulation(alpha: &mut [f64], loops: &[Vec<(usize, f64)>]) {
    for lp in loops {
        if lp.is_empty() {
            continue;
        }
        let c: f64 = lp.iter().map(|&(e, s)| s * alpha[e]).sum();
        for &(e, s) in lp {
            alpha[e] -= s * c / lp.len() as f64;
        }
    }
}

/// Seed `ψ = sξ`, `α = s²η` (cap circulation removed, caps of `ψ` zeroed).
pub fn leading_order_state(s: f64, xi: &[Complex64], eta: &[f64], mesh: &TruncatedMesh, b: i64, kappa: f64, r: f64) -> Result<GLState> {
    if xi.len() != mesh.nodes.len() || eta.len() != mesh.edges.len() {
        return invalid("ξ and η must match the mesh");
    }
    let psi = xi.iter().zip(&mesh.nodes).map(|(v, nd)| if nd.cap.is_some() { Complex64::new(0.0, 0.0) } else { v * s }).collect();
    let mut alpha: Vec<f64> = eta.iter().map(|h| s * s * h).collect();
    project_cap_circulation(&mut alpha, &cap_loops(mesh));
    GLState::new(psi, alpha, kappa, r, b)
}
