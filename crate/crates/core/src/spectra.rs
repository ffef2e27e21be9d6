//! The magnetic Laplacian `−Δ_{a^b}` on truncated meshes, its low spectrum,
//! and the exact cylinder-model oracles.
//!
//! The stiffness is the Euclidean covariant Dirichlet form
//! `Σ_e W_e |L̄_e ψ_b − ψ_a|²` with cotangent weights `W_e` and links
//! `L_e = e^{i∫_e a^b}`; the hyperbolic metric only enters through the
//! lumped mass `∫ φ_i y⁻²`. Cap nodes carry a Dirichlet condition.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::BundleData;
use crate::error::{invalid, Error, Result};
use crate::linalg::{cdot_weighted, hermitian_eigen, Cholesky, Csr};
use crate::mesh::{cot_at, edge_integral, lumped_mass, orient, TruncatedMesh};
use crate::symbolic;

/// Boundary treatment of cap nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Dirichlet,
    Neumann,
}

/// Triangle of a [`CellComplex`] with the transports `0 → 1` and `0 → 2`.
#[derive(Clone, Debug)]
pub struct CellTri {
    pub v: [usize; 3],
    pub pos: [[f64; 2]; 3],
    pub transport: [Complex64; 2],
}

/// The data the kinetic form needs, independent of where the mesh came from.
#[derive(Clone, Debug)]
pub struct CellComplex {
    pub mass: Vec<f64>,
    /// Nodes with a Dirichlet condition.
    pub fixed: Vec<bool>,
    /// `(a, b, W, L)` with `L` the link `a → b`.
    pub edges: Vec<(usize, usize, f64, Complex64)>,
    pub tris: Vec<CellTri>,
}

impl CellComplex {
    /// Cells of a truncated mesh with the given edge links (`a → b`).
    pub fn from_mesh(mesh: &TruncatedMesh, links: &[Complex64]) -> Self {
        let edges = mesh.edges.iter().zip(links).map(|(e, &l)| (e.a, e.b, e.weight, l)).collect();
        let oriented = |ei: usize, sign: f64| if sign > 0.0 { links[ei] } else { links[ei].conj() };
        let tris =
            mesh.tris.iter().map(|t| CellTri { v: t.v, pos: t.pos, transport: [oriented(t.e[0], t.sign[0]), oriented(t.e[2], t.sign[2]).conj()] }).collect();
        CellComplex { mass: mesh.masses(), fixed: mesh.nodes.iter().map(|n| n.cap.is_some()).collect(), edges, tris }
    }

    pub fn node_count(&self) -> usize {
        self.mass.len()
    }

    /// `Σ_T A_T |D_T ψ|²` with `D = ∂ₓ + i∂_y` of the P1 interpolant of the
    /// values transported to vertex 0.
    pub fn dbar_energy(&self, psi: &[Complex64]) -> f64 {
        self.tris
            .par_iter()
            .map(|t| {
                let w = [psi[t.v[0]], t.transport[0].conj() * psi[t.v[1]], t.transport[1].conj() * psi[t.v[2]]];
                let [p0, p1, p2] = t.pos;
                let a2 = 2.0 * orient(p0, p1, p2);
                // gradient of the linear interpolant
                let gx = (w[0] * (p1[1] - p2[1]) + w[1] * (p2[1] - p0[1]) + w[2] * (p0[1] - p1[1])) / a2;
                let gy = (w[0] * (p2[0] - p1[0]) + w[1] * (p0[0] - p2[0]) + w[2] * (p1[0] - p0[0])) / a2;
                let d = gx + Complex64::i() * gy;
                0.5 * a2 * d.norm_sqr()
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum()
    }

    /// `Σ_e W_e |L̄_e ψ_b − ψ_a|²`.
    pub fn kinetic_energy(&self, psi: &[Complex64]) -> f64 {
        self.edges.iter().map(|&(a, b, w, l)| w * (l.conj() * psi[b] - psi[a]).norm_sqr()).sum()
    }
}

/// Edge-by-edge triplets of the covariant stiffness restricted to the
/// unknowns given by `dof`.
pub fn kinetic_triplets(edges: &[(usize, usize, f64, Complex64)], dof: &[Option<usize>]) -> Vec<(usize, usize, Complex64)> {
    edges
        .par_chunks(4096)
        .map(|chunk| {
            let mut t = Vec::with_capacity(4 * chunk.len());
            for &(a, b, w, l) in chunk {
                if let Some(i) = dof[a] {
                    t.push((i, i, Complex64::new(w, 0.0)));
                }
                if let Some(j) = dof[b] {
                    t.push((j, j, Complex64::new(w, 0.0)));
                }
                if let (Some(i), Some(j)) = (dof[a], dof[b]) {
                    t.push((i, j, -w * l.conj()));
                    t.push((j, i, -w * l));
                }
            }
            t
        })
        .collect::<Vec<_>>()
        .concat()
}

/// Stiffness, lumped mass and the equivariant degree-of-freedom map.
#[derive(Clone, Debug)]
pub struct DiscreteOperatorPair {
    pub level: u64,
    pub degree: u64,
    pub b: i64,
    pub boundary: Boundary,
    pub stiffness: Csr<Complex64>,
    /// Lumped (diagonal) mass on the unknowns.
    pub mass: Vec<f64>,
    /// Mesh node of each unknown. Paired boundary copies are already one
    /// node, identified with the automorphy phase folded into the links.
    pub dof_nodes: Vec<usize>,
    pub node_dof: Vec<Option<usize>>,
}

/// Assemble `−Δ_{a^b}` with Dirichlet caps.
pub fn assemble(mesh: &TruncatedMesh, bundle: &BundleData) -> Result<DiscreteOperatorPair> {
    assemble_with(mesh, bundle, Boundary::Dirichlet)
}

pub fn assemble_with(mesh: &TruncatedMesh, bundle: &BundleData, boundary: Boundary) -> Result<DiscreteOperatorPair> {
    if bundle.level != mesh.level {
        return invalid(format!("bundle level {} does not match mesh level {}", bundle.level, mesh.level));
    }
    let b = bundle.require_integer_b()?;
    let cells = CellComplex::from_mesh(mesh, &mesh.links(b));
    let mut op = assemble_cells(&cells, b, boundary);
    op.level = mesh.level;
    op.degree = bundle.degree;
    Ok(op)
}

/// Assembly on any cell complex.
pub fn assemble_cells(cells: &CellComplex, b: i64, boundary: Boundary) -> DiscreteOperatorPair {
    let n = cells.node_count();
    let mut node_dof = vec![None; n];
    let mut dof_nodes = Vec::new();
    for i in 0..n {
        if boundary == Boundary::Neumann || !cells.fixed[i] {
            node_dof[i] = Some(dof_nodes.len());
            dof_nodes.push(i);
        }
    }
    let stiffness = Csr::from_triplets(dof_nodes.len(), kinetic_triplets(&cells.edges, &node_dof));
    let mass = dof_nodes.iter().map(|&i| cells.mass[i]).collect();
    DiscreteOperatorPair { level: 0, degree: 0, b, boundary, stiffness, mass, dof_nodes, node_dof }
}

impl DiscreteOperatorPair {
    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    pub fn mass_matrix(&self) -> Csr<f64> {
        Csr::diagonal(self.dim(), &self.mass)
    }

    pub fn rayleigh(&self, v: &[Complex64]) -> f64 {
        let kv = self.stiffness.matvec(v);
        let num: Complex64 = v.iter().zip(&kv).map(|(a, b)| a.conj() * b).sum();
        num.re / cdot_weighted(v, v, &self.mass).re
    }

    /// Unknowns → nodal values (zero at Dirichlet nodes).
    pub fn to_nodal(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.node_dof.len()];
        for (k, &i) in self.dof_nodes.iter().enumerate() {
            out[i] = v[k];
        }
        out
    }

    pub fn from_nodal(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.dof_nodes.iter().map(|&i| v[i]).collect()
    }

    /// `‖Kv − λMv‖_{M⁻¹} / ‖v‖_M`.
    pub fn residual(&self, v: &[Complex64], lambda: f64) -> f64 {
        let kv = self.stiffness.matvec(v);
        let r: f64 = kv.iter().zip(v).zip(&self.mass).map(|((k, x), m)| (k - lambda * m * x).norm_sqr() / m).sum();
        (r / cdot_weighted(v, v, &self.mass).re).sqrt()
    }
}

/// Solver settings for [`lowest_eigenpairs_with`].
#[derive(Clone, Debug)]
pub struct EigenOptions {
    /// Shift σ of `(K − σM)⁻¹`; defaults to `b/2` (and `−1` when `b = 0`).
    pub shift: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Block size; defaults to `max(count + 8, 2·count)`.
    pub block: Option<usize>,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { shift: None, tol: 1e-8, max_iter: 500, seed: 0x5eed, block: None }
    }
}

#[derive(Clone, Debug)]
pub struct SpectralResult {
    pub eigenvalues: Vec<f64>,
    /// Mass-orthonormal eigenvectors on the unknowns of the operator.
    pub eigenvectors: Vec<Vec<Complex64>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub shift: f64,
}

pub const MAX_EIGENPAIRS: usize = 20;

pub fn lowest_eigenpairs(op: &DiscreteOperatorPair, count: usize) -> Result<SpectralResult> {
    lowest_eigenpairs_with(op, count, &EigenOptions::default())
}

/// M-orthonormalize the columns (modified Gram–Schmidt, two passes);
/// dependent columns are replaced by random ones.
fn m_orthonormalize(x: &mut [Vec<Complex64>], mass: &[f64], rng: &mut ChaCha8Rng) {
    for j in 0..x.len() {
        for _attempt in 0..3 {
            let before = cdot_weighted(&x[j], &x[j], mass).re.sqrt();
            for _pass in 0..2 {
                for i in 0..j {
                    let c = cdot_weighted(&x[i], &x[j], mass);
                    let (head, tail) = x.split_at_mut(j);
                    for (t, h) in tail[0].iter_mut().zip(&head[i]) {
                        *t -= c * h;
                    }
                }
            }
            let nrm = cdot_weighted(&x[j], &x[j], mass).re.sqrt();
            if nrm > 1e-10 * before && nrm > 0.0 {
                for t in x[j].iter_mut() {
                    *t /= nrm;
                }
                break;
            }
            for t in x[j].iter_mut() {
                *t = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
    }
}

/// The `count` smallest eigenpairs of `Kv = λMv` by block shift-invert
/// subspace iteration with Rayleigh–Ritz.
pub fn lowest_eigenpairs_with(op: &DiscreteOperatorPair, count: usize, opts: &EigenOptions) -> Result<SpectralResult> {
    if count == 0 || count > MAX_EIGENPAIRS {
        return invalid(format!("count = {count}: between 1 and {MAX_EIGENPAIRS} eigenpairs supported"));
    }
    let n = op.dim();
    if n < count {
        return invalid(format!("operator has {n} unknowns, fewer than the {count} requested"));
    }
    let p = opts.block.unwrap_or((count + 8).max(2 * count)).max(count).min(n);
    let shift = opts.shift.unwrap_or(if op.b > 0 { op.b as f64 / 2.0 } else { -1.0 });
    let shifted = op.stiffness.add_scaled(&Csr::diagonal(n, &op.mass.iter().map(|&m| Complex64::new(m, 0.0)).collect::<Vec<_>>()), Complex64::new(-shift, 0.0));
    let chol = Cholesky::new(&shifted).map_err(|e| Error::Numerical(format!("shift σ = {shift} is not below the spectrum: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<Complex64>> =
        (0..p).map(|_| (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()).collect();
    let mut residuals = vec![f64::INFINITY; count];
    for it in 1..=opts.max_iter {
        let rhs: Vec<Vec<Complex64>> = x.iter().map(|v| v.iter().zip(&op.mass).map(|(a, m)| a * m).collect()).collect();
        let mut y = chol.solve_many(&rhs);
        m_orthonormalize(&mut y, &op.mass, &mut rng);
        let ky: Vec<Vec<Complex64>> = y.iter().map(|v| op.stiffness.matvec(v)).collect();
        let h: Vec<Vec<Complex64>> = (0..p).map(|i| (0..p).map(|j| y[i].iter().zip(&ky[j]).map(|(a, b)| a.conj() * b).sum()).collect()).collect();
        let (theta, u) = hermitian_eigen(&h)?;
        x = (0..p)
            .map(|k| {
                let mut v = vec![Complex64::new(0.0, 0.0); n];
                for (j, yj) in y.iter().enumerate() {
                    let c = u[k][j];
                    for (t, s) in v.iter_mut().zip(yj) {
                        *t += c * s;
                    }
                }
                v
            })
            .collect();
        residuals = (0..count).map(|k| op.residual(&x[k], theta[k])).collect();
        if residuals.iter().all(|&r| r < opts.tol) {
            x.truncate(count);
            return Ok(SpectralResult { eigenvalues: theta[..count].to_vec(), eigenvectors: x, residuals, iterations: it, shift });
        }
    }
    Err(Error::NotConverged { iterations: opts.max_iter, residuals })
}

/// Number of computed eigenvalues below the essential bottom `¼ + b²`.
pub fn multiplicity_below_ess(result: &SpectralResult, b: f64) -> usize {
    result.eigenvalues.iter().filter(|&&l| l < 0.25 + b * b).count()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SpectralReport {
    #[serde(rename = "N")]
    pub level: u64,
    pub degree: u64,
    pub b: f64,
    pub h: f64,
    #[serde(rename = "Y")]
    pub cusp_height: f64,
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub multiplicity_below_ess: usize,
    pub ess_bottom_theory: f64,
}

impl SpectralReport {
    pub fn new(mesh: &TruncatedMesh, bundle: &BundleData, result: &SpectralResult) -> Self {
        SpectralReport {
            level: mesh.level,
            degree: bundle.degree,
            b: bundle.b,
            h: mesh.h,
            cusp_height: mesh.cusp_height,
            eigenvalues: result.eigenvalues.clone(),
            residuals: result.residuals.clone(),
            multiplicity_below_ess: multiplicity_below_ess(result, bundle.b),
            ess_bottom_theory: 0.25 + bundle.b * bundle.b,
        }
    }
}

/// `max_trials |v*Kv − Σ_T A_T|D_T v|² − b v*Mv| / v*Mv` for nodal trial
/// vectors vanishing on the fixed nodes: the defect of the discrete
/// Weitzenböck identity `−Δ_a = ∂''*∂'' + b`.
pub fn weitzenbock_residual(cells: &CellComplex, b: f64, trials: &[Vec<Complex64>]) -> f64 {
    trials
        .iter()
        .map(|v| {
            let m = cdot_weighted(v, v, &cells.mass).re;
            (cells.kinetic_energy(v) - cells.dbar_energy(v) - b * m).abs() / m
        })
        .fold(0.0, f64::max)
}

/// `y^b e^{2πix} e^{−2πy}`.
pub fn exact_cylinder_eigenfunction(z: Complex64, b: f64) -> Result<Complex64> {
    if !(z.im > 0.0) {
        return invalid(format!("point {z} is not in the upper half-plane"));
    }
    let tau = 2.0 * std::f64::consts::PI;
    Ok(z.im.powf(b) * (-tau * z.im).exp() * Complex64::from_polar(1.0, tau * z.re))
}

/// Symbolic check that `(−Δ_{a^b} − b)` annihilates the seed.
pub fn seed_residual_vanishes(b: f64) -> Result<bool> {
    Ok(symbolic::seed_residual(symbolic::rational(b)?).is_zero())
}

/// Verifies symbolically that `−Δ_{a^b} y^{½−ik} = (k² + ¼ + b²) y^{½−ik}`
/// for a symbolic `k` and returns `λ_k`.
pub fn generalized_mode_check(k: f64, b: f64) -> Result<f64> {
    if !(k >= 0.0) {
        return invalid(format!("k = {k}: k ≥ 0 required"));
    }
    let bq = symbolic::rational(b)?;
    let f = symbolic::generalized_mode();
    let lam = symbolic::generalized_eigenvalue(bq);
    let r = symbolic::magnetic_laplacian(&f, bq).add(&f.scale(&lam.neg()));
    if !r.is_zero() {
        return Err(Error::Internal("generalized mode is not an eigenfunction".into()));
    }
    Ok(lam.eval(k).re)
}

/// Uniform triangulation of the periodic strip `[0, 1) × [1, 3]` with
/// spacing `1/n` and the connection `b dx/y`.
#[derive(Clone, Debug)]
pub struct PeriodicStrip {
    pub n: usize,
    pub b: i64,
    pub points: Vec<[f64; 2]>,
    pub cells: CellComplex,
}

impl PeriodicStrip {
    pub fn new(n: usize, b: i64) -> Result<Self> {
        if n < 2 {
            return invalid("strip needs n ≥ 2");
        }
        let ny = 2 * n;
        let h = 1.0 / n as f64;
        let id = |i: usize, j: usize| j * n + (i % n);
        let points: Vec<[f64; 2]> = (0..=ny).flat_map(|j| (0..n).map(move |i| [i as f64 * h, 1.0 + j as f64 * h])).collect();
        let mut mass = vec![0.0; points.len()];
        let mut weight = std::collections::BTreeMap::<(usize, usize), (f64, [f64; 2], [f64; 2])>::new();
        let mut tris = Vec::new();
        let bf = b as f64;
        for j in 0..ny {
            for i in 0..n {
                let p = |di: usize, dj: usize| [(i + di) as f64 * h, 1.0 + (j + dj) as f64 * h];
                for loc in [[(0, 0), (1, 0), (1, 1)], [(0, 0), (1, 1), (0, 1)]] {
                    let v = loc.map(|(di, dj)| id(i + di, j + dj));
                    let pos = loc.map(|(di, dj)| p(di, dj));
                    let lm = lumped_mass(pos, orient(pos[0], pos[1], pos[2]));
                    for m in 0..3 {
                        mass[v[m]] += lm[m];
                        let (a, c) = ((m + 1) % 3, (m + 2) % 3);
                        let (ka, kc, pa, pc) = if v[a] < v[c] { (v[a], v[c], pos[a], pos[c]) } else { (v[c], v[a], pos[c], pos[a]) };
                        let e = weight.entry((ka, kc)).or_insert((0.0, pa, pc));
                        e.0 += 0.5 * cot_at(pos[m], pos[a], pos[c]);
                    }
                    let tr = |q: usize| Complex64::from_polar(1.0, bf * edge_integral(pos[0], pos[q]));
                    tris.push(CellTri { v, pos, transport: [tr(1), tr(2)] });
                }
            }
        }
        let edges = weight.into_iter().map(|((a, c), (w, pa, pc))| (a, c, w, Complex64::from_polar(1.0, bf * edge_integral(pa, pc)))).collect();
        let fixed = points.iter().map(|p| p[1] < 1.0 + 1e-12 || p[1] > 3.0 - 1e-12).collect();
        Ok(PeriodicStrip { n, b, points, cells: CellComplex { mass, fixed, edges, tris } })
    }

    pub fn operator(&self) -> DiscreteOperatorPair {
        assemble_cells(&self.cells, self.b, Boundary::Dirichlet)
    }

    /// Nodal samples of `f`.
    pub fn sample<F: Fn(Complex64) -> Complex64>(&self, f: F) -> Vec<Complex64> {
        self.points.iter().map(|p| f(Complex64::new(p[0], p[1]))).collect()
    }

    /// `‖Kf − bMf‖_{M⁻¹} / ‖f‖_M` on interior nodes for the sampled seed.
    pub fn seed_residual(&self) -> f64 {
        let op = self.operator();
        let f = self.sample(|z| exact_cylinder_eigenfunction(z, self.b as f64).unwrap());
        // boundary values enter as data through the links
        let all = assemble_cells(&self.cells, self.b, Boundary::Neumann);
        let kf = all.stiffness.matvec(&f);
        let mut num = 0.0;
        let mut den = 0.0;
        for &i in &op.dof_nodes {
            let m = self.cells.mass[i];
            num += (kf[i] - self.b as f64 * m * f[i]).norm_sqr() / m;
            den += m * f[i].norm_sqr();
        }
        (num / den).sqrt()
    }
}

/// Symmetric tridiagonal pencil `(K, M)` for the Fourier mode operator
/// `p_k^b = −y²∂_y² + (2πk)² y² − 2b(2πk) y + b²` on `(s, Y)`, Dirichlet at
/// both ends, in `L²(dy/y²)`. Linear elements on a uniform grid in `ln y`.
#[derive(Clone, Debug)]
pub struct CylinderOperator {
    pub k: i64,
    pub b: f64,
    /// Interior nodes.
    pub y: Vec<f64>,
    pub k_diag: Vec<f64>,
    pub k_off: Vec<f64>,
    pub m_diag: Vec<f64>,
    pub m_off: Vec<f64>,
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

pub fn cylinder_operator(k: i64, b: f64, s: f64, y_max: f64, n_points: usize) -> Result<CylinderOperator> {
    if !(s >= 1.0) || !(y_max > s) || n_points < 2 {
        return invalid(format!("cylinder (s, Y, n) = ({s}, {y_max}, {n_points}): need s ≥ 1, Y > s, n ≥ 2"));
    }
    let kk = 2.0 * std::f64::consts::PI * k as f64;
    let (t0, t1) = (s.ln(), y_max.ln());
    let ne = n_points + 1;
    let dt = (t1 - t0) / ne as f64;
    // full (n_points + 2)-node matrices, boundary rows dropped afterwards
    let nn = ne + 1;
    let mut kd = vec![0.0; nn];
    let mut ko = vec![0.0; nn - 1];
    let mut md = vec![0.0; nn];
    let mut mo = vec![0.0; nn - 1];
    for e in 0..ne {
        let ta = t0 + e as f64 * dt;
        for &(g, w) in &GAUSS4 {
            let t = ta + 0.5 * (g + 1.0) * dt;
            let wt = 0.5 * w * dt;
            let y = t.exp();
            let phi = [1.0 - 0.5 * (g + 1.0), 0.5 * (g + 1.0)];
            let dphi = [-1.0 / dt, 1.0 / dt];
            let stiff = wt / y;
            let pot = wt * (kk * y - b).powi(2) / y;
            let mass = wt / y;
            for a in 0..2 {
                for c in 0..2 {
                    let kv = stiff * dphi[a] * dphi[c] + pot * phi[a] * phi[c];
                    let mv = mass * phi[a] * phi[c];
                    if a == c {
                        kd[e + a] += kv;
                        md[e + a] += mv;
                    } else if a == 0 {
                        ko[e] += kv;
                        mo[e] += mv;
                    }
                }
            }
        }
    }
    Ok(CylinderOperator {
        k,
        b,
        y: (1..=n_points).map(|i| (t0 + i as f64 * dt).exp()).collect(),
        k_diag: kd[1..=n_points].to_vec(),
        k_off: ko[1..n_points].to_vec(),
        m_diag: md[1..=n_points].to_vec(),
        m_off: mo[1..n_points].to_vec(),
    })
}

impl CylinderOperator {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Number of eigenvalues below `lambda` (inertia of `K − λM`).
    pub fn count_below(&self, lambda: f64) -> usize {
        let mut count = 0;
        let mut d_prev = 1.0;
        for i in 0..self.len() {
            let mut d = self.k_diag[i] - lambda * self.m_diag[i];
            if i > 0 {
                let o = self.k_off[i - 1] - lambda * self.m_off[i - 1];
                d -= o * o / d_prev;
            }
            if d == 0.0 {
                d = -f64::EPSILON * (1.0 + self.k_diag[i].abs());
            }
            if d < 0.0 {
                count += 1;
            }
            d_prev = d;
        }
        count
    }

    /// The `count` smallest eigenvalues by bisection on the inertia.
    pub fn eigenvalues(&self, count: usize) -> Vec<f64> {
        let count = count.min(self.len());
        let mut hi = 1.0;
        while self.count_below(hi) < count {
            hi *= 2.0;
        }
        (0..count)
            .map(|j| {
                let (mut lo, mut up) = (0.0_f64.min(-1.0), hi);
                while up - lo > 1e-13 * up.abs().max(1.0) {
                    let mid = 0.5 * (lo + up);
                    if self.count_below(mid) > j {
                        up = mid;
                    } else {
                        lo = mid;
                    }
                }
                0.5 * (lo + up)
            })
            .collect()
    }

    fn tri_apply(d: &[f64], o: &[f64], f: &[f64]) -> Vec<f64> {
        let n = d.len();
        (0..n)
            .map(|i| {
                let mut v = d[i] * f[i];
                if i > 0 {
                    v += o[i - 1] * f[i - 1];
                }
                if i + 1 < n {
                    v += o[i] * f[i + 1];
                }
                v
            })
            .collect()
    }

    /// Solve `M x = r` (Thomas algorithm).
    fn mass_solve(&self, r: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut c = vec![0.0; n];
        let mut x = r.to_vec();
        let mut denom = self.m_diag[0];
        x[0] /= denom;
        for i in 1..n {
            c[i - 1] = self.m_off[i - 1] / denom;
            denom = self.m_diag[i] - self.m_off[i - 1] * c[i - 1];
            x[i] = (x[i] - self.m_off[i - 1] * x[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        x
    }

    /// `‖M⁻¹(Kf − λMf)‖_M / ‖f‖_M` for nodal values `f` at the interior nodes.
    pub fn residual(&self, f: &[f64], lambda: f64) -> f64 {
        let kf = Self::tri_apply(&self.k_diag, &self.k_off, f);
        let mf = Self::tri_apply(&self.m_diag, &self.m_off, f);
        let r: Vec<f64> = kf.iter().zip(&mf).map(|(a, b)| a - lambda * b).collect();
        let x = self.mass_solve(&r);
        let num: f64 = x.iter().zip(&r).map(|(a, b)| a * b).sum();
        let den: f64 = f.iter().zip(&mf).map(|(a, b)| a * b).sum();
        (num / den).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::CongruenceSurface;

    #[test]
    fn exact_eigenfunction_value() {
        let v = exact_cylinder_eigenfunction(Complex64::new(0.0, 1.0), 1.0).unwrap();
        assert!((v.re - 1.8674427317079888e-3).abs() < 1e-15 && v.im.abs() < 1e-18);
        assert!(exact_cylinder_eigenfunction(Complex64::new(0.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn generalized_modes() {
        assert_eq!(generalized_mode_check(0.0, 1.0).unwrap(), 1.25);
        assert_eq!(generalized_mode_check(1.0, 0.0).unwrap(), 1.25);
        assert_eq!(generalized_mode_check(0.0, 0.0).unwrap(), 0.25);
        assert!(generalized_mode_check(-1.0, 0.0).is_err());
    }

    #[test]
    fn b_zero_neumann_has_constant_kernel() {
        let s = CongruenceSurface::new(2).unwrap();
        let mesh = TruncatedMesh::new(&s, 5.0, 0.5).unwrap();
        let links = mesh.links(0);
        assert!(links.iter().all(|l| (l - 1.0).norm() < 1e-15));
        let op = assemble_cells(&CellComplex::from_mesh(&mesh, &links), 0, Boundary::Neumann);
        let one = vec![Complex64::new(1.0, 0.0); op.dim()];
        let k1 = op.stiffness.matvec(&one);
        assert!(k1.iter().all(|v| v.norm() < 1e-10));
        assert!(op.stiffness.values.iter().all(|v| v.im == 0.0));
    }

    #[test]
    fn hermitian_on_level_two() {
        let s = CongruenceSurface::new(2).unwrap();
        let mesh = TruncatedMesh::new(&s, 10.0, 0.2).unwrap();
        let bundle = BundleData::new(&s, 2).unwrap();
        let op = assemble(&mesh, &bundle).unwrap();
        assert!(op.stiffness.hermitian_residual() < 1e-12);
        assert!(op.mass.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn cylinder_sturm_count_matches_dense() {
        let c = cylinder_operator(1, 1.0, 1.0, 10.0, 30).unwrap();
        let n = c.len();
        let dense = |d: &[f64], o: &[f64]| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            if i == j {
                                d[i]
                            } else if j == i + 1 {
                                o[i]
                            } else if i == j + 1 {
                                o[j]
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect()
        };
        // M⁻¹ᐟ² K M⁻¹ᐟ² via a dense generalized solve: use the Cholesky of M
        let m = dense(&c.m_diag, &c.m_off);
        let k = dense(&c.k_diag, &c.k_off);
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..j).map(|p| l[i][p] * l[j][p]).sum();
                if i == j {
                    l[i][i] = (m[i][i] - s).sqrt();
                } else {
                    l[i][j] = (m[i][j] - s) / l[j][j];
                }
            }
        }
        // C = L⁻¹ K L⁻ᵀ
        let solve_lower = |b: &[f64]| {
            let mut x = vec![0.0; n];
            for i in 0..n {
                x[i] = (b[i] - (0..i).map(|p| l[i][p] * x[p]).sum::<f64>()) / l[i][i];
            }
            x
        };
        let cols: Vec<Vec<f64>> = (0..n).map(|j| solve_lower(&(0..n).map(|i| k[i][j]).collect::<Vec<_>>())).collect();
        let c_mat: Vec<Vec<f64>> = (0..n).map(|i| solve_lower(&(0..n).map(|j| cols[j][i]).collect::<Vec<_>>())).collect();
        let (vals, _) = crate::linalg::symmetric_eigen(&c_mat).unwrap();
        let bis = c.eigenvalues(5);
        for (a, b) in bis.iter().zip(&vals) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{a} {b}");
        }
    }
}
