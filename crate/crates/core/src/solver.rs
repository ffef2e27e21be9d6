//! Minimization of the rescaled Ginzburg–Landau energy
//! `E_r(ψ, a) = ∫ ½|∇_aψ|² + ½|da|² + (κ²/4)(|ψ|² − r)²` over
//! `a = a^b + α`, with `ψ` nodal (Dirichlet on the caps) and `α` on edges.
//!
//! Discretization: the kinetic term is the covariant cotangent form with
//! links `L_e e^{iα_e}`, the curvature term is `Σ_T F_T²/A_T` with
//! `F_T = bA_T + (dα)_T` and `A_T` the hyperbolic area, and the potential
//! uses the lumped mass. `α` has zero circulation around every cap, so the
//! flux through the truncated cusps stays `b(|Σ| − Σ A_T)`.
//!
//! The optimizer adds the gauge-fixing penalty `(μ/2) Σ_i (d*α)_i²/m_i`,
//! which vanishes at every critical point, and runs preconditioned
//! Polak–Ribière conjugate gradients with a monotone line search.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abrikosov::{cap_loops, project_cap_circulation};
use crate::error::{invalid, Error, Result};
use crate::linalg::{pcg, symmetric_eigen, Cholesky, Csr};
use crate::mesh::TruncatedMesh;
use crate::spectra::{assemble_cells, lowest_eigenpairs, lowest_eigenpairs_with, Boundary, CellComplex, EigenOptions};

/// Unknowns and cached diagnostics of a GL configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GLState {
    /// Nodal values in each node's sheet gauge.
    pub psi: Vec<Complex64>,
    /// Edge integrals of `a − a^b`, orientation `a → b`.
    pub alpha: Vec<f64>,
    pub kappa: f64,
    pub r: f64,
    pub b: i64,
    pub energy: Option<f64>,
    pub section_residual: Option<f64>,
    pub curvature_residual: Option<f64>,
}

impl GLState {
    pub fn new(psi: Vec<Complex64>, alpha: Vec<f64>, kappa: f64, r: f64, b: i64) -> Result<Self> {
        if !(kappa > 0.0) || !(r > 0.0) || !kappa.is_finite() || !r.is_finite() {
            return invalid(format!("κ = {kappa}, r = {r}: both must be positive"));
        }
        Ok(GLState { psi, alpha, kappa, r, b, energy: None, section_residual: None, curvature_residual: None })
    }

    /// The constant-curvature state `(0, a^b)`.
    pub fn normal(mesh: &TruncatedMesh, b: i64, kappa: f64, r: f64) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); mesh.nodes.len()], vec![0.0; mesh.edges.len()], kappa, r, b)
    }

    /// Normal state plus a uniform random perturbation of size `amplitude`
    /// (zero on the caps, `α` without cap circulation).
    pub fn perturbed_normal(mesh: &TruncatedMesh, b: i64, kappa: f64, r: f64, amplitude: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = mesh
            .nodes
            .iter()
            .map(|n| {
                let v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * amplitude;
                if n.cap.is_some() {
                    Complex64::new(0.0, 0.0)
                } else {
                    v
                }
            })
            .collect();
        let mut alpha: Vec<f64> = (0..mesh.edges.len()).map(|_| amplitude * rng.random_range(-1.0..1.0)).collect();
        project_cap_circulation(&mut alpha, &cap_loops(mesh));
        Self::new(psi, alpha, kappa, r, b)
    }

    /// `ψ ↦ e^{iθ}ψ`, `α ↦ α + dθ`.
    pub fn gauge_transform(&self, mesh: &TruncatedMesh, theta: &[f64]) -> Self {
        let mut out = self.clone();
        for (p, t) in out.psi.iter_mut().zip(theta) {
            *p *= Complex64::from_polar(1.0, *t);
        }
        for (a, e) in out.alpha.iter_mut().zip(&mesh.edges) {
            *a += theta[e.b] - theta[e.a];
        }
        out.section_residual = None;
        out.curvature_residual = None;
        out
    }

    /// `⟨|ψ|²⟩` over the exact area.
    pub fn mean_density(&self, mesh: &TruncatedMesh) -> f64 {
        mesh.nodes.iter().zip(&self.psi).map(|(n, p)| n.mass * p.norm_sqr()).sum::<f64>() / mesh.area_exact()
    }
}

/// Kinetic, curvature and potential parts of the discrete energy.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EnergyParts {
    pub kinetic: f64,
    pub curvature: f64,
    pub potential: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.kinetic + self.curvature + self.potential
    }
}

/// `(∂E/∂ψ, ∂E/∂α)` with `dE = Re Σ ḡ_i dψ_i + Σ g_e dα_e`.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub psi: Vec<Complex64>,
    pub alpha: Vec<f64>,
}

/// Mesh data of the energy at fixed `(b, κ, r)`.
pub struct GlModel {
    pub b: i64,
    pub kappa: f64,
    pub r: f64,
    /// `(a, b, W, L^b)`.
    edges: Vec<(usize, usize, f64, Complex64)>,
    /// Edges, orientation signs and hyperbolic area.
    tris: Vec<([usize; 3], [f64; 3], f64)>,
    mass: Vec<f64>,
    fixed: Vec<bool>,
    loops: Vec<Vec<(usize, f64)>>,
    area_exact: f64,
    flux_area: f64,
    mesh_area: f64,
    /// Neumann cotangent Laplacian, used for gauge fixing.
    k0: Csr<f64>,
}

impl GlModel {
    pub fn new(mesh: &TruncatedMesh, b: i64, kappa: f64, r: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(r > 0.0) {
            return invalid(format!("κ = {kappa}, r = {r}: both must be positive"));
        }
        let links = mesh.links(b);
        let edges = mesh.edges.iter().zip(&links).map(|(e, &l)| (e.a, e.b, e.weight, l)).collect();
        let tris = mesh.tris.iter().map(|t| (t.e, t.sign, t.area)).collect();
        let n = mesh.nodes.len();
        let mut trip = Vec::with_capacity(4 * mesh.edges.len());
        for e in &mesh.edges {
            trip.extend([(e.a, e.a, e.weight), (e.b, e.b, e.weight), (e.a, e.b, -e.weight), (e.b, e.a, -e.weight)]);
        }
        Ok(GlModel {
            b,
            kappa,
            r,
            edges,
            tris,
            mass: mesh.masses(),
            fixed: mesh.nodes.iter().map(|nd| nd.cap.is_some()).collect(),
            loops: cap_loops(mesh),
            area_exact: mesh.area_exact(),
            flux_area: mesh.flux_area(),
            mesh_area: mesh.mesh_area(),
            k0: Csr::from_triplets(n, trip),
        })
    }

    /// Same mesh data at another `(κ, r)`.
    pub fn with_parameters(&self, kappa: f64, r: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(r > 0.0) {
            return invalid(format!("κ = {kappa}, r = {r}: both must be positive"));
        }
        Ok(GlModel {
            b: self.b,
            kappa,
            r,
            edges: self.edges.clone(),
            tris: self.tris.clone(),
            mass: self.mass.clone(),
            fixed: self.fixed.clone(),
            loops: self.loops.clone(),
            area_exact: self.area_exact,
            flux_area: self.flux_area,
            mesh_area: self.mesh_area,
            k0: self.k0.clone(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.mass.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn check(&self, s: &GLState) -> Result<()> {
        if s.psi.len() != self.node_count() || s.alpha.len() != self.edge_count() {
            return invalid(format!(
                "state has {} nodal and {} edge values, the mesh {} and {}",
                s.psi.len(),
                s.alpha.len(),
                self.node_count(),
                self.edge_count()
            ));
        }
        Ok(())
    }

    pub fn energy_parts(&self, psi: &[Complex64], alpha: &[f64]) -> EnergyParts {
        let kinetic = 0.5
            * self
                .edges
                .iter()
                .zip(alpha)
                .map(|(&(a, b, w, l), &al)| w * ((l * Complex64::from_polar(1.0, al)).conj() * psi[b] - psi[a]).norm_sqr())
                .sum::<f64>();
        let bf = self.b as f64;
        let curvature = 0.5
            * self
                .tris
                .iter()
                .map(|(e, s, area)| {
                    let f = bf * area + s[0] * alpha[e[0]] + s[1] * alpha[e[1]] + s[2] * alpha[e[2]];
                    f * f / area
                })
                .sum::<f64>();
        let k2 = self.kappa * self.kappa;
        let potential = 0.25 * k2 * psi.iter().zip(&self.mass).map(|(p, m)| m * (p.norm_sqr() - self.r).powi(2)).sum::<f64>();
        EnergyParts { kinetic, curvature, potential }
    }

    /// Discrete energy of the truncated surface.
    pub fn energy(&self, s: &GLState) -> Result<f64> {
        self.check(s)?;
        let p = self.energy_parts(&s.psi, &s.alpha);
        let e = p.total();
        if !e.is_finite() {
            return Err(Error::Numerical(format!("energy is not finite (kinetic {}, curvature {}, potential {})", p.kinetic, p.curvature, p.potential)));
        }
        Ok(e)
    }

    /// Energy of the normal state beyond the caps, where `ψ = 0` and `da = bω`.
    pub fn cusp_correction(&self) -> f64 {
        let bf = self.b as f64;
        let k2 = self.kappa * self.kappa;
        0.5 * bf * bf * (self.area_exact - self.flux_area) + 0.25 * k2 * self.r * self.r * (self.area_exact - self.mesh_area)
    }

    /// Discrete energy plus the analytic cusp completion.
    pub fn completed_energy(&self, s: &GLState) -> Result<f64> {
        Ok(self.energy(s)? + self.cusp_correction())
    }

    pub fn gradient(&self, s: &GLState) -> Result<Gradient> {
        self.check(s)?;
        Ok(self.raw_gradient(&s.psi, &s.alpha))
    }

    fn raw_gradient(&self, psi: &[Complex64], alpha: &[f64]) -> Gradient {
        let n = self.node_count();
        let mut gp = vec![Complex64::new(0.0, 0.0); n];
        let mut ga = vec![0.0; self.edge_count()];
        for (k, (&(a, b, w, l), &al)) in self.edges.iter().zip(alpha).enumerate() {
            let lt = l * Complex64::from_polar(1.0, al);
            let u = lt.conj() * psi[b] - psi[a];
            gp[a] -= w * u;
            gp[b] += w * lt * u;
            ga[k] = w * (u.conj() * psi[a]).im;
        }
        let bf = self.b as f64;
        for (e, s, area) in &self.tris {
            let f = bf * area + s[0] * alpha[e[0]] + s[1] * alpha[e[1]] + s[2] * alpha[e[2]];
            for k in 0..3 {
                ga[e[k]] += s[k] * f / area;
            }
        }
        let k2 = self.kappa * self.kappa;
        for i in 0..n {
            if self.fixed[i] {
                gp[i] = Complex64::new(0.0, 0.0);
            } else {
                gp[i] += k2 * self.mass[i] * (psi[i].norm_sqr() - self.r) * psi[i];
            }
        }
        Gradient { psi: gp, alpha: ga }
    }

    /// Nodal `d*` of an edge field, `Σ ±W_e α_e` (outflow positive).
    pub fn divergence(&self, alpha: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.node_count()];
        for (&(a, b, w, _), &v) in self.edges.iter().zip(alpha) {
            d[a] += w * v;
            d[b] -= w * v;
        }
        d
    }

    /// `(μ/2) Σ (d*α)_i²/m_i` and its gradient.
    fn penalty(&self, alpha: &[f64], mu: f64) -> (f64, Vec<f64>) {
        let div = self.divergence(alpha);
        let p = 0.5 * mu * div.iter().zip(&self.mass).map(|(d, m)| d * d / m).sum::<f64>();
        let g = self.edges.iter().map(|&(a, b, w, _)| mu * w * (div[a] / self.mass[a] - div[b] / self.mass[b])).collect();
        (p, g)
    }

    /// `(section, curvature)` residual norms, normalized by the natural
    /// scales `√|Σ| max(1, κ²r)` and `√|Σ| max(1, b)`.
    pub fn residuals(&self, s: &GLState) -> Result<(f64, f64)> {
        let g = self.gradient(s)?;
        let mut ga = g.alpha;
        self.project_alpha(&mut ga);
        Ok(self.residual_norms(&g.psi, &ga))
    }

    fn residual_norms(&self, gp: &[Complex64], ga: &[f64]) -> (f64, f64) {
        let sec = gp.iter().zip(&self.mass).map(|(g, m)| g.norm_sqr() / m).sum::<f64>().sqrt();
        let cur = ga.iter().map(|g| g * g).sum::<f64>().sqrt();
        let root = self.area_exact.sqrt();
        let k2r = self.kappa * self.kappa * self.r;
        (sec / (root * k2r.max(1.0)), cur / (root * (self.b as f64).abs().max(1.0)))
    }

    fn project_alpha(&self, ga: &mut [f64]) {
        project_cap_circulation(ga, &self.loops);
    }

    /// Gauge-transform so that `α` is exactly co-closed.
    pub fn coulomb_gauge(&self, s: &GLState, mesh: &TruncatedMesh) -> Result<GLState> {
        self.check(s)?;
        let div = self.divergence(&s.alpha);
        // d*(dθ) = −K0 θ, so K0 θ = d*α makes α + dθ co-closed
        let theta = self.neumann_solve(&div)?;
        let mut out = s.gauge_transform(mesh, &theta);
        out.energy = s.energy;
        Ok(out)
    }

    /// `K0 x = rhs` on the mean-zero subspace.
    fn neumann_solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = rhs.len();
        let mut rhs = rhs.to_vec();
        let mean = rhs.iter().sum::<f64>() / n as f64;
        rhs.iter_mut().for_each(|v| *v -= mean);
        let norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let shifted = self.k0.add_scaled(&Csr::diagonal(n, &self.mass), 1e-2);
        let chol = Cholesky::new(&shifted)?;
        let out = pcg(
            |x| self.k0.matvec(x),
            |r| {
                let mut z = chol.solve(r);
                let m = z.iter().sum::<f64>() / n as f64;
                z.iter_mut().for_each(|v| *v -= m);
                z
            },
            &rhs,
            1e-10,
            20_000,
        )?;
        Ok(out.x)
    }

    /// Supercurrent edge values `j_e = Im(ψ̄_a L̄'_e ψ_b)`.
    pub fn supercurrent(&self, s: &GLState) -> Vec<f64> {
        self.edges.iter().zip(&s.alpha).map(|(&(a, b, _, l), &al)| (s.psi[a].conj() * (l * Complex64::from_polar(1.0, al)).conj() * s.psi[b]).im).collect()
    }

    /// `‖d* j‖_{M⁻¹} / √|Σ|` over the free nodes.
    pub fn supercurrent_coclosed_residual(&self, s: &GLState) -> Result<f64> {
        self.check(s)?;
        let div = self.divergence(&self.supercurrent(s));
        let r: f64 = div.iter().zip(&self.mass).zip(&self.fixed).filter(|(_, f)| !**f).map(|((d, m), _)| d * d / m).sum();
        Ok((r / self.area_exact).sqrt())
    }

    /// Fill in the cached diagnostics.
    pub fn annotate(&self, s: &mut GLState) -> Result<()> {
        s.energy = Some(self.energy(s)?);
        let (a, b) = self.residuals(s)?;
        s.section_residual = Some(a);
        s.curvature_residual = Some(b);
        Ok(())
    }
}

/// Settings of [`GlModel::minimize`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinimizeOptions {
    /// Tolerance on both normalized residual norms.
    pub tol: f64,
    pub max_iter: usize,
    /// Steepest-descent restart period.
    pub restart: usize,
    /// Gauge penalty weight `μ`.
    pub penalty: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions { tol: 1e-8, max_iter: 3000, restart: 50, penalty: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

/// One row of the solver trace.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Objective including the gauge penalty, accumulated from the
    /// per-step changes.
    pub energy: f64,
    pub grad_norm_psi: f64,
    pub grad_norm_alpha: f64,
    pub step: f64,
}

pub const TRACE_CSV_HEADER: [&str; 5] = ["iter", "energy", "grad_norm_psi", "grad_norm_alpha", "step"];

#[derive(Clone, Debug)]
pub struct MinimizeOutcome {
    pub state: GLState,
    pub status: Status,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

/// Block-diagonal preconditioner: `(K_b + M)⁻¹` on `ψ` and the inverse of
/// the curvature plus penalty Hessian (regularized by `τW`) on `α`.
struct Preconditioner {
    dof: Vec<Option<usize>>,
    dof_nodes: Vec<usize>,
    psi: Cholesky<Complex64>,
    alpha: Cholesky<f64>,
    loops: Vec<Vec<(usize, f64)>>,
    cinv_s: Vec<Vec<f64>>,
    small_inv: Vec<Vec<f64>>,
}

impl Preconditioner {
    fn new(model: &GlModel, mu: f64) -> Result<Self> {
        let n = model.node_count();
        let cells = CellComplex { mass: model.mass.clone(), fixed: model.fixed.clone(), edges: model.edges.clone(), tris: Vec::new() };
        let op = assemble_cells(&cells, model.b, Boundary::Dirichlet);
        let mdiag: Vec<Complex64> = op.mass.iter().map(|&m| Complex64::new(m, 0.0)).collect();
        let psi = Cholesky::new(&op.stiffness.add_scaled(&Csr::diagonal(op.dim(), &mdiag), Complex64::new(1.0, 0.0)))?;
        let ne = model.edge_count();
        let mut trip = Vec::new();
        for (e, s, area) in &model.tris {
            for i in 0..3 {
                for j in 0..3 {
                    trip.push((e[i], e[j], s[i] * s[j] / area));
                }
            }
        }
        let mut incident: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (k, &(a, b, w, _)) in model.edges.iter().enumerate() {
            incident[a].push((k, w));
            incident[b].push((k, -w));
        }
        for (i, inc) in incident.iter().enumerate() {
            for &(e, we) in inc {
                for &(f, wf) in inc {
                    trip.push((e, f, mu * we * wf / model.mass[i]));
                }
            }
        }
        let wmean = model.edges.iter().map(|e| e.2).sum::<f64>() / ne as f64;
        for (k, &(_, _, w, _)) in model.edges.iter().enumerate() {
            trip.push((k, k, 0.1 * w + 1e-3 * wmean));
        }
        let alpha = Cholesky::new(&Csr::from_triplets(ne, trip))?;
        // constrained inverse: C⁻¹ − C⁻¹S (SᵀC⁻¹S)⁻¹ SᵀC⁻¹ for the cap loops S
        let loops: Vec<&Vec<(usize, f64)>> = model.loops.iter().filter(|l| !l.is_empty()).collect();
        let cinv_s: Vec<Vec<f64>> = loops
            .iter()
            .map(|lp| {
                let mut v = vec![0.0; ne];
                for &(e, sg) in lp.iter() {
                    v[e] = sg;
                }
                alpha.solve(&v)
            })
            .collect();
        let small: Vec<Vec<f64>> = loops.iter().map(|li| cinv_s.iter().map(|cj| li.iter().map(|&(e, sg)| sg * cj[e]).sum()).collect()).collect();
        let small_inv = invert_small(&small)?;
        let loops = loops.into_iter().cloned().collect();
        Ok(Preconditioner { dof: op.node_dof, dof_nodes: op.dof_nodes, psi, alpha, loops, cinv_s, small_inv })
    }

    fn apply(&self, model: &GlModel, gp: &[Complex64], ga: &[f64]) -> (Vec<Complex64>, Vec<f64>) {
        let rhs: Vec<Complex64> = self.dof_nodes.iter().map(|&i| gp[i]).collect();
        let z = self.psi.solve(&rhs);
        let mut zp = vec![Complex64::new(0.0, 0.0); gp.len()];
        for (i, d) in self.dof.iter().enumerate() {
            if let Some(k) = d {
                zp[i] = z[*k];
            }
        }
        let mut za = self.alpha.solve(ga);
        let sz: Vec<f64> = self.loops.iter().map(|lp| lp.iter().map(|&(e, sg)| sg * za[e]).sum()).collect();
        for (row, cs) in self.small_inv.iter().zip(&self.cinv_s) {
            let c: f64 = row.iter().zip(&sz).map(|(a, b)| a * b).sum();
            for (z, v) in za.iter_mut().zip(cs) {
                *z -= c * v;
            }
        }
        // the constraint now holds up to rounding
        model.project_alpha(&mut za);
        (zp, za)
    }
}

/// Inverse of a small symmetric positive definite matrix.
fn invert_small(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let (vals, vecs) = symmetric_eigen(a)?;
    if vals.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Numerical(format!("cap constraint Gram matrix is not positive definite: {vals:?}")));
    }
    let n = a.len();
    Ok((0..n).map(|i| (0..n).map(|j| (0..n).map(|k| vecs[k][i] * vecs[k][j] / vals[k]).sum()).collect()).collect())
}

fn inner(ap: &[Complex64], aa: &[f64], bp: &[Complex64], ba: &[f64]) -> f64 {
    ap.iter().zip(bp).map(|(x, y)| (x.conj() * y).re).sum::<f64>() + aa.iter().zip(ba).map(|(x, y)| x * y).sum::<f64>()
}

impl GlModel {
    /// Objective (energy plus penalty) and its projected gradient.
    fn objective(&self, psi: &[Complex64], alpha: &[f64], mu: f64) -> (f64, Vec<Complex64>, Vec<f64>) {
        let e = self.energy_parts(psi, alpha).total();
        let g = self.raw_gradient(psi, alpha);
        let (p, gpen) = self.penalty(alpha, mu);
        let mut ga: Vec<f64> = g.alpha.iter().zip(&gpen).map(|(a, b)| a + b).collect();
        self.project_alpha(&mut ga);
        (e + p, g.psi, ga)
    }

    /// Preconditioned nonlinear conjugate gradients from `seed`.
    pub fn minimize(&self, seed: &GLState, mesh: &TruncatedMesh, opts: &MinimizeOptions) -> Result<MinimizeOutcome> {
        self.check(seed)?;
        if seed.b != self.b {
            return invalid(format!("seed has b = {}, the model b = {}", seed.b, self.b));
        }
        let mu = opts.penalty;
        let mut state = self.coulomb_gauge(seed, mesh)?;
        state.kappa = self.kappa;
        state.r = self.r;
        for (p, f) in state.psi.iter_mut().zip(&self.fixed) {
            if *f {
                *p = Complex64::new(0.0, 0.0);
            }
        }
        project_cap_circulation(&mut state.alpha, &self.loops);
        let (mut f, mut gp, mut ga) = self.objective(&state.psi, &state.alpha, mu);
        if !f.is_finite() {
            return Err(Error::Numerical(format!("seed energy is not finite: {f}")));
        }
        let mut trace = Vec::new();
        let (r0p, r0a) = self.residual_norms(&gp, &ga);
        trace.push(TraceRow { iter: 0, energy: f, grad_norm_psi: r0p, grad_norm_alpha: r0a, step: 0.0 });
        if r0p < opts.tol && r0a < opts.tol {
            self.annotate(&mut state)?;
            return Ok(MinimizeOutcome { state, status: Status::Converged, iterations: 0, trace });
        }
        let pre = Preconditioner::new(self, mu)?;
        let (mut zp, mut za) = pre.apply(self, &gp, &ga);
        let mut dp: Vec<Complex64> = zp.iter().map(|v| -v).collect();
        let mut da: Vec<f64> = za.iter().map(|v| -v).collect();
        let mut gz = inner(&gp, &ga, &zp, &za);
        let mut step: f64 = 0.5;
        let mut status = Status::MaxIterations;
        let mut iterations = 0;
        for it in 1..=opts.max_iter {
            iterations = it;
            let mut slope = inner(&gp, &ga, &dp, &da);
            if !(slope < 0.0) {
                dp = zp.iter().map(|v| -v).collect();
                da = za.iter().map(|v| -v).collect();
                slope = -gz;
            }
            let Some((t, fnew, psi, alpha, gp_new, ga_new)) = self.line_search(&state, &dp, &da, slope, (2.0 * step).min(1.0), mu) else {
                status = Status::LineSearchFailed;
                break;
            };
            step = t;
            state.psi = psi;
            state.alpha = alpha;
            f += fnew;
            let (zp_new, za_new) = pre.apply(self, &gp_new, &ga_new);
            let gz_new = inner(&gp_new, &ga_new, &zp_new, &za_new);
            let ydotz = gz_new - inner(&gp, &ga, &zp_new, &za_new);
            let beta = if it % opts.restart == 0 { 0.0 } else { (ydotz / gz).max(0.0) };
            gp = gp_new;
            ga = ga_new;
            zp = zp_new;
            za = za_new;
            gz = gz_new;
            for (d, z) in dp.iter_mut().zip(&zp) {
                *d = -z + *d * beta;
            }
            for (d, z) in da.iter_mut().zip(&za) {
                *d = -z + *d * beta;
            }
            let (rp, ra) = self.residual_norms(&gp, &ga);
            trace.push(TraceRow { iter: it, energy: f, grad_norm_psi: rp, grad_norm_alpha: ra, step: t });
            if rp < opts.tol && ra < opts.tol {
                status = Status::Converged;
                break;
            }
        }
        let mut out = self.coulomb_gauge(&state, mesh)?;
        self.annotate(&mut out)?;
        Ok(MinimizeOutcome { state: out, status, iterations, trace })
    }

    /// `Φ(ψ₁, α₁) − Φ(ψ₀, α₀)` for the penalized objective, summed term by
    /// term as products of differences so small changes survive against a
    /// large total.
    fn objective_change(&self, psi0: &[Complex64], alpha0: &[f64], psi1: &[Complex64], alpha1: &[f64], mu: f64) -> f64 {
        let mut kin = 0.0;
        for (k, &(a, b, w, l)) in self.edges.iter().enumerate() {
            let u0 = (l * Complex64::from_polar(1.0, alpha0[k])).conj() * psi0[b] - psi0[a];
            let u1 = (l * Complex64::from_polar(1.0, alpha1[k])).conj() * psi1[b] - psi1[a];
            kin += w * ((u1 - u0) * (u1 + u0).conj()).re;
        }
        let bf = self.b as f64;
        let mut curv = 0.0;
        for (e, s, area) in &self.tris {
            let f0 = bf * area + s[0] * alpha0[e[0]] + s[1] * alpha0[e[1]] + s[2] * alpha0[e[2]];
            let df = s[0] * (alpha1[e[0]] - alpha0[e[0]]) + s[1] * (alpha1[e[1]] - alpha0[e[1]]) + s[2] * (alpha1[e[2]] - alpha0[e[2]]);
            curv += df * (2.0 * f0 + df) / area;
        }
        let k2 = self.kappa * self.kappa;
        let mut pot = 0.0;
        for ((p0, p1), m) in psi0.iter().zip(psi1).zip(&self.mass) {
            let dn = ((p1 - p0) * (p1 + p0).conj()).re;
            pot += m * dn * (p1.norm_sqr() + p0.norm_sqr() - 2.0 * self.r);
        }
        let d0 = self.divergence(alpha0);
        let dalpha: Vec<f64> = alpha1.iter().zip(alpha0).map(|(a, b)| a - b).collect();
        let dd = self.divergence(&dalpha);
        let pen: f64 = d0.iter().zip(&dd).zip(&self.mass).map(|((x, y), m)| y * (2.0 * x + y) / m).sum();
        0.5 * kin + 0.5 * curv + 0.25 * k2 * pot + 0.5 * mu * pen
    }

    /// Monotone backtracking with secant refinement. Returns the accepted
    /// step, objective change, point and projected gradient.
    #[allow(clippy::type_complexity, clippy::too_many_arguments)]
    fn line_search(
        &self,
        s: &GLState,
        dp: &[Complex64],
        da: &[f64],
        slope: f64,
        t0: f64,
        mu: f64,
    ) -> Option<(f64, f64, Vec<Complex64>, Vec<f64>, Vec<Complex64>, Vec<f64>)> {
        let at = |t: f64| {
            let psi: Vec<Complex64> = s.psi.iter().zip(dp).map(|(p, d)| p + d * t).collect();
            let alpha: Vec<f64> = s.alpha.iter().zip(da).map(|(a, d)| a + d * t).collect();
            let (_, gp, ga) = self.objective(&psi, &alpha, mu);
            let change = self.objective_change(&s.psi, &s.alpha, &psi, &alpha, mu);
            let sl = inner(&gp, &ga, dp, da);
            (change, sl, psi, alpha, gp, ga)
        };
        let mut t = t0;
        for _ in 0..50 {
            let (df, sl, psi, alpha, gp, ga) = at(t);
            let armijo = df <= 1e-4 * t * slope;
            let flat = df <= 0.0 && sl.abs() <= 0.5 * slope.abs();
            if df.is_finite() && (armijo || flat) {
                let mut best = (t, df, psi, alpha, gp, ga);
                // one secant step towards the minimum along the line
                if sl.abs() > 0.1 * slope.abs() {
                    let ts = t * slope / (slope - sl);
                    if ts.is_finite() && ts > 0.0 && ts < 8.0 * t && (ts - t).abs() > 1e-3 * t {
                        let (df2, _, p2, a2, g2, h2) = at(ts);
                        if df2.is_finite() && df2 < best.1 {
                            best = (ts, df2, p2, a2, g2, h2);
                        }
                    }
                }
                return Some(best);
            }
            // quadratic interpolation, kept inside [0.1t, 0.5t]
            let denom = 2.0 * (df - t * slope);
            let tq = if denom > 0.0 && df.is_finite() { -slope * t * t / denom } else { 0.1 * t };
            t = tq.clamp(0.1 * t, 0.5 * t);
        }
        None
    }
}

/// Spectral stability data of the normal state.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HessianBottom {
    /// `λ₁(−Δ_{a^b})/r − κ²`.
    pub section: f64,
    /// Smallest nonzero eigenvalue of `d*d` on co-closed forms, over `r`.
    pub connection: f64,
    pub value: f64,
}

/// Bottom of the Hessian of the unscaled energy at `(0, a^b)`, in units of
/// `1/r`, harmonic forms excluded.
pub fn hessian_bottom(mesh: &TruncatedMesh, b: i64, kappa: f64, r: f64) -> Result<HessianBottom> {
    if !(kappa > 0.0) || !(r > 0.0) {
        return invalid(format!("κ = {kappa}, r = {r}: both must be positive"));
    }
    let section_op = assemble_cells(&CellComplex::from_mesh(mesh, &mesh.links(b)), b, Boundary::Dirichlet);
    let l1 = lowest_eigenpairs(&section_op, 1)?.eigenvalues[0];
    // co-closed non-harmonic forms are *dφ; their spectrum is the nonzero
    // Neumann spectrum of the scalar Laplacian
    let scalar = assemble_cells(&CellComplex::from_mesh(mesh, &mesh.links(0)), 0, Boundary::Neumann);
    let opts = EigenOptions { shift: Some(-1.0), ..EigenOptions::default() };
    let l = lowest_eigenpairs_with(&scalar, 2, &opts)?.eigenvalues;
    let section = l1 / r - kappa * kappa;
    let connection = l[1] / r;
    Ok(HessianBottom { section, connection, value: section.min(connection) })
}

/// Fields in the unscaled metric `h_r`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhysicalFields {
    pub psi: Vec<Complex64>,
    pub alpha: Vec<f64>,
    /// `E(ψ̃, ã, h_r) = E_r(ψ, a)/r`.
    pub energy: f64,
    pub r: f64,
}

/// `ψ̃ = ψ/√r`, `α̃ = α/√r`, energy divided by `r`.
pub fn unscale(state: &GLState, energy: f64) -> Result<PhysicalFields> {
    let r = state.r;
    if !(r > 0.0) || !r.is_finite() {
        return invalid(format!("r = {r}: r > 0 required"));
    }
    let s = r.sqrt();
    Ok(PhysicalFields { psi: state.psi.iter().map(|p| p / s).collect(), alpha: state.alpha.iter().map(|a| a / s).collect(), energy: energy / r, r })
}

/// Least-squares line `y = c0 + c1 x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<[f64; 2]> {
    let c = least_squares(x, y, 2)?;
    Ok([c[0], c[1]])
}

/// Least-squares parabola `y = c0 + c1 x + c2 x²`.
pub fn fit_quadratic(x: &[f64], y: &[f64]) -> Result<[f64; 3]> {
    let c = least_squares(x, y, 3)?;
    Ok([c[0], c[1], c[2]])
}

fn least_squares(x: &[f64], y: &[f64], p: usize) -> Result<Vec<f64>> {
    if x.len() != y.len() || x.len() < p {
        return invalid(format!("{} abscissae and {} values: at least {p} pairs required", x.len(), y.len()));
    }
    // normal equations on centred, scaled abscissae, then map back
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let xs = x.iter().map(|v| (v - xm).abs()).fold(0.0, f64::max).max(1e-300);
    let u: Vec<f64> = x.iter().map(|v| (v - xm) / xs).collect();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (ui, yi) in u.iter().zip(y) {
        let pw: Vec<f64> = (0..p).map(|k| ui.powi(k as i32)).collect();
        for i in 0..p {
            for j in 0..p {
                a[i][j] += pw[i] * pw[j];
            }
            a[i][p] += pw[i] * yi;
        }
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap_or(col);
        a.swap(col, piv);
        if a[col][col].abs() < 1e-14 {
            return Err(Error::Numerical("degenerate abscissae in least-squares fit".into()));
        }
        for row in 0..p {
            if row != col {
                let fct = a[row][col] / a[col][col];
                for k in col..=p {
                    a[row][k] -= fct * a[col][k];
                }
            }
        }
    }
    let cu: Vec<f64> = (0..p).map(|i| a[i][p] / a[i][i]).collect();
    // Σ cu_k ((x − xm)/xs)^k expanded in powers of x
    let mut c = vec![0.0; p];
    for (k, ck) in cu.iter().enumerate() {
        for j in 0..=k {
            let binom = (1..=j).fold(1.0, |acc, i| acc * (k + 1 - i) as f64 / i as f64);
            c[j] += ck * binom * (-xm).powi((k - j) as i32) / xs.powi(k as i32);
        }
    }
    Ok(c)
}
