//! Truncated triangulations of Σ = ℍ/Γ(N) with the bundle gluing built in.
//!
//! Each coset representative `g_j` carries a copy ("sheet") of one structured
//! grid on the modular cell `{|x| ≤ ½, |w| ≥ 1}`, truncated at local height
//! `Y_c = N·Y` (normalized cusp height `Y`). Rows are equally spaced in
//! `ln y` between `√3/2` and `Y_c`, with the arc `y_b(x) = √(1 − x²)` blended in
//! near the bottom only. Keeping the tall cusp quads rectangular keeps every
//! cotangent weight nonnegative. Sheet `j` stores the gauge-transported section
//! `ũ_j(w) = ρ(g_j, w)⁻¹ Ψ(g_j w)`, which makes the connection the same `b dx/y`
//! on every sheet. Sheets are glued across `x = ±½` (by T) and across the arc
//! (by S); the gluing phases are tracked with a phase-carrying union-find.
//!
//! Edge links are `U_e = e^{i∫_e dx/y} φ_a φ̄_b` at degree one; triangle fluxes
//! `A_T = arg ∏ U` are the exact hyperbolic areas of the glued cells, so the
//! discrete curvature of `a^b` is exactly `b A_T` and `Σ A_T = |Σ| − m/Y`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bundle::{automorphy_phase, BundleData};
use crate::error::{invalid, Error, Result};
use crate::group::{CongruenceSurface, Moebius};

/// Tolerance of the union-find phase consistency check.
const GLUE_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Node {
    /// Cusp index when the node lies on a cusp cap.
    pub cap: Option<usize>,
    /// Lumped hyperbolic mass `Σ_T ∫_T φ_i y⁻² dA` (row sums of the consistent mass).
    pub mass: f64,
    /// Local key (`sheet · n_local + local index`) of the copy that defines the gauge.
    pub primary: usize,
    /// Position of the primary copy in ℍ.
    pub z: Complex64,
}

#[derive(Clone, Debug)]
pub struct Edge {
    /// Endpoints, `a < b`.
    pub a: usize,
    pub b: usize,
    /// Cotangent weight `½ Σ cot(opposite angle)`.
    pub weight: f64,
    /// Degree-one link `a → b`.
    pub link: Complex64,
    /// Edge lies on a cusp cap.
    pub cap: bool,
    pub tris: [usize; 2],
}

#[derive(Clone, Debug)]
pub struct Tri {
    pub v: [usize; 3],
    /// Edges `v0v1, v1v2, v2v0`.
    pub e: [usize; 3],
    /// `+1` when the edge orientation `a → b` agrees with the triangle.
    pub sign: [f64; 3],
    /// Hyperbolic area of the glued cell (degree-one flux).
    pub area: f64,
    /// Euclidean area in sheet coordinates.
    pub area_euc: f64,
    pub sheet: usize,
    pub local: [usize; 3],
    /// Vertex positions in sheet coordinates.
    pub pos: [[f64; 2]; 3],
}

/// Mesh file layout (`nodes` in ℍ coordinates).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MeshFile {
    pub level: u64,
    #[serde(rename = "Y")]
    pub y: f64,
    pub h: f64,
    pub nodes: Vec<[f64; 2]>,
    pub tris: Vec<[usize; 3]>,
    pub pairs: Vec<(usize, usize, [i64; 4])>,
    pub caps: BTreeMap<usize, Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct TruncatedMesh {
    pub level: u64,
    /// Normalized truncation height `Y`.
    pub cusp_height: f64,
    pub h: f64,
    pub nx: usize,
    pub nt: usize,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub tris: Vec<Tri>,
    /// Cap nodes of each cusp.
    pub caps: Vec<Vec<usize>>,
    area_exact: f64,
    coset_reps: Vec<Moebius>,
    t_next: Vec<usize>,
    s_next: Vec<usize>,
    sheet_cusp: Vec<usize>,
    cusp_sheet: Vec<usize>,
    local_pts: Vec<[f64; 2]>,
    local_tris: Vec<[usize; 3]>,
    local_to_global: Vec<usize>,
    /// `ũ(local copy) = φ · u(node)` at degree one.
    local_phase: Vec<Complex64>,
}

struct PhaseUnionFind {
    parent: Vec<usize>,
    phase: Vec<Complex64>,
}

impl PhaseUnionFind {
    fn new(n: usize) -> Self {
        PhaseUnionFind { parent: (0..n).collect(), phase: vec![Complex64::new(1.0, 0.0); n] }
    }

    /// `(root, p)` with `u_i = p · u_root`.
    fn find(&mut self, i: usize) -> (usize, Complex64) {
        let mut path = Vec::new();
        let mut r = i;
        while self.parent[r] != r {
            path.push(r);
            r = self.parent[r];
        }
        // compress from the top down so each phase refers to the root
        for &k in path.iter().rev() {
            let p = self.parent[k];
            if p != r {
                self.phase[k] = self.phase[k] * self.phase[p];
            }
            self.parent[k] = r;
        }
        (r, if i == r { Complex64::new(1.0, 0.0) } else { self.phase[i] })
    }

    /// Impose `u_i = p · u_j`.
    fn union(&mut self, i: usize, j: usize, p: Complex64) -> Result<()> {
        let (ri, pi) = self.find(i);
        let (rj, pj) = self.find(j);
        let q = p * pj * pi.conj();
        if ri == rj {
            if (q - 1.0).norm() > GLUE_TOL {
                return Err(Error::Mesh(format!("inconsistent gluing phase {q} between local nodes {i} and {j}")));
            }
            return Ok(());
        }
        self.parent[ri] = rj;
        self.phase[ri] = q / q.norm();
        Ok(())
    }
}

struct PlainUnionFind(Vec<usize>);

impl PlainUnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }
    fn union(&mut self, i: usize, j: usize) {
        let (a, b) = (self.find(i), self.find(j));
        if a != b {
            self.0[a.max(b)] = a.min(b);
        }
    }
}

fn angle_at(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    let u = [q[0] - p[0], q[1] - p[1]];
    let v = [r[0] - p[0], r[1] - p[1]];
    (u[0] * v[1] - u[1] * v[0]).abs().atan2(u[0] * v[0] + u[1] * v[1])
}

pub(crate) fn cot_at(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    let u = [q[0] - p[0], q[1] - p[1]];
    let v = [r[0] - p[0], r[1] - p[1]];
    (u[0] * v[0] + u[1] * v[1]) / (u[0] * v[1] - u[1] * v[0]).abs()
}

pub(crate) fn orient(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))
}

/// Height of the grid row `t ∈ [0, 1]` above `x`: equally spaced in `ln y`
/// from `√3/2` to `Y_c`, with the arc blended out below `y = 2`.
fn row_height(x: f64, t: f64, yc: f64) -> f64 {
    let u0 = (3f64.sqrt() / 2.0).ln();
    let uc = yc.ln();
    let t_flat = ((2f64.ln() - u0) / (uc - u0)).min(1.0);
    let warp = if t < t_flat { (1.0 - t / t_flat).powi(2) } else { 0.0 };
    let ub = 0.5 * (1.0 - x * x).ln();
    (u0 + t * (uc - u0) + (ub - u0) * warp).exp()
}

/// Inverse of [`row_height`] in `t` (the map is increasing).
fn row_param(x: f64, y: f64, yc: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if row_height(x, mid, yc) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Seven-point degree-5 rule on the reference triangle (barycentric, weight).
const DUNAVANT5: [([f64; 3], f64); 7] = {
    const A1: f64 = 0.059_715_871_789_770;
    const B1: f64 = 0.470_142_064_105_115;
    const A2: f64 = 0.797_426_985_353_087;
    const B2: f64 = 0.101_286_507_323_456;
    const W1: f64 = 0.132_394_152_788_506;
    const W2: f64 = 0.125_939_180_544_827;
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

/// `∫_T φ_m y⁻² dA` for the three hat functions of a Euclidean triangle.
pub(crate) fn lumped_mass(pos: [[f64; 2]; 3], area_euc: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (l, w) in DUNAVANT5 {
        let y = l[0] * pos[0][1] + l[1] * pos[1][1] + l[2] * pos[2][1];
        for m in 0..3 {
            out[m] += w * area_euc * l[m] / (y * y);
        }
    }
    out
}

/// `∫ dx / y` along the straight segment `p → q`.
pub fn edge_integral(p: [f64; 2], q: [f64; 2]) -> f64 {
    let dx = q[0] - p[0];
    let r = (q[1] - p[1]) / p[1];
    let f = if r.abs() < 1e-8 { 1.0 - 0.5 * r + r * r / 3.0 } else { r.ln_1p() / r };
    dx / p[1] * f
}

/// Build a mesh for the bundle's surface. The bundle must live on `surface`.
pub fn build_mesh(surface: &CongruenceSurface, bundle: &BundleData, y: f64, h: f64) -> Result<TruncatedMesh> {
    if bundle.level != surface.level {
        return invalid("bundle and surface have different levels");
    }
    TruncatedMesh::new(surface, y, h)
}

impl TruncatedMesh {
    pub fn new(surface: &CongruenceSurface, cusp_height: f64, h: f64) -> Result<Self> {
        if !(cusp_height >= 5.0) || !(h > 0.0 && h <= 0.5) {
            return invalid(format!("mesh parameters Y = {cusp_height}, h = {h}: need Y ≥ 5 and 0 < h ≤ 0.5"));
        }
        let n = surface.level;
        let yc = n as f64 * cusp_height;
        let sqrt3_2 = 3f64.sqrt() / 2.0;
        let mut nx = (2.0 / (3f64.sqrt() * h)).ceil() as usize;
        nx += nx % 2;
        let nt = ((yc / sqrt3_2).ln() / h).ceil() as usize;

        // reference grid
        let idx = |i: usize, j: usize| j * (nx + 1) + i;
        let mut local_pts = Vec::with_capacity((nx + 1) * (nt + 1));
        for j in 0..=nt {
            for i in 0..=nx {
                let x = (2 * i as i64 - nx as i64) as f64 / (2 * nx) as f64;
                let y = if j == nt { yc } else { row_height(x, j as f64 / nt as f64, yc) };
                local_pts.push([x, y]);
            }
        }
        let mut local_tris = Vec::with_capacity(2 * nx * nt);
        for j in 0..nt {
            for i in 0..nx {
                let (p00, p10, p01, p11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                let pt = |k: usize| local_pts[k];
                let s = angle_at(pt(p10), pt(p00), pt(p11)) + angle_at(pt(p01), pt(p00), pt(p11));
                if s <= std::f64::consts::PI {
                    local_tris.push([p00, p10, p11]);
                    local_tris.push([p00, p11, p01]);
                } else {
                    local_tris.push([p00, p10, p01]);
                    local_tris.push([p10, p11, p01]);
                }
            }
        }
        for t in &local_tris {
            if orient(local_pts[t[0]], local_pts[t[1]], local_pts[t[2]]) <= 0.0 {
                return Err(Error::Mesh("non-positively oriented reference triangle".into()));
            }
        }

        let nloc = local_pts.len();
        let sheets = surface.coset_count();
        let total = sheets * nloc;
        let reps = &surface.coset_reps;

        // gluing: u_k = p · u_k'
        let mut uf = PhaseUnionFind::new(total);
        for s in 0..sheets {
            let t = surface.t_next[s];
            for j in 0..=nt {
                uf.union(s * nloc + idx(nx, j), t * nloc + idx(0, j), Complex64::new(1.0, 0.0))?;
            }
            let s2 = surface.s_next[s];
            for i in 0..=nx {
                // ũ_s(w) = ρ(S, w') ũ_{s2}(w') with w = S w'
                let wp = local_pts[idx(nx - i, 0)];
                let rho = automorphy_phase(1.0, 0.0, Complex64::new(wp[0], wp[1]), 1.0);
                uf.union(s * nloc + idx(i, 0), s2 * nloc + idx(nx - i, 0), rho)?;
            }
        }

        // global nodes in order of first appearance
        let mut root_to_global: HashMap<usize, usize> = HashMap::new();
        let mut local_to_global = vec![0usize; total];
        let mut root_phase = vec![Complex64::new(1.0, 0.0); total];
        let mut primary_phase: Vec<Complex64> = Vec::new();
        let mut nodes: Vec<Node> = Vec::new();
        for k in 0..total {
            let (r, p) = uf.find(k);
            root_phase[k] = p;
            let g = *root_to_global.entry(r).or_insert_with(|| {
                let s = k / nloc;
                let w = local_pts[k % nloc];
                nodes.push(Node { cap: None, mass: 0.0, primary: k, z: reps[s].apply_unchecked(Complex64::new(w[0], w[1])) });
                primary_phase.push(p);
                nodes.len() - 1
            });
            local_to_global[k] = g;
            if k % nloc >= idx(0, nt) {
                nodes[g].cap = Some(surface.sheet_cusp[k / nloc]);
            }
        }
        let local_phase: Vec<Complex64> = (0..total)
            .map(|k| {
                let q = root_phase[k] / primary_phase[local_to_global[k]];
                q / q.norm()
            })
            .collect();

        // triangles and edges
        let on_side = |l: usize| {
            let (i, j) = (l % (nx + 1), l / (nx + 1));
            (i == 0, i == nx, j == 0, j == nt)
        };
        let boundary_local_edge = |a: usize, b: usize| {
            let (pa, pb) = (on_side(a), on_side(b));
            (pa.0 && pb.0) || (pa.1 && pb.1) || (pa.2 && pb.2) || (pa.3 && pb.3)
        };
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut edge_copies: Vec<Vec<(usize, usize, usize)>> = Vec::new();
        let mut tris: Vec<Tri> = Vec::with_capacity(sheets * local_tris.len());
        for s in 0..sheets {
            for lt in &local_tris {
                let keys = lt.map(|l| s * nloc + l);
                let v = keys.map(|k| local_to_global[k]);
                if v[0] == v[1] || v[1] == v[2] || v[0] == v[2] {
                    return Err(Error::Mesh(format!("degenerate glued triangle on sheet {s}")));
                }
                let pos = lt.map(|l| local_pts[l]);
                let ti = tris.len();
                let mut e = [0usize; 3];
                let mut sign = [0.0; 3];
                for m in 0..3 {
                    let (la, lb) = (lt[m], lt[(m + 1) % 3]);
                    let (ga, gb) = (v[m], v[(m + 1) % 3]);
                    let key = (ga.min(gb), ga.max(gb));
                    let ei = *edge_index.entry(key).or_insert_with(|| {
                        // primary copy oriented a → b
                        let (ka, kb) = if ga < gb { (s * nloc + la, s * nloc + lb) } else { (s * nloc + lb, s * nloc + la) };
                        let (pa, pb) = (local_pts[ka % nloc], local_pts[kb % nloc]);
                        let link = Complex64::from_polar(1.0, edge_integral(pa, pb)) * local_phase[ka] * local_phase[kb].conj();
                        let cap = on_side(la).3 && on_side(lb).3;
                        edges.push(Edge { a: key.0, b: key.1, weight: 0.0, link, cap, tris: [usize::MAX; 2] });
                        edge_copies.push(Vec::new());
                        edges.len() - 1
                    });
                    let copy = (s, la.min(lb), la.max(lb));
                    if !edge_copies[ei].contains(&copy) {
                        edge_copies[ei].push(copy);
                    }
                    let slot = if edges[ei].tris[0] == usize::MAX {
                        0
                    } else if edges[ei].tris[1] == usize::MAX {
                        1
                    } else {
                        return Err(Error::Mesh(format!("edge {key:?} bounds more than two triangles")));
                    };
                    edges[ei].tris[slot] = ti;
                    // opposite vertex
                    let o = lt[(m + 2) % 3];
                    edges[ei].weight += 0.5 * cot_at(local_pts[o], local_pts[la], local_pts[lb]);
                    e[m] = ei;
                    sign[m] = if ga < gb { 1.0 } else { -1.0 };
                }
                let area_euc = orient(pos[0], pos[1], pos[2]);
                tris.push(Tri { v, e, sign, area: 0.0, area_euc, sheet: s, local: *lt, pos });
                let lm = lumped_mass(pos, area_euc);
                for m in 0..3 {
                    nodes[v[m]].mass += lm[m];
                }
            }
        }
        for (ei, copies) in edge_copies.iter().enumerate() {
            let e = &edges[ei];
            let ntri = e.tris.iter().filter(|&&t| t != usize::MAX).count();
            if copies.len() > 2 || (copies.len() == 2 && !copies.iter().all(|c| boundary_local_edge(c.1, c.2))) {
                return Err(Error::Mesh(format!("non-manifold gluing at edge ({}, {})", e.a, e.b)));
            }
            if (e.cap && ntri != 1) || (!e.cap && ntri != 2) {
                return Err(Error::Mesh(format!("edge ({}, {}) has {ntri} triangles (cap edge: {})", e.a, e.b, e.cap)));
            }
        }
        for t in tris.iter_mut() {
            let mut prod = Complex64::new(1.0, 0.0);
            for m in 0..3 {
                let l = edges[t.e[m]].link;
                prod *= if t.sign[m] > 0.0 { l } else { l.conj() };
            }
            t.area = prod.arg();
            if !(t.area > 0.0) {
                return Err(Error::Mesh(format!("non-positive cell flux {} on sheet {}", t.area, t.sheet)));
            }
        }

        let mut caps = vec![Vec::new(); surface.cusps.len()];
        for (g, nd) in nodes.iter().enumerate() {
            if let Some(c) = nd.cap {
                caps[c].push(g);
            }
        }
        let mesh = TruncatedMesh {
            level: n,
            cusp_height,
            h,
            nx,
            nt,
            nodes,
            edges,
            tris,
            caps,
            area_exact: surface.area(),
            coset_reps: reps.clone(),
            t_next: surface.t_next.clone(),
            s_next: surface.s_next.clone(),
            sheet_cusp: surface.sheet_cusp.clone(),
            cusp_sheet: surface.cusps.iter().map(|c| c.sheet).collect(),
            local_pts,
            local_tris,
            local_to_global,
            local_phase,
        };
        Ok(mesh)
    }

    pub fn sheet_count(&self) -> usize {
        self.coset_reps.len()
    }

    pub fn cusp_count(&self) -> usize {
        self.caps.len()
    }

    /// Exact untruncated area |Σ|.
    pub fn area_exact(&self) -> f64 {
        self.area_exact
    }

    /// `Σ m_p`, the quadrature of `∫ 1`.
    pub fn mesh_area(&self) -> f64 {
        self.nodes.iter().map(|n| n.mass).sum()
    }

    /// `Σ A_T`, equal to `|Σ| − m/Y` up to rounding.
    pub fn flux_area(&self) -> f64 {
        self.tris.iter().map(|t| t.area).sum()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.mass).collect()
    }

    /// `∫ f dx dy / y²` with the lumped quadrature.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.nodes.iter().zip(f).map(|(n, v)| n.mass * v).sum()
    }

    pub fn integrate_complex(&self, f: &[Complex64]) -> Complex64 {
        self.nodes.iter().zip(f).map(|(n, v)| v * n.mass).sum()
    }

    /// `⟨f⟩ = ∫ f / |Σ|` with the exact untruncated area.
    pub fn bracket(&self, f: &[f64]) -> f64 {
        self.integrate(f) / self.area_exact
    }

    /// Links of `a^b` for integer `b`.
    pub fn links(&self, b: i64) -> Vec<Complex64> {
        self.edges.iter().map(|e| unit_pow(e.link, b)).collect()
    }

    /// Edge integrals of `a^b` in the node gauge (radians, reduced).
    pub fn connection_edge_values(&self, b: i64) -> Vec<f64> {
        self.links(b).iter().map(|l| l.arg()).collect()
    }

    /// Indices of nodes off the cusp caps.
    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].cap.is_none()).collect()
    }

    fn nloc(&self) -> usize {
        self.local_pts.len()
    }

    /// Sheet and local coordinate of the primary copy of node `i`.
    pub fn node_local(&self, i: usize) -> (usize, Complex64) {
        let nloc = self.nloc();
        let k = self.nodes[i].primary;
        let w = self.local_pts[k % nloc];
        (k / nloc, Complex64::new(w[0], w[1]))
    }

    /// Coset representative of sheet `s`.
    pub fn sheet_rep(&self, s: usize) -> Moebius {
        self.coset_reps[s]
    }

    /// Nodal values of a section given on ℍ: `u = ρ_b(g_j, w)⁻¹ Ψ(g_j w)` at
    /// each node's primary copy.
    pub fn sample_section<F: Fn(Complex64) -> Complex64>(&self, f: F, b: i64) -> Vec<Complex64> {
        (0..self.nodes.len())
            .map(|i| {
                let (s, w) = self.node_local(i);
                let g = &self.coset_reps[s];
                automorphy_phase(g.c as f64, g.d as f64, w, b as f64).conj() * f(g.apply_unchecked(w))
            })
            .collect()
    }

    /// Value of the gauge-transported section on sheet `sheet` at local
    /// coordinate `w` (P1 interpolation of the nodal values).
    pub fn evaluate_local(&self, sheet: usize, w: Complex64, values: &[Complex64], b: i64) -> Option<Complex64> {
        let (nx, nt) = (self.nx, self.nt);
        if w.re < -0.5 - 1e-12 || w.re > 0.5 + 1e-12 {
            return None;
        }
        let i = (((w.re + 0.5) * nx as f64).floor() as isize).clamp(0, nx as isize - 1) as usize;
        let yb = (1.0 - w.re * w.re).max(0.0).sqrt();
        let yc = self.level as f64 * self.cusp_height;
        if w.im < yb - 1e-9 || w.im > yc + 1e-9 {
            return None;
        }
        let t = row_param(w.re, w.im, yc);
        let j0 = ((t * nt as f64).floor() as isize).clamp(0, nt as isize - 1);
        let nloc = self.nloc();
        for dj in [0isize, -1, 1, -2, 2] {
            let j = j0 + dj;
            if j < 0 || j >= nt as isize {
                continue;
            }
            let q = 2 * (j as usize * nx + i);
            for lt in &self.local_tris[q..q + 2] {
                let p = lt.map(|l| self.local_pts[l]);
                let a = orient(p[0], p[1], p[2]);
                let wp = [w.re, w.im];
                let l0 = orient(wp, p[1], p[2]) / a;
                let l1 = orient(p[0], wp, p[2]) / a;
                let l2 = 1.0 - l0 - l1;
                if l0 >= -1e-9 && l1 >= -1e-9 && l2 >= -1e-9 {
                    let val = |m: usize| {
                        let k = sheet * nloc + lt[m];
                        unit_pow(self.local_phase[k], b) * values[self.local_to_global[k]]
                    };
                    return Some(val(0) * l0 + val(1) * l1 + val(2) * l2);
                }
            }
        }
        None
    }

    /// Sheet whose tile is `g_j T^k` for the first sheet of cusp `cusp`.
    pub fn cusp_cycle_sheet(&self, cusp: usize, k: usize) -> usize {
        let mut s = self.cusp_sheet[cusp];
        for _ in 0..k {
            s = self.t_next[s];
        }
        s
    }

    /// Sheet/local-coordinate pairs of the points `ζ = (n + ½)/count + i y` of
    /// the width-normalized cusp cylinder of `cusp`.
    pub fn cusp_line(&self, cusp: usize, y: f64, count: usize) -> Vec<(usize, Complex64)> {
        let w = self.level as f64;
        (0..count)
            .map(|n| {
                let x = (n as f64 + 0.5) / count as f64 * w;
                let k = (x + 0.5).floor();
                (self.cusp_cycle_sheet(cusp, k as usize), Complex64::new(x - k, y * w))
            })
            .collect()
    }

    /// Values of the nodal section along a horizontal line of a cusp
    /// cylinder. These are the values of the section in the cusp chart.
    pub fn cusp_line_values(&self, cusp: usize, y: f64, count: usize, values: &[Complex64], b: i64) -> Result<Vec<Complex64>> {
        self.cusp_line(cusp, y, count)
            .into_iter()
            .map(|(s, w)| self.evaluate_local(s, w, values, b).ok_or_else(|| Error::InvalidInput(format!("height {y} is outside the meshed cusp region"))))
            .collect()
    }

    /// Cusp index of the cap on sheet `s`.
    pub fn sheet_cusp(&self, s: usize) -> usize {
        self.sheet_cusp[s]
    }

    /// Export in ℍ coordinates. Copies of a node whose sheets are related by
    /// the identity are merged; other gluings become pairings `(i, j, γ)`
    /// with `γ z_i = z_j`, listed in both directions.
    pub fn export(&self) -> MeshFile {
        let nloc = self.nloc();
        let (nx, nt) = (self.nx, self.nt);
        let sheets = self.sheet_count();
        let total = sheets * nloc;
        let idx = |i: usize, j: usize| j * (nx + 1) + i;
        let reps = &self.coset_reps;
        let mut same = PlainUnionFind((0..total).collect());
        let mut relations: Vec<(usize, usize, Moebius)> = Vec::new();
        for s in 0..sheets {
            let t = self.t_next[s];
            // z_k = g_s T w' = γ g_t w'
            let gamma_t = (reps[s] * Moebius::T * reps[t].inverse()).normalized();
            for j in 0..=nt {
                let (k, k2) = (s * nloc + idx(nx, j), t * nloc + idx(0, j));
                if gamma_t == Moebius::IDENTITY {
                    same.union(k, k2);
                } else {
                    relations.push((k2, k, gamma_t));
                }
            }
            let s2 = self.s_next[s];
            let gamma_s = (reps[s] * Moebius::S * reps[s2].inverse()).normalized();
            for i in 0..=nx {
                let (k, k2) = (s * nloc + idx(i, 0), s2 * nloc + idx(nx - i, 0));
                if gamma_s == Moebius::IDENTITY {
                    same.union(k, k2);
                } else {
                    relations.push((k2, k, gamma_s));
                }
            }
        }
        let mut id = vec![usize::MAX; total];
        let mut first: HashMap<usize, usize> = HashMap::new();
        let mut nodes = Vec::new();
        for k in 0..total {
            let r = same.find(k);
            let v = *first.entry(r).or_insert_with(|| {
                let w = self.local_pts[r % nloc];
                let z = reps[r / nloc].apply_unchecked(Complex64::new(w[0], w[1]));
                nodes.push([z.re, z.im]);
                nodes.len() - 1
            });
            id[k] = v;
        }
        let tris = (0..sheets).flat_map(|s| self.local_tris.iter().map(move |lt| (s, lt))).map(|(s, lt)| lt.map(|l| id[s * nloc + l])).collect();
        let mut pairs = BTreeSet::new();
        for (k2, k, g) in relations {
            let (i, j) = (id[k2], id[k]);
            pairs.insert((i, j, g.entries()));
            pairs.insert((j, i, g.inverse().normalized().entries()));
        }
        let mut caps: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for s in 0..sheets {
            for i in 0..=nx {
                caps.entry(self.sheet_cusp[s]).or_default().insert(id[s * nloc + idx(i, nt)]);
            }
        }
        MeshFile {
            level: self.level,
            y: self.cusp_height,
            h: self.h,
            nodes,
            tris,
            pairs: pairs.into_iter().collect(),
            caps: caps.into_iter().map(|(c, s)| (c, s.into_iter().collect())).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.export())?)
    }

    /// Rebuild a mesh from its file and verify that the file is exactly the
    /// export of the rebuilt mesh.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeshFile = serde_json::from_str(text)?;
        let surface = CongruenceSurface::new(file.level)?;
        let mesh = TruncatedMesh::new(&surface, file.y, file.h)?;
        if mesh.export() != file {
            return Err(Error::Mesh("mesh file does not match the mesh rebuilt from its parameters".into()));
        }
        Ok(mesh)
    }
}

/// `u^b` for a unit complex number, renormalized.
pub fn unit_pow(u: Complex64, b: i64) -> Complex64 {
    let v = if b >= 0 { u.powi(b as i32) } else { u.conj().powi((-b) as i32) };
    v / v.norm()
}
