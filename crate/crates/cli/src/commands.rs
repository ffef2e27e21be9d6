//! One function per subcommand. Each writes its data files and a
//! `manifest.json` into the output directory.

use std::path::Path;

use hypgl::abrikosov::{
    b_matrix, beta_min_max, curvature_identity, energy_expansion, harmonic_forms, leading_order_state, pairing_identity, s_squared, solve_eta, AbrikosovReport,
    BranchPoint, EtaSolution, BRANCH_CSV_HEADER, MAX_K_DIM,
};
use hypgl::bundle::BundleData;
use hypgl::cuspforms::{dim_cusp_forms, dim_cusp_forms_classical, fourier_coefficients, ground_space_basis, sample_poincare_line, CLUSTER_WIDTH};
use hypgl::group::CongruenceSurface;
use hypgl::mesh::TruncatedMesh;
use hypgl::solver::{fit_line, fit_quadratic, unscale, GLState, GlModel, MinimizeOutcome, Status, TRACE_CSV_HEADER};
use hypgl::spectra::{assemble, lowest_eigenpairs, SpectralReport, SpectralResult, MAX_EIGENPAIRS};
use hypgl::Error;
use num_complex::Complex64;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::{sci, write_csv, write_json, write_manifest, ExactValues};

/// Size of the random perturbation used when no leading-order seed exists.
const PERTURBATION: f64 = 1e-3;

fn prepare_out(cfg: &RunConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

/// Surface and bundle of the configuration; refuses b = ½ and non-integer b.
fn surface_and_bundle(cfg: &RunConfig) -> Result<(CongruenceSurface, BundleData, i64)> {
    let surface = CongruenceSurface::new(cfg.level)?;
    let bundle = BundleData::new(&surface, cfg.degree)?;
    let b = bundle.require_integer_b()?;
    Ok((surface, bundle, b))
}

fn build_mesh(cfg: &RunConfig, surface: &CongruenceSurface) -> Result<TruncatedMesh> {
    Ok(TruncatedMesh::new(surface, cfg.mesh.y, cfg.mesh.h)?)
}

fn cluster(res: &SpectralResult, b: f64) -> Vec<f64> {
    res.eigenvalues.iter().copied().filter(|l| (l - b).abs() <= CLUSTER_WIDTH * b).collect()
}

/// Everything the nonlinear commands build on: the ground space, its
/// Abrikosov data and the first-order field correction `η`.
struct Ground {
    surface: CongruenceSurface,
    bundle: BundleData,
    b: i64,
    mesh: TruncatedMesh,
    eigenvalues: Vec<f64>,
    basis: Vec<Vec<Complex64>>,
    report: AbrikosovReport,
    xi: Vec<Complex64>,
    eta: EtaSolution,
}

fn ground(cfg: &RunConfig) -> Result<Ground> {
    let (surface, bundle, b) = surface_and_bundle(cfg)?;
    let dim = dim_cusp_forms_classical(&surface, 2 * b)? as usize;
    if dim == 0 {
        return Err(
            Error::ModelGuard(format!("no cusp forms of weight {} on Γ({}): K is empty and the normal state does not bifurcate", 2 * b, cfg.level)).into()
        );
    }
    if dim > MAX_K_DIM || dim + 1 > MAX_EIGENPAIRS {
        return Err(Error::InvalidInput(format!("ground space of dimension {dim} exceeds the supported {MAX_K_DIM}")).into());
    }
    let mesh = build_mesh(cfg, &surface)?;
    let op = assemble(&mesh, &bundle)?;
    let res = lowest_eigenpairs(&op, dim + 1)?;
    let basis = ground_space_basis(&op, &res, dim, mesh.area_exact())?;
    let report = beta_min_max(&basis, &mesh)?;
    let xi = AbrikosovReport::direction(&basis, &report.minimizer);
    let eta = solve_eta(&xi, &mesh)?;
    Ok(Ground { eigenvalues: cluster(&res, b as f64), surface, bundle, b, mesh, basis, report, xi, eta })
}

impl Ground {
    fn exact(&self) -> ExactValues {
        ExactValues::new(&self.surface, Some(&self.bundle))
    }

    /// Leading-order seed where a branch exists, else the perturbed normal state.
    fn seed(&self, cfg: &RunConfig, r: f64) -> Result<GLState> {
        let amp = s_squared(r, cfg.kappa, self.b as f64, self.report.beta);
        Ok(if amp.valid && amp.s2 > 0.0 {
            leading_order_state(amp.s2.sqrt(), &self.xi, &self.eta.eta, &self.mesh, self.b, cfg.kappa, r)?
        } else {
            GLState::perturbed_normal(&self.mesh, self.b, cfg.kappa, r, PERTURBATION, cfg.seed)?
        })
    }

    /// Minimizer from `seed` and the discrete normal-state energy at the same `r`.
    fn relax(&self, cfg: &RunConfig, seed: &GLState) -> Result<(MinimizeOutcome, f64)> {
        let model = GlModel::new(&self.mesh, self.b, cfg.kappa, seed.r)?;
        let e_normal = model.energy(&GLState::normal(&self.mesh, self.b, cfg.kappa, seed.r)?)?;
        let out = model.minimize(seed, &self.mesh, &cfg.minimize_options())?;
        Ok((out, e_normal))
    }
}

pub fn surface(cfg: &RunConfig, level: u64) -> Result<()> {
    let s = CongruenceSurface::new(level)?;
    let dir = prepare_out(cfg)?;
    let summary = s.summary();
    println!("N            {}", summary.level);
    println!("cusps m      {}", summary.m);
    println!("genus g      {}", summary.g);
    println!("area         {}π", summary.area_over_pi);
    println!("coset index  {}", summary.coset_count);
    let cusps: Vec<String> = summary.cusps.iter().map(|c| if c.q == 0 { "∞".to_string() } else { format!("{}/{}", c.p, c.q) }).collect();
    println!("cusp list    {}", cusps.join(" "));
    write_json(&dir.join("surface.json"), &summary)?;
    write_manifest(dir, "surface", cfg, ExactValues::new(&s, None), &["surface.json"])
}

pub fn mesh(cfg: &RunConfig) -> Result<()> {
    let s = CongruenceSurface::new(cfg.level)?;
    let mesh = build_mesh(cfg, &s)?;
    let dir = prepare_out(cfg)?;
    write_json(&dir.join("mesh.json"), &mesh.export())?;
    println!("nodes {}  triangles {}  edges {}", mesh.nodes.len(), mesh.tris.len(), mesh.edges.len());
    println!("mesh area {}  exact {}", sci(mesh.mesh_area()), sci(mesh.area_exact()));
    write_manifest(dir, "mesh", cfg, ExactValues::new(&s, None), &["mesh.json"])
}

#[derive(Serialize)]
struct SpectrumOutput {
    #[serde(flatten)]
    report: SpectralReport,
    b_exact: String,
    iterations: usize,
    /// Eigenvalues within the relative cluster width of `b`.
    cluster: Vec<f64>,
    dim_cusp_forms: u64,
    dim_counting_formula: u64,
}

pub fn spectrum(cfg: &RunConfig) -> Result<()> {
    let (surface, bundle, b) = surface_and_bundle(cfg)?;
    let dim = dim_cusp_forms_classical(&surface, 2 * b)?;
    let formula = dim_cusp_forms(&surface, 2 * b)?;
    let mesh = build_mesh(cfg, &surface)?;
    let op = assemble(&mesh, &bundle)?;
    let count = cfg.spectrum.count.max(dim as usize + 1).min(MAX_EIGENPAIRS);
    let res = lowest_eigenpairs(&op, count)?;
    let out = SpectrumOutput {
        report: SpectralReport::new(&mesh, &bundle, &res),
        b_exact: bundle.b_ratio().to_string(),
        iterations: res.iterations,
        cluster: cluster(&res, b as f64),
        dim_cusp_forms: dim,
        dim_counting_formula: formula,
    };
    let dir = prepare_out(cfg)?;
    write_json(&dir.join("spectrum.json"), &out)?;
    write_manifest(dir, "spectrum", cfg, ExactValues::new(&surface, Some(&bundle)), &["spectrum.json"])?;
    let shown: Vec<String> = out.report.eigenvalues.iter().map(|l| format!("{l:.6}")).collect();
    println!("b = {}  essential bottom {}", out.b_exact, out.report.ess_bottom_theory);
    println!("eigenvalues {}", shown.join(" "));
    println!("near b: {}  dim S_{}: {}  counting formula: {formula}", out.cluster.len(), 2 * b, dim);
    if out.cluster.len() != dim as usize {
        return Err(Error::DimensionMismatch {
            expected: dim as usize,
            found: out.cluster.len(),
            detail: "eigenvalues near b against the cusp-form count".into(),
        }
        .into());
    }
    Ok(())
}

pub fn cuspform(cfg: &RunConfig) -> Result<()> {
    let (surface, bundle, b) = surface_and_bundle(cfg)?;
    let c = &cfg.cuspform;
    let sample = sample_poincare_line(&surface, c.cusp, c.height, c.points, b as f64, c.bound)?;
    let coeffs = fourier_coefficients(&sample, -c.kmax..=c.kmax)?;
    let dir = prepare_out(cfg)?;
    write_csv(&dir.join("cuspform.csv"), &["x", "y", "re", "im", "tail_bound"], sample.rows().iter().map(|r| r.iter().map(|&v| sci(v)).collect()))?;
    write_csv(&dir.join("fourier.csv"), &["k", "re", "im", "abs"], coeffs.iter().map(|(k, z)| vec![k.to_string(), sci(z.re), sci(z.im), sci(z.norm())]))?;
    write_manifest(dir, "cuspform", cfg, ExactValues::new(&surface, Some(&bundle)), &["cuspform.csv", "fourier.csv"])?;
    println!("{} samples on y = {} of cusp {}; {} Fourier coefficients", sample.values.len(), c.height, c.cusp, coeffs.len());
    Ok(())
}

#[derive(Serialize)]
struct BetaOutput<'a> {
    #[serde(flatten)]
    report: &'a AbrikosovReport,
    dim: usize,
    eigenvalues: &'a [f64],
    /// `(‖dη‖²/|Σ|, ¼(⟨|ξ|⁴⟩ − 1))` on the minimizing direction.
    curvature_identity: (f64, f64),
    /// `(⟨ξ, 2iη·∇ξ⟩/|Σ|, ½(⟨|ξ|²⟩² − ⟨|ξ|⁴⟩))` on the minimizing direction.
    pairing_identity: (f64, f64),
    harmonic_forms: usize,
    b_matrix: Vec<Vec<f64>>,
}

pub fn beta(cfg: &RunConfig) -> Result<()> {
    let g = ground(cfg)?;
    let forms = harmonic_forms(&g.mesh)?;
    let out = BetaOutput {
        report: &g.report,
        dim: g.basis.len(),
        eigenvalues: &g.eigenvalues,
        curvature_identity: curvature_identity(&g.eta, &g.xi, &g.mesh),
        pairing_identity: pairing_identity(&g.eta.eta, &g.xi, &g.mesh, g.b),
        harmonic_forms: forms.len(),
        b_matrix: b_matrix(&forms, &g.xi, &g.mesh),
    };
    let dir = prepare_out(cfg)?;
    write_json(&dir.join("beta.json"), &out)?;
    write_manifest(dir, "beta", cfg, g.exact(), &["beta.json"])?;
    println!("β = {}  β+ = {}  κ_c = {}", sci(g.report.beta), sci(g.report.beta_plus), sci(g.report.kappa_c));
    Ok(())
}

/// Least-squares laws against `x = κ²r − b`, from the points with `x > 0`.
#[derive(Serialize)]
struct Fit {
    points: usize,
    density_slope: f64,
    density_slope_predicted: f64,
    energy_quadratic: f64,
    energy_quadratic_predicted: f64,
}

fn fit(cfg: &RunConfig, g: &Ground, rs: &[f64], density: &[f64], de: &[f64]) -> Result<Option<Fit>> {
    let k2 = cfg.kappa * cfg.kappa;
    let (mut x, mut d, mut e) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..rs.len() {
        let xi = k2 * rs[i] - g.b as f64;
        if xi > 0.0 {
            x.push(xi);
            d.push(density[i]);
            e.push(de[i]);
        }
    }
    if x.len() < 3 {
        return Ok(None);
    }
    let denom = (k2 - 0.5) * g.report.beta + 0.5;
    Ok(Some(Fit {
        points: x.len(),
        density_slope: fit_line(&x, &d)?[1],
        density_slope_predicted: 1.0 / denom,
        energy_quadratic: fit_quadratic(&x, &e)?[2],
        energy_quadratic_predicted: -g.mesh.area_exact() / (4.0 * denom),
    }))
}

#[derive(Serialize)]
struct MeasuredPoint {
    r: f64,
    mean_density: f64,
    energy: f64,
    e_normal: f64,
    status: Status,
    iterations: usize,
}

pub fn bifurcate(cfg: &RunConfig, measure: bool) -> Result<()> {
    let g = ground(cfg)?;
    let forms = harmonic_forms(&g.mesh)?;
    let rs = cfg.sweep_values();
    let mut points = Vec::with_capacity(rs.len());
    let mut measured = Vec::new();
    for &r in &rs {
        let mut p = BranchPoint::predict(r, cfg.kappa, g.b as f64, g.report.beta, g.mesh.area_exact(), forms.len(), Vec::new())?;
        if measure {
            let (out, e_normal) = g.relax(cfg, &g.seed(cfg, r)?)?;
            let energy = out.state.energy.unwrap_or(f64::NAN);
            p.de_measured = Some(energy - e_normal);
            measured.push(MeasuredPoint { r, mean_density: out.state.mean_density(&g.mesh), energy, e_normal, status: out.status, iterations: out.iterations });
        }
        points.push(p);
    }
    let dir = prepare_out(cfg)?;
    write_csv(&dir.join("branch.csv"), &BRANCH_CSV_HEADER, points.iter().map(|p| p.row().iter().map(|&v| sci(v)).collect()))?;
    let mut outputs = vec!["branch.csv"];
    if measure {
        let dens: Vec<f64> = measured.iter().map(|m| m.mean_density).collect();
        let de: Vec<f64> = points.iter().map(|p| p.de_measured.unwrap_or(f64::NAN)).collect();
        #[derive(Serialize)]
        struct Measured<'a> {
            points: &'a [MeasuredPoint],
            fit: Option<Fit>,
        }
        write_json(&dir.join("measured.json"), &Measured { points: &measured, fit: fit(cfg, &g, &rs, &dens, &de)? })?;
        outputs.push("measured.json");
    }
    write_manifest(dir, "bifurcate", cfg, g.exact(), &outputs)?;
    let valid = points.iter().filter(|p| p.valid).count();
    println!("β = {}  κ_c = {}  {} of {} sweep points on a valid branch", sci(g.report.beta), sci(g.report.kappa_c), valid, points.len());
    not_converged(measured.iter().map(|m| (m.status, m.iterations)))
}

fn not_converged(runs: impl IntoIterator<Item = (Status, usize)>) -> Result<()> {
    match runs.into_iter().find(|(s, _)| *s != Status::Converged) {
        Some((status, iterations)) => Err(CliError::NotConverged { status, iterations }),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct SolveSummary {
    kappa: f64,
    r: f64,
    b: i64,
    status: Status,
    iterations: usize,
    energy: f64,
    e_normal: f64,
    de: f64,
    de_predicted: f64,
    mean_density: f64,
    s2_predicted: f64,
    section_residual: Option<f64>,
    curvature_residual: Option<f64>,
    supercurrent_coclosed: f64,
    /// Energy in the unscaled metric.
    energy_unscaled: f64,
}

pub fn solve(cfg: &RunConfig) -> Result<()> {
    let g = ground(cfg)?;
    let seed = g.seed(cfg, cfg.r)?;
    let (out, e_normal) = g.relax(cfg, &seed)?;
    let model = GlModel::new(&g.mesh, g.b, cfg.kappa, cfg.r)?;
    let energy = out.state.energy.unwrap_or(f64::NAN);
    let (_, de_predicted) = energy_expansion(cfg.r, cfg.kappa, g.b as f64, g.report.beta, g.mesh.area_exact());
    let summary = SolveSummary {
        kappa: cfg.kappa,
        r: cfg.r,
        b: g.b,
        status: out.status,
        iterations: out.iterations,
        energy,
        e_normal,
        de: energy - e_normal,
        de_predicted,
        mean_density: out.state.mean_density(&g.mesh),
        s2_predicted: s_squared(cfg.r, cfg.kappa, g.b as f64, g.report.beta).s2,
        section_residual: out.state.section_residual,
        curvature_residual: out.state.curvature_residual,
        supercurrent_coclosed: model.supercurrent_coclosed_residual(&out.state)?,
        energy_unscaled: unscale(&out.state, energy)?.energy,
    };
    let dir = prepare_out(cfg)?;
    write_json(&dir.join("state.json"), &out.state)?;
    write_json(&dir.join("summary.json"), &summary)?;
    write_trace(&dir.join("trace.csv"), &out)?;
    write_manifest(dir, "solve", cfg, g.exact(), &["state.json", "summary.json", "trace.csv"])?;
    println!("{:?} after {} iterations: E − E_normal = {}, ⟨|ψ|²⟩ = {}", out.status, out.iterations, sci(summary.de), sci(summary.mean_density));
    not_converged([(out.status, out.iterations)])
}

fn write_trace(path: &Path, out: &MinimizeOutcome) -> Result<()> {
    write_csv(
        path,
        &TRACE_CSV_HEADER,
        out.trace.iter().map(|t| vec![t.iter.to_string(), sci(t.energy), sci(t.grad_norm_psi), sci(t.grad_norm_alpha), sci(t.step)]),
    )
}

pub const SWEEP_CSV_HEADER: [&str; 10] = ["r", "x", "mean_density", "energy", "E_normal", "dE", "s2_predicted", "dE_predicted", "iterations", "converged"];

/// Continuation in `r`: each point starts from the previous minimizer unless
/// that one relaxed to the normal state.
pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let g = ground(cfg)?;
    let rs = cfg.sweep_values();
    let k2 = cfg.kappa * cfg.kappa;
    let (mut rows, mut dens, mut des, mut runs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut prev: Option<GLState> = None;
    for &r in &rs {
        let seed = match prev.take() {
            Some(s) if s.mean_density(&g.mesh) > 1e-10 => GLState::new(s.psi, s.alpha, cfg.kappa, r, g.b)?,
            _ => g.seed(cfg, r)?,
        };
        let (out, e_normal) = g.relax(cfg, &seed)?;
        let energy = out.state.energy.unwrap_or(f64::NAN);
        let density = out.state.mean_density(&g.mesh);
        let amp = s_squared(r, cfg.kappa, g.b as f64, g.report.beta);
        let (_, de_pred) = energy_expansion(r, cfg.kappa, g.b as f64, g.report.beta, g.mesh.area_exact());
        rows.push(vec![
            sci(r),
            sci(k2 * r - g.b as f64),
            sci(density),
            sci(energy),
            sci(e_normal),
            sci(energy - e_normal),
            sci(amp.s2),
            sci(de_pred),
            out.iterations.to_string(),
            (out.status == Status::Converged).to_string(),
        ]);
        dens.push(density);
        des.push(energy - e_normal);
        runs.push((out.status, out.iterations));
        prev = Some(out.state);
    }
    let dir = prepare_out(cfg)?;
    write_csv(&dir.join("sweep.csv"), &SWEEP_CSV_HEADER, rows)?;
    write_json(&dir.join("fit.json"), &fit(cfg, &g, &rs, &dens, &des)?)?;
    write_manifest(dir, "sweep", cfg, g.exact(), &["sweep.csv", "fit.json"])?;
    println!("{} sweep points, β = {}", rs.len(), sci(g.report.beta));
    not_converged(runs)
}
