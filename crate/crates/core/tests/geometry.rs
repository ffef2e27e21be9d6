use hypgl::bundle::*;
use hypgl::group::*;
use hypgl::mesh::{build_mesh, TruncatedMesh};
use num_complex::Complex64;
use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn hyperbolic_distance(z: Complex64, w: Complex64) -> f64 {
    (1.0 + (z - w).norm_sqr() / (2.0 * z.im * w.im)).acosh()
}

#[test]
fn surface_examples() {
    let s2 = CongruenceSurface::new(2).unwrap();
    assert_eq!((s2.cusp_count, s2.genus, s2.area_over_pi), (3, 0, Ratio::from_integer(2)));
    let s6 = CongruenceSurface::new(6).unwrap();
    assert_eq!((s6.cusp_count, s6.genus, s6.area_over_pi), (12, 1, Ratio::from_integer(24)));
    assert_eq!(CongruenceSurface::new(3).unwrap().area_over_pi, Ratio::from_integer(4));
    assert_eq!(CongruenceSurface::new(7).unwrap().genus, 3);
}

#[test]
fn coset_and_cusp_counts() {
    for n in 2..=12u64 {
        let s = CongruenceSurface::new(n).unwrap();
        assert_eq!(Ratio::from_integer(s.coset_count() as i64), s.area_over_pi * 3);
        assert_eq!(s.cusps.len() as u64, s.cusp_count);
        assert_eq!(s.area_over_pi, Ratio::from_integer(2 * (2 * s.genus as i64 - 2 + s.cusp_count as i64)));
        // representatives are pairwise Γ(N)-inequivalent: distinct ±(p, q) mod N
        let mut keys: Vec<_> = s
            .cusps
            .iter()
            .map(|c| {
                let n = n as i64;
                let p = [c.p.rem_euclid(n), c.q.rem_euclid(n)];
                let m = [(-c.p).rem_euclid(n), (-c.q).rem_euclid(n)];
                p.min(m)
            })
            .collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), s.cusps.len(), "N={n}");
        for c in &s.cusps {
            assert_eq!(c.width, n);
        }
    }
}

#[test]
fn group_law_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let g1 = Moebius::random_member(3, 2, &mut rng);
        let g2 = Moebius::random_member(3, 2, &mut rng);
        let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(0.5..2.0));
        let lhs = (g1 * g2).apply(z).unwrap();
        let rhs = g1.apply(g2.apply(z).unwrap()).unwrap();
        assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + lhs.norm()), "{g1:?} {g2:?} {z}");
        assert!(lhs.im > 0.0);
    }
}

#[test]
fn mobius_imaginary_part_formula() {
    let g = Moebius::new(2, 1, 3, 2).unwrap();
    let z = Complex64::new(0.4, 0.7);
    let w = g.apply(z).unwrap();
    let j = Complex64::new(3.0 * z.re + 2.0, 3.0 * z.im);
    assert!((w.im - z.im / j.norm_sqr()).abs() < 1e-15);
}

#[test]
fn reduction_does_not_decrease_height() {
    let s = CongruenceSurface::new(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let z = Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(0.05..0.6));
        let (w, d) = reduce_to_modular_cell(z).unwrap();
        assert!(w.im >= z.im);
        assert!(w.re.abs() <= 0.5 + 1e-12 && w.norm() >= 1.0 - 1e-12);
        assert!((d.apply(z).unwrap() - w).norm() < 1e-9);
        // brute force over short words cannot beat the reduced height
        let gens = [Moebius::T, Moebius::T.inverse(), Moebius::S];
        let mut best = z.im;
        let mut frontier = vec![Moebius::IDENTITY];
        for _ in 0..4 {
            let mut next = Vec::new();
            for g in &frontier {
                for h in gens {
                    let gh = h * *g;
                    best = best.max(gh.apply(z).unwrap().im);
                    next.push(gh);
                }
            }
            frontier = next;
        }
        assert!(w.im >= best - 1e-12, "{z}: {} < {best}", w.im);
    }
    assert!(s.reduce_point(Complex64::new(0.0, -1.0)).is_err());
}

#[test]
fn cusp_charts_preserve_distance() {
    let s = CongruenceSurface::new(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (ci, c) in s.cusps.iter().enumerate() {
        let inv = c.chart.inverse();
        for _ in 0..20 {
            let w1 = Complex64::new(rng.random_range(0.0..3.0), rng.random_range(1.5..6.0));
            let w2 = Complex64::new(rng.random_range(0.0..3.0), rng.random_range(1.5..6.0));
            let (z1, z2) = (inv.apply(w1).unwrap(), inv.apply(w2).unwrap());
            let (v1, v2) = (s.cusp_coordinates(ci, z1).unwrap(), s.cusp_coordinates(ci, z2).unwrap());
            assert!((v1 - w1).norm() < 1e-9 * w1.norm());
            let (d, dw) = (hyperbolic_distance(z1, z2), hyperbolic_distance(v1, v2));
            assert!((d - dw).abs() < 1e-10 * d.max(1.0), "cusp {ci}: {d} vs {dw}");
        }
    }
}

#[test]
fn weight_degree_round_trip() {
    for n in 2..=8 {
        let s = CongruenceSurface::new(n).unwrap();
        for deg in 1..=6 {
            let bd = BundleData::new(&s, deg).unwrap();
            let (b, k) = weight_degree_convert(&s, deg).unwrap();
            assert!((b - 2.0 * PI * deg as f64 / s.area()).abs() < 1e-12);
            assert_eq!(k, 2.0 * b);
            assert_eq!(bd.b, b);
            if let Some(bi) = bd.integer_b() {
                assert_eq!(degree_from_weight(&s, Ratio::from_integer(2 * bi)).unwrap(), deg);
            }
        }
    }
}

#[test]
fn constant_connection_and_curl() {
    assert_eq!(constant_connection(Complex64::new(0.3, 1.0), 1.0).unwrap(), (1.0, 0.0));
    assert_eq!(constant_connection(Complex64::new(0.3, 2.0), 1.0).unwrap(), (0.5, 0.0));
    assert!(constant_connection(Complex64::new(0.3, 0.0), 1.0).is_err());
    // ∂_x a_y − ∂_y a_x on a small stencil against b/y²
    let b = 2.0;
    for y in [0.5, 1.0, 3.0] {
        let e = 1e-4;
        let ax = |y: f64| constant_connection(Complex64::new(0.0, y), b).unwrap().0;
        let curl = -(ax(y + e) - ax(y - e)) / (2.0 * e);
        assert!((curl - b / (y * y)).abs() < 1e-6 * b / (y * y));
    }
}

#[test]
fn flux_matches_truncated_area() {
    let s2 = CongruenceSurface::new(2).unwrap();
    let mesh = TruncatedMesh::new(&s2, 20.0, 0.2).unwrap();
    let deg = degree_from_flux(&mesh, &mesh.connection_edge_values(1)).unwrap();
    assert!((deg - (1.0 - 3.0 / (40.0 * PI))).abs() < 1e-12);
    assert_eq!(degree_from_flux(&mesh, &mesh.connection_edge_values(0)).unwrap(), 0.0);
    assert!(degree_from_flux(&mesh, &[0.0]).is_err());
    let s6 = CongruenceSurface::new(6).unwrap();
    let mesh = TruncatedMesh::new(&s6, 20.0, 0.25).unwrap();
    let deg = degree_from_flux(&mesh, &mesh.connection_edge_values(1)).unwrap();
    assert!((deg - 12.0 * (1.0 - 12.0 / (20.0 * 24.0 * PI))).abs() < 1e-2);
}

#[test]
fn flux_converges_at_rate_one_over_y() {
    let s = CongruenceSurface::new(2).unwrap();
    let ys = [10.0, 20.0, 40.0];
    let errs: Vec<f64> = ys
        .iter()
        .map(|&y| {
            let mesh = TruncatedMesh::new(&s, y, 0.25).unwrap();
            1.0 - degree_from_flux(&mesh, &mesh.connection_edge_values(1)).unwrap()
        })
        .collect();
    for w in 0..2 {
        let slope = (errs[w + 1] / errs[w]).ln() / (ys[w + 1] / ys[w]).ln();
        assert!((slope + 1.0).abs() < 0.1, "{errs:?}");
    }
}

#[test]
fn gauge_transform_checks() {
    let s = CongruenceSurface::new(2).unwrap();
    let mesh = TruncatedMesh::new(&s, 8.0, 0.25).unwrap();
    let n = mesh.nodes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let psi: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let alpha: Vec<f64> = (0..mesh.edges.len()).map(|_| rng.random_range(-0.1..0.1)).collect();
    let one = vec![Complex64::new(1.0, 0.0); n];
    let (p, a) = gauge_transform(&mesh, &psi, &alpha, &one).unwrap();
    assert_eq!((p, a), (psi.clone(), alpha.clone()));
    let c = vec![Complex64::from_polar(1.0, 0.7); n];
    let (p, a) = gauge_transform(&mesh, &psi, &alpha, &c).unwrap();
    assert!(p.iter().zip(&psi).all(|(x, y)| (x - y * c[0]).norm() < 1e-15));
    assert!(a.iter().zip(&alpha).all(|(x, y)| (x - y).abs() < 1e-15));
    let bad = vec![Complex64::new(2.0, 0.0); n];
    assert!(gauge_transform(&mesh, &psi, &alpha, &bad).is_err());
}

#[test]
fn section_equivariance_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let zs: Vec<Complex64> = (0..10).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(0.5..2.0))).collect();
    let g = Moebius::random_member(2, 2, &mut rng);
    assert_eq!(section_equivariance_residual(|_| Complex64::new(0.0, 0.0), &g, &zs, 2.0).unwrap(), 0.0);
    for k in [1, 5] {
        let t = Moebius::translation(2 * k);
        assert_eq!(connection_equivariance_residual(&t, zs[0], 3.0).unwrap(), 0.0);
    }
}

#[test]
fn mesh_examples() {
    let s2 = CongruenceSurface::new(2).unwrap();
    let m = TruncatedMesh::new(&s2, 10.0, 0.1).unwrap();
    assert!((m.flux_area() - (2.0 * PI - 0.3)).abs() < 1e-10);
    assert!((m.mesh_area() - (2.0 * PI - 0.3)).abs() < 0.01);
    let m20 = TruncatedMesh::new(&s2, 20.0, 0.1).unwrap();
    let ones = vec![1.0; m20.nodes.len()];
    assert!((m20.integrate(&ones) - 6.1332).abs() < 5e-3);
    assert_eq!(m20.integrate(&vec![0.0; m20.nodes.len()]), 0.0);
    let s6 = CongruenceSurface::new(6).unwrap();
    let m6 = TruncatedMesh::new(&s6, 10.0, 0.15).unwrap();
    assert!((m6.flux_area() - (24.0 * PI - 1.2)).abs() < 1e-9);
    assert!((m6.mesh_area() / (24.0 * PI - 1.2) - 1.0).abs() < 5e-3);
    assert!(TruncatedMesh::new(&s2, 4.0, 0.1).is_err());
    assert!(TruncatedMesh::new(&s2, 10.0, 0.6).is_err());
    let b3 = BundleData::new(&CongruenceSurface::new(3).unwrap(), 2).unwrap();
    assert!(build_mesh(&s2, &b3, 10.0, 0.2).is_err());
}

#[test]
fn mesh_area_converges_at_second_order() {
    let s = CongruenceSurface::new(3).unwrap();
    let hs = [0.2, 0.1, 0.05];
    let errs: Vec<f64> = hs
        .iter()
        .map(|&h| {
            let m = TruncatedMesh::new(&s, 10.0, h).unwrap();
            (m.mesh_area() - m.flux_area()).abs()
        })
        .collect();
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let slope = hypgl::solver::fit_line(&lx, &ly).unwrap()[1];
    assert!((slope - 2.0).abs() < 0.2, "{errs:?} slope {slope}");
}

#[test]
fn cusp_cylinder_indicator() {
    // ∫ over cusp ∞ above height 2 of the width-normalized chart is ½ − 1/Y
    let s = CongruenceSurface::new(2).unwrap();
    let y = 10.0;
    for h in [0.1, 0.05] {
        let m = TruncatedMesh::new(&s, y, h).unwrap();
        let f: Vec<f64> = (0..m.nodes.len())
            .map(|i| {
                let z = m.nodes[i].z;
                match s.cusp_coordinates(0, z) {
                    Ok(w) if w.im / 2.0 > 2.0 => 1.0,
                    _ => 0.0,
                }
            })
            .collect();
        let err = (m.integrate(&f) - (0.5 - 1.0 / y)).abs();
        assert!(err < 0.01, "h={h}: {err}");
    }
}

#[test]
fn pairings_and_round_trip() {
    let s = CongruenceSurface::new(3).unwrap();
    let mesh = TruncatedMesh::new(&s, 6.0, 0.3).unwrap();
    let file = mesh.export();
    for &(i, j, g) in &file.pairs {
        let g = Moebius::new(g[0], g[1], g[2], g[3]).unwrap();
        assert!(g.is_member(3));
        let zi = Complex64::new(file.nodes[i][0], file.nodes[i][1]);
        let zj = Complex64::new(file.nodes[j][0], file.nodes[j][1]);
        assert!((g.apply(zi).unwrap() - zj).norm() < 1e-9, "{i} {j}");
    }
    let text = mesh.to_json().unwrap();
    let back = TruncatedMesh::from_json(&text).unwrap();
    assert_eq!(back.to_json().unwrap(), text);
    assert_eq!(back.export(), file);
}

#[test]
fn cusp_form_mass_is_stable_in_y() {
    let s = CongruenceSurface::new(6).unwrap();
    let xi = |z: Complex64| hypgl::spectra::exact_cylinder_eigenfunction(z / 6.0, 1.0).unwrap();
    let mass = |y: f64| {
        let m = TruncatedMesh::new(&s, y, 0.25).unwrap();
        let v = m.sample_section(xi, 1);
        // restrict to the cusp ∞ sheets, where the sample is a decaying mode
        let f: Vec<f64> = (0..m.nodes.len()).map(|i| if m.sheet_cusp(m.node_local(i).0) == 0 { v[i].norm_sqr() } else { 0.0 }).collect();
        m.integrate(&f)
    };
    let (a, b) = (mass(10.0), mass(20.0));
    // the meshes differ with Y, the mass beyond height 10 is below e^{-20π/3}
    assert!((a - b).abs() <= 5e-3 * a, "{a} {b}");
}

proptest! {
    #[test]
    fn cocycle_holds_for_integer_weights(seed in 0u64..1000, b in 1i32..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g1 = Moebius::random_member(2, 3, &mut rng);
        let g2 = Moebius::random_member(2, 3, &mut rng);
        let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(0.2..2.0));
        prop_assert!(cocycle_residual(&g1, &g2, z, b as f64).unwrap() < 1e-12);
        prop_assert!((automorphy_factor(&g1, z, b as f64).unwrap().phase.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn membership_matches_definition(a in -20i64..20, b in -20i64..20, c in -20i64..20, n in 2u64..8) {
        // complete (a, b; c, ?) to determinant one when possible
        if a != 0 && (1 + b * c) % a == 0 {
            let d = (1 + b * c) / a;
            let g = Moebius::new(a, b, c, d).unwrap();
            let n = n as i64;
            let direct = |s: i64| (s * a - 1).rem_euclid(n) == 0 && (s * d - 1).rem_euclid(n) == 0 && b.rem_euclid(n) == 0 && c.rem_euclid(n) == 0;
            prop_assert_eq!(g.is_member(n as u64), direct(1) || direct(-1));
        }
    }
}
