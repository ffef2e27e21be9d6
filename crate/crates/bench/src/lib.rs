//! Fixtures shared by the benchmarks.

use hypgl::bundle::BundleData;
use hypgl::group::CongruenceSurface;
use hypgl::mesh::TruncatedMesh;

/// Γ(N) with a bundle of the given degree on a mesh of size `h`, truncated at `y`.
pub fn fixture(level: u64, degree: u64, y: f64, h: f64) -> (CongruenceSurface, BundleData, TruncatedMesh) {
    let s = CongruenceSurface::new(level).expect("level ≥ 2");
    let bundle = BundleData::new(&s, degree).expect("valid degree");
    let mesh = TruncatedMesh::new(&s, y, h).expect("mesh builds");
    (s, bundle, mesh)
}
