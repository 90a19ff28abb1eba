//! P1 finite element operators on the disk and its boundary polyline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::BulkSurfaceMesh;
use crate::params::DomainGeometry;
use crate::sparse::CsrMatrix;

/// A pair of nodal vectors, one on the bulk nodes and one on the surface
/// nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkSurfaceField {
    pub bulk: Vec<f64>,
    pub surface: Vec<f64>,
}

impl BulkSurfaceField {
    pub fn new(bulk: Vec<f64>, surface: Vec<f64>) -> Self {
        Self { bulk, surface }
    }

    pub fn zeros(nb: usize, ns: usize) -> Self {
        Self::constant(nb, ns, 0.0, 0.0)
    }

    pub fn constant(nb: usize, ns: usize, bulk: f64, surface: f64) -> Self {
        Self { bulk: vec![bulk; nb], surface: vec![surface; ns] }
    }

    pub fn bulk_len(&self) -> usize {
        self.bulk.len()
    }

    pub fn surface_len(&self) -> usize {
        self.surface.len()
    }

    /// Concatenation `[bulk, surface]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.bulk.len() + self.surface.len());
        v.extend_from_slice(&self.bulk);
        v.extend_from_slice(&self.surface);
        v
    }

    pub fn from_flat(nb: usize, flat: &[f64]) -> Self {
        Self { bulk: flat[..nb].to_vec(), surface: flat[nb..].to_vec() }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            bulk: self.bulk.iter().map(|&v| f(v)).collect(),
            surface: self.surface.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        assert_eq!(self.bulk.len(), other.bulk.len());
        assert_eq!(self.surface.len(), other.surface.len());
        Self {
            bulk: self.bulk.iter().zip(&other.bulk).map(|(a, b)| a + s * b).collect(),
            surface: self.surface.iter().zip(&other.surface).map(|(a, b)| a + s * b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    /// Largest nodal magnitude over both parts.
    pub fn max_abs(&self) -> f64 {
        self.bulk.iter().chain(&self.surface).fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Bulk,
    Surface,
}

/// Assembled mass and stiffness operators plus the element geometry needed
/// by the convection terms.
#[derive(Debug, Clone)]
pub struct FemOperators {
    pub bulk_mass: CsrMatrix,
    pub bulk_stiffness: CsrMatrix,
    pub surface_mass: CsrMatrix,
    pub surface_stiffness: CsrMatrix,
    pub bulk_mass_lumped: Vec<f64>,
    pub surface_mass_lumped: Vec<f64>,
    /// Surface node `j` is the trace of bulk node `trace[j]`.
    pub trace: Vec<usize>,
    pub triangles: Vec<[usize; 3]>,
    pub element_area: Vec<f64>,
    /// Gradients of the three barycentric basis functions per triangle.
    pub element_grad: Vec<[[f64; 2]; 3]>,
    /// Surface edge `j` joins surface nodes `j` and `j+1 mod N`.
    pub edge_length: Vec<f64>,
    pub edge_tangent: Vec<[f64; 2]>,
    /// Triangle owning each surface edge.
    pub edge_triangle: Vec<usize>,
    /// Largest triangle edge, used for Péclet and CFL estimates.
    pub h_max: f64,
}

struct Element {
    area: f64,
    grad: [[f64; 2]; 3],
}

fn element(mesh: &BulkSurfaceMesh, idx: usize) -> Result<Element> {
    let t = mesh.triangles[idx];
    let p = t.map(|i| mesh.nodes[i]);
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
    let area = 0.5 * det;
    if !(area > 1e-14 * mesh.radius * mesh.radius) {
        return Err(Error::DegenerateElement { triangle: idx, area });
    }
    let mut grad = [[0.0; 2]; 3];
    for a in 0..3 {
        let (b, c) = (p[(a + 1) % 3], p[(a + 2) % 3]);
        grad[a] = [(b[1] - c[1]) / det, (c[0] - b[0]) / det];
    }
    Ok(Element { area, grad })
}

/// Local P1 stiffness matrix `∫∇λ_a·∇λ_b` of one triangle.
pub fn local_stiffness(area: f64, grad: &[[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            k[a][b] = area * (grad[a][0] * grad[b][0] + grad[a][1] * grad[b][1]);
        }
    }
    k
}

/// Assembles all operators. Element contributions are computed in parallel
/// and summed in element order, so the result does not depend on the
/// thread count.
pub fn assemble(mesh: &BulkSurfaceMesh) -> Result<FemOperators> {
    let nb = mesh.bulk_len();
    let ns = mesh.surface_len();
    let elements: Vec<Element> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|i| element(mesh, i))
        .collect::<Result<_>>()?;

    let mut mass_t = Vec::with_capacity(9 * elements.len());
    let mut stiff_t = Vec::with_capacity(9 * elements.len());
    let mut bulk_lumped = vec![0.0; nb];
    for (t, e) in mesh.triangles.iter().zip(&elements) {
        let k = local_stiffness(e.area, &e.grad);
        for a in 0..3 {
            bulk_lumped[t[a]] += e.area / 3.0;
            for b in 0..3 {
                let m = if a == b { e.area / 6.0 } else { e.area / 12.0 };
                mass_t.push((t[a], t[b], m));
                stiff_t.push((t[a], t[b], k[a][b]));
            }
        }
    }

    let mut smass_t = Vec::with_capacity(4 * ns);
    let mut sstiff_t = Vec::with_capacity(4 * ns);
    let mut surface_lumped = vec![0.0; ns];
    let mut edge_length = Vec::with_capacity(ns);
    let mut edge_tangent = Vec::with_capacity(ns);
    for (a, b) in mesh.surface_edges() {
        let (pa, pb) = (mesh.nodes[mesh.boundary[a]], mesh.nodes[mesh.boundary[b]]);
        let d = [pb[0] - pa[0], pb[1] - pa[1]];
        let h = d[0].hypot(d[1]);
        edge_length.push(h);
        edge_tangent.push([d[0] / h, d[1] / h]);
        surface_lumped[a] += h / 2.0;
        surface_lumped[b] += h / 2.0;
        for (i, j, m, k) in [(a, a, h / 3.0, 1.0 / h), (b, b, h / 3.0, 1.0 / h), (a, b, h / 6.0, -1.0 / h), (b, a, h / 6.0, -1.0 / h)] {
            smass_t.push((i, j, m));
            sstiff_t.push((i, j, k));
        }
    }

    // owner triangle of each boundary edge
    let mut edge_triangle = vec![usize::MAX; ns];
    for (idx, t) in mesh.triangles.iter().enumerate() {
        for a in 0..3 {
            let (u, v) = (t[a], t[(a + 1) % 3]);
            if let (Some(j), Some(k)) = (mesh.surface_index[u], mesh.surface_index[v]) {
                if k == (j + 1) % ns {
                    edge_triangle[j] = idx;
                }
            }
        }
    }
    if let Some(j) = edge_triangle.iter().position(|&t| t == usize::MAX) {
        return Err(Error::InvalidParameter { name: "mesh", reason: format!("surface edge {j} has no triangle") });
    }

    Ok(FemOperators {
        bulk_mass: CsrMatrix::from_triplets(nb, nb, &mass_t),
        bulk_stiffness: CsrMatrix::from_triplets(nb, nb, &stiff_t),
        surface_mass: CsrMatrix::from_triplets(ns, ns, &smass_t),
        surface_stiffness: CsrMatrix::from_triplets(ns, ns, &sstiff_t),
        bulk_mass_lumped: bulk_lumped,
        surface_mass_lumped: surface_lumped,
        trace: mesh.boundary.clone(),
        triangles: mesh.triangles.clone(),
        element_area: elements.iter().map(|e| e.area).collect(),
        element_grad: elements.iter().map(|e| e.grad).collect(),
        edge_length,
        edge_tangent,
        edge_triangle,
        h_max: mesh.quality.h_max,
    })
}

impl FemOperators {
    pub fn bulk_len(&self) -> usize {
        self.bulk_mass_lumped.len()
    }

    pub fn surface_len(&self) -> usize {
        self.surface_mass_lumped.len()
    }

    /// `|Ω_h|` and `|Γ_h|`.
    pub fn geometry(&self) -> DomainGeometry {
        DomainGeometry {
            bulk_measure: self.bulk_mass_lumped.iter().sum(),
            surface_measure: self.surface_mass_lumped.iter().sum(),
        }
    }

    /// `∫_Ω u`. Exact for P1 functions since lumped and consistent mass
    /// have equal row sums.
    pub fn integrate_bulk(&self, u: &[f64]) -> f64 {
        self.bulk_mass_lumped.iter().zip(u).map(|(m, v)| m * v).sum()
    }

    pub fn integrate_surface(&self, u: &[f64]) -> f64 {
        self.surface_mass_lumped.iter().zip(u).map(|(m, v)| m * v).sum()
    }

    /// Bulk values at the surface nodes.
    pub fn trace_of(&self, bulk: &[f64]) -> Vec<f64> {
        self.trace.iter().map(|&b| bulk[b]).collect()
    }

    /// Lumped-mass quadrature `Σ m_i f(u_i)` over the chosen domain.
    pub fn integrate_nonlinear(
        &self,
        f: impl Fn(f64) -> Result<f64>,
        field: &[f64],
        domain: Domain,
    ) -> Result<f64> {
        let weights = match domain {
            Domain::Bulk => &self.bulk_mass_lumped,
            Domain::Surface => &self.surface_mass_lumped,
        };
        if field.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: weights.len(), got: field.len() });
        }
        let mut acc = 0.0;
        for (node, (m, &u)) in weights.iter().zip(field).enumerate() {
            let v = f(u).map_err(|e| match e {
                Error::SingularDomain { value, .. } => Error::SingularDomain { value, node: Some(node) },
                other => other,
            })?;
            if !v.is_finite() {
                return Err(Error::SingularDomain { value: u, node: Some(node) });
            }
            acc += m * v;
        }
        Ok(acc)
    }

    /// Lumped `L²` inner product of two fields.
    pub fn l2_inner(&self, a: &BulkSurfaceField, b: &BulkSurfaceField) -> f64 {
        let bulk: f64 = (0..a.bulk.len()).map(|i| self.bulk_mass_lumped[i] * a.bulk[i] * b.bulk[i]).sum();
        let surface: f64 =
            (0..a.surface.len()).map(|j| self.surface_mass_lumped[j] * a.surface[j] * b.surface[j]).sum();
        bulk + surface
    }

    /// `‖u‖²_{H¹(Ω)} + ‖v‖²_{H¹(Γ)}` with lumped `L²` parts.
    pub fn h1_norm_sq(&self, f: &BulkSurfaceField) -> f64 {
        self.bulk_stiffness.bilinear(&f.bulk, &f.bulk)
            + self.surface_stiffness.bilinear(&f.surface, &f.surface)
            + self.l2_inner(f, f)
    }

    /// Lumped mass on the concatenated `[bulk, surface]` index space.
    pub fn full_mass_lumped(&self) -> Vec<f64> {
        let mut m = self.bulk_mass_lumped.clone();
        m.extend_from_slice(&self.surface_mass_lumped);
        m
    }

    pub fn check_field(&self, f: &BulkSurfaceField) -> Result<()> {
        if f.bulk.len() != self.bulk_len() {
            return Err(Error::DimensionMismatch { expected: self.bulk_len(), got: f.bulk.len() });
        }
        if f.surface.len() != self.surface_len() {
            return Err(Error::DimensionMismatch { expected: self.surface_len(), got: f.surface.len() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_disk_mesh;
    use crate::potential::SplitPotential;
    use std::f64::consts::PI;

    #[test]
    fn stiffness_kernel_and_mass_sums() {
        let mesh = build_disk_mesh(1.0, 3).unwrap();
        let ops = assemble(&mesh).unwrap();
        let ones = vec![1.0; ops.bulk_len()];
        assert!(ops.bulk_stiffness.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
        let sones = vec![1.0; ops.surface_len()];
        assert!(ops.surface_stiffness.mul_vec(&sones).iter().all(|v| v.abs() < 1e-12));
        assert!((ops.bulk_mass.bilinear(&ones, &ones) - mesh.area()).abs() < 1e-12);
        assert!((ops.surface_mass.bilinear(&sones, &sones) - mesh.perimeter()).abs() < 1e-12);
        assert!(ops.bulk_mass.asymmetry() == 0.0 && ops.bulk_stiffness.asymmetry() < 1e-15);
    }

    #[test]
    fn single_triangle_galerkin_consistency() {
        // reference triangle (0,0), (1,0), (0,1): u = x, v = y gives ∫∇u·∇v = 0, ∫|∇u|² = 1/2
        let grad = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        let k = local_stiffness(0.5, &grad);
        let x = [0.0, 1.0, 0.0];
        let y = [0.0, 0.0, 1.0];
        let form = |u: &[f64; 3], v: &[f64; 3]| -> f64 {
            (0..3).flat_map(|a| (0..3).map(move |b| (a, b))).map(|(a, b)| u[a] * k[a][b] * v[b]).sum()
        };
        assert!((form(&x, &x) - 0.5).abs() < 1e-12);
        assert!(form(&x, &y).abs() < 1e-12);
        let w = [2.0, 3.0, 5.0]; // 2 + x + 3y
        assert!((form(&w, &w) - 0.5 * (1.0 + 9.0)).abs() < 1e-12);
    }

    #[test]
    fn linear_dirichlet_energy() {
        let mesh = build_disk_mesh(1.0, 4).unwrap();
        let ops = assemble(&mesh).unwrap();
        let x: Vec<f64> = mesh.nodes.iter().map(|p| p[0]).collect();
        let energy = ops.bulk_stiffness.bilinear(&x, &x);
        // exact for the polygon, whose area converges to π
        assert!((energy - mesh.area()).abs() < 1e-12);
        assert!((energy - PI).abs() < 5e-3);
    }

    #[test]
    fn surface_stiffness_matches_difference_laplacian() {
        let mesh = build_disk_mesh(1.0, 0).unwrap();
        let ops = assemble(&mesh).unwrap();
        let n = ops.surface_len();
        let u: Vec<f64> = (0..n).map(|j| ((j * j) % 7) as f64 - 2.5).collect();
        let au = ops.surface_stiffness.mul_vec(&u);
        for j in 0..n {
            let (prev, next) = ((j + n - 1) % n, (j + 1) % n);
            let h_prev = ops.edge_length[prev];
            let h_next = ops.edge_length[j];
            let fd = (u[j] - u[prev]) / h_prev + (u[j] - u[next]) / h_next;
            assert!((au[j] - fd).abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_energy_of_paraboloid_converges_quadratically() {
        // u = x² + y², ∫|∇u|² = ∫4r² = 2π
        let mut errs = Vec::new();
        for level in 2..=5 {
            let mesh = build_disk_mesh(1.0, level).unwrap();
            let ops = assemble(&mesh).unwrap();
            let u: Vec<f64> = mesh.nodes.iter().map(|p| p[0] * p[0] + p[1] * p[1]).collect();
            errs.push((ops.bulk_stiffness.bilinear(&u, &u) - 2.0 * PI).abs());
        }
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate > 1.8, "rate {rate} from {errs:?}");
        }
    }

    #[test]
    fn integrate_nonlinear_cases() {
        let mesh = build_disk_mesh(1.0, 4).unwrap();
        let ops = assemble(&mesh).unwrap();
        let geom = ops.geometry();
        let c = vec![0.3; ops.bulk_len()];
        let v = ops.integrate_nonlinear(|s| Ok(s), &c, Domain::Bulk).unwrap();
        assert!((v - 0.3 * geom.bulk_measure).abs() < 1e-13);
        let zero = vec![0.0; ops.surface_len()];
        assert_eq!(ops.integrate_nonlinear(|s| Ok(s * s), &zero, Domain::Surface).unwrap(), 0.0);
        let w = SplitPotential::log(1.0, 2.0);
        let half = vec![0.5; ops.bulk_len()];
        let e = ops.integrate_nonlinear(|s| w.eval(s).map(|p| p.0), &half, Domain::Bulk).unwrap();
        assert!((e / geom.bulk_measure + 0.11919).abs() < 1e-5);
        assert!((geom.bulk_measure - PI).abs() < 5e-3);
        let mut bad = half.clone();
        bad[17] = 1.0;
        let err = ops.integrate_nonlinear(|s| w.eval(s).map(|p| p.0), &bad, Domain::Bulk).unwrap_err();
        assert_eq!(err, Error::SingularDomain { value: 1.0, node: Some(17) });
    }
}
