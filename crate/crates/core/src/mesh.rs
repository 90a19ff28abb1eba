//! Triangulated disk with its boundary polyline.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const MAX_LEVEL: u32 = 8;

/// Element quality summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshQuality {
    pub min_area: f64,
    pub max_area: f64,
    /// Longest triangle edge.
    pub h_max: f64,
    pub h_min: f64,
    /// Smallest interior angle in radians.
    pub min_angle: f64,
}

#[derive(Debug, Clone)]
pub struct BulkSurfaceMesh {
    pub radius: f64,
    pub level: u32,
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Surface node `j` sits on bulk node `boundary[j]`; the cycle runs
    /// counter-clockwise and closes from the last entry back to the first.
    pub boundary: Vec<usize>,
    /// Inverse of `boundary`.
    pub surface_index: Vec<Option<usize>>,
    pub quality: MeshQuality,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Triangulates the disk of the given radius.
///
/// Level `ℓ` has `n = 2^(ℓ+1)` concentric rings, ring `k` carrying `6k`
/// equally spaced nodes on the circle of radius `kR/n`. The connectivity is
/// that of the uniformly refined hexagon, so level `ℓ` has `24·4^ℓ`
/// triangles and every refinement quarters the element size.
pub fn build_disk_mesh(radius: f64, level: u32) -> Result<BulkSurfaceMesh> {
    if level > MAX_LEVEL {
        return Err(Error::Resource { level, max: MAX_LEVEL });
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidParameter {
            name: "radius",
            reason: format!("must be positive, got {radius}"),
        });
    }
    let n = 2usize << level;
    let ring_start = |k: usize| if k == 0 { 0 } else { 1 + 3 * k * (k - 1) };
    let node_count = 1 + 3 * n * (n + 1);

    let mut nodes = Vec::with_capacity(node_count);
    nodes.push([0.0, 0.0]);
    for k in 1..=n {
        let rho = radius * k as f64 / n as f64;
        for p in 0..6 * k {
            let theta = 2.0 * PI * p as f64 / (6 * k) as f64;
            nodes.push([rho * theta.cos(), rho * theta.sin()]);
        }
    }
    debug_assert_eq!(nodes.len(), node_count);

    let lattice = |s: usize, i: usize, j: usize| -> usize {
        let k = i + j;
        if k == 0 {
            0
        } else {
            ring_start(k) + (s * k + j) % (6 * k)
        }
    };

    let mut triangles = Vec::with_capacity(6 * n * n);
    for s in 0..6 {
        for i in 0..n {
            for j in 0..n - i {
                triangles.push([lattice(s, i, j), lattice(s, i + 1, j), lattice(s, i, j + 1)]);
                if i + j + 2 <= n {
                    triangles.push([
                        lattice(s, i + 1, j),
                        lattice(s, i + 1, j + 1),
                        lattice(s, i, j + 1),
                    ]);
                }
            }
        }
    }

    let boundary: Vec<usize> = (0..6 * n).map(|p| ring_start(n) + p).collect();
    let mut surface_index = vec![None; node_count];
    for (j, &b) in boundary.iter().enumerate() {
        surface_index[b] = Some(j);
    }

    let mut mesh = BulkSurfaceMesh {
        radius,
        level,
        nodes,
        triangles,
        boundary,
        surface_index,
        quality: MeshQuality {
            min_area: 0.0,
            max_area: 0.0,
            h_max: 0.0,
            h_min: 0.0,
            min_angle: 0.0,
        },
    };
    mesh.quality = mesh.check()?;
    Ok(mesh)
}

impl BulkSurfaceMesh {
    pub fn bulk_len(&self) -> usize {
        self.nodes.len()
    }

    pub fn surface_len(&self) -> usize {
        self.boundary.len()
    }

    /// Area of the triangulated domain.
    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| signed_area(self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]))
            .sum()
    }

    /// Length of the boundary polyline.
    pub fn perimeter(&self) -> f64 {
        self.surface_edges()
            .map(|(a, b)| dist(self.nodes[self.boundary[a]], self.nodes[self.boundary[b]]))
            .sum()
    }

    /// Consecutive surface node pairs `(j, j+1 mod N)`.
    pub fn surface_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.boundary.len();
        (0..n).map(move |j| (j, (j + 1) % n))
    }

    /// Verifies orientation, non-degeneracy and the boundary cycle, and
    /// returns quality metrics.
    pub fn check(&self) -> Result<MeshQuality> {
        let scale = self.radius * self.radius;
        let mut q = MeshQuality {
            min_area: f64::INFINITY,
            max_area: 0.0,
            h_max: 0.0,
            h_min: f64::INFINITY,
            min_angle: PI,
        };
        for (idx, t) in self.triangles.iter().enumerate() {
            let p = [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]];
            let area = signed_area(p[0], p[1], p[2]);
            if !(area > 1e-14 * scale) {
                return Err(Error::DegenerateElement { triangle: idx, area });
            }
            q.min_area = q.min_area.min(area);
            q.max_area = q.max_area.max(area);
            let e = [dist(p[1], p[2]), dist(p[2], p[0]), dist(p[0], p[1])];
            for a in 0..3 {
                q.h_max = q.h_max.max(e[a]);
                q.h_min = q.h_min.min(e[a]);
                let (b, c) = (e[(a + 1) % 3], e[(a + 2) % 3]);
                let cos = ((b * b + c * c - e[a] * e[a]) / (2.0 * b * c)).clamp(-1.0, 1.0);
                q.min_angle = q.min_angle.min(cos.acos());
            }
        }
        // Each boundary edge must be the edge of exactly one triangle, and
        // the cycle must visit every boundary node once.
        let mut edge_count = std::collections::HashMap::new();
        for t in &self.triangles {
            for a in 0..3 {
                let (u, v) = (t[a], t[(a + 1) % 3]);
                *edge_count.entry((u.min(v), u.max(v))).or_insert(0usize) += 1;
            }
        }
        let boundary_edges = edge_count.values().filter(|&&c| c == 1).count();
        if boundary_edges != self.boundary.len() {
            return Err(Error::InvalidParameter {
                name: "mesh",
                reason: format!(
                    "{boundary_edges} boundary edges but a surface cycle of {} nodes",
                    self.boundary.len()
                ),
            });
        }
        for (a, b) in self.surface_edges() {
            let (u, v) = (self.boundary[a], self.boundary[b]);
            if edge_count.get(&(u.min(v), u.max(v))) != Some(&1) {
                return Err(Error::InvalidParameter {
                    name: "mesh",
                    reason: format!("surface edge ({a}, {b}) is not a boundary edge"),
                });
            }
        }
        Ok(q)
    }

    /// Legacy VTK unstructured grid: triangles followed by the boundary
    /// edges as line cells, with a cell field marking the surface.
    pub fn to_vtk(&self) -> String {
        let mut out = String::new();
        let nt = self.triangles.len();
        let ns = self.boundary.len();
        out.push_str("# vtk DataFile Version 3.0\n");
        let _ = writeln!(out, "bulk-surface disk mesh R={} level={}", self.radius, self.level);
        out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
        let _ = writeln!(out, "POINTS {} double", self.nodes.len());
        for p in &self.nodes {
            let _ = writeln!(out, "{:.17e} {:.17e} 0", p[0], p[1]);
        }
        let _ = writeln!(out, "CELLS {} {}", nt + ns, 4 * nt + 3 * ns);
        for t in &self.triangles {
            let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
        }
        for (a, b) in self.surface_edges() {
            let _ = writeln!(out, "2 {} {}", self.boundary[a], self.boundary[b]);
        }
        let _ = writeln!(out, "CELL_TYPES {}", nt + ns);
        for _ in 0..nt {
            out.push_str("5\n");
        }
        for _ in 0..ns {
            out.push_str("3\n");
        }
        let _ = writeln!(out, "CELL_DATA {}", nt + ns);
        out.push_str("SCALARS is_surface int 1\nLOOKUP_TABLE default\n");
        for i in 0..nt + ns {
            out.push_str(if i < nt { "0\n" } else { "1\n" });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_mesh_is_valid() {
        let m = build_disk_mesh(1.0, 0).unwrap();
        assert_eq!(m.triangles.len(), 24);
        assert_eq!(m.bulk_len(), 19);
        assert_eq!(m.surface_len(), 12);
        for &b in &m.boundary {
            let p = m.nodes[b];
            assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-15);
        }
        assert!(m.quality.min_angle > 0.4);
    }

    #[test]
    fn level_limit() {
        assert!(matches!(build_disk_mesh(1.0, 9), Err(Error::Resource { .. })));
    }

    #[test]
    fn area_and_perimeter_converge() {
        // polygon with N boundary vertices: area (N/2) sin(2π/N), perimeter 2N sin(π/N)
        let mut prev_area_err = f64::INFINITY;
        for level in 1..=4 {
            let m = build_disk_mesh(1.0, level).unwrap();
            let nb = m.surface_len() as f64;
            let area = 0.5 * nb * (2.0 * PI / nb).sin();
            let perimeter = 2.0 * nb * (PI / nb).sin();
            assert!((m.area() - area).abs() < 1e-12);
            assert!((m.perimeter() - perimeter).abs() < 1e-12);
            let err = (m.area() - PI).abs();
            assert!(err < prev_area_err / 3.5);
            prev_area_err = err;
        }
        let m = build_disk_mesh(1.0, 4).unwrap();
        assert!((m.area() - PI).abs() <= 5e-3);
        assert!((m.perimeter() - 2.0 * PI).abs() <= 5e-3);
    }

    #[test]
    fn vtk_export_counts() {
        let m = build_disk_mesh(2.0, 1).unwrap();
        let vtk = m.to_vtk();
        assert!(vtk.contains(&format!("POINTS {} double", m.bulk_len())));
        assert!(vtk.contains(&format!("CELL_TYPES {}", m.triangles.len() + m.surface_len())));
    }
}
