//! Extracted surface meshes and their provenance records.

use nalgebra::Point3;
use std::collections::HashMap;

/// Where a surface vertex came from: the first tetrahedron that generated it
/// and the grid edge it interpolates, `p = x_a + t * (x_b - x_a)` with
/// `grid_a < grid_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexProvenance {
    pub tet: u32,
    pub grid_a: u32,
    pub grid_b: u32,
    pub t: f64,
}

/// Indexed triangle mesh in millimetres, outward-oriented.
#[derive(Debug, Clone, Default)]
pub struct SurfaceMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub class_id: usize,
    pub provenance: Vec<VertexProvenance>,
    /// Set when the zero level set touched the grid boundary; the mesh is
    /// returned anyway but is not a closed 2-manifold.
    pub open_surface: bool,
}

impl SurfaceMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// True when every undirected edge is used by exactly two triangles, in
    /// opposite directions (closed, consistently oriented 2-manifold).
    pub fn is_watertight(&self) -> bool {
        if self.triangles.is_empty() {
            return true;
        }
        // value: (uses, net direction). Opposite traversal directions cancel.
        let mut edges: HashMap<(u32, u32), (u32, i32)> = HashMap::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let a = tri[e];
                let b = tri[(e + 1) % 3];
                if a == b {
                    return false;
                }
                let key = (a.min(b), a.max(b));
                let dir = if a < b { 1 } else { -1 };
                let entry = edges.entry(key).or_insert((0, 0));
                entry.0 += 1;
                entry.1 += dir;
            }
        }
        edges.values().all(|&(uses, net)| uses == 2 && net == 0)
    }

    /// Total surface area in mm^2.
    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let a = self.vertices[t[0] as usize];
                let b = self.vertices[t[1] as usize];
                let c = self.vertices[t[2] as usize];
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }

    /// Axis-aligned bounding box, `None` for an empty mesh.
    pub fn bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        let first = *self.vertices.first()?;
        let mut lo = first;
        let mut hi = first;
        for v in &self.vertices {
            for i in 0..3 {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        Some((lo, hi))
    }

    /// Flips triangle orientation in place.
    pub fn reverse_orientation(&mut self) {
        for tri in &mut self.triangles {
            tri.swap(1, 2);
        }
    }
}
