//! Exact nearest-neighbor queries over a uniform grid.
//!
//! Queries expand cell rings outward until the ring bound exceeds the best
//! candidate, so results equal brute force. Ties break to the lowest point
//! index regardless of scan order.

use nalgebra::Point3;

#[derive(Debug, Clone)]
pub struct PointGrid {
    points: Vec<Point3<f64>>,
    origin: Point3<f64>,
    cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl PointGrid {
    pub fn build(points: &[Point3<f64>]) -> PointGrid {
        assert!(!points.is_empty(), "PointGrid needs at least one point");
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            for i in 0..3 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let max_extent = (0..3).map(|i| hi[i] - lo[i]).fold(0.0f64, f64::max);
        let cell = (max_extent / 48.0).max(1e-9);
        let mut dims = [1usize; 3];
        for i in 0..3 {
            dims[i] = (((hi[i] - lo[i]) / cell).floor() as usize + 1).min(64);
        }
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let mut grid = PointGrid {
            points: points.to_vec(),
            origin: lo,
            cell,
            dims,
            cells: Vec::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let c = grid.cell_of(p);
            cells[grid.cell_index(c)].push(i as u32);
        }
        grid.cells = cells;
        grid
    }

    #[inline]
    fn cell_of(&self, p: &Point3<f64>) -> [usize; 3] {
        let mut c = [0usize; 3];
        for i in 0..3 {
            let f = ((p[i] - self.origin[i]) / self.cell).floor();
            c[i] = (f.max(0.0) as usize).min(self.dims[i] - 1);
        }
        c
    }

    #[inline]
    fn cell_index(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Point3<f64> {
        self.points[i]
    }

    /// Index and squared distance of the nearest point; ties go to the
    /// lowest index.
    pub fn nearest(&self, q: &Point3<f64>) -> (usize, f64) {
        let c0 = self.cell_of(q);
        let mut best = (usize::MAX, f64::INFINITY);
        let max_ring = *self.dims.iter().max().unwrap();
        for r in 0..=max_ring {
            self.scan_ring(c0, r, |idx| {
                let d2 = (self.points[idx as usize] - q).norm_squared();
                let idx = idx as usize;
                if d2 < best.1 || (d2 == best.1 && idx < best.0) {
                    best = (idx, d2);
                }
            });
            if best.1.is_finite() {
                // Unscanned cells are at Chebyshev ring > r; any point there
                // is at least r*cell away when q lies in (or clamps to) c0.
                let bound = r as f64 * self.cell;
                if best.1 <= bound * bound {
                    break;
                }
            }
        }
        debug_assert!(best.0 != usize::MAX);
        best
    }

    fn scan_ring(&self, c0: [usize; 3], r: usize, mut visit: impl FnMut(u32)) {
        let lo: Vec<i64> = (0..3).map(|i| c0[i] as i64 - r as i64).collect();
        let hi: Vec<i64> = (0..3).map(|i| c0[i] as i64 + r as i64).collect();
        for z in lo[2]..=hi[2] {
            if z < 0 || z >= self.dims[2] as i64 {
                continue;
            }
            for y in lo[1]..=hi[1] {
                if y < 0 || y >= self.dims[1] as i64 {
                    continue;
                }
                let on_shell_zy = z == lo[2] || z == hi[2] || y == lo[1] || y == hi[1];
                let mut x = lo[0];
                while x <= hi[0] {
                    if !on_shell_zy && r > 0 && x != lo[0] && x != hi[0] {
                        // interior of the ring box: skip to the far face
                        x = hi[0];
                        continue;
                    }
                    if x >= 0 && x < self.dims[0] as i64 {
                        let ci = self.cell_index([x as usize, y as usize, z as usize]);
                        for &idx in &self.cells[ci] {
                            visit(idx);
                        }
                    }
                    x += 1;
                }
            }
        }
    }
}
