use crate::camera::Vec3;

const MAX_CELLS_PER_AXIS: usize = 256;

pub(crate) fn dist_sq(a: &Vec3, b: &Vec3) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    dx * dx + dy * dy + dz * dz
}

/// Uniform bucket grid over a point set for exact nearest-neighbour queries.
///
/// Cells are visited in rings of growing Chebyshev radius around the query's
/// cell until the best distance found is no larger than the distance to any
/// unvisited cell.
#[derive(Debug, Clone)]
pub struct PointGrid<'a> {
    points: &'a [Vec3],
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    order: Vec<u32>,
}

impl<'a> PointGrid<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if points.is_empty() {
            lo = Vec3::zeros();
            hi = Vec3::zeros();
        }
        let extent = hi - lo;
        let n = points.len().max(1) as f64;
        let mut cell = extent.max() / n.cbrt();
        if !(cell > 0.0) {
            cell = 1.0;
        }
        let max_extent = extent.max();
        if max_extent / cell > MAX_CELLS_PER_AXIS as f64 {
            cell = max_extent / MAX_CELLS_PER_AXIS as f64;
        }
        let dims = [0, 1, 2].map(|a| ((extent[a] / cell).floor() as usize + 1).min(MAX_CELLS_PER_AXIS));
        let mut grid = Self {
            points,
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            order: Vec::new(),
        };
        let cells: Vec<usize> = points.iter().map(|p| grid.linear(grid.cell_of(p))).collect();
        let mut counts = vec![0usize; dims[0] * dims[1] * dims[2] + 1];
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut order = vec![0u32; points.len()];
        for (i, &c) in cells.iter().enumerate() {
            order[fill[c]] = i as u32;
            fill[c] += 1;
        }
        grid.starts = counts;
        grid.order = order;
        grid
    }

    fn cell_of(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let t = ((p[a] - self.origin[a]) / self.cell).floor();
            if t < 0.0 {
                0
            } else {
                (t as usize).min(self.dims[a] - 1)
            }
        })
    }

    fn linear(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    fn scan_cell(&self, c: [usize; 3], q: &Vec3, best: &mut f64) {
        let l = self.linear(c);
        for &i in &self.order[self.starts[l]..self.starts[l + 1]] {
            let d = dist_sq(q, &self.points[i as usize]);
            if d < *best {
                *best = d;
            }
        }
    }

    /// Squared distance to the nearest point, or infinity for an empty set.
    pub fn nearest_sq(&self, q: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        if self.points.is_empty() {
            return best;
        }
        let c = self.cell_of(q);
        let ci = c.map(|v| v as i64);
        let dims = self.dims.map(|v| v as i64);
        for r in 0i64.. {
            let range = |a: usize| (ci[a] - r).max(0)..=(ci[a] + r).min(dims[a] - 1);
            for i in range(0) {
                for j in range(1) {
                    let on_shell_ij = (i - ci[0]).abs() == r || (j - ci[1]).abs() == r;
                    for k in range(2) {
                        if on_shell_ij || (k - ci[2]).abs() == r {
                            self.scan_cell([i as usize, j as usize, k as usize], q, &mut best);
                        }
                    }
                }
            }
            // Distance from q to the nearest face of the visited box that
            // still has cells beyond it.
            let mut bound = f64::INFINITY;
            for a in 0..3 {
                if ci[a] - r > 0 {
                    let face = self.origin[a] + (ci[a] - r) as f64 * self.cell;
                    bound = bound.min((q[a] - face).max(0.0));
                }
                if ci[a] + r < dims[a] - 1 {
                    let face = self.origin[a] + (ci[a] + r + 1) as f64 * self.cell;
                    bound = bound.min((face - q[a]).max(0.0));
                }
            }
            if bound == f64::INFINITY {
                break;
            }
            // Slack for points binned across a face by rounding.
            let bound = (bound - self.cell * 1e-9).max(0.0);
            if best <= bound * bound {
                break;
            }
        }
        best
    }
}
