//! Uniform grid bucketing for k-nearest-neighbor and rectangle queries.

use super::Point;
use crate::error::{Error, Result};

/// Bucket index over a borrowed point slice. Cells are square; the cell side
/// is chosen so that a cell holds about two points on average.
#[derive(Debug)]
pub struct GridIndex<'a> {
    points: &'a [Point],
    min_x: f64,
    min_y: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    // CSR layout: points of cell c are items[starts[c]..starts[c + 1]]
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Point]) -> Self {
        let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
        let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        if points.is_empty() {
            (min_x, min_y, max_x, max_y) = (0.0, 0.0, 0.0, 0.0);
        }
        let span_x = max_x - min_x;
        let span_y = max_y - min_y;
        let n = points.len().max(1) as f64;
        let area = (span_x * span_y).max(span_x.max(span_y)).max(1.0);
        let cell = (2.0 * area / n)
            .sqrt()
            .max(span_x / 4000.0)
            .max(span_y / 4000.0)
            .max(1e-6);
        let nx = (span_x / cell).floor() as usize + 1;
        let ny = (span_y / cell).floor() as usize + 1;

        let mut counts = vec![0usize; nx * ny + 1];
        let mut cell_of = Vec::with_capacity(points.len());
        for p in points {
            let cx = (((p.x - min_x) / cell) as usize).min(nx - 1);
            let cy = (((p.y - min_y) / cell) as usize).min(ny - 1);
            let c = cy * nx + cx;
            cell_of.push(c);
            counts[c + 1] += 1;
        }
        for c in 0..nx * ny {
            counts[c + 1] += counts[c];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut items = vec![0usize; points.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            items[fill[c]] = i;
            fill[c] += 1;
        }
        GridIndex {
            points,
            min_x,
            min_y,
            cell,
            nx,
            ny,
            starts,
            items,
        }
    }

    fn cell_coords(&self, p: &Point) -> (isize, isize) {
        let cx = ((p.x - self.min_x) / self.cell).floor() as isize;
        let cy = ((p.y - self.min_y) / self.cell).floor() as isize;
        (
            cx.clamp(0, self.nx as isize - 1),
            cy.clamp(0, self.ny as isize - 1),
        )
    }

    fn cell_items(&self, cx: usize, cy: usize) -> &[usize] {
        let c = cy * self.nx + cx;
        &self.items[self.starts[c]..self.starts[c + 1]]
    }

    /// Distances from point `query` to its `k` nearest other points, ascending.
    /// Returns fewer than `k` values when the set is smaller than `k + 1`.
    pub fn knn(&self, query: usize, k: usize) -> Vec<f64> {
        let q = self.points[query];
        let (qx, qy) = self.cell_coords(&q);
        let max_ring = self.nx.max(self.ny) as isize;
        let mut found: Vec<f64> = Vec::with_capacity(4 * k + 8);
        let mut ring = 0isize;
        loop {
            for cy in (qy - ring)..=(qy + ring) {
                if cy < 0 || cy >= self.ny as isize {
                    continue;
                }
                let on_edge_row = cy == qy - ring || cy == qy + ring;
                let step = if on_edge_row { 1 } else { (2 * ring).max(1) };
                let mut cx = qx - ring;
                while cx <= qx + ring {
                    if cx >= 0 && cx < self.nx as isize {
                        for &i in self.cell_items(cx as usize, cy as usize) {
                            if i != query {
                                found.push(q.distance(&self.points[i]));
                            }
                        }
                    }
                    cx += step;
                }
            }
            // Anything in ring r+1 or beyond is at least r cells away.
            let covered = ring >= max_ring;
            if found.len() >= k {
                found.sort_unstable_by(f64::total_cmp);
                if found[k - 1] <= ring as f64 * self.cell || covered {
                    found.truncate(k);
                    return found;
                }
            } else if covered {
                found.sort_unstable_by(f64::total_cmp);
                return found;
            }
            ring += 1;
        }
    }

    /// Indices of points inside the closed rectangle centered at `center`
    /// with half extents `half_w`, `half_h`.
    pub fn in_rect(&self, center: &Point, half_w: f64, half_h: f64) -> Vec<usize> {
        let lo = Point::new(center.x - half_w, center.y - half_h);
        let hi = Point::new(center.x + half_w, center.y + half_h);
        let (x0, y0) = self.cell_coords(&lo);
        let (x1, y1) = self.cell_coords(&hi);
        let mut out = Vec::new();
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                for &i in self.cell_items(cx as usize, cy as usize) {
                    let p = &self.points[i];
                    if (p.x - center.x).abs() <= half_w && (p.y - center.y).abs() <= half_h {
                        out.push(i);
                    }
                }
            }
        }
        out
    }
}

/// The `k` smallest Euclidean distances from `points[query]` to the other
/// points, ascending. If fewer than `k` other points exist, all of them.
pub fn knn_distances(points: &[Point], query: usize, k: usize) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::NoNeighbors(points.len()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if query >= points.len() {
        return Err(Error::shape(format!(
            "query index {query} out of range for {} points",
            points.len()
        )));
    }
    Ok(GridIndex::new(points).knn(query, k))
}

/// Mean distance from every point to its `k` nearest neighbors. Distances
/// are summed in ascending order, so the result does not depend on the
/// order of `points`.
pub fn mean_knn_distances(points: &[Point], k: usize) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::NoNeighbors(points.len()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let index = GridIndex::new(points);
    Ok((0..points.len())
        .map(|i| {
            let d = index.knn(i, k);
            d.iter().sum::<f64>() / d.len() as f64
        })
        .collect())
}
