use crate::geometry::Vec3;
use std::collections::HashMap;

/// Uniform-grid spatial hash for exact k-nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Vec3>,
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl PointIndex {
    /// Picks a cell side so that a surface-like cloud has about one point
    /// per occupied cell.
    pub fn new(points: Vec<Vec3>) -> Self {
        let cell = if points.len() < 2 {
            1.0
        } else {
            let (mut lo, mut hi) = (points[0], points[0]);
            for p in &points {
                lo = lo.inf(p);
                hi = hi.sup(p);
            }
            let mut e = [hi.x - lo.x, hi.y - lo.y, hi.z - lo.z];
            e.sort_by(f64::total_cmp);
            let area = (e[2] * e[1]).max(e[2] * e[2] * 1e-6);
            let c = 2.0 * (area / points.len() as f64).sqrt();
            if c > 0.0 && c.is_finite() { c } else { 1.0 }
        };
        Self::with_cell(points, cell)
    }

    pub fn with_cell(points: Vec<Vec3>, cell: f64) -> Self {
        assert!(cell > 0.0, "cell must be positive");
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        let (mut lo, mut hi) = ([i64::MAX; 3], [i64::MIN; 3]);
        for (i, p) in points.iter().enumerate() {
            let c = Self::key(p, cell);
            for d in 0..3 {
                lo[d] = lo[d].min(c[d]);
                hi[d] = hi[d].max(c[d]);
            }
            cells.entry(c).or_default().push(i as u32);
        }
        Self { points, cell, cells, lo, hi }
    }

    fn key(p: &Vec3, cell: f64) -> [i64; 3] {
        [p.x, p.y, p.z].map(|c| (c / cell).floor() as i64)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// The `k` nearest points as `(index, distance)`, by ascending distance
    /// and then index.
    pub fn nearest(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let c = Self::key(q, self.cell);
        // Rings beyond this cover no occupied cell.
        let max_ring = (0..3).map(|d| (c[d] - self.lo[d]).abs().max((self.hi[d] - c[d]).abs())).max().unwrap_or(0);
        let mut best: Vec<(f64, u32)> = Vec::new();
        // Rings closer than this cover no occupied cell either.
        let mut r = (0..3).map(|d| (self.lo[d] - c[d]).max(c[d] - self.hi[d]).max(0)).max().unwrap_or(0);
        loop {
            self.visit_ring(c, r, |i| {
                let d2 = (self.points[i as usize] - q).norm_squared();
                best.push((d2, i));
            });
            if best.len() >= k {
                best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                best.truncate(k);
                // Unvisited points lie at least r·cell away.
                let reach = r as f64 * self.cell;
                if best[k - 1].0 <= reach * reach {
                    break;
                }
            }
            if r >= max_ring {
                best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                best.truncate(k);
                break;
            }
            r += 1;
        }
        best.into_iter().map(|(d2, i)| (i as usize, d2.sqrt())).collect()
    }

    /// Visits the cells at Chebyshev distance exactly `r` from `c`, clipped
    /// to the occupied bounding box.
    fn visit_ring<F: FnMut(u32)>(&self, c: [i64; 3], r: i64, mut f: F) {
        let range = |d: usize| (c[d] - r).max(self.lo[d])..=(c[d] + r).min(self.hi[d]);
        for x in range(0) {
            for y in range(1) {
                let edge = (x - c[0]).abs() == r || (y - c[1]).abs() == r;
                let mut visit = |z: i64| {
                    if let Some(v) = self.cells.get(&[x, y, z]) {
                        v.iter().for_each(|&i| f(i));
                    }
                };
                if edge {
                    range(2).for_each(&mut visit);
                } else {
                    for z in [c[2] - r, c[2] + r] {
                        if (self.lo[2]..=self.hi[2]).contains(&z) {
                            visit(z);
                        }
                        if r == 0 {
                            break;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-0.2..0.2)))
            .collect();
        for index in [PointIndex::new(pts.clone()), PointIndex::with_cell(pts.clone(), 0.07), PointIndex::with_cell(pts.clone(), 40.0)] {
            for _ in 0..100 {
                let q = Vec3::new(rng.random_range(-7.0..7.0), rng.random_range(-7.0..7.0), rng.random_range(-1.0..1.0));
                let mut brute: Vec<(usize, f64)> = pts.iter().enumerate().map(|(i, p)| (i, (p - q).norm())).collect();
                brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                brute.truncate(5);
                assert_eq!(index.nearest(&q, 5), brute);
            }
        }
        assert!(PointIndex::new(vec![]).nearest(&Vec3::zeros(), 3).is_empty());
        // Collinear points give a tiny cell; the search must stay cheap.
        let line = PointIndex::new((0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect());
        assert_eq!(line.nearest(&Vec3::new(-100.0, 3.0, 0.0), 2).iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 1]);
    }
}
