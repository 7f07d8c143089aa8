use crate::model::Vec2;

/// Unordered pairs `(i, j)`, `i < j`, within `radius` of each other, in
/// lexicographic order. An infinite radius yields every pair.
pub fn neighbor_pairs(positions: &[Vec2], radius: f64) -> Vec<(usize, usize)> {
    let n = positions.len();
    if !radius.is_finite() {
        return (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
    }
    let grid = CellGrid::new(positions, radius);
    let r2 = radius * radius;
    let mut pairs = Vec::new();
    let mut scratch = Vec::new();
    for i in 0..n {
        scratch.clear();
        grid.for_each_candidate(positions[i], |j| {
            if j > i && (positions[i] - positions[j]).norm_squared() <= r2 {
                scratch.push(j);
            }
        });
        scratch.sort_unstable();
        pairs.extend(scratch.iter().map(|&j| (i, j)));
    }
    pairs
}

/// Neighbors of every agent (both directions), sorted by index.
pub fn neighbor_lists(positions: &[Vec2], radius: f64) -> Vec<Vec<usize>> {
    let mut lists = vec![Vec::new(); positions.len()];
    for (i, j) in neighbor_pairs(positions, radius) {
        lists[i].push(j);
        lists[j].push(i);
    }
    for l in &mut lists {
        l.sort_unstable();
    }
    lists
}

/// Uniform bucket grid with cell size equal to the query radius.
struct CellGrid {
    origin: Vec2,
    cell: f64,
    cols: usize,
    rows: usize,
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl CellGrid {
    fn new(positions: &[Vec2], radius: f64) -> Self {
        let (mut lo, mut hi) = (Vec2::new(f64::MAX, f64::MAX), Vec2::new(f64::MIN, f64::MIN));
        for p in positions {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        if positions.is_empty() {
            lo = Vec2::ZERO;
            hi = Vec2::ZERO;
        }
        let cell = radius.max(1e-9);
        let cols = (((hi.x - lo.x) / cell).floor() as usize + 1).min(4096);
        let rows = (((hi.y - lo.y) / cell).floor() as usize + 1).min(4096);
        let mut grid = CellGrid {
            origin: lo,
            cell,
            cols,
            rows,
            starts: vec![0; cols * rows + 1],
            items: vec![0; positions.len()],
        };
        let keys: Vec<usize> = positions.iter().map(|p| grid.key(*p)).collect();
        for &k in &keys {
            grid.starts[k + 1] += 1;
        }
        for c in 0..cols * rows {
            grid.starts[c + 1] += grid.starts[c];
        }
        let mut fill = grid.starts.clone();
        for (idx, &k) in keys.iter().enumerate() {
            grid.items[fill[k]] = idx;
            fill[k] += 1;
        }
        grid
    }

    fn coords(&self, p: Vec2) -> (usize, usize) {
        let cx = ((p.x - self.origin.x) / self.cell).floor().max(0.0) as usize;
        let cy = ((p.y - self.origin.y) / self.cell).floor().max(0.0) as usize;
        (cx.min(self.cols - 1), cy.min(self.rows - 1))
    }

    fn key(&self, p: Vec2) -> usize {
        let (cx, cy) = self.coords(p);
        cy * self.cols + cx
    }

    fn for_each_candidate(&self, p: Vec2, mut f: impl FnMut(usize)) {
        let (cx, cy) = self.coords(p);
        for y in cy.saturating_sub(1)..=(cy + 1).min(self.rows - 1) {
            for x in cx.saturating_sub(1)..=(cx + 1).min(self.cols - 1) {
                let k = y * self.cols + x;
                for &idx in &self.items[self.starts[k]..self.starts[k + 1]] {
                    f(idx);
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
    fn grid_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(0..80);
            let pts: Vec<Vec2> = (0..n)
                .map(|_| Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)))
                .collect();
            let r = rng.random_range(0.05..0.4);
            let brute: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| (pts[i] - pts[j]).norm_squared() <= r * r)
                .collect();
            assert_eq!(neighbor_pairs(&pts, r), brute);
        }
    }

    #[test]
    fn infinite_radius_gives_all_pairs() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(0.0, 7.0)];
        assert_eq!(neighbor_pairs(&pts, f64::INFINITY), vec![(0, 1), (0, 2), (1, 2)]);
        let lists = neighbor_lists(&pts, f64::INFINITY);
        assert_eq!(lists[1], vec![0, 2]);
    }
}
