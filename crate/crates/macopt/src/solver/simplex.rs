use crate::Real;

/// Lattice points of the scaled simplex `{x ≥ 0, Σx ≤ total}` with step
/// `total/resolution`, in odometer order. Yields `C(resolution + dim, dim)`
/// points, which the brute-force oracles scan exhaustively.
pub fn simplex_grid<R: Real>(dim: usize, total: R, resolution: usize) -> SimplexGrid<R> {
    assert!(dim >= 1, "simplex grid needs at least one dimension");
    assert!(resolution >= 1, "simplex grid needs at least one step");
    SimplexGrid { counts: vec![0; dim], sum: 0, resolution, step: total / R::of(resolution as f64), done: false }
}

#[derive(Debug, Clone)]
pub struct SimplexGrid<R: Real> {
    counts: Vec<usize>,
    sum: usize,
    resolution: usize,
    step: R,
    done: bool,
}

impl<R: Real> SimplexGrid<R> {
    /// Number of lattice points the iterator will yield in total.
    pub fn point_count(dim: usize, resolution: usize) -> u128 {
        // C(resolution + dim, dim)
        let mut c: u128 = 1;
        for k in 1..=dim as u128 {
            c = c * (resolution as u128 + k) / k;
        }
        c
    }
}

impl<R: Real> Iterator for SimplexGrid<R> {
    type Item = Vec<R>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let point = self.counts.iter().map(|&k| self.step * R::of(k as f64)).collect();

        // Advance the odometer: bump the last digit while the budget allows,
        // otherwise clear the rightmost nonzero digit and carry left.
        if self.sum < self.resolution {
            *self.counts.last_mut().unwrap() += 1;
            self.sum += 1;
        } else {
            match self.counts.iter().rposition(|&k| k > 0) {
                Some(0) | None => self.done = true,
                Some(j) => {
                    self.sum -= self.counts[j];
                    self.counts[j] = 0;
                    self.counts[j - 1] += 1;
                    self.sum += 1;
                }
            }
        }
        Some(point)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        if self.done {
            (0, Some(0))
        } else {
            let total = Self::point_count(self.counts.len(), self.resolution);
            (0, usize::try_from(total).ok())
        }
    }
}
