//! Instances, randomly shifted grids, and k-means costs.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// A grid point in `[1, Δ]^d`.
pub type Point = Vec<u32>;

/// Problem dimensions: `d`, `L` (with `Δ = 2^L`), `k` and `ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringInstance {
    pub d: usize,
    pub delta_exp: u32,
    pub k: usize,
    pub epsilon: f64,
}

impl ClusteringInstance {
    /// Levels and coordinates must be small enough that cells, points and
    /// labelled points encode into 62-bit integers.
    pub fn new(d: usize, delta_exp: u32, k: usize, epsilon: f64) -> Result<Self> {
        if d == 0 || k == 0 {
            return domain("d and k must be positive");
        }
        if delta_exp == 0 {
            return domain("L must be at least 1");
        }
        if d * (delta_exp as usize + 1) > 60 {
            return domain(format!("d·(L+1) = {} exceeds 60", d * (delta_exp as usize + 1)));
        }
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return domain(format!("epsilon {epsilon} outside (0, 1/2)"));
        }
        Ok(Self { d, delta_exp, k, epsilon })
    }

    /// `L`.
    pub fn levels(&self) -> u32 {
        self.delta_exp
    }

    /// `Δ = 2^L`.
    pub fn side(&self) -> u64 {
        1u64 << self.delta_exp
    }

    /// `Δ^d`, the number of grid points.
    pub fn domain_size(&self) -> u64 {
        1u64 << (self.delta_exp as usize * self.d)
    }

    pub fn contains(&self, p: &[u32]) -> bool {
        p.len() == self.d && p.iter().all(|&x| x >= 1 && (x as u64) <= self.side())
    }

    pub fn check_point(&self, p: &[u32]) -> Result<()> {
        if p.len() != self.d {
            return domain(format!("point has dimension {}, expected {}", p.len(), self.d));
        }
        if !self.contains(p) {
            return domain(format!("point {:?} outside [1, {}]^{}", p, self.side(), self.d));
        }
        Ok(())
    }
}

/// A grid cell: its level in `-1..=L` and lattice index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub level: i32,
    pub coords: Vec<i64>,
}

impl CellId {
    pub fn new(level: i32, coords: Vec<i64>) -> Self {
        Self { level, coords }
    }
}

/// The cell at `level - 1` containing `c`.
pub fn parent(c: &CellId) -> Result<CellId> {
    if c.level < 0 {
        return domain("the root cell has no parent");
    }
    Ok(CellId {
        level: c.level - 1,
        coords: c.coords.iter().map(|&x| x.div_euclid(2)).collect(),
    })
}

/// A point with a strictly positive weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub point: Point,
    pub weight: f64,
}

impl WeightedPoint {
    pub fn new(point: Point, weight: f64) -> Result<Self> {
        if !(weight > 0.0) || !weight.is_finite() {
            return domain(format!("weight {weight} is not a positive finite real"));
        }
        Ok(Self { point, weight })
    }
}

/// Nested grids `G_{-1}, ..., G_L` translated by an integer shift `v`.
///
/// Levels `0..=L` have vertices on `v + g_i·Z^d`. The root level is anchored at
/// `o = v - Δ` on axes with `v_j > 0` (and at `0` otherwise), a vertex of `G_0`,
/// so the single root cell `[o, o + 2Δ)^d` covers the domain. Relative to that
/// anchor every coordinate is nonnegative: a level-`i` coordinate lies in
/// `[0, 2^{i+1})`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridHierarchy {
    d: usize,
    levels: u32,
    shift: Vec<u64>,
    anchor: Vec<i64>,
}

impl GridHierarchy {
    pub fn new(inst: &ClusteringInstance, shift: Vec<u64>) -> Result<Self> {
        if shift.len() != inst.d {
            return domain(format!("shift has dimension {}, expected {}", shift.len(), inst.d));
        }
        let side = inst.side();
        if shift.iter().any(|&v| v >= side) {
            return domain(format!("shift {shift:?} outside [0, {}]", side - 1));
        }
        let anchor = shift
            .iter()
            .map(|&v| if v > 0 { v as i64 - side as i64 } else { 0 })
            .collect();
        Ok(Self { d: inst.d, levels: inst.levels(), shift, anchor })
    }

    /// Uniform shift in `[0, Δ-1]^d`.
    pub fn random<R: Rng + ?Sized>(inst: &ClusteringInstance, rng: &mut R) -> Self {
        let shift = (0..inst.d).map(|_| rng.random_range(0..inst.side())).collect();
        Self::new(inst, shift).expect("shift drawn in range")
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn shift(&self) -> &[u64] {
        &self.shift
    }

    /// Side length `g_i`: `2Δ` at level -1 and `Δ / 2^i` otherwise.
    pub fn side(&self, level: i32) -> u64 {
        if level < 0 {
            2u64 << self.levels
        } else {
            1u64 << (self.levels - level as u32)
        }
    }

    fn check_level(&self, level: i32) -> Result<()> {
        if level < -1 || level > self.levels as i32 {
            return domain(format!("level {level} outside [-1, {}]", self.levels));
        }
        Ok(())
    }

    /// `c_i(p)`.
    pub fn cell_of(&self, p: &[u32], level: i32) -> Result<CellId> {
        self.check_level(level)?;
        if p.len() != self.d {
            return domain(format!("point has dimension {}, expected {}", p.len(), self.d));
        }
        let side = 1u64 << self.levels;
        if p.iter().any(|&x| x == 0 || x as u64 > side) {
            return domain(format!("point {p:?} outside [1, {side}]^{}", self.d));
        }
        let mut coords = vec![0; self.d];
        self.coords_into(p, level, &mut coords);
        Ok(CellId { level, coords })
    }

    /// Unchecked cell coordinates of an in-domain point.
    #[inline]
    pub fn coords_into(&self, p: &[u32], level: i32, out: &mut [i64]) {
        let g = self.side(level) as i64;
        for ((o, &x), &a) in out.iter_mut().zip(p).zip(&self.anchor) {
            *o = (x as i64 - a) / g;
        }
    }

    /// Mixed-radix code of a cell within its level, `< 2^{(i+1)d}`.
    #[inline]
    pub fn key_of_coords(&self, level: i32, coords: &[i64]) -> u64 {
        let bits = (level + 1) as u32;
        coords.iter().rev().fold(0u64, |acc, &c| (acc << bits) | c as u64)
    }

    pub fn key_of(&self, c: &CellId) -> u64 {
        self.key_of_coords(c.level, &c.coords)
    }

    pub fn cell_from_key(&self, level: i32, key: u64) -> CellId {
        let bits = (level + 1) as u32;
        let mask = (1u64 << bits) - 1;
        let coords = (0..self.d).map(|j| ((key >> (bits * j as u32)) & mask) as i64).collect();
        CellId { level, coords }
    }

    /// Upper bound on cell codes at any level.
    pub fn key_domain(&self) -> u64 {
        1u64 << ((self.levels as usize + 1) * self.d)
    }

    /// Per-axis real extent `[lo, hi)` of a cell.
    pub fn extent(&self, c: &CellId) -> Vec<(f64, f64)> {
        let g = self.side(c.level) as f64;
        c.coords
            .iter()
            .zip(&self.anchor)
            .map(|(&n, &a)| {
                let lo = a as f64 + n as f64 * g;
                (lo, lo + g)
            })
            .collect()
    }

    /// Euclidean distance from `z` to the closed box of `c`.
    pub fn dist_to_cell(&self, c: &CellId, z: &[f64]) -> f64 {
        self.extent(c)
            .iter()
            .zip(z)
            .map(|(&(lo, hi), &x)| {
                let gap = (lo - x).max(x - hi).max(0.0);
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Whether the cell contains a grid point of `[1, Δ]^d`.
    pub fn meets_domain(&self, c: &CellId) -> bool {
        let g = self.side(c.level) as i64;
        let side = 1i64 << self.levels;
        c.coords.iter().zip(&self.anchor).all(|(&n, &a)| {
            let lo = (a + n * g).max(1);
            let hi = (a + (n + 1) * g - 1).min(side);
            lo <= hi
        })
    }

    /// Center cells per level `0..=L`: cells meeting the domain within
    /// `g_i / (2d)` of some center.
    pub fn center_cells_per_level(&self, centers: &[Vec<f64>]) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.levels as usize + 1);
        for level in 0..=self.levels as i32 {
            let g = self.side(level) as f64;
            let radius = g / (2.0 * self.d as f64);
            let mut seen: HashSet<Vec<i64>> = HashSet::new();
            for z in centers {
                let ranges: Vec<(i64, i64)> = z
                    .iter()
                    .zip(&self.anchor)
                    .map(|(&x, &a)| {
                        (((x - radius - a as f64) / g).floor() as i64, ((x + radius - a as f64) / g).floor() as i64)
                    })
                    .collect();
                let mut coords: Vec<i64> = ranges.iter().map(|r| r.0).collect();
                'outer: loop {
                    let cell = CellId { level, coords: coords.clone() };
                    if self.meets_domain(&cell) && self.dist_to_cell(&cell, z) <= radius {
                        seen.insert(coords.clone());
                    }
                    for j in 0..coords.len() {
                        if coords[j] < ranges[j].1 {
                            coords[j] += 1;
                            continue 'outer;
                        }
                        coords[j] = ranges[j].0;
                    }
                    break;
                }
            }
            out.push(seen.len());
        }
        out
    }
}

/// Total number of center cells over levels `0..=L`.
pub fn count_center_cells(grid: &GridHierarchy, centers: &[Vec<f64>]) -> usize {
    grid.center_cells_per_level(centers).iter().sum()
}

#[inline]
pub fn dist2_unchecked(p: &[u32], z: &[f64]) -> f64 {
    p.iter().zip(z).map(|(&a, &b)| (a as f64 - b) * (a as f64 - b)).sum()
}

pub fn dist2(p: &[u32], z: &[f64]) -> Result<f64> {
    if p.len() != z.len() {
        return domain(format!("dimension mismatch: {} vs {}", p.len(), z.len()));
    }
    Ok(dist2_unchecked(p, z))
}

#[inline]
pub fn min_dist2(p: &[u32], centers: &[Vec<f64>]) -> f64 {
    centers.iter().map(|z| dist2_unchecked(p, z)).fold(f64::INFINITY, f64::min)
}

fn check_centers(dim: Option<usize>, centers: &[Vec<f64>]) -> Result<()> {
    if centers.is_empty() {
        return domain("center set is empty");
    }
    if let Some(d) = dim {
        if centers.iter().any(|z| z.len() != d) {
            return domain("center dimension mismatch");
        }
    }
    Ok(())
}

/// `cost(Q, Z)` for unit-weight points.
pub fn cost(points: &[Point], centers: &[Vec<f64>]) -> Result<f64> {
    check_centers(points.first().map(|p| p.len()), centers)?;
    Ok(points.iter().map(|p| min_dist2(p, centers)).sum())
}

/// Weighted `cost(S, Z)`.
pub fn weighted_cost(points: &[WeightedPoint], centers: &[Vec<f64>]) -> Result<f64> {
    check_centers(points.first().map(|p| p.point.len()), centers)?;
    Ok(points.iter().map(|wp| wp.weight * min_dist2(&wp.point, centers)).sum())
}

pub fn to_real(p: &[u32]) -> Vec<f64> {
    p.iter().map(|&x| x as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inst(d: usize, l: u32) -> ClusteringInstance {
        ClusteringInstance::new(d, l, 3, 0.25).unwrap()
    }

    #[test]
    fn cell_examples() {
        let i = inst(2, 4);
        let g = GridHierarchy::new(&i, vec![0, 0]).unwrap();
        assert_eq!(g.cell_of(&[5, 9], 2).unwrap(), CellId::new(2, vec![1, 2]));
        assert_eq!(g.cell_of(&[7, 7], 4).unwrap(), CellId::new(4, vec![7, 7]));
        assert!(g.cell_of(&[0, 1], 2).is_err());
        assert!(g.cell_of(&[1, 1], 5).is_err());
    }

    #[test]
    fn root_is_single_cell_for_every_shift() {
        let i = inst(1, 4);
        for v in 0..16 {
            let g = GridHierarchy::new(&i, vec![v]).unwrap();
            let roots: HashSet<_> = (1..=16).map(|x| g.cell_of(&[x], -1).unwrap()).collect();
            assert_eq!(roots.len(), 1, "shift {v}");
        }
    }

    #[test]
    fn level0_vertices_sit_on_shift() {
        let i = inst(1, 4);
        for v in 1..16u32 {
            let g = GridHierarchy::new(&i, vec![v as u64]).unwrap();
            for x in 2..=16u32 {
                let a = g.cell_of(&[x - 1], 0).unwrap();
                let b = g.cell_of(&[x], 0).unwrap();
                assert_eq!(a != b, x == v, "v={v} x={x}");
            }
        }
    }

    #[test]
    fn parent_examples() {
        assert_eq!(parent(&CellId::new(2, vec![3, 5])).unwrap(), CellId::new(1, vec![1, 2]));
        assert_eq!(parent(&CellId::new(0, vec![0, 0])).unwrap(), CellId::new(-1, vec![0, 0]));
        assert!(parent(&CellId::new(-1, vec![0, 0])).is_err());
    }

    #[test]
    fn nesting_exhaustive_small() {
        let i = inst(2, 3);
        for v0 in 0..8 {
            for v1 in 0..8 {
                let g = GridHierarchy::new(&i, vec![v0, v1]).unwrap();
                for x in 1..=8 {
                    for y in 1..=8 {
                        let p = [x, y];
                        for level in 0..=3 {
                            let c = g.cell_of(&p, level).unwrap();
                            assert_eq!(parent(&c).unwrap(), g.cell_of(&p, level - 1).unwrap());
                        }
                        let leaf = g.cell_of(&p, 3).unwrap();
                        assert_eq!(g.cell_from_key(3, g.key_of(&leaf)), leaf);
                    }
                }
            }
        }
    }

    #[test]
    fn leaf_cells_hold_single_points() {
        let i = inst(2, 4);
        let g = GridHierarchy::new(&i, vec![3, 11]).unwrap();
        let mut seen = HashSet::new();
        for x in 1..=16 {
            for y in 1..=16 {
                assert!(seen.insert(g.cell_of(&[x, y], 4).unwrap()));
            }
        }
    }

    #[test]
    fn cells_are_boxes() {
        let i = inst(2, 4);
        let g = GridHierarchy::new(&i, vec![5, 2]).unwrap();
        for level in 0..=4 {
            for x in 1..=16u32 {
                for y in 1..=16u32 {
                    let c = g.cell_of(&[x, y], level).unwrap();
                    let ext = g.extent(&c);
                    assert!(ext[0].0 <= x as f64 && (x as f64) < ext[0].1);
                    assert!(ext[1].0 <= y as f64 && (y as f64) < ext[1].1);
                    assert!(g.meets_domain(&c));
                }
            }
        }
    }

    #[test]
    fn dist_and_cost_examples() {
        assert_eq!(dist2(&[1, 1], &[4.0, 5.0]).unwrap(), 25.0);
        assert_eq!(dist2(&[1, 3], &[1.0, 3.0]).unwrap(), 0.0);
        assert_eq!(dist2(&[1, 1], &[1.0, 3.0]).unwrap(), 4.0);
        assert!(dist2(&[1, 1], &[1.0]).is_err());
        let q = vec![vec![1, 1], vec![3, 1]];
        assert_eq!(cost(&q, &[vec![1.0, 1.0]]).unwrap(), 4.0);
        assert_eq!(cost(&q, &[vec![1.0, 1.0], vec![3.0, 1.0]]).unwrap(), 0.0);
        let w = vec![WeightedPoint::new(vec![1, 1], 2.0).unwrap()];
        assert_eq!(weighted_cost(&w, &[vec![1.0, 3.0]]).unwrap(), 8.0);
        assert!(cost(&q, &[]).is_err());
        assert!(WeightedPoint::new(vec![1], 0.0).is_err());
    }

    #[test]
    fn center_cells_far_away_is_zero() {
        let i = inst(2, 4);
        let g = GridHierarchy::new(&i, vec![0, 0]).unwrap();
        assert_eq!(count_center_cells(&g, &[vec![-40.0, -40.0]]), 0);
    }

    #[test]
    fn center_at_cell_middle_counts_enclosing_cell() {
        let i = inst(2, 4);
        let g = GridHierarchy::new(&i, vec![0, 0]).unwrap();
        // Middle of the level-2 cell [4,8)^2: the margin to its neighbours is
        // g/2 = 2 > g/(2d) = 1.
        let per_level = g.center_cells_per_level(&[vec![6.0, 6.0]]);
        assert_eq!(per_level[2], 1);
    }

    #[test]
    fn center_cell_mean_is_small() {
        let i = ClusteringInstance::new(2, 6, 3, 0.25).unwrap();
        let centers = vec![vec![10.5, 20.25], vec![40.0, 41.0], vec![57.3, 5.9]];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 10_000;
        let total: usize =
            (0..trials).map(|_| count_center_cells(&GridHierarchy::random(&i, &mut rng), &centers)).sum();
        let mean = total as f64 / trials as f64;
        assert!(mean <= 3.0 * 3.0 * 7.0, "mean {mean}");
    }

    proptest! {
        #[test]
        fn nesting_holds(x in 1u32..=64, y in 1u32..=64, v0 in 0u64..64, v1 in 0u64..64) {
            let i = ClusteringInstance::new(2, 6, 2, 0.2).unwrap();
            let g = GridHierarchy::new(&i, vec![v0, v1]).unwrap();
            for level in 0..=6 {
                let c = g.cell_of(&[x, y], level).unwrap();
                prop_assert_eq!(parent(&c).unwrap(), g.cell_of(&[x, y], level - 1).unwrap());
            }
        }

        #[test]
        fn cost_zero_iff_on_centers(pts in proptest::collection::vec((1u32..=8, 1u32..=8), 1..6),
                                    zs in proptest::collection::vec((1u32..=8, 1u32..=8), 1..4)) {
            let q: Vec<Point> = pts.iter().map(|&(a, b)| vec![a, b]).collect();
            let z: Vec<Vec<f64>> = zs.iter().map(|&(a, b)| vec![a as f64, b as f64]).collect();
            let c = cost(&q, &z).unwrap();
            prop_assert!(c >= 0.0);
            let all_on = q.iter().all(|p| z.iter().any(|zz| dist2_unchecked(p, zz) == 0.0));
            prop_assert_eq!(c == 0.0, all_on);
        }
    }
}
