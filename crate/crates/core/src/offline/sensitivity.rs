//! Sensitivity upper bounds `s'` from cell counts, and sampling from them.

use std::collections::BTreeMap;

use rand::Rng;

use crate::coreset::{Coreset, CoresetMeta};
use crate::error::{domain, Result};
use crate::estimation::{mark_cells, CellMarks};
use crate::geometry::{CellId, GridHierarchy, Point, WeightedPoint};
use crate::hashing::SeedTree;
use crate::params::{offline_sample_count, Scaling, ThresholdSchedule};
use crate::sampler::pick_level;

/// Where the cell counts behind the marks come from.
#[derive(Clone, Copy, Debug)]
pub enum CountSource<'a> {
    Exact,
    /// Replay of streaming `f̂`.
    Injected(&'a BTreeMap<CellId, f64>),
}

/// Where the per-level masses `q̂_i` come from.
#[derive(Clone, Copy, Debug)]
pub enum LevelEstimates<'a> {
    /// `q̂_i = |Q_i|`.
    Exact,
    Injected(&'a [f64]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityAssignment {
    pub schedule: ThresholdSchedule,
    pub marks: CellMarks,
    /// Crucial level of each input point, aligned with the input.
    pub levels: Vec<usize>,
    /// Indices of `Q_0 ..= Q_L`.
    pub partition: Vec<Vec<usize>>,
    /// `s'(p)`, aligned with the input.
    pub s_prime: Vec<f64>,
    pub qhat: Vec<f64>,
    /// `I`.
    pub retained: Vec<usize>,
    /// `t'`.
    pub total: f64,
}

impl SensitivityAssignment {
    /// Indices of `Q^I`.
    pub fn retained_points(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.retained.iter().flat_map(|&i| self.partition[i].iter().copied()).collect();
        v.sort_unstable();
        v
    }

    /// `Σ s'(p)` over all points.
    pub fn total_sensitivity(&self) -> f64 {
        self.s_prime.iter().sum()
    }
}

/// `|C ∩ Q|` for every non-empty cell of levels `0..=L`.
pub fn exact_cell_counts(points: &[Point], grid: &GridHierarchy) -> BTreeMap<CellId, f64> {
    let mut out = BTreeMap::new();
    for p in points {
        for level in 0..=grid.levels() as i32 {
            let c = grid.cell_of(p, level).expect("point checked by caller");
            *out.entry(c).or_insert(0.0) += 1.0;
        }
    }
    out
}

pub fn offline_sensitivity(
    points: &[Point],
    sched: &ThresholdSchedule,
    grid: &GridHierarchy,
    counts: CountSource<'_>,
    estimates: LevelEstimates<'_>,
) -> Result<SensitivityAssignment> {
    let inst = sched.instance();
    for p in points {
        inst.check_point(p)?;
    }
    let exact;
    let fhat = match counts {
        CountSource::Exact => {
            exact = exact_cell_counts(points, grid);
            &exact
        }
        CountSource::Injected(f) => f,
    };
    let marks = mark_cells(fhat, sched, grid);
    let n_levels = grid.levels() as usize + 1;
    let levels: Vec<usize> = points.iter().map(|p| marks.crucial_level(p, grid)).collect();
    let mut partition = vec![Vec::new(); n_levels];
    for (idx, &l) in levels.iter().enumerate() {
        partition[l].push(idx);
    }
    let s_prime = levels.iter().map(|&l| sched.sensitivity(l)).collect();
    let qhat = match estimates {
        LevelEstimates::Exact => partition.iter().map(|q| q.len() as f64).collect(),
        LevelEstimates::Injected(q) => {
            if q.len() != n_levels {
                return domain(format!("expected {n_levels} level estimates, got {}", q.len()));
            }
            q.to_vec()
        }
    };
    let retained: Vec<usize> = (0..n_levels).filter(|&i| qhat[i] >= sched.gamma() * sched.t(i)).collect();
    let total = retained.iter().map(|&i| qhat[i] * sched.sensitivity(i)).sum();
    Ok(SensitivityAssignment { schedule: *sched, marks, levels, partition, s_prime, qhat, retained, total })
}

/// Two-stage i.i.d. sampling: a level with probability `q̂_i·s'_i/t'`, then a
/// uniform point of `Q_i`; weight `t'/(m·s'_i)`.
pub fn offline_coreset(
    points: &[Point],
    assignment: &SensitivityAssignment,
    scaling: &Scaling,
    seed: u64,
) -> Result<Coreset> {
    let sched = &assignment.schedule;
    let inst = sched.instance();
    let total = assignment.total;
    let m = offline_sample_count(inst, total, scaling);
    let retained = &assignment.retained;
    for &i in retained {
        if assignment.partition[i].is_empty() && assignment.qhat[i] > 0.0 {
            return domain(format!("level {i} has positive mass but no points"));
        }
    }
    let mass: Vec<f64> = retained.iter().map(|&i| assignment.qhat[i] * sched.sensitivity(i)).collect();
    let mut rng = SeedTree(seed).rng();
    let mut entries = Vec::with_capacity(m);
    for _ in 0..m {
        let level = pick_level(retained, &mass, total, rng.random::<f64>());
        let pool = &assignment.partition[level];
        let p = &points[pool[rng.random_range(0..pool.len())]];
        entries.push(WeightedPoint { point: p.clone(), weight: total / (m as f64 * sched.sensitivity(level)) });
    }
    Ok(Coreset {
        entries,
        meta: CoresetMeta { guess: Some(sched.o), total_sensitivity: total, samples: m, levels: retained.clone() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::CellMark;
    use crate::geometry::ClusteringInstance;

    fn grid(inst: &ClusteringInstance) -> GridHierarchy {
        GridHierarchy::new(inst, vec![0; inst.d]).unwrap()
    }

    #[test]
    fn one_unit_cell_tiny_guess_lands_at_leaf() {
        let inst = ClusteringInstance::new(2, 4, 1, 0.2).unwrap();
        let g = grid(&inst);
        let sched = ThresholdSchedule::new(&inst, 1e-3).unwrap();
        let pts = vec![vec![5, 6]];
        let a = offline_sensitivity(&pts, &sched, &g, CountSource::Exact, LevelEstimates::Exact).unwrap();
        assert_eq!(a.levels, vec![4]);
        for level in 0..4 {
            assert!(a.marks.is_heavy(&g.cell_of(&pts[0], level).unwrap()));
        }
        assert_eq!(a.marks.mark(&g.cell_of(&pts[0], 4).unwrap()), CellMark::Crucial);
        assert_eq!(a.s_prime[0], sched.sensitivity(4));
    }

    #[test]
    fn huge_guess_puts_everything_at_level_zero() {
        let inst = ClusteringInstance::new(2, 4, 1, 0.2).unwrap();
        let g = grid(&inst);
        let pts: Vec<Point> = (1..=10).map(|x| vec![x, 17 - x]).collect();
        // T_0(o) = (2/16)²·o/100 > 10
        let sched = ThresholdSchedule::new(&inst, 1e6).unwrap();
        let a = offline_sensitivity(&pts, &sched, &g, CountSource::Exact, LevelEstimates::Exact).unwrap();
        assert!(a.marks.heavy_cells().is_empty());
        assert_eq!(a.partition[0].len(), 10);
        assert!(a.s_prime.iter().all(|&s| s == 10.0 * 8.0 / sched.t(0)));
    }

    /// Straight-line recomputation of the marking on two clusters.
    #[test]
    fn two_clusters_match_hand_trace() {
        let inst = ClusteringInstance::new(2, 4, 2, 0.2).unwrap();
        let g = grid(&inst);
        let mut pts: Vec<Point> = Vec::new();
        for x in 1..=3 {
            for y in 1..=3 {
                pts.push(vec![x, y]);
            }
        }
        pts.push(vec![15, 15]);
        pts.push(vec![16, 16]);
        // o = 800: T_i = 4^i·(2/16)²·800/200 = 4^i / 16, so T = 1/16, 1/4, 1, 4, 16.
        let sched = ThresholdSchedule::new(&inst, 800.0).unwrap();
        let expected_t = [1.0 / 16.0, 0.25, 1.0, 4.0, 16.0];
        for (i, t) in expected_t.iter().enumerate() {
            assert!((sched.t(i) - t).abs() < 1e-12);
        }
        let a = offline_sensitivity(&pts, &sched, &g, CountSource::Exact, LevelEstimates::Exact).unwrap();
        // Unshifted cells at level i are [n·g_i, (n+1)·g_i). Levels 0..2 hold
        // at least one point per occupied cell, so every occupied cell is
        // heavy. At level 3 (side 2) the block splits into cells of 1, 2, 2
        // and 4 points; only the 4-point cell {2,3}² is heavy. The far pair
        // sit in separate singleton cells.
        let level_of = |p: &[u32]| a.levels[pts.iter().position(|q| q[..] == p[..]).unwrap()];
        for p in [[2, 2], [2, 3], [3, 2], [3, 3]] {
            assert_eq!(level_of(&p), 4);
        }
        for p in [[1, 1], [1, 2], [1, 3], [2, 1], [3, 1], [15, 15], [16, 16]] {
            assert_eq!(level_of(&p), 3);
        }
        assert_eq!(a.partition[3].len(), 7);
        assert_eq!(a.partition[4].len(), 4);
        let n: usize = a.partition.iter().map(Vec::len).sum();
        assert_eq!(n, pts.len());
    }

    #[test]
    fn injected_exact_counts_reproduce_exact() {
        let inst = ClusteringInstance::new(2, 3, 2, 0.2).unwrap();
        let g = grid(&inst);
        let pts: Vec<Point> = vec![vec![1, 1], vec![2, 1], vec![8, 8], vec![5, 2]];
        let sched = ThresholdSchedule::new(&inst, 300.0).unwrap();
        let exact = offline_sensitivity(&pts, &sched, &g, CountSource::Exact, LevelEstimates::Exact).unwrap();
        let f = exact_cell_counts(&pts, &g);
        let inj = offline_sensitivity(&pts, &sched, &g, CountSource::Injected(&f), LevelEstimates::Injected(&exact.qhat))
            .unwrap();
        assert_eq!(exact, inj);
    }

    #[test]
    fn empty_retained_gives_empty_coreset() {
        let inst = ClusteringInstance::new(2, 3, 2, 0.2).unwrap();
        let g = grid(&inst);
        let sched = ThresholdSchedule::new(&inst, 300.0).unwrap();
        let pts = vec![vec![1, 1]];
        let zeros = vec![0.0; 4];
        let a = offline_sensitivity(&pts, &sched, &g, CountSource::Exact, LevelEstimates::Injected(&zeros)).unwrap();
        assert!(a.retained.is_empty());
        let c = offline_coreset(&pts, &a, &Scaling::default(), 1).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.meta.samples, 0);
    }

    #[test]
    fn single_level_weights_are_equal() {
        let inst = ClusteringInstance::new(2, 4, 1, 0.2).unwrap();
        let g = grid(&inst);
        let pts: Vec<Point> = (1..=6).map(|x| vec![x, x]).collect();
        let sched = ThresholdSchedule::new(&inst, 1e6).unwrap();
        let a = offline_sensitivity(&pts, &sched, &g, CountSource::Exact, LevelEstimates::Exact).unwrap();
        let s = Scaling { samples: 1e-3, ..Scaling::default() };
        let c = offline_coreset(&pts, &a, &s, 9).unwrap();
        assert!(!c.is_empty());
        let w = a.total / (c.meta.samples as f64 * sched.sensitivity(0));
        assert!(c.entries.iter().all(|e| e.weight == w));
        assert!((c.total_weight() - 6.0).abs() < 1e-9);
    }
}
