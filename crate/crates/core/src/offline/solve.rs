//! Exact k-means on tiny inputs and seeded k-means++ with Lloyd refinement.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::geometry::{to_real, Point, WeightedPoint};
use crate::hashing::SeedTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Heuristic,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OfflineSolution {
    pub centers: Vec<Vec<f64>>,
    pub cost: f64,
    pub method: Method,
}

pub const BRUTE_FORCE_MAX_POINTS: usize = 14;
pub const BRUTE_FORCE_MAX_K: usize = 4;

pub fn unit_weights(points: &[Point]) -> Vec<WeightedPoint> {
    points.iter().map(|p| WeightedPoint { point: p.clone(), weight: 1.0 }).collect()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Weighted cost of real points against `centers`.
pub fn kmeans_cost(points: &[(Vec<f64>, f64)], centers: &[Vec<f64>]) -> f64 {
    points.iter().map(|(x, w)| w * centers.iter().map(|z| sq(x, z)).fold(f64::INFINITY, f64::min)).sum()
}

#[derive(Clone)]
struct Block {
    count: f64,
    sum: Vec<f64>,
    sum_sq: f64,
}

impl Block {
    fn sse(&self) -> f64 {
        if self.count == 0.0 {
            return 0.0;
        }
        let s2: f64 = self.sum.iter().map(|s| s * s).sum();
        (self.sum_sq - s2 / self.count).max(0.0)
    }
}

/// Exact optimum over all partitions into at most `k` blocks, enumerated as
/// restricted growth strings with branch-and-bound on the partial cost.
pub fn brute_force_opt(points: &[Point], k: usize) -> Result<OfflineSolution> {
    if k == 0 {
        return domain("k must be at least 1");
    }
    if points.len() > BRUTE_FORCE_MAX_POINTS || k > BRUTE_FORCE_MAX_K {
        return domain(format!(
            "brute force supports n ≤ {BRUTE_FORCE_MAX_POINTS} and k ≤ {BRUTE_FORCE_MAX_K}; use kmeanspp_lloyd"
        ));
    }
    let xs: Vec<Vec<f64>> = points.iter().map(|p| to_real(p)).collect();
    if xs.len() <= k {
        return Ok(OfflineSolution { centers: xs, cost: 0.0, method: Method::Exact });
    }
    let d = xs[0].len();
    let mut search = Search {
        xs: &xs,
        k,
        blocks: vec![Block { count: 0.0, sum: vec![0.0; d], sum_sq: 0.0 }; k],
        assign: vec![0; xs.len()],
        best: f64::INFINITY,
        best_assign: Vec::new(),
    };
    search.run(0, 0, 0.0);
    let centers = centroids(&xs, &search.best_assign, k);
    Ok(OfflineSolution { centers, cost: search.best, method: Method::Exact })
}

struct Search<'a> {
    xs: &'a [Vec<f64>],
    k: usize,
    blocks: Vec<Block>,
    assign: Vec<usize>,
    best: f64,
    best_assign: Vec<usize>,
}

impl Search<'_> {
    fn run(&mut self, i: usize, used: usize, partial: f64) {
        if partial >= self.best {
            return;
        }
        if i == self.xs.len() {
            self.best = partial;
            self.best_assign = self.assign.clone();
            return;
        }
        let x = &self.xs[i];
        let x2: f64 = x.iter().map(|v| v * v).sum();
        for b in 0..(used + 1).min(self.k) {
            let before = self.blocks[b].sse();
            {
                let blk = &mut self.blocks[b];
                blk.count += 1.0;
                blk.sum_sq += x2;
                blk.sum.iter_mut().zip(x).for_each(|(s, v)| *s += v);
            }
            let after = self.blocks[b].sse();
            self.assign[i] = b;
            self.run(i + 1, used.max(b + 1), partial - before + after);
            let blk = &mut self.blocks[b];
            blk.count -= 1.0;
            blk.sum_sq -= x2;
            blk.sum.iter_mut().zip(x).for_each(|(s, v)| *s -= v);
        }
    }
}

fn centroids(xs: &[Vec<f64>], assign: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = xs[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (x, &b) in xs.iter().zip(assign) {
        counts[b] += 1;
        sums[b].iter_mut().zip(x).for_each(|(s, v)| *s += v);
    }
    sums.into_iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect()
}

/// Weighted D² seeding.
pub fn kmeanspp_seed<R: Rng + ?Sized>(points: &[(Vec<f64>, f64)], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let weights: Vec<f64> = points.iter().map(|p| p.1).collect();
    let first = WeightedIndex::new(&weights).expect("positive weights");
    let mut centers = vec![points[first.sample(rng)].0.clone()];
    let mut best: Vec<f64> = points.iter().map(|(x, _)| sq(x, &centers[0])).collect();
    while centers.len() < k {
        let mass: Vec<f64> = points.iter().zip(&best).map(|((_, w), d)| w * d).collect();
        let next = match WeightedIndex::new(&mass) {
            Ok(dist) => points[dist.sample(rng)].0.clone(),
            // Every point already coincides with a center.
            Err(_) => break,
        };
        for (b, (x, _)) in best.iter_mut().zip(points) {
            *b = b.min(sq(x, &next));
        }
        centers.push(next);
    }
    centers
}

fn lloyd(points: &[(Vec<f64>, f64)], mut centers: Vec<Vec<f64>>, iters: usize) -> Vec<Vec<f64>> {
    let d = points[0].0.len();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..iters {
        let mut changed = false;
        for (a, (x, _)) in assign.iter_mut().zip(points) {
            let (b, _) = centers
                .iter()
                .enumerate()
                .map(|(j, z)| (j, sq(x, z)))
                .fold((0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
            if *a != b {
                *a = b;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; centers.len()];
        let mut mass = vec![0.0; centers.len()];
        for (&b, (x, w)) in assign.iter().zip(points) {
            mass[b] += w;
            sums[b].iter_mut().zip(x).for_each(|(s, v)| *s += w * v);
        }
        for ((c, s), m) in centers.iter_mut().zip(sums).zip(mass) {
            if m > 0.0 {
                *c = s.into_iter().map(|v| v / m).collect();
            }
        }
    }
    centers
}

/// Best of `restarts` seeded k-means++ plus Lloyd runs on weighted points.
pub fn kmeanspp_lloyd(points: &[WeightedPoint], k: usize, restarts: usize, seed: u64) -> Result<OfflineSolution> {
    if k == 0 || restarts == 0 {
        return domain("k and restarts must be at least 1");
    }
    let pts: Vec<(Vec<f64>, f64)> = points.iter().map(|e| (to_real(&e.point), e.weight)).collect();
    if pts.iter().any(|p| !(p.1 > 0.0 && p.1.is_finite())) {
        return domain("weights must be positive");
    }
    if pts.is_empty() {
        return Ok(OfflineSolution { centers: Vec::new(), cost: 0.0, method: Method::Heuristic });
    }
    let tree = SeedTree(seed);
    let mut best: Option<OfflineSolution> = None;
    for r in 0..restarts {
        let mut rng = tree.child(r as u64).rng();
        let centers = lloyd(&pts, kmeanspp_seed(&pts, k, &mut rng), 100);
        let cost = kmeans_cost(&pts, &centers);
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            best = Some(OfflineSolution { centers, cost, method: Method::Heuristic });
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::cost;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: every labeling in `[k]^n`, centroid centers.
    fn exhaustive(points: &[Point], k: usize) -> f64 {
        let n = points.len();
        let xs: Vec<Vec<f64>> = points.iter().map(|p| to_real(p)).collect();
        let mut best = f64::INFINITY;
        let mut label = vec![0usize; n];
        loop {
            let centers = centroids(&xs, &label, k);
            let c: f64 = xs.iter().zip(&label).map(|(x, _)| centers.iter().map(|z| sq(x, z)).fold(f64::INFINITY, f64::min)).sum();
            best = best.min(c);
            let mut j = 0;
            while j < n {
                label[j] += 1;
                if label[j] < k {
                    break;
                }
                label[j] = 0;
                j += 1;
            }
            if j == n {
                break;
            }
        }
        best
    }

    #[test]
    fn k_points_cost_zero() {
        let pts = vec![vec![1, 1], vec![5, 5], vec![9, 2]];
        let s = brute_force_opt(&pts, 3).unwrap();
        assert_eq!(s.cost, 0.0);
        assert_eq!(s.centers, pts.iter().map(|p| to_real(p)).collect::<Vec<_>>());
        assert_eq!(kmeanspp_lloyd(&unit_weights(&pts), 3, 1, 0).unwrap().cost, 0.0);
    }

    #[test]
    fn two_points_one_center() {
        let s = brute_force_opt(&[vec![1, 1], vec![1, 3]], 1).unwrap();
        assert_eq!(s.centers, vec![vec![1.0, 2.0]]);
        assert_eq!(s.cost, 2.0);
        assert_eq!(s.method, Method::Exact);
    }

    #[test]
    fn matches_exhaustive_labelings() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pts: Vec<Point> = (0..10).map(|_| vec![rng.random_range(1..=32), rng.random_range(1..=32)]).collect();
            let s = brute_force_opt(&pts, 2).unwrap();
            let e = exhaustive(&pts, 2);
            assert!((s.cost - e).abs() <= 1e-9 * e.max(1.0), "{} vs {e}", s.cost);
            assert!((cost(&pts, &s.centers).unwrap() - s.cost).abs() <= 1e-9 * e.max(1.0));
        }
    }

    #[test]
    fn rejects_large_inputs() {
        let pts: Vec<Point> = (1..=15).map(|x| vec![x]).collect();
        assert!(brute_force_opt(&pts, 2).is_err());
        assert!(brute_force_opt(&pts[..5], 5).is_err());
    }

    #[test]
    fn heuristic_is_deterministic() {
        let pts: Vec<Point> = (1..=30u32).map(|x| vec![x % 7 + 1, x % 11 + 1]).collect();
        let a = kmeanspp_lloyd(&unit_weights(&pts), 3, 1, 5).unwrap();
        let b = kmeanspp_lloyd(&unit_weights(&pts), 3, 1, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.method, Method::Heuristic);
    }

    #[test]
    fn separated_clusters_near_optimal() {
        let mut pts = Vec::new();
        for (cx, cy) in [(5u32, 5u32), (50, 10), (30, 55)] {
            for (dx, dy) in [(0, 0), (1, 0), (0, 2), (2, 1)] {
                pts.push(vec![cx + dx, cy + dy]);
            }
        }
        let exact = brute_force_opt(&pts, 3).unwrap();
        let heur = kmeanspp_lloyd(&unit_weights(&pts), 3, 10, 1).unwrap();
        assert!(heur.cost <= exact.cost * 1.01, "{} vs {}", heur.cost, exact.cost);
    }

    #[test]
    fn weights_act_as_multiplicities() {
        let w = vec![
            WeightedPoint { point: vec![1], weight: 3.0 },
            WeightedPoint { point: vec![5], weight: 1.0 },
        ];
        let s = kmeanspp_lloyd(&w, 1, 1, 0).unwrap();
        assert_eq!(s.centers, vec![vec![2.0]]);
        assert_eq!(s.cost, 3.0 + 9.0);
    }
}
