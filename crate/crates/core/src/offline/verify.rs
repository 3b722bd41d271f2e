//! Empirical coreset check over families of candidate center sets, and sampled
//! lower bounds on sensitivity.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::coreset::Coreset;
use crate::error::{domain, Result};
use crate::geometry::{min_dist2, to_real, Point};
use crate::hashing::SeedTree;

use super::solve::{brute_force_opt, kmeanspp_lloyd, kmeanspp_seed, unit_weights, BRUTE_FORCE_MAX_K, BRUTE_FORCE_MAX_POINTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Uniform real centers in the domain box.
    Uniform,
    /// k-means++ seeding on the live set.
    KppQ,
    /// k-means++ seeding on the weighted coreset.
    KppS,
    /// The (near-)optimal centers with Gaussian noise at random scales.
    PerturbedOpt,
    /// Centers sitting on live points, preferring points absent from the coreset.
    NearPoint,
}

pub const FAMILIES: [Family; 5] = [Family::Uniform, Family::KppQ, Family::KppS, Family::PerturbedOpt, Family::NearPoint];

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Uniform => "uniform",
            Family::KppQ => "kpp-q",
            Family::KppS => "kpp-s",
            Family::PerturbedOpt => "perturbed-opt",
            Family::NearPoint => "near-point",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        FAMILIES
            .into_iter()
            .find(|f| f.name() == s)
            .map_or_else(|| domain(format!("unknown family {s:?}")), Ok)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FamilyReport {
    pub family: Family,
    pub count: usize,
    pub max: f64,
    pub median: f64,
    pub p90: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub epsilon: f64,
    pub max_error: f64,
    pub centers_tested: usize,
    pub families: Vec<FamilyReport>,
    pub pass: bool,
}

/// `|cost(S,Z) − cost(Q,Z)| / cost(Q,Z)`, with `0/0 = 0`.
pub fn relative_error(q: &[Point], s: &Coreset, centers: &[Vec<f64>]) -> f64 {
    let cq: f64 = q.iter().map(|p| min_dist2(p, centers)).sum();
    let cs = s.cost(centers);
    if cq == 0.0 {
        return if cs == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (cs - cq).abs() / cq
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

struct CenterGen<'a> {
    q: &'a [Point],
    k: usize,
    side: f64,
    q_real: Vec<(Vec<f64>, f64)>,
    s_real: Vec<(Vec<f64>, f64)>,
    opt: Vec<Vec<f64>>,
    absent: Vec<usize>,
}

impl<'a> CenterGen<'a> {
    fn new(q: &'a [Point], s: &Coreset, k: usize, side: u64, seed: u64) -> Result<Self> {
        let opt = if q.len() <= BRUTE_FORCE_MAX_POINTS && k <= BRUTE_FORCE_MAX_K {
            brute_force_opt(q, k)?.centers
        } else {
            kmeanspp_lloyd(&unit_weights(q), k, 5, seed)?.centers
        };
        let support: std::collections::BTreeSet<&Point> = s.entries.iter().map(|e| &e.point).collect();
        let absent = (0..q.len()).filter(|&i| !support.contains(&q[i])).collect();
        Ok(Self {
            q,
            k,
            side: side as f64,
            q_real: q.iter().map(|p| (to_real(p), 1.0)).collect(),
            s_real: s.merged().into_iter().map(|e| (to_real(&e.point), e.weight)).collect(),
            opt,
            absent,
        })
    }

    fn uniform<R: Rng>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        let d = self.q[0].len();
        (0..self.k).map(|_| (0..d).map(|_| rng.random_range(1.0..=self.side)).collect()).collect()
    }

    fn generate<R: Rng>(&self, family: Family, rng: &mut R) -> Vec<Vec<f64>> {
        match family {
            Family::Uniform => self.uniform(rng),
            Family::KppQ => kmeanspp_seed(&self.q_real, self.k, rng),
            Family::KppS if self.s_real.is_empty() => self.uniform(rng),
            Family::KppS => kmeanspp_seed(&self.s_real, self.k, rng),
            Family::PerturbedOpt => {
                let scale = self.side * 2f64.powf(-rng.random_range(0.0..self.side.log2() + 2.0));
                let noise = Normal::new(0.0, scale).expect("positive scale");
                self.opt.iter().map(|z| z.iter().map(|x| x + noise.sample(rng)).collect()).collect()
            }
            Family::NearPoint => {
                let n = self.q.len();
                let take = self.k.min(n);
                let mut idx: Vec<usize> = sample(rng, n, take).into_vec();
                if !self.absent.is_empty() && rng.random_bool(0.5) {
                    idx[0] = self.absent[rng.random_range(0..self.absent.len())];
                }
                idx.into_iter()
                    .map(|i| self.q_real[i].0.iter().map(|x| x + rng.random_range(-0.5..=0.5)).collect())
                    .collect()
            }
        }
    }
}

/// Relative errors over `count` center sets per family; passes iff the
/// maximum is at most `epsilon`.
pub fn verify_coreset(
    q: &[Point],
    s: &Coreset,
    k: usize,
    side: u64,
    epsilon: f64,
    families: &[(Family, usize)],
    seed: u64,
) -> Result<VerifyReport> {
    if q.is_empty() {
        let max = if s.total_weight() == 0.0 { 0.0 } else { f64::INFINITY };
        let reports = families.iter().map(|&(f, c)| FamilyReport { family: f, count: c, max, median: max, p90: max });
        return Ok(VerifyReport {
            epsilon,
            max_error: max,
            centers_tested: families.iter().map(|f| f.1).sum(),
            families: reports.collect(),
            pass: max <= epsilon,
        });
    }
    let tree = SeedTree(seed);
    let gen = CenterGen::new(q, s, k, side, tree.child(0).0)?;
    let mut reports = Vec::new();
    let mut max_error: f64 = 0.0;
    let mut tested = 0;
    for (fi, &(family, count)) in families.iter().enumerate() {
        let mut rng = tree.child(1 + fi as u64).rng();
        let mut errs: Vec<f64> = (0..count).map(|_| relative_error(q, s, &gen.generate(family, &mut rng))).collect();
        errs.sort_by(f64::total_cmp);
        let max = errs.last().copied().unwrap_or(0.0);
        max_error = max_error.max(max);
        tested += count;
        reports.push(FamilyReport { family, count, max, median: quantile(&errs, 0.5), p90: quantile(&errs, 0.9) });
    }
    Ok(VerifyReport { epsilon, max_error, centers_tested: tested, families: reports, pass: max_error <= epsilon })
}

/// `max dist²(p,Z)/cost(Q,Z)` over sampled `Z`, a lower bound on the
/// sensitivity of `q[index]`. Besides generic families it tries center sets
/// fitted to `Q \ {p}`, which are the natural maximizers.
pub fn sensitivity_lower_bound(q: &[Point], index: usize, k: usize, side: u64, samples: usize, seed: u64) -> Result<f64> {
    if index >= q.len() {
        return domain(format!("point index {index} outside the set of {}", q.len()));
    }
    let p = &q[index];
    let others: Vec<Point> = q.iter().enumerate().filter(|&(i, _)| i != index).map(|(_, x)| x.clone()).collect();
    let tree = SeedTree(seed);
    let mut rng = tree.child(0).rng();
    let ratio = |z: &[Vec<f64>]| {
        let total: f64 = q.iter().map(|x| min_dist2(x, z)).sum();
        if total == 0.0 {
            0.0
        } else {
            min_dist2(p, z) / total
        }
    };
    let mut best: f64 = 0.0;
    if !others.is_empty() {
        let fit = kmeanspp_lloyd(&unit_weights(&others), k, 3, tree.child(1).0)?;
        best = best.max(ratio(&fit.centers));
    }
    let q_real: Vec<(Vec<f64>, f64)> = q.iter().map(|x| (to_real(x), 1.0)).collect();
    let o_real: Vec<(Vec<f64>, f64)> = others.iter().map(|x| (to_real(x), 1.0)).collect();
    let d = p.len();
    for i in 0..samples {
        let z: Vec<Vec<f64>> = match i % 4 {
            0 => (0..k).map(|_| (0..d).map(|_| rng.random_range(1.0..=side as f64)).collect()).collect(),
            1 => kmeanspp_seed(&q_real, k, &mut rng),
            2 if !o_real.is_empty() => kmeanspp_seed(&o_real, k, &mut rng),
            _ if !others.is_empty() => {
                let take = k.min(others.len());
                sample(&mut rng, others.len(), take).into_iter().map(|j| o_real[j].0.clone()).collect()
            }
            _ => (0..k).map(|_| (0..d).map(|_| rng.random_range(1.0..=side as f64)).collect()).collect(),
        };
        best = best.max(ratio(&z));
    }
    Ok(best)
}
