//! Seeded synthetic streams.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{domain, Result};
use crate::geometry::Point;
use crate::hashing::SeedTree;
use crate::stream::{Op, StreamFile};

const MAX_TRIES: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteredSpec {
    pub d: usize,
    pub levels: u32,
    /// Total operations, insertions plus deletions.
    pub ops: usize,
    pub blobs: usize,
    /// Blob standard deviation in grid units.
    pub sigma: f64,
    /// Fraction of operations that are deletions, at most 1/2.
    pub deletions: f64,
}

fn check_dims(d: usize, levels: u32) -> Result<()> {
    if d == 0 || levels == 0 || levels > 31 {
        return domain("need d ≥ 1 and 1 ≤ L ≤ 31");
    }
    Ok(())
}

/// Draws a point not currently live.
fn fresh<R: Rng>(live: &HashSet<Point>, rng: &mut R, mut draw: impl FnMut(&mut R) -> Point) -> Result<Point> {
    for _ in 0..MAX_TRIES {
        let p = draw(rng);
        if !live.contains(&p) {
            return Ok(p);
        }
    }
    domain("could not place a new distinct point; the domain is too crowded")
}

/// Removes and returns a uniformly chosen live point.
fn take_random<R: Rng>(order: &mut Vec<Point>, live: &mut HashSet<Point>, rng: &mut R) -> Point {
    let i = rng.random_range(0..order.len());
    let p = order.swap_remove(i);
    live.remove(&p);
    p
}

/// Rounded Gaussian blobs with deletions of random live points interleaved.
pub fn clustered(spec: &ClusteredSpec, seed: u64) -> Result<StreamFile> {
    check_dims(spec.d, spec.levels)?;
    if spec.blobs == 0 || !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return domain("need at least one blob and a finite σ ≥ 0");
    }
    if !(0.0..=0.5).contains(&spec.deletions) {
        return domain(format!("deletion fraction {} outside [0, 1/2]", spec.deletions));
    }
    let side = 1u32 << spec.levels;
    let tree = SeedTree(seed);
    let mut rng = tree.child(0).rng();
    let centers: Vec<Vec<f64>> =
        (0..spec.blobs).map(|_| (0..spec.d).map(|_| rng.random_range(1.0..=side as f64)).collect()).collect();
    let noise = Normal::new(0.0, spec.sigma.max(f64::MIN_POSITIVE)).expect("valid σ");
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Point {
        let c = &centers[rng.random_range(0..centers.len())];
        c.iter().map(|&x| (x + noise.sample(rng)).round().clamp(1.0, side as f64) as u32).collect()
    };
    let n_del = (spec.ops as f64 * spec.deletions).round() as usize;
    let n_ins = spec.ops - n_del;
    let (mut ins_left, mut del_left) = (n_ins, n_del);
    let mut live = HashSet::new();
    let mut order = Vec::new();
    let mut ops = Vec::with_capacity(spec.ops);
    while ins_left + del_left > 0 {
        let delete = del_left > 0
            && !order.is_empty()
            && (ins_left == 0 || rng.random_bool(del_left as f64 / (ins_left + del_left) as f64));
        if delete {
            ops.push(Op::delete(take_random(&mut order, &mut live, &mut rng)));
            del_left -= 1;
        } else {
            let p = fresh(&live, &mut rng, draw)?;
            live.insert(p.clone());
            order.push(p.clone());
            ops.push(Op::insert(p));
            ins_left -= 1;
        }
    }
    StreamFile::new(spec.d, spec.levels, ops)
}

/// `n` distinct uniform insertions.
pub fn uniform(d: usize, levels: u32, n: usize, seed: u64) -> Result<StreamFile> {
    check_dims(d, levels)?;
    let side = 1u32 << levels;
    let mut rng = SeedTree(seed).rng();
    let mut live = HashSet::new();
    let mut ops = Vec::with_capacity(n);
    for _ in 0..n {
        let p = fresh(&live, &mut rng, |r| (0..d).map(|_| r.random_range(1..=side)).collect())?;
        live.insert(p.clone());
        ops.push(Op::insert(p));
    }
    StreamFile::new(d, levels, ops)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChurnSpec {
    pub d: usize,
    pub levels: u32,
    pub waves: usize,
    pub wave_size: usize,
    /// Points left live at the end; planted gradually across the waves.
    pub residual: usize,
}

/// Waves of uniform points inserted and then deleted in shuffled order, with
/// the residual set inserted a share per wave and never deleted.
pub fn churn(spec: &ChurnSpec, seed: u64) -> Result<StreamFile> {
    check_dims(spec.d, spec.levels)?;
    let side = 1u32 << spec.levels;
    let mut rng = SeedTree(seed).rng();
    let draw = |r: &mut rand_chacha::ChaCha8Rng| -> Point { (0..spec.d).map(|_| r.random_range(1..=side)).collect() };
    let mut live = HashSet::new();
    let mut ops = Vec::new();
    let waves = spec.waves.max(1);
    let mut planted = 0;
    for w in 0..waves {
        let target = spec.residual * (w + 1) / waves;
        while planted < target {
            let p = fresh(&live, &mut rng, draw)?;
            live.insert(p.clone());
            ops.push(Op::insert(p));
            planted += 1;
        }
        if w >= spec.waves {
            break;
        }
        let mut wave = Vec::with_capacity(spec.wave_size);
        for _ in 0..spec.wave_size {
            let p = fresh(&live, &mut rng, draw)?;
            live.insert(p.clone());
            ops.push(Op::insert(p.clone()));
            wave.push(p);
        }
        wave.shuffle(&mut rng);
        for p in wave {
            live.remove(&p);
            ops.push(Op::delete(p));
        }
    }
    StreamFile::new(spec.d, spec.levels, ops)
}
