//! Streaming sensitivity sampling for one guess `o`.
//!
//! Each level keeps `m̂` label hashes. A point hashed in by label `j` is stored
//! at that level as the pair `(p, j)`. At query time a level is drawn in
//! proportion to its estimated sensitivity mass, and the smallest unused label
//! that stored any member of `Q_i` supplies a uniform point of `Q_i`.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::Rng;

use crate::coreset::{Coreset, CoresetMeta};
use crate::error::Result;
use crate::estimation::{EstimationFailure, EstimationState, EstimationView};
use crate::geometry::{CellId, ClusteringInstance, GridHierarchy, Point, WeightedPoint};
use crate::hashing::{derive_seed, point_index_unchecked, KwiseBank, SeedTree, MAX_CELL_DIM};
use crate::params::{EstimationParams, SamplerParams, Scaling, ThresholdSchedule};
use crate::storing::{Storing, StoringFailure, StoringOutput};

#[derive(Clone, Debug, PartialEq)]
pub enum SamplerFailure {
    Estimation(EstimationFailure),
    Storing { level: usize, cause: StoringFailure },
    /// A crucial cell holds more than `β` stored pairs.
    Overflow { level: usize, cell: CellId, count: u64 },
    /// No unused label stores a member of `Q_i`.
    ExhaustedLabels { level: usize, draw: usize },
    /// Not a FAIL: `m` exceeds the caller's size limit, so no draws were made.
    TooLarge { samples: usize, limit: usize },
}

impl SamplerFailure {
    /// Short cause tag.
    pub fn cause(&self) -> &'static str {
        match self {
            SamplerFailure::Estimation(_) => "estimation-fail",
            SamplerFailure::Storing { .. } => "storing-fail",
            SamplerFailure::Overflow { .. } => "overflow-fail",
            SamplerFailure::ExhaustedLabels { .. } => "exhausted-labels",
            SamplerFailure::TooLarge { .. } => "oversize",
        }
    }
}

impl std::fmt::Display for SamplerFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SamplerFailure::Estimation(e) => write!(f, "estimation-fail ({e})"),
            SamplerFailure::Storing { level, cause } => write!(f, "storing-fail at level {level} ({cause})"),
            SamplerFailure::Overflow { level, count, .. } => {
                write!(f, "overflow-fail at level {level} (crucial cell with {count} pairs)")
            }
            SamplerFailure::ExhaustedLabels { level, draw } => {
                write!(f, "exhausted-labels at level {level} on draw {draw}")
            }
            SamplerFailure::TooLarge { samples, limit } => write!(f, "oversize (m = {samples} > {limit})"),
        }
    }
}

/// One draw: its level and the label that supplied it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Draw {
    pub level: usize,
    pub label: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerOutput {
    pub coreset: Coreset,
    pub view: EstimationView,
    /// Aligned with `coreset.entries`.
    pub draws: Vec<Draw>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerState {
    inst: ClusteringInstance,
    grid: Arc<GridHierarchy>,
    schedule: ThresholdSchedule,
    params: SamplerParams,
    estimation: EstimationState,
    /// `None` on dead levels, which can hold no member of `Q_i`.
    labels: Vec<Option<KwiseBank>>,
    storings: Vec<Option<Storing>>,
    query_seed: u64,
}

/// A level `i < L` is dead when `T_i ≤ 1` and its coarse counts are exact:
/// every non-empty cell is then heavy, so no point has crucial level `i`.
pub fn dead_level(level: usize, inst: &ClusteringInstance, sched: &ThresholdSchedule, est: &EstimationParams) -> bool {
    let t = sched.t(level);
    level < inst.levels() as usize && t <= 1.0 && est.rate(t) >= 1.0
}

impl SamplerState {
    pub fn new(
        o: f64,
        delta: f64,
        inst: &ClusteringInstance,
        grid: Arc<GridHierarchy>,
        scaling: &Scaling,
        seed: u64,
    ) -> Result<Self> {
        let schedule = ThresholdSchedule::new(inst, o)?;
        let params = SamplerParams::new(inst, delta, scaling)?;
        let tree = SeedTree(seed);
        let estimation =
            EstimationState::new(o, params.estimation_delta, inst, grid.clone(), scaling, tree.child(0).0)?;
        let mut labels = Vec::new();
        let mut storings = Vec::new();
        for level in 0..=inst.levels() as usize {
            let s = tree.child(1 + level as u64);
            if dead_level(level, inst, &schedule, estimation.params()) {
                labels.push(None);
                storings.push(None);
                continue;
            }
            labels.push(Some(KwiseBank::new(
                params.labels,
                params.lambda,
                params.rate(schedule.t(level)),
                derive_seed(s.0, 0),
            )?));
            storings.push(Some(Storing::new(
                grid.clone(),
                level as i32,
                params.alpha,
                params.beta,
                params.storing_delta,
                params.labels as u64,
                derive_seed(s.0, 1),
            )?));
        }
        Ok(Self {
            inst: *inst,
            grid,
            schedule,
            params,
            estimation,
            labels,
            storings,
            query_seed: tree.child(u64::MAX).0,
        })
    }

    pub fn guess(&self) -> f64 {
        self.schedule.o
    }

    pub fn params(&self) -> &SamplerParams {
        &self.params
    }

    pub fn schedule(&self) -> &ThresholdSchedule {
        &self.schedule
    }

    pub fn estimation(&self) -> &EstimationState {
        &self.estimation
    }

    pub fn update(&mut self, p: &[u32], sign: i64) {
        self.estimation.update(p, sign);
        let x = point_index_unchecked(p, self.inst.delta_exp);
        let mut buf = [0i64; MAX_CELL_DIM];
        let coords = &mut buf[..p.len()];
        for (level, (bank, storing)) in self.labels.iter().zip(self.storings.iter_mut()).enumerate() {
            let (Some(bank), Some(storing)) = (bank, storing) else { continue };
            self.grid.coords_into(p, level as i32, coords);
            bank.for_each_hit(x, |j| storing.update_cell(coords, p, j as u64 + 1, sign));
        }
    }

    /// Stored pairs per level (empty on dead levels), or the first Storing failure.
    pub fn stored(&self) -> std::result::Result<Vec<StoringOutput>, SamplerFailure> {
        self.storings
            .iter()
            .enumerate()
            .map(|(level, st)| match st {
                Some(st) => st.query().map_err(|cause| SamplerFailure::Storing { level, cause }),
                None => Ok(StoringOutput::default()),
            })
            .collect()
    }

    /// Whether level `i` keeps a label bank and Storing.
    pub fn is_active(&self, level: usize) -> bool {
        self.storings[level].is_some()
    }

    pub fn query(&self) -> std::result::Result<SamplerOutput, SamplerFailure> {
        self.query_limited(usize::MAX)
    }

    /// As [`SamplerState::query`], declining before any draw when `m > limit`.
    pub fn query_limited(&self, limit: usize) -> std::result::Result<SamplerOutput, SamplerFailure> {
        let view = self.estimation.query().map_err(SamplerFailure::Estimation)?;
        let stored = self.stored()?;
        for (level, out) in stored.iter().enumerate() {
            for (cell, &count) in &out.cells {
                if count > self.params.beta as u64 && view.marks.is_crucial(cell) {
                    return Err(SamplerFailure::Overflow { level, cell: cell.clone(), count });
                }
            }
        }
        let sched = &self.schedule;
        let retained: Vec<usize> =
            (0..view.qhat.len()).filter(|&i| view.qhat[i] >= sched.gamma() * sched.t(i)).collect();
        let mass: Vec<f64> = retained.iter().map(|&i| view.qhat[i] * sched.sensitivity(i)).collect();
        let total: f64 = mass.iter().sum();
        let m = self.params.sample_count(&self.inst, total);
        if m > limit {
            return Err(SamplerFailure::TooLarge { samples: m, limit });
        }

        // Pools: label -> members of Q_i stored under that label.
        let mut level_of: HashMap<&Point, usize> = HashMap::new();
        let mut pools: BTreeMap<usize, BTreeMap<u64, Vec<&Point>>> = BTreeMap::new();
        for &i in &retained {
            let pool = pools.entry(i).or_default();
            for (p, label) in &stored[i].points {
                let lvl = *level_of.entry(p).or_insert_with(|| view.marks.crucial_level(p, &self.grid));
                if lvl == i {
                    pool.entry(*label).or_default().push(p);
                }
            }
        }

        let mut rng = SeedTree(self.query_seed).rng();
        let mut cursor: BTreeMap<usize, u64> = BTreeMap::new();
        let mut entries = Vec::with_capacity(m);
        let mut draws = Vec::with_capacity(m);
        for draw in 0..m {
            let level = pick_level(&retained, &mass, total, rng.random::<f64>());
            let next = cursor.entry(level).or_insert(1);
            let Some((&label, members)) = pools[&level].range(*next..).next() else {
                return Err(SamplerFailure::ExhaustedLabels { level, draw });
            };
            let p = members[rng.random_range(0..members.len())];
            *next = label + 1;
            let weight = total / (m as f64 * sched.sensitivity(level));
            entries.push(WeightedPoint { point: p.clone(), weight });
            draws.push(Draw { level, label });
        }
        let coreset = Coreset {
            entries,
            meta: CoresetMeta { guess: Some(sched.o), total_sensitivity: total, samples: m, levels: retained },
        };
        Ok(SamplerOutput { coreset, view, draws })
    }

    pub fn nominal_buckets(&self) -> f64 {
        self.estimation.nominal_buckets() + self.storings.iter().flatten().map(Storing::nominal_buckets).sum::<f64>()
    }

    pub fn resident_bytes(&self) -> usize {
        self.estimation.resident_bytes() + self.storings.iter().flatten().map(Storing::resident_bytes).sum::<usize>()
    }
}

/// Inverse-CDF choice of a level with probability `mass_i / total`.
pub fn pick_level(levels: &[usize], mass: &[f64], total: f64, u: f64) -> usize {
    let target = u * total;
    let mut acc = 0.0;
    for (&l, &w) in levels.iter().zip(mass) {
        acc += w;
        if target < acc {
            return l;
        }
    }
    *levels.iter().rev().zip(mass.iter().rev()).find(|(_, &w)| w > 0.0).map(|(l, _)| l).unwrap_or(&levels[0])
}
