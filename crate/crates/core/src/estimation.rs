//! Cell-count estimates `f̂(C)`, crucial-mass estimates `q̂_i`, and the
//! heavy/crucial marking they induce.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::error::Result;
use crate::geometry::{parent, CellId, ClusteringInstance, GridHierarchy};
use crate::hashing::{derive_seed, point_index_unchecked, KwiseHash};
use crate::params::{EstimationParams, Scaling, ThresholdSchedule};
use crate::storing::{Storing, StoringFailure};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CellMark {
    Heavy,
    Crucial,
    Unmarked,
}

/// Heavy cells of levels `0..L`; the root is implicitly heavy and level `L`
/// is never heavy. Every other mark follows from this set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellMarks {
    levels: u32,
    heavy: BTreeSet<CellId>,
}

impl CellMarks {
    pub fn heavy_cells(&self) -> &BTreeSet<CellId> {
        &self.heavy
    }

    pub fn is_heavy(&self, c: &CellId) -> bool {
        c.level < 0 || self.heavy.contains(c)
    }

    fn ancestors_heavy(&self, c: &CellId) -> bool {
        let mut cur = c.clone();
        while cur.level >= 0 {
            cur = parent(&cur).expect("level checked");
            if !self.is_heavy(&cur) {
                return false;
            }
        }
        true
    }

    pub fn mark(&self, c: &CellId) -> CellMark {
        if self.is_heavy(c) {
            CellMark::Heavy
        } else if self.ancestors_heavy(c) {
            CellMark::Crucial
        } else {
            CellMark::Unmarked
        }
    }

    /// Marks for the given cells, plus the root.
    pub fn to_map<'a>(&self, cells: impl IntoIterator<Item = &'a CellId>, dim: usize) -> BTreeMap<CellId, CellMark> {
        let mut out: BTreeMap<CellId, CellMark> = cells.into_iter().map(|c| (c.clone(), self.mark(c))).collect();
        out.insert(CellId::new(-1, vec![0; dim]), CellMark::Heavy);
        out
    }

    /// The level whose cell containing `p` is crucial: the first level whose
    /// cell is not heavy, or `L`.
    pub fn crucial_level(&self, p: &[u32], grid: &GridHierarchy) -> usize {
        let mut coords = vec![0i64; p.len()];
        for level in 0..self.levels as i32 {
            grid.coords_into(p, level, &mut coords);
            if !self.heavy.contains(&CellId { level, coords: coords.clone() }) {
                return level as usize;
            }
        }
        self.levels as usize
    }

    pub fn is_crucial(&self, c: &CellId) -> bool {
        self.mark(c) == CellMark::Crucial
    }
}

/// Marks cells from estimates: heavy iff `f̂(C) ≥ T_i(o)` on levels `0..L`.
pub fn mark_cells(fhat: &BTreeMap<CellId, f64>, sched: &ThresholdSchedule, grid: &GridHierarchy) -> CellMarks {
    let levels = grid.levels();
    let heavy = fhat
        .iter()
        .filter(|(c, &z)| c.level >= 0 && (c.level as u32) < levels && z >= sched.t(c.level as usize))
        .map(|(c, _)| c.clone())
        .collect();
    CellMarks { levels, heavy }
}

/// Estimates, marks and raw fine counts from one query.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimationView {
    pub schedule: ThresholdSchedule,
    pub fhat: BTreeMap<CellId, f64>,
    pub qhat: Vec<f64>,
    pub marks: CellMarks,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EstimationFailure {
    pub level: usize,
    pub fine: bool,
    pub cause: StoringFailure,
}

impl std::fmt::Display for EstimationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let which = if self.fine { "fine" } else { "coarse" };
        write!(f, "{which} storing at level {}: {}", self.level, self.cause)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Subsample {
    hash: KwiseHash,
    storing: Storing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationState {
    schedule: ThresholdSchedule,
    params: EstimationParams,
    grid: Arc<GridHierarchy>,
    delta_exp: u32,
    coarse: Vec<Subsample>,
    fine: Vec<Subsample>,
}

impl EstimationState {
    pub fn new(
        o: f64,
        delta: f64,
        inst: &ClusteringInstance,
        grid: Arc<GridHierarchy>,
        scaling: &Scaling,
        seed: u64,
    ) -> Result<Self> {
        let schedule = ThresholdSchedule::new(inst, o)?;
        let params = EstimationParams::new(inst, delta, scaling)?;
        let mut coarse = Vec::new();
        let mut fine = Vec::new();
        for level in 0..=inst.levels() as usize {
            let t = schedule.t(level);
            let s = derive_seed(seed, level as u64);
            coarse.push(Subsample {
                hash: KwiseHash::new(params.lambda, params.rate(t), derive_seed(s, 0))?,
                storing: Storing::new(grid.clone(), level as i32, params.alpha, 1, params.storing_delta, 1, derive_seed(s, 1))?,
            });
            fine.push(Subsample {
                hash: KwiseHash::new(params.lambda, params.rate_fine(t, &schedule), derive_seed(s, 2))?,
                storing: Storing::new(
                    grid.clone(),
                    level as i32,
                    params.alpha_fine,
                    1,
                    params.storing_delta,
                    1,
                    derive_seed(s, 3),
                )?,
            });
        }
        Ok(Self { schedule, params, grid, delta_exp: inst.levels(), coarse, fine })
    }

    pub fn schedule(&self) -> &ThresholdSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &EstimationParams {
        &self.params
    }

    pub fn update(&mut self, p: &[u32], sign: i64) {
        let x = point_index_unchecked(p, self.delta_exp);
        let mut coords = vec![0i64; p.len()];
        for level in 0..self.coarse.len() {
            let (c, f) = (&mut self.coarse[level], &mut self.fine[level]);
            let (hc, hf) = (c.hash.eval_index(x), f.hash.eval_index(x));
            if !(hc || hf) {
                continue;
            }
            self.grid.coords_into(p, level as i32, &mut coords);
            if hc {
                c.storing.update_cell(&coords, p, 1, sign);
            }
            if hf {
                f.storing.update_cell(&coords, p, 1, sign);
            }
        }
    }

    pub fn query(&self) -> std::result::Result<EstimationView, EstimationFailure> {
        let mut fhat = BTreeMap::new();
        for (level, c) in self.coarse.iter().enumerate() {
            let out = c.storing.query().map_err(|cause| EstimationFailure { level, fine: false, cause })?;
            let scale = self.params.count_scale(self.schedule.t(level));
            for (cell, count) in out.cells {
                fhat.insert(cell, count as f64 * scale);
            }
        }
        let marks = mark_cells(&fhat, &self.schedule, &self.grid);
        let mut qhat = Vec::with_capacity(self.fine.len());
        for (level, f) in self.fine.iter().enumerate() {
            let out = f.storing.query().map_err(|cause| EstimationFailure { level, fine: true, cause })?;
            let mass: u64 = out.cells.iter().filter(|(c, _)| marks.is_crucial(c)).map(|(_, &n)| n).sum();
            qhat.push(self.params.mass_scale(self.schedule.t(level), &self.schedule) * mass as f64);
        }
        Ok(EstimationView { schedule: self.schedule, fhat, qhat, marks })
    }

    pub fn nominal_buckets(&self) -> f64 {
        self.coarse.iter().chain(&self.fine).map(|s| s.storing.nominal_buckets()).sum()
    }

    pub fn resident_bytes(&self) -> usize {
        self.coarse.iter().chain(&self.fine).map(|s| s.storing.resident_bytes()).sum()
    }
}
