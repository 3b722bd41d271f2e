//! The guess sweep: an exact shortcut for small live sets plus one sampler per
//! guess `o_u = 2^u·50k`, all sharing one shifted grid.

use std::sync::Arc;

use serde::Serialize;

use crate::coreset::Coreset;
use crate::error::Result;
use crate::geometry::{ClusteringInstance, GridHierarchy, Point};
use crate::hashing::{point_from_index, point_index_unchecked, SeedTree};
use crate::params::{DriverParams, Scaling};
use crate::sampler::{SamplerFailure, SamplerOutput, SamplerState};
use crate::sketch::{DecodeFailure, DistinctSketch};
use crate::stream::Op;

/// Outcome of one guess at query time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GuessReport {
    pub u: usize,
    pub guess: f64,
    /// `ok`, `oversize`, or the FAIL cause.
    pub status: String,
    /// `m`, when the sampler got that far.
    pub samples: Option<usize>,
    pub nominal_buckets: f64,
    pub resident_bytes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriverOutput {
    pub coreset: Coreset,
    /// Index into the guesses of the selected sampler; `None` on the shortcut path.
    pub selected: Option<usize>,
    /// Reports for the guesses examined, in order.
    pub guesses: Vec<GuessReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriverFailure {
    pub shortcut: DecodeFailure,
    pub guesses: Vec<GuessReport>,
}

impl std::fmt::Display for DriverFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FAIL: shortcut {}", self.shortcut)?;
        for g in &self.guesses {
            write!(f, "; u={} {}", g.u, g.status)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Driver {
    inst: ClusteringInstance,
    grid: Arc<GridHierarchy>,
    params: DriverParams,
    shortcut: DistinctSketch,
    samplers: Vec<SamplerState>,
}

impl Driver {
    pub fn new(inst: &ClusteringInstance, scaling: &Scaling, seed: u64) -> Result<Self> {
        let params = DriverParams::new(inst, scaling)?;
        let tree = SeedTree(seed);
        let grid = Arc::new(GridHierarchy::random(inst, &mut tree.child(0).rng()));
        let shortcut = DistinctSketch::with_domain(
            params.shortcut_capacity,
            params.shortcut_delta,
            inst.domain_size(),
            tree.child(1).0,
        )?;
        let samplers = params
            .guesses
            .iter()
            .enumerate()
            .map(|(u, &o)| SamplerState::new(o, params.guess_delta, inst, grid.clone(), scaling, tree.child(2 + u as u64).0))
            .collect::<Result<_>>()?;
        Ok(Self { inst: *inst, grid, params, shortcut, samplers })
    }

    pub fn instance(&self) -> &ClusteringInstance {
        &self.inst
    }

    pub fn grid(&self) -> &Arc<GridHierarchy> {
        &self.grid
    }

    pub fn params(&self) -> &DriverParams {
        &self.params
    }

    pub fn samplers(&self) -> &[SamplerState] {
        &self.samplers
    }

    pub fn shortcut(&self) -> &DistinctSketch {
        &self.shortcut
    }

    pub fn update(&mut self, p: &[u32], sign: i64) {
        self.shortcut.update(point_index_unchecked(p, self.inst.delta_exp), sign);
        for s in &mut self.samplers {
            s.update(p, sign);
        }
    }

    /// Applies `ops` in order, fanning the samplers out over `workers` threads.
    /// The resulting state does not depend on `workers`.
    pub fn update_batch(&mut self, ops: &[Op], workers: usize) {
        let delta_exp = self.inst.delta_exp;
        for op in ops {
            self.shortcut.update(point_index_unchecked(&op.point, delta_exp), op.sign.as_i64());
        }
        let workers = workers.clamp(1, self.samplers.len().max(1));
        if workers == 1 {
            for s in &mut self.samplers {
                for op in ops {
                    s.update(&op.point, op.sign.as_i64());
                }
            }
            return;
        }
        let chunk = self.samplers.len().div_ceil(workers);
        std::thread::scope(|scope| {
            for part in self.samplers.chunks_mut(chunk) {
                scope.spawn(move || {
                    for s in part {
                        for op in ops {
                            s.update(&op.point, op.sign.as_i64());
                        }
                    }
                });
            }
        });
    }

    /// The live set if the shortcut decodes.
    pub fn shortcut_points(&self) -> std::result::Result<Vec<Point>, DecodeFailure> {
        let items = self.shortcut.query()?;
        Ok(items.keys().map(|&x| point_from_index(x, self.inst.d, self.inst.delta_exp)).collect())
    }

    fn report(&self, u: usize, outcome: &std::result::Result<SamplerOutput, SamplerFailure>) -> GuessReport {
        let s = &self.samplers[u];
        let (status, samples) = match outcome {
            Ok(out) => ("ok".to_string(), Some(out.coreset.meta.samples)),
            Err(SamplerFailure::TooLarge { samples, .. }) => ("oversize".to_string(), Some(*samples)),
            Err(e) => (e.cause().to_string(), None),
        };
        GuessReport {
            u: u + 1,
            guess: s.guess(),
            status,
            samples,
            nominal_buckets: s.nominal_buckets(),
            resident_bytes: s.resident_bytes(),
        }
    }

    /// One guess's outcome under the size limit `h`.
    pub fn query_guess(&self, u: usize) -> std::result::Result<SamplerOutput, SamplerFailure> {
        self.samplers[u].query_limited(self.params.size_threshold)
    }

    pub fn query(&self) -> std::result::Result<DriverOutput, DriverFailure> {
        let shortcut = match self.shortcut_points() {
            Ok(points) => {
                return Ok(DriverOutput { coreset: Coreset::exact(&points), selected: None, guesses: Vec::new() })
            }
            Err(e) => e,
        };
        let mut guesses = Vec::new();
        for u in 0..self.samplers.len() {
            let outcome = self.query_guess(u);
            guesses.push(self.report(u, &outcome));
            if let Ok(out) = outcome {
                return Ok(DriverOutput { coreset: out.coreset, selected: Some(u), guesses });
            }
        }
        Err(DriverFailure { shortcut, guesses })
    }

    /// Every guess's outcome, for reporting.
    pub fn query_all(&self) -> Vec<GuessReport> {
        (0..self.samplers.len()).map(|u| self.report(u, &self.query_guess(u))).collect()
    }

    pub fn nominal_buckets(&self) -> f64 {
        self.shortcut.nominal_buckets() as f64 + self.samplers.iter().map(SamplerState::nominal_buckets).sum::<f64>()
    }

    pub fn resident_bytes(&self) -> usize {
        self.shortcut.resident_bytes() + self.samplers.iter().map(SamplerState::resident_bytes).sum::<usize>()
    }
}
