//! Coresets for k-means over dynamic geometric streams.
//!
//! Points live on the grid `[1, Δ]^d` with `Δ = 2^L` and arrive as a sequence
//! of insertions and deletions. The crate maintains, in one pass, a weighted
//! point set whose k-means cost tracks the live set's cost for every choice of
//! `k` centers. The pipeline is bottom-up:
//!
//! - [`geometry`]: shifted nested grids, cells and k-means costs.
//! - [`hashing`]: λ-wise independent subsampling hashes and cell hashes.
//! - [`sketch`]: the `Distinct(s, δ)` sparse-recovery sketch.
//! - [`storing`]: per-level recovery of cells, counts and small-cell contents.
//! - [`estimation`]: cell-count and crucial-mass estimates with heavy/crucial marks.
//! - [`sampler`]: streaming sensitivity sampling for one guess of OPT.
//! - [`driver`]: the guess sweep and small-instance shortcut.
//! - [`offline`]: exact-count reference algorithms, solvers and the coreset verifier.
//! - [`stream`], [`generate`], [`cli`]: file formats, synthetic streams and the `dskm` commands.

pub mod cli;
pub mod coreset;
pub mod driver;
pub mod error;
pub mod estimation;
pub mod generate;
pub mod geometry;
pub mod hashing;
pub mod offline;
pub mod params;
pub mod sampler;
pub mod sketch;
pub mod storing;
pub mod stream;

pub use coreset::{Coreset, CoresetMeta};
pub use error::{Error, Result};
pub use geometry::{CellId, ClusteringInstance, GridHierarchy, Point, WeightedPoint};
pub use params::Scaling;
