//! `Distinct(s, δ)`: exact recovery of up to `s` live items under inserts and
//! deletes, by peeling count / id-sum / fingerprint buckets.
//!
//! The state is the linear image of the item-frequency vector. While the
//! number of live items is at most the number of buckets, the frequency
//! vector itself is kept (sorted) instead of the buckets; queries materialize
//! the buckets and peel exactly as they would on the dense table. Past that
//! point the dense table is allocated. The two representations are
//! interchangeable, so they compare equal whenever their bucket images agree.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::hashing::{PrimeField, MERSENNE_61};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Bucket {
    pub count: i64,
    pub id_sum: i128,
    pub fingerprint: u64,
}

impl Bucket {
    #[inline]
    pub fn is_zero(&self) -> bool {
        self.count == 0 && self.id_sum == 0 && self.fingerprint == 0
    }

    #[inline]
    /// `fp` is `count·φ(item)` in the field.
    fn apply(&mut self, item: u64, count: i64, fp: u64) {
        self.count += count;
        self.id_sum += count as i128 * item as i128;
        self.fingerprint = PrimeField::mersenne61().add(self.fingerprint, fp);
    }
}

pub const BUCKET_BYTES: usize = std::mem::size_of::<Bucket>();

/// Why a decode returned FAIL.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeFailure {
    /// Peeling stopped with nonzero buckets left.
    Stalled,
    /// More than `s` distinct items were recovered.
    OverCapacity,
}

impl std::fmt::Display for DecodeFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeFailure::Stalled => write!(f, "decode stalled"),
            DecodeFailure::OverCapacity => write!(f, "more than capacity items live"),
        }
    }
}

/// Hash functions and dimensions of a sketch; shareable between sketches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SketchLayout {
    capacity: usize,
    rows: usize,
    width: u64,
    domain: u64,
    row_hash: Vec<(u64, u64)>,
    /// Cubic fingerprint coefficients. An affine fingerprint would accept a
    /// two-item bucket as the single item at their mean.
    phi: [u64; 4],
}

impl SketchLayout {
    /// `R = ceil(log2(s/δ)) + 2` rows of `2s` buckets over items `< domain`.
    pub fn new(capacity: usize, delta: f64, domain: u64, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return crate::error::domain("sketch capacity must be positive");
        }
        if !(delta > 0.0 && delta < 0.5) {
            return crate::error::domain(format!("sketch failure budget {delta} outside (0, 1/2)"));
        }
        if domain == 0 || domain > MERSENNE_61 {
            return crate::error::domain(format!("item domain {domain} outside [1, 2^61-1]"));
        }
        let rows = rows_for(capacity, delta);
        let f = PrimeField::mersenne61();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pair = || (1 + f.random(&mut rng) % (MERSENNE_61 - 1), f.random(&mut rng));
        let row_hash = (0..rows).map(|_| pair()).collect();
        let phi = [f.random(&mut rng), f.random(&mut rng), f.random(&mut rng), 1 + f.random(&mut rng) % (MERSENNE_61 - 1)];
        Ok(Self { capacity, rows, width: 2 * capacity as u64, domain, row_hash, phi })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> u64 {
        self.width
    }

    pub fn domain(&self) -> u64 {
        self.domain
    }

    /// `R · 2s`.
    pub fn bucket_count(&self) -> u64 {
        self.rows as u64 * self.width
    }

    #[inline]
    fn index(&self, row: usize, item: u64) -> u64 {
        let f = PrimeField::mersenne61();
        let (a, b) = self.row_hash[row];
        // Multiply-shift maps the uniform field value onto `[0, width)`.
        let h = f.add(f.mul(a, item), b);
        row as u64 * self.width + ((h as u128 * self.width as u128) >> 61) as u64
    }

    #[inline]
    fn phi(&self, item: u64) -> u64 {
        PrimeField::mersenne61().poly(&self.phi, item)
    }

    #[inline]
    fn fingerprint(&self, item: u64, count: i64) -> u64 {
        let f = PrimeField::mersenne61();
        f.mul(f.from_i64(count), self.phi(item))
    }

    /// The item in a verified singleton bucket, with its count.
    fn pure(&self, idx: u64, b: &Bucket) -> Option<(u64, i64)> {
        if b.count == 0 || b.id_sum % b.count as i128 != 0 {
            return None;
        }
        let id = b.id_sum / b.count as i128;
        if id < 0 || id >= self.domain as i128 {
            return None;
        }
        let id = id as u64;
        let row = (idx / self.width) as usize;
        if self.index(row, id) != idx {
            return None;
        }
        let f = PrimeField::mersenne61();
        if b.fingerprint != f.mul(f.from_i64(b.count), self.phi(id)) {
            return None;
        }
        Some((id, b.count))
    }
}

pub fn rows_for(capacity: usize, delta: f64) -> usize {
    (capacity as f64 / delta).log2().ceil() as usize + 2
}

trait BucketStore {
    fn get(&self, idx: u64) -> Bucket;
    fn apply(&mut self, idx: u64, item: u64, count: i64, fp: u64);
    fn nonzero(&self) -> usize;
}

struct DenseStore {
    buckets: Vec<Bucket>,
    nonzero: usize,
}

impl BucketStore for DenseStore {
    fn get(&self, idx: u64) -> Bucket {
        self.buckets[idx as usize]
    }

    fn apply(&mut self, idx: u64, item: u64, count: i64, fp: u64) {
        let b = &mut self.buckets[idx as usize];
        let was = b.is_zero();
        b.apply(item, count, fp);
        match (was, b.is_zero()) {
            (true, false) => self.nonzero += 1,
            (false, true) => self.nonzero -= 1,
            _ => {}
        }
    }

    fn nonzero(&self) -> usize {
        self.nonzero
    }
}

struct SparseStore {
    buckets: HashMap<u64, Bucket>,
}

impl BucketStore for SparseStore {
    fn get(&self, idx: u64) -> Bucket {
        self.buckets.get(&idx).copied().unwrap_or_default()
    }

    fn apply(&mut self, idx: u64, item: u64, count: i64, fp: u64) {
        let b = self.buckets.entry(idx).or_default();
        b.apply(item, count, fp);
        if b.is_zero() {
            self.buckets.remove(&idx);
        }
    }

    fn nonzero(&self) -> usize {
        self.buckets.len()
    }
}

fn peel<S: BucketStore>(
    layout: &SketchLayout,
    store: &mut S,
    mut stack: Vec<u64>,
) -> std::result::Result<BTreeMap<u64, i64>, DecodeFailure> {
    let mut out: BTreeMap<u64, i64> = BTreeMap::new();
    let mut peeled = 0u64;
    while let Some(idx) = stack.pop() {
        let b = store.get(idx);
        let Some((id, count)) = layout.pure(idx, &b) else { continue };
        // A false singleton can only be peeled by a fingerprint collision;
        // bound the work so such a run still terminates.
        peeled += 1;
        if peeled > layout.bucket_count() {
            return Err(DecodeFailure::Stalled);
        }
        let fp = layout.fingerprint(id, -count);
        for row in 0..layout.rows {
            let j = layout.index(row, id);
            store.apply(j, id, -count, fp);
            if j != idx {
                stack.push(j);
            }
        }
        let e = out.entry(id).or_insert(0);
        *e += count;
        if *e == 0 {
            out.remove(&id);
        }
    }
    if store.nonzero() != 0 {
        return Err(DecodeFailure::Stalled);
    }
    if out.len() > layout.capacity {
        return Err(DecodeFailure::OverCapacity);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
enum Repr {
    /// Nonzero item frequencies sorted by item.
    Items(Vec<(u64, i64)>),
    Dense { buckets: Vec<Bucket>, nonzero: usize },
}

#[derive(Clone, Debug)]
pub struct DistinctSketch {
    layout: Arc<SketchLayout>,
    repr: Repr,
}

impl DistinctSketch {
    /// A sketch over items `< 2^61 - 1`.
    pub fn new(capacity: usize, delta: f64, seed: u64) -> Result<Self> {
        Self::with_domain(capacity, delta, MERSENNE_61, seed)
    }

    pub fn with_domain(capacity: usize, delta: f64, domain: u64, seed: u64) -> Result<Self> {
        Ok(Self::with_layout(Arc::new(SketchLayout::new(capacity, delta, domain, seed)?)))
    }

    pub fn with_layout(layout: Arc<SketchLayout>) -> Self {
        Self { layout, repr: Repr::Items(Vec::new()) }
    }

    pub fn layout(&self) -> &Arc<SketchLayout> {
        &self.layout
    }

    pub fn capacity(&self) -> usize {
        self.layout.capacity
    }

    pub fn rows(&self) -> usize {
        self.layout.rows
    }

    pub fn width(&self) -> u64 {
        self.layout.width
    }

    pub fn nominal_buckets(&self) -> u64 {
        self.layout.bucket_count()
    }

    /// Heap bytes currently held.
    pub fn resident_bytes(&self) -> usize {
        match &self.repr {
            Repr::Items(v) => v.capacity() * std::mem::size_of::<(u64, i64)>(),
            Repr::Dense { buckets, .. } => buckets.capacity() * BUCKET_BYTES,
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.repr, Repr::Dense { .. })
    }

    pub fn is_zero(&self) -> bool {
        match &self.repr {
            Repr::Items(v) => v.is_empty(),
            Repr::Dense { nonzero, .. } => *nonzero == 0,
        }
    }

    /// Adds `count` copies of `item` (negative `count` deletes).
    pub fn update(&mut self, item: u64, count: i64) {
        debug_assert!(item < self.layout.domain);
        if count == 0 {
            return;
        }
        match &mut self.repr {
            Repr::Items(v) => {
                match v.binary_search_by_key(&item, |e| e.0) {
                    Ok(pos) => {
                        v[pos].1 += count;
                        if v[pos].1 == 0 {
                            v.remove(pos);
                        }
                    }
                    Err(pos) => {
                        // Grow from one entry: most slots hold a single item.
                        if v.len() == v.capacity() {
                            v.reserve_exact(v.len().max(1));
                        }
                        v.insert(pos, (item, count));
                    }
                }
                if v.len() as u64 > self.layout.bucket_count() {
                    let items = std::mem::take(v);
                    self.repr = self.densify(&items);
                }
            }
            Repr::Dense { buckets, nonzero } => {
                let mut store = DenseStore { buckets: std::mem::take(buckets), nonzero: *nonzero };
                let fp = self.layout.fingerprint(item, count);
                for row in 0..self.layout.rows {
                    store.apply(self.layout.index(row, item), item, count, fp);
                }
                if store.nonzero == 0 {
                    self.repr = Repr::Items(Vec::new());
                } else {
                    *buckets = store.buckets;
                    *nonzero = store.nonzero;
                }
            }
        }
    }

    fn densify(&self, items: &[(u64, i64)]) -> Repr {
        let mut store = DenseStore {
            buckets: vec![Bucket::default(); self.layout.bucket_count() as usize],
            nonzero: 0,
        };
        for &(item, count) in items {
            let fp = self.layout.fingerprint(item, count);
            for row in 0..self.layout.rows {
                store.apply(self.layout.index(row, item), item, count, fp);
            }
        }
        Repr::Dense { buckets: store.buckets, nonzero: store.nonzero }
    }

    fn sparse_buckets(&self, items: &[(u64, i64)]) -> SparseStore {
        let mut store = SparseStore { buckets: HashMap::with_capacity(items.len() * self.layout.rows) };
        for &(item, count) in items {
            let fp = self.layout.fingerprint(item, count);
            for row in 0..self.layout.rows {
                store.apply(self.layout.index(row, item), item, count, fp);
            }
        }
        store
    }

    /// Peeling decode: the live items with their frequencies, or FAIL.
    pub fn query(&self) -> std::result::Result<BTreeMap<u64, i64>, DecodeFailure> {
        match &self.repr {
            Repr::Items(items) => {
                let mut store = self.sparse_buckets(items);
                let mut stack: Vec<u64> = store.buckets.keys().copied().collect();
                stack.sort_unstable();
                peel(&self.layout, &mut store, stack)
            }
            Repr::Dense { buckets, nonzero } => {
                let stack = (0..buckets.len() as u64).filter(|&i| !buckets[i as usize].is_zero()).collect();
                let mut store = DenseStore { buckets: buckets.clone(), nonzero: *nonzero };
                peel(&self.layout, &mut store, stack)
            }
        }
    }

    /// The full bucket table, materialized.
    pub fn buckets(&self) -> Vec<Bucket> {
        match &self.repr {
            Repr::Items(items) => match self.densify(items) {
                Repr::Dense { buckets, .. } => buckets,
                Repr::Items(_) => unreachable!(),
            },
            Repr::Dense { buckets, .. } => buckets.clone(),
        }
    }
}

impl PartialEq for DistinctSketch {
    fn eq(&self, other: &Self) -> bool {
        if self.layout != other.layout {
            return false;
        }
        match (&self.repr, &other.repr) {
            (Repr::Items(a), Repr::Items(b)) => a == b,
            _ => self.buckets() == other.buckets(),
        }
    }
}
