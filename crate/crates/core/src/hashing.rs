//! Polynomial hash families over prime fields, and deterministic seed derivation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Result};
use crate::geometry::ClusteringInstance;

/// `2^61 - 1`.
pub const MERSENNE_61: u64 = (1u64 << 61) - 1;

/// Cells are hashed as `(level, coords)` vectors of at most this many coordinates.
pub const MAX_CELL_DIM: usize = 60;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the sub-seed for child `tag` of `seed`.
#[inline]
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag ^ 0x5851_f42d_4c95_7f2d))
}

/// A node of the seed tree; children are independent-looking streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree(pub u64);

impl SeedTree {
    pub fn child(self, tag: u64) -> SeedTree {
        SeedTree(derive_seed(self.0, tag))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &p in &BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        acc
    };
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'bases: for &a in &BASES {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'bases;
            }
        }
        return false;
    }
    true
}

/// Smallest prime strictly greater than `n`.
pub fn next_prime_above(n: u64) -> u64 {
    let mut c = n + 1;
    while !is_prime(c) {
        c += 1;
    }
    c
}

/// Arithmetic modulo a prime `p ≤ 2^61 - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrimeField {
    modulus: u64,
}

impl PrimeField {
    pub const fn mersenne61() -> Self {
        Self { modulus: MERSENNE_61 }
    }

    pub fn new(modulus: u64) -> Result<Self> {
        if modulus > MERSENNE_61 || !is_prime(modulus) {
            return domain(format!("{modulus} is not a prime ≤ 2^61-1"));
        }
        Ok(Self { modulus })
    }

    #[inline]
    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    #[inline]
    pub fn reduce(&self, x: u64) -> u64 {
        if self.modulus == MERSENNE_61 {
            let r = (x & MERSENNE_61) + (x >> 61);
            if r >= MERSENNE_61 { r - MERSENNE_61 } else { r }
        } else {
            x % self.modulus
        }
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.modulus { s - self.modulus } else { s }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        let prod = a as u128 * b as u128;
        if self.modulus == MERSENNE_61 {
            let lo = (prod as u64) & MERSENNE_61;
            let hi = (prod >> 61) as u64;
            let r = lo + hi;
            if r >= MERSENNE_61 { r - MERSENNE_61 } else { r }
        } else {
            (prod % self.modulus as u128) as u64
        }
    }

    /// `x mod p` for a signed 64-bit value.
    #[inline]
    pub fn from_i64(&self, x: i64) -> u64 {
        let r = self.reduce(x.unsigned_abs());
        if x < 0 && r != 0 { self.modulus - r } else { r }
    }

    /// `x mod p` for a signed 128-bit value.
    #[inline]
    pub fn from_i128(&self, x: i128) -> u64 {
        x.rem_euclid(self.modulus as i128) as u64
    }

    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        rng.random_range(0..self.modulus)
    }

    /// Horner evaluation of `c[0] + c[1] x + ... ` at an already reduced `x`.
    #[inline]
    pub fn poly(&self, coeffs: &[u64], x: u64) -> u64 {
        coeffs.iter().rev().fold(0, |acc, &c| self.add(self.mul(acc, x), c))
    }
}

/// Threshold encoding of a Bernoulli rate: `round(prob · p)`.
pub fn rate_threshold(prob: f64, field: &PrimeField) -> u64 {
    if prob >= 1.0 {
        field.modulus()
    } else {
        (prob * field.modulus() as f64).round() as u64
    }
}

fn check_lambda(lambda: usize) -> Result<()> {
    if lambda < 2 || lambda % 2 == 1 {
        return domain(format!("independence {lambda} must be even and at least 2"));
    }
    Ok(())
}

fn check_prob(prob: f64) -> Result<()> {
    if !(prob > 0.0 && prob <= 1.0) {
        return domain(format!("rate {prob} outside (0, 1]"));
    }
    Ok(())
}

/// λ-wise independent Bernoulli hash: a random degree-`λ-1` polynomial whose
/// value is compared against a threshold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KwiseHash {
    field: PrimeField,
    coeffs: Vec<u64>,
    threshold: u64,
}

impl KwiseHash {
    pub fn new(lambda: usize, prob: f64, seed: u64) -> Result<Self> {
        Self::with_field(lambda, prob, PrimeField::mersenne61(), seed)
    }

    pub fn with_field(lambda: usize, prob: f64, field: PrimeField, seed: u64) -> Result<Self> {
        check_lambda(lambda)?;
        check_prob(prob)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..lambda).map(|_| field.random(&mut rng)).collect();
        Ok(Self { field, coeffs, threshold: rate_threshold(prob, &field) })
    }

    /// Explicit coefficients and threshold, for exhaustive checks.
    pub fn from_parts(field: PrimeField, coeffs: Vec<u64>, threshold: u64) -> Result<Self> {
        check_lambda(coeffs.len())?;
        if threshold > field.modulus() || coeffs.iter().any(|&c| c >= field.modulus()) {
            return domain("coefficient or threshold outside the field");
        }
        Ok(Self { field, coeffs, threshold })
    }

    pub fn independence(&self) -> usize {
        self.coeffs.len()
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    /// Realized rate `threshold / modulus`.
    pub fn rate(&self) -> f64 {
        self.threshold as f64 / self.field.modulus() as f64
    }

    #[inline]
    pub fn eval_index(&self, x: u64) -> bool {
        if self.threshold == self.field.modulus() {
            return true;
        }
        self.field.poly(&self.coeffs, self.field.reduce(x)) < self.threshold
    }

    pub fn eval(&self, p: &[u32], inst: &ClusteringInstance) -> Result<bool> {
        Ok(self.eval_index(point_index(p, inst)?))
    }
}

/// `m̂` independent λ-wise hashes sharing one rate, stored contiguously.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KwiseBank {
    field: PrimeField,
    lambda: usize,
    coeffs: Vec<u64>,
    threshold: u64,
}

impl KwiseBank {
    pub fn new(count: usize, lambda: usize, prob: f64, seed: u64) -> Result<Self> {
        check_lambda(lambda)?;
        check_prob(prob)?;
        let field = PrimeField::mersenne61();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..count * lambda).map(|_| field.random(&mut rng)).collect();
        Ok(Self { field, lambda, coeffs, threshold: rate_threshold(prob, &field) })
    }

    pub fn len(&self) -> usize {
        self.coeffs.len() / self.lambda
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn independence(&self) -> usize {
        self.lambda
    }

    pub fn rate(&self) -> f64 {
        self.threshold as f64 / self.field.modulus() as f64
    }

    /// Hash `j` (0-based) as a standalone [`KwiseHash`].
    pub fn get(&self, j: usize) -> KwiseHash {
        KwiseHash {
            field: self.field,
            coeffs: self.coeffs[j * self.lambda..(j + 1) * self.lambda].to_vec(),
            threshold: self.threshold,
        }
    }

    /// Calls `hit(j)` for every 0-based `j` with `h_j(x) = 1`, in increasing order.
    #[inline]
    pub fn for_each_hit(&self, x: u64, mut hit: impl FnMut(usize)) {
        if self.threshold == self.field.modulus() {
            (0..self.len()).for_each(hit);
            return;
        }
        let x = self.field.reduce(x);
        for (j, c) in self.coeffs.chunks_exact(self.lambda).enumerate() {
            if self.field.poly(c, x) < self.threshold {
                hit(j);
            }
        }
    }
}

/// Pairwise-independent map from cells to `[0, range)`: an affine form over
/// `GF(2^61-1)` in the level and coordinates, reduced modulo `range`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellHash {
    range: u64,
    offset: u64,
    coeffs: Vec<u64>,
}

impl CellHash {
    pub fn new(range: u64, seed: u64) -> Result<Self> {
        Self::with_dim(range, MAX_CELL_DIM, seed)
    }

    /// A hash for cells of dimension at most `dim`.
    pub fn with_dim(range: u64, dim: usize, seed: u64) -> Result<Self> {
        if range == 0 {
            return domain("cell hash range must be positive");
        }
        let field = PrimeField::mersenne61();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offset = field.random(&mut rng);
        let coeffs = (0..=dim).map(|_| field.random(&mut rng)).collect();
        Ok(Self { range, offset, coeffs })
    }

    pub fn range(&self) -> u64 {
        self.range
    }

    #[inline]
    pub fn eval_coords(&self, level: i32, coords: &[i64]) -> u64 {
        debug_assert!(coords.len() < self.coeffs.len());
        let f = PrimeField::mersenne61();
        let mut acc = f.add(self.offset, f.mul(self.coeffs[0], f.from_i64(level as i64 + 1)));
        for (&c, &a) in coords.iter().zip(&self.coeffs[1..]) {
            acc = f.add(acc, f.mul(a, f.from_i64(c)));
        }
        acc % self.range
    }

    pub fn eval(&self, c: &crate::geometry::CellId) -> u64 {
        self.eval_coords(c.level, &c.coords)
    }
}

/// `Σ (p_j - 1) Δ^{j-1}`, a bijection `[1, Δ]^d → [0, Δ^d)`.
pub fn point_index(p: &[u32], inst: &ClusteringInstance) -> Result<u64> {
    inst.check_point(p)?;
    Ok(point_index_unchecked(p, inst.delta_exp))
}

#[inline]
pub fn point_index_unchecked(p: &[u32], delta_exp: u32) -> u64 {
    p.iter().rev().fold(0u64, |acc, &x| (acc << delta_exp) | (x as u64 - 1))
}

pub fn point_from_index(mut x: u64, d: usize, delta_exp: u32) -> Vec<u32> {
    let mask = (1u64 << delta_exp) - 1;
    (0..d)
        .map(|_| {
            let c = (x & mask) as u32 + 1;
            x >>= delta_exp;
            c
        })
        .collect()
}

/// Default λ: `10·ceil(dL + log2(1/δ) + 1)` rounded up to even, with the
/// factor 10 replaced by `factor`.
pub fn default_independence(inst: &ClusteringInstance, delta: f64, factor: f64) -> usize {
    let base = (inst.d as f64 * inst.levels() as f64 + (1.0 / delta).log2() + 1.0).ceil();
    let lambda = (factor * base).ceil() as usize;
    let even = lambda + lambda % 2;
    even.max(2)
}
