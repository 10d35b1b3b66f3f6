//! Seeded k-wise independent hash families over the Mersenne prime
//! `p = 2^61 - 1`: pairwise bucket hashing, 4-wise sign generation and the
//! nested geometric downsampling of column indices.
//!
//! Everything here is a pure function of the seed, so sketches built from
//! equal seeds are reproducible across runs and platforms.

use crate::error::{Error, Result};

pub const MERSENNE_PRIME: u64 = (1 << 61) - 1;

/// Deterministic 64-bit generator used to derive hash coefficients and other
/// per-structure randomness from a master seed.
// splitmix64, Sebastiano Vigna, public domain.
#[derive(Clone, Debug)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut x = self.0;
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
        x ^ (x >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn uniform_mod_p(&mut self) -> u64 {
        loop {
            let v = self.next_u64() & MERSENNE_PRIME;
            if v < MERSENNE_PRIME {
                return v;
            }
        }
    }
}

impl rand::RngCore for SplitMix64 {
    fn next_u32(&mut self) -> u32 {
        (SplitMix64::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        SplitMix64::next_u64(self)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = SplitMix64::next_u64(self).to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

impl SplitMix64 {
    fn uniform_mod_p_nonzero(&mut self) -> u64 {
        loop {
            let v = self.uniform_mod_p();
            if v != 0 {
                return v;
            }
        }
    }
}

#[inline]
fn mod_mersenne(x: u128) -> u64 {
    let p = MERSENNE_PRIME as u128;
    let mut t = (x & p) + (x >> 61);
    t = (t & p) + (t >> 61);
    if t >= p {
        (t - p) as u64
    } else {
        t as u64
    }
}

#[inline]
fn mul_mod(a: u64, b: u64) -> u64 {
    mod_mersenne(a as u128 * b as u128)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HashFamily {
    Bucket = 0,
    Sign = 1,
    Downsample = 2,
}

impl HashFamily {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(HashFamily::Bucket),
            1 => Ok(HashFamily::Sign),
            2 => Ok(HashFamily::Downsample),
            _ => Err(Error::BadBlob(format!("unknown hash family byte {b}"))),
        }
    }
}

/// A polynomial hash `c_0 + c_1 x + ... + c_d x^d mod p`, evaluated at
/// `x = index + 1`. Degree 1 gives pairwise independence (bucket and
/// downsample families), degree 3 gives 4-wise independence (signs).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashSeed {
    family: HashFamily,
    prime: u64,
    coeffs: Vec<u64>,
}

impl HashSeed {
    /// Pairwise-independent bucket hash; the leading coefficient is nonzero
    /// so distinct indices never collide before bucket reduction.
    pub fn bucket(seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let b = rng.uniform_mod_p();
        let a = rng.uniform_mod_p_nonzero();
        Self {
            family: HashFamily::Bucket,
            prime: MERSENNE_PRIME,
            coeffs: vec![b, a],
        }
    }

    /// 4-wise independent sign hash from a degree-3 polynomial.
    pub fn sign(seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let coeffs = (0..4).map(|_| rng.uniform_mod_p()).collect();
        Self {
            family: HashFamily::Sign,
            prime: MERSENNE_PRIME,
            coeffs,
        }
    }

    /// Pairwise-independent hash whose leading zero bits give the nested
    /// downsampling level of an index.
    pub fn downsample(seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let b = rng.uniform_mod_p();
        let a = rng.uniform_mod_p_nonzero();
        Self {
            family: HashFamily::Downsample,
            prime: MERSENNE_PRIME,
            coeffs: vec![b, a],
        }
    }

    pub fn family(&self) -> HashFamily {
        self.family
    }

    pub fn coefficients(&self) -> &[u64] {
        &self.coeffs
    }

    /// Horner evaluation of the polynomial at `x = index + 1`.
    #[inline]
    pub fn eval(&self, index: usize) -> u64 {
        let x = mod_mersenne(index as u128 + 1);
        let mut acc = 0u64;
        for &c in self.coeffs.iter().rev() {
            acc = mod_mersenne(mul_mod(acc, x) as u128 + c as u128);
        }
        acc
    }

    /// Bucket of a (0-based) column index among `w` buckets.
    pub fn bucket_of(&self, index: usize, w: usize) -> Result<usize> {
        if w == 0 {
            return Err(Error::InvalidParameter("bucket count must be >= 1".into()));
        }
        Ok((self.eval(index) % w as u64) as usize)
    }

    /// Sign in `{-1, +1}` from the parity bit of the polynomial value.
    #[inline]
    pub fn sign_of(&self, index: usize) -> i64 {
        if self.eval(index) & 1 == 0 {
            1
        } else {
            -1
        }
    }

    /// Largest level `j` such that the index survives downsampling at every
    /// rate `2^-1 .. 2^-j`; the count of leading zeros among the hash's 61
    /// bits, capped. Survivor sets are nested by construction.
    pub fn survival_level(&self, index: usize, cap: u32) -> u32 {
        let v = self.eval(index);
        let lz = (v << 3).leading_zeros(); // value is 61 bits wide
        lz.min(cap)
    }

    /// Canonical little-endian layout: family byte, prime, degree byte,
    /// then one 8-byte word per coefficient.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 8 * self.coeffs.len());
        out.push(self.family as u8);
        out.extend_from_slice(&self.prime.to_le_bytes());
        out.push((self.coeffs.len() - 1) as u8);
        for &c in &self.coeffs {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < 10 {
            return Err(Error::BadBlob("hash seed truncated".into()));
        }
        let family = HashFamily::from_byte(bytes[0])?;
        let prime = u64::from_le_bytes(bytes[1..9].try_into().unwrap());
        let degree = bytes[9] as usize;
        let n_coeffs = degree + 1;
        let need = 10 + 8 * n_coeffs;
        if bytes.len() < need {
            return Err(Error::BadBlob("hash seed coefficients truncated".into()));
        }
        let coeffs = (0..n_coeffs)
            .map(|i| u64::from_le_bytes(bytes[10 + 8 * i..18 + 8 * i].try_into().unwrap()))
            .collect();
        Ok((
            Self {
                family,
                prime,
                coeffs,
            },
            need,
        ))
    }

    pub fn payload_bytes(&self) -> usize {
        10 + 8 * self.coeffs.len()
    }
}
