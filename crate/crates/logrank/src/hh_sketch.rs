//! Hash-bucketed column sketches: a basic substructure of `w` buckets, each
//! holding a signed sum of matrix columns, and the complete structure that
//! repeats it `R` times and answers column queries by the median transformed
//! norm across repetitions.
//!
//! Buckets accumulate raw integer entry counts, so updates commute exactly
//! and permuted streams produce bit-identical state. The entry scale and the
//! transform only enter on the query side.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hashing::{HashSeed, SplitMix64};
use crate::scalar::Scalar;
use crate::stream_io::StreamUpdate;
use crate::transform::{TransformMode, TransformSpec};

/// The sign-mixing constant from the second-moment bound on
/// `E f(sum_i eps_i a_i)^2`; the proof's numeric evaluation stays below 10.
pub const MIXING_C: f64 = 10.0;

/// Bucket count `ceil(81 C / (phi^2 nu^3))`, capped at the column count.
pub fn width_for(phi: f64, nu: f64, n_cols: usize) -> usize {
    let raw = (81.0 * MIXING_C) / (phi * phi * nu * nu * nu);
    if raw >= n_cols as f64 {
        n_cols
    } else {
        (raw.ceil() as usize).max(1)
    }
}

/// Repetition count `ceil(4 ln(n / delta))`.
pub fn repetitions_for(n_cols: usize, delta: f64) -> usize {
    (4.0 * (n_cols as f64 / delta).ln()).ceil().max(1.0) as usize
}

/// Index of the lower median after sorting by (value, position).
fn lower_median_by<T: Scalar>(values: &[T]) -> usize {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    order[(values.len() - 1) / 2]
}

/// One bucket: a vector in R^{n_rows}, kept as a sorted sparse map until it
/// exceeds 1/16 density. Both representations iterate coordinates in
/// ascending row order and skip exact zeros, so downstream sums are
/// bit-identical regardless of representation.
#[derive(Clone, Debug, PartialEq)]
enum Bucket<T: Scalar> {
    Sparse(BTreeMap<u32, T>),
    Dense(Vec<T>),
}

impl<T: Scalar> Bucket<T> {
    fn new() -> Self {
        Bucket::Sparse(BTreeMap::new())
    }

    fn add(&mut self, row: u32, v: T, n_rows: usize) {
        match self {
            Bucket::Sparse(map) => {
                let slot = map.entry(row).or_insert_with(T::zero);
                *slot = *slot + v;
                if map.len() * 16 >= n_rows {
                    let mut dense = vec![T::zero(); n_rows];
                    for (&r, &val) in map.iter() {
                        dense[r as usize] = val;
                    }
                    *self = Bucket::Dense(dense);
                }
            }
            Bucket::Dense(dense) => {
                dense[row as usize] = dense[row as usize] + v;
            }
        }
    }

    fn for_each(&self, mut f: impl FnMut(u32, T)) {
        match self {
            Bucket::Sparse(map) => {
                for (&r, &v) in map.iter() {
                    if v != T::zero() {
                        f(r, v);
                    }
                }
            }
            Bucket::Dense(dense) => {
                for (r, &v) in dense.iter().enumerate() {
                    if v != T::zero() {
                        f(r as u32, v);
                    }
                }
            }
        }
    }

    fn payload_bytes(&self) -> usize {
        match self {
            Bucket::Sparse(map) => map.len() * (4 + std::mem::size_of::<T>()),
            Bucket::Dense(dense) => dense.len() * std::mem::size_of::<T>(),
        }
    }
}

/// Basic substructure: `w` buckets, each a signed sum of matrix columns.
#[derive(Clone, Debug)]
pub struct BasicHh<T: Scalar> {
    n_rows: usize,
    n_cols: usize,
    w: usize,
    bucket_seed: HashSeed,
    sign_seed: HashSeed,
    col_bucket: Vec<u32>,
    col_sign: Vec<i8>,
    buckets: Vec<Bucket<T>>,
}

impl<T: Scalar> BasicHh<T> {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        w: usize,
        bucket_seed: HashSeed,
        sign_seed: HashSeed,
    ) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidParameter("sketch dimensions must be >= 1".into()));
        }
        if w == 0 {
            return Err(Error::InvalidParameter("bucket count must be >= 1".into()));
        }
        let col_bucket = (0..n_cols)
            .map(|i| bucket_seed.bucket_of(i, w).map(|b| b as u32))
            .collect::<Result<Vec<_>>>()?;
        let col_sign = (0..n_cols).map(|i| sign_seed.sign_of(i) as i8).collect();
        Ok(Self {
            n_rows,
            n_cols,
            w,
            bucket_seed,
            sign_seed,
            col_bucket,
            col_sign,
            buckets: (0..w).map(|_| Bucket::new()).collect(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn update(&mut self, u: &StreamUpdate) -> Result<()> {
        let (r, c) = (u.row as usize, u.col as usize);
        if r >= self.n_rows || c >= self.n_cols {
            return Err(Error::UpdateOutOfRange {
                update: *u,
                n_rows: self.n_rows,
                n_cols: self.n_cols,
            });
        }
        let signed = T::from_i64_lossy(self.col_sign[c] as i64 * u.delta);
        let b = self.col_bucket[c] as usize;
        self.buckets[b].add(u.row, signed, self.n_rows);
        Ok(())
    }

    pub fn bucket_of_column(&self, col: usize) -> usize {
        self.col_bucket[col] as usize
    }

    pub fn sign_of_column(&self, col: usize) -> i64 {
        self.col_sign[col] as i64
    }

    /// Raw bucket contents (accumulated counts) as a dense vector.
    pub fn bucket_dense(&self, bucket: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_rows];
        self.buckets[bucket].for_each(|r, v| out[r as usize] = v);
        out
    }

    /// Squared transformed norm of one bucket in real units.
    pub fn bucket_power(&self, bucket: usize, transform: &TransformSpec<T>, mode: TransformMode) -> T {
        let mut acc = T::zero();
        let n = self.n_rows;
        self.buckets[bucket].for_each(|r, v| {
            acc = acc + transform.power_term(r as usize, n, transform.count_value(v), mode);
        });
        acc
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.w == other.w
            && self.bucket_seed == other.bucket_seed
            && self.sign_seed == other.sign_seed
    }

    pub fn merge_from(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::SketchMismatch(
                "basic sketches differ in shape or seeds".into(),
            ));
        }
        for (mine, theirs) in self.buckets.iter_mut().zip(&other.buckets) {
            theirs.for_each(|r, v| mine.add(r, v, self.n_rows));
        }
        Ok(())
    }

    pub fn merged(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    pub fn payload_bytes(&self) -> usize {
        self.buckets.iter().map(Bucket::payload_bytes).sum::<usize>()
            + self.bucket_seed.payload_bytes()
            + self.sign_seed.payload_bytes()
    }

    /// Per-bucket payload in bytes, mainly for space accounting inspection.
    pub fn bucket_payloads(&self) -> Vec<usize> {
        self.buckets.iter().map(Bucket::payload_bytes).collect()
    }

    fn write_blob(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.bucket_seed.to_bytes());
        out.extend_from_slice(&self.sign_seed.to_bytes());
        for b in 0..self.w {
            let dense = self.bucket_dense(b);
            for v in dense {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }

    fn read_blob(bytes: &[u8], n_rows: usize, n_cols: usize, w: usize) -> Result<(Self, usize)> {
        let (bucket_seed, used_a) = HashSeed::from_bytes(bytes)?;
        let (sign_seed, used_b) = HashSeed::from_bytes(&bytes[used_a..])?;
        let mut off = used_a + used_b;
        let mut sketch = Self::new(n_rows, n_cols, w, bucket_seed, sign_seed)?;
        let need = w * n_rows * 8;
        if bytes.len() < off + need {
            return Err(Error::BadBlob("bucket body truncated".into()));
        }
        for b in 0..w {
            let mut dense = vec![T::zero(); n_rows];
            for item in dense.iter_mut() {
                let raw = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
                *item = T::from_f64_lossy(raw);
                off += 8;
            }
            sketch.buckets[b] = Bucket::Dense(dense);
        }
        Ok((sketch, off))
    }
}

/// Result of a column query: the sign-corrected bucket in real units
/// together with its squared transformed norm.
#[derive(Clone, Debug)]
pub struct ColumnQuery<T: Scalar> {
    pub vector: Vec<T>,
    pub power: T,
    pub rep: usize,
}

const HH_MAGIC: &[u8; 4] = b"HHSK";
const HH_VERSION: u32 = 1;

/// Complete structure: `R` independent basic sketches queried by the
/// median transformed norm (lower median for even `R`).
#[derive(Clone, Debug)]
pub struct CompleteHh<T: Scalar> {
    reps: Vec<BasicHh<T>>,
    transform: TransformSpec<T>,
    mode: TransformMode,
    frozen_powers: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> CompleteHh<T> {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        w: usize,
        r: usize,
        transform: TransformSpec<T>,
        mode: TransformMode,
        seeds: &mut SplitMix64,
    ) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidParameter("repetition count must be >= 1".into()));
        }
        let reps = (0..r)
            .map(|_| {
                let bucket_seed = HashSeed::bucket(seeds.next_u64());
                let sign_seed = HashSeed::sign(seeds.next_u64());
                BasicHh::new(n_rows, n_cols, w, bucket_seed, sign_seed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            reps,
            transform,
            mode,
            frozen_powers: None,
        })
    }

    /// Sizes the structure from the guarantee parameters.
    pub fn with_params(
        n_rows: usize,
        n_cols: usize,
        nu: f64,
        phi: f64,
        delta: f64,
        transform: TransformSpec<T>,
        mode: TransformMode,
        seeds: &mut SplitMix64,
    ) -> Result<Self> {
        if !(0.0 < nu && nu <= 1.0) || !(0.0 < phi && phi <= 1.0) || !(0.0 < delta && delta < 1.0) {
            return Err(Error::InvalidParameter(
                "heavy hitter parameters must lie in (0, 1)".into(),
            ));
        }
        let w = width_for(phi, nu, n_cols);
        let r = repetitions_for(n_cols, delta);
        Self::new(n_rows, n_cols, w, r, transform, mode, seeds)
    }

    pub fn n_rows(&self) -> usize {
        self.reps[0].n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.reps[0].n_cols()
    }

    pub fn repetitions(&self) -> usize {
        self.reps.len()
    }

    pub fn width(&self) -> usize {
        self.reps[0].width()
    }

    pub fn transform(&self) -> &TransformSpec<T> {
        &self.transform
    }

    pub fn reps(&self) -> &[BasicHh<T>] {
        &self.reps
    }

    pub fn update(&mut self, u: &StreamUpdate) -> Result<()> {
        self.frozen_powers = None;
        for rep in &mut self.reps {
            rep.update(u)?;
        }
        Ok(())
    }

    /// Precomputes per-bucket norms so queries cost O(R log R).
    pub fn freeze(&mut self) {
        let powers = self
            .reps
            .iter()
            .map(|rep| {
                (0..rep.width())
                    .map(|b| rep.bucket_power(b, &self.transform, self.mode))
                    .collect()
            })
            .collect();
        self.frozen_powers = Some(powers);
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen_powers.is_some()
    }

    fn rep_power(&self, rep: usize, bucket: usize) -> T {
        match &self.frozen_powers {
            Some(powers) => powers[rep][bucket],
            None => self.reps[rep].bucket_power(bucket, &self.transform, self.mode),
        }
    }

    fn powers_for(&self, col: usize, rep_range: std::ops::Range<usize>) -> Vec<T> {
        rep_range
            .map(|r| self.rep_power(r, self.reps[r].bucket_of_column(col)))
            .collect()
    }

    /// Median squared transformed norm over all repetitions.
    pub fn query_power(&self, col: usize) -> T {
        let powers = self.powers_for(col, 0..self.reps.len());
        powers[lower_median_by(&powers)]
    }

    /// Median over a contiguous repetition group, for repeated estimates.
    pub fn query_power_group(&self, col: usize, group: std::ops::Range<usize>) -> T {
        let powers = self.powers_for(col, group);
        powers[lower_median_by(&powers)]
    }

    /// Full query: the median repetition's bucket, sign-corrected and in
    /// real units, so the sketched column appears with its own sign.
    pub fn query(&self, col: usize) -> ColumnQuery<T> {
        let powers = self.powers_for(col, 0..self.reps.len());
        let rep = lower_median_by(&powers);
        let basic = &self.reps[rep];
        let bucket = basic.bucket_of_column(col);
        let sign = T::from_i64_lossy(basic.sign_of_column(col));
        let mut vector = vec![T::zero(); basic.n_rows()];
        self.reps[rep].buckets[bucket].for_each(|r, v| {
            vector[r as usize] = sign * self.transform.count_value(v);
        });
        ColumnQuery {
            vector,
            power: powers[rep],
            rep,
        }
    }

    pub fn merge_from(&mut self, other: &Self) -> Result<()> {
        if self.reps.len() != other.reps.len() {
            return Err(Error::SketchMismatch("repetition counts differ".into()));
        }
        self.frozen_powers = None;
        for (mine, theirs) in self.reps.iter_mut().zip(&other.reps) {
            mine.merge_from(theirs)?;
        }
        Ok(())
    }

    pub fn payload_bytes(&self) -> usize {
        self.reps.iter().map(BasicHh::payload_bytes).sum()
    }

    /// Versioned binary checkpoint: header (magic, version, shape, widths,
    /// repetition count, seeds) followed by dense bucket bodies as 8-byte
    /// little-endian floats.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(HH_MAGIC);
        out.extend_from_slice(&HH_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_cols() as u64).to_le_bytes());
        out.extend_from_slice(&(self.width() as u64).to_le_bytes());
        out.extend_from_slice(&(self.reps.len() as u64).to_le_bytes());
        for rep in &self.reps {
            rep.write_blob(&mut out);
        }
        out
    }

    /// Restores a checkpoint; the transform and mode are supplied by the
    /// caller exactly as at construction time.
    pub fn deserialize(
        bytes: &[u8],
        transform: TransformSpec<T>,
        mode: TransformMode,
    ) -> Result<Self> {
        Self::deserialize_at(bytes, transform, mode).map(|(s, _)| s)
    }

    pub(crate) fn deserialize_at(
        bytes: &[u8],
        transform: TransformSpec<T>,
        mode: TransformMode,
    ) -> Result<(Self, usize)> {
        if bytes.len() < 40 || &bytes[0..4] != HH_MAGIC {
            return Err(Error::BadBlob("bad sketch magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != HH_VERSION {
            return Err(Error::BadBlob(format!("unsupported sketch version {version}")));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize;
        let (n_rows, n_cols, w, r) = (word(0), word(1), word(2), word(3));
        let mut off = 40;
        let mut reps = Vec::with_capacity(r);
        for _ in 0..r {
            let (rep, used) = BasicHh::read_blob(&bytes[off..], n_rows, n_cols, w)?;
            off += used;
            reps.push(rep);
        }
        if reps.is_empty() {
            return Err(Error::BadBlob("sketch with zero repetitions".into()));
        }
        Ok((
            Self {
                reps,
                transform,
                mode,
                frozen_powers: None,
            },
            off,
        ))
    }
}
