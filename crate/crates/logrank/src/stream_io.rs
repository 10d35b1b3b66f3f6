//! Turnstile stream text format, synthetic co-occurrence-style data
//! generation, and dense reconstruction.
//!
//! Format: a header line `n d eta_num eta_den [b]`, then one `row col delta`
//! line per update with 1-based indices and nonzero integer deltas. Full-line
//! `#` comments and blank lines are skipped. UTF-8, LF line endings. Indices
//! are 0-based everywhere in memory.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::hashing::SplitMix64;
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

/// One turnstile event: `A[row, col] += delta` in units of the entry scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamUpdate {
    pub row: u32,
    pub col: u32,
    pub delta: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub n_rows: usize,
    pub n_cols: usize,
    pub eta_num: u64,
    pub eta_den: u64,
    /// Marks column `n_cols` (the last one) as the regression target b.
    pub has_b_column: bool,
}

impl StreamHeader {
    pub fn square(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            eta_num: 1,
            eta_den: 1,
            has_b_column: false,
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta_num as f64 / self.eta_den as f64
    }

    fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::InvalidParameter("dimensions must be >= 1".into()));
        }
        if self.eta_num == 0 || self.eta_den == 0 {
            return Err(Error::InvalidParameter("eta must be positive".into()));
        }
        if self.has_b_column && self.n_cols < 2 {
            return Err(Error::InvalidParameter(
                "b-flagged stream needs at least 2 columns".into(),
            ));
        }
        Ok(())
    }
}

/// Streaming line parser; yields updates in file order.
pub struct StreamReader<R: BufRead> {
    header: StreamHeader,
    reader: R,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> StreamReader<R> {
    pub fn new(mut reader: R) -> Result<Self> {
        let mut line_no = 0;
        let mut buf = String::new();
        let header = loop {
            buf.clear();
            line_no += 1;
            if reader.read_line(&mut buf)? == 0 {
                return Err(Error::StreamParse {
                    line: line_no,
                    msg: "missing header".into(),
                });
            }
            let trimmed = buf.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            break parse_header(trimmed, line_no)?;
        };
        Ok(Self {
            header,
            reader,
            line_no,
            buf,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }
}

impl<R: BufRead> Iterator for StreamReader<R> {
    type Item = Result<StreamUpdate>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            self.line_no += 1;
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            let trimmed = self.buf.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Some(parse_update(trimmed, self.line_no, &self.header));
        }
    }
}

fn parse_header(line: &str, line_no: usize) -> Result<StreamHeader> {
    let err = |msg: String| Error::StreamParse { line: line_no, msg };
    let mut it = line.split_whitespace();
    let mut field = |name: &str| -> Result<u64> {
        it.next()
            .ok_or_else(|| err(format!("missing header field {name}")))?
            .parse::<u64>()
            .map_err(|e| err(format!("bad header field {name}: {e}")))
    };
    let n_rows = field("n")? as usize;
    let n_cols = field("d")? as usize;
    let eta_num = field("eta_num")?;
    let eta_den = field("eta_den")?;
    let has_b_column = match it.next() {
        None => false,
        Some("b") => true,
        Some(tok) => return Err(err(format!("unexpected header token {tok:?}"))),
    };
    if it.next().is_some() {
        return Err(err("trailing header tokens".into()));
    }
    let header = StreamHeader {
        n_rows,
        n_cols,
        eta_num,
        eta_den,
        has_b_column,
    };
    header.validate().map_err(|e| err(e.to_string()))?;
    Ok(header)
}

fn parse_update(line: &str, line_no: usize, header: &StreamHeader) -> Result<StreamUpdate> {
    let err = |msg: String| Error::StreamParse { line: line_no, msg };
    let mut it = line.split_whitespace();
    let row: u64 = it
        .next()
        .ok_or_else(|| err("missing row".into()))?
        .parse()
        .map_err(|e| err(format!("bad row: {e}")))?;
    let col: u64 = it
        .next()
        .ok_or_else(|| err("missing col".into()))?
        .parse()
        .map_err(|e| err(format!("bad col: {e}")))?;
    let delta_tok = it.next().ok_or_else(|| err("missing delta".into()))?;
    let delta: i64 = delta_tok
        .strip_prefix('+')
        .unwrap_or(delta_tok)
        .parse()
        .map_err(|e| err(format!("bad delta: {e}")))?;
    if it.next().is_some() {
        return Err(err("trailing tokens".into()));
    }
    if delta == 0 {
        return Err(err("delta must be nonzero".into()));
    }
    if row == 0 || row as usize > header.n_rows || col == 0 || col as usize > header.n_cols {
        return Err(err(format!(
            "index ({row}, {col}) out of bounds for {}x{}",
            header.n_rows, header.n_cols
        )));
    }
    Ok(StreamUpdate {
        row: (row - 1) as u32,
        col: (col - 1) as u32,
        delta,
    })
}

pub fn parse_stream<R: BufRead>(reader: R) -> Result<(StreamHeader, Vec<StreamUpdate>)> {
    let sr = StreamReader::new(reader)?;
    let header = *sr.header();
    let updates = sr.collect::<Result<Vec<_>>>()?;
    Ok((header, updates))
}

pub fn read_stream_file(path: impl AsRef<std::path::Path>) -> Result<(StreamHeader, Vec<StreamUpdate>)> {
    let file = std::fs::File::open(path)?;
    parse_stream(std::io::BufReader::new(file))
}

pub fn write_stream<'a, W: Write>(
    out: &mut W,
    header: &StreamHeader,
    updates: impl IntoIterator<Item = &'a StreamUpdate>,
) -> Result<()> {
    header.validate()?;
    if header.has_b_column {
        writeln!(
            out,
            "{} {} {} {} b",
            header.n_rows, header.n_cols, header.eta_num, header.eta_den
        )?;
    } else {
        writeln!(
            out,
            "{} {} {} {}",
            header.n_rows, header.n_cols, header.eta_num, header.eta_den
        )?;
    }
    for u in updates {
        writeln!(out, "{} {} {}", u.row + 1, u.col + 1, u.delta)?;
    }
    Ok(())
}

pub fn write_stream_file(
    path: impl AsRef<std::path::Path>,
    header: &StreamHeader,
    updates: &[StreamUpdate],
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_stream(&mut out, header, updates)
}

/// Accumulates raw integer counts (as scalars) without the entry scale.
pub fn accumulate_counts<T: Scalar>(
    header: &StreamHeader,
    updates: &[StreamUpdate],
) -> Result<DenseMatrix<T>> {
    let mut m = DenseMatrix::zeros(header.n_rows, header.n_cols)?;
    for u in updates {
        let (r, c) = (u.row as usize, u.col as usize);
        if r >= header.n_rows || c >= header.n_cols {
            return Err(Error::UpdateOutOfRange {
                update: *u,
                n_rows: header.n_rows,
                n_cols: header.n_cols,
            });
        }
        let v = m.get(r, c) + T::from_i64_lossy(u.delta);
        m.set(r, c, v);
    }
    Ok(m)
}

/// Dense real-valued matrix: accumulated counts times the entry scale.
pub fn reconstruct_dense<T: Scalar>(
    header: &StreamHeader,
    updates: &[StreamUpdate],
) -> Result<DenseMatrix<T>> {
    let counts = accumulate_counts::<T>(header, updates)?;
    let eta = T::from_u64(header.eta_num).unwrap() / T::from_u64(header.eta_den).unwrap();
    Ok(counts.map(|v| v * eta))
}

/// Splits a b-flagged reconstruction into the design matrix and target.
pub fn split_b<T: Scalar>(header: &StreamHeader, dense: &DenseMatrix<T>) -> Result<(DenseMatrix<T>, Vec<T>)> {
    if !header.has_b_column {
        return Err(Error::InvalidParameter(
            "stream header does not flag a b column".into(),
        ));
    }
    let d = header.n_cols - 1;
    let mut a = DenseMatrix::zeros(header.n_rows, d)?;
    let mut b = Vec::with_capacity(header.n_rows);
    for r in 0..header.n_rows {
        for c in 0..d {
            a.set(r, c, dense.get(r, c));
        }
        b.push(dense.get(r, d));
    }
    Ok((a, b))
}

/// The co-occurrence score for one entry: `p_j * ln(n_ij * n / (n_i * n_j) + 1)`.
pub fn pmi_entry(n_ij: f64, n_i: f64, n_j: f64, n_total: f64, p_j: f64) -> f64 {
    p_j * (n_ij * n_total / (n_i * n_j)).ln_1p()
}

pub struct SyntheticInstance {
    pub header: StreamHeader,
    pub updates: Vec<StreamUpdate>,
    /// Real-valued entries, exactly `count * eta` for every cell.
    pub dense: DenseMatrix<f64>,
    pub max_abs_count: i64,
}

const SYNTH_ETA_DEN: u64 = 1000;

fn poisson(rng: &mut SplitMix64, mu: f64) -> u64 {
    if mu <= 0.0 {
        return 0;
    }
    if mu < 30.0 {
        let limit = (-mu).exp();
        let mut k = 0u64;
        let mut p = 1.0;
        loop {
            p *= rng.next_f64().max(f64::MIN_POSITIVE);
            if p <= limit {
                return k;
            }
            k += 1;
        }
    }
    // Normal approximation for large means.
    let u1 = rng.next_f64().max(f64::MIN_POSITIVE);
    let u2 = rng.next_f64();
    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    (mu + mu.sqrt() * z).round().max(0.0) as u64
}

/// Synthetic word co-occurrence instance: Zipfian word frequencies, Poisson
/// co-occurrence counts with a low-rank bump for spectral decay, entrywise
/// weighted log scores, column-mean centering, and rounding to integer
/// multiples of 1/1000.
pub fn generate_synthetic(n: usize, seed: u64, zipf_exponent: f64) -> Result<SyntheticInstance> {
    if n < 16 {
        return Err(Error::InvalidParameter(format!(
            "synthetic generator needs n >= 16, got {n}"
        )));
    }
    let mut rng = SplitMix64::new(seed ^ 0x9d8f_3a11_c001_d00d);

    // Decreasing word frequencies.
    let freq: Vec<f64> = (0..n)
        .map(|i| (1e6 * ((i + 1) as f64).powf(-zipf_exponent)).round().max(1.0))
        .collect();
    let total: f64 = freq.iter().sum();

    // Low-rank membership bump so the score matrix has a decaying spectrum.
    let n_factors = 12;
    let mut membership = vec![vec![false; n]; n_factors];
    for row in membership.iter_mut() {
        for cell in row.iter_mut() {
            *cell = rng.next_f64() < 0.12;
        }
    }
    let theta: Vec<f64> = (0..n_factors).map(|r| 4.0 * 0.7f64.powi(r as i32)).collect();

    let p_weight: Vec<f64> = freq
        .iter()
        .map(|&nj| (nj / freq[9]).powi(2).max(1.0))
        .collect();

    let mut scores = DenseMatrix::<f64>::zeros(n, n)?;
    for i in 0..n {
        for j in 0..n {
            let mut bump = 0.0;
            for r in 0..n_factors {
                if membership[r][i] && membership[r][j] {
                    bump += theta[r];
                }
            }
            let mu = freq[i] * freq[j] / total * (1.0 + bump);
            let count = poisson(&mut rng, mu) as f64;
            scores.set(i, j, pmi_entry(count, freq[i], freq[j], total, p_weight[j]));
        }
    }

    // Column-mean centering; without it all columns have nearly equal norms.
    for j in 0..n {
        let mean: f64 = (0..n).map(|i| scores.get(i, j)).sum::<f64>() / n as f64;
        for i in 0..n {
            scores.set(i, j, scores.get(i, j) - mean);
        }
    }

    let eta = 1.0 / SYNTH_ETA_DEN as f64;
    let mut updates = Vec::new();
    let mut dense = DenseMatrix::<f64>::zeros(n, n)?;
    let mut max_abs_count = 0i64;
    for i in 0..n {
        for j in 0..n {
            let count = (scores.get(i, j) / eta).round() as i64;
            if count != 0 {
                updates.push(StreamUpdate {
                    row: i as u32,
                    col: j as u32,
                    delta: count,
                });
                dense.set(i, j, count as f64 * eta);
                max_abs_count = max_abs_count.max(count.abs());
            }
        }
    }

    // Seeded shuffle of the update order.
    let len = updates.len();
    for i in (1..len).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        updates.swap(i, j);
    }

    Ok(SyntheticInstance {
        header: StreamHeader {
            n_rows: n,
            n_cols: n,
            eta_num: 1,
            eta_den: SYNTH_ETA_DEN,
            has_b_column: false,
        },
        updates,
        dense,
        max_abs_count,
    })
}
