//! Rank-k factor extraction from sampled noisy columns: scale the
//! transformed samples by their draw probabilities, then take the top-k
//! left singular vectors of the assembled matrix via its small Gram
//! eigendecomposition.

use crate::error::{Error, Result};
use crate::hashing::SplitMix64;
use crate::linalg;
use crate::matrix::DenseMatrix;
use crate::sampler::{ColumnSample, RunSettings, SamplerConfig, SamplerState};
use crate::scalar::Scalar;
use crate::stream_io::{StreamHeader, StreamUpdate};
use crate::transform::{TransformMode, TransformSpec};

/// A batch of drawn samples over a shared ambient dimension.
#[derive(Clone, Debug)]
pub struct SampleBatch<T: Scalar> {
    pub samples: Vec<ColumnSample<T>>,
    pub ambient: usize,
}

impl<T: Scalar> SampleBatch<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Column t of the result is the transformed sample scaled by
/// `1 / sqrt(s * p_t)`.
pub fn assemble_scaled<T: Scalar>(
    batch: &SampleBatch<T>,
    transform: &TransformSpec<T>,
    mode: TransformMode,
) -> Result<DenseMatrix<T>> {
    let s = batch.len();
    if s == 0 {
        return Err(Error::InvalidParameter("empty sample batch".into()));
    }
    let n = batch.ambient;
    let mut f = DenseMatrix::zeros(n, s)?;
    let s_scalar = T::from_f64_lossy(s as f64);
    for (t, sample) in batch.samples.iter().enumerate() {
        if sample.p_hat <= T::zero() || !sample.p_hat.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sample {t} has non-positive probability"
            )));
        }
        if sample.vector.len() != n {
            return Err(Error::InvalidParameter("sample dimension mismatch".into()));
        }
        let scale = (s_scalar * sample.p_hat).sqrt().recip();
        for (r, &v) in sample.vector.iter().enumerate() {
            f.set(r, t, transform.transformed_entry(r, n, v, mode) * scale);
        }
    }
    Ok(f)
}

/// Column-orthonormal rank-k factor.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorL<T: Scalar> {
    basis: DenseMatrix<T>,
}

impl<T: Scalar> FactorL<T> {
    pub fn from_basis(basis: DenseMatrix<T>) -> Self {
        Self { basis }
    }

    pub fn n_rows(&self) -> usize {
        self.basis.n_rows()
    }

    pub fn k(&self) -> usize {
        self.basis.n_cols()
    }

    pub fn basis(&self) -> &DenseMatrix<T> {
        &self.basis
    }

    /// Largest entrywise deviation of `L^T L` from the identity.
    pub fn orthonormality_defect(&self) -> T {
        let k = self.k();
        let mut worst = T::zero();
        for a in 0..k {
            let ca = self.basis.column(a);
            for b in a..k {
                let cb = self.basis.column(b);
                let want = if a == b { T::one() } else { T::zero() };
                let got = (linalg::dot(&ca, &cb) - want).abs();
                if got > worst {
                    worst = got;
                }
            }
        }
        worst
    }

    /// CSV serialization: n rows, k comma-separated columns, 17 significant
    /// digits per entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.n_rows() {
            let row: Vec<String> = (0..self.k())
                .map(|c| format!("{:.16e}", self.basis.get(r, c).as_f64()))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<T>> = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f64>()
                        .map(T::from_f64_lossy)
                        .map_err(|e| Error::StreamParse {
                            line: no + 1,
                            msg: format!("bad factor entry: {e}"),
                        })
                })
                .collect::<Result<Vec<T>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::StreamParse {
                        line: no + 1,
                        msg: "ragged factor rows".into(),
                    });
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::InvalidParameter("empty factor file".into()));
        }
        Ok(Self {
            basis: DenseMatrix::from_rows(&rows)?,
        })
    }

    /// Binary twin of the sketch blob format: magic, version, shape, then
    /// row-major 8-byte little-endian floats.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"FCTL");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.n_rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.k() as u64).to_le_bytes());
        for r in 0..self.n_rows() {
            for c in 0..self.k() {
                out.extend_from_slice(&self.basis.get(r, c).as_f64().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 || &bytes[0..4] != b"FCTL" {
            return Err(Error::BadBlob("bad factor magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != 1 {
            return Err(Error::BadBlob(format!("unsupported factor version {version}")));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let k = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        if bytes.len() < 24 + 8 * n * k {
            return Err(Error::BadBlob("factor body truncated".into()));
        }
        let mut basis = DenseMatrix::zeros(n, k)?;
        let mut off = 24;
        for r in 0..n {
            for c in 0..k {
                let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
                basis.set(r, c, T::from_f64_lossy(v));
                off += 8;
            }
        }
        Ok(Self { basis })
    }
}

/// Top-k left singular vectors of `f` via the s x s Gram eigendecomposition,
/// plus the singular values. If fewer than `k` singular values are
/// numerically nonzero the factor is truncated to the numerical rank.
pub fn top_k_left_singular<T: Scalar>(
    f: &DenseMatrix<T>,
    k: usize,
) -> Result<(FactorL<T>, Vec<T>)> {
    let (n, s) = (f.n_rows(), f.n_cols());
    if k == 0 || k > n.min(s) {
        return Err(Error::InvalidParameter(format!(
            "rank {k} out of range for a {n}x{s} matrix"
        )));
    }
    let gram = f.gram();
    let eig = linalg::jacobi_eigen(&gram)?;
    let sigma: Vec<T> = eig
        .values
        .iter()
        .map(|&l| l.max(T::zero()).sqrt())
        .collect();
    let lead = sigma.first().copied().unwrap_or(T::zero());
    if lead <= T::zero() {
        return Err(Error::InvalidParameter(
            "cannot factor an all-zero sample matrix".into(),
        ));
    }
    let rank_tol = lead * T::from_f64_lossy(1e-7);
    let mut columns = Vec::with_capacity(k);
    for t in 0..k {
        if sigma[t] <= rank_tol {
            break;
        }
        let v: Vec<T> = (0..s).map(|r| eig.vectors.get(r, t)).collect();
        columns.push(f.mul_vec(&v));
    }
    let basis_cols = linalg::mgs_orthonormalize(columns, T::from_f64_lossy(1e-9));
    Ok((
        FactorL {
            basis: DenseMatrix::from_columns(&basis_cols)?,
        },
        sigma,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Passes {
    One,
    Two,
}

#[derive(Clone, Copy, Debug)]
pub struct BuildOptions {
    pub k: usize,
    /// Total number of samples s.
    pub samples: usize,
    /// Samples drawn per sampler instance; `ceil(s / m)` instances run.
    pub samples_per_run: usize,
    pub seed: u64,
    pub passes: Passes,
}

#[derive(Clone, Debug)]
pub struct BuildOutput<T: Scalar> {
    pub factor: FactorL<T>,
    pub sigma: Vec<T>,
    pub batch: SampleBatch<T>,
    /// Combined sketch payload of all instances (what a streaming run
    /// would hold concurrently).
    pub sketch_payload_bytes: usize,
    pub instances: usize,
    pub m_hat: T,
}

/// End-to-end factor construction over a stream: run `ceil(s/m)` sampler
/// instances, draw `m` samples from each, assemble the scaled matrix and
/// extract the top-k left singular vectors.
///
/// With two passes, the first pass only identifies the sampled column
/// positions; exact columns and exact probabilities are then materialized
/// from a second pass over the stream.
pub fn build_factor<T: Scalar>(
    header: &StreamHeader,
    updates: &[StreamUpdate],
    settings: &RunSettings,
    opts: &BuildOptions,
) -> Result<BuildOutput<T>> {
    if opts.samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    if opts.samples < opts.k {
        return Err(Error::InvalidParameter(
            "sample count must be at least the target rank".into(),
        ));
    }
    let transform = TransformSpec::<T>::with_eta(header.eta_num, header.eta_den)?;
    let mode = TransformMode::Entrywise;
    let m_hat = settings
        .provider
        .estimate::<T>(header, updates, &transform, mode)?;
    let m = opts.samples_per_run.max(1);
    let instances = opts.samples.div_ceil(m);
    let config = SamplerConfig::new(
        header.n_rows,
        header.n_cols,
        settings.epsilon,
        settings.provider.k_bound().max(settings.k_factor),
        settings.delta,
    )?
    .with_samples_per_run(m)
    .with_budget(settings.budget)?;

    let mut chain = SplitMix64::new(opts.seed ^ 0x10c4_0b5e_55aa_3c21);
    let mut samples: Vec<ColumnSample<T>> = Vec::with_capacity(opts.samples);
    let mut payload = 0usize;
    for _ in 0..instances {
        let instance_seed = chain.next_u64();
        let mut rng = SplitMix64::new(chain.next_u64());
        let mut state = SamplerState::new(config.clone(), transform, mode, m_hat, instance_seed)?;
        state.ingest(updates)?;
        state.prepare()?;
        payload += state.payload_bytes();
        for _ in 0..m {
            if samples.len() == opts.samples {
                break;
            }
            samples.push(state.draw_sample(&mut rng)?);
        }
    }

    if opts.passes == Passes::Two {
        materialize_exact_columns(header, updates, &transform, m_hat, &mut samples)?;
    }

    let batch = SampleBatch {
        samples,
        ambient: header.n_rows,
    };
    let f = assemble_scaled(&batch, &transform, mode)?;
    let (factor, sigma) = top_k_left_singular(&f, opts.k.min(batch.len()))?;
    Ok(BuildOutput {
        factor,
        sigma,
        batch,
        sketch_payload_bytes: payload,
        instances,
        m_hat,
    })
}

/// Second pass: accumulate the sampled columns exactly and replace each
/// sample's vector with the true column, its estimate with the true mass
/// and its probability with the error-free `mass / m_hat`.
fn materialize_exact_columns<T: Scalar>(
    header: &StreamHeader,
    updates: &[StreamUpdate],
    transform: &TransformSpec<T>,
    m_hat: T,
    samples: &mut [ColumnSample<T>],
) -> Result<()> {
    use std::collections::BTreeMap;
    let mut wanted: BTreeMap<u32, Vec<T>> = BTreeMap::new();
    for s in samples.iter() {
        wanted.entry(s.column as u32).or_insert_with(|| vec![T::zero(); header.n_rows]);
    }
    for u in updates {
        if let Some(col) = wanted.get_mut(&u.col) {
            let r = u.row as usize;
            col[r] = col[r] + T::from_i64_lossy(u.delta);
        }
    }
    let eta = transform.eta();
    let exact: BTreeMap<u32, (Vec<T>, T)> = wanted
        .into_iter()
        .map(|(c, counts)| {
            let real: Vec<T> = counts.into_iter().map(|v| v * eta).collect();
            let mut mass = T::zero();
            for &v in &real {
                let fv = transform.value(v);
                mass = mass + fv * fv;
            }
            (c, (real, mass))
        })
        .collect();
    for s in samples.iter_mut() {
        let (real, mass) = &exact[&(s.column as u32)];
        s.vector = real.clone();
        s.lambda = *mass;
        s.p_hat = (*mass / m_hat).min(T::one());
    }
    Ok(())
}
