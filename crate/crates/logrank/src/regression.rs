//! Sampled least squares on the concatenated system: rows of
//! `(f(A) | b)` are sampled through the column sampler run on the
//! transposed stream with the tail coordinate left untransformed, then the
//! small weighted system is solved by truncated normal equations.

use crate::error::{Error, Result};
use crate::hashing::SplitMix64;
use crate::linalg;
use crate::lowrank::SampleBatch;
use crate::matrix::DenseMatrix;
use crate::sampler::{RunSettings, SamplerConfig, SamplerState};
use crate::scalar::Scalar;
use crate::stream_io::{StreamHeader, StreamUpdate};
use crate::transform::{TransformMode, TransformSpec};

/// Swaps rows and columns so rows of the original matrix become the
/// sketched objects.
pub fn transpose_updates(updates: &[StreamUpdate]) -> Vec<StreamUpdate> {
    updates
        .iter()
        .map(|u| StreamUpdate {
            row: u.col,
            col: u.row,
            delta: u.delta,
        })
        .collect()
}

fn transposed_header(header: &StreamHeader) -> Result<StreamHeader> {
    if !header.has_b_column {
        return Err(Error::InvalidParameter(
            "regression input must flag its last column as b (header `b` marker)".into(),
        ));
    }
    if header.n_cols < 2 {
        return Err(Error::InvalidParameter("regression needs d >= 1".into()));
    }
    Ok(StreamHeader {
        n_rows: header.n_cols,
        n_cols: header.n_rows,
        eta_num: header.eta_num,
        eta_den: header.eta_den,
        has_b_column: false,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct RegressionOptions {
    /// Number of row samples s.
    pub samples: usize,
    /// Samples drawn per sampler instance.
    pub samples_per_run: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct RegressionSolution<T: Scalar> {
    pub x: Vec<T>,
    /// `||M x - b||_2` on the sampled, scaled system.
    pub sampled_residual: T,
    pub samples: usize,
    /// Set when the sampled design was numerically rank-deficient and the
    /// minimum-norm solution was returned.
    pub degenerate: bool,
}

#[derive(Clone, Debug)]
pub struct RegressionOutput<T: Scalar> {
    pub solution: RegressionSolution<T>,
    pub batch: SampleBatch<T>,
    pub sketch_payload_bytes: usize,
    pub m_hat: T,
}

/// The sample count schedule `ceil(8 d kappa^2 eps^-2 ln(d / delta))`.
pub fn sample_count_schedule(d: usize, kappa: f64, epsilon: f64, delta: f64) -> usize {
    (8.0 * d as f64 * kappa * kappa / (epsilon * epsilon) * (d as f64 / delta).ln().max(1.0))
        .ceil() as usize
}

/// Draws `s` noisy rows of `(f(A) | b)` with their sampling probabilities.
pub fn sample_rows<T: Scalar>(
    header: &StreamHeader,
    updates: &[StreamUpdate],
    settings: &RunSettings,
    opts: &RegressionOptions,
) -> Result<RegressionOutput<T>> {
    let t_header = transposed_header(header)?;
    let t_updates = transpose_updates(updates);
    let transform = TransformSpec::<T>::with_eta(header.eta_num, header.eta_den)?;
    let mode = TransformMode::ConcatTail;
    let m_hat = settings
        .provider
        .estimate::<T>(&t_header, &t_updates, &transform, mode)?;
    let m = opts.samples_per_run.max(1);
    let instances = opts.samples.div_ceil(m);
    let config = SamplerConfig::new(
        t_header.n_rows,
        t_header.n_cols,
        settings.epsilon,
        settings.provider.k_bound().max(settings.k_factor),
        settings.delta,
    )?
    .with_samples_per_run(m)
    .with_budget(settings.budget)?;

    let mut chain = SplitMix64::new(opts.seed ^ 0x7e67_2e55_10b3_9db1);
    let mut samples = Vec::with_capacity(opts.samples);
    let mut payload = 0usize;
    for _ in 0..instances {
        let instance_seed = chain.next_u64();
        let mut rng = SplitMix64::new(chain.next_u64());
        let mut state = SamplerState::new(config.clone(), transform, mode, m_hat, instance_seed)?;
        state.ingest(&t_updates)?;
        state.prepare()?;
        payload += state.payload_bytes();
        for _ in 0..m {
            if samples.len() == opts.samples {
                break;
            }
            samples.push(state.draw_sample(&mut rng)?);
        }
    }
    let batch = SampleBatch {
        samples,
        ambient: t_header.n_rows,
    };
    Ok(RegressionOutput {
        solution: RegressionSolution {
            x: Vec::new(),
            sampled_residual: T::zero(),
            samples: batch.len(),
            degenerate: false,
        },
        batch,
        sketch_payload_bytes: payload,
        m_hat,
    })
}

/// Solves the sampled system built from a batch of concatenated rows:
/// stack `g(h_t) / sqrt(s p_t)`, split off the last column as the target,
/// and solve the normal equations with eigenvalue truncation at
/// `1e-12 lambda_max`.
pub fn solve_from_batch<T: Scalar>(
    batch: &SampleBatch<T>,
    transform: &TransformSpec<T>,
) -> Result<RegressionSolution<T>> {
    let s = batch.len();
    if s == 0 {
        return Err(Error::InvalidParameter("empty sample batch".into()));
    }
    let width = batch.ambient;
    if width < 2 {
        return Err(Error::InvalidParameter("regression needs d >= 1".into()));
    }
    let d = width - 1;
    if s < d {
        return Err(Error::InvalidParameter(format!(
            "need at least d = {d} samples, got {s}"
        )));
    }
    let s_scalar = T::from_f64_lossy(s as f64);
    let mut design = DenseMatrix::zeros(s, d)?;
    let mut target = vec![T::zero(); s];
    for (t, sample) in batch.samples.iter().enumerate() {
        if sample.p_hat <= T::zero() || !sample.p_hat.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sample {t} has non-positive probability"
            )));
        }
        if sample.vector.len() != width {
            return Err(Error::InvalidParameter("sample dimension mismatch".into()));
        }
        let scale = (s_scalar * sample.p_hat).sqrt().recip();
        for c in 0..d {
            design.set(t, c, transform.value(sample.vector[c]) * scale);
        }
        target[t] = sample.vector[d] * scale;
    }
    let gram = design.gram();
    let rhs = design.tr_mul_vec(&target);
    let (x, rank) = linalg::solve_spd_truncated(&gram, &rhs, T::from_f64_lossy(1e-12))?;
    let fitted = design.mul_vec(&x);
    let sampled_residual = fitted
        .iter()
        .zip(&target)
        .map(|(&a, &b)| (a - b) * (a - b))
        .fold(T::zero(), |acc, v| acc + v)
        .sqrt();
    Ok(RegressionSolution {
        x,
        sampled_residual,
        samples: s,
        degenerate: rank < d,
    })
}

/// End to end: sample rows of the concatenated stream and solve.
pub fn solve<T: Scalar>(
    header: &StreamHeader,
    updates: &[StreamUpdate],
    settings: &RunSettings,
    opts: &RegressionOptions,
) -> Result<RegressionOutput<T>> {
    let mut out = sample_rows::<T>(header, updates, settings, opts)?;
    let transform = TransformSpec::<T>::with_eta(header.eta_num, header.eta_den)?;
    out.solution = solve_from_batch(&out.batch, &transform)?;
    Ok(out)
}
