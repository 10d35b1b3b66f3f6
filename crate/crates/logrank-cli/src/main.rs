//! Command-line driver: synthetic data generation, one-pass and two-pass
//! factor runs, sampled regression, and factor evaluation against the
//! exact decomposition. Metric rows are emitted as CSV on stdout.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use logrank::lowrank::{build_factor, BuildOptions, Passes};
use logrank::regression::{solve, RegressionOptions};
use logrank::stream_io::{
    generate_synthetic, read_stream_file, reconstruct_dense, split_b, write_stream_file,
};
use logrank::{linalg, oracle};
use logrank::{Error, FactorL, MassProvider, RunSettings, TransformSpec};

const METRICS_VERSION: u32 = 1;
const METRICS_HEADER: &str =
    "version,command,n,k,s,m,epsilon,seed,passes,space_fraction,error_ratio,wall_time_s";

#[derive(Parser)]
#[command(name = "logrank", version, about = "One-pass sketches for sampling, low-rank approximation and regression of log-transformed matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic co-occurrence style turnstile stream.
    Gen {
        /// Matrix dimension (n x n), at least 16.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Zipf exponent of the word frequency profile.
        #[arg(long, default_value_t = 1.0)]
        zipf: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// One- or two-pass rank-k factor from a stream, with a metrics row.
    Lowrank {
        #[arg(long)]
        input: PathBuf,
        /// Factor CSV path; a binary twin is written next to it.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        k: usize,
        /// Total number of column samples.
        #[arg(long)]
        s: usize,
        /// Samples per sketch instance; ceil(s/m) instances run.
        #[arg(long, default_value_t = 100)]
        m: usize,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        passes: u8,
        /// Mass estimate provider: `exact` or `fixed:<kappa>`.
        #[arg(long)]
        provider: Option<String>,
        /// Flat key=value settings file.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Sampled least squares on a stream whose last column is flagged b.
    Regress {
        #[arg(long)]
        input: PathBuf,
        /// Solution CSV path; a key=value metrics file is written next to it.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        s: usize,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        provider: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a factor file against the exact rank-k decomposition.
    Eval {
        #[arg(long)]
        factor: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err}");
        std::process::exit(if err.is_validation() { 1 } else { 2 });
    }
}

fn load_settings(
    config: Option<&PathBuf>,
    epsilon: Option<f64>,
    seed: Option<u64>,
    provider: Option<&String>,
) -> Result<RunSettings, Error> {
    let mut settings = match config {
        Some(path) => RunSettings::parse_kv(&std::fs::read_to_string(path)?)?,
        None => RunSettings::default(),
    };
    if let Some(eps) = epsilon {
        settings.epsilon = eps;
    }
    if let Some(seed) = seed {
        settings.seed = Some(seed);
    }
    if let Some(p) = provider {
        settings.provider = MassProvider::parse(p)?;
    }
    Ok(settings)
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Gen { n, seed, zipf, output } => {
            let inst = generate_synthetic(n, seed, zipf)?;
            write_stream_file(&output, &inst.header, &inst.updates)?;
            eprintln!(
                "wrote {} updates for a {n}x{n} matrix to {}",
                inst.updates.len(),
                output.display()
            );
            Ok(())
        }
        Command::Lowrank {
            input,
            output,
            k,
            s,
            m,
            epsilon,
            seed,
            passes,
            provider,
            config,
        } => {
            let passes = match passes {
                1 => Passes::One,
                2 => Passes::Two,
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "passes must be 1 or 2, got {other}"
                    )))
                }
            };
            let settings = load_settings(config.as_ref(), epsilon, seed, provider.as_ref())?;
            let seed = settings.seed.unwrap_or(1);
            let (header, updates) = read_stream_file(&input)?;
            let opts = BuildOptions {
                k,
                samples: s,
                samples_per_run: m,
                seed,
                passes,
            };
            let started = Instant::now();
            let out = build_factor::<f64>(&header, &updates, &settings, &opts)?;
            let wall_time = started.elapsed().as_secs_f64();

            std::fs::write(&output, out.factor.to_csv())?;
            std::fs::write(twin_path(&output, "bin"), out.factor.to_bytes())?;

            // oracle evaluation, excluded from the timed section
            let dense = reconstruct_dense::<f64>(&header, &updates)?;
            let transform = TransformSpec::<f64>::with_eta(header.eta_num, header.eta_den)?;
            let report = oracle::error_ratio(out.factor.basis(), &dense, &transform, k)?;
            let dense_bytes = (header.n_rows * header.n_cols * 8) as f64;
            let space_fraction = out.sketch_payload_bytes as f64 / dense_bytes;

            println!("{METRICS_HEADER}");
            println!(
                "{METRICS_VERSION},lowrank,{},{},{},{},{},{},{},{:.6e},{},{:.3}",
                header.n_cols,
                k,
                s,
                m,
                settings.epsilon,
                seed,
                if passes == Passes::One { 1 } else { 2 },
                space_fraction,
                format_ratio(report.ratio),
                wall_time,
            );
            Ok(())
        }
        Command::Regress {
            input,
            output,
            s,
            epsilon,
            seed,
            provider,
            config,
        } => {
            let settings = load_settings(config.as_ref(), epsilon, seed, provider.as_ref())?;
            let seed = settings.seed.unwrap_or(1);
            let (header, updates) = read_stream_file(&input)?;
            let opts = RegressionOptions {
                samples: s,
                samples_per_run: s,
                seed,
            };
            let out = solve::<f64>(&header, &updates, &settings, &opts)?;

            let mut solution_csv = String::new();
            for v in &out.solution.x {
                solution_csv.push_str(&format!("{v:.16e}\n"));
            }
            std::fs::write(&output, solution_csv)?;

            // oracle residuals
            let transform = TransformSpec::<f64>::with_eta(header.eta_num, header.eta_den)?;
            let dense = reconstruct_dense::<f64>(&header, &updates)?;
            let (a, b) = split_b(&header, &dense)?;
            let opt = oracle::exact_least_squares(&a, &b, &transform)?;
            let g = a.map(|v| transform.value(v));
            let fitted = g.mul_vec(&out.solution.x);
            let oracle_residual = fitted
                .iter()
                .zip(&b)
                .map(|(&p, &q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            let spec = oracle::best_rank_k_of(&g, a.n_cols().min(a.n_rows()))?;
            let lam_min = spec
                .spectrum
                .iter()
                .copied()
                .filter(|&l| l > 0.0)
                .last()
                .unwrap_or(0.0);
            let kappa = if lam_min > 0.0 {
                (spec.spectrum[0] / lam_min).sqrt()
            } else {
                f64::INFINITY
            };

            let metrics = format!(
                "sampled_residual={:.12e}\noracle_residual={:.12e}\nopt_residual={:.12e}\nepsilon={}\ns={}\nkappa={:.6e}\n",
                out.solution.sampled_residual,
                oracle_residual,
                opt.residual,
                settings.epsilon,
                out.solution.samples,
                kappa,
            );
            std::fs::write(twin_path(&output, "metrics"), metrics.as_bytes())?;
            print!("{metrics}");
            if out.solution.degenerate {
                eprintln!("warning: sampled design was rank-deficient; minimum-norm solution returned");
            }
            Ok(())
        }
        Command::Eval { factor, input, k } => {
            let factor_text = std::fs::read_to_string(&factor)?;
            let mut factor = FactorL::<f64>::from_csv(&factor_text)?;
            let (header, updates) = read_stream_file(&input)?;
            let dense = reconstruct_dense::<f64>(&header, &updates)?;
            let transform = TransformSpec::<f64>::with_eta(header.eta_num, header.eta_den)?;

            if factor.orthonormality_defect() > 1e-8 {
                eprintln!("warning: factor columns are not orthonormal; re-orthonormalizing");
                let cols: Vec<Vec<f64>> = (0..factor.k()).map(|c| factor.basis().column(c)).collect();
                let basis = linalg::mgs_orthonormalize(cols, 1e-12);
                factor = FactorL::from_basis(logrank::DenseMatrix::from_columns(&basis)?);
            }
            let report = oracle::error_ratio(factor.basis(), &dense, &transform, k)?;
            println!("error_ratio={}", format_ratio(report.ratio));
            println!("numerator={:.12e}", report.numerator);
            println!("denominator={:.12e}", report.denominator);
            println!("best_rank_k_residual_sq={:.12e}", report.best_rank_k_residual_sq);
            Ok(())
        }
    }
}

fn format_ratio(ratio: Option<f64>) -> String {
    match ratio {
        Some(r) => format!("{r:.12e}"),
        None => "nan".into(),
    }
}

fn twin_path(base: &std::path::Path, ext: &str) -> PathBuf {
    let mut p = base.to_path_buf();
    let new_ext = match p.extension() {
        Some(cur) => format!("{}.{ext}", cur.to_string_lossy()),
        None => ext.to_string(),
    };
    p.set_extension(new_ext);
    p
}
