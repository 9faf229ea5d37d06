//! The `akmmd` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::{
    derive_stream, load_point_cloud, load_reference_set, save_reference_set, save_result, write_matrix_csv, CsvOptions,
    PointCloud, ReferenceSet,
};
use crate::error::{Error, Result};
use crate::kernel::vectorize_tensor;
use crate::ksample::{
    affinity_graph, median_scale, pairwise_distances, save_edge_list, save_embedding, spectral_embedding,
};
use crate::mmd::{two_sample_test, SpecFilter, StatisticKind};
use crate::refset::{build_reference_set, sample_reference_points, LocalPcaConfig, RefSamplingConfig};
use crate::spectral::{bandpass_filter, SpectralFilter};
use crate::synthetic::{
    gen_curve_pair, gen_mixture_pair, gen_tensor_grid, ArcDistribution, CurvePairConfig, GaussianMixture3, GridBox,
    MixturePairConfig, PointSampler, TensorGridConfig,
};
use crate::theory::compare::default_arc_refset;
use crate::theory::{kernel_comparison, ArcKernels, ComparisonConfig, PowerStudy};
use crate::witness::witness;

#[derive(Debug, Parser)]
#[command(
    name = "akmmd",
    version,
    about = "Anisotropic-kernel MMD two-sample and k-sample tests"
)]
struct Cli {
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true, env = "AKMMD_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    /// Input CSV files start with a header line.
    #[arg(long, global = true)]
    header: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Two-sample permutation test.
    Test(TestArgs),
    /// Evaluate the witness function.
    Witness(WitnessArgs),
    /// Pairwise distances between many samples, their graph and embedding.
    Pairwise(PairwiseArgs),
    /// Power against the isotropic Gaussian baseline over a sweep of departures.
    Power(PowerArgs),
    /// Empirical null of n·T_n next to draws from its limit law.
    Simulate(SimulateArgs),
    /// Separation ratios of the Gaussian, L2 and spectral kernels.
    Compare(CompareArgs),
    /// Generate synthetic data.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Build a reference set from pooled data.
    Refs(RefsArgs),
}

#[derive(Debug, Args)]
struct RefArgs {
    /// Reference points, one per row.
    #[arg(long)]
    refs: PathBuf,
    /// Covariances, row-major d×d per row.
    #[arg(long)]
    covs: PathBuf,
    /// Eigenvalue floor applied to loaded covariances.
    #[arg(long, default_value_t = 1e-10, value_parser = positive)]
    reg_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StatArg {
    L2,
    Spec,
}

#[derive(Debug, Clone, PartialEq)]
enum FilterArg {
    Bandpass(usize, usize),
    Diffusion(u32),
    File(PathBuf),
}

fn parse_filter(s: &str) -> std::result::Result<FilterArg, String> {
    let (kind, rest) = s
        .split_once(':')
        .ok_or_else(|| format!("expected bandpass:a,b | diffusion:m | file:path, got {s:?}"))?;
    match kind {
        "bandpass" => {
            let (a, b) = rest.split_once(',').ok_or("bandpass needs two integers a,b")?;
            let a: usize = a.trim().parse().map_err(|e| format!("bandpass: {e}"))?;
            let b: usize = b.trim().parse().map_err(|e| format!("bandpass: {e}"))?;
            if a == 0 || b < a {
                return Err("bandpass needs 1 ≤ a ≤ b".into());
            }
            Ok(FilterArg::Bandpass(a, b))
        }
        "diffusion" => rest
            .trim()
            .parse()
            .map(FilterArg::Diffusion)
            .map_err(|e| format!("diffusion: {e}")),
        "file" if !rest.is_empty() => Ok(FilterArg::File(PathBuf::from(rest))),
        _ => Err(format!("unknown filter {s:?}")),
    }
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn level(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        Ok(v) => Err(format!("must lie in (0, 1), got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn nonnegative(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be nonnegative, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn grid_box(s: &str) -> std::result::Result<GridBox, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x0, x1, y0, y1] if x0 < x1 && y0 < y1 => Ok(GridBox { x0, x1, y0, y1 }),
        _ => Err("expected x0,x1,y0,y1 with x0 < x1 and y0 < y1".into()),
    }
}

#[derive(Debug, Args)]
struct StatArgs {
    #[arg(long, value_enum, default_value_t = StatArg::L2)]
    stat: StatArg,
    /// Truncation rank of the SVD (spectral statistic only).
    #[arg(long, required_if_eq("stat", "spec"), value_parser = clap::value_parser!(u32).range(1..))]
    rank: Option<u32>,
    /// Spectral weights: bandpass:a,b | diffusion:m | file:path.
    #[arg(long, value_parser = parse_filter, default_value = "diffusion:0")]
    filter: FilterArg,
}

impl StatArgs {
    fn kind(&self) -> Result<StatisticKind> {
        match self.stat {
            StatArg::L2 => Ok(StatisticKind::L2),
            StatArg::Spec => {
                let rank = self.rank.ok_or_else(|| Error::invalid("--stat spec requires --rank"))? as usize;
                let filter = match &self.filter {
                    FilterArg::Bandpass(a, b) => SpecFilter::Weights(bandpass_filter(*a, *b)?),
                    FilterArg::Diffusion(m) => SpecFilter::Diffusion(*m),
                    FilterArg::File(p) => SpecFilter::Weights(SpectralFilter::load(p)?),
                };
                Ok(StatisticKind::Spec { rank, filter })
            }
        }
    }
}

#[derive(Debug, Args)]
struct TestArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[command(flatten)]
    refs: RefArgs,
    #[command(flatten)]
    stat: StatArgs,
    #[arg(long, default_value_t = 0.05, value_parser = level)]
    alpha: f64,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u32).range(1..))]
    nboot: u32,
    #[arg(long)]
    seed: u64,
    /// Result JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct WitnessArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[command(flatten)]
    refs: RefArgs,
    #[command(flatten)]
    stat: StatArgs,
    /// Query points; defaults to X followed by Y.
    #[arg(long)]
    query: Option<PathBuf>,
    /// CSV of query coordinates followed by the witness value.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PairwiseArgs {
    /// Two or more sample files.
    #[arg(long, num_args = 2.., required = true)]
    samples: Vec<PathBuf>,
    #[command(flatten)]
    refs: RefArgs,
    #[command(flatten)]
    stat: StatArgs,
    /// Squared-distance matrix CSV.
    #[arg(long)]
    out: PathBuf,
    /// Edge list `i,j,weight` of the affinity graph.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Spectral embedding, one row per sample.
    #[arg(long)]
    embedding: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    dim: u32,
    /// Graph bandwidth on squared distances; defaults to their median.
    #[arg(long, value_parser = positive)]
    scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Example {
    Curve,
    Mixture,
}

#[derive(Debug, Args)]
struct PowerArgs {
    #[arg(long, value_enum)]
    example: Example,
    /// Departures δ to sweep.
    #[arg(long, value_delimiter = ',', required = true, value_parser = nonnegative)]
    deltas: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    n1: usize,
    #[arg(long, default_value_t = 500)]
    n2: usize,
    #[arg(long, default_value_t = 0.02, value_parser = nonnegative)]
    eps_x: f64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    trials: u32,
    #[arg(long, default_value_t = 0.05, value_parser = level)]
    alpha: f64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u32).range(1..))]
    nboot: u32,
    #[command(flatten)]
    stat: StatArgs,
    /// Covariance scales σ̃ for the reference set.
    #[arg(long, value_delimiter = ',', default_value = "1", value_parser = positive)]
    sigma_tilde: Vec<f64>,
    /// Gaussian bandwidths of the isotropic baseline.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.02,0.04,0.08,0.16", value_parser = positive)]
    bandwidths: Vec<f64>,
    /// Reference points for the mixture example.
    #[arg(long, default_value_t = 100)]
    nr: usize,
    /// Points per distribution in the pool the mixture references are drawn from.
    #[arg(long, default_value_t = 1000)]
    pool: usize,
    #[arg(long)]
    seed: u64,
    /// CSV with one row per δ.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 0.02, value_parser = positive)]
    eps_x: f64,
    /// Base sample for the spectral kernel's singular functions.
    #[arg(long, default_value_t = 10_000)]
    base_points: usize,
    /// Sample size for the centered spectrum.
    #[arg(long, default_value_t = 10_000)]
    m_points: usize,
    /// Cap on the sample size for kernels without explicit features.
    #[arg(long, default_value_t = 2000)]
    max_gram_points: usize,
    #[arg(long, default_value_t = 500)]
    k_max: usize,
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Total sample size n = n₁ + n₂ with n₁ = n₂.
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 2000)]
    trials: usize,
    #[arg(long, default_value_t = 20_000)]
    draws: usize,
    #[command(flatten)]
    theory: TheoryArgs,
    /// Empirical n·T_n under the null, one column per kernel.
    #[arg(long)]
    out_null: PathBuf,
    /// Limit-law draws, one column per kernel.
    #[arg(long)]
    out_limit: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long, default_value_t = 200)]
    n_per_sample: usize,
    #[arg(long, default_value_t = 0.5, value_parser = positive)]
    tau: f64,
    /// Radius of the alternative arc.
    #[arg(long, default_value_t = 0.98, value_parser = positive)]
    alt_radius: f64,
    #[arg(long, default_value_t = 10_000)]
    n_mc: usize,
    #[arg(long, default_value_t = 50_000)]
    draws: usize,
    #[command(flatten)]
    theory: TheoryArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PairGenArgs {
    #[arg(long)]
    n1: usize,
    #[arg(long)]
    n2: usize,
    #[arg(long, value_parser = nonnegative)]
    delta: f64,
    #[arg(long, default_value_t = 0.02, value_parser = nonnegative)]
    eps_x: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_x: PathBuf,
    #[arg(long)]
    out_y: PathBuf,
}

#[derive(Debug, Subcommand)]
enum GenCommand {
    /// Noisy quarter circles of radius 1 and 1 − δ.
    Curve(PairGenArgs),
    /// Three-component Gaussian mixtures in 3-D.
    Mixture(PairGenArgs),
    /// Grid of diffusion tensors: x, y, then the six tensor coordinates.
    Tensors(TensorGenArgs),
}

#[derive(Debug, Args)]
struct TensorGenArgs {
    #[arg(long, default_value_t = 32)]
    side: usize,
    #[arg(long, default_value_t = 0.0, value_parser = nonnegative)]
    noise: f64,
    /// Anomaly box x0,x1,y0,y1 in pixel indices.
    #[arg(long, value_parser = grid_box)]
    anomaly: Option<GridBox>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RefsArgs {
    /// Pool files, concatenated.
    #[arg(long, num_args = 1.., required = true)]
    pool: Vec<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    nr: u32,
    /// Neighbors for local PCA.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    sigma_tilde: f64,
    #[arg(long, value_parser = positive)]
    reg_floor: Option<f64>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_refs: PathBuf,
    #[arg(long)]
    out_covs: PathBuf,
}

/// Parse `args` (program name first), execute, and return the exit code:
/// 0 on success, 2 on a usage error, 1 on a runtime error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        pool = pool.num_threads(t as usize);
    }
    let outcome = pool
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))
        .and_then(|pool| {
            let opts = CsvOptions {
                header: cli.header,
                ..CsvOptions::default()
            };
            pool.install(|| dispatch(cli.command, opts))
        });
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command, opts: CsvOptions) -> Result<()> {
    match command {
        Command::Test(a) => cmd_test(a, opts),
        Command::Witness(a) => cmd_witness(a, opts),
        Command::Pairwise(a) => cmd_pairwise(a, opts),
        Command::Power(a) => cmd_power(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Gen(g) => cmd_gen(g),
        Command::Refs(a) => cmd_refs(a, opts),
    }
}

fn load_refs(a: &RefArgs, opts: CsvOptions) -> Result<ReferenceSet> {
    load_reference_set(&a.refs, &a.covs, opts, a.reg_floor)
}

fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn cmd_test(a: TestArgs, opts: CsvOptions) -> Result<()> {
    let kind = a.stat.kind()?;
    let x = load_point_cloud(&a.x, opts)?;
    let y = load_point_cloud(&a.y, opts)?;
    let refset = load_refs(&a.refs, opts)?;
    let rng = derive_stream(a.seed, 0);
    let result = two_sample_test(&x, &y, &refset, &kind, a.alpha, a.nboot as usize, &rng)?;
    save_result(&result, &a.out)?;
    println!(
        "statistic={} threshold={} p_value={} reject={}",
        result.statistic, result.threshold_t_alpha, result.p_value, result.reject
    );
    Ok(())
}

fn cmd_witness(a: WitnessArgs, opts: CsvOptions) -> Result<()> {
    let kind = a.stat.kind()?;
    let x = load_point_cloud(&a.x, opts)?;
    let y = load_point_cloud(&a.y, opts)?;
    let refset = load_refs(&a.refs, opts)?;
    let z = match &a.query {
        Some(q) => load_point_cloud(q, opts)?,
        None => x.concat(&y)?,
    };
    witness(&x, &y, &refset, &kind, &z)?.save_csv(&a.out)
}

fn cmd_pairwise(a: PairwiseArgs, opts: CsvOptions) -> Result<()> {
    let kind = a.stat.kind()?;
    let samples = a
        .samples
        .iter()
        .map(|p| load_point_cloud(p, opts))
        .collect::<Result<Vec<_>>>()?;
    let refset = load_refs(&a.refs, opts)?;
    let d = pairwise_distances(&samples, &refset, &kind)?;
    d.save_csv(&a.out)?;
    if a.graph.is_none() && a.embedding.is_none() {
        return Ok(());
    }
    let scale = match a.scale {
        Some(s) => s,
        None => median_scale(&d),
    };
    let w = affinity_graph(&d, scale)?;
    if let Some(path) = &a.graph {
        save_edge_list(&w, path)?;
    }
    if let Some(path) = &a.embedding {
        save_embedding(&spectral_embedding(&w, a.dim as usize)?, path)?;
    }
    Ok(())
}

fn cmd_power(a: PowerArgs) -> Result<()> {
    let kind = a.stat.kind()?;
    let master = derive_stream(a.seed, 0);
    let mut header: Vec<String> = vec!["delta".into()];
    header.extend(a.sigma_tilde.iter().map(|s| format!("aniso_{s}")));
    header.extend(a.bandwidths.iter().map(|h| format!("gaussian_{h}")));
    header.extend(["best_aniso".into(), "best_gaussian".into()]);
    let mut rows = Vec::with_capacity(a.deltas.len());
    for (i, &delta) in a.deltas.iter().enumerate() {
        let base = master.substream(i as u64);
        let (p, q): (Box<dyn PointSampler>, Box<dyn PointSampler>) = match a.example {
            Example::Curve => {
                if delta >= 1.0 {
                    return Err(Error::invalid("the curve example needs delta < 1"));
                }
                let c = CurvePairConfig {
                    eps_x: a.eps_x,
                    ..CurvePairConfig::new(a.n1, a.n2, delta)
                };
                (Box::new(c.p()), Box::new(c.q()))
            }
            Example::Mixture => {
                let c = MixturePairConfig {
                    eps_x: a.eps_x,
                    ..MixturePairConfig::new(a.n1, a.n2, delta)
                };
                (Box::new(c.p()), Box::new(c.q()))
            }
        };
        let study = PowerStudy {
            p: p.as_ref(),
            q: q.as_ref(),
            n1: a.n1,
            n2: a.n2,
            alpha: a.alpha,
            n_boot: a.nboot as usize,
            trials: a.trials as usize,
        };
        let trials = base.substream(1);
        let ref_points = match a.example {
            Example::Curve => None,
            Example::Mixture => {
                let mut r = base.substream(0);
                let pool = p.sample(a.pool, &mut r)?.concat(&q.sample(a.pool, &mut r)?)?;
                Some(sample_reference_points(&pool, &RefSamplingConfig::new(a.nr), &mut r)?)
            }
        };
        let mut row = vec![delta];
        for &st in &a.sigma_tilde {
            let refset = match &ref_points {
                None => default_arc_refset(a.eps_x * st)?,
                Some(pts) => GaussianMixture3 {
                    delta: 0.0,
                    eps_x: a.eps_x,
                }
                .component_reference_set(pts, st)?,
            };
            row.push(study.anisotropic(&refset, &kind, &trials)?);
        }
        row.extend(study.gaussian_grid(&a.bandwidths, &trials)?);
        let best = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n_st = a.sigma_tilde.len();
        row.push(best(&row[1..1 + n_st]));
        row.push(best(&row[1 + n_st..]));
        log::info!("delta {delta}: {row:?}");
        rows.push(row);
    }
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_matrix_csv(&a.out, Some(&h), rows.iter().map(|r| r.as_slice()))
}

fn arc_kernels(t: &TheoryArgs) -> Result<ArcKernels> {
    ArcKernels::new(t.eps_x, t.base_points, &derive_stream(t.seed, 1))
}

const KERNEL_COLUMNS: [&str; 3] = ["gaussian", "k_l2", "k_spec"];

fn write_columns(path: &Path, columns: &[Vec<f64>]) -> Result<()> {
    let n = columns.iter().map(Vec::len).min().unwrap_or(0);
    let rows: Vec<Vec<f64>> = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    write_matrix_csv(path, Some(&KERNEL_COLUMNS), rows.iter().map(|r| r.as_slice()))
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    if a.n < 2 || a.n % 2 != 0 {
        return Err(Error::invalid("--n must be even and at least 2"));
    }
    let t = &a.theory;
    let kernels = arc_kernels(t)?;
    let p = CurvePairConfig {
        eps_x: t.eps_x,
        ..CurvePairConfig::new(1, 1, 0.0)
    }
    .p();
    let config = ComparisonConfig {
        n_per_sample: a.n / 2,
        tau: 1.0,
        n_mc: a.trials,
        n_limit_draws: a.draws,
        k_max: t.k_max,
        m_points: t.m_points,
        max_gram_points: t.max_gram_points,
    };
    let reports = kernel_comparison(&kernels.all(), &p, &p, &config, &derive_stream(t.seed, 0))?;
    let null: Vec<Vec<f64>> = reports.iter().map(|r| r.null_scaled(a.n)).collect();
    let limit: Vec<Vec<f64>> = reports.iter().map(|r| r.null_limit_scaled(a.n)).collect();
    write_columns(&a.out_null, &null)?;
    write_columns(&a.out_limit, &limit)
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let t = &a.theory;
    let kernels = arc_kernels(t)?;
    let p = CurvePairConfig {
        eps_x: t.eps_x,
        ..CurvePairConfig::new(1, 1, 0.0)
    }
    .p();
    let q1 = ArcDistribution {
        radius: a.alt_radius,
        eps_x: t.eps_x,
    };
    let config = ComparisonConfig {
        n_per_sample: a.n_per_sample,
        tau: a.tau,
        n_mc: a.n_mc,
        n_limit_draws: a.draws,
        k_max: t.k_max,
        m_points: t.m_points,
        max_gram_points: t.max_gram_points,
    };
    let reports = kernel_comparison(&kernels.all(), &p, &q1, &config, &derive_stream(t.seed, 0))?;
    for r in &reports {
        println!("{}: r = {:.4}, r_bar = {:.4}", r.kernel, r.ratio_r, r.ratio_r_bar);
    }
    write_json(&reports, &a.out)
}

fn cmd_gen(g: GenCommand) -> Result<()> {
    match g {
        GenCommand::Curve(a) => {
            let c = CurvePairConfig {
                eps_x: a.eps_x,
                ..CurvePairConfig::new(a.n1, a.n2, a.delta)
            };
            let (x, y) = gen_curve_pair(&c, &mut derive_stream(a.seed, 0))?;
            save_pair(&x, &y, &a)
        }
        GenCommand::Mixture(a) => {
            let c = MixturePairConfig {
                eps_x: a.eps_x,
                ..MixturePairConfig::new(a.n1, a.n2, a.delta)
            };
            let (x, y) = gen_mixture_pair(&c, &mut derive_stream(a.seed, 0))?;
            save_pair(&x, &y, &a)
        }
        GenCommand::Tensors(a) => {
            let config = TensorGridConfig {
                anomaly: a.anomaly,
                noise_sigma: a.noise,
                ..TensorGridConfig::new(a.side)
            };
            let pixels = gen_tensor_grid(&config, &mut derive_stream(a.seed, 0))?;
            let rows = pixels
                .iter()
                .map(|px| {
                    let g = vectorize_tensor(&px.tensor)?;
                    Ok(px.location.iter().copied().chain(g).collect::<Vec<f64>>())
                })
                .collect::<Result<Vec<_>>>()?;
            let header = ["x", "y", "t11", "t22", "t33", "t12", "t13", "t23"];
            write_matrix_csv(&a.out, Some(&header), rows.iter().map(|r| r.as_slice()))
        }
    }
}

fn save_pair(x: &PointCloud, y: &PointCloud, a: &PairGenArgs) -> Result<()> {
    write_matrix_csv(&a.out_x, None, x.points())?;
    write_matrix_csv(&a.out_y, None, y.points())
}

fn cmd_refs(a: RefsArgs, opts: CsvOptions) -> Result<()> {
    let mut pool = load_point_cloud(&a.pool[0], opts)?;
    for p in &a.pool[1..] {
        pool = pool.concat(&load_point_cloud(p, opts)?)?;
    }
    let pca = LocalPcaConfig {
        k_neighbors: a.k,
        scale_sigma_tilde: a.sigma_tilde,
        reg_floor: a.reg_floor,
    };
    let refset = build_reference_set(
        &pool,
        &RefSamplingConfig::new(a.nr as usize),
        &pca,
        &mut derive_stream(a.seed, 0),
    )?;
    save_reference_set(&refset, &a.out_refs, &a.out_covs)
}
