//! `otsing`: stage-by-stage and end-to-end driver.
//!
//! Failures print one line to stderr,
//! `error kind=<config|io|numeric> code=<n> msg="..."`, and exit with that
//! code (1 configuration, 2 I/O, 3 numeric).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use otsing_core::config::{read_labeled, RunConfig, SweepMode};
use otsing_core::io::{read_json, write_bytes, write_json, PointTable};
use otsing_core::pipeline::{ablation_sweep, evaluate, report_histogram, run_pipeline, solver_pool, stage_rng, sweep_csv};
use otsing_core::sdot::{assign_flat, optimize_offsets, stats_from_pool, OffsetsFile, PotentialOffsets};
use otsing_core::singularity::{candidate_boundaries, select_singular, AdjacencyMode, BoundaryRecord};
use otsing_core::synthesis::{generate_for_boundaries, samples_meta, samples_table, Slab};
use otsing_core::trainer::{history_csv, train, ToyClassifier, TrainConfig};
use otsing_core::{Codec, Error, PointCloud, Result};

#[derive(Parser, Debug)]
#[command(name = "otsing", version, about = "Semi-discrete transport partitions and boundary-guided proxy OOD samples")]
struct Cli {
    /// Seed for every random stream; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "OTSING_THREADS")]
    threads: Option<usize>,
    /// Fail with exit code 3 when the solver does not converge.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit potential offsets for a target point cloud.
    Solve(SolveArgs),
    /// Score candidate boundaries and keep the top fraction.
    Boundaries(BoundaryArgs),
    /// Synthesize proxy OOD samples near selected boundaries.
    Synthesize(SynthArgs),
    /// Train the toy classifier on labeled inputs plus proxy samples.
    TrainToy(TrainArgs),
    /// Confidence metrics of a trained model on ID and OOD sets.
    Evaluate(EvalArgs),
    /// Full pipeline from one config file.
    Run(RunArgs),
    /// Ablation over proxy strategies and boundary fractions.
    Sweep(SweepArgs),
}

/// The run config whose `base` and `solver` blocks the stage commands use.
#[derive(Args, Debug)]
struct StageConfig {
    /// Run config (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    points: PathBuf,
    #[command(flatten)]
    config: StageConfig,
    #[arg(long)]
    out: PathBuf,
    /// Also write the solver report (energy trace, convergence) here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BoundaryArgs {
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    offsets: PathBuf,
    #[arg(long)]
    mode: Option<AdjacencyMode>,
    #[arg(long)]
    rho: Option<f64>,
    #[command(flatten)]
    config: StageConfig,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    offsets: PathBuf,
    #[arg(long)]
    boundaries: PathBuf,
    /// identity | affine:<json> | external:<dir>
    #[arg(long)]
    codec: Option<String>,
    #[arg(long)]
    per_boundary: Option<usize>,
    /// auto | off | <width>
    #[arg(long)]
    slab: Option<Slab>,
    #[command(flatten)]
    config: StageConfig,
    #[arg(long)]
    out: PathBuf,
    /// Per-sample (i, j, lambda_i, lambda_j); defaults to the output path
    /// with a `.json` extension.
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    id: PathBuf,
    #[arg(long)]
    id_labels: PathBuf,
    /// Proxy OOD inputs; plain cross-entropy training without them.
    #[arg(long)]
    otis: Option<PathBuf>,
    #[arg(long, requires = "test_labels")]
    test: Option<PathBuf>,
    #[arg(long, requires = "test")]
    test_labels: Option<PathBuf>,
    /// Trainer settings (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    id: PathBuf,
    #[arg(long)]
    id_labels: PathBuf,
    #[arg(long)]
    ood: PathBuf,
    #[arg(long, default_value_t = otsing_core::metrics::DEFAULT_ECE_BINS)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    hist: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    config: PathBuf,
    /// Comma-separated fractions; overrides the config's sweep block.
    #[arg(long, value_delimiter = ',')]
    rhos: Option<Vec<f64>>,
    /// Comma-separated: TopK, RanB, LatentInterp, InputInterp, Baseline.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<SweepMode>>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            return report(&Error::Config(first));
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> ExitCode {
    let class = e.class();
    let msg = e.to_string().replace('\n', " ").replace('"', "'");
    eprintln!("error kind={} code={} msg=\"{msg}\"", class.as_str(), class.exit_code());
    ExitCode::from(class.exit_code() as u8)
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Loads a run config (or the defaults) and applies the global flags.
fn load_config(path: Option<&Path>, cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.trainer.seed = seed;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.strict |= cli.strict;
    Ok(cfg)
}

fn read_offsets(path: &Path, cloud: &PointCloud) -> Result<PotentialOffsets> {
    let file: OffsetsFile = read_json(path)?;
    if file.n != file.h.len() || file.n != cloud.len() {
        return Err(Error::Config(format!(
            "{}: offsets for {} points (n = {}), cloud has {}",
            path.display(),
            file.h.len(),
            file.n,
            cloud.len()
        )));
    }
    Ok(PotentialOffsets::new(file.h))
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    Ok(PointTable::read(path)?.rows().map(<[f64]>::to_vec).collect())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Solve(a) => {
            let cfg = load_config(a.config.config.as_deref(), &cli)?;
            init_threads(Some(cfg.threads))?;
            let cloud = PointCloud::read(&a.points)?;
            let measure = cfg.base.build(&cloud)?;
            let (offsets, report) = optimize_offsets(&cloud, &measure, &stage_rng(cfg.seed, "solver"), &cfg.solver)?;
            if !report.converged && cfg.strict {
                return Err(Error::NotConverged {
                    energy: report.final_energy,
                    iterations: report.iterations,
                });
            }
            info!("energy {:.3e} after {} iterations", report.final_energy, report.iterations);
            write_json(
                &a.out,
                &OffsetsFile {
                    n: offsets.len(),
                    h: offsets.into_inner(),
                    energy: report.final_energy,
                    seed: cfg.seed,
                },
            )?;
            if let Some(path) = &a.report {
                write_json(path, &report)?;
            }
            Ok(())
        }
        Command::Boundaries(a) => {
            let mut cfg = load_config(a.config.config.as_deref(), &cli)?;
            if let Some(m) = a.mode {
                cfg.adjacency = m;
            }
            if let Some(r) = a.rho {
                cfg.rho = r;
            }
            cfg.validate()?;
            init_threads(Some(cfg.threads))?;
            let cloud = PointCloud::read(&a.points)?;
            let offsets = read_offsets(&a.offsets, &cloud)?;
            let measure = cfg.base.build(&cloud)?;
            let pool = solver_pool(&measure, cfg.seed, cfg.solver.mc_samples)?;
            let assignments = assign_flat(&cloud, &offsets, &pool)?;
            let candidates = candidate_boundaries(&cloud, &offsets, &assignments, cfg.adjacency)?;
            let singular = select_singular(&candidates, cfg.rho)?;
            write_json(&a.out, &singular.records)
        }
        Command::Synthesize(a) => {
            let mut cfg = load_config(a.config.config.as_deref(), &cli)?;
            if let Some(c) = &a.codec {
                cfg.codec = c.clone();
            }
            if let Some(p) = a.per_boundary {
                cfg.synthesis.per_boundary = p;
            }
            if let Some(s) = a.slab {
                cfg.synthesis.slab = s;
            }
            cfg.validate()?;
            init_threads(Some(cfg.threads))?;
            let cloud = PointCloud::read(&a.points)?;
            let offsets = read_offsets(&a.offsets, &cloud)?;
            let boundaries: Vec<BoundaryRecord> = read_json(&a.boundaries)?;
            let codec = Codec::parse(&cfg.codec)?;
            let measure = cfg.base.build(&cloud)?;
            let pool = solver_pool(&measure, cfg.seed, cfg.solver.mc_samples)?;
            let stats = stats_from_pool(&cloud, &offsets, &pool)?;
            let samples = generate_for_boundaries(
                &cloud,
                &offsets,
                &boundaries,
                &stats,
                &codec,
                &measure,
                &stage_rng(cfg.seed, "synthesis"),
                &cfg.synthesis.params(),
            )?;
            samples_table(&samples)?.write_otpc(&a.out)?;
            let meta = a.meta.clone().unwrap_or_else(|| a.out.with_extension("json"));
            write_json(meta, &samples_meta(&samples))
        }
        Command::TrainToy(a) => {
            let mut tc: TrainConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = cli.seed {
                tc.seed = seed;
            }
            tc.validate()?;
            init_threads(cli.threads)?;
            let id = read_labeled(&a.id, &a.id_labels)?;
            let otis = match &a.otis {
                Some(p) => read_rows(p)?,
                None => Vec::new(),
            };
            let test = match (&a.test, &a.test_labels) {
                (Some(p), Some(l)) => Some(read_labeled(p, l)?),
                _ => None,
            };
            let classes = id.labels.iter().chain(test.iter().flat_map(|t| &t.labels)).max().map_or(0, |m| m + 1);
            if classes < 2 || id.is_empty() {
                return Err(Error::TrainingData("need labeled inputs from at least two classes".into()));
            }
            let init = stage_rng(tc.seed, "init");
            let mut model = ToyClassifier::new(id.inputs[0].len(), &tc.hidden, classes, &init)?;
            let history = train(&mut model, &id, &otis, test.as_ref(), &tc)?;
            write_json(&a.out, &model)?;
            if let Some(h) = &a.history {
                write_bytes(h, history_csv(&history).as_bytes())?;
            }
            Ok(())
        }
        Command::Evaluate(a) => {
            init_threads(cli.threads)?;
            let model: ToyClassifier = read_json(&a.model)?;
            model.validate()?;
            let id = read_labeled(&a.id, &a.id_labels)?;
            let ood = read_rows(&a.ood)?;
            let conf = evaluate(&model, &id, &ood)?;
            write_json(&a.out, &conf.summarize_with(a.bins)?)?;
            if let Some(h) = &a.hist {
                write_bytes(h, report_histogram(&conf, a.bins)?.as_bytes())?;
            }
            Ok(())
        }
        Command::Run(a) => {
            let mut cfg = load_config(Some(&a.config), &cli)?;
            if let Some(dir) = &a.out_dir {
                cfg.output_dir = dir.clone();
            }
            init_threads(Some(cfg.threads))?;
            let report = run_pipeline(&cfg)?;
            info!(
                "ood_mmc {:.4} id_accuracy {:.4} converged {}",
                report.metrics.ood_mmc, report.metrics.id_accuracy, report.converged
            );
            Ok(())
        }
        Command::Sweep(a) => {
            let mut cfg = load_config(Some(&a.config), &cli)?;
            if let Some(r) = &a.rhos {
                cfg.sweep.rhos = r.clone();
            }
            if let Some(m) = &a.modes {
                cfg.sweep.modes = m.clone();
            }
            cfg.validate()?;
            init_threads(Some(cfg.threads))?;
            let rows = ablation_sweep(&cfg, &cfg.sweep.rhos, &cfg.sweep.modes)?;
            write_bytes(&a.out, sweep_csv(&rows).as_bytes())
        }
    }
}
