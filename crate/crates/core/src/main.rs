use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lightplan::config::{parse_scene, ExperimentConfig, SEED_ENV};
use lightplan::dataset::{common_bins, dedup_indices, BinnedSample};
use lightplan::experiment::{run_experiment, train_fixed_net, ExperimentReport};
use lightplan::io::{load_datasets, read_lights, save_dataset};
use lightplan::lightspace::{assign_lights, make_grid, GridShape, LightBinGrid};
use lightplan::normalnet::{NetShape, NormalNetParams};
use lightplan::planner::{
    plan_exhaustive, plan_kmeans, plan_orthogonal_triplet, plan_random, Method, PlanResult,
    RandomOptions, DEFAULT_MIN_SEPARATION_DEG,
};
use lightplan::psolve::{evaluate_configuration, Backend};
use lightplan::render::render_dataset;
use lightplan::report::{mae_vs_m_svg, rows_csv, summarize};
use lightplan::selector::{LearnedConfig, DEFAULT_BETA};
use lightplan::tensor::DEFAULT_LEARNING_RATE;
use lightplan::trainer::{evolution_report, fit, TrainConfig};

#[derive(Parser)]
#[command(name = "lightplan", version, about = "Choose light directions for photometric stereo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset directory from a scene file and lights.
    Render {
        /// Scene description (key = value lines).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        lights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign lights to grid bins and write the pairing as CSV.
    Assign {
        #[arg(long)]
        lights: PathBuf,
        #[arg(long, default_value_t = 8)]
        k_az: usize,
        #[arg(long, default_value_t = 6)]
        k_el: usize,
        /// Allow one light to fill several bins.
        #[arg(long)]
        reuse_lights: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a light configuration jointly with a normal network.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        train: TrainArgs,
        /// Learned configuration JSON; the evolution CSV and network files
        /// are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan a configuration with one method and score it.
    Plan {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MIN_SEPARATION_DEG)]
        min_sep: f64,
        #[arg(long, value_enum, default_value_t = BackendArg::Ls)]
        backend: BackendArg,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a learned configuration on a dataset.
    Eval {
        #[arg(long)]
        dataset_dir: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = BackendArg::Ls)]
        backend: BackendArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge plan results into a table and an MAE-versus-M plot.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run a full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    dataset_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    k_az: usize,
    #[arg(long, default_value_t = 6)]
    k_el: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1024)]
    pixels_per_scene: usize,
    #[arg(long, default_value_t = 16)]
    steps_per_epoch: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
}

impl TrainArgs {
    fn config(&self, m: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            m,
            epochs: self.epochs,
            batch_size: self.batch_size,
            pixels_per_scene: self.pixels_per_scene,
            steps_per_epoch: self.steps_per_epoch,
            lr: self.lr,
            beta: self.beta,
            seed,
            net: NetShape {
                width: self.width,
                ..NetShape::default()
            },
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Random,
    Kmeans,
    Ortho3,
    Exhaustive,
    Learned,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Random => Method::Random,
            MethodArg::Kmeans => Method::Kmeans,
            MethodArg::Ortho3 => Method::Ortho3,
            MethodArg::Exhaustive => Method::Exhaustive,
            MethodArg::Learned => Method::Learned,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BackendArg {
    Ls,
    Net,
}

fn seed_override(seed: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={v:?} is not an integer")),
        Err(_) => Ok(seed),
    }
}

fn load_binned(dir: &Path, grid: &LightBinGrid) -> Result<Vec<BinnedSample>> {
    let samples = load_datasets(dir).with_context(|| format!("loading {}", dir.display()))?;
    Ok(samples
        .into_iter()
        .map(|s| BinnedSample::new(s, grid))
        .collect::<lightplan::Result<_>>()?)
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

#[derive(serde::Serialize)]
struct EvalReport {
    mae_deg: f64,
    n_pixels: usize,
    n_degenerate: usize,
    bin_indices: Vec<usize>,
}

fn evaluate_all(samples: &[BinnedSample], bins: &[usize], backend: Backend<'_>) -> Result<EvalReport> {
    if samples.is_empty() {
        bail!("no samples to evaluate");
    }
    let mut total = 0.0;
    let mut n_pixels = 0;
    let mut n_degenerate = 0;
    let mut bin_indices = Vec::new();
    for s in samples {
        let e = evaluate_configuration(s, bins, backend)?;
        total += e.mae_deg;
        n_pixels += e.n_pixels;
        n_degenerate += e.n_degenerate;
        bin_indices = e.bin_indices;
    }
    Ok(EvalReport {
        mae_deg: total / samples.len() as f64,
        n_pixels,
        n_degenerate,
        bin_indices,
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Render { config, lights, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let spec = parse_scene(&text)?;
            let lights = read_lights(&lights)?;
            let sample = render_dataset(&spec, &lights)?;
            save_dataset(&out, &sample)?;
            println!("wrote {} images to {}", sample.images.len(), out.display());
        }
        Command::Assign {
            lights,
            k_az,
            k_el,
            reuse_lights,
            out,
        } => {
            let grid = make_grid(k_az, k_el)?;
            let lights = read_lights(&lights)?;
            let a = assign_lights(&grid, &lights, !reuse_lights)?;
            fs::write(&out, a.to_csv())?;
            if a.n_unassigned() > 0 {
                eprintln!("{} of {} bins left unassigned", a.n_unassigned(), grid.len());
            }
        }
        Command::Train {
            data,
            m,
            seed,
            train,
            out,
        } => {
            let grid = make_grid(data.k_az, data.k_el)?;
            let samples = load_binned(&data.dataset_dir, &grid)?;
            let seed = seed_override(seed)?;
            let cfg = train.config(m, seed);
            let outcome = fit(&samples, &cfg)?;
            let hardened = outcome.hardened();
            if !hardened.duplicates.is_empty() {
                eprintln!("warning: columns share a bin: {:?}", hardened.duplicates);
            }
            let learned = LearnedConfig {
                K: grid.len(),
                M: m,
                beta: cfg.beta,
                bin_indices: hardened.indices.clone(),
                grid: GridShape {
                    n_azimuth: data.k_az,
                    n_elevation: data.k_el,
                },
            };
            write_json(&out, &learned)?;
            fs::write(sibling(&out, "evolution.csv"), evolution_report(&outcome.checkpoints))?;
            outcome.net.save(&sibling(&out, "net.bin"), &sibling(&out, "net.json"))?;
            println!("bins {:?}", hardened.indices);
        }
        Command::Plan {
            method,
            data,
            m,
            seed,
            min_sep,
            backend,
            train,
            out,
        } => {
            let grid = make_grid(data.k_az, data.k_el)?;
            let samples = load_binned(&data.dataset_dir, &grid)?;
            let seed = seed_override(seed)?;
            let method = Method::from(method);
            let start = Instant::now();
            let mut net = None;
            let bins = match method {
                Method::Random => plan_random(
                    &grid,
                    m,
                    RandomOptions {
                        min_separation_deg: min_sep,
                        elevation_limit_deg: None,
                    },
                    seed,
                )?,
                Method::Kmeans => {
                    let active = common_bins(&samples)?;
                    let lights = active
                        .iter()
                        .map(|&b| Ok(samples[0].input(b)?.1))
                        .collect::<lightplan::Result<Vec<_>>>()?;
                    plan_kmeans(&grid, &lights, m, seed)?
                }
                Method::Ortho3 => {
                    if m != 3 {
                        bail!("ortho3 plans exactly 3 lights");
                    }
                    plan_orthogonal_triplet(&grid)?
                }
                Method::Exhaustive => {
                    if backend == BackendArg::Net {
                        bail!("the exhaustive planner only runs with the ls backend");
                    }
                    plan_exhaustive(&samples, m, Backend::LeastSquares)?.best
                }
                Method::Learned => {
                    let outcome = fit(&samples, &train.config(m, seed))?;
                    net = Some(outcome.net.clone());
                    outcome.hardened().distinct()
                }
            };
            let net = match (backend, net) {
                (BackendArg::Net, Some(n)) => Some(n),
                (BackendArg::Net, None) => Some(train_fixed_net(&samples, &bins, &train.config(m, seed))?),
                (BackendArg::Ls, _) => None,
            };
            let be = match &net {
                Some(n) => Backend::Net(n),
                None => Backend::LeastSquares,
            };
            let eval = evaluate_all(&samples, &bins, be)?;
            let result = PlanResult {
                method: method.name().to_string(),
                m,
                seed,
                bin_indices: dedup_indices(&bins),
                mae_deg: eval.mae_deg,
                wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            write_json(&out, &result)?;
            println!("{} M={m}: bins {:?}, MAE {:.3} deg", method, result.bin_indices, result.mae_deg);
        }
        Command::Eval {
            dataset_dir,
            config,
            backend,
            out,
        } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let learned: LearnedConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
            let grid = LightBinGrid::from_shape(learned.grid)?;
            let samples = load_binned(&dataset_dir, &grid)?;
            let report = match backend {
                BackendArg::Ls => evaluate_all(&samples, &learned.bin_indices, Backend::LeastSquares)?,
                BackendArg::Net => {
                    let net = NormalNetParams::load(&sibling(&config, "net.bin"), &sibling(&config, "net.json"))?;
                    evaluate_all(&samples, &learned.bin_indices, Backend::Net(&net))?
                }
            };
            write_json(&out, &report)?;
            println!("MAE {:.3} deg over {} pixels", report.mae_deg, report.n_pixels);
        }
        Command::Report { inputs, out_dir } => {
            let mut rows = Vec::new();
            for path in &inputs {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                // accept single results, arrays of results, or experiment reports
                let found: Vec<PlanResult> = if value.get("rows").is_some() {
                    serde_json::from_value(value["rows"].clone())?
                } else if value.is_array() {
                    serde_json::from_value(value)?
                } else {
                    vec![serde_json::from_value(value)?]
                };
                rows.extend(found);
            }
            fs::create_dir_all(&out_dir)?;
            let summary = summarize(&rows);
            fs::write(out_dir.join("tables.csv"), rows_csv(&rows))?;
            fs::write(out_dir.join("summary.csv"), lightplan::report::summary_csv(&summary))?;
            fs::write(out_dir.join("mae_vs_m.svg"), mae_vs_m_svg(&summary))?;
            println!("merged {} rows", rows.len());
        }
        Command::Run { config, out_dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = out_dir {
                cfg.output_dir = dir;
            }
            let (report, artifacts): (ExperimentReport, _) = run_experiment(&cfg)?;
            for f in &report.failures {
                eprintln!("failed: {} M={} seed={}: {}", f.method, f.m, f.seed, f.error);
            }
            println!("wrote {}", artifacts.report_json.display());
            if !report.complete(&cfg) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
