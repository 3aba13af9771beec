use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use maskbench::dataset::{self, DatasetManifest};
use maskbench::masking::{self, BlockShape, MaskSpec, Pattern, Strategy};
use maskbench::metrics::MetricSpace;
use maskbench::runner::{self, DatasetSpec, ExecOptions, ExperimentConfig, PanelPreset, PanelSelection};
use maskbench::synth::{self, CohortConfig, Trajectory};

#[derive(Parser)]
#[command(name = "maskbench", version, about = "Masking-aware evaluation of time-series imputers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort as a dataset directory.
    Generate(GenerateArgs),
    /// Draw an artificial mask for a dataset directory.
    Mask(MaskArgs),
    /// Run the experiment grid.
    Run(RunArgs),
    /// Rebuild reports from the run directories of an earlier `run`.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output dataset directory.
    #[arg(long)]
    out_dir: PathBuf,
    /// TOML file with cohort settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    n_features: Option<usize>,
    #[arg(long, value_enum)]
    trajectory: Option<TrajectoryArg>,
    #[arg(long)]
    prevalence: Option<f64>,
    /// Generate a fully observed cohort.
    #[arg(long)]
    no_missingness: bool,
    /// Also write the complete values as truth.csv.
    #[arg(long)]
    with_truth: bool,
}

#[derive(Args)]
struct MaskArgs {
    /// Dataset directory to mask.
    #[arg(long)]
    data: PathBuf,
    /// Where the mask files go.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = PatternArg::Random)]
    pattern: PatternArg,
    #[arg(long, value_enum, default_value_t = StrategyArg::Augmentation)]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 0.2)]
    rate: f64,
    /// Block height in steps (block pattern only).
    #[arg(long)]
    block_steps: Option<usize>,
    /// Block width in features (block pattern only).
    #[arg(long)]
    block_features: Option<usize>,
    /// Draw the union of one epoch's mini-batch masks instead of one
    /// whole-dataset mask.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    epoch: u64,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; replaces the config's dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directories and reports go here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated mask seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    k_folds: Option<usize>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    rate: Option<f64>,
    /// Use the six published panels instead of the full product.
    #[arg(long)]
    published_panels: bool,
    #[arg(long, value_enum)]
    metric_space: Option<SpaceArg>,
    /// Train and score the downstream classifier.
    #[arg(long)]
    downstream: bool,
    #[arg(long)]
    max_subprocesses: Option<usize>,
    #[arg(long)]
    save_imputed: bool,
    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of an earlier run.
    #[arg(long)]
    out_dir: PathBuf,
    /// Print one format to stdout instead of rewriting the report files.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrajectoryArg {
    Gaussian,
    Ar1,
    Deterioration,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Random,
    Temporal,
    Spatial,
    Block,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Augmentation,
    Overlay,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    Normalized,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Markdown,
}

impl From<TrajectoryArg> for Trajectory {
    fn from(t: TrajectoryArg) -> Self {
        match t {
            TrajectoryArg::Gaussian => Trajectory::StationaryGaussian,
            TrajectoryArg::Ar1 => Trajectory::Ar1,
            TrajectoryArg::Deterioration => Trajectory::Deterioration,
        }
    }
}

impl From<PatternArg> for Pattern {
    fn from(p: PatternArg) -> Self {
        match p {
            PatternArg::Random => Pattern::Random,
            PatternArg::Temporal => Pattern::Temporal,
            PatternArg::Spatial => Pattern::Spatial,
            PatternArg::Block => Pattern::Block,
        }
    }
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Augmentation => Strategy::Augmentation,
            StrategyArg::Overlay => Strategy::Overlay,
        }
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<CohortConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => CohortConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.n_samples {
        config.n_samples = v;
    }
    if let Some(v) = args.n_steps {
        config.n_steps = v;
    }
    if let Some(v) = args.n_features {
        config.n_features = v;
    }
    if let Some(v) = args.trajectory {
        config.trajectory = v.into();
    }
    if let Some(v) = args.prevalence {
        config.prevalence = v;
    }
    if args.no_missingness {
        config.missingness = false;
    }
    let cohort = synth::build_cohort(&config)?;
    let observed = cohort.observed_tensor()?;
    let manifest = DatasetManifest::describe(
        &observed,
        format!("synthetic {:?} cohort, seed {}", config.trajectory, config.seed),
        config.seed,
    );
    dataset::export_dataset(&args.out_dir, &observed, &cohort.labels, &manifest)?;
    if args.with_truth {
        dataset::write_values_csv(&args.out_dir.join("truth.csv"), &cohort.truth)?;
    }
    let shape = observed.shape();
    println!(
        "wrote {} samples x {} steps x {} features ({} positive, {:.1}% observed) to {}",
        shape.samples,
        shape.steps,
        shape.features,
        cohort.labels.positives(),
        100.0 * observed.observed().count() as f64 / shape.len() as f64,
        args.out_dir.display()
    );
    Ok(())
}

fn mask(args: MaskArgs) -> Result<()> {
    let (tensor, _, _) = dataset::load_dataset(&args.data)?;
    let block_shape = match (args.block_steps, args.block_features) {
        (None, None) => None,
        (steps, features) => Some(BlockShape {
            steps: steps.unwrap_or(1),
            features: features.unwrap_or(1),
        }),
    };
    let spec = MaskSpec {
        pattern: args.pattern.into(),
        strategy: args.strategy.into(),
        rate: args.rate,
        block_shape,
        seed: args.seed,
    };
    let maskset = match args.batch_size {
        None => masking::generate_mask(&spec, tensor.observed())?,
        Some(b) => masking::epoch_union(&spec, tensor.observed(), args.epoch, b)?,
    };
    masking::write_maskset(&args.out_dir, &tensor, &maskset)?;
    println!(
        "masked {} of {} observed cells ({} scored) into {}",
        maskset.artificial.count(),
        tensor.observed().count(),
        maskset.evaluation.count(),
        args.out_dir.display()
    );
    Ok(())
}

fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if args.data.is_some() => ExperimentConfig::from_toml_str("[dataset]\npath = \".\"\n")?,
        None => bail!("run needs --config or --data"),
    };
    if let Some(data) = &args.data {
        config.dataset = DatasetSpec {
            path: Some(data.clone()),
            cohort: None,
        };
    }
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    if let Some(seeds) = &args.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(k) = args.k_folds {
        config.k_folds = k;
    }
    if let Some(s) = args.split_seed {
        config.split_seed = s;
    }
    if let Some(r) = args.rate {
        config.mask.rate = r;
    }
    if args.published_panels {
        config.panels = Some(PanelSelection::Preset(PanelPreset::Published));
    }
    if let Some(space) = args.metric_space {
        config.metric_space = match space {
            SpaceArg::Normalized => MetricSpace::Normalized,
            SpaceArg::Raw => MetricSpace::Raw,
        };
    }
    if args.downstream {
        config.downstream.enabled = true;
    }
    if let Some(n) = args.max_subprocesses {
        config.max_subprocesses = n;
    }
    if args.save_imputed {
        config.save_imputed = true;
    }
    config.validate()?;
    Ok(config)
}

/// Exit code 2 when some cell had a failed seed.
fn run(args: RunArgs) -> Result<ExitCode> {
    let config = resolve_config(&args)?;
    if args.dry_run {
        print!("{}", config.to_toml_string()?);
        return Ok(ExitCode::SUCCESS);
    }
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("config.toml"), config.to_toml_string()?)
            .with_context(|| format!("writing config into {}", dir.display()))?;
    }
    let results = runner::execute(
        &config,
        &ExecOptions {
            jobs: args.jobs,
            out_dir: args.out_dir.clone(),
        },
    )?;
    print!("{}", runner::render_markdown(&results));
    if let Some(dir) = &args.out_dir {
        log::info!("reports written to {}", dir.display());
    }
    Ok(exit_code(&results))
}

fn exit_code(results: &[runner::RunResult]) -> ExitCode {
    if results.iter().any(runner::RunResult::failed) {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn report(args: ReportArgs) -> Result<ExitCode> {
    let results = runner::load_results(&args.out_dir)?;
    match args.format {
        Some(FormatArg::Csv) => print!("{}", runner::render_csv(&results)?),
        Some(FormatArg::Markdown) => print!("{}", runner::render_markdown(&results)),
        None => {
            runner::write_reports(&args.out_dir, &results)?;
            for name in [runner::REPORT_CSV, runner::REPORT_MD] {
                println!("{}", args.out_dir.join(name).display());
            }
        }
    }
    Ok(exit_code(&results))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(a) => generate(a).map(|()| ExitCode::SUCCESS),
        Command::Mask(a) => mask(a).map(|()| ExitCode::SUCCESS),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
