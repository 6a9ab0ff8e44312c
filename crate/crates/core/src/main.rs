use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use latentwalk::editing;
use latentwalk::latent::{latent_for_seed, DEFAULT_PSI};
use latentwalk::pipeline::{split_assignment, Pipeline, PipelineConfig, Stage};
use latentwalk::scenegen::{self, GeneratorConstants};
use latentwalk::semantics::LatentSource;
use latentwalk::service::{self, ServiceState};
use latentwalk::store;
use latentwalk::world::Dimension;
use latentwalk::Error;

#[derive(Parser)]
#[command(name = "latentwalk", version, about = "Semantic latent-space editing of synthetic street scenes")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set semantics.svm.c=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Override a seed, e.g. `--seed-override split=12`.
    #[arg(long = "seed-override", value_name = "NAME=VALUE", global = true)]
    seed_override: Vec<String>,
    /// Output directory (same as `--set output_dir=...`).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Verbose logging.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridKind {
    Single,
    Multi,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generator constants and planted ground truth.
    GenWorld,
    /// Sample, render and rank the image dataset.
    GenDataset,
    /// Fit the curation classifier and write the filtered dataset.
    Curate,
    /// Invert the held-out subset with every configured method.
    Invert,
    /// Fit one boundary per dimension for each latent source.
    Fit,
    /// Condition the fitted boundaries against each other.
    Orthogonalize,
    /// Validation metrics of the fitted boundaries.
    Evaluate,
    /// Reconstruction and downstream metrics per inversion method.
    CompareInversions,
    /// Render the single-image and multi-image grids.
    Grid {
        #[arg(long, value_enum, default_value = "both")]
        kind: GridKind,
    },
    /// Walk one base latent along one dimension.
    Walk {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        dimension: Dimension,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        alpha_max: Option<f64>,
        /// Destination directory (default `<output>/walks/<dim>_seed<seed>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summary report and metrics table.
    Report,
    /// Run every stage in order.
    Pipeline,
    /// Serve the synthesis API.
    Serve {
        #[arg(long)]
        artifacts: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, default_value = "hidden-true")]
        source: LatentSource,
    },
    /// Render the base scene for one seed.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_PSI)]
        psi: f64,
        #[arg(long)]
        out: PathBuf,
        /// Read generator constants from this artifact directory.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Print the resolved configuration as TOML.
    Config,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_config(g: &GlobalOpts) -> Result<PipelineConfig, Failure> {
    let mut overrides = Vec::new();
    for s in &g.set {
        let (k, v) = split_assignment(s).map_err(|e| Failure::Usage(e.to_string()))?;
        overrides.push((k.to_string(), v.to_string()));
    }
    for s in &g.seed_override {
        let (k, v) = split_assignment(s).map_err(|e| Failure::Usage(e.to_string()))?;
        overrides.push((format!("seeds.{k}"), v.to_string()));
    }
    if let Some(out) = &g.output {
        overrides.push(("output_dir".into(), format!("{:?}", out.to_string_lossy())));
    }
    let cfg = match &g.config {
        Some(path) => PipelineConfig::load(path, &overrides),
        None => PipelineConfig::from_toml_with("", &overrides),
    };
    cfg.map_err(|e| Failure::Usage(e.to_string()))
}

fn generator_from(dir: &std::path::Path) -> latentwalk::Result<GeneratorConstants> {
    for candidate in [dir.join("world/generator.json"), dir.join("generator.json")] {
        if candidate.exists() {
            let c: GeneratorConstants = store::read_json(&candidate)?;
            c.validate()?;
            return Ok(c);
        }
    }
    Err(Error::NotFound {
        what: "generator constants",
        path: dir.join("generator.json"),
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.global)?;
    let pipeline = Pipeline::new(cfg);
    let stage = |s: Stage| pipeline.run(s).map(|_| ()).map_err(Failure::from);
    match cli.command {
        Command::GenWorld => stage(Stage::GenWorld),
        Command::GenDataset => stage(Stage::GenDataset),
        Command::Curate => stage(Stage::Curate),
        Command::Invert => stage(Stage::Invert),
        Command::Fit => stage(Stage::Fit),
        Command::Orthogonalize => stage(Stage::Orthogonalize),
        Command::Evaluate => stage(Stage::Evaluate),
        Command::CompareInversions => {
            stage(Stage::CompareInversions)?;
            let text = std::fs::read_to_string(pipeline.layout.comparison().join("report.txt"))
                .map_err(|e| Failure::Runtime(Error::io(pipeline.layout.comparison(), e)))?;
            print!("{text}");
            Ok(())
        }
        Command::Grid { kind } => match kind {
            GridKind::Both => stage(Stage::Grid),
            GridKind::Single | GridKind::Multi => {
                let c = &pipeline.config;
                let constants = generator_from(&pipeline.layout.root)?;
                let boundaries = pipeline.load_conditioned(c.edit_source()?)?;
                let zs = pipeline.grid_latents()?;
                let (grid, name) = if matches!(kind, GridKind::Single) {
                    let spec = c.walk_spec(c.grid.single_rows.clone());
                    (editing::render_matrix_single_image(&zs[0], &boundaries, &spec, &constants)?, "image1")
                } else {
                    let spec = c.walk_spec(vec![c.grid.multi_dimension]);
                    (
                        editing::render_matrix_multi_image(&zs[1..], c.grid.multi_dimension, &boundaries, &spec, &constants)?,
                        "image2",
                    )
                };
                editing::write_grid(&grid, &pipeline.layout.grids().join(name))?;
                Ok(())
            }
        },
        Command::Walk {
            seed,
            dimension,
            steps,
            alpha_max,
            out,
        } => {
            let c = &pipeline.config;
            let constants = generator_from(&pipeline.layout.root)?;
            let boundaries = pipeline.load_conditioned(c.edit_source()?)?;
            let mut spec = c.walk_spec(vec![dimension]);
            spec.steps = steps.unwrap_or(spec.steps);
            spec.alpha_max = alpha_max.unwrap_or(spec.alpha_max);
            spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let z = latent_for_seed(seed, c.psi, c.dim)?;
            let grid = editing::render_matrix_multi_image(&[z], dimension, &boundaries, &spec, &constants)?;
            let dir = out.unwrap_or_else(|| {
                pipeline
                    .layout
                    .root
                    .join("walks")
                    .join(format!("{dimension}_seed{seed}"))
            });
            editing::write_grid(&grid, &dir)?;
            println!("{}", dir.join("grid.png").display());
            Ok(())
        }
        Command::Report => {
            stage(Stage::Report)?;
            let text = std::fs::read_to_string(pipeline.layout.report().join("summary.txt"))
                .map_err(|e| Failure::Runtime(Error::io(pipeline.layout.report(), e)))?;
            print!("{text}");
            Ok(())
        }
        Command::Pipeline => pipeline.run_all().map_err(Failure::from),
        Command::Serve {
            artifacts,
            bind,
            source,
        } => {
            let state = ServiceState::load(&artifacts, source)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(Error::io("tokio runtime", e)))?;
            rt.block_on(service::serve(state, bind))?;
            Ok(())
        }
        Command::Generate {
            seed,
            psi,
            out,
            artifacts,
        } => {
            if !(0.0..=1.0).contains(&psi) {
                return Err(Failure::Usage(format!("psi {psi} outside [0, 1]")));
            }
            let constants = match artifacts {
                Some(dir) => generator_from(&dir)?,
                None => GeneratorConstants::from_seed(pipeline.config.seeds.generator, pipeline.config.dim)?,
            };
            let z = latent_for_seed(seed, psi, constants.dim)?;
            let image = scenegen::generate(&z, &constants)?;
            store::write_bytes(&out, &image.to_png()?)?;
            Ok(())
        }
        Command::Config => {
            print!("{}", pipeline.config.to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.global.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
