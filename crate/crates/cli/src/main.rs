use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use recon_core::gradcheck::SuiteOptions;
use recon_cli::commands::{cmd_fit_dataset, cmd_gradcheck, cmd_make_synthetic, cmd_recon, cmd_render_sweep, cmd_swap};
use recon_cli::{CliError, RunConfig};

/// Single-image textured mesh reconstruction by analysis-by-synthesis.
#[derive(Debug, Parser)]
#[command(name = "recon3d", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct ConfigArgs {
    /// flat `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` config overrides, applied after the file
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let c = RunConfig::resolve(self.config.as_deref(), &self.overrides)?;
        log::info!("effective config:\n{}", c.to_text());
        Ok(c)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reconstruct one image/mask pair
    Recon {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// prototype OBJ (e.g. from fit-dataset); default is the config's ellipsoid
        #[arg(long)]
        prototype: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Alternate per-image reconstruction with prototype updates over a directory
    /// of `<id>.png` + `<id>_mask.png` pairs
    FitDataset {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Re-render a reconstruction while sweeping one camera attribute
    RenderSweep {
        /// recon.json written by `recon` or `fit-dataset`
        #[arg(long)]
        recon: PathBuf,
        /// distance, azimuth, elevation, offset_x or offset_y
        #[arg(long)]
        attribute: String,
        /// `start:end:step` or a comma-separated list
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render shape of one reconstruction with the texture of another and vice versa
    Swap {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable component
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// random points per primitive op
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
    /// Write a synthetic multi-view dataset of one deformed ellipsoid
    MakeSynthetic {
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let written = match cli.command {
        Command::Recon {
            image,
            mask,
            prototype,
            config,
        } => cmd_recon(&image, &mask, prototype.as_deref(), &config.resolve()?)?,
        Command::FitDataset { data, config } => cmd_fit_dataset(&data, &config.resolve()?)?,
        Command::RenderSweep {
            recon,
            attribute,
            values,
            out,
        } => cmd_render_sweep(&recon, &attribute, &values, &out)?,
        Command::Swap { a, b, out } => cmd_swap(&a, &b, &out)?,
        Command::Gradcheck { seed, points } => {
            cmd_gradcheck(&SuiteOptions {
                seed,
                points,
                broken_fixture: false,
            })?;
            Vec::new()
        }
        Command::MakeSynthetic { count, config } => cmd_make_synthetic(count, &config.resolve()?)?,
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
