//! `ldb`: prepare data, train both stages, backmap CG structures and score
//! the results.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ldb_core::pipeline::{self, BackmapOptions, PipelineError};

#[derive(Debug, Parser)]
#[command(name = "ldb", version, about = "Latent diffusion backmapping of Cα traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter a dataset manifest and cache structures, CG traces and internal coordinates.
    Prepare {
        #[arg(long)]
        manifest: PathBuf,
        /// Filter rules (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train or resume the VQ-VAE.
    TrainVqvae {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train or resume the latent denoiser on a frozen VQ-VAE.
    TrainDiffusion {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        vqvae: PathBuf,
    },
    /// Sample all-atom structures for a CG PDB file or a directory of them.
    Backmap {
        #[arg(long)]
        cg: PathBuf,
        #[arg(long)]
        vqvae: PathBuf,
        #[arg(long)]
        diffusion: PathBuf,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Decode the sampled codes as-is instead of snapping them to the codebook.
        #[arg(long)]
        no_snap: bool,
    },
    /// Score generated structures against references.
    Evaluate {
        #[arg(long = "gen")]
        generated: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// JSON report path; a text table is written alongside with a `.txt` extension.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> Result<ExitCode, PipelineError> {
    match command {
        Command::Prepare { manifest, config, out } => {
            let summary = pipeline::prepare(&manifest, config.as_deref(), &out)?;
            println!("accepted {} rejected {}", summary.accepted, summary.rejected);
        }
        Command::TrainVqvae { config } => {
            let ckpt = pipeline::train_vqvae(&config)?;
            println!("{}", ckpt.display());
        }
        Command::TrainDiffusion { config, vqvae } => {
            let ckpt = pipeline::train_diffusion(&config, &vqvae)?;
            println!("{}", ckpt.display());
        }
        Command::Backmap {
            cg,
            vqvae,
            diffusion,
            samples,
            steps,
            seed,
            out,
            no_snap,
        } => {
            let options = BackmapOptions {
                samples,
                steps,
                seed,
                snap: !no_snap,
            };
            let summary = pipeline::backmap(&cg, &vqvae, &diffusion, options, &out)?;
            println!("wrote {} structures", summary.written.len());
            if !summary.failures.is_empty() {
                for f in &summary.failures {
                    eprintln!("{} sample {}: {}", f.input.display(), f.sample, f.error);
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::Evaluate {
            generated,
            reference,
            out,
        } => {
            let report = pipeline::evaluate(&generated, &reference, &out)?;
            print!("{}", report.to_table());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LDB_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
