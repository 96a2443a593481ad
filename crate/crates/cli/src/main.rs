//! `relsr`: dataset generation, training, evaluation, disentanglement
//! analysis, gradient checking and single-image synthesis for the toy
//! relation-reasoned super-resolution stack.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use relsr::commands;

#[derive(Parser)]
#[command(name = "relsr", version, about = "Relation-reasoned latent codes for toy GAN-prior super-resolution")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic attribute-labelled dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train (or resume) on a generated dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean PSNR over the held-out split, next to the box-upsample baseline.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// DCI scores of the disentangled latents against the true attributes.
    Dci {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Latent-correlation CSV blocks (both spaces) over a dimension window.
    Corr {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// 1-based inclusive row range, e.g. 16:20.
        #[arg(long)]
        rows: String,
        /// 1-based inclusive column range, e.g. 1:15.
        #[arg(long)]
        cols: String,
    },
    /// Verify analytic gradients against central differences per module.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Super-resolve one LR image from a checkpoint.
    Synth {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        lr: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::GenData { config, out } => commands::gen_data(&config, &out),
        Cmd::Train { config, data, out } => commands::train(&config, &data, &out),
        Cmd::Eval { ckpt, data } => commands::eval(&ckpt, &data),
        Cmd::Dci { ckpt, data } => commands::dci(&ckpt, &data),
        Cmd::Corr { ckpt, data, rows, cols } => commands::corr(&ckpt, &data, &rows, &cols),
        Cmd::Gradcheck { config } => commands::gradcheck_cmd(&config),
        Cmd::Synth { ckpt, lr, out } => commands::synth(&ckpt, &lr, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
