use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "star", version, about = "Session-based, time-aware next-item recommender")]
struct Cli {
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter and split a raw click log.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        /// Output directory for train.tsv, test.tsv, vocab.tsv and run.conf.
        #[arg(long)]
        out: PathBuf,
        /// Write rejected input lines here.
        #[arg(long)]
        rejects: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fit initial item embeddings on time-split sub-sessions.
    Pretrain {
        /// Directory written by `preprocess`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the model; writes final.ckpt, best.ckpt and train_log.tsv.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Embedding checkpoint written by `pretrain`.
        #[arg(long, required_unless_present = "resume")]
        init: Option<PathBuf>,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Recall@k and MRR@k of a checkpoint and the baselines on test.tsv.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Also write the report table here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Read `item [timestamp]` lines from stdin and print the top-k items.
    Recommend {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
    },
    /// Write a synthetic raw click log in the `canonical` layout.
    Synth {
        #[arg(long, default_value = "timed")]
        kind: String,
        #[arg(long, default_value_t = 300)]
        items: usize,
        #[arg(long, default_value_t = 5000)]
        sessions: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Settings shared by the pipeline commands. Precedence: flags, then
/// `--config`, then the data directory's run.conf, then defaults.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    fraction: Option<String>,
    #[arg(long)]
    theta_multiplier: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    decay_step: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_self_attention: bool,
    #[arg(long)]
    no_time_attention: bool,
    #[arg(long)]
    loss: Option<String>,
    /// Sequential GloVe updates (bit-reproducible pretraining).
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    glove_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    precision: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
