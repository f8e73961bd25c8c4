//! `phonetrait` command-line pipeline.
//!
//! Typical run:
//!
//! ```text
//! phonetrait --out-dir run/corpus gen-corpus
//! phonetrait --out-dir run/model train --corpus run/corpus/train
//! phonetrait --out-dir run/scores score --checkpoint run/model/ckpt_epoch50.json \
//!     --corpus run/corpus/eval --trials run/corpus/trials.txt
//! phonetrait --out-dir run/report eval --scores run/scores/scores.tsv
//! ```

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "phonetrait", version, about = "Phonetic-trait speaker verification pipeline")]
pub struct Cli {
    /// key=value config file; command-line flags override it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Global seed for corpus generation, initialization, sampling and F-ratio draws [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for all outputs of the command (created if missing)
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out_dir: PathBuf,

    /// Override any config key, e.g. --set train.epochs=10 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus: train/ and eval/ speaker splits plus trial lists
    GenCorpus(GenCorpusArgs),
    /// Train a model and write ckpt_epochN.json checkpoints and loss_log.csv
    Train(TrainArgs),
    /// Score a trial list into scores.tsv (final, evidence and per-phone similarities)
    Score(ScoreArgs),
    /// Compute EER, minDCF and the final/evidence correlation from a score file
    Eval(EvalArgs),
    /// Per-phone F-ratio of within- to between-speaker trait similarity
    Fratio(FratioArgs),
    /// Export the per-phone explanation of one scored trial
    Explain(ExplainArgs),
    /// Compare analytic gradients with central finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Training speakers [default: 20]
    #[arg(long)]
    pub n_speakers: Option<usize>,
    /// Utterances per speaker [default: 10]
    #[arg(long)]
    pub utts_per_speaker: Option<usize>,
    /// Held-out speakers for evaluation trials [default: 20]
    #[arg(long)]
    pub eval_speakers: Option<usize>,
    /// Acoustic feature dimension F [default: 12]
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Per-dimension frame noise standard deviation [default: 0.45]
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Target trials in trials.txt [default: 250]
    #[arg(long)]
    pub n_target: Option<usize>,
    /// Non-target trials in trials.txt [default: 250]
    #[arg(long)]
    pub n_nontarget: Option<usize>,
    /// Trials per class in fratio_trials.txt [default: 6000]
    #[arg(long)]
    pub fratio_trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory (inventory.txt, features.txt, alignments.txt)
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// Speakers per minibatch K [default: 8]
    #[arg(long)]
    pub k: Option<usize>,
    /// Training epochs [default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SGD learning rate [default: 0.05]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// SGD momentum [default: 0.9]
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Matched-pair weight alpha of the trait verification loss [default: 0.0007]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Unmatched-pair weight beta of the trait verification loss [default: 0.00001]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Weight gamma of the trait center loss [default: 0.0001]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// AAM-softmax angular margin [default: 0.2]
    #[arg(long)]
    pub aam_margin: Option<f64>,
    /// AAM-softmax scale [default: 30]
    #[arg(long)]
    pub aam_scale: Option<f64>,
    /// Encoder layers as offsets:dim:activation joined by ';' [default: -1,0,1:32:relu;0:16:identity]
    #[arg(long, allow_hyphen_values = true)]
    pub encoder_layers: Option<String>,
    /// Speaker embedding dimension [default: 16]
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Write a checkpoint every N epochs; the last epoch is always written [default: 10]
    #[arg(long, default_value_t = 10)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Checkpoint written by `train`
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Corpus directory holding every utterance named in the trial list
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// Trial list: `1|0<TAB>enroll<TAB>test` per line
    #[arg(long, value_name = "FILE")]
    pub trials: PathBuf,
    /// Output file name inside --out-dir [default: scores.tsv]
    #[arg(long, default_value = "scores.tsv")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Score file written by `score`
    #[arg(long, value_name = "FILE")]
    pub scores: PathBuf,
    /// Target prior of the detection cost [default: 0.01]
    #[arg(long)]
    pub p_target: Option<f64>,
    /// Cost of a miss [default: 1]
    #[arg(long)]
    pub c_miss: Option<f64>,
    /// Cost of a false alarm [default: 1]
    #[arg(long)]
    pub c_fa: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FratioArgs {
    /// Score file written by `score`, ideally over fratio_trials.txt
    #[arg(long, value_name = "FILE")]
    pub scores: PathBuf,
    /// Draws per pool and minimum available similarities per phone [default: 500]
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Score file written by `score`
    #[arg(long, value_name = "FILE")]
    pub scores: PathBuf,
    /// 0-based row of the trial in the score file [default: 0]
    #[arg(long, default_value_t = 0, conflicts_with_all = ["enroll", "test"])]
    pub trial: usize,
    /// Select the trial by enrollment id (requires --test)
    #[arg(long, requires = "test")]
    pub enroll: Option<String>,
    /// Select the trial by test id (requires --enroll)
    #[arg(long, requires = "enroll")]
    pub test: Option<String>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Corpus directory; a small random corpus (F=5, 6 phones) is generated when omitted
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// Finite-difference step [default: 0.00001]
    #[arg(long)]
    pub step: Option<f64>,
    /// Maximum relative error [default: 0.0001]
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Speakers in the checked batch [default: 3]
    #[arg(long)]
    pub k: Option<usize>,
    /// Check with alpha=beta=gamma=1 instead of the configured loss weights
    #[arg(long)]
    pub unit_weights: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, line }) => {
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
