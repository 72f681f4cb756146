//! `lut` — one binary for the whole workflow: synthesize data, train the
//! teacher, train the translation model, decode, evaluate, probe frozen
//! representations, run ablation sweeps, and export attention maps.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lut", version, about = "Triple-supervised speech translation at desk scale")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a parallel speech-translation corpus and its vocabularies.
    GenData {
        /// Corpus description file (flat key = value).
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for manifests, vocabularies, and features.
        #[arg(long)]
        out: PathBuf,
        /// Override the seed in the spec file.
        #[arg(long)]
        seed: Option<u64>,
        /// Store features inside the manifest instead of sidecar files.
        #[arg(long)]
        inline: bool,
    },
    /// Train the masked-token teacher on the training manifest's transcriptions.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for the teacher checkpoint and report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the translation model with interleaved auxiliary/full updates.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Override the distance branch: seq or word.
        #[arg(long)]
        branch: Option<String>,
        /// Override the training mode: base or expanded.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Translate a manifest and write one hypothesis line per utterance.
    Decode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest to decode; defaults to the config's test manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Beam width (1 = greedy).
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a manifest: corpus BLEU/WER, per-utterance records, correlation.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory for the report and scatter data.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Linear probes of frozen encoder outputs for speaker or intent.
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Classification target: speaker or intent.
        #[arg(long)]
        task: String,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a row of model variants and tabulate their scores.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Sweep axis: layers or loss-weights.
        #[arg(long)]
        axis: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Dump every attention map for one utterance as JSON.
    ExportAttention {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        utt_id: String,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::GenData { spec, out, seed, inline } => commands::gen_data(&spec, &out, seed, inline),
        Cmd::TrainTeacher { config, seed, out } => commands::train_teacher(&config, seed, &out),
        Cmd::Train { config, seed, out, branch, mode } => {
            commands::train(&config, seed, &out, branch.as_deref(), mode.as_deref())
        }
        Cmd::Decode { config, checkpoint, manifest, out, beam, seed } => {
            commands::decode(&config, &checkpoint, manifest.as_deref(), &out, beam, seed)
        }
        Cmd::Evaluate { config, checkpoint, manifest, out, beam, seed } => {
            commands::evaluate(&config, &checkpoint, manifest.as_deref(), &out, beam, seed)
        }
        Cmd::Probe { config, checkpoint, task, manifest, out, seed } => {
            commands::probe(&config, &checkpoint, &task, manifest.as_deref(), &out, seed)
        }
        Cmd::Sweep { config, axis, out, seed } => commands::sweep(&config, &axis, &out, seed),
        Cmd::ExportAttention { config, checkpoint, utt_id, manifest, out, seed } => {
            commands::export_attention(&config, &checkpoint, &utt_id, manifest.as_deref(), &out, seed)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
