mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mdbench::data::Corpus;

#[derive(Parser)]
#[command(name = "mdbench", version, about = "Metaphor detection benchmark toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on a whole dataset and save a checkpoint directory.
    Train(RunArgs),
    /// Score a saved checkpoint on a dataset.
    Eval(EvalArgs),
    /// k-fold cross validation; writes JSON reports, predictions and a
    /// markdown table.
    Cv(RunArgs),
    /// Export the CLS attention map of one sentence.
    Heatmap(HeatmapArgs),
    /// Re-annotation workflow.
    #[command(subcommand)]
    Annotate(AnnotateCommand),
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Finite-difference gradient check of every block.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Clone, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<Corpus>,
    /// word_level, sentence_level, sequence_labeling or all.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat JSON object with dotted keys such as "encoder.layers".
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output file (`train`) or directory (`cv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub ff_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Any other configuration key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub assignments: Vec<String>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Defaults to the format the checkpoint was trained on.
    #[arg(long)]
    pub format: Option<Corpus>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-record predictions as TSV.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Whitespace-tokenized sentence.
    #[arg(long, conflicts_with = "id")]
    pub sentence: Option<String>,
    /// Index of the aspect word, marked in the output.
    #[arg(long)]
    pub aspect: Option<usize>,
    /// Take the sentence and aspect from this record of --dataset.
    #[arg(long, requires = "dataset")]
    pub id: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<Corpus>,
    /// `.svg` writes an SVG heat strip, anything else JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum AnnotateCommand {
    /// Serve the validation API and the static annotation UI.
    Serve(ServeArgs),
    /// Count records whose label differs between two versions.
    Diff(DiffArgs),
    /// Resolve revisions by majority vote and write the relabeled dataset.
    Merge(MergeArgs),
    /// Agreement statistics from the event log.
    Stats(StatsArgs),
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub revised: PathBuf,
    #[arg(long, default_value = "moh")]
    pub format: Corpus,
    #[arg(long)]
    pub log: PathBuf,
    /// Comma-separated validator ids; each doubles as its session token.
    #[arg(long, value_delimiter = ',', required = true)]
    pub annotators: Vec<String>,
    #[arg(long, default_value_t = 100)]
    pub sample_size: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Directory with the built annotation UI.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct DiffArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub revised: PathBuf,
    #[arg(long, default_value = "moh")]
    pub format: Corpus,
    /// Print the full diff as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long, default_value = "moh")]
    pub format: Corpus,
    #[arg(long)]
    pub log: PathBuf,
    /// Relabeled dataset; provenance goes next to it as JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Outcome for revisions nobody voted on: keep-revision or keep-original.
    #[arg(long, default_value = "keep-revision")]
    pub policy: String,
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long, default_value = "moh")]
    pub format: Corpus,
    #[arg(long)]
    pub log: PathBuf,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Label counts and aspect-word group histograms.
    Inspect(InspectArgs),
    /// Write a synthetic dataset whose labels follow a planted rule.
    Planted(PlantedArgs),
}

#[derive(Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "moh")]
    pub format: Corpus,
    /// Print the per-aspect histograms as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct PlantedArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value = "moh")]
    pub format: Corpus,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = mdbench::training::gradcheck::DEFAULT_EPS)]
    pub eps: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Cv(a) => commands::cv(&a),
        Command::Heatmap(a) => commands::heatmap(&a),
        Command::Annotate(AnnotateCommand::Serve(a)) => commands::serve(&a),
        Command::Annotate(AnnotateCommand::Diff(a)) => commands::diff(&a),
        Command::Annotate(AnnotateCommand::Merge(a)) => commands::merge(&a),
        Command::Annotate(AnnotateCommand::Stats(a)) => commands::stats(&a),
        Command::Dataset(DatasetCommand::Inspect(a)) => commands::inspect(&a),
        Command::Dataset(DatasetCommand::Planted(a)) => commands::planted(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
