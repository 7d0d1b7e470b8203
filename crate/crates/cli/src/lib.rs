//! The `hierdial` command line.
//!
//! [`run`] is the whole program: it parses arguments (with an optional
//! `key=value` config file underneath the flags), dispatches the subcommand
//! and maps the outcome to an exit code. `main` only wires it to the
//! process's streams, so tests drive it in-process.

mod chat;
mod commands;
mod config;
mod study;

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use hierdial::corpus::ContextClass;
use hierdial::generation::{GenConfig, LatentChoice, Strategy};
use hierdial::models::ModelKind;
use hierdial_study::Protocol;

pub use chat::chat_loop;
pub use study::{terminal_study, ClientOptions};

/// Exit status for a malformed command line or config file.
pub const EXIT_USAGE: i32 = 1;
/// Exit status for a failure while doing the work.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "hierdial",
    version,
    about = "Hierarchical dialogue models: HRED, VHRED, MrRNN and a flat GRU baseline",
    long_about = "Hierarchical dialogue models: HRED, VHRED, MrRNN and a flat GRU baseline.\n\n\
        Every subcommand is reproducible from its flags: all randomness is derived from --seed.\n\
        Any flag may also be given in a --config file of `key = value` lines (keys are long flag\n\
        names); flags on the command line win over the file."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic help-desk corpus (JSON lines) and matching lexicons.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint directory with a metrics log.
    Train(TrainArgs),
    /// Generate responses for a context or for every dialogue of a corpus.
    Generate(GenerateArgs),
    /// Score checkpoints on a test corpus: activity/entity F1 table and more.
    Evaluate(EvaluateArgs),
    /// Talk to a model. `/reset` starts over, `/quit` exits.
    Chat(ChatArgs),
    /// Serve the human-evaluation study API and browser UI.
    StudyServe(StudyServeArgs),
    /// Complete a study session from the terminal against a running server.
    StudyClient(StudyClientArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// `key = value` file supplying defaults for any other flag.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Output corpus (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Dialogues written to --out.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Also write this many further dialogues to --test-out.
    #[arg(long, default_value_t = 200, requires = "test_out")]
    pub test_n: usize,
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    /// Directory for activities.txt / entities.txt / nouns.txt matching the corpus.
    #[arg(long)]
    pub lexicons_out: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Share of dialogues whose helper turns admit several valid replies.
    #[arg(long, default_value_t = 0.4)]
    pub ambiguity: f64,
    /// Size of the entity pool (at most 50).
    #[arg(long, default_value_t = 50)]
    pub entities: usize,
    #[arg(long, default_value_t = 6)]
    pub turns: usize,
    /// Chance that an ambiguous dialogue's helper gives a content-free reply.
    #[arg(long, default_value_t = 0.25)]
    pub generic_weight: f64,
    /// Chance that a follow-up user turn switches to another entity.
    #[arg(long, default_value_t = 0.3)]
    pub switch_prob: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// baseline, hred, vhred, mrrnn-noun or mrrnn-act-ent.
    #[arg(long)]
    pub model: ModelKind,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint directory (created).
    #[arg(long)]
    pub out: PathBuf,
    /// Lexicon directory for MrRNN coarse extraction; built-in lexicons otherwise.
    #[arg(long)]
    pub lexicons: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clip_norm: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Updates over which VHRED's KL weight rises from 0 to 1.
    #[arg(long, default_value_t = 1000)]
    pub kl_anneal_steps: u64,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 10_000)]
    pub vocab_max: usize,
    /// Tokens of history the flat baseline reads.
    #[arg(long, default_value_t = 128)]
    pub baseline_window: usize,
    /// Give the decoder its own embedding table.
    #[arg(long)]
    pub separate_embeddings: bool,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Progress line every this many updates (0: silent).
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// greedy, beam or sample.
    #[arg(long, default_value = "greedy")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 5)]
    pub beam_width: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 30)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Allow `<unk>` in generated text.
    #[arg(long)]
    pub keep_unk: bool,
    /// VHRED latent at generation time: a prior sample or the prior mean.
    #[arg(long, default_value = "sample")]
    pub latent: LatentChoice,
}

impl GenArgs {
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            strategy: self.strategy,
            beam_width: self.beam_width,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed: self.seed,
            mask_unk: !self.keep_unk,
            latent: self.latent,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub model_dir: PathBuf,
    /// One context turn; repeat in dialogue order.
    #[arg(long = "turn", conflicts_with = "corpus")]
    pub turns: Vec<String>,
    /// Respond to every dialogue's context (all but the last turn); JSON lines out.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Print the MrRNN coarse sequence too.
    #[arg(long)]
    pub show_coarse: bool,
    #[command(flatten)]
    pub generation: GenArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Checkpoint to score; repeat for one table row each.
    #[arg(long, required = true)]
    pub model_dir: Vec<PathBuf>,
    /// Test dialogues; the last turn of each is the reference.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Lexicon directory for activity/entity matching; built-in otherwise.
    #[arg(long)]
    pub lexicons: Option<PathBuf>,
    /// Study journal whose ratings fill the human columns (matched by model name).
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Leave out examples where response and reference both lack activities (entities).
    #[arg(long)]
    pub skip_both_empty: bool,
    /// Also report word perplexity on the test corpus.
    #[arg(long)]
    pub perplexity: bool,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Write the full report as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub generation: GenArgs,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub model_dir: PathBuf,
    #[command(flatten)]
    pub generation: GenArgs,
}

#[derive(Debug, Args)]
pub struct StudyServeArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Directory holding the journal (created).
    #[arg(long)]
    pub dir: PathBuf,
    /// `name=checkpoint-dir`, or a bare directory named after its model kind. Repeat.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    /// Dialogues to draw study contexts from.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Serve the UI from this directory instead of the bundled page.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[command(flatten)]
    pub generation: GenArgs,
}

#[derive(Debug, Args)]
pub struct StudyClientArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    pub url: String,
    /// rating (four models) or preference (two models).
    #[arg(long)]
    pub protocol: ProtocolArg,
    /// Comma-separated model names as served.
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<String>,
    #[arg(long, default_value_t = 30)]
    pub items: usize,
    /// Seed for context choice and candidate order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Only short or long contexts.
    #[arg(long)]
    pub class: Option<ClassArg>,
    #[arg(long, default_value = "anonymous")]
    pub rater: String,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum ProtocolArg {
    Rating,
    Preference,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Rating => Protocol::Rating,
            ProtocolArg::Preference => Protocol::Preference,
        }
    }
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum ClassArg {
    Short,
    Long,
}

impl From<ClassArg> for ContextClass {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::Short => ContextClass::Short,
            ClassArg::Long => ContextClass::Long,
        }
    }
}

/// Runs the program on `args` (including the program name) and returns the
/// exit code: 0 on success, [`EXIT_USAGE`] for a bad command line,
/// [`EXIT_RUNTIME`] when the work itself fails.
pub fn run<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match config::parse(args) {
        Ok(cli) => cli,
        Err(config::ParseError::Clap(e)) => {
            let text = e.render().ansi().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
        Err(config::ParseError::Config(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_USAGE;
        }
    };
    match dispatch(cli.command, input, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(command: Command, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    match command {
        Command::Synth(a) => commands::synth(&a, out),
        Command::Train(a) => commands::train(&a, out, err),
        Command::Generate(a) => commands::generate(&a, out),
        Command::Evaluate(a) => commands::evaluate(&a, out, err),
        Command::Chat(a) => chat::chat(&a, input, out),
        Command::StudyServe(a) => study::serve(&a, err),
        Command::StudyClient(a) => {
            let opts = ClientOptions {
                url: a.url,
                protocol: a.protocol.into(),
                models: a.models,
                items: a.items,
                seed: a.seed,
                class: a.class.map(Into::into),
                rater: a.rater,
            };
            terminal_study(&opts, input, out).map(|_| ())
        }
    }
}
