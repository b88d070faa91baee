//! Command definitions and drivers for the `scorecal` binary.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use scorecal::data::{
    read_embeddings, read_scores, read_trials, write_scores, EmbeddingFormat, EmbeddingSet, LabeledScores, ScoreSet,
    TrialList,
};
use scorecal::linear::{train_linear, LinearTrainOptions, LossKind, OperatingPoint};
use scorecal::metrics::{det_sweep, emit_det, report};
use scorecal::model::Model;
use scorecal::neural::{final_tune, train_calibrator, CalibratorKind, TrainConfig};
use scorecal::nn::AdamConfig;
use scorecal::pipeline::{parse_stage_list, Pipeline, Preset, Stage, StageKind};
use scorecal::scoring::score_trials;
use scorecal::snorm::{snorm, Cohort, DEFAULT_TOP_X};
use scorecal::synth::SimConfig;
use scorecal::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "scorecal", version, about = "Speaker-verification score calibration toolkit")]
pub struct Cli {
    /// Log level (error, warn, info, debug)
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cosine-score trials from embeddings
    Score(ScoreArgs),
    /// Apply adaptive s-norm to raw cosine scores
    Snorm(SnormArgs),
    /// Train an affine calibration on labeled scores
    TrainLinear(TrainLinearArgs),
    /// Train a MagNetO (per-utterance magnitude) calibrator
    TrainMagneto(TrainNeuralArgs),
    /// Train a SONet (per-trial scale and offset) calibrator
    TrainSonet(TrainNeuralArgs),
    /// Run a scoring pipeline given as a stage list or preset
    Apply(ApplyArgs),
    /// Print EER, minDCF, actDCF and Cllr for labeled scores
    Eval(EvalArgs),
    /// Write the DET curve of labeled scores
    Det(DetArgs),
    /// Generate a synthetic dataset
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    /// Pick by extension: .tsv/.txt are text, anything else binary
    Auto,
    Binary,
    Tsv,
}

#[derive(Debug, Args)]
pub struct EmbeddingInput {
    /// Embedding file (binary EVEC or TSV)
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Embedding file format
    #[arg(long, value_enum, default_value = "auto")]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub input: EmbeddingInput,
    /// Trial list (TSV)
    #[arg(long)]
    pub trials: PathBuf,
    /// Output score file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SnormArgs {
    #[command(flatten)]
    pub input: EmbeddingInput,
    /// Trial list (TSV)
    #[arg(long)]
    pub trials: PathBuf,
    /// Raw cosine scores aligned with the trials
    #[arg(long)]
    pub scores: PathBuf,
    /// Cohort embedding file (format picked by extension)
    #[arg(long)]
    pub cohort: PathBuf,
    /// Number of top cohort scores used per utterance
    #[arg(long, default_value_t = DEFAULT_TOP_X)]
    pub top_x: usize,
    /// Output score file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainLinearArgs {
    /// Labeled trial list (TSV)
    #[arg(long)]
    pub trials: PathBuf,
    /// Scores aligned with the trials
    #[arg(long)]
    pub scores: PathBuf,
    /// Training loss: cllr, or weighted_bce[:pi]
    #[arg(long, default_value = "cllr")]
    pub loss: String,
    /// Iteration limit
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// Output model file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainNeuralArgs {
    #[command(flatten)]
    pub input: EmbeddingInput,
    /// Labeled training trials (TSV)
    #[arg(long)]
    pub trials: PathBuf,
    /// Raw scores to calibrate; cosine scores are computed when omitted
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Development trials for the final affine tuning
    #[arg(long)]
    pub dev_trials: Option<PathBuf>,
    /// Raw development scores; cosine when omitted
    #[arg(long, requires = "dev_trials")]
    pub dev_scores: Option<PathBuf>,
    /// Skip the final affine tuning
    #[arg(long)]
    pub no_final_tune: bool,
    /// Append log durations to the network inputs
    #[arg(long)]
    pub use_duration: bool,
    /// Weight of the within-batch std penalty (0 disables it)
    #[arg(long, default_value_t = 0.0)]
    pub std_lambda: f64,
    /// Draw every minibatch from a single domain (needed with --std-lambda)
    #[arg(long)]
    pub domain_batching: bool,
    /// Training loss: cllr, or weighted_bce[:pi]
    #[arg(long, default_value = "cllr")]
    pub loss: String,
    /// Minibatch size
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    /// Training epochs
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Hidden layer widths, comma separated
    #[arg(long, default_value = "512,512", value_delimiter = ',')]
    pub hidden: Vec<usize>,
    /// Adam step size
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Do not balance target and nontarget counts per minibatch
    #[arg(long)]
    pub unbalanced: bool,
    /// Seed for initialization and minibatch sampling
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output model file
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-epoch loss history (TSV)
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[command(flatten)]
    pub input: EmbeddingInput,
    /// Trial list (TSV)
    #[arg(long)]
    pub trials: PathBuf,
    /// Comma-separated stages, e.g. cosine,snorm,affine
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub stages: Option<String>,
    /// Named system: baseline|magneto|sonet with optional +dur, +snorm, +stdloss
    #[arg(long)]
    pub preset: Option<String>,
    /// External raw scores for the `scores` source stage
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Cohort embeddings for the snorm stage
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// Number of top cohort scores used per utterance
    #[arg(long, default_value_t = DEFAULT_TOP_X)]
    pub top_x: usize,
    /// MagNetO or SONet model file for the neural stage
    #[arg(long)]
    pub neural_model: Option<PathBuf>,
    /// Linear model file for the affine stage
    #[arg(long)]
    pub affine_model: Option<PathBuf>,
    /// Output score file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    /// key<TAB>value lines
    Kv,
    /// Human-readable block
    Block,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled trial list (TSV)
    #[arg(long)]
    pub trials: PathBuf,
    /// Scores aligned with the trials
    #[arg(long)]
    pub scores: PathBuf,
    /// Target prior of the operating point
    #[arg(long, default_value_t = OperatingPoint::DEFAULT.pi())]
    pub p_target: f64,
    /// Report layout
    #[arg(long, value_enum, default_value = "kv")]
    pub report: ReportFormat,
    /// Also write the report to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetArgs {
    /// Labeled trial list (TSV)
    #[arg(long)]
    pub trials: PathBuf,
    /// Scores aligned with the trials
    #[arg(long)]
    pub scores: PathBuf,
    /// Output DET table (threshold, p_miss, p_fa)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Named scenario: s1, s2 (score worlds) or embed (embedding world)
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub preset: Option<String>,
    /// key=value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the scenario seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn embedding_format(path: &Path, arg: FormatArg) -> EmbeddingFormat {
    match arg {
        FormatArg::Auto => EmbeddingFormat::from_path(path),
        FormatArg::Binary => EmbeddingFormat::Binary,
        FormatArg::Tsv => EmbeddingFormat::Tsv,
    }
}

fn load_embeddings(input: &EmbeddingInput) -> Result<EmbeddingSet> {
    read_embeddings(&input.embeddings, embedding_format(&input.embeddings, input.format))
}

fn load_cohort(path: &Path, top_x: usize) -> Result<Cohort> {
    Cohort::new(read_embeddings(path, EmbeddingFormat::from_path(path))?, top_x)
}

fn labeled(trials: &TrialList, scores: &ScoreSet) -> Result<LabeledScores> {
    LabeledScores::from_trials(trials, scores)
}

fn scores_or_cosine(path: Option<&Path>, trials: &TrialList, embeddings: &EmbeddingSet) -> Result<ScoreSet> {
    match path {
        Some(p) => read_scores(p, trials),
        None => score_trials(embeddings, trials),
    }
}

fn run_score(a: &ScoreArgs) -> Result<()> {
    let emb = load_embeddings(&a.input)?;
    let trials = read_trials(&a.trials)?;
    write_scores(&trials, &score_trials(&emb, &trials)?, &a.out)
}

fn run_snorm(a: &SnormArgs) -> Result<()> {
    let emb = load_embeddings(&a.input)?;
    let trials = read_trials(&a.trials)?;
    let raw = read_scores(&a.scores, &trials)?;
    let cohort = load_cohort(&a.cohort, a.top_x)?;
    write_scores(&trials, &snorm(&trials, &raw, &emb, &cohort)?, &a.out)
}

fn run_train_linear(a: &TrainLinearArgs) -> Result<()> {
    let trials = read_trials(&a.trials)?;
    let scores = read_scores(&a.scores, &trials)?;
    let opts = LinearTrainOptions {
        max_iter: a.max_iter,
        ..LinearTrainOptions::with_loss(a.loss.parse::<LossKind>()?)
    };
    let fit = train_linear(&labeled(&trials, &scores)?, &opts);
    let mut cal = fit.calibration;
    cal.trained_on = a.trials.display().to_string();
    info!(
        "alpha={} beta={} loss {} -> {} in {} iterations",
        cal.alpha, cal.beta, fit.initial_loss, fit.final_loss, fit.iterations
    );
    Model::Linear(cal).save(&a.out)
}

fn run_train_neural(kind: CalibratorKind, a: &TrainNeuralArgs) -> Result<()> {
    let emb = load_embeddings(&a.input)?;
    let trials = read_trials(&a.trials)?;
    let raw = scores_or_cosine(a.scores.as_deref(), &trials, &emb)?;
    if a.std_lambda > 0.0 && !a.domain_batching {
        return Err(Error::Config(
            "--std-lambda > 0 needs --domain-batching (the penalty is computed within single-domain batches)".into(),
        ));
    }
    let config = TrainConfig {
        loss: a.loss.parse()?,
        use_duration: a.use_duration,
        std_loss_lambda: a.std_lambda,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
        domain_batching: a.domain_batching,
        balanced_sampling: !a.unbalanced,
        hidden: a.hidden.clone(),
        adam: AdamConfig {
            step_size: a.lr,
            ..AdamConfig::default()
        },
    };
    let outcome = train_calibrator::<f64>(kind, &emb, &trials, &raw, &config)?;
    let mut model = outcome.model;
    if !a.no_final_tune {
        let fit = match &a.dev_trials {
            Some(dev) => {
                let dev_trials = read_trials(dev)?;
                let dev_raw = scores_or_cosine(a.dev_scores.as_deref(), &dev_trials, &emb)?;
                final_tune(&mut model, &emb, &dev_trials, &dev_raw, &LinearTrainOptions::default())?
            }
            None => {
                info!("no --dev-trials given; final tuning on the training trials");
                final_tune(&mut model, &emb, &trials, &raw, &LinearTrainOptions::default())?
            }
        };
        info!(
            "final tune alpha={} beta={}",
            fit.calibration.alpha, fit.calibration.beta
        );
    }
    if let Some(path) = &a.history {
        let mut text = String::from("epoch\tobjective\ttrain_loss\n");
        text.push_str(&format!("0\t\t{}\n", outcome.initial_loss));
        for (i, h) in outcome.history.iter().enumerate() {
            text.push_str(&format!("{}\t{}\t{}\n", i + 1, h.objective, h.train_loss));
        }
        fs::write(path, text)?;
    }
    Model::Neural(model).save(&a.out)
}

fn build_pipeline(a: &ApplyArgs) -> Result<Pipeline> {
    let (kinds, preset) = match (&a.stages, &a.preset) {
        (Some(list), None) => (parse_stage_list(list)?, None),
        (None, Some(name)) => {
            let p: Preset = name.parse()?;
            (p.stages(), Some(p))
        }
        _ => return Err(Error::Config("give exactly one of --stages or --preset".into())),
    };
    let need = |opt: &Option<PathBuf>, flag: &str, stage: StageKind| -> Result<PathBuf> {
        opt.clone()
            .ok_or_else(|| Error::Config(format!("stage {stage} needs {flag}")))
    };
    let mut stages = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let stage = match kind {
            StageKind::Cosine => Stage::Cosine,
            StageKind::Scores => {
                let trials = read_trials(&a.trials)?;
                Stage::Scores(read_scores(need(&a.scores, "--scores", kind)?, &trials)?)
            }
            StageKind::Snorm => Stage::Snorm(load_cohort(&need(&a.cohort, "--cohort", kind)?, a.top_x)?),
            StageKind::Magneto | StageKind::Sonet => {
                let model = Model::load(need(&a.neural_model, "--neural-model", kind)?)?.into_neural()?;
                if model.kind().to_string() != kind.to_string() {
                    return Err(Error::Config(format!(
                        "stage {kind} given a {} model file",
                        model.kind()
                    )));
                }
                if let Some(p) = &preset {
                    p.check_model(&model)?;
                }
                Stage::Neural(model)
            }
            StageKind::Affine => {
                Stage::Affine(Model::load(need(&a.affine_model, "--affine-model", kind)?)?.into_linear()?)
            }
        };
        stages.push(stage);
    }
    Pipeline::new(stages)
}

fn run_apply(a: &ApplyArgs) -> Result<()> {
    let pipeline = build_pipeline(a)?;
    let emb = load_embeddings(&a.input)?;
    let trials = read_trials(&a.trials)?;
    info!("pipeline {}", pipeline.stage_names());
    write_scores(&trials, &pipeline.run(&emb, &trials)?, &a.out)
}

fn run_eval(a: &EvalArgs) -> Result<String> {
    let trials = read_trials(&a.trials)?;
    let scores = read_scores(&a.scores, &trials)?;
    let r = report(&labeled(&trials, &scores)?, OperatingPoint::new(a.p_target)?);
    let text = match a.report {
        ReportFormat::Kv => r.to_kv_lines(),
        ReportFormat::Block => r.to_block(),
    };
    if let Some(out) = &a.out {
        fs::write(out, &text)?;
    }
    Ok(text)
}

fn run_det(a: &DetArgs) -> Result<()> {
    let trials = read_trials(&a.trials)?;
    let scores = read_scores(&a.scores, &trials)?;
    emit_det(&det_sweep(&labeled(&trials, &scores)?), &a.out)
}

fn run_simulate(a: &SimulateArgs) -> Result<String> {
    let mut cfg = match (&a.preset, &a.config) {
        (Some(name), None) => SimConfig::preset(name)?,
        (None, Some(path)) => SimConfig::from_text(&fs::read_to_string(path)?)?,
        _ => return Err(Error::Config("give exactly one of --preset or --config".into())),
    };
    if let Some(seed) = a.seed {
        cfg.set_seed(seed);
    }
    cfg.generate_into(&a.out_dir)
}

/// Runs a parsed command. Returns text for standard output.
pub fn execute(command: &Command) -> Result<String> {
    match command {
        Command::Score(a) => run_score(a).map(|_| String::new()),
        Command::Snorm(a) => run_snorm(a).map(|_| String::new()),
        Command::TrainLinear(a) => run_train_linear(a).map(|_| String::new()),
        Command::TrainMagneto(a) => run_train_neural(CalibratorKind::Magneto, a).map(|_| String::new()),
        Command::TrainSonet(a) => run_train_neural(CalibratorKind::Sonet, a).map(|_| String::new()),
        Command::Apply(a) => run_apply(a).map(|_| String::new()),
        Command::Eval(a) => run_eval(a),
        Command::Det(a) => run_det(a).map(|_| String::new()),
        Command::Simulate(a) => run_simulate(a),
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .try_init();
    match execute(&cli.command) {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                EXIT_IO
            } else {
                EXIT_INVALID
            }
        }
    }
}
