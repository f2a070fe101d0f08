//! Command-line front end.
//!
//! Exit codes: 0 success (or Accept), 1 Reject, 2 usage error (bad flags,
//! bad or missing input files), 3 runtime failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::codebook::{choose_embedding_length, min_distance_bound, Codebook};
use crate::datagen::{export_features, load_features, synth_population, Population, Split, SynthParams};
use crate::error::{Error, Result};
use crate::eval::{evaluate_cohorts, export_report, fpr_at_tpr, summary_csv, Cohort, ReportOptions, RocCurve};
use crate::federation::{write_round_log, FederatedConfig};
use crate::fedua::{
    authenticate, load_thresholds, run_fedua, save_thresholds, warm_up_threshold, EmbeddingSpec, Threshold, Verdict,
};
use crate::nn::{load_checkpoint, save_checkpoint, Model, ModelConfig, Tensor};
use crate::UserId;

pub const EXIT_OK: u8 = 0;
pub const EXIT_REJECT: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "fedua",
    version,
    about = "Federated user authentication with random binary embeddings"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    pub format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Smallest embedding length whose minimum-distance bound reaches the confidence.
    SizeCodebook {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        min_dist: usize,
        #[arg(long, default_value_t = 0.9)]
        confidence: f64,
    },
    /// Generate a synthetic population (population.csv, manifest.json).
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model; writes checkpoint.json, codebook.json, rounds.csv and the population.
    Train(TrainArgs),
    /// Per-user warm-up thresholds (calibration.csv).
    Calibrate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        population: PathBuf,
        /// Run configuration supplying defaults for the flags below.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Target true positive rate on the warm-up samples [default: 0.9].
        #[arg(long)]
        tpr: Option<f64>,
    },
    /// Accept or reject one sample claimed to come from `--user`.
    Authenticate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        user: u32,
        /// File holding one sample as comma- or whitespace-separated numbers.
        #[arg(long)]
        sample: PathBuf,
    },
    /// ROC report per cohort (roc_<cohort>.csv, summary.csv, roc.svg).
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        population: PathBuf,
        /// Run configuration supplying defaults for the flags below.
        #[arg(long)]
        config: Option<PathBuf>,
        /// TPR levels reported in the summary [default: 0.8,0.9].
        #[arg(long, value_delimiter = ',')]
        tpr: Option<Vec<f64>>,
        /// Logarithmic FPR axis in the plot.
        #[arg(long)]
        log_x: bool,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Train on this feature file instead of generating data.
    #[arg(long)]
    pub population: Option<PathBuf>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub client_fraction: Option<f64>,
    #[arg(long)]
    pub local_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Fixed embedding length (replaces any sizing in the config).
    #[arg(long)]
    pub n_e: Option<usize>,
    /// Also write checkpoints/round_<t>.json every this many rounds.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

/// Network choice in a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    /// Three small conv blocks sized for the input length.
    Compact,
    /// The full-size speech network (inputs of length 16384).
    Speech,
    Custom(ModelConfig),
}

impl ModelSpec {
    pub fn resolve(&self, input_length: usize, n_e: usize) -> ModelConfig {
        match self {
            ModelSpec::Compact => ModelConfig::compact(input_length, n_e),
            ModelSpec::Speech => ModelConfig::speech(n_e),
            ModelSpec::Custom(c) => c.clone().with_embedding_length(n_e),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub client_fraction: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rounds: usize,
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = FederatedConfig::default();
        TrainingSection {
            client_fraction: d.client_fraction,
            local_epochs: d.local_epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            rounds: d.rounds,
            checkpoint_every: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub tpr_targets: Vec<f64>,
    pub calibration_tpr: f64,
    pub log_x: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            tpr_targets: vec![0.8, 0.9],
            calibration_tpr: 0.9,
            log_x: false,
        }
    }
}

/// JSON run configuration. Every section is optional. The top-level seed
/// drives model initialization, client sampling, batch order and codewords;
/// synthetic data has its own `data.seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub model: ModelSpec,
    pub embedding: EmbeddingSpec,
    pub training: TrainingSection,
    /// Generator settings, used unless `features` names a feature file.
    pub data: SynthParams,
    pub features: Option<PathBuf>,
    pub evaluation: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: None,
            model: ModelSpec::Compact,
            embedding: EmbeddingSpec::Length(64),
            training: TrainingSection::default(),
            data: SynthParams::default(),
            features: None,
            evaluation: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_input(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "run configuration",
            reason: e.to_string(),
        })
    }

    pub fn federated(&self) -> FederatedConfig {
        FederatedConfig {
            client_fraction: self.training.client_fraction,
            local_epochs: self.training.local_epochs,
            batch_size: self.training.batch_size,
            learning_rate: self.training.learning_rate,
            rounds: self.training.rounds,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.federated().validate()?;
        if self.training.checkpoint_every == Some(0) {
            return Err(Error::arg("checkpoint_every must be at least 1"));
        }
        if let Some(p) = &self.features {
            require_file(p)?;
        }
        for &t in &self.evaluation.tpr_targets {
            check_rate(t)?;
        }
        check_rate(self.evaluation.calibration_tpr)?;
        Ok(())
    }
}

fn check_rate(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("rate {r} must lie in (0, 1]")))
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::arg(format!("{} does not exist", path.display())))
    }
}

fn read_input(path: &Path) -> Result<String> {
    require_file(path)?;
    Ok(fs::read_to_string(path)?)
}

fn out_dir(common: &Common, config: Option<&RunConfig>) -> Result<PathBuf> {
    common
        .out
        .clone()
        .or_else(|| config.and_then(|c| c.out.clone()))
        .ok_or_else(|| Error::arg("no output directory; pass --out"))
}

/// Parses `args` and runs the command, printing to `stdout`. Returns the
/// process exit code; errors go to `stderr`.
pub fn main_with<I, T>(args: I, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match run(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

/// Runs a parsed command inside a pool of `--threads` workers.
pub fn run(cli: &Cli, stdout: &mut (dyn Write + Send)) -> Result<u8> {
    match cli.common.threads {
        Some(0) => Err(Error::arg("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::State(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(cli, stdout))
        }
        None => dispatch(cli, stdout),
    }
}

fn dispatch(cli: &Cli, stdout: &mut (dyn Write + Send)) -> Result<u8> {
    let common = &cli.common;
    match &cli.command {
        Command::SizeCodebook {
            users,
            min_dist,
            confidence,
        } => size_codebook(common, *users, *min_dist, *confidence, stdout),
        Command::GenData { config } => gen_data(common, config.as_deref(), stdout),
        Command::Train(args) => train(common, args, stdout),
        Command::Calibrate {
            checkpoint,
            codebook,
            population,
            config,
            tpr,
        } => {
            let cfg = load_config(config.as_deref())?;
            let tpr = tpr.unwrap_or(cfg.evaluation.calibration_tpr);
            calibrate(common, &cfg, checkpoint, codebook, population, tpr, stdout)
        }
        Command::Authenticate {
            checkpoint,
            codebook,
            calibration,
            user,
            sample,
        } => authenticate_cmd(common, checkpoint, codebook, calibration, UserId(*user), sample, stdout),
        Command::Evaluate {
            checkpoint,
            codebook,
            population,
            config,
            tpr,
            log_x,
        } => {
            let cfg = load_config(config.as_deref())?;
            let tpr = tpr.clone().unwrap_or_else(|| cfg.evaluation.tpr_targets.clone());
            let log_x = *log_x || cfg.evaluation.log_x;
            evaluate(common, &cfg, checkpoint, codebook, population, &tpr, log_x, stdout)
        }
    }
}

fn size_codebook(
    common: &Common,
    users: usize,
    min_dist: usize,
    confidence: f64,
    out: &mut (dyn Write + Send),
) -> Result<u8> {
    let n_e = choose_embedding_length(users, min_dist, confidence)?;
    let bound = min_distance_bound(users, n_e, min_dist)?;
    match common.format {
        Format::Human => writeln!(out, "n_e={n_e} bound={}", bound.probability)?,
        Format::Csv => writeln!(out, "n_e,bound\n{n_e},{}", bound.probability)?,
    }
    Ok(EXIT_OK)
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_population(pop: &Population, dir: &Path) -> Result<()> {
    export_features(pop, &dir.join("population.csv"))?;
    let manifest = serde_json::to_string_pretty(&pop.manifest()).map_err(|e| Error::State(e.to_string()))?;
    fs::write(dir.join("manifest.json"), manifest + "\n")?;
    Ok(())
}

fn gen_data(common: &Common, config: Option<&Path>, out: &mut (dyn Write + Send)) -> Result<u8> {
    let cfg = load_config(config)?;
    let dir = out_dir(common, Some(&cfg))?;
    let mut params = cfg.data.clone();
    if let Some(seed) = common.seed {
        params.seed = seed;
    }
    let pop = synth_population(&params)?;
    fs::create_dir_all(&dir)?;
    write_population(&pop, &dir)?;
    match common.format {
        Format::Human => writeln!(
            out,
            "wrote {} participants and {} unseen users to {}",
            pop.participants.len(),
            pop.unseen.len(),
            dir.display()
        )?,
        Format::Csv => writeln!(
            out,
            "participants,unseen\n{},{}",
            pop.participants.len(),
            pop.unseen.len()
        )?,
    }
    Ok(EXIT_OK)
}

/// Run configuration after applying command-line overrides.
pub fn resolve_train_config(common: &Common, args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(p) = &args.population {
        cfg.features = Some(p.clone());
    }
    let t = &mut cfg.training;
    if let Some(v) = args.rounds {
        t.rounds = v;
    }
    if let Some(v) = args.client_fraction {
        t.client_fraction = v;
    }
    if let Some(v) = args.local_epochs {
        t.local_epochs = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = args.checkpoint_every {
        t.checkpoint_every = Some(v);
    }
    if let Some(n_e) = args.n_e {
        cfg.embedding = EmbeddingSpec::Length(n_e);
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(common: &Common, args: &TrainArgs, out: &mut (dyn Write + Send)) -> Result<u8> {
    let cfg = resolve_train_config(common, args)?;
    let dir = out_dir(common, Some(&cfg))?;
    let pop = match &cfg.features {
        Some(p) => load_features(p)?,
        None => synth_population(&cfg.data)?,
    };
    if pop.participants.is_empty() {
        return Err(Error::arg("the population has no participants"));
    }
    let n_e = cfg.embedding.resolve(pop.participants.len())?;
    let model_config = cfg.model.resolve(pop.input_length, n_e);
    model_config.shapes()?;

    fs::create_dir_all(&dir)?;
    let resolved = serde_json::to_string_pretty(&cfg).map_err(|e| Error::State(e.to_string()))?;
    fs::write(dir.join("config.json"), resolved + "\n")?;
    write_population(&pop, &dir)?;
    let every = cfg.training.checkpoint_every;
    if every.is_some() {
        fs::create_dir_all(dir.join("checkpoints"))?;
    }
    let outcome = run_fedua(
        &cfg.federated(),
        &model_config,
        &pop.participants,
        cfg.seed,
        EmbeddingSpec::Length(n_e),
        |record, params| {
            if let Some(k) = every {
                if record.round % k == 0 {
                    let path = dir.join("checkpoints").join(format!("round_{:05}.json", record.round));
                    save_checkpoint(&path, &model_config, params)?;
                }
            }
            Ok(())
        },
    )?;
    save_checkpoint(&dir.join("checkpoint.json"), &outcome.model_config, &outcome.params)?;
    outcome.codebook.save(&dir.join("codebook.json"))?;
    let mut log = Vec::new();
    write_round_log(&outcome.rounds, &mut log)?;
    fs::write(dir.join("rounds.csv"), log)?;
    match common.format {
        Format::Human => {
            let last = outcome.rounds.last().map(|r| r.mean_client_loss);
            writeln!(
                out,
                "trained {} rounds on {} users, n_e={n_e}, final mean client loss {}",
                outcome.rounds.len(),
                pop.participants.len(),
                last.map_or("n/a".to_string(), |l| format!("{l:.6}"))
            )?;
            writeln!(out, "artifacts in {}", dir.display())?;
        }
        Format::Csv => writeln!(
            out,
            "rounds,users,n_e\n{},{},{n_e}",
            outcome.rounds.len(),
            pop.participants.len()
        )?,
    }
    Ok(EXIT_OK)
}

fn load_model(checkpoint: &Path) -> Result<Model> {
    require_file(checkpoint)?;
    let (config, params) = load_checkpoint(checkpoint)?;
    Model::new(config, params)
}

fn load_codebook(path: &Path, model: &Model) -> Result<Codebook> {
    require_file(path)?;
    let cb = Codebook::load(path)?;
    if cb.n_e() != model.config().embedding_length {
        return Err(Error::arg(format!(
            "codebook has {}-bit embeddings, the model outputs {}",
            cb.n_e(),
            model.config().embedding_length
        )));
    }
    Ok(cb)
}

fn load_population(path: &Path, model: &Model) -> Result<Population> {
    require_file(path)?;
    let pop = load_features(path)?;
    if pop.input_length != model.config().input_length {
        return Err(Error::arg(format!(
            "population inputs have length {}, the model expects {}",
            pop.input_length,
            model.config().input_length
        )));
    }
    Ok(pop)
}

fn calibrate(
    common: &Common,
    cfg: &RunConfig,
    checkpoint: &Path,
    codebook: &Path,
    population: &Path,
    tpr: f64,
    out: &mut (dyn Write + Send),
) -> Result<u8> {
    check_rate(tpr)?;
    let dir = out_dir(common, Some(cfg))?;
    let model = load_model(checkpoint)?;
    let cb = load_codebook(codebook, &model)?;
    let pop = load_population(population, &model)?;
    let mut thresholds = Vec::with_capacity(pop.participants.len());
    for user in &pop.participants {
        let y = cb.embedding(user.user_id)?;
        let samples = if user.warmup.rows() > 0 {
            &user.warmup
        } else {
            user.split(Split::Validation)
        };
        thresholds.push(warm_up_threshold(&model, y, samples, tpr)?.threshold());
    }
    fs::create_dir_all(&dir)?;
    let path = dir.join("calibration.csv");
    save_thresholds(&thresholds, &path)?;
    match common.format {
        Format::Human => writeln!(
            out,
            "calibrated {} users at r={tpr}: {}",
            thresholds.len(),
            path.display()
        )?,
        Format::Csv => out.write_all(&fs::read(&path)?)?,
    }
    Ok(EXIT_OK)
}

/// Reads one sample: numbers separated by commas and/or whitespace.
pub fn read_sample(path: &Path) -> Result<Vec<f64>> {
    let text = read_input(path)?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|e| Error::Format {
                what: "sample",
                reason: format!("{t:?}: {e}"),
            })
        })
        .collect()
}

fn authenticate_cmd(
    common: &Common,
    checkpoint: &Path,
    codebook: &Path,
    calibration: &Path,
    user: UserId,
    sample: &Path,
    out: &mut (dyn Write + Send),
) -> Result<u8> {
    let model = load_model(checkpoint)?;
    let cb = load_codebook(codebook, &model)?;
    require_file(calibration)?;
    let thresholds: Vec<Threshold> = load_thresholds(calibration)?;
    let tau = thresholds
        .iter()
        .find(|t| t.user_id == user)
        .ok_or_else(|| Error::arg(format!("no threshold for user {user}")))?
        .tau;
    let y = cb.embedding(user)?;
    let x = read_sample(sample)?;
    let input = Tensor::new(vec![x.len()], x)?;
    let decision = authenticate(&model, y, tau, &input)?;
    let verdict = match decision.verdict {
        Verdict::Accept => "accept",
        Verdict::Reject => "reject",
    };
    match common.format {
        Format::Human => writeln!(out, "{verdict} score={} tau={}", decision.score, decision.tau)?,
        Format::Csv => writeln!(
            out,
            "user_id,score,tau,verdict\n{user},{},{},{verdict}",
            decision.score, decision.tau
        )?,
    }
    Ok(match decision.verdict {
        Verdict::Accept => EXIT_OK,
        Verdict::Reject => EXIT_REJECT,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    common: &Common,
    cfg: &RunConfig,
    checkpoint: &Path,
    codebook: &Path,
    population: &Path,
    tpr: &[f64],
    log_x: bool,
    out: &mut (dyn Write + Send),
) -> Result<u8> {
    for &t in tpr {
        check_rate(t)?;
    }
    let dir = out_dir(common, Some(cfg))?;
    let model = load_model(checkpoint)?;
    let cb = load_codebook(codebook, &model)?;
    let pop = load_population(population, &model)?;
    let curves: Vec<(Cohort, RocCurve)> = evaluate_cohorts(&model, &cb, &pop)?
        .into_iter()
        .map(|(c, _, curve)| (c, curve))
        .collect();
    let options = ReportOptions {
        title: format!("n_e = {}", model.config().embedding_length),
        log_x,
        tpr_targets: tpr.to_vec(),
    };
    export_report(&curves, &dir, &options)?;
    match common.format {
        Format::Csv => out.write_all(summary_csv(&curves, tpr)?.as_bytes())?,
        Format::Human => {
            for (cohort, curve) in &curves {
                write!(out, "{cohort}: auc={:.4}", curve.auc)?;
                for &t in tpr {
                    write!(out, " fpr@tpr{t}={:.4}", fpr_at_tpr(curve, t)?)?;
                }
                writeln!(out)?;
            }
            writeln!(out, "report in {}", dir.display())?;
        }
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (u8, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = main_with(std::iter::once("fedua").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn size_codebook_examples() {
        let (code, out, _) = run_args(&[
            "size-codebook",
            "--users",
            "4",
            "--min-dist",
            "2",
            "--confidence",
            "0.9",
        ]);
        assert_eq!(code, EXIT_OK);
        assert!(out.starts_with("n_e=10 "), "{out}");
        assert_eq!(
            run_args(&["size-codebook", "--users", "1", "--min-dist", "2"]).0,
            EXIT_USAGE
        );
        assert_eq!(
            run_args(&[
                "size-codebook",
                "--users",
                "4",
                "--min-dist",
                "2",
                "--confidence",
                "1.0"
            ])
            .0,
            EXIT_USAGE
        );
        assert_eq!(run_args(&["size-codebook", "--users", "x"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn config_defaults_and_strictness() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let cfg: RunConfig = serde_json::from_str(
            r#"{"embedding":{"sized":{"min_dist_tau":3}},"training":{"rounds":7},"model":"speech"}"#,
        )
        .unwrap();
        assert_eq!(cfg.training.rounds, 7);
        assert_eq!(cfg.training.batch_size, 8);
        assert_eq!(cfg.model, ModelSpec::Speech);
        assert!(serde_json::from_str::<RunConfig>(r#"{"training":{"epochs":1}}"#).is_err());
        assert!(
            serde_json::from_str::<RunConfig>(r#"{"embedding":{"length":64,"sized":{"min_dist_tau":3}}}"#).is_err()
        );
    }

    #[test]
    fn sample_files_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.txt");
        fs::write(&p, "1, 2.5\n-3e-1 4\n").unwrap();
        assert_eq!(read_sample(&p).unwrap(), vec![1.0, 2.5, -0.3, 4.0]);
        fs::write(&p, "1, x").unwrap();
        assert!(read_sample(&p).is_err());
    }
}
