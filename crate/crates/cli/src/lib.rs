//! The `llda` command-line tool.
//!
//! Every flag can also be given in a plain-text config file (`--config`)
//! holding `key = value` lines, where `key` is the long flag name. Flags on
//! the command line win over the file. Exit codes: 0 success, 1 usage error,
//! 2 data or validation error, 3 training divergence. Log verbosity is read
//! from `LLDA_LOG` (`error`, `warn`, `info`, `debug`, `trace`).

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use logistic_lda::data_io::{self, Checkpoint, Corpus, GroupPrediction, GroupTruth, PayloadSpec, Provenance};
use logistic_lda::encoders::{init_params, Activation, EncoderParams, EncoderSpec};
use logistic_lda::eval::{self, confusion_matrix, match_topics};
use logistic_lda::lda::{self, GeneratorSpec, GibbsConfig};
use logistic_lda::math::{PositiveVector, SeededRng};
use logistic_lda::mean_field::HyperParams;
use logistic_lda::training::{self, LrSchedule, Mode, OptimizerKind, TrainConfig, Trainer};
use logistic_lda::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "llda", version, about = "Logistic LDA topic models")]
struct Cli {
    /// File of `key = value` lines supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Generate a synthetic token corpus from the LDA generative process.
    Gen(GenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Predict labels and topic beliefs for every group.
    Infer(InferArgs),
    /// Score a model on a corpus and print a JSON report.
    Eval(EvalArgs),
    /// List the top items of every topic.
    Topics(TopicsArgs),
    /// Fit classical LDA with collapsed Gibbs sampling.
    Gibbs(GibbsArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    k: Option<usize>,
    /// Vocabulary size.
    #[arg(long)]
    v: Option<usize>,
    #[arg(long)]
    docs: Option<usize>,
    /// Items per document.
    #[arg(long)]
    len: Option<usize>,
    /// Symmetric Dirichlet prior of the topic proportions.
    #[arg(long)]
    alpha: Option<f64>,
    /// `disjoint` (contiguous token blocks) or `dirichlet`.
    #[arg(long)]
    beta: Option<String>,
    /// Concentration of Dirichlet-drawn topics.
    #[arg(long)]
    eta: Option<f64>,
    /// Label each document with the argmax of its topic proportions.
    #[arg(long)]
    labels: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write the ground-truth sidecar here.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    n_iter: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(short, long)]
    corpus: Option<PathBuf>,
    /// Labeled groups used to report held-out accuracy after every epoch.
    #[arg(long)]
    heldout: Option<PathBuf>,
    /// `variational` or `discriminative`.
    #[arg(long)]
    mode: Option<String>,
    /// `table` (token corpora) or `mlp` (dense corpora); picked from the corpus by default.
    #[arg(long)]
    encoder: Option<String>,
    /// Comma-separated hidden layer widths of the MLP.
    #[arg(long)]
    hidden: Option<String>,
    /// `tanh`, `relu` or `identity`.
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Defaults to 0.05 for table encoders and 0.001 for MLPs.
    #[arg(long)]
    lr: Option<f64>,
    /// `constant` or `inverse-time`.
    #[arg(long)]
    schedule: Option<String>,
    /// Decay of the inverse-time schedule.
    #[arg(long)]
    decay: Option<f64>,
    /// `sgd`, `momentum` or `adam`.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ignore labels during variational training.
    #[arg(long)]
    no_clamp: bool,
    #[arg(long)]
    e_step_sweeps: Option<usize>,
    /// Continue each group's E-step from its previous beliefs.
    #[arg(long)]
    warm_start: bool,
    /// Checkpoint path.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write the per-epoch JSON records here.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(short, long)]
    model: Option<PathBuf>,
    #[arg(short, long)]
    corpus: Option<PathBuf>,
    /// Predictions file (TSV).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(short, long)]
    model: Option<PathBuf>,
    #[arg(short, long)]
    corpus: Option<PathBuf>,
    /// Ground-truth sidecar; enables matched item-topic accuracy.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also write the JSON report here.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TopicsArgs {
    #[arg(short, long)]
    model: Option<PathBuf>,
    #[arg(short, long)]
    corpus: Option<PathBuf>,
    /// Items per topic.
    #[arg(short, long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct GibbsArgs {
    #[arg(short, long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Pseudo-count added to the label's topic of labeled documents.
    #[arg(long)]
    label_weight: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ground-truth sidecar; enables matched assignment accuracy.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Predictions file (TSV) with π as group beliefs.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult<T> = Result<T, Failure>;

/// Values from `--config`, consumed key by key so leftovers can be reported.
struct Settings {
    values: HashMap<String, String>,
    used: std::cell::RefCell<std::collections::HashSet<String>>,
}

impl Settings {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut values = HashMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Failure::Core(Error::Format {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: "expected key = value".into(),
                    })
                })?;
                values.insert(key.trim().replace('_', "-"), value.trim().to_owned());
            }
        }
        Ok(Settings {
            values,
            used: Default::default(),
        })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_owned());
        self.values.get(key).map(String::as_str)
    }

    fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        let from_file = match self.raw(key) {
            Some(v) => Some(
                v.parse()
                    .map_err(|e| Failure::Usage(format!("config key '{key}': {e}")))?,
            ),
            None => None,
        };
        Ok(flag.or(from_file))
    }

    fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<T>
    where
        T::Err: Display,
    {
        self.get(flag, key)?
            .ok_or_else(|| Failure::Usage(format!("missing required option --{key}")))
    }

    fn switch(&self, flag: bool, key: &str) -> CliResult<bool> {
        Ok(flag || self.get(None, key)?.unwrap_or(false))
    }

    fn check_all_used(&self) -> CliResult<()> {
        let used = self.used.borrow();
        let mut unknown: Vec<&String> = self.values.keys().filter(|k| !used.contains(*k)).collect();
        unknown.sort();
        match unknown.first() {
            Some(k) => Err(Failure::Usage(format!("unknown config key '{k}'"))),
            None => Ok(()),
        }
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter("LLDA_LOG")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Training { .. } => EXIT_DIVERGED,
                _ => EXIT_DATA,
            }
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let command = match cli.command {
        Command::Gen(a) => {
            Box::new(move |s: &Settings| gen(a, s)) as Box<dyn FnOnce(&Settings) -> CliResult<()>>
        }
        Command::Train(a) => Box::new(move |s: &Settings| train(a, s)),
        Command::Infer(a) => Box::new(move |s: &Settings| infer(a, s)),
        Command::Eval(a) => Box::new(move |s: &Settings| evaluate(a, s)),
        Command::Topics(a) => Box::new(move |s: &Settings| topics(a, s)),
        Command::Gibbs(a) => Box::new(move |s: &Settings| gibbs(a, s)),
    };
    command(&settings)
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse_choice<T: FromStr>(value: &str, what: &str) -> CliResult<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| usage(format!("invalid {what} '{value}': {e}")))
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

fn gen(a: GenArgs, s: &Settings) -> CliResult<()> {
    let k: usize = s.required(a.k, "k")?;
    let v: usize = s.required(a.v, "v")?;
    let docs: usize = s.required(a.docs, "docs")?;
    let len: usize = s.required(a.len, "len")?;
    let alpha = s.or(a.alpha, "alpha", 0.1)?;
    let beta_kind: String = s.or(a.beta, "beta", "disjoint".to_owned())?;
    let eta = s.or(a.eta, "eta", 0.1)?;
    let labels = s.switch(a.labels, "labels")?;
    let seed = s.or(a.seed, "seed", 0)?;
    let output: PathBuf = s.required(a.output, "output")?;
    let truth_path: Option<PathBuf> = s.get(a.truth, "truth")?;
    s.check_all_used()?;

    let rng = SeededRng::new(seed);
    let beta = match beta_kind.as_str() {
        "disjoint" => lda::disjoint_beta(k, v)?,
        "dirichlet" => lda::dirichlet_beta(k, v, eta, &mut rng.fork(u64::MAX))?,
        other => return Err(usage(format!("unknown beta kind '{other}'"))),
    };
    let spec = GeneratorSpec {
        docs,
        doc_len: len,
        alpha: vec![alpha; k],
        beta,
        labels,
    };
    let synthetic = lda::generate_corpus::<f64>(&spec, &rng)?;
    data_io::save_corpus(&output, &synthetic.corpus)?;
    if let Some(p) = truth_path {
        data_io::save_truth(&p, &synthetic.corpus, &synthetic.truth)?;
    }
    log::info!("wrote {docs} groups to {}", output.display());
    Ok(())
}

fn hyper_from(m: ModelArgs, s: &Settings, k: usize) -> CliResult<HyperParams<f64>> {
    let mut hyper = HyperParams::<f64>::with_topics(k)?;
    if let Some(alpha) = s.get(m.alpha, "alpha")? {
        hyper.alpha = PositiveVector::symmetric(k, alpha)?;
    }
    hyper.lambda = s.or(m.lambda, "lambda", hyper.lambda)?;
    hyper.gamma = s.or(m.gamma, "gamma", hyper.gamma)?;
    hyper.n_iter = s.or(m.n_iter, "n-iter", hyper.n_iter)?;
    hyper.rho = s.or(m.rho, "rho", hyper.rho)?;
    hyper.validate()?;
    Ok(hyper)
}

fn train(a: TrainArgs, s: &Settings) -> CliResult<()> {
    let corpus_path: PathBuf = s.required(a.corpus, "corpus")?;
    let heldout_path: Option<PathBuf> = s.get(a.heldout, "heldout")?;
    let output: PathBuf = s.required(a.output, "output")?;
    let metrics_path: Option<PathBuf> = s.get(a.metrics, "metrics")?;
    let corpus: Corpus<f64> = data_io::load_corpus(&corpus_path)?;
    let heldout = match &heldout_path {
        Some(p) => data_io::load_corpus::<f64>(p)?.groups,
        None => Vec::new(),
    };
    let hyper = hyper_from(a.model, s, corpus.k)?;

    let default_encoder = match corpus.payload {
        PayloadSpec::Token { .. } => "table",
        PayloadSpec::Dense { .. } => "mlp",
    };
    let encoder: String = s.or(a.encoder, "encoder", default_encoder.to_owned())?;
    let hidden: String = s.or(a.hidden, "hidden", "128".to_owned())?;
    let activation: String = s.or(a.activation, "activation", "tanh".to_owned())?;
    let spec = match (encoder.as_str(), corpus.payload) {
        ("table", PayloadSpec::Token { vocab_size }) => EncoderSpec::Table {
            topics: corpus.k,
            vocab_size,
        },
        ("mlp", PayloadSpec::Dense { dim }) => EncoderSpec::Mlp {
            input: dim,
            hidden: hidden
                .split(',')
                .filter(|w| !w.trim().is_empty())
                .map(|w| parse_choice(w.trim(), "hidden width"))
                .collect::<CliResult<Vec<usize>>>()?,
            topics: corpus.k,
            activation: parse_choice::<Activation>(&activation, "activation")?,
        },
        ("table", _) | ("mlp", _) => {
            return Err(Failure::Core(Error::contract(format!(
                "encoder '{encoder}' does not fit the corpus payload"
            ))))
        }
        (other, _) => return Err(usage(format!("unknown encoder '{other}'"))),
    };
    let default_lr = if encoder == "table" { 0.05 } else { 1e-3 };
    let init_scale = s.or(
        a.init_scale,
        "init-scale",
        if encoder == "table" { 0.01 } else { 1.0 },
    )?;

    let defaults = TrainConfig::default();
    let mode: String = s.or(a.mode, "mode", "variational".to_owned())?;
    let schedule: String = s.or(a.schedule, "schedule", "constant".to_owned())?;
    let optimizer: String = s.or(a.optimizer, "optimizer", "adam".to_owned())?;
    let config = TrainConfig {
        mode: parse_choice::<Mode>(&mode, "mode")?,
        epochs: s.or(a.epochs, "epochs", defaults.epochs)?,
        batch_size: s.or(a.batch_size, "batch-size", defaults.batch_size)?,
        learning_rate: s.or(a.lr, "lr", default_lr)?,
        schedule: match schedule.as_str() {
            "constant" => LrSchedule::Constant,
            "inverse-time" => LrSchedule::InverseTime {
                decay: s.or(a.decay, "decay", 1e-3)?,
            },
            other => return Err(usage(format!("unknown schedule '{other}'"))),
        },
        optimizer: match optimizer.as_str() {
            "sgd" => OptimizerKind::Sgd,
            "momentum" => OptimizerKind::Momentum {
                beta: s.or(a.momentum, "momentum", 0.9)?,
            },
            "adam" => {
                let OptimizerKind::Adam { beta1, beta2, eps } = OptimizerKind::adam() else {
                    unreachable!()
                };
                OptimizerKind::Adam {
                    beta1: s.or(a.beta1, "beta1", beta1)?,
                    beta2: s.or(a.beta2, "beta2", beta2)?,
                    eps: s.or(a.adam_eps, "adam-eps", eps)?,
                }
            }
            other => return Err(usage(format!("unknown optimizer '{other}'"))),
        },
        seed: s.or(a.seed, "seed", defaults.seed)?,
        clamp_labels: !s.switch(a.no_clamp, "no-clamp")?,
        e_step_sweeps: s.or(a.e_step_sweeps, "e-step-sweeps", defaults.e_step_sweeps)?,
        warm_start: s.switch(a.warm_start, "warm-start")?,
    };
    s.check_all_used()?;

    let theta = init_params(&spec, init_scale, &mut SeededRng::new(config.seed).fork(1))?;
    let mut trainer = Trainer::new(theta, hyper, config.clone(), &corpus.groups)?;
    let mut lines = String::new();
    trainer.train(&corpus.groups, &heldout, |record| {
        let line = serde_json::to_string(record).expect("serializable");
        println!("{line}");
        lines.push_str(&line);
        lines.push('\n');
    })?;
    if let Some(p) = metrics_path {
        data_io::write_atomic(&p, lines.as_bytes())?;
    }
    let checkpoint = Checkpoint {
        hyper: trainer.hyper().clone(),
        regularizer: Some(trainer.regularizer().clone()),
        provenance: Provenance {
            seed: config.seed,
            epochs: trainer.epochs_completed() as u64,
            mode: mode.clone(),
        },
        encoder: trainer.into_theta(),
    };
    data_io::save_checkpoint(&output, &checkpoint)?;
    log::info!("wrote checkpoint {}", output.display());
    Ok(())
}

fn load_model_and_corpus(
    model: Option<PathBuf>,
    corpus: Option<PathBuf>,
    s: &Settings,
) -> CliResult<(Checkpoint, Corpus<f64>)> {
    let model: PathBuf = s.required(model, "model")?;
    let corpus: PathBuf = s.required(corpus, "corpus")?;
    let checkpoint = data_io::load_checkpoint(&model)?;
    let corpus: Corpus<f64> = data_io::load_corpus(&corpus)?;
    if corpus.k != checkpoint.hyper.num_topics() {
        return Err(Failure::Core(Error::contract(format!(
            "corpus has K = {} but the model has {} topics",
            corpus.k,
            checkpoint.hyper.num_topics()
        ))));
    }
    Ok((checkpoint, corpus))
}

fn infer(a: InferArgs, s: &Settings) -> CliResult<()> {
    let output: PathBuf = s.required(a.output, "output")?;
    let (cp, corpus) = load_model_and_corpus(a.model, a.corpus, s)?;
    s.check_all_used()?;
    let predictions = predictions_for(&corpus, &cp.encoder, &cp.hyper)?;
    data_io::write_predictions(&output, &predictions)?;
    Ok(())
}

fn predictions_for(
    corpus: &Corpus<f64>,
    theta: &EncoderParams<f64>,
    hyper: &HyperParams<f64>,
) -> CliResult<Vec<GroupPrediction>> {
    corpus
        .groups
        .iter()
        .map(|g| {
            let p = training::predict_group(g, theta, hyper)?;
            Ok(GroupPrediction {
                id: g.id.clone(),
                label: p.label,
                p_group: p.p_group.into_vec(),
                p_items: p.p_items.into_iter().map(|b| b.into_vec()).collect(),
            })
        })
        .collect()
}

fn load_truth_for(path: &Path, corpus: &Corpus<f64>) -> CliResult<Vec<GroupTruth>> {
    let (truth_corpus, truth) = data_io::load_truth::<f64>(path)?;
    if truth_corpus.groups.len() != corpus.groups.len()
        || truth_corpus
            .groups
            .iter()
            .zip(&corpus.groups)
            .any(|(a, b)| a.id != b.id || a.items.len() != b.items.len())
    {
        return Err(Failure::Core(Error::contract(
            "ground truth does not describe this corpus",
        )));
    }
    Ok(truth)
}

fn evaluate(a: EvalArgs, s: &Settings) -> CliResult<()> {
    let truth_path: Option<PathBuf> = s.get(a.truth, "truth")?;
    let output: Option<PathBuf> = s.get(a.output, "output")?;
    let (cp, corpus) = load_model_and_corpus(a.model, a.corpus, s)?;
    s.check_all_used()?;
    let truth = truth_path.map(|p| load_truth_for(&p, &corpus)).transpose()?;
    let report = eval::evaluate(&corpus, &cp.encoder, &cp.hyper, truth.as_deref())?;
    let json = serde_json::to_string(&report).expect("serializable");
    println!("{json}");
    if let Some(p) = output {
        data_io::write_atomic(&p, format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

fn topics(a: TopicsArgs, s: &Settings) -> CliResult<()> {
    let n = s.or(a.n, "n", 10)?;
    let (cp, corpus) = load_model_and_corpus(a.model, a.corpus, s)?;
    s.check_all_used()?;
    let listing = eval::top_items_per_topic(&corpus, &cp.encoder, &cp.hyper, n)?;
    for (k, items) in listing.iter().enumerate() {
        let texts: Vec<&str> = items.iter().map(|t| t.text.as_str()).collect();
        println!("{k}\t{}", texts.join(" "));
    }
    Ok(())
}

fn gibbs(a: GibbsArgs, s: &Settings) -> CliResult<()> {
    let corpus_path: PathBuf = s.required(a.corpus, "corpus")?;
    let defaults = GibbsConfig::default();
    let alpha = s.or(a.alpha, "alpha", HyperParams::<f64>::DEFAULT_ALPHA)?;
    let config = GibbsConfig {
        burn_in: s.or(a.burn_in, "burn-in", defaults.burn_in)?,
        samples: s.or(a.samples, "samples", defaults.samples)?,
        eta: s.or(a.eta, "eta", defaults.eta)?,
        label_weight: s.or(a.label_weight, "label-weight", defaults.label_weight)?,
    };
    let seed = s.or(a.seed, "seed", 0)?;
    let truth_path: Option<PathBuf> = s.get(a.truth, "truth")?;
    let output: Option<PathBuf> = s.get(a.output, "output")?;
    s.check_all_used()?;

    let corpus: Corpus<f64> = data_io::load_corpus(&corpus_path)?;
    let truth = truth_path.map(|p| load_truth_for(&p, &corpus)).transpose()?;
    let run = lda::run_gibbs(&corpus, vec![alpha; corpus.k], config, &mut SeededRng::new(seed))?;

    let mut summary = serde_json::json!({ "groups": corpus.groups.len(), "topics": corpus.k });
    if let Some(truth) = &truth {
        let pred: Vec<usize> = run.state.z.iter().flatten().copied().collect();
        let actual: Vec<usize> = truth.iter().flat_map(|t| t.topics.iter().copied()).collect();
        let matching = match_topics(&confusion_matrix(&pred, &actual, corpus.k)?)?;
        summary["item_accuracy"] = matching.accuracy.into();
        summary["assignment"] = matching.assignment.into();
    }
    print_json(&summary);
    if let Some(p) = output {
        let predictions: Vec<GroupPrediction> = corpus
            .groups
            .iter()
            .zip(run.pi.iter().zip(&run.item_beliefs))
            .map(|(g, (pi, beliefs))| GroupPrediction {
                id: g.id.clone(),
                label: pi.argmax(),
                p_group: pi.as_slice().to_vec(),
                p_items: beliefs.iter().map(|b| b.as_slice().to_vec()).collect(),
            })
            .collect();
        data_io::write_predictions(&p, &predictions)?;
    }
    Ok(())
}
