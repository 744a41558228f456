use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use emotion_tsn::data::{generate_fixture, parse_annotations, FixtureConfig, Split};
use emotion_tsn::harness::{self, fuse_scores, read_predictions, write_predictions, RunConfig};
use emotion_tsn::losses::EmbeddingDistance;
use emotion_tsn::metrics::evaluate;
use emotion_tsn::model::NetworkKind;
use emotion_tsn::taxonomy::EmotionTaxonomy;
use emotion_tsn::{Error, Result};

#[derive(Parser)]
#[command(name = "emotion-tsn", version, about = "Bodily emotion recognition with two-stream TSNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic dataset.
    Fixture(FixtureArgs),
    /// Train one network; writes a run directory.
    Train(Box<TrainArgs>),
    /// Score a predictions file against annotations; prints a JSON report.
    Evaluate(EvaluateArgs),
    /// Predict every instance with a checkpoint.
    Predict(PredictArgs),
    /// Average the scores of several prediction files.
    Fuse(FuseArgs),
    /// 2-d PCA projection of the label embeddings as CSV `label,x,y`.
    PlotEmbeddings(PlotArgs),
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    instances: usize,
    #[arg(long, default_value_t = 12)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    image_size: u32,
    #[arg(long, default_value_t = 8)]
    embedding_dim: usize,
    /// Random labels instead of label-dependent appearance and motion.
    #[arg(long)]
    noise: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Network {
    RgbB,
    RgbC,
    RgbBc,
    FlowB,
}

impl From<Network> for NetworkKind {
    fn from(n: Network) -> Self {
        match n {
            Network::RgbB => NetworkKind::RgbB,
            Network::RgbC => NetworkKind::RgbC,
            Network::RgbBc => NetworkKind::RgbBc,
            Network::FlowB => NetworkKind::FlowB,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Distance {
    Euclidean,
    SquaredEuclidean,
}

/// Dataset location: annotations file, frame root (defaults to the annotation
/// file's directory) and label files (default to `labels.txt` / `embeddings.txt` there).
#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    root: Option<PathBuf>,
}

impl DataArgs {
    fn root(&self) -> PathBuf {
        self.root.clone().unwrap_or_else(|| parent(&self.annotations))
    }
}

#[derive(Args)]
struct TaxonomyArgs {
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

impl TaxonomyArgs {
    fn load(&self, dir: &Path) -> Result<EmotionTaxonomy> {
        let labels = self.labels.clone().unwrap_or_else(|| dir.join("labels.txt"));
        let embeddings = self.embeddings.clone().unwrap_or_else(|| dir.join("embeddings.txt"));
        EmotionTaxonomy::load(&labels, &embeddings)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    taxonomy: TaxonomyArgs,
    /// Validation annotations (same frame root).
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with RunConfig keys; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    network: Option<Network>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    k_train: Option<usize>,
    #[arg(long)]
    k_test: Option<usize>,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    flow_snippet_len: Option<usize>,
    #[arg(long)]
    validate_every: Option<usize>,
    #[arg(long, value_enum)]
    emb_distance: Option<Distance>,
    /// Drop the embedding loss term.
    #[arg(long)]
    no_emb: bool,
    /// Keep every normalization layer updating its statistics.
    #[arg(long)]
    no_partial_bn: bool,
    #[arg(long)]
    init_weights: Option<PathBuf>,
}

impl TrainArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.network {
            c.network = v.into();
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.k_train {
            c.k_train = v;
        }
        if let Some(v) = self.k_test {
            c.k_test = v;
        }
        if let Some(v) = self.input_size {
            c.input_size = v;
        }
        if let Some(v) = self.flow_snippet_len {
            c.flow_snippet_len = v;
        }
        if let Some(v) = self.validate_every {
            c.validate_every = v;
        }
        if let Some(v) = self.emb_distance {
            c.emb_distance = match v {
                Distance::Euclidean => EmbeddingDistance::Euclidean,
                Distance::SquaredEuclidean => EmbeddingDistance::SquaredEuclidean,
            };
        }
        if self.no_emb {
            c.use_emb = false;
        }
        if self.no_partial_bn {
            c.partial_bn = false;
        }
        if let Some(p) = &self.init_weights {
            c.init_weights = Some(p.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = emotion_tsn::data::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for uniformity; evaluation draws no random numbers.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint parameter file or its JSON sidecar.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 25)]
    k_test: usize,
    #[arg(long)]
    out: PathBuf,
    /// Accepted for uniformity; test-time sampling is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Accepted for uniformity; fusion draws no random numbers.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for uniformity; PCA draws no random numbers.
    #[arg(long)]
    seed: Option<u64>,
}

fn parent(p: &Path) -> PathBuf {
    p.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fixture(a) => {
            let cfg = FixtureConfig {
                seed: a.seed,
                n_instances: a.instances,
                frames_per_clip: a.frames,
                image_size: a.image_size,
                separable: !a.noise,
                embedding_dim: a.embedding_dim,
            };
            let ds = generate_fixture(&cfg, &a.out)?;
            println!("wrote {} instances to {}", ds.len(), a.out.display());
        }
        Command::Train(a) => {
            let config = a.run_config()?;
            let root = a.data.root();
            let taxonomy = a.taxonomy.load(&root)?;
            let train_set = parse_annotations(&a.data.annotations, &root, Split::Train)?;
            let val_set = a
                .val
                .as_deref()
                .map(|p| parse_annotations(p, &root, Split::Val))
                .transpose()?;
            let summary = harness::train(&config, &taxonomy, &train_set, val_set.as_ref(), &a.out)?;
            match (summary.best_epoch, &summary.best_checkpoint) {
                (Some(e), Some(p)) => println!("best epoch {e}: {}", p.display()),
                _ => println!("no validation; {} epochs written to {}", summary.history.len(), a.out.display()),
            }
        }
        Command::Evaluate(a) => {
            let ds = parse_annotations(&a.data.annotations, &a.data.root(), Split::Test)?;
            let records = read_predictions(&a.predictions)?;
            let report = evaluate(&harness::keyed(&records), &ds, a.threshold)?;
            let json = serde_json_pretty(&report)?;
            emit(a.out.as_deref(), &json)?;
        }
        Command::Predict(a) => {
            let ds = parse_annotations(&a.data.annotations, &a.data.root(), Split::Test)?;
            let records = harness::predict(&a.checkpoint, &ds, a.k_test)?;
            write_predictions(&a.out, &records)?;
            println!("wrote {} predictions to {}", records.len(), a.out.display());
        }
        Command::Fuse(a) => {
            let inputs = a
                .inputs
                .iter()
                .map(|p| read_predictions(p))
                .collect::<Result<Vec<_>>>()?;
            write_predictions(&a.out, &fuse_scores(&inputs)?)?;
        }
        Command::PlotEmbeddings(a) => {
            let tax = EmotionTaxonomy::load(&a.labels, &a.embeddings)?;
            let points = tax.pca_project(2)?;
            let mut csv = String::from("label,x,y\n");
            for (label, p) in tax.labels().iter().zip(&points) {
                writeln!(csv, "{label},{},{}", p[0], p[1]).unwrap();
            }
            emit(a.out.as_deref(), &csv)?;
        }
    }
    Ok(())
}

fn serde_json_pretty(report: &emotion_tsn::metrics::MetricsReport) -> Result<String> {
    Ok(format!("{}\n", serde_json::to_string_pretty(report)?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
