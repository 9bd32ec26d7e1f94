//! Argument parsing and verb dispatch for the `ncam` binary.

use std::fs;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ncam_core::data::gen_glyphs;
use ncam_core::genelab::{self, SpliceRecipe};
use ncam_core::image_io::{save_gif, save_png};
use ncam_core::optim::CosineDecay;
use ncam_core::train::image_mse;
use ncam_core::{
    evaluate, Checkpoint, Dataset, DatasetSpec, DnaEncoding, EncodingMode, EvalOptions, ForwardOptions, GlyphStyle,
    ModelConfig, Ncam, NcamError, TrainConfig, Trainer,
};

use crate::service::{self, AppState};

/// Milliseconds per frame of the growth animations.
const GIF_FRAME_MS: u32 = 80;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration (exit 2).
    Usage(String),
    /// Unreadable or malformed input data (exit 3).
    Data(String),
    Core(NcamError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<NcamError> for CliError {
    fn from(e: NcamError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    /// 0 success, 2 usage, 3 data error, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(e) => match e {
                NcamError::Diverged { .. } => 4,
                NcamError::Malformed { .. }
                | NcamError::Io { .. }
                | NcamError::Image(_)
                | NcamError::EmptyDataset
                | NcamError::UnknownId(_) => 3,
                NcamError::Config(_) | NcamError::Precondition(_) | NcamError::Autodiff(_) => 2,
            },
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "ncam", version, about = "Neural cellular automata manifold: train, grow and splice images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model (or resume training) and write a checkpoint.
    Train(TrainArgs),
    /// Reconstruction MSE of every dataset image, as JSON.
    Eval(EvalArgs),
    /// Grow one image and write its frames, an animation and the final PNG.
    Grow(GrowArgs),
    /// Print the encoding of one image.
    Encode(EncodeArgs),
    /// Splice a group mean into a target and grow the result.
    Splice(SpliceArgs),
    /// Write the DNA of dataset images in the letter export format.
    ExportDna(ExportDnaArgs),
    /// Serve the HTTP API over a checkpoint.
    Serve(ServeArgs),
    /// Write the procedural glyph set as PNG files.
    GenDataset(GenDatasetArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Continuous encoding.
    Ce,
    /// Categorical DNA encoding.
    Dna,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum UpdateArg {
    /// Every cell updates every step.
    Sync,
    /// Each cell updates with probability 0.5.
    Stochastic,
}

/// Dataset description on the command line:
/// `glyphs[:COUNT[:SIZE[:STYLE[:SEED]]]]`, `cifar:PATH[:LIMIT]` or
/// `png:DIR[:SIZE]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetArg(pub DatasetSpec);

impl FromStr for DatasetArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let num = |v: &str, what: &str| v.parse::<u64>().map_err(|_| format!("{what} {v:?} is not a number"));
        let spec = match kind {
            "glyphs" => {
                let parts: Vec<&str> = if rest.is_empty() { vec![] } else { rest.split(':').collect() };
                if parts.len() > 4 {
                    return Err(format!("too many fields in {s:?}"));
                }
                let count = parts.first().map(|v| num(v, "count")).transpose()?.unwrap_or(16) as usize;
                let size = parts.get(1).map(|v| num(v, "size")).transpose()?.unwrap_or(16) as usize;
                let style = parts.get(2).map(|v| v.parse::<GlyphStyle>()).transpose().map_err(|e| e.to_string())?;
                let seed = parts.get(3).map(|v| num(v, "seed")).transpose()?.unwrap_or(7);
                DatasetSpec::Glyphs {
                    count,
                    size,
                    style: style.unwrap_or(GlyphStyle::Lines),
                    seed,
                }
            }
            "cifar" | "png" => {
                if rest.is_empty() {
                    return Err(format!("{kind} datasets need a path, e.g. {kind}:/data"));
                }
                // a trailing numeric field is the limit / size; paths may contain ':'
                let (path, extra) = match rest.rsplit_once(':') {
                    Some((p, n)) if !p.is_empty() && n.parse::<u64>().is_ok() => (p, Some(num(n, "number")? as usize)),
                    _ => (rest, None),
                };
                if kind == "cifar" {
                    DatasetSpec::Cifar {
                        path: PathBuf::from(path),
                        limit: extra,
                    }
                } else {
                    DatasetSpec::PngDir {
                        path: PathBuf::from(path),
                        size: extra,
                        visible: 4,
                    }
                }
            }
            other => return Err(format!("unknown dataset kind {other:?} (expected glyphs, cifar or png)")),
        };
        Ok(DatasetArg(spec))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training images.
    #[arg(long, default_value = "glyphs")]
    pub dataset: DatasetArg,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Resume from this checkpoint instead of initializing a new model;
    /// model and optimizer settings come from the checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Ce)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = UpdateArg::Sync)]
    pub update: UpdateArg,
    #[arg(long, default_value_t = 2000)]
    pub steps: u64,
    /// Encoding length D.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Automaton steps per growth.
    #[arg(long, default_value_t = 32)]
    pub nca_steps: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    /// Cosine-decay the learning rate over `--steps` down to this fraction
    /// of `--lr`; 1 keeps it constant.
    #[arg(long, default_value_t = 0.05)]
    pub lr_final: f64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Fraction of DNA letters replaced during training.
    #[arg(long, default_value_t = 0.5)]
    pub mutation: f64,
    #[arg(long, env = "NCAM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Append `step,loss,lf_nca,wallclock_ms` lines to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Also write the checkpoint every N steps.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: u64,
    /// Freeze every leak factor at 1.
    #[arg(long)]
    pub no_leak_factors: bool,
    /// Skip the per-step instance normalization of the perception.
    #[arg(long)]
    pub no_norm: bool,
    /// Pool the encoder trunk with a plain channel mean instead of slices.
    #[arg(long)]
    pub no_slices: bool,
    /// Composite over white before the loss.
    #[arg(long)]
    pub composite_white: bool,
}

#[derive(Debug, Args)]
pub struct ModelSource {
    /// Checkpoint to load.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset override; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    pub dataset: Option<DatasetArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Repetitions for stochastic models or mutation.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// Fraction of DNA letters replaced before decoding.
    #[arg(long, default_value_t = 0.0)]
    pub mutation: f64,
    /// Decode the one-hot projection of the DNA.
    #[arg(long)]
    pub discretize: bool,
    #[arg(long, env = "NCAM_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GrowArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Dataset image to reconstruct.
    #[arg(long, conflicts_with = "dna", required_unless_present = "dna")]
    pub image_id: Option<usize>,
    /// DNA export file to grow instead of a dataset image.
    #[arg(long)]
    pub dna: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub frames_every: usize,
    /// Output directory.
    #[arg(long, default_value = "grow-out")]
    pub out: PathBuf,
    #[arg(long, env = "NCAM_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long)]
    pub image_id: usize,
}

#[derive(Debug, Args)]
pub struct SpliceArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// JSON recipe `{"source_ids": [...], "tau": .., "target_id": ..}`.
    #[arg(long, conflicts_with_all = ["sources", "tau", "target"])]
    pub recipe: Option<PathBuf>,
    /// Comma-separated source image ids.
    #[arg(long, value_delimiter = ',', required_unless_present = "recipe")]
    pub sources: Vec<usize>,
    #[arg(long, required_unless_present = "recipe")]
    pub tau: Option<f64>,
    #[arg(long, required_unless_present = "recipe")]
    pub target: Option<usize>,
    /// Average soft probabilities instead of one-hot letters.
    #[arg(long)]
    pub soft: bool,
    #[arg(long, default_value_t = 4)]
    pub frames_every: usize,
    #[arg(long, default_value = "splice-out")]
    pub out: PathBuf,
    #[arg(long, env = "NCAM_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExportDnaArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Only this image; otherwise every image.
    #[arg(long)]
    pub image_id: Option<usize>,
    /// Output directory (one `<id>.dna` file per image); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value = "lines")]
    pub style: GlyphStyle,
    #[arg(long, env = "NCAM_SEED", default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Grow(a) => grow(a),
        Command::Encode(a) => encode(a),
        Command::Splice(a) => splice(a),
        Command::ExportDna(a) => export_dna(a),
        Command::Serve(a) => serve(a),
        Command::GenDataset(a) => gen_dataset(a),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn model_config(a: &TrainArgs, data: &Dataset) -> CliResult<ModelConfig> {
    let mode = match a.mode {
        ModeArg::Ce => EncodingMode::Continuous,
        ModeArg::Dna => EncodingMode::Dna,
    };
    let mut mc = ModelConfig::desk(data.visible, data.height, data.width, a.dim, mode);
    mc.nca.update_prob = match a.update {
        UpdateArg::Sync => 1.0,
        UpdateArg::Stochastic => 0.5,
    };
    mc.nca.steps = a.nca_steps;
    mc.nca.normalize = !a.no_norm;
    mc.encoder.slices = !a.no_slices;
    mc.leak_factors = !a.no_leak_factors;
    mc.init_seed = a.seed;
    mc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(mc)
}

fn train(a: TrainArgs) -> CliResult {
    let (mut trainer, data) = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let spec = ckpt.dataset.clone().unwrap_or_else(|| a.dataset.0.clone());
            let data = spec.load()?;
            let mut t = Trainer::from_checkpoint(ckpt)?;
            t.dataset = Some(spec);
            (t, data)
        }
        None => {
            let data = a.dataset.0.load()?;
            let mc = model_config(&a, &data)?;
            let mut tc = TrainConfig::default();
            tc.adam.lr = a.lr;
            if !(a.lr_final > 0.0 && a.lr_final <= 1.0) {
                return Err(CliError::Usage("--lr-final must lie in (0, 1]".into()));
            }
            if a.lr_final < 1.0 {
                tc.adam.decay = Some(CosineDecay {
                    steps: a.steps,
                    final_fraction: a.lr_final,
                });
            }
            tc.batch_size = a.batch;
            tc.mutation_rate = a.mutation;
            tc.seed = a.seed;
            tc.composite_white = a.composite_white;
            tc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let mut t = Trainer::new(Ncam::new(mc)?, tc)?;
            t.dataset = Some(a.dataset.0.clone());
            (t, data)
        }
    };
    let mut log = match &a.log {
        Some(p) => Some(BufWriter::new(
            fs::OpenOptions::new().create(true).append(true).open(p).map_err(|e| io_err(p, e))?,
        )),
        None => None,
    };
    let history = trainer.run(
        &data,
        a.steps,
        log.as_mut().map(|w| w as &mut dyn Write),
        Some((a.out.as_path(), a.checkpoint_every)),
    )?;
    if let Some(w) = log.as_mut() {
        w.flush().map_err(|e| io_err(a.log.as_deref().unwrap_or(Path::new("log")), e))?;
    }
    let last = history.last().map(|s| s.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} steps (total {}), last batch loss {last:.6}, checkpoint {}",
        a.steps,
        trainer.step,
        a.out.display()
    );
    Ok(())
}

fn load(source: &ModelSource) -> CliResult<(Ncam, Dataset)> {
    let ckpt = Checkpoint::load(&source.ckpt)?;
    let spec = match (&source.dataset, ckpt.dataset) {
        (Some(d), _) => d.0.clone(),
        (None, Some(spec)) => spec,
        (None, None) => {
            return Err(CliError::Usage(
                "the checkpoint records no dataset; pass --dataset".into(),
            ))
        }
    };
    Ok((ckpt.model, spec.load()?))
}

fn eval(a: EvalArgs) -> CliResult {
    let (model, data) = load(&a.source)?;
    let opts = EvalOptions {
        seeds: a.seeds,
        mutation_rate: a.mutation,
        discretize: a.discretize,
        seed: a.seed,
        composite_white: false,
    };
    let report = evaluate(&model, &data, &opts)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    eprintln!(
        "mean MSE {:.6} ± {:.6} over {} seed(s), {} images",
        report.mean,
        report.sd,
        report.seeds,
        report.per_image.len()
    );
    Ok(())
}

/// Writes `frame_NNN.png`, `growth.gif` and `final.png` into `dir`.
fn write_growth(dir: &Path, frames: &[ncam_core::Tensor<f32>], final_image: &ncam_core::Tensor<f32>) -> CliResult {
    create_dir(dir)?;
    for (i, f) in frames.iter().enumerate() {
        save_png(&dir.join(format!("frame_{i:03}.png")), f)?;
    }
    save_gif(&dir.join("growth.gif"), frames, GIF_FRAME_MS)?;
    save_png(&dir.join("final.png"), final_image)?;
    Ok(())
}

fn grow(a: GrowArgs) -> CliResult {
    if a.frames_every == 0 {
        return Err(CliError::Usage("--frames-every must be positive".into()));
    }
    let (model, data) = load(&a.source)?;
    let opts = ForwardOptions {
        nca_seed: a.seed,
        frames_every: Some(a.frames_every),
        ..ForwardOptions::default()
    };
    let (image, frames, mse) = match (a.image_id, &a.dna) {
        (Some(id), _) => {
            let target = &data.get(id)?.image;
            let (image, frames) = model.reconstruct_image(target, &opts)?;
            (image, frames, Some(image_mse(&model, target, &opts, false)?))
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let dna = DnaEncoding::parse_export(&text)?;
            let (image, frames) = model.grow_from_dna(&dna, &opts)?;
            (image, frames, None)
        }
        (None, None) => return Err(CliError::Usage("pass --image-id or --dna".into())),
    };
    write_growth(&a.out, &frames, &image)?;
    match mse {
        Some(m) => println!(
            "wrote {} frames and growth.gif to {} (mse {m:.6})",
            frames.len(),
            a.out.display()
        ),
        None => println!("wrote {} frames and growth.gif to {}", frames.len(), a.out.display()),
    }
    Ok(())
}

fn encode(a: EncodeArgs) -> CliResult {
    let (model, data) = load(&a.source)?;
    let image = &data.get(a.image_id)?.image;
    match model.config.mode {
        EncodingMode::Dna => print!("{}", model.dna_of_image(image)?.export()),
        EncodingMode::Continuous => {
            let e = model.encode_image(image)?;
            println!("{}", serde_json::to_string(e.data()).expect("floats serialize"));
        }
    }
    Ok(())
}

fn splice(a: SpliceArgs) -> CliResult {
    let recipe = match &a.recipe {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            serde_json::from_str::<SpliceRecipe>(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => SpliceRecipe {
            source_ids: a.sources.clone(),
            tau: a.tau.expect("required by clap"),
            target_id: a.target.expect("required by clap"),
            soft: a.soft,
        },
    };
    if a.frames_every == 0 {
        return Err(CliError::Usage("--frames-every must be positive".into()));
    }
    let (model, data) = load(&a.source)?;
    let opts = ForwardOptions {
        nca_seed: a.seed,
        frames_every: Some(a.frames_every),
        ..ForwardOptions::default()
    };
    let out = genelab::run_recipe(&model, &data, &recipe, &opts)?;
    write_growth(&a.out, &out.frames, &out.image)?;
    save_png(&a.out.join("spliced.png"), &out.image)?;
    let dna_path = a.out.join("spliced.dna");
    fs::write(&dna_path, out.spliced.export()).map_err(|e| io_err(&dna_path, e))?;
    println!("{}", out.spliced.to_letters());
    eprintln!(
        "{} of {} letters asserted; wrote spliced.png and spliced.dna to {}",
        out.mean.asserted,
        out.mean.dna.rows(),
        a.out.display()
    );
    Ok(())
}

fn export_dna(a: ExportDnaArgs) -> CliResult {
    let (model, data) = load(&a.source)?;
    let ids = match a.image_id {
        Some(id) => vec![id],
        None => data.ids(),
    };
    if let Some(dir) = &a.out {
        create_dir(dir)?;
    }
    for id in ids {
        let dna = genelab::discrete_dna(&model, &data, id)?;
        match &a.out {
            Some(dir) => {
                let path = dir.join(format!("{id}.dna"));
                fs::write(&path, dna.export()).map_err(|e| io_err(&path, e))?;
            }
            None => println!("{id}\t{}", dna.to_letters()),
        }
    }
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult {
    let (model, data) = load(&a.source)?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad address: {e}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(format!("runtime: {e}")))?;
    runtime
        .block_on(service::serve(AppState::new(model, data), addr))
        .map_err(|e| CliError::Data(format!("{addr}: {e}")))
}

fn gen_dataset(a: GenDatasetArgs) -> CliResult {
    let data = gen_glyphs(a.count, a.size, a.style, a.seed)?;
    create_dir(&a.out)?;
    for item in &data.items {
        save_png(&a.out.join(format!("{:04}.png", item.id)), &item.image)?;
    }
    println!("wrote {} glyphs to {}", data.len(), a.out.display());
    Ok(())
}
