//! The `paintflow` command line.
//!
//! Exit codes: 0 on success, 1 for usage or validation errors, 2 for
//! failures while the work is running. Every run prints its resolved
//! configuration as a single `config {...}` JSON line first.

mod config;

use std::ffi::OsString;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use paintflow_core::cond::reference_crop;
use paintflow_core::dataset::{self, prepare_dataset, synth_corpus, validate_manifest, Manifest, PipelineConfig, Ratio};
use paintflow_core::diffusion::train::{train_toy, TrainConfig};
use paintflow_core::diffusion::{SamplerConfig, ToyModel};
use paintflow_core::edit::{DiffusionInference, EditRequest, Inference, SamplerOverrides, SessionManager, StubInference};
use paintflow_core::eval::{gram_style_score, masked_region_similarity};
use paintflow_core::image::{io, BinaryMask, RasterImage};
use paintflow_core::sbr::{self, SbrConfig};
use paintflow_core::Error;
use serde::Serialize;

use config::{data_root, FileConfig};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::NotFound(_) | Error::Format(_) | Error::Image { .. } => {
                Failure::Usage(e.to_string())
            }
            Error::Conflict(_) | Error::NonFinite(_) | Error::Io { .. } => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

#[derive(Debug, Parser)]
#[command(name = "paintflow", version, about = "Oil-painting stylization, inpainting model training and interactive editing")]
struct Cli {
    /// Random seed (default 0); overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages; output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file with optional [stylize] [synth] [dataset] [model]
    /// [schedule] [train] [sampler] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Paint an image with brush strokes.
    Stylize(StylizeArgs),
    /// Write the bundled synthetic corpus.
    SynthCorpus(SynthArgs),
    /// Build training pairs and a balanced manifest from a corpus.
    PrepareDataset(PrepareArgs),
    /// Train the toy inpainting model.
    Train(TrainArgs),
    /// Inpaint one image with a trained checkpoint.
    Sample(SampleArgs),
    /// Score inpainted pairs with the style and reference metrics.
    Eval(EvalArgs),
    /// Run the HTTP editing service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct StylizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the stroke log, one stroke per line.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    strokes_per_level: Option<usize>,
    /// Comma-separated widths, coarse to fine.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Defaults to `$PAINTFLOW_DATA_DIR/corpus`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Debug, Args)]
struct PrepareArgs {
    /// Defaults to `$PAINTFLOW_DATA_DIR/corpus`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Defaults to `$PAINTFLOW_DATA_DIR/dataset`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Foreground to background ratio, e.g. 4:1.
    #[arg(long)]
    ratio: Option<Ratio>,
    /// Resize images to this square side first.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    val_every: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Defaults to `$PAINTFLOW_DATA_DIR/dataset`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output checkpoint; defaults to `$PAINTFLOW_DATA_DIR/model.pfck`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    log_every: Option<usize>,
    /// Tab-separated per-window losses.
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SamplerArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    guidance: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Skip known-region compositing.
    #[arg(long)]
    no_composite: bool,
    /// Disable style-aligned keys and values.
    #[arg(long)]
    no_style_align: bool,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Defaults to `$PAINTFLOW_DATA_DIR/model.pfck`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Empty when omitted.
    #[arg(long)]
    sketch: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value = "")]
    prompt: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Defaults to `$PAINTFLOW_DATA_DIR/dataset`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Inpaint each pair with this model.
    #[arg(long, conflicts_with = "outputs")]
    checkpoint: Option<PathBuf>,
    /// Score precomputed `<pair id>.png` files from this directory instead.
    #[arg(long)]
    outputs: Option<PathBuf>,
    /// Only the first N manifest entries.
    #[arg(long)]
    limit: Option<usize>,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Session storage; defaults to `$PAINTFLOW_DATA_DIR/sessions`.
    #[arg(long)]
    sessions: Option<PathBuf>,
    /// Serve a trained model; without it, edits use stroke-based stub inference.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    sampler: SamplerArgs,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Runtime(m) => eprintln!("failed: {m}"),
            }
            f.code()
        }
    }
}

fn echo<T: Serialize>(resolved: &T) -> CliResult {
    let json = serde_json::to_string(resolved).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("config {json}");
    Ok(())
}

fn require_file(path: &Path, what: &str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> CliResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} is not a directory", path.display())))
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn execute(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let file = FileConfig::load(cli.config.as_deref())?;
    let ctx = Ctx {
        seed: cli.seed,
        threads: cli.threads.unwrap_or_else(rayon::current_num_threads),
        file,
    };
    match cli.command {
        Command::Stylize(a) => stylize(&ctx, a),
        Command::SynthCorpus(a) => synth(&ctx, a),
        Command::PrepareDataset(a) => prepare(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Sample(a) => sample(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
    }
}

struct Ctx {
    seed: Option<u64>,
    threads: usize,
    file: FileConfig,
}

impl Ctx {
    fn sampler(&self, a: &SamplerArgs) -> SamplerConfig {
        let mut cfg = self.file.sampler.clone().unwrap_or_default();
        if let Some(v) = a.steps {
            cfg.steps = v;
        }
        if let Some(v) = a.guidance {
            cfg.guidance = v;
        }
        if let Some(v) = a.eta {
            cfg.eta = v;
        }
        if a.no_composite {
            cfg.composite = false;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg
    }
}

fn stylize(ctx: &Ctx, a: StylizeArgs) -> CliResult {
    require_file(&a.input, "input")?;
    let mut cfg: SbrConfig = ctx.file.stylize.clone().unwrap_or_default();
    if let Some(n) = a.strokes_per_level {
        cfg.strokes_per_level = n;
    }
    if let Some(w) = a.widths {
        cfg.pyramid_levels = w.len();
        cfg.width_schedule = w;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    echo(&serde_json::json!({
        "command": "stylize", "in": a.input, "out": a.out, "log": a.log,
        "threads": ctx.threads, "seed": cfg.seed, "sbr": cfg,
    }))?;
    let img = io::load_png(&a.input)?.to_rgb();
    let (canvas, log) = sbr::stylize(&img, &cfg)?;
    io::save_png(&canvas, &a.out)?;
    if let Some(path) = &a.log {
        fs::write(path, log.to_lines()).map_err(|e| io_failure(path, e))?;
    }
    println!(
        "strokes {} residual {:.6} -> {:.6}",
        log.len(),
        log.initial_residual,
        log.final_residual()
    );
    Ok(())
}

fn synth(ctx: &Ctx, a: SynthArgs) -> CliResult {
    let out = a.out.unwrap_or_else(|| data_root().join("corpus"));
    let mut cfg = ctx.file.synth.clone().unwrap_or_default();
    if let Some(v) = a.count {
        cfg.count = v;
    }
    if let Some(v) = a.size {
        cfg.size = v;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    echo(&serde_json::json!({
        "command": "synth-corpus", "out": out, "threads": ctx.threads, "seed": cfg.seed, "synth": cfg,
    }))?;
    let records = synth_corpus(&out, &cfg)?;
    println!("records {}", records.len());
    Ok(())
}

fn prepare(ctx: &Ctx, a: PrepareArgs) -> CliResult {
    let corpus = a.corpus.unwrap_or_else(|| data_root().join("corpus"));
    let out = a.out.unwrap_or_else(|| data_root().join("dataset"));
    require_dir(&corpus, "corpus")?;
    let mut cfg: PipelineConfig = ctx.file.dataset.clone().unwrap_or_default();
    if let Some(v) = a.ratio {
        cfg.ratio = v;
    }
    if let Some(v) = a.size {
        cfg.size = Some(v);
    }
    if let Some(v) = a.val_every {
        cfg.val_every = v;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    echo(&serde_json::json!({
        "command": "prepare-dataset", "corpus": corpus, "out": out,
        "threads": ctx.threads, "seed": cfg.seed, "dataset": cfg,
    }))?;
    let report = prepare_dataset(&corpus, &out, &cfg)?;
    for s in &report.skipped {
        println!("skipped {}\t{}", s.source, s.reason);
    }
    println!("{}", report.manifest.header());
    println!(
        "built {} kept {} skipped {} manifest {}",
        report.built,
        report.manifest.entries.len(),
        report.skipped.len(),
        report.manifest_path.display()
    );
    let check = validate_manifest(&out, &report.manifest);
    if !check.failures.is_empty() {
        for (path, why) in &check.failures {
            eprintln!("invalid pair {path}: {why}");
        }
        return Err(Failure::Runtime(format!("{} emitted pairs failed validation", check.failures.len())));
    }
    Ok(())
}

fn load_dataset(root: &Path) -> CliResult<(Manifest, Vec<dataset::TrainingPair>)> {
    require_dir(root, "dataset")?;
    let manifest_path = root.join("manifest.txt");
    require_file(&manifest_path, "manifest")?;
    let manifest = Manifest::read(&manifest_path)?;
    let pairs = dataset::load_manifest_pairs(root, &manifest)?;
    Ok((manifest, pairs))
}

fn train(ctx: &Ctx, a: TrainArgs) -> CliResult {
    let root = a.dataset.unwrap_or_else(|| data_root().join("dataset"));
    let ckpt = a.checkpoint.unwrap_or_else(|| data_root().join("model.pfck"));
    let mut cfg: TrainConfig = ctx.file.train.clone().unwrap_or_default();
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.log_every {
        cfg.log_every = v;
    }
    let mut model_cfg = ctx.file.model.clone().unwrap_or_default();
    if let Some(s) = ctx.seed {
        cfg.seed = s;
        model_cfg.seed = s;
    }
    let schedule = ctx.file.schedule.unwrap_or_default();
    cfg.validate()?;
    model_cfg.validate()?;
    let (_, pairs) = load_dataset(&root)?;
    echo(&serde_json::json!({
        "command": "train", "dataset": root, "checkpoint": ckpt, "loss_log": a.loss_log,
        "threads": ctx.threads, "seed": cfg.seed, "train": cfg, "model": model_cfg, "schedule": schedule,
    }))?;
    let mut model = ToyModel::new(model_cfg, schedule)?;
    let log = train_toy(&mut model, &pairs, &cfg, |step, loss| println!("step {step}\tloss {loss:.6}"))?;
    if let Some(parent) = ckpt.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    model.save(&ckpt)?;
    if let Some(path) = &a.loss_log {
        let text: String = log.smoothed.iter().map(|(s, l)| format!("{s}\t{l:.9}\n")).collect();
        fs::write(path, text).map_err(|e| io_failure(path, e))?;
    }
    if let (Some(first), Some(last)) = (log.initial(), log.last()) {
        println!("smoothed loss {first:.6} -> {last:.6} ({:.3} of initial)", last / first);
    }
    Ok(())
}

fn load_model(path: &Path) -> CliResult<Arc<ToyModel>> {
    require_file(path, "checkpoint")?;
    Ok(Arc::new(ToyModel::load(path)?))
}

fn sample(ctx: &Ctx, a: SampleArgs) -> CliResult {
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| data_root().join("model.pfck"));
    require_file(&a.source, "source")?;
    require_file(&a.mask, "mask")?;
    if let Some(p) = &a.sketch {
        require_file(p, "sketch")?;
    }
    if let Some(p) = &a.reference {
        require_file(p, "reference")?;
    }
    let cfg = ctx.sampler(&a.sampler);
    echo(&serde_json::json!({
        "command": "sample", "checkpoint": ckpt, "source": a.source, "mask": a.mask,
        "sketch": a.sketch, "reference": a.reference, "prompt": a.prompt, "out": a.out,
        "style_align": !a.sampler.no_style_align, "threads": ctx.threads, "seed": cfg.seed, "sampler": cfg,
    }))?;
    let model = load_model(&ckpt)?;
    cfg.validate(&model.schedule)?;
    let source = io::load_png(&a.source)?.to_rgb();
    let mask = io::load_mask_png(&a.mask)?;
    let sketch = match &a.sketch {
        Some(p) => io::load_mask_png(p)?,
        None => BinaryMask::zeros(mask.height(), mask.width())?,
    };
    let reference = a.reference.as_ref().map(|p| io::load_png(p).map(|r| r.to_rgb())).transpose()?;
    let inference = DiffusionInference {
        model,
        defaults: cfg,
        style_alignment: !a.sampler.no_style_align,
    };
    let req = EditRequest {
        mask,
        sketch,
        reference,
        prompt: a.prompt,
        sampler: SamplerOverrides::default(),
    };
    req.validate(source.height(), source.width())?;
    let out = inference.infer(&source, &req)?;
    io::save_png(&out, &a.out)?;
    Ok(())
}

fn eval(ctx: &Ctx, a: EvalArgs) -> CliResult {
    let root = a.dataset.clone().unwrap_or_else(|| data_root().join("dataset"));
    let cfg = ctx.sampler(&a.sampler);
    if a.checkpoint.is_none() == a.outputs.is_none() {
        return Err(Failure::Usage("pass exactly one of --checkpoint or --outputs".into()));
    }
    if let Some(d) = &a.outputs {
        require_dir(d, "outputs")?;
    }
    echo(&serde_json::json!({
        "command": "eval", "dataset": root, "checkpoint": a.checkpoint, "outputs": a.outputs,
        "limit": a.limit, "report": a.report, "style_align": !a.sampler.no_style_align,
        "threads": ctx.threads, "seed": cfg.seed, "sampler": cfg,
    }))?;
    let (manifest, pairs) = load_dataset(&root)?;
    let inference = match &a.checkpoint {
        Some(p) => {
            let model = load_model(p)?;
            cfg.validate(&model.schedule)?;
            Some(DiffusionInference {
                model,
                defaults: cfg.clone(),
                style_alignment: !a.sampler.no_style_align,
            })
        }
        None => None,
    };
    let n = a.limit.unwrap_or(pairs.len()).min(pairs.len());
    let mut report = String::from("pair\tgram\tmasked_sim\n");
    print!("{report}");
    let (mut gram_sum, mut sim_sum) = (0.0, 0.0);
    for (entry, pair) in manifest.entries.iter().zip(&pairs).take(n) {
        let id = Path::new(&entry.path)
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| entry.path.clone());
        let reference = reference_crop(&pair.target, &pair.mask)?;
        let output: RasterImage = match (&inference, &a.outputs) {
            (Some(inf), _) => {
                let req = EditRequest {
                    mask: pair.mask.clone(),
                    sketch: pair.sketch.clone(),
                    reference: Some(reference.clone()),
                    prompt: pair.prompt.clone(),
                    sampler: SamplerOverrides::default(),
                };
                inf.infer(&pair.target, &req)?
            }
            (None, Some(dir)) => {
                let path = dir.join(format!("{id}.png"));
                require_file(&path, "output")?;
                io::load_png(&path)?.to_rgb()
            }
            (None, None) => unreachable!("checked above"),
        };
        let gram = gram_style_score(&output, &pair.target)?;
        let sim = masked_region_similarity(&output, &reference, &pair.mask)?;
        gram_sum += gram;
        sim_sum += sim;
        let line = format!("{id}\t{gram:.6}\t{sim:.6}\n");
        print!("{line}");
        report.push_str(&line);
    }
    if n > 0 {
        println!("mean\t{:.6}\t{:.6}", gram_sum / n as f64, sim_sum / n as f64);
    }
    if let Some(path) = &a.report {
        fs::write(path, report).map_err(|e| io_failure(path, e))?;
    }
    Ok(())
}

fn serve(ctx: &Ctx, a: ServeArgs) -> CliResult {
    let sessions = a.sessions.clone().unwrap_or_else(|| data_root().join("sessions"));
    let cfg = ctx.sampler(&a.sampler);
    echo(&serde_json::json!({
        "command": "serve", "addr": a.addr, "sessions": sessions, "checkpoint": a.checkpoint,
        "style_align": !a.sampler.no_style_align, "threads": ctx.threads, "seed": cfg.seed, "sampler": cfg,
    }))?;
    let inference: Arc<dyn Inference> = match &a.checkpoint {
        Some(p) => {
            let model = load_model(p)?;
            cfg.validate(&model.schedule)?;
            Arc::new(DiffusionInference {
                model,
                defaults: cfg,
                style_alignment: !a.sampler.no_style_align,
            })
        }
        None => Arc::new(StubInference::default()),
    };
    let manager = Arc::new(SessionManager::new(inference, Some(sessions))?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    rt.block_on(paintflow_service::serve(a.addr, manager))
        .map_err(|e| Failure::Runtime(format!("server on {}: {e}", a.addr)))
}
