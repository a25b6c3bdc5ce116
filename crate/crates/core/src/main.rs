use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use unext::analysis::{bench_latency, count_params, emit_comparison, layer_plan, BenchOptions};
use unext::arch::{build_model, Ablation, Model, UNeXtConfig};
use unext::io::{load_dataset, load_image, read_checkpoint, save_checkpoint_with, save_mask_png, synth_dataset};
use unext::train::{binarize_logits, fit, FitOutput, TrainPlan};
use unext::verify::{run_check, FULL_MODEL, OPS, TOLERANCE};
use unext::{Error, Tape};

/// `print!` that exits quietly once the reader goes away (`unext count | head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        if let Err(e) = write!(std::io::stdout().lock(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            panic!("writing to stdout: {e}");
        }
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        out!($($arg)*);
        out!("\n");
    }};
}

#[derive(Parser)]
#[command(name = "unext", version, about = "UNeXt segmentation on the CPU: train, infer, count, benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with the multi-fold protocol and write checkpoints and logs.
    Train(TrainArgs),
    /// Segment one image with a trained checkpoint.
    Infer(InferArgs),
    /// Time single-image forwards.
    Bench(BenchArgs),
    /// Per-layer parameter and MAC counts.
    Count(CountArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Parameter and MAC rows for every ablation variant.
    Ablate(AblateArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct Source {
    /// Dataset root with images/ and masks/.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate this many synthetic ellipse samples instead.
    #[arg(long)]
    synth: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: Source,
    /// unext, unext-s, unext-l, or a key=value config file.
    #[arg(long, default_value = "unext")]
    config: String,
    #[arg(long, default_value_t = 256)]
    img_size: usize,
    #[arg(long, default_value_t = 400)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    lr_min: f64,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Validate every N epochs (0: only after the last one).
    #[arg(long, default_value_t = 0)]
    eval_every: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Checkpoint of the best fold; per-fold artifacts go next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Network input size; defaults to the size stored in the checkpoint, else 256.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "model_source")]
struct ModelSource {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    config: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelSource,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Also print the comparison against published baselines.
    #[arg(long)]
    compare: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Md,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long, default_value = "unext")]
    config: String,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Append the comparison against published baselines.
    #[arg(long)]
    compare: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Check a single op (see --list).
    #[arg(long, conflicts_with = "full")]
    op: Option<String>,
    /// Check the whole network.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long)]
    list: bool,
}

#[derive(Args)]
struct AblateArgs {
    /// Emit the ablation ladder rows.
    #[arg(long, required = true)]
    table2: bool,
    /// Base config whose widths the variants share.
    #[arg(long, default_value = "unext")]
    config: String,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

fn resolve_config(name_or_path: &str) -> unext::Result<UNeXtConfig> {
    if let Some(cfg) = UNeXtConfig::by_name(name_or_path) {
        return Ok(cfg);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(Error::Config(format!("{name_or_path:?} is neither a known config name nor a file")));
    }
    let text = std::fs::read_to_string(path)?;
    UNeXtConfig::from_kv(&text)
}

fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> unext::Result<R> {
    if threads <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn train(args: TrainArgs) -> unext::Result<()> {
    let cfg = resolve_config(&args.config)?;
    let data = match (&args.source.data, args.source.synth) {
        (Some(dir), _) => load_dataset(dir, args.img_size)?,
        (None, Some(n)) => synth_dataset(n, args.img_size, args.seed)?,
        (None, None) => unreachable!("clap enforces one source"),
    };
    eprintln!("loaded {} samples at {}x{}", data.len(), args.img_size, args.img_size);
    let plan = TrainPlan {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr_max: args.lr,
        lr_min: args.lr_min,
        seed: args.seed,
        folds: args.folds,
        eval_every: args.eval_every,
        ..TrainPlan::default()
    };
    plan.validate()?;
    let stem = args.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "unext".into());
    let run_dir = args.out.parent().unwrap_or(Path::new(".")).join(format!("{stem}_run"));
    let out = FitOutput { dir: Some(run_dir.clone()), meta: vec![("img_size".into(), args.img_size.to_string())] };
    let (report, models) = with_threads(args.threads, || {
        fit(&cfg, &data, &plan, &out, |fold, log| {
            let val = match (log.val_f1, log.val_iou) {
                (Some(f), Some(i)) => format!(" val_f1 {f:.4} val_iou {i:.4}"),
                _ => String::new(),
            };
            eprintln!("fold {fold} epoch {} lr {:.2e} loss {:.5}{val}", log.epoch, log.lr, log.train_loss);
        })
    })??;
    let best = report
        .folds
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.f1.total_cmp(&b.1.f1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    save_checkpoint_with(&models[best], &args.out, &[("img_size", args.img_size.to_string())])?;
    outln!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Training(e.to_string()))?);
    eprintln!("best fold {best} -> {}; logs in {}", args.out.display(), run_dir.display());
    Ok(())
}

fn infer(args: InferArgs) -> unext::Result<()> {
    let ck = read_checkpoint(&args.ckpt)?;
    let size = args.size.or(ck.img_size()).unwrap_or(256);
    let (x, (h, w)) = load_image(&args.input, size)?;
    let logits = ck.model.infer(&x)?;
    let tape = Tape::disabled();
    let full = tape.bilinear_resize(&tape.constant(logits), h, w)?.into_tensor();
    save_mask_png(&binarize_logits(&full), &args.out)?;
    Ok(())
}

fn model_from(src: &ModelSource) -> unext::Result<Model<f32>> {
    match (&src.ckpt, &src.config) {
        (Some(p), _) => Ok(read_checkpoint(p)?.model),
        (None, Some(c)) => {
            let mut m = build_model(&resolve_config(c)?, 0)?;
            m.set_mode(unext::arch::Mode::Eval);
            Ok(m)
        }
        (None, None) => unreachable!("clap enforces one model source"),
    }
}

fn bench(args: BenchArgs) -> unext::Result<()> {
    let model = model_from(&args.model)?;
    let opts = BenchOptions { image_size: args.size, n_images: args.n, warmup: args.warmup, threads: args.threads };
    let report = bench_latency(&model, opts)?;
    outln!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Training(e.to_string()))?);
    if args.compare {
        let cost = layer_plan(model.config(), &[1, model.config().in_channels, args.size, args.size])?;
        out!("{}", emit_comparison("UNeXt", &cost, Some(&report)).to_markdown());
    }
    Ok(())
}

fn count(args: CountArgs) -> unext::Result<()> {
    let cfg = resolve_config(&args.config)?;
    let model = build_model::<f32>(&cfg, 0)?;
    let params = count_params(&model);
    let cost = layer_plan(&cfg, &[1, cfg.in_channels, args.size, args.size])?;
    let consistency = format!(
        "params: tensors {} / closed form {} ({})",
        params.total,
        params.closed_form,
        if params.consistent() { "match" } else { "MISMATCH" }
    );
    match args.format {
        Format::Csv => out!("# {consistency}\n{}", cost.to_csv()),
        Format::Md => out!("> {consistency}  \n{}", cost.to_markdown()),
    }
    if args.compare {
        let cmp = emit_comparison("UNeXt", &cost, None);
        match args.format {
            Format::Csv => out!("\n{}", cmp.to_csv()),
            Format::Md => out!("\n{}", cmp.to_markdown()),
        }
    }
    Ok(())
}

/// Returns whether every check passed.
fn gradcheck(args: GradcheckArgs) -> unext::Result<bool> {
    if args.list {
        for op in OPS {
            outln!("{op}");
        }
        outln!("{FULL_MODEL}");
        return Ok(true);
    }
    let names: Vec<&str> = match (&args.op, args.full) {
        (Some(op), _) => vec![op.as_str()],
        (None, true) => vec![FULL_MODEL],
        (None, false) => OPS.iter().copied().chain([FULL_MODEL]).collect(),
    };
    let mut ok = true;
    outln!("op,seeds,max_rel_err,status");
    for name in names {
        let seeds = if name == FULL_MODEL { args.seeds.clamp(1, 3) } else { args.seeds };
        let outcome = run_check(name, seeds)?;
        ok &= outcome.passed();
        outln!(
            "{},{},{:.3e},{}",
            outcome.name,
            outcome.seeds,
            outcome.worst,
            if outcome.passed() { "pass" } else { "FAIL" }
        );
    }
    eprintln!("tolerance {TOLERANCE:e} (relative, 64-bit central differences)");
    Ok(ok)
}

fn ablate(args: AblateArgs) -> unext::Result<()> {
    let base = resolve_config(&args.config)?;
    if matches!(args.format, Format::Md) {
        outln!("| variant | params | params (M) | GFLOPs (MAC) |\n|---|---:|---:|---:|");
    } else {
        outln!("variant,params,params_m,gflops_mac");
    }
    for ab in Ablation::ALL {
        let cfg = ab.config(&base);
        let cost = layer_plan(&cfg, &[1, cfg.in_channels, args.size, args.size])?;
        let pm = cost.params as f64 / 1e6;
        match args.format {
            Format::Md => outln!("| {} | {} | {pm:.3} | {:.3} |", ab.label(), cost.params, cost.gflops_mac_convention),
            Format::Csv => outln!("{},{},{pm:.4},{:.4}", ab.label(), cost.params, cost.gflops_mac_convention),
        }
    }
    Ok(())
}

fn exit_for(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a).map(|_| true),
        Command::Infer(a) => infer(a).map(|_| true),
        Command::Bench(a) => bench(a).map(|_| true),
        Command::Count(a) => count(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Ablate(a) => ablate(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
