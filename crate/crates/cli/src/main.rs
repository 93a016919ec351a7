use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use objdisc_core::boxes::{generate_boxes, DEFAULT_DEDUP_IOU, DEFAULT_MIN_AREA_FRAC};
use objdisc_core::io::{load_fmap, load_mask, save_boxes, save_heatmap, save_mask};
use objdisc_core::metrics::{eval_dataset, pgm_files, EvalOptions, DEFAULT_BETA_SQ};
use objdisc_core::pca::{discover, video_discover, DiscoveryConfig, SignRule};
use objdisc_core::selfcheck;
use objdisc_core::toy::{run_toy_experiment, ToyReport, TrainConfig};
use objdisc_core::{Error, FeatureMap};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const FEATURE_EXTENSIONS: [&str; 2] = ["fmp1", "fmp"];
const TOY_HELDOUT: usize = 64;

#[derive(Parser, Debug)]
#[command(name = "objdisc", version, about = "Unsupervised object discovery on dense feature maps")]
struct Cli {
    /// Worker threads for per-file work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Principal-component discovery on FMP1 feature maps.
    Discover(DiscoverArgs),
    /// Bounding boxes from binary PGM masks.
    Bbox(BboxArgs),
    /// Saliency and localization metrics for predicted heatmaps.
    Eval(EvalArgs),
    /// Discovery on a video with RGB and flow features fused per chunk.
    Video(VideoArgs),
    /// Train the toy encoder on synthetic scenes.
    TrainToy(TrainArgs),
    /// Run the built-in oracle suites.
    Selfcheck,
}

#[derive(Args, Debug)]
struct DiscoverArgs {
    /// An FMP1 file or a directory of them.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out_mask: PathBuf,
    #[arg(long)]
    out_heatmap: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 1)]
    eig_index: usize,
    #[arg(long, default_value = "border-negative")]
    sign_rule: SignRule,
}

#[derive(Args, Debug)]
struct BboxArgs {
    #[arg(long)]
    masks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_AREA_FRAC)]
    min_area_frac: f64,
    #[arg(long, default_value_t = DEFAULT_DEDUP_IOU)]
    dedup_iou: f64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BETA_SQ)]
    beta_sq: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VideoArgs {
    #[arg(long)]
    rgb: PathBuf,
    #[arg(long)]
    flow: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    lambda1: f64,
    #[arg(long, default_value_t = 1.5)]
    lambda2: f64,
    #[arg(long, default_value_t = 20)]
    chunk: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 7.5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_ckpt: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("objdisc: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Raised for bad flag values and flag combinations.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Raised when a selfcheck suite fails.
#[derive(Debug)]
struct SuiteFailure(usize);

impl std::fmt::Display for SuiteFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} selfcheck suite(s) failed", self.0)
    }
}

impl std::error::Error for SuiteFailure {}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return EXIT_USAGE;
        }
        if cause.is::<SuiteFailure>() {
            return EXIT_NUMERIC;
        }
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::InvalidArgument(_) => EXIT_USAGE,
                Error::Convergence { .. } | Error::Divergence { .. } | Error::Probe { .. } => EXIT_NUMERIC,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .context("cannot start worker pool")?;
    match cli.command {
        Command::Discover(args) => pool.install(|| run_discover(&args)),
        Command::Bbox(args) => pool.install(|| run_bbox(&args)),
        Command::Eval(args) => run_eval(&args),
        Command::Video(args) => run_video(&args),
        Command::TrainToy(args) => run_train(&args),
        Command::Selfcheck => run_selfcheck(),
    }
}

fn unit_interval(flag: &str, v: f64) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(usage(format!("--{flag} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

/// Writes via a buffered file, naming the path in any error.
fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> objdisc_core::Result<()>) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(f);
    body(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("writing {}", path.display()))
}

fn stem_of(path: &Path) -> Option<String> {
    path.file_stem().and_then(|s| s.to_str()).map(str::to_string)
}

/// Feature files in `dir` keyed by stem; `.fmp1` and `.fmp` are accepted.
fn feature_files(dir: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot read directory {}", dir.display()))? {
        let path = entry.with_context(|| format!("cannot list {}", dir.display()))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| FEATURE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let stem = stem_of(&path).with_context(|| format!("file name {} is not UTF-8", path.display()))?;
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            bail!(Error::Harness(format!(
                "stem {stem:?} appears twice: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

fn load_features(path: &Path) -> anyhow::Result<FeatureMap> {
    load_fmap(open(path)?).with_context(|| format!("reading {}", path.display()))
}

/// Runs `f` on every item on the current pool, keeping input order and
/// returning the first error in that order.
fn for_each_ordered<T: Sync, R: Send>(
    items: &[T],
    f: impl Fn(&T) -> anyhow::Result<R> + Sync + Send,
) -> anyhow::Result<Vec<R>> {
    items.par_iter().map(f).collect::<Vec<_>>().into_iter().collect()
}

fn run_discover(args: &DiscoverArgs) -> anyhow::Result<()> {
    let cfg = DiscoveryConfig {
        threshold: args.threshold,
        eig_index: args.eig_index,
        sign_rule: args.sign_rule,
        ..Default::default()
    };
    cfg.validate()?;
    if args.out_heatmap.as_deref() == Some(args.out_mask.as_path()) {
        return Err(usage("--out-mask and --out-heatmap must be different directories"));
    }
    let inputs: Vec<(String, PathBuf)> = if args.features.is_dir() {
        feature_files(&args.features)?.into_iter().collect()
    } else {
        let stem = stem_of(&args.features)
            .with_context(|| format!("cannot take a file stem from {}", args.features.display()))?;
        vec![(stem, args.features.clone())]
    };
    if inputs.is_empty() {
        bail!(Error::Harness(format!("no feature files in {}", args.features.display())));
    }
    create_dir(&args.out_mask)?;
    if let Some(dir) = &args.out_heatmap {
        create_dir(dir)?;
    }
    let degenerate = for_each_ordered(&inputs, |(stem, path)| {
        let map = load_features(path)?;
        let d = discover(&map, &cfg).with_context(|| format!("discovery on {}", path.display()))?;
        write_file(&args.out_mask.join(format!("{stem}.pgm")), |w| save_mask(&d.mask, w))?;
        if let Some(dir) = &args.out_heatmap {
            write_file(&dir.join(format!("{stem}.pgm")), |w| save_heatmap(&d.heatmap, w))?;
        }
        Ok(d.degenerate)
    })?;
    for ((_, path), deg) in inputs.iter().zip(degenerate) {
        if deg {
            eprintln!("warning: {}: features have zero covariance, mask is empty", path.display());
        }
    }
    println!("discover: {} map(s) written to {}", inputs.len(), args.out_mask.display());
    Ok(())
}

fn run_bbox(args: &BboxArgs) -> anyhow::Result<()> {
    unit_interval("min-area-frac", args.min_area_frac)?;
    unit_interval("dedup-iou", args.dedup_iou)?;
    let masks: Vec<(String, PathBuf)> = pgm_files(&args.masks)?.into_iter().collect();
    if masks.is_empty() {
        bail!(Error::Harness(format!("no PGM masks in {}", args.masks.display())));
    }
    let boxes = for_each_ordered(&masks, |(_, path)| {
        let mask = load_mask(open(path)?).with_context(|| format!("reading {}", path.display()))?;
        Ok(generate_boxes(&mask, args.min_area_frac, args.dedup_iou))
    })?;
    write_file(&args.out, |w| {
        for ((stem, _), b) in masks.iter().zip(&boxes) {
            save_boxes(stem, b, &mut *w)?;
        }
        Ok(())
    })?;
    let total: usize = boxes.iter().map(Vec::len).sum();
    println!("bbox: {total} box(es) for {} mask(s) written to {}", masks.len(), args.out.display());
    Ok(())
}

fn run_eval(args: &EvalArgs) -> anyhow::Result<()> {
    if !(args.beta_sq > 0.0 && args.beta_sq.is_finite()) {
        return Err(usage(format!("--beta-sq must be positive, got {}", args.beta_sq)));
    }
    let options = EvalOptions {
        beta_sq: args.beta_sq,
        ..Default::default()
    };
    let report = eval_dataset(&args.pred, &args.gt, &options)?;
    print!("{report}");
    if let Some(out) = &args.out {
        fs::write(out, report.to_string()).with_context(|| format!("cannot write {}", out.display()))?;
    }
    Ok(())
}

fn run_video(args: &VideoArgs) -> anyhow::Result<()> {
    let cfg = DiscoveryConfig {
        video_lambda1: args.lambda1,
        video_lambda2: args.lambda2,
        chunk_frames: args.chunk,
        ..Default::default()
    };
    cfg.validate()?;
    let rgb = feature_files(&args.rgb)?;
    let flow = feature_files(&args.flow)?;
    let only_rgb: Vec<&str> = rgb.keys().filter(|k| !flow.contains_key(*k)).map(String::as_str).collect();
    let only_flow: Vec<&str> = flow.keys().filter(|k| !rgb.contains_key(*k)).map(String::as_str).collect();
    if !only_rgb.is_empty() || !only_flow.is_empty() {
        bail!(Error::Harness(format!(
            "frame stems differ: only in {}: [{}]; only in {}: [{}]",
            args.rgb.display(),
            only_rgb.join(", "),
            args.flow.display(),
            only_flow.join(", ")
        )));
    }
    if rgb.is_empty() {
        bail!(Error::Harness(format!("no feature files in {}", args.rgb.display())));
    }
    let rgb_frames = rgb.values().map(|p| load_features(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let flow_frames = flow.values().map(|p| load_features(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let masks = video_discover(&rgb_frames, &flow_frames, &cfg)?;
    create_dir(&args.out)?;
    for (stem, mask) in rgb.keys().zip(&masks) {
        write_file(&args.out.join(format!("{stem}.pgm")), |w| save_mask(mask, w))?;
    }
    println!("video: {} frame mask(s) written to {}", masks.len(), args.out.display());
    Ok(())
}

fn format_report(cfg: &TrainConfig, r: &ToyReport) -> String {
    let (first, last) = r.trace_ends(5);
    let mut s = String::new();
    s.push_str(&format!("epochs: {}\n", cfg.epochs));
    s.push_str(&format!("batch: {}\n", cfg.batch));
    s.push_str(&format!("lr: {}\n", cfg.lr));
    s.push_str(&format!("seed: {}\n", cfg.seed));
    s.push_str(&format!("scenes: {}\n", cfg.scenes));
    s.push_str(&format!("heldout_scenes: {TOY_HELDOUT}\n"));
    s.push_str(&format!("baseline_iou: {:.4}\n", r.baseline_iou));
    s.push_str(&format!("trained_iou: {:.4}\n", r.trained_iou));
    s.push_str(&format!("loss_first5_mean: {first:.6}\n"));
    s.push_str(&format!("loss_last5_mean: {last:.6}\n"));
    for (i, v) in r.trace.iter().enumerate() {
        s.push_str(&format!("epoch {}: {v:.6}\n", i + 1));
    }
    s
}

fn run_train(args: &TrainArgs) -> anyhow::Result<()> {
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch: args.batch,
        lr: args.lr,
        seed: args.seed,
        ..Default::default()
    };
    cfg.validate()?;
    let report = run_toy_experiment(&cfg, TOY_HELDOUT)?;
    write_file(&args.out_ckpt, |w| report.encoder.save(w))?;
    let text = format_report(&cfg, &report);
    if let Some(path) = &args.report {
        fs::write(path, &text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    print!("{text}");
    Ok(())
}

fn run_selfcheck() -> anyhow::Result<()> {
    let results = selfcheck::run_all(0);
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(SuiteFailure(failed).into());
    }
    println!("selfcheck: all {} suites passed", results.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let wrapped = |e: Error| anyhow::Error::from(e).context("reading x.fmp1");
        assert_eq!(exit_code(&wrapped(Error::Format("bad magic".into()))), EXIT_DATA);
        assert_eq!(exit_code(&wrapped(Error::Length { expected: 4, found: 3 })), EXIT_DATA);
        assert_eq!(exit_code(&wrapped(Error::InvalidArgument("tau".into()))), EXIT_USAGE);
        assert_eq!(exit_code(&wrapped(Error::Divergence { epoch: 1, step: 2 })), EXIT_NUMERIC);
        assert_eq!(exit_code(&wrapped(Error::Convergence { sweeps: 64, residual: 1.0 })), EXIT_NUMERIC);
        assert_eq!(exit_code(&usage("--jobs")), EXIT_USAGE);
        assert_eq!(exit_code(&SuiteFailure(1).into()), EXIT_NUMERIC);
        let io = anyhow::Error::from(std::io::Error::from(std::io::ErrorKind::NotFound)).context("cannot open y");
        assert_eq!(exit_code(&io), EXIT_DATA);
    }
}
