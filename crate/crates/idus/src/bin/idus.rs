//! Command-line entry point: synthetic dataset generation, iterative
//! unsupervised training runs, classical baselines, and evaluation of
//! existing label maps.
//!
//! Exit codes: 2 for usage/configuration problems, 3 for I/O and manifest
//! problems, 4 for training divergence.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use idus::driver::{
    run_baseline, run_idus, BaselineRecipe, DriverError, IdusConfig, RunOptions,
};
use idus::eval::{best_assignment, confusion, metrics, render_report};
use idus::imagery::{
    default_palette, generate_synthetic_dataset, load_dataset, load_label_image,
    save_dataset, save_label_image, Dataset, SyntheticSpec, UNLABELED,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "idus", version, about = "Iterative unsupervised co-segmentation of textured imagery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic texture dataset with ground-truth masks
    Gen(GenArgs),
    /// Train the iterative deep co-segmentation model on a dataset
    Idus(IdusArgs),
    /// Run a classical-feature co-segmentation baseline
    Baseline(BaselineArgs),
    /// Score existing label maps against dataset masks
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Number of texture classes (2-7)
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Number of images
    #[arg(long, default_value_t = 20)]
    count: usize,
    /// Image side length in pixels
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Texture regions per image
    #[arg(long, default_value_t = 4)]
    regions: usize,
    /// Multiplicative speckle strength
    #[arg(long, default_value_t = 0.12)]
    speckle: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainCommon {
    /// Dataset manifest file (manifest.txt from `gen`)
    #[arg(long)]
    data: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Number of classes / clusters
    #[arg(long)]
    classes: Option<usize>,
    /// Target superpixels per image
    #[arg(long)]
    superpixels: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct IdusArgs {
    #[command(flatten)]
    common: TrainCommon,
    /// Key=value configuration file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs_total: Option<usize>,
    #[arg(long)]
    outer_iterations: Option<usize>,
    /// Pseudo-label update interval in epochs
    #[arg(long)]
    update_labels: Option<usize>,
    /// Boundary update interval in epochs
    #[arg(long)]
    update_boundaries: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Resume from a checkpoint directory written by a previous run
    #[arg(long, hide = true)]
    resume: Option<PathBuf>,
    /// Stop after N epochs, leaving a resumable checkpoint
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: TrainCommon,
    /// Feature recipe: glcm | zare
    #[arg(long)]
    recipe: String,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted label images (<image-id>.png)
    #[arg(long)]
    labels: PathBuf,
    /// Dataset manifest providing ground-truth masks
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the report
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
}

struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, msg: msg.into() }
    }
    fn io(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_IO, msg: msg.into() }
    }
}

fn driver_err(e: DriverError) -> CliError {
    match &e {
        DriverError::Divergence { .. } => CliError { code: EXIT_DIVERGED, msg: e.to_string() },
        DriverError::BadConfig(_) | DriverError::EmptyDataset | DriverError::MixedImageSizes(..) => {
            CliError::config(e.to_string())
        }
        _ => CliError::io(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Idus(args) => cmd_idus(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

/// Records how a run was invoked; written before any long computation.
fn write_manifest(out: &Path, command: &str, detail: &str) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    let abs = fs::canonicalize(out).map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    let mut text = String::new();
    let _ = writeln!(text, "command {command}");
    let _ = writeln!(text, "version {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(text, "output {}", abs.display());
    text.push_str(detail);
    let path = out.join("manifest.txt");
    fs::write(&path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        num_classes: args.classes,
        count: args.count,
        size: args.size,
        regions_per_image: args.regions,
        speckle: args.speckle,
    };
    let dataset = generate_synthetic_dataset(&spec, args.seed)
        .map_err(|e| CliError::config(e.to_string()))?;
    write_manifest(
        &args.out,
        "gen",
        &format!(
            "classes {}\ncount {}\nsize {}\nregions {}\nspeckle {}\nseed {}\n",
            args.classes, args.count, args.size, args.regions, args.speckle, args.seed
        ),
    )?;
    let manifest = save_dataset(&dataset, &args.out)
        .map_err(|e| CliError::io(e.to_string()))?;
    println!("wrote {} images, manifest {}", dataset.images.len(), manifest.display());
    Ok(())
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    load_dataset(path).map_err(|e| CliError::io(e.to_string()))
}

fn parse_config_file(path: &Path, cfg: &mut IdusConfig) -> Result<(), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("{}:{}: expected key=value", path.display(), ln + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = || CliError::config(format!("{}:{}: bad value for {key}", path.display(), ln + 1));
        match key {
            "classes" => cfg.num_classes = value.parse().map_err(|_| bad())?,
            "update_labels" => cfg.update_labels_every = value.parse().map_err(|_| bad())?,
            "update_boundaries" => cfg.update_boundaries_every = value.parse().map_err(|_| bad())?,
            "outer_iterations" => cfg.outer_iterations = value.parse().map_err(|_| bad())?,
            "epochs_total" => cfg.epochs_total = value.parse().map_err(|_| bad())?,
            "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad())?,
            "superpixels" => cfg.superpixels_per_image = value.parse().map_err(|_| bad())?,
            "compactness" => cfg.compactness = value.parse().map_err(|_| bad())?,
            "lr" => cfg.base_lr = value.parse().map_err(|_| bad())?,
            "weight_decay" => cfg.weight_decay = value.parse().map_err(|_| bad())?,
            "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
            _ => return Err(CliError::config(format!("{}:{}: unknown key {key}", path.display(), ln + 1))),
        }
    }
    Ok(())
}

fn write_label_maps(
    out: &Path,
    dataset: &Dataset,
    maps: &[Vec<u8>],
    num_classes: usize,
) -> Result<(), CliError> {
    let labels_dir = out.join("labels");
    fs::create_dir_all(&labels_dir)
        .map_err(|e| CliError::io(format!("{}: {e}", labels_dir.display())))?;
    let palette = default_palette(num_classes);
    for (img, map) in dataset.images.iter().zip(maps) {
        let path = labels_dir.join(format!("{}.png", img.id));
        save_label_image(map, img.height, img.width, &palette, &path)
            .map_err(|e| CliError::io(e.to_string()))?;
    }
    Ok(())
}

fn evaluate_and_report(
    out: &Path,
    dataset: &Dataset,
    maps: &[Vec<u8>],
    num_classes: usize,
) -> Result<Option<f64>, CliError> {
    let mut preds: Vec<&[u8]> = Vec::new();
    let mut truths: Vec<&[u8]> = Vec::new();
    for (mask, map) in dataset.masks.iter().zip(maps) {
        if let Some(m) = mask {
            preds.push(map);
            truths.push(&m.labels);
        }
    }
    if preds.is_empty() {
        return Ok(None);
    }
    let cm = confusion(&preds, &truths, num_classes).map_err(|e| CliError::io(e.to_string()))?;
    let (_, fixed) = best_assignment(&cm).map_err(|e| CliError::io(e.to_string()))?;
    let m = metrics(&fixed).map_err(|e| CliError::io(e.to_string()))?;
    let reports = out.join("reports");
    fs::create_dir_all(&reports)
        .map_err(|e| CliError::io(format!("{}: {e}", reports.display())))?;
    render_report(&fixed, &m, &reports.join("confusion"))
        .map_err(|e| CliError::io(e.to_string()))?;
    println!(
        "mean per-class accuracy {:.3}, overall accuracy {:.3}",
        m.mean_per_class_accuracy, m.overall_accuracy
    );
    Ok(Some(m.mean_per_class_accuracy))
}

fn cmd_idus(args: IdusArgs) -> Result<(), CliError> {
    let mut cfg = IdusConfig::desk_scale();
    if let Some(path) = &args.config {
        parse_config_file(path, &mut cfg)?;
    }
    let c = &args.common;
    if let Some(v) = c.classes { cfg.num_classes = v; }
    if let Some(v) = c.superpixels { cfg.superpixels_per_image = v; }
    if let Some(v) = c.seed { cfg.seed = v; }
    if let Some(v) = args.epochs_total { cfg.epochs_total = v; }
    if let Some(v) = args.outer_iterations { cfg.outer_iterations = v; }
    if let Some(v) = args.update_labels { cfg.update_labels_every = v; }
    if let Some(v) = args.update_boundaries { cfg.update_boundaries_every = v; }
    if let Some(v) = args.batch_size { cfg.batch_size = v; }
    if let Some(v) = args.lr { cfg.base_lr = v; }
    cfg.validate().map_err(driver_err)?;
    let dataset = load_data(&c.data)?;
    write_manifest(
        &c.out,
        "idus",
        &format!(
            "data {}\nconfig {}\nseed {}\nclasses {}\nepochs {}\n",
            c.data.display(),
            args.config.as_deref().map(|p| p.display().to_string()).unwrap_or_else(|| "-".into()),
            cfg.seed,
            cfg.num_classes,
            cfg.epochs_total
        ),
    )?;
    let ckpt_dir = c.out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)
        .map_err(|e| CliError::io(format!("{}: {e}", ckpt_dir.display())))?;
    let opts = RunOptions {
        checkpoint_dir: Some(ckpt_dir.clone()),
        resume_from: args.resume.clone(),
        stop_after: args.stop_after,
    };
    let outcome = run_idus(&dataset, &cfg, &opts).map_err(|e| {
        let mut err = driver_err(e);
        if err.code == EXIT_DIVERGED {
            err.msg = format!("{} (diagnostic checkpoint under {})", err.msg, ckpt_dir.display());
        }
        err
    })?;
    let history_path = c.out.join("history.log");
    fs::write(&history_path, outcome.history.join("\n") + "\n")
        .map_err(|e| CliError::io(format!("{}: {e}", history_path.display())))?;
    if args.stop_after.is_some() && outcome.completed_epochs < cfg.epochs_total {
        println!("stopped after {} epochs; checkpoint under {}", outcome.completed_epochs, ckpt_dir.display());
        return Ok(());
    }
    write_label_maps(&c.out, &dataset, &outcome.label_maps, cfg.num_classes)?;
    evaluate_and_report(&c.out, &dataset, &outcome.label_maps, cfg.num_classes)?;
    println!("done: {} epochs", outcome.completed_epochs);
    Ok(())
}

fn cmd_baseline(args: BaselineArgs) -> Result<(), CliError> {
    let recipe = match args.recipe.as_str() {
        "glcm" => BaselineRecipe::Glcm,
        "zare" => BaselineRecipe::Zare,
        other => return Err(CliError::config(format!("unknown recipe '{other}' (expected glcm|zare)"))),
    };
    let c = &args.common;
    let num_classes = c.classes.unwrap_or(3);
    let superpixels = c.superpixels.unwrap_or(100);
    let seed = c.seed.unwrap_or(0);
    let dataset = load_data(&c.data)?;
    write_manifest(
        &c.out,
        "baseline",
        &format!(
            "data {}\nrecipe {}\nseed {seed}\nclasses {num_classes}\nsuperpixels {superpixels}\n",
            c.data.display(),
            args.recipe
        ),
    )?;
    let maps = run_baseline(&dataset, recipe, num_classes, superpixels, seed).map_err(driver_err)?;
    write_label_maps(&c.out, &dataset, &maps, num_classes)?;
    evaluate_and_report(&c.out, &dataset, &maps, num_classes)?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let dataset = load_data(&args.data)?;
    let num_classes = args.classes.unwrap_or(dataset.num_classes);
    write_manifest(
        &args.out,
        "eval",
        &format!("data {}\nlabels {}\nclasses {num_classes}\n", args.data.display(), args.labels.display()),
    )?;
    let palette = default_palette(num_classes);
    let mut maps: Vec<Vec<u8>> = Vec::new();
    let mut truths: Vec<&[u8]> = Vec::new();
    let mut matched = 0usize;
    for (img, mask) in dataset.images.iter().zip(&dataset.masks) {
        let Some(mask) = mask else { continue };
        let path = args.labels.join(format!("{}.png", img.id));
        if !path.exists() {
            continue;
        }
        let (h, w, labels) = load_label_image(&path, &palette)
            .map_err(|e| CliError::io(e.to_string()))?;
        if h != img.height || w != img.width {
            return Err(CliError::io(format!(
                "size mismatch for {}: prediction {h}x{w}, image {}x{}",
                img.id, img.height, img.width
            )));
        }
        if labels.iter().any(|&l| l != UNLABELED && l as usize >= num_classes) {
            return Err(CliError::io(format!("label out of range in {}", path.display())));
        }
        maps.push(labels);
        truths.push(&mask.labels);
        matched += 1;
    }
    if matched == 0 {
        return Err(CliError::io("no prediction files matched any masked image id".to_string()));
    }
    let preds: Vec<&[u8]> = maps.iter().map(|m| m.as_slice()).collect();
    let cm = confusion(&preds, &truths, num_classes).map_err(|e| CliError::io(e.to_string()))?;
    let (_, fixed) = best_assignment(&cm).map_err(|e| CliError::io(e.to_string()))?;
    let m = metrics(&fixed).map_err(|e| CliError::io(e.to_string()))?;
    let reports = args.out.join("reports");
    fs::create_dir_all(&reports)
        .map_err(|e| CliError::io(format!("{}: {e}", reports.display())))?;
    render_report(&fixed, &m, &reports.join("confusion"))
        .map_err(|e| CliError::io(e.to_string()))?;
    println!(
        "evaluated {matched} images: mean per-class accuracy {:.3}, overall accuracy {:.3}",
        m.mean_per_class_accuracy, m.overall_accuracy
    );
    Ok(())
}
