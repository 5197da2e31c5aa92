//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::baseline::{dcp_depth, DcpConfig};
use crate::config::Config;
use crate::data::{
    depth_to_tensor, find_by_stem, list_images, load_image, read_depth, read_rgb_unit, synthesize_haze, write_depth_png,
    write_rgb_png, write_visualization_png, CorpusIndex, HazeParams, RgbdSample,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_corpus, evaluate_predictions, infer_depth, load_eval_set, load_generator, DepthShift,
    EvalOptions, EvalReport, DEPTH_SHIFT_EPS,
};
use crate::tensor::ValueRange;
use crate::training::{fit, CycleSpecs, FitOptions};

#[derive(Debug, Parser)]
#[command(name = "uwdepth", version, about = "Unsupervised underwater depth estimation")]
pub struct Cli {
    /// TOML configuration; command-line flags override its values.
    #[arg(long, global = true, env = "UWDEPTH_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render hazy copies of an RGB-D corpus.
    Synthesize(SynthesizeArgs),
    /// Train the four networks on unpaired corpora.
    Train(TrainArgs),
    /// Predict depth for one image or a directory of images.
    Infer(InferArgs),
    /// Score depth predictions against ground truth.
    Eval(EvalArgs),
    /// Dark-channel-prior depth for a directory of images.
    #[command(name = "baseline-dcp")]
    BaselineDcp(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Clean corpus with `color/` and `depth/` subdirectories.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Airlight as `r,g,b` in [0, 1].
    #[arg(long, value_delimiter = ',')]
    pub airlight: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Root with `underwater/` and `aerial/{color,depth}`.
    #[arg(long)]
    pub data: PathBuf,
    /// Parent directory of run directories.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma_gan: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma_ssim: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma_grad: Option<f64>,
    #[arg(long)]
    pub ckpt_every: Option<u64>,
    /// Stop after this many total steps.
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Continue from a checkpoint; outputs go to its run directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Image file or directory of images.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Square inference size; native resolution when omitted.
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Generator checkpoint to evaluate.
    #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
    pub ckpt: Option<PathBuf>,
    /// Directory of precomputed depth PNGs named like the ground truth.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Directory with `color/` and `depth/` ground truth.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
    /// Also score a classical baseline (`dcp`), written next to `--out`.
    #[arg(long, value_parser = ["dcp"])]
    pub baseline: Option<String>,
    /// Inference size for the network; native resolution when omitted.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Offset added to `--pred` depths before logs.
    #[arg(long, default_value_t = 0.0)]
    pub pred_offset: f64,
    /// Write min-max normalized 8-bit depth visualizations here.
    #[arg(long)]
    pub vis_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub omega: f64,
    #[arg(long, default_value_t = 15)]
    pub patch: usize,
    #[arg(long, default_value_t = 0.05)]
    pub t_min: f64,
}

/// Provenance record written when a training run starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: Config,
    pub code_version: String,
    pub seed: u64,
    pub start_time: String,
    /// Completion time; absent in the start manifest, see `completion.json`.
    pub end_time: Option<String>,
    pub start_step: u64,
    pub data_root: PathBuf,
    pub resumed_from: Option<PathBuf>,
    pub artifacts: Vec<PathBuf>,
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Evaluation(e.to_string()))?;
    let tmp = path.with_extension("json.partial");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Data(format!("directory {} does not exist", path.display())))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Images of `dir`, or of `dir/color` when `dir` holds none directly.
fn input_images(dir: &Path) -> Result<Vec<PathBuf>> {
    require_dir(dir)?;
    let mut files = list_images(dir)?;
    if files.is_empty() && dir.join("color").is_dir() {
        files = list_images(&dir.join("color"))?;
    }
    if files.is_empty() {
        return Err(Error::Data(format!("no images found in {}", dir.display())));
    }
    Ok(files)
}

pub fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synthesize(a) => cmd_synthesize(&config, a),
        Command::Train(a) => cmd_train(config, a),
        Command::Infer(a) => cmd_infer(&config, a),
        Command::Eval(a) => cmd_eval(&config, a),
        Command::BaselineDcp(a) => cmd_baseline(&config, a),
    }
}

pub fn cmd_synthesize(config: &Config, args: SynthesizeArgs) -> Result<()> {
    let airlight = match args.airlight {
        Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
        Some(v) => return Err(Error::Argument(format!("--airlight needs 3 values, got {}", v.len()))),
        None => config.haze.airlight,
    };
    let params = HazeParams::new(args.beta.unwrap_or(config.haze.beta), airlight)?;
    require_dir(&args.input)?;
    let index = CorpusIndex::scan_aerial(&args.input)?;
    if index.is_empty() {
        return Err(Error::Data(format!("no images under {}", args.input.join("color").display())));
    }
    let (cdir, ddir) = (args.out.join("color"), args.out.join("depth"));
    create_dir(&cdir)?;
    create_dir(&ddir)?;
    let scale = config.data.depth_scale;
    for entry in &index.entries {
        let depth_path = entry.depth_path.as_ref().expect("paired by scan");
        let color = read_rgb_unit(&entry.image_path)?;
        let (depth, mask) = read_depth(depth_path, scale)?;
        let depth = depth_to_tensor(&depth)?;
        let hazy = synthesize_haze(&RgbdSample::new(color, depth, mask)?, &params)?;
        write_rgb_png(&cdir.join(format!("{}.png", entry.id())), &hazy.color, 0)?;
        let file_name = depth_path.file_name().expect("file path");
        std::fs::copy(depth_path, ddir.join(file_name)).map_err(|e| Error::io(depth_path, e))?;
    }
    log::info!("wrote {} hazy images to {}", index.len(), args.out.display());
    Ok(())
}

pub fn cmd_train(mut config: Config, args: TrainArgs) -> Result<()> {
    if let Some(v) = args.epochs {
        config.train.epochs = v;
    }
    if let Some(v) = args.seed {
        config.train.seed = v;
    }
    if let Some(v) = args.lr {
        config.train.lr = v;
    }
    if let Some(v) = args.batch_size {
        config.train.batch_size = v;
    }
    if let Some(v) = args.patch_size {
        config.data.patch_size = v;
    }
    if let Some(v) = args.image_size {
        config.data.image_size = v;
    }
    if let Some(v) = args.gamma_gan {
        config.loss.gamma_gan = v;
    }
    if let Some(v) = args.gamma_ssim {
        config.loss.gamma_ssim = v;
    }
    if let Some(v) = args.gamma_grad {
        config.loss.gamma_grad = v;
    }
    if let Some(v) = args.ckpt_every {
        config.train.ckpt_every = v;
    }
    config.validate()?;
    require_dir(&args.data)?;
    let (uw, aerial) = CorpusIndex::scan_root(&args.data)?;

    let start = chrono::Utc::now();
    let run_dir = match &args.resume {
        Some(ck) => ck
            .parent()
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .ok_or_else(|| Error::Argument(format!("cannot locate run directory of {}", ck.display())))?,
        None => args
            .out
            .join(format!("{}-seed{}", start.format("%Y%m%dT%H%M%SZ"), config.train.seed)),
    };
    create_dir(&run_dir)?;
    let start_step = match &args.resume {
        Some(ck) => crate::training::Checkpoint::load(ck)?.step,
        None => 0,
    };
    let manifest_name = if start_step == 0 {
        "manifest.json".to_string()
    } else {
        format!("manifest.resume-{start_step:08}.json")
    };
    let mut manifest = RunManifest {
        config: config.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.train.seed,
        start_time: start.to_rfc3339(),
        end_time: None,
        start_step,
        data_root: args.data.clone(),
        resumed_from: args.resume.clone(),
        artifacts: vec![run_dir.join("losses.csv"), run_dir.join("checkpoints")],
    };
    write_json_atomic(&run_dir.join(&manifest_name), &manifest)?;
    std::fs::write(run_dir.join("config.toml"), config.to_toml_string())
        .map_err(|e| Error::io(run_dir.join("config.toml"), e))?;

    let options = FitOptions {
        resume: args.resume.clone(),
        max_steps: args.max_steps,
        ..FitOptions::new(&run_dir)
    };
    let outcome = fit(
        &uw,
        &aerial,
        &config.prep(),
        &config.train_config(),
        &CycleSpecs::from_config(&config),
        &options,
    )?;
    manifest.end_time = Some(chrono::Utc::now().to_rfc3339());
    manifest.artifacts.push(outcome.final_checkpoint.clone());
    write_json_atomic(&run_dir.join(manifest_name.replace("manifest", "completion")), &manifest)?;
    println!("{}", outcome.final_checkpoint.display());
    Ok(())
}

pub fn cmd_infer(config: &Config, args: InferArgs) -> Result<()> {
    let g = load_generator(&args.ckpt)?;
    let files = if args.input.is_file() {
        vec![args.input.clone()]
    } else {
        input_images(&args.input)?
    };
    create_dir(&args.out)?;
    for path in files {
        let image = match args.image_size {
            Some(size) => load_image(path.as_path(), (size, size))?,
            None => read_rgb_unit(&path)?.remap(ValueRange::NETWORK)?,
        };
        let pred = infer_depth(&g, &image, config.data.d_max)?;
        let name = stem(&path);
        let meters = pred.meters.data().slice(s![0, .., .., 0]).to_owned();
        write_depth_png(&args.out.join(format!("{name}_depth.png")), &meters, config.data.depth_scale)?;
        let raw = pred.normalized.data().slice(s![0, .., .., 0]).mapv(|v| v as f32);
        let raw_path = args.out.join(format!("{name}_depth.npy"));
        ndarray_npy::write_npy(&raw_path, &raw)
            .map_err(|e| Error::io(&raw_path, std::io::Error::other(e.to_string())))?;
    }
    Ok(())
}

fn save_report(path: &Path, report: &EvalReport) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(path, report.to_json()?).map_err(|e| Error::io(path, e))?;
    println!(
        "{}: mean rho {:.4}, mean si-mse {:.4} over {} images ({} excluded)",
        report.method,
        report.mean_rho,
        report.mean_si_mse,
        report.per_image.len(),
        report.excluded.len()
    );
    Ok(())
}

pub fn cmd_eval(config: &Config, args: EvalArgs) -> Result<()> {
    let items = load_eval_set(&args.data, config.data.depth_scale)?;
    if let Some(dir) = &args.vis_dir {
        create_dir(dir)?;
    }
    let vis = |id: &str, depth: &ndarray::Array2<f64>| -> Result<()> {
        match &args.vis_dir {
            Some(dir) => write_visualization_png(&dir.join(format!("{id}.png")), depth),
            None => Ok(()),
        }
    };
    let report = if let Some(pred_dir) = &args.pred {
        require_dir(pred_dir)?;
        let shift = DepthShift {
            scale: 1.0,
            offset: args.pred_offset,
        };
        evaluate_predictions("files", shift, &items, |item| {
            let path = find_by_stem(pred_dir, &item.id)
                .ok_or_else(|| Error::Data(format!("no prediction for {} in {}", item.id, pred_dir.display())))?;
            let (d, _) = read_depth(&path, config.data.depth_scale)?;
            if d.dim() != item.gt.dim() {
                return Err(Error::Shape(format!("{}: prediction {:?} vs ground truth {:?}", item.id, d.dim(), item.gt.dim())));
            }
            vis(&item.id, &d)?;
            Ok(d)
        })?
    } else {
        let ckpt = args.ckpt.as_ref().expect("clap requires --ckpt or --pred");
        let g = load_generator(ckpt)?;
        let options = EvalOptions {
            image_size: args.image_size,
            shift_eps: DEPTH_SHIFT_EPS,
        };
        if args.vis_dir.is_some() {
            for item in &items {
                vis(&item.id, &crate::evaluation::predict_item(&g, item, &options)?)?;
            }
        }
        evaluate_corpus(&g, &items, &options)?
    };
    save_report(&args.out, &report)?;

    if args.baseline.is_some() {
        let dcp = DcpConfig::default();
        let shift = DepthShift {
            scale: 1.0,
            offset: DEPTH_SHIFT_EPS,
        };
        let report = evaluate_predictions("dcp", shift, &items, |item| dcp_depth(item.image.item(0), &dcp))?;
        save_report(&args.out.with_extension("dcp.json"), &report)?;
    }
    Ok(())
}

pub fn cmd_baseline(config: &Config, args: BaselineArgs) -> Result<()> {
    let dcp = DcpConfig {
        omega: args.omega,
        patch: args.patch,
        t_min: args.t_min,
        ..DcpConfig::default()
    };
    dcp.validate()?;
    let files = input_images(&args.input)?;
    create_dir(&args.out)?;
    for path in files {
        let image = read_rgb_unit(&path)?;
        let depth = dcp_depth(image.item(0), &dcp)?;
        write_depth_png(&args.out.join(format!("{}.png", stem(&path))), &depth, config.data.depth_scale)?;
    }
    Ok(())
}
