//! Command-line interface: `split`, `train`, `predict`, `eval`, `visualize`
//! plus a `synth` helper that writes a synthetic demo dataset.

use super::{
    generate_synthetic_dataset, predict_frames, train, visualize, SplitChoice, TrainConfig,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_dirs, Protocol};
use crate::grid::GridSpec;
use crate::kitti::{
    generate_split as kitti_generate_split, label_to_box, make_split, parse_label_file,
    write_split_files, KittiDataset,
};
use crate::network::{load_checkpoint, read_checkpoint_info};
use crate::scalar::Real;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "mononext",
    about = "Monocular 3D object detection on a BEV grid",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// KITTI-layout dataset root (fallback: MONONEXT_DATA_ROOT).
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra key=value overrides (repeatable), same keys as the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<TrainConfig<f32>> {
        let mut cfg = TrainConfig::<f32>::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(v) = &self.data_root {
            cfg.data_root = v.clone();
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.apply_kv(k.trim(), v.trim())?;
        }
        cfg.resolve_data_root();
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Resolve the train/val split against a dataset (or generate a fresh
    /// seeded split with --fraction).
    Split {
        #[arg(long)]
        data_root: PathBuf,
        /// Directory holding train.txt/val.txt id lists.
        #[arg(long, default_value = "data/splits")]
        splits_dir: PathBuf,
        /// Write the resolved lists here instead of just printing sizes.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Generate a fresh split with this training fraction instead of
        /// loading the shipped lists.
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run a checkpoint over a split and write KITTI detection files.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        /// Rotated-BEV NMS limit; "off" disables suppression.
        #[arg(long)]
        nms_iou: Option<String>,
    },
    /// Score prediction files against ground truth labels.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "r11")]
        protocol: String,
        #[arg(long, default_value = "Car")]
        classes: String,
        /// Also print machine-readable key=value lines.
        #[arg(long)]
        key_values: bool,
    },
    /// Render camera-view and BEV images for one frame.
    Visualize {
        #[arg(long)]
        data_root: PathBuf,
        #[arg(long)]
        frame: String,
        /// Directory of prediction files to overlay.
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "Car")]
        classes: String,
    },
    /// Write a synthetic KITTI-layout demo dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_classes(raw: &str) -> Vec<String> {
    raw.split(',').map(|c| c.trim().to_string()).collect()
}

fn cmd_split(
    data_root: PathBuf,
    splits_dir: PathBuf,
    out: Option<PathBuf>,
    fraction: Option<f64>,
    seed: u64,
) -> Result<()> {
    let dataset = KittiDataset::new(&data_root);
    let available = dataset.available()?;
    let split = match fraction {
        Some(f) => {
            let ids: Vec<String> = available.iter().cloned().collect();
            kitti_generate_split(&ids, f, seed)
        }
        None => make_split(&splits_dir, Some(&available))?,
    };
    println!(
        "train: {} frames, val: {} frames (of {} available)",
        split.train.len(),
        split.val.len(),
        available.len()
    );
    if let Some(dir) = out {
        write_split_files(&dir, &split)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn resolve_ids(cfg: &TrainConfig<f32>, dataset: &KittiDataset, split: &str) -> Result<Vec<String>> {
    let choice: SplitChoice = split.parse()?;
    let available = dataset.available()?;
    Ok(match choice {
        SplitChoice::All => available.into_iter().collect(),
        SplitChoice::Train => make_split(&cfg.splits_dir, Some(&available))?.train,
        SplitChoice::Val => make_split(&cfg.splits_dir, Some(&available))?.val,
    })
}

fn cmd_predict(
    checkpoint: PathBuf,
    config: ConfigArgs,
    split: String,
    out: PathBuf,
    threshold: Option<f64>,
    nms_iou: Option<String>,
) -> Result<()> {
    let mut cfg = config.build()?;
    let (net, grid64, scalar) = read_checkpoint_info(&checkpoint)?;
    if scalar != f32::NAME {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained at {scalar}; the prediction lane runs f32"
        )));
    }
    // Adopt the checkpoint's architecture and grid; anything the user also
    // set explicitly must agree (load_checkpoint re-verifies the echo).
    cfg.network = net;
    cfg.grid = GridSpec {
        s: grid64.s,
        x_range: [grid64.x_range[0] as f32, grid64.x_range[1] as f32],
        y_range: [grid64.y_range[0] as f32, grid64.y_range[1] as f32],
        z_range: [grid64.z_range[0] as f32, grid64.z_range[1] as f32],
        dim_max: [
            grid64.dim_max[0] as f32,
            grid64.dim_max[1] as f32,
            grid64.dim_max[2] as f32,
        ],
        num_classes: grid64.num_classes,
    };
    if let Some(t) = threshold {
        cfg.threshold = t;
    }
    match nms_iou.as_deref() {
        Some("off") | Some("none") => cfg.nms_iou = None,
        Some(v) => {
            cfg.nms_iou = Some(v.parse().map_err(|_| {
                Error::Config(format!("--nms-iou expects a number or 'off', got {v:?}"))
            })?)
        }
        None => {}
    }

    let mut model = load_checkpoint::<f32>(&checkpoint, &cfg.network, &cfg.grid)?;
    let dataset = KittiDataset::new(&cfg.data_root);
    let ids = resolve_ids(&cfg, &dataset, &split)?;
    if ids.is_empty() {
        return Err(Error::Config("no frames to predict".into()));
    }
    let preds = predict_frames(&mut model, &dataset, &ids, &cfg, Some(&out))?;
    let total: usize = preds.values().map(Vec::len).sum();
    println!(
        "wrote {} detections over {} frames to {}",
        total,
        preds.len(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(
    pred: PathBuf,
    gt: PathBuf,
    protocol: String,
    classes: String,
    key_values: bool,
) -> Result<()> {
    let protocol: Protocol = protocol.parse()?;
    let report = evaluate_dirs::<f64>(&pred, &gt, &parse_classes(&classes), protocol)?;
    print!("{}", report.to_table());
    if key_values {
        print!("{}", report.to_key_values());
    }
    Ok(())
}

fn cmd_visualize(
    data_root: PathBuf,
    frame_id: String,
    pred: Option<PathBuf>,
    out: PathBuf,
    classes: String,
) -> Result<()> {
    let classes = parse_classes(&classes);
    let dataset = KittiDataset::new(&data_root);
    let frame = dataset.load_frame::<f64>(&frame_id)?;
    let gts: Vec<_> = frame
        .labels
        .iter()
        .filter_map(|r| label_to_box(r, &classes))
        .collect();
    let dets = match pred {
        Some(dir) => parse_label_file::<f64>(&dir.join(format!("{frame_id}.txt")))?
            .iter()
            .filter_map(|r| label_to_box(r, &classes))
            .collect(),
        None => Vec::new(),
    };
    let (cam, bev) = visualize(&frame, &dets, &gts, &GridSpec::default(), &out)?;
    println!("wrote {} and {}", cam.display(), bev.display());
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Split {
            data_root,
            splits_dir,
            out,
            fraction,
            seed,
        } => cmd_split(data_root, splits_dir, out, fraction, seed),
        Cmd::Train { config } => {
            let cfg = config.build()?;
            let output = train(&cfg)?;
            println!(
                "trained {} epochs; final checkpoint {}; log {}",
                cfg.epochs,
                output.checkpoint.display(),
                output.log_path.display()
            );
            Ok(())
        }
        Cmd::Predict {
            checkpoint,
            config,
            split,
            out,
            threshold,
            nms_iou,
        } => cmd_predict(checkpoint, config, split, out, threshold, nms_iou),
        Cmd::Eval {
            pred,
            gt,
            protocol,
            classes,
            key_values,
        } => cmd_eval(pred, gt, protocol, classes, key_values),
        Cmd::Visualize {
            data_root,
            frame,
            pred,
            out,
            classes,
        } => cmd_visualize(data_root, frame, pred, out, classes),
        Cmd::Synth { out, frames, seed } => {
            let ids = generate_synthetic_dataset(&out, frames, seed, &GridSpec::default())?;
            println!("wrote {} synthetic frames to {}", ids.len(), out.display());
            Ok(())
        }
    }
}

/// Parse and run; returns the process exit code (0 success, 1 runtime
/// error, 2 usage error).
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
