//! The training loop: seeded shuffling, augmentation, target encoding,
//! forward/backward, AdamW updates, incremental logging and checkpointing.

use super::{prepare_sample, predict_frames, SplitChoice, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Protocol};
use crate::geometry::BoxSpec;
use crate::kitti::{assign_difficulty, label_to_box, make_split, Difficulty, Frame, KittiDataset};
use crate::loss::{total_loss_grad, LossBreakdown};
use crate::network::{save_checkpoint, MonoNext};
use crate::nn::AdamW;
use crate::scalar::{real, Real};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// One optimizer step as logged.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub conf: f64,
    pub cls: f64,
    pub box_: f64,
    pub total: f64,
    pub wall_ms: f64,
}

/// In-memory mirror of the persisted training log.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    /// (epoch, mean total loss, optional val recognition)
    pub epochs: Vec<(usize, f64, Option<f64>)>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainLog {
    /// Parse the delimited text log written during training.
    pub fn parse(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut log = TrainLog::default();
        for line in text.lines() {
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.first() {
                Some(&"step") if fields.len() == 8 => log.steps.push(StepLog {
                    epoch: fields[1].parse().unwrap_or(0),
                    step: fields[2].parse().unwrap_or(0),
                    conf: fields[3].parse().unwrap_or(f64::NAN),
                    cls: fields[4].parse().unwrap_or(f64::NAN),
                    box_: fields[5].parse().unwrap_or(f64::NAN),
                    total: fields[6].parse().unwrap_or(f64::NAN),
                    wall_ms: fields[7].parse().unwrap_or(f64::NAN),
                }),
                Some(&"epoch") if fields.len() >= 3 => log.epochs.push((
                    fields[1].parse().unwrap_or(0),
                    fields[2].parse().unwrap_or(f64::NAN),
                    fields.get(3).and_then(|v| v.parse().ok()),
                )),
                Some(&"checkpoint") if fields.len() == 3 => {
                    log.checkpoints.push(PathBuf::from(fields[2]))
                }
                _ => {}
            }
        }
        Ok(log)
    }
}

#[derive(Debug)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub log: TrainLog,
    pub log_path: PathBuf,
}

fn split_ids(cfg: &TrainConfig<impl Real>, dataset: &KittiDataset) -> Result<Vec<String>> {
    let available = dataset.available()?;
    Ok(match cfg.split {
        SplitChoice::All => available.into_iter().collect(),
        choice => {
            let split = make_split(&cfg.splits_dir, Some(&available))?;
            match choice {
                SplitChoice::Train => split.train,
                SplitChoice::Val => split.val,
                SplitChoice::All => unreachable!(),
            }
        }
    })
}

fn val_recognition<T: Real>(
    model: &mut MonoNext<T>,
    dataset: &KittiDataset,
    ids: &[String],
    cfg: &TrainConfig<T>,
) -> Result<Option<f64>> {
    if ids.is_empty() {
        return Ok(None);
    }
    let preds = predict_frames(model, dataset, ids, cfg, None)?;
    let mut gts: BTreeMap<String, Vec<(BoxSpec<T>, Difficulty)>> = BTreeMap::new();
    for id in ids {
        let frame: Frame<T> = dataset.load_frame(id)?;
        gts.insert(
            id.clone(),
            frame
                .labels
                .iter()
                .filter_map(|r| label_to_box(r, &cfg.classes).map(|b| (b, assign_difficulty(r))))
                .collect(),
        );
    }
    let report = evaluate(&preds, &gts, Protocol::R11);
    Ok(report.levels[2].recognition)
}

/// Run training per the config. Returns the final checkpoint path and the
/// log (also persisted incrementally under `out_dir`).
pub fn train<T: Real>(cfg: &TrainConfig<T>) -> Result<TrainOutput> {
    cfg.validate()?;
    let dataset = KittiDataset::new(&cfg.data_root);
    let ids = split_ids(cfg, &dataset)?;
    if ids.is_empty() {
        return Err(Error::Config(format!(
            "no training frames under {} for the chosen split",
            cfg.data_root.display()
        )));
    }
    let val_ids = match cfg.split {
        SplitChoice::Train if cfg.eval_every > 0 => {
            make_split(&cfg.splits_dir, Some(&dataset.available()?))?.val
        }
        _ => Vec::new(),
    };

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let log_path = cfg.out_dir.join("train.log");
    let log_file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log_file = std::io::BufWriter::new(log_file);
    let mut log = TrainLog::default();

    let mut model = MonoNext::<T>::new(cfg.network.clone(), cfg.grid.s, cfg.seed)?;
    let mut opt = AdamW::<T>::new(cfg.learning_rate, cfg.weight_decay);

    // Frames are cached once decoded; desk-scale corpora fit comfortably.
    let mut frame_cache: BTreeMap<String, Frame<T>> = BTreeMap::new();
    let mut load = |dataset: &KittiDataset, id: &String| -> Result<Frame<T>> {
        if let Some(f) = frame_cache.get(id) {
            return Ok(f.clone());
        }
        let f = dataset.load_frame(id)?;
        if frame_cache.len() < 512 {
            frame_cache.insert(id.clone(), f.clone());
        }
        Ok(f)
    };

    let total_steps = cfg.epochs * ids.len().div_ceil(cfg.batch_size);
    let mut global_step = 0usize;
    let mut best_recognition = f64::NEG_INFINITY;
    let started = Instant::now();

    for epoch in 0..cfg.epochs {
        // One deterministic stream per epoch drives both the shuffle and
        // the augmentation draws.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9));
        let mut order = ids.clone();
        order.shuffle(&mut rng);

        let mut epoch_total = 0.0f64;
        let mut epoch_batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let step_start = Instant::now();
            model.zero_grad();
            let mut mean = LossBreakdown::<T>::zero();
            let scale = real::<T>(1.0 / batch.len() as f64);
            for id in batch {
                let frame = load(&dataset, id)?;
                let sample = prepare_sample(
                    &frame,
                    cfg,
                    if cfg.augment { Some(&mut rng) } else { None },
                );
                let pred = model.forward(&sample.input);
                let (breakdown, mut grad) = total_loss_grad(&pred, &sample.target, &cfg.grid, &cfg.loss);
                mean.conf += breakdown.conf * scale;
                mean.cls += breakdown.cls * scale;
                mean.box_ += breakdown.box_ * scale;
                // Backprop the batch-mean gradient.
                grad.data.mapv_inplace(|g| g * scale);
                model.backward(&grad);
            }
            mean.total = mean.conf + mean.cls + mean.box_;

            if !mean.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: global_step,
                    frame_ids: batch.to_vec(),
                    conf: mean.conf.to_f64().unwrap_or(f64::NAN),
                    cls: mean.cls.to_f64().unwrap_or(f64::NAN),
                    box_: mean.box_.to_f64().unwrap_or(f64::NAN),
                    total: mean.total.to_f64().unwrap_or(f64::NAN),
                });
            }

            if let Some(limit) = cfg.grad_clip {
                model.clip_grad_norm(real(limit));
            }
            if cfg.cosine_lr {
                let progress = global_step as f64 / total_steps.max(1) as f64;
                opt.set_lr(cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            }
            model.apply_step(&mut opt);

            let entry = StepLog {
                epoch,
                step: global_step,
                conf: mean.conf.to_f64().unwrap(),
                cls: mean.cls.to_f64().unwrap(),
                box_: mean.box_.to_f64().unwrap(),
                total: mean.total.to_f64().unwrap(),
                wall_ms: step_start.elapsed().as_secs_f64() * 1e3,
            };
            writeln!(
                log_file,
                "step\t{}\t{}\t{}\t{}\t{}\t{}\t{:.3}",
                entry.epoch, entry.step, entry.conf, entry.cls, entry.box_, entry.total, entry.wall_ms
            )
            .map_err(|e| Error::io(&log_path, e))?;
            log_file.flush().map_err(|e| Error::io(&log_path, e))?;
            epoch_total += entry.total;
            epoch_batches += 1;
            log.steps.push(entry);
            global_step += 1;
        }

        let mean_total = epoch_total / epoch_batches.max(1) as f64;
        let mut val_metric = None;
        if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 {
            val_metric = val_recognition(&mut model, &dataset, &val_ids, cfg)?;
            if let Some(r) = val_metric {
                if r > best_recognition {
                    best_recognition = r;
                    let path = cfg.out_dir.join("best.ckpt");
                    save_checkpoint(&path, &mut model, &cfg.grid)?;
                    writeln!(log_file, "checkpoint\t{epoch}\t{}", path.display())
                        .map_err(|e| Error::io(&log_path, e))?;
                    log.checkpoints.push(path);
                }
            }
        }
        match val_metric {
            Some(r) => writeln!(log_file, "epoch\t{epoch}\t{mean_total}\t{r}"),
            None => writeln!(log_file, "epoch\t{epoch}\t{mean_total}"),
        }
        .map_err(|e| Error::io(&log_path, e))?;
        log.epochs.push((epoch, mean_total, val_metric));

        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            let path = cfg.out_dir.join(format!("epoch{:04}.ckpt", epoch + 1));
            save_checkpoint(&path, &mut model, &cfg.grid)?;
            writeln!(log_file, "checkpoint\t{epoch}\t{}", path.display())
                .map_err(|e| Error::io(&log_path, e))?;
            log.checkpoints.push(path);
        }
    }

    let final_path = cfg.out_dir.join("final.ckpt");
    save_checkpoint(&final_path, &mut model, &cfg.grid)?;
    writeln!(log_file, "checkpoint\t{}\t{}", cfg.epochs, final_path.display())
        .map_err(|e| Error::io(&log_path, e))?;
    log_file.flush().map_err(|e| Error::io(&log_path, e))?;
    log.checkpoints.push(final_path.clone());

    let _ = started; // wall-clock kept for future per-epoch reporting
    Ok(TrainOutput {
        checkpoint: final_path,
        log,
        log_path,
    })
}

/// Train on an explicit list of in-memory frames; used by tests that need a
/// fixed batch without touching disk. Returns the per-step loss totals.
pub fn train_fixed_batch<T: Real>(
    cfg: &TrainConfig<T>,
    frames: &[Frame<T>],
    steps: usize,
) -> Result<(MonoNext<T>, Vec<LossBreakdown<T>>)> {
    cfg.validate()?;
    let mut model = MonoNext::<T>::new(cfg.network.clone(), cfg.grid.s, cfg.seed)?;
    let mut opt = AdamW::<T>::new(cfg.learning_rate, cfg.weight_decay);
    let samples: Vec<_> = frames
        .iter()
        .map(|f| prepare_sample(f, cfg, None))
        .collect();
    let mut history = Vec::with_capacity(steps);
    let scale = real::<T>(1.0 / samples.len() as f64);
    for _ in 0..steps {
        model.zero_grad();
        let mut mean = LossBreakdown::<T>::zero();
        for sample in &samples {
            let pred = model.forward(&sample.input);
            let (breakdown, mut grad) = total_loss_grad(&pred, &sample.target, &cfg.grid, &cfg.loss);
            mean.conf += breakdown.conf * scale;
            mean.cls += breakdown.cls * scale;
            mean.box_ += breakdown.box_ * scale;
            grad.data.mapv_inplace(|g| g * scale);
            model.backward(&grad);
        }
        mean.total = mean.conf + mean.cls + mean.box_;
        if !mean.is_finite() {
            return Err(Error::Config("non-finite loss on fixed batch".into()));
        }
        model.apply_step(&mut opt);
        history.push(mean);
    }
    Ok((model, history))
}

/// Shared helper for tests and the CLI: ground truths of a frame list keyed
/// by frame id, with difficulties.
pub fn ground_truth_map<T: Real>(
    dataset: &KittiDataset,
    ids: &[String],
    classes: &[String],
) -> Result<BTreeMap<String, Vec<(BoxSpec<T>, Difficulty)>>> {
    let mut out = BTreeMap::new();
    for id in ids {
        let frame: Frame<T> = dataset.load_frame(id)?;
        out.insert(
            id.clone(),
            frame
                .labels
                .iter()
                .filter_map(|r| label_to_box(r, classes).map(|b| (b, assign_difficulty(r))))
                .collect(),
        );
    }
    Ok(out)
}
