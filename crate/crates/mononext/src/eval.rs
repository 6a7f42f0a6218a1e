//! KITTI-protocol scoring: greedy score-ordered matching with single-claim
//! ground truths, interpolated average precision (R11/R40), mean IoU over
//! true positives, and average recognition (recall at IoU > 0.1).
//!
//! Difficulty pooling is cumulative: evaluating difficulty d scores ground
//! truths of level ≤ d and treats harder or `Ignored` objects as ignore
//! regions (matching them costs nothing, missing them costs nothing).

use crate::error::{Error, Result};
use crate::geometry::{iou3d, BoxSpec};
use crate::grid::ScoredBox;
use crate::kitti::{assign_difficulty, label_to_box, read_label_dir, Difficulty};
use crate::scalar::Real;
use std::collections::BTreeMap;
use std::path::Path;

/// Outcome for one detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetOutcome<T> {
    /// Claimed an unmatched scored ground truth.
    TruePositive { gt: usize, iou: T },
    FalsePositive,
    /// Overlapped only ignored ground truth; counts as neither TP nor FP.
    Ignored,
}

/// Matching of one frame's detections against its ground truths.
#[derive(Debug, Clone)]
pub struct MatchResult<T> {
    /// (score, outcome) per detection, in descending score order.
    pub detections: Vec<(T, DetOutcome<T>)>,
    /// Matched detection per ground truth (always `None` for ignored gts).
    pub gt_matched: Vec<Option<usize>>,
    /// Number of scored (non-ignored) ground truths.
    pub active_gts: usize,
}

impl<T: Real> MatchResult<T> {
    pub fn true_positives(&self) -> usize {
        self.detections
            .iter()
            .filter(|(_, o)| matches!(o, DetOutcome::TruePositive { .. }))
            .count()
    }

    pub fn false_positives(&self) -> usize {
        self.detections
            .iter()
            .filter(|(_, o)| matches!(o, DetOutcome::FalsePositive))
            .count()
    }
}

/// Greedy matching: detections in descending score order each claim the
/// unmatched non-ignored ground truth with the highest IoU ≥ `iou_thresh`.
/// A detection whose only qualifying overlap is an ignored ground truth is
/// dropped from scoring.
pub fn match_detections<T: Real>(
    dets: &[ScoredBox<T>],
    gts: &[(BoxSpec<T>, Difficulty)],
    iou_fn: impl Fn(&BoxSpec<T>, &BoxSpec<T>) -> T,
    iou_thresh: T,
) -> MatchResult<T> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut gt_matched: Vec<Option<usize>> = vec![None; gts.len()];
    let mut detections = Vec::with_capacity(dets.len());
    for &di in &order {
        let det = &dets[di];
        let score = det.score.unwrap_or_else(T::one);

        let mut best_active: Option<(usize, T)> = None;
        let mut overlaps_ignored = false;
        for (gi, (gt, level)) in gts.iter().enumerate() {
            let iou = iou_fn(det, gt);
            if iou < iou_thresh {
                continue;
            }
            if *level == Difficulty::Ignored {
                overlaps_ignored = true;
            } else if gt_matched[gi].is_none() {
                let better = match best_active {
                    Some((_, best)) => iou > best,
                    None => true,
                };
                if better {
                    best_active = Some((gi, iou));
                }
            }
        }
        let outcome = match best_active {
            Some((gi, iou)) => {
                gt_matched[gi] = Some(di);
                DetOutcome::TruePositive { gt: gi, iou }
            }
            None if overlaps_ignored => DetOutcome::Ignored,
            None => DetOutcome::FalsePositive,
        };
        detections.push((score, outcome));
    }

    let active_gts = gts
        .iter()
        .filter(|(_, level)| *level != Difficulty::Ignored)
        .count();
    MatchResult {
        detections,
        gt_matched,
        active_gts,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    R11,
    R40,
}

impl Protocol {
    fn recall_points(self) -> Vec<f64> {
        match self {
            Protocol::R11 => (0..=10).map(|k| k as f64 / 10.0).collect(),
            Protocol::R40 => (1..=40).map(|k| k as f64 / 40.0).collect(),
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r11" => Ok(Protocol::R11),
            "r40" => Ok(Protocol::R40),
            other => Err(Error::Config(format!("unknown protocol {other:?}"))),
        }
    }
}

/// Interpolated average precision over the pooled, score-ranked detection
/// list. `None` when there are no ground truths (undefined, not zero).
///
/// The caller provides `(score, is_tp)` pairs; ties must already be in the
/// desired deterministic order (sorting here is stable).
pub fn average_precision<T: Real>(
    pooled: &[(T, bool)],
    total_gts: usize,
    protocol: Protocol,
) -> Option<f64> {
    if total_gts == 0 {
        return None;
    }
    let mut ranked: Vec<(T, bool)> = pooled.to_vec();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    // Precision/recall after each detection.
    let mut curve = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (i, (_, is_tp)) in ranked.iter().enumerate() {
        if *is_tp {
            tp += 1;
        }
        let precision = tp as f64 / (i + 1) as f64;
        let recall = tp as f64 / total_gts as f64;
        curve.push((recall, precision));
    }

    let interp = |r: f64| -> f64 {
        curve
            .iter()
            .filter(|(rec, _)| *rec >= r - 1e-12)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max)
    };
    let points = protocol.recall_points();
    Some(points.iter().map(|&r| interp(r)).sum::<f64>() / points.len() as f64)
}

/// Metrics for one difficulty bucket. `None` means undefined (no ground
/// truths at this level).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DifficultyMetrics {
    pub ap_07: Option<f64>,
    pub ap_05: Option<f64>,
    /// Mean matched IoU over true positives at the 0.5 threshold
    /// (0 when there are ground truths but no true positives).
    pub mean_iou: Option<f64>,
    /// Recall at IoU > 0.1.
    pub recognition: Option<f64>,
    pub gt_count: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub frame_count: usize,
    /// Easy, Moderate, Hard.
    pub levels: [DifficultyMetrics; 3],
}

const LEVELS: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

/// Score predictions against ground truth over a frame corpus.
///
/// Panics if predictions mention a frame id absent from the ground truth.
pub fn evaluate<T: Real>(
    predictions: &BTreeMap<String, Vec<ScoredBox<T>>>,
    ground_truth: &BTreeMap<String, Vec<(BoxSpec<T>, Difficulty)>>,
    protocol: Protocol,
) -> EvalReport {
    for frame in predictions.keys() {
        assert!(
            ground_truth.contains_key(frame),
            "predictions reference unknown frame {frame}"
        );
    }
    let empty: Vec<ScoredBox<T>> = Vec::new();

    let levels = LEVELS.map(|level| {
        // Remap: ground truths harder than the pooling level are ignored.
        let remapped: BTreeMap<&String, Vec<(BoxSpec<T>, Difficulty)>> = ground_truth
            .iter()
            .map(|(id, gts)| {
                let gts = gts
                    .iter()
                    .map(|(b, l)| {
                        let l = if *l <= level { *l } else { Difficulty::Ignored };
                        (b.clone(), l)
                    })
                    .collect();
                (id, gts)
            })
            .collect();

        let mut total_gts = 0usize;
        // (score, is_tp, frame, det index) pooled per threshold.
        let mut pooled_07: Vec<(T, bool, &String, usize)> = Vec::new();
        let mut pooled_05: Vec<(T, bool, &String, usize)> = Vec::new();
        let mut tp_ious_05: Vec<T> = Vec::new();
        let mut recognized = 0usize;

        for (frame, gts) in &remapped {
            let dets = predictions.get(*frame).unwrap_or(&empty);
            let m07 = match_detections(dets, gts, iou3d, crate::real(0.7));
            let m05 = match_detections(dets, gts, iou3d, crate::real(0.5));
            let m01 = match_detections(dets, gts, iou3d, crate::real(0.1));
            total_gts += m05.active_gts;

            for (i, (score, outcome)) in m07.detections.iter().enumerate() {
                match outcome {
                    DetOutcome::TruePositive { .. } => pooled_07.push((*score, true, frame, i)),
                    DetOutcome::FalsePositive => pooled_07.push((*score, false, frame, i)),
                    DetOutcome::Ignored => {}
                }
            }
            for (i, (score, outcome)) in m05.detections.iter().enumerate() {
                match outcome {
                    DetOutcome::TruePositive { iou, .. } => {
                        pooled_05.push((*score, true, frame, i));
                        tp_ious_05.push(*iou);
                    }
                    DetOutcome::FalsePositive => pooled_05.push((*score, false, frame, i)),
                    DetOutcome::Ignored => {}
                }
            }
            // Average recognition: ground truths matched at IoU strictly
            // above 0.1.
            recognized += m01
                .detections
                .iter()
                .filter(|(_, o)| matches!(o, DetOutcome::TruePositive { iou, .. } if iou.to_f64().unwrap() > 0.1))
                .count();
        }

        // Deterministic pooling order: score desc, then frame id, then
        // per-frame detection rank.
        let rank = |v: &mut Vec<(T, bool, &String, usize)>| {
            v.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap()
                    .then_with(|| a.2.cmp(b.2))
                    .then_with(|| a.3.cmp(&b.3))
            });
        };
        rank(&mut pooled_07);
        rank(&mut pooled_05);
        let strip = |v: Vec<(T, bool, &String, usize)>| -> Vec<(T, bool)> {
            v.into_iter().map(|(s, t, _, _)| (s, t)).collect()
        };

        let ap_07 = average_precision(&strip(pooled_07), total_gts, protocol);
        let ap_05 = average_precision(&strip(pooled_05), total_gts, protocol);
        let mean_iou = if total_gts == 0 {
            None
        } else if tp_ious_05.is_empty() {
            Some(0.0)
        } else {
            let sum: f64 = tp_ious_05.iter().map(|v| v.to_f64().unwrap()).sum();
            Some(sum / tp_ious_05.len() as f64)
        };
        let recognition = if total_gts == 0 {
            None
        } else {
            Some(recognized as f64 / total_gts as f64)
        };

        DifficultyMetrics {
            ap_07,
            ap_05,
            mean_iou,
            recognition,
            gt_count: total_gts,
        }
    });

    EvalReport {
        protocol,
        frame_count: ground_truth.len(),
        levels,
    }
}

impl EvalReport {
    /// Human-readable table, one metric per row, one difficulty per column.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>, scale: f64| match v {
            Some(v) => format!("{:>8.4}", v * scale),
            None => format!("{:>8}", "-"),
        };
        let mut out = String::new();
        out.push_str(&format!(
            "{:<24}{:>8}{:>10}{:>8}\n",
            "", "Easy", "Moderate", "Hard"
        ));
        let rows: [(&str, fn(&DifficultyMetrics) -> Option<f64>, f64); 4] = [
            ("Mean IoU", |m| m.mean_iou, 1.0),
            ("mAP(IoU>0.7) (%)", |m| m.ap_07, 100.0),
            ("mAP(IoU>0.5) (%)", |m| m.ap_05, 100.0),
            ("Average Recognition (%)", |m| m.recognition, 100.0),
        ];
        for (name, get, scale) in rows {
            out.push_str(&format!(
                "{:<24}{}{}{}\n",
                name,
                fmt(get(&self.levels[0]), scale),
                format!("  {}", fmt(get(&self.levels[1]), scale)),
                fmt(get(&self.levels[2]), scale),
            ));
        }
        out.push_str(&format!(
            "protocol: {:?}, frames: {}\n",
            self.protocol, self.frame_count
        ));
        out
    }

    /// Machine-readable `key = value` lines; absent metrics are omitted.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "protocol = {}\n",
            match self.protocol {
                Protocol::R11 => "r11",
                Protocol::R40 => "r40",
            }
        ));
        out.push_str(&format!("frames = {}\n", self.frame_count));
        for (name, m) in ["easy", "moderate", "hard"].iter().zip(&self.levels) {
            out.push_str(&format!("{name}.gt_count = {}\n", m.gt_count));
            for (metric, v) in [
                ("ap_0.7", m.ap_07),
                ("ap_0.5", m.ap_05),
                ("mean_iou", m.mean_iou),
                ("recognition", m.recognition),
            ] {
                if let Some(v) = v {
                    out.push_str(&format!("{name}.{metric} = {v:.6}\n"));
                }
            }
        }
        out
    }
}

/// Evaluate prediction files against ground-truth label files (KITTI
/// detection format, score in the 16th field).
pub fn evaluate_dirs<T: Real>(
    pred_dir: &Path,
    gt_dir: &Path,
    classes: &[String],
    protocol: Protocol,
) -> Result<EvalReport> {
    let gt_files = read_label_dir::<T>(gt_dir)?;
    let pred_files = read_label_dir::<T>(pred_dir)?;
    for frame in pred_files.keys() {
        if !gt_files.contains_key(frame) {
            return Err(Error::Config(format!(
                "prediction frame {frame} has no ground-truth file in {}",
                gt_dir.display()
            )));
        }
    }

    let ground_truth: BTreeMap<String, Vec<(BoxSpec<T>, Difficulty)>> = gt_files
        .iter()
        .map(|(id, recs)| {
            let gts = recs
                .iter()
                .filter_map(|r| label_to_box(r, classes).map(|b| (b, assign_difficulty(r))))
                .collect();
            (id.clone(), gts)
        })
        .collect();
    let predictions: BTreeMap<String, Vec<ScoredBox<T>>> = gt_files
        .keys()
        .map(|id| {
            let dets = pred_files
                .get(id)
                .map(|recs| {
                    recs.iter()
                        .filter_map(|r| label_to_box(r, classes))
                        .collect()
                })
                .unwrap_or_default();
            (id.clone(), dets)
        })
        .collect();
    Ok(evaluate(&predictions, &ground_truth, protocol))
}
