//! Multi-task training objective over predicted and target grid tensors.
//!
//! total = conf + class + box, with
//!   conf  = λ_obj Σ_obj (p − t)² + λ_noobj Σ_noobj (p − t)²
//!   class = λ_class Σ_obj Σ_c (p_c − t_c)²
//!   box   = λ_IoU Σ_obj [(1 − IoU)² + gap²] + λ_θ Σ_obj (tθ − t̂θ)²
//! where IoU is the axis-aligned 3D IoU between the boxes decoded from the
//! prediction and the target at each responsible cell, and sums run over
//! raw cells (no per-object averaging). Batch reduction is the mean over
//! frames.
//!
//! `gap` is the distance from the predicted center to the target box,
//! per-axis and normalized by the dimension caps; it is zero once the
//! predicted center lies inside the target box. The plain squared IoU error
//! is flat across the whole disjoint region (IoU is identically 0 there),
//! which leaves cells that start disjoint without any descent direction;
//! the gap term pulls their centers until the boxes overlap and the IoU
//! gradient takes over.
//!
//! [`total_loss_grad`] additionally returns the exact analytic gradient with
//! respect to every prediction channel, which is what backpropagation
//! consumes.

use crate::grid::{GridSpec, GridTensor};
use crate::scalar::{real, Real};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Loss weights; defaults are λ_obj=5, λ_noobj=1, λ_class=1, λ_IoU=10, λ_θ=1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights<T> {
    pub obj: T,
    pub noobj: T,
    pub class: T,
    pub iou: T,
    pub yaw: T,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        LossWeights {
            obj: real(5.0),
            noobj: real(1.0),
            class: real(1.0),
            iou: real(10.0),
            yaw: real(1.0),
        }
    }
}

/// Loss components; `total` is always their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub conf: T,
    pub cls: T,
    pub box_: T,
    pub total: T,
}

impl<T: Real> LossBreakdown<T> {
    pub fn zero() -> Self {
        LossBreakdown {
            conf: T::zero(),
            cls: T::zero(),
            box_: T::zero(),
            total: T::zero(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.conf.is_finite() && self.cls.is_finite() && self.box_.is_finite()
    }
}

/// The 1_obj indicator: mask[i] = true iff the target claims an object at
/// cell i. Panics when target confidences are not exactly 0 or 1.
pub fn responsibility_mask<T: Real>(target: &GridTensor<T>) -> Array2<bool> {
    let s = target.side();
    let mut mask = Array2::from_elem((s, s), false);
    for row in 0..s {
        for col in 0..s {
            let c = target.conf(row, col);
            assert!(
                c == T::zero() || c == T::one(),
                "responsibility_mask: target confidence must be binary, got {c} at ({row},{col})"
            );
            mask[[row, col]] = c == T::one();
        }
    }
    mask
}

/// Squared-error confidence loss over all cells, weighted λ_obj on
/// responsible cells and λ_noobj elsewhere.
pub fn confidence_loss<T: Real>(
    pred: &GridTensor<T>,
    target: &GridTensor<T>,
    w: &LossWeights<T>,
) -> T {
    pred.assert_same_shape(target);
    let mask = responsibility_mask(target);
    let mut acc = T::zero();
    for row in 0..target.side() {
        for col in 0..target.side() {
            let d = pred.conf(row, col) - target.conf(row, col);
            let lambda = if mask[[row, col]] { w.obj } else { w.noobj };
            acc += lambda * d * d;
        }
    }
    acc
}

/// Squared-error classification loss over responsible cells.
pub fn class_loss<T: Real>(pred: &GridTensor<T>, target: &GridTensor<T>, w: &LossWeights<T>) -> T {
    pred.assert_same_shape(target);
    let mask = responsibility_mask(target);
    let mut acc = T::zero();
    for row in 0..target.side() {
        for col in 0..target.side() {
            if !mask[[row, col]] {
                continue;
            }
            for ch in target.ch_class() {
                let d = pred.data[[row, col, ch]] - target.data[[row, col, ch]];
                acc += d * d;
            }
        }
    }
    w.class * acc
}

/// Per-cell box geometry decoded straight from the regression channels
/// (cell-relative offsets inverted to metric center/extents). Used for the
/// IoU term and its gradient.
struct CellBox<T> {
    center: [T; 3],
    extent: [T; 3],
}

/// Jacobian of the channel → metric mapping: d(center)/d(tx,ty,tz) and
/// d(extent)/d(tw,th,tl) are the per-channel levers below.
struct CellJacobian<T> {
    center: [T; 3],
    extent: [T; 3],
}

fn cell_box<T: Real>(t: &GridTensor<T>, row: usize, col: usize, g: &GridSpec<T>) -> CellBox<T> {
    let c = g.num_classes;
    let s = real::<T>(g.s as f64);
    let x_span = g.x_range[1] - g.x_range[0];
    let y_span = g.y_range[1] - g.y_range[0];
    let z_span = g.z_range[1] - g.z_range[0];
    let at = |ch: usize| t.data[[row, col, ch]];
    CellBox {
        center: [
            g.x_range[0] + (real::<T>(col as f64) + at(1 + c)) / s * x_span,
            g.y_range[0] + at(2 + c) * y_span,
            g.z_range[0] + (real::<T>(row as f64) + at(3 + c)) / s * z_span,
        ],
        extent: [
            at(4 + c) * g.dim_max[0],
            at(5 + c) * g.dim_max[1],
            at(6 + c) * g.dim_max[2],
        ],
    }
}

fn cell_jacobian<T: Real>(g: &GridSpec<T>) -> CellJacobian<T> {
    let s = real::<T>(g.s as f64);
    CellJacobian {
        center: [
            (g.x_range[1] - g.x_range[0]) / s,
            g.y_range[1] - g.y_range[0],
            (g.z_range[1] - g.z_range[0]) / s,
        ],
        extent: g.dim_max,
    }
}

/// One axis of the axis-aligned overlap together with its derivatives with
/// respect to the first box's center and extent.
struct AxisOverlap<T> {
    o: T,
    d_center: T,
    d_extent: T,
}

fn axis_overlap_grad<T: Real>(c1: T, e1: T, c2: T, e2: T) -> AxisOverlap<T> {
    // Same `min(e1, e2, (e1+e2)/2 − |Δc|)` form as geometry::axis_overlap so
    // the loss value and its gradient describe the same surface.
    let half = real::<T>(0.5);
    let m = (e1 + e2) * half - (c1 - c2).abs();
    let o = e1.min(e2).min(m);
    if o <= T::zero() {
        return AxisOverlap {
            o: T::zero(),
            d_center: T::zero(),
            d_extent: T::zero(),
        };
    }
    let (d_center, d_extent) = if m <= e1.min(e2) {
        // Partial overlap: moving the center toward the other box grows it.
        let sign = if c1 < c2 {
            T::one()
        } else if c1 > c2 {
            -T::one()
        } else {
            T::zero()
        };
        (sign, half)
    } else if e1 <= e2 {
        // This box lies inside the other along this axis.
        (T::zero(), T::one())
    } else {
        // The other box lies inside this one.
        (T::zero(), T::zero())
    };
    AxisOverlap {
        o,
        d_center,
        d_extent,
    }
}

/// Squared normalized distance from the predicted center to the *target
/// box*, with its gradient on the three center channels. Zero (with zero
/// gradient) once the predicted center lies inside the target box, at which
/// point the boxes necessarily overlap and the IoU gradient takes over. The
/// predicted extents do not enter, so the term cannot inflate dimensions.
fn cell_gap_term<T: Real>(
    p: &CellBox<T>,
    t: &CellBox<T>,
    jac: &CellJacobian<T>,
    dim_max: &[T; 3],
) -> (T, [T; 6]) {
    let half = real::<T>(0.5);
    let two = real::<T>(2.0);
    let mut value = T::zero();
    let mut grad = [T::zero(); 6];
    for a in 0..3 {
        let delta = p.center[a] - t.center[a];
        let gap = delta.abs() - t.extent[a] * half;
        if gap <= T::zero() {
            continue;
        }
        let scaled = gap / dim_max[a];
        value += scaled * scaled;
        let d_gap_dc = if delta > T::zero() { T::one() } else { -T::one() };
        grad[a] = two * scaled / dim_max[a] * d_gap_dc * jac.center[a];
    }
    (value, grad)
}

/// IoU of a cell box pair plus the gradient of the IoU with respect to the
/// six channel values of the first box.
fn cell_iou_grad<T: Real>(
    p: &CellBox<T>,
    t: &CellBox<T>,
    jac: &CellJacobian<T>,
) -> (T, [T; 6]) {
    let axes = [
        axis_overlap_grad(p.center[0], p.extent[0], t.center[0], t.extent[0]),
        axis_overlap_grad(p.center[1], p.extent[1], t.center[1], t.extent[1]),
        axis_overlap_grad(p.center[2], p.extent[2], t.center[2], t.extent[2]),
    ];
    let inter = axes[0].o * axes[1].o * axes[2].o;
    let vol_p = p.extent[0] * p.extent[1] * p.extent[2];
    let vol_t = t.extent[0] * t.extent[1] * t.extent[2];
    let union = vol_p + vol_t - inter;
    if union <= T::zero() {
        return (T::zero(), [T::zero(); 6]);
    }
    let iou = inter / union;

    let mut grad = [T::zero(); 6];
    if inter > T::zero() {
        let u2 = union * union;
        for a in 0..3 {
            let others = match a {
                0 => axes[1].o * axes[2].o,
                1 => axes[0].o * axes[2].o,
                _ => axes[0].o * axes[1].o,
            };
            let d_inter_dc = axes[a].d_center * others;
            let d_inter_de = axes[a].d_extent * others;
            let d_vol_de = match a {
                0 => p.extent[1] * p.extent[2],
                1 => p.extent[0] * p.extent[2],
                _ => p.extent[0] * p.extent[1],
            };
            // d(iou)/dq = (dI·(U + I) − I·dV) / U², since dU = dV − dI.
            let d_iou_dc = d_inter_dc * (union + inter) / u2;
            let d_iou_de = (d_inter_de * (union + inter) - inter * d_vol_de) / u2;
            grad[a] = d_iou_dc * jac.center[a];
            grad[3 + a] = d_iou_de * jac.extent[a];
        }
    }
    (iou, grad)
}

/// Box loss over responsible cells: IoU term plus yaw-channel term.
pub fn box_loss<T: Real>(
    pred: &GridTensor<T>,
    target: &GridTensor<T>,
    g: &GridSpec<T>,
    w: &LossWeights<T>,
) -> T {
    pred.assert_same_shape(target);
    pred.assert_matches(g);
    let mask = responsibility_mask(target);
    let jac = cell_jacobian(g);
    let yaw_ch = target.ch_yaw();
    let mut acc = T::zero();
    for row in 0..g.s {
        for col in 0..g.s {
            if !mask[[row, col]] {
                continue;
            }
            let pb = cell_box(pred, row, col, g);
            let tb = cell_box(target, row, col, g);
            let (iou, _) = cell_iou_grad(&pb, &tb, &jac);
            let (gap, _) = cell_gap_term(&pb, &tb, &jac, &g.dim_max);
            let miss = T::one() - iou;
            let d_yaw = pred.data[[row, col, yaw_ch]] - target.data[[row, col, yaw_ch]];
            acc += w.iou * (miss * miss + gap) + w.yaw * d_yaw * d_yaw;
        }
    }
    acc
}

/// Total loss breakdown for one frame.
pub fn total_loss<T: Real>(
    pred: &GridTensor<T>,
    target: &GridTensor<T>,
    g: &GridSpec<T>,
    w: &LossWeights<T>,
) -> LossBreakdown<T> {
    let conf = confidence_loss(pred, target, w);
    let cls = class_loss(pred, target, w);
    let box_ = box_loss(pred, target, g, w);
    LossBreakdown {
        conf,
        cls,
        box_,
        total: conf + cls + box_,
    }
}

/// Total loss plus the analytic gradient with respect to every prediction
/// channel (same shape as `pred`).
pub fn total_loss_grad<T: Real>(
    pred: &GridTensor<T>,
    target: &GridTensor<T>,
    g: &GridSpec<T>,
    w: &LossWeights<T>,
) -> (LossBreakdown<T>, GridTensor<T>) {
    pred.assert_same_shape(target);
    pred.assert_matches(g);
    let mask = responsibility_mask(target);
    let jac = cell_jacobian(g);
    let two = real::<T>(2.0);
    let c = g.num_classes;
    let yaw_ch = pred.ch_yaw();

    let mut grad = GridTensor::zeros(g.s, c);
    let mut conf_acc = T::zero();
    let mut cls_acc = T::zero();
    let mut box_acc = T::zero();

    for row in 0..g.s {
        for col in 0..g.s {
            let obj = mask[[row, col]];
            let d_conf = pred.conf(row, col) - target.conf(row, col);
            let lambda = if obj { w.obj } else { w.noobj };
            conf_acc += lambda * d_conf * d_conf;
            grad.data[[row, col, 0]] = two * lambda * d_conf;
            if !obj {
                continue;
            }

            for ch in 1..1 + c {
                let d = pred.data[[row, col, ch]] - target.data[[row, col, ch]];
                cls_acc += w.class * d * d;
                grad.data[[row, col, ch]] = two * w.class * d;
            }

            let pb = cell_box(pred, row, col, g);
            let tb = cell_box(target, row, col, g);
            let (iou, iou_grad) = cell_iou_grad(&pb, &tb, &jac);
            let (gap, gap_grad) = cell_gap_term(&pb, &tb, &jac, &g.dim_max);
            let miss = T::one() - iou;
            box_acc += w.iou * (miss * miss + gap);
            let d_loss_d_iou = -two * w.iou * miss;
            for k in 0..6 {
                grad.data[[row, col, 1 + c + k]] =
                    d_loss_d_iou * iou_grad[k] + w.iou * gap_grad[k];
            }

            let d_yaw = pred.data[[row, col, yaw_ch]] - target.data[[row, col, yaw_ch]];
            box_acc += w.yaw * d_yaw * d_yaw;
            grad.data[[row, col, yaw_ch]] = two * w.yaw * d_yaw;
        }
    }

    let breakdown = LossBreakdown {
        conf: conf_acc,
        cls: cls_acc,
        box_: box_acc,
        total: conf_acc + cls_acc + box_acc,
    };
    (breakdown, grad)
}

/// Mean loss over a batch of frames.
pub fn batch_loss<T: Real>(
    pairs: &[(GridTensor<T>, GridTensor<T>)],
    g: &GridSpec<T>,
    w: &LossWeights<T>,
) -> LossBreakdown<T> {
    assert!(!pairs.is_empty(), "batch_loss: empty batch");
    let n = real::<T>(pairs.len() as f64);
    let mut acc = LossBreakdown::zero();
    for (pred, target) in pairs {
        let b = total_loss(pred, target, g, w);
        acc.conf += b.conf;
        acc.cls += b.cls;
        acc.box_ += b.box_;
    }
    acc.conf /= n;
    acc.cls /= n;
    acc.box_ /= n;
    acc.total = acc.conf + acc.cls + acc.box_;
    acc
}
