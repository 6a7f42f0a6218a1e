//! BEV grid codec: encode ground-truth boxes into the S×S target volume and
//! decode predicted volumes back into scored boxes.
//!
//! Channel layout per cell: `[conf | class_0..C-1 | tx, ty, tz | tw, th, tl | tθ]`,
//! everything in [0, 1]. Rows index depth (z), columns index lateral
//! position (x). Positional offsets tx/tz are cell-relative so every
//! regression channel shares the sigmoid range; ty, dims and yaw are
//! normalized against the grid ranges.

use crate::geometry::{bev_iou, normalize_angle, BoxSpec};
use crate::scalar::{real, Real};
use ndarray::{s, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

/// BEV grid geometry and normalization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec<T> {
    /// Grid side; the grid is S×S.
    pub s: usize,
    /// Lateral range [x_min, x_max] in meters.
    pub x_range: [T; 2],
    /// Vertical range [y_min, y_max] in meters (camera y points down).
    pub y_range: [T; 2],
    /// Depth range [z_min, z_max] in meters.
    pub z_range: [T; 2],
    /// Dimension normalizers (w_max, h_max, l_max) in meters.
    pub dim_max: [T; 3],
    /// Number of classes C.
    pub num_classes: usize,
}

impl<T: Real> Default for GridSpec<T> {
    fn default() -> Self {
        GridSpec {
            s: 15,
            x_range: [real(-55.0), real(55.0)],
            y_range: [real(-2.0), real(13.0)],
            z_range: [real(0.0), real(85.0)],
            dim_max: [real(4.0), real(4.0), real(8.0)],
            num_classes: 1,
        }
    }
}

impl<T: Real> GridSpec<T> {
    /// Channels per cell: 1 confidence + C class scores + 7 box values.
    pub fn channels(&self) -> usize {
        1 + self.num_classes + 7
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.s >= 1
            && self.num_classes >= 1
            && self.x_range[1] > self.x_range[0]
            && self.y_range[1] > self.y_range[0]
            && self.z_range[1] > self.z_range[0]
            && self.dim_max.iter().all(|d| *d > T::zero());
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config("invalid grid spec".into()))
        }
    }

    #[inline]
    fn x_span(&self) -> T {
        self.x_range[1] - self.x_range[0]
    }
    #[inline]
    fn y_span(&self) -> T {
        self.y_range[1] - self.y_range[0]
    }
    #[inline]
    fn z_span(&self) -> T {
        self.z_range[1] - self.z_range[0]
    }

    /// Continuous grid coordinate of x in [0, S] (not yet floored).
    #[inline]
    fn u_of_x(&self, x: T) -> T {
        (x - self.x_range[0]) / self.x_span() * real::<T>(self.s as f64)
    }
    #[inline]
    fn v_of_z(&self, z: T) -> T {
        (z - self.z_range[0]) / self.z_span() * real::<T>(self.s as f64)
    }
}

/// Grid cell index, or out-of-range.
pub fn cell_index<T: Real>(x: T, z: T, g: &GridSpec<T>) -> Option<(usize, usize)> {
    if x < g.x_range[0] || x > g.x_range[1] || z < g.z_range[0] || z > g.z_range[1] {
        return None;
    }
    let clamp = |u: T| -> usize {
        let idx = u.floor().to_usize().unwrap_or(0);
        idx.min(g.s - 1) // values exactly at the upper bound fold into the last cell
    };
    Some((clamp(g.v_of_z(z)), clamp(g.u_of_x(x))))
}

/// S×S×(1+C+7) target or prediction volume.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTensor<T> {
    pub data: Array3<T>,
    pub num_classes: usize,
}

impl<T: Real> GridTensor<T> {
    pub fn zeros(s: usize, num_classes: usize) -> Self {
        GridTensor {
            data: Array3::zeros((s, s, 1 + num_classes + 7)),
            num_classes,
        }
    }

    pub fn side(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }

    #[inline]
    pub fn conf(&self, row: usize, col: usize) -> T {
        self.data[[row, col, 0]]
    }

    /// Channel offsets within a cell vector.
    #[inline]
    pub fn ch_class(&self) -> std::ops::Range<usize> {
        1..1 + self.num_classes
    }
    #[inline]
    pub fn ch_pos(&self) -> usize {
        1 + self.num_classes
    }
    #[inline]
    pub fn ch_dim(&self) -> usize {
        4 + self.num_classes
    }
    #[inline]
    pub fn ch_yaw(&self) -> usize {
        7 + self.num_classes
    }

    pub fn assert_same_shape(&self, other: &Self) {
        assert_eq!(
            self.data.shape(),
            other.data.shape(),
            "grid tensor shape mismatch"
        );
        assert_eq!(self.num_classes, other.num_classes);
    }

    pub fn assert_matches(&self, g: &GridSpec<T>) {
        assert_eq!(self.side(), g.s, "grid tensor side does not match spec");
        assert_eq!(
            self.channels(),
            g.channels(),
            "grid tensor channels do not match spec"
        );
        assert_eq!(self.num_classes, g.num_classes);
    }
}

/// A decoded box with its confidence score.
pub type ScoredBox<T> = BoxSpec<T>;

#[inline]
fn clamp01<T: Real>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// Normalized cell channels for one object: returns
/// (tx, ty, tz, tw, th, tl, tθ) for the cell at (row, col).
fn encode_cell<T: Real>(b: &BoxSpec<T>, row: usize, col: usize, g: &GridSpec<T>) -> [T; 7] {
    let tx = g.u_of_x(b.center[0]) - real::<T>(col as f64);
    let tz = g.v_of_z(b.center[2]) - real::<T>(row as f64);
    let ty = (b.center[1] - g.y_range[0]) / g.y_span();
    let tw = b.dims[0] / g.dim_max[0];
    let th = b.dims[1] / g.dim_max[1];
    let tl = b.dims[2] / g.dim_max[2];
    let t_yaw = (normalize_angle(b.yaw) + T::PI()) / (T::PI() + T::PI());
    [
        clamp01(tx),
        clamp01(ty),
        clamp01(tz),
        clamp01(tw),
        clamp01(th),
        clamp01(tl),
        t_yaw,
    ]
}

/// Invert the per-cell channel normalization back into a box. `cell` must
/// hold the 1+C+7 channel vector of the cell at (row, col).
pub fn decode_cell<T: Real>(
    cell: ArrayView1<T>,
    row: usize,
    col: usize,
    g: &GridSpec<T>,
) -> BoxSpec<T> {
    let c = g.num_classes;
    let s = real::<T>(g.s as f64);
    let tx = cell[1 + c];
    let ty = cell[2 + c];
    let tz = cell[3 + c];
    let x = g.x_range[0] + (real::<T>(col as f64) + tx) / s * g.x_span();
    let y = g.y_range[0] + ty * g.y_span();
    let z = g.z_range[0] + (real::<T>(row as f64) + tz) / s * g.z_span();
    let dims = [
        cell[4 + c] * g.dim_max[0],
        cell[5 + c] * g.dim_max[1],
        cell[6 + c] * g.dim_max[2],
    ];
    let yaw = normalize_angle(cell[7 + c] * (T::PI() + T::PI()) - T::PI());
    let class_id = (0..c)
        .max_by(|&a, &b| cell[1 + a].partial_cmp(&cell[1 + b]).unwrap())
        .unwrap_or(0);
    BoxSpec::new([x, y, z], dims, yaw, class_id)
}

/// Encode a list of boxes into the grid target volume.
///
/// In-range objects claim the cell containing their BEV center; when two
/// objects land in the same cell the nearer one (smaller z) wins. Panics if
/// any `class_id` is out of range for the spec.
pub fn encode<T: Real>(objects: &[BoxSpec<T>], g: &GridSpec<T>) -> GridTensor<T> {
    let mut t = GridTensor::zeros(g.s, g.num_classes);
    // Depth of the object currently owning each cell.
    let mut owner_z = vec![vec![None::<T>; g.s]; g.s];
    for b in objects {
        assert!(
            b.class_id < g.num_classes,
            "encode: class_id {} out of range (C = {})",
            b.class_id,
            g.num_classes
        );
        let Some((row, col)) = cell_index(b.center[0], b.center[2], g) else {
            continue;
        };
        if let Some(z) = owner_z[row][col] {
            if b.center[2] >= z {
                continue;
            }
        }
        owner_z[row][col] = Some(b.center[2]);

        let ch = encode_cell(b, row, col, g);
        let mut cell = t.data.index_axis_mut(Axis(0), row);
        let mut cell = cell.index_axis_mut(Axis(0), col);
        cell.fill(T::zero());
        cell[0] = T::one();
        cell[1 + b.class_id] = T::one();
        for (k, v) in ch.iter().enumerate() {
            cell[1 + g.num_classes + k] = *v;
        }
    }
    t
}

/// Decode every cell with confidence above `threshold` into a scored box,
/// optionally applying greedy rotated-BEV non-maximum suppression. The
/// result is sorted by descending score.
///
/// Panics if the tensor shape does not match the spec.
pub fn decode<T: Real>(
    t: &GridTensor<T>,
    threshold: T,
    g: &GridSpec<T>,
    nms_iou: Option<T>,
) -> Vec<ScoredBox<T>> {
    t.assert_matches(g);
    let mut boxes = Vec::new();
    for row in 0..g.s {
        for col in 0..g.s {
            let conf = t.conf(row, col);
            if conf > threshold {
                let cell = t.data.slice(s![row, col, ..]);
                boxes.push(decode_cell(cell, row, col, g).with_score(conf));
            }
        }
    }
    boxes.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    match nms_iou {
        Some(limit) => nms(boxes, limit),
        None => boxes,
    }
}

/// Greedy NMS on rotated BEV footprints: keep boxes in descending score,
/// dropping any box whose IoU with an already-kept box exceeds the limit.
pub fn nms<T: Real>(sorted: Vec<ScoredBox<T>>, iou_limit: T) -> Vec<ScoredBox<T>> {
    let mut kept: Vec<ScoredBox<T>> = Vec::with_capacity(sorted.len());
    for b in sorted {
        if kept.iter().all(|k| bev_iou(k, &b) <= iou_limit) {
            kept.push(b);
        }
    }
    kept
}
