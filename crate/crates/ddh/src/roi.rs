//! Region-of-interest extraction from 14 labeled palm-contour keypoints.
//!
//! The keypoints fix a square patch over the palm center: the valleys
//! P3 and P9 give the patch direction, the palm-side edge points P0 and
//! P12 give the length scale L, and the middle valley P6 anchors the
//! center at distance (2/5)L along the palm-ward normal. The patch side
//! is (3/5)L. Coordinates are pixels, origin top-left, y downward.

use crate::error::{Error, Result};
use crate::gray::bilinear_at;
use crate::tensor::Tensor;
use std::path::{Path, PathBuf};

pub const KEYPOINT_COUNT: usize = 14;

/// A 2-D pixel-space point/vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Counterclockwise perpendicular in image coordinates (y down).
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }
}

/// The 14 labeled contour points P0..P13.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    points: [Vec2; KEYPOINT_COUNT],
}

/// Findings from [`validate_keypoints`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeypointViolation {
    /// Not exactly 14 points.
    Count(usize),
    /// Point with a NaN/infinite coordinate.
    NonFinite(usize),
    /// |P0 - P12| below tolerance.
    DegenerateLength,
    /// |P3 - P9| below tolerance.
    DegenerateAxis,
}

const DEGENERATE_EPS: f64 = 1e-6;

/// Checks a candidate point list; returns all violations found.
pub fn validate_keypoints(points: &[Vec2]) -> Vec<KeypointViolation> {
    let mut violations = Vec::new();
    if points.len() != KEYPOINT_COUNT {
        violations.push(KeypointViolation::Count(points.len()));
        return violations;
    }
    for (i, p) in points.iter().enumerate() {
        if !p.x.is_finite() || !p.y.is_finite() {
            violations.push(KeypointViolation::NonFinite(i));
        }
    }
    if violations.is_empty() {
        if points[0].sub(points[12]).norm() < DEGENERATE_EPS {
            violations.push(KeypointViolation::DegenerateLength);
        }
        if points[3].sub(points[9]).norm() < DEGENERATE_EPS {
            violations.push(KeypointViolation::DegenerateAxis);
        }
    }
    violations
}

impl KeypointSet {
    pub fn new(points: Vec<Vec2>) -> Result<Self> {
        let violations = validate_keypoints(&points);
        if !violations.is_empty() {
            return Err(Error::Geometry(format!("invalid keypoints: {violations:?}")));
        }
        let mut arr = [Vec2::new(0.0, 0.0); KEYPOINT_COUNT];
        arr.copy_from_slice(&points);
        Ok(KeypointSet { points: arr })
    }

    pub fn point(&self, i: usize) -> Vec2 {
        self.points[i]
    }

    pub fn points(&self) -> &[Vec2; KEYPOINT_COUNT] {
        &self.points
    }

    pub fn centroid(&self) -> Vec2 {
        let mut c = Vec2::new(0.0, 0.0);
        for p in &self.points {
            c = c.add(*p);
        }
        c.scale(1.0 / KEYPOINT_COUNT as f64)
    }

    /// Applies `p -> rotation(theta) * p * scale + translation` to every
    /// point.
    pub fn transformed(&self, theta: f64, scale: f64, translation: Vec2) -> KeypointSet {
        let (sin, cos) = theta.sin_cos();
        let mut pts = self.points;
        for p in &mut pts {
            let x = (p.x * cos - p.y * sin) * scale + translation.x;
            let y = (p.x * sin + p.y * cos) * scale + translation.y;
            *p = Vec2::new(x, y);
        }
        KeypointSet { points: pts }
    }
}

/// Which direction the patch axis follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AxisMode {
    /// Axis along P3 -> P9 (default).
    #[default]
    Primary,
    /// Axis perpendicular to P3 -> P9.
    Perpendicular,
}

/// The oriented square patch: center, unit axis, unit palm-ward normal,
/// and side length in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiFrame {
    pub center: Vec2,
    pub axis: Vec2,
    pub normal: Vec2,
    pub side: f64,
}

/// Derives the patch frame from the keypoints.
///
/// L = |P0 - P12|; the axis is the unit vector P3 -> P9 (or its
/// perpendicular under [`AxisMode::Perpendicular`]); the normal is the
/// axis perpendicular oriented toward the keypoint centroid relative to
/// P6; the center is P6 + (2/5)L along the normal; the side is (3/5)L.
pub fn roi_frame(pts: &KeypointSet, mode: AxisMode) -> Result<RoiFrame> {
    let violations = validate_keypoints(pts.points());
    if !violations.is_empty() {
        return Err(Error::Geometry(format!("invalid keypoints: {violations:?}")));
    }
    let length = pts.point(0).sub(pts.point(12)).norm();
    let dir = pts.point(9).sub(pts.point(3));
    let mut axis = dir.scale(1.0 / dir.norm());
    if mode == AxisMode::Perpendicular {
        axis = axis.perp();
    }
    let palm_side = pts.centroid().sub(pts.point(6));
    let perp = axis.perp();
    let orientation = perp.dot(palm_side);
    if orientation.abs() < DEGENERATE_EPS {
        return Err(Error::Geometry(
            "keypoint centroid coincides with P6 along the normal".to_string(),
        ));
    }
    let normal = if orientation > 0.0 { perp } else { perp.scale(-1.0) };
    let center = pts.point(6).add(normal.scale(0.4 * length));
    Ok(RoiFrame {
        center,
        axis,
        normal,
        side: 0.6 * length,
    })
}

/// Sampling options for [`extract_roi`].
#[derive(Debug, Clone, Copy)]
pub struct RoiOptions {
    pub out_size: usize,
    /// Sample out-of-image positions as zero instead of failing.
    pub zero_pad: bool,
    pub axis_mode: AxisMode,
}

impl Default for RoiOptions {
    fn default() -> Self {
        RoiOptions {
            out_size: 128,
            zero_pad: false,
            axis_mode: AxisMode::Primary,
        }
    }
}

/// Resamples the oriented square patch onto an `out_size` grid with
/// bilinear interpolation. Without `zero_pad`, any sample falling
/// outside the image is a bounds error.
pub fn extract_roi(image: &Tensor, pts: &KeypointSet, opts: &RoiOptions) -> Result<Tensor> {
    if image.rank() != 2 {
        return Err(Error::Input(format!(
            "extract_roi expects a rank-2 image, got {:?}",
            image.shape()
        )));
    }
    if opts.out_size == 0 {
        return Err(Error::Input("out_size must be positive".to_string()));
    }
    let frame = roi_frame(pts, opts.axis_mode)?;
    let n = opts.out_size;
    let step = frame.side / n as f64;
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        let v = (r as f64 + 0.5) * step - frame.side / 2.0;
        for c in 0..n {
            let u = (c as f64 + 0.5) * step - frame.side / 2.0;
            let pos = frame
                .center
                .add(frame.axis.scale(u))
                .add(frame.normal.scale(v));
            match bilinear_at(image, pos.x, pos.y) {
                Some(val) => out[r * n + c] = val.clamp(0.0, 1.0),
                None if opts.zero_pad => out[r * n + c] = 0.0,
                None => {
                    return Err(Error::Bounds(format!(
                        "ROI sample ({:.2}, {:.2}) outside image {}x{}",
                        pos.x,
                        pos.y,
                        image.dim(1),
                        image.dim(0)
                    )));
                }
            }
        }
    }
    Tensor::from_vec(vec![n, n], out)
}

/// One row of a keypoint label file.
#[derive(Debug, Clone)]
pub struct KeypointRecord {
    pub image_path: PathBuf,
    pub keypoints: KeypointSet,
}

/// Reads a keypoint CSV: one row per image,
/// `image_path,x0,y0,x1,y1,...,x13,y13` in pixel units.
pub fn load_keypoint_csv(path: impl AsRef<Path>) -> Result<Vec<KeypointRecord>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), line + 1)))?;
        if row.len() != 1 + 2 * KEYPOINT_COUNT {
            return Err(Error::Data(format!(
                "{} line {}: expected {} fields, got {}",
                path.display(),
                line + 1,
                1 + 2 * KEYPOINT_COUNT,
                row.len()
            )));
        }
        let image_path = PathBuf::from(&row[0]);
        let mut points = Vec::with_capacity(KEYPOINT_COUNT);
        for i in 0..KEYPOINT_COUNT {
            let x: f64 = row[1 + 2 * i]
                .parse()
                .map_err(|e| Error::Data(format!("{} line {}: bad x{i}: {e}", path.display(), line + 1)))?;
            let y: f64 = row[2 + 2 * i]
                .parse()
                .map_err(|e| Error::Data(format!("{} line {}: bad y{i}: {e}", path.display(), line + 1)))?;
            points.push(Vec2::new(x, y));
        }
        let keypoints = KeypointSet::new(points)
            .map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), line + 1)))?;
        records.push(KeypointRecord { image_path, keypoints });
    }
    Ok(records)
}
