//! Normalized bounding boxes and the pixel-to-normalized conversion used by
//! every pipeline stage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed on normalized coordinates before an overflow counts as an
/// error rather than floating-point noise.
pub const NORMALIZE_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BBoxError {
    #[error("degenerate rectangle: {0}")]
    Degenerate(String),
    #[error("rectangle out of bounds: {0}")]
    OutOfBounds(String),
    #[error("invalid dimensions: {0}x{1}")]
    InvalidDims(u32, u32),
}

/// Axis-aligned rectangle in normalized screen coordinates.
///
/// Origin is the top-left corner of the screen, x grows rightward, y grows
/// downward. `(x1, y1)` is the top-left corner, `(x2, y2)` the bottom-right,
/// and every coordinate lies in `[0, 1]` with `x1 < x2` and `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, BBoxError> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(BBoxError::Degenerate("non-finite coordinate".into()));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(BBoxError::Degenerate(format!(
                "[{x1}, {y1}, {x2}, {y2}] has empty extent"
            )));
        }
        if x1 < 0.0 || y1 < 0.0 || x2 > 1.0 || y2 > 1.0 {
            return Err(BBoxError::OutOfBounds(format!(
                "[{x1}, {y1}, {x2}, {y2}] outside [0, 1]"
            )));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn midpoint(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Containment test, inclusive of the rectangle border.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x1 <= x && x <= self.x2 && self.y1 <= y && y <= self.y2
    }

    /// Grow the rectangle by `dx`/`dy` on each side, clamped to `[0, 1]`.
    pub fn dilated(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: (self.x1 - dx).max(0.0),
            y1: (self.y1 - dy).max(0.0),
            x2: (self.x2 + dx).min(1.0),
            y2: (self.y2 + dy).min(1.0),
        }
    }

    /// Round every coordinate to 4 decimal places (the precision used for
    /// deduplication keys and serialized element-caption records).
    pub fn rounded4(&self) -> BBox {
        let r = |v: f64| (v * 10_000.0).round() / 10_000.0;
        BBox {
            x1: r(self.x1),
            y1: r(self.y1),
            x2: r(self.x2),
            y2: r(self.y2),
        }
    }

    /// Integer ten-thousandths, used as an exact ordering/dedup key.
    pub fn key4(&self) -> [i64; 4] {
        let k = |v: f64| (v * 10_000.0).round() as i64;
        [k(self.x1), k(self.y1), k(self.x2), k(self.y2)]
    }

    /// Render as `[x1, y1, x2, y2]` with 4 decimal places, the form embedded
    /// in question templates.
    pub fn coord_text(&self) -> String {
        format!(
            "[{:.4}, {:.4}, {:.4}, {:.4}]",
            self.x1, self.y1, self.x2, self.y2
        )
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = BBoxError;
    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Convert a pixel-space rectangle to normalized coordinates by dividing each
/// coordinate by the corresponding screen dimension.
///
/// Coordinates that overflow `[0, 1]` by less than [`NORMALIZE_EPS`] are
/// clamped; larger overflows are an error, as is a degenerate rectangle.
pub fn normalize_bbox(raw: [f64; 4], dims: (u32, u32)) -> Result<BBox, BBoxError> {
    let (w, h) = dims;
    if w == 0 || h == 0 {
        return Err(BBoxError::InvalidDims(w, h));
    }
    let (w, h) = (w as f64, h as f64);
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(BBoxError::Degenerate("non-finite coordinate".into()));
    }
    if raw[0] >= raw[2] || raw[1] >= raw[3] {
        return Err(BBoxError::Degenerate(format!(
            "[{}, {}, {}, {}] has empty extent",
            raw[0], raw[1], raw[2], raw[3]
        )));
    }
    let norm = [raw[0] / w, raw[1] / h, raw[2] / w, raw[3] / h];
    for v in norm {
        if !(-NORMALIZE_EPS..=1.0 + NORMALIZE_EPS).contains(&v) {
            return Err(BBoxError::OutOfBounds(format!(
                "[{}, {}, {}, {}] does not fit in {w}x{h}",
                raw[0], raw[1], raw[2], raw[3]
            )));
        }
    }
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    BBox::new(clamp(norm[0]), clamp(norm[1]), clamp(norm[2]), clamp(norm[3]))
}
