//! Core gaze domain types shared by every other module.
//!
//! Coordinates follow the raster convention: `x` grows rightward, `y` grows
//! downward, origin at the top-left corner of the screen. A fixation at
//! `(0, 0)` sits on the top-left corner, `(w, h)` on the bottom-right.
//!
//! All types here are plain immutable data; none of them spawn threads or
//! hold interior mutability, so they can be shared freely.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors produced when validating gaze-domain values.
#[derive(Debug, Error, PartialEq)]
pub enum GazeError {
    #[error("scanpath has no fixations")]
    EmptyScanpath,
    #[error("fixation {index} at ({x}, {y}) is outside the {w}x{h} screen")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        w: u32,
        h: u32,
    },
    #[error("fixation {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("screen dimensions must be positive, got {w}x{h}")]
    BadScreen { w: u32, h: u32 },
    #[error("saliency map value at index {index} is negative or non-finite")]
    BadSaliencyValue { index: usize },
    #[error("saliency map dimensions {w}x{h} do not match {len} values")]
    SaliencyShape { w: u32, h: u32, len: usize },
    #[error("observer pool is empty")]
    EmptyPool,
    #[error("pool member {index} belongs to image '{got}', expected '{expected}'")]
    PoolImageMismatch {
        index: usize,
        got: String,
        expected: String,
    },
    #[error("pool member {index} has screen {got_w}x{got_h}, expected {w}x{h}")]
    PoolScreenMismatch {
        index: usize,
        got_w: u32,
        got_h: u32,
        w: u32,
        h: u32,
    },
}

/// A single gaze dwell: position in screen pixels plus an optional onset
/// time. The time is carried through I/O but ignored by all computation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub x: f64,
    pub y: f64,
    pub t_ms: Option<f64>,
}

impl Fixation {
    pub fn new(x: f64, y: f64) -> Self {
        Fixation { x, y, t_ms: None }
    }

    pub fn with_time(x: f64, y: f64, t_ms: f64) -> Self {
        Fixation {
            x,
            y,
            t_ms: Some(t_ms),
        }
    }
}

/// An ordered fixation sequence traced by one observer over one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scanpath {
    pub image_id: String,
    pub observer_id: String,
    pub screen_w: u32,
    pub screen_h: u32,
    pub fixations: Vec<Fixation>,
}

impl Scanpath {
    pub fn new(
        image_id: impl Into<String>,
        observer_id: impl Into<String>,
        screen_w: u32,
        screen_h: u32,
        fixations: Vec<Fixation>,
    ) -> Self {
        Scanpath {
            image_id: image_id.into(),
            observer_id: observer_id.into(),
            screen_w,
            screen_h,
            fixations,
        }
    }

    pub fn len(&self) -> usize {
        self.fixations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixations.is_empty()
    }

    /// Screen diagonal in pixels; the normalizer used by the MultiMatch
    /// dissimilarities.
    pub fn diagonal(&self) -> f64 {
        let w = f64::from(self.screen_w);
        let h = f64::from(self.screen_h);
        (w * w + h * h).sqrt()
    }

    pub fn validate(&self) -> Result<(), GazeError> {
        validate_scanpath(self)
    }
}

/// Checks every scanpath invariant: positive screen, at least one fixation,
/// all coordinates finite and inside `[0, w] x [0, h]`.
pub fn validate_scanpath(sp: &Scanpath) -> Result<(), GazeError> {
    if sp.screen_w == 0 || sp.screen_h == 0 {
        return Err(GazeError::BadScreen {
            w: sp.screen_w,
            h: sp.screen_h,
        });
    }
    if sp.fixations.is_empty() {
        return Err(GazeError::EmptyScanpath);
    }
    let (w, h) = (f64::from(sp.screen_w), f64::from(sp.screen_h));
    for (index, f) in sp.fixations.iter().enumerate() {
        if !f.x.is_finite() || !f.y.is_finite() {
            return Err(GazeError::NonFinite { index });
        }
        if f.x < 0.0 || f.x > w || f.y < 0.0 || f.y > h {
            return Err(GazeError::OutOfBounds {
                index,
                x: f.x,
                y: f.y,
                w: sp.screen_w,
                h: sp.screen_h,
            });
        }
    }
    Ok(())
}

/// Maps each fixation to `(x/w, y/h)` in the unit square.
pub fn normalize_coords(sp: &Scanpath) -> Result<Vec<(f64, f64)>, GazeError> {
    validate_scanpath(sp)?;
    let (w, h) = (f64::from(sp.screen_w), f64::from(sp.screen_h));
    Ok(sp.fixations.iter().map(|f| (f.x / w, f.y / h)).collect())
}

/// Inverse of [`normalize_coords`] for a single point.
pub fn denormalize(u: f64, v: f64, screen_w: u32, screen_h: u32) -> (f64, f64) {
    (u * f64::from(screen_w), v * f64::from(screen_h))
}

/// A nonnegative 2D grid of per-pixel attention, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl SaliencyMap {
    /// Builds a map, rejecting negative or non-finite values and shape
    /// mismatches.
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self, GazeError> {
        if width == 0 || height == 0 {
            return Err(GazeError::BadScreen {
                w: width,
                h: height,
            });
        }
        if values.len() != (width as usize) * (height as usize) {
            return Err(GazeError::SaliencyShape {
                w: width,
                h: height,
                len: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(GazeError::BadSaliencyValue { index });
        }
        Ok(SaliencyMap {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, col: u32, row: u32) -> f64 {
        self.values[row as usize * self.width as usize + col as usize]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Nearest-pixel index for a screen coordinate, after proportional
    /// rescaling from the given screen size onto this grid.
    pub fn pixel_for(&self, x: f64, y: f64, screen_w: u32, screen_h: u32) -> (u32, u32) {
        let gx = x * f64::from(self.width) / f64::from(screen_w);
        let gy = y * f64::from(self.height) / f64::from(screen_h);
        let col = (gx.floor() as i64).clamp(0, i64::from(self.width) - 1) as u32;
        let row = (gy.floor() as i64).clamp(0, i64::from(self.height) - 1) as u32;
        (col, row)
    }
}

/// Every observer's scanpath for one image; the empirical ground-truth
/// distribution the adversarial loss samples from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverPool {
    image_id: String,
    scanpaths: Vec<Scanpath>,
}

impl ObserverPool {
    /// Builds a pool, checking that it is nonempty and that every member
    /// shares the image id and screen dimensions.
    pub fn new(scanpaths: Vec<Scanpath>) -> Result<Self, GazeError> {
        let first = scanpaths.first().ok_or(GazeError::EmptyPool)?;
        let image_id = first.image_id.clone();
        let (w, h) = (first.screen_w, first.screen_h);
        for (index, sp) in scanpaths.iter().enumerate() {
            if sp.image_id != image_id {
                return Err(GazeError::PoolImageMismatch {
                    index,
                    got: sp.image_id.clone(),
                    expected: image_id,
                });
            }
            if sp.screen_w != w || sp.screen_h != h {
                return Err(GazeError::PoolScreenMismatch {
                    index,
                    got_w: sp.screen_w,
                    got_h: sp.screen_h,
                    w,
                    h,
                });
            }
        }
        Ok(ObserverPool {
            image_id,
            scanpaths,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn scanpaths(&self) -> &[Scanpath] {
        &self.scanpaths
    }

    pub fn len(&self) -> usize {
        self.scanpaths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scanpaths.is_empty()
    }

    pub fn screen(&self) -> (u32, u32) {
        (self.scanpaths[0].screen_w, self.scanpaths[0].screen_h)
    }
}

/// One row of the evaluation table: the four MultiMatch similarities, their
/// mean, and the two saliency-based metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mm_shape: f64,
    pub mm_direction: f64,
    pub mm_length: f64,
    pub mm_position: f64,
    pub mm_mean: f64,
    pub nss: f64,
    pub congruency: f64,
}
