//! Deterministic scene layout: normalized bounding boxes, constraint
//! building from parsed relations, a seeded projection solver, and the
//! rasterized / attention-derived binary masks consumed by the latent loop.

pub mod bruteforce;
mod constraint;
mod mask;
mod solver;

pub use constraint::{
    relation_groups, relation_to_constraints, Axis, BoxRef, Constraint, ConstraintSet, Order,
    RelationCheck, RelationPredicate, VarSpec, DEFAULT_BOX_RATIO, MIN_BOX_SIDE, PROXIMITY_RADIUS,
    WEARING_MIN_IOU,
};
pub use mask::{attention_mass, attention_to_mask, half_peak_box, rasterize_mask};
pub use solver::{solve_layout, solve_layout_detailed, solve_relaxed, Relaxation, SolveReport};

use thiserror::Error;

/// Minimum area a solved object box may have.
pub const MIN_BOX_AREA: f64 = 0.01;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("no feasible layout: {0}")]
    Infeasible(String),
    #[error("unknown relation lexeme {0:?}")]
    UnknownRelation(String),
    #[error("anchor entity {0:?} has no box")]
    MissingAnchor(String),
    #[error("entity {0:?} has no layout box")]
    MissingLayout(String),
    #[error("mask shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("invalid mask input: {0}")]
    InvalidMask(String),
    #[error("directive has no layout interpretation: {0}")]
    InvalidDirective(String),
}

/// Axis-aligned box in normalized canvas coordinates, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub const CANVAS: BBox = BBox { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, LayoutError> {
        let b = BBox { x0, y0, x1, y1 };
        if !(0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0) {
            return Err(LayoutError::InvalidBox(format!(
                "corners must satisfy 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1, got {b:?}"
            )));
        }
        Ok(b)
    }

    /// Box of size `w`x`h` centered at `(cx, cy)`, center clamped so the box
    /// stays inside the canvas.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        let w = w.min(1.0);
        let h = h.min(1.0);
        let cx = cx.clamp(w / 2.0, 1.0 - w / 2.0);
        let cy = cy.clamp(h / 2.0, 1.0 - h / 2.0);
        BBox { x0: cx - w / 2.0, y0: cy - h / 2.0, x1: cx + w / 2.0, y1: cy + h / 2.0 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// (cx, cy)
    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x < self.x1 && self.y0 <= y && y < self.y1
    }

    pub fn contains_box(&self, inner: &BBox) -> bool {
        const SLOP: f64 = 1e-12;
        self.x0 - SLOP <= inner.x0
            && inner.x1 <= self.x1 + SLOP
            && self.y0 - SLOP <= inner.y0
            && inner.y1 <= self.y1 + SLOP
    }
}

/// Where a binary layout mask came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    FromBox,
    /// Thresholded attention; `degenerate` marks a constant map that forced
    /// the all-on fallback.
    FromAttention { degenerate: bool },
}

/// Binary spatial mask on the attention grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutMask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
    source: MaskSource,
}

impl LayoutMask {
    pub fn new(height: usize, width: usize, cells: Vec<bool>, source: MaskSource) -> Result<Self, LayoutError> {
        if cells.len() != height * width {
            return Err(LayoutError::ShapeMismatch {
                expected: format!("{} cells", height * width),
                got: format!("{}", cells.len()),
            });
        }
        if !cells.iter().any(|&c| c) {
            return Err(LayoutError::InvalidMask("mask has no set cells".into()));
        }
        Ok(Self { height, width, cells, source })
    }

    pub fn all_on(height: usize, width: usize, source: MaskSource) -> Self {
        Self { height, width, cells: vec![true; height * width], source }
    }

    /// Mask with no set cells; only reachable through this constructor,
    /// since derived masks always claim at least one cell.
    pub fn all_off(height: usize, width: usize, source: MaskSource) -> Self {
        Self { height, width, cells: vec![false; height * width], source }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn source(&self) -> MaskSource {
        self.source
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    /// Flat row-major cell view.
    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count_set(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Tight box around all set cells, in normalized coordinates aligned to
    /// cell boundaries.
    pub fn bounding_box(&self) -> BBox {
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    r0 = r0.min(r);
                    c0 = c0.min(c);
                    r1 = r1.max(r);
                    c1 = c1.max(c);
                }
            }
        }
        BBox {
            x0: c0 as f64 / self.width as f64,
            y0: r0 as f64 / self.height as f64,
            x1: (c1 + 1) as f64 / self.width as f64,
            y1: (r1 + 1) as f64 / self.height as f64,
        }
    }
}
