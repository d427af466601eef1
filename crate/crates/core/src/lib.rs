//! Mixed-supervision binary segmentation at desk scale.
//!
//! One segmentation model is trained jointly from five annotation regimes
//! (dense pixel masks, rasterized polygons, bounding boxes, scribbles, and
//! point sets), each routed through a loss tailored to what that label kind
//! actually asserts about the image:
//!
//! - dense (pixel/polygon): binary cross-entropy + Dice
//! - box: BCE + Dice in box space, after projecting the predicted mask onto
//!   its row/column extents ([`losses::box_projection`])
//! - scribble: BCE on the labeled pixels + an uncertainty penalty on the
//!   unlabeled ones
//! - point: rotation-consistency MSE + BCE at the annotated points
//!
//! The crate also ships the plumbing that makes the framework exercisable
//! end to end without clinical data: weak-label synthesis from dense masks
//! ([`annotations`]), a synthetic blob corpus ([`data`]), a small pyramid
//! encoder-decoder ([`model`]), an SGD training loop ([`trainer`]), and
//! Dice/IoU evaluation with count-weighted aggregation ([`metrics`]).

pub mod annotations;
pub mod checks;
pub mod data;
pub mod error;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod plots;
pub mod trainer;

pub use error::{Error, Result};

use ndarray::Array3;

/// A loaded image: channels-first `[C, H, W]` grid of intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub data: Array3<f64>,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Self {
        Self { data }
    }

    /// Single-channel image from an `H×W` grid.
    pub fn from_luma(grid: ndarray::Array2<f64>) -> Self {
        let (h, w) = grid.dim();
        Self {
            data: grid.into_shape_with_order((1, h, w)).expect("exact reshape"),
        }
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }
}
