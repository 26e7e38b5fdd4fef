//! morphfit — model-based localization on segmentation confidence maps.
//!
//! A segmentation network reduces a hard localization problem to a soft one:
//! instead of landmarks it emits a per-pixel confidence map for the outline of
//! the object. This crate implements the second stage, which turns that map
//! back into an explicit model:
//!
//! 1. **confmap** – confidence-map container, thresholding, sub-pixel sampling.
//! 2. **circlefit** – algebraic (closed-form) and geometric (damped
//!    Gauss–Newton) circle fits, plus the gated detection pipeline.
//! 3. **pdm** – point-distribution models: Procrustes alignment, PCA modes,
//!    projection/reconstruction and the ±3√λ coefficient clip.
//! 4. **cpd** – coherent-point-drift similarity registration with rotation and
//!    reflection restarts, used to place the mean shape.
//! 5. **morph** – the iterative fit loop: orthogonal profile search against
//!    the confidence map alternated with the shape-model constraint.
//! 6. **drr** – ray-casting X-ray simulator over CT volumes and mesh
//!    ground-truth projection, used to produce training/test imagery.
//! 7. **synth** – deterministic synthetic confidence maps, square occlusions
//!    and shape families with known ground truth.
//! 8. **eval** – batch evaluation over fixture directories.

pub mod confmap;
pub mod cpd;
pub mod circlefit;
pub mod drr;
pub mod eval;
pub mod geometry;
pub mod gray;
pub mod io;
pub mod metrics;
pub mod morph;
pub mod overlay;
pub mod pdm;
pub mod synth;
pub mod transform;

pub use confmap::ConfidenceMap;
pub use geometry::{Circle, Point, PointSet, Polyline};
pub use gray::GrayImage;
pub use pdm::{PointDistributionModel, ShapeVector};
pub use transform::SimilarityTransform2D;
