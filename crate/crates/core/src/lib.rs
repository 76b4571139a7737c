//! Fitting engine for dense face correspondence images.
//!
//! Given a PNCC image (per-pixel normalized coordinates on a canonical mean
//! face) and an offset image (per-pixel displacement from the mean face to
//! the subject), this crate recovers
//!
//! - an affine and a pinhole camera from the dense 2D/3D correspondences,
//! - 3D morphable model shape and expression coefficients from one or many
//!   images with a single regularized linear solve,
//! - sparse 2D/3D landmarks, and video-sequence tracks of them.
//!
//! A software rasterizer renders ground-truth correspondence images from a
//! model, coefficients and camera, which stands in for the image-to-3D
//! network and serves as the oracle for all round-trip tests.

// `!(x > 0.0)` style guards deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod fitter;
pub mod image;
pub mod landmarks;
pub mod model;
pub mod raster;
pub mod tracker;

pub use camera::{AffineCamera, Camera, Correspondence, PinholeCamera};
pub use fitter::{fit_image, solve_multi, solve_single, FitOptions, FitResult, VertexMatch};
pub use image::{CorrespondenceMaps, FloatImage3};
pub use model::{Coefficients, MeshTopology, MorphableModel, NccTransform};
