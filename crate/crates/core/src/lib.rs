//! Multiview-to-3D reconstruction with differentiable Gaussian splatting.
//!
//! A turn-table set of K views is fitted directly by a cloud of anisotropic
//! Gaussians under image-level losses, optionally alternating with a pluggable
//! view-refinement stage, and the result can be meshed with marching cubes.

pub mod error;
pub mod fit;
pub mod image;
pub mod io;
pub mod losses;
pub mod meshing;
pub mod raster;
pub mod real;
pub mod refine;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
pub use image::Image;
pub use real::Real;
