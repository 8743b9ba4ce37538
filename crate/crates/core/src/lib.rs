#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Virtual AFM height-map synthesis from protein structures, plus the
//! geometry and image metrics used to score 3D reconstructions.

pub mod afm;
pub mod dataset;
pub mod error;
pub mod eval2d;
pub mod eval3d;
pub mod isosurface;
pub mod kdtree;
mod mc_table;
pub mod mesh;
pub mod par;
pub mod pdb;
pub mod raster;

pub use error::{Error, Result};
