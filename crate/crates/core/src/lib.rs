//! Geometry and reconstruction for panoramic 4D scenes.

pub mod attention;
pub mod erp;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod io;
mod optim;
pub mod pose;
pub mod spatial;
pub mod synthetic;
pub mod temporal;
pub mod trajectory;

pub use error::{Error, Result};
pub use image::{psnr, BoolGrid, Image};
pub use pose::SceneCamera;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/projection.md")]
    mod projection {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/spatial.md")]
    mod spatial {}
    #[doc = include_str!("../../../book/src/temporal.md")]
    mod temporal {}
    #[doc = include_str!("../../../book/src/gaussians.md")]
    mod gaussians {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
