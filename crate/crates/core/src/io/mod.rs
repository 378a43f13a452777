//! File formats: raw float grids, PNG images, Gaussian PLY files and the
//! JSON sidecars for cameras and poses.

mod grid;
mod json;
mod ply;
mod png;

pub use self::grid::{read_grids, write_grids, GRID_MAGIC};
pub use self::json::{read_camera_list, read_json, read_poses, write_camera_list, write_json, write_poses, PoseRecord};
pub use self::ply::{read_ply, write_ply};
pub use self::png::{read_png, write_png};

use std::path::Path;

use crate::error::Error;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}
