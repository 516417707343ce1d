//! File formats: OBJ meshes with UVs, PLY point clouds, and the binary
//! container used for checkpoints and dataset archives.

mod container;
mod grid;
mod obj;
mod ply;

pub use container::{find_blob, read_container, write_container, Blob, Dtype};
pub use grid::{read_grid, write_grid};
pub use obj::{read_obj, write_obj, ObjData};
pub use ply::{read_ply_points, write_ply_points, PlyFormat, PointCloudData};

use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes: not a container file")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("container header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("container truncated: {0}")]
    Truncated(String),
    #[error("blob {0:?} not found")]
    BlobMissing(String),
    #[error("blob {name:?} holds {actual:?}, requested {requested:?}")]
    DtypeMismatch {
        name: String,
        actual: Dtype,
        requested: Dtype,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("blob {name:?} has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl IoError {
    pub(crate) fn parse(path: &str, line: usize, msg: impl Into<String>) -> Self {
        IoError::Parse {
            path: path.to_string(),
            line,
            msg: msg.into(),
        }
    }
}
