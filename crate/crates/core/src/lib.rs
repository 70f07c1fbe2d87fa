//! Turns VR-captured human manipulation recordings into robot-format
//! training data and provides the tooling around it: camera/VR chain
//! calibration, dexterous-hand retargeting, temporal slowdown, relative
//! action chunks, Z-score normalization, weighted human/robot cotraining,
//! kinematic replay checks and rubric-based scoring.
//!
//! Every wrist pose ends up in the egocentric camera frame. Policy-facing
//! rows are 15-wide: position (3), 6D rotation (6), hand joints (6).

pub mod calibration;
pub mod cotrain;
pub mod dataset;
pub mod error;
pub mod evalscore;
pub mod geometry;
pub mod kinematics;
pub mod normalize;
pub mod pipeline;
pub mod replay;
pub mod retarget;
pub mod synth;
pub mod transform;

pub use error::{Error, Result};

/// Width of a proprioception/action row: position, 6D rotation, hand joints.
pub const ROW_DIM: usize = 15;
/// Number of actuated hand joints.
pub const HAND_DOF: usize = 6;

pub fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Toml {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
