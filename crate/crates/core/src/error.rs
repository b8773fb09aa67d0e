use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid quaternion: {0}")]
    InvalidQuaternion(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("insufficient points{}: need at least {needed}, got {got}", scene_suffix(*.scene))]
    InsufficientPoints {
        scene: Option<usize>,
        needed: usize,
        got: usize,
    },

    #[error("no centroid set for scene {0}")]
    MissingCentroids(usize),

    #[error("index {index} out of range for {len} classes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

fn scene_suffix(scene: Option<usize>) -> String {
    match scene {
        Some(s) => format!(" in scene {s}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
