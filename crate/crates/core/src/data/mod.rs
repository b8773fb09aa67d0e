//! Labeled image datasets: manifest ingestion, merging, augmentation and the
//! synthetic multi-scene generator.

mod augment;
mod manifest;
mod synthetic;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

pub use augment::{augment, AugmentMode, AugmentationConfig, ImageTensor};
pub use manifest::{load_dataset, merge_datasets, write_manifest, write_scene_map};
pub use synthetic::{generate_synthetic, render_view, SceneRegion, SynthConfig, SyntheticScene};

use crate::error::{Error, Result};
use crate::pose::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    /// Resolved image path.
    pub image: PathBuf,
    pub pose: Pose,
    /// Dense scene index in `[0, N)`.
    pub scene_id: usize,
    pub dataset_id: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneInfo {
    pub dataset_id: String,
    pub name: String,
}

/// Samples plus the scene-id mapping they index into.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub scenes: Vec<SceneInfo>,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn num_scenes(&self) -> usize {
        self.scenes.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples of one split, keeping the full scene table.
    pub fn split(&self, split: Split) -> Dataset {
        Dataset {
            scenes: self.scenes.clone(),
            samples: self.samples.iter().filter(|s| s.split == split).cloned().collect(),
        }
    }
}
