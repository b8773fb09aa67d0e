use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::batch::PreparedSet;
use crate::clustering::CentroidSet;
use crate::data::{AugmentMode, AugmentationConfig, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{C2fModel, CentroidTable, ForwardOptions};
use crate::pose::{median_errors, Pose, PoseError};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub split: Split,
    pub batch_size: usize,
    pub augmentation: AugmentationConfig,
    /// Centroid-only predictions when false.
    pub residuals: bool,
}

impl EvalOptions {
    pub fn new(split: Split, input_size: u32) -> Self {
        Self {
            split,
            batch_size: 8,
            augmentation: AugmentationConfig::identity(input_size),
            residuals: true,
        }
    }
}

/// Inference result for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePrediction {
    pub scene: usize,
    pub predicted_scene: usize,
    pub position_centroid: usize,
    pub predicted_position_centroid: usize,
    pub orientation_centroid: usize,
    pub predicted_orientation_centroid: usize,
    pub pose: Pose,
    pub error: PoseError,
}

impl SamplePrediction {
    pub fn scene_correct(&self) -> bool {
        self.scene == self.predicted_scene
    }

    /// Centroid hits only count when the scene was also right.
    pub fn position_centroid_correct(&self) -> bool {
        self.scene_correct() && self.position_centroid == self.predicted_position_centroid
    }

    pub fn orientation_centroid_correct(&self) -> bool {
        self.scene_correct() && self.orientation_centroid == self.predicted_orientation_centroid
    }
}

/// Runs inference over one split.
pub fn predict(
    model: &C2fModel,
    dataset: &Dataset,
    centroids: &BTreeMap<usize, CentroidSet>,
    opts: &EvalOptions,
) -> Result<Vec<SamplePrediction>> {
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let table = CentroidTable::new(centroids)?;
    let split = dataset.split(opts.split);
    let set = PreparedSet::load(&split.samples, centroids)?;
    let indices: Vec<usize> = (0..set.len()).collect();
    let forward = ForwardOptions {
        residuals: opts.residuals,
        ..ForwardOptions::infer()
    };
    let mut out = Vec::with_capacity(set.len());
    for chunk in indices.chunks(opts.batch_size) {
        let images = set.images(model, chunk, &opts.augmentation, |_| AugmentMode::Test)?;
        let result = model.forward(&images, &table, &forward)?;
        let poses = result.poses()?;
        for (b, &i) in chunk.iter().enumerate() {
            let gt = &set.samples[i];
            out.push(SamplePrediction {
                scene: gt.scene_id,
                predicted_scene: result.selected_scenes[b],
                position_centroid: set.labels[i].position,
                predicted_position_centroid: result.selected_position_centroids[b],
                orientation_centroid: set.labels[i].orientation,
                predicted_orientation_centroid: result.selected_orientation_centroids[b],
                pose: poses[b],
                error: poses[b].error_to(&gt.pose)?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneReport {
    pub scene: usize,
    pub dataset_id: String,
    pub name: String,
    pub samples: usize,
    pub median: PoseError,
    pub scene_accuracy: f64,
    pub position_centroid_accuracy: f64,
    pub orientation_centroid_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: Split,
    pub scenes: Vec<SceneReport>,
    /// Scenes without samples in the split.
    pub excluded: Vec<usize>,
    /// Mean of the per-scene medians.
    pub average: PoseError,
    /// Accuracies over all evaluated samples.
    pub scene_accuracy: f64,
    pub position_centroid_accuracy: f64,
    pub orientation_centroid_accuracy: f64,
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Aggregates per-sample predictions into per-scene medians and accuracies.
pub fn summarize(dataset: &Dataset, split: Split, predictions: &[SamplePrediction]) -> Result<EvalReport> {
    let mut scenes = Vec::new();
    let mut excluded = Vec::new();
    for (id, info) in dataset.scenes.iter().enumerate() {
        let rows: Vec<&SamplePrediction> = predictions.iter().filter(|p| p.scene == id).collect();
        if rows.is_empty() {
            log::warn!("scene {id} ({}) has no {split} samples; excluded", info.name);
            excluded.push(id);
            continue;
        }
        let errors: Vec<PoseError> = rows.iter().map(|p| p.error).collect();
        let n = rows.len();
        scenes.push(SceneReport {
            scene: id,
            dataset_id: info.dataset_id.clone(),
            name: info.name.clone(),
            samples: n,
            median: median_errors(&errors)?,
            scene_accuracy: fraction(rows.iter().filter(|p| p.scene_correct()).count(), n),
            position_centroid_accuracy: fraction(rows.iter().filter(|p| p.position_centroid_correct()).count(), n),
            orientation_centroid_accuracy: fraction(
                rows.iter().filter(|p| p.orientation_centroid_correct()).count(),
                n,
            ),
        });
    }
    if scenes.is_empty() {
        return Err(Error::EmptyInput("no scene has evaluation samples"));
    }
    let k = scenes.len() as f64;
    let total = predictions.len();
    Ok(EvalReport {
        split,
        average: PoseError {
            position_err: scenes.iter().map(|s| s.median.position_err).sum::<f64>() / k,
            orientation_err: scenes.iter().map(|s| s.median.orientation_err).sum::<f64>() / k,
        },
        scene_accuracy: fraction(predictions.iter().filter(|p| p.scene_correct()).count(), total),
        position_centroid_accuracy: fraction(
            predictions.iter().filter(|p| p.position_centroid_correct()).count(),
            total,
        ),
        orientation_centroid_accuracy: fraction(
            predictions.iter().filter(|p| p.orientation_centroid_correct()).count(),
            total,
        ),
        scenes,
        excluded,
    })
}

pub fn evaluate(
    model: &C2fModel,
    dataset: &Dataset,
    centroids: &BTreeMap<usize, CentroidSet>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let predictions = predict(model, dataset, centroids, opts)?;
    summarize(dataset, opts.split, &predictions)
}

const REPORT_HEADER: &str = "# c2f evaluation report v1";
const SCENE_COLUMNS: &str =
    "# scene dataset name samples median_position_m median_orientation_deg scene_acc position_centroid_acc orientation_centroid_acc";

impl EvalReport {
    /// Fixed-schema text: per-scene rows, exclusions, then the averages.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{REPORT_HEADER}");
        let _ = writeln!(s, "split {}", self.split);
        let _ = writeln!(s, "{SCENE_COLUMNS}");
        for r in &self.scenes {
            let _ = writeln!(
                s,
                "scene {} {} {} {} {} {} {} {} {}",
                r.scene,
                r.dataset_id,
                r.name,
                r.samples,
                r.median.position_err,
                r.median.orientation_err,
                r.scene_accuracy,
                r.position_centroid_accuracy,
                r.orientation_centroid_accuracy
            );
        }
        for id in &self.excluded {
            let _ = writeln!(s, "excluded {id}");
        }
        let _ = writeln!(
            s,
            "average {} {}",
            self.average.position_err, self.average.orientation_err
        );
        let _ = writeln!(
            s,
            "accuracy {} {} {}",
            self.scene_accuracy, self.position_centroid_accuracy, self.orientation_centroid_accuracy
        );
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            path: "<report>".into(),
            line,
            msg: msg.to_string(),
        };
        let mut split = None;
        let mut scenes = Vec::new();
        let mut excluded = Vec::new();
        let mut average = None;
        let mut accuracy = None;
        for (n, line) in text.lines().enumerate() {
            let n = n + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(n, "bad number"))
            };
            let int = |i: usize| -> Result<usize> {
                f.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(n, "bad integer"))
            };
            match f[0] {
                "split" => split = Some(f.get(1).ok_or_else(|| bad(n, "missing split"))?.parse()?),
                "scene" if f.len() == 10 => scenes.push(SceneReport {
                    scene: int(1)?,
                    dataset_id: f[2].to_string(),
                    name: f[3].to_string(),
                    samples: int(4)?,
                    median: PoseError {
                        position_err: num(5)?,
                        orientation_err: num(6)?,
                    },
                    scene_accuracy: num(7)?,
                    position_centroid_accuracy: num(8)?,
                    orientation_centroid_accuracy: num(9)?,
                }),
                "excluded" => excluded.push(int(1)?),
                "average" => {
                    average = Some(PoseError {
                        position_err: num(1)?,
                        orientation_err: num(2)?,
                    })
                }
                "accuracy" => accuracy = Some((num(1)?, num(2)?, num(3)?)),
                _ => return Err(bad(n, "unrecognized line")),
            }
        }
        let (a_s, a_x, a_q) = accuracy.ok_or_else(|| bad(0, "missing accuracy line"))?;
        Ok(Self {
            split: split.ok_or_else(|| bad(0, "missing split line"))?,
            scenes,
            excluded,
            average: average.ok_or_else(|| bad(0, "missing average line"))?,
            scene_accuracy: a_s,
            position_centroid_accuracy: a_x,
            orientation_centroid_accuracy: a_q,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SceneInfo;
    use crate::pose::Quaternion;

    fn pred(scene: usize, predicted: usize, err: f64) -> SamplePrediction {
        SamplePrediction {
            scene,
            predicted_scene: predicted,
            position_centroid: 0,
            predicted_position_centroid: 0,
            orientation_centroid: 1,
            predicted_orientation_centroid: 1,
            pose: Pose::new([0.0; 3], Quaternion::IDENTITY).unwrap(),
            error: PoseError {
                position_err: err,
                orientation_err: 2.0 * err,
            },
        }
    }

    fn dataset(n: usize) -> Dataset {
        Dataset {
            scenes: (0..n)
                .map(|i| SceneInfo {
                    dataset_id: "synth".into(),
                    name: format!("s{i}"),
                })
                .collect(),
            samples: vec![],
        }
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        let preds: Vec<_> = (0..4).flat_map(|s| (0..5).map(move |_| pred(s, 0, 1.0))).collect();
        let r = summarize(&dataset(4), Split::Test, &preds).unwrap();
        assert_eq!(r.scene_accuracy, 0.25);
        assert_eq!(r.scenes[0].scene_accuracy, 1.0);
        assert_eq!(r.scenes[1].position_centroid_accuracy, 0.0);
    }

    #[test]
    fn perfect_predictions() {
        let preds: Vec<_> = (0..3).map(|s| pred(s, s, 0.0)).collect();
        let r = summarize(&dataset(3), Split::Train, &preds).unwrap();
        assert_eq!(
            r.average,
            PoseError {
                position_err: 0.0,
                orientation_err: 0.0
            }
        );
        assert_eq!(
            (
                r.scene_accuracy,
                r.position_centroid_accuracy,
                r.orientation_centroid_accuracy
            ),
            (1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn average_is_mean_of_scene_medians() {
        let preds = vec![pred(0, 0, 1.0), pred(0, 0, 3.0), pred(0, 0, 5.0), pred(1, 1, 10.0)];
        let r = summarize(&dataset(3), Split::Test, &preds).unwrap();
        assert_eq!(r.excluded, vec![2]);
        let mean = r.scenes.iter().map(|s| s.median.position_err).sum::<f64>() / r.scenes.len() as f64;
        assert_eq!(r.average.position_err, mean);
        assert_eq!(mean, 6.5);
    }

    #[test]
    fn report_text_round_trip() {
        let preds = vec![pred(0, 0, 0.1234567891234), pred(1, 0, 2.0)];
        let r = summarize(&dataset(3), Split::Test, &preds).unwrap();
        let back = EvalReport::from_text(&r.to_text()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn empty_split_is_an_error() {
        assert!(summarize(&dataset(2), Split::Test, &[]).is_err());
    }
}
