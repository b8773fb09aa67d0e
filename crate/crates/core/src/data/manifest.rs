//! Whitespace-separated manifest, one sample per line:
//!
//! ```text
//! dataset_id scene_name split image_path x y z qw qx qy qz
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Relative image paths
//! resolve against the manifest's directory.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Dataset, LabeledSample, SceneInfo, Split};
use crate::error::{Error, Result};
use crate::pose::{Pose, Quaternion};

const FIELDS: usize = 11;

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));

    let mut scene_ids: HashMap<(String, String), usize> = HashMap::new();
    let mut dataset = Dataset::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != FIELDS {
            return Err(parse_err(format!("expected {FIELDS} fields, found {}", fields.len())));
        }
        let split: Split = fields[2].parse().map_err(|e: Error| parse_err(e.to_string()))?;
        let mut nums = [0.0f64; 7];
        for (slot, field) in nums.iter_mut().zip(&fields[4..]) {
            *slot = field
                .parse()
                .map_err(|_| parse_err(format!("`{field}` is not a number")))?;
        }
        let q = Quaternion::new(nums[3], nums[4], nums[5], nums[6]);
        let pose = Pose::new([nums[0], nums[1], nums[2]], q)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), idx + 1)))?;

        let key = (fields[0].to_string(), fields[1].to_string());
        let next = scene_ids.len();
        let scene_id = *scene_ids.entry(key.clone()).or_insert_with(|| {
            dataset.scenes.push(SceneInfo {
                dataset_id: key.0.clone(),
                name: key.1.clone(),
            });
            next
        });

        let image = PathBuf::from(fields[3]);
        let image = if image.is_absolute() { image } else { base.join(image) };
        dataset.samples.push(LabeledSample {
            image,
            pose,
            scene_id,
            dataset_id: key.0,
            split,
        });
    }
    Ok(dataset)
}

/// Writes `dataset` as a manifest; image paths under the manifest's directory
/// are written relative to it.
pub fn write_manifest(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut out = String::new();
    out.push_str("# dataset_id scene split image x y z qw qx qy qz\n");
    for s in &dataset.samples {
        let scene = dataset
            .scenes
            .get(s.scene_id)
            .ok_or_else(|| Error::Data(format!("sample references unknown scene {}", s.scene_id)))?;
        let image = s.image.strip_prefix(base).unwrap_or(&s.image);
        let [x, y, z] = s.pose.position;
        let q = s.pose.orientation;
        out.push_str(&format!(
            "{} {} {} {} {x} {y} {z} {} {} {} {}\n",
            scene.dataset_id,
            scene.name,
            s.split,
            image.display(),
            q.w,
            q.x,
            q.y,
            q.z
        ));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Sidecar mapping dense scene ids to `(dataset_id, scene_name)`.
pub fn write_scene_map(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("# scene_id dataset_id scene_name\n");
    for (id, s) in dataset.scenes.iter().enumerate() {
        out.push_str(&format!("{id} {} {}\n", s.dataset_id, s.name));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Concatenates datasets, offsetting scene ids so they stay disjoint.
pub fn merge_datasets(datasets: impl IntoIterator<Item = Dataset>) -> Dataset {
    let mut merged = Dataset::default();
    for d in datasets {
        let offset = merged.scenes.len();
        merged.scenes.extend(d.scenes);
        merged.samples.extend(d.samples.into_iter().map(|mut s| {
            s.scene_id += offset;
            s
        }));
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("manifest.txt");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn empty_manifest_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let d = load_dataset(write(dir.path(), "# nothing\n\n")).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.num_scenes(), 0);
    }

    #[test]
    fn quaternion_is_normalized_on_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let d = load_dataset(write(dir.path(), "ds a train img.png 1 2 3 2 0 0 0\n")).unwrap();
        assert_eq!(d.samples[0].pose.orientation, Quaternion::IDENTITY);
        assert_eq!(d.samples[0].image, dir.path().join("img.png"));
    }

    #[test]
    fn duplicate_scene_names_share_an_id() {
        let dir = tempfile::tempdir().unwrap();
        let body = "ds a train 0.png 0 0 0 1 0 0 0\n\
                    ds b train 1.png 0 0 0 1 0 0 0\n\
                    ds a test 2.png 0 0 0 1 0 0 0\n\
                    other a train 3.png 0 0 0 1 0 0 0\n";
        let d = load_dataset(write(dir.path(), body)).unwrap();
        let ids: Vec<usize> = d.samples.iter().map(|s| s.scene_id).collect();
        assert_eq!(ids, vec![0, 1, 0, 2]);
        assert_eq!(d.num_scenes(), 3);
        assert_eq!(d.samples[2].split, Split::Test);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(write(dir.path(), "# header\nds a train x.png 1 2 3\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = load_dataset(write(dir.path(), "ds a train x.png 1 2 z 1 0 0 0\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = load_dataset(write(dir.path(), "ds a val x.png 1 2 3 1 0 0 0\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = load_dataset(write(dir.path(), "ds a train x.png 1 2 3 0 0 0 0\n")).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }

    #[test]
    fn merge_offsets_scene_ids() {
        let dir = tempfile::tempdir().unwrap();
        let a = load_dataset(write(
            dir.path(),
            "s7 chess train a.png 0 0 0 1 0 0 0\ns7 fire train b.png 0 0 0 1 0 0 0\n",
        ))
        .unwrap();
        let b = load_dataset(write(dir.path(), "cam kings train c.png 0 0 0 1 0 0 0\n")).unwrap();
        let merged = merge_datasets([a.clone(), b]);
        assert_eq!(merged.num_scenes(), 3);
        assert_eq!(merged.samples[2].scene_id, 2);
        assert_eq!(merge_datasets([a.clone()]), a);
    }
}
