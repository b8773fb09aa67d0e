//! Per-scene pose clustering: k-means on positions and canonical
//! quaternions, nearest-centroid labels, and the centroid file round trip.

use c2f_pose::clustering::{assign_labels, build_centroid_sets, kmeans, read_centroids, write_centroids};
use c2f_pose::data::{LabeledSample, Split};
use c2f_pose::{Pose, Quaternion};

fn main() -> c2f_pose::Result<()> {
    let km = kmeans(&[0.0, 1.0, 10.0, 11.0], 1, 2, 7)?;
    println!(
        "1-D k-means on {{0, 1, 10, 11}}: centroids {:?}, cost {}, {} iterations",
        km.centroids, km.cost, km.iterations
    );

    // Two scenes, each with two clumps of positions and two headings.
    let mut samples = Vec::new();
    for scene in 0..2 {
        for i in 0..20 {
            let clump = (i % 2) as f64;
            let x = [10.0 * scene as f64 + 3.0 * clump + 0.01 * i as f64, 0.5, 1.0];
            let yaw = if i % 4 < 2 { 0.1 } else { 1.4 } + 0.001 * i as f64;
            let q = Quaternion::from_axis_angle([0.0, 0.0, 1.0], yaw)?;
            samples.push(LabeledSample {
                image: format!("scene{scene}_{i}.png").into(),
                pose: Pose::new(x, q)?,
                scene_id: scene,
                dataset_id: "demo".into(),
                split: Split::Train,
            });
        }
    }
    let sets = build_centroid_sets(&samples, 2, 2, 0)?;
    for set in sets.values() {
        println!("scene {}: positions {:?}", set.scene_id, set.position_centroids);
        for q in &set.orientation_centroids {
            println!("          orientation {:?}", q.to_array());
        }
    }
    let labels = assign_labels(&samples, &sets)?;
    println!("first labels: {:?}", &labels[..4]);

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("centroids.txt");
    write_centroids(&sets, &path)?;
    let back = read_centroids(&path)?;
    println!("file round trip is exact: {}", back == sets);
    print!("{}", std::fs::read_to_string(&path)?);
    Ok(())
}
