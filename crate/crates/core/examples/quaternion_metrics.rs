//! Pose error metrics: Euclidean position error, sign-invariant rotation
//! angle between quaternions, and per-scene medians.

use c2f_pose::pose::{median_errors, orientation_error_deg, position_error};
use c2f_pose::{Pose, Quaternion};

fn main() -> c2f_pose::Result<()> {
    let identity = Quaternion::IDENTITY;
    let quarter_turn = Quaternion::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2)?;
    println!(
        "identity vs 90 deg about z: {:.3} deg",
        orientation_error_deg(&identity, &quarter_turn)?
    );
    println!(
        "q vs -q:                    {:.3} deg",
        orientation_error_deg(&quarter_turn, &-quarter_turn)?
    );
    println!(
        "q vs 3q:                    {:.3} deg",
        orientation_error_deg(&quarter_turn, &quarter_turn.scale(3.0))?
    );
    println!(
        "(0,0,0) vs (3,4,0):         {:.3} m",
        position_error(&[0.0; 3], &[3.0, 4.0, 0.0])
    );

    // Stored orientations are unit and canonical (first nonzero component >= 0).
    let p = Pose::new([1.0, 2.0, 3.0], Quaternion::new(-2.0, 0.0, 0.0, 0.0))?;
    println!("Pose::new stores {:?}", p.orientation);

    let truth = Pose::new([0.0; 3], identity)?;
    let estimates = [0.1, 0.3, 0.2, 0.9].map(|d| {
        let q = Quaternion::from_axis_angle([1.0, 0.0, 0.0], d / 5.0).unwrap();
        Pose::new([d, 0.0, 0.0], q).unwrap()
    });
    let errors = estimates
        .iter()
        .map(|e| e.error_to(&truth))
        .collect::<c2f_pose::Result<Vec<_>>>()?;
    let median = median_errors(&errors)?;
    println!(
        "median of {} errors (lower median): {:.2} m, {:.2} deg",
        errors.len(),
        median.position_err,
        median.orientation_err
    );
    Ok(())
}
