//! Weighted Gauss-Newton position fix from noisy ranges, in 2D and 3D.
//!
//! cargo run --example solve_position

use buls::channel::{corrupt_range, ChannelModel};
use buls::positioning::{solve_wls, Dimension, MeasurementSet, SolverConfig};
use buls::types::{distance, Point3, PropagationCondition};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fix(
    anchors: &[Point3],
    tag: Point3,
    dim: Dimension,
    rng: &mut ChaCha8Rng,
) -> Result<(), Box<dyn std::error::Error>> {
    let channel = ChannelModel::default();
    let ranges: Vec<f64> =
        anchors.iter().map(|a| corrupt_range(distance(a, &tag), PropagationCondition::Los, &channel, rng)).collect();
    let ms = MeasurementSet::from_ranges(anchors, &ranges, channel.los_sigma);
    let res = solve_wls(&ms, &SolverConfig::with_dimension(dim))?;
    println!(
        "{dim:?}: true {tag} estimate {} error {:.4} m, {} iterations, condition {:.2}",
        res.position,
        distance(&res.position, &tag),
        res.iterations_used,
        res.condition_number
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let square = [Point3::xy(0.0, 0.0), Point3::xy(10.0, 0.0), Point3::xy(10.0, 10.0), Point3::xy(0.0, 10.0)];
    fix(&square, Point3::xy(3.0, 7.0), Dimension::Two, &mut rng)?;

    let room = [
        Point3::new(0.0, 0.0, 3.0),
        Point3::new(8.0, 0.0, 0.5),
        Point3::new(8.0, 6.0, 3.0),
        Point3::new(0.0, 6.0, 0.5),
        Point3::new(4.0, 3.0, 3.0),
    ];
    fix(&room, Point3::new(2.5, 4.0, 1.2), Dimension::Three, &mut rng)?;
    Ok(())
}
