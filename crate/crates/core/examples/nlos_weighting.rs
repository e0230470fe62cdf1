//! Class-based weighting of NLOS and multipath ranges, and its effect on a
//! position fix with one biased range.
//!
//! cargo run --example nlos_weighting

use buls::mitigation::{build_weighting, mitigated_solve, IdentificationResult, MitigationConfig};
use buls::positioning::{solve_wls, MeasurementSet, SolverConfig};
use buls::types::{distance, Point3, PropagationCondition::*};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = MitigationConfig::default();
    for labels in [vec![Los, Los, Nlos, Los], vec![Los, Mp, Nlos, Los, Los], vec![Nlos, Nlos, Nlos]] {
        let w = build_weighting(&labels.iter().copied().map(Some).collect::<Vec<_>>(), &cfg);
        let shown: Vec<String> = w.diag.iter().map(|x| format!("{x:.5}")).collect();
        println!("{:?} -> [{}] trace {:.3}", labels, shown.join(", "), w.trace());
    }

    let anchors = [
        Point3::xy(0.0, 0.0),
        Point3::xy(20.0, 0.0),
        Point3::xy(20.0, 12.0),
        Point3::xy(0.0, 12.0),
        Point3::xy(10.0, -2.0),
        Point3::xy(10.0, 14.0),
    ];
    let tag = Point3::xy(6.0, 4.0);
    let mut ranges: Vec<f64> = anchors.iter().map(|a| distance(a, &tag)).collect();
    ranges[2] += 0.6;
    let ms = MeasurementSet::from_ranges(&anchors, &ranges, 0.05);
    let solver = SolverConfig::default();

    let plain = solve_wls(&ms, &solver)?;
    let labels = IdentificationResult::from_labels(vec![Los, Los, Nlos, Los, Los, Los], "oracle");
    let (weighted, _) = mitigated_solve(&ms, &labels, &cfg, &solver)?;
    println!(
        "one range +0.6 m: unweighted error {:.4} m, weighted error {:.4} m",
        distance(&plain.position, &tag),
        distance(&weighted.position, &tag)
    );
    Ok(())
}
