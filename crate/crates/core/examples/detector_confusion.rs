//! Confusion matrix of the threshold NLOS detector on the body-shadowed
//! court lap, for a few gate widths.
//!
//! cargo run --example detector_confusion

use buls::mitigation::DetectorKind;
use buls::scenario::{golden_nlos, run};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for gate in [0.1, 0.15, 0.3, 0.45] {
        let mut spec = golden_nlos();
        spec.mitigation.detector = DetectorKind::Threshold;
        spec.mitigation.threshold = Some(gate);
        let m = run(&spec)?.metrics;
        println!(
            "gate {gate:.2} m: accuracy {:.3}, complementary rmse {:.4} m",
            m.confusion.accuracy(),
            m.rmse_complementary.unwrap_or(f64::NAN)
        );
        println!("  {:>6} {:>6} {:>6} {:>6} {:>6}", "", "LOS", "NLOS", "MP", "none");
        for (name, row) in ["LOS", "NLOS", "MP"].iter().zip(m.confusion.counts) {
            println!("  {name:>6} {:>6} {:>6} {:>6} {:>6}", row[0], row[1], row[2], row[3]);
        }
    }
    Ok(())
}
