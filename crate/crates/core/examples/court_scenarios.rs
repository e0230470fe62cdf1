//! Runs the LOS and body-shadowed court laps and compares the two pipelines,
//! with oracle and threshold identification.

use buls::mitigation::DetectorKind;
use buls::scenario::{golden_los, golden_nlos, run, ScenarioSpec};

fn report(label: &str, spec: &ScenarioSpec) -> Result<(), Box<dyn std::error::Error>> {
    let out = run(spec)?;
    let m = &out.metrics;
    let (min, comp) = (m.minimum.as_ref().unwrap(), m.complementary.as_ref().unwrap());
    let ratio = m.pipeline_comparison().unwrap()?.rmse_ratio;
    println!(
        "{label:<22} minimum rmse {:.4} p95 {:.4} | complementary rmse {:.4} p95 {:.4} | ratio {:.3} | detector accuracy {:.3}",
        min.rmse,
        min.p95,
        comp.rmse,
        comp.p95,
        ratio,
        m.confusion.accuracy()
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    report("LOS", &golden_los())?;
    report("NLOS (oracle)", &golden_nlos())?;
    let mut threshold = golden_nlos();
    threshold.mitigation.detector = DetectorKind::Threshold;
    report("NLOS (threshold)", &threshold)?;
    Ok(())
}
