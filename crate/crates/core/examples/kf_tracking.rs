//! Constant-velocity Kalman filtering of noisy position fixes along a circle.
//!
//! cargo run --example kf_tracking

use buls::tracking::{KfConfig, Tracker};
use buls::types::{distance, Point3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = KfConfig { r_meas: Some(0.01), ..KfConfig::default() };
    let mut tracker = Tracker::new(cfg);
    let noise = Normal::new(0.0, 0.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut raw_sq, mut kf_sq, mut n) = (0.0, 0.0, 0usize);

    for k in 0..300 {
        let t = k as f64 * cfg.dt;
        let truth = Point3::xy(5.0 * (0.2 * t).cos(), 5.0 * (0.2 * t).sin());
        let z = Point3::xy(truth.x + noise.sample(&mut rng), truth.y + noise.sample(&mut rng));
        // Every tenth fix is lost; the filter coasts on its prediction.
        let state = tracker.advance((k % 10 != 9).then_some(&z))?.expect("initialized at first fix");
        let est = state.position(&cfg);
        if k >= 20 {
            raw_sq += distance(&z, &truth).powi(2);
            kf_sq += distance(&est, &truth).powi(2);
            n += 1;
        }
        if k % 50 == 0 {
            println!("t = {t:>5.1} s  truth {truth}  filtered {est}  speed {:.3} m/s", state.velocity(&cfg).norm());
        }
    }
    println!("rmse raw {:.4} m, filtered {:.4} m", (raw_sq / n as f64).sqrt(), (kf_sq / n as f64).sqrt());
    Ok(())
}
