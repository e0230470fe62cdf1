//! Range error of single-sided and alternative double-sided two-way ranging
//! when both clocks drift, for growing reply delays.
//!
//! cargo run --example twr_drift

use buls::clock::{LocalClock, UWB_TICK_PERIOD};
use buls::ranging::{altds_twr, run_exchange, ss_twr, ReplyDelays};
use buls::types::{Point3, SPEED_OF_LIGHT};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tag = LocalClock::new(0.0, 20.0, UWB_TICK_PERIOD)?;
    let anchor = LocalClock::new(3e-4, -20.0, UWB_TICK_PERIOD)?;
    let d = Point3::xy(12.0, 5.0).norm();
    let tof = d / SPEED_OF_LIGHT;
    println!("true distance {d:.4} m, drifts +20 / -20 ppm");
    println!("{:>12} {:>14} {:>14}", "reply (us)", "SS error (m)", "AltDS error (m)");
    for reply_us in [100.0, 300.0, 1000.0, 3000.0] {
        let delays = ReplyDelays { a: reply_us * 1e-6, b: reply_us * 1e-6 };
        let ex = run_exchange(&tag, &anchor, tof, delays, 0.01, true)?;
        let ss = ss_twr(&ex)?.tof * SPEED_OF_LIGHT - d;
        let ds = altds_twr(&ex)?.tof * SPEED_OF_LIGHT - d;
        println!("{reply_us:>12.0} {ss:>14.4} {ds:>14.6}");
    }
    Ok(())
}
