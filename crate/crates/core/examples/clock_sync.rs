//! A tag estimates its offset from the master anchor with one timing
//! exchange, corrects its clock, and watches the residual error grow again
//! with drift until the next resync.
//!
//! cargo run --example clock_sync

use buls::clock::{sync_exchange, LocalClock, UWB_TICK_PERIOD};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let master = LocalClock::new(0.0, 0.0, UWB_TICK_PERIOD)?;
    let tag = LocalClock::new(7.5e-4, 12.0, UWB_TICK_PERIOD)?;
    let tof = 20.0 / 299_792_458.0;

    let est = sync_exchange(&tag, &master, tof, 200e-6, 1.0)?;
    println!("estimated master - tag offset: {:.3} us", est.delta_e * 1e6);
    let synced = tag.apply_correction(est.negated());

    for t in [1.0, 1.1, 1.5, 2.0, 5.0] {
        let before = tag.local_seconds(t) - master.local_seconds(t);
        let after = synced.local_seconds(t) - master.local_seconds(t);
        println!("t = {t:>4.1} s  error before {:>10.3} us  after {:>8.3} ns", before * 1e6, after * 1e9);
    }
    Ok(())
}
