//! TDMA frame sizing: how many tags fit, what the slot plan looks like, and
//! when start jitter makes neighbouring slots overlap.
//!
//! cargo run --example tdma_capacity

use buls::tdma::{build_plan, check_collisions, tag_capacity, JitterModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (active, frame) = (2e-3, 100e-3);
    for guard in [0.0, 0.25e-3, 0.5e-3, 1e-3] {
        println!(
            "active 2 ms, guard {:.2} ms, frame 100 ms -> {} tags",
            guard * 1e3,
            tag_capacity(active, guard, frame)?
        );
    }

    let guard = 0.5e-3;
    let plan = build_plan(&[3, 1, 2, 4], active, guard, 12e-3)?;
    for s in &plan.slots {
        println!("tag {} active {:.2}..{:.2} ms", s.tag_id, s.active_start * 1e3, s.active_end() * 1e3);
    }
    println!("idle fraction {:.3}", plan.idle_fraction());
    if let Err(e) = build_plan(&[1, 2, 3, 4, 5], active, guard, 10e-3) {
        println!("five tags in 10 ms: {e}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for jitter in [0.1e-3, 0.25e-3, 0.4e-3] {
        let r = check_collisions(&plan, JitterModel { max_jitter: jitter }, 10_000, &mut rng);
        println!(
            "jitter {:.2} ms: {} collisions in {} frames (possible: {})",
            jitter * 1e3,
            r.collisions,
            r.frames,
            r.collision_possible
        );
    }
    Ok(())
}
