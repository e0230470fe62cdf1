//! TDMA frame planning: one active slot plus guard time per tag, packed
//! contiguously from the start of each frame. Any remainder of the frame
//! stays idle.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack when comparing accumulated slot durations to a frame.
const FIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TdmaError {
    #[error("{tags} tags need a frame of at least {required} s, frame is {frame} s")]
    CapacityExceeded { tags: usize, required: f64, frame: f64 },
    #[error("invalid duration: {0}")]
    BadDuration(&'static str),
    #[error("tag {0} registered twice")]
    DuplicateTag(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub tag_id: u32,
    pub active_start: f64,
    pub active_duration: f64,
    pub guard_duration: f64,
}

impl Slot {
    pub fn active_end(&self) -> f64 {
        self.active_start + self.active_duration
    }

    pub fn end(&self) -> f64 {
        self.active_end() + self.guard_duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPlan {
    pub frame_duration: f64,
    pub slots: Vec<Slot>,
}

impl SlotPlan {
    pub fn slot_for(&self, tag_id: u32) -> Option<&Slot> {
        self.slots.iter().find(|s| s.tag_id == tag_id)
    }

    /// Fraction of the frame left idle.
    pub fn idle_fraction(&self) -> f64 {
        let used: f64 = self.slots.iter().map(|s| s.active_duration + s.guard_duration).sum();
        1.0 - used / self.frame_duration
    }
}

/// Uniform bound on how far any slot start may deviate from its plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterModel {
    pub max_jitter: f64,
}

fn check_durations(active: f64, guard: f64, frame: f64) -> Result<(), TdmaError> {
    if !(active > 0.0 && active.is_finite()) {
        return Err(TdmaError::BadDuration("active duration must be positive"));
    }
    if !(guard >= 0.0 && guard.is_finite()) {
        return Err(TdmaError::BadDuration("guard duration must be non-negative"));
    }
    if !(frame > 0.0 && frame.is_finite()) {
        return Err(TdmaError::BadDuration("frame duration must be positive"));
    }
    Ok(())
}

/// Assigns one slot per tag in ascending id order, starting at time 0.
pub fn build_plan(tag_ids: &[u32], active: f64, guard: f64, frame: f64) -> Result<SlotPlan, TdmaError> {
    check_durations(active, guard, frame)?;
    let mut ids = tag_ids.to_vec();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(TdmaError::DuplicateTag(w[0]));
    }
    let slot = active + guard;
    let required = ids.len() as f64 * slot;
    if required > frame * (1.0 + FIT_TOLERANCE) {
        return Err(TdmaError::CapacityExceeded { tags: ids.len(), required, frame });
    }
    let slots = ids
        .into_iter()
        .enumerate()
        .map(|(i, tag_id)| Slot {
            tag_id,
            active_start: i as f64 * slot,
            active_duration: active,
            guard_duration: guard,
        })
        .collect();
    Ok(SlotPlan { frame_duration: frame, slots })
}

/// Number of tags that fit in one frame.
pub fn tag_capacity(active: f64, guard: f64, frame: f64) -> Result<usize, TdmaError> {
    check_durations(active, guard, frame)?;
    let ratio = frame / (active + guard);
    let nearest = ratio.round();
    let n = if (ratio - nearest).abs() <= FIT_TOLERANCE * ratio.max(1.0) { nearest } else { ratio.floor() };
    Ok(n as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CollisionReport {
    pub frames: usize,
    /// Number of pairs of consecutive transmissions that overlapped.
    pub collisions: usize,
    /// Largest overlap observed, seconds (0 when none).
    pub worst_overlap: f64,
    /// Whether some jitter realization within the bound could collide.
    pub collision_possible: bool,
}

/// Perturbs every slot start by an independent uniform draw in
/// `[-max_jitter, +max_jitter]` for `n_frames` frames and counts overlaps
/// between consecutive active windows, including across frame boundaries.
pub fn check_collisions<R: Rng + ?Sized>(
    plan: &SlotPlan,
    jitter: JitterModel,
    n_frames: usize,
    rng: &mut R,
) -> CollisionReport {
    let j = jitter.max_jitter.max(0.0);
    let draw = |rng: &mut R| if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };

    let mut report = CollisionReport { frames: n_frames, ..Default::default() };
    // Tightest planned gap between one active window and the next start.
    let mut min_gap = f64::INFINITY;
    for (i, s) in plan.slots.iter().enumerate() {
        let next_start =
            plan.slots.get(i + 1).map_or(plan.frame_duration + plan.slots[0].active_start, |n| n.active_start);
        min_gap = min_gap.min(next_start - s.active_end());
    }
    report.collision_possible = !plan.slots.is_empty() && 2.0 * j > min_gap * (1.0 + FIT_TOLERANCE);

    // (start, end) of the previous transmission in absolute time.
    let mut prev_end: Option<f64> = None;
    for frame in 0..n_frames {
        let base = frame as f64 * plan.frame_duration;
        for s in &plan.slots {
            let start = base + s.active_start + draw(rng);
            let end = start + s.active_duration;
            if let Some(pe) = prev_end {
                let overlap = pe - start;
                if overlap > 0.0 {
                    report.collisions += 1;
                    report.worst_overlap = report.worst_overlap.max(overlap);
                }
            }
            prev_end = Some(end);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const MS: f64 = 1e-3;

    #[test]
    fn plan_examples() {
        let plan = build_plan(&[3, 1, 2], 2.0 * MS, 0.5 * MS, 10.0 * MS).unwrap();
        let starts: Vec<f64> = plan.slots.iter().map(|s| s.active_start).collect();
        assert_eq!(plan.slots.iter().map(|s| s.tag_id).collect::<Vec<_>>(), vec![1, 2, 3]);
        for (got, want) in starts.iter().zip([0.0, 2.5 * MS, 5.0 * MS]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }

        let single = build_plan(&[9], 2.0 * MS, 0.5 * MS, 10.0 * MS).unwrap();
        assert_eq!(single.slots[0].active_start, 0.0);
        assert_abs_diff_eq!(single.idle_fraction(), 0.75, epsilon = 1e-12);

        match build_plan(&[1, 2, 3, 4, 5], 2.0 * MS, 0.5 * MS, 10.0 * MS) {
            Err(TdmaError::CapacityExceeded { required, .. }) => {
                assert_abs_diff_eq!(required, 12.5 * MS, epsilon = 1e-15)
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
        assert!(matches!(build_plan(&[1, 1], MS, 0.0, 10.0 * MS), Err(TdmaError::DuplicateTag(1))));
    }

    #[test]
    fn exactly_full_frame_fits() {
        let plan = build_plan(&[1, 2, 3, 4], 2.0 * MS, 0.5 * MS, 10.0 * MS).unwrap();
        assert_eq!(plan.slots.len(), 4);
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(tag_capacity(2.0 * MS, 0.5 * MS, 100.0 * MS).unwrap(), 40);
        assert_eq!(tag_capacity(20.0 * MS, 0.5 * MS, 10.0 * MS).unwrap(), 0);
        assert_eq!(tag_capacity(0.3, 0.1, 1.2).unwrap(), 3);
        assert_eq!(tag_capacity(2.0 * MS, 0.0, 10.0 * MS).unwrap(), 5);
        assert!(tag_capacity(0.0, 0.1, 1.0).is_err());
        assert!(tag_capacity(1.0, -0.1, 1.0).is_err());
    }

    #[test]
    fn collision_examples() {
        let plan = build_plan(&[1, 2, 3, 4], 2.0 * MS, 0.5 * MS, 10.0 * MS).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let none = check_collisions(&plan, JitterModel { max_jitter: 0.0 }, 100, &mut rng);
        assert_eq!(none.collisions, 0);
        let within = check_collisions(&plan, JitterModel { max_jitter: 0.2 * MS }, 10_000, &mut rng);
        assert_eq!(within.collisions, 0);
        assert!(!within.collision_possible);

        let tight = build_plan(&[1, 2, 3, 4], 2.0 * MS, 0.1 * MS, 10.0 * MS).unwrap();
        let over = check_collisions(&tight, JitterModel { max_jitter: 0.2 * MS }, 10_000, &mut rng);
        assert!(over.collisions > 0);
        assert!(over.collision_possible);
        assert!(over.worst_overlap > 0.0 && over.worst_overlap <= 0.3 * MS + 1e-12);
    }

    proptest! {
        #[test]
        fn plan_slots_are_disjoint(
            n in 1usize..20,
            active in 1e-4..5e-3f64,
            guard in 0.0..1e-3f64,
        ) {
            let ids: Vec<u32> = (0..n as u32).rev().collect();
            let frame = n as f64 * (active + guard) * 1.5;
            let plan = build_plan(&ids, active, guard, frame).unwrap();
            for w in plan.slots.windows(2) {
                prop_assert!(w[0].end() <= w[1].active_start + 1e-15);
            }
            prop_assert!(plan.slots.last().unwrap().end() <= frame);
        }

        #[test]
        fn more_guard_never_adds_capacity(
            active in 1e-4..5e-3f64,
            guard in 0.0..1e-3f64,
            extra in 0.0..1e-3f64,
            frame in 1e-3..0.2f64,
        ) {
            prop_assert!(tag_capacity(active, guard + extra, frame).unwrap() <= tag_capacity(active, guard, frame).unwrap());
        }
    }
}
