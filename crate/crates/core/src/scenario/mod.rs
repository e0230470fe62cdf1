//! Deterministic event loop that drives tags along trajectories and runs
//! the minimum and complementary pipelines side by side.
//!
//! Per epoch (one TDMA frame) and per tag, in slot order:
//! 1. the tag resynchronizes its clock to the master anchor,
//! 2. it ranges to every anchor through the channel,
//! 3. the minimum pipeline solves on the raw ranges,
//! 4. the complementary pipeline identifies non-direct paths, solves with
//!    mitigation weights and filters the result.
//!
//! Both the tag side and the anchor side compute a position from their own
//! copy of the exchange timestamps; the two logs are kept separately.

pub mod metrics;
pub mod trajectory;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{true_tof, ChannelModel, ConditionSchedule, ShadowingRule};
use crate::clock::{sync_exchange, LocalClock, UWB_TICK_PERIOD};
use crate::mitigation::{
    identify_oracle, identify_threshold, mitigated_solve, ConfusionMatrix, DetectorKind, MitigationConfig, Prior,
};
use crate::positioning::{
    feasibility_check, solve_wls, Dimension, Feasibility, MeasurementSet, RangeEntry, SolveResult, SolverConfig,
};
use crate::ranging::{
    estimate_tof, measure_range, RangeMeasurement, RangeRequest, ReplyDelays, TwrExchange, TwrMethod,
};
use crate::tdma::{build_plan, check_collisions, CollisionReport, JitterModel, SlotPlan};
use crate::tracking::{KfConfig, KfState, Tracker};
use crate::types::{Anchor, Point3, PropagationCondition, SPEED_OF_LIGHT};

pub use metrics::{compare_pipelines, percentile, PipelineComparison, PipelineMetrics};
pub use trajectory::{headings, TrajectoryGenerator};

/// Config schema understood by this version.
pub const SCHEMA_VERSION: u32 = 1;

/// Lower bound on the per-range sigma handed to the solver.
const MIN_SIGMA: f64 = 1e-3;
/// Lower bound on the filter's measurement variance.
const MIN_R_MEAS: f64 = 1e-12;
/// Slack reserved in each active slot beyond the nominal exchange time.
const SLOT_MARGIN: f64 = 10e-6;

const STREAM_CLOCKS: u64 = 1;
const STREAM_CHANNEL: u64 = 2;
const STREAM_JITTER: u64 = 3;
const STREAM_TDMA_CHECK: u64 = 4;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("infeasible geometry at epoch {epoch}, tag {tag}: {reason}")]
    Infeasible { epoch: usize, tag: u32, reason: String },
    #[error("simulation failed at epoch {epoch}, tag {tag}: {reason}")]
    Simulation { epoch: usize, tag: u32, reason: String },
    #[error("cannot compare error traces of length {a} and {b}")]
    Mismatch { a: usize, b: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Minimum,
    Complementary,
    #[default]
    Both,
}

impl Pipeline {
    pub fn runs_minimum(self) -> bool {
        matches!(self, Self::Minimum | Self::Both)
    }

    pub fn runs_complementary(self) -> bool {
        matches!(self, Self::Complementary | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagSpec {
    pub id: u32,
    pub trajectory: TrajectoryGenerator,
}

/// Slot layout. The frame length is the epoch period `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdmaParams {
    pub active_duration: f64,
    pub guard_duration: f64,
    /// Uniform bound on the random start offset of each slot, seconds.
    pub max_jitter: f64,
}

impl Default for TdmaParams {
    fn default() -> Self {
        Self { active_duration: 5e-3, guard_duration: 0.5e-3, max_jitter: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceRole {
    Anchor,
    Tag,
}

/// Fixed clock parameters for one device instead of random draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockOverride {
    pub role: DeviceRole,
    pub id: u32,
    pub offset: f64,
    pub drift_ppm: f64,
}

/// Device clocks draw drift uniformly in `[-max_drift_ppm, max_drift_ppm]`
/// and offset uniformly in `[0, max_offset]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockParams {
    pub tick_period: f64,
    pub max_drift_ppm: f64,
    pub max_offset: f64,
    /// Frames between resynchronizations; 0 keeps only the initial join.
    pub resync_every_frames: usize,
    /// Anchor whose clock defines network time; `None` picks the first anchor.
    pub master_anchor: Option<u32>,
    pub overrides: Vec<ClockOverride>,
}

impl Default for ClockParams {
    fn default() -> Self {
        Self {
            tick_period: UWB_TICK_PERIOD,
            max_drift_ppm: 20.0,
            max_offset: 1e-3,
            resync_every_frames: 1,
            master_anchor: None,
            overrides: Vec::new(),
        }
    }
}

impl ClockParams {
    /// Drift-free, offset-free clocks with the given resolution.
    pub fn ideal(tick_period: f64) -> Self {
        Self { tick_period, max_drift_ppm: 0.0, max_offset: 0.0, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RangingParams {
    pub method: TwrMethod,
    pub reply_delays: ReplyDelays,
}

impl Default for RangingParams {
    fn default() -> Self {
        Self { method: TwrMethod::AltDoubleSided, reply_delays: ReplyDelays::default() }
    }
}

fn default_dt() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub epochs: usize,
    /// Epoch period and TDMA frame length, seconds.
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub anchors: Vec<Anchor>,
    pub tags: Vec<TagSpec>,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub schedule: ConditionSchedule,
    #[serde(default)]
    pub tdma: TdmaParams,
    #[serde(default)]
    pub clocks: ClockParams,
    #[serde(default)]
    pub ranging: RangingParams,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub mitigation: MitigationConfig,
    #[serde(default)]
    pub kf: KfConfig,
    #[serde(default)]
    pub pipeline: Pipeline,
}

/// Anchors 1 m outside the corners of a 28 m x 15 m court.
pub fn court_anchors() -> Vec<Anchor> {
    [(-1.0, -1.0), (29.0, -1.0), (29.0, 16.0), (-1.0, 16.0)]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Anchor::new(i as u32, Point3::xy(x, y)))
        .collect()
}

/// One lap of the court perimeter at 2 m/s, all ranges LOS.
pub fn golden_los() -> ScenarioSpec {
    ScenarioSpec {
        schema_version: SCHEMA_VERSION,
        name: "golden_los".into(),
        seed: 20240,
        epochs: 430,
        dt: 0.1,
        anchors: court_anchors(),
        tags: vec![TagSpec { id: 1, trajectory: TrajectoryGenerator::court(2.0) }],
        channel: ChannelModel::default(),
        schedule: ConditionSchedule::all_los(),
        tdma: TdmaParams::default(),
        clocks: ClockParams::default(),
        ranging: RangingParams::default(),
        solver: SolverConfig::default(),
        mitigation: MitigationConfig::default(),
        kf: KfConfig::default(),
        pipeline: Pipeline::Both,
    }
}

/// Same lap with the anchors behind the runner shadowed by the body.
pub fn golden_nlos() -> ScenarioSpec {
    ScenarioSpec {
        name: "golden_nlos".into(),
        schedule: ConditionSchedule { shadowing: Some(ShadowingRule::default()), ..ConditionSchedule::all_los() },
        ..golden_los()
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        let dim = self.solver.dimension;
        if self.anchors.len() < dim.min_ranges() {
            return bad(format!(
                "{dim} positioning needs at least {} anchors, got {}",
                dim.min_ranges(),
                self.anchors.len()
            ));
        }
        if let Some(a) = self.anchors.iter().find(|a| !a.position.is_finite()) {
            return bad(format!("anchor {} has a non-finite position", a.id));
        }
        if let Some(id) = first_duplicate(self.anchors.iter().map(|a| a.id)) {
            return bad(format!("duplicate anchor id {id}"));
        }
        if self.tags.is_empty() {
            return bad("at least one tag is required".into());
        }
        if let Some(id) = first_duplicate(self.tags.iter().map(|t| t.id)) {
            return bad(format!("duplicate tag id {id}"));
        }
        if let Some(m) = self.clocks.master_anchor {
            if !self.anchors.iter().any(|a| a.id == m) {
                return bad(format!("clocks.master_anchor {m} is not a configured anchor"));
            }
        }
        self.channel.validate().map_err(ScenarioError::Config)?;
        self.solver.validate().map_err(ScenarioError::Config)?;
        self.mitigation.validate().map_err(ScenarioError::Config)?;
        self.kf.validate().map_err(|e| ScenarioError::Config(e.to_string()))?;
        if self.kf.dt != self.dt {
            return bad(format!("kf.dt ({}) must equal dt ({})", self.kf.dt, self.dt));
        }
        if self.kf.dimension != dim {
            return bad(format!("kf.dimension ({}) must equal solver.dimension ({dim})", self.kf.dimension));
        }
        let c = &self.clocks;
        if !(c.tick_period > 0.0 && c.tick_period.is_finite()) {
            return bad("clocks.tick_period must be > 0".into());
        }
        if !(c.max_drift_ppm >= 0.0 && c.max_drift_ppm <= crate::clock::MAX_DRIFT_PPM) {
            return bad(format!("clocks.max_drift_ppm must lie in [0, {}]", crate::clock::MAX_DRIFT_PPM));
        }
        if !(c.max_offset >= 0.0 && c.max_offset.is_finite()) {
            return bad("clocks.max_offset must be >= 0".into());
        }
        for o in &c.overrides {
            LocalClock::new(o.offset, o.drift_ppm, c.tick_period).map_err(|e| ScenarioError::Config(e.to_string()))?;
            if o.offset < 0.0 {
                return bad(format!("clock override for {:?} {} has a negative offset", o.role, o.id));
            }
        }
        let d = self.ranging.reply_delays;
        if !(d.a > 0.0 && d.b > 0.0) {
            return bad("ranging.reply_delays must be > 0".into());
        }
        let t = &self.tdma;
        if !(t.max_jitter >= 0.0 && t.max_jitter.is_finite()) {
            return bad("tdma.max_jitter must be >= 0".into());
        }
        let ids: Vec<u32> = self.tags.iter().map(|t| t.id).collect();
        build_plan(&ids, t.active_duration, t.guard_duration, self.dt)
            .map_err(|e| ScenarioError::Config(e.to_string()))?;
        let needed = self.slot_time_needed();
        if needed > t.active_duration {
            return bad(format!(
                "{} exchanges need {needed:.6} s but tdma.active_duration is {} s",
                self.anchors.len(),
                t.active_duration
            ));
        }
        Ok(())
    }

    /// Active time one tag needs per frame: sync plus one exchange per anchor.
    pub fn slot_time_needed(&self) -> f64 {
        let d = self.ranging.reply_delays;
        let per_anchor = match self.ranging.method {
            TwrMethod::SingleSided => d.b,
            TwrMethod::AltDoubleSided => d.a + d.b,
        };
        let sync = if self.clocks.resync_every_frames > 0 { d.b } else { 0.0 };
        sync + self.anchors.len() as f64 * per_anchor + SLOT_MARGIN
    }

    fn kf_config(&self) -> KfConfig {
        let r = self.kf.r_meas.unwrap_or((2.0 * self.channel.los_sigma).powi(2)).max(MIN_R_MEAS);
        KfConfig { r_meas: Some(r), ..self.kf }
    }

    fn range_sigma(&self) -> f64 {
        self.channel.los_sigma.max(MIN_SIGMA)
    }

    fn threshold(&self) -> f64 {
        self.mitigation.threshold.unwrap_or(3.0 * self.range_sigma())
    }
}

fn first_duplicate(ids: impl Iterator<Item = u32>) -> Option<u32> {
    let mut seen = std::collections::HashSet::new();
    ids.into_iter().find(|id| !seen.insert(*id))
}

/// Generator for one purpose-specific random stream.
fn stream_rng(seed: u64, salt: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&salt.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimumEstimate {
    pub position: Point3,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplementaryEstimate {
    /// Filtered position, or the mitigated solve before the filter starts.
    pub position: Point3,
    /// Output of the weighted solve before filtering.
    pub mitigated: Point3,
    pub converged: bool,
    pub labels: Vec<Option<PropagationCondition>>,
    /// Diagonal of the weighting matrix used.
    pub weights: Vec<f64>,
    pub kf: Option<KfState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochEstimate {
    pub epoch: usize,
    pub tag_id: u32,
    /// True time at which the tag's slot began, seconds.
    pub slot_start: f64,
    pub truth: Point3,
    pub minimum: Option<MinimumEstimate>,
    pub complementary: Option<ComplementaryEstimate>,
    /// One entry per anchor, in configuration order.
    pub ranges: Vec<RangeMeasurement>,
    pub available_tag_side: bool,
    pub available_anchor_side: bool,
}

/// Position as logged on one side of the link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionLogEntry {
    pub epoch: usize,
    pub tag_id: u32,
    pub minimum: Option<Point3>,
    pub complementary: Option<Point3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub name: String,
    pub seed: u64,
    pub epochs: usize,
    pub tags: usize,
    pub pipeline: Pipeline,
    pub rmse_minimum: Option<f64>,
    pub rmse_complementary: Option<f64>,
    pub minimum: Option<PipelineMetrics>,
    pub complementary: Option<PipelineMetrics>,
    pub detector: DetectorKind,
    pub confusion: ConfusionMatrix,
    pub minimum_not_converged: usize,
    pub complementary_not_converged: usize,
    pub invalid_ranges: usize,
    /// Overlapping exchanges between different tags, in true time.
    pub collisions: usize,
    /// Largest gap between a slot's scheduled and actual start, excluding jitter.
    pub max_slot_misalignment: f64,
    /// Longest time any tag spent transmitting in one slot.
    pub max_slot_busy: f64,
    /// Jitter-only check of the slot plan over the same number of frames.
    pub tdma_check: CollisionReport,
    pub kf_max_asymmetry: f64,
    pub kf_min_eigenvalue: f64,
    /// Epochs where the tag-side and anchor-side logs differ.
    pub dual_log_mismatches: usize,
}

impl RunMetrics {
    /// Complementary against minimum, when both ran.
    pub fn pipeline_comparison(&self) -> Option<Result<PipelineComparison, ScenarioError>> {
        Some(compare_pipelines(self.minimum.as_ref()?, self.complementary.as_ref()?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    /// Ordered by epoch, then slot.
    pub estimates: Vec<EpochEstimate>,
    pub metrics: RunMetrics,
    pub tag_log: Vec<PositionLogEntry>,
    pub anchor_log: Vec<PositionLogEntry>,
}

/// Per-side processing state: one filter per tag.
struct SideProcessor {
    trackers: Vec<Tracker>,
}

struct SideOutput {
    minimum: Option<SolveResult>,
    complementary: Option<ComplementaryEstimate>,
}

struct Context<'a> {
    spec: &'a ScenarioSpec,
    kf: KfConfig,
    sigma: f64,
    threshold: f64,
}

impl SideProcessor {
    fn new(n_tags: usize, kf: KfConfig) -> Self {
        Self { trackers: vec![Tracker::new(kf); n_tags] }
    }

    fn process(
        &mut self,
        ctx: &Context<'_>,
        tag_idx: usize,
        ms: &MeasurementSet,
        measurements: &[RangeMeasurement],
    ) -> Result<SideOutput, String> {
        let spec = ctx.spec;
        let dim = spec.solver.dimension;
        match feasibility_check(ms, dim) {
            Feasibility::Ok => {}
            other => return Err(format!("{} usable ranges, layout {other:?}", ms.len())),
        }
        let minimum = if spec.pipeline.runs_minimum() {
            Some(solve_wls(ms, &spec.solver).map_err(|e| e.to_string())?)
        } else {
            None
        };
        let complementary = if spec.pipeline.runs_complementary() {
            let tracker = &mut self.trackers[tag_idx];
            let ident = match spec.mitigation.detector {
                DetectorKind::Oracle => identify_oracle(measurements),
                DetectorKind::Threshold => {
                    let prior = tracker.predicted_position().map_or(Prior::None, Prior::Position);
                    identify_threshold(ms, &prior, ctx.threshold)
                }
            };
            let (solve, w) = mitigated_solve(ms, &ident, &spec.mitigation, &spec.solver).map_err(|e| e.to_string())?;
            let state =
                tracker.advance(solve.converged.then_some(&solve.position)).map_err(|e| e.to_string())?.cloned();
            let position = state.as_ref().map_or(solve.position, |s| s.position(&ctx.kf));
            Some(ComplementaryEstimate {
                position,
                mitigated: solve.position,
                converged: solve.converged,
                labels: ident.labels,
                weights: w.diag,
                kf: state,
            })
        } else {
            None
        };
        Ok(SideOutput { minimum, complementary })
    }
}

fn measurement_set(anchors: &[Anchor], ranges: &[(usize, f64)], sigma: f64) -> MeasurementSet {
    MeasurementSet::new(
        ranges.iter().map(|&(i, d)| RangeEntry::new(anchors[i].id, anchors[i].position, d, sigma)).collect(),
    )
}

fn position_error(a: &Point3, b: &Point3, dim: Dimension) -> f64 {
    match dim {
        Dimension::Two => a.distance_2d(b),
        Dimension::Three => (*a - *b).norm(),
    }
}

fn draw_clocks(spec: &ScenarioSpec) -> (Vec<LocalClock>, Vec<LocalClock>) {
    let c = &spec.clocks;
    let mut rng = stream_rng(spec.seed, 0, STREAM_CLOCKS);
    let mut draw = |role: DeviceRole, id: u32| {
        let drift = if c.max_drift_ppm > 0.0 { rng.random_range(-c.max_drift_ppm..=c.max_drift_ppm) } else { 0.0 };
        let offset = if c.max_offset > 0.0 { rng.random_range(0.0..=c.max_offset) } else { 0.0 };
        let (offset, drift) = c
            .overrides
            .iter()
            .rev()
            .find(|o| o.role == role && o.id == id)
            .map_or((offset, drift), |o| (o.offset, o.drift_ppm));
        LocalClock { offset, drift_ppm: drift, tick_period: c.tick_period }
    };
    let anchors = spec.anchors.iter().map(|a| draw(DeviceRole::Anchor, a.id)).collect();
    let tags = spec.tags.iter().map(|t| draw(DeviceRole::Tag, t.id)).collect();
    (anchors, tags)
}

/// Counts overlapping activity windows belonging to different tags.
fn count_overlaps(windows: &mut [(f64, f64, u32)]) -> usize {
    windows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut count = 0;
    let mut latest: Option<(f64, u32)> = None;
    for &(start, end, tag) in windows.iter() {
        if let Some((prev_end, prev_tag)) = latest {
            if start < prev_end && tag != prev_tag {
                count += 1;
            }
        }
        if latest.is_none_or(|(e, _)| end > e) {
            latest = Some((end, tag));
        }
    }
    count
}

/// Runs the scenario to completion.
pub fn run(spec: &ScenarioSpec) -> Result<RunOutput, ScenarioError> {
    spec.validate()?;
    let dim = spec.solver.dimension;
    let ctx = Context { spec, kf: spec.kf_config(), sigma: spec.range_sigma(), threshold: spec.threshold() };
    let anchors = &spec.anchors;
    let tag_ids: Vec<u32> = spec.tags.iter().map(|t| t.id).collect();
    let plan: SlotPlan = build_plan(&tag_ids, spec.tdma.active_duration, spec.tdma.guard_duration, spec.dt)
        .map_err(|e| ScenarioError::Config(e.to_string()))?;
    let tag_index = |id: u32| spec.tags.iter().position(|t| t.id == id).expect("plan holds configured tags");

    let mut paths = Vec::with_capacity(spec.tags.len());
    for t in &spec.tags {
        paths.push(t.trajectory.generate(spec.epochs, spec.dt)?);
    }
    let tangents: Vec<Vec<Point3>> = paths.iter().map(|p| headings(p)).collect();

    let (anchor_clocks, mut tag_clocks) = draw_clocks(spec);
    let master_idx = spec.clocks.master_anchor.map_or(0, |m| anchors.iter().position(|a| a.id == m).unwrap_or(0));
    let master = anchor_clocks[master_idx];
    let master_pos = anchors[master_idx].position;
    let delays = spec.ranging.reply_delays;
    let lookup = spec.schedule.lookup();
    let mut channel_rng = stream_rng(spec.seed, spec.channel.rng_seed, STREAM_CHANNEL);
    let mut jitter_rng = stream_rng(spec.seed, 0, STREAM_JITTER);
    let max_jitter = spec.tdma.max_jitter;

    // Join: each tag syncs once inside a frame that precedes epoch 0.
    for (i, slot) in plan.slots.iter().enumerate() {
        let ti = tag_index(slot.tag_id);
        let start = i as f64 * (slot.active_duration + slot.guard_duration);
        let tof = true_tof(&paths[ti][0], &master_pos);
        let est = sync_exchange(&tag_clocks[ti], &master, tof, delays.b, start)
            .map_err(|e| ScenarioError::Simulation { epoch: 0, tag: slot.tag_id, reason: e.to_string() })?;
        tag_clocks[ti] = tag_clocks[ti].apply_correction(est.negated());
    }
    let frame0_local = master.local_seconds(spec.dt);

    let mut tag_side = SideProcessor::new(spec.tags.len(), ctx.kf);
    let mut anchor_side = SideProcessor::new(spec.tags.len(), ctx.kf);
    let mut estimates = Vec::with_capacity(spec.epochs * spec.tags.len());
    let mut tag_log = Vec::with_capacity(estimates.capacity());
    let mut anchor_log = Vec::with_capacity(estimates.capacity());
    let mut windows: Vec<(f64, f64, u32)> = Vec::with_capacity(estimates.capacity());
    let mut confusion = ConfusionMatrix::default();
    let mut max_misalignment = 0.0f64;
    let mut max_busy = 0.0f64;
    let mut invalid_ranges = 0;
    let mut kf_max_asym = 0.0f64;
    let mut kf_min_eig = f64::INFINITY;

    for epoch in 0..spec.epochs {
        for slot in &plan.slots {
            let ti = tag_index(slot.tag_id);
            let tag_id = slot.tag_id;
            let sim_err = |e: String| ScenarioError::Simulation { epoch, tag: tag_id, reason: e };
            let truth = paths[ti][epoch];

            let scheduled = frame0_local + epoch as f64 * spec.dt + slot.active_start;
            let intended = master.true_time_of(scheduled);
            let believed = tag_clocks[ti].true_time_of(scheduled);
            max_misalignment = max_misalignment.max((believed - intended).abs());
            let jitter = if max_jitter > 0.0 { jitter_rng.random_range(-max_jitter..=max_jitter) } else { 0.0 };
            let slot_start = (believed + jitter).max(0.0);
            let mut cursor = slot_start;

            let resync = spec.clocks.resync_every_frames;
            if resync > 0 && epoch % resync == 0 {
                let tof = true_tof(&truth, &master_pos);
                let est = sync_exchange(&tag_clocks[ti], &master, tof, delays.b, cursor)
                    .map_err(|e| sim_err(e.to_string()))?;
                tag_clocks[ti] = tag_clocks[ti].apply_correction(est.negated());
                cursor += 2.0 * tof + delays.b;
            }

            let shadowed = match spec.schedule.shadowing {
                Some(rule) => rule.shadowed_anchors(&truth, &tangents[ti][epoch], anchors),
                None => Vec::new(),
            };
            let mut measurements = Vec::with_capacity(anchors.len());
            let mut exchanges: Vec<TwrExchange> = Vec::with_capacity(anchors.len());
            for (ai, anchor) in anchors.iter().enumerate() {
                let condition = lookup.resolve(tag_id, anchor.id, epoch, shadowed.contains(&anchor.id));
                let req = RangeRequest {
                    tag_id,
                    tag_position: truth,
                    tag_clock: &tag_clocks[ti],
                    anchor,
                    anchor_clock: &anchor_clocks[ai],
                    epoch,
                    condition,
                    method: spec.ranging.method,
                    delays,
                    start: cursor,
                };
                let (m, ex) =
                    measure_range(&req, &spec.channel, &mut channel_rng).map_err(|e| sim_err(e.to_string()))?;
                cursor = ex.end;
                measurements.push(m);
                exchanges.push(ex);
            }
            windows.push((slot_start, cursor, tag_id));
            max_busy = max_busy.max(cursor - slot_start);

            // Each side evaluates the estimator on its copy of the timestamps.
            let usable: Vec<usize> = (0..anchors.len()).filter(|&i| measurements[i].valid).collect();
            invalid_ranges += anchors.len() - usable.len();
            let tag_ranges: Vec<(usize, f64)> = usable.iter().map(|&i| (i, measurements[i].d_est)).collect();
            let mut anchor_ranges = Vec::with_capacity(usable.len());
            for &i in &usable {
                let est = estimate_tof(&exchanges[i], spec.ranging.method).map_err(|e| sim_err(e.to_string()))?;
                anchor_ranges.push((i, est.tof.max(0.0) * SPEED_OF_LIGHT));
            }
            let used: Vec<RangeMeasurement> = usable.iter().map(|&i| measurements[i].clone()).collect();

            let infeasible = |reason: String| ScenarioError::Infeasible { epoch, tag: tag_id, reason };
            let t_out = tag_side
                .process(&ctx, ti, &measurement_set(anchors, &tag_ranges, ctx.sigma), &used)
                .map_err(infeasible)?;
            let a_out = anchor_side
                .process(&ctx, ti, &measurement_set(anchors, &anchor_ranges, ctx.sigma), &used)
                .map_err(infeasible)?;

            if let Some(c) = &t_out.complementary {
                for (k, &i) in usable.iter().enumerate() {
                    measurements[i].condition_detected = c.labels[k];
                    confusion.record(measurements[i].condition_true, c.labels[k]);
                }
                if let Some(s) = &c.kf {
                    kf_max_asym = kf_max_asym.max(s.asymmetry());
                    kf_min_eig = kf_min_eig.min(s.min_eigenvalue());
                }
            }

            let log = |out: &SideOutput| PositionLogEntry {
                epoch,
                tag_id,
                minimum: out.minimum.as_ref().map(|s| s.position),
                complementary: out.complementary.as_ref().map(|c| c.position),
            };
            tag_log.push(log(&t_out));
            anchor_log.push(log(&a_out));

            estimates.push(EpochEstimate {
                epoch,
                tag_id,
                slot_start,
                truth,
                minimum: t_out.minimum.map(|s| MinimumEstimate {
                    position: s.position,
                    converged: s.converged,
                    iterations: s.iterations_used,
                }),
                complementary: t_out.complementary,
                ranges: measurements,
                available_tag_side: true,
                available_anchor_side: true,
            });
        }
    }

    let errors = |f: &dyn Fn(&EpochEstimate) -> Option<Point3>| -> Option<PipelineMetrics> {
        let errs: Option<Vec<f64>> =
            estimates.iter().map(|e| f(e).map(|p| position_error(&p, &e.truth, dim))).collect();
        errs.map(PipelineMetrics::from_errors)
    };
    let minimum = if spec.pipeline.runs_minimum() { errors(&|e| e.minimum.as_ref().map(|m| m.position)) } else { None };
    let complementary = if spec.pipeline.runs_complementary() {
        errors(&|e| e.complementary.as_ref().map(|c| c.position))
    } else {
        None
    };

    let mut check_rng = stream_rng(spec.seed, 0, STREAM_TDMA_CHECK);
    let tdma_check = check_collisions(&plan, JitterModel { max_jitter }, spec.epochs, &mut check_rng);

    let metrics = RunMetrics {
        name: spec.name.clone(),
        seed: spec.seed,
        epochs: spec.epochs,
        tags: spec.tags.len(),
        pipeline: spec.pipeline,
        rmse_minimum: minimum.as_ref().map(|m| m.rmse),
        rmse_complementary: complementary.as_ref().map(|m| m.rmse),
        minimum,
        complementary,
        detector: spec.mitigation.detector,
        confusion,
        minimum_not_converged: estimates.iter().filter(|e| e.minimum.as_ref().is_some_and(|m| !m.converged)).count(),
        complementary_not_converged: estimates
            .iter()
            .filter(|e| e.complementary.as_ref().is_some_and(|c| !c.converged))
            .count(),
        invalid_ranges,
        collisions: count_overlaps(&mut windows),
        max_slot_misalignment: max_misalignment,
        max_slot_busy: max_busy,
        tdma_check,
        kf_max_asymmetry: kf_max_asym,
        kf_min_eigenvalue: if kf_min_eig.is_finite() { kf_min_eig } else { 0.0 },
        dual_log_mismatches: tag_log.iter().zip(&anchor_log).filter(|(a, b)| a != b).count(),
    };
    Ok(RunOutput { estimates, metrics, tag_log, anchor_log })
}
