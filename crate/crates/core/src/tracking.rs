//! Linear Kalman filter over solver-output positions.
//!
//! The state stacks position, velocity and (for the constant-acceleration
//! variant) acceleration, axis by axis within each block:
//! `[px, py, (pz), vx, vy, (vz), ...]`. Process noise is the continuous
//! white-noise model on the highest derivative, discretized over `dt`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::positioning::{Dimension, SolveResult};
use crate::types::Point3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("invalid filter configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionModel {
    ConstantVelocity,
    ConstantAcceleration,
}

impl MotionModel {
    fn order(&self) -> usize {
        match self {
            Self::ConstantVelocity => 2,
            Self::ConstantAcceleration => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KfConfig {
    /// Seconds between epochs.
    pub dt: f64,
    /// Process-noise spectral density.
    pub q: f64,
    /// Measurement variance per axis, m^2. `None` lets the scenario derive
    /// it from the channel as `(2 * los_sigma)^2`.
    pub r_meas: Option<f64>,
    pub initial_position_var: f64,
    pub initial_velocity_var: f64,
    pub model: MotionModel,
    pub dimension: Dimension,
}

impl Default for KfConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            q: 0.5,
            r_meas: None,
            initial_position_var: 10.0,
            initial_velocity_var: 10.0,
            model: MotionModel::ConstantVelocity,
            dimension: Dimension::Two,
        }
    }
}

/// Measurement variance used when `r_meas` is unset and no channel is known.
pub const FALLBACK_R_MEAS: f64 = 0.01;

impl KfConfig {
    pub fn measurement_variance(&self) -> f64 {
        self.r_meas.unwrap_or(FALLBACK_R_MEAS)
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.dt > 0.0) {
            return Err(FilterError::Config("dt must be > 0".into()));
        }
        if !(self.q >= 0.0) {
            return Err(FilterError::Config("q must be >= 0".into()));
        }
        if !(self.measurement_variance() > 0.0) {
            return Err(FilterError::Config("r_meas must be > 0".into()));
        }
        if !(self.initial_position_var > 0.0 && self.initial_velocity_var > 0.0) {
            return Err(FilterError::Config("initial variances must be > 0".into()));
        }
        Ok(())
    }

    fn axes(&self) -> usize {
        self.dimension.axes()
    }

    fn state_len(&self) -> usize {
        self.axes() * self.model.order()
    }

    /// State transition over one epoch.
    pub fn transition(&self) -> DMatrix<f64> {
        let (n, axes, dt) = (self.state_len(), self.axes(), self.dt);
        let order = self.model.order();
        let mut f = DMatrix::identity(n, n);
        for from in 0..order {
            for to in (from + 1)..order {
                let k = to - from;
                let coeff = dt.powi(k as i32) / factorial(k);
                for a in 0..axes {
                    f[(from * axes + a, to * axes + a)] = coeff;
                }
            }
        }
        f
    }

    /// Discretized process noise over one epoch.
    pub fn process_noise(&self) -> DMatrix<f64> {
        let (n, axes, dt, q) = (self.state_len(), self.axes(), self.dt, self.q);
        let order = self.model.order();
        let mut m = DMatrix::zeros(n, n);
        // Entry (i, j) for derivative orders i, j of a white-noise process on
        // the highest derivative: q dt^p / (p (a)! (b)!) with a = top-i, b = top-j.
        let top = order - 1;
        for i in 0..order {
            for j in 0..order {
                let (a, b) = (top - i, top - j);
                let p = a + b + 1;
                let v = q * dt.powi(p as i32) / (p as f64 * factorial(a) * factorial(b));
                for ax in 0..axes {
                    m[(i * axes + ax, j * axes + ax)] = v;
                }
            }
        }
        m
    }

    fn observation(&self) -> DMatrix<f64> {
        let (n, axes) = (self.state_len(), self.axes());
        let mut h = DMatrix::zeros(axes, n);
        for a in 0..axes {
            h[(a, a)] = 1.0;
        }
        h
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KfState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl KfState {
    /// Starts at `z` with zero velocity and the configured initial variances.
    pub fn init(z: &Point3, cfg: &KfConfig) -> Self {
        let (n, axes) = (cfg.state_len(), cfg.axes());
        let mut x = DVector::zeros(n);
        for a in 0..axes {
            x[a] = z.component(a);
        }
        let mut p = DMatrix::identity(n, n) * cfg.initial_velocity_var;
        for a in 0..axes {
            p[(a, a)] = cfg.initial_position_var;
        }
        Self { x, p }
    }

    pub fn position(&self, cfg: &KfConfig) -> Point3 {
        let z = if cfg.axes() == 3 { self.x[2] } else { 0.0 };
        Point3::new(self.x[0], self.x[1], z)
    }

    pub fn velocity(&self, cfg: &KfConfig) -> Point3 {
        let axes = cfg.axes();
        let z = if axes == 3 { self.x[axes + 2] } else { 0.0 };
        Point3::new(self.x[axes], self.x[axes + 1], z)
    }

    /// Largest deviation of `P` from symmetry.
    pub fn asymmetry(&self) -> f64 {
        (&self.p - self.p.transpose()).abs().max()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.p.clone().symmetric_eigenvalues().min()
    }

    fn symmetrize(&mut self) {
        self.p = (&self.p + self.p.transpose()) * 0.5;
    }
}

/// Time update: `x <- F x`, `P <- F P F^T + Q`.
pub fn kf_predict(state: &KfState, cfg: &KfConfig) -> KfState {
    let f = cfg.transition();
    let mut next = KfState { x: &f * &state.x, p: &f * &state.p * f.transpose() + cfg.process_noise() };
    next.symmetrize();
    next
}

/// Measurement update with a position observation, Joseph form.
pub fn kf_update(state: &KfState, z: &Point3, cfg: &KfConfig) -> Result<KfState, FilterError> {
    let axes = cfg.axes();
    let h = cfg.observation();
    let r = DMatrix::identity(axes, axes) * cfg.measurement_variance();
    let zv = DVector::from_iterator(axes, (0..axes).map(|a| z.component(a)));
    let innovation = zv - &h * &state.x;
    let s = &h * &state.p * h.transpose() + &r;
    let s_inv = s.try_inverse().ok_or(FilterError::SingularInnovation)?;
    let k = &state.p * h.transpose() * s_inv;
    let i_kh = DMatrix::identity(state.x.len(), state.x.len()) - &k * &h;
    let mut next =
        KfState { x: &state.x + &k * innovation, p: &i_kh * &state.p * i_kh.transpose() + &k * r * k.transpose() };
    next.symmetrize();
    Ok(next)
}

/// Incremental per-tag filter. Epochs without a usable position are
/// prediction-only.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: KfConfig,
    state: Option<KfState>,
}

impl Tracker {
    pub fn new(cfg: KfConfig) -> Self {
        Self { cfg, state: None }
    }

    pub fn config(&self) -> &KfConfig {
        &self.cfg
    }

    pub fn state(&self) -> Option<&KfState> {
        self.state.as_ref()
    }

    /// Position predicted for the next epoch, if the filter is running.
    pub fn predicted_position(&self) -> Option<Point3> {
        self.state.as_ref().map(|s| kf_predict(s, &self.cfg).position(&self.cfg))
    }

    /// Advances one epoch. `measurement = None` gates the update.
    pub fn advance(&mut self, measurement: Option<&Point3>) -> Result<Option<&KfState>, FilterError> {
        self.state = match (self.state.take(), measurement) {
            (None, None) => None,
            (None, Some(z)) => Some(KfState::init(z, &self.cfg)),
            (Some(s), None) => Some(kf_predict(&s, &self.cfg)),
            (Some(s), Some(z)) => Some(kf_update(&kf_predict(&s, &self.cfg), z, &self.cfg)?),
        };
        Ok(self.state.as_ref())
    }
}

/// Filters a time-ordered sequence of solves. Non-converged solves are
/// prediction-only; epochs before the first converged solve have no state.
pub fn kf_track(estimates: &[SolveResult], cfg: &KfConfig) -> Result<Vec<Option<KfState>>, FilterError> {
    cfg.validate()?;
    let mut tracker = Tracker::new(*cfg);
    estimates.iter().map(|e| tracker.advance(e.converged.then_some(&e.position)).map(|s| s.cloned())).collect()
}
