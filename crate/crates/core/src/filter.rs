//! Single-object filtering: planar two-body dynamics, EKF prediction with a
//! variational state-transition matrix, linear position update, and the
//! sensor field-of-view geometry.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::serde_helpers;

/// Standard gravitational parameter of the Earth, km^3/s^2.
pub const EARTH_MU: f64 = 398_600.441_8;

/// Orbits closer than this to the attracting center are rejected.
pub const MIN_RADIUS_KM: f64 = 1.0;

/// Slack on the inclusive FOV boundary, radians.
const FOV_ANGLE_EPS: f64 = 1e-12;

/// Planar state `(x, y, vx, vy)` in km and km/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct StateVector(pub Vector4<f64>);

impl StateVector {
    pub fn new(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        Self(Vector4::new(x, y, vx, vy))
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.0[0], self.0[1])
    }

    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.0[2], self.0[3])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<[f64; 4]> for StateVector {
    fn from(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<StateVector> for [f64; 4] {
    fn from(s: StateVector) -> Self {
        [s.0[0], s.0[1], s.0[2], s.0[3]]
    }
}

/// Opaque track identity, unique within a hypothesis and never reused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrackLabel(pub u64);

impl fmt::Display for TrackLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

/// Labeled Gaussian density of one object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianTrack {
    pub label: TrackLabel,
    pub mean: StateVector,
    #[serde(with = "serde_helpers::mat4")]
    pub covariance: Matrix4<f64>,
}

impl GaussianTrack {
    pub fn new(label: TrackLabel, mean: StateVector, covariance: Matrix4<f64>) -> Self {
        Self {
            label,
            mean,
            covariance,
        }
    }

    pub fn position_covariance(&self) -> Matrix2<f64> {
        self.covariance.fixed_view::<2, 2>(0, 0).into_owned()
    }

    /// Smallest eigenvalue of the symmetrized covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        let sym = symmetrize4(&self.covariance);
        sym.symmetric_eigenvalues().min()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    /// Gravitational parameter, km^3/s^2. Zero gives straight-line motion.
    pub mu: f64,
    /// Scan interval, s.
    pub dt: f64,
    /// Acceleration variance per axis driving the discrete process noise.
    pub q: f64,
    pub integrator_substeps: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            mu: EARTH_MU,
            dt: 60.0,
            q: 1e-10,
            integrator_substeps: 8,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(invalid("dynamics.mu", "must be finite and >= 0"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("dynamics.dt", "must be finite and > 0"));
        }
        if !(self.q.is_finite() && self.q >= 0.0) {
            return Err(invalid("dynamics.q", "must be finite and >= 0"));
        }
        if self.integrator_substeps == 0 {
            return Err(invalid("dynamics.integrator_substeps", "must be >= 1"));
        }
        Ok(())
    }

    /// Discrete process noise `q * G * G^T` for a piecewise-constant
    /// acceleration over `dt`.
    pub fn process_noise(&self, dt: f64) -> Matrix4<f64> {
        let g = nalgebra::Matrix4x2::new(
            0.5 * dt * dt,
            0.0,
            0.0,
            0.5 * dt * dt,
            dt,
            0.0,
            0.0,
            dt,
        );
        g * g.transpose() * self.q
    }
}

/// A fixed sensor observing `(x, y)` inside a circular sector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    #[serde(with = "serde_helpers::vec2")]
    pub origin: Vector2<f64>,
    pub boresight_angle: f64,
    pub fov_half_angle: f64,
    /// Sector radius, km. Bounds the FOV so births and clutter have a
    /// proper uniform density.
    pub max_range: f64,
    /// Measurement noise covariance, km^2.
    #[serde(with = "serde_helpers::mat2")]
    pub r: Matrix2<f64>,
    pub p_d: f64,
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.origin.x.is_finite() && self.origin.y.is_finite()) {
            return Err(invalid("sensor.origin", "must be finite"));
        }
        if !self.boresight_angle.is_finite() {
            return Err(invalid("sensor.boresight_angle", "must be finite"));
        }
        if !(self.fov_half_angle > 0.0 && self.fov_half_angle <= PI) {
            return Err(invalid("sensor.fov_half_angle", "must lie in (0, pi]"));
        }
        if !(self.max_range.is_finite() && self.max_range > 0.0) {
            return Err(invalid("sensor.max_range", "must be finite and > 0"));
        }
        let r = &self.r;
        let symmetric = (r[(0, 1)] - r[(1, 0)]).abs() <= 1e-12 * r.abs().max().max(1.0);
        if !symmetric || r.cholesky().is_none() {
            return Err(invalid("sensor.r", "must be symmetric positive definite"));
        }
        if !(0.0..=1.0).contains(&self.p_d) {
            return Err(invalid("sensor.p_d", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn boresight(&self) -> Vector2<f64> {
        Vector2::new(self.boresight_angle.cos(), self.boresight_angle.sin())
    }

    /// Area of the FOV sector, km^2.
    pub fn fov_area(&self) -> f64 {
        self.fov_half_angle * self.max_range * self.max_range
    }
}

fn two_body_accel(pos: &Vector2<f64>, mu: f64) -> Result<Vector2<f64>> {
    if mu == 0.0 {
        return Ok(Vector2::zeros());
    }
    let r = pos.norm();
    if r.is_nan() || r < MIN_RADIUS_KM {
        return Err(Error::Singularity { radius_km: r });
    }
    Ok(-mu / (r * r * r) * pos)
}

fn state_derivative(s: &Vector4<f64>, mu: f64) -> Result<Vector4<f64>> {
    let a = two_body_accel(&Vector2::new(s[0], s[1]), mu)?;
    Ok(Vector4::new(s[2], s[3], a.x, a.y))
}

/// Jacobian of the two-body vector field at `s`.
fn field_jacobian(s: &Vector4<f64>, mu: f64) -> Matrix4<f64> {
    let mut a = Matrix4::zeros();
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    if mu != 0.0 {
        let p = Vector2::new(s[0], s[1]);
        let r2 = p.norm_squared();
        let r = r2.sqrt();
        let r3 = r2 * r;
        let r5 = r3 * r2;
        let g = (p * p.transpose()) * (3.0 * mu / r5) - Matrix2::identity() * (mu / r3);
        a.fixed_view_mut::<2, 2>(2, 0).copy_from(&g);
    }
    a
}

fn rk4_state(s: &Vector4<f64>, h: f64, mu: f64) -> Result<Vector4<f64>> {
    let k1 = state_derivative(s, mu)?;
    let k2 = state_derivative(&(s + k1 * (0.5 * h)), mu)?;
    let k3 = state_derivative(&(s + k2 * (0.5 * h)), mu)?;
    let k4 = state_derivative(&(s + k3 * h), mu)?;
    Ok(s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Propagates `s` by `cfg.dt` with fixed-step RK4.
pub fn propagate_state(s: &StateVector, cfg: &DynamicsConfig) -> Result<StateVector> {
    propagate_state_by(s, cfg, cfg.dt)
}

/// Same as [`propagate_state`] with an explicit (possibly negative) interval.
pub fn propagate_state_by(s: &StateVector, cfg: &DynamicsConfig, dt: f64) -> Result<StateVector> {
    if !s.is_finite() {
        return Err(Error::Numerical("non-finite state".into()));
    }
    let n = cfg.integrator_substeps.max(1);
    let h = dt / n as f64;
    let mut x = s.0;
    for _ in 0..n {
        x = rk4_state(&x, h, cfg.mu)?;
    }
    Ok(StateVector(x))
}

/// Propagates the state together with its state-transition matrix by
/// integrating the variational equations with the same RK4 steps. The state
/// part is arithmetically identical to [`propagate_state_by`].
pub fn propagate_with_transition(
    s: &StateVector,
    cfg: &DynamicsConfig,
    dt: f64,
) -> Result<(StateVector, Matrix4<f64>)> {
    if !s.is_finite() {
        return Err(Error::Numerical("non-finite state".into()));
    }
    let n = cfg.integrator_substeps.max(1);
    let h = dt / n as f64;
    let mu = cfg.mu;
    let mut x = s.0;
    let mut phi = Matrix4::<f64>::identity();
    for _ in 0..n {
        let k1 = state_derivative(&x, mu)?;
        let x2 = x + k1 * (0.5 * h);
        let k2 = state_derivative(&x2, mu)?;
        let x3 = x + k2 * (0.5 * h);
        let k3 = state_derivative(&x3, mu)?;
        let x4 = x + k3 * h;
        let k4 = state_derivative(&x4, mu)?;

        let l1 = field_jacobian(&x, mu) * phi;
        let l2 = field_jacobian(&x2, mu) * (phi + l1 * (0.5 * h));
        let l3 = field_jacobian(&x3, mu) * (phi + l2 * (0.5 * h));
        let l4 = field_jacobian(&x4, mu) * (phi + l3 * h);

        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        phi += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
    }
    Ok((StateVector(x), phi))
}

/// Central finite-difference Jacobian of the RK4 flow over `cfg.dt`, with
/// step `1e-6 * max(1, |s_i|)` per component.
pub fn finite_difference_jacobian(s: &StateVector, cfg: &DynamicsConfig) -> Result<Matrix4<f64>> {
    let mut jac = Matrix4::zeros();
    for i in 0..4 {
        let step = 1e-6 * s.0[i].abs().max(1.0);
        let mut plus = *s;
        let mut minus = *s;
        plus.0[i] += step;
        minus.0[i] -= step;
        let fp = propagate_state(&plus, cfg)?;
        let fm = propagate_state(&minus, cfg)?;
        jac.set_column(i, &((fp.0 - fm.0) / (2.0 * step)));
    }
    Ok(jac)
}

pub(crate) fn symmetrize4(m: &Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

fn symmetrize2(m: &Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

/// EKF prediction over `cfg.dt`.
pub fn predict_track(t: &GaussianTrack, cfg: &DynamicsConfig) -> Result<GaussianTrack> {
    let (mean, phi) = propagate_with_transition(&t.mean, cfg, cfg.dt)?;
    let cov = phi * t.covariance * phi.transpose() + cfg.process_noise(cfg.dt);
    Ok(GaussianTrack {
        label: t.label,
        mean,
        covariance: symmetrize4(&cov),
    })
}

/// Posterior track plus the log marginal likelihood of the return.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackUpdate {
    pub track: GaussianTrack,
    pub log_likelihood: f64,
}

impl TrackUpdate {
    pub fn likelihood(&self) -> f64 {
        self.log_likelihood.exp()
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log density of `N(x; mean, cov)` in two dimensions.
pub fn gaussian_log_density2(x: &Vector2<f64>, mean: &Vector2<f64>, cov: &Matrix2<f64>) -> Result<f64> {
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
    let d = x - mean;
    let w = chol.solve(&d);
    let maha = d.dot(&w);
    let l = chol.l();
    let log_det = 2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln());
    Ok(-0.5 * maha - 0.5 * log_det - LN_2PI)
}

fn position_jacobian() -> Matrix2x4<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

/// EKF update with `h(s) = (x, y)`. The likelihood is the exact innovation
/// density `N(z; H m, H P H^T + R)` since the model is linear.
pub fn update_track(t: &GaussianTrack, z: &Vector2<f64>, sensor: &SensorModel) -> Result<TrackUpdate> {
    if !(z.x.is_finite() && z.y.is_finite()) {
        return Err(Error::Numerical("non-finite measurement".into()));
    }
    let h = position_jacobian();
    let p = &t.covariance;
    let predicted = t.mean.position();
    let s = symmetrize2(&(h * p * h.transpose() + sensor.r));
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance is not invertible".into()))?;
    let innov = z - predicted;
    let w = chol.solve(&innov);
    let l = chol.l();
    let log_det = 2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln());
    let log_likelihood = -0.5 * innov.dot(&w) - 0.5 * log_det - LN_2PI;

    let pht = p * h.transpose();
    let gain = pht * chol.inverse();
    let mean = t.mean.0 + gain * innov;
    let ikh = Matrix4::identity() - gain * h;
    let cov = ikh * p * ikh.transpose() + gain * sensor.r * gain.transpose();
    Ok(TrackUpdate {
        track: GaussianTrack {
            label: t.label,
            mean: StateVector(mean),
            covariance: symmetrize4(&cov),
        },
        log_likelihood,
    })
}

/// True iff `pos` lies in the sensor sector. The angular boundary is
/// inclusive.
pub fn position_in_fov(pos: &Vector2<f64>, sensor: &SensorModel) -> Result<bool> {
    let d = pos - sensor.origin;
    let range = d.norm();
    if range == 0.0 {
        return Err(Error::AtSensorOrigin);
    }
    if !range.is_finite() {
        return Err(Error::Numerical("non-finite position".into()));
    }
    let b = sensor.boresight();
    let angle = (b.x * d.y - b.y * d.x).atan2(b.dot(&d)).abs();
    Ok(angle <= sensor.fov_half_angle + FOV_ANGLE_EPS && range <= sensor.max_range)
}

pub fn in_fov(s: &StateVector, sensor: &SensorModel) -> Result<bool> {
    position_in_fov(&s.position(), sensor)
}

/// Prograde circular-orbit velocity at `pos`.
pub fn circular_velocity(pos: &Vector2<f64>, mu: f64) -> Vector2<f64> {
    let r = pos.norm();
    if mu == 0.0 || r == 0.0 {
        return Vector2::zeros();
    }
    let speed = (mu / r).sqrt();
    Vector2::new(-pos.y, pos.x) * (speed / r)
}

/// Track for an object born at return `z`: the flat-position-prior limit of
/// one EKF update, i.e. position `z` with covariance `R`, and velocity drawn
/// from a Gaussian around the prograde circular velocity.
pub fn newborn_track(
    label: TrackLabel,
    z: &Vector2<f64>,
    sensor: &SensorModel,
    mu: f64,
    velocity_std: f64,
) -> GaussianTrack {
    let v = circular_velocity(z, mu);
    let mut cov = Matrix4::zeros();
    cov.fixed_view_mut::<2, 2>(0, 0).copy_from(&sensor.r);
    cov[(2, 2)] = velocity_std * velocity_std;
    cov[(3, 3)] = velocity_std * velocity_std;
    GaussianTrack {
        label,
        mean: StateVector::new(z.x, z.y, v.x, v.y),
        covariance: cov,
    }
}
