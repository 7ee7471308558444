//! Exact motion of a free particle on the quartic surface
//! `phi(x) = sum_i (x_i^2 + eps_i x_i^4) - 1 = 0`.
//!
//! The normal-force multiplier is eliminated analytically, so the acceleration
//! is a closed-form function of position and velocity. Integration uses an
//! adaptive Dormand–Prince pair with a projection back onto the surface
//! whenever the constraint or tangency drifts.

use std::io::Write;

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Dopri5, StepControl};

pub const DEFAULT_EPS_CEILING: f64 = 0.5;

/// Deformation coefficients `eps_1, eps_2, eps_3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SurfaceParams {
    pub eps: [f64; 3],
}

impl SurfaceParams {
    pub fn new(eps: [f64; 3]) -> Result<Self> {
        Self::with_ceiling(eps, DEFAULT_EPS_CEILING)
    }

    pub fn with_ceiling(eps: [f64; 3], ceiling: f64) -> Result<Self> {
        for (i, e) in eps.iter().enumerate() {
            if !e.is_finite() || e.abs() > ceiling {
                return Err(Error::InvalidInput(format!(
                    "eps[{i}] = {e} outside the perturbative range |eps| <= {ceiling}"
                )));
            }
        }
        Ok(Self { eps })
    }

    /// Unchecked constructor for tests and internal sweeps.
    pub const fn from_array(eps: [f64; 3]) -> Self {
        Self { eps }
    }

    pub fn unperturbed() -> Self {
        Self { eps: [0.0; 3] }
    }

    pub fn max_abs(&self) -> f64 {
        self.eps.iter().fold(0.0f64, |m, e| m.max(e.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            eps: self.eps.map(|e| c * e),
        }
    }

    /// Cyclic shift `(e1, e2, e3) -> (e3, e1, e2)`, matching [`cyclic_shift`].
    pub fn cyclic_shift(&self) -> Self {
        let [a, b, c] = self.eps;
        Self { eps: [c, a, b] }
    }
}

/// Cyclic coordinate shift `(v1, v2, v3) -> (v3, v1, v2)`; a proper rotation.
pub fn cyclic_shift(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(v[2], v[0], v[1])
}

/// Inverse of [`cyclic_shift`].
pub fn cyclic_unshift(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(v[1], v[2], v[0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleState {
    pub x: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl ParticleState {
    pub fn new(x: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { x, v }
    }

    fn to_vector(self) -> SVector<f64, 6> {
        SVector::<f64, 6>::from_column_slice(&[
            self.x[0], self.x[1], self.x[2], self.v[0], self.v[1], self.v[2],
        ])
    }

    fn from_vector(y: &SVector<f64, 6>) -> Self {
        Self {
            x: Vector3::new(y[0], y[1], y[2]),
            v: Vector3::new(y[3], y[4], y[5]),
        }
    }

    pub fn speed_squared(&self) -> f64 {
        self.v.norm_squared()
    }

    /// Relative tangency defect `|v . grad phi| / (|v| |grad phi|)`.
    pub fn tangency_defect(&self, params: &SurfaceParams) -> f64 {
        let g = surface_gradient(&self.x, params);
        let denom = self.v.norm() * g.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.v.dot(&g).abs() / denom
        }
    }
}

/// Numerical settings shared by the exact and averaged integrators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSettings {
    pub rtol: f64,
    pub atol: f64,
    /// `None` leaves the step unbounded.
    pub max_step: Option<f64>,
    pub min_step: f64,
    pub max_steps: usize,
    pub surface_tol: f64,
    pub tangency_tol: f64,
    pub energy_tol: f64,
    pub gradient_floor: f64,
    pub max_newton_iters: usize,
    pub newton_tol: f64,
    pub capture_radius: f64,
    pub conservation_tol: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-14,
            max_step: None,
            min_step: 1e-12,
            max_steps: 50_000_000,
            surface_tol: 1e-10,
            tangency_tol: 1e-10,
            energy_tol: 1e-6,
            gradient_floor: 1e-8,
            max_newton_iters: 20,
            newton_tol: 1e-12,
            capture_radius: 1e-2,
            conservation_tol: 1e-8,
        }
    }
}

impl IntegratorSettings {
    pub(crate) fn step_control(&self) -> StepControl {
        StepControl {
            rtol: self.rtol,
            atol: self.atol,
            max_step: self.max_step.unwrap_or(f64::INFINITY),
            min_step: self.min_step,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: ParticleState,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepDiagnostics {
    pub accepted: usize,
    pub rejected: usize,
    pub projections: usize,
    /// Largest `|phi|` over the stored samples.
    pub max_constraint_violation: f64,
    /// Largest `|phi|` seen before any projection was applied.
    pub max_raw_violation: f64,
    /// Largest `| |v|^2 - |v0|^2 | / |v0|^2` over the stored samples.
    pub max_energy_drift: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: SurfaceParams,
    pub samples: Vec<TrajectorySample>,
    pub diagnostics: StepDiagnostics,
}

impl Trajectory {
    pub fn first(&self) -> &TrajectorySample {
        &self.samples[0]
    }

    pub fn last(&self) -> &TrajectorySample {
        self.samples.last().expect("trajectory has samples")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,x1,x2,x3,v1,v2,v3,L1,L2,L3,phi,energy")?;
        for s in &self.samples {
            let ParticleState { x, v } = s.state;
            let l = angular_momentum(&s.state);
            let phi = surface_value(&x, &self.params);
            let energy = 0.5 * v.norm_squared();
            let row = [
                s.t, x[0], x[1], x[2], v[0], v[1], v[2], l[0], l[1], l[2], phi, energy,
            ];
            writeln!(out, "{}", crate::io::csv_row(&row))?;
        }
        Ok(())
    }
}

pub fn surface_value(x: &Vector3<f64>, params: &SurfaceParams) -> f64 {
    (0..3)
        .map(|i| {
            let xi2 = x[i] * x[i];
            xi2 + params.eps[i] * xi2 * xi2
        })
        .sum::<f64>()
        - 1.0
}

pub fn surface_gradient(x: &Vector3<f64>, params: &SurfaceParams) -> Vector3<f64> {
    Vector3::from_fn(|i, _| 2.0 * x[i] + 4.0 * params.eps[i] * x[i].powi(3))
}

// Ratio v.Hess(phi).v / |grad phi|^2 shared by the acceleration and the momentum rate.
fn normal_force_ratio(
    state: &ParticleState,
    params: &SurfaceParams,
    gradient_floor: f64,
) -> Result<(f64, Vector3<f64>)> {
    let g = surface_gradient(&state.x, params);
    let g2 = g.norm_squared();
    if g2.sqrt() < gradient_floor {
        return Err(Error::DegenerateGradient {
            norm: g2.sqrt(),
            floor: gradient_floor,
        });
    }
    let curvature: f64 = (0..3)
        .map(|j| (2.0 + 12.0 * params.eps[j] * state.x[j] * state.x[j]) * state.v[j] * state.v[j])
        .sum();
    Ok((curvature / g2, g))
}

/// Acceleration of the constrained particle; always parallel to `grad phi`.
pub fn geodesic_rhs(state: &ParticleState, params: &SurfaceParams) -> Result<Vector3<f64>> {
    geodesic_rhs_with_floor(state, params, IntegratorSettings::default().gradient_floor)
}

pub fn geodesic_rhs_with_floor(
    state: &ParticleState,
    params: &SurfaceParams,
    gradient_floor: f64,
) -> Result<Vector3<f64>> {
    let (ratio, g) = normal_force_ratio(state, params, gradient_floor)?;
    Ok(-ratio * g)
}

pub fn angular_momentum(state: &ParticleState) -> Vector3<f64> {
    state.x.cross(&state.v)
}

/// Exact rate of change of `L = x × v` along the constrained motion.
pub fn exact_momentum_rhs(state: &ParticleState, params: &SurfaceParams) -> Result<Vector3<f64>> {
    let (ratio, _) = normal_force_ratio(state, params, IntegratorSettings::default().gradient_floor)?;
    let [e1, e2, e3] = params.eps;
    let [x1, x2, x3] = [state.x[0], state.x[1], state.x[2]];
    let c = -4.0 * ratio;
    Ok(Vector3::new(
        c * x2 * x3 * (e3 * x3 * x3 - e2 * x2 * x2),
        c * x3 * x1 * (e1 * x1 * x1 - e3 * x3 * x3),
        c * x1 * x2 * (e2 * x2 * x2 - e1 * x1 * x1),
    ))
}

/// Radius `r` such that `r·dir` lies on the surface; `dir` need not be normalized.
pub fn radial_root(dir: &Vector3<f64>, params: &SurfaceParams) -> Result<f64> {
    // a r^2 + b r^4 = 1
    let a = dir.norm_squared();
    if a == 0.0 {
        return Err(Error::InvalidInput("zero direction".into()));
    }
    let b: f64 = (0..3).map(|i| params.eps[i] * dir[i].powi(4)).sum();
    let disc = a * a + 4.0 * b;
    if disc <= 0.0 {
        return Err(Error::InvalidInput(
            "ray does not meet the surface".into(),
        ));
    }
    let r2 = 2.0 / (a + disc.sqrt());
    Ok(r2.sqrt())
}

fn tangentialize(v: &Vector3<f64>, g: &Vector3<f64>) -> Vector3<f64> {
    v - g * (v.dot(g) / g.norm_squared())
}

/// Build an on-surface state from a direction and a requested velocity.
///
/// The position is the surface point on the ray through `direction`. The velocity
/// has its normal component removed and keeps the requested speed.
pub fn state_on_surface(
    direction: &Vector3<f64>,
    velocity: &Vector3<f64>,
    params: &SurfaceParams,
) -> Result<ParticleState> {
    let r = radial_root(direction, params)?;
    let x = direction * r;
    let g = surface_gradient(&x, params);
    let speed = velocity.norm();
    let vt = tangentialize(velocity, &g);
    let n = vt.norm();
    if n == 0.0 {
        if speed == 0.0 {
            return Ok(ParticleState::new(x, Vector3::zeros()));
        }
        return Err(Error::InvalidInput(
            "velocity is normal to the surface".into(),
        ));
    }
    Ok(ParticleState::new(x, vt * (speed / n)))
}

/// Pull a near-surface state back onto the surface and tangent plane, keeping its speed.
pub fn project_to_surface(
    state: &ParticleState,
    params: &SurfaceParams,
    settings: &IntegratorSettings,
) -> Result<ParticleState> {
    project_with_speed(state, params, settings, state.v.norm())
}

pub(crate) fn project_with_speed(
    state: &ParticleState,
    params: &SurfaceParams,
    settings: &IntegratorSettings,
    speed: f64,
) -> Result<ParticleState> {
    let phi0 = surface_value(&state.x, params);
    if phi0.abs() > settings.capture_radius {
        return Err(Error::OutsideCaptureRadius {
            phi: phi0.abs(),
            capture: settings.capture_radius,
        });
    }
    let mut x = state.x;
    let mut phi = phi0;
    let mut iters = 0;
    while phi.abs() > settings.newton_tol {
        if iters == settings.max_newton_iters {
            return Err(Error::ProjectionDiverged {
                iters,
                residual: phi.abs(),
            });
        }
        let g = surface_gradient(&x, params);
        let g2 = g.norm_squared();
        if g2.sqrt() < settings.gradient_floor {
            return Err(Error::DegenerateGradient {
                norm: g2.sqrt(),
                floor: settings.gradient_floor,
            });
        }
        x -= g * (phi / g2);
        phi = surface_value(&x, params);
        iters += 1;
    }
    let g = surface_gradient(&x, params);
    let vt = tangentialize(&state.v, &g);
    let n = vt.norm();
    let v = if n > 0.0 { vt * (speed / n) } else { vt };
    Ok(ParticleState::new(x, v))
}

/// Adaptive integration of the exact constrained dynamics up to `t_end`.
///
/// Every accepted step is recorded. A projection (position along the gradient,
/// velocity tangentialized and rescaled to the initial speed) is applied whenever
/// `|phi|` exceeds `surface_tol / 2`, the tangency defect exceeds
/// `tangency_tol / 2`, or the speed drifts by more than `energy_tol / 2`.
pub fn integrate_geodesic(
    state0: &ParticleState,
    params: &SurfaceParams,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory> {
    if !(t_end > 0.0) {
        return Err(Error::InvalidInput(format!("t_end must be positive, got {t_end}")));
    }
    let speed0 = state0.v.norm();
    let energy0 = speed0 * speed0;
    let floor = settings.gradient_floor;
    let p = *params;
    let rhs = move |_t: f64, y: &SVector<f64, 6>| -> Result<SVector<f64, 6>> {
        let s = ParticleState::from_vector(y);
        let a = geodesic_rhs_with_floor(&s, &p, floor)?;
        Ok(SVector::<f64, 6>::from_column_slice(&[
            s.v[0], s.v[1], s.v[2], a[0], a[1], a[2],
        ]))
    };

    let mut diagnostics = StepDiagnostics::default();
    let rel_energy = |s: &ParticleState| {
        if energy0 == 0.0 {
            0.0
        } else {
            (s.speed_squared() - energy0).abs() / energy0
        }
    };
    let phi0 = surface_value(&state0.x, params).abs();
    diagnostics.max_constraint_violation = phi0;
    diagnostics.max_raw_violation = phi0;

    let mut samples = vec![TrajectorySample {
        t: 0.0,
        state: *state0,
    }];
    let mut stepper = Dopri5::new(rhs, 0.0, state0.to_vector(), settings.step_control())?;
    while stepper.t() < t_end {
        let step = stepper.step(t_end)?;
        let mut state = ParticleState::from_vector(&step.y);
        let phi = surface_value(&state.x, params).abs();
        diagnostics.max_raw_violation = diagnostics.max_raw_violation.max(phi);
        if phi > 0.5 * settings.surface_tol
            || state.tangency_defect(params) > 0.5 * settings.tangency_tol
            || rel_energy(&state) > 0.5 * settings.energy_tol
        {
            state = project_with_speed(&state, params, settings, speed0)?;
            stepper.reset_state(state.to_vector())?;
            diagnostics.projections += 1;
        }
        diagnostics.max_constraint_violation = diagnostics
            .max_constraint_violation
            .max(surface_value(&state.x, params).abs());
        diagnostics.max_energy_drift = diagnostics.max_energy_drift.max(rel_energy(&state));
        samples.push(TrajectorySample { t: step.t, state });
    }
    diagnostics.accepted = stepper.accepted;
    diagnostics.rejected = stepper.rejected;
    if diagnostics.max_energy_drift > settings.energy_tol {
        return Err(Error::ConservationDrift {
            quantity: "kinetic energy",
            drift: diagnostics.max_energy_drift,
            tol: settings.energy_tol,
        });
    }
    Ok(Trajectory {
        params: *params,
        samples,
        diagnostics,
    })
}
