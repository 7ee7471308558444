//! Checks of the averaging step against the exact constrained motion.
//!
//! The oracle averages the exact momentum rate over the unperturbed great
//! circle, sampled on the true surface. The trajectory comparison coil-averages
//! an exact orbit and sets it against the reduced model.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::Vector3;
use serde::Serialize;

use crate::averaged::{averaged_rhs, integrate_averaged, MomentumVector};
use crate::error::{Error, Result};
use crate::ode::hermite_integral;
use crate::surface::{
    angular_momentum, cyclic_shift, cyclic_unshift, exact_momentum_rhs, integrate_geodesic,
    state_on_surface, IntegratorSettings, ParticleState, StepDiagnostics, SurfaceParams, Trajectory,
};

pub const FRAME_FLOOR: f64 = 1e-6;
pub const DEFAULT_ORACLE_SAMPLES: usize = 1024;
// Below this fraction of L^2 in `L2^2 + L3^2` the oracle works in shifted coordinates.
const ROTATION_THRESHOLD: f64 = 1e-2;

/// Orthonormal frame of the unperturbed circle with momentum `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreatCircleFrame {
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub e3: Vector3<f64>,
    pub omega: f64,
    pub theta: f64,
}

impl GreatCircleFrame {
    pub fn new(l: &MomentumVector, theta: f64) -> Result<Self> {
        let l_norm = l.norm();
        if !(l_norm > 0.0) || !l_norm.is_finite() {
            return Err(Error::ZeroMomentum);
        }
        let rho2 = l[1] * l[1] + l[2] * l[2];
        if rho2 <= FRAME_FLOOR * l_norm * l_norm {
            return Err(Error::FrameSingular { l1: l[0], l2: l[1], l3: l[2] });
        }
        let rho = rho2.sqrt();
        Ok(Self {
            e1: Vector3::new(0.0, l[2], -l[1]) / rho,
            e2: Vector3::new(-rho2, l[0] * l[1], l[0] * l[2]) / (l_norm * rho),
            e3: l / l_norm,
            omega: l_norm,
            theta,
        })
    }

    pub fn period(&self) -> f64 {
        TAU / self.omega
    }
}

/// Position and velocity on the unit sphere at time `t`.
pub fn great_circle_state(frame: &GreatCircleFrame, t: f64) -> ParticleState {
    let (s, c) = (frame.omega * t + frame.theta).sin_cos();
    let x = frame.e1 * c + frame.e2 * s;
    let v = (frame.e2 * c - frame.e1 * s) * frame.omega;
    ParticleState::new(x, v)
}

/// Period average of the exact momentum rate over the great circle of `L`.
///
/// Each node is pushed radially onto the surface with its velocity made
/// tangent at speed `|L|`; the average is the uniform trapezoid rule.
pub fn averaged_oracle_rhs(l: &MomentumVector, params: &SurfaceParams, n_samples: usize) -> Result<Vector3<f64>> {
    if n_samples < 64 {
        return Err(Error::InvalidInput(format!("n_samples must be at least 64, got {n_samples}")));
    }
    let frame = GreatCircleFrame::new(l, 0.0)?;
    let dt = frame.period() / n_samples as f64;
    let mut sum = Vector3::zeros();
    for k in 0..n_samples {
        let circle = great_circle_state(&frame, k as f64 * dt);
        let state = state_on_surface(&circle.x, &circle.v, params)?;
        sum += exact_momentum_rhs(&state, params)?;
    }
    Ok(sum / n_samples as f64)
}

/// As [`averaged_oracle_rhs`] but evaluated in cyclically shifted coordinates,
/// where the axis-1 singular cone becomes regular.
pub fn averaged_oracle_rhs_shifted(l: &MomentumVector, params: &SurfaceParams, n_samples: usize) -> Result<Vector3<f64>> {
    let rhs = averaged_oracle_rhs(&cyclic_shift(l), &params.cyclic_shift(), n_samples)?;
    Ok(cyclic_unshift(&rhs))
}

/// Oracle usable for every nonzero `L`: close to the axis-1 cone the shifted
/// coordinates are used.
pub fn averaged_oracle_rhs_any(l: &MomentumVector, params: &SurfaceParams, n_samples: usize) -> Result<Vector3<f64>> {
    let l2 = l.norm_squared();
    if l[1] * l[1] + l[2] * l[2] < ROTATION_THRESHOLD * l2 {
        averaged_oracle_rhs_shifted(l, params, n_samples)
    } else {
        averaged_oracle_rhs(l, params, n_samples)
    }
}

/// Relative mismatch between the oracle and the closed-form averaged field.
///
/// The denominator is `max(|f|, max|eps|·|L|^2)`, so points where the field
/// nearly vanishes are measured against the field's natural scale.
pub fn oracle_relative_error(l: &MomentumVector, params: &SurfaceParams, n_samples: usize) -> Result<f64> {
    let oracle = averaged_oracle_rhs_any(l, params, n_samples)?;
    let closed = averaged_rhs(l, params)?;
    let scale = closed.norm().max(params.max_abs() * l.norm_squared());
    if scale == 0.0 {
        return Ok(oracle.norm());
    }
    Ok((oracle - closed).norm() / scale)
}

/// A time series averaged over consecutive windows, stamped at window centers.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSeries {
    pub window: f64,
    pub times: Vec<f64>,
    pub means: Vec<Vector3<f64>>,
}

/// Means over windows `[t0 + k w, t0 + (k+1) w]` of a sampled signal, integrating
/// exactly through the cubic Hermite interpolant fixed by values and derivatives.
pub fn window_means(
    times: &[f64],
    values: &[Vector3<f64>],
    derivatives: &[Vector3<f64>],
    window: f64,
) -> Result<WindowSeries> {
    if times.len() != values.len() || times.len() != derivatives.len() {
        return Err(Error::InvalidInput("sample arrays differ in length".into()));
    }
    if !(window > 0.0) {
        return Err(Error::InvalidInput(format!("window must be positive, got {window}")));
    }
    let span = match (times.first(), times.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    if span < window {
        return Err(Error::TooShortTrajectory { span, window });
    }
    let t0 = times[0];
    let n_windows = ((span / window) * (1.0 + 1e-12)).floor() as usize;
    let mut sums = vec![Vector3::zeros(); n_windows];
    for k in 0..times.len() - 1 {
        let (ta, tb) = (times[k], times[k + 1]);
        let h = tb - ta;
        if h <= 0.0 {
            continue;
        }
        let first = ((ta - t0) / window).floor().max(0.0) as usize;
        for w in first..n_windows {
            let (lo, hi) = (t0 + w as f64 * window, t0 + (w + 1) as f64 * window);
            if lo >= tb {
                break;
            }
            let a = lo.max(ta);
            let b = hi.min(tb);
            if b <= a {
                continue;
            }
            let integral = |t: f64| {
                hermite_integral(ta, &values[k], &derivatives[k], tb, &values[k + 1], &derivatives[k + 1], (t - ta) / h)
            };
            sums[w] += integral(b) - integral(a);
        }
    }
    Ok(WindowSeries {
        window,
        times: (0..n_windows).map(|w| t0 + (w as f64 + 0.5) * window).collect(),
        means: sums.into_iter().map(|s| s / window).collect(),
    })
}

/// Coil average with a caller-chosen window.
pub fn coil_average_with_window(traj: &Trajectory, window: f64) -> Result<WindowSeries> {
    let times: Vec<f64> = traj.samples.iter().map(|s| s.t).collect();
    let values: Vec<Vector3<f64>> = traj.samples.iter().map(|s| angular_momentum(&s.state)).collect();
    let derivatives = traj
        .samples
        .iter()
        .map(|s| exact_momentum_rhs(&s.state, &traj.params))
        .collect::<Result<Vec<_>>>()?;
    window_means(&times, &values, &derivatives, window)
}

/// Mean of `L` over consecutive windows of one rotation period `2π/|L(0)|`.
pub fn coil_average(traj: &Trajectory) -> Result<WindowSeries> {
    let l0 = angular_momentum(&traj.first().state).norm();
    if !(l0 > 0.0) {
        return Err(Error::ZeroMomentum);
    }
    coil_average_with_window(traj, TAU / l0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    #[serde(skip)]
    pub times: Vec<f64>,
    #[serde(skip)]
    pub exact: Vec<MomentumVector>,
    #[serde(skip)]
    pub reduced: Vec<MomentumVector>,
    pub sup_norm: f64,
    pub rms: f64,
    /// `sup_norm / max|eps|`, zero on the sphere.
    pub eps_ratio: f64,
    /// Diagnostics of the exact integration behind the report.
    #[serde(skip)]
    pub exact_diagnostics: StepDiagnostics,
}

impl DeviationReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,L1_exact,L2_exact,L3_exact,L1_avg,L2_avg,L3_avg")?;
        for ((t, e), r) in self.times.iter().zip(&self.exact).zip(&self.reduced) {
            writeln!(out, "{}", crate::io::csv_row(&[*t, e[0], e[1], e[2], r[0], r[1], r[2]]))?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> std::io::Result<()> {
        serde_json::to_writer(out, self).map_err(std::io::Error::other)
    }
}

/// Integrate the exact orbit, coil-average it and compare with the averaged
/// system started from `L(0)`, on the window centers.
pub fn compare_exact_vs_averaged(
    state0: &ParticleState,
    params: &SurfaceParams,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<DeviationReport> {
    let traj = integrate_geodesic(state0, params, t_end, settings)?;
    let series = coil_average(&traj)?;
    let l0 = angular_momentum(&traj.first().state);
    let reduced_traj = integrate_averaged(&l0, params, t_end, settings)?;
    let reduced = series
        .times
        .iter()
        .map(|&t| {
            reduced_traj
                .interpolate(t)
                .ok_or_else(|| Error::InvalidInput(format!("reduced solution does not cover t = {t}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let deviations: Vec<f64> = series.means.iter().zip(&reduced).map(|(e, r)| (e - r).norm()).collect();
    let sup_norm = deviations.iter().copied().fold(0.0, f64::max);
    let rms = (deviations.iter().map(|d| d * d).sum::<f64>() / deviations.len() as f64).sqrt();
    let eps_max = params.max_abs();
    Ok(DeviationReport {
        times: series.times,
        exact: series.means,
        reduced,
        sup_norm,
        rms,
        eps_ratio: if eps_max > 0.0 { sup_norm / eps_max } else { 0.0 },
        exact_diagnostics: traj.diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const EPS: [f64; 3] = [0.02, 0.03, 0.04];

    #[test]
    fn frame_example() {
        let f = GreatCircleFrame::new(&Vector3::new(0.0, 0.0, 1.0), 0.0).unwrap();
        assert_eq!(f.e1, Vector3::new(0.0, 1.0, 0.0));
        assert_eq!(f.e2, Vector3::new(-1.0, 0.0, 0.0));
        assert_eq!(great_circle_state(&f, 0.0).x, Vector3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn frame_singular_near_axis_one() {
        let l = Vector3::new(1.0, 1e-4, 0.0);
        assert!(matches!(GreatCircleFrame::new(&l, 0.0), Err(Error::FrameSingular { .. })));
        assert!(matches!(GreatCircleFrame::new(&Vector3::zeros(), 0.0), Err(Error::ZeroMomentum)));
        let p = SurfaceParams::from_array(EPS);
        assert!(averaged_oracle_rhs(&l, &p, 256).is_err());
        assert!(averaged_oracle_rhs_any(&l, &p, 256).is_ok());
    }

    #[test]
    fn oracle_vanishes_on_sphere() {
        let l = Vector3::new(0.3, -0.5, 0.8);
        let r = averaged_oracle_rhs(&l, &SurfaceParams::unperturbed(), 1024).unwrap();
        assert!(r.norm() < 1e-14, "{r}");
    }

    #[test]
    fn oracle_central_example() {
        let p = SurfaceParams::from_array(EPS);
        let l = Vector3::new(1.0, 1.0, 1.0) / 3f64.sqrt();
        let oracle = averaged_oracle_rhs(&l, &p, 1024).unwrap();
        let closed = averaged_rhs(&l, &p).unwrap();
        assert!((oracle - closed).norm() / closed.norm() <= 5.0 * 0.04);
    }

    #[test]
    fn oracle_stationary_direction() {
        for eps in [EPS, [-0.03, 0.01, 0.05], [0.001, -0.002, 0.0005]] {
            let p = SurfaceParams::from_array(eps);
            let r = averaged_oracle_rhs(&Vector3::new(0.0, 0.0, 1.0), &p, 1024).unwrap();
            assert!(r.norm() <= 1e-3 * p.max_abs());
        }
    }

    #[test]
    fn oracle_quadrature_converges() {
        let p = SurfaceParams::from_array(EPS);
        let l = Vector3::new(0.4, -0.7, 0.3);
        let a = averaged_oracle_rhs(&l, &p, 1024).unwrap();
        let b = averaged_oracle_rhs(&l, &p, 2048).unwrap();
        assert!((a - b).norm() <= 1e-10);
    }

    #[test]
    fn shifted_oracle_agrees() {
        let p = SurfaceParams::from_array(EPS);
        let l = Vector3::new(0.4, -0.7, 0.3);
        let a = averaged_oracle_rhs(&l, &p, 1024).unwrap();
        let b = averaged_oracle_rhs_shifted(&l, &p, 1024).unwrap();
        assert!((a - b).norm() <= 1e-8);
    }

    #[test]
    fn sinusoid_window_mean() {
        let l0 = 1.3f64;
        let period = TAU / l0;
        let c = Vector3::new(0.2, -0.4, 0.9);
        let a = Vector3::new(0.05, 0.1, -0.02);
        let n = 4000;
        let total = 5.0 * period;
        let times: Vec<f64> = (0..=n).map(|k| total * k as f64 / n as f64).collect();
        let values: Vec<_> = times.iter().map(|&t| c + a * (l0 * t).sin()).collect();
        let derivs: Vec<_> = times.iter().map(|&t| a * (l0 * (l0 * t).cos())).collect();
        let s = window_means(&times, &values, &derivs, period).unwrap();
        assert_eq!(s.means.len(), 5);
        for m in &s.means {
            assert!((m - c).norm() <= 1e-10, "{}", (m - c).norm());
        }
    }

    #[test]
    fn too_short_is_rejected() {
        let times = [0.0, 1.0];
        let v = [Vector3::zeros(); 2];
        assert!(matches!(window_means(&times, &v, &v, 2.0), Err(Error::TooShortTrajectory { .. })));
    }

    #[test]
    fn unperturbed_coil_average_is_constant() {
        let s0 = ParticleState::new(Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 0.6, 0.8));
        let traj = integrate_geodesic(&s0, &SurfaceParams::unperturbed(), 30.0, &IntegratorSettings::default()).unwrap();
        let series = coil_average(&traj).unwrap();
        let l0 = angular_momentum(&s0);
        for m in &series.means {
            assert!((m - l0).norm() <= 1e-8);
        }
    }

    #[test]
    fn window_length_robustness() {
        let p = SurfaceParams::from_array(EPS);
        let s0 = state_on_surface(&Vector3::new(0.6, 0.5, 0.3), &Vector3::new(-0.3, 0.7, -0.4), &p).unwrap();
        let traj = integrate_geodesic(&s0, &p, 60.0, &IntegratorSettings::default()).unwrap();
        let l0 = angular_momentum(&s0).norm();
        let period = TAU / l0;
        let half = coil_average_with_window(&traj, 0.5 * period).unwrap();
        let double = coil_average_with_window(&traj, 2.0 * period).unwrap();
        for (t, m) in double.times.iter().zip(&double.means) {
            let k = half
                .times
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
                .unwrap()
                .0;
            assert!((m - half.means[k]).norm() <= 5.0 * p.max_abs() * l0);
        }
    }

    #[test]
    fn unperturbed_comparison_has_no_deviation() {
        let s0 = ParticleState::new(Vector3::new(0.0, 1.0, 0.0), Vector3::new(0.6, 0.0, 0.8));
        let r = compare_exact_vs_averaged(&s0, &SurfaceParams::unperturbed(), 40.0, &IntegratorSettings::default()).unwrap();
        assert!(r.sup_norm <= 1e-8);
        assert_eq!(r.eps_ratio, 0.0);
        assert_eq!(r.times.len(), r.exact.len());
        assert_eq!(r.times.len(), r.reduced.len());
    }

    #[test]
    fn deviation_report_exports() {
        let p = SurfaceParams::from_array(EPS);
        let s0 = state_on_surface(&Vector3::new(0.6, 0.5, 0.3), &Vector3::new(-0.3, 0.7, -0.4), &p).unwrap();
        let r = compare_exact_vs_averaged(&s0, &p, 20.0, &IntegratorSettings::default()).unwrap();
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t,L1_exact,L2_exact,L3_exact,L1_avg,L2_avg,L3_avg\n"));
        assert_eq!(text.lines().count(), r.times.len() + 1);
        let mut json = Vec::new();
        r.write_json(&mut json).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_relative_eq!(v["sup_norm"].as_f64().unwrap(), r.sup_norm);
        assert!(v.get("rms").is_some() && v.get("eps_ratio").is_some());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn frame_reproduces_momentum(
            l in prop::array::uniform3(-2.0f64..2.0),
            theta in 0.0f64..TAU,
            t in -10.0f64..10.0,
        ) {
            let l = Vector3::from(l);
            prop_assume!(l[1] * l[1] + l[2] * l[2] > 1e-3 * l.norm_squared() && l.norm() > 1e-2);
            let f = GreatCircleFrame::new(&l, theta).unwrap();
            prop_assert!((f.e1.dot(&f.e2)).abs() < 1e-14);
            prop_assert!((f.e1.norm() - 1.0).abs() < 1e-14 && (f.e2.norm() - 1.0).abs() < 1e-14);
            prop_assert!((f.e1.cross(&f.e2) - f.e3).norm() < 1e-14);
            let s = great_circle_state(&f, t);
            prop_assert!((s.x.norm() - 1.0).abs() < 1e-14);
            prop_assert!(s.x.dot(&s.v).abs() < 1e-14 * l.norm());
            prop_assert!((s.x.cross(&s.v) - l).norm() < 1e-14 * l.norm().max(1.0));
        }
    }
}
