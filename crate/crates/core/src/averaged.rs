//! The averaged angular-momentum system: a top-like Hamiltonian flow on the
//! sphere `|L| = const` with a quartic Hamiltonian.

use std::io::Write;

use nalgebra::{SVector, Vector3};

use crate::error::{Error, Result};
use crate::ode::Dopri5;
use crate::surface::{IntegratorSettings, SurfaceParams};

pub type MomentumVector = Vector3<f64>;

fn check_nonzero(l: &MomentumVector) -> Result<f64> {
    let n2 = l.norm_squared();
    if n2 == 0.0 || !n2.is_finite() {
        return Err(Error::ZeroMomentum);
    }
    Ok(n2)
}

/// Averaged precession rate of the angular momentum.
pub fn averaged_rhs(l: &MomentumVector, params: &SurfaceParams) -> Result<Vector3<f64>> {
    let n2 = check_nonzero(l)?;
    let [e1, e2, e3] = params.eps;
    let [l1, l2, l3] = [l[0], l[1], l[2]];
    let (s1, s2, s3) = (l1 * l1, l2 * l2, l3 * l3);
    let c = 0.75 / n2;
    Ok(Vector3::new(
        c * l2 * l3 * ((e3 - e2) * s1 + e3 * s2 - e2 * s3),
        c * l3 * l1 * (-e3 * s1 + (e1 - e3) * s2 + e1 * s3),
        c * l1 * l2 * (e2 * s1 - e1 * s2 + (e2 - e1) * s3),
    ))
}

pub fn hamiltonian(l: &MomentumVector, params: &SurfaceParams) -> Result<f64> {
    let n2 = check_nonzero(l)?;
    let sum: f64 = (0..3)
        .map(|i| params.eps[i] * (l[i] * l[i] / n2 - 1.0).powi(2))
        .sum();
    Ok(3.0 / 16.0 * n2 * sum)
}

/// Analytic gradient of [`hamiltonian`].
pub fn hamiltonian_gradient(l: &MomentumVector, params: &SurfaceParams) -> Result<Vector3<f64>> {
    let n2 = check_nonzero(l)?;
    // H = 3/16 sum_i eps_i S_i^2 / N with S_i = N - L_i^2
    let s = Vector3::from_fn(|i, _| n2 - l[i] * l[i]);
    let quartic: f64 = (0..3).map(|i| params.eps[i] * s[i] * s[i]).sum::<f64>() / n2;
    Ok(Vector3::from_fn(|m, _| {
        let cross: f64 = (0..3)
            .filter(|&i| i != m)
            .map(|i| params.eps[i] * s[i])
            .sum();
        3.0 / 16.0 * (2.0 * l[m] / n2) * (2.0 * cross - quartic)
    }))
}

/// Flow generated by [`hamiltonian`] under `{L_i, L_j} = eps_ijk L_k`, i.e. `grad H × L`.
///
/// Exists as an independent check on [`averaged_rhs`].
pub fn bracket_rhs(l: &MomentumVector, params: &SurfaceParams) -> Result<Vector3<f64>> {
    Ok(hamiltonian_gradient(l, params)?.cross(l))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedSample {
    pub t: f64,
    pub l: MomentumVector,
    /// `dL/dt` at this sample (forward-time field), kept for interpolation.
    pub dl: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct ReducedTrajectory {
    pub params: SurfaceParams,
    pub samples: Vec<ReducedSample>,
    pub max_norm2_drift: f64,
    pub max_energy_drift: f64,
    pub renormalizations: usize,
}

impl ReducedTrajectory {
    pub fn last(&self) -> &ReducedSample {
        self.samples.last().expect("trajectory has samples")
    }

    /// Cubic Hermite interpolation at `t`; samples must bracket `t`.
    pub fn interpolate(&self, t: f64) -> Option<MomentumVector> {
        let s = &self.samples;
        let forward = s.last()?.t >= s[0].t;
        let key = |x: &ReducedSample| if forward { x.t } else { -x.t };
        let tk = if forward { t } else { -t };
        if tk < key(&s[0]) || tk > key(s.last()?) {
            return None;
        }
        let idx = s.partition_point(|x| key(x) < tk).max(1).min(s.len() - 1);
        let (a, b) = (&s[idx - 1], &s[idx]);
        Some(crate::ode::hermite(a.t, &a.l, &a.dl, b.t, &b.l, &b.dl, t))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,L1,L2,L3,H,L2norm")?;
        for s in &self.samples {
            let h = hamiltonian(&s.l, &self.params).unwrap_or(f64::NAN);
            let row = [s.t, s.l[0], s.l[1], s.l[2], h, s.l.norm()];
            writeln!(out, "{}", crate::io::csv_row(&row))?;
        }
        Ok(())
    }
}

/// Adaptive integration of the averaged system; a negative `t_end` integrates backward.
///
/// `|L|` is rescaled to `|L0|` whenever its relative drift exceeds
/// `conservation_tol / 10`. The worst relative drifts of `L^2` and `H` over the
/// stored samples are reported and must stay within `conservation_tol`.
pub fn integrate_averaged(
    l0: &MomentumVector,
    params: &SurfaceParams,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<ReducedTrajectory> {
    let n2_0 = check_nonzero(l0)?;
    if !t_end.is_finite() {
        return Err(Error::InvalidInput("t_end must be finite".into()));
    }
    let radius = n2_0.sqrt();
    let h0 = hamiltonian(l0, params)?;
    let h_scale = if h0 != 0.0 { h0.abs() } else { 1.0 };
    let sign = if t_end < 0.0 { -1.0 } else { 1.0 };
    let p = *params;
    let rhs = move |_t: f64, y: &SVector<f64, 3>| -> Result<SVector<f64, 3>> {
        Ok(averaged_rhs(y, &p)? * sign)
    };

    let mut samples = vec![ReducedSample {
        t: 0.0,
        l: *l0,
        dl: averaged_rhs(l0, params)?,
    }];
    let mut traj = ReducedTrajectory {
        params: *params,
        samples: Vec::new(),
        max_norm2_drift: 0.0,
        max_energy_drift: 0.0,
        renormalizations: 0,
    };
    let tau_end = t_end.abs();
    let mut stepper = Dopri5::new(rhs, 0.0, *l0, settings.step_control())?;
    while stepper.t() < tau_end {
        let step = stepper.step(tau_end)?;
        let mut l = step.y;
        if (l.norm() - radius).abs() / radius > settings.conservation_tol / 10.0 {
            l *= radius / l.norm();
            stepper.reset_state(l)?;
            traj.renormalizations += 1;
        }
        traj.max_norm2_drift = traj
            .max_norm2_drift
            .max((l.norm_squared() - n2_0).abs() / n2_0);
        traj.max_energy_drift = traj
            .max_energy_drift
            .max((hamiltonian(&l, params)? - h0).abs() / h_scale);
        samples.push(ReducedSample {
            t: sign * step.t,
            l,
            dl: averaged_rhs(&l, params)?,
        });
    }
    traj.samples = samples;
    for (quantity, drift) in [
        ("|L|^2", traj.max_norm2_drift),
        ("hamiltonian", traj.max_energy_drift),
    ] {
        if drift > settings.conservation_tol {
            return Err(Error::ConservationDrift {
                quantity,
                drift,
                tol: settings.conservation_tol,
            });
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const EPS: SurfaceParams = SurfaceParams::from_array([0.02, 0.03, 0.04]);

    fn diag() -> MomentumVector {
        Vector3::new(1.0, 1.0, 1.0) / 3f64.sqrt()
    }

    #[test]
    fn rhs_examples() {
        assert_eq!(averaged_rhs(&Vector3::z(), &EPS).unwrap(), Vector3::zeros());
        assert_eq!(
            averaged_rhs(&Vector3::new(0.3, -0.2, 0.9), &SurfaceParams::unperturbed()).unwrap(),
            Vector3::zeros()
        );
        // (3/4)(1/3)[(e3-e2)+e3-e2]/3 etc. at the diagonal
        let r = averaged_rhs(&diag(), &EPS).unwrap();
        assert_abs_diff_eq!(r, Vector3::new(0.02 / 12.0, -0.04 / 12.0, 0.02 / 12.0), epsilon = 1e-15);
        assert_abs_diff_eq!(r, Vector3::new(0.0016667, -0.0033333, 0.0016667), epsilon = 1e-7);
    }

    #[test]
    fn zero_momentum_is_rejected() {
        assert!(matches!(averaged_rhs(&Vector3::zeros(), &EPS), Err(Error::ZeroMomentum)));
        assert!(matches!(hamiltonian(&Vector3::zeros(), &EPS), Err(Error::ZeroMomentum)));
        assert!(matches!(bracket_rhs(&Vector3::zeros(), &EPS), Err(Error::ZeroMomentum)));
    }

    #[test]
    fn hamiltonian_examples() {
        assert_abs_diff_eq!(hamiltonian(&Vector3::z(), &EPS).unwrap(), 0.009375, epsilon = 1e-15);
        assert_eq!(
            hamiltonian(&Vector3::new(0.1, 0.5, -2.0), &SurfaceParams::unperturbed()).unwrap(),
            0.0
        );
        let e = 0.037;
        let h = hamiltonian(&diag(), &SurfaceParams::from_array([e; 3])).unwrap();
        assert_abs_diff_eq!(h, e / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn bracket_examples() {
        assert_abs_diff_eq!(bracket_rhs(&Vector3::z(), &EPS).unwrap(), Vector3::zeros(), epsilon = 1e-18);
        assert_eq!(
            bracket_rhs(&diag(), &SurfaceParams::unperturbed()).unwrap(),
            Vector3::zeros()
        );
    }

    #[test]
    fn fixed_point_stays_put() {
        let traj = integrate_averaged(&Vector3::z(), &EPS, 1e4, &Default::default()).unwrap();
        assert!(traj.samples.iter().all(|s| s.l == Vector3::z()));
    }

    #[test]
    fn long_run_conserves_energy_and_norm() {
        let traj = integrate_averaged(&diag(), &EPS, 1e4, &Default::default()).unwrap();
        assert!(traj.max_energy_drift <= 1e-8, "{}", traj.max_energy_drift);
        assert!(traj.max_norm2_drift <= 1e-10, "{}", traj.max_norm2_drift);
        assert_eq!(traj.last().t, 1e4);
    }

    #[test]
    fn reversed_antipodal_run_mirrors_forward_run() {
        let l0 = Vector3::new(0.3, -0.5, 0.81);
        let fwd = integrate_averaged(&l0, &EPS, 800.0, &Default::default()).unwrap();
        let bwd = integrate_averaged(&-l0, &EPS, -800.0, &Default::default()).unwrap();
        for t in [0.0, 100.0, 333.3, 799.0] {
            let a = fwd.interpolate(t).unwrap();
            let b = bwd.interpolate(-t).unwrap();
            assert!((a + b).norm() <= 1e-8, "t={t}: {}", (a + b).norm());
        }
    }

    fn eps_strategy() -> impl Strategy<Value = [f64; 3]> {
        prop::array::uniform3(-0.1f64..0.1)
    }

    fn momentum_strategy() -> impl Strategy<Value = [f64; 3]> {
        prop::array::uniform3(-2.0f64..2.0).prop_filter("nonzero", |l| {
            Vector3::from(*l).norm() > 1e-3
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn field_is_tangent_to_sphere_and_level_sets(l in momentum_strategy(), e in eps_strategy()) {
            let (l, p) = (Vector3::from(l), SurfaceParams::from_array(e));
            let f = averaged_rhs(&l, &p).unwrap();
            let g = hamiltonian_gradient(&l, &p).unwrap();
            prop_assert!(l.dot(&f).abs() <= 1e-14 * l.norm() * f.norm().max(1e-300) + 1e-300);
            prop_assert!(g.dot(&f).abs() <= 1e-14 * g.norm() * f.norm() + 1e-300);
        }

        #[test]
        fn printed_field_equals_bracket_flow(l in momentum_strategy(), e in eps_strategy()) {
            let (l, p) = (Vector3::from(l), SurfaceParams::from_array(e));
            let a = averaged_rhs(&l, &p).unwrap();
            let b = bracket_rhs(&l, &p).unwrap();
            let scale = l.norm_squared() * p.max_abs();
            prop_assert!((a - b).norm() <= 1e-12 * scale.max(a.norm()));
        }

        #[test]
        fn field_is_even_and_quadratically_homogeneous(
            l in momentum_strategy(), e in eps_strategy(), c in 0.01f64..100.0
        ) {
            let (l, p) = (Vector3::from(l), SurfaceParams::from_array(e));
            let f = averaged_rhs(&l, &p).unwrap();
            prop_assert_eq!(averaged_rhs(&-l, &p).unwrap(), f);
            let fc = averaged_rhs(&(l * c), &p).unwrap();
            prop_assert!((fc - f * (c * c)).norm() <= 1e-13 * (c * c) * f.norm().max(1e-300));
        }

        #[test]
        fn cyclic_relabelling_is_equivariant(l in momentum_strategy(), e in eps_strategy()) {
            use crate::surface::cyclic_shift;
            let (l, p) = (Vector3::from(l), SurfaceParams::from_array(e));
            let f = averaged_rhs(&l, &p).unwrap();
            let g = averaged_rhs(&cyclic_shift(&l), &p.cyclic_shift()).unwrap();
            prop_assert!((g - cyclic_shift(&f)).norm() <= 1e-15 * (1.0 + f.norm()));
        }

        #[test]
        fn gradient_matches_central_differences(l in momentum_strategy(), e in eps_strategy()) {
            let (l, p) = (Vector3::from(l), SurfaceParams::from_array(e));
            let g = hamiltonian_gradient(&l, &p).unwrap();
            let h = 1e-6;
            for i in 0..3 {
                let mut d = Vector3::zeros();
                d[i] = h;
                let fd = (hamiltonian(&(l + d), &p).unwrap() - hamiltonian(&(l - d), &p).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() <= 1e-6);
            }
        }
    }
}
