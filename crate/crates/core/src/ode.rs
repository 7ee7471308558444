//! Dormand–Prince 5(4) embedded Runge–Kutta pair with standard step control.
//!
//! The stepper is deliberately small: it advances one accepted step at a time
//! so callers can project onto constraint manifolds, check events, or record
//! samples between steps.

use nalgebra::SVector;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// difference between 5th and embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

/// One accepted step: the new time, state, and derivative at the new state.
#[derive(Debug, Clone, Copy)]
pub struct Accepted<const N: usize> {
    pub t: f64,
    pub y: SVector<f64, N>,
    pub dy: SVector<f64, N>,
    pub h: f64,
}

pub struct Dopri5<const N: usize, F>
where
    F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    rhs: F,
    control: StepControl,
    t: f64,
    y: SVector<f64, N>,
    dy: SVector<f64, N>,
    h: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl<const N: usize, F> Dopri5<N, F>
where
    F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    pub fn new(mut rhs: F, t0: f64, y0: SVector<f64, N>, control: StepControl) -> Result<Self> {
        let dy = rhs(t0, &y0)?;
        let mut stepper = Self {
            rhs,
            control,
            t: t0,
            y: y0,
            dy,
            h: 0.0,
            accepted: 0,
            rejected: 0,
        };
        stepper.h = stepper.initial_step()?;
        Ok(stepper)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &SVector<f64, N> {
        &self.y
    }

    pub fn dy(&self) -> &SVector<f64, N> {
        &self.dy
    }

    /// Replace the current state (e.g. after a projection) and refresh the stored derivative.
    pub fn reset_state(&mut self, y: SVector<f64, N>) -> Result<()> {
        self.dy = (self.rhs)(self.t, &y)?;
        self.y = y;
        Ok(())
    }

    fn weight(&self, a: &SVector<f64, N>, b: &SVector<f64, N>, i: usize) -> f64 {
        self.control.atol + self.control.rtol * a[i].abs().max(b[i].abs())
    }

    fn scaled_norm(&self, v: &SVector<f64, N>, reference: &SVector<f64, N>) -> f64 {
        let sum: f64 = (0..N)
            .map(|i| {
                let w = self.weight(reference, reference, i);
                (v[i] / w).powi(2)
            })
            .sum();
        (sum / N as f64).sqrt()
    }

    // Hairer–Nørsett–Wanner starting step heuristic.
    fn initial_step(&mut self) -> Result<f64> {
        let d0 = self.scaled_norm(&self.y, &self.y);
        let d1 = self.scaled_norm(&self.dy, &self.y);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(self.control.max_step);
        let y1 = self.y + self.dy * h0;
        let dy1 = (self.rhs)(self.t + h0, &y1)?;
        let d2 = self.scaled_norm(&(dy1 - self.dy), &self.y) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 5.0)
        };
        Ok((100.0 * h0).min(h1).min(self.control.max_step))
    }

    /// Advance by one accepted step without passing `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<Accepted<N>> {
        let mut h = self.h.min(self.control.max_step);
        let mut last_rejected = false;
        loop {
            if self.accepted + self.rejected >= self.control.max_steps {
                return Err(Error::StepBudget {
                    t: self.t,
                    max_steps: self.control.max_steps,
                });
            }
            let remaining = t_limit - self.t;
            let clipped = h >= remaining;
            if clipped {
                h = remaining;
            }
            if h < self.control.min_step && !clipped {
                return Err(Error::StepUnderflow {
                    t: self.t,
                    step: h,
                    min_step: self.control.min_step,
                });
            }

            let (t, y, k1) = (self.t, self.y, self.dy);
            let k2 = (self.rhs)(t + C2 * h, &(y + k1 * (A21 * h)))?;
            let k3 = (self.rhs)(t + C3 * h, &(y + (k1 * A31 + k2 * A32) * h))?;
            let k4 = (self.rhs)(t + C4 * h, &(y + (k1 * A41 + k2 * A42 + k3 * A43) * h))?;
            let k5 = (self.rhs)(
                t + C5 * h,
                &(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h),
            )?;
            let k6 = (self.rhs)(
                t + h,
                &(y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h),
            )?;
            let y_new = y + (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * h;
            let k7 = (self.rhs)(t + h, &y_new)?;
            let err_vec = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * h;

            if !y_new.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { t: t + h });
            }
            let err = {
                let sum: f64 = (0..N)
                    .map(|i| (err_vec[i] / self.weight(&y, &y_new, i)).powi(2))
                    .sum();
                (sum / N as f64).sqrt()
            };

            if err <= 1.0 {
                let fac = if err == 0.0 {
                    FAC_MAX
                } else {
                    (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
                };
                let fac = if last_rejected { fac.min(1.0) } else { fac };
                let t_new = if clipped { t_limit } else { t + h };
                self.t = t_new;
                self.y = y_new;
                self.dy = k7;
                self.accepted += 1;
                // a clipped final step must not shrink the step used afterwards
                if !clipped {
                    self.h = (h * fac).min(self.control.max_step);
                }
                return Ok(Accepted {
                    t: t_new,
                    y: y_new,
                    dy: k7,
                    h,
                });
            }

            self.rejected += 1;
            last_rejected = true;
            h *= (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0);
            if h < self.control.min_step {
                return Err(Error::StepUnderflow {
                    t: self.t,
                    step: h,
                    min_step: self.control.min_step,
                });
            }
        }
    }
}

/// Cubic Hermite interpolant between two samples with known derivatives.
pub fn hermite<const N: usize>(
    t0: f64,
    y0: &SVector<f64, N>,
    dy0: &SVector<f64, N>,
    t1: f64,
    y1: &SVector<f64, N>,
    dy1: &SVector<f64, N>,
    t: f64,
) -> SVector<f64, N> {
    let h = t1 - t0;
    if h == 0.0 {
        return *y0;
    }
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    y0 * h00 + dy0 * (h10 * h) + y1 * h01 + dy1 * (h11 * h)
}

/// Exact integral of the cubic Hermite interpolant over `[t0, t0 + s·(t1 - t0)]`.
pub fn hermite_integral<const N: usize>(
    t0: f64,
    y0: &SVector<f64, N>,
    dy0: &SVector<f64, N>,
    t1: f64,
    y1: &SVector<f64, N>,
    dy1: &SVector<f64, N>,
    s: f64,
) -> SVector<f64, N> {
    let h = t1 - t0;
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    // antiderivatives of the Hermite basis in the unit variable
    let i00 = 0.5 * s4 - s3 + s;
    let i10 = 0.25 * s4 - 2.0 / 3.0 * s3 + 0.5 * s2;
    let i01 = -0.5 * s4 + s3;
    let i11 = 0.25 * s4 - s3 / 3.0;
    (y0 * i00 + dy0 * (i10 * h) + y1 * i01 + dy1 * (i11 * h)) * h
}
