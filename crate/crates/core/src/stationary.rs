//! Stationary solutions of the averaged field on a momentum sphere.
//!
//! Fixed points come in closed form in three families: the coordinate axes
//! (S1), points in a coordinate plane (S2) and fully generic points (S3).
//! Stability is decided from the tangent-plane linearization and
//! cross-checked against the sign conditions on `eps`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use num_complex::Complex64;
use serde::Serialize;

use crate::averaged::{averaged_rhs, hamiltonian, MomentumVector};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::surface::SurfaceParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Family {
    /// `L ∥ e3`
    S1a,
    /// `L ∥ e2`
    S1b,
    /// `L ∥ e1`
    S1c,
    /// `L1 = 0`
    S2a,
    /// `L2 = 0`
    S2b,
    /// `L3 = 0`
    S2c,
    S3,
}

impl Family {
    pub fn axis(index: usize) -> Self {
        [Family::S1c, Family::S1b, Family::S1a][index]
    }

    pub fn plane(zero_index: usize) -> Self {
        [Family::S2a, Family::S2b, Family::S2c][zero_index]
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Stability {
    Center,
    Saddle,
    Degenerate,
}

impl fmt::Display for Stability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationarySettings {
    pub degeneracy_tol: f64,
    pub fp_tol: f64,
    /// Ring radius (relative to the sphere radius) for resolving degenerate points.
    pub resolve_radius: f64,
    pub resolve_samples: usize,
}

impl Default for StationarySettings {
    fn default() -> Self {
        Self {
            degeneracy_tol: 1e-9,
            fp_tol: 1e-10,
            resolve_radius: 1e-2,
            resolve_samples: 720,
        }
    }
}

/// Linearization of the field on the tangent plane at a fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearization {
    pub basis: [Vector3<f64>; 2],
    pub matrix: Matrix2<f64>,
    pub eigenvalues: [Complex64; 2],
}

impl Linearization {
    pub fn classify(&self, degeneracy_tol: f64) -> Stability {
        let det = self.matrix.determinant();
        if det.abs().sqrt() <= degeneracy_tol {
            Stability::Degenerate
        } else if det > 0.0 {
            Stability::Center
        } else {
            Stability::Saddle
        }
    }

    /// Unit 3-D eigenvectors `(unstable, stable)` of a saddle.
    pub fn saddle_directions(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let [l0, l1] = self.eigenvalues;
        if l0.im != 0.0 || l1.im != 0.0 {
            return None;
        }
        let (mu_plus, mu_minus) = (l0.re.max(l1.re), l0.re.min(l1.re));
        if !(mu_plus > 0.0 && mu_minus < 0.0) {
            return None;
        }
        let lift = |v: Vector2<f64>| (self.basis[0] * v[0] + self.basis[1] * v[1]).normalize();
        Some((
            lift(eigenvector(&self.matrix, mu_plus)),
            lift(eigenvector(&self.matrix, mu_minus)),
        ))
    }

    /// Largest real part; the separatrix escape rate for a saddle.
    pub fn growth_rate(&self) -> f64 {
        self.eigenvalues[0].re.max(self.eigenvalues[1].re)
    }
}

fn eigenvector(m: &Matrix2<f64>, lambda: f64) -> Vector2<f64> {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let v1 = Vector2::new(b, lambda - a);
    let v2 = Vector2::new(lambda - d, c);
    if v1.norm() >= v2.norm() {
        v1
    } else {
        v2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub id: usize,
    pub l0: MomentumVector,
    pub family: Family,
    /// Class from the linearization eigenvalues.
    pub stability: Stability,
    /// Class predicted by the `eps` sign conditions.
    pub predicted: Stability,
    /// Effective class: `stability`, or for degenerate points the class
    /// read off the local level structure of the Hamiltonian.
    pub resolved: Stability,
    pub eigenvalues: [Complex64; 2],
    pub energy: f64,
    pub linearization: Linearization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegeneracyNote {
    pub families: Vec<Family>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointInventory {
    pub params: SurfaceParams,
    pub radius: f64,
    pub points: Vec<FixedPoint>,
    pub counts: BTreeMap<(Family, Stability), usize>,
    pub degeneracies: Vec<DegeneracyNote>,
}

/// The three quadratic forms `Q1 = e1e2 - e2e3 + e3e1` and cyclic variants.
pub fn q_quantities(params: &SurfaceParams) -> [f64; 3] {
    let [e1, e2, e3] = params.eps;
    let (p12, p23, p31) = (e1 * e2, e2 * e3, e3 * e1);
    [p12 - p23 + p31, p12 + p23 - p31, -p12 + p23 + p31]
}

/// Products `eps_j eps_k` of the two coefficients other than index `i`.
pub fn complementary_products(params: &SurfaceParams) -> [f64; 3] {
    let [e1, e2, e3] = params.eps;
    [e2 * e3, e3 * e1, e1 * e2]
}

fn sign_class(value: f64, tol: f64, positive: Stability) -> Stability {
    let negative = match positive {
        Stability::Center => Stability::Saddle,
        _ => Stability::Center,
    };
    if value.abs() <= tol {
        Stability::Degenerate
    } else if value > 0.0 {
        positive
    } else {
        negative
    }
}

/// Stability predicted by the sign conditions for a family.
///
/// Axis `i` is a center iff the product of the other two coefficients is
/// positive; an S2 point in the plane `L_i = 0` is a center iff `Q_i < 0`;
/// S3 points are always centers.
pub fn predicted_stability(family: Family, params: &SurfaceParams, tol: f64) -> Stability {
    let prods = complementary_products(params);
    let q = q_quantities(params);
    match family {
        Family::S1c => sign_class(prods[0], tol, Stability::Center),
        Family::S1b => sign_class(prods[1], tol, Stability::Center),
        Family::S1a => sign_class(prods[2], tol, Stability::Center),
        Family::S2a => sign_class(q[0], tol, Stability::Saddle),
        Family::S2b => sign_class(q[1], tol, Stability::Saddle),
        Family::S2c => sign_class(q[2], tol, Stability::Saddle),
        Family::S3 => Stability::Center,
    }
}

/// Analytic Jacobian of [`averaged_rhs`].
pub fn averaged_jacobian(l: &MomentumVector, params: &SurfaceParams) -> Result<Matrix3<f64>> {
    let n2 = l.norm_squared();
    if n2 == 0.0 {
        return Err(Error::ZeroMomentum);
    }
    let e = params.eps;
    let mut jac = Matrix3::zeros();
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        // f_i = 3/4 L_j L_k A_i / N
        let a = (e[k] - e[j]) * l[i] * l[i] + e[k] * l[j] * l[j] - e[j] * l[k] * l[k];
        let mut da = Vector3::zeros();
        da[i] = 2.0 * (e[k] - e[j]) * l[i];
        da[j] = 2.0 * e[k] * l[j];
        da[k] = -2.0 * e[j] * l[k];
        let mut dp = Vector3::zeros();
        dp[j] = l[k];
        dp[k] = l[j];
        let p = l[j] * l[k];
        for m in 0..3 {
            jac[(i, m)] = 0.75 * (dp[m] * a / n2 + p * da[m] / n2 - 2.0 * p * a * l[m] / (n2 * n2));
        }
    }
    Ok(jac)
}

/// Orthonormal basis of the plane orthogonal to `l`.
pub fn tangent_basis(l: &MomentumVector) -> [Vector3<f64>; 2] {
    let n = l.normalize();
    let axis = (0..3)
        .min_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs()))
        .unwrap();
    let mut helper = Vector3::zeros();
    helper[axis] = 1.0;
    let u = helper.cross(&n).normalize();
    let w = n.cross(&u);
    [u, w]
}

fn residual_scale(l: &MomentumVector, params: &SurfaceParams) -> f64 {
    l.norm_squared() * params.max_abs()
}

pub fn linearize(
    l0: &MomentumVector,
    params: &SurfaceParams,
    settings: &StationarySettings,
) -> Result<Linearization> {
    let residual = averaged_rhs(l0, params)?.norm();
    let tol = settings.fp_tol * residual_scale(l0, params);
    if residual > tol {
        return Err(Error::NotAFixedPoint { residual, tol });
    }
    let jac = averaged_jacobian(l0, params)?;
    let basis = tangent_basis(l0);
    let matrix = Matrix2::from_fn(|r, c| basis[r].dot(&(jac * basis[c])));
    let half_tr = 0.5 * matrix.trace();
    let disc = Complex64::new(half_tr * half_tr - matrix.determinant(), 0.0).sqrt();
    let eigenvalues = [half_tr + disc, half_tr - disc];
    Ok(Linearization {
        basis,
        matrix,
        eigenvalues,
    })
}

pub fn classify_stability(
    fp: &FixedPoint,
    params: &SurfaceParams,
    settings: &StationarySettings,
) -> Result<Stability> {
    let eigen = fp.linearization.classify(settings.degeneracy_tol);
    let predicted = predicted_stability(fp.family, params, settings.degeneracy_tol);
    if eigen != Stability::Degenerate && predicted != Stability::Degenerate && eigen != predicted {
        return Err(Error::StabilityInconsistency {
            family: fp.family.to_string(),
            eigen: eigen.to_string(),
            predicted: predicted.to_string(),
        });
    }
    Ok(eigen)
}

/// Point on the sphere of radius `|l0|` reached by moving `rho` along the tangent direction at `angle`.
pub(crate) fn ring_point(l0: &MomentumVector, basis: &[Vector3<f64>; 2], rho: f64, angle: f64) -> MomentumVector {
    let p = l0 + (basis[0] * angle.cos() + basis[1] * angle.sin()) * rho;
    p * (l0.norm() / p.norm())
}

/// Signed `H - H0` on a small ring around a fixed point.
pub(crate) fn ring_profile(
    l0: &MomentumVector,
    params: &SurfaceParams,
    basis: &[Vector3<f64>; 2],
    rho: f64,
    samples: usize,
) -> Result<Vec<(f64, f64)>> {
    let h0 = hamiltonian(l0, params)?;
    (0..samples)
        .map(|k| {
            let angle = std::f64::consts::TAU * k as f64 / samples as f64;
            let p = ring_point(l0, basis, rho, angle);
            Ok((angle, hamiltonian(&p, params)? - h0))
        })
        .collect()
}

/// Count cyclic sign changes of `H - H0`, ignoring values at roundoff level.
pub(crate) fn sign_changes(profile: &[(f64, f64)], floor: f64) -> usize {
    let signs: Vec<f64> = profile
        .iter()
        .filter(|(_, v)| v.abs() > floor)
        .map(|(_, v)| v.signum())
        .collect();
    if signs.is_empty() {
        return usize::MAX;
    }
    (0..signs.len())
        .filter(|&i| signs[i] != signs[(i + 1) % signs.len()])
        .count()
}

fn resolve_degenerate(
    l0: &MomentumVector,
    params: &SurfaceParams,
    settings: &StationarySettings,
) -> Result<Stability> {
    let basis = tangent_basis(l0);
    let rho = settings.resolve_radius * l0.norm();
    let profile = ring_profile(l0, params, &basis, rho, settings.resolve_samples)?;
    let floor = 1e-14 * l0.norm_squared() * params.max_abs();
    Ok(match sign_changes(&profile, floor) {
        0 => Stability::Center,
        4 => Stability::Saddle,
        _ => Stability::Degenerate,
    })
}

fn analyse_point(
    id: usize,
    l0: MomentumVector,
    family: Family,
    params: &SurfaceParams,
    settings: &StationarySettings,
) -> Result<FixedPoint> {
    let linearization = linearize(&l0, params, settings)?;
    let mut fp = FixedPoint {
        id,
        l0,
        family,
        stability: Stability::Degenerate,
        predicted: predicted_stability(family, params, settings.degeneracy_tol),
        resolved: Stability::Degenerate,
        eigenvalues: linearization.eigenvalues,
        energy: hamiltonian(&l0, params)?,
        linearization,
    };
    fp.stability = classify_stability(&fp, params, settings)?;
    fp.resolved = match fp.stability {
        Stability::Degenerate => resolve_degenerate(&l0, params, settings)?,
        s => s,
    };
    Ok(fp)
}

pub fn enumerate_fixed_points(params: &SurfaceParams, radius: f64) -> Result<FixedPointInventory> {
    enumerate_with(params, radius, &StationarySettings::default())
}

pub fn enumerate_with(
    params: &SurfaceParams,
    radius: f64,
    settings: &StationarySettings,
) -> Result<FixedPointInventory> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidInput(format!("radius must be positive, got {radius}")));
    }
    let tol = settings.degeneracy_tol;
    let e = params.eps;
    let mut candidates: Vec<(MomentumVector, Family)> = Vec::new();
    let mut degeneracies = Vec::new();

    for axis in [2, 1, 0] {
        for sign in [1.0, -1.0] {
            let mut l = Vector3::zeros();
            l[axis] = sign * radius;
            candidates.push((l, Family::axis(axis)));
        }
    }
    for (i, &ei) in e.iter().enumerate() {
        if ei.abs() <= tol {
            degeneracies.push(DegeneracyNote {
                families: vec![Family::axis((i + 1) % 3), Family::axis((i + 2) % 3)],
                reason: format!("eps_{} = 0: axis linearizations vanish", i + 1),
            });
        }
    }

    let prods = complementary_products(params);
    for zero in 0..3 {
        let (j, k) = ((zero + 1) % 3, (zero + 2) % 3);
        let family = Family::plane(zero);
        if prods[zero].abs() <= tol {
            if e[j] != 0.0 || e[k] != 0.0 {
                degeneracies.push(DegeneracyNote {
                    families: vec![family],
                    reason: format!(
                        "eps_{}·eps_{} = 0: {family} points merge with the axes",
                        j + 1,
                        k + 1
                    ),
                });
            }
            continue;
        }
        if prods[zero] < 0.0 {
            continue;
        }
        let lj = radius * (e[j] / (e[j] + e[k])).sqrt();
        let lk = radius * (e[k] / (e[j] + e[k])).sqrt();
        for (sj, sk) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            let mut l = Vector3::zeros();
            l[j] = sj * lj;
            l[k] = sk * lk;
            candidates.push((l, family));
        }
    }

    let q = q_quantities(params);
    if q.iter().any(|v| v.abs() <= tol) {
        degeneracies.push(DegeneracyNote {
            families: vec![Family::S3],
            reason: format!("Q = {q:?} has a zero component: S3 points merge with S2"),
        });
    } else if q.iter().all(|&v| v > 0.0) {
        let total: f64 = q.iter().sum();
        let mag = q.map(|v| radius * (v / total).sqrt());
        for s1 in [1.0, -1.0] {
            for s2 in [1.0, -1.0] {
                for s3 in [1.0, -1.0] {
                    candidates.push((Vector3::new(s1 * mag[0], s2 * mag[1], s3 * mag[2]), Family::S3));
                }
            }
        }
    }

    let points = candidates
        .into_iter()
        .enumerate()
        .map(|(id, (l, family))| analyse_point(id, l, family, params, settings))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = BTreeMap::new();
    for p in &points {
        *counts.entry((p.family, p.resolved)).or_insert(0) += 1;
    }
    Ok(FixedPointInventory {
        params: *params,
        radius,
        points,
        counts,
        degeneracies,
    })
}

/// Enumerate fixed points for many parameter sets.
pub fn enumerate_batch(
    params: &[SurfaceParams],
    radius: f64,
    exec: Execution,
) -> Vec<Result<FixedPointInventory>> {
    par::map(params, exec, |p| enumerate_fixed_points(p, radius))
}

#[derive(Serialize)]
struct PointRecord {
    #[serde(rename = "L0")]
    l0: [f64; 3],
    family: Family,
    stability: Stability,
    linear_stability: Stability,
    eigenvalues: [[f64; 2]; 2],
    energy: f64,
}

impl FixedPointInventory {
    pub fn count(&self, stability: Stability) -> usize {
        self.points.iter().filter(|p| p.resolved == stability).count()
    }

    pub fn has_degenerate(&self) -> bool {
        self.points.iter().any(|p| p.stability == Stability::Degenerate)
    }

    /// `#centers - #saddles`; equals 2 on the sphere when every point is non-degenerate.
    pub fn index_sum(&self) -> i64 {
        self.count(Stability::Center) as i64 - self.count(Stability::Saddle) as i64
    }

    pub fn contains(&self, l: &MomentumVector, tol: f64) -> bool {
        self.points.iter().any(|p| (p.l0 - l).norm() <= tol)
    }

    pub fn is_antipodally_closed(&self) -> bool {
        let tol = 1e-12 * self.radius;
        self.points.iter().all(|p| self.contains(&-p.l0, tol))
    }

    pub fn write_json<W: Write>(&self, out: W) -> std::io::Result<()> {
        let records: Vec<PointRecord> = self
            .points
            .iter()
            .map(|p| PointRecord {
                l0: [p.l0[0], p.l0[1], p.l0[2]],
                family: p.family,
                stability: p.resolved,
                linear_stability: p.stability,
                eigenvalues: p.eigenvalues.map(|z| [z.re, z.im]),
                energy: p.energy,
            })
            .collect();
        serde_json::to_writer_pretty(out, &records).map_err(std::io::Error::other)
    }
}
