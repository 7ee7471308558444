//! Algebraic classification of deformation space into the four separatrix
//! graph types, and grid sweeps over slices or directions of `eps`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::stationary::q_quantities;
use crate::surface::SurfaceParams;

pub const DEFAULT_BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TypeClass {
    I,
    II,
    III,
    IV,
    Boundary,
    Degenerate,
}

impl TypeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TypeClass::I => "I",
            TypeClass::II => "II",
            TypeClass::III => "III",
            TypeClass::IV => "IV",
            TypeClass::Boundary => "Boundary",
            TypeClass::Degenerate => "Degenerate",
        }
    }
}

impl fmt::Display for TypeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn classify_epsilon(params: &SurfaceParams) -> TypeClass {
    classify_epsilon_with(params, DEFAULT_BOUNDARY_TOL)
}

/// Classification with an explicit tolerance (relative to `max|eps|` for the
/// coefficients and to `max|eps|^2` for the quadratic quantities).
///
/// Exact zeros of a coefficient are labelled IV or III per the sign of the
/// other two; two or more vanishing coefficients are `Degenerate`.
pub fn classify_epsilon_with(params: &SurfaceParams, tol: f64) -> TypeClass {
    let scale = params.max_abs();
    if scale == 0.0 || !scale.is_finite() {
        return TypeClass::Degenerate;
    }
    let e = params.eps;
    let zeros: Vec<usize> = (0..3).filter(|&i| e[i].abs() <= tol * scale).collect();
    match zeros.as_slice() {
        [] => {}
        [i] => {
            let prod = e[(i + 1) % 3] * e[(i + 2) % 3];
            return if prod < 0.0 { TypeClass::IV } else { TypeClass::III };
        }
        _ => return TypeClass::Degenerate,
    }
    let same_sign = e.iter().all(|&v| v > 0.0) || e.iter().all(|&v| v < 0.0);
    if !same_sign {
        // exactly one pairwise product is positive
        return TypeClass::III;
    }
    let q = q_quantities(params);
    if q.iter().any(|v| v.abs() <= tol * scale * scale) {
        TypeClass::Boundary
    } else if q.iter().all(|&v| v > 0.0) {
        TypeClass::I
    } else {
        TypeClass::II
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepSpec {
    /// Fix `eps[axis - 1]` and sweep the other two coefficients (in index order).
    Slice {
        axis: usize,
        value: f64,
        p1: [f64; 2],
        p2: [f64; 2],
        n1: usize,
        n2: usize,
    },
    /// Directions on the unit `eps`-sphere: `p1` = polar angle, `p2` = azimuth.
    Sphere { n_theta: usize, n_phi: usize },
}

impl SweepSpec {
    pub fn fig7_slice() -> Self {
        SweepSpec::Slice {
            axis: 3,
            value: 0.04,
            p1: [-0.05, 0.05],
            p2: [-0.05, 0.05],
            n1: 101,
            n2: 101,
        }
    }

    pub fn resolution(&self) -> (usize, usize) {
        match *self {
            SweepSpec::Slice { n1, n2, .. } => (n1, n2),
            SweepSpec::Sphere { n_theta, n_phi } => (n_theta, n_phi),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n1, n2) = self.resolution();
        if n1 < 2 || n2 < 2 {
            return Err(Error::InvalidInput("sweep resolution must be >= 2 per axis".into()));
        }
        if let SweepSpec::Slice { axis, value, p1, p2, .. } = *self {
            if !(1..=3).contains(&axis) {
                return Err(Error::InvalidInput(format!("slice axis must be 1, 2 or 3, got {axis}")));
            }
            if ![value, p1[0], p1[1], p2[0], p2[1]].iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput("slice bounds must be finite".into()));
            }
        }
        Ok(())
    }

    /// Node coordinates `(p1, p2)` and the corresponding coefficients.
    pub fn node(&self, i: usize, j: usize) -> (f64, f64, SurfaceParams) {
        let lerp = |r: [f64; 2], k: usize, n: usize| r[0] + (r[1] - r[0]) * k as f64 / (n - 1) as f64;
        match *self {
            SweepSpec::Slice { axis, value, p1, p2, n1, n2 } => {
                let (a, b) = (lerp(p1, i, n1), lerp(p2, j, n2));
                let fixed = axis - 1;
                let free: Vec<usize> = (0..3).filter(|&k| k != fixed).collect();
                let mut eps = [0.0; 3];
                eps[fixed] = value;
                eps[free[0]] = a;
                eps[free[1]] = b;
                (a, b, SurfaceParams::from_array(eps))
            }
            SweepSpec::Sphere { n_theta, n_phi } => {
                let theta = lerp([0.0, std::f64::consts::PI], i, n_theta);
                let phi = lerp([0.0, std::f64::consts::TAU], j, n_phi);
                let eps = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
                (theta, phi, SurfaceParams::from_array(eps))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtlasNode {
    pub i: usize,
    pub j: usize,
    pub p1: f64,
    pub p2: f64,
    pub params: SurfaceParams,
    pub label: TypeClass,
}

/// Adjacent grid nodes with different labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub a: AtlasNode,
    pub b: AtlasNode,
}

#[derive(Debug, Clone)]
pub struct AtlasGrid {
    pub spec: SweepSpec,
    pub n1: usize,
    pub n2: usize,
    /// Row-major in `(i, j)`.
    pub nodes: Vec<AtlasNode>,
}

pub fn sweep(spec: &SweepSpec, exec: Execution) -> Result<AtlasGrid> {
    spec.validate()?;
    let (n1, n2) = spec.resolution();
    let index: Vec<(usize, usize)> = (0..n1).flat_map(|i| (0..n2).map(move |j| (i, j))).collect();
    let nodes = par::map(&index, exec, |&(i, j)| {
        let (p1, p2, params) = spec.node(i, j);
        AtlasNode {
            i,
            j,
            p1,
            p2,
            params,
            label: classify_epsilon(&params),
        }
    });
    Ok(AtlasGrid {
        spec: *spec,
        n1,
        n2,
        nodes,
    })
}

impl AtlasGrid {
    pub fn at(&self, i: usize, j: usize) -> &AtlasNode {
        &self.nodes[i * self.n2 + j]
    }

    pub fn region_counts(&self) -> BTreeMap<TypeClass, usize> {
        let mut counts = BTreeMap::new();
        for n in &self.nodes {
            *counts.entry(n.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn brackets(&self) -> Vec<Bracket> {
        let mut out = Vec::new();
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                let a = *self.at(i, j);
                for (di, dj) in [(1, 0), (0, 1)] {
                    if i + di < self.n1 && j + dj < self.n2 {
                        let b = *self.at(i + di, j + dj);
                        if a.label != b.label {
                            out.push(Bracket { a, b });
                        }
                    }
                }
            }
        }
        out
    }

    /// Brackets between a Type I node and a Type II node.
    pub fn type_one_two_brackets(&self) -> Vec<Bracket> {
        self.brackets()
            .into_iter()
            .filter(|br| {
                matches!(
                    (br.a.label, br.b.label),
                    (TypeClass::I, TypeClass::II) | (TypeClass::II, TypeClass::I)
                )
            })
            .collect()
    }

    /// Sizes of the 4-connected components of nodes carrying `label`, largest first.
    pub fn components(&self, label: TypeClass) -> Vec<usize> {
        let mut seen = vec![false; self.nodes.len()];
        let mut sizes = Vec::new();
        for start in 0..self.nodes.len() {
            if seen[start] || self.nodes[start].label != label {
                continue;
            }
            let mut size = 0;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(k) = stack.pop() {
                size += 1;
                let (i, j) = (k / self.n2, k % self.n2);
                let mut neighbours = Vec::with_capacity(4);
                if i > 0 {
                    neighbours.push(k - self.n2);
                }
                if i + 1 < self.n1 {
                    neighbours.push(k + self.n2);
                }
                if j > 0 {
                    neighbours.push(k - 1);
                }
                if j + 1 < self.n2 {
                    neighbours.push(k + 1);
                }
                for nb in neighbours {
                    if !seen[nb] && self.nodes[nb].label == label {
                        seen[nb] = true;
                        stack.push(nb);
                    }
                }
            }
            sizes.push(size);
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "p1,p2,label")?;
        for n in &self.nodes {
            writeln!(
                out,
                "{},{},{}",
                crate::io::fmt_f64(n.p1),
                crate::io::fmt_f64(n.p2),
                n.label
            )?;
        }
        Ok(())
    }

    pub fn write_summary_json<W: Write>(&self, out: W) -> std::io::Result<()> {
        let counts: BTreeMap<&str, usize> = self
            .region_counts()
            .into_iter()
            .map(|(k, v)| (k.as_str(), v))
            .collect();
        let summary = serde_json::json!({
            "sweep": self.spec,
            "counts": counts,
            "brackets": self.brackets().len(),
            "type_one_two_brackets": self.type_one_two_brackets().len(),
        });
        serde_json::to_writer_pretty(out, &summary).map_err(std::io::Error::other)
    }
}

/// Bisect the segment between two differently labelled parameter sets down to
/// roundoff and return the midpoint of the final bracket.
pub fn refine_bracket(a: &SurfaceParams, b: &SurfaceParams, max_iters: usize) -> SurfaceParams {
    let label_a = classify_epsilon(a);
    let (mut lo, mut hi) = (a.eps, b.eps);
    let mid = |x: [f64; 3], y: [f64; 3]| [0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1]), 0.5 * (x[2] + y[2])];
    for _ in 0..max_iters {
        let m = mid(lo, hi);
        if m == lo || m == hi {
            break;
        }
        if classify_epsilon(&SurfaceParams::from_array(m)) == label_a {
            lo = m;
        } else {
            hi = m;
        }
    }
    SurfaceParams::from_array(mid(lo, hi))
}
