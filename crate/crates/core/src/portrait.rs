//! Separatrix graphs on the momentum sphere.
//!
//! Vertices are the fixed points of the averaged field; edges are the
//! separatrix branches traced from every saddle. The graph is labelled by its
//! center/saddle counts after identifying antipodal points.

use std::fmt;
use std::io::Write;

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::averaged::{averaged_rhs, hamiltonian, MomentumVector};
use crate::error::{Error, Result};
use crate::ode::{hermite, Dopri5, StepControl};
use crate::par::{self, Execution};
use crate::stationary::{
    enumerate_fixed_points, ring_point, ring_profile, tangent_basis, FixedPoint,
    FixedPointInventory, Stability,
};
use crate::surface::SurfaceParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSettings {
    /// Seed distance from the saddle, relative to the sphere radius.
    pub seed_offset: f64,
    /// Capture distance around fixed points, relative to the sphere radius.
    pub capture_radius: f64,
    /// `None` selects `50/max|eps| + 50/mu_min` (`mu_min` the slowest saddle rate).
    pub max_trace_time: Option<f64>,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub resample_points: usize,
    pub allow_degenerate: bool,
    pub allow_partial: bool,
}

impl Default for TraceSettings {
    fn default() -> Self {
        Self {
            seed_offset: 1e-5,
            capture_radius: 1e-3,
            max_trace_time: None,
            rtol: 1e-11,
            atol: 1e-15,
            max_steps: 2_000_000,
            resample_points: 512,
            allow_degenerate: true,
            allow_partial: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    UnstablePlus,
    UnstableMinus,
    StablePlus,
    StableMinus,
}

impl Branch {
    pub fn is_unstable(self) -> bool {
        matches!(self, Branch::UnstablePlus | Branch::UnstableMinus)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separatrix {
    /// Saddle the branch was seeded from.
    pub saddle: usize,
    pub branch: Branch,
    /// Fixed point reached at the far end of the trace, if any.
    pub terminus: Option<usize>,
    /// Samples ordered along increasing flow time, uniform in arclength.
    pub polyline: Vec<MomentumVector>,
    pub trace_time: f64,
    pub timed_out: bool,
    /// `max |H - H(saddle)|` along the polyline.
    pub h_deviation: f64,
}

impl Separatrix {
    /// Upstream end in flow time.
    pub fn source(&self) -> Option<usize> {
        if self.branch.is_unstable() {
            Some(self.saddle)
        } else {
            self.terminus
        }
    }

    /// Downstream end in flow time.
    pub fn sink(&self) -> Option<usize> {
        if self.branch.is_unstable() {
            self.terminus
        } else {
            Some(self.saddle)
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "L1,L2,L3")?;
        for p in &self.polyline {
            writeln!(out, "{}", crate::io::csv_row(&[p[0], p[1], p[2]]))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum GraphType {
    I,
    II,
    III,
    IV,
    Unclassified,
}

impl fmt::Display for GraphType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphType::Unclassified => f.write_str("Unclassified"),
            t => write!(f, "Type {t:?}"),
        }
    }
}

impl GraphType {
    pub fn matches(self, class: crate::atlas::TypeClass) -> bool {
        use crate::atlas::TypeClass as T;
        matches!(
            (self, class),
            (GraphType::I, T::I) | (GraphType::II, T::II) | (GraphType::III, T::III) | (GraphType::IV, T::IV)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct GraphCounts {
    pub centers: usize,
    pub saddles: usize,
    pub unresolved: usize,
    pub identified_centers: usize,
    pub identified_saddles: usize,
}

#[derive(Debug, Clone)]
pub struct PhaseGraph {
    pub vertices: FixedPointInventory,
    pub edges: Vec<Separatrix>,
    pub counts: GraphCounts,
    pub type_label: GraphType,
}

struct Seed {
    saddle: usize,
    branch: Branch,
    start: MomentumVector,
}

fn default_trace_time(inventory: &FixedPointInventory) -> f64 {
    let eps_max = inventory.params.max_abs();
    let mu_min = inventory
        .points
        .iter()
        .filter(|p| p.stability == Stability::Saddle)
        .map(|p| p.linearization.growth_rate())
        .fold(f64::INFINITY, f64::min);
    let base = 50.0 / eps_max;
    if mu_min.is_finite() && mu_min > 0.0 {
        base + 50.0 / mu_min
    } else {
        10.0 * base
    }
}

fn seeds_for(fp: &FixedPoint, params: &SurfaceParams, radius: f64, settings: &TraceSettings) -> Result<Vec<Seed>> {
    let delta = settings.seed_offset * radius;
    let on_sphere = |p: MomentumVector| p * (radius / p.norm());
    let (unstable, stable) = match fp.stability {
        Stability::Saddle => fp.linearization.saddle_directions().ok_or_else(|| Error::SeedFailure {
            id: fp.id,
            reason: "saddle eigenvectors are not real".into(),
        })?,
        _ => level_set_directions(fp, params, radius)?,
    };
    Ok(vec![
        Seed { saddle: fp.id, branch: Branch::UnstablePlus, start: on_sphere(fp.l0 + unstable * delta) },
        Seed { saddle: fp.id, branch: Branch::UnstableMinus, start: on_sphere(fp.l0 - unstable * delta) },
        Seed { saddle: fp.id, branch: Branch::StablePlus, start: on_sphere(fp.l0 + stable * delta) },
        Seed { saddle: fp.id, branch: Branch::StableMinus, start: on_sphere(fp.l0 - stable * delta) },
    ])
}

// For a saddle with vanishing linearization: the zero crossings of H - H0 on a
// small ring give the separatrix directions. They must come as two outgoing and
// two incoming directions that pair up antipodally on the ring.
fn level_set_directions(fp: &FixedPoint, params: &SurfaceParams, radius: f64) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let fail = |reason: &str| Error::SeedFailure { id: fp.id, reason: reason.into() };
    let basis = tangent_basis(&fp.l0);
    let rho = 1e-2 * radius;
    let h0 = hamiltonian(&fp.l0, params)?;
    let profile = ring_profile(&fp.l0, params, &basis, rho, 720)?;
    let mut crossings = Vec::new();
    for k in 0..profile.len() {
        let (a0, v0) = profile[k];
        let (mut a1, v1) = profile[(k + 1) % profile.len()];
        if k + 1 == profile.len() {
            a1 += std::f64::consts::TAU;
        }
        if v0.signum() == v1.signum() {
            continue;
        }
        let (mut lo, mut hi) = (a0, a1);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let v = hamiltonian(&ring_point(&fp.l0, &basis, rho, mid), params)? - h0;
            if v.signum() == v0.signum() {
                lo = mid
            } else {
                hi = mid
            }
        }
        crossings.push(0.5 * (lo + hi));
    }
    if crossings.len() != 4 {
        return Err(fail("level set through the point does not form four branches"));
    }
    let mut outgoing = Vec::new();
    let mut incoming = Vec::new();
    for a in crossings {
        let dir = basis[0] * a.cos() + basis[1] * a.sin();
        let flow = averaged_rhs(&ring_point(&fp.l0, &basis, rho, a), params)?;
        if flow.dot(&dir) > 0.0 {
            outgoing.push(dir);
        } else {
            incoming.push(dir);
        }
    }
    if outgoing.len() != 2 || incoming.len() != 2 {
        return Err(fail("branches are not split into two outgoing and two incoming"));
    }
    Ok((outgoing[0], incoming[0]))
}

struct RawSample {
    tau: f64,
    l: MomentumVector,
    dl: Vector3<f64>,
}

fn trace_branch(
    seed: &Seed,
    inventory: &FixedPointInventory,
    settings: &TraceSettings,
    max_time: f64,
) -> Result<Separatrix> {
    let params = inventory.params;
    let radius = inventory.radius;
    let capture = settings.capture_radius * radius;
    let sign = if seed.branch.is_unstable() { 1.0 } else { -1.0 };
    let rhs = move |_t: f64, y: &SVector<f64, 3>| -> Result<SVector<f64, 3>> { Ok(averaged_rhs(y, &params)? * sign) };
    let control = StepControl {
        rtol: settings.rtol,
        atol: settings.atol * radius,
        max_step: f64::INFINITY,
        min_step: 1e-12,
        max_steps: settings.max_steps,
    };
    let source = inventory.points[seed.saddle].l0;
    let mut stepper = Dopri5::new(rhs, 0.0, seed.start, control)?;
    let mut raw = vec![RawSample { tau: 0.0, l: seed.start, dl: *stepper.dy() }];
    let mut left_source = false;
    let mut terminus = None;

    let captured = |l: &MomentumVector, left_source: bool| -> Option<usize> {
        inventory
            .points
            .iter()
            .find(|p| (p.id != seed.saddle || left_source) && (p.l0 - l).norm() < capture)
            .map(|p| p.id)
    };

    while stepper.t() < max_time {
        let step = stepper.step(max_time)?;
        let l = step.y * (radius / step.y.norm());
        stepper.reset_state(l)?;
        let prev = raw.last().unwrap();
        let mid = hermite(prev.tau, &prev.l, &prev.dl, step.t, &l, stepper.dy(), 0.5 * (prev.tau + step.t));
        raw.push(RawSample { tau: step.t, l, dl: *stepper.dy() });
        if !left_source && (l - source).norm() > 10.0 * capture {
            left_source = true;
        }
        if let Some(id) = captured(&mid, left_source).or_else(|| captured(&l, left_source)) {
            terminus = Some(id);
            break;
        }
    }

    let mut polyline = resample(&raw, settings.resample_points, radius);
    if !seed.branch.is_unstable() {
        polyline.reverse();
    }
    let h_ref = hamiltonian(&source, &params)?;
    let h_deviation = polyline
        .iter()
        .map(|p| hamiltonian(p, &params).map(|h| (h - h_ref).abs()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(Separatrix {
        saddle: seed.saddle,
        branch: seed.branch,
        terminus,
        polyline,
        trace_time: stepper.t(),
        timed_out: terminus.is_none(),
        h_deviation,
    })
}

// Uniform-arclength resampling through the Hermite interpolant of the raw steps.
fn resample(raw: &[RawSample], n: usize, radius: f64) -> Vec<MomentumVector> {
    if raw.len() < 2 || n < 2 {
        return raw.iter().map(|s| s.l).collect();
    }
    let mut cumulative = vec![0.0];
    for w in raw.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + (w[1].l - w[0].l).norm());
    }
    let total = *cumulative.last().unwrap();
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let s = total * k as f64 / (n - 1) as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < s {
            seg += 1;
        }
        let (a, b) = (&raw[seg], &raw[seg + 1]);
        let span = cumulative[seg + 1] - cumulative[seg];
        let frac = if span > 0.0 { ((s - cumulative[seg]) / span).clamp(0.0, 1.0) } else { 0.0 };
        let tau = a.tau + frac * (b.tau - a.tau);
        let p = hermite(a.tau, &a.l, &a.dl, b.tau, &b.l, &b.dl, tau);
        out.push(p * (radius / p.norm()));
    }
    out
}

pub fn trace_separatrices(
    inventory: &FixedPointInventory,
    settings: &TraceSettings,
    exec: Execution,
) -> Result<Vec<Separatrix>> {
    if inventory.has_degenerate() && !settings.allow_degenerate {
        return Err(Error::DegenerateInventory);
    }
    let mut seeds = Vec::new();
    for fp in inventory.points.iter().filter(|p| p.resolved == Stability::Saddle) {
        seeds.extend(seeds_for(fp, &inventory.params, inventory.radius, settings)?);
    }
    let max_time = settings.max_trace_time.unwrap_or_else(|| default_trace_time(inventory));
    par::map(&seeds, exec, |s| trace_branch(s, inventory, settings, max_time))
        .into_iter()
        .collect()
}

/// Canonical antipodal representative: first non-negligible coordinate positive.
pub fn canonical_representative(l: &MomentumVector, tol: f64) -> MomentumVector {
    for i in 0..3 {
        if l[i].abs() > tol {
            return if l[i] > 0.0 { *l } else { -l };
        }
    }
    *l
}

fn identified_count(inventory: &FixedPointInventory, stability: Stability) -> usize {
    let tol = 1e-9 * inventory.radius;
    let mut reps: Vec<MomentumVector> = Vec::new();
    for p in inventory.points.iter().filter(|p| p.resolved == stability) {
        let r = canonical_representative(&p.l0, tol);
        if !reps.iter().any(|q| (q - r).norm() <= tol) {
            reps.push(r);
        }
    }
    reps.len()
}

pub fn build_graph(inventory: FixedPointInventory, edges: Vec<Separatrix>, allow_partial: bool) -> Result<PhaseGraph> {
    let dangling = edges.iter().filter(|e| e.terminus.is_none()).count();
    if dangling > 0 && !allow_partial {
        return Err(Error::DanglingEdge { count: dangling });
    }
    let counts = GraphCounts {
        centers: inventory.count(Stability::Center),
        saddles: inventory.count(Stability::Saddle),
        unresolved: inventory.count(Stability::Degenerate),
        identified_centers: identified_count(&inventory, Stability::Center),
        identified_saddles: identified_count(&inventory, Stability::Saddle),
    };
    let mut graph = PhaseGraph {
        vertices: inventory,
        edges,
        counts,
        type_label: GraphType::Unclassified,
    };
    graph.type_label = classify_graph(&graph);
    Ok(graph)
}

pub fn classify_counts(identified_centers: usize, identified_saddles: usize) -> GraphType {
    match (identified_centers, identified_saddles) {
        (7, 6) => GraphType::I,
        (5, 4) => GraphType::II,
        (3, 2) => GraphType::III,
        (2, 1) => GraphType::IV,
        _ => GraphType::Unclassified,
    }
}

pub fn classify_graph(graph: &PhaseGraph) -> GraphType {
    if graph.counts.unresolved > 0 {
        return GraphType::Unclassified;
    }
    classify_counts(graph.counts.identified_centers, graph.counts.identified_saddles)
}

/// Enumerate, trace and classify in one call.
pub fn phase_portrait(params: &SurfaceParams, radius: f64, settings: &TraceSettings, exec: Execution) -> Result<PhaseGraph> {
    let inventory = enumerate_fixed_points(params, radius)?;
    let edges = trace_separatrices(&inventory, settings, exec)?;
    build_graph(inventory, edges, settings.allow_partial)
}

fn point_segment_distance(p: &MomentumVector, a: &MomentumVector, b: &MomentumVector) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (a + ab * t - p).norm()
}

fn distance_to_polyline(p: &MomentumVector, line: &[MomentumVector]) -> f64 {
    line.windows(2)
        .map(|w| point_segment_distance(p, &w[0], &w[1]))
        .fold(f64::INFINITY, f64::min)
}

impl PhaseGraph {
    pub fn antipode(&self, id: usize) -> Option<usize> {
        let l = self.vertices.points[id].l0;
        let tol = 1e-9 * self.vertices.radius;
        self.vertices.points.iter().find(|p| (p.l0 + l).norm() <= tol).map(|p| p.id)
    }

    /// Worst distance between an edge mapped by `L -> -L` with reversed
    /// orientation and its partner edge, over points away from fixed points.
    pub fn symmetry_defect(&self) -> f64 {
        let guard = 2.0 * 1e-3 * self.vertices.radius;
        let near_vertex = |p: &MomentumVector| self.vertices.points.iter().any(|v| (v.l0 - p).norm() < guard);
        let mut worst: f64 = 0.0;
        for e in &self.edges {
            let mapped_source = e.sink().and_then(|s| self.antipode(s));
            let mapped_sink = e.source().and_then(|s| self.antipode(s));
            let mapped: Vec<MomentumVector> = e.polyline.iter().rev().map(|p| -p).collect();
            let partner = self
                .edges
                .iter()
                .filter(|f| f.source() == mapped_source && f.sink() == mapped_sink)
                .map(|f| {
                    mapped
                        .iter()
                        .filter(|p| !near_vertex(p))
                        .map(|p| distance_to_polyline(p, &f.polyline))
                        .fold(0.0, f64::max)
                })
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(partner);
        }
        worst
    }

    /// Number of branches seeded at each saddle.
    pub fn saddle_degrees(&self) -> Vec<(usize, usize)> {
        self.vertices
            .points
            .iter()
            .filter(|p| p.resolved == Stability::Saddle)
            .map(|p| (p.id, self.edges.iter().filter(|e| e.saddle == p.id).count()))
            .collect()
    }

    /// `max H - min H` on the sphere, attained at fixed points.
    pub fn energy_range(&self) -> f64 {
        let (lo, hi) = self
            .vertices
            .points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.energy), hi.max(p.energy)));
        hi - lo
    }

    /// One-line summary, e.g. `Type I (7 centers, 6 saddles after identification)`.
    pub fn summary(&self) -> String {
        format!(
            "{} ({} centers, {} saddles after identification)",
            self.type_label, self.counts.identified_centers, self.counts.identified_saddles
        )
    }

    pub fn write_json<W: Write>(&self, out: W) -> std::io::Result<()> {
        let vertices: Vec<serde_json::Value> = self
            .vertices
            .points
            .iter()
            .map(|p| {
                serde_json::json!({
                    "id": p.id,
                    "L0": [p.l0[0], p.l0[1], p.l0[2]],
                    "family": p.family,
                    "stability": p.resolved,
                })
            })
            .collect();
        let edges: Vec<serde_json::Value> = self
            .edges
            .iter()
            .map(|e| {
                serde_json::json!({
                    "source": e.source(),
                    "sink": e.sink(),
                    "saddle": e.saddle,
                    "branch": e.branch,
                    "polyline": e.polyline.iter().map(|p| [p[0], p[1], p[2]]).collect::<Vec<_>>(),
                })
            })
            .collect();
        let doc = serde_json::json!({
            "vertices": vertices,
            "edges": edges,
            "type": self.type_label.to_string(),
            "counts": self.counts,
        });
        serde_json::to_writer(out, &doc).map_err(std::io::Error::other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_table() {
        assert_eq!(classify_counts(7, 6), GraphType::I);
        assert_eq!(classify_counts(5, 4), GraphType::II);
        assert_eq!(classify_counts(3, 2), GraphType::III);
        assert_eq!(classify_counts(2, 1), GraphType::IV);
        assert_eq!(classify_counts(4, 4), GraphType::Unclassified);
    }

    #[test]
    fn representative_convention() {
        let l = Vector3::new(0.0, -0.6, 0.8);
        assert_eq!(canonical_representative(&l, 1e-12), Vector3::new(0.0, 0.6, -0.8));
        assert_eq!(canonical_representative(&-l, 1e-12), Vector3::new(0.0, 0.6, -0.8));
    }

    #[test]
    fn type_iv_portrait() {
        let p = SurfaceParams::from_array([-0.01, 0.0, 0.01]);
        let g = phase_portrait(&p, 1.0, &TraceSettings::default(), Execution::Parallel).unwrap();
        assert_eq!(g.type_label, GraphType::IV);
        assert_eq!((g.counts.identified_centers, g.counts.identified_saddles), (2, 1));
        assert_eq!(g.edges.len(), 8);
        for e in &g.edges {
            assert!(!e.timed_out);
            let end = g.vertices.points[e.terminus.unwrap()].resolved;
            assert_eq!(end, Stability::Saddle);
        }
        assert!(g.symmetry_defect() <= 1e-4, "{}", g.symmetry_defect());
    }

    #[test]
    fn strict_mode_rejects_degenerate_inventory() {
        let p = SurfaceParams::from_array([-0.01, 0.0, 0.01]);
        let inv = enumerate_fixed_points(&p, 1.0).unwrap();
        let settings = TraceSettings { allow_degenerate: false, ..Default::default() };
        assert!(matches!(
            trace_separatrices(&inv, &settings, Execution::Sequential),
            Err(Error::DegenerateInventory)
        ));
    }

    #[test]
    fn timeouts_are_flagged_and_dangling_edges_rejected() {
        let p = SurfaceParams::from_array([-0.02, 0.03, 0.04]);
        let inv = enumerate_fixed_points(&p, 1.0).unwrap();
        let settings = TraceSettings { max_trace_time: Some(10.0), ..Default::default() };
        let edges = trace_separatrices(&inv, &settings, Execution::Sequential).unwrap();
        assert!(edges.iter().all(|e| e.timed_out && e.terminus.is_none()));
        assert!(matches!(build_graph(inv.clone(), edges.clone(), false), Err(Error::DanglingEdge { .. })));
        let g = build_graph(inv, edges, true).unwrap();
        assert_eq!(g.type_label, GraphType::III);
    }

    #[test]
    fn branches_leave_along_unstable_and_arrive_along_stable_directions() {
        let p = SurfaceParams::from_array([-0.02, 0.03, 0.04]);
        let g = phase_portrait(&p, 1.0, &TraceSettings::default(), Execution::Parallel).unwrap();
        for e in &g.edges {
            let saddle = g.vertices.points[e.saddle].l0;
            let (near, next) = if e.branch.is_unstable() {
                (e.polyline[0], e.polyline[1])
            } else {
                let n = e.polyline.len();
                (e.polyline[n - 1], e.polyline[n - 2])
            };
            let flow = averaged_rhs(&near, &p).unwrap();
            let outward = (near - saddle).normalize();
            if e.branch.is_unstable() {
                assert!(flow.dot(&outward) > 0.0);
                assert!((next - saddle).norm() > (near - saddle).norm());
            } else {
                assert!(flow.dot(&outward) < 0.0);
            }
        }
    }
}
