//! Configuration, dispatch and file emission for the command-line tool.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atlas::{classify_epsilon, sweep, SweepSpec, TypeClass};
use crate::averaged::integrate_averaged;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::par::Execution;
use crate::portrait::{phase_portrait, TraceSettings};
use crate::stationary::{enumerate_fixed_points, Stability};
use crate::surface::{
    angular_momentum, integrate_geodesic, state_on_surface, IntegratorSettings, ParticleState, SurfaceParams,
};
use crate::validation::compare_exact_vs_averaged;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Geodesic,
    Averaged,
    FixedPoints,
    Portrait,
    Atlas,
    Validate,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Geodesic => "geodesic",
            Command::Averaged => "averaged",
            Command::FixedPoints => "fixed-points",
            Command::Portrait => "portrait",
            Command::Atlas => "atlas",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
}

fn default_radius() -> f64 {
    1.0
}
fn default_samples() -> usize {
    1024
}
fn default_ceiling() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub eps: Option<[f64; 3]>,
    /// Initial position direction; pushed radially onto the surface.
    #[serde(default)]
    pub x0: Option<[f64; 3]>,
    /// Initial velocity; its normal component is removed, the speed is kept.
    #[serde(default)]
    pub v0: Option<[f64; 3]>,
    #[serde(default, rename = "L0")]
    pub l0: Option<[f64; 3]>,
    #[serde(default)]
    pub t_end: Option<f64>,
    /// Momentum-sphere radius for fixed points and portraits.
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub integrator: IntegratorSettings,
    #[serde(default)]
    pub trace: TraceSettings,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub out_dir: Option<String>,
    /// Seeds random initial conditions when none are given.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ceiling")]
    pub eps_ceiling: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config deserializes")
    }
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config { key: key.into(), reason: reason.into() }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_err(key, format!("must be positive and finite, got {v}")))
    }
}

fn finite3(key: &str, v: &Option<[f64; 3]>) -> Result<()> {
    match v {
        Some(a) if a.iter().any(|x| !x.is_finite()) => Err(config_err(key, "entries must be finite")),
        _ => Ok(()),
    }
}

impl RunConfig {
    /// Check every field against its bounds.
    pub fn validate(&self) -> Result<()> {
        positive("eps_ceiling", self.eps_ceiling)?;
        if let Some(eps) = self.eps {
            SurfaceParams::with_ceiling(eps, self.eps_ceiling).map_err(|e| config_err("eps", e.to_string()))?;
        }
        finite3("x0", &self.x0)?;
        finite3("v0", &self.v0)?;
        finite3("L0", &self.l0)?;
        if let Some(l) = self.l0 {
            if l.iter().all(|&x| x == 0.0) {
                return Err(config_err("L0", "must be nonzero"));
            }
        }
        if let Some(x) = self.x0 {
            if x.iter().all(|&c| c == 0.0) {
                return Err(config_err("x0", "must be nonzero"));
            }
        }
        if let Some(t) = self.t_end {
            positive("t_end", t)?;
        }
        positive("radius", self.radius)?;
        if self.n_samples < 64 {
            return Err(config_err("n_samples", "must be at least 64"));
        }
        let i = &self.integrator;
        positive("integrator.rtol", i.rtol)?;
        positive("integrator.atol", i.atol)?;
        positive("integrator.min_step", i.min_step)?;
        if let Some(h) = i.max_step {
            positive("integrator.max_step", h)?;
        }
        positive("integrator.surface_tol", i.surface_tol)?;
        positive("integrator.tangency_tol", i.tangency_tol)?;
        positive("integrator.energy_tol", i.energy_tol)?;
        positive("integrator.conservation_tol", i.conservation_tol)?;
        positive("integrator.capture_radius", i.capture_radius)?;
        positive("integrator.newton_tol", i.newton_tol)?;
        let t = &self.trace;
        for (key, v) in [("trace.seed_offset", t.seed_offset), ("trace.capture_radius", t.capture_radius)] {
            positive(key, v)?;
            if v >= 0.1 {
                return Err(config_err(key, "must be below 0.1"));
            }
        }
        if t.seed_offset >= t.capture_radius {
            return Err(config_err("trace.seed_offset", "must be smaller than trace.capture_radius"));
        }
        if let Some(m) = t.max_trace_time {
            positive("trace.max_trace_time", m)?;
        }
        positive("trace.rtol", t.rtol)?;
        positive("trace.atol", t.atol)?;
        if t.resample_points < 2 {
            return Err(config_err("trace.resample_points", "must be at least 2"));
        }
        if let Some(s) = &self.sweep {
            s.validate().map_err(|e| config_err("sweep", e.to_string()))?;
        }
        Ok(())
    }

    fn params(&self) -> Result<SurfaceParams> {
        let eps = self.eps.ok_or_else(|| config_err("eps", "required for this command"))?;
        SurfaceParams::with_ceiling(eps, self.eps_ceiling).map_err(|e| config_err("eps", e.to_string()))
    }

    fn t_end(&self) -> Result<f64> {
        self.t_end.ok_or_else(|| config_err("t_end", "required for this command"))
    }

    /// `x0`/`v0` from the config, random ones from `seed` otherwise.
    fn initial_state(&self, params: &SurfaceParams) -> Result<ParticleState> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let x = match self.x0 {
            Some(x) => Vector3::from(x),
            None => random_unit(&mut rng),
        };
        let v = match self.v0 {
            Some(v) => Vector3::from(v),
            None => {
                let d = x.normalize();
                let r = random_unit(&mut rng);
                let t = r - d * r.dot(&d);
                t.normalize()
            }
        };
        state_on_surface(&x, &v, params).map_err(|e| config_err("v0", e.to_string()))
    }

    fn initial_momentum(&self) -> Vector3<f64> {
        match self.l0 {
            Some(l) => Vector3::from(l),
            None => random_unit(&mut ChaCha8Rng::seed_from_u64(self.seed)),
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON, without `out_dir`.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out_dir = None;
        let bytes = serde_json::to_vec(&canon).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        let mut hex = String::with_capacity(16);
        for b in &digest[..8] {
            write!(hex, "{b:02x}").unwrap();
        }
        hex
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Parse and validate a JSON configuration; missing fields take their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        match msg.split('`').nth(1).filter(|_| msg.starts_with("unknown field")) {
            Some(key) => config_err(key, msg.clone()),
            None => Error::ConfigParse(e),
        }
    })?;
    config.validate()?;
    Ok(config)
}

/// Canned configurations for the published parameter sets.
pub fn reproduce_config(figure: Figure) -> RunConfig {
    let eps = match figure {
        Figure::Fig3 | Figure::Fig7 | Figure::Fig8 => [0.02, 0.03, 0.04],
        Figure::Fig4 => [0.01, 0.03, 0.04],
        Figure::Fig5 => [-0.02, 0.03, 0.04],
        Figure::Fig6 => [-0.01, 0.0, 0.01],
    };
    let command = match figure {
        Figure::Fig7 => Command::Atlas,
        Figure::Fig8 => Command::Validate,
        _ => Command::Portrait,
    };
    RunConfig {
        command: Some(command),
        eps: Some(eps),
        x0: Some([0.6, 0.5, 0.3]),
        v0: Some([-0.3, 0.7, -0.4]),
        l0: Some([0.3, 0.5, 0.8]),
        t_end: Some(4.0 / 0.04),
        sweep: Some(SweepSpec::fig7_slice()),
        ..RunConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub summary: String,
    pub files: Vec<PathBuf>,
}

fn emit(dir: &Path, stem: &str, csv: Vec<u8>, json: Vec<u8>) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_atomic(&csv_path, &csv)?;
    write_atomic(&json_path, &json)?;
    Ok(vec![csv_path, json_path])
}

fn to_json(value: &serde_json::Value) -> Vec<u8> {
    serde_json::to_vec_pretty(value).expect("json serializes")
}

/// Run `command` with `config`, writing `<command>_<hash>.{csv,json}` into `out_dir`.
pub fn run(command: Command, config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let mut config = config.clone();
    if let Some(c) = config.command {
        if c != command {
            return Err(config_err("command", format!("config is for `{}`", c.as_str())));
        }
    }
    config.command = Some(command);
    config.validate()?;
    let stem = format!("{}_{}", command.as_str(), config.hash());
    let exec = Execution::default();
    let mut csv = Vec::new();
    let mut json = Vec::new();

    let summary = match command {
        Command::Geodesic => {
            let params = config.params()?;
            let state0 = config.initial_state(&params)?;
            let traj = integrate_geodesic(&state0, &params, config.t_end()?, &config.integrator)?;
            traj.write_csv(&mut csv)?;
            let d = traj.diagnostics;
            json = to_json(&serde_json::json!({
                "samples": traj.samples.len(),
                "accepted": d.accepted,
                "rejected": d.rejected,
                "projections": d.projections,
                "max_constraint_violation": d.max_constraint_violation,
                "max_energy_drift": d.max_energy_drift,
            }));
            format!(
                "geodesic: {} steps, max |phi| {:.2e}, energy drift {:.2e}",
                d.accepted, d.max_constraint_violation, d.max_energy_drift
            )
        }
        Command::Averaged => {
            let params = config.params()?;
            let l0 = config.initial_momentum();
            let traj = integrate_averaged(&l0, &params, config.t_end()?, &config.integrator)?;
            traj.write_csv(&mut csv)?;
            json = to_json(&serde_json::json!({
                "samples": traj.samples.len(),
                "max_norm2_drift": traj.max_norm2_drift,
                "max_energy_drift": traj.max_energy_drift,
                "renormalizations": traj.renormalizations,
            }));
            format!(
                "averaged: {} samples, H drift {:.2e}, L^2 drift {:.2e}",
                traj.samples.len(),
                traj.max_energy_drift,
                traj.max_norm2_drift
            )
        }
        Command::FixedPoints => {
            let params = config.params()?;
            let inv = enumerate_fixed_points(&params, config.radius)?;
            inv.write_json(&mut json)?;
            use std::io::Write;
            writeln!(csv, "id,family,stability,L1,L2,L3,energy")?;
            for p in &inv.points {
                writeln!(
                    csv,
                    "{},{:?},{:?},{}",
                    p.id,
                    p.family,
                    p.resolved,
                    crate::io::csv_row(&[p.l0[0], p.l0[1], p.l0[2], p.energy])
                )?;
            }
            format!(
                "{} fixed points ({} centers, {} saddles, {} degenerate)",
                inv.points.len(),
                inv.count(Stability::Center),
                inv.count(Stability::Saddle),
                inv.count(Stability::Degenerate)
            )
        }
        Command::Portrait => {
            let params = config.params()?;
            let graph = phase_portrait(&params, config.radius, &config.trace, exec)?;
            graph.write_json(&mut json)?;
            use std::io::Write;
            writeln!(csv, "edge,L1,L2,L3")?;
            for (k, e) in graph.edges.iter().enumerate() {
                for p in &e.polyline {
                    writeln!(csv, "{k},{}", crate::io::csv_row(&[p[0], p[1], p[2]]))?;
                }
            }
            let expected = classify_epsilon(&params);
            let consistent = graph.type_label.matches(expected)
                || !matches!(expected, TypeClass::I | TypeClass::II | TypeClass::III | TypeClass::IV);
            if !consistent {
                return Err(Error::ClassificationMismatch {
                    graph: graph.type_label.to_string(),
                    expected: format!("Type {expected}"),
                });
            }
            graph.summary()
        }
        Command::Atlas => {
            let spec = config.sweep.ok_or_else(|| config_err("sweep", "required for this command"))?;
            let grid = sweep(&spec, exec)?;
            grid.write_csv(&mut csv)?;
            grid.write_summary_json(&mut json)?;
            let counts = grid.region_counts();
            let mut parts: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
            parts.insert(0, format!("atlas {}x{}:", grid.n1, grid.n2));
            parts.join(" ")
        }
        Command::Validate => {
            let params = config.params()?;
            let state0 = config.initial_state(&params)?;
            let t_end = match config.t_end {
                Some(t) => t,
                None if params.max_abs() > 0.0 => 4.0 / params.max_abs(),
                None => return Err(config_err("t_end", "required when eps is zero")),
            };
            let report = compare_exact_vs_averaged(&state0, &params, t_end, &config.integrator)?;
            report.write_csv(&mut csv)?;
            report.write_json(&mut json)?;
            let l0 = angular_momentum(&state0).norm();
            format!(
                "deviation sup-norm {:.3e} (rms {:.3e}, {:.3} x max|eps|, |L0| = {:.4})",
                report.sup_norm, report.rms, report.eps_ratio, l0
            )
        }
    };
    let files = emit(out_dir, &stem, csv, json)?;
    Ok(RunOutcome { summary, files })
}

#[derive(Debug, clap::Parser)]
#[command(name = "precession", about = "Geodesics on a perturbed sphere and their averaged precession")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long, required_unless_present = "reproduce", conflicts_with = "reproduce")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub reproduce: Option<Figure>,
}

/// Resolve the configuration and output directory from parsed arguments.
pub fn prepare(args: &Args) -> Result<(RunConfig, PathBuf)> {
    let mut config = match (&args.config, args.reproduce) {
        (Some(path), _) => parse_config(&std::fs::read_to_string(path).map_err(|e| {
            config_err("--config", format!("{}: {e}", path.display()))
        })?)?,
        (None, Some(fig)) => {
            let mut c = reproduce_config(fig);
            c.command = None;
            c
        }
        (None, None) => return Err(config_err("--config", "missing")),
    };
    if config.command.is_none() {
        config.command = Some(args.command);
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((config, out))
}
