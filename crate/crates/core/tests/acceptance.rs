//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::f64::consts::TAU;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use precession::atlas::{refine_bracket, sweep, SweepSpec};
use precession::averaged::{averaged_rhs, bracket_rhs, integrate_averaged};
use precession::par::{self, Execution};
use precession::portrait::{phase_portrait, GraphType, TraceSettings};
use precession::stationary::{enumerate_batch, q_quantities};
use precession::surface::{angular_momentum, integrate_geodesic, state_on_surface};
use precession::validation::{averaged_oracle_rhs, compare_exact_vs_averaged, oracle_relative_error};
use precession::{IntegratorSettings, ParticleState, SurfaceParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn random_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

fn random_signed_magnitudes(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    let mut e = [0.0; 3];
    for x in &mut e {
        let m = rng.gen_range(lo..hi);
        *x = if rng.gen_bool(0.5) { m } else { -m };
    }
    e
}

fn type_reproduction() -> Outcome {
    let cases = [
        ([0.02, 0.03, 0.04], GraphType::I, (7, 6)),
        ([0.01, 0.03, 0.04], GraphType::II, (5, 4)),
        ([-0.02, 0.03, 0.04], GraphType::III, (3, 2)),
        ([-0.01, 0.0, 0.01], GraphType::IV, (2, 1)),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (eps, want, counts) in cases {
        let t = Instant::now();
        let p = SurfaceParams::new(eps).unwrap();
        match phase_portrait(&p, 1.0, &TraceSettings::default(), Execution::Parallel) {
            Ok(g) => {
                let dt = t.elapsed();
                let got = (g.counts.identified_centers, g.counts.identified_saddles);
                let ok = g.type_label == want && got == counts && dt <= Duration::from_secs(60);
                pass &= ok;
                parts.push(format!("{eps:?} -> {} [{:.1}s]", g.summary(), dt.as_secs_f64()));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{eps:?} -> error: {e}"));
            }
        }
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn euler_index() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut samples = Vec::new();
    while samples.len() < 500 {
        let e = random_signed_magnitudes(&mut rng, 1e-3, 5e-2);
        let p = SurfaceParams::new(e).unwrap();
        if q_quantities(&p).iter().all(|q| q.abs() >= 1e-6) {
            samples.push(p);
        }
    }
    let results = enumerate_batch(&samples, 1.0, Execution::Parallel);
    let mut errors = 0;
    let mut bad_index = 0;
    let mut disagreements = 0;
    for r in &results {
        match r {
            Ok(inv) => {
                if inv.index_sum() != 2 {
                    bad_index += 1;
                }
                disagreements += inv.points.iter().filter(|p| p.stability != p.predicted).count();
            }
            Err(_) => errors += 1,
        }
    }
    let dt = t.elapsed();
    Outcome {
        pass: errors == 0 && bad_index == 0 && disagreements == 0 && dt <= Duration::from_secs(300),
        detail: format!(
            "500 samples: index != 2 on {bad_index}, stability disagreements {disagreements}, errors {errors} [{:.1}s]",
            dt.as_secs_f64()
        ),
    }
}

fn hamiltonian_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_bracket: f64 = 0.0;
    for _ in 0..1000 {
        let l = random_vector(&mut rng) * rng.gen_range(0.1..3.0);
        let p = SurfaceParams::new(random_signed_magnitudes(&mut rng, 0.0, 5e-2)).unwrap();
        let a = averaged_rhs(&l, &p).unwrap();
        let b = bracket_rhs(&l, &p).unwrap();
        let scale = a.norm().max(p.max_abs() * l.norm_squared());
        worst_bracket = worst_bracket.max((a - b).norm() / scale);
    }
    let p = SurfaceParams::new([0.02, 0.03, 0.04]).unwrap();
    let starts: Vec<Vector3<f64>> = (0..20).map(|_| random_vector(&mut rng).normalize()).collect();
    let settings = IntegratorSettings::default();
    let runs = par::map(&starts, Execution::Parallel, |l0| integrate_averaged(l0, &p, 1e4, &settings));
    let mut worst_h: f64 = 0.0;
    let mut worst_l2: f64 = 0.0;
    let mut errors = 0;
    for r in runs {
        match r {
            Ok(tr) => {
                worst_h = worst_h.max(tr.max_energy_drift);
                worst_l2 = worst_l2.max(tr.max_norm2_drift);
            }
            Err(_) => errors += 1,
        }
    }
    Outcome {
        pass: worst_bracket <= 1e-12 && worst_h <= 1e-8 && worst_l2 <= 1e-8 && errors == 0,
        detail: format!(
            "bracket rel err {worst_bracket:.2e} (1000 inputs); over t=1e4 x 20: H drift {worst_h:.2e}, L^2 drift {worst_l2:.2e}, errors {errors}"
        ),
    }
}

fn averaging_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_quad: f64 = 0.0;
    let mut n = 0;
    while n < 200 {
        let m = rng.gen_range(1e-3..5e-2);
        let raw = random_vector(&mut rng);
        let top = raw.amax();
        let p = SurfaceParams::new([raw[0] * m / top, raw[1] * m / top, raw[2] * m / top]).unwrap();
        let l = random_vector(&mut rng);
        if l[1] * l[1] + l[2] * l[2] < 1e-2 * l.norm_squared() {
            continue;
        }
        n += 1;
        let rel = oracle_relative_error(&l, &p, 1024).unwrap();
        worst_ratio = worst_ratio.max(rel / (5.0 * p.max_abs()));
        let a = averaged_oracle_rhs(&l, &p, 1024).unwrap();
        let b = averaged_oracle_rhs(&l, &p, 2048).unwrap();
        worst_quad = worst_quad.max((a - b).norm());
    }
    Outcome {
        pass: worst_ratio <= 1.0 && worst_quad <= 1e-10,
        detail: format!(
            "worst rel err / (5 max|eps|) = {worst_ratio:.3} on 200 samples; |oracle(1024) - oracle(2048)| <= {worst_quad:.2e}"
        ),
    }
}

const GENERIC_STARTS: [([f64; 3], [f64; 3]); 5] = [
    ([0.6, 0.5, 0.3], [-0.3, 0.7, -0.4]),
    ([0.1, 0.9, 0.2], [0.8, 0.0, -0.5]),
    ([0.7, -0.2, 0.6], [0.1, 0.9, 0.2]),
    ([-0.3, 0.4, 0.8], [0.9, 0.3, 0.2]),
    ([0.5, 0.5, -0.7], [0.3, -0.8, -0.2]),
];

fn exact_vs_averaged(integrity: &mut Vec<(f64, f64)>) -> Outcome {
    let t = Instant::now();
    let settings = IntegratorSettings::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (x, v) in GENERIC_STARTS {
        let mut sups = Vec::new();
        for scale in [1.0, 0.5] {
            let p = SurfaceParams::new([0.02 * scale, 0.03 * scale, 0.04 * scale]).unwrap();
            let s0 = state_on_surface(&Vector3::from(x), &Vector3::from(v), &p).unwrap();
            let l0 = angular_momentum(&s0).norm();
            match compare_exact_vs_averaged(&s0, &p, 4.0 / p.max_abs(), &settings) {
                Ok(r) => {
                    integrity.push((r.exact_diagnostics.max_constraint_violation, r.exact_diagnostics.max_energy_drift));
                    sups.push((r.sup_norm, 5.0 * p.max_abs() * l0));
                }
                Err(e) => {
                    pass = false;
                    parts.push(format!("error: {e}"));
                }
            }
        }
        if let [(full, bound), (half, _)] = sups[..] {
            let factor = full / half;
            pass &= full <= bound && factor >= 1.5;
            parts.push(format!("sup {:.3}x bound, halving factor {:.2}", full / bound, factor));
        }
    }
    let dt = t.elapsed();
    pass &= dt <= Duration::from_secs(600);
    Outcome { pass, detail: format!("{} [{:.1}s]", parts.join("; "), dt.as_secs_f64()) }
}

fn boundary_bisection() -> Outcome {
    let grid = sweep(&SweepSpec::fig7_slice(), Execution::Parallel).unwrap();
    let brackets = grid.type_one_two_brackets();
    if brackets.len() < 10 {
        return Outcome { pass: false, detail: format!("only {} I/II brackets on the slice", brackets.len()) };
    }
    let stride = brackets.len() / 10;
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let br = &brackets[k * stride];
        let p = refine_bracket(&br.a.params, &br.b.params, 200);
        let q = q_quantities(&p).iter().map(|q| q.abs()).fold(f64::INFINITY, f64::min);
        worst = worst.max(q);
    }
    Outcome {
        pass: worst <= 1e-10,
        detail: format!("10 brackets of {}: worst min|Q_i| = {worst:.2e}", brackets.len()),
    }
}

fn exact_integrity(integrity: &[(f64, f64)]) -> Outcome {
    let phi = integrity.iter().map(|x| x.0).fold(0.0, f64::max);
    let drift = integrity.iter().map(|x| x.1).fold(0.0, f64::max);
    let s0 = ParticleState::new(Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0));
    let closure = integrate_geodesic(&s0, &SurfaceParams::unperturbed(), TAU, &IntegratorSettings::default())
        .map(|tr| {
            let end = tr.last().state;
            (end.x - s0.x).norm().max((end.v - s0.v).norm())
        })
        .unwrap_or(f64::INFINITY);
    Outcome {
        pass: !integrity.is_empty() && phi <= 1e-8 && drift <= 1e-6 && closure <= 1e-8,
        detail: format!(
            "{} runs: max|phi| {phi:.2e}, energy drift {drift:.2e}; unperturbed 2pi closure {closure:.2e}",
            integrity.len()
        ),
    }
}

fn main() {
    let mut integrity = Vec::new();
    let results = [
        ("1 type reproduction", type_reproduction()),
        ("2 euler index", euler_index()),
        ("3 hamiltonian structure", hamiltonian_structure()),
        ("4 averaging oracle", averaging_oracle()),
        ("5 exact vs averaged", exact_vs_averaged(&mut integrity)),
        ("6 boundary bisection", boundary_bisection()),
        ("7 exact dynamics integrity", exact_integrity(&integrity)),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        println!("criterion {name}: {} ({})", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        failed += usize::from(!r.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
