//! Runtime invariant suite behind the `properties` subcommand.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{detect_exit, ledger_row};
use crate::fields::snapshot::{read_snapshot, write_snapshot};
use crate::fields::{compute_norms, leray_project, SpectralVelocity};
use crate::integrator::{step, step_diffusion_only, SimConfig, SimState};
use crate::ldp::{rate_function_eval, straight_path, uniform_times};
use crate::noise::{sample_increment, NoiseKind, NoiseModel, WienerIncrement};
use crate::operators::{damping_local_lipschitz_check, damping_monotonicity_check, trilinear_form};
use crate::rng::RandomStream;
use crate::stats::{wilson, Z95};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> PropertyResult {
    PropertyResult { name: name.into(), passed, detail }
}

fn random_fields(cfg: &SimConfig, seed: u64, count: usize) -> Vec<SpectralVelocity> {
    (0..count as u64).map(|i| SpectralVelocity::random_smooth(cfg.grid.clone(), seed.wrapping_add(i), 8, 1.0)).collect()
}

fn rand_point(r: &mut RandomStream) -> [f64; 3] {
    let s = (3.0 * r.normal()).exp();
    [s * r.normal(), s * r.normal(), s * r.normal()]
}

pub fn run_properties(cfg: &SimConfig) -> Result<Vec<PropertyResult>> {
    let mut out = Vec::new();
    let fields = random_fields(cfg, cfg.seed, 12);

    // b(u, v, v) = 0 and b(u, v, w) = −b(u, w, v)
    let mut worst: f64 = 0.0;
    for t in fields.chunks(3) {
        let (u, v, w) = (&t[0], &t[1], &t[2]);
        let scale = u.v_norm_sq().sqrt() * v.v_norm_sq().sqrt() * w.v_norm_sq().sqrt();
        worst = worst.max(trilinear_form(u, v, v).abs() / scale);
        worst = worst.max((trilinear_form(u, v, w) + trilinear_form(u, w, v)).abs() / scale);
    }
    out.push(check("trilinear-antisymmetry", worst < 1e-10, format!("max relative defect {worst:.3e}")));

    // Leray projection: divergence-free and idempotent
    let mut r = RandomStream::new(cfg.seed, 0x9090);
    let mut worst: f64 = 0.0;
    for u in &fields[..4] {
        let raw = u.to_raw();
        let grid = &cfg.grid;
        let mut comps = [raw.component(0).to_vec(), raw.component(1).to_vec(), raw.component(2).to_vec()];
        for f in 0..grid.n_points() {
            let q = grid.full_kappa(f);
            let a = num_complex::Complex64::new(r.normal(), r.normal());
            for c in 0..3 {
                comps[c][f] += a * q[c];
            }
        }
        for f in 0..grid.n_points() {
            let g = grid.full_neg(f);
            if g > f {
                for c in 0..3 {
                    comps[c][g] = comps[c][f].conj();
                }
            }
        }
        let field = crate::SpectralField::new(grid.clone(), comps)?;
        let p = leray_project(&field);
        let pp = leray_project(&p.to_raw());
        worst = worst.max(p.max_divergence()).max(p.sub(&pp).h_norm_sq().sqrt() / p.h_norm_sq().sqrt().max(1e-300));
    }
    out.push(check("leray-idempotent", worst < 1e-12, format!("max defect {worst:.3e}")));

    // |∇u|² = ‖u‖² on the torus
    let mut worst: f64 = 0.0;
    for u in &fields {
        let n = compute_norms(u, cfg.damping.beta)?;
        worst = worst.max((n.grad_h_norm_sq - n.v_norm_sq).abs() / n.v_norm_sq);
    }
    out.push(check("gradient-parseval", worst < 1e-10, format!("max relative defect {worst:.3e}")));

    // damping monotone and locally Lipschitz
    let d = &cfg.damping;
    let mut worst_mono = f64::INFINITY;
    let mut worst_lip: f64 = 0.0;
    for _ in 0..10_000 {
        let (u, v) = (rand_point(&mut r), rand_point(&mut r));
        let m = damping_monotonicity_check(u, v, d);
        let n2 = |x: [f64; 3]| x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        let diff = [u[0] - v[0], u[1] - v[1], u[2] - v[2]];
        worst_mono = worst_mono.min(m / (n2(diff) * (n2(u) + n2(v)).powf((d.beta - 1.0) / 2.0)).max(1e-300));
        if d.beta >= 2.0 {
            let (lhs, rhs) = damping_local_lipschitz_check(u, v, d)?;
            worst_lip = worst_lip.max(lhs / rhs.max(1e-300));
        }
    }
    out.push(check("damping-monotone", worst_mono >= -1e-12, format!("min normalised ⟨g(u)−g(v), u−v⟩ {worst_mono:.3e}")));
    if d.beta >= 2.0 {
        out.push(check("damping-local-lipschitz", worst_lip <= 1.0 + 1e-12, format!("max lhs/rhs {worst_lip:.6}")));
    }

    // deterministic energy never increases
    let mut s = cfg.initial_state()?;
    let mut quiet = cfg.clone();
    quiet.forcing = crate::integrator::Forcing::Zero;
    let zero = WienerIncrement::zeros(&cfg.noise);
    let mut ok = true;
    for _ in 0..50 {
        let n = step(&s, &quiet, &zero)?;
        ok &= n.u.h_norm_sq() <= s.u.h_norm_sq() * (1.0 + 1e-13);
        s = n;
    }
    out.push(check("energy-nonincreasing", ok, "50 noise-free steps".into()));

    // exit time monotone in M
    let mut u = cfg.initial_state()?;
    let mut ledger = vec![ledger_row(&u, cfg)];
    let mut stream = RandomStream::new(cfg.seed, 0x4242);
    for _ in 0..50 {
        let dw = sample_increment(&cfg.noise, cfg.dt, &mut stream)?;
        u = step(&u, cfg, &dw)?;
        ledger.push(ledger_row(&u, cfg));
    }
    let top = ledger.iter().map(|r| r.h2.max(r.v2)).fold(0.0, f64::max);
    let taus: Vec<f64> = (0..=20).map(|i| detect_exit(&ledger, top * i as f64 / 20.0, 0.5).map(|e| e.tau)).collect::<Result<_>>()?;
    out.push(check("exit-monotone", taus.windows(2).all(|w| w[0] <= w[1]), format!("{} thresholds", taus.len())));

    // diffusion-only unrolls to the Wiener sum
    let mut v = SimState { t: 0.0, u: fields[0].clone(), step_index: 0 };
    let mut sum = vec![0.0; cfg.noise.dim()];
    let unit = cfg.clone().with_epsilon(Some(1.0));
    for _ in 0..20 {
        let dw = sample_increment(&cfg.noise, cfg.dt, &mut stream)?;
        for (a, b) in sum.iter_mut().zip(&dw.coords) {
            *a += b;
        }
        v = step_diffusion_only(&v, &unit, &dw)?;
    }
    let defect = if cfg.noise.kind() == NoiseKind::Additive {
        let oracle = fields[0].add_scaled(&cfg.noise.realise(&WienerIncrement { coords: sum }), 1.0);
        oracle.sub(&v.u).h_norm_sq().sqrt()
    } else {
        0.0
    };
    out.push(check("diffusion-wiener-sum", defect < 1e-12, format!("defect {defect:.3e}")));

    // rate function: grid refinement and quadratic scaling
    let additive = NoiseModel::new(crate::noise::NoiseSpec { kind: NoiseKind::Additive, ..cfg.noise.spec().clone() }, cfg.grid.clone())?;
    if additive.dim() > 0 && additive.spec().sigma > 0.0 {
        let xi = cfg.initial_state()?.u;
        let coords: Vec<f64> = (0..additive.dim()).map(|_| r.normal()).collect();
        let dir = additive.realise(&WienerIncrement { coords });
        let cost = |lambda: f64, n: usize| -> Result<f64> {
            let t = uniform_times(n);
            Ok(rate_function_eval(&xi, &straight_path(&xi, &dir.scale(lambda), &t), &additive, &t)?.cost)
        };
        let (c8, c16, c3) = (cost(1.0, 8)?, cost(1.0, 16)?, cost(3.0, 8)?);
        out.push(check("rate-refinement", (c8 - c16).abs() < 1e-8 * c8.max(1.0), format!("{c8:.12e} vs {c16:.12e}")));
        out.push(check("rate-quadratic", (c3 - 9.0 * c8).abs() < 1e-12 * c3, format!("{c3:.12e} vs 9×{c8:.12e}")));
    }

    // snapshots round-trip bit for bit
    let mut buf = Vec::new();
    write_snapshot(&mut buf, &fields[1])?;
    let back = read_snapshot(&mut &buf[..], &cfg.grid)?;
    out.push(check("snapshot-round-trip", back.coeffs() == fields[1].coeffs(), format!("{} bytes", buf.len())));

    // Wilson interval brackets p̂
    let ok = (0..=50u64).all(|h| {
        let (lo, hi) = wilson(h, 50, Z95);
        let p = h as f64 / 50.0;
        lo <= p && p <= hi
    });
    out.push(check("wilson-brackets", ok, "n = 50".into()));

    Ok(out)
}
